//! Aggregated metric report with display scaling and the SPIDEr
//! composition.

use crate::error::{Error, Result};

use super::EvalPair;

/// How SPIDEr combines CIDEr-D and SPICE. `Unit` first maps CIDEr-D to
/// [0, 1] by /10, so the displayed (x100) SPIDEr equals the mean of the
/// displayed CIDEr-D and SPICE values; `Raw` averages the raw scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpiderMode {
    Unit,
    Raw,
}

impl Default for SpiderMode {
    fn default() -> Self {
        SpiderMode::Unit
    }
}

/// Mean of CIDEr-D and SPICE. SPICE is externally supplied; when it is
/// absent no SPIDEr value exists (never defaulted).
pub fn spider(cider_d: f64, spice: f64, mode: SpiderMode) -> f64 {
    match mode {
        SpiderMode::Unit => (cider_d / 10.0 + spice) / 2.0,
        SpiderMode::Raw => (cider_d + spice) / 2.0,
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spider: Option<f64>,
    pub spider_mode: SpiderMode,
    pub n_clips: usize,
}

impl MetricReport {
    /// Computes every metric over the corpus. `spice` comes from an
    /// external tool when available; without it the report has no spider
    /// field.
    pub fn evaluate(pairs: &[EvalPair], spice: Option<f64>, mode: SpiderMode) -> Result<MetricReport> {
        if pairs.is_empty() {
            return Err(Error::Data("evaluate: empty corpus".into()));
        }
        let cider = super::cider_d(pairs)?;
        Ok(MetricReport {
            bleu1: super::bleu_n(pairs, 1, false)?,
            bleu2: super::bleu_n(pairs, 2, false)?,
            bleu3: super::bleu_n(pairs, 3, false)?,
            bleu4: super::bleu_n(pairs, 4, false)?,
            rouge_l: super::rouge_l(pairs)?,
            cider_d: cider,
            spice,
            spider: spice.map(|s| spider(cider, s, mode)),
            spider_mode: mode,
            n_clips: pairs.len(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Table with the x100 display scaling used in published results
    /// (CIDEr-D is x10, i.e. x100 of its unit-normalized value).
    pub fn table(&self) -> String {
        let mut rows = vec![
            ("BLEU-1", self.bleu1 * 100.0),
            ("BLEU-2", self.bleu2 * 100.0),
            ("BLEU-3", self.bleu3 * 100.0),
            ("BLEU-4", self.bleu4 * 100.0),
            ("ROUGE-L", self.rouge_l * 100.0),
            ("CIDEr-D", self.cider_d * 10.0),
        ];
        if let Some(s) = self.spice {
            rows.push(("SPICE", s * 100.0));
        }
        if let Some(s) = self.spider {
            let scale = match self.spider_mode {
                SpiderMode::Unit => 100.0,
                SpiderMode::Raw => 10.0,
            };
            rows.push(("SPIDEr", s * scale));
        }
        let mut out = String::new();
        out.push_str(&format!("metric    ({} clips)\n", self.n_clips));
        out.push_str("-------------------\n");
        for (name, v) in rows {
            out.push_str(&format!("{name:<9} {v:>8.2}\n"));
        }
        out
    }
}
