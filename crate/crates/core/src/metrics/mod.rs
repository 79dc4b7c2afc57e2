//! Corpus-level caption metrics: BLEU-1..4, ROUGE-L, CIDEr-D, and the
//! SPIDEr composition. Conventions follow the standard captioning
//! evaluation toolkit: corpus BLEU with closest effective reference
//! length, ROUGE-L F-measure with beta = 1.2 taking max precision/recall
//! over references, CIDEr-D with corpus-reference document frequencies,
//! clipping, and a gaussian length penalty (sigma = 6).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

pub mod golden;
mod report;
pub use report::{spider, MetricReport, SpiderMode};

/// One clip's hypothesis with its reference captions (tokenized).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EvalPair {
    pub clip_id: String,
    pub hyp: Vec<String>,
    pub refs: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn validate(&self) -> Result<()> {
        if self.refs.is_empty() || self.refs.iter().all(|r| r.is_empty()) {
            return Err(Error::Data(format!("clip {}: needs at least one non-empty reference", self.clip_id)));
        }
        Ok(())
    }
}

type Ngram = Vec<String>;

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<Ngram, u64> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *out.entry(tokens[i..i + n].to_vec()).or_insert(0) += 1;
        }
    }
    out
}

// ---------------- BLEU ----------------

/// Corpus-level BLEU-n: clipped modified n-gram precision with geometric
/// mean over 1..=n and brevity penalty. Effective reference length is the
/// closest length (ties broken toward the shorter). `smooth` applies +1
/// smoothing to every precision; the toolkit default is off, so a
/// hypothesis set with zero matched n-grams scores exactly 0.
pub fn bleu_n(pairs: &[EvalPair], n: usize, smooth: bool) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::invalid("bleu_n", format!("n = {n} out of 1..=4")));
    }
    if pairs.is_empty() {
        return Err(Error::Data("bleu: empty hypothesis set".into()));
    }
    let mut correct = vec![0u64; n];
    let mut guess = vec![0u64; n];
    let mut testlen = 0usize;
    let mut reflen = 0usize;
    for pair in pairs {
        pair.validate()?;
        testlen += pair.hyp.len();
        reflen += pair
            .refs
            .iter()
            .map(|r| (r.len().abs_diff(pair.hyp.len()), r.len()))
            .min()
            .map(|(_, l)| l)
            .unwrap_or(0);
        for k in 1..=n {
            let hng = ngram_counts(&pair.hyp, k);
            let mut maxref: BTreeMap<Ngram, u64> = BTreeMap::new();
            for r in &pair.refs {
                for (g, c) in ngram_counts(r, k) {
                    let e = maxref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in hng {
                guess[k - 1] += c;
                correct[k - 1] += c.min(maxref.get(&g).copied().unwrap_or(0));
            }
        }
    }
    let mut prod = 1.0f64;
    for k in 0..n {
        let (c, g) = if smooth { (correct[k] + 1, guess[k] + 1) } else { (correct[k], guess[k]) };
        if g == 0 || c == 0 {
            return Ok(0.0);
        }
        prod *= c as f64 / g as f64;
    }
    let bp = if testlen > reflen || testlen == 0 {
        1.0
    } else {
        (1.0 - reflen as f64 / testlen as f64).exp()
    };
    Ok(bp * prod.powf(1.0 / n as f64))
}

// ---------------- ROUGE-L ----------------

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let (m, n) = (a.len(), b.len());
    let mut prev = vec![0usize; n + 1];
    let mut cur = vec![0usize; n + 1];
    for i in 0..m {
        for j in 0..n {
            cur[j + 1] = if a[i] == b[j] { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
        cur[0] = 0;
    }
    prev[n]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS F-measure with beta = 1.2: max precision and max recall over the
/// clip's references, F per clip, mean over clips.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("rouge_l: empty corpus".into()));
    }
    let mut total = 0.0;
    for pair in pairs {
        pair.validate()?;
        if pair.refs.iter().any(|r| r.is_empty()) {
            return Err(Error::Data(format!("clip {}: empty reference", pair.clip_id)));
        }
        let mut pmax = 0.0f64;
        let mut rmax = 0.0f64;
        for r in &pair.refs {
            let l = lcs_len(r, &pair.hyp) as f64;
            if !pair.hyp.is_empty() {
                pmax = pmax.max(l / pair.hyp.len() as f64);
            }
            rmax = rmax.max(l / r.len() as f64);
        }
        if pmax > 0.0 && rmax > 0.0 {
            let b2 = ROUGE_BETA * ROUGE_BETA;
            total += ((1.0 + b2) * pmax * rmax) / (rmax + b2 * pmax);
        }
    }
    Ok(total / pairs.len() as f64)
}

// ---------------- CIDEr-D ----------------

pub const CIDER_SIGMA: f64 = 6.0;
const CIDER_N: usize = 4;

/// TF-IDF vectors for one sentence: per-n weight maps, squared norms, and
/// the length statistic used by the gaussian penalty.
struct CiderVec {
    weights: Vec<BTreeMap<Ngram, f64>>,
    norms_sq: Vec<f64>,
    counts: Vec<BTreeMap<Ngram, u64>>,
    length: i64,
}

/// CIDEr-D scorer with document frequencies fitted on a reference corpus.
/// Fitting once and scoring single pairs is how the RL reward uses it;
/// `corpus` evaluates a full hypothesis set.
pub struct CiderScorer {
    df: BTreeMap<Ngram, f64>,
    log_n_clips: f64,
    sigma: f64,
}

impl CiderScorer {
    /// Document frequencies over each clip's reference set: an n-gram's
    /// frequency is the number of clips in whose references it appears.
    pub fn fit<'a, I>(ref_sets: I) -> Result<CiderScorer>
    where
        I: IntoIterator<Item = &'a [Vec<String>]>,
    {
        let mut df: BTreeMap<Ngram, f64> = BTreeMap::new();
        let mut n_clips = 0usize;
        for refs in ref_sets {
            n_clips += 1;
            let mut seen: BTreeSet<Ngram> = BTreeSet::new();
            for r in refs {
                for n in 1..=CIDER_N {
                    for g in ngram_counts(r, n).into_keys() {
                        seen.insert(g);
                    }
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        if n_clips == 0 {
            return Err(Error::Data("cider_d: empty corpus".into()));
        }
        Ok(CiderScorer { df, log_n_clips: (n_clips as f64).ln(), sigma: CIDER_SIGMA })
    }

    pub fn fit_pairs(pairs: &[EvalPair]) -> Result<CiderScorer> {
        for p in pairs {
            p.validate()?;
        }
        CiderScorer::fit(pairs.iter().map(|p| p.refs.as_slice()))
    }

    fn vectorize(&self, tokens: &[String]) -> CiderVec {
        let mut weights = Vec::with_capacity(CIDER_N);
        let mut norms_sq = Vec::with_capacity(CIDER_N);
        let mut counts = Vec::with_capacity(CIDER_N);
        let mut length = 0i64;
        for n in 1..=CIDER_N {
            let cnt = ngram_counts(tokens, n);
            let mut w = BTreeMap::new();
            let mut nsq = 0.0;
            for (g, c) in &cnt {
                let idf = self.log_n_clips - self.df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
                let v = *c as f64 * idf;
                nsq += v * v;
                w.insert(g.clone(), v);
                if n == 2 {
                    length += *c as i64;
                }
            }
            weights.push(w);
            norms_sq.push(nsq);
            counts.push(cnt);
        }
        CiderVec { weights, norms_sq, counts, length }
    }

    fn sim(&self, hyp: &CiderVec, rf: &CiderVec) -> [f64; CIDER_N] {
        let delta = (hyp.length - rf.length) as f64;
        let penalty = (-(delta * delta) / (2.0 * self.sigma * self.sigma)).exp();
        let mut out = [0.0; CIDER_N];
        for n in 0..CIDER_N {
            let mut val = 0.0;
            if hyp.norms_sq[n] > 0.0 && rf.norms_sq[n] > 0.0 {
                for (g, hw) in &hyp.weights[n] {
                    let rw = rf.weights[n].get(g).copied().unwrap_or(0.0);
                    val += hw.min(rw) * rw;
                }
                val /= (hyp.norms_sq[n] * rf.norms_sq[n]).sqrt();
            } else if !hyp.counts[n].is_empty() && !rf.counts[n].is_empty() {
                // Degenerate corpus (all idf weights zero, e.g. a single
                // clip): fall back to the clipped cosine over raw counts so
                // identical sentences still score 1 and disjoint ones 0.
                let mut dot = 0.0;
                let mut hn = 0.0;
                let mut rn = 0.0;
                for (g, hc) in &hyp.counts[n] {
                    let rc = rf.counts[n].get(g).copied().unwrap_or(0);
                    dot += (*hc).min(rc) as f64 * rc as f64;
                    hn += (*hc * *hc) as f64;
                }
                for (_, rc) in &rf.counts[n] {
                    rn += (*rc * *rc) as f64;
                }
                if hn > 0.0 && rn > 0.0 {
                    val = dot / (hn * rn).sqrt();
                }
            }
            out[n] = val * penalty;
        }
        out
    }

    /// CIDEr-D for one hypothesis against its references, in [0, 10].
    pub fn score_pair(&self, hyp: &[String], refs: &[Vec<String>]) -> f64 {
        let hv = self.vectorize(hyp);
        let mut acc = [0.0; CIDER_N];
        for r in refs {
            let rv = self.vectorize(r);
            let s = self.sim(&hv, &rv);
            for n in 0..CIDER_N {
                acc[n] += s[n];
            }
        }
        let mean_n = acc.iter().sum::<f64>() / CIDER_N as f64;
        mean_n / refs.len() as f64 * 10.0
    }

    /// Mean per-clip CIDEr-D over the corpus.
    pub fn corpus(&self, pairs: &[EvalPair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Data("cider_d: empty corpus".into()));
        }
        let total: f64 = pairs.iter().map(|p| self.score_pair(&p.hyp, &p.refs)).sum();
        Ok(total / pairs.len() as f64)
    }
}

/// CIDEr-D with document frequencies computed from the evaluated corpus's
/// own references (toolkit behavior).
pub fn cider_d(pairs: &[EvalPair]) -> Result<f64> {
    CiderScorer::fit_pairs(pairs)?.corpus(pairs)
}

#[cfg(test)]
mod tests;
