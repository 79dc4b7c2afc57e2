//! Greedy and beam-search caption generation over a step scorer.
//!
//! The search is generic over [`StepScorer`] so tests can drive it with
//! table-based toy models and the brute-force optimality oracle scores
//! through exactly the same interface as the real decoder.

use crate::decoder::{Decoder, DecoderState, StepAlphas};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::tokens::{TokenId, BOS_ID, EOS_ID, PAD_ID};

/// A conditional next-token model advanced one step at a time. `state.p`
/// is the BOS-seeded prefix; the previous word is its last element.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn start(&self) -> Result<DecoderState>;
    /// Log-probabilities over the vocabulary plus the successor LSTM
    /// state (the caller appends the chosen token to `p`).
    fn step(&self, state: &DecoderState) -> Result<ScoredStep>;
}

pub struct ScoredStep {
    pub log_probs: Vec<f64>,
    pub h: Tensor,
    pub c: Tensor,
    pub alphas: Option<StepAlphas>,
}

/// The real decoder as a step scorer: a frozen model, its projected
/// acoustic sequence, and the keyword token ids for this clip.
pub struct DecoderScorer<'a> {
    pub decoder: &'a Decoder,
    pub pset: &'a ParamSet,
    pub x_hat: Tensor,
    pub start: DecoderState,
    pub keywords: Vec<TokenId>,
}

impl<'a> DecoderScorer<'a> {
    pub fn new(
        decoder: &'a Decoder,
        pset: &'a ParamSet,
        x_seq: &Tensor,
        keywords: Vec<TokenId>,
    ) -> Result<DecoderScorer<'a>> {
        let (x_hat, start) = decoder.eval_start(pset, x_seq)?;
        Ok(DecoderScorer { decoder, pset, x_hat, start, keywords })
    }
}

impl StepScorer for DecoderScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.decoder.config().vocab_size
    }

    fn start(&self) -> Result<DecoderState> {
        Ok(self.start.clone())
    }

    fn step(&self, state: &DecoderState) -> Result<ScoredStep> {
        let out = self.decoder.eval_step(self.pset, &self.x_hat, &self.keywords, state)?;
        Ok(ScoredStep { log_probs: out.log_probs, h: out.h, c: out.c, alphas: Some(out.alphas) })
    }
}

/// A decoded caption: tokens with BOS/EOS/PAD stripped, the total
/// log-probability of the terminated sequence, and per-step attention.
#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub attention: Vec<StepAttention>,
}

/// Attention export record for one generated token.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StepAttention {
    pub step: usize,
    pub token: TokenId,
    pub alpha_acoustic: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_keywords: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_prev: Option<Vec<f64>>,
}

fn attention_record(step: usize, token: TokenId, alphas: Option<StepAlphas>) -> Option<StepAttention> {
    alphas.map(|a| StepAttention {
        step,
        token,
        alpha_acoustic: a.acoustic,
        alpha_keywords: a.keywords,
        alpha_prev: a.prev,
    })
}

/// BOS and PAD are never emitted; EOS terminates.
fn token_allowed(tok: usize) -> bool {
    tok != BOS_ID as usize && tok != PAD_ID as usize
}

/// Greedy decoding: argmax at each step (ties toward the lowest token
/// id), stopping at EOS or `max_len` generated tokens.
pub fn greedy_decode<S: StepScorer>(scorer: &S, max_len: usize) -> Result<DecodeResult> {
    if max_len == 0 {
        return Err(Error::invalid("greedy_decode", "max_len must be >= 1"));
    }
    let mut state = scorer.start()?;
    let mut tokens = Vec::new();
    let mut attention = Vec::new();
    let mut logprob = 0.0;
    for step in 1..=max_len {
        let out = scorer.step(&state)?;
        let mut best: Option<(usize, f64)> = None;
        for (tok, &lp) in out.log_probs.iter().enumerate() {
            if !token_allowed(tok) {
                continue;
            }
            if best.map_or(true, |(_, b)| lp > b) {
                best = Some((tok, lp));
            }
        }
        let (tok, lp) = best.ok_or_else(|| Error::invalid("greedy_decode", "no admissible token"))?;
        logprob += lp;
        if let Some(rec) = attention_record(step, tok as TokenId, out.alphas) {
            attention.push(rec);
        }
        if tok == EOS_ID as usize {
            break;
        }
        tokens.push(tok as TokenId);
        state = DecoderState {
            h: out.h,
            c: out.c,
            p: {
                let mut p = state.p;
                p.push(tok as TokenId);
                p
            },
        };
    }
    Ok(DecodeResult { tokens, logprob, attention })
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Token ids including the BOS seed (EOS never appears here).
    pub tokens: Vec<TokenId>,
    /// Sum of log v_t[token] over every emitted token (including EOS for
    /// finished hypotheses).
    pub logprob: f64,
    pub finished: bool,
    state: DecoderState,
}

impl Hypothesis {
    /// Generated tokens: BOS stripped.
    pub fn caption(&self) -> Vec<TokenId> {
        self.tokens[1..].to_vec()
    }

    fn ranking_score(&self, length_norm_gamma: f64) -> f64 {
        if length_norm_gamma == 0.0 {
            return self.logprob;
        }
        let len = (self.tokens.len() - 1).max(1) as f64;
        self.logprob / len.powf(length_norm_gamma)
    }
}

/// Deterministic ordering: higher score first, lexicographic token ids on
/// ties.
fn rank_cmp(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> std::cmp::Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

#[derive(Debug, Clone)]
pub struct BeamResult {
    pub best: DecodeResult,
    /// Ranked terminated hypotheses (caption tokens, total logprob).
    pub n_best: Vec<(Vec<TokenId>, f64)>,
}

/// Standard beam search over summed log-probabilities. Finished
/// hypotheses are held aside; the final ranking uses the total
/// log-probability (length normalization off by default, `gamma` > 0
/// divides by length^gamma). Ties break lexicographically.
pub fn beam_search<S: StepScorer>(
    scorer: &S,
    beam: usize,
    max_len: usize,
    length_norm_gamma: f64,
) -> Result<BeamResult> {
    if beam == 0 {
        return Err(Error::invalid("beam_search", "beam must be >= 1"));
    }
    if max_len == 0 {
        return Err(Error::invalid("beam_search", "max_len must be >= 1"));
    }
    let start = Hypothesis {
        tokens: vec![BOS_ID],
        logprob: 0.0,
        finished: false,
        state: scorer.start()?,
    };
    let mut live = vec![start];
    let mut done: Vec<Hypothesis> = Vec::new();

    for _step in 1..=max_len {
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &live {
            let out = scorer.step(&hyp.state)?;
            for (tok, &lp) in out.log_probs.iter().enumerate() {
                if !token_allowed(tok) {
                    continue;
                }
                let logprob = hyp.logprob + lp;
                if tok == EOS_ID as usize {
                    done.push(Hypothesis {
                        tokens: hyp.tokens.clone(),
                        logprob,
                        finished: true,
                        state: hyp.state.clone(),
                    });
                } else {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(tok as TokenId);
                    let mut p = hyp.state.p.clone();
                    p.push(tok as TokenId);
                    candidates.push(Hypothesis {
                        tokens,
                        logprob,
                        finished: false,
                        state: DecoderState { h: out.h.clone(), c: out.c.clone(), p },
                    });
                }
            }
        }
        candidates.sort_by(|a, b| rank_cmp((a.logprob, &a.tokens), (b.logprob, &b.tokens)));
        candidates.truncate(beam);
        live = candidates;
        if live.is_empty() {
            break;
        }
    }
    // hypotheses cut off at max_len terminate without an EOS term
    done.extend(live.into_iter().map(|mut h| {
        h.finished = true;
        h
    }));

    done.sort_by(|a, b| {
        rank_cmp(
            (a.ranking_score(length_norm_gamma), &a.tokens),
            (b.ranking_score(length_norm_gamma), &b.tokens),
        )
    });
    let best = done.first().ok_or_else(|| Error::invalid("beam_search", "no terminated hypothesis"))?;

    // re-walk the winner to export attention
    let (_, attention) = rescore(scorer, &best.caption())?;
    let result = DecodeResult { tokens: best.caption(), logprob: best.logprob, attention };
    let n_best = done.iter().take(beam).map(|h| (h.caption(), h.logprob)).collect();
    Ok(BeamResult { best: result, n_best })
}

/// Teacher-forced re-scoring of a caption (no BOS/EOS in the input):
/// returns the summed log-probability including the terminating EOS, and
/// the per-step attention. A caption of exactly `max_len` tokens scores
/// without the EOS term when `include_eos` is false.
pub fn rescore<S: StepScorer>(scorer: &S, tokens: &[TokenId]) -> Result<(f64, Vec<StepAttention>)> {
    rescore_with(scorer, tokens, true)
}

pub fn rescore_with<S: StepScorer>(
    scorer: &S,
    tokens: &[TokenId],
    include_eos: bool,
) -> Result<(f64, Vec<StepAttention>)> {
    let mut state = scorer.start()?;
    let mut logprob = 0.0;
    let mut attention = Vec::new();
    for (i, &tok) in tokens.iter().enumerate() {
        let out = scorer.step(&state)?;
        logprob += out.log_probs[tok as usize];
        if let Some(rec) = attention_record(i + 1, tok, out.alphas) {
            attention.push(rec);
        }
        state = DecoderState {
            h: out.h,
            c: out.c,
            p: {
                let mut p = state.p;
                p.push(tok);
                p
            },
        };
    }
    if include_eos {
        let out = scorer.step(&state)?;
        logprob += out.log_probs[EOS_ID as usize];
        if let Some(rec) = attention_record(tokens.len() + 1, EOS_ID, out.alphas) {
            attention.push(rec);
        }
    }
    Ok((logprob, attention))
}

#[cfg(test)]
mod tests;
