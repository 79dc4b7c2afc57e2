//! Eval-mode decoding state: plain-tensor LSTM state plus the growing
//! previously-predicted-word sequence, advanced on throwaway tapes.

use crate::encoder::TrackSet;
use crate::error::Result;
use crate::numerics::{ParamSet, Tape, Tensor};
use crate::tokens::{TokenId, BOS_ID};

use super::{Decoder, StepAlphas};

/// LSTM state plus the previously predicted words P (seeded with BOS so
/// the semantic attention over P is defined at the first step).
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub h: Tensor,
    pub c: Tensor,
    pub p: Vec<TokenId>,
}

impl DecoderState {
    /// Current step index; BOS counts as the step-0 element.
    pub fn t(&self) -> usize {
        self.p.len()
    }
}

/// One eval-mode step's outputs.
#[derive(Debug, Clone)]
pub struct EvalStep {
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
    pub h: Tensor,
    pub c: Tensor,
    pub alphas: StepAlphas,
}

impl Decoder {
    /// Projects the acoustic sequence and builds the BOS-seeded start
    /// state (h0 = mean of latent rows, c0 = 0).
    pub fn eval_start(&self, pset: &ParamSet, x_seq: &Tensor) -> Result<(Tensor, DecoderState)> {
        let mut tape = Tape::new();
        let track = TrackSet::none(pset);
        let x = tape.constant(x_seq.clone());
        let x_hat = self.project_acoustic(&mut tape, pset, &track, x)?;
        let (h0, c0) = self.init_hidden(&mut tape, x_hat)?;
        let state = DecoderState {
            h: tape.value(h0).clone(),
            c: tape.value(c0).clone(),
            p: vec![BOS_ID],
        };
        Ok((tape.value(x_hat).clone(), state))
    }

    /// One eval step. The previous word is the last element of `state.p`;
    /// the caller appends the chosen token to build the next state.
    pub fn eval_step(
        &self,
        pset: &ParamSet,
        x_hat: &Tensor,
        keywords: &[TokenId],
        state: &DecoderState,
    ) -> Result<EvalStep> {
        let mut tape = Tape::new();
        let track = TrackSet::none(pset);
        let x = tape.constant(x_hat.clone());
        let h = tape.constant(state.h.clone());
        let c = tape.constant(state.c.clone());
        let w_prev = *state.p.last().expect("state.p is BOS-seeded");
        let step =
            self.decode_step(&mut tape, pset, &track, x, keywords, &state.p, h, c, w_prev, None)?;
        let logp = tape.log_softmax_axis(step.logits, 0)?;
        Ok(EvalStep {
            log_probs: tape.value(logp).data().to_vec(),
            probs: tape.value(step.v).data().to_vec(),
            h: tape.value(step.h).clone(),
            c: tape.value(step.c).clone(),
            alphas: step.alphas,
        })
    }
}
