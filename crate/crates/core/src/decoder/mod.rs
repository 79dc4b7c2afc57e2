//! LSTM decoder with multi-modal attention: one acoustic attention over
//! the latent acoustic sequence and a (shared) semantic attention over
//! keyword embeddings and previously predicted words. Each attention head
//! produces a context vector gated by a GLU projection; the gated outputs
//! and the previous word embedding are summed into the LSTM input.

use crate::encoder::TrackSet;
use crate::error::{Error, Result};
use crate::numerics::{Init, NodeId, ParamId, ParamSet, Tape, Tensor};
use crate::tokens::TokenId;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecoderConfig {
    /// Latent width C of the multi-modal attention space.
    pub c: usize,
    /// LSTM hidden width H. Must equal `c`: the GLU halves the
    /// concatenation `[context, h]`, and the LSTM input sums C-vectors.
    pub h: usize,
    /// Attention projection width M.
    pub m: usize,
    /// Word embedding width. Must equal `c` for the same reason as `h`.
    pub embed_dim: usize,
    /// Number of keywords fed to the semantic attention.
    pub k: usize,
    pub vocab_size: usize,
    /// Width of the incoming acoustic rows (encoder output).
    pub c1: usize,
    pub use_prev_words: bool,
    pub use_keywords: bool,
    pub share_semantic_attention: bool,
    pub dropout_embed: f64,
    pub dropout_classifier: f64,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h != self.c {
            return Err(Error::Config(format!(
                "H ({}) must equal C ({}): GLU([context, h]) halves 2C back to C",
                self.h, self.c
            )));
        }
        if self.embed_dim != self.c {
            return Err(Error::Config(format!(
                "embed_dim ({}) must equal C ({}): the LSTM input sums four C-vectors",
                self.embed_dim, self.c
            )));
        }
        if self.c == 0 || self.m == 0 || self.c1 == 0 {
            return Err(Error::Config("zero-sized decoder dimension".into()));
        }
        if self.use_keywords && self.k == 0 {
            return Err(Error::Config("use_keywords requires k >= 1".into()));
        }
        if self.vocab_size < crate::tokens::NUM_SPECIALS {
            return Err(Error::Config("vocab must include the special tokens".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_embed) || !(0.0..1.0).contains(&self.dropout_classifier) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Parameter group of one attention head (Eqs. 3-6 shapes plus the GLU
/// output projection).
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_i: ParamId,
    pub b_i: ParamId,
    pub w_s: ParamId,
    pub b_s: ParamId,
    pub w_n: ParamId,
    pub b_n: ParamId,
    pub glu_w: ParamId,
    pub glu_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

/// Latent projection + attention head for one semantic modality.
#[derive(Debug, Clone, Copy)]
struct SemanticPath {
    latent: LinearIds,
    attn: AttentionParams,
}

#[derive(Debug, Clone)]
enum SemanticParams {
    /// Both modalities enabled and sharing one attention module.
    Shared(SemanticPath),
    /// Independently parameterized paths (either may be absent).
    Separate { keywords: Option<SemanticPath>, prev: Option<SemanticPath> },
}

pub struct Decoder {
    cfg: DecoderConfig,
    emb: ParamId,
    latent_x: LinearIds,
    attn_x: AttentionParams,
    sem: SemanticParams,
    lstm_w_ih: ParamId,
    lstm_w_hh: ParamId,
    lstm_b: ParamId,
    cls: LinearIds,
}

/// Attention weights exported from one decode step.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StepAlphas {
    pub acoustic: Vec<f64>,
    pub keywords: Option<Vec<f64>>,
    pub prev: Option<Vec<f64>>,
}

/// Per-step dropout masks (inverted-dropout scaling baked in). Sampled by
/// the training loop; `None` runs eval mode.
#[derive(Debug, Clone)]
pub struct StepMasks {
    pub embed: Tensor,
    pub classifier: Tensor,
}

/// Graph handles produced by one decode step.
pub struct StepNodes {
    pub logits: NodeId,
    pub v: NodeId,
    pub h: NodeId,
    pub c: NodeId,
    pub alphas: StepAlphas,
}

impl Decoder {
    pub fn new(pset: &mut ParamSet, cfg: &DecoderConfig) -> Result<Decoder> {
        cfg.validate()?;
        let c = cfg.c;
        let m = cfg.m;
        let emb = pset.register("decoder.emb", vec![cfg.vocab_size, c], Init::Uniform(0.1));
        let latent_x = LinearIds {
            w: pset.register("decoder.latent_x.w", vec![c, cfg.c1], Init::FanIn(cfg.c1)),
            b: pset.register("decoder.latent_x.b", vec![c], Init::Zeros),
        };
        let attn = |pset: &mut ParamSet, name: &str| AttentionParams {
            w_i: pset.register(&format!("decoder.{name}.w_i"), vec![m, c], Init::FanIn(c)),
            b_i: pset.register(&format!("decoder.{name}.b_i"), vec![m], Init::Zeros),
            w_s: pset.register(&format!("decoder.{name}.w_s"), vec![m, c], Init::FanIn(c)),
            b_s: pset.register(&format!("decoder.{name}.b_s"), vec![m], Init::Zeros),
            w_n: pset.register(&format!("decoder.{name}.w_n"), vec![m], Init::FanIn(m)),
            b_n: pset.register(&format!("decoder.{name}.b_n"), vec![1], Init::Zeros),
            glu_w: pset.register(&format!("decoder.{name}.glu.w"), vec![2 * c, 2 * c], Init::FanIn(2 * c)),
            glu_b: pset.register(&format!("decoder.{name}.glu.b"), vec![2 * c], Init::Zeros),
        };
        let latent = |pset: &mut ParamSet, name: &str| LinearIds {
            w: pset.register(&format!("decoder.{name}.w"), vec![c, c], Init::FanIn(c)),
            b: pset.register(&format!("decoder.{name}.b"), vec![c], Init::Zeros),
        };
        let attn_x = attn(pset, "attn_x");
        let sem = if cfg.use_keywords && cfg.use_prev_words && cfg.share_semantic_attention {
            SemanticParams::Shared(SemanticPath {
                latent: latent(pset, "latent_sem"),
                attn: attn(pset, "attn_sem"),
            })
        } else {
            SemanticParams::Separate {
                keywords: cfg.use_keywords.then(|| SemanticPath {
                    latent: latent(pset, "latent_w"),
                    attn: attn(pset, "attn_w"),
                }),
                prev: cfg.use_prev_words.then(|| SemanticPath {
                    latent: latent(pset, "latent_p"),
                    attn: attn(pset, "attn_p"),
                }),
            }
        };
        let lstm_w_ih = pset.register("decoder.lstm.w_ih", vec![4 * c, c], Init::FanIn(c));
        let lstm_w_hh = pset.register("decoder.lstm.w_hh", vec![4 * c, c], Init::FanIn(c));
        let lstm_b = pset.register("decoder.lstm.b", vec![4 * c], Init::Zeros);
        let cls = LinearIds {
            w: pset.register("decoder.cls.w", vec![cfg.vocab_size, c], Init::FanIn(c)),
            b: pset.register("decoder.cls.b", vec![cfg.vocab_size], Init::Zeros),
        };
        Ok(Decoder { cfg: cfg.clone(), emb, latent_x, attn_x, sem, lstm_w_ih, lstm_w_hh, lstm_b, cls })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn acoustic_attention(&self) -> &AttentionParams {
        &self.attn_x
    }

    fn read(&self, tape: &mut Tape, pset: &ParamSet, track: &TrackSet, id: ParamId) -> NodeId {
        tape.read_param(pset, id, track.tracks(id))
    }

    /// One attention head over `f_hat: [R x C]` given the previous hidden
    /// state: additive scores through ReLU, softmax over the R rows, an
    /// attention-weighted row sum, and a GLU-gated projection of
    /// `[context, h_prev]`.
    pub fn attention_module(
        &self,
        tape: &mut Tape,
        pset: &ParamSet,
        track: &TrackSet,
        f_hat: NodeId,
        h_prev: NodeId,
        params: &AttentionParams,
    ) -> Result<(NodeId, NodeId)> {
        let shape = tape.value(f_hat).shape().to_vec();
        if shape.len() != 2 || shape[0] == 0 || shape[1] != self.cfg.c {
            return Err(Error::shape("attention_module", format!("f_hat {shape:?}, C = {}", self.cfg.c)));
        }
        let w_i = self.read(tape, pset, track, params.w_i);
        let b_i = self.read(tape, pset, track, params.b_i);
        let w_s = self.read(tape, pset, track, params.w_s);
        let b_s = self.read(tape, pset, track, params.b_s);
        let w_n = self.read(tape, pset, track, params.w_n);
        let b_n = self.read(tape, pset, track, params.b_n);
        let glu_w = self.read(tape, pset, track, params.glu_w);
        let glu_b = self.read(tape, pset, track, params.glu_b);

        let fi = tape.linear(f_hat, w_i, b_i)?; // [R x M]
        let hs = tape.linear_vec(h_prev, w_s, b_s)?; // [M]
        let pre = tape.add_bias(fi, hs)?; // broadcast over rows
        let a = tape.relu(pre)?;
        let scores = tape.matvec(a, w_n)?; // [R]
        let scores = tape.add_scalar_node(scores, b_n)?;
        let alpha = tape.softmax_axis(scores, 0)?;
        let context = tape.vecmat(alpha, f_hat)?; // [C]
        let cat = tape.concat_vec(&[context, h_prev])?; // [2C]
        let gated = tape.linear_vec(cat, glu_w, glu_b)?; // [2C]
        let o = tape.glu(gated)?; // [C]
        Ok((o, alpha))
    }

    /// Projects the encoder's acoustic sequence `[L x C1]` into the
    /// attention latent space `[L x C]`.
    pub fn project_acoustic(
        &self,
        tape: &mut Tape,
        pset: &ParamSet,
        track: &TrackSet,
        x_seq: NodeId,
    ) -> Result<NodeId> {
        let w = self.read(tape, pset, track, self.latent_x.w);
        let b = self.read(tape, pset, track, self.latent_x.b);
        tape.linear(x_seq, w, b)
    }

    /// h0 = mean over the rows of the latent acoustic sequence; c0 = 0.
    pub fn init_hidden(&self, tape: &mut Tape, x_hat: NodeId) -> Result<(NodeId, NodeId)> {
        let h0 = tape.mean_axes(x_hat, &[0])?;
        let c0 = tape.constant(Tensor::zeros(vec![self.cfg.c]));
        Ok((h0, c0))
    }

    fn semantic_path(
        &self,
        tape: &mut Tape,
        pset: &ParamSet,
        track: &TrackSet,
        path: &SemanticPath,
        token_ids: &[TokenId],
        h_prev: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let emb = self.read(tape, pset, track, self.emb);
        let ids: Vec<usize> = token_ids.iter().map(|&t| t as usize).collect();
        let e = tape.embedding(emb, &ids)?; // [n x C]
        let w = self.read(tape, pset, track, path.latent.w);
        let b = self.read(tape, pset, track, path.latent.b);
        let latent = tape.linear(e, w, b)?; // [n x C]
        self.attention_module(tape, pset, track, latent, h_prev, &path.attn)
    }

    /// Semantic contexts over the keyword list and the previously
    /// predicted words. Disabled paths yield `None`; with sharing enabled
    /// both run through identical parameters.
    pub fn semantic_context(
        &self,
        tape: &mut Tape,
        pset: &ParamSet,
        track: &TrackSet,
        keywords: &[TokenId],
        prev_words: &[TokenId],
        h_prev: NodeId,
    ) -> Result<(Option<(NodeId, NodeId)>, Option<(NodeId, NodeId)>)> {
        let (kw_path, p_path) = match &self.sem {
            SemanticParams::Shared(p) => (Some(p), Some(p)),
            SemanticParams::Separate { keywords, prev } => (keywords.as_ref(), prev.as_ref()),
        };
        let kw_out = if self.cfg.use_keywords {
            if keywords.is_empty() {
                return Err(Error::invalid("semantic_context", "keyword list is empty"));
            }
            let path = kw_path.expect("keyword path exists when enabled");
            Some(self.semantic_path(tape, pset, track, path, keywords, h_prev)?)
        } else {
            None
        };
        let p_out = if self.cfg.use_prev_words {
            if prev_words.is_empty() {
                return Err(Error::invalid("semantic_context", "P is empty; seed it with BOS"));
            }
            let path = p_path.expect("prev-words path exists when enabled");
            Some(self.semantic_path(tape, pset, track, path, prev_words, h_prev)?)
        } else {
            None
        };
        Ok((kw_out, p_out))
    }

    /// One decoder step: multi-modal attention contexts plus the previous
    /// word embedding are summed into the LSTM; the new hidden state is
    /// classified into the next-word distribution.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        pset: &ParamSet,
        track: &TrackSet,
        x_hat: NodeId,
        keywords: &[TokenId],
        prev_words: &[TokenId],
        h_prev: NodeId,
        c_prev: NodeId,
        w_prev: TokenId,
        masks: Option<&StepMasks>,
    ) -> Result<StepNodes> {
        if (w_prev as usize) >= self.cfg.vocab_size {
            return Err(Error::invalid("decode_step", format!("token id {w_prev} out of range")));
        }
        let (o_x, alpha_x) = self.attention_module(tape, pset, track, x_hat, h_prev, &self.attn_x)?;
        let (kw_out, p_out) =
            self.semantic_context(tape, pset, track, keywords, prev_words, h_prev)?;

        let emb = self.read(tape, pset, track, self.emb);
        let e_row = tape.embedding(emb, &[w_prev as usize])?;
        let mut e = tape.view(e_row, vec![self.cfg.c])?;
        if let Some(m) = masks {
            let mask = tape.constant(m.embed.clone());
            e = tape.mul(e, mask)?;
        }

        let mut lstm_in = tape.add(o_x, e)?;
        if let Some((o_w, _)) = kw_out {
            lstm_in = tape.add(lstm_in, o_w)?;
        }
        if let Some((o_p, _)) = p_out {
            lstm_in = tape.add(lstm_in, o_p)?;
        }

        let w_ih = self.read(tape, pset, track, self.lstm_w_ih);
        let w_hh = self.read(tape, pset, track, self.lstm_w_hh);
        let b = self.read(tape, pset, track, self.lstm_b);
        let (h, c) = tape.lstm_cell(lstm_in, h_prev, c_prev, w_ih, w_hh, b)?;

        let mut h_cls = h;
        if let Some(m) = masks {
            let mask = tape.constant(m.classifier.clone());
            h_cls = tape.mul(h_cls, mask)?;
        }
        let cw = self.read(tape, pset, track, self.cls.w);
        let cb = self.read(tape, pset, track, self.cls.b);
        let logits = tape.linear_vec(h_cls, cw, cb)?;
        let v = tape.softmax_axis(logits, 0)?;

        let alphas = StepAlphas {
            acoustic: tape.value(alpha_x).data().to_vec(),
            keywords: kw_out.map(|(_, a)| tape.value(a).data().to_vec()),
            prev: p_out.map(|(_, a)| tape.value(a).data().to_vec()),
        };
        Ok(StepNodes { logits, v, h, c, alphas })
    }
}

#[cfg(test)]
mod tests;
