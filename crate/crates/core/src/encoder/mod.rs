//! Keyword encoder: a small convolutional backbone with hierarchy heads
//! tapping the third, fourth, and last blocks; their pooled projections
//! are concatenated into a single linear + sigmoid keyword classifier.
//! The last block also feeds the acoustic sequence X handed to the
//! decoder.

use crate::error::{Error, Result};
use crate::numerics::{Init, NodeId, ParamId, ParamSet, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub n_mels: usize,
    /// Output channels per conv block.
    pub channels: Vec<usize>,
    /// (time, freq) average-pool factors per block; (1, 1) disables.
    pub pools: Vec<(usize, usize)>,
}

impl BackboneConfig {
    pub fn n_blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks() < 3 {
            return Err(Error::Config("backbone needs >= 3 blocks for hierarchy taps".into()));
        }
        if self.pools.len() != self.n_blocks() {
            return Err(Error::Config("pools must match channels length".into()));
        }
        if self.n_mels == 0 || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("zero-sized backbone dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub backbone: BackboneConfig,
    /// Keyword table size N.
    pub n_keywords: usize,
    /// Width of each hierarchy embedding f1..f3.
    pub head_dim: usize,
    /// Width of the acoustic sequence rows handed to the decoder.
    pub c1: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.n_keywords == 0 || self.head_dim == 0 || self.c1 == 0 {
            return Err(Error::Config("zero-sized encoder dimension".into()));
        }
        Ok(())
    }
}

struct Block {
    conv_w: ParamId,
    conv_b: ParamId,
    norm_g: ParamId,
    norm_b: ParamId,
    pool: (usize, usize),
}

struct LinearIds {
    w: ParamId,
    b: ParamId,
}

/// Which parameters receive gradients in a given pass.
pub struct TrackSet {
    flags: Vec<bool>,
}

impl TrackSet {
    pub fn none(pset: &ParamSet) -> TrackSet {
        TrackSet { flags: vec![false; pset.len()] }
    }

    pub fn all(pset: &ParamSet) -> TrackSet {
        TrackSet { flags: vec![true; pset.len()] }
    }

    pub fn with_prefixes(pset: &ParamSet, prefixes: &[&str]) -> TrackSet {
        let mut flags = vec![false; pset.len()];
        for (id, p) in pset.iter() {
            if prefixes.iter().any(|pre| p.name.starts_with(pre)) {
                flags[id.0] = true;
            }
        }
        TrackSet { flags }
    }

    pub fn without_prefixes(pset: &ParamSet, prefixes: &[&str]) -> TrackSet {
        let mut t = TrackSet::all(pset);
        for (id, p) in pset.iter() {
            if prefixes.iter().any(|pre| p.name.starts_with(pre)) {
                t.flags[id.0] = false;
            }
        }
        t
    }

    pub fn tracks(&self, id: ParamId) -> bool {
        self.flags.get(id.0).copied().unwrap_or(false)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| ParamId(i))
            .collect()
    }
}

/// Graph handles produced by one encoder forward pass.
pub struct EncoderNodes {
    pub block_outputs: Vec<NodeId>,
    pub f1: NodeId,
    pub f2: NodeId,
    pub f3: NodeId,
    pub logits: NodeId,
    pub y_hat: NodeId,
    pub x_seq: NodeId,
}

/// Plain-tensor encoder outputs for a frozen/eval pass.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub y_hat: Tensor,
    pub f1: Tensor,
    pub f2: Tensor,
    pub f3: Tensor,
    /// Acoustic sequence `[L x C1]`.
    pub x_seq: Tensor,
}

pub struct KeywordEncoder {
    cfg: EncoderConfig,
    blocks: Vec<Block>,
    heads: [LinearIds; 3],
    cls: LinearIds,
    x_proj: LinearIds,
}

const NORM_EPS: f64 = 1e-5;

impl KeywordEncoder {
    pub fn new(pset: &mut ParamSet, cfg: &EncoderConfig) -> Result<KeywordEncoder> {
        cfg.validate()?;
        let bb = &cfg.backbone;
        let mut blocks = Vec::with_capacity(bb.n_blocks());
        let mut in_ch = 1;
        for (i, (&out_ch, &pool)) in bb.channels.iter().zip(&bb.pools).enumerate() {
            let pre = format!("encoder.block{}", i + 1);
            blocks.push(Block {
                conv_w: pset.register(&format!("{pre}.conv.w"), vec![out_ch, in_ch, 3, 3], Init::FanIn(in_ch * 9)),
                conv_b: pset.register(&format!("{pre}.conv.b"), vec![out_ch], Init::Zeros),
                norm_g: pset.register(&format!("{pre}.norm.g"), vec![out_ch], Init::Ones),
                norm_b: pset.register(&format!("{pre}.norm.b"), vec![out_ch], Init::Zeros),
                pool,
            });
            in_ch = out_ch;
        }
        let taps = Self::tap_indices(bb.n_blocks());
        let head = |pset: &mut ParamSet, i: usize, tap: usize| -> LinearIds {
            let cin = bb.channels[tap];
            LinearIds {
                w: pset.register(&format!("encoder.head{}.w", i + 1), vec![cfg.head_dim, cin], Init::FanIn(cin)),
                b: pset.register(&format!("encoder.head{}.b", i + 1), vec![cfg.head_dim], Init::Zeros),
            }
        };
        let heads = [head(pset, 0, taps[0]), head(pset, 1, taps[1]), head(pset, 2, taps[2])];
        let cls = LinearIds {
            w: pset.register("encoder.cls.w", vec![cfg.n_keywords, 3 * cfg.head_dim], Init::FanIn(3 * cfg.head_dim)),
            b: pset.register("encoder.cls.b", vec![cfg.n_keywords], Init::Zeros),
        };
        let last_ch = *bb.channels.last().unwrap();
        let x_proj = LinearIds {
            w: pset.register("encoder.x_proj.w", vec![cfg.c1, last_ch], Init::FanIn(last_ch)),
            b: pset.register("encoder.x_proj.b", vec![cfg.c1], Init::Zeros),
        };
        Ok(KeywordEncoder { cfg: cfg.clone(), blocks, heads, cls, x_proj })
    }

    /// 0-based indices of the hierarchy tap blocks (3rd, 4th, last).
    fn tap_indices(n_blocks: usize) -> [usize; 3] {
        [2, 3.min(n_blocks - 1), n_blocks - 1]
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Runs all conv blocks, returning every block's output feature map.
    pub fn backbone_forward(
        &self,
        tape: &mut Tape,
        pset: &ParamSet,
        track: &TrackSet,
        feat: &Tensor,
    ) -> Result<Vec<NodeId>> {
        if feat.rank() != 2 || feat.shape()[1] != self.cfg.backbone.n_mels {
            return Err(Error::shape(
                "backbone_forward",
                format!("features {:?}, expected [T x {}]", feat.shape(), self.cfg.backbone.n_mels),
            ));
        }
        let t = feat.shape()[0];
        let m = feat.shape()[1];
        let mut x = tape.constant(feat.reshaped(vec![1, t, m]));
        let mut outs = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let w = tape.read_param(pset, blk.conv_w, track.tracks(blk.conv_w));
            let b = tape.read_param(pset, blk.conv_b, track.tracks(blk.conv_b));
            let g = tape.read_param(pset, blk.norm_g, track.tracks(blk.norm_g));
            let bb = tape.read_param(pset, blk.norm_b, track.tracks(blk.norm_b));
            let conv = tape.conv2d(x, w, b)?;
            let norm = tape.channel_norm(conv, g, bb, NORM_EPS)?;
            let act = tape.relu(norm)?;
            x = if blk.pool == (1, 1) { act } else { tape.avg_pool2d(act, blk.pool.0, blk.pool.1)? };
            outs.push(x);
        }
        Ok(outs)
    }

    /// f_i = Linear_i(GAP(tap_i)) for the three hierarchy taps.
    pub fn hierarchy_heads(
        &self,
        tape: &mut Tape,
        pset: &ParamSet,
        track: &TrackSet,
        block_outputs: &[NodeId],
    ) -> Result<(NodeId, NodeId, NodeId)> {
        if block_outputs.len() != self.blocks.len() {
            return Err(Error::invalid("hierarchy_heads", "missing block outputs"));
        }
        let taps = Self::tap_indices(self.blocks.len());
        let mut fs = Vec::with_capacity(3);
        for (head, &tap) in self.heads.iter().zip(&taps) {
            let pooled = tape.global_avg_pool(block_outputs[tap], &[1, 2])?;
            let w = tape.read_param(pset, head.w, track.tracks(head.w));
            let b = tape.read_param(pset, head.b, track.tracks(head.b));
            fs.push(tape.linear_vec(pooled, w, b)?);
        }
        Ok((fs[0], fs[1], fs[2]))
    }

    /// Keyword probabilities: sigmoid(Linear(concat(f1, f2, f3))).
    pub fn predict_keywords(
        &self,
        tape: &mut Tape,
        pset: &ParamSet,
        track: &TrackSet,
        f1: NodeId,
        f2: NodeId,
        f3: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let cat = tape.concat_vec(&[f1, f2, f3])?;
        let w = tape.read_param(pset, self.cls.w, track.tracks(self.cls.w));
        let b = tape.read_param(pset, self.cls.b, track.tracks(self.cls.b));
        let logits = tape.linear_vec(cat, w, b)?;
        let y_hat = tape.sigmoid(logits)?;
        Ok((logits, y_hat))
    }

    /// Acoustic sequence for the decoder: last block output, frequency
    /// axis mean-pooled, then a linear layer to width C1.
    pub fn acoustic_sequence(
        &self,
        tape: &mut Tape,
        pset: &ParamSet,
        track: &TrackSet,
        last_block: NodeId,
    ) -> Result<NodeId> {
        let freq_mean = tape.mean_axes(last_block, &[2])?; // [C x T']
        let seq = tape.transpose2(freq_mean)?; // [T' x C]
        let w = tape.read_param(pset, self.x_proj.w, track.tracks(self.x_proj.w));
        let b = tape.read_param(pset, self.x_proj.b, track.tracks(self.x_proj.b));
        tape.linear(seq, w, b)
    }

    /// Full forward pass on an existing tape.
    pub fn forward(
        &self,
        tape: &mut Tape,
        pset: &ParamSet,
        track: &TrackSet,
        feat: &Tensor,
    ) -> Result<EncoderNodes> {
        let block_outputs = self.backbone_forward(tape, pset, track, feat)?;
        let (f1, f2, f3) = self.hierarchy_heads(tape, pset, track, &block_outputs)?;
        let (logits, y_hat) = self.predict_keywords(tape, pset, track, f1, f2, f3)?;
        let x_seq = self.acoustic_sequence(tape, pset, track, *block_outputs.last().unwrap())?;
        Ok(EncoderNodes { block_outputs, f1, f2, f3, logits, y_hat, x_seq })
    }

    /// Frozen/eval pass returning plain tensors.
    pub fn infer(&self, pset: &ParamSet, feat: &Tensor) -> Result<EncoderOutput> {
        let mut tape = Tape::new();
        let track = TrackSet::none(pset);
        let nodes = self.forward(&mut tape, pset, &track, feat)?;
        Ok(EncoderOutput {
            y_hat: tape.value(nodes.y_hat).clone(),
            f1: tape.value(nodes.f1).clone(),
            f2: tape.value(nodes.f2).clone(),
            f3: tape.value(nodes.f3).clone(),
            x_seq: tape.value(nodes.x_seq).clone(),
        })
    }
}

/// Full two-sided binary cross-entropy with probability clamping,
/// averaged over the N outputs. Targets may be soft (mixup).
pub const BCE_EPS: f64 = 1e-7;

pub fn bce_loss(tape: &mut Tape, targets: &[f64], y_hat: NodeId) -> Result<NodeId> {
    if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("bce_loss", "targets must lie in [0, 1]"));
    }
    if tape.value(y_hat).numel() != targets.len() {
        return Err(Error::shape("bce_loss", "target length mismatch"));
    }
    let y = tape.constant(Tensor::vector(targets.to_vec()));
    let omy = tape.constant(Tensor::vector(targets.iter().map(|t| 1.0 - t).collect()));
    let p = tape.clamp(y_hat, BCE_EPS, 1.0 - BCE_EPS)?;
    let ln_p = tape.ln(p)?;
    let np = tape.neg(p)?;
    let omp = tape.add_const(np, 1.0)?;
    let ln_omp = tape.ln(omp)?;
    let t1 = tape.mul(y, ln_p)?;
    let t2 = tape.mul(omy, ln_omp)?;
    let s = tape.add(t1, t2)?;
    let mean = tape.mean_all(s)?;
    tape.scale(mean, -1.0)
}

/// Indices of the K largest probabilities, descending; ties broken by
/// ascending index.
pub fn topk_keywords(y_hat: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > y_hat.len() {
        return Err(Error::invalid("topk_keywords", format!("K = {k} > N = {}", y_hat.len())));
    }
    let mut idx: Vec<usize> = (0..y_hat.len()).collect();
    idx.sort_by(|&a, &b| y_hat[b].partial_cmp(&y_hat[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

#[cfg(test)]
mod tests;
