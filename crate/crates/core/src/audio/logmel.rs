//! Log-mel feature extraction: Hann-windowed STFT power spectra through
//! an HTK-scale triangular mel filterbank, floored log.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::wav::Waveform;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MelParams {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub floor_eps: f64,
    pub fmin: f64,
    /// Upper band edge; defaults to Nyquist when `None`.
    pub fmax: Option<f64>,
}

impl Default for MelParams {
    fn default() -> Self {
        MelParams {
            sample_rate: 32_000,
            window: 1024,
            hop: 320,
            n_mels: 64,
            floor_eps: 1e-10,
            fmin: 0.0,
            fmax: None,
        }
    }
}

impl MelParams {
    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hop == 0 || self.n_mels == 0 {
            return Err(Error::invalid("mel_params", "window, hop and n_mels must be > 0"));
        }
        if self.floor_eps <= 0.0 {
            return Err(Error::invalid("mel_params", "floor_eps must be > 0"));
        }
        if self.fmax_hz() <= self.fmin {
            return Err(Error::invalid("mel_params", "fmax must exceed fmin"));
        }
        Ok(())
    }
}

/// Log-mel feature matrix `[T_frames x n_mels]`.
#[derive(Debug, Clone)]
pub struct LogMel {
    pub frames: Tensor,
    pub params: MelParams,
}

impl LogMel {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn n_mels(&self) -> usize {
        self.frames.shape()[1]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank as a dense `[n_mels x (window/2 + 1)]` weight
/// matrix (HTK mel scale, peak weight 1).
pub fn mel_filterbank(p: &MelParams) -> Vec<Vec<f64>> {
    let n_bins = p.window / 2 + 1;
    let mel_lo = hz_to_mel(p.fmin);
    let mel_hi = hz_to_mel(p.fmax_hz());
    let points: Vec<f64> = (0..p.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (p.n_mels + 1) as f64))
        .collect();
    let bin_hz = p.sample_rate as f64 / p.window as f64;
    let mut bank = vec![vec![0.0; n_bins]; p.n_mels];
    for (j, filt) in bank.iter_mut().enumerate() {
        let (lo, center, hi) = (points[j], points[j + 1], points[j + 2]);
        for (k, w) in filt.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f > lo && f < hi {
                *w = if f <= center { (f - lo) / (center - lo) } else { (hi - f) / (hi - center) };
            }
        }
    }
    bank
}

/// Center frequencies (Hz) of the mel filters, for test oracles.
pub fn mel_center_freqs(p: &MelParams) -> Vec<f64> {
    let mel_lo = hz_to_mel(p.fmin);
    let mel_hi = hz_to_mel(p.fmax_hz());
    (1..=p.n_mels)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (p.n_mels + 1) as f64))
        .collect()
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

pub fn logmel(w: &Waveform, p: &MelParams) -> Result<LogMel> {
    p.validate()?;
    if w.sample_rate != p.sample_rate {
        return Err(Error::invalid(
            "logmel",
            format!("waveform rate {} != configured {}", w.sample_rate, p.sample_rate),
        ));
    }
    if w.samples.len() < p.window {
        return Err(Error::Data(format!(
            "signal of {} samples shorter than window {}",
            w.samples.len(),
            p.window
        )));
    }
    let n_frames = 1 + (w.samples.len() - p.window) / p.hop;
    let n_bins = p.window / 2 + 1;
    let win = hann(p.window);
    let bank = mel_filterbank(p);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(p.window);
    let mut buf = vec![Complex::new(0.0, 0.0); p.window];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let mut data = Vec::with_capacity(n_frames * p.n_mels);
    let mut power = vec![0.0; n_bins];
    for t in 0..n_frames {
        let start = t * p.hop;
        for i in 0..p.window {
            buf[i] = Complex::new(w.samples[start + i] * win[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, pw) in power.iter_mut().enumerate() {
            *pw = buf[k].norm_sqr();
        }
        for filt in &bank {
            let mut e = 0.0;
            for (k, &fw) in filt.iter().enumerate() {
                if fw != 0.0 {
                    e += fw * power[k];
                }
            }
            data.push((e + p.floor_eps).ln());
        }
    }
    let frames = Tensor::from_vec(vec![n_frames, p.n_mels], data);
    frames.check_finite("logmel")?;
    Ok(LogMel { frames, params: p.clone() })
}
