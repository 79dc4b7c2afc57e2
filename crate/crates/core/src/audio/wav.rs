//! Minimal 16-bit PCM WAV reading/writing (RIFF). Stereo input is
//! averaged down to mono.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Waveform {
    /// Samples in [-1, 1].
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Waveform> {
        if sample_rate == 0 {
            return Err(Error::invalid("waveform", "sample_rate must be > 0"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("waveform", "samples must be non-empty"));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn rd_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::Data("wav: truncated".into()))
}

fn rd_u16(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::Data("wav: truncated".into()))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Data(format!("{}: not a RIFF/WAVE file", path.display())));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = rd_u32(&bytes, pos + 4)? as usize;
        let body = bytes
            .get(pos + 8..pos + 8 + size)
            .ok_or_else(|| Error::Data("wav: chunk overruns file".into()))?;
        match id {
            b"fmt " => {
                fmt = Some((rd_u16(body, 0)?, rd_u16(body, 2)?, rd_u32(body, 4)?, rd_u16(body, 14)?));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size & 1); // chunks are word-aligned
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Data("wav: missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Data("wav: missing data chunk".into()))?;
    if format != 1 || bits != 16 {
        return Err(Error::Data(format!("wav: only 16-bit PCM supported (format {format}, bits {bits})")));
    }
    if channels == 0 || channels > 2 {
        return Err(Error::Data(format!("wav: unsupported channel count {channels}")));
    }
    let ch = channels as usize;
    let frames = data.len() / (2 * ch);
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut acc = 0.0;
        for c in 0..ch {
            let at = (f * ch + c) * 2;
            let v = i16::from_le_bytes([data[at], data[at + 1]]) as f64 / 32768.0;
            acc += v;
        }
        samples.push(acc / ch as f64);
    }
    Waveform::new(samples, rate)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let n = w.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}
