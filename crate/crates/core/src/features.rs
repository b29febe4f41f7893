//! 80 log-mel filter banks plus one log-energy channel at a 10 ms hop.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_MELS: usize = 80;
/// 80 filter banks + 1 energy.
pub const ACOUSTIC_DIM: usize = N_MELS + 1;
pub const HOP_S: f64 = 0.010;

#[derive(Debug, Clone, PartialEq)]
pub struct FbankConfig {
    pub win_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
    pub preemph: f64,
    pub floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            win_s: 0.025,
            hop_s: HOP_S,
            n_mels: N_MELS,
            preemph: 0.97,
            floor: 1e-10,
        }
    }
}

impl FbankConfig {
    pub fn win_samples(&self) -> usize {
        (self.win_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_s * SAMPLE_RATE as f64).round() as usize
    }

    /// `1 + floor((len - win) / hop)`, or `None` for inputs shorter than a window.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        let win = self.win_samples();
        (len >= win).then(|| 1 + (len - win) / self.hop_samples())
    }
}

/// `T x 81` acoustic features; the last column is log-energy.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: Tensor<f32>,
    hop_s: f64,
}

impl FeatureMatrix {
    pub fn new(frames: Tensor<f32>) -> Result<Self> {
        if frames.rank() != 2 || frames.cols() != ACOUSTIC_DIM {
            return Err(Error::Shape(format!(
                "feature matrix must be [T, {ACOUSTIC_DIM}], got {:?}",
                frames.shape()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::Data("feature matrix contains non-finite values".into()));
        }
        Ok(FeatureMatrix { frames, hop_s: HOP_S })
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn into_inner(self) -> Tensor<f32> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters spaced evenly on the mel scale from 0 Hz to Nyquist,
/// as `[n_mels][n_fft/2 + 1]` weights.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            bin_hz
                .iter()
                .map(|&f| {
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    // periodic=false: symmetric window over the frame
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Log-mel filter banks and log-energy for 16 kHz mono audio.
///
/// Each frame is pre-emphasized on its own (the first sample against
/// itself), so every frame depends only on its own samples.
pub fn fbank_energy(samples: &[f32], sample_rate: u32, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    if sample_rate != SAMPLE_RATE {
        return Err(Error::Data(format!(
            "expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz"
        )));
    }
    if cfg.n_mels != N_MELS {
        return Err(Error::Config(format!(
            "acoustic features use {N_MELS} mel bands, config asks for {}",
            cfg.n_mels
        )));
    }
    let win = cfg.win_samples();
    let hop = cfg.hop_samples();
    if win == 0 || hop == 0 {
        return Err(Error::Config("window and hop must be at least one sample".into()));
    }
    let t_len = cfg.num_frames(samples.len()).ok_or_else(|| {
        Error::Data(format!(
            "{} samples is shorter than one {win}-sample window",
            samples.len()
        ))
    })?;
    let n_fft = win.next_power_of_two();
    let filters = mel_filterbank(cfg.n_mels, n_fft, sample_rate);
    let window = hann(win);
    let fft: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let floor = cfg.floor;

    let mut out = Tensor::<f32>::zeros(&[t_len, ACOUSTIC_DIM]);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0f64; n_fft / 2 + 1];
    for t in 0..t_len {
        let frame = &samples[t * hop..t * hop + win];
        let mut energy = 0.0;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win {
                let x = frame[i] as f64;
                let prev = if i == 0 { x } else { frame[i - 1] as f64 };
                let v = (x - cfg.preemph * prev) * window[i];
                energy += v * v;
                Complex::new(v, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let row = out.row_mut(t);
        for (m, weights) in filters.iter().enumerate() {
            let e: f64 = weights.iter().zip(&power).map(|(w, p)| w * p).sum();
            row[m] = e.max(floor).ln() as f32;
        }
        row[cfg.n_mels] = energy.max(floor).ln() as f32;
    }
    FeatureMatrix::new(out)
}

/// Per-utterance, per-column mean and variance normalization.
pub fn cmvn(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    Ok(FeatureMatrix {
        frames: cmvn_matrix(m.frames())?,
        hop_s: m.hop_s,
    })
}

/// [`cmvn`] on any `[T, D]` matrix; variance is floored at 1e-8.
pub fn cmvn_matrix(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (t_len, d) = (x.rows(), x.cols());
    if t_len < 2 {
        return Err(Error::Data(format!("cmvn needs at least 2 frames, got {t_len}")));
    }
    let mut out = x.clone();
    for c in 0..d {
        let col: Vec<f64> = (0..t_len).map(|r| x.at(r, c) as f64).collect();
        let mean = col.iter().sum::<f64>() / t_len as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t_len as f64;
        let inv = 1.0 / var.max(1e-8).sqrt();
        for (r, v) in col.iter().enumerate() {
            out.set(r, c, ((v - mean) * inv) as f32);
        }
    }
    Ok(out)
}

/// Reads 16-bit PCM mono 16 kHz WAV into samples scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.sample_rate != SAMPLE_RATE
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Data(format!(
            "{}: expected 16-bit PCM mono {SAMPLE_RATE} Hz, got {} ch {} Hz {}-bit",
            path.display(),
            spec.channels,
            spec.sample_rate,
            spec.bits_per_sample
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| v as f32 / 32768.0)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}
