use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::AudioClip;
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub const N_FFT: usize = 1024;
pub const HOP: usize = 160;
pub const N_MELS: usize = 128;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 8000.0;
pub const LOG_FLOOR: f64 = 1e-10;

/// Log-power mel spectrogram, `frames × 128`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Tensor2,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn mel_bins(&self) -> usize {
        self.values.cols()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// The `n_mels + 2` band edges in Hz, evenly spaced on the HTK mel scale.
pub fn mel_band_edges(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular, area-normalized filters: `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> Tensor2 {
    let edges = mel_band_edges(n_mels, F_MIN, F_MAX);
    let n_bins = n_fft / 2 + 1;
    let mut fb = Tensor2::zeros(n_mels, n_bins);
    for m in 0..n_mels {
        let (lower, center, upper) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (upper - lower);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let rising = (f - lower) / (center - lower);
            let falling = (upper - f) / (upper - center);
            let w = rising.min(falling).max(0.0);
            fb.set(m, k, w * norm);
        }
    }
    fb
}

fn default_filterbank() -> &'static Tensor2 {
    static FB: OnceLock<Tensor2> = OnceLock::new();
    FB.get_or_init(|| mel_filterbank(super::SAMPLE_RATE, N_FFT, N_MELS))
}

fn hann_window(n: usize) -> Vec<f64> {
    // periodic Hann
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of frames produced for a clip of `len` samples.
pub fn frame_count(len: usize) -> usize {
    1 + len / HOP
}

/// Center-padded (reflect) STFT → power → mel → natural log with floor.
pub fn mel_spectrogram(clip: &AudioClip) -> Result<MelSpectrogram> {
    let x = &clip.samples;
    if x.len() < N_FFT {
        return Err(Error::Length(format!(
            "{} samples; at least {N_FFT} needed",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("audio samples".into()));
    }
    let pad = N_FFT / 2;
    let n = x.len();
    let mut padded = Vec::with_capacity(n + 2 * pad);
    padded.extend((1..=pad).rev().map(|i| x[i]));
    padded.extend_from_slice(x);
    padded.extend((0..pad).map(|i| x[n - 2 - i]));

    let frames = frame_count(n);
    let window = hann_window(N_FFT);
    let fb = default_filterbank();
    let n_bins = N_FFT / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);

    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut power = vec![0.0; n_bins];
    let mut values = Tensor2::zeros(frames, N_MELS);
    for t in 0..frames {
        let start = t * HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf[..n_bins]) {
            *p = c.norm_sqr();
        }
        let out = values.row_mut(t);
        for (m, o) in out.iter_mut().enumerate() {
            let e: f64 = fb.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            *o = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram { values })
}
