//! Audio ingestion and log-mel features.

pub mod mel;
pub mod wav;

use rand::Rng;

use crate::error::{Error, Result};

pub use mel::{mel_spectrogram, MelSpectrogram};
pub use wav::{load_wav, write_wav_pcm16};

pub const SAMPLE_RATE: u32 = 16_000;

/// 9.91 s at 16 kHz.
pub const CHUNK_SAMPLES: usize = 158_560;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Number of samples in a chunk of `seconds`.
pub fn chunk_len(seconds: f64) -> usize {
    (seconds * SAMPLE_RATE as f64).round() as usize
}

/// Uniformly placed contiguous window of `seconds`.
pub fn sample_chunk(clip: &AudioClip, seconds: f64, rng: &mut impl Rng) -> Result<AudioClip> {
    let (chunk, _) = sample_chunk_with_offset(clip, seconds, rng)?;
    Ok(chunk)
}

pub fn sample_chunk_with_offset(
    clip: &AudioClip,
    seconds: f64,
    rng: &mut impl Rng,
) -> Result<(AudioClip, usize)> {
    let len = chunk_len(seconds);
    if len == 0 {
        return Err(Error::Length("chunk of zero samples".into()));
    }
    if clip.len() < len {
        return Err(Error::Length(format!(
            "clip has {} samples, chunk needs {len}",
            clip.len()
        )));
    }
    let offset = rng.random_range(0..=clip.len() - len);
    Ok((
        AudioClip {
            samples: clip.samples[offset..offset + len].to_vec(),
            sample_rate: clip.sample_rate,
        },
        offset,
    ))
}
