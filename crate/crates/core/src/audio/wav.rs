//! Minimal RIFF/WAVE reader (PCM16 and float32) and a PCM16 writer.

use std::path::Path;

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

struct Fmt {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::WavParse("missing RIFF/WAVE header".into()));
    }
    let mut fmt = None;
    let mut data = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::WavParse(format!("chunk {:?} overruns file", ascii(id))))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::WavParse("fmt chunk shorter than 16 bytes".into()));
                }
                let mut format = u16_at(bytes, body);
                if format == FORMAT_EXTENSIBLE {
                    if size < 26 {
                        return Err(Error::WavParse("truncated extensible fmt chunk".into()));
                    }
                    // first two bytes of the sub-format GUID carry the real tag
                    format = u16_at(bytes, body + 24);
                }
                fmt = Some(Fmt {
                    format,
                    channels: u16_at(bytes, body + 2),
                    sample_rate: u32_at(bytes, body + 4),
                    bits: u16_at(bytes, body + 14),
                });
            }
            b"data" => data = Some(&bytes[body..end]),
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::WavParse("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::WavParse("no data chunk".into()))?;

    let width = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_FLOAT, 32) => 4,
        (f, b) => {
            return Err(Error::UnsupportedFormat(format!(
                "format tag {f} with {b} bits per sample"
            )))
        }
    };
    if !(1..=2).contains(&fmt.channels) {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels",
            fmt.channels
        )));
    }
    if fmt.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate {
            found: fmt.sample_rate,
            expected: SAMPLE_RATE,
        });
    }

    let channels = fmt.channels as usize;
    let frame = width * channels;
    let mut samples = Vec::with_capacity(data.len() / frame);
    for chunk in data.chunks_exact(frame) {
        let mut acc = 0.0;
        for c in 0..channels {
            let s = &chunk[c * width..(c + 1) * width];
            acc += if width == 2 {
                i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0
            } else {
                f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64
            };
        }
        samples.push(acc / channels as f64);
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("wav file has no samples".into()));
    }
    Ok(AudioClip {
        samples,
        sample_rate: fmt.sample_rate,
    })
}

fn ascii(id: &[u8]) -> String {
    String::from_utf8_lossy(id).into_owned()
}

/// Encodes interleaved `channels` PCM16 samples (values clamped to [-1, 1]).
pub fn encode_wav_pcm16(samples: &[f64], channels: u16, sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    let block = channels as u32 * 2;
    out.extend_from_slice(&(sample_rate * block).to_le_bytes());
    out.extend_from_slice(&(block as u16).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav_pcm16(
    path: impl AsRef<Path>,
    samples: &[f64],
    channels: u16,
    sample_rate: u32,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav_pcm16(samples, channels, sample_rate))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16_raw(values: &[i16], channels: u16, rate: u32) -> Vec<u8> {
        let mut b = encode_wav_pcm16(&vec![0.0; values.len()], channels, rate);
        for (i, v) in values.iter().enumerate() {
            b[44 + 2 * i..46 + 2 * i].copy_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn one_second_of_silence() {
        let clip = parse_wav(&encode_wav_pcm16(&vec![0.0; 16000], 1, 16000)).unwrap();
        assert_eq!(clip.samples.len(), 16000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn int16_max_scales_by_32768() {
        let clip = parse_wav(&pcm16_raw(&[32767], 1, 16000)).unwrap();
        assert!((clip.samples[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert!((clip.samples[0] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn stereo_is_averaged() {
        let clip = parse_wav(&pcm16_raw(&[16384, -16384, 16384, -16384], 2, 16000)).unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.0]);
    }

    #[test]
    fn float32_is_read() {
        let mut b = encode_wav_pcm16(&[0.0, 0.0], 1, 16000);
        // patch to float32: tag 3, 32 bits, 4-byte blocks
        b[20..22].copy_from_slice(&3u16.to_le_bytes());
        b[28..32].copy_from_slice(&64000u32.to_le_bytes());
        b[32..34].copy_from_slice(&4u16.to_le_bytes());
        b[34..36].copy_from_slice(&32u16.to_le_bytes());
        b[40..44].copy_from_slice(&4u32.to_le_bytes());
        b.truncate(44);
        b.extend_from_slice(&0.25f32.to_le_bytes());
        b[4..8].copy_from_slice(&40u32.to_le_bytes());
        let clip = parse_wav(&b).unwrap();
        assert_eq!(clip.samples, vec![0.25]);
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let r = parse_wav(&encode_wav_pcm16(&[0.0; 10], 1, 44100));
        assert!(matches!(
            r,
            Err(Error::SampleRate {
                found: 44100,
                expected: 16000
            })
        ));
    }

    #[test]
    fn eight_bit_is_unsupported() {
        let mut b = encode_wav_pcm16(&[0.0; 4], 1, 16000);
        b[34..36].copy_from_slice(&8u16.to_le_bytes());
        assert!(matches!(parse_wav(&b), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn malformed_header() {
        assert!(matches!(parse_wav(b"RIFX0000WAVE"), Err(Error::WavParse(_))));
        let mut b = encode_wav_pcm16(&[0.0; 4], 1, 16000);
        b.truncate(46);
        assert!(matches!(parse_wav(&b), Err(Error::WavParse(_))));
    }
}
