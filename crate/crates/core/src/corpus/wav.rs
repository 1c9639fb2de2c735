//! Minimal RIFF/WAVE reader and writer for 16-bit mono PCM.
//!
//! Decoding scales samples to [−1, 1] by division by 32768; encoding uses
//! the same scale (rounded, clamped to i16), so decode ∘ encode is the
//! identity on the payload. Other sample rates are accepted and resampled
//! by linear interpolation at load time.

use std::fs;
use std::path::Path;

use super::CorpusError;

/// Reads a PCM 16-bit mono WAV file; returns samples in [−1, 1] and the
/// file's sample rate.
pub fn load_wav(path: &Path) -> Result<(Vec<f64>, u32), CorpusError> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile(path.to_path_buf())
        } else {
            CorpusError::Io(e)
        }
    })?;
    decode_wav(&bytes)
}

/// Decodes WAV bytes; see [`load_wav`].
pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<f64>, u32), CorpusError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(CorpusError::NotWav);
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None; // (audio fmt, channels, rate, bits)
    let mut samples: Option<Vec<f64>> = None;

    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        if pos + size > bytes.len() {
            return Err(CorpusError::TruncatedFile(format!(
                "chunk {} declares {} bytes but only {} remain",
                String::from_utf8_lossy(id),
                size,
                bytes.len() - pos
            )));
        }
        let chunk = &bytes[pos..pos + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(CorpusError::TruncatedFile("fmt chunk shorter than 16 bytes".into()));
                }
                let audio_format = u16::from_le_bytes(chunk[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(chunk[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(chunk[14..16].try_into().unwrap());
                format = Some((audio_format, channels, rate, bits));
            }
            b"data" => {
                let (audio_format, channels, _, bits) = format.ok_or_else(|| {
                    CorpusError::TruncatedFile("data chunk before fmt chunk".into())
                })?;
                if audio_format != 1 {
                    return Err(CorpusError::UnsupportedEncoding(format!(
                        "audio format {audio_format} (only PCM = 1 is supported)"
                    )));
                }
                if channels != 1 {
                    return Err(CorpusError::UnsupportedEncoding(format!(
                        "{channels} channels (only mono is supported)"
                    )));
                }
                if bits != 16 {
                    return Err(CorpusError::UnsupportedEncoding(format!(
                        "{bits}-bit samples (only 16-bit is supported)"
                    )));
                }
                if size % 2 != 0 {
                    return Err(CorpusError::TruncatedFile("odd data chunk length".into()));
                }
                samples = Some(
                    chunk
                        .chunks_exact(2)
                        .map(|c| i16::from_le_bytes(c.try_into().unwrap()) as f64 / 32768.0)
                        .collect(),
                );
            }
            _ => {} // skip unknown chunks
        }
        pos += size + (size & 1); // chunks are word-aligned
    }

    match (samples, format) {
        (Some(s), Some((_, _, rate, _))) => Ok((s, rate)),
        _ => Err(CorpusError::TruncatedFile("missing fmt or data chunk".into())),
    }
}

/// Encodes samples in [−1, 1] as a 16-bit mono PCM WAV file.
pub fn encode_wav(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &x in samples {
        let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn save_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CorpusError::Io)?;
    }
    fs::write(path, encode_wav(samples, sample_rate)).map_err(CorpusError::Io)
}

/// Linear-interpolation resampling between sample rates.
pub fn resample_linear(samples: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    if from_rate == to_rate || samples.is_empty() {
        return samples.to_vec();
    }
    let n_out = ((samples.len() as f64) * to_rate as f64 / from_rate as f64).round().max(1.0) as usize;
    let ratio = from_rate as f64 / to_rate as f64;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = pos.floor() as usize;
            if lo + 1 >= samples.len() {
                samples[samples.len() - 1]
            } else {
                let frac = pos - lo as f64;
                samples[lo] * (1.0 - frac) + samples[lo + 1] * frac
            }
        })
        .collect()
}
