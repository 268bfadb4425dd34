//! WAV reading/writing and the binary filter-trace format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::adaptive::TapLayout;
use crate::error::{Error, Result};
use crate::pipeline::{FilterTrace, StageTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Pcm16,
    Float32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavSpec {
    pub sample_rate: u32,
    pub channels: usize,
    pub encoding: Encoding,
}

fn wav_err(path: &Path, e: impl ToString) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Reads a WAV file into per-channel samples.
///
/// PCM16 is scaled by 2^-15; float32 is returned exactly.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, WavSpec)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(wav_err(path, "zero channels"));
    }
    let encoding = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => Encoding::Pcm16,
        (hound::SampleFormat::Float, 32) => Encoding::Float32,
        (fmt, bits) => {
            return Err(wav_err(
                path,
                format!("unsupported encoding {fmt:?} with {bits} bits per sample"),
            ))
        }
    };
    let interleaved: Vec<f64> = match encoding {
        Encoding::Pcm16 => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        Encoding::Float32 => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
    };
    if !interleaved.len().is_multiple_of(channels) {
        return Err(wav_err(path, "truncated sample data"));
    }
    let frames = interleaved.len() / channels;
    let mut out = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &v) in frame.iter().enumerate() {
            out[c].push(v);
        }
    }
    Ok((
        out,
        WavSpec {
            sample_rate: spec.sample_rate,
            channels,
            encoding,
        },
    ))
}

/// Writes interleaved multichannel WAV.
pub fn write_wav(
    path: &Path,
    channels: &[Vec<f64>],
    sample_rate: u32,
    encoding: Encoding,
) -> Result<()> {
    if channels.is_empty() {
        return Err(wav_err(path, "no channels to write"));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::ShapeMismatch(
            "all channels must have the same length".into(),
        ));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: match encoding {
            Encoding::Pcm16 => 16,
            Encoding::Float32 => 32,
        },
        sample_format: match encoding {
            Encoding::Pcm16 => hound::SampleFormat::Int,
            Encoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for n in 0..len {
        for c in channels {
            let v = c[n];
            match encoding {
                Encoding::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)
                }
                Encoding::Float32 => writer.write_sample(v as f32),
            }
            .map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

const TRACE_MAGIC: &[u8; 8] = b"DRAECTR1";

/// Writes a full filter trace.
///
/// Layout (little endian): magic `DRAECTR1`, `u64` bulk delay, `u64` stage
/// count, then per stage six `u64` (playback taps, history taps, channels,
/// delay, bins, frames) followed by `bins * frames * channels * taps` complex
/// weights as `(re, im)` `f64` pairs in `[bin][frame][mic][tap]` order.
pub fn write_trace(path: &Path, trace: &FilterTrace) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(TRACE_MAGIC)?;
    put(&(trace.bulk_delay as u64).to_le_bytes())?;
    put(&(trace.stages.len() as u64).to_le_bytes())?;
    for s in &trace.stages {
        for v in [
            s.layout.playback_taps,
            s.layout.history_taps,
            s.layout.channels,
            s.layout.delay,
            s.bins,
            s.frames,
        ] {
            put(&(v as u64).to_le_bytes())?;
        }
        for c in &s.weights {
            put(&c.re.to_le_bytes())?;
            put(&c.im.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<FilterTrace> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::Trace(format!("{}: {reason}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != TRACE_MAGIC {
        return Err(bad("not a filter trace"));
    }
    let mut u64_buf = [0u8; 8];
    let mut next_u64 = |r: &mut BufReader<File>| -> Result<usize> {
        r.read_exact(&mut u64_buf)
            .map_err(|_| bad("truncated header"))?;
        usize::try_from(u64::from_le_bytes(u64_buf)).map_err(|_| bad("value out of range"))
    };
    let bulk_delay = next_u64(&mut r)?;
    let count = next_u64(&mut r)?;
    let mut stages = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = next_u64(&mut r)?;
        }
        let layout = TapLayout {
            playback_taps: dims[0],
            history_taps: dims[1],
            channels: dims[2],
            delay: dims[3],
        };
        let (bins, frames) = (dims[4], dims[5]);
        let n = bins
            .checked_mul(frames)
            .and_then(|v| v.checked_mul(layout.channels))
            .and_then(|v| v.checked_mul(layout.len()))
            .ok_or_else(|| bad("dimensions overflow"))?;
        let mut raw = vec![
            0u8;
            n.checked_mul(16)
                .ok_or_else(|| bad("dimensions overflow"))?
        ];
        r.read_exact(&mut raw)
            .map_err(|_| bad("truncated weights"))?;
        let weights = raw
            .chunks_exact(16)
            .map(|b| {
                Complex64::new(
                    f64::from_le_bytes(b[..8].try_into().unwrap()),
                    f64::from_le_bytes(b[8..].try_into().unwrap()),
                )
            })
            .collect();
        stages.push(StageTrace {
            layout,
            bins,
            frames,
            weights,
        });
    }
    Ok(FilterTrace { bulk_delay, stages })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float32_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let x: Vec<Vec<f64>> = vec![
            (0..100).map(|i| (i as f32 * 0.013).sin() as f64).collect(),
            (0..100).map(|i| (i as f32 * -0.7).cos() as f64).collect(),
        ];
        write_wav(&path, &x, 16000, Encoding::Float32).unwrap();
        let (y, spec) = read_wav(&path).unwrap();
        assert_eq!(y, x);
        assert_eq!(spec.channels, 2);
        assert_eq!(spec.sample_rate, 16000);
        assert_eq!(spec.encoding, Encoding::Float32);
    }

    #[test]
    fn pcm16_error_is_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let x = vec![(0..1000)
            .map(|i| (i as f64 * 0.01).sin())
            .chain([1.0, -1.0])
            .collect::<Vec<_>>()];
        write_wav(&path, &x, 16000, Encoding::Pcm16).unwrap();
        let (y, spec) = read_wav(&path).unwrap();
        assert_eq!(spec.encoding, Encoding::Pcm16);
        for (a, b) in x[0].iter().zip(&y[0]) {
            assert!((a - b).abs() <= 2f64.powi(-15));
        }
    }

    #[test]
    fn malformed_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFF\x10\x00\x00\x00WAVEjunk").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Wav { .. })));
        assert!(read_wav(&dir.path().join("missing.wav")).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let layout = TapLayout {
            playback_taps: 1,
            history_taps: 1,
            channels: 2,
            delay: 2,
        };
        let trace = FilterTrace {
            bulk_delay: 3,
            stages: vec![StageTrace {
                layout,
                bins: 2,
                frames: 3,
                weights: (0..2 * 3 * 2 * 3)
                    .map(|i| Complex64::new(i as f64, -(i as f64) / 7.0))
                    .collect(),
            }],
        };
        write_trace(&path, &trace).unwrap();
        assert_eq!(read_trace(&path).unwrap(), trace);

        std::fs::write(&path, b"DRAECTR1\x00").unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Trace(_))));
    }
}
