//! Mono waveform handling: WAV I/O, resampling, and time slicing.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: hound::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: hound::Error,
    },
    #[error("unsupported sample format in {path}: {detail}")]
    UnsupportedFormat { path: String, detail: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// A mono waveform. Samples are `f64` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Read a WAV file, mixing multi-channel audio down to mono.
    ///
    /// Accepts 16/24/32-bit integer and 32-bit float PCM.
    pub fn read_wav(path: &Path) -> Result<Waveform, AudioError> {
        let display = path.display().to_string();
        let mut reader = hound::WavReader::open(path).map_err(|source| AudioError::Read {
            path: display.clone(),
            source,
        })?;
        let spec = reader.spec();
        let channels = spec.channels as usize;
        if channels == 0 {
            return Err(AudioError::UnsupportedFormat {
                path: display,
                detail: "zero channels".into(),
            });
        }
        let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Float, 32) => {
                let mut out = Vec::new();
                for s in reader.samples::<f32>() {
                    out.push(f64::from(s.map_err(|source| AudioError::Read {
                        path: display.clone(),
                        source,
                    })?));
                }
                out
            }
            (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
                let scale = (1i64 << (bits - 1)) as f64;
                let mut out = Vec::new();
                for s in reader.samples::<i32>() {
                    let v = s.map_err(|source| AudioError::Read {
                        path: display.clone(),
                        source,
                    })?;
                    out.push(v as f64 / scale);
                }
                out
            }
            (format, bits) => {
                return Err(AudioError::UnsupportedFormat {
                    path: display,
                    detail: format!("{format:?} at {bits} bits"),
                })
            }
        };
        let frames = interleaved.len() / channels;
        let mut samples = Vec::with_capacity(frames);
        for frame in interleaved.chunks_exact(channels) {
            samples.push(frame.iter().sum::<f64>() / channels as f64);
        }
        Ok(Waveform::new(samples, spec.sample_rate))
    }

    /// Write the waveform as 16-bit PCM WAV.
    pub fn write_wav(&self, path: &Path) -> Result<(), AudioError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let bytes = self.to_wav_bytes().map_err(|source| AudioError::Write {
            path: path.display().to_string(),
            source,
        })?;
        crate::util::atomic_write(path, &bytes)?;
        Ok(())
    }

    /// Encode the waveform as an in-memory 16-bit PCM WAV file.
    pub fn to_wav_bytes(&self) -> Result<Vec<u8>, hound::Error> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = std::io::Cursor::new(Vec::new());
        {
            let mut writer = hound::WavWriter::new(&mut cursor, spec)?;
            for &s in &self.samples {
                writer.write_sample(quantize_i16(s))?;
            }
            writer.finalize()?;
        }
        Ok(cursor.into_inner())
    }

    /// Extract `[start, end)` seconds as a new waveform. The interval is
    /// clamped to the available audio; an inverted interval yields an empty
    /// waveform rather than an error so callers can decide how to react.
    pub fn slice_seconds(&self, start: f64, end: f64) -> Waveform {
        let rate = self.sample_rate as f64;
        let to_index = |t: f64| -> usize {
            let idx = (t * rate).round();
            idx.clamp(0.0, self.samples.len() as f64) as usize
        };
        let lo = to_index(start.max(0.0));
        let hi = to_index(end.max(0.0));
        let samples = if lo < hi {
            self.samples[lo..hi].to_vec()
        } else {
            Vec::new()
        };
        Waveform::new(samples, self.sample_rate)
    }

    /// Resample to `rate` by linear interpolation. DC content is preserved,
    /// which the synthetic cue pipeline relies on.
    pub fn resampled(&self, rate: u32) -> Waveform {
        assert!(rate > 0, "sample rate must be positive");
        if rate == self.sample_rate || self.samples.is_empty() {
            return Waveform::new(self.samples.clone(), rate.max(1));
        }
        let ratio = self.sample_rate as f64 / rate as f64;
        let out_len = (self.samples.len() as f64 / ratio).round() as usize;
        let mut out = Vec::with_capacity(out_len);
        let last = self.samples.len() - 1;
        for i in 0..out_len {
            let pos = i as f64 * ratio;
            let lo = (pos.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = pos - lo as f64;
            out.push(self.samples[lo] * (1.0 - frac) + self.samples[hi] * frac);
        }
        Waveform::new(out, rate)
    }

    /// Stable content digest over the sample rate and raw sample bits.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(4 + self.samples.len() * 8);
        bytes.extend_from_slice(&self.sample_rate.to_le_bytes());
        for &s in &self.samples {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        crate::util::sha256_hex(&[&bytes])
    }
}

fn quantize_i16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, rate: u32) -> Waveform {
        let samples: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64) - 0.5).collect();
        Waveform::new(samples, rate)
    }

    #[test]
    fn wav_round_trip_is_exact_at_16_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let wave = ramp(500, 8000);
        wave.write_wav(&path).unwrap();
        let back = Waveform::read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert_eq!(back.len(), 500);
        for (a, b) in wave.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32767.0, "{a} vs {b}");
        }
    }

    #[test]
    fn stereo_reads_as_channel_mean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            writer.write_sample(16384i16).unwrap(); // 0.5
            writer.write_sample(-16384i16).unwrap(); // -0.5
        }
        writer.finalize().unwrap();
        let wave = Waveform::read_wav(&path).unwrap();
        assert_eq!(wave.len(), 100);
        assert!(wave.samples.iter().all(|s| s.abs() < 1e-9));
    }

    #[test]
    fn slice_clamps_to_bounds() {
        let wave = ramp(8000, 8000); // one second
        assert_eq!(wave.slice_seconds(0.25, 0.75).len(), 4000);
        assert_eq!(wave.slice_seconds(-5.0, 0.5).len(), 4000);
        assert_eq!(wave.slice_seconds(0.9, 5.0).len(), 800);
        assert!(wave.slice_seconds(0.7, 0.2).is_empty());
    }

    #[test]
    fn resample_preserves_dc_offset() {
        let samples: Vec<f64> = (0..8000)
            .map(|i| 0.2 + 0.05 * (i as f64 * 0.21).sin())
            .collect();
        let wave = Waveform::new(samples, 8000);
        let up = wave.resampled(16000);
        assert_eq!(up.sample_rate, 16000);
        assert!((up.len() as i64 - 16000).abs() <= 1);
        assert!((up.mean() - wave.mean()).abs() < 1e-3);
    }

    #[test]
    fn content_hash_tracks_samples_and_rate() {
        let a = ramp(100, 8000);
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.samples[3] += 1e-12;
        assert_ne!(a.content_hash(), b.content_hash());
        let c = Waveform::new(a.samples.clone(), 16000);
        assert_ne!(a.content_hash(), c.content_hash());
    }
}
