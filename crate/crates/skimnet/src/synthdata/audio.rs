//! Real-audio ingestion: RIFF/WAV reading and log-mel spectrograms.
//!
//! Analysis settings: 25 ms Hann window, 10 ms hop, frames centered starting
//! at t = 0 with zero-padded edges, magnitude spectrum pooled into 40
//! triangular mel bands (HTK mel scale), log(1e-10 + energy). One second of
//! input yields exactly 101 frames, so the frame/band grid is 101 x 40.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

pub const MEL_BANDS: usize = 40;
pub const WINDOW_SECONDS: f64 = 0.025;
pub const HOP_SECONDS: f64 = 0.010;
pub const LOG_FLOOR_OFFSET: f64 = 1e-10;
pub const MIN_SAMPLE_RATE: u32 = 8_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("input error: {0}")]
    Input(String),
    #[error("wav parse error: {0}")]
    Wav(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Mono PCM decoded to f64 in [-1, 1).
#[derive(Debug, Clone)]
pub struct WavData {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Log-mel magnitude spectrogram, one row per analysis frame.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: usize,
    pub bands: usize,
    /// Row-major frames x bands.
    pub values: Vec<f64>,
    pub sample_rate: u32,
    pub hop_seconds: f64,
}

impl Spectrogram {
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.bands..(frame + 1) * self.bands]
    }
}

/// Parse a RIFF/WAVE file holding 16-bit PCM, mono or stereo. Stereo is
/// averaged down to mono.
pub fn read_wav(bytes: &[u8]) -> Result<WavData> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Wav("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes([bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]]) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(AudioError::Wav("truncated chunk".into()));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::Wav("fmt chunk too short".into()));
                }
                let format = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
                let bits = u16::from_le_bytes([body[14], body[15]]);
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_start + size + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| AudioError::Wav("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::Wav("missing data chunk".into()))?;
    if format != 1 {
        return Err(AudioError::Wav(format!("unsupported format tag {format}, PCM only")));
    }
    if bits != 16 {
        return Err(AudioError::Wav(format!("unsupported bit depth {bits}, 16-bit only")));
    }
    if channels != 1 && channels != 2 {
        return Err(AudioError::Input(format!("unsupported channel count {channels}")));
    }
    let frame_bytes = 2 * channels as usize;
    let n = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * frame_bytes;
        let mut acc = 0.0;
        for ch in 0..channels as usize {
            let s = i16::from_le_bytes([data[base + 2 * ch], data[base + 2 * ch + 1]]);
            acc += s as f64 / 32768.0;
        }
        samples.push(acc / channels as f64);
    }
    Ok(WavData { samples, sample_rate: rate })
}

pub fn read_wav_file(path: &std::path::Path) -> Result<WavData> {
    let bytes = std::fs::read(path)?;
    read_wav(&bytes)
}

/// Encode mono f64 samples as a 16-bit PCM WAV byte stream.
pub fn write_wav(samples: &[f64], sample_rate: u32) -> Vec<u8> {
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
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Number of analysis frames for `num_samples` at `sample_rate`: centers sit
/// at t = 0, 10 ms, 20 ms, ... up to and including the signal duration.
pub fn frame_count(num_samples: usize, sample_rate: u32) -> usize {
    (num_samples as u64 * 100 / sample_rate as u64) as usize + 1
}

/// HTK mel scale.
fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filterbank over FFT bins: `bands` rows of `n_bins` weights.
fn mel_filterbank(bands: usize, n_bins: usize, fft_size: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    // Band edges: bands + 2 points evenly spaced in mel between 0 and Nyquist.
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut bank = vec![vec![0.0; n_bins]; bands];
    for b in 0..bands {
        let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for (k, w) in bank[b].iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f > lo && f < mid {
                *w = (f - lo) / (mid - lo);
            } else if f >= mid && f < hi {
                *w = (hi - f) / (hi - mid);
            } else if f == mid {
                *w = 1.0;
            }
        }
    }
    bank
}

/// Center frequency (Hz) of a mel band, for test signals.
pub fn mel_band_center_hz(band: usize, sample_rate: u32) -> f64 {
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    mel_to_hz(mel_max * (band + 1) as f64 / (MEL_BANDS + 1) as f64)
}

/// Short-time log-mel analysis of mono PCM.
///
/// Requires at least one second of audio and a sample rate of 8 kHz or more.
pub fn wav_to_spectrogram(samples: &[f64], sample_rate: u32) -> Result<Spectrogram> {
    if sample_rate < MIN_SAMPLE_RATE {
        return Err(AudioError::Input(format!(
            "sample rate {sample_rate} below minimum {MIN_SAMPLE_RATE}"
        )));
    }
    if samples.len() < sample_rate as usize {
        return Err(AudioError::Input(format!(
            "need at least 1 second of audio, got {} samples at {} Hz",
            samples.len(),
            sample_rate
        )));
    }

    let window_len = ((WINDOW_SECONDS * sample_rate as f64) + 0.5).floor() as usize;
    let fft_size = window_len.next_power_of_two();
    let n_bins = fft_size / 2 + 1;
    let frames = frame_count(samples.len(), sample_rate);
    let bank = mel_filterbank(MEL_BANDS, n_bins, fft_size, sample_rate);

    let hann: Vec<f64> = (0..window_len)
        .map(|k| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / (window_len - 1) as f64).cos()))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_size);
    let mut values = Vec::with_capacity(frames * MEL_BANDS);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];

    for frame in 0..frames {
        // Center sample of this frame; edges are zero-padded.
        let center = (frame as u64 * sample_rate as u64 / 100) as i64;
        let start = center - (window_len / 2) as i64;
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = if k < window_len {
                let idx = start + k as i64;
                if idx >= 0 && (idx as usize) < samples.len() {
                    Complex::new(samples[idx as usize] * hann[k], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                }
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let mags: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm()).collect();
        for weights in &bank {
            let mut energy = 0.0;
            for (w, m) in weights.iter().zip(&mags) {
                energy += w * m;
            }
            values.push((LOG_FLOOR_OFFSET + energy).ln());
        }
    }

    Ok(Spectrogram {
        frames,
        bands: MEL_BANDS,
        values,
        sample_rate,
        hop_seconds: HOP_SECONDS,
    })
}
