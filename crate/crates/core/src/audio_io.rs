//! WAV decoding/encoding, band-limited resampling, clip segmentation and a
//! harmonic test-tone synthesizer.
//!
//! Everything downstream of this module assumes [`CANONICAL_RATE`].

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Sampling rate assumed by the spectrogram and model stages.
pub const CANONICAL_RATE: u32 = 44_100;

const NYQUIST_HZ: f64 = CANONICAL_RATE as f64 / 2.0;
const SYNTH_PEAK: f64 = 0.9;

const KAISER_BETA: f64 = 8.0;
const SINC_TAPS_PER_SIDE: usize = 16;

/// Mono sample sequence at a fixed rate. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Range("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Range(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// All-zero waveform of the given length.
    pub fn silence(len: usize, sample_rate_hz: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

// ---------------------------------------------------------------------------
// RIFF/WAVE
// ---------------------------------------------------------------------------

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy)]
struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::Format(format!(
            "fmt chunk is {} bytes, need at least 16",
            body.len()
        )));
    }
    let mut format = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let bits_per_sample = read_u16(body, 14);
    if format == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID whose
        // first two bytes carry the real format tag.
        if body.len() < 26 {
            return Err(Error::Format("truncated WAVE_FORMAT_EXTENSIBLE header".into()));
        }
        format = read_u16(body, 24);
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        bits_per_sample,
    })
}

/// Decode a RIFF/WAVE byte stream (PCM16 or float32, mono or stereo) into a
/// mono waveform. Stereo is mixed down by the per-sample mean.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing RIFF/WAVE header".into()));
    }
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "chunk {:?} claims {size} bytes but only {} remain",
                    String::from_utf8_lossy(id),
                    bytes.len() - start
                ))
            })?;
        match id {
            b"fmt " => fmt = Some(parse_fmt(&bytes[start..end])?),
            b"data" => data = Some(&bytes[start..end]),
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| Error::Format("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("no data chunk".into()))?;

    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels (only mono and stereo are supported)",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::Format("sample rate is zero".into()));
    }
    let channels = fmt.channels as usize;
    let frames: Vec<f32> = match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
            .collect(),
        (tag, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "format tag {tag} with {bits} bits per sample"
            )))
        }
    };
    let samples = if channels == 1 {
        frames
    } else {
        frames
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect()
    };
    Waveform::new(samples, fmt.sample_rate)
}

/// Encode as 16-bit PCM mono. Samples are clamped to [-1, 1].
pub fn encode_wav_pcm16(w: &Waveform) -> Vec<u8> {
    let data_len = (w.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav_pcm16(w)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel
/// (beta 8, 16 zero crossings per side at the lower of the two rates).
pub fn resample(w: &Waveform, target_hz: u32) -> Result<Waveform> {
    if target_hz == 0 {
        return Err(Error::Range("target rate must be positive".into()));
    }
    let src_hz = w.sample_rate_hz;
    if target_hz == src_hz {
        return Ok(w.clone());
    }
    let ratio = target_hz as f64 / src_hz as f64;
    let out_len = (w.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half_width = SINC_TAPS_PER_SIDE as f64 / cutoff;
    let reach = half_width.ceil() as isize;
    let i0_beta = bessel_i0(KAISER_BETA);
    let input = &w.samples;
    let n_in = input.len() as isize;

    let samples = (0..out_len)
        .map(|i| {
            let t = i as f64 / ratio;
            let centre = t.floor() as isize;
            let mut acc = 0.0f64;
            for k in (centre - reach + 1)..=(centre + reach) {
                if k < 0 || k >= n_in {
                    continue;
                }
                let d = t - k as f64;
                let r = d / half_width;
                if r.abs() >= 1.0 {
                    continue;
                }
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                acc += input[k as usize] as f64 * cutoff * sinc(cutoff * d) * window;
            }
            acc.clamp(-1.0, 1.0) as f32
        })
        .collect();
    Waveform::new(samples, target_hz)
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

/// Number of samples in a clip of `clip_seconds` at the canonical rate.
pub fn clip_len(clip_seconds: f64) -> usize {
    (clip_seconds * CANONICAL_RATE as f64).round() as usize
}

/// Split into consecutive non-overlapping clips; a trailing remainder shorter
/// than one clip is dropped.
pub fn segment_clips(w: &Waveform, clip_seconds: f64) -> Result<Vec<Waveform>> {
    if w.sample_rate_hz != CANONICAL_RATE {
        return Err(Error::Input(format!(
            "segmenting expects {CANONICAL_RATE} Hz audio, got {} Hz",
            w.sample_rate_hz
        )));
    }
    if !(clip_seconds > 0.0) || !clip_seconds.is_finite() {
        return Err(Error::Range(format!("clip length {clip_seconds} s")));
    }
    let n = clip_len(clip_seconds);
    if n == 0 {
        return Err(Error::Range(format!("clip length {clip_seconds} s rounds to zero samples")));
    }
    Ok(w.samples
        .chunks_exact(n)
        .map(|c| Waveform {
            samples: c.to_vec(),
            sample_rate_hz: CANONICAL_RATE,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Sum of sinusoids `(frequency_hz, amplitude)` at the canonical rate with
/// seeded random starting phases and optional Gaussian noise of standard
/// deviation `noise_level` (relative to the 0.9 output peak). Peak-normalized to 0.9.
pub fn synth_partials(
    partials: &[(f64, f64)],
    duration_s: f64,
    noise_level: f64,
    seed: u64,
) -> Result<Waveform> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::Range(format!("duration {duration_s} s")));
    }
    for &(f, a) in partials {
        if !(f > 0.0 && f < NYQUIST_HZ) {
            return Err(Error::Range(format!(
                "partial at {f} Hz is outside (0, {NYQUIST_HZ}) Hz"
            )));
        }
        if !a.is_finite() {
            return Err(Error::Range(format!("amplitude {a} for partial at {f} Hz")));
        }
    }
    let len = (duration_s * CANONICAL_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0f64; len];
    for &(f, a) in partials {
        // rotate a phasor instead of calling sin per sample
        let phase0: f64 = rng.random::<f64>() * 2.0 * PI;
        let step = 2.0 * PI * f / CANONICAL_RATE as f64;
        let (ds, dc) = step.sin_cos();
        let (mut s, mut c) = phase0.sin_cos();
        for v in acc.iter_mut() {
            *v += a * s;
            let ns = s * dc + c * ds;
            c = c * dc - s * ds;
            s = ns;
        }
    }
    let peak = acc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = SYNTH_PEAK / peak;
        acc.iter_mut().for_each(|v| *v *= g);
    }
    if noise_level > 0.0 {
        for v in acc.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise_level * SYNTH_PEAK * z;
        }
        let peak = acc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let g = SYNTH_PEAK / peak;
        acc.iter_mut().for_each(|v| *v *= g);
    }
    Waveform::new(acc.into_iter().map(|v| v as f32).collect(), CANONICAL_RATE)
}

/// Description of a stack of harmonic tones.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneStack {
    pub fundamentals: Vec<f64>,
    pub partial_counts: Vec<usize>,
    pub amplitudes: Vec<f64>,
    /// Standard deviation of added noise relative to the output peak; 0 disables it.
    pub noise_level: f64,
}

impl ToneStack {
    /// Every partial as `(frequency, amplitude)` with 1/n rolloff.
    pub fn partials(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for ((&f0, &count), &amp) in self
            .fundamentals
            .iter()
            .zip(&self.partial_counts)
            .zip(&self.amplitudes)
        {
            out.extend((1..=count).map(|n| (n as f64 * f0, amp / n as f64)));
        }
        out
    }
}

/// Sum of harmonic partials `n * f0` (n = 1..=count) with 1/n amplitude rolloff per fundamental.
pub fn synth_tone_stack(stack: &ToneStack, duration_s: f64, seed: u64) -> Result<Waveform> {
    let n = stack.fundamentals.len();
    if stack.partial_counts.len() != n || stack.amplitudes.len() != n {
        return Err(Error::Size(format!(
            "tone stack has {n} fundamentals, {} partial counts and {} amplitudes",
            stack.partial_counts.len(),
            stack.amplitudes.len()
        )));
    }
    for (&f0, &count) in stack.fundamentals.iter().zip(&stack.partial_counts) {
        if !(f0 > 0.0) || count == 0 {
            return Err(Error::Range(format!(
                "fundamental {f0} Hz with {count} partials"
            )));
        }
        if f0 * count as f64 >= NYQUIST_HZ {
            return Err(Error::Range(format!(
                "{count} partials of {f0} Hz reach {} Hz, at or above Nyquist",
                f0 * count as f64
            )));
        }
    }
    synth_partials(&stack.partials(), duration_s, stack.noise_level, seed)
}
