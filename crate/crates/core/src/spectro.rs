//! STFT power spectrograms and mel spectrograms.
//!
//! Defaults: Hann window of 4096 samples, hop 512, 44.1 kHz, 256 mel bands
//! on the HTK mel scale between 0 Hz and Nyquist. A 6 s clip yields a
//! 2049 x 517 power grid and a 256 x 517 mel grid; the clip tail is
//! zero-padded so that exactly `ceil(len / hop)` frames exist.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io::{Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::fft::{Complex, FftPlan};
use crate::grid::{write_grid, Grid, GridHeader};

pub const DEFAULT_WINDOW: usize = 4096;
pub const DEFAULT_HOP: usize = 512;
pub const DEFAULT_MEL_BANDS: usize = 256;
/// Floor applied before taking decibels.
pub const DB_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: DEFAULT_WINDOW,
            hop: DEFAULT_HOP,
            sample_rate: CANONICAL_RATE,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 || !self.window_size.is_power_of_two() {
            return Err(Error::Range(format!(
                "window size {} must be a power of two >= 2",
                self.window_size
            )));
        }
        if self.hop == 0 || self.hop > self.window_size {
            return Err(Error::Range(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.window_size
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Range("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.window_size as f64
    }

    pub fn frame_hop_s(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// Frames produced for a signal of `len` samples (tail zero-padded).
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }
}

/// Periodic Hann window, `w(n) = 0.5 - 0.5 cos(2 pi n / N)`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// `|X(m, k)|^2` laid out as frequency bins x frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub grid: Grid,
    pub bin_hz: f64,
    pub frame_hop_s: f64,
}

/// Reusable STFT state (FFT plan, window, scratch buffer).
#[derive(Debug, Clone)]
pub struct Stft {
    cfg: StftConfig,
    plan: FftPlan,
    window: Vec<f64>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            plan: FftPlan::new(cfg.window_size),
            window: hann_window(cfg.window_size),
            cfg,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Power spectrum of one frame starting at `offset` (zero beyond the end).
    pub fn frame_power(&self, samples: &[f32], offset: usize, buf: &mut Vec<Complex>, out: &mut [f64]) {
        let n = self.cfg.window_size;
        buf.clear();
        buf.extend((0..n).map(|i| {
            let x = samples.get(offset + i).copied().unwrap_or(0.0) as f64;
            Complex::new(x * self.window[i], 0.0)
        }));
        self.plan.forward(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.norm_sqr();
        }
    }

    pub fn run(&self, w: &Waveform) -> Result<PowerSpectrogram> {
        if w.sample_rate_hz() != self.cfg.sample_rate {
            return Err(Error::Input(format!(
                "waveform is {} Hz but the STFT is configured for {} Hz",
                w.sample_rate_hz(),
                self.cfg.sample_rate
            )));
        }
        let n = self.cfg.window_size;
        if w.len() < n {
            return Err(Error::Size(format!(
                "signal of {} samples is shorter than the {n}-sample window",
                w.len()
            )));
        }
        let bins = self.cfg.n_bins();
        let frames = self.cfg.n_frames(w.len());
        let mut grid = Grid::zeros(bins, frames);
        let mut buf = Vec::with_capacity(n);
        let mut power = vec![0.0f64; bins];
        for m in 0..frames {
            self.frame_power(w.samples(), m * self.cfg.hop, &mut buf, &mut power);
            for (k, &p) in power.iter().enumerate() {
                grid.set(k, m, p as f32);
            }
        }
        Ok(PowerSpectrogram {
            grid,
            bin_hz: self.cfg.bin_hz(),
            frame_hop_s: self.cfg.frame_hop_s(),
        })
    }
}

/// One-shot STFT power spectrogram.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<PowerSpectrogram> {
    Stft::new(*cfg)?.run(w)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters evaluated at STFT bin centres.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterBank {
    /// n_mels x n_bins, peak 1 per triangle.
    weights: Vec<Vec<f64>>,
    /// n_mels + 2 edge frequencies in Hz.
    band_edges: Vec<f64>,
    /// Half-open range of bins with nonzero weight, per band.
    support: Vec<(usize, usize)>,
    bin_hz: f64,
}

impl MelFilterBank {
    /// Build `n_mels` unnormalized triangles between `f_min` and `f_max`
    /// for an STFT with `n_bins` bins spaced `bin_hz` apart.
    pub fn new(n_mels: usize, f_min: f64, f_max: f64, n_bins: usize, bin_hz: f64) -> Result<Self> {
        if n_mels == 0 {
            return Err(Error::Range("need at least one mel band".into()));
        }
        if !(f_min >= 0.0 && f_max > f_min) {
            return Err(Error::Range(format!("mel range {f_min}..{f_max} Hz")));
        }
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let band_edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = Vec::with_capacity(n_mels);
        let mut support = Vec::with_capacity(n_mels);
        for j in 0..n_mels {
            let (lo, mid, hi) = (band_edges[j], band_edges[j + 1], band_edges[j + 2]);
            let row: Vec<f64> = (0..n_bins)
                .map(|k| triangle(k as f64 * bin_hz, lo, mid, hi))
                .collect();
            let first = row.iter().position(|&v| v > 0.0).unwrap_or(0);
            let last = row.iter().rposition(|&v| v > 0.0).map_or(first, |i| i + 1);
            weights.push(row);
            support.push((first, last));
        }
        Ok(Self {
            weights,
            band_edges,
            support,
            bin_hz,
        })
    }

    /// 256 bands over 0..22050 Hz for the default STFT.
    pub fn standard() -> Self {
        let cfg = StftConfig::default();
        Self::new(
            DEFAULT_MEL_BANDS,
            0.0,
            cfg.sample_rate as f64 / 2.0,
            cfg.n_bins(),
            cfg.bin_hz(),
        )
        .expect("default mel bank parameters are valid")
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    pub fn band_edges(&self) -> &[f64] {
        &self.band_edges
    }

    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        self.weights[band][bin]
    }

    pub fn row(&self, band: usize) -> &[f64] {
        &self.weights[band]
    }

    pub fn support(&self, band: usize) -> (usize, usize) {
        self.support[band]
    }

    /// `weights x column` for a column indexed by STFT bin.
    pub fn project(&self, column: &[f64]) -> Result<Vec<f64>> {
        if column.len() != self.n_bins() {
            return Err(Error::Size(format!(
                "column of {} entries against a bank with {} bins",
                column.len(),
                self.n_bins()
            )));
        }
        Ok((0..self.n_mels())
            .map(|j| {
                let (a, b) = self.support[j];
                (a..b).map(|k| self.weights[j][k] * column[k]).sum()
            })
            .collect())
    }
}

/// Peak-1 triangle on `[lo, hi]` with apex at `mid`.
pub fn triangle(x: f64, lo: f64, mid: f64, hi: f64) -> f64 {
    if x <= lo || x >= hi {
        0.0
    } else if x <= mid {
        (x - lo) / (mid - lo)
    } else {
        (hi - x) / (hi - mid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MelScale {
    Power,
    Decibel,
    Normalized,
}

impl fmt::Display for MelScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MelScale::Power => "power",
            MelScale::Decibel => "decibel",
            MelScale::Normalized => "normalized",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub grid: Grid,
    pub scale: MelScale,
}

impl MelSpectrogram {
    pub fn new(grid: Grid, scale: MelScale) -> Result<Self> {
        if scale == MelScale::Normalized && grid.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range("normalized mel grid must lie in [0, 1]".into()));
        }
        Ok(Self { grid, scale })
    }

    pub fn rows(&self) -> usize {
        self.grid.rows()
    }

    pub fn cols(&self) -> usize {
        self.grid.cols()
    }

    pub fn write(&self, dir: impl AsRef<Path>, stem: &str, bin_hz: f64, frame_hop_s: f64) -> Result<()> {
        let header = GridHeader {
            rows: self.rows(),
            cols: self.cols(),
            scale: self.scale.to_string(),
            bin_hz,
            frame_hop_s,
        };
        write_grid(dir, stem, &header, &self.grid)
    }
}

/// Project a power spectrogram through the filter bank.
pub fn mel_spectrogram(s: &PowerSpectrogram, bank: &MelFilterBank) -> Result<MelSpectrogram> {
    if s.grid.rows() != bank.n_bins() {
        return Err(Error::Size(format!(
            "spectrogram has {} bins, filter bank expects {}",
            s.grid.rows(),
            bank.n_bins()
        )));
    }
    let frames = s.grid.cols();
    let mut out = Grid::zeros(bank.n_mels(), frames);
    let mut acc = vec![0.0f64; frames];
    for j in 0..bank.n_mels() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let (a, b) = bank.support(j);
        for k in a..b {
            let wgt = bank.weight(j, k);
            for (dst, &p) in acc.iter_mut().zip(s.grid.row(k)) {
                *dst += wgt * p as f64;
            }
        }
        for (dst, &v) in out.row_mut(j).iter_mut().zip(&acc) {
            *dst = v as f32;
        }
    }
    MelSpectrogram::new(out, MelScale::Power)
}

/// `10 log10(max(x, 1e-10))` followed by per-grid min-max scaling to [0, 1].
/// A constant grid maps to all zeros.
pub fn to_decibel_normalized(m: &MelSpectrogram) -> Result<MelSpectrogram> {
    if m.scale != MelScale::Power {
        return Err(Error::Input(format!(
            "expected a power-scale mel spectrogram, got {}",
            m.scale
        )));
    }
    let db: Vec<f64> = m
        .grid
        .data()
        .iter()
        .map(|&v| 10.0 * (v as f64).max(DB_FLOOR).log10())
        .collect();
    let lo = db.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = db
        .iter()
        .map(|&d| if span > 0.0 { ((d - lo) / span) as f32 } else { 0.0 })
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    MelSpectrogram::new(Grid::from_vec(m.rows(), m.cols(), data)?, MelScale::Normalized)
}

/// Waveform to normalized mel grid with default parameters.
#[derive(Debug, Clone)]
pub struct MelPipeline {
    stft: Stft,
    bank: MelFilterBank,
}

impl Default for MelPipeline {
    fn default() -> Self {
        Self {
            stft: Stft::new(StftConfig::default()).expect("default STFT config is valid"),
            bank: MelFilterBank::standard(),
        }
    }
}

impl MelPipeline {
    pub fn bank(&self) -> &MelFilterBank {
        &self.bank
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn power(&self, w: &Waveform) -> Result<PowerSpectrogram> {
        self.stft.run(w)
    }

    pub fn mel_power(&self, w: &Waveform) -> Result<MelSpectrogram> {
        mel_spectrogram(&self.stft.run(w)?, &self.bank)
    }

    pub fn normalized(&self, w: &Waveform) -> Result<MelSpectrogram> {
        to_decibel_normalized(&self.mel_power(w)?)
    }
}
