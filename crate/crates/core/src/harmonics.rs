//! Pitch-class harmonic blinders.
//!
//! For each of the 12 pitch classes the harmonic series of its lowest
//! fundamental is matched against STFT bin centres (1 Hz bands), and the
//! resulting binary indicator column is projected through the mel filter bank
//! into a 256-entry weight column. Multiplying a mel spectrogram row-wise by
//! that column masks everything except the bands carrying the pitch class's
//! harmonics.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::spectro::{MelFilterBank, MelSpectrogram};

/// Upper limit of the harmonic series (Nyquist at 44.1 kHz).
pub const HARMONIC_CEILING_HZ: f64 = 22_050.0;
/// Half-width of the band kept around each harmonic.
pub const BAND_HALF_WIDTH_HZ: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PitchClass {
    A,
    ASharp,
    B,
    C,
    CSharp,
    D,
    DSharp,
    E,
    F,
    FSharp,
    G,
    GSharp,
}

impl PitchClass {
    /// Ordered A, A#, B, ..., G#.
    pub const ALL: [PitchClass; 12] = [
        PitchClass::A,
        PitchClass::ASharp,
        PitchClass::B,
        PitchClass::C,
        PitchClass::CSharp,
        PitchClass::D,
        PitchClass::DSharp,
        PitchClass::E,
        PitchClass::F,
        PitchClass::FSharp,
        PitchClass::G,
        PitchClass::GSharp,
    ];

    /// Fundamental of the lowest pitch in the class, in Hz.
    pub fn lowest_fundamental(self) -> f64 {
        match self {
            PitchClass::A => 27.50,
            PitchClass::ASharp => 29.14,
            PitchClass::B => 30.87,
            PitchClass::C => 32.70,
            PitchClass::CSharp => 34.65,
            PitchClass::D => 36.71,
            PitchClass::DSharp => 38.89,
            PitchClass::E => 41.20,
            PitchClass::F => 43.65,
            PitchClass::FSharp => 46.25,
            PitchClass::G => 49.00,
            PitchClass::GSharp => 51.91,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PitchClass::A => "A",
            PitchClass::ASharp => "A#",
            PitchClass::B => "B",
            PitchClass::C => "C",
            PitchClass::CSharp => "C#",
            PitchClass::D => "D",
            PitchClass::DSharp => "D#",
            PitchClass::E => "E",
            PitchClass::F => "F",
            PitchClass::FSharp => "F#",
            PitchClass::G => "G",
            PitchClass::GSharp => "G#",
        }
    }
}

impl fmt::Display for PitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PitchClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('♯', "#");
        PitchClass::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| Error::Input(format!("unknown pitch class {s:?}")))
    }
}

/// `n * f0` for n = 1, 2, ... up to a ceiling.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSeries {
    pub fundamental_hz: f64,
    pub frequencies: Vec<f64>,
    pub half_width_hz: f64,
}

impl HarmonicSeries {
    pub fn count(&self) -> usize {
        self.frequencies.len()
    }

    /// Harmonics whose band contains at least one bin centre, i.e. the ones
    /// the indicator column can actually see.
    pub fn resolvable(&self, n_bins: usize, bin_hz: f64) -> Vec<f64> {
        self.frequencies
            .iter()
            .copied()
            .filter(|&w| !bins_in_band(w, self.half_width_hz, n_bins, bin_hz).is_empty())
            .collect()
    }
}

pub fn harmonic_series(f0: f64, f_max: f64) -> Result<HarmonicSeries> {
    if !(f0 > 0.0) || !(f0 <= f_max) || !f_max.is_finite() {
        return Err(Error::Range(format!(
            "fundamental {f0} Hz must lie in (0, {f_max}]"
        )));
    }
    let count = (f_max / f0).floor() as usize;
    Ok(HarmonicSeries {
        fundamental_hz: f0,
        frequencies: (1..=count).map(|n| n as f64 * f0).collect(),
        half_width_hz: BAND_HALF_WIDTH_HZ,
    })
}

pub fn pitch_class_series(p: PitchClass) -> HarmonicSeries {
    harmonic_series(p.lowest_fundamental(), HARMONIC_CEILING_HZ)
        .expect("table fundamentals are below the ceiling")
}

fn bins_in_band(centre: f64, half_width: f64, n_bins: usize, bin_hz: f64) -> Vec<usize> {
    let (lo, hi) = (centre - half_width, centre + half_width);
    let first = (lo / bin_hz).floor().max(0.0) as usize;
    let last = ((hi / bin_hz).ceil().max(0.0) as usize + 1).min(n_bins);
    (first..last)
        .filter(|&k| {
            let f = k as f64 * bin_hz;
            lo <= f && f <= hi
        })
        .collect()
}

/// Binary column over STFT bins: 1 where the bin centre lies within
/// `half_width` of some harmonic.
pub fn stft_indicator(series: &HarmonicSeries, n_bins: usize, bin_hz: f64) -> Vec<u8> {
    let mut ind = vec![0u8; n_bins];
    for &w in &series.frequencies {
        for k in bins_in_band(w, series.half_width_hz, n_bins, bin_hz) {
            ind[k] = 1;
        }
    }
    ind
}

/// A pitch class's mel weight column and the STFT indicator it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MelBlinder {
    pub pitch_class: Option<PitchClass>,
    pub weights: Vec<f64>,
    pub indicator: Vec<u8>,
}

impl MelBlinder {
    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn weights_f32(&self) -> Vec<f32> {
        self.weights.iter().map(|&w| w as f32).collect()
    }
}

pub fn build_blinder(indicator: &[u8], bank: &MelFilterBank) -> Result<MelBlinder> {
    let column: Vec<f64> = indicator.iter().map(|&v| v as f64).collect();
    let weights = bank.project(&column)?;
    Ok(MelBlinder {
        pitch_class: None,
        weights,
        indicator: indicator.to_vec(),
    })
}

/// Mel grid after row-wise blinder weighting; the convolution input of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindedMel {
    pub pitch_class: Option<PitchClass>,
    pub grid: Grid,
}

impl BlindedMel {
    pub fn total(&self) -> f64 {
        self.grid.sum()
    }
}

/// `out[j][t] = m[j][t] * weight[j]`.
pub fn apply_blinder(m: &MelSpectrogram, b: &MelBlinder) -> Result<BlindedMel> {
    if m.rows() != b.n_mels() {
        return Err(Error::Size(format!(
            "mel grid has {} rows, blinder has {} weights",
            m.rows(),
            b.n_mels()
        )));
    }
    let mut grid = m.grid.clone();
    for (j, &w) in b.weights.iter().enumerate() {
        let w = w as f32;
        grid.row_mut(j).iter_mut().for_each(|v| *v *= w);
    }
    Ok(BlindedMel {
        pitch_class: b.pitch_class,
        grid,
    })
}

/// Total of `apply_blinder(m, b)` accumulated in f64.
pub fn blinded_energy(m: &MelSpectrogram, b: &MelBlinder) -> Result<f64> {
    if m.rows() != b.n_mels() {
        return Err(Error::Size(format!(
            "mel grid has {} rows, blinder has {} weights",
            m.rows(),
            b.n_mels()
        )));
    }
    Ok(b.weights
        .iter()
        .enumerate()
        .map(|(j, &w)| w * m.grid.row(j).iter().map(|&v| v as f64).sum::<f64>())
        .sum())
}

/// The 12 pitch-class blinders, in [`PitchClass::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlinderSet {
    blinders: Vec<MelBlinder>,
}

impl BlinderSet {
    pub fn build(bank: &MelFilterBank) -> Result<Self> {
        let blinders = PitchClass::ALL
            .iter()
            .map(|&p| {
                let ind = stft_indicator(&pitch_class_series(p), bank.n_bins(), bank.bin_hz());
                let mut b = build_blinder(&ind, bank)?;
                b.pitch_class = Some(p);
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blinders })
    }

    /// Blinders for the default 256-band bank.
    pub fn standard() -> Self {
        Self::build(&MelFilterBank::standard()).expect("standard bank matches its own indicators")
    }

    /// Arbitrary weight columns; used for reduced-size models.
    pub fn from_weights(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.is_empty() || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Size("blinder columns must be nonempty and equal length".into()));
        }
        Ok(Self {
            blinders: columns
                .into_iter()
                .enumerate()
                .map(|(i, weights)| MelBlinder {
                    pitch_class: PitchClass::ALL.get(i).copied(),
                    weights,
                    indicator: Vec::new(),
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.blinders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blinders.is_empty()
    }

    pub fn n_mels(&self) -> usize {
        self.blinders.first().map_or(0, MelBlinder::n_mels)
    }

    pub fn get(&self, i: usize) -> &MelBlinder {
        &self.blinders[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &MelBlinder> {
        self.blinders.iter()
    }

    /// Row-major `len x n_mels` matrix of weights.
    pub fn weight_matrix(&self) -> Vec<Vec<f64>> {
        self.blinders.iter().map(|b| b.weights.clone()).collect()
    }

    /// CSV lines `pitch_class,mel_band_index,weight` for every band.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "pitch_class,mel_band_index,weight")?;
        for (i, b) in self.blinders.iter().enumerate() {
            let name = b.pitch_class.map_or_else(|| i.to_string(), |p| p.name().to_string());
            for (j, w) in b.weights.iter().enumerate() {
                writeln!(out, "{name},{j},{w}")?;
            }
        }
        Ok(())
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}
