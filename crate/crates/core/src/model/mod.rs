//! Network assembly, training, evaluation and checkpointing.

mod benchmark;
pub mod checkpoint;
pub mod folds;
mod harmonics_net;
pub mod metrics;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use benchmark::BenchmarkNet;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use folds::{balance_subsample, split_songs, stratified_song_folds, Fold};
pub use harmonics_net::HarmonicsNet;
pub use metrics::{evaluate, ClassMetrics, EvalReport, FoldSummary};
pub use train::{train, EpochRecord, LabeledMel, TrainConfig, TrainOutcome};

use crate::adinsert::EmotionDistribution;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::harmonics::BlinderSet;
use crate::nn::{softmax, Ctx, Param, Real, Tensor};
use crate::quadrant::{argmax, Quadrant};
use crate::spectro::DEFAULT_MEL_BANDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Harmonics,
    Square,
    TallRect,
    WideRect,
    Time,
    Frequency,
    TimeFrequency,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Harmonics,
        Variant::Square,
        Variant::TallRect,
        Variant::WideRect,
        Variant::Time,
        Variant::Frequency,
        Variant::TimeFrequency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Harmonics => "harmonics",
            Variant::Square => "square",
            Variant::TallRect => "tall_rect",
            Variant::WideRect => "wide_rect",
            Variant::Time => "time",
            Variant::Frequency => "frequency",
            Variant::TimeFrequency => "time_frequency",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnsupportedVariant(s.to_string()))
    }
}

/// Network geometry. Fields not used by a variant are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    /// Filters per pitch-class branch (harmonics variant).
    pub channels: usize,
    pub dropout_rate: f64,
    /// Input height; the harmonics filter spans all of it.
    pub n_mels: usize,
    /// Output channels of the conv blocks (square and rectangular variants).
    pub block_channels: Vec<usize>,
    /// Base kernel side `k`; tall is `2k x k`, wide is `k x 2k`.
    pub kernel: usize,
    /// Filters of the single-layer time / frequency variants.
    pub band_filters: usize,
    /// Height of frequency-variant filters.
    pub tall_span: usize,
    /// Width of time-variant filters.
    pub wide_span: usize,
    /// Hidden fully connected width of the time / frequency variants.
    pub hidden: usize,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Harmonics,
            channels: 32,
            dropout_rate: 0.25,
            n_mels: DEFAULT_MEL_BANDS,
            block_channels: vec![16, 32, 64, 64],
            kernel: 5,
            band_filters: 160,
            tall_span: 192,
            wide_span: 64,
            hidden: 512,
        }
    }
}

impl ArchitectureSpec {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Range(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Range("n_mels must be positive".into()));
        }
        let positive = match self.variant {
            Variant::Harmonics => self.channels > 0,
            Variant::Square | Variant::TallRect | Variant::WideRect => {
                self.kernel > 0 && !self.block_channels.is_empty() && self.block_channels.iter().all(|&c| c > 0)
            }
            Variant::Time | Variant::Frequency | Variant::TimeFrequency => {
                self.band_filters > 0 && self.hidden > 0 && self.tall_span > 0 && self.wide_span > 0
            }
        };
        if !positive {
            return Err(Error::Range(format!("degenerate {} geometry", self.variant)));
        }
        if self.variant == Variant::TimeFrequency && self.band_filters < 2 {
            return Err(Error::Range("time_frequency needs at least two filters".into()));
        }
        if matches!(self.variant, Variant::Frequency | Variant::TimeFrequency) && self.tall_span > self.n_mels {
            return Err(Error::Size(format!(
                "filter height {} exceeds {} mel bands",
                self.tall_span, self.n_mels
            )));
        }
        Ok(())
    }
}

pub(crate) enum Net<T: Real> {
    Harmonics(HarmonicsNet<T>),
    Benchmark(BenchmarkNet<T>),
}

/// A network plus its geometry. Inputs are `[B, 1, n_mels, frames]`.
pub struct Model<T: Real> {
    spec: ArchitectureSpec,
    net: Net<T>,
}

impl<T: Real> Model<T> {
    /// Builds a freshly initialized network. The harmonics variant uses the
    /// standard blinders and therefore needs `n_mels = 256`.
    pub fn new(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        if spec.variant == Variant::Harmonics {
            if spec.n_mels != DEFAULT_MEL_BANDS {
                return Err(Error::Size(format!(
                    "standard blinders have {DEFAULT_MEL_BANDS} bands, spec asks for {}; use with_blinders",
                    spec.n_mels
                )));
            }
            return Self::with_blinders(spec, &BlinderSet::standard(), seed);
        }
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            spec: spec.clone(),
            net: Net::Benchmark(BenchmarkNet::new(spec, &mut rng)?),
        })
    }

    /// Harmonics variant with caller-supplied blinder columns.
    pub fn with_blinders(spec: &ArchitectureSpec, blinders: &BlinderSet, seed: u64) -> Result<Self> {
        if spec.variant != Variant::Harmonics {
            return Err(Error::UnsupportedVariant(format!(
                "{} does not take blinders",
                spec.variant
            )));
        }
        spec.validate()?;
        if blinders.n_mels() != spec.n_mels {
            return Err(Error::Size(format!(
                "blinders have {} bands, spec asks for {}",
                blinders.n_mels(),
                spec.n_mels
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            spec: spec.clone(),
            net: Net::Harmonics(HarmonicsNet::new(spec, &blinders.weight_matrix(), &mut rng)?),
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn harmonics(&self) -> Option<&HarmonicsNet<T>> {
        match &self.net {
            Net::Harmonics(h) => Some(h),
            Net::Benchmark(_) => None,
        }
    }

    pub fn benchmark(&self) -> Option<&BenchmarkNet<T>> {
        match &self.net {
            Net::Harmonics(_) => None,
            Net::Benchmark(b) => Some(b),
        }
    }

    pub fn harmonics_mut(&mut self) -> Option<&mut HarmonicsNet<T>> {
        match &mut self.net {
            Net::Harmonics(h) => Some(h),
            Net::Benchmark(_) => None,
        }
    }

    /// Logits `[B, 4]`.
    pub fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.shape()[1] != 1 || x.shape()[2] != self.spec.n_mels {
            return Err(Error::Size(format!(
                "model expects [B, 1, {}, frames], got {:?}",
                self.spec.n_mels,
                x.shape()
            )));
        }
        let out = match &mut self.net {
            Net::Harmonics(h) => h.forward(x, ctx),
            Net::Benchmark(b) => b.forward(x, ctx),
        }?;
        if !out.all_finite() {
            return Err(Error::Numerical("non-finite logits".into()));
        }
        Ok(out)
    }

    /// Accumulates parameter gradients for `dlogits` (`[B, 4]`) and records
    /// the gradients at the feature maps.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<()> {
        match &mut self.net {
            Net::Harmonics(h) => h.backward(dlogits),
            Net::Benchmark(b) => b.backward(dlogits),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match &self.net {
            Net::Harmonics(h) => h.params(),
            Net::Benchmark(b) => b.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match &mut self.net {
            Net::Harmonics(h) => h.params_mut(),
            Net::Benchmark(b) => b.params_mut(),
        }
    }

    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        match &self.net {
            Net::Harmonics(h) => h.buffers(),
            Net::Benchmark(b) => b.buffers(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match &mut self.net {
            Net::Harmonics(h) => h.buffers_mut(),
            Net::Benchmark(b) => b.buffers_mut(),
        }
    }

    /// Names aligned with [`Model::params`].
    pub fn param_names(&self) -> Vec<String> {
        match &self.net {
            Net::Harmonics(h) => h.param_names(),
            Net::Benchmark(b) => b.param_names(),
        }
    }

    /// Names aligned with [`Model::buffers`].
    pub fn buffer_names(&self) -> Vec<String> {
        match &self.net {
            Net::Harmonics(h) => h.buffer_names(),
            Net::Benchmark(b) => b.buffer_names(),
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }

    /// Inference-mode logits for one grid.
    pub fn logits(&mut self, mel: &Grid) -> Result<[f64; 4]> {
        let x = batch_tensor::<T>(&[mel])?;
        let y = self.forward(&x, &mut Ctx::infer())?;
        let d = y.data();
        Ok([d[0].to_f64(), d[1].to_f64(), d[2].to_f64(), d[3].to_f64()])
    }

    pub fn predict_distribution(&mut self, mel: &Grid) -> Result<EmotionDistribution> {
        EmotionDistribution::new(softmax(&self.logits(mel)?))
    }

    /// Highest-probability quadrant; ties go to the lower quadrant.
    pub fn predict_label(&mut self, mel: &Grid) -> Result<Quadrant> {
        Quadrant::from_index(argmax(&self.logits(mel)?))
    }

    /// Inference-mode logits for many grids, `batch` at a time.
    pub fn logits_many(&mut self, mels: &[&Grid], batch: usize) -> Result<Vec<[f64; 4]>> {
        let mut out = Vec::with_capacity(mels.len());
        for chunk in mels.chunks(batch.max(1)) {
            let y = self.forward(&batch_tensor::<T>(chunk)?, &mut Ctx::infer())?;
            for s in 0..chunk.len() {
                let d = y.sample(s);
                out.push([d[0].to_f64(), d[1].to_f64(), d[2].to_f64(), d[3].to_f64()]);
            }
        }
        Ok(out)
    }
}

/// Stacks equally shaped grids into `[B, 1, rows, cols]`.
pub fn batch_tensor<T: Real>(mels: &[&Grid]) -> Result<Tensor<T>> {
    let first = mels
        .first()
        .ok_or_else(|| Error::Input("empty batch".into()))?;
    let (r, c) = first.shape();
    let mut data = Vec::with_capacity(mels.len() * r * c);
    for m in mels {
        if m.shape() != (r, c) {
            return Err(Error::Size(format!(
                "batch mixes {r}x{c} and {}x{} grids",
                m.rows(),
                m.cols()
            )));
        }
        data.extend(m.data().iter().map(|&v| T::from_f64(v as f64)));
    }
    Tensor::from_vec(&[mels.len(), 1, r, c], data)
}
