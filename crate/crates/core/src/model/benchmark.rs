use rand_chacha::ChaCha8Rng;

use super::{ArchitectureSpec, Variant};
use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm, Conv2d, Ctx, Dropout, Layer, Linear, MaxPool2d, MeanPool, Param, Real, Relu,
    Sequential, Tensor,
};

/// A convolutional feature stack followed by a global mean over space.
struct Tower<T: Real> {
    features: Sequential<T>,
    pool: MeanPool,
    channels: usize,
    features_out: Option<Tensor<T>>,
    feature_grad: Option<Tensor<T>>,
}

/// Conventional CNN baselines: stacked conv blocks (square and rectangular
/// filters) or single wide/tall filter banks (time and frequency filters).
pub struct BenchmarkNet<T: Real> {
    towers: Vec<Tower<T>>,
    head: Sequential<T>,
}

fn conv_block<T: Real>(seq: &mut Sequential<T>, c_in: usize, c_out: usize, k: (usize, usize), rng: &mut ChaCha8Rng) {
    seq.push(Conv2d::new(c_in, c_out, k, (1, 1), rng));
    seq.push(BatchNorm::new(c_out));
    seq.push(Relu::new());
}

impl<T: Real> BenchmarkNet<T> {
    pub(crate) fn new(spec: &ArchitectureSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let k = spec.kernel;
        let mut head = Sequential::default();
        let towers = match spec.variant {
            Variant::Square | Variant::TallRect | Variant::WideRect => {
                let kernel = match spec.variant {
                    Variant::Square => (k, k),
                    Variant::TallRect => (2 * k, k),
                    _ => (k, 2 * k),
                };
                let mut seq = Sequential::default();
                let mut c_in = 1;
                for &c in &spec.block_channels {
                    conv_block(&mut seq, c_in, c, kernel, rng);
                    seq.push(MaxPool2d::new((2, 2)));
                    c_in = c;
                }
                head.push(Dropout::new(spec.dropout_rate)?);
                head.push(Linear::new(c_in, 4, rng));
                vec![(seq, c_in)]
            }
            Variant::Time | Variant::Frequency | Variant::TimeFrequency => {
                let f = spec.band_filters;
                let mut towers = Vec::new();
                let (tall, wide) = match spec.variant {
                    Variant::Time => (0, f),
                    Variant::Frequency => (f, 0),
                    _ => (f / 2, f - f / 2),
                };
                if tall > 0 {
                    let mut seq = Sequential::default();
                    conv_block(&mut seq, 1, tall, (spec.tall_span, 1), rng);
                    towers.push((seq, tall));
                }
                if wide > 0 {
                    let mut seq = Sequential::default();
                    conv_block(&mut seq, 1, wide, (1, spec.wide_span), rng);
                    towers.push((seq, wide));
                }
                head.push(Dropout::new(spec.dropout_rate)?);
                head.push(Linear::new(f, spec.hidden, rng));
                head.push(Relu::new());
                head.push(Dropout::new(spec.dropout_rate)?);
                head.push(Linear::new(spec.hidden, 4, rng));
                towers
            }
            Variant::Harmonics => {
                return Err(Error::UnsupportedVariant("harmonics is not a benchmark net".into()))
            }
        };
        Ok(Self {
            towers: towers
                .into_iter()
                .map(|(features, channels)| Tower {
                    features,
                    pool: MeanPool::new(),
                    channels,
                    features_out: None,
                    feature_grad: None,
                })
                .collect(),
            head,
        })
    }

    pub fn n_towers(&self) -> usize {
        self.towers.len()
    }

    /// Output of tower `i`'s last convolutional stage, `[B, C, H, W]`.
    pub fn features(&self, i: usize) -> Option<&Tensor<T>> {
        self.towers.get(i)?.features_out.as_ref()
    }

    pub fn feature_grad(&self, i: usize) -> Option<&Tensor<T>> {
        self.towers.get(i)?.feature_grad.as_ref()
    }

    pub(crate) fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let b = x.shape()[0];
        let total: usize = self.towers.iter().map(|t| t.channels).sum();
        let mut joined = Tensor::zeros(&[b, total]);
        let mut offset = 0;
        for t in &mut self.towers {
            let a = t.features.forward(x, ctx)?;
            let pooled = t.pool.forward(&a, ctx)?;
            for s in 0..b {
                joined.sample_mut(s)[offset..offset + t.channels].copy_from_slice(pooled.sample(s));
            }
            offset += t.channels;
            t.features_out = Some(a);
            t.feature_grad = None;
        }
        self.head.forward(&joined, ctx)
    }

    pub(crate) fn backward(&mut self, dlogits: &Tensor<T>) -> Result<()> {
        let g = self.head.backward(dlogits, true)?.expect("requested");
        let b = g.shape()[0];
        let mut offset = 0;
        for t in &mut self.towers {
            let mut gt = Tensor::zeros(&[b, t.channels]);
            for s in 0..b {
                gt.sample_mut(s)
                    .copy_from_slice(&g.sample(s)[offset..offset + t.channels]);
            }
            offset += t.channels;
            let ga = Layer::<T>::backward(&mut t.pool, &gt, true)?.expect("requested");
            t.features.backward(&ga, false)?;
            t.feature_grad = Some(ga);
        }
        Ok(())
    }

    pub(crate) fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.towers.iter().flat_map(|t| t.features.params()).collect();
        v.extend(self.head.params());
        v
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self
            .towers
            .iter_mut()
            .flat_map(|t| t.features.params_mut())
            .collect();
        v.extend(self.head.params_mut());
        v
    }

    pub(crate) fn buffers(&self) -> Vec<&Tensor<T>> {
        self.towers.iter().flat_map(|t| t.features.buffers()).collect()
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.towers.iter_mut().flat_map(|t| t.features.buffers_mut()).collect()
    }

    fn names(seq: &Sequential<T>, prefix: &str, buffers: bool) -> Vec<String> {
        let mut v = Vec::new();
        for (i, l) in seq.layers.iter().enumerate() {
            let n = if buffers { l.buffers().len() } else { l.params().len() };
            for j in 0..n {
                v.push(format!("{prefix}.{i}.{}.{j}", l.name()));
            }
        }
        v
    }

    pub(crate) fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .towers
            .iter()
            .enumerate()
            .flat_map(|(i, t)| Self::names(&t.features, &format!("tower{i}"), false))
            .collect();
        v.extend(Self::names(&self.head, "head", false));
        v
    }

    pub(crate) fn buffer_names(&self) -> Vec<String> {
        self.towers
            .iter()
            .enumerate()
            .flat_map(|(i, t)| Self::names(&t.features, &format!("tower{i}"), true))
            .collect()
    }
}
