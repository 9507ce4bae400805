use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm, Conv2d, Ctx, Dropout, Layer, Linear, MaxOver, MeanPool, Param, Real, Relu, RowScale,
    Tensor,
};

/// One pitch class: blinder -> full-height conv -> batch norm -> ReLU ->
/// mean over time -> dropout.
struct Branch<T: Real> {
    mask: RowScale<T>,
    conv: Conv2d<T>,
    bn: BatchNorm<T>,
    relu: Relu,
    pool: MeanPool,
    drop: Dropout,
    /// Post-ReLU feature maps `[B, C, 1, T]` from the last forward pass.
    features: Option<Tensor<T>>,
    /// Gradient at `features` from the last backward pass.
    feature_grad: Option<Tensor<T>>,
}

impl<T: Real> Branch<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let h = self.mask.forward(x, ctx)?;
        let h = self.conv.forward(&h, ctx)?;
        let h = self.bn.forward(&h, ctx)?;
        let a = self.relu.forward(&h, ctx)?;
        let pooled = self.pool.forward(&a, ctx)?;
        self.features = Some(a);
        self.feature_grad = None;
        self.drop.forward(&pooled, ctx)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        let g = self.drop.backward(grad, true)?.expect("requested");
        let g = Layer::<T>::backward(&mut self.pool, &g, true)?.expect("requested");
        let h = Layer::<T>::backward(&mut self.relu, &g, true)?.expect("requested");
        self.feature_grad = Some(g);
        let h = self.bn.backward(&h, true)?.expect("requested");
        self.conv.backward(&h, false)?;
        Ok(())
    }
}

/// Twelve blinded branches, max over pitch classes, dropout, linear head.
pub struct HarmonicsNet<T: Real> {
    branches: Vec<Branch<T>>,
    pitch_max: MaxOver,
    drop: Dropout,
    fc: Linear<T>,
    channels: usize,
}

impl<T: Real> HarmonicsNet<T> {
    pub(crate) fn new(spec: &ArchitectureSpec, blinders: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Self> {
        if blinders.is_empty() {
            return Err(Error::Size("harmonics net needs at least one blinder".into()));
        }
        let c = spec.channels;
        let branches = blinders
            .iter()
            .map(|w| {
                if w.len() != spec.n_mels {
                    return Err(Error::Size(format!(
                        "blinder of {} bands for {} mel rows",
                        w.len(),
                        spec.n_mels
                    )));
                }
                Ok(Branch {
                    mask: RowScale::new(w.iter().map(|&v| T::from_f64(v)).collect()),
                    conv: Conv2d::new(1, c, (spec.n_mels, 1), (1, 1), rng),
                    bn: BatchNorm::new(c),
                    relu: Relu::new(),
                    pool: MeanPool::new(),
                    drop: Dropout::new(spec.dropout_rate)?,
                    features: None,
                    feature_grad: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            branches,
            pitch_max: MaxOver::new(),
            drop: Dropout::new(spec.dropout_rate)?,
            fc: Linear::new(c, 4, rng),
            channels: c,
        })
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Post-ReLU feature maps of branch `p`, `[B, C, 1, T]`.
    pub fn features(&self, p: usize) -> Option<&Tensor<T>> {
        self.branches.get(p)?.features.as_ref()
    }

    /// Gradient of the backpropagated quantity at [`Self::features`].
    pub fn feature_grad(&self, p: usize) -> Option<&Tensor<T>> {
        self.branches.get(p)?.feature_grad.as_ref()
    }

    /// For each `(sample, channel)`, the branch that won the max over pitch
    /// classes in the last forward pass.
    pub fn winning_branch(&self) -> Option<&[usize]> {
        self.pitch_max.argmax()
    }

    pub fn fc_weight(&self) -> &Tensor<T> {
        &self.fc.weight.value
    }

    pub fn fc_weight_mut(&mut self) -> &mut Tensor<T> {
        &mut self.fc.weight.value
    }

    pub(crate) fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let b = x.shape()[0];
        let (c, p) = (self.channels, self.branches.len());
        // Each branch gets its own dropout stream so the result does not
        // depend on scheduling.
        let seeds: Vec<u64> = (0..p).map(|_| ctx.rng.random()).collect();
        let mode = ctx.mode;
        let pooled: Vec<Tensor<T>> = self
            .branches
            .par_iter_mut()
            .zip(seeds)
            .map(|(br, seed)| {
                let mut local = Ctx {
                    mode,
                    rng: rand::SeedableRng::seed_from_u64(seed),
                };
                br.forward(x, &mut local)
            })
            .collect::<Result<_>>()?;
        let mut stacked = Tensor::zeros(&[b, p, c]);
        for (pi, t) in pooled.iter().enumerate() {
            for s in 0..b {
                let dst = &mut stacked.data_mut()[(s * p + pi) * c..(s * p + pi + 1) * c];
                dst.copy_from_slice(t.sample(s));
            }
        }
        let h = self.pitch_max.forward(&stacked, ctx)?;
        let h = self.drop.forward(&h, ctx)?;
        self.fc.forward(&h, ctx)
    }

    pub(crate) fn backward(&mut self, dlogits: &Tensor<T>) -> Result<()> {
        let g = self.fc.backward(dlogits, true)?.expect("requested");
        let g = self.drop.backward(&g, true)?.expect("requested");
        let g = Layer::<T>::backward(&mut self.pitch_max, &g, true)?.expect("requested");
        let (b, p, c) = (g.shape()[0], g.shape()[1], g.shape()[2]);
        self.branches
            .par_iter_mut()
            .enumerate()
            .map(|(pi, br)| {
                let mut gb = Tensor::zeros(&[b, c]);
                for s in 0..b {
                    gb.sample_mut(s)
                        .copy_from_slice(&g.data()[(s * p + pi) * c..(s * p + pi + 1) * c]);
                }
                br.backward(&gb)
            })
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    pub(crate) fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for br in &self.branches {
            v.extend(br.conv.params());
            v.extend(br.bn.params());
        }
        v.extend(self.fc.params());
        v
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for br in &mut self.branches {
            v.extend(br.conv.params_mut());
            v.extend(br.bn.params_mut());
        }
        v.extend(self.fc.params_mut());
        v
    }

    pub(crate) fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for p in 0..self.branches.len() {
            for n in ["conv.weight", "conv.bias", "bn.gamma", "bn.beta"] {
                v.push(format!("branch{p}.{n}"));
            }
        }
        v.push("fc.weight".into());
        v.push("fc.bias".into());
        v
    }

    pub(crate) fn buffers(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for br in &self.branches {
            v.extend(br.mask.buffers());
            v.extend(br.bn.buffers());
        }
        v
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for br in &mut self.branches {
            v.extend(br.mask.buffers_mut());
            v.extend(br.bn.buffers_mut());
        }
        v
    }

    pub(crate) fn buffer_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for p in 0..self.branches.len() {
            for n in ["blinder", "bn.running_mean", "bn.running_var"] {
                v.push(format!("branch{p}.{n}"));
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Model, Variant};
    use super::*;
    use crate::harmonics::BlinderSet;
    use crate::nn::gradcheck::{numeric_gradient, relative_error};
    use crate::nn::{softmax_cross_entropy_batch, Mode};
    use rand::SeedableRng;

    fn tiny_spec() -> ArchitectureSpec {
        ArchitectureSpec {
            variant: Variant::Harmonics,
            channels: 3,
            n_mels: 16,
            dropout_rate: 0.25,
            ..Default::default()
        }
    }

    /// Standard blinders squeezed onto 16 rows by summing groups of 16 bands.
    fn tiny_blinders() -> BlinderSet {
        let cols = BlinderSet::standard()
            .weight_matrix()
            .into_iter()
            .map(|w| w.chunks(16).map(|c| c.iter().sum::<f64>() / 16.0).collect())
            .collect();
        BlinderSet::from_weights(cols).unwrap()
    }

    fn random_input(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn end_to_end_gradient_check() {
        let mut m = Model::<f64>::with_blinders(&tiny_spec(), &tiny_blinders(), 5).unwrap();
        let x = random_input(6, &[3, 1, 16, 20]);
        let labels = [0usize, 2, 3];
        let loss_of = |m: &mut Model<f64>| -> f64 {
            let y = m.forward(&x, &mut Ctx::train(9)).unwrap();
            softmax_cross_entropy_batch(&y, &labels).unwrap().0
        };
        m.zero_grad();
        let y = m.forward(&x, &mut Ctx::train(9)).unwrap();
        let (_, dy) = softmax_cross_entropy_batch(&y, &labels).unwrap();
        m.backward(&dy).unwrap();
        let analytic: Vec<Vec<f64>> = m.params().iter().map(|p| p.grad.data().to_vec()).collect();
        let mut worst = 0.0f64;
        for (pi, a) in analytic.iter().enumerate() {
            let start: Vec<f64> = m.params()[pi].value.data().to_vec();
            let num = numeric_gradient(
                |w| {
                    m.params_mut()[pi].value.data_mut().copy_from_slice(w);
                    loss_of(&mut m)
                },
                &start,
                1e-6,
            );
            m.params_mut()[pi].value.data_mut().copy_from_slice(&start);
            for (&ai, &ni) in a.iter().zip(&num) {
                worst = worst.max(relative_error(ai, ni));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn zero_input_is_deterministic() {
        let mut m = Model::<f64>::with_blinders(&tiny_spec(), &tiny_blinders(), 1).unwrap();
        let x = Tensor::zeros(&[2, 1, 16, 20]);
        let a = m.forward(&x, &mut Ctx::infer()).unwrap();
        let b = m.forward(&x, &mut Ctx::infer()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sample(0), a.sample(1));
    }

    #[test]
    fn branch_permutation_leaves_logits_unchanged() {
        let blinders = tiny_blinders();
        let mut m = Model::<f64>::with_blinders(&tiny_spec(), &blinders, 3).unwrap();
        let x = random_input(4, &[2, 1, 16, 20]);
        let before = m.forward(&x, &mut Ctx::infer()).unwrap();
        let net = m.harmonics_mut().unwrap();
        net.branches.reverse();
        let after = m.forward(&x, &mut Ctx::infer()).unwrap();
        for (a, b) in before.data().iter().zip(after.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_uses_dropout_infer_does_not() {
        let mut m = Model::<f64>::with_blinders(&tiny_spec(), &tiny_blinders(), 3).unwrap();
        let x = random_input(8, &[4, 1, 16, 20]);
        let a = m.forward(&x, &mut Ctx::train(1)).unwrap();
        let b = m.forward(&x, &mut Ctx::train(1)).unwrap();
        let c = m.forward(&x, &mut Ctx::train(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(Ctx::infer().mode, Mode::Infer);
    }

    #[test]
    fn feature_maps_have_full_time_axis() {
        let mut m = Model::<f32>::new(&ArchitectureSpec::default(), 0).unwrap();
        m.forward(&Tensor::full(&[1, 1, 256, 517], 0.5), &mut Ctx::infer()).unwrap();
        let h = m.harmonics().unwrap();
        assert_eq!(h.n_branches(), 12);
        assert_eq!(h.features(0).unwrap().shape(), &[1, 32, 1, 517]);
    }
}
