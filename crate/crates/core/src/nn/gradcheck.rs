//! Central finite-difference checks for 64-bit layers and models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Ctx, Layer, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-6;

/// `|a - n| / (|a| + 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Location of the worst entry, e.g. `param 0[13]` or `input[4]`.
    pub worst: String,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_error: 0.0,
            worst: String::new(),
        }
    }

    pub fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = what();
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks parameter and input gradients of `layer` under the scalar loss
/// `sum(r * layer(x))` for a fixed random `r`. Every forward pass reuses the
/// same dropout seed so masks do not move between evaluations.
pub fn check_layer(
    layer: &mut dyn Layer<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport> {
    let ctx = || Ctx {
        mode,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let y = layer.forward(x, &mut ctx())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let r = Tensor::from_vec(
        y.shape(),
        (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let loss = |layer: &mut dyn Layer<f64>, x: &Tensor<f64>| -> Result<f64> {
        let y = layer.forward(x, &mut ctx())?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };
    for p in layer.params_mut() {
        p.grad.fill(0.0);
    }
    layer.forward(x, &mut ctx())?;
    let dx = layer
        .backward(&r, true)?
        .ok_or_else(|| Error::State("layer returned no input gradient".into()))?;
    let analytic: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut report = GradCheckReport::new();
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = layer.params()[pi].value.data()[i];
            layer.params_mut()[pi].value.data_mut()[i] = orig + step;
            let up = loss(layer, x)?;
            layer.params_mut()[pi].value.data_mut()[i] = orig - step;
            let down = loss(layer, x)?;
            layer.params_mut()[pi].value.data_mut()[i] = orig;
            report.record(|| format!("param {pi}[{i}]"), a, (up - down) / (2.0 * step));
        }
    }
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + step;
        let up = loss(layer, &xp)?;
        xp.data_mut()[i] = orig - step;
        let down = loss(layer, &xp)?;
        xp.data_mut()[i] = orig;
        report.record(|| format!("input[{i}]"), dx.data()[i], (up - down) / (2.0 * step));
    }
    Ok(report)
}

/// Central differences of a scalar function at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + step;
            let up = f(&p);
            p[i] = x[i] - step;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::*;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn assert_ok(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, mode: Mode) {
        let rep = check_layer(layer, x, mode, 11, DEFAULT_STEP).unwrap();
        assert!(rep.passes(1e-4), "{} {mode:?}: {rep:?}", layer.name());
    }

    #[test]
    fn each_layer_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_ok(&mut Conv2d::new(2, 3, (2, 3), (1, 2), &mut rng), &random(&[2, 2, 5, 7], 2), Mode::Train);
        let mut bn = BatchNorm::new(3);
        bn.gamma.value = random(&[3], 3);
        assert_ok(&mut bn, &random(&[4, 3, 5], 4), Mode::Train);
        assert_ok(&mut bn, &random(&[4, 3, 5], 4), Mode::Infer);
        assert_ok(&mut Relu::new(), &random(&[3, 7], 5), Mode::Train);
        assert_ok(&mut MeanPool::new(), &random(&[2, 3, 2, 4], 6), Mode::Train);
        assert_ok(&mut MaxPool2d::new((2, 2)), &random(&[2, 2, 4, 5], 7), Mode::Train);
        assert_ok(&mut MaxOver::new(), &random(&[2, 4, 3], 8), Mode::Train);
        assert_ok(&mut Dropout::new(0.3).unwrap(), &random(&[2, 10], 9), Mode::Train);
        assert_ok(&mut Linear::new(6, 4, &mut rng), &random(&[3, 6], 10), Mode::Train);
        assert_ok(&mut RowScale::new(vec![0.5, 0.0, 2.0]), &random(&[2, 1, 3, 4], 11), Mode::Train);
    }

    #[test]
    fn five_layer_stack_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut seq = Sequential::<f64>::default();
        seq.push(Conv2d::new(1, 4, (3, 2), (1, 1), &mut rng));
        seq.push(BatchNorm::new(4));
        seq.push(Relu::new());
        seq.push(MeanPool::new());
        seq.push(Dropout::new(0.2).unwrap());
        seq.push(Linear::new(4, 3, &mut rng));
        assert_ok(&mut seq, &random(&[3, 1, 6, 5], 22), Mode::Train);
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }
}
