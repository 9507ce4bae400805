use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Max-subtracted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Returns `(-log p[label], p - onehot(label))`.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::Range(format!(
            "label {label} outside {} classes",
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln() + m;
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Mean loss over a `[B, K]` batch and its gradient with respect to the logits.
pub fn softmax_cross_entropy_batch<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::Size(format!(
            "logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let b = labels.len();
    let scale = T::one() / T::from_f64(b as f64);
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let (l, g) = softmax_cross_entropy(logits.sample(i), y)?;
        total += l;
        for (d, v) in grad.sample_mut(i).iter_mut().zip(g) {
            *d = v * scale;
        }
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let (l, g) = softmax_cross_entropy(&[0.3f64; 4], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert_eq!(g, vec![0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn large_logit_is_stable() {
        let (l, g) = softmax_cross_entropy(&[1000.0f32, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(l.is_finite() && l.abs() < 1e-6);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn grad_sums_to_zero_and_softmax_on_simplex() {
        let z = [0.5f64, -2.0, 3.0, 0.1];
        let (_, g) = softmax_cross_entropy(&z, 1).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        let p = softmax(&z);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_is_mean() {
        let t = Tensor::from_vec(&[2, 4], vec![0.0f64, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let (l, g) = softmax_cross_entropy_batch(&t, &[0, 3]).unwrap();
        let (l1, _) = softmax_cross_entropy(&[1.0, 2.0, 3.0, 4.0], 3).unwrap();
        assert!((l - (4f64.ln() + l1) / 2.0).abs() < 1e-12);
        assert!((g.data()[0] + 0.375).abs() < 1e-12);
        assert!(softmax_cross_entropy_batch(&t, &[0]).is_err());
    }
}
