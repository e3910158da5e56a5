use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its exact gradient with
/// respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 || logits.batch() != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "cross entropy",
            expected: vec![labels.len(), logits.row_len()],
            found: logits.shape().to_vec(),
        });
    }
    let classes = logits.row_len();
    let n = labels.len();
    let inv_n = 1.0 / n as f64;
    let mut grad = Tensor::zeros(logits.shape().to_vec());
    let mut loss = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let z = logits.row(b);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - z[y];
        for (g, &v) in grad.row_mut(b).iter_mut().zip(z) {
            *g = (v - log_sum).exp() * inv_n;
        }
        grad.row_mut(b)[y] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Index of the largest logit per row (first on ties).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.batch())
        .map(|b| {
            let r = logits.row(b);
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        for c in [2usize, 3, 10] {
            let t = Tensor::new(vec![4, c], vec![0.7; 4 * c]).unwrap();
            let (loss, _) = cross_entropy(&t, &[0, 1, 0, 1]).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_vanishes_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 50.0] {
            let t = Tensor::new(vec![1, 3], vec![margin, 0.0, 0.0]).unwrap();
            let (loss, _) = cross_entropy(&t, &[0]).unwrap();
            assert!(loss >= 0.0 && loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn gradient_matches_central_differences() {
        // Three-class logits from a fixed LCG so the case is reproducible.
        let mut s = 12345u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        let data: Vec<f64> = (0..15).map(|_| next()).collect();
        let labels = [0, 2, 1, 1, 0];
        let t = Tensor::new(vec![5, 3], data.clone()).unwrap();
        let (_, grad) = cross_entropy(&t, &labels).unwrap();
        let h = 1e-5;
        for i in 0..data.len() {
            let mut p = data.clone();
            p[i] += h;
            let mut m = data.clone();
            m[i] -= h;
            let lp = cross_entropy(&Tensor::new(vec![5, 3], p).unwrap(), &labels).unwrap().0;
            let lm = cross_entropy(&Tensor::new(vec![5, 3], m).unwrap(), &labels).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let g = grad.data()[i];
            assert!((fd - g).abs() <= 1e-4 * g.abs().max(1e-8), "coord {i}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn label_out_of_range() {
        let t = Tensor::zeros(vec![1, 3]);
        assert!(matches!(
            cross_entropy(&t, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }
}
