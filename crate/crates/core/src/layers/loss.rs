use crate::error::{Error, Result};
use crate::tensor::Element;

/// Mean softmax cross-entropy over a batch of `k`-way logits.
///
/// Returns the loss and `(softmax − one_hot) / N`.
pub fn softmax_cross_entropy<T: Element>(logits: &[T], k: usize, labels: &[usize]) -> Result<(T, Vec<T>)> {
    let n = labels.len();
    if logits.len() != n * k || k == 0 {
        return Err(Error::Shape(format!(
            "{} logits for {} labels of {} classes",
            logits.len(),
            n,
            k
        )));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Label {
            index,
            label,
            classes: k,
        });
    }
    let inv_n = T::one() / T::of(n.max(1) as f64);
    let mut grad = vec![T::zero(); n * k];
    let mut total = T::zero();
    for (i, (row, g)) in logits.chunks(k).zip(grad.chunks_mut(k)).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (gv, &z) in g.iter_mut().zip(row) {
            *gv = (z - max).exp();
            denom = denom + *gv;
        }
        let label = labels[i];
        total = total + denom.ln() - (row[label] - max);
        for gv in g.iter_mut() {
            *gv = *gv / denom * inv_n;
        }
        g[label] = g[label] - inv_n;
    }
    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_rel_error, numeric_gradient};

    #[test]
    fn uniform_logits_give_log_k() {
        let (loss, _) = softmax_cross_entropy(&[0.0f64; 10], 10, &[3]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn saturated_correct_prediction() {
        let mut logits = vec![0.0f64; 5];
        logits[2] = 1000.0;
        let (loss, grad) = softmax_cross_entropy(&logits, 5, &[2]).unwrap();
        assert!(loss < 1e-6);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn two_class_gradient_by_hand() {
        let (_, grad) = softmax_cross_entropy(&[0.0f64; 4], 2, &[0, 0]).unwrap();
        assert_eq!(grad, vec![-0.25, 0.25, -0.25, 0.25]);
    }

    #[test]
    fn rejects_label_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0f32; 6], 3, &[1, 3]),
            Err(Error::Label { index: 1, label: 3, .. })
        ));
    }

    #[test]
    fn implied_probabilities_sum_to_one() {
        let logits = [3.0f64, -1.0, 0.5, 100.0, 99.0, -50.0];
        let (_, grad) = softmax_cross_entropy(&logits, 3, &[0, 2]).unwrap();
        for (i, row) in grad.chunks(3).enumerate() {
            // grad·N + one_hot recovers the softmax row
            let label = [0, 2][i];
            let s: f64 = row
                .iter()
                .enumerate()
                .map(|(j, g)| g * 2.0 + if j == label { 1.0 } else { 0.0 })
                .sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = [0.3f64, -1.2, 2.0, 0.1, 0.0, -0.7, 1.5, 0.2];
        let labels = [1, 3];
        let (_, grad) = softmax_cross_entropy(&logits, 4, &labels).unwrap();
        let numeric = numeric_gradient(&logits, 1e-5, |v| softmax_cross_entropy(v, 4, &labels).unwrap().0);
        assert!(max_rel_error(&grad, &numeric) < 1e-4);
    }
}
