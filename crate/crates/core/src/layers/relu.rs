use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub fn relu_forward<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Element>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_output.shape() {
        return Err(Error::Shape("relu upstream gradient shape differs from input".into()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_rel_error, numeric_gradient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::<f32>::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::full([1, 1, 1, 3], 1.0);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn positive_input_is_identity() {
        let x = Tensor::<f32>::from_fn([1, 2, 2, 2], |i| 1.0 + i[1] as f32 + i[3] as f32);
        assert_eq!(relu_forward(&x), x);
    }

    #[test]
    fn gradient_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::from_fn([2, 2, 3, 3], |_| {
            let v: f64 = rng.random_range(1e-3..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let r = Tensor::<f64>::from_fn(x.shape(), |_| rng.random_range(-1.0..1.0));
        let analytic = relu_backward(&x, &r).unwrap();
        let numeric = numeric_gradient(x.data(), 1e-5, |v| {
            let y = relu_forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap());
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        });
        assert!(max_rel_error(analytic.data(), &numeric) < 1e-4);
    }
}
