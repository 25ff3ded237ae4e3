use crate::error::{Error, Result};
use crate::tensor::{matmul, Element, Layout, Tensor};

#[derive(Debug, Clone)]
pub struct FcParams<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// (D_out, D_in), row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Element> FcParams<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        FcParams {
            in_features,
            out_features,
            weights: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        fully_connected_forward(input, &self.weights, &self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weights: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

/// `y = W·x + b` on each flattened sample; output shape (N, D_out, 1, 1).
pub fn fully_connected_forward<T: Element>(input: &Tensor<T>, weights: &[T], bias: &[T]) -> Result<Tensor<T>> {
    let n = input.batch();
    let d_in = input.sample_len();
    let d_out = bias.len();
    if weights.len() != d_in * d_out {
        return Err(Error::Shape(format!(
            "fully connected layer expects {} inputs, got {}",
            weights.len() / d_out.max(1),
            d_in
        )));
    }
    let mut out = vec![T::zero(); n * d_out];
    for row in out.chunks_mut(d_out) {
        row.copy_from_slice(bias);
    }
    matmul(
        n,
        d_in,
        d_out,
        input.data(),
        Layout::Normal,
        weights,
        Layout::Transposed,
        &mut out,
        true,
    );
    Tensor::from_vec([n, d_out, 1, 1], out)
}

pub fn fully_connected_backward<T: Element>(
    input: &Tensor<T>,
    weights: &[T],
    grad_output: &Tensor<T>,
    want_params: bool,
) -> Result<FcGrads<T>> {
    let n = input.batch();
    let d_in = input.sample_len();
    let d_out = grad_output.sample_len();
    if grad_output.batch() != n || weights.len() != d_in * d_out {
        return Err(Error::Shape("fully connected gradient shapes disagree".into()));
    }
    let dy = grad_output.data();
    let mut dx = vec![T::zero(); n * d_in];
    matmul(
        n,
        d_out,
        d_in,
        dy,
        Layout::Normal,
        weights,
        Layout::Normal,
        &mut dx,
        false,
    );
    let (dw, db) = if want_params {
        let mut dw = vec![T::zero(); d_out * d_in];
        matmul(
            d_out,
            n,
            d_in,
            dy,
            Layout::Transposed,
            input.data(),
            Layout::Normal,
            &mut dw,
            false,
        );
        let mut db = vec![T::zero(); d_out];
        for row in dy.chunks(d_out) {
            db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
        }
        (Some(dw), Some(db))
    } else {
        (None, None)
    };
    Ok(FcGrads {
        input: Tensor::from_vec(input.shape(), dx)?,
        weights: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_rel_error, numeric_gradient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_bias_only() {
        let x = Tensor::<f64>::from_vec([1, 3, 1, 1], vec![0.5, -2.0, 7.0]).unwrap();
        let mut eye = vec![0.0; 9];
        (0..3).for_each(|i| eye[i * 3 + i] = 1.0);
        assert_eq!(fully_connected_forward(&x, &eye, &[0.0; 3]).unwrap().data(), x.data());
        let y = fully_connected_forward(&x, &[0.0; 6], &[4.0, -1.0]).unwrap();
        assert_eq!(y.data(), &[4.0, -1.0]);
        assert!(fully_connected_forward(&x, &[0.0; 8], &[0.0; 2]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::from_fn([3, 2, 2, 1], |_| rng.random_range(-1.0..1.0));
        let w: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = Tensor::<f64>::from_fn([3, 5, 1, 1], |_| rng.random_range(-1.0..1.0));
        let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
            let t = Tensor::from_vec([3, 2, 2, 1], x.to_vec()).unwrap();
            let y = fully_connected_forward(&t, w, b).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let g = fully_connected_backward(&x, &w, &r, true).unwrap();
        assert!(max_rel_error(g.input.data(), &numeric_gradient(x.data(), 1e-5, |v| loss(v, &w, &b))) < 1e-4);
        assert!(
            max_rel_error(
                g.weights.as_ref().unwrap(),
                &numeric_gradient(&w, 1e-5, |v| loss(x.data(), v, &b))
            ) < 1e-4
        );
        assert!(
            max_rel_error(
                g.bias.as_ref().unwrap(),
                &numeric_gradient(&b, 1e-5, |v| loss(x.data(), &w, v))
            ) < 1e-4
        );
    }
}
