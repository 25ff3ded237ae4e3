use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean over each H×W plane, giving (N, C, 1, 1).
pub fn global_avg_pool_forward<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if h == 0 || w == 0 {
        return Err(Error::Shape("global average pool over an empty plane".into()));
    }
    let plane = h * w;
    let scale = T::one() / T::of(plane as f64);
    let data = input
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * scale)
        .collect();
    Tensor::from_vec([n, c, 1, 1], data)
}

pub fn global_avg_pool_backward<T: Element>(input_shape: [usize; 4], grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    if grad_output.shape() != [n, c, 1, 1] {
        return Err(Error::Shape("pool upstream gradient must be (N, C, 1, 1)".into()));
    }
    let scale = T::one() / T::of((h * w) as f64);
    let mut dx = Vec::with_capacity(n * c * h * w);
    for &g in grad_output.data() {
        dx.extend(std::iter::repeat_n(g * scale, h * w));
    }
    Tensor::from_vec(input_shape, dx)
}
