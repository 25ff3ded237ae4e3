use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, Element, Layout, Tensor};

/// Static shape of a square-kernel 2D convolution with symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// "Same" padding for odd kernels.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self::new(in_channels, out_channels, kernel, stride, kernel / 2)
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    /// Rows of the lowered patch matrix: C_in·k².
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Layer("convolution stride must be positive".into()));
        }
        if self.kernel == 0 {
            return Err(Error::Layer("convolution kernel must be positive".into()));
        }
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return Err(Error::Layer(format!(
                "{}x{} kernel does not fit a padded {}x{} input",
                self.kernel, self.kernel, ph, pw
            )));
        }
        Ok((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Owned convolution parameters for standalone use of the layer.
#[derive(Debug, Clone)]
pub struct ConvParams<T> {
    pub geometry: ConvGeometry,
    /// (C_out, C_in, k, k), row-major.
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Element> ConvParams<T> {
    pub fn zeros(geometry: ConvGeometry, with_bias: bool) -> Self {
        ConvParams {
            geometry,
            weights: vec![T::zero(); geometry.weight_len()],
            bias: with_bias.then(|| vec![T::zero(); geometry.out_channels]),
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(input, &self.weights, self.bias.as_deref(), &self.geometry)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<ConvGrads<T>> {
        conv2d_backward(
            input,
            &self.weights,
            &self.geometry,
            grad_output,
            true,
            self.bias.is_some(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

fn check_input<T: Element>(input: &Tensor<T>, g: &ConvGeometry) -> Result<(usize, usize)> {
    if input.channels() != g.in_channels {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            g.in_channels,
            input.channels()
        )));
    }
    g.output_hw(input.height(), input.width())
}

/// Lowers one sample (C,H,W) into a (C·k², Ho·Wo) patch matrix.
fn im2col<T: Element>(x: &[T], h: usize, w: usize, g: &ConvGeometry, ho: usize, wo: usize, cols: &mut [T]) {
    let k = g.kernel;
    let hw_out = ho * wo;
    for c in 0..g.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatters a patch-matrix gradient back onto a (C,H,W) sample, accumulating.
fn col2im<T: Element>(cols: &[T], h: usize, w: usize, g: &ConvGeometry, ho: usize, wo: usize, dx: &mut [T]) {
    let k = g.kernel;
    let hw_out = ho * wo;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding (no kernel flip).
pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    weights: &[T],
    bias: Option<&[T]>,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    let (ho, wo) = check_input(input, g)?;
    if weights.len() != g.weight_len() {
        return Err(Error::Shape(format!(
            "conv weights have {} values, geometry needs {}",
            weights.len(),
            g.weight_len()
        )));
    }
    if let Some(b) = bias {
        if b.len() != g.out_channels {
            return Err(Error::Shape("conv bias length differs from output channels".into()));
        }
    }
    let n = input.batch();
    let (h, w) = (input.height(), input.width());
    let hw_out = ho * wo;
    let kdim = g.patch_len();
    let mut out = Tensor::zeros([n, g.out_channels, ho, wo]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kdim * hw_out]
    };
    for i in 0..n {
        let x = input.sample(i);
        let patches: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, h, w, g, ho, wo, &mut cols);
            &cols
        };
        let y = out.sample_mut(i);
        matmul(
            g.out_channels,
            kdim,
            hw_out,
            weights,
            Layout::Normal,
            patches,
            Layout::Normal,
            y,
            false,
        );
        if let Some(b) = bias {
            for (co, chunk) in y.chunks_mut(hw_out).enumerate() {
                chunk.iter_mut().for_each(|v| *v = *v + b[co]);
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`]. Weight and bias gradients are skipped
/// when not requested (frozen parameters).
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weights: &[T],
    g: &ConvGeometry,
    grad_output: &Tensor<T>,
    want_weights: bool,
    want_bias: bool,
) -> Result<ConvGrads<T>> {
    let (ho, wo) = check_input(input, g)?;
    let n = input.batch();
    if grad_output.shape() != [n, g.out_channels, ho, wo] {
        return Err(Error::Shape(format!(
            "conv upstream gradient {:?} does not match output {:?}",
            grad_output.shape(),
            [n, g.out_channels, ho, wo]
        )));
    }
    let (h, w) = (input.height(), input.width());
    let hw_out = ho * wo;
    let kdim = g.patch_len();
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = want_weights.then(|| vec![T::zero(); g.weight_len()]);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { kdim * hw_out }];
    let mut dcols = vec![T::zero(); kdim * hw_out];
    for i in 0..n {
        let dy = grad_output.sample(i);
        if let Some(dw) = dw.as_mut() {
            let x = input.sample(i);
            let patches: &[T] = if g.is_pointwise() {
                x
            } else {
                im2col(x, h, w, g, ho, wo, &mut cols);
                &cols
            };
            matmul(
                g.out_channels,
                hw_out,
                kdim,
                dy,
                Layout::Normal,
                patches,
                Layout::Transposed,
                dw,
                true,
            );
        }
        if g.is_pointwise() {
            matmul(
                kdim,
                g.out_channels,
                hw_out,
                weights,
                Layout::Transposed,
                dy,
                Layout::Normal,
                dx.sample_mut(i),
                false,
            );
        } else {
            matmul(
                kdim,
                g.out_channels,
                hw_out,
                weights,
                Layout::Transposed,
                dy,
                Layout::Normal,
                &mut dcols,
                false,
            );
            col2im(&dcols, h, w, g, ho, wo, dx.sample_mut(i));
        }
    }
    let db = want_bias.then(|| {
        let mut db = vec![T::zero(); g.out_channels];
        for i in 0..n {
            for (co, chunk) in grad_output.sample(i).chunks(hw_out).enumerate() {
                db[co] = db[co] + chunk.iter().copied().sum::<T>();
            }
        }
        db
    });
    Ok(ConvGrads {
        input: dx,
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

    /// Naive seven-loop reference kernel.
    fn reference(input: &Tensor<f64>, w: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Tensor<f64> {
        let (ho, wo) = g.output_hw(input.height(), input.width()).unwrap();
        let k = g.kernel;
        Tensor::from_fn([input.batch(), g.out_channels, ho, wo], |[n, co, oy, ox]| {
            let mut acc = bias.map_or(0.0, |b| b[co]);
            for ci in 0..g.in_channels {
                for ki in 0..k {
                    for kj in 0..k {
                        let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < input.height() && (ix as usize) < input.width() {
                            acc += w[((co * g.in_channels + ci) * k + ki) * k + kj]
                                * input.at([n, ci, iy as usize, ix as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn all_ones_counts_overlaps() {
        let g = ConvGeometry::new(1, 1, 3, 1, 1);
        let x = Tensor::<f32>::full([1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &[1.0; 9], None, &g).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn strided_identity_samples_grid() {
        let g = ConvGeometry::new(1, 1, 1, 2, 0);
        let x = Tensor::<f32>::from_fn([1, 1, 4, 4], |[_, _, y, x]| (y * 4 + x) as f32);
        let y = conv2d_forward(&x, &[1.0], None, &g).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn pointwise_identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([2, 3, 5, 4], &mut rng);
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let y = conv2d_forward(&x, &w, None, &ConvGeometry::new(3, 3, 1, 1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_reference_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(cin, cout, k, s, p, h, w) in &[
            (3, 4, 3, 1, 1, 7, 6),
            (2, 5, 3, 2, 1, 8, 8),
            (4, 3, 1, 2, 0, 5, 5),
            (4, 3, 1, 1, 0, 5, 3),
            (1, 2, 5, 1, 2, 6, 6),
            (2, 2, 3, 3, 0, 9, 7),
        ] {
            let g = ConvGeometry::new(cin, cout, k, s, p);
            let x = random([2, cin, h, w], &mut rng);
            let wts: Vec<f64> = (0..g.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = conv2d_forward(&x, &wts, Some(&b), &g).unwrap();
            let slow = reference(&x, &wts, Some(&b), &g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b} for {g:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let w = vec![0.0; 18];
        assert!(conv2d_forward(&x, &w, None, &ConvGeometry::new(3, 1, 3, 1, 1)).is_err());
        assert!(conv2d_forward(&x, &w, None, &ConvGeometry::new(2, 1, 3, 0, 1)).is_err());
        let w5 = vec![0.0; 2 * 25];
        assert!(conv2d_forward(&x, &w5, None, &ConvGeometry::new(2, 1, 5, 1, 0)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(s, p) in &[(1, 1), (2, 1), (1, 0)] {
            let g = ConvGeometry::new(3, 4, 3, s, p);
            let x = random([2, 3, 8, 8], &mut rng);
            let w: Vec<f64> = (0..g.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = conv2d_forward(&x, &w, Some(&b), &g).unwrap();
            let r = random(y.shape(), &mut rng);
            let loss = |x: &Tensor<f64>, w: &[f64], b: &[f64]| -> f64 {
                let y = conv2d_forward(x, w, Some(b), &g).unwrap();
                y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
            };
            let grads = conv2d_backward(&x, &w, &g, &r, true, true).unwrap();

            let nx = numeric_gradient(x.data(), 1e-5, |v| {
                loss(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &w, &b)
            });
            assert!(max_rel_error(grads.input.data(), &nx) < 1e-4);
            let nw = numeric_gradient(&w, 1e-5, |v| loss(&x, v, &b));
            assert!(max_rel_error(grads.weights.as_ref().unwrap(), &nw) < 1e-4);
            let nb = numeric_gradient(&b, 1e-5, |v| loss(&x, &w, v));
            assert!(max_rel_error(grads.bias.as_ref().unwrap(), &nb) < 1e-4);
        }
    }
}
