//! Dense N×C×H×W tensors in row-major order.

use std::fmt::{Debug, Display};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element usable by the kernels.
///
/// Implemented for `f32` (training) and `f64` (gradient checking).
pub trait Element: Float + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static {
    const NAME: &'static str;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `C ← α·A·B + β·C` over raw strided buffers.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// How a row-major operand is read by [`matmul`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Normal,
    Transposed,
}

/// Row-major `C (m×n) = op(A) (m×k) · op(B) (k×n)`, accumulating into `c`
/// when `accumulate` is set.
///
/// `a` is stored as `m×k` (Normal) or `k×m` (Transposed); likewise `b`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_layout: Layout,
    b: &[T],
    b_layout: Layout,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "matmul: lhs length");
    assert_eq!(b.len(), k * n, "matmul: rhs length");
    assert_eq!(c.len(), m * n, "matmul: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths are asserted above and `c` is a distinct &mut borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Four-dimensional (N, C, H, W) dense tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements of one sample (C·H·W).
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, c, h, w] = self.shape;
        ((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts element precision, e.g. `f32` parameters into an `f64` copy.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// Copies channels `[start, start + count)` into a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape;
        if start + count > c {
            return Err(Error::Shape(format!(
                "channel range {}..{} out of bounds for {} channels",
                start,
                start + count,
                c
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * count * plane);
        for i in 0..n {
            let base = (i * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Ok(Tensor {
            shape: [n, count, h, w],
            data,
        })
    }
}

/// Stacks tensors along the channel axis, in input order.
pub fn concat_channels<T: Element>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Shape("concat_channels needs at least one input".into()))?;
    let [n, _, h, w] = first.shape;
    for (i, t) in inputs.iter().enumerate() {
        let [tn, _, th, tw] = t.shape;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat input {} has shape {:?}, expected N,H,W = {},{},{}",
                i, t.shape, n, h, w
            )));
        }
    }
    let channels: usize = inputs.iter().map(|t| t.shape[1]).sum();
    let mut data = Vec::with_capacity(n * channels * h * w);
    for i in 0..n {
        for t in inputs {
            data.extend_from_slice(t.sample(i));
        }
    }
    Ok(Tensor {
        shape: [n, channels, h, w],
        data,
    })
}

pub fn add_elementwise<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "add: shapes {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    Ok(Tensor {
        shape: a.shape,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_paper_widths() {
        let a = Tensor::<f32>::zeros([1, 128, 8, 8]);
        let b = Tensor::<f32>::zeros([1, 64, 8, 8]);
        let c = Tensor::<f32>::zeros([1, 128, 8, 8]);
        let out = concat_channels(&[&a, &b, &c]).unwrap();
        assert_eq!(out.shape(), [1, 320, 8, 8]);
    }

    #[test]
    fn concat_single_is_identity() {
        let a = Tensor::<f64>::from_fn([2, 3, 2, 2], |i| (i[0] * 100 + i[1] * 10 + i[2] * 2 + i[3]) as f64);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_copies_index_by_index() {
        let a = Tensor::<f32>::full([2, 3, 4, 4], 1.0);
        let b = Tensor::<f32>::full([2, 5, 4, 4], 2.0);
        let out = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(out.shape(), [2, 8, 4, 4]);
        for n in 0..2 {
            for c in 0..8 {
                for y in 0..4 {
                    for x in 0..4 {
                        let want = if c < 3 { 1.0 } else { 2.0 };
                        assert_eq!(out.at([n, c, y, x]), want);
                    }
                }
            }
        }
    }

    #[test]
    fn concat_rejects_mismatch_with_index() {
        let a = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let b = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let c = Tensor::<f32>::zeros([1, 2, 4, 5]);
        let err = concat_channels(&[&a, &b, &c]).unwrap_err().to_string();
        assert!(err.contains("input 2"), "{err}");
        assert!(concat_channels::<f32>(&[]).is_err());
    }

    #[test]
    fn add_identity_and_ones() {
        let a = Tensor::<f32>::from_fn([1, 2, 2, 2], |i| i[3] as f32 - 0.5);
        let z = Tensor::zeros([1, 2, 2, 2]);
        assert_eq!(add_elementwise(&a, &z).unwrap(), a);
        let ones = Tensor::<f32>::full([1, 2, 2, 2], 1.0);
        let two = add_elementwise(&ones, &ones).unwrap();
        assert!(two.data().iter().all(|&v| v == 2.0));
        assert!(add_elementwise(&a, &Tensor::zeros([1, 2, 2, 1])).is_err());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn matmul_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        matmul(2, 2, 2, &a, Layout::Normal, &b, Layout::Normal, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        matmul(2, 2, 2, &a, Layout::Transposed, &b, Layout::Normal, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        matmul(2, 2, 2, &a, Layout::Normal, &b, Layout::Transposed, &mut c, true);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tensor(shape: [usize; 4]) -> impl Strategy<Value = Tensor<f64>> {
            let len: usize = shape.iter().product();
            prop::collection::vec(-100.0f64..100.0, len).prop_map(move |v| Tensor::from_vec(shape, v).unwrap())
        }

        proptest! {
            #[test]
            fn concat_then_slice_recovers_inputs(
                a in tensor([2, 3, 3, 2]),
                b in tensor([2, 1, 3, 2]),
                c in tensor([2, 4, 3, 2]),
            ) {
                let out = concat_channels(&[&a, &b, &c]).unwrap();
                prop_assert_eq!(out.slice_channels(0, 3).unwrap(), a);
                prop_assert_eq!(out.slice_channels(3, 1).unwrap(), b);
                prop_assert_eq!(out.slice_channels(4, 4).unwrap(), c);
            }

            #[test]
            fn add_commutes_against_scalar_loop(a in tensor([1, 2, 3, 3]), b in tensor([1, 2, 3, 3])) {
                let ab = add_elementwise(&a, &b).unwrap();
                let ba = add_elementwise(&b, &a).unwrap();
                prop_assert_eq!(&ab, &ba);
                for i in 0..a.len() {
                    prop_assert_eq!(ab.data()[i], a.data()[i] + b.data()[i]);
                }
            }

            #[test]
            fn add_associative_in_fixed_order(
                a in tensor([1, 1, 2, 2]), b in tensor([1, 1, 2, 2]), c in tensor([1, 1, 2, 2])
            ) {
                let left = add_elementwise(&add_elementwise(&a, &b).unwrap(), &c).unwrap();
                let again = add_elementwise(&add_elementwise(&a, &b).unwrap(), &c).unwrap();
                prop_assert_eq!(left, again);
            }
        }
    }
}
