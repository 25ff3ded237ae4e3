use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    /// Weight kept by the running statistics on each update.
    pub momentum: T,
}

impl<T: Element> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: T::of(1e-5),
            momentum: T::of(0.9),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Train-mode forward that also folds the batch statistics into the
    /// running estimates.
    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (out, cache) = batch_norm_train(input, &self.gamma, &self.beta, self.epsilon)?;
        self.update_running(&cache);
        Ok((out, cache))
    }

    pub fn forward_infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        batch_norm_infer(
            input,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            self.epsilon,
        )
    }

    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        let m = self.momentum;
        let keep = T::one() - m;
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + keep * cache.mean[c];
            self.running_var[c] = m * self.running_var[c] + keep * cache.var[c];
        }
    }
}

/// Batch statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub mean: Vec<T>,
    /// Biased (1/M) batch variance.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    pub normalized: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

fn check_channels<T: Element>(input: &Tensor<T>, channels: usize) -> Result<()> {
    if input.channels() != channels {
        return Err(Error::Shape(format!(
            "batch norm over {} channels given input with {}",
            channels,
            input.channels()
        )));
    }
    Ok(())
}

pub fn batch_norm_train<T: Element>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    epsilon: T,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let c = gamma.len();
    check_channels(input, c)?;
    let [n, _, h, w] = input.shape();
    let plane = h * w;
    let count = n * plane;
    if count < 2 {
        return Err(Error::Layer(
            "train-mode batch norm needs at least two values per channel (N·H·W ≥ 2)".into(),
        ));
    }
    let inv_count = T::one() / T::of(count as f64);
    let data = input.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for i in 0..n {
            let base = (i * c + ch) * plane;
            s = s + data[base..base + plane].iter().copied().sum::<T>();
        }
        let mu = s * inv_count;
        let mut sq = T::zero();
        for i in 0..n {
            let base = (i * c + ch) * plane;
            sq = sq + data[base..base + plane].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
        }
        mean[ch] = mu;
        var[ch] = sq * inv_count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + epsilon).sqrt()).collect();
    let mut normalized = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    {
        let xn = normalized.data_mut();
        let y = out.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
                for j in base..base + plane {
                    let v = (data[j] - mu) * is;
                    xn[j] = v;
                    y[j] = g * v + b;
                }
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            mean,
            var,
            inv_std,
            normalized,
        },
    ))
}

/// Inference mode: depends only on the running statistics.
pub fn batch_norm_infer<T: Element>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    epsilon: T,
) -> Result<Tensor<T>> {
    let c = gamma.len();
    check_channels(input, c)?;
    let [n, _, h, w] = input.shape();
    let plane = h * w;
    let mut out = input.clone();
    let y = out.data_mut();
    for ch in 0..c {
        let scale = gamma[ch] / (running_var[ch] + epsilon).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        for i in 0..n {
            let base = (i * c + ch) * plane;
            y[base..base + plane].iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    Ok(out)
}

/// Backward of train mode, including the terms through the batch statistics.
pub fn batch_norm_backward<T: Element>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    grad_output: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let c = gamma.len();
    if grad_output.shape() != cache.normalized.shape() {
        return Err(Error::Shape(
            "batch norm upstream gradient shape differs from output".into(),
        ));
    }
    let [n, _, h, w] = grad_output.shape();
    let plane = h * w;
    let m = T::of((n * plane) as f64);
    let dy = grad_output.data();
    let xn = cache.normalized.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            let mut sg = T::zero();
            let mut sb = T::zero();
            for j in base..base + plane {
                sg = sg + dy[j] * xn[j];
                sb = sb + dy[j];
            }
            dgamma[ch] = dgamma[ch] + sg;
            dbeta[ch] = dbeta[ch] + sb;
        }
    }
    let mut dx = Tensor::zeros(grad_output.shape());
    let out = dx.data_mut();
    for ch in 0..c {
        let k = gamma[ch] * cache.inv_std[ch] / m;
        let (sb, sg) = (dbeta[ch], dgamma[ch]);
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for j in base..base + plane {
                out[j] = k * (m * dy[j] - sb - xn[j] * sg);
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    })
}

/// Backward of inference mode (statistics are constants).
pub fn batch_norm_infer_backward<T: Element>(
    input: &Tensor<T>,
    gamma: &[T],
    running_mean: &[T],
    running_var: &[T],
    epsilon: T,
    grad_output: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let c = gamma.len();
    check_channels(input, c)?;
    let [n, _, h, w] = input.shape();
    let plane = h * w;
    let x = input.data();
    let dy = grad_output.data();
    let mut dx = Tensor::zeros(input.shape());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let is = T::one() / (running_var[ch] + epsilon).sqrt();
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for j in base..base + plane {
                dgamma[ch] = dgamma[ch] + dy[j] * (x[j] - running_mean[ch]) * is;
                dbeta[ch] = dbeta[ch] + dy[j];
                dx.data_mut()[j] = dy[j] * gamma[ch] * is;
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    })
}
