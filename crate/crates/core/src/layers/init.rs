use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::conv::ConvParams;
use super::linear::FcParams;
use crate::tensor::Element;

/// Standard deviation `sqrt(2 / fan_in)` of the MSR (He) initialization.
pub fn msr_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

pub fn normal_fill<T: Element, R: Rng + ?Sized>(values: &mut [T], std: f64, rng: &mut R) {
    let dist = Normal::new(0.0, std).expect("finite standard deviation");
    for v in values {
        *v = T::of(dist.sample(rng));
    }
}

/// Parameter sets that the MSR initializer knows how to fill.
pub trait MsrInit {
    fn msr_init<R: Rng + ?Sized>(&mut self, rng: &mut R);
}

impl<T: Element> MsrInit for ConvParams<T> {
    fn msr_init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        normal_fill(&mut self.weights, msr_std(self.geometry.patch_len()), rng);
        if let Some(b) = self.bias.as_mut() {
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

impl<T: Element> MsrInit for FcParams<T> {
    fn msr_init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        normal_fill(&mut self.weights, msr_std(self.in_features), rng);
        self.bias.iter_mut().for_each(|v| *v = T::zero());
    }
}

/// Seeded MSR initialization: weights ~ N(0, 2/fan_in), biases zero.
pub fn msr_initialize<P: MsrInit>(params: &mut P, seed: u64) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    params.msr_init(&mut rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ConvGeometry;

    #[test]
    fn conv_std_matches_fan_in() {
        // 128·128·9 = 147,456 draws.
        let mut p = ConvParams::<f64>::zeros(ConvGeometry::same(128, 128, 3, 1), true);
        msr_initialize(&mut p, 42);
        let target = (2.0f64 / 1152.0).sqrt();
        assert!((target - 0.04167).abs() < 1e-5);
        let n = p.weights.len() as f64;
        let mean = p.weights.iter().sum::<f64>() / n;
        let std = (p.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / target - 1.0).abs() < 0.02, "{std} vs {target}");
        assert!(p.bias.as_ref().unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let mut a = FcParams::<f32>::zeros(64, 10);
        let mut b = FcParams::<f32>::zeros(64, 10);
        msr_initialize(&mut a, 7);
        msr_initialize(&mut b, 7);
        assert_eq!(a.weights, b.weights);
        assert!(a.bias.iter().all(|&v| v == 0.0));
        let mut c = FcParams::<f32>::zeros(64, 10);
        msr_initialize(&mut c, 8);
        assert_ne!(a.weights, c.weights);
    }
}
