//! Multivariate Laplacian noise with density proportional to `exp(-eta * |v|)`.
//!
//! Samples are drawn as `r * u` where the radius `r ~ Gamma(dim, 1/eta)` and
//! `u` is uniform on the unit sphere (a standard Gaussian vector scaled to unit
//! length).

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    pub dim: usize,
    pub eta: f64,
}

impl NoiseParams {
    pub fn new(dim: usize, eta: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("noise dimension must be at least 1".into()));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta must be positive and finite, got {eta}"
            )));
        }
        Ok(Self { dim, eta })
    }

    /// Expected Euclidean norm of a sample, `dim / eta`.
    pub fn mean_norm(&self) -> f64 {
        self.dim as f64 / self.eta
    }
}

/// Reusable sampler for one `(dim, eta)` pair.
#[derive(Clone, Debug)]
pub struct NoiseSampler {
    params: NoiseParams,
    radius: Gamma<f64>,
}

impl NoiseSampler {
    pub fn new(params: NoiseParams) -> Self {
        // Unit-scale Gamma, divided by eta afterwards, so that samples at
        // different eta from the same stream are rescalings of each other.
        let radius = Gamma::new(params.dim as f64, 1.0).expect("shape >= 1");
        Self { params, radius }
    }

    pub fn params(&self) -> NoiseParams {
        self.params
    }

    /// Writes one noise vector into `out` (length `dim`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.params.dim);
        let r = self.radius.sample(rng) / self.params.eta;
        loop {
            let mut sq = 0.0;
            for v in out.iter_mut() {
                let g: f64 = StandardNormal.sample(rng);
                *v = g;
                sq += g * g;
            }
            if sq > 0.0 {
                let scale = r / sq.sqrt();
                out.iter_mut().for_each(|v| *v *= scale);
                return;
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.params.dim];
        self.sample_into(rng, &mut out);
        out
    }
}

/// One noise vector for `params`.
pub fn sample_noise<R: Rng + ?Sized>(params: NoiseParams, rng: &mut R) -> Vec<f64> {
    NoiseSampler::new(params).sample(rng)
}

/// CDF of the sample norm: the regularized lower incomplete gamma `P(dim, eta * r)`.
pub fn radial_cdf(params: NoiseParams, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if r.is_infinite() {
        return 1.0;
    }
    gamma_lr(params.dim as f64, params.eta * r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn invalid_params() {
        assert!(NoiseParams::new(0, 1.0).is_err());
        assert!(NoiseParams::new(2, 0.0).is_err());
        assert!(NoiseParams::new(2, f64::INFINITY).is_err());
        assert!(NoiseParams::new(2, -1.0).is_err());
    }

    #[test]
    fn radial_cdf_closed_forms() {
        let p1 = NoiseParams::new(1, 1.0).unwrap();
        assert_eq!(radial_cdf(p1, f64::INFINITY), 1.0);
        assert!((radial_cdf(p1, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((radial_cdf(p1, 1.0) - 0.63212).abs() < 1e-5);
        // Erlang(2, 1): 1 - e^{-r}(1 + r)
        let p2 = NoiseParams::new(2, 1.0).unwrap();
        assert!((radial_cdf(p2, 1.0) - (1.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-12);
        assert!((radial_cdf(p2, 1.0) - 0.26424).abs() < 1e-5);
        assert!(radial_cdf(p2, 1e6) > 1.0 - 1e-12);
        assert_eq!(radial_cdf(p2, 0.0), 0.0);
    }

    #[test]
    fn vanishing_noise() {
        let p = NoiseParams::new(2, 1e9).unwrap();
        let mut rng = RngState::new(1, 0);
        for _ in 0..1000 {
            let v = sample_noise(p, &mut rng);
            assert!(v.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-7);
        }
    }

    #[test]
    fn reproducible_streams() {
        let s = NoiseSampler::new(NoiseParams::new(5, 2.0).unwrap());
        let a: Vec<Vec<f64>> = {
            let mut rng = RngState::new(9, 4);
            (0..10).map(|_| s.sample(&mut rng)).collect()
        };
        let b: Vec<Vec<f64>> = {
            let mut rng = RngState::new(9, 4);
            (0..10).map(|_| s.sample(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn eta_rescales_the_same_draw() {
        let mut r1 = RngState::new(3, 0);
        let mut r2 = RngState::new(3, 0);
        let a = sample_noise(NoiseParams::new(4, 1.0).unwrap(), &mut r1);
        let b = sample_noise(NoiseParams::new(4, 4.0).unwrap(), &mut r2);
        for (x, y) in a.iter().zip(&b) {
            assert!((x / 4.0 - y).abs() < 1e-12);
        }
    }
}
