//! Gaussian context windows.
//!
//! A window of `L` positions is laid over the sentence around each focal
//! token. Odd windows are centered on the token (`-(L/2)..=L/2`); even windows
//! run `-(L/2 - 1)..=L/2` with the Gaussian centered half a step to the right,
//! so the token and its right neighbor share the peak weight. Near sentence
//! edges the window is clamped and the surviving weights are renormalized.

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StencilWeights {
    /// Offsets relative to the focal position.
    pub offsets: Vec<i64>,
    /// Normalized weights aligned with `offsets`.
    pub weights: Vec<f64>,
    pub sigma: f64,
    pub window: usize,
    /// Gaussian center: 0 for odd windows, 0.5 for even ones.
    pub center: f64,
}

impl StencilWeights {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// `(offset, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.offsets.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Offsets covered by a full window of `window` positions.
pub fn window_offsets(window: usize) -> std::ops::RangeInclusive<i64> {
    assert!(window >= 1, "window must be positive");
    let half = (window / 2) as i64;
    if window % 2 == 1 {
        -half..=half
    } else {
        -(half - 1)..=half
    }
}

fn center(window: usize) -> f64 {
    if window % 2 == 1 {
        0.0
    } else {
        0.5
    }
}

fn raw_weight(offset: i64, center: f64, sigma: f64) -> f64 {
    let x = offset as f64 - center;
    (-(x * x) / (2.0 * sigma * sigma)).exp()
}

fn build(offsets: Vec<i64>, window: usize, sigma: f64) -> StencilWeights {
    let c = center(window);
    let raw: Vec<f64> = offsets.iter().map(|&o| raw_weight(o, c, sigma)).collect();
    let total: f64 = raw.iter().sum();
    let weights = if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        // Every weight underflowed: fall back to the peak position(s).
        let best = offsets
            .iter()
            .map(|&o| (o as f64 - c).abs())
            .fold(f64::INFINITY, f64::min);
        let peak: Vec<f64> = offsets
            .iter()
            .map(|&o| if (o as f64 - c).abs() == best { 1.0 } else { 0.0 })
            .collect();
        let n: f64 = peak.iter().sum();
        peak.into_iter().map(|w| w / n).collect()
    };
    StencilWeights {
        offsets,
        weights,
        sigma,
        window,
        center: c,
    }
}

/// The full, unclamped window.
pub fn stencil_weights(window: usize, sigma: f64) -> StencilWeights {
    assert!(sigma > 0.0, "sigma must be positive");
    build(window_offsets(window).collect(), window, sigma)
}

/// The window around position `i` of an `n`-token sentence, clamped to the
/// sentence and renormalized.
pub fn window_weights_at(i: usize, n: usize, window: usize, sigma: f64) -> StencilWeights {
    assert!(i < n, "position {i} outside sentence of length {n}");
    assert!(sigma > 0.0, "sigma must be positive");
    let offsets = window_offsets(window)
        .filter(|&o| {
            let j = i as i64 + o;
            j >= 0 && j < n as i64
        })
        .collect();
    build(offsets, window, sigma)
}

/// Total weight each position donates across all windows of the sentence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContributionProfile {
    pub values: Vec<f64>,
}

impl ContributionProfile {
    /// Positions whose windows all lie fully inside the sentence:
    /// `window <= j <= n - window`.
    pub fn interior(&self, window: usize) -> std::ops::Range<usize> {
        let n = self.values.len();
        if n < window {
            return 0..0;
        }
        window..(n - window + 1).max(window)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Column sums of the `n x n` clamped weight matrix.
pub fn contribution_profile(n: usize, window: usize, sigma: f64) -> ContributionProfile {
    assert!(n >= 1, "sentence must be non-empty");
    let mut values = vec![0.0; n];
    for i in 0..n {
        for (o, w) in window_weights_at(i, n, window, sigma).iter() {
            values[(i as i64 + o) as usize] += w;
        }
    }
    ContributionProfile { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    // Normalized Gaussian evaluated directly from the closed form.
    fn oracle(offsets: &[i64], center: f64, sigma: f64) -> Vec<f64> {
        let raw: Vec<f64> = offsets
            .iter()
            .map(|&o| (-(o as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|r| r / s).collect()
    }

    #[test]
    fn wide_sigma_is_uniform() {
        let s = stencil_weights(3, 1e6);
        assert_eq!(s.offsets, vec![-1, 0, 1]);
        close(&s.weights, &[1.0 / 3.0; 3], 1e-9);
    }

    #[test]
    fn odd_window_values() {
        let s = stencil_weights(3, 1.0);
        close(&s.weights, &[0.27406, 0.45186, 0.27406], 1e-5);
        close(&s.weights, &oracle(&[-1, 0, 1], 0.0, 1.0), 1e-15);
        assert_eq!(s.center, 0.0);
    }

    #[test]
    fn even_window_values() {
        let s = stencil_weights(4, 1.0);
        assert_eq!(s.offsets, vec![-1, 0, 1, 2]);
        close(&s.weights, &[0.13447, 0.36552, 0.36552, 0.13447], 1e-5);
        assert_eq!(s.weights[1], s.weights[2]);
        assert_eq!(s.center, 0.5);
    }

    #[test]
    fn clamped_at_left_edge() {
        let s = window_weights_at(0, 100, 3, 1.0);
        assert_eq!(s.offsets, vec![0, 1]);
        close(&s.weights, &[0.62246, 0.37754], 1e-5);
    }

    #[test]
    fn interior_matches_full_window() {
        assert_eq!(window_weights_at(50, 100, 3, 1.0), stencil_weights(3, 1.0));
    }

    #[test]
    fn single_token_sentence() {
        for window in 1..8 {
            let s = window_weights_at(0, 1, window, 0.7);
            assert_eq!(s.offsets, vec![0]);
            assert_eq!(s.weights, vec![1.0]);
        }
    }

    #[test]
    fn tiny_sigma_concentrates_on_focal_token() {
        let s = stencil_weights(5, 1e-6);
        assert_eq!(s.weights, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let s = stencil_weights(4, 1e-6);
        assert_eq!(s.weights, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn contribution_examples() {
        let p = contribution_profile(100, 5, 1.25);
        for j in 5..=95 {
            assert!((p.values[j] - 1.0).abs() < 1e-9);
        }
        assert_eq!(p.interior(5), 5..96);
        assert_eq!(contribution_profile(1, 5, 1.0).values, vec![1.0]);
        for window in 1..=9 {
            for sigma in [0.5, 1.25] {
                assert!(contribution_profile(100, window, sigma).max() <= 2.0 + 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(n in 1usize..60, window in 1usize..12, sigma in 0.05f64..20.0, frac in 0.0f64..1.0) {
            let i = ((n as f64 * frac) as usize).min(n - 1);
            let s = window_weights_at(i, n, window, sigma);
            let total: f64 = s.weights.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(s.len() <= window);
        }

        #[test]
        fn weights_decay_from_center(window in 1usize..12, sigma in 0.05f64..20.0) {
            let s = stencil_weights(window, sigma);
            let mut pairs: Vec<(f64, f64)> = s.iter().map(|(o, w)| ((o as f64 - s.center).abs(), w)).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                prop_assert!(w[1].1 <= w[0].1);
            }
        }

        #[test]
        fn odd_windows_are_symmetric(half in 0usize..6, sigma in 0.05f64..20.0) {
            let s = stencil_weights(2 * half + 1, sigma);
            let n = s.len();
            for j in 0..n {
                prop_assert_eq!(s.weights[j], s.weights[n - 1 - j]);
            }
        }
    }
}
