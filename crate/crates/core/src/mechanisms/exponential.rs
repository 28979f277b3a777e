use rand::Rng;

use crate::embeddings::{Neighbor, TokenId};

/// Selection probabilities `exp(-epsilon * d_i / 2) / sum_j exp(-epsilon * d_j / 2)`.
///
/// Computed with the minimum distance subtracted first, so the largest
/// unnormalized weight is exactly 1.
pub fn exponential_probabilities(distances: &[f64], epsilon: f64) -> Vec<f64> {
    let weights = shifted_weights(distances, epsilon);
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn shifted_weights(distances: &[f64], epsilon: f64) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    distances
        .iter()
        .map(|&d| {
            let x = epsilon * (d - min) / 2.0;
            if x == 0.0 {
                1.0
            } else {
                (-x).exp()
            }
        })
        .collect()
}

/// Draws an index with the exponential-mechanism law over `distances`.
pub fn sample_index<R: Rng + ?Sized>(distances: &[f64], epsilon: f64, rng: &mut R) -> usize {
    assert!(
        !distances.is_empty(),
        "exponential mechanism needs at least one candidate"
    );
    let weights = shifted_weights(distances, epsilon);
    let total: f64 = weights.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    // Rounding left `target` at or past the final partial sum.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws one candidate token with probability proportional to `exp(-epsilon * d / 2)`.
pub fn exponential_sample<R: Rng + ?Sized>(candidates: &[Neighbor], epsilon: f64, rng: &mut R) -> TokenId {
    let distances: Vec<f64> = candidates.iter().map(|c| c.distance).collect();
    candidates[sample_index(&distances, epsilon, rng)].id
}
