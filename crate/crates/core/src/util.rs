//! Shared numeric helpers and deterministic seeding.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Every stochastic component derives its stream from a root seed plus a
/// purpose tag, so each piece is reproducible in isolation and independent
/// of evaluation order.
pub fn mix_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed;
    for &t in tags {
        z = splitmix64(z ^ splitmix64(t));
    }
    splitmix64(z)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha keeps the streams platform-independent; `StdRng` makes no such
/// promise across rand versions.
pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// log(sum exp(z)) with the usual max shift.
pub fn logsumexp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Returns `v / ‖v‖`; the zero vector is returned unchanged.
pub fn normalized(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = l2_norm(v);
    if n == 0.0 {
        v.to_owned()
    } else {
        v.mapv(|x| x / n)
    }
}

/// Normalizes every row of `m` in place to unit length.
pub fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row.mapv_inplace(|x| x / n);
        }
    }
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn logsumexp_matches_direct_sum_on_small_values() {
        let z = [0.1f64, -0.3, 0.7];
        let direct = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((logsumexp(&z) - direct).abs() < 1e-14);
    }

    #[test]
    fn logsumexp_survives_large_logits() {
        let z = [1000.0, 999.0];
        let expected = 1000.0 + (1.0 + (-1.0f64).exp()).ln();
        assert!((logsumexp(&z) - expected).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[3.0, -2.0, 0.5, 40.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mix_seed_is_order_sensitive() {
        assert_ne!(mix_seed(7, &[1, 2]), mix_seed(7, &[2, 1]));
        assert_eq!(mix_seed(7, &[1, 2]), mix_seed(7, &[1, 2]));
    }

    #[test]
    fn normalized_handles_zero() {
        let v = array![0.0, 0.0];
        assert_eq!(normalized(v.view()), v);
        let u = normalized(array![3.0, 4.0].view());
        assert!((l2_norm(u.view()) - 1.0).abs() < 1e-15);
    }
}
