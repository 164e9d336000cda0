#![allow(dead_code)]

//! Independent reference implementations used by the integration tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All-pairs histogram: bin by scanning edges `k * bw` on `|d|`.
pub fn brute_force_histogram(s1: &[f64], s2: &[f64], window: f64, bw: f64) -> Vec<u64> {
    let k = (window / bw).round() as usize;
    let mut counts = vec![0u64; 2 * k];
    for &t1 in s1 {
        for &t2 in s2 {
            let d = t2 - t1;
            if d.abs() > window {
                continue;
            }
            let mut m = 0usize;
            while m + 1 < k && ((m + 1) as f64) * bw <= d.abs() {
                m += 1;
            }
            if d >= 0.0 {
                counts[k + m] += 1;
            } else {
                counts[k - m - 1] += 1;
            }
        }
    }
    counts
}

/// Share of azimuths in `(0, pi)` whose ray meets the wall beyond the
/// critical angle, by midpoint sampling of `sin(theta)` from the chord
/// geometry.
pub fn sampled_confinement(r_over_a: f64, n: f64, samples: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let hits = (0..samples)
        .filter(|&i| {
            let phi = pi * (i as f64 + 0.5) / samples as f64;
            let chord = (1.0 + r_over_a * r_over_a - 2.0 * r_over_a * phi.cos()).sqrt();
            r_over_a * phi.sin() / chord > 1.0 / n
        })
        .count();
    hits as f64 / samples as f64
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Sorted, distinct uniform times on `[0, duration)`.
pub fn random_stream(rng: &mut ChaCha8Rng, n: usize, duration: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * duration).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
