//! Ray-optics calculators against sampled geometry.

mod common;

use antibunch::fiber::{
    channeling_efficiency, confinement_efficiency, critical_offset, tir_area_fraction,
};
use antibunch::FiberGeometry;
use rand::Rng;

#[test]
fn confinement_matches_azimuth_sampling() {
    let mut rng = common::rng(10);
    for _ in 0..100 {
        let n = rng.random_range(1.1..2.0);
        let r = rng.random_range(0.0..1.0);
        let got = confinement_efficiency(&FiberGeometry::normalized(n, r).unwrap()).unwrap();
        let want = common::sampled_confinement(r, n, 200_000);
        assert!((got - want).abs() < 1e-3, "n={n} r/a={r}: {got} vs {want}");
    }
}

#[test]
fn channeling_matches_sphere_sampling() {
    // Fibonacci lattice on the sphere; an on-axis dipole's ray is guided
    // when it meets the wall beyond the critical angle, |cos theta| > 1/n.
    let samples = 200_000;
    for n in [1.1, 1.45, 2.0, 3.5] {
        let guided = (0..samples)
            .filter(|&i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / samples as f64;
                z.abs() > 1.0 / n
            })
            .count();
        let want = guided as f64 / samples as f64;
        assert!((channeling_efficiency(n).unwrap() - want).abs() < 1e-4);
    }
}

#[test]
fn tir_area_is_share_of_trapping_positions() {
    let n = 1.45;
    let g = FiberGeometry::normalized(n, 0.0).unwrap();
    let rc = critical_offset(&g).unwrap();
    // Midpoint grid on the unit disc, counting points where rays are trapped.
    let m = 800;
    let (mut inside, mut trapping) = (0usize, 0usize);
    for i in 0..m {
        for j in 0..m {
            let x = -1.0 + (2.0 * i as f64 + 1.0) / m as f64;
            let y = -1.0 + (2.0 * j as f64 + 1.0) / m as f64;
            let r = x.hypot(y);
            if r < 1.0 {
                inside += 1;
                let eta =
                    confinement_efficiency(&FiberGeometry::normalized(n, r).unwrap()).unwrap();
                if eta > 0.0 {
                    trapping += 1;
                }
            }
        }
    }
    let share = trapping as f64 / inside as f64;
    assert!(
        (share - tir_area_fraction(&g).unwrap()).abs() < 5e-3,
        "{share}"
    );
    assert!((rc - 1.0 / n).abs() < 1e-12);
}
