use dcvsr_web::{coverage_values, gamma_curve_values, suppression_values};

#[test]
fn higher_rho_decays_faster() {
    let lin = gamma_curve_values(10, 0.002, 700.0, 1.0).unwrap();
    let fast = gamma_curve_values(10, 0.002, 700.0, 3.0).unwrap();
    for (a, b) in lin.chunks(2).zip(fast.chunks(2)).skip(1) {
        assert_eq!(a[0], b[0]);
        assert!(b[1] <= a[1]);
    }
}

#[test]
fn weights_are_a_distribution_for_any_gamma() {
    for gamma in [0.0, 0.3, 1.0, 5.0] {
        let r = suppression_values(24, 8, gamma, 11).unwrap();
        assert_eq!(r.len(), 3 + 24);
        assert!(r[0] >= 1.0);
        assert!(r[1] <= r[2] + 1e-12);
        let s: f64 = r[3..].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    assert!(suppression_values(0, 8, 0.0, 0).is_err());
}

#[test]
fn single_tile_coverage_is_the_mask() {
    let c = coverage_values(8, 8, 8, 8, 0.25).unwrap();
    let centre = c[3 * 8 + 3];
    assert!(c.iter().all(|&v| v <= centre + 1e-12));
    // Symmetric about the centre.
    assert!((c[0] - c[63]).abs() < 1e-12);
}
