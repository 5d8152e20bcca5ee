//! Theoretical success/failure boundary of l1 reconstruction in the
//! (alpha, rho) plane, computed two independent ways.
//!
//! Both characterizations reduce to scalar problems in one auxiliary
//! variable z: a maximization for [`amp_threshold_rho`] and a root-finding
//! problem for [`replica_threshold_alpha`]. They describe the same curve;
//! the test suite checks the agreement numerically.
//!
//! The Gaussian tail is computed from an in-crate erfc so results are bit
//! stable across platforms: a Maclaurin series below x = 1.75 and a modified
//! Lentz continued fraction above, giving about 1e-13 relative accuracy over
//! the range these routines visit.

use serde::Serialize;
use std::f64::consts::PI;

use crate::{Error, Result};

/// One point on the reconstruction threshold curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdPoint {
    pub alpha: f64,
    /// Critical density: reconstruction succeeds below, fails above.
    pub rho_c: f64,
    /// The auxiliary maximizer/root that produced the point.
    pub z_star: f64,
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    debug_assert!(!x.is_nan());
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x < 1.75 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

/// Maclaurin series erf(x) = 2/sqrt(pi) sum (-1)^n x^(2n+1) / (n! (2n+1)).
/// Worst-case cancellation at the 1.75 seam costs about one decimal digit.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut power = x;
    let mut sum = x;
    for n in 1..200 {
        power *= -x2 / n as f64;
        let term = power / (2 * n + 1) as f64;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum * 2.0 / PI.sqrt()
}

/// Modified Lentz evaluation of
/// erfc(x) = exp(-x^2) / (sqrt(pi) * (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))))
/// with partial numerators a_i = i/2 and constant denominators x.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for i in 1..400 {
        let a = i as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (PI.sqrt() * f)
}

/// Upper tail of the standard normal: H(z) = P(X > z) = erfc(z / sqrt(2)) / 2.
pub fn gauss_upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal density phi(z) = exp(-z^2 / 2) / sqrt(2 pi).
pub fn gauss_density(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Second moment of the excess over z: integral from z to infinity of
/// (x - z)^2 phi(x) dx = (1 + z^2) H(z) - z phi(z).
///
/// Strictly decreasing from 1/2 at z = 0 toward 0.
pub fn excess_second_moment(z: f64) -> f64 {
    (1.0 + z * z) * gauss_upper_tail(z) - z * gauss_density(z)
}

/// The objective whose maximum over z > 0 gives rho_c / alpha. Tends to
/// -infinity as z -> 0+ (the denominator vanishes there).
fn amp_objective(alpha: f64, z: f64) -> f64 {
    let q = excess_second_moment(z);
    (1.0 - (2.0 / alpha) * q) / (1.0 + z * z - 2.0 * q)
}

/// Critical density at a given measurement ratio, from the scalar
/// maximization rho_c = alpha * max_{z >= 0} g(z).
///
/// Dense grid over z in [0, 10] with step 1e-3, then golden-section
/// refinement of the bracketing cell to width 1e-10. Grid points where the
/// objective is not finite (z = 0) are skipped; a maximizer on the top end
/// of the scan is reported as an error rather than returned.
pub fn amp_threshold_rho(alpha: f64) -> Result<ThresholdPoint> {
    if !(alpha > 0.01 && alpha < 0.99) {
        return Err(Error::DomainOut {
            name: "alpha",
            value: alpha,
            lo: 0.01,
            hi: 0.99,
        });
    }
    const STEP: f64 = 1e-3;
    const TOP: usize = 10_000;
    let mut best_i = usize::MAX;
    let mut best_g = f64::NEG_INFINITY;
    for i in 0..=TOP {
        let g = amp_objective(alpha, i as f64 * STEP);
        if g.is_finite() && g > best_g {
            best_g = g;
            best_i = i;
        }
    }
    if best_i >= TOP {
        return Err(Error::BoundaryMaximizer { alpha, z: 10.0 });
    }

    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut a = (best_i - 1) as f64 * STEP;
    let mut b = (best_i + 1) as f64 * STEP;
    let mut x1 = b - INVPHI * (b - a);
    let mut x2 = a + INVPHI * (b - a);
    let mut g1 = amp_objective(alpha, x1);
    let mut g2 = amp_objective(alpha, x2);
    while b - a > 1e-10 {
        if g1 < g2 {
            a = x1;
            x1 = x2;
            g1 = g2;
            x2 = a + INVPHI * (b - a);
            g2 = amp_objective(alpha, x2);
        } else {
            b = x2;
            x2 = x1;
            g2 = g1;
            x1 = b - INVPHI * (b - a);
            g1 = amp_objective(alpha, x1);
        }
    }
    let z_star = 0.5 * (a + b);
    let rho_c = alpha * amp_objective(alpha, z_star);
    debug_assert!(rho_c > 0.0 && rho_c < 1.0 && z_star.is_finite());
    Ok(ThresholdPoint {
        alpha,
        rho_c,
        z_star,
    })
}

/// Left side of the scalar equation defining the replica threshold:
/// 2 (1 - rho) (H(z) - phi(z)/z) + rho = 0.
///
/// Strictly increasing in z (derivative 2 (1 - rho) phi(z) / z^2), from
/// -infinity at z -> 0+ to rho at z -> infinity, so it has exactly one root.
fn replica_root_fn(rho: f64, z: f64) -> f64 {
    2.0 * (1.0 - rho) * (gauss_upper_tail(z) - gauss_density(z) / z) + rho
}

/// Measurement ratio at which a given density rho becomes reconstructible:
/// solves the scalar equation for z, then alpha = 2 (1 - rho) H(z) + rho.
///
/// The root is bracketed by a doubling scan of z from 1e-6 to 50 and then
/// bisected until the function value is below 1e-12.
pub fn replica_threshold_alpha(rho: f64) -> Result<ThresholdPoint> {
    if !(rho > 0.001 && rho < 0.999) {
        return Err(Error::DomainOut {
            name: "rho",
            value: rho,
            lo: 0.001,
            hi: 0.999,
        });
    }
    const LO: f64 = 1e-6;
    const HI: f64 = 50.0;
    let f = |z: f64| replica_root_fn(rho, z);

    let mut a = LO;
    let mut fa = f(a);
    if !(fa < 0.0) {
        return Err(Error::NoBracket { rho, lo: LO, hi: HI });
    }
    let mut b = a;
    let mut fb = fa;
    while fb < 0.0 {
        if b >= HI {
            return Err(Error::NoBracket { rho, lo: LO, hi: HI });
        }
        a = b;
        fa = fb;
        b = (b * 2.0).min(HI);
        fb = f(b);
    }
    let _ = fa;

    let mut z_star = None;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm.abs() < 1e-12 {
            z_star = Some(mid);
            break;
        }
        if fm < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if !(a < b) {
            break;
        }
    }
    let z_star = z_star.ok_or(Error::IterationCap { cap: 200 })?;
    let alpha = 2.0 * (1.0 - rho) * gauss_upper_tail(z_star) + rho;
    debug_assert!(alpha > 0.0 && alpha < 1.0);
    Ok(ThresholdPoint {
        alpha,
        rho_c: rho,
        z_star,
    })
}

/// Tabulates [`amp_threshold_rho`] over a set of measurement ratios.
/// The output is sorted by alpha regardless of input order; the first
/// failing point aborts the tabulation with the offending alpha attached.
pub fn threshold_curve(alphas: &[f64]) -> Result<Vec<ThresholdPoint>> {
    let mut points = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        points.push(amp_threshold_rho(alpha).map_err(|e| Error::CurvePoint {
            alpha,
            source: Box::new(e),
        })?);
    }
    points.sort_by(|p, q| p.alpha.partial_cmp(&q.alpha).expect("alphas are finite"));
    Ok(points)
}

/// 19-point grid alpha = 0.05, 0.10, ..., 0.95.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // ------------------------------------------------------------------
    // Independent quadrature oracle: 64-node Gauss-Legendre panels of
    // width 4 spanning [z, 40]. The integrands are entire and the panel
    // count is small, so the result is accurate to near machine precision
    // relative to its own magnitude (all contributions are positive).
    // ------------------------------------------------------------------

    fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
        let mut p0 = 1.0;
        let mut p1 = x;
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        (p1, dp)
    }

    fn gauss_legendre_64() -> (Vec<f64>, Vec<f64>) {
        let n = 64;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_with_derivative(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(n, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    }

    fn panel_quadrature(z: f64, integrand: impl Fn(f64) -> f64) -> f64 {
        let (nodes, weights) = gauss_legendre_64();
        let mut total = 0.0;
        let mut lo = z;
        while lo < 40.0 {
            let hi = lo + 4.0;
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            let mut panel = 0.0;
            for (t, w) in nodes.iter().zip(&weights) {
                panel += w * integrand(mid + half * t);
            }
            total += half * panel;
            lo = hi;
        }
        total
    }

    fn tail_quadrature(z: f64) -> f64 {
        panel_quadrature(z, gauss_density)
    }

    fn rel_close(got: f64, want: f64, tol: f64) -> bool {
        (got - want).abs() <= tol * want.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn quadrature_oracle_self_check() {
        // The full half-line integral is exactly 1/2.
        assert!(rel_close(tail_quadrature(0.0), 0.5, 1e-14));
    }

    #[test]
    fn upper_tail_matches_quadrature() {
        for z in [0.25, 0.5, 1.0, 1.75 * std::f64::consts::SQRT_2, 3.0, 5.0, 8.0] {
            let want = tail_quadrature(z);
            let got = gauss_upper_tail(z);
            assert!(
                rel_close(got, want, 1e-12),
                "H({z}): got {got:e}, quadrature {want:e}"
            );
        }
    }

    #[test]
    fn upper_tail_reference_values() {
        // Textbook values of the standard normal tail.
        assert_eq!(gauss_upper_tail(0.0), 0.5);
        for (z, want) in [
            (1.0, 0.15865525393145707),
            (2.0, 0.022750131948179195),
            (3.0, 1.3498980316300945e-3),
            (5.0, 2.866515718791939e-7),
            (8.0, 6.220960574271786e-16),
        ] {
            let got = gauss_upper_tail(z);
            assert!(rel_close(got, want, 1e-10), "H({z}) = {got:e}, want {want:e}");
        }
    }

    #[test]
    fn erfc_reference_values() {
        for (x, want) in [
            (0.1, 0.8875370839817152),
            (0.5, 0.4795001221869535),
            (1.0, 0.15729920705028513),
            (2.0, 4.677734981047266e-3),
            (3.0, 2.2090496998585445e-5),
            (5.0, 1.5374597944280349e-12),
        ] {
            let got = erfc(x);
            assert!(rel_close(got, want, 1e-10), "erfc({x}) = {got:e}, want {want:e}");
        }
    }

    #[test]
    fn erfc_branches_agree_at_seam() {
        // Both evaluation strategies at the switch point itself.
        let series = 1.0 - erf_series(1.75);
        let fraction = erfc_continued_fraction(1.75);
        assert!(rel_close(series, fraction, 1e-12), "{series:e} vs {fraction:e}");
    }

    #[test]
    fn tail_symmetry_and_monotonicity() {
        let mut prev = f64::INFINITY;
        for i in 0..=44 {
            let z = -3.0 + 0.25 * i as f64;
            let h = gauss_upper_tail(z);
            assert!((h + gauss_upper_tail(-z) - 1.0).abs() < 1e-14);
            assert!(h < prev, "H not strictly decreasing at z = {z}");
            assert!(h > 0.0 && h < 1.0);
            prev = h;
        }
    }

    #[test]
    fn density_reference_values() {
        assert!(rel_close(gauss_density(0.0), 0.3989422804014327, 1e-14));
        assert!(rel_close(gauss_density(1.0), 0.24197072451914337, 1e-13));
        assert_eq!(gauss_density(1.0), gauss_density(-1.0));
    }

    #[test]
    fn excess_second_moment_properties() {
        assert_eq!(excess_second_moment(0.0), 0.5);
        // Independent quadrature of the defining integral.
        for z in [0.3, 1.0, 2.5] {
            let want = panel_quadrature(z, |x| (x - z) * (x - z) * gauss_density(x));
            let got = excess_second_moment(z);
            assert!(
                rel_close(got, want, 1e-12),
                "Q({z}): got {got:e}, quadrature {want:e}"
            );
        }
        let mut prev = 0.5;
        for i in 1..=100 {
            let q = excess_second_moment(0.08 * i as f64);
            assert!(q > 0.0 && q < prev, "Q not decreasing at z = {}", 0.08 * i as f64);
            prev = q;
        }
    }

    #[test]
    fn tail_sits_below_density_over_z() {
        // H(z) < phi(z)/z for z > 0 keeps the root function's small-z limit
        // negative, which the bracketing scan relies on.
        for i in 1..=1000 {
            let z = 0.01 * i as f64;
            assert!(gauss_upper_tail(z) - gauss_density(z) / z < 0.0, "z = {z}");
        }
    }

    #[test]
    fn amp_threshold_reference_point() {
        let p = amp_threshold_rho(0.5).unwrap();
        assert!(
            (p.rho_c - 0.19284483309074035).abs() < 1e-10,
            "rho_c = {:.17}",
            p.rho_c
        );
        assert!(
            (p.z_star - 0.8769009828108882).abs() < 1e-6,
            "z_star = {:.17}",
            p.z_star
        );
        assert_eq!(p.alpha, 0.5);
    }

    #[test]
    fn amp_threshold_local_max_certificate() {
        for alpha in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let p = amp_threshold_rho(alpha).unwrap();
            let g_star = amp_objective(alpha, p.z_star);
            assert!(amp_objective(alpha, p.z_star - 1e-4) <= g_star);
            assert!(amp_objective(alpha, p.z_star + 1e-4) <= g_star);
            assert!(p.rho_c > 0.0 && p.rho_c < 1.0);
            assert!(p.z_star.is_finite() && p.z_star > 0.0);
        }
    }

    #[test]
    fn amp_threshold_matches_brute_force_scan() {
        // Flat 1e-5 grid as a slower, structurally different maximizer.
        let alpha = 0.5;
        let mut best = f64::NEG_INFINITY;
        for i in 1..=1_000_000 {
            let g = amp_objective(alpha, i as f64 * 1e-5);
            if g.is_finite() && g > best {
                best = g;
            }
        }
        let p = amp_threshold_rho(alpha).unwrap();
        assert!((alpha * best - p.rho_c).abs() < 1e-6);
    }

    #[test]
    fn amp_threshold_domain_checks() {
        for bad in [0.01, 0.99, 0.005, 1.5, -0.2, f64::NAN] {
            assert!(matches!(
                amp_threshold_rho(bad),
                Err(Error::DomainOut { name: "alpha", .. })
            ));
        }
        assert!(amp_threshold_rho(0.011).is_ok());
        assert!(amp_threshold_rho(0.989).is_ok());
    }

    #[test]
    fn amp_objective_not_finite_at_origin() {
        // The z = 0 grid point must be skipped rather than win the scan.
        assert!(!amp_objective(0.5, 0.0).is_finite());
    }

    #[test]
    fn replica_root_certificate() {
        for rho in [0.002, 0.05, 0.1, 0.2, 0.4, 0.9] {
            let p = replica_threshold_alpha(rho).unwrap();
            let residual = replica_root_fn(rho, p.z_star);
            assert!(residual.abs() < 1e-12, "rho = {rho}: residual {residual:e}");
            assert!(p.alpha > 0.0 && p.alpha < 1.0);
            assert_eq!(p.rho_c, rho);
            assert!(p.z_star > 0.0 && p.z_star.is_finite());
        }
    }

    #[test]
    fn replica_threshold_monotone_in_rho() {
        // Denser signals need more measurements.
        let a1 = replica_threshold_alpha(0.002).unwrap().alpha;
        let a2 = replica_threshold_alpha(0.01).unwrap().alpha;
        let a3 = replica_threshold_alpha(0.1).unwrap().alpha;
        assert!(a1 < a2 && a2 < a3, "{a1} {a2} {a3}");
        // Sparser signals push the auxiliary root outward.
        let z1 = replica_threshold_alpha(0.002).unwrap().z_star;
        let z3 = replica_threshold_alpha(0.1).unwrap().z_star;
        assert!(z1 > z3);
    }

    #[test]
    fn replica_threshold_domain_checks() {
        for bad in [0.001, 0.999, 0.9999, -0.1, f64::NAN] {
            assert!(matches!(
                replica_threshold_alpha(bad),
                Err(Error::DomainOut { name: "rho", .. })
            ));
        }
    }

    #[test]
    fn characterizations_agree_round_trip() {
        for rho in [0.05, 0.1, 0.2, 0.4] {
            let replica = replica_threshold_alpha(rho).unwrap();
            let amp = amp_threshold_rho(replica.alpha).unwrap();
            assert!(
                (amp.rho_c - rho).abs() < 1e-6,
                "rho = {rho}: round trip gave {}",
                amp.rho_c
            );
            // Same curve, same auxiliary variable.
            assert!((amp.z_star - replica.z_star).abs() < 1e-5);
        }
    }

    /// Inverts the replica characterization at a given alpha by bisection
    /// on rho (alpha is strictly increasing in rho).
    fn replica_rho_at(alpha: f64) -> f64 {
        let mut lo = 0.0015;
        let mut hi = 0.9985;
        assert!(replica_threshold_alpha(lo).unwrap().alpha < alpha);
        assert!(replica_threshold_alpha(hi).unwrap().alpha > alpha);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if replica_threshold_alpha(mid).unwrap().alpha < alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn characterizations_agree_on_default_grid() {
        let mut worst = 0.0f64;
        for &alpha in &default_alpha_grid() {
            let amp = amp_threshold_rho(alpha).unwrap();
            let inv = replica_rho_at(alpha);
            worst = worst.max((amp.rho_c - inv).abs());
        }
        assert!(worst < 1e-6, "max discrepancy {worst:e}");
    }

    #[test]
    fn curve_is_sorted_and_monotone() {
        let start = std::time::Instant::now();
        let curve = threshold_curve(&default_alpha_grid()).unwrap();
        let elapsed = start.elapsed();
        assert_eq!(curve.len(), 19);
        for pair in curve.windows(2) {
            assert!(pair[0].alpha < pair[1].alpha);
            assert!(pair[0].rho_c <= pair[1].rho_c, "rho_c not monotone");
        }
        assert!(
            elapsed < std::time::Duration::from_secs(1),
            "curve took {elapsed:?}"
        );
    }

    #[test]
    fn curve_orders_unsorted_input() {
        let curve = threshold_curve(&[0.3, 0.1, 0.2]).unwrap();
        let alphas: Vec<f64> = curve.iter().map(|p| p.alpha).collect();
        assert_eq!(alphas, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn curve_singleton_matches_point_call() {
        let curve = threshold_curve(&[0.5]).unwrap();
        assert_eq!(curve, vec![amp_threshold_rho(0.5).unwrap()]);
    }

    #[test]
    fn curve_reports_offending_alpha() {
        match threshold_curve(&[0.5, 0.005]) {
            Err(Error::CurvePoint { alpha, source }) => {
                assert_eq!(alpha, 0.005);
                assert!(matches!(*source, Error::DomainOut { .. }));
            }
            other => panic!("expected CurvePoint error, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn tail_bounded_and_decreasing(z in -8.0f64..8.0, dz in 1e-6f64..4.0) {
            let h = gauss_upper_tail(z);
            prop_assert!(h > 0.0 && h < 1.0);
            prop_assert!(gauss_upper_tail(z + dz) <= h);
            // Strict decrease is only representable where the density is
            // not many orders below the value's own ulp; deep in the left
            // tail a small step moves H by less than one ulp of 1.0.
            if z.abs() <= 6.0 {
                prop_assert!(gauss_upper_tail(z + dz) < h);
            }
        }

        #[test]
        fn tail_symmetry_random(z in -8.0f64..8.0) {
            prop_assert!((gauss_upper_tail(z) + gauss_upper_tail(-z) - 1.0).abs() < 1e-14);
        }
    }
}
