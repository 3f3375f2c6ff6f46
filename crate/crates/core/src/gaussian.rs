//! Standard normal distribution functions.
//!
//! Built on the pure-Rust `libm` error functions so results are identical on
//! every platform; the photon sampler depends on these through the expected
//! per-bin counts.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x - LN_SQRT_2PI)
}

/// Φ(x).
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(x) without cancellation.
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// ln Φ(x), finite for every finite `x`.
pub fn ln_cdf(x: f64) -> f64 {
    if x > 0.0 {
        libm::log1p(-sf(x))
    } else if x > -30.0 {
        libm::log(cdf(x))
    } else {
        // Asymptotic Mills-ratio series; erfc underflows below about −37.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - LN_SQRT_2PI - libm::log(-x) + libm::log(series)
    }
}

/// Φ⁻¹(p) for 0 < p < 1.
///
/// Acklam's rational approximation refined by two Halley steps against
/// [`cdf`]; the refined result is accurate to a few ulps.
pub fn inv_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "inverse normal CDF requires 0 < p < 1, got {p}"
        )));
    }
    if p > 0.5 {
        // Work in the lower tail for precision.
        return Ok(-lower_tail_quantile(1.0 - p));
    }
    Ok(lower_tail_quantile(p))
}

/// Quantile of the upper tail: the `x` with 1 − Φ(x) = q.
pub fn inv_sf(q: f64) -> Result<f64> {
    inv_cdf(q).map(|x| -x)
}

fn lower_tail_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 0.5);
    let mut x = acklam(p);
    for _ in 0..2 {
        let e = cdf(x) - p;
        let u = e * (2.0 * PI).sqrt() * libm::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if p < P_LOW {
        let q = (-2.0 * libm::log(p)).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Mass of N(mean, sd²) inside `[lo, hi)`.
pub fn interval_mass(lo: f64, hi: f64, mean: f64, sd: f64) -> f64 {
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    // Difference of upper tails is more accurate on the right side.
    if a > 0.0 {
        sf(a) - sf(b)
    } else {
        cdf(b) - cdf(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from a 40-digit arbitrary-precision evaluation.
    const CDF_TABLE: [(f64, f64); 9] = [
        (-8.0, 6.220_960_574_271_784e-16),
        (-5.0, 2.866_515_718_791_939e-7),
        (-2.5, 0.006_209_665_325_776_135),
        (-1.0, 0.158_655_253_931_457_05),
        (0.3, 0.617_911_422_188_952_6),
        (1.7, 0.955_434_537_241_456_9),
        (3.1, 0.999_032_396_786_781_6),
        (6.2, 0.999_999_999_717_684_2),
        (8.0, 0.999_999_999_999_999_4),
    ];

    #[test]
    fn cdf_matches_high_precision_table() {
        for (x, want) in CDF_TABLE {
            assert!((cdf(x) - want).abs() <= 1e-15, "Φ({x})");
        }
        assert_eq!(cdf(0.0), 0.5);
        assert!((cdf(1.959_964) - 0.975_000_000_903_557_6).abs() < 1e-12);
    }

    #[test]
    fn inverse_matches_high_precision_table() {
        let table = [
            (1e-10, -6.361_340_902_404_056),
            (0.001, -3.090_232_306_167_813_5),
            (0.025, -1.959_963_984_540_054),
            (0.3, -0.524_400_512_708_040_8),
            (0.9, 1.281_551_565_544_600_4),
            (0.999_999, 4.753_424_308_822_899),
        ];
        for (p, want) in table {
            let got = inv_cdf(p).unwrap();
            assert!(
                (got - want).abs() < 1e-9 * want.abs().max(1.0),
                "Φ⁻¹({p}) = {got}"
            );
        }
    }

    #[test]
    fn inverse_rejects_closed_endpoints() {
        assert!(inv_cdf(0.0).is_err());
        assert!(inv_cdf(1.0).is_err());
        assert!(inv_cdf(f64::NAN).is_err());
    }

    #[test]
    fn round_trip_over_grid() {
        let mut x = -8.0;
        while x <= 8.0 {
            // Each side goes through the tail that carries the precision.
            let back = if x <= 0.0 {
                inv_cdf(cdf(x)).unwrap()
            } else {
                inv_sf(sf(x)).unwrap()
            };
            assert!((back - x).abs() < 1e-8, "x = {x}, back = {back}");
            if x.abs() <= 5.0 {
                assert!((inv_cdf(cdf(x)).unwrap() - x).abs() < 1e-8, "x = {x}");
            }
            x += 0.01;
        }
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!((cdf(inv_cdf(p).unwrap()) - p).abs() <= 1e-9);
        }
    }

    #[test]
    fn upper_tail_inverse_is_precise() {
        for q in [1e-12, 1e-6, 1e-3, 0.2] {
            let x = inv_sf(q).unwrap();
            assert!(((sf(x) - q) / q).abs() < 1e-10);
        }
    }

    #[test]
    fn ln_cdf_is_continuous_across_branches() {
        for x in [-29.999, -30.0, -30.001] {
            let direct = libm::log(cdf(x));
            assert!((ln_cdf(x) - direct).abs() < 1e-6 * direct.abs());
        }
        assert!(ln_cdf(-60.0).is_finite());
        assert!((ln_cdf(2.0) - libm::log(cdf(2.0))).abs() < 1e-15);
    }
}
