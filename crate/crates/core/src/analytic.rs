//! Closed-form detection statistics for a single-return histogram.
//!
//! Symbols follow the usual dToF notation: `λ_b = N·B` background counts per
//! bin, `λ_s` the expected signal in the true peak bin, `M_B` background bins
//! and `SNR = N·A/√(N·B)`. Counts are treated as Gaussian with mean equal to
//! variance, which is where the closed forms come from; the Monte Carlo
//! estimator samples exact Poisson counts instead.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gaussian;
use crate::random::domain;
use crate::{Error, RandomSource, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScenario {
    /// Background photons per bin per cycle.
    pub b: f64,
    /// Laser cycles.
    pub n: f64,
    /// Signal photons per cycle.
    pub a: f64,
    /// Pulse standard deviation in bins.
    pub sigma_bins: f64,
    /// Pulse centre inside its bin, in bins; 0 is the leading edge.
    pub mu_offset: f64,
    pub m_b: u32,
}

impl AnalyticScenario {
    pub fn new(b: f64, n: f64, a: f64, sigma_bins: f64, mu_offset: f64, m_b: u32) -> Result<Self> {
        let s = Self {
            b,
            n,
            a,
            sigma_bins,
            mu_offset,
            m_b,
        };
        s.validate()?;
        Ok(s)
    }

    /// Solves for the amplitude that gives the requested histogram SNR.
    pub fn from_snr(
        snr: f64,
        b: f64,
        n: f64,
        sigma_bins: f64,
        mu_offset: f64,
        m_b: u32,
    ) -> Result<Self> {
        if !(snr >= 0.0 && snr.is_finite()) {
            return Err(Error::config("snr", "must be finite and non-negative"));
        }
        if !(b > 0.0 && n > 0.0) {
            return Err(Error::config("b", "SNR is undefined without background"));
        }
        Self::new(b, n, snr * (n * b).sqrt() / n, sigma_bins, mu_offset, m_b)
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("b", self.b),
            ("n", self.n),
            ("a", self.a),
            ("mu_offset", self.mu_offset),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if !(self.sigma_bins > 0.0 && self.sigma_bins.is_finite()) {
            return Err(Error::config("sigma_bins", "must be positive"));
        }
        if self.mu_offset > 1.0 {
            return Err(Error::config("mu_offset", "must lie in [0, 1]"));
        }
        if self.m_b == 0 {
            return Err(Error::config("m_b", "needs at least one background bin"));
        }
        Ok(())
    }

    pub fn lambda_b(&self) -> f64 {
        self.n * self.b
    }

    /// Expected signal counts in the bin that collects the most of the pulse.
    pub fn lambda_peak(&self) -> f64 {
        let mass = (-2..=2)
            .map(|k| {
                let lo = k as f64 - self.mu_offset;
                gaussian::interval_mass(lo, lo + 1.0, 0.0, self.sigma_bins)
            })
            .fold(0.0, f64::max);
        self.n * self.a * mass
    }

    pub fn snr(&self) -> f64 {
        self.n * self.a / self.lambda_b().sqrt()
    }
}

/// Probability that the true peak bin holds the histogram maximum.
///
/// `∫ Φ((x − λ_b)/√λ_b)^{M_B} f_X(x) dx` with `X ~ N(λ_b + λ_s, λ_b + λ_s)`,
/// integrated by adaptive Simpson over `[max(0, m − 10s), m + 10s]`, split at
/// the integrand's mode.
pub fn p_hit(sc: &AnalyticScenario) -> Result<f64> {
    let lb = sc.lambda_b();
    if lb.is_nan() || lb <= 0.0 {
        return Err(Error::Domain(
            "p_hit needs λ_b > 0; the Gaussian model breaks down without background".into(),
        ));
    }
    let m = lb + sc.lambda_peak();
    let s = m.sqrt();
    let sb = lb.sqrt();
    let mb = f64::from(sc.m_b);
    let log_f = |x: f64| {
        let z = (x - m) / s;
        mb * gaussian::ln_cdf((x - lb) / sb) - 0.5 * z * z - s.ln() - 0.918_938_533_204_672_8
    };
    let f = |x: f64| libm::exp(log_f(x));

    let lo = (m - 10.0 * s).max(0.0);
    let hi = m + 10.0 * s;
    let mode = golden_max(&log_f, lo, hi);
    let total = integrate(&f, lo, mode, 1e-8) + integrate(&f, mode, hi, 1e-8);
    Ok(total.clamp(0.0, 1.0))
}

/// `P(pass | hit) = 1 − Φ((α√λ_b − λ_s)/√(λ_s + λ_b))`.
pub fn p_pass_given_hit(sc: &AnalyticScenario, alpha: f64) -> f64 {
    let lb = sc.lambda_b();
    let ls = sc.lambda_peak();
    gaussian::cdf((ls - alpha * lb.sqrt()) / (ls + lb).sqrt())
}

pub fn p_true(sc: &AnalyticScenario, alpha: f64) -> Result<f64> {
    Ok(p_hit(sc)? * p_pass_given_hit(sc, alpha))
}

/// Largest α that still reaches `P_true = target`.
///
/// `α_max = (λ_s + Φ⁻¹(1 − P_true/P_hit)·√(λ_b + λ_s))/√λ_b`.
pub fn alpha_max(sc: &AnalyticScenario, target_p_true: f64) -> Result<f64> {
    let ph = p_hit(sc)?;
    if !(target_p_true > 0.0 && target_p_true < ph) {
        return Err(Error::Infeasible(format!(
            "target P_true {target_p_true} must lie in (0, P_hit = {ph})"
        )));
    }
    let lb = sc.lambda_b();
    let ls = sc.lambda_peak();
    // Φ⁻¹(1 − q) taken from the upper tail to keep precision as q → 1.
    let z = gaussian::inv_sf(target_p_true / ph)?;
    Ok((ls + z * (lb + ls).sqrt()) / lb.sqrt())
}

/// `P_false = 1 − Φ(α)^{M_B}`, evaluated in log space.
pub fn p_false(alpha: f64, m_b: u32) -> f64 {
    -libm::expm1(f64::from(m_b) * gaussian::ln_cdf(alpha))
}

/// `α_min = Φ⁻¹((1 − P_false)^{1/M_B})`.
pub fn alpha_min(target_p_false: f64, m_b: u32) -> Result<f64> {
    if !(target_p_false > 0.0 && target_p_false < 1.0) {
        return Err(Error::Domain(format!(
            "target P_false must lie in (0, 1), got {target_p_false}"
        )));
    }
    if m_b == 0 {
        return Err(Error::config("m_b", "needs at least one background bin"));
    }
    let upper = -libm::expm1(libm::log1p(-target_p_false) / f64::from(m_b));
    gaussian::inv_sf(upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    /// Trapezoid area over the points ordered by FPR.
    pub auc: f64,
}

pub fn roc_curve(sc: &AnalyticScenario, alphas: &[f64]) -> Result<RocCurve> {
    if alphas.is_empty() {
        return Err(Error::config("alpha", "the α grid is empty"));
    }
    let ph = p_hit(sc)?;
    let points: Vec<RocPoint> = alphas
        .iter()
        .map(|&alpha| RocPoint {
            fpr: p_false(alpha, sc.m_b),
            tpr: ph * p_pass_given_hit(sc, alpha),
            alpha,
        })
        .collect();
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| a.fpr.total_cmp(&b.fpr));
    let auc = sorted
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub trials: u64,
}

pub const MIN_MC_TRIALS: u64 = 10_000;
const MC_CHUNK: u64 = 4096;

/// Monte Carlo estimate of `P_hit` with exact Poisson counts.
///
/// Each trial draws `M_B` background bins from Poisson(λ_b) and the peak bin
/// from Poisson(λ_b + λ_s). A peak that no background bin exceeds but `j`
/// of them equal scores `1/(j + 1)`: the detector keeps the lowest index, and
/// with the pulse equally likely anywhere in the window that is the chance
/// the tie goes to the signal bin. Trials are split into
/// fixed chunks with their own streams, so the result does not depend on the
/// thread count.
pub fn monte_carlo_p_hit(
    sc: &AnalyticScenario,
    trials: u64,
    rnd: &RandomSource,
) -> Result<McEstimate> {
    if trials < MIN_MC_TRIALS {
        return Err(Error::config(
            "trials",
            format!("at least {MIN_MC_TRIALS} trials are required, got {trials}"),
        ));
    }
    let lb = sc.lambda_b();
    let lp = lb + sc.lambda_peak();
    let m_b = sc.m_b as usize;
    let chunks = trials.div_ceil(MC_CHUNK);
    // wins[j]: trials where the peak tied with j background bins and lost to none.
    let wins: Vec<u64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rnd.stream(domain::MONTE_CARLO, c);
            let n = MC_CHUNK.min(trials - c * MC_CHUNK);
            let mut wins = vec![0u64; m_b + 1];
            for _ in 0..n {
                let peak = rng.poisson(lp);
                let (mut beaten, mut ties) = (false, 0);
                for _ in 0..m_b {
                    // Keep drawing after a loss so every trial consumes the
                    // same number of variates.
                    let bg = rng.poisson(lb);
                    beaten |= bg > peak;
                    ties += usize::from(bg == peak);
                }
                if !beaten {
                    wins[ties] += 1;
                }
            }
            wins
        })
        .reduce(
            || vec![0u64; m_b + 1],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let n = trials as f64;
    let (mut mean, mut sq) = (0.0, 0.0);
    for (j, &w) in wins.iter().enumerate() {
        let credit = 1.0 / (j + 1) as f64;
        mean += w as f64 * credit;
        sq += w as f64 * credit * credit;
    }
    mean /= n;
    let var = (sq / n - mean * mean).max(0.0);
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        trials,
    })
}

/// One row of a `P_hit`-versus-SNR curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhitRow {
    pub snr: f64,
    pub lambda_b: f64,
    pub lambda_peak: f64,
    pub p_hit: f64,
    pub mc: Option<McEstimate>,
}

/// Columns: `snr,lambda_b,lambda_peak,p_hit`, plus `mc_p_hit,mc_se` when any
/// row carries a Monte Carlo estimate.
pub fn write_phit_csv<W: Write>(mut w: W, rows: &[PhitRow]) -> io::Result<()> {
    let with_mc = rows.iter().any(|r| r.mc.is_some());
    write!(w, "snr,lambda_b,lambda_peak,p_hit")?;
    if with_mc {
        write!(w, ",mc_p_hit,mc_se")?;
    }
    writeln!(w)?;
    for r in rows {
        write!(
            w,
            "{},{},{},{:.10}",
            r.snr, r.lambda_b, r.lambda_peak, r.p_hit
        )?;
        if with_mc {
            match r.mc {
                Some(mc) => write!(w, ",{:.10},{:.10}", mc.estimate, mc.std_error)?,
                None => write!(w, ",,")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Columns: `snr,alpha,fpr,tpr,auc`; `auc` repeats the curve's area on each
/// of its rows.
pub fn write_roc_csv<W: Write>(mut w: W, curves: &[(f64, RocCurve)]) -> io::Result<()> {
    writeln!(w, "snr,alpha,fpr,tpr,auc")?;
    for (snr, curve) in curves {
        for p in &curve.points {
            writeln!(
                w,
                "{},{},{:.12e},{:.10},{:.10}",
                snr, p.alpha, p.fpr, p.tpr, curve.auc
            )?;
        }
    }
    Ok(())
}

/// An α operating window for one (P_false, P_true) target pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsRow {
    pub snr: f64,
    pub target_p_false: f64,
    pub target_p_true: f64,
    pub alpha_min: f64,
    /// `None` when the P_true target is at or above `P_hit`.
    pub alpha_max: Option<f64>,
}

impl BoundsRow {
    pub fn compute(sc: &AnalyticScenario, target_p_false: f64, target_p_true: f64) -> Result<Self> {
        let alpha_max = match alpha_max(sc, target_p_true) {
            Ok(a) => Some(a),
            Err(Error::Infeasible(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            snr: sc.snr(),
            target_p_false,
            target_p_true,
            alpha_min: alpha_min(target_p_false, sc.m_b)?,
            alpha_max,
        })
    }

    /// True when some α satisfies both targets.
    pub fn feasible(&self) -> bool {
        self.alpha_max.is_some_and(|hi| self.alpha_min <= hi)
    }
}

/// Columns: `snr,target_p_false,target_p_true,alpha_min,alpha_max,feasible`.
/// `alpha_max` is empty when the P_true target exceeds `P_hit`.
pub fn write_bounds_csv<W: Write>(mut w: W, rows: &[BoundsRow]) -> io::Result<()> {
    writeln!(
        w,
        "snr,target_p_false,target_p_true,alpha_min,alpha_max,feasible"
    )?;
    for r in rows {
        let hi = r.alpha_max.map(|a| format!("{a:.10}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{:.10},{},{}",
            r.snr,
            r.target_p_false,
            r.target_p_true,
            r.alpha_min,
            hi,
            r.feasible()
        )?;
    }
    Ok(())
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-9 * (1.0 + a.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Adaptive Simpson on `[a, b]` to relative tolerance `rel_tol`.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // A coarse pass sets the absolute scale for the tolerance.
    let n = 64;
    let h = (b - a) / n as f64;
    let coarse: f64 = (0..n)
        .map(|i| {
            let x0 = a + i as f64 * h;
            simpson(f(x0), f(x0 + h / 2.0), f(x0 + h), h)
        })
        .sum();
    let eps = rel_tol * coarse.abs().max(f64::MIN_POSITIVE);
    (0..n)
        .map(|i| {
            let x0 = a + i as f64 * h;
            let x1 = x0 + h;
            let (fa, fm, fb) = (f(x0), f(x0 + h / 2.0), f(x1));
            let whole = simpson(fa, fm, fb, h);
            simpson_rec(f, x0, x1, fa, fm, fb, whole, eps / n as f64, 40)
        })
        .sum()
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = (a + b) / 2.0;
    let (lm, rm) = ((a + m) / 2.0, (m + b) / 2.0);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}
