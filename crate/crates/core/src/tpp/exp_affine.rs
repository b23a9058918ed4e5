//! Exponential-affine conditional intensity.
//!
//! The time model used throughout this crate: given a hidden state the
//! network emits two scalars, a log-rate `s` and a slope `u`, and the
//! intensity for elapsed time `t` since the last event is
//!
//! ```text
//! lambda(t) = exp(s + u * t)
//! ```
//!
//! This family admits closed forms for the survival function, the
//! log-density, and (when `u == 0`) the expected waiting time, which is
//! what makes the per-event likelihood cheap enough to train against.
//!
//! All the formula variants live here, including the gradient of the
//! log-density with respect to `(s, u)` that the autodiff tape consumes,
//! so there is exactly one home for the numerics.

use crate::error::{Error, Result};

/// exp(s + u*d) overflows f64 well before this; used to fail loudly instead
/// of silently returning `inf`.
const MAX_EXPONENT: f64 = 700.0;

/// Below this |u*d| the direct expm1 quotient loses precision; switch to the
/// Taylor expansion of expm1(u*d)/u in u*d.
const SERIES_THRESHOLD: f64 = 1e-5;

/// Survival probabilities below this floor are treated as zero when picking
/// an integration horizon.
const SURVIVAL_FLOOR: f64 = 1e-9;

/// Hard cap on the integration horizon for expected durations. Slopes
/// `u < 0` leave positive mass at infinity, so some horizon must be imposed;
/// results cut off here carry `truncated = true`.
const HORIZON_CAP: f64 = 1e6;

const MAX_PANELS: usize = 1 << 20;

pub fn log_intensity(s: f64, u: f64, dt: f64) -> f64 {
    s + u * dt
}

/// Intensity at elapsed time `dt`, guarded against overflow.
pub fn intensity(s: f64, u: f64, dt: f64) -> Result<f64> {
    let e = log_intensity(s, u, dt);
    if e > MAX_EXPONENT {
        return Err(Error::Numeric(format!(
            "intensity exponent {e:.3} exceeds {MAX_EXPONENT}; \
             intensity would overflow (s={s}, u={u}, dt={dt})"
        )));
    }
    Ok(e.exp())
}

/// g(u, d) = (exp(u*d) - 1) / u, the factor by which exp(s) scales inside
/// the integrated intensity. Continuous at u = 0 where it equals d.
pub(crate) fn survival_factor(u: f64, d: f64) -> f64 {
    let x = u * d;
    if x.abs() < SERIES_THRESHOLD {
        d * (1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0)
    } else {
        x.exp_m1() / u
    }
}

/// d/du of `survival_factor`.
pub(crate) fn survival_factor_du(u: f64, d: f64) -> f64 {
    let x = u * d;
    if x.abs() < SERIES_THRESHOLD {
        d * d * (0.5 + x / 3.0 + x * x / 8.0)
    } else {
        (d * x.exp() - x.exp_m1() / u) / u
    }
}

/// log S(d) = -exp(s) * g(u, d); always <= 0 for d >= 0.
pub fn log_survival(s: f64, u: f64, d: f64) -> f64 {
    -s.exp() * survival_factor(u, d)
}

/// log f(d) = log lambda(d) + log S(d).
pub fn log_density(s: f64, u: f64, d: f64) -> f64 {
    log_intensity(s, u, d) + log_survival(s, u, d)
}

/// (log f, d log f / d s, d log f / d u) in one evaluation; this is what the
/// autodiff tape calls for its fused log-density node.
pub(crate) fn log_density_with_grads(s: f64, u: f64, d: f64) -> (f64, f64, f64) {
    let es = s.exp();
    let g = survival_factor(u, d);
    let value = (s + u * d) + (-es * g);
    let ds = 1.0 - es * g;
    let du = d - es * survival_factor_du(u, d);
    (value, ds, du)
}

/// Mean of the waiting-time distribution, integrated numerically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedDuration {
    pub value: f64,
    /// True when the integration horizon was capped rather than chosen from
    /// the survival floor -- the true mean is larger than `value` (and for
    /// u < 0 may not exist at all).
    pub truncated: bool,
}

/// E[D] = integral of S(t) over [0, horizon] via adaptive composite
/// Gauss-Legendre quadrature. The horizon is the point where survival drops
/// below 1e-9, capped at 1e6.
pub fn expected_duration(s: f64, u: f64) -> Result<ExpectedDuration> {
    if s > MAX_EXPONENT {
        return Err(Error::Numeric(format!(
            "expected_duration: exp(s) overflows for s = {s}"
        )));
    }
    let (horizon, truncated) = max_duration(s, u);
    let value = integrate_survival(s, u, horizon)?;
    Ok(ExpectedDuration { value, truncated })
}

/// Smallest d with S(d) <= SURVIVAL_FLOOR, solved in closed form from
/// g(u, d) = -ln(floor) / exp(s), capped at HORIZON_CAP. The bool reports
/// whether the cap was hit.
pub(crate) fn max_duration(s: f64, u: f64) -> (f64, bool) {
    let g_required = -SURVIVAL_FLOOR.ln() / s.exp();
    let d = if u == 0.0 {
        // g(0, d) = d
        g_required
    } else {
        // g = expm1(u*d)/u = g_required  =>  u*d = ln(1 + u*g_required),
        // which for u < 0 has no solution once u*g_required <= -1 (survival
        // plateaus above the floor).
        let arg = u * g_required;
        if arg <= -1.0 {
            return (HORIZON_CAP, true);
        }
        arg.ln_1p() / u
    };
    if d > HORIZON_CAP {
        (HORIZON_CAP, true)
    } else {
        (d, false)
    }
}

// 16-point Gauss-Legendre rule on [-1, 1]: positive abscissas and matching
// weights; the rule is symmetric.
const GL_NODES: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_8,
    0.755_404_408_355_003_0,
    0.865_631_202_387_831_8,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL_WEIGHTS: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_8,
    0.062_253_523_938_647_9,
    0.027_152_459_411_754_1,
];

fn gl_panel(s: f64, u: f64, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (&x, &w) in GL_NODES.iter().zip(&GL_WEIGHTS) {
        acc += w * log_survival(s, u, mid + half * x).exp();
        acc += w * log_survival(s, u, mid - half * x).exp();
    }
    half * acc
}

fn composite(s: f64, u: f64, horizon: f64, panels: usize) -> f64 {
    let width = horizon / panels as f64;
    (0..panels)
        .map(|i| gl_panel(s, u, i as f64 * width, (i + 1) as f64 * width))
        .sum()
}

/// Integrates survival over [0, horizon], doubling the panel count until two
/// successive refinements agree to 1e-6 relative.
fn integrate_survival(s: f64, u: f64, horizon: f64) -> Result<f64> {
    let mut panels = 1;
    let mut prev = composite(s, u, horizon, panels);
    loop {
        panels *= 2;
        if panels > MAX_PANELS {
            return Err(Error::Numeric(format!(
                "survival quadrature did not converge within {MAX_PANELS} \
                 panels (s={s}, u={u}, horizon={horizon})"
            )));
        }
        let cur = composite(s, u, horizon, panels);
        if (cur - prev).abs() <= 1e-6 * cur.abs().max(1e-300) {
            return Ok(cur);
        }
        prev = cur;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gl_weights_sum_to_two() {
        let total: f64 = GL_WEIGHTS.iter().sum::<f64>() * 2.0;
        assert!((total - 2.0).abs() < 1e-12, "weights sum to {total}");
    }

    #[test]
    fn hand_values() {
        // Unit-rate exponential: f(1) = exp(-1).
        assert!((log_density(0.0, 0.0, 1.0) - (-1.0)).abs() < 1e-15);
        // Rate 2: log f(0.5) = ln 2 - 2 * 0.5.
        let expect = 2.0_f64.ln() - 1.0;
        assert!((log_density(2.0_f64.ln(), 0.0, 0.5) - expect).abs() < 1e-14);
        // At d = 0 the density equals the intensity.
        assert_eq!(log_density(0.7, -0.3, 0.0), 0.7);
    }

    #[test]
    fn density_splits_into_intensity_and_survival() {
        for &(s, u, d) in &[(0.3, 0.4, 1.7), (-1.0, -0.5, 2.0), (0.0, 0.0, 3.0)] {
            let lhs = log_density(s, u, d);
            let rhs = log_intensity(s, u, d) + log_survival(s, u, d);
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn survival_factor_is_continuous_at_series_boundary() {
        let d = 2.0;
        for sign in [1.0, -1.0] {
            let below = sign * (SERIES_THRESHOLD * 0.999) / d;
            let above = sign * (SERIES_THRESHOLD * 1.001) / d;
            let gb = survival_factor(below, d);
            let ga = survival_factor(above, d);
            assert!((gb - ga).abs() / gb.abs() < 1e-7);
            let db = survival_factor_du(below, d);
            let da = survival_factor_du(above, d);
            assert!((db - da).abs() / db.abs() < 1e-7);
        }
    }

    #[test]
    fn log_density_continuous_near_zero_slope() {
        for &d in &[0.1, 1.0, 7.5] {
            let at_zero = log_density(0.4, 0.0, d);
            for &u in &[1e-9, -1e-9] {
                assert!((log_density(0.4, u, d) - at_zero).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn intensity_overflow_is_an_error() {
        assert!(intensity(800.0, 0.0, 1.0).is_err());
        assert!(intensity(1.0, 2.0, 400.0).is_err());
        assert!(intensity(1.0, 0.5, 1.0).is_ok());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let h = 1e-6;
        for &(s, u, d) in &[
            (0.3, -0.2, 1.5),
            (-1.1, 0.7, 0.4),
            (0.0, 0.0, 2.0),
            (0.5, 1e-7, 3.0),
        ] {
            let (_, ds, du) = log_density_with_grads(s, u, d);
            let fd_s = (log_density(s + h, u, d) - log_density(s - h, u, d)) / (2.0 * h);
            let fd_u = (log_density(s, u + h, d) - log_density(s, u - h, d)) / (2.0 * h);
            assert!((ds - fd_s).abs() < 1e-7, "ds {ds} vs fd {fd_s}");
            assert!((du - fd_u).abs() < 1e-7, "du {du} vs fd {fd_u}");
        }
    }

    #[test]
    fn max_duration_matches_bisection() {
        let target = SURVIVAL_FLOOR.ln();
        for &(s, u) in &[(0.0, 0.0), (0.5, 0.3), (-1.0, 0.8), (1.2, -0.05)] {
            let (d_closed, truncated) = max_duration(s, u);
            assert!(!truncated);
            // Independent check: bisect log_survival to the same floor.
            let (mut lo, mut hi) = (0.0_f64, 1e7_f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if log_survival(s, u, mid) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!(
                (d_closed - lo).abs() / lo < 1e-9,
                "closed {d_closed} vs bisected {lo} for s={s} u={u}"
            );
        }
    }

    #[test]
    fn max_duration_caps_when_survival_plateaus() {
        // Strongly negative slope: survival levels off above the floor.
        let (d, truncated) = max_duration(0.0, -5.0);
        assert_eq!(d, HORIZON_CAP);
        assert!(truncated);
    }

    #[test]
    fn expected_duration_matches_constant_rate_closed_form() {
        for &rate in &[0.25_f64, 1.0, 4.0] {
            let got = expected_duration(rate.ln(), 0.0).unwrap();
            assert!(!got.truncated);
            let expect = 1.0 / rate;
            let rel = (got.value - expect).abs() / expect;
            assert!(rel < 1e-6, "rate {rate}: got {} rel err {rel}", got.value);
        }
    }

    #[test]
    fn expected_duration_matches_dense_trapezoid() {
        for &(s, u) in &[(-1.0, 0.2), (0.0, 1.0), (0.8, 0.05)] {
            let got = expected_duration(s, u).unwrap();
            assert!(!got.truncated);
            let (horizon, _) = max_duration(s, u);
            let n = 1_000_000usize;
            let h = horizon / n as f64;
            let mut acc = 0.5 * (log_survival(s, u, 0.0).exp()
                + log_survival(s, u, horizon).exp());
            for i in 1..n {
                acc += log_survival(s, u, i as f64 * h).exp();
            }
            let oracle = acc * h;
            let rel = (got.value - oracle).abs() / oracle;
            assert!(rel < 1e-5, "s={s} u={u}: got {} oracle {oracle}", got.value);
        }
    }

    #[test]
    fn expected_duration_flags_truncation_for_negative_slope() {
        // S plateaus at exp(-exp(0.5)/0.3) ~ 4e-3, so the mean diverges and
        // the capped integral is dominated by the plateau.
        let got = expected_duration(0.5, -0.3).unwrap();
        assert!(got.truncated);
        let plateau = (-(0.5_f64.exp()) / 0.3).exp();
        assert!(got.value > 0.9 * plateau * HORIZON_CAP);
        assert!(got.value < 1.1 * (plateau * HORIZON_CAP + 10.0));
    }

    #[test]
    fn density_integrates_to_one_for_nonnegative_slope() {
        for &(s, u) in &[(0.3, 0.4), (0.0, 0.0), (-0.5, 0.1)] {
            let (horizon, truncated) = max_duration(s, u);
            assert!(!truncated);
            let n = 2_000_000usize;
            let h = horizon / n as f64;
            let mut acc = 0.5 * (log_density(s, u, 0.0).exp()
                + log_density(s, u, horizon).exp());
            for i in 1..n {
                acc += log_density(s, u, i as f64 * h).exp();
            }
            let mass = acc * h + log_survival(s, u, horizon).exp();
            assert!((mass - 1.0).abs() < 1e-6, "s={s} u={u}: mass {mass}");
        }
    }

    proptest! {
        #[test]
        fn survival_is_monotone_and_bounded(
            s in -2.0..2.0f64,
            u in -1.0..1.0f64,
            d1 in 0.0..10.0f64,
            d2 in 0.0..10.0f64,
        ) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let s_lo = log_survival(s, u, lo);
            let s_hi = log_survival(s, u, hi);
            prop_assert!(s_lo <= 0.0);
            prop_assert!(s_hi <= s_lo + 1e-12);
        }

        #[test]
        fn density_is_negative_derivative_of_survival(
            s in -2.0..2.0f64,
            u in -1.0..1.0f64,
            d in 0.01..8.0f64,
        ) {
            let h = 1e-5 * d.max(1.0);
            let fd = (log_survival(s, u, d - h).exp()
                - log_survival(s, u, d + h).exp()) / (2.0 * h);
            let f = log_density(s, u, d).exp();
            let denom = f.abs().max(fd.abs()).max(1e-8);
            prop_assert!((f - fd).abs() / denom < 1e-4,
                "f {f} vs -dS/dd {fd} at s={s} u={u} d={d}");
        }
    }
}
