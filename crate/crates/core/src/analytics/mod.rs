//! Deterministic evaluation of the spectral predictions: p_z(t), Parseval
//! sums, martingale second moments, the variance constant, the Gaussian
//! parameters of the conditional mean, truncation tail bounds and
//! power-law exponent fits.

mod fft;
mod pz;

pub use fft::inverse_dft_nd;
pub use pz::{pz_ode_oracle, pz_table, PzTable, MAX_GRID_POINTS, MAX_GRID_SIDE};

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::offspring::OffspringLaw;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("NoConvergence: {0}")]
    NoConvergence(String),
    #[error("LeakTooLarge: truncated box lost mass {deficit:e} (limit {limit:e})")]
    LeakTooLarge { deficit: f64, limit: f64 },
    #[error("CoverageGap: site at distance {needed} lies outside the table radius {radius}")]
    CoverageGap { needed: i64, radius: i64 },
    #[error("BadSpan: {0}")]
    BadSpan(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Σ_z p_z(t)² = ∫ e^{−2(λ − Re μ̂(u))t} du, by the periodic trapezoid rule
/// with grid doubling until the relative change is at most 1e−8.
pub fn parseval_sum<T: Real>(law: &OffspringLaw, t: f64) -> Result<T, AnalyticsError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(AnalyticsError::InvalidInput(format!("t = {t}")));
    }
    let dim = law.dim();
    let rel = T::of(1e-8).max(T::unit_roundoff() * T::of(64.0));
    let mut m = 16usize;
    let mut prev = grid_mean::<T>(law, t, m);
    loop {
        m *= 2;
        if m > MAX_GRID_SIDE || m.pow(dim as u32) > MAX_GRID_POINTS {
            return Err(AnalyticsError::NoConvergence(format!("Parseval sum at t = {t}")));
        }
        let next = grid_mean::<T>(law, t, m);
        if (next - prev).abs() <= rel * next.abs() {
            return Ok(next);
        }
        prev = next;
    }
}

/// Mean of e^{−2(λ − Re μ̂(u))t} over the `m^d` grid of (−π, π]^d.
fn grid_mean<T: Real>(law: &OffspringLaw, t: f64, m: usize) -> T {
    let dim = law.dim();
    let n = m.pow(dim as u32);
    let two_t = T::of(2.0 * t);
    let step = T::TAU() / T::of_usize(m);
    let mut u = vec![T::zero(); dim];
    let mut acc = T::zero();
    for idx in 0..n {
        let mut rest = idx;
        for slot in u.iter_mut() {
            *slot = step * T::of_usize(rest % m);
            rest /= m;
        }
        acc = acc + (-two_t * law.spectral_gap_at(&u)).exp();
    }
    acc / T::of_usize(n)
}

/// E[M_u(t) M_v(t)] = 1 + E[φ̂(u)φ̂(v)]·∫_0^t e^{a x} dx with
/// a = μ̂(u+v) − μ̂(u) − μ̂(v).
#[allow(non_snake_case)]
pub fn second_moment_M<T: Real>(law: &OffspringLaw, u: &[T], v: &[T], t: f64) -> Complex<T> {
    let w: Vec<T> = u.iter().zip(v).map(|(&a, &b)| a + b).collect();
    let a = law.mu_hat(&w) - law.mu_hat(u) - law.mu_hat(v);
    let tt = T::of(t);
    let integral = if a.norm() < T::of(1e-12) {
        Complex::new(tt, T::zero())
    } else {
        ((a * tt).exp() - Complex::new(T::one(), T::zero())) / a
    };
    Complex::new(T::one(), T::zero()) + law.phi_hat_product_mean(u, v) * integral
}

/// E[W²] = 1 + E‖φ‖²/λ (net change φ' in death mode).
pub fn limit_second_moment(law: &OffspringLaw) -> f64 {
    1.0 + law.net_second_moment() / law.lambda()
}

/// C = p·E‖φ‖²/λ + p − p², with φ' in death mode.
pub fn variance_constant(law: &OffspringLaw, p: f64) -> f64 {
    p * law.net_second_moment() / law.lambda() + p - p * p
}

/// Leading term C·Σ_z p_z(t)² of Var[e^{−λt}Y₀(t)].
pub fn variance_prediction<T: Real>(law: &OffspringLaw, p: f64, t: f64) -> Result<T, AnalyticsError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(AnalyticsError::InvalidInput(format!("p = {p} is not in (0, 1]")));
    }
    Ok(T::of(variance_constant(law, p)) * parseval_sum::<T>(law, t)?)
}

/// S = Σ_z p_z(t) ζ_z for a finite signed configuration.
#[allow(non_snake_case)]
pub fn conditional_mean_S<T: Real>(table: &PzTable<T>, zeta: &[(Vec<i64>, i64)]) -> Result<T, AnalyticsError> {
    let mut acc = T::zero();
    for (z, v) in zeta {
        let p = table.get(z).ok_or_else(|| AnalyticsError::CoverageGap {
            needed: z.iter().map(|c| c.abs()).max().unwrap_or(0),
            radius: table.radius,
        })?;
        acc = acc + p * T::of_i64(*v);
    }
    Ok(acc)
}

/// Gaussian approximation of S(t) under symmetric Bernoulli colouring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CltParams<T> {
    pub mean: T,
    pub variance: T,
}

pub fn clt_params<T: Real>(law: &OffspringLaw, t: f64) -> Result<CltParams<T>, AnalyticsError> {
    Ok(CltParams {
        mean: T::zero(),
        variance: parseval_sum(law, t)?,
    })
}

/// 2e^{λT}·Σ_{|z|_∞ > r} p_z(T), with negatives clamped and the wrap error
/// of the whole table box added as padding (independent of `r`, so the
/// bound stays monotone).
pub fn tail_bound<T: Real>(law: &OffspringLaw, table: &PzTable<T>, r: i64) -> Result<T, AnalyticsError> {
    if r > table.radius || r < 0 {
        return Err(AnalyticsError::CoverageGap {
            needed: r,
            radius: table.radius,
        });
    }
    let scale = T::of(2.0 * (law.lambda() * table.t).exp());
    let box_size = T::of_usize((2 * table.radius as usize + 1).pow(table.dim as u32));
    let padding = box_size * table.wrap_error;
    Ok(scale * (table.outside_mass(r) + padding))
}

/// Least-squares fit of log(value) against log(t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    /// Standard error of the slope.
    pub se: f64,
    pub intercept: f64,
}

/// Log–log least squares without preconditions on the series (≥ 2 points).
pub fn log_log_fit(series: &[(f64, f64)]) -> Result<ExponentFit, AnalyticsError> {
    if series.len() < 2 || series.iter().any(|&(t, v)| !(t > 0.0 && v > 0.0)) {
        return Err(AnalyticsError::BadSpan("need ≥ 2 points with t > 0 and value > 0".into()));
    }
    let n = series.len() as f64;
    let xs: Vec<f64> = series.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = series.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalyticsError::BadSpan("all t values coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if series.len() > 2 {
        let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(ExponentFit { slope, se, intercept })
}

/// Power-law exponent of a series with ≥ 5 points spanning ≥ one decade.
pub fn scaling_exponent(series: &[(f64, f64)]) -> Result<ExponentFit, AnalyticsError> {
    if series.len() < 5 {
        return Err(AnalyticsError::BadSpan(format!("{} points (need ≥ 5)", series.len())));
    }
    let lo = series.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = series.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !(hi >= 10.0 * lo) {
        return Err(AnalyticsError::BadSpan(format!("t spans [{lo}, {hi}], less than a decade")));
    }
    log_log_fit(series)
}

/// Headline predictions for one law, colouring density and time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub lambda: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub parseval: f64,
    pub sup_pz: f64,
    #[serde(rename = "var_S")]
    pub var_s: f64,
    pub tail_bound: f64,
}

/// Evaluates [`Predictions`] at time `t`, with the tail bound at radius `r`.
pub fn predictions(law: &OffspringLaw, p: f64, t: f64, r: i64) -> Result<Predictions, AnalyticsError> {
    let table: PzTable<f64> = pz_table(law, t, r.max(1), 1e-12)?;
    let parseval = parseval_sum::<f64>(law, t)?;
    Ok(Predictions {
        lambda: law.lambda(),
        c: variance_constant(law, p),
        parseval,
        sup_pz: table.sup(),
        var_s: 4.0 * p * (1.0 - p) * parseval,
        tail_bound: tail_bound(law, &table, r)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::fixtures::{death1, nn1, nn2};
    use crate::offspring::MomentKind;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    /// e^{−4}I₀(4) via its power series Σ (t²/4)^k/(k!)² at argument 4.
    fn scaled_i0(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= (x * x / 4.0) / (k * k) as f64;
            sum += term;
        }
        sum * (-x).exp()
    }

    #[test]
    fn parseval_matches_bessel_series() {
        let v: f64 = parseval_sum(&nn1(), 1.0).unwrap();
        assert_abs_diff_eq!(v, scaled_i0(4.0), epsilon = 1e-10);
        assert_abs_diff_eq!(v, 0.207002, epsilon = 1e-6);
        assert_abs_diff_eq!(parseval_sum::<f64>(&death1(), 0.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn parseval_agrees_with_table_squares() {
        for law in [nn1(), death1(), nn2()] {
            let t = 1.5;
            let table: PzTable<f64> = pz_table(&law, t, 4, 1e-13).unwrap();
            let direct: f64 = parseval_sum(&law, t).unwrap();
            assert_abs_diff_eq!(table.sum_of_squares(), direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn second_moment_examples() {
        let nn1 = nn1();
        let m = second_moment_M(&nn1, &[PI], &[-PI], 1.0);
        assert_abs_diff_eq!(m.re, 1.0 + 4.0 * (6.0f64.exp() - 1.0) / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.re, 269.286, epsilon = 1e-3);
        assert_abs_diff_eq!(m.im, 0.0, epsilon = 1e-9);
        let half = second_moment_M(&nn1, &[PI / 2.0], &[-PI / 2.0], 3.0);
        assert_abs_diff_eq!(half.re, 1.0, epsilon = 1e-12);
        for t in [0.5, 2.0, 40.0] {
            let z = second_moment_M(&nn1, &[0.0], &[0.0], t);
            let want = 1.0 + nn1.moment(MomentKind::Norm(2)) * (1.0 - (-2.0 * t).exp()) / 2.0;
            assert_abs_diff_eq!(z.re, want, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(limit_second_moment(&nn1), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(limit_second_moment(&death1()), 11.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_exponent_uses_linear_integral() {
        // the |a| < 1e-12 branch joins the closed form continuously
        let law = nn1();
        let tiny = 1e-7;
        let a = second_moment_M(&law, &[tiny], &[-tiny], 1.0);
        let b = second_moment_M(&law, &[0.0], &[0.0], 1.0);
        assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-6);
    }

    #[test]
    fn variance_constants() {
        assert_abs_diff_eq!(variance_constant(&nn1(), 0.5), 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(variance_constant(&nn1(), 1.0) / variance_constant(&nn1(), 0.5), 1.6, epsilon = 1e-12);
        let v: f64 = variance_prediction(&nn1(), 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(v, 1.25 * scaled_i0(4.0), epsilon = 1e-9);
        assert_abs_diff_eq!(v, 0.258752, epsilon = 1e-6);
        // death mode: C = p·E[W²] − p² with E[W²] = 11
        assert_abs_diff_eq!(variance_constant(&death1(), 0.5), 0.5 * 11.0 - 0.25, epsilon = 1e-12);
    }

    #[test]
    fn conditional_mean_cases() {
        let table: PzTable<f64> = pz_table(&nn1(), 1.0, 30, 1e-13).unwrap();
        let s = conditional_mean_S(&table, &[(vec![0], 1)]).unwrap();
        assert_abs_diff_eq!(s, 0.308508, epsilon = 1e-6);
        let all: Vec<(Vec<i64>, i64)> = (-30..=30).map(|x| (vec![x], 1)).collect();
        assert_abs_diff_eq!(conditional_mean_S(&table, &all).unwrap(), 1.0, epsilon = 1e-10);
        let anti: Vec<(Vec<i64>, i64)> = (1..=5).flat_map(|x| [(vec![x], 1), (vec![-x], -1)]).collect();
        assert_abs_diff_eq!(conditional_mean_S(&table, &anti).unwrap(), 0.0, epsilon = 1e-14);
        assert!(matches!(
            conditional_mean_S(&table, &[(vec![31], 1)]),
            Err(AnalyticsError::CoverageGap { .. })
        ));
    }

    #[test]
    fn clt_variance_decreases() {
        let v0: CltParams<f64> = clt_params(&nn1(), 0.0).unwrap();
        assert_abs_diff_eq!(v0.variance, 1.0, epsilon = 1e-14);
        let mut prev = 1.0;
        for t in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let v: CltParams<f64> = clt_params(&nn1(), t).unwrap();
            assert!(v.variance < prev);
            prev = v.variance;
        }
    }

    #[test]
    fn tail_bound_cases() {
        let law = nn1();
        let table: PzTable<f64> = pz_table(&law, 1.0, 20, 1e-13).unwrap();
        let b0 = tail_bound(&law, &table, 0).unwrap();
        assert_abs_diff_eq!(b0, 2.0 * 2.0f64.exp() * (1.0 - 0.308508), epsilon = 1e-4);
        assert_abs_diff_eq!(b0, 10.219, epsilon = 1e-3);
        let mut prev = f64::INFINITY;
        for r in 0..=20 {
            let b = tail_bound(&law, &table, r).unwrap();
            assert!(b <= prev);
            prev = b;
        }
        assert!(prev < 1e-9);
        assert!(tail_bound(&law, &table, 21).is_err());
    }

    #[test]
    fn exponent_fits() {
        let exact: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|&t: &f64| (t, t.powf(-0.5))).collect();
        let fit = scaling_exponent(&exact).unwrap();
        assert_abs_diff_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert!(fit.se < 1e-12);
        assert!(matches!(scaling_exponent(&exact[..4]), Err(AnalyticsError::BadSpan(_))));
        let narrow: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 1.0)).collect();
        assert!(scaling_exponent(&narrow).is_err());
    }

    #[test]
    fn predictions_json_fields() {
        let p = predictions(&nn1(), 0.5, 1.0, 8).unwrap();
        let json = serde_json::to_value(&p).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        for k in ["lambda", "C", "parseval", "sup_pz", "var_S", "tail_bound"] {
            assert!(keys.contains(&k), "{k}");
        }
        assert_eq!(keys.len(), 6);
        assert!(p.c > 0.0);
    }

    #[test]
    fn generic_scalar_paths_agree() {
        let a: f32 = parseval_sum(&nn1(), 1.0).unwrap();
        let b: f64 = parseval_sum(&nn1(), 1.0).unwrap();
        assert!((a as f64 - b).abs() < 1e-5);
    }
}
