//! p_z(t) by grid inversion of the characteristic function, and an
//! independent ODE integrator used to cross-check it.

use std::collections::BTreeMap;
use std::io::{self, Write};

use num_complex::Complex;

use super::fft::inverse_dft_nd;
use super::AnalyticsError;
use crate::offspring::{Mode, OffspringLaw};
use crate::scalar::Real;
use crate::site::box_sites;

/// Largest grid side per axis.
pub const MAX_GRID_SIDE: usize = 1 << 16;
/// Largest total number of grid points.
pub const MAX_GRID_POINTS: usize = 1 << 22;

/// p_z(t) over one full period of an `M^d` grid.
///
/// Entries are the periodized sums Σ_m p_{z+Mm}(t); for `|z| ≤ radius`
/// they differ from p_z(t) by at most `wrap_error` (as estimated by the
/// last grid doubling).
#[derive(Clone, Debug)]
pub struct PzTable<T> {
    pub t: f64,
    pub radius: i64,
    pub dim: usize,
    pub grid_size: usize,
    pub wrap_error: T,
    period: Vec<T>,
}

impl<T: Real> PzTable<T> {
    fn index(&self, z: &[i64]) -> usize {
        let m = self.grid_size as i64;
        z.iter().fold(0usize, |acc, &c| acc * self.grid_size + c.rem_euclid(m) as usize)
    }

    /// p_z(t) for `|z|_∞ ≤ radius`.
    pub fn get(&self, z: &[i64]) -> Option<T> {
        (z.len() == self.dim && z.iter().all(|c| c.abs() <= self.radius)).then(|| self.period[self.index(z)])
    }

    /// Periodized value at any `z`.
    pub fn periodized(&self, z: &[i64]) -> T {
        self.period[self.index(z)]
    }

    /// Values on the box `[-radius, radius]^d`, keyed lexicographically.
    pub fn values(&self) -> BTreeMap<Vec<i64>, T> {
        box_sites(self.dim, self.radius)
            .map(|z| {
                let v = self.periodized(&z);
                (z, v)
            })
            .collect()
    }

    /// Σ over the full period (equals 1 up to round-off).
    pub fn period_sum(&self) -> T {
        self.period.iter().copied().sum()
    }

    /// max over the full period.
    pub fn sup(&self) -> T {
        self.period.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Σ of squares over the full period.
    pub fn sum_of_squares(&self) -> T {
        self.period.iter().map(|&v| v * v).sum()
    }

    /// Σ of clamped values over grid points outside the sup-norm box of
    /// radius `r`.
    pub(crate) fn outside_mass(&self, r: i64) -> T {
        let m = self.grid_size;
        let half = (m / 2) as i64;
        let centred = |i: usize| {
            let c = i as i64;
            if c > half {
                c - m as i64
            } else {
                c
            }
        };
        let mut acc = T::zero();
        for (idx, &v) in self.period.iter().enumerate() {
            let mut rest = idx;
            let mut inside = true;
            for _ in 0..self.dim {
                inside &= centred(rest % m).abs() <= r;
                rest /= m;
            }
            if !inside {
                acc = acc + v.max(T::zero());
            }
        }
        acc
    }

    /// CSV export `z_1,...,z_d,p` over the box.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|i| format!("z_{i}")).collect();
        writeln!(out, "{},p", header.join(","))?;
        for (z, v) in self.values() {
            let coords: Vec<String> = z.iter().map(|c| c.to_string()).collect();
            writeln!(out, "{},{:e}", coords.join(","), v.to_f64_lossy())?;
        }
        Ok(())
    }
}

/// Evaluates the periodized p_z(t) on an `m^d` grid.
fn grid_table<T: Real>(law: &OffspringLaw, t: f64, m: usize) -> Vec<T> {
    let dim = law.dim();
    let n = m.pow(dim as u32);
    let lambda = T::of(law.lambda());
    let tt = T::of(t);
    let step = T::TAU() / T::of_usize(m);
    // μ̂ is summed over the support directly, with exact integer phases mod m
    let support: Vec<(Vec<i64>, T)> = law
        .mean_intensity()
        .mu
        .iter()
        .map(|(z, &w)| (z.clone(), T::of(w)))
        .collect();
    let shift = T::of(match law.mode() {
        Mode::Stay => 0.0,
        Mode::Death => 1.0,
    });
    let twiddle: Vec<Complex<T>> = (0..m)
        .map(|j| Complex::from_polar(T::one(), step * T::of_usize(j)))
        .collect();
    let mut data = Vec::with_capacity(n);
    let mut k = vec![0i64; dim];
    for idx in 0..n {
        let mut rest = idx;
        for axis in (0..dim).rev() {
            k[axis] = (rest % m) as i64;
            rest /= m;
        }
        let mut mu_hat = Complex::new(T::zero(), T::zero());
        for (z, w) in &support {
            let phase: i64 = z.iter().zip(&k).map(|(a, b)| a * b).sum::<i64>();
            mu_hat = mu_hat + twiddle[phase.rem_euclid(m as i64) as usize] * *w;
        }
        mu_hat.re = mu_hat.re - shift;
        let exponent = (mu_hat - Complex::new(lambda, T::zero())) * tt;
        data.push(exponent.exp());
    }
    inverse_dft_nd(&mut data, m, dim);
    let norm = T::one() / T::of_usize(n);
    data.into_iter().map(|c| c.re * norm).collect()
}

fn max_box_difference<T: Real>(a: &[T], ma: usize, b: &[T], mb: usize, dim: usize, radius: i64) -> T {
    let idx = |z: &[i64], m: usize| z.iter().fold(0usize, |acc, &c| acc * m + c.rem_euclid(m as i64) as usize);
    box_sites(dim, radius)
        .map(|z| (a[idx(&z, ma)] - b[idx(&z, mb)]).abs())
        .fold(T::zero(), T::max)
}

/// Target tolerance achievable in the scalar type.
fn effective_tol<T: Real>(tol: f64) -> T {
    T::of(tol).max(T::unit_roundoff() * T::of(64.0))
}

/// p_z(t) for `|z|_∞ ≤ radius`, doubling the grid until two successive
/// tables agree on the box to within `tol`.
pub fn pz_table<T: Real>(law: &OffspringLaw, t: f64, radius: i64, tol: f64) -> Result<PzTable<T>, AnalyticsError> {
    if !(t >= 0.0 && t.is_finite()) || radius < 0 || !(tol > 0.0) {
        return Err(AnalyticsError::InvalidInput(format!(
            "pz_table needs t ≥ 0, radius ≥ 0, tol > 0 (got {t}, {radius}, {tol})"
        )));
    }
    let dim = law.dim();
    let tol_t = effective_tol::<T>(tol);
    let mut m = ((2 * radius + 2) as usize).max(16).next_power_of_two();
    let mut prev = grid_table::<T>(law, t, m);
    loop {
        let next_m = 2 * m;
        if next_m > MAX_GRID_SIDE || next_m.pow(dim as u32) > MAX_GRID_POINTS {
            return Err(AnalyticsError::NoConvergence(format!(
                "p_z table at t = {t}: grid side {next_m} exceeds the cap"
            )));
        }
        let next = grid_table::<T>(law, t, next_m);
        let diff = max_box_difference(&prev, m, &next, next_m, dim, radius);
        if diff < tol_t {
            return Ok(PzTable {
                t,
                radius,
                dim,
                grid_size: next_m,
                wrap_error: diff,
                period: next,
            });
        }
        prev = next;
        m = next_m;
    }
}

/// Independent evaluation of p_z(t) on a truncated box: integrates
/// q' = μ'∗q − λq from q(0) = δ₀ with an adaptive Dormand–Prince 5(4)
/// scheme. q = e^{−λt}m, so p_z(t) = q_{−z}(t).
pub fn pz_ode_oracle<T: Real>(
    law: &OffspringLaw,
    t: f64,
    box_radius: i64,
    step_tol: f64,
) -> Result<BTreeMap<Vec<i64>, T>, AnalyticsError> {
    if !(t >= 0.0) || box_radius < 0 || !(step_tol > 0.0) {
        return Err(AnalyticsError::InvalidInput("pz_ode_oracle needs t ≥ 0, radius ≥ 0, tol > 0".into()));
    }
    let dim = law.dim();
    let sites: Vec<Vec<i64>> = box_sites(dim, box_radius).collect();
    let side = (2 * box_radius + 1) as usize;
    let index_of = |z: &[i64]| -> Option<usize> {
        if z.iter().any(|c| c.abs() > box_radius) {
            return None;
        }
        Some(z.iter().fold(0usize, |acc, &c| acc * side + (c + box_radius) as usize))
    };
    let death = law.mode() == Mode::Death;
    let lambda = T::of(law.lambda());
    // incoming[x] lists (source index, weight) with source = x − y
    let incoming: Vec<Vec<(usize, T)>> = sites
        .iter()
        .map(|x| {
            law.mean_intensity()
                .mu
                .iter()
                .filter_map(|(y, &w)| {
                    let src: Vec<i64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                    index_of(&src).map(|s| (s, T::of(w)))
                })
                .collect()
        })
        .collect();
    let diag = if death { -T::one() - lambda } else { -lambda };
    let rhs = |q: &[T], out: &mut [T]| {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = diag * q[i];
            for &(s, w) in &incoming[i] {
                acc = acc + w * q[s];
            }
            *o = acc;
        }
    };

    let n = sites.len();
    let mut q = vec![T::zero(); n];
    q[index_of(&vec![0; dim]).expect("origin in box")] = T::one();
    let tol = effective_tol::<T>(step_tol);
    let tt = T::of(t);
    let mut time = T::zero();
    let mut h = T::of(0.01).min(tt);
    let c = dormand_prince::<T>();
    let mut k: Vec<Vec<T>> = vec![vec![T::zero(); n]; 7];
    let mut stage = vec![T::zero(); n];
    let mut steps = 0usize;
    while time < tt {
        steps += 1;
        if steps > 10_000_000 {
            return Err(AnalyticsError::NoConvergence("ODE oracle step limit".into()));
        }
        if time + h > tt {
            h = tt - time;
        }
        rhs(&q, &mut k[0]);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = q[i];
                for j in 0..s {
                    acc = acc + h * c.a[s][j] * k[j][i];
                }
                stage[i] = acc;
            }
            rhs(&stage, &mut k[s]);
        }
        let mut err = T::zero();
        let mut next = vec![T::zero(); n];
        for i in 0..n {
            let mut hi = q[i];
            let mut e = T::zero();
            for s in 0..7 {
                hi = hi + h * c.b[s] * k[s][i];
                e = e + h * (c.b[s] - c.b_star[s]) * k[s][i];
            }
            next[i] = hi;
            err = err.max(e.abs());
        }
        if err <= tol || h < T::unit_roundoff() * tt.max(T::one()) {
            time = time + h;
            q = next;
        }
        let factor = if err == T::zero() {
            T::of(5.0)
        } else {
            (T::of(0.9) * (tol / err).powf(T::of(0.2))).min(T::of(5.0)).max(T::of(0.2))
        };
        h = h * factor;
    }

    let mass: T = q.iter().copied().sum();
    let deficit = (T::one() - mass).abs();
    if deficit > T::of(10.0) * tol {
        return Err(AnalyticsError::LeakTooLarge {
            deficit: deficit.to_f64_lossy(),
            limit: 10.0 * tol.to_f64_lossy(),
        });
    }
    Ok(sites
        .iter()
        .map(|z| {
            let neg: Vec<i64> = z.iter().map(|c| -c).collect();
            (z.clone(), q[index_of(&neg).expect("box is symmetric")])
        })
        .collect())
}

struct Tableau<T> {
    a: [[T; 6]; 7],
    b: [T; 7],
    b_star: [T; 7],
}

fn dormand_prince<T: Real>() -> Tableau<T> {
    let f = |x: f64| T::of(x);
    let z = T::zero();
    Tableau {
        a: [
            [z; 6],
            [f(1.0 / 5.0), z, z, z, z, z],
            [f(3.0 / 40.0), f(9.0 / 40.0), z, z, z, z],
            [f(44.0 / 45.0), f(-56.0 / 15.0), f(32.0 / 9.0), z, z, z],
            [
                f(19372.0 / 6561.0),
                f(-25360.0 / 2187.0),
                f(64448.0 / 6561.0),
                f(-212.0 / 729.0),
                z,
                z,
            ],
            [
                f(9017.0 / 3168.0),
                f(-355.0 / 33.0),
                f(46732.0 / 5247.0),
                f(49.0 / 176.0),
                f(-5103.0 / 18656.0),
                z,
            ],
            [
                f(35.0 / 384.0),
                z,
                f(500.0 / 1113.0),
                f(125.0 / 192.0),
                f(-2187.0 / 6784.0),
                f(11.0 / 84.0),
            ],
        ],
        b: [
            f(35.0 / 384.0),
            z,
            f(500.0 / 1113.0),
            f(125.0 / 192.0),
            f(-2187.0 / 6784.0),
            f(11.0 / 84.0),
            z,
        ],
        b_star: [
            f(5179.0 / 57600.0),
            z,
            f(7571.0 / 16695.0),
            f(393.0 / 640.0),
            f(-92097.0 / 339200.0),
            f(187.0 / 2100.0),
            f(1.0 / 40.0),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::fixtures::{death1, nn1, nn2};
    use approx::assert_abs_diff_eq;

    /// e^{-2t} I_n(2t) by adaptive Simpson quadrature of
    /// (1/π)∫_0^π e^{2t cos θ} cos(nθ) dθ.
    fn bessel_oracle(n: i32, t: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, eps: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
                left + right + (left + right - whole) / 15.0
            } else {
                simpson(f, a, m, fa, flm, fm, eps / 2.0, depth - 1)
                    + simpson(f, m, b, fm, frm, fb, eps / 2.0, depth - 1)
            }
        }
        let f = move |th: f64| (2.0 * t * (th.cos() - 1.0)).exp() * (n as f64 * th).cos();
        let pi = std::f64::consts::PI;
        simpson(&f, 0.0, pi, f(0.0), f(pi / 2.0), f(pi), 1e-14, 40) / pi
    }

    #[test]
    fn nn1_matches_bessel_values() {
        let table: PzTable<f64> = pz_table(&nn1(), 1.0, 10, 1e-13).unwrap();
        let p0 = table.get(&[0]).unwrap();
        let p1 = table.get(&[1]).unwrap();
        assert_abs_diff_eq!(p0, bessel_oracle(0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p1, bessel_oracle(1, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p0, 0.308508, epsilon = 1e-6);
        assert_abs_diff_eq!(p1, 0.215269, epsilon = 1e-6);
        assert_abs_diff_eq!(table.period_sum(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn time_zero_is_a_delta() {
        for law in [nn1(), death1(), nn2()] {
            let table: PzTable<f64> = pz_table(&law, 0.0, 3, 1e-12).unwrap();
            for (z, v) in table.values() {
                let want = if z.iter().all(|&c| c == 0) { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(v, want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn ode_oracle_agrees_with_grid() {
        for law in [nn1(), death1()] {
            for t in [0.5, 1.0, 2.0] {
                let table: PzTable<f64> = pz_table(&law, t, 40, 1e-13).unwrap();
                let oracle = pz_ode_oracle::<f64>(&law, t, 40, 1e-12).unwrap();
                let worst = oracle
                    .iter()
                    .map(|(z, v)| (table.get(z).unwrap() - v).abs())
                    .fold(0.0, f64::max);
                assert!(worst <= 1e-8, "t = {t}: {worst}");
                let mass: f64 = oracle.values().sum();
                assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn ode_oracle_time_zero_and_leak() {
        let delta = pz_ode_oracle::<f64>(&nn1(), 0.0, 3, 1e-10).unwrap();
        assert_eq!(delta[&vec![0]], 1.0);
        assert_eq!(delta[&vec![2]], 0.0);
        assert!(matches!(
            pz_ode_oracle::<f64>(&nn1(), 3.0, 2, 1e-10),
            Err(AnalyticsError::LeakTooLarge { .. })
        ));
    }

    #[test]
    fn f32_table_tracks_f64() {
        let a: PzTable<f32> = pz_table(&nn1(), 1.0, 8, 1e-6).unwrap();
        let b: PzTable<f64> = pz_table(&nn1(), 1.0, 8, 1e-12).unwrap();
        for z in -8..=8 {
            assert!((a.get(&[z]).unwrap() as f64 - b.get(&[z]).unwrap()).abs() < 1e-5);
        }
    }

    #[test]
    fn table_inequalities() {
        for law in [nn1(), death1(), nn2()] {
            for t in [0.3, 1.0, 4.0] {
                let table: PzTable<f64> = pz_table(&law, t, 6, 1e-12).unwrap();
                let sup = table.sup();
                let sq = table.sum_of_squares();
                assert!(sup <= 1.0 + 1e-12);
                assert!(sq <= sup + 1e-12);
                assert!(table.values().values().all(|&v| v >= -table.wrap_error - 1e-15));
            }
        }
    }

    #[test]
    fn csv_export() {
        let table: PzTable<f64> = pz_table(&nn2(), 0.5, 1, 1e-10).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("z_1,z_2,p\n-1,-1,"));
        assert_eq!(text.lines().count(), 10);
    }
}
