//! Estimators and probes. Every operation returns its records; PASS flags
//! follow the fixed rules: 3 SE (+ epsilon) for point comparisons, KS
//! p > 0.01 for distributions, non-overlapping 2 SE intervals for trends.

use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EstimateRecord, HarnessError, SignTrace, Setup};
use crate::analytics::{
    conditional_mean_S, log_log_fit, parseval_sum, pz_ode_oracle, pz_table, second_moment_M, tail_bound,
    variance_prediction, PzTable,
};
use crate::engine::{
    init_bernoulli, run_conservative, run_until, Both, LatticeState, Probe, SampleFn, SimClock, TriState,
    TrustRegion, Variant,
};
use crate::label_engine::{couple, sandwich, Colouring, LabelError};
use crate::offspring::OffspringLaw;
use crate::rng::{bernoulli, replicate_rng, replicate_seed, LabelRandomness};
use crate::site::{box_sites, SiteKey};
use crate::stats::{self, mean_se, proportion, MeanSe};

fn sorted_times(times: &[f64]) -> Result<Vec<f64>, HarnessError> {
    if times.is_empty() || times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(HarnessError::InvalidConfig(format!("bad time grid {times:?}")));
    }
    let mut v = times.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

fn last(times: &[f64]) -> f64 {
    *times.last().expect("non-empty grid")
}

/// Binomial 3-SE half width at the least favourable p: a tolerance guess
/// for the trust policy before anything has been simulated.
fn proportion_tolerance(replicates: usize) -> f64 {
    3.0 * (0.25 / replicates.max(1) as f64).sqrt()
}

fn box_balls(dim: usize, r: i64) -> f64 {
    ((2 * r + 1) as f64).powi(dim as i32)
}

fn clock(setup: &Setup, rng: ChaCha8Rng) -> SimClock {
    SimClock::new(rng).with_budget(setup.budget)
}

/// Origin value of a Bernoulli run at each of `times`.
fn bernoulli_samples(
    setup: &Setup,
    p: f64,
    radius: i64,
    variant: Variant,
    times: &[f64],
    mut rng: ChaCha8Rng,
) -> Result<(Vec<i64>, SignTrace), HarnessError> {
    let law = setup.law;
    let origin = SiteKey::origin(law.dim());
    let mut state = init_bernoulli(law.dim(), p, radius, variant, &mut rng)?;
    let mut values = vec![0i64; times.len()];
    let mut sampler = SampleFn(|i: usize, _t: f64, s: &LatticeState| values[i] = s.count(origin));
    let mut trace = SignTrace::new(origin, state.count(origin));
    let mut c = clock(setup, rng);
    run_until(&mut state, law, &mut c, last(times), times, &mut Both(&mut sampler, &mut trace))?;
    Ok((values, trace))
}

/// e^{−λt}·value.
fn scaled(law: &OffspringLaw, t: f64, v: i64) -> f64 {
    (-law.lambda() * t).exp() * v as f64
}

/// Mean of e^{−λt}Y₀(t) for the monochromatic process from a p-Bernoulli
/// colouring, compared with `p`.
pub fn estimate_mean_growth(setup: &Setup, p: f64, times: &[f64]) -> Result<Vec<EstimateRecord>, HarnessError> {
    let times = sorted_times(times)?;
    let law = setup.law;
    if !(0.0..=1.0).contains(&p) {
        return Err(HarnessError::InvalidConfig(format!("p = {p}")));
    }
    if p == 0.0 {
        return Ok(times
            .iter()
            .map(|t| {
                let m = MeanSe { mean: 0.0, se: 0.0, n: setup.replicates };
                EstimateRecord::info(format!("mean_growth@t={t}"), m, 0.0, setup.seed).against(0.0)
            })
            .collect());
    }
    let horizon = last(&times);
    let spread = variance_prediction::<f64>(law, p, horizon)?.max(p * (1.0 - p));
    let trust = setup.trust(horizon, 3.0 * (spread / setup.replicates as f64).sqrt())?;
    setup.preflight(p * box_balls(law.dim(), trust.init_radius), horizon)?;
    let samples = setup.replicate_map(|_, rng| {
        Ok(bernoulli_samples(setup, p, trust.init_radius, Variant::Monochromatic, &times, rng)?.0)
    })?;
    Ok(times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let xs: Vec<f64> = samples.iter().map(|s| scaled(law, t, s[i])).collect();
            EstimateRecord::info(format!("mean_growth@t={t}"), mean_se(&xs), trust.epsilon, setup.seed).against(p)
        })
        .collect())
}

/// Var[e^{−λt}Y₀(t)] over a t grid: per-t variances, ratios to the leading
/// term C·Σp_z(t)², and the log–log slope (target −d/2 ± `slope_tol`).
/// The ratio is gated at the largest t against `ratio_band`.
pub fn estimate_variance_scaling(
    setup: &Setup,
    p: f64,
    times: &[f64],
    slope_tol: f64,
    ratio_band: (f64, f64),
) -> Result<Vec<EstimateRecord>, HarnessError> {
    let times = sorted_times(times)?;
    let law = setup.law;
    let horizon = last(&times);
    let target_var = variance_prediction::<f64>(law, p, horizon)?;
    let tolerance = 3.0 * target_var * (2.0 / setup.replicates as f64).sqrt();
    // a single ball already overruns the budget long before any radius is certified
    setup.preflight(1.0, horizon)?;
    let trust = setup.trust(horizon, tolerance)?;
    setup.preflight(p * box_balls(law.dim(), trust.init_radius), horizon)?;
    let samples = setup.replicate_map(|_, rng| {
        Ok(bernoulli_samples(setup, p, trust.init_radius, Variant::Monochromatic, &times, rng)?.0)
    })?;
    let mut records = Vec::new();
    let mut series = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let xs: Vec<f64> = samples.iter().map(|s| scaled(law, t, s[i])).collect();
        let v = stats::variance_se(&xs);
        records.push(EstimateRecord::info(format!("variance@t={t}"), v, trust.epsilon, setup.seed));
        if t > 0.0 {
            let pred = variance_prediction::<f64>(law, p, t)?;
            let ratio = MeanSe { mean: v.mean / pred, se: v.se / pred, n: v.n };
            let mut rec = EstimateRecord::info(format!("variance_ratio@t={t}"), ratio, trust.epsilon, setup.seed);
            if t == horizon {
                rec = rec.with_pass(ratio.mean >= ratio_band.0 && ratio.mean <= ratio_band.1);
            }
            records.push(rec);
            series.push((t, v.mean));
        }
    }
    let fit = log_log_fit(&series)?;
    let target = -(law.dim() as f64) / 2.0;
    records.push(
        EstimateRecord::info(
            "variance_slope",
            MeanSe { mean: fit.slope, se: fit.se, n: setup.replicates },
            trust.epsilon,
            setup.seed,
        )
        .with_pass((fit.slope - target).abs() <= slope_tol),
    );
    Ok(records)
}

/// Fraction of replicates whose origin is red throughout `[wT, T]`, per T.
/// Trend PASS: increasing in T (ties allowed only at 1). With `floor`, the
/// fraction at the largest T must reach it.
pub fn fixation_probe(
    setup: &Setup,
    p: f64,
    times: &[f64],
    window: f64,
    floor: Option<f64>,
) -> Result<Vec<EstimateRecord>, HarnessError> {
    let times = sorted_times(times)?;
    if !(0.0..=1.0).contains(&window) {
        return Err(HarnessError::InvalidConfig(format!("window fraction {window}")));
    }
    let horizon = last(&times);
    let trust = setup.trust(horizon, proportion_tolerance(setup.replicates))?;
    let traces = setup.replicate_map(|_, rng| {
        Ok(bernoulli_samples(setup, p, trust.init_radius, Variant::Annihilating, &times, rng)?.1)
    })?;
    let mut records = Vec::new();
    let mut fractions = Vec::new();
    for &t in &times {
        let hits = traces.iter().filter(|tr| tr.red_throughout(window * t, t)).count();
        let m = proportion(hits, traces.len());
        fractions.push(m.mean);
        records.push(EstimateRecord::info(format!("fixation@T={t}"), m, trust.epsilon, setup.seed));
    }
    let increasing = fractions.windows(2).all(|w| w[1] > w[0] || (w[0] == 1.0 && w[1] == 1.0));
    let step = fractions.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    records.push(
        EstimateRecord::info(
            "fixation_trend_min_step",
            MeanSe { mean: if step.is_finite() { step } else { 0.0 }, se: 0.0, n: traces.len() },
            trust.epsilon,
            setup.seed,
        )
        .with_pass(increasing),
    );
    if let Some(floor) = floor {
        let top = records[times.len() - 1].clone();
        let ok = top.estimate + top.epsilon >= floor;
        records.push(EstimateRecord { observable: format!("fixation_floor@T={horizon}"), ..top }.with_pass(ok));
    }
    Ok(records)
}

/// Mean number of colour changes at the origin over `[0, T]` per T; PASS if
/// the means strictly increase with non-overlapping ±2 SE intervals. At
/// p = 1/2 the symmetry null (Z₀ against −Z₀) is also tested.
pub fn nonfixation_probe(setup: &Setup, p: f64, times: &[f64]) -> Result<Vec<EstimateRecord>, HarnessError> {
    let times = sorted_times(times)?;
    let horizon = last(&times);
    let trust = setup.trust(horizon, proportion_tolerance(setup.replicates))?;
    let runs = setup.replicate_map(|_, rng| {
        bernoulli_samples(setup, p, trust.init_radius, Variant::Annihilating, &times, rng)
    })?;
    let mut records = Vec::new();
    let mut stats_per_t = Vec::new();
    for &t in &times {
        let xs: Vec<f64> = runs.iter().map(|(_, tr)| tr.colour_changes(t) as f64).collect();
        let m = mean_se(&xs);
        stats_per_t.push(m);
        records.push(EstimateRecord::info(format!("colour_changes@T={t}"), m, trust.epsilon, setup.seed));
    }
    let separated = stats_per_t
        .windows(2)
        .all(|w| w[0].mean + 2.0 * w[0].se < w[1].mean - 2.0 * w[1].se);
    let gap = stats_per_t
        .windows(2)
        .map(|w| (w[1].mean - 2.0 * w[1].se) - (w[0].mean + 2.0 * w[0].se))
        .fold(f64::INFINITY, f64::min);
    records.push(
        EstimateRecord::info(
            "colour_change_trend_min_gap",
            MeanSe { mean: if gap.is_finite() { gap } else { 0.0 }, se: 0.0, n: runs.len() },
            trust.epsilon,
            setup.seed,
        )
        .with_pass(separated),
    );
    if p == 0.5 {
        let z: Vec<f64> = runs.iter().map(|(v, _)| v[times.len() - 1] as f64).collect();
        let neg: Vec<f64> = z.iter().map(|x| -x).collect();
        let ks = stats::ks_two_sample(&z, &neg);
        records.push(
            EstimateRecord::info(
                format!("symmetry_ks_pvalue@T={horizon}"),
                MeanSe { mean: ks.p_value, se: 0.0, n: z.len() },
                trust.epsilon,
                setup.seed,
            )
            .with_pass(ks.p_value > 0.01),
        );
    }
    Ok(records)
}

/// Empirical P(e^{−λt}Z₀(t) > ĉ·t^{−d/4}) per t. ĉ is the `quantile` of
/// e^{−λt₀}Z₀(t₀)·t₀^{d/4} at the smallest t unless given. PASS if every
/// probability reaches `floor`.
pub fn deviation_probe(
    setup: &Setup,
    p: f64,
    times: &[f64],
    c_hat: Option<f64>,
    quantile: f64,
    floor: f64,
) -> Result<Vec<EstimateRecord>, HarnessError> {
    let times = sorted_times(times)?;
    if times[0] <= 0.0 {
        return Err(HarnessError::InvalidConfig("deviation grid needs t > 0".into()));
    }
    let law = setup.law;
    let quarter = law.dim() as f64 / 4.0;
    let horizon = last(&times);
    let trust = setup.trust(horizon, proportion_tolerance(setup.replicates))?;
    let samples = setup.replicate_map(|_, rng| {
        Ok(bernoulli_samples(setup, p, trust.init_radius, Variant::Annihilating, &times, rng)?.0)
    })?;
    let n = samples.len();
    let c_hat = match c_hat {
        Some(c) => c,
        None => {
            let mut x: Vec<f64> = samples
                .iter()
                .map(|s| scaled(law, times[0], s[0]) * times[0].powf(quarter))
                .collect();
            x.sort_by(f64::total_cmp);
            x[((quantile * n as f64).ceil() as usize).clamp(1, n) - 1]
        }
    };
    let mut records = vec![EstimateRecord::info(
        "c_hat",
        MeanSe { mean: c_hat, se: 0.0, n },
        trust.epsilon,
        setup.seed,
    )];
    for (i, &t) in times.iter().enumerate() {
        let threshold = c_hat * t.powf(-quarter);
        let hits = samples.iter().filter(|s| scaled(law, t, s[i]) > threshold).count();
        let m = proportion(hits, n);
        let rec = EstimateRecord::info(format!("deviation@t={t}"), m, trust.epsilon, setup.seed);
        let ok = m.mean + trust.epsilon >= floor;
        records.push(rec.with_pass(ok));
        if p == 0.5 {
            let pos = proportion(samples.iter().filter(|s| s[i] > 0).count(), n);
            let ok = pos.mean <= 0.5 + 3.0 * pos.se + trust.epsilon;
            records.push(EstimateRecord::info(format!("positive@t={t}"), pos, trust.epsilon, setup.seed).with_pass(ok));
        }
    }
    Ok(records)
}

/// Table radius whose outside mass is at most `mass`.
fn covering_table(law: &OffspringLaw, t: f64, mass: f64) -> Result<PzTable<f64>, HarnessError> {
    let mut r = 8;
    loop {
        let table: PzTable<f64> = pz_table(law, t, r, 1e-14)?;
        if table.outside_mass(r) <= mass || r >= crate::engine::MAX_ENGINE_OFFSET {
            return Ok(table);
        }
        r *= 2;
    }
}

/// KS test of S(t)/√Σp_z(t)² against N(0, 1), with S(t) = Σ p_z(t)ζ_z for
/// `samples` independent symmetric ±1 colourings of the table box.
pub fn normality_test(
    law: &OffspringLaw,
    t: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<EstimateRecord>, HarnessError> {
    let table = covering_table(law, t, 1e-12)?;
    let weights: Vec<f64> = table.values().into_values().collect();
    let norm = weights.iter().map(|p| p * p).sum::<f64>().sqrt();
    let xs: Vec<f64> = (0..samples as u64)
        .map(|k| {
            let mut rng = replicate_rng(seed, k);
            weights.iter().map(|&p| if bernoulli(&mut rng, 0.5) { p } else { -p }).sum::<f64>() / norm
        })
        .collect();
    let ks = stats::ks_one_sample(&xs, stats::normal_cdf);
    let skew = stats::skewness(&xs);
    let var = stats::variance_se(&xs);
    let n = xs.len();
    Ok(vec![
        EstimateRecord::info(format!("clt_ks_statistic@t={t}"), MeanSe { mean: ks.statistic, se: 0.0, n }, 0.0, seed),
        EstimateRecord::info(format!("clt_ks_pvalue@t={t}"), MeanSe { mean: ks.p_value, se: 0.0, n }, 0.0, seed)
            .with_pass(ks.p_value > 0.01),
        EstimateRecord::info(format!("clt_skewness@t={t}"), skew, 0.0, seed).against(0.0),
        EstimateRecord::info(format!("clt_variance@t={t}"), var, 0.0, seed),
    ])
}

/// Replicate mean of e^{−λt}Z₀(t, ζ) for a fixed finite ζ against S(t).
pub fn conditional_mean_check(setup: &Setup, zeta: &Colouring, t: f64) -> Result<Vec<EstimateRecord>, HarnessError> {
    let law = setup.law;
    if zeta.dim() != law.dim() {
        return Err(HarnessError::InvalidConfig("ζ and law differ in dimension".into()));
    }
    let entries: Vec<(Vec<i64>, i64)> = zeta.iter().map(|(k, v)| (k.coords(law.dim()), v as i64)).collect();
    let reach = zeta.iter().map(|(k, _)| k.sup_norm(law.dim())).max().unwrap_or(0);
    let table: PzTable<f64> = pz_table(law, t, reach.max(1), 1e-14)?;
    // a ball at z contributes e^{−λt}E[X_{−z}(t)] = p_z(t) at the origin
    let s = conditional_mean_S(&table, &entries)?;
    let origin = SiteKey::origin(law.dim());
    let xs = setup.replicate_map(|_, rng| {
        let mut state = LatticeState::from_counts(law.dim(), Variant::Annihilating, &entries)?;
        let mut c = clock(setup, rng);
        run_until(&mut state, law, &mut c, t, &[], &mut ())?;
        Ok(scaled(law, t, state.count(origin)))
    })?;
    Ok(vec![
        EstimateRecord::info(format!("S@t={t}"), MeanSe { mean: s, se: 0.0, n: 0 }, 0.0, setup.seed),
        EstimateRecord::info(format!("conditional_mean@t={t}"), mean_se(&xs), 0.0, setup.seed).against(s),
    ])
}

/// Spatial density of red sites in `[−n, n]^d` from a single run against
/// the ensemble probability P(Z₀(t) > 0). The single-run standard error
/// comes from batch means over contiguous blocks of the box.
pub fn density_estimate(setup: &Setup, p: f64, times: &[f64], n: i64) -> Result<Vec<EstimateRecord>, HarnessError> {
    let times = sorted_times(times)?;
    let law = setup.law;
    let dim = law.dim();
    let horizon = last(&times);
    let trust = setup.trust(horizon, proportion_tolerance(setup.replicates))?;
    let origin = SiteKey::origin(dim);
    let box_keys: Vec<SiteKey> = box_sites(dim, n).map(|c| SiteKey::new(&c).expect("box in range")).collect();
    // replicate 0 covers the whole box with its own trust margin
    let runs = setup.replicate_map(|k, mut rng| {
        let radius = if k == 0 { trust.init_radius + n } else { trust.init_radius };
        let mut state = init_bernoulli(dim, p, radius, Variant::Annihilating, &mut rng)?;
        let mut origin_red = vec![false; times.len()];
        let mut spatial = vec![Vec::new(); times.len()];
        let mut sampler = SampleFn(|i: usize, _t: f64, s: &LatticeState| {
            origin_red[i] = s.count(origin) > 0;
            if k == 0 {
                spatial[i] = box_keys.iter().map(|&x| s.count(x) > 0).collect();
            }
        });
        let mut c = clock(setup, rng);
        run_until(&mut state, law, &mut c, horizon, &times, &mut sampler)?;
        Ok((origin_red, spatial))
    })?;
    let mut records = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let ensemble = proportion(runs.iter().filter(|r| r.0[i]).count(), runs.len());
        let spatial = batch_means(&runs[0].1[i], 20);
        let diff = spatial.mean - ensemble.mean;
        let se = (spatial.se.powi(2) + ensemble.se.powi(2)).sqrt();
        records.push(EstimateRecord::info(format!("density_spatial@t={t}"), spatial, trust.epsilon, setup.seed));
        records.push(EstimateRecord::info(format!("density_ensemble@t={t}"), ensemble, trust.epsilon, setup.seed));
        records.push(
            EstimateRecord::info(
                format!("density_difference@t={t}"),
                MeanSe { mean: diff, se, n: runs.len() },
                trust.epsilon,
                setup.seed,
            )
            .against(0.0),
        );
    }
    Ok(records)
}

/// Mean of indicator values with a batch-means standard error.
fn batch_means(values: &[bool], batches: usize) -> MeanSe {
    let n = values.len();
    let b = batches.min(n).max(1);
    let means: Vec<f64> = (0..b)
        .map(|j| {
            let chunk = &values[j * n / b..(j + 1) * n / b];
            chunk.iter().filter(|&&v| v).count() as f64 / chunk.len() as f64
        })
        .collect();
    let mean = values.iter().filter(|&&v| v).count() as f64 / n as f64;
    let m = mean_se(&means);
    MeanSe { mean, se: if b > 1 { m.se } else { 0.0 }, n }
}

/// Conservative process against an independent monochromatic run of ζ₊:
/// zero tolerance on Z = R − B at every event, two-sample KS on
/// e^{−λt}(R₀+P₀)(t) against e^{−λt}Y₀(t), mean and variance within 3 SE,
/// and the blue-plus-purple mean against 1 − p.
pub fn monochrome_marginal_check(setup: &Setup, p: f64, t: f64) -> Result<Vec<EstimateRecord>, HarnessError> {
    let law = setup.law;
    let dim = law.dim();
    let spread = variance_prediction::<f64>(law, p.max(1e-9), t)?.max(1e-3);
    let trust = setup.trust(t, 3.0 * (spread / setup.replicates as f64).sqrt())?;
    setup.preflight(box_balls(dim, trust.init_radius), t)?;
    let origin = SiteKey::origin(dim);
    let reference = replicate_seed(setup.seed, u64::MAX);
    let runs = setup.replicate_map(|k, mut rng| {
        let initial = init_bernoulli(dim, p, trust.init_radius, Variant::Annihilating, &mut rng)?;
        let mut check = ShadowCheck::default();
        let mut c = clock(setup, rng);
        let (tri, _) = run_conservative(&initial, law, &mut c, t, &[], &mut check)?;
        let mut mono_rng = replicate_rng(reference, k);
        let mut mono = init_bernoulli(dim, p, trust.init_radius, Variant::Monochromatic, &mut mono_rng)?;
        let mut c2 = clock(setup, mono_rng);
        run_until(&mut mono, law, &mut c2, t, &[], &mut ())?;
        Ok((
            scaled(law, t, tri.red_plus_purple(origin) as i64),
            scaled(law, t, tri.blue_plus_purple(origin) as i64),
            scaled(law, t, mono.count(origin)),
            tri.violations() + check.mismatches,
        ))
    })?;
    let rp: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let bp: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let y: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let violations: u64 = runs.iter().map(|r| r.3).sum();
    let n = runs.len();
    let eps = trust.epsilon;
    let ks = stats::ks_two_sample(&rp, &y);
    let (m1, m2) = (mean_se(&rp), mean_se(&y));
    let (v1, v2) = (stats::variance_se(&rp), stats::variance_se(&y));
    let diff = |a: MeanSe, b: MeanSe| MeanSe { mean: a.mean - b.mean, se: (a.se.powi(2) + b.se.powi(2)).sqrt(), n };
    Ok(vec![
        EstimateRecord::info("z_equals_r_minus_b_violations", MeanSe { mean: violations as f64, se: 0.0, n }, 0.0, setup.seed)
            .with_pass(violations == 0),
        EstimateRecord::info(format!("marginal_ks_pvalue@t={t}"), MeanSe { mean: ks.p_value, se: 0.0, n }, eps, setup.seed)
            .with_pass(ks.p_value > 0.01),
        EstimateRecord::info(format!("marginal_mean_difference@t={t}"), diff(m1, m2), eps, setup.seed).against(0.0),
        EstimateRecord::info(format!("marginal_variance_difference@t={t}"), diff(v1, v2), eps, setup.seed).against(0.0),
        EstimateRecord::info(format!("blue_plus_purple_mean@t={t}"), mean_se(&bp), eps, setup.seed).against(1.0 - p),
    ])
}

/// Compares R − B with the shadow signed process at every touched site
/// after every event.
#[derive(Default)]
struct ShadowCheck {
    mismatches: u64,
}

impl Probe<TriState> for ShadowCheck {
    fn event(&mut self, _record: &crate::engine::EventRecord, state: &TriState) {
        use crate::engine::Process;
        for &k in state.touched() {
            if state.z(k) != state.shadow_z(k) {
                self.mismatches += 1;
            }
        }
    }
}

/// E|M_u(t)|² from single-ball runs against the closed form.
pub fn martingale_second_moment(setup: &Setup, u: &[f64], t: f64) -> Result<Vec<EstimateRecord>, HarnessError> {
    let law = setup.law;
    if u.len() != law.dim() {
        return Err(HarnessError::InvalidConfig("frequency dimension".into()));
    }
    let decay = (-law.mu_hat(u) * t).exp();
    let xs = setup.replicate_map(|_, rng| {
        let mut state = LatticeState::from_counts(law.dim(), Variant::Monochromatic, &[(vec![0; law.dim()], 1)])?;
        let mut c = clock(setup, rng);
        run_until(&mut state, law, &mut c, t, &[], &mut ())?;
        let m: Complex<f64> = decay * state.fourier(u);
        Ok(m.norm_sqr())
    })?;
    let neg: Vec<f64> = u.iter().map(|x| -x).collect();
    let target = second_moment_M(law, u, &neg, t).re;
    let name = format!("M_second_moment@u={u:?},t={t}");
    Ok(vec![
        EstimateRecord::info(format!("{name}:closed_form"), MeanSe { mean: target, se: 0.0, n: 0 }, 0.0, setup.seed),
        EstimateRecord::info(name, mean_se(&xs), 0.0, setup.seed).against(target),
    ])
}

/// p_z(t) three ways: transform table, ODE oracle (deterministic, max
/// difference ≤ `det_tol`) and Monte Carlo e^{−λt}X_{−z}(t) from single balls.
pub fn pz_three_way(
    setup: &Setup,
    zs: &[Vec<i64>],
    t: f64,
    det_tol: f64,
) -> Result<Vec<EstimateRecord>, HarnessError> {
    let law = setup.law;
    let dim = law.dim();
    let reach = zs.iter().flatten().map(|c| c.abs()).max().unwrap_or(0).max(1);
    let table = covering_table(law, t, 1e-13)?;
    let ode_radius = table.radius.max(reach);
    let ode = pz_ode_oracle::<f64>(law, t, ode_radius, 1e-12)?;
    let max_diff = ode
        .iter()
        .filter_map(|(z, &v)| table.get(z).map(|w| (v - w).abs()))
        .fold(0.0, f64::max);
    let mut records = vec![EstimateRecord::info(
        format!("pz_table_vs_ode_max_difference@t={t}"),
        MeanSe { mean: max_diff, se: 0.0, n: 0 },
        0.0,
        setup.seed,
    )
    .with_pass(max_diff <= det_tol)];
    let keys: Vec<SiteKey> = zs
        .iter()
        .map(|z| SiteKey::new(&z.iter().map(|c| -c).collect::<Vec<_>>()).ok_or_else(|| HarnessError::InvalidConfig(format!("{z:?}"))))
        .collect::<Result<_, _>>()?;
    let samples = setup.replicate_map(|_, rng| {
        let mut state = LatticeState::from_counts(dim, Variant::Monochromatic, &[(vec![0; dim], 1)])?;
        let mut c = clock(setup, rng);
        run_until(&mut state, law, &mut c, t, &[], &mut ())?;
        Ok(keys.iter().map(|&k| scaled(law, t, state.count(k))).collect::<Vec<f64>>())
    })?;
    for (i, z) in zs.iter().enumerate() {
        let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let m = mean_se(&xs);
        let from_table = table.get(z).ok_or(HarnessError::InvalidConfig(format!("{z:?} outside table")))?;
        let from_ode = ode[z];
        records.push(EstimateRecord::info(format!("pz_table@z={z:?},t={t}"), MeanSe { mean: from_table, se: 0.0, n: 0 }, 0.0, setup.seed));
        records.push(EstimateRecord::info(format!("pz_mc_vs_table@z={z:?},t={t}"), m, 0.0, setup.seed).against(from_table));
        records.push(EstimateRecord::info(format!("pz_mc_vs_ode@z={z:?},t={t}"), m, 0.0, setup.seed).against(from_ode));
    }
    Ok(records)
}

fn random_colouring(rng: &mut ChaCha8Rng, dim: usize, radius: i64) -> Colouring {
    let mut c = Colouring::empty(dim);
    for coords in box_sites(dim, radius) {
        c.set(SiteKey::new(&coords).expect("small box"), rng.gen_range(-1..=1));
    }
    c
}

fn bernoulli_colouring(rng: &mut ChaCha8Rng, dim: usize, radius: i64, p: f64) -> Colouring {
    let mut c = Colouring::empty(dim);
    for coords in box_sites(dim, radius) {
        c.set(SiteKey::new(&coords).expect("small box"), if bernoulli(rng, p) { 1 } else { -1 });
    }
    c
}

/// Random ordered pairs ζ ≤ ζ′ with values in {−1, 0, 1} on `[−radius,
/// radius]^d`, coupled on shared label randomness; PASS iff no containment
/// ever fails.
pub fn coupling_pairs(setup: &Setup, radius: i64, horizon: f64) -> Result<Vec<EstimateRecord>, HarnessError> {
    let law = setup.law;
    let dim = law.dim();
    let counts = setup.replicate_map(|k, mut rng| {
        let a = random_colouring(&mut rng, dim, radius);
        let b = random_colouring(&mut rng, dim, radius);
        let mut lo = Colouring::empty(dim);
        let mut hi = Colouring::empty(dim);
        for coords in box_sites(dim, radius) {
            let key = SiteKey::new(&coords).expect("small box");
            lo.set(key, a.get(key).min(b.get(key)));
            hi.set(key, a.get(key).max(b.get(key)));
        }
        let seed = LabelRandomness::from_u64(replicate_seed(setup.seed, k));
        let run = couple(&lo, &hi, law, horizon, &seed, setup.budget)?;
        Ok((run.violations.len() as u64, run.lower.log.len() + run.upper.log.len()))
    })?;
    let violations: u64 = counts.iter().map(|c| c.0).sum();
    let events: usize = counts.iter().map(|c| c.1).sum();
    let n = counts.len();
    Ok(vec![
        EstimateRecord::info("coupled_events", MeanSe { mean: events as f64, se: 0.0, n }, 0.0, setup.seed),
        EstimateRecord::info("containment_violations", MeanSe { mean: violations as f64, se: 0.0, n }, 0.0, setup.seed)
            .with_pass(violations == 0),
    ])
}

/// Sandwich runs ζ^{−,r} ≤ ζ|_r ≤ ζ^{+,r} on `[−outer, outer]^d` for each
/// radius, ζ a fresh p-Bernoulli colouring per replicate. PASS needs zero
/// ordering violations, a disagreement probability non-increasing in r, and
/// each probability within tail_bound(r, T) + 2·tail_bound(outer, T) + 3 SE.
pub fn sandwich_experiment(
    setup: &Setup,
    p: f64,
    outer: i64,
    radii: &[i64],
    horizon: f64,
) -> Result<Vec<EstimateRecord>, HarnessError> {
    let law = setup.law;
    let dim = law.dim();
    let table: PzTable<f64> = pz_table(law, horizon, outer.max(1), 1e-14)?;
    let slack = 2.0 * tail_bound(law, &table, outer)?;
    let outcomes = setup.replicate_map(|k, mut rng| {
        let zeta = bernoulli_colouring(&mut rng, dim, outer, p);
        let seed = LabelRandomness::from_u64(replicate_seed(setup.seed, k));
        radii
            .iter()
            .map(|&r| match sandwich(&zeta, r, outer, law, horizon, &seed, setup.budget) {
                Ok(s) => Ok((false, s.outer_disagree)),
                Err(LabelError::OrderViolation { .. }) => Ok((true, true)),
                Err(e) => Err(e.into()),
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let n = outcomes.len();
    let violations = outcomes.iter().flatten().filter(|o| o.0).count();
    let mut records = vec![EstimateRecord::info(
        "ordering_violations",
        MeanSe { mean: violations as f64, se: 0.0, n },
        0.0,
        setup.seed,
    )
    .with_pass(violations == 0)];
    let mut probs = Vec::new();
    for (j, &r) in radii.iter().enumerate() {
        let m = proportion(outcomes.iter().filter(|o| o[j].1).count(), n);
        let bound = tail_bound(law, &table, r)?;
        probs.push(m.mean);
        records.push(EstimateRecord::info(format!("tail_bound@r={r}"), MeanSe { mean: bound, se: 0.0, n: 0 }, slack, setup.seed));
        let ok = m.mean <= bound + slack + 3.0 * m.se;
        records.push(EstimateRecord::info(format!("disagreement@r={r}"), m, slack, setup.seed).with_pass(ok));
    }
    let monotone = probs.windows(2).all(|w| w[1] <= w[0]);
    records.push(
        EstimateRecord::info(
            "disagreement_non_increasing",
            MeanSe { mean: monotone as u8 as f64, se: 0.0, n },
            0.0,
            setup.seed,
        )
        .with_pass(monotone),
    );
    Ok(records)
}

/// Σ_z p_z(t)² used for CLT normalization, exposed for reporting.
pub fn parseval(law: &OffspringLaw, t: f64) -> Result<f64, HarnessError> {
    Ok(parseval_sum::<f64>(law, t)?)
}

/// Trust region reported alongside experiments that do not simulate.
pub fn trust_for(law: &OffspringLaw, horizon: f64, radius: i64) -> Result<TrustRegion, HarnessError> {
    Ok(TrustRegion::certify(law, radius, horizon)?)
}
