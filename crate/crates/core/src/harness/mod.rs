//! Replicate orchestration and statistical checks against the analytic
//! predictions.
//!
//! Replicate `k` of an experiment with master seed `s` is driven by
//! [`replicate_rng`]`(s, k)` and may run on any worker thread; results are
//! folded in replicate order, so records are reproducible bit-for-bit.

mod config;
mod ops;

pub use config::{run_experiment, ExperimentConfig, ExperimentKind, Report, VariantKind, EXPERIMENTS};
pub use ops::*;

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::AnalyticsError;
use crate::engine::{EngineError, EventRecord, LatticeState, Probe, Process, TriState, TrustRegion};
use crate::label_engine::LabelError;
use crate::offspring::OffspringLaw;
use crate::rng::replicate_rng;
use crate::site::SiteKey;
use crate::stats::MeanSe;

/// Per-replicate event budget when none is configured.
pub const DEFAULT_BUDGET: u64 = 200_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("BudgetExceeded: about {expected:.3e} events expected per replicate, budget {budget}")]
    BudgetExceeded { expected: f64, budget: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// One line of the results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub observable: String,
    pub estimate: f64,
    pub se: f64,
    pub replicates: usize,
    /// Truncation certificate of the trust region (0 when not applicable).
    pub epsilon: f64,
    pub seed: u64,
    /// `None` for informational records.
    pub pass: Option<bool>,
}

impl EstimateRecord {
    pub fn info(observable: impl Into<String>, m: MeanSe, epsilon: f64, seed: u64) -> Self {
        EstimateRecord {
            observable: observable.into(),
            estimate: m.mean,
            se: m.se,
            replicates: m.n,
            epsilon,
            seed,
            pass: None,
        }
    }

    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = Some(pass);
        self
    }

    /// PASS iff |estimate − target| ≤ 3·SE + epsilon.
    pub fn against(self, target: f64) -> Self {
        let ok = (self.estimate - target).abs() <= 3.0 * self.se + self.epsilon;
        self.with_pass(ok)
    }
}

/// True when no record failed.
pub fn all_pass(records: &[EstimateRecord]) -> bool {
    records.iter().all(|r| r.pass != Some(false))
}

/// One JSON object per record.
pub fn write_records<W: Write>(records: &[EstimateRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Summary table: one CSV row per record.
pub fn write_summary_csv<W: Write>(records: &[EstimateRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "observable,estimate,se,replicates,epsilon,seed,pass")?;
    for r in records {
        let pass = match r.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "",
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.observable, r.estimate, r.se, r.replicates, r.epsilon, r.seed, pass
        )?;
    }
    Ok(())
}

/// Shared replicate settings.
#[derive(Clone, Copy, Debug)]
pub struct Setup<'a> {
    pub law: &'a OffspringLaw,
    pub seed: u64,
    pub replicates: usize,
    pub budget: u64,
    /// Fixed initial radius; chosen by the trust policy when `None`.
    pub init_radius: Option<i64>,
}

impl<'a> Setup<'a> {
    pub fn new(law: &'a OffspringLaw, seed: u64, replicates: usize) -> Self {
        Setup {
            law,
            seed,
            replicates,
            budget: DEFAULT_BUDGET,
            init_radius: None,
        }
    }

    pub fn with_radius(mut self, r: i64) -> Self {
        self.init_radius = Some(r);
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    /// Trust region for observables at the origin up to `horizon`: either
    /// the fixed radius with its certificate, or the smallest radius whose
    /// certificate is at most 1% of `tolerance`.
    pub fn trust(&self, horizon: f64, tolerance: f64) -> Result<TrustRegion, HarnessError> {
        Ok(match self.init_radius {
            Some(r) => TrustRegion::certify(self.law, r, horizon)?,
            None => TrustRegion::choose(self.law, horizon, 0.01 * tolerance)?,
        })
    }

    /// Runs `f` for every replicate, in parallel, collected in order.
    pub fn replicate_map<T, F>(&self, f: F) -> Result<Vec<T>, HarnessError>
    where
        T: Send,
        F: Fn(u64, ChaCha8Rng) -> Result<T, HarnessError> + Sync,
    {
        (0..self.replicates as u64)
            .into_par_iter()
            .map(|k| f(k, replicate_rng(self.seed, k)))
            .collect()
    }

    /// Rejects runs whose mean event count (no annihilation) from `balls`
    /// initial balls up to `horizon` exceeds the budget.
    pub fn preflight(&self, balls: f64, horizon: f64) -> Result<(), HarnessError> {
        let expected = balls * expected_rings_per_ball(self.law, horizon);
        if expected > self.budget as f64 {
            return Err(HarnessError::BudgetExceeded {
                expected,
                budget: self.budget,
            });
        }
        Ok(())
    }
}

/// ∫_0^T e^{λs} ds: mean number of rings among the descendants of one ball
/// when nothing annihilates.
pub fn expected_rings_per_ball(law: &OffspringLaw, horizon: f64) -> f64 {
    let lambda = law.lambda();
    if lambda.abs() < 1e-12 {
        horizon
    } else {
        ((lambda * horizon).exp() - 1.0) / lambda
    }
}

/// Sign history of one site: `(time, sign)` at time 0 and at every change.
#[derive(Clone, Debug)]
pub struct SignTrace {
    site: SiteKey,
    pub trace: Vec<(f64, i64)>,
}

impl SignTrace {
    pub fn new(site: SiteKey, initial: i64) -> Self {
        SignTrace {
            site,
            trace: vec![(0.0, initial.signum())],
        }
    }

    fn observe(&mut self, time: f64, value: i64) {
        let s = value.signum();
        if self.trace.last().map(|e| e.1) != Some(s) {
            self.trace.push((time, s));
        }
    }

    /// Sign at time `t` (right-continuous).
    pub fn sign_at(&self, t: f64) -> i64 {
        let i = self.trace.partition_point(|e| e.0 <= t);
        self.trace[i.saturating_sub(1)].1
    }

    /// Red (positive) at every instant of `[from, to]`.
    pub fn red_throughout(&self, from: f64, to: f64) -> bool {
        self.sign_at(from) > 0 && self.trace.iter().all(|&(t, s)| t <= from || t > to || s > 0)
    }

    /// Changes of the last non-zero sign up to time `to`.
    pub fn colour_changes(&self, to: f64) -> u64 {
        crate::engine::colour_change_count(self.trace.iter().copied().filter(|e| e.0 <= to)).count
    }
}

impl Probe<LatticeState> for SignTrace {
    fn event(&mut self, record: &EventRecord, state: &LatticeState) {
        if state.touched().contains(&self.site) {
            self.observe(record.time, state.count(self.site));
        }
    }
}

impl Probe<TriState> for SignTrace {
    fn event(&mut self, record: &EventRecord, state: &TriState) {
        if state.touched().contains(&self.site) {
            self.observe(record.time, state.z(self.site));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_trace_queries() {
        let mut s = SignTrace::new(SiteKey::origin(1), 1);
        s.observe(1.0, 3);
        s.observe(2.0, 0);
        s.observe(2.5, -2);
        s.observe(3.0, 4);
        assert_eq!(s.trace.len(), 4);
        assert!(s.red_throughout(0.0, 1.9));
        assert!(!s.red_throughout(0.5, 2.0));
        assert!(s.red_throughout(3.0, 9.0));
        assert_eq!(s.sign_at(2.7), -1);
        assert_eq!(s.colour_changes(2.9), 1);
        assert_eq!(s.colour_changes(3.0), 2);
    }

    #[test]
    fn record_tolerance_includes_epsilon() {
        let m = MeanSe { mean: 1.02, se: 0.005, n: 100 };
        assert_eq!(EstimateRecord::info("x", m, 0.0, 1).against(1.0).pass, Some(false));
        assert_eq!(EstimateRecord::info("x", m, 0.006, 1).against(1.0).pass, Some(true));
    }

    #[test]
    fn summary_csv_layout() {
        let r = EstimateRecord::info("a", MeanSe { mean: 0.5, se: 0.1, n: 4 }, 0.0, 9).with_pass(true);
        let mut out = Vec::new();
        write_summary_csv(&[r.clone()], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().nth(1), Some("a,0.5,0.1,4,0,9,PASS"));
        let mut js = Vec::new();
        write_records(&[r], &mut js).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&js).unwrap();
        assert_eq!(v["pass"], true);
    }
}
