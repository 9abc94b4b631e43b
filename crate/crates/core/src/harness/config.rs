//! Experiment configuration files and the name → operation dispatch.

use serde::{Deserialize, Serialize};

use super::ops::*;
use super::{all_pass, EstimateRecord, HarnessError, Setup, DEFAULT_BUDGET};
use crate::label_engine::Colouring;
use crate::offspring::{LawDocument, OffspringLaw};

/// Process variant named in a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Annihilating,
    Monochromatic,
    Conservative,
    Labelled,
}

/// One experiment, read from a JSON file. The law is embedded or referenced
/// by path (resolved by the caller). Fields an experiment does not use are
/// ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<LawDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law_path: Option<String>,
    #[serde(default = "default_variant")]
    pub variant: VariantKind,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub init_radius: Option<i64>,
    pub horizon: f64,
    /// Time grid (T grid for the probes); defaults to `[horizon]`.
    #[serde(default)]
    pub probe_times: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub budget: Option<u64>,
    /// Sites whose observables are reported (the origin when empty).
    #[serde(default)]
    pub trusted_sites: Vec<Vec<i64>>,
    /// Fixation window fraction w.
    #[serde(default)]
    pub window: Option<f64>,
    /// Lower gate on the headline fraction or probability.
    #[serde(default)]
    pub floor: Option<f64>,
    /// Half side n of the density box.
    #[serde(default)]
    pub box_side: Option<i64>,
    /// Sample count K of the CLT test.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub c_hat: Option<f64>,
    #[serde(default)]
    pub quantile: Option<f64>,
    /// Outer radius R of the sandwich surrogate, or the pair box of the
    /// coupling experiment.
    #[serde(default)]
    pub outer_radius: Option<i64>,
    /// Inner radii r of the sandwich runs.
    #[serde(default)]
    pub radii: Vec<i64>,
    /// Fixed finite ζ for the conditional-mean check, as `[site, value]`.
    #[serde(default)]
    pub zeta: Option<Vec<(Vec<i64>, i64)>>,
    /// Second initial configuration for a single `couple` run.
    #[serde(default)]
    pub zeta_prime: Option<Vec<(Vec<i64>, i64)>>,
}

fn default_variant() -> VariantKind {
    VariantKind::Annihilating
}

fn default_p() -> f64 {
    0.5
}

fn default_replicates() -> usize {
    100
}

impl ExperimentConfig {
    pub fn times(&self) -> Vec<f64> {
        if self.probe_times.is_empty() {
            vec![self.horizon]
        } else {
            self.probe_times.clone()
        }
    }

    pub fn setup<'a>(&self, law: &'a OffspringLaw, seed: u64) -> Setup<'a> {
        Setup {
            law,
            seed,
            replicates: self.replicates,
            budget: self.budget.unwrap_or(DEFAULT_BUDGET),
            init_radius: self.init_radius,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(HarnessError::InvalidConfig(format!("p = {} is not in [0, 1]", self.p)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(HarnessError::InvalidConfig(format!("horizon {}", self.horizon)));
        }
        if self.replicates == 0 {
            return Err(HarnessError::InvalidConfig("replicates must be positive".into()));
        }
        Ok(())
    }
}

/// Named acceptance experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    MeanGrowth,
    VarianceScaling,
    Fixation,
    Nonfixation,
    Deviation,
    Clt,
    Coupling,
    Conservative,
    Density,
}

pub const EXPERIMENTS: [(&str, ExperimentKind); 9] = [
    ("mean-growth", ExperimentKind::MeanGrowth),
    ("variance-scaling", ExperimentKind::VarianceScaling),
    ("fixation", ExperimentKind::Fixation),
    ("nonfixation", ExperimentKind::Nonfixation),
    ("deviation", ExperimentKind::Deviation),
    ("clt", ExperimentKind::Clt),
    ("coupling", ExperimentKind::Coupling),
    ("conservative", ExperimentKind::Conservative),
    ("density", ExperimentKind::Density),
];

impl std::str::FromStr for ExperimentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EXPERIMENTS
            .iter()
            .find(|(name, _)| *name == s)
            .map(|e| e.1)
            .ok_or_else(|| HarnessError::InvalidConfig(format!("unknown experiment {s}")))
    }
}

/// Records of one experiment and the overall verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub records: Vec<EstimateRecord>,
    pub pass: bool,
}

/// Runs the named experiment.
pub fn run_experiment(
    kind: ExperimentKind,
    config: &ExperimentConfig,
    law: &OffspringLaw,
    seed: u64,
) -> Result<Report, HarnessError> {
    config.validate()?;
    let setup = config.setup(law, seed);
    let times = config.times();
    let p = config.p;
    let records = match kind {
        ExperimentKind::MeanGrowth => estimate_mean_growth(&setup, p, &times)?,
        ExperimentKind::VarianceScaling => estimate_variance_scaling(&setup, p, &times, 0.15, (0.7, 1.3))?,
        ExperimentKind::Fixation => fixation_probe(&setup, p, &times, config.window.unwrap_or(0.5), config.floor)?,
        ExperimentKind::Nonfixation => nonfixation_probe(&setup, p, &times)?,
        ExperimentKind::Deviation => deviation_probe(
            &setup,
            p,
            &times,
            config.c_hat,
            config.quantile.unwrap_or(0.7),
            config.floor.unwrap_or(0.05),
        )?,
        ExperimentKind::Clt => {
            let mut r = normality_test(law, config.horizon, config.samples.unwrap_or(10_000), seed)?;
            let zeta = match &config.zeta {
                Some(z) => Colouring::new(law.dim(), z)?,
                None => Colouring::new(law.dim(), &[(vec![0; law.dim()], 1)])?,
            };
            r.extend(conditional_mean_check(&setup, &zeta, config.horizon)?);
            r
        }
        ExperimentKind::Coupling => {
            let mut r = coupling_pairs(&setup, config.outer_radius.unwrap_or(3), config.horizon)?;
            if !config.radii.is_empty() {
                let outer = config.outer_radius.unwrap_or(12);
                r.extend(sandwich_experiment(&setup, p, outer, &config.radii, config.horizon)?);
            }
            r
        }
        ExperimentKind::Conservative => monochrome_marginal_check(&setup, p, config.horizon)?,
        ExperimentKind::Density => density_estimate(&setup, p, &times, config.box_side.unwrap_or(100))?,
    };
    let pass = all_pass(&records);
    Ok(Report { records, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::fixtures::nn1;

    #[test]
    fn parses_minimal_config() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"horizon": 1.0, "p": 1.0, "replicates": 20}"#).unwrap();
        assert_eq!(c.times(), vec![1.0]);
        assert_eq!(c.variant, VariantKind::Annihilating);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"horizon": 1.0, "bogus": 1}"#).is_err());
    }

    #[test]
    fn mean_growth_experiment_at_full_density() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"horizon": 1.0, "p": 1.0, "replicates": 200, "variant": "monochromatic"}"#,
        )
        .unwrap();
        let report = run_experiment(ExperimentKind::MeanGrowth, &c, &nn1(), 42).unwrap();
        assert!(report.pass);
        assert_eq!(report, run_experiment(ExperimentKind::MeanGrowth, &c, &nn1(), 42).unwrap());
    }

    #[test]
    fn names_round_trip() {
        for (name, kind) in EXPERIMENTS {
            assert_eq!(name.parse::<ExperimentKind>().unwrap(), kind);
        }
        assert!("sandwich-x".parse::<ExperimentKind>().is_err());
    }
}
