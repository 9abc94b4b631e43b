//! `abrw`: command-line front end.
//!
//! Exit codes: 0 success or all PASS, 2 invalid law or usage, 3 runtime
//! error, 4 statistical FAIL or coupling violation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abrw_core::analytics::{
    parseval_sum, predictions, pz_table, scaling_exponent, tail_bound, PzTable,
};
use abrw_core::engine::{
    init_bernoulli, run_conservative, run_until, write_trajectory_csv, LatticeState, Probe, SimClock,
    TrajectoryRow, TriState, TrustRegion, Variant,
};
use abrw_core::harness::{
    coupling_pairs, run_experiment, write_records, write_summary_csv, ExperimentConfig, ExperimentKind,
    VariantKind,
};
use abrw_core::label_engine::{couple, run_labelled, write_event_log, Colouring, DEFAULT_LABEL_BUDGET};
use abrw_core::offspring::{check_irreducible, spectral_gap_scan, MomentKind, OffspringLaw};
use abrw_core::rng::{replicate_rng, replicate_seed, LabelRandomness, DEFAULT_SEED};
use abrw_core::{parse_law, SiteKey};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

/// Environment override for the master seed.
const SEED_ENV: &str = "ABRW_SEED";

#[derive(Parser, Debug)]
#[command(name = "abrw", version, about = "Annihilating branching random walks: simulation, analytics and checks")]
struct Cli {
    /// Progress messages on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Offspring law documents.
    #[command(subcommand)]
    Law(LawCommand),
    /// Deterministic analytic quantities of a law.
    Analytics(AnalyticsArgs),
    /// Simulate the process described by a config and export trajectories.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
        /// Output directory (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the labelled coupling of `zeta ≤ zeta_prime` from a config.
    Couple {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Run a named acceptance experiment.
    Experiment {
        #[arg(value_parser = experiment_names())]
        name: String,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
        /// Worker threads (default: machine parallelism).
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory for records.jsonl and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum LawCommand {
    /// Validate a law document and report its moments and spectral gap.
    Check { file: PathBuf },
}

#[derive(Args, Debug)]
struct SeedArg {
    /// Master seed; overrides the environment and the config.
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AnalyticsTask {
    Pz,
    Parseval,
    Variance,
    Tailbound,
    Exponent,
}

#[derive(Args, Debug)]
struct AnalyticsArgs {
    task: AnalyticsTask,
    #[arg(long)]
    law: PathBuf,
    /// Time (for `exponent`, the start of the fitted decade).
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Half side of the exported p_z table.
    #[arg(long, default_value_t = 10)]
    radius: i64,
    /// Truncation radius of the tail bound.
    #[arg(long, default_value_t = 8)]
    r: i64,
    /// Horizon of the tail bound.
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    /// Aliasing tolerance of the p_z table.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Colouring density used by `variance`.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
}

fn experiment_names() -> Vec<&'static str> {
    abrw_core::harness::EXPERIMENTS.iter().map(|e| e.0).collect()
}

/// Failure carrying its exit code.
struct Exit(u8, anyhow::Error);

fn runtime(e: anyhow::Error) -> Exit {
    Exit(3, e)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Law(LawCommand::Check { file }) => law_check(&file),
        Command::Analytics(args) => analytics(&args).map_err(runtime),
        Command::Simulate { config, seed, out } => simulate(&config, seed.seed, out.as_deref(), cli.verbose),
        Command::Couple { config, seed } => couple_cmd(&config, seed.seed),
        Command::Experiment {
            name,
            config,
            seed,
            threads,
            out,
        } => experiment(&name, &config, seed.seed, threads, out.as_deref(), cli.verbose),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn law_check(path: &Path) -> Result<u8, Exit> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(|e| Exit(2, e))?;
    let law = parse_law(&text).map_err(|e| Exit(2, e.into()))?;
    let gap = spectral_gap_scan::<f64>(&law, 64);
    let report = json!({
        "dimension": law.dim(),
        "mode": law.mode(),
        "lambda": law.lambda(),
        "moments": {
            "norm1": law.moment(MomentKind::Norm(1)),
            "norm2": law.moment(MomentKind::Norm(2)),
            "norm3": law.moment(MomentKind::Norm(3)),
            "first_displacement_squared": law.moment(MomentKind::FirstDisplacementSquared),
            "second_displacement": law.moment(MomentKind::SecondDisplacement),
        },
        "irreducible": check_irreducible(&law),
        "spectral_gap": match &gap {
            Ok(g) => json!({"min_gap": g.min_gap, "quadratic_coefficient": g.quadratic_coefficient}),
            Err(e) => json!({"error": e.to_string()}),
        },
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    match gap {
        Ok(_) => Ok(0),
        Err(e) => Err(Exit(2, e.into())),
    }
}

fn load_law(path: &Path) -> Result<OffspringLaw> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_law(&text).with_context(|| format!("law {}", path.display()))
}

fn analytics(a: &AnalyticsArgs) -> Result<u8> {
    let law = load_law(&a.law)?;
    let mut out = Vec::new();
    match a.task {
        AnalyticsTask::Pz => {
            let table: PzTable<f64> = pz_table(&law, a.t, a.radius, a.tol)?;
            table.write_csv(&mut out)?;
        }
        AnalyticsTask::Parseval => {
            let v: f64 = parseval_sum(&law, a.t)?;
            writeln!(out, "{}", json!({"t": a.t, "parseval": v}))?;
        }
        AnalyticsTask::Variance => {
            let p = predictions(&law, a.p, a.t, a.r)?;
            writeln!(out, "{}", serde_json::to_string(&p)?)?;
        }
        AnalyticsTask::Tailbound => {
            let table: PzTable<f64> = pz_table(&law, a.horizon, a.r.max(1), a.tol)?;
            let v: f64 = tail_bound(&law, &table, a.r)?;
            writeln!(out, "{}", json!({"r": a.r, "T": a.horizon, "tail_bound": v}))?;
        }
        AnalyticsTask::Exponent => {
            let times: Vec<f64> = (0..6).map(|i| a.t * 10f64.powf(i as f64 / 5.0)).collect();
            let mut sup = Vec::new();
            let mut squares = Vec::new();
            for &t in &times {
                let table: PzTable<f64> = pz_table(&law, t, a.radius.max(table_reach(&law, t)), a.tol)?;
                sup.push((t, table.sup()));
                squares.push((t, parseval_sum::<f64>(&law, t)?));
            }
            let s = scaling_exponent(&sup)?;
            let q = scaling_exponent(&squares)?;
            writeln!(
                out,
                "{}",
                json!({
                    "t_min": times[0],
                    "t_max": times[times.len() - 1],
                    "sup_pz_slope": s.slope,
                    "sup_pz_slope_se": s.se,
                    "parseval_slope": q.slope,
                    "parseval_slope_se": q.se,
                    "expected": -(law.dim() as f64) / 2.0,
                })
            )?;
        }
    }
    std::io::stdout().write_all(&out)?;
    Ok(0)
}

/// Table half side covering the bulk of the walk at time `t`.
fn table_reach(law: &OffspringLaw, t: f64) -> i64 {
    let spread = law.mean_intensity().total() * law.max_offset().max(1) as f64;
    (10.0 * (spread * t).sqrt()).ceil() as i64 + 10
}

/// A config with its law and provenance.
struct Loaded {
    config: ExperimentConfig,
    law: OffspringLaw,
    sha256: String,
}

fn load_config(path: &Path) -> Result<Loaded> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let sha256 = format!("{:x}", Sha256::digest(&bytes));
    let config: ExperimentConfig =
        serde_json::from_slice(&bytes).with_context(|| format!("config {}", path.display()))?;
    let law = match (&config.law, &config.law_path) {
        (Some(doc), None) => OffspringLaw::from_document(doc)?,
        (None, Some(rel)) => {
            let base = path.parent().unwrap_or(Path::new("."));
            load_law(&base.join(rel))?
        }
        (Some(_), Some(_)) => bail!("config gives both `law` and `law_path`"),
        (None, None) => bail!("config needs `law` or `law_path`"),
    };
    config.validate()?;
    Ok(Loaded { config, law, sha256 })
}

/// flag (or environment, resolved by clap) > config > default.
fn effective_seed(flag: Option<u64>, config: &ExperimentConfig) -> u64 {
    flag.or(config.seed).unwrap_or(DEFAULT_SEED)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| anyhow!(e.error)).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes named files into `dir`, or concatenates them on stdout.
fn emit(out: Option<&Path>, files: &[(&str, Vec<u8>)]) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            for (name, bytes) in files {
                write_atomic(&dir.join(name), bytes)?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            for (_, bytes) in files {
                stdout.write_all(bytes)?;
            }
        }
    }
    Ok(())
}

fn meta(seed: u64, sha256: &str, extra: serde_json::Value) -> Vec<u8> {
    let mut v = json!({"seed": seed, "config_sha256": sha256});
    if let (Some(m), Some(e)) = (v.as_object_mut(), extra.as_object()) {
        m.extend(e.clone());
    }
    let mut s = serde_json::to_vec(&v).expect("serializable");
    s.push(b'\n');
    s
}

fn observed_sites(config: &ExperimentConfig, dim: usize) -> Result<Vec<(Vec<i64>, SiteKey)>> {
    let coords = if config.trusted_sites.is_empty() {
        vec![vec![0; dim]]
    } else {
        config.trusted_sites.clone()
    };
    coords
        .into_iter()
        .map(|c| {
            if c.len() != dim {
                bail!("trusted site {c:?} is not in dimension {dim}");
            }
            let k = SiteKey::new(&c).ok_or_else(|| anyhow!("site {c:?} out of range"))?;
            Ok((c, k))
        })
        .collect()
}

/// Samples observables at the configured sites at each probe time.
struct RowProbe<'a> {
    replicate: u64,
    seed: u64,
    sites: &'a [(Vec<i64>, SiteKey)],
    rows: Vec<TrajectoryRow>,
}

impl RowProbe<'_> {
    fn push(&mut self, t: f64, site: &[i64], value: i64, observable: &str) {
        self.rows.push(TrajectoryRow {
            replicate: self.replicate,
            seed: self.seed,
            time: t,
            site: site.to_vec(),
            value,
            observable: observable.into(),
        });
    }
}

impl Probe<LatticeState> for RowProbe<'_> {
    fn sample(&mut self, _: usize, t: f64, state: &LatticeState) {
        for i in 0..self.sites.len() {
            let (c, k) = self.sites[i].clone();
            self.push(t, &c, state.count(k), "Z");
        }
    }
}

impl Probe<TriState> for RowProbe<'_> {
    fn sample(&mut self, _: usize, t: f64, state: &TriState) {
        for i in 0..self.sites.len() {
            let (c, k) = self.sites[i].clone();
            self.push(t, &c, state.z(k), "Z");
            self.push(t, &c, state.red_plus_purple(k) as i64, "R+P");
            self.push(t, &c, state.blue_plus_purple(k) as i64, "B+P");
        }
    }
}

fn simulate(path: &Path, seed_flag: Option<u64>, out: Option<&Path>, verbose: u8) -> Result<u8, Exit> {
    let loaded = load_config(path).map_err(runtime)?;
    let seed = effective_seed(seed_flag, &loaded.config);
    let (c, law) = (&loaded.config, &loaded.law);
    let dim = law.dim();
    let mut times = c.times();
    times.sort_by(f64::total_cmp);
    let radius = match c.init_radius {
        Some(r) => TrustRegion::certify(law, r, c.horizon),
        None => TrustRegion::choose(law, c.horizon, 1e-3),
    }
    .map_err(|e| runtime(e.into()))?;
    if verbose > 0 {
        eprintln!("seed {seed}, initial radius {}, epsilon {:.3e}", radius.init_radius, radius.epsilon);
    }
    if c.variant == VariantKind::Labelled {
        let mut rng = replicate_rng(seed, 0);
        let lattice = init_bernoulli(dim, c.p, radius.init_radius, Variant::Annihilating, &mut rng)
            .map_err(|e| runtime(e.into()))?;
        let entries: Vec<(Vec<i64>, i64)> =
            lattice.sorted_entries().into_iter().map(|(k, v)| (k.coords(dim), v)).collect();
        let initial = Colouring::new(dim, &entries).map_err(|e| runtime(e.into()))?;
        let randomness = LabelRandomness::from_u64(replicate_seed(seed, 0));
        let run = run_labelled(&initial, law, c.horizon, &randomness, c.budget.unwrap_or(DEFAULT_LABEL_BUDGET))
            .map_err(|e| runtime(e.into()))?;
        let mut log = Vec::new();
        write_event_log(&run.log, dim, &mut log).map_err(|e| runtime(e.into()))?;
        let info = meta(seed, &loaded.sha256, json!({"events": run.log.len(), "epsilon": radius.epsilon}));
        emit(out, &[("meta.json", info), ("events.jsonl", log)]).map_err(runtime)?;
        return Ok(0);
    }
    let sites = observed_sites(c, dim).map_err(runtime)?;
    let variant = match c.variant {
        VariantKind::Monochromatic => Variant::Monochromatic,
        _ => Variant::Annihilating,
    };
    let mut rows = Vec::new();
    let mut events = 0u64;
    for k in 0..c.replicates as u64 {
        let mut rng = replicate_rng(seed, k);
        let initial =
            init_bernoulli(dim, c.p, radius.init_radius, variant, &mut rng).map_err(|e| runtime(e.into()))?;
        let mut clock = SimClock::new(rng);
        if let Some(b) = c.budget {
            clock = clock.with_budget(b);
        }
        let mut probe = RowProbe {
            replicate: k,
            seed: replicate_seed(seed, k),
            sites: &sites,
            rows: Vec::new(),
        };
        let summary = if c.variant == VariantKind::Conservative {
            run_conservative(&initial, law, &mut clock, c.horizon, &times, &mut probe).map(|r| r.1)
        } else {
            let mut state = initial;
            run_until(&mut state, law, &mut clock, c.horizon, &times, &mut probe)
        }
        .map_err(|e| runtime(e.into()))?;
        events += summary.events;
        rows.extend(probe.rows);
    }
    let mut csv = Vec::new();
    write_trajectory_csv(&mut rows, &mut csv).map_err(|e| runtime(e.into()))?;
    let info = meta(
        seed,
        &loaded.sha256,
        json!({"replicates": c.replicates, "init_radius": radius.init_radius, "epsilon": radius.epsilon, "events": events}),
    );
    emit(out, &[("meta.json", info), ("trajectory.csv", csv)]).map_err(runtime)?;
    Ok(0)
}

fn couple_cmd(path: &Path, seed_flag: Option<u64>) -> Result<u8, Exit> {
    let loaded = load_config(path).map_err(runtime)?;
    let seed = effective_seed(seed_flag, &loaded.config);
    let (c, law) = (&loaded.config, &loaded.law);
    let dim = law.dim();
    let report = match (&c.zeta, &c.zeta_prime) {
        (Some(lo), Some(hi)) => {
            let lower = Colouring::new(dim, lo).map_err(|e| runtime(e.into()))?;
            let upper = Colouring::new(dim, hi).map_err(|e| runtime(e.into()))?;
            let randomness = LabelRandomness::from_u64(seed);
            let budget = c.budget.unwrap_or(DEFAULT_LABEL_BUDGET);
            let runs = couple(&lower, &upper, law, c.horizon, &randomness, budget).map_err(|e| runtime(e.into()))?;
            let violations: Vec<_> = runs
                .violations
                .iter()
                .map(|v| json!({"time": v.time, "site": v.site.coords(dim), "colour": format!("{:?}", v.colour)}))
                .collect();
            json!({
                "seed": seed,
                "config_sha256": loaded.sha256,
                "horizon": c.horizon,
                "events_lower": runs.lower.log.len(),
                "events_upper": runs.upper.log.len(),
                "violations": violations,
                "pass": runs.violations.is_empty(),
            })
        }
        (None, None) => {
            // random ordered pairs
            let setup = c.setup(law, seed);
            let records = coupling_pairs(&setup, c.outer_radius.unwrap_or(3), c.horizon).map_err(|e| runtime(e.into()))?;
            let pass = abrw_core::harness::all_pass(&records);
            json!({"seed": seed, "config_sha256": loaded.sha256, "records": records, "pass": pass})
        }
        _ => return Err(runtime(anyhow!("config must give both `zeta` and `zeta_prime`, or neither"))),
    };
    println!("{report}");
    Ok(if report["pass"] == true { 0 } else { 4 })
}

fn experiment(
    name: &str,
    path: &Path,
    seed_flag: Option<u64>,
    threads: Option<usize>,
    out: Option<&Path>,
    verbose: u8,
) -> Result<u8, Exit> {
    let kind: ExperimentKind = name.parse().map_err(|e: abrw_core::harness::HarnessError| Exit(2, e.into()))?;
    let loaded = load_config(path).map_err(runtime)?;
    let seed = effective_seed(seed_flag, &loaded.config);
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| runtime(e.into()))?;
    }
    if verbose > 0 {
        eprintln!("experiment {name}, seed {seed}, config sha256 {}", loaded.sha256);
    }
    let report = run_experiment(kind, &loaded.config, &loaded.law, seed).map_err(|e| runtime(e.into()))?;
    let mut jsonl = Vec::new();
    write_records(&report.records, &mut jsonl).map_err(|e| runtime(e.into()))?;
    let mut csv = Vec::new();
    write_summary_csv(&report.records, &mut csv).map_err(|e| runtime(e.into()))?;
    let verdict = if report.pass { "PASS" } else { "FAIL" };
    let info = meta(seed, &loaded.sha256, json!({"experiment": name, "verdict": verdict}));
    match out {
        Some(_) => {
            emit(out, &[("meta.json", info.clone()), ("records.jsonl", jsonl), ("summary.csv", csv)]).map_err(runtime)?;
            print!("{}", String::from_utf8_lossy(&info));
        }
        None => emit(None, &[("meta.json", info), ("records.jsonl", jsonl)]).map_err(runtime)?,
    }
    Ok(if report.pass { 0 } else { 4 })
}
