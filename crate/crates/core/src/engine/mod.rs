//! Event-driven simulation of the aggregate (count-level) processes.
//!
//! Balls of one colour at one site are exchangeable, so the engines track
//! counts only. The next event happens after an `Exponential(total)` delay
//! and involves a ball chosen uniformly, which is the same law as running a
//! unit-rate clock on every ball.

mod lattice;
mod slots;
mod trajectory;
mod tristate;
mod trust;

pub use lattice::{init_bernoulli, LatticeState, Variant};
pub use trajectory::{write_trajectory_csv, TrajectoryRow};
pub use tristate::TriState;
pub use trust::TrustRegion;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;
use thiserror::Error;

use crate::offspring::OffspringLaw;
use crate::site::{PackedOffset, SiteKey, COORD_LIMIT, MAX_DIM};

/// Counts are aborted once their magnitude would pass this bound.
pub const COUNT_LIMIT: i64 = 1 << 62;

/// Largest offset the engines accept; keeps every reachable site packable.
pub const MAX_ENGINE_OFFSET: i64 = 1 << 10;

/// New sites must lie inside this sup-norm box.
pub(crate) const SITE_LIMIT: i64 = COORD_LIMIT - MAX_ENGINE_OFFSET;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("Overflow: count at site {site} would exceed 2^62")]
    Overflow { site: String },
    #[error("Extinct: no balls left")]
    Extinct,
    #[error("Budget: event budget of {0} exceeded")]
    Budget(u64),
    #[error("site {0} leaves the representable lattice box")]
    OutOfRange(String),
    #[error("engines support dimensions 1..={MAX_DIM} and offsets up to {MAX_ENGINE_OFFSET}; got dimension {dim}, max offset {offset}")]
    UnsupportedLaw { dim: usize, offset: i64 },
    #[error("dimension mismatch: state has dimension {state}, law has {law}")]
    DimensionMismatch { state: usize, law: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid initial configuration: {0}")]
    InvalidInitial(String),
}

/// Ball colour. Purple only occurs in the conservative process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Colour {
    #[serde(rename = "R")]
    Red,
    #[serde(rename = "B")]
    Blue,
    #[serde(rename = "P")]
    Purple,
}

impl Colour {
    /// +1 for red, −1 for blue, 0 for purple.
    pub fn sign(self) -> i64 {
        match self {
            Colour::Red => 1,
            Colour::Blue => -1,
            Colour::Purple => 0,
        }
    }
}

/// One nucleation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub site: SiteKey,
    pub colour: Colour,
    /// Index of the offspring atom drawn.
    pub atom: usize,
}

/// Clock and randomness of one replicate.
#[derive(Clone, Debug)]
pub struct SimClock {
    pub time: f64,
    pub event_count: u64,
    pub budget: Option<u64>,
    rng: ChaCha8Rng,
}

impl SimClock {
    pub fn new(rng: ChaCha8Rng) -> Self {
        SimClock {
            time: 0.0,
            event_count: 0,
            budget: None,
            rng,
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// A count-level process the event loop can drive.
pub trait Process {
    fn dim(&self) -> usize;

    fn total_balls(&self) -> u64;

    /// Chooses a uniform ball and performs its nucleation.
    fn fire(
        &mut self,
        law: &OffspringLaw,
        atoms: &[Vec<(PackedOffset, u64)>],
        rng: &mut ChaCha8Rng,
    ) -> Result<(SiteKey, Colour, usize), EngineError>;

    /// Sites modified by the last event.
    fn touched(&self) -> &[SiteKey];

    /// Invariants at the touched sites only.
    fn check_touched(&self) -> Result<(), EngineError>;

    /// Full invariant sweep.
    fn check_all(&self) -> Result<(), EngineError>;
}

/// Observation hooks for [`run_until`].
pub trait Probe<S: ?Sized> {
    /// Called at sample time `time` (index into the sample grid) with the
    /// state after all events strictly before `time`.
    fn sample(&mut self, _index: usize, _time: f64, _state: &S) {}

    /// Called after every event.
    fn event(&mut self, _record: &EventRecord, _state: &S) {}
}

impl<S: ?Sized> Probe<S> for () {}

/// Probe built from a sampling closure.
pub struct SampleFn<F>(pub F);

impl<S: ?Sized, F: FnMut(usize, f64, &S)> Probe<S> for SampleFn<F> {
    fn sample(&mut self, index: usize, time: f64, state: &S) {
        (self.0)(index, time, state)
    }
}

/// Two probes driven together.
pub struct Both<'a, A, B>(pub &'a mut A, pub &'a mut B);

impl<S: ?Sized, A: Probe<S>, B: Probe<S>> Probe<S> for Both<'_, A, B> {
    fn sample(&mut self, index: usize, time: f64, state: &S) {
        self.0.sample(index, time, state);
        self.1.sample(index, time, state);
    }

    fn event(&mut self, record: &EventRecord, state: &S) {
        self.0.event(record, state);
        self.1.event(record, state);
    }
}

pub(crate) fn engine_atoms(law: &OffspringLaw) -> Result<&[Vec<(PackedOffset, u64)>], EngineError> {
    match law.packed_atoms() {
        Some(atoms) if law.max_offset() <= MAX_ENGINE_OFFSET => Ok(atoms),
        _ => Err(EngineError::UnsupportedLaw {
            dim: law.dim(),
            offset: law.max_offset(),
        }),
    }
}

fn check_dims<P: Process>(state: &P, law: &OffspringLaw) -> Result<(), EngineError> {
    if state.dim() != law.dim() {
        return Err(EngineError::DimensionMismatch {
            state: state.dim(),
            law: law.dim(),
        });
    }
    Ok(())
}

/// One event: advance the clock by `Exponential(total)` and nucleate.
pub fn step<P: Process>(
    state: &mut P,
    law: &OffspringLaw,
    clock: &mut SimClock,
) -> Result<EventRecord, EngineError> {
    check_dims(state, law)?;
    let atoms = engine_atoms(law)?;
    let n = state.total_balls();
    if n == 0 {
        return Err(EngineError::Extinct);
    }
    clock.time += clock.rng.sample::<f64, _>(Exp1) / n as f64;
    clock.event_count += 1;
    let (site, colour, atom) = state.fire(law, atoms, &mut clock.rng)?;
    if cfg!(debug_assertions) {
        state.check_touched()?;
    }
    Ok(EventRecord {
        time: clock.time,
        site,
        colour,
        atom,
    })
}

/// How a call to [`run_until`] ended.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSummary {
    pub events: u64,
    pub extinct: bool,
}

/// Runs until `horizon`, firing `probe.sample` at each of `sample_times`
/// (sorted, those beyond the horizon are skipped). Extinction before the
/// horizon is a normal termination.
pub fn run_until<P: Process, Q: Probe<P> + ?Sized>(
    state: &mut P,
    law: &OffspringLaw,
    clock: &mut SimClock,
    horizon: f64,
    sample_times: &[f64],
    probe: &mut Q,
) -> Result<RunSummary, EngineError> {
    check_dims(state, law)?;
    let atoms = engine_atoms(law)?;
    debug_assert!(sample_times.windows(2).all(|w| w[0] <= w[1]));
    let start_events = clock.event_count;
    let mut next = sample_times.partition_point(|&s| s < clock.time);
    loop {
        let n = state.total_balls();
        let tau = if n == 0 {
            f64::INFINITY
        } else {
            clock.time + clock.rng.sample::<f64, _>(Exp1) / n as f64
        };
        while next < sample_times.len() && sample_times[next] <= tau && sample_times[next] <= horizon {
            state.check_all()?;
            probe.sample(next, sample_times[next], state);
            next += 1;
        }
        if tau >= horizon {
            clock.time = clock.time.max(horizon);
            return Ok(RunSummary {
                events: clock.event_count - start_events,
                extinct: n == 0,
            });
        }
        clock.time = tau;
        clock.event_count += 1;
        if let Some(b) = clock.budget {
            if clock.event_count > b {
                return Err(EngineError::Budget(b));
            }
        }
        let (site, colour, atom) = state.fire(law, atoms, &mut clock.rng)?;
        if cfg!(debug_assertions) {
            state.check_touched()?;
        }
        let record = EventRecord {
            time: tau,
            site,
            colour,
            atom,
        };
        probe.event(&record, state);
    }
}

/// Simulates the merge dynamics from a two-type initial state.
pub fn run_conservative<Q: Probe<TriState> + ?Sized>(
    initial: &LatticeState,
    law: &OffspringLaw,
    clock: &mut SimClock,
    horizon: f64,
    sample_times: &[f64],
    probe: &mut Q,
) -> Result<(TriState, RunSummary), EngineError> {
    let mut state = TriState::from_two_type(initial)?;
    let summary = run_until(&mut state, law, clock, horizon, sample_times, probe)?;
    Ok((state, summary))
}

/// Colour changes in a stream of signed counts at one site.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColourChanges {
    pub count: u64,
    pub times: Vec<f64>,
}

/// Counts changes of the last nonzero sign; zero interludes do not reset it.
pub fn colour_change_count<I: IntoIterator<Item = (f64, i64)>>(stream: I) -> ColourChanges {
    let mut out = ColourChanges::default();
    let mut last = 0i64;
    for (time, value) in stream {
        let s = value.signum();
        if s != 0 {
            if last != 0 && s != last {
                out.count += 1;
                out.times.push(time);
            }
            last = s;
        }
    }
    out
}

/// Follows the signed count at one site through a run, online.
#[derive(Clone, Debug)]
pub struct SiteWatch {
    site: SiteKey,
    value: i64,
    last_sign: i64,
    /// Start of the current red stretch, if the site is red now.
    red_since: Option<f64>,
    pub changes: ColourChanges,
}

impl SiteWatch {
    pub fn new(site: SiteKey, initial: i64) -> Self {
        SiteWatch {
            site,
            value: initial,
            last_sign: initial.signum(),
            red_since: (initial > 0).then_some(0.0),
            changes: ColourChanges::default(),
        }
    }

    pub fn value(&self) -> i64 {
        self.value
    }

    /// True if the site has been red continuously since at most `from`.
    pub fn red_since_at_most(&self, from: f64) -> bool {
        matches!(self.red_since, Some(s) if s <= from)
    }

    fn observe(&mut self, time: f64, value: i64) {
        if value == self.value {
            return;
        }
        if value > 0 && self.value <= 0 {
            self.red_since = Some(time);
        } else if value <= 0 {
            self.red_since = None;
        }
        self.value = value;
        let s = value.signum();
        if s != 0 {
            if self.last_sign != 0 && s != self.last_sign {
                self.changes.count += 1;
                self.changes.times.push(time);
            }
            self.last_sign = s;
        }
    }
}

impl Probe<LatticeState> for SiteWatch {
    fn event(&mut self, record: &EventRecord, state: &LatticeState) {
        if state.touched().contains(&self.site) {
            self.observe(record.time, state.count(self.site));
        }
    }
}

impl Probe<TriState> for SiteWatch {
    fn event(&mut self, record: &EventRecord, state: &TriState) {
        if state.touched().contains(&self.site) {
            self.observe(record.time, state.z(self.site));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::fixtures::{death1, nn1};
    use crate::rng::replicate_rng;

    fn key(x: i64) -> SiteKey {
        SiteKey::new(&[x]).unwrap()
    }

    #[test]
    fn single_event_nn1() {
        let law = nn1();
        let mut s = LatticeState::from_counts(1, Variant::Annihilating, &[(vec![0], 1)]).unwrap();
        let mut clock = SimClock::new(replicate_rng(1, 0));
        let rec = step(&mut s, &law, &mut clock).unwrap();
        assert!(rec.time > 0.0);
        assert_eq!(rec.site, key(0));
        assert_eq!(s.total_balls(), 3);
        for x in -1..=1 {
            assert_eq!(s.count(key(x)), 1);
        }
    }

    #[test]
    fn annihilation_by_signed_sum() {
        let law = nn1();
        let mut s =
            LatticeState::from_counts(1, Variant::Annihilating, &[(vec![0], 1), (vec![1], -1)]).unwrap();
        let atoms = engine_atoms(&law).unwrap();
        s.apply_event(key(0), 1, &atoms[0], false).unwrap();
        assert_eq!(s.count(key(-1)), 1);
        assert_eq!(s.count(key(0)), 1);
        assert_eq!(s.count(key(1)), 0);
        assert_eq!(s.total_balls(), 2);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn horizon_zero_is_a_no_op() {
        let law = nn1();
        let mut s = LatticeState::from_counts(1, Variant::Monochromatic, &[(vec![0], 1)]).unwrap();
        let mut clock = SimClock::new(replicate_rng(1, 0));
        let summary = run_until(&mut s, &law, &mut clock, 0.0, &[], &mut ()).unwrap();
        assert_eq!(summary.events, 0);
        assert_eq!(s.total_balls(), 1);
    }

    #[test]
    fn extinction_is_reported() {
        let law = death1();
        let mut s = LatticeState::from_counts(1, Variant::Monochromatic, &[]).unwrap();
        let mut clock = SimClock::new(replicate_rng(1, 0));
        assert_eq!(step(&mut s, &law, &mut clock), Err(EngineError::Extinct));
        let mut seen = Vec::new();
        let mut probe = SampleFn(|i: usize, _t: f64, st: &LatticeState| seen.push((i, st.total_balls())));
        let summary = run_until(&mut s, &law, &mut clock, 5.0, &[1.0, 2.0, 9.0], &mut probe).unwrap();
        assert!(summary.extinct);
        assert_eq!(seen, vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn budget_is_enforced() {
        let law = nn1();
        let mut s = LatticeState::from_counts(1, Variant::Monochromatic, &[(vec![0], 1)]).unwrap();
        let mut clock = SimClock::new(replicate_rng(1, 0)).with_budget(10);
        let err = run_until(&mut s, &law, &mut clock, 50.0, &[], &mut ()).unwrap_err();
        assert_eq!(err, EngineError::Budget(10));
    }

    #[test]
    fn colour_change_rule() {
        let stream = |v: &[i64]| v.iter().enumerate().map(|(i, &x)| (i as f64, x)).collect::<Vec<_>>();
        assert_eq!(colour_change_count(stream(&[1, 1, 0, 1])).count, 0);
        let c = colour_change_count(stream(&[1, 0, -1, 1]));
        assert_eq!(c.count, 2);
        assert_eq!(c.times, vec![2.0, 3.0]);
    }

    #[test]
    fn site_watch_tracks_red_stretches() {
        let mut w = SiteWatch::new(key(0), -1);
        assert!(!w.red_since_at_most(10.0));
        w.observe(1.0, 0);
        w.observe(2.0, 3);
        assert!(w.red_since_at_most(2.5));
        assert!(!w.red_since_at_most(1.5));
        w.observe(3.0, -2);
        w.observe(4.0, 1);
        assert_eq!(w.changes.count, 3);
        assert_eq!(w.changes.times, vec![2.0, 3.0, 4.0]);
        assert!(!w.red_since_at_most(3.5));
    }
}
