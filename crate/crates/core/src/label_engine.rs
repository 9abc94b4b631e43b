//! Labelled construction: every ball carries a label, every label owns a
//! clock that starts ticking at time 0, and every ring of that clock comes
//! with its own offspring draw. Randomness is addressed by
//! `(seed, label, ring index)`, so processes started from different initial
//! configurations but sharing a seed are coupled exactly.
//!
//! When an arriving ball meets balls of the opposite colour it annihilates
//! the one with the lexicographically smallest label.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::Write;

use rustc_hash::FxHashMap;
use serde_json::{json, Value};
use thiserror::Error;

use crate::engine::{Colour, MAX_ENGINE_OFFSET};
use crate::offspring::{Mode, OffspringLaw};
use crate::rng::{label_stream_id, LabelRandomness};
use crate::site::{SiteKey, COORD_LIMIT, MAX_DIM};

/// Default event budget for one labelled run.
pub const DEFAULT_LABEL_BUDGET: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("Budget: event budget of {0} exceeded")]
    Budget(u64),
    #[error("invalid initial configuration: {0}")]
    InvalidInitial(String),
    #[error("PrecondOrder: {0}")]
    PrecondOrder(String),
    #[error("OrderViolation at t = {time}, site {site}: {detail}")]
    OrderViolation { time: f64, site: String, detail: String },
    #[error("NotFound: no stabilization radius up to {0}")]
    NotFound(i64),
    #[error("labelled engine supports dimensions 1..={MAX_DIM} and offsets up to {MAX_ENGINE_OFFSET}")]
    UnsupportedLaw,
    #[error("dimension mismatch: configuration has dimension {config}, law has {law}")]
    DimensionMismatch { config: usize, law: usize },
    #[error("site {0} leaves the representable lattice box")]
    OutOfRange(String),
}

/// Ball identity: the site of the ancestor at time 0 and the child indices
/// along the family line. Ordering is lexicographic, origin first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    pub origin: SiteKey,
    pub path: Vec<u32>,
}

impl Label {
    pub fn root(origin: SiteKey) -> Self {
        Label { origin, path: Vec::new() }
    }

    pub fn child(&self, index: u32) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(index);
        Label { origin: self.origin, path }
    }

    fn stream(&self) -> u64 {
        label_stream_id(self.origin.raw(), &self.path)
    }

    /// `[[origin coords], i1, i2, ...]`.
    pub fn to_json(&self, dim: usize) -> Value {
        let mut v = vec![json!(self.origin.coords(dim))];
        v.extend(self.path.iter().map(|&i| json!(i)));
        Value::Array(v)
    }
}

/// Finitely supported configuration with values in {−1, 0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Colouring {
    dim: usize,
    values: BTreeMap<SiteKey, i8>,
}

impl Colouring {
    pub fn empty(dim: usize) -> Self {
        Colouring { dim, values: BTreeMap::new() }
    }

    /// Rejects values outside {−1, 0, 1} and sites listed twice.
    pub fn new(dim: usize, entries: &[(Vec<i64>, i64)]) -> Result<Self, LabelError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(LabelError::InvalidInitial(format!("dimension {dim} unsupported")));
        }
        let mut c = Colouring::empty(dim);
        let mut seen = BTreeSet::new();
        for (coords, v) in entries {
            if coords.len() != dim {
                return Err(LabelError::InvalidInitial(format!("site {coords:?} is not {dim}-dimensional")));
            }
            if !(-1..=1).contains(v) {
                return Err(LabelError::InvalidInitial(format!("value {v} at {coords:?} is not in {{-1, 0, 1}}")));
            }
            let key = site_key(coords)?;
            if !seen.insert(key) {
                return Err(LabelError::InvalidInitial(format!("site {coords:?} listed twice")));
            }
            c.set(key, *v as i8);
        }
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, key: SiteKey) -> i8 {
        self.values.get(&key).copied().unwrap_or(0)
    }

    pub fn set(&mut self, key: SiteKey, v: i8) {
        if v == 0 {
            self.values.remove(&key);
        } else {
            self.values.insert(key, v);
        }
    }

    /// Non-zero sites in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (SiteKey, i8)> + '_ {
        self.values.iter().map(|(&k, &v)| (k, v))
    }

    /// Pointwise `self ≤ other`; returns the first offending site otherwise.
    pub fn first_excess(&self, other: &Colouring) -> Option<SiteKey> {
        let sites: BTreeSet<SiteKey> = self.values.keys().chain(other.values.keys()).copied().collect();
        sites.into_iter().find(|&k| self.get(k) > other.get(k))
    }

    /// Keeps `self` on the sup-norm ball of radius `r` and sets every other
    /// site of the ball of radius `outer` to `fill`.
    pub fn truncate_fill(&self, r: i64, outer: i64, fill: i8) -> Colouring {
        let mut out = Colouring::empty(self.dim);
        for coords in crate::site::box_sites(self.dim, outer) {
            let key = SiteKey::new(&coords).expect("box within range");
            let v = if key.sup_norm(self.dim) <= r { self.get(key) } else { fill };
            out.set(key, v);
        }
        out
    }
}

fn site_key(coords: &[i64]) -> Result<SiteKey, LabelError> {
    SiteKey::new(coords)
        .filter(|k| k.within(coords.len(), COORD_LIMIT - MAX_ENGINE_OFFSET))
        .ok_or_else(|| LabelError::OutOfRange(format!("{coords:?}")))
}

/// Active labels at one site; all of one colour.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteBalls {
    pub colour: Colour,
    pub labels: BTreeSet<Label>,
}

#[derive(Clone, Debug, PartialEq)]
struct Ring {
    time: f64,
    label: Label,
    index: u64,
}

impl Eq for Ring {}

impl Ord for Ring {
    // reversed: BinaryHeap pops the earliest ring, ties to the smaller label
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.label.cmp(&self.label))
    }
}

impl PartialOrd for Ring {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One placed child.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub label: Label,
    pub site: SiteKey,
    /// False when the child annihilated an opposite ball on arrival.
    pub survives: bool,
}

/// One ring of an active label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEvent {
    pub time: f64,
    pub label: Label,
    pub site: SiteKey,
    pub colour: Colour,
    pub ring: u64,
    pub draw: usize,
    pub placements: Vec<Placement>,
    /// Opposite labels removed, in placement order.
    pub annihilated: Vec<Label>,
}

impl LabelEvent {
    pub fn to_json(&self, dim: usize) -> Value {
        json!({
            "t": self.time,
            "label": self.label.to_json(dim),
            "site": self.site.coords(dim),
            "colour": self.colour,
            "ring": self.ring,
            "draw": self.draw,
            "placements": self.placements.iter().map(|p| json!({
                "label": p.label.to_json(dim),
                "site": p.site.coords(dim),
                "survives": p.survives,
            })).collect::<Vec<_>>(),
            "annihilated": self.annihilated.iter().map(|l| l.to_json(dim)).collect::<Vec<_>>(),
        })
    }

    /// Sites whose active sets changed.
    pub fn touched(&self) -> impl Iterator<Item = SiteKey> + '_ {
        std::iter::once(self.site).chain(self.placements.iter().map(|p| p.site))
    }
}

/// Writes one JSON object per event.
pub fn write_event_log<W: Write>(log: &[LabelEvent], dim: usize, mut out: W) -> std::io::Result<()> {
    for e in log {
        serde_json::to_writer(&mut out, &e.to_json(dim))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Active sets per site plus the pending rings.
#[derive(Clone, Debug)]
pub struct LabelledState {
    dim: usize,
    time: f64,
    events: u64,
    sites: BTreeMap<SiteKey, SiteBalls>,
    /// Active label → (site, children placed so far).
    active: FxHashMap<Label, (SiteKey, u32)>,
    queue: BinaryHeap<Ring>,
}

impl LabelledState {
    /// Places one ball labelled `(z)` at every non-zero site of `initial`.
    pub fn new(initial: &Colouring, law: &OffspringLaw, seed: &LabelRandomness) -> Result<Self, LabelError> {
        check_law(law, initial.dim())?;
        let mut s = LabelledState {
            dim: initial.dim(),
            time: 0.0,
            events: 0,
            sites: BTreeMap::new(),
            active: FxHashMap::default(),
            queue: BinaryHeap::new(),
        };
        for (key, v) in initial.iter() {
            let colour = if v > 0 { Colour::Red } else { Colour::Blue };
            let label = Label::root(key);
            s.activate(label.clone(), key, colour, 0.0, seed);
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn site(&self, key: SiteKey) -> Option<&SiteBalls> {
        self.sites.get(&key)
    }

    /// Occupied sites in lexicographic order.
    pub fn sites(&self) -> impl Iterator<Item = (SiteKey, &SiteBalls)> + '_ {
        self.sites.iter().map(|(&k, b)| (k, b))
    }

    /// Active labels of `colour` at `key`, empty when none.
    pub fn active_set(&self, key: SiteKey, colour: Colour) -> impl Iterator<Item = &Label> + '_ {
        self.sites
            .get(&key)
            .filter(|b| b.colour == colour)
            .into_iter()
            .flat_map(|b| b.labels.iter())
    }

    /// Signed count at `key`.
    pub fn z(&self, key: SiteKey) -> i64 {
        self.sites.get(&key).map_or(0, |b| b.colour.sign() * b.labels.len() as i64)
    }

    pub fn total_balls(&self) -> usize {
        self.active.len()
    }

    /// Collapses to `(site, signed count)` in lexicographic order.
    pub fn signed_counts(&self) -> Vec<(SiteKey, i64)> {
        self.sites.keys().map(|&k| (k, self.z(k))).collect()
    }

    /// Time of the next ring of an active label, discarding stale entries.
    pub fn next_time(&mut self) -> Option<f64> {
        while let Some(top) = self.queue.peek() {
            if self.active.contains_key(&top.label) {
                return Some(top.time);
            }
            self.queue.pop();
        }
        None
    }

    /// First ring strictly after `born`, scanning the clock from time 0.
    fn schedule_from(&mut self, label: Label, born: f64, seed: &LabelRandomness) {
        let stream = label.stream();
        let mut t = 0.0;
        let mut index = 0;
        loop {
            t += seed.ring(stream, index).gap;
            if t > born {
                break;
            }
            index += 1;
        }
        self.queue.push(Ring { time: t, label, index });
    }

    fn activate(&mut self, label: Label, site: SiteKey, colour: Colour, born: f64, seed: &LabelRandomness) {
        self.sites
            .entry(site)
            .or_insert_with(|| SiteBalls { colour, labels: BTreeSet::new() })
            .labels
            .insert(label.clone());
        self.active.insert(label.clone(), (site, 0));
        self.schedule_from(label, born, seed);
    }

    fn deactivate(&mut self, label: &Label, site: SiteKey) {
        self.active.remove(label);
        if let Some(b) = self.sites.get_mut(&site) {
            b.labels.remove(label);
            if b.labels.is_empty() {
                self.sites.remove(&site);
            }
        }
    }

    /// Processes the next ring. The caller checks [`Self::next_time`] first.
    pub fn fire(&mut self, law: &OffspringLaw, seed: &LabelRandomness) -> Option<LabelEvent> {
        self.next_time()?;
        let Ring { time, label, index } = self.queue.pop().expect("peeked");
        let (site, mut child) = self.active[&label];
        let colour = self.sites[&site].colour;
        self.time = time;
        self.events += 1;
        let stream = label.stream();
        let draw = law.sample_index(seed.ring(stream, index).offspring);
        let death = law.mode() == Mode::Death;
        if death {
            self.deactivate(&label, site);
        } else {
            let next = time + seed.ring(stream, index + 1).gap;
            self.queue.push(Ring { time: next, label: label.clone(), index: index + 1 });
        }
        let mut placements = Vec::new();
        let mut annihilated = Vec::new();
        for (offset, count) in law.atoms()[draw].config.entries() {
            let coords: Vec<i64> = (0..self.dim).map(|a| site.coord(self.dim, a) + offset[a]).collect();
            let target = SiteKey::new(&coords).expect("engine offsets keep sites packable");
            for _ in 0..*count {
                child += 1;
                let child_label = label.child(child);
                let opposite = self
                    .sites
                    .get(&target)
                    .filter(|b| b.colour != colour)
                    .map(|b| b.labels.first().expect("non-empty").clone());
                let survives = match opposite {
                    Some(victim) => {
                        self.deactivate(&victim, target);
                        annihilated.push(victim);
                        false
                    }
                    None => {
                        self.activate(child_label.clone(), target, colour, time, seed);
                        true
                    }
                };
                placements.push(Placement { label: child_label, site: target, survives });
            }
        }
        if let Some(entry) = self.active.get_mut(&label) {
            entry.1 = child;
        }
        Some(LabelEvent {
            time,
            label,
            site,
            colour,
            ring: index,
            draw,
            placements,
            annihilated,
        })
    }

    /// Each label active once, sites single-coloured and non-empty.
    pub fn check(&self) -> Result<(), String> {
        let mut n = 0;
        for (&k, b) in &self.sites {
            if b.labels.is_empty() {
                return Err(format!("empty site {}", k.display(self.dim)));
            }
            for l in &b.labels {
                if self.active.get(l).map(|e| e.0) != Some(k) {
                    return Err(format!("label {l:?} misplaced"));
                }
            }
            n += b.labels.len();
        }
        if n != self.active.len() {
            return Err("active map out of sync".into());
        }
        Ok(())
    }
}

fn check_law(law: &OffspringLaw, dim: usize) -> Result<(), LabelError> {
    if law.dim() != dim {
        return Err(LabelError::DimensionMismatch { config: dim, law: law.dim() });
    }
    if law.max_offset() > MAX_ENGINE_OFFSET {
        return Err(LabelError::UnsupportedLaw);
    }
    Ok(())
}

/// Final state and full event log of a labelled run.
#[derive(Clone, Debug)]
pub struct LabelledRun {
    pub state: LabelledState,
    pub log: Vec<LabelEvent>,
}

/// Runs the labelled dynamics from `initial` up to `horizon`.
pub fn run_labelled(
    initial: &Colouring,
    law: &OffspringLaw,
    horizon: f64,
    seed: &LabelRandomness,
    budget: u64,
) -> Result<LabelledRun, LabelError> {
    let mut state = LabelledState::new(initial, law, seed)?;
    let mut log = Vec::new();
    while state.next_time().is_some_and(|t| t <= horizon) {
        if state.events >= budget {
            return Err(LabelError::Budget(budget));
        }
        log.extend(state.fire(law, seed));
    }
    Ok(LabelledRun { state, log })
}

/// Steps every process in lockstep by event time up to `horizon`. After each
/// instant `check` sees all states and the sites touched at that instant.
fn run_lockstep<F>(
    states: &mut [LabelledState],
    logs: &mut [Vec<LabelEvent>],
    law: &OffspringLaw,
    horizon: f64,
    seed: &LabelRandomness,
    budget: u64,
    mut check: F,
) -> Result<(), LabelError>
where
    F: FnMut(f64, &[LabelledState], &BTreeSet<SiteKey>) -> Result<(), LabelError>,
{
    let mut touched = BTreeSet::new();
    loop {
        let next = states
            .iter_mut()
            .filter_map(|s| s.next_time())
            .min_by(f64::total_cmp);
        let Some(t) = next.filter(|&t| t <= horizon) else {
            return Ok(());
        };
        touched.clear();
        for (s, log) in states.iter_mut().zip(logs.iter_mut()) {
            if s.next_time() == Some(t) {
                if s.events >= budget {
                    return Err(LabelError::Budget(budget));
                }
                let e = s.fire(law, seed).expect("ring pending");
                touched.extend(e.touched());
                log.push(e);
            }
        }
        check(t, states, &touched)?;
    }
}

/// First failure of a coupling containment.
#[derive(Clone, Debug, PartialEq)]
pub struct ContainmentViolation {
    pub time: f64,
    pub site: SiteKey,
    pub colour: Colour,
}

/// Result of [`couple`].
#[derive(Clone, Debug)]
pub struct CoupledRuns {
    pub lower: LabelledRun,
    pub upper: LabelledRun,
    pub violations: Vec<ContainmentViolation>,
}

fn containment_failures(lower: &LabelledState, upper: &LabelledState, site: SiteKey) -> Option<Colour> {
    let red_ok = lower.active_set(site, Colour::Red).all(|l| upper.active_set(site, Colour::Red).any(|m| m == l));
    if !red_ok {
        return Some(Colour::Red);
    }
    let blue_ok = upper.active_set(site, Colour::Blue).all(|l| lower.active_set(site, Colour::Blue).any(|m| m == l));
    (!blue_ok).then_some(Colour::Blue)
}

/// Runs `lower ≤ upper` on shared label randomness and records every instant
/// at which a red set of `lower` is not contained in that of `upper`, or a
/// blue set of `upper` is not contained in that of `lower`.
pub fn couple(
    lower: &Colouring,
    upper: &Colouring,
    law: &OffspringLaw,
    horizon: f64,
    seed: &LabelRandomness,
    budget: u64,
) -> Result<CoupledRuns, LabelError> {
    if lower.dim() != upper.dim() {
        return Err(LabelError::PrecondOrder("configurations differ in dimension".into()));
    }
    if let Some(k) = lower.first_excess(upper) {
        return Err(LabelError::PrecondOrder(format!("lower exceeds upper at {}", k.display(lower.dim()))));
    }
    let mut states = [
        LabelledState::new(lower, law, seed)?,
        LabelledState::new(upper, law, seed)?,
    ];
    let mut logs = [Vec::new(), Vec::new()];
    let mut violations = Vec::new();
    let initial_sites: BTreeSet<SiteKey> = lower.iter().chain(upper.iter()).map(|(k, _)| k).collect();
    for &site in &initial_sites {
        if let Some(colour) = containment_failures(&states[0], &states[1], site) {
            violations.push(ContainmentViolation { time: 0.0, site, colour });
        }
    }
    run_lockstep(&mut states, &mut logs, law, horizon, seed, budget, |t, s, touched| {
        for &site in touched {
            if let Some(colour) = containment_failures(&s[0], &s[1], site) {
                violations.push(ContainmentViolation { time: t, site, colour });
            }
        }
        Ok(())
    })?;
    let [ls, us] = states;
    let [ll, ul] = logs;
    Ok(CoupledRuns {
        lower: LabelledRun { state: ls, log: ll },
        upper: LabelledRun { state: us, log: ul },
        violations,
    })
}

/// Value of `Z_z` as a right-continuous step function: `(time, value)` at
/// time 0 and at every change.
pub type Trajectory = Vec<(f64, i64)>;

/// Origin trajectories of the three sandwich runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Sandwich {
    pub minus: Trajectory,
    pub truncated: Trajectory,
    pub plus: Trajectory,
    /// Whether the outer two trajectories differ somewhere on [0, T].
    pub outer_disagree: bool,
    pub events: u64,
}

fn record(traj: &mut Trajectory, t: f64, v: i64) {
    if traj.last().map(|e| e.1) != Some(v) {
        traj.push((t, v));
    }
}

/// The three initial configurations ζ^{−,r}, ζ|_r, ζ^{+,r} on the ball of
/// radius `outer`.
pub fn sandwich_initials(zeta: &Colouring, r: i64, outer: i64) -> [Colouring; 3] {
    [
        zeta.truncate_fill(r, outer, -1),
        zeta.truncate_fill(r, outer, 0),
        zeta.truncate_fill(r, outer, 1),
    ]
}

/// Three coupled runs from ζ^{−,r} ≤ ζ|_r ≤ ζ^{+,r}. Pointwise ordering of
/// the signed counts is checked at every touched site after every event;
/// a failure is an engine bug.
pub fn sandwich(
    zeta: &Colouring,
    r: i64,
    outer: i64,
    law: &OffspringLaw,
    horizon: f64,
    seed: &LabelRandomness,
    budget: u64,
) -> Result<Sandwich, LabelError> {
    sandwich_at(zeta, SiteKey::origin(zeta.dim()), r, outer, law, horizon, seed, budget)
}

#[allow(clippy::too_many_arguments)]
fn sandwich_at(
    zeta: &Colouring,
    watch: SiteKey,
    r: i64,
    outer: i64,
    law: &OffspringLaw,
    horizon: f64,
    seed: &LabelRandomness,
    budget: u64,
) -> Result<Sandwich, LabelError> {
    if r > outer {
        return Err(LabelError::InvalidInitial(format!("r = {r} exceeds outer radius {outer}")));
    }
    let initials = sandwich_initials(zeta, r, outer);
    let mut states = [
        LabelledState::new(&initials[0], law, seed)?,
        LabelledState::new(&initials[1], law, seed)?,
        LabelledState::new(&initials[2], law, seed)?,
    ];
    let mut logs = [Vec::new(), Vec::new(), Vec::new()];
    let mut trajs: [Trajectory; 3] = Default::default();
    for (traj, s) in trajs.iter_mut().zip(&states) {
        traj.push((0.0, s.z(watch)));
    }
    let dim = zeta.dim();
    run_lockstep(&mut states, &mut logs, law, horizon, seed, budget, |t, s, touched| {
        for &site in touched {
            let (a, b, c) = (s[0].z(site), s[1].z(site), s[2].z(site));
            if !(a <= b && b <= c) {
                return Err(LabelError::OrderViolation {
                    time: t,
                    site: site.display(dim).to_string(),
                    detail: format!("{a} <= {b} <= {c} fails"),
                });
            }
        }
        if touched.contains(&watch) {
            for (traj, st) in trajs.iter_mut().zip(s) {
                record(traj, t, st.z(watch));
            }
        }
        Ok(())
    })?;
    let [minus, truncated, plus] = trajs;
    let outer_disagree = minus != plus;
    Ok(Sandwich {
        minus,
        truncated,
        plus,
        outer_disagree,
        events: states.iter().map(|s| s.events).sum(),
    })
}

/// Smallest `r ≤ r_max` (starting from the sup-norm of `site`) at which
/// `Z_site` agrees for ζ^{−,r} and ζ^{+,r} throughout [0, T].
#[allow(clippy::too_many_arguments)]
pub fn stabilization_radius(
    zeta: &Colouring,
    site: SiteKey,
    outer: i64,
    law: &OffspringLaw,
    horizon: f64,
    seed: &LabelRandomness,
    r_max: i64,
    budget: u64,
) -> Result<i64, LabelError> {
    let start = site.sup_norm(zeta.dim());
    for r in start..=r_max.min(outer) {
        if !sandwich_at(zeta, site, r, outer, law, horizon, seed, budget)?.outer_disagree {
            return Ok(r);
        }
    }
    Err(LabelError::NotFound(r_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{LatticeState, Variant};
    use crate::offspring::fixtures::{death1, nn1, nn2};
    use proptest::prelude::*;
    use rand::Rng;

    fn col(entries: &[(i64, i64)]) -> Colouring {
        let v: Vec<_> = entries.iter().map(|&(x, c)| (vec![x], c)).collect();
        Colouring::new(1, &v).unwrap()
    }

    fn key(x: i64) -> SiteKey {
        SiteKey::new(&[x]).unwrap()
    }

    fn log_bytes(run: &LabelledRun) -> Vec<u8> {
        let mut out = Vec::new();
        write_event_log(&run.log, run.state.dim(), &mut out).unwrap();
        out
    }

    fn random_colouring(rng: &mut impl rand::Rng, radius: i64) -> Colouring {
        let v: Vec<_> = (-radius..=radius).map(|x| (vec![x], rng.gen_range(-1..=1))).collect();
        Colouring::new(1, &v).unwrap()
    }

    #[test]
    fn single_red_ball_stays_red() {
        let law = nn1();
        for s in 0..5 {
            let run = run_labelled(&col(&[(0, 1)]), &law, 1.5, &LabelRandomness::from_u64(s), DEFAULT_LABEL_BUDGET)
                .unwrap();
            assert!(run.state.total_balls() >= 1);
            assert!(run.state.sites().all(|(_, b)| b.colour == Colour::Red));
            assert!(run.log.iter().all(|e| e.annihilated.is_empty()));
        }
    }

    #[test]
    fn rejects_invalid_initials() {
        assert!(Colouring::new(1, &[(vec![0], 1), (vec![0], -1)]).is_err());
        assert!(Colouring::new(1, &[(vec![0], 2)]).is_err());
        assert!(Colouring::new(1, &[(vec![0, 1], 1)]).is_err());
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let law = nn1();
        let z = col(&[(-2, 1), (-1, -1), (0, 1), (1, -1), (3, -1)]);
        let seed = LabelRandomness::from_u64(11);
        let a = run_labelled(&z, &law, 1.5, &seed, DEFAULT_LABEL_BUDGET).unwrap();
        let b = run_labelled(&z, &law, 1.5, &seed, DEFAULT_LABEL_BUDGET).unwrap();
        assert!(!a.log.is_empty());
        assert_eq!(log_bytes(&a), log_bytes(&b));
        let c = run_labelled(&z, &law, 1.5, &LabelRandomness::from_u64(12), DEFAULT_LABEL_BUDGET).unwrap();
        assert_ne!(log_bytes(&a), log_bytes(&c));
    }

    #[test]
    fn budget_is_enforced() {
        let err = run_labelled(&col(&[(0, 1)]), &nn1(), 10.0, &LabelRandomness::from_u64(1), 50).unwrap_err();
        assert_eq!(err, LabelError::Budget(50));
    }

    #[test]
    fn labels_are_unique_and_tie_break_is_smallest() {
        let law = nn1();
        let z = random_colouring(&mut crate::rng::replicate_rng(4, 0), 4);
        let run = run_labelled(&z, &law, 1.5, &LabelRandomness::from_u64(4), DEFAULT_LABEL_BUDGET).unwrap();
        // replay the log: every created label is new, every victim is the
        // smallest opposite label present at that instant
        let mut sets: BTreeMap<SiteKey, (Colour, BTreeSet<Label>)> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (k, v) in z.iter() {
            let c = if v > 0 { Colour::Red } else { Colour::Blue };
            sets.insert(k, (c, BTreeSet::from([Label::root(k)])));
            seen.insert(Label::root(k));
        }
        let mut victims = 0;
        for e in &run.log {
            let mut removed = e.annihilated.iter();
            for p in &e.placements {
                assert!(seen.insert(p.label.clone()), "label reused");
                let entry = sets.entry(p.site).or_insert((e.colour, BTreeSet::new()));
                if entry.1.is_empty() {
                    entry.0 = e.colour;
                }
                if p.survives {
                    assert_eq!(entry.0, e.colour);
                    entry.1.insert(p.label.clone());
                } else {
                    let victim = removed.next().unwrap();
                    assert_ne!(entry.0, e.colour);
                    assert_eq!(entry.1.first(), Some(victim));
                    entry.1.remove(victim);
                    victims += 1;
                }
            }
            assert!(removed.next().is_none());
        }
        assert!(victims > 0);
        for (k, (c, labels)) in sets.into_iter().filter(|(_, s)| !s.1.is_empty()) {
            let b = run.state.site(k).unwrap();
            assert_eq!((b.colour, &b.labels), (c, &labels));
        }
        run.state.check().unwrap();
    }

    #[test]
    fn collapse_matches_aggregate_engine() {
        for law in [nn1(), death1()] {
            let z = random_colouring(&mut crate::rng::replicate_rng(9, 1), 5);
            let run = run_labelled(&z, &law, 1.5, &LabelRandomness::from_u64(9), DEFAULT_LABEL_BUDGET).unwrap();
            let init: Vec<_> = z.iter().map(|(k, v)| (k.coords(1), v as i64)).collect();
            let mut agg = LatticeState::from_counts(1, Variant::Annihilating, &init).unwrap();
            let atoms = law.packed_atoms().unwrap();
            for e in &run.log {
                assert_eq!(agg.count(e.site).signum(), e.colour.sign());
                agg.apply_event(e.site, e.colour.sign(), &atoms[e.draw], law.mode() == Mode::Death).unwrap();
            }
            let a: Vec<_> = agg.sorted_entries();
            assert_eq!(a, run.state.signed_counts());
        }
    }

    #[test]
    fn equal_configurations_couple_trivially() {
        let law = nn1();
        let z = random_colouring(&mut crate::rng::replicate_rng(2, 2), 3);
        let seed = LabelRandomness::from_u64(2);
        let c = couple(&z, &z, &law, 2.0, &seed, DEFAULT_LABEL_BUDGET).unwrap();
        assert!(c.violations.is_empty());
        assert_eq!(log_bytes(&c.lower), log_bytes(&c.upper));
    }

    #[test]
    fn opposite_single_balls_couple() {
        let law = nn1();
        for s in 0..10 {
            let c = couple(&col(&[(0, -1)]), &col(&[(0, 1)]), &law, 2.0, &LabelRandomness::from_u64(s), 100_000)
                .unwrap();
            assert!(c.violations.is_empty());
        }
    }

    #[test]
    fn unordered_pair_is_rejected() {
        let err = couple(&col(&[(0, 1)]), &col(&[(0, -1)]), &nn1(), 1.0, &LabelRandomness::from_u64(0), 10);
        assert!(matches!(err, Err(LabelError::PrecondOrder(_))));
    }

    #[test]
    fn couple_in_two_dimensions() {
        let law = nn2();
        let lo = Colouring::new(2, &[(vec![0, 0], -1), (vec![1, 0], 1), (vec![0, 1], -1)]).unwrap();
        let hi = Colouring::new(2, &[(vec![0, 0], 1), (vec![1, 0], 1), (vec![0, 1], 0)]).unwrap();
        let c = couple(&lo, &hi, &law, 1.0, &LabelRandomness::from_u64(5), DEFAULT_LABEL_BUDGET).unwrap();
        assert!(c.violations.is_empty());
    }

    #[test]
    fn full_radius_sandwich_coincides() {
        let law = nn1();
        let z = random_colouring(&mut crate::rng::replicate_rng(3, 3), 6);
        let s = sandwich(&z, 6, 6, &law, 1.0, &LabelRandomness::from_u64(3), DEFAULT_LABEL_BUDGET).unwrap();
        assert_eq!(s.minus, s.truncated);
        assert_eq!(s.plus, s.truncated);
        assert!(!s.outer_disagree);
    }

    #[test]
    fn zero_horizon_stabilizes_at_site_norm() {
        let law = nn1();
        let z = random_colouring(&mut crate::rng::replicate_rng(3, 4), 6);
        let seed = LabelRandomness::from_u64(0);
        assert_eq!(stabilization_radius(&z, key(0), 6, &law, 0.0, &seed, 6, 1000), Ok(0));
        assert_eq!(stabilization_radius(&z, key(-2), 6, &law, 0.0, &seed, 6, 1000), Ok(2));
    }

    #[test]
    fn median_radius_shrinks_with_horizon() {
        let law = nn1();
        let outer = 12;
        let median = |horizon: f64| {
            let mut radii: Vec<i64> = (0..100u64)
                .map(|k| {
                    let mut rng = crate::rng::replicate_rng(77, k);
                    let v: Vec<_> = (-outer..=outer)
                        .map(|x| (vec![x], if rng.gen_bool(0.5) { 1 } else { -1 }))
                        .collect();
                    let z = Colouring::new(1, &v).unwrap();
                    let seed = LabelRandomness::from_u64(k);
                    match stabilization_radius(&z, key(0), outer, &law, horizon, &seed, outer, 1_000_000) {
                        Ok(r) => r,
                        Err(LabelError::NotFound(_)) => outer + 1,
                        Err(e) => panic!("{e}"),
                    }
                })
                .collect();
            radii.sort_unstable();
            radii[radii.len() / 2]
        };
        let (m05, m1, m2) = (median(0.5), median(1.0), median(2.0));
        assert!(m05 <= m1 && m1 <= m2, "medians {m05} {m1} {m2}");
        assert!(m05 < m2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ordered_pairs_never_violate(s in any::<u64>()) {
            let mut rng = crate::rng::replicate_rng(s, 0);
            let a = random_colouring(&mut rng, 3);
            let b = random_colouring(&mut rng, 3);
            let lo = Colouring::new(1, &(-3..=3).map(|x| (vec![x], a.get(key(x)).min(b.get(key(x))) as i64)).collect::<Vec<_>>()).unwrap();
            let hi = Colouring::new(1, &(-3..=3).map(|x| (vec![x], a.get(key(x)).max(b.get(key(x))) as i64)).collect::<Vec<_>>()).unwrap();
            let c = couple(&lo, &hi, &nn1(), 2.0, &LabelRandomness::from_u64(s), DEFAULT_LABEL_BUDGET).unwrap();
            prop_assert!(c.violations.is_empty(), "{:?}", c.violations.first());
        }

        #[test]
        fn agreement_persists_with_radius(s in any::<u64>()) {
            let z = random_colouring(&mut crate::rng::replicate_rng(s, 1), 8);
            let seed = LabelRandomness::from_u64(s);
            let mut agreed = false;
            for r in 0..=8 {
                let w = sandwich(&z, r, 8, &nn1(), 1.0, &seed, DEFAULT_LABEL_BUDGET).unwrap();
                prop_assert!(!(agreed && w.outer_disagree), "agreement at r-1 lost at r = {}", r);
                agreed |= !w.outer_disagree;
            }
        }
    }
}
