//! Conservative three-colour process: opposite colours merge into purple.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use super::slots::SlotMap;
use super::{Colour, EngineError, LatticeState, Process, COUNT_LIMIT, SITE_LIMIT};
use crate::fenwick::WeightedIndex;
use crate::offspring::{Mode, OffspringLaw};
use crate::rng;
use crate::site::{PackedOffset, SiteKey};

const RED: usize = 0;
const BLUE: usize = 1;
const PURPLE: usize = 2;

/// Red, blue and purple counts per site, plus a shadow signed process that
/// follows the annihilation rule on the same events. The shadow is compared
/// with `red − blue` at every touched site after every event.
#[derive(Clone, Debug)]
pub struct TriState {
    dim: usize,
    slots: SlotMap,
    keys: Vec<SiteKey>,
    counts: Vec<[u64; 3]>,
    free: Vec<u32>,
    weights: WeightedIndex,
    touched: Vec<SiteKey>,
    shadow: FxHashMap<SiteKey, i64>,
    violations: u64,
}

impl TriState {
    /// Converts a two-type state; purple starts empty.
    pub fn from_two_type(initial: &LatticeState) -> Result<Self, EngineError> {
        let mut s = TriState {
            dim: initial.dim(),
            slots: SlotMap::new(initial.dim()),
            keys: Vec::new(),
            counts: Vec::new(),
            free: Vec::new(),
            weights: WeightedIndex::new(),
            touched: Vec::new(),
            shadow: FxHashMap::default(),
            violations: 0,
        };
        for (key, c) in initial.sorted_entries() {
            let colour = if c > 0 { RED } else { BLUE };
            s.put(key, colour, c.unsigned_abs() as i64)?;
            s.shadow.insert(key, c);
        }
        s.touched.clear();
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn get(&self, key: SiteKey) -> [u64; 3] {
        self.slots.get(key).map_or([0; 3], |s| self.counts[s as usize])
    }

    pub fn red(&self, key: SiteKey) -> u64 {
        self.get(key)[RED]
    }

    pub fn blue(&self, key: SiteKey) -> u64 {
        self.get(key)[BLUE]
    }

    pub fn purple(&self, key: SiteKey) -> u64 {
        self.get(key)[PURPLE]
    }

    /// Z = R − B.
    pub fn z(&self, key: SiteKey) -> i64 {
        let c = self.get(key);
        c[RED] as i64 - c[BLUE] as i64
    }

    /// R + P, the monochromatic process started from the red balls.
    pub fn red_plus_purple(&self, key: SiteKey) -> u64 {
        let c = self.get(key);
        c[RED] + c[PURPLE]
    }

    /// B + P, the monochromatic process started from the blue balls.
    pub fn blue_plus_purple(&self, key: SiteKey) -> u64 {
        let c = self.get(key);
        c[BLUE] + c[PURPLE]
    }

    /// Value of the independently maintained annihilating process.
    pub fn shadow_z(&self, key: SiteKey) -> i64 {
        self.shadow.get(&key).copied().unwrap_or(0)
    }

    /// Number of (event, site) pairs at which Z ≠ R − B or red and blue
    /// coexisted.
    pub fn violations(&self) -> u64 {
        self.violations
    }

    pub fn total_balls(&self) -> u64 {
        self.weights.total()
    }

    pub fn total_purple(&self) -> u64 {
        self.counts.iter().map(|c| c[PURPLE]).sum()
    }

    /// Adds `delta` balls of one colour at `key`.
    fn put(&mut self, key: SiteKey, colour: usize, delta: i64) -> Result<(), EngineError> {
        self.touched.push(key);
        let slot = match self.slots.get(key) {
            Some(s) => s as usize,
            None => {
                if delta == 0 {
                    return Ok(());
                }
                if !key.within(self.dim, SITE_LIMIT) {
                    return Err(EngineError::OutOfRange(key.display(self.dim).to_string()));
                }
                let s = match self.free.pop() {
                    Some(s) => {
                        let s = s as usize;
                        self.keys[s] = key;
                        self.counts[s] = [0; 3];
                        s
                    }
                    None => {
                        self.keys.push(key);
                        self.counts.push([0; 3]);
                        self.weights.push(0)
                    }
                };
                self.slots.insert(key, s as u32);
                s
            }
        };
        let c = &mut self.counts[slot];
        let new = c[colour] as i64 + delta;
        if new < 0 {
            return Err(EngineError::Invariant(format!(
                "negative colour count at {}",
                key.display(self.dim)
            )));
        }
        if new > COUNT_LIMIT {
            return Err(EngineError::Overflow {
                site: key.display(self.dim).to_string(),
            });
        }
        c[colour] = new as u64;
        let w = c[RED] + c[BLUE] + c[PURPLE];
        self.weights.set(slot, w);
        if w == 0 {
            self.slots.remove(key);
            self.free.push(slot as u32);
        }
        Ok(())
    }

    /// Arrival of `k` balls of `colour` at `key`, merging with the opposite
    /// colour one-for-one.
    fn arrive(&mut self, key: SiteKey, colour: usize, k: u64) -> Result<(), EngineError> {
        if colour == PURPLE {
            return self.put(key, PURPLE, k as i64);
        }
        let opposite = 1 - colour;
        let m = k.min(self.get(key)[opposite]);
        if m > 0 {
            self.put(key, PURPLE, m as i64)?;
            self.put(key, opposite, -(m as i64))?;
        }
        self.put(key, colour, (k - m) as i64)
    }

    fn shadow_add(&mut self, key: SiteKey, delta: i64) {
        let e = self.shadow.entry(key).or_insert(0);
        *e += delta;
        if *e == 0 {
            self.shadow.remove(&key);
        }
    }

    fn check_site(&self, key: SiteKey) -> bool {
        let c = self.get(key);
        c[RED].min(c[BLUE]) == 0 && self.shadow_z(key) == c[RED] as i64 - c[BLUE] as i64
    }
}

impl Process for TriState {
    fn dim(&self) -> usize {
        self.dim
    }

    fn total_balls(&self) -> u64 {
        self.weights.total()
    }

    fn fire(
        &mut self,
        law: &OffspringLaw,
        atoms: &[Vec<(PackedOffset, u64)>],
        rng: &mut ChaCha8Rng,
    ) -> Result<(SiteKey, Colour, usize), EngineError> {
        let target = rng.gen_range(0..self.weights.total());
        let (slot, rem) = self.weights.find(target);
        let site = self.keys[slot];
        let c = self.counts[slot];
        let colour = if rem < c[RED] {
            RED
        } else if rem < c[RED] + c[BLUE] {
            BLUE
        } else {
            PURPLE
        };
        let atom = if atoms.len() == 1 {
            0
        } else {
            law.sample_index(rng::uniform(rng))
        };
        self.touched.clear();
        let sign = match colour {
            RED => 1,
            BLUE => -1,
            _ => 0,
        };
        if law.mode() == Mode::Death {
            self.put(site, colour, -1)?;
            self.shadow_add(site, -sign);
        }
        for &(offset, k) in &atoms[atom] {
            let child = site.translate(offset);
            self.arrive(child, colour, k)?;
            if sign != 0 {
                self.shadow_add(child, sign * k as i64);
            }
        }
        let bad = self.touched.iter().filter(|&&k| !self.check_site(k)).count();
        self.violations += bad as u64;
        let colour = [Colour::Red, Colour::Blue, Colour::Purple][colour];
        Ok((site, colour, atom))
    }

    fn touched(&self) -> &[SiteKey] {
        &self.touched
    }

    fn check_touched(&self) -> Result<(), EngineError> {
        for &k in &self.touched {
            if !self.check_site(k) {
                return Err(EngineError::Invariant(format!(
                    "Z ≠ R − B or mixed colours at {}",
                    k.display(self.dim)
                )));
            }
        }
        Ok(())
    }

    fn check_all(&self) -> Result<(), EngineError> {
        let mut total = 0;
        let mut live = 0;
        for (s, &k) in self.keys.iter().enumerate() {
            let c = self.counts[s];
            let w = c.iter().sum::<u64>();
            if w == 0 {
                continue;
            }
            live += 1;
            if self.weights.get(s) != w || self.slots.get(k) != Some(s as u32) {
                return Err(EngineError::Invariant(format!("index out of sync at {}", k.display(self.dim))));
            }
            if !self.check_site(k) {
                return Err(EngineError::Invariant(format!(
                    "Z ≠ R − B or mixed colours at {}",
                    k.display(self.dim)
                )));
            }
            total += w;
        }
        if total != self.weights.total() || live != self.slots.len() {
            return Err(EngineError::Invariant("total_balls mismatch".into()));
        }
        if let Some((k, _)) = self.shadow.iter().find(|(&k, _)| self.slots.get(k).is_none()) {
            return Err(EngineError::Invariant(format!(
                "annihilating process occupies {} but R, B are empty",
                k.display(self.dim)
            )));
        }
        Ok(())
    }
}
