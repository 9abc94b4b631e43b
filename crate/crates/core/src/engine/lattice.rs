//! Signed-count lattice state shared by the annihilating and monochromatic
//! processes.

use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::slots::SlotMap;
use super::{Colour, EngineError, Process, COUNT_LIMIT, SITE_LIMIT};
use crate::fenwick::WeightedIndex;
use crate::offspring::{Mode, OffspringLaw};
use crate::rng;
use crate::site::{box_sites, PackedOffset, SiteKey, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Signed counts: positive red, negative blue.
    Annihilating,
    /// Non-negative counts, one colour.
    Monochromatic,
}

/// Sparse map site → signed count with a weighted index over |count|.
#[derive(Clone, Debug)]
pub struct LatticeState {
    dim: usize,
    variant: Variant,
    slots: SlotMap,
    keys: Vec<SiteKey>,
    counts: Vec<i64>,
    free: Vec<u32>,
    weights: WeightedIndex,
    touched: Vec<SiteKey>,
}

impl LatticeState {
    pub fn new(dim: usize, variant: Variant) -> Result<Self, EngineError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(EngineError::UnsupportedLaw { dim, offset: 0 });
        }
        Ok(LatticeState {
            dim,
            variant,
            slots: SlotMap::new(dim),
            keys: Vec::new(),
            counts: Vec::new(),
            free: Vec::new(),
            weights: WeightedIndex::new(),
            touched: Vec::new(),
        })
    }

    /// Builds a state from `(coordinates, count)` pairs; repeated sites add up.
    pub fn from_counts(dim: usize, variant: Variant, entries: &[(Vec<i64>, i64)]) -> Result<Self, EngineError> {
        let mut s = Self::new(dim, variant)?;
        for (coords, c) in entries {
            if coords.len() != dim {
                return Err(EngineError::InvalidInitial(format!("site {coords:?} is not {dim}-dimensional")));
            }
            let key = SiteKey::new(coords)
                .filter(|k| k.within(dim, SITE_LIMIT))
                .ok_or_else(|| EngineError::OutOfRange(format!("{coords:?}")))?;
            s.add(key, *c)?;
        }
        s.touched.clear();
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Number of occupied sites.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.len() == 0
    }

    pub fn total_balls(&self) -> u64 {
        self.weights.total()
    }

    #[inline]
    pub fn count(&self, key: SiteKey) -> i64 {
        self.slots.get(key).map_or(0, |s| self.counts[s as usize])
    }

    pub fn count_at(&self, coords: &[i64]) -> i64 {
        SiteKey::new(coords).map_or(0, |k| self.count(k))
    }

    /// Occupied sites in lexicographic order.
    pub fn sorted_entries(&self) -> Vec<(SiteKey, i64)> {
        let mut v: Vec<_> = self.entries().collect();
        v.sort_unstable_by_key(|e| e.0);
        v
    }

    pub fn entries(&self) -> impl Iterator<Item = (SiteKey, i64)> + '_ {
        self.keys
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c != 0)
            .map(|(&k, &c)| (k, c))
    }

    /// Σ_x count(x) e^{iu·x}.
    pub fn fourier(&self, u: &[f64]) -> Complex<f64> {
        self.entries()
            .map(|(k, c)| {
                let phase: f64 = (0..self.dim).map(|a| u[a] * k.coord(self.dim, a) as f64).sum();
                Complex::from_polar(c as f64, phase)
            })
            .sum()
    }

    /// Adds `delta` at `key`, returning the new count.
    #[inline]
    pub fn add(&mut self, key: SiteKey, delta: i64) -> Result<i64, EngineError> {
        self.touched.push(key);
        match self.slots.get(key) {
            Some(slot) => {
                let slot = slot as usize;
                let new = self.counts[slot] + delta;
                if new.abs() > COUNT_LIMIT {
                    return Err(EngineError::Overflow {
                        site: key.display(self.dim).to_string(),
                    });
                }
                if new == 0 {
                    self.slots.remove(key);
                    self.free.push(slot as u32);
                    self.counts[slot] = 0;
                    self.weights.set(slot, 0);
                } else {
                    self.counts[slot] = new;
                    self.weights.set(slot, new.unsigned_abs());
                }
                Ok(new)
            }
            None if delta == 0 => Ok(0),
            None => {
                if delta.abs() > COUNT_LIMIT {
                    return Err(EngineError::Overflow {
                        site: key.display(self.dim).to_string(),
                    });
                }
                if !key.within(self.dim, SITE_LIMIT) {
                    return Err(EngineError::OutOfRange(key.display(self.dim).to_string()));
                }
                let slot = match self.free.pop() {
                    Some(s) => {
                        let s = s as usize;
                        self.keys[s] = key;
                        self.counts[s] = delta;
                        self.weights.set(s, delta.unsigned_abs());
                        s
                    }
                    None => {
                        self.keys.push(key);
                        self.counts.push(delta);
                        self.weights.push(delta.unsigned_abs())
                    }
                };
                self.slots.insert(key, slot as u32);
                Ok(delta)
            }
        }
    }

    /// Nucleation of a ball of sign `sign` at `site` placing `atom`.
    /// `death` removes the parent first. Records touched sites.
    pub fn apply_event(
        &mut self,
        site: SiteKey,
        sign: i64,
        atom: &[(PackedOffset, u64)],
        death: bool,
    ) -> Result<(), EngineError> {
        self.touched.clear();
        if death {
            self.add(site, -sign)?;
        }
        for &(offset, k) in atom {
            self.add(site.translate(offset), sign * k as i64)?;
        }
        Ok(())
    }

    fn check_slot(&self, key: SiteKey) -> Result<(), EngineError> {
        let Some(slot) = self.slots.get(key) else {
            return Ok(());
        };
        let c = self.counts[slot as usize];
        if c == 0 {
            return Err(EngineError::Invariant(format!(
                "stored zero at {}",
                key.display(self.dim)
            )));
        }
        if self.variant == Variant::Monochromatic && c < 0 {
            return Err(EngineError::Invariant(format!(
                "negative count {c} at {} in monochromatic mode",
                key.display(self.dim)
            )));
        }
        if self.weights.get(slot as usize) != c.unsigned_abs() || self.keys[slot as usize] != key {
            return Err(EngineError::Invariant(format!(
                "index out of sync at {}",
                key.display(self.dim)
            )));
        }
        Ok(())
    }
}

impl Process for LatticeState {
    fn dim(&self) -> usize {
        self.dim
    }

    fn total_balls(&self) -> u64 {
        self.weights.total()
    }

    #[inline]
    fn fire(
        &mut self,
        law: &OffspringLaw,
        atoms: &[Vec<(PackedOffset, u64)>],
        rng: &mut ChaCha8Rng,
    ) -> Result<(SiteKey, Colour, usize), EngineError> {
        let target = rng.gen_range(0..self.weights.total());
        let (slot, _) = self.weights.find(target);
        let site = self.keys[slot];
        let sign = self.counts[slot].signum();
        let atom = if atoms.len() == 1 {
            0
        } else {
            law.sample_index(rng::uniform(rng))
        };
        self.apply_event(site, sign, &atoms[atom], law.mode() == Mode::Death)?;
        let colour = if sign > 0 { Colour::Red } else { Colour::Blue };
        Ok((site, colour, atom))
    }

    fn touched(&self) -> &[SiteKey] {
        &self.touched
    }

    fn check_touched(&self) -> Result<(), EngineError> {
        self.touched.iter().try_for_each(|&k| self.check_slot(k))
    }

    fn check_all(&self) -> Result<(), EngineError> {
        let mut total = 0u64;
        let mut live = 0;
        for (k, c) in self.entries() {
            self.check_slot(k)?;
            if self.slots.get(k).map(|s| self.keys[s as usize]) != Some(k) {
                return Err(EngineError::Invariant(format!("lookup lost {}", k.display(self.dim))));
            }
            total += c.unsigned_abs();
            live += 1;
        }
        if live != self.slots.len() {
            return Err(EngineError::Invariant("stored zero entries".into()));
        }
        if total != self.weights.total() {
            return Err(EngineError::Invariant(format!(
                "total_balls {} differs from Σ|count| = {total}",
                self.weights.total()
            )));
        }
        if self.slots.len() + self.free.len() != self.keys.len() {
            return Err(EngineError::Invariant("slot accounting mismatch".into()));
        }
        Ok(())
    }
}

/// ζ|_r: every site of `[-r, r]^dim` holds one ball, red with probability
/// `p`; blue otherwise (two-type) or empty (monochromatic). Sites are visited
/// in lexicographic order, one uniform each.
pub fn init_bernoulli(
    dim: usize,
    p: f64,
    radius: i64,
    variant: Variant,
    rng: &mut ChaCha8Rng,
) -> Result<LatticeState, EngineError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(EngineError::InvalidInitial(format!("p = {p} is not in [0, 1]")));
    }
    if radius < 0 || radius > SITE_LIMIT {
        return Err(EngineError::InvalidInitial(format!("radius {radius} out of range")));
    }
    let mut s = LatticeState::new(dim, variant)?;
    for coords in box_sites(dim, radius) {
        let red = rng::bernoulli(rng, p);
        let value = match (red, variant) {
            (true, _) => 1,
            (false, Variant::Annihilating) => -1,
            (false, Variant::Monochromatic) => 0,
        };
        if value != 0 {
            s.add(SiteKey::new(&coords).expect("radius checked"), value)?;
        }
    }
    s.touched.clear();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;
    use proptest::prelude::*;

    #[test]
    fn bernoulli_deterministic_cases() {
        let mut rng = replicate_rng(0, 0);
        let s = init_bernoulli(1, 1.0, 2, Variant::Monochromatic, &mut rng).unwrap();
        assert_eq!(s.total_balls(), 5);
        assert!((-2..=2).all(|x| s.count_at(&[x]) == 1));
        let s = init_bernoulli(1, 0.0, 1, Variant::Annihilating, &mut rng).unwrap();
        assert!((-1..=1).all(|x| s.count_at(&[x]) == -1));
        assert_eq!(s.count_at(&[2]), 0);
    }

    #[test]
    fn bernoulli_half_concentrates() {
        let mut rng = replicate_rng(5, 0);
        let r = 60;
        let s = init_bernoulli(2, 0.5, r, Variant::Annihilating, &mut rng).unwrap();
        let n = ((2 * r + 1) * (2 * r + 1)) as f64;
        let reds = s.entries().filter(|e| e.1 > 0).count() as f64;
        assert!((reds / n - 0.5).abs() <= 3.0 / (4.0 * n).sqrt());
    }

    #[test]
    fn overflow_is_detected() {
        let mut s = LatticeState::new(1, Variant::Annihilating).unwrap();
        let k = SiteKey::origin(1);
        s.add(k, COUNT_LIMIT).unwrap();
        assert!(matches!(s.add(k, 1), Err(EngineError::Overflow { .. })));
    }

    #[test]
    fn out_of_range_sites_are_rejected() {
        let far = vec![SITE_LIMIT + 1];
        assert!(matches!(
            LatticeState::from_counts(1, Variant::Annihilating, &[(far, 1)]),
            Err(EngineError::OutOfRange(_))
        ));
    }

    proptest! {
        #[test]
        fn bookkeeping_matches_plain_map(ops in prop::collection::vec((-4i64..4, -3i64..=3), 1..200)) {
            let mut s = LatticeState::new(1, Variant::Annihilating).unwrap();
            let mut plain = std::collections::BTreeMap::<i64, i64>::new();
            for (x, d) in ops {
                s.add(SiteKey::new(&[x]).unwrap(), d).unwrap();
                *plain.entry(x).or_default() += d;
            }
            plain.retain(|_, v| *v != 0);
            s.check_all().unwrap();
            let got: Vec<(i64, i64)> = s.sorted_entries().into_iter().map(|(k, c)| (k.coord(1, 0), c)).collect();
            let want: Vec<(i64, i64)> = plain.into_iter().collect();
            prop_assert_eq!(got, want);
        }
    }
}
