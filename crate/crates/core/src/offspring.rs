//! Offspring laws: validation, sampling, moments and Fourier transforms.
//!
//! A law is a finite list of atoms, each a probability together with a
//! finite configuration of child offsets. In *stay* mode the parent survives
//! a nucleation; in *death* mode it is removed and the spectral quantities
//! are computed for the net change `φ' = φ − δ₀`, so callers never need to
//! branch on the mode.

use std::collections::BTreeMap;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::site::{PackedOffset, MAX_DIM};

/// Tolerance on the total probability of a law document.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("malformed law document: {0}")]
    Parse(String),
    #[error("NonProbability: atom weights sum to {sum} (must be 1 within {PROBABILITY_TOLERANCE:e})")]
    NonProbability { sum: f64 },
    #[error("Reducible: support offsets generate a subgroup of index {index} in Z^{dim}")]
    Reducible { dim: usize, index: String },
    #[error("BadMode: {0}")]
    BadMode(String),
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
}

/// Nucleation rule for the parent ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Parent remains in place.
    Stay,
    /// Parent is removed, replaced by the drawn configuration.
    Death,
}

/// A finite non-negative configuration: distinct offsets with positive counts,
/// kept sorted lexicographically by offset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    entries: Vec<(Vec<i64>, u64)>,
}

impl Configuration {
    pub fn new(dim: usize, mut entries: Vec<(Vec<i64>, u64)>) -> Result<Self, LawError> {
        for (offset, count) in &entries {
            if offset.len() != dim {
                return Err(LawError::InvalidConfiguration(format!(
                    "offset {offset:?} has dimension {} (expected {dim})",
                    offset.len()
                )));
            }
            if *count == 0 {
                return Err(LawError::InvalidConfiguration(format!(
                    "offset {offset:?} has count 0"
                )));
            }
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(LawError::InvalidConfiguration(format!(
                "duplicate offset {:?}",
                w[0].0
            )));
        }
        Ok(Configuration { entries })
    }

    pub fn entries(&self) -> &[(Vec<i64>, u64)] {
        &self.entries
    }

    /// Total number of balls ‖φ‖.
    pub fn norm(&self) -> u64 {
        self.entries.iter().map(|(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Displacement moment Σ |z|^r φ(z) with the Euclidean norm.
    pub fn displacement_moment(&self, r: i32) -> f64 {
        self.entries
            .iter()
            .map(|(z, c)| {
                let norm = z.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                norm.powi(r) * *c as f64
            })
            .sum()
    }

    /// φ̂(u) = Σ_z e^{iu·z} φ(z).
    pub fn fourier<T: Real>(&self, u: &[T]) -> Complex<T> {
        self.entries
            .iter()
            .map(|(z, c)| {
                let phase = dot(u, z);
                Complex::from_polar(T::of_i64(*c as i64), phase)
            })
            .fold(Complex::new(T::zero(), T::zero()), |a, b| a + b)
    }
}

#[inline]
pub(crate) fn dot<T: Real>(u: &[T], z: &[i64]) -> T {
    u.iter()
        .zip(z)
        .fold(T::zero(), |acc, (&a, &b)| acc + a * T::of_i64(b))
}

/// One atom of Φ.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub probability: f64,
    pub config: Configuration,
}

/// μ(x) = E[φ(x)] together with λ.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanIntensity {
    pub mu: BTreeMap<Vec<i64>, f64>,
    pub lambda: f64,
}

impl MeanIntensity {
    /// ‖μ‖ = Σ_x μ(x) = E‖φ‖.
    pub fn total(&self) -> f64 {
        self.mu.values().sum()
    }
}

/// Moment selector for [`OffspringLaw::moment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentKind {
    /// E‖φ‖^r, r ∈ {1, 2, 3}.
    Norm(u32),
    /// E[m₁(φ)²] with m₁(φ) = Σ |z| φ(z).
    FirstDisplacementSquared,
    /// E[m₂(φ)] with m₂(φ) = Σ |z|² φ(z).
    SecondDisplacement,
}

/// A validated offspring law.
#[derive(Clone, Debug)]
pub struct OffspringLaw {
    dim: usize,
    mode: Mode,
    atoms: Vec<Atom>,
    cumulative: Vec<f64>,
    intensity: MeanIntensity,
    packed: Option<Vec<Vec<(PackedOffset, u64)>>>,
    max_offset: i64,
}

/// JSON law document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawDocument {
    pub dimension: usize,
    pub mode: Mode,
    pub atoms: Vec<AtomDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomDocument {
    pub p: f64,
    pub balls: Vec<BallDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallDocument {
    pub offset: Vec<i64>,
    pub count: u64,
}

/// Parses and validates a JSON law document.
pub fn parse_law(document: &str) -> Result<OffspringLaw, LawError> {
    let doc: LawDocument =
        serde_json::from_str(document).map_err(|e| LawError::Parse(e.to_string()))?;
    OffspringLaw::from_document(&doc)
}

impl OffspringLaw {
    pub fn from_document(doc: &LawDocument) -> Result<Self, LawError> {
        if doc.dimension == 0 {
            return Err(LawError::Parse("dimension must be at least 1".into()));
        }
        let mut atoms = Vec::with_capacity(doc.atoms.len());
        for atom in &doc.atoms {
            let entries = atom
                .balls
                .iter()
                .map(|b| (b.offset.clone(), b.count))
                .collect();
            atoms.push((atom.p, Configuration::new(doc.dimension, entries)?));
        }
        Self::new(doc.dimension, doc.mode, atoms)
    }

    /// Validates atoms `(probability, configuration)` listed in sampling order.
    pub fn new(dim: usize, mode: Mode, atoms: Vec<(f64, Configuration)>) -> Result<Self, LawError> {
        if atoms.is_empty() {
            return Err(LawError::Parse("law has no atoms".into()));
        }
        for (p, _) in &atoms {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(LawError::NonProbability { sum: *p });
            }
        }
        let sum: f64 = atoms.iter().map(|(p, _)| p).sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(LawError::NonProbability { sum });
        }
        if mode == Mode::Stay {
            if let Some(_) = atoms.iter().find(|(_, c)| c.is_empty()) {
                return Err(LawError::InvalidConfiguration(
                    "empty configuration is only allowed in death mode".into(),
                ));
            }
        }
        let atoms: Vec<Atom> = atoms
            .into_iter()
            .map(|(p, config)| Atom {
                probability: p / sum,
                config,
            })
            .collect();

        let mean_norm: f64 = atoms
            .iter()
            .map(|a| a.probability * a.config.norm() as f64)
            .sum();
        let lambda = match mode {
            Mode::Stay if mean_norm > 0.0 => mean_norm,
            Mode::Stay => return Err(LawError::BadMode("stay mode requires E‖φ‖ > 0".into())),
            Mode::Death if mean_norm > 1.0 => mean_norm - 1.0,
            Mode::Death => {
                return Err(LawError::BadMode(format!(
                    "death mode requires E‖φ‖ > 1 (got {mean_norm})"
                )))
            }
        };

        let support: Vec<Vec<i64>> = atoms
            .iter()
            .flat_map(|a| a.config.entries().iter().map(|(z, _)| z.clone()))
            .collect();
        let index = lattice_index(&support, dim);
        if index != Some(1) {
            return Err(LawError::Reducible {
                dim,
                index: index.map_or_else(|| "infinite".to_string(), |i| i.to_string()),
            });
        }

        let mut mu = BTreeMap::new();
        for atom in &atoms {
            for (z, c) in atom.config.entries() {
                *mu.entry(z.clone()).or_insert(0.0) += atom.probability * *c as f64;
            }
        }

        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for atom in &atoms {
            acc += atom.probability;
            cumulative.push(acc);
        }

        let packed = if dim <= MAX_DIM {
            atoms
                .iter()
                .map(|a| {
                    a.config
                        .entries()
                        .iter()
                        .map(|(z, c)| PackedOffset::new(z).map(|p| (p, *c)))
                        .collect::<Option<Vec<_>>>()
                })
                .collect::<Option<Vec<_>>>()
        } else {
            None
        };

        let max_offset = support
            .iter()
            .flat_map(|z| z.iter().map(|x| x.abs()))
            .max()
            .unwrap_or(0);

        Ok(OffspringLaw {
            dim,
            mode,
            atoms,
            cumulative,
            intensity: MeanIntensity { mu, lambda },
            packed,
            max_offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Malthusian parameter λ.
    pub fn lambda(&self) -> f64 {
        self.intensity.lambda
    }

    pub fn mean_intensity(&self) -> &MeanIntensity {
        &self.intensity
    }

    /// Largest sup-norm offset in the support.
    pub fn max_offset(&self) -> i64 {
        self.max_offset
    }

    /// Packed offsets per atom, available for dim ≤ [`MAX_DIM`].
    pub fn packed_atoms(&self) -> Option<&[Vec<(PackedOffset, u64)>]> {
        self.packed.as_deref()
    }

    pub fn to_document(&self) -> LawDocument {
        LawDocument {
            dimension: self.dim,
            mode: self.mode,
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomDocument {
                    p: a.probability,
                    balls: a
                        .config
                        .entries()
                        .iter()
                        .map(|(z, c)| BallDocument {
                            offset: z.clone(),
                            count: *c,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Exact finite-sum moment over the atoms (of φ itself, not φ').
    pub fn moment(&self, kind: MomentKind) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                let v = match kind {
                    MomentKind::Norm(r) => (a.config.norm() as f64).powi(r as i32),
                    MomentKind::FirstDisplacementSquared => {
                        a.config.displacement_moment(1).powi(2)
                    }
                    MomentKind::SecondDisplacement => a.config.displacement_moment(2),
                };
                a.probability * v
            })
            .sum()
    }

    /// E‖φ'‖², the second moment of the net change per nucleation.
    pub fn net_second_moment(&self) -> f64 {
        let shift = self.death_shift();
        self.atoms
            .iter()
            .map(|a| a.probability * (a.config.norm() as f64 - shift).powi(2))
            .sum()
    }

    fn death_shift(&self) -> f64 {
        match self.mode {
            Mode::Stay => 0.0,
            Mode::Death => 1.0,
        }
    }

    /// μ̂(u) (μ̂'(u) = μ̂(u) − 1 in death mode); μ̂(0) = λ.
    pub fn mu_hat<T: Real>(&self, u: &[T]) -> Complex<T> {
        let mut acc = self
            .intensity
            .mu
            .iter()
            .map(|(z, m)| Complex::from_polar(T::of(*m), dot(u, z)))
            .fold(Complex::new(T::zero(), T::zero()), |a, b| a + b);
        acc.re = acc.re - T::of(self.death_shift());
        acc
    }

    /// λ − Re μ̂(u), identical in both modes.
    pub fn spectral_gap_at<T: Real>(&self, u: &[T]) -> T {
        T::of(self.lambda()) - self.mu_hat(u).re
    }

    /// E[φ̂(u) φ̂(v)] with φ' in death mode.
    pub fn phi_hat_product_mean<T: Real>(&self, u: &[T], v: &[T]) -> Complex<T> {
        let shift = Complex::new(T::of(self.death_shift()), T::zero());
        self.atoms
            .iter()
            .map(|a| {
                let fu = a.config.fourier(u) - shift;
                let fv = a.config.fourier(v) - shift;
                fu * fv * T::of(a.probability)
            })
            .fold(Complex::new(T::zero(), T::zero()), |a, b| a + b)
    }

    /// Index of the atom selected by a uniform in [0, 1).
    #[inline]
    pub fn sample_index(&self, uniform: f64) -> usize {
        if self.atoms.len() == 1 {
            return 0;
        }
        self.cumulative
            .iter()
            .position(|&c| uniform < c)
            .unwrap_or(self.atoms.len() - 1)
    }

    pub fn sample(&self, uniform: f64) -> &Configuration {
        &self.atoms[self.sample_index(uniform)].config
    }
}

/// Index of the subgroup generated by `generators` in ℤ^dim; `None` when the
/// rank is deficient (infinite index).
pub fn lattice_index(generators: &[Vec<i64>], dim: usize) -> Option<u128> {
    let mut basis: Vec<Option<Vec<i128>>> = vec![None; dim];
    for g in generators {
        let mut v: Vec<i128> = g.iter().map(|&x| x as i128).collect();
        for col in 0..dim {
            if v[col] == 0 {
                continue;
            }
            match basis[col].take() {
                None => {
                    basis[col] = Some(v);
                    break;
                }
                Some(b) => {
                    let (g, x, y) = ext_gcd(b[col], v[col]);
                    let (bc, vc) = (b[col] / g, v[col] / g);
                    let pivot: Vec<i128> = b.iter().zip(&v).map(|(p, q)| x * p + y * q).collect();
                    let rest: Vec<i128> = b.iter().zip(&v).map(|(p, q)| vc * p - bc * q).collect();
                    basis[col] = Some(pivot);
                    v = rest;
                }
            }
        }
        reduce(&mut basis);
    }
    let mut index: u128 = 1;
    for row in basis.iter().enumerate() {
        match row {
            (col, Some(b)) => index = index.checked_mul(b[col].unsigned_abs())?,
            (_, None) => return None,
        }
    }
    Some(index)
}

/// Reduces entries above each pivot modulo the pivot to keep numbers small.
fn reduce(basis: &mut [Option<Vec<i128>>]) {
    let dim = basis.len();
    for col in 0..dim {
        let Some(pivot) = basis[col].clone() else { continue };
        let p = pivot[col].abs();
        if p == 0 {
            continue;
        }
        for row in basis.iter_mut().take(col).flatten() {
            let q = row[col].div_euclid(p) * pivot[col].signum();
            if q != 0 {
                for (r, s) in row.iter_mut().zip(&pivot) {
                    *r -= q * s;
                }
            }
        }
    }
}

fn ext_gcd(a: i128, b: i128) -> (i128, i128, i128) {
    let (mut old_r, mut r) = (a, b);
    let (mut old_s, mut s) = (1i128, 0i128);
    let (mut old_t, mut t) = (0i128, 1i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
        (old_t, t) = (t, old_t - q * t);
    }
    if old_r < 0 {
        (-old_r, -old_s, -old_t)
    } else {
        (old_r, old_s, old_t)
    }
}

/// True iff the support offsets generate all of ℤ^d.
pub fn check_irreducible(law: &OffspringLaw) -> bool {
    let support: Vec<Vec<i64>> = law
        .atoms()
        .iter()
        .flat_map(|a| a.config.entries().iter().map(|(z, _)| z.clone()))
        .collect();
    lattice_index(&support, law.dim()) == Some(1)
}

/// Result of [`spectral_gap_scan`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapScan<T> {
    /// min of λ − Re μ̂(u) over grid points u ≠ 0.
    pub min_gap: T,
    /// min of (λ − Re μ̂(u)) / |u|² over grid points 0 < |u| ≤ 1.
    pub quadratic_coefficient: T,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GapError {
    #[error("GapNonPositive: λ − Re μ̂(u) = {value} at grid point {point:?}")]
    GapNonPositive { value: f64, point: Vec<f64> },
    #[error("grid size must be at least 8 (got {0})")]
    GridTooSmall(usize),
}

/// Scans g(u) = λ − Re μ̂(u) on the uniform M^d grid of (−π, π]^d.
pub fn spectral_gap_scan<T: Real>(law: &OffspringLaw, grid_size: usize) -> Result<GapScan<T>, GapError> {
    if grid_size < 8 {
        return Err(GapError::GridTooSmall(grid_size));
    }
    let dim = law.dim();
    let m = grid_size;
    let two_pi = T::TAU();
    let half = (m / 2) as i64;
    let mut min_gap = T::infinity();
    let mut quad = T::infinity();
    let total = m.pow(dim as u32);
    let mut u = vec![T::zero(); dim];
    for mut idx in 0..total {
        let mut is_zero = true;
        for axis in (0..dim).rev() {
            // k in (−M/2, M/2]
            let k = (idx % m) as i64 - half + 1;
            idx /= m;
            is_zero &= k == 0;
            u[axis] = two_pi * T::of_i64(k) / T::of_usize(m);
        }
        if is_zero {
            continue;
        }
        let g = law.spectral_gap_at(&u);
        if g <= T::zero() {
            return Err(GapError::GapNonPositive {
                value: g.to_f64_lossy(),
                point: u.iter().map(|x| x.to_f64_lossy()).collect(),
            });
        }
        min_gap = min_gap.min(g);
        let norm2 = u.iter().fold(T::zero(), |a, &x| a + x * x);
        if norm2 <= T::one() {
            quad = quad.min(g / norm2);
        }
    }
    Ok(GapScan {
        min_gap,
        quadratic_coefficient: quad,
    })
}

/// Standard fixtures used throughout tests and examples.
pub mod fixtures {
    use super::*;

    /// d = 1, deterministic children at ±1, stay mode (λ = 2).
    pub fn nn1() -> OffspringLaw {
        let cfg = Configuration::new(1, vec![(vec![-1], 1), (vec![1], 1)]).unwrap();
        OffspringLaw::new(1, Mode::Stay, vec![(1.0, cfg)]).unwrap()
    }

    /// d = 2 nearest-neighbour law, stay mode (λ = 4).
    pub fn nn2() -> OffspringLaw {
        let cfg = Configuration::new(
            2,
            vec![(vec![-1, 0], 1), (vec![1, 0], 1), (vec![0, -1], 1), (vec![0, 1], 1)],
        )
        .unwrap();
        OffspringLaw::new(2, Mode::Stay, vec![(1.0, cfg)]).unwrap()
    }

    /// d = 1 death-mode law: split to ±1 w.p. 0.55, die w.p. 0.45 (λ = 0.1).
    pub fn death1() -> OffspringLaw {
        let split = Configuration::new(1, vec![(vec![-1], 1), (vec![1], 1)]).unwrap();
        let empty = Configuration::new(1, vec![]).unwrap();
        OffspringLaw::new(1, Mode::Death, vec![(0.55, split), (0.45, empty)]).unwrap()
    }
}
