//! Lattice sites packed into a single machine word.
//!
//! A site of ℤ^d (d ≤ 3) is stored as `d` biased 21-bit fields, first
//! coordinate in the most significant field. Unsigned comparison of the
//! packed word therefore coincides with lexicographic order on the
//! coordinates, and translating by a fixed offset is one wrapping add.

use std::fmt;

use serde::{Serialize, Serializer};

/// Largest supported lattice dimension for the particle engines.
pub const MAX_DIM: usize = 3;

const FIELD_BITS: u32 = 21;
const BIAS: i64 = 1 << (FIELD_BITS - 1);
const FIELD_MASK: u64 = (1 << FIELD_BITS) - 1;

/// Largest absolute coordinate a [`SiteKey`] can hold.
pub const COORD_LIMIT: i64 = BIAS - 1;

/// Packed lattice site; ordering is lexicographic on coordinates.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteKey(u64);

/// Translation vector pre-packed for [`SiteKey::translate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PackedOffset(i64);

#[inline]
fn shift(dim: usize, axis: usize) -> u32 {
    FIELD_BITS * (dim - 1 - axis) as u32
}

impl SiteKey {
    /// Packs `coords`; `None` if the dimension or a coordinate is out of range.
    pub fn new(coords: &[i64]) -> Option<Self> {
        let dim = coords.len();
        if dim == 0 || dim > MAX_DIM {
            return None;
        }
        let mut raw = 0u64;
        for (axis, &c) in coords.iter().enumerate() {
            if c.abs() > COORD_LIMIT {
                return None;
            }
            raw |= ((c + BIAS) as u64) << shift(dim, axis);
        }
        Some(SiteKey(raw))
    }

    /// The origin of ℤ^dim.
    pub fn origin(dim: usize) -> Self {
        SiteKey::new(&vec![0; dim]).expect("dimension within MAX_DIM")
    }

    pub fn coord(self, dim: usize, axis: usize) -> i64 {
        ((self.0 >> shift(dim, axis)) & FIELD_MASK) as i64 - BIAS
    }

    pub fn coords(self, dim: usize) -> Vec<i64> {
        (0..dim).map(|a| self.coord(dim, a)).collect()
    }

    /// Sup-norm distance from the origin.
    pub fn sup_norm(self, dim: usize) -> i64 {
        (0..dim).map(|a| self.coord(dim, a).abs()).max().unwrap_or(0)
    }

    /// Translates by a packed offset. The caller guarantees the result stays
    /// inside the representable box (see [`SiteKey::within`]).
    #[inline]
    pub fn translate(self, offset: PackedOffset) -> Self {
        SiteKey(self.0.wrapping_add(offset.0 as u64))
    }

    /// True when every coordinate is at most `limit` in absolute value.
    pub fn within(self, dim: usize, limit: i64) -> bool {
        (0..dim).all(|a| self.coord(dim, a).abs() <= limit)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Display adaptor that knows the dimension.
    pub fn display(self, dim: usize) -> SiteDisplay {
        SiteDisplay { key: self, dim }
    }
}

impl fmt::Debug for SiteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SiteKey({:#x})", self.0)
    }
}

/// Formats a site as `x` (d = 1) or `x;y;z`.
pub struct SiteDisplay {
    key: SiteKey,
    dim: usize,
}

impl fmt::Display for SiteDisplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for axis in 0..self.dim {
            if axis > 0 {
                f.write_str(";")?;
            }
            write!(f, "{}", self.key.coord(self.dim, axis))?;
        }
        Ok(())
    }
}

impl PackedOffset {
    pub fn new(offset: &[i64]) -> Option<Self> {
        let dim = offset.len();
        if dim == 0 || dim > MAX_DIM {
            return None;
        }
        let mut raw = 0i64;
        for (axis, &o) in offset.iter().enumerate() {
            if o.abs() > COORD_LIMIT {
                return None;
            }
            raw = raw.wrapping_add(o.wrapping_shl(shift(dim, axis)));
        }
        Some(PackedOffset(raw))
    }
}

/// Serializes a site as its coordinate array.
pub struct SiteCoords {
    pub key: SiteKey,
    pub dim: usize,
}

impl Serialize for SiteCoords {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.key.coords(self.dim).serialize(s)
    }
}

/// Iterates the box `[-r, r]^dim` in lexicographic order.
pub fn box_sites(dim: usize, r: i64) -> impl Iterator<Item = Vec<i64>> {
    let side = (2 * r + 1) as usize;
    let total = side.pow(dim as u32);
    (0..total).map(move |mut idx| {
        let mut c = vec![0i64; dim];
        for axis in (0..dim).rev() {
            c[axis] = (idx % side) as i64 - r;
            idx /= side;
        }
        c
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_round_trips() {
        for d in 1..=3 {
            assert_eq!(SiteKey::origin(d).coords(d), vec![0; d]);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(SiteKey::new(&[COORD_LIMIT + 1]).is_none());
        assert!(SiteKey::new(&[0, 0, 0, 0]).is_none());
        assert!(SiteKey::new(&[]).is_none());
    }

    #[test]
    fn box_iteration_is_lexicographic() {
        let sites: Vec<_> = box_sites(2, 1).collect();
        assert_eq!(sites.len(), 9);
        assert_eq!(sites[0], vec![-1, -1]);
        assert_eq!(sites[1], vec![-1, 0]);
        assert_eq!(sites[8], vec![1, 1]);
        let keys: Vec<_> = sites.iter().map(|c| SiteKey::new(c).unwrap()).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn translate_matches_coordinate_addition(
            a in prop::collection::vec(-1000i64..1000, 1..=3),
            shift in prop::collection::vec(-50i64..50, 3),
        ) {
            let d = a.len();
            let off = &shift[..d];
            let key = SiteKey::new(&a).unwrap();
            let moved = key.translate(PackedOffset::new(off).unwrap());
            let expect: Vec<i64> = a.iter().zip(off).map(|(x, y)| x + y).collect();
            prop_assert_eq!(moved.coords(d), expect);
        }

        #[test]
        fn order_is_lexicographic(
            a in prop::collection::vec(-500i64..500, 2),
            b in prop::collection::vec(-500i64..500, 2),
        ) {
            let ka = SiteKey::new(&a).unwrap();
            let kb = SiteKey::new(&b).unwrap();
            prop_assert_eq!(ka.cmp(&kb), a.cmp(&b));
        }
    }
}
