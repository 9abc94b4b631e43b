//! Site → slot lookup: a dense array near the origin backed by a hash map.

use rustc_hash::FxHashMap;

use crate::site::SiteKey;

const EMPTY: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub(crate) struct SlotMap {
    dim: usize,
    window: i64,
    side: usize,
    dense: Vec<u32>,
    sparse: FxHashMap<SiteKey, u32>,
    len: usize,
}

impl SlotMap {
    pub fn new(dim: usize) -> Self {
        let window: i64 = match dim {
            1 => 1 << 14,
            2 => 256,
            _ => 24,
        };
        let side = (2 * window + 1) as usize;
        SlotMap {
            dim,
            window,
            side,
            dense: vec![EMPTY; side.pow(dim as u32)],
            sparse: FxHashMap::default(),
            len: 0,
        }
    }

    #[inline]
    fn dense_index(&self, key: SiteKey) -> Option<usize> {
        let mut idx = 0usize;
        for axis in 0..self.dim {
            let c = key.coord(self.dim, axis);
            if c.abs() > self.window {
                return None;
            }
            idx = idx * self.side + (c + self.window) as usize;
        }
        Some(idx)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn get(&self, key: SiteKey) -> Option<u32> {
        match self.dense_index(key) {
            Some(i) => {
                let s = self.dense[i];
                (s != EMPTY).then_some(s)
            }
            None => self.sparse.get(&key).copied(),
        }
    }

    #[inline]
    pub fn insert(&mut self, key: SiteKey, slot: u32) {
        let fresh = match self.dense_index(key) {
            Some(i) => std::mem::replace(&mut self.dense[i], slot) == EMPTY,
            None => self.sparse.insert(key, slot).is_none(),
        };
        self.len += fresh as usize;
    }

    #[inline]
    pub fn remove(&mut self, key: SiteKey) {
        let existed = match self.dense_index(key) {
            Some(i) => std::mem::replace(&mut self.dense[i], EMPTY) != EMPTY,
            None => self.sparse.remove(&key).is_some(),
        };
        self.len -= existed as usize;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_sparse_sites() {
        for dim in 1..=3 {
            let mut m = SlotMap::new(dim);
            let near = SiteKey::new(&vec![3; dim]).unwrap();
            let far = SiteKey::new(&vec![100_000; dim]).unwrap();
            m.insert(near, 4);
            m.insert(far, 7);
            m.insert(far, 8);
            assert_eq!(m.len(), 2);
            assert_eq!(m.get(near), Some(4));
            assert_eq!(m.get(far), Some(8));
            m.remove(near);
            m.remove(near);
            assert_eq!(m.get(near), None);
            assert_eq!(m.len(), 1);
        }
    }
}
