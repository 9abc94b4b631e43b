//! Dynamic weighted sampling over slots with exact integer weights.

/// Fenwick tree over `u64` weights supporting point updates and inverse
/// cumulative lookup in `O(log n)`.
#[derive(Clone, Debug, Default)]
pub struct WeightedIndex {
    tree: Vec<u64>,
    weights: Vec<u64>,
    total: u64,
}

impl WeightedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, slot: usize) -> u64 {
        self.weights[slot]
    }

    pub fn clear(&mut self) {
        self.tree.clear();
        self.weights.clear();
        self.total = 0;
    }

    /// Appends a slot and returns its index.
    pub fn push(&mut self, weight: u64) -> usize {
        let slot = self.weights.len();
        self.weights.push(0);
        // node i (1-based) covers (i - lowbit(i), i]; seed it from its children
        let i = slot + 1;
        let mut acc = 0u64;
        let low = i & i.wrapping_neg();
        let mut j = 1;
        while j < low {
            acc += self.tree[i - j - 1];
            j <<= 1;
        }
        self.tree.push(acc);
        self.set(slot, weight);
        slot
    }

    pub fn set(&mut self, slot: usize, weight: u64) {
        let old = self.weights[slot];
        if old == weight {
            return;
        }
        self.weights[slot] = weight;
        let mut i = slot + 1;
        if weight > old {
            let d = weight - old;
            self.total += d;
            while i <= self.tree.len() {
                self.tree[i - 1] += d;
                i += i & i.wrapping_neg();
            }
        } else {
            let d = old - weight;
            self.total -= d;
            while i <= self.tree.len() {
                self.tree[i - 1] -= d;
                i += i & i.wrapping_neg();
            }
        }
    }

    /// Slot containing `target ∈ [0, total)` and the offset of `target`
    /// inside that slot's weight.
    #[inline]
    pub fn find(&self, target: u64) -> (usize, u64) {
        debug_assert!(target < self.total);
        let n = self.tree.len();
        let mut pos = 0usize;
        let mut rem = target;
        let mut step = if n == 0 { 0 } else { 1usize << (usize::BITS - 1 - n.leading_zeros()) };
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next - 1] <= rem {
                rem -= self.tree[next - 1];
                pos = next;
            }
            step >>= 1;
        }
        (pos, rem)
    }

    /// Σ weights[0..slot].
    pub fn prefix(&self, slot: usize) -> u64 {
        let mut i = slot;
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i - 1];
            i &= i - 1;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn finds_cells() {
        let mut w = WeightedIndex::new();
        for x in [3, 0, 5, 1] {
            w.push(x);
        }
        assert_eq!(w.total(), 9);
        assert_eq!(w.find(0), (0, 0));
        assert_eq!(w.find(2), (0, 2));
        assert_eq!(w.find(3), (2, 0));
        assert_eq!(w.find(7), (2, 4));
        assert_eq!(w.find(8), (3, 0));
        w.set(2, 0);
        assert_eq!(w.find(3), (3, 0));
    }

    proptest! {
        #[test]
        fn matches_linear_scan(
            init in prop::collection::vec(0u64..20, 1..60),
            updates in prop::collection::vec((0usize..60, 0u64..20), 0..40),
        ) {
            let mut w = WeightedIndex::new();
            let mut plain = init.clone();
            for &x in &init {
                w.push(x);
            }
            for (slot, x) in updates {
                let slot = slot % plain.len();
                w.set(slot, x);
                plain[slot] = x;
            }
            prop_assert_eq!(w.total(), plain.iter().sum::<u64>());
            for slot in 0..=plain.len() {
                prop_assert_eq!(w.prefix(slot), plain[..slot].iter().sum::<u64>());
            }
            let mut target = 0;
            for (slot, &x) in plain.iter().enumerate() {
                for off in 0..x {
                    prop_assert_eq!(w.find(target), (slot, off));
                    target += 1;
                }
            }
        }
    }
}
