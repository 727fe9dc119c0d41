//! Server subsets as bitmasks, colexicographic enumeration and binomials.
//!
//! Server `i` (0-based) is bit `i` of the mask, so ascending mask order is
//! exactly colexicographic order of the subsets.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

/// Largest supported cluster; subsets are stored in a `u64`.
pub const MAX_SERVERS: usize = 64;

#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServerSet(u64);

impl ServerSet {
    pub const EMPTY: ServerSet = ServerSet(0);

    pub fn from_mask(mask: u64) -> Self {
        ServerSet(mask)
    }

    pub fn singleton(server: usize) -> Self {
        ServerSet(1u64 << server)
    }

    /// `{0, 1, ..., n-1}`.
    pub fn full(n: usize) -> Self {
        if n >= 64 {
            ServerSet(u64::MAX)
        } else {
            ServerSet((1u64 << n) - 1)
        }
    }

    pub fn mask(self) -> u64 {
        self.0
    }

    pub fn contains(self, server: usize) -> bool {
        server < 64 && self.0 >> server & 1 == 1
    }

    pub fn with(self, server: usize) -> Self {
        ServerSet(self.0 | 1u64 << server)
    }

    pub fn without(self, server: usize) -> Self {
        ServerSet(self.0 & !(1u64 << server))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersects(self, other: ServerSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(self, other: ServerSet) -> Self {
        ServerSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ServerSet) -> Self {
        ServerSet(self.0 & other.0)
    }

    /// Members in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let low = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(low)
            }
        })
    }

    /// Position of `server` among the members, counting from the smallest.
    pub fn position(self, server: usize) -> Option<usize> {
        if !self.contains(server) {
            return None;
        }
        let below = self.0 & ((1u64 << server) - 1);
        Some(below.count_ones() as usize)
    }

    /// Rank of this subset among all subsets of the same size in colex order.
    pub fn colex_rank(self) -> u64 {
        self.iter()
            .enumerate()
            .map(|(i, c)| binomial_u64(c as u64, i as u64 + 1).expect("rank fits in u64"))
            .sum()
    }
}

impl fmt::Debug for ServerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<usize> for ServerSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        iter.into_iter().fold(ServerSet::EMPTY, ServerSet::with)
    }
}

/// All `size`-subsets of `{0, ..., n-1}` in colexicographic order.
pub fn subsets(n: usize, size: usize) -> impl Iterator<Item = ServerSet> {
    assert!(n <= MAX_SERVERS, "at most {MAX_SERVERS} servers");
    let limit: u128 = 1u128 << n;
    let mut next: Option<u128> = if size <= n { Some((1u128 << size) - 1) } else { None };
    std::iter::from_fn(move || {
        let current = next?;
        if current >= limit {
            return None;
        }
        next = if current == 0 {
            None
        } else {
            // Gosper's hack: next integer with the same popcount.
            let low = current & current.wrapping_neg();
            let ripple = current + low;
            let candidate = (((ripple ^ current) >> 2) / low) | ripple;
            (candidate < limit).then_some(candidate)
        };
        Some(ServerSet(current as u64))
    })
}

/// `n choose k`, zero when `k < 0`, `n < 0` or `k > n`.
pub fn binomial(n: i64, k: i64) -> BigUint {
    if n < 0 || k < 0 || k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k) as u64;
    let n = n as u64;
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// `n choose k` in `u64`, `None` on overflow.
pub fn binomial_u64(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k as u128 {
        acc = acc * (n as u128 - i) / (i + 1);
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}
