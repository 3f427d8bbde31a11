//! Parabolic scaling and space-time multi-indices.
//!
//! Everything lives on `R^{d+1}` with coordinates `(t, x_1, .., x_d)` and
//! the parabolic scaling `s = (2, 1, .., 1)`: time counts twice.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Spatial dimension plus the fixed parabolic scaling `(2,1,..,1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub d: usize,
}

impl ScalingSpec {
    pub fn new(d: usize) -> Self {
        assert!(d >= 1, "spatial dimension must be at least 1");
        ScalingSpec { d }
    }

    /// Number of space-time coordinates.
    pub fn dims(&self) -> usize {
        self.d + 1
    }

    /// Scaling weight of coordinate `i` (2 for time, 1 for space).
    pub fn weight(&self, i: usize) -> u32 {
        if i == 0 {
            2
        } else {
            1
        }
    }

    /// Parabolic size `|k|_s = 2 k_0 + k_1 + .. + k_d` of a multi-index.
    pub fn size(&self, k: &MultiIndex) -> u32 {
        debug_assert_eq!(k.0.len(), self.dims());
        k.0.iter()
            .enumerate()
            .map(|(i, &ki)| self.weight(i) * ki as u32)
            .sum()
    }
}

/// Multi-index in `N^{d+1}`, index 0 being the time direction.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u16>);

impl MultiIndex {
    pub fn zero(dims: usize) -> Self {
        MultiIndex(vec![0; dims])
    }

    /// The unit multi-index `e_i`.
    pub fn unit(dims: usize, i: usize) -> Self {
        let mut v = vec![0; dims];
        v[i] = 1;
        MultiIndex(v)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    /// Plain (unweighted) length `sum_i k_i`.
    pub fn len1(&self) -> u32 {
        self.0.iter().map(|&k| k as u32).sum()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.0.len(), other.0.len());
        MultiIndex(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| a + b)
                .collect(),
        )
    }

    /// Componentwise difference; `None` unless `other <= self` everywhere.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        debug_assert_eq!(self.0.len(), other.0.len());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a.checked_sub(b))
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }

    /// True iff `self <= other` componentwise.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| a <= b)
    }

    /// `prod_i k_i!` as u128; multi-indices stay tiny so this cannot overflow.
    pub fn factorial(&self) -> u128 {
        self.0
            .iter()
            .map(|&k| (1..=k as u128).product::<u128>())
            .product()
    }

    /// `prod_i binom(self_i, lower_i)`; requires `lower <= self`.
    pub fn binomial(&self, lower: &MultiIndex) -> u128 {
        self.0
            .iter()
            .zip(&lower.0)
            .map(|(&n, &k)| binom(n as u128, k as u128))
            .product()
    }

    /// All multi-indices `j <= self` componentwise, in lexicographic order.
    pub fn sub_indices(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex(vec![])];
        for &k in &self.0 {
            let mut next = Vec::with_capacity(out.len() * (k as usize + 1));
            for prefix in &out {
                for j in 0..=k {
                    let mut v = prefix.0.clone();
                    v.push(j);
                    next.push(MultiIndex(v));
                }
            }
            out = next;
        }
        out
    }
}

fn binom(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u128;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabolic_size_counts_time_twice() {
        let s = ScalingSpec::new(1);
        assert_eq!(s.size(&MultiIndex(vec![1, 0])), 2);
        assert_eq!(s.size(&MultiIndex(vec![0, 1])), 1);
        assert_eq!(s.size(&MultiIndex(vec![2, 3])), 7);
    }

    #[test]
    fn sub_indices_enumerates_box() {
        let m = MultiIndex(vec![1, 2]);
        let subs = m.sub_indices();
        assert_eq!(subs.len(), 6);
        assert!(subs.contains(&MultiIndex(vec![0, 0])));
        assert!(subs.contains(&MultiIndex(vec![1, 2])));
    }

    #[test]
    fn binomials() {
        let m = MultiIndex(vec![2, 3]);
        let l = MultiIndex(vec![1, 2]);
        assert_eq!(m.binomial(&l), 6);
        assert_eq!(m.factorial(), 12);
    }
}
