//! Sparse exact vectors and matrices. Indices are 0-based coordinates;
//! matrices act on column vectors (`y = M h`, `y_r = sum_c M[r][c] h_c`).

use std::ops::{Add, Mul};

use num_traits::Zero;
use serde::{Deserialize, Serialize};

/// Sorted `(index, value)` pairs with no explicit zeros.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseVec<T> {
    entries: Vec<(u32, T)>,
}

impl<T> SparseVec<T>
where
    T: Copy + Zero + PartialEq + Add<Output = T> + Mul<Output = T>,
{
    pub fn new() -> Self {
        SparseVec {
            entries: Vec::new(),
        }
    }

    /// Builds from unsorted pairs, summing duplicates and dropping zeros.
    pub fn from_pairs(mut pairs: Vec<(u32, T)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(u32, T)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some((j, acc)) if *j == i => *acc = *acc + v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|(_, v)| !v.is_zero());
        SparseVec { entries }
    }

    pub fn entries(&self) -> &[(u32, T)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, index: u32) -> T {
        match self.entries.binary_search_by_key(&index, |&(i, _)| i) {
            Ok(k) => self.entries[k].1,
            Err(_) => T::zero(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (mut a, mut b) = (
            self.entries.iter().peekable(),
            other.entries.iter().peekable(),
        );
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&(i, x)), Some(&&(j, y))) => {
                    if i == j {
                        let s = x + y;
                        if !s.is_zero() {
                            out.push((i, s));
                        }
                        a.next();
                        b.next();
                    } else if i < j {
                        out.push((i, x));
                        a.next();
                    } else {
                        out.push((j, y));
                        b.next();
                    }
                }
                (Some(&&e), None) => {
                    out.push(e);
                    a.next();
                }
                (None, Some(&&e)) => {
                    out.push(e);
                    b.next();
                }
                (None, None) => break,
            }
        }
        SparseVec { entries: out }
    }

    pub fn scale(&self, k: T) -> Self {
        if k.is_zero() {
            return Self::new();
        }
        SparseVec {
            entries: self.entries.iter().map(|&(i, v)| (i, v * k)).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> T {
        let (mut i, mut j) = (0, 0);
        let mut acc = T::zero();
        while i < self.entries.len() && j < other.entries.len() {
            let (a, x) = self.entries[i];
            let (b, y) = other.entries[j];
            if a == b {
                acc = acc + x * y;
                i += 1;
                j += 1;
            } else if a < b {
                i += 1;
            } else {
                j += 1;
            }
        }
        acc
    }

    pub fn map<U, F>(&self, f: F) -> SparseVec<U>
    where
        U: Copy + Zero + PartialEq + Add<Output = U> + Mul<Output = U>,
        F: Fn(T) -> U,
    {
        SparseVec::from_pairs(self.entries.iter().map(|&(i, v)| (i, f(v))).collect())
    }

    /// Entries with index in `lo..hi`, re-based to start at 0.
    pub fn slice(&self, lo: u32, hi: u32) -> Self {
        SparseVec {
            entries: self
                .entries
                .iter()
                .filter(|&&(i, _)| i >= lo && i < hi)
                .map(|&(i, v)| (i - lo, v))
                .collect(),
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<T> {
        let mut out = vec![T::zero(); dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }
}

/// Triplet-list matrix with a per-column index for products against sparse
/// vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    triplets: Vec<(u32, u32, i64)>,
    by_col: Vec<Vec<(u32, i64)>>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(u32, u32, i64)>,
}

impl SparseMatrix {
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(u32, u32, i64)>) -> Self {
        triplets.retain(|t| t.2 != 0);
        triplets.sort_unstable();
        triplets.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        let mut by_col = vec![Vec::new(); cols];
        for &(r, c, v) in &triplets {
            assert!(
                (r as usize) < rows && (c as usize) < cols,
                "entry out of shape"
            );
            by_col[c as usize].push((r, v));
        }
        SparseMatrix {
            rows,
            cols,
            triplets,
            by_col,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_triplets(dim, dim, (0..dim as u32).map(|i| (i, i, 1)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn triplets(&self) -> &[(u32, u32, i64)] {
        &self.triplets
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_identity(&self) -> bool {
        self.rows == self.cols
            && self.triplets.len() == self.rows
            && self
                .triplets
                .iter()
                .enumerate()
                .all(|(k, &(r, c, v))| r as usize == k && c as usize == k && v == 1)
    }

    pub fn apply<T>(&self, h: &SparseVec<T>) -> SparseVec<T>
    where
        T: Copy + Zero + PartialEq + Add<Output = T> + Mul<Output = T> + From<i64>,
    {
        let mut pairs = Vec::new();
        for &(c, x) in h.entries() {
            if let Some(col) = self.by_col.get(c as usize) {
                for &(r, m) in col {
                    pairs.push((r, T::from(m) * x));
                }
            }
        }
        SparseVec::from_pairs(pairs)
    }

    pub(crate) fn to_doc(&self) -> MatrixDoc {
        MatrixDoc {
            rows: self.rows,
            cols: self.cols,
            entries: self.triplets.clone(),
        }
    }

    pub(crate) fn from_doc(doc: MatrixDoc) -> Self {
        Self::from_triplets(doc.rows, doc.cols, doc.entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_apply(m: &SparseMatrix, h: &[i64]) -> Vec<i64> {
        let mut y = vec![0; m.rows()];
        for &(r, c, v) in m.triplets() {
            y[r as usize] += v * h[c as usize];
        }
        y
    }

    proptest! {
        #[test]
        fn apply_matches_dense(
            entries in prop::collection::vec((0u32..6, 0u32..5, -3i64..4), 0..12),
            h in prop::collection::vec(-3i64..4, 5),
        ) {
            let m = SparseMatrix::from_triplets(6, 5, entries);
            let hv = SparseVec::from_pairs(h.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect());
            prop_assert_eq!(m.apply(&hv).to_dense(6), dense_apply(&m, &h));
        }

        #[test]
        fn add_and_dot_match_dense(
            a in prop::collection::vec(-3i64..4, 7),
            b in prop::collection::vec(-3i64..4, 7),
        ) {
            let sv = |x: &[i64]| SparseVec::from_pairs(x.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect());
            let (sa, sb) = (sv(&a), sv(&b));
            let sum: Vec<i64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            prop_assert_eq!(sa.add(&sb).to_dense(7), sum);
            prop_assert_eq!(sa.dot(&sb), a.iter().zip(&b).map(|(x, y)| x * y).sum::<i64>());
        }
    }

    #[test]
    fn identity_detection() {
        assert!(SparseMatrix::identity(4).is_identity());
        let m = SparseMatrix::from_triplets(4, 4, vec![(0, 0, 1), (1, 1, 1), (2, 2, 1), (3, 2, 1)]);
        assert!(!m.is_identity());
    }
}
