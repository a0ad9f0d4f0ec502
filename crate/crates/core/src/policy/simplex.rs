use crate::error::{Error, Result};

use super::ProbabilityVector;

/// Probability vectors on `k` atoms whose weights are multiples of `1/m`.
///
/// The codebook is ordered by descending lexicographic order of the count
/// vectors, so index 0 is `(m, 0, .., 0)` and the last entry is `(0, .., 0, m)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplexGrid {
    k: usize,
    m: usize,
    size: usize,
}

fn binomial(n: usize, r: usize) -> Option<u128> {
    if r > n {
        return Some(0);
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

impl SimplexGrid {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::InvalidPolicy("simplex grid needs k >= 1 atoms and resolution m >= 1".into()));
        }
        let size =
            binomial(m + k - 1, k - 1).and_then(|s| usize::try_from(s).ok()).ok_or(Error::CodebookTooLarge { k, m })?;
        Ok(SimplexGrid { k, m, size })
    }

    pub fn atoms(&self) -> usize {
        self.k
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    /// `C(m + k - 1, k - 1)`.
    pub fn codebook_len(&self) -> usize {
        self.size
    }

    /// Number of count vectors on `slots` positions summing to `total`.
    fn completions(&self, slots: usize, total: usize) -> usize {
        if slots == 0 {
            return usize::from(total == 0);
        }
        binomial(total + slots - 1, slots - 1).map(|v| v as usize).unwrap_or(usize::MAX)
    }

    /// Position of a count vector in the codebook order.
    pub fn rank(&self, counts: &[usize]) -> usize {
        let mut idx = 0usize;
        let mut remaining = self.m;
        for (i, &c) in counts.iter().enumerate().take(self.k - 1) {
            let slots = self.k - i - 1;
            for v in c + 1..=remaining {
                idx += self.completions(slots, remaining - v);
            }
            remaining -= c;
        }
        idx
    }

    pub fn counts(&self, mut index: usize) -> Vec<usize> {
        assert!(index < self.size, "codebook index out of range");
        let mut out = vec![0; self.k];
        let mut remaining = self.m;
        for i in 0..self.k - 1 {
            let slots = self.k - i - 1;
            let mut v = remaining;
            loop {
                let block = self.completions(slots, remaining - v);
                if index < block {
                    break;
                }
                index -= block;
                v -= 1;
            }
            out[i] = v;
            remaining -= v;
        }
        out[self.k - 1] = remaining;
        out
    }

    pub fn element(&self, index: usize) -> ProbabilityVector {
        let m = self.m as f64;
        ProbabilityVector { weights: self.counts(index).into_iter().map(|c| c as f64 / m).collect() }
    }

    /// Count vector of the codebook element closest to `nu` in total variation,
    /// lowest codebook index among ties.
    ///
    /// Rounds every `m ν_i` down and hands the remaining units to the largest
    /// fractional parts (lower atom index first on equal parts). Each extra unit
    /// changes the L1 distance by `(1 - 2 frac_i)/m`, so this picks the cheapest
    /// units; among equal-cost choices it yields the lexicographically largest
    /// count vector, which is the lowest index.
    pub fn project_counts(&self, nu: &ProbabilityVector) -> Vec<usize> {
        assert_eq!(nu.len(), self.k, "probability vector length differs from the simplex base");
        let m = self.m as f64;
        let mut counts = Vec::with_capacity(self.k);
        let mut frac = Vec::with_capacity(self.k);
        for &w in nu.weights() {
            let y = (w * m).max(0.0);
            let f = y.floor();
            counts.push(f as usize);
            frac.push(y - f);
        }
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..self.k).collect();
        if assigned > self.m {
            // weights summing slightly above one: take units back from the smallest fractions
            order.sort_by(|&a, &b| frac[a].total_cmp(&frac[b]).then(b.cmp(&a)));
            let mut excess = assigned - self.m;
            for &i in order.iter().cycle() {
                if excess == 0 {
                    break;
                }
                if counts[i] > 0 {
                    counts[i] -= 1;
                    excess -= 1;
                }
            }
        } else {
            order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
            for &i in order.iter().take(self.m - assigned) {
                counts[i] += 1;
            }
            let mut left = self.m - counts.iter().sum::<usize>();
            let mut i = 0;
            while left > 0 {
                counts[i % self.k] += 1;
                left -= 1;
                i += 1;
            }
        }
        counts
    }

    pub fn project(&self, nu: &ProbabilityVector) -> ProbabilityVector {
        let m = self.m as f64;
        ProbabilityVector { weights: self.project_counts(nu).into_iter().map(|c| c as f64 / m).collect() }
    }
}

/// `Q̂_m(ν)`: index of the nearest codebook element in total variation.
pub fn nearest_simplex(simplex: &SimplexGrid, nu: &ProbabilityVector) -> usize {
    simplex.rank(&simplex.project_counts(nu))
}

/// `½ Σ |p_i - q_i|`.
pub fn total_variation(p: &ProbabilityVector, q: &ProbabilityVector) -> f64 {
    0.5 * p.weights().iter().zip(q.weights()).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
