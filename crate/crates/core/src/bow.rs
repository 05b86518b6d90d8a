//! Sparse bag-of-words vectors and their L1 similarity score.

use std::collections::BTreeMap;

/// Sparse word-id → weight map. Stored weights are strictly positive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BowVector {
    entries: BTreeMap<u32, f64>,
}

impl BowVector {
    pub fn new() -> Self {
        BowVector::default()
    }

    /// Builds a vector from `(word, weight)` pairs, summing repeated words and dropping
    /// non-positive or non-finite weights.
    pub fn from_entries(entries: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut v = BowVector::new();
        for (w, x) in entries {
            v.add(w, x);
        }
        v.entries.retain(|_, x| *x > 0.0 && x.is_finite());
        v
    }

    fn add(&mut self, word: u32, weight: f64) {
        *self.entries.entry(word).or_insert(0.0) += weight;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: u32) -> Option<f64> {
        self.entries.get(&word).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().map(|(w, x)| (*w, *x))
    }

    pub fn words(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Returns a copy with unit L1 norm (or an empty vector if `self` is empty).
    pub fn normalized(&self) -> BowVector {
        let norm = self.l1_norm();
        if norm <= 0.0 {
            return BowVector::new();
        }
        BowVector {
            entries: self.entries.iter().map(|(w, x)| (*w, x / norm)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> BowVector {
        BowVector::from_entries(self.iter().map(|(w, x)| (w, x * factor)))
    }
}

/// View similarity `1 - ½‖a/|a| - b/|b|‖₁`, in `[0, 1]`.
///
/// Empty operands score 0.
pub fn score(a: &BowVector, b: &BowVector) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let na = a.l1_norm();
    let nb = b.l1_norm();
    // Over the shared support, |x - y| = x + y - 2 min(x, y), so the L1 distance is
    // 2 - 2 Σ min over shared words.
    let mut shared_min = 0.0;
    let (mut ia, mut ib) = (a.entries.iter().peekable(), b.entries.iter().peekable());
    while let (Some((wa, xa)), Some((wb, xb))) = (ia.peek(), ib.peek()) {
        match wa.cmp(wb) {
            std::cmp::Ordering::Less => {
                ia.next();
            }
            std::cmp::Ordering::Greater => {
                ib.next();
            }
            std::cmp::Ordering::Equal => {
                shared_min += (*xa / na).min(*xb / nb);
                ia.next();
                ib.next();
            }
        }
    }
    shared_min.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(entries: &[(u32, f64)]) -> BowVector {
        BowVector::from_entries(entries.iter().copied())
    }

    #[test]
    fn identical_scores_one() {
        let a = v(&[(1, 0.2), (5, 0.3), (9, 0.5)]);
        assert!((score(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_scores_zero() {
        assert_eq!(score(&v(&[(1, 1.0)]), &v(&[(2, 1.0)])), 0.0);
    }

    #[test]
    fn half_overlap() {
        // 1 - ½(|0.5 - 1| + 0.5) = 0.5
        let s = score(&v(&[(1, 1.0), (2, 1.0)]), &v(&[(1, 1.0)]));
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_scores_zero() {
        let a = v(&[(1, 1.0)]);
        assert_eq!(score(&BowVector::new(), &a), 0.0);
        assert_eq!(score(&a, &BowVector::new()), 0.0);
        assert_eq!(score(&BowVector::new(), &BowVector::new()), 0.0);
    }

    #[test]
    fn non_positive_weights_dropped() {
        let a = v(&[(1, 0.0), (2, -1.0), (3, 2.0), (3, 1.0)]);
        assert_eq!(a.len(), 1);
        assert_eq!(a.get(3), Some(3.0));
    }

    fn arb_bow() -> impl Strategy<Value = BowVector> {
        proptest::collection::vec((0u32..40, 0.01f64..10.0), 1..20)
            .prop_map(BowVector::from_entries)
    }

    fn direct_formula(a: &BowVector, b: &BowVector) -> f64 {
        let (na, nb) = (a.l1_norm(), b.l1_norm());
        let words: std::collections::BTreeSet<u32> = a.words().chain(b.words()).collect();
        let l1: f64 = words
            .iter()
            .map(|w| (a.get(*w).unwrap_or(0.0) / na - b.get(*w).unwrap_or(0.0) / nb).abs())
            .sum();
        1.0 - 0.5 * l1
    }

    proptest! {
        #[test]
        fn matches_direct_l1_formula(a in arb_bow(), b in arb_bow()) {
            prop_assert!((score(&a, &b) - direct_formula(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn symmetric_and_bounded(a in arb_bow(), b in arb_bow()) {
            let s = score(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((s - score(&b, &a)).abs() < 1e-12);
        }

        #[test]
        fn scale_invariant(a in arb_bow(), b in arb_bow(), c in 0.001f64..1000.0) {
            prop_assert!((score(&a.scaled(c), &b) - score(&a, &b)).abs() < 1e-12);
        }
    }
}
