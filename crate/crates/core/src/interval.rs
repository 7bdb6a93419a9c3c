//! Finite unions of closed real intervals.

use serde::{Deserialize, Serialize};

/// Gaps narrower than this are treated as closed when normalizing.
pub const DEFAULT_MERGE_TOL: f64 = 1e-9;

/// Sorted, pairwise-disjoint closed intervals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet { intervals: Vec::new() }
    }

    pub fn single(left: f64, right: f64) -> Self {
        Self::from_intervals(vec![(left, right)])
    }

    /// Normalize with the default merge tolerance.
    pub fn from_intervals(intervals: Vec<(f64, f64)>) -> Self {
        Self::with_merge_tol(intervals, DEFAULT_MERGE_TOL)
    }

    /// Sort, orient and fuse intervals whose gap is at most `merge_tol`.
    pub fn with_merge_tol(mut intervals: Vec<(f64, f64)>, merge_tol: f64) -> Self {
        for iv in intervals.iter_mut() {
            if iv.0 > iv.1 {
                *iv = (iv.1, iv.0);
            }
        }
        intervals.retain(|iv| iv.0.is_finite() && iv.1.is_finite());
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (l, r) in intervals {
            match out.last_mut() {
                Some(last) if l <= last.1 + merge_tol => last.1 = last.1.max(r),
                _ => out.push((l, r)),
            }
        }
        IntervalSet { intervals: out }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(l, r)| r - l).sum()
    }

    /// Smallest closed interval containing the set.
    pub fn hull(&self) -> Option<(f64, f64)> {
        Some((self.intervals.first()?.0, self.intervals.last()?.1))
    }

    pub fn diameter(&self) -> f64 {
        self.hull().map_or(0.0, |(l, r)| r - l)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.contains_with_slack(x, 0.0)
    }

    pub fn contains_with_slack(&self, x: f64, slack: f64) -> bool {
        let idx = self.intervals.partition_point(|iv| iv.1 + slack < x);
        self.intervals.get(idx).is_some_and(|iv| iv.0 - slack <= x)
    }

    /// Index of the component containing `x`.
    pub fn component_of(&self, x: f64) -> Option<usize> {
        let idx = self.intervals.partition_point(|iv| iv.1 < x);
        match self.intervals.get(idx) {
            Some(iv) if iv.0 <= x => Some(idx),
            _ => None,
        }
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut all = self.intervals.clone();
        all.extend_from_slice(&other.intervals);
        IntervalSet::from_intervals(all)
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let (a, b) = (&self.intervals, &other.intervals);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            let l = a[i].0.max(b[j].0);
            let r = a[i].1.min(b[j].1);
            if l <= r {
                out.push((l, r));
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet { intervals: out }
    }

    pub fn intersect_interval(&self, left: f64, right: f64) -> IntervalSet {
        self.intersect(&IntervalSet::single(left, right))
    }

    /// True if every component of `self` lies inside `other` widened by `slack`.
    pub fn is_subset_of(&self, other: &IntervalSet, slack: f64) -> bool {
        self.intervals.iter().all(|&(l, r)| {
            let idx = other.intervals.partition_point(|iv| iv.1 + slack < l);
            other
                .intervals
                .get(idx)
                .is_some_and(|iv| iv.0 - slack <= l && r <= iv.1 + slack)
        })
    }

    /// Image under `x -> -x`.
    pub fn reflected(&self) -> IntervalSet {
        IntervalSet {
            intervals: self.intervals.iter().rev().map(|&(l, r)| (-r, -l)).collect(),
        }
    }

    /// Lengths of the open gaps between consecutive components.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        self.intervals.windows(2).map(|w| (w[0].1, w[1].0)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(IntervalSet::single(-2.0, 2.0).measure(), 4.0);
        let touching = IntervalSet::single(0.0, 1.0).union(&IntervalSet::single(1.0, 2.0));
        assert_eq!(touching.intervals(), &[(0.0, 2.0)]);
        let bands = IntervalSet::from_intervals(vec![(-3.0, -1.0), (1.0, 3.0)]);
        assert_eq!(bands.intersect_interval(0.0, 4.0).intervals(), &[(1.0, 3.0)]);
    }

    #[test]
    fn subset_with_slack() {
        let outer = IntervalSet::from_intervals(vec![(0.0, 1.0), (2.0, 3.0)]);
        let inner = IntervalSet::from_intervals(vec![(0.1, 0.9), (2.0, 3.0 + 1e-12)]);
        assert!(!inner.is_subset_of(&outer, 0.0));
        assert!(inner.is_subset_of(&outer, 1e-10));
        let straddle = IntervalSet::single(0.5, 2.5);
        assert!(!straddle.is_subset_of(&outer, 1e-3));
    }

    #[test]
    fn contains_and_components() {
        let s = IntervalSet::from_intervals(vec![(0.0, 1.0), (2.0, 3.0)]);
        assert!(s.contains(0.0) && s.contains(2.5) && !s.contains(1.5));
        assert_eq!(s.component_of(2.5), Some(1));
        assert_eq!(s.component_of(1.5), None);
        assert_eq!(s.hull(), Some((0.0, 3.0)));
        assert_eq!(s.reflected().intervals(), &[(-3.0, -2.0), (-1.0, 0.0)]);
    }

    fn arb_set() -> impl Strategy<Value = IntervalSet> {
        prop::collection::vec((-10.0f64..10.0, 0.0f64..2.0), 0..12)
            .prop_map(|v| IntervalSet::from_intervals(v.into_iter().map(|(l, w)| (l, l + w)).collect()))
    }

    proptest! {
        #[test]
        fn normalized_sets_are_sorted_and_disjoint(s in arb_set()) {
            for w in s.intervals().windows(2) {
                prop_assert!(w[0].1 + DEFAULT_MERGE_TOL < w[1].0);
            }
            prop_assert!(s.measure() >= 0.0);
        }

        #[test]
        fn algebra_laws(a in arb_set(), b in arb_set()) {
            let u = a.union(&b);
            let i = a.intersect(&b);
            prop_assert!(a.is_subset_of(&u, 1e-12));
            prop_assert!(i.is_subset_of(&a, 1e-12));
            prop_assert!(i.is_subset_of(&b, 1e-12));
            prop_assert!((u.measure() + i.measure() - a.measure() - b.measure()).abs() < 1e-6);
        }
    }
}
