//! Box-counting dimension estimates for finite interval covers, local
//! dimension profiles and parameter scans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalSet;
use crate::jacobi::Coupling;
use crate::spectrum::{approx_spectrum, DEFAULT_TOL};
use crate::tracemap::default_bound;

/// Minimum coefficient of determination for a converged estimate.
pub const CONVERGED_R2: f64 = 0.98;

pub const DEFAULT_N_SCALES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    /// Slope clamped to `[0, 1]`.
    pub value: f64,
    /// The fitted slope before clamping.
    pub slope: f64,
    pub stderr: f64,
    pub r_squared: f64,
    pub scales: (f64, f64),
    pub n_points: usize,
}

impl DimensionEstimate {
    pub fn converged(&self) -> bool {
        self.r_squared >= CONVERGED_R2
    }
}

/// Ordinary least squares `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n != ys.len() || n < 3 {
        return Err(Error::DegenerateScaling(format!("need at least 3 paired points, got {n}")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateScaling("abscissae do not vary".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ssr / syy).clamp(0.0, 1.0) } else { 1.0 };
    let slope_stderr = (ssr / (nf - 2.0) / sxx).sqrt();
    Ok(LinearFit { intercept, slope, slope_stderr, r_squared })
}

/// `x / eps`, snapped to the nearest integer when within rounding of it.
fn grid_coord(x: f64, eps: f64) -> f64 {
    let u = x / eps;
    let r = u.round();
    if (u - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        u
    }
}

/// Number of grid cells `[a + jε, a + (j+1)ε)` meeting `s`.
pub fn box_count_anchored(s: &IntervalSet, eps: f64, anchor: f64) -> usize {
    let mut count: i64 = 0;
    let mut last: Option<i64> = None;
    for &(l, r) in s.intervals() {
        let lo = grid_coord(l - anchor, eps).floor() as i64;
        let hi = (grid_coord(r - anchor, eps).ceil() as i64 - 1).max(lo);
        let start = match last {
            Some(prev) => lo.max(prev + 1),
            None => lo,
        };
        if hi >= start {
            count += hi - start + 1;
        }
        last = Some(last.map_or(hi, |prev| prev.max(hi)));
    }
    count as usize
}

/// Box count on the grid anchored at 0.
pub fn box_count(s: &IntervalSet, eps: f64) -> usize {
    box_count_anchored(s, eps, 0.0)
}

/// Default scaling window: from the typical component length of the cover
/// up to an eighth of its diameter.
pub fn default_scales(s: &IntervalSet) -> Option<(f64, f64)> {
    let eps_max = s.diameter() / 8.0;
    let mut lengths: Vec<f64> = s.intervals().iter().map(|(l, r)| r - l).filter(|&w| w > 0.0).collect();
    if lengths.is_empty() || !(eps_max > 0.0) {
        return None;
    }
    lengths.sort_by(f64::total_cmp);
    let typical = lengths[lengths.len() / 2];
    let eps_min = typical.max(20.0 * DEFAULT_TOL);
    (eps_min < eps_max).then_some((eps_min, eps_max))
}

/// `n` geometrically spaced scales from `hi` down to `lo`.
pub fn geometric_scales(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let ratio = (lo / hi).ln() / (n - 1) as f64;
    (0..n).map(|i| hi * (ratio * i as f64).exp()).collect()
}

/// Least-squares slope of `ln N(ε)` against `ln(1/ε)`.
pub fn box_dimension(s: &IntervalSet, eps_range: (f64, f64), n_scales: usize) -> Result<DimensionEstimate> {
    if s.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (lo, hi) = eps_range;
    if n_scales < 5 {
        return Err(Error::DegenerateScaling(format!("need at least 5 scales, got {n_scales}")));
    }
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::DegenerateScaling(format!("scale range [{lo}, {hi}] is empty")));
    }
    let eps = geometric_scales(lo, hi, n_scales);
    let xs: Vec<f64> = eps.iter().map(|e| -e.ln()).collect();
    let ys: Vec<f64> = eps.par_iter().map(|&e| (box_count(s, e) as f64).ln()).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(DimensionEstimate {
        value: fit.slope.clamp(0.0, 1.0),
        slope: fit.slope,
        stderr: fit.slope_stderr,
        r_squared: fit.r_squared,
        scales: (lo, hi),
        n_points: n_scales,
    })
}

/// [`box_dimension`] over [`default_scales`].
pub fn box_dimension_default(s: &IntervalSet, n_scales: usize) -> Result<DimensionEstimate> {
    let range = default_scales(s).ok_or_else(|| Error::DegenerateScaling("cover too coarse for a scaling range".into()))?;
    box_dimension(s, range, n_scales)
}

/// The level-`k` cover of the spectrum with default bound and tolerance.
pub fn spectrum_cover(c: &Coupling, k: usize) -> Result<IntervalSet> {
    approx_spectrum(k, c, default_bound(c), DEFAULT_TOL)
}

/// Box dimension of `cover ∩ window`.
pub fn local_dimension_of(cover: &IntervalSet, window: (f64, f64), n_scales: usize) -> Result<DimensionEstimate> {
    let part = cover.intersect_interval(window.0, window.1);
    if part.is_empty() {
        return Err(Error::WindowMissesSpectrum);
    }
    box_dimension_default(&part, n_scales)
}

pub fn local_dimension(c: &Coupling, window: (f64, f64), k: usize, n_scales: usize) -> Result<DimensionEstimate> {
    local_dimension_of(&spectrum_cover(c, k)?, window, n_scales)
}

/// Each window boundary may move this fraction of the component count away
/// from its equal-count position.
pub const WINDOW_CUT_SLACK: f64 = 0.05;

/// Split the cover into `n` windows holding (nearly) equal numbers of
/// components. Each boundary is placed in the widest gap within
/// [`WINDOW_CUT_SLACK`] of the equal-count cut: a window that straddles a
/// large gap loses boxes at its top scales, which bends its count curve and
/// biases the slope low.
pub fn equal_count_windows(cover: &IntervalSet, n: usize) -> Result<Vec<(f64, f64)>> {
    let comps = cover.intervals();
    let m = comps.len();
    if n == 0 || m < n {
        return Err(Error::InvalidArgument(format!("cannot split {m} components into {n} windows")));
    }
    let slack = ((WINDOW_CUT_SLACK * m as f64) as usize).max(1);
    let gap_before = |i: usize| comps[i].0 - comps[i - 1].1;
    let mut cuts = vec![0];
    for i in 1..n {
        let target = i * m / n;
        let lo = target.saturating_sub(slack).max(cuts[i - 1] + 1);
        let hi = (target + slack).min(m - (n - i));
        let best = (lo..=hi.max(lo))
            .rev()
            .max_by(|&a, &b| gap_before(a).total_cmp(&gap_before(b)))
            .expect("nonempty range");
        cuts.push(best);
    }
    cuts.push(m);
    Ok(cuts.windows(2).map(|w| (comps[w[0]].0, comps[w[1] - 1].1)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub center: f64,
    pub window: (f64, f64),
    pub estimate: DimensionEstimate,
}

pub fn dimension_profile_of(cover: &IntervalSet, n_windows: usize, n_scales: usize) -> Result<Vec<ProfilePoint>> {
    if n_windows < 3 {
        return Err(Error::InvalidArgument("a profile needs at least 3 windows".into()));
    }
    equal_count_windows(cover, n_windows)?
        .into_par_iter()
        .map(|w| {
            Ok(ProfilePoint {
                center: 0.5 * (w.0 + w.1),
                window: w,
                estimate: local_dimension_of(cover, w, n_scales)?,
            })
        })
        .collect()
}

pub fn dimension_profile(c: &Coupling, n_windows: usize, k: usize) -> Result<Vec<ProfilePoint>> {
    dimension_profile_of(&spectrum_cover(c, k)?, n_windows, DEFAULT_N_SCALES)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub coupling: Coupling,
    pub estimate: DimensionEstimate,
}

/// Global box-dimension estimate for each coupling on a path.
pub fn dimension_vs_params(path: &[Coupling], k: usize, n_scales: usize) -> Result<Vec<ParamRow>> {
    path.par_iter()
        .map(|c| {
            let cover = spectrum_cover(c, k)?;
            Ok(ParamRow { coupling: *c, estimate: global_dimension(&cover, n_scales)? })
        })
        .collect()
}

/// Box dimension of a whole cover; a single interval has dimension 1 at
/// every scale below its length.
pub fn global_dimension(cover: &IntervalSet, n_scales: usize) -> Result<DimensionEstimate> {
    box_dimension_default(cover, n_scales)
}

/// Level-`level` cover of the middle-`α` Cantor set in `[0, 1]`.
pub fn middle_cantor(alpha: f64, level: usize) -> Result<IntervalSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("middle fraction must be in (0, 1), got {alpha}")));
    }
    let r = (1.0 - alpha) / 2.0;
    let mut intervals = vec![(0.0, 1.0)];
    for _ in 0..level {
        intervals = intervals
            .into_iter()
            .flat_map(|(l, rr): (f64, f64)| {
                let w = (rr - l) * r;
                [(l, l + w), (rr - w, rr)]
            })
            .collect();
    }
    Ok(IntervalSet::with_merge_tol(intervals, 0.0))
}

/// `log 2 / log(2 / (1 - α))`.
pub fn cantor_dimension(alpha: f64) -> f64 {
    2f64.ln() / (2.0 / (1.0 - alpha)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn box_count_examples() {
        assert_eq!(box_count(&IntervalSet::single(0.0, 1.0), 0.25), 4);
        let two = IntervalSet::from_intervals(vec![(-3.0, -1.0), (1.0, 3.0)]);
        assert_eq!(box_count(&two, 1.0), 4);
        let cantor = middle_cantor(1.0 / 3.0, 8).unwrap();
        assert_eq!(cantor.len(), 256);
        assert_eq!(box_count(&cantor, 3f64.powi(-8)), 256);
        assert_eq!(box_count(&IntervalSet::single(0.3, 0.3), 0.1), 1);
        assert_eq!(box_count_anchored(&IntervalSet::single(0.0, 1.0), 0.25, 0.1), 5);
    }

    #[test]
    fn dimension_examples() {
        let full = IntervalSet::single(-2.0, 2.0);
        let d = box_dimension(&full, (1e-4, 0.5), 12).unwrap();
        assert!((d.value - 1.0).abs() < 0.01);
        let point = IntervalSet::single(0.7, 0.7);
        let d = box_dimension(&point, (1e-6, 0.1), 10).unwrap();
        assert!(d.value.abs() < 0.02);
        assert!(box_dimension(&full, (1e-4, 0.5), 4).is_err());
        assert!(box_dimension(&full, (0.5, 1e-4), 8).is_err());
    }

    #[test]
    fn cantor_calibration() {
        for alpha in [1.0 / 3.0, 0.5, 0.6] {
            let cover = middle_cantor(alpha, 10).unwrap();
            let d = box_dimension_default(&cover, DEFAULT_N_SCALES).unwrap();
            let want = cantor_dimension(alpha);
            assert!((d.value - want).abs() < 0.03, "α={alpha}: {} vs {want}", d.value);
        }
        assert!((cantor_dimension(1.0 / 3.0) - 0.6309).abs() < 1e-4);
        assert!((box_dimension_default(&middle_cantor(1.0 / 3.0, 10).unwrap(), 16).unwrap().value - 0.6309).abs() < 0.02);
    }

    #[test]
    fn regression_examples() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let fit = linear_fit(&xs, &[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-14 && fit.slope_stderr < 1e-12 && fit.r_squared == 1.0);
        assert!(linear_fit(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn windows_split_components() {
        let cover = middle_cantor(1.0 / 3.0, 4).unwrap();
        let w = equal_count_windows(&cover, 4).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[0].0, 0.0);
        assert_eq!(w[3].1, 1.0);
        assert!(equal_count_windows(&cover, 17).is_err());
        // boundaries fall in the widest nearby gaps: the middle third here
        let c = cover.intervals();
        assert_eq!(equal_count_windows(&cover, 2).unwrap(), vec![(c[0].0, c[7].1), (c[8].0, c[15].1)]);
        assert!((c[8].0 - c[7].1 - 1.0 / 3.0).abs() < 1e-15);
        let all = equal_count_windows(&cover, 16).unwrap();
        assert_eq!(all, cover.intervals().to_vec());
        assert_eq!(local_dimension_of(&cover, (5.0, 6.0), 8), Err(Error::WindowMissesSpectrum));
    }

    fn arb_set() -> impl Strategy<Value = IntervalSet> {
        prop::collection::vec((-10.0f64..10.0, 0.0f64..0.5), 1..20)
            .prop_map(|v| IntervalSet::from_intervals(v.into_iter().map(|(l, w)| (l, l + w)).collect()))
    }

    proptest! {
        #[test]
        fn coarser_grids_count_fewer(s in arb_set(), e in 1e-3f64..1.0) {
            prop_assert!(box_count(&s, 2.0 * e) <= box_count(&s, e));
        }

        #[test]
        fn count_bounds(s in arb_set(), e in 1e-3f64..1.0) {
            let n = box_count(&s, e);
            prop_assert!(n >= s.len().min(1));
            prop_assert!(n as f64 >= s.measure() / e - 1e-9);
            prop_assert!(n as f64 <= s.measure() / e + 2.0 * s.len() as f64);
        }
    }
}
