//! Integrated density of states of the periodic approximants and pointwise
//! dimension of the density-of-states measure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractal::{geometric_scales, linear_fit, local_dimension_of, spectrum_cover, DimensionEstimate};
use crate::jacobi::Coupling;
use crate::spectrum::{bands, BandLevel, Discriminant, DEFAULT_TOL};

/// Slack when clamping the normalized discriminant into `[-1, 1]`.
const CLAMP_TOL: f64 = 1e-12;

pub const DEFAULT_N_SCALES: usize = 12;

/// Equal weight `1 / F_k` per band, interpolated inside a band by the
/// normalized quasimomentum `arccos(±x_k) / π`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsFunction {
    pub level: BandLevel,
}

impl IdsFunction {
    pub fn k(&self) -> usize {
        self.level.k
    }

    pub fn band_count(&self) -> usize {
        self.level.raw_bands.len()
    }

    /// Sorted band edges.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.level.raw_bands.iter().flat_map(|&(l, r)| [l, r]).collect()
    }

    /// Cumulative weight at each breakpoint.
    pub fn values(&self) -> Vec<f64> {
        let f = self.band_count() as f64;
        (0..self.band_count()).flat_map(|j| [j as f64 / f, (j + 1) as f64 / f]).collect()
    }

    /// Index of the band containing `lambda`, if any.
    pub fn band_of(&self, lambda: f64) -> Option<usize> {
        let raw = &self.level.raw_bands;
        let j = raw.partition_point(|b| b.1 < lambda);
        (j < raw.len() && raw[j].0 <= lambda).then_some(j)
    }

    fn in_band_fraction(&self, j: usize, lambda: f64) -> f64 {
        let x = Discriminant::new(self.k(), &self.level.coupling).eval(lambda).value;
        let u = self.level.orientation(j) * x;
        // past the clamp slack the point is outside the band; the caller
        // only asks inside, so rounding is the only source of |u| > 1
        let u = if u.abs() <= 1.0 + CLAMP_TOL { u.clamp(-1.0, 1.0) } else { u.signum() };
        u.acos() / std::f64::consts::PI
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let raw = &self.level.raw_bands;
        let f = raw.len() as f64;
        let j = raw.partition_point(|b| b.1 < lambda);
        if j == raw.len() {
            return 1.0;
        }
        if lambda < raw[j].0 {
            return j as f64 / f;
        }
        (j as f64 + self.in_band_fraction(j, lambda)) / f
    }

    /// Smallest `λ` with `N(λ) = u`, for `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let raw = &self.level.raw_bands;
        let f = raw.len() as f64;
        let u = u.clamp(0.0, 1.0);
        let j = ((u * f).floor() as usize).min(raw.len() - 1);
        let target = u * f - j as f64;
        let (l, r) = raw[j];
        let (mut a, mut b) = (l, r);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if self.in_band_fraction(j, mid) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

/// Band edges for the IDS are bisected to machine precision: the arccos
/// interpolation turns an edge error `δ` into an IDS error of order `√δ`.
const EDGE_TOL: f64 = f64::MIN_POSITIVE;

pub fn ids(k: usize, c: &Coupling) -> Result<IdsFunction> {
    Ok(IdsFunction { level: bands(k, c, EDGE_TOL)? })
}

/// `N(right) - N(left)`.
pub fn dos_weight(interval: (f64, f64), n: &IdsFunction) -> f64 {
    let (l, r) = if interval.0 <= interval.1 { interval } else { (interval.1, interval.0) };
    n.eval(r) - n.eval(l)
}

/// Default regression window for the pointwise dimension at `e`: from a few
/// widths of the containing level-`k` band (below which the approximant is
/// smooth) up to an eighth of the spectral diameter.
pub fn default_pointwise_range(e: f64, n: &IdsFunction) -> Result<(f64, f64)> {
    let j = n.band_of(e).ok_or(Error::OutsideCover(e))?;
    let (l, r) = n.level.raw_bands[j];
    let diameter = n.level.bands.diameter();
    let lo = (4.0 * (r - l)).max(10.0 * DEFAULT_TOL);
    let hi = diameter / 8.0;
    if hi < 4.0 * lo {
        return Err(Error::DegenerateScaling(format!(
            "band at {e} is too wide for a scaling range at level {}",
            n.k()
        )));
    }
    Ok((lo, hi))
}

/// Slope of `log N(E - ε, E + ε)` against `log ε`.
pub fn pointwise_dimension_of(
    e: f64,
    n: &IdsFunction,
    eps_range: Option<(f64, f64)>,
    n_scales: usize,
) -> Result<DimensionEstimate> {
    if n.band_of(e).is_none() {
        return Err(Error::OutsideCover(e));
    }
    let (lo, hi) = match eps_range {
        Some(r) => r,
        None => default_pointwise_range(e, n)?,
    };
    if n_scales < 5 || !(lo > 0.0 && hi > lo) {
        return Err(Error::DegenerateScaling(format!("scale range [{lo}, {hi}] with {n_scales} scales")));
    }
    let eps = geometric_scales(lo, hi, n_scales);
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = eps.iter().map(|&h| dos_weight((e - h, e + h), n).ln()).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Numerical(format!("zero density-of-states weight near {e}")));
    }
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

pub fn pointwise_dimension(
    e: f64,
    c: &Coupling,
    k: usize,
    eps_range: Option<(f64, f64)>,
    n_scales: usize,
) -> Result<DimensionEstimate> {
    pointwise_dimension_of(e, &ids(k, c)?, eps_range, n_scales)
}

/// Pointwise regressions with `r²` below this are flagged unconverged.
pub const POINTWISE_R2: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub energy: f64,
    /// `None` when no scaling range resolves the point at this level.
    pub pointwise: Option<DimensionEstimate>,
    pub local: Option<DimensionEstimate>,
    /// `local - pointwise`.
    pub gap: Option<f64>,
    pub converged: bool,
}

/// `n` energies drawn from the level-`k` density of states.
pub fn sample_energies(n: &IdsFunction, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| n.quantile(rng.gen_range(0.0..1.0))).collect()
}

/// Pointwise dimension of `dN` against the local dimension of the spectrum
/// at `n_points` energies sampled from `dN`. The local window is centred on
/// the energy with the half-width of the pointwise regression's largest scale.
pub fn dimension_gap_report(c: &Coupling, k: usize, n_points: usize, seed: u64) -> Result<Vec<GapRow>> {
    if n_points < 5 {
        return Err(Error::InvalidArgument("a gap report needs at least 5 points".into()));
    }
    let n = ids(k, c)?;
    let cover = spectrum_cover(c, k)?;
    let energies = sample_energies(&n, n_points, seed);
    Ok(energies
        .into_par_iter()
        .map(|e| {
            let pointwise = pointwise_dimension_of(e, &n, None, DEFAULT_N_SCALES).ok();
            let local = pointwise.and_then(|d| {
                let half = d.scales.1;
                local_dimension_of(&cover, (e - half, e + half), crate::fractal::DEFAULT_N_SCALES).ok()
            });
            let gap = match (pointwise, local) {
                (Some(d), Some(l)) => Some(l.slope - d.slope),
                _ => None,
            };
            GapRow {
                energy: e,
                pointwise,
                local,
                gap,
                converged: matches!((pointwise, local), (Some(d), Some(l)) if d.r_squared >= POINTWISE_R2 && l.converged()),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibword::fib_len;
    use crate::jacobi::{open_truncation, sturm_count, Cell};

    fn c(p: f64, q: f64) -> Coupling {
        Coupling::new(p, q).unwrap()
    }

    #[test]
    fn ids_examples() {
        let n = ids(2, &c(2.0, 0.0)).unwrap();
        assert!((dos_weight((1.0, 3.0), &n) - 0.5).abs() < 1e-9);
        assert_eq!(n.eval(-10.0), 0.0);
        assert_eq!(n.eval(10.0), 1.0);
        assert_eq!(n.eval(0.0), 0.5);
        for k in [5, 6, 9] {
            let n = ids(k, &c(0.5, 0.0)).unwrap();
            assert!((n.eval(0.0) - 0.5).abs() < 1e-12);
            assert!((dos_weight((-5.0, 5.0), &n) - 1.0).abs() < 1e-12);
        }
        assert_eq!(n.breakpoints().len(), 4);
        assert_eq!(n.values(), vec![0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn ids_is_monotone() {
        let n = ids(8, &c(2.0, 1.0)).unwrap();
        let mut prev = 0.0;
        for i in 0..=5000 {
            let v = n.eval(-6.0 + 12.0 * i as f64 / 5000.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
        for (j, &(l, r)) in n.level.raw_bands.iter().enumerate() {
            let f = fib_len(8) as f64;
            assert!((n.eval(l) - j as f64 / f).abs() < 1e-6 / f);
            assert!((n.eval(r) - (j + 1) as f64 / f).abs() < 1e-6 / f);
        }
    }

    #[test]
    fn free_ids_is_arccos() {
        let n = ids(9, &Coupling::free()).unwrap();
        for e in [-1.9, -1.0, 0.3, 1.7] {
            let exact = (-e / 2.0f64).acos() / std::f64::consts::PI;
            assert!((n.eval(e) - exact).abs() < 1e-9, "{e}");
        }
    }

    #[test]
    fn quantile_inverts() {
        let n = ids(7, &c(1.0, 2.0)).unwrap();
        for u in [0.01, 0.2, 0.5, 0.77, 0.99] {
            assert!((n.eval(n.quantile(u)) - u).abs() < 1e-9);
        }
    }

    #[test]
    fn band_weights_match_truncation_counts() {
        let cells = 200;
        for (p, q) in [(2.0, 1.0), (1.0, 2.0), (0.5, -1.0)] {
            let coupling = c(p, q);
            for k in 2..=6 {
                let n = ids(k, &coupling).unwrap();
                let (diag, off) = open_truncation(&Cell::trace_family(k), &coupling, cells);
                let raw = &n.level.raw_bands;
                let total = diag.len() as f64;
                for j in 0..raw.len() {
                    let lo = if j == 0 { -10.0 } else { 0.5 * (raw[j - 1].1 + raw[j].0) };
                    let hi = if j + 1 == raw.len() { 10.0 } else { 0.5 * (raw[j].1 + raw[j + 1].0) };
                    let count = sturm_count(&diag, &off, hi) - sturm_count(&diag, &off, lo);
                    let weight = count as f64 / total;
                    let want = 1.0 / raw.len() as f64;
                    assert!((weight - want).abs() <= 0.02 * want, "k={k} ({p},{q}) band {j}");
                }
            }
        }
    }

    #[test]
    fn gap_labels_stabilize() {
        let coupling = c(2.0, 1.0);
        let (k, deep) = (14, 17);
        let n = ids(k, &coupling).unwrap();
        let m = ids(deep, &coupling).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 50 {
            let e = rng.gen_range(-5.0..5.0);
            if n.band_of(e).is_some() || m.band_of(e).is_some() {
                continue;
            }
            assert!((n.eval(e) - m.eval(e)).abs() < 1e-3, "{e}");
            checked += 1;
        }
    }

    #[test]
    fn single_band_weight_vanishes() {
        let coupling = c(1.0, 1.0);
        let mut prev = 1.0;
        for k in [4, 7, 10, 13] {
            let n = ids(k, &coupling).unwrap();
            let (l, r) = n.level.raw_bands[0];
            let w = dos_weight((l, r), &n);
            assert!((w * fib_len(k) as f64 - 1.0).abs() < 1e-4, "k={k}: {}", w * fib_len(k) as f64);
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn free_pointwise_dimension_is_one() {
        let n = ids(14, &Coupling::free()).unwrap();
        for e in [-1.3, 0.1, 0.9] {
            let d = pointwise_dimension_of(e, &n, Some((1e-3, 0.1)), 10).unwrap();
            assert!((d.slope - 1.0).abs() < 0.05, "{e}: {}", d.slope);
        }
        assert!(matches!(pointwise_dimension_of(3.0, &n, None, 10), Err(Error::OutsideCover(_))));
    }
}
