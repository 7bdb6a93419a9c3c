//! Band sets of the periodic approximants, trace-bounded sets and escape
//! covers of the spectrum.
//!
//! Bands at level `k` are isolated with the Dirichlet eigenvalues of the
//! level-`k` cell cut open at one bond: there is exactly one in the closure
//! of every spectral gap, so consecutive ones bracket exactly one band. Edges
//! are then found by monotone bisection on the half-trace `x_k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalSet;
use crate::jacobi::{Cell, Coupling, DirichletCut};
use crate::tracemap::{check_bound, gamma};
use crate::transfer::trace_family_monodromy;

pub const DEFAULT_TOL: f64 = 1e-10;

/// Above this the level recursion continues in the log domain.
const LOG_DOMAIN_ABOVE: f64 = 1e100;

/// A half-trace that may exceed the range of `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfTrace {
    /// The value, saturated to `±f64::MAX` when it overflows.
    pub value: f64,
    pub ln_abs: f64,
    pub saturated: bool,
}

impl HalfTrace {
    fn from_f64(v: f64) -> Self {
        HalfTrace { value: v, ln_abs: v.abs().ln(), saturated: false }
    }

    pub fn sign(&self) -> f64 {
        if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    /// `σ x > bound`, valid also for saturated values.
    fn exceeds(&self, orientation: f64, bound: f64) -> bool {
        orientation * self.value > bound
    }
}

/// `sign · exp(ln)`, zero when `sign == 0`.
#[derive(Debug, Clone, Copy)]
struct SignedLog {
    sign: f64,
    ln: f64,
}

impl SignedLog {
    fn from_f64(v: f64) -> Self {
        if v == 0.0 {
            SignedLog { sign: 0.0, ln: f64::NEG_INFINITY }
        } else {
            SignedLog { sign: v.signum(), ln: v.abs().ln() }
        }
    }

    fn mul(self, o: SignedLog) -> SignedLog {
        if self.sign == 0.0 || o.sign == 0.0 {
            return SignedLog::from_f64(0.0);
        }
        SignedLog { sign: self.sign * o.sign, ln: self.ln + o.ln }
    }

    fn neg(self) -> SignedLog {
        SignedLog { sign: -self.sign, ln: self.ln }
    }

    fn add(self, o: SignedLog) -> SignedLog {
        if self.sign == 0.0 {
            return o;
        }
        if o.sign == 0.0 {
            return self;
        }
        let (hi, lo) = if self.ln >= o.ln { (self, o) } else { (o, self) };
        let d = (lo.ln - hi.ln).exp();
        if hi.sign == lo.sign {
            SignedLog { sign: hi.sign, ln: hi.ln + d.ln_1p() }
        } else if d >= 1.0 {
            SignedLog::from_f64(0.0)
        } else {
            SignedLog { sign: hi.sign, ln: hi.ln + (-d).ln_1p() }
        }
    }

    fn to_half_trace(self) -> HalfTrace {
        if self.sign == 0.0 {
            return HalfTrace::from_f64(0.0);
        }
        if self.ln < f64::MAX.ln() {
            HalfTrace { value: self.sign * self.ln.exp(), ln_abs: self.ln, saturated: false }
        } else {
            HalfTrace { value: self.sign * f64::MAX, ln_abs: self.ln, saturated: true }
        }
    }
}

/// Evaluator of `x_k(λ)` for a fixed level and coupling.
#[derive(Debug, Clone, Copy)]
pub struct Discriminant {
    k: usize,
    c: Coupling,
}

impl Discriminant {
    pub fn new(k: usize, c: &Coupling) -> Self {
        Discriminant { k, c: *c }
    }

    pub fn level(&self) -> usize {
        self.k
    }

    pub fn eval(&self, lambda: f64) -> HalfTrace {
        // gamma only fails for p = 0, which Coupling excludes
        let g = gamma(lambda, &self.c).expect("coupling has nonzero hopping");
        match self.k {
            0 => return HalfTrace::from_f64(g.y),
            1 => return HalfTrace::from_f64(g.x),
            _ => {}
        }
        let (mut x, mut y, mut z) = (g.x, g.y, g.z);
        let mut level = 1;
        while level < self.k {
            if x.abs().max(y.abs()) > LOG_DOMAIN_ABOVE {
                return self.finish_in_log_domain(level, x, y, z);
            }
            let next = 2.0 * x * y - z;
            z = y;
            y = x;
            x = next;
            level += 1;
        }
        HalfTrace::from_f64(x)
    }

    fn finish_in_log_domain(&self, mut level: usize, x: f64, y: f64, z: f64) -> HalfTrace {
        let two = SignedLog::from_f64(2.0);
        let (mut x, mut y, mut z) = (SignedLog::from_f64(x), SignedLog::from_f64(y), SignedLog::from_f64(z));
        while level < self.k {
            let next = two.mul(x).mul(y).add(z.neg());
            z = y;
            y = x;
            x = next;
            level += 1;
        }
        x.to_half_trace()
    }
}

/// The level-`k` half-trace `x_k(λ)` from the trace-map recursion.
pub fn trace_poly_eval(k: usize, lambda: f64, c: &Coupling) -> Result<HalfTrace> {
    if k < 1 {
        return Err(Error::InvalidArgument("trace level must be >= 1".into()));
    }
    Ok(Discriminant::new(k, c).eval(lambda))
}

/// Symmetric interval guaranteed to contain the spectrum and every
/// periodic-approximant band.
pub fn search_bounds(c: &Coupling) -> (f64, f64) {
    let r = 2.0 * c.p_b.abs().max(1.0) + c.q_b.abs();
    (-r, r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandLevel {
    pub k: usize,
    pub coupling: Coupling,
    /// The `F_k` Floquet bands in increasing order, before merging touchings.
    pub raw_bands: Vec<(f64, f64)>,
    /// Sign of `x_k` at the left edge of the first band; it alternates
    /// from band to band.
    pub first_orientation: f64,
    pub bands: IntervalSet,
    pub band_count: usize,
    pub discriminant_samples: Option<Vec<(f64, f64)>>,
}

impl BandLevel {
    /// Sign of `x_k` at the left edge of band `j` (0-based).
    pub fn orientation(&self, j: usize) -> f64 {
        if j.is_multiple_of(2) {
            self.first_orientation
        } else {
            -self.first_orientation
        }
    }

    /// Number of gaps closed by touching bands.
    pub fn touchings(&self) -> usize {
        self.raw_bands.len() - self.band_count
    }

    /// Attach `n` uniform samples of `x_k` over the hull of the bands.
    pub fn with_samples(mut self, n: usize) -> Self {
        let disc = Discriminant::new(self.k, &self.coupling);
        if let (Some((l, r)), true) = (self.bands.hull(), n >= 2) {
            let h = (r - l) / (n - 1) as f64;
            self.discriminant_samples =
                Some((0..n).map(|i| l + h * i as f64).map(|x| (x, disc.eval(x).value)).collect());
        }
        self
    }
}

fn merge_tol(tol: f64) -> f64 {
    (10.0 * tol).max(crate::interval::DEFAULT_MERGE_TOL)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Bisection for the switch point of a predicate that holds at `a` and
/// fails at `b` (either order of `a`, `b`).
fn bisect(mut a: f64, mut b: f64, tol: f64, pred: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if (b - a).abs() <= tol || mid == a || mid == b {
            break;
        }
        if pred(mid) {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// The `(2, 1)` monodromy entry vanishes exactly at the Dirichlet
/// eigenvalues of the cut cell; it is cheap to evaluate at any level.
fn dirichlet_sign(k: usize, c: &Coupling, lambda: f64) -> f64 {
    trace_family_monodromy(k, lambda, c).matrix.c.signum()
}

fn locate_eigenvalues(cut: &DirichletCut, k: usize, c: &Coupling, a: f64, b: f64, ca: usize, cb: usize, out: &mut Vec<f64>) {
    if ca == cb {
        return;
    }
    let mid = 0.5 * (a + b);
    if mid <= a || mid >= b || (b - a) <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
        out.extend(std::iter::repeat_n(mid, cb - ca));
        return;
    }
    if cb - ca == 1 {
        // isolated simple root: finish on the sign of the monodromy entry
        let sa = dirichlet_sign(k, c, a);
        if sa != 0.0 && sa == -dirichlet_sign(k, c, b) {
            out.push(bisect(a, b, 0.0, |x| dirichlet_sign(k, c, x) == sa));
            return;
        }
    }
    let cm = cut.count_below(mid);
    locate_eigenvalues(cut, k, c, a, mid, ca, cm, out);
    locate_eigenvalues(cut, k, c, mid, b, cm, cb, out);
}

/// Sorted Dirichlet eigenvalues of the cut cell inside `(lo, hi)`.
fn separators(cut: &DirichletCut, k: usize, c: &Coupling, lo: f64, hi: f64) -> Vec<f64> {
    const CHUNKS: usize = 64;
    let h = (hi - lo) / CHUNKS as f64;
    let grid: Vec<f64> = (0..=CHUNKS).map(|i| if i == CHUNKS { hi } else { lo + h * i as f64 }).collect();
    let counts: Vec<usize> = grid.par_iter().map(|&x| cut.count_below(x)).collect();
    (0..CHUNKS)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            locate_eigenvalues(cut, k, c, grid[i], grid[i + 1], counts[i], counts[i + 1], &mut out);
            out
        })
        .flatten()
        .collect()
}

/// The Floquet bands `{λ : |x_k(λ)| ≤ 1}`.
pub fn bands(k: usize, c: &Coupling, tol: f64) -> Result<BandLevel> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("band level must be >= 2, got {k}")));
    }
    check_tol(tol)?;
    let cell = Cell::trace_family(k);
    let f = cell.len();
    let disc = Discriminant::new(k, c);
    let (lo, hi) = search_bounds(c);
    let (lo, hi) = (lo - 1.0, hi + 1.0);

    let cut = DirichletCut::new(&cell, c);
    let mu = separators(&cut, k, c, lo, hi);
    if mu.len() != f - 1 {
        return Err(Error::Numerical(format!(
            "expected {} gap separators at level {k}, found {}",
            f - 1,
            mu.len()
        )));
    }
    let first = disc.eval(lo).sign();
    if first == 0.0 || disc.eval(lo).value.abs() <= 1.0 {
        return Err(Error::Numerical("search interval does not start in a gap".into()));
    }
    let mut fences = Vec::with_capacity(f + 1);
    fences.push(lo);
    fences.extend_from_slice(&mu);
    fences.push(hi);

    let raw_bands = (0..f)
        .into_par_iter()
        .map(|j| {
            let s = if j % 2 == 0 { first } else { -first };
            let (a, b) = (fences[j], fences[j + 1]);
            // s·x_k > 0 is monotone on the segment: the gap fragments on either
            // side have fixed signs and x_k runs from s to -s across the band
            let positive = |x: f64| disc.eval(x).exceeds(s, 0.0);
            if positive(b) {
                return Err(Error::SpuriousRoots(format!("band {} at level {k} is not bracketed", j + 1)));
            }
            let zero = bisect(a, b, 0.0, positive);
            // a fence may sit on either end of its gap, so the edge
            // predicates are only trusted strictly inside the segment
            let left = bisect(a, zero, tol, |x| disc.eval(x).exceeds(s, 1.0));
            let right = bisect(b, zero, tol, |x| disc.eval(x).exceeds(-s, 1.0));
            if left > right + tol {
                return Err(Error::SpuriousRoots(format!("band {} at level {k} has crossed edges", j + 1)));
            }
            let (left, right) = (left.min(right), right.max(left));
            if right - left > 100.0 * tol {
                let mid = disc.eval(0.5 * (left + right));
                if mid.value.abs() > 1.0 + 1e-6 {
                    return Err(Error::SpuriousRoots(format!(
                        "|x_{k}| = {} inside band {}",
                        mid.value.abs(),
                        j + 1
                    )));
                }
            }
            Ok((left, right))
        })
        .collect::<Result<Vec<_>>>()?;
    let raw_bands = close_touchings(&disc, raw_bands, &mu);

    let bands = IntervalSet::with_merge_tol(raw_bands.clone(), merge_tol(tol));
    Ok(BandLevel {
        k,
        coupling: *c,
        band_count: bands.len(),
        raw_bands,
        first_orientation: first,
        bands,
        discriminant_samples: None,
    })
}

/// Gaps whose peak `|x_k|` is within this of 1 are closed.
const TOUCHING_TOL: f64 = 1e-9;

/// Snap touching bands together at the separator of their gap. Near a
/// touching `|x_k| - 1` is quadratic, so bisection alone only resolves
/// the edges to about the square root of the rounding error.
fn close_touchings(disc: &Discriminant, mut raw: Vec<(f64, f64)>, mu: &[f64]) -> Vec<(f64, f64)> {
    let closed: Vec<bool> = (0..raw.len() - 1)
        .into_par_iter()
        .map(|j| {
            let (r, l) = (raw[j].1, raw[j + 1].0);
            if l - r > 1e-6 {
                return false;
            }
            let peak = if l > r { gap_peak(disc, r, l) } else { r };
            disc.eval(peak).value.abs() - 1.0 <= TOUCHING_TOL
        })
        .collect();
    for (j, &touching) in closed.iter().enumerate() {
        if touching {
            raw[j].1 = mu[j];
            raw[j + 1].0 = mu[j];
        }
    }
    raw
}

/// Maximizer of `|x|` over a gap, where it is unimodal.
fn gap_peak(disc: &Discriminant, mut a: f64, mut b: f64) -> f64 {
    let g = |x: f64| disc.eval(x).ln_abs;
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..160 {
        if b - a <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = g(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = g(x1);
        }
    }
    if f1 >= f2 {
        x1
    } else {
        x2
    }
}

/// `{λ : |x_k(λ)| ≤ C}` together with the level-`k` bands it was built from.
pub fn trace_bounded_level(k: usize, c: &Coupling, bound: f64, tol: f64) -> Result<(Option<BandLevel>, IntervalSet)> {
    check_tol(tol)?;
    if !(bound >= 1.0) || !bound.is_finite() {
        return Err(Error::BoundTooSmall { bound, threshold: 1.0 });
    }
    match k {
        0 => {
            let r = 2.0 * c.p_b.abs() * bound;
            return Ok((None, IntervalSet::single(-r, r)));
        }
        1 => return Ok((None, IntervalSet::single(c.q_b - 2.0 * bound, c.q_b + 2.0 * bound))),
        _ => {}
    }
    let level = bands(k, c, tol)?;
    if bound == 1.0 {
        let set = level.bands.clone();
        return Ok((Some(level), set));
    }
    let disc = Discriminant::new(k, c);
    let raw = &level.raw_bands;
    let f = raw.len();
    let outside = |x: f64, s: f64| disc.eval(x).exceeds(s, bound);

    let outer = |edge: f64, dir: f64, s: f64| {
        let mut d = 1.0;
        while !outside(edge + dir * d, s) {
            d *= 2.0;
        }
        bisect(edge + dir * d, edge, tol, |x| outside(x, s))
    };
    let left_end = outer(raw[0].0, -1.0, level.orientation(0));
    let right_end = outer(raw[f - 1].1, 1.0, -level.orientation(f - 1));

    // crossings of |x_k| = C inside each gap, in order
    let cuts: Vec<Option<(f64, f64)>> = (0..f - 1)
        .into_par_iter()
        .map(|j| {
            let (r, l) = (raw[j].1, raw[j + 1].0);
            if l - r <= merge_tol(tol) {
                return None;
            }
            let s = -level.orientation(j);
            let peak = gap_peak(&disc, r, l);
            if !outside(peak, s) {
                return None;
            }
            let up = bisect(peak, r, tol, |x| outside(x, s));
            let down = bisect(peak, l, tol, |x| outside(x, s));
            Some((up, down))
        })
        .collect();

    let mut pieces = Vec::new();
    let mut start = left_end;
    for (up, down) in cuts.into_iter().flatten() {
        pieces.push((start, up));
        start = down;
    }
    pieces.push((start, right_end));
    let set = IntervalSet::with_merge_tol(pieces, merge_tol(tol));
    Ok((Some(level), set))
}

/// The trace-bounded set `{λ : |x_k(λ)| ≤ C}`.
pub fn trace_bounded_set(k: usize, c: &Coupling, bound: f64, tol: f64) -> Result<IntervalSet> {
    trace_bounded_level(k, c, bound, tol).map(|(_, s)| s)
}

/// `σ̂_k ∪ σ̂_{k+1}`; these covers decrease to the spectrum.
pub fn approx_spectrum(k: usize, c: &Coupling, bound: f64, tol: f64) -> Result<IntervalSet> {
    check_bound(bound, c)?;
    let (a, b) = rayon::join(
        || trace_bounded_set(k, c, bound, tol),
        || trace_bounded_set(k + 1, c, bound, tol),
    );
    Ok(a?.union(&b?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub k: usize,
    pub band_count: usize,
    pub measure: f64,
}

/// Band counts and `measure(approx_spectrum(k))` for `k = kmin..=kmax`.
pub fn measure_scan(c: &Coupling, kmin: usize, kmax: usize, bound: f64, tol: f64) -> Result<Vec<MeasureRow>> {
    check_bound(bound, c)?;
    if kmin < 2 || kmax < kmin {
        return Err(Error::InvalidArgument(format!("invalid level range {kmin}..={kmax}")));
    }
    let levels: Vec<(Option<BandLevel>, IntervalSet)> = (kmin..=kmax + 1)
        .into_par_iter()
        .map(|k| trace_bounded_level(k, c, bound, tol))
        .collect::<Result<_>>()?;
    Ok((kmin..=kmax)
        .map(|k| {
            let i = k - kmin;
            let level = levels[i].0.as_ref().expect("levels >= 2 carry bands");
            MeasureRow {
                k,
                band_count: level.band_count,
                measure: levels[i].1.union(&levels[i + 1].1).measure(),
            }
        })
        .collect())
}

/// Closed interval with outward-agnostic float arithmetic.
#[derive(Debug, Clone, Copy)]
struct Iv {
    lo: f64,
    hi: f64,
}

impl Iv {
    fn new(a: f64, b: f64) -> Self {
        Iv { lo: a.min(b), hi: a.max(b) }
    }

    fn point(a: f64) -> Self {
        Iv { lo: a, hi: a }
    }

    fn mul(self, o: Iv) -> Iv {
        let p = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        Iv {
            lo: p.iter().copied().fold(f64::INFINITY, f64::min),
            hi: p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn trace_step(x: Iv, y: Iv, z: Iv) -> Iv {
        let xy = x.mul(y);
        Iv { lo: 2.0 * xy.lo - z.hi, hi: 2.0 * xy.hi - z.lo }
    }

    /// `min |t|` over the interval.
    fn mig(self) -> f64 {
        if self.lo <= 0.0 && self.hi >= 0.0 {
            0.0
        } else {
            self.lo.abs().min(self.hi.abs())
        }
    }

    fn is_finite(self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

/// True if every `λ ∈ [a, b]` has two consecutive half-traces above `bound`
/// at some level `j ≤ depth + 1`.
fn certified_escape(a: f64, b: f64, c: &Coupling, bound: f64, depth: usize) -> bool {
    let p = c.p_b;
    let mut x = Iv::new(0.5 * (a - c.q_b), 0.5 * (b - c.q_b));
    let mut y = Iv::new(a / (2.0 * p), b / (2.0 * p));
    let mut z = Iv::point((1.0 + p * p) / (2.0 * p));
    for _ in 0..=depth {
        if x.mig() > bound && y.mig() > bound {
            return true;
        }
        let next = Iv::trace_step(x, y, z);
        if !next.is_finite() {
            return false;
        }
        z = y;
        y = x;
        x = next;
    }
    x.mig() > bound && y.mig() > bound
}

fn refine(a: f64, b: f64, c: &Coupling, bound: f64, depth: usize, resolution: f64) -> Vec<(f64, f64)> {
    if certified_escape(a, b, c, bound, depth) {
        return Vec::new();
    }
    if b - a <= resolution {
        return vec![(a, b)];
    }
    let mid = 0.5 * (a + b);
    if b - a > 64.0 * resolution {
        let (mut l, r) = rayon::join(
            || refine(a, mid, c, bound, depth, resolution),
            || refine(mid, b, c, bound, depth, resolution),
        );
        l.extend(r);
        l
    } else {
        let mut l = refine(a, mid, c, bound, depth, resolution);
        l.extend(refine(mid, b, c, bound, depth, resolution));
        l
    }
}

/// Cover of the spectrum by dyadic cells of width at most `resolution` that
/// cannot be certified (by interval arithmetic on the trace map) to escape
/// within `depth` steps.
pub fn escape_spectrum(c: &Coupling, depth: usize, resolution: f64, bound: f64) -> Result<IntervalSet> {
    if depth < 2 {
        return Err(Error::InvalidArgument("escape depth must be >= 2".into()));
    }
    check_tol(resolution)?;
    check_bound(bound, c)?;
    let (lo, hi) = search_bounds(c);
    let cells = refine(lo, hi, c, bound, depth, resolution);
    Ok(IntervalSet::with_merge_tol(cells, 0.0))
}
