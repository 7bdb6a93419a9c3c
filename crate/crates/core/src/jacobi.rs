//! Operator model: couplings, periodic unit cells, Floquet matrices and the
//! dense eigensolver used as an independent check on the trace map.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fibword::{fib_word, Letter, Word};
use crate::interval::IntervalSet;

/// Hard cap on the dense solver.
pub const MAX_DENSE_SIZE: usize = 2000;

/// The pair `(p(b), q(b))`; the letter `a` always carries `p = 1`, `q = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub p_b: f64,
    pub q_b: f64,
}

impl Coupling {
    pub fn new(p_b: f64, q_b: f64) -> Result<Self> {
        if !p_b.is_finite() || !q_b.is_finite() {
            return Err(Error::InvalidArgument("coupling must be finite".into()));
        }
        if p_b == 0.0 {
            return Err(Error::ZeroHopping);
        }
        Ok(Coupling { p_b, q_b })
    }

    /// The free Laplacian `(1, 0)`.
    pub fn free() -> Self {
        Coupling { p_b: 1.0, q_b: 0.0 }
    }

    pub fn hopping(&self, letter: Letter) -> f64 {
        match letter {
            Letter::A => 1.0,
            Letter::B => self.p_b,
        }
    }

    pub fn potential(&self, letter: Letter) -> f64 {
        match letter {
            Letter::A => 0.0,
            Letter::B => self.q_b,
        }
    }

    pub fn is_free(&self) -> bool {
        self.p_b == 1.0 && self.q_b == 0.0
    }
}

/// One period of a periodic Jacobi operator.
///
/// Site `n` carries potential `q(potential[n])`; the bond between sites `n`
/// and `n + 1` (cyclically) carries hopping `p(bonds[n])`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    potential: Word,
    bonds: Word,
}

impl Cell {
    pub fn new(potential: Word, bonds: Word) -> Result<Self> {
        if potential.is_empty() {
            return Err(Error::EmptyInput);
        }
        if potential.len() != bonds.len() {
            return Err(Error::InvalidArgument(format!(
                "cell words differ in length ({} vs {})",
                potential.len(),
                bonds.len()
            )));
        }
        Ok(Cell { potential, bonds })
    }

    /// The operator `(Hφ)_n = p(w_n)φ_{n-1} + p(w_{n+1})φ_{n+1} + q(w_n)φ_n`
    /// with `w` repeated periodically.
    pub fn operator(w: &Word) -> Result<Self> {
        Cell::new(w.clone(), w.rotate_left(1))
    }

    /// Each site carries the hopping and potential of its own letter, which is
    /// the cell whose monodromy is the product of [`crate::transfer::site_matrix`].
    pub fn sitewise(w: &Word) -> Result<Self> {
        Cell::new(w.clone(), w.clone())
    }

    /// The cell whose half-trace is the level-`k` component of the trace-map
    /// orbit started on the line of initial conditions.
    ///
    /// Two site types generate the family: `A` (potential `a`, outgoing bond
    /// `b`) at level 0 and `B` (potential `b`, outgoing bond `a`) at level 1,
    /// with `cell_{k+1} = cell_{k-1} cell_k`.
    pub fn trace_family(k: usize) -> Cell {
        // true marks site type B
        let mut prev = vec![false];
        let mut cur = vec![true];
        if k == 0 {
            cur = prev.clone();
        }
        for _ in 1..k {
            let mut next = prev.clone();
            next.extend_from_slice(&cur);
            prev = std::mem::replace(&mut cur, next);
        }
        let potential = Word::new(cur.iter().map(|&t| if t { Letter::B } else { Letter::A }).collect());
        let bonds = potential.swapped();
        Cell { potential, bonds }
    }

    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }

    pub fn potential_word(&self) -> &Word {
        &self.potential
    }

    pub fn bond_word(&self) -> &Word {
        &self.bonds
    }

    pub fn diagonal(&self, c: &Coupling) -> Vec<f64> {
        self.potential.letters().iter().map(|&l| c.potential(l)).collect()
    }

    /// Bond hoppings; entry `n` couples sites `n` and `n + 1 mod len`.
    pub fn bond_values(&self, c: &Coupling) -> Vec<f64> {
        self.bonds.letters().iter().map(|&l| c.hopping(l)).collect()
    }
}

/// Floquet boundary phase: periodic (`+1`) or antiperiodic (`-1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Periodic,
    Antiperiodic,
}

impl Phase {
    pub fn sign(self) -> f64 {
        match self {
            Phase::Periodic => 1.0,
            Phase::Antiperiodic => -1.0,
        }
    }
}

/// Dense symmetric Floquet matrix of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicCellMatrix {
    pub phase: Phase,
    matrix: DMatrix<f64>,
}

impl PeriodicCellMatrix {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }
}

/// Floquet matrix at quasimomentum 0 or π for an arbitrary cell.
pub fn cell_matrix(cell: &Cell, c: &Coupling, phase: Phase) -> PeriodicCellMatrix {
    let n = cell.len();
    let diag = cell.diagonal(c);
    let bonds = cell.bond_values(c);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] += diag[i];
    }
    for (i, &b) in bonds.iter().enumerate() {
        let j = (i + 1) % n;
        let v = if j == 0 { phase.sign() * b } else { b };
        if i == j {
            m[(i, i)] += 2.0 * v;
        } else {
            m[(i, j)] += v;
            m[(j, i)] += v;
        }
    }
    PeriodicCellMatrix { phase, matrix: m }
}

/// The `F_k x F_k` Floquet matrix of the operator with unit cell `fib_word(k)`.
pub fn periodic_matrix(k: usize, c: &Coupling, phase: Phase) -> Result<PeriodicCellMatrix> {
    let w = fib_word(k)?;
    Ok(cell_matrix(&Cell::operator(&w)?, c, phase))
}

/// All eigenvalues of a real symmetric matrix, ascending.
pub fn eigenvalues_symmetric(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::InvalidArgument("matrix is not square".into()));
    }
    if n > MAX_DENSE_SIZE {
        return Err(Error::MatrixTooLarge { size: n, cap: MAX_DENSE_SIZE });
    }
    let scale = m.amax().max(1.0);
    let deviation = (m - m.transpose()).amax();
    if deviation > 1e-12 * scale {
        return Err(Error::NotSymmetric { deviation });
    }
    let mut vals: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Raw Floquet bands of a cell: one `(left, right)` pair per band, touching
/// bands kept separate.
pub fn oracle_bands(cell: &Cell, c: &Coupling) -> Result<Vec<(f64, f64)>> {
    let per = eigenvalues_symmetric(cell_matrix(cell, c, Phase::Periodic).matrix())?;
    let anti = eigenvalues_symmetric(cell_matrix(cell, c, Phase::Antiperiodic).matrix())?;
    let mut merged: Vec<(f64, Phase)> = per
        .iter()
        .map(|&e| (e, Phase::Periodic))
        .chain(anti.iter().map(|&e| (e, Phase::Antiperiodic)))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));

    let scale = merged.iter().fold(1.0f64, |acc, e| acc.max(e.0.abs()));
    let tol = 1e-9 * scale;
    let mut bands = Vec::with_capacity(cell.len());
    for (j, pair) in merged.chunks(2).enumerate() {
        let (l, r) = (pair[0].0, pair[1].0);
        let has = |phase: Phase| {
            merged
                .iter()
                .any(|&(e, ph)| ph == phase && e >= l - tol && e <= r + tol)
        };
        if !(has(Phase::Periodic) && has(Phase::Antiperiodic)) {
            return Err(Error::InterlacingFailed(format!("band {} = [{l}, {r}]", j + 1)));
        }
        bands.push((l, r));
    }
    Ok(bands)
}

/// Floquet bands of the level-`k` approximant whose discriminant is the
/// trace-map half-trace `x_k`, from dense diagonalization.
pub fn band_edges_oracle(k: usize, c: &Coupling) -> Result<IntervalSet> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("oracle needs level >= 2, got {k}")));
    }
    let cell = Cell::trace_family(k);
    if cell.len() > MAX_DENSE_SIZE {
        return Err(Error::MatrixTooLarge { size: cell.len(), cap: MAX_DENSE_SIZE });
    }
    Ok(IntervalSet::from_intervals(oracle_bands(&cell, c)?))
}

/// Number of eigenvalues below `lambda` of the symmetric tridiagonal matrix
/// with the given diagonal and off-diagonal (Sturm sequence count).
pub fn sturm_count(diag: &[f64], off: &[f64], lambda: f64) -> usize {
    const PIVMIN: f64 = 1e-280;
    let mut count = 0;
    let mut d = 1.0;
    for (i, &a) in diag.iter().enumerate() {
        let coupling = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        d = a - lambda - coupling / d;
        if d.abs() < PIVMIN {
            d = -PIVMIN;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// The cell cut open at its last site: the Dirichlet problem on sites
/// `1..F-1`, whose eigenvalues sit one in each closed spectral gap.
#[derive(Debug, Clone)]
pub struct DirichletCut {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl DirichletCut {
    pub fn new(cell: &Cell, c: &Coupling) -> Self {
        let n = cell.len();
        let mut diag = cell.diagonal(c);
        let mut off = cell.bond_values(c);
        diag.truncate(n.saturating_sub(1));
        off.truncate(n.saturating_sub(2));
        DirichletCut { diag, off }
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    /// Dirichlet eigenvalues strictly below `lambda`.
    pub fn count_below(&self, lambda: f64) -> usize {
        sturm_count(&self.diag, &self.off, lambda)
    }
}

/// Open-boundary truncation of `cells` consecutive copies of a cell, as a
/// (diagonal, off-diagonal) pair.
pub fn open_truncation(cell: &Cell, c: &Coupling, cells: usize) -> (Vec<f64>, Vec<f64>) {
    let diag_cell = cell.diagonal(c);
    let bond_cell = cell.bond_values(c);
    let n = cell.len() * cells;
    let diag: Vec<f64> = (0..n).map(|i| diag_cell[i % cell.len()]).collect();
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| bond_cell[i % cell.len()]).collect();
    (diag, off)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibword::fib_len;
    use std::f64::consts::PI;

    fn coupling(p: f64, q: f64) -> Coupling {
        Coupling::new(p, q).unwrap()
    }

    #[test]
    fn letter_values() {
        let c = coupling(2.0, 0.5);
        assert_eq!(c.hopping(Letter::A), 1.0);
        assert_eq!(c.hopping(Letter::B), 2.0);
        assert_eq!(c.potential(Letter::A), 0.0);
        assert_eq!(c.potential(Letter::B), 0.5);
        assert_eq!(Coupling::new(0.0, 1.0), Err(Error::ZeroHopping));
    }

    #[test]
    fn periodic_matrix_examples() {
        let free = Coupling::free();
        let m = periodic_matrix(2, &free, Phase::Periodic).unwrap();
        assert_eq!(m.entry(0, 1), 2.0);
        let ev = eigenvalues_symmetric(m.matrix()).unwrap();
        assert!((ev[0] + 2.0).abs() < 1e-12 && (ev[1] - 2.0).abs() < 1e-12);

        let m = periodic_matrix(3, &free, Phase::Periodic).unwrap();
        let ev = eigenvalues_symmetric(m.matrix()).unwrap();
        for (got, want) in ev.iter().zip([-1.0, -1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }

        // cell "aba": diagonal (0, 1, 0), bond into site 2 is p(b) = 2
        let m = periodic_matrix(3, &coupling(2.0, 1.0), Phase::Periodic).unwrap();
        assert_eq!((m.entry(0, 0), m.entry(1, 1), m.entry(2, 2)), (0.0, 1.0, 0.0));
        assert_eq!(m.entry(0, 1), 2.0);
        assert_eq!(m.entry(1, 2), 1.0);
        assert_eq!(m.entry(2, 0), 1.0);
        assert_eq!(m.matrix(), &m.matrix().transpose());
        assert!(periodic_matrix(1, &free, Phase::Periodic).is_err());
    }

    #[test]
    fn eigenvalue_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(eigenvalues_symmetric(&id).unwrap(), vec![1.0, 1.0, 1.0]);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, -1.0, 0.0]));
        assert_eq!(eigenvalues_symmetric(&d).unwrap(), vec![-1.0, 0.0, 2.0]);

        let m = periodic_matrix(4, &Coupling::free(), Phase::Periodic).unwrap();
        let ev = eigenvalues_symmetric(m.matrix()).unwrap();
        let mut want: Vec<f64> = (0..5).map(|j| 2.0 * (2.0 * PI * j as f64 / 5.0).cos()).collect();
        want.sort_by(f64::total_cmp);
        for (g, w) in ev.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }

        let mut skew = DMatrix::<f64>::zeros(2, 2);
        skew[(0, 1)] = 1.0;
        assert!(matches!(eigenvalues_symmetric(&skew), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn oracle_examples() {
        let bands = band_edges_oracle(2, &coupling(2.0, 0.0)).unwrap();
        assert_eq!(bands.len(), 2);
        for (got, want) in bands.intervals().iter().zip([(-3.0, -1.0), (1.0, 3.0)]) {
            assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
        }
        let free = band_edges_oracle(2, &Coupling::free()).unwrap();
        assert_eq!(free.len(), 1);
        assert!((free.measure() - 4.0).abs() < 1e-12);

        let bands = band_edges_oracle(5, &coupling(1.0, 2.0)).unwrap();
        assert_eq!(bands.len(), 8);
    }

    #[test]
    fn trace_family_shape() {
        assert_eq!(Cell::trace_family(0).potential_word().to_string(), "a");
        assert_eq!(Cell::trace_family(1).potential_word().to_string(), "b");
        assert_eq!(Cell::trace_family(2).potential_word().to_string(), "ab");
        assert_eq!(Cell::trace_family(3).potential_word().to_string(), "bab");
        for k in 2..=16 {
            let cell = Cell::trace_family(k);
            assert_eq!(cell.len(), fib_len(k));
            assert_eq!(cell.bond_word(), &cell.potential_word().swapped());
        }
    }

    #[test]
    fn spectral_symmetry_and_gershgorin() {
        for k in 2..=8 {
            for (p, q) in [(0.5, 0.0), (2.0, 0.0), (1.0, 2.0), (2.0, 1.0), (0.5, -1.0)] {
                let c = coupling(p, q);
                let mut all = Vec::new();
                for phase in [Phase::Periodic, Phase::Antiperiodic] {
                    let ev = eigenvalues_symmetric(periodic_matrix(k, &c, phase).unwrap().matrix()).unwrap();
                    let bound = 2.0 * p.abs().max(1.0) + q.abs();
                    assert!(ev.iter().all(|e| e.abs() <= bound + 1e-12));
                    all.extend(ev);
                }
                // odd cells are not bipartite: λ -> -λ swaps the two phases
                if q == 0.0 {
                    all.sort_by(f64::total_cmp);
                    let n = all.len();
                    for i in 0..n {
                        assert!((all[i] + all[n - 1 - i]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn sturm_count_matches_dense() {
        let cell = Cell::trace_family(7);
        let c = coupling(2.0, 1.0);
        let cut = DirichletCut::new(&cell, &c);
        assert_eq!(cut.size(), cell.len() - 1);
        let mut dense = DMatrix::<f64>::zeros(cut.size(), cut.size());
        for i in 0..cut.size() {
            dense[(i, i)] = cell.diagonal(&c)[i];
            if i + 1 < cut.size() {
                dense[(i, i + 1)] = cell.bond_values(&c)[i];
                dense[(i + 1, i)] = cell.bond_values(&c)[i];
            }
        }
        let ev = eigenvalues_symmetric(&dense).unwrap();
        for lambda in [-4.0, -1.3, 0.0, 0.7, 2.2, 4.5] {
            let want = ev.iter().filter(|&&e| e < lambda).count();
            assert_eq!(cut.count_below(lambda), want);
        }
    }

    #[test]
    fn dirichlet_eigenvalues_sit_in_gap_closures() {
        for (p, q) in [(2.0, 1.0), (1.0, 2.0), (0.5, -1.0), (-1.5, 0.3)] {
            let c = coupling(p, q);
            for k in 3..=8 {
                let cell = Cell::trace_family(k);
                let bands = oracle_bands(&cell, &c).unwrap();
                let cut = DirichletCut::new(&cell, &c);
                // inside band j (1-based) exactly j-1 Dirichlet eigenvalues lie below
                for (j, &(l, r)) in bands.iter().enumerate() {
                    if r - l > 1e-9 {
                        assert_eq!(cut.count_below(0.5 * (l + r)), j, "k={k} c=({p},{q}) band {j}");
                    }
                }
            }
        }
    }
}
