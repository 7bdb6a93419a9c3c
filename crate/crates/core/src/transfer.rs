//! Transfer-matrix cocycle over a unit cell.
//!
//! The site matrix `T = (1/p) [[λ - q, -1], [p², 0]]` advances
//! `Θ_n = (θ_n, p θ_{n-1})` by one site and is unimodular. Products over a
//! cell are accumulated with rescaling so that half-traces stay finite far
//! outside the spectrum.

use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fibword::{Letter, Word};
use crate::jacobi::{Cell, Coupling};

const RESCALE_ABOVE: f64 = 1e100;

/// Real 2x2 matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs())
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, o: Mat2) -> Mat2 {
        Mat2 {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }
}

/// A matrix product stored as `exp(log_scale) * matrix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledProduct {
    pub matrix: Mat2,
    pub log_scale: f64,
}

impl ScaledProduct {
    pub fn half_trace(&self) -> f64 {
        0.5 * self.matrix.trace() * self.log_scale.exp()
    }

    /// `ln |Tr / 2|`, finite even when the half-trace itself overflows.
    pub fn ln_abs_half_trace(&self) -> f64 {
        (0.5 * self.matrix.trace()).abs().ln() + self.log_scale
    }

    pub fn det(&self) -> f64 {
        self.matrix.det() * (2.0 * self.log_scale).exp()
    }

    /// The product with the scale folded back in; entries may overflow.
    pub fn unscaled(&self) -> Mat2 {
        self.matrix.scale(self.log_scale.exp())
    }
}

/// Site matrix with hopping `p` and potential `q`.
pub fn step_matrix(p: f64, q: f64, lambda: f64) -> Mat2 {
    Mat2::new((lambda - q) / p, -1.0 / p, p, 0.0)
}

/// Site matrix of a letter carrying its own hopping and potential.
pub fn site_matrix(letter: Letter, lambda: f64, c: &Coupling) -> Mat2 {
    step_matrix(c.hopping(letter), c.potential(letter), lambda)
}

fn accumulate(factors: impl Iterator<Item = Mat2>) -> ScaledProduct {
    let mut m = Mat2::IDENTITY;
    let mut log_scale = 0.0;
    for t in factors {
        m = t * m;
        let big = m.max_abs();
        if big > RESCALE_ABOVE {
            m = m.scale(1.0 / big);
            log_scale += big.ln();
        }
    }
    ScaledProduct { matrix: m, log_scale }
}

/// `T_len ... T_1` for a word of sitewise letters.
pub fn cocycle_product_scaled(w: &Word, lambda: f64, c: &Coupling) -> Result<ScaledProduct> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(accumulate(w.letters().iter().map(|&l| site_matrix(l, lambda, c))))
}

pub fn cocycle_product(w: &Word, lambda: f64, c: &Coupling) -> Result<Mat2> {
    cocycle_product_scaled(w, lambda, c).map(|p| p.unscaled())
}

/// Signed half-trace of the sitewise cocycle over `w`.
pub fn half_trace(w: &Word, lambda: f64, c: &Coupling) -> Result<f64> {
    cocycle_product_scaled(w, lambda, c).map(|p| p.half_trace())
}

/// Monodromy of a cell: site `n` uses the hopping of its outgoing bond and
/// its own potential.
pub fn cell_product(cell: &Cell, lambda: f64, c: &Coupling) -> ScaledProduct {
    let pot = cell.potential_word().letters();
    let bonds = cell.bond_word().letters();
    accumulate(
        pot.iter()
            .zip(bonds)
            .map(|(&v, &b)| step_matrix(c.hopping(b), c.potential(v), lambda)),
    )
}

pub fn cell_half_trace(cell: &Cell, lambda: f64, c: &Coupling) -> f64 {
    cell_product(cell, lambda, c).half_trace()
}

/// Monodromy of [`Cell::trace_family`] from the block recursion
/// `M_{k+1} = M_k M_{k-1}`, in `O(k)` matrix products.
pub fn trace_family_monodromy(k: usize, lambda: f64, c: &Coupling) -> ScaledProduct {
    let renorm = |m: Mat2, log_scale: f64| {
        let big = m.max_abs();
        if big > RESCALE_ABOVE || (big < 1.0 / RESCALE_ABOVE && big > 0.0) {
            ScaledProduct { matrix: m.scale(1.0 / big), log_scale: log_scale + big.ln() }
        } else {
            ScaledProduct { matrix: m, log_scale }
        }
    };
    let mut prev = renorm(step_matrix(c.p_b, 0.0, lambda), 0.0);
    let mut cur = renorm(step_matrix(1.0, c.q_b, lambda), 0.0);
    if k == 0 {
        return prev;
    }
    for _ in 1..k {
        let next = renorm(cur.matrix * prev.matrix, cur.log_scale + prev.log_scale);
        prev = std::mem::replace(&mut cur, next);
    }
    cur
}

/// Fundamental solutions of
/// `p_{n+1} θ_{n+1} = (λ - q_n) θ_n - p_n θ_{n-1}` for the operator with
/// periodic unit cell `w`: `φ` starts from `(θ_0, θ_{-1}) = (1, 0)` and `ψ`
/// from `(0, 1)`. Returns `(φ_F, ψ_{F-1})`.
pub fn fundamental_solutions(w: &Word, lambda: f64, c: &Coupling) -> Result<(f64, f64)> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    let letters = w.letters();
    let n = letters.len();
    // letter at position j (1-based, periodic; position 0 is position n)
    let at = |j: usize| letters[(j + n - 1) % n];
    let run = |mut cur: f64, mut prev: f64| {
        let mut history = Vec::with_capacity(n + 1);
        history.push(cur);
        for j in 0..n {
            let next = ((lambda - c.potential(at(j))) * cur - c.hopping(at(j)) * prev) / c.hopping(at(j + 1));
            prev = cur;
            cur = next;
            history.push(cur);
        }
        history
    };
    let phi = run(1.0, 0.0);
    let psi = run(0.0, 1.0);
    Ok((phi[n], psi[n - 1]))
}

/// Floquet discriminant `(φ_F + ψ_{F-1}) / 2` from the recurrence.
pub fn recurrence_discriminant(w: &Word, lambda: f64, c: &Coupling) -> Result<f64> {
    let (phi, psi) = fundamental_solutions(w, lambda, c)?;
    Ok(0.5 * (phi + psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibword::fib_word;
    use proptest::prelude::*;

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    fn close(a: Mat2, b: Mat2, tol: f64) -> bool {
        [(a.a, b.a), (a.b, b.b), (a.c, b.c), (a.d, b.d)]
            .iter()
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    #[test]
    fn site_matrix_examples() {
        let c = Coupling::new(2.0, 1.0).unwrap();
        let lambda = 0.3;
        assert_eq!(site_matrix(Letter::A, lambda, &c), Mat2::new(lambda, -1.0, 1.0, 0.0));
        let tb = site_matrix(Letter::B, lambda, &c);
        assert!(close(tb, Mat2::new(0.5 * (lambda - 1.0), -0.5, 2.0, 0.0), 1e-15));
        assert!((site_matrix(Letter::B, 3.7, &c).det() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn product_examples() {
        let free = Coupling::free();
        let lambda = 0.8;
        assert_eq!(cocycle_product(&w("a"), lambda, &free).unwrap(), Mat2::new(lambda, -1.0, 1.0, 0.0));

        for (p, q) in [(2.0, 1.0), (0.5, -1.0), (-1.3, 0.4)] {
            let c = Coupling::new(p, q).unwrap();
            for lambda in [-2.0, 0.1, 1.7] {
                let got = cocycle_product(&w("ab"), lambda, &c).unwrap();
                let want = Mat2::new(
                    ((lambda - q) * lambda - 1.0) / p,
                    -(lambda - q) / p,
                    p * lambda,
                    -p,
                );
                assert!(close(got, want, 1e-13));
            }
        }
        let c = Coupling::new(2.0, 1.0).unwrap();
        let big = cocycle_product_scaled(&fib_word(6).unwrap(), 1.234, &c).unwrap();
        assert!((big.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_trace_examples() {
        let c = Coupling::new(2.0, 0.0).unwrap();
        assert!((half_trace(&w("ab"), 0.0, &c).unwrap() + 1.25).abs() < 1e-15);
        assert!((half_trace(&w("a"), 2.0, &Coupling::free()).unwrap() - 1.0).abs() < 1e-15);
        assert!(half_trace(&Word::default(), 0.0, &c).is_err());
    }

    #[test]
    fn rescaling_keeps_far_traces_finite() {
        let c = Coupling::new(2.0, 1.0).unwrap();
        let word = fib_word(20).unwrap();
        let prod = cocycle_product_scaled(&word, 40.0, &c).unwrap();
        assert!(prod.log_scale > 0.0);
        assert!(prod.ln_abs_half_trace().is_finite());
        assert!((prod.matrix.det() * (2.0 * prod.log_scale).exp() - 1.0).abs() < 1e-6 || prod.log_scale > 300.0);
    }

    #[test]
    fn discriminant_identity() {
        for (p, q) in [(1.0, 0.0), (2.0, 0.0), (1.0, 2.0), (2.0, 1.0), (0.5, -1.0)] {
            let c = Coupling::new(p, q).unwrap();
            for k in 2..=6 {
                let word = fib_word(k).unwrap();
                let cell = Cell::operator(&word).unwrap();
                for i in 0..15 {
                    let lambda = -4.0 + 8.0 * i as f64 / 14.0;
                    let from_recurrence = recurrence_discriminant(&word, lambda, &c).unwrap();
                    let from_cocycle = cell_half_trace(&cell, lambda, &c);
                    assert!(
                        (from_recurrence.abs() - from_cocycle.abs()).abs() <= 1e-10 * (1.0 + from_cocycle.abs()),
                        "k={k} c=({p},{q}) λ={lambda}: {from_recurrence} vs {from_cocycle}"
                    );
                }
            }
        }
    }

    #[test]
    fn sitewise_cell_matches_word_cocycle() {
        let c = Coupling::new(0.5, -1.0).unwrap();
        let word = fib_word(7).unwrap();
        let cell = Cell::sitewise(&word).unwrap();
        for lambda in [-2.5, -0.4, 0.9, 2.1] {
            let a = half_trace(&word, lambda, &c).unwrap();
            let b = cell_half_trace(&cell, lambda, &c);
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn block_recursion_matches_cell_product() {
        for (p, q) in [(1.0, 0.0), (2.0, 1.0), (0.5, -1.0), (-1.5, 0.3)] {
            let c = Coupling::new(p, q).unwrap();
            for k in 0..=14 {
                let cell = Cell::trace_family(k);
                for lambda in [-3.1, -0.2, 0.7, 2.9] {
                    let a = trace_family_monodromy(k, lambda, &c);
                    let b = cell_product(&cell, lambda, &c);
                    let (na, nb) = (a.matrix.max_abs(), b.matrix.max_abs());
                    assert!((na.ln() + a.log_scale - nb.ln() - b.log_scale).abs() < 1e-9, "k={k} ({p},{q}) λ={lambda}");
                    assert!(close(a.matrix.scale(1.0 / na), b.matrix.scale(1.0 / nb), 1e-9), "k={k} ({p},{q}) λ={lambda}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn products_are_unimodular(
            letters in prop::collection::vec(prop::bool::ANY, 1..200),
            p in prop_oneof![-3.0f64..-0.3, 0.3f64..3.0],
            q in -3.0f64..3.0,
            lambda in -6.0f64..6.0,
        ) {
            let word = Word::new(letters.into_iter().map(|b| if b { Letter::B } else { Letter::A }).collect());
            let c = Coupling::new(p, q).unwrap();
            let prod = cocycle_product_scaled(&word, lambda, &c).unwrap();
            // relative to the squared norm, which bounds the rounding in a x d - b x c
            let norm = prod.matrix.max_abs();
            let det = prod.matrix.det();
            let target = (-2.0 * prod.log_scale).exp();
            prop_assert!((det - target).abs() <= 1e-12 * norm * norm + 1e-12 * target);
        }
    }
}
