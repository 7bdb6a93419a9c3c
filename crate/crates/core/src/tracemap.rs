//! The Fibonacci trace map `f(x, y, z) = (2xy - z, x, y)`, its invariant and
//! the orbit of the line of initial conditions.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobi::Coupling;

/// Components beyond this size end an orbit.
pub const OVERFLOW_GUARD: f64 = 1e150;

pub const DEFAULT_MAXITER: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceTriple {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl TraceTriple {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        TraceTriple { x, y, z }
    }

    pub fn max_abs(&self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    /// The reversing involution `(x, y, z) -> (z, y, x)`.
    pub fn reversed(&self) -> Self {
        TraceTriple::new(self.z, self.y, self.x)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

pub fn step(t: TraceTriple) -> TraceTriple {
    TraceTriple::new(2.0 * t.x * t.y - t.z, t.x, t.y)
}

pub fn inverse_step(t: TraceTriple) -> TraceTriple {
    TraceTriple::new(t.y, t.z, 2.0 * t.y * t.z - t.x)
}

/// Fricke–Vogt invariant `x² + y² + z² - 2xyz - 1`.
pub fn invariant(t: TraceTriple) -> f64 {
    t.x * t.x + t.y * t.y + t.z * t.z - 2.0 * t.x * t.y * t.z - 1.0
}

/// The line of initial conditions `(x_1, x_0, x_{-1})`.
pub fn gamma(lambda: f64, c: &Coupling) -> Result<TraceTriple> {
    let p = c.p_b;
    if p == 0.0 {
        return Err(Error::ZeroHopping);
    }
    Ok(TraceTriple::new(
        0.5 * (lambda - c.q_b),
        lambda / (2.0 * p),
        (1.0 + p * p) / (2.0 * p),
    ))
}

/// Closed form of the invariant along the line of initial conditions.
pub fn invariant_on_line(lambda: f64, c: &Coupling) -> f64 {
    let (p, q) = (c.p_b, c.q_b);
    let p2 = p * p;
    (lambda * q * (1.0 - p2) + q * q * p2 + (p2 - 1.0) * (p2 - 1.0)) / (4.0 * p2)
}

/// `d/dλ` of [`invariant_on_line`]; constant in λ.
pub fn invariant_slope(c: &Coupling) -> f64 {
    let p2 = c.p_b * c.p_b;
    c.q_b * (1.0 - p2) / (4.0 * p2)
}

/// The energy where the invariant vanishes along the line, if the
/// invariant is not constant there.
pub fn critical_energy(c: &Coupling) -> Option<f64> {
    let (p, q) = (c.p_b, c.q_b);
    let p2 = p * p;
    let coeff = q * (1.0 - p2);
    if coeff == 0.0 {
        return None;
    }
    Some(-(q * q * p2 + (p2 - 1.0) * (p2 - 1.0)) / coeff)
}

/// Smallest admissible trace bound: `|(1 + p²) / 2p|`, never below 1.
pub fn bound_threshold(c: &Coupling) -> f64 {
    ((1.0 + c.p_b * c.p_b) / (2.0 * c.p_b)).abs().max(1.0)
}

/// Default trace bound, one unit above the threshold.
pub fn default_bound(c: &Coupling) -> f64 {
    bound_threshold(c) + 1.0
}

pub fn check_bound(bound: f64, c: &Coupling) -> Result<()> {
    let threshold = ((1.0 + c.p_b * c.p_b) / (2.0 * c.p_b)).abs();
    if !(bound > threshold && bound >= 1.0) || !bound.is_finite() {
        return Err(Error::BoundTooSmall { bound, threshold: threshold.max(1.0) });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitStatus {
    Escaped,
    BoundedUpToMaxiter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitResult {
    pub status: OrbitStatus,
    /// Level `j` of the second half-trace in the first pair `|x_{j-1}|, |x_j| > C`.
    pub escape_index: Option<usize>,
    pub final_triple: TraceTriple,
    pub max_abs: f64,
}

impl OrbitResult {
    pub fn escaped(&self) -> bool {
        self.status == OrbitStatus::Escaped
    }
}

/// Follow the orbit of `gamma(λ)` for up to `maxiter` steps and report the
/// first level at which two consecutive half-traces exceed `bound`.
pub fn escape_time(lambda: f64, c: &Coupling, bound: f64, maxiter: usize) -> Result<OrbitResult> {
    check_bound(bound, c)?;
    if maxiter < 1 {
        return Err(Error::InvalidArgument("maxiter must be >= 1".into()));
    }
    let mut t = gamma(lambda, c)?;
    let mut max_abs = t.max_abs();
    // t = (x_j, x_{j-1}, x_{j-2}) with j = 1 initially
    let mut level = 1;
    loop {
        if t.x.abs() > bound && t.y.abs() > bound {
            return Ok(OrbitResult {
                status: OrbitStatus::Escaped,
                escape_index: Some(level),
                final_triple: t,
                max_abs,
            });
        }
        if level > maxiter || t.max_abs() > OVERFLOW_GUARD {
            return Ok(OrbitResult {
                status: OrbitStatus::BoundedUpToMaxiter,
                escape_index: None,
                final_triple: t,
                max_abs,
            });
        }
        t = step(t);
        level += 1;
        max_abs = max_abs.max(t.max_abs());
    }
}

/// The first `n + 1` points of the forward orbit of `gamma(λ)`.
pub fn orbit(lambda: f64, c: &Coupling, n: usize) -> Result<Vec<TraceTriple>> {
    let mut t = gamma(lambda, c)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(t);
    for _ in 0..n {
        if t.max_abs() > OVERFLOW_GUARD {
            break;
        }
        t = step(t);
        out.push(t);
    }
    Ok(out)
}

/// A point of the period-two curve `(x, x / (2x - 1), x)`.
pub fn per2_point(x: f64) -> Result<TraceTriple> {
    if x == 0.5 {
        return Err(Error::InvalidArgument("period-two curve is undefined at x = 1/2".into()));
    }
    Ok(TraceTriple::new(x, x / (2.0 * x - 1.0), x))
}

/// The semiconjugacy from the torus automorphism `[[1, 1], [1, 0]]` onto the
/// invariant sphere in `S_0`.
pub fn torus_factor(theta: f64, phi: f64) -> TraceTriple {
    TraceTriple::new((TAU * (theta + phi)).cos(), (TAU * theta).cos(), (TAU * phi).cos())
}

/// Points of the level surface `I = v` over an `n x n` grid of
/// `(x, y) ∈ [-extent, extent]²`, both roots in `z` where real.
pub fn surface_mesh(v: f64, extent: f64, n: usize) -> Result<Vec<TraceTriple>> {
    if n < 2 {
        return Err(Error::InvalidArgument("mesh resolution must be >= 2".into()));
    }
    if !(extent > 0.0) {
        return Err(Error::InvalidArgument("mesh extent must be positive".into()));
    }
    let h = 2.0 * extent / (n - 1) as f64;
    let mut out = Vec::new();
    for i in 0..n {
        let x = -extent + h * i as f64;
        for j in 0..n {
            let y = -extent + h * j as f64;
            let disc = (x * x - 1.0) * (y * y - 1.0) + v;
            if disc < 0.0 {
                continue;
            }
            let root = disc.sqrt();
            let candidates: &[f64] = if root == 0.0 { &[0.0] } else { &[-root, root] };
            for &r in candidates {
                let t = TraceTriple::new(x, y, x * y + r);
                if (invariant(t) - v).abs() <= 1e-10 {
                    out.push(t);
                }
            }
        }
    }
    Ok(out)
}
