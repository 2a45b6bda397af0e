//! One-variable trigonometric polynomials on R/Z.
//!
//! `p(x) = c + Σ_k cos[k-1]·cos(2πkx) + sin[k-1]·sin(2πkx)`, so index `j` of
//! the `cos`/`sin` arrays carries frequency `j + 1`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::util::{frac, KahanSum};

/// Default frequency cap for transversal densities and leaf densities.
pub const DEFAULT_MAX_FREQUENCY: usize = 64;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrigPoly {
    #[serde(rename = "const", default)]
    pub constant: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    pub fn new(constant: f64, cos: Vec<f64>, sin: Vec<f64>) -> Self {
        Self { constant, cos, sin }
    }

    pub fn max_frequency(&self) -> usize {
        let last = |v: &[f64]| v.iter().rposition(|&c| c != 0.0).map_or(0, |i| i + 1);
        last(&self.cos).max(last(&self.sin))
    }

    pub fn validate(&self, field: &str, cap: usize) -> Result<()> {
        let all = std::iter::once(self.constant)
            .chain(self.cos.iter().copied())
            .chain(self.sin.iter().copied());
        if all.clone().any(|c| !c.is_finite()) {
            return Err(invalid(field, "non-finite coefficient"));
        }
        if self.max_frequency() > cap {
            return Err(invalid(
                field,
                format!("frequency {} exceeds cap {cap}", self.max_frequency()),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = KahanSum::new();
        acc.add(self.constant);
        for (j, &c) in self.cos.iter().enumerate() {
            if c != 0.0 {
                acc.add(c * (TAU * (j + 1) as f64 * x).cos());
            }
        }
        for (j, &s) in self.sin.iter().enumerate() {
            if s != 0.0 {
                acc.add(s * (TAU * (j + 1) as f64 * x).sin());
            }
        }
        acc.value()
    }

    pub fn derivative(&self) -> TrigPoly {
        let n = self.cos.len().max(self.sin.len());
        let mut cos = vec![0.0; n];
        let mut sin = vec![0.0; n];
        for j in 0..n {
            let w = TAU * (j + 1) as f64;
            let c = self.cos.get(j).copied().unwrap_or(0.0);
            let s = self.sin.get(j).copied().unwrap_or(0.0);
            // d/dx cos = -w sin, d/dx sin = w cos
            sin[j] = -w * c;
            cos[j] = w * s;
        }
        TrigPoly::new(0.0, cos, sin)
    }

    /// Mean over one period, which is also the integral over [0, 1).
    pub fn mean(&self) -> f64 {
        self.constant
    }

    /// Periodic part of an antiderivative (the linear part is `constant·x`).
    fn periodic_primitive(&self, x: f64) -> f64 {
        let mut acc = KahanSum::new();
        for (j, &c) in self.cos.iter().enumerate() {
            if c != 0.0 {
                let w = TAU * (j + 1) as f64;
                acc.add(c * (w * x).sin() / w);
            }
        }
        for (j, &s) in self.sin.iter().enumerate() {
            if s != 0.0 {
                let w = TAU * (j + 1) as f64;
                acc.add(-s * (w * x).cos() / w);
            }
        }
        acc.value()
    }

    /// Exact integral over [a, b] (any a ≤ b, not reduced mod 1).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.constant * (b - a) + (self.periodic_primitive(b) - self.periodic_primitive(a))
    }

    pub fn scaled(&self, c: f64) -> TrigPoly {
        TrigPoly {
            constant: self.constant * c,
            cos: self.cos.iter().map(|v| v * c).collect(),
            sin: self.sin.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &TrigPoly) -> TrigPoly {
        let n = self.cos.len().max(other.cos.len());
        let m = self.sin.len().max(other.sin.len());
        let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        TrigPoly {
            constant: self.constant + other.constant,
            cos: (0..n).map(|i| get(&self.cos, i) + get(&other.cos, i)).collect(),
            sin: (0..m).map(|i| get(&self.sin, i) + get(&other.sin, i)).collect(),
        }
    }

    pub fn shifted_constant(&self, c: f64) -> TrigPoly {
        let mut p = self.clone();
        p.constant += c;
        p
    }

    /// Minimum on a uniform grid of `4·max(freq, 4)` points, the cheap
    /// non-negativity test used for densities.
    pub fn grid_min(&self) -> f64 {
        let n = 4 * self.max_frequency().max(4);
        (0..n)
            .map(|i| self.eval(i as f64 / n as f64))
            .fold(f64::INFINITY, f64::min)
    }

    /// Global minimum and its location: dense grid, then Newton on the
    /// derivative from the best grid points, stopping at `tol`.
    pub fn minimum(&self, grid: usize, tol: f64) -> (f64, f64) {
        if self.max_frequency() == 0 {
            return (self.constant, 0.0);
        }
        let grid = grid.max(8);
        let d1 = self.derivative();
        let d2 = d1.derivative();
        let vals: Vec<f64> = (0..grid).map(|i| self.eval(i as f64 / grid as f64)).collect();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..grid {
            let prev = vals[(i + grid - 1) % grid];
            let next = vals[(i + 1) % grid];
            if vals[i] > prev || vals[i] > next {
                continue;
            }
            let mut x = i as f64 / grid as f64;
            let h = 1.0 / grid as f64;
            for _ in 0..50 {
                let g = d1.eval(x);
                let c = d2.eval(x);
                let step = if c > 0.0 { g / c } else { g.signum() * h * 0.25 };
                let step = step.clamp(-h, h);
                x -= step;
                if step.abs() < tol {
                    break;
                }
            }
            let v = self.eval(x).min(vals[i]);
            let at = if self.eval(x) <= vals[i] { frac(x) } else { i as f64 * h };
            if v < best.0 {
                best = (v, at);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_matches_quadrature() {
        let p = TrigPoly::new(0.3, vec![1.0, -0.5], vec![0.25, 0.0, 2.0]);
        let rule = crate::quad::CompositeGauss::new(16, 8);
        let q = rule.integrate(0.1, 0.85, |x| p.eval(x));
        assert!((p.integral(0.1, 0.85) - q).abs() < 1e-13);
        assert!((p.integral(0.0, 1.0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn minimum_of_two_plus_cos() {
        let p = TrigPoly::new(2.0, vec![1.0], vec![]);
        let (m, at) = p.minimum(4096, 1e-10);
        assert!((m - 1.0).abs() < 1e-12);
        assert!((at - 0.5).abs() < 1e-8);
    }

    #[test]
    fn derivative_of_sin() {
        let p = TrigPoly::new(0.0, vec![], vec![1.0]);
        let d = p.derivative();
        assert!((d.eval(0.0) - TAU).abs() < 1e-12);
    }

    #[test]
    fn frequency_cap() {
        let mut cos = vec![0.0; 70];
        cos[69] = 1.0;
        assert!(TrigPoly::new(0.0, cos, vec![]).validate("d", 64).is_err());
    }
}
