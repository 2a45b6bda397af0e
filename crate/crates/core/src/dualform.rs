//! Smooth forms dual to an embedded measured solenoid, sampled on a periodic
//! grid of `Tⁿ`.
//!
//! The dual form is the push-forward of a Thom form `Φ_r` of a tube of radius
//! `r`: at a point at normal offset `s` from a plaque with unit tangent `u`
//! it equals `(−1)^{n−1} ρ_r(|s|) ι_u vol`, summed over plaques and integrated
//! against the transversal measure. With this sign, `∫ η ∧ β = C_{F,μ}(β)`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::currents::{pair_current, Immersion, PairOptions, XCoord};
use crate::error::{invalid, Error, Result};
use crate::forms::{transversal_nodes, LeafwiseQuadrature, TorusForm};
use crate::quad::CompositeGauss;
use crate::smeasure::TransversalMeasureInv;
use crate::solenoid::SuspensionSolenoid;
use crate::transversal::{RawTransversalMeasure, TransversalPoint, TransversalSpace};
use crate::util::{ksum, KahanSum};

/// Upper limit on stored grid values (nodes × components).
pub const MAX_GRID_VALUES: usize = 1 << 25;

/// Radial Thom profile `ρ_r(s) = c_r (1 − s²/r²)²` on the normal fiber `ℝ^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThomProfile {
    pub codim: usize,
    pub r: f64,
    pub c: f64,
}

fn sphere_area(k: usize) -> f64 {
    // |S^{k−1}| = 2 π^{k/2} / Γ(k/2)
    let mut gamma = if k % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut a = if k % 2 == 0 { 1.0 } else { 0.5 };
    while a < k as f64 / 2.0 {
        gamma *= a;
        a += 1.0;
    }
    2.0 * PI.powf(k as f64 / 2.0) / gamma
}

impl ThomProfile {
    pub fn new(codim: usize, r: f64) -> Result<Self> {
        if codim == 0 {
            return Err(invalid("codim", "must be positive"));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(invalid("r", "must be positive"));
        }
        let k = codim as f64;
        let radial = 1.0 / k - 2.0 / (k + 2.0) + 1.0 / (k + 4.0);
        let c = 1.0 / (sphere_area(codim) * radial * r.powi(codim as i32));
        Ok(Self { codim, r, c })
    }

    pub fn eval(&self, s: f64) -> f64 {
        let u = s / self.r;
        if u.abs() >= 1.0 {
            0.0
        } else {
            let w = 1.0 - u * u;
            self.c * w * w
        }
    }

    /// `∫_{ℝ^k} ρ_r`, computed radially.
    pub fn fiber_integral(&self) -> f64 {
        let rule = CompositeGauss::new(16, 4);
        let k = self.codim;
        sphere_area(k) * rule.integrate(0.0, self.r, |s| self.eval(s) * s.powi(k as i32 - 1))
    }
}

/// A differential form sampled at the nodes `i/G` of `Tⁿ`, one array per
/// increasing index set, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridForm {
    pub n: usize,
    pub degree: usize,
    pub g: usize,
    pub components: BTreeMap<Vec<usize>, Vec<f64>>,
}

fn index_sets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Sign and sorted union of disjoint index sets, or `None` if they meet.
fn merge(a: &[usize], b: &[usize]) -> Option<(f64, Vec<usize>)> {
    let mut inversions = 0;
    for &j in b {
        if a.contains(&j) {
            return None;
        }
        inversions += a.iter().filter(|&&i| i > j).count();
    }
    let mut idx: Vec<usize> = a.iter().chain(b).copied().collect();
    idx.sort_unstable();
    Some((if inversions % 2 == 0 { 1.0 } else { -1.0 }, idx))
}

impl GridForm {
    pub fn zeros(n: usize, degree: usize, g: usize) -> Result<Self> {
        if degree > n {
            return Err(Error::DegreeOverflow(degree, n));
        }
        if g < 4 {
            return Err(invalid("G", "grid resolution must be at least 4"));
        }
        let sets = index_sets(n, degree);
        let nodes = g.checked_pow(n as u32).unwrap_or(usize::MAX);
        if nodes.saturating_mul(sets.len()) > MAX_GRID_VALUES {
            return Err(Error::Grid(format!("{g}^{n} nodes x {} components is too large", sets.len())));
        }
        Ok(Self {
            n,
            degree,
            g,
            components: sets.into_iter().map(|s| (s, vec![0.0; nodes])).collect(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.g.pow(self.n as u32)
    }

    /// Node multi-index of a flat index.
    pub fn node(&self, mut flat: usize) -> Vec<usize> {
        let mut k = vec![0; self.n];
        for i in (0..self.n).rev() {
            k[i] = flat % self.g;
            flat /= self.g;
        }
        k
    }

    pub fn flat(&self, k: &[usize]) -> usize {
        k.iter().fold(0, |acc, &i| acc * self.g + i)
    }

    pub fn sample(form: &TorusForm, g: usize) -> Result<Self> {
        let mut out = Self::zeros(form.dim(), form.degree(), g)?;
        let c = form.compile();
        let mut vals = vec![0.0; c.components.len()];
        let slots: Vec<usize> = c
            .components
            .iter()
            .map(|idx| out.components.keys().position(|k| k == idx).expect("index set"))
            .collect();
        let mut arrays: Vec<&mut Vec<f64>> = out.components.values_mut().collect();
        let nodes = g.pow(form.dim() as u32);
        let mut theta = vec![0.0; form.dim()];
        for flat in 0..nodes {
            let mut f = flat;
            for i in (0..theta.len()).rev() {
                theta[i] = (f % g) as f64 / g as f64;
                f /= g;
            }
            c.eval_into(&theta, &mut vals);
            for (v, &s) in vals.iter().zip(&slots) {
                arrays[s][flat] += v;
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .values()
            .flat_map(|a| a.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.n != other.n || self.g != other.g {
            return Err(Error::Grid(format!(
                "(n={}, G={}) vs (n={}, G={})",
                self.n, self.g, other.n, other.g
            )));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch {
                expected: self.degree,
                got: other.degree,
            });
        }
        let mut out = self.clone();
        for (k, a) in out.components.iter_mut() {
            for (x, y) in a.iter_mut().zip(&other.components[k]) {
                *x -= y;
            }
        }
        Ok(out)
    }

    /// Exterior derivative by central differences.
    pub fn d(&self) -> Result<Self> {
        let mut out = Self::zeros(self.n, self.degree + 1, self.g)?;
        let g = self.g;
        let half_g = g as f64 / 2.0;
        let strides: Vec<usize> = (0..self.n).map(|j| g.pow((self.n - 1 - j) as u32)).collect();
        for (idx, a) in &self.components {
            for j in 0..self.n {
                let Some((sign, target)) = merge(&[j], idx) else { continue };
                let dst = out.components.get_mut(&target).expect("index set");
                let s = strides[j];
                for (flat, d) in dst.iter_mut().enumerate() {
                    let kj = (flat / s) % g;
                    let up = flat - kj * s + ((kj + 1) % g) * s;
                    let down = flat - kj * s + ((kj + g - 1) % g) * s;
                    *d += sign * (a[up] - a[down]) * half_g;
                }
            }
        }
        Ok(out)
    }

    /// Pointwise wedge product.
    pub fn wedge(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        let mut out = Self::zeros(self.n, self.degree + other.degree, self.g)?;
        for (i, a) in &self.components {
            for (j, b) in &other.components {
                let Some((sign, target)) = merge(i, j) else { continue };
                let dst = out.components.get_mut(&target).expect("index set");
                for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
                    *d += sign * x * y;
                }
            }
        }
        Ok(out)
    }

    /// `∫_{Tⁿ}` of a top-degree form by the grid mean.
    pub fn integrate_top(&self) -> Result<f64> {
        if self.degree != self.n {
            return Err(Error::DegreeMismatch {
                expected: self.n,
                got: self.degree,
            });
        }
        let a = self.components.values().next().expect("top component");
        Ok(ksum(a.iter().copied()) / a.len() as f64)
    }

    /// Multilinear interpolation of every component at `θ`.
    pub fn interpolate(&self, theta: &[f64]) -> BTreeMap<Vec<usize>, f64> {
        let g = self.g as f64;
        let mut base = vec![0usize; self.n];
        let mut frac = vec![0.0; self.n];
        for i in 0..self.n {
            let p = theta[i].rem_euclid(1.0) * g;
            let k = p.floor();
            base[i] = (k as usize) % self.g;
            frac[i] = p - k;
        }
        let mut out: BTreeMap<Vec<usize>, f64> = self.components.keys().map(|k| (k.clone(), 0.0)).collect();
        for corner in 0..(1usize << self.n) {
            let mut w = 1.0;
            let mut k = base.clone();
            for i in 0..self.n {
                if corner >> i & 1 == 1 {
                    w *= frac[i];
                    k[i] = (k[i] + 1) % self.g;
                } else {
                    w *= 1.0 - frac[i];
                }
            }
            if w == 0.0 {
                continue;
            }
            let flat = self.flat(&k);
            for (key, a) in &self.components {
                *out.get_mut(key).expect("key") += w * a[flat];
            }
        }
        out
    }
}

/// `∫ a ∧ b` over `Tⁿ` from grid samples.
pub fn grid_wedge_integrate(a: &GridForm, b: &GridForm) -> Result<f64> {
    if a.degree + b.degree != a.n {
        return Err(Error::DegreeMismatch {
            expected: a.n - a.degree,
            got: b.degree,
        });
    }
    a.wedge(b)?.integrate_top()
}

/// Largest entry of `d η` on the grid.
pub fn closedness_defect(eta: &GridForm) -> Result<f64> {
    Ok(eta.d()?.max_abs())
}

/// `∫₀¹ η(p₀ + s·dir)(dir) ds` for a 1-form along a closed straight line
/// with integer direction, by the trapezoid rule on `samples` points.
pub fn line_integral(eta: &GridForm, p0: &[f64], dir: &[i64], samples: usize) -> Result<f64> {
    if eta.degree != 1 {
        return Err(Error::DegreeMismatch {
            expected: 1,
            got: eta.degree,
        });
    }
    if p0.len() != eta.n || dir.len() != eta.n {
        return Err(Error::DimensionMismatch(dir.len(), eta.n));
    }
    let mut acc = KahanSum::new();
    let mut theta = vec![0.0; eta.n];
    for j in 0..samples {
        let s = j as f64 / samples as f64;
        for i in 0..eta.n {
            theta[i] = p0[i] + s * dir[i] as f64;
        }
        let v = eta.interpolate(&theta);
        for i in 0..eta.n {
            acc.add(v[&vec![i]] * dir[i] as f64);
        }
    }
    Ok(acc.value() / samples as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assembly {
    /// Per-node integration of a continuous transversal density over the
    /// normal fiber of a straight planar foliation.
    Exact,
    /// Foot points on individual plaques (atoms, finite and Cantor weights).
    Scatter,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualForm {
    pub form: GridForm,
    pub profile: ThomProfile,
    /// Tube-disjointness radius of the immersion.
    pub r1: f64,
    pub assembly: Assembly,
}

/// `η = j_*Φ_r` sampled on a `Gⁿ` grid.
pub fn pushforward_dual_form(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    m: &TransversalMeasureInv,
    r: f64,
    g: usize,
) -> Result<DualForm> {
    let r1 = imm.disjointness_radius(sol)?;
    if !(r.is_finite() && r > 0.0) {
        return Err(invalid("r", "must be positive"));
    }
    if r >= r1 {
        return Err(Error::RadiusTooLarge { r, r1 });
    }
    if m.invariance_residual > m.tol {
        return Err(Error::NotInvariant {
            residual: m.invariance_residual,
            tol: m.tol,
        });
    }
    let n = imm.dim();
    let profile = ThomProfile::new(n - 1, r)?;
    let mut form = GridForm::zeros(n, n - 1, g)?;
    let (exact, rest) = split_measure(imm, sol, &m.raw);
    let mut used = (false, false);
    if let Some(density) = exact {
        assemble_exact(imm, &density, &profile, &mut form);
        used.0 = true;
    }
    let leaves = match rest {
        Some(raw) => transversal_nodes(&sol.space, &raw, &LeafwiseQuadrature::default())?,
        None => Vec::new(),
    };
    if !leaves.is_empty() {
        assemble_scatter(imm, &leaves, &profile, &mut form)?;
        used.1 = true;
    }
    let assembly = match used {
        (true, true) => Assembly::Mixed,
        (true, false) => Assembly::Exact,
        _ => Assembly::Scatter,
    };
    Ok(DualForm {
        form,
        profile,
        r1,
        assembly,
    })
}

/// Continuous density handled exactly, and the remainder for plaque scatter.
fn split_measure(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    raw: &RawTransversalMeasure,
) -> (Option<RawTransversalMeasure>, Option<RawTransversalMeasure>) {
    let planar = imm.dim() == 2 && imm.linear_data().is_some() && sol.space == TransversalSpace::Circle;
    match raw {
        RawTransversalMeasure::Density { density, atoms } if planar => (
            Some(RawTransversalMeasure::Density {
                density: density.clone(),
                atoms: vec![],
            }),
            (!atoms.is_empty()).then(|| RawTransversalMeasure::dirac_atoms(atoms.clone())),
        ),
        RawTransversalMeasure::Histogram { bins, atoms } if planar => (
            Some(RawTransversalMeasure::Histogram {
                bins: bins.clone(),
                atoms: vec![],
            }),
            (!atoms.is_empty()).then(|| RawTransversalMeasure::dirac_atoms(atoms.clone())),
        ),
        other => (None, Some(other.clone())),
    }
}

fn density_at(raw: &RawTransversalMeasure, x: f64) -> f64 {
    match raw {
        RawTransversalMeasure::Density { density, .. } => density.eval(x),
        RawTransversalMeasure::Histogram { bins, .. } => {
            let n = bins.len();
            let k = ((x.rem_euclid(1.0) * n as f64).floor() as usize).min(n - 1);
            bins[k] * n as f64
        }
        _ => 0.0,
    }
}

/// `(−1)^{n−1} ι_u vol` component for the index set missing axis `j`.
fn interior_sign(n: usize, j: usize) -> f64 {
    let s = if j % 2 == 0 { 1.0 } else { -1.0 };
    if (n - 1) % 2 == 0 {
        s
    } else {
        -s
    }
}

fn assemble_exact(imm: &Immersion, raw: &RawTransversalMeasure, profile: &ThomProfile, form: &mut GridForm) {
    let (v, w0, e) = imm.linear_data().expect("straight immersion");
    let det = v[0] * e[1] - v[1] * e[0];
    let inv = [[e[1] / det, -e[0] / det], [-v[1] / det, v[0] / det]];
    let len = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let u = [v[0] / len, v[1] / len];
    let normal = [-u[1], u[0]];
    // transversal coordinate change per unit of normal offset
    let dx_ds = (inv[1][0] * normal[0] + inv[1][1] * normal[1]).abs();
    // lattice translates m with M⁻¹(p − w0 + m) ∈ [0,1)²
    let corners = [[0.0, 0.0], [v[0], v[1]], [e[0], e[1]], [v[0] + e[0], v[1] + e[1]]];
    let lo = [0, 1].map(|i| corners.iter().map(|c| c[i]).fold(f64::INFINITY, f64::min).floor() as i64 - 2);
    let hi = [0, 1].map(|i| corners.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max).ceil() as i64 + 1);
    let rule = CompositeGauss::new(16, 2);
    let fiber: Vec<(f64, f64)> = rule.points(-profile.r, profile.r).map(|(s, w)| (s, w * profile.eval(s))).collect();
    let g = form.g;
    let amp: Vec<f64> = (0..g * g)
        .map(|flat| {
            let q = [(flat / g) as f64 / g as f64, (flat % g) as f64 / g as f64];
            let mut acc = KahanSum::new();
            for &(s, w) in &fiber {
                let p = [q[0] + s * normal[0] - w0[0], q[1] + s * normal[1] - w0[1]];
                let mut h = 0.0;
                for m0 in lo[0]..=hi[0] {
                    for m1 in lo[1]..=hi[1] {
                        let y = [p[0] + m0 as f64, p[1] + m1 as f64];
                        let t = inv[0][0] * y[0] + inv[0][1] * y[1];
                        let x = inv[1][0] * y[0] + inv[1][1] * y[1];
                        if (0.0..1.0).contains(&t) && (0.0..1.0).contains(&x) {
                            h += density_at(raw, x);
                        }
                    }
                }
                acc.add(w * h * dx_ds);
            }
            acc.value()
        })
        .collect();
    for (idx, a) in form.components.iter_mut() {
        let j = (0..2).find(|j| !idx.contains(j)).expect("missing axis");
        let c = interior_sign(2, j) * u[j];
        for (d, s) in a.iter_mut().zip(&amp) {
            *d += c * s;
        }
    }
}

fn assemble_scatter(
    imm: &Immersion,
    leaves: &[(TransversalPoint, f64)],
    profile: &ThomProfile,
    form: &mut GridForm,
) -> Result<()> {
    let n = imm.dim();
    let g = form.g;
    let r = profile.r;
    let steps = ((2.0 * imm.max_speed() * 1.25 / r).ceil() as usize).max(16);
    let step_len = 1.25 * imm.max_speed() / steps as f64;
    let reach = r + step_len;
    let keys: Vec<Vec<usize>> = form.components.keys().cloned().collect();
    let missing: Vec<usize> = keys
        .iter()
        .map(|idx| (0..n).find(|j| !idx.contains(j)).expect("missing axis"))
        .collect();
    let mut p = vec![0.0; n];
    let mut vel = vec![0.0; n];
    for (pt, weight) in leaves {
        let x = imm.xcoord(pt)?;
        // unwrapped node -> sample indices within reach
        let mut near: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for j in 0..=steps {
            let t = j as f64 / steps as f64;
            imm.eval_x(t, x, &mut p);
            let lo: Vec<i64> = p.iter().map(|c| ((c - reach) * g as f64).ceil() as i64).collect();
            let hi: Vec<i64> = p.iter().map(|c| ((c + reach) * g as f64).floor() as i64).collect();
            if lo.iter().zip(&hi).any(|(a, b)| a > b) {
                continue;
            }
            let mut k = lo.clone();
            'nodes: loop {
                let d2: f64 = k.iter().zip(&p).map(|(&ki, c)| (ki as f64 / g as f64 - c).powi(2)).sum();
                if d2 <= reach * reach {
                    near.entry(k.clone()).or_default().push(j);
                }
                let mut i = n;
                loop {
                    if i == 0 {
                        break 'nodes;
                    }
                    i -= 1;
                    if k[i] < hi[i] {
                        k[i] += 1;
                        break;
                    }
                    k[i] = lo[i];
                }
            }
        }
        let mut keyed: Vec<(Vec<i64>, Vec<usize>)> = near.into_iter().collect();
        keyed.sort();
        for (k, js) in keyed {
            let q: Vec<f64> = k.iter().map(|&ki| ki as f64 / g as f64).collect();
            let flat = k.iter().fold(0usize, |acc, &ki| acc * g + ki.rem_euclid(g as i64) as usize);
            // one Newton solve per run of consecutive samples
            let mut feet: Vec<f64> = Vec::new();
            let mut run_start = 0;
            for i in 1..=js.len() {
                if i < js.len() && js[i] == js[i - 1] + 1 {
                    continue;
                }
                let run = &js[run_start..i];
                run_start = i;
                let best = *run
                    .iter()
                    .min_by(|a, b| {
                        let da = dist2_at(imm, x, &q, **a as f64 / steps as f64);
                        let db = dist2_at(imm, x, &q, **b as f64 / steps as f64);
                        da.total_cmp(&db)
                    })
                    .expect("non-empty run");
                if let Some(t) = foot_point(imm, x, &q, best as f64 / steps as f64, 1.0 / steps as f64) {
                    if (0.0..1.0).contains(&t) && !feet.iter().any(|f| (f - t).abs() < 1e-9) {
                        feet.push(t);
                    }
                }
            }
            for t in feet {
                imm.eval_x(t, x, &mut p);
                let s = q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let rho = profile.eval(s);
                if rho == 0.0 {
                    continue;
                }
                imm.speed_x(t, x, &mut vel);
                let speed = vel.iter().map(|c| c * c).sum::<f64>().sqrt();
                for (slot, key) in keys.iter().enumerate() {
                    let j = missing[slot];
                    let c = interior_sign(n, j) * vel[j] / speed;
                    form.components.get_mut(key).expect("key")[flat] += weight * rho * c;
                }
            }
        }
    }
    Ok(())
}

fn dist2_at(imm: &Immersion, x: XCoord, q: &[f64], t: f64) -> f64 {
    let mut p = vec![0.0; q.len()];
    imm.eval_x(t, x, &mut p);
    q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Critical point of `t ↦ |q − F(t)|²` near `t0`, by Newton's method with a
/// finite-difference second derivative.
fn foot_point(imm: &Immersion, x: XCoord, q: &[f64], t0: f64, span: f64) -> Option<f64> {
    let n = q.len();
    let (mut p, mut v, mut v2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let h = 1e-6;
    let mut t = t0;
    for _ in 0..40 {
        imm.eval_x(t, x, &mut p);
        imm.speed_x(t, x, &mut v);
        imm.speed_x(t + h, x, &mut v2);
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for i in 0..n {
            let diff = p[i] - q[i];
            let acc = (v2[i] - v[i]) / h;
            g1 += diff * v[i];
            g2 += v[i] * v[i] + diff * acc;
        }
        if g2 <= 0.0 {
            return None;
        }
        let dt = g1 / g2;
        t -= dt;
        if (t - t0).abs() > 2.0 * span + 1e-12 {
            return None;
        }
        if dt.abs() < 1e-15 {
            break;
        }
    }
    Some(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsCheckRow {
    pub form: usize,
    pub grid: f64,
    pub current: f64,
    pub abs_error: f64,
    /// `None` when the current pairing vanishes.
    pub rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsCheck {
    pub rows: Vec<RsCheckRow>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Compares `∫ η ∧ β` on the grid with `C_{F,μ}(β)` for each closed `β`.
pub fn rsform_check(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    m: &TransversalMeasureInv,
    dual: &DualForm,
    betas: &[TorusForm],
) -> Result<RsCheck> {
    let mut rows = Vec::with_capacity(betas.len());
    for (i, beta) in betas.iter().enumerate() {
        let grid = grid_wedge_integrate(&dual.form, &GridForm::sample(beta, dual.form.g)?)?;
        let current = pair_current(imm, sol, m, beta, &PairOptions::default())?.value;
        let abs_error = (grid - current).abs();
        let rel_error = (current.abs() > 1e-9).then(|| abs_error / current.abs());
        rows.push(RsCheckRow {
            form: i,
            grid,
            current,
            abs_error,
            rel_error,
        });
    }
    Ok(RsCheck {
        max_rel_error: rows.iter().filter_map(|r| r.rel_error).fold(0.0, f64::max),
        max_abs_error: rows.iter().map(|r| r.abs_error).fold(0.0, f64::max),
        rows,
    })
}

/// Closed test forms `dθᵢ + d(sin 2π⟨k, θ⟩)` with small frequencies.
pub fn default_test_forms(n: usize) -> Result<Vec<TorusForm>> {
    let mut out = Vec::new();
    for i in 0..n {
        out.push(TorusForm::dtheta(n, i)?);
    }
    for i in 0..n {
        let mut k = vec![0i64; n];
        k[i] = 1;
        k[(i + 1) % n] += 2;
        let bump = TorusForm::term(n, &k, &[], crate::forms::Phase::Sin, 0.1)?.d()?;
        out.push(TorusForm::dtheta(n, i)?.add(&bump)?);
    }
    Ok(out)
}

/// Closed leaves carrying positive transversal mass.
pub fn compact_leaf_atoms(space: &TransversalSpace, raw: &RawTransversalMeasure) -> bool {
    match (space, raw) {
        (TransversalSpace::Finite { .. }, RawTransversalMeasure::Weights(w)) => w.iter().any(|&x| x > 0.0),
        (TransversalSpace::Circle, _) => raw.atoms().iter().any(|a| a.1 > 0.0),
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfIntersection {
    pub value: f64,
    pub r: f64,
    pub r_prime: f64,
    pub g: usize,
    pub warnings: Vec<String>,
}

/// `∫ η_r ∧ η_{r'}` for a solenoid in `T²`.
pub fn self_intersection(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    m: &TransversalMeasureInv,
    r: f64,
    r_prime: f64,
    g: usize,
    reject_atoms: bool,
) -> Result<SelfIntersection> {
    if imm.dim() != 2 {
        return Err(Error::DegreeOverflow(2 * (imm.dim() - 1), imm.dim()));
    }
    let mut warnings = Vec::new();
    if compact_leaf_atoms(&sol.space, &m.raw) {
        if reject_atoms {
            return Err(Error::AtomicMeasure);
        }
        warnings.push("transversal measure has atoms: compact leaves give no vanishing limit".to_string());
    }
    let a = pushforward_dual_form(imm, sol, m, r, g)?;
    let b = pushforward_dual_form(imm, sol, m, r_prime, g)?;
    Ok(SelfIntersection {
        value: grid_wedge_integrate(&a.form, &b.form)?,
        r,
        r_prime,
        g,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowboxBound {
    pub depth: u32,
    pub c0: f64,
    /// `C₀ μ(cell)²` per transversal cell.
    pub cells: Vec<f64>,
    pub total: f64,
}

/// Per-flow-box bound `C₀ μ(Xᵢ)²` on the self-intersection contribution of
/// the depth-`depth` partition of the transversal, with `C₀ = sup |∂ₜF|²`.
pub fn flowbox_refinement_bound(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    m: &TransversalMeasureInv,
    depth: u32,
) -> Result<FlowboxBound> {
    let c0 = imm.max_speed() * imm.max_speed();
    let masses: Vec<f64> = match &sol.space {
        TransversalSpace::Circle => {
            if depth > 24 {
                return Err(invalid("depth", "at most 24 on the circle"));
            }
            let k = 1usize << depth;
            (0..k)
                .map(|i| m.raw.interval_mass(i as f64 / k as f64, (i + 1) as f64 / k as f64))
                .collect()
        }
        TransversalSpace::Cantor { depth: d, .. } => m.raw.coarsen(&sol.space, depth.min(*d)),
        TransversalSpace::Finite { .. } => match &m.raw {
            RawTransversalMeasure::Weights(w) => w.clone(),
            _ => return Err(Error::Incompatible("finite transversal needs weights".into())),
        },
    };
    let cells: Vec<f64> = masses.iter().map(|w| c0 * w * w).collect();
    Ok(FlowboxBound {
        depth,
        c0,
        total: ksum(cells.iter().copied()),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::currents::{make_immersion, ImmersionDescriptor};
    use crate::dynamics::{ReturnMap, RotationNumber};
    use crate::forms::Phase;
    use crate::solenoid::suspend;
    use proptest::prelude::*;

    const GOLDEN: f64 = 0.6180339887498949;

    fn golden() -> (SuspensionSolenoid, Immersion, TransversalMeasureInv) {
        let sol = suspend(TransversalSpace::Circle, ReturnMap::Rotation(RotationNumber::Real(GOLDEN))).unwrap();
        let imm = make_immersion(&ImmersionDescriptor::RotationStandard, &sol).unwrap();
        let m = TransversalMeasureInv::new(&sol, RawTransversalMeasure::lebesgue(), 1e-9).unwrap();
        (sol, imm, m)
    }

    fn circle_leaves(xs: Vec<f64>, w: Vec<f64>) -> (SuspensionSolenoid, Immersion, TransversalMeasureInv) {
        let k = xs.len();
        let sol = suspend(
            TransversalSpace::Finite { points: xs },
            ReturnMap::Permutation { sigma: (0..k).collect() },
        )
        .unwrap();
        let imm = make_immersion(
            &ImmersionDescriptor::TorusLinear {
                v: vec![1.0, 0.0],
                w0: vec![0.0, 0.0],
                e: vec![0.0, 1.0],
            },
            &sol,
        )
        .unwrap();
        let m = TransversalMeasureInv::new(&sol, RawTransversalMeasure::Weights(w), 1e-9).unwrap();
        (sol, imm, m)
    }

    fn dyadic(d: u32) -> (SuspensionSolenoid, Immersion, TransversalMeasureInv) {
        let space = TransversalSpace::Cantor { p: 2, depth: d };
        let sol = suspend(space.clone(), ReturnMap::Odometer { p: 2 }).unwrap();
        let imm = make_immersion(&ImmersionDescriptor::DyadicR3 { depth: d, eps0: 0.05 }, &sol).unwrap();
        let m = TransversalMeasureInv::new(&sol, RawTransversalMeasure::haar(&space), 1e-9).unwrap();
        (sol, imm, m)
    }

    #[test]
    fn thom_profiles_are_normalized() {
        for codim in 1..=4 {
            for r in [0.5, 0.02, 1e-3] {
                let p = ThomProfile::new(codim, r).unwrap();
                assert!((p.fiber_integral() - 1.0).abs() <= 1e-12, "{codim} {r}");
            }
        }
        let p = ThomProfile::new(1, 0.1).unwrap();
        assert!((p.c - 15.0 / 16.0 / 0.1).abs() < 1e-12);
        let p = ThomProfile::new(2, 0.1).unwrap();
        assert!((p.c - 3.0 / (PI * 0.01)).abs() < 1e-9);
    }

    #[test]
    fn peak_scales_with_codimension() {
        for codim in 1..=3 {
            let a = ThomProfile::new(codim, 0.04).unwrap().eval(0.0);
            let b = ThomProfile::new(codim, 0.02).unwrap().eval(0.0);
            assert!((b / a - 2f64.powi(codim as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_calculus() {
        let g = 256;
        let f = TorusForm::term(2, &[1, 0], &[], Phase::Sin, 1.0).unwrap();
        let dg = GridForm::sample(&f, g).unwrap().d().unwrap();
        let exact = GridForm::sample(&f.d().unwrap(), g).unwrap();
        let rel = dg.sub(&exact).unwrap().max_abs() / exact.max_abs();
        assert!(rel <= 1e-3, "{rel}");
        let a = GridForm::sample(&TorusForm::dtheta(2, 0).unwrap(), g).unwrap();
        let b = GridForm::sample(&TorusForm::dtheta(2, 1).unwrap(), g).unwrap();
        assert!((grid_wedge_integrate(&a, &b).unwrap() - 1.0).abs() <= 1e-12);
        assert!((grid_wedge_integrate(&b, &a).unwrap() + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn grid_d_squared_vanishes() {
        let f = TorusForm::term(3, &[2, -1, 3], &[], Phase::Cos, 1.0)
            .unwrap()
            .add(&TorusForm::term(3, &[0, 1, 1], &[], Phase::Sin, 0.5).unwrap())
            .unwrap();
        let grid = GridForm::sample(&f, 32).unwrap();
        assert!(grid.d().unwrap().d().unwrap().max_abs() <= 1e-10);
        let w = TorusForm::term(3, &[1, 1, 0], &[2], Phase::Cos, 1.0).unwrap();
        let gw = GridForm::sample(&w, 32).unwrap();
        assert!(gw.d().unwrap().d().unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn golden_dual_form_matches_current() {
        let (sol, imm, m) = golden();
        let dual = pushforward_dual_form(&imm, &sol, &m, 0.02, 256).unwrap();
        assert_eq!(dual.assembly, Assembly::Exact);
        let check = rsform_check(&imm, &sol, &m, &dual, &default_test_forms(2).unwrap()).unwrap();
        assert!(check.max_rel_error <= 2e-2, "{check:?}");
        // exact forms
        let beta = TorusForm::term(2, &[2, 1], &[], Phase::Cos, 1.0).unwrap().d().unwrap();
        let ex = rsform_check(&imm, &sol, &m, &dual, &[beta]).unwrap();
        assert!(ex.rows[0].grid.abs() <= 1e-3 && ex.rows[0].current.abs() <= 1e-3);
        assert!(closedness_defect(&dual.form).unwrap() <= 5.0 / 256.0 * dual.form.max_abs());
    }

    #[test]
    fn dual_form_is_radius_independent() {
        let (sol, imm, m) = golden();
        let beta = TorusForm::dtheta(2, 1).unwrap();
        let b = GridForm::sample(&beta, 512).unwrap();
        let a1 = grid_wedge_integrate(&pushforward_dual_form(&imm, &sol, &m, 0.02, 512).unwrap().form, &b).unwrap();
        let a2 = grid_wedge_integrate(&pushforward_dual_form(&imm, &sol, &m, 0.01, 512).unwrap().form, &b).unwrap();
        assert!((a1 - a2).abs() <= 1e-2);
    }

    #[test]
    fn circle_leaf_dual_form() {
        let (sol, imm, m) = circle_leaves(vec![0.5], vec![1.0]);
        let dual = pushforward_dual_form(&imm, &sol, &m, 0.05, 256).unwrap();
        assert_eq!(dual.assembly, Assembly::Scatter);
        let check = rsform_check(&imm, &sol, &m, &dual, &default_test_forms(2).unwrap()).unwrap();
        assert!(check.max_rel_error <= 2e-2, "{check:?}");
        // a transversal circle meets the leaf once, with unit mass
        let flux = line_integral(&dual.form, &[0.3, 0.0], &[0, 1], 4096).unwrap();
        assert!((flux.abs() - 1.0).abs() <= 2e-3, "{flux}");
        // sign convention: ∫ η ∧ dθ₁ = C(dθ₁) = 1
        assert!((check.rows[0].grid - 1.0).abs() <= 2e-3);
    }

    #[test]
    fn rotation_fiber_normalization() {
        let (sol, imm, m) = golden();
        let dual = pushforward_dual_form(&imm, &sol, &m, 0.02, 256).unwrap();
        let flux = line_integral(&dual.form, &[0.1, 0.0], &[0, 1], 2048).unwrap();
        assert!((flux.abs() - 1.0).abs() <= 1e-3, "{flux}");
    }

    #[test]
    fn radius_limits() {
        let (sol, imm, m) = dyadic(3);
        assert!(matches!(
            pushforward_dual_form(&imm, &sol, &m, 0.4, 16),
            Err(Error::RadiusTooLarge { .. })
        ));
        let (sol, imm, m) = golden();
        assert!(matches!(
            pushforward_dual_form(&imm, &sol, &m, 0.3, 64),
            Err(Error::RadiusTooLarge { .. })
        ));
    }

    #[test]
    fn dyadic_dual_form_is_finite() {
        let (sol, imm, m) = dyadic(2);
        let r = 0.5 * imm.disjointness_radius(&sol).unwrap();
        let dual = pushforward_dual_form(&imm, &sol, &m, r, 16).unwrap();
        assert_eq!(dual.form.degree, 2);
        assert!(dual.form.max_abs().is_finite());
    }

    #[test]
    fn custom_immersions_are_rejected() {
        let (sol, _, m) = golden();
        let desc = ImmersionDescriptor::Custom {
            v: vec![1.0, GOLDEN],
            w0: vec![0.0, 0.0],
            e: vec![0.0, 1.0],
            displacement: vec![
                TorusForm::term(2, &[0, 1], &[], Phase::Sin, 0.03).unwrap().descriptor(),
                TorusForm::zero(2, 0).descriptor(),
            ],
        };
        let imm = make_immersion(&desc, &sol).unwrap();
        assert!(matches!(
            pushforward_dual_form(&imm, &sol, &m, 0.01, 64),
            Err(Error::NotEmbedding(_))
        ));
    }

    #[test]
    fn self_intersection_of_golden_vanishes() {
        let (sol, imm, m) = golden();
        let s1 = self_intersection(&imm, &sol, &m, 0.02, 0.015, 256, false).unwrap();
        let s2 = self_intersection(&imm, &sol, &m, 0.01, 0.0075, 512, false).unwrap();
        assert!(s1.value.abs() <= 2e-2 && s1.warnings.is_empty());
        assert!(s2.value.abs() <= s1.value.abs().max(5e-3));
    }

    #[test]
    fn atoms_warn_or_fail() {
        let (sol, imm, m) = circle_leaves(vec![0.25, 0.75], vec![0.3, 0.7]);
        let s = self_intersection(&imm, &sol, &m, 0.05, 0.05, 64, false).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert!(matches!(
            self_intersection(&imm, &sol, &m, 0.05, 0.05, 64, true),
            Err(Error::AtomicMeasure)
        ));
    }

    #[test]
    fn flowbox_bounds() {
        let (sol, imm, m) = golden();
        let c0 = imm.max_speed().powi(2);
        let b4 = flowbox_refinement_bound(&imm, &sol, &m, 4).unwrap();
        assert!((b4.total - c0 / 16.0).abs() <= 1e-12);
        for d in 1..8 {
            let a = flowbox_refinement_bound(&imm, &sol, &m, d).unwrap().total;
            let b = flowbox_refinement_bound(&imm, &sol, &m, d + 1).unwrap().total;
            assert!((b - a / 2.0).abs() <= 1e-12);
        }
        let (sol, imm, m) = circle_leaves(vec![0.25, 0.75], vec![0.3, 0.7]);
        let b = flowbox_refinement_bound(&imm, &sol, &m, 10).unwrap();
        assert!(b.total >= b.c0 * 0.09);
        let (sol, imm, m) = dyadic(8);
        let a = flowbox_refinement_bound(&imm, &sol, &m, 3).unwrap().total;
        let b = flowbox_refinement_bound(&imm, &sol, &m, 4).unwrap().total;
        assert!((b - a / 2.0).abs() <= 1e-12);
    }

    #[test]
    fn grid_size_is_capped() {
        assert!(matches!(GridForm::zeros(3, 2, 512), Err(Error::Grid(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn grid_wedge_is_graded_commutative(seed in 0u64..500) {
            let mut rng = crate::rng::family_rng(seed, 0);
            let a = crate::rng::random_form(&mut rng, 2, 1, 3, 4);
            let b = crate::rng::random_form(&mut rng, 2, 1, 3, 4);
            let ga = GridForm::sample(&a, 32).unwrap();
            let gb = GridForm::sample(&b, 32).unwrap();
            let ab = grid_wedge_integrate(&ga, &gb).unwrap();
            let ba = grid_wedge_integrate(&gb, &ga).unwrap();
            prop_assert!((ab + ba).abs() <= 1e-12);
            // grid means are exact below the Nyquist frequency
            let exact = crate::forms::integrate_torus(&a.clone().with_cap(64).wedge(&b.clone().with_cap(64)).unwrap()).unwrap();
            prop_assert!((ab - exact).abs() <= 1e-10);
        }
    }
}
