//! Immersions `F : S_f → Tⁿ` and the currents `C_{F,μ}(ω) = ∫_X ∫₀¹ F*ω dμ`.
//!
//! Immersions are given on the flow box `[0,1] × X` as lifts to `ℝⁿ`; the
//! torus value is the lift mod `ℤⁿ`.

use std::f64::consts::TAU;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply_return_map, ReturnMap};
use crate::error::{invalid, Error, Result};
use crate::forms::{
    gluing_samples, integrate_leafwise, transversal_nodes, CompiledForm, FormDescriptor, LeafwiseForm,
    LeafwiseQuadrature, TorusForm,
};
use crate::quad::adaptive;
use crate::smeasure::TransversalMeasureInv;
use crate::solenoid::SuspensionSolenoid;
use crate::transversal::{RawTransversalMeasure, TransversalPoint, TransversalSpace};
use crate::util::{centered, ksum};

pub const GLUING_TOL: f64 = 1e-9;
/// Smallest admissible leaf speed `|∂ₜF|`.
pub const MIN_SPEED: f64 = 1e-6;
pub const DEFAULT_EPS0: f64 = 0.05;
pub const MAX_DYADIC_DEPTH: u32 = 10;
/// Unwrapping steps per unit leaf time in [`asymptotic_cycle`].
pub const CYCLE_STEPS: usize = 64;

fn default_eps0() -> f64 {
    DEFAULT_EPS0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImmersionDescriptor {
    /// `F(t, x) = (t, x + tα)` into `T²` for a circle rotation.
    RotationStandard,
    /// Spiral embedding of the dyadic solenoid in `T³`.
    DyadicR3 {
        depth: u32,
        #[serde(default = "default_eps0")]
        eps0: f64,
    },
    /// `F(t, x) = v t + w0 + e x`.
    TorusLinear { v: Vec<f64>, w0: Vec<f64>, e: Vec<f64> },
    /// `F = L + D(L)` with `L` linear as above and `D` a trigonometric
    /// displacement field, one 0-form per coordinate.
    Custom {
        v: Vec<f64>,
        w0: Vec<f64>,
        e: Vec<f64>,
        displacement: Vec<FormDescriptor>,
    },
}

#[derive(Debug, Clone)]
enum Kind {
    Rotation { alpha: f64 },
    Dyadic { depth: u32, eps0: f64, eps: Vec<f64> },
    Linear { v: Vec<f64>, w0: Vec<f64>, e: Vec<f64> },
    Custom {
        v: Vec<f64>,
        w0: Vec<f64>,
        e: Vec<f64>,
        forms: Vec<TorusForm>,
        disp: Vec<CompiledForm>,
        grad: Vec<CompiledForm>,
    },
}

/// Transversal coordinate as the immersion formulas consume it.
#[derive(Debug, Clone, Copy)]
pub(crate) enum XCoord {
    Real(f64),
    Index(usize),
}

/// A leafwise immersion of a suspension solenoid into `Tⁿ`.
#[derive(Debug, Clone)]
pub struct Immersion {
    n: usize,
    kind: Kind,
    space: TransversalSpace,
    max_speed: f64,
    min_speed: f64,
    gluing_residual: f64,
}

pub fn make_immersion(desc: &ImmersionDescriptor, sol: &SuspensionSolenoid) -> Result<Immersion> {
    let (n, kind) = match desc {
        ImmersionDescriptor::RotationStandard => match (&sol.space, &sol.map) {
            (TransversalSpace::Circle, ReturnMap::Rotation(r)) => (2, Kind::Rotation { alpha: r.value() }),
            _ => {
                return Err(Error::Incompatible(
                    "rotation_standard needs a circle rotation".into(),
                ))
            }
        },
        ImmersionDescriptor::DyadicR3 { depth, eps0 } => {
            if !(1..=MAX_DYADIC_DEPTH).contains(depth) {
                return Err(invalid("immersion.depth", format!("must lie in 1..={MAX_DYADIC_DEPTH}")));
            }
            if !(eps0.is_finite() && *eps0 > 0.0 && *eps0 < 0.25) {
                return Err(invalid("immersion.eps0", "must lie in (0, 0.25)"));
            }
            match (&sol.space, &sol.map) {
                (TransversalSpace::Cantor { p: 2, depth: d }, ReturnMap::Odometer { p: 2 }) if d >= depth => {}
                _ => {
                    return Err(Error::Incompatible(format!(
                        "dyadic_r3 needs the dyadic odometer on a Cantor set of depth >= {depth}"
                    )))
                }
            }
            let eps = (1..=*depth).map(|k| eps0 * 0.25f64.powi(k as i32)).collect();
            (3, Kind::Dyadic { depth: *depth, eps0: *eps0, eps })
        }
        ImmersionDescriptor::TorusLinear { v, w0, e } => {
            let n = check_linear(v, w0, e, &sol.space)?;
            (n, Kind::Linear { v: v.clone(), w0: w0.clone(), e: e.clone() })
        }
        ImmersionDescriptor::Custom { v, w0, e, displacement } => {
            let n = check_linear(v, w0, e, &sol.space)?;
            if displacement.len() != n {
                return Err(invalid(
                    "immersion.displacement",
                    format!("expected {n} components, got {}", displacement.len()),
                ));
            }
            let mut forms = Vec::with_capacity(n);
            for (i, d) in displacement.iter().enumerate() {
                let f = TorusForm::from_descriptor(d, n)
                    .map_err(|e| invalid(format!("immersion.displacement[{i}]"), e.to_string()))?;
                if f.degree() != 0 {
                    return Err(invalid(format!("immersion.displacement[{i}]"), "must be a 0-form"));
                }
                forms.push(f);
            }
            let grad = forms.iter().map(|f| f.d().map(|g| g.compile())).collect::<Result<Vec<_>>>()?;
            let disp = forms.iter().map(|f| f.compile()).collect();
            (
                n,
                Kind::Custom {
                    v: v.clone(),
                    w0: w0.clone(),
                    e: e.clone(),
                    forms,
                    disp,
                    grad,
                },
            )
        }
    };
    let mut imm = Immersion {
        n,
        kind,
        space: sol.space.clone(),
        max_speed: 0.0,
        min_speed: f64::INFINITY,
        gluing_residual: 0.0,
    };
    imm.validate(sol)?;
    Ok(imm)
}

fn check_linear(v: &[f64], w0: &[f64], e: &[f64], space: &TransversalSpace) -> Result<usize> {
    let n = v.len();
    if n == 0 {
        return Err(invalid("immersion.v", "must be non-empty"));
    }
    if w0.len() != n {
        return Err(invalid("immersion.w0", format!("expected {n} entries")));
    }
    if e.len() != n {
        return Err(invalid("immersion.e", format!("expected {n} entries")));
    }
    if v.iter().chain(w0).chain(e).any(|c| !c.is_finite()) {
        return Err(invalid("immersion", "non-finite coefficient"));
    }
    if matches!(space, TransversalSpace::Cantor { .. }) {
        return Err(Error::Incompatible("linear immersions need a circle or finite transversal".into()));
    }
    Ok(n)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Immersion {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn descriptor(&self) -> ImmersionDescriptor {
        match &self.kind {
            Kind::Rotation { .. } => ImmersionDescriptor::RotationStandard,
            Kind::Dyadic { depth, eps0, .. } => ImmersionDescriptor::DyadicR3 {
                depth: *depth,
                eps0: *eps0,
            },
            Kind::Linear { v, w0, e } => ImmersionDescriptor::TorusLinear {
                v: v.clone(),
                w0: w0.clone(),
                e: e.clone(),
            },
            Kind::Custom { v, w0, e, forms, .. } => ImmersionDescriptor::Custom {
                v: v.clone(),
                w0: w0.clone(),
                e: e.clone(),
                displacement: forms.iter().map(|f| f.descriptor()).collect(),
            },
        }
    }

    /// Largest `|∂ₜF|` seen on the validation grid.
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    pub fn min_speed(&self) -> f64 {
        self.min_speed
    }

    /// Largest `|F(1, x) − F(0, f(x))|` (mod `ℤⁿ`) over the gluing samples.
    pub fn gluing_residual(&self) -> f64 {
        self.gluing_residual
    }

    pub(crate) fn xcoord(&self, pt: &TransversalPoint) -> Result<XCoord> {
        match (&self.space, pt) {
            (TransversalSpace::Cantor { .. }, _) => Ok(XCoord::Index(self.space.index_of(pt)?)),
            (_, TransversalPoint::Real(x)) => Ok(XCoord::Real(*x)),
            _ => Err(Error::Incompatible("point does not belong to the transversal".into())),
        }
    }

    fn linear_part(v: &[f64], w0: &[f64], e: &[f64], t: f64, x: f64, out: &mut [f64]) {
        for i in 0..v.len() {
            out[i] = v[i] * t + w0[i] + e[i] * x;
        }
    }

    /// Lift of `F(t, x)` to `ℝⁿ`.
    pub(crate) fn eval_x(&self, t: f64, x: XCoord, out: &mut [f64]) {
        match (&self.kind, x) {
            (Kind::Rotation { alpha }, XCoord::Real(x)) => {
                out[0] = t;
                out[1] = x + t * alpha;
            }
            (Kind::Dyadic { eps, .. }, XCoord::Index(a)) => {
                let (mut c, mut s) = (0.0, 0.0);
                for (k, ek) in eps.iter().enumerate() {
                    let m = 1usize << (k + 1);
                    let tau = (t + (a % m) as f64) / m as f64;
                    let (sn, cs) = (TAU * tau).sin_cos();
                    c += ek * cs;
                    s += ek * sn;
                }
                out[0] = t;
                out[1] = 0.5 + c;
                out[2] = 0.5 + s;
            }
            (Kind::Linear { v, w0, e }, XCoord::Real(x)) => Self::linear_part(v, w0, e, t, x, out),
            (Kind::Custom { v, w0, e, disp, .. }, XCoord::Real(x)) => {
                Self::linear_part(v, w0, e, t, x, out);
                let base = out.to_vec();
                let mut val = [0.0];
                for (i, d) in disp.iter().enumerate() {
                    if d.components.is_empty() {
                        continue;
                    }
                    d.eval_into(&base, &mut val);
                    out[i] += val[0];
                }
            }
            _ => unreachable!("coordinate kind checked at construction"),
        }
    }

    /// `∂ₜF(t, x)`.
    pub(crate) fn speed_x(&self, t: f64, x: XCoord, out: &mut [f64]) {
        match (&self.kind, x) {
            (Kind::Rotation { alpha }, _) => {
                out[0] = 1.0;
                out[1] = *alpha;
            }
            (Kind::Dyadic { eps, .. }, XCoord::Index(a)) => {
                let (mut c, mut s) = (0.0, 0.0);
                for (k, ek) in eps.iter().enumerate() {
                    let m = 1usize << (k + 1);
                    let tau = (t + (a % m) as f64) / m as f64;
                    let (sn, cs) = (TAU * tau).sin_cos();
                    let w = ek * TAU / m as f64;
                    c -= w * sn;
                    s += w * cs;
                }
                out[0] = 1.0;
                out[1] = c;
                out[2] = s;
            }
            (Kind::Linear { v, .. }, _) => out.copy_from_slice(v),
            (Kind::Custom { v, w0, e, grad, .. }, XCoord::Real(x)) => {
                let mut base = vec![0.0; v.len()];
                Self::linear_part(v, w0, e, t, x, &mut base);
                for i in 0..v.len() {
                    let g = if grad[i].components.is_empty() {
                        0.0
                    } else {
                        grad[i].apply_1form(&base, v)
                    };
                    out[i] = v[i] + g;
                }
            }
            _ => unreachable!("coordinate kind checked at construction"),
        }
    }

    pub fn eval(&self, t: f64, x: &TransversalPoint) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.eval_x(t, self.xcoord(x)?, &mut out);
        Ok(out)
    }

    pub fn speed(&self, t: f64, x: &TransversalPoint) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.speed_x(t, self.xcoord(x)?, &mut out);
        Ok(out)
    }

    fn validate(&mut self, sol: &SuspensionSolenoid) -> Result<()> {
        let pts = gluing_samples(sol);
        let mut a = vec![0.0; self.n];
        let mut b = vec![0.0; self.n];
        let mut res: f64 = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for p in &pts {
            let x = self.xcoord(p)?;
            let fx = self.xcoord(&apply_return_map(&sol.space, &sol.map, p, 1)?)?;
            self.eval_x(1.0, x, &mut a);
            self.eval_x(0.0, fx, &mut b);
            for i in 0..self.n {
                res = res.max(centered(a[i] - b[i]).abs());
            }
            for j in 0..=64 {
                self.speed_x(j as f64 / 64.0, x, &mut a);
                let s = dot(&a, &a).sqrt();
                lo = lo.min(s);
                hi = hi.max(s);
            }
        }
        self.gluing_residual = res;
        self.min_speed = lo;
        self.max_speed = hi;
        if !(res <= GLUING_TOL) {
            return Err(Error::Gluing(res));
        }
        if !(lo >= MIN_SPEED) {
            return Err(Error::Degenerate(lo));
        }
        Ok(())
    }

    /// Built-in kinds with a known tube-disjointness radius.
    pub fn is_embedding(&self) -> bool {
        !matches!(self.kind, Kind::Custom { .. })
    }

    /// Direction, offset and transversal vector of a straight immersion.
    pub(crate) fn linear_data(&self) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        match &self.kind {
            Kind::Rotation { alpha } => Some((vec![1.0, *alpha], vec![0.0, 0.0], vec![0.0, 1.0])),
            Kind::Linear { v, w0, e } => Some((v.clone(), w0.clone(), e.clone())),
            _ => None,
        }
    }

    /// Half the smallest distance between leaf segments that are not
    /// continuations of one another. Tubes of smaller radius around the unit
    /// segments of distinct (or self-returning) plaques do not meet.
    pub fn disjointness_radius(&self, sol: &SuspensionSolenoid) -> Result<f64> {
        match &self.kind {
            Kind::Custom { .. } => Err(Error::NotEmbedding("custom immersions are not certified".into())),
            Kind::Dyadic { eps, .. } => {
                // strands first differing at digit j sit at opposite phases,
                // separated by at least 2ε_{j+1}(1 − 1/3)
                let slope: f64 = eps.iter().enumerate().map(|(k, e)| e * TAU / (1u64 << (k + 1)) as f64).sum();
                let last = *eps.last().expect("depth >= 1");
                Ok((2.0 / 3.0) * last / (1.0 + slope * slope).sqrt())
            }
            Kind::Rotation { .. } | Kind::Linear { .. } => {
                let (v, w0, e) = self.linear_data().expect("straight kind");
                let starts: Vec<f64> = match (&sol.space, &self.kind) {
                    (TransversalSpace::Circle, _) => vec![0.0],
                    (TransversalSpace::Finite { points }, _) => points.clone(),
                    _ => return Err(Error::Incompatible("unsupported transversal".into())),
                };
                let n = self.n;
                let segs: Vec<(Vec<f64>, Vec<f64>)> = starts
                    .iter()
                    .map(|&x| {
                        let p0: Vec<f64> = (0..n).map(|i| w0[i] + e[i] * x).collect();
                        let p1: Vec<f64> = (0..n).map(|i| p0[i] + v[i]).collect();
                        (p0, p1)
                    })
                    .collect();
                let reach = v.iter().map(|c| c.abs()).fold(0.0, f64::max).ceil() as i64 + 2;
                let mut best = f64::INFINITY;
                for (i, (a0, a1)) in segs.iter().enumerate() {
                    for (j, (b0, b1)) in segs.iter().enumerate() {
                        for m in lattice_box(n, reach) {
                            if i == j && m.iter().all(|&c| c == 0) {
                                continue;
                            }
                            let c0: Vec<f64> = b0.iter().zip(&m).map(|(p, k)| p + *k as f64).collect();
                            let c1: Vec<f64> = b1.iter().zip(&m).map(|(p, k)| p + *k as f64).collect();
                            // consecutive plaques of one leaf meet at the gluing point
                            if dist(a1, &c0) < 1e-12 || dist(&c1, a0) < 1e-12 {
                                continue;
                            }
                            best = best.min(segment_distance(a0, a1, &c0, &c1));
                        }
                    }
                }
                Ok(0.5 * best)
            }
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lattice_box(n: usize, reach: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        let mut next = Vec::new();
        for p in &out {
            for c in -reach..=reach {
                let mut q = p.clone();
                q.push(c);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Distance between segments `[p0, p1]` and `[q0, q1]` in `ℝⁿ`.
pub fn segment_distance(p0: &[f64], p1: &[f64], q0: &[f64], q1: &[f64]) -> f64 {
    let d1: Vec<f64> = p1.iter().zip(p0).map(|(a, b)| a - b).collect();
    let d2: Vec<f64> = q1.iter().zip(q0).map(|(a, b)| a - b).collect();
    let r: Vec<f64> = p0.iter().zip(q0).map(|(a, b)| a - b).collect();
    let (a, e, f) = (dot(&d1, &d1), dot(&d2, &d2), dot(&d2, &r));
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return dist(p0, q0);
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = dot(&d1, &r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(&d1, &d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let pa: Vec<f64> = p0.iter().zip(&d1).map(|(p, d)| p + s * d).collect();
    let qb: Vec<f64> = q0.iter().zip(&d2).map(|(q, d)| q + t * d).collect();
    dist(&pa, &qb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairOptions {
    /// Gauss–Legendre order of the adaptive leaf rule.
    pub order: usize,
    pub start_panels: usize,
    pub tol: f64,
    pub max_panels: usize,
    pub transversal: LeafwiseQuadrature,
    /// Sub-interval of the unit plaque to integrate over.
    pub t_range: (f64, f64),
    /// Integrate over the suspension of `f⁻¹` with the reversed parametrization.
    pub reverse: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            order: 16,
            start_panels: 2,
            tol: 1e-12,
            max_panels: 256,
            transversal: LeafwiseQuadrature::default(),
            t_range: (0.0, 1.0),
            reverse: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingResult {
    pub value: f64,
    pub quad_error_estimate: f64,
    /// Largest number of leaf nodes used on one plaque.
    pub nodes_t: usize,
    /// Transversal quadrature nodes.
    pub cells_x: usize,
}

fn has_continuous_part(m: &RawTransversalMeasure) -> bool {
    match m {
        RawTransversalMeasure::Density { density, .. } => density.max_frequency() > 0 || density.constant != 0.0,
        RawTransversalMeasure::Histogram { .. } => true,
        _ => false,
    }
}

/// `C_{F,μ}(ω) = ∫_X ∫ ω(F(t, x))(∂ₜF) dt dμ(x)`.
pub fn pair_current(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    m: &TransversalMeasureInv,
    omega: &TorusForm,
    opts: &PairOptions,
) -> Result<PairingResult> {
    if omega.degree() != 1 {
        return Err(Error::DegreeMismatch {
            expected: 1,
            got: omega.degree(),
        });
    }
    if omega.dim() != imm.n {
        return Err(Error::DimensionMismatch(omega.dim(), imm.n));
    }
    if m.invariance_residual > m.tol {
        return Err(Error::NotInvariant {
            residual: m.invariance_residual,
            tol: m.tol,
        });
    }
    let (a, b) = opts.t_range;
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
        return Err(invalid("t_range", "must satisfy 0 <= a <= b <= 1"));
    }
    let w = omega.compile();
    let fine = leaf_sum(imm, sol, &m.raw, &w, opts, &opts.transversal)?;
    let mut err = fine.1;
    if has_continuous_part(&m.raw) && opts.transversal.circle_bins >= 2 {
        let coarse_q = LeafwiseQuadrature {
            circle_bins: opts.transversal.circle_bins / 2,
            ..opts.transversal
        };
        let coarse = leaf_sum(imm, sol, &m.raw, &w, opts, &coarse_q)?;
        err += (fine.0 - coarse.0).abs();
    }
    Ok(PairingResult {
        value: fine.0,
        quad_error_estimate: err,
        nodes_t: fine.2,
        cells_x: fine.3,
    })
}

fn leaf_sum(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    raw: &RawTransversalMeasure,
    w: &CompiledForm,
    opts: &PairOptions,
    q: &LeafwiseQuadrature,
) -> Result<(f64, f64, usize, usize)> {
    let nodes = transversal_nodes(&sol.space, raw, q)?;
    let (a, b) = opts.t_range;
    let mut coords = Vec::with_capacity(nodes.len());
    for (x, wt) in &nodes {
        let y = if opts.reverse {
            apply_return_map(&sol.space, &sol.map, x, -1)?
        } else {
            x.clone()
        };
        coords.push((imm.xcoord(&y)?, *wt));
    }
    let per: Vec<(f64, f64, usize)> = coords
        .par_iter()
        .map(|&(x, wt)| {
            let mut p = vec![0.0; imm.n];
            let mut v = vec![0.0; imm.n];
            let est = adaptive(
                |s| {
                    let (t, sign) = if opts.reverse { (1.0 - s, -1.0) } else { (s, 1.0) };
                    imm.eval_x(t, x, &mut p);
                    imm.speed_x(t, x, &mut v);
                    sign * w.apply_1form(&p, &v)
                },
                a,
                b,
                opts.order,
                opts.start_panels,
                opts.tol,
                opts.max_panels,
            );
            (wt * est.value, wt.abs() * est.error, est.nodes)
        })
        .collect();
    let value = ksum(per.iter().map(|r| r.0));
    let err = ksum(per.iter().map(|r| r.1));
    let nodes_t = per.iter().map(|r| r.2).max().unwrap_or(0);
    Ok((value, err, nodes_t, coords.len()))
}

/// The class of `C_{F,μ}` in `H₁(Tⁿ; ℝ)`: component `i` is `C(dθᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomologyClass {
    pub class: Vec<f64>,
    pub errors: Vec<f64>,
}

pub fn homology_class(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    m: &TransversalMeasureInv,
    opts: &PairOptions,
) -> Result<HomologyClass> {
    let mut class = Vec::with_capacity(imm.n);
    let mut errors = Vec::with_capacity(imm.n);
    for i in 0..imm.n {
        let r = pair_current(imm, sol, m, &TorusForm::dtheta(imm.n, i)?, opts)?;
        class.push(r.value);
        errors.push(r.quad_error_estimate);
    }
    Ok(HomologyClass { class, errors })
}

/// `|C(dη)|` together with the bound it should respect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosednessCheck {
    pub residual: f64,
    pub bound: f64,
}

pub fn closedness_residual(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    m: &TransversalMeasureInv,
    eta: &TorusForm,
    opts: &PairOptions,
) -> Result<ClosednessCheck> {
    if eta.degree() != 0 {
        return Err(Error::DegreeMismatch {
            expected: 0,
            got: eta.degree(),
        });
    }
    let r = pair_current(imm, sol, m, &eta.d()?, opts)?;
    Ok(ClosednessCheck {
        residual: r.value.abs(),
        bound: (10.0 * r.quad_error_estimate).max(1e-8),
    })
}

/// `lim (F̃(x₀, T) − F̃(x₀, 0)) / T` for the lifted leaf through `(x₀, 0)`,
/// sampled at the horizon `T`.
pub fn asymptotic_cycle(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    x0: &TransversalPoint,
    horizon: f64,
) -> Result<Vec<f64>> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid("horizon", "must be positive"));
    }
    let n = imm.n;
    // keep every step below a quarter period so the unwrap is unambiguous
    let steps = CYCLE_STEPS.max((4.0 * imm.max_speed * 1.5).ceil() as usize);
    let units = horizon.floor() as usize;
    let rem = horizon - units as f64;
    let mut pt = x0.clone();
    let mut x = imm.xcoord(&pt)?;
    let mut buf = vec![0.0; n];
    imm.eval_x(0.0, x, &mut buf);
    let start: Vec<f64> = buf.iter().map(|c| c.rem_euclid(1.0)).collect();
    let mut prev = start.clone();
    let mut offset = vec![0.0; n];
    let mut advance = |t: f64, x: XCoord, prev: &mut Vec<f64>, offset: &mut Vec<f64>| {
        imm.eval_x(t, x, &mut buf);
        for i in 0..n {
            let p = buf[i].rem_euclid(1.0);
            offset[i] += (prev[i] - p).round();
            prev[i] = p;
        }
    };
    for _ in 0..units {
        for j in 1..=steps {
            advance(j as f64 / steps as f64, x, &mut prev, &mut offset);
        }
        pt = apply_return_map(&sol.space, &sol.map, &pt, 1)?;
        x = imm.xcoord(&pt)?;
    }
    if rem > 0.0 {
        let segs = ((rem * steps as f64).ceil() as usize).max(1);
        for j in 1..=segs {
            advance(rem * j as f64 / segs as f64, x, &mut prev, &mut offset);
        }
    }
    Ok((0..n).map(|i| (prev[i] + offset[i] - start[i]) / horizon).collect())
}

/// `F*ω` as a leafwise 1-form.
pub fn pullback(imm: &Immersion, omega: &TorusForm) -> Result<LeafwiseForm> {
    if omega.degree() != 1 {
        return Err(Error::DegreeMismatch {
            expected: 1,
            got: omega.degree(),
        });
    }
    if omega.dim() != imm.n {
        return Err(Error::DimensionMismatch(omega.dim(), imm.n));
    }
    let data = Arc::new((imm.clone(), omega.compile()));
    LeafwiseForm::new(1, move |x: &TransversalPoint, t: f64| {
        let (imm, w) = &*data;
        let x = imm.xcoord(x).expect("point on the immersed transversal");
        let mut p = vec![0.0; imm.n];
        let mut v = vec![0.0; imm.n];
        imm.eval_x(t, x, &mut p);
        imm.speed_x(t, x, &mut v);
        w.apply_1form(&p, &v)
    })
}

/// Agreement between [`pair_current`] and the leafwise integral of `F*ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub current: f64,
    pub leafwise: f64,
    pub difference: f64,
    pub bound: f64,
}

pub fn pushforward_consistency(
    imm: &Immersion,
    sol: &SuspensionSolenoid,
    m: &TransversalMeasureInv,
    omega: &TorusForm,
    opts: &PairOptions,
) -> Result<ConsistencyReport> {
    let c = pair_current(imm, sol, m, omega, opts)?;
    let leafwise = integrate_leafwise(sol, m, &pullback(imm, omega)?, &opts.transversal)?;
    Ok(ConsistencyReport {
        current: c.value,
        leafwise,
        difference: (c.value - leafwise).abs(),
        bound: 1e-9 + c.quad_error_estimate,
    })
}
