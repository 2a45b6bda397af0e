//! Return-map dynamics on transversals.
//!
//! Covers iteration (with exact inverses where the arithmetic allows it),
//! Birkhoff averages, invariant measures (closed form for the built-in
//! families, Ulam's method as a numerical cross-check) and the
//! minimal / uniquely ergodic classification.

use std::f64::consts::TAU;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::transversal::{digits_of, RawTransversalMeasure, TransversalPoint, TransversalSpace};
use crate::trig::TrigPoly;
use crate::util::{frac, gcd, ksum, KahanSum};

/// Continued-fraction budget for the irrationality test.
pub const CF_MAX_TERMS: usize = 40;
pub const CF_MAX_DENOMINATOR: u64 = 1_000_000_000_000;

const NEWTON_MAX_ITERS: usize = 30;
const NEWTON_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapDescriptor {
    Rotation {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        real: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rational: Option<(i64, i64)>,
    },
    Odometer {
        p: i64,
    },
    CircleDiffeo {
        a: f64,
        m: i64,
    },
    Permutation {
        sigma: Vec<usize>,
    },
}

/// Rotation number, declared either as a float or as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationNumber {
    Real(f64),
    /// Reduced `p/q` with `0 ≤ p < q`.
    Rational { p: u64, q: u64 },
}

impl RotationNumber {
    pub fn value(self) -> f64 {
        match self {
            RotationNumber::Real(a) => a,
            RotationNumber::Rational { p, q } => p as f64 / q as f64,
        }
    }

    /// `Some((p, q))` when the rotation is treated as rational: either it was
    /// declared as a fraction, or the exact continued fraction of the float
    /// terminates within the term and denominator budget.
    pub fn as_rational(self) -> Option<(u64, u64)> {
        match self {
            RotationNumber::Rational { p, q } => Some((p, q)),
            RotationNumber::Real(a) => terminating_fraction(frac(a)),
        }
    }
}

/// Exact continued fraction of a double in [0, 1). Returns the fraction when
/// the expansion terminates within `CF_MAX_TERMS` with denominator at most
/// `CF_MAX_DENOMINATOR`.
pub fn terminating_fraction(x: f64) -> Option<(u64, u64)> {
    if x == 0.0 {
        return Some((0, 1));
    }
    // x = mant · 2^exp exactly
    let bits = x.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let (mant, exp) = if exp_bits == 0 {
        (bits & ((1 << 52) - 1), -1074)
    } else {
        ((bits & ((1 << 52) - 1)) | (1 << 52), exp_bits - 1075)
    };
    let shift = -exp;
    if !(0..=126).contains(&shift) {
        return None;
    }
    let (mut num, mut den) = (mant as u128, 1u128 << shift);
    let g = gcd_u128(num, den);
    num /= g;
    den /= g;
    // convergent recurrences h/k
    let (mut h_prev, mut h) = (1u128, 0u128);
    let (mut k_prev, mut k) = (0u128, 1u128);
    for _ in 0..=CF_MAX_TERMS {
        if num == 0 {
            return (k <= CF_MAX_DENOMINATOR as u128).then_some((h as u64, k as u64));
        }
        let a = den / num;
        let r = den % num;
        let h_new = a.checked_mul(h)?.checked_add(h_prev)?;
        let k_new = a.checked_mul(k)?.checked_add(k_prev)?;
        if k_new > CF_MAX_DENOMINATOR as u128 {
            return None;
        }
        (h_prev, h, k_prev, k) = (h, h_new, k, k_new);
        (den, num) = (num, r);
    }
    None
}

fn gcd_u128(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd_u128(b, a % b)
    }
}

/// The Poincaré return map of the base transversal (= the suspension map).
#[derive(Debug, Clone, PartialEq)]
pub enum ReturnMap {
    Rotation(RotationNumber),
    Odometer { p: u32 },
    /// `x ↦ x + a·sin(2πmx) mod 1` with `|2πma| < 1`.
    CircleDiffeo { a: f64, m: u32 },
    /// `i ↦ σ[i]` on the sorted Finite points.
    Permutation { sigma: Vec<usize> },
}

pub fn make_map(desc: &MapDescriptor) -> Result<ReturnMap> {
    match desc {
        MapDescriptor::Rotation { real, rational } => match (real, rational) {
            (Some(a), None) => {
                if !a.is_finite() {
                    return Err(invalid("map.real", "rotation number must be finite"));
                }
                Ok(ReturnMap::Rotation(RotationNumber::Real(frac(*a))))
            }
            (None, Some((p, q))) => {
                if *q <= 0 {
                    return Err(invalid("map.rational", "denominator must be positive"));
                }
                let q = *q as u64;
                let p = p.rem_euclid(q as i64) as u64;
                let g = gcd(p, q).max(1);
                Ok(ReturnMap::Rotation(RotationNumber::Rational { p: p / g, q: q / g }))
            }
            _ => Err(invalid("map", "rotation needs exactly one of \"real\" or \"rational\"")),
        },
        &MapDescriptor::Odometer { p } => {
            if p < 2 {
                return Err(invalid("map.p", format!("base must be >= 2, got {p}")));
            }
            Ok(ReturnMap::Odometer { p: p as u32 })
        }
        &MapDescriptor::CircleDiffeo { a, m } => {
            if m < 1 {
                return Err(invalid("map.m", "frequency must be >= 1"));
            }
            if !a.is_finite() || (TAU * m as f64 * a).abs() >= 1.0 {
                return Err(invalid("map.a", "need |2πma| < 1 for a diffeomorphism"));
            }
            Ok(ReturnMap::CircleDiffeo { a, m: m as u32 })
        }
        MapDescriptor::Permutation { sigma } => {
            let mut seen = vec![false; sigma.len()];
            for &s in sigma {
                if s >= sigma.len() || std::mem::replace(&mut seen[s], true) {
                    return Err(invalid("map.sigma", "not a permutation"));
                }
            }
            if sigma.is_empty() {
                return Err(invalid("map.sigma", "empty permutation"));
            }
            Ok(ReturnMap::Permutation {
                sigma: sigma.clone(),
            })
        }
    }
}

impl ReturnMap {
    pub fn descriptor(&self) -> MapDescriptor {
        match self {
            ReturnMap::Rotation(RotationNumber::Real(a)) => MapDescriptor::Rotation {
                real: Some(*a),
                rational: None,
            },
            &ReturnMap::Rotation(RotationNumber::Rational { p, q }) => MapDescriptor::Rotation {
                real: None,
                rational: Some((p as i64, q as i64)),
            },
            &ReturnMap::Odometer { p } => MapDescriptor::Odometer { p: p as i64 },
            &ReturnMap::CircleDiffeo { a, m } => MapDescriptor::CircleDiffeo { a, m: m as i64 },
            ReturnMap::Permutation { sigma } => MapDescriptor::Permutation {
                sigma: sigma.clone(),
            },
        }
    }

    /// Checks that the map acts on `space`.
    pub fn check_space(&self, space: &TransversalSpace) -> Result<()> {
        let ok = match (self, space) {
            (ReturnMap::Rotation(_) | ReturnMap::CircleDiffeo { .. }, TransversalSpace::Circle) => true,
            (ReturnMap::Odometer { p }, TransversalSpace::Cantor { p: q, .. }) => p == q,
            (ReturnMap::Permutation { sigma }, TransversalSpace::Finite { points }) => {
                sigma.len() == points.len()
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Incompatible(format!(
                "map {:?} does not act on transversal {:?}",
                self.descriptor(),
                space.descriptor()
            )))
        }
    }

    /// Monotone lift of a circle map to R.
    pub fn lift(&self, x: f64) -> f64 {
        match *self {
            ReturnMap::Rotation(r) => x + r.value(),
            ReturnMap::CircleDiffeo { a, m } => x + a * (TAU * m as f64 * x).sin(),
            _ => panic!("lift of a non-circle map"),
        }
    }

    /// Inverse of the lift.
    pub fn lift_inverse(&self, y: f64) -> f64 {
        match *self {
            ReturnMap::Rotation(r) => y - r.value(),
            ReturnMap::CircleDiffeo { a, m } => diffeo_inverse(a, m, y),
            _ => panic!("lift of a non-circle map"),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ReturnMap::Rotation(_) => 1.0,
            ReturnMap::CircleDiffeo { a, m } => {
                1.0 + TAU * m as f64 * a * (TAU * m as f64 * x).cos()
            }
            _ => panic!("derivative of a non-circle map"),
        }
    }
}

/// Newton solve of `x + a·sin(2πmx) = y`, seeded at `y − a·sin(2πmy)`.
fn diffeo_inverse(a: f64, m: u32, y: f64) -> f64 {
    let w = TAU * m as f64;
    let mut x = y - a * (w * y).sin();
    for _ in 0..NEWTON_MAX_ITERS {
        let g = x + a * (w * x).sin() - y;
        let dg = 1.0 + a * w * (w * x).cos();
        let step = g / dg;
        x -= step;
        if step.abs() <= NEWTON_TOL * 1e-2 {
            break;
        }
    }
    x
}

/// `frac(n·α)` with the rounding error of the product folded back in.
fn frac_mul(n: i64, alpha: f64) -> f64 {
    let nf = n as f64;
    let hi = nf * alpha;
    let lo = nf.mul_add(alpha, -hi);
    frac(frac(hi) + lo)
}

/// `x + s mod 1` for `x, s ∈ [0, 1)`. Wrapping subtracts `1 − s` from `x`
/// rather than 1 from the sum, which is exact more often.
fn add_mod1(x: f64, s: f64) -> f64 {
    if x + s >= 1.0 {
        frac(x - (1.0 - s))
    } else {
        x + s
    }
}

/// Internal orbit state: a coordinate on the circle or an index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum State {
    X(f64),
    Idx(usize),
}

pub(crate) fn to_state(space: &TransversalSpace, pt: &TransversalPoint) -> Result<State> {
    match space {
        TransversalSpace::Circle => match *pt {
            TransversalPoint::Real(x) => {
                space.embed_point(pt)?;
                Ok(State::X(x))
            }
            _ => Err(invalid("point", "expected a circle coordinate")),
        },
        _ => Ok(State::Idx(space.index_of(pt)?)),
    }
}

pub(crate) fn from_state(space: &TransversalSpace, s: State) -> TransversalPoint {
    match s {
        State::X(x) => TransversalPoint::Real(x),
        State::Idx(i) => space.point_at(i),
    }
}

pub(crate) fn step_state(space: &TransversalSpace, map: &ReturnMap, s: State, n: i64) -> State {
    match (map, s) {
        (ReturnMap::Rotation(RotationNumber::Rational { p, q }), State::X(x)) => {
            let k = (n as i128 * *p as i128).rem_euclid(*q as i128) as f64;
            State::X(add_mod1(x, k / *q as f64))
        }
        (ReturnMap::Rotation(RotationNumber::Real(a)), State::X(x)) => {
            State::X(add_mod1(x, frac_mul(n, *a)))
        }
        (ReturnMap::CircleDiffeo { .. }, State::X(mut x)) => {
            if n >= 0 {
                for _ in 0..n {
                    x = frac(map.lift(x));
                }
            } else {
                for _ in 0..(-n) {
                    x = frac(map.lift_inverse(x));
                }
            }
            State::X(x)
        }
        (ReturnMap::Odometer { .. }, State::Idx(i)) => {
            let size = space.cell_count().expect("cantor space") as i128;
            State::Idx((i as i128 + n as i128).rem_euclid(size) as usize)
        }
        (ReturnMap::Permutation { sigma }, State::Idx(mut i)) => {
            if n >= 0 {
                for _ in 0..n {
                    i = sigma[i];
                }
            } else {
                let mut inv = vec![0; sigma.len()];
                for (k, &s) in sigma.iter().enumerate() {
                    inv[s] = k;
                }
                for _ in 0..(-n) {
                    i = inv[i];
                }
            }
            State::Idx(i)
        }
        _ => panic!("map/state mismatch"),
    }
}

/// `n`-fold composition of the return map (negative `n` iterates the inverse).
pub fn apply_return_map(
    space: &TransversalSpace,
    map: &ReturnMap,
    pt: &TransversalPoint,
    n: i64,
) -> Result<TransversalPoint> {
    map.check_space(space)?;
    let s = to_state(space, pt)?;
    Ok(from_state(space, step_state(space, map, s, n)))
}

/// Orbit `x₀, R x₀, …, R^{N−1} x₀` in the internal representation.
pub(crate) fn orbit(space: &TransversalSpace, map: &ReturnMap, x0: State, len: usize) -> Vec<State> {
    let mut out = Vec::with_capacity(len);
    match map {
        // direct evaluation keeps rotation orbits free of accumulated rounding
        ReturnMap::Rotation(_) => {
            for n in 0..len {
                out.push(step_state(space, map, x0, n as i64));
            }
        }
        _ => {
            let mut s = x0;
            for _ in 0..len {
                out.push(s);
                s = step_state(space, map, s, 1);
            }
        }
    }
    out
}

/// Observables for Birkhoff averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Trigonometric polynomial on the circle.
    Trig(TrigPoly),
    /// Indicator of the Finite point with this index.
    Indicator(usize),
    /// Indicator of the cylinder with these leading digits.
    Cylinder(Vec<u32>),
    /// Indicator of the arc `[a, b)`.
    Arc(f64, f64),
}

impl Observable {
    pub(crate) fn eval_state(&self, space: &TransversalSpace, s: State) -> f64 {
        match (self, s) {
            (Observable::Trig(p), State::X(x)) => p.eval(x),
            (Observable::Arc(a, b), State::X(x)) => {
                f64::from(crate::transversal::in_arc(x, *a, *b) as u8)
            }
            (Observable::Indicator(i), State::Idx(j)) => f64::from((*i == j) as u8),
            (Observable::Cylinder(prefix), State::Idx(j)) => {
                let &TransversalSpace::Cantor { p, depth } = space else {
                    return 0.0;
                };
                let ds = digits_of(j, p, depth);
                f64::from((ds.len() >= prefix.len() && ds[..prefix.len()] == prefix[..]) as u8)
            }
            _ => 0.0,
        }
    }

    pub fn eval(&self, space: &TransversalSpace, pt: &TransversalPoint) -> Result<f64> {
        Ok(self.eval_state(space, to_state(space, pt)?))
    }

    /// Space average under a probability measure on `space`.
    pub fn mean(&self, space: &TransversalSpace, m: &RawTransversalMeasure) -> f64 {
        let total = m.total_mass();
        let raw = match (self, m) {
            (Observable::Trig(p), RawTransversalMeasure::Density { density, atoms }) => {
                let rule = crate::quad::CompositeGauss::new(16, 4 * (p.max_frequency() + density.max_frequency()).max(1));
                rule.integrate(0.0, 1.0, |x| p.eval(x) * density.eval(x))
                    + ksum(atoms.iter().map(|&(x, w)| w * p.eval(x)))
            }
            (Observable::Arc(a, b), _) => m.interval_mass(*a, *b),
            (Observable::Indicator(i), RawTransversalMeasure::Weights(w)) => w[*i],
            (Observable::Cylinder(prefix), RawTransversalMeasure::Cylinders(_)) => {
                m.cylinder_mass(space, prefix)
            }
            _ => 0.0,
        };
        raw / total
    }
}

/// `(1/N) Σ_{n<N} obs(Rⁿ x₀)`.
pub fn birkhoff_average(
    space: &TransversalSpace,
    map: &ReturnMap,
    obs: &Observable,
    x0: &TransversalPoint,
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(invalid("N", "need N >= 1"));
    }
    map.check_space(space)?;
    let s0 = to_state(space, x0)?;
    let mut acc = KahanSum::new();
    match map {
        ReturnMap::Rotation(_) => {
            for k in 0..n {
                acc.add(obs.eval_state(space, step_state(space, map, s0, k as i64)));
            }
        }
        _ => {
            let mut s = s0;
            for _ in 0..n {
                acc.add(obs.eval_state(space, s));
                s = step_state(space, map, s, 1);
            }
        }
    }
    Ok(acc.value() / n as f64)
}

/// max over observables and starting points of |Birkhoff average − mean|.
/// Sweeps over starting points run in parallel; the reduction is a max, so
/// the result does not depend on scheduling.
pub fn unique_ergodicity_deviation(
    space: &TransversalSpace,
    map: &ReturnMap,
    observables: &[(Observable, f64)],
    samples: &[TransversalPoint],
    n: usize,
) -> Result<f64> {
    let devs: Vec<Result<f64>> = samples
        .par_iter()
        .map(|x0| {
            let mut worst = 0.0f64;
            for (obs, mean) in observables {
                let avg = birkhoff_average(space, map, obs, x0, n)?;
                worst = worst.max((avg - mean).abs());
            }
            Ok(worst)
        })
        .collect();
    let mut worst = 0.0f64;
    for d in devs {
        worst = worst.max(d?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UlamOptions {
    pub ulam_bins: usize,
    pub power_iter_tol: f64,
    pub max_iters: usize,
}

impl Default for UlamOptions {
    fn default() -> Self {
        Self {
            ulam_bins: 512,
            power_iter_tol: 1e-12,
            max_iters: 100_000,
        }
    }
}

/// Sparse row-stochastic Ulam matrix on `n` uniform bins of the circle.
#[derive(Debug, Clone)]
pub struct UlamMatrix {
    pub bins: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Transition weights below this are treated as overlap round-off.
const ULAM_DROP: f64 = 1e-12;

impl UlamMatrix {
    /// `P[i][j] = |{x ∈ Bᵢ : F(x) ∈ Bⱼ}| / |Bᵢ|`, computed from exact
    /// preimages of bin boundaries under the monotone lift.
    pub fn build(map: &ReturnMap, n: usize) -> Self {
        let h = 1.0 / n as f64;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let lo = i as f64 * h;
            let hi = lo + h;
            let (flo, fhi) = (map.lift(lo), map.lift(hi));
            let c0 = (flo * n as f64).floor() as i64;
            let c1 = (fhi * n as f64).ceil() as i64;
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut prev = lo;
            for c in c0..c1 {
                let boundary = (c + 1) as f64 * h;
                let next = if boundary >= fhi {
                    hi
                } else {
                    map.lift_inverse(boundary).clamp(prev, hi)
                };
                let w = (next - prev) / h;
                prev = next;
                if w > ULAM_DROP {
                    let j = c.rem_euclid(n as i64) as usize;
                    match row.iter_mut().find(|e| e.0 == j) {
                        Some(e) => e.1 += w,
                        None => row.push((j, w)),
                    }
                }
            }
            let s = ksum(row.iter().map(|e| e.1));
            for e in &mut row {
                e.1 /= s;
            }
            rows.push(row);
        }
        Self { bins: n, rows }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| ksum(r.iter().map(|e| e.1))).collect()
    }

    /// `π ↦ πP`.
    pub fn push(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bins];
        for (i, row) in self.rows.iter().enumerate() {
            if pi[i] == 0.0 {
                continue;
            }
            for &(j, w) in row {
                out[j] += pi[i] * w;
            }
        }
        out
    }

    /// Power iteration from `start` until the L1 change drops below `tol`.
    pub fn stationary(&self, start: Vec<f64>, tol: f64, max_iters: usize) -> Result<(Vec<f64>, usize)> {
        let mut pi = start;
        for it in 1..=max_iters {
            let mut next = self.push(&pi);
            let s = ksum(next.iter().copied());
            next.iter_mut().for_each(|v| *v /= s);
            let diff = ksum(next.iter().zip(&pi).map(|(a, b)| (a - b).abs()));
            pi = next;
            if diff < tol {
                return Ok((pi, it));
            }
        }
        Err(Error::NotConverged {
            what: "Ulam power iteration",
            iters: max_iters,
        })
    }

    /// Closed communicating classes. Each one carries exactly one stationary
    /// vector, so their count is the dimension of the eigenvalue-1
    /// eigenspace.
    pub fn closed_classes(&self) -> Vec<Vec<usize>> {
        let mut g = DiGraph::<(), ()>::with_capacity(self.bins, 0);
        let nodes: Vec<_> = (0..self.bins).map(|_| g.add_node(())).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, _) in row {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
        let mut comp = vec![0usize; self.bins];
        let sccs = tarjan_scc(&g);
        for (c, scc) in sccs.iter().enumerate() {
            for v in scc {
                comp[v.index()] = c;
            }
        }
        let mut classes: Vec<Vec<usize>> = sccs
            .iter()
            .enumerate()
            .filter(|(c, scc)| {
                scc.iter()
                    .all(|v| self.rows[v.index()].iter().all(|&(j, _)| comp[j] == *c))
            })
            .map(|(_, scc)| {
                let mut s: Vec<usize> = scc.iter().map(|v| v.index()).collect();
                s.sort_unstable();
                s
            })
            .collect();
        classes.sort();
        classes
    }
}

/// Result of Ulam's method at one resolution.
#[derive(Debug, Clone)]
pub struct UlamResult {
    pub bins: usize,
    /// Stationary bin masses from a uniform start.
    pub stationary: Vec<f64>,
    /// One stationary vector per closed class (ergodic candidates).
    pub class_measures: Vec<Vec<f64>>,
    pub iterations: usize,
    /// `‖πP‖₁ / ‖π‖₁` and `⟨πP, π⟩/⟨π, π⟩` at the returned vector.
    pub leading_eigenvalue: f64,
    pub max_row_sum_error: f64,
}

pub fn ulam(map: &ReturnMap, opts: &UlamOptions) -> Result<UlamResult> {
    if !matches!(map, ReturnMap::Rotation(_) | ReturnMap::CircleDiffeo { .. }) {
        return Err(Error::Incompatible("Ulam's method needs a circle map".into()));
    }
    let n = opts.ulam_bins.max(2);
    let mat = UlamMatrix::build(map, n);
    let max_row_sum_error = mat
        .row_sums()
        .iter()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);
    let (stationary, iterations) =
        mat.stationary(vec![1.0 / n as f64; n], opts.power_iter_tol, opts.max_iters)?;
    let pushed = mat.push(&stationary);
    let leading_eigenvalue = ksum(pushed.iter().zip(&stationary).map(|(a, b)| a * b))
        / ksum(stationary.iter().map(|b| b * b));
    let mut class_measures = Vec::new();
    for class in mat.closed_classes() {
        let mut start = vec![0.0; n];
        for &i in &class {
            start[i] = 1.0 / class.len() as f64;
        }
        let (pi, _) = mat.stationary(start, opts.power_iter_tol, opts.max_iters)?;
        class_measures.push(pi);
    }
    Ok(UlamResult {
        bins: n,
        stationary,
        class_measures,
        iterations,
        leading_eigenvalue,
        max_row_sum_error,
    })
}

/// Atoms promoted from Ulam output: a class measure with a bin carrying more
/// than half its mass, at both `n` and `2n` bins. Nearby candidates (split
/// across a bin boundary) are merged. Returns atom locations.
pub fn ulam_atoms(map: &ReturnMap, opts: &UlamOptions) -> Result<Vec<f64>> {
    let coarse = ulam(map, opts)?;
    let fine = ulam(
        map,
        &UlamOptions {
            ulam_bins: 2 * opts.ulam_bins,
            ..*opts
        },
    )?;
    let heavy = |r: &UlamResult| -> Vec<f64> {
        r.class_measures
            .iter()
            .filter_map(|pi| {
                let (k, &w) = pi
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))?;
                (w > 0.5).then(|| (k as f64 + 0.5) / r.bins as f64)
            })
            .collect()
    };
    let h = 1.0 / opts.ulam_bins as f64;
    let coarse_atoms = heavy(&coarse);
    let fine_atoms = heavy(&fine);
    // keep fine candidates confirmed by a coarse candidate, then merge
    let mut confirmed: Vec<f64> = fine_atoms
        .into_iter()
        .filter(|x| coarse_atoms.iter().any(|c| crate::util::circle_dist(*x, *c) <= h))
        .collect();
    confirmed.sort_by(f64::total_cmp);
    let mut merged: Vec<Vec<f64>> = Vec::new();
    for x in confirmed {
        match merged.last_mut() {
            Some(group) if crate::util::circle_dist(*group.last().unwrap(), x) <= 2.0 * h => {
                group.push(x)
            }
            _ => merged.push(vec![x]),
        }
    }
    if merged.len() > 1 {
        let first = merged[0][0];
        let last = *merged.last().unwrap().last().unwrap();
        if crate::util::circle_dist(first, last) <= 2.0 * h {
            let tail = merged.pop().unwrap();
            merged[0].extend(tail.into_iter().map(|x| x - 1.0));
        }
    }
    Ok(merged
        .into_iter()
        .map(|g| frac(g.iter().sum::<f64>() / g.len() as f64))
        .collect())
}

/// A fixed point of a circle diffeomorphism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub x: f64,
    pub derivative: f64,
    pub attracting: bool,
}

/// Fixed points of `x + a·sin(2πmx)`: sign changes of `sin(2πmx)` on an
/// offset grid, bisection, then a few-ulp search for an exact float fixed
/// point of the map as implemented.
pub fn diffeo_fixed_points(map: &ReturnMap) -> Vec<FixedPoint> {
    let ReturnMap::CircleDiffeo { m, .. } = *map else {
        return Vec::new();
    };
    let w = TAU * m as f64;
    let cells = 64 * m as usize;
    let h = 1.0 / cells as f64;
    let g = |x: f64| (w * x).sin();
    let mut out = Vec::new();
    for i in 0..cells {
        // cells [(i−½)h, (i+½)h) so roots at multiples of h/… never sit on nodes
        let (mut lo, mut hi) = ((i as f64 - 0.5) * h, (i as f64 + 0.5) * h);
        let (glo, ghi) = (g(lo), g(hi));
        if glo == 0.0 || glo.signum() == ghi.signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid).signum() == glo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut x = frac(0.5 * (lo + hi));
        let fixed = |x: f64| frac(map.lift(x)) == x;
        if !fixed(x) {
            let mut up = x;
            let mut down = x;
            for _ in 0..8 {
                up = up.next_up();
                down = down.next_down().max(0.0);
                if fixed(up) {
                    x = up;
                    break;
                }
                if fixed(down) {
                    x = down;
                    break;
                }
            }
        }
        let derivative = map.derivative(x);
        out.push(FixedPoint {
            x,
            derivative,
            attracting: derivative.abs() < 1.0,
        });
    }
    out.sort_by(|p, q| p.x.total_cmp(&q.x));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Ulam,
    Birkhoff,
}

/// An invariant measure with its ergodicity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicMeasure {
    pub measure: RawTransversalMeasure,
    pub ergodic: bool,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct InvariantMeasures {
    pub measures: Vec<ErgodicMeasure>,
    pub method: Method,
    pub warnings: Vec<String>,
    /// Attracting fixed points confirmed by Ulam's method (circle diffeos).
    pub ulam_atoms: Option<Vec<f64>>,
}

pub fn invariant_measures(
    space: &TransversalSpace,
    map: &ReturnMap,
    opts: &UlamOptions,
) -> Result<InvariantMeasures> {
    map.check_space(space)?;
    let exact = |measures| InvariantMeasures {
        measures,
        method: Method::Exact,
        warnings: Vec::new(),
        ulam_atoms: None,
    };
    match map {
        ReturnMap::Rotation(r) => match r.as_rational() {
            None => Ok(exact(vec![ErgodicMeasure {
                measure: RawTransversalMeasure::lebesgue(),
                ergodic: true,
                note: "Lebesgue measure (unique for irrational rotation)".into(),
            }])),
            Some((p, q)) => {
                let res = ulam(map, opts)?;
                let candidates = res.class_measures.len();
                Ok(InvariantMeasures {
                    measures: vec![ErgodicMeasure {
                        measure: RawTransversalMeasure::Histogram {
                            bins: res.stationary,
                            atoms: Vec::new(),
                        },
                        ergodic: false,
                        note: "Ulam stationary measure from a uniform start".into(),
                    }],
                    method: Method::Ulam,
                    warnings: vec![format!(
                        "rational rotation {p}/{q}: invariant measures form a continuum \
                         (every orbit has period {q}); Ulam found {candidates} closed classes; \
                         no complete ergodic decomposition is claimed"
                    )],
                    ulam_atoms: None,
                })
            }
        },
        ReturnMap::Odometer { .. } => Ok(exact(vec![ErgodicMeasure {
            measure: RawTransversalMeasure::haar(space),
            ergodic: true,
            note: "Haar measure on the truncated p-adic integers".into(),
        }])),
        ReturnMap::Permutation { sigma } => {
            let n = sigma.len();
            Ok(exact(
                permutation_cycles(sigma)
                    .into_iter()
                    .map(|cycle| {
                        let mut w = vec![0.0; n];
                        for &i in &cycle {
                            w[i] = 1.0 / cycle.len() as f64;
                        }
                        ErgodicMeasure {
                            measure: RawTransversalMeasure::Weights(w),
                            ergodic: true,
                            note: format!("uniform on cycle {cycle:?}"),
                        }
                    })
                    .collect(),
            ))
        }
        ReturnMap::CircleDiffeo { .. } => {
            let fps = diffeo_fixed_points(map);
            let measures = fps
                .iter()
                .map(|fp| ErgodicMeasure {
                    measure: RawTransversalMeasure::dirac_atoms(vec![(fp.x, 1.0)]),
                    ergodic: true,
                    note: format!(
                        "Dirac at fixed point {} ({}, f' = {})",
                        fp.x,
                        if fp.attracting { "attracting" } else { "repelling" },
                        fp.derivative
                    ),
                })
                .collect();
            let atoms = ulam_atoms(map, opts)?;
            let mut warnings = Vec::new();
            for fp in fps.iter().filter(|f| f.attracting) {
                let h = 2.0 / opts.ulam_bins as f64;
                if !atoms.iter().any(|a| crate::util::circle_dist(*a, fp.x) <= h) {
                    warnings.push(format!("Ulam cross-check missed attracting fixed point {}", fp.x));
                }
            }
            Ok(InvariantMeasures {
                measures,
                method: Method::Exact,
                warnings,
                ulam_atoms: Some(atoms),
            })
        }
    }
}

pub fn permutation_cycles(sigma: &[usize]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; sigma.len()];
    let mut cycles = Vec::new();
    for start in 0..sigma.len() {
        if seen[start] {
            continue;
        }
        let mut cycle = Vec::new();
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            cycle.push(i);
            i = sigma[i];
        }
        cycles.push(cycle);
    }
    cycles
}

#[derive(Debug, Clone)]
pub struct DynamicsReport {
    pub minimal: bool,
    pub uniquely_ergodic: bool,
    pub ergodic_measures: Vec<ErgodicMeasure>,
    pub method: Method,
    pub options: UlamOptions,
    /// Common period of all orbits, when every orbit is periodic.
    pub period: Option<u64>,
    pub notes: Vec<String>,
}

pub fn classify_dynamics(
    space: &TransversalSpace,
    map: &ReturnMap,
    opts: &UlamOptions,
) -> Result<DynamicsReport> {
    let inv = invariant_measures(space, map, opts)?;
    let mut notes = inv.warnings.clone();
    let (minimal, uniquely_ergodic, period) = match map {
        ReturnMap::Rotation(r) => match r.as_rational() {
            None => (true, true, None),
            Some((_, q)) => {
                notes.push(format!("rational rotation: all orbits have period {q}"));
                (false, false, Some(q))
            }
        },
        ReturnMap::Odometer { .. } => {
            // the orbit of 0 under +1 on Z/p^d, enumerated
            let size = space.cell_count().unwrap_or(0);
            let orb = orbit(space, map, State::Idx(0), size);
            let mut hit = vec![false; size];
            for s in &orb {
                if let State::Idx(i) = s {
                    hit[*i] = true;
                }
            }
            let transitive = hit.iter().all(|&h| h);
            notes.push(format!("single orbit of length {size}"));
            (transitive, transitive, Some(size as u64))
        }
        ReturnMap::Permutation { sigma } => {
            let cycles = permutation_cycles(sigma);
            let one = cycles.len() == 1;
            notes.push(format!("{} cycle(s)", cycles.len()));
            let lcm = cycles.iter().fold(1u64, |acc, c| {
                let l = c.len() as u64;
                acc / gcd(acc, l) * l
            });
            (one, one, Some(lcm))
        }
        ReturnMap::CircleDiffeo { a, .. } => {
            if *a == 0.0 {
                notes.push("identity map: every point is fixed".into());
            } else {
                notes.push(format!(
                    "{} fixed points",
                    inv.measures.len()
                ));
            }
            (false, false, None)
        }
    };
    Ok(DynamicsReport {
        minimal,
        uniquely_ergodic,
        ergodic_measures: inv.measures,
        method: inv.method,
        options: *opts,
        period,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transversal::{make_transversal, TransversalDescriptor};

    pub(crate) const GOLDEN: f64 = 0.6180339887498949;

    fn rot(a: f64) -> ReturnMap {
        make_map(&MapDescriptor::Rotation {
            real: Some(a),
            rational: None,
        })
        .unwrap()
    }

    fn rational(p: i64, q: i64) -> ReturnMap {
        make_map(&MapDescriptor::Rotation {
            real: None,
            rational: Some((p, q)),
        })
        .unwrap()
    }

    fn cantor(p: i64, depth: i64) -> TransversalSpace {
        make_transversal(&TransversalDescriptor::Cantor { p, depth }).unwrap()
    }

    fn digits(v: &[u32]) -> TransversalPoint {
        TransversalPoint::Digits(v.to_vec())
    }

    #[test]
    fn rotation_steps() {
        let c = TransversalSpace::Circle;
        let y = apply_return_map(&c, &rot(0.25), &TransversalPoint::Real(0.9), 2).unwrap();
        assert_eq!(y, TransversalPoint::Real(0.4));
    }

    #[test]
    fn odometer_carries() {
        let s = cantor(2, 3);
        let od = ReturnMap::Odometer { p: 2 };
        assert_eq!(apply_return_map(&s, &od, &digits(&[1, 1, 0]), 1).unwrap(), digits(&[0, 0, 1]));
        assert_eq!(apply_return_map(&s, &od, &digits(&[1, 1, 1]), 1).unwrap(), digits(&[0, 0, 0]));
        assert_eq!(apply_return_map(&s, &od, &digits(&[0, 0, 0]), -1).unwrap(), digits(&[1, 1, 1]));
    }

    #[test]
    fn map_validation() {
        assert!(make_map(&MapDescriptor::CircleDiffeo { a: 0.2, m: 1 }).is_err());
        assert!(make_map(&MapDescriptor::Permutation { sigma: vec![0, 0] }).is_err());
        assert!(make_map(&MapDescriptor::Odometer { p: 1 }).is_err());
        assert!(rot(0.3).check_space(&cantor(2, 2)).is_err());
        assert!(ReturnMap::Odometer { p: 3 }.check_space(&cantor(2, 2)).is_err());
    }

    #[test]
    fn irrationality_test() {
        assert_eq!(terminating_fraction(0.5), Some((1, 2)));
        assert_eq!(terminating_fraction(0.375), Some((3, 8)));
        assert_eq!(terminating_fraction(GOLDEN), None);
        assert_eq!(terminating_fraction(std::f64::consts::SQRT_2 - 1.0), None);
        assert_eq!(rational(3, 6).descriptor(), MapDescriptor::Rotation { real: None, rational: Some((1, 2)) });
    }

    #[test]
    fn golden_birkhoff_average_is_small() {
        let c = TransversalSpace::Circle;
        let obs = Observable::Trig(TrigPoly::new(0.0, vec![1.0], vec![]));
        let n = 100_000;
        let v = birkhoff_average(&c, &rot(GOLDEN), &obs, &TransversalPoint::Real(0.0), n).unwrap();
        // |Σ e^{2πinα}| = |sin(πNα)/sin(πα)|
        let bound = ((std::f64::consts::PI * n as f64 * GOLDEN).sin()
            / (std::f64::consts::PI * GOLDEN).sin())
        .abs()
            / n as f64;
        assert!(v.abs() <= bound + 1e-12);
        assert!(v.abs() <= 2e-5);
    }

    #[test]
    fn finite_and_odometer_averages() {
        let f = TransversalSpace::Finite {
            points: vec![0.2, 0.7],
        };
        let swap = ReturnMap::Permutation { sigma: vec![1, 0] };
        let v = birkhoff_average(&f, &swap, &Observable::Indicator(1), &TransversalPoint::Real(0.2), 10)
            .unwrap();
        assert_eq!(v, 0.5);
        let s = cantor(2, 3);
        for start in 0..8 {
            let v = birkhoff_average(
                &s,
                &ReturnMap::Odometer { p: 2 },
                &Observable::Cylinder(vec![0]),
                &s.point_at(start),
                8,
            )
            .unwrap();
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn invariant_measures_built_ins() {
        let s = cantor(2, 4);
        let inv = invariant_measures(&s, &ReturnMap::Odometer { p: 2 }, &UlamOptions::default()).unwrap();
        assert_eq!(inv.measures.len(), 1);
        assert_eq!(inv.measures[0].measure, RawTransversalMeasure::Cylinders(vec![1.0 / 16.0; 16]));

        let f = TransversalSpace::Finite {
            points: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        };
        let perm = ReturnMap::Permutation {
            sigma: vec![1, 2, 0, 4, 3],
        };
        let inv = invariant_measures(&f, &perm, &UlamOptions::default()).unwrap();
        assert_eq!(inv.measures.len(), 2);
        assert!(inv.measures.iter().all(|m| m.ergodic));
    }

    #[test]
    fn diffeo_fixed_points_and_atoms() {
        let map = ReturnMap::CircleDiffeo { a: 0.1, m: 1 };
        let fps = diffeo_fixed_points(&map);
        assert_eq!(fps.len(), 2);
        assert_eq!(fps[0].x, 0.0);
        assert_eq!(fps[1].x, 0.5);
        assert!(!fps[0].attracting && fps[1].attracting);
        assert!((fps[0].derivative - (1.0 + 0.2 * std::f64::consts::PI)).abs() < 1e-12);
        assert!((fps[1].derivative - (1.0 - 0.2 * std::f64::consts::PI)).abs() < 1e-12);

        let inv = invariant_measures(&TransversalSpace::Circle, &map, &UlamOptions::default()).unwrap();
        assert_eq!(inv.measures.len(), 2);
        assert!(inv.warnings.is_empty(), "{:?}", inv.warnings);
        let atoms = inv.ulam_atoms.unwrap();
        assert_eq!(atoms.len(), 1);
        assert!((atoms[0] - 0.5).abs() < 2.0 / 512.0);
    }

    #[test]
    fn diffeo_with_higher_frequency() {
        let map = ReturnMap::CircleDiffeo { a: 0.05, m: 2 };
        let fps = diffeo_fixed_points(&map);
        let xs: Vec<f64> = fps.iter().map(|f| f.x).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75]);
        let attracting: Vec<f64> = fps.iter().filter(|f| f.attracting).map(|f| f.x).collect();
        assert_eq!(attracting, vec![0.25, 0.75]);
        let atoms = ulam_atoms(&map, &UlamOptions::default()).unwrap();
        assert_eq!(atoms.len(), 2);
    }

    #[test]
    fn ulam_golden_is_uniform() {
        let res = ulam(&rot(GOLDEN), &UlamOptions::default()).unwrap();
        let dev = res
            .stationary
            .iter()
            .map(|v| (v * 512.0 - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 1e-6, "sup deviation {dev}");
        assert!(res.max_row_sum_error <= 1e-12);
        assert!((res.leading_eigenvalue - 1.0).abs() <= 1e-9);
        assert_eq!(res.class_measures.len(), 1);
        let tv = RawTransversalMeasure::Histogram {
            bins: res.stationary.clone(),
            atoms: vec![],
        }
        .tv_distance(&RawTransversalMeasure::lebesgue(), &TransversalSpace::Circle, 512);
        assert!(tv <= 1e-4);
    }

    #[test]
    fn ulam_rational_rotation_has_many_classes() {
        let res = ulam(&rational(1, 2), &UlamOptions::default()).unwrap();
        assert_eq!(res.class_measures.len(), 256);
        let inv = invariant_measures(&TransversalSpace::Circle, &rational(1, 2), &UlamOptions::default())
            .unwrap();
        assert_eq!(inv.method, Method::Ulam);
        assert!(!inv.measures[0].ergodic);
        assert!(inv.warnings[0].contains("continuum"));
    }

    #[test]
    fn classification_examples() {
        let o = UlamOptions::default();
        let r = classify_dynamics(&TransversalSpace::Circle, &rational(1, 2), &o).unwrap();
        assert!(!r.minimal && !r.uniquely_ergodic);
        assert_eq!(r.period, Some(2));
        // a float 0.5 is a terminating expansion, hence rational
        let r = classify_dynamics(&TransversalSpace::Circle, &rot(0.5), &o).unwrap();
        assert!(!r.minimal);

        let s = cantor(3, 5);
        let r = classify_dynamics(&s, &ReturnMap::Odometer { p: 3 }, &o).unwrap();
        // brute force: the +1 orbit of 0 covers all 3^5 residues
        let mut seen = std::collections::HashSet::new();
        let mut pt = s.point_at(0);
        for _ in 0..243 {
            seen.insert(s.index_of(&pt).unwrap());
            pt = apply_return_map(&s, &ReturnMap::Odometer { p: 3 }, &pt, 1).unwrap();
        }
        assert_eq!(seen.len(), 243);
        assert!(r.minimal && r.uniquely_ergodic);

        let r = classify_dynamics(&TransversalSpace::Circle, &ReturnMap::CircleDiffeo { a: 0.1, m: 1 }, &o)
            .unwrap();
        assert!(!r.minimal);
        assert_eq!(r.ergodic_measures.len(), 2);

        let f = TransversalSpace::Finite { points: vec![0.1, 0.6] };
        let r = classify_dynamics(&f, &ReturnMap::Permutation { sigma: vec![1, 0] }, &o).unwrap();
        assert!(r.minimal && r.uniquely_ergodic);
        let r = classify_dynamics(&f, &ReturnMap::Permutation { sigma: vec![0, 1] }, &o).unwrap();
        assert!(!r.minimal && !r.uniquely_ergodic);
    }

    #[test]
    fn deviation_examples() {
        let c = TransversalSpace::Circle;
        let obs = vec![
            (Observable::Trig(TrigPoly::new(0.0, vec![1.0], vec![])), 0.0),
            (Observable::Trig(TrigPoly::new(0.0, vec![], vec![0.0, 1.0])), 0.0),
        ];
        let pts: Vec<_> = (0..16).map(|i| TransversalPoint::Real(i as f64 / 16.0)).collect();
        let d = unique_ergodicity_deviation(&c, &rot(GOLDEN), &obs, &pts, 100_000).unwrap();
        assert!(d <= 5e-5, "{d}");

        let map = ReturnMap::CircleDiffeo { a: 0.1, m: 1 };
        let obs = vec![(Observable::Trig(TrigPoly::new(0.0, vec![1.0], vec![])), -1.0)];
        let pts = vec![TransversalPoint::Real(0.0), TransversalPoint::Real(0.5), TransversalPoint::Real(0.3)];
        let d = unique_ergodicity_deviation(&c, &map, &obs, &pts, 10_000).unwrap();
        assert!(d >= 0.5);

        let f = TransversalSpace::Finite { points: vec![0.1, 0.6] };
        let id = ReturnMap::Permutation { sigma: vec![0, 1] };
        let d = unique_ergodicity_deviation(
            &f,
            &id,
            &[(Observable::Indicator(0), 0.5)],
            &[TransversalPoint::Real(0.1), TransversalPoint::Real(0.6)],
            10,
        )
        .unwrap();
        assert_eq!(d, 0.5);
    }
}
