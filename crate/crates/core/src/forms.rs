//! Differential forms on flat tori with trigonometric-polynomial
//! coefficients, and leafwise forms on suspensions.
//!
//! A torus term is `b · m · τ^p · trig(2π k·θ) dθ_I` with `τ = 2π`.
//! Coefficients are kept as formal integer combinations `Σ m_b · b` of
//! float bases `b > 0`: the exterior derivative only multiplies the integer
//! parts, so `d∘d = 0`, Leibniz and Stokes cancel exactly.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::CompositeGauss;
use crate::smeasure::TransversalMeasureInv;
use crate::solenoid::SuspensionSolenoid;
use crate::transversal::{RawTransversalMeasure, TransversalPoint, TransversalSpace};
use crate::util::{frac, ksum, KahanSum};

pub const DEFAULT_FREQUENCY_CAP: i64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Cos,
    Sin,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Key {
    k: Vec<i64>,
    /// Sorted 0-based indices.
    idx: Vec<usize>,
    phase: Phase,
    tau: u32,
}

/// Formal combination `Σ mult · base` with positive float bases (by bits).
type Coeff = BTreeMap<u64, i64>;

#[derive(Clone, PartialEq)]
pub struct TorusForm {
    n: usize,
    degree: usize,
    cap: i64,
    terms: BTreeMap<Key, Coeff>,
}

impl fmt::Debug for TorusForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusForm")
            .field("n", &self.n)
            .field("degree", &self.degree)
            .field("terms", &self.terms())
            .finish()
    }
}

/// A term in numeric form: `c · trig(2π k·θ) dθ_I` (I 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub k: Vec<i64>,
    pub idx: Vec<usize>,
    pub phase: Phase,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDescriptor {
    pub k: Vec<i64>,
    /// 1-based indices.
    #[serde(rename = "I")]
    pub idx: Vec<usize>,
    pub phase: Phase,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FormDescriptor {
    Basis { dtheta: usize },
    Terms { degree: usize, terms: Vec<TermDescriptor> },
}

/// Sign of the permutation sorting `idx`, or 0 on a repeated index.
fn sort_sign(idx: &mut [usize]) -> i64 {
    let mut sign = 1;
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && idx[j - 1] > idx[j] {
            idx.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    if idx.windows(2).any(|w| w[0] == w[1]) {
        0
    } else {
        sign
    }
}

/// Makes the first nonzero entry of k positive; sin flips sign.
fn canonical(mut k: Vec<i64>, phase: Phase) -> (Vec<i64>, i64) {
    match k.iter().find(|&&v| v != 0) {
        Some(&v) if v < 0 => {
            k.iter_mut().for_each(|v| *v = -*v);
            (k, if phase == Phase::Sin { -1 } else { 1 })
        }
        Some(_) => (k, 1),
        None => (k, if phase == Phase::Sin { 0 } else { 1 }),
    }
}

impl TorusForm {
    pub fn zero(n: usize, degree: usize) -> Self {
        Self {
            n,
            degree,
            cap: DEFAULT_FREQUENCY_CAP,
            terms: BTreeMap::new(),
        }
    }

    pub fn with_cap(mut self, cap: i64) -> Self {
        self.cap = cap;
        self
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// `c · trig(2π k·θ) dθ_I`; `idx` is 0-based and may be unsorted.
    pub fn term(n: usize, k: &[i64], idx: &[usize], phase: Phase, c: f64) -> Result<Self> {
        let mut f = Self::zero(n, idx.len());
        f.add_term(k, idx, phase, c)?;
        Ok(f)
    }

    /// The constant 0-form `c`.
    pub fn constant(n: usize, c: f64) -> Self {
        Self::term(n, &vec![0; n], &[], Phase::Cos, c).expect("valid constant")
    }

    /// `dθ_i`, 0-based.
    pub fn dtheta(n: usize, i: usize) -> Result<Self> {
        Self::term(n, &vec![0; n], &[i], Phase::Cos, 1.0)
    }

    pub fn add_term(&mut self, k: &[i64], idx: &[usize], phase: Phase, c: f64) -> Result<()> {
        if k.len() != self.n {
            return Err(Error::DimensionMismatch(k.len(), self.n));
        }
        if idx.len() != self.degree {
            return Err(Error::DegreeMismatch {
                expected: self.degree,
                got: idx.len(),
            });
        }
        if let Some(&i) = idx.iter().find(|&&i| i >= self.n) {
            return Err(Error::DimensionMismatch(i + 1, self.n));
        }
        if let Some(&v) = k.iter().find(|v| v.abs() > self.cap) {
            return Err(Error::FrequencyCap(v, self.cap));
        }
        if !c.is_finite() {
            return Err(invalid("form", "non-finite coefficient"));
        }
        let mut idx = idx.to_vec();
        let s = sort_sign(&mut idx);
        let (k, s2) = canonical(k.to_vec(), phase);
        let sign = s * s2;
        if sign == 0 || c == 0.0 {
            return Ok(());
        }
        let mult = if c < 0.0 { -sign } else { sign };
        let key = Key { k, idx, phase, tau: 0 };
        self.insert(key, c.abs().to_bits(), mult);
        Ok(())
    }

    fn insert(&mut self, key: Key, base: u64, mult: i64) {
        if mult == 0 {
            return;
        }
        let coeff = self.terms.entry(key.clone()).or_default();
        let e = coeff.entry(base).or_insert(0);
        *e += mult;
        if *e == 0 {
            coeff.remove(&base);
        }
        if coeff.is_empty() {
            self.terms.remove(&key);
        }
    }

    pub fn from_descriptor(desc: &FormDescriptor, n: usize) -> Result<Self> {
        match desc {
            &FormDescriptor::Basis { dtheta } => {
                if dtheta == 0 || dtheta > n {
                    return Err(invalid("form.dtheta", format!("index {dtheta} not in 1..={n}")));
                }
                Self::dtheta(n, dtheta - 1)
            }
            FormDescriptor::Terms { degree, terms } => {
                if *degree > n {
                    return Err(Error::DegreeOverflow(*degree, n));
                }
                let mut f = Self::zero(n, *degree);
                for t in terms {
                    if t.idx.iter().any(|&i| i == 0) {
                        return Err(invalid("form.terms.I", "indices are 1-based"));
                    }
                    let idx: Vec<usize> = t.idx.iter().map(|i| i - 1).collect();
                    f.add_term(&t.k, &idx, t.phase, t.c)?;
                }
                Ok(f)
            }
        }
    }

    /// Numeric terms with `τ` powers and integer multiples folded in.
    pub fn terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .map(|(key, coeff)| Term {
                k: key.k.clone(),
                idx: key.idx.clone(),
                phase: key.phase,
                c: coeff_value(coeff) * TAU.powi(key.tau as i32),
            })
            .collect()
    }

    pub fn descriptor(&self) -> FormDescriptor {
        FormDescriptor::Terms {
            degree: self.degree,
            terms: self
                .terms()
                .into_iter()
                .map(|t| TermDescriptor {
                    k: t.k,
                    idx: t.idx.iter().map(|i| i + 1).collect(),
                    phase: t.phase,
                    c: t.c,
                })
                .collect(),
        }
    }

    pub fn max_frequency(&self) -> i64 {
        self.terms
            .keys()
            .flat_map(|key| key.k.iter().map(|v| v.abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (key, coeff) in &other.terms {
            for (&b, &m) in coeff {
                out.insert(key.clone(), b, m);
            }
        }
        Ok(out)
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for coeff in out.terms.values_mut() {
            coeff.values_mut().for_each(|m| *m = -*m);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    /// Multiplication by a float scalar. Exact structure is kept; the bases
    /// are rescaled.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = Self::zero(self.n, self.degree).with_cap(self.cap);
        if c == 0.0 {
            return out;
        }
        let s = if c < 0.0 { -1 } else { 1 };
        for (key, coeff) in &self.terms {
            for (&b, &m) in coeff {
                out.insert(key.clone(), (f64::from_bits(b) * c.abs()).to_bits(), m * s);
            }
        }
        out
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch(self.n, other.n));
        }
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch {
                expected: self.degree,
                got: other.degree,
            });
        }
        Ok(())
    }

    /// Exterior derivative. `d(cos 2πk·θ) = −Σ_j 2π k_j sin(2πk·θ) dθ_j` and
    /// `d(sin 2πk·θ) = Σ_j 2π k_j cos(2πk·θ) dθ_j`.
    pub fn d(&self) -> Result<Self> {
        if self.degree >= self.n {
            return Err(Error::DegreeOverflow(self.degree + 1, self.n));
        }
        let mut out = Self::zero(self.n, self.degree + 1).with_cap(self.cap);
        for (key, coeff) in &self.terms {
            for (j, &kj) in key.k.iter().enumerate() {
                if kj == 0 {
                    continue;
                }
                let mut idx = Vec::with_capacity(key.idx.len() + 1);
                idx.push(j);
                idx.extend_from_slice(&key.idx);
                let s = sort_sign(&mut idx);
                if s == 0 {
                    continue;
                }
                let (phase, sg) = match key.phase {
                    Phase::Cos => (Phase::Sin, -1),
                    Phase::Sin => (Phase::Cos, 1),
                };
                let new_key = Key {
                    k: key.k.clone(),
                    idx,
                    phase,
                    tau: key.tau + 1,
                };
                for (&b, &m) in coeff {
                    out.insert(new_key.clone(), b, m * kj * s * sg);
                }
            }
        }
        Ok(out)
    }

    /// Wedge product with product-to-sum expansion of the coefficients.
    pub fn wedge(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch(self.n, other.n));
        }
        let deg = self.degree + other.degree;
        if deg > self.n {
            return Err(Error::DegreeOverflow(deg, self.n));
        }
        let cap = self.cap.min(other.cap);
        let mut out = Self::zero(self.n, deg).with_cap(cap);
        for (k1, c1) in &self.terms {
            for (k2, c2) in &other.terms {
                let mut idx = k1.idx.clone();
                idx.extend_from_slice(&k2.idx);
                let s = sort_sign(&mut idx);
                if s == 0 {
                    continue;
                }
                let diff: Vec<i64> = k1.k.iter().zip(&k2.k).map(|(a, b)| a - b).collect();
                let sum: Vec<i64> = k1.k.iter().zip(&k2.k).map(|(a, b)| a + b).collect();
                // trig(a)·trig(b) = ½[± trig(a−b) ± trig(a+b)]
                let parts: [(Vec<i64>, Phase, i64); 2] = match (k1.phase, k2.phase) {
                    (Phase::Cos, Phase::Cos) => [(diff, Phase::Cos, 1), (sum, Phase::Cos, 1)],
                    (Phase::Sin, Phase::Sin) => [(diff, Phase::Cos, 1), (sum, Phase::Cos, -1)],
                    (Phase::Sin, Phase::Cos) => [(diff, Phase::Sin, 1), (sum, Phase::Sin, 1)],
                    (Phase::Cos, Phase::Sin) => [(diff, Phase::Sin, -1), (sum, Phase::Sin, 1)],
                };
                for (k, phase, sg) in parts {
                    if let Some(&v) = k.iter().find(|v| v.abs() > cap) {
                        return Err(Error::FrequencyCap(v, cap));
                    }
                    let (k, s2) = canonical(k, phase);
                    let sign = s * sg * s2;
                    if sign == 0 {
                        continue;
                    }
                    let key = Key {
                        k,
                        idx: idx.clone(),
                        phase,
                        tau: k1.tau + k2.tau,
                    };
                    for (&b1, &m1) in c1 {
                        for (&b2, &m2) in c2 {
                            let b = 0.5 * f64::from_bits(b1) * f64::from_bits(b2);
                            if b != 0.0 {
                                out.insert(key.clone(), b.to_bits(), m1 * m2 * sign);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Components at θ as `(I, value)` pairs.
    pub fn eval(&self, theta: &[f64]) -> BTreeMap<Vec<usize>, f64> {
        let mut acc: BTreeMap<Vec<usize>, KahanSum> = BTreeMap::new();
        for (key, coeff) in &self.terms {
            let phase = frac(crate::util::ksum(key.k.iter().zip(theta).map(|(&k, &x)| k as f64 * x)));
            let trig = match key.phase {
                Phase::Cos => (TAU * phase).cos(),
                Phase::Sin => (TAU * phase).sin(),
            };
            acc.entry(key.idx.clone())
                .or_default()
                .add(coeff_value(coeff) * TAU.powi(key.tau as i32) * trig);
        }
        acc.into_iter().map(|(k, v)| (k, v.value())).collect()
    }

    /// Components `a_i(θ)` of a 1-form.
    pub fn eval_1form(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (idx, v) in self.eval(theta) {
            if let [i] = idx[..] {
                out[i] = v;
            }
        }
        out
    }

    /// Value of a 0-form.
    pub fn eval_function(&self, theta: &[f64]) -> f64 {
        self.eval(theta).get(&Vec::new()).copied().unwrap_or(0.0)
    }

    /// Interior product with a constant vector field.
    pub fn interior(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch(v.len(), self.n));
        }
        if self.degree == 0 {
            return Err(Error::DegreeMismatch { expected: 1, got: 0 });
        }
        let mut out = Self::zero(self.n, self.degree - 1).with_cap(self.cap);
        for (key, coeff) in &self.terms {
            for (pos, &i) in key.idx.iter().enumerate() {
                if v[i] == 0.0 {
                    continue;
                }
                let mut idx = key.idx.clone();
                idx.remove(pos);
                let s = if pos % 2 == 0 { 1.0 } else { -1.0 };
                for (&b, &m) in coeff {
                    let c = s * v[i] * f64::from_bits(b) * m as f64 * TAU.powi(key.tau as i32);
                    out.add_term(&key.k, &idx, key.phase, c)?;
                }
            }
        }
        Ok(out)
    }
}

/// Flattened form for repeated evaluation.
#[derive(Debug, Clone)]
pub struct CompiledForm {
    pub n: usize,
    /// Component index sets, sorted.
    pub components: Vec<Vec<usize>>,
    terms: Vec<(Vec<f64>, usize, Phase, f64)>,
}

impl CompiledForm {
    /// Writes the component values at θ into `out` (length = components).
    pub fn eval_into(&self, theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, comp, phase, c) in &self.terms {
            let mut s = 0.0;
            for (a, b) in k.iter().zip(theta) {
                s += a * b;
            }
            let arg = TAU * frac(s);
            out[*comp] += c * match phase {
                Phase::Cos => arg.cos(),
                Phase::Sin => arg.sin(),
            };
        }
    }

    /// `ω(θ)(w)` for a compiled 1-form.
    pub fn apply_1form(&self, theta: &[f64], w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (k, comp, phase, c) in &self.terms {
            let mut s = 0.0;
            for (a, b) in k.iter().zip(theta) {
                s += a * b;
            }
            let arg = TAU * frac(s);
            let trig = match phase {
                Phase::Cos => arg.cos(),
                Phase::Sin => arg.sin(),
            };
            acc += c * trig * w[self.components[*comp][0]];
        }
        acc
    }
}

impl TorusForm {
    pub fn compile(&self) -> CompiledForm {
        let mut components: Vec<Vec<usize>> = Vec::new();
        let mut terms = Vec::new();
        for t in self.terms() {
            let comp = match components.iter().position(|c| *c == t.idx) {
                Some(i) => i,
                None => {
                    components.push(t.idx.clone());
                    components.len() - 1
                }
            };
            terms.push((t.k.iter().map(|&v| v as f64).collect(), comp, t.phase, t.c));
        }
        CompiledForm {
            n: self.n,
            components,
            terms,
        }
    }
}

fn coeff_value(c: &Coeff) -> f64 {
    crate::util::ksum(c.iter().map(|(&b, &m)| f64::from_bits(b) * m as f64))
}

/// `∫_{Tⁿ} ω` for a top-degree form: the mean of the constant cosine term.
pub fn integrate_torus(form: &TorusForm) -> Result<f64> {
    if form.degree != form.n {
        return Err(Error::DegreeMismatch {
            expected: form.n,
            got: form.degree,
        });
    }
    Ok(crate::util::ksum(
        form.terms()
            .into_iter()
            .filter(|t| t.k.iter().all(|&v| v == 0) && t.phase == Phase::Cos)
            .map(|t| t.c),
    ))
}

type LeafFn = Arc<dyn Fn(&TransversalPoint, f64) -> f64 + Send + Sync>;

/// A leafwise form `a(x, t)` (degree 0) or `a(x, t) dt` (degree 1).
#[derive(Clone)]
pub struct LeafwiseForm {
    pub degree: usize,
    coeff: LeafFn,
}

impl fmt::Debug for LeafwiseForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LeafwiseForm").field("degree", &self.degree).finish_non_exhaustive()
    }
}

pub const GLUING_TOL: f64 = 1e-9;

impl LeafwiseForm {
    pub fn new<F>(degree: usize, f: F) -> Result<Self>
    where
        F: Fn(&TransversalPoint, f64) -> f64 + Send + Sync + 'static,
    {
        if degree > 1 {
            return Err(Error::DegreeOverflow(degree, 1));
        }
        Ok(Self {
            degree,
            coeff: Arc::new(f),
        })
    }

    /// `p(t)` or `p(t) dt`, the same on every leaf.
    pub fn from_t_trig(degree: usize, p: crate::trig::TrigPoly) -> Result<Self> {
        Self::new(degree, move |_, t| p.eval(t))
    }

    pub fn coeff(&self, x: &TransversalPoint, t: f64) -> f64 {
        (self.coeff)(x, t)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let f = self.coeff.clone();
        Self {
            degree: self.degree,
            coeff: Arc::new(move |x, t| c * f(x, t)),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch {
                expected: self.degree,
                got: other.degree,
            });
        }
        let (f, g) = (self.coeff.clone(), other.coeff.clone());
        Ok(Self {
            degree: self.degree,
            coeff: Arc::new(move |x, t| f(x, t) + g(x, t)),
        })
    }

    /// `max |a(x, 1) − a(f(x), 0)|` over the given points.
    pub fn gluing_residual(&self, sol: &SuspensionSolenoid, points: &[TransversalPoint]) -> Result<f64> {
        let mut worst = 0.0f64;
        for x in points {
            let fx = sol.holonomy_apply(crate::solenoid::HolonomyGerm { steps: 1 }, x)?;
            worst = worst.max((self.coeff(x, 1.0) - self.coeff(&fx, 0.0)).abs());
        }
        Ok(worst)
    }

    pub fn check_gluing(&self, sol: &SuspensionSolenoid) -> Result<f64> {
        let r = self.gluing_residual(sol, &gluing_samples(sol))?;
        if r > GLUING_TOL {
            return Err(Error::Gluing(r));
        }
        Ok(r)
    }
}

/// Points where continuity across `t = 1 ∼ t = 0` is tested.
pub fn gluing_samples(sol: &SuspensionSolenoid) -> Vec<TransversalPoint> {
    match &sol.space {
        TransversalSpace::Circle => (0..64).map(|i| TransversalPoint::Real((i as f64 + 0.37) / 64.0)).collect(),
        space => (0..space.cell_count().unwrap_or(0).min(4096)).map(|i| space.point_at(i)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeafwiseQuadrature {
    /// Gauss–Legendre nodes per panel of the unit leaf segment.
    pub order: usize,
    pub panels: usize,
    /// Bins for circle densities, each integrated with `bin_order` nodes.
    pub circle_bins: usize,
    pub bin_order: usize,
}

impl Default for LeafwiseQuadrature {
    fn default() -> Self {
        Self {
            order: 16,
            panels: 8,
            circle_bins: 1024,
            bin_order: 4,
        }
    }
}

/// `∫_X (∫₀¹ a(x, t) dt) dμ(x)`.
pub fn integrate_leafwise(
    sol: &SuspensionSolenoid,
    m: &TransversalMeasureInv,
    phi: &LeafwiseForm,
    q: &LeafwiseQuadrature,
) -> Result<f64> {
    if phi.degree != 1 {
        return Err(Error::DegreeMismatch { expected: 1, got: phi.degree });
    }
    phi.check_gluing(sol)?;
    let rule = CompositeGauss::new(q.order, q.panels);
    let leaf = |x: &TransversalPoint| rule.integrate(0.0, 1.0, |t| phi.coeff(x, t));
    integrate_transversal(&sol.space, &m.raw, q, leaf)
}

/// Quadrature nodes `(x, weight)` for integrating against `m`.
pub fn transversal_nodes(
    space: &TransversalSpace,
    m: &RawTransversalMeasure,
    q: &LeafwiseQuadrature,
) -> Result<Vec<(TransversalPoint, f64)>> {
    let mut out = Vec::new();
    match (space, m) {
        (_, RawTransversalMeasure::Weights(w)) | (_, RawTransversalMeasure::Cylinders(w)) => {
            if w.len() != space.cell_count().unwrap_or(0) {
                return Err(Error::Incompatible("measure kind does not match transversal".into()));
            }
            for (i, &wi) in w.iter().enumerate() {
                if wi != 0.0 {
                    out.push((space.point_at(i), wi));
                }
            }
        }
        (TransversalSpace::Circle, RawTransversalMeasure::Density { density, atoms }) => {
            if density.max_frequency() > 0 || density.constant != 0.0 {
                let rule = CompositeGauss::new(q.bin_order, q.circle_bins);
                for (x, w) in rule.points(0.0, 1.0) {
                    out.push((TransversalPoint::Real(x), w * density.eval(x)));
                }
            }
            out.extend(atoms.iter().map(|&(x, w)| (TransversalPoint::Real(x), w)));
        }
        (TransversalSpace::Circle, RawTransversalMeasure::Histogram { bins, atoms }) => {
            let n = bins.len();
            let rule = CompositeGauss::new(q.bin_order, 1);
            for (i, &b) in bins.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let (lo, hi) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
                // bin mass b spread uniformly over a bin of width 1/n
                for (x, w) in rule.points(lo, hi) {
                    out.push((TransversalPoint::Real(x), b * n as f64 * w));
                }
            }
            out.extend(atoms.iter().map(|&(x, w)| (TransversalPoint::Real(x), w)));
        }
        _ => return Err(Error::Incompatible("measure kind does not match transversal".into())),
    }
    Ok(out)
}

/// `∫ h dμ` for a function `h` on the transversal.
pub fn integrate_transversal<H: Fn(&TransversalPoint) -> f64>(
    space: &TransversalSpace,
    m: &RawTransversalMeasure,
    q: &LeafwiseQuadrature,
    h: H,
) -> Result<f64> {
    let nodes = transversal_nodes(space, m, q)?;
    Ok(ksum(nodes.iter().map(|(x, w)| w * h(x))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ReturnMap, RotationNumber};
    use crate::solenoid::suspend;
    use crate::trig::TrigPoly;

    fn f1(n: usize, k: &[i64], idx: &[usize], phase: Phase, c: f64) -> TorusForm {
        TorusForm::term(n, k, idx, phase, c).unwrap()
    }

    #[test]
    fn d_examples() {
        let s = f1(2, &[1, 0], &[], Phase::Sin, 1.0);
        let ds = s.d().unwrap();
        assert_eq!(ds.terms(), vec![Term { k: vec![1, 0], idx: vec![0], phase: Phase::Cos, c: TAU }]);
        assert!(TorusForm::dtheta(2, 0).unwrap().d().unwrap().is_zero());
        assert!(matches!(
            TorusForm::dtheta(1, 0).unwrap().d(),
            Err(Error::DegreeOverflow(2, 1))
        ));
    }

    #[test]
    fn wedge_examples() {
        let a = TorusForm::dtheta(2, 0).unwrap();
        let b = TorusForm::dtheta(2, 1).unwrap();
        assert_eq!(a.wedge(&b).unwrap(), b.wedge(&a).unwrap().neg());
        let c = f1(2, &[1, 0], &[0], Phase::Cos, 1.0);
        assert!(c.wedge(&c).unwrap().is_zero());
        let f = f1(2, &[1, 0], &[], Phase::Cos, 1.0);
        let ff = f.wedge(&f).unwrap();
        let mut want = TorusForm::constant(2, 0.5);
        want.add_term(&[2, 0], &[], Phase::Cos, 0.5).unwrap();
        assert_eq!(ff, want);
        let three = TorusForm::dtheta(3, 0).unwrap();
        assert!(matches!(
            a.wedge(&b).unwrap().wedge(&TorusForm::dtheta(2, 0).unwrap()),
            Err(Error::DegreeOverflow(3, 2))
        ));
        assert!(three.wedge(&a).is_err());
    }

    #[test]
    fn integrate_examples() {
        let vol = TorusForm::dtheta(2, 0).unwrap().wedge(&TorusForm::dtheta(2, 1).unwrap()).unwrap();
        assert_eq!(integrate_torus(&vol).unwrap(), 1.0);
        let c = f1(2, &[1, 0], &[0, 1], Phase::Cos, 1.0);
        assert_eq!(integrate_torus(&c).unwrap(), 0.0);
        let mut g = f1(2, &[0, 0], &[0, 1], Phase::Cos, 1.0);
        g.add_term(&[0, 1], &[0, 1], Phase::Cos, 1.0).unwrap();
        assert_eq!(integrate_torus(&g).unwrap(), 1.0);
        assert!(integrate_torus(&TorusForm::dtheta(2, 0).unwrap()).is_err());
    }

    #[test]
    fn eval_matches_terms() {
        let mut f = TorusForm::zero(2, 1);
        f.add_term(&[1, -2], &[1], Phase::Sin, 0.75).unwrap();
        f.add_term(&[0, 0], &[0], Phase::Cos, 2.0).unwrap();
        let th = [0.3, 0.45];
        let v = f.eval_1form(&th);
        assert_eq!(v[0], 2.0);
        assert!((v[1] - 0.75 * (TAU * (0.3 - 0.9)).sin()).abs() < 1e-15);
    }

    #[test]
    fn descriptor_round_trip() {
        let json = r#"{"degree":1,"terms":[{"k":[1,0],"I":[1],"phase":"cos","c":1.0},{"k":[0,2],"I":[2],"phase":"sin","c":-0.5}]}"#;
        let desc: FormDescriptor = serde_json::from_str(json).unwrap();
        let f = TorusForm::from_descriptor(&desc, 2).unwrap();
        assert_eq!(TorusForm::from_descriptor(&f.descriptor(), 2).unwrap(), f);
        let b: FormDescriptor = serde_json::from_str(r#"{"dtheta":2}"#).unwrap();
        assert_eq!(TorusForm::from_descriptor(&b, 3).unwrap(), TorusForm::dtheta(3, 1).unwrap());
        let bad: FormDescriptor = serde_json::from_str(r#"{"degree":1,"terms":[{"k":[65,0],"I":[1],"phase":"cos","c":1.0}]}"#).unwrap();
        assert!(matches!(TorusForm::from_descriptor(&bad, 2), Err(Error::FrequencyCap(65, 64))));
    }

    #[test]
    fn interior_of_volume() {
        let vol = TorusForm::dtheta(2, 0).unwrap().wedge(&TorusForm::dtheta(2, 1).unwrap()).unwrap();
        let i = vol.interior(&[1.0, 0.0]).unwrap();
        assert_eq!(i, TorusForm::dtheta(2, 1).unwrap());
        let i = vol.interior(&[0.0, 1.0]).unwrap();
        assert_eq!(i, TorusForm::dtheta(2, 0).unwrap().neg());
    }

    fn golden() -> SuspensionSolenoid {
        suspend(TransversalSpace::Circle, ReturnMap::Rotation(RotationNumber::Real(0.6180339887498949))).unwrap()
    }

    #[test]
    fn leafwise_examples() {
        let g = golden();
        let q = LeafwiseQuadrature::default();
        let leb = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue(), 1e-9).unwrap();
        let dt = LeafwiseForm::from_t_trig(1, TrigPoly::constant(1.0)).unwrap();
        assert!((integrate_leafwise(&g, &leb, &dt, &q).unwrap() - 1.0).abs() < 1e-13);
        let cos = LeafwiseForm::from_t_trig(1, TrigPoly::new(0.0, vec![1.0], vec![])).unwrap();
        assert!(integrate_leafwise(&g, &leb, &cos, &q).unwrap().abs() < 1e-13);

        let d = suspend(TransversalSpace::Cantor { p: 2, depth: 4 }, ReturnMap::Odometer { p: 2 }).unwrap();
        let haar = TransversalMeasureInv::new(&d, RawTransversalMeasure::haar(&d.space), 1e-9).unwrap();
        assert!(integrate_leafwise(&d, &haar, &cos, &q).unwrap().abs() < 1e-13);

        // leafwise d of the global function G(x + tα), G = sin 2πs + cos 4πs
        let alpha = 0.6180339887498949;
        let dg = LeafwiseForm::new(1, move |x, t| {
            let TransversalPoint::Real(x) = *x else { return 0.0 };
            let s = x + t * alpha;
            alpha * TAU * ((TAU * s).cos() - 2.0 * (2.0 * TAU * s).sin())
        })
        .unwrap();
        assert!(integrate_leafwise(&g, &leb, &dg, &q).unwrap().abs() < 1e-10);
    }

    #[test]
    fn gluing_is_enforced() {
        let g = golden();
        let leb = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue(), 1e-9).unwrap();
        let ramp = LeafwiseForm::new(1, |_, t| t).unwrap();
        assert!(matches!(
            integrate_leafwise(&g, &leb, &ramp, &LeafwiseQuadrature::default()),
            Err(Error::Gluing(_))
        ));
    }
}

#[cfg(test)]
pub(crate) mod props {
    use super::*;
    use proptest::prelude::*;

    /// Random forms with arbitrary float coefficients and frequencies ≤ 8.
    pub(crate) fn arb_form(n: usize, degree: usize) -> impl Strategy<Value = TorusForm> {
        let term = (
            proptest::collection::vec(-8i64..=8, n),
            proptest::sample::subsequence((0..n).collect::<Vec<_>>(), degree),
            prop_oneof![Just(Phase::Cos), Just(Phase::Sin)],
            -10.0f64..10.0,
        );
        proptest::collection::vec(term, 0..5).prop_map(move |ts| {
            let mut f = TorusForm::zero(n, degree);
            for (k, idx, ph, c) in ts {
                f.add_term(&k, &idx, ph, c).unwrap();
            }
            f
        })
    }

    proptest! {
        #[test]
        fn d_squared_is_zero(f in arb_form(3, 1)) {
            prop_assert!(f.d().unwrap().d().unwrap().is_zero());
        }

        #[test]
        fn d_squared_is_zero_on_functions(f in arb_form(4, 0)) {
            prop_assert!(f.d().unwrap().d().unwrap().is_zero());
        }

        #[test]
        fn leibniz(a in arb_form(3, 1), b in arb_form(3, 1)) {
            let lhs = a.wedge(&b).unwrap().d().unwrap();
            let rhs = a.d().unwrap().wedge(&b).unwrap()
                .add(&a.wedge(&b.d().unwrap()).unwrap().neg()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn leibniz_function_times_form(a in arb_form(3, 0), b in arb_form(3, 2)) {
            let lhs = a.wedge(&b).unwrap().d().unwrap();
            let rhs = a.d().unwrap().wedge(&b).unwrap()
                .add(&a.wedge(&b.d().unwrap()).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn stokes_on_torus(eta in arb_form(3, 2)) {
            prop_assert_eq!(integrate_torus(&eta.d().unwrap()).unwrap(), 0.0);
        }

        #[test]
        fn graded_commutativity(a in arb_form(3, 1), b in arb_form(3, 2)) {
            // (−1)^{1·2} = 1
            prop_assert_eq!(a.wedge(&b).unwrap(), b.wedge(&a).unwrap());
        }

        #[test]
        fn eval_is_linear(a in arb_form(2, 1), b in arb_form(2, 1), x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let s = a.add(&b).unwrap().eval_1form(&[x, y]);
            let (va, vb) = (a.eval_1form(&[x, y]), b.eval_1form(&[x, y]));
            for i in 0..2 {
                prop_assert!((s[i] - va[i] - vb[i]).abs() <= 1e-9);
            }
        }

    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn leafwise_integral_is_linear(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, s in 0.1f64..5.0) {
            use crate::dynamics::{ReturnMap, RotationNumber};
            use crate::solenoid::suspend;
            use crate::trig::TrigPoly;
            let g = suspend(TransversalSpace::Circle, ReturnMap::Rotation(RotationNumber::Real(0.3))).unwrap();
            let q = LeafwiseQuadrature::default();
            let m = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue(), 1e-9).unwrap();
            let a = LeafwiseForm::from_t_trig(1, TrigPoly::new(1.0, vec![0.5], vec![])).unwrap();
            let b = LeafwiseForm::from_t_trig(1, TrigPoly::new(-2.0, vec![], vec![1.5])).unwrap();
            let lin = a.scaled(c1).add(&b.scaled(c2)).unwrap();
            let lhs = integrate_leafwise(&g, &m, &lin, &q).unwrap();
            let rhs = c1 * integrate_leafwise(&g, &m, &a, &q).unwrap() + c2 * integrate_leafwise(&g, &m, &b, &q).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
            let scaled = integrate_leafwise(&g, &m.scaled(s), &a, &q).unwrap();
            prop_assert!((scaled - s * integrate_leafwise(&g, &m, &a, &q).unwrap()).abs() <= 1e-12 * s);
        }
    }
}
