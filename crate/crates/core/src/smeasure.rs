//! Measured solenoids: holonomy-invariant transversal measures, daval
//! measures (volume along leaves times a transversal measure), the
//! ε-thickening disintegration and the regular/irregular decomposition.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ReturnMap, RotationNumber};
use crate::error::{invalid, Error, Result};
use crate::solenoid::{LeafPoint, SuspensionSolenoid};
use crate::transversal::{
    digits_of, in_arc, make_measure, MeasureDescriptor, RawTransversalMeasure, TransversalCell,
    TransversalPoint, TransversalSpace,
};
use crate::trig::{TrigPoly, DEFAULT_MAX_FREQUENCY};
use crate::util::{frac, ksum, KahanSum};

pub const DEFAULT_INVARIANCE_TOL: f64 = 1e-9;
/// Finest dyadic level of the circle test cells.
pub const CIRCLE_TEST_LEVEL: u32 = 9;
pub const ESS_INF_GRID: usize = 4096;
pub const ESS_INF_TOL: f64 = 1e-10;
/// Leaf half-widths `2^{-4} … 2^{-8}` used by `disintegrate`.
pub const THICKENING_LEVELS: std::ops::RangeInclusive<i32> = 4..=8;

/// Test cells for the invariance check: points, depth-d cylinders, or all
/// dyadic arcs of levels 1 through `CIRCLE_TEST_LEVEL`.
pub fn invariance_cells(space: &TransversalSpace) -> Vec<TransversalCell> {
    match space {
        TransversalSpace::Circle => (1..=CIRCLE_TEST_LEVEL)
            .flat_map(|l| {
                let n = 1usize << l;
                (0..n).map(move |k| TransversalCell::Interval(k as f64 / n as f64, (k + 1) as f64 / n as f64))
            })
            .collect(),
        &TransversalSpace::Cantor { p, depth } => (0..space.cell_count().unwrap_or(0))
            .map(|i| TransversalCell::Cylinder(digits_of(i, p, depth)))
            .collect(),
        TransversalSpace::Finite { points } => (0..points.len()).map(TransversalCell::Point).collect(),
    }
}

fn without_atoms(m: &RawTransversalMeasure) -> RawTransversalMeasure {
    match m {
        RawTransversalMeasure::Density { density, .. } => RawTransversalMeasure::Density {
            density: density.clone(),
            atoms: Vec::new(),
        },
        RawTransversalMeasure::Histogram { bins, .. } => RawTransversalMeasure::Histogram {
            bins: bins.clone(),
            atoms: Vec::new(),
        },
        other => other.clone(),
    }
}

/// `max_C |m(R⁻¹C) − m(C)|` over `invariance_cells`. Atoms are pushed
/// forward (`R x ∈ C`) rather than pulled back, so fixed and periodic atoms
/// are tested without an inverse.
pub fn invariance_residual(space: &TransversalSpace, map: &ReturnMap, m: &RawTransversalMeasure) -> Result<f64> {
    map.check_space(space)?;
    let mut worst = 0.0f64;
    match (space, m) {
        (TransversalSpace::Circle, RawTransversalMeasure::Density { .. } | RawTransversalMeasure::Histogram { .. }) => {
            let cont = without_atoms(m);
            let pushed: Vec<(f64, f64)> = m
                .atoms()
                .iter()
                .map(|&(x, w)| (frac(map.lift(x)), w))
                .collect();
            for cell in invariance_cells(space) {
                let TransversalCell::Interval(a, b) = cell else { unreachable!() };
                let pre = match map {
                    // exact shift for rational rotations keeps k/q cells aligned
                    ReturnMap::Rotation(RotationNumber::Rational { p, q }) => {
                        let s = *p as f64 / *q as f64;
                        cont.interval_mass(a - s, b - s)
                    }
                    _ => cont.interval_mass(map.lift_inverse(a), map.lift_inverse(b)),
                };
                let atoms_in = ksum(pushed.iter().filter(|(y, _)| in_arc(*y, a, b)).map(|a| a.1));
                let d = (pre + atoms_in - m.interval_mass(a, b)).abs();
                worst = worst.max(d);
            }
        }
        (TransversalSpace::Cantor { .. }, RawTransversalMeasure::Cylinders(w)) => {
            let n = w.len();
            for i in 0..n {
                worst = worst.max((w[(i + n - 1) % n] - w[i]).abs());
            }
        }
        (TransversalSpace::Finite { .. }, RawTransversalMeasure::Weights(w)) => {
            let ReturnMap::Permutation { sigma } = map else { unreachable!() };
            for (i, &s) in sigma.iter().enumerate() {
                // m(R⁻¹{s}) = m({i})
                worst = worst.max((w[i] - w[s]).abs());
            }
        }
        _ => return Err(Error::Incompatible("measure kind does not match transversal".into())),
    }
    Ok(worst)
}

pub fn check_holonomy_invariance(
    space: &TransversalSpace,
    map: &ReturnMap,
    m: &RawTransversalMeasure,
    tol: f64,
) -> Result<(bool, f64)> {
    let r = invariance_residual(space, map, m)?;
    Ok((r <= tol, r))
}

/// A transversal measure that passed the invariance check.
#[derive(Debug, Clone, PartialEq)]
pub struct TransversalMeasureInv {
    pub raw: RawTransversalMeasure,
    pub invariance_residual: f64,
    pub tol: f64,
    pub ergodic: Option<bool>,
}

impl TransversalMeasureInv {
    pub fn new(sol: &SuspensionSolenoid, raw: RawTransversalMeasure, tol: f64) -> Result<Self> {
        if !(raw.total_mass() > 0.0) {
            return Err(Error::InvalidMeasure("transversal measure has zero mass".into()));
        }
        let (ok, residual) = check_holonomy_invariance(&sol.space, &sol.map, &raw, tol)?;
        if !ok {
            return Err(Error::NotInvariant { residual, tol });
        }
        Ok(Self {
            raw,
            invariance_residual: residual,
            tol,
            ergodic: None,
        })
    }

    pub fn from_descriptor(sol: &SuspensionSolenoid, desc: &MeasureDescriptor, tol: f64) -> Result<Self> {
        Self::new(sol, make_measure(&sol.space, desc)?, tol)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            raw: self.raw.scaled(c),
            invariance_residual: self.invariance_residual * c.abs(),
            ..self.clone()
        }
    }
}

/// Support of a transversal measure: cells of positive mass plus circle atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub cells: Vec<TransversalCell>,
    pub points: Vec<f64>,
}

/// Closure of `{density > threshold}` (on a 4096-point grid) together with
/// the atoms; maximal positive cylinders; points of positive weight.
pub fn support(space: &TransversalSpace, m: &RawTransversalMeasure, threshold: f64) -> Support {
    let mut points: Vec<f64> = m.atoms().iter().filter(|a| a.1 > threshold).map(|a| a.0).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let cells = match (space, m) {
        (_, RawTransversalMeasure::Weights(w)) => (0..w.len())
            .filter(|&i| w[i] > threshold)
            .map(TransversalCell::Point)
            .collect(),
        (&TransversalSpace::Cantor { p, depth }, RawTransversalMeasure::Cylinders(w)) => {
            let mut out = Vec::new();
            cylinder_support(w, p, depth, Vec::new(), threshold, &mut out);
            out
        }
        (_, RawTransversalMeasure::Density { density, .. }) => {
            let n = ESS_INF_GRID;
            let pos: Vec<bool> = (0..n).map(|i| density.eval((i as f64 + 0.5) / n as f64) > threshold).collect();
            positive_arcs(&pos)
        }
        (_, RawTransversalMeasure::Histogram { bins, .. }) => {
            let pos: Vec<bool> = bins.iter().map(|b| *b > threshold).collect();
            positive_arcs(&pos)
        }
        _ => Vec::new(),
    };
    Support { cells, points }
}

fn positive_arcs(pos: &[bool]) -> Vec<TransversalCell> {
    let n = pos.len();
    if pos.iter().all(|&b| b) {
        return vec![TransversalCell::Whole];
    }
    let Some(start) = pos.iter().position(|&b| !b) else {
        return Vec::new();
    };
    // walk once around the circle starting at a gap so arcs never split
    let mut out = Vec::new();
    let mut run: Option<usize> = None;
    for k in 1..=n {
        let i = (start + k) % n;
        match (pos[i], run) {
            (true, None) => run = Some(start + k),
            (false, Some(s)) => {
                out.push(TransversalCell::Interval(s as f64 / n as f64, (start + k) as f64 / n as f64));
                run = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run {
        out.push(TransversalCell::Interval(s as f64 / n as f64, (start + n + 1) as f64 / n as f64));
    }
    out.into_iter()
        .map(|c| match c {
            TransversalCell::Interval(a, b) => {
                let shift = a.floor();
                TransversalCell::Interval(a - shift, b - shift)
            }
            c => c,
        })
        .collect()
}

fn cylinder_support(w: &[f64], p: u32, depth: u32, prefix: Vec<u32>, thr: f64, out: &mut Vec<TransversalCell>) {
    let stride = (p as usize).pow(prefix.len() as u32);
    let base = prefix.iter().rev().fold(0usize, |acc, &a| acc * p as usize + a as usize);
    let members: Vec<f64> = (base..w.len()).step_by(stride).map(|i| w[i]).collect();
    if members.iter().all(|&v| v > thr) {
        out.push(TransversalCell::Cylinder(prefix));
    } else if members.iter().any(|&v| v > thr) && (prefix.len() as u32) < depth {
        for a in 0..p {
            let mut child = prefix.clone();
            child.push(a);
            cylinder_support(w, p, depth, child, thr, out);
        }
    }
}

/// Flow-box cell `[t0, t1) × C` with `0 ≤ t0 ≤ t1 ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductCell {
    pub t0: f64,
    pub t1: f64,
    pub cell: TransversalCell,
}

impl ProductCell {
    pub fn new(t0: f64, t1: f64, cell: TransversalCell) -> Result<Self> {
        if !(0.0 <= t0 && t0 <= t1 && t1 <= 1.0) {
            return Err(invalid("cell", format!("need 0 ≤ t0 ≤ t1 ≤ 1, got [{t0}, {t1})")));
        }
        Ok(Self { t0, t1, cell })
    }

    pub fn leaf_length(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// `g(t)·dt` on the unit leaf segment through `(x0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafDensity {
    pub x0: TransversalPoint,
    pub g: TrigPoly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAtom {
    pub point: LeafPoint,
    pub mass: f64,
}

/// Closed-form measure on a suspension: daval part plus measures carried by
/// single leaf segments and points.
#[derive(Debug, Clone, PartialEq)]
pub struct SolenoidMeasure {
    pub space: TransversalSpace,
    pub daval_part: Option<TransversalMeasureInv>,
    pub leaf_densities: Vec<LeafDensity>,
    pub point_atoms: Vec<PointAtom>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAtomDescriptor {
    pub x: TransversalPoint,
    pub t: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolenoidMeasureDescriptor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub daval: Option<MeasureDescriptor>,
    #[serde(default)]
    pub leaf_densities: Vec<LeafDensity>,
    #[serde(default)]
    pub atoms: Vec<PointAtomDescriptor>,
}

pub fn make_solenoid_measure(
    sol: &SuspensionSolenoid,
    desc: &SolenoidMeasureDescriptor,
    tol: f64,
) -> Result<SolenoidMeasure> {
    let daval_part = desc
        .daval
        .as_ref()
        .map(|d| TransversalMeasureInv::from_descriptor(sol, d, tol))
        .transpose()?;
    for (k, ld) in desc.leaf_densities.iter().enumerate() {
        let field = format!("measure.leaf_densities[{k}]");
        sol.space.embed_point(&ld.x0).map_err(|e| invalid(&field, e.to_string()))?;
        ld.g.validate(&format!("{field}.g"), DEFAULT_MAX_FREQUENCY)?;
        if ld.g.minimum(ESS_INF_GRID, ESS_INF_TOL).0 < -ESS_INF_TOL {
            return Err(invalid(field, "leaf density takes negative values"));
        }
    }
    let mut point_atoms = Vec::new();
    for (k, a) in desc.atoms.iter().enumerate() {
        let field = format!("measure.atoms[{k}]");
        sol.space.embed_point(&a.x).map_err(|e| invalid(&field, e.to_string()))?;
        if !(0.0..1.0).contains(&a.t) || !(a.mass.is_finite() && a.mass > 0.0) {
            return Err(invalid(field, "need t in [0,1) and mass > 0"));
        }
        point_atoms.push(PointAtom {
            point: LeafPoint { x: a.x.clone(), t: a.t },
            mass: a.mass,
        });
    }
    Ok(SolenoidMeasure {
        space: sol.space.clone(),
        daval_part,
        leaf_densities: desc.leaf_densities.clone(),
        point_atoms,
    })
}

/// The daval measure `μ(A) = ∫ Vol₁(A_y) dμ_T(y)`.
pub fn daval_from_transversal(sol: &SuspensionSolenoid, m: &TransversalMeasureInv) -> Result<SolenoidMeasure> {
    if !(m.invariance_residual <= m.tol) {
        return Err(Error::NotInvariant {
            residual: m.invariance_residual,
            tol: m.tol,
        });
    }
    Ok(SolenoidMeasure {
        space: sol.space.clone(),
        daval_part: Some(m.clone()),
        leaf_densities: Vec::new(),
        point_atoms: Vec::new(),
    })
}

/// The daval measure of `m` normalised to total mass 1.
pub fn volume_measure(sol: &SuspensionSolenoid, m: &TransversalMeasureInv) -> Result<SolenoidMeasure> {
    let total = m.raw.total_mass();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidMeasure("zero or infinite mass".into()));
    }
    daval_from_transversal(sol, &m.scaled(1.0 / total))
}

impl SolenoidMeasure {
    pub fn zero(space: TransversalSpace) -> Self {
        Self {
            space,
            daval_part: None,
            leaf_densities: Vec::new(),
            point_atoms: Vec::new(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        let mut acc = KahanSum::new();
        if let Some(d) = &self.daval_part {
            acc.add(d.raw.total_mass());
        }
        for ld in &self.leaf_densities {
            acc.add(ld.g.mean());
        }
        for a in &self.point_atoms {
            acc.add(a.mass);
        }
        acc.value()
    }

    pub fn daval_mass(&self) -> f64 {
        self.daval_part.as_ref().map_or(0.0, |d| d.raw.total_mass())
    }

    /// `μ([t0, t1) × C)`.
    pub fn mass(&self, cell: &ProductCell) -> f64 {
        let mut acc = KahanSum::new();
        if let Some(d) = &self.daval_part {
            acc.add(cell.leaf_length() * d.raw.cell_mass(&self.space, &cell.cell));
        }
        for ld in &self.leaf_densities {
            if cell.cell.contains(&self.space, &ld.x0) {
                acc.add(ld.g.integral(cell.t0, cell.t1));
            }
        }
        for a in &self.point_atoms {
            if cell.t0 <= a.point.t && a.point.t < cell.t1 && cell.cell.contains(&self.space, &a.point.x) {
                acc.add(a.mass);
            }
        }
        acc.value()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            space: self.space.clone(),
            daval_part: self.daval_part.as_ref().map(|d| d.scaled(c)),
            leaf_densities: self
                .leaf_densities
                .iter()
                .map(|ld| LeafDensity {
                    x0: ld.x0.clone(),
                    g: ld.g.scaled(c),
                })
                .collect(),
            point_atoms: self
                .point_atoms
                .iter()
                .map(|a| PointAtom {
                    point: a.point.clone(),
                    mass: a.mass * c,
                })
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.space != other.space {
            return Err(Error::Incompatible("measures live on different solenoids".into()));
        }
        let daval_part = match (&self.daval_part, &other.daval_part) {
            (Some(a), Some(b)) => Some(TransversalMeasureInv {
                raw: a.raw.add(&b.raw)?,
                invariance_residual: a.invariance_residual + b.invariance_residual,
                tol: a.tol.max(b.tol),
                ergodic: None,
            }),
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (None, None) => None,
        };
        Ok(Self {
            space: self.space.clone(),
            daval_part,
            leaf_densities: self.leaf_densities.iter().chain(&other.leaf_densities).cloned().collect(),
            point_atoms: self.point_atoms.iter().chain(&other.point_atoms).cloned().collect(),
        })
    }

    /// Leaf densities with equal base points summed together.
    fn merged_leaf_densities(&self) -> Vec<LeafDensity> {
        let mut out: Vec<LeafDensity> = Vec::new();
        for ld in &self.leaf_densities {
            match out.iter_mut().find(|o| o.x0 == ld.x0) {
                Some(o) => o.g = o.g.add(&ld.g),
                None => out.push(ld.clone()),
            }
        }
        out
    }

    /// Product-structure defect `max |μ(I×C) − |I|·μ([0,1)×C)|` over a cell
    /// algebra; zero for measures that are leafwise Lebesgue.
    pub fn daval_cell_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for cell in test_cell_algebra(&self.space) {
            let column = self.mass(&ProductCell { t0: 0.0, t1: 1.0, cell: cell.cell.clone() });
            worst = worst.max((self.mass(&cell) - cell.leaf_length() * column).abs());
        }
        worst
    }
}

/// Product cells used for the decomposition residual and the daval test:
/// dyadic t-intervals of levels 0..=3 times the invariance cells of the
/// transversal, capped at level 5 on the circle.
pub fn test_cell_algebra(space: &TransversalSpace) -> Vec<ProductCell> {
    let transversal: Vec<TransversalCell> = match space {
        TransversalSpace::Circle => (0..=5u32)
            .flat_map(|l| {
                let n = 1usize << l;
                (0..n).map(move |k| TransversalCell::Interval(k as f64 / n as f64, (k + 1) as f64 / n as f64))
            })
            .collect(),
        _ => invariance_cells(space),
    };
    let mut out = Vec::new();
    for l in 0..=3u32 {
        let n = 1usize << l;
        for k in 0..n {
            for c in &transversal {
                out.push(ProductCell {
                    t0: k as f64 / n as f64,
                    t1: (k + 1) as f64 / n as f64,
                    cell: c.clone(),
                });
            }
        }
    }
    out
}

/// Output of `disintegrate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Disintegration {
    pub measure: RawTransversalMeasure,
    /// Column mass not explained by the recovered transversal measure.
    pub contamination: f64,
    /// Cells whose thickening quotient roughly doubles when ε halves.
    pub singular_cells: Vec<TransversalCell>,
    /// `|q(2^{-8}) − q(2^{-7})|` summed over cells.
    pub extrapolation_error: f64,
}

/// Recovers the transversal measure from the quotients
/// `μ(V_ε(C)) / (2ε)` where `V_ε(C)` is a leaf window of half-width ε over
/// the cell C. Windows tile the unit leaf; the quotient per cell is the
/// minimum over windows (so mass concentrated in a few windows is
/// excluded), extrapolated in ε by Richardson.
pub fn disintegrate(mu: &SolenoidMeasure, cell_depth: u32) -> Result<Disintegration> {
    let cells: Vec<TransversalCell> = match &mu.space {
        TransversalSpace::Circle => {
            if cell_depth > 20 {
                return Err(invalid("cell_depth", "at most 20 on the circle"));
            }
            let n = 1usize << cell_depth;
            (0..n)
                .map(|k| TransversalCell::Interval(k as f64 / n as f64, (k + 1) as f64 / n as f64))
                .collect()
        }
        space => invariance_cells(space),
    };
    let quotient = |cell: &TransversalCell, level: i32| -> (f64, f64) {
        let eps = 2f64.powi(-level);
        let windows = 1usize << (level - 1);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for k in 0..windows {
            let pc = ProductCell {
                t0: 2.0 * eps * k as f64,
                t1: 2.0 * eps * (k + 1) as f64,
                cell: cell.clone(),
            };
            let q = mu.mass(&pc) / (2.0 * eps);
            lo = lo.min(q);
            hi = hi.max(q);
        }
        (lo, hi)
    };
    let mut estimates = Vec::with_capacity(cells.len());
    let mut singular_cells = Vec::new();
    let mut err = KahanSum::new();
    let mut contamination = KahanSum::new();
    let (l_coarse, l_fine) = (*THICKENING_LEVELS.end() - 1, *THICKENING_LEVELS.end());
    for cell in &cells {
        let qs: Vec<(f64, f64)> = THICKENING_LEVELS.map(|l| quotient(cell, l)).collect();
        let (qc, hc) = qs[(l_coarse - THICKENING_LEVELS.start()) as usize];
        let (qf, hf) = qs[(l_fine - THICKENING_LEVELS.start()) as usize];
        let est = ((4.0 * qf - qc) / 3.0).max(0.0);
        err.add((qf - qc).abs());
        // an atom in the window doubles the max quotient when ε halves
        if hf > qf + 1e-12 && hf >= 1.5 * hc {
            singular_cells.push(cell.clone());
        }
        let column = mu.mass(&ProductCell { t0: 0.0, t1: 1.0, cell: cell.clone() });
        contamination.add(column - est);
        estimates.push(est);
    }
    let measure = match &mu.space {
        TransversalSpace::Circle => RawTransversalMeasure::Histogram {
            bins: estimates,
            atoms: Vec::new(),
        },
        TransversalSpace::Cantor { .. } => RawTransversalMeasure::Cylinders(estimates),
        TransversalSpace::Finite { .. } => RawTransversalMeasure::Weights(estimates),
    };
    Ok(Disintegration {
        measure,
        contamination: contamination.value(),
        singular_cells,
        extrapolation_error: err.value(),
    })
}

/// Leaf-length lower bound `μ(V) ≥ ε₀ μ_T(C)` on a flow-box cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn lower_bound_check(mu: &SolenoidMeasure, cell: &ProductCell, eps0: f64) -> Result<LowerBoundCheck> {
    if cell.leaf_length() < eps0 {
        return Err(invalid("cell", format!("leaf length {} below ε₀ = {eps0}", cell.leaf_length())));
    }
    let lhs = mu.mass(cell);
    let mt = mu.daval_part.as_ref().map_or(0.0, |d| d.raw.cell_mass(&mu.space, &cell.cell));
    let rhs = eps0 * mt;
    Ok(LowerBoundCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-12,
    })
}

/// Regular/irregular split by global domination: the regular part is the
/// largest leafwise-Lebesgue measure below μ, i.e. the daval part plus
/// `(ess-inf g)·dt` on each leaf density.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub regular: SolenoidMeasure,
    pub irregular: SolenoidMeasure,
    pub residual: f64,
}

impl Decomposition {
    /// `(component, kind, mass)` rows for reports.
    pub fn rows(&self) -> Vec<(&'static str, &'static str, f64)> {
        let mut rows = Vec::new();
        for (name, m) in [("regular", &self.regular), ("irregular", &self.irregular)] {
            rows.push((name, "daval", m.daval_mass()));
            rows.push((name, "leaf_density", ksum(m.leaf_densities.iter().map(|l| l.g.mean()))));
            rows.push((name, "point_atom", ksum(m.point_atoms.iter().map(|a| a.mass))));
        }
        rows
    }
}

pub fn decompose(mu: &SolenoidMeasure) -> Decomposition {
    let mut regular = SolenoidMeasure {
        space: mu.space.clone(),
        daval_part: mu.daval_part.clone(),
        leaf_densities: Vec::new(),
        point_atoms: Vec::new(),
    };
    let mut irregular = SolenoidMeasure {
        point_atoms: mu.point_atoms.clone(),
        ..SolenoidMeasure::zero(mu.space.clone())
    };
    for ld in mu.merged_leaf_densities() {
        let (m, _) = ld.g.minimum(ESS_INF_GRID, ESS_INF_TOL);
        let m = m.max(0.0);
        if m > 0.0 {
            regular.leaf_densities.push(LeafDensity {
                x0: ld.x0.clone(),
                g: TrigPoly::constant(m),
            });
        }
        let rest = ld.g.shifted_constant(-m);
        if rest.max_frequency() > 0 || rest.constant != 0.0 {
            irregular.leaf_densities.push(LeafDensity { x0: ld.x0, g: rest });
        }
    }
    let residual = test_cell_algebra(&mu.space)
        .iter()
        .map(|c| (mu.mass(c) - regular.mass(c) - irregular.mass(c)).abs())
        .fold(0.0, f64::max);
    Decomposition {
        regular,
        irregular,
        residual,
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::solenoid::suspend;
    use proptest::prelude::*;

    fn golden() -> SuspensionSolenoid {
        suspend(TransversalSpace::Circle, ReturnMap::Rotation(RotationNumber::Real(0.6180339887498949))).unwrap()
    }

    proptest! {
        #[test]
        fn lower_bound_holds_on_random_cells(t0 in 0.0f64..0.5, len in 0.01f64..0.5, a in 0.0f64..1.0, w in 0.0f64..1.0, c in 0.1f64..10.0) {
            let g = golden();
            let leb = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue().scaled(c), 1e-9).unwrap();
            let mu = daval_from_transversal(&g, &leb).unwrap();
            let cell = ProductCell::new(t0, t0 + len, TransversalCell::Interval(a, a + w)).unwrap();
            let eps0 = len * 0.999;
            prop_assert!(lower_bound_check(&mu, &cell, eps0).unwrap().holds);
        }

        #[test]
        fn daval_scalar_covariance(c in 0.01f64..100.0, t0 in 0.0f64..0.5, k in 0usize..16) {
            let d = suspend(TransversalSpace::Cantor { p: 2, depth: 4 }, ReturnMap::Odometer { p: 2 }).unwrap();
            let haar = TransversalMeasureInv::new(&d, RawTransversalMeasure::haar(&d.space), 1e-9).unwrap();
            let a = daval_from_transversal(&d, &haar.scaled(c)).unwrap();
            let b = daval_from_transversal(&d, &haar).unwrap().scaled(c);
            let cell = ProductCell::new(t0, 1.0, TransversalCell::Cylinder(digits_of(k, 2, 4))).unwrap();
            prop_assert!((a.mass(&cell) - b.mass(&cell)).abs() <= 1e-15 * c);
        }

        #[test]
        fn decompose_reassembles(c0 in 1.0f64..3.0, c1 in -1.0f64..1.0, s1 in -1.0f64..1.0, m in 0.01f64..1.0, t in 0.0f64..1.0) {
            let g = golden();
            let leb = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue(), 1e-9).unwrap();
            let mut mu = daval_from_transversal(&g, &leb).unwrap();
            let gp = TrigPoly::new(c0 + 2.0, vec![c1], vec![s1]);
            mu.leaf_densities.push(LeafDensity { x0: TransversalPoint::Real(0.3), g: gp });
            mu.point_atoms.push(PointAtom { point: LeafPoint { x: TransversalPoint::Real(0.7), t }, mass: m });
            let d = decompose(&mu);
            prop_assert!(d.residual <= 1e-9);
            prop_assert!(decompose(&d.irregular).regular.total_mass() <= 1e-9);
            prop_assert!(d.regular.daval_cell_residual() <= 1e-12);
        }
    }
}
