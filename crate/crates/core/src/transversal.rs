//! Transversal spaces K(U) ⊂ R and the raw measures living on them.
//!
//! Three kinds are supported: a finite set of points of [0,1), the circle
//! R/Z, and the p-adic Cantor set truncated at a finite depth. Cantor points
//! are digit strings `(a₀, …, a_{d−1})` with `a₀` the least significant
//! digit, so the odometer is "add one with carry from the left".

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trig::{TrigPoly, DEFAULT_MAX_FREQUENCY};
use crate::util::{frac, ksum};

/// Largest number of depth-d cylinders we are willing to enumerate.
pub const MAX_CYLINDERS: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransversalDescriptor {
    Finite { points: Vec<f64> },
    Circle,
    Cantor { p: i64, depth: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransversalSpace {
    Finite { points: Vec<f64> },
    Circle,
    Cantor { p: u32, depth: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransversalPoint {
    Real(f64),
    Digits(Vec<u32>),
}

/// Topological type of the transversal and the matching solenoid type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransversalClass {
    FiniteSet,
    UnionOfCircles,
    CantorSet,
}

impl TransversalClass {
    pub fn solenoid_type(self) -> &'static str {
        match self {
            TransversalClass::FiniteSet => "each leaf is a connected manifold of dimension k",
            TransversalClass::UnionOfCircles => "foliation of a (k+1)-manifold",
            TransversalClass::CantorSet => "solenoid with Cantor-set transversal",
        }
    }
}

pub fn make_transversal(desc: &TransversalDescriptor) -> Result<TransversalSpace> {
    match desc {
        TransversalDescriptor::Circle => Ok(TransversalSpace::Circle),
        TransversalDescriptor::Finite { points } => {
            if points.is_empty() {
                return Err(invalid("transversal.points", "empty point set"));
            }
            let mut pts = points.clone();
            if let Some(bad) = pts.iter().find(|x| !(0.0..1.0).contains(*x)) {
                return Err(invalid("transversal.points", format!("{bad} not in [0,1)")));
            }
            pts.sort_by(f64::total_cmp);
            if pts.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid("transversal.points", "duplicate points"));
            }
            Ok(TransversalSpace::Finite { points: pts })
        }
        &TransversalDescriptor::Cantor { p, depth } => {
            if p < 2 {
                return Err(invalid("transversal.p", format!("base must be >= 2, got {p}")));
            }
            if depth < 1 {
                return Err(invalid(
                    "transversal.depth",
                    format!("depth must be >= 1, got {depth}"),
                ));
            }
            let count = (p as u64).checked_pow(depth as u32);
            if count.map_or(true, |c| c > MAX_CYLINDERS) {
                return Err(invalid("transversal.depth", "too many cylinders"));
            }
            let space = TransversalSpace::Cantor {
                p: p as u32,
                depth: depth as u32,
            };
            space.check_cylinder_embedding()?;
            Ok(space)
        }
    }
}

impl TransversalSpace {
    pub fn classify(&self) -> TransversalClass {
        match self {
            TransversalSpace::Finite { .. } => TransversalClass::FiniteSet,
            TransversalSpace::Circle => TransversalClass::UnionOfCircles,
            TransversalSpace::Cantor { .. } => TransversalClass::CantorSet,
        }
    }

    pub fn descriptor(&self) -> TransversalDescriptor {
        match self {
            TransversalSpace::Finite { points } => TransversalDescriptor::Finite {
                points: points.clone(),
            },
            TransversalSpace::Circle => TransversalDescriptor::Circle,
            &TransversalSpace::Cantor { p, depth } => TransversalDescriptor::Cantor {
                p: p as i64,
                depth: depth as i64,
            },
        }
    }

    /// Number of depth-d cylinders (Cantor) or points (Finite).
    pub fn cell_count(&self) -> Option<usize> {
        match self {
            TransversalSpace::Finite { points } => Some(points.len()),
            TransversalSpace::Circle => None,
            &TransversalSpace::Cantor { p, depth } => Some((p as usize).pow(depth)),
        }
    }

    /// Index of a point: position in the sorted Finite list, or the
    /// residue `Σ aᵢ pⁱ` for Cantor digit strings.
    pub fn index_of(&self, pt: &TransversalPoint) -> Result<usize> {
        match (self, pt) {
            (TransversalSpace::Finite { points }, TransversalPoint::Real(x)) => points
                .binary_search_by(|q| q.total_cmp(x))
                .map_err(|_| invalid("point", format!("{x} is not a point of the transversal"))),
            (&TransversalSpace::Cantor { p, depth }, TransversalPoint::Digits(ds)) => {
                if ds.len() != depth as usize {
                    return Err(invalid(
                        "point",
                        format!("expected {depth} digits, got {}", ds.len()),
                    ));
                }
                let mut idx = 0usize;
                for &a in ds.iter().rev() {
                    if a >= p {
                        return Err(invalid("point", format!("digit {a} out of range for p={p}")));
                    }
                    idx = idx * p as usize + a as usize;
                }
                Ok(idx)
            }
            _ => Err(invalid("point", "point kind does not match transversal")),
        }
    }

    pub fn point_at(&self, index: usize) -> TransversalPoint {
        match self {
            TransversalSpace::Finite { points } => TransversalPoint::Real(points[index]),
            TransversalSpace::Circle => panic!("circle points are not indexed"),
            &TransversalSpace::Cantor { p, depth } => {
                TransversalPoint::Digits(digits_of(index, p, depth))
            }
        }
    }

    /// Real embedding of a point. For Cantor spaces this is the middle-gaps
    /// embedding `x = c·Σ aᵢ(p−1)(2p−1)^{−(i+1)}` with `c = 2/(p−1)`, which
    /// reduces to the middle-thirds set for p = 2.
    pub fn embed_point(&self, pt: &TransversalPoint) -> Result<f64> {
        match (self, pt) {
            (TransversalSpace::Circle, &TransversalPoint::Real(x)) => {
                if (0.0..1.0).contains(&x) {
                    Ok(x)
                } else {
                    Err(invalid("point", format!("{x} not in [0,1)")))
                }
            }
            (TransversalSpace::Finite { .. }, &TransversalPoint::Real(x)) => {
                self.index_of(pt)?;
                Ok(x)
            }
            (&TransversalSpace::Cantor { p, .. }, TransversalPoint::Digits(ds)) => {
                self.index_of(pt)?;
                Ok(cantor_embed(ds, p))
            }
            _ => Err(invalid("point", "point kind does not match transversal")),
        }
    }

    /// Embedded interval `[lo, hi]` spanned by a depth-d cylinder.
    pub fn cylinder_interval(&self, index: usize) -> (f64, f64) {
        match self {
            &TransversalSpace::Cantor { p, depth } => {
                let lo = cantor_embed(&digits_of(index, p, depth), p);
                let width = (2.0 * p as f64 - 1.0).powi(-(depth as i32)) / (p as f64 - 1.0);
                (lo, lo + width)
            }
            _ => panic!("cylinder_interval on a non-Cantor space"),
        }
    }

    fn check_cylinder_embedding(&self) -> Result<()> {
        let n = self.cell_count().unwrap_or(0);
        let mut ivs: Vec<(f64, f64)> = (0..n).map(|i| self.cylinder_interval(i)).collect();
        ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if ivs.windows(2).any(|w| w[1].0 <= w[0].1) {
            return Err(invalid("transversal", "cylinder images overlap"));
        }
        if ivs.last().map_or(false, |iv| iv.1 > 1.0 + 1e-12) {
            return Err(invalid("transversal", "embedding leaves [0,1]"));
        }
        Ok(())
    }
}

fn cantor_embed(ds: &[u32], p: u32) -> f64 {
    let q = 2.0 * p as f64 - 1.0;
    let c = 2.0 / (p as f64 - 1.0);
    let mut scale = 1.0;
    let terms = ds.iter().map(|&a| {
        scale /= q;
        a as f64 * (p as f64 - 1.0) * scale * c
    });
    ksum(terms)
}

pub fn digits_of(mut index: usize, p: u32, depth: u32) -> Vec<u32> {
    let mut ds = Vec::with_capacity(depth as usize);
    for _ in 0..depth {
        ds.push((index % p as usize) as u32);
        index /= p as usize;
    }
    ds
}

/// A measurable cell of a transversal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransversalCell {
    Whole,
    /// Half-open `[a, b)` read on R/Z; `b − a ≤ 1`.
    Interval(f64, f64),
    /// Cylinder fixed by its leading digits `(a₀, …, a_{j−1})`.
    Cylinder(Vec<u32>),
    Point(usize),
}

impl TransversalCell {
    pub fn contains(&self, space: &TransversalSpace, pt: &TransversalPoint) -> bool {
        match (self, pt) {
            (TransversalCell::Whole, _) => true,
            (&TransversalCell::Interval(a, b), &TransversalPoint::Real(x)) => in_arc(x, a, b),
            (TransversalCell::Cylinder(prefix), TransversalPoint::Digits(ds)) => {
                ds.len() >= prefix.len() && ds[..prefix.len()] == prefix[..]
            }
            (&TransversalCell::Point(i), pt) => space.index_of(pt).map_or(false, |j| j == i),
            _ => false,
        }
    }
}

/// x ∈ [a, b) modulo 1.
pub fn in_arc(x: f64, a: f64, b: f64) -> bool {
    if b - a >= 1.0 {
        return true;
    }
    let off = frac(x - a);
    off < b - a
}

/// Number of integers n with a ≤ x + n < b.
fn lattice_hits(x: f64, a: f64, b: f64) -> f64 {
    ((b - x).ceil() - (a - x).ceil()).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureDescriptor {
    Weights {
        weights: Vec<f64>,
    },
    Density {
        density: TrigPoly,
        #[serde(default)]
        atoms: Vec<(f64, f64)>,
    },
    Cylinders {
        cylinder_weights: Vec<f64>,
    },
    Histogram {
        bins: Vec<f64>,
        #[serde(default)]
        atoms: Vec<(f64, f64)>,
    },
}

/// A finite measure on a transversal, before any invariance check.
#[derive(Debug, Clone, PartialEq)]
pub enum RawTransversalMeasure {
    /// One weight per Finite point.
    Weights(Vec<f64>),
    /// Trigonometric density on the circle plus atoms `(x, mass)`.
    Density {
        density: TrigPoly,
        atoms: Vec<(f64, f64)>,
    },
    /// One weight per depth-d cylinder, indexed by `Σ aᵢ pⁱ`.
    Cylinders(Vec<f64>),
    /// Piecewise-constant circle measure: bin masses on a uniform partition,
    /// plus atoms.
    Histogram {
        bins: Vec<f64>,
        atoms: Vec<(f64, f64)>,
    },
}

pub fn make_measure(space: &TransversalSpace, desc: &MeasureDescriptor) -> Result<RawTransversalMeasure> {
    let nonneg = |field: &str, v: &[f64]| -> Result<()> {
        if let Some(w) = v.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(invalid(field, format!("weight {w} is not a finite non-negative number")));
        }
        Ok(())
    };
    let check_atoms = |atoms: &[(f64, f64)]| -> Result<()> {
        for &(x, m) in atoms {
            if !(0.0..1.0).contains(&x) || !(m.is_finite() && m >= 0.0) {
                return Err(invalid("measure.atoms", format!("bad atom ({x}, {m})")));
            }
        }
        Ok(())
    };
    let m = match (space, desc) {
        (TransversalSpace::Finite { points }, MeasureDescriptor::Weights { weights }) => {
            if weights.len() != points.len() {
                return Err(invalid("measure.weights", "length differs from point count"));
            }
            nonneg("measure.weights", weights)?;
            RawTransversalMeasure::Weights(weights.clone())
        }
        (TransversalSpace::Circle, MeasureDescriptor::Density { density, atoms }) => {
            density.validate("measure.density", DEFAULT_MAX_FREQUENCY)?;
            if density.grid_min() < 0.0 {
                return Err(invalid("measure.density", "density is negative on the check grid"));
            }
            check_atoms(atoms)?;
            RawTransversalMeasure::Density {
                density: density.clone(),
                atoms: atoms.clone(),
            }
        }
        (TransversalSpace::Circle, MeasureDescriptor::Histogram { bins, atoms }) => {
            if bins.is_empty() {
                return Err(invalid("measure.bins", "no bins"));
            }
            nonneg("measure.bins", bins)?;
            check_atoms(atoms)?;
            RawTransversalMeasure::Histogram {
                bins: bins.clone(),
                atoms: atoms.clone(),
            }
        }
        (TransversalSpace::Cantor { .. }, MeasureDescriptor::Cylinders { cylinder_weights }) => {
            if Some(cylinder_weights.len()) != space.cell_count() {
                return Err(invalid(
                    "measure.cylinder_weights",
                    format!("expected {} weights", space.cell_count().unwrap_or(0)),
                ));
            }
            nonneg("measure.cylinder_weights", cylinder_weights)?;
            RawTransversalMeasure::Cylinders(cylinder_weights.clone())
        }
        _ => return Err(invalid("measure", "measure kind does not match transversal")),
    };
    Ok(m)
}

impl RawTransversalMeasure {
    pub fn lebesgue() -> Self {
        RawTransversalMeasure::Density {
            density: TrigPoly::constant(1.0),
            atoms: Vec::new(),
        }
    }

    pub fn dirac_atoms(atoms: Vec<(f64, f64)>) -> Self {
        RawTransversalMeasure::Density {
            density: TrigPoly::constant(0.0),
            atoms,
        }
    }

    /// Uniform probability on the depth-d cylinders (the Haar measure).
    pub fn haar(space: &TransversalSpace) -> Self {
        let n = space.cell_count().expect("haar on a discrete space");
        RawTransversalMeasure::Cylinders(vec![1.0 / n as f64; n])
    }

    pub fn descriptor(&self) -> MeasureDescriptor {
        match self {
            RawTransversalMeasure::Weights(w) => MeasureDescriptor::Weights { weights: w.clone() },
            RawTransversalMeasure::Density { density, atoms } => MeasureDescriptor::Density {
                density: density.clone(),
                atoms: atoms.clone(),
            },
            RawTransversalMeasure::Cylinders(w) => MeasureDescriptor::Cylinders {
                cylinder_weights: w.clone(),
            },
            RawTransversalMeasure::Histogram { bins, atoms } => MeasureDescriptor::Histogram {
                bins: bins.clone(),
                atoms: atoms.clone(),
            },
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            RawTransversalMeasure::Weights(w) | RawTransversalMeasure::Cylinders(w) => {
                ksum(w.iter().copied())
            }
            RawTransversalMeasure::Density { density, atoms } => {
                density.mean() + ksum(atoms.iter().map(|a| a.1))
            }
            RawTransversalMeasure::Histogram { bins, atoms } => {
                ksum(bins.iter().copied().chain(atoms.iter().map(|a| a.1)))
            }
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        match self {
            RawTransversalMeasure::Density { atoms, .. }
            | RawTransversalMeasure::Histogram { atoms, .. } => atoms,
            _ => &[],
        }
    }

    /// True when the measure charges individual points (always for the
    /// discrete kinds, through explicit atoms on the circle).
    pub fn has_atoms(&self) -> bool {
        match self {
            RawTransversalMeasure::Weights(_) | RawTransversalMeasure::Cylinders(_) => true,
            _ => self.atoms().iter().any(|a| a.1 > 0.0),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let sa = |atoms: &[(f64, f64)]| atoms.iter().map(|&(x, m)| (x, m * c)).collect();
        match self {
            RawTransversalMeasure::Weights(w) => {
                RawTransversalMeasure::Weights(w.iter().map(|v| v * c).collect())
            }
            RawTransversalMeasure::Cylinders(w) => {
                RawTransversalMeasure::Cylinders(w.iter().map(|v| v * c).collect())
            }
            RawTransversalMeasure::Density { density, atoms } => RawTransversalMeasure::Density {
                density: density.scaled(c),
                atoms: sa(atoms),
            },
            RawTransversalMeasure::Histogram { bins, atoms } => RawTransversalMeasure::Histogram {
                bins: bins.iter().map(|v| v * c).collect(),
                atoms: sa(atoms),
            },
        }
    }

    /// Sum of two measures of the same kind (histograms must share bins).
    pub fn add(&self, other: &Self) -> Result<Self> {
        use RawTransversalMeasure::*;
        let zip = |a: &[f64], b: &[f64]| -> Result<Vec<f64>> {
            if a.len() != b.len() {
                return Err(Error::Incompatible("measure lengths differ".into()));
            }
            Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
        };
        let cat = |a: &[(f64, f64)], b: &[(f64, f64)]| a.iter().chain(b).copied().collect();
        Ok(match (self, other) {
            (Weights(a), Weights(b)) => Weights(zip(a, b)?),
            (Cylinders(a), Cylinders(b)) => Cylinders(zip(a, b)?),
            (Density { density: d1, atoms: a1 }, Density { density: d2, atoms: a2 }) => Density {
                density: d1.add(d2),
                atoms: cat(a1, a2),
            },
            (Histogram { bins: b1, atoms: a1 }, Histogram { bins: b2, atoms: a2 }) => Histogram {
                bins: zip(b1, b2)?,
                atoms: cat(a1, a2),
            },
            _ => return Err(Error::Incompatible("measure kinds differ".into())),
        })
    }

    /// Mass of `[a, b)` on R/Z, any real a ≤ b with b − a ≤ 1.
    pub fn interval_mass(&self, a: f64, b: f64) -> f64 {
        let atoms = ksum(self.atoms().iter().map(|&(x, m)| m * lattice_hits(x, a, b)));
        let cont = match self {
            RawTransversalMeasure::Density { density, .. } => density.integral(a, b),
            RawTransversalMeasure::Histogram { bins, .. } => {
                histogram_cdf(bins, b) - histogram_cdf(bins, a)
            }
            _ => 0.0,
        };
        cont + atoms
    }

    /// Mass of a cylinder given by leading digits (Cantor only).
    pub fn cylinder_mass(&self, space: &TransversalSpace, prefix: &[u32]) -> f64 {
        let (RawTransversalMeasure::Cylinders(w), &TransversalSpace::Cantor { p, .. }) = (self, space)
        else {
            return 0.0;
        };
        let stride = (p as usize).pow(prefix.len() as u32);
        let mut base = 0usize;
        for &a in prefix.iter().rev() {
            base = base * p as usize + a as usize;
        }
        ksum((base..w.len()).step_by(stride).map(|i| w[i]))
    }

    pub fn cell_mass(&self, space: &TransversalSpace, cell: &TransversalCell) -> f64 {
        match cell {
            TransversalCell::Whole => self.total_mass(),
            &TransversalCell::Interval(a, b) => match self {
                RawTransversalMeasure::Weights(w) => match space {
                    TransversalSpace::Finite { points } => ksum(
                        points
                            .iter()
                            .zip(w)
                            .filter(|(x, _)| in_arc(**x, a, b))
                            .map(|(_, m)| *m),
                    ),
                    _ => 0.0,
                },
                RawTransversalMeasure::Cylinders(w) => ksum(
                    (0..w.len())
                        .filter(|&i| in_arc(space.cylinder_interval(i).0, a, b))
                        .map(|i| w[i]),
                ),
                _ => self.interval_mass(a, b),
            },
            TransversalCell::Cylinder(prefix) => self.cylinder_mass(space, prefix),
            &TransversalCell::Point(i) => match self {
                RawTransversalMeasure::Weights(w) | RawTransversalMeasure::Cylinders(w) => {
                    w.get(i).copied().unwrap_or(0.0)
                }
                _ => 0.0,
            },
        }
    }

    /// Masses of the `n` uniform bins of the circle.
    pub fn bin_masses(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| self.interval_mass(i as f64 / n as f64, (i + 1) as f64 / n as f64))
            .collect()
    }

    /// Coarsened cylinder weights at depth `level ≤ d`.
    pub fn coarsen(&self, space: &TransversalSpace, level: u32) -> Vec<f64> {
        let &TransversalSpace::Cantor { p, .. } = space else {
            return Vec::new();
        };
        let n = (p as usize).pow(level);
        (0..n)
            .map(|i| self.cylinder_mass(space, &digits_of(i, p, level)))
            .collect()
    }

    /// Total variation distance `½ Σ |m₁(C) − m₂(C)|` over the natural cells:
    /// points, depth-d cylinders, or `circle_bins` uniform circle bins.
    pub fn tv_distance(&self, other: &Self, space: &TransversalSpace, circle_bins: usize) -> f64 {
        let (a, b) = match space {
            TransversalSpace::Circle => (self.bin_masses(circle_bins), other.bin_masses(circle_bins)),
            _ => {
                let n = space.cell_count().unwrap_or(0);
                (
                    (0..n).map(|i| self.cell_mass(space, &TransversalCell::Point(i))).collect(),
                    (0..n).map(|i| other.cell_mass(space, &TransversalCell::Point(i))).collect(),
                )
            }
        };
        0.5 * ksum(a.iter().zip(&b).map(|(x, y)| (x - y).abs()))
    }
}

/// CDF of a periodic histogram measure extended to R (mass of [0, x)).
fn histogram_cdf(bins: &[f64], x: f64) -> f64 {
    let n = bins.len();
    let total = ksum(bins.iter().copied());
    let whole = x.floor();
    let f = x - whole;
    let pos = f * n as f64;
    let k = (pos.floor() as usize).min(n - 1);
    let partial = ksum(bins[..k].iter().copied()) + bins[k] * (pos - k as f64);
    whole * total + partial
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cantor(p: i64, depth: i64) -> TransversalSpace {
        make_transversal(&TransversalDescriptor::Cantor { p, depth }).unwrap()
    }

    #[test]
    fn construct_spaces() {
        let f = make_transversal(&TransversalDescriptor::Finite {
            points: vec![0.7, 0.2],
        })
        .unwrap();
        assert_eq!(f, TransversalSpace::Finite { points: vec![0.2, 0.7] });
        assert_eq!(cantor(2, 3).cell_count(), Some(8));
        let err = make_transversal(&TransversalDescriptor::Cantor { p: 1, depth: 3 }).unwrap_err();
        assert!(err.to_string().contains("transversal.p"));
        assert!(make_transversal(&TransversalDescriptor::Cantor { p: 2, depth: 0 }).is_err());
        assert!(make_transversal(&TransversalDescriptor::Finite {
            points: vec![0.3, 0.3]
        })
        .is_err());
    }

    #[test]
    fn embedding_values() {
        let c = TransversalSpace::Circle;
        assert_eq!(c.embed_point(&TransversalPoint::Real(0.25)).unwrap(), 0.25);
        let s1 = cantor(2, 1);
        assert_eq!(s1.embed_point(&TransversalPoint::Digits(vec![0])).unwrap(), 0.0);
        let one = s1.embed_point(&TransversalPoint::Digits(vec![1])).unwrap();
        assert!((one - 2.0 / 3.0).abs() < 1e-15);
        let s2 = cantor(2, 2);
        let v = s2.embed_point(&TransversalPoint::Digits(vec![1, 1])).unwrap();
        assert!((v - 8.0 / 9.0).abs() < 1e-15);
        assert!(s2.embed_point(&TransversalPoint::Digits(vec![2, 0])).is_err());
    }

    #[test]
    fn cylinder_images_disjoint_exhaustive() {
        for (p, d) in [(2, 13), (3, 8), (5, 5), (7, 4), (10, 4)] {
            let s = cantor(p, d);
            let n = s.cell_count().unwrap();
            let mut ivs: Vec<_> = (0..n).map(|i| s.cylinder_interval(i)).collect();
            ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!(ivs.windows(2).all(|w| w[1].0 > w[0].1));
            assert!(ivs[0].0 >= 0.0 && ivs[n - 1].1 <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn classification() {
        assert_eq!(TransversalSpace::Circle.classify(), TransversalClass::UnionOfCircles);
        assert_eq!(
            TransversalSpace::Circle.classify().solenoid_type(),
            "foliation of a (k+1)-manifold"
        );
        let f = TransversalSpace::Finite {
            points: vec![0.1, 0.2, 0.3],
        };
        assert_eq!(f.classify(), TransversalClass::FiniteSet);
        assert!(f.classify().solenoid_type().contains("manifold of dimension k"));
        assert_eq!(cantor(2, 4).classify(), TransversalClass::CantorSet);
    }

    #[test]
    fn total_masses() {
        let s = cantor(2, 3);
        assert!((RawTransversalMeasure::haar(&s).total_mass() - 1.0).abs() < 1e-15);
        assert_eq!(RawTransversalMeasure::lebesgue().total_mass(), 1.0);
        let w = RawTransversalMeasure::Weights(vec![0.2, 0.5]);
        assert!((w.total_mass() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn cylinder_mass_coarsens() {
        let s = cantor(3, 3);
        let w: Vec<f64> = (0..27).map(|i| i as f64).collect();
        let m = RawTransversalMeasure::Cylinders(w);
        let coarse = m.coarsen(&s, 1);
        // children of digit a₀ = i are the indices ≡ i mod 3
        for (i, c) in coarse.iter().enumerate() {
            let expect: f64 = (0..27).filter(|k| k % 3 == i).map(|k| k as f64).sum();
            assert_eq!(*c, expect);
        }
        assert_eq!(m.coarsen(&s, 0), vec![351.0]);
    }

    #[test]
    fn interval_mass_wraps_and_counts_atoms() {
        let m = RawTransversalMeasure::Density {
            density: TrigPoly::constant(1.0),
            atoms: vec![(0.05, 0.3)],
        };
        assert!((m.interval_mass(-0.1, 0.1) - 0.5).abs() < 1e-15);
        assert!((m.interval_mass(0.9, 1.1) - 0.5).abs() < 1e-15);
        assert!((m.interval_mass(0.1, 0.2) - 0.1).abs() < 1e-15);
        let h = RawTransversalMeasure::Histogram {
            bins: vec![0.25; 4],
            atoms: vec![],
        };
        assert!((h.interval_mass(0.875, 1.125) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn negative_density_rejected() {
        let d = MeasureDescriptor::Density {
            density: TrigPoly::new(0.5, vec![1.0], vec![]),
            atoms: vec![],
        };
        assert!(make_measure(&TransversalSpace::Circle, &d).is_err());
    }

    #[test]
    fn measure_json_forms() {
        let d: MeasureDescriptor =
            serde_json::from_str(r#"{"density":{"cos":[0.5],"sin":[],"const":1.0},"atoms":[[0.5,0.2]]}"#)
                .unwrap();
        let m = make_measure(&TransversalSpace::Circle, &d).unwrap();
        assert!((m.total_mass() - 1.2).abs() < 1e-15);
        let d: MeasureDescriptor = serde_json::from_str(r#"{"cylinder_weights":[0.5,0.5]}"#).unwrap();
        assert!(make_measure(&cantor(2, 1), &d).is_ok());
        let t: TransversalDescriptor = serde_json::from_str(r#"{"kind":"cantor","p":2,"depth":8}"#).unwrap();
        assert_eq!(make_transversal(&t).unwrap().cell_count(), Some(256));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn mass_is_additive_over_cylinders(ws in proptest::collection::vec(0.0f64..1.0, 9)) {
            let s = TransversalSpace::Cantor { p: 3, depth: 2 };
            let m = RawTransversalMeasure::Cylinders(ws);
            let parts: f64 = (0..3).map(|a| m.cylinder_mass(&s, &[a])).sum();
            prop_assert!((parts - m.total_mass()).abs() < 1e-12);
        }

        #[test]
        fn mass_is_additive_over_intervals(c in 0.0f64..2.0, a1 in -1.0f64..1.0, s in 0.0f64..1.0, cut in 0.0f64..1.0) {
            let m = RawTransversalMeasure::Density {
                density: TrigPoly::new(2.0, vec![c * 0.5], vec![0.3]),
                atoms: vec![(0.37, 0.2)],
            };
            let b = a1 + s;
            let mid = a1 + s * cut;
            let whole = m.interval_mass(a1, b);
            let split = m.interval_mass(a1, mid) + m.interval_mass(mid, b);
            prop_assert!((whole - split).abs() < 1e-12);
        }

        #[test]
        fn classification_ignores_relabeling(mut pts in proptest::collection::btree_set(0u32..1000, 1..8)) {
            let v: Vec<f64> = std::mem::take(&mut pts).into_iter().map(|k| k as f64 / 1000.0).collect();
            let mut rev = v.clone();
            rev.reverse();
            let a = make_transversal(&TransversalDescriptor::Finite { points: v }).unwrap();
            let b = make_transversal(&TransversalDescriptor::Finite { points: rev }).unwrap();
            prop_assert_eq!(a.classify(), b.classify());
        }
    }
}
