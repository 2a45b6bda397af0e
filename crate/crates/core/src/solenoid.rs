//! Suspension solenoids `S_f = ([0,1] × X) / (0, x) ∼ (1, f(x))`.
//!
//! Leaves are parametrised by unit-speed `t`; the base transversal
//! `T = {0} × X` is global and every holonomy germ on it is a power of the
//! return map.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    apply_return_map, make_map, orbit, step_state, to_state, MapDescriptor, ReturnMap, State,
};
use crate::error::{invalid, Result};
use crate::transversal::{
    digits_of, make_transversal, TransversalDescriptor, TransversalPoint, TransversalSpace,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolenoidDescriptor {
    pub transversal: TransversalDescriptor,
    pub map: MapDescriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuspensionSolenoid {
    pub space: TransversalSpace,
    pub map: ReturnMap,
}

/// Leaves are always oriented by increasing `t`.
pub const ORIENTED: bool = true;

pub fn suspend(space: TransversalSpace, map: ReturnMap) -> Result<SuspensionSolenoid> {
    map.check_space(&space)?;
    Ok(SuspensionSolenoid { space, map })
}

pub fn build_solenoid(desc: &SolenoidDescriptor) -> Result<SuspensionSolenoid> {
    suspend(make_transversal(&desc.transversal)?, make_map(&desc.map)?)
}

/// A point `(x, t)` with `t ∈ [0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafPoint {
    pub x: TransversalPoint,
    pub t: f64,
}

/// A power of the return map on the base transversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HolonomyGerm {
    pub steps: i64,
}

impl HolonomyGerm {
    pub const IDENTITY: HolonomyGerm = HolonomyGerm { steps: 0 };

    pub fn compose(self, other: HolonomyGerm) -> HolonomyGerm {
        HolonomyGerm {
            steps: self.steps + other.steps,
        }
    }

    pub fn inverse(self) -> HolonomyGerm {
        HolonomyGerm { steps: -self.steps }
    }
}

impl SuspensionSolenoid {
    pub fn descriptor(&self) -> SolenoidDescriptor {
        SolenoidDescriptor {
            transversal: self.space.descriptor(),
            map: self.map.descriptor(),
        }
    }

    /// The point at leaf time `t` on the leaf through `(x0, 0)`:
    /// `(f^⌊t⌋(x0), t − ⌊t⌋)`.
    pub fn leaf_point_at(&self, x0: &TransversalPoint, t: f64) -> Result<LeafPoint> {
        if !t.is_finite() {
            return Err(invalid("t", "leaf time must be finite"));
        }
        let n = t.floor();
        let x = apply_return_map(&self.space, &self.map, x0, n as i64)?;
        Ok(LeafPoint { x, t: t - n })
    }

    pub fn holonomy_apply(&self, g: HolonomyGerm, pt: &TransversalPoint) -> Result<TransversalPoint> {
        apply_return_map(&self.space, &self.map, pt, g.steps)
    }

    /// Default starting points for orbit scans.
    pub fn sample_points(&self, samples: usize) -> Vec<TransversalPoint> {
        let samples = samples.max(1);
        match &self.space {
            TransversalSpace::Circle => (0..samples)
                .map(|i| TransversalPoint::Real(i as f64 / samples as f64))
                .collect(),
            space => {
                let n = space.cell_count().unwrap_or(1);
                let mut idx: Vec<usize> = (0..samples).map(|i| i * n / samples).collect();
                idx.dedup();
                idx.into_iter().map(|i| space.point_at(i)).collect()
            }
        }
    }

    /// Orbit scan from sample starting points: every forward orbit
    /// `{Rⁿ x₀ : n < N}` must be ε-dense. For Cantor spaces all cylinders of
    /// diameter `p^{−j} ≥ ε` must be hit; for the circle the largest gap must
    /// be at most ε; for a finite set every point must be visited.
    pub fn is_minimal(&self, samples: usize, n: usize, eps: f64) -> Result<MinimalityVerdict> {
        if !(eps > 0.0) {
            return Err(invalid("epsilon", "need ε > 0"));
        }
        if n == 0 {
            return Err(invalid("N", "need N >= 1"));
        }
        let starts = self.sample_points(samples);
        let mut worst = 0.0f64;
        let mut minimal = true;
        for x0 in &starts {
            let r = self.leaf_density_radius(x0, n)?;
            worst = worst.max(r);
            let dense = match &self.space {
                TransversalSpace::Cantor { .. } => r < eps,
                TransversalSpace::Circle => r <= eps,
                TransversalSpace::Finite { .. } => self.finite_coverage(x0, n)?,
            };
            minimal &= dense;
        }
        Ok(MinimalityVerdict {
            minimal,
            samples: starts.len(),
            n,
            eps,
            worst_radius: worst,
        })
    }

    fn finite_coverage(&self, x0: &TransversalPoint, n: usize) -> Result<bool> {
        let size = self.space.cell_count().unwrap_or(0);
        let s0 = to_state(&self.space, x0)?;
        let mut hit = vec![false; size];
        for s in orbit(&self.space, &self.map, s0, n) {
            if let State::Idx(i) = s {
                hit[i] = true;
            }
        }
        Ok(hit.into_iter().all(|h| h))
    }

    /// Smallest ε for which the length-N orbit of `x0` is ε-dense: the
    /// largest circular gap for Circle and Finite, and `p^{−j}` for the
    /// coarsest level `j` with an unvisited cylinder for Cantor (0 when every
    /// depth-d cylinder is visited).
    pub fn leaf_density_radius(&self, x0: &TransversalPoint, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(invalid("N", "need N >= 1"));
        }
        let s0 = to_state(&self.space, x0)?;
        let orb = orbit(&self.space, &self.map, s0, n);
        match &self.space {
            &TransversalSpace::Cantor { p, depth } => {
                let size = self.space.cell_count().unwrap_or(0);
                let mut hit = vec![false; size];
                for s in &orb {
                    if let State::Idx(i) = *s {
                        hit[i] = true;
                    }
                }
                // level j cylinders are residues mod p^j
                for j in 0..=depth {
                    let m = (p as usize).pow(j);
                    let mut seen = vec![false; m];
                    for (i, &h) in hit.iter().enumerate() {
                        if h {
                            seen[i % m] = true;
                        }
                    }
                    if seen.iter().any(|s| !s) {
                        return Ok((p as f64).powi(-(j as i32)));
                    }
                }
                Ok(0.0)
            }
            space => {
                let mut xs: Vec<f64> = orb
                    .iter()
                    .map(|s| match *s {
                        State::X(x) => x,
                        State::Idx(i) => match space.point_at(i) {
                            TransversalPoint::Real(x) => x,
                            TransversalPoint::Digits(_) => unreachable!(),
                        },
                    })
                    .collect();
                Ok(max_circular_gap(&mut xs))
            }
        }
    }

    /// Poincaré recurrence: first `n ≥ 1` with `Rⁿ x₀` back in the cylinder
    /// of depth `level` (Cantor) or within `eps` (circle, finite).
    pub fn first_return(&self, x0: &TransversalPoint, level: u32, eps: f64, max_n: usize) -> Result<Option<usize>> {
        let s0 = to_state(&self.space, x0)?;
        let mut s = s0;
        for k in 1..=max_n {
            s = step_state(&self.space, &self.map, s, 1);
            let back = match (&self.space, s0, s) {
                (&TransversalSpace::Cantor { p, depth }, State::Idx(a), State::Idx(b)) => {
                    let l = level.min(depth);
                    digits_of(a, p, depth)[..l as usize] == digits_of(b, p, depth)[..l as usize]
                }
                (_, State::X(a), State::X(b)) => crate::util::circle_dist(a, b) <= eps,
                (_, State::Idx(a), State::Idx(b)) => a == b,
                _ => false,
            };
            if back {
                return Ok(Some(k));
            }
        }
        Ok(None)
    }
}

/// Outcome of an orbit-density scan; a numerical verdict, not a proof.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimalityVerdict {
    pub minimal: bool,
    pub samples: usize,
    pub n: usize,
    pub eps: f64,
    pub worst_radius: f64,
}

/// Largest gap between consecutive points on R/Z (sorts `xs`).
pub fn max_circular_gap(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return 1.0;
    }
    xs.sort_by(f64::total_cmp);
    let wrap = xs[0] + 1.0 - xs[xs.len() - 1];
    xs.windows(2).map(|w| w[1] - w[0]).fold(wrap, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RotationNumber;

    const GOLDEN: f64 = 0.6180339887498949;

    fn golden() -> SuspensionSolenoid {
        suspend(TransversalSpace::Circle, ReturnMap::Rotation(RotationNumber::Real(GOLDEN))).unwrap()
    }

    fn dyadic(d: u32) -> SuspensionSolenoid {
        suspend(TransversalSpace::Cantor { p: 2, depth: d }, ReturnMap::Odometer { p: 2 }).unwrap()
    }

    fn digits(v: &[u32]) -> TransversalPoint {
        TransversalPoint::Digits(v.to_vec())
    }

    #[test]
    fn suspend_checks_kinds() {
        assert!(suspend(TransversalSpace::Circle, ReturnMap::Odometer { p: 2 }).is_err());
        let desc: SolenoidDescriptor = serde_json::from_str(
            r#"{"transversal":{"kind":"cantor","p":2,"depth":3},"map":{"kind":"odometer","p":2}}"#,
        )
        .unwrap();
        assert_eq!(build_solenoid(&desc).unwrap(), dyadic(3));
    }

    #[test]
    fn leaf_points() {
        let s = golden();
        let lp = s.leaf_point_at(&TransversalPoint::Real(0.1), 2.5).unwrap();
        let TransversalPoint::Real(x) = lp.x else { panic!() };
        assert!((x - crate::util::frac(0.1 + 2.0 * GOLDEN)).abs() < 1e-15);
        assert_eq!(lp.t, 0.5);
        let lp = dyadic(3).leaf_point_at(&digits(&[0, 0, 0]), 3.0).unwrap();
        assert_eq!(lp, LeafPoint { x: digits(&[1, 1, 0]), t: 0.0 });
        let lp = s.leaf_point_at(&TransversalPoint::Real(0.3), 0.0).unwrap();
        assert_eq!(lp, LeafPoint { x: TransversalPoint::Real(0.3), t: 0.0 });
        let lp = dyadic(3).leaf_point_at(&digits(&[0, 0, 0]), -0.25).unwrap();
        assert_eq!(lp, LeafPoint { x: digits(&[1, 1, 1]), t: 0.75 });
    }

    #[test]
    fn holonomy() {
        let g = HolonomyGerm { steps: 2 }.compose(HolonomyGerm { steps: -2 });
        assert_eq!(g, HolonomyGerm::IDENTITY);
        let d = dyadic(3);
        assert_eq!(d.holonomy_apply(HolonomyGerm { steps: 4 }, &digits(&[0, 0, 0])).unwrap(), digits(&[0, 0, 1]));
        let y = golden().holonomy_apply(HolonomyGerm { steps: 1 }, &TransversalPoint::Real(0.9)).unwrap();
        let TransversalPoint::Real(y) = y else { panic!() };
        assert!((y - (0.9 + GOLDEN - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn holonomy_group_exhaustive() {
        let d = dyadic(4);
        for a in -10i64..=10 {
            let ga = HolonomyGerm { steps: a };
            assert_eq!(ga.compose(ga.inverse()), HolonomyGerm::IDENTITY);
            for b in -10i64..=10 {
                for c in -10i64..=10 {
                    let (gb, gc) = (HolonomyGerm { steps: b }, HolonomyGerm { steps: c });
                    assert_eq!(ga.compose(gb).compose(gc), ga.compose(gb.compose(gc)));
                }
                let x = digits(&[1, 0, 1, 1]);
                let lhs = d.holonomy_apply(ga.compose(HolonomyGerm { steps: b }), &x).unwrap();
                let rhs = d.holonomy_apply(ga, &d.holonomy_apply(HolonomyGerm { steps: b }, &x).unwrap()).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    /// Brute-force oracle: sort the orbit and scan consecutive differences.
    fn brute_gap(alpha: f64, n: usize) -> f64 {
        let mut xs: Vec<f64> = (0..n).map(|k| (k as f64 * alpha).fract()).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut g = 1.0 - xs[n - 1] + xs[0];
        for k in 1..n {
            g = g.max(xs[k] - xs[k - 1]);
        }
        g
    }

    #[test]
    fn density_radius_examples() {
        let r = golden().leaf_density_radius(&TransversalPoint::Real(0.0), 100).unwrap();
        assert!((r - brute_gap(GOLDEN, 100)).abs() < 1e-12);
        assert!((r - 0.013155617496430239).abs() < 1e-12);

        let f = suspend(
            TransversalSpace::Finite { points: vec![0.1, 0.2, 0.6] },
            ReturnMap::Permutation { sigma: vec![1, 2, 0] },
        )
        .unwrap();
        let r = f.leaf_density_radius(&TransversalPoint::Real(0.1), 3).unwrap();
        assert!((r - 0.5).abs() < 1e-15);

        assert_eq!(dyadic(3).leaf_density_radius(&digits(&[0, 0, 0]), 8).unwrap(), 0.0);
        assert_eq!(dyadic(3).leaf_density_radius(&digits(&[0, 0, 0]), 4).unwrap(), 0.125);
        assert_eq!(dyadic(3).leaf_density_radius(&digits(&[0, 0, 0]), 1).unwrap(), 0.5);
    }

    #[test]
    fn minimality_examples() {
        assert!(golden().is_minimal(4, 10_000, 0.01).unwrap().minimal);
        let half = suspend(
            TransversalSpace::Circle,
            ReturnMap::Rotation(RotationNumber::Rational { p: 1, q: 2 }),
        )
        .unwrap();
        assert!(!half.is_minimal(4, 10_000, 0.1).unwrap().minimal);
        let v = dyadic(6).is_minimal(4, 64, 1.0 / 64.0).unwrap();
        assert!(v.minimal, "{v:?}");
        assert!(!dyadic(6).is_minimal(4, 63, 1.0 / 64.0).unwrap().minimal);
        let diffeo = suspend(TransversalSpace::Circle, ReturnMap::CircleDiffeo { a: 0.1, m: 1 }).unwrap();
        assert!(!diffeo.is_minimal(4, 10_000, 0.1).unwrap().minimal);
    }

    #[test]
    fn recurrence() {
        let d = dyadic(5);
        assert_eq!(d.first_return(&digits(&[0, 1, 0, 0, 1]), 3, 0.0, 100).unwrap(), Some(8));
        let r = golden().first_return(&TransversalPoint::Real(0.0), 0, 0.02, 1000).unwrap();
        // first n with ‖nα‖ ≤ 0.02 is the Fibonacci denominator 34
        assert_eq!(r, Some(34));
    }
}
