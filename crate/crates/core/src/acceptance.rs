//! The nine end-to-end acceptance checks, shared by the test suite and the
//! command-line tool.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::currents::{
    asymptotic_cycle, closedness_residual, homology_class, make_immersion, Immersion, ImmersionDescriptor,
    PairOptions,
};
use crate::dualform::{
    closedness_defect, default_test_forms, flowbox_refinement_bound, pushforward_dual_form, rsform_check,
    self_intersection,
};
use crate::dynamics::{classify_dynamics, ReturnMap, RotationNumber, UlamOptions};
use crate::error::Result;
use crate::forms::{integrate_torus, Phase, TorusForm};
use crate::rng::{family_rng, random_form};
use crate::smeasure::{daval_from_transversal, decompose, disintegrate, LeafDensity, PointAtom, SolenoidMeasure, TransversalMeasureInv};
use crate::solenoid::{suspend, LeafPoint, SuspensionSolenoid};
use crate::transversal::{RawTransversalMeasure, TransversalPoint, TransversalSpace};
use crate::trig::TrigPoly;

pub const GOLDEN: f64 = 0.6180339887498949;

/// Below this level an error is indistinguishable from round-off and is not
/// required to shrink further under refinement.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} [{}] {}: {}", self.id, self.name, self.detail)
    }
}

fn result(id: u32, name: &str, r: Result<(bool, String)>) -> CriterionResult {
    let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult {
        id,
        name: name.to_string(),
        passed,
        detail,
    }
}

pub const NAMES: [&str; 9] = [
    "golden homology class",
    "closedness of exact forms",
    "minimality versus return map",
    "disintegration round trip",
    "regular/irregular decomposition",
    "dual form pairing",
    "self-intersection mechanism",
    "asymptotic cycles",
    "exactness kernel",
];

/// Runs one criterion (1-based).
pub fn run_one(id: u32, seed: u64) -> CriterionResult {
    let name = NAMES.get(id.wrapping_sub(1) as usize).copied().unwrap_or("unknown");
    let r = match id {
        1 => golden_homology(),
        2 => closedness_suite(seed),
        3 => minimality_equivalence(),
        4 => round_trip(),
        5 => decomposition(),
        6 => dual_form(),
        7 => self_intersection_mechanism(),
        8 => asymptotic_cycles(),
        9 => exactness_kernel(seed),
        _ => Ok((false, "no such criterion".into())),
    };
    result(id, name, r)
}

pub fn run_all(seed: u64) -> Vec<CriterionResult> {
    (1..=9).map(|id| run_one(id, seed)).collect()
}

pub fn golden_rotation() -> Result<SuspensionSolenoid> {
    suspend(TransversalSpace::Circle, ReturnMap::Rotation(RotationNumber::Real(GOLDEN)))
}

pub fn dyadic(depth: u32) -> Result<SuspensionSolenoid> {
    suspend(TransversalSpace::Cantor { p: 2, depth }, ReturnMap::Odometer { p: 2 })
}

/// The built-in immersions with their natural invariant measures.
pub fn builtin_immersions() -> Result<Vec<(&'static str, SuspensionSolenoid, Immersion, TransversalMeasureInv)>> {
    let mut out = Vec::new();
    let g = golden_rotation()?;
    let leb = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue(), 1e-9)?;
    out.push(("rotation_standard", g.clone(), make_immersion(&ImmersionDescriptor::RotationStandard, &g)?, leb.clone()));
    let d = dyadic(6)?;
    let haar = TransversalMeasureInv::new(&d, RawTransversalMeasure::haar(&d.space), 1e-9)?;
    out.push((
        "dyadic_r3",
        d.clone(),
        make_immersion(&ImmersionDescriptor::DyadicR3 { depth: 6, eps0: 0.05 }, &d)?,
        haar,
    ));
    let f = suspend(
        TransversalSpace::Finite { points: vec![0.25, 0.75] },
        ReturnMap::Permutation { sigma: vec![0, 1] },
    )?;
    let w = TransversalMeasureInv::new(&f, RawTransversalMeasure::Weights(vec![1.0, 1.0]), 1e-9)?;
    let lin = ImmersionDescriptor::TorusLinear {
        v: vec![1.0, 0.0],
        w0: vec![0.0, 0.0],
        e: vec![0.0, 1.0],
    };
    out.push(("torus_linear", f.clone(), make_immersion(&lin, &f)?, w));
    let custom = ImmersionDescriptor::Custom {
        v: vec![1.0, GOLDEN],
        w0: vec![0.0, 0.0],
        e: vec![0.0, 1.0],
        displacement: vec![
            TorusForm::term(2, &[0, 1], &[], Phase::Sin, 0.03)?.descriptor(),
            TorusForm::term(2, &[1, 1], &[], Phase::Cos, 0.02)?.descriptor(),
        ],
    };
    out.push(("custom", g.clone(), make_immersion(&custom, &g)?, leb));
    Ok(out)
}

fn golden_homology() -> Result<(bool, String)> {
    let g = golden_rotation()?;
    let imm = make_immersion(&ImmersionDescriptor::RotationStandard, &g)?;
    let m = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue(), 1e-9)?;
    let h = homology_class(&imm, &g, &m, &PairOptions::default())?;
    let e = [(h.class[0] - 1.0).abs(), (h.class[1] - GOLDEN).abs()];
    Ok((
        e[0] <= 1e-9 && e[1] <= 1e-9,
        format!("class ({:.16}, {:.16}), errors {:.2e}, {:.2e} (tol 1e-9)", h.class[0], h.class[1], e[0], e[1]),
    ))
}

fn closedness_suite(seed: u64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (name, sol, imm, m)) in builtin_immersions()?.iter().enumerate() {
        let mut rng = family_rng(seed, 200 + i as u64);
        let mut local: f64 = 0.0;
        for _ in 0..20 {
            let eta = random_form(&mut rng, imm.dim(), 0, 4, 4);
            local = local.max(closedness_residual(imm, sol, m, &eta, &PairOptions::default())?.residual);
        }
        worst = worst.max(local);
        parts.push(format!("{name} {local:.1e}"));
    }
    Ok((worst <= 1e-7, format!("max |C(dη)| over 20 forms: {} (tol 1e-7)", parts.join(", "))))
}

fn minimality_equivalence() -> Result<(bool, String)> {
    let circle = TransversalSpace::Circle;
    let families: Vec<(&str, TransversalSpace, ReturnMap, usize, f64)> = vec![
        ("irrational rotation", circle.clone(), ReturnMap::Rotation(RotationNumber::Real(GOLDEN)), 10_000, 0.01),
        (
            "rational rotation",
            circle.clone(),
            ReturnMap::Rotation(RotationNumber::Rational { p: 2, q: 5 }),
            10_000,
            0.01,
        ),
        ("odometer p=2", TransversalSpace::Cantor { p: 2, depth: 6 }, ReturnMap::Odometer { p: 2 }, 64, 1.0 / 64.0),
        ("odometer p=3", TransversalSpace::Cantor { p: 3, depth: 4 }, ReturnMap::Odometer { p: 3 }, 81, 1.0 / 81.0),
        (
            "1-cycle permutation",
            TransversalSpace::Finite { points: vec![0.1, 0.4, 0.8] },
            ReturnMap::Permutation { sigma: vec![1, 2, 0] },
            3,
            0.05,
        ),
        (
            "2-cycle permutation",
            TransversalSpace::Finite { points: vec![0.1, 0.4, 0.6, 0.8] },
            ReturnMap::Permutation { sigma: vec![1, 0, 3, 2] },
            4,
            0.05,
        ),
        ("circle diffeo", circle, ReturnMap::CircleDiffeo { a: 0.1, m: 1 }, 10_000, 0.01),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, space, map, n, eps) in families {
        let sol = suspend(space.clone(), map.clone())?;
        let verdict = sol.is_minimal(8, n, eps)?.minimal;
        let report = classify_dynamics(&space, &map, &UlamOptions::default())?;
        let agree = verdict == report.minimal && (!report.uniquely_ergodic || report.minimal);
        ok &= agree;
        parts.push(format!(
            "{name}: orbit={verdict} map={} ue={}{}",
            report.minimal,
            report.uniquely_ergodic,
            if agree { "" } else { " MISMATCH" }
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn round_trip() -> Result<(bool, String)> {
    let mut cases: Vec<(&str, SuspensionSolenoid, RawTransversalMeasure, u32)> = Vec::new();
    cases.push(("golden Lebesgue", golden_rotation()?, RawTransversalMeasure::lebesgue(), 9));
    cases.push((
        "rotation 1/3, density 1+cos 6πx",
        suspend(TransversalSpace::Circle, ReturnMap::Rotation(RotationNumber::Rational { p: 1, q: 3 }))?,
        RawTransversalMeasure::Density {
            density: TrigPoly::new(1.0, vec![0.0, 0.0, 1.0], vec![]),
            atoms: vec![],
        },
        9,
    ));
    cases.push((
        "diffeo fixed-point atoms",
        suspend(TransversalSpace::Circle, ReturnMap::CircleDiffeo { a: 0.1, m: 1 })?,
        RawTransversalMeasure::dirac_atoms(vec![(0.0, 0.4), (0.5, 0.6)]),
        9,
    ));
    let d8 = dyadic(8)?;
    let haar = RawTransversalMeasure::haar(&d8.space);
    cases.push(("dyadic depth 8 Haar", d8, haar, 0));
    cases.push((
        "two 2-cycles",
        suspend(
            TransversalSpace::Finite { points: vec![0.1, 0.4, 0.6, 0.8] },
            ReturnMap::Permutation { sigma: vec![1, 0, 3, 2] },
        )?,
        RawTransversalMeasure::Weights(vec![0.2, 0.2, 0.3, 0.3]),
        0,
    ));
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, sol, raw, depth) in cases {
        let m = TransversalMeasureInv::new(&sol, raw, 1e-9)?;
        let dis = disintegrate(&daval_from_transversal(&sol, &m)?, depth)?;
        let tv = dis.measure.tv_distance(&m.raw, &sol.space, 512);
        worst = worst.max(tv);
        parts.push(format!("{name} {tv:.1e}"));
    }
    Ok((worst <= 1e-6, format!("TV distances: {} (tol 1e-6)", parts.join(", "))))
}

fn decomposition() -> Result<(bool, String)> {
    let g = golden_rotation()?;
    let leb = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue().scaled(0.7), 1e-9)?;
    let mut mix = daval_from_transversal(&g, &leb)?;
    mix.point_atoms.push(PointAtom {
        point: LeafPoint {
            x: TransversalPoint::Real(0.1),
            t: 0.5,
        },
        mass: 0.3,
    });
    let d1 = decompose(&mix);
    let e1 = [(d1.regular.total_mass() - 0.7).abs(), (d1.irregular.total_mass() - 0.3).abs()];
    let wavy = SolenoidMeasure {
        leaf_densities: vec![LeafDensity {
            x0: TransversalPoint::Real(0.2),
            g: TrigPoly::new(2.0, vec![1.0], vec![]),
        }],
        ..SolenoidMeasure::zero(TransversalSpace::Circle)
    };
    let d2 = decompose(&wavy);
    let e2 = [(d2.regular.total_mass() - 1.0).abs(), (d2.irregular.total_mass() - 1.0).abs()];
    let idem = decompose(&d1.irregular)
        .regular
        .total_mass()
        .max(decompose(&d2.irregular).regular.total_mass());
    let worst = e1.iter().chain(&e2).fold(0.0f64, |a, b| a.max(*b));
    Ok((
        worst <= 1e-6 && idem <= 1e-9,
        format!(
            "0.7/0.3 mixture -> {:.12}/{:.12}; 2+cos -> {:.12}/{:.12}; mass error {worst:.1e} (tol 1e-6); second-pass regular mass {idem:.1e} (tol 1e-9)",
            d1.regular.total_mass(),
            d1.irregular.total_mass(),
            d2.regular.total_mass(),
            d2.irregular.total_mass()
        ),
    ))
}

fn dual_form() -> Result<(bool, String)> {
    let g = golden_rotation()?;
    let imm = make_immersion(&ImmersionDescriptor::RotationStandard, &g)?;
    let m = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue(), 1e-9)?;
    let betas = default_test_forms(2)?;
    let mut errs = Vec::new();
    let mut closed_ok = true;
    let mut defects = Vec::new();
    for (grid, r) in [(256usize, 0.02), (512, 0.01)] {
        let dual = pushforward_dual_form(&imm, &g, &m, r, grid)?;
        errs.push(rsform_check(&imm, &g, &m, &dual, &betas)?.max_rel_error);
        let defect = closedness_defect(&dual.form)?;
        let bound = 10.0 * dual.form.max_abs() / grid as f64;
        closed_ok &= defect <= bound;
        defects.push((defect, bound));
    }
    let shrinks = errs[1] <= errs[0] / 1.5 || errs[1] <= ROUNDOFF_FLOOR;
    Ok((
        errs[0] <= 2e-2 && shrinks && closed_ok,
        format!(
            "relative error {:.2e} at G=256 r=0.02 (tol 2e-2), {:.2e} at G=512 r=0.01 (needs /1.5 or <= {ROUNDOFF_FLOOR:e}); |dη| {:.1e} <= {:.1e}, {:.1e} <= {:.1e}",
            errs[0], errs[1], defects[0].0, defects[0].1, defects[1].0, defects[1].1
        ),
    ))
}

fn self_intersection_mechanism() -> Result<(bool, String)> {
    let g = golden_rotation()?;
    let imm = make_immersion(&ImmersionDescriptor::RotationStandard, &g)?;
    let m = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue(), 1e-9)?;
    let s1 = self_intersection(&imm, &g, &m, 0.02, 0.015, 256, false)?.value;
    let s2 = self_intersection(&imm, &g, &m, 0.01, 0.0075, 512, false)?.value;
    let decreasing = s2.abs() <= s1.abs() || s2.abs() <= ROUNDOFF_FLOOR;
    let si_ok = s1.abs() <= 2e-2 && decreasing;

    let halving = |imm: &Immersion, sol: &SuspensionSolenoid, m: &TransversalMeasureInv, depths: std::ops::Range<u32>| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for d in depths {
            let a = flowbox_refinement_bound(imm, sol, m, d)?.total;
            let b = flowbox_refinement_bound(imm, sol, m, d + 1)?.total;
            worst = worst.max((b / a - 0.5).abs());
        }
        Ok(worst)
    };
    let leb_ratio = halving(&imm, &g, &m, 1..10)?;
    let d = dyadic(8)?;
    let dimm = make_immersion(&ImmersionDescriptor::DyadicR3 { depth: 8, eps0: 0.05 }, &d)?;
    let haar = TransversalMeasureInv::new(&d, RawTransversalMeasure::haar(&d.space), 1e-9)?;
    let haar_ratio = halving(&dimm, &d, &haar, 1..8)?;

    // every point fixed: 0.7 Lebesgue plus a 0.3 atom is invariant
    let id = suspend(TransversalSpace::Circle, ReturnMap::Rotation(RotationNumber::Rational { p: 0, q: 1 }))?;
    let idimm = make_immersion(&ImmersionDescriptor::RotationStandard, &id)?;
    let atom = TransversalMeasureInv::new(
        &id,
        RawTransversalMeasure::Density {
            density: TrigPoly::constant(0.7),
            atoms: vec![(0.3, 0.3)],
        },
        1e-9,
    )?;
    let deep = flowbox_refinement_bound(&idimm, &id, &atom, 16)?;
    let stall_ok = deep.total >= deep.c0 * 0.09;
    let halve_ok = leb_ratio <= 1e-9 && haar_ratio <= 1e-9;
    Ok((
        si_ok && halve_ok && stall_ok,
        format!(
            "self-intersection {s1:.2e} (G=256) -> {s2:.2e} (G=512), tol 2e-2; flow-box ratio deviation from 1/2: Lebesgue {leb_ratio:.1e}, Haar {haar_ratio:.1e}; with 0.3 atom at depth 16 sum {:.6} >= C0*0.09 = {:.6}",
            deep.total,
            deep.c0 * 0.09
        ),
    ))
}

fn asymptotic_cycles() -> Result<(bool, String)> {
    let mut parts = Vec::new();
    let mut ok = true;
    let g = golden_rotation()?;
    let gi = make_immersion(&ImmersionDescriptor::RotationStandard, &g)?;
    let gm = TransversalMeasureInv::new(&g, RawTransversalMeasure::lebesgue(), 1e-9)?;
    let d = dyadic(6)?;
    let di = make_immersion(&ImmersionDescriptor::DyadicR3 { depth: 6, eps0: 0.05 }, &d)?;
    let dm = TransversalMeasureInv::new(&d, RawTransversalMeasure::haar(&d.space), 1e-9)?;
    for (name, sol, imm, m, x0, tol) in [
        ("golden", &g, &gi, &gm, TransversalPoint::Real(0.0), 2e-4),
        ("dyadic depth 6", &d, &di, &dm, TransversalPoint::Digits(vec![0; 6]), 1e-3),
    ] {
        let h = homology_class(imm, sol, m, &PairOptions::default())?;
        let mass = m.raw.total_mass();
        let c = asymptotic_cycle(imm, sol, &x0, 1e4)?;
        let err = c.iter().zip(&h.class).map(|(a, b)| (a - b / mass).abs()).fold(0.0, f64::max);
        ok &= err <= tol;
        parts.push(format!("{name} {err:.1e} (tol {tol:e})"));
    }
    Ok((ok, format!("|cycle(T=1e4) - class|: {}", parts.join(", "))))
}

fn max_coeff(f: &TorusForm) -> f64 {
    f.terms().iter().map(|t| t.c.abs()).fold(0.0, f64::max)
}

fn exactness_kernel(seed: u64) -> Result<(bool, String)> {
    let mut rng = family_rng(seed, 900);
    let (mut d2, mut leib, mut stokes) = (0.0f64, 0.0f64, 0.0f64);
    let n = 3;
    for _ in 0..20 {
        for p in 0..n {
            let a = random_form(&mut rng, n, p, 4, 8).with_cap(64);
            if p + 2 <= n {
                d2 = d2.max(max_coeff(&a.d()?.d()?));
            }
            stokes = stokes.max(integrate_torus_any(&a.d()?)?);
            for q in 0..n - p {
                let b = random_form(&mut rng, n, q, 3, 8).with_cap(64);
                let lhs = a.wedge(&b)?.d()?;
                let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
                let rhs = a.d()?.wedge(&b)?.add(&a.wedge(&b.d()?)?.scaled(sign))?;
                leib = leib.max(max_coeff(&lhs.sub(&rhs)?));
            }
        }
    }
    let worst = d2.max(leib).max(stokes);
    Ok((
        worst <= 1e-12,
        format!("max |d d a| {d2:.1e}, max Leibniz defect {leib:.1e}, max |∫ d a| {stokes:.1e} (tol 1e-12)"),
    ))
}

/// `|∫ ω|` for top-degree `ω`; lower degrees integrate to zero by convention.
fn integrate_torus_any(f: &TorusForm) -> Result<f64> {
    if f.degree() == f.dim() {
        Ok(integrate_torus(f)?.abs())
    } else {
        Ok(0.0)
    }
}
