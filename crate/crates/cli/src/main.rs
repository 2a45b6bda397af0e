mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use solenoid_core::acceptance;
use solenoid_core::currents::{
    asymptotic_cycle, homology_class, make_immersion, pair_current, Immersion,
};
use solenoid_core::dualform::{
    default_test_forms, flowbox_refinement_bound, pushforward_dual_form, rsform_check, self_intersection,
};
use solenoid_core::dynamics::classify_dynamics;
use solenoid_core::forms::TorusForm;
use solenoid_core::rng::{family_rng, random_form};
use solenoid_core::smeasure::{decompose, make_solenoid_measure, TransversalMeasureInv};
use solenoid_core::solenoid::{build_solenoid, SuspensionSolenoid};

use config::Config;

const RANDOM_FORM_FAMILY: u64 = 1;

#[derive(Parser)]
#[command(name = "solenoid", version, about = "Measured 1-solenoids, their currents and dual forms")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to rayon's choice).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Build the solenoid and report its type and minimality.
    Build,
    /// Invariant and ergodic measures of the return map.
    Ergodic,
    /// Pair the current with the configured forms.
    Pair,
    /// Homology class of the current.
    Homology,
    /// Sample the dual form on a grid.
    Dualform,
    /// Self-intersection under refinement and the flow-box bound.
    Selfint,
    /// Regular/irregular split of a solenoid measure.
    Decompose,
    /// Run the acceptance criteria.
    Acceptance,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Build => "build",
            Command::Ergodic => "ergodic",
            Command::Pair => "pair",
            Command::Homology => "homology",
            Command::Dualform => "dualform",
            Command::Selfint => "selfint",
            Command::Decompose => "decompose",
            Command::Acceptance => "acceptance",
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
    Acceptance,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 2,
            Failure::Acceptance => 3,
        }
    }
}

fn cfg_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Objects built from the config before any computation starts.
struct Setup {
    sol: SuspensionSolenoid,
    measure: Option<TransversalMeasureInv>,
    imm: Option<Immersion>,
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        None => Ok(Config::empty()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| cfg_err(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", p.display())))
        }
    }
}

fn setup(cfg: &mut Config, need_measure: bool, need_imm: bool) -> Result<Setup, Failure> {
    let desc = cfg.solenoid.as_ref().ok_or_else(|| cfg_err("missing field: solenoid"))?;
    let sol = build_solenoid(desc).map_err(cfg_err)?;
    cfg.resolve(Some(&sol.space));
    let measure = if need_measure {
        let d = cfg.measure.as_ref().expect("resolved");
        Some(TransversalMeasureInv::from_descriptor(&sol, d, cfg.invariance_tol).map_err(cfg_err)?)
    } else {
        None
    };
    let imm = if need_imm {
        let d = cfg.immersion.as_ref().ok_or_else(|| cfg_err("missing field: immersion"))?;
        Some(make_immersion(d, &sol).map_err(cfg_err)?)
    } else {
        None
    };
    Ok(Setup { sol, measure, imm })
}

/// Configured forms followed by the seeded random ones.
fn collect_forms(cfg: &Config, n: usize, seed: u64) -> Result<Vec<TorusForm>, Failure> {
    let mut forms = Vec::new();
    for (i, d) in cfg.forms.iter().enumerate() {
        forms.push(TorusForm::from_descriptor(d, n).map_err(|e| cfg_err(format!("forms[{i}]: {e}")))?);
    }
    let rf = &cfg.random_forms;
    if rf.count > 0 {
        if rf.degree > n {
            return Err(cfg_err(format!("random_forms.degree: {} exceeds dimension {n}", rf.degree)));
        }
        let mut rng = family_rng(seed, RANDOM_FORM_FAMILY);
        for _ in 0..rf.count {
            forms.push(random_form(&mut rng, n, rf.degree, rf.terms, rf.cap));
        }
    }
    if forms.is_empty() {
        return Err(cfg_err("no forms: set forms or random_forms.count"));
    }
    Ok(forms)
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| run_err(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(run_err)?;
        text.push('\n');
        fs::write(self.dir.join(name), text).map_err(run_err)
    }

    fn csv(&self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), Failure> {
        let mut w = csv::Writer::from_path(self.dir.join(name)).map_err(run_err)?;
        w.write_record(header).map_err(run_err)?;
        for r in rows {
            w.write_record(&r).map_err(run_err)?;
        }
        w.flush().map_err(run_err)
    }
}

fn build(cfg: &mut Config) -> Result<Value, Failure> {
    let s = setup(cfg, false, false)?;
    let class = s.sol.space.classify();
    let m = &cfg.minimality;
    let verdict = s
        .sol
        .is_minimal(m.samples.unwrap(), m.n.unwrap(), m.eps.unwrap())
        .map_err(run_err)?;
    Ok(json!({
        "transversal": class,
        "solenoid_type": class.solenoid_type(),
        "cells": s.sol.space.cell_count(),
        "minimal": verdict.minimal,
        "minimality": verdict,
    }))
}

fn ergodic(cfg: &mut Config) -> Result<Value, Failure> {
    let s = setup(cfg, false, false)?;
    let rep = classify_dynamics(&s.sol.space, &s.sol.map, &cfg.ulam).map_err(run_err)?;
    let measures: Vec<Value> = rep
        .ergodic_measures
        .iter()
        .map(|e| {
            json!({
                "measure": e.measure.descriptor(),
                "ergodic": e.ergodic,
                "note": e.note,
            })
        })
        .collect();
    Ok(json!({
        "minimal": rep.minimal,
        "uniquely_ergodic": rep.uniquely_ergodic,
        "method": rep.method,
        "period": rep.period,
        "ergodic_measures": measures,
        "notes": rep.notes,
    }))
}

fn pair(cfg: &mut Config, seed: u64, out: &Output) -> Result<Value, Failure> {
    let s = setup(cfg, true, true)?;
    let (imm, m) = (s.imm.unwrap(), s.measure.unwrap());
    let forms = collect_forms(cfg, imm.dim(), seed)?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (i, f) in forms.iter().enumerate() {
        let r = pair_current(&imm, &s.sol, &m, f, &cfg.quadrature).map_err(run_err)?;
        rows.push(vec![
            i.to_string(),
            fmt(r.value),
            fmt(r.quad_error_estimate),
            r.nodes_t.to_string(),
            r.cells_x.to_string(),
        ]);
        results.push(json!({ "form": f.descriptor(), "result": r }));
    }
    out.csv("pair.csv", &["form_id", "value", "quad_error", "nodes_t", "cells_x"], rows)?;
    Ok(json!({ "pairings": results }))
}

fn homology(cfg: &mut Config, out: &Output) -> Result<Value, Failure> {
    let s = setup(cfg, true, true)?;
    let (imm, m) = (s.imm.unwrap(), s.measure.unwrap());
    let h = homology_class(&imm, &s.sol, &m, &cfg.quadrature).map_err(run_err)?;
    let header: Vec<String> = (0..h.class.len()).map(|i| format!("c{i}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("homology.csv", &header, vec![h.class.iter().map(|&x| fmt(x)).collect()])?;
    out.json("homology.json", &h.class)?;
    let cycle = match &cfg.asymptotic {
        Some(a) => Some(asymptotic_cycle(&imm, &s.sol, &a.x0, a.horizon).map_err(run_err)?),
        None => None,
    };
    Ok(json!({ "homology": h, "asymptotic_cycle": cycle }))
}

fn dualform(cfg: &mut Config, out: &Output) -> Result<Value, Failure> {
    let s = setup(cfg, true, true)?;
    let (imm, m) = (s.imm.unwrap(), s.measure.unwrap());
    let dc = &cfg.dualform;
    let dual = pushforward_dual_form(&imm, &s.sol, &m, dc.r, dc.g).map_err(run_err)?;
    let f = &dual.form;
    let mut rows = Vec::new();
    for (comp, vals) in &f.components {
        let label = comp.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        for (flat, &v) in vals.iter().enumerate() {
            let mut row: Vec<String> = f.node(flat).iter().map(usize::to_string).collect();
            row.push(label.clone());
            row.push(fmt(v));
            rows.push(row);
        }
    }
    let mut header: Vec<String> = (0..f.n).map(|i| format!("k{i}")).collect();
    header.push("component".into());
    header.push("value".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("dualform.csv", &header, rows)?;
    let meta = json!({
        "resolution": f.g,
        "r": dual.profile.r,
        "r1": dual.r1,
        "components": f.components.keys().collect::<Vec<_>>(),
        "assembly": dual.assembly,
    });
    out.json("dualform.json", &meta)?;
    let check = if dc.check {
        let betas = default_test_forms(imm.dim()).map_err(run_err)?;
        Some(rsform_check(&imm, &s.sol, &m, &dual, &betas).map_err(run_err)?)
    } else {
        None
    };
    Ok(json!({ "dual_form": meta, "profile": dual.profile, "check": check }))
}

fn selfint(cfg: &mut Config, out: &Output) -> Result<Value, Failure> {
    let s = setup(cfg, true, true)?;
    let (imm, m) = (s.imm.unwrap(), s.measure.unwrap());
    let sc = &cfg.selfint;
    let mut values = Vec::new();
    let mut rows = Vec::new();
    for r in &sc.refinements {
        let si = self_intersection(&imm, &s.sol, &m, r.r, r.r_prime, r.g, sc.reject_atoms).map_err(run_err)?;
        rows.push(vec![si.g.to_string(), fmt(si.r), fmt(si.r_prime), fmt(si.value)]);
        values.push(si);
    }
    out.csv("selfint.csv", &["G", "r", "r_prime", "value"], rows)?;
    let mut bounds = Vec::new();
    let mut rows = Vec::new();
    for &d in &sc.flowbox_depths {
        let b = flowbox_refinement_bound(&imm, &s.sol, &m, d).map_err(run_err)?;
        rows.push(vec![d.to_string(), fmt(b.c0), b.cells.len().to_string(), fmt(b.total)]);
        bounds.push(json!({ "depth": b.depth, "c0": b.c0, "cells": b.cells.len(), "total": b.total }));
    }
    out.csv("flowbox.csv", &["depth", "c0", "cells", "total"], rows)?;
    Ok(json!({ "self_intersection": values, "flowbox": bounds }))
}

fn decompose_cmd(cfg: &mut Config, out: &Output) -> Result<Value, Failure> {
    let s = setup(cfg, false, false)?;
    let desc = cfg
        .solenoid_measure
        .as_ref()
        .ok_or_else(|| cfg_err("missing field: solenoid_measure"))?;
    let mu = make_solenoid_measure(&s.sol, desc, cfg.invariance_tol).map_err(cfg_err)?;
    let dec = decompose(&mu);
    let rows = dec.rows();
    out.csv(
        "decompose.csv",
        &["component", "kind", "mass"],
        rows.iter().map(|(c, k, v)| vec![c.to_string(), k.to_string(), fmt(*v)]).collect(),
    )?;
    let masses: Vec<Value> = rows
        .iter()
        .map(|(c, k, v)| json!({ "component": c, "kind": k, "mass": v }))
        .collect();
    Ok(json!({
        "total_mass": mu.total_mass(),
        "residual": dec.residual,
        "masses": masses,
    }))
}

fn acceptance_cmd(seed: u64, out: &Output) -> Result<(Value, bool), Failure> {
    let results = acceptance::run_all(seed);
    for r in &results {
        println!("{r}");
    }
    out.csv(
        "acceptance.csv",
        &["id", "name", "passed", "detail"],
        results
            .iter()
            .map(|r| vec![r.id.to_string(), r.name.clone(), r.passed.to_string(), r.detail.clone()])
            .collect(),
    )?;
    let ok = results.iter().all(|r| r.passed);
    Ok((json!({ "criteria": results, "passed": ok }), ok))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(run_err)?;
    }
    let out = Output::new(&cli.out)?;
    let mut ok = true;
    let results = match cli.command {
        Command::Build => build(&mut cfg)?,
        Command::Ergodic => ergodic(&mut cfg)?,
        Command::Pair => pair(&mut cfg, cli.seed, &out)?,
        Command::Homology => homology(&mut cfg, &out)?,
        Command::Dualform => dualform(&mut cfg, &out)?,
        Command::Selfint => selfint(&mut cfg, &out)?,
        Command::Decompose => decompose_cmd(&mut cfg, &out)?,
        Command::Acceptance => {
            let (v, passed) = acceptance_cmd(cli.seed, &out)?;
            ok = passed;
            v
        }
    };
    let report = json!({
        "command": cli.command.name(),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "seed": cli.seed,
        "config": cfg,
        "results": results,
    });
    out.json("report.json", &report)?;
    if ok {
        Ok(())
    } else {
        Err(Failure::Acceptance)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = std::time::Instant::now();
    let res = run(&cli);
    eprintln!("{}: {:.3}s", cli.command.name(), start.elapsed().as_secs_f64());
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
                Failure::Acceptance => eprintln!("acceptance: some criteria failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
