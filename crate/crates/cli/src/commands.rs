use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use radsym::energy::{energy, EnergyBreakdown};
use radsym::grid::{grad_lp_norm, GridDomain};
use radsym::harness::{polarization_audit, refinement_study, verify_theorem, RefinementProtocol};
use radsym::io::{history_csv, load, save, table_csv, to_csv, to_json, write_pgm};
use radsym::model::{default_samples, feasible_start_at, preset_with, validate_growth};
use radsym::optimize::{minimize, IterationRecord, StopReason};
use radsym::rearrange::{
    default_max_offset, distribution_function, iterate_polarizations, lp_distance, polarize_general,
    sample_polarizers_capped, schwarz_symmetrize, GridExactPolarizer, PolarizationStep, Polarizer, PolarizerSequence,
};
use radsym::{make_domain, Error, GridFunction, Shape, VariationalModel};

use crate::config::{Command, PolarizerMode, PolarizerSpec, RunConfig, ShapeName};

pub const REPORT_VERSION: u32 = 1;

/// Why a command did not succeed, mapped onto the exit-code convention.
#[derive(Debug)]
pub enum Failure {
    /// Usage, configuration, parse or I/O problems (exit 2).
    Usage(String),
    /// A violated input invariant such as a negative value (exit 3).
    Invariant(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Invariant(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Invariant(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NegativeValue { .. } | Error::NonFinite(_) | Error::InvalidFunction(_) | Error::Infeasible(_) => {
                Failure::Invariant(e.to_string())
            }
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Versioned envelope shared by every report.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: u32,
    command: &'static str,
    config: &'a RunConfig,
    verdict: bool,
    result: T,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
}

impl Run<'_> {
    fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        fs::write(self.out.join(name), contents).map_err(|e| usage(format!("writing {name}: {e}")))
    }

    fn report<T: Serialize>(&self, verdict: bool, result: T) -> Outcome {
        if self.cfg.emit.json {
            let env = Envelope {
                version: REPORT_VERSION,
                command: self.cfg.command.name(),
                config: self.cfg,
                verdict,
                result,
            };
            self.write("report.json", &to_json(&env)?)?;
        }
        Ok(verdict)
    }

    /// Binary file always; CSV and PGM when requested.
    fn field(&self, stem: &str, u: &GridFunction) -> Result<(), Failure> {
        save(u, self.out.join(format!("{stem}.symf")))?;
        if self.cfg.emit.csv {
            self.write(&format!("{stem}.csv"), &to_csv(u))?;
        }
        if self.cfg.emit.pgm {
            write_pgm(u, self.out, stem)?;
        }
        Ok(())
    }

    fn history(&self, history: &[IterationRecord]) -> Result<(), Failure> {
        if self.cfg.emit.csv {
            self.write("history.csv", &history_csv(history))?;
        }
        Ok(())
    }

    fn model(&self) -> Result<VariationalModel, Failure> {
        let name = self.cfg.preset.as_deref().ok_or_else(|| usage("missing preset name"))?;
        Ok(preset_with(name, self.cfg.params.into())?)
    }

    fn domain(&self, dim: usize) -> Result<Arc<GridDomain>, Failure> {
        let d = &self.cfg.domain;
        let dim = d.dim.unwrap_or(dim);
        let shape = match d.shape {
            ShapeName::Ball => Shape::Ball { radius: d.radius },
            ShapeName::Box => Shape::Box,
        };
        Ok(make_domain(dim, shape, d.half_extent.unwrap_or(d.radius), d.h)?)
    }

    fn input(&self) -> Result<Option<GridFunction>, Failure> {
        match &self.cfg.input {
            Some(path) => load(path).map(Some).map_err(|e| usage(format!("{}: {e}", path.display()))),
            None => Ok(None),
        }
    }

    fn require_input(&self) -> Result<GridFunction, Failure> {
        let u = self.input()?.ok_or_else(|| usage(format!("{} needs an input file", self.cfg.command.name())))?;
        u.require_nonnegative()?;
        Ok(u)
    }

    fn start_center(&self, dim: usize) -> Vec<f64> {
        match &self.cfg.start.center {
            Some(c) => c.clone(),
            None if dim == 2 => vec![0.75, 0.5],
            None => vec![0.0; dim],
        }
    }

    /// The input file if given, otherwise the configured feasible start.
    fn initial(&self, model: &VariationalModel) -> Result<GridFunction, Failure> {
        if let Some(u) = self.input()? {
            u.require_nonnegative()?;
            return Ok(u);
        }
        let domain = self.domain(model.dim)?;
        let center = self.start_center(domain.dim());
        if center.len() != domain.dim() {
            return Err(usage(format!(
                "start center has {} coordinates, domain has N = {}",
                center.len(),
                domain.dim()
            )));
        }
        Ok(feasible_start_at(model, self.cfg.start.height, &domain, &center)?)
    }

    fn sampled(&self, domain: &GridDomain) -> Result<PolarizerSequence, Failure> {
        let pc = &self.cfg.polarizers;
        let cap = pc.max_offset.unwrap_or_else(|| default_max_offset(domain));
        Ok(sample_polarizers_capped(domain, pc.seed, pc.count, cap)?)
    }
}

/// Matches a half-space against the lattice reflections of `domain`.
fn as_grid_exact(normal: &[f64], offset: f64, domain: &GridDomain) -> Option<GridExactPolarizer> {
    let h = domain.spacing();
    let dim = domain.dim();
    let mut candidates = Vec::new();
    for axis in 0..dim {
        for sign in [1, -1] {
            candidates.push(GridExactPolarizer::Axis { axis, offset_cells: 1, sign });
        }
    }
    if dim == 2 {
        for sign in [1, -1] {
            for diag in [1, -1] {
                candidates.push(GridExactPolarizer::Diag { diag, offset_cells: 1, sign });
            }
        }
    }
    candidates.into_iter().find_map(|c| {
        let unit = c.polarizer(dim, h).ok()?;
        let same_normal = unit.normal().iter().zip(normal).all(|(a, b)| (a - b).abs() <= 1e-12);
        if normal.len() != dim || !same_normal {
            return None;
        }
        let m = (offset / unit.offset()).round();
        if m < 1.0 || (offset - m * unit.offset()).abs() > 1e-12 * offset.abs().max(1.0) {
            return None;
        }
        let cells = m as u32;
        Some(match c {
            GridExactPolarizer::Axis { axis, sign, .. } => GridExactPolarizer::Axis { axis, offset_cells: cells, sign },
            GridExactPolarizer::Diag { diag, sign, .. } => GridExactPolarizer::Diag { diag, offset_cells: cells, sign },
        })
    })
}

fn describe(spec: &PolarizerSpec) -> String {
    serde_json::to_string(spec).unwrap_or_else(|_| format!("{spec:?}"))
}

pub fn run(cfg: &RunConfig, out: &Path) -> Outcome {
    fs::create_dir_all(out).map_err(|e| usage(format!("creating {}: {e}", out.display())))?;
    let run = Run { cfg, out };
    match cfg.command {
        Command::Symmetrize => symmetrize(&run),
        Command::Verify => verify(&run),
        Command::Audit => audit(&run),
        Command::Minimize => minimize_cmd(&run),
        Command::Polarize => polarize_cmd(&run),
        Command::LintModel => lint_model(&run),
        Command::Refine => refine(&run),
    }
}

#[derive(Serialize)]
struct LevelSample {
    t: f64,
    before: f64,
    after: f64,
}

#[derive(Serialize)]
struct SymmetrizeReport {
    cells: usize,
    max_value: f64,
    distribution: Vec<LevelSample>,
    max_distribution_difference: f64,
    equimeasurable: bool,
}

fn symmetrize(run: &Run) -> Outcome {
    let u = run.require_input()?;
    let star = schwarz_symmetrize(&u)?;
    let top = u.max();
    let distribution: Vec<LevelSample> = (0..=16)
        .map(|k| {
            let t = top * k as f64 / 16.0;
            LevelSample { t, before: distribution_function(&u, t), after: distribution_function(&star, t) }
        })
        .collect();
    let diff = distribution.iter().fold(0.0f64, |m, s| m.max((s.before - s.after).abs()));
    let equimeasurable = diff == 0.0;
    run.field("u_star", &star)?;
    run.report(
        equimeasurable,
        SymmetrizeReport {
            cells: u.domain().active_count(),
            max_value: top,
            distribution,
            max_distribution_difference: diff,
            equimeasurable,
        },
    )?;
    if equimeasurable {
        Ok(true)
    } else {
        Err(Failure::Invariant(format!("symmetrization changed the distribution function by {diff}")))
    }
}

fn verify(run: &Run) -> Outcome {
    let model = run.model()?;
    let u0 = run.initial(&model)?;
    let v = verify_theorem(&model, &u0, &run.cfg.options, run.cfg.thresholds)?;
    run.field("u_final", &v.result.u_final)?;
    run.field("u_star", &v.u_star)?;
    run.history(&v.result.history)?;
    run.report(v.report.verdict, &v.report)
}

#[derive(Serialize)]
struct MinimizeReport {
    energy: EnergyBreakdown,
    iterations: usize,
    converged: bool,
    stop_reason: StopReason,
    lambda: f64,
    proj_grad_norm: f64,
}

fn minimize_cmd(run: &Run) -> Outcome {
    let model = run.model()?;
    let u0 = run.initial(&model)?;
    let r = minimize(&model, &u0, &run.cfg.options)?;
    run.field("u_final", &r.u_final)?;
    run.history(&r.history)?;
    run.report(
        r.converged,
        MinimizeReport {
            energy: r.energy,
            iterations: r.iterations,
            converged: r.converged,
            stop_reason: r.stop_reason,
            lambda: r.lambda,
            proj_grad_norm: r.proj_grad_norm,
        },
    )
}

fn audit(run: &Run) -> Outcome {
    let model = run.model()?;
    let u = match run.input()? {
        Some(u) => {
            u.require_nonnegative()?;
            u
        }
        None => {
            let r = minimize(&model, &run.initial(&model)?, &run.cfg.options)?;
            run.field("u_final", &r.u_final)?;
            r.u_final
        }
    };
    if run.cfg.polarizers.mode != PolarizerMode::Exact {
        return Err(usage("audit uses grid-exact polarizers only"));
    }
    let seq = exact_sequence(run, u.domain())?;
    let report = polarization_audit(&u, &model, &seq, seq.items.len())?;
    if run.cfg.emit.csv {
        let rows: Vec<Vec<f64>> = report
            .rows
            .iter()
            .map(|r| vec![r.n as f64, r.distance, r.w, r.grad_norm_p, r.j, r.fterm, r.e, r.lambda, r.grad_distance])
            .collect();
        let header = ["n", "distance", "W", "grad_norm_p", "J", "Fterm", "E", "lambda", "grad_distance"];
        run.write("audit.csv", &table_csv(&header, &rows))?;
    }
    run.report(report.flags.is_empty(), &report)
}

fn exact_sequence(run: &Run, domain: &GridDomain) -> Result<PolarizerSequence, Failure> {
    let pc = &run.cfg.polarizers;
    let Some(items) = &pc.items else {
        return run.sampled(domain);
    };
    let mut exact = Vec::with_capacity(items.len());
    for (k, spec) in items.iter().enumerate() {
        let q = match spec {
            PolarizerSpec::Exact(q) => *q,
            PolarizerSpec::General { normal, offset } => as_grid_exact(normal, *offset, domain).ok_or_else(|| {
                usage(format!(
                    "polarizer #{k} {} is not grid-exact on this lattice (h = {})",
                    describe(spec),
                    domain.spacing()
                ))
            })?,
        };
        q.validate(domain).map_err(|e| usage(format!("polarizer #{k} {}: {e}", describe(spec))))?;
        exact.push(q);
    }
    Ok(PolarizerSequence { seed: pc.seed, items: exact })
}

fn general_sequence(run: &Run, domain: &GridDomain) -> Result<Vec<Polarizer>, Failure> {
    let dim = domain.dim();
    let h = domain.spacing();
    match &run.cfg.polarizers.items {
        None => Ok(run.sampled(domain)?.items.iter().map(|q| q.polarizer(dim, h)).collect::<radsym::Result<_>>()?),
        Some(items) => items
            .iter()
            .enumerate()
            .map(|(k, spec)| {
                let p = match spec {
                    PolarizerSpec::Exact(q) => q.validate(domain).and_then(|_| q.polarizer(dim, h)),
                    PolarizerSpec::General { normal, offset } => Polarizer::new(normal, *offset),
                };
                let p = p.map_err(|e| usage(format!("polarizer #{k} {}: {e}", describe(spec))))?;
                if p.dim() != dim {
                    return Err(usage(format!(
                        "polarizer #{k} {} has dimension {}, domain has N = {dim}",
                        describe(spec),
                        p.dim()
                    )));
                }
                Ok(p)
            })
            .collect(),
    }
}

#[derive(Serialize)]
struct PolarizeReport {
    mode: PolarizerMode,
    exponent: f64,
    steps: Vec<PolarizationStep>,
    final_distance: f64,
    initial_distance: f64,
}

fn polarize_cmd(run: &Run) -> Outcome {
    let u = run.require_input()?;
    let model = match run.cfg.preset {
        Some(_) => Some(run.model()?),
        None => None,
    };
    let p = model.as_ref().map_or(run.cfg.params.p.unwrap_or(2.0), VariationalModel::p);
    let domain = u.domain().clone();
    let (last, steps) = match run.cfg.polarizers.mode {
        PolarizerMode::Exact => {
            let seq = exact_sequence(run, &domain)?;
            iterate_polarizations(&u, &seq, seq.items.len(), 0.0, p, model.as_ref())?
        }
        PolarizerMode::General => {
            let pols = general_sequence(run, &domain)?;
            let star = schwarz_symmetrize(&u)?;
            let record = |step: usize, v: &GridFunction| -> Result<PolarizationStep, Failure> {
                let e = model.as_ref().map(|m| energy(v, m)).transpose()?;
                Ok(PolarizationStep {
                    step,
                    distance: lp_distance(v, &star, p)?,
                    grad_norm_p: grad_lp_norm(v, p)?.powf(p),
                    constraint: e.map(|e| e.w),
                    integrand: e.map(|e| e.j),
                    nonlinear: e.map(|e| e.fterm),
                })
            };
            let mut current = u.clone();
            let mut steps = vec![record(0, &current)?];
            for (k, q) in pols.iter().enumerate() {
                current = polarize_general(&current, q)?;
                steps.push(record(k + 1, &current)?);
            }
            (current, steps)
        }
    };
    run.field("u_polarized", &last)?;
    if run.cfg.emit.csv {
        let rows: Vec<Vec<f64>> = steps.iter().map(|s| vec![s.step as f64, s.distance, s.grad_norm_p]).collect();
        run.write("polarize.csv", &table_csv(&["step", "distance", "grad_norm_p"], &rows))?;
    }
    let report = PolarizeReport {
        mode: run.cfg.polarizers.mode,
        exponent: p,
        initial_distance: steps[0].distance,
        final_distance: steps.last().map_or(0.0, |s| s.distance),
        steps,
    };
    run.report(true, report)
}

fn lint_model(run: &Run) -> Outcome {
    let model = run.model()?;
    let (s, t) = default_samples();
    let report = validate_growth(&model, &s, &t);
    run.report(report.passed, &report)
}

#[derive(Serialize)]
struct RefineReport<'a> {
    table: &'a radsym::harness::RefinementTable,
    polya_szego_ratios: Vec<Option<f64>>,
    rel_lp_ratios: Vec<Option<f64>>,
    max_ratio: f64,
}

fn refine(run: &Run) -> Outcome {
    let model = run.model()?;
    if model.dim != 2 {
        return Err(usage(format!("refine supports N = 2 presets, {} has N = {}", model.name, model.dim)));
    }
    let protocol = RefinementProtocol {
        radius: run.cfg.domain.radius,
        start_height: Some(run.cfg.start.height),
        start_center: run.start_center(2),
        options: run.cfg.options.clone(),
        thresholds: run.cfg.thresholds,
        ..RefinementProtocol::default()
    };
    let table = refinement_study(&model, &run.cfg.refine.h_list, &protocol)?;
    let ps = table.ratios(|r| Some(r.polya_szego_gap));
    let rel = table.ratios(|r| r.rel_lp_distance);
    let limit = run.cfg.refine.max_ratio;
    let verdict = ps.iter().chain(&rel).all(|r| matches!(r, Some(x) if *x <= limit));
    if run.cfg.emit.csv {
        let rows: Vec<Vec<f64>> = table
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.h,
                    r.polya_szego_gap,
                    r.polya_szego_gap_max,
                    r.polarization_gap,
                    r.rel_lp_distance.unwrap_or(f64::NAN),
                    r.energy_gap.unwrap_or(f64::NAN),
                ]
            })
            .collect();
        let header =
            ["h", "polya_szego_gap", "polya_szego_gap_max", "polarization_gap", "rel_lp_distance", "energy_gap"];
        run.write("refine.csv", &table_csv(&header, &rows))?;
    }
    run.report(verdict, RefineReport { table: &table, polya_szego_ratios: ps, rel_lp_ratios: rel, max_ratio: limit })
}
