//! Audits of the symmetry argument on computed minimizers: symmetry verdict,
//! iterated-polarization tables and discretization refinement studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{critical_set_measure, energy, estimate_lambda, test_bank, EnergyBreakdown};
use crate::grid::{grad_lp_norm, lp_norm, make_domain, GridFunction, Shape, MAX_DIM};
use crate::model::{feasible_start_at, VariationalModel};
use crate::optimize::{minimize, MinimizeOptions, MinimizeResult, StopReason};
use crate::rearrange::{
    distribution_function, lp_distance, polarize, schwarz_symmetrize, smooth_bump, tie_slack, GridExactPolarizer,
    PolarizerSequence,
};
use crate::{Error, Result};

/// Value-weighted centroid in cell-index units.
fn centroid(u: &GridFunction) -> Result<[f64; MAX_DIM]> {
    let d = u.domain();
    let mut c = [0.0; MAX_DIM];
    let mut mass = 0.0;
    for i in 0..d.len() {
        let v = u.get(i);
        if v == 0.0 {
            continue;
        }
        let m = d.multi_index(i);
        for k in 0..d.dim() {
            c[k] += v * m[k] as f64;
        }
        mass += v;
    }
    if !(mass > 0.0) {
        return Err(Error::Degenerate("alignment needs a function with positive mass".into()));
    }
    for ck in c.iter_mut() {
        *ck /= mass;
    }
    Ok(c)
}

/// Translates `u` by an integer cell vector; cells shifted in from outside
/// the box read zero.
pub fn shift_cells(u: &GridFunction, shift: &[i64]) -> Result<GridFunction> {
    let d = u.domain();
    let mut out = vec![0.0; d.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        if !d.is_active(i) {
            continue;
        }
        let m = d.multi_index(i);
        let mut src = [0i64; MAX_DIM];
        for k in 0..d.dim() {
            src[k] = m[k] as i64 - shift[k];
        }
        *slot = d.checked_index(&src).map_or(0.0, |j| u.get(j));
    }
    GridFunction::new(d.clone(), out)
}

/// Integer-cell translate of `u_star` matching the centroid of `u`. Ball
/// domains always use the zero shift.
pub fn align(u: &GridFunction, u_star: &GridFunction) -> Result<(GridFunction, Vec<i64>)> {
    let d = u.domain();
    let dim = d.dim();
    let cu = centroid(u)?;
    let cs = centroid(u_star)?;
    if let Shape::Ball { .. } = d.shape() {
        return Ok((u_star.clone(), vec![0; dim]));
    }
    let shift: Vec<i64> = (0..dim).map(|k| (cu[k] - cs[k]).round() as i64).collect();
    Ok((shift_cells(u_star, &shift)?, shift))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub rel_lp_distance: f64,
    /// Maximum critical-set measure as a fraction of the support measure.
    pub cstar_fraction: f64,
    /// Critical-set tolerances relative to `max u*` (values) and
    /// `max u* / h` (gradients).
    pub cstar_rel_eps: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { rel_lp_distance: 0.05, cstar_fraction: 0.02, cstar_rel_eps: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// `‖u - T(u*)‖_p / ‖u‖_p` after alignment `T`.
    pub rel_lp_distance: f64,
    /// `E(u) - E(u*)`.
    pub energy_gap: f64,
    /// `grad_lp_norm(u, p) - grad_lp_norm(u*, p)`.
    pub grad_norm_gap: f64,
    pub cstar_measure: f64,
    pub support_measure: f64,
    pub shift: Vec<i64>,
    pub verdict: bool,
    pub thresholds: Thresholds,
    pub energy: EnergyBreakdown,
    pub energy_star: EnergyBreakdown,
    /// Whether `E(u*) <= E(u) + 1e-8·(|J| + |Fterm|)`.
    pub symmetrized_energy_not_higher: bool,
    /// Whether `grad_lp_norm(u*, p) <= grad_lp_norm(u, p)` up to `1e-10` relative.
    pub grad_norm_not_higher: bool,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: Option<StopReason>,
    pub proj_grad_norm: Option<f64>,
    pub lambda: Option<f64>,
}

/// Compares `u` with its Schwarz symmetrization.
pub fn symmetry_report(model: &VariationalModel, u: &GridFunction, thresholds: Thresholds) -> Result<SymmetryReport> {
    let p = model.p();
    let star = schwarz_symmetrize(u)?;
    let (aligned, shift) = align(u, &star)?;
    let norm = lp_norm(u, p)?;
    let rel = if norm > 0.0 { lp_distance(u, &aligned, p)? / norm } else { 0.0 };
    let e = energy(u, model)?;
    let es = energy(&star, model)?;
    let gu = grad_lp_norm(u, p)?;
    let gs = grad_lp_norm(&star, p)?;
    let top = star.max();
    let eps = thresholds.cstar_rel_eps * top;
    let cstar = critical_set_measure(&star, eps / u.domain().spacing(), eps);
    let support = distribution_function(&star, 0.0);
    let verdict = rel <= thresholds.rel_lp_distance && cstar <= thresholds.cstar_fraction * support;
    Ok(SymmetryReport {
        rel_lp_distance: rel,
        energy_gap: e.e - es.e,
        grad_norm_gap: gu - gs,
        cstar_measure: cstar,
        support_measure: support,
        shift,
        verdict,
        thresholds,
        energy: e,
        energy_star: es,
        symmetrized_energy_not_higher: es.e <= e.e + 1e-8 * e.scale(),
        grad_norm_not_higher: gs <= gu * (1.0 + 1e-10),
        iterations: 0,
        converged: false,
        stop_reason: None,
        proj_grad_norm: None,
        lambda: None,
    })
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub report: SymmetryReport,
    pub result: MinimizeResult,
    pub u_star: GridFunction,
}

/// Minimizes from `u0` and compares the minimizer with its symmetrization.
pub fn verify_theorem(
    model: &VariationalModel,
    u0: &GridFunction,
    opts: &MinimizeOptions,
    thresholds: Thresholds,
) -> Result<Verification> {
    let result = minimize(model, u0, opts)?;
    let mut report = symmetry_report(model, &result.u_final, thresholds)?;
    report.iterations = result.iterations;
    report.converged = result.converged;
    report.stop_reason = Some(result.stop_reason);
    report.proj_grad_norm = Some(result.proj_grad_norm);
    report.lambda = Some(result.lambda);
    let u_star = schwarz_symmetrize(&result.u_final)?;
    Ok(Verification { report, result, u_star })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AuditRow {
    pub n: usize,
    /// `‖u_n - u*‖_p`.
    pub distance: f64,
    #[serde(rename = "W")]
    pub w: f64,
    /// `grad_lp_norm(u_n, p)^p`.
    pub grad_norm_p: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Fterm")]
    pub fterm: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub lambda: f64,
    /// `grad_lp_norm(u_n - u*, p)`, recorded only.
    pub grad_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AuditFlag {
    pub n: usize,
    pub kind: String,
    pub amount: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolarizationAudit {
    pub rows: Vec<AuditRow>,
    pub flags: Vec<AuditFlag>,
    /// `E(u*)` for the energy chain `E(u*) <= E(u_n)`.
    pub energy_star: f64,
    pub lambda_cv: f64,
    pub tie_slack: f64,
}

impl PolarizationAudit {
    pub fn flags_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a AuditFlag> + 'a {
        self.flags.iter().filter(move |f| f.kind == kind)
    }
}

/// Polarizes `u` along `seq` for up to `n_max` steps, tabulating the
/// quantities the symmetry argument tracks and flagging steps where `W`
/// moves, `J` or the `p`-Dirichlet energy rises, `Fterm` falls, the distance
/// to `u*` rises beyond the tie slack, or `E(u*) > E(u_n)`.
pub fn polarization_audit(
    u: &GridFunction,
    model: &VariationalModel,
    seq: &PolarizerSequence,
    n_max: usize,
) -> Result<PolarizationAudit> {
    u.require_nonnegative()?;
    let p = model.p();
    let star = schwarz_symmetrize(u)?;
    let e_star = energy(&star, model)?.e;
    let slack = tie_slack(&star, p)?;
    let tests = test_bank(u, 10, seq.seed)?;
    let row = |n: usize, v: &GridFunction| -> Result<AuditRow> {
        let e = energy(v, model)?;
        let lambda = estimate_lambda(v, model, &tests).map_or(f64::NAN, |l| l.lambda);
        Ok(AuditRow {
            n,
            distance: lp_distance(v, &star, p)?,
            w: e.w,
            grad_norm_p: grad_lp_norm(v, p)?.powf(p),
            j: e.j,
            fterm: e.fterm,
            e: e.e,
            lambda,
            grad_distance: grad_lp_norm(&v.axpy(-1.0, &star)?, p)?,
        })
    };
    let mut rows = vec![row(0, u)?];
    let mut current = u.clone();
    let steps = if rows[0].distance == 0.0 || seq.items.is_empty() { 0 } else { n_max };
    for n in 1..=steps {
        current = polarize(&current, &seq.items[(n - 1) % seq.items.len()])?;
        rows.push(row(n, &current)?);
    }

    let mut flags = Vec::new();
    let w0 = rows[0].w;
    for r in &rows {
        let scale = r.j.abs() + r.fterm.abs();
        if (r.w - w0).abs() > 1e-10 * w0.abs().max(f64::MIN_POSITIVE) {
            flags.push(AuditFlag { n: r.n, kind: "constraint_moved".into(), amount: r.w - w0 });
        }
        if e_star > r.e + 1e-8 * scale {
            flags.push(AuditFlag { n: r.n, kind: "energy_chain".into(), amount: e_star - r.e });
        }
    }
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let scale = a.j.abs() + a.fterm.abs();
        if b.j > a.j + 1e-10 * scale {
            flags.push(AuditFlag { n: b.n, kind: "integrand_increase".into(), amount: b.j - a.j });
        }
        if b.grad_norm_p > a.grad_norm_p + 1e-10 * a.grad_norm_p {
            flags.push(AuditFlag { n: b.n, kind: "dirichlet_increase".into(), amount: b.grad_norm_p - a.grad_norm_p });
        }
        if b.fterm < a.fterm - 1e-12 * scale {
            flags.push(AuditFlag { n: b.n, kind: "nonlinear_decrease".into(), amount: a.fterm - b.fterm });
        }
        if b.distance > a.distance + slack + 1e-12 * a.distance {
            flags.push(AuditFlag { n: b.n, kind: "distance_increase".into(), amount: b.distance - a.distance });
        }
    }
    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).filter(|l| l.is_finite()).collect();
    let lambda_cv = coefficient_of_variation(&lambdas);
    Ok(PolarizationAudit { rows, flags, energy_star: e_star, lambda_cv, tie_slack: slack })
}

fn coefficient_of_variation(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if mean == 0.0 {
        if var == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        var.sqrt() / mean.abs()
    }
}

/// A smooth bump `height·(1 - |x - center|²/width²)₊²` of the refinement family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementProtocol {
    /// Ball radius; the box half extent equals it.
    pub radius: f64,
    pub family: Vec<BumpSpec>,
    /// Polarizers on the coarsest grid; offsets are rescaled by `h_0/h` so
    /// the half-spaces stay fixed in physical coordinates.
    pub polarizers: Vec<GridExactPolarizer>,
    /// Plateau height and center of the feasible start for the verification
    /// runs; `None` skips them.
    pub start_height: Option<f64>,
    pub start_center: Vec<f64>,
    pub options: MinimizeOptions,
    pub thresholds: Thresholds,
}

impl BumpSpec {
    /// `count` bumps in 2D with centers at radius `[0.2, 1.0)`, widths
    /// `[1.0, 1.6)` and unit height, drawn from `seed`.
    pub fn seeded_family(seed: u64, count: usize) -> Vec<BumpSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let r: f64 = rng.random_range(0.2..1.0);
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                BumpSpec {
                    center: vec![r * theta.cos(), r * theta.sin()],
                    width: rng.random_range(1.0..1.6),
                    height: 1.0,
                }
            })
            .collect()
    }
}

/// One-cell polarizers in every lattice direction of the plane.
fn unit_polarizers() -> Vec<GridExactPolarizer> {
    let mut out = Vec::new();
    for axis in 0..2 {
        for sign in [1, -1] {
            out.push(GridExactPolarizer::Axis { axis, offset_cells: 1, sign });
        }
    }
    for sign in [1, -1] {
        for diag in [1, -1] {
            out.push(GridExactPolarizer::Diag { diag, offset_cells: 1, sign });
        }
    }
    out
}

impl Default for RefinementProtocol {
    fn default() -> Self {
        RefinementProtocol {
            radius: 3.0,
            family: BumpSpec::seeded_family(7, 12),
            polarizers: unit_polarizers(),
            start_height: Some(0.5),
            start_center: vec![0.75, 0.5],
            options: MinimizeOptions { grad_tol: 1e-4, ..MinimizeOptions::default() },
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementRow {
    pub h: f64,
    /// Family mean of `max(0, J(u*) - J(u))`.
    pub polya_szego_gap: f64,
    /// Family maximum of `max(0, J(u*) - J(u))`.
    pub polya_szego_gap_max: f64,
    /// Mean over polarizers and sums of neighbouring family members of
    /// `grad_lp_norm(u)^p - grad_lp_norm(u^H)^p`; the continuum value is zero.
    pub polarization_gap: f64,
    pub rel_lp_distance: Option<f64>,
    pub energy_gap: Option<f64>,
    pub verdict: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementTable {
    pub model: String,
    pub rows: Vec<RefinementRow>,
}

impl RefinementTable {
    /// Ratio of consecutive entries of a column, `None` when a value is missing.
    pub fn ratios(&self, column: impl Fn(&RefinementRow) -> Option<f64>) -> Vec<Option<f64>> {
        self.rows
            .windows(2)
            .map(|w| match (column(&w[0]), column(&w[1])) {
                (Some(a), Some(b)) if a > 0.0 => Some(b / a),
                (Some(a), Some(b)) if a == 0.0 && b == 0.0 => Some(0.0),
                _ => None,
            })
            .collect()
    }
}

fn rescale(p: &GridExactPolarizer, factor: u32) -> GridExactPolarizer {
    match *p {
        GridExactPolarizer::Axis { axis, offset_cells, sign } => {
            GridExactPolarizer::Axis { axis, offset_cells: offset_cells * factor, sign }
        }
        GridExactPolarizer::Diag { diag, offset_cells, sign } => {
            GridExactPolarizer::Diag { diag, offset_cells: offset_cells * factor, sign }
        }
    }
}

/// Tabulates discretization gaps for each spacing in `h_list` (decreasing,
/// with `h_0/h` an integer).
pub fn refinement_study(
    model: &VariationalModel,
    h_list: &[f64],
    protocol: &RefinementProtocol,
) -> Result<RefinementTable> {
    if h_list.is_empty() {
        return Err(Error::Degenerate("empty spacing list".into()));
    }
    let h0 = h_list[0];
    let p = model.p();
    let mut rows = Vec::new();
    for (k, &h) in h_list.iter().enumerate() {
        if k > 0 && !(h < h_list[k - 1]) {
            return Err(Error::InvalidDomain("spacings must be strictly decreasing".into()));
        }
        let ratio = h0 / h;
        let factor = ratio.round();
        if (ratio - factor).abs() > 1e-9 * ratio {
            return Err(Error::InvalidDomain(format!("h_0/h = {ratio} is not an integer")));
        }
        let domain = make_domain(model.dim, Shape::Ball { radius: protocol.radius }, protocol.radius, h)?;
        let pols: Vec<GridExactPolarizer> = protocol.polarizers.iter().map(|q| rescale(q, factor as u32)).collect();
        let mut ps_sum = 0.0f64;
        let mut ps_max = 0.0f64;
        let mut pol_sum = 0.0f64;
        let mut bumps = Vec::with_capacity(protocol.family.len());
        for bump in &protocol.family {
            let u = smooth_bump(&domain, &bump.center, bump.width, bump.height)?;
            let star = schwarz_symmetrize(&u)?;
            let ju = energy(&u, model)?.j;
            let js = energy(&star, model)?.j;
            ps_sum += (js - ju).max(0.0);
            ps_max = ps_max.max(js - ju);
            bumps.push(u);
        }
        // A single radial bump polarizes to itself or its mirror image, so
        // the polarization column uses sums of neighbouring members.
        for k in 0..bumps.len().saturating_sub(1) {
            let mut values = bumps[k].values().to_vec();
            for (v, w) in values.iter_mut().zip(bumps[k + 1].values()) {
                *v += w;
            }
            let u = GridFunction::new(domain.clone(), values)?;
            let gu = grad_lp_norm(&u, p)?.powf(p);
            for q in &pols {
                let gh = grad_lp_norm(&polarize(&u, q)?, p)?.powf(p);
                pol_sum += gu - gh;
            }
        }
        let members = protocol.family.len().max(1) as f64;
        let pairs = (protocol.family.len().saturating_sub(1) * pols.len()).max(1) as f64;
        let (rel, gap, verdict) = match protocol.start_height {
            Some(s0) => {
                let u0 = feasible_start_at(model, s0, &domain, &protocol.start_center)?;
                let v = verify_theorem(model, &u0, &protocol.options, protocol.thresholds)?;
                (Some(v.report.rel_lp_distance), Some(-v.report.energy_gap), Some(v.report.verdict))
            }
            None => (None, None, None),
        };
        rows.push(RefinementRow {
            h,
            polya_szego_gap: ps_sum / members,
            polya_szego_gap_max: ps_max.max(0.0),
            polarization_gap: pol_sum / pairs,
            rel_lp_distance: rel,
            energy_gap: gap,
            verdict,
        });
    }
    Ok(RefinementTable { model: model.name.clone(), rows })
}
