//! Variational models `E(u) = ∫ j(u,|Du|) - ∫ F(|x|,u)` subject to
//! `∫ G(u) = 1`, with closed-form presets and a numerical audit of the
//! structural and growth conditions the symmetry argument needs.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::grid::{integrate, GridDomain, GridFunction, Shape};
use crate::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type PairFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

fn pair(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> PairFn {
    Arc::new(f)
}

/// Integrand `j(s, t)` for `t = |Du| >= 0`, its partials and growth envelope
/// `α0 t^p <= j(s,t) <= α(|s|) t^p`, `|j_s| <= β(|s|) t^p`,
/// `|j_t| <= γ(|s|) t^(p-1)`.
#[derive(Clone)]
pub struct IntegrandJ {
    pub j: PairFn,
    pub j_s: PairFn,
    pub j_t: PairFn,
    pub j_st: PairFn,
    pub p: f64,
    pub alpha0: f64,
    pub alpha: ScalarFn,
    pub beta: ScalarFn,
    pub gamma: ScalarFn,
}

/// Nonlinearity `F(r, s) = ∫_0^s f(r, σ) dσ` with radial weight `a(r)` and
/// growth constant `C`: `|f(r,s)| <= a(r) + C|s|^(p*-1)`.
#[derive(Clone)]
pub struct NonlinearityF {
    pub f: PairFn,
    pub big_f: PairFn,
    pub weight: ScalarFn,
    pub c: f64,
}

/// Constraint density `G(s) = ∫_0^s g`, with `|g(s)| <= C(|s|^(p-1) + |s|^(p*-1))`.
#[derive(Clone)]
pub struct ConstraintG {
    pub g: ScalarFn,
    pub big_g: ScalarFn,
    pub c: f64,
    /// `Some(q)` when `G(θs) = θ^q G(s)` for `θ > 0`; enables closed-form
    /// projection onto the constraint.
    pub homogeneity: Option<f64>,
}

#[derive(Clone)]
pub struct VariationalModel {
    pub name: String,
    pub dim: usize,
    pub integrand: IntegrandJ,
    pub nonlinearity: NonlinearityF,
    pub constraint: ConstraintG,
}

impl fmt::Debug for VariationalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VariationalModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("p", &self.integrand.p)
            .finish_non_exhaustive()
    }
}

impl VariationalModel {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        integrand: IntegrandJ,
        nonlinearity: NonlinearityF,
        constraint: ConstraintG,
    ) -> Result<Self> {
        sobolev_exponent(integrand.p, dim)?;
        Ok(VariationalModel { name: name.into(), dim, integrand, nonlinearity, constraint })
    }

    pub fn p(&self) -> f64 {
        self.integrand.p
    }

    pub fn critical_exponent(&self) -> f64 {
        let (p, n) = (self.p(), self.dim as f64);
        n * p / (n - p)
    }

    /// Whether `j(s, t) = t^p` exactly (no `s` dependence), as for the
    /// `plaplace` and `eigen3d` presets.
    pub fn is_pure_power(&self) -> bool {
        self.name == "plaplace" || self.name == "eigen3d"
    }
}

/// Scalar overrides for presets.
#[derive(Debug, Clone, Copy, Default)]
pub struct PresetParams {
    pub p: Option<f64>,
    pub sigma: Option<f64>,
}

pub const PRESET_NAMES: [&str; 3] = ["plaplace", "quasilinear", "eigen3d"];

pub fn preset(name: &str) -> Result<VariationalModel> {
    preset_with(name, PresetParams::default())
}

/// Closed-form presets:
///
/// * `plaplace`: `N = 2`, `p = 1.5`, `j = t^p`, `F = e^{-r} s₊^σ` with `σ = 2`,
///   `G = |s|^p`;
/// * `quasilinear`: as `plaplace` but `j = (1 + s²/(1+s²)) t^p`;
/// * `eigen3d`: `N = 3`, `p = 2`, `j = t²`, `F = 0`, `G = s²`.
pub fn preset_with(name: &str, params: PresetParams) -> Result<VariationalModel> {
    match name {
        "plaplace" | "quasilinear" => {
            let p = params.p.unwrap_or(1.5);
            let sigma = params.sigma.unwrap_or(2.0);
            if !(sigma >= 1.0) {
                return Err(Error::InvalidExponent(format!("sigma = {sigma} must be >= 1")));
            }
            let integrand = if name == "plaplace" { power_integrand(p) } else { quasilinear_integrand(p) };
            VariationalModel::new(name, 2, integrand, weighted_power_nonlinearity(sigma), power_constraint(p))
        }
        "eigen3d" => {
            let p = params.p.unwrap_or(2.0);
            let zero = NonlinearityF { f: pair(|_, _| 0.0), big_f: pair(|_, _| 0.0), weight: scalar(|_| 0.0), c: 0.0 };
            VariationalModel::new(name, 3, power_integrand(p), zero, power_constraint(p))
        }
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

fn power_integrand(p: f64) -> IntegrandJ {
    IntegrandJ {
        j: pair(move |_, t| t.abs().powf(p)),
        j_s: pair(|_, _| 0.0),
        j_t: pair(move |_, t| p * t.abs().powf(p - 1.0)),
        j_st: pair(|_, _| 0.0),
        p,
        alpha0: 1.0,
        alpha: scalar(|_| 1.0),
        beta: scalar(|_| 0.0),
        gamma: scalar(move |_| p),
    }
}

fn quasilinear_integrand(p: f64) -> IntegrandJ {
    // coefficient a(s) = 1 + s²/(1+s²) ∈ [1, 2), a'(s) = 2s/(1+s²)², |a'| <= 3√3/8
    let coef = |s: f64| 1.0 + s * s / (1.0 + s * s);
    let dcoef = |s: f64| 2.0 * s / (1.0 + s * s).powi(2);
    IntegrandJ {
        j: pair(move |s, t| coef(s) * t.abs().powf(p)),
        j_s: pair(move |s, t| dcoef(s) * t.abs().powf(p)),
        j_t: pair(move |s, t| p * coef(s) * t.abs().powf(p - 1.0)),
        j_st: pair(move |s, t| p * dcoef(s) * t.abs().powf(p - 1.0)),
        p,
        alpha0: 1.0,
        alpha: scalar(|_| 2.0),
        beta: scalar(|_| 0.65),
        gamma: scalar(move |_| 2.0 * p),
    }
}

fn weighted_power_nonlinearity(sigma: f64) -> NonlinearityF {
    NonlinearityF {
        f: pair(move |r, s| sigma * (-r).exp() * s.max(0.0).powf(sigma - 1.0)),
        big_f: pair(move |r, s| (-r).exp() * s.max(0.0).powf(sigma)),
        weight: scalar(move |r| sigma * (-r).exp()),
        c: sigma,
    }
}

fn power_constraint(p: f64) -> ConstraintG {
    ConstraintG {
        g: scalar(move |s| p * s.abs().powf(p - 1.0) * s.signum() * (s != 0.0) as u8 as f64),
        big_g: scalar(move |s| s.abs().powf(p)),
        c: p.max(1.0),
        homogeneity: Some(p),
    }
}

fn check_p_n(p: f64, n: usize) -> Result<()> {
    let nf = n as f64;
    if p > 1.0 && p < nf && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidExponent(format!("need 1 < p < N, got p = {p}, N = {n}")))
    }
}

/// Critical Sobolev exponent `Np / (N - p)`.
pub fn sobolev_exponent(p: f64, n: usize) -> Result<f64> {
    check_p_n(p, n)?;
    let nf = n as f64;
    Ok(nf * p / (nf - p))
}

/// Admissible window `(p, p + p²/N)` for the power `σ` of a pure power
/// nonlinearity.
pub fn sigma_window(p: f64, n: usize) -> Result<(f64, f64)> {
    check_p_n(p, n)?;
    Ok((p, p + p * p / n as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    /// Variant conditions are reported but do not affect `passed`.
    pub required: bool,
    pub passed: bool,
    /// Smallest `(rhs - lhs)` over the samples, relative to the local scale.
    pub worst_margin: f64,
    /// Sample where the worst margin occurred, as `[s, t]` or `[r, s]`.
    pub worst_at: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub model: String,
    pub passed: bool,
    pub checks: Vec<ConditionCheck>,
}

impl AuditReport {
    pub fn check(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

const AUDIT_TOL: f64 = 1e-12;

struct Tracker {
    name: &'static str,
    required: bool,
    strict: bool,
    worst: f64,
    at: [f64; 2],
}

impl Tracker {
    fn new(name: &'static str, required: bool, strict: bool) -> Self {
        Tracker { name, required, strict, worst: f64::INFINITY, at: [f64::NAN; 2] }
    }

    /// Records `lhs <= rhs` at a sample.
    fn le(&mut self, lhs: f64, rhs: f64, at: [f64; 2]) {
        let scale = 1.0f64.max(lhs.abs() + rhs.abs());
        let m = if lhs.is_finite() && rhs.is_finite() { (rhs - lhs) / scale } else { f64::NEG_INFINITY };
        if m < self.worst {
            self.worst = m;
            self.at = at;
        }
    }

    fn finish(self) -> ConditionCheck {
        let passed = if self.strict { self.worst > 0.0 } else { self.worst >= -AUDIT_TOL };
        ConditionCheck { name: self.name, required: self.required, passed, worst_margin: self.worst, worst_at: self.at }
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Radii at which the `F` conditions are sampled.
fn radius_samples() -> Vec<f64> {
    (0..=24).map(|k| 0.25 * k as f64).collect()
}

/// Numerically audits the model's structural and growth conditions on the
/// given samples. `t_samples` should be nonnegative; negative entries are
/// ignored.
pub fn validate_growth(model: &VariationalModel, s_samples: &[f64], t_samples: &[f64]) -> AuditReport {
    let jj = &model.integrand;
    let p = jj.p;
    let p_star = model.critical_exponent();
    let mut ts: Vec<f64> = t_samples.iter().copied().filter(|t| *t >= 0.0 && t.is_finite()).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let rs = radius_samples();

    let mut checks = Vec::new();

    let mut zero_t = Tracker::new("integrand_vanishes_at_zero_gradient", true, false);
    let mut convex = Tracker::new("integrand_strictly_convex_in_t", true, true);
    let mut increasing = Tracker::new("integrand_increasing_in_t", true, true);
    let mut lower = Tracker::new("integrand_lower_envelope", true, false);
    let mut upper = Tracker::new("integrand_upper_envelope", true, false);
    let mut ds = Tracker::new("integrand_s_derivative_bound", true, false);
    let mut dt = Tracker::new("integrand_t_derivative_bound", true, false);
    let mut dt_pos = Tracker::new("integrand_t_derivative_positive", true, true);
    for &s in s_samples {
        let a = s.abs();
        zero_t.le((jj.j)(s, 0.0).abs(), 0.0, [s, 0.0]);
        for w in ts.windows(3) {
            let (t0, t1, t2) = (w[0], w[1], w[2]);
            let (j0, j1, j2) = ((jj.j)(s, t0), (jj.j)(s, t1), (jj.j)(s, t2));
            let slope_lo = (j1 - j0) / (t1 - t0);
            let slope_hi = (j2 - j1) / (t2 - t1);
            let scale = 1.0f64.max(slope_lo.abs() + slope_hi.abs());
            let m = (slope_hi - slope_lo) / scale;
            if m < convex.worst {
                convex.worst = m;
                convex.at = [s, t1];
            }
        }
        for w in ts.windows(2) {
            let m = (jj.j)(s, w[1]) - (jj.j)(s, w[0]);
            if m < increasing.worst {
                increasing.worst = m;
                increasing.at = [s, w[1]];
            }
        }
        for &t in &ts {
            let tp = t.powf(p);
            let jv = (jj.j)(s, t);
            lower.le(jj.alpha0 * tp, jv, [s, t]);
            upper.le(jv, (jj.alpha)(a) * tp, [s, t]);
            ds.le((jj.j_s)(s, t).abs(), (jj.beta)(a) * tp, [s, t]);
            dt.le((jj.j_t)(s, t).abs(), (jj.gamma)(a) * t.powf(p - 1.0), [s, t]);
            if t > 0.0 {
                let v = (jj.j_t)(s, t);
                if v < dt_pos.worst {
                    dt_pos.worst = v;
                    dt_pos.at = [s, t];
                }
            }
        }
    }
    if !(jj.alpha0 > 0.0) {
        lower.worst = f64::NEG_INFINITY;
    }
    checks.extend([zero_t, convex, increasing, lower, upper, ds, dt, dt_pos].map(Tracker::finish));

    let nl = &model.nonlinearity;
    let mut f_growth = Tracker::new("nonlinearity_growth", true, false);
    let mut f_power = Tracker::new("nonlinearity_growth_power_variant", false, false);
    let mut f_nonneg = Tracker::new("nonlinearity_nonnegative_on_positive_values", false, false);
    let mut big_f_growth = Tracker::new("nonlinearity_primitive_growth", true, false);
    let mut big_f_power = Tracker::new("nonlinearity_primitive_growth_power_variant", false, false);
    let mut f_radial = Tracker::new("nonlinearity_radially_nonincreasing", true, false);
    let mut f_zero = Tracker::new("nonlinearity_vanishes_at_zero", true, false);
    let mut f_primitive = Tracker::new("nonlinearity_primitive_consistent", true, false);
    for &r in &rs {
        f_zero.le((nl.big_f)(r, 0.0).abs(), 0.0, [r, 0.0]);
        for &s in s_samples {
            let a = s.abs();
            let fv = (nl.f)(r, s);
            let big = (nl.big_f)(r, s);
            f_growth.le(fv.abs(), (nl.weight)(r) + nl.c * a.powf(p_star - 1.0), [r, s]);
            f_power.le(fv.abs(), nl.c * (a.powf(p - 1.0) + a.powf(p_star - 1.0)), [r, s]);
            big_f_growth.le(big.abs(), (nl.weight)(r) * a + nl.c * a.powf(p_star), [r, s]);
            big_f_power.le(big.abs(), nl.c * (a.powf(p) + a.powf(p_star)), [r, s]);
            if s >= 0.0 {
                f_nonneg.le(0.0, fv, [r, s]);
            }
            let quad = adaptive_simpson(&|x| (nl.f)(r, x), 0.0, s, 1e-12);
            // absolute tolerance as in the antiderivative property
            let err = (big - quad).abs();
            if -err < f_primitive.worst {
                f_primitive.worst = -err;
                f_primitive.at = [r, s];
            }
        }
    }
    for (k, &r1) in rs.iter().enumerate() {
        for &r2 in &rs[k..] {
            for &s in s_samples.iter().filter(|s| **s >= 0.0) {
                f_radial.le((nl.f)(r2, s), (nl.f)(r1, s), [r1, s]);
            }
        }
    }
    f_primitive.worst += 1e-8 - AUDIT_TOL.min(1e-8);
    checks.extend(
        [f_growth, f_power, f_nonneg, big_f_growth, big_f_power, f_radial, f_zero, f_primitive].map(Tracker::finish),
    );

    let cg = &model.constraint;
    let mut g_growth = Tracker::new("constraint_growth", true, false);
    let mut big_g_growth = Tracker::new("constraint_primitive_growth", true, false);
    let mut g_zero = Tracker::new("constraint_vanishes_at_zero", true, false);
    let mut g_nondegenerate = Tracker::new("constraint_nondegenerate", true, true);
    let mut g_primitive = Tracker::new("constraint_primitive_consistent", true, false);
    g_zero.le((cg.big_g)(0.0).abs(), 0.0, [0.0, 0.0]);
    for &s in s_samples {
        let a = s.abs();
        g_growth.le((cg.g)(s).abs(), cg.c * (a.powf(p - 1.0) + a.powf(p_star - 1.0)), [s, 0.0]);
        big_g_growth.le((cg.big_g)(s).abs(), cg.c * (a.powf(p) + a.powf(p_star)), [s, 0.0]);
        if s != 0.0 {
            let v = (cg.g)(s).abs();
            if v < g_nondegenerate.worst {
                g_nondegenerate.worst = v;
                g_nondegenerate.at = [s, 0.0];
            }
        }
        let quad = adaptive_simpson(&|x| (cg.g)(x), 0.0, s, 1e-12);
        let err = ((cg.big_g)(s) - quad).abs();
        if -err < g_primitive.worst {
            g_primitive.worst = -err;
            g_primitive.at = [s, 0.0];
        }
    }
    g_primitive.worst += 1e-8 - AUDIT_TOL.min(1e-8);
    checks.extend([g_growth, big_g_growth, g_zero, g_nondegenerate, g_primitive].map(Tracker::finish));

    let passed = checks.iter().all(|c| c.passed || !c.required);
    AuditReport { model: model.name.clone(), passed, checks }
}

/// Default sample sets for [`validate_growth`]: `s ∈ [-4, 4]`, `t ∈ [0, 8]`.
pub fn default_samples() -> (Vec<f64>, Vec<f64>) {
    let s = (-32..=32).map(|k| k as f64 / 8.0).collect();
    let t = (0..=64).map(|k| k as f64 / 8.0).collect();
    (s, t)
}

/// Plateau-with-linear-skirt profile of height `s0`: plateau radius `rho`,
/// skirt width `rho / 2`.
fn plateau(d: f64, rho: f64, s0: f64) -> f64 {
    let skirt = 0.5 * rho;
    if d <= rho {
        s0
    } else if d < rho + skirt {
        s0 * (1.0 - (d - rho) / skirt)
    } else {
        0.0
    }
}

fn constraint_integral(model: &VariationalModel, u: &GridFunction) -> f64 {
    let g = &model.constraint.big_g;
    integrate(&u.field(|_, v| g(v)))
}

/// Builds a compactly supported feasible function of height `s0` centered at
/// the origin; see [`feasible_start_at`].
pub fn feasible_start(model: &VariationalModel, s0: f64, domain: &Arc<GridDomain>) -> Result<GridFunction> {
    feasible_start_at(model, s0, domain, &[0.0; 3][..domain.dim()])
}

/// Builds a plateau-with-skirt function of height `s0` centered at `center`
/// whose plateau radius is bisected so that `∫ G(u) = 1` to `1e-10`.
pub fn feasible_start_at(
    model: &VariationalModel,
    s0: f64,
    domain: &Arc<GridDomain>,
    center: &[f64],
) -> Result<GridFunction> {
    let g0 = (model.constraint.big_g)(s0);
    if !(s0 > 0.0 && g0 > 0.0) {
        return Err(Error::Infeasible(format!("G(s0) = {g0} must be positive at s0 = {s0} > 0")));
    }
    if center.len() != domain.dim() {
        return Err(Error::InvalidDomain(format!("center has {} coordinates", center.len())));
    }
    let extent = match domain.shape() {
        Shape::Ball { radius } => radius,
        Shape::Box => domain.half_extent(),
    };
    let offset = center.iter().map(|c| c * c).sum::<f64>().sqrt();
    let rho_max = (extent - offset - domain.spacing()) / 1.5;
    if !(rho_max > 0.0) {
        return Err(Error::Infeasible(format!("center {center:?} leaves no room inside the domain")));
    }
    let build = |rho: f64| {
        GridFunction::from_fn(domain.clone(), |x| {
            let d = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            plateau(d, rho, s0)
        })
    };
    let top = build(rho_max)?;
    if constraint_integral(model, &top) < 1.0 {
        return Err(Error::Infeasible(format!(
            "domain too small: plateau of height {s0} reaches only ∫G = {}",
            constraint_integral(model, &top)
        )));
    }
    let (mut lo, mut hi) = (0.0, rho_max);
    let mut best = top;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let u = build(mid)?;
        let w = constraint_integral(model, &u);
        if (w - 1.0).abs() <= 1e-13 {
            return Ok(u);
        }
        if w < 1.0 {
            lo = mid;
        } else {
            hi = mid;
            best = u;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let w = constraint_integral(model, &best);
    if (w - 1.0).abs() <= 1e-10 {
        Ok(best)
    } else {
        Err(Error::Infeasible(format!("bisection stalled at ∫G = {w}")))
    }
}
