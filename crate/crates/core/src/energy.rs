//! Discrete energy, its exact gradient, Euler–Lagrange residuals with a
//! Lagrange multiplier, and the critical-set diagnostic.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{
    compensated_sum, grad_lp_norm, gradient_magnitude, integrate, lp_norm, CellField, GridDomain, GridFunction, Stencil,
};
use crate::model::VariationalModel;
use crate::{Error, Result};

/// `q(t) = t³(10 - 15t + 6t²)`, the quintic smoothstep.
fn smoothstep(t: f64) -> f64 {
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

fn smoothstep_derivative(t: f64) -> f64 {
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

fn check_level(k: f64) -> Result<()> {
    if k >= 1.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::Degenerate(format!("cutoff level k = {k} must be >= 1")))
    }
}

/// `H(s/k)` with `H = 1` on `[-1, 1]`, `0` outside `[-2, 2]` and a quintic
/// transition in between (`max |H'| = 15/8`).
pub fn cutoff(s: f64, k: f64) -> Result<f64> {
    check_level(k)?;
    Ok(unit_cutoff(s / k))
}

/// `d/ds H(s/k)`.
pub fn cutoff_derivative(s: f64, k: f64) -> Result<f64> {
    check_level(k)?;
    let sigma = s / k;
    let a = sigma.abs();
    if a <= 1.0 || a >= 2.0 {
        return Ok(0.0);
    }
    Ok(-smoothstep_derivative(2.0 - a) * sigma.signum() / k)
}

fn unit_cutoff(sigma: f64) -> f64 {
    let a = sigma.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        smoothstep(2.0 - a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Fterm")]
    pub fterm: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "W")]
    pub w: f64,
}

impl EnergyBreakdown {
    /// `|J| + |Fterm|`, the natural tolerance scale.
    pub fn scale(&self) -> f64 {
        self.j.abs() + self.fterm.abs()
    }
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} evaluated to {v}")))
    }
}

/// `∫ j(u, |Du|)` with the symmetric one-sided stencil.
pub fn integrand_energy(u: &GridFunction, model: &VariationalModel) -> Result<f64> {
    let j = &model.integrand.j;
    let sum = Stencil::new(u).sum(|s, t| j(s, t));
    finite("J", u.domain().cell_volume() * sum)
}

/// `J`, `Fterm = ∫ F(|x|, u)`, `E = J - Fterm` and `W = ∫ G(u)`.
pub fn energy(u: &GridFunction, model: &VariationalModel) -> Result<EnergyBreakdown> {
    let j = integrand_energy(u, model)?;
    let domain = u.domain();
    let big_f = &model.nonlinearity.big_f;
    let big_g = &model.constraint.big_g;
    let fterm = finite("Fterm", integrate(&u.field(|i, v| big_f(domain.radius(i), v))))?;
    let w = finite("W", integrate(&u.field(|_, v| big_g(v))))?;
    Ok(EnergyBreakdown { j, fterm, e: j - fterm, w })
}

/// Exact gradient of the discrete energy `E` with respect to each unmasked
/// cell value (zero on masked cells). `j_t·D/|D|` is taken as zero where
/// `|D| = 0`.
pub fn energy_gradient(u: &GridFunction, model: &VariationalModel) -> Result<CellField> {
    let domain = u.domain();
    let vol = domain.cell_volume();
    let jj = &model.integrand;
    let f = &model.nonlinearity.f;
    let stencil = Stencil::new(u);
    let padded = stencil.adjoint(|s, t| ((jj.j_s)(s, t), (jj.j_t)(s, t)));
    let values = stencil
        .unpad(domain, &padded)
        .into_iter()
        .enumerate()
        .map(|(i, g)| if domain.is_active(i) { vol * (g - f(domain.radius(i), u.get(i))) } else { 0.0 })
        .collect::<Vec<_>>();
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("energy gradient entry {v}")));
    }
    CellField::new(domain.clone(), values)
}

/// Gradient of `W = ∫ G(u)`: `h^N g(u_i)` on unmasked cells.
pub fn constraint_gradient(u: &GridFunction, model: &VariationalModel) -> CellField {
    let domain = u.domain();
    let vol = domain.cell_volume();
    let g = &model.constraint.g;
    u.field(|i, v| if domain.is_active(i) { vol * g(v) } else { 0.0 })
}

/// A test direction `φ = H(u/k)·v` built from a compactly supported base `v`.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub base: GridFunction,
    pub level: f64,
}

impl TestFunction {
    pub fn new(base: GridFunction, level: f64) -> Result<Self> {
        check_level(level)?;
        Ok(TestFunction { base, level })
    }

    /// `φ = H(u/k)·v` for the given `u`.
    pub fn realize(&self, u: &GridFunction) -> Result<GridFunction> {
        u.check_same_domain(&self.base)?;
        let vals = u.values().iter().zip(self.base.values()).map(|(&s, &v)| unit_cutoff(s / self.level) * v).collect();
        GridFunction::new(u.domain().clone(), vals)
    }
}

/// Random smooth bumps `(1 - |x - c|²/ρ²)₊³` centered at cells of the
/// support of `u`, with `ρ ∈ [3h, max(3h, ρ_s/2)]` where `ρ_s` is the radius
/// of the ball with the support's measure, and cutoff level `max(1, ‖u‖_∞)`.
pub fn test_bank(u: &GridFunction, count: usize, seed: u64) -> Result<Vec<TestFunction>> {
    let domain = u.domain();
    let support: Vec<usize> = (0..domain.len()).filter(|&i| domain.is_active(i) && u.get(i) > 0.0).collect();
    if support.is_empty() {
        return Err(Error::Degenerate("test bank needs a function with nonempty support".into()));
    }
    let h = domain.spacing();
    let dim = domain.dim();
    let measure = support.len() as f64 * domain.cell_volume();
    let unit_ball = if dim == 2 { std::f64::consts::PI } else { 4.0 / 3.0 * std::f64::consts::PI };
    let rho_s = (measure / unit_ball).powf(1.0 / dim as f64);
    let (lo, hi) = (3.0 * h, (0.5 * rho_s).max(3.0 * h));
    let level = u.max().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c = domain.center(support[rng.random_range(0..support.len())]);
            let rho = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let base = bump(domain, &c[..dim], rho)?;
            TestFunction::new(base, level)
        })
        .collect()
}

fn bump(domain: &Arc<GridDomain>, center: &[f64], rho: f64) -> Result<GridFunction> {
    GridFunction::from_fn(domain.clone(), |x| {
        let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        (1.0 - d2 / (rho * rho)).max(0.0).powi(3)
    })
}

/// `(‖φ‖_p^p + ‖Dφ‖_p^p)^{1/p}`.
pub fn sobolev_norm(phi: &GridFunction, p: f64) -> Result<f64> {
    Ok((lp_norm(phi, p)?.powf(p) + grad_lp_norm(phi, p)?.powf(p)).powf(1.0 / p))
}

/// `A(φ) = ∫ j_t (Du/|Du|)·Dφ + ∫ j_s φ - ∫ f(|x|,u) φ` on the energy stencil.
fn weak_operator(u: &GridFunction, stencil: &Stencil, phi: &GridFunction, model: &VariationalModel) -> f64 {
    let domain = u.domain();
    let jj = &model.integrand;
    let f = &model.nonlinearity.f;
    let grad = stencil.directional(&Stencil::new(phi), |s, t| ((jj.j_s)(s, t), (jj.j_t)(s, t)));
    let forcing = compensated_sum(
        (0..domain.len()).filter(|&i| domain.is_active(i)).map(|i| f(domain.radius(i), u.get(i)) * phi.get(i)),
    );
    domain.cell_volume() * (grad - forcing)
}

/// `B(φ) = ∫ g(u) φ`.
fn constraint_pairing(u: &GridFunction, phi: &GridFunction, model: &VariationalModel) -> f64 {
    let g = &model.constraint.g;
    integrate(&u.field(|i, v| g(v) * phi.get(i)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ELReport {
    pub lambda: f64,
    /// `r(φ) = A(φ) - λ B(φ)`.
    pub residuals: Vec<f64>,
    /// `r(φ) / ‖φ‖_{W^{1,p}}`.
    pub normalized: Vec<f64>,
    pub normalized_max: f64,
    /// `A(φ)`.
    pub numerators: Vec<f64>,
    /// `B(φ) = ∫ g(u) φ`.
    pub denominators: Vec<f64>,
}

struct Pairings {
    a: Vec<f64>,
    b: Vec<f64>,
    phi_norm: Vec<f64>,
    phi_sup: Vec<f64>,
}

fn pairings(u: &GridFunction, model: &VariationalModel, tests: &[TestFunction]) -> Result<Pairings> {
    if tests.is_empty() {
        return Err(Error::Degenerate("empty test-function list".into()));
    }
    let stencil = Stencil::new(u);
    let mut out = Pairings { a: Vec::new(), b: Vec::new(), phi_norm: Vec::new(), phi_sup: Vec::new() };
    for t in tests {
        let phi = t.realize(u)?;
        out.a.push(weak_operator(u, &stencil, &phi, model));
        out.b.push(constraint_pairing(u, &phi, model));
        out.phi_norm.push(sobolev_norm(&phi, model.p())?);
        out.phi_sup.push(phi.values().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    Ok(out)
}

/// Euler–Lagrange residuals `A(φ) - λB(φ)` for each test function.
pub fn el_residual(
    u: &GridFunction,
    lambda: f64,
    model: &VariationalModel,
    tests: &[TestFunction],
) -> Result<ELReport> {
    let pr = pairings(u, model, tests)?;
    let residuals: Vec<f64> = pr.a.iter().zip(&pr.b).map(|(a, b)| a - lambda * b).collect();
    let normalized: Vec<f64> =
        residuals.iter().zip(&pr.phi_norm).map(|(r, n)| if *n > 0.0 { r / n } else { 0.0 }).collect();
    let normalized_max = normalized.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ELReport { lambda, residuals, normalized, normalized_max, numerators: pr.a, denominators: pr.b })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaEstimate {
    /// Least-squares `Σ A B / Σ B²` over the usable tests.
    pub lambda: f64,
    /// `A(φ)/B(φ)` per test, `None` where `|B(φ)|` is below the guard.
    pub per_test: Vec<Option<f64>>,
    pub used: usize,
    pub mean: f64,
    pub std_dev: f64,
    /// `std_dev / |mean|` of the per-test values.
    pub coefficient_of_variation: f64,
}

/// Least-squares Lagrange multiplier over tests whose denominator exceeds
/// `1e-8·‖g(u)‖₁·‖φ‖_∞`.
pub fn estimate_lambda(u: &GridFunction, model: &VariationalModel, tests: &[TestFunction]) -> Result<LambdaEstimate> {
    let pr = pairings(u, model, tests)?;
    let g = &model.constraint.g;
    let g_l1 = integrate(&u.field(|_, v| g(v).abs()));
    let mut num = 0.0;
    let mut den = 0.0;
    let mut per_test = Vec::with_capacity(tests.len());
    for k in 0..tests.len() {
        let guard = 1e-8 * g_l1 * pr.phi_sup[k];
        if pr.b[k].abs() > guard && pr.b[k] != 0.0 {
            num += pr.a[k] * pr.b[k];
            den += pr.b[k] * pr.b[k];
            per_test.push(Some(pr.a[k] / pr.b[k]));
        } else {
            per_test.push(None);
        }
    }
    let vals: Vec<f64> = per_test.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(Error::Degenerate("every denominator ∫g(u)φ is below the guard; g(u) ≈ 0".into()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std_dev = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let coefficient_of_variation = if mean != 0.0 { std_dev / mean.abs() } else { f64::INFINITY };
    // a single usable test gives the exact ratio
    let lambda = if vals.len() == 1 { vals[0] } else { num / den };
    Ok(LambdaEstimate { lambda, per_test, used: vals.len(), mean, std_dev, coefficient_of_variation })
}

/// `h^N · #{cells : |Du*| < ε_grad and ε_val < u* < max(u*) - ε_val}` with
/// forward-difference gradients.
pub fn critical_set_measure(u_star: &GridFunction, eps_grad: f64, eps_val: f64) -> f64 {
    let domain = u_star.domain();
    let grad = gradient_magnitude(u_star);
    let top = u_star.max();
    let count = (0..domain.len())
        .filter(|&i| {
            let v = u_star.get(i);
            domain.is_active(i) && grad.values()[i] < eps_grad && v > eps_val && v < top - eps_val
        })
        .count();
    count as f64 * domain.cell_volume()
}
