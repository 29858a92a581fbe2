//! Projected gradient descent for `min E(u)` over `{u >= 0, ∫ G(u) = 1}`.

use serde::{Deserialize, Serialize};

use crate::energy::{constraint_gradient, energy, energy_gradient, EnergyBreakdown};
use crate::grid::{integrate, GridFunction};
use crate::model::VariationalModel;
use crate::rearrange::schwarz_symmetrize;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    /// Threshold on the `L²` density norm of the projected gradient.
    pub grad_tol: f64,
    /// Relative energy decrease below which an iteration counts as stalled;
    /// `STALL_PATIENCE` consecutive stalls stop the run.
    pub energy_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    /// Period of symmetrize-restarts; 0 disables them.
    pub symmetrize_every: usize,
    pub seed: u64,
    /// Runs whose energy drops below this value are stopped as divergent.
    pub energy_floor: f64,
    /// Number of L-BFGS correction pairs; 0 gives plain projected gradient
    /// steps with Barzilai–Borwein step sizes.
    pub memory: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iters: 20_000,
            grad_tol: 1e-6,
            energy_tol: 1e-15,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            symmetrize_every: 0,
            seed: 0,
            energy_floor: -1e8,
            memory: 8,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::Degenerate(format!("armijo_c = {} must lie in (0, 1)", self.armijo_c)));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::Degenerate(format!("backtrack_factor = {} must lie in (0, 1)", self.backtrack_factor)));
        }
        if !(self.grad_tol >= 0.0) || !(self.energy_tol >= 0.0) {
            return Err(Error::Degenerate("tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Consecutive stalled iterations tolerated before stopping on `energy_tol`.
pub const STALL_PATIENCE: usize = 10;
/// Maximum step-size reductions per line search.
pub const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Initial,
    Gradient,
    Restart,
    RestartSkipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub kind: StepKind,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Fterm")]
    pub fterm: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub proj_grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    EnergyTol,
    MaxIters,
    LineSearchFailed,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub u_final: GridFunction,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// `⟨∇E, ∇W⟩ / ⟨∇W, ∇W⟩` at the final iterate.
    pub lambda: f64,
    pub proj_grad_norm: f64,
    pub history: Vec<IterationRecord>,
}

/// Sets negative values to zero; nonnegative values are kept bit-for-bit.
pub fn clip_nonneg(u: &GridFunction) -> GridFunction {
    let vals = u.values().iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect();
    GridFunction::new(u.domain().clone(), vals).expect("clipping keeps values finite")
}

fn constraint_value(u: &GridFunction, model: &VariationalModel) -> f64 {
    let g = &model.constraint.big_g;
    integrate(&u.field(|_, v| g(v)))
}

/// Scale `θ > 0` with `∫ G(θu) = 1`: closed form for homogeneous `G`,
/// otherwise bisection on `θ ∈ [1e-12, 1e12]`.
pub fn constraint_scale(u: &GridFunction, model: &VariationalModel) -> Result<f64> {
    u.require_nonnegative()?;
    if u.values().iter().all(|&v| v == 0.0) {
        return Err(Error::Infeasible("cannot project the zero function onto ∫G(u) = 1".into()));
    }
    if let Some(q) = model.constraint.homogeneity {
        let w = constraint_value(u, model);
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Infeasible(format!("∫G(u) = {w} cannot be rescaled to 1")));
        }
        return Ok(w.powf(-1.0 / q));
    }
    let at = |theta: f64| constraint_value(&u.scaled(theta), model) - 1.0;
    let (mut lo, mut hi) = (1e-12f64, 1e12f64);
    if !(at(lo) < 0.0 && at(hi) > 0.0) {
        return Err(Error::Infeasible("no θ in [1e-12, 1e12] brackets ∫G(θu) = 1".into()));
    }
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        let r = at(mid);
        if r.abs() <= 1e-12 {
            return Ok(mid);
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    if at(mid).abs() <= 1e-12 {
        Ok(mid)
    } else {
        Err(Error::Infeasible(format!("bisection stalled at ∫G(θu) - 1 = {}", at(mid))))
    }
}

/// `θ·u` with `∫ G(θu) = 1`.
pub fn project_constraint(u: &GridFunction, model: &VariationalModel) -> Result<GridFunction> {
    Ok(u.scaled(constraint_scale(u, model)?))
}

struct State {
    u: GridFunction,
    energy: EnergyBreakdown,
    /// Projected gradient per cell.
    pg: Vec<f64>,
    lambda: f64,
    pg_norm: f64,
}

fn evaluate(u: GridFunction, model: &VariationalModel) -> Result<State> {
    let e = energy(&u, model)?;
    let ge = energy_gradient(&u, model)?;
    let gw = constraint_gradient(&u, model);
    let (ge, gw) = (ge.values(), gw.values());
    let dot: f64 = ge.iter().zip(gw).map(|(a, b)| a * b).sum();
    let ww: f64 = gw.iter().map(|b| b * b).sum();
    let lambda = if ww > 0.0 { dot / ww } else { 0.0 };
    let pg: Vec<f64> = ge.iter().zip(gw).map(|(a, b)| a - lambda * b).collect();
    let domain = u.domain();
    let vol = domain.cell_volume();
    let mut sq = 0.0;
    for (i, &g) in pg.iter().enumerate() {
        if !domain.is_active(i) {
            continue;
        }
        // at the nonnegativity bound only directions that raise u count
        let g = if u.get(i) > 0.0 { g } else { g.min(0.0) };
        sq += g * g;
    }
    let pg_norm = (sq / vol).sqrt();
    Ok(State { u, energy: e, pg, lambda, pg_norm })
}

fn record(iter: usize, kind: StepKind, s: &State, step: f64) -> IterationRecord {
    IterationRecord {
        iter,
        kind,
        e: s.energy.e,
        j: s.energy.j,
        fterm: s.energy.fterm,
        w: s.energy.w,
        proj_grad_norm: s.pg_norm,
        step,
    }
}

fn trial(s: &State, dir: &[f64], t: f64, model: &VariationalModel) -> Result<GridFunction> {
    let vals = s.u.values().iter().zip(dir).map(|(&v, &d)| (v + t * d).max(0.0)).collect();
    project_constraint(&GridFunction::new(s.u.domain().clone(), vals)?, model)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

type Pair = (Vec<f64>, Vec<f64>, f64);

/// Search direction and initial step. With correction pairs this is the
/// L-BFGS two-loop direction with unit step; otherwise the negative projected
/// gradient with a Barzilai–Borwein step. Falls back to the gradient when the
/// quasi-Newton direction is not a descent direction.
fn direction(state: &State, pairs: &[Pair], prev: Option<&(GridFunction, Vec<f64>)>, t_prev: f64) -> (Vec<f64>, f64) {
    let neg: Vec<f64> = state.pg.iter().map(|g| -g).collect();
    if let Some((s_last, y_last, _)) = pairs.last() {
        let mut q = state.pg.clone();
        let mut alpha = vec![0.0; pairs.len()];
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= alpha[k] * yi;
            }
        }
        let gamma = dot(s_last, y_last) / dot(y_last, y_last);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let beta = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (alpha[k] - beta) * si;
            }
        }
        for (i, qi) in q.iter_mut().enumerate() {
            // do not push cells already at the bound further down
            if state.u.get(i) <= 0.0 && *qi > 0.0 {
                *qi = 0.0;
            }
        }
        let d: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&d, &state.pg) < 0.0 {
            return (d, 1.0);
        }
    }
    let t = match prev {
        Some((u_old, pg_old)) => {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for (i, (pg_new, pg_prev)) in state.pg.iter().zip(pg_old).enumerate() {
                let s = state.u.get(i) - u_old.get(i);
                ss += s * s;
                sy += s * (pg_new - pg_prev);
            }
            if sy > 0.0 && ss > 0.0 {
                ss / sy
            } else {
                t_prev
            }
        }
        None => t_prev,
    };
    (neg, t)
}

/// Projected gradient descent with Barzilai–Borwein initial steps and
/// Armijo backtracking on `E ∘ project`.
pub fn minimize(model: &VariationalModel, u0: &GridFunction, opts: &MinimizeOptions) -> Result<MinimizeResult> {
    opts.validate()?;
    let mut state = evaluate(project_constraint(&clip_nonneg(u0), model)?, model)?;
    let mut history = vec![record(0, StepKind::Initial, &state, 0.0)];
    let gmax = state.pg.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut t_prev = if gmax > 0.0 { 1.0 / gmax } else { 1.0 };
    let mut prev: Option<(GridFunction, Vec<f64>)> = None;
    let mut pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut stalls = 0;
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;

    for iter in 1..=opts.max_iters {
        if state.pg_norm <= opts.grad_tol {
            stop = StopReason::GradTol;
            break;
        }
        if opts.symmetrize_every > 0 && iter % opts.symmetrize_every == 0 {
            let candidate = evaluate(schwarz_symmetrize(&state.u)?, model)?;
            let tol = 1e-8 * state.energy.scale();
            if candidate.energy.e <= state.energy.e + tol && (candidate.energy.w - state.energy.w).abs() <= 1e-10 {
                state = candidate;
                prev = None;
                pairs.clear();
                history.push(record(iter, StepKind::Restart, &state, 0.0));
            } else {
                history.push(record(iter, StepKind::RestartSkipped, &candidate, 0.0));
            }
        }

        let (dir, mut t) = direction(&state, &pairs, prev.as_ref(), t_prev);

        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let y = trial(&state, &dir, t, model)?;
            let e = energy(&y, model)?;
            // first-order decrease predicted along the projected arc
            let predicted: f64 =
                y.values().iter().zip(state.u.values()).zip(&state.pg).map(|((a, b), g)| (a - b) * g).sum();
            if predicted < 0.0 && e.e <= state.energy.e + opts.armijo_c * predicted {
                accepted = Some(y);
                break;
            }
            t *= opts.backtrack_factor;
        }
        let Some(y) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let next = evaluate(y, model)?;
        let decrease = state.energy.e - next.energy.e;
        let old = std::mem::replace(&mut state, next);
        if opts.memory > 0 {
            let sk: Vec<f64> = state.u.values().iter().zip(old.u.values()).map(|(a, b)| a - b).collect();
            let yk: Vec<f64> = state.pg.iter().zip(&old.pg).map(|(a, b)| a - b).collect();
            let sy = dot(&sk, &yk);
            if sy > 1e-12 * dot(&sk, &sk).sqrt() * dot(&yk, &yk).sqrt() {
                if pairs.len() == opts.memory {
                    pairs.remove(0);
                }
                pairs.push((sk, yk, 1.0 / sy));
            }
        }
        prev = Some((old.u, old.pg));
        t_prev = t;
        iterations = iter;
        history.push(record(iter, StepKind::Gradient, &state, t));

        if state.energy.e < opts.energy_floor || !state.energy.e.is_finite() {
            stop = StopReason::Diverged;
            break;
        }
        if decrease <= opts.energy_tol * state.energy.e.abs().max(1.0) {
            stalls += 1;
            if stalls >= STALL_PATIENCE {
                stop = StopReason::EnergyTol;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    if stop == StopReason::MaxIters && state.pg_norm <= opts.grad_tol {
        stop = StopReason::GradTol;
    }
    let converged = matches!(stop, StopReason::GradTol | StopReason::EnergyTol);
    Ok(MinimizeResult {
        energy: state.energy,
        lambda: state.lambda,
        proj_grad_norm: state.pg_norm,
        u_final: state.u,
        iterations,
        converged,
        stop_reason: stop,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_domain, Shape};
    use crate::model::{feasible_start_at, preset};

    #[test]
    fn clip_cases() {
        let d = make_domain(2, Shape::Box, 1.0, 0.5).unwrap();
        let pos = GridFunction::from_fn(d.clone(), |x| x[0] * x[0] + 0.1).unwrap();
        assert_eq!(clip_nonneg(&pos).values(), pos.values());
        let neg = GridFunction::new(d.clone(), vec![-1.0; 16]).unwrap();
        assert!(clip_nonneg(&neg).values().iter().all(|&v| v == 0.0));
        let mixed = GridFunction::from_fn(d.clone(), |x| x[0]).unwrap();
        let c = clip_nonneg(&mixed);
        for (a, b) in mixed.values().iter().zip(c.values()) {
            assert_eq!(*b, if *a < 0.0 { 0.0 } else { *a });
        }
    }

    #[test]
    fn closed_form_scale_matches_bisection() {
        let d = make_domain(2, Shape::Box, 2.0, 0.25).unwrap();
        let m = preset("plaplace").unwrap();
        // ∫|u|^1.5 = 32 for the constant 2^(1/1.5)·2 over area 16
        let c = 2.0f64.powf(1.0 / 1.5);
        let u = GridFunction::new(d.clone(), vec![c; d.len()]).unwrap();
        let w = constraint_value(&u, &m);
        assert!((w - 16.0 * 2.0).abs() < 1e-12);
        let theta = constraint_scale(&u, &m).unwrap();
        assert!((theta - 32f64.powf(-2.0 / 3.0)).abs() < 1e-15);
        assert!((theta - 0.0992125657).abs() < 1e-9);
        let mut general = m.clone();
        general.constraint.homogeneity = None;
        let bisected = constraint_scale(&u, &general).unwrap();
        assert!((bisected - theta).abs() <= 1e-11 * theta);
    }

    #[test]
    fn feasible_input_is_a_fixed_point() {
        let d = make_domain(2, Shape::Ball { radius: 3.0 }, 3.0, 0.1875).unwrap();
        let m = preset("plaplace").unwrap();
        let u = feasible_start_at(&m, 0.5, &d, &[0.3, 0.2]).unwrap();
        assert!((constraint_scale(&u, &m).unwrap() - 1.0).abs() <= 1e-10);
        let zero = GridFunction::zeros(d.clone());
        assert!(matches!(project_constraint(&zero, &m), Err(Error::Infeasible(_))));
    }

    #[test]
    fn options_are_checked() {
        let d = make_domain(2, Shape::Ball { radius: 3.0 }, 3.0, 0.375).unwrap();
        let m = preset("plaplace").unwrap();
        let u = feasible_start_at(&m, 0.5, &d, &[0.0, 0.0]).unwrap();
        let bad = MinimizeOptions { armijo_c: 1.5, ..Default::default() };
        assert!(minimize(&m, &u, &bad).is_err());
        let bad = MinimizeOptions { backtrack_factor: 1.0, ..Default::default() };
        assert!(minimize(&m, &u, &bad).is_err());
    }

    #[test]
    fn descent_keeps_feasibility_and_decreases_energy() {
        let d = make_domain(2, Shape::Ball { radius: 3.0 }, 3.0, 0.1875).unwrap();
        let m = preset("plaplace").unwrap();
        let u0 = feasible_start_at(&m, 0.4, &d, &[0.6, -0.3]).unwrap();
        let opts = MinimizeOptions { max_iters: 300, ..Default::default() };
        let res = minimize(&m, &u0, &opts).unwrap();
        let e0 = energy(&u0, &m).unwrap().e;
        assert!(res.energy.e <= e0);
        assert!((res.energy.w - 1.0).abs() <= 1e-10);
        assert!(res.u_final.is_nonnegative());
        for w in res.history.windows(2) {
            assert!(w[1].e <= w[0].e, "{:?}", w);
            assert!((w[1].w - 1.0).abs() <= 1e-10);
        }
        let again = minimize(&m, &u0, &opts).unwrap();
        assert_eq!(again.u_final.values(), res.u_final.values());
    }
}
