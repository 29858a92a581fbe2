//! Browser demo: a 2D field that can be symmetrized, polarized step by step,
//! or replaced by a constrained minimizer.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use radsym::energy::energy;
use radsym::grid::GridDomain;
use radsym::model::feasible_start_at;
use radsym::optimize::{minimize, MinimizeOptions};
use radsym::rearrange::{
    default_max_offset, lp_distance, polarize, sample_polarizers_capped, schwarz_symmetrize, smooth_bump,
    PolarizerSequence,
};
use radsym::{make_domain, preset, GridFunction, Shape, VariationalModel};

const RADIUS: f64 = 3.0;

fn js_err(e: radsym::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Two off-center bumps whose placement depends on `seed`.
fn initial_field(domain: &Arc<GridDomain>, seed: u32) -> radsym::Result<GridFunction> {
    let angle = seed as f64 * 2.399963;
    let a = [1.1 * angle.cos(), 1.1 * angle.sin()];
    let b = [-0.6 * angle.sin(), 0.6 * angle.cos()];
    let first = smooth_bump(domain, &a, 1.3, 1.0)?;
    let second = smooth_bump(domain, &b, 0.9, 0.7)?;
    first.axpy(1.0, &second)
}

#[wasm_bindgen]
pub struct Session {
    domain: Arc<GridDomain>,
    model: VariationalModel,
    u: GridFunction,
    star: GridFunction,
    seq: PolarizerSequence,
    steps: usize,
}

#[wasm_bindgen]
impl Session {
    /// A ball of radius 3 resolved by `cells` cells per axis (even).
    #[wasm_bindgen(constructor)]
    pub fn new(cells: u32, seed: u32) -> Result<Session, JsError> {
        let h = 2.0 * RADIUS / cells as f64;
        let domain = make_domain(2, Shape::Ball { radius: RADIUS }, RADIUS, h).map_err(js_err)?;
        let u = initial_field(&domain, seed).map_err(js_err)?;
        let star = schwarz_symmetrize(&u).map_err(js_err)?;
        let cap = default_max_offset(&domain);
        let seq = sample_polarizers_capped(&domain, seed as u64, 4096, cap).map_err(js_err)?;
        let model = preset("plaplace").map_err(js_err)?;
        Ok(Session { domain, model, u, star, seq, steps: 0 })
    }

    pub fn cells(&self) -> u32 {
        self.domain.cells_per_axis() as u32
    }

    /// Row-major values of the current field.
    pub fn values(&self) -> Vec<f64> {
        self.u.values().to_vec()
    }

    /// Row-major values of the symmetrization of the current field.
    pub fn star_values(&self) -> Vec<f64> {
        self.star.values().to_vec()
    }

    /// `‖u - u*‖_2`.
    pub fn distance(&self) -> Result<f64, JsError> {
        lp_distance(&self.u, &self.star, 2.0).map_err(js_err)
    }

    /// Applies the next `count` sampled polarizers; returns the new distance.
    pub fn polarize(&mut self, count: u32) -> Result<f64, JsError> {
        for _ in 0..count {
            let q = &self.seq.items[self.steps % self.seq.items.len()];
            self.u = polarize(&self.u, q).map_err(js_err)?;
            self.steps += 1;
        }
        self.distance()
    }

    pub fn steps(&self) -> u32 {
        self.steps as u32
    }

    /// Replaces the field by its Schwarz symmetrization.
    pub fn symmetrize(&mut self) {
        self.u = self.star.clone();
    }

    /// Minimizes the p-Laplace energy with `∫|u|^p = 1` from an off-center
    /// start; returns the final energy.
    pub fn minimize(&mut self, max_iters: u32) -> Result<f64, JsError> {
        let u0 = feasible_start_at(&self.model, 0.5, &self.domain, &[0.75, 0.5]).map_err(js_err)?;
        let opts = MinimizeOptions { max_iters: max_iters as usize, grad_tol: 1e-4, ..MinimizeOptions::default() };
        let r = minimize(&self.model, &u0, &opts).map_err(js_err)?;
        self.u = r.u_final;
        self.star = schwarz_symmetrize(&self.u).map_err(js_err)?;
        self.steps = 0;
        Ok(r.energy.e)
    }

    /// Energy of the current field under the p-Laplace preset.
    pub fn energy(&self) -> Result<f64, JsError> {
        energy(&self.u, &self.model).map(|e| e.e).map_err(js_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polarizing_moves_toward_the_symmetrization() {
        let mut s = Session::new(32, 3).unwrap();
        let before = s.distance().unwrap();
        let after = s.polarize(300).unwrap();
        assert!(after < 0.5 * before, "{before} -> {after}");
        s.symmetrize();
        assert_eq!(s.distance().unwrap(), 0.0);
        assert_eq!(s.values().len(), 32 * 32);
    }

    #[test]
    fn minimizing_gives_a_nearly_radial_field() {
        let mut s = Session::new(32, 0).unwrap();
        let e = s.minimize(2000).unwrap();
        assert!(e.is_finite());
        let norm: f64 = s.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = s.distance().unwrap() / (norm * s.domain.spacing());
        assert!(rel < 0.1, "{rel}");
    }
}
