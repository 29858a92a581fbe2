//! Schwarz symmetrization and two-point polarization of grid functions.
//!
//! Grid-exact polarizers reflect the lattice onto itself, so polarization is a
//! permutation of cell values and every rearrangement here preserves the value
//! multiset bit-for-bit.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::energy;
use crate::grid::{grad_lp_norm, integrate, lp_norm, GridDomain, GridFunction, Shape, MAX_DIM};
use crate::model::VariationalModel;
use crate::{Error, Result};

/// Closed half-space `H = {x : a·x <= b}` with unit normal `a` and `b > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polarizer {
    dim: usize,
    normal: [f64; MAX_DIM],
    offset: f64,
}

impl Polarizer {
    /// `normal` must have unit length to `1e-12`; it is renormalized exactly.
    pub fn new(normal: &[f64], offset: f64) -> Result<Self> {
        let dim = normal.len();
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidDomain(format!("polarizer dimension {dim} not in {{2, 3}}")));
        }
        let len = normal.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !((len - 1.0).abs() <= 1e-12) {
            return Err(Error::InvalidDomain(format!("polarizer normal has length {len}")));
        }
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(Error::InvalidDomain(format!("polarizer offset {offset} must be positive")));
        }
        let mut a = [0.0; MAX_DIM];
        for (dst, src) in a.iter_mut().zip(normal) {
            *dst = src / len;
        }
        Ok(Polarizer { dim, normal: a, offset })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal[..self.dim]
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `a·x - b`; nonpositive inside `H`.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        self.normal().iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - self.offset
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) <= 0.0
    }

    /// `x_H = x - 2(a·x - b) a`.
    pub fn reflect(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let t = 2.0 * self.signed_distance(x);
        let mut out = [0.0; MAX_DIM];
        for d in 0..self.dim {
            out[d] = x[d] - t * self.normal[d];
        }
        out
    }
}

/// A polarizer whose reflection permutes the cell-center lattice.
///
/// `Axis`: `a = sign·e_axis`, `b = offset_cells·h`.
/// `Diag` (2D only): `a = sign·(1, diag)/√2`, `b = offset_cells·h/√2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridExactPolarizer {
    Axis { axis: usize, offset_cells: u32, sign: i8 },
    Diag { diag: i8, offset_cells: u32, sign: i8 },
}

/// Where a cell goes under a grid-exact reflection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Image {
    /// The cell lies on the reflecting hyperplane.
    Fixed,
    /// Reflected cell index (possibly masked).
    Cell(usize),
    /// The reflected center lies outside the box.
    Outside,
}

impl GridExactPolarizer {
    pub fn offset_cells(&self) -> u32 {
        match *self {
            GridExactPolarizer::Axis { offset_cells, .. } | GridExactPolarizer::Diag { offset_cells, .. } => {
                offset_cells
            }
        }
    }

    /// Checks that this polarizer is well formed for `domain`.
    pub fn validate(&self, domain: &GridDomain) -> Result<()> {
        let bad = |msg: String| Err(Error::NotGridExact(format!("{self:?}: {msg}")));
        match *self {
            GridExactPolarizer::Axis { axis, offset_cells, sign } => {
                if axis >= domain.dim() {
                    return bad(format!("axis {axis} out of range for N = {}", domain.dim()));
                }
                if sign != 1 && sign != -1 {
                    return bad("sign must be ±1".into());
                }
                if offset_cells == 0 {
                    return bad("offset must be at least one cell".into());
                }
            }
            GridExactPolarizer::Diag { diag, offset_cells, sign } => {
                if domain.dim() != 2 {
                    return bad("diagonal polarizers are lattice-exact only for N = 2".into());
                }
                if (diag != 1 && diag != -1) || (sign != 1 && sign != -1) {
                    return bad("diag and sign must be ±1".into());
                }
                if offset_cells == 0 {
                    return bad("offset must be at least one cell".into());
                }
            }
        }
        Ok(())
    }

    /// The underlying geometric half-space for spacing `h`.
    pub fn polarizer(&self, dim: usize, h: f64) -> Result<Polarizer> {
        let mut a = vec![0.0; dim];
        match *self {
            GridExactPolarizer::Axis { axis, offset_cells, sign } => {
                if axis >= dim {
                    return Err(Error::NotGridExact(format!("axis {axis} out of range")));
                }
                a[axis] = sign as f64;
                Polarizer::new(&a, offset_cells as f64 * h)
            }
            GridExactPolarizer::Diag { diag, offset_cells, sign } => {
                if dim != 2 {
                    return Err(Error::NotGridExact("diagonal polarizer needs N = 2".into()));
                }
                let s = std::f64::consts::FRAC_1_SQRT_2;
                a[0] = sign as f64 * s;
                a[1] = sign as f64 * diag as f64 * s;
                Polarizer::new(&a, offset_cells as f64 * h * s)
            }
        }
    }

    /// Signed reflection parameter in half-step units: the cell is in `H`
    /// iff `t <= 0`, on the hyperplane iff `t == 0`.
    fn excess(&self, q: &[i64; MAX_DIM]) -> i64 {
        match *self {
            GridExactPolarizer::Axis { axis, offset_cells, sign } => sign as i64 * q[axis] - 2 * offset_cells as i64,
            GridExactPolarizer::Diag { diag, offset_cells, sign } => {
                sign as i64 * (q[0] + diag as i64 * q[1]) - 2 * offset_cells as i64
            }
        }
    }

    fn half_steps(domain: &GridDomain, idx: usize) -> [i64; MAX_DIM] {
        let m = domain.multi_index(idx);
        let mut q = [0; MAX_DIM];
        for d in 0..domain.dim() {
            q[d] = domain.half_step_coordinate(m[d]);
        }
        q
    }

    /// Whether the center of cell `idx` lies in the closed half-space `H`.
    pub fn contains(&self, domain: &GridDomain, idx: usize) -> bool {
        self.excess(&Self::half_steps(domain, idx)) <= 0
    }

    /// Image of cell `idx` under the reflection, computed in integers.
    pub fn image(&self, domain: &GridDomain, idx: usize) -> Image {
        let mut q = Self::half_steps(domain, idx);
        let t = self.excess(&q);
        if t == 0 {
            return Image::Fixed;
        }
        match *self {
            GridExactPolarizer::Axis { axis, sign, .. } => q[axis] -= 2 * t * sign as i64,
            GridExactPolarizer::Diag { diag, sign, .. } => {
                q[0] -= t * sign as i64;
                q[1] -= t * sign as i64 * diag as i64;
            }
        }
        let mut m = [0i64; MAX_DIM];
        for d in 0..domain.dim() {
            m[d] = domain.index_from_half_steps(q[d]);
        }
        domain.checked_index(&m).map_or(Image::Outside, Image::Cell)
    }
}

/// A reproducible list of grid-exact polarizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizerSequence {
    pub seed: u64,
    pub items: Vec<GridExactPolarizer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Direction {
    Axis { axis: usize, sign: i8 },
    Diag { diag: i8, sign: i8 },
}

/// Allowed polarizer directions: `±e_d` for every axis plus, in 2D, the four
/// diagonals.
fn directions(dim: usize) -> Vec<Direction> {
    let mut out = Vec::new();
    for axis in 0..dim {
        for sign in [1, -1] {
            out.push(Direction::Axis { axis, sign });
        }
    }
    if dim == 2 {
        for sign in [1, -1] {
            for diag in [1, -1] {
                out.push(Direction::Diag { diag, sign });
            }
        }
    }
    out
}

/// Number of allowed polarizer directions for a dimension.
pub fn direction_count(dim: usize) -> usize {
    directions(dim).len()
}

/// Index of a polarizer's direction in the allowed direction set.
pub fn direction_index(p: &GridExactPolarizer, dim: usize) -> usize {
    let dir = match *p {
        GridExactPolarizer::Axis { axis, sign, .. } => Direction::Axis { axis, sign },
        GridExactPolarizer::Diag { diag, sign, .. } => Direction::Diag { diag, sign },
    };
    directions(dim).iter().position(|d| *d == dir).unwrap_or(usize::MAX)
}

/// Default offset cap: `b <= R_dom / 4`, where `R_dom` is the ball radius or
/// the box half extent. Keeps the reflected image of a centered support inside
/// the domain and concentrates polarizers near the origin where they act.
pub fn default_max_offset(domain: &GridDomain) -> f64 {
    domain_radius(domain) / 4.0
}

fn domain_radius(domain: &GridDomain) -> f64 {
    match domain.shape() {
        Shape::Ball { radius } => radius,
        Shape::Box => domain.half_extent(),
    }
}

/// Samples `count` polarizers with the default offset cap.
pub fn sample_polarizers(domain: &GridDomain, seed: u64, count: usize) -> Result<PolarizerSequence> {
    sample_polarizers_capped(domain, seed, count, default_max_offset(domain))
}

/// Samples `count` polarizers: direction uniform over the allowed set, then
/// offset uniform over `1..=m_max` cells with `b <= max_offset`.
pub fn sample_polarizers_capped(
    domain: &GridDomain,
    seed: u64,
    count: usize,
    max_offset: f64,
) -> Result<PolarizerSequence> {
    if count == 0 {
        return Err(Error::Degenerate("polarizer count must be at least 1".into()));
    }
    let h = domain.spacing();
    let axis_max = (max_offset / h + 1e-9).floor() as u32;
    let diag_max = (max_offset * std::f64::consts::SQRT_2 / h + 1e-9).floor() as u32;
    if axis_max == 0 || (domain.dim() == 2 && diag_max == 0) {
        return Err(Error::Degenerate(format!(
            "no admissible polarizer offsets: cap {max_offset} is below the spacing {h}"
        )));
    }
    let dirs = directions(domain.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..count)
        .map(|_| match dirs[rng.random_range(0..dirs.len())] {
            Direction::Axis { axis, sign } => {
                GridExactPolarizer::Axis { axis, offset_cells: rng.random_range(1..=axis_max), sign }
            }
            Direction::Diag { diag, sign } => {
                GridExactPolarizer::Diag { diag, offset_cells: rng.random_range(1..=diag_max), sign }
            }
        })
        .collect();
    Ok(PolarizerSequence { seed, items })
}

/// Radially nonincreasing rearrangement: the unmasked values sorted in
/// descending order are assigned to the cells in
/// [`radial_order`](GridDomain::radial_order).
pub fn schwarz_symmetrize(u: &GridFunction) -> Result<GridFunction> {
    u.require_nonnegative()?;
    let domain = u.domain();
    let order = domain.radial_order();
    let mut vals: Vec<f64> = order.iter().map(|&i| u.get(i)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let mut out = vec![0.0; domain.len()];
    for (&cell, v) in order.iter().zip(vals) {
        out[cell] = v;
    }
    GridFunction::new(domain.clone(), out)
}

/// Two-point rearrangement with respect to a grid-exact polarizer: the larger
/// of each pair `(x, x_H)` goes to `x ∈ H`. Partners outside the box or the
/// mask read zero.
pub fn polarize(u: &GridFunction, p: &GridExactPolarizer) -> Result<GridFunction> {
    u.require_nonnegative()?;
    let domain = u.domain();
    p.validate(domain)?;
    let mut out = u.values().to_vec();
    for (idx, slot) in out.iter_mut().enumerate() {
        if !domain.is_active(idx) {
            continue;
        }
        let inside = p.contains(domain, idx);
        let partner = match p.image(domain, idx) {
            Image::Fixed => continue,
            Image::Cell(j) => Some(j),
            Image::Outside => None,
        };
        let here = u.get(idx);
        let there = partner.map_or(0.0, |j| u.get(j));
        *slot = if inside { here.max(there) } else { here.min(there) };
    }
    GridFunction::new(domain.clone(), out)
}

/// Polarization with respect to an arbitrary half-space, reading `u(x_H)` by
/// multilinear interpolation (zero outside the box). Only approximate: the
/// value multiset is not preserved in general.
pub fn polarize_general(u: &GridFunction, p: &Polarizer) -> Result<GridFunction> {
    u.require_nonnegative()?;
    let domain = u.domain();
    if p.dim() != domain.dim() {
        return Err(Error::InvalidDomain(format!(
            "polarizer dimension {} does not match domain dimension {}",
            p.dim(),
            domain.dim()
        )));
    }
    let mut out = vec![0.0; domain.len()];
    for (idx, slot) in out.iter_mut().enumerate() {
        if !domain.is_active(idx) {
            continue;
        }
        let x = domain.center(idx);
        let here = u.get(idx);
        let there = interpolate(u, &p.reflect(&x[..domain.dim()]));
        *slot = if p.contains(&x[..domain.dim()]) { here.max(there) } else { here.min(there) };
    }
    GridFunction::new(domain.clone(), out)
}

/// Multilinear interpolation of cell values, snapping to lattice points
/// within `1e-9` cells so that exact reflections read exact values.
pub fn interpolate(u: &GridFunction, x: &[f64]) -> f64 {
    let domain = u.domain();
    let dim = domain.dim();
    let mut base = [0i64; MAX_DIM];
    let mut frac = [0.0; MAX_DIM];
    for d in 0..dim {
        let f = domain.fractional_index(x[d]);
        let r = f.round();
        if (f - r).abs() <= 1e-9 {
            base[d] = r as i64;
            frac[d] = 0.0;
        } else {
            let fl = f.floor();
            base[d] = fl as i64;
            frac[d] = f - fl;
        }
    }
    let mut total = 0.0;
    for corner in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut m = [0i64; MAX_DIM];
        for d in 0..dim {
            let up = corner >> d & 1 == 1;
            if up {
                w *= frac[d];
                m[d] = base[d] + 1;
            } else {
                w *= 1.0 - frac[d];
                m[d] = base[d];
            }
        }
        if w != 0.0 {
            total += w * u.get_signed(&m);
        }
    }
    total
}

/// `h^N · #{unmasked cells : u > t}`.
pub fn distribution_function(u: &GridFunction, t: f64) -> f64 {
    let domain = u.domain();
    let count = u.values().iter().zip(domain.active_mask()).filter(|(&v, &a)| a && v > t).count();
    count as f64 * domain.cell_volume()
}

/// `‖u - v‖_p` for functions on the same domain.
pub fn lp_distance(u: &GridFunction, v: &GridFunction, p: f64) -> Result<f64> {
    lp_norm(&u.axpy(-1.0, v)?, p)
}

/// Tie slack for contraction checks: `‖·‖_p` of the largest value spread
/// among cells that share a radius with another cell. Lexicographic tie
/// breaking can move mass between such cells without changing the
/// rearrangement's radial profile.
pub fn tie_slack(u: &GridFunction, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidExponent(format!("p = {p} must be >= 1")));
    }
    let domain = u.domain();
    let order = domain.radial_order();
    let mut sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let key = domain.radius_key(order[start]);
        let mut end = start + 1;
        while end < order.len() && domain.radius_key(order[end]) == key {
            end += 1;
        }
        if end - start > 1 {
            let vals = order[start..end].iter().map(|&i| u.get(i));
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            sum += (end - start) as f64 * (hi - lo).powf(p);
        }
        start = end;
    }
    Ok((sum * domain.cell_volume()).powf(1.0 / p))
}

/// One row of an iterated-polarization history.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolarizationStep {
    pub step: usize,
    /// `‖u_n - u*‖_p`.
    pub distance: f64,
    /// `grad_lp_norm(u_n, p)^p`.
    pub grad_norm_p: f64,
    /// `∫ G(u_n)`, when a model is supplied.
    pub constraint: Option<f64>,
    /// `∫ j(u_n, |Du_n|)`, when a model is supplied.
    pub integrand: Option<f64>,
    /// `∫ F(|x|, u_n)`, when a model is supplied.
    pub nonlinear: Option<f64>,
}

/// Applies the polarizers of `seq` in order (cycling if `n_max` exceeds its
/// length) until `n_max` steps or `‖u_n - u*‖_p <= target_tol·‖u‖_p`. The
/// exponent is the model's `p` when a model is given, otherwise `p`.
pub fn iterate_polarizations(
    u: &GridFunction,
    seq: &PolarizerSequence,
    n_max: usize,
    target_tol: f64,
    p: f64,
    model: Option<&VariationalModel>,
) -> Result<(GridFunction, Vec<PolarizationStep>)> {
    u.require_nonnegative()?;
    let p = model.map_or(p, VariationalModel::p);
    let star = schwarz_symmetrize(u)?;
    let target = target_tol * lp_norm(u, p)?;
    let record = |step: usize, v: &GridFunction| -> Result<PolarizationStep> {
        let (constraint, integrand, nonlinear) = match model {
            Some(m) => {
                let e = energy(v, m)?;
                (Some(e.w), Some(e.j), Some(e.fterm))
            }
            None => (None, None, None),
        };
        Ok(PolarizationStep {
            step,
            distance: lp_distance(v, &star, p)?,
            grad_norm_p: grad_lp_norm(v, p)?.powf(p),
            constraint,
            integrand,
            nonlinear,
        })
    };
    let mut current = u.clone();
    let mut history = vec![record(0, &current)?];
    if history[0].distance <= target || seq.items.is_empty() {
        return Ok((current, history));
    }
    for step in 1..=n_max {
        let pol = &seq.items[(step - 1) % seq.items.len()];
        current = polarize(&current, pol)?;
        let row = record(step, &current)?;
        let done = row.distance <= target;
        history.push(row);
        if done {
            break;
        }
    }
    Ok((current, history))
}

/// Sorted unmasked values, for multiset comparisons.
pub fn sorted_values(u: &GridFunction) -> Vec<f64> {
    let domain = u.domain();
    let mut v: Vec<f64> = (0..domain.len()).filter(|&i| domain.is_active(i)).map(|i| u.get(i)).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `∫ G(u)` for a model's constraint density.
pub fn constraint_integral(u: &GridFunction, model: &VariationalModel) -> f64 {
    let g = &model.constraint.big_g;
    integrate(&u.field(|_, v| g(v)))
}

/// Smooth bump `c·(1 - |x - x0|²/ρ²)₊²` on a domain.
pub fn smooth_bump(domain: &Arc<GridDomain>, center: &[f64], rho: f64, height: f64) -> Result<GridFunction> {
    GridFunction::from_fn(domain.clone(), |x| {
        let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        let s = (1.0 - d2 / (rho * rho)).max(0.0);
        height * s * s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_domain;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn ball(n_half: usize) -> Arc<GridDomain> {
        make_domain(2, Shape::Ball { radius: 1.0 }, 1.0, 1.0 / n_half as f64).unwrap()
    }

    fn random_u(domain: &Arc<GridDomain>, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..domain.len()).map(|_| rng.random::<f64>()).collect();
        GridFunction::new(domain.clone(), vals).unwrap()
    }

    fn all_polarizers(domain: &GridDomain) -> Vec<GridExactPolarizer> {
        let mut out = Vec::new();
        for m in 1..=3 {
            for axis in 0..domain.dim() {
                for sign in [1, -1] {
                    out.push(GridExactPolarizer::Axis { axis, offset_cells: m, sign });
                }
            }
            if domain.dim() == 2 {
                for sign in [1, -1] {
                    for diag in [1, -1] {
                        out.push(GridExactPolarizer::Diag { diag, offset_cells: m, sign });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn reflection_matches_geometry() {
        let d = ball(6);
        for pol in all_polarizers(&d) {
            let geo = pol.polarizer(2, d.spacing()).unwrap();
            for idx in 0..d.len() {
                let x = d.center(idx);
                assert_eq!(pol.contains(&d, idx), geo.signed_distance(&x[..2]) <= 1e-12, "{pol:?} {idx}");
                let y = geo.reflect(&x[..2]);
                match pol.image(&d, idx) {
                    Image::Fixed => assert!(geo.signed_distance(&x[..2]).abs() < 1e-12),
                    Image::Cell(j) => {
                        let c = d.center(j);
                        assert!((c[0] - y[0]).abs() < 1e-12 && (c[1] - y[1]).abs() < 1e-12);
                        assert_eq!(pol.image(&d, j), Image::Cell(idx));
                    }
                    Image::Outside => assert!(y[..2].iter().any(|v| v.abs() > d.half_extent())),
                }
            }
        }
    }

    #[test]
    fn cells_in_h_are_closer_than_images() {
        let d = make_domain(3, Shape::Box, 1.0, 0.25).unwrap();
        for pol in all_polarizers(&d) {
            for idx in 0..d.len() {
                if let (true, Image::Cell(j)) = (pol.contains(&d, idx), pol.image(&d, idx)) {
                    assert!(d.radius_key(idx) <= d.radius_key(j));
                }
            }
        }
    }

    #[test]
    fn polarizer_rejects_bad_input() {
        assert!(Polarizer::new(&[1.0, 1.0], 0.5).is_err());
        assert!(Polarizer::new(&[1.0, 0.0], 0.0).is_err());
        let p = Polarizer::new(&[0.6, 0.8], 0.3).unwrap();
        let x = [0.7, -0.2];
        let back = p.reflect(&p.reflect(&x)[..2]);
        assert!((back[0] - x[0]).abs() < 1e-12 && (back[1] - x[1]).abs() < 1e-12);
        let d3 = make_domain(3, Shape::Box, 1.0, 0.25).unwrap();
        let diag = GridExactPolarizer::Diag { diag: 1, offset_cells: 1, sign: 1 };
        assert!(matches!(diag.validate(&d3), Err(Error::NotGridExact(_))));
        let zero = GridExactPolarizer::Axis { axis: 0, offset_cells: 0, sign: 1 };
        assert!(zero.validate(&d3).is_err());
    }

    #[test]
    fn symmetrize_fixed_point_and_single_value() {
        let d = make_domain(2, Shape::Box, 1.0, 0.25).unwrap();
        let u = random_u(&d, 3);
        let s = schwarz_symmetrize(&u).unwrap();
        assert_eq!(schwarz_symmetrize(&s).unwrap().values(), s.values());

        let mut vals = vec![0.0; d.len()];
        vals[0] = 5.0;
        let corner = GridFunction::new(d.clone(), vals).unwrap();
        let s = schwarz_symmetrize(&corner).unwrap();
        let winner = d.radial_order()[0];
        assert_eq!(s.get(winner), 5.0);
        let m = d.multi_index(winner);
        assert_eq!((m[0], m[1]), (3, 3));
        assert_eq!(s.values().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn symmetrize_rejects_negative() {
        let d = make_domain(2, Shape::Box, 1.0, 0.5).unwrap();
        let mut vals = vec![0.0; d.len()];
        vals[1] = -1.0;
        let u = GridFunction::new(d, vals).unwrap();
        assert!(matches!(schwarz_symmetrize(&u), Err(Error::NegativeValue { cell: 1, .. })));
    }

    #[test]
    fn polarize_single_cell_moves_into_h() {
        let d = make_domain(2, Shape::Box, 1.0, 0.125).unwrap();
        let pol = GridExactPolarizer::Axis { axis: 0, offset_cells: 1, sign: 1 };
        // x1 = 0.6875 is outside H (b = 0.125); its image is -0.4375
        let src = d.linear_index(&[13, 5]);
        let Image::Cell(dst) = pol.image(&d, src) else { panic!() };
        assert!(!pol.contains(&d, src) && pol.contains(&d, dst));
        let mut vals = vec![0.0; d.len()];
        vals[src] = 1.0;
        let u = GridFunction::new(d.clone(), vals).unwrap();
        let out = polarize(&u, &pol).unwrap();
        assert_eq!(out.get(dst), 1.0);
        assert_eq!(out.get(src), 0.0);
        assert_eq!(out.values().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn polarized_input_is_unchanged() {
        let d = ball(8);
        let pol = GridExactPolarizer::Diag { diag: -1, offset_cells: 2, sign: 1 };
        let once = polarize(&random_u(&d, 9), &pol).unwrap();
        assert_eq!(polarize(&once, &pol).unwrap().values(), once.values());
    }

    #[test]
    fn general_agrees_with_exact() {
        let d = ball(8);
        let u = smooth_bump(&d, &[0.2, -0.1], 0.6, 1.0).unwrap();
        for pol in all_polarizers(&d) {
            let exact = polarize(&u, &pol).unwrap();
            let general = polarize_general(&u, &pol.polarizer(2, d.spacing()).unwrap()).unwrap();
            assert_eq!(exact.values(), general.values(), "{pol:?}");
        }
        let zero = GridFunction::zeros(d.clone());
        let p = Polarizer::new(&[0.6, 0.8], 0.1).unwrap();
        assert!(polarize_general(&zero, &p).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sampler_is_deterministic_and_valid() {
        let d = ball(16);
        let a = sample_polarizers(&d, 1, 3).unwrap();
        assert_eq!(a, sample_polarizers(&d, 1, 3).unwrap());
        let many = sample_polarizers(&d, 7, 500).unwrap();
        for p in &many.items {
            p.validate(&d).unwrap();
            assert!(p.polarizer(2, d.spacing()).unwrap().offset() > 0.0);
        }
        assert!(sample_polarizers(&d, 1, 0).is_err());
        assert!(sample_polarizers_capped(&d, 1, 5, 0.5 * d.spacing()).is_err());
    }

    #[test]
    fn sequence_json_round_trip() {
        let d = ball(16);
        let seq = sample_polarizers(&d, 42, 20).unwrap();
        let text = serde_json::to_string(&seq).unwrap();
        assert!(text.contains("\"offset_cells\""));
        let back: PolarizerSequence = serde_json::from_str(&text).unwrap();
        assert_eq!(back, seq);
        let parsed: PolarizerSequence = serde_json::from_str(
            r#"{"seed":5,"items":[{"axis":1,"offset_cells":2,"sign":-1},{"diag":1,"offset_cells":3,"sign":1}]}"#,
        )
        .unwrap();
        assert_eq!(parsed.items[0], GridExactPolarizer::Axis { axis: 1, offset_cells: 2, sign: -1 });
        assert_eq!(parsed.items[1], GridExactPolarizer::Diag { diag: 1, offset_cells: 3, sign: 1 });
    }

    #[test]
    fn distribution_function_edges() {
        let d = make_domain(2, Shape::Box, 1.0, 0.25).unwrap();
        let u = random_u(&d, 11);
        assert_eq!(distribution_function(&u, -1.0), d.measure());
        assert_eq!(distribution_function(&u, u.max()), 0.0);
    }

    #[test]
    fn fixed_point_terminates_immediately() {
        let d = ball(16);
        let star = schwarz_symmetrize(&smooth_bump(&d, &[0.3, 0.1], 0.5, 1.0).unwrap()).unwrap();
        let seq = sample_polarizers(&d, 0, 10).unwrap();
        let (out, hist) = iterate_polarizations(&star, &seq, 10, 1e-12, 2.0, None).unwrap();
        assert_eq!(hist.len(), 1);
        assert_eq!(hist[0].distance, 0.0);
        assert_eq!(out.values(), star.values());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rearrangements_are_permutations(seed in any::<u64>(), k in 0usize..12) {
            let d = ball(6);
            let u = random_u(&d, seed);
            let pols = all_polarizers(&d);
            let pol = pols[k % pols.len()];
            let h = polarize(&u, &pol).unwrap();
            let s = schwarz_symmetrize(&u).unwrap();
            prop_assert_eq!(sorted_values(&h), sorted_values(&u));
            prop_assert_eq!(sorted_values(&s), sorted_values(&u));
            for t in [0.1, 0.37, 0.5, 0.93] {
                prop_assert_eq!(distribution_function(&h, t), distribution_function(&u, t));
                prop_assert_eq!(distribution_function(&s, t), distribution_function(&u, t));
            }
        }

        #[test]
        fn symmetrization_is_radially_nonincreasing(seed in any::<u64>()) {
            let d = ball(5);
            let s = schwarz_symmetrize(&random_u(&d, seed)).unwrap();
            let order = d.radial_order();
            for w in order.windows(2) {
                prop_assert!(s.get(w[0]) >= s.get(w[1]));
            }
        }

        #[test]
        fn polarization_does_not_increase_distance_beyond_ties(seed in any::<u64>(), k in 0usize..12) {
            let d = ball(6);
            let u = random_u(&d, seed);
            let star = schwarz_symmetrize(&u).unwrap();
            let pol = all_polarizers(&d)[k];
            let h = polarize(&u, &pol).unwrap();
            let before = lp_distance(&u, &star, 2.0).unwrap();
            let after = lp_distance(&h, &star, 2.0).unwrap();
            prop_assert!(after <= before + tie_slack(&star, 2.0).unwrap() + 1e-12);
        }
    }
}
