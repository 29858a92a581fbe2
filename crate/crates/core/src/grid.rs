//! Uniform cell-centered grids on `[-L, L]^N`, grid functions with zero
//! extension, midpoint quadrature and finite-difference gradients.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Maximum supported dimension.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Cells whose center lies outside `B_R(0)` are masked.
    Ball { radius: f64 },
    /// The whole box `[-L, L]^N`, a truncation of `R^N`.
    Box,
}

/// A uniform lattice of `n^N` cells of side `h` covering `[-L, L]^N`.
///
/// `n = 2L/h` is even, so the lattice is symmetric about the origin and no
/// cell is centered at it. Cells are stored row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct GridDomain {
    dim: usize,
    h: f64,
    half_extent: f64,
    n: usize,
    shape: Shape,
    active: Vec<bool>,
    radius: Vec<f64>,
    radius_key: Vec<u64>,
    radial_order: Vec<usize>,
}

/// Builds a domain, validating that `L/h` is a positive integer.
pub fn make_domain(dim: usize, shape: Shape, half_extent: f64, h: f64) -> Result<Arc<GridDomain>> {
    GridDomain::new(dim, shape, half_extent, h).map(Arc::new)
}

impl GridDomain {
    pub fn new(dim: usize, shape: Shape, half_extent: f64, h: f64) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidDomain(format!("dimension {dim} not in {{2, 3}}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidDomain(format!("spacing h = {h} must be positive")));
        }
        if !(half_extent > 0.0 && half_extent.is_finite()) {
            return Err(Error::InvalidDomain(format!("half extent L = {half_extent} must be positive")));
        }
        let ratio = half_extent / h;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidDomain(format!("L/h = {ratio} is not a positive integer")));
        }
        if let Shape::Ball { radius } = shape {
            if !(radius > 0.0) || radius > half_extent * (1.0 + 1e-12) {
                return Err(Error::InvalidDomain(format!(
                    "ball radius {radius} must satisfy 0 < R <= L = {half_extent}"
                )));
            }
        }
        let n = 2 * k as usize;
        // Use the snapped half extent so centers are exact multiples of h/2.
        let half_extent = k * h;
        let len = n.pow(dim as u32);
        let mut active = Vec::with_capacity(len);
        let mut radius = Vec::with_capacity(len);
        let mut radius_key = Vec::with_capacity(len);
        let mut domain = GridDomain {
            dim,
            h,
            half_extent,
            n,
            shape,
            active: Vec::new(),
            radius: Vec::new(),
            radius_key: Vec::new(),
            radial_order: Vec::new(),
        };
        for idx in 0..len {
            let m = domain.multi_index(idx);
            let key: u64 = (0..dim).map(|d| domain.half_step_coordinate(m[d]).pow(2) as u64).sum();
            let r = 0.5 * h * (key as f64).sqrt();
            radius_key.push(key);
            radius.push(r);
            active.push(match shape {
                Shape::Ball { radius: big_r } => r <= big_r * (1.0 + 1e-12),
                Shape::Box => true,
            });
        }
        let mut order: Vec<usize> = (0..len).filter(|&i| active[i]).collect();
        order.sort_by_key(|&i| (radius_key[i], i));
        domain.active = active;
        domain.radius = radius;
        domain.radius_key = radius_key;
        domain.radial_order = order;
        Ok(domain)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Cells per axis.
    pub fn cells_per_axis(&self) -> usize {
        self.n
    }

    /// Total number of lattice cells, masked ones included.
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.active[idx]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Measure of the unmasked region, `h^N * #active`.
    pub fn measure(&self) -> f64 {
        self.active_count() as f64 * self.cell_volume()
    }

    /// Distance of a cell center from the origin.
    pub fn radius(&self, idx: usize) -> f64 {
        self.radius[idx]
    }

    pub fn radii(&self) -> &[f64] {
        &self.radius
    }

    /// `|x|^2` in units of `(h/2)^2`; exact, so equal-radius cells compare equal.
    pub fn radius_key(&self, idx: usize) -> u64 {
        self.radius_key[idx]
    }

    /// Unmasked cells sorted by ascending radius, ties by linear index.
    pub fn radial_order(&self) -> &[usize] {
        &self.radial_order
    }

    /// Cell coordinate in units of `h/2`: the odd integer `2i + 1 - n`.
    pub fn half_step_coordinate(&self, i: usize) -> i64 {
        2 * i as i64 + 1 - self.n as i64
    }

    /// Inverse of [`half_step_coordinate`](Self::half_step_coordinate) for
    /// odd `q`; the result may lie outside `0..n`.
    pub fn index_from_half_steps(&self, q: i64) -> i64 {
        (q + self.n as i64 - 1).div_euclid(2)
    }

    /// Multi-index of a cell; entries past `dim` are zero.
    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for d in (0..self.dim).rev() {
            out[d] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Linear index of a signed multi-index, `None` outside the box.
    pub fn checked_index(&self, multi: &[i64]) -> Option<usize> {
        let mut acc = 0usize;
        for &i in &multi[..self.dim] {
            if i < 0 || i >= self.n as i64 {
                return None;
            }
            acc = acc * self.n + i as usize;
        }
        Some(acc)
    }

    /// Coordinate of cell index `i` along any axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        self.half_step_coordinate(i) as f64 * (0.5 * self.h)
    }

    /// Cell center; entries past `dim` are zero.
    pub fn center(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(idx);
        let mut x = [0.0; MAX_DIM];
        for d in 0..self.dim {
            x[d] = self.coordinate(m[d]);
        }
        x
    }

    /// Continuous (fractional) cell index of a coordinate, so that cell
    /// centers map to integers.
    pub fn fractional_index(&self, x: f64) -> f64 {
        (x + self.half_extent) / self.h - 0.5
    }
}

#[derive(Debug, Default)]
struct StencilPoint {
    cell: usize,
    sigma: usize,
    value: f64,
    diff: [f64; MAX_DIM],
    norm: f64,
    other: f64,
    other_diff: [f64; MAX_DIM],
}

/// Neumaier-compensated sum in iteration order.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Cell-centered nodal values on a domain, zero on masked cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    domain: Arc<GridDomain>,
    values: Vec<f64>,
}

impl GridFunction {
    /// Wraps `values`; masked cells are forced to zero.
    pub fn new(domain: Arc<GridDomain>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidFunction(format!("expected {} values, got {}", domain.len(), values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("value at cell {i}")));
        }
        for (v, &a) in values.iter_mut().zip(domain.active_mask()) {
            if !a {
                *v = 0.0;
            }
        }
        Ok(GridFunction { domain, values })
    }

    pub fn zeros(domain: Arc<GridDomain>) -> Self {
        let values = vec![0.0; domain.len()];
        GridFunction { domain, values }
    }

    /// Samples `f` at every active cell center.
    pub fn from_fn(domain: Arc<GridDomain>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let dim = domain.dim();
        let values =
            (0..domain.len()).map(|i| if domain.is_active(i) { f(&domain.center(i)[..dim]) } else { 0.0 }).collect();
        Self::new(domain, values)
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Value at a signed multi-index, zero outside the box.
    pub fn get_signed(&self, multi: &[i64]) -> f64 {
        self.domain.checked_index(multi).map_or(0.0, |i| self.values[i])
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Errors with the first negative cell.
    pub fn require_nonnegative(&self) -> Result<()> {
        match self.values.iter().position(|&v| v < 0.0) {
            Some(cell) => Err(Error::NegativeValue { cell, value: self.values[cell] }),
            None => Ok(()),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.domain.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        GridFunction { domain: self.domain.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }

    /// `self + c * other` on the same domain.
    pub fn axpy(&self, c: f64, other: &GridFunction) -> Result<Self> {
        self.check_same_domain(other)?;
        Self::new(self.domain.clone(), self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect())
    }

    pub(crate) fn check_same_domain(&self, other: &GridFunction) -> Result<()> {
        if Arc::ptr_eq(&self.domain, &other.domain) || *self.domain == *other.domain {
            Ok(())
        } else {
            Err(Error::InvalidFunction("grid functions live on different domains".into()))
        }
    }

    /// Pointwise map into a cell field.
    pub fn field(&self, f: impl Fn(usize, f64) -> f64) -> CellField {
        CellField {
            domain: self.domain.clone(),
            values: self.values.iter().enumerate().map(|(i, &v)| f(i, v)).collect(),
        }
    }
}

/// A derived per-cell scalar on the same lattice as its source.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    domain: Arc<GridDomain>,
    values: Vec<f64>,
}

impl CellField {
    pub fn new(domain: Arc<GridDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidFunction(format!("expected {} values, got {}", domain.len(), values.len())));
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::NonFinite(format!("NaN in cell field at {i}")));
        }
        Ok(CellField { domain, values })
    }

    pub fn constant(domain: Arc<GridDomain>, c: f64) -> Self {
        let values = vec![c; domain.len()];
        CellField { domain, values }
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Midpoint quadrature `h^N * Σ` over unmasked cells, compensated and in
/// storage order.
pub fn integrate(field: &CellField) -> f64 {
    let d = &field.domain;
    d.cell_volume() * compensated_sum(field.values.iter().zip(d.active_mask()).filter(|(_, &a)| a).map(|(&v, _)| v))
}

/// Forward-difference gradient magnitude with zero extension beyond the
/// mask and the box.
pub fn gradient_magnitude(u: &GridFunction) -> CellField {
    let d = u.domain();
    let dim = d.dim();
    let h = d.spacing();
    let values = (0..d.len())
        .map(|idx| {
            let m = d.multi_index(idx);
            let here = u.get(idx);
            let mut sq = 0.0;
            for axis in 0..dim {
                let mut nb = [0i64; MAX_DIM];
                for k in 0..dim {
                    nb[k] = m[k] as i64;
                }
                nb[axis] += 1;
                let diff = (u.get_signed(&nb) - here) / h;
                sq += diff * diff;
            }
            sq.sqrt()
        })
        .collect();
    CellField { domain: d.clone(), values }
}

fn check_exponent(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidExponent(format!("p = {p} must be >= 1")))
    }
}

/// `(∫ |u|^p)^{1/p}`.
pub fn lp_norm(u: &GridFunction, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(integrate(&u.field(|_, v| v.abs().powf(p))).powf(1.0 / p))
}

/// Discrete `(∫ |Du|^p)^{1/p}` using the symmetric one-sided stencil average
/// (see [`Stencil`]). Zero extension applies across the mask and the box.
pub fn grad_lp_norm(u: &GridFunction, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let stencil = Stencil::new(u);
    let total = stencil.sum(|_, t| t.powf(p));
    Ok((u.domain().cell_volume() * total).powf(1.0 / p))
}

/// Symmetric one-sided difference stencils on the zero-extended lattice.
///
/// For every cell `c` of the box plus one ghost ring, and every choice
/// `σ ∈ {forward, backward}^N`, the stencil gradient `D^σ u(c)` uses the
/// forward difference along the axes where `σ` is forward and the backward
/// difference elsewhere. Gradient integrals are `h^N Σ_c 2^{-N} Σ_σ φ(u_c, |D^σ u(c)|)`.
/// The family of stencils is mapped onto itself by every lattice reflection
/// and equals the standard 2N+1-point energy when `φ = t^2`.
pub(crate) struct Stencil {
    dim: usize,
    h: f64,
    /// Cells per axis of the padded array (box + two ghost rings per side).
    np: usize,
    strides: [usize; MAX_DIM],
    padded: Vec<f64>,
}

impl Stencil {
    pub(crate) fn new(u: &GridFunction) -> Self {
        Self::from_values(u.domain(), u.values())
    }

    pub(crate) fn from_values(domain: &GridDomain, values: &[f64]) -> Self {
        let dim = domain.dim();
        let n = domain.cells_per_axis();
        let np = n + 4;
        let mut strides = [0; MAX_DIM];
        let mut s = 1;
        for d in (0..dim).rev() {
            strides[d] = s;
            s *= np;
        }
        let mut padded = vec![0.0; np.pow(dim as u32)];
        for (idx, &v) in values.iter().enumerate() {
            if v != 0.0 {
                padded[Self::pad_index_of(domain, &strides, idx)] = v;
            }
        }
        Stencil { dim, h: domain.spacing(), np, strides, padded }
    }

    fn pad_index_of(domain: &GridDomain, strides: &[usize; MAX_DIM], idx: usize) -> usize {
        let m = domain.multi_index(idx);
        (0..domain.dim()).map(|d| (m[d] + 2) * strides[d]).sum()
    }

    pub(crate) fn pad_index(&self, domain: &GridDomain, idx: usize) -> usize {
        Self::pad_index_of(domain, &self.strides, idx)
    }

    fn stencil_count(&self) -> usize {
        1 << self.dim
    }

    /// Visits every (cell, σ) of the box plus one ghost ring, optionally
    /// alongside a second padded array on the same lattice. The visitor
    /// receives a [`StencilPoint`].
    fn visit(&self, other: Option<&[f64]>, mut f: impl FnMut(&StencilPoint)) {
        let dim = self.dim;
        let lo = 1;
        let hi = self.np - 1;
        let mut m = [0; MAX_DIM];
        m[..dim].fill(lo);
        let mut fwd = [[0.0; MAX_DIM]; 2];
        let mut bwd = [[0.0; MAX_DIM]; 2];
        let mut pt = StencilPoint::default();
        loop {
            let c: usize = (0..dim).map(|d| m[d] * self.strides[d]).sum();
            pt.cell = c;
            pt.value = self.padded[c];
            for d in 0..dim {
                let s = self.strides[d];
                fwd[0][d] = (self.padded[c + s] - pt.value) / self.h;
                bwd[0][d] = (pt.value - self.padded[c - s]) / self.h;
            }
            if let Some(v) = other {
                pt.other = v[c];
                for d in 0..dim {
                    let s = self.strides[d];
                    fwd[1][d] = (v[c + s] - v[c]) / self.h;
                    bwd[1][d] = (v[c] - v[c - s]) / self.h;
                }
            }
            for sigma in 0..self.stencil_count() {
                let mut sq = 0.0;
                for d in 0..dim {
                    let backward = sigma >> d & 1 == 1;
                    pt.diff[d] = if backward { bwd[0][d] } else { fwd[0][d] };
                    pt.other_diff[d] = if backward { bwd[1][d] } else { fwd[1][d] };
                    sq += pt.diff[d] * pt.diff[d];
                }
                pt.sigma = sigma;
                pt.norm = sq.sqrt();
                f(&pt);
            }
            // odometer over [lo, hi)^dim
            let mut d = dim;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                m[d] += 1;
                if m[d] < hi {
                    break;
                }
                m[d] = lo;
            }
        }
    }

    /// `Σ_c 2^{-N} Σ_σ φ(u_c, |D^σ u(c)|)` (without the `h^N` factor).
    pub(crate) fn sum(&self, mut phi: impl FnMut(f64, f64) -> f64) -> f64 {
        let mut sum = 0.0;
        let mut comp = 0.0;
        self.visit(None, |pt| {
            let v = phi(pt.value, pt.norm);
            let s = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - s) + v;
            } else {
                comp += (v - s) + sum;
            }
            sum = s;
        });
        (sum + comp) / self.stencil_count() as f64
    }

    /// Gradient of `Σ_c 2^{-N} Σ_σ φ(u_c, |D^σ u(c)|)` with respect to the
    /// padded values, given `(φ_s, φ_t)`. The `φ_t · D/|D|` term is taken as
    /// zero where `|D| = 0`.
    pub(crate) fn adjoint(&self, mut partials: impl FnMut(f64, f64) -> (f64, f64)) -> Vec<f64> {
        let mut grad = vec![0.0; self.padded.len()];
        let w = 1.0 / self.stencil_count() as f64;
        let h = self.h;
        let strides = self.strides;
        self.visit(None, |pt| {
            let (ps, ptt) = partials(pt.value, pt.norm);
            let c = pt.cell;
            grad[c] += w * ps;
            if pt.norm > 0.0 {
                let coef = w * ptt / pt.norm / h;
                for d in 0..self.dim {
                    let g = coef * pt.diff[d];
                    if pt.sigma >> d & 1 == 0 {
                        grad[c + strides[d]] += g;
                        grad[c] -= g;
                    } else {
                        grad[c] += g;
                        grad[c - strides[d]] -= g;
                    }
                }
            }
        });
        grad
    }

    /// `Σ_c 2^{-N} Σ_σ [ φ_t (D^σ u · D^σ v)/|D^σ u| + φ_s v_c ]`, the
    /// directional derivative along `v`, evaluated stencil by stencil.
    pub(crate) fn directional(&self, v: &Stencil, mut partials: impl FnMut(f64, f64) -> (f64, f64)) -> f64 {
        let mut total = 0.0;
        self.visit(Some(&v.padded), |pt| {
            let (ps, ptt) = partials(pt.value, pt.norm);
            let mut term = ps * pt.other;
            if pt.norm > 0.0 {
                let dot: f64 = (0..self.dim).map(|d| pt.diff[d] * pt.other_diff[d]).sum();
                term += ptt * dot / pt.norm;
            }
            total += term;
        });
        total / self.stencil_count() as f64
    }

    /// Restricts a padded array back onto the box lattice.
    pub(crate) fn unpad(&self, domain: &GridDomain, padded: &[f64]) -> Vec<f64> {
        (0..domain.len()).map(|i| padded[self.pad_index(domain, i)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box2(l: f64, h: f64) -> Arc<GridDomain> {
        make_domain(2, Shape::Box, l, h).unwrap()
    }

    #[test]
    fn box_lattice_centers() {
        let d = box2(1.0, 0.5);
        assert_eq!(d.cells_per_axis(), 4);
        assert_eq!(d.len(), 16);
        let coords: Vec<f64> = (0..4).map(|i| d.coordinate(i)).collect();
        assert_eq!(coords, vec![-0.75, -0.25, 0.25, 0.75]);
        assert_eq!(d.center(0)[..2], [-0.75, -0.75]);
        assert_eq!(d.center(15)[..2], [0.75, 0.75]);
    }

    #[test]
    fn ball_masks_outer_cells() {
        let d = make_domain(2, Shape::Ball { radius: 1.0 }, 1.0, 0.25).unwrap();
        assert_eq!(d.cells_per_axis(), 8);
        for i in 0..d.len() {
            assert_eq!(d.is_active(i), d.radius(i) <= 1.0);
        }
        assert!(!d.is_active(0));
        assert!(d.active_count() < 64);
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(make_domain(2, Shape::Box, 1.0, 0.3).is_err());
        assert!(make_domain(2, Shape::Ball { radius: 2.0 }, 1.0, 0.25).is_err());
        assert!(make_domain(4, Shape::Box, 1.0, 0.25).is_err());
        assert!(make_domain(1, Shape::Box, 1.0, 0.25).is_err());
    }

    #[test]
    fn integrate_constants() {
        let d = box2(1.0, 0.5);
        assert_eq!(integrate(&CellField::constant(d.clone(), 1.0)), 4.0);
        assert_eq!(integrate(&CellField::constant(d, 0.0)), 0.0);
        let ball = make_domain(2, Shape::Ball { radius: 1.0 }, 1.0, 0.05).unwrap();
        let area = integrate(&CellField::constant(ball, 1.0));
        assert!((area - std::f64::consts::PI).abs() <= 0.15, "area {area}");
    }

    #[test]
    fn masked_cells_read_zero() {
        let d = make_domain(2, Shape::Ball { radius: 1.0 }, 1.0, 0.25).unwrap();
        let u = GridFunction::new(d.clone(), vec![7.0; d.len()]).unwrap();
        for i in 0..d.len() {
            assert_eq!(u.get(i), if d.is_active(i) { 7.0 } else { 0.0 });
        }
    }

    #[test]
    fn linear_function_has_unit_gradient_inside() {
        let d = box2(1.0, 0.125);
        let u = GridFunction::from_fn(d.clone(), |x| x[0] + 2.0).unwrap();
        let g = gradient_magnitude(&u);
        let n = d.cells_per_axis();
        for idx in 0..d.len() {
            let m = d.multi_index(idx);
            if m[0] + 1 < n && m[1] + 1 < n {
                assert!((g.values()[idx] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_gradient_counts_boundary_faces() {
        let d = box2(1.0, 0.25);
        let c = 3.0;
        let u = GridFunction::new(d.clone(), vec![c; d.len()]).unwrap();
        let g = gradient_magnitude(&u);
        let n = d.cells_per_axis();
        for idx in 0..d.len() {
            let m = d.multi_index(idx);
            let faces = (m[0] + 1 == n) as usize + (m[1] + 1 == n) as usize;
            let expected = c / 0.25 * (faces as f64).sqrt();
            assert!((g.values()[idx] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn lp_norm_of_indicator() {
        let d = box2(1.0, 0.25);
        let mut v = vec![0.0; d.len()];
        for x in v.iter_mut().take(5) {
            *x = 1.0;
        }
        let u = GridFunction::new(d.clone(), v).unwrap();
        assert!((lp_norm(&u, 1.0).unwrap() - 5.0 * 0.0625).abs() < 1e-15);
        assert!(lp_norm(&u, 0.5).is_err());
    }

    #[test]
    fn symmetric_stencil_is_standard_dirichlet_energy_at_p2() {
        let d = box2(1.0, 0.25);
        let vals: Vec<f64> = (0..d.len()).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let u = GridFunction::new(d.clone(), vals).unwrap();
        // Σ over all lattice edges (with zero extension) of (Δu/h)^2 h^2.
        let h = d.spacing();
        let n = d.cells_per_axis() as i64;
        let mut edges = 0.0;
        for i in -1..n {
            for j in -1..n {
                let here = u.get_signed(&[i, j]);
                let right = u.get_signed(&[i + 1, j]);
                let up = u.get_signed(&[i, j + 1]);
                edges += ((right - here) / h).powi(2) + ((up - here) / h).powi(2);
            }
        }
        edges *= h * h;
        let norm2 = grad_lp_norm(&u, 2.0).unwrap().powi(2);
        assert!((norm2 - edges).abs() < 1e-12 * edges, "{norm2} vs {edges}");
    }
}
