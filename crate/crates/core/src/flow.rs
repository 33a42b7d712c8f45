//! Hamiltonian dynamics on a Darboux box: sampled fields, symplectic
//! gradients, flows, pullbacks, Jacobian checks and mollification by
//! coordinate translations.
//!
//! Axes are ordered `x_1..x_n, y_1..y_n` and the symplectic form is
//! `Σ dx_ν ∧ dy_ν`, so `sgrad h = (∂h/∂y, −∂h/∂x)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadratic::{standard_j, QuadraticForm};
use crate::rng::Philox;

/// Largest supported phase-space dimension (`n ≤ 3`).
pub const MAX_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    CompactSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DarbouxBox {
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    points: Vec<usize>,
    boundary: Boundary,
    #[serde(skip)]
    strides: Vec<usize>,
}

impl DarbouxBox {
    /// Compact-support boxes place nodes on both faces; periodic boxes omit
    /// the upper face, which is identified with the lower one.
    pub fn new(n: usize, lo: Vec<f64>, hi: Vec<f64>, points: Vec<usize>, boundary: Boundary) -> Result<Self> {
        let d = 2 * n;
        if n == 0 || d > MAX_DIM {
            return Err(Error::DimensionMismatch { expected: MAX_DIM, got: d });
        }
        for len in [lo.len(), hi.len(), points.len()] {
            if len != d {
                return Err(Error::DimensionMismatch { expected: d, got: len });
            }
        }
        for axis in 0..d {
            if points[axis] < 4 {
                return Err(Error::GridTooCoarse { axis, points: points[axis], min: 4 });
            }
            if !(lo[axis] < hi[axis]) || !lo[axis].is_finite() || !hi[axis].is_finite() {
                return Err(Error::Precondition(format!("axis {axis}: empty extent")));
            }
        }
        let mut strides = vec![1; d];
        for a in (0..d - 1).rev() {
            strides[a] = strides[a + 1] * points[a + 1];
        }
        Ok(Self { n, lo, hi, points, boundary, strides })
    }

    pub fn cube(n: usize, half_width: f64, points: usize, boundary: Boundary) -> Result<Self> {
        let d = 2 * n;
        Self::new(n, vec![-half_width; d], vec![half_width; d], vec![points; d], boundary)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let cells = match self.boundary {
            Boundary::Periodic => self.points[axis],
            Boundary::CompactSupport => self.points[axis] - 1,
        };
        (self.hi[axis] - self.lo[axis]) / cells as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn node_count(&self) -> usize {
        self.points.iter().product()
    }

    /// Row-major strides: the last axis varies fastest.
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn node_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        let mut r = flat;
        for a in (0..self.dim()).rev() {
            idx[a] = r % self.points[a];
            r /= self.points[a];
        }
        idx
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + i as f64 * self.spacing(axis)
    }

    pub fn node_point(&self, flat: usize) -> Vec<f64> {
        self.node_index(flat).iter().enumerate().map(|(a, &i)| self.coord(a, i)).collect()
    }

    /// Distance in nodes from the nearest face (compact boxes only).
    pub fn face_distance(&self, flat: usize) -> usize {
        self.node_index(flat)
            .iter()
            .zip(&self.points)
            .map(|(&i, &p)| i.min(p - 1 - i))
            .min()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: DarbouxBox,
    samples: Vec<f64>,
}

/// Catmull-Rom weights for the nodes `i−1, i, i+1, i+2` at offset `t ∈ [0, 1)`.
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

fn catmull_rom_derivative(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ]
}

struct Stencil {
    offsets: [[Option<usize>; 4]; MAX_DIM],
    weights: [[f64; 4]; MAX_DIM],
    derivs: [[f64; 4]; MAX_DIM],
}

impl GridField {
    pub fn new(grid: DarbouxBox, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.node_count() {
            return Err(Error::LengthMismatch { expected: grid.node_count(), got: samples.len() });
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!("sample {i} is not finite")));
        }
        Ok(Self { grid, samples })
    }

    pub fn from_fn(grid: DarbouxBox, f: impl Fn(&[f64]) -> f64) -> Self {
        let samples = (0..grid.node_count()).map(|k| f(&grid.node_point(k))).collect();
        Self { grid, samples }
    }

    pub fn zeros(grid: DarbouxBox) -> Self {
        let samples = vec![0.0; grid.node_count()];
        Self { grid, samples }
    }

    pub fn grid(&self) -> &DarbouxBox {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Riemann sum over the nodes; for compact fields vanishing on the faces
    /// this is the trapezoid rule.
    pub fn integral(&self) -> f64 {
        self.samples.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max_difference(&self, other: &GridField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::SpaceMismatch);
        }
        Ok(self.samples.iter().zip(&other.samples).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        Self { grid: self.grid.clone(), samples: self.samples.iter().map(|&v| f(v)).collect() }
    }

    fn stencil(&self, z: &[f64]) -> Option<Stencil> {
        let g = &self.grid;
        let strides = g.strides();
        let mut st = Stencil {
            offsets: [[None; 4]; MAX_DIM],
            weights: [[0.0; 4]; MAX_DIM],
            derivs: [[0.0; 4]; MAX_DIM],
        };
        for a in 0..g.dim() {
            let h = g.spacing(a);
            let n = g.points[a] as i64;
            let u = (z[a] - g.lo[a]) / h;
            let (base, t) = match g.boundary {
                Boundary::CompactSupport => {
                    if u < 0.0 || u > (n - 1) as f64 {
                        return None;
                    }
                    let i = (u.floor() as i64).min(n - 2);
                    (i, u - i as f64)
                }
                Boundary::Periodic => {
                    let i = u.floor();
                    (i as i64, u - i)
                }
            };
            st.weights[a] = catmull_rom(t);
            let dw = catmull_rom_derivative(t);
            for j in 0..4 {
                st.derivs[a][j] = dw[j] / h;
                let node = base - 1 + j as i64;
                st.offsets[a][j] = match g.boundary {
                    Boundary::CompactSupport => (0..n).contains(&node).then(|| node as usize * strides[a]),
                    Boundary::Periodic => Some(node.rem_euclid(n) as usize * strides[a]),
                };
            }
        }
        Some(st)
    }

    /// Tensor-product sum over the 4^d stencil nodes, innermost axis
    /// contiguous.
    fn accumulate(&self, st: &Stencil, deriv_axis: Option<usize>) -> f64 {
        let last = self.grid.dim() - 1;
        let row = |a: usize| if deriv_axis == Some(a) { &st.derivs[a] } else { &st.weights[a] };
        let inner = row(last);
        let mut idx = [0usize; MAX_DIM];
        let mut sum = 0.0;
        'outer: loop {
            let mut w = 1.0;
            let mut offset = 0;
            let mut live = true;
            for (a, &j) in idx.iter().enumerate().take(last) {
                match st.offsets[a][j] {
                    Some(o) if row(a)[j] != 0.0 => {
                        w *= row(a)[j];
                        offset += o;
                    }
                    _ => {
                        live = false;
                        break;
                    }
                }
            }
            if live {
                for j in 0..4 {
                    if let Some(o) = st.offsets[last][j] {
                        sum += w * inner[j] * self.samples[offset + o];
                    }
                }
            }
            let mut a = last;
            loop {
                if a == 0 {
                    break 'outer;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < 4 {
                    continue 'outer;
                }
                idx[a] = 0;
            }
        }
        sum
    }

    /// Tensor Catmull-Rom interpolant. Exact on nodes and on quadratics away
    /// from faces; compact fields are zero outside the box.
    pub fn value(&self, z: &[f64]) -> f64 {
        match self.stencil(z) {
            Some(st) => self.accumulate(&st, None),
            None => 0.0,
        }
    }

    /// Gradient of the interpolant.
    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        match self.stencil(z) {
            Some(st) => (0..self.grid.dim()).map(|a| self.accumulate(&st, Some(a))).collect(),
            None => vec![0.0; self.grid.dim()],
        }
    }

    /// Second-order derivative along `axis` at every node: central in the
    /// interior (wrapped for periodic boxes), one-sided on compact faces.
    pub fn partial(&self, axis: usize) -> GridField {
        let g = &self.grid;
        let stride = g.strides()[axis];
        let n = g.points[axis];
        let h = g.spacing(axis);
        let samples = (0..g.node_count())
            .map(|k| {
                let i = (k / stride) % n;
                let at = |j: usize| self.samples[k - i * stride + j * stride];
                match g.boundary {
                    Boundary::Periodic => (at((i + 1) % n) - at((i + n - 1) % n)) / (2.0 * h),
                    Boundary::CompactSupport if i == 0 => (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h),
                    Boundary::CompactSupport if i == n - 1 => {
                        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
                    }
                    Boundary::CompactSupport => (at(i + 1) - at(i - 1)) / (2.0 * h),
                }
            })
            .collect();
        GridField { grid: g.clone(), samples }
    }

    /// Largest third difference along any axis divided by ten. The cubic
    /// interpolant's one-dimensional error on cubic data peaks at
    /// `|Δ³f|·0.0962/6`, so this over-estimates the per-axis error
    /// and sums over axes.
    pub fn interpolation_error_estimate(&self) -> f64 {
        let g = &self.grid;
        let strides = g.strides();
        let mut total = 0.0;
        for (axis, &stride) in strides.iter().enumerate() {
            let n = g.points[axis];
            let mut worst: f64 = 0.0;
            for k in 0..g.node_count() {
                let i = (k / stride) % n;
                let base = k - i * stride;
                let at = |j: usize| self.samples[base + (j % n) * stride];
                if g.boundary == Boundary::CompactSupport && i + 3 >= n {
                    continue;
                }
                let d3 = at(i + 3) - 3.0 * at(i + 2) + 3.0 * at(i + 1) - at(i);
                worst = worst.max(d3.abs());
            }
            total += worst / 10.0;
        }
        total
    }
}

/// The symplectic gradient `(∂h/∂y, −∂h/∂x)` sampled on the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub components: Vec<GridField>,
}

impl VectorField {
    pub fn at_node(&self, flat: usize) -> Vec<f64> {
        self.components.iter().map(|c| c.samples[flat]).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }
}

pub fn sgrad(h: &GridField) -> Result<VectorField> {
    let g = h.grid();
    if let Some(axis) = (0..g.dim()).find(|&a| g.points[a] < 4) {
        return Err(Error::GridTooCoarse { axis, points: g.points[axis], min: 4 });
    }
    let n = g.n();
    let partials: Vec<GridField> = (0..g.dim()).map(|a| h.partial(a)).collect();
    let mut components = Vec::with_capacity(2 * n);
    for k in 0..n {
        components.push(partials[n + k].clone());
    }
    for k in 0..n {
        components.push(partials[k].map(|v| -v));
    }
    Ok(VectorField { components })
}

/// Exact linear field of a quadratic Hamiltonian: `ż = 2JA z`.
pub fn sgrad_quadratic(q: &QuadraticForm) -> DMatrix<f64> {
    q.hamiltonian_matrix()
}

pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum Hamiltonian {
    Quadratic(QuadraticForm),
    Grid(Arc<GridField>),
    /// A smooth Hamiltonian given by its gradient.
    Smooth { dim: usize, gradient: GradientFn },
}

impl fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hamiltonian::Quadratic(q) => f.debug_tuple("Quadratic").field(q).finish(),
            Hamiltonian::Grid(g) => f.debug_tuple("Grid").field(g.grid()).finish(),
            Hamiltonian::Smooth { dim, .. } => f.debug_struct("Smooth").field("dim", dim).finish(),
        }
    }
}

impl Hamiltonian {
    pub fn smooth(dim: usize, gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Hamiltonian::Smooth { dim, gradient: Arc::new(gradient) }
    }

    pub fn dim(&self) -> usize {
        match self {
            Hamiltonian::Quadratic(q) => 2 * q.n(),
            Hamiltonian::Grid(g) => g.grid().dim(),
            Hamiltonian::Smooth { dim, .. } => *dim,
        }
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Hamiltonian::Quadratic(q) => q.gradient(z),
            Hamiltonian::Grid(g) => g.gradient(z),
            Hamiltonian::Smooth { gradient, .. } => gradient(z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactLinear,
    Leapfrog,
}

#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub hamiltonian: Hamiltonian,
    pub duration: f64,
    pub steps: usize,
    pub method: Method,
}

/// An invertible map of phase space.
pub trait Diffeo: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, z: &[f64]) -> Vec<f64>;
    fn inverse(&self, z: &[f64]) -> Vec<f64>;
    /// Exact Jacobian when the map knows it.
    fn jacobian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    /// The matrix of a linear map.
    fn matrix(&self) -> Option<DMatrix<f64>> {
        None
    }
}

pub type FlowHandle = Arc<dyn Diffeo>;

#[derive(Debug, Clone)]
pub struct LinearMap {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), got: matrix.ncols() });
        }
        let inverse = matrix.clone().try_inverse().ok_or(Error::SingularMatrix)?;
        Ok(Self { matrix, inverse })
    }

    pub fn handle(matrix: DMatrix<f64>) -> Result<FlowHandle> {
        Ok(Arc::new(Self::new(matrix)?))
    }
}

fn mat_vec(m: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(z)).iter().copied().collect()
}

impl Diffeo for LinearMap {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        mat_vec(&self.matrix, z)
    }

    fn inverse(&self, z: &[f64]) -> Vec<f64> {
        mat_vec(&self.inverse, z)
    }

    fn jacobian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }

    fn matrix(&self) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Translation {
    pub shift: Vec<f64>,
}

impl Diffeo for Translation {
    fn dim(&self) -> usize {
        self.shift.len()
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.shift).map(|(a, b)| a + b).collect()
    }

    fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.shift).map(|(a, b)| a - b).collect()
    }

    fn jacobian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(self.shift.len(), self.shift.len()))
    }
}

/// `outer ∘ inner`.
pub struct Composed {
    pub outer: FlowHandle,
    pub inner: FlowHandle,
}

impl Diffeo for Composed {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.outer.apply(&self.inner.apply(z))
    }

    fn inverse(&self, z: &[f64]) -> Vec<f64> {
        self.inner.inverse(&self.outer.inverse(z))
    }

    fn jacobian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        let inner = self.inner.jacobian(z)?;
        let outer = self.outer.jacobian(&self.inner.apply(z))?;
        Some(outer * inner)
    }

    fn matrix(&self) -> Option<DMatrix<f64>> {
        Some(self.outer.matrix()? * self.inner.matrix()?)
    }
}

pub fn compose(outer: FlowHandle, inner: FlowHandle) -> FlowHandle {
    Arc::new(Composed { outer, inner })
}

/// Generalized Störmer–Verlet on `H(x, y)`, solving its implicit stages by
/// fixed-point iteration. The scheme is symmetric, so running it with `−dt`
/// inverts it.
pub struct Leapfrog {
    hamiltonian: Hamiltonian,
    dt: f64,
    steps: usize,
}

const FIXED_POINT_TOL: f64 = 1e-15;
const FIXED_POINT_ITERS: usize = 500;

impl Leapfrog {
    fn step(&self, z: &mut [f64], dt: f64) {
        let d = z.len();
        let n = d / 2;
        let half = 0.5 * dt;
        let settle = |cur: &mut Vec<f64>, update: &dyn Fn(&[f64]) -> Vec<f64>| {
            for _ in 0..FIXED_POINT_ITERS {
                let next = update(cur);
                let diff = next.iter().zip(cur.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                let scale = next.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                *cur = next;
                if diff <= FIXED_POINT_TOL * scale {
                    break;
                }
            }
        };
        let q0: Vec<f64> = z[..n].to_vec();
        let p0: Vec<f64> = z[n..].to_vec();
        let grad_at = |q: &[f64], p: &[f64]| {
            let mut w = q.to_vec();
            w.extend_from_slice(p);
            self.hamiltonian.gradient(&w)
        };
        // p½ = p − dt/2 · ∂H/∂x(q, p½)
        let mut p_half = p0.clone();
        settle(&mut p_half, &|ph| {
            let g = grad_at(&q0, ph);
            (0..n).map(|k| p0[k] - half * g[k]).collect()
        });
        // q₁ = q + dt/2 · (∂H/∂y(q, p½) + ∂H/∂y(q₁, p½))
        let g0 = grad_at(&q0, &p_half);
        let mut q1: Vec<f64> = (0..n).map(|k| q0[k] + dt * g0[n + k]).collect();
        settle(&mut q1, &|q| {
            let g = grad_at(q, &p_half);
            (0..n).map(|k| q0[k] + half * (g0[n + k] + g[n + k])).collect()
        });
        // p₁ = p½ − dt/2 · ∂H/∂x(q₁, p½)
        let g1 = grad_at(&q1, &p_half);
        for k in 0..n {
            z[k] = q1[k];
            z[n + k] = p_half[k] - half * g1[k];
        }
    }

    fn run(&self, z: &[f64], dt: f64) -> Vec<f64> {
        let mut w = z.to_vec();
        for _ in 0..self.steps {
            self.step(&mut w, dt);
        }
        w
    }
}

impl Diffeo for Leapfrog {
    fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.run(z, self.dt)
    }

    fn inverse(&self, z: &[f64]) -> Vec<f64> {
        self.run(z, -self.dt)
    }
}

/// Time-`duration` map of `sgrad H`.
pub fn flow(spec: &FlowSpec) -> Result<FlowHandle> {
    if spec.steps == 0 {
        return Err(Error::Precondition("steps must be at least 1".into()));
    }
    if !spec.duration.is_finite() {
        return Err(Error::Precondition("duration must be finite".into()));
    }
    match spec.method {
        Method::ExactLinear => match &spec.hamiltonian {
            Hamiltonian::Quadratic(q) => {
                let m = (sgrad_quadratic(q) * spec.duration).exp();
                LinearMap::handle(m)
            }
            _ => Err(Error::NotQuadratic),
        },
        Method::Leapfrog => {
            let dim = spec.hamiltonian.dim();
            if !dim.is_multiple_of(2) || dim == 0 {
                return Err(Error::DimensionMismatch { expected: 2, got: dim });
            }
            Ok(Arc::new(Leapfrog {
                hamiltonian: spec.hamiltonian.clone(),
                dt: spec.duration / spec.steps as f64,
                steps: spec.steps,
            }))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pullback {
    pub field: GridField,
    /// Heuristic bound on the interpolation error at off-node samples.
    pub interpolation_error: f64,
    pub integral_before: f64,
    pub integral_after: f64,
}

/// Number of node layers next to a compact face that the cubic stencil reads.
const STENCIL_REACH: usize = 2;

/// Samples `ξ ∘ g⁻¹` on the nodes of `ξ`'s box.
///
/// On a compact box a preimage outside the box reads zero; that is only
/// allowed when `ξ` already vanishes next to the faces.
pub fn pullback(g: &dyn Diffeo, xi: &GridField) -> Result<Pullback> {
    let grid = xi.grid();
    if g.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: g.dim() });
    }
    let node_count = grid.node_count();
    let preimages: Vec<Vec<f64>> = parallel_map(node_count, |k| g.inverse(&grid.node_point(k)));
    if grid.boundary() == Boundary::CompactSupport {
        let escapes = preimages.iter().any(|z| {
            z.iter().enumerate().any(|(a, &v)| v < grid.lo()[a] || v > grid.hi()[a])
        });
        if escapes {
            let layer = (0..node_count)
                .filter(|&k| grid.face_distance(k) <= STENCIL_REACH)
                .fold(0.0f64, |m, k| m.max(xi.samples()[k].abs()));
            if layer > 1e-10 * xi.max_abs().max(f64::MIN_POSITIVE) {
                return Err(Error::BoundarySupport { magnitude: layer });
            }
        }
    }
    let samples = parallel_map(node_count, |k| xi.value(&preimages[k]));
    let field = GridField::new(grid.clone(), samples)?;
    Ok(Pullback {
        interpolation_error: xi.interpolation_error_estimate(),
        integral_before: xi.integral(),
        integral_after: field.integral(),
        field,
    })
}

/// Deterministic fan-out over node indices.
pub(crate) fn parallel_map<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if threads <= 1 || count < 4096 {
        return (0..count).map(&f).collect();
    }
    let chunk = count.div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let start = (t * chunk).min(count);
                let end = ((t + 1) * chunk).min(count);
                scope.spawn(move || (start..end).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeReport {
    pub max_jacobian_deviation: f64,
    pub samples: usize,
    pub exact_jacobian: bool,
}

const JACOBIAN_STEP: f64 = 1e-5;

fn fd_jacobian(g: &dyn Diffeo, z: &[f64]) -> DMatrix<f64> {
    let d = z.len();
    let mut jac = DMatrix::zeros(d, d);
    for col in 0..d {
        let mut plus = z.to_vec();
        let mut minus = z.to_vec();
        plus[col] += JACOBIAN_STEP;
        minus[col] -= JACOBIAN_STEP;
        let (a, b) = (g.apply(&plus), g.apply(&minus));
        for row in 0..d {
            jac[(row, col)] = (a[row] - b[row]) / (2.0 * JACOBIAN_STEP);
        }
    }
    jac
}

/// `max |det Dg − 1|` over seeded uniform samples of `[lo, hi]`.
pub fn volume_check_in(g: &dyn Diffeo, lo: &[f64], hi: &[f64], samples: usize, seed: u64) -> VolumeReport {
    let mut rng = Philox::new(seed, 0);
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for _ in 0..samples {
        let z: Vec<f64> = lo.iter().zip(hi).map(|(&a, &b)| rng.range(a, b)).collect();
        let jac = match g.jacobian(&z) {
            Some(j) => j,
            None => {
                exact = false;
                fd_jacobian(g, &z)
            }
        };
        worst = worst.max((jac.determinant() - 1.0).abs());
    }
    VolumeReport { max_jacobian_deviation: worst, samples, exact_jacobian: exact }
}

/// [`volume_check_in`] on `[−1, 1]^{2n}` with a fixed seed.
pub fn volume_check(g: &dyn Diffeo, samples: usize) -> VolumeReport {
    let d = g.dim();
    volume_check_in(g, &vec![-1.0; d], &vec![1.0; d], samples, 0x5EED)
}

/// Flow for time `tau` of `x_ν` (`ν < n`) or `−x_ν` (`ν ≥ n`): a translation
/// by `τ · J∇H`.
pub fn coordinate_flow(n: usize, nu: usize, tau: f64) -> Translation {
    let d = 2 * n;
    let mut grad = vec![0.0; d];
    grad[nu] = if nu < n { 1.0 } else { -1.0 };
    let shift = mat_vec(&standard_j(n), &grad).into_iter().map(|v| v * tau).collect();
    Translation { shift }
}

/// Composite `g^t = g_1^{t_1} ∘ … ∘ g_{2n}^{t_{2n}}`.
pub fn coordinate_flow_composite(n: usize, t: &[f64]) -> FlowHandle {
    let mut handle: FlowHandle = Arc::new(Translation { shift: vec![0.0; 2 * n] });
    for nu in (0..2 * n).rev() {
        handle = compose(Arc::new(coordinate_flow(n, nu, t[nu])), handle);
    }
    handle
}

/// One-dimensional kernel profile `(1 − t²)³` on `[−1, 1]`, normalized.
pub fn kernel_profile(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - t * t;
        s * s * s * 35.0 / 32.0
    }
}

/// Four-point Gauss–Legendre on `[−1, 1]`; exact through degree 7.
const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_26, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_26, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];

#[derive(Clone)]
pub struct RegularizerSpec {
    lambda: f64,
    n: usize,
    profile: fn(f64) -> f64,
    /// The `2n` coordinate flows at unit time.
    pub coordinate_flows: Vec<FlowHandle>,
}

impl fmt::Debug for RegularizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegularizerSpec").field("lambda", &self.lambda).field("n", &self.n).finish()
    }
}

impl RegularizerSpec {
    /// Tensor kernel `Π χ₁(t_k)` with the default profile.
    pub fn new(n: usize, lambda: f64) -> Result<Self> {
        Self::with_profile(n, lambda, kernel_profile)
    }

    /// `profile` must be a polynomial of degree ≤ 7 on `[−1, 1]`, vanish
    /// outside, be nonnegative, and integrate to one.
    pub fn with_profile(n: usize, lambda: f64, profile: fn(f64) -> f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Precondition(format!("lambda must be positive, got {lambda}")));
        }
        let mass: f64 = GAUSS4.iter().map(|&(t, w)| w * profile(t)).sum();
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::Precondition(format!("kernel mass {mass} is not 1")));
        }
        if (0..=200).map(|i| -1.0 + i as f64 / 100.0).any(|t| profile(t) < 0.0) {
            return Err(Error::Precondition("kernel takes negative values".into()));
        }
        let coordinate_flows = (0..2 * n).map(|nu| Arc::new(coordinate_flow(n, nu, 1.0)) as FlowHandle).collect();
        Ok(Self { lambda, n, profile, coordinate_flows })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `∫χ` by tensor Gauss–Legendre.
    pub fn kernel_mass(&self) -> f64 {
        let one: f64 = GAUSS4.iter().map(|&(t, w)| w * (self.profile)(t)).sum();
        one.powi(2 * self.n as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regularized {
    pub field: GridField,
    /// `Σ w − 1` for the node-grid weights before normalization.
    pub quadrature_deviation: f64,
}

/// `R_λh = λ^{2n} ∫ χ(λt) (g^t_* h) dt`, where `g^t` composes the coordinate
/// flows. Times are taken so that every `g^t` is a whole-node translation,
/// and the weights are normalized to sum to one so that mass is conserved.
pub fn regularize(spec: &RegularizerSpec, h: &GridField) -> Result<Regularized> {
    let grid = h.grid();
    let d = grid.dim();
    if spec.n != grid.n() {
        return Err(Error::DimensionMismatch { expected: 2 * spec.n, got: d });
    }
    // g^t(0) = P t for a signed permutation P.
    let mut p = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut t = vec![0.0; d];
        t[j] = 1.0;
        let shift = coordinate_flow_composite(grid.n(), &t).apply(&vec![0.0; d]);
        for i in 0..d {
            p[(i, j)] = shift[i];
        }
    }
    let radius = 1.0 / spec.lambda;
    let reach: Vec<usize> = (0..d).map(|a| (radius / grid.spacing(a)).floor() as usize).collect();
    if grid.boundary() == Boundary::CompactSupport {
        let margin = reach.iter().copied().max().unwrap_or(0) + 1;
        let edge = (0..grid.node_count())
            .filter(|&k| grid.face_distance(k) < margin)
            .fold(0.0f64, |m, k| m.max(h.samples()[k].abs()));
        if edge > 1e-12 * h.max_abs() {
            return Err(Error::SupportMargin { margin: edge });
        }
    }
    // Enumerate node displacements D, recover t = P⁻¹ D and weigh by χ_λ(t).
    let p_inv = p.transpose();
    let strides = grid.strides();
    let lambda_power = spec.lambda.powi(d as i32) * grid.cell_volume();
    let widths: Vec<usize> = reach.iter().map(|r| 2 * r + 1).collect();
    let mut taps: Vec<(Vec<i64>, f64)> = Vec::new();
    for code in 0..widths.iter().product::<usize>() {
        let mut rest = code;
        let mut offset = vec![0i64; d];
        for a in (0..d).rev() {
            offset[a] = (rest % widths[a]) as i64 - reach[a] as i64;
            rest /= widths[a];
        }
        let disp: Vec<f64> = (0..d).map(|a| offset[a] as f64 * grid.spacing(a)).collect();
        let t = mat_vec(&p_inv, &disp);
        let w: f64 = t.iter().map(|&tk| (spec.profile)(spec.lambda * tk)).product::<f64>() * lambda_power;
        if w > 0.0 {
            taps.push((offset, w));
        }
    }
    if taps.is_empty() {
        return Err(Error::GridTooCoarse { axis: 0, points: grid.points()[0], min: 4 });
    }
    let raw: f64 = taps.iter().map(|(_, w)| w).sum();
    let samples = parallel_map(grid.node_count(), |k| {
        let idx = grid.node_index(k);
        let mut acc = 0.0;
        'tap: for (off, w) in &taps {
            let mut flat = 0usize;
            for a in 0..d {
                // (g^t_* h)(x) = h(x − P t), the displacement is −off.
                let n = grid.points()[a] as i64;
                let mut j = idx[a] as i64 - off[a];
                match grid.boundary() {
                    Boundary::Periodic => j = j.rem_euclid(n),
                    Boundary::CompactSupport if !(0..n).contains(&j) => continue 'tap,
                    Boundary::CompactSupport => {}
                }
                flat += j as usize * strides[a];
            }
            acc += w * h.samples()[flat];
        }
        acc / raw
    });
    Ok(Regularized { field: GridField::new(grid.clone(), samples)?, quadrature_deviation: raw - 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn plane(points: usize, half: f64) -> DarbouxBox {
        DarbouxBox::cube(1, half, points, Boundary::CompactSupport).unwrap()
    }

    #[test]
    fn box_validation() {
        assert!(DarbouxBox::cube(1, 1.0, 3, Boundary::Periodic).is_err());
        assert!(DarbouxBox::new(1, vec![0.0], vec![1.0, 1.0], vec![4, 4], Boundary::Periodic).is_err());
        let b = DarbouxBox::cube(1, 1.0, 5, Boundary::CompactSupport).unwrap();
        assert_eq!(b.spacing(0), 0.5);
        assert_eq!(b.node_point(7), vec![-0.5, 0.0]);
        let p = DarbouxBox::cube(1, 1.0, 4, Boundary::Periodic).unwrap();
        assert_eq!(p.spacing(1), 0.5);
    }

    #[test]
    fn interpolation_reproduces_quadratics_inside() {
        let f = GridField::from_fn(plane(21, 2.0), |z| 1.0 + z[0] - 2.0 * z[1] + z[0] * z[1] + 0.5 * z[0] * z[0]);
        let z = [0.137, -0.42];
        let exact = 1.0 + z[0] - 2.0 * z[1] + z[0] * z[1] + 0.5 * z[0] * z[0];
        assert!((f.value(&z) - exact).abs() < 1e-13);
        let g = f.gradient(&z);
        assert!((g[0] - (1.0 + z[1] + z[0])).abs() < 1e-12);
        assert!((g[1] - (-2.0 + z[0])).abs() < 1e-12);
        assert_eq!(f.value(&[5.0, 0.0]), 0.0);
    }

    #[test]
    fn periodic_interpolation_wraps() {
        let b = DarbouxBox::new(1, vec![0.0, 0.0], vec![2.0 * PI, 2.0 * PI], vec![64, 64], Boundary::Periodic).unwrap();
        let f = GridField::from_fn(b, |z| z[0].sin() * z[1].cos());
        for z in [[0.01, 6.27], [6.2, 3.0], [-0.5, 1.0]] {
            assert!((f.value(&z) - z[0].sin() * z[1].cos()).abs() < 1e-4);
        }
    }

    #[test]
    fn sgrad_examples() {
        let xy = sgrad(&GridField::from_fn(plane(11, 1.0), |z| z[0] * z[1])).unwrap();
        let rot = sgrad(&GridField::from_fn(plane(11, 1.0), |z| 0.5 * (z[0] * z[0] + z[1] * z[1]))).unwrap();
        let constant = sgrad(&GridField::from_fn(plane(11, 1.0), |_| 3.0)).unwrap();
        let grid = plane(11, 1.0);
        for k in 0..grid.node_count() {
            let z = grid.node_point(k);
            let v = xy.at_node(k);
            assert!((v[0] - z[0]).abs() < 1e-12 && (v[1] + z[1]).abs() < 1e-12);
            let r = rot.at_node(k);
            assert!((r[0] - z[1]).abs() < 1e-12 && (r[1] + z[0]).abs() < 1e-12);
        }
        assert_eq!(constant.max_norm(), 0.0);
        let m = sgrad_quadratic(&QuadraticForm::diagonal_type(&[1.0]));
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
    }

    fn quad_flow(q: QuadraticForm, t: f64) -> FlowHandle {
        flow(&FlowSpec { hamiltonian: Hamiltonian::Quadratic(q), duration: t, steps: 1, method: Method::ExactLinear })
            .unwrap()
    }

    #[test]
    fn exact_linear_examples() {
        let rot = QuadraticForm::new(DMatrix::identity(2, 2) * 0.5).unwrap();
        let z = quad_flow(rot.clone(), FRAC_PI_2).apply(&[1.0, 2.0]);
        assert!((z[0] - 2.0).abs() < 1e-14 && (z[1] + 1.0).abs() < 1e-14);
        assert_eq!(quad_flow(rot, 0.0).apply(&[0.3, 0.4]), vec![0.3, 0.4]);
        let t = 0.7;
        let z = quad_flow(QuadraticForm::diagonal_type(&[1.0]), t).apply(&[1.0, 1.0]);
        assert!((z[0] - t.exp()).abs() < 1e-14 && (z[1] - (-t).exp()).abs() < 1e-14);
        let grid = Arc::new(GridField::zeros(plane(5, 1.0)));
        let spec = FlowSpec { hamiltonian: Hamiltonian::Grid(grid), duration: 1.0, steps: 1, method: Method::ExactLinear };
        assert!(matches!(flow(&spec), Err(Error::NotQuadratic)));
    }

    #[test]
    fn exact_linear_is_symplectic() {
        let a = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.2, -0.3, 0.5, 0.2, -1.0, 0.4, 0.0, -0.3, 0.4, 0.7, 0.1, 0.5, 0.0, 0.1, 0.3,
        ]);
        let g = quad_flow(QuadraticForm::new(a).unwrap(), 1.3);
        let s = g.matrix().unwrap();
        assert!(crate::quadratic::symplectic_defect(&s) < 1e-12);
        assert!(volume_check(g.as_ref(), 20).max_jacobian_deviation < 1e-12);
    }

    #[test]
    fn volume_check_scaling() {
        let g = LinearMap::new(DMatrix::identity(2, 2) * 2.0).unwrap();
        assert!((volume_check(&g, 5).max_jacobian_deviation - 3.0).abs() < 1e-12);
    }

    fn pendulum() -> Hamiltonian {
        Hamiltonian::smooth(2, |z| vec![z[0].sin(), z[1]])
    }

    fn coupled() -> Hamiltonian {
        // H = (x² + y²)²/4 + x y³/3, not separable.
        Hamiltonian::smooth(2, |z| {
            let r2 = z[0] * z[0] + z[1] * z[1];
            vec![r2 * z[0] + z[1].powi(3) / 3.0, r2 * z[1] + z[0] * z[1] * z[1]]
        })
    }

    #[test]
    fn leapfrog_preserves_volume_and_inverts() {
        for h in [pendulum(), coupled()] {
            let g = flow(&FlowSpec { hamiltonian: h, duration: 2.0, steps: 200, method: Method::Leapfrog }).unwrap();
            let report = volume_check(g.as_ref(), 20);
            assert!(!report.exact_jacobian);
            assert!(report.max_jacobian_deviation < 1e-6, "{report:?}");
            let z = [0.3, -0.8];
            let back = g.inverse(&g.apply(&z));
            assert!((back[0] - z[0]).abs() < 1e-12 && (back[1] - z[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn leapfrog_tracks_linear_flow() {
        let q = QuadraticForm::diagonal_type(&[1.0]);
        let exact = quad_flow(q.clone(), 1.0).apply(&[0.5, 0.5]);
        let g = flow(&FlowSpec { hamiltonian: Hamiltonian::Quadratic(q), duration: 1.0, steps: 1000, method: Method::Leapfrog })
            .unwrap();
        let approx = g.apply(&[0.5, 0.5]);
        assert!((approx[0] - exact[0]).abs() < 1e-5 && (approx[1] - exact[1]).abs() < 1e-5);
    }

    fn gaussian(points: usize) -> GridField {
        GridField::from_fn(plane(points, 8.0), |z| (-(z[0] * z[0] + z[1] * z[1])).exp())
    }

    #[test]
    fn pullback_identity_and_rotation() {
        let xi = gaussian(65);
        let id = LinearMap::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(pullback(&id, &xi).unwrap().field, xi);
        let rot = quad_flow(QuadraticForm::new(DMatrix::identity(2, 2) * 0.5).unwrap(), FRAC_PI_2);
        let pb = pullback(rot.as_ref(), &xi).unwrap();
        assert!(pb.field.max_difference(&xi).unwrap() < 1e-12);
        let tilted = quad_flow(QuadraticForm::new(DMatrix::identity(2, 2) * 0.5).unwrap(), 0.4);
        let pb = pullback(tilted.as_ref(), &xi).unwrap();
        assert!(pb.field.max_difference(&xi).unwrap() <= pb.interpolation_error);
        assert!((pb.integral_after - pb.integral_before).abs() < 1e-6);
    }

    #[test]
    fn pullback_shear() {
        let xi = GridField::from_fn(plane(21, 1.0), |z| z[0]);
        let shear = LinearMap::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        // Preimages leave the box and ξ = x is large on the faces.
        assert!(matches!(pullback(&shear, &xi), Err(Error::BoundarySupport { .. })));
        let periodic = DarbouxBox::cube(1, 1.0, 20, Boundary::Periodic).unwrap();
        let xi = GridField::from_fn(periodic, |z| (PI * z[0]).sin());
        let pb = pullback(&shear, &xi).unwrap();
        for k in 0..pb.field.grid().node_count() {
            let z = pb.field.grid().node_point(k);
            assert!((pb.field.samples()[k] - (PI * (z[0] - z[1])).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn pullback_is_a_left_action() {
        let xi = gaussian(65);
        let g = quad_flow(QuadraticForm::diagonal_type(&[1.0]), 0.3);
        let h = quad_flow(QuadraticForm::new(DMatrix::identity(2, 2) * 0.5).unwrap(), 0.5);
        let gh = compose(g.clone(), h.clone());
        let direct = pullback(gh.as_ref(), &xi).unwrap();
        // (ξ ∘ h⁻¹) ∘ g⁻¹ = ξ ∘ (g ∘ h)⁻¹
        let first = pullback(h.as_ref(), &xi).unwrap();
        let two_step = pullback(g.as_ref(), &first.field).unwrap();
        let diff = direct.field.max_difference(&two_step.field).unwrap();
        assert!(diff <= 2.0 * (first.interpolation_error + two_step.interpolation_error), "{diff}");
    }

    #[test]
    fn coordinate_flows_translate() {
        let g = coordinate_flow_composite(1, &[0.25, -0.5]);
        let z = g.apply(&[0.0, 0.0]);
        // x-flow moves y, (−y)-flow moves x.
        assert_eq!(z, vec![0.5, -0.25]);
        assert!(volume_check(g.as_ref(), 3).max_jacobian_deviation < 1e-15);
    }

    fn bump(points: usize) -> GridField {
        GridField::from_fn(plane(points, 2.0), |z| {
            let r2 = z[0] * z[0] + z[1] * z[1];
            if r2 < 1.0 { (1.0 - r2).powi(4) * (1.0 + z[0]) } else { 0.0 }
        })
    }

    #[test]
    fn regularizer_examples() {
        let spec = RegularizerSpec::new(1, 8.0).unwrap();
        assert!((spec.kernel_mass() - 1.0).abs() < 1e-12);
        let zero = GridField::zeros(plane(65, 2.0));
        assert_eq!(regularize(&spec, &zero).unwrap().field, zero);
        let h = bump(129);
        let r8 = regularize(&spec, &h).unwrap();
        assert!((r8.field.integral() - h.integral()).abs() < 1e-8);
        assert!(r8.quadrature_deviation.abs() < 1e-2);
        let r16 = regularize(&RegularizerSpec::new(1, 16.0).unwrap(), &h).unwrap();
        let e8 = r8.field.max_difference(&h).unwrap();
        let e16 = r16.field.max_difference(&h).unwrap();
        assert!(e16 < e8, "{e16} vs {e8}");
        assert!(RegularizerSpec::new(1, 0.0).is_err());
        assert!(RegularizerSpec::with_profile(1, 1.0, |t| if t.abs() < 1.0 { 1.0 } else { 0.0 }).is_err());
    }

    #[test]
    fn regularizer_margin() {
        let h = GridField::from_fn(plane(33, 1.0), |z| 1.0 - z[0] * z[0]);
        let spec = RegularizerSpec::new(1, 8.0).unwrap();
        assert!(matches!(regularize(&spec, &h), Err(Error::SupportMargin { .. })));
    }
}
