//! Critical points of sampled functions, their quadratic Taylor terms, and
//! the functional `p(ξ) = Σ φ(Det Q_x) t(Q_x)` over critical points.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{parallel_map, Boundary, DarbouxBox, FlowHandle, GridField, LinearMap};
use crate::quadratic::{det_invariant, diagonal_scaling, t_invariant, QuadraticForm};

pub const DEFAULT_DET_THRESHOLD: f64 = 0.5;

/// `C^∞` step: 0 for `u ≤ 0`, 1 for `u ≥ 1`, built from `e^{−1/u}`.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / u).exp();
        let b = (-1.0 / (1.0 - u)).exp();
        a / (a + b)
    }
}

/// `φ(s) = s · σ(2(|s| − ½))`: zero on `[−½, ½]`, identity for `|s| ≥ 1`.
pub fn cutoff_phi(s: f64) -> f64 {
    s * smooth_step(2.0 * (s.abs() - 0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub hessian: QuadraticForm,
    pub det_q: f64,
    pub t_q: f64,
    pub nondegenerate: bool,
    /// Largest entry gap between the fourth- and second-order Hessian
    /// stencils.
    pub hessian_error: f64,
    pub newton_iterations: usize,
}

/// `|Det Q|` below this counts as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-9;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 60;
/// Minimum separation of distinct critical points, in cells.
pub const MIN_SEPARATION_CELLS: f64 = 3.0;
/// Cells touching a compact face within this many layers are not searched.
const SEARCH_MARGIN: usize = 3;

/// Hessian of the interpolant at `z`: five-point second differences and
/// Richardson-extrapolated mixed differences, both at two grid cells.
/// Returns the matrix and the gap to the plain second-order stencils.
pub fn hessian_fd(xi: &GridField, z: &[f64]) -> (DMatrix<f64>, f64) {
    let grid = xi.grid();
    let d = grid.dim();
    let f0 = xi.value(z);
    let at = |shifts: &[(usize, f64)]| {
        let mut w = z.to_vec();
        for &(a, s) in shifts {
            w[a] += s;
        }
        xi.value(&w)
    };
    let mut hess = DMatrix::zeros(d, d);
    let mut gap: f64 = 0.0;
    for a in 0..d {
        let h = 2.0 * grid.spacing(a);
        let (p1, m1) = (at(&[(a, h)]), at(&[(a, -h)]));
        let (p2, m2) = (at(&[(a, 2.0 * h)]), at(&[(a, -2.0 * h)]));
        let fourth = (-p2 + 16.0 * p1 - 30.0 * f0 + 16.0 * m1 - m2) / (12.0 * h * h);
        let second = (p1 - 2.0 * f0 + m1) / (h * h);
        hess[(a, a)] = fourth;
        gap = gap.max((fourth - second).abs());
    }
    for a in 0..d {
        for b in a + 1..d {
            let (ha, hb) = (2.0 * grid.spacing(a), 2.0 * grid.spacing(b));
            let mixed = |k: f64| {
                let (sa, sb) = (k * ha, k * hb);
                (at(&[(a, sa), (b, sb)]) - at(&[(a, sa), (b, -sb)]) - at(&[(a, -sa), (b, sb)])
                    + at(&[(a, -sa), (b, -sb)]))
                    / (4.0 * sa * sb)
            };
            let (one, two) = (mixed(1.0), mixed(2.0));
            let value = (4.0 * one - two) / 3.0;
            hess[(a, b)] = value;
            hess[(b, a)] = value;
            gap = gap.max((value - one).abs());
        }
    }
    (hess, gap)
}

fn gradient_signs(xi: &GridField) -> Vec<Vec<i8>> {
    let scale = xi.max_abs();
    (0..xi.grid().dim())
        .map(|a| {
            let tol = 1e-13 * scale / xi.grid().spacing(a);
            xi.partial(a)
                .samples()
                .iter()
                .map(|&v| if v > tol { 1 } else if v < -tol { -1 } else { 0 })
                .collect()
        })
        .collect()
}

/// Lower corners of the cells whose corner gradients bracket zero in every
/// component, excluding cells where the gradient vanishes identically.
fn candidate_cells(xi: &GridField) -> Vec<usize> {
    let grid = xi.grid();
    let d = grid.dim();
    let strides = grid.strides();
    let points = grid.points();
    let signs = gradient_signs(xi);
    let periodic = grid.boundary() == Boundary::Periodic;
    let corner_count = 1usize << d;
    let mut out = Vec::new();
    'cell: for k in 0..grid.node_count() {
        let idx = grid.node_index(k);
        if !periodic && idx.iter().zip(points).any(|(&i, &p)| i < SEARCH_MARGIN || i + 1 + SEARCH_MARGIN >= p) {
            continue;
        }
        let corners: Vec<usize> = (0..corner_count)
            .map(|mask| {
                (0..d)
                    .map(|a| {
                        let i = idx[a] + ((mask >> a) & 1);
                        let i = if periodic { i % points[a] } else { i };
                        i * strides[a]
                    })
                    .sum()
            })
            .collect();
        let mut all_zero = true;
        for s in &signs {
            let (mut lo, mut hi) = (1i8, -1i8);
            for &c in &corners {
                lo = lo.min(s[c]);
                hi = hi.max(s[c]);
            }
            if lo > 0 || hi < 0 {
                continue 'cell;
            }
            all_zero &= lo == 0 && hi == 0;
        }
        if !all_zero {
            out.push(k);
        }
    }
    out
}

/// Sample at node `idx + offset`; zero outside a compact box.
fn sample_at(xi: &GridField, idx: &[usize], offset: &[(usize, i64)]) -> f64 {
    let grid = xi.grid();
    let (points, strides) = (grid.points(), grid.strides());
    let periodic = grid.boundary() == Boundary::Periodic;
    let mut flat = 0;
    for a in 0..idx.len() {
        let mut i = idx[a] as i64;
        for &(b, o) in offset {
            if b == a {
                i += o;
            }
        }
        let p = points[a] as i64;
        if periodic {
            i = i.rem_euclid(p);
        } else if i < 0 || i >= p {
            return 0.0;
        }
        flat += i as usize * strides[a];
    }
    xi.samples()[flat]
}

/// `|Det|` of the Hessian at a node from the same stencils as
/// [`hessian_fd`], read directly off the samples.
fn node_det(xi: &GridField, k: usize) -> Result<f64> {
    let grid = xi.grid();
    let d = grid.dim();
    let idx = grid.node_index(k);
    let f = |off: &[(usize, i64)]| sample_at(xi, &idx, off);
    let f0 = f(&[]);
    let mut hess = DMatrix::zeros(d, d);
    for a in 0..d {
        let h = 2.0 * grid.spacing(a);
        let (p1, m1, p2, m2) = (f(&[(a, 2)]), f(&[(a, -2)]), f(&[(a, 4)]), f(&[(a, -4)]));
        hess[(a, a)] = (-p2 + 16.0 * p1 - 30.0 * f0 + 16.0 * m1 - m2) / (12.0 * h * h);
    }
    for a in 0..d {
        for b in a + 1..d {
            let mixed = |k: i64| {
                let (sa, sb) = (k as f64 * grid.spacing(a), k as f64 * grid.spacing(b));
                (f(&[(a, k), (b, k)]) - f(&[(a, k), (b, -k)]) - f(&[(a, -k), (b, k)]) + f(&[(a, -k), (b, -k)]))
                    / (4.0 * sa * sb)
            };
            let value = (4.0 * mixed(2) - mixed(4)) / 3.0;
            hess[(a, b)] = value;
            hess[(b, a)] = value;
        }
    }
    Ok(det_invariant(&QuadraticForm::from_hessian(&hess)?).abs())
}

/// Keeps the cells with `|Det| ≥ screen` at some corner node.
fn screen_on_nodes(xi: &GridField, cells: Vec<usize>, screen: f64) -> Result<Vec<usize>> {
    let grid = xi.grid();
    let d = grid.dim();
    let (points, strides) = (grid.points(), grid.strides());
    let periodic = grid.boundary() == Boundary::Periodic;
    let corners_of = |k: usize| -> Vec<usize> {
        let idx = grid.node_index(k);
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|a| {
                        let i = idx[a] + ((mask >> a) & 1);
                        let i = if periodic { i % points[a] } else { i };
                        i * strides[a]
                    })
                    .sum()
            })
            .collect()
    };
    let mut nodes: Vec<usize> = cells.iter().flat_map(|&k| corners_of(k)).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let dets = parallel_map(nodes.len(), |i| node_det(xi, nodes[i]));
    let mut det_of = std::collections::HashMap::with_capacity(nodes.len());
    for (k, det) in nodes.iter().zip(dets) {
        det_of.insert(*k, det?);
    }
    Ok(cells.into_iter().filter(|&k| corners_of(k).iter().any(|c| det_of[c] >= screen)).collect())
}

enum Refined {
    Converged(Vec<f64>, usize),
    Escaped,
}

fn newton(xi: &GridField, start: &[f64], det_threshold: f64) -> Result<Refined> {
    let grid = xi.grid();
    let d = grid.dim();
    let reach: Vec<f64> = (0..d).map(|a| 2.0 * grid.spacing(a)).collect();
    let mut z = start.to_vec();
    for iter in 1..=NEWTON_MAX_ITERS {
        let g = DVector::from_vec(xi.gradient(&z));
        let (hess, _) = hessian_fd(xi, &z);
        let Some(step) = hess.lu().solve(&g) else {
            return Ok(Refined::Escaped);
        };
        for a in 0..d {
            z[a] -= step[a];
        }
        if (0..d).any(|a| (z[a] - start[a]).abs() > reach[a]) {
            return Ok(Refined::Escaped);
        }
        let scale = z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if step.amax() <= NEWTON_TOL * scale {
            return Ok(Refined::Converged(z, iter));
        }
    }
    // Slow convergence near a degenerate point cannot produce a point
    // that qualifies, so only a stall at a qualifying Hessian is an error.
    let (hess, _) = hessian_fd(xi, &z);
    if QuadraticForm::from_hessian(&hess).map(|q| det_invariant(&q).abs()).unwrap_or(0.0) < det_threshold {
        return Ok(Refined::Escaped);
    }
    Err(Error::NewtonFailed { location: z })
}

fn cell_distance(grid: &DarbouxBox, a: &[f64], b: &[f64]) -> f64 {
    (0..grid.dim())
        .map(|k| {
            let mut diff = (a[k] - b[k]).abs();
            if grid.boundary() == Boundary::Periodic {
                let period = grid.hi()[k] - grid.lo()[k];
                diff = diff.min(period - diff);
            }
            diff / grid.spacing(k)
        })
        .fold(0.0, f64::max)
}

/// Critical points with `|Det Q_x| ≥ det_threshold`, sorted by location.
///
/// Candidate cells come from sign brackets of the node gradient; each is
/// screened by `|Det|` at its centre (a quarter of the threshold), refined
/// by Newton on the interpolated gradient, and merged within one cell.
pub fn find_critical_points(xi: &GridField, det_threshold: f64) -> Result<Vec<CriticalPoint>> {
    let grid = xi.grid();
    let d = grid.dim();
    let screen = 0.25 * det_threshold;
    let candidates = screen_on_nodes(xi, candidate_cells(xi), screen)?;
    let centres: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&k| {
            let p = grid.node_point(k);
            (0..d).map(|a| p[a] + 0.5 * grid.spacing(a)).collect()
        })
        .collect();
    let refined = parallel_map(centres.len(), |i| -> Result<Option<(Vec<f64>, usize)>> {
        let (hess, _) = hessian_fd(xi, &centres[i]);
        let q = QuadraticForm::from_hessian(&hess)?;
        if det_invariant(&q).abs() < screen {
            return Ok(None);
        }
        match newton(xi, &centres[i], det_threshold)? {
            Refined::Converged(z, iters) => Ok(Some((wrap(grid, z), iters))),
            Refined::Escaped => Ok(None),
        }
    });
    let mut found: Vec<(Vec<f64>, usize)> = Vec::new();
    for r in refined {
        if let Some((z, iters)) = r? {
            if !found.iter().any(|(w, _)| cell_distance(grid, w, &z) < 1.0) {
                found.push((z, iters));
            }
        }
    }
    found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut points = Vec::new();
    for (location, newton_iterations) in found {
        let (hess, hessian_error) = hessian_fd(xi, &location);
        let hessian = QuadraticForm::from_hessian(&hess)?;
        let det_q = det_invariant(&hessian);
        if det_q.abs() < det_threshold {
            continue;
        }
        points.push(CriticalPoint {
            t_q: t_invariant(&hessian),
            nondegenerate: det_q.abs() > DEGENERACY_EPS,
            location,
            hessian,
            det_q,
            hessian_error,
            newton_iterations,
        });
    }
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if cell_distance(grid, &points[i].location, &points[j].location) < MIN_SEPARATION_CELLS {
                return Err(Error::ClusteredCriticalPoints {
                    first: points[i].location.clone(),
                    second: points[j].location.clone(),
                    min_cells: MIN_SEPARATION_CELLS,
                });
            }
        }
    }
    Ok(points)
}

fn wrap(grid: &DarbouxBox, mut z: Vec<f64>) -> Vec<f64> {
    if grid.boundary() == Boundary::Periodic {
        for a in 0..grid.dim() {
            let period = grid.hi()[a] - grid.lo()[a];
            z[a] = grid.lo()[a] + (z[a] - grid.lo()[a]).rem_euclid(period);
        }
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PContribution {
    pub location: Vec<f64>,
    pub det_q: f64,
    pub t_q: f64,
    pub phi_t: f64,
    pub hessian_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PReport {
    pub value: f64,
    pub contributions: Vec<PContribution>,
    /// Sensitivity of the sum to the reported Hessian errors, to first order.
    pub error_estimate: f64,
}

/// `Σ φ(Det Q_x) t(Q_x)` with per-point detail.
pub fn p_report(xi: &GridField, det_threshold: f64) -> Result<PReport> {
    let points = find_critical_points(xi, det_threshold)?;
    let mut value = 0.0;
    let mut error_estimate = 0.0;
    let mut contributions = Vec::with_capacity(points.len());
    for p in &points {
        let phi_t = cutoff_phi(p.det_q) * p.t_q;
        value += phi_t;
        // t and Det are homogeneous in A of degrees 2 and 2n; a relative
        // entry error e moves φ·t by about (2 + 2n)·e·|φ·t|.
        let scale = p.hessian.matrix().amax().max(f64::MIN_POSITIVE);
        let rel = p.hessian_error / (2.0 * scale);
        error_estimate += (2.0 + 2.0 * p.hessian.n() as f64) * rel * phi_t.abs();
        contributions.push(PContribution {
            location: p.location.clone(),
            det_q: p.det_q,
            t_q: p.t_q,
            phi_t,
            hessian_error: p.hessian_error,
        });
    }
    Ok(PReport { value, contributions, error_estimate })
}

pub fn p_functional(xi: &GridField, det_threshold: f64) -> Result<f64> {
    Ok(p_report(xi, det_threshold)?.value)
}

/// `(x, y) ↦ (e^{c_ν} x_ν, e^{c_ν} y_ν)` with `Σ c_ν = 0`.
pub fn counterexample_map(c: &[f64]) -> Result<FlowHandle> {
    if c.len() < 2 {
        return Err(Error::DimensionMismatch { expected: 4, got: 2 * c.len() });
    }
    let sum: f64 = c.iter().sum();
    if sum.abs() > 1e-12 {
        return Err(Error::NonzeroTrace { sum });
    }
    LinearMap::handle(diagonal_scaling(c))
}

/// Radial shape of the compactly supported model
/// `ξ(z) = Q(z) · g(|z|)/|z|²` with `Q = 2 Σ x_ν y_ν`, lengths in units of
/// `unit`.
///
/// `g = r²` on `r ≤ core`, so `ξ = Q` there. `g'` then falls smoothly to 0,
/// `g` holds a plateau, descends through a smooth bump in `g'`, and stays 0.
/// Away from the origin a critical point needs `g' = 0`, where `g'` is flat
/// to all orders. For `n ≥ 2` the `±1` eigenspaces of `Q` have dimension
/// `n`, so those critical points also come in circles and are degenerate
/// by symmetry; for `n = 1` the plateau must be long compared with the
/// Hessian stencil.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleShape {
    pub unit: f64,
    pub core: f64,
    pub rise: f64,
    pub plateau: f64,
    pub descent: f64,
}

impl SaddleShape {
    /// Resolved well enough in the plane that only the origin has
    /// `|Det| > ½` on a grid of spacing `unit`.
    pub fn planar(unit: f64) -> Self {
        Self { unit, core: 6.0, rise: 8.0, plateau: 2.0, descent: 12.0 }
    }

    /// Smaller shape for `n ≥ 2`, where symmetry does the work. The short
    /// plateau makes `g''` vanish with `g'`, so the off-origin critical
    /// spheres stay degenerate in two directions after an off-grid
    /// pullback.
    pub fn spatial(unit: f64) -> Self {
        Self { unit, core: 6.0, rise: 5.0, plateau: 1.0, descent: 8.0 }
    }

    /// Radius beyond which the model vanishes, in units.
    pub fn support(&self) -> f64 {
        self.core + self.rise + self.plateau + self.descent
    }
}

/// Panels per unit length for the tabulated profile.
const PROFILE_RESOLUTION: usize = 256;

/// A [`SaddleShape`] with `g` tabulated for evaluation by cubic Hermite
/// interpolation against the exact slope.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleProfile {
    shape: SaddleShape,
    height: f64,
    table: Vec<f64>,
}

impl SaddleProfile {
    pub fn new(shape: SaddleShape) -> Self {
        let mut profile = Self { shape, height: 0.0, table: Vec::new() };
        let step = 1.0 / PROFILE_RESOLUTION as f64;
        let rise_end = shape.core + shape.rise;
        let panels = (shape.rise * PROFILE_RESOLUTION as f64).ceil() as usize;
        let mut height = shape.core * shape.core;
        for k in 0..panels {
            let a = shape.core + k as f64 * step;
            height += simpson(|r| profile.slope(r), a, (a + step).min(rise_end));
        }
        profile.height = height;
        let count = (shape.support() * PROFILE_RESOLUTION as f64).ceil() as usize + 1;
        let mut table = Vec::with_capacity(count);
        let mut g = 0.0;
        for k in 0..count {
            let r = k as f64 * step;
            if k > 0 {
                g += simpson(|s| profile.slope(s), r - step, r);
            }
            table.push(if r <= shape.core { r * r } else if r >= shape.support() { 0.0 } else { g });
            if r <= shape.core {
                g = r * r;
            }
        }
        profile.table = table;
        profile
    }

    pub fn shape(&self) -> &SaddleShape {
        &self.shape
    }

    fn slope(&self, r: f64) -> f64 {
        let s = &self.shape;
        let hold = s.core + s.rise;
        let start = hold + s.plateau;
        if r <= s.core {
            2.0 * r
        } else if r <= hold {
            2.0 * r * (1.0 - smooth_step((r - s.core) / s.rise))
        } else if r <= start {
            0.0
        } else {
            // A bump with unit peak and integral ½ over [0, 1].
            let t = (r - start) / s.descent;
            let bump = if t <= 0.5 { smooth_step(2.0 * t) } else { 1.0 - smooth_step(2.0 * t - 1.0) };
            -2.0 * self.height / s.descent * bump
        }
    }

    /// `g(r)` in units.
    pub fn g(&self, r: f64) -> f64 {
        let r = r.abs();
        if r <= self.shape.core {
            return r * r;
        }
        if r >= self.shape.support() {
            return 0.0;
        }
        let step = 1.0 / PROFILE_RESOLUTION as f64;
        let u = r / step;
        let k = (u.floor() as usize).min(self.table.len() - 2);
        let t = u - k as f64;
        let (r0, r1) = (k as f64 * step, (k + 1) as f64 * step);
        let (g0, g1) = (self.table[k], self.table[k + 1]);
        let (d0, d1) = (self.slope(r0) * step, self.slope(r1) * step);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * g0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * g1 + (t3 - t2) * d1
    }

    /// `unit² · ξ(z/unit)`.
    pub fn value(&self, z: &[f64]) -> f64 {
        let n = z.len() / 2;
        let unit = self.shape.unit;
        let q: f64 = (0..n).map(|v| 2.0 * z[v] * z[n + v]).sum();
        let r2: f64 = z.iter().map(|v| v * v).sum::<f64>() / (unit * unit);
        if r2 <= self.shape.core * self.shape.core {
            q
        } else {
            q * self.g(r2.sqrt()) / r2
        }
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    const PANELS: usize = 8;
    let h = (b - a) / PANELS as f64;
    let mut acc = f(a) + f(b);
    for i in 1..PANELS {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Adds `sign · profile.value(z − centre)` to every node.
pub fn add_localized_saddle(field: &mut GridField, profile: &SaddleProfile, centre: &[f64], sign: f64) -> Result<()> {
    let grid = field.grid().clone();
    let d = grid.dim();
    if centre.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: centre.len() });
    }
    let reach2 = (profile.shape.support() * profile.shape.unit).powi(2);
    let mut samples = field.samples().to_vec();
    for (k, sample) in samples.iter_mut().enumerate() {
        let z: Vec<f64> = grid.node_point(k).iter().zip(centre).map(|(a, b)| a - b).collect();
        if z.iter().map(|v| v * v).sum::<f64>() < reach2 {
            *sample += sign * profile.value(&z);
        }
    }
    *field = GridField::new(grid, samples)?;
    Ok(())
}

/// A compact box of half-width `cells` grid cells of size `shape.unit`
/// holding one model centred at the origin.
pub fn localized_saddle_field(n: usize, shape: &SaddleShape, cells: usize) -> Result<GridField> {
    let grid = DarbouxBox::cube(n, cells as f64 * shape.unit, 2 * cells + 1, Boundary::CompactSupport)?;
    let mut field = GridField::zeros(grid);
    add_localized_saddle(&mut field, &SaddleProfile::new(*shape), &vec![0.0; 2 * n], 1.0)?;
    Ok(field)
}
