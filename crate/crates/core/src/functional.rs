//! Convex functionals given by a finite support family
//! `p(ξ) = max { a + ∫ fξ : (a, f) ∈ family }`, and the quantities derived
//! from them: α-curves and the L¹ lower bound, the Minkowski gauge of a
//! sublevel set, the rearrangement-invariant norm `q(ζ) = sup ∫|fζ|`, and
//! Lipschitz constants on sup-norm balls.
//!
//! "Over rearrangements" evaluation treats each `f` as a representative of
//! its whole rearrangement class, with cells splittable (see
//! [`rearrangement_sup`]).

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{DiscreteFunction, MeasureSpace};
use crate::rearrange::rearrangement_sup;
use crate::rng::Philox;

#[derive(Debug, Clone, PartialEq)]
pub struct SupportPair {
    pub a: f64,
    pub f: DiscreteFunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fixed,
    OverRearrangements,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportFamily {
    pairs: Vec<SupportPair>,
    pub rearrangement_closed: bool,
}

impl SupportFamily {
    pub fn new(pairs: Vec<(f64, DiscreteFunction)>, rearrangement_closed: bool) -> Result<Self> {
        let Some(first) = pairs.first() else {
            return Err(Error::EmptyFamily);
        };
        for (_, f) in &pairs[1..] {
            first.1.check_same_space(f)?;
        }
        Ok(Self {
            pairs: pairs.into_iter().map(|(a, f)| SupportPair { a, f }).collect(),
            rearrangement_closed,
        })
    }

    pub fn pairs(&self) -> &[SupportPair] {
        &self.pairs
    }

    pub fn space(&self) -> &Arc<MeasureSpace> {
        self.pairs[0].f.space()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.pairs.iter().all(|p| p.a == 0.0)
    }

    pub fn default_mode(&self) -> Mode {
        if self.rearrangement_closed {
            Mode::OverRearrangements
        } else {
            Mode::Fixed
        }
    }

    /// The same functions with every offset set to zero.
    pub fn homogeneous_part(&self) -> Self {
        Self {
            pairs: self.pairs.iter().map(|p| SupportPair { a: 0.0, f: p.f.clone() }).collect(),
            rearrangement_closed: self.rearrangement_closed,
        }
    }

    pub fn zero(&self) -> DiscreteFunction {
        DiscreteFunction::constant(self.space().clone(), 0.0)
    }

    /// `a + ∫fξ` or `a + sup_{f'∼f} ∫f'ξ` for one pair.
    pub fn pair_value(&self, k: usize, xi: &DiscreteFunction, mode: Mode) -> Result<f64> {
        let pair = &self.pairs[k];
        pair.f.check_same_space(xi)?;
        let linear = match mode {
            Mode::Fixed => pair.f.zip(xi, |a, b| a * b)?.integral(),
            Mode::OverRearrangements => rearrangement_sup(&pair.f, xi)?,
        };
        Ok(pair.a + linear)
    }

    pub fn evaluate(&self, xi: &DiscreteFunction, mode: Mode) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for k in 0..self.pairs.len() {
            best = best.max(self.pair_value(k, xi, mode)?);
        }
        Ok(best)
    }
}

/// `s_α` (mean of the top fraction `α` of `f`) and `i_α` (mean of the bottom
/// fraction), tabulated on a grid of `α ∈ [0, 1]`, with
/// `2c = min_α (s_α − i_{1−α})` and `2m = max_α (|s_α| + |i_{1−α}|)`.
///
/// `α` is measured as a fraction of `μ(X)`. The grid holds every cumulative
/// mass breakpoint of the decreasing rearrangement and its mirror `1 − α`,
/// the midpoints between them, and the interior stationary points of both
/// target curves, which are rational functions of `α` between breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaCurves {
    pub alphas: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub c: f64,
    pub m: f64,
    pub c_alpha: f64,
    pub m_alpha: f64,
}

/// Top and bottom averages of one function, evaluated from its
/// decreasing rearrangement on the normalized interval `[0, 1]`.
struct Averages {
    /// `(value, cumulative fraction)` breakpoints.
    steps: Vec<(f64, f64)>,
    mean: f64,
    max: f64,
    min: f64,
}

impl Averages {
    fn new(f: &DiscreteFunction) -> Self {
        let profile = f.decreasing_rearrangement();
        let total = profile.total_mass();
        let steps: Vec<(f64, f64)> =
            profile.breakpoints.iter().map(|&(v, s)| (v, s / total)).collect();
        Self { mean: f.mean(), max: f.max(), min: f.min(), steps }
    }

    /// `∫₀^α f*` on the normalized interval.
    fn head(&self, alpha: f64) -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &(v, cum) in &self.steps {
            if alpha <= prev {
                break;
            }
            acc += v * (cum.min(alpha) - prev);
            prev = cum;
        }
        acc
    }

    /// `∫_{1−α}^1 f*`, summed from the bottom so that small `α` keeps
    /// full precision.
    fn tail(&self, alpha: f64) -> f64 {
        let mut acc = 0.0;
        let mut taken = 0.0;
        for k in (0..self.steps.len()).rev() {
            let (v, cum) = self.steps[k];
            let lower = if k == 0 { 0.0 } else { self.steps[k - 1].1 };
            let part = (cum - lower).min(alpha - taken);
            if part <= 0.0 {
                break;
            }
            acc += v * part;
            taken += part;
        }
        acc
    }

    fn s(&self, alpha: f64) -> f64 {
        if alpha <= 0.0 {
            self.max
        } else if alpha >= 1.0 {
            self.mean
        } else {
            self.head(alpha) / alpha
        }
    }

    fn i(&self, alpha: f64) -> f64 {
        if alpha <= 0.0 {
            self.min
        } else if alpha >= 1.0 {
            self.mean
        } else {
            self.tail(alpha) / alpha
        }
    }

    fn gap(&self, alpha: f64) -> f64 {
        self.s(alpha) - self.i(1.0 - alpha)
    }

    fn spread(&self, alpha: f64) -> f64 {
        self.s(alpha).abs() + self.i(1.0 - alpha).abs()
    }

    /// Segments `(lo, hi, v, C)` on which `s_α = v + C/α`.
    fn segments(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.steps.len());
        let mut prev = 0.0;
        let mut head = 0.0;
        for &(v, cum) in &self.steps {
            out.push((prev, cum.min(1.0), v, head - v * prev));
            head += v * (cum - prev);
            prev = cum;
        }
        out
    }

    fn candidate_alphas(&self) -> Vec<f64> {
        let mut grid = vec![0.0, 1.0];
        let push = |a: f64, grid: &mut Vec<f64>| {
            if a.is_finite() && (0.0..=1.0).contains(&a) {
                grid.push(a);
                grid.push(1.0 - a);
            }
        };
        for &(_, cum) in &self.steps {
            push(cum, &mut grid);
        }
        let mu = self.mean;
        for (lo, hi, v, c) in self.segments() {
            push(0.5 * (lo + hi), &mut grid);
            let inside = |a: f64| a > lo && a < hi;
            // d/dα (s_α − i_{1−α}) = 0  ⇔  (v − μ)α² + 2Cα − C = 0.
            for a in quadratic_roots(v - mu, 2.0 * c, -c) {
                if inside(a) {
                    push(a, &mut grid);
                }
            }
            // Sign changes of s_α and of i_{1−α} = (μ − vα − C)/(1 − α).
            if v != 0.0 && inside(-c / v) {
                push(-c / v, &mut grid);
            }
            if v != 0.0 && inside((mu - c) / v) {
                push((mu - c) / v, &mut grid);
            }
            // Stationary points of ±s_α ± i_{1−α}: ε₁C(1−α)² = ε₂Kα².
            let k = mu - v - c;
            for e1 in [-1.0, 1.0] {
                for e2 in [-1.0, 1.0] {
                    let ratio = (e2 * k) / (e1 * c);
                    if c != 0.0 && ratio > 0.0 {
                        let a = 1.0 / (1.0 + ratio.sqrt());
                        if inside(a) {
                            push(a, &mut grid);
                        }
                    }
                }
            }
        }
        grid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        grid.dedup();
        grid
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b != 0.0 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut out = vec![q / a];
    if q != 0.0 {
        out.push(c / q);
    }
    out
}

pub fn alpha_curves(f: &DiscreteFunction) -> AlphaCurves {
    let avg = Averages::new(f);
    let alphas = avg.candidate_alphas();
    let s: Vec<f64> = alphas.iter().map(|&a| avg.s(a)).collect();
    let i: Vec<f64> = alphas.iter().map(|&a| avg.i(a)).collect();
    let (mut c, mut c_alpha) = (f64::INFINITY, 0.0);
    let (mut m, mut m_alpha) = (f64::NEG_INFINITY, 0.0);
    for &a in &alphas {
        let g = 0.5 * avg.gap(a);
        if g < c {
            c = g;
            c_alpha = a;
        }
        let h = 0.5 * avg.spread(a);
        if h > m {
            m = h;
            m_alpha = a;
        }
    }
    AlphaCurves { alphas, s, i, c, m, c_alpha, m_alpha }
}

/// Which case of the L¹ lower bound applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `∫ξ = 0`: `b = c(f)`.
    ZeroMean,
    /// `∫ξ ≥ 0` and `q(λ) → ∞` as `λ → ∞`: `b = s₁c/(s₁ + m)`.
    PositiveMean,
    /// `∫ξ ≤ 0` and `q(λ) → ∞` as `λ → −∞`: `b = c|s₁|/(|s₁| + m)`.
    NegativeMean,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundReport {
    pub a0: f64,
    pub b: f64,
    pub bound: f64,
    pub q_value: f64,
    pub branch: Branch,
    /// Index of the generating pair; two indices when the generator is a
    /// convex combination of a nonconstant pair and a positive (or
    /// negative) mean pair, with the weight on the second.
    pub generator: Vec<usize>,
    pub weight: f64,
    pub holds: bool,
}

struct Generator {
    a: f64,
    f: DiscreteFunction,
    indices: Vec<usize>,
    weight: f64,
}

/// Nonconstant generators whose mean has sign `sign` (0 means any mean),
/// including convex combinations when no single pair qualifies.
fn generators(family: &SupportFamily, sign: f64) -> Vec<Generator> {
    let pairs = family.pairs();
    let nonconstant: Vec<usize> = (0..pairs.len()).filter(|&k| !pairs[k].f.is_constant()).collect();
    let ok = |mean: f64| sign == 0.0 || mean * sign > 0.0;
    let direct: Vec<Generator> = nonconstant
        .iter()
        .filter(|&&k| ok(pairs[k].f.mean()))
        .map(|&k| Generator { a: pairs[k].a, f: pairs[k].f.clone(), indices: vec![k], weight: 0.0 })
        .collect();
    if !direct.is_empty() || sign == 0.0 {
        return direct;
    }
    let mut out = Vec::new();
    for &k in &nonconstant {
        for (j, pj) in pairs.iter().enumerate() {
            let (mk, mj) = (pairs[k].f.mean(), pj.f.mean());
            if !ok(mj) {
                continue;
            }
            // Weight t on pair j makes the mean of the mix have sign `sign`
            // once t > t*; take the midpoint of (t*, 1).
            let t_star = mk / (mk - mj);
            let t = 0.5 * (t_star.max(0.0) + 1.0);
            let f = match pairs[k].f.zip(&pj.f, |x, y| (1.0 - t) * x + t * y) {
                Ok(f) => f,
                Err(_) => continue,
            };
            if f.is_constant() || !ok(f.mean()) {
                continue;
            }
            out.push(Generator {
                a: (1.0 - t) * pairs[k].a + t * pj.a,
                f,
                indices: vec![k, j],
                weight: t,
            });
        }
    }
    out
}

fn branch_constant(branch: Branch, f: &DiscreteFunction) -> f64 {
    let curves = alpha_curves(f);
    let s1 = f.mean().abs();
    match branch {
        Branch::ZeroMean => curves.c,
        Branch::PositiveMean | Branch::NegativeMean => curves.c * s1 / (s1 + curves.m),
    }
}

/// The lower bound `q(ξ) ≥ a₀ + b∫|ξ|` with `q` the rearrangement-closed
/// functional of `family`.
///
/// `∫ξ` counts as zero when `|∫ξ| ≤ zero_tol · ∫|ξ|`. Among the eligible
/// generators the one with the largest `b` is used (ties: larger `a`, then
/// lower index), so `a₀, b` do not depend on `ξ` beyond its branch.
pub fn l1_lower_bound(
    family: &SupportFamily,
    xi: &DiscreteFunction,
    zero_tol: f64,
    tol: f64,
) -> Result<LowerBoundReport> {
    family.pairs()[0].f.check_same_space(xi)?;
    if family.pairs().iter().all(|p| p.f.is_constant()) {
        return Err(Error::ConstantFamily);
    }
    let total = xi.integral();
    let l1 = xi.l1();
    let branch = if total.abs() <= zero_tol * l1 {
        Branch::ZeroMean
    } else if total > 0.0 {
        Branch::PositiveMean
    } else {
        Branch::NegativeMean
    };
    let sign = match branch {
        Branch::ZeroMean => 0.0,
        Branch::PositiveMean => 1.0,
        Branch::NegativeMean => -1.0,
    };
    // q(λ) grows without bound in the direction `sign` iff some pair has a
    // mean of that sign; a finite family decides the limit exactly.
    if sign != 0.0 && !family.pairs().iter().any(|p| p.f.mean() * sign > 0.0) {
        return Err(Error::NoBranch(format!(
            "∫ξ has sign {sign} but q stays bounded in that direction"
        )));
    }
    let mut best: Option<(f64, Generator)> = None;
    for g in generators(family, sign) {
        let b = branch_constant(branch, &g.f);
        let better = match &best {
            None => true,
            Some((bb, bg)) => b > *bb || (b == *bb && g.a > bg.a),
        };
        if better {
            best = Some((b, g));
        }
    }
    let (b, g) = best.ok_or_else(|| Error::NoBranch("no nonconstant generator".into()))?;
    let a0 = if family.is_homogeneous() { 0.0 } else { g.a };
    let bound = a0 + b * l1;
    let q_value = family.evaluate(xi, Mode::OverRearrangements)?;
    let holds = q_value >= bound - tol * (1.0 + bound.abs());
    Ok(LowerBoundReport { a0, b, bound, q_value, branch, generator: g.indices, weight: g.weight, holds })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L1Check {
    pub pair: usize,
    /// `"+"` checks `∫f⁺`, `"-"` checks `∫f⁻`.
    pub part: String,
    pub integral: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L1NormReport {
    pub max_l1: f64,
    pub checks: Vec<L1Check>,
}

/// A nonnegative test function: one on the leading cells while their mass
/// stays within half of `μ(X)`.
pub fn half_mass_indicator(space: &Arc<MeasureSpace>) -> DiscreteFunction {
    let half = 0.5 * space.total();
    let mut acc = 0.0;
    let values = space
        .masses()
        .iter()
        .map(|&w| {
            if acc + w <= half {
                acc += w;
                1.0
            } else {
                acc = f64::INFINITY;
                0.0
            }
        })
        .collect();
    DiscreteFunction::new(space.clone(), values).expect("length matches")
}

/// `max ∫|f|` over the family, with the uniform bound that follows from
/// evaluating the homogeneous functional on a nonnegative test function `ξ`
/// supported on at most half the mass:
/// `∫f⁺ ≤ 2μ(X) M(ξ)/∫ξ` when `μ{f ≥ 0} ≥ μ(X)/2`, else
/// `∫f⁻ ≤ 2μ(X) M(−ξ)/∫ξ`, where `M(ξ) = sup_f sup_{f'∼f} ∫f'ξ`.
pub fn family_l1_norm_bound(
    family: &SupportFamily,
    test: Option<&DiscreteFunction>,
    tol: f64,
) -> Result<L1NormReport> {
    let max_l1 = family.pairs().iter().map(|p| p.f.l1()).fold(0.0, f64::max);
    let space = family.space().clone();
    let default_test;
    let xi = match test {
        Some(t) => t,
        None => {
            default_test = half_mass_indicator(&space);
            &default_test
        }
    };
    let mut checks = Vec::new();
    let integral = xi.integral();
    if integral <= 0.0 || xi.min() < 0.0 {
        return Ok(L1NormReport { max_l1, checks });
    }
    let homogeneous = family.homogeneous_part();
    let m_plus = homogeneous.evaluate(xi, Mode::OverRearrangements)?;
    let m_minus = homogeneous.evaluate(&xi.neg(), Mode::OverRearrangements)?;
    let total = space.total();
    for (k, p) in family.pairs().iter().enumerate() {
        let nonneg = p.f.distribution_mass(0.0, crate::measure::Relation::GreaterEq);
        let (part, value, m) = if nonneg >= 0.5 * total {
            ("+", p.f.positive_part().integral(), m_plus)
        } else {
            ("-", p.f.negative_part().integral(), m_minus)
        };
        let bound = 2.0 * total * m / integral;
        checks.push(L1Check {
            pair: k,
            part: part.into(),
            integral: value,
            bound,
            holds: value <= bound + tol * (1.0 + bound.abs()),
        });
    }
    Ok(L1NormReport { max_l1, checks })
}

/// Gauge of `{p < c}`: `inf { λ > 0 : p(ξ/λ) < c }`, found by bisection to
/// relative width `1e-10`.
pub fn minkowski_functional(family: &SupportFamily, c: f64, xi: &DiscreteFunction) -> Result<f64> {
    let mode = family.default_mode();
    let p0 = family.evaluate(&family.zero(), mode)?;
    if c <= p0 {
        return Err(Error::LevelTooLow { c, p0 });
    }
    let below = |lambda: f64| -> Result<bool> { Ok(family.evaluate(&xi.scale(1.0 / lambda), mode)? < c) };
    let mut hi = 1.0;
    while !below(hi)? {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Precondition("gauge is unbounded".into()));
        }
    }
    let mut lo = hi;
    loop {
        lo *= 0.5;
        if lo < 1e-12 {
            return Ok(0.0);
        }
        if !below(lo)? {
            break;
        }
        hi = lo;
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if below(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `q(ζ) = max_f sup_{f'∼f} ∫|f'ζ|`; offsets are ignored.
pub fn ri_norm(family: &SupportFamily, zeta: &DiscreteFunction) -> Result<f64> {
    let z = zeta.abs();
    let mut best: f64 = 0.0;
    for p in family.pairs() {
        best = best.max(rearrangement_sup(&p.f.abs(), &z)?);
    }
    Ok(best)
}

/// Tally for one property across random trials.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PropertyTally {
    pub checked: usize,
    pub failures: usize,
    /// Largest violation, relative to the scale of the compared values.
    pub worst: f64,
}

impl PropertyTally {
    fn record(&mut self, violation: f64, tol: f64) {
        self.checked += 1;
        if violation > tol {
            self.failures += 1;
        }
        self.worst = self.worst.max(violation);
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomReport {
    pub trials: usize,
    /// `b` of `q(ζ) ≥ b∫|ζ|`.
    pub b: f64,
    pub max_mean_abs: f64,
    pub homogeneity: PropertyTally,
    pub triangle: PropertyTally,
    pub monotonicity: PropertyTally,
    pub faithfulness: PropertyTally,
    pub fatou: PropertyTally,
    pub l1_embedding: PropertyTally,
    pub dominates_p: PropertyTally,
    pub equivalence: PropertyTally,
    pub equivalence_via_b: PropertyTally,
    pub holds: bool,
}

fn excess(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).max(0.0) / (1.0 + lhs.abs().max(rhs.abs()))
}

fn random_function(space: &Arc<MeasureSpace>, rng: &mut Philox, zero_fraction: f64) -> DiscreteFunction {
    let values = (0..space.len())
        .map(|_| if rng.uniform() < zero_fraction { 0.0 } else { rng.range(-1.0, 1.0) })
        .collect();
    DiscreteFunction::new(space.clone(), values).expect("length matches")
}

/// Random checks of the lattice-norm properties of [`ri_norm`] and of its
/// equivalence with the homogeneous functional `p(ζ) = sup_f sup ∫f'ζ`.
pub fn ri_norm_axiom_report(family: &SupportFamily, trials: usize, seed: u64, tol: f64) -> Result<AxiomReport> {
    let homogeneous = family.homogeneous_part();
    let space = family.space().clone();
    let b = family
        .pairs()
        .iter()
        .filter(|p| !p.f.is_constant())
        .map(|p| alpha_curves(&p.f).c)
        .fold(f64::NEG_INFINITY, f64::max);
    if !b.is_finite() {
        return Err(Error::ConstantFamily);
    }
    let max_mean_abs = family.pairs().iter().map(|p| p.f.abs().mean()).fold(0.0, f64::max);
    let p = |z: &DiscreteFunction| homogeneous.evaluate(z, Mode::OverRearrangements);
    let q = |z: &DiscreteFunction| ri_norm(family, z);

    let mut r = AxiomReport {
        trials,
        b,
        max_mean_abs,
        homogeneity: Default::default(),
        triangle: Default::default(),
        monotonicity: Default::default(),
        faithfulness: Default::default(),
        fatou: Default::default(),
        l1_embedding: Default::default(),
        dominates_p: Default::default(),
        equivalence: Default::default(),
        equivalence_via_b: Default::default(),
        holds: false,
    };
    r.faithfulness.record(q(&family.zero())?.abs(), 0.0);
    for trial in 0..trials {
        let mut rng = Philox::new(seed, trial as u64);
        let zeta = random_function(&space, &mut rng, 0.2);
        let eta = random_function(&space, &mut rng, 0.2);
        let qz = q(&zeta)?;

        let t = rng.range(0.0, 5.0);
        let qt = q(&zeta.scale(t))?;
        r.homogeneity.record((qt - t * qz).abs() / (1.0 + qt.abs()), tol);

        r.triangle.record(excess(q(&zeta.zip(&eta, |x, y| x + y)?)?, qz + q(&eta)?), tol);

        let shrink = zeta.zip(&random_function(&space, &mut rng, 0.0), |x, u| x * u)?;
        r.monotonicity.record(excess(q(&shrink)?, qz), tol);

        let nonzero = zeta.sup_norm() > 0.0;
        r.faithfulness.record(if nonzero && qz <= 0.0 { 1.0 } else { 0.0 }, 0.0);

        let levels = 8;
        let abs = zeta.abs();
        let mut prev = 0.0;
        let mut worst: f64 = 0.0;
        for k in 1..=levels {
            let frac = k as f64 / levels as f64;
            let qk = q(&abs.scale(frac))?;
            worst = worst.max(excess(prev, qk));
            prev = qk;
        }
        worst = worst.max((prev - qz).abs() / (1.0 + qz));
        r.fatou.record(worst, tol);

        r.l1_embedding.record(excess(b * zeta.l1(), qz), tol);

        let pz = p(&zeta)?;
        let pm = p(&zeta.neg())?;
        r.dominates_p.record(excess(pz, qz), tol);
        r.equivalence.record(excess(qz, 4.0 * pz.max(pm) + 3.0 * max_mean_abs * zeta.l1()), tol);

        let centered = zeta.map(|v| v - zeta.mean());
        let qc = q(&centered)?;
        let pc = p(&centered)?.max(p(&centered.neg())?);
        r.equivalence_via_b.record(excess(qc, (4.0 + 3.0 * max_mean_abs / b) * pc), tol);
    }
    r.holds = [
        &r.homogeneity,
        &r.triangle,
        &r.monotonicity,
        &r.faithfulness,
        &r.fatou,
        &r.l1_embedding,
        &r.dominates_p,
        &r.equivalence,
        &r.equivalence_via_b,
    ]
    .iter()
    .all(|t| t.passed());
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    /// `2M` with `M = sup_{‖ζ‖∞ ≤ R+1} |p(ζ)|` bounded exactly from the family.
    pub bound: f64,
    /// Largest `|p|` seen on sampled functions of sup norm `≤ R+1`.
    pub sampled_m: f64,
    pub m: f64,
    pub pairs_checked: usize,
    pub holds: bool,
}

/// Random pairs in the sup-norm ball of radius `R`; the largest difference
/// quotient `|p(ξ)−p(η)|/‖ξ−η‖∞` against `2M`.
///
/// `sup p` over the ball of radius `R+1` is `max_k (a_k + (R+1)∫|f_k|)`,
/// attained at `(R+1)·sign f_k`, and `inf p ≥ max_k (a_k − (R+1)∫|f_k|)`,
/// so `M` is bounded by the larger magnitude of the two.
pub fn lipschitz_report(
    family: &SupportFamily,
    radius: f64,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<LipschitzReport> {
    if !(radius > 0.0) {
        return Err(Error::Precondition(format!("R must be positive, got {radius}")));
    }
    let mode = family.default_mode();
    let space = family.space().clone();
    let outer = radius + 1.0;
    let sup_p = family.pairs().iter().map(|p| p.a + outer * p.f.l1()).fold(f64::NEG_INFINITY, f64::max);
    let inf_lb = family.pairs().iter().map(|p| p.a - outer * p.f.l1()).fold(f64::NEG_INFINITY, f64::max);
    let mut m = sup_p.abs().max(inf_lb.abs());
    let mut sampled_m: f64 = 0.0;
    let mut max_ratio: f64 = 0.0;
    let mut pairs_checked = 0;
    for trial in 0..trials {
        let mut rng = Philox::new(seed, trial as u64);
        let xi = random_function(&space, &mut rng, 0.0).scale(radius);
        let eta = if rng.uniform() < 0.5 {
            random_function(&space, &mut rng, 0.0).scale(radius)
        } else {
            // Nearby pairs probe the local slope.
            let step = 1e-3 * radius;
            xi.zip(&random_function(&space, &mut rng, 0.0), |x, u| (x + step * u).clamp(-radius, radius))?
        };
        let big = random_function(&space, &mut rng, 0.0).scale(outer);
        sampled_m = sampled_m.max(family.evaluate(&big, mode)?.abs());
        let dist = xi.zip(&eta, |x, y| x - y)?.sup_norm();
        if dist == 0.0 {
            continue;
        }
        let ratio = (family.evaluate(&xi, mode)? - family.evaluate(&eta, mode)?).abs() / dist;
        max_ratio = max_ratio.max(ratio);
        pairs_checked += 1;
    }
    m = m.max(sampled_m);
    let bound = 2.0 * m;
    Ok(LipschitzReport {
        max_ratio,
        bound,
        sampled_m,
        m,
        pairs_checked,
        holds: max_ratio <= bound + tol * (1.0 + bound),
    })
}
