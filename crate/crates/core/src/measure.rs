//! Finite discrete measure spaces and functions on them.

use std::cmp::Ordering;
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::{CheckedAdd, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact rational used for masses read from decimal literals.
pub type Rational = Ratio<i128>;

/// A finite list of positive cell masses.
#[derive(Debug, Clone)]
pub struct MeasureSpace {
    masses: Vec<f64>,
    exact: Option<Vec<Rational>>,
    equal_mass: bool,
}

impl PartialEq for MeasureSpace {
    fn eq(&self, other: &Self) -> bool {
        match (&self.exact, &other.exact) {
            (Some(a), Some(b)) => a == b,
            _ => self.masses == other.masses,
        }
    }
}

impl MeasureSpace {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::EmptySpace);
        }
        for (index, &mass) in masses.iter().enumerate() {
            if !(mass > 0.0 && mass.is_finite()) {
                return Err(Error::InvalidMass { index, mass });
            }
        }
        let equal_mass = masses.iter().all(|&m| m == masses[0]);
        Ok(Self { masses, exact: None, equal_mass })
    }

    pub fn from_rationals(exact: Vec<Rational>) -> Result<Self> {
        if exact.is_empty() {
            return Err(Error::EmptySpace);
        }
        let masses: Vec<f64> = exact.iter().map(ratio_to_f64).collect();
        for (index, r) in exact.iter().enumerate() {
            if *r <= Rational::zero() || !masses[index].is_finite() {
                return Err(Error::InvalidMass { index, mass: masses[index] });
            }
        }
        let equal_mass = exact.iter().all(|r| *r == exact[0]);
        Ok(Self { masses, exact: Some(exact), equal_mass })
    }

    /// `cells` cells of mass one each.
    pub fn counting(cells: usize) -> Result<Self> {
        Self::from_rationals(vec![Rational::from_integer(1); cells])
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn exact_masses(&self) -> Option<&[Rational]> {
        self.exact.as_deref()
    }

    pub fn equal_mass(&self) -> bool {
        self.equal_mass
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn total(&self) -> f64 {
        self.mass_of(&Subset::All).unwrap_or(0.0)
    }

    /// Mass of a set of cells, summed exactly when the masses are rational.
    pub fn mass_of(&self, subset: &Subset) -> Result<f64> {
        let cells = subset.resolve(self.len())?;
        Ok(self.sum_masses(cells.iter().copied()))
    }

    pub(crate) fn sum_masses<I: Iterator<Item = usize>>(&self, cells: I) -> f64 {
        match &self.exact {
            Some(exact) => {
                let cells: Vec<usize> = cells.collect();
                exact_sum(cells.iter().map(|&i| exact[i]))
                    .map(|r| ratio_to_f64(&r))
                    .unwrap_or_else(|| cells.iter().map(|&i| self.masses[i]).sum())
            }
            None => cells.map(|i| self.masses[i]).sum(),
        }
    }
}

impl MeasureSpace {
    /// Running mass totals along `order`: entry `k` is the mass of `order[..=k]`.
    pub(crate) fn prefix_masses(&self, order: &[usize]) -> Vec<f64> {
        if let Some(exact) = &self.exact {
            let mut acc = Rational::zero();
            let mut out = Vec::with_capacity(order.len());
            let mut ok = true;
            for &i in order {
                match acc.checked_add(&exact[i]) {
                    Some(next) => acc = next,
                    None => {
                        ok = false;
                        break;
                    }
                }
                out.push(ratio_to_f64(&acc));
            }
            if ok {
                return out;
            }
        }
        let mut acc = 0.0;
        order
            .iter()
            .map(|&i| {
                acc += self.masses[i];
                acc
            })
            .collect()
    }
}

pub(crate) fn exact_sum<I: Iterator<Item = Rational>>(items: I) -> Option<Rational> {
    let mut acc = Rational::zero();
    for r in items {
        acc = acc.checked_add(&r)?;
    }
    Some(acc)
}

pub(crate) fn ratio_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Parse a decimal literal (`-1.25`, `3e-2`) or a fraction (`1/3`) exactly.
pub fn parse_rational(text: &str) -> Option<Rational> {
    if let Some((p, q)) = text.split_once('/') {
        let p: i128 = p.trim().parse().ok()?;
        let q: i128 = q.trim().parse().ok()?;
        if q == 0 {
            return None;
        }
        return Some(Rational::new(p, q));
    }
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all: String = format!("{int_part}{frac_part}");
    let numer: i128 = if all.is_empty() { 0 } else { all.parse().ok()? };
    let scale = exponent.checked_sub(frac_part.len() as i32)?;
    let ten = |k: u32| 10i128.checked_pow(k);
    let mut r = if scale >= 0 {
        Rational::from_integer(numer.checked_mul(ten(scale as u32)?)?)
    } else {
        Rational::new(numer, ten(scale.unsigned_abs())?)
    };
    if negative {
        r = -r;
    }
    Some(r)
}

/// A set of cells: everything, or an explicit index list.
#[derive(Debug, Clone, PartialEq)]
pub enum Subset {
    All,
    Cells(Vec<usize>),
}

impl Subset {
    pub fn cells(indices: &[usize]) -> Self {
        Subset::Cells(indices.to_vec())
    }

    /// Sorted, deduplicated cell indices, validated against `n`.
    pub fn resolve(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            Subset::All => Ok((0..n).collect()),
            Subset::Cells(cells) => {
                let mut out = cells.clone();
                out.sort_unstable();
                out.dedup();
                if let Some(&index) = out.iter().find(|&&i| i >= n) {
                    return Err(Error::IndexOutOfRange { index, cells: n });
                }
                Ok(out)
            }
        }
    }

    pub fn complement(&self, n: usize) -> Result<Vec<usize>> {
        let inside = self.resolve(n)?;
        let mut mark = vec![false; n];
        for i in inside {
            mark[i] = true;
        }
        Ok((0..n).filter(|&i| !mark[i]).collect())
    }
}

/// Comparison used by [`DiscreteFunction::distribution_mass`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Greater,
    GreaterEq,
    Less,
    LessEq,
    Equal,
}

impl Relation {
    pub fn holds(self, v: f64, t: f64) -> bool {
        match self {
            Relation::Greater => v > t,
            Relation::GreaterEq => v >= t,
            Relation::Less => v < t,
            Relation::LessEq => v <= t,
            Relation::Equal => v == t,
        }
    }
}

/// One real value per cell of a shared measure space.
#[derive(Debug, Clone)]
pub struct DiscreteFunction {
    space: Arc<MeasureSpace>,
    values: Vec<f64>,
}

impl PartialEq for DiscreteFunction {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && self.same_space(other)
    }
}

/// Descending order by value, ties by ascending index.
pub(crate) fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp_f64(values[b], values[a]).then(a.cmp(&b)));
    order
}

pub(crate) fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("function values are never NaN")
}

impl DiscreteFunction {
    pub fn new(space: Arc<MeasureSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::LengthMismatch { expected: space.len(), got: values.len() });
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Precondition("function values must not be NaN".into()));
        }
        Ok(Self { space, values })
    }

    pub fn constant(space: Arc<MeasureSpace>, c: f64) -> Self {
        let n = space.len();
        Self { space, values: vec![c; n] }
    }

    pub fn space(&self) -> &Arc<MeasureSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_space(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.space, &other.space) || *self.space == *other.space
    }

    pub fn check_same_space(&self, other: &Self) -> Result<()> {
        if self.same_space(other) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch)
        }
    }

    /// Same space, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.space.clone(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { space: self.space.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_space(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { space: self.space.clone(), values })
    }

    /// Values rearranged so that cell `i` receives `self[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { space: self.space.clone(), values: perm.iter().map(|&j| self.values[j]).collect() }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn neg(&self) -> Self {
        self.map(|v| -v)
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn positive_part(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn negative_part(&self) -> Self {
        self.map(|v| (-v).max(0.0))
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn integrate(&self, subset: &Subset) -> Result<f64> {
        let cells = subset.resolve(self.len())?;
        Ok(cells.iter().map(|&i| self.values[i] * self.space.mass(i)).sum())
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().zip(self.space.masses()).map(|(v, w)| v * w).sum()
    }

    /// Mean over a subset; zero on a null set.
    pub fn average(&self, subset: &Subset) -> Result<f64> {
        let mass = self.space.mass_of(subset)?;
        if mass == 0.0 {
            return Ok(0.0);
        }
        Ok(self.integrate(subset)? / mass)
    }

    pub fn mean(&self) -> f64 {
        self.integral() / self.space.total()
    }

    /// Integral of `|self|`.
    pub fn l1(&self) -> f64 {
        self.values.iter().zip(self.space.masses()).map(|(v, w)| v.abs() * w).sum()
    }

    pub fn distribution_mass(&self, t: f64, relation: Relation) -> f64 {
        self.space
            .sum_masses((0..self.len()).filter(|&i| relation.holds(self.values[i], t)))
    }

    /// Distinct values in descending order with the exact mass of each level set.
    pub fn level_sets(&self) -> Vec<(f64, f64)> {
        let order = descending(&self.values);
        let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
        for i in order {
            match out.last_mut() {
                Some((v, cells)) if *v == self.values[i] => cells.push(i),
                _ => out.push((self.values[i], vec![i])),
            }
        }
        out.into_iter()
            .map(|(v, cells)| (v, self.space.sum_masses(cells.into_iter())))
            .collect()
    }

    /// Exact level-set masses when the space carries rationals.
    fn exact_level_sets(&self) -> Option<Vec<(f64, Rational)>> {
        let exact = self.space.exact_masses()?;
        let order = descending(&self.values);
        let mut out: Vec<(f64, Rational)> = Vec::new();
        for i in order {
            match out.last_mut() {
                Some((v, m)) if *v == self.values[i] => *m = m.checked_add(&exact[i])?,
                _ => out.push((self.values[i], exact[i])),
            }
        }
        Some(out)
    }

    pub fn decreasing_rearrangement(&self) -> DistributionProfile {
        let order = descending(&self.values);
        let prefix = self.space.prefix_masses(&order);
        let mut breakpoints: Vec<(f64, f64)> = Vec::new();
        for (k, &i) in order.iter().enumerate() {
            let v = self.values[i];
            match breakpoints.last_mut() {
                Some(last) if last.0 == v => last.1 = prefix[k],
                _ => breakpoints.push((v, prefix[k])),
            }
        }
        DistributionProfile { breakpoints }
    }

    /// `θ_i = μ{ζ < ζ_i}`: a measure-preserving map onto `[0, μ(X))`.
    pub fn reparameterize_theta(&self) -> Result<Self> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| cmp_f64(self.values[a], self.values[b]).then(a.cmp(&b)));
        for pair in order.windows(2) {
            if self.values[pair[0]] == self.values[pair[1]] {
                return Err(Error::NotInjective {
                    first: pair[0].min(pair[1]),
                    second: pair[0].max(pair[1]),
                    value: self.values[pair[0]],
                });
            }
        }
        let prefix = self.space.prefix_masses(&order);
        let mut theta = vec![0.0; self.len()];
        for (k, &i) in order.iter().enumerate().skip(1) {
            theta[i] = prefix[k - 1];
        }
        Ok(Self { space: self.space.clone(), values: theta })
    }
}

/// Exact when both spaces carry rational masses; otherwise level-set masses
/// must agree within `mass_tol`.
pub fn equidistributed_with_tol(f: &DiscreteFunction, g: &DiscreteFunction, mass_tol: f64) -> bool {
    if let (Some(a), Some(b)) = (f.exact_level_sets(), g.exact_level_sets()) {
        return a == b;
    }
    let a = f.level_sets();
    let b = g.level_sets();
    a.len() == b.len()
        && a.iter().zip(&b).all(|((va, ma), (vb, mb))| va == vb && (ma - mb).abs() <= mass_tol)
}

pub fn equidistributed(f: &DiscreteFunction, g: &DiscreteFunction) -> bool {
    equidistributed_with_tol(f, g, 0.0)
}

/// A decreasing, left-continuous step function on `[0, μ(X)]`.
///
/// Breakpoint `(v, s)` means the profile equals `v` on `(s_prev, s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionProfile {
    pub breakpoints: Vec<(f64, f64)>,
}

impl DistributionProfile {
    pub fn total_mass(&self) -> f64 {
        self.breakpoints.last().map_or(0.0, |b| b.1)
    }

    /// Value at `s`; `s = 0` returns the supremum.
    pub fn value_at(&self, s: f64) -> f64 {
        self.breakpoints
            .iter()
            .find(|&&(_, cum)| s <= cum)
            .or(self.breakpoints.last())
            .map_or(f64::NAN, |b| b.0)
    }

    /// Values strictly decreasing, masses strictly increasing.
    pub fn is_well_formed(&self) -> bool {
        self.breakpoints.windows(2).all(|w| w[0].0 > w[1].0 && w[0].1 < w[1].1)
            && self.breakpoints.first().is_some_and(|b| b.1 > 0.0)
    }

    /// Integral of the profile over `[0, alpha]`.
    pub fn integral_up_to(&self, alpha: f64) -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &(v, cum) in &self.breakpoints {
            if alpha <= prev {
                break;
            }
            acc += v * (cum.min(alpha) - prev);
            prev = cum;
        }
        acc
    }
}
