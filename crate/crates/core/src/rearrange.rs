//! Suprema over rearrangement classes, the inequalities built on them, the
//! two averaging constructions that stay inside the closed convex hull of a
//! rearrangement orbit, and level-set transport between equidistributed
//! functions.
//!
//! On an equal-mass space every strict rearrangement is a permutation of
//! cells, so "sup over rearrangements" is a max over permutations.

use std::sync::Arc;

use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{
    cmp_f64, descending, equidistributed, DiscreteFunction, MeasureSpace, Rational, Subset,
};
use crate::rng::Philox;

/// Sum of `Σ a_i b_i` with the products added in sorted order, so that two
/// pairings with the same multiset of products give bit-identical sums.
pub fn canonical_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut products: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    products.sort_by(|x, y| cmp_f64(*x, *y));
    products.iter().sum()
}

/// `∫ φψ` on an equal-mass space, summed canonically.
pub fn pairing_integral(phi: &DiscreteFunction, psi: &DiscreteFunction) -> Result<f64> {
    phi.check_same_space(psi)?;
    require_equal_mass(phi)?;
    Ok(phi.space().mass(0) * canonical_dot(phi.values(), psi.values()))
}

fn require_equal_mass(f: &DiscreteFunction) -> Result<()> {
    if f.space().equal_mass() {
        Ok(())
    } else {
        Err(Error::NotEqualMass)
    }
}

fn exact_or_dyadic(space: &MeasureSpace) -> Result<Vec<Rational>> {
    if let Some(exact) = space.exact_masses() {
        return Ok(exact.to_vec());
    }
    space
        .masses()
        .iter()
        .map(|&m| exact_binary_value(m).ok_or(Error::IrrationalMasses))
        .collect()
}

/// The exact rational value of a positive finite float, if it fits.
fn exact_binary_value(x: f64) -> Option<Rational> {
    let bits = x.to_bits();
    let exponent = ((bits >> 52) & 0x7ff) as i32;
    let fraction = (bits & ((1u64 << 52) - 1)) as i128;
    let (mantissa, shift) = if exponent == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1i128 << 52), exponent - 1075)
    };
    if shift >= 0 {
        let factor = 1i128.checked_shl(shift as u32).filter(|_| shift < 74)?;
        Some(Rational::from_integer(mantissa.checked_mul(factor)?))
    } else {
        let tz = mantissa.trailing_zeros() as i32;
        let reduce = tz.min(-shift);
        let denom_pow = -shift - reduce;
        if denom_pow > 126 {
            return None;
        }
        Some(Rational::new(mantissa >> reduce, 1i128 << denom_pow))
    }
}

/// Refine a space into equal cells of mass `gcd(masses)`.
///
/// Returns the new space and, for every new cell, the index of the cell it
/// came from. Float masses are taken at their exact binary value.
pub fn equal_mass_refinement(
    space: &MeasureSpace,
    max_cells: usize,
) -> Result<(Arc<MeasureSpace>, Vec<usize>)> {
    let masses = exact_or_dyadic(space)?;
    let denom = masses.iter().fold(1i128, |acc, r| acc.lcm(r.denom()));
    let mut numers = Vec::with_capacity(masses.len());
    for r in &masses {
        let scaled = r.numer().checked_mul(denom / r.denom()).ok_or(Error::IrrationalMasses)?;
        numers.push(scaled);
    }
    let g = numers.iter().fold(0i128, |acc, &n| acc.gcd(&n));
    let quantum = Rational::new(g, denom);
    let mut needed: u64 = 0;
    for &n in &numers {
        needed = needed.saturating_add((n / g).to_u64().unwrap_or(u64::MAX));
    }
    if needed > max_cells as u64 {
        return Err(Error::TooManyCells { needed, limit: max_cells });
    }
    let mut origin = Vec::with_capacity(needed as usize);
    for (i, &n) in numers.iter().enumerate() {
        origin.extend(std::iter::repeat_n(i, (n / g) as usize));
    }
    let refined = MeasureSpace::from_rationals(vec![quantum; origin.len()])?;
    Ok((Arc::new(refined), origin))
}

/// Move functions sharing one rational-mass space onto a common equal-mass
/// refinement. Each output is equidistributed with its input.
pub fn split_to_equal_mass(
    fs: &[DiscreteFunction],
    max_cells: usize,
) -> Result<Vec<DiscreteFunction>> {
    let Some(first) = fs.first() else {
        return Ok(Vec::new());
    };
    for f in &fs[1..] {
        first.check_same_space(f)?;
    }
    if first.space().equal_mass() {
        return Ok(fs.to_vec());
    }
    let (space, origin) = equal_mass_refinement(first.space(), max_cells)?;
    fs.iter()
        .map(|f| DiscreteFunction::new(space.clone(), origin.iter().map(|&i| f.values()[i]).collect()))
        .collect()
}

/// A maximizing pairing: `value = ∫ φψ` with `φ = φ₀ ∘ witness`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingSup {
    pub value: f64,
    /// Cell `i` receives `φ₀[witness[i]]`.
    pub witness: Vec<usize>,
}

/// `max_{φ∼φ₀} ∫ φψ`, attained by pairing both functions in descending order.
pub fn sup_pairing(phi0: &DiscreteFunction, psi: &DiscreteFunction) -> Result<PairingSup> {
    phi0.check_same_space(psi)?;
    require_equal_mass(psi)?;
    let a = descending(phi0.values());
    let b = descending(psi.values());
    let mut witness = vec![0; psi.len()];
    for (&i, &j) in a.iter().zip(&b) {
        witness[j] = i;
    }
    let value = pairing_integral(&phi0.permuted(&witness), psi)?;
    Ok(PairingSup { value, witness })
}

/// `∫₀^{μ(X)} φ* ψ*`, the supremum over rearrangements when cells may be
/// split arbitrarily. Agrees with [`sup_pairing`] after
/// [`split_to_equal_mass`], without materializing the refinement.
pub fn rearrangement_sup(phi: &DiscreteFunction, psi: &DiscreteFunction) -> Result<f64> {
    phi.check_same_space(psi)?;
    if phi.space().equal_mass() {
        return Ok(sup_pairing(phi, psi)?.value);
    }
    let a = phi.decreasing_rearrangement().breakpoints;
    let b = psi.decreasing_rearrangement().breakpoints;
    let (mut i, mut j) = (0, 0);
    let mut prev = 0.0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let next = a[i].1.min(b[j].1);
        acc += a[i].0 * b[j].0 * (next - prev);
        prev = next;
        if a[i].1 <= next {
            i += 1;
        }
        if b[j].1 <= next {
            j += 1;
        }
    }
    Ok(acc)
}

/// Whether `(φ(x)−φ(y))(ψ(x)−ψ(y)) ≥ 0` for all cells; on failure returns an
/// offending pair.
pub fn similarly_ordered(phi: &[f64], psi: &[f64]) -> std::result::Result<(), (usize, usize)> {
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&x, &y| cmp_f64(phi[x], phi[y]).then(cmp_f64(psi[x], psi[y])));
    // Within each φ-level ψ is sorted ascending; across levels the max of the
    // lower level must not exceed the min of the next.
    let mut prev_max: Option<(f64, usize)> = None;
    let mut k = 0;
    while k < order.len() {
        let level = phi[order[k]];
        let start = k;
        while k < order.len() && phi[order[k]] == level {
            k += 1;
        }
        let lo = order[start];
        let hi = order[k - 1];
        if let Some((m, idx)) = prev_max {
            if m > psi[lo] {
                return Err((idx.min(lo), idx.max(lo)));
            }
        }
        if prev_max.is_none_or(|(m, _)| psi[hi] >= m) {
            prev_max = Some((psi[hi], hi));
        }
    }
    Ok(())
}

/// Lexicographic permutations of `0..n`.
pub fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        f(&p);
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

/// Exhaustive `max_σ ∫ (φ₀∘σ)ψ`; the witness is the lexicographically first
/// maximizer.
pub fn brute_force_sup(phi0: &DiscreteFunction, psi: &DiscreteFunction) -> Result<PairingSup> {
    phi0.check_same_space(psi)?;
    require_equal_mass(psi)?;
    let w = psi.space().mass(0);
    let mut best: Option<PairingSup> = None;
    let mut buf = vec![0.0; psi.len()];
    for_each_permutation(psi.len(), |perm| {
        for (slot, &j) in buf.iter_mut().zip(perm) {
            *slot = phi0.values()[j];
        }
        let value = w * canonical_dot(&buf, psi.values());
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(PairingSup { value, witness: perm.to_vec() });
        }
    });
    Ok(best.expect("at least one permutation"))
}

/// Random similarly ordered rearrangement of `φ₀` against `ψ₀`: the canonical
/// pairing with ties inside each level of either function reshuffled.
fn random_similar_witness(phi0: &[f64], psi0: &[f64], rng: &mut Philox) -> Vec<usize> {
    let n = phi0.len();
    let mut a = descending(phi0);
    let mut b = descending(psi0);
    shuffle_levels(&mut a, phi0, rng);
    shuffle_levels(&mut b, psi0, rng);
    let mut witness = vec![0; n];
    for (&i, &j) in a.iter().zip(&b) {
        witness[j] = i;
    }
    witness
}

fn shuffle_levels(order: &mut [usize], values: &[f64], rng: &mut Philox) {
    let mut k = 0;
    while k < order.len() {
        let start = k;
        while k < order.len() && values[order[k]] == values[order[start]] {
            k += 1;
        }
        rng.shuffle(&mut order[start..k]);
    }
}

/// Checks that `∫φψ` takes a single value over all similarly ordered pairs
/// `φ∼φ₀, ψ∼ψ₀`. Spaces of at most eight cells are enumerated in full
/// (fixing `ψ = ψ₀` loses nothing: relabelling cells moves both together);
/// larger ones compare the canonical pairing with `trials` random witnesses.
pub fn pairing_value_invariance_check(
    phi0: &DiscreteFunction,
    psi0: &DiscreteFunction,
    trials: usize,
    seed: u64,
) -> Result<bool> {
    phi0.check_same_space(psi0)?;
    require_equal_mass(psi0)?;
    let reference = sup_pairing(phi0, psi0)?.value;
    let n = psi0.len();
    let mut consistent = true;
    if n <= 8 {
        let mut buf = vec![0.0; n];
        for_each_permutation(n, |perm| {
            for (slot, &j) in buf.iter_mut().zip(perm) {
                *slot = phi0.values()[j];
            }
            if similarly_ordered(&buf, psi0.values()).is_ok() {
                let v = psi0.space().mass(0) * canonical_dot(&buf, psi0.values());
                consistent &= v == reference;
            }
        });
    } else {
        let mut rng = Philox::new(seed, 0);
        for _ in 0..trials {
            let witness = random_similar_witness(phi0.values(), psi0.values(), &mut rng);
            let phi = phi0.permuted(&witness);
            debug_assert!(similarly_ordered(phi.values(), psi0.values()).is_ok());
            consistent &= pairing_integral(&phi, psi0)? == reference;
        }
    }
    Ok(consistent)
}

/// Both sides of an inequality `lhs ≤ rhs` (or `lhs ≥ rhs` for Chebyshev).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn le_with_tol(lhs: f64, rhs: f64, tol: f64) -> bool {
    lhs <= rhs + tol * (1.0 + lhs.abs().max(rhs.abs()))
}

/// Chebyshev: `∫φψ ≥ ⨍φ ∫ψ` for similarly ordered `φ, ψ`.
pub fn chebyshev_lower(phi: &DiscreteFunction, psi: &DiscreteFunction, tol: f64) -> Result<BoundReport> {
    phi.check_same_space(psi)?;
    similarly_ordered(phi.values(), psi.values())
        .map_err(|(first, second)| Error::NotSimilarlyOrdered { first, second })?;
    let lhs = phi.zip(psi, |a, b| a * b)?.integral();
    let rhs = phi.mean() * psi.integral();
    Ok(BoundReport { lhs, rhs, holds: le_with_tol(rhs, lhs, tol) })
}

/// `sup_{φ∼φ₀} ∫|φ|ψ ≤ sup ∫φψ + sup ∫(−φ)ψ + ⨍|φ₀| ∫ψ`.
pub fn abs_sup_bound_check(phi0: &DiscreteFunction, psi: &DiscreteFunction, tol: f64) -> Result<BoundReport> {
    let lhs = sup_pairing(&phi0.abs(), psi)?.value;
    let rhs = sup_pairing(phi0, psi)?.value
        + sup_pairing(&phi0.neg(), psi)?.value
        + phi0.abs().mean() * psi.integral();
    Ok(BoundReport { lhs, rhs, holds: le_with_tol(lhs, rhs, tol) })
}

/// `sup_{f∼f₀} |∫fξ| = max(sup ∫fξ, sup ∫(−f)ξ)`.
pub fn sup_abs_pairing(f0: &DiscreteFunction, xi: &DiscreteFunction) -> Result<f64> {
    Ok(sup_pairing(f0, xi)?.value.max(sup_pairing(&f0.neg(), xi)?.value))
}

/// `sup_{f∼f₀} ∫|fξ| ≤ 4 sup_{f∼f₀} |∫fξ| + 3 ⨍|f₀| ∫|ξ|`.
pub fn product_abs_bound_check(f0: &DiscreteFunction, xi: &DiscreteFunction, tol: f64) -> Result<BoundReport> {
    let lhs = sup_pairing(&f0.abs(), &xi.abs())?.value;
    let rhs = 4.0 * sup_abs_pairing(f0, xi)? + 3.0 * f0.abs().mean() * xi.l1();
    Ok(BoundReport { lhs, rhs, holds: le_with_tol(lhs, rhs, tol) })
}

/// `f` with its values on `E` replaced by their mean.
pub fn conv1_average_on(f: &DiscreteFunction, e: &Subset) -> Result<DiscreteFunction> {
    let cells = e.resolve(f.len())?;
    let avg = f.average(e)?;
    let mut values = f.values().to_vec();
    for i in cells {
        values[i] = avg;
    }
    f.with_values(values)
}

/// The convex combination `Σ_σ (f∘σ)/m!` over all permutations of the cells
/// of `E`, returned as (weight, permutation) terms. Requires the cells of `E`
/// to have equal mass; intended for small `E`.
pub fn conv1_orbit_combination(f: &DiscreteFunction, e: &Subset) -> Result<Vec<(f64, Vec<usize>)>> {
    let cells = e.resolve(f.len())?;
    if let Some(&first) = cells.first() {
        if cells.iter().any(|&i| f.space().mass(i) != f.space().mass(first)) {
            return Err(Error::NotEqualMass);
        }
    }
    let mut terms = Vec::new();
    for_each_permutation(cells.len(), |sigma| {
        let mut perm: Vec<usize> = (0..f.len()).collect();
        for (k, &s) in sigma.iter().enumerate() {
            perm[cells[k]] = cells[s];
        }
        terms.push((0.0, perm));
    });
    let w = 1.0 / terms.len() as f64;
    for t in &mut terms {
        t.0 = w;
    }
    Ok(terms)
}

fn masses_equal(space: &MeasureSpace, a: &[usize], b: &[usize]) -> bool {
    match space.exact_masses() {
        Some(exact) => {
            let sum = |cells: &[usize]| cells.iter().fold(Rational::zero(), |acc, &i| acc + exact[i]);
            sum(a) == sum(b)
        }
        None if space.equal_mass() => a.len() == b.len(),
        None => space.sum_masses(a.iter().copied()) == space.sum_masses(b.iter().copied()),
    }
}

/// `⨍_S f` on `T` and `⨍_{X∖S} f` on `X∖T`, for `μ(S) = μ(T)`.
pub fn conv1_two_block(f: &DiscreteFunction, s: &Subset, t: &Subset) -> Result<DiscreteFunction> {
    let n = f.len();
    let s_cells = s.resolve(n)?;
    let t_cells = t.resolve(n)?;
    if !masses_equal(f.space(), &s_cells, &t_cells) {
        return Err(Error::Precondition("S and T must have equal mass".into()));
    }
    let inside = f.average(s)?;
    let outside = f.average(&Subset::Cells(s.complement(n)?))?;
    let mut values = vec![outside; n];
    for i in t_cells {
        values[i] = inside;
    }
    f.with_values(values)
}

/// Right side of `sup_g ∫(f∘g)ξ ≥ ⨍_S f ∫ξ⁺ − ⨍_{X∖S} f ∫ξ⁻`, with the
/// supremum it bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingLowerBound {
    pub bound: f64,
    pub sup: f64,
}

pub fn pairing_lower_bound(
    f: &DiscreteFunction,
    xi: &DiscreteFunction,
    s: &Subset,
    t: &Subset,
) -> Result<PairingLowerBound> {
    f.check_same_space(xi)?;
    let n = f.len();
    let s_cells = s.resolve(n)?;
    let t_cells = t.resolve(n)?;
    if !masses_equal(f.space(), &s_cells, &t_cells) {
        return Err(Error::Precondition("S and T must have equal mass".into()));
    }
    let mut in_t = vec![false; n];
    for &i in &t_cells {
        in_t[i] = true;
    }
    for (i, &v) in xi.values().iter().enumerate() {
        if (in_t[i] && v < 0.0) || (!in_t[i] && v > 0.0) {
            return Err(Error::Precondition(format!(
                "ξ must be ≥ 0 on T and ≤ 0 off T (cell {i} has {v})"
            )));
        }
    }
    let bound = f.average(s)? * xi.positive_part().integral()
        - f.average(&Subset::Cells(s.complement(n)?))? * xi.negative_part().integral();
    let sup = rearrangement_sup(f, xi)?;
    Ok(PairingLowerBound { bound, sup })
}

/// A transport between equidistributed functions built from matched level
/// pieces: cells with `ξ` in value interval `J_i` (the source set `K_i`) are
/// sent onto the cells with `η` in `J_i` (the target set `L_i`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    /// Cell `x` is mapped to cell `permutation[x]`.
    pub permutation: Vec<usize>,
    pub intervals: Vec<(f64, f64)>,
    pub source_sets: Vec<Vec<usize>>,
    pub target_sets: Vec<Vec<usize>>,
    pub epsilon: f64,
    /// `∫ |ξ − η∘g|`.
    pub error: f64,
    /// The guaranteed bound `3ε`.
    pub bound: f64,
}

/// Builds intervals of length `ε/(2μ(X))`, aligned to multiples of that
/// length, and matches each `K_i` to `L_i` in cell-index order. The pieces
/// cover every cell, so the off-piece extension step is empty here, and
/// the error is below `ε`; it is exactly zero when no interval holds two
/// distinct values.
pub fn katok_transport(xi: &DiscreteFunction, eta: &DiscreteFunction, epsilon: f64) -> Result<TransportPlan> {
    xi.check_same_space(eta)?;
    require_equal_mass(xi)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Precondition(format!("ε must be positive, got {epsilon}")));
    }
    if !equidistributed(xi, eta) {
        return Err(Error::NotEquidistributed);
    }
    let total = xi.space().total();
    let len = epsilon / (2.0 * total);
    let bucket = |v: f64| (v / len).floor() as i64;

    let mut keys: Vec<i64> = xi.values().iter().map(|&v| bucket(v)).collect();
    keys.sort_unstable();
    keys.dedup();
    let index_of = |k: i64| keys.binary_search(&k).expect("bucket present");

    let mut source_sets = vec![Vec::new(); keys.len()];
    let mut target_sets = vec![Vec::new(); keys.len()];
    for (x, &v) in xi.values().iter().enumerate() {
        source_sets[index_of(bucket(v))].push(x);
    }
    for (y, &v) in eta.values().iter().enumerate() {
        let k = bucket(v);
        let slot = keys
            .binary_search(&k)
            .map_err(|_| Error::Precondition("η takes a value outside every interval".into()))?;
        target_sets[slot].push(y);
    }
    let mut permutation = vec![usize::MAX; xi.len()];
    for (k, l) in source_sets.iter().zip(&target_sets) {
        if k.len() != l.len() {
            return Err(Error::NotEquidistributed);
        }
        for (&x, &y) in k.iter().zip(l) {
            permutation[x] = y;
        }
    }
    let intervals = keys.iter().map(|&k| (k as f64 * len, (k + 1) as f64 * len)).collect();
    let error = transport_error(xi, eta, &permutation);
    Ok(TransportPlan {
        permutation,
        intervals,
        source_sets,
        target_sets,
        epsilon,
        error,
        bound: 3.0 * epsilon,
    })
}

/// `∫ |ξ − η∘g|` for the cell map `g`.
pub fn transport_error(xi: &DiscreteFunction, eta: &DiscreteFunction, g: &[usize]) -> f64 {
    xi.values()
        .iter()
        .enumerate()
        .map(|(x, &v)| (v - eta.values()[g[x]]).abs() * xi.space().mass(x))
        .sum()
}

/// Whether `map` is a bijection of `0..n`.
pub fn is_permutation(map: &[usize]) -> bool {
    let mut seen = vec![false; map.len()];
    map.iter().all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(values: &[f64]) -> DiscreteFunction {
        let space = Arc::new(MeasureSpace::counting(values.len()).unwrap());
        DiscreteFunction::new(space, values.to_vec()).unwrap()
    }

    fn pair(a: &[f64], b: &[f64]) -> (DiscreteFunction, DiscreteFunction) {
        let f = unit(a);
        let g = f.with_values(b.to_vec()).unwrap();
        (f, g)
    }

    #[test]
    fn split_examples() {
        let space = Arc::new(MeasureSpace::new(vec![2.0, 1.0]).unwrap());
        let f = DiscreteFunction::new(space, vec![1.0, 2.0]).unwrap();
        let out = split_to_equal_mass(std::slice::from_ref(&f), 100).unwrap();
        assert_eq!(out[0].values(), &[1.0, 1.0, 2.0]);
        assert_eq!(out[0].space().masses(), &[1.0, 1.0, 1.0]);
        assert!(equidistributed(&out[0], &f));

        let g = unit(&[3.0, 4.0]);
        assert_eq!(split_to_equal_mass(std::slice::from_ref(&g), 100).unwrap()[0], g);

        let thirds = Arc::new(
            MeasureSpace::from_rationals(vec![Rational::new(1, 3), Rational::new(2, 3)]).unwrap(),
        );
        let h = DiscreteFunction::new(thirds, vec![5.0, 6.0]).unwrap();
        let out = split_to_equal_mass(&[h], 100).unwrap();
        assert_eq!(out[0].len(), 3);
        assert_eq!(out[0].space().exact_masses().unwrap()[0], Rational::new(1, 3));
    }

    #[test]
    fn split_rejects_explosions() {
        let space = Arc::new(MeasureSpace::new(vec![1.0, 0.1]).unwrap());
        let f = DiscreteFunction::new(space, vec![0.0, 1.0]).unwrap();
        assert!(matches!(split_to_equal_mass(&[f], 1000), Err(Error::TooManyCells { .. })));
    }

    #[test]
    fn sup_pairing_examples() {
        let (phi, psi) = pair(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]);
        let s = sup_pairing(&phi, &psi).unwrap();
        assert_eq!(s.value, 8.0);
        assert_eq!(s.value, brute_force_sup(&phi, &psi).unwrap().value);

        let (phi, psi) = pair(&[1.0, 2.0, 3.0], &[2.0, 1.0, 0.0]);
        let s = sup_pairing(&phi, &psi).unwrap();
        assert_eq!(s.value, 8.0);
        assert_eq!(s.witness, vec![2, 1, 0]);

        let (phi, psi) = pair(&[1.0, -4.0, 3.0], &[2.0, 2.0, 2.0]);
        assert_eq!(sup_pairing(&phi, &psi).unwrap().value, 2.0 * phi.integral());
    }

    #[test]
    fn rearrangement_sup_matches_split() {
        let space = Arc::new(MeasureSpace::new(vec![2.0, 1.0, 3.0]).unwrap());
        let f = DiscreteFunction::new(space.clone(), vec![1.0, -2.0, 0.5]).unwrap();
        let g = DiscreteFunction::new(space, vec![0.0, 3.0, -1.0]).unwrap();
        let split = split_to_equal_mass(&[f.clone(), g.clone()], 100).unwrap();
        assert_eq!(
            rearrangement_sup(&f, &g).unwrap(),
            sup_pairing(&split[0], &split[1]).unwrap().value
        );
    }

    #[test]
    fn invariance_examples() {
        let (a, b) = pair(&[1.0, 1.0, 2.0], &[0.0, 5.0, 5.0]);
        assert!(pairing_value_invariance_check(&a, &b, 0, 1).unwrap());
        let (a, b) = pair(&[3.0, 1.0, 2.0], &[0.5, 0.25, 1.0]);
        assert!(pairing_value_invariance_check(&a, &b, 0, 1).unwrap());
        let (a, b) = pair(&[3.0, 1.0, 2.0], &[7.0, 7.0, 7.0]);
        assert!(pairing_value_invariance_check(&a, &b, 0, 1).unwrap());
    }

    #[test]
    fn similarly_ordered_detection() {
        assert!(similarly_ordered(&[1.0, 2.0, 2.0], &[0.0, 1.0, 5.0]).is_ok());
        assert!(similarly_ordered(&[1.0, 1.0], &[5.0, 0.0]).is_ok());
        assert_eq!(similarly_ordered(&[1.0, 2.0], &[1.0, 0.0]), Err((0, 1)));
        assert!(similarly_ordered(&[3.0, 1.0, 2.0], &[4.0, 4.0, 4.0]).is_ok());
        assert!(similarly_ordered(&[1.0, 2.0, 3.0], &[0.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn chebyshev_examples() {
        let (phi, psi) = pair(&[1.0, 2.0], &[0.0, 1.0]);
        let r = chebyshev_lower(&phi, &psi, 1e-12).unwrap();
        assert_eq!((r.lhs, r.rhs, r.holds), (2.0, 1.5, true));
        let (phi, psi) = pair(&[1.0, 5.0], &[3.0, 3.0]);
        let r = chebyshev_lower(&phi, &psi, 1e-12).unwrap();
        assert_eq!(r.lhs, r.rhs);
        let (phi, psi) = pair(&[-1.0, 1.0], &[-1.0, 1.0]);
        let r = chebyshev_lower(&phi, &psi, 1e-12).unwrap();
        assert_eq!((r.lhs, r.rhs), (2.0, 0.0));
        let (phi, psi) = pair(&[1.0, 2.0], &[1.0, 0.0]);
        assert!(matches!(chebyshev_lower(&phi, &psi, 0.0), Err(Error::NotSimilarlyOrdered { .. })));
    }

    #[test]
    fn abs_sup_examples() {
        let (phi, psi) = pair(&[-1.0, 1.0], &[0.0, 1.0]);
        let r = abs_sup_bound_check(&phi, &psi, 1e-12).unwrap();
        assert_eq!((r.lhs, r.rhs, r.holds), (1.0, 3.0, true));
        let brute = brute_force_sup(&phi.abs(), &psi).unwrap().value;
        assert_eq!(r.lhs, brute);

        let (phi, psi) = pair(&[1.0, 3.0], &[0.0, 0.0]);
        let r = abs_sup_bound_check(&phi, &psi, 0.0).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }

    #[test]
    fn product_abs_examples() {
        let (f, xi) = pair(&[-1.0, 1.0], &[-1.0, 1.0]);
        let r = product_abs_bound_check(&f, &xi, 1e-12).unwrap();
        assert_eq!(r.lhs, 2.0);
        assert_eq!(r.rhs, 4.0 * 2.0 + 3.0 * 2.0);
        assert!(r.holds);

        let (f, xi) = pair(&[2.0, -1.0, 3.0], &[1.0, 1.0, 1.0]);
        let r = product_abs_bound_check(&f, &xi, 0.0).unwrap();
        assert_eq!(r.lhs, f.l1());
        assert!(r.holds);
    }

    #[test]
    fn conv1_examples() {
        let f = unit(&[0.0, 2.0, 5.0]);
        assert_eq!(conv1_average_on(&f, &Subset::All).unwrap().values(), &[7.0 / 3.0; 3]);
        assert_eq!(conv1_average_on(&f, &Subset::Cells(vec![])).unwrap(), f);
        let g = conv1_average_on(&f, &Subset::cells(&[0, 1])).unwrap();
        assert_eq!(g.values(), &[1.0, 1.0, 5.0]);
        assert_eq!(g.integral(), f.integral());

        let terms = conv1_orbit_combination(&f, &Subset::cells(&[0, 1])).unwrap();
        let mut combo = [0.0; 3];
        for (w, perm) in &terms {
            for (c, v) in combo.iter_mut().zip(f.permuted(perm).values()) {
                *c += w * v;
            }
        }
        assert_eq!(combo, [1.0, 1.0, 5.0]);
    }

    #[test]
    fn two_block_examples() {
        let f = unit(&[4.0, 0.0]);
        let s = Subset::cells(&[0]);
        assert_eq!(conv1_two_block(&f, &s, &Subset::cells(&[1])).unwrap().values(), &[0.0, 4.0]);
        let e = Subset::Cells(vec![]);
        assert_eq!(conv1_two_block(&f, &e, &e).unwrap().values(), &[2.0, 2.0]);

        let h = unit(&[1.0, 3.0, 8.0]);
        let s = Subset::cells(&[0, 2]);
        let twice = conv1_average_on(
            &conv1_average_on(&h, &s).unwrap(),
            &Subset::Cells(s.complement(3).unwrap()),
        )
        .unwrap();
        assert_eq!(conv1_two_block(&h, &s, &s).unwrap(), twice);
        assert!(conv1_two_block(&h, &s, &Subset::cells(&[1])).is_err());
    }

    #[test]
    fn lower_bound_examples() {
        let (f, xi) = pair(&[1.0, -1.0], &[1.0, -1.0]);
        let r = pairing_lower_bound(&f, &xi, &Subset::cells(&[0]), &Subset::cells(&[0])).unwrap();
        assert_eq!((r.bound, r.sup), (2.0, 2.0));

        let (f, xi) = pair(&[2.0, 2.0, 2.0], &[1.0, -3.0, 0.0]);
        let r = pairing_lower_bound(&f, &xi, &Subset::cells(&[1]), &Subset::cells(&[0])).unwrap();
        assert_eq!(r.bound, 2.0 * xi.integral());
        assert_eq!(r.sup, r.bound);

        let (f, xi) = pair(&[5.0, 1.0, 3.0], &[1.0, 2.0, 0.5]);
        let r = pairing_lower_bound(&f, &xi, &Subset::cells(&[0, 2]), &Subset::All);
        assert!(r.is_err());
        let r = pairing_lower_bound(&f, &xi, &Subset::All, &Subset::All).unwrap();
        assert_eq!(r.bound, 3.0 * xi.integral());
        assert!(r.sup >= r.bound);
    }

    #[test]
    fn transport_examples() {
        let (xi, eta) = pair(&[0.0, 0.3, 0.6, 0.9], &[0.6, 0.0, 0.9, 0.3]);
        let plan = katok_transport(&xi, &eta, 0.5).unwrap();
        assert!(is_permutation(&plan.permutation));
        assert_eq!(plan.error, 0.0);
        assert!(plan.intervals.iter().all(|(lo, hi)| hi - lo < 0.5 / 4.0 + 1e-15));

        let plan = katok_transport(&xi, &xi, 0.01).unwrap();
        assert_eq!(plan.permutation, vec![0, 1, 2, 3]);
        assert_eq!(plan.error, 0.0);

        let (a, b) = pair(&[0.0, 0.05, 1.0], &[0.05, 0.0, 1.0]);
        let plan = katok_transport(&a, &b, 1.0).unwrap();
        assert!(plan.error > 0.0 && plan.error < 3.0);

        let (a, b) = pair(&[0.0, 1.0], &[0.0, 2.0]);
        assert_eq!(katok_transport(&a, &b, 1.0), Err(Error::NotEquidistributed));
    }

    #[test]
    fn permutations_are_lexicographic() {
        let mut all = Vec::new();
        for_each_permutation(3, |p| all.push(p.to_vec()));
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 1, 2]);
        assert_eq!(all[5], vec![2, 1, 0]);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }
}
