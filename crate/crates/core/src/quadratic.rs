//! Quadratic forms `Q(z) = zᵀAz` on a symplectic vector space with basis
//! `z = (x_1..x_n, y_1..y_n)` and form `Σ dx_ν ∧ dy_ν`, under the Poisson
//! bracket.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// The standard symplectic matrix `[[0, I], [−I, 0]]`.
pub fn standard_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        j[(k, n + k)] = 1.0;
        j[(n + k, k)] = -1.0;
    }
    j
}

/// `max |SᵀJS − J|`.
pub fn symplectic_defect(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows() / 2;
    let j = standard_j(n);
    (s.transpose() * &j * s - j).amax()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    n: usize,
    a: DMatrix<f64>,
}

impl Serialize for QuadraticForm {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.a.nrows()).map(|i| self.a.row(i).iter().copied().collect()).collect();
        rows.serialize(serializer)
    }
}

impl QuadraticForm {
    /// Accepts any square `2n × 2n` matrix whose asymmetry is below `1e-14`
    /// (relative), and stores its symmetric part.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || !a.nrows().is_multiple_of(2) || a.nrows() == 0 {
            return Err(Error::DimensionMismatch { expected: 2 * (a.nrows() / 2).max(1), got: a.ncols() });
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-14 * (1.0 + a.amax()) {
            return Err(Error::Precondition(format!("coefficient matrix is not symmetric ({asym:e})")));
        }
        let sym = (&a + a.transpose()) * 0.5;
        Ok(Self { n: a.nrows() / 2, a: sym })
    }

    pub fn zero(n: usize) -> Self {
        Self { n, a: DMatrix::zeros(2 * n, 2 * n) }
    }

    /// `Σ q_ν x_ν y_ν`.
    pub fn diagonal_type(q: &[f64]) -> Self {
        let n = q.len();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for (k, &qk) in q.iter().enumerate() {
            a[(k, n + k)] = 0.5 * qk;
            a[(n + k, k)] = 0.5 * qk;
        }
        Self { n, a }
    }

    /// The monomial `z_λ z_ν`.
    pub fn monomial(n: usize, lambda: usize, nu: usize) -> Self {
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        if lambda == nu {
            a[(lambda, lambda)] = 1.0;
        } else {
            a[(lambda, nu)] = 0.5;
            a[(nu, lambda)] = 0.5;
        }
        Self { n, a }
    }

    /// Half the Hessian matrix: the quadratic Taylor term of a function.
    pub fn from_hessian(h: &DMatrix<f64>) -> Result<Self> {
        Self::new((h + h.transpose()) * 0.25)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(z);
        (v.transpose() * &self.a * &v)[(0, 0)]
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(z);
        (&self.a * v * 2.0).iter().copied().collect()
    }

    /// Matrix of the Hamiltonian vector field `sgrad Q`: `ż = 2JA z`.
    pub fn hamiltonian_matrix(&self) -> DMatrix<f64> {
        standard_j(self.n) * &self.a * 2.0
    }

    /// Coefficient of `z_λ z_ν` (`λ ≤ ν`).
    pub fn coefficient(&self, lambda: usize, nu: usize) -> f64 {
        if lambda == nu {
            self.a[(lambda, lambda)]
        } else {
            2.0 * self.a[(lambda, nu)]
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { n: self.n, a: &self.a * s }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_n(self, other)?;
        Ok(Self { n: self.n, a: &self.a + &other.a })
    }
}

fn check_n(q: &QuadraticForm, r: &QuadraticForm) -> Result<()> {
    if q.n != r.n {
        return Err(Error::DimensionMismatch { expected: q.n, got: r.n });
    }
    Ok(())
}

/// `{Q, R} = (sgrad Q) R`, with matrix `2(BJA − AJB)` for `Q ↔ A`, `R ↔ B`.
pub fn poisson_bracket(q: &QuadraticForm, r: &QuadraticForm) -> Result<QuadraticForm> {
    check_n(q, r)?;
    let j = standard_j(q.n);
    let bja = &r.a * &j * &q.a;
    let c = (&bja + bja.transpose()) * 2.0;
    Ok(QuadraticForm { n: q.n, a: c })
}

/// Basis `{z_λ z_ν : λ ≤ ν}` in lexicographic order.
pub fn monomial_basis(n: usize) -> Vec<(usize, usize)> {
    let d = 2 * n;
    let mut out = Vec::with_capacity(n * (2 * n + 1));
    for lambda in 0..d {
        for nu in lambda..d {
            out.push((lambda, nu));
        }
    }
    out
}

/// Matrix of `ad_Q = {Q, ·}` on [`monomial_basis`].
pub fn ad_matrix(q: &QuadraticForm) -> DMatrix<f64> {
    let basis = monomial_basis(q.n);
    let dim = basis.len();
    let mut m = DMatrix::zeros(dim, dim);
    for (col, &(l, v)) in basis.iter().enumerate() {
        let image = poisson_bracket(q, &QuadraticForm::monomial(q.n, l, v)).expect("same n");
        for (row, &(a, b)) in basis.iter().enumerate() {
            m[(row, col)] = image.coefficient(a, b);
        }
    }
    m
}

/// `t(Q) = tr ad_Q²`.
pub fn t_invariant(q: &QuadraticForm) -> f64 {
    let m = ad_matrix(q);
    (&m * &m).trace()
}

/// `(4n + 4) Σ q_ν²`, the value of `t` on `Σ q_ν x_ν y_ν`.
pub fn t_closed_form(q: &[f64]) -> f64 {
    (4.0 * q.len() as f64 + 4.0) * q.iter().map(|v| v * v).sum::<f64>()
}

/// `Det Q = det A`.
pub fn det_invariant(q: &QuadraticForm) -> f64 {
    q.a.determinant()
}

/// `Q ∘ S`, with matrix `SᵀAS`.
pub fn compose_linear(q: &QuadraticForm, s: &DMatrix<f64>) -> Result<QuadraticForm> {
    if s.nrows() != 2 * q.n || s.ncols() != 2 * q.n {
        return Err(Error::DimensionMismatch { expected: 2 * q.n, got: s.nrows() });
    }
    if s.clone().try_inverse().is_none() {
        return Err(Error::SingularMatrix);
    }
    Ok(QuadraticForm { n: q.n, a: s.transpose() * &q.a * s })
}

/// `(x, y) ↦ (e^{c_ν} x_ν, e^{c_ν} y_ν)`: volume preserving when `Σc = 0`,
/// symplectic only when every `c_ν = 0`.
pub fn diagonal_scaling(c: &[f64]) -> DMatrix<f64> {
    let n = c.len();
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    for (k, &ck) in c.iter().enumerate() {
        s[(k, k)] = ck.exp();
        s[(n + k, n + k)] = ck.exp();
    }
    s
}

/// Rotation by `angle` in the `(x_k, y_k)` plane.
pub fn symplectic_rotation(n: usize, k: usize, angle: f64) -> DMatrix<f64> {
    let mut s = DMatrix::identity(2 * n, 2 * n);
    let (sin, cos) = angle.sin_cos();
    s[(k, k)] = cos;
    s[(k, n + k)] = sin;
    s[(n + k, k)] = -sin;
    s[(n + k, n + k)] = cos;
    s
}

/// `x ↦ x + K y` with `K` symmetric: a symplectic shear.
pub fn symplectic_shear_x(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let mut s = DMatrix::identity(2 * n, 2 * n);
    s.view_mut((0, n), (n, n)).copy_from(&((k + k.transpose()) * 0.5));
    s
}

/// `y ↦ y + K x` with `K` symmetric.
pub fn symplectic_shear_y(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let mut s = DMatrix::identity(2 * n, 2 * n);
    s.view_mut((n, 0), (n, n)).copy_from(&((k + k.transpose()) * 0.5));
    s
}

/// Symplectic map `(x, y) ↦ (Mx, M⁻ᵀy)` for invertible `M`.
pub fn symplectic_block(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let inv_t = m.clone().try_inverse().ok_or(Error::SingularMatrix)?.transpose();
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    s.view_mut((0, 0), (n, n)).copy_from(m);
    s.view_mut((n, n), (n, n)).copy_from(&inv_t);
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Invariants {
    pub det: f64,
    pub t: f64,
}

pub fn invariants(q: &QuadraticForm) -> Invariants {
    Invariants { det: det_invariant(q), t: t_invariant(q) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy() -> QuadraticForm {
        QuadraticForm::diagonal_type(&[1.0])
    }

    #[test]
    fn bracket_examples() {
        let q = xy();
        assert_eq!(poisson_bracket(&q, &q).unwrap(), QuadraticForm::zero(1));
        let x2 = QuadraticForm::monomial(1, 0, 0);
        let y2 = QuadraticForm::monomial(1, 1, 1);
        assert_eq!(poisson_bracket(&q, &x2).unwrap(), x2.scale(2.0));
        assert_eq!(poisson_bracket(&q, &y2).unwrap(), y2.scale(-2.0));
        assert!(poisson_bracket(&q, &QuadraticForm::zero(2)).is_err());
    }

    #[test]
    fn bracket_is_directional_derivative() {
        // {Q, R}(z) = ∇R(z) · (2JA z), checked at a point.
        let q = QuadraticForm::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, -2.0])).unwrap();
        let r = QuadraticForm::new(DMatrix::from_row_slice(2, 2, &[0.5, -1.0, -1.0, 4.0])).unwrap();
        let z = [0.7, -1.3];
        let v = q.hamiltonian_matrix() * nalgebra::DVector::from_column_slice(&z);
        let g = r.gradient(&z);
        let direct = g[0] * v[0] + g[1] * v[1];
        assert!((poisson_bracket(&q, &r).unwrap().eval(&z) - direct).abs() < 1e-12);
    }

    #[test]
    fn t_examples() {
        assert_eq!(t_invariant(&xy()), 8.0);
        assert_eq!(t_invariant(&QuadraticForm::zero(1)), 0.0);
        assert_eq!(t_invariant(&QuadraticForm::diagonal_type(&[2.0, 2.0])), 96.0);
        assert_eq!(t_closed_form(&[2.0, 2.0]), 96.0);
    }

    #[test]
    fn det_examples() {
        assert_eq!(det_invariant(&xy()), -0.25);
        assert!((det_invariant(&QuadraticForm::diagonal_type(&[2.0])) + 1.0).abs() < 1e-15);
        assert_eq!(det_invariant(&QuadraticForm::zero(1)), 0.0);
        assert!((det_invariant(&QuadraticForm::diagonal_type(&[2.0, 2.0])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn compose_examples() {
        let q = QuadraticForm::diagonal_type(&[2.0]);
        assert_eq!(compose_linear(&q, &DMatrix::identity(2, 2)).unwrap(), q);
        let c = 0.7;
        let image = compose_linear(&q, &diagonal_scaling(&[c])).unwrap();
        assert!((image.coefficient(0, 1) - 2.0 * (2.0 * c).exp()).abs() < 1e-12);
        let s = symplectic_rotation(1, 0, 0.4) * symplectic_shear_x(&DMatrix::from_element(1, 1, 1.5));
        assert!((t_invariant(&compose_linear(&q, &s).unwrap()) - t_invariant(&q)).abs() < 1e-10);
        assert_eq!(compose_linear(&q, &DMatrix::zeros(2, 2)), Err(Error::SingularMatrix));
    }

    #[test]
    fn generators_are_symplectic() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -2.0]);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        for s in [
            symplectic_rotation(2, 1, 0.3),
            symplectic_shear_x(&k),
            symplectic_shear_y(&k),
            symplectic_block(&m).unwrap(),
        ] {
            assert!(symplectic_defect(&s) < 1e-14);
        }
        assert!(symplectic_defect(&diagonal_scaling(&[1.0, -1.0])) > 1.0);
    }

    #[test]
    fn ad_has_expected_dimension() {
        assert_eq!(monomial_basis(2).len(), 10);
        assert_eq!(ad_matrix(&xy()).nrows(), 3);
    }
}
