//! Semidirect Kaluza-Klein model: metric data, gain, and the coordinate
//! changes between cotangent coordinates, `W` coordinates and the shifted
//! coordinates carrying the conserved covector.
//!
//! All operators are body forms at the identity; the group factor is stripped
//! everywhere since the closed-loop system is right invariant.

use crate::algebra::SemidirectAlgebra;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    checked_inverse, inverse_with_rcond, max_abs, min_symmetric_eigenvalue, symmetry_defect,
    Matrix, Vector, MIN_RCOND,
};

const SYMMETRY_TOL: f64 = 1e-12;
const INVARIANCE_TOL: f64 = 1e-10;

/// Shape metric `mu_M: m -> m*`, locked inertia `I0: g -> g*` and the
/// connection coefficient `A0: m -> g`.
#[derive(Debug, Clone, PartialEq)]
pub struct KkData {
    pub mu_m: Matrix,
    pub i0: Matrix,
    pub a0: Matrix,
}

impl KkData {
    pub fn new(mu_m: Matrix, i0: Matrix, a0: Matrix) -> Result<Self> {
        let (dm, dg) = (mu_m.nrows(), i0.nrows());
        check_dim("mu_M columns", dm, mu_m.ncols())?;
        check_dim("I0 columns", dg, i0.ncols())?;
        check_dim("A0 rows (dim g)", dg, a0.nrows())?;
        check_dim("A0 columns (dim m)", dm, a0.ncols())?;
        for (name, op) in [("mu_M", &mu_m), ("I0", &i0)] {
            if op.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidMetric(format!("{name} is not finite")));
            }
            let defect = symmetry_defect(op);
            if defect > SYMMETRY_TOL {
                return Err(Error::InvalidMetric(format!(
                    "{name} not symmetric (defect {defect:.3e})"
                )));
            }
            let low = min_symmetric_eigenvalue(op);
            if low <= 0.0 {
                return Err(Error::InvalidMetric(format!(
                    "{name} not positive definite (smallest eigenvalue {low:.3e})"
                )));
            }
        }
        if a0.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMetric("A0 is not finite".into()));
        }
        Ok(Self { mu_m, i0, a0 })
    }

    pub fn dim_m(&self) -> usize {
        self.mu_m.nrows()
    }

    pub fn dim_g(&self) -> usize {
        self.i0.nrows()
    }

    /// Block operator `[[mu + A0* I0 A0, A0* I0], [I0 A0, I0]]` on `m ⊕ g`.
    pub fn kk_metric(&self) -> Matrix {
        kk_block(&self.mu_m, &self.i0, &self.a0)
    }

    /// Inverse of [`Self::kk_metric`] from the block structure:
    /// `[[mu^-1, -mu^-1 A0*], [-A0 mu^-1, I0^-1 + A0 mu^-1 A0*]]`.
    pub fn kk_metric_inverse(&self) -> Result<Matrix> {
        let mu_inv = checked_inverse(&self.mu_m, "mu_M")?;
        let i_inv = checked_inverse(&self.i0, "I0")?;
        let (dm, dg) = (self.dim_m(), self.dim_g());
        let a = &self.a0;
        let mut out = Matrix::zeros(dm + dg, dm + dg);
        out.view_mut((0, 0), (dm, dm)).copy_from(&mu_inv);
        let top_right = -(&mu_inv * a.transpose());
        out.view_mut((0, dm), (dm, dg)).copy_from(&top_right);
        out.view_mut((dm, 0), (dg, dm)).copy_from(&top_right.transpose());
        let bottom = i_inv + a * &mu_inv * a.transpose();
        out.view_mut((dm, dm), (dg, dg)).copy_from(&bottom);
        Ok(out)
    }
}

pub(crate) fn kk_block(mu: &Matrix, inertia: &Matrix, a: &Matrix) -> Matrix {
    let (dm, dg) = (mu.nrows(), inertia.nrows());
    let mut out = Matrix::zeros(dm + dg, dm + dg);
    let ia = inertia * a;
    out.view_mut((0, 0), (dm, dm)).copy_from(&(mu + a.transpose() * &ia));
    out.view_mut((0, dm), (dm, dg)).copy_from(&(a.transpose() * inertia));
    out.view_mut((dm, 0), (dg, dm)).copy_from(&ia);
    out.view_mut((dm, dm), (dg, dg)).copy_from(inertia);
    out
}

/// The semidirect model together with its feedback gain `C: m* -> g*`.
#[derive(Debug, Clone)]
pub struct SemidirectModel {
    algebra: SemidirectAlgebra,
    kk: KkData,
    gain: Matrix,
    mu_inv: Matrix,
    i0_inv: Matrix,
    // (1 + C A0*)^-1
    e: Matrix,
}

impl SemidirectModel {
    pub fn new(algebra: SemidirectAlgebra, kk: KkData, gain: Matrix) -> Result<Self> {
        check_dim("mu_M vs dim m", algebra.dim_m(), kk.dim_m())?;
        check_dim("I0 vs dim g", algebra.dim_g(), kk.dim_g())?;
        check_dim("C rows (dim g)", algebra.dim_g(), gain.nrows())?;
        check_dim("C columns (dim m)", algebra.dim_m(), gain.ncols())?;
        if gain.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMetric("C is not finite".into()));
        }
        let inv = invariance_residual(&algebra, &kk.i0)?;
        if inv > INVARIANCE_TOL {
            return Err(Error::InvalidMetric(format!(
                "I0 is not Ad/rho invariant (residual {inv:.3e})"
            )));
        }
        let mu_inv = checked_inverse(&kk.mu_m, "mu_M")?;
        let i0_inv = checked_inverse(&kk.i0, "I0")?;
        let e = gain_inverse(&gain, &kk.a0)?;
        Ok(Self {
            algebra,
            kk,
            gain,
            mu_inv,
            i0_inv,
            e,
        })
    }

    /// Same algebra and metric, different gain.
    pub fn with_gain(&self, gain: Matrix) -> Result<Self> {
        Self::new(self.algebra.clone(), self.kk.clone(), gain)
    }

    pub fn algebra(&self) -> &SemidirectAlgebra {
        &self.algebra
    }

    pub fn kk(&self) -> &KkData {
        &self.kk
    }

    pub fn gain(&self) -> &Matrix {
        &self.gain
    }

    pub fn dim_m(&self) -> usize {
        self.algebra.dim_m()
    }

    pub fn dim_g(&self) -> usize {
        self.algebra.dim_g()
    }

    pub fn mu_inv(&self) -> &Matrix {
        &self.mu_inv
    }

    pub fn i0_inv(&self) -> &Matrix {
        &self.i0_inv
    }

    /// `E = (1 + C A0*)^-1`.
    pub fn e_map(&self) -> &Matrix {
        &self.e
    }

    /// `1 + C A0*`.
    pub fn e_map_inverse(&self) -> Matrix {
        Matrix::identity(self.dim_g(), self.dim_g()) + &self.gain * self.kk.a0.transpose()
    }

    /// `½<nu, mu^-1 nu> + ½<p, I0^-1 p>`.
    pub fn reduced_hamiltonian(&self, nu: &Vector, pt: &Vector) -> Result<f64> {
        check_dim("hamiltonian nu", self.dim_m(), nu.len())?;
        check_dim("hamiltonian p", self.dim_g(), pt.len())?;
        Ok(0.5 * nu.dot(&(&self.mu_inv * nu)) + 0.5 * pt.dot(&(&self.i0_inv * pt)))
    }

    /// `<p, i(u) Curv^{A0}>` for the model's own connection.
    pub fn curvature_pairing(&self, u: &Vector, pt: &Vector) -> Result<Vector> {
        curvature_pairing(&self.algebra, &self.kk.a0, u, pt)
    }

    /// `E C nu_c - C A0* E p_c`.
    pub fn j_body(&self, nu_c: &Vector, p_c: &Vector) -> Result<Vector> {
        check_dim("j nu", self.dim_m(), nu_c.len())?;
        check_dim("j p", self.dim_g(), p_c.len())?;
        let c_nu = &self.gain * nu_c;
        let ca = &self.gain * self.kk.a0.transpose();
        Ok(&self.e * c_nu - ca * (&self.e * p_c))
    }

    /// Body form of `J + j`: `E (C nu_c + p_c)`.
    pub fn conserved_quantity_body(&self, nu_c: &Vector, p_c: &Vector) -> Result<Vector> {
        check_dim("conserved nu", self.dim_m(), nu_c.len())?;
        check_dim("conserved p", self.dim_g(), p_c.len())?;
        Ok(&self.e * (&self.gain * nu_c + p_c))
    }

    /// `(nu, p) -> (nu + A0* p, p)`.
    pub fn cotangent_from_w(&self, nu: &Vector, p: &Vector) -> Result<(Vector, Vector)> {
        check_dim("W nu", self.dim_m(), nu.len())?;
        check_dim("W p", self.dim_g(), p.len())?;
        Ok((nu + self.kk.a0.tr_mul(p), p.clone()))
    }

    /// `(nu_c, p_c) -> (nu_c - A0* p_c, p_c)`.
    pub fn w_from_cotangent(&self, nu_c: &Vector, p_c: &Vector) -> Result<(Vector, Vector)> {
        check_dim("cotangent nu", self.dim_m(), nu_c.len())?;
        check_dim("cotangent p", self.dim_g(), p_c.len())?;
        Ok((nu_c - self.kk.a0.tr_mul(p_c), p_c.clone()))
    }

    /// `E C nu`, the horizontal contribution to the conserved covector.
    pub fn shift(&self, nu: &Vector) -> Result<Vector> {
        check_dim("shift nu", self.dim_m(), nu.len())?;
        Ok(&self.e * (&self.gain * nu))
    }

    /// `p = qt - E C nu`.
    pub fn phi_j_shift(&self, nu: &Vector, qt: &Vector) -> Result<Vector> {
        check_dim("shift qt", self.dim_g(), qt.len())?;
        Ok(qt - self.shift(nu)?)
    }

    /// `qt = p + E C nu`.
    pub fn phi_j_unshift(&self, nu: &Vector, pt: &Vector) -> Result<Vector> {
        check_dim("unshift p", self.dim_g(), pt.len())?;
        Ok(pt + self.shift(nu)?)
    }
}

/// Checks `1 + C A0*` and returns its inverse.
fn gain_inverse(gain: &Matrix, a0: &Matrix) -> Result<Matrix> {
    let dg = gain.nrows();
    let b = Matrix::identity(dg, dg) + gain * a0.transpose();
    match inverse_with_rcond(&b) {
        Some((inv, rcond)) if rcond >= MIN_RCOND => Ok(inv),
        Some((_, rcond)) => Err(Error::SingularGain { rcond }),
        None => Err(Error::SingularGain { rcond: 0.0 }),
    }
}

/// Infinitesimal invariance of `I0`: `ad(Y)^* I0 + I0 ad(Y)` and
/// `(rho^u)^* I0 + I0 rho^u` over basis vectors.
pub fn invariance_residual(algebra: &SemidirectAlgebra, i0: &Matrix) -> Result<f64> {
    check_dim("I0 vs dim g", algebra.dim_g(), i0.nrows())?;
    let mut worst: f64 = 0.0;
    for j in 0..algebra.dim_g() {
        let ad = algebra.g.ad_matrix(&algebra.g.basis(j))?;
        worst = worst.max(max_abs(&(ad.transpose() * i0 + i0 * &ad)));
    }
    for a in 0..algebra.dim_m() {
        let rho = algebra.rep.rho_matrix(&algebra.m.basis(a))?;
        worst = worst.max(max_abs(&(rho.transpose() * i0 + i0 * &rho)));
    }
    Ok(worst)
}

/// Body curvature pairing for the connection with coefficient `a: m -> g`:
/// `ad(u)^* A* p + A* ad(A u)^* p - (A u) ⋄ p - A* rho_*^u p`.
pub fn curvature_pairing(
    algebra: &SemidirectAlgebra,
    a: &Matrix,
    u: &Vector,
    pt: &Vector,
) -> Result<Vector> {
    check_dim("curvature u", algebra.dim_m(), u.len())?;
    check_dim("curvature p", algebra.dim_g(), pt.len())?;
    let a_star_p = a.tr_mul(pt);
    let au = a * u;
    let t1 = algebra.m.ad_star(u, &a_star_p)?;
    let t2 = a.tr_mul(&algebra.g.ad_star(&au, pt)?);
    let t3 = algebra.rep.diamond(&au, pt)?;
    let t4 = a.tr_mul(&algebra.rep.rho_star(u, pt)?);
    Ok(t1 + t2 - t3 - t4)
}

/// The one-parameter gain family
/// `C = gamma (1 - gamma I0 A0 mu^-1 A0*)^-1 I0 A0 mu^-1`,
/// characterised by `(1 + C A0*)^-1 C mu u = gamma I0 A0 u`.
pub fn gamma_family_gain(kk: &KkData, gamma: f64) -> Result<Matrix> {
    let mu_inv = checked_inverse(&kk.mu_m, "mu_M")?;
    let dg = kk.dim_g();
    let base = &kk.i0 * &kk.a0 * &mu_inv;
    let core = Matrix::identity(dg, dg) - &base * kk.a0.transpose() * gamma;
    let inv = match inverse_with_rcond(&core) {
        Some((inv, rcond)) if rcond >= MIN_RCOND => inv,
        Some((_, rcond)) => return Err(Error::GammaOutOfRange { gamma, rcond }),
        None => return Err(Error::GammaOutOfRange { gamma, rcond: 0.0 }),
    };
    Ok(inv * base * gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::SemidirectAlgebra;
    use crate::linalg::vec_max_abs;
    use crate::presets;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn kk_metric_block_diagonal_without_connection() {
        let kk = KkData::new(
            Matrix::from_diagonal(&v(&[2.0, 3.0])),
            Matrix::from_diagonal(&v(&[0.5])),
            Matrix::zeros(1, 2),
        )
        .unwrap();
        let want = Matrix::from_diagonal(&v(&[2.0, 3.0, 0.5]));
        assert_eq!(kk.kk_metric(), want);
    }

    #[test]
    fn satellite_kk_metric_layout() {
        let model = presets::satellite_model(&presets::SatelliteParams::reference(0.0)).unwrap();
        let g = model.kk().kk_metric();
        let want = Matrix::from_row_slice(
            4,
            4,
            &[
                3.3, 0.0, 0.0, 0.0, //
                0.0, 2.3, 0.0, 0.0, //
                0.0, 0.0, 1.2, 0.2, //
                0.0, 0.0, 0.2, 0.2,
            ],
        );
        assert!(max_abs(&(g - want)) < 1e-15);
    }

    #[test]
    fn kk_block_inverse_matches_dense_inverse() {
        for model in presets::all_models() {
            let kk = model.kk();
            let dense = kk.kk_metric().try_inverse().unwrap();
            let block = kk.kk_metric_inverse().unwrap();
            assert!(max_abs(&(&dense - &block)) < 1e-10);
            let id = kk.kk_metric() * block;
            let n = id.nrows();
            assert!(max_abs(&(id - Matrix::identity(n, n))) < 1e-10);
        }
    }

    #[test]
    fn hamiltonian_values() {
        let model = presets::satellite_model(&presets::SatelliteParams::reference(0.3)).unwrap();
        assert_eq!(model.reduced_hamiltonian(&Vector::zeros(3), &Vector::zeros(1)).unwrap(), 0.0);
        let h = model.reduced_hamiltonian(&v(&[0.0, 1.0, 0.0]), &v(&[0.0])).unwrap();
        assert!((h - 1.0 / (2.0 * 2.3)).abs() < 1e-15);
        let nu = v(&[0.2, -0.5, 0.9]);
        let p = v(&[0.4]);
        let h1 = model.reduced_hamiltonian(&nu, &p).unwrap();
        let h2 = model.reduced_hamiltonian(&(&nu * 2.0), &(&p * 2.0)).unwrap();
        assert!((h2 - 4.0 * h1).abs() < 1e-14);
    }

    #[test]
    fn curvature_pairing_cases() {
        // no connection, no curvature
        let alg = SemidirectAlgebra::preset("so3_semidirect_r3").unwrap();
        let zero = curvature_pairing(&alg, &Matrix::zeros(3, 3), &v(&[1.0, 2.0, 3.0]), &v(&[1.0, 0.0, 1.0]))
            .unwrap();
        assert_eq!(zero, Vector::zeros(3));

        // satellite: p (u2, -u1, 0)
        let model = presets::satellite_model(&presets::SatelliteParams::reference(0.0)).unwrap();
        let u = v(&[0.7, -0.4, 1.3]);
        let got = model.curvature_pairing(&u, &v(&[0.25])).unwrap();
        assert!(vec_max_abs(&(got - v(&[0.25 * -0.4, -0.25 * 0.7, 0.0]))) < 1e-15);

        // abelian g, trivial rho: only ad_m(u)^*(A* p) survives
        let alg = SemidirectAlgebra::direct_product(
            crate::algebra::LieAlgebra::so3(),
            crate::algebra::LieAlgebra::abelian(2).unwrap(),
        );
        let a = Matrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, -0.2, 0.0, 0.8]);
        let p = v(&[0.3, -1.1]);
        let got = curvature_pairing(&alg, &a, &u, &p).unwrap();
        let a_star_p = a.tr_mul(&p);
        for k in 0..3 {
            let bracket = alg.m.bracket(&u, &alg.m.basis(k)).unwrap();
            assert!((got[k] - a_star_p.dot(&bracket)).abs() < 1e-15);
        }
    }

    #[test]
    fn e_map_cases() {
        let sat = presets::satellite_model(&presets::SatelliteParams::reference(0.5)).unwrap();
        assert!((sat.e_map()[(0, 0)] - 2.0).abs() < 1e-15);
        let free = sat.with_gain(Matrix::zeros(1, 3)).unwrap();
        assert_eq!(free.e_map(), &Matrix::identity(1, 1));

        let model = presets::semidirect_dense_model(0.4).unwrap();
        let e = model.e_map();
        let x = model.gain() * model.kk().a0.transpose();
        assert!(max_abs(&(e * model.e_map_inverse() - Matrix::identity(3, 3))) < 1e-12);
        assert!(max_abs(&(e * &x - &x * e)) < 1e-12);
    }

    #[test]
    fn singular_gain_rejected() {
        let sat = presets::satellite_model(&presets::SatelliteParams::reference(0.0)).unwrap();
        // C A0* = -1 makes 1 + C A0* vanish
        let err = sat.with_gain(Matrix::from_row_slice(1, 3, &[0.0, 0.0, -1.0])).unwrap_err();
        assert!(matches!(err, Error::SingularGain { .. }));
    }

    #[test]
    fn j_and_conserved_quantity() {
        let k = 0.5;
        let sat = presets::satellite_model(&presets::SatelliteParams::reference(k)).unwrap();
        let free = sat.with_gain(Matrix::zeros(1, 3)).unwrap();
        let nu = v(&[0.1, 0.2, 0.4]);
        let p = v(&[0.1]);
        assert_eq!(free.j_body(&nu, &p).unwrap(), Vector::zeros(1));
        assert_eq!(free.conserved_quantity_body(&nu, &p).unwrap(), p);

        let j = sat.j_body(&nu, &p).unwrap()[0];
        let want = (-k * 0.4) / (1.0 - k) + k / (1.0 - k) * 0.1;
        assert!((j - want).abs() < 1e-15);
        let q = sat.conserved_quantity_body(&nu, &p).unwrap()[0];
        assert!((q - (-0.2)).abs() < 1e-15);
        assert!((q - (p[0] + j)).abs() < 1e-15);

        // j vanishes on the vertical covectors (A0* p, p)
        for model in presets::all_models() {
            for i in 0..model.dim_g() {
                let p = model.algebra().g.basis(i);
                let nu_c = model.kk().a0.tr_mul(&p);
                assert!(vec_max_abs(&model.j_body(&nu_c, &p).unwrap()) < 1e-14);
            }
        }
    }

    #[test]
    fn coordinate_changes() {
        let sat = presets::satellite_model(&presets::SatelliteParams::reference(0.7)).unwrap();
        let nu = v(&[0.1, 0.2, 0.3]);
        let (nc, pc) = sat.cotangent_from_w(&nu, &v(&[0.5])).unwrap();
        assert_eq!(nc, v(&[0.1, 0.2, 0.8]));
        assert_eq!(pc, v(&[0.5]));
        let (n2, p2) = sat.cotangent_from_w(&nu, &v(&[0.0])).unwrap();
        assert_eq!((n2, p2), (nu.clone(), v(&[0.0])));

        let k = 0.7;
        let pt = sat.phi_j_shift(&nu, &v(&[0.02])).unwrap()[0];
        assert!((pt - (0.02 + k * 0.3 / (1.0 - k))).abs() < 1e-15);
    }

    #[test]
    fn conserved_quantity_in_shifted_coordinates() {
        for model in presets::all_models() {
            let dm = model.dim_m();
            let dg = model.dim_g();
            let nu = Vector::from_fn(dm, |i, _| 0.3 + 0.1 * i as f64);
            let pt = Vector::from_fn(dg, |i, _| -0.2 + 0.15 * i as f64);
            let (nc, pc) = model.cotangent_from_w(&nu, &pt).unwrap();
            let lhs = model.conserved_quantity_body(&nc, &pc).unwrap();
            let rhs = model.phi_j_unshift(&nu, &pt).unwrap();
            assert!(vec_max_abs(&(lhs - rhs)) < 1e-12);
        }
    }

    #[test]
    fn kk_metric_positive_definite_for_presets() {
        for model in presets::all_models() {
            assert!(min_symmetric_eigenvalue(&model.kk().kk_metric()) > 0.0);
        }
    }

    #[test]
    fn gamma_family_relation() {
        let model = presets::semidirect_gamma_model(0.0).unwrap();
        let kk = model.kk();
        assert_eq!(gamma_family_gain(kk, 0.0).unwrap(), Matrix::zeros(3, 3));
        for gamma in [0.2, -0.3, 0.05] {
            let c = gamma_family_gain(kk, gamma).unwrap();
            let e = checked_inverse(&(Matrix::identity(3, 3) + &c * kk.a0.transpose()), "E").unwrap();
            for i in 0..3 {
                let u = model.algebra().m.basis(i);
                let lhs = &e * &c * &kk.mu_m * &u;
                let rhs = &kk.i0 * &kk.a0 * &u * gamma;
                assert!(vec_max_abs(&(lhs - rhs)) < 1e-10);
            }
        }
        let tiny = gamma_family_gain(kk, 1e-6).unwrap();
        assert!(max_abs(&tiny) < 1e-5);
    }

    #[test]
    fn gamma_out_of_range() {
        // scalar case: 1 - gamma i a^2 / mu vanishes at gamma = mu / (i a^2)
        let kk = KkData::new(
            Matrix::from_element(1, 1, 2.0),
            Matrix::from_element(1, 1, 0.5),
            Matrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert!(matches!(
            gamma_family_gain(&kk, 4.0),
            Err(Error::GammaOutOfRange { .. })
        ));
    }

    #[test]
    fn invalid_metric_rejected() {
        let bad = KkData::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            Matrix::identity(1, 1),
            Matrix::zeros(1, 2),
        );
        assert!(matches!(bad, Err(Error::InvalidMetric(_))));
        let indefinite = KkData::new(
            Matrix::from_diagonal(&v(&[1.0, -1.0])),
            Matrix::identity(1, 1),
            Matrix::zeros(1, 2),
        );
        assert!(indefinite.is_err());
        // anisotropic I0 is not invariant under rotations of R^3
        let alg = SemidirectAlgebra::preset("so3_semidirect_r3").unwrap();
        let kk = KkData::new(
            Matrix::identity(3, 3),
            Matrix::from_diagonal(&v(&[1.0, 2.0, 3.0])),
            Matrix::zeros(3, 3),
        )
        .unwrap();
        assert!(SemidirectModel::new(alg, kk, Matrix::zeros(3, 3)).is_err());
    }
}
