//! Matching of the symmetry-actuated closed loop with a controlled
//! Kaluza-Klein system on the same semidirect product.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{checked_inverse, max_abs, symmetry_defect, to_rows, vec_max_abs, Matrix, Vector};
use crate::model::{curvature_pairing, SemidirectModel};

pub const DEFAULT_MATCHING_TOL: f64 = 1e-10;
const EQUIVARIANCE_TOL: f64 = 1e-10;
const SYMMETRY_WARN_TOL: f64 = 1e-10;

/// Target data of the controlled system.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledData {
    pub mu_c: Matrix,
    pub i_c: Matrix,
    pub a_c: Matrix,
    /// `(1 + A0* C)^-1`, maps the closed-loop `nu` to the controlled `mu`.
    pub phi_c: Matrix,
    pub s: Matrix,
    mu_c_inv: Matrix,
    i_c_inv: Matrix,
    s_inv: Matrix,
}

impl ControlledData {
    pub fn mu_c_inv(&self) -> &Matrix {
        &self.mu_c_inv
    }

    pub fn i_c_inv(&self) -> &Matrix {
        &self.i_c_inv
    }

    pub fn s_inv(&self) -> &Matrix {
        &self.s_inv
    }

    /// Asymmetry of `mu_C`; reported, never silently symmetrized.
    pub fn mu_c_asymmetry(&self) -> f64 {
        symmetry_defect(&self.mu_c)
    }

    pub fn has_asymmetry_warning(&self) -> bool {
        self.mu_c_asymmetry() > SYMMETRY_WARN_TOL
    }

    /// `½<mu, mu_C^-1 mu> + ½<r, I_C^-1 r>`.
    pub fn hamiltonian(&self, mu: &Vector, r: &Vector) -> f64 {
        0.5 * mu.dot(&(&self.mu_c_inv * mu)) + 0.5 * r.dot(&(&self.i_c_inv * r))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairResidual {
    pub u_index: usize,
    pub nu_index: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct MatchingReport {
    pub residual: f64,
    pub tolerance: f64,
    pub satisfied: bool,
    pub pairs: Vec<PairResidual>,
    pub controlled: Option<ControlledData>,
    pub residual_force_norm: Option<f64>,
}

impl MatchingReport {
    pub fn to_json(&self) -> serde_json::Value {
        let mut out = serde_json::json!({
            "residual": self.residual,
            "tolerance": self.tolerance,
            "satisfied": self.satisfied,
            "pairs": self.pairs,
        });
        let obj = out.as_object_mut().expect("object");
        let cd = self.controlled.as_ref();
        let rows = |f: fn(&ControlledData) -> &Matrix| cd.map(|c| to_rows(f(c)));
        obj.insert("mu_C".into(), serde_json::json!(rows(|c| &c.mu_c)));
        obj.insert("I_C".into(), serde_json::json!(rows(|c| &c.i_c)));
        obj.insert("A_C".into(), serde_json::json!(rows(|c| &c.a_c)));
        obj.insert("S".into(), serde_json::json!(rows(|c| &c.s)));
        obj.insert("phi_C".into(), serde_json::json!(rows(|c| &c.phi_c)));
        obj.insert("mu_C_asymmetry".into(), serde_json::json!(cd.map(|c| c.mu_c_asymmetry())));
        obj.insert("residual_force_norm".into(), serde_json::json!(self.residual_force_norm));
        out
    }
}

/// `|A0 e_i ⋄ E C e_j|_inf` over all basis pairs.
pub fn matching_pairs(model: &SemidirectModel) -> Result<Vec<PairResidual>> {
    let alg = model.algebra();
    let mut pairs = Vec::with_capacity(model.dim_m() * model.dim_m());
    for i in 0..model.dim_m() {
        let au = &model.kk().a0 * alg.m.basis(i);
        for j in 0..model.dim_m() {
            let shifted = model.shift(&alg.m.basis(j))?;
            let d = alg.rep.diamond(&au, &shifted)?;
            pairs.push(PairResidual {
                u_index: i,
                nu_index: j,
                residual: vec_max_abs(&d),
            });
        }
    }
    Ok(pairs)
}

/// Sup over basis pairs of the matching defect `A0 u ⋄ (1 + C A0*)^-1 C nu`.
/// By bilinearity it vanishes identically iff it vanishes here.
pub fn matching_residual(model: &SemidirectModel) -> Result<f64> {
    Ok(matching_pairs(model)?
        .iter()
        .fold(0.0, |m, p| m.max(p.residual)))
}

/// Max commutator of `S` with `ad(Y)^*` and `rho_*^u` over basis vectors.
pub fn equivariance_residual(model: &SemidirectModel, s: &Matrix) -> Result<f64> {
    let alg = model.algebra();
    check_dim("S rows", model.dim_g(), s.nrows())?;
    check_dim("S columns", model.dim_g(), s.ncols())?;
    let mut worst: f64 = 0.0;
    for j in 0..model.dim_g() {
        let ad_star = alg.g.ad_matrix(&alg.g.basis(j))?.transpose();
        worst = worst.max(max_abs(&(s * &ad_star - &ad_star * s)));
    }
    for a in 0..model.dim_m() {
        let rho_star = alg.rep.rho_star_matrix(&alg.m.basis(a))?;
        worst = worst.max(max_abs(&(s * &rho_star - &rho_star * s)));
    }
    Ok(worst)
}

/// Evaluates the controlled data
/// `mu_C = (1 + A0* C)^-1 mu_M`, `I_C = S I0`,
/// `A_C = A0 + I0^-1 C (1 + A0* C)^-1 mu_M`.
pub fn synthesize_controlled(model: &SemidirectModel, s: &Matrix) -> Result<ControlledData> {
    let eq = equivariance_residual(model, s)?;
    if eq > EQUIVARIANCE_TOL {
        return Err(Error::NonEquivariant { residual: eq });
    }
    let s_inv = checked_inverse(s, "S")?;
    let kk = model.kk();
    let c = model.gain();
    let dm = model.dim_m();
    let one_plus = Matrix::identity(dm, dm) + kk.a0.transpose() * c;
    let phi_c = checked_inverse(&one_plus, "1 + A0* C")?;
    let mu_c = &phi_c * &kk.mu_m;
    let i_c = s * &kk.i0;
    let a_c = &kk.a0 + model.i0_inv() * c * &phi_c * &kk.mu_m;
    let mu_c_inv = checked_inverse(&mu_c, "mu_C")?;
    let i_c_inv = checked_inverse(&i_c, "I_C")?;
    Ok(ControlledData {
        mu_c,
        i_c,
        a_c,
        phi_c,
        s: s.clone(),
        mu_c_inv,
        i_c_inv,
        s_inv,
    })
}

/// `f_k = (I0 - k lambda3) / (I0 (1 - k))`, the factor with `A_C = f_k A0`
/// on the satellite.
pub fn f_k_factor(i0: f64, lambda3: f64, k: f64) -> Result<f64> {
    if k == 1.0 {
        return Err(Error::GainPole);
    }
    if i0.is_nan() || i0 <= 0.0 {
        return Err(Error::InvalidParams(format!("I0 must be positive, got {i0}")));
    }
    Ok((i0 - k * lambda3) / (i0 * (1.0 - k)))
}

/// `<r, Curv^{A_C}(u)> - <S^-1 r, Curv^{A0}(u)>`.
pub fn residual_force(
    model: &SemidirectModel,
    cd: &ControlledData,
    u: &Vector,
    r: &Vector,
) -> Result<Vector> {
    let alg = model.algebra();
    let controlled = curvature_pairing(alg, &cd.a_c, u, r)?;
    let original = curvature_pairing(alg, &model.kk().a0, u, &(cd.s_inv() * r))?;
    Ok(controlled - original)
}

/// Sup norm of the residual force over basis pairs `(e_a, f_j*)`.
pub fn residual_force_norm(model: &SemidirectModel, cd: &ControlledData) -> Result<f64> {
    let alg = model.algebra();
    let mut worst: f64 = 0.0;
    for a in 0..model.dim_m() {
        for j in 0..model.dim_g() {
            let f = residual_force(model, cd, &alg.m.basis(a), &alg.g.basis(j))?;
            worst = worst.max(vec_max_abs(&f));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct ScalarChoice {
    pub s: Matrix,
    pub scale: f64,
    pub residual: f64,
}

/// Picks `S = s Id` minimizing the residual force over the scalar family.
///
/// The residual force is affine in `t = 1/s`:
/// `F(u, r) = Curv^{A_C}(u, r) - t Curv^{A0}(u, r)`, so the least-squares `t`
/// over basis samples is closed form. Falls back to `s = 1` when the optimum
/// would be `t = 0` (no finite `S`).
pub fn choose_s(model: &SemidirectModel) -> Result<ScalarChoice> {
    let alg = model.algebra();
    let dm = model.dim_m();
    let dg = model.dim_g();
    let phi_c = checked_inverse(
        &(Matrix::identity(dm, dm) + model.kk().a0.transpose() * model.gain()),
        "1 + A0* C",
    )?;
    let a_c = &model.kk().a0 + model.i0_inv() * model.gain() * &phi_c * &model.kk().mu_m;
    let mut samples = Vec::with_capacity(dm * dg);
    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..dm {
        for j in 0..dg {
            let (u, r) = (alg.m.basis(a), alg.g.basis(j));
            let ctrl = curvature_pairing(alg, &a_c, &u, &r)?;
            let orig = curvature_pairing(alg, &model.kk().a0, &u, &r)?;
            num += ctrl.dot(&orig);
            den += orig.dot(&orig);
            samples.push((ctrl, orig));
        }
    }
    let t = if den > 0.0 { num / den } else { 1.0 };
    let t = if t.abs() > f64::EPSILON { t } else { 1.0 };
    let residual = samples
        .iter()
        .fold(0.0, |m: f64, (c, o)| m.max(vec_max_abs(&(c - o * t))));
    let scale = 1.0 / t;
    Ok(ScalarChoice {
        s: Matrix::identity(dg, dg) * scale,
        scale,
        residual,
    })
}

/// Runs the matching check and, when satisfied, synthesizes the controlled
/// data with the scalar `S` from [`choose_s`].
pub fn matching_report(model: &SemidirectModel, tolerance: f64) -> Result<MatchingReport> {
    let pairs = matching_pairs(model)?;
    let residual = pairs.iter().fold(0.0_f64, |m, p| m.max(p.residual));
    let satisfied = residual <= tolerance;
    let (controlled, residual_force_norm) = if satisfied {
        let choice = choose_s(model)?;
        let cd = synthesize_controlled(model, &choice.s)?;
        let norm = residual_force_norm(model, &cd)?;
        (Some(cd), Some(norm))
    } else {
        (None, None)
    };
    Ok(MatchingReport {
        residual,
        tolerance,
        satisfied,
        pairs,
        controlled,
        residual_force_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumGates {
    pub uncontrolled_residual: f64,
    pub controlled_residual: f64,
    pub gate_c: f64,
}

/// `|ad(mu_M^-1 nu_e)^* nu_e|`, `|ad(mu_C^-1 nu_e)^* nu_e|` and `|C nu_e|`.
/// `C nu_e = 0` is sufficient for the equilibrium to persist under control.
pub fn equilibrium_gates(
    model: &SemidirectModel,
    cd: &ControlledData,
    nu_e: &Vector,
) -> Result<EquilibriumGates> {
    check_dim("equilibrium nu", model.dim_m(), nu_e.len())?;
    let m = &model.algebra().m;
    let uncontrolled = m.ad_star(&(model.mu_inv() * nu_e), nu_e)?;
    let controlled = m.ad_star(&(cd.mu_c_inv() * nu_e), nu_e)?;
    Ok(EquilibriumGates {
        uncontrolled_residual: vec_max_abs(&uncontrolled),
        controlled_residual: vec_max_abs(&controlled),
        gate_c: vec_max_abs(&(model.gain() * nu_e)),
    })
}
