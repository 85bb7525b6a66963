//! Built-in models used by the CLI, the tests and the bindings.

use crate::algebra::SemidirectAlgebra;
use crate::error::Result;
use crate::linalg::{Matrix, Vector};
use crate::model::{gamma_family_gain, KkData, SemidirectModel};

pub use crate::satellite::{build_satellite as satellite_model, SatelliteParams};

fn semidirect_kk(a0: Matrix) -> Result<KkData> {
    KkData::new(
        Matrix::from_diagonal(&Vector::from_column_slice(&[2.0, 1.5, 1.0])),
        Matrix::identity(3, 3) * 0.5,
        a0,
    )
}

/// Rank-one connection `A0 u = a <b, u>` on so(3) ⋉ R^3.
pub fn rank_one_a0() -> Matrix {
    let a = Vector::from_column_slice(&[0.0, 0.6, 0.8]);
    let b = Vector::from_column_slice(&[0.5, 0.3, 1.0]);
    &a * b.transpose()
}

pub fn dense_a0() -> Matrix {
    Matrix::from_row_slice(3, 3, &[0.4, 0.1, -0.2, 0.0, 0.5, 0.3, 0.2, -0.1, 0.6])
}

/// so(3) ⋉ R^3 with rank-one `A0`, scalar `I0` and the gamma-family gain.
pub fn semidirect_gamma_model(gamma: f64) -> Result<SemidirectModel> {
    let kk = semidirect_kk(rank_one_a0())?;
    let gain = gamma_family_gain(&kk, gamma)?;
    SemidirectModel::new(SemidirectAlgebra::preset("so3_semidirect_r3")?, kk, gain)
}

/// so(3) ⋉ R^3 with full-rank `A0` and a dense gain scaled by `scale`;
/// violates the matching condition for `scale != 0`.
pub fn semidirect_dense_model(scale: f64) -> Result<SemidirectModel> {
    let kk = semidirect_kk(dense_a0())?;
    let gain = Matrix::from_row_slice(3, 3, &[0.3, -0.5, 0.2, 0.6, 0.1, -0.4, -0.2, 0.7, 0.5]) * scale;
    SemidirectModel::new(SemidirectAlgebra::preset("so3_semidirect_r3")?, kk, gain)
}

/// SO(3) x SO(3) with a nonabelian structure group and scalar gain.
pub fn so3_pair_model(gamma: f64) -> Result<SemidirectModel> {
    let kk = KkData::new(
        Matrix::from_diagonal(&Vector::from_column_slice(&[2.0, 1.5, 1.0])),
        Matrix::identity(3, 3) * 0.8,
        Matrix::from_row_slice(3, 3, &[0.3, 0.0, 0.1, 0.0, 0.2, 0.0, -0.1, 0.0, 0.4]),
    )?;
    let gain = gamma_family_gain(&kk, gamma)?;
    SemidirectModel::new(SemidirectAlgebra::preset("so3")?, kk, gain)
}

/// One instance of every preset family.
pub fn all_models() -> Vec<SemidirectModel> {
    vec![
        satellite_model(&SatelliteParams::reference(0.7)).expect("satellite preset"),
        semidirect_gamma_model(0.2).expect("gamma preset"),
        semidirect_dense_model(0.4).expect("dense preset"),
        so3_pair_model(0.1).expect("so3 pair preset"),
    ]
}

/// Named model presets accepted by the CLI.
pub fn named(name: &str, parameter: f64) -> Option<Result<SemidirectModel>> {
    match name {
        "satellite" => Some(satellite_model(&SatelliteParams::reference(parameter))),
        "semidirect_gamma" => Some(semidirect_gamma_model(parameter)),
        "semidirect_dense" => Some(semidirect_dense_model(parameter)),
        "so3_pair" => Some(so3_pair_model(parameter)),
        _ => None,
    }
}
