//! Rigid satellite with a rotor on its third principal axis, stabilized
//! about the middle axis by rotor feedback `C(Pi) = -k Pi_3`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::algebra::{LieAlgebra, SemidirectAlgebra};
use crate::dynamics::{forced_field, rk4_integrate, ReducedState, System};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{KkData, SemidirectModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SatelliteParams {
    /// Principal moments of the rigid body, kg m^2.
    pub inertia: [f64; 3],
    /// Rotor moments, kg m^2.
    pub rotor: [f64; 3],
    pub k: f64,
}

impl SatelliteParams {
    /// `I = (3, 2, 1)`, `i = (0.3, 0.3, 0.2)`.
    pub fn reference(k: f64) -> Self {
        Self {
            inertia: [3.0, 2.0, 1.0],
            rotor: [0.3, 0.3, 0.2],
            k,
        }
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = k;
        self
    }

    /// `lambda_j = I_j + i_j`.
    pub fn lambda(&self, j: usize) -> f64 {
        self.inertia[j] + self.rotor[j]
    }

    pub fn validate(&self) -> Result<()> {
        let [i1, i2, i3] = self.inertia;
        let [r1, r2, r3] = self.rotor;
        if self.inertia.iter().chain(&self.rotor).any(|x| !x.is_finite()) || !self.k.is_finite() {
            return Err(Error::InvalidParams("parameters must be finite".into()));
        }
        if !(i1 > i2 && i2 > i3 && i3 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need I1 > I2 > I3 > 0, got ({i1}, {i2}, {i3})"
            )));
        }
        if !(r1 == r2 && r2 > r3 && r3 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need i1 = i2 > i3 > 0, got ({r1}, {r2}, {r3})"
            )));
        }
        if self.k == 1.0 {
            return Err(Error::GainPole);
        }
        Ok(())
    }

    /// `nu_e = mu_M (0, omega_bar, 0)`.
    pub fn middle_axis_equilibrium(&self, omega_bar: f64) -> Vector {
        Vector::from_column_slice(&[0.0, self.lambda(1) * omega_bar, 0.0])
    }
}

/// `m = so(3)` in the body frame, `g = R`, trivial representation,
/// `mu_M = diag(lambda1, lambda2, I3)`, `I0 = i3`, `A0 = (0, 0, 1)`,
/// `C = (0, 0, -k)`.
pub fn build_satellite(params: &SatelliteParams) -> Result<SemidirectModel> {
    params.validate()?;
    let algebra = SemidirectAlgebra::direct_product(LieAlgebra::so3_body(), LieAlgebra::abelian(1)?);
    let mu = Matrix::from_diagonal(&Vector::from_column_slice(&[
        params.lambda(0),
        params.lambda(1),
        params.inertia[2],
    ]));
    let kk = KkData::new(
        mu,
        Matrix::from_element(1, 1, params.rotor[2]),
        Matrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
    )?;
    let gain = Matrix::from_row_slice(1, 3, &[0.0, 0.0, -params.k]);
    SemidirectModel::new(algebra, kk, gain)
}

/// Gains `1 - I3/lambda2 < k < 1` stabilize the middle axis.
pub fn stability_window(params: &SatelliteParams) -> (f64, f64) {
    (1.0 - params.inertia[2] / params.lambda(1), 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Linearization {
    pub jacobian: Vec<Vec<f64>>,
    /// (re, im) pairs.
    pub eigenvalues: Vec<(f64, f64)>,
    pub spectral_abscissa: f64,
}

/// Central-difference Jacobian of the closed-loop `nu` field at
/// `nu_e = (0, lambda2 omega_bar, 0)`, `qt = 0`, and its spectrum.
pub fn linearize_middle_axis(params: &SatelliteParams, omega_bar: f64) -> Result<Linearization> {
    if omega_bar == 0.0 || !omega_bar.is_finite() {
        return Err(Error::InvalidParams("omega_bar must be nonzero".into()));
    }
    let model = build_satellite(params)?;
    let nu_e = params.middle_axis_equilibrium(omega_bar);
    let qt = Vector::zeros(1);
    let scale = nu_e.norm();
    let h = 1e-6 * scale;
    let mut jac = Matrix::zeros(3, 3);
    for j in 0..3 {
        let mut plus = nu_e.clone();
        let mut minus = nu_e.clone();
        plus[j] += h;
        minus[j] -= h;
        let fp = forced_field(&model, &ReducedState::new(plus, qt.clone()))?.nu_dot;
        let fm = forced_field(&model, &ReducedState::new(minus, qt.clone()))?.nu_dot;
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    let eig = jac.complex_eigenvalues();
    let eigenvalues: Vec<(f64, f64)> = eig.iter().map(|z| (z.re, z.im)).collect();
    let spectral_abscissa = eigenvalues.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(Linearization {
        jacobian: crate::linalg::to_rows(&jac),
        eigenvalues,
        spectral_abscissa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoOptions {
    pub dt: f64,
    pub omega_bar: f64,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            dt: 5e-3,
            omega_bar: 1.0,
            seed: 0x5a7e_111e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemoOutcome {
    pub bounded: bool,
    pub max_excursion: f64,
}

pub fn stabilization_demo(
    params: &SatelliteParams,
    k: f64,
    perturbation: f64,
    t_end: f64,
) -> Result<DemoOutcome> {
    stabilization_demo_with(params, k, perturbation, t_end, &DemoOptions::default())
}

/// Integrates the closed loop from `nu_e + perturbation * n` (random unit `n`)
/// with `qt = 0`. Bounded means the distance to `nu_e` never exceeds ten
/// times the perturbation.
pub fn stabilization_demo_with(
    params: &SatelliteParams,
    k: f64,
    perturbation: f64,
    t_end: f64,
    opts: &DemoOptions,
) -> Result<DemoOutcome> {
    let params = params.with_k(k);
    let model = build_satellite(&params)?;
    let nu_e = params.middle_axis_equilibrium(opts.omega_bar);
    if perturbation > 0.05 * nu_e.norm() {
        return Err(Error::InvalidParams(format!(
            "perturbation {perturbation} exceeds 5% of |nu_e|"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dir = loop {
        let d = Vector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
        if d.norm() > 1e-8 {
            break d.normalize();
        }
    };
    let start = ReducedState::new(&nu_e + dir * perturbation, Vector::zeros(1));
    let traj = match rk4_integrate(&System::Forced(&model), start, opts.dt, t_end) {
        Ok(t) => t,
        Err(Error::BlowUp { .. }) => {
            return Ok(DemoOutcome {
                bounded: false,
                max_excursion: f64::INFINITY,
            })
        }
        Err(e) => return Err(e),
    };
    let max_excursion = traj
        .states
        .iter()
        .map(|s| (&s.nu - &nu_e).norm())
        .fold(0.0, f64::max);
    Ok(DemoOutcome {
        bounded: max_excursion <= 10.0 * perturbation.max(f64::MIN_POSITIVE),
        max_excursion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilitySample {
    pub k: f64,
    pub spectral_abscissa: f64,
    pub bounded: bool,
    pub max_excursion: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn reference_build() {
        let p = SatelliteParams::reference(0.0);
        assert!((p.lambda(0) - 3.3).abs() < 1e-15);
        assert!((p.lambda(1) - 2.3).abs() < 1e-15);
        assert!((p.lambda(2) - 1.2).abs() < 1e-15);
        let model = build_satellite(&p).unwrap();
        let want = Matrix::from_diagonal(&Vector::from_column_slice(&[3.3, 2.3, 1.0]));
        assert!(max_abs(&(model.kk().mu_m.clone() - want)) < 1e-15);
        assert_eq!(model.gain(), &Matrix::zeros(1, 3));
    }

    #[test]
    fn invalid_params_named() {
        let mut p = SatelliteParams::reference(0.5);
        p.inertia = [2.0, 3.0, 1.0];
        let msg = build_satellite(&p).unwrap_err().to_string();
        assert!(msg.contains("I1 > I2 > I3"), "{msg}");
        let mut p = SatelliteParams::reference(0.5);
        p.rotor = [0.3, 0.2, 0.1];
        assert!(build_satellite(&p).unwrap_err().to_string().contains("i1 = i2 > i3"));
        assert!(matches!(
            build_satellite(&SatelliteParams::reference(1.0)),
            Err(Error::GainPole)
        ));
    }

    #[test]
    fn window() {
        let (lo, hi) = stability_window(&SatelliteParams::reference(0.0));
        assert!((lo - (1.0 - 1.0 / 2.3)).abs() < 1e-15);
        assert!((lo - 0.565217).abs() < 1e-6);
        assert_eq!(hi, 1.0);
        // I3 -> lambda2
        let p = SatelliteParams {
            inertia: [3.0, 2.0, 1.999_999],
            rotor: [0.0001, 0.0001, 0.000_05],
            k: 0.0,
        };
        assert!(stability_window(&p).0 < 1e-3);
        // vanishing rotor: lower edge 1 - I3/I2
        let p = SatelliteParams {
            inertia: [3.0, 2.0, 1.0],
            rotor: [1e-12, 1e-12, 5e-13],
            k: 0.0,
        };
        assert!((stability_window(&p).0 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn uncontrolled_middle_axis_is_a_saddle() {
        let lin = linearize_middle_axis(&SatelliteParams::reference(0.0), 1.0).unwrap();
        let positive_real = lin
            .eigenvalues
            .iter()
            .filter(|(re, im)| *re > 1e-3 && im.abs() < 1e-9)
            .count();
        assert_eq!(positive_real, 1);
        // classical rate sqrt((l2 - l1)(I3 - l2) / (l1 I3)) at omega = 1
        let want = ((2.3f64 - 3.3) * (1.0 - 2.3) / (3.3 * 1.0)).sqrt();
        assert!((lin.spectral_abscissa - want).abs() < 1e-6);
    }

    #[test]
    fn controlled_middle_axis_is_a_center() {
        for k in [0.6, 0.75, 0.9] {
            let lin = linearize_middle_axis(&SatelliteParams::reference(k), 1.0).unwrap();
            assert!(lin.spectral_abscissa <= 1e-7, "k = {k}: {:?}", lin.eigenvalues);
        }
    }

    #[test]
    fn eigenvalues_scale_with_omega() {
        let p = SatelliteParams::reference(0.3);
        let a = linearize_middle_axis(&p, 1.0).unwrap().spectral_abscissa;
        let b = linearize_middle_axis(&p, 2.5).unwrap().spectral_abscissa;
        assert!((b - 2.5 * a).abs() < 1e-6);
    }

    #[test]
    fn unperturbed_demo_stays_put() {
        let out = stabilization_demo(&SatelliteParams::reference(0.0), 0.0, 0.0, 10.0).unwrap();
        assert!(out.max_excursion <= 1e-8);
    }

    #[test]
    fn boundedness_flips_at_the_lower_window_edge() {
        let p = SatelliteParams::reference(0.0);
        let (lo, _) = stability_window(&p);
        assert!(!stabilization_demo(&p, lo - 0.025, 1e-3, 200.0).unwrap().bounded);
        assert!(stabilization_demo(&p, lo + 0.025, 1e-3, 200.0).unwrap().bounded);
    }
}
