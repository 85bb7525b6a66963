//! Python bindings: satellite parameters, models, matching and simulation.
//! Matrices cross the boundary as lists of rows, vectors as lists.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use symact::dynamics::{rk4_integrate, ReducedState, System};
use symact::matching::{self, DEFAULT_MATCHING_TOL};
use symact::{presets, satellite, Error, SemidirectModel};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::BlowUp { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type Rows = Vec<Vec<f64>>;
type Sampled = (Vec<f64>, Rows, Rows, Rows, Vec<f64>);

fn rows(m: &DMatrix<f64>) -> Rows {
    symact::linalg::to_rows(m)
}

/// Satellite with a rotor; inertia and rotor moments in kg m^2.
#[pyclass(name = "SatelliteParams", from_py_object)]
#[derive(Clone)]
struct PySatelliteParams {
    inner: satellite::SatelliteParams,
}

#[pymethods]
impl PySatelliteParams {
    #[new]
    #[pyo3(signature = (k, inertia = [3.0, 2.0, 1.0], rotor = [0.3, 0.3, 0.2]))]
    fn new(k: f64, inertia: [f64; 3], rotor: [f64; 3]) -> PyResult<Self> {
        let inner = satellite::SatelliteParams { inertia, rotor, k };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn k(&self) -> f64 {
        self.inner.k
    }

    #[getter]
    fn inertia(&self) -> [f64; 3] {
        self.inner.inertia
    }

    #[getter]
    fn rotor(&self) -> [f64; 3] {
        self.inner.rotor
    }

    fn stability_window(&self) -> (f64, f64) {
        satellite::stability_window(&self.inner)
    }

    /// Spectral abscissa of the middle-axis linearization.
    #[pyo3(signature = (omega_bar = 1.0))]
    fn spectral_abscissa(&self, omega_bar: f64) -> PyResult<f64> {
        satellite::linearize_middle_axis(&self.inner, omega_bar)
            .map(|l| l.spectral_abscissa)
            .map_err(to_py)
    }

    /// `(bounded, max_excursion)` of the stabilization run.
    fn stabilization_demo(&self, perturbation: f64, t_end: f64) -> PyResult<(bool, f64)> {
        satellite::stabilization_demo(&self.inner, self.inner.k, perturbation, t_end)
            .map(|d| (d.bounded, d.max_excursion))
            .map_err(to_py)
    }

    fn model(&self) -> PyResult<PyModel> {
        presets::satellite_model(&self.inner)
            .map(|inner| PyModel { inner })
            .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("SatelliteParams(k={}, inertia={:?}, rotor={:?})", p.k, p.inertia, p.rotor)
    }
}

/// Closed-loop model on a semidirect product.
#[pyclass(name = "Model")]
struct PyModel {
    inner: SemidirectModel,
}

#[pymethods]
impl PyModel {
    /// Named preset: satellite (k), semidirect_gamma (gamma),
    /// semidirect_dense (scale) or so3_pair (gamma).
    #[staticmethod]
    fn preset(name: &str, parameter: f64) -> PyResult<Self> {
        presets::named(name, parameter)
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))?
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn dim_m(&self) -> usize {
        self.inner.dim_m()
    }

    #[getter]
    fn dim_g(&self) -> usize {
        self.inner.dim_g()
    }

    #[getter]
    fn gain(&self) -> Rows {
        rows(self.inner.gain())
    }

    fn matching_residual(&self) -> PyResult<f64> {
        matching::matching_residual(&self.inner).map_err(to_py)
    }

    /// Matching report as a JSON string.
    #[pyo3(signature = (tolerance = DEFAULT_MATCHING_TOL))]
    fn matching_report(&self, tolerance: f64) -> PyResult<String> {
        matching::matching_report(&self.inner, tolerance)
            .map(|r| r.to_json().to_string())
            .map_err(to_py)
    }

    /// `(mu_C, I_C, A_C, S)` for the scalar `S` minimizing the residual force.
    fn controlled_data(&self) -> PyResult<(Rows, Rows, Rows, Rows)> {
        let s = matching::choose_s(&self.inner).map_err(to_py)?.s;
        let cd = matching::synthesize_controlled(&self.inner, &s).map_err(to_py)?;
        Ok((rows(&cd.mu_c), rows(&cd.i_c), rows(&cd.a_c), rows(&s)))
    }

    /// Integrates the closed loop with RK4. Returns `(times, nu, qt,
    /// conserved, energy)`, one entry per sample.
    #[pyo3(signature = (nu0, qt0, dt, t_end, track_group = false))]
    fn simulate(
        &self,
        py: Python<'_>,
        nu0: Vec<f64>,
        qt0: Vec<f64>,
        dt: f64,
        t_end: f64,
        track_group: bool,
    ) -> PyResult<Sampled> {
        let mut state = ReducedState::new(DVector::from_vec(nu0), DVector::from_vec(qt0));
        if track_group {
            state = state.with_identity_group(self.inner.algebra()).map_err(to_py)?;
        }
        let model = &self.inner;
        let traj = py
            .detach(|| rk4_integrate(&System::Forced(model), state, dt, t_end))
            .map_err(to_py)?;
        let col = |v: &DVector<f64>| v.iter().copied().collect::<Vec<_>>();
        Ok((
            traj.times.clone(),
            traj.states.iter().map(|s| col(&s.nu)).collect(),
            traj.states.iter().map(|s| col(&s.qt)).collect(),
            traj.conserved.iter().map(col).collect(),
            traj.energy.clone(),
        ))
    }
}

#[pyfunction]
fn f_k_factor(i0: f64, lambda3: f64, k: f64) -> PyResult<f64> {
    matching::f_k_factor(i0, lambda3, k).map_err(to_py)
}

#[pymodule]
fn symact_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySatelliteParams>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(f_k_factor, m)?)?;
    Ok(())
}
