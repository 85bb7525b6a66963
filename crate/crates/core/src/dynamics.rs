//! Closed-loop (forced) and controlled reduced vector fields, their
//! deterministic and Stratonovich integrators, and the conservation monitors.
//!
//! The closed-loop state is `(nu, qt)`: `qt` is the body form of the spatially
//! fixed covector `J + j`, so it evolves by pure transport, and the vertical
//! momentum `p = qt - E C nu` is derived on demand.

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{hat, so3_log, SemidirectAlgebra};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{is_finite, polar_project, vec_max_abs, Matrix, Vector};
use crate::matching::{residual_force, ControlledData};
use crate::model::{curvature_pairing, SemidirectModel};

/// Group element tracked for reconstructing spatial quantities.
///
/// `phi` is a 3x3 rotation when `m` is so(3), or a column of torus
/// coordinates when `m` is abelian. `g` is a 3x3 rotation when `g` is so(3)
/// and absent when `g` is abelian (its coadjoint action is trivial).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTrack {
    pub phi: Matrix,
    pub g: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub nu: Vector,
    pub qt: Vector,
    pub group: Option<GroupTrack>,
}

impl ReducedState {
    pub fn new(nu: Vector, qt: Vector) -> Self {
        Self {
            nu,
            qt,
            group: None,
        }
    }

    /// Same momenta, group element at the identity.
    pub fn with_identity_group(mut self, algebra: &SemidirectAlgebra) -> Result<Self> {
        let kinds = GroupKinds::of(algebra)?;
        self.group = Some(kinds.identity());
        Ok(self)
    }

    fn combined(&self, terms: &[(&StateRate, f64)]) -> ReducedState {
        let mut out = self.clone();
        for (rate, c) in terms {
            out.nu.axpy(*c, &rate.nu, 1.0);
            out.qt.axpy(*c, &rate.qt, 1.0);
            if let (Some(g), Some(r)) = (out.group.as_mut(), rate.group.as_ref()) {
                g.phi += &r.phi * *c;
                if let (Some(gg), Some(rg)) = (g.g.as_mut(), r.g.as_ref()) {
                    *gg += rg * *c;
                }
            }
        }
        out
    }

    fn is_finite(&self) -> bool {
        is_finite(&self.nu)
            && is_finite(&self.qt)
            && self.group.as_ref().is_none_or(|g| {
                g.phi.iter().all(|x| x.is_finite())
                    && g.g.as_ref().is_none_or(|m| m.iter().all(|x| x.is_finite()))
            })
    }

    pub fn orthogonality_defect(&self) -> f64 {
        let defect = |m: &Matrix| {
            if m.nrows() == 3 && m.ncols() == 3 {
                crate::linalg::max_abs(&(m.transpose() * m - Matrix::identity(3, 3)))
            } else {
                0.0
            }
        };
        self.group.as_ref().map_or(0.0, |g| {
            defect(&g.phi).max(g.g.as_ref().map_or(0.0, defect))
        })
    }
}

#[derive(Debug, Clone)]
struct GroupRate {
    phi: Matrix,
    g: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct StateRate {
    pub nu: Vector,
    pub qt: Vector,
    group: Option<GroupRate>,
}

/// Value of a reduced vector field together with the group velocity it
/// induces.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEval {
    pub nu_dot: Vector,
    pub qt_dot: Vector,
    /// Velocity `(u, Y)` in `m x g`.
    pub u: Vector,
    pub y: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MKind {
    Rotation { orientation: f64 },
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum GKind {
    Rotation,
    Abelian,
}

#[derive(Debug, Clone, Copy)]
struct GroupKinds {
    m: MKind,
    g: GKind,
    dim_m: usize,
}

impl GroupKinds {
    fn of(alg: &SemidirectAlgebra) -> Result<Self> {
        let m = if let Some(orientation) = alg.m.so3_orientation() {
            if orientation < 0.0 && !alg.rep.is_trivial() {
                return Err(Error::NoGroupTracking(
                    "body-frame so(3) with a nontrivial representation".into(),
                ));
            }
            MKind::Rotation { orientation }
        } else if alg.m.is_abelian() {
            MKind::Torus
        } else {
            return Err(Error::NoGroupTracking(
                "shape algebra is neither so(3) nor abelian".into(),
            ));
        };
        let g = if alg.g.is_abelian() {
            GKind::Abelian
        } else if alg.g.so3_orientation() == Some(1.0) {
            GKind::Rotation
        } else {
            return Err(Error::NoGroupTracking(
                "structure algebra is neither so(3) nor abelian".into(),
            ));
        };
        Ok(Self {
            m,
            g,
            dim_m: alg.dim_m(),
        })
    }

    fn identity(&self) -> GroupTrack {
        GroupTrack {
            phi: match self.m {
                MKind::Rotation { .. } => Matrix::identity(3, 3),
                MKind::Torus => Matrix::zeros(self.dim_m, 1),
            },
            g: match self.g {
                GKind::Rotation => Some(Matrix::identity(3, 3)),
                GKind::Abelian => None,
            },
        }
    }
}

fn hat_dyn(w: &Vector) -> Matrix {
    let h = hat(&nalgebra::Vector3::new(w[0], w[1], w[2]));
    Matrix::from_fn(3, 3, |i, j| h[(i, j)])
}

/// Group-level `rho^phi` on `g`, from `rho^{exp w} = exp(rho^w)`.
fn rho_group(alg: &SemidirectAlgebra, kinds: &GroupKinds, phi: &Matrix) -> Result<Matrix> {
    if alg.rep.is_trivial() {
        return Ok(Matrix::identity(alg.dim_g(), alg.dim_g()));
    }
    let w = match kinds.m {
        MKind::Rotation { .. } => {
            let r = Matrix3::from_fn(|i, j| phi[(i, j)]);
            let l = so3_log(&r);
            Vector::from_column_slice(&[l.x, l.y, l.z])
        }
        MKind::Torus => phi.column(0).into_owned(),
    };
    Ok(alg.rep.rho_matrix(&w)?.exp())
}

fn group_rate(
    alg: &SemidirectAlgebra,
    kinds: &GroupKinds,
    group: &GroupTrack,
    u: &Vector,
    y: &Vector,
) -> Result<GroupRate> {
    // right-trivialized: (phi, g)' = (u phi, (rho^phi Y) g)
    let phi = match kinds.m {
        MKind::Rotation { orientation } if orientation > 0.0 => hat_dyn(u) * &group.phi,
        // body frame: phi' = phi hat(u)
        MKind::Rotation { .. } => &group.phi * hat_dyn(u),
        MKind::Torus => Matrix::from_column_slice(u.len(), 1, u.as_slice()),
    };
    let g = match (&group.g, kinds.g) {
        (Some(g), GKind::Rotation) => {
            let spatial_y = rho_group(alg, kinds, &group.phi)? * y;
            Some(hat_dyn(&spatial_y) * g)
        }
        _ => None,
    };
    Ok(GroupRate { phi, g })
}

fn reproject(group: &mut GroupTrack, kinds: &GroupKinds) {
    if matches!(kinds.m, MKind::Rotation { .. }) {
        group.phi = polar_project(&group.phi);
    }
    if let Some(g) = group.g.as_mut() {
        *g = polar_project(g);
    }
}

/// Spatial covector `Ad(g)^* rho_*^phi qt`.
fn reconstruct(
    alg: &SemidirectAlgebra,
    kinds: &GroupKinds,
    group: &GroupTrack,
    qt: &Vector,
) -> Result<Vector> {
    let rho = rho_group(alg, kinds, &group.phi)?;
    // rho_*^phi = (rho^{phi^-1})^* = (rho^phi)^{-*}
    let body_to_rep = rho
        .transpose()
        .lu()
        .solve(qt)
        .ok_or_else(|| Error::NoGroupTracking("rho^phi is singular".into()))?;
    Ok(match &group.g {
        Some(g) => g.tr_mul(&body_to_rep),
        None => body_to_rep,
    })
}

/// Closed-loop field `X^j + F^j` in `(nu, qt)` coordinates.
pub fn forced_field(model: &SemidirectModel, state: &ReducedState) -> Result<FieldEval> {
    check_dim("state nu", model.dim_m(), state.nu.len())?;
    check_dim("state qt", model.dim_g(), state.qt.len())?;
    let alg = model.algebra();
    let kk = model.kk();
    let nu = &state.nu;
    let u = model.mu_inv() * nu;
    let shift = model.shift(nu)?;
    let pt = &state.qt - &shift;
    let y = model.i0_inv() * &pt - &kk.a0 * &u;
    let x2 = -alg.m.ad_star(&u, nu)? - curvature_pairing(alg, &kk.a0, &u, &pt)?;
    let generator = alg.transport_generator(&u, &y)?;
    let inner = &generator * &shift + model.e_map() * (model.gain() * &x2);
    let f2 = kk.a0.tr_mul(&(model.e_map_inverse() * inner));
    let qt_dot = alg.transport_rate(&u, &y, &state.qt)?;
    Ok(FieldEval {
        nu_dot: x2 + f2,
        qt_dot,
        u,
        y,
    })
}

/// The force part `F_2^j` alone, for checking that it vanishes when `C = 0`.
pub fn symmetry_actuating_force(model: &SemidirectModel, state: &ReducedState) -> Result<Vector> {
    let alg = model.algebra();
    let kk = model.kk();
    let u = model.mu_inv() * &state.nu;
    let shift = model.shift(&state.nu)?;
    let pt = &state.qt - &shift;
    let y = model.i0_inv() * &pt - &kk.a0 * &u;
    let x2 = -alg.m.ad_star(&u, &state.nu)? - curvature_pairing(alg, &kk.a0, &u, &pt)?;
    let inner = alg.transport_generator(&u, &y)? * &shift + model.e_map() * (model.gain() * &x2);
    Ok(kk.a0.tr_mul(&(model.e_map_inverse() * inner)))
}

/// Controlled field `X_{H_C} + F_C` in `(mu, r)` coordinates, where `r`
/// takes the role of `qt`.
pub fn controlled_field(
    model: &SemidirectModel,
    cd: &ControlledData,
    state: &ReducedState,
) -> Result<FieldEval> {
    check_dim("state mu", model.dim_m(), state.nu.len())?;
    check_dim("state r", model.dim_g(), state.qt.len())?;
    let alg = model.algebra();
    let mu = &state.nu;
    let r = &state.qt;
    let u = cd.mu_c_inv() * mu;
    let y = cd.i_c_inv() * r - &cd.a_c * &u;
    let nu_dot = -alg.m.ad_star(&u, mu)? - curvature_pairing(alg, &cd.a_c, &u, r)?
        + residual_force(model, cd, &u, r)?;
    let qt_dot = alg.transport_rate(&u, &y, r)?;
    Ok(FieldEval {
        nu_dot,
        qt_dot,
        u,
        y,
    })
}

/// Which reduced system a trajectory belongs to.
#[derive(Debug, Clone, Copy)]
pub enum System<'a> {
    Forced(&'a SemidirectModel),
    Controlled(&'a SemidirectModel, &'a ControlledData),
}

impl<'a> System<'a> {
    pub fn model(&self) -> &'a SemidirectModel {
        match self {
            System::Forced(m) | System::Controlled(m, _) => m,
        }
    }

    pub fn eval(&self, state: &ReducedState) -> Result<FieldEval> {
        match self {
            System::Forced(m) => forced_field(m, state),
            System::Controlled(m, cd) => controlled_field(m, cd, state),
        }
    }

    fn rate(&self, state: &ReducedState, kinds: Option<&GroupKinds>) -> Result<StateRate> {
        let f = self.eval(state)?;
        let group = match (&state.group, kinds) {
            (Some(g), Some(k)) => Some(group_rate(self.model().algebra(), k, g, &f.u, &f.y)?),
            _ => None,
        };
        Ok(StateRate {
            nu: f.nu_dot,
            qt: f.qt_dot,
            group,
        })
    }

    /// Kinetic energy of the system the state belongs to.
    pub fn energy(&self, state: &ReducedState) -> Result<f64> {
        match self {
            System::Forced(m) => {
                let pt = m.phi_j_shift(&state.nu, &state.qt)?;
                m.reduced_hamiltonian(&state.nu, &pt)
            }
            System::Controlled(_, cd) => Ok(cd.hamiltonian(&state.nu, &state.qt)),
        }
    }

    /// Spatial conserved covector; `qt` itself when no reconstruction is
    /// needed (trivial rho, abelian g).
    pub fn conserved(&self, state: &ReducedState) -> Result<Vector> {
        let alg = self.model().algebra();
        if alg.rep.is_trivial() && alg.g.is_abelian() {
            return Ok(state.qt.clone());
        }
        let group = state.group.as_ref().ok_or_else(|| {
            Error::NoGroupTracking("spatial reconstruction needs a tracked group element".into())
        })?;
        reconstruct(alg, &GroupKinds::of(alg)?, group, &state.qt)
    }

    fn kinds_for(&self, state: &ReducedState) -> Result<Option<GroupKinds>> {
        match state.group {
            Some(_) => Ok(Some(GroupKinds::of(self.model().algebra())?)),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorRecord {
    pub conserved: Vec<f64>,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ReducedState>,
    /// Spatial conserved covector per sample (body `qt` if no reconstruction
    /// is available, see [`Trajectory::conserved_is_spatial`]).
    pub conserved: Vec<Vector>,
    pub energy: Vec<f64>,
    pub conserved_is_spatial: bool,
}

fn relative_change(x: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        x / scale
    } else {
        x
    }
}

impl Trajectory {
    fn start(system: &System, state: ReducedState) -> Result<Self> {
        let mut t = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            conserved: Vec::new(),
            energy: Vec::new(),
            conserved_is_spatial: true,
        };
        t.conserved_is_spatial = system.conserved(&state).is_ok();
        t.push(system, 0.0, state)?;
        Ok(t)
    }

    fn push(&mut self, system: &System, time: f64, state: ReducedState) -> Result<()> {
        let conserved = if self.conserved_is_spatial {
            system.conserved(&state)?
        } else {
            state.qt.clone()
        };
        self.energy.push(system.energy(&state)?);
        self.conserved.push(conserved);
        self.times.push(time);
        self.states.push(state);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &ReducedState {
        self.states.last().expect("trajectories are never empty")
    }

    /// `|c(t) - c(0)|_inf / |c(0)|_inf` per sample (absolute when `c(0) = 0`).
    pub fn conserved_drift(&self) -> Vec<f64> {
        let c0 = &self.conserved[0];
        let scale = vec_max_abs(c0);
        self.conserved
            .iter()
            .map(|c| relative_change(vec_max_abs(&(c - c0)), scale))
            .collect()
    }

    pub fn energy_drift(&self) -> Vec<f64> {
        let e0 = self.energy[0];
        self.energy
            .iter()
            .map(|e| relative_change((e - e0).abs(), e0.abs()))
            .collect()
    }

    pub fn max_conserved_drift(&self) -> f64 {
        self.conserved_drift().into_iter().fold(0.0, f64::max)
    }

    pub fn max_energy_drift(&self) -> f64 {
        self.energy_drift().into_iter().fold(0.0, f64::max)
    }

    pub fn monitors(&self) -> Vec<MonitorRecord> {
        self.conserved
            .iter()
            .zip(&self.energy)
            .map(|(c, e)| MonitorRecord {
                conserved: c.iter().cloned().collect(),
                energy: *e,
            })
            .collect()
    }

    /// CSV with header `t, nu_*, qt_*, conserved_*, energy, conserved_drift,
    /// energy_drift`, 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let first = &self.states[0];
        let (dm, dg) = (first.nu.len(), first.qt.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=dm).map(|i| format!("nu_{i}")));
        header.extend((1..=dg).map(|i| format!("qt_{i}")));
        header.extend((1..=dg).map(|i| format!("conserved_{i}")));
        header.extend(["energy", "conserved_drift", "energy_drift"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        let cd = self.conserved_drift();
        let ed = self.energy_drift();
        for i in 0..self.len() {
            let s = &self.states[i];
            let row: Vec<String> = std::iter::once(self.times[i])
                .chain(s.nu.iter().cloned())
                .chain(s.qt.iter().cloned())
                .chain(self.conserved[i].iter().cloned())
                .chain([self.energy[i], cd[i], ed[i]])
                .map(|x| format!("{x:.16e}"))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Recomputes the monitors of `traj` for `system`, requiring the spatial
/// reconstruction whenever the body and spatial covectors differ.
pub fn monitors(system: &System, traj: &Trajectory) -> Result<Vec<MonitorRecord>> {
    traj.states
        .iter()
        .map(|s| {
            Ok(MonitorRecord {
                conserved: system.conserved(s)?.iter().cloned().collect(),
                energy: system.energy(s)?,
            })
        })
        .collect()
}

fn step_grid(dt: f64, t_end: f64) -> Result<Vec<f64>> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidIntegration(format!("dt must be positive, got {dt}")));
    }
    if !t_end.is_finite() || t_end < 0.0 {
        return Err(Error::InvalidIntegration(format!(
            "t_end must be nonnegative, got {t_end}"
        )));
    }
    let n = ((t_end / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    if let Some(last) = times.last_mut() {
        *last = t_end;
    }
    Ok(times)
}

/// Classic fixed-step RK4; tracked rotations are re-projected onto SO(3)
/// after every step.
pub fn rk4_integrate(system: &System, state0: ReducedState, dt: f64, t_end: f64) -> Result<Trajectory> {
    let grid = step_grid(dt, t_end)?;
    let kinds = system.kinds_for(&state0)?;
    let mut traj = Trajectory::start(system, state0)?;
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        let x = traj.last().clone();
        let next = rk4_step(system, &x, h, kinds.as_ref());
        match next {
            Ok(next) if next.is_finite() => traj.push(system, w[1], next)?,
            _ => {
                return Err(Error::BlowUp {
                    last_valid_time: w[0],
                    partial: Box::new(traj),
                })
            }
        }
    }
    Ok(traj)
}

fn rk4_step(system: &System, x: &ReducedState, h: f64, kinds: Option<&GroupKinds>) -> Result<ReducedState> {
    let k1 = system.rate(x, kinds)?;
    let k2 = system.rate(&x.combined(&[(&k1, h / 2.0)]), kinds)?;
    let k3 = system.rate(&x.combined(&[(&k2, h / 2.0)]), kinds)?;
    let k4 = system.rate(&x.combined(&[(&k3, h)]), kinds)?;
    let mut next = x.combined(&[(&k1, h / 6.0), (&k2, h / 3.0), (&k3, h / 3.0), (&k4, h / 6.0)]);
    if let (Some(g), Some(k)) = (next.group.as_mut(), kinds) {
        reproject(g, k);
    }
    Ok(next)
}

/// Maps a closed-loop trajectory to the controlled chart:
/// `mu = phi_C nu`, `r = S qt`.
pub fn phi_relate(model: &SemidirectModel, cd: &ControlledData, forced: &Trajectory) -> Result<Trajectory> {
    let system = System::Controlled(model, cd);
    let mut iter = forced.times.iter().zip(&forced.states);
    let map = |s: &ReducedState| ReducedState {
        nu: &cd.phi_c * &s.nu,
        qt: &cd.s * &s.qt,
        group: s.group.clone(),
    };
    let (_, s0) = iter.next().expect("nonempty trajectory");
    let mut out = Trajectory::start(&system, map(s0))?;
    for (t, s) in iter {
        out.push(&system, *t, map(s))?;
    }
    Ok(out)
}

/// Sup-norm distance between the momenta of two trajectories sampled on the
/// same grid.
pub fn trajectory_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| vec_max_abs(&(&x.nu - &y.nu)).max(vec_max_abs(&(&x.qt - &y.qt))))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseChannel {
    pub epsilon: f64,
    pub seed: u64,
}

/// Noise channels; channel `k` carries the Hamiltonian `epsilon_k H0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSpec {
    channels: Vec<NoiseChannel>,
}

impl NoiseSpec {
    pub fn new(channels: Vec<NoiseChannel>) -> Result<Self> {
        for (i, c) in channels.iter().enumerate() {
            if !c.epsilon.is_finite() {
                return Err(Error::InvalidNoise(format!("channel {i}: epsilon not finite")));
            }
            if channels[..i].iter().any(|d| d.seed == c.seed) {
                return Err(Error::InvalidNoise(format!(
                    "channel {i}: seed {} already used",
                    c.seed
                )));
            }
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[NoiseChannel] {
        &self.channels
    }

    fn epsilons(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.epsilon).collect()
    }

    /// Brownian increments `dW ~ N(0, dt)` for one path, `[step][channel]`.
    /// Each channel draws from its own seeded stream; the path index selects
    /// the ChaCha stream so paths are independent and reproducible.
    pub fn increments(&self, path: u64, dt: f64, steps: usize) -> Vec<Vec<f64>> {
        let sd = dt.sqrt();
        let mut rngs: Vec<ChaCha8Rng> = self
            .channels
            .iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
                rng.set_stream(path);
                rng
            })
            .collect();
        (0..steps)
            .map(|_| {
                rngs.iter_mut()
                    .map(|rng| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * sd
                    })
                    .collect()
            })
            .collect()
    }
}

/// Stratonovich Heun path with prescribed Brownian increments.
///
/// Predictor: `x* = x + f(x) dt + sum_k g_k(x) dW_k`; corrector averages the
/// drift and every diffusion field between `x` and `x*`. Channel fields are
/// `g_k = epsilon_k f`.
pub fn heun_path(
    system: &System,
    state0: ReducedState,
    epsilons: &[f64],
    dt: f64,
    increments: &[Vec<f64>],
) -> Result<Trajectory> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::InvalidIntegration(format!("dt must be positive, got {dt}")));
    }
    let kinds = system.kinds_for(&state0)?;
    let mut traj = Trajectory::start(system, state0)?;
    for (n, dw) in increments.iter().enumerate() {
        check_dim("noise increments", epsilons.len(), dw.len())?;
        let x = traj.last().clone();
        // all channel fields are multiples of the drift
        let noise: f64 = epsilons.iter().zip(dw).map(|(e, w)| e * w).sum();
        let weight = dt + noise;
        let step = (|| -> Result<ReducedState> {
            let f0 = system.rate(&x, kinds.as_ref())?;
            let pred = x.combined(&[(&f0, weight)]);
            let f1 = system.rate(&pred, kinds.as_ref())?;
            let mut next = x.combined(&[(&f0, weight / 2.0), (&f1, weight / 2.0)]);
            if let (Some(g), Some(k)) = (next.group.as_mut(), kinds.as_ref()) {
                reproject(g, k);
            }
            Ok(next)
        })();
        let t_prev = n as f64 * dt;
        match step {
            Ok(next) if next.is_finite() => traj.push(system, (n + 1) as f64 * dt, next)?,
            _ => {
                return Err(Error::BlowUp {
                    last_valid_time: t_prev,
                    partial: Box::new(traj),
                })
            }
        }
    }
    Ok(traj)
}

fn step_count(dt: f64, t_end: f64) -> Result<usize> {
    if !dt.is_finite() || dt <= 0.0 || !t_end.is_finite() || t_end < 0.0 {
        return Err(Error::InvalidIntegration(format!(
            "need dt > 0 and t_end >= 0, got dt = {dt}, t_end = {t_end}"
        )));
    }
    Ok((t_end / dt).round() as usize)
}

/// Ensemble of Stratonovich Heun paths of the closed loop, run in parallel.
pub fn stratonovich_heun_integrate(
    model: &SemidirectModel,
    state0: &ReducedState,
    noise: &NoiseSpec,
    dt: f64,
    t_end: f64,
    n_paths: usize,
) -> Result<Vec<Trajectory>> {
    let steps = step_count(dt, t_end)?;
    let eps = noise.epsilons();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let inc = noise.increments(p as u64, dt, steps);
            heun_path(&System::Forced(model), state0.clone(), &eps, dt, &inc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HalvingStudy {
    pub coarse_dt: f64,
    pub fine_dt: f64,
    pub coarse_mean: f64,
    pub fine_mean: f64,
    pub coarse_max: f64,
    pub fine_max: f64,
    /// `coarse_mean / fine_mean`.
    pub ratio: f64,
}

/// Terminal conserved-quantity drift per path at `dt` and `dt/2`, driven by
/// the same Brownian paths (coarse increments are sums of fine pairs).
pub fn conserved_drift_halving(
    model: &SemidirectModel,
    state0: &ReducedState,
    noise: &NoiseSpec,
    dt: f64,
    t_end: f64,
    n_paths: usize,
) -> Result<HalvingStudy> {
    let steps = step_count(dt, t_end)?;
    let eps = noise.epsilons();
    let fine_dt = dt / 2.0;
    let drifts: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let fine = noise.increments(p as u64, fine_dt, 2 * steps);
            let coarse: Vec<Vec<f64>> = fine
                .chunks(2)
                .map(|pair| pair[0].iter().zip(&pair[1]).map(|(a, b)| a + b).collect())
                .collect();
            let system = System::Forced(model);
            let c = heun_path(&system, state0.clone(), &eps, dt, &coarse)?;
            let f = heun_path(&system, state0.clone(), &eps, fine_dt, &fine)?;
            Ok((terminal_drift(&c), terminal_drift(&f)))
        })
        .collect::<Result<_>>()?;
    let n = drifts.len().max(1) as f64;
    let coarse_mean = drifts.iter().map(|d| d.0).sum::<f64>() / n;
    let fine_mean = drifts.iter().map(|d| d.1).sum::<f64>() / n;
    Ok(HalvingStudy {
        coarse_dt: dt,
        fine_dt,
        coarse_mean,
        fine_mean,
        coarse_max: drifts.iter().map(|d| d.0).fold(0.0, f64::max),
        fine_max: drifts.iter().map(|d| d.1).fold(0.0, f64::max),
        ratio: coarse_mean / fine_mean,
    })
}

fn terminal_drift(traj: &Trajectory) -> f64 {
    *traj.conserved_drift().last().expect("nonempty")
}
