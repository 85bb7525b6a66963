//! Coordinate-level Lie algebra kernel.
//!
//! Elements of an algebra and of its dual are plain coefficient vectors in a
//! fixed basis; the pairing between them is the dot product. All operators are
//! dense matrices acting on column vectors.
//!
//! Conventions: brackets are the usual (left-invariant) ones, equations of
//! motion are right-trivialized, and representations `rho: M -> Aut(G)` are
//! right representations. With these choices the infinitesimal representation
//! is an anti-homomorphism ([`REP_BRACKET_SIGN`]) and the body form of a fixed
//! spatial covector evolves with [`TRANSPORT_SIGN`].

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{max_abs, vec_max_abs, Matrix, Vector};

/// `rho^[u,v] = REP_BRACKET_SIGN * (rho^u rho^v - rho^v rho^u)`.
pub const REP_BRACKET_SIGN: f64 = -1.0;

/// `d/dt qt = TRANSPORT_SIGN * (ad(Y)^* + rho_*^u) qt`; fixed against the
/// matrix-group reconstruction in the tests of this module.
pub const TRANSPORT_SIGN: f64 = -1.0;

const STRUCTURE_TOL: f64 = 1e-12;
const REP_TOL: f64 = 1e-10;

/// Finite-dimensional Lie algebra given by structure constants
/// `[e_i, e_j] = sum_k c[i][j][k] e_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LieAlgebra {
    dim: usize,
    structure: Vec<f64>,
    // ad_basis[i] is the matrix of ad(e_i)
    ad_basis: Vec<Matrix>,
}

fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

impl LieAlgebra {
    /// Validates antisymmetry and the Jacobi identity before accepting the table.
    pub fn new(structure: &[Vec<Vec<f64>>]) -> Result<Self> {
        let dim = structure.len();
        if dim == 0 {
            return Err(Error::InvalidAlgebra("dimension must be positive".into()));
        }
        let mut flat = Vec::with_capacity(dim * dim * dim);
        for (i, plane) in structure.iter().enumerate() {
            if plane.len() != dim {
                return Err(Error::InvalidAlgebra(format!(
                    "structure[{i}] has {} rows, expected {dim}",
                    plane.len()
                )));
            }
            for (j, row) in plane.iter().enumerate() {
                if row.len() != dim {
                    return Err(Error::InvalidAlgebra(format!(
                        "structure[{i}][{j}] has {} entries, expected {dim}",
                        row.len()
                    )));
                }
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidAlgebra(format!(
                        "structure[{i}][{j}] is not finite"
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        Self::from_flat(dim, flat)
    }

    fn from_flat(dim: usize, structure: Vec<f64>) -> Result<Self> {
        let ad_basis = (0..dim)
            .map(|i| Matrix::from_fn(dim, dim, |k, j| structure[(i * dim + j) * dim + k]))
            .collect();
        let alg = Self {
            dim,
            structure,
            ad_basis,
        };
        let anti = alg.antisymmetry_residual();
        if anti > STRUCTURE_TOL {
            return Err(Error::InvalidAlgebra(format!(
                "antisymmetry residual {anti:.3e}"
            )));
        }
        let jac = alg.jacobi_residual();
        if jac > STRUCTURE_TOL {
            return Err(Error::InvalidAlgebra(format!("Jacobi residual {jac:.3e}")));
        }
        Ok(alg)
    }

    pub fn abelian(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidAlgebra("dimension must be positive".into()));
        }
        Self::from_flat(dim, vec![0.0; dim * dim * dim])
    }

    /// so(3) with the cross-product bracket `[e1, e2] = e3`.
    pub fn so3() -> Self {
        Self::so3_scaled(1.0)
    }

    /// so(3) with the opposite bracket `[e1, e2] = -e3`.
    ///
    /// Right-trivialized equations written over this algebra are the
    /// left-trivialized (body frame) equations over the usual so(3).
    pub fn so3_body() -> Self {
        Self::so3_scaled(-1.0)
    }

    fn so3_scaled(sign: f64) -> Self {
        let mut flat = vec![0.0; 27];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    flat[(i * 3 + j) * 3 + k] = sign * levi_civita(i, j, k);
                }
            }
        }
        Self::from_flat(3, flat).expect("so(3) is a Lie algebra")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn structure_constant(&self, i: usize, j: usize, k: usize) -> f64 {
        self.structure[(i * self.dim + j) * self.dim + k]
    }

    pub fn structure_table(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.dim)
            .map(|i| {
                (0..self.dim)
                    .map(|j| (0..self.dim).map(|k| self.structure_constant(i, j, k)).collect())
                    .collect()
            })
            .collect()
    }

    pub fn is_abelian(&self) -> bool {
        self.structure.iter().all(|&c| c == 0.0)
    }

    /// +1 for so(3) with `[e1,e2] = e3`, -1 for the opposite bracket.
    pub fn so3_orientation(&self) -> Option<f64> {
        if self.dim != 3 {
            return None;
        }
        [1.0, -1.0].into_iter().find(|&sign| {
            (0..27).all(|n| {
                let (i, j, k) = (n / 9, (n / 3) % 3, n % 3);
                self.structure[n] == sign * levi_civita(i, j, k)
            })
        })
    }

    pub fn basis(&self, i: usize) -> Vector {
        let mut v = Vector::zeros(self.dim);
        v[i] = 1.0;
        v
    }

    /// Matrix of `ad(x)`.
    pub fn ad_matrix(&self, x: &Vector) -> Result<Matrix> {
        check_dim("ad", self.dim, x.len())?;
        let mut out = Matrix::zeros(self.dim, self.dim);
        for (i, xi) in x.iter().enumerate() {
            if *xi != 0.0 {
                out += &self.ad_basis[i] * *xi;
            }
        }
        Ok(out)
    }

    pub fn bracket(&self, x: &Vector, y: &Vector) -> Result<Vector> {
        check_dim("bracket", self.dim, y.len())?;
        Ok(self.ad_matrix(x)? * y)
    }

    /// `ad(x)^* p`, defined by `<ad(x)^* p, z> = <p, [x, z]>`.
    pub fn ad_star(&self, x: &Vector, p: &Vector) -> Result<Vector> {
        check_dim("ad_star covector", self.dim, p.len())?;
        Ok(self.ad_matrix(x)?.tr_mul(p))
    }

    pub fn antisymmetry_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    worst = worst
                        .max((self.structure_constant(i, j, k) + self.structure_constant(j, i, k)).abs());
                }
            }
        }
        worst
    }

    pub fn jacobi_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let (ei, ej, ek) = (self.basis(i), self.basis(j), self.basis(k));
                    let br = |a: &Vector, b: &Vector| &self.ad_matrix(a).unwrap() * b;
                    let sum = br(&ei, &br(&ej, &ek)) + br(&ej, &br(&ek, &ei)) + br(&ek, &br(&ei, &ej));
                    worst = worst.max(vec_max_abs(&sum));
                }
            }
        }
        worst
    }

    /// Max over basis triples of `|<ad(e_i)^* e_j^*, e_k> - <e_j^*, [e_i, e_k]>|`.
    pub fn duality_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let lhs = self.ad_star(&self.basis(i), &self.basis(j)).unwrap();
                for k in 0..d {
                    let rhs = self.bracket(&self.basis(i), &self.basis(k)).unwrap()[j];
                    worst = worst.max((lhs[k] - rhs).abs());
                }
            }
        }
        worst
    }
}

/// Right representation of `m` on `g`, stored infinitesimally:
/// `rho^{e_a}(f_i) = sum_j r[a][i][j] f_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    dim_m: usize,
    dim_g: usize,
    // action[a] is the matrix of rho^{e_a} on g
    action: Vec<Matrix>,
}

impl Representation {
    pub fn trivial(dim_m: usize, dim_g: usize) -> Self {
        Self {
            dim_m,
            dim_g,
            action: vec![Matrix::zeros(dim_g, dim_g); dim_m],
        }
    }

    /// SO(3) acting on R^3 by `rho^phi(x) = phi^T x`, so `rho^u X = -u x X`.
    pub fn so3_on_r3() -> Self {
        let action = (0..3)
            .map(|a| Matrix::from_fn(3, 3, |j, i| -levi_civita(a, i, j)))
            .collect();
        Self {
            dim_m: 3,
            dim_g: 3,
            action,
        }
    }

    /// Builds from the `r[a][i][j]` table and checks it against both algebras.
    pub fn new(m: &LieAlgebra, g: &LieAlgebra, table: &[Vec<Vec<f64>>]) -> Result<Self> {
        let (dim_m, dim_g) = (m.dim(), g.dim());
        if table.len() != dim_m {
            return Err(Error::InvalidRepresentation(format!(
                "table has {} planes, expected dim_m = {dim_m}",
                table.len()
            )));
        }
        let mut action = Vec::with_capacity(dim_m);
        for (a, plane) in table.iter().enumerate() {
            if plane.len() != dim_g || plane.iter().any(|row| row.len() != dim_g) {
                return Err(Error::InvalidRepresentation(format!(
                    "rep[{a}] must be {dim_g} x {dim_g}"
                )));
            }
            if plane.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::InvalidRepresentation(format!("rep[{a}] is not finite")));
            }
            action.push(Matrix::from_fn(dim_g, dim_g, |j, i| plane[i][j]));
        }
        let rep = Self {
            dim_m,
            dim_g,
            action,
        };
        let hom = rep.homomorphism_residual(m);
        if hom > REP_TOL {
            return Err(Error::InvalidRepresentation(format!(
                "representation residual {hom:.3e}"
            )));
        }
        let der = rep.derivation_residual(g);
        if der > REP_TOL {
            return Err(Error::InvalidRepresentation(format!(
                "rho^u is not a derivation of g (residual {der:.3e})"
            )));
        }
        Ok(rep)
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn dim_g(&self) -> usize {
        self.dim_g
    }

    pub fn is_trivial(&self) -> bool {
        self.action.iter().all(|a| a.iter().all(|&x| x == 0.0))
    }

    pub fn table(&self) -> Vec<Vec<Vec<f64>>> {
        self.action
            .iter()
            .map(|a| {
                (0..self.dim_g)
                    .map(|i| (0..self.dim_g).map(|j| a[(j, i)]).collect())
                    .collect()
            })
            .collect()
    }

    /// Matrix of `rho^u` acting on g.
    pub fn rho_matrix(&self, u: &Vector) -> Result<Matrix> {
        check_dim("rho (m element)", self.dim_m, u.len())?;
        let mut out = Matrix::zeros(self.dim_g, self.dim_g);
        for (a, ua) in u.iter().enumerate() {
            if *ua != 0.0 {
                out += &self.action[a] * *ua;
            }
        }
        Ok(out)
    }

    pub fn rho_inf(&self, u: &Vector, x: &Vector) -> Result<Vector> {
        check_dim("rho_inf (g element)", self.dim_g, x.len())?;
        Ok(self.rho_matrix(u)? * x)
    }

    /// `rho_*^u p = -(rho^u)^* p`.
    pub fn rho_star(&self, u: &Vector, p: &Vector) -> Result<Vector> {
        check_dim("rho_star (g covector)", self.dim_g, p.len())?;
        Ok(-self.rho_matrix(u)?.tr_mul(p))
    }

    /// Matrix of `rho_*^u` on g*.
    pub fn rho_star_matrix(&self, u: &Vector) -> Result<Matrix> {
        Ok(-self.rho_matrix(u)?.transpose())
    }

    /// `X ⋄ p` in m*, defined by `<X ⋄ p, u> = <p, rho^u X>`.
    pub fn diamond(&self, x: &Vector, p: &Vector) -> Result<Vector> {
        check_dim("diamond (g element)", self.dim_g, x.len())?;
        check_dim("diamond (g covector)", self.dim_g, p.len())?;
        Ok(Vector::from_iterator(
            self.dim_m,
            self.action.iter().map(|a| p.dot(&(a * x))),
        ))
    }

    pub fn homomorphism_residual(&self, m: &LieAlgebra) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.dim_m {
            for b in 0..self.dim_m {
                let br = m.bracket(&m.basis(a), &m.basis(b)).unwrap();
                let lhs = self.rho_matrix(&br).unwrap();
                let comm = &self.action[a] * &self.action[b] - &self.action[b] * &self.action[a];
                worst = worst.max(max_abs(&(lhs - comm * REP_BRACKET_SIGN)));
            }
        }
        worst
    }

    /// `rho^u [X, Y] - [rho^u X, Y] - [X, rho^u Y]` over basis triples.
    pub fn derivation_residual(&self, g: &LieAlgebra) -> f64 {
        if g.is_abelian() {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for r in &self.action {
            for i in 0..self.dim_g {
                for j in 0..self.dim_g {
                    let (x, y) = (g.basis(i), g.basis(j));
                    let lhs = r * g.bracket(&x, &y).unwrap();
                    let rhs = g.bracket(&(r * &x), &y).unwrap() + g.bracket(&x, &(r * &y)).unwrap();
                    worst = worst.max(vec_max_abs(&(lhs - rhs)));
                }
            }
        }
        worst
    }

    /// Max over basis triples of `|<X ⋄ p, u> - <p, rho^u X>|`.
    pub fn diamond_adjointness_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim_g {
            for j in 0..self.dim_g {
                let mut x = Vector::zeros(self.dim_g);
                x[i] = 1.0;
                let mut p = Vector::zeros(self.dim_g);
                p[j] = 1.0;
                let d = self.diamond(&x, &p).unwrap();
                for a in 0..self.dim_m {
                    let mut u = Vector::zeros(self.dim_m);
                    u[a] = 1.0;
                    let rhs = p.dot(&self.rho_inf(&u, &x).unwrap());
                    worst = worst.max((d[a] - rhs).abs());
                }
            }
        }
        worst
    }
}

/// The pair `(m, g)` with the representation of `m` on `g`: the Lie algebra
/// of the semidirect product `M ⋉ G`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemidirectAlgebra {
    pub m: LieAlgebra,
    pub g: LieAlgebra,
    pub rep: Representation,
}

impl SemidirectAlgebra {
    pub fn new(m: LieAlgebra, g: LieAlgebra, rep: Representation) -> Result<Self> {
        check_dim("representation dim_m", m.dim(), rep.dim_m())?;
        check_dim("representation dim_g", g.dim(), rep.dim_g())?;
        Ok(Self { m, g, rep })
    }

    pub fn direct_product(m: LieAlgebra, g: LieAlgebra) -> Self {
        let rep = Representation::trivial(m.dim(), g.dim());
        Self { m, g, rep }
    }

    pub fn dim_m(&self) -> usize {
        self.m.dim()
    }

    pub fn dim_g(&self) -> usize {
        self.g.dim()
    }

    /// Built-in presets: `so3`, `abelian:<n>`, `so3_semidirect_r3`, `satellite`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "so3" => Ok(Self::direct_product(LieAlgebra::so3(), LieAlgebra::so3())),
            "so3_semidirect_r3" => Ok(Self {
                m: LieAlgebra::so3(),
                g: LieAlgebra::abelian(3)?,
                rep: Representation::so3_on_r3(),
            }),
            "satellite" => Ok(Self::direct_product(
                LieAlgebra::so3_body(),
                LieAlgebra::abelian(1)?,
            )),
            other => {
                if let Some(n) = other.strip_prefix("abelian:") {
                    let n: usize = n
                        .parse()
                        .map_err(|_| Error::InvalidAlgebra(format!("bad preset {other:?}")))?;
                    let a = LieAlgebra::abelian(n)?;
                    Ok(Self::direct_product(a.clone(), a))
                } else {
                    Err(Error::InvalidAlgebra(format!("unknown preset {other:?}")))
                }
            }
        }
    }

    pub fn from_tables(tables: &AlgebraTables) -> Result<Self> {
        let m = LieAlgebra::new(&tables.structure_m)?;
        let g = LieAlgebra::new(&tables.structure_g)?;
        check_dim("dim_m", tables.dim_m, m.dim())?;
        check_dim("dim_g", tables.dim_g, g.dim())?;
        let rep = match &tables.rep {
            Some(table) => Representation::new(&m, &g, table)?,
            None => Representation::trivial(m.dim(), g.dim()),
        };
        Ok(Self { m, g, rep })
    }

    pub fn to_tables(&self) -> AlgebraTables {
        AlgebraTables {
            dim_m: self.dim_m(),
            dim_g: self.dim_g(),
            structure_m: self.m.structure_table(),
            structure_g: self.g.structure_table(),
            rep: Some(self.rep.table()),
        }
    }

    /// Rate of the body covector `qt = rho_*^{phi^-1} Ad(g^-1)^* q` when the
    /// spatial `q` is held fixed and `(phi, g)` moves with right-trivialized
    /// velocity `(u, Y)`.
    pub fn transport_rate(&self, u: &Vector, y: &Vector, qt: &Vector) -> Result<Vector> {
        let ad = self.g.ad_star(y, qt)?;
        let rho = self.rep.rho_star(u, qt)?;
        Ok((ad + rho) * TRANSPORT_SIGN)
    }

    /// Matrix of the transport generator `(ad(Y)^* + rho_*^u)`.
    pub fn transport_generator(&self, u: &Vector, y: &Vector) -> Result<Matrix> {
        Ok(self.g.ad_matrix(y)?.transpose() + self.rep.rho_star_matrix(u)?)
    }
}

/// JSON form of an algebra pair, row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraTables {
    pub dim_m: usize,
    pub dim_g: usize,
    pub structure_m: Vec<Vec<Vec<f64>>>,
    pub structure_g: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub rep: Option<Vec<Vec<Vec<f64>>>>,
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues formula for `exp(hat(w))`.
pub fn so3_exp(w: &Vector) -> Result<Matrix3<f64>> {
    check_dim("so3_exp", 3, w.len())?;
    let w = Vector3::new(w[0], w[1], w[2]);
    let theta = w.norm();
    let k = hat(&w);
    let (a, b) = if theta < 1e-6 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Ok(Matrix3::identity() + k * a + k * k * b)
}

/// Inverse of [`so3_exp`] on rotations with angle below pi.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        return v * 0.5;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // axis from the symmetric part when the skew part degenerates
        let s = (r + Matrix3::identity()) * 0.5;
        let col = (0..3)
            .max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)]))
            .unwrap();
        let axis = s.column(col).into_owned().normalize();
        return axis * theta;
    }
    v * (theta / (2.0 * theta.sin()))
}
