//! Weighted graph Laplacians, Dirichlet forms and inner products for all
//! three boundary conditions, matrix-free iterative solvers, and small dense
//! oracles for testing.
//!
//! The operator is the walk Laplacian `Hu(x) = u(x) - (1/a(x)) sum_y a(x,y) u(y)`,
//! self-adjoint with respect to the weighted inner product
//! `(u,v)_N = sum_{x in Q_N} u(x) v(x) a(x)`.
//!
//! Two Dirichlet-form conventions coexist and are both exposed:
//!
//! * [`Laplacian::dirichlet_form`] sums over ordered pairs `(x, y)` with
//!   `x in Q_N` and `y` a bc-admissible neighbor, so interior-interior edges
//!   count twice and interior-boundary edges once. This is the normalization
//!   under which the diffusion matrix `a(Q_N)^{-1} E(v,v)`, the effective
//!   conductance `N^{-d} E(v,v)`, and the corrector energy comparisons take
//!   their standard values.
//! * [`Laplacian::edge_form`] counts every admissible edge once. This is the
//!   quadratic form of the operator: `edge_form(u,v) = (Hu, v)_N` holds
//!   exactly for admissible `u, v`, and Rayleigh quotients / eigenvalues are
//!   expressed in it. The two forms are related by
//!   `dirichlet_form = 2 * edge_form - (interior-boundary edge part)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice_env::{Closure, Environment, LatticeSpec};

/// Scalar field indexed by site (full closure, boundary included for boxes).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub lattice: LatticeSpec,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(lattice: LatticeSpec) -> Self {
        Self { lattice, values: vec![0.0; lattice.site_count()] }
    }

    pub fn constant(lattice: LatticeSpec, value: f64) -> Self {
        Self { lattice, values: vec![value; lattice.site_count()] }
    }

    pub fn from_fn(lattice: LatticeSpec, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let values = (0..lattice.site_count()).map(|s| f(&lattice.site_coords(s))).collect();
        Self { lattice, values }
    }

    /// Coordinate field `g_axis(x) = x(axis)` in stored coordinates.
    pub fn coordinate(lattice: LatticeSpec, axis: usize) -> Self {
        Self::from_fn(lattice, |c| c[axis] as f64)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Deterministic pairwise (tree) summation; the reduction tree depends only
/// on the slice length, never on thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 64 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Boundary condition of the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bc {
    Periodic,
    Dirichlet,
    /// Fixed potentials on the two `x(1)` faces, side faces insulated
    /// (side-face edges removed).
    MixedFaces,
}

/// Matrix-free weighted graph Laplacian with a boundary-condition tag.
pub struct Laplacian<'a> {
    pub env: &'a Environment,
    pub bc: Bc,
    /// dof -> site (identity on the torus, interior sites on boxes).
    dofs: Vec<usize>,
    /// site -> dof + 1 (0 = not a dof).
    dof_of_site: Vec<u32>,
    /// CSR adjacency over dofs; boundary neighbors are not included here.
    row_start: Vec<u32>,
    cols: Vec<u32>,
    wts: Vec<f64>,
    /// bc-aware site weight per dof (divisor of the averaging operator).
    diag: Vec<f64>,
}

impl<'a> Laplacian<'a> {
    pub fn new(env: &'a Environment, bc: Bc) -> Result<Self> {
        match (bc, env.lattice.closure) {
            (Bc::Periodic, Closure::Torus) => {}
            (Bc::Dirichlet | Bc::MixedFaces, Closure::ClosedBox) => {}
            _ => {
                return Err(Error::usage(
                    "periodic requires torus closure; dirichlet and mixed_faces require closed_box",
                ))
            }
        }
        let lat = env.lattice;
        let dofs: Vec<usize> = match bc {
            Bc::Periodic => (0..lat.site_count()).collect(),
            _ => lat.interior_sites(),
        };
        let mut dof_of_site = vec![0u32; lat.site_count()];
        for (i, &s) in dofs.iter().enumerate() {
            dof_of_site[s] = (i + 1) as u32;
        }
        let mut row_start = Vec::with_capacity(dofs.len() + 1);
        let mut cols = Vec::new();
        let mut wts = Vec::new();
        let mut diag = Vec::with_capacity(dofs.len());
        for &site in &dofs {
            row_start.push(cols.len() as u32);
            let mut total = 0.0;
            for axis in 0..lat.d {
                for positive in [true, false] {
                    let (nb, w) = match bc {
                        Bc::Periodic => {
                            let nb = lat.torus_neighbor(site, axis, positive);
                            let base = if positive { site } else { nb };
                            (Some(nb), env.weight(base, axis))
                        }
                        _ => {
                            let nb = match lat.box_neighbor(site, axis, positive) {
                                Some(nb) => nb,
                                None => continue,
                            };
                            let base = site.min(nb);
                            (Some(nb), env.weight(base, axis))
                        }
                    };
                    let nb = nb.unwrap();
                    // mixed faces: drop edges into the insulated side faces
                    if bc == Bc::MixedFaces && !lat.is_interior(nb) && axis != 0 {
                        continue;
                    }
                    total += w;
                    if dof_of_site[nb] != 0 {
                        cols.push(dof_of_site[nb] - 1);
                        wts.push(w);
                    }
                }
            }
            diag.push(total);
        }
        row_start.push(cols.len() as u32);
        Ok(Self { env, bc, dofs, dof_of_site, row_start, cols, wts, diag })
    }

    pub fn dof_count(&self) -> usize {
        self.dofs.len()
    }

    pub fn dof_sites(&self) -> &[usize] {
        &self.dofs
    }

    /// bc-aware site weight `a(x)` of a dof (excludes side-face edges under
    /// mixed boundary conditions).
    pub fn dof_weight(&self, dof: usize) -> f64 {
        self.diag[dof]
    }

    /// Homogeneous operator on dof vectors: boundary values treated as zero.
    pub(crate) fn apply_dofs(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.dofs.len());
        for i in 0..self.dofs.len() {
            let mut acc = 0.0;
            let lo = self.row_start[i] as usize;
            let hi = self.row_start[i + 1] as usize;
            for k in lo..hi {
                acc += self.wts[k] * u[self.cols[k] as usize];
            }
            out[i] = u[i] - acc / self.diag[i];
        }
    }

    /// Pack a full field into a dof vector.
    pub(crate) fn restrict(&self, u: &Field) -> Vec<f64> {
        self.dofs.iter().map(|&s| u.values[s]).collect()
    }

    /// Embed a dof vector into a full field (boundary entries zero).
    pub(crate) fn prolong(&self, u: &[f64]) -> Field {
        let mut f = Field::zeros(self.env.lattice);
        for (i, &s) in self.dofs.iter().enumerate() {
            f.values[s] = u[i];
        }
        f
    }

    /// `Hu(x) = u(x) - (1/a(x)) sum_y a(x,y) u(y)` with the bc's neighbor set;
    /// boundary values are read from the field (zero for admissible Dirichlet
    /// fields, fixed face data under mixed conditions). Output is zero on the
    /// boundary.
    pub fn apply(&self, u: &Field) -> Result<Field> {
        if u.values.len() != self.env.lattice.site_count() {
            return Err(Error::domain("field does not match the operator's lattice"));
        }
        let lat = self.env.lattice;
        let mut out = Field::zeros(lat);
        for (i, &site) in self.dofs.iter().enumerate() {
            let mut acc = 0.0;
            for axis in 0..lat.d {
                for positive in [true, false] {
                    let (nb, w) = match self.bc {
                        Bc::Periodic => {
                            let nb = lat.torus_neighbor(site, axis, positive);
                            let base = if positive { site } else { nb };
                            (nb, self.env.weight(base, axis))
                        }
                        _ => {
                            let nb = match lat.box_neighbor(site, axis, positive) {
                                Some(nb) => nb,
                                None => continue,
                            };
                            (nb, self.env.weight(site.min(nb), axis))
                        }
                    };
                    if self.bc == Bc::MixedFaces && !lat.is_interior(nb) && axis != 0 {
                        continue;
                    }
                    acc += w * u.values[nb];
                }
            }
            out.values[site] = u.values[site] - acc / self.diag[i];
        }
        Ok(out)
    }

    /// bc-aware weighted inner product `(u,v)_N` over `Q_N`.
    pub fn inner(&self, u: &Field, v: &Field) -> f64 {
        let parts: Vec<f64> = self
            .dofs
            .iter()
            .enumerate()
            .map(|(i, &s)| u.values[s] * v.values[s] * self.diag[i])
            .collect();
        pairwise_sum(&parts)
    }

    /// Weighted L2 norm `||u||_{2,N}`.
    pub fn norm(&self, u: &Field) -> f64 {
        self.inner(u, u).sqrt()
    }

    fn admissible_pairs(&self, site: usize) -> Vec<(usize, f64)> {
        let lat = self.env.lattice;
        let mut out = Vec::with_capacity(2 * lat.d);
        for axis in 0..lat.d {
            for positive in [true, false] {
                match self.bc {
                    Bc::Periodic => {
                        let nb = lat.torus_neighbor(site, axis, positive);
                        let base = if positive { site } else { nb };
                        out.push((nb, self.env.weight(base, axis)));
                    }
                    _ => {
                        let nb = match lat.box_neighbor(site, axis, positive) {
                            Some(nb) => nb,
                            None => continue,
                        };
                        if self.bc == Bc::MixedFaces && !lat.is_interior(nb) && axis != 0 {
                            continue;
                        }
                        out.push((nb, self.env.weight(site.min(nb), axis)));
                    }
                }
            }
        }
        out
    }

    /// Ordered-pair Dirichlet form: `sum_{x in Q_N} sum_{y ~ x admissible}
    /// a(x,y) (u(x)-u(y)) (v(x)-v(y))`. Interior-interior edges count twice,
    /// interior-boundary edges once.
    pub fn dirichlet_form(&self, u: &Field, v: &Field) -> f64 {
        let parts: Vec<f64> = self
            .dofs
            .iter()
            .map(|&site| {
                let mut acc = 0.0;
                for (nb, w) in self.admissible_pairs(site) {
                    acc += w * (u.values[site] - u.values[nb]) * (v.values[site] - v.values[nb]);
                }
                acc
            })
            .collect();
        pairwise_sum(&parts)
    }

    /// Per-edge Dirichlet form: every admissible edge counted once. Satisfies
    /// the Green-Gauss identity `edge_form(u,v) = (Hu, v)_N` for admissible
    /// `u, v` and all boundary conditions.
    pub fn edge_form(&self, u: &Field, v: &Field) -> f64 {
        let parts: Vec<f64> = self
            .dofs
            .iter()
            .map(|&site| {
                let mut acc = 0.0;
                for (nb, w) in self.admissible_pairs(site) {
                    // count each edge at its lexicographically smaller dof
                    // endpoint; interior-boundary edges belong to the interior
                    // endpoint
                    let owned = if self.dof_of_site[nb] == 0 { true } else { site < nb };
                    if owned {
                        acc += w * (u.values[site] - u.values[nb]) * (v.values[site] - v.values[nb]);
                    }
                }
                acc
            })
            .collect();
        pairwise_sum(&parts)
    }
}

/// `(u,v)_N = sum_{x in Q_N} u(x) v(x) a(x)` with the plain (full) site
/// weights of the environment.
pub fn weighted_inner(env: &Environment, u: &Field, v: &Field) -> Result<f64> {
    if u.values.len() != env.lattice.site_count() || v.values.len() != env.lattice.site_count() {
        return Err(Error::domain("field shape mismatch"));
    }
    let sites: Vec<usize> = match env.lattice.closure {
        Closure::Torus => (0..env.lattice.site_count()).collect(),
        Closure::ClosedBox => env.lattice.interior_sites(),
    };
    let parts: Vec<f64> =
        sites.iter().map(|&s| u.values[s] * v.values[s] * env.site_weight(s)).collect();
    Ok(pairwise_sum(&parts))
}

/// Coordinatewise weighted inner product of two vector fields.
pub fn weighted_inner_vec(env: &Environment, u: &[Field], v: &[Field]) -> Result<f64> {
    let mut total = 0.0;
    for (ui, vi) in u.iter().zip(v.iter()) {
        total += weighted_inner(env, ui, vi)?;
    }
    Ok(total)
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub field: Field,
    pub residual: f64,
    pub iterations: usize,
}

fn plain_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

/// Iteration cap heuristic: scales with side length and the observed
/// conductance contrast.
pub fn suggested_max_iter(env: &Environment) -> usize {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &w in env.weights() {
        lo = lo.min(w);
        hi = hi.max(w);
    }
    let contrast = if lo > 0.0 { (hi / lo).sqrt() } else { 1e6 };
    200 + (10.0 * env.lattice.n as f64 * contrast).ceil() as usize
}

/// Matrix-free preconditioned CG in the weighted metric.
///
/// Solves `Hu = rhs` on the operator's dof space with boundary values treated
/// as zero. For the periodic operator the iterate is re-projected onto the
/// weighted-mean-zero subspace every iteration and the right-hand side must
/// be weighted-mean-zero.
pub fn cg_solve(lap: &Laplacian, rhs: &Field, tol: f64, max_iter: usize) -> Result<CgSolution> {
    if tol <= 0.0 {
        return Err(Error::usage("tolerance must be positive"));
    }
    let n = lap.dof_count();
    let b = lap.restrict(rhs);
    let b_norm = plain_norm(&b);

    let d_inner = |x: &[f64], y: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            acc += x[i] * y[i] * lap.diag[i];
        }
        acc
    };
    let total_weight: f64 = lap.diag.iter().sum();
    let project = |x: &mut [f64]| {
        let mut mean = 0.0;
        for i in 0..n {
            mean += x[i] * lap.diag[i];
        }
        mean /= total_weight;
        for v in x.iter_mut() {
            *v -= mean;
        }
    };

    if lap.bc == Bc::Periodic {
        let mean = b.iter().zip(lap.diag.iter()).map(|(x, w)| x * w).sum::<f64>();
        let scale = d_inner(&b, &b).sqrt() * total_weight.sqrt();
        if b_norm > 0.0 && mean.abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::domain(format!(
                "periodic right-hand side must have weighted mean zero (relative mean {:.3e})",
                mean.abs() / scale
            )));
        }
    }

    if b_norm == 0.0 {
        return Ok(CgSolution { field: lap.prolong(&vec![0.0; n]), residual: 0.0, iterations: 0 });
    }

    let mut u = vec![0.0; n];
    let mut r = b.clone();
    if lap.bc == Bc::Periodic {
        project(&mut r);
    }
    let mut p = r.clone();
    let mut rho = d_inner(&r, &r);
    let mut q = vec![0.0; n];
    let target = tol * b_norm;

    for it in 1..=max_iter {
        lap.apply_dofs(&p, &mut q);
        let pq = d_inner(&p, &q);
        if pq <= 0.0 {
            return Err(Error::Convergence { iterations: it, residual: plain_norm(&r), tol });
        }
        let alpha = rho / pq;
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if lap.bc == Bc::Periodic {
            project(&mut u);
            project(&mut r);
        }
        let res = plain_norm(&r);
        if res <= target {
            // recompute the true residual to guard against drift
            lap.apply_dofs(&u, &mut q);
            let mut true_r = 0.0;
            for i in 0..n {
                let d = b[i] - q[i];
                true_r += d * d;
            }
            let true_r = true_r.sqrt();
            if true_r <= target {
                return Ok(CgSolution { field: lap.prolong(&u), residual: true_r, iterations: it });
            }
            // fall through and keep iterating on the recurrence residual
        }
        let rho_new = d_inner(&r, &r);
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::Convergence { iterations: max_iter, residual: plain_norm(&r), tol })
}

/// Bottom eigenpair of the Dirichlet operator.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: f64,
    pub psi: Field,
    pub residual: f64,
    pub iterations: usize,
}

/// Smallest eigenvalue and Perron eigenfunction of the Dirichlet operator by
/// inverse power iteration with CG inner solves and Rayleigh-quotient
/// stopping. The returned eigenfunction has `||psi||_{2,N} = 1` and positive
/// sum.
pub fn smallest_eigenpair(lap: &Laplacian, tol: f64) -> Result<EigenPair> {
    if lap.bc != Bc::Dirichlet {
        return Err(Error::usage("smallest_eigenpair requires the dirichlet operator"));
    }
    let n = lap.dof_count();
    let d_norm = |x: &[f64]| -> f64 {
        x.iter().zip(lap.diag.iter()).map(|(v, w)| v * v * w).sum::<f64>().sqrt()
    };

    let mut v = vec![1.0; n];
    let nv = d_norm(&v);
    for x in v.iter_mut() {
        *x /= nv;
    }
    let inner_cap = suggested_max_iter(lap.env) * 4;
    let mut hv = vec![0.0; n];
    let mut lambda = 0.0;
    for outer in 1..=1000 {
        // w = H^{-1} v via CG on the dof space
        let rhs = lap.prolong(&v);
        let sol = cg_solve(lap, &rhs, 1e-13, inner_cap)?;
        let mut w = lap.restrict(&sol.field);
        let nw = d_norm(&w);
        if !(nw > 0.0) {
            return Err(Error::Convergence { iterations: outer, residual: f64::NAN, tol });
        }
        for x in w.iter_mut() {
            *x /= nw;
        }
        lap.apply_dofs(&w, &mut hv);
        // Rayleigh quotient in the weighted metric (||w||_D = 1)
        lambda = w.iter().zip(hv.iter()).zip(lap.diag.iter()).map(|((a, b), wgt)| a * b * wgt).sum();
        let mut res = 0.0;
        for i in 0..n {
            let d = hv[i] - lambda * w[i];
            res += d * d;
        }
        let res = res.sqrt();
        v = w;
        if res <= tol {
            if v.iter().sum::<f64>() < 0.0 {
                for x in v.iter_mut() {
                    *x = -*x;
                }
            }
            return Ok(EigenPair { lambda, psi: lap.prolong(&v), residual: res, iterations: outer });
        }
    }
    Err(Error::Convergence { iterations: 1000, residual: lambda, tol })
}

/// Dense matrix of the homogeneous operator on its dof space. Tests only;
/// capped at 4096 sites.
pub fn dense_oracle(lap: &Laplacian) -> Result<DMatrix<f64>> {
    let n = lap.dof_count();
    if n > 4096 {
        return Err(Error::usage(format!("dense oracle capped at 4096 sites, got {n}")));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        lap.apply_dofs(&e, &mut col);
        for i in 0..n {
            m[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    Ok(m)
}

/// Dense solve of `Hu = rhs` on the dof space (LU with full pivoting).
pub fn dense_solve(lap: &Laplacian, rhs: &Field) -> Result<Field> {
    let m = dense_oracle(lap)?;
    let b = DVector::from_vec(lap.restrict(rhs));
    let lu = m.full_piv_lu();
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::domain("dense oracle: singular operator matrix"))?;
    Ok(lap.prolong(x.as_slice()))
}

/// Dense symmetric eigendecomposition of `D^{1/2} H D^{-1/2}`; returns all
/// eigenvalues ascending and, for the smallest, the eigenvector pulled back
/// to the original metric and normalized in it.
pub fn dense_symmetric_spectrum(lap: &Laplacian) -> Result<(Vec<f64>, Field)> {
    let m = dense_oracle(lap)?;
    let n = lap.dof_count();
    let mut s = m;
    for i in 0..n {
        for j in 0..n {
            let scale = (lap.diag[i] / lap.diag[j]).sqrt();
            s[(i, j)] *= scale;
        }
    }
    // enforce exact symmetry before factorization
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    let (evals, vectors) = crate::symeig::symmetric_eigen(&s)?;
    let mut v: Vec<f64> = (0..n).map(|i| vectors[(i, 0)] / lap.diag[i].sqrt()).collect();
    let norm = v.iter().zip(lap.diag.iter()).map(|(x, w)| x * x * w).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    if v.iter().sum::<f64>() < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    Ok((evals, lap.prolong(&v)))
}

/// Smallest nonzero eigenvalue of the periodic operator (dense; `N <= 8`
/// scale). The constant mode's zero eigenvalue is skipped.
pub fn dense_torus_gap(env: &Environment) -> Result<f64> {
    let lap = Laplacian::new(env, Bc::Periodic)?;
    let (evals, _) = dense_symmetric_spectrum(&lap)?;
    Ok(evals[1])
}
