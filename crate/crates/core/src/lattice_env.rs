//! Lattice geometry, i.i.d. environment sampling, periodic extension, and
//! environment serialization.
//!
//! Sites live on the cube `Q_N = [[1,N]]^d` (torus closure, stored as
//! coordinates `0..N`) or on the closed box `[[0,N+1]]^d` whose boundary is
//! `∂Q_N`. Conductances are attached to undirected nearest-neighbor edges,
//! one stored value per edge, so the symmetry `a(x,y) = a(y,x)` holds by
//! construction.
//!
//! Per-edge randomness is a pure function of the master seed and the edge's
//! absolute lattice coordinates, so environments are reproducible bit-for-bit
//! for any enumeration order or thread count, and tori of increasing side
//! periodize one and the same underlying i.i.d. field.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{hash_words, unit_open_closed, zigzag};

pub const MAX_DIM: usize = 8;

const EDGE_TAG: u64 = 0x45;
const SITE_TAG: u64 = 0x53;

/// Boundary closure of the finite lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// `Q_N` with periodic identification.
    Torus,
    /// `[[0,N+1]]^d` including the boundary `∂Q_N`.
    ClosedBox,
}

/// Finite lattice: dimension, side length, and closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub d: usize,
    pub n: usize,
    pub closure: Closure,
}

impl LatticeSpec {
    pub fn torus(d: usize, n: usize) -> Self {
        Self { d, n, closure: Closure::Torus }
    }

    pub fn closed_box(d: usize, n: usize) -> Self {
        Self { d, n, closure: Closure::ClosedBox }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.d > MAX_DIM {
            return Err(Error::parameter(format!(
                "dimension must be in 1..={MAX_DIM}, got {}",
                self.d
            )));
        }
        if self.n < 1 {
            return Err(Error::parameter("side length must be >= 1"));
        }
        Ok(())
    }

    /// Number of stored coordinates per axis (`N` on the torus, `N+2` on the box).
    #[inline]
    pub fn side(&self) -> usize {
        match self.closure {
            Closure::Torus => self.n,
            Closure::ClosedBox => self.n + 2,
        }
    }

    /// Total number of stored sites.
    #[inline]
    pub fn site_count(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    /// Number of interior sites (`N^d` for both closures).
    #[inline]
    pub fn interior_count(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Linear index of a coordinate tuple (lexicographic, first axis most
    /// significant).
    #[inline]
    pub fn site_index(&self, coords: &[usize]) -> usize {
        let s = self.side();
        let mut idx = 0;
        for &c in coords.iter() {
            debug_assert!(c < s);
            idx = idx * s + c;
        }
        idx
    }

    /// Coordinates of a linear site index.
    #[inline]
    pub fn site_coords(&self, mut idx: usize) -> Vec<usize> {
        let s = self.side();
        let mut coords = vec![0usize; self.d];
        for i in (0..self.d).rev() {
            coords[i] = idx % s;
            idx /= s;
        }
        coords
    }

    /// Coordinate of `site` along `axis` without materializing the full tuple.
    #[inline]
    pub fn coord_along(&self, site: usize, axis: usize) -> usize {
        let s = self.side();
        (site / s.pow((self.d - 1 - axis) as u32)) % s
    }

    /// Stride of `axis` in the linear index.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.side().pow((self.d - 1 - axis) as u32)
    }

    /// For a closed box: true when every coordinate lies in `1..=N`.
    #[inline]
    pub fn is_interior(&self, site: usize) -> bool {
        match self.closure {
            Closure::Torus => true,
            Closure::ClosedBox => {
                let s = self.side();
                let mut idx = site;
                for _ in 0..self.d {
                    let c = idx % s;
                    if c == 0 || c == s - 1 {
                        return false;
                    }
                    idx /= s;
                }
                true
            }
        }
    }

    /// Linear indices of all interior sites, in lexicographic order.
    pub fn interior_sites(&self) -> Vec<usize> {
        (0..self.site_count()).filter(|&s| self.is_interior(s)).collect()
    }

    /// Torus neighbor in `+axis` / `-axis` direction with wraparound.
    #[inline]
    pub fn torus_neighbor(&self, site: usize, axis: usize, positive: bool) -> usize {
        debug_assert_eq!(self.closure, Closure::Torus);
        let stride = self.stride(axis);
        let c = self.coord_along(site, axis);
        if positive {
            if c + 1 == self.n { site - c * stride } else { site + stride }
        } else if c == 0 {
            site + (self.n - 1) * stride
        } else {
            site - stride
        }
    }

    /// Box neighbor; `None` when the step leaves `[[0,N+1]]^d`.
    #[inline]
    pub fn box_neighbor(&self, site: usize, axis: usize, positive: bool) -> Option<usize> {
        debug_assert_eq!(self.closure, Closure::ClosedBox);
        let stride = self.stride(axis);
        let c = self.coord_along(site, axis);
        if positive {
            if c + 1 < self.side() { Some(site + stride) } else { None }
        } else if c > 0 {
            Some(site - stride)
        } else {
            None
        }
    }
}

/// Parametric family for i.i.d. conductances or killing potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Constant { c: f64 },
    /// Uniform on `[1/kappa, kappa]`, `kappa >= 1`.
    UniformElliptic { kappa: f64 },
    /// `hi` with probability `p`, `lo` otherwise.
    TwoPoint { p: f64, lo: f64, hi: f64 },
    /// `a = kappa * U^(gamma/(2-gamma))` with `U` uniform on (0,1]; satisfies
    /// `P(1/a >= s) = D0 * s^(1-2/gamma)` for `s >= 1/kappa`, where
    /// `D0 = kappa^(-(2-gamma)/gamma)`.
    PowerLowTail { gamma: f64, kappa: f64 },
}

/// What the draws are used for; conductances must be strictly positive while
/// killing potentials may vanish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleRole {
    Conductance,
    Potential,
}

impl DistributionSpec {
    pub fn validate(&self, role: SampleRole) -> Result<()> {
        match *self {
            DistributionSpec::Constant { c } => {
                let ok = match role {
                    SampleRole::Conductance => c > 0.0,
                    SampleRole::Potential => c >= 0.0,
                };
                if !ok {
                    return Err(Error::parameter(format!(
                        "constant value {c} out of range for {role:?}"
                    )));
                }
            }
            DistributionSpec::UniformElliptic { kappa } => {
                if !(kappa >= 1.0) {
                    return Err(Error::parameter(format!(
                        "uniform_elliptic requires kappa >= 1, got {kappa}"
                    )));
                }
            }
            DistributionSpec::TwoPoint { p, lo, hi } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::parameter(format!("two_point requires 0 <= p <= 1, got {p}")));
                }
                let lo_ok = match role {
                    SampleRole::Conductance => lo > 0.0,
                    SampleRole::Potential => lo >= 0.0,
                };
                if !lo_ok || !(lo <= hi) {
                    return Err(Error::parameter(format!(
                        "two_point requires 0 < lo <= hi (>= 0 for potentials), got lo={lo}, hi={hi}"
                    )));
                }
            }
            DistributionSpec::PowerLowTail { gamma, kappa } => {
                if !(gamma > 0.0 && gamma < 2.0) {
                    return Err(Error::parameter(format!(
                        "power_low_tail requires 0 < gamma < 2, got {gamma}"
                    )));
                }
                if !(kappa >= 1.0) {
                    return Err(Error::parameter(format!(
                        "power_low_tail requires kappa >= 1, got {kappa}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Inverse-CDF sample from a uniform draw `u` in (0, 1].
    #[inline]
    pub fn sample_unit(&self, u: f64) -> f64 {
        match *self {
            DistributionSpec::Constant { c } => c,
            DistributionSpec::UniformElliptic { kappa } => {
                let lo = 1.0 / kappa;
                lo + (kappa - lo) * (1.0 - u)
            }
            DistributionSpec::TwoPoint { p, lo, hi } => {
                if u <= p { hi } else { lo }
            }
            DistributionSpec::PowerLowTail { gamma, kappa } => {
                kappa * u.powf(gamma / (2.0 - gamma))
            }
        }
    }

    /// CDF `P(X <= t)`; used by the sampler self-checks.
    pub fn cdf(&self, t: f64) -> f64 {
        match *self {
            DistributionSpec::Constant { c } => {
                if t >= c { 1.0 } else { 0.0 }
            }
            DistributionSpec::UniformElliptic { kappa } => {
                let lo = 1.0 / kappa;
                ((t - lo) / (kappa - lo)).clamp(0.0, 1.0)
            }
            DistributionSpec::TwoPoint { p, lo, hi } => {
                if t >= hi {
                    1.0
                } else if t >= lo {
                    1.0 - p
                } else {
                    0.0
                }
            }
            DistributionSpec::PowerLowTail { gamma, kappa } => {
                if t <= 0.0 {
                    0.0
                } else if t >= kappa {
                    1.0
                } else {
                    (t / kappa).powf((2.0 - gamma) / gamma)
                }
            }
        }
    }

    /// Supremum of the support; the ellipticity upper bound `kappa` of the
    /// perturbation lemmas.
    pub fn upper_bound(&self) -> f64 {
        match *self {
            DistributionSpec::Constant { c } => c,
            DistributionSpec::UniformElliptic { kappa } => kappa,
            DistributionSpec::TwoPoint { hi, .. } => hi,
            DistributionSpec::PowerLowTail { kappa, .. } => kappa,
        }
    }

    /// Infimum of the support (0 for the power-tail family).
    pub fn lower_bound(&self) -> f64 {
        match *self {
            DistributionSpec::Constant { c } => c,
            DistributionSpec::UniformElliptic { kappa } => 1.0 / kappa,
            DistributionSpec::TwoPoint { lo, .. } => lo,
            DistributionSpec::PowerLowTail { .. } => 0.0,
        }
    }

    /// `D0` of the heavy-tail condition `P(1/a >= s) <= D0 s^(1-2/gamma)`,
    /// exact for the built-in power-tail sampler.
    pub fn tail_d0(&self) -> Option<f64> {
        match *self {
            DistributionSpec::PowerLowTail { gamma, kappa } => {
                Some(kappa.powf(-(2.0 - gamma) / gamma))
            }
            _ => None,
        }
    }

    /// Mean and variance of `theta = log(1 + V)` when draws are used as a
    /// killing potential. Closed forms where elementary, adaptive quadrature
    /// of the exact integral otherwise.
    pub fn theta_mean_var(&self) -> (f64, f64) {
        match *self {
            DistributionSpec::Constant { c } => ((1.0 + c).ln(), 0.0),
            DistributionSpec::TwoPoint { p, lo, hi } => {
                let tl = (1.0 + lo).ln();
                let th = (1.0 + hi).ln();
                let mean = (1.0 - p) * tl + p * th;
                (mean, p * (1.0 - p) * (th - tl) * (th - tl))
            }
            DistributionSpec::UniformElliptic { kappa } => {
                let lo = 1.0 / kappa;
                let len = kappa - lo;
                // antiderivatives of ln(1+v) and ln^2(1+v)
                let f1 = |v: f64| (1.0 + v) * (1.0 + v).ln() - v;
                let f2 = |v: f64| {
                    let l = (1.0 + v).ln();
                    (1.0 + v) * (l * l - 2.0 * l + 2.0)
                };
                let m1 = (f1(kappa) - f1(lo)) / len;
                let m2 = (f2(kappa) - f2(lo)) / len;
                (m1, m2 - m1 * m1)
            }
            DistributionSpec::PowerLowTail { gamma, kappa } => {
                let beta = gamma / (2.0 - gamma);
                let m1 = adaptive_simpson(&|u: f64| (1.0 + kappa * u.powf(beta)).ln(), 0.0, 1.0, 1e-12);
                let m2 = adaptive_simpson(
                    &|u: f64| {
                        let l = (1.0 + kappa * u.powf(beta)).ln();
                        l * l
                    },
                    0.0,
                    1.0,
                    1e-12,
                );
                (m1, m2 - m1 * m1)
            }
        }
    }
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive_simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let left = simpson(f, a, m);
    let right = simpson(f, m, b);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive_simpson_rec(f, a, m, left, 0.5 * tol, depth - 1)
            + adaptive_simpson_rec(f, m, b, right, 0.5 * tol, depth - 1)
    }
}

pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adaptive_simpson_rec(f, a, b, simpson(f, a, b), tol, 48)
}

/// One undirected lattice edge, identified by its base site and positive axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeId {
    pub site: usize,
    pub axis: usize,
}

/// Edge conductances on a finite lattice together with the law and seed that
/// generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub lattice: LatticeSpec,
    /// `None` when the weights were supplied explicitly.
    pub dist: Option<DistributionSpec>,
    pub seed: u64,
    /// Flat weights in canonical edge order (lexicographic site index, then
    /// axis).
    weights: Vec<f64>,
    /// Per-site offset into `weights`; `edge_start[site+1] - edge_start[site]`
    /// is the number of outgoing (positive-axis) edges at `site`.
    edge_start: Vec<u32>,
}

impl Environment {
    /// One i.i.d. draw per undirected edge; deterministic in `(lattice, dist,
    /// seed)` and independent of enumeration order.
    pub fn sample(lattice: LatticeSpec, dist: DistributionSpec, seed: u64) -> Result<Self> {
        lattice.validate()?;
        dist.validate(SampleRole::Conductance)?;
        let mut env = Self::empty(lattice);
        env.dist = Some(dist);
        env.seed = seed;
        let mut coords;
        for site in 0..lattice.site_count() {
            coords = lattice.site_coords(site);
            for axis in 0..lattice.d {
                if !env.has_out_edge(site, axis) {
                    continue;
                }
                let u = edge_unit_draw(seed, &coords, axis);
                env.weights.push(dist.sample_unit(u));
            }
        }
        debug_assert_eq!(env.weights.len(), env.edge_start[lattice.site_count()] as usize);
        Ok(env)
    }

    /// Environment with explicitly given weights in canonical edge order.
    pub fn from_weights(lattice: LatticeSpec, weights: Vec<f64>) -> Result<Self> {
        lattice.validate()?;
        let mut env = Self::empty(lattice);
        if weights.len() != env.edge_start[lattice.site_count()] as usize {
            return Err(Error::parameter(format!(
                "expected {} weights, got {}",
                env.edge_start[lattice.site_count()],
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::parameter("all conductances must be strictly positive and finite"));
        }
        env.weights = weights;
        Ok(env)
    }

    fn empty(lattice: LatticeSpec) -> Self {
        let sites = lattice.site_count();
        let mut edge_start = Vec::with_capacity(sites + 1);
        let mut count: u32 = 0;
        for site in 0..sites {
            edge_start.push(count);
            for axis in 0..lattice.d {
                let out = match lattice.closure {
                    Closure::Torus => true,
                    Closure::ClosedBox => lattice.coord_along(site, axis) + 1 < lattice.side(),
                };
                if out {
                    count += 1;
                }
            }
        }
        edge_start.push(count);
        Self {
            lattice,
            dist: None,
            seed: 0,
            weights: Vec::with_capacity(count as usize),
            edge_start,
        }
    }

    #[inline]
    fn has_out_edge(&self, site: usize, axis: usize) -> bool {
        match self.lattice.closure {
            Closure::Torus => true,
            Closure::ClosedBox => self.lattice.coord_along(site, axis) + 1 < self.lattice.side(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.weights.len()
    }

    /// Flat index of the outgoing edge `(site, +axis)`.
    #[inline]
    pub fn edge_index(&self, site: usize, axis: usize) -> usize {
        debug_assert!(self.has_out_edge(site, axis));
        match self.lattice.closure {
            Closure::Torus => site * self.lattice.d + axis,
            Closure::ClosedBox => {
                let mut idx = self.edge_start[site] as usize;
                for a in 0..axis {
                    if self.has_out_edge(site, a) {
                        idx += 1;
                    }
                }
                idx
            }
        }
    }

    /// Conductance of the outgoing edge `(site, +axis)`.
    #[inline]
    pub fn weight(&self, site: usize, axis: usize) -> f64 {
        self.weights[self.edge_index(site, axis)]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weight(&mut self, edge: EdgeId, value: f64) -> Result<()> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::parameter("conductance must be strictly positive"));
        }
        let idx = self.edge_index(edge.site, edge.axis);
        self.weights[idx] = value;
        Ok(())
    }

    /// All edges in canonical order.
    pub fn edges(&self) -> Vec<EdgeId> {
        let mut out = Vec::with_capacity(self.edge_count());
        for site in 0..self.lattice.site_count() {
            for axis in 0..self.lattice.d {
                if self.has_out_edge(site, axis) {
                    out.push(EdgeId { site, axis });
                }
            }
        }
        out
    }

    /// Periodically extended conductance between two neighboring points of
    /// `Z^d`; torus closure only.
    pub fn periodic_weight(&self, x: &[i64], y: &[i64]) -> Result<f64> {
        if self.lattice.closure != Closure::Torus {
            return Err(Error::usage("periodic_weight requires a torus environment"));
        }
        if x.len() != self.lattice.d || y.len() != self.lattice.d {
            return Err(Error::usage("coordinate dimension mismatch"));
        }
        let mut axis = None;
        for i in 0..self.lattice.d {
            match (y[i] - x[i]).abs() {
                0 => {}
                1 => {
                    if axis.replace(i).is_some() {
                        return Err(Error::usage("points are not lattice neighbors"));
                    }
                }
                _ => return Err(Error::usage("points are not lattice neighbors")),
            }
        }
        let axis = axis.ok_or_else(|| Error::usage("points are not lattice neighbors"))?;
        let n = self.lattice.n as i64;
        // base site of the undirected edge: the lesser endpoint along `axis`
        let base: Vec<usize> = (0..self.lattice.d)
            .map(|i| {
                let c = if i == axis { x[i].min(y[i]) } else { x[i] };
                (c.rem_euclid(n)) as usize
            })
            .collect();
        Ok(self.weight(self.lattice.site_index(&base), axis))
    }

    /// `a(x) = sum of the incident edge conductances` (wrapped on the torus,
    /// all in-box edges on the closed box).
    pub fn site_weight(&self, site: usize) -> f64 {
        let lat = self.lattice;
        let mut total = 0.0;
        match lat.closure {
            Closure::Torus => {
                for axis in 0..lat.d {
                    total += self.weight(site, axis);
                    let prev = lat.torus_neighbor(site, axis, false);
                    total += self.weight(prev, axis);
                }
            }
            Closure::ClosedBox => {
                for axis in 0..lat.d {
                    if self.has_out_edge(site, axis) {
                        total += self.weight(site, axis);
                    }
                    if let Some(prev) = lat.box_neighbor(site, axis, false) {
                        total += self.weight(prev, axis);
                    }
                }
            }
        }
        total
    }

    /// Total site weight `a(Q_N)` over interior sites (all sites of a torus).
    pub fn total_interior_site_weight(&self) -> f64 {
        match self.lattice.closure {
            Closure::Torus => (0..self.lattice.site_count()).map(|s| self.site_weight(s)).sum(),
            Closure::ClosedBox => self
                .lattice
                .interior_sites()
                .iter()
                .map(|&s| self.site_weight(s))
                .sum(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = EnvFile {
            version: ENV_FORMAT_VERSION,
            d: self.lattice.d,
            n: self.lattice.n,
            closure: self.lattice.closure,
            dist: self.dist,
            seed: self.seed,
            weights: self.weights.clone(),
        };
        let body = serde_json::to_string(&file)
            .map_err(|e| Error::format(format!("serialize: {e}")))?;
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path)?;
        let file: EnvFile = serde_json::from_str(&body)
            .map_err(|e| Error::format(format!("parse {}: {e}", path.display())))?;
        if file.version != ENV_FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported environment format version {} (expected {})",
                file.version, ENV_FORMAT_VERSION
            )));
        }
        let lattice = LatticeSpec { d: file.d, n: file.n, closure: file.closure };
        let mut env = Environment::from_weights(lattice, file.weights)?;
        env.dist = file.dist;
        env.seed = file.seed;
        Ok(env)
    }
}

pub const ENV_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    version: u32,
    d: usize,
    n: usize,
    closure: Closure,
    dist: Option<DistributionSpec>,
    seed: u64,
    weights: Vec<f64>,
}

/// Uniform (0,1] draw for the edge with base coordinates `coords` and
/// direction `axis`, keyed on absolute coordinates.
pub fn edge_unit_draw(seed: u64, coords: &[usize], axis: usize) -> f64 {
    let mut words = [0u64; MAX_DIM + 3];
    words[0] = EDGE_TAG;
    words[1] = seed;
    for (i, &c) in coords.iter().enumerate() {
        words[2 + i] = zigzag(c as i64);
    }
    words[2 + coords.len()] = axis as u64;
    unit_open_closed(hash_words(&words[..coords.len() + 3]))
}

/// Uniform (0,1] draw for the site with absolute coordinates `coords`;
/// distinct stream from the edge draws.
pub fn site_unit_draw(seed: u64, coords: &[i64]) -> f64 {
    let mut words = [0u64; MAX_DIM + 2];
    words[0] = SITE_TAG;
    words[1] = seed;
    for (i, &c) in coords.iter().enumerate() {
        words[2 + i] = zigzag(c);
    }
    unit_open_closed(hash_words(&words[..coords.len() + 2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_index_round_trip() {
        for lat in [LatticeSpec::torus(3, 4), LatticeSpec::closed_box(2, 5), LatticeSpec::torus(1, 7)] {
            for site in 0..lat.site_count() {
                let coords = lat.site_coords(site);
                assert_eq!(lat.site_index(&coords), site);
                for (axis, &c) in coords.iter().enumerate() {
                    assert_eq!(lat.coord_along(site, axis), c);
                }
            }
        }
    }

    #[test]
    fn site_counts() {
        assert_eq!(LatticeSpec::torus(2, 4).site_count(), 16);
        assert_eq!(LatticeSpec::closed_box(2, 4).site_count(), 36);
        assert_eq!(LatticeSpec::closed_box(3, 2).site_count(), 64);
        assert_eq!(LatticeSpec::torus(2, 4).interior_count(), 16);
        assert_eq!(LatticeSpec::closed_box(2, 4).interior_count(), 16);
    }

    #[test]
    fn constant_env_all_weights_one() {
        let env = Environment::sample(
            LatticeSpec::torus(2, 4),
            DistributionSpec::Constant { c: 1.0 },
            7,
        )
        .unwrap();
        assert_eq!(env.edge_count(), 32);
        assert!(env.weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn elliptic_support() {
        let env = Environment::sample(
            LatticeSpec::torus(3, 4),
            DistributionSpec::UniformElliptic { kappa: 2.0 },
            1,
        )
        .unwrap();
        assert!(env.weights().iter().all(|&w| (0.5..=2.0).contains(&w)));
    }

    #[test]
    fn sampling_deterministic_and_seed_sensitive() {
        let lat = LatticeSpec::torus(2, 6);
        let dist = DistributionSpec::UniformElliptic { kappa: 3.0 };
        let a = Environment::sample(lat, dist, 11).unwrap();
        let b = Environment::sample(lat, dist, 11).unwrap();
        let c = Environment::sample(lat, dist, 12).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_ne!(a.weights(), c.weights());
    }

    #[test]
    fn per_edge_draws_are_enumeration_independent() {
        // re-derive each weight directly from its edge identity, in reversed
        // order, and compare against the canonical enumeration
        let lat = LatticeSpec::closed_box(2, 3);
        let dist = DistributionSpec::UniformElliptic { kappa: 2.0 };
        let env = Environment::sample(lat, dist, 99).unwrap();
        let mut edges = env.edges();
        edges.reverse();
        for e in edges {
            let coords = lat.site_coords(e.site);
            let w = dist.sample_unit(edge_unit_draw(99, &coords, e.axis));
            assert_eq!(w, env.weight(e.site, e.axis));
        }
    }

    #[test]
    fn torus_periodization_is_consistent_across_sides() {
        // shared absolute edges of the N=4 and N=8 torus carry the same draw
        let dist = DistributionSpec::UniformElliptic { kappa: 2.0 };
        let small = Environment::sample(LatticeSpec::torus(2, 4), dist, 5).unwrap();
        let large = Environment::sample(LatticeSpec::torus(2, 8), dist, 5).unwrap();
        for x in 0..4usize {
            for y in 0..4usize {
                // interior (non-wrapping) edges of the small torus
                if x + 1 < 4 {
                    let ws = small.weight(small.lattice.site_index(&[x, y]), 0);
                    let wl = large.weight(large.lattice.site_index(&[x, y]), 0);
                    assert_eq!(ws, wl);
                }
            }
        }
    }

    #[test]
    fn periodic_weight_wraps() {
        let env = Environment::sample(
            LatticeSpec::torus(2, 4),
            DistributionSpec::UniformElliptic { kappa: 2.0 },
            3,
        )
        .unwrap();
        // wrap across the x-axis: edge {(3,1),(4,1)} == stored edge at base (3,1)
        let w = env.periodic_weight(&[4, 1], &[3, 1]).unwrap();
        assert_eq!(w, env.weight(env.lattice.site_index(&[3, 1]), 0));
        // interior pair
        let w = env.periodic_weight(&[1, 1], &[2, 1]).unwrap();
        assert_eq!(w, env.weight(env.lattice.site_index(&[1, 1]), 0));
        // total function on neighbor pairs of Z^d: brute-force mod-N reduction
        let reduce = |p: &[i64]| -> Vec<i64> { p.iter().map(|&c| c.rem_euclid(4)).collect() };
        for (x, y) in [([7i64, -1], [7i64, 0]), ([-5, 2], [-4, 2]), ([8, 8], [8, 7])] {
            let direct = env.periodic_weight(&x, &y).unwrap();
            let rx = reduce(&x);
            let ry = reduce(&y);
            // reduced pair may wrap; resolve through periodic_weight again on
            // the in-box representatives
            let via_reduction = env.periodic_weight(&rx, &ry).unwrap_or_else(|_| {
                // representatives may be non-adjacent after independent reduction
                // when the edge wraps; re-attach the wrapped displacement
                let mut ry2 = ry.clone();
                for i in 0..2 {
                    let diff = y[i] - x[i];
                    ry2[i] = rx[i] + diff;
                }
                env.periodic_weight(&rx, &ry2).unwrap()
            });
            assert_eq!(direct, via_reduction);
        }
        assert!(env.periodic_weight(&[0, 0], &[1, 1]).is_err());
    }

    #[test]
    fn site_weight_matches_direct_loop() {
        let env = Environment::sample(
            LatticeSpec::torus(2, 4),
            DistributionSpec::Constant { c: 1.0 },
            7,
        )
        .unwrap();
        for s in 0..16 {
            assert_eq!(env.site_weight(s), 4.0);
        }

        // d=1 torus: a(i) = w(i-1) + w(i)
        let w = vec![1.0, 2.0, 3.0, 4.0];
        let env = Environment::from_weights(LatticeSpec::torus(1, 4), w.clone()).unwrap();
        for i in 0..4 {
            let expect = w[(i + 3) % 4] + w[i];
            assert_eq!(env.site_weight(i), expect);
        }

        // random env vs direct neighbor summation
        let env = Environment::sample(
            LatticeSpec::closed_box(2, 3),
            DistributionSpec::UniformElliptic { kappa: 2.0 },
            13,
        )
        .unwrap();
        let lat = env.lattice;
        for site in 0..lat.site_count() {
            let mut direct = 0.0;
            for axis in 0..lat.d {
                if let Some(nb) = lat.box_neighbor(site, axis, true) {
                    let base = site.min(nb);
                    direct += env.weight(base, axis);
                }
                if let Some(nb) = lat.box_neighbor(site, axis, false) {
                    let base = site.min(nb);
                    direct += env.weight(base, axis);
                }
            }
            assert!((env.site_weight(site) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn power_low_tail_cdf_and_example() {
        // gamma=1, kappa=1 => a = U uniform on (0,1]
        let dist = DistributionSpec::PowerLowTail { gamma: 1.0, kappa: 1.0 };
        let mut count = 0usize;
        let m = 1_000_000usize;
        for i in 0..m {
            let u = site_unit_draw(3, &[i as i64]);
            if dist.sample_unit(u) <= 0.1 {
                count += 1;
            }
        }
        let p_hat = count as f64 / m as f64;
        let sigma = (0.1f64 * 0.9 / m as f64).sqrt();
        assert!((p_hat - 0.1).abs() <= 3.0 * sigma, "p_hat = {p_hat}");
    }

    #[test]
    fn power_low_tail_kolmogorov_smirnov() {
        let dist = DistributionSpec::PowerLowTail { gamma: 0.8, kappa: 2.0 };
        let m = 1_000_000usize;
        let mut draws: Vec<f64> = (0..m)
            .map(|i| dist.sample_unit(site_unit_draw(17, &[i as i64])))
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate() {
            let f = dist.cdf(x);
            ks = ks.max((f - i as f64 / m as f64).abs());
            ks = ks.max(((i + 1) as f64 / m as f64 - f).abs());
        }
        // sqrt(n) * D_n beyond 2.0 has probability < 1e-3 under the exact law
        assert!(ks * (m as f64).sqrt() <= 2.0, "KS statistic {ks}");
    }

    #[test]
    fn tail_condition_constants() {
        let dist = DistributionSpec::PowerLowTail { gamma: 0.8, kappa: 2.0 };
        let d0 = dist.tail_d0().unwrap();
        assert!((d0 - 2.0f64.powf(-1.5)).abs() < 1e-15);
        // P(1/a >= s) = P(a <= 1/s) = (kappa s)^(-(2-gamma)/gamma) = D0 * s^(1-2/gamma)
        let s = 3.0f64;
        let p = dist.cdf(1.0 / s);
        assert!((p - d0 * s.powf(1.0 - 2.0 / 0.8)).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(DistributionSpec::PowerLowTail { gamma: 2.0, kappa: 1.0 }
            .validate(SampleRole::Conductance)
            .is_err());
        assert!(DistributionSpec::Constant { c: 0.0 }.validate(SampleRole::Conductance).is_err());
        assert!(DistributionSpec::Constant { c: 0.0 }.validate(SampleRole::Potential).is_ok());
        assert!(DistributionSpec::TwoPoint { p: 0.5, lo: 0.0, hi: 1.0 }
            .validate(SampleRole::Conductance)
            .is_err());
        assert!(DistributionSpec::TwoPoint { p: 0.5, lo: 0.0, hi: 1.0 }
            .validate(SampleRole::Potential)
            .is_ok());
        assert!(DistributionSpec::UniformElliptic { kappa: 0.5 }
            .validate(SampleRole::Conductance)
            .is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        let env = Environment::sample(
            LatticeSpec::closed_box(3, 2),
            DistributionSpec::TwoPoint { p: 0.5, lo: 0.5, hi: 2.0 },
            123,
        )
        .unwrap();
        env.save(&path).unwrap();
        let back = Environment::load(&path).unwrap();
        assert_eq!(env, back);
    }

    #[test]
    fn load_truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        let env = Environment::sample(
            LatticeSpec::torus(2, 3),
            DistributionSpec::Constant { c: 1.0 },
            1,
        )
        .unwrap();
        env.save(&path).unwrap();
        let body = fs::read_to_string(&path).unwrap();
        fs::write(&path, &body[..body.len() / 2]).unwrap();
        match Environment::load(&path) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        let env = Environment::sample(
            LatticeSpec::torus(2, 3),
            DistributionSpec::Constant { c: 1.0 },
            1,
        )
        .unwrap();
        env.save(&path).unwrap();
        let body = fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":9");
        fs::write(&path, body).unwrap();
        match Environment::load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("version")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn theta_moments_two_point() {
        // theta in {0, 1} with probability 1/2 each: Var = 1/4
        let v = std::f64::consts::E - 1.0;
        let dist = DistributionSpec::TwoPoint { p: 0.5, lo: 0.0, hi: v };
        let (mean, var) = dist.theta_mean_var();
        assert!((mean - 0.5).abs() < 1e-12);
        assert!((var - 0.25).abs() < 1e-12);
    }

    #[test]
    fn theta_moments_match_monte_carlo() {
        for dist in [
            DistributionSpec::UniformElliptic { kappa: 2.0 },
            DistributionSpec::PowerLowTail { gamma: 1.0, kappa: 1.0 },
        ] {
            let (mean, var) = dist.theta_mean_var();
            let m = 200_000;
            let mut s = 0.0;
            let mut s2 = 0.0;
            for i in 0..m {
                let v = dist.sample_unit(site_unit_draw(7, &[i as i64]));
                let t = (1.0 + v).ln();
                s += t;
                s2 += t * t;
            }
            let mc_mean = s / m as f64;
            let mc_var = s2 / m as f64 - mc_mean * mc_mean;
            assert!((mean - mc_mean).abs() < 5e-3, "{dist:?}: {mean} vs {mc_mean}");
            assert!((var - mc_var).abs() < 5e-3, "{dist:?}: {var} vs {mc_var}");
        }
    }
}
