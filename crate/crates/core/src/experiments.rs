//! Seeded Monte Carlo sweeps over environments, streaming statistics, tail
//! profiles, scaling fits, and checks against the concentration bounds.
//!
//! Every sample's environment is seeded by `hash(master_seed, N, i)`, so any
//! CSV row can be reproduced standalone and reruns are byte-identical at any
//! thread count (samples are computed in parallel and reduced in canonical
//! index order; the `wall_ms` column is fixed at 0 to keep the output a pure
//! function of the configuration).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{diffusion_matrix, solve_corrector};
use crate::error::{Error, Result};
use crate::lattice_env::{DistributionSpec, Environment, LatticeSpec, SampleRole};
use crate::potential_walk::{point_geometry, point_statistic, PotentialField};
use crate::rng::hash_words;
use crate::spectral::dirichlet_spectral_statistic;

const SWEEP_SAMPLE_TAG: u64 = 0x57;

/// Streaming mean/variance accumulator with exact merge semantics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
    pub min: f64,
    pub max: f64,
}

impl SampleStats {
    pub fn new() -> Self {
        Self { n: 0, mean: 0.0, m2: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    /// Combine two accumulators (Chan's parallel update).
    pub fn merge(&self, other: &SampleStats) -> SampleStats {
        if self.n == 0 {
            return other.clone();
        }
        if other.n == 0 {
            return self.clone();
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * self.n as f64 * other.n as f64 / n as f64;
        SampleStats { n, mean, m2, min: self.min.min(other.min), max: self.max.max(other.max) }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the variance estimate (normal approximation).
    pub fn variance_stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.variance() * (2.0 / (self.n - 1) as f64).sqrt()
        }
    }

    pub fn mean_stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Concentration bounds with their applicability guards. Constants are in
/// terms of `C0 = 32 d kappa^3` and the heavy-tail constants `(gamma, D0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BoundSpec {
    /// Elliptic conductances, d >= 3: `Var(f_N) <= kappa C0 N^{2-d}`,
    /// tail `4 exp(-t / sqrt(kappa C0))` at threshold scale `N^{(2-d)/2}`.
    EffectiveConductanceElliptic { d: usize, kappa: f64 },
    /// Bounded (not elliptic) conductances, d >= 5:
    /// `Var(f_N) <= 128 d kappa^2 N^{4-d}`, tail `4 exp(-t/(8 kappa sqrt(2d)))`
    /// at scale `N^{(4-d)/2}`.
    EffectiveConductanceBounded { d: usize, kappa: f64 },
    /// Heavy lower tail `P(1/a >= s) <= D0 s^{1-2/gamma}`:
    /// `Var(f_N) <= 16 C0 (D0+1) N^{2-d+gamma}` for d >= 4 or (d = 3,
    /// 1/2 <= gamma < 1); for d = 3, gamma <= 1/2 the exponent saturates at
    /// `N^{-1/2}`. The tail constants are universal but not quantified, so
    /// only the variance form is checkable.
    EffectiveConductanceHeavyTail { d: usize, kappa: f64, gamma: f64, d0: f64 },
    /// Spectral statistic `N^2 lambda_N`: `Var <= C N^{2-d}` with C unknown;
    /// only the rate is checkable.
    SpectralGapRate { d: usize },
    /// Diffusion matrix entries: some negative rate `N^{-2 nu(d)}` with
    /// `nu(d)` depending on an unquantified regularity exponent; only
    /// slope <= 0 is checkable.
    DiffusionRate { d: usize },
}

impl BoundSpec {
    pub fn c0(d: usize, kappa: f64) -> f64 {
        32.0 * d as f64 * kappa.powi(3)
    }

    /// Variance bound at side `n`; `None` when the guard fails or the
    /// constant is not quantified.
    pub fn variance_bound(&self, n: usize) -> Option<f64> {
        let nf = n as f64;
        match *self {
            BoundSpec::EffectiveConductanceElliptic { d, kappa } => {
                if d < 3 {
                    return None;
                }
                Some(kappa * Self::c0(d, kappa) * nf.powi(2 - d as i32))
            }
            BoundSpec::EffectiveConductanceBounded { d, kappa } => {
                if d < 5 {
                    return None;
                }
                Some(128.0 * d as f64 * kappa * kappa * nf.powi(4 - d as i32))
            }
            BoundSpec::EffectiveConductanceHeavyTail { d, kappa, gamma, d0 } => {
                let c = 16.0 * Self::c0(d, kappa) * (d0 + 1.0);
                if d >= 4 || (d == 3 && (0.5..1.0).contains(&gamma)) {
                    Some(c * nf.powf(2.0 - d as f64 + gamma))
                } else if d == 3 && gamma <= 0.5 {
                    Some(c * nf.powf(-0.5))
                } else {
                    None
                }
            }
            BoundSpec::SpectralGapRate { .. } | BoundSpec::DiffusionRate { .. } => None,
        }
    }

    /// Exponent `beta` in the variance bound `C N^{-beta}`; the scaling-fit
    /// verdict asserts `slope <= -beta + 0.5`.
    pub fn variance_exponent(&self) -> f64 {
        match *self {
            BoundSpec::EffectiveConductanceElliptic { d, .. } => d as f64 - 2.0,
            BoundSpec::EffectiveConductanceBounded { d, .. } => d as f64 - 4.0,
            BoundSpec::EffectiveConductanceHeavyTail { d, gamma, .. } => {
                if d == 3 && gamma <= 0.5 {
                    0.5
                } else {
                    d as f64 - 2.0 - gamma
                }
            }
            BoundSpec::SpectralGapRate { d } => d as f64 - 2.0,
            BoundSpec::DiffusionRate { .. } => 0.0,
        }
    }

    /// Threshold scale exponent `rho`: tails are profiled at
    /// `|f - mean| >= t N^{-rho}`.
    pub fn tail_rho(&self) -> f64 {
        match *self {
            BoundSpec::EffectiveConductanceElliptic { d, .. } => (d as f64 - 2.0) / 2.0,
            BoundSpec::EffectiveConductanceBounded { d, .. } => (d as f64 - 4.0) / 2.0,
            BoundSpec::EffectiveConductanceHeavyTail { .. } => 0.0,
            BoundSpec::SpectralGapRate { d } => (d as f64 - 2.0) / 2.0,
            BoundSpec::DiffusionRate { .. } => 0.0,
        }
    }

    /// Tail bound at threshold parameter `t`, where quantified.
    pub fn tail_bound(&self, t: f64) -> Option<f64> {
        match *self {
            BoundSpec::EffectiveConductanceElliptic { d, kappa } => {
                Some(4.0 * (-t / (kappa * Self::c0(d, kappa)).sqrt()).exp())
            }
            BoundSpec::EffectiveConductanceBounded { d, kappa } => {
                Some(4.0 * (-t / (8.0 * kappa * (2.0 * d as f64).sqrt())).exp())
            }
            _ => None,
        }
    }
}

/// Quantity computed per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepQuantity {
    DiffusionEntry { i: usize, j: usize },
    EffectiveConductance,
    SpectralStatistic,
    PotentialStatistic,
}

impl SweepQuantity {
    pub fn label(&self) -> String {
        match self {
            SweepQuantity::DiffusionEntry { i, j } => format!("diffusion_{i}{j}"),
            SweepQuantity::EffectiveConductance => "effective_conductance".into(),
            SweepQuantity::SpectralStatistic => "spectral_statistic".into(),
            SweepQuantity::PotentialStatistic => "potential_statistic".into(),
        }
    }
}

/// Monte Carlo sweep description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub quantity: SweepQuantity,
    pub d: usize,
    pub n_list: Vec<usize>,
    pub dist: DistributionSpec,
    /// Killing potential law for the potential statistic.
    pub pot_dist: Option<DistributionSpec>,
    pub samples: usize,
    pub master_seed: u64,
    pub tol: f64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 1 {
            return Err(Error::usage("samples must be >= 1"));
        }
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::usage("N list must be strictly increasing and nonempty"));
        }
        self.dist.validate(SampleRole::Conductance)?;
        if let Some(p) = &self.pot_dist {
            p.validate(SampleRole::Potential)?;
        }
        if matches!(self.quantity, SweepQuantity::PotentialStatistic) && self.pot_dist.is_none() {
            return Err(Error::usage("potential statistic requires pot_dist"));
        }
        if let SweepQuantity::DiffusionEntry { i, j } = self.quantity {
            if i >= self.d || j >= self.d {
                return Err(Error::usage("diffusion entry indices must be < d"));
            }
        }
        if self.tol <= 0.0 {
            return Err(Error::usage("tol must be positive"));
        }
        Ok(())
    }

    /// Seed of sample `(n, i)`; re-running any single pair standalone
    /// reproduces the row.
    pub fn sample_seed(&self, n: usize, i: usize) -> u64 {
        hash_words(&[SWEEP_SAMPLE_TAG, self.master_seed, n as u64, i as u64])
    }

    /// Deterministic identifier derived from the configuration.
    pub fn run_id(&self) -> String {
        let body = serde_json::to_string(self).expect("config serializes");
        let mut words: Vec<u64> = body.as_bytes().chunks(8).map(|c| {
            let mut w = [0u8; 8];
            w[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(w)
        }).collect();
        words.push(body.len() as u64);
        format!("{:016x}", hash_words(&words))
    }
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub run_id: String,
    pub quantity: String,
    pub d: usize,
    pub n: usize,
    pub sample: usize,
    pub seed: u64,
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub wall_ms: u64,
    pub flag: String,
}

/// Per-N aggregation with retained samples for tail profiling.
#[derive(Debug, Clone)]
pub struct SweepGroup {
    pub n: usize,
    pub stats: SampleStats,
    pub values: Vec<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub run_id: String,
    pub rows: Vec<SweepRow>,
    pub groups: Vec<SweepGroup>,
}

/// Evaluate one sample: (value, residual, iterations).
pub fn compute_sample(config: &SweepConfig, n: usize, seed: u64) -> Result<(f64, f64, usize)> {
    match config.quantity {
        SweepQuantity::DiffusionEntry { i, j } => {
            let env = Environment::sample(LatticeSpec::torus(config.d, n), config.dist, seed)?;
            let corr = solve_corrector(&env, config.tol)?;
            let diff = diffusion_matrix(&env, &corr)?;
            Ok((diff.entry(i, j), corr.residual, corr.iterations))
        }
        SweepQuantity::EffectiveConductance => {
            let env = Environment::sample(LatticeSpec::closed_box(config.d, n), config.dist, seed)?;
            let sol = crate::conductance::solve_mixed_potential(&env, config.tol)?;
            Ok((sol.f, sol.residual, sol.iterations))
        }
        SweepQuantity::SpectralStatistic => {
            let env = Environment::sample(LatticeSpec::closed_box(config.d, n), config.dist, seed)?;
            let sol = dirichlet_spectral_statistic(&env, config.tol)?;
            Ok((sol.f, sol.residual, sol.iterations))
        }
        SweepQuantity::PotentialStatistic => {
            let direction: Vec<i64> =
                (0..config.d).map(|k| if k == 0 { 1 } else { 0 }).collect();
            let geo = point_geometry(config.d, &direction, n)?;
            let env = Environment::sample(geo.env_lattice, config.dist, seed)?;
            let pot = PotentialField::sample(
                geo.env_lattice,
                geo.origin.clone(),
                config.pot_dist.expect("validated"),
                seed,
            )?;
            let stat = point_statistic(&env, &pot, &geo.source, &direction, n, config.tol)?;
            Ok((stat.f, stat.green.truncation_gap, stat.green.iterations))
        }
    }
}

/// Run the sweep. Samples are computed in parallel; rows and statistics are
/// reduced in canonical `(N, i)` order so the output does not depend on the
/// thread count. Failed samples are flagged and excluded from statistics; a
/// failure fraction above 5% aborts the sweep.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let run_id = config.run_id();
    let label = config.quantity.label();
    let mut rows = Vec::with_capacity(config.n_list.len() * config.samples);
    let mut groups = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let outcomes: Vec<(u64, Result<(f64, f64, usize)>)> = (0..config.samples)
            .into_par_iter()
            .map(|i| {
                let seed = config.sample_seed(n, i);
                (seed, compute_sample(config, n, seed))
            })
            .collect();
        let mut stats = SampleStats::new();
        let mut values = Vec::with_capacity(config.samples);
        let mut failures = 0usize;
        for (i, (seed, outcome)) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok((value, residual, iterations)) => {
                    stats.push(value);
                    values.push(value);
                    rows.push(SweepRow {
                        run_id: run_id.clone(),
                        quantity: label.clone(),
                        d: config.d,
                        n,
                        sample: i,
                        seed,
                        value,
                        residual,
                        iterations,
                        wall_ms: 0,
                        flag: String::new(),
                    });
                }
                Err(err) => {
                    failures += 1;
                    rows.push(SweepRow {
                        run_id: run_id.clone(),
                        quantity: label.clone(),
                        d: config.d,
                        n,
                        sample: i,
                        seed,
                        value: f64::NAN,
                        residual: f64::NAN,
                        iterations: 0,
                        wall_ms: 0,
                        flag: format!("solver_error: {err}").replace([',', '\n'], ";"),
                    });
                }
            }
        }
        if failures * 20 > config.samples {
            return Err(Error::SweepQuality(format!(
                "{failures}/{} samples failed at N = {n}",
                config.samples
            )));
        }
        groups.push(SweepGroup { n, stats, values, failures });
    }
    Ok(SweepResult { run_id, rows, groups })
}

pub const CSV_HEADER: &str = "run_id,quantity,d,N,sample,seed,value,residual,iterations,wall_ms,flag";

/// Render rows as CSV (fixed header, shortest round-trip float formatting).
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.run_id,
            r.quantity,
            r.d,
            r.n,
            r.sample,
            r.seed,
            r.value,
            r.residual,
            r.iterations,
            r.wall_ms,
            r.flag
        ));
    }
    out
}

/// One row of a tail-exceedance profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    /// Absolute threshold `t * N^{-rho}`.
    pub threshold: f64,
    pub exceedances: usize,
    pub empirical: f64,
    /// Quantified bound value, when the theorem provides one.
    pub bound: Option<f64>,
    /// Binomial 3-sigma allowance at the bound (or at the empirical rate
    /// when no bound is quantified).
    pub sigma3: f64,
    /// `empirical <= bound + 3 sigma`; vacuously true without a bound.
    pub pass: bool,
}

/// Empirical exceedance frequencies `P(|f - mean| >= t N^{-rho})` against the
/// theorem's tail bound. The mean is the sample mean (the true mean is not
/// available), which widens the Monte Carlo band but changes nothing at the
/// 3-sigma resolution used here.
pub fn tail_profile(
    samples: &[f64],
    n: usize,
    rho: f64,
    thresholds: &[f64],
    bound: Option<&BoundSpec>,
) -> Result<Vec<TailRow>> {
    if samples.is_empty() {
        return Err(Error::usage("tail profile needs a nonempty sample set"));
    }
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let scale = (n as f64).powf(-rho);
    let mut out = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let threshold = t * scale;
        let exceedances = samples.iter().filter(|&&x| (x - mean).abs() >= threshold).count();
        let empirical = exceedances as f64 / m;
        let bound_value = bound.and_then(|b| b.tail_bound(t)).map(|b| b.min(1.0));
        let p_ref = bound_value.unwrap_or(empirical).clamp(0.0, 1.0);
        let sigma3 = 3.0 * (p_ref * (1.0 - p_ref) / m).sqrt();
        let pass = match bound_value {
            Some(b) => empirical <= b + sigma3,
            None => true,
        };
        out.push(TailRow { t, threshold, exceedances, empirical, bound: bound_value, sigma3, pass });
    }
    Ok(out)
}

/// Weighted least-squares fit of `log Var` against `log N`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points_used: usize,
    pub points_dropped: usize,
}

/// Fit `log Var = slope * log N + intercept` with per-point Monte Carlo
/// error weights; nonpositive variance estimates are dropped.
pub fn scaling_fit(points: &[(usize, f64, f64)]) -> Result<ScalingFit> {
    let usable: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|(_, var, _)| *var > 0.0)
        .map(|&(n, var, stderr)| {
            // sigma of log(var) by the delta method
            let sigma = (stderr / var).max(1e-6);
            ((n as f64).ln(), var.ln(), 1.0 / (sigma * sigma))
        })
        .collect();
    let dropped = points.len() - usable.len();
    if usable.len() < 3 {
        return Err(Error::usage("scaling fit needs at least 3 positive variance estimates"));
    }
    let sw: f64 = usable.iter().map(|p| p.2).sum();
    let sx: f64 = usable.iter().map(|p| p.2 * p.0).sum();
    let sy: f64 = usable.iter().map(|p| p.2 * p.1).sum();
    let sxx: f64 = usable.iter().map(|p| p.2 * p.0 * p.0).sum();
    let sxy: f64 = usable.iter().map(|p| p.2 * p.0 * p.1).sum();
    let denom = sw * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return Err(Error::usage("degenerate abscissae in scaling fit"));
    }
    let slope = (sw * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / sw;
    let ybar = sy / sw;
    let ss_tot: f64 = usable.iter().map(|p| p.2 * (p.1 - ybar) * (p.1 - ybar)).sum();
    let ss_res: f64 = usable
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            p.2 * r * r
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ScalingFit { slope, intercept, r2, points_used: usable.len(), points_dropped: dropped })
}

/// Verdict of a variance bound check at one N.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundVerdict {
    pub n: usize,
    pub empirical_variance: f64,
    pub bound: f64,
    /// 3-sigma Monte Carlo allowance on the variance estimate.
    pub allowance: f64,
    pub pass: bool,
}

/// Assert `empirical Var <= bound + 3 sigma` for every N where the bound
/// applies.
pub fn bound_check(groups: &[SweepGroup], bound: &BoundSpec) -> Result<Vec<BoundVerdict>> {
    let mut out = Vec::new();
    for g in groups {
        let b = match bound.variance_bound(g.n) {
            Some(b) => b,
            None => continue,
        };
        let var = g.stats.variance();
        let allowance = 3.0 * g.stats.variance_stderr();
        out.push(BoundVerdict {
            n: g.n,
            empirical_variance: var,
            bound: b,
            allowance,
            pass: var <= b + allowance,
        });
    }
    if out.is_empty() {
        return Err(Error::usage("bound not applicable to any swept N"));
    }
    Ok(out)
}

/// Per-N summary block of the JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub samples: u64,
    pub failures: usize,
    pub mean: f64,
    pub var: f64,
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub run_id: String,
    pub config: SweepConfig,
    pub per_n: Vec<GroupSummary>,
    pub fit: Option<ScalingFit>,
    pub bound_verdicts: Vec<BoundVerdict>,
    pub tail: Vec<TailRow>,
}

/// Assemble the summary (fit over per-N variances, verdicts for `bound`,
/// tail profile at the largest N).
pub fn summarize(
    result: &SweepResult,
    config: &SweepConfig,
    bound: Option<&BoundSpec>,
    thresholds: &[f64],
) -> SweepSummary {
    let per_n: Vec<GroupSummary> = result
        .groups
        .iter()
        .map(|g| GroupSummary {
            n: g.n,
            samples: g.stats.n,
            failures: g.failures,
            mean: g.stats.mean,
            var: g.stats.variance(),
            stderr: g.stats.variance_stderr(),
            min: g.stats.min,
            max: g.stats.max,
        })
        .collect();
    let points: Vec<(usize, f64, f64)> =
        result.groups.iter().map(|g| (g.n, g.stats.variance(), g.stats.variance_stderr())).collect();
    let fit = scaling_fit(&points).ok();
    let bound_verdicts = bound.and_then(|b| bound_check(&result.groups, b).ok()).unwrap_or_default();
    let tail = match (result.groups.last(), bound) {
        (Some(g), _) if !g.values.is_empty() && !thresholds.is_empty() => {
            let rho = bound.map(|b| b.tail_rho()).unwrap_or(0.0);
            tail_profile(&g.values, g.n, rho, thresholds, bound).unwrap_or_default()
        }
        _ => Vec::new(),
    };
    SweepSummary {
        run_id: result.run_id.clone(),
        config: config.clone(),
        per_n,
        fit,
        bound_verdicts,
        tail,
    }
}

pub fn summary_to_json(summary: &SweepSummary) -> Result<String> {
    serde_json::to_string_pretty(summary).map_err(|e| Error::format(format!("serialize summary: {e}")))
}
