//! Smallest Dirichlet eigenvalue, normalized eigenfunction, and the scaled
//! statistic `f_N = N^2 lambda_N`.
//!
//! `lambda_N` is the bottom of the spectrum of the walk Laplacian on
//! `H_{N,0}` (functions vanishing on the boundary of the closed box) in the
//! weighted metric. The eigenfunction is the Perron ground state, fixed to be
//! positive, with `||psi||_{2,N} = 1`; the eigenvalue equals the per-edge
//! Dirichlet energy `E_N(psi, psi)` of the normalized eigenfunction.

use crate::error::{Error, Result};
use crate::lattice_env::{Closure, EdgeId, Environment};
use crate::numerics::{smallest_eigenpair, Bc, Field, Laplacian};

/// Bottom Dirichlet eigenpair together with the homogenization statistic.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub lambda: f64,
    /// Perron eigenfunction, zero on the boundary, positive inside,
    /// normalized in the weighted norm.
    pub psi: Field,
    /// `f_N = N^2 lambda_N`.
    pub f: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Compute the bottom eigenpair and the statistic `N^2 lambda_N`.
pub fn dirichlet_spectral_statistic(env: &Environment, tol: f64) -> Result<EigenSolution> {
    if env.lattice.closure != Closure::ClosedBox {
        return Err(Error::usage("dirichlet_spectral_statistic requires a closed_box environment"));
    }
    let lap = Laplacian::new(env, Bc::Dirichlet)?;
    let pair = smallest_eigenpair(&lap, tol)?;
    let n = env.lattice.n as f64;
    // the eigenvalue is the Rayleigh quotient: lambda = E(psi,psi) for the
    // normalized eigenfunction (per-edge form)
    let energy = lap.edge_form(&pair.psi, &pair.psi);
    if (energy - pair.lambda).abs() > 1e-8 * pair.lambda.max(1e-12) {
        return Err(Error::domain(format!(
            "eigenvalue/energy mismatch: lambda = {}, E(psi,psi) = {energy}",
            pair.lambda
        )));
    }
    Ok(EigenSolution {
        lambda: pair.lambda,
        psi: pair.psi,
        f: n * n * pair.lambda,
        residual: pair.residual,
        iterations: pair.iterations,
    })
}

/// Outcome of the one-sided eigenvalue perturbation check.
///
/// For `a(e, after) >= a(e, before)` the two explicit inequalities from the
/// monotone comparison of Rayleigh quotients are asserted:
///
/// * `lambda(after) - lambda(before) <= kappa * psi_before^2(e)`,
/// * `lambda(before) - lambda(after) <= (gamma - 1) * E_before(psi_after, psi_after)`
///   with `gamma = ||psi_after||^{-2}_{2,N,before}`.
#[derive(Debug, Clone)]
pub struct EigenPerturbation {
    pub holds: bool,
    pub increase_lhs: f64,
    pub increase_rhs: f64,
    pub decrease_lhs: f64,
    pub decrease_rhs: f64,
    pub slack: f64,
}

pub fn eigen_perturbation_check(
    env: &Environment,
    edge: EdgeId,
    new_weight: f64,
    tol: f64,
) -> Result<EigenPerturbation> {
    let old_weight = env.weight(edge.site, edge.axis);
    if new_weight < old_weight {
        return Err(Error::usage(format!(
            "one-sided hypothesis requires new_weight >= current weight ({new_weight} < {old_weight})"
        )));
    }
    let lat = env.lattice;
    let nb = lat
        .box_neighbor(edge.site, edge.axis, true)
        .ok_or_else(|| Error::usage("edge leaves the box"))?;
    if !lat.is_interior(edge.site) && !lat.is_interior(nb) {
        return Err(Error::usage("edge joins two boundary vertices"));
    }
    let mut perturbed = env.clone();
    perturbed.set_weight(edge, new_weight)?;

    let before = dirichlet_spectral_statistic(env, tol)?;
    let after = dirichlet_spectral_statistic(&perturbed, tol)?;
    let lap_before = Laplacian::new(env, Bc::Dirichlet)?;

    let kappa = env.dist.map(|dist| dist.upper_bound()).unwrap_or(0.0).max(new_weight);

    // psi difference across the perturbed edge (boundary values are stored
    // as zeros, so this is total on all admissible edges)
    let dpsi_before = before.psi.values[edge.site] - before.psi.values[nb];

    let increase_lhs = after.lambda - before.lambda;
    let increase_rhs = kappa * dpsi_before * dpsi_before;

    // the perturbed eigenfunction has norm <= 1 in the unperturbed metric,
    // so gamma >= 1
    let norm_before = lap_before.norm(&after.psi);
    let gamma = 1.0 / (norm_before * norm_before);
    let energy_before = lap_before.edge_form(&after.psi, &after.psi);
    let decrease_lhs = before.lambda - after.lambda;
    let decrease_rhs = (gamma - 1.0) * energy_before;

    let tol_slack = 1e-9 * before.lambda.max(after.lambda).max(1e-12);
    let slack = (increase_rhs - increase_lhs).min(decrease_rhs - decrease_lhs);
    Ok(EigenPerturbation {
        holds: slack >= -tol_slack,
        increase_lhs,
        increase_rhs,
        decrease_lhs,
        decrease_rhs,
        slack,
    })
}

/// Report-only diagnostic `||psi||_inf / lambda^{d/4}` (the constant in the
/// sup bound is not quantitative).
pub fn eigenfunction_sup_diagnostic(d: usize, sol: &EigenSolution) -> f64 {
    sol.psi.max_abs() / sol.lambda.powf(d as f64 / 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_env::{DistributionSpec, LatticeSpec};
    use crate::numerics::dense_symmetric_spectrum;
    use crate::rng::SplitMix64;
    use std::f64::consts::PI;

    fn constant_box(d: usize, n: usize) -> Environment {
        Environment::sample(LatticeSpec::closed_box(d, n), DistributionSpec::Constant { c: 1.0 }, 0)
            .unwrap()
    }

    #[test]
    fn constant_d1_closed_form() {
        let env = constant_box(1, 3);
        let sol = dirichlet_spectral_statistic(&env, 1e-10).unwrap();
        let expect = 1.0 - (PI / 4.0).cos();
        assert!((sol.lambda - expect).abs() < 1e-8);
        assert!((sol.f - 9.0 * expect).abs() < 1e-7);
    }

    #[test]
    fn constant_d2_minimum_mode() {
        // lambda = 1 - (1/d) sum_i cos(k_i pi/(N+1)) at the mode k = (1,...,1)
        for n in [3usize, 4, 8] {
            let env = constant_box(2, n);
            let sol = dirichlet_spectral_statistic(&env, 1e-10).unwrap();
            let expect = 1.0 - (PI / (n as f64 + 1.0)).cos();
            assert!((sol.lambda - expect).abs() < 1e-8, "n={n}: {} vs {expect}", sol.lambda);
        }
    }

    #[test]
    fn random_env_matches_dense() {
        let env = Environment::sample(
            LatticeSpec::closed_box(3, 3),
            DistributionSpec::UniformElliptic { kappa: 2.0 },
            5,
        )
        .unwrap();
        let sol = dirichlet_spectral_statistic(&env, 1e-10).unwrap();
        let lap = Laplacian::new(&env, Bc::Dirichlet).unwrap();
        let (evals, _) = dense_symmetric_spectrum(&lap).unwrap();
        assert!((sol.lambda - evals[0]).abs() < 1e-8);
    }

    #[test]
    fn eigen_solution_invariants() {
        let env = Environment::sample(
            LatticeSpec::closed_box(2, 5),
            DistributionSpec::TwoPoint { p: 0.5, lo: 0.5, hi: 2.0 },
            13,
        )
        .unwrap();
        let sol = dirichlet_spectral_statistic(&env, 1e-10).unwrap();
        let lap = Laplacian::new(&env, Bc::Dirichlet).unwrap();
        assert!((lap.norm(&sol.psi) - 1.0).abs() < 1e-10);
        for &site in lap.dof_sites() {
            assert!(sol.psi.values[site] > 0.0, "Perron eigenfunction not positive");
        }
        let energy = lap.edge_form(&sol.psi, &sol.psi);
        assert!((energy - sol.lambda).abs() < 1e-8);
    }

    #[test]
    fn variational_characterization() {
        // the computed lambda never exceeds a trial Rayleigh quotient
        let env = Environment::sample(
            LatticeSpec::closed_box(2, 4),
            DistributionSpec::UniformElliptic { kappa: 2.0 },
            17,
        )
        .unwrap();
        let sol = dirichlet_spectral_statistic(&env, 1e-10).unwrap();
        let lap = Laplacian::new(&env, Bc::Dirichlet).unwrap();
        let mut rng = SplitMix64::new(3);
        for _ in 0..200 {
            let mut trial = Field::zeros(env.lattice);
            for &s in lap.dof_sites() {
                trial.values[s] = rng.next_range(-1.0, 1.0);
            }
            let quotient = lap.edge_form(&trial, &trial) / lap.inner(&trial, &trial);
            assert!(sol.lambda <= quotient + 1e-10);
        }
    }

    #[test]
    fn domain_monotonicity_constant_env() {
        let mut prev = f64::INFINITY;
        for n in 3..=8 {
            let env = constant_box(2, n);
            let sol = dirichlet_spectral_statistic(&env, 1e-10).unwrap();
            assert!(sol.lambda <= prev + 1e-12, "lambda increased at n={n}");
            prev = sol.lambda;
        }
    }

    #[test]
    fn global_weight_scaling_leaves_lambda_invariant() {
        let lat = LatticeSpec::closed_box(2, 4);
        let env =
            Environment::sample(lat, DistributionSpec::UniformElliptic { kappa: 2.0 }, 23).unwrap();
        let scaled =
            Environment::from_weights(lat, env.weights().iter().map(|w| 5.0 * w).collect())
                .unwrap();
        let a = dirichlet_spectral_statistic(&env, 1e-11).unwrap();
        let b = dirichlet_spectral_statistic(&scaled, 1e-11).unwrap();
        assert!((a.lambda - b.lambda).abs() < 1e-9 * a.lambda);
    }

    #[test]
    fn elliptic_two_sided_bounds() {
        let kappa = 2.0;
        let n = 4;
        let lambda_const = dirichlet_spectral_statistic(&constant_box(2, n), 1e-10).unwrap().lambda;
        let env = Environment::sample(
            LatticeSpec::closed_box(2, n),
            DistributionSpec::UniformElliptic { kappa },
            29,
        )
        .unwrap();
        let lambda = dirichlet_spectral_statistic(&env, 1e-10).unwrap().lambda;
        assert!(lambda >= lambda_const / (kappa * kappa) - 1e-10);
        assert!(lambda <= lambda_const * kappa * kappa + 1e-10);
    }

    #[test]
    fn perturbation_equal_weights_trivial() {
        let env = Environment::sample(
            LatticeSpec::closed_box(2, 4),
            DistributionSpec::UniformElliptic { kappa: 2.0 },
            31,
        )
        .unwrap();
        let edge = EdgeId { site: env.lattice.site_index(&[2, 2]), axis: 0 };
        let w = env.weight(edge.site, edge.axis);
        let rep = eigen_perturbation_check(&env, edge, w, 1e-10).unwrap();
        assert!(rep.holds);
        assert!(rep.increase_lhs.abs() < 1e-9 && rep.decrease_lhs.abs() < 1e-9);
    }

    #[test]
    fn perturbation_one_edge_doubled_constant_env() {
        let env = constant_box(2, 4);
        let edge = EdgeId { site: env.lattice.site_index(&[2, 2]), axis: 1 };
        let rep = eigen_perturbation_check(&env, edge, 2.0, 1e-10).unwrap();
        assert!(rep.holds, "{rep:?}");
    }

    #[test]
    fn perturbation_hypothesis_enforced() {
        let env = constant_box(2, 3);
        let edge = EdgeId { site: env.lattice.site_index(&[1, 1]), axis: 0 };
        match eigen_perturbation_check(&env, edge, 0.5, 1e-10) {
            Err(Error::Usage(_)) => {}
            other => panic!("expected usage error, got {other:?}"),
        }
    }

    #[test]
    fn perturbation_sweep_d3() {
        let env = Environment::sample(
            LatticeSpec::closed_box(3, 3),
            DistributionSpec::UniformElliptic { kappa: 2.0 },
            37,
        )
        .unwrap();
        let mut rng = SplitMix64::new(41);
        let edges = env.edges();
        let mut checked = 0;
        while checked < 8 {
            let edge = edges[rng.next_index(edges.len())];
            let nb = match env.lattice.box_neighbor(edge.site, edge.axis, true) {
                Some(nb) => nb,
                None => continue,
            };
            if !env.lattice.is_interior(edge.site) && !env.lattice.is_interior(nb) {
                continue;
            }
            let old = env.weight(edge.site, edge.axis);
            let new_w = rng.next_range(old, 2.0).max(old);
            let rep = eigen_perturbation_check(&env, edge, new_w, 1e-10).unwrap();
            assert!(rep.holds, "edge {edge:?}: {rep:?}");
            checked += 1;
        }
    }

    #[test]
    fn sup_diagnostic_closed_form_and_boundedness() {
        // constant(1), d=2: psi is the sine product scaled by 1/(N+1)
        let mut ratios = Vec::new();
        for n in [4usize, 8, 16] {
            let env = constant_box(2, n);
            let sol = dirichlet_spectral_statistic(&env, 1e-10).unwrap();
            let ratio = eigenfunction_sup_diagnostic(2, &sol);
            let m = n as f64 + 1.0;
            let mut sup: f64 = 0.0;
            for x in 1..=n {
                sup = sup.max((PI * x as f64 / m).sin());
            }
            let psi_inf = sup * sup / m;
            let lambda = 1.0 - (PI / m).cos();
            let expect = psi_inf / lambda.sqrt();
            assert!((ratio - expect).abs() < 1e-6 * expect, "n={n}: {ratio} vs {expect}");
            ratios.push(ratio);
        }
        for w in ratios.windows(2) {
            assert!(w[1] <= 2.0 * w[0]);
        }
    }
}
