//! Executable checks grouped into the `identities`, `rkhs` and `montecarlo`
//! suites.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{FilterPlan, ObservationPath};
use crate::kernels::{HamiltonianKernel, KernelField};
use crate::mcsim::{run_monte_carlo, MonteCarloReport, Simulator};
use crate::model::systems::Uniform;
use crate::model::LtvModel;
use crate::numcore::{max_abs_diff, Matrix, Vector};
use crate::rkhs::{
    dual_from_primal, dual_objective, inner_product_lambda, inner_product_x, primal_objective, smooth_kernel,
    stationarity_residual, GridPath, InformationElement, TrajectoryElement,
};

pub const DIAGONAL_TOL: f64 = 1e-6;
pub const ROUTE_TOL: f64 = 1e-5;
pub const REPRODUCING_TOL: f64 = 1e-4;
pub const MIRROR_TOL: f64 = 1e-6;
pub const OPTIMALITY_TOL: f64 = 1e-5;
pub const MC_RELATIVE_TOL: f64 = 0.05;
pub const MC_SCORE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Identities,
    Rkhs,
    Montecarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }

    /// Passes when `lo <= value <= hi`; `tolerance` records `hi`.
    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance: hi,
            passed: (lo..=hi).contains(&value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl SuiteReport {
    fn new(suite: Suite, checks: Vec<Check>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self { suite, checks, passed }
    }
}

/// `count` grid indices spread evenly over the horizon.
pub fn probe_indices(last: usize, count: usize) -> Vec<usize> {
    if count <= 1 {
        return vec![last];
    }
    let mut idx: Vec<usize> = (0..count)
        .map(|a| ((a as f64) * last as f64 / (count - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// Largest deviation from `K(T,T) = Π(T)` and `K(t,t) = Π - ΠΛΠ` over the
/// grid. Needs `Σ_T = 0`.
pub fn diagonal_identity_gap(field: &KernelField) -> Result<f64> {
    field.ensure_terminal_weight_zero()?;
    let ric = field.riccati();
    let last = field.grid().last();
    let mut worst = max_abs_diff(&field.k_at(last, last), ric.pi(last));
    for k in 0..=last {
        let pi = ric.pi(k);
        let bf = pi - pi * field.lambda_at(k, k) * pi;
        worst = worst.max(max_abs_diff(&field.k_at(k, k), &bf));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteGaps {
    /// Against the filter-quantity route; `None` when `Σ_T ≠ 0`.
    pub bf: Option<f64>,
    pub hamiltonian: f64,
}

/// Max-entry gaps between the routes over a `probes × probes` grid.
pub fn route_gaps(field: &KernelField, probes: usize) -> Result<RouteGaps> {
    let idx = probe_indices(field.grid().last(), probes);
    let ham = HamiltonianKernel::new(field.model())?;
    let with_bf = field.model().sigma_t_is_zero();
    let mut bf = 0.0f64;
    let mut hamiltonian = 0.0f64;
    for &i in &idx {
        for &j in &idx {
            let k = field.k_at(i, j);
            hamiltonian = hamiltonian.max(max_abs_diff(&k, &ham.k_at(i, j)));
            if with_bf {
                bf = bf.max(max_abs_diff(&k, &field.k_bf_at(i, j)?));
            }
        }
    }
    Ok(RouteGaps {
        bf: with_bf.then_some(bf),
        hamiltonian,
    })
}

/// `max |K(s,t) - K(t,s)ᵀ|` and the same for `Λ` over probe pairs.
pub fn hermitian_gap(field: &KernelField, probes: usize) -> f64 {
    let idx = probe_indices(field.grid().last(), probes);
    let mut worst = 0.0f64;
    for &i in &idx {
        for &j in &idx {
            worst = worst
                .max(max_abs_diff(&field.k_at(i, j), &field.k_at(j, i).transpose()))
                .max(max_abs_diff(&field.lambda_at(i, j), &field.lambda_at(j, i).transpose()));
        }
    }
    worst
}

fn random_vector(rng: &mut Uniform, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.range(-1.0, 1.0))
}

/// A smooth random control: three random sinusoids per component.
fn random_control(rng: &mut Uniform, field: &KernelField, dim: usize) -> GridPath {
    let coeffs: Vec<[f64; 9]> = (0..dim)
        .map(|_| std::array::from_fn(|c| if c % 3 == 1 { rng.range(0.5, 6.0) } else { rng.range(-1.0, 1.0) }))
        .collect();
    let values = field
        .grid()
        .points()
        .iter()
        .map(|&t| {
            Vector::from_fn(dim, |i, _| {
                coeffs[i]
                    .chunks(3)
                    .map(|c| c[0] * (c[1] * t + 3.0 * c[2]).sin())
                    .sum()
            })
        })
        .collect();
    GridPath::continuous(values)
}

/// Relative errors of `⟨x, K(·,t)z⟩ = ⟨x(t), z⟩` for random trajectories
/// `x` and random `(t, z)`.
pub fn reproducing_errors(field: &KernelField, count: usize, seed: u64) -> Result<Vec<f64>> {
    let model = field.model();
    let mut rng = Uniform::new(seed);
    let n = model.state_dim();
    (0..count)
        .map(|_| {
            let xi = random_vector(&mut rng, n);
            let u = random_control(&mut rng, field, model.noise_dim());
            let x = TrajectoryElement::from_controls(model, &xi, &u)?;
            let k = (rng.next() * field.grid().len() as f64) as usize;
            let z = random_vector(&mut rng, n);
            let section = TrajectoryElement::kernel_section(field, field.grid().time(k), &z)?;
            let expected = x.x_path[k].dot(&z);
            Ok((inner_product_x(&x, &section, model)? - expected).abs() / expected.abs())
        })
        .collect()
}

/// Same as [`reproducing_errors`] in the information space against `Λ`.
pub fn information_reproducing_errors(field: &KernelField, count: usize, seed: u64) -> Result<Vec<f64>> {
    let model = field.model();
    let mut rng = Uniform::new(seed);
    let n = model.state_dim();
    (0..count)
        .map(|_| {
            let z_end = random_vector(&mut rng, n);
            let v = random_control(&mut rng, field, model.obs_dim());
            let lam = InformationElement::from_controls(model, &z_end, &v)?;
            let k = (rng.next() * field.grid().len() as f64) as usize;
            let z = random_vector(&mut rng, n);
            let section = InformationElement::kernel_section(field, field.grid().time(k), &z)?;
            let expected = lam.lambda_path[k].dot(&z);
            Ok((inner_product_lambda(&lam, &section, model)? - expected).abs() / expected.abs())
        })
        .collect()
}

/// `max |‖K(·,t)z‖² - ⟨z, K(t,t)z⟩| / ⟨z, K(t,t)z⟩` over probe times.
pub fn norm_consistency_error(field: &KernelField, probes: usize, seed: u64) -> Result<f64> {
    let model = field.model();
    let mut rng = Uniform::new(seed);
    let mut worst = 0.0f64;
    for k in probe_indices(field.grid().last(), probes) {
        let z = random_vector(&mut rng, model.state_dim());
        let expected = (field.k_at(k, k) * &z).dot(&z);
        if expected <= 0.0 {
            continue;
        }
        let section = TrajectoryElement::kernel_section(field, field.grid().time(k), &z)?;
        worst = worst.max((inner_product_x(&section, &section, model)? - expected).abs() / expected);
    }
    Ok(worst)
}

/// `max |Λ(τ_i, τ_j) - K'(τ_{N-i}, τ_{N-j})|` with `K'` the trajectory kernel
/// of the mirrored model.
pub fn mirror_gap(field: &KernelField, probes: usize) -> Result<f64> {
    let mirror = KernelField::new(&field.model().mirrored()?)?;
    let last = field.grid().last();
    let idx = probe_indices(last, probes);
    let mut worst = 0.0f64;
    for &i in &idx {
        for &j in &idx {
            worst = worst.max(max_abs_diff(&field.lambda_at(i, j), &mirror.k_at(last - i, last - j)));
        }
    }
    Ok(worst)
}

/// Observation derivative `ỹ` at the nodes from centered increments: the
/// panel rate `Δỹ_k / δ` at node `k`, the last panel's rate at `T`.
pub fn observation_derivative(field: &KernelField, obs: &ObservationPath) -> Result<Vec<Vector>> {
    let plan = FilterPlan::with_transitions(field.model(), field.riccati(), &field.transitions().pi_closed)?;
    let step = field.grid().step();
    let mut rates: Vec<Vector> = plan.centered_increments(obs).iter().map(|d| d / step).collect();
    let last = rates.last().cloned().ok_or(Error::GridMismatch { expected: 2, got: 1 })?;
    rates.push(last);
    Ok(rates)
}

/// A smooth random observation derivative: three random sinusoids per
/// channel.
pub fn smooth_observation_derivative(field: &KernelField, seed: u64) -> Vec<Vector> {
    let mut rng = Uniform::new(seed);
    random_control(&mut rng, field, field.model().obs_dim()).right
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub objective: f64,
    /// `max |dL/dε| / (1 + |L|)` over the directions.
    pub derivative_ratio: f64,
    pub stationarity_residual: f64,
    /// `L_x(x̂) + L_λ(λ̂)`, reported only.
    pub duality_sum: f64,
}

/// First-order conditions of the primal problem at the kernel smoother
/// (central differences with step `1e-4` along random kernel sections) and
/// the Euler–Lagrange residual of the dual element built from it.
pub fn optimality(field: &KernelField, y_tilde: &[Vector], directions: usize, seed: u64) -> Result<OptimalityReport> {
    let model = field.model();
    let x_hat = smooth_kernel(field, y_tilde)?;
    let objective = primal_objective(&x_hat, y_tilde, model)?;
    let mut rng = Uniform::new(seed);
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let k = (rng.next() * field.grid().len() as f64) as usize;
        let z = random_vector(&mut rng, model.state_dim());
        let d = TrajectoryElement::kernel_section(field, field.grid().time(k), &z)?;
        let plus = primal_objective(&x_hat.axpy(eps, &d), y_tilde, model)?;
        let minus = primal_objective(&x_hat.axpy(-eps, &d), y_tilde, model)?;
        worst = worst.max(((plus - minus) / (2.0 * eps)).abs() / (1.0 + objective.abs()));
    }
    let lam = dual_from_primal(&x_hat, y_tilde, model)?;
    Ok(OptimalityReport {
        objective,
        derivative_ratio: worst,
        stationarity_residual: stationarity_residual(&lam, &x_hat, y_tilde, model),
        duality_sum: objective + dual_objective(&lam, y_tilde, model)?,
    })
}

pub fn identities(field: &KernelField) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    if field.model().sigma_t_is_zero() {
        checks.push(Check::at_most("diagonal identity", diagonal_identity_gap(field)?, DIAGONAL_TOL));
    }
    let gaps = route_gaps(field, 16)?;
    if let Some(bf) = gaps.bf {
        checks.push(Check::at_most("route gap riccati vs filter quantities", bf, ROUTE_TOL));
    }
    checks.push(Check::at_most("route gap riccati vs hamiltonian", gaps.hamiltonian, ROUTE_TOL));
    checks.push(Check::at_most("hermitian symmetry", hermitian_gap(field, 16), 1e-8));
    let ric = field.riccati();
    let worst_pi = (0..field.grid().len())
        .map(|k| -crate::numcore::min_eigenvalue(ric.pi(k)).min(crate::numcore::min_eigenvalue(ric.sigma(k))))
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most("riccati solutions PSD (negated smallest eigenvalue)", worst_pi, 1e-10));
    Ok(SuiteReport::new(Suite::Identities, checks))
}

pub fn rkhs(field: &KernelField, seed: u64) -> Result<SuiteReport> {
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let mut checks = vec![
        Check::at_most("reproducing property (trajectories)", max(reproducing_errors(field, 20, seed)?), REPRODUCING_TOL),
        Check::at_most(
            "reproducing property (information)",
            max(information_reproducing_errors(field, 20, seed)?),
            REPRODUCING_TOL,
        ),
        Check::at_most("norm consistency", norm_consistency_error(field, 8, seed)?, REPRODUCING_TOL),
        Check::at_most("mirrored kernel reproduces Lambda", mirror_gap(field, 16)?, MIRROR_TOL),
    ];
    let y = smooth_observation_derivative(field, seed);
    let opt = optimality(field, &y, 10, seed)?;
    checks.push(Check::at_most("primal optimality", opt.derivative_ratio, OPTIMALITY_TOL));
    checks.push(Check::at_most("dual stationarity", opt.stationarity_residual, OPTIMALITY_TOL));
    checks.push(Check {
        name: "duality sum (reported)".into(),
        value: opt.duality_sum,
        tolerance: f64::INFINITY,
        passed: true,
    });
    Ok(SuiteReport::new(Suite::Rkhs, checks))
}

/// Checks derived from a Monte Carlo report.
pub fn montecarlo_checks(report: &MonteCarloReport) -> Vec<Check> {
    let mut checks = Vec::new();
    for p in &report.probes {
        let t = p.time;
        checks.push(Check::at_most(format!("covariance relative error at t={t}"), p.relative_error(), MC_RELATIVE_TOL));
        checks.push(Check::at_most(format!("covariance standard score at t={t}"), p.standard_scores(), MC_SCORE));
        let n = p.predicted.nrows();
        let over_filter = (0..n)
            .map(|i| (p.smoothed.mean[(i, i)] - p.filter_covariance[(i, i)]) / p.smoothed.std_error[(i, i)].max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most(format!("smoothed below Pi at t={t} (scores)"), over_filter, MC_SCORE));
        let over_filtered = (0..n)
            .map(|i| (p.smoothed.mean[(i, i)] - p.filtered.mean[(i, i)]) / p.improvement_std_error[(i, i)].max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most(
            format!("smoothed below filtered at t={t} (scores)"),
            over_filtered,
            MC_SCORE,
        ));
    }
    let w = &report.whiteness;
    checks.push(Check::at_most("quadratic variation relative error", w.relative_error, MC_RELATIVE_TOL));
    let score = w
        .correlation
        .zip_map(&w.correlation_std_error, |c, se| if se > 0.0 { c.abs() / se } else { 0.0 })
        .max();
    checks.push(Check::at_most("disjoint increment correlation (scores)", score, MC_SCORE));
    for pair in report.convergence.windows(2) {
        let ratio = pair[0].max_std_error / pair[1].max_std_error;
        let expected = (pair[1].n_paths as f64 / pair[0].n_paths as f64).sqrt();
        checks.push(Check::within(
            format!("standard error ratio {} to {} paths (expect {expected:.3})", pair[0].n_paths, pair[1].n_paths),
            ratio,
            0.6 * expected,
            1.6 * expected,
        ));
    }
    checks
}

pub fn montecarlo(field: &KernelField, sim: &Simulator, n_paths: usize, seed: u64, probes: &[f64]) -> Result<SuiteReport> {
    let prefixes: Vec<usize> = [n_paths / 20, n_paths / 2, n_paths].into_iter().filter(|&n| n >= 2).collect();
    let report = run_monte_carlo(field, sim, n_paths, seed, probes, &prefixes)?;
    Ok(SuiteReport::new(Suite::Montecarlo, montecarlo_checks(&report)))
}

/// Default Monte Carlo probes: quarters of the horizon.
pub fn default_probes(model: &LtvModel) -> Vec<f64> {
    let grid = model.grid;
    probe_indices(grid.last(), 5)[1..].iter().map(|&k| grid.time(k)).collect()
}

/// A scalar summary of a matrix, used in reports.
pub fn max_entry(m: &Matrix) -> f64 {
    m.amax()
}
