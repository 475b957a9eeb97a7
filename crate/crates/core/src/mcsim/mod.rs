//! Monte Carlo check that `K(s, t | T)` is the covariance of the smoothing
//! error and that the innovation is a Wiener process with covariance `R`.

mod rng;

pub use rng::{Channel, PathNoise};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::{FilterPlan, ObservationPath};
use crate::kernels::KernelField;
use crate::model::LtvModel;
use crate::numcore::{psd_sqrt, Matrix, Vector, DEFAULT_RANK_TOL};

/// Euler–Maruyama coefficients of one model.
#[derive(Debug, Clone)]
pub struct Simulator {
    step: f64,
    dynamics: Vec<Matrix>,
    drift: Vec<Vector>,
    /// `G Q^{1/2}`.
    plant_factor: Vec<Matrix>,
    observation: Vec<Matrix>,
    observation_drift: Vec<Vector>,
    /// `R^{1/2}`, or `None` when observation noise is switched off.
    observation_factor: Option<Vec<Matrix>>,
    x0: Vector,
    y0: Vector,
    pi0_root: Matrix,
}

fn column(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

impl Simulator {
    pub fn new(model: &LtvModel) -> Result<Self> {
        let grid = model.grid;
        let steps = 0..grid.last();
        Ok(Self {
            step: grid.step(),
            dynamics: steps.clone().map(|k| model.dynamics.at(k).clone()).collect(),
            drift: steps.clone().map(|k| column(model.state_drift.at(k))).collect(),
            plant_factor: steps
                .clone()
                .map(|k| Ok(model.noise_input.at(k) * psd_sqrt(model.plant_noise.at(k), DEFAULT_RANK_TOL)?))
                .collect::<Result<_>>()?,
            observation: steps.clone().map(|k| model.observation.at(k).clone()).collect(),
            observation_drift: steps.clone().map(|k| column(model.observation_drift.at(k))).collect(),
            observation_factor: Some(
                steps
                    .map(|k| psd_sqrt(model.observation_noise.at(k), DEFAULT_RANK_TOL))
                    .collect::<Result<_>>()?,
            ),
            x0: model.x0.clone(),
            y0: model.y0.clone(),
            pi0_root: psd_sqrt(&model.pi0, DEFAULT_RANK_TOL)?,
        })
    }

    /// Drops the observation noise, a diagnostic only: the filter still uses
    /// the model's `R`.
    pub fn without_observation_noise(mut self) -> Self {
        self.observation_factor = None;
        self
    }

    /// Path number `index` of the run keyed by `seed`.
    pub fn path(&self, seed: u64, index: u64) -> SimulatedPath {
        let n = self.x0.len();
        let m = self.y0.len();
        let p = self.plant_factor.first().map(|g| g.ncols()).unwrap_or(0);
        let mut noise = PathNoise::new(seed, index, p, m, n);
        let root_h = self.step.sqrt();

        let mut initial = vec![0.0; n];
        noise.fill(0, Channel::Initial, &mut initial);
        let mut x = &self.x0 + &self.pi0_root * Vector::from_vec(initial);
        let mut y = self.y0.clone();
        let mut xs = Vec::with_capacity(self.dynamics.len() + 1);
        let mut ys = Vec::with_capacity(self.dynamics.len() + 1);
        let mut plant = vec![0.0; p];
        let mut obs = vec![0.0; m];
        for k in 0..self.dynamics.len() {
            noise.fill(k, Channel::Plant, &mut plant);
            noise.fill(k, Channel::Observation, &mut obs);
            let mut dy = (&self.observation[k] * &x + &self.observation_drift[k]) * self.step;
            if let Some(factors) = &self.observation_factor {
                dy += &factors[k] * Vector::from_column_slice(&obs) * root_h;
            }
            let dx = (&self.dynamics[k] * &x + &self.drift[k]) * self.step
                + &self.plant_factor[k] * Vector::from_column_slice(&plant) * root_h;
            xs.push(x.clone());
            ys.push(y.clone());
            x += dx;
            y += dy;
        }
        xs.push(x);
        ys.push(y);
        SimulatedPath { x: xs, y: ys }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub x: Vec<Vector>,
    pub y: Vec<Vector>,
}

impl SimulatedPath {
    pub fn observation(&self) -> ObservationPath {
        ObservationPath { y: self.y.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub seed: u64,
    pub paths: Vec<SimulatedPath>,
}

impl Ensemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }
}

fn require_paths(got: usize) -> Result<()> {
    if got < 2 {
        return Err(Error::InsufficientPaths { required: 2, got });
    }
    Ok(())
}

pub fn simulate(model: &LtvModel, n_paths: usize, seed: u64) -> Result<Ensemble> {
    simulate_with(&Simulator::new(model)?, n_paths, seed)
}

pub fn simulate_with(sim: &Simulator, n_paths: usize, seed: u64) -> Result<Ensemble> {
    require_paths(n_paths)?;
    let paths = (0..n_paths as u64).into_par_iter().map(|i| sim.path(seed, i)).collect();
    Ok(Ensemble { seed, paths })
}

/// Sum in a fixed binary tree so the result does not depend on how the
/// terms were produced.
fn pairwise_sum(items: &[Matrix]) -> Matrix {
    match items.len() {
        0 => panic!("pairwise_sum of nothing"),
        1 => items[0].clone(),
        len => pairwise_sum(&items[..len / 2]) + pairwise_sum(&items[len / 2..]),
    }
}

/// Entrywise sample mean and standard error of the mean.
fn mean_and_std_error(samples: &[Matrix]) -> (Matrix, Matrix) {
    let n = samples.len() as f64;
    let mean = pairwise_sum(samples) / n;
    let squares: Vec<Matrix> = samples.iter().map(|s| s.component_mul(s)).collect();
    let second = pairwise_sum(&squares) / n;
    let se = (second - mean.component_mul(&mean)).map(|v| (v.max(0.0) / (n - 1.0)).sqrt());
    (mean, se)
}

fn outer(a: &Vector, b: &Vector) -> Matrix {
    a * b.transpose()
}

/// Sample mean of `ε(s) ε(t)ᵀ` with entrywise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub s: f64,
    pub t: f64,
    pub mean: Matrix,
    pub std_error: Matrix,
}

/// Smoothing-error covariance for every ordered pair of `times`.
pub fn empirical_error_covariance(
    ensemble: &Ensemble,
    smoothed: &[Vec<Vector>],
    grid: &crate::numcore::TimeGrid,
    times: &[f64],
) -> Result<Vec<CovarianceEstimate>> {
    require_paths(ensemble.n_paths())?;
    if smoothed.len() != ensemble.n_paths() {
        return Err(Error::Dimension(format!(
            "{} smoothed outputs for {} paths",
            smoothed.len(),
            ensemble.n_paths()
        )));
    }
    let idx = times.iter().map(|&t| grid.index_of(t)).collect::<Result<Vec<_>>>()?;
    let errors: Vec<Vec<Vector>> = ensemble
        .paths
        .iter()
        .zip(smoothed)
        .map(|(p, s)| idx.iter().map(|&k| &p.x[k] - &s[k]).collect())
        .collect();
    let mut out = Vec::with_capacity(times.len() * times.len());
    for (a, &s) in times.iter().enumerate() {
        for (b, &t) in times.iter().enumerate() {
            let samples: Vec<Matrix> = errors.iter().map(|e| outer(&e[a], &e[b])).collect();
            let (mean, std_error) = mean_and_std_error(&samples);
            out.push(CovarianceEstimate { s, t, mean, std_error });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenessReport {
    /// Mean over paths of `Σ_k Δe_k Δe_kᵀ`.
    pub quadratic_variation: Matrix,
    pub quadratic_variation_std_error: Matrix,
    /// `∫ R dt`.
    pub expected: Matrix,
    /// `max |QV - ∫R| / max |∫R|`.
    pub relative_error: f64,
    /// Correlation between `e(mid) - e(t₀)` and `e(T) - e(mid)`.
    pub correlation: Matrix,
    pub correlation_std_error: Matrix,
}

struct InnovationSample {
    quadratic_variation: Matrix,
    first_half: Vector,
    second_half: Vector,
}

fn innovation_sample(increments: &[Vector]) -> InnovationSample {
    let m = increments[0].len();
    let mid = increments.len() / 2;
    let mut qv = Matrix::zeros(m, m);
    let mut first = Vector::zeros(m);
    let mut second = Vector::zeros(m);
    for (k, de) in increments.iter().enumerate() {
        qv += outer(de, de);
        if k < mid {
            first += de;
        } else {
            second += de;
        }
    }
    InnovationSample {
        quadratic_variation: qv,
        first_half: first,
        second_half: second,
    }
}

fn integrated_noise(model: &LtvModel) -> Matrix {
    let grid = model.grid;
    let m = model.obs_dim();
    (0..grid.len()).fold(Matrix::zeros(m, m), |acc, k| {
        acc + model.observation_noise.at(k) * grid.trapezoid_weight(k, 0, grid.last())
    })
}

fn whiteness_from(samples: &[InnovationSample], expected: Matrix) -> WhitenessReport {
    let qv: Vec<Matrix> = samples.iter().map(|s| s.quadratic_variation.clone()).collect();
    let (quadratic_variation, quadratic_variation_std_error) = mean_and_std_error(&qv);
    let scale = expected.amax();
    let relative_error = if scale > 0.0 {
        (&quadratic_variation - &expected).amax() / scale
    } else {
        quadratic_variation.amax()
    };
    let cross: Vec<Matrix> = samples.iter().map(|s| outer(&s.first_half, &s.second_half)).collect();
    let first: Vec<Matrix> = samples.iter().map(|s| outer(&s.first_half, &s.first_half)).collect();
    let second: Vec<Matrix> = samples.iter().map(|s| outer(&s.second_half, &s.second_half)).collect();
    let (cross_mean, cross_se) = mean_and_std_error(&cross);
    let (first_var, _) = mean_and_std_error(&first);
    let (second_var, _) = mean_and_std_error(&second);
    let m = cross_mean.nrows();
    let norm = Matrix::from_fn(m, m, |a, b| {
        let d = (first_var[(a, a)] * second_var[(b, b)]).sqrt();
        if d > 0.0 {
            1.0 / d
        } else {
            0.0
        }
    });
    WhitenessReport {
        quadratic_variation,
        quadratic_variation_std_error,
        expected,
        relative_error,
        correlation: cross_mean.component_mul(&norm),
        correlation_std_error: cross_se.component_mul(&norm),
    }
}

/// Quadratic variation and disjoint-increment correlation of cumulative
/// innovation paths.
pub fn innovation_whiteness(model: &LtvModel, innovations: &[Vec<Vector>]) -> Result<WhitenessReport> {
    require_paths(innovations.len())?;
    let samples: Vec<InnovationSample> = innovations
        .iter()
        .map(|e| {
            let inc: Vec<Vector> = e.windows(2).map(|w| &w[1] - &w[0]).collect();
            innovation_sample(&inc)
        })
        .collect();
    Ok(whiteness_from(&samples, integrated_noise(model)))
}

/// Smoothed versus filtered error statistics at one probe time.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeComparison {
    pub time: f64,
    /// `K(s, s | T)`.
    pub predicted: Matrix,
    /// `Π(s)`.
    pub filter_covariance: Matrix,
    pub smoothed: CovarianceEstimate,
    pub filtered: CovarianceEstimate,
    /// Standard error of the paired difference smoothed minus filtered.
    pub improvement_std_error: Matrix,
}

impl ProbeComparison {
    pub fn relative_error(&self) -> f64 {
        (&self.smoothed.mean - &self.predicted).amax() / self.predicted.amax()
    }

    /// Largest `|empirical - predicted|` in units of the standard error.
    pub fn standard_scores(&self) -> f64 {
        let diff = &self.smoothed.mean - &self.predicted;
        diff.zip_map(&self.smoothed.std_error, |d, se| if se > 0.0 { d.abs() / se } else if d == 0.0 { 0.0 } else { f64::INFINITY })
            .max()
    }
}

/// Error of the first probe estimate on the first `n_paths` paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub n_paths: usize,
    pub max_abs_error: f64,
    pub max_std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub n_paths: usize,
    pub seed: u64,
    pub probes: Vec<ProbeComparison>,
    pub whiteness: WhitenessReport,
    pub convergence: Vec<ConvergencePoint>,
}

struct PathSample {
    smoothed: Vec<Vector>,
    filtered: Vec<Vector>,
    innovation: InnovationSample,
}

/// Simulates, filters and smooths `n_paths` paths, keeping only the errors at
/// the probes, and compares them with the kernel. `prefix_sizes` selects the
/// leading sub-ensembles used for the convergence table.
pub fn run_monte_carlo(
    field: &KernelField,
    sim: &Simulator,
    n_paths: usize,
    seed: u64,
    probes: &[f64],
    prefix_sizes: &[usize],
) -> Result<MonteCarloReport> {
    require_paths(n_paths)?;
    field.ensure_terminal_weight_zero()?;
    let model = field.model();
    let grid = model.grid;
    let idx = probes.iter().map(|&t| grid.index_of(t)).collect::<Result<Vec<_>>>()?;
    let plan = FilterPlan::with_transitions(model, field.riccati(), &field.transitions().pi_closed)?;
    let mean_x = &plan.mean().x;

    let samples: Vec<PathSample> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = sim.path(seed, i);
            let centered = plan.centered_increments(&path.observation());
            let (r, innovation) = plan.forward(&centered);
            let correction = plan.backward(&r, &innovation);
            let filtered: Vec<Vector> = idx.iter().map(|&k| &path.x[k] - &mean_x[k] - &r[k]).collect();
            let smoothed = idx.iter().zip(&filtered).map(|(&k, f)| f - &correction[k]).collect();
            PathSample {
                smoothed,
                filtered,
                innovation: innovation_sample(&innovation),
            }
        })
        .collect();

    let probe_reports = probes
        .iter()
        .zip(&idx)
        .enumerate()
        .map(|(a, (&time, &k))| {
            let sm: Vec<Matrix> = samples.iter().map(|s| outer(&s.smoothed[a], &s.smoothed[a])).collect();
            let fi: Vec<Matrix> = samples.iter().map(|s| outer(&s.filtered[a], &s.filtered[a])).collect();
            let diff: Vec<Matrix> = sm.iter().zip(&fi).map(|(x, y)| x - y).collect();
            let (sm_mean, sm_se) = mean_and_std_error(&sm);
            let (fi_mean, fi_se) = mean_and_std_error(&fi);
            ProbeComparison {
                time,
                predicted: field.k_at(k, k),
                filter_covariance: field.riccati().pi(k).clone(),
                smoothed: CovarianceEstimate {
                    s: time,
                    t: time,
                    mean: sm_mean,
                    std_error: sm_se,
                },
                filtered: CovarianceEstimate {
                    s: time,
                    t: time,
                    mean: fi_mean,
                    std_error: fi_se,
                },
                improvement_std_error: mean_and_std_error(&diff).1,
            }
        })
        .collect::<Vec<_>>();

    let convergence = match idx.first() {
        Some(&k) => prefix_sizes
            .iter()
            .filter(|&&n| n >= 2 && n <= n_paths)
            .map(|&n| {
                let sm: Vec<Matrix> = samples[..n].iter().map(|s| outer(&s.smoothed[0], &s.smoothed[0])).collect();
                let (mean, se) = mean_and_std_error(&sm);
                ConvergencePoint {
                    n_paths: n,
                    max_abs_error: (mean - field.k_at(k, k)).amax(),
                    max_std_error: se.max(),
                }
            })
            .collect(),
        None => Vec::new(),
    };

    let innovations: Vec<InnovationSample> = samples.into_iter().map(|s| s.innovation).collect();
    Ok(MonteCarloReport {
        n_paths,
        seed,
        probes: probe_reports,
        whiteness: whiteness_from(&innovations, integrated_noise(model)),
        convergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::smooth;
    use crate::model::systems::*;

    #[test]
    fn fewer_than_two_paths_is_an_error() {
        let model = scalar_s1(10);
        assert!(matches!(
            simulate(&model, 1, 0),
            Err(Error::InsufficientPaths { required: 2, got: 1 })
        ));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let model = random_time_varying(1, 2, 50);
        let a = simulate(&model, 8, 42).unwrap();
        let b = simulate(&model, 8, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, 8, 43).unwrap();
        assert_ne!(a, c);
        // a path does not depend on how many others were drawn
        let d = simulate(&model, 3, 42).unwrap();
        assert_eq!(a.paths[2], d.paths[2]);
    }

    #[test]
    fn noiseless_paths_follow_the_mean() {
        let mut model = random_time_varying(2, 2, 1000);
        model.pi0 = Matrix::zeros(2, 2);
        model.plant_noise = crate::model::MatrixSchedule::Constant(Matrix::zeros(2, 2));
        let sim = Simulator::new(&model).unwrap().without_observation_noise();
        let ens = simulate_with(&sim, 2, 5).unwrap();
        let mean = crate::estimation::mean_paths(&model).unwrap();
        for p in &ens.paths {
            for k in 0..=1000 {
                assert!((&p.x[k] - &mean.x[k]).amax() < 1e-2);
                assert!((&p.y[k] - &mean.y[k]).amax() < 1e-2);
            }
        }
    }

    #[test]
    fn brownian_terminal_variance() {
        let model = brownian_b1(100);
        let ens = simulate(&model, 100_000, 9).unwrap();
        let samples: Vec<Matrix> = ens.paths.iter().map(|p| outer(&p.x[100], &p.x[100])).collect();
        let (var, _) = mean_and_std_error(&samples);
        let se = (2.0f64).sqrt() / (100_000f64).sqrt();
        assert!((var[(0, 0)] - 1.0).abs() < 3.0 * se);
    }

    #[test]
    fn identical_paths_give_zero_covariance() {
        let path = SimulatedPath {
            x: vec![Vector::from_element(1, 2.0); 11],
            y: vec![Vector::zeros(1); 11],
        };
        let ens = Ensemble {
            seed: 0,
            paths: vec![path.clone(), path.clone(), path],
        };
        let smoothed = vec![vec![Vector::from_element(1, 2.0); 11]; 3];
        let grid = scalar_s1(10).grid;
        let est = empirical_error_covariance(&ens, &smoothed, &grid, &[0.5, 1.0]).unwrap();
        assert_eq!(est.len(), 4);
        assert!(est.iter().all(|e| e.mean[(0, 0)] == 0.0 && e.std_error[(0, 0)] == 0.0));
    }

    #[test]
    fn stored_and_streaming_estimates_agree() {
        let model = scalar_s1(100);
        let field = KernelField::new(&model).unwrap();
        let ens = simulate(&model, 64, 3).unwrap();
        let results: Vec<_> = ens.paths.iter().map(|p| smooth(&field, &p.observation()).unwrap()).collect();
        let smoothed: Vec<Vec<Vector>> = results.iter().map(|r| r.smoothed.clone()).collect();
        let stored = empirical_error_covariance(&ens, &smoothed, &model.grid, &[0.5]).unwrap();
        let sim = Simulator::new(&model).unwrap();
        let report = run_monte_carlo(&field, &sim, 64, 3, &[0.5], &[]).unwrap();
        assert!((&stored[0].mean - &report.probes[0].smoothed.mean).amax() < 1e-12);

        let innovations: Vec<Vec<Vector>> = results.iter().map(|r| r.innovation.clone()).collect();
        let white = innovation_whiteness(&model, &innovations).unwrap();
        assert!((&white.quadratic_variation - &report.whiteness.quadratic_variation).amax() < 1e-12);
    }

    #[test]
    fn zero_noise_innovation_has_no_quadratic_variation() {
        let mut model = scalar_s1(1000);
        model.plant_noise = crate::model::MatrixSchedule::Constant(Matrix::zeros(1, 1));
        let field = KernelField::new(&model).unwrap();
        let sim = Simulator::new(&model).unwrap().without_observation_noise();
        let report = run_monte_carlo(&field, &sim, 4, 1, &[0.5], &[]).unwrap();
        assert!(report.whiteness.quadratic_variation.amax() < 1e-12);
    }

    #[test]
    fn reduction_is_independent_of_thread_count() {
        let model = scalar_s1(200);
        let field = KernelField::new(&model).unwrap();
        let sim = Simulator::new(&model).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_monte_carlo(&field, &sim, 500, 8, &[0.5, 1.0], &[100, 500]).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
