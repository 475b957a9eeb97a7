//! Mean equations, the Kalman filter, the innovation-form smoother and the
//! kernel-route smoother on the model grid.
//!
//! Observations enter through centered increments
//! `Δỹ_k = y(τ_{k+1}) - y(τ_k) - (H x̄ + h)(τ_k) δ`. The filter propagates
//! `r = x̂ - x̄` with the exact `Π`-closed transition over each panel,
//!
//! ```text
//! r_{k+1} = Φπ(τ_{k+1}, τ_k) (r_k + Π_k HᵀR⁻¹ Δỹ_k)
//! ```
//!
//! which makes the backward pass below the discrete adjoint of the kernel
//! route `x̄ + Σ_k K(·, τ_k) HᵀR⁻¹ Δỹ_k`.

use crate::error::{Error, Result};
use crate::kernels::KernelField;
use crate::model::LtvModel;
use crate::numcore::{rk4_integrate, Direction, Matrix, Vector};
use crate::riccati::{RiccatiSolution, TransitionFamily, TransitionKind};

/// Cumulative observation process sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    pub y: Vec<Vector>,
}

impl ObservationPath {
    pub fn new(y: Vec<Vector>) -> Result<Self> {
        if let Some(k) = y.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteState { index: k });
        }
        Ok(Self { y })
    }

    /// Builds the path from its starting value and increments.
    pub fn from_increments(y0: &Vector, increments: &[Vector]) -> Self {
        let mut y = Vec::with_capacity(increments.len() + 1);
        y.push(y0.clone());
        for dy in increments {
            let next = y.last().expect("nonempty") + dy;
            y.push(next);
        }
        Self { y }
    }

    pub fn increments(&self) -> Vec<Vector> {
        self.y.windows(2).map(|w| &w[1] - &w[0]).collect()
    }

    fn check(&self, model: &LtvModel) -> Result<()> {
        if self.y.len() != model.grid.len() {
            return Err(Error::GridMismatch {
                expected: model.grid.len(),
                got: self.y.len(),
            });
        }
        match self.y.first() {
            Some(y) if y.len() != model.obs_dim() => Err(Error::Dimension(format!(
                "observation has {} entries, model expects {}",
                y.len(),
                model.obs_dim()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanPaths {
    pub x: Vec<Vector>,
    pub y: Vec<Vector>,
}

fn column(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// `dx̄/dt = F x̄ + f` by RK4 and `ȳ = y₀ + ∫ (H x̄ + h)` by trapezoid.
pub fn mean_paths(model: &LtvModel) -> Result<MeanPaths> {
    let grid = model.grid;
    let x0 = Matrix::from_column_slice(model.state_dim(), 1, model.x0.as_slice());
    let x = rk4_integrate(
        |t, x| model.dynamics_at(t) * x + model.state_drift.eval(&grid, t).expect("inside horizon"),
        &x0,
        &grid,
        Direction::Forward,
    )?;
    let x: Vec<Vector> = x.iter().map(column).collect();
    let rate: Vec<Vector> = (0..grid.len()).map(|k| predicted_rate(model, &x, k)).collect();
    let mut y = Vec::with_capacity(grid.len());
    y.push(model.y0.clone());
    for k in 0..grid.last() {
        let next = y.last().expect("nonempty") + (&rate[k] + &rate[k + 1]) * (0.5 * grid.step());
        y.push(next);
    }
    Ok(MeanPaths { x, y })
}

fn predicted_rate(model: &LtvModel, mean_x: &[Vector], k: usize) -> Vector {
    model.observation.at(k) * &mean_x[k] + column(model.observation_drift.at(k))
}

/// Per-panel matrices shared by every observation path of one model.
#[derive(Debug, Clone)]
pub struct FilterPlan {
    step: f64,
    mean: MeanPaths,
    /// `Φπ(τ_{k+1}, τ_k)`.
    panel_transition: Vec<Matrix>,
    /// `Π_k`.
    pi: Vec<Matrix>,
    /// `H_k`.
    observation: Vec<Matrix>,
    /// `H_kᵀ R_k⁻¹`.
    gain_factor: Vec<Matrix>,
    /// `H_kᵀ R_k⁻¹ H_k`.
    information: Vec<Matrix>,
    /// `(H x̄ + h)(τ_k) δ`.
    predicted_increment: Vec<Vector>,
}

impl FilterPlan {
    pub fn new(model: &LtvModel, riccati: &RiccatiSolution) -> Result<Self> {
        let pc = TransitionFamily::build(model, riccati, TransitionKind::PiClosed)?;
        Self::with_transitions(model, riccati, &pc)
    }

    pub fn with_transitions(model: &LtvModel, riccati: &RiccatiSolution, pi_closed: &TransitionFamily) -> Result<Self> {
        let grid = model.grid;
        let mean = mean_paths(model)?;
        let step = grid.step();
        Ok(Self {
            step,
            panel_transition: (0..grid.last()).map(|k| pi_closed.between(k + 1, k)).collect(),
            pi: (0..grid.len()).map(|k| riccati.pi(k).clone()).collect(),
            observation: (0..grid.len()).map(|k| model.observation.at(k).clone()).collect(),
            gain_factor: (0..grid.len()).map(|k| model.observation_gain_factor(k)).collect(),
            information: (0..grid.len()).map(|k| model.observation_information(k)).collect(),
            predicted_increment: (0..grid.last())
                .map(|k| predicted_rate(model, &mean.x, k) * step)
                .collect(),
            mean,
        })
    }

    pub fn mean(&self) -> &MeanPaths {
        &self.mean
    }

    /// `Δỹ_k` for `k < N`.
    pub fn centered_increments(&self, obs: &ObservationPath) -> Vec<Vector> {
        obs.y
            .windows(2)
            .zip(&self.predicted_increment)
            .map(|(w, p)| &w[1] - &w[0] - p)
            .collect()
    }

    /// Forward pass on centered increments: `r` at every node and the
    /// innovation increments
    /// `Δe_k = Δỹ_k - δ H_k (r_k + ½ Π_k HᵀR⁻¹ Δỹ_k)`.
    pub fn forward(&self, centered: &[Vector]) -> (Vec<Vector>, Vec<Vector>) {
        let n = self.pi[0].nrows();
        let mut r = Vec::with_capacity(centered.len() + 1);
        let mut innovation = Vec::with_capacity(centered.len());
        let mut current = Vector::zeros(n);
        for (k, dy) in centered.iter().enumerate() {
            let jump = &self.pi[k] * (&self.gain_factor[k] * dy);
            let midpoint = &current + &jump * 0.5;
            innovation.push(dy - &self.observation[k] * midpoint * self.step);
            let next = &self.panel_transition[k] * (&current + jump);
            r.push(std::mem::replace(&mut current, next));
        }
        r.push(current);
        (r, innovation)
    }

    /// Backward accumulation `x̂(s|T) - x̂(s|s) = Π(s) a(s)`.
    pub fn backward(&self, r: &[Vector], innovation: &[Vector]) -> Vec<Vector> {
        let last = innovation.len();
        let half = 0.5 * self.step;
        let mut correction = vec![Vector::zeros(r[0].len()); last + 1];
        let mut acc = -(&self.information[last] * &r[last]) * half;
        for k in (0..last).rev() {
            acc = &self.gain_factor[k] * &innovation[k] + self.panel_transition[k].transpose() * acc;
            let a = &acc + &self.information[k] * &r[k] * half;
            correction[k] = &self.pi[k] * a;
        }
        correction
    }
}

/// Output of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// `x̂(t|t)`.
    pub filtered: Vec<Vector>,
    /// `r = x̂(t|t) - x̄(t)`.
    pub r_path: Vec<Vector>,
    /// Cumulative innovation `e(t)` with `e(t₀) = 0`.
    pub innovation: Vec<Vector>,
    /// `Δe_k` for `k < N`.
    pub innovation_increments: Vec<Vector>,
}

pub fn kalman_filter(model: &LtvModel, riccati: &RiccatiSolution, obs: &ObservationPath) -> Result<FilterOutput> {
    obs.check(model)?;
    let plan = FilterPlan::new(model, riccati)?;
    Ok(run_filter(&plan, obs))
}

fn run_filter(plan: &FilterPlan, obs: &ObservationPath) -> FilterOutput {
    let centered = plan.centered_increments(obs);
    let (r_path, innovation_increments) = plan.forward(&centered);
    let filtered = r_path.iter().zip(&plan.mean.x).map(|(r, m)| r + m).collect();
    let mut innovation = Vec::with_capacity(r_path.len());
    innovation.push(Vector::zeros(obs.y[0].len()));
    for de in &innovation_increments {
        let next = innovation.last().expect("nonempty") + de;
        innovation.push(next);
    }
    FilterOutput {
        filtered,
        r_path,
        innovation,
        innovation_increments,
    }
}

pub fn rts_smooth(model: &LtvModel, riccati: &RiccatiSolution, filtered: &FilterOutput) -> Result<Vec<Vector>> {
    let grid = model.grid;
    if filtered.r_path.len() != grid.len() || filtered.innovation_increments.len() != grid.last() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: filtered.r_path.len(),
        });
    }
    let plan = FilterPlan::new(model, riccati)?;
    let correction = plan.backward(&filtered.r_path, &filtered.innovation_increments);
    Ok(filtered.filtered.iter().zip(correction).map(|(x, c)| x + c).collect())
}

/// `x̄(s) + Σ_{k<N} K(s, τ_k) H_kᵀR_k⁻¹ Δỹ_k`.
pub fn smooth_via_kernel_route(model: &LtvModel, field: &KernelField, obs: &ObservationPath) -> Result<Vec<Vector>> {
    field.ensure_terminal_weight_zero()?;
    obs.check(model)?;
    let mean = mean_paths(model)?;
    let grid = model.grid;
    let mut coeffs: Vec<Vector> = obs
        .y
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let centered = &w[1] - &w[0] - predicted_rate(model, &mean.x, k) * grid.step();
            model.observation_gain_factor(k) * centered
        })
        .collect();
    coeffs.push(Vector::zeros(model.state_dim()));
    let correction = field.apply_k(&coeffs)?;
    Ok(mean.x.iter().zip(correction).map(|(m, c)| m + c).collect())
}

/// `K(s, t | T) H(t)ᵀ R(t)⁻¹`, the weight of `dỹ(t)` in `x̂(s|T)`.
pub fn optimal_gain(field: &KernelField, s: f64, t: f64) -> Result<Matrix> {
    field.ensure_terminal_weight_zero()?;
    let k = field.grid().index_of(t)?;
    Ok(field.kernel_k(s, t)? * field.model().observation_gain_factor(k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherResult {
    pub mean_x: Vec<Vector>,
    pub mean_y: Vec<Vector>,
    pub filtered: Vec<Vector>,
    pub r_path: Vec<Vector>,
    pub innovation: Vec<Vector>,
    pub smoothed: Vec<Vector>,
    /// `K(s, s | T)` at every node.
    pub smoothed_cov_diag: Vec<Matrix>,
}

/// Filter, innovation-form smoother and the smoothed error covariance for
/// one observation path.
pub fn smooth(field: &KernelField, obs: &ObservationPath) -> Result<SmootherResult> {
    field.ensure_terminal_weight_zero()?;
    let model = field.model();
    obs.check(model)?;
    let plan = FilterPlan::with_transitions(model, field.riccati(), &field.transitions().pi_closed)?;
    let out = run_filter(&plan, obs);
    let correction = plan.backward(&out.r_path, &out.innovation_increments);
    let smoothed = out.filtered.iter().zip(correction).map(|(x, c)| x + c).collect();
    Ok(SmootherResult {
        mean_x: plan.mean.x.clone(),
        mean_y: plan.mean.y.clone(),
        filtered: out.filtered,
        r_path: out.r_path,
        innovation: out.innovation,
        smoothed,
        smoothed_cov_diag: (0..model.grid.len()).map(|k| field.k_at(k, k)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::systems::*;
    use crate::model::MatrixSchedule;

    fn noisy_observation(model: &LtvModel, seed: u64) -> ObservationPath {
        let mut rng = Uniform::new(seed);
        let m = model.obs_dim();
        let scale = model.grid.step().sqrt();
        let inc: Vec<Vector> = (0..model.grid.last())
            .map(|_| Vector::from_fn(m, |_, _| rng.range(-1.7, 1.7) * scale))
            .collect();
        ObservationPath::from_increments(&model.y0, &inc)
    }

    #[test]
    fn mean_paths_closed_forms() {
        let model = scalar_s1(100);
        assert!(mean_paths(&model).unwrap().x.iter().all(|x| x[0] == 0.0));

        let mut drift = scalar_s1(100);
        drift.state_drift = MatrixSchedule::Constant(Matrix::from_element(1, 1, 1.0));
        for (k, x) in mean_paths(&drift).unwrap().x.iter().enumerate() {
            assert!((x[0] - k as f64 / 100.0).abs() < 1e-12);
        }

        let mut decay = scalar_s1(1000);
        decay.dynamics = MatrixSchedule::Constant(Matrix::from_element(1, 1, -0.8));
        decay.x0 = Vector::from_element(1, 1.0);
        let mean = mean_paths(&decay).unwrap();
        for (k, x) in mean.x.iter().enumerate() {
            assert!((x[0] - (-0.8 * k as f64 / 1000.0).exp()).abs() < 1e-8);
        }
        // ȳ = ∫ e^{-0.8t}
        let expected = (1.0 - (-0.8f64).exp()) / 0.8;
        assert!((mean.y[1000][0] - expected).abs() < 1e-6);
    }

    #[test]
    fn mean_observations_leave_filter_at_mean() {
        let mut model = random_time_varying(4, 2, 200);
        model.sigma_t = Matrix::zeros(2, 2);
        let ric = RiccatiSolution::solve(&model).unwrap();
        let plan = FilterPlan::new(&model, &ric).unwrap();
        let inc = plan.predicted_increment.clone();
        let obs = ObservationPath::from_increments(&model.y0, &inc);
        let out = kalman_filter(&model, &ric, &obs).unwrap();
        assert!(out.r_path.iter().all(|r| r.amax() < 1e-14));
        let smoothed = rts_smooth(&model, &ric, &out).unwrap();
        for (s, m) in smoothed.iter().zip(&plan.mean.x) {
            assert!((s - m).amax() < 1e-14);
        }
    }

    #[test]
    fn blind_filter_follows_the_mean() {
        let model = brownian_b1(100);
        let field = KernelField::new(&model).unwrap();
        let obs = noisy_observation(&model, 3);
        let res = smooth(&field, &obs).unwrap();
        for k in 0..=100 {
            assert_eq!(res.filtered[k], res.mean_x[k]);
            assert_eq!(res.smoothed[k], res.mean_x[k]);
        }
        let kr = smooth_via_kernel_route(&model, &field, &obs).unwrap();
        assert!(kr.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn filter_and_smoother_meet_at_the_end() {
        let model = random_time_varying(8, 2, 300);
        let mut model = model;
        model.sigma_t = Matrix::zeros(2, 2);
        let field = KernelField::new(&model).unwrap();
        let res = smooth(&field, &noisy_observation(&model, 5)).unwrap();
        assert!((&res.smoothed[300] - &res.filtered[300]).amax() < 1e-8);
    }

    #[test]
    fn routes_agree_on_s1() {
        let model = scalar_s1(1000);
        let field = KernelField::new(&model).unwrap();
        for seed in 0..3 {
            let obs = noisy_observation(&model, seed);
            let res = smooth(&field, &obs).unwrap();
            let kr = smooth_via_kernel_route(&model, &field, &obs).unwrap();
            for (a, b) in res.smoothed.iter().zip(&kr) {
                assert!((a - b).amax() < 1e-5);
            }
        }
    }

    #[test]
    fn smoother_is_linear_in_centered_increments() {
        let mut model = random_time_varying(2, 2, 200);
        model.sigma_t = Matrix::zeros(2, 2);
        let field = KernelField::new(&model).unwrap();
        let plan = FilterPlan::new(&model, field.riccati()).unwrap();
        let a = plan.centered_increments(&noisy_observation(&model, 1));
        let b = plan.centered_increments(&noisy_observation(&model, 2));
        let run = |c: &[Vector]| {
            let (r, e) = plan.forward(c);
            let corr = plan.backward(&r, &e);
            r.iter().zip(corr).map(|(r, c)| r + c).collect::<Vec<_>>()
        };
        let combo: Vec<Vector> = a.iter().zip(&b).map(|(x, y)| x * 2.0 - y * 0.5).collect();
        let (sa, sb, sc) = (run(&a), run(&b), run(&combo));
        for k in 0..sa.len() {
            assert!((&sc[k] - (&sa[k] * 2.0 - &sb[k] * 0.5)).amax() < 1e-10);
        }
    }

    #[test]
    fn gain_identities() {
        let field = KernelField::new(&scalar_s1(1000)).unwrap();
        let g = optimal_gain(&field, 1.0, 1.0).unwrap();
        assert!((g[(0, 0)] - 1f64.tanh()).abs() < 1e-6);
        assert_eq!(optimal_gain(&field, 1.0, 0.3).unwrap(), field.kernel_k(1.0, 0.3).unwrap());
        let blind = KernelField::new(&brownian_b1(10)).unwrap();
        assert_eq!(optimal_gain(&blind, 0.5, 0.2).unwrap()[(0, 0)], 0.0);
        let mut weighted = scalar_s1(10);
        weighted.sigma_t = Matrix::from_element(1, 1, 1.0);
        let field = KernelField::new(&weighted).unwrap();
        assert!(matches!(optimal_gain(&field, 0.5, 0.5), Err(Error::PreconditionViolation(_))));
    }

    #[test]
    fn wrong_length_observations_are_rejected() {
        let model = scalar_s1(10);
        let ric = RiccatiSolution::solve(&model).unwrap();
        let obs = ObservationPath::new(vec![Vector::zeros(1); 5]).unwrap();
        assert!(matches!(
            kalman_filter(&model, &ric, &obs),
            Err(Error::GridMismatch { expected: 11, got: 5 })
        ));
        assert!(ObservationPath::new(vec![Vector::from_element(1, f64::NAN)]).is_err());
    }
}
