//! Forward and backward Riccati equations and the state-transition families
//! built on their solutions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LtvModel;
use crate::numcore::{checked_inverse, rk4_integrate, symmetrize, Direction, Matrix, TimeGrid};

/// Largest condition number accepted for a stored fundamental matrix.
pub const MAX_FUNDAMENTAL_CONDITION: f64 = 1e12;

/// Riccati paths on the model grid.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    /// `Π(τ_k)`, forward from `Π₀`.
    pub pi_path: Vec<Matrix>,
    /// `Σ(τ_k)`, backward from `Σ_T`.
    pub sigma_path: Vec<Matrix>,
    dpi_path: Vec<Matrix>,
    dsigma_path: Vec<Matrix>,
}

fn pi_rhs(model: &LtvModel, t: f64, pi: &Matrix) -> Matrix {
    let f = model.dynamics_at(t);
    let m = model.observation_information_at(t);
    let fp = &f * pi;
    &fp + fp.transpose() - pi * m * pi + model.plant_diffusion_at(t)
}

/// `dΣ/dt`, i.e. minus the right-hand side of the backward equation.
fn sigma_rhs(model: &LtvModel, t: f64, sigma: &Matrix) -> Matrix {
    let f = model.dynamics_at(t);
    let gqg = model.plant_diffusion_at(t);
    let sf = sigma * &f;
    -(&sf + sf.transpose() - sigma * gqg * sigma + model.observation_information_at(t))
}

/// RK4 with the iterate symmetrized after every step.
fn symmetric_rk4(
    rhs: impl Fn(f64, &Matrix) -> Matrix,
    x0: &Matrix,
    grid: &TimeGrid,
    direction: Direction,
) -> Result<Vec<Matrix>> {
    // a single-step integration per panel keeps symmetrization per step
    let n = grid.n_steps();
    let h = grid.step();
    let mut path = vec![Matrix::zeros(0, 0); n + 1];
    let (start, sign) = match direction {
        Direction::Forward => (0usize, 1.0),
        Direction::Backward => (n, -1.0),
    };
    let mut x = symmetrize(x0);
    path[start] = x.clone();
    for step in 0..n {
        let (k, next) = match direction {
            Direction::Forward => (step, step + 1),
            Direction::Backward => (n - step, n - step - 1),
        };
        let t = grid.time(k);
        let dt = sign * h;
        let k1 = rhs(t, &x);
        let k2 = rhs(t + 0.5 * dt, &(&x + &k1 * (0.5 * dt)));
        let k3 = rhs(t + 0.5 * dt, &(&x + &k2 * (0.5 * dt)));
        let k4 = rhs(grid.time(next), &(&x + &k3 * dt));
        x = symmetrize(&(&x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { index: next });
        }
        path[next] = x.clone();
    }
    Ok(path)
}

/// Forward Riccati path `Π`.
pub fn solve_pi(model: &LtvModel) -> Result<Vec<Matrix>> {
    symmetric_rk4(|t, p| pi_rhs(model, t, p), &model.pi0, &model.grid, Direction::Forward)
}

/// Backward Riccati path `Σ`.
pub fn solve_sigma(model: &LtvModel) -> Result<Vec<Matrix>> {
    symmetric_rk4(
        |t, s| sigma_rhs(model, t, s),
        &model.sigma_t,
        &model.grid,
        Direction::Backward,
    )
}

impl RiccatiSolution {
    pub fn solve(model: &LtvModel) -> Result<Self> {
        let grid = model.grid;
        let pi_path = solve_pi(model)?;
        let sigma_path = solve_sigma(model)?;
        let dpi_path = pi_path
            .iter()
            .enumerate()
            .map(|(k, p)| pi_rhs(model, grid.time(k), p))
            .collect();
        let dsigma_path = sigma_path
            .iter()
            .enumerate()
            .map(|(k, s)| sigma_rhs(model, grid.time(k), s))
            .collect();
        Ok(Self {
            grid,
            pi_path,
            sigma_path,
            dpi_path,
            dsigma_path,
        })
    }

    pub fn pi(&self, k: usize) -> &Matrix {
        &self.pi_path[k]
    }

    pub fn sigma(&self, k: usize) -> &Matrix {
        &self.sigma_path[k]
    }

    /// `Π(t)` off the grid by cubic Hermite interpolation of the path and
    /// its Riccati derivative; fourth order, matching RK4.
    pub fn pi_at(&self, t: f64) -> Matrix {
        hermite(&self.grid, &self.pi_path, &self.dpi_path, t)
    }

    pub fn sigma_at(&self, t: f64) -> Matrix {
        hermite(&self.grid, &self.sigma_path, &self.dsigma_path, t)
    }
}

fn hermite(grid: &TimeGrid, values: &[Matrix], derivs: &[Matrix], t: f64) -> Matrix {
    let (k, s) = grid.locate(t).expect("Riccati paths are evaluated inside the horizon");
    if s == 0.0 {
        return values[k].clone();
    }
    if s == 1.0 {
        return values[k + 1].clone();
    }
    let h = grid.step();
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    &values[k] * h00 + &derivs[k] * (h10 * h) + &values[k + 1] * h01 + &derivs[k + 1] * (h11 * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// `Φ_F`, generator `F`.
    OpenLoop,
    /// `Φ_{F,Σ}`, generator `F - G Q G* Σ`.
    SigmaClosed,
    /// `Φ_{F,Π}`, generator `F - Π H* R⁻¹ H`.
    PiClosed,
}

/// Fundamental solutions `Ψ(τ_k) = Φ(τ_k, t₀)` and their inverses.
#[derive(Debug, Clone)]
pub struct TransitionFamily {
    pub kind: TransitionKind,
    grid: TimeGrid,
    fundamental: Vec<Matrix>,
    inverse: Vec<Matrix>,
    /// Worst condition number over the stored fundamentals.
    pub max_condition: f64,
}

impl TransitionFamily {
    pub fn build(model: &LtvModel, riccati: &RiccatiSolution, kind: TransitionKind) -> Result<Self> {
        let n = model.state_dim();
        let generator = |t: f64| -> Matrix {
            let f = model.dynamics_at(t);
            match kind {
                TransitionKind::OpenLoop => f,
                TransitionKind::SigmaClosed => f - model.plant_diffusion_at(t) * riccati.sigma_at(t),
                TransitionKind::PiClosed => f - riccati.pi_at(t) * model.observation_information_at(t),
            }
        };
        let fundamental = rk4_integrate(
            |t, x| generator(t) * x,
            &Matrix::identity(n, n),
            &model.grid,
            Direction::Forward,
        )?;
        let mut inverse = Vec::with_capacity(fundamental.len());
        let mut max_condition = 1.0f64;
        for psi in &fundamental {
            let (inv, cond) = checked_inverse(psi, MAX_FUNDAMENTAL_CONDITION)
                .map_err(|condition| Error::SingularFundamental { condition })?;
            max_condition = max_condition.max(cond);
            inverse.push(inv);
        }
        Ok(Self {
            kind,
            grid: model.grid,
            fundamental,
            inverse,
            max_condition,
        })
    }

    /// `Φ(τ_k, t₀)`.
    pub fn fundamental(&self, k: usize) -> &Matrix {
        &self.fundamental[k]
    }

    /// `Φ(τ_k, t₀)⁻¹ = Φ(t₀, τ_k)`.
    pub fn fundamental_inverse(&self, k: usize) -> &Matrix {
        &self.inverse[k]
    }

    /// `Φ(τ_i, τ_j)` by grid index.
    pub fn between(&self, i: usize, j: usize) -> Matrix {
        if i == j {
            let n = self.fundamental[0].nrows();
            return Matrix::identity(n, n);
        }
        &self.fundamental[i] * &self.inverse[j]
    }

    /// `Φ(s, t)` for grid times.
    pub fn eval(&self, s: f64, t: f64) -> Result<Matrix> {
        Ok(self.between(self.grid.index_of(s)?, self.grid.index_of(t)?))
    }
}

/// `Φ_kind(s, t)` for grid times `s`, `t`.
pub fn transition(model: &LtvModel, riccati: &RiccatiSolution, kind: TransitionKind, s: f64, t: f64) -> Result<Matrix> {
    TransitionFamily::build(model, riccati, kind)?.eval(s, t)
}

/// The three transition families of a solved model.
#[derive(Debug, Clone)]
pub struct Transitions {
    pub open_loop: TransitionFamily,
    pub sigma_closed: TransitionFamily,
    pub pi_closed: TransitionFamily,
}

impl Transitions {
    pub fn build(model: &LtvModel, riccati: &RiccatiSolution) -> Result<Self> {
        Ok(Self {
            open_loop: TransitionFamily::build(model, riccati, TransitionKind::OpenLoop)?,
            sigma_closed: TransitionFamily::build(model, riccati, TransitionKind::SigmaClosed)?,
            pi_closed: TransitionFamily::build(model, riccati, TransitionKind::PiClosed)?,
        })
    }

    pub fn get(&self, kind: TransitionKind) -> &TransitionFamily {
        match kind {
            TransitionKind::OpenLoop => &self.open_loop,
            TransitionKind::SigmaClosed => &self.sigma_closed,
            TransitionKind::PiClosed => &self.pi_closed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::systems::*;
    use crate::model::MatrixSchedule;
    use crate::numcore::{max_abs_diff, min_eigenvalue};

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn s1_tanh() {
        let model = scalar_s1(1000);
        let sol = RiccatiSolution::solve(&model).unwrap();
        assert!((sol.pi(1000)[(0, 0)] - 1f64.tanh()).abs() < 1e-8);
        assert!((sol.sigma(0)[(0, 0)] - 1f64.tanh()).abs() < 1e-8);
        for k in (0..=1000).step_by(50) {
            let t = model.grid.time(k);
            assert!((sol.pi(k)[(0, 0)] - t.tanh()).abs() < 1e-8);
            assert!((sol.sigma(k)[(0, 0)] - (1.0 - t).tanh()).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_riccati_cases() {
        // G = 0, Π₀ = 0: Π ≡ 0
        let sol = RiccatiSolution::solve(&observed_o1(100)).unwrap();
        assert!(sol.pi_path.iter().all(|p| p[(0, 0)] == 0.0));
        // O1: Σ(t) = T - t
        for (k, s) in sol.sigma_path.iter().enumerate() {
            assert!((s[(0, 0)] - (1.0 - k as f64 / 100.0)).abs() < 1e-12);
        }
        // H = 0: Π(t) = t and Σ ≡ 0
        let sol = RiccatiSolution::solve(&brownian_b1(100)).unwrap();
        for (k, p) in sol.pi_path.iter().enumerate() {
            assert!((p[(0, 0)] - k as f64 / 100.0).abs() < 1e-12);
        }
        assert!(sol.sigma_path.iter().all(|s| s[(0, 0)] == 0.0));
    }

    #[test]
    fn midpoint_interpolation_is_accurate() {
        let sol = RiccatiSolution::solve(&scalar_s1(100)).unwrap();
        let t = 0.315;
        assert!((sol.pi_at(t)[(0, 0)] - t.tanh()).abs() < 1e-9);
        assert!((sol.sigma_at(t)[(0, 0)] - (1.0 - t).tanh()).abs() < 1e-9);
    }

    #[test]
    fn transition_examples() {
        let mut model = scalar_s1(1000);
        let sol = RiccatiSolution::solve(&model).unwrap();
        let pi_closed = TransitionFamily::build(&model, &sol, TransitionKind::PiClosed).unwrap();
        for (s, t) in [(0.7, 0.2), (0.3, 0.9), (1.0, 0.0)] {
            let v = pi_closed.eval(s, t).unwrap()[(0, 0)];
            assert!((v - t.cosh() / s.cosh()).abs() < 1e-6, "{s} {t}");
        }
        assert_eq!(pi_closed.eval(0.4, 0.4).unwrap(), scalar(1.0));

        let a = -0.8;
        model.dynamics = MatrixSchedule::Constant(scalar(a));
        let sol = RiccatiSolution::solve(&model).unwrap();
        let open = TransitionFamily::build(&model, &sol, TransitionKind::OpenLoop).unwrap();
        for (s, t) in [(0.7, 0.2), (0.1, 0.9)] {
            let v = open.eval(s, t).unwrap()[(0, 0)];
            assert!((v - (a * (s - t)).exp()).abs() < 1e-8);
        }
        assert!(matches!(open.eval(0.1234567, 0.2), Err(Error::OffGrid { .. })));
    }

    #[test]
    fn cocycle_on_random_system() {
        let model = random_time_varying(3, 3, 400);
        let sol = RiccatiSolution::solve(&model).unwrap();
        let tr = Transitions::build(&model, &sol).unwrap();
        for kind in [TransitionKind::OpenLoop, TransitionKind::SigmaClosed, TransitionKind::PiClosed] {
            let fam = tr.get(kind);
            for (i, j, l) in [(10, 200, 390), (400, 0, 123), (57, 58, 0)] {
                let lhs = fam.between(i, j) * fam.between(j, l);
                assert!(max_abs_diff(&lhs, &fam.between(i, l)) < 1e-8);
            }
        }
    }

    #[test]
    fn negative_inverse_of_pi_solves_the_backward_equation() {
        // Π⁻¹ flips the sign of both the quadratic and the source term, so it
        // is -Π⁻¹ that solves the backward equation when started from -Π(T)⁻¹
        let mut model = random_stable(8, 2, 1000);
        model.pi0 = Matrix::identity(2, 2);
        let pi = solve_pi(&model).unwrap();
        model.sigma_t = -pi[1000].clone().try_inverse().unwrap();
        let sigma = solve_sigma(&model).unwrap();
        for k in 0..=1000 {
            let inv = pi[k].clone().try_inverse().unwrap();
            assert!(max_abs_diff(&sigma[k], &(-inv)) < 1e-6);
        }
    }

    #[test]
    fn paths_are_psd_and_symmetric() {
        for seed in 0..4 {
            let model = random_time_varying(seed, 3, 300);
            let sol = RiccatiSolution::solve(&model).unwrap();
            for k in 0..=300 {
                assert!(min_eigenvalue(sol.pi(k)) >= -1e-8);
                assert!(min_eigenvalue(sol.sigma(k)) >= -1e-8);
                assert_eq!(sol.pi(k), &sol.pi(k).transpose());
            }
        }
    }

    #[test]
    fn sigma_bounded_by_open_loop_observability() {
        let model = random_stable(21, 3, 1000);
        let sol = RiccatiSolution::solve(&model).unwrap();
        let tr = Transitions::build(&model, &sol).unwrap();
        let mut rng = Uniform::new(4);
        let info = model.observation_information(0);
        for k in [0, 250, 700] {
            let g = rng.matrix(3, 1, -1.0, 1.0);
            let lhs = (g.transpose() * sol.sigma(k) * &g)[(0, 0)];
            // ∫_t^T ⟨Φ_F(τ,t)γ, H*R⁻¹H Φ_F(τ,t)γ⟩ dτ by trapezoid
            let mut rhs = 0.0;
            for j in k..=1000 {
                let x = tr.open_loop.between(j, k) * &g;
                rhs += model.grid.trapezoid_weight(j, k, 1000) * (x.transpose() * &info * &x)[(0, 0)];
            }
            assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
        }
    }
}
