//! The linear time-varying estimation problem.
//!
//! State `dx = (F x + f) dt + G dw`, observation `dy = (H x + h) dt + db`,
//! with `w`, `b` Wiener processes of covariances `Q`, `R`, initial state
//! `x0 + ξ`, `ξ ~ N(0, Π₀)`, and an optional terminal weight `Σ_T`.

mod config;
pub mod systems;

pub use config::{load_model, to_config_json};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{asymmetry, max_abs, min_eigenvalue, pinv, spd_inverse, Matrix, TimeGrid, Vector};

/// Eigenvalue tolerance for PSD checks on `Q`, `Π₀`, `Σ_T`.
pub const PSD_TOL: f64 = 1e-10;
/// Smallest admissible eigenvalue of `R(t)`.
pub const R_MIN: f64 = 1e-10;

/// A matrix-valued function of time, either constant or sampled at every
/// grid point and linearly interpolated in between.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSchedule {
    Constant(Matrix),
    Tabulated(Vec<Matrix>),
}

impl MatrixSchedule {
    pub fn constant(m: Matrix) -> Self {
        Self::Constant(m)
    }

    pub fn tabulate(grid: &TimeGrid, f: impl Fn(f64) -> Matrix) -> Self {
        Self::Tabulated(grid.points().into_iter().map(f).collect())
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::Constant(m) => m.shape(),
            Self::Tabulated(v) => v.first().map(|m| m.shape()).unwrap_or((0, 0)),
        }
    }

    /// Value at grid index `k`.
    pub fn at(&self, k: usize) -> &Matrix {
        match self {
            Self::Constant(m) => m,
            Self::Tabulated(v) => &v[k],
        }
    }

    /// Value at an arbitrary time in the horizon (exact at grid points).
    pub fn eval(&self, grid: &TimeGrid, t: f64) -> Result<Matrix> {
        match self {
            Self::Constant(m) => {
                if !grid.contains(t) {
                    return Err(Error::OutOfHorizon {
                        t,
                        t0: grid.t0(),
                        t_end: grid.t_end(),
                    });
                }
                Ok(m.clone())
            }
            Self::Tabulated(v) => {
                if v.len() != grid.len() {
                    return Err(Error::GridMismatch {
                        expected: grid.len(),
                        got: v.len(),
                    });
                }
                let (k, theta) = grid.locate(t)?;
                if theta == 0.0 {
                    return Ok(v[k].clone());
                }
                if theta == 1.0 {
                    return Ok(v[k + 1].clone());
                }
                Ok(&v[k] * (1.0 - theta) + &v[k + 1] * theta)
            }
        }
    }

    /// Same schedule with time reversed on a uniform grid.
    pub fn reversed(&self) -> Self {
        match self {
            Self::Constant(m) => Self::Constant(m.clone()),
            Self::Tabulated(v) => Self::Tabulated(v.iter().rev().cloned().collect()),
        }
    }

    pub fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> Self {
        match self {
            Self::Constant(m) => Self::Constant(f(m)),
            Self::Tabulated(v) => Self::Tabulated(v.iter().map(f).collect()),
        }
    }

    fn samples(&self) -> Box<dyn Iterator<Item = (Option<usize>, &Matrix)> + '_> {
        match self {
            Self::Constant(m) => Box::new(std::iter::once((None, m))),
            Self::Tabulated(v) => Box::new(v.iter().enumerate().map(|(k, m)| (Some(k), m))),
        }
    }
}

/// Full description of the estimation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvModel {
    pub grid: TimeGrid,
    /// `F`, n×n.
    pub dynamics: MatrixSchedule,
    /// `G`, n×p.
    pub noise_input: MatrixSchedule,
    /// `Q`, p×p.
    pub plant_noise: MatrixSchedule,
    /// `H`, m×n.
    pub observation: MatrixSchedule,
    /// `R`, m×m.
    pub observation_noise: MatrixSchedule,
    /// `f`, n×1.
    pub state_drift: MatrixSchedule,
    /// `h`, m×1.
    pub observation_drift: MatrixSchedule,
    pub x0: Vector,
    pub y0: Vector,
    pub pi0: Matrix,
    pub sigma_t: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Dimension,
    ScheduleLength,
    NonFinite,
    NotSymmetric,
    NotPsd,
    NotUniformlyPositive,
}

/// One failed model invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub kind: ViolationKind,
    pub grid_index: Option<usize>,
    pub message: String,
}

impl Violation {
    fn new(field: &str, kind: ViolationKind, grid_index: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            kind,
            grid_index,
            message: message.into(),
        }
    }
}

impl LtvModel {
    /// Time-invariant model with zero drifts and offsets.
    #[allow(clippy::too_many_arguments)]
    pub fn time_invariant(
        grid: TimeGrid,
        dynamics: Matrix,
        noise_input: Matrix,
        plant_noise: Matrix,
        observation: Matrix,
        observation_noise: Matrix,
        pi0: Matrix,
        sigma_t: Matrix,
    ) -> Self {
        let n = dynamics.nrows();
        let m = observation.nrows();
        Self {
            grid,
            dynamics: MatrixSchedule::Constant(dynamics),
            noise_input: MatrixSchedule::Constant(noise_input),
            plant_noise: MatrixSchedule::Constant(plant_noise),
            observation: MatrixSchedule::Constant(observation),
            observation_noise: MatrixSchedule::Constant(observation_noise),
            state_drift: MatrixSchedule::Constant(Matrix::zeros(n, 1)),
            observation_drift: MatrixSchedule::Constant(Matrix::zeros(m, 1)),
            x0: Vector::zeros(n),
            y0: Vector::zeros(m),
            pi0,
            sigma_t,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.dims().0
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_input.dims().1
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.dims().0
    }

    /// All schedules constant.
    pub fn is_time_invariant(&self) -> bool {
        [
            &self.dynamics,
            &self.noise_input,
            &self.plant_noise,
            &self.observation,
            &self.observation_noise,
            &self.state_drift,
            &self.observation_drift,
        ]
        .iter()
        .all(|s| s.is_constant())
    }

    pub fn sigma_t_is_zero(&self) -> bool {
        self.sigma_t.iter().all(|v| *v == 0.0)
    }

    fn eval_or_panic(&self, s: &MatrixSchedule, t: f64) -> Matrix {
        s.eval(&self.grid, t)
            .expect("model schedules are evaluated inside the horizon")
    }

    pub fn dynamics_at(&self, t: f64) -> Matrix {
        self.eval_or_panic(&self.dynamics, t)
    }

    /// `G Q G*` at time `t`.
    pub fn plant_diffusion_at(&self, t: f64) -> Matrix {
        let g = self.eval_or_panic(&self.noise_input, t);
        let q = self.eval_or_panic(&self.plant_noise, t);
        &g * q * g.transpose()
    }

    /// `G Q G*` at grid index `k`.
    pub fn plant_diffusion(&self, k: usize) -> Matrix {
        let g = self.noise_input.at(k);
        g * self.plant_noise.at(k) * g.transpose()
    }

    /// `R⁻¹` at time `t`.
    pub fn observation_precision_at(&self, t: f64) -> Matrix {
        precision(&self.eval_or_panic(&self.observation_noise, t))
    }

    pub fn observation_precision(&self, k: usize) -> Matrix {
        precision(self.observation_noise.at(k))
    }

    /// `H* R⁻¹ H` at time `t`.
    pub fn observation_information_at(&self, t: f64) -> Matrix {
        let h = self.eval_or_panic(&self.observation, t);
        h.transpose() * self.observation_precision_at(t) * h
    }

    pub fn observation_information(&self, k: usize) -> Matrix {
        let h = self.observation.at(k);
        h.transpose() * self.observation_precision(k) * h
    }

    /// `H* R⁻¹` at grid index `k`.
    pub fn observation_gain_factor(&self, k: usize) -> Matrix {
        self.observation.at(k).transpose() * self.observation_precision(k)
    }

    /// Checks every model invariant; an empty list means the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        use ViolationKind::*;
        let mut out = Vec::new();
        let n = self.state_dim();
        let p = self.noise_dim();
        let m = self.obs_dim();

        let expected: [(&str, &MatrixSchedule, (usize, usize)); 7] = [
            ("F", &self.dynamics, (n, n)),
            ("G", &self.noise_input, (n, p)),
            ("Q", &self.plant_noise, (p, p)),
            ("H", &self.observation, (m, n)),
            ("R", &self.observation_noise, (m, m)),
            ("f", &self.state_drift, (n, 1)),
            ("h", &self.observation_drift, (m, 1)),
        ];
        let mut shapes_ok = n > 0 && m > 0 && p > 0;
        for (name, sched, dims) in expected.iter() {
            if let MatrixSchedule::Tabulated(v) = sched {
                if v.len() != self.grid.len() {
                    out.push(Violation::new(
                        name,
                        ScheduleLength,
                        None,
                        format!("{name} has {} samples, grid has {} points", v.len(), self.grid.len()),
                    ));
                    shapes_ok = false;
                }
            }
            for (k, mat) in sched.samples() {
                if mat.shape() != *dims {
                    out.push(Violation::new(
                        name,
                        Dimension,
                        k,
                        format!("{name} is {}x{}, expected {}x{}", mat.nrows(), mat.ncols(), dims.0, dims.1),
                    ));
                    shapes_ok = false;
                    break;
                }
                if mat.iter().any(|v| !v.is_finite()) {
                    out.push(Violation::new(name, NonFinite, k, format!("{name} has non-finite entries")));
                    shapes_ok = false;
                    break;
                }
            }
        }
        for (name, mat, dims) in [
            ("Pi0", &self.pi0, (n, n)),
            ("SigmaT", &self.sigma_t, (n, n)),
        ] {
            if mat.shape() != dims {
                out.push(Violation::new(name, Dimension, None, format!("{name} must be {n}x{n}")));
                shapes_ok = false;
            } else if mat.iter().any(|v| !v.is_finite()) {
                out.push(Violation::new(name, NonFinite, None, format!("{name} has non-finite entries")));
                shapes_ok = false;
            }
        }
        if self.x0.len() != n {
            out.push(Violation::new("x0", Dimension, None, format!("x0 must have length {n}")));
        }
        if self.y0.len() != m {
            out.push(Violation::new("y0", Dimension, None, format!("y0 must have length {m}")));
        }
        if !shapes_ok {
            return out;
        }

        let mut psd_check = |name: &str, k: Option<usize>, mat: &Matrix| -> bool {
            let scale = max_abs(mat).max(1.0);
            if asymmetry(mat) > PSD_TOL * scale {
                out.push(Violation::new(name, NotSymmetric, k, format!("{name} not symmetric")));
                return false;
            }
            if min_eigenvalue(mat) < -PSD_TOL * scale {
                out.push(Violation::new(name, NotPsd, k, format!("{name} not PSD")));
                return false;
            }
            true
        };
        for (k, q) in self.plant_noise.samples() {
            if !psd_check("Q", k, q) {
                break;
            }
        }
        psd_check("Pi0", None, &self.pi0);
        psd_check("SigmaT", None, &self.sigma_t);

        for (k, r) in self.observation_noise.samples() {
            let scale = max_abs(r).max(1.0);
            if asymmetry(r) > PSD_TOL * scale {
                out.push(Violation::new("R", NotSymmetric, k, "R not symmetric"));
                break;
            }
            if min_eigenvalue(r) < R_MIN {
                out.push(Violation::new(
                    "R",
                    NotUniformlyPositive,
                    k,
                    "R not uniformly positive definite",
                ));
                break;
            }
        }
        out
    }

    /// Returns the model back if valid, otherwise the violation list.
    pub fn validated(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(v))
        }
    }

    /// The time-reversed adjoint model whose trajectory kernel is the
    /// information kernel of `self`: `F → F*`, `G Q^{1/2} → H* R^{-1/2}`,
    /// `H* R^{-1/2} → G Q^{1/2}`, `Π₀ ↔ Σ_T`, `t → t0 + T - t`.
    pub fn mirrored(&self) -> Result<Self> {
        let sqrt = |m: &Matrix| crate::numcore::psd_sqrt(m, crate::numcore::DEFAULT_RANK_TOL);
        let q_half = |k: usize| sqrt(self.plant_noise.at(k));
        let r_inv_half = |k: usize| sqrt(&self.observation_precision(k));
        let per_point = |f: &dyn Fn(usize) -> Result<Matrix>| -> Result<MatrixSchedule> {
            if self.is_time_invariant() {
                Ok(MatrixSchedule::Constant(f(0)?))
            } else {
                let v = (0..self.grid.len()).rev().map(f).collect::<Result<Vec<_>>>()?;
                Ok(MatrixSchedule::Tabulated(v))
            }
        };
        let dynamics = self.dynamics.map(|f| f.transpose()).reversed();
        let noise_input = per_point(&|k| Ok(self.observation.at(k).transpose() * r_inv_half(k)?))?;
        let observation = per_point(&|k| Ok((self.noise_input.at(k) * q_half(k)?).transpose()))?;
        let n = self.state_dim();
        let p = self.noise_dim();
        let m = self.obs_dim();
        Ok(Self {
            grid: self.grid,
            dynamics,
            noise_input,
            plant_noise: MatrixSchedule::Constant(Matrix::identity(m, m)),
            observation,
            observation_noise: MatrixSchedule::Constant(Matrix::identity(p, p)),
            state_drift: MatrixSchedule::Constant(Matrix::zeros(n, 1)),
            observation_drift: MatrixSchedule::Constant(Matrix::zeros(p, 1)),
            x0: Vector::zeros(n),
            y0: Vector::zeros(p),
            pi0: self.sigma_t.clone(),
            sigma_t: self.pi0.clone(),
        })
    }
}

fn precision(r: &Matrix) -> Matrix {
    spd_inverse(r).unwrap_or_else(|_| pinv(r, crate::numcore::DEFAULT_RANK_TOL))
}
