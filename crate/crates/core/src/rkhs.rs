//! The trajectory space `S_x` and the information space `S_λ`.
//!
//! A trajectory solves `dx/dt = F x + G Q^{1/2} u`, `x(t₀) = Π₀^{1/2} ξ`,
//! with squared norm `|ξ|² + ⟨Σ_T x(T), x(T)⟩ + ∫|u|² + ∫⟨HᵀR⁻¹H x, x⟩`
//! evaluated at its minimal representative `(ξ, u)`. An information vector
//! solves `-dλ/dt = Fᵀ λ + Hᵀ v`, `λ(T) = Σ_T^{1/2} z`, with squared norm
//! `⟨Π₀ λ(t₀), λ(t₀)⟩ + |z|² + ∫⟨GQGᵀ λ, λ⟩ + ∫⟨R v, v⟩`.
//!
//! Controls of kernel sections jump at the section time, so controls are
//! stored with a left and a right limit at every grid point and every panel
//! integral uses the limits from inside the panel.

use crate::error::{Error, Result};
use crate::kernels::KernelField;
use crate::model::LtvModel;
use crate::numcore::{pinv, psd_sqrt, rk4_integrate, Direction, Matrix, TimeGrid, Vector, DEFAULT_RANK_TOL};

/// A path on the grid with one-sided limits at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub left: Vec<Vector>,
    pub right: Vec<Vector>,
}

impl GridPath {
    pub fn continuous(values: Vec<Vector>) -> Self {
        Self {
            left: values.clone(),
            right: values,
        }
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Self::continuous(vec![Vector::zeros(dim); len])
    }

    pub fn len(&self) -> usize {
        self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.right.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.right.first().map(|v| v.len()).unwrap_or(0)
    }

    /// Linear inside each panel between `right[k]` and `left[k+1]`.
    pub fn eval(&self, grid: &TimeGrid, t: f64) -> Vector {
        let (k, theta) = grid.locate(t).expect("path evaluated inside the horizon");
        &self.right[k] * (1.0 - theta) + &self.left[k + 1] * theta
    }

    pub fn map(&self, f: impl Fn(usize, &Vector) -> Vector) -> Self {
        Self {
            left: self.left.iter().enumerate().map(|(k, v)| f(k, v)).collect(),
            right: self.right.iter().enumerate().map(|(k, v)| f(k, v)).collect(),
        }
    }

    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        let add = |a: &[Vector], b: &[Vector]| a.iter().zip(b).map(|(x, y)| x + y * alpha).collect();
        Self {
            left: add(&self.left, &other.left),
            right: add(&self.right, &other.right),
        }
    }

    /// `∫ ⟨W a, b⟩` with `W` sampled at the nodes, trapezoid per panel.
    pub fn weighted_inner(&self, other: &Self, grid: &TimeGrid, weight: impl Fn(usize) -> Matrix) -> Result<f64> {
        for p in [self, other] {
            if p.len() != grid.len() {
                return Err(Error::GridMismatch {
                    expected: grid.len(),
                    got: p.len(),
                });
            }
        }
        let half_h = 0.5 * grid.step();
        let mut acc = 0.0;
        for k in 0..grid.last() {
            let lo = (weight(k) * &self.right[k]).dot(&other.right[k]);
            let hi = (weight(k + 1) * &self.left[k + 1]).dot(&other.left[k + 1]);
            acc += half_h * (lo + hi);
        }
        Ok(acc)
    }

    pub fn inner(&self, other: &Self, grid: &TimeGrid) -> Result<f64> {
        let id = Matrix::identity(self.dim(), self.dim());
        self.weighted_inner(other, grid, |_| id.clone())
    }
}

/// `∫ ⟨W a, b⟩` for continuous node values, by trapezoid.
fn node_inner(a: &[Vector], b: &[Vector], grid: &TimeGrid, weight: impl Fn(usize) -> Matrix) -> Result<f64> {
    for p in [a, b] {
        if p.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: p.len(),
            });
        }
    }
    let last = grid.last();
    Ok((0..grid.len())
        .map(|k| grid.trapezoid_weight(k, 0, last) * (weight(k) * &a[k]).dot(&b[k]))
        .sum())
}

fn to_column(v: &Vector) -> Matrix {
    Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn from_column(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// `G Q^{1/2}` at a grid index.
fn noise_factor(model: &LtvModel, k: usize) -> Result<Matrix> {
    Ok(model.noise_input.at(k) * psd_sqrt(model.plant_noise.at(k), DEFAULT_RANK_TOL)?)
}

fn noise_factor_at(model: &LtvModel, t: f64) -> Matrix {
    let g = model.noise_input.eval(&model.grid, t).expect("inside horizon");
    let q = model.plant_noise.eval(&model.grid, t).expect("inside horizon");
    g * psd_sqrt(&q, DEFAULT_RANK_TOL).expect("interpolated PSD schedule")
}

/// Orthogonal projector onto `range(Aᵀ)`.
fn range_projector(m: &Matrix) -> Matrix {
    pinv(m, DEFAULT_RANK_TOL) * m
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRepresentative {
    pub xi: Vector,
    pub u: GridPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryElement {
    pub x_path: Vec<Vector>,
    pub representative: Option<TrajectoryRepresentative>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformationRepresentative {
    pub z: Vector,
    pub v: GridPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformationElement {
    pub lambda_path: Vec<Vector>,
    pub representative: Option<InformationRepresentative>,
}

impl TrajectoryElement {
    pub fn zero(model: &LtvModel) -> Self {
        let len = model.grid.len();
        Self {
            x_path: vec![Vector::zeros(model.state_dim()); len],
            representative: Some(TrajectoryRepresentative {
                xi: Vector::zeros(model.state_dim()),
                u: GridPath::zeros(len, model.noise_dim()),
            }),
        }
    }

    /// A bare path; inner products on it fail with `MissingRepresentative`.
    pub fn from_path(x_path: Vec<Vector>) -> Self {
        Self {
            x_path,
            representative: None,
        }
    }

    /// Integrates the trajectory generated by `(ξ, u)` after replacing both by
    /// their minimal-norm versions.
    pub fn from_controls(model: &LtvModel, xi: &Vector, u: &GridPath) -> Result<Self> {
        let grid = model.grid;
        if u.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: u.len(),
            });
        }
        let root = psd_sqrt(&model.pi0, DEFAULT_RANK_TOL)?;
        let xi = range_projector(&root) * xi;
        let factors = (0..grid.len())
            .map(|k| noise_factor(model, k))
            .collect::<Result<Vec<_>>>()?;
        let projectors: Vec<Matrix> = factors.iter().map(range_projector).collect();
        let u = u.map(|k, v| &projectors[k] * v);
        let x0 = to_column(&(&root * &xi));
        let path = rk4_integrate(
            |t, x| model.dynamics_at(t) * x + noise_factor_at(model, t) * to_column(&u.eval(&grid, t)),
            &x0,
            &grid,
            Direction::Forward,
        )?;
        Ok(Self {
            x_path: path.iter().map(from_column).collect(),
            representative: Some(TrajectoryRepresentative { xi, u }),
        })
    }

    /// `s ↦ K(s, t | T) z` with its closed-form representative.
    pub fn kernel_section(field: &KernelField, t: f64, z: &Vector) -> Result<Self> {
        let j = field.grid().index_of(t)?;
        let model = field.model();
        let sc = &field.transitions().sigma_closed;
        let riccati = field.riccati();
        let len = field.grid().len();
        let x_path: Vec<Vector> = (0..len).map(|k| field.k_at(k, j) * z).collect();
        let mut left = Vec::with_capacity(len);
        let mut right = Vec::with_capacity(len);
        for (k, x) in x_path.iter().enumerate() {
            let factor = noise_factor(model, k)?.transpose();
            let feedback = riccati.sigma(k) * x;
            let open = sc.between(j, k).transpose() * z;
            let inside = &factor * (&open - &feedback);
            let outside = -(&factor * feedback);
            // the indicator 1_{τ<t} is on for both limits left of t, only the left limit at t
            let (l, r) = match k.cmp(&j) {
                std::cmp::Ordering::Less => (inside.clone(), inside),
                std::cmp::Ordering::Equal => (inside, outside),
                std::cmp::Ordering::Greater => (outside.clone(), outside),
            };
            left.push(l);
            right.push(r);
        }
        let xi = field.pi0_root() * (sc.between(j, 0).transpose() * z - riccati.sigma(0) * &x_path[0]);
        Ok(Self {
            x_path,
            representative: Some(TrajectoryRepresentative {
                xi,
                u: GridPath { left, right },
            }),
        })
    }

    pub fn representative(&self) -> Result<&TrajectoryRepresentative> {
        self.representative.as_ref().ok_or(Error::MissingRepresentative)
    }

    /// `self + alpha · other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        let x_path = self.x_path.iter().zip(&other.x_path).map(|(a, b)| a + b * alpha).collect();
        let representative = match (&self.representative, &other.representative) {
            (Some(a), Some(b)) => Some(TrajectoryRepresentative {
                xi: &a.xi + &b.xi * alpha,
                u: a.u.axpy(alpha, &b.u),
            }),
            _ => None,
        };
        Self { x_path, representative }
    }

    /// Largest panel residual of `dx/dt = F x + G Q^{1/2} u` in integrated
    /// trapezoid form, divided by the step.
    pub fn dynamics_residual(&self, model: &LtvModel) -> Result<f64> {
        let rep = self.representative()?;
        let grid = model.grid;
        let h = grid.step();
        let mut worst = 0.0f64;
        let rate = |k: usize, u: &Vector| -> Result<Vector> {
            Ok(model.dynamics.at(k) * &self.x_path[k] + noise_factor(model, k)? * u)
        };
        for k in 0..grid.last() {
            let lo = rate(k, &rep.u.right[k])?;
            let hi = rate(k + 1, &rep.u.left[k + 1])?;
            let res = &self.x_path[k + 1] - &self.x_path[k] - (lo + hi) * (0.5 * h);
            worst = worst.max(res.amax() / h);
        }
        let start = &self.x_path[0] - psd_sqrt(&model.pi0, DEFAULT_RANK_TOL)? * &rep.xi;
        Ok(worst.max(start.amax()))
    }
}

pub fn inner_product_x(a: &TrajectoryElement, b: &TrajectoryElement, model: &LtvModel) -> Result<f64> {
    let (ra, rb) = (a.representative()?, b.representative()?);
    let grid = model.grid;
    let last = grid.last();
    if a.x_path.len() != grid.len() || b.x_path.len() != grid.len() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: a.x_path.len().min(b.x_path.len()),
        });
    }
    let terminal = (&model.sigma_t * &a.x_path[last]).dot(&b.x_path[last]);
    let control = ra.u.inner(&rb.u, &grid)?;
    let observed = node_inner(&a.x_path, &b.x_path, &grid, |k| model.observation_information(k))?;
    Ok(ra.xi.dot(&rb.xi) + terminal + control + observed)
}

impl InformationElement {
    pub fn zero(model: &LtvModel) -> Self {
        let len = model.grid.len();
        Self {
            lambda_path: vec![Vector::zeros(model.state_dim()); len],
            representative: Some(InformationRepresentative {
                z: Vector::zeros(model.state_dim()),
                v: GridPath::zeros(len, model.obs_dim()),
            }),
        }
    }

    pub fn from_path(lambda_path: Vec<Vector>) -> Self {
        Self {
            lambda_path,
            representative: None,
        }
    }

    /// Integrates `λ` backward from `(z, v)` after replacing both by their
    /// minimal-norm versions.
    pub fn from_controls(model: &LtvModel, z: &Vector, v: &GridPath) -> Result<Self> {
        let grid = model.grid;
        if v.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: v.len(),
            });
        }
        let root = psd_sqrt(&model.sigma_t, DEFAULT_RANK_TOL)?;
        let z = range_projector(&root) * z;
        // minimal ⟨Rv, v⟩ with the same Hᵀv
        let projectors: Vec<Matrix> = (0..grid.len())
            .map(|k| {
                let h = model.observation.at(k);
                model.observation_precision(k) * h * pinv(&model.observation_information(k), DEFAULT_RANK_TOL) * h.transpose()
            })
            .collect();
        let v = v.map(|k, x| &projectors[k] * x);
        Self::integrate(model, z, v, &root)
    }

    fn integrate(model: &LtvModel, z: Vector, v: GridPath, sigma_t_root: &Matrix) -> Result<Self> {
        let grid = model.grid;
        let end = to_column(&(sigma_t_root * &z));
        let path = rk4_integrate(
            |t, lam| {
                let h = model.observation.eval(&grid, t).expect("inside horizon");
                -(model.dynamics_at(t).transpose() * lam) - h.transpose() * to_column(&v.eval(&grid, t))
            },
            &end,
            &grid,
            Direction::Backward,
        )?;
        Ok(Self {
            lambda_path: path.iter().map(from_column).collect(),
            representative: Some(InformationRepresentative { z, v }),
        })
    }

    /// `s ↦ Λ(s, t | T) z` with its closed-form representative.
    pub fn kernel_section(field: &KernelField, t: f64, z: &Vector) -> Result<Self> {
        let j = field.grid().index_of(t)?;
        let model = field.model();
        let pc = &field.transitions().pi_closed;
        let riccati = field.riccati();
        let len = field.grid().len();
        let last = field.grid().last();
        let lambda_path: Vec<Vector> = (0..len).map(|k| field.lambda_at(k, j) * z).collect();
        let mut left = Vec::with_capacity(len);
        let mut right = Vec::with_capacity(len);
        for (k, lam) in lambda_path.iter().enumerate() {
            let gain = model.observation_precision(k) * model.observation.at(k);
            let feedback = riccati.pi(k) * lam;
            let open = pc.between(k, j) * z;
            let inside = &gain * (&open - &feedback);
            let outside = -(&gain * feedback);
            // indicator 1_{τ>t}
            let (l, r) = match k.cmp(&j) {
                std::cmp::Ordering::Less => (outside.clone(), outside),
                std::cmp::Ordering::Equal => (outside, inside),
                std::cmp::Ordering::Greater => (inside.clone(), inside),
            };
            left.push(l);
            right.push(r);
        }
        let z_rep = field.sigma_t_root() * (pc.between(last, j) * z - riccati.pi(last) * &lambda_path[last]);
        Ok(Self {
            lambda_path,
            representative: Some(InformationRepresentative {
                z: z_rep,
                v: GridPath { left, right },
            }),
        })
    }

    pub fn representative(&self) -> Result<&InformationRepresentative> {
        self.representative.as_ref().ok_or(Error::MissingRepresentative)
    }

    /// Largest panel residual of `-dλ/dt = Fᵀ λ + Hᵀ v`, trapezoid form.
    pub fn dynamics_residual(&self, model: &LtvModel) -> Result<f64> {
        let rep = self.representative()?;
        let grid = model.grid;
        let h = grid.step();
        let rate = |k: usize, v: &Vector| {
            model.dynamics.at(k).transpose() * &self.lambda_path[k] + model.observation.at(k).transpose() * v
        };
        let mut worst = 0.0f64;
        for k in 0..grid.last() {
            let lo = rate(k, &rep.v.right[k]);
            let hi = rate(k + 1, &rep.v.left[k + 1]);
            let res = &self.lambda_path[k] - &self.lambda_path[k + 1] - (lo + hi) * (0.5 * h);
            worst = worst.max(res.amax() / h);
        }
        let end = &self.lambda_path[grid.last()] - psd_sqrt(&model.sigma_t, DEFAULT_RANK_TOL)? * &rep.z;
        Ok(worst.max(end.amax()))
    }
}

pub fn inner_product_lambda(a: &InformationElement, b: &InformationElement, model: &LtvModel) -> Result<f64> {
    let (ra, rb) = (a.representative()?, b.representative()?);
    let grid = model.grid;
    if a.lambda_path.len() != grid.len() || b.lambda_path.len() != grid.len() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: a.lambda_path.len().min(b.lambda_path.len()),
        });
    }
    let initial = (&model.pi0 * &a.lambda_path[0]).dot(&b.lambda_path[0]);
    let diffusion = node_inner(&a.lambda_path, &b.lambda_path, &grid, |k| model.plant_diffusion(k))?;
    let control = ra.v.weighted_inner(&rb.v, &grid, |k| model.observation_noise.at(k).clone())?;
    Ok(initial + ra.z.dot(&rb.z) + diffusion + control)
}

/// Trapezoid weights times `HᵀR⁻¹ ỹ` at every node.
fn smoother_coefficients(model: &LtvModel, y_tilde: &[Vector]) -> Result<Vec<Vector>> {
    let grid = model.grid;
    if y_tilde.len() != grid.len() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: y_tilde.len(),
        });
    }
    let last = grid.last();
    Ok((0..grid.len())
        .map(|k| model.observation_gain_factor(k) * &y_tilde[k] * grid.trapezoid_weight(k, 0, last))
        .collect())
}

/// `x̂(s) = ∫ K(s,t|T) HᵀR⁻¹ ỹ(t) dt` with the representative obtained by
/// superposing kernel-section representatives.
pub fn smooth_kernel(field: &KernelField, y_tilde: &[Vector]) -> Result<TrajectoryElement> {
    let model = field.model();
    let coeffs = smoother_coefficients(model, y_tilde)?;
    let x_path = field.apply_k(&coeffs)?;
    let (left_costate, right_costate) = superposed_costate(field, &coeffs, &x_path);
    let len = x_path.len();
    let mut left = Vec::with_capacity(len);
    let mut right = Vec::with_capacity(len);
    for k in 0..len {
        let factor = noise_factor(model, k)?.transpose();
        left.push(&factor * &left_costate[k]);
        right.push(&factor * &right_costate[k]);
    }
    let xi = field.pi0_root() * &left_costate[0];
    Ok(TrajectoryElement {
        x_path,
        representative: Some(TrajectoryRepresentative {
            xi,
            u: GridPath { left, right },
        }),
    })
}

/// The costate `Σ_k Φσ(τ_k, s)ᵀ c_k 1_{τ_k > s} - Σ(s) x̂(s)` of the kernel
/// smoother; left limits include the node itself.
fn superposed_costate(field: &KernelField, coeffs: &[Vector], x_path: &[Vector]) -> (Vec<Vector>, Vec<Vector>) {
    let sc = &field.transitions().sigma_closed;
    let len = coeffs.len();
    let n = field.model().state_dim();
    let mut suffix = Vector::zeros(n);
    let mut left = vec![Vector::zeros(n); len];
    let mut right = vec![Vector::zeros(n); len];
    for k in (0..len).rev() {
        let feedback = field.riccati().sigma(k) * &x_path[k];
        let back = sc.fundamental_inverse(k).transpose();
        right[k] = &back * &suffix - &feedback;
        suffix += sc.fundamental(k).transpose() * &coeffs[k];
        left[k] = &back * &suffix - feedback;
    }
    (left, right)
}

/// Costate of the kernel smoother at the nodes, with the integral from each
/// node onward taken by trapezoid; it coincides with the dual optimum `λ̂`.
pub fn smoother_costate(field: &KernelField, y_tilde: &[Vector]) -> Result<Vec<Vector>> {
    let model = field.model();
    let coeffs = smoother_coefficients(model, y_tilde)?;
    let x_path = field.apply_k(&coeffs)?;
    let (_, mut right) = superposed_costate(field, &coeffs, &x_path);
    let half_h = 0.5 * model.grid.step();
    let last = model.grid.last();
    for (k, r) in right.iter_mut().enumerate().take(last) {
        *r += model.observation_gain_factor(k) * &y_tilde[k] * half_h;
    }
    Ok(right)
}

/// `∫|R^{-1/2} ỹ|² + ‖x‖² - 2∫⟨HᵀR⁻¹ỹ, x⟩`.
pub fn primal_objective(x: &TrajectoryElement, y_tilde: &[Vector], model: &LtvModel) -> Result<f64> {
    let grid = model.grid;
    let data = node_inner(y_tilde, y_tilde, &grid, |k| model.observation_precision(k))?;
    let norm = inner_product_x(x, x, model)?;
    let fit: Vec<Vector> = (0..grid.len()).map(|k| model.observation_gain_factor(k) * &y_tilde[k]).collect();
    let cross = node_inner(&fit, &x.x_path, &grid, |_| Matrix::identity(model.state_dim(), model.state_dim()))?;
    Ok(data + norm - 2.0 * cross)
}

/// `∫|ỹ - Hx|²_{R⁻¹} + ‖x‖² - ∫|Hx|²_{R⁻¹}`, the same quantity written as a
/// penalized least-squares fit.
pub fn primal_objective_fit_form(x: &TrajectoryElement, y_tilde: &[Vector], model: &LtvModel) -> Result<f64> {
    let grid = model.grid;
    let residual: Vec<Vector> = (0..grid.len())
        .map(|k| &y_tilde[k] - model.observation.at(k) * &x.x_path[k])
        .collect();
    let hx: Vec<Vector> = (0..grid.len()).map(|k| model.observation.at(k) * &x.x_path[k]).collect();
    let fit = node_inner(&residual, &residual, &grid, |k| model.observation_precision(k))?;
    let observed = node_inner(&hx, &hx, &grid, |k| model.observation_precision(k))?;
    Ok(fit + inner_product_x(x, x, model)? - observed)
}

/// Splits `R⁻¹ỹ = v_H + v_⊥` with `R v_H ∈ Im H` and `Hᵀ v_⊥ = 0`.
fn split_precision_weighted(model: &LtvModel, k: usize, y: &Vector) -> Result<(Vector, Vector)> {
    let r_inv_half = psd_sqrt(&model.observation_precision(k), DEFAULT_RANK_TOL)?;
    let a = &r_inv_half * model.observation.at(k);
    let projector = &a * pinv(&a, DEFAULT_RANK_TOL);
    let scaled = &r_inv_half * y;
    let v_h = &r_inv_half * (&projector * &scaled);
    if v_h.iter().any(|v| !v.is_finite()) {
        return Err(Error::ProjectionFailure(format!("non-finite projection at grid index {k}")));
    }
    let v_perp = &r_inv_half * &scaled - &v_h;
    Ok((v_h, v_perp))
}

/// The information element dual to the smoother output: `v̂ = -R⁻¹H x̂ + v_H`,
/// `λ̂(T) = -Σ_T x̂(T)`.
pub fn dual_from_primal(x_hat: &TrajectoryElement, y_tilde: &[Vector], model: &LtvModel) -> Result<InformationElement> {
    let grid = model.grid;
    if y_tilde.len() != grid.len() || x_hat.x_path.len() != grid.len() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: y_tilde.len().min(x_hat.x_path.len()),
        });
    }
    let mut v = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (v_h, _) = split_precision_weighted(model, k, &y_tilde[k])?;
        v.push(v_h - model.observation_precision(k) * model.observation.at(k) * &x_hat.x_path[k]);
    }
    let root = psd_sqrt(&model.sigma_t, DEFAULT_RANK_TOL)?;
    let z = -(&root * &x_hat.x_path[grid.last()]);
    InformationElement::integrate(model, z, GridPath::continuous(v), &root)
}

/// `‖λ‖² - 2∫⟨R v_H, v⟩ - ∫|R^{1/2} v_⊥|²`.
pub fn dual_objective(lam: &InformationElement, y_tilde: &[Vector], model: &LtvModel) -> Result<f64> {
    let grid = model.grid;
    if y_tilde.len() != grid.len() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: y_tilde.len(),
        });
    }
    let mut v_h = Vec::with_capacity(grid.len());
    let mut v_perp = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (a, b) = split_precision_weighted(model, k, &y_tilde[k])?;
        v_h.push(a);
        v_perp.push(b);
    }
    let rep = lam.representative()?;
    let norm = inner_product_lambda(lam, lam, model)?;
    let linear = GridPath::continuous(v_h).weighted_inner(&rep.v, &grid, |k| model.observation_noise.at(k).clone())?;
    let kernel_part = node_inner(&v_perp, &v_perp, &grid, |k| model.observation_noise.at(k).clone())?;
    Ok(norm - 2.0 * linear - kernel_part)
}

/// Largest panel residual of `-dλ/dt - Fᵀλ + HᵀR⁻¹(H x̂ - ỹ) = 0` in
/// integrated trapezoid form, divided by the step.
pub fn stationarity_residual(lam: &InformationElement, x_hat: &TrajectoryElement, y_tilde: &[Vector], model: &LtvModel) -> f64 {
    let grid = model.grid;
    let h = grid.step();
    let rate = |k: usize| {
        let innovation = model.observation.at(k) * &x_hat.x_path[k] - &y_tilde[k];
        model.dynamics.at(k).transpose() * &lam.lambda_path[k] - model.observation_gain_factor(k) * innovation
    };
    (0..grid.last())
        .map(|k| {
            let res = &lam.lambda_path[k] - &lam.lambda_path[k + 1] - (rate(k) + rate(k + 1)) * (0.5 * h);
            res.amax() / h
        })
        .fold(0.0, f64::max)
}
