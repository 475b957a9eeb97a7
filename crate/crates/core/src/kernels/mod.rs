//! The trajectory kernel `K(s, t | T)` and the information kernel
//! `Λ(s, t | T)`.
//!
//! Both kernels factor through fundamental matrices of the closed-loop
//! dynamics, so after one pass over the grid every pair `(s, t)` costs a
//! couple of small matrix products:
//!
//! ```text
//! K(τ_i, τ_j) = Ψσ_i [C₀ + Kc_{min(i,j)}] Ψσ_jᵀ
//! Λ(τ_i, τ_j) = Ψπ_i⁻ᵀ [E + Lc_{max(i,j)}] Ψπ_j⁻¹
//! ```
//!
//! with `Ψσ`, `Ψπ` the `Σ`- and `Π`-closed fundamentals, `Kc` the running
//! integral of `Ψσ⁻¹ GQGᵀ Ψσ⁻ᵀ` from `t₀` and `Lc` the running integral
//! of `Ψπᵀ HᵀR⁻¹H Ψπ` down from `T`.

mod bvp;
mod hamiltonian;

pub use bvp::{solve_bvp, BvpSolution};
pub use hamiltonian::{HamiltonianKernel, MAX_BLOCK_CONDITION};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LtvModel;
use crate::numcore::{psd_sqrt, rk4_integrate, symmetrize, Direction, Matrix, TimeGrid, Vector, DEFAULT_RANK_TOL};
use crate::riccati::{RiccatiSolution, Transitions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "K")]
    Trajectory,
    #[serde(rename = "Lambda")]
    Information,
}

/// `P (I + P A P)⁻¹ P` for a PSD root `P`; the `(I + PAP)` factor is SPD
/// whenever `A` is PSD.
fn weighted_prior(root: &Matrix, a: &Matrix) -> Matrix {
    let n = root.nrows();
    let inner = Matrix::identity(n, n) + root * a * root;
    let inv = inner
        .cholesky()
        .map(|c| c.inverse())
        .expect("I + P A P is positive definite for PSD A");
    symmetrize(&(root * inv * root))
}

/// Evaluator for `K` and `Λ` on the model grid.
#[derive(Debug, Clone)]
pub struct KernelField {
    model: LtvModel,
    riccati: RiccatiSolution,
    transitions: Transitions,
    pi0_root: Matrix,
    sigma_t_root: Matrix,
    /// `P (I + P Σ(t₀) P)⁻¹ P` with `P = Π₀^{1/2}`.
    k_prior: Matrix,
    k_cumulative: Vec<Matrix>,
    /// `Ψπ_Nᵀ S (I + S Π(T) S)⁻¹ S Ψπ_N` with `S = Σ_T^{1/2}`.
    lambda_terminal: Matrix,
    lambda_cumulative: Vec<Matrix>,
}

impl KernelField {
    /// Solves the Riccati equations and builds every cache.
    pub fn new(model: &LtvModel) -> Result<Self> {
        let riccati = RiccatiSolution::solve(model)?;
        Self::with_riccati(model, riccati)
    }

    pub fn with_riccati(model: &LtvModel, riccati: RiccatiSolution) -> Result<Self> {
        let transitions = Transitions::build(model, &riccati)?;
        let grid = model.grid;
        let last = grid.last();
        let pi0_root = psd_sqrt(&model.pi0, DEFAULT_RANK_TOL)?;
        let sigma_t_root = psd_sqrt(&model.sigma_t, DEFAULT_RANK_TOL)?;
        let k_prior = weighted_prior(&pi0_root, riccati.sigma(0));

        let k_cumulative = congruence_integral(
            model,
            |t| sigma_closed_generator(model, &riccati, t),
            |t| model.plant_diffusion_at(t),
            Congruence::Inverse,
            &Matrix::identity(model.state_dim(), model.state_dim()),
        )?;

        let pc = &transitions.pi_closed;
        let psi_end = pc.fundamental(last);
        let lambda_terminal =
            symmetrize(&(psi_end.transpose() * weighted_prior(&sigma_t_root, riccati.pi(last)) * psi_end));
        let lambda_cumulative = congruence_integral(
            model,
            |t| model.dynamics_at(t) - riccati.pi_at(t) * model.observation_information_at(t),
            |t| model.observation_information_at(t),
            Congruence::DirectFromEnd,
            psi_end,
        )?;

        Ok(Self {
            model: model.clone(),
            riccati,
            transitions,
            pi0_root,
            sigma_t_root,
            k_prior,
            k_cumulative,
            lambda_terminal,
            lambda_cumulative,
        })
    }

    pub fn model(&self) -> &LtvModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.model.grid
    }

    pub fn riccati(&self) -> &RiccatiSolution {
        &self.riccati
    }

    pub fn transitions(&self) -> &Transitions {
        &self.transitions
    }

    pub fn pi0_root(&self) -> &Matrix {
        &self.pi0_root
    }

    pub fn sigma_t_root(&self) -> &Matrix {
        &self.sigma_t_root
    }

    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    /// `K(τ_i, τ_j | T)`.
    pub fn k_at(&self, i: usize, j: usize) -> Matrix {
        let sc = &self.transitions.sigma_closed;
        let mid = &self.k_prior + &self.k_cumulative[i.min(j)];
        sc.fundamental(i) * mid * sc.fundamental(j).transpose()
    }

    /// `Λ(τ_i, τ_j | T)`.
    pub fn lambda_at(&self, i: usize, j: usize) -> Matrix {
        let pc = &self.transitions.pi_closed;
        let mid = &self.lambda_terminal + &self.lambda_cumulative[i.max(j)];
        pc.fundamental_inverse(i).transpose() * mid * pc.fundamental_inverse(j)
    }

    pub fn kernel_k(&self, s: f64, t: f64) -> Result<Matrix> {
        let grid = self.grid();
        Ok(self.k_at(grid.index_of(s)?, grid.index_of(t)?))
    }

    pub fn kernel_lambda(&self, s: f64, t: f64) -> Result<Matrix> {
        let grid = self.grid();
        Ok(self.lambda_at(grid.index_of(s)?, grid.index_of(t)?))
    }

    pub fn ensure_terminal_weight_zero(&self) -> Result<()> {
        if self.model.sigma_t_is_zero() {
            Ok(())
        } else {
            Err(Error::PreconditionViolation(
                "this route requires SigmaT = 0 (no terminal prior)".into(),
            ))
        }
    }

    /// `K` from the filter quantities: `Π(s)Φπ(t,s)ᵀ` or `Φπ(s,t)Π(t)`
    /// minus `Π(s) Λ(s,t) Π(t)`. Needs `Σ_T = 0`.
    pub fn k_bf_at(&self, i: usize, j: usize) -> Result<Matrix> {
        self.ensure_terminal_weight_zero()?;
        let pc = &self.transitions.pi_closed;
        let pi_i = self.riccati.pi(i);
        let pi_j = self.riccati.pi(j);
        let direct = if i <= j {
            pi_i * pc.between(j, i).transpose()
        } else {
            pc.between(i, j) * pi_j
        };
        Ok(direct - pi_i * self.lambda_at(i, j) * pi_j)
    }

    pub fn kernel_k_bf(&self, s: f64, t: f64) -> Result<Matrix> {
        let grid = self.grid();
        self.k_bf_at(grid.index_of(s)?, grid.index_of(t)?)
    }

    pub fn kernel_at(&self, which: KernelKind, i: usize, j: usize) -> Matrix {
        match which {
            KernelKind::Trajectory => self.k_at(i, j),
            KernelKind::Information => self.lambda_at(i, j),
        }
    }

    /// Block matrix with block `(a, b) = kernel(times_a, times_b)`.
    pub fn gram(&self, which: KernelKind, times: &[f64]) -> Result<Matrix> {
        let idx = times
            .iter()
            .map(|&t| self.grid().index_of(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.gram_indices(which, &idx))
    }

    pub fn gram_indices(&self, which: KernelKind, idx: &[usize]) -> Matrix {
        let n = self.state_dim();
        let rows: Vec<Vec<Matrix>> = idx
            .par_iter()
            .map(|&i| idx.iter().map(|&j| self.kernel_at(which, i, j)).collect())
            .collect();
        let size = idx.len() * n;
        let mut out = Matrix::zeros(size, size);
        for (a, row) in rows.iter().enumerate() {
            for (b, block) in row.iter().enumerate() {
                out.view_mut((a * n, b * n), (n, n)).copy_from(block);
            }
        }
        out
    }

    /// `out_i = Σ_k K(τ_i, τ_k) c_k` for all grid points in `O(N)`.
    pub fn apply_k(&self, coeffs: &[Vector]) -> Result<Vec<Vector>> {
        let grid = self.grid();
        if coeffs.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: coeffs.len(),
            });
        }
        let sc = &self.transitions.sigma_closed;
        let n = self.state_dim();
        let len = grid.len();
        let projected: Vec<Vector> = (0..len).map(|k| sc.fundamental(k).transpose() * &coeffs[k]).collect();
        let mut suffix = vec![Vector::zeros(n); len + 1];
        for k in (0..len).rev() {
            suffix[k] = &suffix[k + 1] + &projected[k];
        }
        let mut prefix = Vector::zeros(n);
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let mid = &self.k_prior + &self.k_cumulative[i];
            out.push(sc.fundamental(i) * (&mid * &suffix[i] + &prefix));
            prefix += mid * &projected[i];
        }
        Ok(out)
    }

    /// `out_i = Σ_k Λ(τ_i, τ_k) c_k` for all grid points in `O(N)`.
    pub fn apply_lambda(&self, coeffs: &[Vector]) -> Result<Vec<Vector>> {
        let grid = self.grid();
        if coeffs.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: coeffs.len(),
            });
        }
        let pc = &self.transitions.pi_closed;
        let n = self.state_dim();
        let len = grid.len();
        let projected: Vec<Vector> = (0..len)
            .map(|k| pc.fundamental_inverse(k) * &coeffs[k])
            .collect();
        // prefix over k <= i uses the weight at i, suffix over k > i the weight at k
        let mut suffix = vec![Vector::zeros(n); len + 1];
        for k in (0..len).rev() {
            let mid = &self.lambda_terminal + &self.lambda_cumulative[k];
            suffix[k] = &suffix[k + 1] + mid * &projected[k];
        }
        let mut prefix = Vector::zeros(n);
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            prefix += &projected[i];
            let mid = &self.lambda_terminal + &self.lambda_cumulative[i];
            out.push(pc.fundamental_inverse(i).transpose() * (mid * &prefix + &suffix[i + 1]));
        }
        Ok(out)
    }
}

fn sigma_closed_generator(model: &LtvModel, riccati: &RiccatiSolution, t: f64) -> Matrix {
    model.dynamics_at(t) - model.plant_diffusion_at(t) * riccati.sigma_at(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Congruence {
    /// `∫_{t₀}^{τ_k} Ψ⁻¹ W Ψ⁻ᵀ`, with `Ψ(t₀)` given.
    Inverse,
    /// `∫_{τ_k}^{T} Ψᵀ W Ψ`, with `Ψ(T)` given.
    DirectFromEnd,
}

/// Running integrals of `W` congruent to the fundamental matrix of the
/// generator `A`, integrated by RK4 together with the fundamental so that
/// the quadrature has the same order as the transitions themselves.
fn congruence_integral(
    model: &LtvModel,
    generator: impl Fn(f64) -> Matrix,
    weight: impl Fn(f64) -> Matrix,
    mode: Congruence,
    start: &Matrix,
) -> Result<Vec<Matrix>> {
    let n = model.state_dim();
    let mut x0 = Matrix::zeros(2 * n, n);
    x0.view_mut((0, 0), (n, n)).copy_from(start);
    let rhs = |t: f64, x: &Matrix| {
        let psi = x.view((0, 0), (n, n));
        let a = generator(t);
        let w = weight(t);
        let mut out = Matrix::zeros(2 * n, n);
        match mode {
            Congruence::Inverse => {
                out.view_mut((0, 0), (n, n)).copy_from(&(-(psi * a)));
                out.view_mut((n, 0), (n, n)).copy_from(&(psi * w * psi.transpose()));
            }
            Congruence::DirectFromEnd => {
                out.view_mut((0, 0), (n, n)).copy_from(&(a * psi));
                out.view_mut((n, 0), (n, n)).copy_from(&(-(psi.transpose() * w * psi)));
            }
        }
        out
    };
    let direction = match mode {
        Congruence::Inverse => Direction::Forward,
        Congruence::DirectFromEnd => Direction::Backward,
    };
    let path = rk4_integrate(rhs, &x0, &model.grid, direction)?;
    Ok(path
        .iter()
        .map(|x| symmetrize(&x.view((n, 0), (n, n)).clone_owned()))
        .collect())
}

/// `∫ Φ_F(T,τ) G Q Gᵀ Φ_F(T,τ)ᵀ dτ` over the horizon.
pub fn controllability_gramian(model: &LtvModel) -> Result<Matrix> {
    let n = model.state_dim();
    let id = Matrix::identity(n, n);
    let integral = congruence_integral(
        model,
        |t| model.dynamics_at(t),
        |t| model.plant_diffusion_at(t),
        Congruence::Inverse,
        &id,
    )?;
    let psi_end = rk4_integrate(|t, x| model.dynamics_at(t) * x, &id, &model.grid, Direction::Forward)?
        .pop()
        .expect("grid has points");
    Ok(symmetrize(&(&psi_end * &integral[model.grid.last()] * psi_end.transpose())))
}

/// The two observability Gramians `∫ Φ_F(τ,t₀)ᵀ W(τ) Φ_F(τ,t₀) dτ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityGramian {
    /// `W = HᵀH`, the noise covariance taken as the identity.
    pub unit_noise: Matrix,
    /// `W = HᵀR⁻¹H`; this is the one equal to `Λ(t₀,t₀|T)` in the
    /// unforced, unweighted case.
    pub noise_weighted: Matrix,
}

pub fn observability_gramian(model: &LtvModel) -> Result<ObservabilityGramian> {
    let n = model.state_dim();
    let id = Matrix::identity(n, n);
    // integrate from T down to t₀ starting at Φ_F(T, t₀)
    let psi_end = rk4_integrate(|t, x| model.dynamics_at(t) * x, &id, &model.grid, Direction::Forward)?
        .pop()
        .expect("grid has points");
    let unit = congruence_integral(
        model,
        |t| model.dynamics_at(t),
        |t| {
            let h = model.observation.eval(&model.grid, t).expect("inside horizon");
            h.transpose() * h
        },
        Congruence::DirectFromEnd,
        &psi_end,
    )?;
    let weighted = congruence_integral(
        model,
        |t| model.dynamics_at(t),
        |t| model.observation_information_at(t),
        Congruence::DirectFromEnd,
        &psi_end,
    )?;
    Ok(ObservabilityGramian {
        unit_noise: unit[0].clone(),
        noise_weighted: weighted[0].clone(),
    })
}
