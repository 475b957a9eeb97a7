//! `K(s, t | T)` from the transition matrix of the Hamiltonian system
//!
//! ```text
//! d/dt [μ; ν] = [[F, -GQGᵀ], [-HᵀR⁻¹H, -Fᵀ]] [μ; ν]
//! ```
//!
//! without solving any Riccati equation. With `Φ̄ = [[I, 0], [-Σ_T, I]] Φ_H(T, ·)`
//! the backward Riccati solution is `Σ(t) = -Φ̄₂₂⁻¹Φ̄₂₁(T, t)`, the
//! `Σ`-closed transition is `Φ_{F,Σ}(t, T) = Φ̄₂₂(T, t)ᵀ`, and for `s ≤ t`
//!
//! ```text
//! K(s,t) = Φ̄₂₂ᵀ(T,s) [Φ̄₂₂⁻ᵀ(T,t₀) P (I + P Σ(t₀) P)⁻¹ P Φ̄₂₂⁻¹(T,t₀)
//!                       + Φ̄₁₂Φ̄₂₂⁻¹(T,s) - Φ̄₁₂Φ̄₂₂⁻¹(T,t₀)] Φ̄₂₂(T,t)
//! ```

use crate::error::{Error, Result};
use crate::model::LtvModel;
use crate::numcore::{checked_inverse, expm, psd_sqrt, rk4_integrate, Direction, Matrix, DEFAULT_RANK_TOL};

/// Largest accepted condition number of `Φ̄₂₂(T, τ)`.
pub const MAX_BLOCK_CONDITION: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct HamiltonianKernel {
    grid: crate::numcore::TimeGrid,
    /// `Φ̄₂₂(T, τ_k)`.
    lower_right: Vec<Matrix>,
    /// `Φ̄₁₂Φ̄₂₂⁻¹(T, τ_k) - Φ̄₁₂Φ̄₂₂⁻¹(T, t₀)`.
    upper_ratio: Vec<Matrix>,
    /// `Σ(τ_k)` recovered from the blocks.
    sigma: Vec<Matrix>,
    prior: Matrix,
    /// Whether `Φ_H` came from matrix exponentials.
    pub used_expm: bool,
}

fn hamiltonian_matrix(model: &LtvModel, t: f64) -> Matrix {
    let n = model.state_dim();
    let mut h = Matrix::zeros(2 * n, 2 * n);
    let f = model.dynamics_at(t);
    h.view_mut((0, 0), (n, n)).copy_from(&f);
    h.view_mut((0, n), (n, n)).copy_from(&(-model.plant_diffusion_at(t)));
    h.view_mut((n, 0), (n, n)).copy_from(&(-model.observation_information_at(t)));
    h.view_mut((n, n), (n, n)).copy_from(&(-f.transpose()));
    h
}

impl HamiltonianKernel {
    pub fn new(model: &LtvModel) -> Result<Self> {
        let n = model.state_dim();
        let grid = model.grid;
        let t_end = grid.t_end();
        let used_expm = model.is_time_invariant();
        // Φ_H(T, τ_k) for every grid point
        let transition: Vec<Matrix> = if used_expm {
            let hmat = hamiltonian_matrix(model, grid.t0());
            grid.points().iter().map(|&t| expm(&(&hmat * (t_end - t)))).collect()
        } else {
            // d/dt Φ_H(T, t) = -Φ_H(T, t) H(t)
            rk4_integrate(
                |t, x| -(x * hamiltonian_matrix(model, t)),
                &Matrix::identity(2 * n, 2 * n),
                &grid,
                Direction::Backward,
            )?
        };

        let sigma_t = &model.sigma_t;
        let mut lower_right = Vec::with_capacity(grid.len());
        let mut ratio = Vec::with_capacity(grid.len());
        let mut sigma = Vec::with_capacity(grid.len());
        let mut inverses = Vec::with_capacity(grid.len());
        for phi in &transition {
            let b11 = phi.view((0, 0), (n, n)).clone_owned();
            let b12 = phi.view((0, n), (n, n)).clone_owned();
            let b21 = phi.view((n, 0), (n, n)).clone_owned();
            let b22 = phi.view((n, n), (n, n)).clone_owned();
            let bar21 = b21 - sigma_t * b11;
            let bar22 = b22 - sigma_t * &b12;
            let (inv22, _) = checked_inverse(&bar22, MAX_BLOCK_CONDITION)
                .map_err(|condition| Error::IllConditionedBlock { condition })?;
            ratio.push(&b12 * &inv22);
            sigma.push(-(&inv22 * bar21));
            lower_right.push(bar22);
            inverses.push(inv22);
        }
        let base = ratio[0].clone();
        let upper_ratio = ratio.into_iter().map(|r| r - &base).collect();

        let root = psd_sqrt(&model.pi0, DEFAULT_RANK_TOL)?;
        let inner = Matrix::identity(n, n) + &root * &sigma[0] * &root;
        let (inner_inv, _) = checked_inverse(&inner, MAX_BLOCK_CONDITION)
            .map_err(|condition| Error::IllConditionedBlock { condition })?;
        let prior = inverses[0].transpose() * &root * inner_inv * &root * &inverses[0];

        Ok(Self {
            grid,
            lower_right,
            upper_ratio,
            sigma,
            prior,
            used_expm,
        })
    }

    /// `K(τ_i, τ_j | T)`.
    pub fn k_at(&self, i: usize, j: usize) -> Matrix {
        if i > j {
            return self.k_at(j, i).transpose();
        }
        self.lower_right[i].transpose() * (&self.prior + &self.upper_ratio[i]) * &self.lower_right[j]
    }

    pub fn kernel_k(&self, s: f64, t: f64) -> Result<Matrix> {
        Ok(self.k_at(self.grid.index_of(s)?, self.grid.index_of(t)?))
    }

    /// `Σ(τ_k)` read off the Hamiltonian blocks.
    pub fn sigma(&self, k: usize) -> &Matrix {
        &self.sigma[k]
    }

    /// `Φ_{F,Σ}(τ_k, T)`.
    pub fn sigma_closed_to_end(&self, k: usize) -> Matrix {
        self.lower_right[k].transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelField;
    use crate::model::systems::*;
    use crate::numcore::max_abs_diff;

    #[test]
    fn brownian_route_is_min() {
        let ham = HamiltonianKernel::new(&brownian_b1(1000)).unwrap();
        assert!(ham.used_expm);
        for i in (0..=1000).step_by(125) {
            for j in (0..=1000).step_by(100) {
                let expected = (i.min(j)) as f64 / 1000.0;
                assert!((ham.k_at(i, j)[(0, 0)] - expected).abs() < 1e-7);
            }
        }
        assert_eq!(ham.k_at(0, 0)[(0, 0)], 0.0);
    }

    #[test]
    fn s1_matches_riccati_route() {
        let model = scalar_s1(1000);
        let ham = HamiltonianKernel::new(&model).unwrap();
        let field = KernelField::new(&model).unwrap();
        for i in (0..=1000).step_by(20) {
            assert!((ham.sigma(i)[(0, 0)] - (1.0 - i as f64 / 1000.0).tanh()).abs() < 1e-12);
            for j in (0..=1000).step_by(20) {
                assert!(max_abs_diff(&ham.k_at(i, j), &field.k_at(i, j)) < 1e-6);
            }
        }
    }

    #[test]
    fn time_varying_route_matches_riccati_route() {
        let model = random_time_varying(12, 3, 1000);
        let ham = HamiltonianKernel::new(&model).unwrap();
        assert!(!ham.used_expm);
        let field = KernelField::new(&model).unwrap();
        for i in (0..=1000).step_by(125) {
            assert!(max_abs_diff(ham.sigma(i), field.riccati().sigma(i)) < 1e-8);
            for j in (0..=1000).step_by(125) {
                assert!(max_abs_diff(&ham.k_at(i, j), &field.k_at(i, j)) < 1e-5);
            }
        }
    }

    #[test]
    fn terminal_weight_and_prior_are_handled() {
        let mut model = random_stable(5, 2, 1000);
        model.sigma_t = Matrix::identity(2, 2) * 0.7;
        let ham = HamiltonianKernel::new(&model).unwrap();
        let field = KernelField::new(&model).unwrap();
        for (i, j) in [(0, 0), (0, 1000), (300, 700), (1000, 1000), (999, 2)] {
            assert!(max_abs_diff(&ham.k_at(i, j), &field.k_at(i, j)) < 1e-5);
        }
    }
}
