use crate::error::{Error, Result};
use crate::model::LtvModel;
use crate::numcore::{checked_inverse, rk4_integrate, Direction, Matrix, TimeGrid, Vector};
use crate::riccati::RiccatiSolution;

const MAX_RECOVERY_CONDITION: f64 = 1e12;

/// Solution of the perturbed two-point boundary value problem
///
/// ```text
///  dμ/dt = F μ - GQGᵀ ν + l_μ,      μ(t₀) = -Π₀ ν(t₀)
/// -dν/dt = Fᵀ ν + HᵀR⁻¹H μ - l_ν,   ν(T)  = Σ_T μ(T)
/// ```
#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub mu_path: Vec<Vector>,
    pub nu_path: Vec<Vector>,
    /// `r = μ + Π ν`.
    pub r_path: Vec<Vector>,
    /// `η = ν - Σ μ`.
    pub eta_path: Vec<Vector>,
}

fn interpolate(grid: &TimeGrid, path: &[Vector], t: f64) -> Matrix {
    let (k, theta) = grid.locate(t).expect("forcing evaluated inside the horizon");
    let v = if theta == 0.0 {
        path[k].clone()
    } else {
        &path[k] * (1.0 - theta) + &path[k + 1] * theta
    };
    Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn column(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Integrates `r` forward and `η` backward, then recovers `(μ, ν)` from
/// `[[I, Π], [-Σ, I]] [μ; ν] = [r; η]` at every grid point.
pub fn solve_bvp(model: &LtvModel, riccati: &RiccatiSolution, l_mu: &[Vector], l_nu: &[Vector]) -> Result<BvpSolution> {
    let grid = model.grid;
    for path in [l_mu, l_nu] {
        if path.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: path.len(),
            });
        }
    }
    let n = model.state_dim();
    let r = rk4_integrate(
        |t, r| {
            let pi = riccati.pi_at(t);
            let closed = model.dynamics_at(t) - &pi * model.observation_information_at(t);
            closed * r + pi * interpolate(&grid, l_nu, t) + interpolate(&grid, l_mu, t)
        },
        &Matrix::zeros(n, 1),
        &grid,
        Direction::Forward,
    )?;
    // dη/dt = -(Fᵀ - Σ GQGᵀ) η - Σ l_μ + l_ν
    let eta = rk4_integrate(
        |t, eta| {
            let sigma = riccati.sigma_at(t);
            let closed = model.dynamics_at(t).transpose() - &sigma * model.plant_diffusion_at(t);
            -(closed * eta) - sigma * interpolate(&grid, l_mu, t) + interpolate(&grid, l_nu, t)
        },
        &Matrix::zeros(n, 1),
        &grid,
        Direction::Backward,
    )?;

    let mut mu_path = Vec::with_capacity(grid.len());
    let mut nu_path = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let mut system = Matrix::identity(2 * n, 2 * n);
        system.view_mut((0, n), (n, n)).copy_from(riccati.pi(k));
        system.view_mut((n, 0), (n, n)).copy_from(&(-riccati.sigma(k)));
        let (inv, _) = checked_inverse(&system, MAX_RECOVERY_CONDITION)
            .map_err(|condition| Error::SingularRecovery { condition })?;
        let mut rhs = Vector::zeros(2 * n);
        rhs.rows_mut(0, n).copy_from(&column(&r[k]));
        rhs.rows_mut(n, n).copy_from(&column(&eta[k]));
        let sol = inv * rhs;
        mu_path.push(sol.rows(0, n).clone_owned());
        nu_path.push(sol.rows(n, n).clone_owned());
    }
    Ok(BvpSolution {
        mu_path,
        nu_path,
        r_path: r.iter().map(column).collect(),
        eta_path: eta.iter().map(column).collect(),
    })
}
