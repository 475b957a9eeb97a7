//! Reference systems used by tests, the CLI and the verification suites.

use nalgebra::Complex;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::LtvModel;
use crate::numcore::{Matrix, TimeGrid, Vector};

fn unit_grid(n_steps: usize) -> TimeGrid {
    TimeGrid::new(0.0, 1.0, n_steps).expect("unit horizon is valid")
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

/// Scalar model `F = 0`, `G = Q = H = R = 1`, `Π₀ = Σ_T = 0` on `[0, 1]`.
/// Here `Π(t) = tanh t` and `Σ(t) = tanh(1 - t)`.
pub fn scalar_s1(n_steps: usize) -> LtvModel {
    LtvModel::time_invariant(
        unit_grid(n_steps),
        scalar(0.0),
        scalar(1.0),
        scalar(1.0),
        scalar(1.0),
        scalar(1.0),
        scalar(0.0),
        scalar(0.0),
    )
}

/// Unobserved Brownian motion: `K(s, t) = min(s, t)`.
pub fn brownian_b1(n_steps: usize) -> LtvModel {
    let mut m = scalar_s1(n_steps);
    m.observation = super::MatrixSchedule::Constant(scalar(0.0));
    m
}

/// Noise-free observed constant state: `Λ(s, t) = T - max(s, t)`.
pub fn observed_o1(n_steps: usize) -> LtvModel {
    let mut m = scalar_s1(n_steps);
    m.noise_input = super::MatrixSchedule::Constant(scalar(0.0));
    m
}

/// Uniform samples in `[0, 1)` from a seeded ChaCha stream.
pub(crate) struct Uniform(ChaCha8Rng);

impl Uniform {
    pub(crate) fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub(crate) fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub(crate) fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }

    pub(crate) fn matrix(&mut self, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| self.range(lo, hi))
    }
}

/// Seeded random time-invariant system with `n` states, stable `F`
/// (spectral abscissa in `[-1.5, -0.5]`), nonzero `Π₀` and `Σ_T = 0`.
pub fn random_stable(seed: u64, n: usize, n_steps: usize) -> LtvModel {
    let mut rng = Uniform::new(seed);
    let b = rng.matrix(n, n, -1.0, 1.0);
    let abscissa = b
        .complex_eigenvalues()
        .iter()
        .map(|z: &Complex<f64>| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = abscissa + rng.range(0.5, 1.5);
    let f = &b - Matrix::identity(n, n) * shift;

    let p = n;
    let g = rng.matrix(n, p, -1.0, 1.0);
    let q = Matrix::from_diagonal(&Vector::from_fn(p, |_, _| rng.range(0.5, 1.5)));
    let m = 1 + (rng.next() * n as f64) as usize % n;
    let h = rng.matrix(m, n, -1.0, 1.0);
    let c = rng.matrix(m, m, -0.3, 0.3);
    let r = Matrix::identity(m, m) * rng.range(0.5, 1.5) + &c * c.transpose();
    let c = rng.matrix(n, n, -1.0, 1.0);
    let pi0 = &c * c.transpose() * 0.5;
    LtvModel::time_invariant(unit_grid(n_steps), f, g, q, h, r, pi0, Matrix::zeros(n, n))
}

/// Seeded random system whose `F`, `H` and `R` vary smoothly in time,
/// with nonzero drifts and offsets.
pub fn random_time_varying(seed: u64, n: usize, n_steps: usize) -> LtvModel {
    use super::MatrixSchedule;
    let base = random_stable(seed, n, n_steps);
    let mut rng = Uniform::new(seed ^ 0x5eed);
    let grid = base.grid;
    let f0 = base.dynamics.at(0).clone();
    let f1 = rng.matrix(n, n, -0.5, 0.5);
    let h0 = base.observation.at(0).clone();
    let m = h0.nrows();
    let h1 = rng.matrix(m, n, -0.5, 0.5);
    let r0 = base.observation_noise.at(0).clone();
    let drift = rng.matrix(n, 1, -1.0, 1.0);
    let obs_drift = rng.matrix(m, 1, -1.0, 1.0);
    let mut model = base;
    model.dynamics = MatrixSchedule::tabulate(&grid, |t| &f0 + &f1 * (3.0 * t).sin());
    model.observation = MatrixSchedule::tabulate(&grid, |t| &h0 + &h1 * (2.0 * t).cos());
    model.observation_noise = MatrixSchedule::tabulate(&grid, |t| &r0 * (1.0 + 0.5 * t * t));
    model.state_drift = MatrixSchedule::tabulate(&grid, |t| &drift * (1.0 + t));
    model.observation_drift = MatrixSchedule::tabulate(&grid, |t| &obs_drift * t.cos());
    model.x0 = Vector::from_fn(n, |_, _| rng.range(-1.0, 1.0));
    model.y0 = Vector::from_fn(m, |_, _| rng.range(-1.0, 1.0));
    model
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_systems_are_valid() {
        assert!(scalar_s1(10).validate().is_empty());
        assert!(brownian_b1(10).validate().is_empty());
        assert!(observed_o1(10).validate().is_empty());
        for seed in 0..20 {
            for n in [2, 3] {
                let m = random_stable(seed, n, 10);
                assert!(m.validate().is_empty(), "seed {seed}");
                let re = m
                    .dynamics
                    .at(0)
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z.re)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((-1.5..=-0.5).contains(&re));
                assert!(random_time_varying(seed, n, 10).validate().is_empty());
            }
        }
    }

    #[test]
    fn random_systems_are_reproducible() {
        assert_eq!(random_stable(5, 3, 10), random_stable(5, 3, 10));
        assert_ne!(random_stable(5, 3, 10), random_stable(6, 3, 10));
    }
}
