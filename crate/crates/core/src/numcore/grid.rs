use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Absolute tolerance used when snapping a time onto the grid.
pub const GRID_SNAP_TOL: f64 = 1e-12;

/// Uniform subdivision of `[t0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite()) || t_end <= t0 {
            return Err(Error::Parse(format!(
                "time grid needs finite t0 < T, got [{t0}, {t_end}]"
            )));
        }
        if n_steps == 0 {
            return Err(Error::Parse("time grid needs n_steps >= 1".into()));
        }
        Ok(Self { t0, t_end, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points (`n_steps + 1`).
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn last(&self) -> usize {
        self.n_steps
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 - GRID_SNAP_TOL && t <= self.t_end + GRID_SNAP_TOL
    }

    /// Index of the grid point equal to `t` (within [`GRID_SNAP_TOL`]).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if !self.contains(t) {
            return Err(Error::OutOfHorizon {
                t,
                t0: self.t0,
                t_end: self.t_end,
            });
        }
        let k = ((t - self.t0) / self.step()).round().clamp(0.0, self.n_steps as f64) as usize;
        let nearest = self.time(k);
        if (nearest - t).abs() > GRID_SNAP_TOL {
            return Err(Error::OffGrid { t, nearest });
        }
        Ok(k)
    }

    /// Panel index `k` and fraction `θ ∈ [0, 1]` with `t = τ_k + θ h`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !self.contains(t) {
            return Err(Error::OutOfHorizon {
                t,
                t0: self.t0,
                t_end: self.t_end,
            });
        }
        let h = self.step();
        let x = ((t - self.t0) / h).clamp(0.0, self.n_steps as f64);
        let k = (x.floor() as usize).min(self.n_steps - 1);
        Ok((k, (x - k as f64).clamp(0.0, 1.0)))
    }

    /// Composite trapezoid weights for integrating over `[τ_from, τ_to]`.
    pub fn trapezoid_weight(&self, k: usize, from: usize, to: usize) -> f64 {
        if from >= to || k < from || k > to {
            return 0.0;
        }
        let h = self.step();
        if k == from || k == to {
            0.5 * h
        } else {
            h
        }
    }
}

/// Integration direction for [`rk4_integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Classical fixed-step RK4 on the grid.
///
/// The returned path is indexed by grid point: `path[0] = x0` when
/// integrating forward and `path[n_steps] = x0` when integrating backward.
pub fn rk4_integrate<F>(rhs: F, x0: &Matrix, grid: &TimeGrid, direction: Direction) -> Result<Vec<Matrix>>
where
    F: Fn(f64, &Matrix) -> Matrix,
{
    let n = grid.n_steps();
    let mut path = vec![Matrix::zeros(0, 0); n + 1];
    let (start, sign) = match direction {
        Direction::Forward => (0usize, 1.0),
        Direction::Backward => (n, -1.0),
    };
    let h = sign * grid.step();
    path[start] = x0.clone();
    let mut x = x0.clone();
    for step in 0..n {
        let (k, next) = match direction {
            Direction::Forward => (step, step + 1),
            Direction::Backward => (n - step, n - step - 1),
        };
        let t = grid.time(k);
        let t_mid = t + 0.5 * h;
        let t_next = grid.time(next);
        let k1 = rhs(t, &x);
        let k2 = rhs(t_mid, &(&x + &k1 * (0.5 * h)));
        let k3 = rhs(t_mid, &(&x + &k2 * (0.5 * h)));
        let k4 = rhs(t_next, &(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { index: next });
        }
        path[next] = x.clone();
    }
    Ok(path)
}

fn check_len<T>(values: &[T], grid: &TimeGrid) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    Ok(())
}

/// Composite trapezoid rule over the whole grid.
pub fn trapezoid(values: &[Matrix], grid: &TimeGrid) -> Result<Matrix> {
    check_len(values, grid)?;
    let h = grid.step();
    let mut acc = (&values[0] + &values[grid.last()]) * 0.5;
    for v in &values[1..grid.last()] {
        acc += v;
    }
    Ok(acc * h)
}

/// Running trapezoid integral from `t0` to each grid point.
pub fn cumulative_trapezoid(values: &[Matrix], grid: &TimeGrid) -> Result<Vec<Matrix>> {
    check_len(values, grid)?;
    let half_h = 0.5 * grid.step();
    let mut out = Vec::with_capacity(values.len());
    let mut acc = Matrix::zeros(values[0].nrows(), values[0].ncols());
    out.push(acc.clone());
    for w in values.windows(2) {
        acc += (&w[0] + &w[1]) * half_h;
        out.push(acc.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{expm, max_abs_diff};

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn grid_indexing() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        assert_eq!(g.len(), 1001);
        assert_eq!(g.index_of(0.25).unwrap(), 250);
        assert_eq!(g.index_of(1.0).unwrap(), 1000);
        assert!(matches!(g.index_of(0.2505), Err(Error::OffGrid { .. })));
        assert!(matches!(g.index_of(1.5), Err(Error::OutOfHorizon { .. })));
        assert_eq!(g.time(1000), 1.0);
        assert!(TimeGrid::new(1.0, 1.0, 10).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn rk4_exponential_growth() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let path = rk4_integrate(|_, x| x.clone(), &scalar(1.0), &g, Direction::Forward).unwrap();
        assert!((path[1000][(0, 0)] - 1f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn rk4_zero_rhs_is_constant() {
        let g = TimeGrid::new(0.0, 2.0, 7).unwrap();
        let x0 = Matrix::from_row_slice(2, 1, &[1.5, -2.0]);
        let path = rk4_integrate(|_, x| x * 0.0, &x0, &g, Direction::Forward).unwrap();
        assert!(path.iter().all(|x| *x == x0));
    }

    #[test]
    fn rk4_backward_decay() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let path = rk4_integrate(|_, x| -x, &scalar(1.0), &g, Direction::Backward).unwrap();
        assert_eq!(path[1000][(0, 0)], 1.0);
        assert!((path[0][(0, 0)] - 1f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn rk4_reports_blow_up() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let res = rk4_integrate(|_, x| x.map(|v| v * v * 1e200), &scalar(1e100), &g, Direction::Forward);
        assert!(matches!(res, Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn rk4_observed_order_is_four() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, -0.5, -0.3]);
        let x0 = Matrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let exact = expm(&(&a * 2.0)) * &x0;
        let err = |n: usize| {
            let g = TimeGrid::new(0.0, 2.0, n).unwrap();
            let p = rk4_integrate(|_, x| &a * x, &x0, &g, Direction::Forward).unwrap();
            max_abs_diff(&p[n], &exact)
        };
        let (e1, e2) = (err(20), err(40));
        assert!(e1 / e2 >= 12.0, "ratio {}", e1 / e2);
        assert!((e1 / e2).log2() >= 3.8);
    }

    #[test]
    fn trapezoid_examples() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let ones: Vec<Matrix> = g.points().iter().map(|_| scalar(1.0)).collect();
        assert!((trapezoid(&ones, &g).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
        for n in [1, 3, 17] {
            let g = TimeGrid::new(0.0, 1.0, n).unwrap();
            let lin: Vec<Matrix> = g.points().iter().map(|&t| scalar(t)).collect();
            assert!((trapezoid(&lin, &g).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
        }
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let sq: Vec<Matrix> = g.points().iter().map(|&t| scalar(t * t)).collect();
        assert!((trapezoid(&sq, &g).unwrap()[(0, 0)] - 1.0 / 3.0).abs() < 1e-6);
        assert!(matches!(
            trapezoid(&sq[..10], &g),
            Err(Error::GridMismatch { .. })
        ));
        let cum = cumulative_trapezoid(&sq, &g).unwrap();
        assert_eq!(cum[0][(0, 0)], 0.0);
        assert!((cum[1000][(0, 0)] - trapezoid(&sq, &g).unwrap()[(0, 0)]).abs() < 1e-14);
    }
}
