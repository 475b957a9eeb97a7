//! JSON model configuration.

use serde::{Deserialize, Serialize};

use super::{LtvModel, MatrixSchedule, Violation, ViolationKind};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, TimeGrid, Vector};

/// Row-major nested array, or a flat array read as a column.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawMatrix {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum RawSchedule {
    Constant(RawMatrix),
    Tabulated(Vec<RawMatrix>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawFixed {
    Plain(RawMatrix),
    Wrapped { constant: RawMatrix },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    t0: f64,
    T: f64,
    n_steps: usize,
    n: usize,
    p: usize,
    m: usize,
    F: RawSchedule,
    G: RawSchedule,
    Q: RawSchedule,
    H: RawSchedule,
    R: RawSchedule,
    f: RawSchedule,
    h: RawSchedule,
    x0: Vec<f64>,
    y0: Vec<f64>,
    Pi0: RawFixed,
    SigmaT: RawFixed,
}

fn to_matrix(raw: &RawMatrix, field: &str) -> Result<Matrix> {
    match raw {
        RawMatrix::Flat(v) => Ok(Matrix::from_column_slice(v.len(), 1, v)),
        RawMatrix::Nested(rows) => {
            let r = rows.len();
            let c = rows.first().map(|row| row.len()).unwrap_or(0);
            if rows.iter().any(|row| row.len() != c) {
                return Err(Error::Parse(format!("field `{field}`: ragged rows")));
            }
            Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
        }
    }
}

fn from_matrix(m: &Matrix) -> RawMatrix {
    RawMatrix::Nested(
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect(),
    )
}

fn to_schedule(raw: &RawSchedule, field: &str) -> Result<MatrixSchedule> {
    match raw {
        RawSchedule::Constant(m) => Ok(MatrixSchedule::Constant(to_matrix(m, field)?)),
        RawSchedule::Tabulated(v) => {
            if v.is_empty() {
                return Err(Error::Parse(format!("field `{field}`: empty table")));
            }
            let samples = v
                .iter()
                .map(|m| to_matrix(m, field))
                .collect::<Result<Vec<_>>>()?;
            Ok(MatrixSchedule::Tabulated(samples))
        }
    }
}

fn from_schedule(s: &MatrixSchedule) -> RawSchedule {
    match s {
        MatrixSchedule::Constant(m) => RawSchedule::Constant(from_matrix(m)),
        MatrixSchedule::Tabulated(v) => RawSchedule::Tabulated(v.iter().map(from_matrix).collect()),
    }
}

fn declared_dim_check(out: &mut Vec<Violation>, field: &str, declared: usize, actual: usize, what: &str) {
    if declared != actual {
        out.push(Violation {
            field: field.to_string(),
            kind: ViolationKind::Dimension,
            grid_index: None,
            message: format!("{field} implies {what} = {actual}, config declares {declared}"),
        });
    }
}

/// Parses and validates a JSON model description.
pub fn load_model(config_text: &str) -> Result<LtvModel> {
    let raw: RawConfig = serde_json::from_str(config_text).map_err(|e| Error::Parse(e.to_string()))?;
    let grid = TimeGrid::new(raw.t0, raw.T, raw.n_steps)?;
    let fixed = |f: &RawFixed, name: &str| match f {
        RawFixed::Plain(m) | RawFixed::Wrapped { constant: m } => to_matrix(m, name),
    };
    let model = LtvModel {
        grid,
        dynamics: to_schedule(&raw.F, "F")?,
        noise_input: to_schedule(&raw.G, "G")?,
        plant_noise: to_schedule(&raw.Q, "Q")?,
        observation: to_schedule(&raw.H, "H")?,
        observation_noise: to_schedule(&raw.R, "R")?,
        state_drift: to_schedule(&raw.f, "f")?,
        observation_drift: to_schedule(&raw.h, "h")?,
        x0: Vector::from_vec(raw.x0.clone()),
        y0: Vector::from_vec(raw.y0.clone()),
        pi0: fixed(&raw.Pi0, "Pi0")?,
        sigma_t: fixed(&raw.SigmaT, "SigmaT")?,
    };
    let mut violations = Vec::new();
    declared_dim_check(&mut violations, "F", raw.n, model.state_dim(), "n");
    declared_dim_check(&mut violations, "G", raw.p, model.noise_dim(), "p");
    declared_dim_check(&mut violations, "H", raw.m, model.obs_dim(), "m");
    violations.extend(model.validate());
    if violations.is_empty() {
        Ok(model)
    } else {
        Err(Error::Validation(violations))
    }
}

/// Inverse of [`load_model`].
pub fn to_config_json(model: &LtvModel) -> String {
    let raw = RawConfig {
        t0: model.grid.t0(),
        T: model.grid.t_end(),
        n_steps: model.grid.n_steps(),
        n: model.state_dim(),
        p: model.noise_dim(),
        m: model.obs_dim(),
        F: from_schedule(&model.dynamics),
        G: from_schedule(&model.noise_input),
        Q: from_schedule(&model.plant_noise),
        H: from_schedule(&model.observation),
        R: from_schedule(&model.observation_noise),
        f: from_schedule(&model.state_drift),
        h: from_schedule(&model.observation_drift),
        x0: model.x0.iter().cloned().collect(),
        y0: model.y0.iter().cloned().collect(),
        Pi0: RawFixed::Plain(from_matrix(&model.pi0)),
        SigmaT: RawFixed::Plain(from_matrix(&model.sigma_t)),
    };
    serde_json::to_string_pretty(&raw).expect("model config is always serializable")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::systems::{random_stable, scalar_s1};

    const S1: &str = r#"{
        "t0": 0.0, "T": 1.0, "n_steps": 1000, "n": 1, "p": 1, "m": 1,
        "F": {"constant": [[0.0]]}, "G": {"constant": [[1.0]]}, "Q": {"constant": [[1.0]]},
        "H": {"constant": [[1.0]]}, "R": {"constant": [[1.0]]},
        "f": {"constant": [0.0]}, "h": {"constant": [[0.0]]},
        "x0": [0.0], "y0": [0.0], "Pi0": [[0.0]], "SigmaT": {"constant": [[0.0]]}
    }"#;

    #[test]
    fn loads_s1() {
        let m = load_model(S1).unwrap();
        assert_eq!((m.state_dim(), m.noise_dim(), m.obs_dim()), (1, 1, 1));
        assert_eq!(m, scalar_s1(1000));
    }

    #[test]
    fn missing_r_names_the_field() {
        let text = S1.replace(r#""R": {"constant": [[1.0]]},"#, "");
        match load_model(&text) {
            Err(Error::Parse(msg)) => assert!(msg.contains("`R`"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_table_length_is_a_validation_error() {
        let text = S1.replace(r#""F": {"constant": [[0.0]]}"#, r#""F": {"tabulated": [[[0.0]], [[0.0]]]}"#);
        assert!(matches!(load_model(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn declared_dimension_must_match() {
        let text = S1.replace(r#""n": 1"#, r#""n": 2"#);
        assert!(matches!(load_model(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn round_trip_constant_is_bitwise() {
        let model = random_stable(17, 3, 200);
        let back = load_model(&to_config_json(&model)).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn round_trip_tabulated() {
        let mut model = scalar_s1(50);
        let grid = model.grid;
        model.dynamics = MatrixSchedule::tabulate(&grid, |t| Matrix::from_element(1, 1, (3.0 * t).sin() / 7.0));
        model.observation_noise = MatrixSchedule::tabulate(&grid, |t| Matrix::from_element(1, 1, 1.0 + t * t / 3.0));
        let back = load_model(&to_config_json(&model)).unwrap();
        for k in 0..grid.len() {
            let d = (back.dynamics.at(k) - model.dynamics.at(k)).abs().max();
            assert!(d <= 1e-15);
            let d = (back.observation_noise.at(k) - model.observation_noise.at(k)).abs().max();
            assert!(d <= 1e-15);
        }
    }
}
