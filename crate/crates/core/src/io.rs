//! CSV import and export. Every number is written with 17 significant
//! digits so that files round-trip exactly.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::estimation::{ObservationPath, SmootherResult};
use crate::mcsim::{Ensemble, MonteCarloReport};
use crate::model::LtvModel;
use crate::numcore::{Matrix, TimeGrid, Vector};
use crate::riccati::RiccatiSolution;
use crate::rkhs::{GridPath, InformationElement, TrajectoryElement};

pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn labels(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |i| format!("{prefix}{i}"))
}

fn matrix_labels(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| format!("{prefix}{i}{j}")))
        .collect()
}

/// Row-major entries.
fn entries(m: &Matrix) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

/// Writes a header followed by numeric rows.
pub fn write_table<W: Write>(out: W, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.iter().map(|&x| format_number(x))).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// `t, Π entries, Σ entries`.
pub fn write_riccati<W: Write>(out: W, grid: &TimeGrid, riccati: &RiccatiSolution) -> Result<()> {
    let n = riccati.pi(0).nrows();
    let mut header = vec!["t".to_string()];
    header.extend(matrix_labels("pi_", n, n));
    header.extend(matrix_labels("sigma_", n, n));
    let rows = (0..grid.len()).map(|k| {
        let mut row = vec![grid.time(k)];
        row.extend(entries(riccati.pi(k)));
        row.extend(entries(riccati.sigma(k)));
        row
    });
    write_table(out, &header, rows)
}

/// A block matrix whose block columns are indexed by `times`: a header of
/// the times (each repeated once per block column) and then the rows.
pub fn write_blocks<W: Write>(out: W, times: &[f64], block: &Matrix) -> Result<()> {
    let n = if times.is_empty() { 0 } else { block.ncols() / times.len() };
    let header: Vec<String> = times
        .iter()
        .flat_map(|&t| std::iter::repeat_n(format_number(t), n))
        .collect();
    let rows = (0..block.nrows()).map(|i| block.row(i).iter().copied().collect());
    write_table(out, &header, rows)
}

/// `t, x entries, left and right limits of the control`.
pub fn write_trajectory_element<W: Write>(out: W, grid: &TimeGrid, x: &TrajectoryElement) -> Result<()> {
    write_element(out, grid, &x.x_path, "x", x.representative.as_ref().map(|r| &r.u), "u")
}

pub fn write_information_element<W: Write>(out: W, grid: &TimeGrid, lam: &InformationElement) -> Result<()> {
    write_element(
        out,
        grid,
        &lam.lambda_path,
        "lambda",
        lam.representative.as_ref().map(|r| &r.v),
        "v",
    )
}

fn write_element<W: Write>(
    out: W,
    grid: &TimeGrid,
    path: &[Vector],
    name: &str,
    control: Option<&GridPath>,
    control_name: &str,
) -> Result<()> {
    let n = path.first().map(|v| v.len()).unwrap_or(0);
    let p = control.map(|c| c.dim()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend(labels(&format!("{name}_"), n));
    header.extend(labels(&format!("{control_name}_left_"), p));
    header.extend(labels(&format!("{control_name}_right_"), p));
    let rows = (0..grid.len()).map(|k| {
        let mut row = vec![grid.time(k)];
        row.extend(path[k].iter());
        if let Some(c) = control {
            row.extend(c.left[k].iter());
            row.extend(c.right[k].iter());
        }
        row
    });
    write_table(out, &header, rows)
}

pub fn write_observations<W: Write>(out: W, grid: &TimeGrid, obs: &ObservationPath) -> Result<()> {
    let m = obs.y.first().map(|v| v.len()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend(labels("y_", m));
    let rows = obs.y.iter().enumerate().map(|(k, y)| {
        let mut row = vec![grid.time(k)];
        row.extend(y.iter());
        row
    });
    write_table(out, &header, rows)
}

/// Reads `t, y_0, …, y_{m-1}` and checks the times against the model grid.
pub fn read_observations<R: Read>(input: R, model: &LtvModel) -> Result<ObservationPath> {
    let grid = model.grid;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut y = Vec::with_capacity(grid.len());
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let values = record
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {s:?}: {e}", k + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != model.obs_dim() + 1 {
            return Err(Error::Dimension(format!(
                "row {} has {} columns, expected t and {} observations",
                k + 1,
                values.len(),
                model.obs_dim()
            )));
        }
        if k >= grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: k + 1,
            });
        }
        let expected = grid.time(k);
        if (values[0] - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
            return Err(Error::OffGrid {
                t: values[0],
                nearest: expected,
            });
        }
        y.push(Vector::from_column_slice(&values[1..]));
    }
    if y.len() != grid.len() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: y.len(),
        });
    }
    ObservationPath::new(y)
}

/// `t, filtered state, smoothed state, diagonal of K(s,s|T)`.
pub fn write_smoother<W: Write>(out: W, grid: &TimeGrid, result: &SmootherResult) -> Result<()> {
    let n = result.filtered.first().map(|v| v.len()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend(labels("filtered_", n));
    header.extend(labels("smoothed_", n));
    header.extend(labels("k_diag_", n));
    let rows = (0..grid.len()).map(|k| {
        let mut row = vec![grid.time(k)];
        row.extend(result.filtered[k].iter());
        row.extend(result.smoothed[k].iter());
        row.extend(result.smoothed_cov_diag[k].diagonal().iter());
        row
    });
    write_table(out, &header, rows)
}

/// One row per path and grid point: `path, t, x entries, y entries`.
pub fn write_ensemble<W: Write>(out: W, grid: &TimeGrid, ensemble: &Ensemble) -> Result<()> {
    let (n, m) = ensemble
        .paths
        .first()
        .map(|p| (p.x[0].len(), p.y[0].len()))
        .unwrap_or((0, 0));
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend(labels("x_", n));
    header.extend(labels("y_", m));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header).map_err(csv_error)?;
    for (i, path) in ensemble.paths.iter().enumerate() {
        for k in 0..grid.len() {
            let mut row = vec![i.to_string(), format_number(grid.time(k))];
            row.extend(path.x[k].iter().chain(path.y[k].iter()).map(|&v| format_number(v)));
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Probe times, empirical versus predicted entries and standard errors.
pub fn write_monte_carlo<W: Write>(out: W, report: &MonteCarloReport) -> Result<()> {
    let header: Vec<String> = [
        "t",
        "row",
        "col",
        "smoothed_empirical",
        "kernel_predicted",
        "smoothed_std_error",
        "filtered_empirical",
        "filter_predicted",
        "filtered_std_error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows = report.probes.iter().flat_map(|p| {
        let n = p.predicted.nrows();
        (0..n).flat_map(move |i| {
            (0..n).map(move |j| {
                vec![
                    p.time,
                    i as f64,
                    j as f64,
                    p.smoothed.mean[(i, j)],
                    p.predicted[(i, j)],
                    p.smoothed.std_error[(i, j)],
                    p.filtered.mean[(i, j)],
                    p.filter_covariance[(i, j)],
                    p.filtered.std_error[(i, j)],
                ]
            })
        })
    });
    write_table(out, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::systems::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(format_number(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn observations_round_trip() {
        let model = random_time_varying(3, 2, 20);
        let y: Vec<Vector> = (0..21).map(|k| Vector::from_fn(model.obs_dim(), |i, _| (k * 7 + i) as f64 / 9.0)).collect();
        let obs = ObservationPath::new(y).unwrap();
        let mut buf = Vec::new();
        write_observations(&mut buf, &model.grid, &obs).unwrap();
        assert_eq!(read_observations(buf.as_slice(), &model).unwrap(), obs);
    }

    #[test]
    fn observations_off_grid_are_rejected() {
        let model = scalar_s1(2);
        let text = "t,y_0\n0,0\n0.4,1\n1,2\n";
        assert!(matches!(
            read_observations(text.as_bytes(), &model),
            Err(Error::OffGrid { .. })
        ));
        let short = "t,y_0\n0,0\n0.5,1\n";
        assert!(matches!(
            read_observations(short.as_bytes(), &model),
            Err(Error::GridMismatch { expected: 3, got: 2 })
        ));
        let bad = "t,y_0\n0,zero\n";
        assert!(matches!(read_observations(bad.as_bytes(), &model), Err(Error::Parse(_))));
    }

    #[test]
    fn block_header_repeats_times() {
        let m = Matrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let mut buf = Vec::new();
        write_blocks(&mut buf, &[0.0, 0.5], &m).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first.split(',').count(), 4);
        assert_eq!(text.lines().count(), 3);
        assert!(first.starts_with("0.0000000000000000e0,0.0000000000000000e0,5.0000000000000000e-1"));
    }
}
