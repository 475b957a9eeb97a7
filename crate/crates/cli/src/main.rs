use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use greenfilter::estimation::{kalman_filter, smooth};
use greenfilter::io;
use greenfilter::kernels::{controllability_gramian, observability_gramian, HamiltonianKernel, KernelField, KernelKind};
use greenfilter::mcsim::{simulate, Simulator};
use greenfilter::riccati::RiccatiSolution;
use greenfilter::verify::{self, SuiteReport};
use greenfilter::{load_model, Error, LtvModel, Matrix};

const THREADS_VAR: &str = "GREENFILTER_THREADS";

#[derive(Parser)]
#[command(name = "greenfilter", version, about = "Kalman filtering and smoothing through covariance kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Model configuration (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Route {
    Riccati,
    Bf,
    Hamiltonian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Identities,
    Rkhs,
    Montecarlo,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model and report every violation.
    Validate(Common),
    /// Tabulate Π and Σ on the grid.
    Riccati(Common),
    /// Kernel slices K(s, ·|T) at the probe times.
    Kernel {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        probes: Vec<f64>,
        #[arg(long, value_enum, default_value = "riccati")]
        route: Route,
    },
    /// Gram matrices of K and Λ at the probe times, plus the Gramians.
    Gram {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        probes: Vec<f64>,
    },
    /// Kalman filter over an observation CSV.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        obs: PathBuf,
    },
    /// Filter, smoother and K(s,s|T) over an observation CSV.
    Smooth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        obs: PathBuf,
    },
    /// Simulate state and observation paths.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run verification suites.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        #[arg(long, default_value_t = 20_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        probes: Vec<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Riccati(_) => "riccati",
            Command::Kernel { .. } => "kernel",
            Command::Gram { .. } => "gram",
            Command::Filter { .. } => "filter",
            Command::Smooth { .. } => "smooth",
            Command::Simulate { .. } => "simulate",
            Command::Verify { .. } => "verify",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Validate(c) | Command::Riccati(c) => c,
            Command::Kernel { common, .. }
            | Command::Gram { common, .. }
            | Command::Filter { common, .. }
            | Command::Smooth { common, .. }
            | Command::Simulate { common, .. }
            | Command::Verify { common, .. } => common,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Simulate { seed, .. } | Command::Verify { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    fn obs(&self) -> Option<&Path> {
        match self {
            Command::Filter { obs, .. } | Command::Smooth { obs, .. } => Some(obs),
            _ => None,
        }
    }
}

enum Failure {
    /// Bad configuration, flags or input files.
    Input(String),
    Numerical(String),
    /// Suites ran but some check failed.
    Verification,
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Verification => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Input(m) | Failure::Numerical(m) => m.clone(),
            Failure::Verification => "verification failed".into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Parse(_)
            | Error::Validation(_)
            | Error::Dimension(_)
            | Error::GridMismatch { .. }
            | Error::OffGrid { .. }
            | Error::OutOfHorizon { .. }
            | Error::InsufficientPaths { .. }
            | Error::Io(_) => Failure::Input(msg),
            _ => Failure::Numerical(msg),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    args: Vec<String>,
    inputs: Vec<InputHash>,
    seed: Option<u64>,
    version: String,
    threads: usize,
    wall_time_seconds: f64,
    exit_code: u8,
    error: Option<String>,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    verification: Vec<SuiteReport>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files written and suite results collected during one run.
#[derive(Default)]
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    verification: Vec<SuiteReport>,
}

impl Outputs {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).expect("serializable report");
        let path = self.dir.join(name);
        fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn configure_threads() -> Result<usize, Failure> {
    let requested = match std::env::var(THREADS_VAR) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Failure::Input(format!("{THREADS_VAR} must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(requested)
        .build_global()
        .map_err(|e| Failure::Numerical(e.to_string()))?;
    Ok(rayon::current_num_threads())
}

fn matrix_json(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn probe_times(model: &LtvModel, probes: &[f64], default_count: usize) -> Result<Vec<f64>, Failure> {
    if probes.is_empty() {
        let grid = model.grid;
        return Ok(verify::probe_indices(grid.last(), default_count)
            .into_iter()
            .map(|k| grid.time(k))
            .collect());
    }
    for &t in probes {
        model.grid.index_of(t)?;
    }
    Ok(probes.to_vec())
}

fn run(command: &Command, model: &LtvModel, out: &mut Outputs) -> Result<(), Failure> {
    let grid = model.grid;
    match command {
        Command::Validate(_) => {
            out.json(
                "validation.json",
                &serde_json::json!({
                    "valid": true,
                    "state_dim": model.state_dim(),
                    "noise_dim": model.noise_dim(),
                    "obs_dim": model.obs_dim(),
                    "n_steps": grid.n_steps(),
                    "time_invariant": model.is_time_invariant(),
                }),
            )?;
        }
        Command::Riccati(_) => {
            let ric = RiccatiSolution::solve(model)?;
            io::write_riccati(out.create("riccati.csv")?, &grid, &ric)?;
        }
        Command::Kernel { probes, route, .. } => {
            let probes = probe_times(model, probes, 5)?;
            let times = grid.points();
            let n = model.state_dim();
            let idx: Vec<usize> = probes.iter().map(|&t| grid.index_of(t)).collect::<Result<_, _>>()?;
            let slices = |kernel: &dyn Fn(usize, usize) -> Result<Matrix, Error>| -> Result<Matrix, Failure> {
                let mut block = Matrix::zeros(idx.len() * n, times.len() * n);
                for (a, &i) in idx.iter().enumerate() {
                    for j in 0..times.len() {
                        block.view_mut((a * n, j * n), (n, n)).copy_from(&kernel(i, j)?);
                    }
                }
                Ok(block)
            };
            let block = match route {
                Route::Riccati => {
                    let field = KernelField::new(model)?;
                    let lambda = slices(&|i, j| Ok(field.lambda_at(i, j)))?;
                    io::write_blocks(out.create("kernel_Lambda.csv")?, &times, &lambda)?;
                    slices(&|i, j| Ok(field.k_at(i, j)))?
                }
                Route::Bf => {
                    let field = KernelField::new(model)?;
                    field.ensure_terminal_weight_zero()?;
                    slices(&|i, j| field.k_bf_at(i, j))?
                }
                Route::Hamiltonian => {
                    let ham = HamiltonianKernel::new(model)?;
                    slices(&|i, j| Ok(ham.k_at(i, j)))?
                }
            };
            io::write_blocks(out.create("kernel_K.csv")?, &times, &block)?;
            out.json("kernel_probes.json", &serde_json::json!({ "route": route, "probes": probes }))?;
        }
        Command::Gram { probes, .. } => {
            let probes = probe_times(model, probes, 16)?;
            let field = KernelField::new(model)?;
            let k = field.gram(KernelKind::Trajectory, &probes)?;
            let lambda = field.gram(KernelKind::Information, &probes)?;
            io::write_blocks(out.create("gram_K.csv")?, &probes, &k)?;
            io::write_blocks(out.create("gram_Lambda.csv")?, &probes, &lambda)?;
            let obs = observability_gramian(model)?;
            out.json(
                "gramians.json",
                &serde_json::json!({
                    "controllability": matrix_json(&controllability_gramian(model)?),
                    "observability_unit_noise": matrix_json(&obs.unit_noise),
                    "observability_noise_weighted": matrix_json(&obs.noise_weighted),
                }),
            )?;
        }
        Command::Filter { obs, .. } => {
            let path = read_obs(obs, model)?;
            let ric = RiccatiSolution::solve(model)?;
            let res = kalman_filter(model, &ric, &path)?;
            let n = model.state_dim();
            let m = model.obs_dim();
            let mut header = vec!["t".to_string()];
            header.extend((0..n).map(|i| format!("filtered_{i}")));
            header.extend((0..n).map(|i| format!("r_{i}")));
            header.extend((0..m).map(|i| format!("innovation_{i}")));
            let rows = (0..grid.len()).map(|k| {
                let mut row = vec![grid.time(k)];
                row.extend(res.filtered[k].iter());
                row.extend(res.r_path[k].iter());
                row.extend(res.innovation[k].iter());
                row
            });
            io::write_table(out.create("filter.csv")?, &header, rows)?;
        }
        Command::Smooth { obs, .. } => {
            let path = read_obs(obs, model)?;
            let field = KernelField::new(model)?;
            let res = smooth(&field, &path)?;
            io::write_smoother(out.create("smooth.csv")?, &grid, &res)?;
        }
        Command::Simulate { paths, seed, .. } => {
            let ens = simulate(model, *paths, *seed)?;
            io::write_ensemble(out.create("paths.csv")?, &grid, &ens)?;
        }
        Command::Verify {
            suite,
            paths,
            seed,
            probes,
            ..
        } => {
            let field = KernelField::new(model)?;
            let wants = |s: SuiteArg| *suite == s || *suite == SuiteArg::All;
            if wants(SuiteArg::Identities) {
                out.verification.push(verify::identities(&field)?);
            }
            if wants(SuiteArg::Rkhs) {
                out.verification.push(verify::rkhs(&field, *seed)?);
            }
            if wants(SuiteArg::Montecarlo) {
                let probes = if probes.is_empty() {
                    verify::default_probes(model)
                } else {
                    probe_times(model, probes, 0)?
                };
                let sim = Simulator::new(model)?;
                out.verification
                    .push(verify::montecarlo(&field, &sim, *paths, *seed, &probes)?);
            }
            let reports = out.verification.clone();
            out.json("verify.json", &reports)?;
            for r in &reports {
                for c in &r.checks {
                    let status = if c.passed { "PASS" } else { "FAIL" };
                    eprintln!("{status} {:?}: {} = {:.3e} (limit {:.1e})", r.suite, c.name, c.value, c.tolerance);
                }
            }
            if reports.iter().any(|r| !r.passed) {
                return Err(Failure::Verification);
            }
        }
    }
    Ok(())
}

fn read_obs(path: &Path, model: &LtvModel) -> Result<greenfilter::estimation::ObservationPath, Failure> {
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    Ok(io::read_observations(file, model)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let command = &cli.command;
    let common = command.common().clone();
    let mut outputs = Outputs {
        dir: common.out.clone(),
        ..Default::default()
    };
    let mut inputs = Vec::new();

    let result = (|| -> Result<(), Failure> {
        let threads = configure_threads()?;
        fs::create_dir_all(&common.out).map_err(|e| io_failure(&common.out, e))?;
        let text = fs::read(&common.model).map_err(|e| io_failure(&common.model, e))?;
        inputs.push(InputHash {
            path: common.model.display().to_string(),
            sha256: sha256_hex(&text),
        });
        if let Some(obs) = command.obs() {
            let bytes = fs::read(obs).map_err(|e| io_failure(obs, e))?;
            inputs.push(InputHash {
                path: obs.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        let text = String::from_utf8(text).map_err(|e| Failure::Input(format!("model is not UTF-8: {e}")))?;
        let model = load_model(&text)?;
        let _ = threads;
        run(command, &model, &mut outputs)
    })();

    let exit_code = result.as_ref().err().map(Failure::exit_code).unwrap_or(0);
    if let Err(f) = &result {
        if !matches!(f, Failure::Verification) {
            eprintln!("error: {}", f.message());
        }
    }
    let manifest = Manifest {
        command: command.name().to_string(),
        args: std::env::args().skip(1).collect(),
        inputs,
        seed: command.seed(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: rayon::current_num_threads(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        exit_code,
        error: result.as_ref().err().map(Failure::message),
        outputs: outputs.files.clone(),
        verification: outputs.verification.clone(),
    };
    if common.out.is_dir() {
        let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        if let Err(e) = fs::write(common.out.join("manifest.json"), text + "\n") {
            eprintln!("error: cannot write manifest: {e}");
        }
    }
    ExitCode::from(exit_code)
}
