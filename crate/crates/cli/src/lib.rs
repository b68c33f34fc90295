//! Command-line driver: stationary campaigns (`table`), jump tracking
//! (`track`) and analysis diagnostics (`diag`).

pub mod output;
pub mod spec;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use passive_sgd::analysis::{
    bvm_distance, is_asymptotic_cov, solve_liapunov, FieldKind, OdeField, SurrogateCovariance,
};
use passive_sgd::transfer::{run_campaign_scale, run_tracking, Scenario};
use passive_sgd::{CostModel, DensityFamily, KernelFamily, KernelSpec, NoiseModel, RngStream, SamplingDensity};

use output::{num, RunManifest};

/// Environment variable that replaces the default output directory.
pub const OUT_ENV: &str = "PASSIVE_SGD_OUT";
const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "passive-sgd", version, about = "Passive stochastic gradient experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a stationary RMSE campaign and write table.csv.
    Table(RunArgs),
    /// Run jump-tracking sample paths and write trajectory_<variant>.csv.
    Track(RunArgs),
    /// Print an analysis diagnostic as CSV.
    #[command(subcommand)]
    Diag(Diag),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    /// Master seed; overrides `seed` in the spec file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to $PASSIVE_SGD_OUT, then ./out.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Record every n-th iterate (track only); overrides `stride` in the spec file.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Write 0 in the wall_ms column so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DensityArg {
    Normal,
    Logistic,
}

impl From<DensityArg> for DensityFamily {
    fn from(d: DensityArg) -> Self {
        match d {
            DensityArg::Normal => DensityFamily::Normal,
            DensityArg::Logistic => DensityFamily::Logistic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Laplace,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gaussian => KernelFamily::Gaussian,
            KernelArg::Laplace => KernelFamily::Laplace,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SurrogateArg {
    FisherScaled,
    InverseFisherScaled,
    InverseFisher,
    LikelihoodMoment,
}

impl From<SurrogateArg> for SurrogateCovariance {
    fn from(s: SurrogateArg) -> Self {
        match s {
            SurrogateArg::FisherScaled => SurrogateCovariance::FisherScaled,
            SurrogateArg::InverseFisherScaled => SurrogateCovariance::InverseFisherScaled,
            SurrogateArg::InverseFisher => SurrogateCovariance::InverseFisher,
            SurrogateArg::LikelihoodMoment => SurrogateCovariance::LikelihoodMoment,
        }
    }
}

#[derive(Debug, Args)]
pub struct Setting {
    #[arg(long, value_enum, default_value = "normal")]
    pub density: DensityArg,
    /// Sampling density scale (normal: standard deviation).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, value_enum, default_value = "laplace")]
    pub kernel: KernelArg,
}

#[derive(Debug, Subcommand)]
pub enum Diag {
    /// Posterior-to-normal L1 distance for each bandwidth (one dimension).
    Bvm {
        #[command(flatten)]
        setting: Setting,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
        bandwidths: Vec<f64>,
        #[arg(long, value_enum, default_value = "likelihood-moment")]
        surrogate: SurrogateArg,
    },
    /// Solve H P + P H = Sigma; matrices as rows separated by ';'.
    Liapunov {
        #[arg(long)]
        hessian: String,
        #[arg(long)]
        sigma: String,
    },
    /// Asymptotic covariance of the importance-sampling gradient estimate.
    Iscov {
        #[command(flatten)]
        setting: Setting,
        #[arg(long)]
        bandwidth: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        alpha: Vec<f64>,
        /// Minimizer of the quadratic cost with identity Hessian.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        minimizer: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        noise_scale: f64,
        /// Monte Carlo draws when the dimension exceeds one.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mean fields of the limiting ODEs for a quadratic cost.
    Ode {
        #[command(flatten)]
        setting: Setting,
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
        bandwidths: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        minimizer: Vec<f64>,
        /// Hessian rows separated by ';' (default identity).
        #[arg(long)]
        hessian: Option<String>,
    },
}

/// Failure classes mapped to exit codes: usage/spec errors 2, runtime 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return e.exit_code();
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut (dyn Write + Send)) -> Result<(), CliError> {
    match cli.command {
        Command::Table(a) => with_pool(a.jobs, || cmd_table(&a, stderr)),
        Command::Track(a) => with_pool(a.jobs, || cmd_track(&a, stderr)),
        Command::Diag(d) => cmd_diag(d, stdout),
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(runtime)?;
    pool.install(f)
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

pub const TABLE_HEADER: [&str; 9] = [
    "scenario",
    "variant",
    "density_family",
    "scale",
    "trials",
    "rmse_mean",
    "rmse_std",
    "diverged",
    "wall_ms",
];

pub const CANDIDATE_HEADER: [&str; 6] = ["scenario", "variant", "scale", "step_size", "rmse_mean", "diverged"];

fn cmd_table(a: &RunArgs, stderr: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let loaded = spec::load(&a.spec).map_err(usage)?;
    let spec = &loaded.experiment;
    if spec.scenario != Scenario::StationaryTable {
        return Err(usage(format!("{}: table needs scenario = \"stationary_table\"", a.spec.display())));
    }
    let seed = a.seed.or(loaded.seed).unwrap_or(0);
    let dir = out_dir(&a.out);
    prepare_dir(&dir)?;
    let table_path = dir.join("table.csv");
    let cand_path = dir.join("candidates.csv");
    let mut table = output::file_writer(&table_path).map_err(runtime)?;
    let mut cands = output::file_writer(&cand_path).map_err(runtime)?;
    table.write_record(TABLE_HEADER).map_err(runtime)?;
    cands.write_record(CANDIDATE_HEADER).map_err(runtime)?;
    table.flush().map_err(runtime)?;
    let mut notes = Vec::new();
    for si in 0..spec.scales.len() {
        let start = Instant::now();
        let rows = run_campaign_scale(spec, seed, si).map_err(runtime)?;
        let elapsed = start.elapsed().as_millis();
        let per_row: u128 = rows.iter().map(|r| r.wall_ms).sum::<u128>().max(1);
        for r in &rows {
            // split the measured wall time by the rows' own CPU shares
            let wall = if a.no_timing { 0 } else { elapsed * r.wall_ms.max(1) / per_row };
            table
                .write_record([
                    spec.name.clone(),
                    r.variant.name().to_string(),
                    r.density_family.name().to_string(),
                    num(r.scale),
                    r.trials.to_string(),
                    num(r.rmse_mean),
                    num(r.rmse_std),
                    r.diverged.to_string(),
                    wall.to_string(),
                ])
                .map_err(runtime)?;
            for (eps, mean, div) in &r.candidates {
                cands
                    .write_record([
                        spec.name.clone(),
                        r.variant.name().to_string(),
                        num(r.scale),
                        num(*eps),
                        num(*mean),
                        div.to_string(),
                    ])
                    .map_err(runtime)?;
            }
            if r.unstable {
                notes.push(format!("{} at scale {}: unstable ({} of {} diverged)", r.variant.name(), r.scale, r.diverged, r.trials));
            }
            if r.candidates.len() > 1 {
                notes.push(format!("{} at scale {}: step size {} selected", r.variant.name(), r.scale, r.step_size));
            }
        }
        table.flush().map_err(runtime)?;
        cands.flush().map_err(runtime)?;
        let _ = writeln!(stderr, "scale {} done", spec.scales[si]);
    }
    manifest("table", a, seed, &dir, vec!["table.csv".into(), "candidates.csv".into()], notes)
}

fn manifest(command: &str, a: &RunArgs, seed: u64, dir: &Path, files: Vec<String>, notes: Vec<String>) -> Result<(), CliError> {
    RunManifest {
        command: command.into(),
        spec: a.spec.display().to_string(),
        seed,
        out_dir: dir.display().to_string(),
        jobs: rayon::current_num_threads(),
        version: env!("CARGO_PKG_VERSION").into(),
        timing: !a.no_timing,
        files,
        notes,
    }
    .write(dir)
    .map_err(runtime)
}

fn cmd_track(a: &RunArgs, stderr: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let loaded = spec::load(&a.spec).map_err(usage)?;
    let spec = &loaded.experiment;
    if spec.scenario != Scenario::JumpTracking {
        return Err(usage(format!("{}: track needs scenario = \"jump_tracking\"", a.spec.display())));
    }
    let stride = a.stride.or(loaded.stride).unwrap_or(1);
    if stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    if stride > spec.iterations {
        let _ = writeln!(
            stderr,
            "warning: stride {stride} exceeds {} iterations; only the initial estimate is written",
            spec.iterations
        );
    }
    let seed = a.seed.or(loaded.seed).unwrap_or(0);
    let dir = out_dir(&a.out);
    prepare_dir(&dir)?;
    let runs = run_tracking(spec, seed, stride).map_err(runtime)?;
    let multi_scale = spec.scales.len() > 1;
    let mut files = Vec::new();
    let mut notes = Vec::new();
    for r in &runs {
        let name = if multi_scale {
            format!("trajectory_{}_{}.csv", r.variant.name(), r.scale)
        } else {
            format!("trajectory_{}.csv", r.variant.name())
        };
        let mut w = output::file_writer(&dir.join(&name)).map_err(runtime)?;
        let mut header = vec!["iter".to_string()];
        header.extend((1..=spec.dim()).map(|i| format!("alpha_{i}")));
        w.write_record(&header).map_err(runtime)?;
        for (k, est) in r.trajectory.iterations.iter().zip(&r.trajectory.estimates) {
            let mut rec = vec![k.to_string()];
            rec.extend(est.iter().map(|v| num(*v)));
            w.write_record(&rec).map_err(runtime)?;
        }
        w.flush().map_err(runtime)?;
        let err_after: f64 = r
            .trajectory
            .final_estimate
            .iter()
            .zip(&r.target_after)
            .map(|(x, t)| (x - t).powi(2))
            .sum::<f64>()
            .sqrt();
        if r.diverged {
            let _ = writeln!(stderr, "warning: {} diverged at scale {}", r.variant.name(), r.scale);
            notes.push(format!("{} at scale {}: diverged", r.variant.name(), r.scale));
        } else {
            notes.push(format!(
                "{} at scale {}: final distance to target {}",
                r.variant.name(),
                r.scale,
                num(err_after)
            ));
        }
        files.push(name);
    }
    manifest("track", a, seed, &dir, files, notes)
}

fn parse_matrix(text: &str) -> Result<DMatrix<f64>, CliError> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| usage(format!("bad matrix entry {v:?}: {e}"))))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(usage(format!("matrix {text:?} is not square")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn cmd_diag(d: Diag, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut w = output::writer(stdout);
    match d {
        Diag::Bvm {
            setting,
            alpha,
            bandwidths,
            surrogate,
        } => {
            let pi = SamplingDensity::new(setting.density.into(), 1, setting.scale).map_err(usage)?;
            w.write_record(["bandwidth", "distance", "grid_error"]).map_err(runtime)?;
            for mu in bandwidths {
                let k = KernelSpec::new(setting.kernel.into(), 1, mu).map_err(usage)?;
                let r = bvm_distance(&pi, &k, alpha, surrogate.into()).map_err(runtime)?;
                w.write_record([num(mu), num(r.distance), num(r.grid_error)]).map_err(runtime)?;
            }
        }
        Diag::Liapunov { hessian, sigma } => {
            let h = parse_matrix(&hessian)?;
            let s = parse_matrix(&sigma)?;
            let r = solve_liapunov(&h, &s).map_err(runtime)?;
            w.write_record(["i", "j", "p", "residual"]).map_err(runtime)?;
            for i in 0..r.p.nrows() {
                for j in 0..r.p.ncols() {
                    w.write_record([(i + 1).to_string(), (j + 1).to_string(), num(r.p[(i, j)]), num(r.residual)])
                        .map_err(runtime)?;
                }
            }
        }
        Diag::Iscov {
            setting,
            bandwidth,
            alpha,
            minimizer,
            noise_scale,
            samples,
            seed,
        } => {
            let n = alpha.len();
            if n == 0 || minimizer.len() != n {
                return Err(usage("--alpha and --minimizer need the same nonzero length"));
            }
            let pi = SamplingDensity::new(setting.density.into(), n, setting.scale).map_err(usage)?;
            let k = KernelSpec::new(setting.kernel.into(), n, bandwidth).map_err(usage)?;
            let m = CostModel::quadratic(DMatrix::identity(n, n), minimizer).map_err(usage)?;
            let noise = NoiseModel::IidGaussian { scale: noise_scale };
            noise.validate().map_err(usage)?;
            let mut rng = RngStream::new(seed, 0);
            let r = is_asymptotic_cov(&pi, &k, &m, &noise, &alpha, samples, &mut rng).map_err(runtime)?;
            w.write_record(["i", "j", "mean_i", "sigma", "error"]).map_err(runtime)?;
            for i in 0..n {
                for j in 0..n {
                    w.write_record([
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        num(r.mean[i]),
                        num(r.sigma[(i, j)]),
                        num(r.error),
                    ])
                    .map_err(runtime)?;
                }
            }
        }
        Diag::Ode {
            setting,
            bandwidths,
            alpha,
            minimizer,
            hessian,
        } => {
            let n = alpha.len();
            if n == 0 || minimizer.len() != n {
                return Err(usage("--alpha and --minimizer need the same nonzero length"));
            }
            let h = match hessian {
                Some(t) => parse_matrix(&t)?,
                None => DMatrix::identity(n, n),
            };
            let m = CostModel::quadratic(h, minimizer).map_err(usage)?;
            let pi = SamplingDensity::new(setting.density.into(), n, setting.scale).map_err(usage)?;
            w.write_record(["bandwidth", "field", "index", "value", "error"]).map_err(runtime)?;
            for mu in bandwidths {
                let k = KernelSpec::new(setting.kernel.into(), n, mu).map_err(usage)?;
                let f = OdeField::from_model(&m, pi, k).map_err(runtime)?;
                let mut fields = vec![("h2", f.eval(FieldKind::MultiKernel, &alpha).map_err(runtime)?)];
                fields.push(("h2_closed_form", f.h2_closed_form(&alpha).map_err(runtime)?));
                if n <= 3 {
                    fields.push(("h1", f.eval(FieldKind::Classical, &alpha).map_err(runtime)?));
                }
                fields.push(("h1_limit", f.eval(FieldKind::ClassicalLimit, &alpha).map_err(runtime)?));
                for (name, v) in fields {
                    for i in 0..n {
                        w.write_record([num(mu), name.to_string(), (i + 1).to_string(), num(v.value[i]), num(v.error[i])])
                            .map_err(runtime)?;
                    }
                }
            }
        }
    }
    w.flush().map_err(runtime)
}
