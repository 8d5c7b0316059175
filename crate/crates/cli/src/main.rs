use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::info;

use hullspace::extrapolate::{steady_value, TimeSeries, DEFAULT_WINDOW};
use hullspace::ffd::{hull_lattice, GeoParams, LatticeProfile};
use hullspace::geometry::{read_stl, write_stl, TriMesh};
use hullspace::pipeline::{
    evaluate_oracle, run_study, sample_designs, subspace_stage, DesignSpace, Oracle, OracleSpec, StudyFile,
    SurfaceExport,
};
use hullspace::subspace::{ActiveSubspace, IntervalKind, SampleSet};
use hullspace::surface::{error_matrix, relative_rmse, sufficient_summary_csv, ErrorMatrixConfig, GradientSource, PolySurface};
use hullspace::{Error, Result};

/// Hull shape parameterization, active subspaces and response surfaces.
#[derive(Debug, Parser)]
#[command(name = "hullspace", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Morph an STL hull with the lattice profile.
    Deform(DeformArgs),
    /// Draw uniform random designs.
    Sample(SampleArgs),
    /// Evaluate an oracle on a design file.
    Evaluate(EvaluateArgs),
    /// Extrapolate the steady value of a decaying oscillating time series.
    FitResistance(FitArgs),
    /// Estimate the active subspace of a dataset with bootstrap intervals.
    Subspace(SubspaceArgs),
    /// Fit a polynomial response surface over the active variables.
    Surface(SurfaceArgs),
    /// Test-error matrix over active dimensions and polynomial degrees.
    Heatmap(HeatmapArgs),
    /// Run the full study.
    Study(StudyArgs),
    /// Export sufficient-summary coordinates.
    Ssp(SspArgs),
}

#[derive(Debug, Args)]
struct DeformArgs {
    /// Input STL (ASCII or binary).
    #[arg(long, short)]
    input: PathBuf,
    /// Output STL.
    #[arg(long, short)]
    output: PathBuf,
    /// Lattice profile TOML; the bundled profile when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Geometric parameter values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    params: Vec<f64>,
    /// Write ASCII instead of binary STL.
    #[arg(long)]
    ascii: bool,
}

#[derive(Debug, Args)]
struct SpaceArg {
    /// Design space TOML; the default eight-parameter hull space when omitted.
    #[arg(long)]
    space: Option<PathBuf>,
}

impl SpaceArg {
    fn load(&self) -> Result<DesignSpace> {
        match &self.space {
            Some(p) => DesignSpace::load(p),
            None => Ok(DesignSpace::default()),
        }
    }
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, short = 'n', default_value_t = 130)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Design CSV to write (a bounds sidecar is written next to it).
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    space: SpaceArg,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Design CSV from `sample`.
    #[arg(long)]
    designs: PathBuf,
    /// Oracle TOML; the hull resistance surrogate when omitted.
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Dataset CSV to write.
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    space: SpaceArg,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Time-series CSV with columns `t,value`.
    #[arg(long, short)]
    input: PathBuf,
    /// Smoothing window (samples).
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Write the fitted envelopes as TOML.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    /// Percentile intervals instead of min/max.
    #[arg(long)]
    percentile: bool,
}

impl BootstrapArgs {
    fn interval(&self) -> IntervalKind {
        if self.percentile {
            IntervalKind::Percentile
        } else {
            IntervalKind::MinMax
        }
    }
}

#[derive(Debug, Args)]
struct SubspaceArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Nearest neighbors per local linear fit.
    #[arg(long, short, default_value_t = 14)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
    /// Directory for `subspace.toml` and `bootstrap.csv`.
    #[arg(long, short)]
    output_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SurfaceArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Subspace TOML from `subspace` or `study`.
    #[arg(long)]
    subspace: PathBuf,
    /// Active dimension; the one stored in the subspace file when omitted.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4])]
    degrees: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    repetitions: usize,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, short, default_value_t = 14)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `error_matrix.csv` and `error_matrix_long.csv`.
    #[arg(long, short)]
    output_dir: PathBuf,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Study TOML; every setting has a default.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SspArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    subspace: PathBuf,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, short)]
    output: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// The default space when its dimension matches the designs, otherwise a
/// purely analytic space over the designs' own bounds.
fn space_for(designs: &SampleSet<f64>, arg: &SpaceArg) -> Result<DesignSpace> {
    if arg.space.is_some() {
        return arg.load();
    }
    let default = DesignSpace::default();
    let bounds: Vec<[f64; 2]> = designs.bounds().iter().map(|&(l, u)| [l, u]).collect();
    if bounds.len() == default.dim() {
        return Ok(DesignSpace { bounds, ..default });
    }
    Ok(DesignSpace {
        names: designs.metadata().names,
        bounds,
        geometric: vec![],
    })
}

fn deform(a: &DeformArgs) -> Result<()> {
    let profile = match &a.profile {
        Some(p) => LatticeProfile::load(p)?,
        None => LatticeProfile::default(),
    };
    let mesh: TriMesh<f64> = read_stl(&a.input)?;
    let lattice = hull_lattice(&GeoParams::new(a.params.clone()), &profile)?;
    write_stl(&lattice.deform_mesh(&mesh), &a.output, !a.ascii)?;
    info!("wrote {}", a.output.display());
    Ok(())
}

fn sample(a: &SampleArgs) -> Result<()> {
    let space = a.space.load()?;
    sample_designs(&space, a.count, a.seed)?.save(&a.output)?;
    println!("wrote {} designs to {}", a.count, a.output.display());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let designs: SampleSet<f64> = SampleSet::load(&a.designs)?;
    let space = space_for(&designs, &a.space)?;
    let (spec, base) = match &a.oracle {
        Some(p) => (OracleSpec::load(p)?, p.parent().map(Path::to_path_buf)),
        None => (OracleSpec::default(), None),
    };
    let oracle = Oracle::new(&spec, &space, base.as_deref())?;
    let eval = evaluate_oracle(&oracle, &designs)?;
    eval.samples.save(&a.output)?;
    println!("evaluated {} designs, {} failed", eval.samples.len(), eval.failures.len());
    if !eval.failures.is_empty() {
        let manifest = a.output.with_extension("failures.csv");
        write_text(&manifest, &eval.failures_csv())?;
        println!("failure manifest: {}", manifest.display());
    }
    Ok(())
}

fn fit_resistance(a: &FitArgs) -> Result<()> {
    let series: TimeSeries<f64> = TimeSeries::load(&a.input)?;
    let s = steady_value(&series, a.window)?;
    println!("{:.10e}", s.value);
    if let Some(out) = &a.output {
        write_text(out, &s.to_toml())?;
    }
    Ok(())
}

fn subspace(a: &SubspaceArgs) -> Result<()> {
    let data: SampleSet<f64> = SampleSet::load(&a.dataset)?;
    let (sub, boot) = subspace_stage(&data, a.k, a.bootstrap.replicates, a.seed, a.bootstrap.interval())?;
    create_dir(&a.output_dir)?;
    write_text(&a.output_dir.join("subspace.toml"), &sub.to_toml())?;
    write_text(&a.output_dir.join("bootstrap.csv"), &boot.to_csv())?;
    for (i, l) in sub.eigenvalues.iter().enumerate() {
        println!("lambda_{} = {:.6e}  [{:.6e}, {:.6e}]", i + 1, l, boot.lower[i], boot.upper[i]);
    }
    println!("suggested dimension: {}", sub.active_dim.unwrap_or(1));
    Ok(())
}

fn load_subspace(path: &Path, dim: Option<usize>) -> Result<ActiveSubspace<f64>> {
    let s = ActiveSubspace::from_toml(&read_text(path)?)?;
    match dim.or(s.active_dim) {
        Some(k) => s.partition(k),
        None => Err(Error::InvalidInput("subspace file has no active dimension; pass --dim".into())),
    }
}

fn surface(a: &SurfaceArgs) -> Result<()> {
    let data: SampleSet<f64> = SampleSet::load(&a.dataset)?;
    let sub = load_subspace(&a.subspace, a.dim)?;
    let y = sub.active_coordinates(data.normalize().inputs())?;
    let f = data.outputs()?;
    let fit = PolySurface::fit(&y, f, a.degree)?;
    let err = relative_rmse(&fit, &y, f)?;
    write_text(&a.output, &SurfaceExport::new(&fit, err).to_toml())?;
    println!("training relative RMSE: {err:.6e}");
    Ok(())
}

fn heatmap(a: &HeatmapArgs) -> Result<()> {
    let data: SampleSet<f64> = SampleSet::load(&a.dataset)?;
    let em = error_matrix(
        &data,
        &ErrorMatrixConfig {
            dims: a.dims.clone(),
            degrees: a.degrees.clone(),
            repetitions: a.repetitions,
            split: a.split,
            seed: a.seed,
            gradients: GradientSource::LocalLinear { k: a.k },
        },
    )?;
    create_dir(&a.output_dir)?;
    write_text(&a.output_dir.join("error_matrix.csv"), &em.to_csv())?;
    write_text(&a.output_dir.join("error_matrix_long.csv"), &em.to_long_csv())?;
    print!("{}", em.to_csv());
    Ok(())
}

fn study(a: &StudyArgs) -> Result<()> {
    let (file, base) = match &a.config {
        Some(p) => (StudyFile::load(p)?, p.parent().map(Path::to_path_buf)),
        None => (StudyFile::default(), None),
    };
    let mut config = file.config;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let space = file.design_space.unwrap_or_default();
    let oracle = Oracle::new(&file.oracle.unwrap_or_default(), &space, base.as_deref())?;
    let report = run_study(&config, &space, &oracle, &a.output_dir)?;
    print!("{}", read_text(&a.output_dir.join("report.txt"))?);
    info!("study finished with active dimension {}", report.summary.active_dim);
    Ok(())
}

fn ssp(a: &SspArgs) -> Result<()> {
    let data: SampleSet<f64> = SampleSet::load(&a.dataset)?;
    let sub = load_subspace(&a.subspace, Some(a.dim))?;
    write_text(&a.output, &sufficient_summary_csv(&sub, &data.normalize())?)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Deform(a) => deform(a),
        Command::Sample(a) => sample(a),
        Command::Evaluate(a) => evaluate(a),
        Command::FitResistance(a) => fit_resistance(a),
        Command::Subspace(a) => subspace(a),
        Command::Surface(a) => surface(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Study(a) => study(a),
        Command::Ssp(a) => ssp(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
