use clap::{Args, Parser, Subcommand};
use crossfill::analysis::{
    calibrate_compensation, local_error_curve, sample_range, CompensationCurve, CubeSetup, Region, TestSpec,
};
use crossfill::export::write_outputs;
use crossfill::pipeline::{build_from_config, run_slice, RunConfig};
use crossfill::Error;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "crossfill", version, about = "Graded-density space-filling foam infill")]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    threads: Option<usize>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate G-code, layer SVGs and stats for a model.
    Slice(SliceArgs),
    /// Measure realized density of homogeneous cubes and write a compensation table.
    Calibrate(CalibrateArgs),
    /// Local error against the test density specifications for a range of kernel sizes.
    Accuracy(AccuracyArgs),
    /// Write the graded subdivision forest as JSON.
    DumpForest(DumpArgs),
}

#[derive(Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// STL or layer-polygon JSON model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Use a cube of this side (mm) as the model.
    #[arg(long)]
    cube_size: Option<f64>,
    /// Glob of density slice images.
    #[arg(long)]
    density_stack: Option<String>,
    /// One density everywhere instead of an image stack.
    #[arg(long)]
    homogeneous: Option<f64>,
    /// Compensation table from `calibrate`.
    #[arg(long)]
    compensation: Option<PathBuf>,
    /// Stop after the lower-bound pass.
    #[arg(long)]
    no_dither: bool,
}

#[derive(Args)]
struct SliceArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// TOML run configuration; only the print profile is used.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Cube side is 2^exponent line widths.
    #[arg(long, default_value_t = 5)]
    exponent: u32,
    #[arg(long, default_value_t = 17)]
    samples: usize,
    #[arg(long, default_value_t = 0.01)]
    min: f64,
    #[arg(long, default_value_t = 0.80)]
    max: f64,
    #[arg(short, long, default_value = "calibration")]
    output: PathBuf,
}

#[derive(Args)]
struct AccuracyArgs {
    /// TOML run configuration; the print profile and compensation table are used.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    exponent: u32,
    /// Kernel sizes in line widths.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0])]
    kernels: Vec<f64>,
    /// Voxels per axis of the generated specifications.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Stop after the lower-bound pass.
    #[arg(long)]
    no_dither: bool,
    #[arg(short, long, default_value = "accuracy")]
    output: PathBuf,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Output file.
    #[arg(short, long, default_value = "forest.json")]
    output: PathBuf,
}

enum Failure {
    Usage(String),
    Stage(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Usage(_) | Error::InvalidConfig(_) | Error::NotPowerOfTwoCube { .. } => {
                Failure::Usage(e.to_string())
            }
            e => Failure::Stage(e),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut config: RunConfig =
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(config)
}

impl Overrides {
    fn config(&self) -> Result<RunConfig, Failure> {
        let mut c = load_config(self.config.as_deref())?;
        if let Some(m) = &self.model {
            c.model = Some(m.clone());
        }
        if let Some(s) = self.cube_size {
            c.cube_size = Some(s);
        }
        if let Some(g) = &self.density_stack {
            c.density.stack = Some(g.clone());
        }
        if let Some(r) = self.homogeneous {
            c.density.homogeneous = Some(r);
        }
        if let Some(p) = &self.compensation {
            c.compensation = Some(p.clone());
        }
        if self.no_dither {
            c.dither = false;
        }
        Ok(c)
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Stage(Error::io(dir, e)))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Stage(Error::io(path, e)))
}

fn cmd_slice(args: &SliceArgs) -> Result<(), Failure> {
    let mut config = args.overrides.config()?;
    if let Some(o) = &args.output {
        config.output = o.clone();
    }
    let out = run_slice(&config)?;
    write_outputs(&config.output, &out.gcode, &out.svgs, &out.stats)?;
    println!(
        "{} layers, {:.1} mm of path, infill density {:.2}% -> {}",
        out.stats.layers,
        out.stats.path_length_mm,
        100.0 * out.stats.infill_density,
        config.output.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CalibrationStats {
    cube_side_mm: f64,
    samples: Vec<(f64, f64)>,
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    config.profile.validate()?;
    if args.exponent < 2 || !(args.min >= 0.0 && args.max > args.min && args.max <= 1.0) {
        return Err(Failure::Usage("need exponent >= 2 and 0 <= min < max <= 1".into()));
    }
    let cube = CubeSetup::new(args.exponent, config.profile);
    let samples = sample_range(args.min, args.max, args.samples);
    let curve = calibrate_compensation(&cube, &samples)?;
    write(&args.output.join("compensation.csv"), &curve.to_csv())?;
    let stats = CalibrationStats { cube_side_mm: cube.side(), samples: curve.samples.clone() };
    write(&args.output.join("stats.json"), &(serde_json::to_string_pretty(&stats).map_err(Error::from)? + "\n"))?;
    for (x, y) in &curve.samples {
        println!("{x:.4} -> {y:.4}");
    }
    Ok(())
}

#[derive(Serialize)]
struct AccuracyStats {
    cube_side_mm: f64,
    curves: Vec<(String, Vec<(f64, f64)>)>,
}

fn cmd_accuracy(args: &AccuracyArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    config.profile.validate()?;
    let compensation = config.compensation.as_deref().map(CompensationCurve::load_csv).transpose()?;
    let mut cube = CubeSetup::new(args.exponent, config.profile);
    cube.dither = !args.no_dither;
    let side = cube.side();
    let w = config.profile.line_width;
    let kernels: Vec<f64> = args.kernels.iter().map(|k| k * w).collect();
    let specs = [
        TestSpec::Homogeneous(0.2),
        TestSpec::Homogeneous(0.4),
        TestSpec::Gradient,
        TestSpec::ContrastPlane,
        TestSpec::SphereShell,
    ];
    let mut csv = String::from("spec,kernel_w,kernel_mm,mean_abs_error\n");
    let mut stats = AccuracyStats { cube_side_mm: side, curves: Vec::new() };
    for spec in specs {
        let field = spec.field(side, args.resolution)?;
        let request = match &compensation {
            Some(c) => field.map(|v| c.inverse(v)),
            None => field.clone(),
        };
        let (_, plans) = cube.run(&request)?;
        let curve = local_error_curve(&field, &plans, &Region::cube([0.0; 3], side), &kernels, &config.profile);
        for (k, e) in &curve {
            let _ = writeln!(csv, "{},{},{k},{e}", spec.name(), k / w);
            println!("{:>16} kernel {:>6.2}w  error {:.4}", spec.name(), k / w, e);
        }
        stats.curves.push((spec.name(), curve));
    }
    write(&args.output.join("accuracy.csv"), &csv)?;
    write(&args.output.join("stats.json"), &(serde_json::to_string_pretty(&stats).map_err(Error::from)? + "\n"))?;
    Ok(())
}

fn cmd_dump_forest(args: &DumpArgs) -> Result<(), Failure> {
    let config = args.overrides.config()?;
    let (_, structure) = build_from_config(&config)?;
    let json = serde_json::to_string(&structure.forest.dump()).map_err(Error::from)?;
    write(&args.output, &json)?;
    println!("{} leaves -> {}", structure.forest.leaf_count(), args.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Slice(a) => cmd_slice(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Accuracy(a) => cmd_accuracy(a),
        Command::DumpForest(a) => cmd_dump_forest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
