use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use poselift::budget::TaskMode;
use poselift::harness::{self, DataSource, ExperimentSpec, DEFAULT_TEST_FRACTION};
use poselift::metrics::{efficiency, DEFAULT_DELTA_MM, DEFAULT_K};
use poselift::synth::{self, parse_action, GenConfig};
use poselift::trainer::TrainConfig;

/// Train and compare pooled and per-action 3D pose lifting networks.
#[derive(Parser)]
#[command(name = "poselift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and print per-action frame totals.
    GenData(GenArgs),
    /// Train both schedules under an equalized budget and write reports.
    Compare(CompareArgs),
    /// Regulated errors and time-precision rates of two runs.
    TprReport(TprArgs),
    /// First epoch each curve settles within delta of its final error.
    Converge(ConvergeArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Number of actions.
    #[arg(long, default_value_t = 15)]
    actions: usize,
    #[arg(long, default_value_t = 4)]
    subjects: usize,
    /// Clips per action.
    #[arg(long, default_value_t = 4)]
    clips: usize,
    /// Frames per clip.
    #[arg(long, default_value_t = 500)]
    clip_len: usize,
    /// Gaussian keypoint noise in pixels.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
}

impl DataArgs {
    fn config(&self, seed: u64) -> GenConfig {
        GenConfig {
            n_ac: self.actions,
            subjects: self.subjects,
            clips_per_action: self.clips,
            frames_per_clip: self.clip_len,
            noise_px: self.noise,
            seed,
            ..GenConfig::default()
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output dataset file.
    #[arg(short, long)]
    out: PathBuf,
    /// Also export one CSV row per frame.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Common,
    ActionOriented,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_enum, default_value = "common")]
    mode: Mode,
    /// Receptive field in frames (a power of 3).
    #[arg(short = 'F', long, default_value_t = 27)]
    frames: usize,
    /// Unit epochs per round.
    #[arg(long, default_value_t = 15)]
    ue: usize,
    /// Total training windows N (default: every action's full share).
    #[arg(short = 'N', long)]
    budget: Option<usize>,
    /// Target action (label such as Eat, or index) for the action-oriented task.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Existing dataset file; a synthetic one is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    gen: DataArgs,
    #[arg(short, long, default_value = "compare-out")]
    out: PathBuf,
    /// Augmenting constant of the regulated error.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: f64,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    test_fraction: f64,
    #[arg(long, default_value_t = TrainConfig::default().channels)]
    channels: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().lr_decay)]
    lr_decay: f64,
    /// Train rounds concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct TprArgs {
    /// Output directory of a previous `compare`.
    #[arg(long, conflicts_with_all = ["curves", "half"])]
    run: Option<PathBuf>,
    /// Wide curves CSV holding the MPJPE curve of each model.
    #[arg(long, requires_all = ["columns", "seconds"])]
    curves: Option<PathBuf>,
    /// Wide CSV of velocity curves with the same column names.
    #[arg(long, requires = "curves")]
    vel_curves: Option<PathBuf>,
    /// The two column names to compare.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    /// Half-way MPJPE of both models.
    #[arg(long, value_delimiter = ',', requires_all = ["final_", "seconds"])]
    half: Vec<f64>,
    /// Final MPJPE of both models.
    #[arg(id = "final_", long = "final", value_delimiter = ',')]
    final_: Vec<f64>,
    #[arg(long, value_delimiter = ',', requires = "vel_final")]
    vel_half: Vec<f64>,
    #[arg(long, value_delimiter = ',', requires = "vel_half")]
    vel_final: Vec<f64>,
    /// Training seconds of both models.
    #[arg(long, value_delimiter = ',')]
    seconds: Vec<f64>,
    /// Model names for explicit values.
    #[arg(long, value_delimiter = ',', default_values = ["model-1", "model-2"])]
    names: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: f64,
}

#[derive(Args)]
struct ConvergeArgs {
    /// Wide CSV: `epoch` column followed by one column per series.
    #[arg(long)]
    curves: PathBuf,
    /// Tolerance in mm.
    #[arg(long, default_value_t = DEFAULT_DELTA_MM)]
    delta: f64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Compare(a) => compare(a),
        Command::TprReport(a) => tpr_report(a),
        Command::Converge(a) => converge(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn gen_data(a: GenArgs) -> Result<()> {
    let dataset = synth::gen_dataset(&a.data.config(a.seed))?;
    let file = File::create(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    synth::write_dataset(&dataset, &mut w)?;
    w.flush().with_context(|| format!("cannot write {}", a.out.display()))?;
    if let Some(path) = &a.csv {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        synth::write_dataset_csv(&dataset, BufWriter::new(file))?;
    }
    print!("{}", harness::frame_totals_report(&dataset));
    println!("wrote {} clips to {}", dataset.clips.len(), a.out.display());
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let mode = match a.mode {
        Mode::Common => TaskMode::Common,
        Mode::ActionOriented => TaskMode::ActionOriented,
    };
    let n_ac = a.gen.actions;
    let data = match &a.data {
        Some(p) => DataSource::File(p.clone()),
        None => DataSource::Generate(a.gen.config(a.seed)),
    };
    let target = match &a.target {
        Some(name) => {
            let n = match &a.data {
                Some(p) => synth::read_dataset(File::open(p).with_context(|| format!("cannot open {}", p.display()))?)?.n_ac,
                None => n_ac,
            };
            Some(parse_action(name, n)?)
        }
        None => None,
    };
    let spec = ExperimentSpec {
        mode,
        frames: a.frames,
        unit_epochs: a.ue,
        budget: a.budget,
        target,
        seed: a.seed,
        data,
        out_dir: a.out.clone(),
        k: a.k,
        test_fraction: a.test_fraction,
        train: TrainConfig {
            batch_size: a.batch,
            lr: a.lr,
            lr_decay: a.lr_decay,
            unit_epochs: a.ue,
            channels: a.channels,
            seed: a.seed,
            parallel: a.parallel,
        },
    };
    let mut out = io::stdout().lock();
    let outcome = harness::run_compare(&spec, &mut out)?;
    writeln!(out, "\n{}", outcome.report_md)?;
    for f in &outcome.files {
        writeln!(out, "wrote {}", f.display())?;
    }
    Ok(())
}

fn pair(v: &[f64], flag: &str) -> Result<[f64; 2]> {
    match v {
        [a, b] => Ok([*a, *b]),
        _ => bail!("--{flag} needs two comma-separated values"),
    }
}

fn tpr_report(a: TprArgs) -> Result<()> {
    let summary = if let Some(dir) = &a.run {
        let path = dir.join("summary.csv");
        let file = File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
        let mut inputs = harness::read_summary(file)?;
        if inputs.len() != 2 {
            bail!("{} holds {} models; expected 2", path.display(), inputs.len());
        }
        let b = inputs.pop().expect("two rows");
        efficiency(inputs.pop().expect("two rows"), b, a.k)?
    } else if let Some(path) = &a.curves {
        let read = |p: &PathBuf| -> Result<Vec<(String, poselift::metrics::ErrorCurve)>> {
            let f = File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
            harness::read_wide_curves(f).with_context(|| format!("in {}", p.display()))
        };
        let pick = |cols: &[(String, poselift::metrics::ErrorCurve)], name: &str| {
            cols.iter()
                .find(|c| c.0 == name)
                .map(|c| c.1.clone())
                .with_context(|| format!("no column named {name}"))
        };
        let [c0, c1] = match a.columns.as_slice() {
            [x, y] => [x, y],
            _ => bail!("--columns needs two comma-separated names"),
        };
        let cols = read(path)?;
        let m = [pick(&cols, c0)?, pick(&cols, c1)?];
        let v = match &a.vel_curves {
            Some(p) => {
                let vc = read(p)?;
                Some([pick(&vc, c0)?, pick(&vc, c1)?])
            }
            None => None,
        };
        harness::efficiency_from_curves(
            [c0, c1],
            [&m[0], &m[1]],
            v.as_ref().map(|v| [&v[0], &v[1]]),
            pair(&a.seconds, "seconds")?,
            a.k,
        )?
    } else if !a.half.is_empty() {
        let half = pair(&a.half, "half")?;
        let fin = pair(&a.final_, "final")?;
        let secs = pair(&a.seconds, "seconds")?;
        let (vh, vf) = if a.vel_half.is_empty() {
            ([f64::NAN; 2], [f64::NAN; 2])
        } else {
            (pair(&a.vel_half, "vel-half")?, pair(&a.vel_final, "vel-final")?)
        };
        let input = |i: usize| poselift::metrics::EfficiencyInput {
            model: a.names[i].clone(),
            mpjpe_half: half[i],
            mpjpe_final: fin[i],
            vmpjpe_half: vh[i],
            vmpjpe_final: vf[i],
            seconds: secs[i],
        };
        efficiency(input(0), input(1), a.k)?
    } else {
        bail!("give --run, --curves, or explicit --half/--final/--seconds values");
    };
    print!("{}", harness::render_tpr_block(&summary));
    Ok(())
}

fn converge(a: ConvergeArgs) -> Result<()> {
    let text = fs::read(&a.curves).with_context(|| format!("cannot open {}", a.curves.display()))?;
    let cols = harness::read_wide_curves(text.as_slice()).with_context(|| format!("in {}", a.curves.display()))?;
    for (name, c) in harness::converge(&cols, a.delta)? {
        println!("{name}: {c}");
    }
    Ok(())
}
