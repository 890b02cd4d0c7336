//! Experiment orchestration: both schedules under an equalized budget, the
//! efficiency comparison, and the report files.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::info;

use crate::budget::{build_plan, compare_budgets, Schedule, TaskMode, TrainPlan};
use crate::error::{invalid, Error, Result};
use crate::liftnet::{self, LiftNetSpec, MAX_BLOCKS};
use crate::metrics::{
    convergence_epoch, efficiency, Convergence, EfficiencyInput, EfficiencySummary, ErrorCurve, ModelReport,
};
use crate::synth::{action_label, gen_dataset, read_dataset, split, Dataset, GenConfig};
use crate::trainer::{available_windows, run_plan, Corpus, RunRecord, TrainConfig};

pub const POOLED: &str = "pooled";
pub const PER_ACTION: &str = "per-action";
pub const DEFAULT_TEST_FRACTION: f64 = 0.25;

/// Number of dilation blocks for a receptive field of `frames`.
pub fn blocks_for_frames(frames: usize) -> Result<usize> {
    LiftNetSpec::blocks_for_field(frames).ok_or_else(|| {
        let valid: Vec<String> = (0..=MAX_BLOCKS).map(|b| 3usize.pow(b as u32).to_string()).collect();
        invalid(format!(
            "F = {frames} is not a supported power of 3; valid values: {}",
            valid.join(", ")
        ))
    })
}

#[derive(Debug, Clone)]
pub enum DataSource {
    File(PathBuf),
    Generate(GenConfig),
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub mode: TaskMode,
    pub frames: usize,
    pub unit_epochs: usize,
    /// Total training windows `N`; derived from the data when absent.
    pub budget: Option<usize>,
    pub target: Option<usize>,
    pub seed: u64,
    pub data: DataSource,
    pub out_dir: PathBuf,
    pub k: f64,
    pub test_fraction: f64,
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        blocks_for_frames(self.frames)?;
        if self.unit_epochs == 0 {
            return Err(invalid("UE must be at least 1"));
        }
        if self.mode == TaskMode::ActionOriented && self.target.is_none() {
            return Err(invalid("action-oriented mode needs --target"));
        }
        if !(self.k > 0.0) {
            return Err(invalid("k must be positive"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid("test fraction must lie strictly between 0 and 1"));
        }
        self.train.validate()
    }

    /// Resolved settings, one `key = value` per line.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "frames = {}", self.frames);
        let _ = writeln!(s, "unit_epochs = {}", self.unit_epochs);
        let _ = writeln!(s, "budget = {}", self.budget.map_or("auto".into(), |n| n.to_string()));
        let _ = writeln!(s, "target = {}", self.target.map_or("none".into(), action_label));
        let _ = writeln!(s, "seed = {}", self.seed);
        match &self.data {
            DataSource::File(p) => {
                let _ = writeln!(s, "data = file {}", p.display());
            }
            DataSource::Generate(g) => {
                let _ = writeln!(
                    s,
                    "data = generated n_ac={} subjects={} clips_per_action={} frames_per_clip={} noise_px={} fps={} seed={}",
                    g.n_ac, g.subjects, g.clips_per_action, g.frames_per_clip, g.noise_px, g.fps, g.seed
                );
            }
        }
        let _ = writeln!(s, "test_fraction = {}", self.test_fraction);
        let _ = writeln!(s, "k = {}", self.k);
        let t = &self.train;
        let _ = writeln!(
            s,
            "train = channels {} batch {} lr {} lr_decay {} parallel {}",
            t.channels, t.batch_size, t.lr, t.lr_decay, t.parallel
        );
        s
    }
}

/// Frames per clip that give the target action at least `budget` training
/// windows once the split has held out its test clips.
pub fn frames_for_budget(cfg: &GenConfig, budget: usize, frames: usize, test_fraction: f64) -> usize {
    let n = cfg.clips_per_action;
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let train_clips = n.saturating_sub(n_test).max(1);
    let need = budget.div_ceil(train_clips) + frames - 1;
    cfg.frames_per_clip.max(need)
}

/// Spec with generated clips lengthened so an action-oriented target budget
/// is coverable.
pub fn resolve(spec: &ExperimentSpec) -> ExperimentSpec {
    let mut out = spec.clone();
    if let (DataSource::Generate(cfg), TaskMode::ActionOriented, Some(n)) = (&mut out.data, spec.mode, spec.budget) {
        let sized = frames_for_budget(cfg, n, spec.frames, spec.test_fraction);
        if sized > cfg.frames_per_clip {
            info!("generating {sized} frames per clip to cover the target budget");
            cfg.frames_per_clip = sized;
        }
    }
    out
}

fn load_dataset(spec: &ExperimentSpec) -> Result<Dataset> {
    match &spec.data {
        DataSource::File(path) => read_dataset(File::open(path).map_err(|e| with_path(e, path))?),
        DataSource::Generate(cfg) => gen_dataset(cfg),
    }
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Everything produced by one comparison.
#[derive(Debug)]
pub struct CompareOutcome {
    pub plans: [TrainPlan; 2],
    pub runs: [RunRecord; 2],
    pub reports: [ModelReport; 2],
    pub graded: Vec<usize>,
    pub efficiency: EfficiencySummary,
    pub convergence: Vec<(String, Convergence)>,
    pub report_md: String,
    pub files: Vec<PathBuf>,
}

/// Run both schedules under the equalized budget and write every artifact
/// into the output directory. Progress and manifests go to `log`.
pub fn run_compare(spec: &ExperimentSpec, log: &mut dyn Write) -> Result<CompareOutcome> {
    spec.validate()?;
    let spec = &resolve(spec);
    let dataset = load_dataset(spec)?;
    let n_ac = dataset.n_ac;
    if let Some(t) = spec.target {
        if t >= n_ac {
            return Err(invalid(format!("target action {t} is outside the dataset's {n_ac} actions")));
        }
    }
    let (train, test) = split(&dataset, spec.test_fraction, spec.seed)?;
    let available = available_windows(&train, spec.frames);
    let budget = match (spec.budget, spec.mode) {
        (Some(n), _) => n,
        (None, TaskMode::Common) => n_ac * available.iter().copied().min().unwrap_or(0),
        (None, TaskMode::ActionOriented) => available[spec.target.expect("validated")],
    };
    let (pooled_budget, action_budget) = compare_budgets(spec.mode, budget, n_ac, spec.target)?;
    let pooled_plan = build_plan(&pooled_budget, Schedule::Pooled, spec.unit_epochs)?;
    let action_plan = build_plan(&action_budget, Schedule::PerAction, spec.unit_epochs)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "# experiment\n{}", spec.describe());
    let _ = writeln!(manifest, "# budget N = {budget} training windows, n_ac = {n_ac}");
    let totals: Vec<String> = available
        .iter()
        .enumerate()
        .map(|(a, w)| format!("{}:{w}", action_label(a)))
        .collect();
    let _ = writeln!(manifest, "# available windows {}", totals.join(" "));
    manifest.push_str(&pooled_plan.manifest());
    manifest.push_str(&action_plan.manifest());
    log.write_all(manifest.as_bytes())?;
    log.flush()?;
    pooled_plan.check_available(&available)?;
    action_plan.check_available(&available)?;

    fs::create_dir_all(&spec.out_dir).map_err(|e| with_path(e, &spec.out_dir))?;
    let corpus = Corpus { train: &train, test: &test };
    let config = TrainConfig {
        unit_epochs: spec.unit_epochs,
        seed: spec.seed,
        ..spec.train.clone()
    };
    writeln!(log, "training {POOLED} schedule")?;
    let pooled = run_plan(&pooled_plan, spec.frames, &corpus, &config)?;
    writeln!(log, "  {POOLED}: {:.1}s", pooled.total_seconds)?;
    writeln!(log, "training {PER_ACTION} schedule")?;
    let per_action = run_plan(&action_plan, spec.frames, &corpus, &config)?;
    writeln!(log, "  {PER_ACTION}: {:.1}s", per_action.total_seconds)?;

    let graded: Vec<usize> = match spec.mode {
        TaskMode::Common => (0..n_ac).collect(),
        TaskMode::ActionOriented => vec![spec.target.expect("validated")],
    };
    let restrict = |mut r: ModelReport| {
        r.actions.retain(|m| graded.contains(&m.action));
        r
    };
    let reports = [restrict(pooled.report(POOLED)), restrict(per_action.report(PER_ACTION))];

    let inputs = [(&pooled, POOLED), (&per_action, PER_ACTION)]
        .map(|(run, name)| efficiency_input(run, name, &graded));
    let [a, b] = inputs;
    let efficiency = efficiency(a?, b?, spec.k)?;

    let wide = wide_columns(&pooled, &per_action, &graded)?;
    let convergence = wide
        .iter()
        .map(|(name, c)| Ok((name.clone(), convergence_epoch(c, crate::metrics::DEFAULT_DELTA_MM)?)))
        .collect::<Result<Vec<_>>>()?;

    let report_md = render_report(spec, &reports, &graded, &efficiency, &convergence, &pooled_plan);
    let out = &spec.out_dir;
    let mut files = Vec::new();
    let mut put = |name: &str, body: &[u8]| -> Result<()> {
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| with_path(e, &path))?;
        files.push(path);
        Ok(())
    };
    put("manifest.txt", manifest.as_bytes())?;
    put("results.csv", &results_csv(&reports, spec.mode, spec.frames, spec.unit_epochs)?)?;
    put("summary.csv", &summary_csv(&efficiency)?)?;
    put("curves.csv", &curves_csv(&[(POOLED, &pooled), (PER_ACTION, &per_action)])?)?;
    put("curves_wide.csv", &wide_csv(&wide)?)?;
    put("report.md", report_md.as_bytes())?;
    for (name, run) in [(POOLED, &pooled), (PER_ACTION, &per_action)] {
        for r in &run.rounds {
            let file = if run.schedule == Schedule::Pooled {
                format!("{name}.plm")
            } else {
                let a = r.round.actions[0].0;
                format!("{name}-{a:02}-{}.plm", slug(&action_label(a)))
            };
            let path = out.join(file);
            let w = BufWriter::new(File::create(&path).map_err(|e| with_path(e, &path))?);
            liftnet::save_checkpoint(&r.params, w)?;
            files.push(path);
        }
    }
    Ok(CompareOutcome {
        plans: [pooled_plan, action_plan],
        runs: [pooled, per_action],
        reports,
        graded,
        efficiency,
        convergence,
        report_md,
        files,
    })
}

fn slug(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

fn efficiency_input(run: &RunRecord, name: &str, graded: &[usize]) -> Result<EfficiencyInput> {
    let (m, v) = run.mean_curves(graded)?;
    let half = |c: &ErrorCurve| c.at_half().map(|p| p.1).unwrap_or(f64::NAN);
    let last = |c: &ErrorCurve| c.last().map(|p| p.1).unwrap_or(f64::NAN);
    Ok(EfficiencyInput {
        model: name.to_string(),
        mpjpe_half: half(&m),
        mpjpe_final: last(&m),
        vmpjpe_half: half(&v),
        vmpjpe_final: last(&v),
        seconds: run.total_seconds,
    })
}

/// Curves in the layout read by [`read_wide_curves`]: averages first, then
/// one column per graded action and schedule.
fn wide_columns(pooled: &RunRecord, per_action: &RunRecord, graded: &[usize]) -> Result<Vec<(String, ErrorCurve)>> {
    let mut cols = vec![
        (format!("{POOLED}:Avg"), pooled.mean_curves(graded)?.0),
        (format!("{PER_ACTION}:Avg"), per_action.mean_curves(graded)?.0),
    ];
    for &a in graded {
        for (name, run) in [(POOLED, pooled), (PER_ACTION, per_action)] {
            let c = run
                .curve_for(a)
                .ok_or_else(|| invalid(format!("{name} has no curve for {}", action_label(a))))?;
            cols.push((format!("{name}:{}", action_label(a)), c.mpjpe.clone()));
        }
    }
    Ok(cols)
}

fn csv_bytes(rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    rows(&mut w).map_err(crate::synth::csv_err)?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

/// Per-action rows plus an `Avg` row for each model.
pub fn results_csv(reports: &[ModelReport], mode: TaskMode, frames: usize, ue: usize) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["model", "mode", "F", "UE", "action", "mpjpe_mm", "vmpjpe_mm", "train_seconds"])?;
        for r in reports {
            let secs = format!("{:.0}", r.train_seconds);
            let mut row = |action: String, m: f64, v: f64| {
                w.write_record([
                    r.model.clone(),
                    mode.to_string(),
                    frames.to_string(),
                    ue.to_string(),
                    action,
                    f4(m),
                    f4(v),
                    secs.clone(),
                ])
            };
            for a in &r.actions {
                row(action_label(a.action), a.mpjpe_mm, a.vmpjpe_mm)?;
            }
            row("Avg".into(), r.avg_mpjpe(), r.avg_vmpjpe())?;
        }
        Ok(())
    })
}

pub fn summary_csv(s: &EfficiencySummary) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([
            "model",
            "mpjpe_half",
            "mpjpe_final",
            "vmpjpe_half",
            "vmpjpe_final",
            "seconds",
            "k",
            "eps0_mpjpe",
            "eps0_vmpjpe",
            "tpr_mpjpe",
            "tpr_vmpjpe",
        ])?;
        for m in &s.models {
            let i = &m.input;
            w.write_record([
                i.model.clone(),
                f4(i.mpjpe_half),
                f4(i.mpjpe_final),
                f4(i.vmpjpe_half),
                f4(i.vmpjpe_final),
                format!("{:.3}", i.seconds),
                s.k.to_string(),
                f4(s.eps0_mpjpe),
                f4(s.eps0_vmpjpe),
                format!("{:e}", m.tpr_mpjpe),
                format!("{:e}", m.tpr_vmpjpe),
            ])?;
        }
        Ok(())
    })
}

/// Efficiency inputs stored in a `summary.csv`.
pub fn read_summary<R: Read>(r: R) -> Result<Vec<EfficiencyInput>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers().map_err(crate::synth::csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("summary is missing column {name}")))
    };
    let idx = [
        col("model")?,
        col("mpjpe_half")?,
        col("mpjpe_final")?,
        col("vmpjpe_half")?,
        col("vmpjpe_final")?,
        col("seconds")?,
    ];
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(crate::synth::csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            let cell = rec.get(idx[i]).unwrap_or("");
            cell.parse()
                .map_err(|_| Error::Format(format!("line {line}: bad number {cell:?}")))
        };
        out.push(EfficiencyInput {
            model: rec.get(idx[0]).unwrap_or("").to_string(),
            mpjpe_half: num(1)?,
            mpjpe_final: num(2)?,
            vmpjpe_half: num(3)?,
            vmpjpe_final: num(4)?,
            seconds: num(5)?,
        });
    }
    Ok(out)
}

pub fn curves_csv(runs: &[(&str, &RunRecord)]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["schedule", "round", "action", "epoch", "mpjpe_mm", "vmpjpe_mm"])?;
        for (name, run) in runs {
            for r in &run.rounds {
                for c in &r.curves {
                    for (&(e, m), &(_, v)) in c.mpjpe.points().iter().zip(c.vmpjpe.points()) {
                        w.write_record([
                            name.to_string(),
                            (r.index + 1).to_string(),
                            action_label(c.action),
                            e.to_string(),
                            f4(m),
                            f4(v),
                        ])?;
                    }
                }
            }
        }
        Ok(())
    })
}

/// Curves as one `epoch` column plus one column per series; a series without
/// an observation at some epoch leaves that cell empty.
pub fn wide_csv(columns: &[(String, ErrorCurve)]) -> Result<Vec<u8>> {
    let mut epochs: Vec<usize> = columns.iter().flat_map(|(_, c)| c.epochs()).collect();
    epochs.sort_unstable();
    epochs.dedup();
    csv_bytes(|w| {
        let mut header = vec!["epoch".to_string()];
        header.extend(columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        for e in epochs {
            let mut row = vec![e.to_string()];
            for (_, c) in columns {
                row.push(
                    c.points()
                        .iter()
                        .find(|p| p.0 == e)
                        .map_or(String::new(), |p| f4(p.1)),
                );
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// Parse a wide curves table. Errors name the offending line.
pub fn read_wide_curves<R: Read>(r: R) -> Result<Vec<(String, ErrorCurve)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("line 1: {e}")))?
        .clone();
    if headers.get(0) != Some("epoch") || headers.len() < 2 {
        return Err(Error::Format(
            "line 1: header must be `epoch` followed by at least one series name".into(),
        ));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut points: Vec<Vec<(usize, f64)>> = vec![Vec::new(); names.len()];
    let mut last_epoch = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Format(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let epoch: usize = rec[0]
            .parse()
            .map_err(|_| Error::Format(format!("line {line}: epoch {:?} is not an integer", &rec[0])))?;
        if last_epoch.is_some_and(|l| epoch <= l) {
            return Err(Error::Format(format!("line {line}: epochs must increase")));
        }
        last_epoch = Some(epoch);
        for (i, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Format(format!("line {line}: value {cell:?} of {} is not a number", names[i])))?;
            if !v.is_finite() {
                return Err(Error::Format(format!("line {line}: value of {} is not finite", names[i])));
            }
            points[i].push((epoch, v));
        }
    }
    names
        .into_iter()
        .zip(points)
        .map(|(n, p)| {
            if p.is_empty() {
                return Err(Error::Format(format!("series {n} has no values")));
            }
            Ok((n, ErrorCurve::new(p)?))
        })
        .collect()
}

/// Convergence epoch of every series.
pub fn converge(columns: &[(String, ErrorCurve)], delta: f64) -> Result<Vec<(String, Convergence)>> {
    columns
        .iter()
        .map(|(n, c)| Ok((n.clone(), convergence_epoch(c, delta)?)))
        .collect()
}

/// Efficiency input of a pair of curves read at the half-way and final
/// epochs. Both must share one epoch grid.
pub fn efficiency_from_curves(
    names: [&str; 2],
    mpjpe: [&ErrorCurve; 2],
    vmpjpe: Option<[&ErrorCurve; 2]>,
    seconds: [f64; 2],
    k: f64,
) -> Result<EfficiencySummary> {
    if mpjpe[0].epochs() != mpjpe[1].epochs() {
        return Err(invalid(format!(
            "{} and {} do not share an epoch grid",
            names[0], names[1]
        )));
    }
    if let Some(v) = vmpjpe {
        if v[0].epochs() != mpjpe[0].epochs() || v[1].epochs() != mpjpe[0].epochs() {
            return Err(invalid("velocity curves do not share the MPJPE epoch grid"));
        }
    }
    let read = |c: &ErrorCurve| -> Result<(f64, f64)> {
        let h = c.at_half().ok_or_else(|| invalid("empty curve"))?.1;
        Ok((h, c.last().expect("non-empty").1))
    };
    let mut inputs = Vec::new();
    for i in 0..2 {
        let (mh, mf) = read(mpjpe[i])?;
        let (vh, vf) = match vmpjpe {
            Some(v) => read(v[i])?,
            None => (f64::NAN, f64::NAN),
        };
        inputs.push(EfficiencyInput {
            model: names[i].to_string(),
            mpjpe_half: mh,
            mpjpe_final: mf,
            vmpjpe_half: vh,
            vmpjpe_final: vf,
            seconds: seconds[i],
        });
    }
    let b = inputs.pop().expect("two inputs");
    let a = inputs.pop().expect("two inputs");
    efficiency(a, b, k)
}

fn sci(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        format!("{v:.2e}")
    }
}

fn fixed(v: f64, d: usize) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        format!("{v:.d$}")
    }
}

/// Efficiency comparison laid out as one column per model.
pub fn render_tpr_block(s: &EfficiencySummary) -> String {
    let [a, b] = &s.models;
    let mut out = String::new();
    let _ = writeln!(out, "| Property | {} | {} |", a.input.model, b.input.model);
    let _ = writeln!(out, "|---|---|---|");
    let mut row = |name: &str, x: String, y: String| {
        let _ = writeln!(out, "| {name} | {x} | {y} |");
    };
    row("MPJPE ε_{t/2} (mm)", fixed(a.input.mpjpe_half, 2), fixed(b.input.mpjpe_half, 2));
    row("Velocity ε_{t/2} (mm)", fixed(a.input.vmpjpe_half, 2), fixed(b.input.vmpjpe_half, 2));
    row("MPJPE ε_t (mm)", fixed(a.input.mpjpe_final, 2), fixed(b.input.mpjpe_final, 2));
    row("Velocity ε_t (mm)", fixed(a.input.vmpjpe_final, 2), fixed(b.input.vmpjpe_final, 2));
    row("Training time t (sec.)", fixed(a.input.seconds, 0), fixed(b.input.seconds, 0));
    row(&format!("MPJPE ε₀ (k = {})", s.k), fixed(s.eps0_mpjpe, 3), String::new());
    row(&format!("Velocity ε₀ (k = {})", s.k), fixed(s.eps0_vmpjpe, 3), String::new());
    row("MPJPE TPR (mm/s)", sci(a.tpr_mpjpe), sci(b.tpr_mpjpe));
    row("Velocity TPR (mm/s)", sci(a.tpr_vmpjpe), sci(b.tpr_vmpjpe));
    out
}

/// Markdown table with one row per model, one column per graded action and
/// an `Avg` column (common task only). The lower value of each column is
/// bold.
pub fn render_table(reports: &[ModelReport], graded: &[usize], velocity: bool) -> String {
    let decimals = if velocity { 2 } else { 1 };
    let value = |r: &ModelReport, a: Option<usize>| -> f64 {
        match (a, velocity) {
            (Some(a), false) => r.get(a).map_or(f64::NAN, |m| m.mpjpe_mm),
            (Some(a), true) => r.get(a).map_or(f64::NAN, |m| m.vmpjpe_mm),
            (None, false) => r.avg_mpjpe(),
            (None, true) => r.avg_vmpjpe(),
        }
    };
    let mut columns: Vec<Option<usize>> = graded.iter().map(|&a| Some(a)).collect();
    if graded.len() > 1 {
        columns.push(None);
    }
    let mut out = String::from("| Model |");
    for c in &columns {
        let _ = write!(out, " {} |", c.map_or("Avg".to_string(), action_label));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(columns.len()));
    out.push('\n');
    for r in reports {
        let _ = write!(out, "| {} |", r.model);
        for &c in &columns {
            let v = value(r, c);
            let cell = fixed(v, decimals);
            let best = reports.iter().map(|o| value(o, c)).fold(f64::INFINITY, f64::min);
            if reports.len() > 1 && v == best {
                let _ = write!(out, " **{cell}** |");
            } else {
                let _ = write!(out, " {cell} |");
            }
        }
        out.push('\n');
    }
    out
}

fn render_report(
    spec: &ExperimentSpec,
    reports: &[ModelReport],
    graded: &[usize],
    eff: &EfficiencySummary,
    conv: &[(String, Convergence)],
    plan: &TrainPlan,
) -> String {
    let eq = plan.equivalence;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# Comparison: {} task, F={}, UE={}\n",
        spec.mode, spec.frames, spec.unit_epochs
    );
    let _ = writeln!(
        out,
        "Epoch equivalence: {} pooled epoch(s) = {} unit epochs over {} actions. Seed {}.\n",
        eq.original_epochs, eq.total_unit_epochs, eq.n_ac, spec.seed
    );
    let _ = writeln!(out, "## MPJPE (mm)\n\n{}", render_table(reports, graded, false));
    let _ = writeln!(out, "## V-MPJPE (mm)\n\n{}", render_table(reports, graded, true));
    let _ = writeln!(out, "## Training efficiency\n\n{}", render_tpr_block(eff));
    let _ = writeln!(out, "## Convergence (delta = {} mm)\n", crate::metrics::DEFAULT_DELTA_MM);
    let _ = writeln!(out, "| Series | Epoch |\n|---|---|");
    for (name, c) in conv {
        let _ = writeln!(out, "| {name} | {c} |");
    }
    out
}

/// Per-action frame totals, one `label: count` line each.
pub fn frame_totals_report(dataset: &Dataset) -> String {
    dataset
        .frame_totals()
        .iter()
        .enumerate()
        .map(|(a, f)| format!("f({a}) {}: {f}\n", action_label(a)))
        .collect()
}
