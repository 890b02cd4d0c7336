//! Deterministic training of lifting networks under a [`TrainPlan`].

use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tensor};
use crate::budget::{PlanRound, Schedule, TrainPlan};
use crate::error::{invalid, Error, Result};
use crate::liftnet::{self, LiftNetParams, LiftNetSpec};
use crate::metrics::{self, ActionMetrics, ErrorCurve, ModelReport};
use crate::rng::Stream;
use crate::synth::{action_label, Dataset, PoseClip};

const TAG_WINDOWS: u64 = 0x3A;
const TAG_ORDER: u64 = 0x3B;
const TAG_INIT: u64 = 0x3C;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied after every unit epoch.
    pub lr_decay: f64,
    pub unit_epochs: usize,
    pub channels: usize,
    pub seed: u64,
    /// Run independent rounds on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 1e-3,
            lr_decay: 0.95,
            unit_epochs: 15,
            channels: 64,
            seed: 1,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(invalid(format!("lr decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if self.unit_epochs == 0 {
            return Err(invalid("unit epochs must be at least 1"));
        }
        if self.channels == 0 {
            return Err(invalid("channels must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32 - 1)
    }
}

/// A training window: clip index within the sampled set and first frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub clip: usize,
    pub start: usize,
}

/// Every valid window of `clips`, shuffled by `seed`, truncated to `budget`.
pub fn sample_windows(clips: &[&PoseClip], frames: usize, budget: usize, seed: u64) -> Result<Vec<WindowRef>> {
    if frames == 0 {
        return Err(invalid("receptive field must be at least 1 frame"));
    }
    let mut all = Vec::new();
    for (c, clip) in clips.iter().enumerate() {
        let t = clip.frames();
        if t < frames {
            return Err(Error::WindowUnderflow {
                op: "sample_windows",
                needed: frames,
                got: t,
            });
        }
        all.extend((0..=t - frames).map(|start| WindowRef { clip: c, start }));
    }
    if all.is_empty() {
        return Err(invalid("no valid training windows"));
    }
    Stream::new(seed).shuffle(&mut all);
    all.truncate(budget);
    Ok(all)
}

/// Number of windows of width `frames` available per action.
pub fn available_windows(dataset: &Dataset, frames: usize) -> Vec<usize> {
    let mut out = vec![0; dataset.n_ac];
    for clip in &dataset.clips {
        out[clip.action] += (clip.frames() + 1).saturating_sub(frames);
    }
    out
}

struct Encoded<'a> {
    clip: &'a PoseClip,
    input: Tensor,
}

fn encode_all<'a>(clips: &[&'a PoseClip]) -> Result<Vec<Encoded<'a>>> {
    clips
        .iter()
        .map(|c| {
            Ok(Encoded {
                clip: c,
                input: liftnet::encode_keypoints(&c.joints2d, c.joints)?,
            })
        })
        .collect()
}

/// Training inputs shared by every round: train and held-out clips.
pub struct Corpus<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

/// Per-action evaluation of one round's model after each unit epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionCurve {
    pub action: usize,
    pub mpjpe: ErrorCurve,
    pub vmpjpe: ErrorCurve,
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub index: usize,
    pub label: String,
    pub round: PlanRound,
    pub params: LiftNetParams,
    pub curves: Vec<ActionCurve>,
    /// Mean training loss per unit epoch.
    pub train_loss: Vec<f64>,
    pub seconds: f64,
}

impl RoundRecord {
    /// Final-epoch metrics of every evaluated action.
    pub fn final_metrics(&self) -> Vec<ActionMetrics> {
        self.curves
            .iter()
            .map(|c| ActionMetrics {
                action: c.action,
                mpjpe_mm: c.mpjpe.last().map_or(f64::NAN, |p| p.1),
                vmpjpe_mm: c.vmpjpe.last().map_or(f64::NAN, |p| p.1),
            })
            .collect()
    }

    pub fn mean_mpjpe_curve(&self) -> Result<ErrorCurve> {
        ErrorCurve::mean(&self.curves.iter().map(|c| c.mpjpe.clone()).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub schedule: Schedule,
    pub manifest: String,
    pub frames: usize,
    pub rounds: Vec<RoundRecord>,
    pub total_seconds: f64,
}

impl RunRecord {
    /// Curves of every evaluated action, in action order.
    pub fn action_curves(&self) -> Vec<&ActionCurve> {
        let mut out: Vec<&ActionCurve> = self.rounds.iter().flat_map(|r| r.curves.iter()).collect();
        out.sort_by_key(|c| c.action);
        out
    }

    pub fn curve_for(&self, action: usize) -> Option<&ActionCurve> {
        self.rounds.iter().flat_map(|r| r.curves.iter()).find(|c| c.action == action)
    }

    /// Mean curve over `actions`, or over every evaluated action when empty.
    pub fn mean_curves(&self, actions: &[usize]) -> Result<(ErrorCurve, ErrorCurve)> {
        let chosen: Vec<&ActionCurve> = self
            .action_curves()
            .into_iter()
            .filter(|c| actions.is_empty() || actions.contains(&c.action))
            .collect();
        let m: Vec<ErrorCurve> = chosen.iter().map(|c| c.mpjpe.clone()).collect();
        let v: Vec<ErrorCurve> = chosen.iter().map(|c| c.vmpjpe.clone()).collect();
        Ok((ErrorCurve::mean(&m)?, ErrorCurve::mean(&v)?))
    }

    pub fn report(&self, model: &str) -> ModelReport {
        let mut actions: Vec<ActionMetrics> = self.rounds.iter().flat_map(|r| r.final_metrics()).collect();
        actions.sort_by_key(|a| a.action);
        ModelReport {
            model: model.to_string(),
            actions,
            train_seconds: self.total_seconds,
        }
    }
}

/// Validation of `params` on held-out clips: frame-weighted MPJPE and
/// V-MPJPE over the clips.
pub fn evaluate(params: &LiftNetParams, clips: &[&PoseClip]) -> Result<(f64, f64)> {
    let encoded = encode_all(clips)?;
    evaluate_encoded(params, &encoded)
}

fn evaluate_encoded(params: &LiftNetParams, clips: &[Encoded]) -> Result<(f64, f64)> {
    let f = params.spec().receptive_field();
    let pad = (f - 1) / 2;
    let (mut m_sum, mut m_n, mut v_sum, mut v_n) = (0.0, 0usize, 0.0, 0usize);
    for e in clips {
        let pred = liftnet::predict_sequence(params, &e.input)?;
        let n = pred.shape()[0];
        let j = e.clip.joints;
        let gt = &e.clip.joints3d[pad * 3 * j..(pad + n) * 3 * j];
        m_sum += metrics::mpjpe(pred.data(), gt, j)? * n as f64;
        m_n += n;
        if n >= 2 {
            v_sum += metrics::v_mpjpe(pred.data(), gt, j)? * (n - 1) as f64;
            v_n += n - 1;
        }
    }
    if m_n == 0 {
        return Err(invalid("no validation clips"));
    }
    let v = if v_n == 0 { f64::NAN } else { v_sum / v_n as f64 };
    Ok((m_sum / m_n as f64, v))
}

fn round_tags(schedule: Schedule, round: &PlanRound) -> [u64; 3] {
    let sched = match schedule {
        Schedule::Pooled => 0,
        Schedule::PerAction => 1,
    };
    let first = round.actions.first().map_or(0, |a| a.0 as u64);
    [sched, round.actions.len() as u64, first]
}

/// Train one round's model from a fresh seeded initialization.
pub fn train_round(
    round: &PlanRound,
    schedule: Schedule,
    frames: usize,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<RoundRecord> {
    config.validate()?;
    let blocks = LiftNetSpec::blocks_for_field(frames).ok_or_else(|| invalid_field(frames))?;
    let joints = corpus.train.joints;
    let tags = round_tags(schedule, round);
    let init_seed = Stream::derive(config.seed, &[TAG_INIT, tags[0], tags[1], tags[2]]).next_u64();
    let mut params = liftnet::build(LiftNetSpec::new(joints, blocks, config.channels, init_seed)?)?;
    let label = round.label();

    // Allotted windows, drawn separately per action then pooled.
    let available = available_windows(corpus.train, frames);
    let mut train_clips: Vec<&PoseClip> = Vec::new();
    let mut windows: Vec<WindowRef> = Vec::new();
    let mut eval_actions = Vec::new();
    for &(action, budget) in &round.actions {
        if action >= available.len() || budget > available[action] {
            return Err(Error::Budget(format!(
                "round {label}: action {} needs {budget} windows but only {} are available",
                action_label(action),
                available.get(action).copied().unwrap_or(0)
            )));
        }
        let clips: Vec<&PoseClip> = corpus.train.clips_of(action).collect();
        let offset = train_clips.len();
        let picked = sample_windows(&clips, frames, budget, Stream::derive(config.seed, &[TAG_WINDOWS, action as u64]).next_u64())?;
        windows.extend(picked.into_iter().map(|w| WindowRef { clip: w.clip + offset, start: w.start }));
        train_clips.extend(clips);
        eval_actions.push(action);
    }
    if windows.is_empty() {
        return Err(Error::Budget(format!("round {label} has no training windows")));
    }
    let train = encode_all(&train_clips)?;
    let mut validation = Vec::new();
    for &action in &eval_actions {
        let clips: Vec<&PoseClip> = corpus.test.clips_of(action).collect();
        if clips.is_empty() {
            return Err(invalid(format!("no held-out clips for action {}", action_label(action))));
        }
        validation.push((action, encode_all(&clips)?));
    }

    let mut order_rng = Stream::derive(config.seed, &[TAG_ORDER, tags[0], tags[1], tags[2]]);
    let mut adam = AdamState::new(params.tensors());
    let rows = 2 * joints;
    let mut m_points: Vec<Vec<(usize, f64)>> = vec![Vec::new(); eval_actions.len()];
    let mut v_points: Vec<Vec<(usize, f64)>> = vec![Vec::new(); eval_actions.len()];
    let mut train_loss = Vec::with_capacity(config.unit_epochs);
    let mut seconds = 0.0;

    for epoch in 1..=config.unit_epochs {
        let hyper = AdamConfig {
            lr: config.lr_at(epoch),
            ..AdamConfig::default()
        };
        let clock = Instant::now();
        order_rng.shuffle(&mut windows);
        let mut loss_sum = 0.0;
        for (b, batch) in windows.chunks(config.batch_size).enumerate() {
            let n = batch.len();
            let cols = n * frames;
            let mut input = vec![0.0; rows * cols];
            let mut target = Vec::with_capacity(n * joints * 3);
            for (i, w) in batch.iter().enumerate() {
                let src = &train[w.clip];
                let t = src.clip.frames();
                let data = src.input.data();
                for r in 0..rows {
                    input[r * cols + i * frames..r * cols + (i + 1) * frames]
                        .copy_from_slice(&data[r * t + w.start..r * t + w.start + frames]);
                }
                target.extend_from_slice(src.clip.pose3d(w.start + (frames - 1) / 2));
            }
            let input = Tensor::new(vec![rows, cols], input)?;
            let target = Tensor::new(vec![n, joints, 3], target)?;
            let (loss, grads) = liftnet::loss_and_grad(&params, &input, &target)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "round {label}: training loss {loss} at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            loss_sum += loss * n as f64;
            adam_step(params.tensors_mut(), &grads, &mut adam, &hyper)?;
        }
        seconds += clock.elapsed().as_secs_f64();
        train_loss.push(loss_sum / windows.len() as f64);

        for (k, (action, clips)) in validation.iter().enumerate() {
            let (m, v) = evaluate_encoded(&params, clips)?;
            if !m.is_finite() {
                return Err(Error::NonFinite(format!(
                    "round {label}: validation error of {} at epoch {epoch}",
                    action_label(*action)
                )));
            }
            m_points[k].push((epoch, m));
            v_points[k].push((epoch, v));
        }
        debug!(
            "round {label} epoch {epoch}: loss {:.3} mm, val {:.3} mm",
            train_loss[epoch - 1],
            m_points.iter().map(|p| p[epoch - 1].1).sum::<f64>() / m_points.len() as f64
        );
    }

    let curves = eval_actions
        .iter()
        .zip(m_points.into_iter().zip(v_points))
        .map(|(&action, (m, v))| {
            Ok(ActionCurve {
                action,
                mpjpe: ErrorCurve::new(m)?,
                vmpjpe: ErrorCurve::new(v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RoundRecord {
        index: 0,
        label,
        round: round.clone(),
        params,
        curves,
        train_loss,
        // Keep the wall time strictly positive even for trivial rounds.
        seconds: seconds.max(f64::MIN_POSITIVE),
    })
}

fn invalid_field(frames: usize) -> Error {
    let valid: Vec<String> = (0..=liftnet::MAX_BLOCKS).map(|b| 3usize.pow(b as u32).to_string()).collect();
    invalid(format!(
        "receptive field {frames} is not a power of 3; valid values: {}",
        valid.join(", ")
    ))
}

/// Execute every round of `plan`, merging results in plan order.
pub fn run_plan(plan: &TrainPlan, frames: usize, corpus: &Corpus, config: &TrainConfig) -> Result<RunRecord> {
    if plan.rounds.is_empty() {
        return Err(Error::Budget("training plan has no rounds".into()));
    }
    config.validate()?;
    if config.unit_epochs != plan.equivalence.unit_epochs {
        return Err(invalid(format!(
            "config unit epochs {} differ from the plan's {}",
            config.unit_epochs, plan.equivalence.unit_epochs
        )));
    }
    plan.check_available(&available_windows(corpus.train, frames))?;
    info!("training {} schedule: {} round(s)", plan.schedule, plan.rounds.len());
    let task = |(i, round): (usize, &PlanRound)| -> Result<RoundRecord> {
        let mut rec = train_round(round, plan.schedule, frames, corpus, config)?;
        rec.index = i;
        info!("  round {} ({}) done in {:.1}s", i + 1, rec.label, rec.seconds);
        Ok(rec)
    };
    let rounds: Vec<RoundRecord> = if config.parallel {
        plan.rounds.par_iter().enumerate().map(task).collect::<Result<_>>()?
    } else {
        plan.rounds.iter().enumerate().map(task).collect::<Result<_>>()?
    };
    let total_seconds = rounds.iter().map(|r| r.seconds).sum();
    Ok(RunRecord {
        schedule: plan.schedule,
        manifest: plan.manifest(),
        frames,
        rounds,
        total_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::{allocate, build_plan, TaskMode};
    use crate::synth::{gen_dataset, split, GenConfig};

    fn tiny(frames_per_clip: usize, n_ac: usize) -> (Dataset, Dataset) {
        let cfg = GenConfig {
            n_ac,
            subjects: 2,
            clips_per_action: 2,
            frames_per_clip,
            noise_px: 0.0,
            seed: 3,
            ..GenConfig::default()
        };
        split(&gen_dataset(&cfg).unwrap(), 0.5, 3).unwrap()
    }

    fn cfg(ue: usize) -> TrainConfig {
        TrainConfig {
            unit_epochs: ue,
            channels: 8,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sampling_examples() {
        let (train, _) = tiny(27, 1);
        let clip = &train.clips[0];
        let w = sample_windows(&[clip], 27, 10, 1).unwrap();
        assert_eq!(w, vec![WindowRef { clip: 0, start: 0 }]);
        let mut w = sample_windows(&[clip], 1, 27, 4).unwrap();
        assert_eq!(w.len(), 27);
        w.sort_by_key(|w| w.start);
        assert!(w.iter().enumerate().all(|(i, w)| w.start == i));
        let a = sample_windows(&[clip], 1, 5, 9).unwrap();
        assert_eq!(a, sample_windows(&[clip], 1, 5, 9).unwrap());
        assert!(sample_windows(&[clip], 81, 5, 9).is_err());
        assert!(sample_windows(&[], 1, 5, 9).is_err());
    }

    #[test]
    fn lr_schedule_is_exact() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(1), 1e-3);
        assert_eq!(c.lr_at(3), 1e-3 * 0.95f64.powi(2));
        assert!(TrainConfig { lr_decay: 0.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (train, test) = tiny(30, 2);
        let corpus = Corpus { train: &train, test: &test };
        let budget = allocate(TaskMode::Common, 20, 2, None).unwrap();
        let plan = build_plan(&budget, Schedule::PerAction, 2).unwrap();
        let config = TrainConfig { lr: 0.0, ..cfg(2) };
        let rec = train_round(&plan.rounds[0], plan.schedule, 3, &corpus, &config).unwrap();
        let blocks = LiftNetSpec::blocks_for_field(3).unwrap();
        let tags = round_tags(plan.schedule, &plan.rounds[0]);
        let seed = Stream::derive(config.seed, &[TAG_INIT, tags[0], tags[1], tags[2]]).next_u64();
        let init = liftnet::build(LiftNetSpec::new(train.joints, blocks, 8, seed).unwrap()).unwrap();
        assert_eq!(rec.params.tensors(), init.tensors());
        let p = rec.curves[0].mpjpe.points();
        assert_eq!(p[0].1, p[1].1);
    }

    #[test]
    fn plans_run_deterministically_and_concurrently() {
        let (train, test) = tiny(30, 3);
        let corpus = Corpus { train: &train, test: &test };
        let budget = allocate(TaskMode::Common, 45, 3, None).unwrap();
        let plan = build_plan(&budget, Schedule::PerAction, 2).unwrap();
        let a = run_plan(&plan, 3, &corpus, &cfg(2)).unwrap();
        let b = run_plan(&plan, 3, &corpus, &cfg(2)).unwrap();
        let c = run_plan(&plan, 3, &corpus, &TrainConfig { parallel: true, ..cfg(2) }).unwrap();
        assert_eq!(a.rounds.len(), 3);
        for ((x, y), z) in a.rounds.iter().zip(&b.rounds).zip(&c.rounds) {
            assert_eq!(x.params.tensors(), y.params.tensors());
            assert_eq!(x.curves, y.curves);
            assert_eq!(x.params.tensors(), z.params.tensors());
            assert_eq!(x.curves, z.curves);
            assert_eq!(x.curves[0].mpjpe.len(), 2);
        }
        assert!(a.total_seconds > 0.0);
        let report = a.report("per-action");
        assert_eq!(report.actions.iter().map(|m| m.action).collect::<Vec<_>>(), vec![0, 1, 2]);

        let pooled = build_plan(&budget, Schedule::Pooled, 2).unwrap();
        let p = run_plan(&pooled, 3, &corpus, &cfg(2)).unwrap();
        assert_eq!(p.rounds.len(), 1);
        assert_eq!(p.report("pooled").actions.len(), 3);
    }

    #[test]
    fn budget_beyond_availability_fails() {
        let (train, test) = tiny(30, 2);
        let corpus = Corpus { train: &train, test: &test };
        let budget = allocate(TaskMode::Common, 200, 2, None).unwrap();
        let plan = build_plan(&budget, Schedule::PerAction, 1).unwrap();
        assert!(matches!(run_plan(&plan, 3, &corpus, &cfg(1)), Err(Error::Budget(_))));
        let small = build_plan(&allocate(TaskMode::Common, 4, 2, None).unwrap(), Schedule::PerAction, 1).unwrap();
        assert!(run_plan(&small, 4, &corpus, &cfg(1)).is_err());
    }

    #[test]
    fn empty_plan_is_an_error() {
        let (train, test) = tiny(30, 2);
        let corpus = Corpus { train: &train, test: &test };
        let mut plan = build_plan(&allocate(TaskMode::Common, 4, 2, None).unwrap(), Schedule::PerAction, 1).unwrap();
        plan.rounds.clear();
        assert!(run_plan(&plan, 3, &corpus, &cfg(1)).is_err());
    }
}
