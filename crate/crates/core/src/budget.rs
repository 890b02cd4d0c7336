//! Training budgets and schedules for the pooled and per-action methods.
//!
//! One pooled epoch over `n_ac` balanced actions costs the same as `n_ac`
//! *unit epochs*, a unit epoch being one pass over a single action's data.
//! Under a fixed total data budget `N`, the pooled model sees `N / n_ac`
//! frames of every action while an action-oriented model sees all `N` frames
//! of its target action.

use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::synth::action_label;

/// Unit epochs matching `original_epochs` pooled epochs: `t0 = t_unit · n_ac`.
pub fn unit_epochs_for(original_epochs: usize, n_ac: usize) -> usize {
    original_epochs * n_ac
}

/// `floor(Σ f(i) / f(target))` for unbalanced per-action frame totals.
pub fn epoch_ratio_unbalanced(frame_totals: &[usize], target: usize) -> Result<usize> {
    let (total, own) = ratio_terms(frame_totals, target)?;
    let ratio = total / own;
    let remainder = total % own;
    if remainder != 0 {
        log::info!(
            "epoch ratio for {}: {total}/{own} floored to {ratio}, fractional remainder {:.4} dropped",
            action_label(target),
            remainder as f64 / own as f64
        );
    }
    Ok(ratio)
}

/// Unfloored ratio, for reporting the part the floor discards.
pub fn epoch_ratio_exact(frame_totals: &[usize], target: usize) -> Result<f64> {
    let (total, own) = ratio_terms(frame_totals, target)?;
    Ok(total as f64 / own as f64)
}

fn ratio_terms(frame_totals: &[usize], target: usize) -> Result<(usize, usize)> {
    let own = *frame_totals
        .get(target)
        .ok_or_else(|| invalid(format!("epoch ratio: target action {target} is absent")))?;
    if frame_totals.contains(&0) {
        return Err(invalid("epoch ratio: every action needs at least one frame"));
    }
    Ok((frame_totals.iter().sum(), own))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    /// Every action is evaluated; data is shared equally.
    Common,
    /// A fixed total budget, graded on one target action.
    ActionOriented,
}

impl TaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::Common => "common",
            TaskMode::ActionOriented => "action-oriented",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// One model trained on all actions mixed.
    Pooled,
    /// One round and one model per action.
    PerAction,
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Pooled => "pooled",
            Schedule::PerAction => "per-action",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBudget {
    pub mode: TaskMode,
    pub total_frames: usize,
    pub n_ac: usize,
    pub target: Option<usize>,
    /// Frames allotted to each action, indexed by action id.
    pub per_action: Vec<usize>,
    /// Frames left over by the balanced split (`N mod n_ac`).
    pub dropped: usize,
}

impl TrainBudget {
    pub fn allotted(&self) -> usize {
        self.per_action.iter().sum()
    }
}

pub fn allocate(mode: TaskMode, total_frames: usize, n_ac: usize, target: Option<usize>) -> Result<TrainBudget> {
    if n_ac == 0 {
        return Err(Error::Budget("at least one action is required".into()));
    }
    match mode {
        TaskMode::Common => {
            if total_frames < n_ac {
                return Err(Error::Budget(format!(
                    "common mode needs at least one frame per action: N = {total_frames} < n_ac = {n_ac}"
                )));
            }
            let each = total_frames / n_ac;
            let dropped = total_frames % n_ac;
            if dropped > 0 {
                log::info!("balanced allocation drops {dropped} of {total_frames} frames");
            }
            Ok(TrainBudget {
                mode,
                total_frames,
                n_ac,
                target,
                per_action: vec![each; n_ac],
                dropped,
            })
        }
        TaskMode::ActionOriented => {
            let t = target.ok_or_else(|| Error::Budget("action-oriented mode needs a target action".into()))?;
            if t >= n_ac {
                return Err(Error::Budget(format!("target action {t} is outside 0..{n_ac}")));
            }
            if total_frames == 0 {
                return Err(Error::Budget("the budget must be at least one frame".into()));
            }
            let mut per_action = vec![0; n_ac];
            per_action[t] = total_frames;
            Ok(TrainBudget {
                mode,
                total_frames,
                n_ac,
                target,
                per_action,
                dropped: 0,
            })
        }
    }
}

/// Budgets of the pooled baseline and the action-based model for one task.
///
/// In common mode both share the balanced allocation. In action-oriented
/// mode the pooled model keeps the balanced allocation and the action-based
/// model spends the whole budget on the target.
pub fn compare_budgets(
    mode: TaskMode,
    total_frames: usize,
    n_ac: usize,
    target: Option<usize>,
) -> Result<(TrainBudget, TrainBudget)> {
    let pooled = allocate(TaskMode::Common, total_frames, n_ac, target)?;
    let action_based = allocate(mode, total_frames, n_ac, target)?;
    if mode == TaskMode::ActionOriented {
        let t = action_based.target.expect("validated by allocate");
        if pooled.allotted() + pooled.dropped != action_based.per_action[t] {
            return Err(Error::Budget("pooled and action-based budgets differ".into()));
        }
    }
    Ok((pooled, action_based))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanRound {
    /// `(action, frames)` for every action the round draws from.
    pub actions: Vec<(usize, usize)>,
    pub unit_epochs: usize,
}

impl PlanRound {
    pub fn frames(&self) -> usize {
        self.actions.iter().map(|&(_, f)| f).sum()
    }

    pub fn label(&self) -> String {
        match self.actions.as_slice() {
            [(a, _)] => action_label(*a),
            many => format!("pooled({})", many.len()),
        }
    }
}

/// Epoch equivalence recorded with every plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Equivalence {
    pub n_ac: usize,
    /// Unit epochs per round (`t_unit` count).
    pub unit_epochs: usize,
    /// Pooled epochs with the same compute (`t0` count).
    pub original_epochs: usize,
    /// `unit_epochs_for(original_epochs, n_ac)`.
    pub total_unit_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPlan {
    pub schedule: Schedule,
    pub mode: TaskMode,
    pub rounds: Vec<PlanRound>,
    pub equivalence: Equivalence,
}

pub fn build_plan(budget: &TrainBudget, schedule: Schedule, unit_epochs: usize) -> Result<TrainPlan> {
    if unit_epochs == 0 {
        return Err(invalid("unit epochs must be at least 1"));
    }
    let funded: Vec<(usize, usize)> = budget
        .per_action
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0)
        .map(|(a, &f)| (a, f))
        .collect();
    let rounds = match schedule {
        Schedule::PerAction => funded
            .into_iter()
            .map(|af| PlanRound {
                actions: vec![af],
                unit_epochs,
            })
            .collect(),
        Schedule::Pooled if funded.is_empty() => Vec::new(),
        Schedule::Pooled => vec![PlanRound {
            actions: funded,
            unit_epochs,
        }],
    };
    Ok(TrainPlan {
        schedule,
        mode: budget.mode,
        rounds,
        equivalence: Equivalence {
            n_ac: budget.n_ac,
            unit_epochs,
            original_epochs: unit_epochs,
            total_unit_epochs: unit_epochs_for(unit_epochs, budget.n_ac),
        },
    })
}

impl TrainPlan {
    /// Fails when a round asks for more frames of an action than exist.
    pub fn check_available(&self, available: &[usize]) -> Result<()> {
        for round in &self.rounds {
            for &(a, frames) in &round.actions {
                let have = available.get(a).copied().unwrap_or(0);
                if frames > have {
                    return Err(Error::Budget(format!(
                        "round {} asks for {frames} frames of {} but only {have} are available",
                        round.label(),
                        action_label(a)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Human-readable manifest, one line per round.
    pub fn manifest(&self) -> String {
        let eq = &self.equivalence;
        let mut out = format!(
            "# schedule={} mode={} n_ac={} rounds={} | {} pooled epoch(s) = {} unit epochs (t0 = t_unit * n_ac)\n",
            self.schedule,
            self.mode,
            eq.n_ac,
            self.rounds.len(),
            eq.original_epochs,
            eq.total_unit_epochs
        );
        for (i, r) in self.rounds.iter().enumerate() {
            let detail = if r.actions.len() > 1 {
                let per: Vec<String> = r.actions.iter().map(|&(a, f)| format!("{}:{f}", action_label(a))).collect();
                format!(" [{}]", per.join(" "))
            } else {
                String::new()
            };
            out.push_str(&format!(
                "round {}: action={} frames={} unit_epochs={}{detail}\n",
                i + 1,
                r.label(),
                r.frames(),
                r.unit_epochs
            ));
        }
        out
    }
}
