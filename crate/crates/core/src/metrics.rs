//! Evaluation protocols and training-efficiency measures.
//!
//! Pose sequences are flat `T × J × 3` slices in millimetres.

use crate::error::{invalid, Error, Result};

/// Default augmenting constant applied to the half-way errors.
pub const DEFAULT_K: f64 = 1.2;

/// Default tolerance of [`convergence_epoch`], in mm.
pub const DEFAULT_DELTA_MM: f64 = 0.5;

fn frames_of(pred: &[f64], gt: &[f64], joints: usize, op: &'static str) -> Result<usize> {
    if pred.len() != gt.len() {
        return Err(Error::Shape {
            op,
            dim: "sequence length",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if joints == 0 || !pred.len().is_multiple_of(3 * joints) {
        return Err(invalid(format!("{op}: data is not a whole number of {joints}-joint poses")));
    }
    Ok(pred.len() / (3 * joints))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Mean per-joint position error after subtracting each frame's root joint
/// (joint 0) from both sequences.
pub fn mpjpe(pred: &[f64], gt: &[f64], joints: usize) -> Result<f64> {
    let t = frames_of(pred, gt, joints, "mpjpe")?;
    if t == 0 {
        return Err(invalid("mpjpe: at least one frame is required"));
    }
    let mut total = 0.0;
    for f in 0..t {
        let p = &pred[f * 3 * joints..(f + 1) * 3 * joints];
        let g = &gt[f * 3 * joints..(f + 1) * 3 * joints];
        for j in 0..joints {
            let a = [0, 1, 2].map(|k| p[3 * j + k] - p[k]);
            let b = [0, 1, 2].map(|k| g[3 * j + k] - g[k]);
            total += dist(&a, &b);
        }
    }
    Ok(total / (t * joints) as f64)
}

/// Mean per-joint error of first-order temporal differences, with no root
/// re-alignment of the differences.
pub fn v_mpjpe(pred: &[f64], gt: &[f64], joints: usize) -> Result<f64> {
    let t = frames_of(pred, gt, joints, "v_mpjpe")?;
    if t < 2 {
        return Err(invalid("v_mpjpe: at least two frames are required"));
    }
    let n = 3 * joints;
    let mut total = 0.0;
    for f in 0..t - 1 {
        for j in 0..joints {
            let i = 3 * j;
            let vp = [0, 1, 2].map(|k| pred[(f + 1) * n + i + k] - pred[f * n + i + k]);
            let vg = [0, 1, 2].map(|k| gt[(f + 1) * n + i + k] - gt[f * n + i + k]);
            total += dist(&vp, &vg);
        }
    }
    Ok(total / ((t - 1) * joints) as f64)
}

/// Regulated error `((e1 + e2) / 2) · k` from both models' half-way errors.
pub fn epsilon0(eps_half_1: f64, eps_half_2: f64, k: f64) -> f64 {
    (eps_half_1 + eps_half_2) / 2.0 * k
}

/// Time-precision rate `(eps0 - eps_t) / t` in mm per second.
pub fn tpr(eps0: f64, eps_t: f64, seconds: f64) -> Result<f64> {
    if !(seconds > 0.0) {
        return Err(invalid(format!("tpr: training time must be positive, got {seconds}")));
    }
    Ok((eps0 - eps_t) / seconds)
}

/// Relative improvement `(before - after) / after · 100`.
pub fn improvement_percent(before: f64, after: f64) -> Result<f64> {
    if !(before > 0.0 && after > 0.0) {
        return Err(invalid("improvement_percent: both errors must be positive"));
    }
    Ok((before - after) / after * 100.0)
}

/// Validation error observed at a strictly increasing sequence of epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    points: Vec<(usize, f64)>,
}

impl ErrorCurve {
    pub fn new(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("error curve epochs must be strictly increasing"));
        }
        if let Some(&(e, v)) = points.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("error curve value {v} at epoch {e}")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn epochs(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn last(&self) -> Option<(usize, f64)> {
        self.points.last().copied()
    }

    /// Observation at the epoch closest to half of the final epoch; the
    /// earlier one wins a tie.
    pub fn at_half(&self) -> Option<(usize, f64)> {
        let (last, _) = self.last()?;
        let half = last as f64 / 2.0;
        self.points.iter().copied().min_by(|a, b| {
            let da = (a.0 as f64 - half).abs();
            let db = (b.0 as f64 - half).abs();
            da.total_cmp(&db).then(a.0.cmp(&b.0))
        })
    }

    /// Pointwise mean of curves sharing one epoch grid.
    pub fn mean(curves: &[ErrorCurve]) -> Result<ErrorCurve> {
        let first = curves.first().ok_or_else(|| invalid("cannot average zero curves"))?;
        let grid = first.epochs();
        if curves.iter().any(|c| c.epochs() != grid) {
            return Err(invalid("curves do not share an epoch grid"));
        }
        let n = curves.len() as f64;
        let points = grid
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, curves.iter().map(|c| c.points[i].1).sum::<f64>() / n))
            .collect();
        ErrorCurve::new(points)
    }
}

/// Outcome of [`convergence_epoch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    /// The curve settles within tolerance before its final observation.
    Epoch(usize),
    /// Only the final observation lies within tolerance: no convergence is
    /// observed, and the final epoch is the earliest candidate.
    FinalOnly(usize),
}

impl Convergence {
    /// Earliest epoch within tolerance of the final error.
    pub fn epoch(self) -> usize {
        match self {
            Convergence::Epoch(e) | Convergence::FinalOnly(e) => e,
        }
    }

    pub fn converged(self) -> bool {
        matches!(self, Convergence::Epoch(_))
    }
}

impl std::fmt::Display for Convergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Convergence::Epoch(e) => write!(f, "{e}"),
            Convergence::FinalOnly(e) => write!(f, "no convergence (final epoch {e})"),
        }
    }
}

/// First observed epoch whose error lies within `delta` of the final error.
pub fn convergence_epoch(curve: &ErrorCurve, delta: f64) -> Result<Convergence> {
    if !(delta > 0.0) {
        return Err(invalid("convergence delta must be positive"));
    }
    let (last_epoch, last) = curve.last().ok_or_else(|| invalid("convergence: empty curve"))?;
    let first = curve
        .points
        .iter()
        .find(|(_, v)| (v - last).abs() <= delta)
        .map(|p| p.0)
        .expect("the final point always qualifies");
    Ok(if first == last_epoch {
        Convergence::FinalOnly(last_epoch)
    } else {
        Convergence::Epoch(first)
    })
}

/// Per-action evaluation of one trained model (or one per-action family).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMetrics {
    pub action: usize,
    pub mpjpe_mm: f64,
    pub vmpjpe_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub model: String,
    pub actions: Vec<ActionMetrics>,
    pub train_seconds: f64,
}

impl ModelReport {
    pub fn avg_mpjpe(&self) -> f64 {
        mean(self.actions.iter().map(|a| a.mpjpe_mm))
    }

    pub fn avg_vmpjpe(&self) -> f64 {
        mean(self.actions.iter().map(|a| a.vmpjpe_mm))
    }

    pub fn get(&self, action: usize) -> Option<&ActionMetrics> {
        self.actions.iter().find(|a| a.action == action)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Inputs of the efficiency comparison for one model. Velocity fields may
/// be NaN when no velocity curve is available.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyInput {
    pub model: String,
    pub mpjpe_half: f64,
    pub mpjpe_final: f64,
    pub vmpjpe_half: f64,
    pub vmpjpe_final: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEfficiency {
    pub input: EfficiencyInput,
    pub tpr_mpjpe: f64,
    pub tpr_vmpjpe: f64,
}

/// Regulated errors and time-precision rates of two models.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencySummary {
    pub k: f64,
    pub eps0_mpjpe: f64,
    pub eps0_vmpjpe: f64,
    pub models: [ModelEfficiency; 2],
}

pub fn efficiency(a: EfficiencyInput, b: EfficiencyInput, k: f64) -> Result<EfficiencySummary> {
    if !(k > 0.0) {
        return Err(invalid("k must be positive"));
    }
    for m in [&a, &b] {
        let bad = |v: f64| !(v >= 0.0);
        if bad(m.mpjpe_half) || bad(m.mpjpe_final) {
            return Err(invalid(format!("{}: errors must be non-negative", m.model)));
        }
        // Velocity errors may be absent (NaN) but never negative.
        if m.vmpjpe_half < 0.0 || m.vmpjpe_final < 0.0 {
            return Err(invalid(format!("{}: velocity errors must be non-negative", m.model)));
        }
    }
    let eps0_mpjpe = epsilon0(a.mpjpe_half, b.mpjpe_half, k);
    let eps0_vmpjpe = epsilon0(a.vmpjpe_half, b.vmpjpe_half, k);
    let rate = |m: EfficiencyInput| -> Result<ModelEfficiency> {
        Ok(ModelEfficiency {
            tpr_mpjpe: tpr(eps0_mpjpe, m.mpjpe_final, m.seconds)?,
            tpr_vmpjpe: tpr(eps0_vmpjpe, m.vmpjpe_final, m.seconds)?,
            input: m,
        })
    };
    Ok(EfficiencySummary {
        k,
        eps0_mpjpe,
        eps0_vmpjpe,
        models: [rate(a)?, rate(b)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mpjpe_examples() {
        let gt = [0.0; 6];
        let pred = [0.0, 0.0, 0.0, 3.0, 4.0, 0.0];
        assert_eq!(mpjpe(&pred, &gt, 2).unwrap(), 2.5);
        assert_eq!(mpjpe(&gt, &gt, 2).unwrap(), 0.0);
        let moved: Vec<f64> = pred.chunks(3).flat_map(|p| [p[0] + 7.0, p[1] - 2.0, p[2] + 4.0]).collect();
        assert_eq!(mpjpe(&moved, &gt, 2).unwrap(), 2.5);
        assert!(mpjpe(&pred[..3], &gt, 2).is_err());
    }

    #[test]
    fn v_mpjpe_examples() {
        let j = 4;
        let gt: Vec<f64> = (0..2 * j * 3).map(|i| i as f64 * 1.5).collect();
        assert_eq!(v_mpjpe(&gt, &gt, j).unwrap(), 0.0);
        let offset: Vec<f64> = gt.iter().enumerate().map(|(i, v)| v + [3.0, -1.0, 9.0][i % 3]).collect();
        assert_eq!(v_mpjpe(&offset, &gt, j).unwrap(), 0.0);
        // Joint 2's second-frame position (hence its velocity) off by (0, 0, 12).
        let mut pred = gt.clone();
        pred[j * 3 + 2 * 3 + 2] += 12.0;
        assert_eq!(v_mpjpe(&pred, &gt, j).unwrap(), 12.0 / j as f64);
        assert!(v_mpjpe(&gt[..j * 3], &gt[..j * 3], j).is_err());
    }

    #[test]
    fn epsilon0_examples() {
        assert!((epsilon0(50.27, 50.49, 1.2) - 60.456).abs() < 1e-12);
        assert!((epsilon0(2.66, 3.02, 1.2) - 3.408).abs() < 1e-12);
        assert_eq!(epsilon0(4.25, 4.25, 1.0), 4.25);
    }

    #[test]
    fn tpr_examples() {
        assert!((tpr(60.46, 48.22, 176976.0).unwrap() - 6.92e-5).abs() < 1e-7);
        assert!((tpr(60.46, 50.54, 56921.0).unwrap() - 17.4e-5).abs() < 1e-6);
        assert!((tpr(3.408, 3.08, 56921.0).unwrap() - 5.76e-6).abs() < 1e-8);
        assert!(tpr(1.0, 0.5, 0.0).is_err());
        assert!(tpr(1.0, 2.0, 10.0).unwrap() < 0.0);
    }

    #[test]
    fn improvement_examples() {
        assert!((improvement_percent(75.5, 73.2).unwrap() - 3.142).abs() < 1e-3);
        assert_eq!(improvement_percent(5.0, 5.0).unwrap(), 0.0);
        assert!((improvement_percent(3.80, 3.63).unwrap() - 4.683).abs() < 1e-3);
        assert!(improvement_percent(0.0, 1.0).is_err());
    }

    #[test]
    fn convergence_rules() {
        let c = ErrorCurve::new(vec![(1, 5.0), (2, 5.0), (3, 5.0)]).unwrap();
        assert_eq!(convergence_epoch(&c, 0.5).unwrap(), Convergence::Epoch(1));
        let c = ErrorCurve::new(vec![(1, 9.0), (2, 7.0), (3, 5.0)]).unwrap();
        let r = convergence_epoch(&c, 0.5).unwrap();
        assert_eq!(r, Convergence::FinalOnly(3));
        assert!(!r.converged());
        assert!(r.to_string().starts_with("no convergence"));
        assert!(convergence_epoch(&c, 0.0).is_err());
        assert!(ErrorCurve::new(vec![(2, 1.0), (2, 1.0)]).is_err());
        assert!(ErrorCurve::new(vec![(1, f64::NAN)]).is_err());
    }

    #[test]
    fn half_point_selection() {
        let c = ErrorCurve::new(vec![(1, 1.0), (10, 2.0), (40, 3.0), (50, 4.0), (80, 5.0)]).unwrap();
        assert_eq!(c.at_half(), Some((40, 3.0)));
        let c = ErrorCurve::new((1..=15).map(|e| (e, e as f64)).collect()).unwrap();
        assert_eq!(c.at_half(), Some((7, 7.0)));
    }

    #[test]
    fn curve_mean_requires_shared_grid() {
        let a = ErrorCurve::new(vec![(1, 1.0), (2, 3.0)]).unwrap();
        let b = ErrorCurve::new(vec![(1, 3.0), (2, 5.0)]).unwrap();
        assert_eq!(ErrorCurve::mean(&[a.clone(), b]).unwrap().points(), &[(1, 2.0), (2, 4.0)]);
        let c = ErrorCurve::new(vec![(1, 1.0), (3, 3.0)]).unwrap();
        assert!(ErrorCurve::mean(&[a, c]).is_err());
    }

    fn pose_seq(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-500.0f64..500.0, len)
    }

    proptest! {
        #[test]
        fn mpjpe_is_nonnegative_and_translation_invariant(
            pred in pose_seq(3 * 4 * 3), gt in pose_seq(3 * 4 * 3),
            shift in proptest::array::uniform3(-1000.0f64..1000.0),
        ) {
            let base = mpjpe(&pred, &gt, 4).unwrap();
            prop_assert!(base >= 0.0);
            let moved: Vec<f64> = pred.iter().enumerate().map(|(i, v)| v + shift[i % 3]).collect();
            prop_assert!((mpjpe(&moved, &gt, 4).unwrap() - base).abs() < 1e-9);
            prop_assert_eq!(mpjpe(&gt, &gt, 4).unwrap(), 0.0);
        }

        #[test]
        fn v_mpjpe_ignores_constant_offsets(
            pred in pose_seq(5 * 3 * 3), gt in pose_seq(5 * 3 * 3),
            offset in proptest::collection::vec(-1000.0f64..1000.0, 9),
        ) {
            let base = v_mpjpe(&pred, &gt, 3).unwrap();
            let moved: Vec<f64> = pred.iter().enumerate().map(|(i, v)| v + offset[i % 9]).collect();
            prop_assert!((v_mpjpe(&moved, &gt, 3).unwrap() - base).abs() < 1e-9);
            let moved_gt: Vec<f64> = gt.iter().enumerate().map(|(i, v)| v - offset[i % 9]).collect();
            prop_assert!((v_mpjpe(&pred, &moved_gt, 3).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn tpr_is_decreasing(eps0 in 10.0f64..100.0, a in 0.0f64..9.0, b in 0.0f64..9.0, t1 in 1.0f64..1e5, t2 in 1.0f64..1e5) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            prop_assert!(tpr(eps0, hi, t1).unwrap() < tpr(eps0, lo, t1).unwrap());
            let (ta, tb) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assume!(tb - ta > 1e-6);
            prop_assert!(tpr(eps0, a, tb).unwrap() < tpr(eps0, a, ta).unwrap());
        }

        #[test]
        fn epsilon0_symmetric_and_linear_in_k(e1 in 0.0f64..100.0, e2 in 0.0f64..100.0, k in 0.1f64..5.0) {
            prop_assert_eq!(epsilon0(e1, e2, k), epsilon0(e2, e1, k));
            prop_assert!((epsilon0(e1, e2, 2.0 * k) - 2.0 * epsilon0(e1, e2, k)).abs() < 1e-9);
        }

        #[test]
        fn convergence_is_monotone_in_delta(
            values in proptest::collection::vec(0.0f64..100.0, 1..30), d1 in 0.01f64..20.0, d2 in 0.01f64..20.0,
        ) {
            let curve = ErrorCurve::new(values.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect()).unwrap();
            let (small, large) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let at = |d| convergence_epoch(&curve, d).unwrap().epoch();
            prop_assert!(at(large) <= at(small));
        }
    }
}
