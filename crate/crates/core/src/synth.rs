//! Seeded synthetic motion capture.
//!
//! Each action owns a motion signature: every joint oscillates its three
//! Euler angles at an action-specific frequency with action-specific
//! amplitudes and phases. Clips realize the signature with small per-subject
//! and per-clip variation through forward kinematics, so bone lengths are
//! exact. 2D keypoints are a weak-perspective projection plus Gaussian pixel
//! noise.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng::Stream;

/// Display labels of the 15 default actions.
pub const ACTION_LABELS: [&str; 15] = [
    "Dir.", "Disc.", "Eat", "Greet", "Phone", "Photo", "Pose", "Purch.", "Sit", "SitD.", "Smoke", "Wait", "WkD.",
    "Walk", "WkT.",
];

pub fn action_label(action: usize) -> String {
    ACTION_LABELS
        .get(action)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("A{action}"))
}

/// Parses a label like `Eat`, `eat`, `SitD`, `SitD.` or a numeric id.
pub fn parse_action(name: &str, n_ac: usize) -> Result<usize> {
    let wanted = name.trim().trim_end_matches('.').to_ascii_lowercase();
    let found = (0..n_ac).find(|&a| action_label(a).trim_end_matches('.').to_ascii_lowercase() == wanted);
    found
        .or_else(|| wanted.parse::<usize>().ok().filter(|&a| a < n_ac))
        .ok_or_else(|| {
            let labels: Vec<String> = (0..n_ac).map(action_label).collect();
            invalid(format!("unknown action '{name}'; expected one of {}", labels.join(", ")))
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec {
    /// Parent joint of each joint; the root is its own parent.
    pub parent: Vec<usize>,
    /// Length in mm of the bone ending at each joint (0 for the root).
    pub bone_lengths: Vec<f64>,
    /// Rest direction of each bone in its parent's frame.
    pub rest_directions: Vec<[f64; 3]>,
}

impl SkeletonSpec {
    /// 17-joint layout in the usual Human3.6M order with adult proportions.
    pub fn h36m17() -> Self {
        #[rustfmt::skip]
        let bones: [(usize, [f64; 3]); 17] = [
            (0, [0.0, 0.0, 0.0]),
            (0, [-132.0, 0.0, 0.0]), (1, [0.0, -442.0, 0.0]), (2, [0.0, -454.0, 0.0]),
            (0, [132.0, 0.0, 0.0]), (4, [0.0, -442.0, 0.0]), (5, [0.0, -454.0, 0.0]),
            (0, [0.0, 233.0, 0.0]), (7, [0.0, 257.0, 0.0]), (8, [0.0, 121.0, 0.0]), (9, [0.0, 115.0, 0.0]),
            (8, [151.0, 0.0, 0.0]), (11, [0.0, -278.0, 0.0]), (12, [0.0, -252.0, 0.0]),
            (8, [-151.0, 0.0, 0.0]), (14, [0.0, -278.0, 0.0]), (15, [0.0, -252.0, 0.0]),
        ];
        let mut s = Self {
            parent: Vec::new(),
            bone_lengths: Vec::new(),
            rest_directions: Vec::new(),
        };
        for (parent, offset) in bones {
            let len = norm(offset);
            s.parent.push(parent);
            s.bone_lengths.push(len);
            s.rest_directions
                .push(if len > 0.0 { offset.map(|v| v / len) } else { [0.0, 1.0, 0.0] });
        }
        s
    }

    pub fn joints(&self) -> usize {
        self.parent.len()
    }

    /// Joints ordered so every parent precedes its children.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let j = self.parent.len();
        if j == 0 {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        if self.bone_lengths.len() != j || self.rest_directions.len() != j {
            return Err(Error::InvalidSkeleton("per-joint arrays differ in length".into()));
        }
        if self.parent[0] != 0 {
            return Err(Error::InvalidSkeleton("joint 0 must be the root".into()));
        }
        for (i, &p) in self.parent.iter().enumerate().skip(1) {
            if p >= j || p == i {
                return Err(Error::InvalidSkeleton(format!("joint {i} has invalid parent {p}")));
            }
            if !(self.bone_lengths[i] > 0.0) || !self.bone_lengths[i].is_finite() {
                return Err(Error::InvalidSkeleton(format!("bone {i} must have positive length")));
            }
            if !(norm(self.rest_directions[i]) > 0.0) {
                return Err(Error::InvalidSkeleton(format!("bone {i} has a zero rest direction")));
            }
        }
        let mut order = vec![0];
        let mut placed = vec![false; j];
        placed[0] = true;
        while order.len() < j {
            let before = order.len();
            for i in 1..j {
                if !placed[i] && placed[self.parent[i]] {
                    placed[i] = true;
                    order.push(i);
                }
            }
            if order.len() == before {
                return Err(Error::InvalidSkeleton("parent array contains a cycle".into()));
            }
        }
        Ok(order)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Pixels per millimetre.
    pub scale: f64,
    pub principal: [f64; 2],
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            scale: 0.25,
            principal: [500.0, 500.0],
        }
    }
}

/// `(x, y) = scale · (X, Y) + principal`; depth is discarded.
pub fn project_weak_perspective(pose3d: &[f64], camera: &Camera) -> Result<Vec<f64>> {
    if !(camera.scale > 0.0) {
        return Err(invalid("projection scale must be positive"));
    }
    if pose3d.len() % 3 != 0 {
        return Err(invalid("pose must hold 3 coordinates per joint"));
    }
    Ok(pose3d
        .chunks_exact(3)
        .flat_map(|p| {
            [
                camera.scale * p[0] + camera.principal[0],
                camera.scale * p[1] + camera.principal[1],
            ]
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseClip {
    pub action: usize,
    pub subject: usize,
    pub joints: usize,
    /// `T × J × 3`, millimetres.
    pub joints3d: Vec<f64>,
    /// `T × J × 2`, pixels.
    pub joints2d: Vec<f64>,
}

impl PoseClip {
    pub fn frames(&self) -> usize {
        self.joints3d.len() / (3 * self.joints)
    }

    pub fn pose3d(&self, frame: usize) -> &[f64] {
        let n = 3 * self.joints;
        &self.joints3d[frame * n..(frame + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_ac: usize,
    pub joints: usize,
    pub clips: Vec<PoseClip>,
}

impl Dataset {
    /// Frame totals `f(i)` per action.
    pub fn frame_totals(&self) -> Vec<usize> {
        let mut totals = vec![0; self.n_ac];
        for c in &self.clips {
            totals[c.action] += c.frames();
        }
        totals
    }

    pub fn clips_of(&self, action: usize) -> impl Iterator<Item = &PoseClip> {
        self.clips.iter().filter(move |c| c.action == action)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_ac: usize,
    pub subjects: usize,
    pub clips_per_action: usize,
    pub frames_per_clip: usize,
    pub skeleton: SkeletonSpec,
    pub camera: Camera,
    pub fps: f64,
    /// Standard deviation of the 2D pixel noise.
    pub noise_px: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_ac: 15,
            subjects: 4,
            clips_per_action: 4,
            frames_per_clip: 500,
            skeleton: SkeletonSpec::h36m17(),
            camera: Camera::default(),
            fps: 50.0,
            noise_px: 1.0,
            seed: 1,
        }
    }
}

/// Joint-angle oscillation shared by every clip of one action.
#[derive(Debug, Clone)]
struct Signature {
    /// Per joint: frequency in Hz.
    freq: Vec<f64>,
    /// Per joint and axis: (offset, amplitude, phase).
    angles: Vec<[(f64, f64, f64); 3]>,
    yaw_rate: f64,
}

const TAG_ACTION: u64 = 0xAC;
const TAG_SUBJECT: u64 = 0x5B;
const TAG_CLIP: u64 = 0xC1;
const TAG_SPLIT: u64 = 0x5E;

fn amplitude_cap(skeleton: &SkeletonSpec, j: usize) -> f64 {
    if j == 0 {
        return 0.15;
    }
    // Joints whose bone points sideways (hips, shoulders) swing the limbs.
    let d = skeleton.rest_directions[j];
    if d[0].abs() > 0.5 {
        0.8
    } else if d[1] < 0.0 {
        0.6
    } else {
        0.25
    }
}

fn signature(cfg: &GenConfig, action: usize) -> Signature {
    let mut rng = Stream::derive(cfg.seed, &[TAG_ACTION, action as u64]);
    let j = cfg.skeleton.joints();
    let freq = (0..j).map(|_| rng.uniform(0.25, 2.5)).collect();
    let angles = (0..j)
        .map(|jj| {
            let cap = amplitude_cap(&cfg.skeleton, jj);
            [0, 1, 2].map(|_| {
                (
                    rng.uniform(-0.3, 0.3) * cap,
                    rng.uniform(0.2, 1.0) * cap,
                    rng.uniform(0.0, std::f64::consts::TAU),
                )
            })
        })
        .collect();
    Signature {
        freq,
        angles,
        yaw_rate: rng.uniform(-0.02, 0.02),
    }
}

type Mat3 = [[f64; 3]; 3];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][k] + a[i][1] * b[1][k] + a[i][2] * b[2][k];
        }
    }
    m
}

fn apply(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// `Rz(z) · Ry(y) · Rx(x)`.
fn euler(x: f64, y: f64, z: f64) -> Mat3 {
    let (sx, cx) = x.sin_cos();
    let (sy, cy) = y.sin_cos();
    let (sz, cz) = z.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    matmul(&rz, &matmul(&ry, &rx))
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn generate_clip(cfg: &GenConfig, order: &[usize], sig: &Signature, action: usize, clip: usize) -> PoseClip {
    let sk = &cfg.skeleton;
    let j = sk.joints();
    let subject = clip % cfg.subjects;
    let mut style_rng = Stream::derive(cfg.seed, &[TAG_SUBJECT, subject as u64]);
    let style: Vec<f64> = (0..j).map(|_| style_rng.uniform(0.95, 1.05)).collect();

    let mut rng = Stream::derive(cfg.seed, &[TAG_CLIP, action as u64, subject as u64, clip as u64]);
    let tempo = 1.0 + rng.uniform(-0.03, 0.03);
    let t0 = rng.uniform(0.0, 10.0);
    // Near-frontal headings keep depth recoverable under weak perspective.
    let yaw0 = rng.uniform(-0.1, 0.1);
    let origin = [rng.uniform(-500.0, 500.0), 0.0, rng.uniform(3000.0, 5000.0)];
    let amp_jitter: Vec<f64> = (0..j).map(|_| rng.uniform(0.95, 1.05)).collect();
    let phase_jitter: Vec<[f64; 3]> = (0..j).map(|_| [0, 1, 2].map(|_| rng.uniform(-0.1, 0.1))).collect();

    let frames = cfg.frames_per_clip;
    let mut joints3d = Vec::with_capacity(frames * j * 3);
    let mut rot = vec![[[0.0; 3]; 3]; j];
    let mut pos = vec![[0.0; 3]; j];
    for f in 0..frames {
        let t = f as f64 / cfg.fps + t0;
        let angle = |jj: usize, axis: usize| {
            let (offset, amp, phase) = sig.angles[jj][axis];
            let w = std::f64::consts::TAU * sig.freq[jj] * tempo;
            offset + amp * style[jj] * amp_jitter[jj] * (w * t + phase + phase_jitter[jj][axis]).sin()
        };
        for &jj in order {
            let local = euler(angle(jj, 0), angle(jj, 1), angle(jj, 2));
            if jj == 0 {
                let yaw = euler(0.0, yaw0 + sig.yaw_rate * (t - t0), 0.0);
                rot[0] = matmul(&yaw, &local);
                pos[0] = [origin[0], origin[1] + 20.0 * angle(0, 0), origin[2]];
            } else {
                let p = sk.parent[jj];
                let d = sk.rest_directions[jj];
                let len = sk.bone_lengths[jj];
                let bone = apply(&rot[p], [d[0] * len, d[1] * len, d[2] * len]);
                pos[jj] = [pos[p][0] + bone[0], pos[p][1] + bone[1], pos[p][2] + bone[2]];
                rot[jj] = matmul(&rot[p], &local);
            }
        }
        for p in &pos {
            joints3d.extend_from_slice(p);
        }
    }

    let mut joints2d = project_weak_perspective(&joints3d, &cfg.camera).expect("validated camera");
    if cfg.noise_px > 0.0 {
        for v in &mut joints2d {
            *v += cfg.noise_px * rng.normal();
        }
    }
    PoseClip {
        action,
        subject,
        joints: j,
        joints3d,
        joints2d,
    }
}

pub fn gen_dataset(cfg: &GenConfig) -> Result<Dataset> {
    if cfg.n_ac == 0 || cfg.subjects == 0 || cfg.clips_per_action == 0 || cfg.frames_per_clip == 0 {
        return Err(invalid("dataset counts must all be at least 1"));
    }
    if !(cfg.noise_px >= 0.0) {
        return Err(invalid("noise must be non-negative"));
    }
    if !(cfg.camera.scale > 0.0) || !(cfg.fps > 0.0) {
        return Err(invalid("camera scale and fps must be positive"));
    }
    let order = cfg.skeleton.validate()?;
    let signatures: Vec<Signature> = (0..cfg.n_ac).map(|a| signature(cfg, a)).collect();
    // Indexed collect keeps (action, clip) order whatever the scheduling.
    let clips = (0..cfg.n_ac * cfg.clips_per_action)
        .into_par_iter()
        .map(|i| {
            let (a, c) = (i / cfg.clips_per_action, i % cfg.clips_per_action);
            generate_clip(cfg, &order, &signatures[a], a, c)
        })
        .collect();
    Ok(Dataset {
        n_ac: cfg.n_ac,
        joints: cfg.skeleton.joints(),
        clips,
    })
}

/// Largest `|measured - specified|` bone length over all frames, in mm.
pub fn bone_length_audit(clip: &PoseClip, skeleton: &SkeletonSpec) -> f64 {
    let mut worst = 0.0_f64;
    for f in 0..clip.frames() {
        let pose = clip.pose3d(f);
        for j in 1..skeleton.joints() {
            let p = skeleton.parent[j];
            let d = [0, 1, 2].map(|a| pose[3 * j + a] - pose[3 * p + a]);
            worst = worst.max((norm(d) - skeleton.bone_lengths[j]).abs());
        }
    }
    worst
}

/// Clip-level split stratified by action. Each action's clips are shuffled
/// with their own stream and `round(test_fraction · n)` of them (at least one,
/// leaving at least one) go to the test side. Clip order is preserved.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid("test fraction must lie strictly between 0 and 1"));
    }
    let mut is_test = vec![false; dataset.clips.len()];
    for a in 0..dataset.n_ac {
        let mut idx: Vec<usize> = (0..dataset.clips.len())
            .filter(|&i| dataset.clips[i].action == a)
            .collect();
        if idx.len() < 2 {
            return Err(invalid(format!(
                "action {} has {} clip(s); at least 2 are needed to stratify",
                action_label(a),
                idx.len()
            )));
        }
        Stream::derive(seed, &[TAG_SPLIT, a as u64]).shuffle(&mut idx);
        let n_test = ((test_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_test] {
            is_test[i] = true;
        }
    }
    let pick = |want: bool| Dataset {
        n_ac: dataset.n_ac,
        joints: dataset.joints,
        clips: dataset
            .clips
            .iter()
            .zip(&is_test)
            .filter(|(_, &t)| t == want)
            .map(|(c, _)| c.clone())
            .collect(),
    };
    Ok((pick(false), pick(true)))
}

const DATASET_MAGIC: &[u8; 4] = b"PLB1";

/// `PLB1`, then `n_ac`, `J`, clip count as u32 LE; per clip `action`,
/// `subject`, `T` as u32 LE followed by joints3d and joints2d as f64 LE.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut w: W) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    for v in [dataset.n_ac, dataset.joints, dataset.clips.len()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for c in &dataset.clips {
        for v in [c.action, c.subject, c.frames()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in c.joints3d.iter().chain(&c.joints2d) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    fn u32_at<R: Read>(r: &mut R) -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    }
    fn f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect())
    }

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("dataset: bad magic, expected PLB1".into()));
    }
    let n_ac = u32_at(&mut r)?;
    let joints = u32_at(&mut r)?;
    let count = u32_at(&mut r)?;
    if n_ac == 0 || joints == 0 {
        return Err(Error::Format("dataset: zero actions or joints".into()));
    }
    let mut clips = Vec::with_capacity(count);
    for i in 0..count {
        let action = u32_at(&mut r)?;
        let subject = u32_at(&mut r)?;
        let t = u32_at(&mut r)?;
        if action >= n_ac {
            return Err(Error::Format(format!("dataset: clip {i} has action {action} >= {n_ac}")));
        }
        let joints3d = f64s(&mut r, t * joints * 3)?;
        let joints2d = f64s(&mut r, t * joints * 2)?;
        clips.push(PoseClip {
            action,
            subject,
            joints,
            joints3d,
            joints2d,
        });
    }
    Ok(Dataset { n_ac, joints, clips })
}

/// One CSV row per frame: clip index, action, subject, frame, then every
/// joint's 3D coordinates followed by every joint's 2D coordinates.
pub fn write_dataset_csv<W: Write>(dataset: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["clip".to_string(), "action".into(), "subject".into(), "frame".into()];
    for j in 0..dataset.joints {
        header.extend(["x", "y", "z"].map(|a| format!("j{j}_{a}")));
    }
    for j in 0..dataset.joints {
        header.extend(["u", "v"].map(|a| format!("j{j}_{a}")));
    }
    out.write_record(&header).map_err(csv_err)?;
    for (ci, c) in dataset.clips.iter().enumerate() {
        for f in 0..c.frames() {
            let mut row = vec![ci.to_string(), action_label(c.action), c.subject.to_string(), f.to_string()];
            row.extend(c.pose3d(f).iter().map(|v| v.to_string()));
            row.extend(c.joints2d[f * 2 * c.joints..(f + 1) * 2 * c.joints].iter().map(|v| v.to_string()));
            out.write_record(&row).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}
