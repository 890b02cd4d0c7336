use poselift::synth::{gen_dataset, Dataset, GenConfig, PoseClip, SkeletonSpec};

/// Per bone and axis, the frequency (Hz) at which the bone vector crosses its
/// clip mean, a proxy for the joint-angle oscillation frequency.
fn features(clip: &PoseClip, skeleton: &SkeletonSpec, fps: f64) -> Vec<f64> {
    let t = clip.frames();
    let mut out = Vec::new();
    for j in 1..clip.joints {
        let p = skeleton.parent[j];
        for axis in 0..3 {
            let series: Vec<f64> = (0..t).map(|f| clip.pose3d(f)[3 * j + axis] - clip.pose3d(f)[3 * p + axis]).collect();
            let mean = series.iter().sum::<f64>() / t as f64;
            let crossings = series.windows(2).filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0).count();
            out.push(crossings as f64 * fps / (2.0 * t as f64));
        }
    }
    out
}

fn accuracy(dataset: &Dataset, skeleton: &SkeletonSpec, fps: f64) -> f64 {
    let feats: Vec<Vec<f64>> = dataset.clips.iter().map(|c| features(c, skeleton, fps)).collect();
    let mut correct = 0;
    // Leave-one-out nearest centroid.
    for (i, clip) in dataset.clips.iter().enumerate() {
        let mut best = (f64::INFINITY, usize::MAX);
        for a in 0..dataset.n_ac {
            let members: Vec<&Vec<f64>> = (0..dataset.clips.len())
                .filter(|&k| k != i && dataset.clips[k].action == a)
                .map(|k| &feats[k])
                .collect();
            let dist: f64 = (0..feats[i].len())
                .map(|d| {
                    let c = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                    (feats[i][d] - c).powi(2)
                })
                .sum();
            if dist < best.0 {
                best = (dist, a);
            }
        }
        if best.1 == clip.action {
            correct += 1;
        }
    }
    correct as f64 / dataset.clips.len() as f64
}

#[test]
fn actions_are_separable_by_motion_frequency() {
    let cfg = GenConfig {
        noise_px: 0.0,
        ..GenConfig::default()
    };
    let dataset = gen_dataset(&cfg).unwrap();
    let acc = accuracy(&dataset, &cfg.skeleton, cfg.fps);
    println!("nearest-centroid accuracy {acc:.3}");
    assert!(acc >= 0.9, "accuracy {acc}");
}
