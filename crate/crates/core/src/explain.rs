//! Grad-CAM heatmaps per pitch class and brightness aggregates.
//!
//! For target quadrant `j` and pitch class `p`, with `A` the post-ReLU
//! feature maps of branch `p` (`C x T`) and `y_j` the pre-softmax score:
//! `alpha_f = mean_t dy_j/dA_ft` and row `p` of the heatmap is
//! `ReLU(sum_f alpha_f A_ft)`.
//!
//! The score is by default the centered logit `z_j - mean_k z_k`. Adding one
//! vector to every row of the output layer leaves the softmax, the loss and
//! every prediction unchanged but shifts each raw-logit heatmap, so raw
//! brightness partly reflects the initialization rather than the training.
//! [`Score::Logit`] gives the raw-logit maps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{write_grid, Grid, GridHeader};
use crate::harmonics::PitchClass;
use crate::model::train::LabeledMel;
use crate::model::{batch_tensor, Model, Variant};
use crate::nn::{Ctx, Real, Tensor};
use crate::quadrant::Quadrant;
use crate::spectro::StftConfig;

/// Per-pitch-class activation map, rows ordered A..G#.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub clip_id: String,
    pub target: Quadrant,
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub clip_id: String,
    pub target: Quadrant,
    pub brightness: f64,
    pub rows: Vec<String>,
}

impl Heatmap {
    /// Sum of all entries.
    pub fn brightness(&self) -> f64 {
        self.grid.sum()
    }

    /// Writes `<stem>.json` + `<stem>.f32` (raw grid), `<stem>.meta.json` and
    /// `<stem>.pgm` rendered at `scale`.
    pub fn export(&self, dir: impl AsRef<Path>, stem: &str, scale: usize) -> Result<()> {
        let dir = dir.as_ref();
        let cfg = StftConfig::default();
        let header = GridHeader {
            rows: self.grid.rows(),
            cols: self.grid.cols(),
            scale: "pitch_class".into(),
            bin_hz: 0.0,
            frame_hop_s: cfg.hop as f64 / cfg.sample_rate as f64,
        };
        write_grid(dir, stem, &header, &self.grid)?;
        let meta = HeatmapMeta {
            clip_id: self.clip_id.clone(),
            target: self.target,
            brightness: self.brightness(),
            rows: PitchClass::ALL
                .iter()
                .take(self.grid.rows())
                .map(|p| p.name().to_string())
                .collect(),
        };
        let path = dir.join(format!("{stem}.meta.json"));
        std::fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
        self.grid.write_pgm(dir.join(format!("{stem}.pgm")), scale)
    }
}

/// Which pre-softmax score the maps explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    /// `z_j - mean_k z_k`, invariant to a shift shared by all class rows.
    #[default]
    Centered,
    /// The raw logit `z_j`.
    Logit,
}

fn target_grad<T: Real>(targets: &[Quadrant], score: Score) -> Tensor<T> {
    let base = match score {
        Score::Centered => -0.25,
        Score::Logit => 0.0,
    };
    let mut g = Tensor::zeros(&[targets.len(), 4]);
    for (s, q) in targets.iter().enumerate() {
        for (k, v) in g.sample_mut(s).iter_mut().enumerate() {
            *v = T::from_f64(if k == q.index() { 1.0 + base } else { base });
        }
    }
    g
}

/// `ReLU(sum_c alpha_c A_c)` over the trailing spatial positions of one
/// sample, with `alpha_c` the spatial mean of the gradient.
fn weighted_map<T: Real>(a: &[T], g: &[T], channels: usize) -> Vec<f64> {
    let n = a.len() / channels;
    let mut out = vec![0.0f64; n];
    for c in 0..channels {
        let gc = &g[c * n..(c + 1) * n];
        let alpha = gc.iter().map(|&v| Real::to_f64(v)).sum::<f64>() / n as f64;
        if alpha == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(&a[c * n..(c + 1) * n]) {
            *o += alpha * Real::to_f64(*v);
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Forward in inference mode, then backpropagate the gradient of each
/// sample's target score. Parameter gradients are cleared afterwards.
fn backprop_targets<T: Real>(model: &mut Model<T>, mels: &[&Grid], targets: &[Quadrant], score: Score) -> Result<()> {
    let x = batch_tensor::<T>(mels)?;
    model.forward(&x, &mut Ctx::infer())?;
    model.backward(&target_grad(targets, score))?;
    model.zero_grad();
    Ok(())
}

/// Heatmaps for `(clip id, mel, target)` triples, `batch` at a time.
pub fn grad_cam_many<T: Real>(
    model: &mut Model<T>,
    items: &[(&str, &Grid, Quadrant)],
    score: Score,
    batch: usize,
) -> Result<Vec<Heatmap>> {
    if model.spec().variant != Variant::Harmonics {
        return Err(Error::UnsupportedVariant(format!(
            "per-pitch-class Grad-CAM needs the harmonics variant, not {}",
            model.spec().variant
        )));
    }
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch.max(1)) {
        let mels: Vec<&Grid> = chunk.iter().map(|c| c.1).collect();
        let targets: Vec<Quadrant> = chunk.iter().map(|c| c.2).collect();
        backprop_targets(model, &mels, &targets, score)?;
        let net = model.harmonics().expect("variant checked");
        let (pcs, ch) = (net.n_branches(), net.channels());
        let t = mels[0].cols();
        let mut grids = vec![Grid::zeros(pcs, t); chunk.len()];
        for p in 0..pcs {
            let (a, g) = match (net.features(p), net.feature_grad(p)) {
                (Some(a), Some(g)) => (a, g),
                _ => return Err(Error::State("branch feature maps missing after backward".into())),
            };
            for (s, grid) in grids.iter_mut().enumerate() {
                let row = weighted_map(a.sample(s), g.sample(s), ch);
                for (d, v) in grid.row_mut(p).iter_mut().zip(row) {
                    *d = v as f32;
                }
            }
        }
        out.extend(chunk.iter().zip(grids).map(|(c, grid)| Heatmap {
            clip_id: c.0.to_string(),
            target: c.2,
            grid,
        }));
    }
    Ok(out)
}

/// Heatmap of one clip for one target quadrant.
pub fn grad_cam<T: Real>(
    model: &mut Model<T>,
    clip_id: &str,
    mel: &Grid,
    target: Quadrant,
    score: Score,
) -> Result<Heatmap> {
    Ok(grad_cam_many(model, &[(clip_id, mel, target)], score, 1)?.remove(0))
}

/// Spatial Grad-CAM of a benchmark model: one map per feature tower, taken
/// at the tower's last convolutional stage (`H x W` after pooling).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCam {
    pub clip_id: String,
    pub target: Quadrant,
    pub towers: Vec<Grid>,
}

pub fn benchmark_cam<T: Real>(
    model: &mut Model<T>,
    clip_id: &str,
    mel: &Grid,
    target: Quadrant,
    score: Score,
) -> Result<SpatialCam> {
    if model.spec().variant == Variant::Harmonics {
        return Err(Error::UnsupportedVariant(
            "use grad_cam for the harmonics variant".into(),
        ));
    }
    backprop_targets(model, &[mel], &[target], score)?;
    let net = model.benchmark().expect("not harmonics");
    let mut towers = Vec::with_capacity(net.n_towers());
    for i in 0..net.n_towers() {
        let (a, g) = match (net.features(i), net.feature_grad(i)) {
            (Some(a), Some(g)) => (a, g),
            _ => return Err(Error::State("tower feature maps missing after backward".into())),
        };
        let (c, h, w) = (a.shape()[1], a.shape()[2], a.shape()[3]);
        let map = weighted_map(a.sample(0), g.sample(0), c);
        towers.push(Grid::from_vec(h, w, map.into_iter().map(|v| v as f32).collect())?);
    }
    Ok(SpatialCam {
        clip_id: clip_id.into(),
        target,
        towers,
    })
}

/// Which heatmaps feed a clip's brightness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targeting {
    /// The heatmap targeted at the clip's own true quadrant.
    #[default]
    TrueLabel,
    /// The mean over the four target heatmaps.
    AllTargets,
}

/// Heatmaps of one labeled clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipHeatmaps {
    pub clip_id: String,
    pub label: Option<Quadrant>,
    pub heatmaps: Vec<Heatmap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipBrightness {
    pub clip_id: String,
    pub label: Quadrant,
    /// Brightness per target quadrant, where computed.
    pub by_target: [Option<f64>; 4],
    /// The value aggregated into the quadrant means.
    pub brightness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub q1_gt_q2: bool,
    pub q4_gt_q3: bool,
    pub q4_gt_q1: bool,
    pub q3_gt_q2: bool,
}

impl Verdicts {
    pub fn all(&self) -> bool {
        self.q1_gt_q2 && self.q4_gt_q3 && self.q4_gt_q1 && self.q3_gt_q2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrightnessReport {
    pub targeting: Targeting,
    pub clips: Vec<ClipBrightness>,
    pub counts: [usize; 4],
    /// Mean brightness per true quadrant; `None` for an empty quadrant.
    pub means: [Option<f64>; 4],
    pub verdicts: Verdicts,
}

pub fn brightness_report(clips: &[ClipHeatmaps], targeting: Targeting) -> Result<BrightnessReport> {
    let mut rows = Vec::with_capacity(clips.len());
    for c in clips {
        let label = c
            .label
            .ok_or_else(|| Error::Input(format!("clip {:?} has no true label", c.clip_id)))?;
        let mut by_target = [None; 4];
        for h in &c.heatmaps {
            by_target[h.target.index()] = Some(h.brightness());
        }
        let brightness = match targeting {
            Targeting::TrueLabel => by_target[label.index()].ok_or_else(|| {
                Error::Input(format!("clip {:?} lacks a heatmap for its label {label}", c.clip_id))
            })?,
            Targeting::AllTargets => {
                let mut s = 0.0;
                for (q, b) in Quadrant::ALL.iter().zip(by_target) {
                    s += b.ok_or_else(|| {
                        Error::Input(format!("clip {:?} lacks a heatmap for target {q}", c.clip_id))
                    })?;
                }
                s / 4.0
            }
        };
        rows.push(ClipBrightness {
            clip_id: c.clip_id.clone(),
            label,
            by_target,
            brightness,
        });
    }
    let mut counts = [0usize; 4];
    let mut sums = [0.0f64; 4];
    for r in &rows {
        counts[r.label.index()] += 1;
        sums[r.label.index()] += r.brightness;
    }
    let means: [Option<f64>; 4] = std::array::from_fn(|i| (counts[i] > 0).then(|| sums[i] / counts[i] as f64));
    let gt = |a: usize, b: usize| matches!((means[a], means[b]), (Some(x), Some(y)) if x > y);
    Ok(BrightnessReport {
        targeting,
        clips: rows,
        counts,
        means,
        verdicts: Verdicts {
            q1_gt_q2: gt(0, 1),
            q4_gt_q3: gt(3, 2),
            q4_gt_q1: gt(3, 0),
            q3_gt_q2: gt(2, 1),
        },
    })
}

impl BrightnessReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for q in Quadrant::ALL {
            let m = self.means[q.index()].map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            s.push_str(&format!("B{} = {m} (n = {})\n", q.index() + 1, self.counts[q.index()]));
        }
        let v = &self.verdicts;
        for (name, ok) in [
            ("B1 > B2", v.q1_gt_q2),
            ("B4 > B3", v.q4_gt_q3),
            ("B4 > B1", v.q4_gt_q1),
            ("B3 > B2", v.q3_gt_q2),
        ] {
            s.push_str(&format!("{name}: {}\n", if ok { "holds" } else { "fails" }));
        }
        s
    }
}

/// Computes the heatmaps `targeting` needs for every clip and aggregates them.
pub fn explain_set<T: Real>(
    model: &mut Model<T>,
    clips: &[LabeledMel],
    targeting: Targeting,
    score: Score,
    batch: usize,
) -> Result<(Vec<ClipHeatmaps>, BrightnessReport)> {
    let items: Vec<(&str, &Grid, Quadrant)> = match targeting {
        Targeting::TrueLabel => clips.iter().map(|c| (c.id.as_str(), &c.mel, c.label)).collect(),
        Targeting::AllTargets => clips
            .iter()
            .flat_map(|c| Quadrant::ALL.map(|q| (c.id.as_str(), &c.mel, q)))
            .collect(),
    };
    let per_clip = items.len() / clips.len().max(1);
    let mut maps = grad_cam_many(model, &items, score, batch)?.into_iter();
    let grouped: Vec<ClipHeatmaps> = clips
        .iter()
        .map(|c| ClipHeatmaps {
            clip_id: c.id.clone(),
            label: Some(c.label),
            heatmaps: maps.by_ref().take(per_clip).collect(),
        })
        .collect();
    let report = brightness_report(&grouped, targeting)?;
    Ok((grouped, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::BlinderSet;
    use crate::model::ArchitectureSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ROWS: usize = 16;

    fn tiny(seed: u64) -> Model<f64> {
        let spec = ArchitectureSpec {
            variant: Variant::Harmonics,
            channels: 3,
            n_mels: ROWS,
            ..Default::default()
        };
        let cols = (0..12)
            .map(|p| (0..ROWS).map(|r| if (r + p) % 4 == 0 { 1.0 } else { 0.2 }).collect())
            .collect();
        let mut m = Model::with_blinders(&spec, &BlinderSet::from_weights(cols).unwrap(), seed).unwrap();
        // Non-trivial running statistics.
        let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
        let x = Tensor::from_vec(&[4, 1, ROWS, 9], (0..4 * ROWS * 9).map(|_| r.random::<f64>()).collect()).unwrap();
        for _ in 0..5 {
            m.forward(&x, &mut Ctx::train(1)).unwrap();
        }
        m
    }

    fn random_mel(seed: u64, cols: usize) -> Grid {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_vec(ROWS, cols, (0..ROWS * cols).map(|_| r.random::<f32>()).collect()).unwrap()
    }

    /// Heatmap rows rebuilt from alphas estimated by perturbing each
    /// feature-map entry directly and re-running the head.
    #[test]
    fn matches_finite_difference_alphas() {
        let mut m = tiny(7);
        let mel = random_mel(3, 9);
        let target = Quadrant::Q3;
        let h = grad_cam(&mut m, "x", &mel, target, Score::Logit).unwrap();
        let net = m.harmonics().unwrap();
        let (ch, t) = (net.channels(), mel.cols());
        let feats: Vec<Vec<f64>> = (0..12).map(|p| net.features(p).unwrap().data().to_vec()).collect();
        let fc = net.fc_weight().data().to_vec();
        let bias = m.params().last().unwrap().value.data().to_vec();
        // Head: mean over time, max over pitch classes, linear.
        let logit = |f: &[Vec<f64>]| -> f64 {
            (0..ch)
                .map(|c| {
                    let pooled = (0..12)
                        .map(|p| f[p][c * t..(c + 1) * t].iter().sum::<f64>() / t as f64)
                        .fold(f64::NEG_INFINITY, f64::max);
                    fc[target.index() * ch + c] * pooled
                })
                .sum::<f64>()
                + bias[target.index()]
        };
        let eps = 1e-6;
        for p in 0..12 {
            let mut row = vec![0.0; t];
            for c in 0..ch {
                let mut alpha = 0.0;
                for k in 0..t {
                    let mut up = feats.clone();
                    up[p][c * t + k] += eps;
                    let mut dn = feats.clone();
                    dn[p][c * t + k] -= eps;
                    alpha += (logit(&up) - logit(&dn)) / (2.0 * eps);
                }
                alpha /= t as f64;
                for k in 0..t {
                    row[k] += alpha * feats[p][c * t + k];
                }
            }
            for k in 0..t {
                let want = row[k].max(0.0);
                let got = h.grid.get(p, k) as f64;
                assert!((got - want).abs() <= 1e-3 * want.abs().max(1e-6) + 1e-6, "p{p} t{k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn zero_head_gives_zero_heatmap() {
        let mut m = tiny(1);
        m.harmonics_mut().unwrap().fc_weight_mut().fill(0.0);
        let h = grad_cam(&mut m, "z", &random_mel(4, 7), Quadrant::Q2, Score::Centered).unwrap();
        assert!(h.grid.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_class_weights_scales_heatmap() {
        let mel = random_mel(9, 8);
        let mut m = tiny(2);
        let base = grad_cam(&mut m, "a", &mel, Quadrant::Q4, Score::Logit).unwrap();
        let ch = m.harmonics().unwrap().channels();
        let w = m.harmonics_mut().unwrap().fc_weight_mut();
        for v in &mut w.data_mut()[3 * ch..4 * ch] {
            *v *= 2.5;
        }
        let scaled = grad_cam(&mut m, "a", &mel, Quadrant::Q4, Score::Logit).unwrap();
        for (a, b) in base.grid.data().iter().zip(scaled.grid.data()) {
            assert!((2.5 * a - b).abs() <= 1e-5 * b.abs().max(1.0));
            assert!(*b >= 0.0);
        }
    }

    #[test]
    fn centered_maps_ignore_a_shared_row_shift() {
        let mel = random_mel(11, 8);
        let mut m = tiny(3);
        let before: Vec<Heatmap> = Quadrant::ALL
            .iter()
            .map(|&q| grad_cam(&mut m, "a", &mel, q, Score::Centered).unwrap())
            .collect();
        let raw_before = grad_cam(&mut m, "a", &mel, Quadrant::Q2, Score::Logit).unwrap();
        let ch = m.harmonics().unwrap().channels();
        let w = m.harmonics_mut().unwrap().fc_weight_mut();
        for row in w.data_mut().chunks_mut(ch) {
            for (c, v) in row.iter_mut().enumerate() {
                *v += 0.3 * (c as f64 - 1.0);
            }
        }
        for (q, b) in Quadrant::ALL.iter().zip(&before) {
            let after = grad_cam(&mut m, "a", &mel, *q, Score::Centered).unwrap();
            for (x, y) in b.grid.data().iter().zip(after.grid.data()) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
        let raw_after = grad_cam(&mut m, "a", &mel, Quadrant::Q2, Score::Logit).unwrap();
        assert_ne!(raw_before.grid, raw_after.grid);
    }

    #[test]
    fn batched_equals_single() {
        let mut m = tiny(5);
        let mels = [random_mel(1, 6), random_mel(2, 6), random_mel(3, 6)];
        let items: Vec<(&str, &Grid, Quadrant)> = mels
            .iter()
            .zip([Quadrant::Q1, Quadrant::Q4, Quadrant::Q2])
            .map(|(g, q)| ("c", g, q))
            .collect();
        let many = grad_cam_many(&mut m, &items, Score::Centered, 2).unwrap();
        for (h, (_, g, q)) in many.iter().zip(&items) {
            let one = grad_cam(&mut m, "c", g, *q, Score::Centered).unwrap();
            for (a, b) in h.grid.data().iter().zip(one.grid.data()) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_benchmark_variants() {
        let mut m = Model::<f32>::new(&ArchitectureSpec::for_variant(Variant::Time), 0).unwrap();
        let mel = Grid::zeros(256, 70);
        assert!(matches!(grad_cam(&mut m, "x", &mel, Quadrant::Q1, Score::Centered), Err(Error::UnsupportedVariant(_))));
        let cam = benchmark_cam(&mut m, "x", &mel, Quadrant::Q1, Score::Centered).unwrap();
        assert_eq!(cam.towers.len(), 1);
        assert_eq!(cam.towers[0].shape(), (256, 7));
        assert!(cam.towers[0].data().iter().all(|&v| v >= 0.0));
    }

    fn uniform(q: Quadrant, v: f32) -> Heatmap {
        Heatmap {
            clip_id: "u".into(),
            target: q,
            grid: Grid::from_vec(12, 517, vec![v; 12 * 517]).unwrap(),
        }
    }

    #[test]
    fn report_arithmetic() {
        let one = ClipHeatmaps {
            clip_id: "a".into(),
            label: Some(Quadrant::Q1),
            heatmaps: vec![uniform(Quadrant::Q1, 1.0)],
        };
        let r = brightness_report(&[one.clone()], Targeting::TrueLabel).unwrap();
        assert_eq!(r.means[0], Some(6204.0));
        assert_eq!(r.means[1], None);
        assert!(!r.verdicts.q1_gt_q2);
        let r2 = brightness_report(&[one.clone(), one.clone()], Targeting::TrueLabel).unwrap();
        assert_eq!(r2.means[0], Some(6204.0));
        let mut missing = one.clone();
        missing.label = None;
        assert!(matches!(brightness_report(&[missing], Targeting::TrueLabel), Err(Error::Input(_))));
        assert!(brightness_report(&[one], Targeting::AllTargets).is_err());
    }

    #[test]
    fn verdicts_follow_means() {
        let clip = |q: Quadrant, v: f32| ClipHeatmaps {
            clip_id: q.to_string(),
            label: Some(q),
            heatmaps: Quadrant::ALL.iter().map(|&t| uniform(t, if t == q { v } else { 0.0 })).collect(),
        };
        let clips = [clip(Quadrant::Q1, 53.0), clip(Quadrant::Q2, 45.0), clip(Quadrant::Q3, 62.0), clip(Quadrant::Q4, 72.0)];
        let r = brightness_report(&clips, Targeting::TrueLabel).unwrap();
        assert!(r.verdicts.all());
        let flipped = [clip(Quadrant::Q1, 1.0), clip(Quadrant::Q2, 2.0), clip(Quadrant::Q3, 3.0), clip(Quadrant::Q4, 2.5)];
        let v = brightness_report(&flipped, Targeting::TrueLabel).unwrap().verdicts;
        assert_eq!((v.q1_gt_q2, v.q4_gt_q3, v.q4_gt_q1, v.q3_gt_q2), (false, false, true, true));
        let all = brightness_report(&clips, Targeting::AllTargets).unwrap();
        assert_eq!(all.means[3], Some(72.0 * 6204.0 / 4.0));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"q4_gt_q1\":true"));
    }

    #[test]
    fn export_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        uniform(Quadrant::Q3, 0.5).export(dir.path(), "h", 2).unwrap();
        let (hdr, g) = crate::grid::read_grid(dir.path(), "h").unwrap();
        assert_eq!((hdr.rows, hdr.cols), (12, 517));
        assert_eq!(g.get(5, 100), 0.5);
        let pgm = std::fs::read(dir.path().join("h.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n1034 24\n255\n"));
        let meta: HeatmapMeta =
            serde_json::from_slice(&std::fs::read(dir.path().join("h.meta.json")).unwrap()).unwrap();
        assert_eq!(meta.rows[0], "A");
        assert_eq!(meta.rows.len(), 12);
    }
}
