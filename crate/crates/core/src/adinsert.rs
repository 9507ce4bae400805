//! Emotion matching for ad placement: Jensen-Shannon distance between
//! quadrant distributions and argmin selection over insertion slots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrant::{argmax, Quadrant};

pub const SIMPLEX_TOL: f64 = 1e-6;
/// Clips averaged into one content-slot distribution.
pub const CLIPS_PER_SLOT: usize = 5;
pub const TIE_POLICY: &str = "earliest";

/// Probabilities over Q1..Q4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct EmotionDistribution([f64; 4]);

impl EmotionDistribution {
    pub fn new(p: impl AsRef<[f64]>) -> Result<Self> {
        let p = p.as_ref();
        if p.len() != 4 {
            return Err(Error::Input(format!("{} probabilities, expected 4", p.len())));
        }
        if p.iter().any(|v| !v.is_finite() || *v < -SIMPLEX_TOL) {
            return Err(Error::Input(format!("{p:?} has negative or non-finite entries")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Input(format!("{p:?} sums to {s}, not 1")));
        }
        Ok(Self([p[0].max(0.0), p[1].max(0.0), p[2].max(0.0), p[3].max(0.0)]))
    }

    pub fn one_hot(q: Quadrant) -> Self {
        let mut p = [0.0; 4];
        p[q.index()] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64; 4] {
        &self.0
    }

    /// Most likely quadrant; ties go to the lower quadrant.
    pub fn mode(&self) -> Quadrant {
        Quadrant::ALL[argmax(&self.0)]
    }
}

impl TryFrom<[f64; 4]> for EmotionDistribution {
    type Error = Error;
    fn try_from(p: [f64; 4]) -> Result<Self> {
        Self::new(p)
    }
}

impl From<EmotionDistribution> for [f64; 4] {
    fn from(d: EmotionDistribution) -> Self {
        d.0
    }
}

/// Base-2 KL divergence with `0 log(0/x) = 0`.
fn kl2(p: &[f64; 4], m: &[f64; 4]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).log2())
        .sum()
}

/// `sqrt(KL(p||m)/2 + KL(q||m)/2)` with `m = (p+q)/2`, in `[0, 1]`.
pub fn js_distance(p: &EmotionDistribution, q: &EmotionDistribution) -> f64 {
    let m: [f64; 4] = std::array::from_fn(|i| 0.5 * (p.0[i] + q.0[i]));
    let d = 0.5 * kl2(&p.0, &m) + 0.5 * kl2(&q.0, &m);
    // Rounding can leave a tiny negative divergence for equal inputs.
    d.max(0.0).sqrt().min(1.0)
}

/// Validating form over raw probability slices.
pub fn js_distance_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(js_distance(&EmotionDistribution::new(p)?, &EmotionDistribution::new(q)?))
}

/// Component-wise mean of exactly five clip distributions.
pub fn content_slot_distribution(clips: &[EmotionDistribution]) -> Result<EmotionDistribution> {
    if clips.len() != CLIPS_PER_SLOT {
        return Err(Error::Input(format!(
            "a content slot averages {CLIPS_PER_SLOT} clips, got {}",
            clips.len()
        )));
    }
    let n = clips.len() as f64;
    let mean: [f64; 4] = std::array::from_fn(|i| clips.iter().map(|c| c.0[i]).sum::<f64>() / n);
    EmotionDistribution::new(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionPlan {
    pub content_id: String,
    pub ad_id: String,
    pub distances: Vec<f64>,
    /// Zero-based index of the chosen slot.
    pub chosen_slot: usize,
    pub tie_policy: String,
}

impl InsertionPlan {
    pub fn chosen_distance(&self) -> f64 {
        self.distances[self.chosen_slot]
    }
}

/// Picks the slot with the smallest distance to the ad, earliest on ties.
pub fn select_insertion(
    content_id: &str,
    ad_id: &str,
    slots: &[EmotionDistribution],
    ad: &EmotionDistribution,
) -> Result<InsertionPlan> {
    if slots.is_empty() {
        return Err(Error::Input(format!("content {content_id:?} has no insertion slots")));
    }
    let distances: Vec<f64> = slots.iter().map(|s| js_distance(s, ad)).collect();
    let mut chosen = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d < distances[chosen] {
            chosen = i;
        }
    }
    Ok(InsertionPlan {
        content_id: content_id.into(),
        ad_id: ad_id.into(),
        distances,
        chosen_slot: chosen,
        tie_policy: TIE_POLICY.into(),
    })
}

/// One prediction row: an entity id and its distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub dist: EmotionDistribution,
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    id: String,
    q1: f64,
    q2: f64,
    q3: f64,
    q4: f64,
}

/// Reads `id,q1,q2,q3,q4` rows.
pub fn read_predictions(r: impl Read) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(r).deserialize::<PredictionRow>().enumerate() {
        let row = row?;
        let dist = EmotionDistribution::new([row.q1, row.q2, row.q3, row.q4])
            .map_err(|e| Error::Input(format!("prediction row {} ({}): {e}", i + 1, row.id)))?;
        out.push(Prediction { id: row.id, dist });
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(f)
}

pub fn write_predictions(mut w: impl std::io::Write, preds: &[Prediction]) -> Result<()> {
    let mut s = String::from("id,q1,q2,q3,q4\n");
    for p in preds {
        let q = p.dist.probs();
        let _ = writeln!(s, "{},{},{},{},{}", csv_field(&p.id), q[0], q[1], q[2], q[3]);
    }
    w.write_all(s.as_bytes()).map_err(|e| Error::io("<predictions>", e))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Groups clip predictions with ids `<content>#<slot>` into per-content slot
/// distributions, each the mean of exactly five clips. Slots are ordered by
/// their numeric label.
pub fn group_content_slots(preds: &[Prediction]) -> Result<BTreeMap<String, Vec<EmotionDistribution>>> {
    let mut clips: BTreeMap<String, BTreeMap<u32, Vec<EmotionDistribution>>> = BTreeMap::new();
    for p in preds {
        let (content, slot) = p
            .id
            .rsplit_once('#')
            .ok_or_else(|| Error::Input(format!("content id {:?} lacks a #slot suffix", p.id)))?;
        let slot: u32 = slot
            .parse()
            .map_err(|_| Error::Input(format!("slot label in {:?} is not an integer", p.id)))?;
        clips
            .entry(content.to_string())
            .or_default()
            .entry(slot)
            .or_default()
            .push(p.dist);
    }
    clips
        .into_iter()
        .map(|(content, slots)| {
            let dists = slots
                .into_iter()
                .map(|(slot, c)| {
                    content_slot_distribution(&c)
                        .map_err(|e| Error::Input(format!("{content}#{slot}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((content, dists))
        })
        .collect()
}

/// Plans for every content x ad pair under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPlans {
    pub model: String,
    pub plans: Vec<InsertionPlan>,
}

/// Builds the full content x ad grid of plans.
pub fn plan_grid(
    model: &str,
    content: &BTreeMap<String, Vec<EmotionDistribution>>,
    ads: &[Prediction],
) -> Result<ModelPlans> {
    let mut plans = Vec::with_capacity(content.len() * ads.len());
    for (cid, slots) in content {
        for ad in ads {
            plans.push(select_insertion(cid, &ad.id, slots, &ad.dist)?);
        }
    }
    Ok(ModelPlans {
        model: model.into(),
        plans,
    })
}

/// Per-cell values keyed by `(content, ad, slot)`; slots are one-based as in
/// the external tables.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTable<V> {
    pub cells: BTreeMap<(String, String, usize), V>,
}

impl<V> Default for CellTable<V> {
    fn default() -> Self {
        Self { cells: BTreeMap::new() }
    }
}

impl<V: Clone> CellTable<V> {
    fn get(&self, plan: &InsertionPlan, what: &str) -> Result<V> {
        let key = (plan.content_id.clone(), plan.ad_id.clone(), plan.chosen_slot + 1);
        self.cells.get(&key).cloned().ok_or_else(|| {
            Error::Input(format!(
                "{what} table has no cell for content {:?}, ad {:?}, slot {}",
                key.0, key.1, key.2
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub skip_rate: f64,
    pub recall_rate: f64,
}

#[derive(Debug, Deserialize)]
struct OutcomeRow {
    content: String,
    ad: String,
    slot: usize,
    skip_rate: f64,
    recall_rate: f64,
}

#[derive(Debug, Deserialize)]
struct DistanceRow {
    content: String,
    ad: String,
    slot: usize,
    js_distance: f64,
}

/// Reads `content,ad,slot,skip_rate,recall_rate`.
pub fn read_outcomes(r: impl Read) -> Result<CellTable<Outcome>> {
    let mut t = CellTable::default();
    for row in csv::Reader::from_reader(r).deserialize::<OutcomeRow>() {
        let row = row?;
        t.cells.insert(
            (row.content, row.ad, row.slot),
            Outcome {
                skip_rate: row.skip_rate,
                recall_rate: row.recall_rate,
            },
        );
    }
    Ok(t)
}

/// Reads `content,ad,slot,js_distance` (reference distances, e.g. from
/// human tagging).
pub fn read_reference_distances(r: impl Read) -> Result<CellTable<f64>> {
    let mut t = CellTable::default();
    for row in csv::Reader::from_reader(r).deserialize::<DistanceRow>() {
        let row = row?;
        t.cells.insert((row.content, row.ad, row.slot), row.js_distance);
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub cells: usize,
    /// Mean model-predicted distance at the chosen slots.
    pub mean_predicted_distance: f64,
    /// Mean reference distance at the chosen slots, when a reference table is given.
    pub mean_reference_distance: Option<f64>,
    pub skip_rate: Option<f64>,
    pub recall_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub rows: Vec<ReportRow>,
}

fn pair_keys(p: &ModelPlans) -> Vec<(String, String)> {
    let mut k: Vec<(String, String)> = p
        .plans
        .iter()
        .map(|x| (x.content_id.clone(), x.ad_id.clone()))
        .collect();
    k.sort();
    k
}

/// Summarizes each model's chosen slots: mean distances and, when outcome
/// data is supplied, mean skip and recall rates at those slots.
pub fn plan_report(
    models: &[ModelPlans],
    reference: Option<&CellTable<f64>>,
    outcomes: Option<&CellTable<Outcome>>,
) -> Result<PlanReport> {
    let Some(first) = models.first() else {
        return Ok(PlanReport { rows: Vec::new() });
    };
    let grid = pair_keys(first);
    let contents: std::collections::BTreeSet<&String> = grid.iter().map(|k| &k.0).collect();
    let ads: std::collections::BTreeSet<&String> = grid.iter().map(|k| &k.1).collect();
    if grid.is_empty() || grid.len() != contents.len() * ads.len() || grid.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Input("plans do not form a complete content x ad grid".into()));
    }
    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        if pair_keys(m) != grid {
            return Err(Error::Input(format!(
                "model {:?} covers a different content x ad grid",
                m.model
            )));
        }
        let n = m.plans.len() as f64;
        let mean_predicted_distance = m.plans.iter().map(InsertionPlan::chosen_distance).sum::<f64>() / n;
        let mean_reference_distance = reference
            .map(|t| -> Result<f64> {
                let mut s = 0.0;
                for p in &m.plans {
                    s += t.get(p, "reference distance")?;
                }
                Ok(s / n)
            })
            .transpose()?;
        let (skip_rate, recall_rate) = match outcomes {
            Some(t) => {
                let (mut skip, mut recall) = (0.0, 0.0);
                for p in &m.plans {
                    let o = t.get(p, "outcome")?;
                    skip += o.skip_rate;
                    recall += o.recall_rate;
                }
                (Some(skip / n), Some(recall / n))
            }
            None => (None, None),
        };
        rows.push(ReportRow {
            model: m.model.clone(),
            cells: m.plans.len(),
            mean_predicted_distance,
            mean_reference_distance,
            skip_rate,
            recall_rate,
        });
    }
    Ok(PlanReport { rows })
}

impl PlanReport {
    /// One row per model: JS distance, skip rate, recall rate.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24}{:>14}{:>14}{:>12}{:>13}",
            "Model", "JS Distance", "(predicted)", "Skip Rate", "Recall Rate"
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24}{:>14}{:>14.4}{:>12}{:>13}",
                r.model,
                opt(r.mean_reference_distance),
                r.mean_predicted_distance,
                opt(r.skip_rate),
                opt(r.recall_rate)
            );
        }
        s
    }
}
