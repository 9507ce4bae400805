use std::sync::{Mutex, OnceLock};

use mer_core::audio_io::synth_partials;
use mer_core::dataset::{synth_dataset, ClipSet, SynthDesign};
use mer_core::explain::{grad_cam, Score};
use mer_core::harmonics::{blinded_energy, BlinderSet};
use mer_core::model::train::predict_logits;
use mer_core::model::{train, ArchitectureSpec, EpochRecord, LabeledMel, Model, TrainConfig};
use mer_core::quadrant::{argmax, Quadrant};
use mer_core::spectro::MelPipeline;

fn energies(set: &ClipSet) -> Vec<(Vec<f64>, Quadrant)> {
    let pipe = MelPipeline::default();
    let blinders = BlinderSet::standard();
    set.records
        .iter()
        .map(|r| {
            let m = pipe.mel_power(&r.load_audio().unwrap()).unwrap();
            let e: Vec<f64> = blinders.iter().map(|b| blinded_energy(&m, b).unwrap()).collect();
            (e, r.quadrant)
        })
        .collect()
}

fn loo_1nn(data: &[(Vec<f64>, Quadrant)]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let hits = (0..data.len())
        .filter(|&i| {
            let nn = (0..data.len())
                .filter(|&j| j != i)
                .min_by(|&a, &b| dist(&data[i].0, &data[a].0).total_cmp(&dist(&data[i].0, &data[b].0)))
                .unwrap();
            data[nn].1 == data[i].1
        })
        .count();
    hits as f64 / data.len() as f64
}

#[test]
fn blinded_energies_separate_quadrants() {
    let dir = tempfile::tempdir().unwrap();
    let set = synth_dataset(40, 7, &SynthDesign::default(), dir.path()).unwrap();
    let acc = loo_1nn(&energies(&set));
    eprintln!("1-NN leave-one-out accuracy on blinded energies: {acc:.3}");
    assert!(acc >= 0.9, "{acc}");
}

struct Fixture {
    items: Vec<LabeledMel>,
    model: Mutex<Model<f32>>,
    log: Vec<EpochRecord>,
}

fn fit(items: &[LabeledMel]) -> (Model<f32>, Vec<EpochRecord>) {
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let model = Model::new(&ArchitectureSpec::default(), 4).unwrap();
    let out = train(model, items, &[], &cfg, |_| {}).unwrap();
    (out.model, out.log)
}

/// A 40-clip synthetic set trained for 30 epochs without a validation split.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let set = synth_dataset(10, 21, &SynthDesign::default(), dir.path()).unwrap();
        let items = set.mels(&MelPipeline::default()).unwrap();
        let (model, log) = fit(&items);
        Fixture { items, model: Mutex::new(model), log }
    })
}

fn octave_stack() -> mer_core::grid::Grid {
    let partials: Vec<(f64, f64)> = [440.0, 880.0]
        .iter()
        .flat_map(|&f0| (1..=4).map(move |n| (n as f64 * f0, 1.0 / n as f64)))
        .collect();
    let w = synth_partials(&partials, 6.0, 1e-3, 9).unwrap();
    MelPipeline::default().normalized(&w).unwrap().grid
}

fn inference_loss_and_accuracy(model: &mut Model<f32>, items: &[LabeledMel]) -> (f64, f64) {
    let logits = predict_logits(model, items, 16).unwrap();
    let (mut loss, mut correct) = (0.0, 0);
    for (z, c) in logits.iter().zip(items) {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - z[c.label.index()];
        correct += usize::from(argmax(&z[..]) == c.label.index());
    }
    let n = items.len() as f64;
    (loss / n, correct as f64 / n)
}

#[test]
fn training_fits_the_synthetic_set() {
    let f = fixture();
    let mut model = f.model.lock().unwrap_or_else(|e| e.into_inner());
    let (_, acc) = inference_loss_and_accuracy(&mut model, &f.items);
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn one_epoch_brings_loss_below_uniform() {
    let f = fixture();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let model = Model::new(&ArchitectureSpec::default(), 4).unwrap();
    let mut model = train(model, &f.items, &[], &cfg, |_| {}).unwrap().model;
    let (loss, _) = inference_loss_and_accuracy(&mut model, &f.items);
    assert!(loss < 4f64.ln(), "loss after one epoch {loss}");
}

#[test]
fn identical_seeds_give_identical_logs() {
    let f = fixture();
    let (_, log) = fit(&f.items);
    assert_eq!(log, f.log);
}

#[test]
fn octave_stack_reads_as_positive_valence() {
    let mut model = fixture().model.lock().unwrap_or_else(|e| e.into_inner());
    let q = model.predict_label(&octave_stack()).unwrap();
    assert!(q.positive_valence(), "{q}");
}

#[test]
fn consonant_stack_is_brighter_for_q4_than_q2() {
    let mut model = fixture().model.lock().unwrap_or_else(|e| e.into_inner());
    let mel = octave_stack();
    let q4 = grad_cam(&mut model, "octave", &mel, Quadrant::Q4, Score::Centered).unwrap();
    let q2 = grad_cam(&mut model, "octave", &mel, Quadrant::Q2, Score::Centered).unwrap();
    assert!(q4.brightness() > q2.brightness(), "{} vs {}", q4.brightness(), q2.brightness());
}
