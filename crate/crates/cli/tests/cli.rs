use std::path::Path;
use std::process::{Command, Output};

use mer_core::audio_io::{synth_partials, write_wav};

fn mer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mer")).args(args).output().unwrap()
}

fn tone(path: &Path, seconds: f64) {
    write_wav(path, &synth_partials(&[(220.0, 1.0), (330.0, 0.5)], seconds, 1e-3, 2).unwrap()).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    let o = mer(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("spectrogram"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(mer(&["train"]).status.code(), Some(1));
    assert_eq!(mer(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn six_seconds_give_one_grid() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    tone(&wav, 6.0);
    let out = dir.path().join("out");
    let o = mer(&["spectrogram", "--audio", p(&wav), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("clip_000_mel.f32").exists());
    assert!(!out.join("clip_001_mel.f32").exists());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("clip_000_mel.json")).unwrap()).unwrap();
    assert_eq!(meta["rows"], 256);
    assert_eq!(meta["cols"], 517);
}

#[test]
fn thirteen_seconds_give_two_grids() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    tone(&wav, 13.0);
    let out = dir.path().join("out");
    let o = mer(&["spectrogram", "--audio", p(&wav), "--out", p(&out), "--stft"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("clip_001_mel.f32").exists());
    assert!(out.join("clip_001_stft.f32").exists());
    assert!(!out.join("clip_002_mel.f32").exists());
}

#[test]
fn missing_audio_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = mer(&["spectrogram", "--audio", "/no/such/file.wav", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn identical_predictions_insert_at_distance_zero() {
    let dir = tempfile::tempdir().unwrap();
    let content = dir.path().join("content.csv");
    let ads = dir.path().join("ads.csv");
    let mut rows = String::from("id,q1,q2,q3,q4\n");
    for slot in 1..=3 {
        for _ in 0..5 {
            let d = if slot == 2 { "0.1,0.2,0.3,0.4" } else { "0.7,0.1,0.1,0.1" };
            rows.push_str(&format!("film#{slot},{d}\n"));
        }
    }
    std::fs::write(&content, rows).unwrap();
    std::fs::write(&ads, "id,q1,q2,q3,q4\nspot,0.1,0.2,0.3,0.4\n").unwrap();
    let out = dir.path().join("plan");
    let arg = format!("m={},{}", p(&content), p(&ads));
    let o = mer(&["insert", "--model", &arg, "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let plans: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("plans.json")).unwrap()).unwrap();
    let plan = &plans[0]["plans"][0];
    assert_eq!(plan["chosen_slot"], 1);
    assert!(plan["distances"][1].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn malformed_model_argument_is_usage() {
    assert_eq!(mer(&["insert", "--model", "nofiles", "--out", "x"]).status.code(), Some(1));
}
