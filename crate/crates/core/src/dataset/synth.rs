//! Synthetic four-quadrant clips. Valence follows consonance: just triads
//! with a bass octave for Q1/Q4, equal-tempered dissonant dyads for Q2/Q3. Arousal follows articulation
//! and timbre: short repeated pulses with partials up to a high ceiling for
//! Q1/Q2, sustained tones with a few low partials for Q3/Q4.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_manifest, Annotation, ClipRecord, ClipSet, LabelScale, CLIP_SECONDS};
use crate::audio_io::{clip_len, synth_partials, write_wav, Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::quadrant::Quadrant;

/// Just intervals (within one octave) allowed between any two notes of a
/// consonant stack, after octave reduction.
pub const CONSONANT_RATIOS: [f64; 8] = [1.0, 2.0, 1.5, 4.0 / 3.0, 1.25, 1.2, 5.0 / 3.0, 1.6];

const SEMITONE: f64 = 1.059_463_094_359_295_3;

fn default_consonant() -> Vec<Vec<f64>> {
    vec![vec![0.5, 1.0, 1.25, 1.5, 2.0], vec![0.5, 1.0, 1.2, 1.5, 2.0]]
}

fn default_dissonant() -> Vec<Vec<i32>> {
    vec![vec![0, 1], vec![0, 6], vec![0, 11]]
}

fn ratio_is_consonant(mut r: f64) -> bool {
    while r > 2.02 {
        r /= 2.0;
    }
    CONSONANT_RATIOS.iter().any(|c| (r / c - 1.0).abs() <= 0.01)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDesign {
    /// Consonant stacks as frequency ratios to the root (positive valence).
    pub consonant_chords: Vec<Vec<f64>>,
    /// Clusters as semitone offsets from the root (negative valence).
    pub dissonant_clusters: Vec<Vec<i32>>,
    /// Roots are drawn from the 12 equal-tempered steps above this pitch.
    pub root_base_hz: f64,
    /// Highest partial frequency for high-arousal tones.
    pub bright_ceiling_hz: f64,
    /// Partials per tone for low-arousal tones.
    pub damped_partials: usize,
    /// Chords per clip, each with a fresh random root.
    pub chords_per_clip: usize,
    /// Pulse rate of high-arousal clips.
    pub pulse_hz: f64,
    /// Fraction of each pulse period that sounds in high-arousal clips.
    pub pulse_duty: f64,
    /// Noise standard deviation relative to the output peak.
    pub noise_level: f64,
}

impl Default for SynthDesign {
    fn default() -> Self {
        Self {
            consonant_chords: default_consonant(),
            dissonant_clusters: default_dissonant(),
            root_base_hz: 220.0,
            bright_ceiling_hz: 10_000.0,
            damped_partials: 4,
            chords_per_clip: 1,
            pulse_hz: 4.0,
            pulse_duty: 0.4,
            noise_level: 1e-3,
        }
    }
}

impl SynthDesign {
    pub fn validate(&self) -> Result<()> {
        let ok = self.root_base_hz > 0.0
            && self.bright_ceiling_hz > 0.0
            && self.damped_partials > 0
            && (1..=60).contains(&self.chords_per_clip)
            && self.pulse_hz > 0.0
            && self.pulse_duty > 0.0
            && self.pulse_duty <= 1.0
            && self.noise_level >= 0.0
            && !self.consonant_chords.is_empty()
            && !self.dissonant_clusters.is_empty()
            && self.dissonant_clusters.iter().all(|c| !c.is_empty())
            && self.consonant_chords.iter().all(|c| {
                !c.is_empty()
                    && c.iter().all(|&r| r > 0.0)
                    && c.iter().all(|&a| c.iter().all(|&b| ratio_is_consonant(a.max(b) / a.min(b))))
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Range(format!("invalid synthesis design {self:?}")))
        }
    }

    /// Fundamentals of one chord for quadrant `q`.
    pub fn fundamentals(&self, q: Quadrant, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let root = self.root_base_hz * SEMITONE.powi(rng.random_range(0..12));
        if q.positive_valence() {
            let chord = &self.consonant_chords[rng.random_range(0..self.consonant_chords.len())];
            chord.iter().map(|r| root * r).collect()
        } else {
            let cluster = &self.dissonant_clusters[rng.random_range(0..self.dissonant_clusters.len())];
            cluster.iter().map(|&s| root * SEMITONE.powi(s)).collect()
        }
    }

    fn partial_count(&self, q: Quadrant, f0: f64) -> usize {
        let nyquist_cap = ((CANONICAL_RATE as f64 / 2.0 - 1.0) / f0).floor() as usize;
        let n = if q.high_arousal() {
            (self.bright_ceiling_hz / f0).floor() as usize
        } else {
            self.damped_partials
        };
        n.clamp(1, nyquist_cap.max(1))
    }

    /// Every partial `(Hz, amplitude)` of one clip, 1/n rolloff per tone.
    pub fn partials(&self, q: Quadrant, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for f0 in self.fundamentals(q, rng) {
            let count = self.partial_count(q, f0);
            out.extend((1..=count).map(|n| (n as f64 * f0, 1.0 / n as f64)));
        }
        out
    }
}

/// Gain envelope for quadrant `q`: flat for low arousal, gated pulses with
/// 5 ms raised-cosine edges and a random phase for high arousal.
pub fn articulation(design: &SynthDesign, q: Quadrant, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if !q.high_arousal() || design.pulse_duty >= 1.0 {
        return vec![1.0; len];
    }
    let sr = CANONICAL_RATE as f64;
    let period = sr / design.pulse_hz;
    let on = design.pulse_duty * period;
    let ramp = (0.005 * sr).min(on / 2.0).max(1.0);
    let phase = rng.random::<f64>() * period;
    (0..len)
        .map(|i| {
            let t = (i as f64 + phase) % period;
            let edge = t.min(on - t);
            if edge <= 0.0 {
                0.0
            } else if edge < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * edge / ramp).cos()
            } else {
                1.0
            }
        })
        .collect()
}

fn clip_rng(seed: u64, q: Quadrant, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((q.index() as u64) << 32) | i as u64);
    rng
}

/// One 6 s clip for quadrant `q`: a sequence of chords joined with 10 ms
/// raised-cosine fades.
pub fn synth_clip(design: &SynthDesign, q: Quadrant, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let n = clip_len(CLIP_SECONDS);
    let k = design.chords_per_clip.max(1);
    let sr = CANONICAL_RATE as f64;
    let fade = (0.010 * sr) as usize;
    let mut x: Vec<f64> = Vec::with_capacity(n);
    for s in 0..k {
        let len = (s + 1) * n / k - s * n / k;
        let partials = design.partials(q, rng);
        let seg = synth_partials(&partials, len as f64 / sr, 0.0, rng.random())?;
        let seg = seg.samples();
        for (i, &v) in seg.iter().enumerate() {
            let edge = i.min(seg.len() - 1 - i);
            let g = if k > 1 && edge < fade {
                0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / fade as f64).cos()
            } else {
                1.0
            };
            x.push(v as f64 * g);
        }
    }
    let env = articulation(design, q, x.len(), rng);
    x.iter_mut().zip(&env).for_each(|(v, g)| *v *= g);
    if design.noise_level > 0.0 {
        for v in &mut x {
            let z: f64 = rng.sample(StandardNormal);
            *v += design.noise_level * 0.9 * z;
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = if peak > 0.0 { 0.9 / peak } else { 0.0 };
    Waveform::new(x.into_iter().map(|v| (v * g) as f32).collect(), CANONICAL_RATE)
}

/// Writes `n_per_quadrant` clips per quadrant as PCM16 WAVs plus
/// `manifest.csv` into `dir`. Clip `i` of quadrant `q` is always
/// `synth_q{q}_{i}`; only its audio depends on `seed`.
pub fn synth_dataset(n_per_quadrant: usize, seed: u64, design: &SynthDesign, dir: impl AsRef<Path>) -> Result<ClipSet> {
    design.validate()?;
    if n_per_quadrant == 0 {
        return Err(Error::Range("need at least one clip per quadrant".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jobs: Vec<(Quadrant, usize)> = Quadrant::ALL
        .iter()
        .flat_map(|&q| (0..n_per_quadrant).map(move |i| (q, i)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(q, i)| {
            let song = format!("synth_q{}_{i:03}", q.index() + 1);
            let file = format!("{song}.wav");
            let w = synth_clip(design, q, &mut clip_rng(seed, q, i))?;
            let path = dir.join(&file);
            write_wav(&path, &w)?;
            Ok(ClipRecord {
                song_id: song,
                audio_path: path,
                start_s: 0.0,
                clip_s: CLIP_SECONDS,
                scale: LabelScale::Quadrant,
                annotation: Annotation::Direct(q),
                quadrant: q,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let set = ClipSet::new("synthetic", records);
    // Paths in the manifest are relative so the directory can move.
    let mut portable = set.clone();
    for r in &mut portable.records {
        r.audio_path = r.audio_path.file_name().expect("file name").into();
    }
    write_manifest(dir.join("manifest.csv"), &portable)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consonant_ratios_hold() {
        let d = SynthDesign::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let f = d.fundamentals(Quadrant::Q4, &mut rng);
            for i in 0..f.len() {
                for j in i + 1..f.len() {
                    assert!(ratio_is_consonant(f[j].max(f[i]) / f[j].min(f[i])), "{f:?}");
                }
            }
        }
    }

    #[test]
    fn non_consonant_stacks_are_rejected() {
        let d = SynthDesign {
            consonant_chords: vec![vec![1.0, 1.4]],
            ..SynthDesign::default()
        };
        assert!(d.validate().is_err());
        let wide = SynthDesign {
            consonant_chords: vec![vec![1.0, 1.25, 3.0, 5.0]],
            ..SynthDesign::default()
        };
        assert!(wide.validate().is_ok());
        assert!(SynthDesign::default().validate().is_ok());
    }

    #[test]
    fn dissonant_intervals_are_not_consonant() {
        let d = SynthDesign::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for q in [Quadrant::Q2, Quadrant::Q3].repeat(50) {
            let f = d.fundamentals(q, &mut rng);
            assert!(f.len() >= 2);
            assert!(f.windows(2).all(|w| !ratio_is_consonant(w[1] / w[0])), "{f:?}");
        }
    }

    #[test]
    fn arousal_sets_partial_extent() {
        let d = SynthDesign::default();
        let rng = ChaCha8Rng::seed_from_u64(1);
        let top = |q| {
            d.partials(q, &mut rng.clone())
                .iter()
                .fold(0.0f64, |m, p| m.max(p.0))
        };
        assert!(top(Quadrant::Q1) > 5000.0);
        assert!(top(Quadrant::Q4) < 4.0 * 2.0 * 440.0);
        assert!(top(Quadrant::Q4) < top(Quadrant::Q1));
    }

    #[test]
    fn articulation_duty() {
        let d = SynthDesign::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 6 * 44_100;
        assert!(articulation(&d, Quadrant::Q4, n, &mut rng).iter().all(|&g| g == 1.0));
        let env = articulation(&d, Quadrant::Q2, n, &mut rng);
        let mean = env.iter().sum::<f64>() / n as f64;
        assert!((mean - (d.pulse_duty - 0.005 * d.pulse_hz)).abs() < 0.01, "{mean}");
        assert!(env.iter().all(|g| (0.0..=1.0).contains(g)));
    }

    #[test]
    fn clips_are_seeded() {
        let d = SynthDesign::default();
        let a = synth_clip(&d, Quadrant::Q2, &mut clip_rng(3, Quadrant::Q2, 4)).unwrap();
        let b = synth_clip(&d, Quadrant::Q2, &mut clip_rng(3, Quadrant::Q2, 4)).unwrap();
        let c = synth_clip(&d, Quadrant::Q2, &mut clip_rng(4, Quadrant::Q2, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 6 * 44_100);
    }

    #[test]
    fn dataset_layout_and_label_invariance() {
        let d = SynthDesign::default();
        let x = tempfile::tempdir().unwrap();
        let y = tempfile::tempdir().unwrap();
        let a = synth_dataset(2, 1, &d, x.path()).unwrap();
        let b = synth_dataset(2, 9, &d, y.path()).unwrap();
        assert_eq!(a.counts(), [2; 4]);
        assert_eq!(a.labels(), b.labels());
        let ids = |s: &ClipSet| s.records.iter().map(|r| r.song_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        let back = super::super::load_manifest(x.path().join("manifest.csv")).unwrap();
        assert_eq!(back.labels(), a.labels());
        assert_eq!(back.records[0].audio_path, a.records[0].audio_path);
        let w = back.records[5].load_audio().unwrap();
        assert_eq!(w.len(), 6 * 44_100);
    }
}
