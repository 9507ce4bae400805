//! Annotated clip manifests: quadrant mapping, manifest I/O, clip decoding
//! and the synthetic four-quadrant set.

mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{clip_len, read_wav, resample, Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::model::train::LabeledMel;
use crate::quadrant::Quadrant;
use crate::spectro::MelPipeline;

pub use synth::{synth_clip, synth_dataset, SynthDesign, CONSONANT_RATIOS};

pub const CLIP_SECONDS: f64 = 6.0;

/// Quadrant from valence/arousal around `midpoint`; values on the midpoint
/// count as positive.
pub fn map_quadrant_dimensional(valence: f64, arousal: f64, midpoint: (f64, f64)) -> Quadrant {
    match (valence >= midpoint.0, arousal >= midpoint.1) {
        (true, true) => Quadrant::Q1,
        (false, true) => Quadrant::Q2,
        (false, false) => Quadrant::Q3,
        (true, false) => Quadrant::Q4,
    }
}

pub fn map_quadrant_discrete(emotion: &str) -> Result<Quadrant> {
    match emotion.trim().to_ascii_lowercase().as_str() {
        "happy" => Ok(Quadrant::Q1),
        "fear" | "anger" => Ok(Quadrant::Q2),
        "sad" => Ok(Quadrant::Q3),
        "tender" => Ok(Quadrant::Q4),
        _ => Err(Error::UnmappedEmotion(emotion.to_string())),
    }
}

/// One continuous annotation sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSample {
    pub time_s: f64,
    pub valence: f64,
    pub arousal: f64,
}

/// Mean valence and arousal of the samples with `start_s <= t < end_s`.
pub fn window_average_labels(samples: &[LabelSample], start_s: f64, end_s: f64) -> Result<(f64, f64)> {
    let inside: Vec<&LabelSample> = samples
        .iter()
        .filter(|s| s.time_s >= start_s && s.time_s < end_s)
        .collect();
    if inside.is_empty() {
        return Err(Error::Input(format!("no annotations in [{start_s}, {end_s}) s")));
    }
    let n = inside.len() as f64;
    Ok((
        inside.iter().map(|s| s.valence).sum::<f64>() / n,
        inside.iter().map(|s| s.arousal).sum::<f64>() / n,
    ))
}

/// How a manifest row's annotation is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScale {
    /// 1..7 ratings around (4, 4), or a discrete emotion name.
    Soundtracks,
    /// Ratings centered on (0, 0).
    Deam,
    /// The quadrant is given directly.
    Quadrant,
}

impl LabelScale {
    pub fn name(self) -> &'static str {
        match self {
            LabelScale::Soundtracks => "soundtracks",
            LabelScale::Deam => "deam",
            LabelScale::Quadrant => "quadrant",
        }
    }

    pub fn midpoint(self) -> Option<(f64, f64)> {
        match self {
            LabelScale::Soundtracks => Some((4.0, 4.0)),
            LabelScale::Deam => Some((0.0, 0.0)),
            LabelScale::Quadrant => None,
        }
    }
}

impl fmt::Display for LabelScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "soundtracks" => Ok(LabelScale::Soundtracks),
            "deam" => Ok(LabelScale::Deam),
            "quadrant" => Ok(LabelScale::Quadrant),
            other => Err(Error::Input(format!(
                "scale {other:?} is not one of soundtracks, deam, quadrant"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Annotation {
    Dimensional {
        valence: f64,
        arousal: f64,
        midpoint: (f64, f64),
    },
    Discrete(String),
    Direct(Quadrant),
}

impl Annotation {
    pub fn resolve(&self) -> Result<Quadrant> {
        match self {
            Annotation::Dimensional {
                valence,
                arousal,
                midpoint,
            } => Ok(map_quadrant_dimensional(*valence, *arousal, *midpoint)),
            Annotation::Discrete(e) => map_quadrant_discrete(e),
            Annotation::Direct(q) => Ok(*q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub song_id: String,
    pub audio_path: PathBuf,
    pub start_s: f64,
    pub clip_s: f64,
    pub scale: LabelScale,
    pub annotation: Annotation,
    pub quadrant: Quadrant,
}

impl ClipRecord {
    /// `song@start` identifier used for clips downstream.
    pub fn clip_id(&self) -> String {
        format!("{}@{}", self.song_id, self.start_s)
    }

    /// Decodes the record's audio at the canonical rate and cuts out its clip.
    pub fn load_audio(&self) -> Result<Waveform> {
        let mut w = read_wav(&self.audio_path)?;
        if w.sample_rate_hz() != CANONICAL_RATE {
            w = resample(&w, CANONICAL_RATE)?;
        }
        let start = (self.start_s * CANONICAL_RATE as f64).round() as usize;
        let n = clip_len(self.clip_s);
        let samples = w.samples().get(start..start + n).ok_or_else(|| {
            Error::Input(format!(
                "{}: clip [{}, {}) s runs past the end of {:.3} s of audio",
                self.audio_path.display(),
                self.start_s,
                self.start_s + self.clip_s,
                w.duration_seconds()
            ))
        })?;
        Waveform::new(samples.to_vec(), CANONICAL_RATE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSet {
    pub name: String,
    pub records: Vec<ClipRecord>,
}

impl ClipSet {
    pub fn new(name: impl Into<String>, records: Vec<ClipRecord>) -> Self {
        Self {
            name: name.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for r in &self.records {
            c[r.quadrant.index()] += 1;
        }
        c
    }

    /// Label scales present, in sorted order.
    pub fn scales(&self) -> Vec<LabelScale> {
        let mut s: Vec<LabelScale> = self.records.iter().map(|r| r.scale).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn labels(&self) -> Vec<Quadrant> {
        self.records.iter().map(|r| r.quadrant).collect()
    }

    /// `(song id, quadrant)` per record, as the fold splitter wants it.
    pub fn song_labels(&self) -> Vec<(&str, Quadrant)> {
        self.records.iter().map(|r| (r.song_id.as_str(), r.quadrant)).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> ClipSet {
        ClipSet::new(self.name.clone(), idx.iter().map(|&i| self.records[i].clone()).collect())
    }

    /// Normalized mel grids for every record, computed in parallel.
    pub fn mels(&self, pipeline: &MelPipeline) -> Result<Vec<LabeledMel>> {
        self.records
            .par_iter()
            .map(|r| {
                let mel = pipeline.normalized(&r.load_audio()?)?;
                Ok(LabeledMel {
                    id: r.clip_id(),
                    mel: mel.grid,
                    label: r.quadrant,
                })
            })
            .collect()
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ManifestRow {
    song_id: String,
    audio_path: String,
    start_s: String,
    scale: String,
    valence: String,
    arousal: String,
    discrete_emotion: String,
    quadrant: String,
}

pub const MANIFEST_HEADER: [&str; 8] = [
    "song_id",
    "audio_path",
    "start_s",
    "scale",
    "valence",
    "arousal",
    "discrete_emotion",
    "quadrant",
];

fn parse_num(field: &str, v: &str) -> std::result::Result<Option<f64>, String> {
    let v = v.trim();
    if v.is_empty() {
        return Ok(None);
    }
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(Some(x)),
        _ => Err(format!("{field} {v:?} is not a finite number")),
    }
}

fn resolve_row(row: &ManifestRow, base: &Path) -> std::result::Result<ClipRecord, String> {
    if row.song_id.trim().is_empty() {
        return Err("empty song_id".into());
    }
    let scale: LabelScale = row.scale.parse().map_err(|e: Error| e.to_string())?;
    let start_s = parse_num("start_s", &row.start_s)?.unwrap_or(0.0);
    if start_s < 0.0 {
        return Err(format!("negative start_s {start_s}"));
    }
    let valence = parse_num("valence", &row.valence)?;
    let arousal = parse_num("arousal", &row.arousal)?;
    let given = match row.quadrant.trim() {
        "" => None,
        q => Some(q.parse::<Quadrant>().map_err(|e| e.to_string())?),
    };
    let emotion = row.discrete_emotion.trim();
    let dimensional = || -> std::result::Result<Annotation, String> {
        match (valence, arousal) {
            (Some(v), Some(a)) => Ok(Annotation::Dimensional {
                valence: v,
                arousal: a,
                midpoint: scale.midpoint().expect("dimensional scale"),
            }),
            _ => Err(format!("{scale} row needs valence and arousal")),
        }
    };
    let annotation = match scale {
        LabelScale::Quadrant => Annotation::Direct(given.ok_or("quadrant row without a quadrant")?),
        LabelScale::Deam => dimensional()?,
        LabelScale::Soundtracks if !emotion.is_empty() => match map_quadrant_discrete(emotion) {
            Ok(_) => Annotation::Discrete(emotion.to_string()),
            // Emotions outside the five-way mapping fall back to the ratings.
            Err(e) => dimensional().map_err(|d| format!("{e}; {d}"))?,
        },
        LabelScale::Soundtracks => dimensional()?,
    };
    let quadrant = annotation.resolve().map_err(|e| e.to_string())?;
    if let Some(q) = given {
        if q != quadrant {
            return Err(format!("quadrant column says {q} but the annotation resolves to {quadrant}"));
        }
    }
    let raw = PathBuf::from(row.audio_path.trim());
    if raw.as_os_str().is_empty() {
        return Err("empty audio_path".into());
    }
    let audio_path = if raw.is_absolute() { raw } else { base.join(raw) };
    if !audio_path.is_file() {
        return Err(format!("audio file {} does not exist", audio_path.display()));
    }
    Ok(ClipRecord {
        song_id: row.song_id.trim().to_string(),
        audio_path,
        start_s,
        clip_s: CLIP_SECONDS,
        scale,
        annotation,
        quadrant,
    })
}

/// Parses manifest CSV text. Relative audio paths resolve against `base`.
/// Every bad row is reported; any problem rejects the whole manifest.
pub fn parse_manifest(text: &str, base: &Path, name: &str) -> Result<ClipSet> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let missing: Vec<&str> = MANIFEST_HEADER
        .iter()
        .copied()
        .filter(|h| !headers.iter().any(|x| x.trim() == *h))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Load(vec![format!("header lacks columns {missing:?}")]));
    }
    let mut problems = Vec::new();
    let mut records = Vec::new();
    for (i, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        match row {
            Err(e) => problems.push(format!("line {line}: {e}")),
            Ok(row) => match resolve_row(&row, base) {
                Ok(r) => records.push((line, r)),
                Err(e) => problems.push(format!("line {line}: {e}")),
            },
        }
    }
    let mut by_song: BTreeMap<&str, Vec<(f64, usize)>> = BTreeMap::new();
    for (line, r) in &records {
        by_song.entry(&r.song_id).or_default().push((r.start_s, *line));
    }
    for (song, mut starts) in by_song {
        starts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in starts.windows(2) {
            if w[1].0 - w[0].0 < CLIP_SECONDS - 1e-9 {
                problems.push(format!(
                    "line {}: clip of {song} at {} s overlaps the clip at {} s (line {})",
                    w[1].1, w[1].0, w[0].0, w[0].1
                ));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Load(problems));
    }
    Ok(ClipSet::new(name, records.into_iter().map(|(_, r)| r).collect()))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<ClipSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load(vec![format!("{}: {e}", path.display())]))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_stem()
        .map_or_else(|| "manifest".to_string(), |s| s.to_string_lossy().into_owned());
    parse_manifest(&text, base, &name)
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Manifest CSV for `set`; audio paths are written as stored.
pub fn manifest_csv(set: &ClipSet) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)?;
    for r in &set.records {
        let mut row = ManifestRow {
            song_id: r.song_id.clone(),
            audio_path: r.audio_path.to_string_lossy().into_owned(),
            start_s: num(r.start_s),
            scale: r.scale.name().into(),
            quadrant: r.quadrant.to_string(),
            ..Default::default()
        };
        match &r.annotation {
            Annotation::Dimensional { valence, arousal, .. } => {
                row.valence = num(*valence);
                row.arousal = num(*arousal);
            }
            Annotation::Discrete(e) => row.discrete_emotion = e.clone(),
            Annotation::Direct(_) => {}
        }
        w.serialize(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<manifest>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_manifest(path: impl AsRef<Path>, set: &ClipSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest_csv(set)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::write_wav;
    use Quadrant::*;

    #[test]
    fn dimensional_boundaries() {
        assert_eq!(map_quadrant_dimensional(6.0, 6.0, (4.0, 4.0)), Q1);
        assert_eq!(map_quadrant_dimensional(0.0, 0.0, (0.0, 0.0)), Q1);
        assert_eq!(map_quadrant_dimensional(-0.3, 0.2, (0.0, 0.0)), Q2);
        assert_eq!(map_quadrant_dimensional(-0.3, -0.2, (0.0, 0.0)), Q3);
        assert_eq!(map_quadrant_dimensional(0.5, -0.2, (0.0, 0.0)), Q4);
        assert_eq!(map_quadrant_dimensional(4.0, 3.9, (4.0, 4.0)), Q4);
    }

    #[test]
    fn discrete_mapping() {
        assert_eq!(map_quadrant_discrete("happy").unwrap(), Q1);
        assert_eq!(map_quadrant_discrete("anger").unwrap(), Q2);
        assert_eq!(map_quadrant_discrete("Fear").unwrap(), Q2);
        assert_eq!(map_quadrant_discrete("sad").unwrap(), Q3);
        assert_eq!(map_quadrant_discrete("tender").unwrap(), Q4);
        assert!(matches!(map_quadrant_discrete("surprise"), Err(Error::UnmappedEmotion(_))));
    }

    #[test]
    fn window_averages() {
        let constant: Vec<LabelSample> = (0..20)
            .map(|i| LabelSample { time_s: i as f64 * 0.5, valence: 0.3, arousal: -0.1 })
            .collect();
        let (v, a) = window_average_labels(&constant, 0.0, 6.0).unwrap();
        assert!((v - 0.3).abs() < 1e-12 && (a + 0.1).abs() < 1e-12);
        let alt: Vec<LabelSample> = (0..12)
            .map(|i| LabelSample {
                time_s: 15.0 + i as f64 * 0.5,
                valence: if i % 2 == 0 { 1.0 } else { -1.0 },
                arousal: 0.0,
            })
            .collect();
        assert_eq!(window_average_labels(&alt, 15.0, 21.0).unwrap().0, 0.0);
        // Samples at 15.0..20.5 fall in; the next window is empty.
        assert!(window_average_labels(&alt, 21.0, 27.0).is_err());
        // Hand-averaged: valences 0.2, 0.4, 0.9 in [1, 2.5); arousals 0.1, 0.1, 0.4.
        let fixture = [
            LabelSample { time_s: 0.5, valence: 9.0, arousal: 9.0 },
            LabelSample { time_s: 1.0, valence: 0.2, arousal: 0.1 },
            LabelSample { time_s: 1.5, valence: 0.4, arousal: 0.1 },
            LabelSample { time_s: 2.0, valence: 0.9, arousal: 0.4 },
            LabelSample { time_s: 2.5, valence: 9.0, arousal: 9.0 },
        ];
        let (v, a) = window_average_labels(&fixture, 1.0, 2.5).unwrap();
        assert!((v - 0.5).abs() < 1e-15 && (a - 0.2).abs() < 1e-15);
    }

    fn fixture_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::silence(13 * 44_100, 44_100);
        write_wav(dir.path().join("a.wav"), &w).unwrap();
        write_wav(dir.path().join("b.wav"), &w).unwrap();
        dir
    }

    const HEADER: &str = "song_id,audio_path,start_s,scale,valence,arousal,discrete_emotion,quadrant\n";

    #[test]
    fn mixed_scale_manifest() {
        let dir = fixture_dir();
        let text = HEADER.to_string()
            + "s1,a.wav,0,soundtracks,6,6,,\n\
               s1,a.wav,6,soundtracks,,,sad,\n\
               s2,\"b.wav\",0,deam,0.5,-0.2,,\n\
               s2,b.wav,6,deam,-0.5,0.7,,Q2\n\
               s3,b.wav,0,quadrant,,,,Q4\n\
               s4,a.wav,0,soundtracks,2,5,surprise,\n\
               s5,a.wav,0,soundtracks,,,tender,\n";
        let set = parse_manifest(&text, dir.path(), "mixed").unwrap();
        assert_eq!(set.counts(), [1, 2, 1, 3]);
        assert_eq!(set.records[2].quadrant, Q4);
        assert_eq!(set.records[5].quadrant, Q2);
        assert_eq!(set.scales(), vec![LabelScale::Soundtracks, LabelScale::Deam, LabelScale::Quadrant]);
        for r in &set.records {
            assert_eq!(r.annotation.resolve().unwrap(), r.quadrant);
        }
        let again = parse_manifest(&manifest_csv(&set).unwrap(), dir.path(), "mixed").unwrap();
        assert_eq!(again, set);
        let clip = set.records[1].load_audio().unwrap();
        assert_eq!(clip.len(), 6 * 44_100);
    }

    #[test]
    fn header_only_is_empty() {
        let set = parse_manifest(HEADER, Path::new("."), "e").unwrap();
        assert!(set.is_empty());
        assert_eq!(set.counts(), [0; 4]);
    }

    #[test]
    fn bad_rows_are_itemized_and_atomic() {
        let dir = fixture_dir();
        let text = HEADER.to_string()
            + "s1,a.wav,0,deam,0.1,0.1,,\n\
               s2,missing.wav,0,deam,0.1,0.1,,\n\
               s3,a.wav,0,richter,1,1,,\n\
               s4,a.wav,0,deam,0.1,,,\n\
               s5,a.wav,0,soundtracks,,,surprise,\n\
               s6,a.wav,0,deam,1,1,,Q3\n\
               s1,a.wav,3,deam,0.1,0.1,,\n";
        match parse_manifest(&text, dir.path(), "bad") {
            Err(Error::Load(items)) => {
                assert_eq!(items.len(), 6, "{items:#?}");
                assert!(items[0].starts_with("line 3:") && items[0].contains("missing.wav"));
                assert!(items.iter().any(|s| s.contains("overlaps")));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_manifest(dir.path().join("nope.csv")), Err(Error::Load(_))));
        assert!(matches!(parse_manifest("song_id,audio_path\n", dir.path(), "x"), Err(Error::Load(_))));
    }

    #[test]
    fn clip_past_end_is_an_error() {
        let dir = fixture_dir();
        let text = HEADER.to_string() + "s1,a.wav,9,quadrant,,,,Q1\n";
        let set = parse_manifest(&text, dir.path(), "x").unwrap();
        assert!(matches!(set.records[0].load_audio(), Err(Error::Input(_))));
    }
}
