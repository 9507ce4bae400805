//! Song-level stratified folds and quadrant balancing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quadrant::Quadrant;

/// Clip indices of one train/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Most frequent quadrant among a song's clips; ties go to the lower quadrant.
fn majority(labels: &[Quadrant]) -> Quadrant {
    let mut counts = [0usize; 4];
    for q in labels {
        counts[q.index()] += 1;
    }
    let best = (0..4).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    Quadrant::ALL[best]
}

/// Splits clips into `k` folds so that every song lands in exactly one test
/// fold. Songs are grouped by majority quadrant, shuffled, and dealt
/// round-robin; the dealing position carries over between strata so total
/// fold sizes stay even as well.
pub fn stratified_song_folds(clips: &[(&str, Quadrant)], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Input(format!("need at least 2 folds, got {k}")));
    }
    let mut songs: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (song, _)) in clips.iter().enumerate() {
        songs.entry(song).or_default().push(i);
    }
    if songs.len() < k {
        return Err(Error::Input(format!("{} songs cannot fill {k} folds", songs.len())));
    }
    let mut strata: [Vec<&str>; 4] = Default::default();
    for (song, idx) in &songs {
        let labels: Vec<Quadrant> = idx.iter().map(|&i| clips[i].1).collect();
        strata[majority(&labels).index()].push(song);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of_song: BTreeMap<&str, usize> = BTreeMap::new();
    let mut next = 0;
    for stratum in &mut strata {
        stratum.shuffle(&mut rng);
        for song in stratum.iter() {
            fold_of_song.insert(song, next);
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train) = (0..clips.len()).partition(|&i| fold_of_song[clips[i].0] == f);
            Fold { train, test }
        })
        .collect())
}

/// Splits the clips `idx` by song: about `fraction` of each majority-quadrant
/// stratum's songs (at least one when the stratum has two or more songs and
/// `fraction > 0`) go to the first list, the rest to the second. Both lists
/// keep the order of `idx`.
pub fn split_songs(
    clips: &[(&str, Quadrant)],
    idx: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Range(format!("song fraction {fraction} outside [0, 1]")));
    }
    let mut songs: BTreeMap<&str, Vec<Quadrant>> = BTreeMap::new();
    for &i in idx {
        let (song, q) = clips[i];
        songs.entry(song).or_default().push(q);
    }
    let mut strata: [Vec<&str>; 4] = Default::default();
    for (song, labels) in &songs {
        strata[majority(labels).index()].push(song);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = std::collections::BTreeSet::new();
    for stratum in &mut strata {
        stratum.shuffle(&mut rng);
        let mut take = (fraction * stratum.len() as f64).round() as usize;
        if fraction > 0.0 && take == 0 && stratum.len() >= 2 {
            take = 1;
        }
        picked.extend(stratum.iter().take(take).copied());
    }
    Ok(idx.iter().partition(|&&i| picked.contains(clips[i].0)))
}

/// Randomly drops clips from over-represented quadrants until the largest
/// quadrant has at most `cap` times as many clips as the smallest nonempty
/// one. Returns the kept indices in ascending order.
pub fn balance_subsample(labels: &[Quadrant], cap: f64, seed: u64) -> Result<Vec<usize>> {
    if !(cap > 1.0) {
        return Err(Error::Range(format!("balance cap must exceed 1, got {cap}")));
    }
    let mut by_q: [Vec<usize>; 4] = Default::default();
    for (i, q) in labels.iter().enumerate() {
        by_q[q.index()].push(i);
    }
    let Some(min) = by_q.iter().map(Vec::len).filter(|&n| n > 0).min() else {
        return Ok(Vec::new());
    };
    let limit = (cap * min as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(labels.len());
    for group in &mut by_q {
        if group.len() > limit {
            group.shuffle(&mut rng);
            group.truncate(limit);
        }
        kept.extend_from_slice(group);
    }
    kept.sort_unstable();
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use Quadrant::*;

    fn manifest(songs: usize, clips_per_song: usize) -> Vec<(String, Quadrant)> {
        (0..songs)
            .flat_map(|s| (0..clips_per_song).map(move |_| (format!("song{s}"), Quadrant::ALL[(s * 7 / 3) % 4])))
            .collect()
    }

    fn view(m: &[(String, Quadrant)]) -> Vec<(&str, Quadrant)> {
        m.iter().map(|(s, q)| (s.as_str(), *q)).collect()
    }

    #[test]
    fn songs_never_split() {
        let m = manifest(57, 3);
        let v = view(&m);
        let folds = stratified_song_folds(&v, 10, 1).unwrap();
        let mut seen = HashSet::new();
        for f in &folds {
            assert_eq!(f.train.len() + f.test.len(), v.len());
            let songs: HashSet<&str> = f.test.iter().map(|&i| v[i].0).collect();
            for s in &songs {
                assert!(seen.insert(*s), "{s} in two test folds");
            }
            for &i in &f.train {
                assert!(!songs.contains(v[i].0));
            }
        }
        assert_eq!(seen.len(), 57);
    }

    #[test]
    fn strata_are_balanced() {
        let m = manifest(200, 2);
        let v = view(&m);
        let folds = stratified_song_folds(&v, 10, 4).unwrap();
        for q in Quadrant::ALL {
            let per_fold: Vec<usize> = folds
                .iter()
                .map(|f| f.test.iter().filter(|&&i| v[i].1 == q).count() / 2)
                .collect();
            let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
            assert!(hi - lo <= 1, "{q}: {per_fold:?}");
        }
        let global: Vec<f64> = Quadrant::ALL
            .iter()
            .map(|&q| v.iter().filter(|c| c.1 == q).count() as f64 / v.len() as f64)
            .collect();
        for f in &folds {
            for q in Quadrant::ALL {
                let share = f.test.iter().filter(|&&i| v[i].1 == q).count() as f64 / f.test.len() as f64;
                assert!((share - global[q.index()]).abs() <= 0.10);
            }
        }
    }

    #[test]
    fn too_few_songs() {
        let m = manifest(5, 4);
        assert!(matches!(stratified_song_folds(&view(&m), 10, 0), Err(Error::Input(_))));
        assert!(stratified_song_folds(&view(&m), 1, 0).is_err());
    }

    #[test]
    fn song_split_fractions() {
        let m = manifest(40, 2);
        let v = view(&m);
        let all: Vec<usize> = (0..v.len()).collect();
        let (held, rest) = split_songs(&v, &all, 0.25, 3).unwrap();
        assert_eq!(held.len() + rest.len(), v.len());
        let held_songs: HashSet<&str> = held.iter().map(|&i| v[i].0).collect();
        assert!((9..=11).contains(&held_songs.len()));
        assert!(rest.iter().all(|&i| !held_songs.contains(v[i].0)));
        for q in Quadrant::ALL {
            assert!(held.iter().any(|&i| v[i].1 == q));
        }
        assert_eq!(split_songs(&v, &all, 0.0, 3).unwrap().0, Vec::<usize>::new());
        assert_eq!(split_songs(&v, &all, 1.0, 3).unwrap().0, all);
        assert!(split_songs(&v, &all, 1.5, 3).is_err());
    }

    #[test]
    fn balance_cap_arithmetic() {
        let mut labels = vec![Q1; 300];
        labels.extend([Q2; 100]);
        labels.extend([Q3; 100]);
        labels.extend([Q4; 100]);
        let kept = balance_subsample(&labels, 1.5, 3).unwrap();
        let q1 = kept.iter().filter(|&&i| labels[i] == Q1).count();
        assert_eq!(q1, 150);
        assert_eq!(kept.len(), 450);
        assert_eq!(kept, balance_subsample(&labels, 1.5, 3).unwrap());
        let even: Vec<Quadrant> = Quadrant::ALL.iter().flat_map(|&q| [q; 100]).collect();
        assert_eq!(balance_subsample(&even, 1.5, 0).unwrap().len(), 400);
        assert!(balance_subsample(&even, 1.0, 0).is_err());
    }
}
