//! Clip corpus: data model, line-delimited JSON on disk, the `FIBF`
//! binary feature-track container, and synthetic corpora for tests and
//! benchmarks.
//!
//! A corpus file holds one JSON record per line. Feature tracks live in
//! separate binary files referenced by paths relative to the corpus
//! file, keeping large tensors out of the text format.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::textpipe::{Tag, TaggedToken};
use crate::{rng_streams, seeded_rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

/// Per-frame (or per-segment) feature sequence: T time steps of D values.
///
/// Values are stored as `f32`, exactly as on disk; numeric code widens to
/// `f64` when it builds tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub timesteps: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureTrack {
    pub fn new(timesteps: usize, dim: usize, values: Vec<f32>) -> Result<FeatureTrack> {
        if timesteps == 0 || dim == 0 {
            return Err(Error::Validation(format!(
                "feature track dimensions must be positive, got {timesteps}x{dim}"
            )));
        }
        if values.len() != timesteps * dim {
            return Err(Error::Validation(format!(
                "feature track {timesteps}x{dim} needs {} values, got {}",
                timesteps * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature track value at index {pos}"
            )));
        }
        Ok(FeatureTrack {
            timesteps,
            dim,
            values,
        })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    /// Per-channel mean over time, in f64.
    pub fn time_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0f64; self.dim];
        for t in 0..self.timesteps {
            for (m, &v) in mean.iter_mut().zip(self.row(t)) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= self.timesteps as f64;
        }
        mean
    }
}

/// One annotated video segment.
#[derive(Debug, Clone)]
pub struct Clip {
    pub clip_id: String,
    pub split: Split,
    pub annotation: String,
    pub duration_s: Option<f64>,
    pub tracks: BTreeMap<String, FeatureTrack>,
    /// Present when the corpus came pre-tagged; bypasses the built-in
    /// tagger during generation.
    pub pretagged: Option<Vec<TaggedToken>>,
}

/// An ordered, immutable set of clips.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub clips: Vec<Clip>,
    pub provenance: String,
}

impl Corpus {
    pub fn new(clips: Vec<Clip>, provenance: impl Into<String>) -> Result<Corpus> {
        let mut seen = HashSet::new();
        for c in &clips {
            if !seen.insert(c.clip_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate clip_id {:?}",
                    c.clip_id
                )));
            }
            if c.annotation.is_empty() && c.pretagged.is_none() {
                return Err(Error::Validation(format!(
                    "clip {:?} has an empty annotation",
                    c.clip_id
                )));
            }
        }
        Ok(Corpus {
            clips,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for s in Split::ALL {
            counts.insert(s, 0);
        }
        for c in &self.clips {
            *counts.get_mut(&c.split).unwrap() += 1;
        }
        counts
    }

    pub fn clip(&self, clip_id: &str) -> Option<&Clip> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }
}

// ---------------------------------------------------------------------
// corpus file I/O (JSON lines)

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AnnotationField {
    Raw(String),
    /// Pre-tagged variant: a list of "token/TAG" pairs.
    Tagged(Vec<String>),
}

#[derive(Serialize, Deserialize)]
struct ClipRecord {
    clip_id: String,
    split: String,
    annotation: AnnotationField,
    #[serde(skip_serializing_if = "Option::is_none")]
    duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    tracks: BTreeMap<String, String>,
}

fn parse_tagged(items: &[String]) -> std::result::Result<Vec<TaggedToken>, String> {
    items
        .iter()
        .map(|item| {
            let (tok, tag) = item
                .rsplit_once('/')
                .ok_or_else(|| format!("pre-tagged item {item:?} lacks a /TAG suffix"))?;
            let tag = Tag::parse(tag).ok_or_else(|| format!("unknown tag in {item:?}"))?;
            if tok.is_empty() {
                return Err(format!("empty token in pre-tagged item {item:?}"));
            }
            Ok(TaggedToken::new(tok, tag))
        })
        .collect()
}

/// Loads a line-delimited corpus, reading every referenced feature track.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut clips = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ClipRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno, format!("malformed record: {e}")))?;
        let split = Split::parse(&record.split).ok_or_else(|| {
            Error::parse(
                path,
                lineno,
                format!("unknown split label {:?}", record.split),
            )
        })?;
        if !seen.insert(record.clip_id.clone()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate clip_id {:?}", record.clip_id),
            ));
        }

        let (annotation, pretagged) = match &record.annotation {
            AnnotationField::Raw(s) => {
                if s.is_empty() {
                    return Err(Error::parse(path, lineno, "empty annotation"));
                }
                (s.clone(), None)
            }
            AnnotationField::Tagged(items) => {
                if items.is_empty() {
                    return Err(Error::parse(path, lineno, "empty pre-tagged annotation"));
                }
                let tagged =
                    parse_tagged(items).map_err(|msg| Error::parse(path, lineno, msg))?;
                let surface = tagged
                    .iter()
                    .map(|t| t.surface.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                (surface, Some(tagged))
            }
        };

        let mut tracks = BTreeMap::new();
        for (name, rel) in &record.tracks {
            let track_path = dir.join(rel);
            let track = read_feature_track(&track_path)?;
            tracks.insert(name.clone(), track);
        }

        clips.push(Clip {
            clip_id: record.clip_id,
            split,
            annotation,
            duration_s: record.duration_s,
            tracks,
            pretagged,
        });
    }

    Corpus::new(clips, path.display().to_string())
}

/// Writes a corpus as JSON lines; feature tracks go to `<stem>_tracks/`
/// next to the corpus file.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    let track_dir_name = format!("{stem}_tracks");

    let mut out = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for clip in &corpus.clips {
        let mut track_refs = BTreeMap::new();
        for (name, track) in &clip.tracks {
            let rel =
                PathBuf::from(&track_dir_name).join(format!("{}_{}.fibf", clip.clip_id, name));
            let abs = dir.join(&rel);
            if let Some(parent) = abs.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_feature_track(track, &abs)?;
            track_refs.insert(name.clone(), rel.to_string_lossy().into_owned());
        }
        let annotation = match &clip.pretagged {
            Some(tagged) => AnnotationField::Tagged(
                tagged
                    .iter()
                    .map(|t| format!("{}/{}", t.surface, t.tag.as_str()))
                    .collect(),
            ),
            None => AnnotationField::Raw(clip.annotation.clone()),
        };
        let record = ClipRecord {
            clip_id: clip.clip_id.clone(),
            split: clip.split.as_str().into(),
            annotation,
            duration_s: clip.duration_s,
            tracks: track_refs,
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Validation(format!("serialize clip: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// FIBF feature-track files

const TRACK_MAGIC: &[u8; 4] = b"FIBF";
const TRACK_VERSION: u32 = 1;

/// Reads one `FIBF` file: magic, u32 version, u32 T, u32 D, then T·D
/// IEEE-754 f32 little-endian values, time-major.
pub fn read_feature_track(path: &Path) -> Result<FeatureTrack> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;

    let bad = |msg: String| Error::Validation(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 {
        return Err(bad("file shorter than the 16-byte header".into()));
    }
    if &bytes[0..4] != TRACK_MAGIC {
        return Err(bad(format!(
            "bad magic {:?} (expected FIBF)",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TRACK_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[16..];
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad(format!("header {t}x{d} overflows")))?;
    if payload.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, header {t}x{d} requires {expected}",
            payload.len()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureTrack::new(t, d, values).map_err(|e| bad(e.to_string()))
}

/// Writes a track in the `FIBF` layout. Tracks with non-finite values are
/// rejected before anything is written.
pub fn write_feature_track(track: &FeatureTrack, path: &Path) -> Result<()> {
    if let Some(pos) = track.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "feature track value at index {pos}; refusing to write {}",
            path.display()
        )));
    }
    let mut bytes = Vec::with_capacity(16 + track.values.len() * 4);
    bytes.extend_from_slice(TRACK_MAGIC);
    bytes.extend_from_slice(&TRACK_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(track.timesteps as u32).to_le_bytes());
    bytes.extend_from_slice(&(track.dim as u32).to_le_bytes());
    for v in &track.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------
// synthetic corpora

/// What, if anything, the video signal encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthSignal {
    /// Annotations and tracks are independent noise.
    None,
    /// Each annotation contains exactly one candidate word, and that word
    /// is a fixed function of the argmax channel of the time-mean of the
    /// clip's "2d" track. The answer is recoverable from video alone.
    FeatureArgmax,
}

impl SynthSignal {
    pub fn parse(s: &str) -> Option<SynthSignal> {
        match s {
            "none" => Some(SynthSignal::None),
            "feature-argmax" => Some(SynthSignal::FeatureArgmax),
            _ => None,
        }
    }
}

/// The ten answers the feature-argmax signal can select, indexed by
/// argmax channel. All are nouns in the shipped lexicon.
pub const ARGMAX_WORDS: [&str; 10] = [
    "apple", "bottle", "camera", "donkey", "engine", "flower", "guitar", "hammer", "island",
    "jacket",
];

// Answer frequencies are mildly skewed, like real answer distributions:
// a clear majority word exists, so a text-only model converges to the
// majority baseline instead of hovering on selection noise around a
// uniform floor.
const ARGMAX_WEIGHTS: [u32; 10] = [3, 2, 2, 1, 1, 1, 1, 1, 1, 1];

fn draw_argmax_word(rng: &mut impl Rng) -> usize {
    let total: u32 = ARGMAX_WEIGHTS.iter().sum();
    let mut r = rng.gen_range(0..total);
    for (i, &w) in ARGMAX_WEIGHTS.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    ARGMAX_WEIGHTS.len() - 1
}

// Templates are built entirely from words the shipped lexicon tags OTHER,
// so the argmax word is the only blank candidate in the sentence.
const ARGMAX_TEMPLATES: [&str; 6] = [
    "she and he with the {} by it",
    "from the {} to them and us",
    "it and the {} by us",
    "the {} of this and that",
    "he or she at the {} with him",
    "they and we by the {} from it",
];

// Word bank for signal-free annotations: content words in three
// frequency bands plus OTHER-tagged filler.
const BANK_COMMON: [&str; 8] = [
    "man", "woman", "walks", "looks", "door", "head", "turns", "room",
];
const BANK_MIDDLE: [&str; 12] = [
    "smiles", "nods", "car", "window", "table", "opens", "holds", "street", "night", "face",
    "stands", "hand",
];
const BANK_RARE: [&str; 16] = [
    "guitar", "ladder", "bridge", "candle", "mirror", "whispers", "garden", "blanket", "helmet",
    "pocket", "shivers", "stumbles", "balcony", "lantern", "meadow", "harbor",
];
const BANK_FILLER: [&str; 12] = [
    "the", "a", "she", "he", "it", "and", "to", "of", "in", "on", "at", "with",
];

fn synth_split(index: usize) -> Split {
    match index % 10 {
        8 => Split::Val,
        9 => Split::Test,
        _ => Split::Train,
    }
}

fn synth_track(
    rng: &mut impl Rng,
    timesteps: usize,
    dim: usize,
    boost: Option<usize>,
) -> FeatureTrack {
    let mut values = Vec::with_capacity(timesteps * dim);
    for _ in 0..timesteps {
        for d in 0..dim {
            let mut v: f32 = rng.gen::<f32>(); // uniform [0,1)
            if boost == Some(d) {
                v += 2.0;
            }
            values.push(v);
        }
    }
    FeatureTrack::new(timesteps, dim, values).expect("synthetic track is always valid")
}

/// Deterministic synthetic corpus.
///
/// Identical arguments produce byte-identical corpora on every platform:
/// all randomness flows from a ChaCha stream and no transcendental math
/// touches the emitted values.
pub fn synth_corpus(n_clips: usize, signal: SynthSignal, seed: u64) -> Corpus {
    assert!(n_clips >= 1, "synth_corpus needs at least one clip");
    let mut rng = seeded_rng(seed, rng_streams::SYNTH);
    let mut clips = Vec::with_capacity(n_clips);

    for i in 0..n_clips {
        let clip_id = format!("synth{i:05}");
        let split = synth_split(i);
        let track_len = rng.gen_range(8..=30);

        let (annotation, tracks) = match signal {
            SynthSignal::FeatureArgmax => {
                let word_idx = draw_argmax_word(&mut rng);
                let template_idx = rng.gen_range(0..ARGMAX_TEMPLATES.len());
                let annotation =
                    ARGMAX_TEMPLATES[template_idx].replacen("{}", ARGMAX_WORDS[word_idx], 1);
                let track = synth_track(&mut rng, track_len, 12, Some(word_idx));
                let mut tracks = BTreeMap::new();
                tracks.insert("2d".to_string(), track);
                tracks.insert(
                    "3d".to_string(),
                    synth_track(&mut rng, track_len / 2 + 1, 6, None),
                );
                (annotation, tracks)
            }
            SynthSignal::None => {
                let n_words = rng.gen_range(5..=9);
                let mut words = Vec::with_capacity(n_words);
                for _ in 0..n_words {
                    let bank: &[&str] = match rng.gen_range(0..10) {
                        0..=3 => &BANK_COMMON,
                        4..=5 => &BANK_MIDDLE,
                        6 => &BANK_RARE,
                        _ => &BANK_FILLER,
                    };
                    words.push(bank[rng.gen_range(0..bank.len())]);
                }
                let mut tracks = BTreeMap::new();
                tracks.insert("2d".to_string(), synth_track(&mut rng, track_len, 12, None));
                (words.join(" "), tracks)
            }
        };

        clips.push(Clip {
            clip_id,
            split,
            annotation,
            duration_s: Some(4.0 + (i % 20) as f64 * 0.1),
            tracks,
            pretagged: None,
        });
    }

    Corpus::new(clips, format!("synth(n={n_clips}, seed={seed})"))
        .expect("synthetic clip ids are unique")
}

/// Keeps the first ⌊p·N⌋ training clips of a seeded shuffle; validation
/// and test splits pass through untouched. Subsets nest: for the same
/// seed, a smaller fraction is a subset of a larger one.
pub fn subset_fraction(corpus: &Corpus, p: f64, seed: u64) -> Result<Corpus> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!(
            "data fraction must be in (0, 1], got {p}"
        )));
    }
    let train_ids: Vec<usize> = corpus
        .clips
        .iter()
        .enumerate()
        .filter(|(_, c)| c.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    let mut order = train_ids.clone();
    order.shuffle(&mut seeded_rng(seed, rng_streams::SUBSET));
    let keep_n = ((p * train_ids.len() as f64).floor() as usize).min(train_ids.len());
    let kept: HashSet<usize> = order.into_iter().take(keep_n).collect();

    let clips: Vec<Clip> = corpus
        .clips
        .iter()
        .enumerate()
        .filter(|(i, c)| c.split != Split::Train || kept.contains(i))
        .map(|(_, c)| c.clone())
        .collect();
    Corpus::new(
        clips,
        format!("{} [train fraction {p} seed {seed}]", corpus.provenance),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn load_three_valid_lines() {
        let dir = tmp();
        let p = dir.path().join("c.jsonl");
        std::fs::write(
            &p,
            r#"{"clip_id":"a","split":"train","annotation":"A man walks."}
{"clip_id":"b","split":"val","annotation":"She smiles.","duration_s":4.5}
{"clip_id":"c","split":"test","annotation":"The door opens."}
"#,
        )
        .unwrap();
        let corpus = load_corpus(&p).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.clips[0].clip_id, "a");
        assert_eq!(corpus.clips[1].duration_s, Some(4.5));
        assert_eq!(corpus.clips[2].split, Split::Test);
    }

    #[test]
    fn load_empty_file() {
        let dir = tmp();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "").unwrap();
        assert_eq!(load_corpus(&p).unwrap().len(), 0);
    }

    #[test]
    fn unknown_split_names_line_and_value() {
        let dir = tmp();
        let p = dir.path().join("c.jsonl");
        std::fs::write(
            &p,
            "{\"clip_id\":\"a\",\"split\":\"train\",\"annotation\":\"x\"}\n{\"clip_id\":\"b\",\"split\":\"trian\",\"annotation\":\"y\"}\n",
        )
        .unwrap();
        let err = load_corpus(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("trian"), "{err}");
    }

    #[test]
    fn duplicate_clip_id_rejected() {
        let dir = tmp();
        let p = dir.path().join("c.jsonl");
        std::fs::write(
            &p,
            "{\"clip_id\":\"a\",\"split\":\"train\",\"annotation\":\"x\"}\n{\"clip_id\":\"a\",\"split\":\"train\",\"annotation\":\"y\"}\n",
        )
        .unwrap();
        let err = load_corpus(&p).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(load_corpus(Path::new("/nonexistent/c.jsonl")).is_err());
    }

    #[test]
    fn pretagged_annotation_round_trips() {
        let dir = tmp();
        let p = dir.path().join("c.jsonl");
        std::fs::write(
            &p,
            r#"{"clip_id":"a","split":"train","annotation":["she/OTHER","shakes/VERB","her/OTHER","head/NOUN"]}"#,
        )
        .unwrap();
        let corpus = load_corpus(&p).unwrap();
        let tagged = corpus.clips[0].pretagged.as_ref().unwrap();
        assert_eq!(tagged.len(), 4);
        assert_eq!(tagged[1].lower, "shakes");
        assert_eq!(tagged[1].tag, Tag::Verb);
        assert_eq!(corpus.clips[0].annotation, "she shakes her head");
    }

    #[test]
    fn track_file_smallest_case_is_20_bytes() {
        let dir = tmp();
        let p = dir.path().join("t.fibf");
        let track = FeatureTrack::new(1, 1, vec![0.0]).unwrap();
        write_feature_track(&track, &p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 20);
    }

    #[test]
    fn track_round_trip_is_bit_exact() {
        let dir = tmp();
        let p = dir.path().join("t.fibf");
        let values: Vec<f32> = (0..12).map(|i| (i as f32 - 5.5) * 0.125).collect();
        let track = FeatureTrack::new(3, 4, values).unwrap();
        write_feature_track(&track, &p).unwrap();
        let back = read_feature_track(&p).unwrap();
        assert_eq!(back.timesteps, 3);
        assert_eq!(back.dim, 4);
        for (a, b) in back.values.iter().zip(&track.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn track_bad_magic_rejected() {
        let dir = tmp();
        let p = dir.path().join("t.fibf");
        std::fs::write(
            &p,
            b"XXXX\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00",
        )
        .unwrap();
        let err = read_feature_track(&p).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn track_payload_length_mismatch_rejected() {
        let dir = tmp();
        let p = dir.path().join("t.fibf");
        // header says 2x3 (24 payload bytes) but only 20 are present
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FIBF");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 20]);
        std::fs::write(&p, &bytes).unwrap();
        let err = read_feature_track(&p).unwrap_err().to_string();
        assert!(err.contains("24"), "{err}");
    }

    #[test]
    fn non_finite_track_rejected_on_both_sides() {
        assert!(FeatureTrack::new(1, 2, vec![1.0, f32::NAN]).is_err());

        let dir = tmp();
        let p = dir.path().join("t.fibf");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FIBF");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_feature_track(&p).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_corpus(10, SynthSignal::None, 7);
        let b = synth_corpus(10, SynthSignal::None, 7);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.clips.iter().zip(&b.clips) {
            assert_eq!(x.clip_id, y.clip_id);
            assert_eq!(x.annotation, y.annotation);
            assert_eq!(x.tracks, y.tracks);
        }
    }

    #[test]
    fn synth_single_clip_has_annotation() {
        let c = synth_corpus(1, SynthSignal::None, 0);
        assert_eq!(c.len(), 1);
        assert!(!c.clips[0].annotation.is_empty());
    }

    #[test]
    fn argmax_signal_is_recoverable_from_video_alone() {
        // independent recomputation of the argmax mapping over the corpus
        let corpus = synth_corpus(100, SynthSignal::FeatureArgmax, 1);
        for clip in &corpus.clips {
            let track = &clip.tracks["2d"];
            let mean = track.time_mean();
            let mut best = 0;
            for (i, &m) in mean.iter().enumerate() {
                if m > mean[best] {
                    best = i;
                }
            }
            let expected = ARGMAX_WORDS[best];
            let words: Vec<&str> = clip.annotation.split_whitespace().collect();
            assert_eq!(
                words.iter().filter(|w| **w == expected).count(),
                1,
                "clip {} annotation {:?} must contain {expected} exactly once",
                clip.clip_id,
                clip.annotation
            );
        }
    }

    #[test]
    fn save_load_round_trip_with_tracks() {
        let dir = tmp();
        let p = dir.path().join("c.jsonl");
        let corpus = synth_corpus(6, SynthSignal::FeatureArgmax, 3);
        save_corpus(&corpus, &p).unwrap();
        let back = load_corpus(&p).unwrap();
        assert_eq!(back.len(), corpus.len());
        for (a, b) in back.clips.iter().zip(&corpus.clips) {
            assert_eq!(a.clip_id, b.clip_id);
            assert_eq!(a.annotation, b.annotation);
            assert_eq!(a.tracks, b.tracks);
        }
    }

    #[test]
    fn subset_full_fraction_is_identity() {
        let corpus = synth_corpus(40, SynthSignal::None, 2);
        let sub = subset_fraction(&corpus, 1.0, 9).unwrap();
        assert_eq!(sub.len(), corpus.len());
        for (a, b) in sub.clips.iter().zip(&corpus.clips) {
            assert_eq!(a.clip_id, b.clip_id);
        }
    }

    #[test]
    fn subset_rejects_out_of_range() {
        let corpus = synth_corpus(5, SynthSignal::None, 2);
        assert!(subset_fraction(&corpus, 0.0, 1).is_err());
        assert!(subset_fraction(&corpus, 1.5, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn track_round_trip_property(t in 1usize..6, d in 1usize..6, seed in 0u64..1000) {
            let dir = tmp();
            let p = dir.path().join("t.fibf");
            let mut rng = crate::seeded_rng(seed, 99);
            let values: Vec<f32> =
                (0..t * d).map(|_| rand::Rng::gen::<f32>(&mut rng) * 100.0 - 50.0).collect();
            let track = FeatureTrack::new(t, d, values).unwrap();
            write_feature_track(&track, &p).unwrap();
            let back = read_feature_track(&p).unwrap();
            prop_assert_eq!(back, track);
        }

        #[test]
        fn subsets_nest(p1 in 0.05f64..0.5, p2 in 0.5f64..1.0, seed in 0u64..50) {
            let corpus = synth_corpus(60, SynthSignal::None, 11);
            let small = subset_fraction(&corpus, p1, seed).unwrap();
            let large = subset_fraction(&corpus, p2, seed).unwrap();
            let large_ids: std::collections::HashSet<&str> =
                large.clips.iter().map(|c| c.clip_id.as_str()).collect();
            for c in small.clips.iter().filter(|c| c.split == Split::Train) {
                prop_assert!(large_ids.contains(c.clip_id.as_str()));
            }
        }
    }
}
