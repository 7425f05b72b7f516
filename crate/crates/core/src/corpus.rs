//! Sample metadata, manifest I/O, corpus statistics, and a synthetic
//! corpus generator.
//!
//! A corpus is a flat list of speaker-change samples. Each sample points at
//! a media file and delimits the speech segment of the speaker who is about
//! to stop (or be interrupted); the label says whether the change happened
//! at a completed turn. Manifests are JSON-Lines: one sample per line,
//! UTF-8, append- and diff-friendly.

use crate::cue;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("manifest line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("duplicate sample_id `{0}`")]
    DuplicateSampleId(String),
    #[error("sample `{sample_id}`: {detail}")]
    MalformedTime { sample_id: String, detail: String },
    #[error("duration must be positive and finite, got {0}")]
    NonPositiveDuration(f64),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{name} must lie in {range}, got {value}")]
    InvalidFraction {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
    #[error("need at least {needed} shows, got {got}")]
    TooFewShows { needed: usize, got: usize },
    #[error("need at least one sample per show ({shows} shows, {samples} samples)")]
    TooFewSamples { shows: usize, samples: usize },
    #[error("manifest line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
}

/// Whether the speaker change happened at a completed (terminal) turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Terminal,
    NonTerminal,
}

impl Label {
    /// Class index used by the classifier heads: Terminal first.
    pub fn class_index(self) -> usize {
        match self {
            Label::Terminal => 0,
            Label::NonTerminal => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Label {
        if index == 0 {
            Label::Terminal
        } else {
            Label::NonTerminal
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Terminal => "Terminal",
            Label::NonTerminal => "NonTerminal",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Finer-grained description of the change; carried through but unused by
/// the classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnCategory {
    Interruption,
    Backchannel,
    Smooth,
}

/// One annotated speaker change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub show_id: String,
    pub speaker_id: String,
    /// Audio file reference, resolved relative to the manifest's directory
    /// unless absolute.
    pub media_path: String,
    /// Start of the outgoing speaker's segment, seconds into the media.
    pub segment_start: f64,
    /// End of the segment; coincides with the speaker change.
    pub segment_end: f64,
    /// Instant of the speaker change. Equals `segment_end`.
    pub change_time: f64,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_category: Option<TurnCategory>,
}

impl Sample {
    /// Segment duration in seconds.
    pub fn duration(&self) -> f64 {
        self.segment_end - self.segment_start
    }

    fn check_times(&self) -> Result<(), CorpusError> {
        let bad = |detail: String| CorpusError::MalformedTime {
            sample_id: self.sample_id.clone(),
            detail,
        };
        for (name, v) in [
            ("segment_start", self.segment_start),
            ("segment_end", self.segment_end),
            ("change_time", self.change_time),
        ] {
            if !v.is_finite() {
                return Err(bad(format!("{name} is not finite")));
            }
        }
        if self.segment_start < 0.0 {
            return Err(bad(format!(
                "segment_start {} is negative",
                self.segment_start
            )));
        }
        if self.segment_end <= self.segment_start {
            return Err(bad(format!(
                "segment_end {} ≤ segment_start {}",
                self.segment_end, self.segment_start
            )));
        }
        if self.change_time != self.segment_end {
            return Err(bad(format!(
                "change_time {} != segment_end {}",
                self.change_time, self.segment_end
            )));
        }
        Ok(())
    }
}

/// An ordered collection of samples with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Result<Corpus, CorpusError> {
        let mut seen = BTreeSet::new();
        for s in &samples {
            if !seen.insert(s.sample_id.clone()) {
                return Err(CorpusError::DuplicateSampleId(s.sample_id.clone()));
            }
            s.check_times()?;
        }
        Ok(Corpus { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct show ids, sorted bytewise.
    pub fn shows(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.samples.iter().map(|s| s.show_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn get(&self, sample_id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }
}

/// Required manifest fields, in serialization order.
const REQUIRED_FIELDS: [&str; 8] = [
    "sample_id",
    "show_id",
    "speaker_id",
    "media_path",
    "segment_start",
    "segment_end",
    "change_time",
    "label",
];

/// Read a JSONL manifest. Every record must carry all required fields;
/// nothing is skipped silently.
pub fn load_manifest(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: line_no,
                detail: e.to_string(),
            })?;
        for field in REQUIRED_FIELDS {
            if value.get(field).is_none_or(|v| v.is_null()) {
                return Err(CorpusError::MissingField {
                    line: line_no,
                    field: field.to_string(),
                });
            }
        }
        let sample: Sample =
            serde_json::from_value(value).map_err(|e| CorpusError::Parse {
                line: line_no,
                detail: e.to_string(),
            })?;
        if !seen.insert(sample.sample_id.clone()) {
            return Err(CorpusError::DuplicateSampleId(sample.sample_id));
        }
        sample.check_times()?;
        samples.push(sample);
    }
    Ok(Corpus { samples })
}

/// Write a JSONL manifest (atomically).
pub fn save_manifest(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    for sample in &corpus.samples {
        serde_json::to_writer(&mut out, sample).expect("sample serialization cannot fail");
        out.push(b'\n');
    }
    crate::util::atomic_write(path, &out)?;
    Ok(())
}

/// The four duration intervals used for reporting, upper bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DurationBucket {
    #[serde(rename = "≤0.5")]
    UpToHalf,
    #[serde(rename = "0.5<x≤1")]
    HalfToOne,
    #[serde(rename = "1<x≤2")]
    OneToTwo,
    #[serde(rename = ">2")]
    OverTwo,
}

impl DurationBucket {
    pub const ALL: [DurationBucket; 4] = [
        DurationBucket::UpToHalf,
        DurationBucket::HalfToOne,
        DurationBucket::OneToTwo,
        DurationBucket::OverTwo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DurationBucket::UpToHalf => "≤0.5",
            DurationBucket::HalfToOne => "0.5<x≤1",
            DurationBucket::OneToTwo => "1<x≤2",
            DurationBucket::OverTwo => ">2",
        }
    }

    pub fn index(self) -> usize {
        match self {
            DurationBucket::UpToHalf => 0,
            DurationBucket::HalfToOne => 1,
            DurationBucket::OneToTwo => 2,
            DurationBucket::OverTwo => 3,
        }
    }
}

impl std::fmt::Display for DurationBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Bucket a duration (seconds). Boundaries are upper-inclusive:
/// 0.5 s falls in the first bucket, 1.0 s in the second, 2.0 s in the third.
pub fn duration_bucket(duration: f64) -> Result<DurationBucket, CorpusError> {
    if !duration.is_finite() || duration <= 0.0 {
        return Err(CorpusError::NonPositiveDuration(duration));
    }
    Ok(if duration <= 0.5 {
        DurationBucket::UpToHalf
    } else if duration <= 1.0 {
        DurationBucket::HalfToOne
    } else if duration <= 2.0 {
        DurationBucket::OneToTwo
    } else {
        DurationBucket::OverTwo
    })
}

/// Per-label sample counts and duration-bucket distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBreakdown {
    pub label: Label,
    pub count: usize,
    /// Sample counts per bucket, in `DurationBucket::ALL` order.
    pub bucket_counts: [usize; 4],
    /// Integer percentages (half-up) for report parity.
    pub bucket_percent: [i64; 4],
    /// Unrounded percentages.
    pub bucket_percent_raw: [f64; 4],
}

/// Per-show sample count and total segment duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowBreakdown {
    pub show_id: String,
    pub sample_count: usize,
    /// Sum of segment durations, rounded to 0.01 s.
    pub total_duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_samples: usize,
    /// Sum of all segment durations, rounded to 0.01 s.
    pub total_duration_secs: f64,
    pub terminal: LabelBreakdown,
    pub non_terminal: LabelBreakdown,
    /// Sorted bytewise by show id.
    pub shows: Vec<ShowBreakdown>,
}

/// Compute counts, duration-bucket percentages per label, and per-show
/// totals for a non-empty corpus.
pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: std::collections::HashMap<Label, [usize; 4]> =
        std::collections::HashMap::new();
    let mut show_counts: std::collections::BTreeMap<String, (usize, f64)> =
        std::collections::BTreeMap::new();
    let mut total_duration = 0.0;
    for s in &corpus.samples {
        let bucket = duration_bucket(s.duration())?;
        counts.entry(s.label).or_default()[bucket.index()] += 1;
        let entry = show_counts.entry(s.show_id.clone()).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += s.duration();
        total_duration += s.duration();
    }
    let breakdown = |label: Label| -> LabelBreakdown {
        let bucket_counts = counts.get(&label).copied().unwrap_or_default();
        let count: usize = bucket_counts.iter().sum();
        let mut bucket_percent = [0i64; 4];
        let mut bucket_percent_raw = [0f64; 4];
        for i in 0..4 {
            bucket_percent_raw[i] = if count == 0 {
                0.0
            } else {
                100.0 * bucket_counts[i] as f64 / count as f64
            };
            bucket_percent[i] =
                crate::util::percent_rounded(bucket_counts[i] as f64, count as f64);
        }
        LabelBreakdown {
            label,
            count,
            bucket_counts,
            bucket_percent,
            bucket_percent_raw,
        }
    };
    let shows = show_counts
        .into_iter()
        .map(|(show_id, (sample_count, dur))| ShowBreakdown {
            show_id,
            sample_count,
            total_duration_secs: crate::util::round2(dur),
        })
        .collect();
    Ok(CorpusStats {
        total_samples: corpus.len(),
        total_duration_secs: crate::util::round2(total_duration),
        terminal: breakdown(Label::Terminal),
        non_terminal: breakdown(Label::NonTerminal),
        shows,
    })
}

/// Parameters for the synthetic corpus generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_shows: usize,
    /// Strength of the latent terminality cue in `[0, 1]`. At 1.0 the cue
    /// is fully recoverable by the stub components; at 0.0 the corpus
    /// carries no signal at all.
    pub cue_strength: f64,
    /// Probability that a sample is labeled Terminal, in `(0, 1)`.
    pub terminal_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 2000,
            n_shows: 10,
            cue_strength: 1.0,
            terminal_fraction: 0.43,
            seed: 0,
        }
    }
}

const MEDIA_RATE: u32 = 8000;
const TONE_AMPLITUDE: f64 = 0.05;
const DITHER_AMPLITUDE: f64 = 0.01;
const FILLER_WORDS: [&str; 12] = [
    "euh", "alors", "voila", "donc", "bon", "oui", "non", "enfin", "mais", "ben", "quoi", "hein",
];

/// Generate a synthetic corpus with media and transcript artifacts under
/// `out_dir` (manifest at `out_dir/manifest.jsonl`, audio in `out_dir/media/`).
///
/// Each sample's media file carries the signed cue as a DC offset over its
/// entire length, and its manual transcript carries the matching cue token,
/// so both chunking regimes and both transcript sources preserve the
/// signal. Deterministic: the same config yields byte-identical artifacts.
pub fn generate_synthetic(config: &SynthConfig, out_dir: &Path) -> Result<Corpus, CorpusError> {
    if config.n_shows < 2 {
        return Err(CorpusError::TooFewShows {
            needed: 2,
            got: config.n_shows,
        });
    }
    if config.n_samples < config.n_shows {
        return Err(CorpusError::TooFewSamples {
            shows: config.n_shows,
            samples: config.n_samples,
        });
    }
    if !(0.0..=1.0).contains(&config.cue_strength) {
        return Err(CorpusError::InvalidFraction {
            name: "cue_strength",
            range: "[0, 1]",
            value: config.cue_strength,
        });
    }
    if !(config.terminal_fraction > 0.0 && config.terminal_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction {
            name: "terminal_fraction",
            range: "(0, 1)",
            value: config.terminal_fraction,
        });
    }

    let media_dir = out_dir.join("media");
    std::fs::create_dir_all(&media_dir)?;
    let seed_str = config.seed.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        // Round-robin the first n_shows samples so every show is non-empty.
        let show = if i < config.n_shows {
            i
        } else {
            rng.random_range(0..config.n_shows)
        };
        let terminal = rng.random::<f64>() < config.terminal_fraction;
        // Log-uniform over [0.2 s, 5 s] covers all four duration buckets.
        let duration = (rng.random_range(0.2f64.ln()..=5.0f64.ln())).exp();
        let lead = rng.random_range(0.5..3.5);
        let speaker = rng.random_range(0..4u32);
        let tone_freq = rng.random_range(80.0..400.0);
        let turn_category = if terminal {
            TurnCategory::Smooth
        } else if rng.random::<bool>() {
            TurnCategory::Interruption
        } else {
            TurnCategory::Backchannel
        };

        let sample_id = format!("synth-{i:05}");
        let signed = cue::signed_cue(terminal, config.cue_strength);
        // Per-sample stream for media and transcript, so artifact content
        // is independent of generation order.
        let media_seed = crate::util::derive_seed("synth-media", &[&seed_str, &sample_id]);
        let mut media_rng = ChaCha8Rng::seed_from_u64(media_seed);

        let n_points = ((lead + duration) * MEDIA_RATE as f64).round() as usize;
        let dc = signed * cue::DC_AMPLITUDE;
        let mut wave = Vec::with_capacity(n_points);
        for t in 0..n_points {
            let secs = t as f64 / MEDIA_RATE as f64;
            let tone = TONE_AMPLITUDE * (2.0 * std::f64::consts::PI * tone_freq * secs).sin();
            let dither = DITHER_AMPLITUDE * media_rng.random_range(-1.0..1.0);
            wave.push(dc + tone + dither);
        }
        let media_rel = format!("media/{sample_id}.wav");
        crate::audio::Waveform::new(wave, MEDIA_RATE).write_wav(&out_dir.join(&media_rel))?;

        let n_words = 1 + (2.0 * duration) as usize;
        let mut words: Vec<String> = (0..n_words)
            .map(|_| FILLER_WORDS[media_rng.random_range(0..FILLER_WORDS.len())].to_string())
            .collect();
        words.push(cue::cue_token(signed));
        let transcript = words.join(" ");

        let segment_start = lead;
        let segment_end = lead + duration;
        samples.push(Sample {
            sample_id,
            show_id: format!("show-{show:02}"),
            speaker_id: format!("spk-{show:02}-{speaker}"),
            media_path: media_rel,
            segment_start,
            segment_end,
            change_time: segment_end,
            label: if terminal {
                Label::Terminal
            } else {
                Label::NonTerminal
            },
            manual_transcript: Some(transcript),
            turn_category: Some(turn_category),
        });
    }
    let corpus = Corpus { samples };
    save_manifest(&corpus, &out_dir.join("manifest.jsonl"))?;
    Ok(corpus)
}

/// Per-show profile of the released corpus: samples per duration bucket,
/// the base duration (centiseconds) of the long-bucket samples, and how
/// many long samples carry one extra centisecond so the show's published
/// total duration is met exactly.
const RELEASED_SHOWS: [(&str, [usize; 4], u64, usize); 10] = [
    ("BFMStory", [17, 31, 39, 113], 676, 106),
    ("CaVousRegarde", [29, 56, 70, 114], 711, 80),
    ("CultureEtVous", [3, 1, 0, 3], 233, 0),
    ("DEBATE", [8, 14, 18, 88], 256, 34),
    ("EntreLesLignes", [35, 67, 83, 122], 812, 29),
    ("LaPlaceDuVillage", [124, 245, 309, 92], 673, 90),
    ("PileEtFace", [9, 17, 22, 102], 513, 77),
    ("PlaneteShowbiz", [3, 1, 0, 6], 204, 0),
    ("TopQuestions", [0, 0, 0, 5], 437, 3),
    ("fm", [4, 7, 9, 88], 265, 75),
];

/// Canonical short-bucket durations in centiseconds (≤0.5 s, ≤1 s, ≤2 s).
const RELEASED_BUCKET_CS: [u64; 3] = [30, 80, 150];

/// Terminal-label count per duration bucket across the whole released
/// corpus (the remaining samples in each bucket are NonTerminal).
const RELEASED_TERMINAL_BY_BUCKET: [usize; 4] = [109, 227, 294, 209];

/// Reconstruct the annotation metadata of the released French TV/radio
/// corpus: the ten real shows with their exact sample counts, per-show
/// total durations (to the centisecond), and the published per-label
/// duration-bucket mix. Media paths are placeholders and no transcripts
/// are attached — the manifest supports corpus statistics, grid planning,
/// and fold enumeration, not training.
pub fn released_metadata() -> Corpus {
    // Global bucket sizes implied by the per-show table.
    let mut bucket_total = [0usize; 4];
    for (_, counts, _, _) in RELEASED_SHOWS {
        for (b, &k) in counts.iter().enumerate() {
            bucket_total[b] += k;
        }
    }
    // Spread each bucket's Terminal labels evenly over the shows with a
    // Bresenham walk so every show mixes both labels where possible.
    let mut seen = [0usize; 4];
    let mut label_for = |bucket: usize| {
        let t = RELEASED_TERMINAL_BY_BUCKET[bucket];
        let g = bucket_total[bucket];
        let i = seen[bucket];
        seen[bucket] += 1;
        if ((i + 1) * t) / g > (i * t) / g {
            Label::Terminal
        } else {
            Label::NonTerminal
        }
    };

    let mut samples = Vec::with_capacity(1954);
    for (show, counts, long_base, long_extra) in RELEASED_SHOWS {
        let mut index = 0usize;
        for bucket in 0..4 {
            for j in 0..counts[bucket] {
                let cs = match bucket {
                    0..=2 => RELEASED_BUCKET_CS[bucket],
                    _ => long_base + u64::from(j < long_extra),
                };
                let duration = cs as f64 / 100.0;
                let sample_id = format!("{show}-{index:04}");
                samples.push(Sample {
                    sample_id: sample_id.clone(),
                    show_id: show.to_string(),
                    speaker_id: format!("{show}-spk{}", index % 4),
                    media_path: format!("media/{show}/{sample_id}.wav"),
                    segment_start: 0.0,
                    segment_end: duration,
                    change_time: duration,
                    label: label_for(bucket),
                    manual_transcript: None,
                    turn_category: None,
                });
                index += 1;
            }
        }
    }
    Corpus::new(samples).expect("released metadata profile is internally consistent")
}

/// Resolve a sample's media path against the directory its manifest lives in.
pub fn resolve_media_path(manifest_dir: &Path, sample: &Sample) -> std::path::PathBuf {
    let p = Path::new(&sample.media_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}
