//! Utterance records, annotation parsers, speaker splits, manifests and the
//! synthetic corpus generator.

mod manifest;
mod phn;
mod synth;
mod textgrid;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::{self, FbankConfig, FeatureMatrix};
use crate::numcore::Tensor;
use crate::phoneset::PhoneLabel;

pub use manifest::{load_manifest, save_manifest};
pub use phn::parse_phn;
pub use synth::{oracle_embedding, synth_corpus, synth_speaker, SynthConfig, SynthStats};
pub use textgrid::parse_textgrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorType {
    None,
    Substitution,
    Deletion,
    Addition,
}

impl ErrorType {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::None => "none",
            ErrorType::Substitution => "substitution",
            ErrorType::Deletion => "deletion",
            ErrorType::Addition => "addition",
        }
    }
}

impl std::str::FromStr for ErrorType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ErrorType::None),
            "substitution" => Ok(ErrorType::Substitution),
            "deletion" => Ok(ErrorType::Deletion),
            "addition" => Ok(ErrorType::Addition),
            _ => Err(Error::Data(format!("unknown error type `{s}`"))),
        }
    }
}

/// A timed phone with its canonical and perceived labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub canonical: PhoneLabel,
    pub perceived: PhoneLabel,
    pub error: ErrorType,
}

impl AnnotationSegment {
    pub fn new(start_s: f64, end_s: f64, canonical: PhoneLabel, perceived: PhoneLabel, error: ErrorType) -> Result<Self> {
        if !(start_s >= 0.0) || !(end_s > start_s) {
            return Err(Error::Data(format!(
                "segment [{start_s}, {end_s}] must satisfy 0 <= start < end"
            )));
        }
        if (error == ErrorType::None) != (canonical == perceived) {
            return Err(Error::Data(format!(
                "segment {canonical}/{perceived} marked `{}`",
                error.as_str()
            )));
        }
        Ok(AnnotationSegment {
            start_s,
            end_s,
            canonical,
            perceived,
            error,
        })
    }

    /// Unannotated (correctly pronounced) phone.
    pub fn correct(start_s: f64, end_s: f64, label: PhoneLabel) -> Result<Self> {
        Self::new(start_s, end_s, label.clone(), label, ErrorType::None)
    }
}

/// Canonical sequence: every segment except additions.
pub fn canonical_of(segments: &[AnnotationSegment]) -> Vec<PhoneLabel> {
    segments
        .iter()
        .filter(|s| s.error != ErrorType::Addition)
        .map(|s| s.canonical.clone())
        .collect()
}

/// Perceived sequence: every segment except deletions.
pub fn perceived_of(segments: &[AnnotationSegment]) -> Vec<PhoneLabel> {
    segments
        .iter()
        .filter(|s| s.error != ErrorType::Deletion)
        .map(|s| s.perceived.clone())
        .collect()
}

/// A matrix on disk or already in memory.
#[derive(Debug, Clone)]
pub enum MatrixRef {
    Path(PathBuf),
    Inline(Arc<Tensor<f32>>),
}

impl MatrixRef {
    pub fn load(&self) -> Result<Tensor<f32>> {
        match self {
            MatrixRef::Path(p) => crate::matfile::load(p),
            MatrixRef::Inline(m) => Ok((**m).clone()),
        }
    }
}

impl PartialEq for MatrixRef {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (MatrixRef::Path(a), MatrixRef::Path(b)) => a == b,
            (MatrixRef::Inline(a), MatrixRef::Inline(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    /// 16 kHz mono WAV; features are computed on load.
    Audio(PathBuf),
    /// Precomputed `T x 81` features.
    Features(MatrixRef),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    pub source: FeatureSource,
    pub phonetic_embedding: Option<MatrixRef>,
    pub canonical: Vec<PhoneLabel>,
    pub perceived: Vec<PhoneLabel>,
    pub segments: Vec<AnnotationSegment>,
}

impl UtteranceRecord {
    /// Builds a record whose sequences are derived from `segments`.
    pub fn from_segments(
        id: impl Into<String>,
        speaker: impl Into<String>,
        source: FeatureSource,
        phonetic_embedding: Option<MatrixRef>,
        segments: Vec<AnnotationSegment>,
    ) -> Self {
        UtteranceRecord {
            id: id.into(),
            speaker: speaker.into(),
            source,
            phonetic_embedding,
            canonical: canonical_of(&segments),
            perceived: perceived_of(&segments),
            segments,
        }
    }

    /// Checks that the sequences agree with the segments.
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Ok(());
        }
        if canonical_of(&self.segments) != self.canonical {
            return Err(Error::Data(format!("{}: canonical sequence disagrees with segments", self.id)));
        }
        if perceived_of(&self.segments) != self.perceived {
            return Err(Error::Data(format!("{}: perceived sequence disagrees with segments", self.id)));
        }
        Ok(())
    }

    /// Acoustic features, computing filter banks for audio sources.
    pub fn load_features(&self, fbank: &FbankConfig) -> Result<FeatureMatrix> {
        match &self.source {
            FeatureSource::Audio(path) => {
                let samples = features::read_wav(path)?;
                features::fbank_energy(&samples, features::SAMPLE_RATE, fbank)
            }
            FeatureSource::Features(m) => FeatureMatrix::new(m.load()?),
        }
    }

    pub fn load_embedding(&self) -> Result<Option<Tensor<f32>>> {
        self.phonetic_embedding.as_ref().map(MatrixRef::load).transpose()
    }
}

/// Disjoint speaker sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSpec {
    pub train: BTreeSet<String>,
    pub dev: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

/// Non-native speakers of the L2 corpus, grouped by first language.
pub const L2ARCTIC_SPEAKERS: [&str; 24] = [
    "ABA", "SKA", "YBAA", "ZHAA", // Arabic
    "BWC", "LXC", "NCC", "TXHC", // Mandarin
    "ASI", "RRBI", "SVBI", "TNI", // Hindi
    "HJK", "HKK", "YDCK", "YKWK", // Korean
    "EBVS", "ERMS", "MBMPS", "NJS", // Spanish
    "HQTV", "PNV", "THV", "TLV", // Vietnamese
];
pub const L2ARCTIC_DEV: [&str; 6] = ["EBVS", "THV", "TNI", "BWC", "YDCK", "YBAA"];
pub const L2ARCTIC_TEST: [&str; 6] = ["NJS", "HQTV", "SVBI", "NCC", "YKWK", "ZHAA"];

impl SplitSpec {
    pub fn new<S: AsRef<str>>(train: &[S], dev: &[S], test: &[S]) -> Result<Self> {
        let set = |xs: &[S]| xs.iter().map(|s| s.as_ref().to_string()).collect::<BTreeSet<_>>();
        let spec = SplitSpec {
            train: set(train),
            dev: set(dev),
            test: set(test),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Dev and test speakers as published; every other speaker trains.
    pub fn l2arctic_default() -> Self {
        let train: Vec<&str> = L2ARCTIC_SPEAKERS
            .iter()
            .copied()
            .filter(|s| !L2ARCTIC_DEV.contains(s) && !L2ARCTIC_TEST.contains(s))
            .collect();
        Self::new(&train, &L2ARCTIC_DEV, &L2ARCTIC_TEST).expect("published split is disjoint")
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Config("split has no training speakers".into()));
        }
        for (a, b, name) in [
            (&self.train, &self.dev, "train/dev"),
            (&self.train, &self.test, "train/test"),
            (&self.dev, &self.test, "dev/test"),
        ] {
            if let Some(s) = a.intersection(b).next() {
                return Err(Error::Config(format!("speaker {s} appears in both {name}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<UtteranceRecord>,
    pub dev: Vec<UtteranceRecord>,
    pub test: Vec<UtteranceRecord>,
}

/// Partitions records by speaker, keeping record order within each split.
pub fn split_speakers(records: &[UtteranceRecord], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut out = Splits::default();
    for r in records {
        let target = if spec.train.contains(&r.speaker) {
            &mut out.train
        } else if spec.dev.contains(&r.speaker) {
            &mut out.dev
        } else if spec.test.contains(&r.speaker) {
            &mut out.test
        } else {
            return Err(Error::Data(format!(
                "speaker {} of utterance {} is in no split",
                r.speaker, r.id
            )));
        };
        target.push(r.clone());
    }
    Ok(out)
}
