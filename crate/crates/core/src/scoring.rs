//! Edit-distance alignment, phoneme recognition ratios and the hierarchical
//! mispronunciation detection/diagnosis tallies.

use std::fmt::Write as _;

use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Match,
    Sub,
    Del,
    Ins,
}

/// One step of an alignment. `ref_index` is set for match/sub/del,
/// `hyp_index` for match/sub/ins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct AlignStep {
    pub op: EditOp,
    pub ref_index: Option<usize>,
    pub hyp_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct EditCounts {
    #[serde(rename = "S")]
    pub substitutions: usize,
    #[serde(rename = "D")]
    pub deletions: usize,
    #[serde(rename = "I")]
    pub insertions: usize,
    #[serde(rename = "N")]
    pub reference_len: usize,
}

impl EditCounts {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(N - S - D) / N`
    pub fn correctness(&self) -> Result<f64> {
        let n = self.nonzero_len()?;
        Ok((n - self.substitutions as f64 - self.deletions as f64) / n)
    }

    /// `(N - S - D - I) / N`; negative when insertions dominate.
    pub fn accuracy(&self) -> Result<f64> {
        let n = self.nonzero_len()?;
        Ok((n - self.substitutions as f64 - self.deletions as f64 - self.insertions as f64) / n)
    }

    fn nonzero_len(&self) -> Result<f64> {
        if self.reference_len == 0 {
            return Err(Error::Data("reference sequence is empty (N = 0)".into()));
        }
        Ok(self.reference_len as f64)
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.reference_len += o.reference_len;
    }
}

/// Unit-cost Levenshtein alignment. On cost ties the backtrace prefers
/// match, then substitution, then deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> (Vec<AlignStep>, EditCounts) {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = cost[(i - 1) * w + j] + 1;
            let ins = cost[i * w + j - 1] + 1;
            cost[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut steps = Vec::with_capacity(n.max(m));
    let mut counts = EditCounts {
        reference_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let diag = cost[(i - 1) * w + j - 1];
            let same = reference[i - 1] == hyp[j - 1];
            if same && here == diag {
                steps.push(AlignStep {
                    op: EditOp::Match,
                    ref_index: Some(i - 1),
                    hyp_index: Some(j - 1),
                });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && here == diag + 1 {
                steps.push(AlignStep {
                    op: EditOp::Sub,
                    ref_index: Some(i - 1),
                    hyp_index: Some(j - 1),
                });
                counts.substitutions += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == cost[(i - 1) * w + j] + 1 {
            steps.push(AlignStep {
                op: EditOp::Del,
                ref_index: Some(i - 1),
                hyp_index: None,
            });
            counts.deletions += 1;
            i -= 1;
        } else {
            steps.push(AlignStep {
                op: EditOp::Ins,
                ref_index: None,
                hyp_index: Some(j - 1),
            });
            counts.insertions += 1;
            j -= 1;
        }
    }
    steps.reverse();
    (steps, counts)
}

/// Per-canonical-phone detection tallies and the diagnosis split of TR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct MddCounts {
    pub ta: usize,
    pub fr: usize,
    pub fa: usize,
    pub tr: usize,
    pub cd: usize,
    pub de: usize,
}

impl MddCounts {
    pub fn total(&self) -> usize {
        self.ta + self.fr + self.fa + self.tr
    }
}

impl std::ops::AddAssign for MddCounts {
    fn add_assign(&mut self, o: Self) {
        self.ta += o.ta;
        self.fr += o.fr;
        self.fa += o.fa;
        self.tr += o.tr;
        self.cd += o.cd;
        self.de += o.de;
    }
}

/// Outcome of one three-way comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HierarchicalResult {
    pub counts: MddCounts,
    /// Perceived labels aligned to no canonical position.
    pub perceived_insertions: usize,
    /// Recognized labels aligned to no canonical position.
    pub recognized_insertions: usize,
}

impl HierarchicalResult {
    pub fn insertions_excluded(&self) -> usize {
        self.perceived_insertions + self.recognized_insertions
    }
}

/// For each canonical position, the hypothesis label aligned to it
/// (`None` when deleted), plus the number of inserted hypothesis labels.
fn project_onto<'a, T: PartialEq>(canonical: &[T], hyp: &'a [T]) -> (Vec<Option<&'a T>>, usize) {
    let (steps, counts) = align(canonical, hyp);
    let mut slots = vec![None; canonical.len()];
    for s in steps {
        if let (Some(r), Some(h)) = (s.ref_index, s.hyp_index) {
            slots[r] = Some(&hyp[h]);
        }
    }
    (slots, counts.insertions)
}

/// Classifies every canonical phone as TA/FR/FA/TR (and TR as CD/DE) by
/// aligning both the perceived and recognized sequences to the canonical one.
pub fn hierarchical_eval<T: PartialEq>(canonical: &[T], perceived: &[T], recognized: &[T]) -> HierarchicalResult {
    let (said, perceived_insertions) = project_onto(canonical, perceived);
    let (heard, recognized_insertions) = project_onto(canonical, recognized);
    let mut counts = MddCounts::default();
    for (n, expected) in canonical.iter().enumerate() {
        let p_ok = said[n] == Some(expected);
        let r_ok = heard[n] == Some(expected);
        match (p_ok, r_ok) {
            (true, true) => counts.ta += 1,
            (true, false) => counts.fr += 1,
            (false, true) => counts.fa += 1,
            (false, false) => {
                counts.tr += 1;
                // a deletion recognized as a deletion is a correct diagnosis
                if said[n] == heard[n] {
                    counts.cd += 1;
                } else {
                    counts.de += 1;
                }
            }
        }
    }
    HierarchicalResult {
        counts,
        perceived_insertions,
        recognized_insertions,
    }
}

/// A ratio that may be undefined because its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio(pub Option<f64>);

impl Ratio {
    fn of(num: usize, den: usize) -> Ratio {
        if den == 0 {
            Ratio(None)
        } else {
            Ratio(Some(num as f64 / den as f64))
        }
    }

    pub fn value(&self) -> Option<f64> {
        self.0
    }

    pub fn is_defined(&self) -> bool {
        self.0.is_some()
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{:.2}", 100.0 * v),
            None => f.write_str("undefined"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MddMetrics {
    pub frr: Ratio,
    pub far: Ratio,
    pub detection_accuracy: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f_measure: Ratio,
    pub der: Ratio,
}

pub fn mdd_metrics(m: &MddCounts) -> MddMetrics {
    let precision = Ratio::of(m.tr, m.tr + m.fr);
    let recall = Ratio::of(m.tr, m.tr + m.fa);
    let f_measure = match (precision.0, recall.0) {
        (Some(p), Some(r)) if p + r > 0.0 => Ratio(Some(2.0 * p * r / (p + r))),
        _ => Ratio(None),
    };
    MddMetrics {
        frr: Ratio::of(m.fr, m.ta + m.fr),
        far: Ratio::of(m.fa, m.fa + m.tr),
        detection_accuracy: Ratio::of(m.tr + m.ta, m.total()),
        precision,
        recall,
        f_measure,
        der: Ratio::of(m.de, m.de + m.cd),
    }
}

/// Sequences needed to score one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUtterance<T> {
    pub id: String,
    pub canonical: Vec<T>,
    pub perceived: Vec<T>,
    pub recognized: Vec<T>,
}

/// Counts plus the ratios derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub edit: EditCounts,
    pub mdd: MddCounts,
    pub insertions_excluded: usize,
}

impl ScoreSummary {
    pub fn correctness(&self) -> Ratio {
        Ratio(self.edit.correctness().ok())
    }

    pub fn accuracy(&self) -> Ratio {
        Ratio(self.edit.accuracy().ok())
    }

    pub fn metrics(&self) -> MddMetrics {
        mdd_metrics(&self.mdd)
    }
}

impl Serialize for ScoreSummary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(serde::Serialize)]
        struct Edit {
            #[serde(rename = "S")]
            s: usize,
            #[serde(rename = "D")]
            d: usize,
            #[serde(rename = "I")]
            i: usize,
            #[serde(rename = "N")]
            n: usize,
            correctness: Ratio,
            accuracy: Ratio,
        }
        #[derive(serde::Serialize)]
        struct Mdd {
            #[serde(rename = "TA")]
            ta: usize,
            #[serde(rename = "FR")]
            fr: usize,
            #[serde(rename = "FA")]
            fa: usize,
            #[serde(rename = "TR")]
            tr: usize,
            #[serde(rename = "CD")]
            cd: usize,
            #[serde(rename = "DE")]
            de: usize,
            #[serde(flatten)]
            metrics: MddMetrics,
        }
        let mut st = s.serialize_struct("ScoreSummary", 3)?;
        st.serialize_field(
            "edit",
            &Edit {
                s: self.edit.substitutions,
                d: self.edit.deletions,
                i: self.edit.insertions,
                n: self.edit.reference_len,
                correctness: self.correctness(),
                accuracy: self.accuracy(),
            },
        )?;
        st.serialize_field(
            "mdd",
            &Mdd {
                ta: self.mdd.ta,
                fr: self.mdd.fr,
                fa: self.mdd.fa,
                tr: self.mdd.tr,
                cd: self.mdd.cd,
                de: self.mdd.de,
                metrics: self.metrics(),
            },
        )?;
        st.serialize_field("insertions_excluded", &self.insertions_excluded)?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct UtteranceScore {
    pub id: String,
    #[serde(flatten)]
    pub summary: ScoreSummary,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CorpusReport {
    pub per_utterance: Vec<UtteranceScore>,
    pub aggregate: ScoreSummary,
}

/// Scores a single utterance: recognition against the perceived sequence,
/// detection/diagnosis against the canonical one.
pub fn score_utterance<T: PartialEq>(u: &ScoredUtterance<T>) -> ScoreSummary {
    let (_, edit) = align(&u.perceived, &u.recognized);
    let h = hierarchical_eval(&u.canonical, &u.perceived, &u.recognized);
    ScoreSummary {
        edit,
        mdd: h.counts,
        insertions_excluded: h.insertions_excluded(),
    }
}

/// Micro-averaged report: counts are summed over the corpus before any
/// ratio is taken.
pub fn corpus_report<T: PartialEq>(utterances: &[ScoredUtterance<T>]) -> Result<CorpusReport> {
    if utterances.is_empty() {
        return Err(Error::Data("no utterances to score".into()));
    }
    let per_utterance: Vec<UtteranceScore> = utterances
        .iter()
        .map(|u| UtteranceScore {
            id: u.id.clone(),
            summary: score_utterance(u),
        })
        .collect();
    let mut aggregate = ScoreSummary {
        edit: EditCounts::default(),
        mdd: MddCounts::default(),
        insertions_excluded: 0,
    };
    for u in &per_utterance {
        aggregate.edit += u.summary.edit;
        aggregate.mdd += u.summary.mdd;
        aggregate.insertions_excluded += u.summary.insertions_excluded;
    }
    Ok(CorpusReport {
        per_utterance,
        aggregate,
    })
}

pub const TABLE_COLUMNS: [&str; 10] = [
    "variant",
    "correctness",
    "accuracy",
    "FRR",
    "FAR",
    "detection_accuracy",
    "precision",
    "recall",
    "f_measure",
    "DER",
];

/// One table row: the nine metric cells in `TABLE_COLUMNS` order (after the
/// name column), as percentages.
pub fn table_cells(s: &ScoreSummary) -> [Ratio; 9] {
    let m = s.metrics();
    [
        s.correctness(),
        s.accuracy(),
        m.frr,
        m.far,
        m.detection_accuracy,
        m.precision,
        m.recall,
        m.f_measure,
        m.der,
    ]
}

/// Plain-text table with one row per named summary.
pub fn render_table(rows: &[(String, ScoreSummary)]) -> String {
    let width = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once(TABLE_COLUMNS[0].len()))
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", TABLE_COLUMNS[0]);
    for c in &TABLE_COLUMNS[1..] {
        let _ = write!(out, "  {c:>18}");
    }
    out.push('\n');
    for (name, s) in rows {
        let _ = write!(out, "{name:<width$}");
        for cell in table_cells(s) {
            let _ = write!(out, "  {:>18}", cell.to_string());
        }
        out.push('\n');
    }
    out
}
