//! Phone inventories, folding tables and the label <-> class-id codec.
//!
//! Two source sets fold onto the 39-phone evaluation set: TIMIT's 61 phones
//! and the 48-phone set used for the L2 corpus. Accented phones (suffix `*`)
//! and the `err` marker never fold; they are classes of their own.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const TIMIT61_TABLE: &str = include_str!("../data/timit61_to_39.txt");
const ARCTIC48_TABLE: &str = include_str!("../data/arctic48_to_39.txt");
const L2ARCTIC_SPECIALS: &str = include_str!("../data/l2arctic_specials.txt");

/// Label reserved for the CTC blank in serialized inventories.
pub const BLANK_LABEL: &str = "<blk>";
pub const DEVIATION_MARK: char = '*';
pub const ERR_LABEL: &str = "err";
/// Folded value meaning "remove from the sequence".
const DISCARD: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhoneLabel(String);

impl PhoneLabel {
    /// Validates and lowercases a label.
    pub fn new(text: &str) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::InvalidLabel(text.into(), "empty label"));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(Error::InvalidLabel(text.into(), "contains whitespace"));
        }
        if let Some(pos) = text.find(DEVIATION_MARK) {
            if pos != text.len() - 1 || text.len() == 1 {
                return Err(Error::InvalidLabel(
                    text.into(),
                    "deviation mark must be the final character of a phone",
                ));
            }
        }
        Ok(PhoneLabel(text.to_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_deviation(&self) -> bool {
        self.0.ends_with(DEVIATION_MARK)
    }

    /// Deviation phones and `err`: kept as independent classes.
    pub fn is_special(&self) -> bool {
        self.is_deviation() || self.0 == ERR_LABEL
    }

    pub fn is_blank(&self) -> bool {
        self.0 == BLANK_LABEL
    }

    fn blank() -> Self {
        PhoneLabel(BLANK_LABEL.to_string())
    }
}

impl fmt::Display for PhoneLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for PhoneLabel {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Parses a list of strings into labels.
pub fn labels<S: AsRef<str>>(items: &[S]) -> Result<Vec<PhoneLabel>> {
    items.iter().map(|s| PhoneLabel::new(s.as_ref())).collect()
}

/// Drops full-line `#` comments and trailing ` #` comments; `h#` is a phone.
fn strip_comment(raw: &str) -> &str {
    let line = raw.trim();
    if line.starts_with('#') {
        return "";
    }
    match line.find(" #").or_else(|| line.find("\t#")) {
        Some(pos) => line[..pos].trim(),
        None => line,
    }
}

/// Many-to-one map from a source phone set to the 39-phone set.
///
/// A target of `None` means the phone is dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldTable {
    map: BTreeMap<String, Option<PhoneLabel>>,
}

impl FoldTable {
    /// Parses the two-column text format (`source folded`, `#` comments).
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::parse(idx + 1, format!("expected 2 columns, got {}", cols.len())));
            }
            let target = if cols[1] == DISCARD {
                None
            } else {
                Some(PhoneLabel::new(cols[1]).map_err(|e| Error::parse(idx + 1, e.to_string()))?)
            };
            if map.insert(cols[0].to_lowercase(), target).is_some() {
                return Err(Error::parse(idx + 1, format!("duplicate source `{}`", cols[0])));
            }
        }
        Ok(FoldTable { map })
    }

    pub fn timit61() -> Self {
        Self::parse(TIMIT61_TABLE).expect("bundled TIMIT table is well-formed")
    }

    pub fn arctic48() -> Self {
        Self::parse(ARCTIC48_TABLE).expect("bundled 48-phone table is well-formed")
    }

    pub fn identity<'a>(labels: impl IntoIterator<Item = &'a PhoneLabel>) -> Self {
        FoldTable {
            map: labels
                .into_iter()
                .map(|l| (l.as_str().to_string(), Some(l.clone())))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Distinct non-dropped targets, sorted.
    pub fn targets(&self) -> Vec<PhoneLabel> {
        let mut out: Vec<PhoneLabel> = self.map.values().flatten().cloned().collect();
        out.sort();
        out.dedup();
        out
    }

    /// Folds one label; `Ok(None)` means the phone is dropped.
    pub fn fold(&self, label: &str) -> Result<Option<PhoneLabel>> {
        self.map
            .get(&label.to_lowercase())
            .cloned()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (src, dst) in &self.map {
            let dst = dst.as_ref().map_or(DISCARD, PhoneLabel::as_str);
            out.push_str(&format!("{src} {dst}\n"));
        }
        out
    }
}

/// Folds a TIMIT-61 symbol. `Ok(None)` for the glottal stop.
pub fn fold_timit61(label: &str) -> Result<Option<PhoneLabel>> {
    thread_local! {
        static TABLE: FoldTable = FoldTable::timit61();
    }
    TABLE.with(|t| t.fold(label))
}

/// Folds a 48-set symbol. Deviation phones and `err` pass through unchanged.
pub fn fold_arctic48(label: &str) -> Result<PhoneLabel> {
    thread_local! {
        static TABLE: FoldTable = FoldTable::arctic48();
    }
    let parsed = PhoneLabel::new(label)?;
    if parsed.is_special() {
        return Ok(parsed);
    }
    TABLE.with(|t| t.fold(label))?.ok_or_else(|| Error::UnknownLabel(label.to_string()))
}

/// The bundled list of special classes (28 deviation phones + `err`).
pub fn l2arctic_specials() -> Vec<PhoneLabel> {
    L2ARCTIC_SPECIALS
        .lines()
        .map(strip_comment)
        .filter(|l| !l.is_empty())
        .map(|l| PhoneLabel::new(l).expect("bundled specials are valid labels"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InventoryMode {
    Timit39,
    L2ArcticExtended,
    Custom(Vec<String>),
}

impl std::str::FromStr for InventoryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timit39" => Ok(InventoryMode::Timit39),
            "l2arctic-extended" => Ok(InventoryMode::L2ArcticExtended),
            other => match other.strip_prefix("custom:") {
                Some(list) => Ok(InventoryMode::Custom(
                    list.split(',').map(str::to_string).collect(),
                )),
                None => Err(Error::Config(format!("unknown inventory mode `{other}`"))),
            },
        }
    }
}

/// Ordered class list with the CTC blank appended last.
#[derive(Debug, Clone)]
pub struct PhoneInventory {
    classes: Vec<PhoneLabel>,
    blank_id: usize,
    fold_table: FoldTable,
    index: HashMap<String, usize>,
}

impl PartialEq for PhoneInventory {
    fn eq(&self, other: &Self) -> bool {
        self.classes == other.classes
            && self.blank_id == other.blank_id
            && self.fold_table == other.fold_table
    }
}

impl PhoneInventory {
    pub fn build(mode: &InventoryMode) -> Result<Self> {
        match mode {
            InventoryMode::Timit39 => {
                let table = FoldTable::timit61();
                Self::from_parts(table.targets(), Vec::new(), table)
            }
            InventoryMode::L2ArcticExtended => {
                let table = FoldTable::arctic48();
                Self::from_parts(table.targets(), l2arctic_specials(), table)
            }
            InventoryMode::Custom(list) => {
                let parsed = labels(list)?;
                let (specials, phones): (Vec<_>, Vec<_>) =
                    parsed.into_iter().partition(PhoneLabel::is_special);
                let table = FoldTable::identity(phones.iter());
                Self::from_parts(phones, specials, table)
            }
        }
    }

    fn from_parts(
        mut phones: Vec<PhoneLabel>,
        mut specials: Vec<PhoneLabel>,
        fold_table: FoldTable,
    ) -> Result<Self> {
        phones.sort();
        specials.sort();
        let mut classes = phones;
        classes.extend(specials);
        let mut index = HashMap::with_capacity(classes.len() + 1);
        for (id, label) in classes.iter().enumerate() {
            if label.is_blank() {
                return Err(Error::InvalidLabel(label.to_string(), "reserved for the CTC blank"));
            }
            if index.insert(label.as_str().to_string(), id).is_some() {
                return Err(Error::DuplicateLabel(label.to_string()));
            }
        }
        let blank_id = classes.len();
        index.insert(BLANK_LABEL.to_string(), blank_id);
        classes.push(PhoneLabel::blank());
        Ok(PhoneInventory {
            classes,
            blank_id,
            fold_table,
            index,
        })
    }

    /// Number of classes including the blank.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn blank_id(&self) -> usize {
        self.blank_id
    }

    pub fn classes(&self) -> &[PhoneLabel] {
        &self.classes
    }

    pub fn fold_table(&self) -> &FoldTable {
        &self.fold_table
    }

    /// Ids of plain (non-special, non-blank) phones.
    pub fn plain_ids(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| i != self.blank_id && !self.classes[i].is_special())
            .collect()
    }

    pub fn id_of(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn label(&self, id: usize) -> Result<&PhoneLabel> {
        self.classes
            .get(id)
            .ok_or(Error::ClassIdOutOfRange(id, self.classes.len()))
    }

    pub fn encode<L: AsRef<str>>(&self, seq: &[L]) -> Result<Vec<usize>> {
        seq.iter().map(|l| self.id_of(l.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<PhoneLabel>> {
        ids.iter().map(|&i| self.label(i).cloned()).collect()
    }

    /// One label per line, blank written as `<blk>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for label in &self.classes {
            out.push_str(label.as_str());
            out.push('\n');
        }
        out
    }

    /// Reads the line-per-label format. Class order is taken as written;
    /// the blank must be present exactly once.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut classes = Vec::new();
        let mut blank_id = None;
        let mut index = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let label = if line == BLANK_LABEL {
                if blank_id.replace(classes.len()).is_some() {
                    return Err(Error::parse(idx + 1, "second blank entry"));
                }
                PhoneLabel::blank()
            } else {
                PhoneLabel::new(line).map_err(|e| Error::parse(idx + 1, e.to_string()))?
            };
            if index.insert(label.as_str().to_string(), classes.len()).is_some() {
                return Err(Error::DuplicateLabel(label.to_string()));
            }
            classes.push(label);
        }
        let blank_id = blank_id.ok_or_else(|| Error::parse(0, "inventory has no blank entry"))?;
        let fold_table = FoldTable::identity(classes.iter().filter(|l| !l.is_blank()));
        Ok(PhoneInventory {
            classes,
            blank_id,
            fold_table,
            index,
        })
    }

    /// Hex SHA-256 of the serialized class list.
    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
