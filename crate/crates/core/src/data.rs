//! Two-condition crossed subject/item reading-time datasets.
//!
//! Subjects and items are stored as dense zero-based indices; the original
//! CSV labels are kept alongside so reports can map back to them.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const CSV_COLUMNS: [&str; 4] = ["subject", "item", "condition", "rt"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}` in CSV header")]
    MissingColumn(&'static str),
    #[error("non-positive reading time, line {line}")]
    NonPositiveRt { line: u64 },
    #[error("reading time is not a finite number, line {line}: `{value}`")]
    BadRt { line: u64, value: String },
    #[error("condition must be +1 or -1, line {line}: `{value}`")]
    BadCondition { line: u64, value: String },
    #[error("trial {trial} has a reading time that is not a positive finite number")]
    InvalidTrialRt { trial: usize },
    #[error("index out of range on trial {trial}: {what} {index} >= {bound}")]
    IndexOutOfRange {
        trial: usize,
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{what} {index} never occurs in the data")]
    UnusedIndex { what: &'static str, index: usize },
    #[error("condition {0} never occurs; both conditions are required")]
    MissingCondition(Condition),
    #[error("dataset has no trials")]
    Empty,
    #[error("label count does not match: {0}")]
    LabelMismatch(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sum-coded experimental condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    /// Coded +1: plural distractor, where attraction is expected.
    Attraction,
    /// Coded -1: both nouns singular.
    NoAttraction,
}

impl Condition {
    pub fn code(self) -> f64 {
        match self {
            Condition::Attraction => 1.0,
            Condition::NoAttraction => -1.0,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(Condition::Attraction),
            -1 => Some(Condition::NoAttraction),
            _ => None,
        }
    }

    fn parse(raw: &str) -> Option<Self> {
        // Accept the Unicode minus sign as well; spreadsheets like to emit it.
        let normalized = raw.trim().replace('\u{2212}', "-");
        let code: f64 = normalized.parse().ok()?;
        if code == 1.0 {
            Some(Condition::Attraction)
        } else if code == -1.0 {
            Some(Condition::NoAttraction)
        } else {
            None
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Attraction => f.write_str("+1"),
            Condition::NoAttraction => f.write_str("-1"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub subject: usize,
    pub item: usize,
    pub condition: Condition,
    /// Reading time in milliseconds.
    pub rt: f64,
}

/// Validated, immutable reading-time dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trials: Vec<Trial>,
    n_subjects: usize,
    n_items: usize,
    subject_labels: Vec<String>,
    item_labels: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from already-indexed trials. Labels default to the
    /// one-based index.
    pub fn new(trials: Vec<Trial>, n_subjects: usize, n_items: usize) -> Result<Self, DataError> {
        let subject_labels = (1..=n_subjects).map(|i| i.to_string()).collect();
        let item_labels = (1..=n_items).map(|j| j.to_string()).collect();
        Self::with_labels(trials, subject_labels, item_labels)
    }

    pub fn with_labels(
        trials: Vec<Trial>,
        subject_labels: Vec<String>,
        item_labels: Vec<String>,
    ) -> Result<Self, DataError> {
        let n_subjects = subject_labels.len();
        let n_items = item_labels.len();
        if trials.is_empty() {
            return Err(DataError::Empty);
        }
        let mut seen_subject = vec![false; n_subjects];
        let mut seen_item = vec![false; n_items];
        let mut seen_pairs = HashSet::new();
        let mut repeated = 0usize;
        let (mut has_pos, mut has_neg) = (false, false);
        for (n, t) in trials.iter().enumerate() {
            if t.subject >= n_subjects {
                return Err(DataError::IndexOutOfRange {
                    trial: n,
                    what: "subject",
                    index: t.subject,
                    bound: n_subjects,
                });
            }
            if t.item >= n_items {
                return Err(DataError::IndexOutOfRange {
                    trial: n,
                    what: "item",
                    index: t.item,
                    bound: n_items,
                });
            }
            if !(t.rt > 0.0) || !t.rt.is_finite() {
                return Err(DataError::InvalidTrialRt { trial: n });
            }
            seen_subject[t.subject] = true;
            seen_item[t.item] = true;
            match t.condition {
                Condition::Attraction => has_pos = true,
                Condition::NoAttraction => has_neg = true,
            }
            if !seen_pairs.insert((t.subject, t.item)) {
                repeated += 1;
            }
        }
        if let Some(i) = seen_subject.iter().position(|s| !s) {
            return Err(DataError::UnusedIndex {
                what: "subject",
                index: i,
            });
        }
        if let Some(j) = seen_item.iter().position(|s| !s) {
            return Err(DataError::UnusedIndex { what: "item", index: j });
        }
        if !has_pos {
            return Err(DataError::MissingCondition(Condition::Attraction));
        }
        if !has_neg {
            return Err(DataError::MissingCondition(Condition::NoAttraction));
        }
        if repeated > 0 {
            log::warn!("{repeated} trial(s) repeat an already-seen (subject, item) pair");
        }
        Ok(Self {
            trials,
            n_subjects,
            n_items,
            subject_labels,
            item_labels,
        })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn subject_labels(&self) -> &[String] {
        &self.subject_labels
    }

    pub fn item_labels(&self) -> &[String] {
        &self.item_labels
    }

    /// Splits trial indices (zero-based, in trial order) by condition:
    /// `(attraction, no_attraction)`.
    pub fn condition_split(&self) -> (Vec<usize>, Vec<usize>) {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (n, t) in self.trials.iter().enumerate() {
            match t.condition {
                Condition::Attraction => pos.push(n),
                Condition::NoAttraction => neg.push(n),
            }
        }
        (pos, neg)
    }

    /// Copy of the dataset without trial `n`. Indices are kept as they are,
    /// so a subject or item that only appeared in trial `n` stays in the
    /// index space (its intercept is then informed by the prior alone).
    pub fn without_trial(&self, n: usize) -> Option<Self> {
        if n >= self.trials.len() || self.trials.len() < 2 {
            return None;
        }
        let mut trials = self.trials.clone();
        trials.remove(n);
        Some(Self {
            trials,
            n_subjects: self.n_subjects,
            n_items: self.n_items,
            subject_labels: self.subject_labels.clone(),
            item_labels: self.item_labels.clone(),
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut cols = [0usize; 4];
        for (slot, name) in cols.iter_mut().zip(CSV_COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| h == name)
                .ok_or(DataError::MissingColumn(name))?;
        }
        let [c_subject, c_item, c_condition, c_rt] = cols;

        let mut subjects: HashMap<String, usize> = HashMap::new();
        let mut items: HashMap<String, usize> = HashMap::new();
        let mut subject_labels = Vec::new();
        let mut item_labels = Vec::new();
        let mut trials = Vec::new();
        for record in rdr.records() {
            let record = record?;
            // Header is line 1.
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let field = |c: usize| record.get(c).unwrap_or("");

            let rt_raw = field(c_rt);
            let rt: f64 = rt_raw.parse().map_err(|_| DataError::BadRt {
                line,
                value: rt_raw.to_string(),
            })?;
            if !rt.is_finite() {
                return Err(DataError::BadRt {
                    line,
                    value: rt_raw.to_string(),
                });
            }
            if rt <= 0.0 {
                return Err(DataError::NonPositiveRt { line });
            }
            let cond_raw = field(c_condition);
            let condition = Condition::parse(cond_raw).ok_or_else(|| DataError::BadCondition {
                line,
                value: cond_raw.to_string(),
            })?;

            let subject = intern(field(c_subject), &mut subjects, &mut subject_labels);
            let item = intern(field(c_item), &mut items, &mut item_labels);
            trials.push(Trial {
                subject,
                item,
                condition,
                rt,
            });
        }
        Self::with_labels(trials, subject_labels, item_labels)
    }

    /// Writes the dataset in the same schema `read_csv` accepts, using the
    /// stored labels.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(CSV_COLUMNS)?;
        for t in &self.trials {
            wtr.write_record([
                self.subject_labels[t.subject].as_str(),
                self.item_labels[t.item].as_str(),
                &t.condition.to_string(),
                &format_rt(t.rt),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn intern(label: &str, map: &mut HashMap<String, usize>, labels: &mut Vec<String>) -> usize {
    if let Some(&idx) = map.get(label) {
        return idx;
    }
    let idx = labels.len();
    map.insert(label.to_string(), idx);
    labels.push(label.to_string());
    idx
}

/// Shortest representation that parses back to the same f64.
fn format_rt(rt: f64) -> String {
    format!("{rt:?}")
}
