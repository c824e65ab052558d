//! Subject-wise accuracy tables, improvement deltas and bar-plot data.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::modality::Modality;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Vision,
    Audio,
    Eeg,
    Multimodal,
}

impl Condition {
    /// Column order.
    pub const ALL: [Condition; 4] = [
        Condition::Vision,
        Condition::Audio,
        Condition::Eeg,
        Condition::Multimodal,
    ];
    pub const UNIMODAL: [Condition; 3] = [Condition::Vision, Condition::Audio, Condition::Eeg];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Vision => "vision",
            Condition::Audio => "audio",
            Condition::Eeg => "eeg",
            Condition::Multimodal => "multimodal",
        }
    }

    pub fn header(self) -> &'static str {
        match self {
            Condition::Vision => "Vision",
            Condition::Audio => "Audio",
            Condition::Eeg => "EEG",
            Condition::Multimodal => "Multimodal",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<Modality> for Condition {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Vision => Condition::Vision,
            Modality::Audio => Condition::Audio,
            Modality::Eeg => Condition::Eeg,
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown condition {s:?}")))
    }
}

/// Accuracies as fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectResult {
    pub subject_id: u32,
    pub accuracy: [Option<f64>; 4],
}

impl SubjectResult {
    pub fn new(subject_id: u32) -> Self {
        Self {
            subject_id,
            accuracy: [None; 4],
        }
    }

    pub fn get(&self, c: Condition) -> Option<f64> {
        self.accuracy[c.index()]
    }

    pub fn with(mut self, c: Condition, value: f64) -> Self {
        self.accuracy[c.index()] = Some(value);
        self
    }

    /// Best present column; ties go to the later column.
    pub fn winner(&self) -> Option<Condition> {
        winner(&self.accuracy)
    }
}

fn winner(values: &[Option<f64>; 4]) -> Option<Condition> {
    let mut best: Option<(Condition, f64)> = None;
    for c in Condition::ALL {
        if let Some(v) = values[c.index()] {
            if best.is_none_or(|(_, b)| v >= b) {
                best = Some((c, v));
            }
        }
    }
    best.map(|(c, _)| c)
}

/// Fraction → percent rounded to 2 decimals, as an integer count of
/// hundredths of a percent.
fn hundredths(fraction: f64) -> i64 {
    (fraction * 10_000.0).round() as i64
}

fn percent(fraction: f64) -> String {
    let h = hundredths(fraction);
    format!(
        "{}{}.{:02}",
        if h < 0 { "-" } else { "" },
        h.abs() / 100,
        h.abs() % 100
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    /// Sorted by subject.
    pub rows: Vec<SubjectResult>,
    /// Full-precision column means over present values.
    pub means: [Option<f64>; 4],
}

impl ReportTable {
    /// Multimodal improvement over a unimodal column in percentage points,
    /// taken between the two displayed (2-decimal) averages.
    pub fn improvement(&self, c: Condition) -> Option<f64> {
        let mm = self.means[Condition::Multimodal.index()]?;
        let uni = self.means[c.index()]?;
        Some((hundredths(mm) - hundredths(uni)) as f64 / 100.0)
    }

    /// The same delta without display rounding, in percentage points.
    pub fn improvement_exact(&self, c: Condition) -> Option<f64> {
        Some((self.means[Condition::Multimodal.index()]? - self.means[c.index()]?) * 100.0)
    }

    pub fn mean_winner(&self) -> Option<Condition> {
        winner(&self.means)
    }
}

pub fn aggregate(results: Vec<SubjectResult>) -> Result<ReportTable> {
    if results.is_empty() {
        return Err(Error::Data("no results to aggregate".into()));
    }
    let mut rows = results;
    rows.sort_by_key(|r| r.subject_id);
    for w in rows.windows(2) {
        if w[0].subject_id == w[1].subject_id {
            return Err(Error::Data(format!(
                "duplicate subject {}",
                w[0].subject_id
            )));
        }
    }
    for r in &rows {
        for c in Condition::ALL {
            if let Some(v) = r.get(c) {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Data(format!(
                        "subject {} {c} accuracy {v} outside [0, 1]",
                        r.subject_id
                    )));
                }
            }
        }
    }
    let means = Condition::ALL.map(|c| {
        let present: Vec<f64> = rows.iter().filter_map(|r| r.get(c)).collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    });
    Ok(ReportTable { rows, means })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), percent)
}

fn signed(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |d| format!("{d:.2}"))
}

pub fn emit_table(table: &ReportTable, format: TableFormat) -> String {
    let mut s = String::new();
    match format {
        TableFormat::Csv => {
            s.push_str("Subject,Vision,Audio,EEG,Multimodal,Winner\n");
            let mut line = |label: String, values: &[Option<f64>; 4], w: Option<Condition>| {
                let cells: Vec<String> = values.iter().map(|&v| cell(v)).collect();
                let _ = writeln!(
                    s,
                    "{label},{},{}",
                    cells.join(","),
                    w.map_or("-", Condition::header)
                );
            };
            for r in &table.rows {
                line(r.subject_id.to_string(), &r.accuracy, r.winner());
            }
            line("Avg.".into(), &table.means, table.mean_winner());
            let d: Vec<String> = Condition::UNIMODAL
                .iter()
                .map(|&c| signed(table.improvement(c)))
                .collect();
            let _ = writeln!(s, "Improvement,{},-,-", d.join(","));
        }
        TableFormat::Markdown => {
            s.push_str("| Subject | Vision | Audio | EEG | Multimodal |\n");
            s.push_str("|---|---|---|---|---|\n");
            let mut line = |label: String, values: &[Option<f64>; 4], w: Option<Condition>| {
                let cells: Vec<String> = Condition::ALL
                    .iter()
                    .map(|&c| {
                        let t = cell(values[c.index()]);
                        if Some(c) == w {
                            format!("**{t}**")
                        } else {
                            t
                        }
                    })
                    .collect();
                let _ = writeln!(s, "| {label} | {} |", cells.join(" | "));
            };
            for r in &table.rows {
                line(r.subject_id.to_string(), &r.accuracy, r.winner());
            }
            line("Avg.".into(), &table.means, table.mean_winner());
            let d: Vec<String> = Condition::UNIMODAL
                .iter()
                .map(|&c| signed(table.improvement(c)))
                .collect();
            let _ = writeln!(s, "| Improvement | {} | - |", d.join(" | "));
        }
    }
    s
}

/// Long-form `subject,condition,accuracy` rows, subject-major, with the
/// stored fractions printed exactly.
pub fn emit_barplot_data(table: &ReportTable) -> String {
    let mut s = String::from("subject,condition,accuracy\n");
    for r in &table.rows {
        for c in Condition::ALL {
            if let Some(v) = r.get(c) {
                let _ = writeln!(s, "{},{c},{v}", r.subject_id);
            }
        }
    }
    s
}

/// One `subject,condition,train_acc,val_acc` line.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub subject_id: u32,
    pub condition: Condition,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
}

pub const METRICS_HEADER: &str = "subject,condition,train_acc,val_acc";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

impl fmt::Display for MetricRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.subject_id,
            self.condition,
            opt(self.train_acc),
            opt(self.val_acc)
        )
    }
}

/// Parses metrics lines; blank lines, `#` comments and header lines are
/// skipped. `path` is used for error messages.
pub fn parse_metrics(text: &str, path: &Path) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line == METRICS_HEADER {
            continue;
        }
        let bad = |msg: String| Error::format(path, format!("line {}: {msg}", i + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", f.len())));
        }
        let subject_id = f[0]
            .parse()
            .map_err(|_| bad(format!("bad subject {:?}", f[0])))?;
        let condition = f[1]
            .parse()
            .map_err(|_| bad(format!("unknown condition {:?}", f[1])))?;
        let acc = |s: &str| -> Result<Option<f64>> {
            if s == "-" {
                return Ok(None);
            }
            match s.parse::<f64>() {
                Ok(v) if (0.0..=1.0).contains(&v) => Ok(Some(v)),
                _ => Err(bad(format!("accuracy {s:?} is not a number in [0, 1]"))),
            }
        };
        out.push(MetricRecord {
            subject_id,
            condition,
            train_acc: acc(f[2])?,
            val_acc: acc(f[3])?,
        });
    }
    Ok(out)
}

/// Folds metric records into per-subject validation accuracies. Exact
/// repeats are tolerated; conflicting values for one subject and condition
/// are a data error.
pub fn collect_results(records: &[MetricRecord]) -> Result<Vec<SubjectResult>> {
    let mut by_subject: BTreeMap<u32, SubjectResult> = BTreeMap::new();
    let mut seen: BTreeMap<(u32, Condition), &MetricRecord> = BTreeMap::new();
    for r in records {
        if let Some(prev) = seen.insert((r.subject_id, r.condition), r) {
            if prev != r {
                return Err(Error::Data(format!(
                    "conflicting entries for subject {} {}: {prev} vs {r}",
                    r.subject_id, r.condition
                )));
            }
        }
        let row = by_subject
            .entry(r.subject_id)
            .or_insert_with(|| SubjectResult::new(r.subject_id));
        row.accuracy[r.condition.index()] = r.val_acc;
    }
    Ok(by_subject.into_values().collect())
}
