//! The functionality and contribution tables as CSV.
//!
//! Files are RFC 4180: UTF-8, CRLF record terminators, a header row, and
//! quoting only where a field needs it. Rows are written in key order.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::attribution::SoloFunction;

pub const FUNCTIONALITY_COLUMNS: [&str; 7] = [
    "Filename",
    "Functionality",
    "Difficulty",
    "ByteSize",
    "LineCount",
    "Complexity",
    "TagCount",
];

pub const CONTRIBUTION_COLUMNS: [&str; 6] = [
    "Student",
    "File",
    "Description",
    "LinesOwned",
    "LinesAddedInWindow",
    "SoloFunctions",
];

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("column {column:?}: {message}")]
    SchemaMismatch { column: String, message: String },
    #[error("line {line}: {message}")]
    MalformedCsv { line: u64, message: String },
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalityRecord {
    pub filename: String,
    pub functionality: String,
    pub difficulty: String,
    pub byte_size: u64,
    pub line_count: u64,
    /// File score; empty for files without a complexity measure.
    pub complexity: Option<u32>,
    /// Opening tags; empty for non-markup files.
    pub tag_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRecord {
    pub student: String,
    pub file: String,
    pub description: String,
    pub lines_owned: f64,
    pub lines_added_in_window: f64,
    pub solo_functions: Vec<SoloFunction>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalityTable {
    rows: Vec<FunctionalityRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContributionTable {
    rows: Vec<ContributionRecord>,
}

impl FunctionalityTable {
    /// Sorts by filename; filenames must be unique.
    pub fn new(mut rows: Vec<FunctionalityRecord>) -> Result<Self, TableError> {
        rows.sort_by(|a, b| a.filename.cmp(&b.filename));
        if let Some(w) = rows.windows(2).find(|w| w[0].filename == w[1].filename) {
            return Err(TableError::DuplicateKey(w[0].filename.clone()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[FunctionalityRecord] {
        &self.rows
    }

    pub fn get(&self, filename: &str) -> Option<&FunctionalityRecord> {
        self.rows.iter().find(|r| r.filename == filename)
    }
}

impl ContributionTable {
    /// Sorts by (student, file); pairs must be unique.
    pub fn new(mut rows: Vec<ContributionRecord>) -> Result<Self, TableError> {
        rows.sort_by(|a, b| (&a.student, &a.file).cmp(&(&b.student, &b.file)));
        if let Some(w) = rows
            .windows(2)
            .find(|w| (&w[0].student, &w[0].file) == (&w[1].student, &w[1].file))
        {
            return Err(TableError::DuplicateKey(format!("{} / {}", w[0].student, w[0].file)));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ContributionRecord] {
        &self.rows
    }
}

/// Either table, for the generic entry points.
pub trait CsvTable: Sized {
    const COLUMNS: &'static [&'static str];
    fn records(&self) -> Vec<Vec<String>>;
    fn from_records(records: Vec<(u64, Vec<String>)>) -> Result<Self, TableError>;
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn parse_num<T: std::str::FromStr>(line: u64, column: &str, raw: &str) -> Result<T, TableError> {
    raw.trim().parse().map_err(|_| TableError::MalformedCsv {
        line,
        message: format!("{column}: {raw:?} is not a number"),
    })
}

fn parse_opt<T: std::str::FromStr>(line: u64, column: &str, raw: &str) -> Result<Option<T>, TableError> {
    if raw.trim().is_empty() {
        Ok(None)
    } else {
        parse_num(line, column, raw).map(Some)
    }
}

/// `name:score;name:score`
pub fn format_solo_functions(fns: &[SoloFunction]) -> String {
    fns.iter()
        .map(|f| format!("{}:{}", f.name, f.score))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_solo_functions(line: u64, raw: &str) -> Result<Vec<SoloFunction>, TableError> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(';')
        .map(|item| {
            let (name, score) = item.rsplit_once(':').ok_or_else(|| TableError::MalformedCsv {
                line,
                message: format!("SoloFunctions: {item:?} is not name:score"),
            })?;
            Ok(SoloFunction {
                name: name.to_string(),
                score: parse_num(line, "SoloFunctions", score)?,
            })
        })
        .collect()
}

impl CsvTable for FunctionalityTable {
    const COLUMNS: &'static [&'static str] = &FUNCTIONALITY_COLUMNS;

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.filename.clone(),
                    r.functionality.clone(),
                    r.difficulty.clone(),
                    r.byte_size.to_string(),
                    r.line_count.to_string(),
                    opt(&r.complexity),
                    opt(&r.tag_count),
                ]
            })
            .collect()
    }

    fn from_records(records: Vec<(u64, Vec<String>)>) -> Result<Self, TableError> {
        let rows = records
            .into_iter()
            .map(|(line, f)| {
                Ok(FunctionalityRecord {
                    filename: f[0].clone(),
                    functionality: f[1].clone(),
                    difficulty: f[2].clone(),
                    byte_size: parse_num(line, "ByteSize", &f[3])?,
                    line_count: parse_num(line, "LineCount", &f[4])?,
                    complexity: parse_opt(line, "Complexity", &f[5])?,
                    tag_count: parse_opt(line, "TagCount", &f[6])?,
                })
            })
            .collect::<Result<Vec<_>, TableError>>()?;
        Self::new(rows)
    }
}

impl CsvTable for ContributionTable {
    const COLUMNS: &'static [&'static str] = &CONTRIBUTION_COLUMNS;

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.student.clone(),
                    r.file.clone(),
                    r.description.clone(),
                    r.lines_owned.to_string(),
                    r.lines_added_in_window.to_string(),
                    format_solo_functions(&r.solo_functions),
                ]
            })
            .collect()
    }

    fn from_records(records: Vec<(u64, Vec<String>)>) -> Result<Self, TableError> {
        let rows = records
            .into_iter()
            .map(|(line, f)| {
                Ok(ContributionRecord {
                    student: f[0].clone(),
                    file: f[1].clone(),
                    description: f[2].clone(),
                    lines_owned: parse_num(line, "LinesOwned", &f[3])?,
                    lines_added_in_window: parse_num(line, "LinesAddedInWindow", &f[4])?,
                    solo_functions: parse_solo_functions(line, &f[5])?,
                })
            })
            .collect::<Result<Vec<_>, TableError>>()?;
        Self::new(rows)
    }
}

/// Writes the table and returns the number of bytes written.
pub fn write_csv<T: CsvTable, W: Write>(table: &T, destination: W) -> Result<u64, TableError> {
    let mut counter = CountingWriter { inner: destination, count: 0 };
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .quote_style(csv::QuoteStyle::Necessary)
            .from_writer(&mut counter);
        w.write_record(T::COLUMNS).map_err(csv_io)?;
        for record in table.records() {
            w.write_record(&record).map_err(csv_io)?;
        }
        w.flush()?;
    }
    Ok(counter.count)
}

pub fn to_csv_bytes<T: CsvTable>(table: &T) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(table, &mut out).expect("writing to memory");
    out
}

fn csv_io(e: csv::Error) -> TableError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TableError::Io(io),
        other => TableError::MalformedCsv {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

struct CountingWriter<W> {
    inner: W,
    count: u64,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.count += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Line of the first quoted field that never closes.
fn unbalanced_quote(text: &str) -> Option<u64> {
    let mut line = 1u64;
    let mut in_quotes = false;
    let mut opened_at = 0;
    let mut at_field_start = true;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\n' {
            line += 1;
        }
        if in_quotes {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    chars.next();
                } else {
                    in_quotes = false;
                }
            }
            continue;
        }
        match c {
            '"' if at_field_start => {
                in_quotes = true;
                opened_at = line;
            }
            ',' | '\n' => {
                at_field_start = true;
                continue;
            }
            '\r' => continue,
            _ => {}
        }
        at_field_start = false;
    }
    in_quotes.then_some(opened_at)
}

/// Parses a table written by [`write_csv`] or authored in the same schema.
pub fn read_csv<T: CsvTable, R: Read>(mut source: R) -> Result<T, TableError> {
    let mut text = String::new();
    source.read_to_string(&mut text).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => TableError::MalformedCsv {
            line: 0,
            message: "input is not UTF-8".into(),
        },
        _ => TableError::Io(e),
    })?;
    if let Some(line) = unbalanced_quote(&text) {
        return Err(TableError::MalformedCsv {
            line,
            message: "unbalanced quote".into(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| malformed(&text, e))?.clone();
    let header: Vec<&str> = headers.iter().collect();
    let present: BTreeSet<&str> = header.iter().copied().collect();
    for column in T::COLUMNS {
        if !present.contains(column) {
            return Err(TableError::SchemaMismatch {
                column: column.to_string(),
                message: "missing".into(),
            });
        }
    }
    if let Some(extra) = header.iter().find(|h| !T::COLUMNS.contains(h)) {
        return Err(TableError::SchemaMismatch {
            column: extra.to_string(),
            message: "unexpected column".into(),
        });
    }
    let order: Vec<usize> = T::COLUMNS
        .iter()
        .map(|c| header.iter().position(|h| h == c).expect("checked"))
        .collect();

    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| malformed(&text, e))?;
        let line = record.position().map_or(0, |p| line_at(&text, p.byte()));
        records.push((line, order.iter().map(|&i| record[i].to_string()).collect()));
    }
    T::from_records(records)
}

/// 1-based line where a record starts. On CRLF input the csv crate reports
/// offsets that still point into the previous terminator.
fn line_at(text: &str, byte: u64) -> u64 {
    let bytes = text.as_bytes();
    let mut end = (byte as usize).min(text.len());
    while end < bytes.len() && matches!(bytes[end], b'\r' | b'\n') {
        end += 1;
    }
    bytes[..end].iter().filter(|&&b| b == b'\n').count() as u64 + 1
}

fn malformed(text: &str, e: csv::Error) -> TableError {
    let line = e.position().map_or(0, |p| line_at(text, p.byte()));
    TableError::MalformedCsv {
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frow(name: &str, text: &str) -> FunctionalityRecord {
        FunctionalityRecord {
            filename: name.into(),
            functionality: text.into(),
            difficulty: "moderate".into(),
            byte_size: 10,
            line_count: 2,
            complexity: Some(3),
            tag_count: None,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let bytes = to_csv_bytes(&FunctionalityTable::default());
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "Filename,Functionality,Difficulty,ByteSize,LineCount,Complexity,TagCount\r\n"
        );
    }

    #[test]
    fn rows_are_sorted_and_quoted() {
        let t = FunctionalityTable::new(vec![frow("b.py", "x"), frow("a.py", "serves, and\nroutes")]).unwrap();
        let text = String::from_utf8(to_csv_bytes(&t)).unwrap();
        let lines: Vec<&str> = text.split("\r\n").collect();
        assert_eq!(lines[1], "a.py,\"serves, and\nroutes\",moderate,10,2,3,");
        assert!(lines[2].starts_with("b.py,"));
        let back: FunctionalityTable = read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        assert!(matches!(
            FunctionalityTable::new(vec![frow("a", "x"), frow("a", "y")]),
            Err(TableError::DuplicateKey(_))
        ));
    }

    #[test]
    fn missing_column_is_schema_mismatch() {
        let doc = "Filename,Functionality,ByteSize,LineCount,Complexity,TagCount\r\na,b,1,2,,\r\n";
        match read_csv::<FunctionalityTable, _>(doc.as_bytes()) {
            Err(TableError::SchemaMismatch { column, .. }) => assert_eq!(column, "Difficulty"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unbalanced_quote_reports_line() {
        let doc = "Filename,Functionality,Difficulty,ByteSize,LineCount,Complexity,TagCount\r\n\
a,ok,ok,1,1,,\r\n\
b,\"never closed,ok,1,1,,\r\n";
        match read_csv::<FunctionalityTable, _>(doc.as_bytes()) {
            Err(TableError::MalformedCsv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let doc = "Student,File,Description,LinesOwned,LinesAddedInWindow,SoloFunctions\r\nAna,a.py,d,lots,1,\r\n";
        let r = read_csv::<ContributionTable, _>(doc.as_bytes());
        assert!(matches!(r, Err(TableError::MalformedCsv { line: 2, .. })), "{r:?}");
    }

    #[test]
    fn solo_functions_column() {
        let t = ContributionTable::new(vec![ContributionRecord {
            student: "Ana Lima".into(),
            file: "auth.py".into(),
            description: "login".into(),
            lines_owned: 1.0 / 3.0,
            lines_added_in_window: 2.5,
            solo_functions: vec![
                SoloFunction { name: "login".into(), score: 2 },
                SoloFunction { name: "verify".into(), score: 1 },
            ],
        }])
        .unwrap();
        let text = String::from_utf8(to_csv_bytes(&t)).unwrap();
        assert!(text.contains(",login:2;verify:1\r\n"), "{text}");
        assert_eq!(read_csv::<ContributionTable, _>(text.as_bytes()).unwrap(), t);
    }
}
