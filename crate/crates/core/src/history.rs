//! Build-to-test outcome matrices.
//!
//! A [`BuildHistory`] is a chronological sequence of builds, each recording
//! one [`TestOutcome`] per registered test. Histories are ingested from CSV
//! or JSONL, replayed in file order and never re-sorted.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("no builds")]
    NoBuilds,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate build_id {0:?}")]
    DuplicateBuild(String),
    #[error("duplicate test name {0:?}")]
    DuplicateTest(String),
    #[error("unknown test {0:?}")]
    UnknownTest(String),
    #[error("build index {index} out of range (history has {len} builds)")]
    BuildOutOfRange { index: usize, len: usize },
    #[error("unknown format {0:?}, expected csv or jsonl")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Outcome of one test in one build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestOutcome {
    Pass,
    Fail,
    /// The test did not exist (or was not run) in that build.
    Absent,
}

impl TestOutcome {
    pub fn is_fail(self) -> bool {
        self == TestOutcome::Fail
    }

    pub fn is_present(self) -> bool {
        self != TestOutcome::Absent
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TestOutcome::Pass => "pass",
            TestOutcome::Fail => "fail",
            TestOutcome::Absent => "absent",
        }
    }
}

impl fmt::Display for TestOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pass" => Ok(TestOutcome::Pass),
            "fail" => Ok(TestOutcome::Fail),
            "absent" => Ok(TestOutcome::Absent),
            other => Err(format!("unknown cell token {other:?}")),
        }
    }
}

/// One build: its identifier, chronological position and one outcome per
/// registered test (aligned with [`BuildHistory::tests`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildRecord {
    pub build_id: String,
    pub index: usize,
    outcomes: Vec<TestOutcome>,
}

impl BuildRecord {
    pub fn outcome(&self, test: usize) -> TestOutcome {
        self.outcomes.get(test).copied().unwrap_or(TestOutcome::Absent)
    }

    pub fn outcomes(&self) -> &[TestOutcome] {
        &self.outcomes
    }

    pub fn has_failure(&self) -> bool {
        self.outcomes.iter().any(|o| o.is_fail())
    }

    /// A build in which no test produced a result.
    pub fn is_broken(&self) -> bool {
        self.outcomes.iter().all(|o| !o.is_present())
    }

    /// Registry indices of the tests present in this build, in registry order.
    pub fn present_tests(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_present())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn failing_tests(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_fail())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Input format of a build matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Csv,
    Jsonl,
}

impl FromStr for MatrixFormat {
    type Err = HistoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(MatrixFormat::Csv),
            "jsonl" | "ndjson" => Ok(MatrixFormat::Jsonl),
            other => Err(HistoryError::UnknownFormat(other.to_string())),
        }
    }
}

impl MatrixFormat {
    /// Guess the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("ndjson") => MatrixFormat::Jsonl,
            _ => MatrixFormat::Csv,
        }
    }
}

/// Chronological build-to-test outcome matrix for one project.
///
/// Immutable once built; every consumer reads builds in stored order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildHistory {
    project_name: String,
    tests: Vec<String>,
    test_index: HashMap<String, usize>,
    build_ids: HashSet<String>,
    builds: Vec<BuildRecord>,
}

impl BuildHistory {
    pub fn new(project_name: impl Into<String>, tests: Vec<String>) -> Result<Self, HistoryError> {
        let mut test_index = HashMap::with_capacity(tests.len());
        for (i, t) in tests.iter().enumerate() {
            if test_index.insert(t.clone(), i).is_some() {
                return Err(HistoryError::DuplicateTest(t.clone()));
            }
        }
        Ok(Self {
            project_name: project_name.into(),
            tests,
            test_index,
            build_ids: HashSet::new(),
            builds: Vec::new(),
        })
    }

    /// Append a build. `outcomes` is aligned with the test registry; a short
    /// vector is padded with `Absent`.
    pub fn push_build(
        &mut self,
        build_id: impl Into<String>,
        mut outcomes: Vec<TestOutcome>,
    ) -> Result<(), HistoryError> {
        let build_id = build_id.into();
        if self.build_ids.contains(&build_id) {
            return Err(HistoryError::DuplicateBuild(build_id));
        }
        if outcomes.len() > self.tests.len() {
            return Err(HistoryError::Malformed {
                line: self.builds.len() + 1,
                message: format!(
                    "build {build_id:?} has {} cells for {} tests",
                    outcomes.len(),
                    self.tests.len()
                ),
            });
        }
        outcomes.resize(self.tests.len(), TestOutcome::Absent);
        self.build_ids.insert(build_id.clone());
        let index = self.builds.len();
        self.builds.push(BuildRecord {
            build_id,
            index,
            outcomes,
        });
        Ok(())
    }

    pub fn project_name(&self) -> &str {
        &self.project_name
    }

    pub fn set_project_name(&mut self, name: impl Into<String>) {
        self.project_name = name.into();
    }

    pub fn tests(&self) -> &[String] {
        &self.tests
    }

    pub fn test_name(&self, test: usize) -> &str {
        &self.tests[test]
    }

    pub fn test_id(&self, name: &str) -> Result<usize, HistoryError> {
        self.test_index
            .get(name)
            .copied()
            .ok_or_else(|| HistoryError::UnknownTest(name.to_string()))
    }

    pub fn builds(&self) -> &[BuildRecord] {
        &self.builds
    }

    pub fn build(&self, index: usize) -> &BuildRecord {
        &self.builds[index]
    }

    pub fn len(&self) -> usize {
        self.builds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.builds.is_empty()
    }

    pub fn num_tests(&self) -> usize {
        self.tests.len()
    }

    /// Distinct tests that failed at least once.
    pub fn failed_test_count(&self) -> usize {
        (0..self.tests.len())
            .filter(|&t| self.builds.iter().any(|b| b.outcome(t).is_fail()))
            .count()
    }

    /// Total number of failing cells across the whole matrix.
    pub fn failure_cell_count(&self) -> usize {
        self.builds
            .iter()
            .map(|b| b.outcomes.iter().filter(|o| o.is_fail()).count())
            .sum()
    }

    /// Keep only builds with at least one failing test, dropping all-pass and
    /// broken (all-absent) builds. Order is preserved and indices re-densified.
    pub fn filter_useful_builds(&self) -> BuildHistory {
        let builds: Vec<BuildRecord> = self
            .builds
            .iter()
            .filter(|b| !b.is_broken() && b.has_failure())
            .enumerate()
            .map(|(index, b)| BuildRecord {
                build_id: b.build_id.clone(),
                index,
                outcomes: b.outcomes.clone(),
            })
            .collect();
        BuildHistory {
            project_name: self.project_name.clone(),
            tests: self.tests.clone(),
            test_index: self.test_index.clone(),
            build_ids: builds.iter().map(|b| b.build_id.clone()).collect(),
            builds,
        }
    }

    /// Failure indicators (1 = fail, 0 = pass) of `test` over builds
    /// `0..before_build`, skipping builds where the test is absent.
    pub fn outcome_vector(&self, test: &str, before_build: usize) -> Result<Vec<u8>, HistoryError> {
        let id = self.test_id(test)?;
        if before_build > self.builds.len() {
            return Err(HistoryError::BuildOutOfRange {
                index: before_build,
                len: self.builds.len(),
            });
        }
        Ok(self.outcome_bits(id, before_build))
    }

    pub(crate) fn outcome_bits(&self, test: usize, before_build: usize) -> Vec<u8> {
        self.builds[..before_build]
            .iter()
            .filter_map(|b| match b.outcome(test) {
                TestOutcome::Fail => Some(1),
                TestOutcome::Pass => Some(0),
                TestOutcome::Absent => None,
            })
            .collect()
    }

    pub fn parse(source: impl Read, format: MatrixFormat) -> Result<Self, HistoryError> {
        parse_matrix(source, format)
    }

    /// Canonical CSV: header `build_id,<tests...>`, lowercase cell tokens.
    pub fn write_csv(&self, sink: impl Write) -> Result<(), HistoryError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(sink);
        let mut header = Vec::with_capacity(self.tests.len() + 1);
        header.push("build_id");
        header.extend(self.tests.iter().map(String::as_str));
        w.write_record(&header)?;
        for b in &self.builds {
            let mut row = Vec::with_capacity(self.tests.len() + 1);
            row.push(b.build_id.as_str());
            row.extend(b.outcomes.iter().map(|o| o.as_str()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON object per build; absent tests are omitted from `outcomes`.
    pub fn write_jsonl(&self, mut sink: impl Write) -> Result<(), HistoryError> {
        for b in &self.builds {
            let mut outcomes = serde_json::Map::new();
            for (t, o) in b.outcomes.iter().enumerate() {
                if o.is_present() {
                    outcomes.insert(self.tests[t].clone(), serde_json::Value::from(o.as_str()));
                }
            }
            let line = serde_json::json!({ "build_id": b.build_id, "outcomes": outcomes });
            serde_json::to_writer(&mut sink, &line)?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("history names are UTF-8")
    }
}

/// Parse a build matrix. Builds keep file order; unknown tokens, ragged
/// rows and duplicate build ids are rejected.
pub fn parse_matrix(source: impl Read, format: MatrixFormat) -> Result<BuildHistory, HistoryError> {
    let history = match format {
        MatrixFormat::Csv => parse_csv(source)?,
        MatrixFormat::Jsonl => parse_jsonl(source)?,
    };
    if history.is_empty() {
        return Err(HistoryError::NoBuilds);
    }
    Ok(history)
}

fn parse_csv(source: impl Read) -> Result<BuildHistory, HistoryError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(HistoryError::NoBuilds),
        Some(r) => r?,
    };
    if header.get(0).map(str::trim) != Some("build_id") {
        return Err(HistoryError::Malformed {
            line: 1,
            message: "header must start with build_id".into(),
        });
    }
    let tests: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut history = BuildHistory::new("", tests)?;
    let width = header.len();
    let mut seen = HashSet::new();
    for (row, record) in records.enumerate() {
        let line = row + 2;
        let record = record?;
        if record.len() == 1 && record.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        if record.len() != width {
            return Err(HistoryError::Malformed {
                line,
                message: format!("expected {width} columns, found {}", record.len()),
            });
        }
        let build_id = record[0].trim().to_string();
        if !seen.insert(build_id.clone()) {
            return Err(HistoryError::DuplicateBuild(build_id));
        }
        let outcomes = record
            .iter()
            .skip(1)
            .map(|cell| cell.parse::<TestOutcome>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|message| HistoryError::Malformed { line, message })?;
        history.push_build(build_id, outcomes)?;
    }
    Ok(history)
}

#[derive(Deserialize)]
struct JsonBuild {
    build_id: serde_json::Value,
    #[serde(default)]
    outcomes: serde_json::Map<String, serde_json::Value>,
}

/// Build id and its named cells, as read from one JSONL line.
type JsonRow = (String, Vec<(String, TestOutcome)>);

fn parse_jsonl(source: impl Read) -> Result<BuildHistory, HistoryError> {
    let mut rows: Vec<JsonRow> = Vec::new();
    let mut tests: Vec<String> = Vec::new();
    let mut known: HashSet<String> = HashSet::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonBuild = serde_json::from_str(&line).map_err(|e| HistoryError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let build_id = match parsed.build_id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(HistoryError::Malformed {
                    line: line_no,
                    message: format!("build_id must be a string or number, found {other}"),
                })
            }
        };
        if !seen.insert(build_id.clone()) {
            return Err(HistoryError::DuplicateBuild(build_id));
        }
        let mut cells = Vec::with_capacity(parsed.outcomes.len());
        for (test, value) in parsed.outcomes {
            let token = value.as_str().ok_or_else(|| HistoryError::Malformed {
                line: line_no,
                message: format!("outcome for {test:?} must be a string"),
            })?;
            let outcome = token
                .parse::<TestOutcome>()
                .map_err(|message| HistoryError::Malformed { line: line_no, message })?;
            if known.insert(test.clone()) {
                tests.push(test.clone());
            }
            cells.push((test, outcome));
        }
        rows.push((build_id, cells));
    }
    let mut history = BuildHistory::new("", tests)?;
    for (build_id, cells) in rows {
        let mut outcomes = vec![TestOutcome::Absent; history.num_tests()];
        for (test, outcome) in cells {
            let id = history.test_id(&test)?;
            outcomes[id] = outcome;
        }
        history.push_build(build_id, outcomes)?;
    }
    Ok(history)
}

/// Table-2 style screening thresholds. Build and failure thresholds are
/// evaluated from the matrix; repository thresholds only when metadata is
/// supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SanityCriteria {
    pub min_total_builds: usize,
    pub min_useful_builds: usize,
    pub min_failed_test_cases: usize,
    pub min_developers: u64,
    pub min_pull_requests: u64,
    pub min_commits: u64,
    pub min_releases: u64,
    pub min_issues: u64,
    pub min_duration_days: u64,
    pub require_ci: bool,
}

impl Default for SanityCriteria {
    fn default() -> Self {
        Self {
            min_total_builds: 500,
            min_useful_builds: 100,
            min_failed_test_cases: 50,
            min_developers: 7,
            // "> 0", "> 20", "> 1", "> 10", "> 1 year" expressed as inclusive minimums
            min_pull_requests: 1,
            min_commits: 21,
            min_releases: 2,
            min_issues: 11,
            min_duration_days: 366,
            require_ci: true,
        }
    }
}

/// Optional repository facts accompanying a build matrix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectMetadata {
    pub developers: Option<u64>,
    pub pull_requests: Option<u64>,
    pub commits: Option<u64>,
    pub releases: Option<u64>,
    pub issues: Option<u64>,
    pub duration_days: Option<u64>,
    pub has_ci: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Passed,
    Failed,
    NotEvaluated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SanityEntry {
    pub criterion: &'static str,
    pub threshold: String,
    pub observed: Option<String>,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SanityReport {
    pub entries: Vec<SanityEntry>,
}

impl SanityReport {
    /// True when every evaluated criterion passed.
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != CheckStatus::Failed)
    }

    pub fn entry(&self, criterion: &str) -> Option<&SanityEntry> {
        self.entries.iter().find(|e| e.criterion == criterion)
    }
}

impl fmt::Display for SanityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>10} {:>10}  status", "criterion", "threshold", "observed")?;
        for e in &self.entries {
            let status = match e.status {
                CheckStatus::Passed => "pass",
                CheckStatus::Failed => "FAIL",
                CheckStatus::NotEvaluated => "not evaluated",
            };
            writeln!(
                f,
                "{:<18} {:>10} {:>10}  {status}",
                e.criterion,
                e.threshold,
                e.observed.as_deref().unwrap_or("-")
            )?;
        }
        write!(f, "overall: {}", if self.passed() { "pass" } else { "FAIL" })
    }
}

/// Screen a raw (unfiltered) history against `criteria`.
pub fn sanity_check(
    history: &BuildHistory,
    criteria: &SanityCriteria,
    metadata: Option<&ProjectMetadata>,
) -> SanityReport {
    fn at_least(criterion: &'static str, observed: Option<u64>, min: u64) -> SanityEntry {
        SanityEntry {
            criterion,
            threshold: format!(">= {min}"),
            observed: observed.map(|v| v.to_string()),
            status: match observed {
                None => CheckStatus::NotEvaluated,
                Some(v) if v >= min => CheckStatus::Passed,
                Some(_) => CheckStatus::Failed,
            },
        }
    }

    let useful = history.filter_useful_builds();
    let meta = metadata.cloned().unwrap_or_default();
    let mut entries = vec![
        at_least(
            "Total Builds",
            Some(history.len() as u64),
            criteria.min_total_builds as u64,
        ),
        at_least(
            "Useful Builds",
            Some(useful.len() as u64),
            criteria.min_useful_builds as u64,
        ),
        at_least(
            "Failed Test Cases",
            Some(history.failed_test_count() as u64),
            criteria.min_failed_test_cases as u64,
        ),
        at_least("Developers", meta.developers, criteria.min_developers),
        at_least("Pull Requests", meta.pull_requests, criteria.min_pull_requests),
        at_least("Commits", meta.commits, criteria.min_commits),
        at_least("Releases", meta.releases, criteria.min_releases),
        at_least("Issues", meta.issues, criteria.min_issues),
        at_least("Duration (days)", meta.duration_days, criteria.min_duration_days),
    ];
    entries.push(SanityEntry {
        criterion: "Has CI",
        threshold: if criteria.require_ci {
            "true".into()
        } else {
            "any".into()
        },
        observed: meta.has_ci.map(|v| v.to_string()),
        status: match meta.has_ci {
            None => CheckStatus::NotEvaluated,
            Some(v) if v || !criteria.require_ci => CheckStatus::Passed,
            Some(_) => CheckStatus::Failed,
        },
    });
    SanityReport { entries }
}
