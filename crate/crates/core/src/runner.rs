//! Replay a build history through prioritization schemes and collect APFD
//! samples, runtimes and reports.
//!
//! Randomness: every (scheme, build) pair gets its own ChaCha8 stream seeded
//! with [`sub_seed`], so adding or removing a scheme never changes what the
//! others draw.

use std::fs;
use std::io;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::BuildHistory;
use crate::metrics::{
    detection_curve, fault_positions, ApfdInput, ApfdSample, DetectionCurve, FaultProfile, MetricsError,
};
use crate::prioritizers::{
    make_prioritizer, ExecutionOracle, HistoryView, PrioritizeError, Round, SchemeId, SchemeParams,
};
use crate::stats::{scott_knott, RankReport, StatsError, Treatment, SMALL_EFFECT};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{scheme} failed on build {build}: {source}")]
    Prioritize {
        scheme: SchemeId,
        build: usize,
        source: PrioritizeError,
    },
    #[error("{scheme} returned an ordering that is not a permutation of build {build}")]
    InvalidOrdering { scheme: SchemeId, build: usize },
    #[error("{scheme} consulted outcomes of build {build} it was not allowed to see")]
    Leak { scheme: SchemeId, build: usize },
    #[error("no schemes selected")]
    NoSchemes,
    #[error("no scheme produced results (all skipped or timed out)")]
    NothingToReport,
    #[error(transparent)]
    Params(PrioritizeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// C1 is skipped on projects beyond either bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C1Guard {
    pub max_builds: usize,
    pub max_failed_tests: usize,
}

impl Default for C1Guard {
    fn default() -> Self {
        Self {
            max_builds: 800,
            max_failed_tests: 1500,
        }
    }
}

impl C1Guard {
    /// Reason to skip, if any.
    pub fn check(&self, history: &BuildHistory) -> Option<String> {
        let failed = history.failed_test_count();
        if history.len() > self.max_builds {
            Some(format!(
                "{} builds exceed the limit of {}",
                history.len(),
                self.max_builds
            ))
        } else if failed > self.max_failed_tests {
            Some(format!(
                "{failed} failed tests exceed the limit of {}",
                self.max_failed_tests
            ))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schemes: Vec<SchemeId>,
    pub seed: u64,
    pub params: SchemeParams,
    /// Wall-clock budget per scheme for the whole replay.
    pub timeout_secs: f64,
    /// `None` disables the guard.
    pub c1_guard: Option<C1Guard>,
    /// Fill `elapsed_ms` in the samples file. Off by default since timings
    /// make the file differ between otherwise identical runs.
    pub record_timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schemes: SchemeId::ALL.to_vec(),
            seed: 0,
            params: SchemeParams::default(),
            timeout_secs: 600.0,
            c1_guard: Some(C1Guard::default()),
            record_timings: false,
        }
    }
}

impl RunConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.schemes.is_empty() {
            return Err(RunError::NoSchemes);
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(RunError::Params(PrioritizeError::InvalidParameter(
                "timeout must be positive".into(),
            )));
        }
        self.params.validate().map_err(RunError::Params)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed for `scheme` on build `build`:
/// `splitmix64(splitmix64(master ^ fnv1a(id)) ^ build)`.
pub fn sub_seed(master: u64, scheme: SchemeId, build: usize) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(scheme.as_str())) ^ build as u64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    TimedOut,
    Skipped(String),
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::TimedOut => "timed_out",
            RunStatus::Skipped(_) => "skipped",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub scheme: SchemeId,
    pub status: RunStatus,
    /// For a timed-out run, the builds finished before the deadline.
    pub samples: Vec<ApfdSample>,
    pub profiles: Vec<FaultProfile>,
    pub elapsed: Duration,
}

impl SchemeRun {
    pub fn apfd_values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.apfd).collect()
    }
}

/// Replay `history` (already useful-filtered) through one scheme.
pub fn replay(
    history: &BuildHistory,
    scheme: SchemeId,
    params: &SchemeParams,
    seed: u64,
    timeout: Duration,
) -> Result<SchemeRun, RunError> {
    let start = Instant::now();
    let deadline = start + timeout;
    let mut prioritizer = make_prioritizer(scheme, params);
    let mut samples = Vec::with_capacity(history.len());
    let mut profiles = Vec::with_capacity(history.len());
    let mut status = RunStatus::Completed;

    for (k, build) in history.builds().iter().enumerate() {
        if Instant::now() >= deadline {
            status = RunStatus::TimedOut;
            break;
        }
        let tests = build.present_tests();
        if !build.has_failure() {
            continue;
        }
        let build_start = Instant::now();
        let mut oracle = ExecutionOracle::from_build(build);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, scheme, k));
        let result = prioritizer.prioritize(Round {
            prior: HistoryView::new(history, k),
            tests: &tests,
            oracle: &mut oracle,
            rng: &mut rng,
            deadline: Some(deadline),
        });
        let ordering = match result {
            Ok(o) => o,
            Err(PrioritizeError::TimedOut) => {
                status = RunStatus::TimedOut;
                break;
            }
            Err(source) => {
                return Err(RunError::Prioritize {
                    scheme,
                    build: k,
                    source,
                })
            }
        };
        if !ordering.is_permutation_of(&tests) {
            return Err(RunError::InvalidOrdering { scheme, build: k });
        }
        let leaked = (!scheme.is_omniscient() && oracle.omniscient_reads() > 0)
            || (scheme.is_adaptive() && oracle.reveal_log() != ordering.as_slice());
        if leaked {
            return Err(RunError::Leak { scheme, build: k });
        }
        let ranks = fault_positions(ordering.as_slice(), |t| build.outcome(t).is_fail());
        let apfd = ApfdInput::new(tests.len(), ranks.clone())?.apfd()?;
        samples.push(ApfdSample {
            algorithm: scheme.as_str().to_string(),
            build_index: k,
            apfd,
            elapsed: Some(build_start.elapsed()),
        });
        profiles.push(FaultProfile { n: tests.len(), ranks });
    }
    Ok(SchemeRun {
        scheme,
        status,
        samples,
        profiles,
        elapsed: start.elapsed(),
    })
}

/// Useful-filter `history` and replay every configured scheme, in parallel.
/// Results come back in the configured scheme order.
pub fn run_schemes(history: &BuildHistory, config: &RunConfig) -> Result<Vec<SchemeRun>, RunError> {
    config.validate()?;
    let useful = history.filter_useful_builds();
    let skip_c1 = config.c1_guard.and_then(|g| g.check(&useful));
    config
        .schemes
        .par_iter()
        .map(|&scheme| match (&skip_c1, scheme) {
            (Some(reason), SchemeId::C1) => Ok(SchemeRun {
                scheme,
                status: RunStatus::Skipped(reason.clone()),
                samples: Vec::new(),
                profiles: Vec::new(),
                elapsed: Duration::ZERO,
            }),
            _ => replay(&useful, scheme, &config.params, config.seed, config.timeout()),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub ranks: RankReport,
    pub curves: Vec<(SchemeId, DetectionCurve)>,
}

/// Rank completed schemes; skipped and timed-out ones become "n/a" rows.
pub fn build_report(runs: &[SchemeRun]) -> Result<RunReport, RunError> {
    let completed: Vec<&SchemeRun> = runs
        .iter()
        .filter(|r| r.status == RunStatus::Completed && !r.samples.is_empty())
        .collect();
    if completed.is_empty() {
        return Err(RunError::NothingToReport);
    }
    let treatments: Vec<Treatment> = completed
        .iter()
        .map(|r| Treatment::new(r.scheme.as_str(), r.apfd_values()))
        .collect();
    let mut ranks = scott_knott(&treatments, SMALL_EFFECT)?;
    for r in runs.iter().filter(|r| !completed.iter().any(|c| c.scheme == r.scheme)) {
        ranks.push_unavailable(r.scheme.as_str());
    }
    let curves = completed
        .iter()
        .map(|r| (r.scheme, detection_curve(&r.profiles)))
        .collect();
    Ok(RunReport { ranks, curves })
}

pub fn samples_csv(runs: &[&SchemeRun], with_timings: bool) -> String {
    let mut out = String::from("algorithm,build_index,apfd,elapsed_ms\n");
    for run in runs {
        for s in &run.samples {
            let elapsed = match (with_timings, s.elapsed) {
                (true, Some(d)) => format!("{:.3}", d.as_secs_f64() * 1000.0),
                _ => String::new(),
            };
            out.push_str(&format!("{},{},{},{}\n", s.algorithm, s.build_index, s.apfd, elapsed));
        }
    }
    out
}

pub fn runtime_csv(runs: &[SchemeRun]) -> String {
    let mut out = String::from("algorithm,status,builds,seconds\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.scheme,
            r.status.label(),
            r.samples.len(),
            r.elapsed.as_secs_f64()
        ));
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Write samples, rank report, runtimes and curves into `dir`.
///
/// Everything except `runtime.csv` (and `elapsed_ms` when timings are on)
/// is a pure function of the history and the configuration.
pub fn write_artifacts(dir: &Path, runs: &[SchemeRun], report: &RunReport, with_timings: bool) -> Result<(), RunError> {
    let curves_dir = dir.join("curves");
    fs::create_dir_all(&curves_dir).map_err(|source| RunError::Io {
        path: curves_dir.display().to_string(),
        source,
    })?;
    let (complete, partial): (Vec<&SchemeRun>, Vec<&SchemeRun>) =
        runs.iter().partition(|r| r.status == RunStatus::Completed);
    write(&dir.join("samples.csv"), &samples_csv(&complete, with_timings))?;
    let partial: Vec<&SchemeRun> = partial.into_iter().filter(|r| !r.samples.is_empty()).collect();
    if !partial.is_empty() {
        write(&dir.join("samples_partial.csv"), &samples_csv(&partial, with_timings))?;
    }
    write(&dir.join("rank_report.txt"), &report.ranks.to_string())?;
    write(&dir.join("rank_report.csv"), &report.ranks.to_csv())?;
    write(&dir.join("runtime.csv"), &runtime_csv(runs))?;
    for (scheme, curve) in &report.curves {
        write(
            &curves_dir.join(format!("{}.csv", scheme.as_str().to_lowercase())),
            &curve.to_csv(),
        )?;
    }
    Ok(())
}
