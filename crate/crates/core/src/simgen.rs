//! Seeded synthetic build histories.
//!
//! `open_like` histories have persistent failures: each test is a two-state
//! chain that, once failing, keeps failing with probability `1 - 1/run_length`,
//! so streak lengths are geometric with mean `run_length`. The entry rate is
//! chosen so the long-run fraction of failing cells equals `fail_density`;
//! on small suites the forced failures below push it somewhat higher.
//!
//! `closed_like` histories have no memory: tests are grouped into clusters
//! (a `cofail_cluster` share of the suite, `cluster_size` tests each) and
//! singletons, and every group independently fails as a whole in each build
//! with probability `fail_density`.
//!
//! Both kinds guarantee at least one failure per build. A build that would
//! come out clean gets one streak start (open_like) or one failing group
//! (closed_like), chosen uniformly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{BuildHistory, HistoryError, TestOutcome};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error(transparent)]
    History(#[from] HistoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    OpenLike,
    ClosedLike,
}

fn default_run_length() -> f64 {
    5.0
}

fn default_cofail_cluster() -> f64 {
    0.8
}

fn default_cluster_size() -> usize {
    10
}

fn default_project() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenProfile {
    pub kind: ProfileKind,
    pub n_tests: usize,
    pub n_builds: usize,
    pub fail_density: f64,
    /// Mean failure streak length (open_like).
    #[serde(default = "default_run_length")]
    pub run_length: f64,
    /// Share of tests that belong to co-failing clusters (closed_like).
    #[serde(default = "default_cofail_cluster")]
    pub cofail_cluster: f64,
    #[serde(default = "default_cluster_size")]
    pub cluster_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_project")]
    pub project_name: String,
}

impl GenProfile {
    pub fn open_like(n_tests: usize, n_builds: usize, fail_density: f64, run_length: f64, seed: u64) -> Self {
        Self {
            kind: ProfileKind::OpenLike,
            n_tests,
            n_builds,
            fail_density,
            run_length,
            cofail_cluster: default_cofail_cluster(),
            cluster_size: default_cluster_size(),
            seed,
            project_name: default_project(),
        }
    }

    pub fn closed_like(n_tests: usize, n_builds: usize, fail_density: f64, seed: u64) -> Self {
        Self {
            kind: ProfileKind::ClosedLike,
            ..Self::open_like(n_tests, n_builds, fail_density, default_run_length(), seed)
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |msg: String| Err(GenError::Invalid(msg));
        if self.n_tests == 0 || self.n_builds == 0 {
            return bad("n_tests and n_builds must be at least 1".into());
        }
        if !(self.fail_density > 0.0 && self.fail_density <= 1.0) {
            return bad(format!("fail_density {} outside (0, 1]", self.fail_density));
        }
        match self.kind {
            ProfileKind::OpenLike => {
                if !(self.run_length >= 1.0 && self.run_length.is_finite()) {
                    return bad(format!("run_length {} must be at least 1", self.run_length));
                }
                if self.fail_density < 1.0 && self.entry_probability() > 1.0 {
                    return bad(format!(
                        "fail_density {} needs streaks to start with probability {:.3} > 1; \
                         raise run_length to at least {:.3}",
                        self.fail_density,
                        self.entry_probability(),
                        1.0 / (1.0 - self.fail_density)
                    ));
                }
            }
            ProfileKind::ClosedLike => {
                if !(0.0..=1.0).contains(&self.cofail_cluster) {
                    return bad(format!("cofail_cluster {} outside [0, 1]", self.cofail_cluster));
                }
                if self.cluster_size < 2 && self.cofail_cluster > 0.0 {
                    return bad("cluster_size must be at least 2".into());
                }
            }
        }
        Ok(())
    }

    /// Per-build probability that a passing test starts a failure streak.
    fn entry_probability(&self) -> f64 {
        let q = 1.0 / self.run_length;
        self.fail_density * q / (1.0 - self.fail_density)
    }
}

pub fn test_name(i: usize) -> String {
    format!("t{:04}", i + 1)
}

pub fn build_name(i: usize) -> String {
    format!("b{:05}", i + 1)
}

fn cells(failing: &[bool]) -> Vec<TestOutcome> {
    failing
        .iter()
        .map(|&f| if f { TestOutcome::Fail } else { TestOutcome::Pass })
        .collect()
}

fn open_like(p: &GenProfile, rng: &mut ChaCha8Rng, h: &mut BuildHistory) -> Result<(), GenError> {
    let (stay, enter) = if p.fail_density >= 1.0 {
        (1.0, 1.0)
    } else {
        (1.0 - 1.0 / p.run_length, p.entry_probability())
    };
    // start from the stationary distribution
    let mut failing: Vec<bool> = (0..p.n_tests).map(|_| rng.random_bool(p.fail_density)).collect();
    for b in 0..p.n_builds {
        if b > 0 {
            for f in failing.iter_mut() {
                *f = rng.random_bool(if *f { stay } else { enter });
            }
        }
        if !failing.contains(&true) {
            let t = rng.random_range(0..p.n_tests);
            failing[t] = true;
        }
        h.push_build(build_name(b), cells(&failing))?;
    }
    Ok(())
}

fn closed_like(p: &GenProfile, rng: &mut ChaCha8Rng, h: &mut BuildHistory) -> Result<(), GenError> {
    let mut tests: Vec<usize> = (0..p.n_tests).collect();
    tests.shuffle(rng);
    let clustered = (p.n_tests as f64 * p.cofail_cluster).round() as usize;
    let mut groups: Vec<Vec<usize>> = if clustered > 0 {
        tests[..clustered]
            .chunks(p.cluster_size)
            .map(<[usize]>::to_vec)
            .collect()
    } else {
        Vec::new()
    };
    groups.extend(tests[clustered..].iter().map(|&t| vec![t]));

    let mut failing = vec![false; p.n_tests];
    for b in 0..p.n_builds {
        failing.iter_mut().for_each(|f| *f = false);
        let mut hit: Vec<usize> = (0..groups.len()).filter(|_| rng.random_bool(p.fail_density)).collect();
        if hit.is_empty() {
            hit.push(rng.random_range(0..groups.len()));
        }
        for g in hit {
            for &t in &groups[g] {
                failing[t] = true;
            }
        }
        h.push_build(build_name(b), cells(&failing))?;
    }
    Ok(())
}

pub fn generate(profile: &GenProfile) -> Result<BuildHistory, GenError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let tests = (0..profile.n_tests).map(test_name).collect();
    let mut h = BuildHistory::new(profile.project_name.clone(), tests)?;
    match profile.kind {
        ProfileKind::OpenLike => open_like(profile, &mut rng, &mut h)?,
        ProfileKind::ClosedLike => closed_like(profile, &mut rng, &mut h)?,
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indicator(h: &BuildHistory, t: usize) -> Vec<u8> {
        h.builds().iter().map(|b| u8::from(b.outcome(t).is_fail())).collect()
    }

    fn mean_streak(h: &BuildHistory) -> f64 {
        let (mut total, mut streaks) = (0usize, 0usize);
        for t in 0..h.num_tests() {
            let v = indicator(h, t);
            for (i, &x) in v.iter().enumerate() {
                if x == 1 {
                    total += 1;
                    if i == 0 || v[i - 1] == 0 {
                        streaks += 1;
                    }
                }
            }
        }
        total as f64 / streaks as f64
    }

    fn lag1_autocorrelation(v: &[u8]) -> Option<f64> {
        let n = v.len() as f64;
        let mean = v.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
        let var: f64 = v.iter().map(|&x| (f64::from(x) - mean).powi(2)).sum();
        if var == 0.0 {
            return None;
        }
        let cov: f64 = v
            .windows(2)
            .map(|w| (f64::from(w[0]) - mean) * (f64::from(w[1]) - mean))
            .sum();
        Some(cov / var)
    }

    #[test]
    fn open_like_streaks_average_run_length() {
        let h = generate(&GenProfile::open_like(200, 10_000, 0.05, 5.0, 1)).unwrap();
        let m = mean_streak(&h);
        assert!((4.0..=6.0).contains(&m), "mean streak {m}");
        let cells = h.failure_cell_count() as f64 / (200.0 * 10_000.0);
        assert!((cells - 0.05).abs() < 0.01, "density {cells}");
    }

    #[test]
    fn closed_like_has_no_memory() {
        let h = generate(&GenProfile::closed_like(60, 2_000, 0.1, 3)).unwrap();
        for t in 0..h.num_tests() {
            if let Some(r) = lag1_autocorrelation(&indicator(&h, t)) {
                assert!(r < 0.1, "test {t}: {r}");
            }
        }
    }

    #[test]
    fn closed_like_clusters_fail_together() {
        let p = GenProfile::closed_like(50, 200, 0.2, 9);
        let h = generate(&p).unwrap();
        // 40 clustered tests in four groups of ten: every test has nine twins
        let columns: Vec<Vec<u8>> = (0..50).map(|t| indicator(&h, t)).collect();
        let twins = |t: usize| columns.iter().filter(|c| **c == columns[t]).count() - 1;
        assert_eq!((0..50).filter(|&t| twins(t) >= 9).count(), 40);
    }

    #[test]
    fn single_always_failing_test() {
        for kind in [ProfileKind::OpenLike, ProfileKind::ClosedLike] {
            let p = GenProfile {
                kind,
                ..GenProfile::open_like(1, 50, 1.0, 5.0, 0)
            };
            let h = generate(&p).unwrap();
            assert!(h.builds().iter().all(|b| b.outcome(0).is_fail()));
        }
    }

    #[test]
    fn deterministic_and_filter_invariant() {
        for p in [
            GenProfile::open_like(30, 300, 0.03, 4.0, 7),
            GenProfile::closed_like(30, 300, 0.02, 7),
        ] {
            let a = generate(&p).unwrap();
            let b = generate(&p).unwrap();
            assert_eq!(a.to_csv_string(), b.to_csv_string());
            assert_eq!(a.filter_useful_builds().to_csv_string(), a.to_csv_string());
        }
        let other = GenProfile::open_like(30, 300, 0.03, 4.0, 8);
        assert_ne!(
            generate(&other).unwrap().to_csv_string(),
            generate(&GenProfile::open_like(30, 300, 0.03, 4.0, 7))
                .unwrap()
                .to_csv_string()
        );
    }

    #[test]
    fn infeasible_profiles_are_explained() {
        let e = generate(&GenProfile::open_like(5, 5, 0.9, 1.0, 0)).unwrap_err();
        assert!(e.to_string().contains("run_length"), "{e}");
        assert!(generate(&GenProfile::open_like(5, 5, 0.0, 5.0, 0)).is_err());
        assert!(generate(&GenProfile::open_like(0, 5, 0.1, 5.0, 0)).is_err());
        let toml_like: GenProfile =
            serde_json::from_str(r#"{"kind":"closed_like","n_tests":3,"n_builds":2,"fail_density":0.5}"#).unwrap();
        assert_eq!(toml_like.cluster_size, 10);
    }
}
