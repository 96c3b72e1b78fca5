use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tcpbench_core::history::{parse_matrix, sanity_check, BuildHistory, MatrixFormat, ProjectMetadata, SanityCriteria};
use tcpbench_core::prioritizers::SchemeId;
use tcpbench_core::runner::{build_report, run_schemes, write_artifacts, RunConfig, RunStatus};
use tcpbench_core::simgen::{generate, GenProfile};
use tcpbench_core::stats::{scott_knott, Treatment, SMALL_EFFECT};

#[derive(Parser)]
#[command(
    name = "tcpbench",
    version,
    about = "Replay CI build histories through test prioritization schemes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a build matrix and print the sanity-check report.
    Ingest(IngestArgs),
    /// Generate a synthetic build matrix from a profile.
    Gen(GenArgs),
    /// Replay a history through the selected schemes and write reports.
    Run(RunArgs),
    /// Re-rank an existing samples CSV.
    Rank(RankArgs),
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    /// csv or jsonl; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<MatrixFormat>,
    /// JSON file with repository facts (developers, commits, ...).
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// TOML file overriding the screening thresholds.
    #[arg(long)]
    criteria: Option<PathBuf>,
    /// Exit nonzero when any evaluated criterion fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct GenArgs {
    /// TOML profile.
    #[arg(long)]
    profile: PathBuf,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the profile's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Build matrix to replay.
    #[arg(long, conflicts_with = "profile", required_unless_present = "profile")]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<MatrixFormat>,
    /// Generate the history from this TOML profile instead of reading one.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// TOML run configuration; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated scheme ids, e.g. a1,b1,d1.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<SchemeId>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Decay factor for B3.
    #[arg(long)]
    alpha: Option<f64>,
    /// Faults before D1 switches to certainty sampling.
    #[arg(long)]
    n1: Option<usize>,
    /// History length D1 uses as features.
    #[arg(long)]
    feature_window: Option<usize>,
    /// Per-scheme budget in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long, default_value = "tcpbench-out")]
    out: PathBuf,
    /// Run C1 even on projects beyond the size guard.
    #[arg(long)]
    no_c1_guard: bool,
    /// Record per-build wall-clock times in samples.csv.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct RankArgs {
    samples: PathBuf,
    /// Print CSV instead of the text table.
    #[arg(long)]
    csv: bool,
    #[arg(long, default_value_t = SMALL_EFFECT)]
    threshold: f64,
}

fn read_history(path: &Path, format: Option<MatrixFormat>) -> Result<BuildHistory> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let format = format.unwrap_or_else(|| MatrixFormat::from_path(path));
    let mut h =
        parse_matrix(std::io::BufReader::new(file), format).with_context(|| format!("reading {}", path.display()))?;
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        h.set_project_name(stem);
    }
    Ok(h)
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn ingest(args: IngestArgs) -> Result<()> {
    let h = read_history(&args.input, args.format)?;
    let criteria: SanityCriteria = match &args.criteria {
        Some(p) => read_toml(p)?,
        None => SanityCriteria::default(),
    };
    let metadata: Option<ProjectMetadata> = match &args.metadata {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    println!(
        "{}: {} builds, {} tests, {} useful builds",
        h.project_name(),
        h.len(),
        h.num_tests(),
        h.filter_useful_builds().len()
    );
    let report = sanity_check(&h, &criteria, metadata.as_ref());
    println!("{report}");
    if args.strict && !report.passed() {
        bail!("sanity check failed");
    }
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    let mut profile: GenProfile = read_toml(&args.profile)?;
    if let Some(seed) = args.seed {
        profile.seed = seed;
    }
    let h = generate(&profile)?;
    match args.out {
        Some(path) => {
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            h.write_csv(std::io::BufWriter::new(file))?;
        }
        None => h.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    project: &'a str,
    source: BTreeMap<&'static str, String>,
    history_sha256: String,
    builds: usize,
    useful_builds: usize,
    tests: usize,
    config: &'a RunConfig,
    status: BTreeMap<String, String>,
}

fn run(args: RunArgs) -> Result<()> {
    let mut config: RunConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.schemes {
        config.schemes = s;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(alpha) = args.alpha {
        config.params.decay.alpha = alpha;
    }
    if let Some(n1) = args.n1 {
        config.params.terminator.n1 = n1;
    }
    if let Some(w) = args.feature_window {
        config.params.terminator.feature_window = w;
    }
    if let Some(t) = args.timeout {
        config.timeout_secs = t;
    }
    if args.no_c1_guard {
        config.c1_guard = None;
    }
    config.record_timings |= args.timings;
    config.validate()?;

    let mut source = BTreeMap::new();
    let history = match (&args.input, &args.profile) {
        (Some(path), _) => {
            source.insert("input", path.display().to_string());
            read_history(path, args.format)?
        }
        (None, Some(path)) => {
            let profile: GenProfile = read_toml(path)?;
            source.insert("profile", serde_json::to_string(&profile)?);
            generate(&profile)?
        }
        (None, None) => bail!("either --input or --profile is required"),
    };

    let runs = run_schemes(&history, &config)?;
    for r in &runs {
        match &r.status {
            RunStatus::Completed => {}
            RunStatus::TimedOut => eprintln!(
                "{}: timed out after {:.1}s ({} builds done)",
                r.scheme,
                r.elapsed.as_secs_f64(),
                r.samples.len()
            ),
            RunStatus::Skipped(why) => eprintln!("{}: skipped, {why}", r.scheme),
        }
    }
    let report = build_report(&runs)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_artifacts(&args.out, &runs, &report, config.record_timings)?;

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        project: history.project_name(),
        source,
        history_sha256: format!("{:x}", Sha256::digest(history.to_csv_string().as_bytes())),
        builds: history.len(),
        useful_builds: history.filter_useful_builds().len(),
        tests: history.num_tests(),
        config: &config,
        status: runs
            .iter()
            .map(|r| (r.scheme.to_string(), r.status.label().to_string()))
            .collect(),
    };
    let path = args.out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;

    print!("{}", report.ranks);
    Ok(())
}

#[derive(Deserialize)]
struct SampleRow {
    algorithm: String,
    #[allow(dead_code)]
    build_index: usize,
    apfd: f64,
}

fn rank(args: RankArgs) -> Result<()> {
    let mut reader =
        csv::Reader::from_path(&args.samples).with_context(|| format!("opening {}", args.samples.display()))?;
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: SampleRow = row.with_context(|| format!("reading {}", args.samples.display()))?;
        groups.entry(row.algorithm).or_default().push(row.apfd);
    }
    if groups.is_empty() {
        bail!("{} has no samples", args.samples.display());
    }
    let treatments: Vec<Treatment> = groups.into_iter().map(|(id, v)| Treatment::new(id, v)).collect();
    let report = scott_knott(&treatments, args.threshold)?;
    if args.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{report}");
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest(a) => ingest(a),
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Rank(a) => rank(a),
    }
}
