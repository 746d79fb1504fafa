//! Command implementations behind the `rfcsim` binary.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use rfcsim::coordination::CoordinationPolicy;
use rfcsim::engine::{build_drop, cwnd_series_tsv, run_with, RunOptions};
use rfcsim::metrics::format_gain;
use rfcsim::{oracle, CodebookConfig, MetricsReport, RfcCodebook, SimConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Scenario(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Scenario(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<rfcsim::Error> for CliError {
    fn from(e: rfcsim::Error) -> Self {
        match e {
            rfcsim::Error::Config(_) | rfcsim::Error::Parse(_) => CliError::Scenario(e.to_string()),
            rfcsim::Error::Contract(_) | rfcsim::Error::NoNeighbor => CliError::Internal(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "rfcsim", version, about = "Dynamic TDD cluster simulator with codebook-based RFC coordination")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario for every (seed, policy) pair and write one report each.
    Run(RunArgs),
    /// Tabulate throughput of reports of one scenario against the first.
    Compare(CompareArgs),
    /// Print a codebook as text, one pattern per line.
    DumpCodebook(DumpArgs),
    /// Check coordination rounds against the brute-force reference.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file (TOML). Omitted keys take their defaults.
    pub scenario: PathBuf,
    /// Comma-separated seeds; defaults to the scenario's seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Policies to run (repeatable); defaults to the scenario's policy.
    #[arg(long = "policy", value_parser = parse_policy)]
    pub policies: Vec<CoordinationPolicy>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Parallel runs; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write the per-slot scheduling trace of each run (JSON lines).
    #[arg(long)]
    pub trace: bool,
    /// Also write the per-connection CWND series of each TCP run.
    #[arg(long)]
    pub cwnd: bool,
    /// Also write the link gain table of each seed's drop.
    #[arg(long)]
    pub gains: bool,
    /// Print the summary table of every run.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Report files; the first is the baseline.
    #[arg(required = true, num_args = 2..)]
    pub reports: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    /// Built-in codebook: default (70 patterns) or n55.
    #[arg(long, default_value = "default", conflicts_with = "scenario")]
    pub preset: String,
    /// Take the codebook from a scenario file instead.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn parse_policy(s: &str) -> Result<CoordinationPolicy, String> {
    s.parse().map_err(|e: rfcsim::Error| e.to_string())
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Run(args) => cmd_run(&args, out),
        Command::Compare(args) => cmd_compare(&args.reports, out),
        Command::DumpCodebook(args) => cmd_dump_codebook(&args, out),
        Command::Selftest(args) => cmd_selftest(&args, out),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Internal(format!("{}: {e}", path.display()))
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Internal(format!("stdout: {e}")))
}

pub fn load_scenario(path: &Path) -> CliResult<SimConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read scenario {}: {e}", path.display())))?;
    let config = SimConfig::from_toml_str(&text)
        .map_err(|e| CliError::Scenario(format!("{}: {e}", path.display())))?;
    config
        .validate()
        .map_err(|e| CliError::Scenario(format!("{}: {e}", path.display())))?;
    Ok(config)
}

/// Writes `path` through a sibling temporary file and a rename, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Internal(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let filled = fill(&mut w).and_then(|_| w.flush().map_err(|e| io_err(&tmp, e)));
    if let Err(e) = filled {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    drop(w);
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn report_file_name(policy: CoordinationPolicy, seed: u64) -> String {
    format!("report_{}_seed{seed}.json", policy.name())
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyAggregate {
    pub policy: CoordinationPolicy,
    pub runs: usize,
    pub dl_mbps: f64,
    pub ul_mbps: f64,
    pub ul_sinr_db: Option<f64>,
    pub dl_sinr_db: Option<f64>,
    pub cwnd_p90_bytes: Option<f64>,
    pub mean_misalignment: Option<f64>,
    pub signaling_bits: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub scenario_hash: String,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyAggregate>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean over the runs that have the value; `None` if none do.
fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| mean(present.into_iter()))
}

pub fn aggregate(reports: &[MetricsReport], seeds: &[u64], policies: &[CoordinationPolicy]) -> Aggregate {
    let policies = policies
        .iter()
        .map(|&p| {
            let rs: Vec<&MetricsReport> = reports.iter().filter(|r| r.policy == p).collect();
            PolicyAggregate {
                policy: p,
                runs: rs.len(),
                dl_mbps: mean(rs.iter().map(|r| r.throughput.dl_mbps)),
                ul_mbps: mean(rs.iter().map(|r| r.throughput.ul_mbps)),
                ul_sinr_db: mean_present(rs.iter().map(|r| r.ul_sinr_db.mean)),
                dl_sinr_db: mean_present(rs.iter().map(|r| r.dl_sinr_db.mean)),
                cwnd_p90_bytes: mean_present(rs.iter().map(|r| r.cwnd_bytes.quantile(0.9))),
                mean_misalignment: mean_present(rs.iter().map(|r| r.mean_misalignment)),
                signaling_bits: mean(rs.iter().map(|r| r.coordination.total_bits as f64)),
            }
        })
        .collect();
    Aggregate {
        scenario_hash: reports.first().map(|r| r.scenario_hash.clone()).unwrap_or_default(),
        seeds: seeds.to_vec(),
        policies,
    }
}

fn run_one(config: &SimConfig, args: &RunArgs) -> CliResult<MetricsReport> {
    let stem = format!("{}_seed{}", config.policy.name(), config.seed);
    let trace_path = args.out.join(format!("trace_{stem}.jsonl"));
    let output = if args.trace {
        let mut result = None;
        write_atomic(&trace_path, |w| {
            let options = RunOptions {
                trace: Some(w),
                record_cwnd_series: args.cwnd,
            };
            result = Some(run_with(config, options)?);
            Ok(())
        })?;
        result.expect("filled by the writer")
    } else {
        run_with(
            config,
            RunOptions {
                trace: None,
                record_cwnd_series: args.cwnd,
            },
        )?
    };
    if args.cwnd && !output.cwnd_series.is_empty() {
        let tsv = cwnd_series_tsv(&output.cwnd_series);
        write_atomic(&args.out.join(format!("cwnd_{stem}.tsv")), |w| {
            w.write_all(tsv.as_bytes()).map_err(|e| CliError::Internal(e.to_string()))
        })?;
    }
    let json = output.report.to_json();
    write_atomic(&args.out.join(report_file_name(config.policy, config.seed)), |w| {
        w.write_all(json.as_bytes()).map_err(|e| CliError::Internal(e.to_string()))
    })?;
    Ok(output.report)
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> CliResult<()> {
    let base = load_scenario(&args.scenario)?;
    let mut seeds = if args.seeds.is_empty() { vec![base.seed] } else { args.seeds.clone() };
    let mut policies = if args.policies.is_empty() { vec![base.policy] } else { args.policies.clone() };
    let mut seen_seeds = HashSet::new();
    seeds.retain(|s| seen_seeds.insert(*s));
    let mut seen_policies = HashSet::new();
    policies.retain(|p| seen_policies.insert(*p));
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;

    if args.gains {
        for &seed in &seeds {
            let (_, gains) = build_drop(&SimConfig { seed, ..base.clone() })?;
            let tsv = gains.to_tsv();
            write_atomic(&args.out.join(format!("gains_seed{seed}.tsv")), |w| {
                w.write_all(tsv.as_bytes()).map_err(|e| CliError::Internal(e.to_string()))
            })?;
        }
    }

    let configs: Vec<SimConfig> = seeds
        .iter()
        .flat_map(|&seed| {
            let base = &base;
            policies.iter().map(move |&policy| SimConfig { seed, policy, ..base.clone() })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let results: Vec<CliResult<MetricsReport>> =
        pool.install(|| configs.par_iter().map(|c| run_one(c, args)).collect());
    let reports = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    for r in &reports {
        if args.verbose {
            emit(out, &format!("{}\n", r.summary_table()))?;
        } else {
            emit(
                out,
                &format!(
                    "{:<12} seed {:<6} DL {:8.2} Mbps  UL {:8.2} Mbps\n",
                    r.policy.name(),
                    r.seed,
                    r.throughput.dl_mbps,
                    r.throughput.ul_mbps
                ),
            )?;
        }
    }
    let agg = aggregate(&reports, &seeds, &policies);
    let json = serde_json::to_string_pretty(&agg).map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(&args.out.join("aggregate.json"), |w| {
        w.write_all(json.as_bytes()).map_err(|e| CliError::Internal(e.to_string()))
    })?;
    Ok(())
}

pub fn compare_table(reports: &[MetricsReport]) -> CliResult<String> {
    if reports.len() < 2 {
        return Err(CliError::Usage("compare needs at least two reports".into()));
    }
    let hash = &reports[0].scenario_hash;
    if let Some(other) = reports.iter().find(|r| &r.scenario_hash != hash) {
        return Err(CliError::Scenario(format!(
            "reports come from different scenarios ({} vs {}); refusing to compare",
            &hash[..hash.len().min(12)],
            &other.scenario_hash[..other.scenario_hash.len().min(12)]
        )));
    }
    let base = &reports[0];
    let mut s = format!(
        "{:<12} {:>6} {:>10} {:>10} {:>10} {:>10}\n",
        "policy", "seed", "DL Mbps", "DL gain", "UL Mbps", "UL gain"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<12} {:>6} {:>10.2} {:>10} {:>10.2} {:>10}\n",
            r.policy.name(),
            r.seed,
            r.throughput.dl_mbps,
            format_gain(base.throughput.dl_mbps, r.throughput.dl_mbps),
            r.throughput.ul_mbps,
            format_gain(base.throughput.ul_mbps, r.throughput.ul_mbps),
        ));
    }
    Ok(s)
}

pub fn cmd_compare(paths: &[PathBuf], out: &mut dyn Write) -> CliResult<()> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read report {}: {e}", p.display())))?;
            MetricsReport::from_json(&text).map_err(|e| CliError::Scenario(format!("{}: {e}", p.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    emit(out, &compare_table(&reports)?)
}

pub fn cmd_dump_codebook(args: &DumpArgs, out: &mut dyn Write) -> CliResult<()> {
    let config = match &args.scenario {
        Some(path) => load_scenario(path)?.codebook,
        None => CodebookConfig::preset(&args.preset).map_err(|e| CliError::Usage(e.to_string()))?,
    };
    let cb = RfcCodebook::build(&config)?;
    emit(out, &cb.to_document())
}

pub fn cmd_selftest(args: &SelftestArgs, out: &mut dyn Write) -> CliResult<()> {
    let report = oracle::selftest(args.instances, args.seed)?;
    for m in &report.mismatches {
        emit(out, &format!("mismatch: {m}\n"))?;
    }
    emit(
        out,
        &format!(
            "selftest: {} instances, {} mismatches\n",
            report.instances,
            report.mismatches.len()
        ),
    )?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Internal("coordination disagrees with the brute-force reference".into()))
    }
}
