//! Command-line front end. `run` parses arguments, executes one subcommand and
//! returns the process exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::cohort::{CohortDefinition, GenerateOptions};
use crate::config::{Config, Overrides};
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;
use crate::qa::ReportFormat;
use crate::synth::GenConfig;

#[derive(Debug, Parser)]
#[command(name = "caremart", version, about = "Clinical datamart pipeline")]
pub struct Cli {
    /// JSON config file (default: ./caremart.json if present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Datamart root directory.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// HTTP port for `serve`.
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// Generator seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic raw extract and ground-truth manifest.
    Gen(GenArgs),
    /// Load raw CSVs and the vocabulary into the store.
    Ingest {
        /// Extract directory (default: the configured one).
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Transform raw tables into the common data model.
    Etl,
    /// Reconcile raw and CDM row counts.
    Qa {
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Per-comparison loss limit, e.g. `--limit procedures=10`.
        #[arg(long = "limit", value_parser = parse_limit)]
        limits: Vec<(String, f64)>,
    },
    /// Extract dictionary concepts from notes.
    Nlp(NlpArgs),
    /// Compute summary statistics.
    Characterize,
    /// Cohort operations.
    Cohort {
        #[command(subcommand)]
        action: CohortAction,
    },
    /// Serve the HTTP API.
    Serve,
    /// Configuration operations.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generator config JSON, replacing the `generator` section.
    #[arg(long)]
    pub gen_config: Option<PathBuf>,
    #[arg(long)]
    pub patients: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NlpArgs {
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Ignore any existing checkpoint.
    #[arg(long)]
    pub clean_restart: bool,
    #[arg(long)]
    pub no_negation: bool,
}

#[derive(Debug, Subcommand)]
pub enum CohortAction {
    /// Generate a cohort from a JSON definition.
    Run {
        #[arg(short = 'f', long = "file")]
        file: PathBuf,
        #[arg(long)]
        include_negated: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Print the effective configuration.
    Show,
}

fn parse_limit(s: &str) -> std::result::Result<(String, f64), String> {
    let (label, pct) = s.split_once('=').ok_or("expected LABEL=PCT")?;
    let pct: f64 = pct.parse().map_err(|_| format!("{pct:?} is not a number"))?;
    if !(0.0..=100.0).contains(&pct) {
        return Err(format!("{pct} is outside [0, 100]"));
    }
    Ok((label.to_string(), pct))
}

/// Parses `args` and runs the command, writing results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .and_then(|_| {
            if text.ends_with('\n') {
                Ok(())
            } else {
                out.write_all(b"\n")
            }
        })
        .map_err(|e| Error::io("<stdout>", e))
}

/// Runs a parsed command; `Ok(1)` signals a failed QA threshold.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let overrides = Overrides {
        store: cli.store.clone(),
        port: cli.port,
        seed: cli.seed,
    };
    let mut config = Config::resolve(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Gen(a) => {
            let mut gen = match &a.gen_config {
                Some(p) => GenConfig::load(p)?,
                None => config.generator.clone(),
            };
            if let Some(s) = cli.seed {
                gen.seed = s;
            }
            if let Some(n) = a.patients {
                gen.n_patients = n;
            }
            let (dir, manifest) = Pipeline::new(config).gen(Some(&gen), a.out.as_deref())?;
            emit(out, &format!("wrote extract to {}", dir.display()))?;
            for (table, n) in &manifest.expected_raw_counts {
                emit(out, &format!("{table}\t{n}"))?;
            }
        }
        Command::Ingest { from } => {
            let counts = Pipeline::new(config).ingest(from.as_deref())?;
            for (table, n) in counts {
                emit(out, &format!("{table}\t{n}"))?;
            }
        }
        Command::Etl => {
            let report = Pipeline::new(config).etl()?;
            for t in &report.transforms {
                emit(
                    out,
                    &format!("{} -> {}\t{}\t{}", t.raw_table, t.cdm_table, t.raw_count, t.cdm_count),
                )?;
            }
            for (table, n) in &report.derived {
                emit(out, &format!("{table}\t{n}"))?;
            }
        }
        Command::Qa { format, limits } => {
            config.qa.limits.extend(limits);
            let outcome = Pipeline::new(config).qa(format)?;
            emit(out, &outcome.rendered)?;
            if !outcome.thresholds.passed {
                for v in &outcome.thresholds.violations {
                    eprintln!(
                        "threshold exceeded: {} lost {:.3}% (limit {}%)",
                        v.comparison, v.raw_lost_pct, v.limit_pct
                    );
                }
                return Ok(1);
            }
        }
        Command::Nlp(a) => {
            let mut run = config.nlp.clone();
            if let Some(w) = a.workers {
                run.worker_count = w;
            }
            if let Some(b) = a.batch_size {
                run.batch_size = b;
            }
            if a.checkpoint_dir.is_some() {
                run.checkpoint_dir = a.checkpoint_dir;
            }
            run.clean_restart |= a.clean_restart;
            if a.no_negation {
                run.negation = false;
            }
            run.validate()?;
            let output = Pipeline::new(config).nlp(Some(&run))?;
            emit(out, &serde_json::to_string_pretty(&output.metrics)?)?;
        }
        Command::Characterize => {
            let stats = Pipeline::new(config).characterize()?;
            for s in stats {
                emit(
                    out,
                    &format!(
                        "{}\t{}\t{}\t{}\t{}",
                        s.analysis_name,
                        s.stratum_1.as_deref().unwrap_or(""),
                        s.stratum_2.as_deref().unwrap_or(""),
                        s.count_value,
                        s.avg_value.map(|v| v.to_string()).unwrap_or_default()
                    ),
                )?;
            }
        }
        Command::Cohort {
            action: CohortAction::Run { file, include_negated },
        } => {
            let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            let def = CohortDefinition::parse(&text)?;
            let opts = GenerateOptions {
                include_negated: include_negated || config.cohort.include_negated,
            };
            let result = Pipeline::new(config).cohort_run(&def, Some(&opts))?;
            emit(out, &format!("subjects\t{}", result.rows.len()))?;
            let a = &result.attrition;
            emit(out, &format!("initial_events\t{}", a.initial_events))?;
            emit(out, &format!("initial_persons\t{}", a.initial_persons))?;
            for step in &a.after_rules {
                emit(out, &format!("{}\t{}", step.name, step.persons))?;
            }
        }
        Command::Serve => {
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::io("<runtime>", e))?;
            runtime.block_on(crate::service::serve(&config.store, config.port, &config.cohort))?;
        }
        Command::Config {
            action: ConfigAction::Show,
        } => emit(out, &config.to_json())?,
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limit_parsing() {
        assert_eq!(parse_limit("procedures=9.7").unwrap(), ("procedures".into(), 9.7));
        assert!(parse_limit("procedures").is_err());
        assert!(parse_limit("x=101").is_err());
    }

    #[test]
    fn every_subcommand_parses() {
        for args in [
            vec!["caremart", "gen", "--patients", "10"],
            vec!["caremart", "ingest", "--from", "x"],
            vec!["caremart", "etl"],
            vec!["caremart", "qa", "--format", "json", "--limit", "a=1"],
            vec!["caremart", "nlp", "--workers", "2", "--clean-restart"],
            vec!["caremart", "characterize"],
            vec!["caremart", "cohort", "run", "-f", "d.json", "--include-negated"],
            vec!["caremart", "--port", "9000", "serve"],
            vec!["caremart", "config", "show"],
        ] {
            Cli::try_parse_from(&args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
    }
}
