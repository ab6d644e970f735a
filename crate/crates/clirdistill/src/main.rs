use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use clirdistill::compare::{compare_runs, render, write_report};
use clirdistill::config::EvalSection;
use clirdistill::formats::{read_qrels, read_run};
use clirdistill::pipeline::describe;
use clirdistill::{Pipeline, PipelineConfig, Stage};

/// Trains cross-language dense retrievers on translated text with teacher
/// scores, then indexes and evaluates them.
#[derive(Parser)]
#[command(name = "clirdistill", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML). Without it the built-in defaults run.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum worker threads (default: one per core).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage, skipping those already up to date.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Stop after this stage.
        #[arg(long)]
        stage: Option<String>,
    },
    /// Generate or ingest the corpus.
    GenCorpus(Common),
    /// Translate passages and queries into every language a stage reads.
    Translate(Common),
    /// Select candidate passages per training query.
    Select(Common),
    /// Score candidates with the teacher.
    Teach(Common),
    /// Train the configured students.
    Train(Common),
    /// Build a residual-coded index per student.
    Index(Common),
    /// Retrieve evaluation queries with each student and with PSQ.
    Search(Common),
    /// Rerank the PSQ run with the teacher.
    Rerank(Common),
    /// Score every run and compare them.
    Evaluate(Common),
    /// Paired comparison of two runs.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn pipeline(common: &Common) -> anyhow::Result<Pipeline> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let mut p = Pipeline::new(cfg).with_jobs(common.jobs);
    if let Some(out) = &common.out {
        p = p.with_output(out);
    }
    Ok(p)
}

fn single(common: &Common, stage: Stage) -> anyhow::Result<()> {
    let p = pipeline(common)?;
    p.run_stage(stage)?;
    println!("{:<10} ran", stage.name());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Pipeline { common, stage } => {
            let through = match stage {
                Some(s) => s.parse()?,
                None => Stage::Evaluate,
            };
            let p = pipeline(&common)?;
            let reports = p.run(through)?;
            print!("{}", describe(&reports));
            if through == Stage::Evaluate {
                let path = p.compare_report_path();
                let report =
                    std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                print!("{report}");
            }
            Ok(())
        }
        Command::GenCorpus(c) => single(&c, Stage::Corpus),
        Command::Translate(c) => single(&c, Stage::Translate),
        Command::Select(c) => single(&c, Stage::Select),
        Command::Teach(c) => single(&c, Stage::Teach),
        Command::Train(c) => single(&c, Stage::Train),
        Command::Index(c) => single(&c, Stage::Index),
        Command::Search(c) => single(&c, Stage::Search),
        Command::Rerank(c) => single(&c, Stage::Rerank),
        Command::Evaluate(c) => single(&c, Stage::Evaluate),
        Command::Compare { run_a, run_b, qrels, out } => {
            let mut a = read_run(&run_a)?;
            let mut b = read_run(&run_b)?;
            // runs with the same tag would be indistinguishable in the report
            if a.tag == b.tag {
                a.tag = run_a.display().to_string();
                b.tag = run_b.display().to_string();
            }
            let qrels = read_qrels(&qrels)?;
            let c = compare_runs(&a, &b, &qrels, &EvalSection::default())?;
            print!("{}", render(std::slice::from_ref(&c)));
            if let Some(path) = out {
                write_report(&path, &[c])?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
