use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use sinlg::corpus::{load_dataset, read_config, synth_generate, SynthConfig, TrainJob};
use sinlg::evaluation::{evaluate, evaluate_with_specs, latency_bench, MetricReport};
use sinlg::extraction::KnowledgeBase;
use sinlg::kg::KnowledgeGraph;
use sinlg::training::{train_with_log, Checkpoint, TrainConfig, TrainData, Variant};
use sinlg::{Error, MrsSample, Result};

#[derive(Parser)]
#[command(name = "sinlg", version, about = "Knowledge-guided response selection")]
struct Cli {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training config (key=value or JSON); used by `sweep`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N", help = "Token budget per sequence [default: 512]")]
    max_seq_len: Option<usize>,
    #[arg(long, global = true, value_name = "K", help = "Subgraph size cap [default: 200]")]
    max_nodes: Option<usize>,
    #[arg(long, global = true, help = "Ranking loss weight [default: 0.5]")]
    alpha: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge graph utilities.
    Kg {
        #[command(subcommand)]
        action: KgAction,
    },
    /// Write a synthetic corpus (train/dev JSONL and a TSV graph).
    Synth {
        config: PathBuf,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Extract one subgraph per (sample, candidate) as JSONL.
    Extract {
        dataset: PathBuf,
        kg: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        hops: usize,
    },
    Train {
        config: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Rank every candidate and print a metric report.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Graph for variants that need knowledge at inference.
        #[arg(long)]
        kg: Option<PathBuf>,
    },
    /// Knowledge-free vs. retrieval + GNN latency.
    Bench {
        checkpoint: PathBuf,
        dataset: PathBuf,
        kg: PathBuf,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Retrain with each value of one parameter and report dev metrics.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum KgAction {
    Build {
        tsv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    Alpha,
    #[value(name = "max_nodes")]
    MaxNodes,
}

impl Cli {
    fn apply(&self, c: &mut TrainConfig) {
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(n) = self.max_seq_len {
            c.extraction.max_seq_len = n;
        }
        if let Some(k) = self.max_nodes {
            c.extraction.max_nodes = k;
        }
        if let Some(a) = self.alpha {
            c.loss.alpha = a;
        }
    }

    fn job(&self, path: &Path) -> Result<TrainJob> {
        let mut job = TrainJob::read(path)?;
        self.apply(&mut job.config);
        job.config.validate()?;
        Ok(job)
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_kg(path: Option<&Path>) -> Result<Option<KnowledgeGraph>> {
    path.map(|p| KnowledgeGraph::load_edge_list(p).map(|(kg, _)| kg)).transpose()
}

fn eval_checkpoint(ckpt: &Checkpoint, samples: &[MrsSample], kg: Option<KnowledgeGraph>) -> Result<MetricReport> {
    let model = ckpt.model()?;
    if !model.variant.needs_knowledge_at_inference() {
        return Ok(evaluate(&model, samples)?.1);
    }
    let kg = kg.ok_or_else(|| Error::Config(format!("variant {} needs --kg at evaluation", model.variant)))?;
    let snapshot = ckpt.snapshot()?;
    let kb = KnowledgeBase::new(kg, &snapshot)?;
    let specs = kb.extract_all(&snapshot, samples, &ckpt.config.extraction)?;
    Ok(evaluate_with_specs(&model, samples, &specs)?.1)
}

fn run_job(job: &TrainJob) -> Result<(Checkpoint, Option<MetricReport>)> {
    let train = load_dataset(&job.train_data)?;
    let dev = job.dev_data.as_ref().map(load_dataset).transpose()?;
    let kg = load_kg(job.kg.as_deref())?;
    let mut log = String::new();
    let out = train_with_log(
        &job.config,
        TrainData {
            train: &train,
            dev: dev.as_deref(),
            kg: kg.as_ref(),
        },
        |entry| {
            log::info!("epoch {} loss {:.5}", entry.epoch, entry.loss);
            log.push_str(&serde_json::to_string(entry)?);
            log.push('\n');
            Ok(())
        },
    )?;
    if let Some(path) = &job.log {
        std::fs::write(path, &log).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    let last = out.log.last().and_then(|l| l.dev.clone());
    Ok((out.checkpoint, last))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Kg {
            action: KgAction::Build { tsv, out },
        } => {
            let (kg, report) = KnowledgeGraph::load_edge_list(tsv)?;
            if let Some(out) = out {
                std::fs::write(out, kg.to_edge_list()).map_err(|e| Error::Io {
                    path: out.clone(),
                    source: e,
                })?;
            }
            print_json(&report)
        }
        Command::Synth { config, out } => {
            let mut cfg: SynthConfig = serde_json::from_value(read_config(config)?).map_err(|e| Error::Config(e.to_string()))?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let corpus = synth_generate(&cfg)?;
            corpus.write(out)?;
            print_json(&corpus.stats)
        }
        Command::Extract { dataset, kg, out, hops } => {
            let samples = load_dataset(dataset)?;
            let (kg, _) = KnowledgeGraph::load_edge_list(kg)?;
            let mut config = match &cli.config {
                Some(p) => cli.job(p)?.config,
                None => {
                    let mut c = TrainConfig::default();
                    c.extraction.hops = *hops;
                    cli.apply(&mut c);
                    c
                }
            };
            config.encoder.max_seq_len = config.extraction.max_seq_len;
            let vocab = sinlg::training::build_vocab(&samples, Some(&kg), config.min_count);
            let snapshot = sinlg::text::ScorerSnapshot::capture(&sinlg::text::EncoderModel::new(config.effective_encoder(), vocab)?);
            let kb = KnowledgeBase::new(kg, &snapshot)?;
            let specs = kb.extract_all(&snapshot, &samples, &config.extraction)?;
            let mut text = String::new();
            for spec in specs.iter().flatten() {
                text.push_str(&serde_json::to_string(spec)?);
                text.push('\n');
            }
            std::fs::write(out, text).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            print_json(&json!({ "samples": samples.len(), "subgraphs": specs.iter().map(Vec::len).sum::<usize>() }))
        }
        Command::Train { config, variant } => {
            let mut job = cli.job(config)?;
            if let Some(v) = variant {
                job.config.variant = *v;
            }
            let (ckpt, dev) = run_job(&job)?;
            ckpt.save(&job.checkpoint)?;
            print_json(&json!({ "checkpoint": job.checkpoint, "config_hash": ckpt.config_hash, "dev": dev }))
        }
        Command::Eval { checkpoint, dataset, kg } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let samples = load_dataset(dataset)?;
            print_json(&eval_checkpoint(&ckpt, &samples, load_kg(kg.as_deref())?)?)
        }
        Command::Bench {
            checkpoint,
            dataset,
            kg,
            repetitions,
            limit,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let model = ckpt.model()?;
            let snapshot = ckpt.snapshot()?;
            let mut samples = load_dataset(dataset)?;
            if let Some(n) = limit {
                samples.truncate(*n);
            }
            let (kg, _) = KnowledgeGraph::load_edge_list(kg)?;
            let kb = KnowledgeBase::new(kg, &snapshot)?;
            let mut extraction = ckpt.config.extraction.clone();
            if let Some(k) = cli.max_nodes {
                extraction.max_nodes = k;
            }
            print_json(&latency_bench(&model, &samples, &kb, &snapshot, &extraction, *repetitions)?)
        }
        Command::Sweep { param, values } => {
            let path = cli.config.as_ref().ok_or_else(|| Error::Config("sweep needs --config".into()))?;
            let base = cli.job(path)?;
            for &v in values {
                let mut job = base.clone();
                let name = match param {
                    SweepParam::Alpha => {
                        job.config.loss.alpha = v;
                        "alpha"
                    }
                    SweepParam::MaxNodes => {
                        if v < 0.0 || v.fract() != 0.0 {
                            return Err(Error::Config(format!("max_nodes must be a whole number, got {v}")));
                        }
                        job.config.extraction.max_nodes = v as usize;
                        "max_nodes"
                    }
                };
                job.config.validate()?;
                let (_, dev) = run_job(&job)?;
                println!("{}", json!({ "param": name, "value": v, "variant": job.config.variant, "dev": dev }));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
