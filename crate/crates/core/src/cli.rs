//! Command-line entry points.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::{load_jsonl, write_jsonl, LabeledExample, SyntheticSpec, Vocab};
use crate::efficiency::{benchmark_inference, CostReport, ModelSpec};
use crate::error::{Error, Result};
use crate::models::{load_checkpoint, CheckpointModel, InspirerConfig, InspirerModel, TargetConfig, TargetModel};
use crate::pipeline::{
    accuracy, distill_target, parse_spec_list, prepare, run_ablation, run_alignment_sweep, train_inspirer,
    train_supervised, write_run, ComparisonTable, Prepared, Removal, RunConfig, Stage, VOCAB_FILE,
};

#[derive(Debug, Parser)]
#[command(
    name = "flitext",
    version,
    about = "Two-stage semi-supervised distillation into a TextCNN"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed and the FLITEXT_SEED variable.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus as train/unlabeled/dev/test JSONL files.
    GenData {
        /// Synthetic spec (TOML); the reference spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: train the inspirer.
    TrainInspirer(RunArgs),
    /// Stage 2: distill a target from a trained inspirer.
    Distill {
        #[command(flatten)]
        run: RunArgs,
        /// Inspirer checkpoint.
        #[arg(long)]
        inspirer: PathBuf,
    },
    /// Cross-entropy-only target on the labeled data.
    TrainSupervised(RunArgs),
    /// Accuracy of a checkpoint on a labeled JSONL file.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Truncation length; defaults to the inspirer's maximum, unbounded for targets.
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Remove stage-2 components one at a time.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated: output_distill, feature_distill, consistency.
        #[arg(long)]
        remove: String,
        /// Inspirer checkpoint; trained from the config when omitted.
        #[arg(long)]
        inspirer: Option<PathBuf>,
    },
    /// One stage-2 run per alignment listed in a file.
    SweepAlignments {
        #[command(flatten)]
        run: RunArgs,
        /// One alignment such as {0,1}-{2,5} per line.
        #[arg(long)]
        specs: PathBuf,
        #[arg(long)]
        inspirer: Option<PathBuf>,
    },
    /// Parameter, FLOPs and latency report for the configured models.
    Cost {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Earlier report to compute the target's speedup against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Use the full-scale presets instead of the config.
        #[arg(long)]
        full_scale: bool,
        #[arg(long, default_value_t = 64)]
        seq_len: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut c = RunConfig::load(&args.config)?.with_env_seed()?;
    if let Some(s) = args.seed {
        c.seed = s;
    }
    Ok(c)
}

fn load_inspirer(path: &Path, prep: &Prepared) -> Result<InspirerModel> {
    let model = match load_checkpoint(path)? {
        CheckpointModel::Inspirer(m) => m,
        other => {
            return Err(Error::config(format!(
                "{} holds a {} model, expected an inspirer",
                path.display(),
                other.kind()
            )))
        }
    };
    let vocab_path = path.with_file_name(VOCAB_FILE);
    if vocab_path.exists() && Vocab::load(&vocab_path)? != prep.vocab {
        return Err(Error::config(format!(
            "{} differs from the vocabulary built from the configured data",
            vocab_path.display()
        )));
    }
    Ok(model)
}

fn inspirer_for(prep: &Prepared, path: Option<&Path>, out: &Path) -> Result<InspirerModel> {
    match path {
        Some(p) => load_inspirer(p, prep),
        None => {
            let t = train_inspirer(prep)?;
            write_run(
                &out.join("inspirer"),
                Stage::Inspirer,
                &prep.config,
                &prep.vocab,
                &t.model.clone().into(),
                &t.metrics,
                None,
            )?;
            Ok(t.model)
        }
    }
}

fn write_table(out: &Path, prep: &Prepared, table: &ComparisonTable) -> Result<()> {
    for arm in &table.arms {
        write_run(
            &out.join(&arm.name),
            Stage::Distill,
            &prep.config,
            &prep.vocab,
            &arm.model.clone().into(),
            &arm.metrics,
            Some(arm.alignment.to_string()),
        )?;
    }
    let rows = serde_json::to_string_pretty(&table.rows()).map_err(|e| Error::config(e.to_string()))?;
    let path = out.join("table.json");
    std::fs::write(&path, rows).map_err(|e| Error::io(&path, e))?;
    print!("{}", table.render());
    Ok(())
}

fn gen_data(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SyntheticSpec>(&text)
                .map_err(|e| Error::config(format!("{}: {}", p.display(), e.message())))?
        }
        None => SyntheticSpec::reference(),
    };
    let b = crate::data::generate_synthetic(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    type Records = Vec<(Option<usize>, String)>;
    let lab =
        |v: &[crate::data::LabeledText]| -> Records { v.iter().map(|e| (Some(e.label), e.text.clone())).collect() };
    let files: [(&str, Records); 4] = [
        ("train.jsonl", lab(&b.labeled)),
        (
            "unlabeled.jsonl",
            b.unlabeled.iter().map(|t| (None, t.clone())).collect(),
        ),
        ("dev.jsonl", lab(&b.dev)),
        ("test.jsonl", lab(&b.test)),
    ];
    for (name, recs) in &files {
        write_jsonl(&out.join(name), recs.iter().map(|(l, t)| (*l, t.as_str())))?;
    }
    println!(
        "wrote {} labeled, {} unlabeled, {} dev, {} test examples to {}",
        b.n(),
        b.m(),
        b.dev.len(),
        b.test.len(),
        out.display()
    );
    Ok(())
}

fn evaluate(ckpt: &Path, data: &Path, max_len: Option<usize>) -> Result<f64> {
    let model = load_checkpoint(ckpt)?;
    let vocab = Vocab::load(&ckpt.with_file_name(VOCAB_FILE))?;
    let limit = match (&model, max_len) {
        (_, Some(n)) => n,
        (CheckpointModel::Inspirer(m), None) => m.config.max_len,
        (CheckpointModel::Target(_), None) => usize::MAX,
    };
    let split = load_jsonl(data)?;
    let classes = model.network().classes();
    let examples = split
        .labeled
        .iter()
        .map(|e| {
            if e.label >= classes {
                return Err(Error::data(format!(
                    "label {} out of range for {classes} classes",
                    e.label
                )));
            }
            Ok(LabeledExample {
                tokens: vocab.encode(&e.text, limit),
                label: e.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    accuracy(model.network(), &examples, 128)
}

fn cost(config: Option<&Path>, baseline: Option<&Path>, full_scale: bool, n: usize, trials: usize) -> Result<()> {
    let (ic, tc): (InspirerConfig, TargetConfig) = if full_scale {
        (InspirerConfig::full_scale(), TargetConfig::full_scale())
    } else {
        let c = match config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::reference(),
        };
        let prep = prepare(&c)?;
        (prep.config.inspirer, prep.config.target)
    };
    let mut ir = CostReport::analyze(&ModelSpec::Inspirer(ic.clone()), n)?;
    let mut tr = CostReport::analyze(&ModelSpec::Target(tc.clone()), n)?;
    if !full_scale {
        let probe = crate::data::TokenBatch::from_sequences(&[vec![crate::data::CLS_ID; n]], tc.max_filter())?;
        ir.latency = Some(benchmark_inference(
            &InspirerModel::<crate::autodiff::Real>::new(ic, 0)?,
            &probe,
            trials,
        )?);
        tr.latency = Some(benchmark_inference(
            &TargetModel::<crate::autodiff::Real>::new(tc, 0)?,
            &probe,
            trials,
        )?);
    }
    match baseline {
        Some(p) => tr.compare_to(&CostReport::load(p)?),
        None => tr.compare_to(&ir),
    }
    println!("{}", ir.to_json());
    println!("{}", tr.to_json());
    Ok(())
}

/// Executes one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => gen_data(spec.as_deref(), &out),
        Command::TrainInspirer(args) => {
            let prep = prepare(&load_config(&args)?)?;
            let t = train_inspirer(&prep)?;
            write_run(
                &args.out,
                Stage::Inspirer,
                &prep.config,
                &prep.vocab,
                &t.model.into(),
                &t.metrics,
                None,
            )?;
            println!("inspirer test accuracy {:.4}", t.metrics.test_accuracy().unwrap_or(0.0));
            Ok(())
        }
        Command::Distill { run, inspirer } => {
            let prep = prepare(&load_config(&run)?)?;
            let teacher = load_inspirer(&inspirer, &prep)?;
            let t = distill_target(&prep, &teacher)?;
            let align = prep.config.alignment()?.to_string();
            write_run(
                &run.out,
                Stage::Distill,
                &prep.config,
                &prep.vocab,
                &t.model.into(),
                &t.metrics,
                Some(align),
            )?;
            println!("target test accuracy {:.4}", t.metrics.test_accuracy().unwrap_or(0.0));
            Ok(())
        }
        Command::TrainSupervised(args) => {
            let prep = prepare(&load_config(&args)?)?;
            let t = train_supervised(&prep)?;
            write_run(
                &args.out,
                Stage::Supervised,
                &prep.config,
                &prep.vocab,
                &t.model.into(),
                &t.metrics,
                None,
            )?;
            println!(
                "supervised test accuracy {:.4}",
                t.metrics.test_accuracy().unwrap_or(0.0)
            );
            Ok(())
        }
        Command::Evaluate { ckpt, data, max_len } => {
            let acc = evaluate(&ckpt, &data, max_len)?;
            println!("accuracy {acc:.4}");
            Ok(())
        }
        Command::Ablate { run, remove, inspirer } => {
            let removals = Removal::parse_list(&remove)?;
            let prep = prepare(&load_config(&run)?)?;
            let teacher = inspirer_for(&prep, inspirer.as_deref(), &run.out)?;
            let table = run_ablation(&prep, &teacher, &removals)?;
            write_table(&run.out, &prep, &table)
        }
        Command::SweepAlignments { run, specs, inspirer } => {
            let text = std::fs::read_to_string(&specs).map_err(|e| Error::io(&specs, e))?;
            let specs = parse_spec_list(&text)?;
            let prep = prepare(&load_config(&run)?)?;
            let teacher = inspirer_for(&prep, inspirer.as_deref(), &run.out)?;
            let table = run_alignment_sweep(&prep, &teacher, &specs)?;
            write_table(&run.out, &prep, &table)
        }
        Command::Cost {
            config,
            baseline,
            full_scale,
            seq_len,
            trials,
        } => cost(config.as_deref(), baseline.as_deref(), full_scale, seq_len, trials),
    }
}
