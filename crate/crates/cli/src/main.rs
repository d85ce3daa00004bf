use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dts_core::archive::{ratio_for_budget, read_archive, storage_report, write_archive};
use dts_core::bench::{run_suite, BenchConfig};
use dts_core::codec::{encode_task, reconstruct_model};
use dts_core::container::{load_tensor_map, save_tensor_map};
use dts_core::error::{Error, Result};
use dts_core::lowrank::{CodecConfig, CodecMode};
use dts_core::merging::{MergeSpec, MergeStrategy, DEFAULT_LAMBDA};
use dts_core::tensor::{DeltaKind, DeltaMap, TensorMap};
use dts_core::unseen::{merge_for_unseen, EmbeddingsFile};

#[derive(Parser)]
#[command(
    name = "dts-forge",
    version,
    about = "Compress, merge and rebuild per-task model deltas"
)]
struct Cli {
    /// Print results as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Task,
    Diff,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Four,
    Two,
    Noscale,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Wa,
    Ta,
}

#[derive(Subcommand)]
enum Command {
    /// Subtract a base model from a fine-tuned model.
    Delta {
        #[arg(long)]
        finetuned: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "task")]
        kind: KindArg,
    },
    /// Compress a delta into a DTSA archive.
    Encode {
        #[arg(long)]
        delta: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long = "r", required_unless_present = "budget_amr")]
        r: Option<f64>,
        /// Choose r so the archive stays within this fraction of the model (e.g. 0.01).
        #[arg(long, conflicts_with = "r")]
        budget_amr: Option<f64>,
        #[arg(long, value_enum, default_value = "four")]
        mode: ModeArg,
        #[arg(long)]
        task_name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild a task model from its archive and base.
    Decode {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge fine-tuned models into one static model.
    Merge {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        /// Pretrained model (task arithmetic only).
        #[arg(long, required_if_eq("strategy", "ta"))]
        base: Option<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the storage report of an archive as JSON.
    Stats {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        base: PathBuf,
    },
    /// Print fusion weights for an unseen task.
    UnseenWeights {
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Build a model for an unseen task from seen-task archives.
    UnseenMerge {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        archives: Vec<PathBuf>,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the synthetic benchmark.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Output {
    json: Value,
    text: String,
}

fn model_summary(map: &TensorMap) -> Value {
    json!({ "layers": map.len(), "parameters": map.num_elements() })
}

fn default_task_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into())
}

fn run(command: Command) -> Result<Output> {
    match command {
        Command::Delta {
            finetuned,
            base,
            out,
            kind,
        } => {
            let kind = match kind {
                KindArg::Task => DeltaKind::TaskVector,
                KindArg::Diff => DeltaKind::DifferenceVector,
            };
            let delta = DeltaMap::between(&load_tensor_map(&finetuned)?, &load_tensor_map(&base)?, kind)?;
            let summary = model_summary(&delta.map);
            save_tensor_map(&delta.into_tagged_map(), &out)?;
            Ok(Output {
                text: format!("wrote {} delta to {}", kind.as_str(), out.display()),
                json: json!({ "out": out, "kind": kind.as_str(), "model": summary }),
            })
        }
        Command::Encode {
            delta,
            base,
            r,
            budget_amr,
            mode,
            task_name,
            out,
        } => {
            let base_map = load_tensor_map(&base)?;
            let delta_map = DeltaMap::from_loaded(load_tensor_map(&delta)?);
            delta_map.map.check_aligned(&base_map)?;
            let r = match (r, budget_amr) {
                (_, Some(budget)) => {
                    let shapes: Vec<(String, Vec<usize>)> =
                        base_map.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
                    ratio_for_budget(&shapes, budget)?
                }
                (Some(r), None) => r,
                (None, None) => unreachable!("clap requires --r or --budget-amr"),
            };
            let mode = match mode {
                ModeArg::Four => CodecMode::FourGroup,
                ModeArg::Two => CodecMode::TwoGroup,
                ModeArg::Noscale => CodecMode::NoScaling,
            };
            let config = CodecConfig::new(r, mode)?;
            let name = task_name.unwrap_or_else(|| default_task_name(&delta));
            let archive = encode_task(&name, &delta_map, base_map.fingerprint(), &config)?;
            write_archive(&archive, &out)?;
            let report = storage_report(&archive, &base_map)?;
            Ok(Output {
                text: format!(
                    "wrote {} (task {name}, r = {r}, mode {}, AMR {:.3}%)",
                    out.display(),
                    mode.as_str(),
                    report.amr_2bit * 100.0
                ),
                json: json!({
                    "out": out,
                    "task_name": name,
                    "r": r,
                    "mode": mode.as_str(),
                    "archive_bytes": report.archive_bytes,
                    "amr_2bit": report.amr_2bit,
                }),
            })
        }
        Command::Decode { archive, base, out } => {
            let archive = read_archive(&archive)?;
            let model = reconstruct_model(&load_tensor_map(&base)?, &archive)?;
            let summary = model_summary(&model);
            save_tensor_map(&model, &out)?;
            Ok(Output {
                text: format!("wrote task {} model to {}", archive.task_name, out.display()),
                json: json!({ "out": out, "task_name": archive.task_name, "model": summary }),
            })
        }
        Command::Merge {
            strategy,
            lambda,
            base,
            models,
            out,
        } => {
            let strategy = match strategy {
                StrategyArg::Wa => MergeStrategy::WeightAverage,
                StrategyArg::Ta => MergeStrategy::TaskArithmetic,
            };
            let spec = MergeSpec { strategy, lambda };
            spec.validate()?;
            let maps = models.iter().map(load_tensor_map).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&TensorMap> = maps.iter().collect();
            let merged = match &base {
                Some(path) => spec.merge(&load_tensor_map(path)?, &refs)?,
                None if strategy == MergeStrategy::WeightAverage => dts_core::merging::weight_average(&refs)?,
                None => return Err(Error::InvalidConfig("task arithmetic needs --base".into())),
            };
            let summary = model_summary(&merged);
            save_tensor_map(&merged, &out)?;
            Ok(Output {
                text: format!("merged {} models into {}", maps.len(), out.display()),
                json: json!({ "out": out, "models": maps.len(), "model": summary }),
            })
        }
        Command::Stats { archive, base } => {
            let report = storage_report(&read_archive(&archive)?, &load_tensor_map(&base)?)?;
            let value = serde_json::to_value(&report).expect("report serializes");
            Ok(Output {
                text: serde_json::to_string_pretty(&value).expect("json"),
                json: value,
            })
        }
        Command::UnseenWeights { embeddings } => {
            let weights = EmbeddingsFile::load(&embeddings)?.weights()?;
            let text = weights
                .weights
                .iter()
                .map(|(n, w)| format!("{n}\t{w:.6}"))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Output {
                text,
                json: serde_json::to_value(&weights).expect("weights serialize"),
            })
        }
        Command::UnseenMerge {
            base,
            archives,
            embeddings,
            out,
        } => {
            let weights = EmbeddingsFile::load(&embeddings)?.weights()?;
            let archives = archives.iter().map(read_archive).collect::<Result<Vec<_>>>()?;
            let model = merge_for_unseen(&load_tensor_map(&base)?, &archives, &weights)?;
            save_tensor_map(&model, &out)?;
            Ok(Output {
                text: format!("wrote fused model to {}", out.display()),
                json: json!({ "out": out, "weights": weights }),
            })
        }
        Command::Bench { config, out } => {
            let config = match config {
                Some(path) => BenchConfig::load(path)?,
                None => BenchConfig::default(),
            };
            let report = run_suite(&config)?;
            std::fs::write(&out, report.to_json())?;
            Ok(Output {
                text: report.to_table(),
                json: serde_json::to_value(&report).expect("report serializes"),
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let json = cli.json;
    match run(cli.command) {
        Ok(out) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&out.json).expect("json"));
            } else {
                println!("{}", out.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json {
                eprintln!("{}", json!({ "error": e.name(), "message": e.to_string() }));
            } else {
                eprintln!("error[{}]: {e}", e.name());
            }
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
