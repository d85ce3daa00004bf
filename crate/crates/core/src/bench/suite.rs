use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::BenchConfig;
use super::data::{generate_tasks, TaskDataset};
use super::mlp::{evaluate, fine_tune, pretrain};
use crate::archive::{ratio_for_budget, storage_report};
use crate::codec::{encode_task, reconstruct_model, DtsArchive};
use crate::error::Result;
use crate::lowrank::{CodecConfig, CodecMode};
use crate::merging::{difference_vectors, task_arithmetic_merge, weight_average};
use crate::tensor::{DeltaKind, DeltaMap, TensorMap};
use crate::unseen::{merge_for_unseen, similarity_weights, MergeWeights, TaskEmbedding};

pub const INDIVIDUAL: &str = "Individual";
pub const WEIGHT_AVERAGE: &str = "Weight Averaging";
pub const TASK_ARITHMETIC: &str = "Task Arithmetic";
pub const BINARIZE: &str = "Binarize";
pub const DTS_T: &str = "DTS-T";
pub const DTS_D: &str = "DTS-D";
pub const DTS_T_BUDGET: &str = "DTS-T*";
pub const DTS_D_BUDGET: &str = "DTS-D*";
pub const NO_SCALING: &str = "DTS-T (no scaling)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub name: String,
    pub r: Option<f64>,
    pub per_task: Vec<f64>,
    pub average: f64,
    pub adr: f64,
    /// Two-bit AMR per task; `None` when nothing task-specific is stored
    /// beyond the full fine-tuned model.
    pub amr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r: f64,
    pub dts_t: f64,
    pub dts_d: f64,
    pub amr: f64,
}

/// Task `first` evaluated under the average of its own and `second`'s model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub first: String,
    pub second: String,
    pub cosine: f64,
    pub individual: f64,
    pub merged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartnerRow {
    pub task: String,
    pub individual: f64,
    pub most_similar: String,
    pub similar_merged: f64,
    pub most_dissimilar: String,
    pub dissimilar_merged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenReport {
    pub holdout: String,
    pub weights: MergeWeights,
    /// Weight average of the seen fine-tuned models.
    pub base_accuracy: f64,
    /// Merged base plus weighted difference-vector archives.
    pub fused_accuracy: f64,
    /// Pretrained model plus weighted task-vector archives.
    pub task_vector_fused_accuracy: f64,
    pub pretrained_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub tasks: Vec<String>,
    pub budget_r: f64,
    pub strategies: Vec<StrategyResult>,
    pub r_sweep: Vec<SweepRow>,
    pub pairwise: Vec<PairRow>,
    pub partners: Vec<PartnerRow>,
    pub unseen: Option<UnseenReport>,
}

pub fn adr(individual_avg: f64, method_avg: f64) -> f64 {
    (individual_avg - method_avg) / individual_avg * 100.0
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Fine-tuned models for `tasks` from one pretrained model.
struct Trained {
    pretrained: TensorMap,
    finetuned: Vec<TensorMap>,
    merged: TensorMap,
}

impl Trained {
    fn new(config: &BenchConfig, tasks: &[&TaskDataset]) -> Result<Self> {
        let pretrained = pretrain(config, tasks)?;
        let finetuned = tasks
            .iter()
            .map(|t| fine_tune(&pretrained, t, config))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&TensorMap> = finetuned.iter().collect();
        let merged = weight_average(&refs)?;
        Ok(Self {
            pretrained,
            finetuned,
            merged,
        })
    }

    fn deltas(&self, base: &TensorMap, kind: DeltaKind) -> Result<Vec<DeltaMap>> {
        match kind {
            DeltaKind::TaskVector => self
                .finetuned
                .iter()
                .map(|m| DeltaMap::between(m, base, kind))
                .collect(),
            DeltaKind::DifferenceVector => {
                let refs: Vec<&TensorMap> = self.finetuned.iter().collect();
                difference_vectors(&refs, base)
            }
        }
    }

    fn archives(&self, tasks: &[&TaskDataset], kind: DeltaKind, r: f64, mode: CodecMode) -> Result<Vec<DtsArchive>> {
        let base = self.base(kind);
        let config = CodecConfig::new(r, mode)?;
        self.deltas(base, kind)?
            .iter()
            .zip(tasks)
            .map(|(d, t)| encode_task(&t.name, d, base.fingerprint(), &config))
            .collect()
    }

    fn base(&self, kind: DeltaKind) -> &TensorMap {
        match kind {
            DeltaKind::TaskVector => &self.pretrained,
            DeltaKind::DifferenceVector => &self.merged,
        }
    }
}

struct Scored {
    per_task: Vec<f64>,
    amr: f64,
}

fn score_archives(base: &TensorMap, archives: &[DtsArchive], tasks: &[&TaskDataset]) -> Result<Scored> {
    let mut per_task = Vec::with_capacity(tasks.len());
    let mut amr = Vec::with_capacity(tasks.len());
    for (archive, task) in archives.iter().zip(tasks) {
        per_task.push(evaluate(&reconstruct_model(base, archive)?, task)?);
        amr.push(storage_report(archive, base)?.amr_2bit);
    }
    Ok(Scored {
        per_task,
        amr: mean(&amr),
    })
}

pub fn run_suite(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let datasets = generate_tasks(config)?;
    let tasks: Vec<&TaskDataset> = datasets.iter().collect();
    let trained = Trained::new(config, &tasks)?;

    let individual: Vec<f64> = trained
        .finetuned
        .iter()
        .zip(&tasks)
        .map(|(m, t)| evaluate(m, t))
        .collect::<Result<_>>()?;
    let ind_avg = mean(&individual);
    let mut strategies = Vec::new();
    let mut push = |name: &str, r: Option<f64>, per_task: Vec<f64>, amr: Option<f64>| {
        let average = mean(&per_task);
        strategies.push(StrategyResult {
            name: name.to_string(),
            r,
            adr: adr(ind_avg, average),
            average,
            per_task,
            amr,
        });
    };
    push(INDIVIDUAL, None, individual.clone(), None);

    let on_all = |model: &TensorMap| -> Result<Vec<f64>> { tasks.iter().map(|t| evaluate(model, t)).collect() };
    push(WEIGHT_AVERAGE, None, on_all(&trained.merged)?, Some(0.0));
    let task_vectors = trained.deltas(&trained.pretrained, DeltaKind::TaskVector)?;
    let ta = task_arithmetic_merge(&trained.pretrained, &task_vectors, config.lambda)?;
    push(TASK_ARITHMETIC, None, on_all(&ta)?, Some(0.0));

    let scored = |kind: DeltaKind, r: f64, mode: CodecMode| -> Result<Scored> {
        let archives = trained.archives(&tasks, kind, r, mode)?;
        score_archives(trained.base(kind), &archives, &tasks)
    };
    let (t, d) = (DeltaKind::TaskVector, DeltaKind::DifferenceVector);
    let r = config.r;
    for (name, kind, mode) in [
        (BINARIZE, t, CodecMode::TwoGroup),
        (DTS_T, t, CodecMode::FourGroup),
        (DTS_D, d, CodecMode::FourGroup),
        (NO_SCALING, t, CodecMode::NoScaling),
    ] {
        let s = scored(kind, r, mode)?;
        push(name, Some(r), s.per_task, Some(s.amr));
    }

    let shapes: Vec<(String, Vec<usize>)> = trained
        .pretrained
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    let budget_r = ratio_for_budget(&shapes, config.budget_amr)?;
    for (name, kind) in [(DTS_T_BUDGET, t), (DTS_D_BUDGET, d)] {
        let s = scored(kind, budget_r, CodecMode::FourGroup)?;
        push(name, Some(budget_r), s.per_task, Some(s.amr));
    }

    let r_sweep = config
        .r_sweep
        .iter()
        .map(|&r| {
            let st = scored(t, r, CodecMode::FourGroup)?;
            let sd = scored(d, r, CodecMode::FourGroup)?;
            Ok(SweepRow {
                r,
                dts_t: mean(&st.per_task),
                dts_d: mean(&sd.per_task),
                amr: st.amr,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let embeddings: Vec<Vec<f64>> = datasets.iter().map(TaskDataset::embedding).collect();
    let mut pairwise = Vec::new();
    for (i, first) in tasks.iter().enumerate() {
        for (j, second) in tasks.iter().enumerate() {
            if i == j {
                continue;
            }
            let merged = weight_average(&[&trained.finetuned[i], &trained.finetuned[j]])?;
            pairwise.push(PairRow {
                first: first.name.clone(),
                second: second.name.clone(),
                cosine: cosine(&embeddings[i], &embeddings[j]),
                individual: individual[i],
                merged: evaluate(&merged, first)?,
            });
        }
    }
    let partners = tasks
        .iter()
        .filter_map(|task| {
            let rows: Vec<&PairRow> = pairwise.iter().filter(|p| p.first == task.name).collect();
            let sim = rows
                .iter()
                .copied()
                .reduce(|a, b| if b.cosine > a.cosine { b } else { a })?;
            let dis = rows
                .iter()
                .copied()
                .reduce(|a, b| if b.cosine < a.cosine { b } else { a })?;
            Some(PartnerRow {
                task: task.name.clone(),
                individual: sim.individual,
                most_similar: sim.second.clone(),
                similar_merged: sim.merged,
                most_dissimilar: dis.second.clone(),
                dissimilar_merged: dis.merged,
            })
        })
        .collect();

    let unseen = match config.unseen_holdout {
        Some(h) => Some(unseen_report(config, &datasets, h)?),
        None => None,
    };

    Ok(BenchReport {
        config: config.clone(),
        tasks: datasets.iter().map(|t| t.name.clone()).collect(),
        budget_r,
        strategies,
        r_sweep,
        pairwise,
        partners,
        unseen,
    })
}

/// Trains on every task except `holdout`, then fuses the seen archives for it.
fn unseen_report(config: &BenchConfig, datasets: &[TaskDataset], holdout: usize) -> Result<UnseenReport> {
    let target = &datasets[holdout];
    let seen: Vec<&TaskDataset> = datasets
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != holdout)
        .map(|(_, t)| t)
        .collect();
    let trained = Trained::new(config, &seen)?;
    let seen_embeddings = seen
        .iter()
        .map(|t| TaskEmbedding::new(t.name.clone(), t.embedding()))
        .collect::<Result<Vec<_>>>()?;
    let weights = similarity_weights(
        &TaskEmbedding::new(target.name.clone(), target.embedding())?,
        &seen_embeddings,
    )?;

    let diff = trained.archives(&seen, DeltaKind::DifferenceVector, config.r, CodecMode::FourGroup)?;
    let fused = merge_for_unseen(&trained.merged, &diff, &weights)?;
    let task = trained.archives(&seen, DeltaKind::TaskVector, config.r, CodecMode::FourGroup)?;
    let fused_t = merge_for_unseen(&trained.pretrained, &task, &weights)?;
    Ok(UnseenReport {
        holdout: target.name.clone(),
        weights,
        base_accuracy: evaluate(&trained.merged, target)?,
        fused_accuracy: evaluate(&fused, target)?,
        task_vector_fused_accuracy: evaluate(&fused_t, target)?,
        pretrained_accuracy: evaluate(&trained.pretrained, target)?,
    })
}

impl BenchReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategyResult> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned-column text rendering of every table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let name_w = self.strategies.iter().map(|s| s.name.len()).max().unwrap_or(6).max(6);
        let _ = write!(out, "{:<name_w$} {:>6}", "Method", "r");
        for t in &self.tasks {
            let _ = write!(out, " {:>8}", t);
        }
        let _ = writeln!(out, " {:>8} {:>8} {:>8}", "Avg", "ADR", "AMR%");
        let fmt_opt = |v: Option<f64>, scale: f64| v.map_or("-".to_string(), |x| format!("{:.2}", x * scale));
        for s in &self.strategies {
            let _ = write!(
                out,
                "{:<name_w$} {:>6}",
                s.name,
                s.r.map_or("-".into(), |r| format!("{r:.3}"))
            );
            for a in &s.per_task {
                let _ = write!(out, " {a:>8.2}");
            }
            let _ = writeln!(out, " {:>8.2} {:>8.2} {:>8}", s.average, s.adr, fmt_opt(s.amr, 100.0));
        }

        let _ = writeln!(out, "\n{:>6} {:>8} {:>8} {:>8}", "r", "DTS-T", "DTS-D", "AMR%");
        for row in &self.r_sweep {
            let _ = writeln!(
                out,
                "{:>6.3} {:>8.2} {:>8.2} {:>8.2}",
                row.r,
                row.dts_t,
                row.dts_d,
                row.amr * 100.0
            );
        }

        let _ = writeln!(
            out,
            "\n{:<8} {:<8} {:>8} {:>10} {:>8}",
            "task", "partner", "cosine", "individual", "merged"
        );
        for p in &self.pairwise {
            let _ = writeln!(
                out,
                "{:<8} {:<8} {:>8.3} {:>10.2} {:>8.2}",
                p.first, p.second, p.cosine, p.individual, p.merged
            );
        }

        if let Some(u) = &self.unseen {
            let _ = writeln!(out, "\nheld-out {}", u.holdout);
            for (name, w) in &u.weights.weights {
                let _ = writeln!(out, "  gamma[{name}] = {w:.4}");
            }
            let _ = writeln!(out, "  {:<26} {:>8.2}", "pretrained", u.pretrained_accuracy);
            let _ = writeln!(out, "  {:<26} {:>8.2}", "merged base", u.base_accuracy);
            let _ = writeln!(out, "  {:<26} {:>8.2}", "fused (difference vectors)", u.fused_accuracy);
            let _ = writeln!(
                out,
                "  {:<26} {:>8.2}",
                "fused (task vectors)", u.task_vector_fused_accuracy
            );
        }
        out
    }
}
