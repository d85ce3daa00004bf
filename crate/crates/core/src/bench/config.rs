use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplesPerClass {
    pub train: usize,
    pub test: usize,
}

impl Default for SamplesPerClass {
    fn default() -> Self {
        Self { train: 200, test: 100 }
    }
}

/// Everything that determines a benchmark run. Missing JSON fields take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub num_tasks: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes_per_task: usize,
    pub samples_per_class: SamplesPerClass,
    pub seed: u64,
    /// Ratio used for the main table (DTS-T, DTS-D, binarize, no-scaling).
    pub r: f64,
    pub r_sweep: Vec<f64>,
    pub lambda: f64,
    /// Storage budget for the starred variants, as a fraction of the model.
    pub budget_amr: f64,
    pub unseen_holdout: Option<usize>,
    /// Cosine between a sibling task's class mean and its partner's.
    pub similar_overlap: f64,
    pub mean_radius: f64,
    pub noise_std: f64,
    pub learning_rate: f64,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            num_tasks: 4,
            input_dim: 32,
            hidden_dim: 64,
            classes_per_task: 4,
            samples_per_class: SamplesPerClass::default(),
            seed: 1,
            r: 0.3,
            r_sweep: vec![0.05, 0.1, 0.3, 0.5, 1.0],
            lambda: crate::merging::DEFAULT_LAMBDA,
            budget_amr: 0.03,
            unseen_holdout: None,
            similar_overlap: 0.5,
            mean_radius: 3.0,
            noise_std: 0.85,
            learning_rate: 0.1,
            pretrain_steps: 200,
            finetune_steps: 300,
        }
    }
}

fn ratio_ok(r: f64) -> bool {
    r > 0.0 && r <= 1.0
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_tasks == 0 || self.input_dim == 0 || self.hidden_dim == 0 {
            return bad("num_tasks, input_dim and hidden_dim must be positive".into());
        }
        if self.classes_per_task < 2 {
            return bad(format!(
                "classes_per_task = {} (need at least 2)",
                self.classes_per_task
            ));
        }
        if self.samples_per_class.train == 0 || self.samples_per_class.test == 0 {
            return bad("samples_per_class must be positive".into());
        }
        if !ratio_ok(self.r) {
            return bad(format!("r = {} outside (0, 1]", self.r));
        }
        if let Some(r) = self.r_sweep.iter().find(|r| !ratio_ok(**r)) {
            return bad(format!("r_sweep value {r} outside (0, 1]"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad(format!("lambda = {} must be positive", self.lambda));
        }
        if !(self.budget_amr.is_finite() && self.budget_amr > 0.0) {
            return bad(format!("budget_amr = {} must be positive", self.budget_amr));
        }
        if !(0.0..=1.0).contains(&self.similar_overlap) {
            return bad(format!("similar_overlap = {} outside [0, 1]", self.similar_overlap));
        }
        for (name, v) in [
            ("mean_radius", self.mean_radius),
            ("noise_std", self.noise_std),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if let Some(h) = self.unseen_holdout {
            if h >= self.num_tasks || self.num_tasks < 2 {
                return bad(format!(
                    "unseen_holdout {h} needs an index below num_tasks and one other task"
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(json).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
