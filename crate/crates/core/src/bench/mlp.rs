//! Two-layer tanh MLP trained by full-batch gradient descent on softmax
//! cross-entropy. Training runs in f64; weights are exchanged as f32 maps.

use nalgebra::{DMatrix, DVector};

use super::config::BenchConfig;
use super::data::{Sample, TaskDataset};
use super::rng::BenchRng;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorMap};

pub const FC1_WEIGHT: &str = "fc1.weight";
pub const FC1_BIAS: &str = "fc1.bias";
pub const FC2_WEIGHT: &str = "fc2.weight";
pub const FC2_BIAS: &str = "fc2.bias";

const INIT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// hidden × input
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// classes × hidden
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

fn tensor_of(rows: usize, cols: usize, m: &DMatrix<f64>) -> Tensor {
    let data = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| m[(i, j)] as f32))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

impl Mlp {
    /// `W1 ~ N(0, 1/input)`, `W2 ~ N(0, 1/hidden)`, zero biases.
    pub fn init(config: &BenchConfig, rng: &mut BenchRng) -> Self {
        let (d, h, c) = (config.input_dim, config.hidden_dim, config.classes_per_task);
        let s1 = 1.0 / (d as f64).sqrt();
        let s2 = 1.0 / (h as f64).sqrt();
        let w1 = DMatrix::from_row_iterator(h, d, rng.normal_vec(h * d).into_iter().map(|v| v * s1));
        let w2 = DMatrix::from_row_iterator(c, h, rng.normal_vec(c * h).into_iter().map(|v| v * s2));
        Self {
            w1,
            b1: DVector::zeros(h),
            w2,
            b2: DVector::zeros(c),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.ncols(), self.w1.nrows(), self.w2.nrows())
    }

    pub fn to_map(&self) -> TensorMap {
        let (d, h, c) = self.dims();
        let vector = |v: &DVector<f64>| Tensor::new(vec![v.len()], v.iter().map(|&x| x as f32).collect()).unwrap();
        TensorMap::from_entries([
            (FC1_WEIGHT, tensor_of(h, d, &self.w1)),
            (FC1_BIAS, vector(&self.b1)),
            (FC2_WEIGHT, tensor_of(c, h, &self.w2)),
            (FC2_BIAS, vector(&self.b2)),
        ])
        .expect("fixed layer names")
    }

    pub fn from_map(map: &TensorMap) -> Result<Self> {
        let get = |name: &str| {
            map.get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing layer {name:?}")))
        };
        let (w1, b1, w2, b2) = (get(FC1_WEIGHT)?, get(FC1_BIAS)?, get(FC2_WEIGHT)?, get(FC2_BIAS)?);
        if map.len() != 4 || w1.rank() != 2 || w2.rank() != 2 {
            return Err(Error::ShapeMismatch("not a two-layer MLP".into()));
        }
        let (h, d, c) = (w1.shape()[0], w1.shape()[1], w2.shape()[0]);
        if b1.shape() != [h] || w2.shape() != [c, h] || b2.shape() != [c] {
            return Err(Error::ShapeMismatch(format!(
                "inconsistent MLP shapes {:?} {:?} {:?} {:?}",
                w1.shape(),
                b1.shape(),
                w2.shape(),
                b2.shape()
            )));
        }
        let mat = |t: &Tensor, r, k| DMatrix::from_row_iterator(r, k, t.data().iter().map(|&v| v as f64));
        let vec = |t: &Tensor| DVector::from_iterator(t.len(), t.data().iter().map(|&v| v as f64));
        Ok(Self {
            w1: mat(w1, h, d),
            b1: vec(b1),
            w2: mat(w2, c, h),
            b2: vec(b2),
        })
    }

    fn hidden(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.w1.transpose();
        for mut row in z.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b1.iter()) {
                *v = (*v + b).tanh();
            }
        }
        z
    }

    fn logits_from_hidden(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = a * self.w2.transpose();
        for mut row in z.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b2.iter()) {
                *v += b;
            }
        }
        z
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.logits_from_hidden(&self.hidden(x))
    }

    /// One gradient step; returns the loss before the update.
    fn step(&mut self, x: &DMatrix<f64>, labels: &[usize], lr: f64) -> f64 {
        let n = labels.len() as f64;
        let a = self.hidden(x);
        let mut g = self.logits_from_hidden(&a);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let mut row = g.row_mut(i);
            let max = row.max();
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            loss -= (row[y] / total).ln();
            for v in row.iter_mut() {
                *v /= total * n;
            }
            row[y] -= 1.0 / n;
        }
        let gw2 = g.transpose() * &a;
        let gb2 = g.row_sum().transpose();
        let mut ga = &g * &self.w2;
        ga.zip_apply(&a, |d, h| *d *= 1.0 - h * h);
        let gw1 = ga.transpose() * x;
        let gb1 = ga.row_sum().transpose();
        self.w2 -= gw2 * lr;
        self.b2 -= gb2 * lr;
        self.w1 -= gw1 * lr;
        self.b1 -= gb1 * lr;
        loss / n
    }

    pub fn train(&mut self, samples: &[&Sample], steps: usize, lr: f64) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("no training samples".into()));
        }
        let x = features(samples.iter().copied(), self.dims().0);
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        for step in 0..steps {
            let loss = self.step(&x, &labels, lr);
            if !loss.is_finite() || self.w1.iter().chain(self.w2.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss(step));
            }
        }
        Ok(())
    }
}

fn features<'a>(samples: impl ExactSizeIterator<Item = &'a Sample>, dim: usize) -> DMatrix<f64> {
    let n = samples.len();
    DMatrix::from_row_iterator(n, dim, samples.flat_map(|s| s.features.iter().map(|&v| v as f64)))
}

/// Trains a fresh network on the pooled training sets of `tasks`.
pub fn pretrain(config: &BenchConfig, tasks: &[&TaskDataset]) -> Result<TensorMap> {
    config.validate()?;
    let mut rng = BenchRng::stream(config.seed, INIT_STREAM);
    let mut mlp = Mlp::init(config, &mut rng);
    let pooled: Vec<&Sample> = tasks.iter().flat_map(|t| t.train.iter()).collect();
    if config.pretrain_steps > 0 {
        mlp.train(&pooled, config.pretrain_steps, config.learning_rate)?;
    }
    Ok(mlp.to_map())
}

pub fn fine_tune(pretrained: &TensorMap, task: &TaskDataset, config: &BenchConfig) -> Result<TensorMap> {
    if config.finetune_steps == 0 {
        return Ok(pretrained.clone());
    }
    let mut mlp = Mlp::from_map(pretrained)?;
    let samples: Vec<&Sample> = task.train.iter().collect();
    mlp.train(&samples, config.finetune_steps, config.learning_rate)?;
    Ok(mlp.to_map())
}

/// Test-split accuracy in percent; ties go to the lower class index.
pub fn evaluate(model: &TensorMap, task: &TaskDataset) -> Result<f64> {
    let mlp = Mlp::from_map(model)?;
    let (d, _, c) = mlp.dims();
    if d != task.input_dim() || c < task.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "model maps {d} -> {c}, task has {} features and {} classes",
            task.input_dim(),
            task.num_classes()
        )));
    }
    let x = features(task.test.iter(), d);
    let logits = mlp.logits(&x);
    let correct = task
        .test
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            let row = logits.row(*i);
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == s.label
        })
        .count();
    Ok(100.0 * correct as f64 / task.test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::data::generate_tasks;

    fn small() -> BenchConfig {
        BenchConfig {
            num_tasks: 2,
            samples_per_class: super::super::config::SamplesPerClass { train: 20, test: 10 },
            pretrain_steps: 5,
            finetune_steps: 5,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn map_round_trip_and_zero_steps() {
        let cfg = BenchConfig {
            pretrain_steps: 0,
            ..small()
        };
        let tasks = generate_tasks(&cfg).unwrap();
        let refs: Vec<&TaskDataset> = tasks.iter().collect();
        let init = pretrain(&cfg, &refs).unwrap();
        let mut rng = BenchRng::stream(cfg.seed, INIT_STREAM);
        assert_eq!(init, Mlp::init(&cfg, &mut rng).to_map());
        let cfg0 = BenchConfig {
            finetune_steps: 0,
            ..cfg
        };
        assert_eq!(fine_tune(&init, &tasks[0], &cfg0).unwrap(), init);
        assert_eq!(Mlp::from_map(&init).unwrap().to_map(), init);
    }

    #[test]
    fn pretrain_is_deterministic() {
        let cfg = small();
        let tasks = generate_tasks(&cfg).unwrap();
        let refs: Vec<&TaskDataset> = tasks.iter().collect();
        assert_eq!(pretrain(&cfg, &refs).unwrap(), pretrain(&cfg, &refs).unwrap());
    }

    #[test]
    fn constant_class_zero_model_scores_chance() {
        let cfg = small();
        let tasks = generate_tasks(&cfg).unwrap();
        let mut mlp = Mlp::from_map(&pretrain(&cfg, &[&tasks[0]]).unwrap()).unwrap();
        mlp.w2.fill(0.0);
        mlp.b2.fill(0.0);
        let acc = evaluate(&mlp.to_map(), &tasks[0]).unwrap();
        assert_eq!(acc, 25.0);
        mlp.b2[2] = 1.0;
        assert_eq!(evaluate(&mlp.to_map(), &tasks[0]).unwrap(), 25.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = BenchConfig {
            input_dim: 3,
            hidden_dim: 4,
            classes_per_task: 3,
            ..small()
        };
        let mut rng = BenchRng::new(11);
        let mlp = Mlp::init(&cfg, &mut rng);
        let x = DMatrix::from_row_iterator(5, 3, rng.normal_vec(15));
        let labels = [0usize, 2, 1, 1, 0];
        let loss = |m: &Mlp| {
            let z = m.logits(&x);
            let mut l = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row = z.row(i);
                let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
                l += lse - row[y];
            }
            l / labels.len() as f64
        };
        // a step with lr = 1 leaves `before - after` equal to the gradient
        let mut stepped = mlp.clone();
        stepped.step(&x, &labels, 1.0);
        let eps = 1e-6;
        for idx in 0..mlp.w1.len() {
            let mut p = mlp.clone();
            p.w1[idx] += eps;
            let mut q = mlp.clone();
            q.w1[idx] -= eps;
            let numeric = (loss(&p) - loss(&q)) / (2.0 * eps);
            let analytic = mlp.w1[idx] - stepped.w1[idx];
            assert!((numeric - analytic).abs() < 1e-7, "{numeric} {analytic}");
        }
        for idx in 0..mlp.b2.len() {
            let mut p = mlp.clone();
            p.b2[idx] += eps;
            let mut q = mlp.clone();
            q.b2[idx] -= eps;
            let numeric = (loss(&p) - loss(&q)) / (2.0 * eps);
            assert!((numeric - (mlp.b2[idx] - stepped.b2[idx])).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = small();
        let tasks = generate_tasks(&cfg).unwrap();
        let wrong = BenchConfig {
            input_dim: 5,
            ..small()
        };
        let mut rng = BenchRng::new(1);
        let model = Mlp::init(&wrong, &mut rng).to_map();
        assert!(matches!(evaluate(&model, &tasks[0]), Err(Error::ShapeMismatch(_))));
    }
}
