//! Synthetic Gaussian-mixture classification tasks.
//!
//! Tasks come in sibling pairs `(0, 1), (2, 3), …`. An even task draws its
//! class means uniformly on the sphere of radius `mean_radius`. Its odd
//! sibling tilts each of those means toward a fresh random direction so the
//! cosine between matching means is `similar_overlap`. Tasks from different
//! pairs are independent. All tasks share the label space `0..classes`.

use super::config::BenchConfig;
use super::rng::BenchRng;
use crate::error::Result;

const DATA_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub name: String,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// One row per class.
    pub class_means: Vec<Vec<f64>>,
}

impl TaskDataset {
    pub fn input_dim(&self) -> usize {
        self.class_means[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    /// L2-normalized mean of the class means.
    pub fn embedding(&self) -> Vec<f64> {
        let dim = self.input_dim();
        let mut e = vec![0.0; dim];
        for m in &self.class_means {
            for (a, v) in e.iter_mut().zip(m) {
                *a += v;
            }
        }
        unit(&e)
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn sphere_point(rng: &mut BenchRng, dim: usize, radius: f64) -> Vec<f64> {
    unit(&rng.normal_vec(dim)).into_iter().map(|x| x * radius).collect()
}

pub fn task_name(index: usize) -> String {
    format!("task{index}")
}

fn class_means(config: &BenchConfig, rng: &mut BenchRng, partner: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
    let (dim, radius) = (config.input_dim, config.mean_radius);
    let rho = config.similar_overlap;
    (0..config.classes_per_task)
        .map(|c| match partner {
            None => sphere_point(rng, dim, radius),
            Some(means) => {
                let fresh = unit(&rng.normal_vec(dim));
                let anchor = unit(&means[c]);
                let w = (1.0 - rho * rho).sqrt();
                let mixed: Vec<f64> = anchor.iter().zip(&fresh).map(|(a, f)| rho * a + w * f).collect();
                unit(&mixed).into_iter().map(|x| x * radius).collect()
            }
        })
        .collect()
}

fn sample_split(means: &[Vec<f64>], per_class: usize, noise: f64, rng: &mut BenchRng) -> Vec<Sample> {
    let mut out = Vec::with_capacity(means.len() * per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let features = mean.iter().map(|&m| (m + noise * rng.normal()) as f32).collect();
            out.push(Sample { features, label });
        }
    }
    out
}

pub fn generate_tasks(config: &BenchConfig) -> Result<Vec<TaskDataset>> {
    config.validate()?;
    let mut rng = BenchRng::stream(config.seed, DATA_STREAM);
    let mut all_means: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.num_tasks);
    for t in 0..config.num_tasks {
        let partner = (t % 2 == 1).then(|| all_means[t - 1].as_slice());
        let means = class_means(config, &mut rng, partner);
        all_means.push(means);
    }
    let spc = config.samples_per_class;
    Ok(all_means
        .into_iter()
        .enumerate()
        .map(|(t, means)| {
            let train = sample_split(&means, spc.train, config.noise_std, &mut rng);
            let test = sample_split(&means, spc.test, config.noise_std, &mut rng);
            TaskDataset {
                name: task_name(t),
                train,
                test,
                class_means: means,
            }
        })
        .collect())
}
