//! Seeded synthetic classification datasets, so experiments need no
//! external data.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetKind {
    /// Interleaved 2-D spiral arms, one per class.
    Spiral { classes: usize, turns: f64, noise: f64 },
    /// Isotropic unit-variance blobs around random class centres.
    GaussianMixture { classes: usize, dim: usize, separation: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub dataset: DatasetKind,
    pub train_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            dataset: DatasetKind::Spiral {
                classes: 2,
                turns: 1.0,
                noise: 0.1,
            },
            train_size: 24_576,
            val_size: 1024,
            seed: 0,
        }
    }
}

impl DataSpec {
    pub fn input_dim(&self) -> usize {
        match self.dataset {
            DatasetKind::Spiral { .. } => 2,
            DatasetKind::GaussianMixture { dim, .. } => dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.dataset {
            DatasetKind::Spiral { classes, .. } | DatasetKind::GaussianMixture { classes, .. } => classes,
        }
    }

    /// Train and validation splits drawn from independent streams.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        if self.train_size == 0 || self.val_size == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        if self.num_classes() < 2 {
            return Err(Error::Config("datasets need at least two classes".into()));
        }
        let centres = match self.dataset {
            DatasetKind::GaussianMixture { classes, dim, separation } => {
                let mut rng = seeded(self.seed, 0xC0);
                (0..classes)
                    .map(|_| {
                        (0..dim)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                separation * z
                            })
                            .collect::<Vec<f64>>()
                    })
                    .collect()
            }
            DatasetKind::Spiral { .. } => Vec::new(),
        };
        let train = self.draw(self.train_size, 1, &centres)?;
        let val = self.draw(self.val_size, 2, &centres)?;
        Ok((train, val))
    }

    fn draw(&self, n: usize, stream: u64, centres: &[Vec<f64>]) -> Result<Dataset> {
        let mut rng = seeded(self.seed, stream);
        let classes = self.num_classes();
        let dim = self.input_dim();
        let mut x = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % classes;
            match self.dataset {
                DatasetKind::Spiral { turns, noise, .. } => {
                    let t: f64 = rng.random_range(0.05..1.0);
                    let angle = turns * std::f64::consts::TAU * t
                        + std::f64::consts::TAU * class as f64 / classes as f64;
                    let nx: f64 = StandardNormal.sample(&mut rng);
                    let ny: f64 = StandardNormal.sample(&mut rng);
                    x.push(t * angle.cos() + noise * nx);
                    x.push(t * angle.sin() + noise * ny);
                }
                DatasetKind::GaussianMixture { .. } => {
                    for c in &centres[class] {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x.push(c + z);
                    }
                }
            }
            y.push(class);
        }
        Ok(Dataset {
            x: Tensor::matrix(n, dim, x)?,
            y,
            num_classes: classes,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.x.select_rows(indices)?;
        let y = indices.iter().map(|&i| self.y[i]).collect();
        Ok((x, y))
    }
}
