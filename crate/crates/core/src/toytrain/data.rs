//! Synthetic datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Inputs per stream and a target vector for each item.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<Vec<f64>>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            inputs: self.inputs[range.clone()].to_vec(),
            targets: self.targets[range].to_vec(),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Pairs of `dim`-dimensional Gaussians where each coordinate of `y` has
/// correlation `rho` with the same coordinate of `x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianToySpec {
    pub dim: usize,
    pub rho: f64,
    pub samples: usize,
    pub seed: u64,
}

impl GaussianToySpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.rho.abs() < 1.0) {
            return Err(TrainError::Config(format!("correlation {} must satisfy |rho| < 1", self.rho)));
        }
        if self.dim == 0 {
            return Err(TrainError::Config("dimension must be positive".into()));
        }
        Ok(())
    }

    /// Analytic mutual information in nats: `-dim/2 * ln(1 - rho^2)`.
    pub fn true_mi(&self) -> f64 {
        -0.5 * self.dim as f64 * (1.0 - self.rho * self.rho).ln()
    }

    pub fn sample(&self) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), TrainError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(sample_pairs(&mut rng, self.dim, self.rho, self.samples))
    }
}

pub(crate) fn sample_pairs(
    rng: &mut ChaCha8Rng,
    dim: usize,
    rho: f64,
    n: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let s = (1.0 - rho * rho).sqrt();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let y = x.iter().map(|&xi| rho * xi + s * normal(rng)).collect();
        xs.push(x);
        ys.push(y);
    }
    (xs, ys)
}

/// Audio-visual denoising task: a clean nonnegative target, a noisy copy of
/// it as the audio stream, and a noisy linear view of the shared latent as
/// the video stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AvToySpec {
    pub audio_dim: usize,
    pub video_dim: usize,
    pub latent_dim: usize,
    pub audio_noise: f64,
    pub video_noise: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for AvToySpec {
    fn default() -> Self {
        AvToySpec {
            audio_dim: 22,
            video_dim: 50,
            latent_dim: 6,
            audio_noise: 0.5,
            video_noise: 0.3,
            samples: 2000,
            seed: 0,
        }
    }
}

impl AvToySpec {
    pub fn generate(&self) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mix = |rng: &mut ChaCha8Rng, rows: usize, scale: f64| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| (0..self.latent_dim).map(|_| scale * normal(rng)).collect())
                .collect()
        };
        let a = mix(&mut rng, self.audio_dim, 0.5);
        let v = mix(&mut rng, self.video_dim, 0.5);
        let apply = |m: &[Vec<f64>], u: &[f64]| -> Vec<f64> {
            m.iter().map(|row| row.iter().zip(u).map(|(w, x)| w * x).sum()).collect()
        };
        let mut data = Dataset::default();
        for _ in 0..self.samples {
            let u: Vec<f64> = (0..self.latent_dim).map(|_| normal(&mut rng)).collect();
            let z: Vec<f64> = apply(&a, &u).into_iter().map(|x| (x + 0.5).clamp(0.0, 3.0)).collect();
            let audio = z
                .iter()
                .map(|&x| (x + self.audio_noise * normal(&mut rng)).clamp(-4.0, 4.0))
                .collect();
            let video = apply(&v, &u)
                .into_iter()
                .map(|x| (x + self.video_noise * normal(&mut rng)).clamp(-4.0, 4.0))
                .collect();
            data.inputs.push(vec![audio, video]);
            data.targets.push(z);
        }
        data
    }
}
