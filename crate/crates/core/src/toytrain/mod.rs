//! Float-domain training at desk scale, quantized export and the activity,
//! bit-width and resilience experiments built on it.

pub mod adam;
pub mod data;
pub mod float_net;
pub mod mine;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{FxError, QFormat};
use crate::network::{infer, kill_cells, quantize_frame, NetworkError, NetworkInstance};
use crate::trace::ActivityTrace;

pub use adam::AdamConfig;
pub use data::{AvToySpec, Dataset, GaussianToySpec};
pub use float_net::{firing_surrogate, FloatNet};
pub use mine::{mine_lower_bound, train_mine, LossConfigL1, MineConfig, MineResult, StatsNet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("batch of {0} samples; at least 2 are needed")]
    BatchTooSmall(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Fx(#[from] FxError),
}

/// Supervised objective `beta * mean SE + gamma * eps`, where `eps` is the
/// mean of `logistic(k t)` over all neurons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfigL2 {
    pub beta: f64,
    pub gamma: f64,
    pub surrogate_sharpness: f64,
}

impl Default for LossConfigL2 {
    fn default() -> Self {
        LossConfigL2 {
            beta: 1.0,
            gamma: 1e-4,
            surrogate_sharpness: 10.0,
        }
    }
}

impl LossConfigL2 {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.gamma >= 0.0 && self.beta >= 0.0 && self.surrogate_sharpness > 0.0) {
            return Err(TrainError::Config("beta and gamma must be nonnegative and k positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfigL2,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Bit width whose rounding noise is injected into the basal and context
    /// sums during training.
    pub noise_bits: Option<u32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfigL2::default(),
            epochs: 30,
            batch: 32,
            adam: AdamConfig::default(),
            seed: 0,
            noise_bits: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub mse: f64,
    /// Hard firing fraction over the epoch.
    pub activity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub net: FloatNet,
    pub curve: Vec<EpochStats>,
}

fn squared_error(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / target.len().max(1) as f64
}

/// Minibatch Adam on `beta * SE + gamma * eps`. Parameters are kept inside
/// the range of the network's fixed-point format.
pub fn train_supervised(mut net: FloatNet, data: &Dataset, cfg: &TrainConfig) -> Result<TrainResult, TrainError> {
    cfg.loss.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.batch == 0 {
        return Err(TrainError::Config("batch size must be positive".into()));
    }
    let fmt = net.spec().qformat;
    let n_neurons = net.neuron_count() as f64;
    let k = cfg.loss.surrogate_sharpness;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let noise_ulp = cfg
        .noise_bits
        .map(|b| QFormat::with_three_int_bits(b).map(|f| f.precision()))
        .transpose()?;
    let mut opt = adam::Adam::new(cfg.adam, net.params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut se_sum, mut fired) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let mut grad = vec![0.0; net.params.len()];
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let f = match noise_ulp {
                    Some(ulp) => net.forward_noisy(&data.inputs[i], &mut noise_rng, ulp),
                    None => net.forward(&data.inputs[i]),
                };
                let target = &data.targets[i];
                let se = squared_error(&f.prediction, target);
                let eps = f.surrogate(k);
                loss_sum += cfg.loss.beta * se + cfg.loss.gamma * eps;
                se_sum += se;
                fired += f.fired();
                let d = target.len() as f64;
                let dpred: Vec<f64> = f
                    .prediction
                    .iter()
                    .zip(target)
                    .map(|(p, t)| scale * cfg.loss.beta * 2.0 * (p - t) / d)
                    .collect();
                net.backward(&f, &dpred, scale * cfg.loss.gamma / n_neurons, k, &mut grad);
            }
            opt.step(net.params.iter_mut(), &grad);
            net.clamp_to(fmt);
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: loss_sum / n,
            mse: se_sum / n,
            activity: fired as f64 / (n * n_neurons),
        };
        if !stats.loss.is_finite() {
            return Err(TrainError::Diverged(format!("loss {} at epoch {epoch}", stats.loss)));
        }
        curve.push(stats);
    }
    Ok(TrainResult { net, curve })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mse: f64,
    /// Hard firing fraction.
    pub activity: f64,
    pub trace: Option<ActivityTrace>,
}

pub fn evaluate_float(net: &FloatNet, data: &Dataset) -> Result<Evaluation, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (mut se, mut fired) = (0.0, 0usize);
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let f = net.forward(x);
        se += squared_error(&f.prediction, t);
        fired += f.fired();
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        mse: se / n,
        activity: fired as f64 / (n * net.neuron_count() as f64),
        trace: None,
    })
}

/// Runs every item for one step on the fixed-point network.
pub fn evaluate_fixed(net: &NetworkInstance, data: &Dataset) -> Result<Evaluation, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let fmt = net.fmt();
    let frames: Vec<_> = data.inputs.iter().map(|x| quantize_frame(x, fmt)).collect();
    let out = infer(net, &frames, 1)?;
    let mut se = 0.0;
    for (step, target) in out.outputs.iter().zip(&data.targets) {
        let pred: Vec<f64> = match &step.fused {
            Some(f) => f.iter().map(|v| v.to_f64()).collect(),
            None => step.outputs.iter().flatten().map(|v| v.to_f64()).collect(),
        };
        se += squared_error(&pred, target);
    }
    Ok(Evaluation {
        mse: se / data.len() as f64,
        activity: out.trace.activity_fraction(),
        trace: Some(out.trace),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub width: u32,
    pub mse: f64,
    pub activity: f64,
}

/// Exports at `Q3.(w-4)` for each width and evaluates on `data`.
pub fn bitwidth_sweep(net: &FloatNet, data: &Dataset, widths: &[u32]) -> Result<Vec<SweepRow>, TrainError> {
    if let Some(&w) = widths.iter().find(|&&w| w < 4) {
        return Err(TrainError::Config(format!("width {w} is below 4 bits")));
    }
    widths
        .iter()
        .map(|&w| {
            let fixed = net.export_quantized(QFormat::with_three_int_bits(w)?)?;
            let e = evaluate_fixed(&fixed, data)?;
            Ok(SweepRow {
                width: w,
                mse: e.mse,
                activity: e.activity,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilienceRow {
    pub fraction: f64,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub activity_mean: f64,
    pub activity_sd: f64,
    /// `(mse_mean - intact mse) / intact mse`.
    pub relative_mse_increase: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Kills `fraction` of the cells with each seed and reports fixed-point MSE
/// and activity as mean and sample standard deviation over seeds.
pub fn resilience_experiment(
    net: &NetworkInstance,
    data: &Dataset,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<ResilienceRow>, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::Config("at least one seed is needed".into()));
    }
    if let Some(&f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(NetworkError::BadFraction(f).into());
    }
    let intact = evaluate_fixed(net, data)?.mse;
    fractions
        .iter()
        .map(|&fraction| {
            let mut mses = Vec::with_capacity(seeds.len());
            let mut acts = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let e = evaluate_fixed(&kill_cells(net, fraction, seed)?, data)?;
                mses.push(e.mse);
                acts.push(e.activity);
            }
            let (mse_mean, mse_sd) = mean_sd(&mses);
            let (activity_mean, activity_sd) = mean_sd(&acts);
            Ok(ResilienceRow {
                fraction,
                mse_mean,
                mse_sd,
                activity_mean,
                activity_sd,
                relative_mse_increase: if intact > 0.0 { (mse_mean - intact) / intact } else { 0.0 },
            })
        })
        .collect()
}

/// The synthetic audio-visual experiment: data, split, network seed and
/// training schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTaskConfig {
    pub data: AvToySpec,
    /// Items held out for evaluation, taken from the end of the data.
    pub test_items: usize,
    pub net_seed: u64,
    pub train: TrainConfig,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        ToyTaskConfig {
            data: AvToySpec {
                samples: 2500,
                ..AvToySpec::default()
            },
            test_items: 500,
            net_seed: 1,
            train: TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            },
        }
    }
}

impl ToyTaskConfig {
    pub fn split(&self) -> Result<(Dataset, Dataset), TrainError> {
        let all = self.data.generate();
        if self.test_items == 0 || self.test_items >= all.len() {
            return Err(TrainError::Config(format!(
                "test_items must be in 1..{}, got {}",
                all.len(),
                self.test_items
            )));
        }
        let cut = all.len() - self.test_items;
        Ok((all.slice(0..cut), all.slice(cut..all.len())))
    }

    pub fn network(&self, mode: crate::network::NetMode) -> crate::network::NetworkSpec {
        crate::network::NetworkSpec::shallow_av(mode, self.net_seed)
    }

    /// Trains a fresh shallow network on the training split.
    pub fn train(
        &self,
        mode: crate::network::NetMode,
        transfer: crate::neuron::TransferMode,
        train: &Dataset,
    ) -> Result<TrainResult, TrainError> {
        let net = FloatNet::new(&self.network(mode), transfer)?;
        train_supervised(net, train, &self.train)
    }
}

/// Transfer used for training by default: the smooth half-Gaussian gate for
/// MCC networks, ReLU6 for point neurons.
pub fn default_transfer(mode: crate::network::NetMode) -> crate::neuron::TransferMode {
    match mode {
        crate::network::NetMode::Mcc => {
            crate::neuron::TransferMode::half_gaussian(crate::neuron::TransferMode::DEFAULT_SIGMA)
                .expect("positive default width")
        }
        crate::network::NetMode::Baseline => crate::neuron::TransferMode::point(),
    }
}
