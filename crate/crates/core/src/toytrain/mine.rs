//! Mutual-information estimation with the Donsker-Varadhan bound.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::data::{sample_pairs, GaussianToySpec};
use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineConfig {
    pub hidden: Vec<usize>,
    /// Rate of the moving average that replaces the batch partition function
    /// in the gradient.
    pub ma_rate: f64,
    pub adam: AdamConfig,
    pub batch: usize,
    pub iterations: usize,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            hidden: vec![64, 64],
            ma_rate: 0.01,
            adam: AdamConfig::default(),
            batch: 256,
            iterations: 2000,
        }
    }
}

/// Weights of the semi-supervised objective `beta * SE - alpha * MI`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfigL1 {
    pub alpha: f64,
    pub beta: f64,
    pub mine: MineConfig,
}

impl Default for LossConfigL1 {
    fn default() -> Self {
        LossConfigL1 {
            alpha: 1.0,
            beta: 1.0,
            mine: MineConfig::default(),
        }
    }
}

impl LossConfigL1 {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(TrainError::Config("alpha and beta must be nonnegative".into()));
        }
        if !(self.mine.ma_rate > 0.0 && self.mine.ma_rate <= 1.0) {
            return Err(TrainError::Config("moving-average rate must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn loss(&self, se: f64, mi: f64) -> f64 {
        self.beta * se - self.alpha * mi
    }
}

/// Statistics network `T(x, y)`: an MLP with ELU hidden units and a scalar output.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsNet {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Pre-activations of every layer for one input.
pub struct StatsCache {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

impl StatsNet {
    /// Glorot-uniform initialization.
    pub fn new(input: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(input, hidden);
        let mut at = 0;
        for win in net.sizes.windows(2) {
            let (i, o) = (win[0], win[1]);
            let bound = (6.0 / (i + o) as f64).sqrt();
            for v in &mut net.params[at..at + i * o] {
                *v = rng.random_range(-bound..bound);
            }
            at += i * o + o;
        }
        net
    }

    /// Network whose output is identically zero.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        StatsNet {
            sizes,
            params: vec![0.0; n],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn forward(&self, x: &[f64], y: &[f64]) -> (f64, StatsCache) {
        let mut act: Vec<f64> = x.iter().chain(y).copied().collect();
        let mut cache = StatsCache {
            pre: Vec::new(),
            act: Vec::new(),
        };
        let mut at = 0;
        let last = self.sizes.len() - 2;
        for (li, win) in self.sizes.windows(2).enumerate() {
            let (i, o) = (win[0], win[1]);
            let w = &self.params[at..at + i * o];
            let b = &self.params[at + i * o..at + i * o + o];
            let pre: Vec<f64> = (0..o)
                .map(|k| b[k] + w[k * i..(k + 1) * i].iter().zip(&act).map(|(w, a)| w * a).sum::<f64>())
                .collect();
            let next = if li == last { pre.clone() } else { pre.iter().map(|&v| elu(v)).collect() };
            cache.act.push(std::mem::replace(&mut act, next));
            cache.pre.push(pre);
            at += i * o + o;
        }
        (act[0], cache)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.forward(x, y).0
    }

    /// Adds `dout * dT/dparams` into `grad`.
    pub fn backward(&self, cache: &StatsCache, dout: f64, grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut at = 0;
        for win in self.sizes.windows(2) {
            offsets.push(at);
            at += win[0] * win[1] + win[1];
        }
        let mut delta = vec![dout];
        for li in (0..n_layers).rev() {
            let (i, o) = (self.sizes[li], self.sizes[li + 1]);
            if li != n_layers - 1 {
                for (d, &p) in delta.iter_mut().zip(&cache.pre[li]) {
                    *d *= elu_grad(p);
                }
            }
            let at = offsets[li];
            let input = &cache.act[li];
            let mut prev = vec![0.0; i];
            for k in 0..o {
                let d = delta[k];
                grad[at + i * o + k] += d;
                let row = at + k * i;
                for j in 0..i {
                    grad[row + j] += d * input[j];
                    prev[j] += d * self.params[row + j];
                }
            }
            delta = prev;
        }
    }
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// `mean(joint) - ln(mean(exp(marginal)))`.
pub fn dv_bound_from_scores(joint: &[f64], marginal: &[f64]) -> f64 {
    joint.iter().sum::<f64>() / joint.len() as f64 - log_mean_exp(marginal)
}

/// Gradient of [`dv_bound_from_scores`] with respect to each score.
pub fn dv_bound_grad_scores(joint: &[f64], marginal: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dj = vec![1.0 / joint.len() as f64; joint.len()];
    let m = marginal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = marginal.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    (dj, e.iter().map(|v| -v / z).collect())
}

/// Lower bound on `I(X; Y)` in nats from paired samples; product-of-marginals
/// samples pair each `x` with a shuffled `y`.
pub fn mine_lower_bound(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    stats: &StatsNet,
    rng: &mut impl Rng,
) -> Result<f64, TrainError> {
    if x.len() != y.len() {
        return Err(TrainError::Config("x and y batches differ in size".into()));
    }
    if x.len() < 2 {
        return Err(TrainError::BatchTooSmall(x.len()));
    }
    let mut perm: Vec<usize> = (0..y.len()).collect();
    perm.shuffle(rng);
    let joint: Vec<f64> = x.iter().zip(y).map(|(a, b)| stats.eval(a, b)).collect();
    let marginal: Vec<f64> = x.iter().zip(&perm).map(|(a, &j)| stats.eval(a, &y[j])).collect();
    Ok(dv_bound_from_scores(&joint, &marginal))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineResult {
    /// Bound on a held-out sample of `spec.samples` pairs.
    pub estimate: f64,
    pub true_mi: f64,
    /// Batch bound per iteration.
    pub curve: Vec<f64>,
}

/// Trains a statistics network on fresh batches from `spec` and evaluates
/// the bound on a held-out sample.
pub fn train_mine(spec: &GaussianToySpec, cfg: &MineConfig) -> Result<MineResult, TrainError> {
    spec.validate()?;
    if cfg.batch < 2 {
        return Err(TrainError::BatchTooSmall(cfg.batch));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut stats = StatsNet::new(2 * spec.dim, &cfg.hidden, &mut rng);
    let mut opt = Adam::new(cfg.adam, stats.params.len());
    let mut ma: Option<f64> = None;
    let mut curve = Vec::with_capacity(cfg.iterations);
    let n = cfg.batch as f64;
    for _ in 0..cfg.iterations {
        let (x, y) = sample_pairs(&mut rng, spec.dim, spec.rho, cfg.batch);
        let mut perm: Vec<usize> = (0..cfg.batch).collect();
        perm.shuffle(&mut rng);
        let mut grad = vec![0.0; stats.params.len()];
        let mut joint = Vec::with_capacity(cfg.batch);
        for (a, b) in x.iter().zip(&y) {
            let (t, cache) = stats.forward(a, b);
            joint.push(t);
            stats.backward(&cache, -1.0 / n, &mut grad);
        }
        let marg: Vec<(f64, StatsCache)> = x.iter().zip(&perm).map(|(a, &j)| stats.forward(a, &y[j])).collect();
        let scores: Vec<f64> = marg.iter().map(|(t, _)| *t).collect();
        let batch_mean = scores.iter().map(|t| t.exp()).sum::<f64>() / n;
        let avg = match ma {
            None => batch_mean,
            Some(m) => (1.0 - cfg.ma_rate) * m + cfg.ma_rate * batch_mean,
        };
        ma = Some(avg);
        for (t, cache) in &marg {
            stats.backward(cache, t.exp() / (n * avg), &mut grad);
        }
        curve.push(dv_bound_from_scores(&joint, &scores));
        let bound = curve.last().copied().unwrap_or(0.0);
        if !bound.is_finite() {
            return Err(TrainError::Diverged(format!("bound became {bound} after {} iterations", curve.len())));
        }
        opt.step(stats.params.iter_mut(), &grad);
    }
    let (x, y) = sample_pairs(&mut eval_rng, spec.dim, spec.rho, spec.samples.max(2));
    let estimate = mine_lower_bound(&x, &y, &stats, &mut eval_rng)?;
    Ok(MineResult {
        estimate,
        true_mi: spec.true_mi(),
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_gives_zero_bound() {
        let spec = GaussianToySpec { dim: 1, rho: 0.0, samples: 100, seed: 3 };
        let (x, y) = spec.sample().unwrap();
        let stats = StatsNet::zeros(2, &[8, 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(mine_lower_bound(&x, &y, &stats, &mut rng).unwrap(), 0.0);
        assert!(matches!(
            mine_lower_bound(&x[..1], &y[..1], &stats, &mut rng),
            Err(TrainError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn stats_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = StatsNet::new(3, &[5, 4], &mut rng);
        let (x, y) = (vec![0.3, -1.2], vec![0.8]);
        let (_, cache) = net.forward(&x, &y);
        let mut grad = vec![0.0; net.params.len()];
        net.backward(&cache, 1.0, &mut grad);
        let h = 1e-6;
        for i in 0..net.params.len() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = net.eval(&x, &y);
            net.params[i] = orig - h;
            let down = net.eval(&x, &y);
            net.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * fd.abs().max(1.0), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn dv_score_gradient() {
        let joint = [0.2, -0.4, 1.0];
        let marg = [0.5, 0.1, -0.3];
        let (dj, dm) = dv_bound_grad_scores(&joint, &marg);
        assert!(dj.iter().all(|&d| (d - 1.0 / 3.0).abs() < 1e-15));
        assert!((dm.iter().sum::<f64>() + 1.0).abs() < 1e-12);
    }
}
