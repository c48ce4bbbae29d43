//! Float mirror of the fixed-point network, with manual backpropagation.
//!
//! Evaluates one step from empty memory: the universal context is zero, and
//! proximal and distal contexts read the current basal activations exactly
//! as the fixed-point step does.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::fixedpoint::{fx_from_real, QFormat};
use crate::network::{build_network, NetMode, NetworkError, NetworkInstance, NetworkSpec, WeightInit};
use crate::neuron::reference::{drive, drive_grad, gate, gate_grad, logistic, relu6, relu6_grad};
use crate::neuron::{TransferMode, CLIP};

#[derive(Clone, Debug, PartialEq)]
struct Slot {
    w: usize,
    fan_in: usize,
    b: usize,
    p: usize,
    np: usize,
    d: usize,
    nd: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloatNet {
    spec: NetworkSpec,
    transfer: TransferMode,
    pub params: Vec<f64>,
    slots: Vec<Vec<Vec<Slot>>>,
    /// Source streams of the distal pathway per `[stream][layer]`, in link order.
    distal_sources: Vec<Vec<Vec<usize>>>,
}

/// Per-layer intermediates of one forward pass, indexed `[stream][layer][neuron]`.
#[derive(Clone, Debug, Default)]
pub struct Forward {
    pub x: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<Vec<f64>>>,
    pub a: Vec<Vec<Vec<f64>>>,
    pub c_sum: Vec<Vec<Vec<f64>>>,
    pub t: Vec<Vec<Vec<f64>>>,
    pub y: Vec<Vec<Vec<f64>>>,
    pub prediction: Vec<f64>,
}

impl Forward {
    pub fn fired(&self) -> usize {
        self.y.iter().flatten().flatten().filter(|&&v| v > 0.0).count()
    }

    /// Mean of `logistic(k t)` over every neuron.
    pub fn surrogate(&self, k: f64) -> f64 {
        let t: Vec<f64> = self.t.iter().flatten().flatten().copied().collect();
        firing_surrogate(&t, k)
    }
}

fn rounding_noise(rng: &mut ChaCha8Rng, ulp: f64, terms: usize) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * ulp * (terms as f64 / 6.0).sqrt()
}

/// Differentiable firing count: mean over neurons of `logistic(k t)`.
pub fn firing_surrogate(pre_activations: &[f64], k: f64) -> f64 {
    if pre_activations.is_empty() {
        return 0.0;
    }
    pre_activations.iter().map(|&t| logistic(k * t)).sum::<f64>() / pre_activations.len() as f64
}

pub fn firing_surrogate_grad(t: f64, k: f64) -> f64 {
    let s = logistic(k * t);
    k * s * (1.0 - s)
}

impl FloatNet {
    /// Float copy of `net`'s basal, proximal and distal weights.
    pub fn from_instance(net: &NetworkInstance, transfer: TransferMode) -> Self {
        let spec = net.spec().clone();
        let mut params = Vec::new();
        let mut slots = Vec::new();
        for (s, st) in spec.streams.iter().enumerate() {
            let mut layers = Vec::new();
            for (l, &width) in st.layer_widths.iter().enumerate() {
                let mut layer = Vec::new();
                for index in 0..width {
                    let n = net.neuron(crate::network::NeuronId { stream: s, layer: l, index });
                    let mut push = |v: &[crate::FxSample]| {
                        let at = params.len();
                        params.extend(v.iter().map(|x| x.to_f64()));
                        at
                    };
                    let w = push(&n.basal_weights);
                    let b = push(&[n.bias]);
                    let p = push(&n.ctx_weights_proximal);
                    let d = push(&n.ctx_weights_distal);
                    layer.push(Slot {
                        w,
                        fan_in: n.basal_weights.len(),
                        b,
                        p,
                        np: n.ctx_weights_proximal.len(),
                        d,
                        nd: n.ctx_weights_distal.len(),
                    });
                }
                layers.push(layer);
            }
            slots.push(layers);
        }
        let distal_sources = spec
            .streams
            .iter()
            .enumerate()
            .map(|(s, st)| {
                (0..st.layer_widths.len())
                    .map(|l| {
                        spec.cross_links
                            .iter()
                            .filter(|k| k.to_stream == s && k.layer == l)
                            .map(|k| k.from_stream)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        FloatNet {
            spec,
            transfer,
            params,
            slots,
            distal_sources,
        }
    }

    /// Fresh network with the same seeded initialization as [`build_network`].
    pub fn new(spec: &NetworkSpec, transfer: TransferMode) -> Result<Self, NetworkError> {
        let wide = NetworkSpec {
            qformat: QFormat::with_three_int_bits(32).expect("static format"),
            ..spec.clone()
        };
        let net = build_network(&wide, WeightInit::UniformFanIn)?;
        let mut out = Self::from_instance(&net, transfer);
        out.spec.qformat = spec.qformat;
        Ok(out)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn transfer(&self) -> TransferMode {
        self.transfer
    }

    pub fn neuron_count(&self) -> usize {
        self.spec.neuron_count()
    }

    pub fn forward(&self, inputs: &[Vec<f64>]) -> Forward {
        self.forward_impl(inputs, None)
    }

    /// Forward pass with zero-mean Gaussian perturbations of the basal and
    /// context sums, scaled like the rounding noise of `n` products at
    /// `ulp`: standard deviation `ulp * sqrt(n / 6)`.
    pub fn forward_noisy(&self, inputs: &[Vec<f64>], rng: &mut ChaCha8Rng, ulp: f64) -> Forward {
        self.forward_impl(inputs, Some((rng, ulp)))
    }

    fn forward_impl(&self, inputs: &[Vec<f64>], mut noise: Option<(&mut ChaCha8Rng, f64)>) -> Forward {
        let spec = &self.spec;
        let ns = spec.streams.len();
        let mcc = spec.mode == NetMode::Mcc;
        let p = &self.params;
        let mut f = Forward {
            x: vec![Vec::new(); ns],
            r: vec![Vec::new(); ns],
            a: vec![Vec::new(); ns],
            c_sum: vec![Vec::new(); ns],
            t: vec![Vec::new(); ns],
            y: vec![Vec::new(); ns],
            prediction: Vec::new(),
        };
        for l in 0..spec.depth() {
            for s in 0..ns {
                let Some(layer) = self.slots[s].get(l) else { continue };
                let x = if l == 0 { inputs[s].clone() } else { f.y[s][l - 1].clone() };
                let mut r: Vec<f64> = layer
                    .iter()
                    .map(|n| p[n.b] + x.iter().zip(&p[n.w..n.w + n.fan_in]).map(|(a, w)| a * w).sum::<f64>())
                    .collect();
                if let Some((rng, ulp)) = noise.as_mut() {
                    let active = x.iter().filter(|v| **v != 0.0).count() + 1;
                    for v in &mut r {
                        *v += rounding_noise(rng, *ulp, active);
                    }
                }
                f.a[s].push(r.iter().map(|&v| relu6(v)).collect());
                f.x[s].push(x);
                f.r[s].push(r);
            }
            for s in 0..ns {
                let Some(layer) = self.slots[s].get(l) else { continue };
                let mut cs = Vec::with_capacity(layer.len());
                let mut ts = Vec::with_capacity(layer.len());
                let mut ys = Vec::with_capacity(layer.len());
                for (i, n) in layer.iter().enumerate() {
                    let r = f.r[s][l][i];
                    let (c, t, y) = if mcc {
                        let mut c = 0.0;
                        if n.np > 0 {
                            c += f.a[s][l].iter().zip(&p[n.p..n.p + n.np]).map(|(a, w)| a * w).sum::<f64>();
                        }
                        let mut off = n.d;
                        for &src in &self.distal_sources[s][l] {
                            for &a in &f.a[src][l] {
                                c += a * p[off];
                                off += 1;
                            }
                        }
                        if let Some((rng, ulp)) = noise.as_mut() {
                            let active = f.a[s][l].iter().take(n.np).filter(|v| **v != 0.0).count()
                                + self.distal_sources[s][l]
                                    .iter()
                                    .map(|&src| f.a[src][l].iter().filter(|v| **v != 0.0).count())
                                    .sum::<usize>();
                            c += rounding_noise(rng, *ulp, active);
                        }
                        let t = drive(r, c.clamp(-CLIP, CLIP));
                        (c, t, gate(t, self.transfer))
                    } else {
                        (0.0, r, relu6(r))
                    };
                    cs.push(c);
                    ts.push(t);
                    ys.push(y);
                }
                f.c_sum[s].push(cs);
                f.t[s].push(ts);
                f.y[s].push(ys);
            }
        }
        f.prediction = if spec.fuse_outputs {
            let mut acc = vec![0.0; spec.streams[0].output_width()];
            for ys in &f.y {
                for (a, v) in acc.iter_mut().zip(ys.last().into_iter().flatten()) {
                    *a += v;
                }
            }
            acc
        } else {
            f.y.iter().flat_map(|ys| ys.last().cloned().unwrap_or_default()).collect()
        };
        f
    }

    /// Accumulates into `grad` the gradient of
    /// `dpred . prediction + surrogate_weight * sum_n logistic(k t_n)`.
    pub fn backward(&self, f: &Forward, dpred: &[f64], surrogate_weight: f64, k: f64, grad: &mut [f64]) {
        let spec = &self.spec;
        let ns = spec.streams.len();
        let mcc = spec.mode == NetMode::Mcc;
        let p = &self.params;
        let mut dy: Vec<Vec<f64>> = (0..ns)
            .map(|s| {
                let w = spec.streams[s].output_width();
                if spec.fuse_outputs {
                    dpred.to_vec()
                } else {
                    let start: usize = spec.streams[..s].iter().map(|st| st.output_width()).sum();
                    dpred[start..start + w].to_vec()
                }
            })
            .collect();
        for l in (0..spec.depth()).rev() {
            let mut dr: Vec<Vec<f64>> = vec![Vec::new(); ns];
            let mut da: Vec<Vec<f64>> = (0..ns).map(|s| vec![0.0; spec.width(s, l).unwrap_or(0)]).collect();
            for s in 0..ns {
                let Some(layer) = self.slots[s].get(l) else { continue };
                for (i, n) in layer.iter().enumerate() {
                    let t = f.t[s][l][i];
                    let g = if mcc { gate_grad(t, self.transfer) } else { relu6_grad(t) };
                    let dt = dy[s][i] * g + surrogate_weight * firing_surrogate_grad(t, k);
                    if !mcc {
                        dr[s].push(dt);
                        continue;
                    }
                    let r = f.r[s][l][i];
                    let c_sum = f.c_sum[s][l][i];
                    let (tr, tc) = drive_grad(r, c_sum.clamp(-CLIP, CLIP));
                    dr[s].push(dt * tr);
                    let dc = if c_sum.abs() < CLIP { dt * tc } else { 0.0 };
                    if dc == 0.0 {
                        continue;
                    }
                    for j in 0..n.np {
                        grad[n.p + j] += dc * f.a[s][l][j];
                        da[s][j] += dc * p[n.p + j];
                    }
                    let mut off = n.d;
                    for &src in &self.distal_sources[s][l] {
                        for j in 0..f.a[src][l].len() {
                            grad[off] += dc * f.a[src][l][j];
                            da[src][j] += dc * p[off];
                            off += 1;
                        }
                    }
                }
            }
            for s in 0..ns {
                let Some(layer) = self.slots[s].get(l) else { continue };
                let x = &f.x[s][l];
                let mut dx = vec![0.0; x.len()];
                for (i, n) in layer.iter().enumerate() {
                    let mut d = dr[s][i];
                    if mcc {
                        d += da[s][i] * relu6_grad(f.r[s][l][i]);
                    }
                    if d == 0.0 {
                        continue;
                    }
                    grad[n.b] += d;
                    for j in 0..n.fan_in {
                        grad[n.w + j] += d * x[j];
                        dx[j] += d * p[n.w + j];
                    }
                }
                if l > 0 {
                    dy[s] = dx;
                }
            }
        }
    }

    /// Clamps every parameter into the representable range of `fmt`.
    pub fn clamp_to(&mut self, fmt: QFormat) {
        let (lo, hi) = (fmt.min_value(), fmt.max_value());
        for v in &mut self.params {
            *v = v.clamp(lo, hi);
        }
    }

    /// Fixed-point network with every weight rounded into `fmt`. Universal
    /// context weights are zero since the float model never sees memory.
    pub fn export_quantized(&self, fmt: QFormat) -> Result<NetworkInstance, NetworkError> {
        let spec = NetworkSpec {
            qformat: fmt,
            ..self.spec.clone()
        };
        let mut net = build_network(&spec, WeightInit::Zeros)?;
        let q = |v: &[f64]| v.iter().map(|&x| fx_from_real(x, fmt)).collect::<Vec<_>>();
        for id in net.neuron_ids() {
            let slot = &self.slots[id.stream][id.layer][id.index];
            let n = net.neuron_mut(id);
            n.basal_weights = q(&self.params[slot.w..slot.w + slot.fan_in]);
            n.bias = fx_from_real(self.params[slot.b], fmt);
            n.ctx_weights_proximal = q(&self.params[slot.p..slot.p + slot.np]);
            n.ctx_weights_distal = q(&self.params[slot.d..slot.d + slot.nd]);
        }
        Ok(net)
    }
}

impl FloatNet {
    /// [`FloatNet::export_quantized`] followed by a bias correction for the
    /// multiplier's truncation: each product loses on average
    /// `(1 - 2^-f) / 2` ulp, so every bias is raised by that amount times the
    /// mean number of nonzero basal inputs seen on `calibration`.
    pub fn export_quantized_compensated(
        &self,
        fmt: QFormat,
        calibration: &super::Dataset,
    ) -> Result<NetworkInstance, NetworkError> {
        let mut net = self.export_quantized(fmt)?;
        if calibration.is_empty() || self.spec.mul_quant != crate::fixedpoint::MulQuant::Shift {
            return Ok(net);
        }
        let ns = self.spec.streams.len();
        let mut active = vec![vec![0usize; self.spec.depth()]; ns];
        for x in &calibration.inputs {
            let f = self.forward(x);
            for s in 0..ns {
                for (l, xs) in f.x[s].iter().enumerate() {
                    active[s][l] += xs.iter().filter(|v| **v != 0.0).count();
                }
            }
        }
        let per_product = (1.0 - fmt.precision()) / 2.0;
        let n = calibration.len() as f64;
        for id in net.neuron_ids() {
            let shift = (active[id.stream][id.layer] as f64 / n * per_product).round() as i64;
            let neuron = net.neuron_mut(id);
            let raw = (neuron.bias.raw() as i64 + shift).clamp(fmt.min_raw(), fmt.max_raw());
            neuron.bias = crate::FxSample::from_raw(raw, fmt).expect("clamped into range");
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{infer, quantize_frame};

    fn loss(net: &FloatNet, x: &[Vec<f64>], target: &[f64], sw: f64, k: f64) -> f64 {
        let f = net.forward(x);
        let se: f64 = f.prediction.iter().zip(target).map(|(p, t)| 0.5 * (p - t).powi(2)).sum();
        se + sw * f.t.iter().flatten().flatten().map(|&t| logistic(k * t)).sum::<f64>()
    }

    fn check_gradients(mode: NetMode, transfer: TransferMode) {
        let mut spec = NetworkSpec::shallow_av(mode, 5);
        spec.streams[0] = crate::network::StreamSpec::parse("a", "3i:4h:2o").unwrap();
        spec.streams[1] = crate::network::StreamSpec::parse("v", "5i:3h:2o").unwrap();
        spec.memory_map = vec![1];
        spec.link_adjacent_streams();
        let mut net = FloatNet::new(&spec, transfer).unwrap();
        for v in net.params.iter_mut() {
            *v *= 2.0;
        }
        let x = vec![vec![0.3, -0.7, 1.1], vec![0.9, 0.2, -0.4, 1.3, 0.5]];
        let target = vec![0.5, 1.5];
        let (sw, k) = (0.05, 3.0);
        let f = net.forward(&x);
        let dpred: Vec<f64> = f.prediction.iter().zip(&target).map(|(p, t)| p - t).collect();
        let mut grad = vec![0.0; net.params.len()];
        net.backward(&f, &dpred, sw, k, &mut grad);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..net.params.len() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = loss(&net, &x, &target, sw, k);
            net.params[i] = orig - h;
            let down = loss(&net, &x, &target, sw, k);
            net.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "{mode:?} worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(NetMode::Mcc, TransferMode::half_gaussian(2.0).unwrap());
        check_gradients(NetMode::Mcc, TransferMode::relu6());
        check_gradients(NetMode::Baseline, TransferMode::point());
    }

    #[test]
    fn export_tracks_float_outputs() {
        let spec = NetworkSpec::shallow_av(NetMode::Mcc, 2);
        let net = FloatNet::new(&spec, TransferMode::relu6()).unwrap();
        let x = vec![vec![0.4; 22], vec![-0.3; 50]];
        let float = net.forward(&x).prediction;
        let wide = QFormat::with_three_int_bits(32).unwrap();
        let fixed = net.export_quantized(wide).unwrap();
        let out = infer(&fixed, &[quantize_frame(&x, wide)], 1).unwrap();
        let got: Vec<f64> = out.outputs[0].fused.as_ref().unwrap().iter().map(|v| v.to_f64()).collect();
        for (a, b) in float.iter().zip(&got) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn compensation_raises_bias_by_expected_truncation() {
        let spec = NetworkSpec::single_stream("4i:1o", NetMode::Baseline, 0).unwrap();
        let net = FloatNet::new(&spec, TransferMode::point()).unwrap();
        let calib = super::super::Dataset {
            inputs: vec![vec![vec![0.5, -0.25, 1.0, 0.75]], vec![vec![0.5, 0.0, 1.0, 0.0]]],
            targets: vec![vec![0.0], vec![0.0]],
        };
        let fmt = QFormat::Q3_12;
        let plain = net.export_quantized(fmt).unwrap();
        let comp = net.export_quantized_compensated(fmt, &calib).unwrap();
        let id = plain.neuron_ids()[0];
        // Three nonzero inputs on average, half an ulp each.
        assert_eq!(comp.neuron(id).bias.raw() - plain.neuron(id).bias.raw(), 1);
        assert_eq!(comp.neuron(id).basal_weights, plain.neuron(id).basal_weights);
    }
}
