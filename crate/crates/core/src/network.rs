//! Multi-stream layered MCC graph.
//!
//! Each stream is a stack of fully connected layers. In MCC mode every CCPU
//! additionally receives three context pathways:
//!
//! * proximal (`Cp`): basal activations of its own layer in its own stream,
//!   itself included;
//! * distal (`Cd`): basal activations of the same layer in linked streams;
//! * universal (`Cu`): the brief-memory read-out computed at the end of the
//!   previous step from the fired outputs of the memory-mapped layers.
//!
//! Basal activations are `relu6(r)` of the current step, so the only state
//! carried between steps is the working memory.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{fx_add, fx_clamp, fx_from_real, FxSample, MulQuant, QFormat};
use crate::neuron::{
    activation, context_mac, integrate_context, mac_rf_with, modulatory_transfer_with,
    CcpuSpec, NeuronError, TransferKind, TransferMode, CLIP, MAX_FAN_IN,
};
use crate::trace::ActivityTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("stream {stream}: expected {expected} inputs, got {got}")]
    WidthMismatch {
        stream: usize,
        expected: usize,
        got: usize,
    },
    #[error("expected {expected} input streams, got {got}")]
    StreamCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Neuron(#[from] NeuronError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("kill fraction {0} is outside [0, 1]")]
    BadFraction(f64),
}

fn invalid(msg: impl Into<String>) -> NetworkError {
    NetworkError::InvalidSpec(msg.into())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub name: String,
    pub input_width: usize,
    pub layer_widths: Vec<usize>,
}

impl StreamSpec {
    /// Parses the colon notation `22i:24h:12h:6h:22o`; role suffixes are optional
    /// and the first field is always the input width.
    pub fn parse(name: &str, notation: &str) -> Result<Self, NetworkError> {
        let widths = notation
            .split(':')
            .map(|f| {
                f.trim()
                    .trim_end_matches(['i', 'h', 'o'])
                    .parse::<usize>()
                    .map_err(|_| invalid(format!("bad layer field `{f}` in `{notation}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if widths.len() < 2 {
            return Err(invalid(format!("`{notation}` needs an input and at least one layer")));
        }
        Ok(StreamSpec {
            name: name.to_string(),
            input_width: widths[0],
            layer_widths: widths[1..].to_vec(),
        })
    }

    pub fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_width
        } else {
            self.layer_widths[layer - 1]
        }
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&0)
    }
}

impl fmt::Display for StreamSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}i", self.input_width)?;
        let last = self.layer_widths.len().saturating_sub(1);
        for (i, w) in self.layer_widths.iter().enumerate() {
            write!(f, ":{}{}", w, if i == last { "o" } else { "h" })?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetMode {
    Mcc,
    Baseline,
}

impl std::str::FromStr for NetMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mcc" => Ok(NetMode::Mcc),
            "baseline" => Ok(NetMode::Baseline),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Directed distal link: CCPUs of `to_stream` at `layer` receive the basal
/// activations of every CCPU of `from_stream` at the same layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrossLink {
    pub layer: usize,
    pub from_stream: usize,
    pub to_stream: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub streams: Vec<StreamSpec>,
    pub mode: NetMode,
    pub cross_links: Vec<CrossLink>,
    /// Enables the same-stream proximal context pathway.
    pub proximal_context: bool,
    /// Layers whose outputs (all streams) feed the working memory.
    pub memory_map: Vec<usize>,
    /// Add stream outputs elementwise into one fused output.
    pub fuse_outputs: bool,
    pub qformat: QFormat,
    #[serde(default)]
    pub mul_quant: MulQuant,
    pub seed: u64,
}

impl NetworkSpec {
    /// Two-stream audio-visual shallow network: audio 22:24:12:6:22 and
    /// video 50:24:12:6:22, fully cross-linked, memory fed from the output layer.
    pub fn shallow_av(mode: NetMode, seed: u64) -> Self {
        let streams = vec![
            StreamSpec::parse("audio", "22i:24h:12h:6h:22o").expect("static notation"),
            StreamSpec::parse("video", "50i:24h:12h:6h:22o").expect("static notation"),
        ];
        let mut spec = NetworkSpec {
            streams,
            mode,
            cross_links: vec![],
            proximal_context: true,
            memory_map: vec![3],
            fuse_outputs: true,
            qformat: QFormat::Q3_12,
            mul_quant: MulQuant::Shift,
            seed,
        };
        spec.link_adjacent_streams();
        spec
    }

    /// Single stream, no context pathways.
    pub fn single_stream(notation: &str, mode: NetMode, seed: u64) -> Result<Self, NetworkError> {
        Ok(NetworkSpec {
            streams: vec![StreamSpec::parse("s0", notation)?],
            mode,
            cross_links: vec![],
            proximal_context: false,
            memory_map: vec![],
            fuse_outputs: false,
            qformat: QFormat::Q3_12,
            mul_quant: MulQuant::Shift,
            seed,
        })
    }

    /// Links every stream with its neighbours (s-1, s+1) in both directions on
    /// every layer both streams have.
    pub fn link_adjacent_streams(&mut self) {
        self.cross_links.clear();
        let n = self.streams.len();
        let depth = self.depth();
        for layer in 0..depth {
            for to in 0..n {
                for from in [to.wrapping_sub(1), to + 1] {
                    if from < n
                        && layer < self.streams[to].layer_widths.len()
                        && layer < self.streams[from].layer_widths.len()
                    {
                        self.cross_links.push(CrossLink {
                            layer,
                            from_stream: from,
                            to_stream: to,
                        });
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.streams.iter().map(|s| s.layer_widths.len()).max().unwrap_or(0)
    }

    pub fn width(&self, stream: usize, layer: usize) -> Option<usize> {
        self.streams.get(stream)?.layer_widths.get(layer).copied()
    }

    pub fn memory_width(&self) -> usize {
        if self.mode == NetMode::Baseline {
            return 0;
        }
        self.memory_map
            .iter()
            .map(|&l| (0..self.streams.len()).filter_map(|s| self.width(s, l)).sum::<usize>())
            .sum()
    }

    pub fn distal_width(&self, stream: usize, layer: usize) -> usize {
        if self.mode == NetMode::Baseline {
            return 0;
        }
        self.cross_links
            .iter()
            .filter(|k| k.to_stream == stream && k.layer == layer)
            .filter_map(|k| self.width(k.from_stream, layer))
            .sum()
    }

    pub fn proximal_width(&self, stream: usize, layer: usize) -> usize {
        if self.mode == NetMode::Baseline || !self.proximal_context {
            return 0;
        }
        self.width(stream, layer).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.streams.is_empty() {
            return Err(invalid("no streams"));
        }
        for (s, st) in self.streams.iter().enumerate() {
            if st.input_width == 0 || st.layer_widths.is_empty() {
                return Err(invalid(format!("stream {s} has no inputs or no layers")));
            }
            if st.layer_widths.contains(&0) {
                return Err(invalid(format!("stream {s} has an empty layer")));
            }
            for l in 0..st.layer_widths.len() {
                if st.fan_in(l) > MAX_FAN_IN {
                    return Err(invalid(format!(
                        "stream {s} layer {l}: fan-in {} exceeds {MAX_FAN_IN}",
                        st.fan_in(l)
                    )));
                }
            }
        }
        for k in &self.cross_links {
            if k.from_stream == k.to_stream {
                return Err(invalid(format!("cross link {k:?} is a self link")));
            }
            if self.width(k.from_stream, k.layer).is_none() || self.width(k.to_stream, k.layer).is_none() {
                return Err(invalid(format!("cross link {k:?} references a missing layer")));
            }
        }
        for &l in &self.memory_map {
            if l >= self.depth() {
                return Err(invalid(format!("memory map references missing layer {l}")));
            }
        }
        if self.fuse_outputs {
            let w = self.streams[0].output_width();
            if self.streams.iter().any(|s| s.output_width() != w) {
                return Err(invalid("fused stream outputs must have equal widths"));
            }
        }
        for s in 0..self.streams.len() {
            for l in 0..self.streams[s].layer_widths.len() {
                let ctx = [
                    self.proximal_width(s, l),
                    self.distal_width(s, l),
                    self.memory_width(),
                ];
                if ctx.iter().any(|&w| w > MAX_FAN_IN) {
                    return Err(invalid(format!(
                        "stream {s} layer {l}: context fan-in exceeds {MAX_FAN_IN}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Trainable parameters: basal weights and bias of every neuron plus, in
    /// MCC mode, every proximal, distal and universal context weight.
    pub fn trainable_parameters(&self) -> usize {
        let mut total = 0;
        for (s, st) in self.streams.iter().enumerate() {
            for (l, &w) in st.layer_widths.iter().enumerate() {
                let per_neuron = st.fan_in(l)
                    + 1
                    + self.proximal_width(s, l)
                    + self.distal_width(s, l)
                    + self.memory_width();
                total += w * per_neuron;
            }
        }
        total
    }

    pub fn neuron_count(&self) -> usize {
        self.streams.iter().map(|s| s.layer_widths.iter().sum::<usize>()).sum()
    }
}

/// Initial weight distribution.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum WeightInit {
    /// Uniform in `[-1/sqrt(n), 1/sqrt(n)]` for a group of `n` weights,
    /// quantized to the network format. Biases use the basal fan-in.
    #[default]
    UniformFanIn,
    /// Every weight and bias zero.
    Zeros,
}

/// Address of one CCPU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NeuronId {
    pub stream: usize,
    pub layer: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkInstance {
    spec: NetworkSpec,
    neurons: Vec<Vec<Vec<CcpuSpec>>>,
    killed: Vec<Vec<Vec<bool>>>,
}

fn draw_group(rng: &mut ChaCha8Rng, n: usize, init: WeightInit, fmt: QFormat) -> Vec<FxSample> {
    match init {
        WeightInit::Zeros => vec![FxSample::zero(fmt); n],
        WeightInit::UniformFanIn => {
            let bound = 1.0 / (n.max(1) as f64).sqrt();
            (0..n)
                .map(|_| fx_from_real(rng.random_range(-bound..=bound), fmt))
                .collect()
        }
    }
}

/// Allocate and initialize every CCPU. Baseline mode builds point neurons on
/// the same basal topology with no context weights.
pub fn build_network(spec: &NetworkSpec, init: WeightInit) -> Result<NetworkInstance, NetworkError> {
    spec.validate()?;
    let fmt = spec.qformat;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mode = match spec.mode {
        NetMode::Mcc => TransferMode::relu6(),
        NetMode::Baseline => TransferMode::point(),
    };
    let mut neurons = Vec::with_capacity(spec.streams.len());
    for (s, st) in spec.streams.iter().enumerate() {
        let mut layers = Vec::with_capacity(st.layer_widths.len());
        for (l, &width) in st.layer_widths.iter().enumerate() {
            let fan_in = st.fan_in(l);
            let mut layer = Vec::with_capacity(width);
            for _ in 0..width {
                let basal_weights = draw_group(&mut rng, fan_in, init, fmt);
                let bias = draw_group(&mut rng, fan_in, init, fmt)[0];
                let ctx_weights_proximal = draw_group(&mut rng, spec.proximal_width(s, l), init, fmt);
                let ctx_weights_distal = draw_group(&mut rng, spec.distal_width(s, l), init, fmt);
                let ctx_weights_universal = draw_group(&mut rng, spec.memory_width(), init, fmt);
                layer.push(CcpuSpec {
                    basal_weights,
                    bias,
                    ctx_weights_proximal,
                    ctx_weights_distal,
                    ctx_weights_universal,
                    mode,
                });
            }
            layers.push(layer);
        }
        neurons.push(layers);
    }
    NetworkInstance::from_parts(spec.clone(), neurons)
}

impl NetworkInstance {
    /// Assemble an instance from explicit neuron parameters, checking every
    /// group length against the topology.
    pub fn from_parts(
        spec: NetworkSpec,
        neurons: Vec<Vec<Vec<CcpuSpec>>>,
    ) -> Result<Self, NetworkError> {
        spec.validate()?;
        if neurons.len() != spec.streams.len() {
            return Err(invalid("neuron table does not match stream count"));
        }
        for (s, st) in spec.streams.iter().enumerate() {
            if neurons[s].len() != st.layer_widths.len() {
                return Err(invalid(format!("stream {s}: layer count mismatch")));
            }
            for (l, &w) in st.layer_widths.iter().enumerate() {
                if neurons[s][l].len() != w {
                    return Err(invalid(format!("stream {s} layer {l}: width mismatch")));
                }
                for n in &neurons[s][l] {
                    n.validate()?;
                    let ok = n.fmt() == spec.qformat
                        && n.basal_weights.len() == st.fan_in(l)
                        && n.ctx_weights_proximal.len() == spec.proximal_width(s, l)
                        && n.ctx_weights_distal.len() == spec.distal_width(s, l)
                        && n.ctx_weights_universal.len() == spec.memory_width();
                    if !ok {
                        return Err(invalid(format!(
                            "stream {s} layer {l}: neuron parameters do not match topology"
                        )));
                    }
                    if n.mode.kind == TransferKind::HalfGaussianReference {
                        return Err(NeuronError::UnsupportedMode(n.mode.kind).into());
                    }
                }
            }
        }
        let killed = neurons
            .iter()
            .map(|layers| layers.iter().map(|l| vec![false; l.len()]).collect())
            .collect();
        Ok(NetworkInstance {
            spec,
            neurons,
            killed,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn fmt(&self) -> QFormat {
        self.spec.qformat
    }

    pub fn neuron(&self, id: NeuronId) -> &CcpuSpec {
        &self.neurons[id.stream][id.layer][id.index]
    }

    pub fn neuron_mut(&mut self, id: NeuronId) -> &mut CcpuSpec {
        &mut self.neurons[id.stream][id.layer][id.index]
    }

    /// Neuron addresses in loading order: stream-major, then layer, then index.
    pub fn neuron_ids(&self) -> Vec<NeuronId> {
        let mut ids = Vec::with_capacity(self.neuron_count());
        for (stream, layers) in self.neurons.iter().enumerate() {
            for (layer, ns) in layers.iter().enumerate() {
                for index in 0..ns.len() {
                    ids.push(NeuronId { stream, layer, index });
                }
            }
        }
        ids
    }

    pub fn neuron_count(&self) -> usize {
        self.spec.neuron_count()
    }

    pub fn trainable_parameters(&self) -> usize {
        self.spec.trainable_parameters()
    }

    pub fn is_killed(&self, id: NeuronId) -> bool {
        self.killed[id.stream][id.layer][id.index]
    }

    pub fn set_killed(&mut self, id: NeuronId, killed: bool) {
        self.killed[id.stream][id.layer][id.index] = killed;
    }

    pub fn killed_count(&self) -> usize {
        self.killed.iter().flatten().flatten().filter(|&&k| k).count()
    }

    fn flat_index(&self, id: NeuronId) -> usize {
        let mut idx = 0;
        for s in 0..id.stream {
            idx += self.spec.streams[s].layer_widths.iter().sum::<usize>();
        }
        idx += self.spec.streams[id.stream].layer_widths[..id.layer].iter().sum::<usize>();
        idx + id.index
    }
}

/// Brief memory carried between steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkingMemoryState {
    /// Universal context per neuron, in loading order.
    pub cu_vector: Vec<FxSample>,
    /// Last step's outputs, `[stream][layer][neuron]`; zero for neurons that did not fire.
    pub prev_outputs: Vec<Vec<Vec<FxSample>>>,
}

impl WorkingMemoryState {
    /// Empty history: all-zero memory.
    pub fn new(net: &NetworkInstance) -> Self {
        let fmt = net.fmt();
        WorkingMemoryState {
            cu_vector: vec![FxSample::zero(fmt); net.neuron_count()],
            prev_outputs: net
                .spec
                .streams
                .iter()
                .map(|s| s.layer_widths.iter().map(|&w| vec![FxSample::zero(fmt); w]).collect())
                .collect(),
        }
    }

    pub fn with_zero_cu(&self) -> Self {
        let mut wm = self.clone();
        for c in &mut wm.cu_vector {
            *c = FxSample::zero(c.fmt());
        }
        wm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    /// Final-layer output of each stream.
    pub outputs: Vec<Vec<FxSample>>,
    /// Elementwise saturating sum of the stream outputs, if fusion is enabled.
    pub fused: Option<Vec<FxSample>>,
    /// Every layer's output, `[stream][layer][neuron]`.
    pub layer_outputs: Vec<Vec<Vec<FxSample>>>,
    /// Every layer's basal activation `relu6(r)`, the signal seen by context pathways.
    pub basal_activations: Vec<Vec<Vec<FxSample>>>,
    pub wm: WorkingMemoryState,
    pub trace: ActivityTrace,
}

/// One timestep.
///
/// Phase A evaluates layers bottom-up; within a layer every stream's basal MAC
/// runs first so that proximal and distal contexts can read the basal
/// activations, then each CCPU applies the modulatory transfer with the
/// universal context taken from `wm`. Phase B writes the fired outputs of the
/// memory-mapped layers into the working memory and computes the next
/// `cu_vector = clamp(W_u . memory, -6, 6)`.
pub fn step(
    net: &NetworkInstance,
    inputs: &[Vec<FxSample>],
    wm: &WorkingMemoryState,
) -> Result<StepOutput, NetworkError> {
    let spec = &net.spec;
    let fmt = spec.qformat;
    let quant = spec.mul_quant;
    if inputs.len() != spec.streams.len() {
        return Err(NetworkError::StreamCountMismatch {
            expected: spec.streams.len(),
            got: inputs.len(),
        });
    }
    for (s, (x, st)) in inputs.iter().zip(&spec.streams).enumerate() {
        if x.len() != st.input_width {
            return Err(NetworkError::WidthMismatch {
                stream: s,
                expected: st.input_width,
                got: x.len(),
            });
        }
        if let Some(bad) = x.iter().find(|v| v.fmt() != fmt) {
            return Err(NeuronError::Fx(crate::fixedpoint::FxError::FormatMismatch(fmt, bad.fmt())).into());
        }
    }
    if wm.cu_vector.len() != net.neuron_count() {
        return Err(invalid("working memory does not match network"));
    }

    let mut trace = ActivityTrace::new();
    trace.inferences = 1;
    let n_streams = spec.streams.len();
    let zero = FxSample::zero(fmt);
    let mut layer_outputs: Vec<Vec<Vec<FxSample>>> = vec![Vec::new(); n_streams];
    let mut basal_activations: Vec<Vec<Vec<FxSample>>> = vec![Vec::new(); n_streams];

    for layer in 0..spec.depth() {
        // Basal MACs of every stream at this layer.
        let mut drives: Vec<Vec<FxSample>> = vec![Vec::new(); n_streams];
        for s in 0..n_streams {
            let Some(width) = spec.width(s, layer) else { continue };
            let x: &[FxSample] = if layer == 0 {
                &inputs[s]
            } else {
                &layer_outputs[s][layer - 1]
            };
            let active = x.iter().filter(|v| !v.is_zero()).count() as u32;
            let mut max_active = 0;
            trace.add_layer_basal_macs(layer, (width * (x.len() + 1)) as u64);
            for n in 0..width {
                let id = NeuronId { stream: s, layer, index: n };
                let neuron = net.neuron(id);
                if net.is_killed(id) {
                    // Inputs are gated off; the bias fetch still happens.
                    for _ in 0..x.len() {
                        trace.record_skip();
                    }
                    trace.record_synapse();
                    drives[s].push(zero);
                } else {
                    max_active = max_active.max(active);
                    drives[s].push(mac_rf_with(x, neuron, quant, &mut trace)?);
                }
            }
            trace.observe_layer_fanin(layer, max_active);
            basal_activations[s].push(drives[s].iter().map(|&r| activation(r)).collect());
        }

        for s in 0..n_streams {
            let Some(width) = spec.width(s, layer) else { continue };
            let mut out = Vec::with_capacity(width);
            let distal_inputs: Vec<FxSample> = if spec.mode == NetMode::Mcc {
                spec.cross_links
                    .iter()
                    .filter(|k| k.to_stream == s && k.layer == layer)
                    .flat_map(|k| basal_activations[k.from_stream][layer].iter().copied())
                    .collect()
            } else {
                Vec::new()
            };
            let proximal_inputs: &[FxSample] = if spec.proximal_width(s, layer) > 0 {
                &basal_activations[s][layer]
            } else {
                &[]
            };
            for n in 0..width {
                let id = NeuronId { stream: s, layer, index: n };
                let neuron = net.neuron(id);
                let r = drives[s][n];
                if net.is_killed(id) {
                    let ctx = neuron.ctx_weights_proximal.len() + neuron.ctx_weights_distal.len();
                    for _ in 0..ctx {
                        trace.record_context(false);
                    }
                    trace.record_neuron(false);
                    out.push(zero);
                    continue;
                }
                let value = match spec.mode {
                    NetMode::Baseline => activation(r),
                    NetMode::Mcc => {
                        let cp = context_mac(proximal_inputs, &neuron.ctx_weights_proximal, fmt, quant, &mut trace)?;
                        let cd = context_mac(&distal_inputs, &neuron.ctx_weights_distal, fmt, quant, &mut trace)?;
                        let cu = wm.cu_vector[net.flat_index(id)];
                        let c = integrate_context(cp, cd, cu)?;
                        activation(modulatory_transfer_with(r, c, neuron.mode, quant)?)
                    }
                };
                trace.record_neuron(!value.is_zero());
                out.push(value);
            }
            layer_outputs[s].push(out);
        }
    }

    let next_wm = update_memory(net, &layer_outputs, &mut trace)?;
    let outputs: Vec<Vec<FxSample>> = layer_outputs
        .iter()
        .map(|layers| layers.last().cloned().unwrap_or_default())
        .collect();
    let fused = if spec.fuse_outputs {
        let mut acc = outputs[0].clone();
        for other in &outputs[1..] {
            for (a, &b) in acc.iter_mut().zip(other) {
                *a = fx_add(*a, b).map_err(NeuronError::from)?.0;
            }
        }
        Some(acc)
    } else {
        None
    };
    Ok(StepOutput {
        outputs,
        fused,
        layer_outputs,
        basal_activations,
        wm: next_wm,
        trace,
    })
}

/// Memory input: outputs of the memory-mapped layers, layer by layer in map
/// order, streams in index order.
pub fn memory_input(spec: &NetworkSpec, layer_outputs: &[Vec<Vec<FxSample>>]) -> Vec<FxSample> {
    if spec.mode == NetMode::Baseline {
        return Vec::new();
    }
    let mut mem = Vec::with_capacity(spec.memory_width());
    for &l in &spec.memory_map {
        for outputs in layer_outputs {
            if let Some(layer) = outputs.get(l) {
                mem.extend_from_slice(layer);
            }
        }
    }
    mem
}

fn update_memory(
    net: &NetworkInstance,
    layer_outputs: &[Vec<Vec<FxSample>>],
    trace: &mut ActivityTrace,
) -> Result<WorkingMemoryState, NetworkError> {
    let spec = &net.spec;
    let fmt = spec.qformat;
    let mem = memory_input(spec, layer_outputs);
    let lo = fx_from_real(-CLIP, fmt);
    let hi = fx_from_real(CLIP, fmt);
    let mut cu_vector = Vec::with_capacity(net.neuron_count());
    for id in net.neuron_ids() {
        let neuron = net.neuron(id);
        if neuron.ctx_weights_universal.is_empty() {
            cu_vector.push(FxSample::zero(fmt));
        } else if net.is_killed(id) {
            for _ in 0..mem.len() {
                trace.record_context(false);
            }
            cu_vector.push(FxSample::zero(fmt));
        } else {
            let sum = context_mac(&mem, &neuron.ctx_weights_universal, fmt, spec.mul_quant, trace)?;
            cu_vector.push(fx_clamp(sum, lo, hi).map_err(NeuronError::from)?);
        }
    }
    Ok(WorkingMemoryState {
        cu_vector,
        prev_outputs: layer_outputs.to_vec(),
    })
}

/// One dataset item: input vector per stream.
pub type Frame = Vec<Vec<FxSample>>;

#[derive(Clone, Debug, PartialEq)]
pub struct InferOutput {
    /// Output of the last step for each item.
    pub outputs: Vec<StepOutput>,
    pub trace: ActivityTrace,
}

/// Presents each item for `steps` consecutive timesteps starting from empty
/// memory and merges every step's trace.
pub fn infer(net: &NetworkInstance, dataset: &[Frame], steps: usize) -> Result<InferOutput, NetworkError> {
    if dataset.is_empty() {
        return Err(NetworkError::EmptyDataset);
    }
    let steps = steps.max(1);
    let mut trace = ActivityTrace::new();
    let mut outputs = Vec::with_capacity(dataset.len());
    for frame in dataset {
        let mut wm = WorkingMemoryState::new(net);
        let mut last = None;
        for _ in 0..steps {
            let out = step(net, frame, &wm)?;
            trace.merge(&out.trace);
            wm = out.wm.clone();
            last = Some(out);
        }
        outputs.push(last.expect("at least one step"));
    }
    Ok(InferOutput { outputs, trace })
}

/// Permanently silences `round(fraction * N)` uniformly chosen CCPUs.
///
/// For a fixed seed the killed sets are nested as the fraction grows.
pub fn kill_cells(net: &NetworkInstance, fraction: f64, seed: u64) -> Result<NetworkInstance, NetworkError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(NetworkError::BadFraction(fraction));
    }
    let mut ids = net.neuron_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let k = (fraction * ids.len() as f64).round() as usize;
    let mut out = net.clone();
    for &id in &ids[..k] {
        out.set_killed(id, true);
    }
    Ok(out)
}

/// Real-valued inputs quantized to the network format.
pub fn quantize_frame(values: &[Vec<f64>], fmt: QFormat) -> Frame {
    values
        .iter()
        .map(|v| v.iter().map(|&x| fx_from_real(x, fmt)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::point_forward;

    fn q(x: f64) -> FxSample {
        fx_from_real(x, QFormat::Q3_12)
    }

    fn one_neuron(weight: f64, bias: f64) -> NetworkInstance {
        let spec = NetworkSpec::single_stream("1i:1o", NetMode::Mcc, 0).unwrap();
        let mut net = build_network(&spec, WeightInit::Zeros).unwrap();
        let n = net.neuron_mut(NeuronId { stream: 0, layer: 0, index: 0 });
        n.basal_weights[0] = q(weight);
        n.bias = q(bias);
        net
    }

    #[test]
    fn parse_stream_notation() {
        let s = StreamSpec::parse("audio", "22i:24i:12h:6h:22o").unwrap();
        assert_eq!(s.input_width, 22);
        assert_eq!(s.layer_widths, vec![24, 12, 6, 22]);
        assert_eq!(s.to_string(), "22i:24h:12h:6h:22o");
        assert!(StreamSpec::parse("x", "22i").is_err());
        assert!(StreamSpec::parse("x", "22i:abc").is_err());
    }

    #[test]
    fn tiny_network_counts() {
        let spec = NetworkSpec::single_stream("2i:1o", NetMode::Mcc, 7).unwrap();
        let net = build_network(&spec, WeightInit::UniformFanIn).unwrap();
        assert_eq!(net.neuron_count(), 1);
        let n = net.neuron(NeuronId { stream: 0, layer: 0, index: 0 });
        assert_eq!(n.basal_weights.len(), 2);
        assert_eq!(net.trainable_parameters(), 3);
    }

    #[test]
    fn weight_init_is_bounded_and_deterministic() {
        let spec = NetworkSpec::shallow_av(NetMode::Mcc, 11);
        let a = build_network(&spec, WeightInit::UniformFanIn).unwrap();
        let b = build_network(&spec, WeightInit::UniformFanIn).unwrap();
        assert_eq!(a, b);
        for id in a.neuron_ids() {
            let n = a.neuron(id);
            let bound = 1.0 / (n.fan_in() as f64).sqrt() + 1e-3;
            assert!(n.basal_weights.iter().all(|w| w.to_f64().abs() <= bound));
        }
    }

    #[test]
    fn shallow_av_topology() {
        let spec = NetworkSpec::shallow_av(NetMode::Mcc, 1);
        assert_eq!(spec.neuron_count(), 128);
        assert_eq!(spec.memory_width(), 44);
        assert_eq!(spec.cross_links.len(), 8);
        // The reported 10685 does not follow from these widths under any
        // wiring tried; this is the count of the wiring implemented here.
        assert_eq!(spec.trainable_parameters(), 13432);
        let base = NetworkSpec::shallow_av(NetMode::Baseline, 1);
        assert_eq!(base.trainable_parameters(), 2840);
    }

    #[test]
    fn single_neuron_step() {
        let net = one_neuron(1.0, 0.0);
        let wm = WorkingMemoryState::new(&net);
        let out = step(&net, &[vec![q(1.0)]], &wm).unwrap();
        assert_eq!(out.outputs[0][0].to_f64(), 1.0);
        assert_eq!(out.trace.synapse_events, 2);
        assert_eq!(out.trace.per_layer_active_fanin, vec![1]);
    }

    #[test]
    fn all_zero_inputs_give_bias_events_only() {
        let spec = NetworkSpec::shallow_av(NetMode::Mcc, 3);
        let mut net = build_network(&spec, WeightInit::UniformFanIn).unwrap();
        for id in net.neuron_ids() {
            net.neuron_mut(id).bias = q(0.0);
        }
        let frame = vec![vec![q(0.0); 22], vec![q(0.0); 50]];
        let out = step(&net, &frame, &WorkingMemoryState::new(&net)).unwrap();
        assert!(out.outputs.iter().flatten().all(|v| v.is_zero()));
        assert_eq!(out.trace.synapse_events, 128);
        assert_eq!(out.trace.neurons_fired, 0);
    }

    #[test]
    fn width_and_stream_mismatch() {
        let net = one_neuron(1.0, 0.0);
        let wm = WorkingMemoryState::new(&net);
        assert!(matches!(
            step(&net, &[vec![q(1.0), q(1.0)]], &wm),
            Err(NetworkError::WidthMismatch { .. })
        ));
        assert!(matches!(
            step(&net, &[vec![q(1.0)], vec![q(1.0)]], &wm),
            Err(NetworkError::StreamCountMismatch { .. })
        ));
    }

    #[test]
    fn memory_is_the_only_temporal_channel() {
        let spec = NetworkSpec::shallow_av(NetMode::Mcc, 5);
        let net = build_network(&spec, WeightInit::UniformFanIn).unwrap();
        let frame = quantize_frame(
            &[(0..22).map(|i| (i as f64 * 0.37).sin()).collect(), (0..50).map(|i| (i as f64 * 0.11).cos()).collect()],
            spec.qformat,
        );
        let wm0 = WorkingMemoryState::new(&net);
        let t0 = step(&net, &frame, &wm0).unwrap();
        let t1 = step(&net, &frame, &t0.wm).unwrap();
        let forced = step(&net, &frame, &t0.wm.with_zero_cu()).unwrap();
        assert_eq!(forced.layer_outputs, t0.layer_outputs);
        assert_eq!(forced.trace, t0.trace);
        assert!(t0.wm.cu_vector.iter().any(|c| !c.is_zero()));
        // t1 generally differs; at minimum it must be a valid evaluation
        assert_eq!(t1.outputs.len(), 2);
    }

    #[test]
    fn baseline_matches_point_neurons() {
        let spec = NetworkSpec::single_stream("3i:2o", NetMode::Baseline, 9).unwrap();
        let net = build_network(&spec, WeightInit::UniformFanIn).unwrap();
        let x = vec![q(0.5), q(-1.0), q(2.0)];
        let out = step(&net, &[x.clone()], &WorkingMemoryState::new(&net)).unwrap();
        for i in 0..2 {
            let mut t = ActivityTrace::new();
            let expect = point_forward(&x, net.neuron(NeuronId { stream: 0, layer: 0, index: i }), &mut t).unwrap();
            assert_eq!(out.outputs[0][i], expect.value);
        }
    }

    #[test]
    fn baseline_and_mcc_share_basal_macs() {
        let mcc = build_network(&NetworkSpec::shallow_av(NetMode::Mcc, 2), WeightInit::UniformFanIn).unwrap();
        let base = build_network(&NetworkSpec::shallow_av(NetMode::Baseline, 2), WeightInit::UniformFanIn).unwrap();
        let frame = quantize_frame(&[vec![0.5; 22], vec![0.25; 50]], QFormat::Q3_12);
        let a = step(&mcc, &frame, &WorkingMemoryState::new(&mcc)).unwrap();
        let b = step(&base, &frame, &WorkingMemoryState::new(&base)).unwrap();
        assert_eq!(a.trace.per_layer_basal_mac_total, b.trace.per_layer_basal_mac_total);
        assert_eq!(b.trace.context_mac_total, 0);
    }

    #[test]
    fn kill_fraction_bounds() {
        let net = build_network(&NetworkSpec::shallow_av(NetMode::Mcc, 2), WeightInit::UniformFanIn).unwrap();
        assert_eq!(kill_cells(&net, 0.0, 1).unwrap(), net);
        assert_eq!(kill_cells(&net, 1.0, 1).unwrap().killed_count(), 128);
        assert_eq!(kill_cells(&net, 0.36, 1).unwrap().killed_count(), 46);
        assert!(matches!(kill_cells(&net, 1.5, 1), Err(NetworkError::BadFraction(_))));
    }

    #[test]
    fn fully_killed_network_is_silent() {
        let net = build_network(&NetworkSpec::shallow_av(NetMode::Mcc, 2), WeightInit::UniformFanIn).unwrap();
        let dead = kill_cells(&net, 1.0, 4).unwrap();
        let frame = quantize_frame(&[vec![1.0; 22], vec![1.0; 50]], QFormat::Q3_12);
        let out = infer(&dead, &[frame], 2).unwrap();
        assert!(out.outputs[0].fused.as_ref().unwrap().iter().all(|v| v.is_zero()));
        assert_eq!(out.trace.synapse_events, 2 * 128);
        assert_eq!(out.trace.activity_fraction(), 0.0);
    }

    #[test]
    fn infer_rejects_empty_dataset() {
        let net = one_neuron(1.0, 0.0);
        assert_eq!(infer(&net, &[], 1).unwrap_err(), NetworkError::EmptyDataset);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = NetworkSpec::shallow_av(NetMode::Mcc, 0);
        spec.cross_links.push(CrossLink { layer: 9, from_stream: 0, to_stream: 1 });
        assert!(spec.validate().is_err());
        let mut spec = NetworkSpec::shallow_av(NetMode::Mcc, 0);
        spec.streams[1].layer_widths[3] = 21;
        assert!(spec.validate().is_err());
        let mut spec = NetworkSpec::shallow_av(NetMode::Mcc, 0);
        spec.memory_map = vec![4];
        assert!(spec.validate().is_err());
        assert!(NetworkSpec::single_stream("1024i:1o", NetMode::Mcc, 0).unwrap().validate().is_err());
    }
}
