#![allow(dead_code)]

use ccpu::fixedpoint::fx_from_real;
use ccpu::network::{memory_input, Frame, NeuronId, StepOutput, StreamSpec};
use ccpu::neuron::reference;
use ccpu::{QFormat, NetMode, NetworkInstance, NetworkSpec};
use rand::Rng;

/// Two cross-linked streams with memory fed from the last layer.
pub fn two_stream(mode: NetMode, seed: u64, audio: &str, video: &str) -> NetworkSpec {
    let mut spec = NetworkSpec::shallow_av(mode, seed);
    spec.streams[0] = StreamSpec::parse("a", audio).unwrap();
    spec.streams[1] = StreamSpec::parse("v", video).unwrap();
    spec.memory_map = vec![spec.depth() - 1];
    spec.link_adjacent_streams();
    spec
}

/// Input frame with roughly `zero_prob` of its entries exactly zero.
pub fn random_frame(net: &NetworkInstance, rng: &mut impl Rng, zero_prob: f64) -> Frame {
    net.spec()
        .streams
        .iter()
        .map(|s| {
            (0..s.input_width)
                .map(|_| {
                    let x = if rng.random_bool(zero_prob) { 0.0 } else { rng.random_range(-2.0..2.0) };
                    fx_from_real(x, net.fmt())
                })
                .collect()
        })
        .collect()
}

fn nnz(v: &[ccpu::FxSample]) -> u64 {
    v.iter().filter(|x| !x.is_zero()).count() as u64
}

/// Synapse events of one step recounted from the step's recorded signals:
/// per live neuron one event per nonzero basal input, one per nonzero
/// context input and one for the bias; a killed neuron only fetches its bias.
pub fn shadow_events(net: &NetworkInstance, frame: &Frame, out: &StepOutput) -> u64 {
    let spec = net.spec();
    let mut events = 0;
    for (s, st) in spec.streams.iter().enumerate() {
        for (l, &width) in st.layer_widths.iter().enumerate() {
            let x = if l == 0 { &frame[s] } else { &out.layer_outputs[s][l - 1] };
            let mut ctx = 0;
            if spec.mode == NetMode::Mcc {
                if spec.proximal_width(s, l) > 0 {
                    ctx += nnz(&out.basal_activations[s][l]);
                }
                for k in spec.cross_links.iter().filter(|k| k.to_stream == s && k.layer == l) {
                    ctx += nnz(&out.basal_activations[k.from_stream][l]);
                }
            }
            for index in 0..width {
                let id = NeuronId { stream: s, layer: l, index };
                events += 1;
                if !net.is_killed(id) {
                    events += nnz(x) + ctx;
                }
            }
        }
    }
    let mem = nnz(&memory_input(spec, &out.layer_outputs));
    for id in net.neuron_ids() {
        if !net.is_killed(id) && !net.neuron(id).ctx_weights_universal.is_empty() {
            events += mem;
        }
    }
    events
}

/// Every intermediate of both drive forms, in exact arithmetic, fits the format.
pub fn drive_fits(r: f64, c: f64, fmt: QFormat) -> bool {
    let (lo, hi) = (fmt.min_value(), fmt.max_value());
    [r * r, 2.0 * r, 2.0 * c, r + 2.0 * c, r * (r + 2.0 * c), 2.0 * r * c, 1.0 + r.abs(), c * (1.0 + r.abs()), c * r.abs(),
     r * (r + 2.0 * c) + c, r * r + 2.0 * r * c, reference::drive(r, c)]
        .iter()
        .all(|v| (lo..=hi).contains(v))
}

fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst relative error between analytic and central-difference gradients
/// at `points` random points, per function.
pub fn gradient_errors(seed: u64, points: usize) -> Vec<(&'static str, f64)> {
    use ccpu::toytrain::float_net::{firing_surrogate, firing_surrogate_grad};
    use ccpu::toytrain::mine::{dv_bound_from_scores, dv_bound_grad_scores};
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = [0.0f64; 5];
    for _ in 0..points {
        let r = loop {
            let r: f64 = rng.random_range(-3.0..3.0);
            if r.abs() > 1e-2 {
                break r;
            }
        };
        let c: f64 = rng.random_range(-3.0..3.0);
        let (dr, dc) = reference::drive_grad(r, c);
        worst[0] = worst[0].max(rel_err(dr, central(|x| reference::drive(x, c), r, h)));
        worst[1] = worst[1].max(rel_err(dc, central(|x| reference::drive(r, x), c, h)));

        let sigma: f64 = rng.random_range(0.5..4.0);
        let t: f64 = sigma * rng.random_range(0.05..4.0);
        let g = reference::half_gaussian_grad(t, sigma);
        worst[2] = worst[2].max(rel_err(g, central(|x| reference::half_gaussian(x, sigma), t, h)));

        let k: f64 = rng.random_range(1.0..20.0);
        let t: f64 = rng.random_range(-5.0..5.0) / k;
        let g = firing_surrogate_grad(t, k);
        worst[3] = worst[3].max(rel_err(g, central(|x| firing_surrogate(&[x], k), t, h)));

        let joint: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let marginal: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (gj, gm) = dv_bound_grad_scores(&joint, &marginal);
        let i = rng.random_range(0..8);
        let fj = central(
            |x| {
                let mut j = joint.clone();
                j[i] = x;
                dv_bound_from_scores(&j, &marginal)
            },
            joint[i],
            h,
        );
        let fm = central(
            |x| {
                let mut m = marginal.clone();
                m[i] = x;
                dv_bound_from_scores(&joint, &m)
            },
            marginal[i],
            h,
        );
        worst[4] = worst[4].max(rel_err(gj[i], fj)).max(rel_err(gm[i], fm));
    }
    vec![
        ("drive dT/dr", worst[0]),
        ("drive dT/dc", worst[1]),
        ("half-gaussian", worst[2]),
        ("logistic surrogate", worst[3]),
        ("dv bound", worst[4]),
    ]
}

/// Adds one unit in the last printed digit, keeping the printed precision.
pub fn bump_last_digit(cell: &str) -> Option<String> {
    cell.parse::<f64>().ok()?;
    let decimals = cell.split_once('.').map_or(0, |(_, f)| f.len());
    let v: f64 = cell.parse().unwrap();
    Some(format!("{:.*}", decimals, v + 10f64.powi(-(decimals as i32))))
}

/// Every copy of `text` with exactly one numeric data cell bumped.
pub fn perturbations(text: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        for (j, cell) in cells.iter().enumerate() {
            if let Some(bumped) = bump_last_digit(cell) {
                let mut row: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
                row[j] = bumped;
                let mut all: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
                all[i] = row.join(",");
                out.push(all.join("\n") + "\n");
            }
        }
    }
    out
}
