//! JSON model files with sidecar weight images.
//!
//! `<stem>.json` holds the topology and run metadata. `<stem>.weights.bin`
//! holds one basal block per neuron (weights, then bias) and, in MCC mode,
//! `<stem>.context.bin` holds one block per neuron with the proximal, distal
//! and universal context weights in that order. Image paths are stored
//! relative to the JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fixedpoint::FxSample;
use crate::network::{build_network, NetMode, NetworkInstance, NetworkSpec, WeightInit};
use crate::neuron::TransferKind;

use super::weights::WeightImage;
use super::{file_err, IoError};

pub const MODEL_FORMAT: &str = "ccpu-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub network: NetworkSpec,
    pub transfer: TransferKind,
    pub neuron_count: usize,
    pub weight_image: String,
    #[serde(default)]
    pub context_image: Option<String>,
    /// Killed neurons as loading-order indices.
    #[serde(default)]
    pub killed: Vec<usize>,
}

impl ModelFile {
    pub fn validate(&self) -> Result<(), IoError> {
        if self.format != MODEL_FORMAT {
            return Err(IoError::Schema(format!("format is {:?}, expected {MODEL_FORMAT:?}", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(IoError::Schema(format!("unsupported version {}", self.version)));
        }
        self.network.validate()?;
        let expected = transfer_for(self.network.mode);
        if self.transfer != expected {
            return Err(IoError::Schema(format!("{} mode requires {} transfer", mode_name(self.network.mode), expected)));
        }
        if self.neuron_count != self.network.neuron_count() {
            return Err(IoError::Schema(format!(
                "neuron_count {} does not match topology ({})",
                self.neuron_count,
                self.network.neuron_count()
            )));
        }
        if self.network.mode == NetMode::Mcc && self.context_image.is_none() {
            return Err(IoError::Schema("mcc model without context image".into()));
        }
        if let Some(&k) = self.killed.iter().find(|&&k| k >= self.neuron_count) {
            return Err(IoError::Schema(format!("killed index {k} out of range")));
        }
        Ok(())
    }
}

fn transfer_for(mode: NetMode) -> TransferKind {
    match mode {
        NetMode::Mcc => TransferKind::Relu6Hardware,
        NetMode::Baseline => TransferKind::PointBaseline,
    }
}

fn mode_name(mode: NetMode) -> &'static str {
    match mode {
        NetMode::Mcc => "mcc",
        NetMode::Baseline => "baseline",
    }
}

pub fn basal_image(net: &NetworkInstance) -> Result<WeightImage, IoError> {
    let blocks = net
        .neuron_ids()
        .into_iter()
        .map(|id| {
            let n = net.neuron(id);
            let mut block = n.basal_weights.clone();
            block.push(n.bias);
            block
        })
        .collect();
    WeightImage::new(net.fmt(), blocks)
}

pub fn context_image(net: &NetworkInstance) -> WeightImage {
    let blocks = net
        .neuron_ids()
        .into_iter()
        .map(|id| {
            let n = net.neuron(id);
            let mut block = n.ctx_weights_proximal.clone();
            block.extend_from_slice(&n.ctx_weights_distal);
            block.extend_from_slice(&n.ctx_weights_universal);
            block
        })
        .collect();
    WeightImage {
        fmt: net.fmt(),
        blocks,
    }
}

fn sidecar(json: &Path, suffix: &str) -> (PathBuf, String) {
    let stem = json.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = format!("{stem}.{suffix}");
    (json.with_file_name(&name), name)
}

/// Writes `path` and its sidecar images; returns the model document.
pub fn save_model(net: &NetworkInstance, path: &Path) -> Result<ModelFile, IoError> {
    let spec = net.spec().clone();
    let (weights_path, weights_name) = sidecar(path, "weights.bin");
    fs::write(&weights_path, basal_image(net)?.to_bytes()).map_err(|e| file_err(&weights_path, e))?;
    let context = if spec.mode == NetMode::Mcc {
        let (ctx_path, ctx_name) = sidecar(path, "context.bin");
        fs::write(&ctx_path, context_image(net).to_bytes()).map_err(|e| file_err(&ctx_path, e))?;
        Some(ctx_name)
    } else {
        None
    };
    let killed = net
        .neuron_ids()
        .into_iter()
        .enumerate()
        .filter(|&(_, id)| net.is_killed(id))
        .map(|(i, _)| i)
        .collect();
    let doc = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        transfer: transfer_for(spec.mode),
        neuron_count: spec.neuron_count(),
        network: spec,
        weight_image: weights_name,
        context_image: context,
        killed,
    };
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(path, text + "\n").map_err(|e| file_err(path, e))?;
    Ok(doc)
}

pub fn load_model(path: &Path) -> Result<NetworkInstance, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let doc: ModelFile = serde_json::from_str(&text).map_err(|e| IoError::Schema(e.to_string()))?;
    doc.validate()?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut net = build_network(&doc.network, WeightInit::Zeros)?;
    let ids = net.neuron_ids();
    let fmt = doc.network.qformat;

    let weights_path = dir.join(&doc.weight_image);
    let bytes = fs::read(&weights_path).map_err(|e| file_err(&weights_path, e))?;
    let lens: Vec<usize> = ids.iter().map(|&id| net.neuron(id).fan_in() + 1).collect();
    let basal = WeightImage::from_bytes(&bytes, fmt, &lens)?;
    check_blocks(&basal, &lens)?;
    for (&id, block) in ids.iter().zip(&basal.blocks) {
        let n = net.neuron_mut(id);
        let (w, b) = block.split_at(block.len() - 1);
        n.basal_weights = w.to_vec();
        n.bias = b[0];
    }

    if let Some(ctx) = &doc.context_image {
        let ctx_path = dir.join(ctx);
        let bytes = fs::read(&ctx_path).map_err(|e| file_err(&ctx_path, e))?;
        let lens: Vec<usize> = ids
            .iter()
            .map(|&id| {
                let n = net.neuron(id);
                n.ctx_weights_proximal.len() + n.ctx_weights_distal.len() + n.ctx_weights_universal.len()
            })
            .collect();
        let image = read_unbounded(&bytes, fmt, &lens)?;
        for (&id, block) in ids.iter().zip(&image) {
            let n = net.neuron_mut(id);
            let (p, rest) = block.split_at(n.ctx_weights_proximal.len());
            let (d, u) = rest.split_at(n.ctx_weights_distal.len());
            n.ctx_weights_proximal = p.to_vec();
            n.ctx_weights_distal = d.to_vec();
            n.ctx_weights_universal = u.to_vec();
        }
    }
    for k in doc.killed {
        net.set_killed(ids[k], true);
    }
    Ok(net)
}

fn check_blocks(image: &WeightImage, lens: &[usize]) -> Result<(), IoError> {
    if image.blocks.len() != lens.len() {
        return Err(IoError::BlockCount {
            blocks: image.blocks.len(),
            neurons: lens.len(),
        });
    }
    for (block, (words, &expected)) in image.blocks.iter().zip(lens).enumerate() {
        if words.len() != expected {
            return Err(IoError::BlockLength {
                block,
                expected,
                found: words.len(),
            });
        }
    }
    Ok(())
}

/// Context blocks are not limited by the basal weight-memory capacity.
fn read_unbounded(bytes: &[u8], fmt: crate::fixedpoint::QFormat, lens: &[usize]) -> Result<Vec<Vec<FxSample>>, IoError> {
    let total: usize = lens.iter().sum();
    let flat = WeightImage::from_bytes(bytes, fmt, &vec![1; total])?;
    let mut words = flat.blocks.into_iter().map(|b| b[0]);
    Ok(lens.iter().map(|&n| words.by_ref().take(n).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{infer, kill_cells, quantize_frame};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for mode in [NetMode::Mcc, NetMode::Baseline] {
            let spec = NetworkSpec::shallow_av(mode, 7);
            let net = kill_cells(&build_network(&spec, WeightInit::UniformFanIn).unwrap(), 0.1, 3).unwrap();
            let path = dir.path().join(format!("{mode:?}.json"));
            save_model(&net, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, net);
            let frame = quantize_frame(&[vec![0.5; 22], vec![-0.25; 50]], spec.qformat);
            assert_eq!(infer(&net, &[frame.clone()], 2).unwrap(), infer(&back, &[frame], 2).unwrap());
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::single_stream("3i:2h:1o", NetMode::Mcc, 1).unwrap();
        let net = build_network(&spec, WeightInit::UniformFanIn).unwrap();
        let path = dir.path().join("m.json");
        save_model(&net, &path).unwrap();

        let weights = dir.path().join("m.weights.bin");
        let bytes = fs::read(&weights).unwrap();
        fs::write(&weights, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_model(&path), Err(IoError::Truncated { .. })));
        fs::write(&weights, &bytes).unwrap();

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"neuron_count\": 3", "\"neuron_count\": 4")).unwrap();
        assert!(matches!(load_model(&path), Err(IoError::Schema(_))));
        fs::write(&path, text.replace("\"version\": 1", "\"version\": 1, \"extra\": 0")).unwrap();
        assert!(matches!(load_model(&path), Err(IoError::Schema(_))));
        fs::write(&path, &text).unwrap();
        assert_eq!(load_model(&path).unwrap(), net);
    }
}
