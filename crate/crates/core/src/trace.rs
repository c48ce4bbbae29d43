//! Per-inference activity accounting for the zero-skip energy model.

use serde::{Deserialize, Serialize};

/// Event log of one or more inferences.
///
/// A synapse event is a MAC whose input was nonzero; zero inputs are skipped
/// and only counted in `mac_total`. Bias fetches always count as events.
/// Context-pathway MACs are included in the totals and also tallied apart.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityTrace {
    pub synapse_events: u64,
    pub mac_total: u64,
    pub context_events: u64,
    pub context_mac_total: u64,
    /// Largest number of nonzero basal inputs seen by any neuron of each layer.
    pub per_layer_active_fanin: Vec<u32>,
    /// Potential basal MACs (inputs plus bias) per layer.
    pub per_layer_basal_mac_total: Vec<u64>,
    pub neurons_fired: u64,
    pub neurons_total: u64,
    pub inferences: u64,
}

impl ActivityTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_synapse(&mut self) {
        self.synapse_events += 1;
        self.mac_total += 1;
    }

    pub fn record_skip(&mut self) {
        self.mac_total += 1;
    }

    pub fn record_context(&mut self, nonzero: bool) {
        self.context_mac_total += 1;
        if nonzero {
            self.context_events += 1;
            self.record_synapse();
        } else {
            self.record_skip();
        }
    }

    pub fn record_neuron(&mut self, fired: bool) {
        self.neurons_total += 1;
        if fired {
            self.neurons_fired += 1;
        }
    }

    fn ensure_layer(&mut self, layer: usize) {
        if self.per_layer_active_fanin.len() <= layer {
            self.per_layer_active_fanin.resize(layer + 1, 0);
            self.per_layer_basal_mac_total.resize(layer + 1, 0);
        }
    }

    pub fn observe_layer_fanin(&mut self, layer: usize, active: u32) {
        self.ensure_layer(layer);
        let slot = &mut self.per_layer_active_fanin[layer];
        *slot = (*slot).max(active);
    }

    pub fn add_layer_basal_macs(&mut self, layer: usize, macs: u64) {
        self.ensure_layer(layer);
        self.per_layer_basal_mac_total[layer] += macs;
    }

    /// MACs skipped because their input was zero.
    pub fn zero_skips(&self) -> u64 {
        self.mac_total - self.synapse_events
    }

    /// Fraction of evaluated neurons with a nonzero output.
    pub fn activity_fraction(&self) -> f64 {
        if self.neurons_total == 0 {
            0.0
        } else {
            self.neurons_fired as f64 / self.neurons_total as f64
        }
    }

    /// Associative merge: counters add, per-layer fan-ins take the maximum.
    pub fn merge(&mut self, other: &ActivityTrace) {
        self.synapse_events += other.synapse_events;
        self.mac_total += other.mac_total;
        self.context_events += other.context_events;
        self.context_mac_total += other.context_mac_total;
        self.neurons_fired += other.neurons_fired;
        self.neurons_total += other.neurons_total;
        self.inferences += other.inferences;
        for (layer, &fanin) in other.per_layer_active_fanin.iter().enumerate() {
            self.observe_layer_fanin(layer, fanin);
        }
        for (layer, &macs) in other.per_layer_basal_mac_total.iter().enumerate() {
            self.add_layer_basal_macs(layer, macs);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_and_merge() {
        let mut a = ActivityTrace::new();
        a.record_synapse();
        a.record_skip();
        a.record_context(true);
        a.record_context(false);
        a.record_neuron(true);
        a.record_neuron(false);
        a.observe_layer_fanin(1, 3);
        assert_eq!(a.synapse_events, 2);
        assert_eq!(a.mac_total, 4);
        assert_eq!(a.context_events, 1);
        assert_eq!(a.zero_skips(), 2);
        assert_eq!(a.activity_fraction(), 0.5);
        assert_eq!(a.per_layer_active_fanin, vec![0, 3]);

        let mut b = ActivityTrace::new();
        b.observe_layer_fanin(0, 5);
        b.observe_layer_fanin(1, 2);
        b.record_synapse();
        let mut ab = a.clone();
        ab.merge(&b);
        assert_eq!(ab.per_layer_active_fanin, vec![5, 3]);
        assert_eq!(ab.synapse_events, 3);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab, ba);
    }

    #[test]
    fn empty_trace_has_zero_activity() {
        assert_eq!(ActivityTrace::new().activity_fraction(), 0.0);
    }
}
