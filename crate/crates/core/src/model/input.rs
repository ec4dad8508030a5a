//! Turning windowed cascades into model inputs.

use serde::{Deserialize, Serialize};

use crate::data::{build_cascade_graph, Cascade};
use crate::embed::{graphwave_embed, EmbeddingTable, WaveletConfig};
use crate::encoder::EventSequence;
use crate::error::{Error, Result};
use crate::par::{self, Jobs};

/// One cascade ready for the forward pass, in model time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeInput {
    pub id: String,
    pub label: u64,
    pub observation_time: f64,
    pub sequence: EventSequence,
}

/// Heat-wavelet embedding of a cascade's graph, keyed by event node.
pub fn cascade_embedding(cascade: &Cascade, wavelet: &WaveletConfig) -> Result<EmbeddingTable> {
    let graph = build_cascade_graph(cascade)?;
    graphwave_embed(&graph, wavelet)
}

/// Assembles the event sequence. Every event node must be in
/// `cascade_table`; users absent from `global` get zero vectors.
pub fn cascade_input(
    cascade: &Cascade,
    cascade_table: &EmbeddingTable,
    global: &EmbeddingTable,
    time_scale: f64,
) -> Result<CascadeInput> {
    if !(time_scale > 0.0 && time_scale.is_finite()) {
        return Err(Error::Config(format!("time_scale must be positive, got {time_scale}")));
    }
    let graph = build_cascade_graph(cascade)?;
    let mut times = Vec::with_capacity(graph.len());
    let mut cascade_embeds = Vec::with_capacity(graph.len());
    for node in &graph.nodes {
        times.push(node.time / time_scale);
        cascade_embeds.push(cascade_table.require(&node.key())?.to_vec());
    }
    let (global_embeds, _missing) = global.lookup_or_zero(graph.nodes.iter().map(|n| n.user.as_str()));
    let sequence = EventSequence { times, cascade_embeds, global_embeds };
    sequence.validate()?;
    Ok(CascadeInput {
        id: cascade.id.clone(),
        label: cascade.label,
        observation_time: cascade.observation_time / time_scale,
        sequence,
    })
}

/// Embeds and assembles every cascade, in parallel across cascades.
pub fn prepare_inputs(
    cascades: &[Cascade],
    global: &EmbeddingTable,
    wavelet: &WaveletConfig,
    time_scale: f64,
    jobs: Jobs,
) -> Result<Vec<CascadeInput>> {
    par::try_map(cascades, jobs, |c| {
        let table = cascade_embedding(c, wavelet)?;
        cascade_input(c, &table, global, time_scale)
    })
}
