//! Cascade records, observation windows, splits, and graphs.

mod graph;
mod parse;
pub mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use graph::{build_cascade_graph, build_global_graph, CascadeGraph, EventNode, GlobalGraph};
pub use parse::{parse_dataset, parse_str, ParseOutcome};

/// One diffusion event: `target` reshared from `source` at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTriplet {
    pub source: String,
    pub target: String,
    pub time: f64,
}

impl EventTriplet {
    pub fn new(source: impl Into<String>, target: impl Into<String>, time: f64) -> Self {
        EventTriplet { source: source.into(), target: target.into(), time }
    }
}

/// A parsed cascade before windowing. Triplets are sorted by time, ties in
/// file order, and times are relative to the root post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCascade {
    pub id: String,
    pub origin: String,
    pub publish_time: i64,
    pub triplets: Vec<EventTriplet>,
}

impl RawCascade {
    /// Serializes back into the one-line text format. Each path is
    /// reconstructed from the parent chain of the event.
    pub fn to_canonical_line(&self) -> String {
        let mut chains: Vec<(String, Vec<String>)> = vec![(self.origin.clone(), vec![self.origin.clone()])];
        let mut paths = vec![format!("{}:0", self.origin)];
        for t in &self.triplets {
            let parent_chain = chains
                .iter()
                .rev()
                .find(|(u, _)| *u == t.source)
                .map(|(_, c)| c.clone())
                .unwrap_or_else(|| vec![t.source.clone()]);
            let mut chain = parent_chain;
            chain.push(t.target.clone());
            paths.push(format!("{}:{}", chain.join("/"), t.time));
            chains.push((t.target.clone(), chain));
        }
        format!("{} {} {} {} {}", self.id, self.origin, self.publish_time, paths.len(), paths.join(" "))
    }
}

/// A cascade observed up to `observation_time` and labeled with the number of
/// events in `(observation_time, prediction_time]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub id: String,
    pub origin: String,
    pub publish_time: i64,
    pub triplets: Vec<EventTriplet>,
    pub observation_time: f64,
    pub prediction_time: f64,
    pub label: u64,
}

impl Cascade {
    /// Number of observed triplets (the root post is not counted).
    pub fn size(&self) -> usize {
        self.triplets.len()
    }
}

pub fn window_and_label(record: &RawCascade, observation_time: f64, prediction_time: f64) -> Result<Cascade> {
    if !(observation_time < prediction_time) {
        return Err(Error::Config(format!(
            "observation time {observation_time} must precede prediction time {prediction_time}"
        )));
    }
    let triplets = record
        .triplets
        .iter()
        .filter(|t| t.time <= observation_time)
        .cloned()
        .collect();
    let label = record
        .triplets
        .iter()
        .filter(|t| t.time > observation_time && t.time <= prediction_time)
        .count() as u64;
    Ok(Cascade {
        id: record.id.clone(),
        origin: record.origin.clone(),
        publish_time: record.publish_time,
        triplets,
        observation_time,
        prediction_time,
        label,
    })
}

pub fn filter_cascades(cascades: Vec<Cascade>, min_size: usize) -> Vec<Cascade> {
    cascades.into_iter().filter(|c| c.size() >= min_size.max(1)).collect()
}

/// Keeps the earliest `max_triplets` events; equal times keep file order.
pub fn truncate_triplets(mut cascade: Cascade, max_triplets: usize) -> Cascade {
    cascade.triplets.sort_by(|a, b| a.time.total_cmp(&b.time));
    cascade.triplets.truncate(max_triplets);
    cascade
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Cascade>,
    pub val: Vec<Cascade>,
    pub test: Vec<Cascade>,
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.70, 0.15, 0.15);

/// Seeded shuffle followed by a floor-based partition; the remainder goes
/// to the training split.
pub fn split_dataset(cascades: Vec<Cascade>, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let n = cascades.len();
    let n_val = (b * n as f64 + 1e-9).floor() as usize;
    let n_test = (c * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut slots: Vec<Option<Cascade>> = cascades.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Cascade> {
        idx.iter().map(|&i| slots[i].take().expect("index used once")).collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(Split { train, val, test })
}

/// Summary figures of a prepared split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub cascades: usize,
    pub avg_popularity: f64,
    pub avg_observed_events: f64,
    pub users: usize,
}

pub fn split_stats(cascades: &[Cascade]) -> SplitStats {
    let n = cascades.len().max(1) as f64;
    let users: std::collections::BTreeSet<&str> = cascades
        .iter()
        .flat_map(|c| {
            std::iter::once(c.origin.as_str()).chain(c.triplets.iter().map(|t| t.target.as_str()))
        })
        .collect();
    SplitStats {
        cascades: cascades.len(),
        avg_popularity: cascades.iter().map(|c| c.label as f64).sum::<f64>() / n,
        avg_observed_events: cascades.iter().map(|c| c.size() as f64).sum::<f64>() / n,
        users: users.len(),
    }
}
