//! Central-difference verification of the analytic loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CascadeInput, Model, ModelConfig};
use crate::encoder::EventSequence;
use crate::error::Result;
use crate::ode::SolverSpec;

pub const GRADCHECK_EPSILON: f64 = 1e-5;

/// Entries whose analytic and numeric derivatives are both at most this
/// large are left out of the maximum.
const NEGLIGIBLE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `tensor[index]` attaining the maximum.
    pub worst: String,
    pub checked: usize,
    pub excluded: usize,
}

/// A root post plus three reshares with random embeddings, sized for
/// `config`.
pub fn toy_input(config: &ModelConfig, seed: u64) -> CascadeInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = vec![0.0, 0.25, 0.5, 0.8];
    let mut vecs = |dim: usize| -> Vec<Vec<f64>> {
        (0..times.len()).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    };
    let cascade_embeds = vecs(config.cascade_dim);
    let global_embeds = vecs(config.global_dim);
    CascadeInput {
        id: format!("toy{seed}"),
        label: 6,
        observation_time: 1.2,
        sequence: EventSequence { times, cascade_embeds, global_embeds },
    }
}

/// Compares the reverse-mode gradient of the total loss on `input` with
/// central differences of step `eps`, entry by entry.
#[allow(clippy::needless_range_loop)]
pub fn gradcheck(model: &Model, input: &CascadeInput, spec: &SolverSpec, eps: f64) -> Result<GradcheckReport> {
    let (_, analytic) = model.loss_and_gradient(input, spec)?;
    let mut probe = model.clone();
    let mut report = GradcheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0, excluded: 0 };
    for k in 0..model.tensors.len() {
        for i in 0..model.tensors[k].len() {
            let orig = model.tensors[k].data[i];
            probe.tensors[k].data[i] = orig + eps;
            let up = probe.forward_values(input, spec)?.loss;
            probe.tensors[k].data[i] = orig - eps;
            let down = probe.forward_values(input, spec)?.loss;
            probe.tensors[k].data[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k][i];
            let scale = a.abs().max(numeric.abs());
            if scale <= NEGLIGIBLE {
                report.excluded += 1;
                continue;
            }
            report.checked += 1;
            let rel = (a - numeric).abs() / scale;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{i}]", model.tensors[k].name);
            }
        }
    }
    Ok(report)
}
