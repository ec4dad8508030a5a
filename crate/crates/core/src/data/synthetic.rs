//! Desk-scale fixture generator: cascades whose arrivals follow a Poisson
//! process with exponentially decaying rate, attached to a random tree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{EventTriplet, RawCascade};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub cascades: usize,
    pub seed: u64,
    /// Size of the shared user pool.
    pub users: usize,
    /// Median of the log-normal initial arrival rate (events per time unit).
    pub median_rate: f64,
    pub rate_sigma: f64,
    /// Range of the per-cascade decay time constant.
    pub decay_min: f64,
    pub decay_max: f64,
    /// Events are generated on `[0, horizon]`.
    pub horizon: f64,
    /// Probability that a new event attaches directly to the root.
    pub root_attach: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            cascades: 100,
            seed: 7,
            users: 400,
            median_rate: 20.0,
            rate_sigma: 0.6,
            decay_min: 0.3,
            decay_max: 3.0,
            horizon: 4.0,
            root_attach: 0.4,
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<RawCascade> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rate_dist = LogNormal::new(cfg.median_rate.ln(), cfg.rate_sigma).expect("valid log-normal");
    let users = cfg.users.max(2);
    (0..cfg.cascades)
        .map(|k| {
            let rate: f64 = rate_dist.sample(&mut rng);
            let decay = rng.random_range(cfg.decay_min..=cfg.decay_max);
            let origin = rng.random_range(0..users);
            let mut members = vec![origin];
            let mut triplets = Vec::new();
            // Thinning against the peak rate.
            let mut t = 0.0;
            loop {
                let u: f64 = rng.random();
                t += -(1.0 - u).ln() / rate;
                if t > cfg.horizon {
                    break;
                }
                if rng.random::<f64>() > (-t / decay).exp() {
                    continue;
                }
                let parent = if rng.random::<f64>() < cfg.root_attach {
                    0
                } else {
                    rng.random_range(0..members.len())
                };
                let parent_user = members[parent];
                let mut child = rng.random_range(0..users);
                while child == parent_user {
                    child = rng.random_range(0..users);
                }
                members.push(child);
                triplets.push(EventTriplet::new(format!("u{parent_user}"), format!("u{child}"), round(t)));
            }
            RawCascade {
                id: format!("s{k}"),
                origin: format!("u{origin}"),
                publish_time: 1_600_000_000 + k as i64 * 60,
                triplets,
            }
        })
        .collect()
}

fn round(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}
