//! The full predictor: parameters, forward pass, loss, training, gradient
//! verification, checkpoints and metrics.

mod checkpoint;
mod gradcheck;
mod input;
mod metrics;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{gradcheck, toy_input, GradcheckReport, GRADCHECK_EPSILON};
pub use input::{cascade_embedding, cascade_input, prepare_inputs, CascadeInput};
pub use metrics::{mape, msle, r2, squared_log_error, Metrics, PredictionRecord};
pub use train::{evaluate, train, Adam, EpochLog, Evaluation, TrainConfig, TrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dynamics::{evolve_cascade, flow, DynamicsParams, EvolveOptions, LatentTrajectory};
use crate::encoder::{encode_jump_conditions, EncoderParams};
use crate::error::{Error, Result};
use crate::nn::{bind, Activation, Mlp, ParamBuilder, Tensor};
use crate::ode::SolverSpec;
use crate::tpp::{self, IntensityHead};

/// Widths and ablation switches. Everything here is fixed for the lifetime
/// of a set of parameters and is stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent width `H`.
    pub hidden: usize,
    /// Width of each attention stack.
    pub attention_dim: usize,
    /// Hidden width of the prediction head.
    pub head_hidden: usize,
    /// Cascade embedding width, also the temporal encoding width `M`.
    pub cascade_dim: usize,
    pub global_dim: usize,
    /// Drop the compensator from the head and the likelihood from the loss.
    pub no_tpp: bool,
    /// Predict from the last post-jump state instead of the state at `t_s`.
    pub no_align: bool,
    /// Count the root event in the log-intensity sum.
    pub include_root_intensity: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            attention_dim: 32,
            head_hidden: 32,
            cascade_dim: 100,
            global_dim: 64,
            no_tpp: false,
            no_align: false,
            include_root_intensity: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hidden", self.hidden),
            ("attention_dim", self.attention_dim),
            ("head_hidden", self.head_hidden),
            ("cascade_dim", self.cascade_dim),
            ("global_dim", self.global_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !self.cascade_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "model.cascade_dim must be even to match the temporal encoding, got {}",
                self.cascade_dim
            )));
        }
        Ok(())
    }

    fn head_input(&self) -> usize {
        if self.no_tpp {
            self.hidden
        } else {
            self.hidden + 1
        }
    }

    /// Named widths, compared when loading checkpoints.
    pub fn widths(&self) -> [(&'static str, usize); 6] {
        [
            ("hidden", self.hidden),
            ("attention_dim", self.attention_dim),
            ("head_hidden", self.head_hidden),
            ("cascade_dim", self.cascade_dim),
            ("global_dim", self.global_dim),
            ("head_input", self.head_input()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    encoder: EncoderParams,
    dynamics: DynamicsParams,
    intensity: IntensityHead,
    head: Mlp,
}

fn build_layout(config: &ModelConfig, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Layout) {
    let mut b = ParamBuilder::new(rng);
    let encoder = EncoderParams::new(&mut b, config.cascade_dim, config.global_dim, config.attention_dim);
    let dynamics = DynamicsParams::new(&mut b, config.hidden, encoder.output_dim());
    let intensity = IntensityHead::new(&mut b, config.hidden);
    let head = b.mlp("head", &[config.head_input(), config.head_hidden, 1], 1.0, Activation::Softplus);
    (b.tensors, Layout { encoder, dynamics, intensity, head })
}

/// Tape nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub prediction: Var,
    pub regression: Var,
    pub nll: Option<Var>,
    pub loss: Var,
    pub trajectory: LatentTrajectory,
}

/// Scalar results of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardValues {
    pub prediction: f64,
    pub regression: f64,
    pub nll: Option<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
    layout: Layout,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tensors, layout) = build_layout(&config, &mut rng);
        Ok(Model { config, tensors, layout })
    }

    /// Adopts existing tensors after checking their names and shapes.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (expected, layout) = build_layout(&config, &mut rng);
        if expected.len() != tensors.len() {
            return Err(Error::WidthMismatch {
                what: "tensor count".into(),
                checkpoint: tensors.len(),
                config: expected.len(),
            });
        }
        for (e, t) in expected.iter().zip(&tensors) {
            if e.name != t.name {
                return Err(Error::Serde(format!("expected tensor `{}`, found `{}`", e.name, t.name)));
            }
            if e.shape != t.shape || t.data.len() != e.data.len() {
                return Err(Error::WidthMismatch {
                    what: format!("tensor {} (shape {:?} vs {:?})", t.name, t.shape, e.shape),
                    checkpoint: t.data.len(),
                    config: e.data.len(),
                });
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {}", t.name)));
            }
        }
        Ok(Model { config, tensors, layout })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Names of the tensors feeding the intensity head.
    pub fn intensity_tensors(&self) -> Vec<usize> {
        let a = self.layout.intensity.affine;
        std::iter::once(a.weight).chain(a.bias).collect()
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: &CascadeInput, spec: &SolverSpec) -> Result<ForwardNodes> {
        let cfg = &self.config;
        let l = &self.layout;
        let jumps = encode_jump_conditions(tape, params, &l.encoder, &input.sequence)?;
        let opts = EvolveOptions { include_root_intensity: cfg.include_root_intensity };
        let traj = evolve_cascade(
            tape,
            params,
            &l.dynamics,
            &l.intensity,
            &jumps,
            &input.sequence.times,
            input.observation_time,
            spec,
            opts,
        )
        .map_err(|e| match e {
            Error::Structure { msg, .. } => Error::Structure { cascade: input.id.clone(), msg },
            other => other,
        })?;

        let h = if cfg.no_align {
            traj.last_event().h(tape, cfg.hidden)
        } else {
            traj.aligned.h(tape, cfg.hidden)
        };
        let compensator = traj.aligned.compensator(tape, cfg.hidden);
        let head_in = if cfg.no_tpp { h } else { tape.concat(&[compensator, h]) };
        let out = l.head.forward(tape, params, head_in);
        let prediction = tape.softplus(out);

        // (log2(P+1) - log2(P̂+1))²
        let shifted = tape.affine(prediction, 1.0, 1.0);
        let ln = tape.ln(shifted);
        let target = (input.label as f64 + 1.0).log2();
        let diff = tape.affine(ln, -std::f64::consts::LOG2_E, target);
        let regression = tape.square(diff);

        let (nll, loss) = if cfg.no_tpp {
            (None, regression)
        } else {
            let nll = tpp::nll_on_tape(tape, &traj.intensities, compensator);
            (Some(nll), tape.add(regression, nll))
        };
        let lv = tape.scalar(loss);
        if !lv.is_finite() {
            return Err(Error::NonFiniteLoss {
                cascade: input.id.clone(),
                detail: format!(
                    "loss {lv}, prediction {}, compensator {}, {} events",
                    tape.scalar(prediction),
                    tape.scalar(compensator),
                    input.sequence.len()
                ),
            });
        }
        Ok(ForwardNodes { prediction, regression, nll, loss, trajectory: traj })
    }

    pub fn forward_values(&self, input: &CascadeInput, spec: &SolverSpec) -> Result<ForwardValues> {
        let mut tape = Tape::new();
        let params = bind(&mut tape, &self.tensors);
        let f = self.forward(&mut tape, &params, input, spec)?;
        Ok(ForwardValues {
            prediction: tape.scalar(f.prediction),
            regression: tape.scalar(f.regression),
            nll: f.nll.map(|n| tape.scalar(n)),
            loss: tape.scalar(f.loss),
        })
    }

    pub fn predict(&self, input: &CascadeInput, spec: &SolverSpec) -> Result<f64> {
        Ok(self.forward_values(input, spec)?.prediction)
    }

    /// Post-jump `[h, Λ]` at the last event, with its time.
    pub fn last_event_state(&self, input: &CascadeInput, spec: &SolverSpec) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let params = bind(&mut tape, &self.tensors);
        let f = self.forward(&mut tape, &params, input, spec)?;
        let last = f.trajectory.last_event();
        Ok((last.t, tape.value(last.state).to_vec()))
    }

    /// Flows `[h, Λ]` from `t0` to `t1` under this model's dynamics.
    pub fn flow_state(&self, state: &[f64], t0: f64, t1: f64, spec: &SolverSpec) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = bind(&mut tape, &self.tensors);
        let y = tape.constant(state);
        let out = flow(&mut tape, &params, &self.layout.dynamics, &self.layout.intensity, y, t0, t1, spec)?;
        Ok(tape.value(out).to_vec())
    }

    /// Loss and its gradient with respect to every tensor, in tensor order.
    pub fn loss_and_gradient(&self, input: &CascadeInput, spec: &SolverSpec) -> Result<(ForwardValues, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let params = bind(&mut tape, &self.tensors);
        let f = self.forward(&mut tape, &params, input, spec)?;
        let grads = tape.backward(f.loss);
        let g: Vec<Vec<f64>> = params.iter().zip(&self.tensors).map(|(&p, t)| grads.dense(p, t.len())).collect();
        if let Some(t) = g.iter().zip(&self.tensors).find(|(g, _)| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss {
                cascade: input.id.clone(),
                detail: format!("non-finite gradient for {}", t.1.name),
            });
        }
        let values = ForwardValues {
            prediction: tape.scalar(f.prediction),
            regression: tape.scalar(f.regression),
            nll: f.nll.map(|n| tape.scalar(n)),
            loss: tape.scalar(f.loss),
        };
        Ok((values, g))
    }
}

/// `(log2(P+1) - log2(P̂+1))² + nll`, the likelihood term omitted under
/// `no_tpp`.
pub fn loss(label: u64, predicted: f64, intensities: &[f64], compensator: f64, no_tpp: bool) -> Result<f64> {
    let reg = squared_log_error(label as f64, predicted);
    if no_tpp {
        Ok(reg)
    } else {
        Ok(reg + tpp::nll(intensities, compensator)?)
    }
}
