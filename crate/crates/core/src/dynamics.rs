//! Latent flow between events, gated jumps at events, and the compensator
//! integrated as an extra state coordinate.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Linear, Mlp, ParamBuilder};
use crate::ode::{self, SolverSpec, System};
use crate::tpp::IntensityHead;

/// Gated recurrent update over `[s, h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub reset: Linear,
    pub update: Linear,
    pub candidate: Linear,
    pub hidden: usize,
    pub input: usize,
}

impl GruParams {
    pub fn new(builder: &mut ParamBuilder<'_>, input: usize, hidden: usize) -> Self {
        let w = input + hidden;
        GruParams {
            reset: builder.linear("gru.reset", hidden, w, true, 1.0),
            update: builder.linear("gru.update", hidden, w, true, 1.0),
            candidate: builder.linear("gru.candidate", hidden, w, true, 1.0),
            hidden,
            input,
        }
    }
}

/// `(1 - u) ⊙ c + u ⊙ h` with reset gate `r`, update gate `u` and candidate
/// `c = tanh(W_c [s, r ⊙ h] + b_c)`.
pub fn gru_jump(tape: &mut Tape, params: &[Var], gru: &GruParams, h: Var, s: Var) -> Var {
    let sh = tape.concat(&[s, h]);
    let r = gru.reset.forward(tape, params, sh);
    let r = tape.sigmoid(r);
    let u = gru.update.forward(tape, params, sh);
    let u = tape.sigmoid(u);
    let rh = tape.mul(r, h);
    let s_rh = tape.concat(&[s, rh]);
    let c = gru.candidate.forward(tape, params, s_rh);
    let c = tape.tanh(c);
    let keep = tape.mul(u, h);
    let one_minus_u = tape.one_minus(u);
    let fresh = tape.mul(one_minus_u, c);
    tape.add(fresh, keep)
}

/// Vector field `f1` over `[h, t]` and the jump function.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsParams {
    pub f1: Mlp,
    pub gru: GruParams,
    pub hidden: usize,
}

impl DynamicsParams {
    /// `f1` has two hidden layers of width `hidden`; its output layer starts
    /// small so early flows stay gentle.
    pub fn new(builder: &mut ParamBuilder<'_>, hidden: usize, jump_dim: usize) -> Self {
        let f1 = builder.mlp("f1", &[hidden + 1, hidden, hidden, hidden], 0.1, Activation::Tanh);
        let gru = GruParams::new(builder, jump_dim, hidden);
        DynamicsParams { f1, gru, hidden }
    }

    pub fn field(&self, tape: &mut Tape, params: &[Var], t: f64, h: Var) -> Var {
        let tv = tape.constant(&[t]);
        let x = tape.concat(&[h, tv]);
        self.f1.forward(tape, params, x)
    }
}

/// The augmented system `d[h, Λ]/dt = [f1(t, h), softplus(f2(h))]` recorded
/// on a tape.
pub struct NeuralSystem<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a [Var],
    pub dynamics: &'a DynamicsParams,
    pub head: &'a IntensityHead,
}

impl System for NeuralSystem<'_> {
    type State = Var;

    fn derivative(&mut self, t: f64, y: &Var) -> Result<Var> {
        let hdim = self.dynamics.hidden;
        let h = self.tape.slice(*y, 0, hdim);
        let dh = self.dynamics.field(self.tape, self.params, t, h);
        let lam = self.head.forward(self.tape, self.params, h);
        Ok(self.tape.concat(&[dh, lam]))
    }

    fn combine(&mut self, y: &Var, terms: &[(f64, &Var)]) -> Var {
        let mut all = Vec::with_capacity(terms.len() + 1);
        all.push((1.0, *y));
        all.extend(terms.iter().map(|(c, k)| (*c, **k)));
        self.tape.lin_comb(&all)
    }

    fn values<'b>(&'b self, y: &'b Var) -> &'b [f64] {
        self.tape.value(*y)
    }
}

/// Augmented state node `[h, Λ]` at clock `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentState {
    pub state: Var,
    pub t: f64,
}

impl LatentState {
    pub fn h(&self, tape: &mut Tape, hidden: usize) -> Var {
        tape.slice(self.state, 0, hidden)
    }

    pub fn compensator(&self, tape: &mut Tape, hidden: usize) -> Var {
        tape.slice(self.state, hidden, 1)
    }
}

/// Everything downstream needs from one cascade's evolution.
#[derive(Debug, Clone)]
pub struct LatentTrajectory {
    /// Post-jump `[h, Λ]` at each event.
    pub states_at_events: Vec<LatentState>,
    /// `[h, Λ]` after flowing to the observation time.
    pub aligned: LatentState,
    /// `λ*(t_i)` nodes, evaluated before the jump.
    pub intensities: Vec<Var>,
}

impl LatentTrajectory {
    pub fn last_event(&self) -> &LatentState {
        self.states_at_events.last().expect("at least the root event")
    }
}

/// Flows `[h, Λ]` from `t0` to `t1` without jumps.
#[allow(clippy::too_many_arguments)]
pub fn flow(
    tape: &mut Tape,
    params: &[Var],
    dynamics: &DynamicsParams,
    head: &IntensityHead,
    state: Var,
    t0: f64,
    t1: f64,
    spec: &SolverSpec,
) -> Result<Var> {
    let mut sys = NeuralSystem { tape, params, dynamics, head };
    ode::solve(&mut sys, state, t0, t1, spec)
}

/// Options that change what the evolution records.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvolveOptions {
    /// Also record `λ*(t_0)` for the root event.
    pub include_root_intensity: bool,
}

/// Starts from `h = 0, Λ = 0` at time 0, alternates flows and jumps through
/// the events, then flows to `t_s`.
#[allow(clippy::too_many_arguments)]
pub fn evolve_cascade(
    tape: &mut Tape,
    params: &[Var],
    dynamics: &DynamicsParams,
    head: &IntensityHead,
    jumps: &[Var],
    times: &[f64],
    t_s: f64,
    spec: &SolverSpec,
    opts: EvolveOptions,
) -> Result<LatentTrajectory> {
    if jumps.is_empty() || jumps.len() != times.len() {
        return Err(Error::Structure {
            cascade: String::new(),
            msg: format!("{} jump conditions for {} event times", jumps.len(), times.len()),
        });
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] < w[0]) || *times.last().expect("non-empty") > t_s {
        return Err(Error::Structure {
            cascade: String::new(),
            msg: format!("event times must be sorted within [0, {t_s}]"),
        });
    }
    let hdim = dynamics.hidden;
    let mut state = tape.constant(&vec![0.0; hdim + 1]);
    let mut t = 0.0;
    let mut states_at_events = Vec::with_capacity(jumps.len());
    let mut intensities = Vec::with_capacity(jumps.len());
    for (i, (&s, &ti)) in jumps.iter().zip(times).enumerate() {
        state = flow(tape, params, dynamics, head, state, t, ti, spec)?;
        t = ti;
        let h = tape.slice(state, 0, hdim);
        if i > 0 || opts.include_root_intensity {
            intensities.push(head.forward(tape, params, h));
        }
        let lam = tape.slice(state, hdim, 1);
        let h = gru_jump(tape, params, &dynamics.gru, h, s);
        state = tape.concat(&[h, lam]);
        states_at_events.push(LatentState { state, t });
    }
    let aligned = flow(tape, params, dynamics, head, state, t, t_s, spec)?;
    Ok(LatentTrajectory { states_at_events, aligned: LatentState { state: aligned, t: t_s }, intensities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{sigmoid, softplus};
    use crate::nn::{bind, Tensor};
    use crate::ode::Scheme;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(hidden: usize, jump: usize, seed: u64) -> (Vec<Tensor>, DynamicsParams, IntensityHead) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut rng);
        let d = DynamicsParams::new(&mut b, hidden, jump);
        let head = IntensityHead::new(&mut b, hidden);
        (b.tensors, d, head)
    }

    fn randomize(tensors: &mut [Tensor], scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in tensors {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
    }

    fn zero_where(tensors: &mut [Tensor], prefix: &str) {
        for t in tensors.iter_mut().filter(|t| t.name.starts_with(prefix)) {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn tensor<'a>(ts: &'a [Tensor], name: &str) -> &'a [f64] {
        &ts.iter().find(|t| t.name == name).unwrap().data
    }

    /// Scalar-loop GRU written directly from the gate equations.
    fn gru_oracle(ts: &[Tensor], h: &[f64], s: &[f64]) -> Vec<f64> {
        let n = h.len();
        let m = s.len();
        let row = |w: &[f64], i: usize, x: &[f64]| -> f64 { (0..x.len()).map(|j| w[i * x.len() + j] * x[j]).sum() };
        let sh: Vec<f64> = s.iter().chain(h).copied().collect();
        let (wr, br) = (tensor(ts, "gru.reset.weight"), tensor(ts, "gru.reset.bias"));
        let (wu, bu) = (tensor(ts, "gru.update.weight"), tensor(ts, "gru.update.bias"));
        let (wc, bc) = (tensor(ts, "gru.candidate.weight"), tensor(ts, "gru.candidate.bias"));
        let mut out = vec![0.0; n];
        let r: Vec<f64> = (0..n).map(|i| sigmoid(row(wr, i, &sh) + br[i])).collect();
        let mut x = s.to_vec();
        x.extend((0..n).map(|i| r[i] * h[i]));
        assert_eq!(x.len(), m + n);
        for i in 0..n {
            let u = sigmoid(row(wu, i, &sh) + bu[i]);
            let c = (row(wc, i, &x) + bc[i]).tanh();
            out[i] = (1.0 - u) * c + u * h[i];
        }
        out
    }

    fn run_gru(ts: &[Tensor], d: &DynamicsParams, h: &[f64], s: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = bind(&mut tape, ts);
        let hv = tape.constant(h);
        let sv = tape.constant(s);
        let o = gru_jump(&mut tape, &p, &d.gru, hv, sv);
        tape.value(o).to_vec()
    }

    #[test]
    fn zero_gru_halves_state() {
        let (mut ts, d, _) = build(3, 2, 1);
        zero_where(&mut ts, "gru");
        assert_eq!(run_gru(&ts, &d, &[1.0, -2.0, 0.5], &[0.3, 0.7]), vec![0.5, -1.0, 0.25]);
        assert_eq!(run_gru(&ts, &d, &[0.0; 3], &[0.3, 0.7]), vec![0.0; 3]);
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let (mut ts, d, _) = build(4, 3, 2);
        randomize(&mut ts, 0.8, 5);
        let h = [0.2, -0.4, 0.9, 0.0];
        let s = [1.0, -0.5, 0.25];
        let got = run_gru(&ts, &d, &h, &s);
        for (a, b) in got.iter().zip(gru_oracle(&ts, &h, &s)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn gru_output_within_hull(seed in 0u64..500, h in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let (mut ts, d, _) = build(3, 2, seed);
            randomize(&mut ts, 1.5, seed + 1);
            let s = [0.4, -0.9];
            let out = run_gru(&ts, &d, &h, &s);
            // recover the candidate from the oracle with u forced to zero
            let mut no_update = ts.clone();
            for t in no_update.iter_mut().filter(|t| t.name.starts_with("gru.update")) {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
            for t in no_update.iter_mut().filter(|t| t.name == "gru.update.bias") {
                t.data.iter_mut().for_each(|v| *v = -800.0);
            }
            let cand = gru_oracle(&no_update, &h, &s);
            for i in 0..3 {
                let (lo, hi) = (h[i].min(cand[i]), h[i].max(cand[i]));
                proptest::prop_assert!(out[i] >= lo - 1e-12 && out[i] <= hi + 1e-12);
            }
        }
    }

    fn jumps_for(tape: &mut Tape, n: usize, dim: usize, seed: u64) -> Vec<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                tape.constant(&v)
            })
            .collect()
    }

    #[test]
    fn zero_field_holds_state_between_jumps() {
        let (mut ts, d, head) = build(4, 3, 3);
        randomize(&mut ts, 0.5, 4);
        zero_where(&mut ts, "f1.2");
        let mut tape = Tape::new();
        let p = bind(&mut tape, &ts);
        let jumps = jumps_for(&mut tape, 3, 3, 1);
        let spec = SolverSpec::fixed(Scheme::Rk4, 0.05);
        let traj = evolve_cascade(&mut tape, &p, &d, &head, &jumps, &[0.0, 0.3, 0.6], 1.0, &spec, Default::default()).unwrap();
        let last = tape.value(traj.last_event().state)[..4].to_vec();
        assert_eq!(&tape.value(traj.aligned.state)[..4], &last[..]);
        assert_eq!(traj.intensities.len(), 2);
    }

    #[test]
    fn root_only_constant_intensity() {
        let (mut ts, d, head) = build(4, 3, 3);
        randomize(&mut ts, 0.5, 4);
        zero_where(&mut ts, "f1.2");
        zero_where(&mut ts, "intensity.weight");
        let c = 0.37;
        for t in ts.iter_mut().filter(|t| t.name == "intensity.bias") {
            t.data[0] = c;
        }
        let mut tape = Tape::new();
        let p = bind(&mut tape, &ts);
        let jumps = jumps_for(&mut tape, 1, 3, 1);
        let spec = SolverSpec::fixed(Scheme::Rk4, 0.05);
        let traj = evolve_cascade(&mut tape, &p, &d, &head, &jumps, &[0.0], 2.5, &spec, Default::default()).unwrap();
        assert!(traj.intensities.is_empty());
        let lam = tape.value(traj.aligned.state)[4];
        assert!((lam - softplus(c) * 2.5).abs() < 1e-12);
    }

    /// `h` alone on a fine grid, replayed from the stored post-jump states,
    /// then trapezoid quadrature of the intensity.
    fn quadrature_oracle(ts: &[Tensor], d: &DynamicsParams, head: &IntensityHead, starts: &[(f64, Vec<f64>)], t_s: f64, n: usize) -> f64 {
        let field = |t: f64, h: &[f64]| -> Vec<f64> {
            let mut tape = Tape::new();
            let p = bind(&mut tape, ts);
            let hv = tape.constant(h);
            let o = d.field(&mut tape, &p, t, hv);
            tape.value(o).to_vec()
        };
        let lambda = |h: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let p = bind(&mut tape, ts);
            let hv = tape.constant(h);
            let o = head.forward(&mut tape, &p, hv);
            tape.scalar(o)
        };
        let spec = SolverSpec::fixed(Scheme::Rk4, 1e-3);
        let dt = t_s / n as f64;
        let mut total = 0.0;
        let mut prev: Option<f64> = None;
        let (mut t_cur, mut h_cur) = (starts[0].0, starts[0].1.clone());
        for k in 0..=n {
            let t = k as f64 * dt;
            let (t0, h0) = starts.iter().rev().find(|(t0, _)| *t0 <= t).unwrap();
            if *t0 > t_cur {
                t_cur = *t0;
                h_cur = h0.clone();
            }
            h_cur = ode::ode_solve(field, &h_cur, t_cur, t, &spec).unwrap();
            t_cur = t;
            let l = lambda(&h_cur);
            if let Some(pl) = prev {
                total += 0.5 * dt * (pl + l);
            }
            prev = Some(l);
        }
        total
    }

    #[test]
    fn compensator_matches_quadrature() {
        let (mut ts, d, head) = build(4, 3, 8);
        randomize(&mut ts, 0.6, 9);
        let times = [0.0, 0.4, 0.7, 1.1];
        let t_s = 1.5;
        let mut tape = Tape::new();
        let p = bind(&mut tape, &ts);
        let jumps = jumps_for(&mut tape, 4, 3, 2);
        let spec = SolverSpec::adaptive(Scheme::Dopri5, 1e-10, 1e-10);
        let traj = evolve_cascade(&mut tape, &p, &d, &head, &jumps, &times, t_s, &spec, Default::default()).unwrap();
        let lam = tape.value(traj.aligned.state)[4];
        let starts: Vec<(f64, Vec<f64>)> =
            traj.states_at_events.iter().map(|s| (s.t, tape.value(s.state)[..4].to_vec())).collect();
        let q = quadrature_oracle(&ts, &d, &head, &starts, t_s, 10_000);
        assert!(((lam - q) / q).abs() < 1e-4, "{lam} vs {q}");
    }

    #[test]
    fn compensator_non_decreasing() {
        let (mut ts, d, head) = build(4, 3, 8);
        randomize(&mut ts, 0.6, 9);
        let mut tape = Tape::new();
        let p = bind(&mut tape, &ts);
        let jumps = jumps_for(&mut tape, 3, 3, 2);
        let spec = SolverSpec::fixed(Scheme::Rk4, 0.05);
        let traj = evolve_cascade(&mut tape, &p, &d, &head, &jumps, &[0.0, 0.2, 0.9], 1.0, &spec, Default::default()).unwrap();
        let mut prev = 0.0;
        for s in traj.states_at_events.iter().chain([&traj.aligned]) {
            let l = tape.value(s.state)[4];
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn split_flow_agrees() {
        let (mut ts, d, head) = build(4, 3, 8);
        randomize(&mut ts, 0.6, 9);
        let mut tape = Tape::new();
        let p = bind(&mut tape, &ts);
        let y0 = tape.constant(&[0.3, -0.1, 0.5, 0.2, 0.0]);
        let spec = SolverSpec::adaptive(Scheme::Dopri5, 1e-9, 1e-9);
        let direct = flow(&mut tape, &p, &d, &head, y0, 0.2, 1.4, &spec).unwrap();
        let mid = flow(&mut tape, &p, &d, &head, y0, 0.2, 0.77, &spec).unwrap();
        let split = flow(&mut tape, &p, &d, &head, mid, 0.77, 1.4, &spec).unwrap();
        for (a, b) in tape.value(direct).iter().zip(tape.value(split)) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_events_after_observation() {
        let (ts, d, head) = build(2, 2, 1);
        let mut tape = Tape::new();
        let p = bind(&mut tape, &ts);
        let jumps = jumps_for(&mut tape, 2, 2, 1);
        let spec = SolverSpec::fixed(Scheme::Rk4, 0.05);
        assert!(evolve_cascade(&mut tape, &p, &d, &head, &jumps, &[0.0, 2.0], 1.0, &spec, Default::default()).is_err());
    }
}
