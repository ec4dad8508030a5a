//! Explicit Runge–Kutta integrators.
//!
//! A single tableau-driven stepper serves every scheme. It is generic over
//! [`System`], so the same code integrates plain `Vec<f64>` states and states
//! living on an autodiff [`Tape`](crate::autodiff::Tape).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Midpoint,
    Rk4,
    Bosh3,
    Dopri5,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Euler,
        Scheme::Midpoint,
        Scheme::Rk4,
        Scheme::Bosh3,
        Scheme::Dopri5,
    ];

    pub fn is_adaptive(self) -> bool {
        matches!(self, Scheme::Bosh3 | Scheme::Dopri5)
    }

    /// Order of the propagated solution.
    pub fn order(self) -> u32 {
        match self {
            Scheme::Euler => 1,
            Scheme::Midpoint => 2,
            Scheme::Rk4 => 4,
            Scheme::Bosh3 => 3,
            Scheme::Dopri5 => 5,
        }
    }

    fn tableau(self) -> &'static Tableau {
        match self {
            Scheme::Euler => &EULER,
            Scheme::Midpoint => &MIDPOINT,
            Scheme::Rk4 => &RK4,
            Scheme::Bosh3 => &BOSH3,
            Scheme::Dopri5 => &DOPRI5,
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "midpoint" => Ok(Scheme::Midpoint),
            "rk4" => Ok(Scheme::Rk4),
            "bosh3" => Ok(Scheme::Bosh3),
            "dopri5" => Ok(Scheme::Dopri5),
            other => Err(Error::Config(format!("unknown solver scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    100_000
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec::fixed(Scheme::Rk4, 0.05)
    }
}

impl SolverSpec {
    pub fn fixed(scheme: Scheme, step: f64) -> Self {
        SolverSpec { scheme, fixed_step: Some(step), rtol: None, atol: None, max_steps: default_max_steps() }
    }

    pub fn adaptive(scheme: Scheme, rtol: f64, atol: f64) -> Self {
        SolverSpec { scheme, fixed_step: None, rtol: Some(rtol), atol: Some(atol), max_steps: default_max_steps() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: Option<f64>| v.is_some_and(|x| x > 0.0 && x.is_finite());
        if self.scheme.is_adaptive() {
            if !positive(self.rtol) || !positive(self.atol) {
                return Err(Error::Config(format!(
                    "adaptive scheme {:?} requires positive rtol and atol",
                    self.scheme
                )));
            }
        } else if !positive(self.fixed_step) {
            return Err(Error::Config(format!(
                "fixed-step scheme {:?} requires a positive fixed_step",
                self.scheme
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Per-component tolerance scale used by the checkpoint-insensitivity
    /// checks; for fixed-step schemes this is the local truncation scale
    /// `step^order`.
    pub fn tolerance(&self, magnitude: f64) -> f64 {
        match (self.rtol, self.atol) {
            (Some(r), Some(a)) if self.scheme.is_adaptive() => a + r * magnitude,
            _ => self.fixed_step.unwrap_or(1.0).powi(self.scheme.order() as i32) * (1.0 + magnitude),
        }
    }
}

struct Tableau {
    c: &'static [f64],
    /// Lower-triangular stage coefficients, row `i` has `i` entries.
    a: &'static [&'static [f64]],
    b: &'static [f64],
    /// Embedded lower-order weights for adaptive schemes.
    b_err: Option<&'static [f64]>,
    /// Order of the embedded estimate, used in the step-size controller.
    err_order: u32,
}

static EULER: Tableau = Tableau { c: &[0.0], a: &[&[]], b: &[1.0], b_err: None, err_order: 0 };

static MIDPOINT: Tableau = Tableau {
    c: &[0.0, 0.5],
    a: &[&[], &[0.5]],
    b: &[0.0, 1.0],
    b_err: None,
    err_order: 0,
};

static RK4: Tableau = Tableau {
    c: &[0.0, 0.5, 0.5, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    b_err: None,
    err_order: 0,
};

static BOSH3: Tableau = Tableau {
    c: &[0.0, 0.5, 0.75, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.75], &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]],
    b: &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0],
    b_err: Some(&[7.0 / 24.0, 0.25, 1.0 / 3.0, 0.125]),
    err_order: 2,
};

static DOPRI5: Tableau = Tableau {
    c: &[0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0],
    a: &[
        &[],
        &[0.2],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
        &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ],
    b: &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0],
    b_err: Some(&[
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ]),
    err_order: 4,
};

/// A first-order system `dy/dt = f(t, y)` over some state representation.
pub trait System {
    type State: Clone;

    fn derivative(&mut self, t: f64, y: &Self::State) -> Result<Self::State>;

    /// `y + Σ c_k k_k`
    fn combine(&mut self, y: &Self::State, terms: &[(f64, &Self::State)]) -> Self::State;

    fn values<'a>(&'a self, y: &'a Self::State) -> &'a [f64];
}

/// Adapter turning a closure over slices into a [`System`].
pub struct FnSystem<F>(pub F);

impl<F> System for FnSystem<F>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    type State = Vec<f64>;

    fn derivative(&mut self, t: f64, y: &Vec<f64>) -> Result<Vec<f64>> {
        Ok((self.0)(t, y))
    }

    fn combine(&mut self, y: &Vec<f64>, terms: &[(f64, &Vec<f64>)]) -> Vec<f64> {
        let mut out = y.clone();
        for (c, k) in terms {
            for (o, v) in out.iter_mut().zip(k.iter()) {
                *o += c * v;
            }
        }
        out
    }

    fn values<'a>(&'a self, y: &'a Vec<f64>) -> &'a [f64] {
        y
    }
}

fn eval_checked<S: System>(sys: &mut S, t: f64, y: &S::State) -> Result<S::State> {
    let k = sys.derivative(t, y)?;
    if let Some(bad) = sys.values(&k).iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("derivative component {bad} at t = {t}")));
    }
    Ok(k)
}

/// Propagated state, embedded error estimate, and stage derivatives.
type StepResult<S> = (<S as System>::State, Option<Vec<f64>>, Vec<<S as System>::State>);

/// One explicit RK step. Returns the propagated state and, for embedded
/// pairs, the error vector `y_high - y_low`.
fn rk_step<S: System>(
    sys: &mut S,
    tab: &Tableau,
    t: f64,
    y: &S::State,
    h: f64,
    k0: Option<S::State>,
) -> Result<StepResult<S>> {
    let stages = tab.c.len();
    let mut ks: Vec<S::State> = Vec::with_capacity(stages);
    for i in 0..stages {
        if i == 0 {
            match &k0 {
                Some(k) => ks.push(k.clone()),
                None => ks.push(eval_checked(sys, t, y)?),
            }
            continue;
        }
        let terms: Vec<(f64, &S::State)> = tab.a[i]
            .iter()
            .zip(&ks)
            .filter(|(a, _)| **a != 0.0)
            .map(|(a, k)| (h * a, k))
            .collect();
        let yi = if terms.is_empty() { y.clone() } else { sys.combine(y, &terms) };
        ks.push(eval_checked(sys, t + tab.c[i] * h, &yi)?);
    }
    let terms: Vec<(f64, &S::State)> = tab
        .b
        .iter()
        .zip(&ks)
        .filter(|(b, _)| **b != 0.0)
        .map(|(b, k)| (h * b, k))
        .collect();
    let y_next = sys.combine(y, &terms);

    let err = tab.b_err.map(|be| {
        let n = sys.values(y).len();
        let mut e = vec![0.0; n];
        for ((b, bh), k) in tab.b.iter().zip(be).zip(&ks) {
            let d = h * (b - bh);
            if d != 0.0 {
                for (o, v) in e.iter_mut().zip(sys.values(k)) {
                    *o += d * v;
                }
            }
        }
        e
    });
    Ok((y_next, err, ks))
}

fn rms_norm(v: &[f64], scale: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let s: f64 = v.iter().zip(scale).map(|(x, s)| (x / s) * (x / s)).sum();
    (s / v.len() as f64).sqrt()
}

/// Integrates `sys` from `t0` to `t1`. A zero-length span returns `y0`
/// unchanged.
pub fn solve<S: System>(sys: &mut S, y0: S::State, t0: f64, t1: f64, spec: &SolverSpec) -> Result<S::State> {
    spec.validate()?;
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(Error::Config(format!("invalid integration span [{t0}, {t1}]")));
    }
    if t1 == t0 {
        return Ok(y0);
    }
    if spec.scheme.is_adaptive() {
        solve_adaptive(sys, y0, t0, t1, spec)
    } else {
        solve_fixed(sys, y0, t0, t1, spec)
    }
}

fn solve_fixed<S: System>(sys: &mut S, y0: S::State, t0: f64, t1: f64, spec: &SolverSpec) -> Result<S::State> {
    let step = spec.fixed_step.expect("validated");
    let span = t1 - t0;
    // Uniform grid with the requested step as an upper bound; the tiny slack
    // absorbs floating-point noise in spans that are exact multiples.
    let n = ((span / step) - 1e-9).ceil().max(1.0) as usize;
    if n > spec.max_steps {
        return Err(Error::Divergence { max_steps: spec.max_steps, t0, t1 });
    }
    let h = span / n as f64;
    let tab = spec.scheme.tableau();
    let mut y = y0;
    for i in 0..n {
        let t = t0 + i as f64 * h;
        y = rk_step(sys, tab, t, &y, h, None)?.0;
    }
    Ok(y)
}

fn initial_step<S: System>(
    sys: &mut S,
    t0: f64,
    y0: &S::State,
    f0: &S::State,
    order: u32,
    rtol: f64,
    atol: f64,
) -> Result<f64> {
    let yv = sys.values(y0).to_vec();
    let fv = sys.values(f0).to_vec();
    let scale: Vec<f64> = yv.iter().map(|y| atol + rtol * y.abs()).collect();
    let d0 = rms_norm(&yv, &scale);
    let d1 = rms_norm(&fv, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = sys.combine(y0, &[(h0, f0)]);
    let f1 = eval_checked(sys, t0 + h0, &y1)?;
    let df: Vec<f64> = sys.values(&f1).iter().zip(&fv).map(|(a, b)| a - b).collect();
    let d2 = rms_norm(&df, &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / (order as f64 + 1.0))
    };
    Ok((100.0 * h0).min(h1))
}

fn solve_adaptive<S: System>(sys: &mut S, y0: S::State, t0: f64, t1: f64, spec: &SolverSpec) -> Result<S::State> {
    const SAFETY: f64 = 0.9;
    const MIN_FACTOR: f64 = 0.2;
    const MAX_FACTOR: f64 = 5.0;

    let tab = spec.scheme.tableau();
    let rtol = spec.rtol.expect("validated");
    let atol = spec.atol.expect("validated");
    let exponent = -1.0 / (tab.err_order as f64 + 1.0);

    let mut t = t0;
    let mut y = y0;
    let mut k0 = eval_checked(sys, t, &y)?;
    let mut h = initial_step(sys, t0, &y, &k0, spec.scheme.order(), rtol, atol)?.min(t1 - t0);
    let mut attempts = 0usize;

    while t < t1 {
        attempts += 1;
        if attempts > spec.max_steps {
            return Err(Error::Divergence { max_steps: spec.max_steps, t0, t1 });
        }
        // Land exactly on t1; also absorb a sliver that would otherwise
        // force a degenerate final step.
        let last = t + h >= t1 || (t1 - (t + h)) < 1e-12 * (1.0 + t1.abs());
        let h_try = if last { t1 - t } else { h };

        let (y_next, err, _) = rk_step(sys, tab, t, &y, h_try, Some(k0.clone()))?;
        let err = err.expect("adaptive tableau has an error estimate");
        let scale: Vec<f64> = sys
            .values(&y)
            .iter()
            .zip(sys.values(&y_next))
            .map(|(a, b)| atol + rtol * a.abs().max(b.abs()))
            .collect();
        let err_norm = rms_norm(&err, &scale);
        if !err_norm.is_finite() {
            return Err(Error::NonFinite(format!("error estimate at t = {t}")));
        }

        if err_norm <= 1.0 {
            t = if last { t1 } else { t + h_try };
            y = y_next;
            if t < t1 {
                k0 = eval_checked(sys, t, &y)?;
            }
            let factor = if err_norm == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err_norm.powf(exponent)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            h = h_try * factor;
        } else {
            let factor = (SAFETY * err_norm.powf(exponent)).clamp(MIN_FACTOR, 1.0);
            h = h_try * factor;
        }
        if h <= f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::NonFinite(format!("step size underflow at t = {t}")));
        }
    }
    Ok(y)
}

/// Convenience wrapper for plain vector fields.
pub fn ode_solve<F>(field: F, y0: &[f64], t0: f64, t1: f64, spec: &SolverSpec) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    solve(&mut FnSystem(field), y0.to_vec(), t0, t1, spec)
}

/// A smooth initial-value problem with a known solution, used to measure
/// empirical convergence order.
pub struct TestProblem {
    pub field: fn(f64, &[f64]) -> Vec<f64>,
    pub y0: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub exact: fn(f64) -> Vec<f64>,
}

impl TestProblem {
    /// `dh/dt = -h`, `h(0) = 1` on `[0, 1]`.
    pub fn exponential_decay() -> Self {
        TestProblem {
            field: |_, y| y.iter().map(|v| -v).collect(),
            y0: vec![1.0],
            t0: 0.0,
            t1: 1.0,
            exact: |t| vec![(-t).exp()],
        }
    }
}

pub const CONVERGENCE_STEPS: [f64; 3] = [0.1, 0.05, 0.025];

/// Empirical order of a scheme run at fixed steps `{0.1, 0.05, 0.025}`:
/// least-squares slope of `log(error)` against `log(step)`.
pub fn convergence_order(scheme: Scheme, problem: &TestProblem) -> Result<f64> {
    let exact = (problem.exact)(problem.t1);
    let mut pts = Vec::with_capacity(CONVERGENCE_STEPS.len());
    for &step in &CONVERGENCE_STEPS {
        // Adaptive pairs are driven at a fixed step through their
        // propagated tableau.
        let spec = SolverSpec::fixed(scheme, step);
        let y = solve_fixed(&mut FnSystem(problem.field), problem.y0.clone(), problem.t0, problem.t1, &spec)?;
        let err = y.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pts.push((step.ln(), err.max(f64::MIN_POSITIVE).ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_identity() {
        for scheme in Scheme::ALL {
            let spec = if scheme.is_adaptive() {
                SolverSpec::adaptive(scheme, 1e-6, 1e-8)
            } else {
                SolverSpec::fixed(scheme, 0.1)
            };
            let y = ode_solve(|_, y| vec![0.0; y.len()], &[1.5, -2.0], 0.0, 3.7, &spec).unwrap();
            assert_eq!(y, vec![1.5, -2.0], "{scheme:?}");
        }
    }

    #[test]
    fn zero_span_returns_input_exactly() {
        let spec = SolverSpec::adaptive(Scheme::Dopri5, 1e-8, 1e-8);
        let y0 = [0.1234567890123, 9.87];
        let y = ode_solve(|_, y| y.iter().map(|v| v.sin() * 1e3).collect(), &y0, 2.5, 2.5, &spec).unwrap();
        assert_eq!(y, y0.to_vec());
    }

    #[test]
    fn dopri5_exponential_decay() {
        let spec = SolverSpec::adaptive(Scheme::Dopri5, 1e-8, 1e-8);
        let y = ode_solve(|_, y| vec![-y[0]], &[1.0], 0.0, 1.0, &spec).unwrap();
        assert!((y[0] - 0.3678794412).abs() < 1e-6, "{}", y[0]);
        assert!((y[0] - (-1.0f64).exp()).abs() < 100.0 * (1e-8 + 1e-8 * 0.37));
    }

    #[test]
    fn bosh3_exponential_decay() {
        let spec = SolverSpec::adaptive(Scheme::Bosh3, 1e-7, 1e-9);
        let y = ode_solve(|_, y| vec![-y[0]], &[1.0], 0.0, 2.0, &spec).unwrap();
        assert!((y[0] - (-2.0f64).exp()).abs() < 100.0 * (1e-9 + 1e-7 * 0.14));
    }

    #[test]
    fn rk4_integrates_linear_forcing_exactly() {
        let spec = SolverSpec::fixed(Scheme::Rk4, 0.1);
        let y = ode_solve(|t, _| vec![t], &[0.0], 0.0, 2.0, &spec).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn convergence_orders() {
        let p = TestProblem::exponential_decay();
        let e = convergence_order(Scheme::Euler, &p).unwrap();
        let m = convergence_order(Scheme::Midpoint, &p).unwrap();
        let r = convergence_order(Scheme::Rk4, &p).unwrap();
        assert!((0.8..=1.2).contains(&e), "euler {e}");
        assert!((1.7..=2.3).contains(&m), "midpoint {m}");
        assert!((3.5..=4.5).contains(&r), "rk4 {r}");
    }

    #[test]
    fn step_budget_exhaustion_is_divergence() {
        let mut spec = SolverSpec::fixed(Scheme::Euler, 0.001);
        spec.max_steps = 10;
        let err = ode_solve(|_, y| vec![-y[0]], &[1.0], 0.0, 1.0, &spec).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));

        let mut spec = SolverSpec::adaptive(Scheme::Dopri5, 1e-12, 1e-12);
        spec.max_steps = 3;
        let err = ode_solve(|t, _| vec![(50.0 * t).sin()], &[0.0], 0.0, 10.0, &spec).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn non_finite_derivative_is_rejected() {
        let spec = SolverSpec::fixed(Scheme::Rk4, 0.1);
        let err = ode_solve(|_, _| vec![f64::NAN], &[0.0], 0.0, 1.0, &spec).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn spec_validation() {
        let mut s = SolverSpec::fixed(Scheme::Rk4, 0.1);
        s.fixed_step = None;
        assert!(s.validate().is_err());
        let mut s = SolverSpec::adaptive(Scheme::Dopri5, 1e-6, 1e-6);
        s.rtol = None;
        assert!(s.validate().is_err());
        assert!(ode_solve(|_, y| y.to_vec(), &[1.0], 1.0, 0.0, &SolverSpec::default()).is_err());
    }

    #[test]
    fn checkpoint_insensitivity_dopri5() {
        let spec = SolverSpec::adaptive(Scheme::Dopri5, 1e-9, 1e-9);
        let f = |t: f64, y: &[f64]| vec![y[1], -y[0] + 0.1 * t.cos()];
        let direct = ode_solve(f, &[1.0, 0.0], 0.0, 3.0, &spec).unwrap();
        let mid = ode_solve(f, &[1.0, 0.0], 0.0, 1.3, &spec).unwrap();
        let split = ode_solve(f, &mid, 1.3, 3.0, &spec).unwrap();
        for (a, b) in direct.iter().zip(&split) {
            assert!((a - b).abs() < 10.0 * spec.tolerance(a.abs()), "{a} vs {b}");
        }
    }
}
