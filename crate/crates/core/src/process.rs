//! Sequential reinforcing decisions as a generalized Pólya urn.
//!
//! The probability of a high-risk classification at decision `i` is a weighted
//! average of the previous probability and the previous outcome,
//!
//! ```text
//! p_i = p_{i-1} * gamma_i + X_{i-1} * (1 - gamma_i),   gamma_i = n_{i-2} / (n_{i-2} + k)
//! ```
//!
//! where `n_j = b0 + r0 + j * k` is the urn mass after `j` draws. With
//! `b0 = r0 = k = 1` this is `gamma_i = i / (i + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Longest outcome sequence [`sequence_probability`] will enumerate.
pub const ENUMERATION_CAP: usize = 25;

/// Outcome of one assessment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum DecisionOutcome {
    Low = 0,
    High = 1,
}

impl DecisionOutcome {
    #[inline]
    pub fn is_high(self) -> bool {
        self == DecisionOutcome::High
    }

    #[inline]
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

impl From<bool> for DecisionOutcome {
    fn from(high: bool) -> Self {
        if high {
            DecisionOutcome::High
        } else {
            DecisionOutcome::Low
        }
    }
}

impl From<DecisionOutcome> for u8 {
    fn from(o: DecisionOutcome) -> u8 {
        o as u8
    }
}

impl TryFrom<u8> for DecisionOutcome {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(DecisionOutcome::Low),
            1 => Ok(DecisionOutcome::High),
            _ => Err(Error::param("outcome", format!("{v} is not 0 or 1"))),
        }
    }
}

/// Initial urn masses and the reinforcement added per decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrnParams {
    pub b0: f64,
    pub r0: f64,
    pub k: f64,
}

impl Default for UrnParams {
    fn default() -> Self {
        Self {
            b0: 1.0,
            r0: 1.0,
            k: 1.0,
        }
    }
}

fn positive_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}

impl UrnParams {
    pub fn new(b0: f64, r0: f64, k: f64) -> Result<Self> {
        let urn = Self { b0, r0, k };
        urn.validate()?;
        Ok(urn)
    }

    pub fn validate(&self) -> Result<()> {
        positive_finite("b0", self.b0)?;
        positive_finite("r0", self.r0)?;
        positive_finite("k", self.k)
    }

    /// `p_1 = b0 / (b0 + r0)`.
    pub fn initial_p(&self) -> f64 {
        self.b0 / (self.b0 + self.r0)
    }

    /// Urn mass `n_j` after `j` draws.
    #[inline]
    pub fn mass_after(&self, draws: u64) -> f64 {
        self.b0 + self.r0 + self.k * draws as f64
    }
}

/// Weight `gamma_i` on the prior probability when forming `p_i`, for `i >= 2`.
pub fn gamma_at(urn: &UrnParams, i: u64) -> Result<f64> {
    if i < 2 {
        return Err(Error::param("i", format!("gamma is defined for i >= 2, got {i}")));
    }
    let n = urn.mass_after(i - 2);
    Ok(n / (n + urn.k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampPolicy {
    #[default]
    ClampUnitInterval,
    Unclamped,
}

/// Per-step bias added for members of the disadvantaged group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasSpec {
    pub rho: f64,
    /// `true` for the disadvantaged group (R = 1).
    pub group_indicator: bool,
    pub clamp: ClampPolicy,
}

impl BiasSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(rho: f64, group_indicator: bool, clamp: ClampPolicy) -> Result<Self> {
        let b = Self {
            rho,
            group_indicator,
            clamp,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(Error::param("rho", format!("must lie in [0, 1), got {}", self.rho)));
        }
        Ok(())
    }

    pub fn is_unbiased(&self) -> bool {
        self.rho == 0.0
    }
}

/// State just before decision `step_index` is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessState {
    pub step_index: u64,
    pub p: f64,
    pub successes: u64,
    /// `n_{i-1} = b0 + r0 + k * (step_index - 1)`.
    pub total_mass: f64,
    /// Set once a biased update ran with `1 - gamma - rho < 0`.
    pub out_of_regime: bool,
}

impl ProcessState {
    pub fn initial(urn: &UrnParams) -> Self {
        Self {
            step_index: 1,
            p: urn.initial_p(),
            successes: 0,
            total_mass: urn.b0 + urn.r0,
            out_of_regime: false,
        }
    }

    #[inline]
    fn advance(&self, outcome: DecisionOutcome, p: f64, k: f64, out_of_regime: bool) -> Self {
        Self {
            step_index: self.step_index + 1,
            p,
            successes: self.successes + outcome.is_high() as u64,
            total_mass: self.total_mass + k,
            out_of_regime: self.out_of_regime || out_of_regime,
        }
    }

    #[inline]
    fn next_gamma(&self, urn: &UrnParams) -> f64 {
        self.total_mass / (self.total_mass + urn.k)
    }
}

/// Unbiased update after observing `outcome` at the current decision.
#[inline]
pub fn step(state: &ProcessState, outcome: DecisionOutcome, urn: &UrnParams) -> ProcessState {
    let g = state.next_gamma(urn);
    let p = state.p * g + outcome.as_f64() * (1.0 - g);
    state.advance(outcome, p, urn.k, false)
}

/// Biased update `p * gamma + R * rho + X * (1 - gamma - rho)`.
///
/// Evaluated as `p * gamma + X * (1 - gamma) + rho * (R - X)`, which makes
/// `rho = 0` and `R = X = 1` reproduce [`step`] bit for bit.
#[inline]
pub fn biased_step(
    state: &ProcessState,
    outcome: DecisionOutcome,
    urn: &UrnParams,
    bias: &BiasSpec,
) -> ProcessState {
    let g = state.next_gamma(urn);
    let x = outcome.as_f64();
    let r = if bias.group_indicator { 1.0 } else { 0.0 };
    let mut p = state.p * g + x * (1.0 - g) + bias.rho * (r - x);
    let out_of_regime = 1.0 - g - bias.rho < 0.0;
    if bias.clamp == ClampPolicy::ClampUnitInterval {
        p = p.clamp(0.0, 1.0);
    }
    state.advance(outcome, p, urn.k, out_of_regime)
}

/// Bernoulli draw: high iff `u < p` for the next unit double `u`.
pub fn sample_outcome(p: f64, rng: &mut SplitMix64) -> Result<DecisionOutcome> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    Ok((rng.next_f64() < p).into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub urn: UrnParams,
    pub bias: BiasSpec,
    pub n_steps: u64,
    pub seed: u64,
}

impl TrajectoryParams {
    pub fn unbiased(urn: UrnParams, n_steps: u64, seed: u64) -> Self {
        Self {
            urn,
            bias: BiasSpec::none(),
            n_steps,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.urn.validate()?;
        self.bias.validate()?;
        if self.n_steps == 0 {
            return Err(Error::param("n_steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// One simulated sample path: `p_1..p_N` and `X_1..X_{N-1}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub probabilities: Vec<f64>,
    pub outcomes: Vec<DecisionOutcome>,
}

impl Trajectory {
    pub fn endpoint(&self) -> f64 {
        *self.probabilities.last().expect("trajectory has at least p_1")
    }

    pub fn successes(&self) -> u64 {
        self.outcomes.iter().filter(|o| o.is_high()).count() as u64
    }
}

/// Runs one path and reports every state to `observe`, starting with the
/// initial state. Returns the final state.
///
/// In `Unclamped` mode `p` may leave `[0, 1]`; the draw then uses `p` clamped
/// to the unit interval while the recorded state keeps the raw value.
#[inline]
pub fn run_path<F>(params: &TrajectoryParams, mut observe: F) -> ProcessState
where
    F: FnMut(&ProcessState, Option<DecisionOutcome>),
{
    let mut rng = SplitMix64::new(params.seed);
    let mut state = ProcessState::initial(&params.urn);
    observe(&state, None);
    let biased = !params.bias.is_unbiased();
    for _ in 1..params.n_steps {
        let outcome: DecisionOutcome = (rng.next_f64() < state.p.clamp(0.0, 1.0)).into();
        state = if biased {
            biased_step(&state, outcome, &params.urn, &params.bias)
        } else {
            step(&state, outcome, &params.urn)
        };
        observe(&state, Some(outcome));
    }
    state
}

pub fn simulate_trajectory(params: &TrajectoryParams) -> Result<Trajectory> {
    params.validate()?;
    let n = params.n_steps as usize;
    let mut traj = Trajectory {
        probabilities: Vec::with_capacity(n),
        outcomes: Vec::with_capacity(n - 1),
    };
    run_path(params, |s, o| {
        traj.probabilities.push(s.p);
        if let Some(o) = o {
            traj.outcomes.push(o);
        }
    });
    Ok(traj)
}

/// `(b0 + k * successes) / (b0 + r0 + k * decisions)`.
pub fn closed_form_p(urn: &UrnParams, successes: u64, decisions: u64) -> Result<f64> {
    if successes > decisions {
        return Err(Error::param(
            "successes",
            format!("{successes} exceeds the {decisions} decisions taken"),
        ));
    }
    Ok((urn.b0 + urn.k * successes as f64) / urn.mass_after(decisions))
}

/// Probability of observing exactly `outcomes` under the unbiased process.
pub fn sequence_probability(urn: &UrnParams, outcomes: &[DecisionOutcome]) -> Result<f64> {
    if outcomes.len() > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            len: outcomes.len(),
            cap: ENUMERATION_CAP,
        });
    }
    let mut state = ProcessState::initial(urn);
    let mut prob = 1.0;
    for &o in outcomes {
        prob *= if o.is_high() { state.p } else { 1.0 - state.p };
        state = step(&state, o, urn);
    }
    Ok(prob)
}
