//! Ordering properties of `log Z`, checked against closed forms and
//! simulation: accessibility, financial equilibrium, money matching,
//! flanking states and the calibrated entropy scale.

mod plan;
mod script;
mod suite;

use serde::{Deserialize, Serialize};

pub use plan::{
    budget_equilibrium, execute_plan, plan_transition, ExecutionConfig, PlanExecution, PlanStep, Plane,
    TransitionPlan,
};
pub use script::{
    monotonicity_trial, random_script, ScriptConfig, ScriptRunner, StepRecord, TraderAction, TrialReport,
};
pub use suite::{run_axiom_suite, AxiomCheck, SuiteConfig, SuiteReport};

use crate::dynamics::{simulate, Horizon, SimConfig};
use crate::economy::{Economy, MacroState, MicroState, MONEY};
use crate::error::{Error, Result};
use crate::partition::{coolness, good_values, log_partition, EntropyModel};
use crate::stats::{batch_means_stderr, mean};

/// A macro-state bound to the model that gives it an entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct System {
    pub model: EntropyModel,
    pub state: MacroState,
}

impl System {
    pub fn new(model: EntropyModel, state: MacroState) -> Self {
        System { model, state }
    }

    pub fn log_z(&self) -> Result<f64> {
        Ok(log_partition(&self.model, &self.state)?.value)
    }

    pub fn beta(&self) -> Result<f64> {
        Ok(coolness(&self.model, &self.state)?.value)
    }

    pub fn money(&self) -> Result<f64> {
        let d = self
            .model
            .distinguished_part()
            .ok_or_else(|| Error::domain("the system has no distinguished money component"))?;
        self.state
            .total(MONEY, d)
            .ok_or_else(|| Error::domain("no money quantity for the distinguished part"))
    }

    /// The same system with `amount` money added to its distinguished component.
    pub fn plus_money(&self, amount: f64) -> Result<System> {
        let d = self.model.distinguished_part().unwrap_or(0);
        let m = self.money()? + amount;
        if m < 0.0 {
            return Err(Error::domain("money would become negative"));
        }
        Ok(System {
            model: self.model.clone(),
            state: self.state.with_total(MONEY, d, m)?,
        })
    }
}

/// Equality band for comparisons of `log Z`, per agent.
pub const LOG_Z_BAND: f64 = 1e-9;
/// Relative band for comparisons of coolness.
pub const BETA_BAND: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accessibility {
    Forward,
    Backward,
    Both,
    Neither,
}

/// Whether `y` is reachable from `x` (forward), `x` from `y` (backward) or
/// both, judged by `log Z` within `1e-9 N`.
pub fn accessible(x: &System, y: &System) -> Result<Accessibility> {
    if x.model != y.model {
        return Err(Error::arg("accessibility compares states of one economy"));
    }
    let (sx, sy) = (x.log_z()?, y.log_z()?);
    let band = LOG_Z_BAND * x.model.agent_count() as f64;
    Ok(if !(sx.is_finite() && sy.is_finite()) {
        Accessibility::Neither
    } else if (sy - sx).abs() <= band {
        Accessibility::Both
    } else if sy > sx {
        Accessibility::Forward
    } else {
        Accessibility::Backward
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    None,
    TowardFirst,
    TowardSecond,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinancialVerdict {
    pub beta_first: f64,
    pub beta_second: f64,
    pub equilibrium: bool,
    /// Money flows toward the cooler system (larger `beta`).
    pub flow: Flow,
}

pub fn financial_equilibrium(a: &System, b: &System) -> Result<FinancialVerdict> {
    if a.model.distinguished_part().is_none() || b.model.distinguished_part().is_none() {
        return Err(Error::arg("financial equilibrium is defined for simple economies"));
    }
    let (ba, bb) = (a.beta()?, b.beta()?);
    let equilibrium = (ba - bb).abs() <= BETA_BAND * ba.max(bb);
    let flow = if equilibrium {
        Flow::None
    } else if bb > ba {
        Flow::TowardSecond
    } else {
        Flow::TowardFirst
    };
    Ok(FinancialVerdict {
        beta_first: ba,
        beta_second: bb,
        equilibrium,
        flow,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipient {
    Neither,
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoneyMatch {
    pub amount: f64,
    pub recipient: Recipient,
    pub beta: f64,
}

/// Money to add to the warmer of the two systems so that both have the
/// same coolness.
pub fn match_money(x: &System, y0: &System) -> Result<MoneyMatch> {
    let v = financial_equilibrium(x, y0)?;
    if v.equilibrium {
        return Ok(MoneyMatch {
            amount: 0.0,
            recipient: Recipient::Neither,
            beta: v.beta_first,
        });
    }
    let (sys, target, recipient) = if v.beta_second > v.beta_first {
        (y0, v.beta_first, Recipient::Second)
    } else {
        (x, v.beta_second, Recipient::First)
    };
    let beta_at = |m: f64| -> Result<f64> { sys.plus_money(m)?.beta() };
    let scale = sys.money()?.max(1.0);
    let mut hi = scale;
    while beta_at(hi)? > target {
        hi *= 2.0;
        if hi > 1e6 * scale {
            return Err(Error::domain(format!(
                "no money amount up to {hi:e} brings beta down to {target}; the coolness assumptions fail"
            )));
        }
    }
    let mut lo = 0.0;
    let mut mid = hi;
    for _ in 0..300 {
        mid = 0.5 * (lo + hi);
        let b = beta_at(mid)?;
        if (b - target).abs() <= 1e-9 * target {
            break;
        }
        if b > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MoneyMatch {
        amount: mid,
        recipient,
        beta: target,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flanks {
    pub lower: MacroState,
    pub upper: MacroState,
    /// `log Z` of the lower reference, the state and the upper reference.
    pub log_z: [f64; 3],
    pub beta: [f64; 2],
    pub steps: usize,
    /// Largest coolness change over an accepted step; negative throughout.
    pub max_beta_step: f64,
}

/// References `X0 < X < X1` with equal coolness: `X1 = X + m`, and `X0`
/// starts at `X - m` and sells one good at `(1 - eps)` times the market
/// price until its coolness falls to that of `X1`.
pub fn flanking_states(x: &System, m: f64, eps: f64) -> Result<Flanks> {
    let money = x.money()?;
    if !(m > 0.0 && m < money) {
        return Err(Error::arg(format!("flank offset must lie in (0, {money})")));
    }
    let d = x.model.distinguished_part().unwrap_or(0);
    let vals = good_values(&x.model, &x.state)?;
    let Some(&(good, _)) = vals.nu.first() else {
        return Err(Error::Construction("flanking needs a non-money good to sell".into()));
    };
    let upper = x.plus_money(m)?;
    let beta1 = upper.beta()?;
    let at = |mm: f64, g: f64| -> Result<System> {
        Ok(System {
            model: x.model.clone(),
            state: x.state.with_total(MONEY, d, mm)?.with_total(good, d, g)?,
        })
    };
    let slope = |mm: f64, g: f64| -> Result<f64> {
        let v = good_values(&x.model, &at(mm, g)?.state)?;
        let mu = v.prices.iter().find(|p| p.0 == good).map_or(f64::NAN, |p| p.1);
        // dM/dG along the selling path (dG < 0)
        Ok(-(1.0 - eps) * mu)
    };
    let mut mm = money - m;
    let mut g = x
        .state
        .total(good, d)
        .ok_or_else(|| Error::Construction("good has no quantity in the distinguished part".into()))?;
    let mut beta = at(mm, g)?.beta()?;
    let mut h = g / 64.0;
    let mut steps = 0;
    let mut max_beta_step = f64::NEG_INFINITY;
    while (beta - beta1).abs() > BETA_BAND * beta1 {
        if steps > 100_000 || h < 1e-14 * g.max(1e-300) {
            return Err(Error::Construction(format!(
                "selling path left the admissible domain at M = {mm}, G = {g}"
            )));
        }
        if g - h <= 0.0 {
            h *= 0.5;
            continue;
        }
        let trial = (|| -> Result<(f64, f64)> {
            let dg = -h;
            let k1 = slope(mm, g)?;
            let k2 = slope(mm + 0.5 * dg * k1, g + 0.5 * dg)?;
            let k3 = slope(mm + 0.5 * dg * k2, g + 0.5 * dg)?;
            let k4 = slope(mm + dg * k3, g + dg)?;
            let m_next = mm + dg * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            Ok((m_next, at(m_next, g + dg)?.beta()?))
        })();
        let Ok((m_next, b_next)) = trial else {
            h *= 0.5;
            continue;
        };
        if b_next < beta1 * (1.0 - BETA_BAND) {
            h *= 0.5;
            continue;
        }
        max_beta_step = max_beta_step.max(b_next - beta);
        mm = m_next;
        g -= h;
        beta = b_next;
        steps += 1;
    }
    let lower = at(mm, g)?;
    let log_z = [lower.log_z()?, x.log_z()?, upper.log_z()?];
    if !(log_z[0] < log_z[1] && log_z[1] < log_z[2]) {
        return Err(Error::Construction(format!(
            "flanking states are not ordered: log Z = {log_z:?}"
        )));
    }
    Ok(Flanks {
        lower: lower.state,
        upper: upper.state,
        log_z,
        beta: [beta, beta1],
        steps,
        max_beta_step,
    })
}

/// Affine rescaling of `log Z` that maps the lower reference to 0 and the
/// upper one to 1.
pub fn calibrated_entropy(x: &System, x0: &System, x1: &System) -> Result<f64> {
    calibrate(x.log_z()?, x0.log_z()?, x1.log_z()?, x.model.agent_count())
}

/// [`calibrated_entropy`] on precomputed values of `log Z`.
pub fn calibrate(s: f64, s0: f64, s1: f64, n: usize) -> Result<f64> {
    if !(s1 - s0 > LOG_Z_BAND * n as f64) {
        return Err(Error::arg("calibration references must satisfy log Z(X0) < log Z(X1)"));
    }
    let band = LOG_Z_BAND * n as f64;
    if s < s0 - band || s > s1 + band {
        return Err(Error::arg("state lies outside the calibration references"));
    }
    Ok(((s - s0) / (s1 - s0)).clamp(0.0, 1.0))
}

/// Money of the first part while two single-part economies exchange money.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoneyExchange {
    pub mean_first: f64,
    pub stderr: f64,
    /// Change of the first part's money over the opening window.
    pub initial_flow: f64,
    pub samples: usize,
}

/// Joins `a` and `b`, opens money contact between their first parts and
/// simulates from stationary draws of each side at the given totals.
pub fn simulate_money_exchange(
    a: &Economy,
    b: &Economy,
    totals_a: &[f64],
    totals_b: &[f64],
    probe_events: u64,
    horizon_events: u64,
    cfg: &SimConfig,
    seed: u64,
) -> Result<MoneyExchange> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let sa = MicroState::stationary_draw(a, &MacroState::single_part(totals_a, a.agent_count()), &mut rng)
        .or_else(|_| MicroState::equal_split(a, &MacroState::single_part(totals_a, a.agent_count())))?;
    let sb = MicroState::stationary_draw(b, &MacroState::single_part(totals_b, b.agent_count()), &mut rng)
        .or_else(|_| MicroState::equal_split(b, &MacroState::single_part(totals_b, b.agent_count())))?;
    let second = a.structure().part_count();
    let joined = Economy::join(a, b)?.set_contact(0, second, &[MONEY], true)?;
    let mut possessions = sa.possessions;
    possessions.extend(sb.possessions);
    let start = MicroState::new(possessions);
    let m0: f64 = (0..a.agent_count()).map(|i| start.possessions[i][MONEY]).sum();
    let probe_cfg = SimConfig {
        burn_in: Some(probe_events),
        thin: Some(probe_events),
        ..cfg.clone()
    };
    let probe = simulate(&joined, &start, Horizon::Events(probe_events), &probe_cfg, seed)?;
    let m1: f64 = (0..a.agent_count()).map(|i| probe.final_state.possessions[i][MONEY]).sum();
    let traj = simulate(&joined, &probe.final_state, Horizon::Events(horizon_events), cfg, seed.wrapping_add(1))?;
    let series = traj.part_series(0, MONEY);
    Ok(MoneyExchange {
        mean_first: mean(&series),
        stderr: batch_means_stderr(&series, 50),
        initial_flow: m1 - m0,
        samples: series.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(exponents: Vec<f64>, n: usize, totals: &[f64]) -> System {
        let m = EntropyModel::homogeneous(exponents, n).unwrap();
        let s = m.macro_state(totals).unwrap();
        System::new(m, s)
    }

    #[test]
    fn accessibility_orders_by_log_z() {
        let x = sys(vec![2.0, 2.0], 10, &[50.0, 50.0]);
        assert_eq!(accessible(&x, &x).unwrap(), Accessibility::Both);
        let y = x.plus_money(5.0).unwrap();
        assert_eq!(accessible(&x, &y).unwrap(), Accessibility::Forward);
        assert_eq!(accessible(&y, &x).unwrap(), Accessibility::Backward);
        let other = sys(vec![2.0, 2.0], 11, &[50.0, 50.0]);
        assert!(accessible(&x, &other).is_err());
    }

    #[test]
    fn flow_goes_to_the_cooler_system() {
        let a = sys(vec![1.0], 10, &[50.0]);
        let b = sys(vec![1.0], 30, &[50.0]);
        let v = financial_equilibrium(&a, &b).unwrap();
        assert_eq!(v.flow, Flow::TowardSecond);
        assert!(financial_equilibrium(&a, &a).unwrap().equilibrium);
    }

    #[test]
    fn match_money_closed_form() {
        // beta_A = 0.5; flat B with N_B = 21, M_B = 20 needs (20) / (20 + M) = 0.5
        let a = sys(vec![1.0], 26, &[50.0]);
        let b = sys(vec![1.0], 21, &[20.0]);
        let r = match_money(&a, &b).unwrap();
        assert_eq!(r.recipient, Recipient::Second);
        assert!((r.amount - 20.0).abs() < 1e-7, "{r:?}");
        let r = match_money(&b, &a).unwrap();
        assert_eq!(r.recipient, Recipient::First);
        let same = match_money(&a, &a).unwrap();
        assert_eq!(same.amount, 0.0);
    }

    #[test]
    fn flanks_have_equal_coolness() {
        let x = sys(vec![2.0, 3.0], 20, &[100.0, 80.0]);
        let f = flanking_states(&x, 10.0, 1e-3).unwrap();
        assert!((f.beta[0] - f.beta[1]).abs() <= 1e-6 * f.beta[1]);
        assert!(f.max_beta_step < 0.0);
        let small = flanking_states(&x, 1e-3, 1e-3).unwrap();
        assert!(small.log_z[2] - small.log_z[0] < 0.05);
    }

    #[test]
    fn calibration_endpoints_and_midpoint() {
        assert_eq!(calibrate(150.0, 100.0, 200.0, 10).unwrap(), 0.5);
        assert_eq!(calibrate(100.0, 100.0, 200.0, 10).unwrap(), 0.0);
        assert_eq!(calibrate(200.0, 100.0, 200.0, 10).unwrap(), 1.0);
        assert!(calibrate(150.0, 100.0, 100.0, 10).is_err());
    }
}
