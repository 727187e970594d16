use serde::{Deserialize, Serialize};

use super::script::TraderAction;
use super::{System, LOG_Z_BAND};
use crate::dynamics::{financial_contact_session, part_totals, trading_contact_session, Horizon, SimConfig};
use crate::economy::{macro_state_of, Economy, GoodIndex, MacroState, MicroState, MONEY};
use crate::error::{Error, Result};
use crate::partition::{coolness, good_values, log_partition, EntropyModel, Family};
use crate::stats::mean;

/// Support plane `normal . P = level` of the super-level set at a state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    /// `(beta, nu_1, ...)` at the supporting state.
    pub normal: Vec<f64>,
    pub level: f64,
}

impl Plane {
    fn value(&self, totals: &[f64]) -> f64 {
        self.normal.iter().zip(totals).map(|(a, b)| a * b).sum()
    }

    /// Money that moves `totals` onto the plane.
    pub fn money_gap(&self, totals: &[f64]) -> f64 {
        (self.level - self.value(totals)) / self.normal[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub action: TraderAction,
    /// Per-good totals expected after the step.
    pub expected: Vec<f64>,
    pub delta_log_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionPlan {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub steps: Vec<PlanStep>,
}

/// Maximiser of `log Z` over the states a trader posting `prices` can
/// reach: money plus the priced goods' value is held fixed.
pub fn budget_equilibrium(
    model: &EntropyModel,
    macro_state: &MacroState,
    prices: &[(GoodIndex, f64)],
) -> Result<MacroState> {
    let p = macro_state.totals_vec()?;
    let wealth = prices.iter().fold(p[MONEY], |w, &(t, mu)| w + mu * p[t]);
    let mut next = p.clone();
    match model.family() {
        Family::CobbDouglas { exponents } => {
            let sum = |t: usize| exponents.iter().map(|e| e[t]).sum::<f64>() - 1.0;
            let mut weights = vec![(MONEY, 1.0, sum(MONEY))];
            weights.extend(prices.iter().map(|&(t, mu)| (t, mu, sum(t))));
            if weights.iter().any(|w| w.2 <= 0.0) {
                return Err(Error::Planning(
                    "trading optimum sits on the boundary (an exponent sum is at most 1)".into(),
                ));
            }
            let s: f64 = weights.iter().map(|w| w.2).sum();
            for (t, mu, a) in weights {
                next[t] = wealth * a / (s * mu);
            }
        }
        _ => {
            let &[(t, mu)] = prices else {
                return Err(Error::Planning("two-good families trade a single priced good".into()));
            };
            let top = wealth / mu;
            let slope = |g: f64| -> Result<f64> {
                let mut q = p.clone();
                q[t] = g;
                q[MONEY] = wealth - mu * g;
                let v = good_values(model, &macro_state.with_totals(&q)?)?;
                Ok(v.nu[0].1 - mu * v.beta)
            };
            let (mut lo, mut hi) = (top * 1e-9, top * (1.0 - 1e-9));
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if slope(mid)? > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * top {
                    break;
                }
            }
            next[t] = 0.5 * (lo + hi);
            next[MONEY] = wealth - mu * next[t];
        }
    }
    macro_state.with_totals(&next)
}

const MAX_CHAIN: usize = 64;

/// A sequence of trader actions taking `x` to `y`, each not lowering `log Z`.
///
/// Below `y`'s support plane the trader adds money up to the plane and then
/// trades at `y`'s prices. Above it, the trader first trades through prices
/// interpolated geometrically from `x`'s to `y`'s, which follows `x`'s
/// level set ever more closely as the chain is refined. The chain is doubled
/// until it ends below the plane.
pub fn plan_transition(x: &System, y: &System) -> Result<TransitionPlan> {
    if x.model != y.model {
        return Err(Error::arg("plans connect states of one economy"));
    }
    let from = x.state.totals_vec()?;
    let to = y.state.totals_vec()?;
    let (sx, sy) = (x.log_z()?, y.log_z()?);
    let band = LOG_Z_BAND * x.model.agent_count() as f64;
    if sy < sx - band {
        return Err(Error::Planning(format!(
            "target has lower log Z ({sy}) than the start ({sx}); no trader action lowers it"
        )));
    }
    if sy <= sx + band {
        if from == to {
            return Ok(TransitionPlan { from, to, steps: Vec::new() });
        }
        return Err(Error::Planning(
            "states have equal log Z within tolerance; only a reversible path would connect them".into(),
        ));
    }
    let vy = good_values(&y.model, &y.state)?;
    let mut normal = vec![vy.beta];
    normal.extend(vy.nu.iter().map(|v| v.1));
    let plane = Plane {
        level: normal.iter().zip(&to).map(|(a, b)| a * b).sum(),
        normal,
    };
    if plane.money_gap(&from) >= 0.0 {
        return finish(x, y, &plane, &vy.prices, Vec::new(), from, to);
    }
    let vx = good_values(&x.model, &x.state)?;
    let mut tried = Vec::new();
    let mut k = 2;
    while k <= MAX_CHAIN {
        let mut state = x.state.clone();
        let mut s = sx;
        let mut steps = Vec::new();
        for j in 1..=k {
            let w = j as f64 / k as f64;
            let prices: Vec<(GoodIndex, f64)> = vx
                .prices
                .iter()
                .zip(&vy.prices)
                .map(|(a, b)| (a.0, a.1.powf(1.0 - w) * b.1.powf(w)))
                .collect();
            let next = budget_equilibrium(&x.model, &state, &prices)?;
            let s_next = log_partition(&x.model, &next)?.value;
            if s_next < s - band {
                return Err(Error::Planning(format!("chain trade {j} of {k} would lower log Z")));
            }
            steps.push(PlanStep {
                action: TraderAction::Trade {
                    prices,
                    target: Some(next.totals_vec()?),
                },
                expected: next.totals_vec()?,
                delta_log_z: s_next - s,
            });
            state = next;
            s = s_next;
        }
        let end = state.totals_vec()?;
        tried.push((k, plane.money_gap(&end), s));
        if plane.money_gap(&end) >= 0.0 && s <= sy + band {
            let here = System::new(x.model.clone(), state);
            return finish(&here, y, &plane, &vy.prices, steps, from, to);
        }
        k *= 2;
    }
    Err(Error::Planning(format!(
        "no trading chain of up to {MAX_CHAIN} steps ends below the target's support plane; tried (steps, money gap, log Z): {tried:?}"
    )))
}

fn finish(
    c: &System,
    y: &System,
    plane: &Plane,
    prices: &[(GoodIndex, f64)],
    mut steps: Vec<PlanStep>,
    from: Vec<f64>,
    to: Vec<f64>,
) -> Result<TransitionPlan> {
    let band = LOG_Z_BAND * c.model.agent_count() as f64;
    let mut cur = c.state.totals_vec()?;
    let mut s = c.log_z()?;
    let gap = plane.money_gap(&cur);
    if gap > 1e-12 * cur[MONEY].max(1.0) {
        cur[MONEY] += gap;
        let s_next = log_partition(&c.model, &c.state.with_totals(&cur)?)?.value;
        if s_next < s - band {
            return Err(Error::Planning("adding money lowered log Z".into()));
        }
        steps.push(PlanStep {
            action: TraderAction::AddMoney {
                amount: gap,
                plane: Some(plane.clone()),
            },
            expected: cur.clone(),
            delta_log_z: s_next - s,
        });
        s = s_next;
    }
    let close = cur
        .iter()
        .zip(&to)
        .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0));
    if !close {
        let sy = y.log_z()?;
        if sy < s - band {
            return Err(Error::Planning("final trade would lower log Z".into()));
        }
        steps.push(PlanStep {
            action: TraderAction::Trade {
                prices: prices.to_vec(),
                target: Some(to.clone()),
            },
            expected: to.clone(),
            delta_log_z: sy - s,
        });
    }
    Ok(TransitionPlan { from, to, steps })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    /// Events per intermediate session.
    pub session_events: u64,
    /// Events of the last session, whose sample mean is compared with the target.
    pub final_session_events: u64,
    /// Financial sessions allowed for one closed-loop money step.
    pub money_rounds: usize,
    pub sim: SimConfig,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            session_events: 20_000,
            final_session_events: 200_000,
            money_rounds: 4,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutedStep {
    pub action: TraderAction,
    pub totals_after: Vec<f64>,
    pub log_z_after: f64,
    pub sessions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanExecution {
    pub steps: Vec<ExecutedStep>,
    /// Sample-mean totals of the last trade session, or the final totals
    /// when the plan ends with money.
    pub reached: Vec<f64>,
    pub target: Vec<f64>,
    pub relative_error: Vec<f64>,
    pub final_state: MicroState,
}

/// Runs a plan by simulation. Money steps are closed-loop: pots are sized
/// from the current state so that the economy lands on the plane.
pub fn execute_plan(
    economy: &Economy,
    state: &MicroState,
    plan: &TransitionPlan,
    cfg: &ExecutionConfig,
    seed: u64,
) -> Result<PlanExecution> {
    let model = EntropyModel::from_economy(economy)?;
    let template = macro_state_of(economy, state)?;
    let d = economy
        .distinguished_part()
        .ok_or_else(|| Error::arg("plans run on simple economies"))?;
    let component = economy.structure().component_of(MONEY, d);
    let totals = |s: &MicroState| -> Vec<f64> {
        let parts = part_totals(economy, s);
        (0..economy.good_count())
            .map(|t| component.iter().map(|&p| parts[p][t]).sum())
            .collect()
    };
    let mut cur = state.clone();
    let mut reached = totals(&cur);
    let mut steps = Vec::new();
    let mut session = 0u64;
    let last = plan.steps.len().saturating_sub(1);
    for (k, step) in plan.steps.iter().enumerate() {
        let events = if k == last {
            cfg.final_session_events
        } else {
            cfg.session_events
        };
        let mut sessions = 0;
        match &step.action {
            TraderAction::AddMoney { amount, plane } => {
                for round in 0..cfg.money_rounds.max(1) {
                    let now = totals(&cur);
                    let gap = match plane {
                        Some(p) => p.money_gap(&now),
                        None if round == 0 => *amount,
                        None => 0.0,
                    };
                    if gap <= 1e-4 * now[MONEY].max(1.0) {
                        break;
                    }
                    // the pot keeps about (M + pot) / (A + 1) at equilibrium
                    let beta = coolness(&model, &template.with_totals(&now)?)?.value;
                    let a = beta * now[MONEY] + 1.0;
                    let pot = (gap * (a + 1.0) + now[MONEY]) / a;
                    let (t, _) = financial_contact_session(
                        economy,
                        &cur,
                        pot,
                        Horizon::Events(events),
                        &cfg.sim,
                        seed.wrapping_add(session),
                    )?;
                    session += 1;
                    sessions += 1;
                    cur = t.final_state;
                }
                reached = totals(&cur);
            }
            TraderAction::Trade { prices, .. } => {
                let t = trading_contact_session(
                    economy,
                    &cur,
                    prices,
                    Horizon::Events(events),
                    &cfg.sim,
                    seed.wrapping_add(session),
                )?;
                session += 1;
                sessions += 1;
                reached = (0..economy.good_count())
                    .map(|g| {
                        let series: Vec<f64> = t
                            .samples
                            .iter()
                            .map(|s| component.iter().map(|&p| s.part_totals[p][g]).sum())
                            .collect();
                        if series.is_empty() {
                            totals(&t.final_state)[g]
                        } else {
                            mean(&series)
                        }
                    })
                    .collect();
                cur = t.final_state;
            }
            other => {
                return Err(Error::Planning(format!("plans cannot execute {other:?}")));
            }
        }
        let after = totals(&cur);
        steps.push(ExecutedStep {
            action: step.action.clone(),
            log_z_after: log_partition(&model, &template.with_totals(&after)?)?.value,
            totals_after: after,
            sessions,
        });
    }
    let relative_error = reached
        .iter()
        .zip(&plan.to)
        .map(|(r, t)| (r - t).abs() / t.abs().max(f64::MIN_POSITIVE))
        .collect();
    Ok(PlanExecution {
        steps,
        reached,
        target: plan.to.clone(),
        relative_error,
        final_state: cur,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(totals: &[f64]) -> System {
        let m = EntropyModel::homogeneous(vec![2.0, 3.0], 20).unwrap();
        let s = m.macro_state(totals).unwrap();
        System::new(m, s)
    }

    #[test]
    fn money_only_gap_is_one_step() {
        let x = sys(&[100.0, 50.0]);
        let y = x.plus_money(10.0).unwrap();
        let plan = plan_transition(&x, &y).unwrap();
        assert_eq!(plan.steps.len(), 1);
        assert!(matches!(plan.steps[0].action, TraderAction::AddMoney { amount, .. } if (amount - 10.0).abs() < 1e-9));
    }

    #[test]
    fn below_plane_is_two_steps() {
        let x = sys(&[80.0, 40.0]);
        let y = sys(&[100.0, 70.0]);
        let plan = plan_transition(&x, &y).unwrap();
        assert_eq!(plan.steps.len(), 2);
        assert!(plan.steps.iter().all(|s| s.delta_log_z >= 0.0));
        let end = &plan.steps[1].expected;
        assert_eq!(end, &vec![100.0, 70.0]);
    }

    #[test]
    fn above_plane_uses_a_chain() {
        // much more of the good than the target, a little less entropy
        let x = sys(&[20.0, 300.0]);
        let y = sys(&[160.0, 100.0]);
        assert!(x.log_z().unwrap() < y.log_z().unwrap());
        let plan = plan_transition(&x, &y).unwrap();
        assert!(plan.steps.len() > 2);
        assert!(plan.steps.iter().all(|s| s.delta_log_z >= -1e-9));
    }

    #[test]
    fn refuses_downhill() {
        let x = sys(&[100.0, 70.0]);
        let y = sys(&[80.0, 40.0]);
        assert!(matches!(plan_transition(&x, &y), Err(Error::Planning(_))));
    }

    #[test]
    fn budget_equilibrium_has_the_posted_price() {
        let x = sys(&[100.0, 50.0]);
        let e = budget_equilibrium(&x.model, &x.state, &[(1, 3.0)]).unwrap();
        let v = good_values(&x.model, &e).unwrap();
        assert!((v.prices[0].1 - 3.0).abs() < 1e-12);
        let m = EntropyModel::complements(2.0, 10).unwrap();
        let s = m.macro_state(&[20.0, 10.0]).unwrap();
        let e = budget_equilibrium(&m, &s, &[(1, 1.0)]).unwrap();
        let v = good_values(&m, &e).unwrap();
        assert!((v.prices[0].1 - 1.0).abs() < 1e-8, "{v:?}");
    }
}
