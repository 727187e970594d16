use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::Plane;
use super::LOG_Z_BAND;
use crate::dynamics::{financial_contact_session, run, trading_contact_session, Horizon, SimConfig, Trajectory};
use crate::economy::{macro_state_of, Economy, GoodIndex, MacroState, MicroState, PartId, UtilitySpec, MONEY};
use crate::error::{Error, Result};
use crate::partition::{log_partition, log_partition_gradient, EntropyModel};
use crate::stats::variance;

/// One thing the trader does to an economy, followed by a session of
/// encounters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TraderAction {
    /// Encounters only.
    Relax,
    /// Opens a pot of `amount` to the distinguished money component; what
    /// is left in it at the end goes back to the trader. In a plan, `amount`
    /// is the money to transfer and `plane` the closed-loop target.
    AddMoney {
        amount: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        plane: Option<Plane>,
    },
    /// Trades at posted `(good, price)` pairs.
    Trade {
        prices: Vec<(GoodIndex, f64)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<Vec<f64>>,
    },
    MakeContact {
        parts: [PartId; 2],
        goods: Vec<GoodIndex>,
    },
    BreakContact {
        parts: [PartId; 2],
        goods: Vec<GoodIndex>,
    },
    /// Test control: the trader takes a fraction of the distinguished
    /// component's money and gives nothing back.
    Confiscate { fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptConfig {
    /// Events per session; `200 N` when unset.
    pub session_events: Option<u64>,
    pub sim: SimConfig,
    /// Standard errors a step may lose before it is flagged.
    pub z_threshold: f64,
}

impl Default for ScriptConfig {
    fn default() -> Self {
        ScriptConfig {
            session_events: None,
            sim: SimConfig::default(),
            z_threshold: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub action: TraderAction,
    pub macro_state: MacroState,
    pub log_z_before: f64,
    pub log_z_after: f64,
    pub delta: f64,
    /// Combined spread of `log Z` before and after the step.
    pub stderr: f64,
    /// The step lowered `log Z` by more than the threshold in standard errors.
    pub flagged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pot_returned: Option<f64>,
    pub events: u64,
}

/// Applies trader actions in sequence and tracks the economy's total
/// analytic `log Z` at each resulting macro-state.
///
/// The spread of `log Z` at a state is the delta-method standard deviation
/// from the session fluctuations of each conserved total, pooled over the
/// current and previous sessions and ignoring correlations between totals.
pub struct ScriptRunner {
    economy: Economy,
    state: MicroState,
    cfg: ScriptConfig,
    seed: u64,
    log_z: f64,
    last_samples: Vec<Vec<Vec<f64>>>,
    records: Vec<StepRecord>,
}

/// Total `log Z` of an economy at a macro-state.
pub fn total_log_z(economy: &Economy, macro_state: &MacroState) -> Result<f64> {
    Ok(log_partition(&EntropyModel::from_economy(economy)?, macro_state)?.value)
}

impl ScriptRunner {
    pub fn new(economy: Economy, state: MicroState, cfg: ScriptConfig, seed: u64) -> Result<Self> {
        let m = macro_state_of(&economy, &state)?;
        let log_z = total_log_z(&economy, &m)?;
        Ok(ScriptRunner {
            economy,
            state,
            cfg,
            seed,
            log_z,
            last_samples: Vec::new(),
            records: Vec::new(),
        })
    }

    pub fn economy(&self) -> &Economy {
        &self.economy
    }

    pub fn state(&self) -> &MicroState {
        &self.state
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<StepRecord> {
        self.records
    }

    fn step_seed(&self) -> u64 {
        self.seed ^ (self.records.len() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    pub fn apply(&mut self, action: &TraderAction) -> Result<StepRecord> {
        let index = self.records.len();
        let n = self.economy.agent_count();
        let events = self.cfg.session_events.unwrap_or(200 * n as u64).max(1);
        let horizon = Horizon::Events(events);
        let seed = self.step_seed();
        let sim = &self.cfg.sim;
        let mut pot_returned = None;
        let traj: Trajectory = match action {
            TraderAction::Relax => run(&self.economy, &self.state, None, horizon, sim, seed)?,
            TraderAction::AddMoney { amount, .. } => {
                let (t, rest) = financial_contact_session(&self.economy, &self.state, *amount, horizon, sim, seed)?;
                pot_returned = Some(rest);
                t
            }
            TraderAction::Trade { prices, .. } => {
                trading_contact_session(&self.economy, &self.state, prices, horizon, sim, seed)?
            }
            TraderAction::MakeContact { parts, goods } | TraderAction::BreakContact { parts, goods } => {
                let enable = matches!(action, TraderAction::MakeContact { .. });
                self.economy = self.economy.set_contact(parts[0], parts[1], goods, enable)?;
                run(&self.economy, &self.state, None, horizon, sim, seed)?
            }
            TraderAction::Confiscate { fraction } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(Error::arg("confiscated fraction must lie in [0, 1]"));
                }
                let agents = self.economy.money_component_agents().unwrap_or_default();
                let mut s = self.state.clone();
                for i in agents {
                    let m = &mut s.possessions[i].amounts_mut()[MONEY];
                    *m *= 1.0 - fraction;
                }
                run(&self.economy, &s, None, horizon, sim, seed)?
            }
        };
        self.state = traj.final_state.clone();
        let macro_state = macro_state_of(&self.economy, &self.state)?;
        let log_z_after = total_log_z(&self.economy, &macro_state)?;
        let samples: Vec<Vec<Vec<f64>>> = traj.samples.iter().map(|s| s.part_totals.clone()).collect();
        // both sessions' fluctuations, each weighted by the after-state gradient
        let spread_after = self.spread_at(&macro_state, &samples)?;
        let spread_before = self.spread_at(&macro_state, &self.last_samples)?;
        let stderr = spread_before.hypot(spread_after);
        let delta = log_z_after - self.log_z;
        let record = StepRecord {
            index,
            action: action.clone(),
            macro_state,
            log_z_before: self.log_z,
            log_z_after,
            delta,
            stderr,
            // losses inside the log Z equality band are rounding, not decreases
            flagged: delta < -(self.cfg.z_threshold * stderr + LOG_Z_BAND * n as f64),
            pot_returned,
            events: traj.event_count,
        };
        self.log_z = log_z_after;
        self.last_samples = samples;
        self.records.push(record.clone());
        Ok(record)
    }

    fn spread_at(&self, macro_state: &MacroState, pooled: &[Vec<Vec<f64>>]) -> Result<f64> {
        if pooled.len() < 2 {
            return Ok(0.0);
        }
        let model = EntropyModel::from_economy(&self.economy)?;
        let grad = log_partition_gradient(&model, macro_state)?;
        let mut acc = 0.0;
        for (q, g) in macro_state.quantities.iter().zip(grad) {
            let series: Vec<f64> = pooled
                .iter()
                .map(|pt| q.component.iter().map(|&p| pt[p][q.good]).sum())
                .collect();
            acc += g * g * variance(&series);
        }
        Ok(acc.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub records: Vec<StepRecord>,
    /// Most negative `delta / stderr` over the steps (`-inf` for a loss
    /// with zero spread).
    pub worst_z: f64,
    pub flagged: bool,
}

/// Random action script for a two-part, two-good economy.
pub fn random_script<R: Rng + ?Sized>(rng: &mut R, money_scale: f64, steps: usize) -> Vec<TraderAction> {
    (0..steps)
        .map(|_| match rng.random_range(0..5) {
            0 => TraderAction::AddMoney {
                amount: money_scale * rng.random_range(0.05..0.5),
                plane: None,
            },
            1 => TraderAction::Trade {
                prices: vec![(1, rng.random_range(0.3f64.ln()..3f64.ln()).exp())],
                target: None,
            },
            2 => TraderAction::MakeContact {
                parts: [0, 1],
                goods: random_goods(rng),
            },
            3 => TraderAction::BreakContact {
                parts: [0, 1],
                goods: random_goods(rng),
            },
            _ => TraderAction::Relax,
        })
        .collect()
}

fn random_goods<R: Rng + ?Sized>(rng: &mut R) -> Vec<GoodIndex> {
    match rng.random_range(0..3) {
        0 => vec![MONEY],
        1 => vec![1],
        _ => vec![MONEY, 1],
    }
}

/// One randomized monotonicity check: a two-part Cobb-Douglas economy of
/// `n` agents (exponents in [1.5, 3]) runs `steps` random actions. With
/// `wrong_sign` a confiscation of 75% of the money is slipped in.
pub fn monotonicity_trial(seed: u64, n: usize, steps: usize, wrong_sign: bool, cfg: &ScriptConfig) -> Result<TrialReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n / 2;
    let mut parts = Vec::new();
    for size in [half, n - half] {
        parts.push(
            (0..size)
                .map(|_| UtilitySpec::CobbDouglas {
                    exponents: vec![rng.random_range(1.5..3.0), rng.random_range(1.5..3.0)],
                })
                .collect(),
        );
    }
    let goods = vec!["money".to_string(), "grain".to_string()];
    let base = Economy::isolated_parts(goods, parts)?;
    let economy = base.with_topology(crate::economy::Topology::AllToAll { rate: 2.0 / n as f64 })?;
    let totals: Vec<f64> = (0..4).map(|_| rng.random_range(50.0..150.0)).collect();
    let keys = crate::economy::economy_keys(&economy);
    let macro_state = MacroState {
        quantities: keys
            .iter()
            .map(|(good, component)| crate::economy::ConservedQuantity {
                good: *good,
                component: component.clone(),
                total: totals[2 * component[0] + good],
            })
            .collect(),
        agent_count: n,
    };
    let state = MicroState::stationary_draw(&economy, &macro_state, &mut rng)?;
    let mut script = random_script(&mut rng, totals[0] + totals[2], steps);
    if wrong_sign {
        let at = rng.random_range(0..=script.len());
        script.insert(at, TraderAction::Confiscate { fraction: 0.75 });
    }
    let mut runner = ScriptRunner::new(economy, state, cfg.clone(), seed)?;
    for a in &script {
        runner.apply(a)?;
    }
    let records = runner.into_records();
    let worst_z = records
        .iter()
        .map(|r| {
            if r.delta >= 0.0 {
                f64::INFINITY
            } else if r.stderr > 0.0 {
                r.delta / r.stderr
            } else {
                f64::NEG_INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min);
    let flagged = records.iter().any(|r| r.flagged);
    Ok(TrialReport {
        seed,
        records,
        worst_z,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relax_keeps_log_z() {
        let e = Economy::single_part(vec!["money".into()], vec![UtilitySpec::flat(1); 4]).unwrap();
        let s = MicroState::equal_split(&e, &MacroState::single_part(&[8.0], 4)).unwrap();
        let mut r = ScriptRunner::new(e, s, ScriptConfig::default(), 1).unwrap();
        let rec = r.apply(&TraderAction::Relax).unwrap();
        assert_eq!(rec.delta, 0.0);
        assert!(!rec.flagged);
    }

    #[test]
    fn confiscation_is_flagged() {
        let report = monotonicity_trial(3, 20, 2, true, &ScriptConfig::default()).unwrap();
        assert!(report.flagged);
    }

    #[test]
    fn action_json_shape() {
        let a = TraderAction::MakeContact { parts: [0, 1], goods: vec![0] };
        let j = serde_json::to_string(&a).unwrap();
        assert_eq!(j, r#"{"action":"make_contact","parts":[0,1],"goods":[0]}"#);
        let b: TraderAction = serde_json::from_str(r#"{"action":"add_money","amount":5.0}"#).unwrap();
        assert_eq!(b, TraderAction::AddMoney { amount: 5.0, plane: None });
    }
}
