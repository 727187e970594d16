//! Continuous-time simulation of pairwise encounters and trader sessions.
//!
//! Every simulation snaps amounts to a dyadic lattice whose spacing is fixed
//! by the largest total in play. Sums of lattice points below `2^53` spacings
//! are exact in binary floating point, so each conserved total stays
//! bit-identical across events whatever order the agents are summed in.

mod sampler;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

pub use sampler::{
    budget_wealth, sample_budget_line, sample_pot_exchange, sample_redistribution, split_exact,
    Prices, SliceConfig,
};

use crate::economy::{Economy, GoodIndex, MicroState, MONEY};
use crate::error::{Error, Result};

/// When a simulation stops; event counts include burn-in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Events(u64),
    Time(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Events discarded before sampling; `50 N` when unset.
    pub burn_in: Option<u64>,
    /// Events between samples; `N` when unset.
    pub thin: Option<u64>,
    pub record_events: bool,
    /// Keep the full micro-state with every sample.
    pub keep_snapshots: bool,
    pub slice: SliceConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            burn_in: None,
            thin: None,
            record_events: false,
            keep_snapshots: false,
            slice: SliceConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn burn_in_for(&self, n: usize) -> u64 {
        self.burn_in.unwrap_or(50 * n as u64)
    }

    pub fn thin_for(&self, n: usize) -> u64 {
        self.thin.unwrap_or(n as u64).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncounterKind {
    AgentPair { i: usize, j: usize },
    TraderFinancial { i: usize },
    TraderTrading { i: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncounterEvent {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EncounterKind,
    pub goods: Vec<GoodIndex>,
}

/// The trader's side of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Trader {
    /// A pot of money open to exchange with the distinguished money component.
    Financial { pot: f64 },
    /// Trades at posted prices (money per unit) for a set of non-money goods.
    Trading { prices: Vec<(GoodIndex, f64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub event: u64,
    /// `part_totals[p][t]`: amount of good `t` held in part `p`.
    pub part_totals: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pot: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<MicroState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    /// Starting state after snapping to the lattice.
    pub initial_state: MicroState,
    pub final_state: MicroState,
    pub final_time: f64,
    pub event_count: u64,
    pub quantum: f64,
    pub events: Vec<EncounterEvent>,
    pub samples: Vec<Sample>,
    /// Per-agent sample mean of money.
    pub money_mean: Vec<f64>,
    /// Per-agent sample mean of squared money.
    pub money_second_moment: Vec<f64>,
    pub final_pot: Option<f64>,
}

/// Final moments of a trajectory, for JSON reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub seed: u64,
    pub event_count: u64,
    pub final_time: f64,
    pub sample_count: usize,
    pub money_mean: Vec<f64>,
    pub money_second_moment: Vec<f64>,
    pub final_part_totals: Vec<Vec<f64>>,
    pub final_pot: Option<f64>,
}

impl Trajectory {
    /// Sampled amount of `good` in `part`.
    pub fn part_series(&self, part: usize, good: GoodIndex) -> Vec<f64> {
        self.samples.iter().map(|s| s.part_totals[part][good]).collect()
    }

    pub fn pot_series(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.pot).collect()
    }

    pub fn summary(&self, economy: &Economy) -> TrajectorySummary {
        TrajectorySummary {
            seed: self.seed,
            event_count: self.event_count,
            final_time: self.final_time,
            sample_count: self.samples.len(),
            money_mean: self.money_mean.clone(),
            money_second_moment: self.money_second_moment.clone(),
            final_part_totals: part_totals(economy, &self.final_state),
            final_pot: self.final_pot,
        }
    }

    /// Sample time series, one row per sample.
    pub fn write_csv<W: Write>(&self, economy: &Economy, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let parts = economy.structure().part_count();
        let goods = economy.good_count();
        let mut header = vec!["time".to_string(), "event".to_string(), "pot".to_string()];
        for p in 0..parts {
            for t in 0..goods {
                header.push(format!("part{p}_{}", economy.goods()[t]));
            }
        }
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![
                s.time.to_string(),
                s.event.to_string(),
                s.pot.map(|p| p.to_string()).unwrap_or_default(),
            ];
            row.extend(s.part_totals.iter().flatten().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Amount of each good held in each part, summed in agent order.
pub fn part_totals(economy: &Economy, state: &MicroState) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; economy.good_count()]; economy.structure().part_count()];
    for (i, p) in state.possessions.iter().enumerate() {
        for (acc, x) in out[economy.part_of(i)].iter_mut().zip(p.iter()) {
            *acc += x;
        }
    }
    out
}

/// Lattice spacing for amounts bounded by `scale`: a power of two with at
/// least 50 bits of headroom below `2^53`.
pub fn lattice_quantum(scale: f64) -> f64 {
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    2f64.powi(scale.log2().ceil() as i32 - 50)
}

fn snap(x: f64, q: f64) -> f64 {
    (x / q).round() * q
}

enum Channel {
    Pair(usize, usize, Vec<GoodIndex>),
    Trader(usize),
}

/// Pairwise encounters only.
pub fn simulate(
    economy: &Economy,
    state: &MicroState,
    horizon: Horizon,
    cfg: &SimConfig,
    seed: u64,
) -> Result<Trajectory> {
    run(economy, state, None, horizon, cfg, seed)
}

/// Runs encounters alongside a pot of money open to the distinguished money
/// component; returns the trajectory and what is left in the pot.
pub fn financial_contact_session(
    economy: &Economy,
    state: &MicroState,
    pot: f64,
    horizon: Horizon,
    cfg: &SimConfig,
    seed: u64,
) -> Result<(Trajectory, f64)> {
    let traj = run(economy, state, Some(&Trader::Financial { pot }), horizon, cfg, seed)?;
    let rest = traj.final_pot.unwrap_or(0.0);
    Ok((traj, rest))
}

/// Runs encounters alongside a trader posting `prices`.
pub fn trading_contact_session(
    economy: &Economy,
    state: &MicroState,
    prices: &Prices,
    horizon: Horizon,
    cfg: &SimConfig,
    seed: u64,
) -> Result<Trajectory> {
    let trader = Trader::Trading {
        prices: prices.to_vec(),
    };
    run(economy, state, Some(&trader), horizon, cfg, seed)
}

/// Simulation with an optional trader session.
pub fn run(
    economy: &Economy,
    state: &MicroState,
    trader: Option<&Trader>,
    horizon: Horizon,
    cfg: &SimConfig,
    seed: u64,
) -> Result<Trajectory> {
    state.check(economy)?;
    match horizon {
        Horizon::Events(0) => return Err(Error::arg("horizon must be positive")),
        Horizon::Time(t) if !(t.is_finite() && t > 0.0) => {
            return Err(Error::arg("horizon must be positive"))
        }
        _ => {}
    }
    let n = economy.agent_count();
    let goods = economy.good_count();
    let mut scale = (0..goods)
        .map(|t| state.possessions.iter().map(|p| p[t]).sum::<f64>())
        .fold(0.0, f64::max);
    let mut pot = None;
    let mut prices: &[(GoodIndex, f64)] = &[];
    if let Some(tr) = trader {
        if !economy.is_simple() {
            return Err(Error::arg("trader sessions need a distinguished money component"));
        }
        match tr {
            Trader::Financial { pot: m } => {
                if !(m.is_finite() && *m >= 0.0) {
                    return Err(Error::arg(format!("pot must be non-negative, got {m}")));
                }
                pot = Some(*m);
                scale += m;
            }
            Trader::Trading { prices: p } => {
                sampler::check_prices(p, goods)?;
                let wealth: f64 = state
                    .possessions
                    .iter()
                    .map(|h| budget_wealth(h, p))
                    .sum();
                for &(t, mu) in p {
                    scale = scale.max(state.possessions.iter().map(|h| h[t]).sum::<f64>() + wealth / mu);
                }
                scale = scale.max(wealth);
                prices = p;
            }
        }
    }
    let q = lattice_quantum(scale);
    let mut cur = state.clone();
    for p in &mut cur.possessions {
        for x in p.amounts_mut() {
            *x = snap(*x, q);
        }
    }
    let mut pot = pot.map(|m| snap(m, q));
    let initial_state = cur.clone();

    let mut channels = Vec::new();
    let mut cumulative = Vec::new();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let k = economy.encounter_rate(i, j);
            let g = economy.exchanged_goods(i, j);
            if k > 0.0 && !g.is_empty() {
                total += k;
                channels.push(Channel::Pair(i, j, g));
                cumulative.push(total);
            }
        }
    }
    if trader.is_some() {
        for i in economy.money_component_agents().unwrap_or_default() {
            let k = economy.trader_rates()[i];
            if k > 0.0 {
                total += k;
                channels.push(Channel::Trader(i));
                cumulative.push(total);
            }
        }
    }

    let burn = cfg.burn_in_for(n);
    let thin = cfg.thin_for(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut time = 0.0;
    let mut count = 0u64;
    let mut events = Vec::new();
    let mut samples = Vec::new();
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    while total > 0.0 {
        if let Horizon::Events(h) = horizon {
            if count >= h {
                break;
            }
        }
        let dt = rng.sample::<f64, _>(Exp1) / total;
        if let Horizon::Time(end) = horizon {
            if time + dt > end {
                time = end;
                break;
            }
        }
        time += dt;
        let u = rng.random::<f64>() * total;
        let c = cumulative.partition_point(|&s| s <= u).min(channels.len() - 1);
        let kind = match &channels[c] {
            Channel::Pair(i, j, g) => {
                let (i, j) = (*i, *j);
                let agents = economy.agents();
                let (a, b) = sample_redistribution(
                    &agents[i].utility,
                    &agents[j].utility,
                    &cur.possessions[i],
                    &cur.possessions[j],
                    g,
                    &cfg.slice,
                    &mut rng,
                )?;
                for &t in g {
                    let pool = cur.possessions[i][t] + cur.possessions[j][t];
                    let x = snap(a[t], q).clamp(0.0, pool);
                    cur.possessions[i].amounts_mut()[t] = x;
                    cur.possessions[j].amounts_mut()[t] = pool - x;
                }
                let _ = b;
                if cfg.record_events {
                    events.push(EncounterEvent {
                        time,
                        kind: EncounterKind::AgentPair { i, j },
                        goods: g.clone(),
                    });
                }
                None
            }
            Channel::Trader(i) => Some(*i),
        };
        if let Some(i) = kind {
            let spec = &economy.agents()[i].utility;
            match trader {
                Some(Trader::Financial { .. }) => {
                    let m_t = pot.unwrap_or(0.0);
                    let (h, _) = sample_pot_exchange(spec, &cur.possessions[i], m_t, &cfg.slice, &mut rng)?;
                    let pool = cur.possessions[i][MONEY] + m_t;
                    let x = snap(h[MONEY], q).clamp(0.0, pool);
                    cur.possessions[i].amounts_mut()[MONEY] = x;
                    pot = Some(pool - x);
                    if cfg.record_events {
                        events.push(EncounterEvent {
                            time,
                            kind: EncounterKind::TraderFinancial { i },
                            goods: vec![MONEY],
                        });
                    }
                }
                Some(Trader::Trading { .. }) => {
                    let h = sample_budget_line(spec, &cur.possessions[i], prices, &cfg.slice, &mut rng)?;
                    let p = cur.possessions[i].amounts_mut();
                    p[MONEY] = snap(h[MONEY], q).max(0.0);
                    for &(t, _) in prices {
                        p[t] = snap(h[t], q).max(0.0);
                    }
                    if cfg.record_events {
                        let mut g = vec![MONEY];
                        g.extend(prices.iter().map(|&(t, _)| t));
                        events.push(EncounterEvent {
                            time,
                            kind: EncounterKind::TraderTrading { i },
                            goods: g,
                        });
                    }
                }
                None => unreachable!("trader channels exist only during sessions"),
            }
        }
        count += 1;
        if count >= burn && (count - burn) % thin == 0 {
            for (k, p) in cur.possessions.iter().enumerate() {
                m1[k] += p[MONEY];
                m2[k] += p[MONEY] * p[MONEY];
            }
            samples.push(Sample {
                time,
                event: count,
                part_totals: part_totals(economy, &cur),
                pot,
                state: cfg.keep_snapshots.then(|| cur.clone()),
            });
        }
    }
    let k = samples.len().max(1) as f64;
    Ok(Trajectory {
        seed,
        initial_state,
        final_state: cur,
        final_time: time,
        event_count: count,
        quantum: q,
        events,
        samples,
        money_mean: m1.iter().map(|s| s / k).collect(),
        money_second_moment: m2.iter().map(|s| s / k).collect(),
        final_pot: pot,
    })
}
