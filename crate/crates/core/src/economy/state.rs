use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::contact::PartId;
use super::utility::{GoodIndex, GoodVector};
use super::Economy;
use crate::error::{Error, Result};

/// Possessions of every agent, in agent order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroState {
    pub possessions: Vec<GoodVector>,
}

impl MicroState {
    pub fn new(possessions: Vec<GoodVector>) -> Self {
        MicroState { possessions }
    }

    pub fn agent_count(&self) -> usize {
        self.possessions.len()
    }

    pub fn check(&self, economy: &Economy) -> Result<()> {
        if self.possessions.len() != economy.agent_count() {
            return Err(Error::arg(format!(
                "state has {} agents, economy has {}",
                self.possessions.len(),
                economy.agent_count()
            )));
        }
        let l = economy.good_count();
        for (i, p) in self.possessions.iter().enumerate() {
            if p.len() != l {
                return Err(Error::arg(format!("agent {i} holds {} goods, expected {l}", p.len())));
            }
            if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::arg(format!("agent {i} holds a negative or non-finite amount")));
            }
        }
        Ok(())
    }

    /// Splits each conserved total equally among the agents that share it.
    pub fn equal_split(economy: &Economy, macro_state: &MacroState) -> Result<Self> {
        Self::fill(economy, macro_state, |members, total, _| {
            vec![total / members.len() as f64; members.len()]
        })
    }

    /// Exact draw from the stationary law of a Cobb-Douglas economy: every
    /// conserved total is split by a Dirichlet with the members' exponents.
    pub fn stationary_draw<R: Rng + ?Sized>(
        economy: &Economy,
        macro_state: &MacroState,
        rng: &mut R,
    ) -> Result<Self> {
        let mut err = None;
        let state = Self::fill(economy, macro_state, |members, total, good| {
            let mut draws = Vec::with_capacity(members.len());
            for &i in members {
                let Some(a) = economy.agents()[i].utility.cobb_douglas_exponent(good) else {
                    err = Some(Error::arg("stationary draws need Cobb-Douglas agents"));
                    return vec![0.0; members.len()];
                };
                draws.push(Gamma::new(a, 1.0).map(|g| g.sample(rng)).unwrap_or(0.0));
            }
            let s: f64 = draws.iter().sum();
            draws.iter().map(|d| total * d / s).collect()
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(state),
        }
    }

    fn fill(
        economy: &Economy,
        macro_state: &MacroState,
        mut split: impl FnMut(&[usize], f64, GoodIndex) -> Vec<f64>,
    ) -> Result<Self> {
        let keys = economy_keys(economy);
        macro_state.check_keys(&keys)?;
        let n = economy.agent_count();
        let mut amounts = vec![vec![0.0; economy.good_count()]; n];
        for q in &macro_state.quantities {
            let members: Vec<usize> = (0..n)
                .filter(|&i| q.component.contains(&economy.part_of(i)))
                .collect();
            for (&i, x) in members.iter().zip(split(&members, q.total, q.good)) {
                amounts[i][q.good] = x;
            }
        }
        Ok(MicroState {
            possessions: amounts
                .into_iter()
                .map(GoodVector::new)
                .collect::<Result<_>>()?,
        })
    }
}

/// Total of one good inside one connected component of its flow graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConservedQuantity {
    pub good: GoodIndex,
    pub component: Vec<PartId>,
    pub total: f64,
}

/// Values of the complete set of conserved quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroState {
    pub quantities: Vec<ConservedQuantity>,
    pub agent_count: usize,
}

impl MacroState {
    /// Macro-state of a one-part economy from per-good totals.
    pub fn single_part(totals: &[f64], agent_count: usize) -> Self {
        MacroState {
            quantities: totals
                .iter()
                .enumerate()
                .map(|(good, &total)| ConservedQuantity {
                    good,
                    component: vec![0],
                    total,
                })
                .collect(),
            agent_count,
        }
    }

    pub fn quantity(&self, good: GoodIndex, part: PartId) -> Option<&ConservedQuantity> {
        self.quantities
            .iter()
            .find(|q| q.good == good && q.component.contains(&part))
    }

    pub fn total(&self, good: GoodIndex, part: PartId) -> Option<f64> {
        self.quantity(good, part).map(|q| q.total)
    }

    /// Sum of a good over all of its components.
    pub fn good_total(&self, good: GoodIndex) -> f64 {
        self.quantities
            .iter()
            .filter(|q| q.good == good)
            .map(|q| q.total)
            .sum()
    }

    pub fn goods(&self) -> usize {
        self.quantities.iter().map(|q| q.good + 1).max().unwrap_or(0)
    }

    /// Per-good totals when every good has a single component.
    pub fn totals_vec(&self) -> Result<Vec<f64>> {
        let l = self.goods();
        let mut out = vec![f64::NAN; l];
        for q in &self.quantities {
            if !out[q.good].is_nan() {
                return Err(Error::domain(format!(
                    "good {} has several conserved components",
                    q.good
                )));
            }
            out[q.good] = q.total;
        }
        Ok(out)
    }

    /// Same components with the totals of a single-component state replaced.
    pub fn with_totals(&self, totals: &[f64]) -> Result<Self> {
        let mut next = self.clone();
        if totals.len() != self.goods() {
            return Err(Error::arg("totals length does not match the goods"));
        }
        self.totals_vec()?;
        for q in &mut next.quantities {
            q.total = totals[q.good];
        }
        Ok(next)
    }

    pub fn with_total(&self, good: GoodIndex, part: PartId, total: f64) -> Result<Self> {
        let mut next = self.clone();
        let q = next
            .quantities
            .iter_mut()
            .find(|q| q.good == good && q.component.contains(&part))
            .ok_or_else(|| Error::arg(format!("no quantity for good {good} in part {part}")))?;
        q.total = total;
        Ok(next)
    }

    /// `lambda X`: every total multiplied by `lambda`, agents rounded.
    pub fn scaled(&self, lambda: f64) -> Self {
        MacroState {
            quantities: self
                .quantities
                .iter()
                .map(|q| ConservedQuantity {
                    total: q.total * lambda,
                    ..q.clone()
                })
                .collect(),
            agent_count: (self.agent_count as f64 * lambda).round() as usize,
        }
    }

    fn check_keys(&self, keys: &[(GoodIndex, Vec<PartId>)]) -> Result<()> {
        let mine: Vec<(GoodIndex, Vec<PartId>)> = self
            .quantities
            .iter()
            .map(|q| (q.good, q.component.clone()))
            .collect();
        let mut a = mine.clone();
        let mut b = keys.to_vec();
        a.sort();
        b.sort();
        if a != b {
            return Err(Error::arg(format!(
                "macro-state quantities {mine:?} do not match the economy's {keys:?}"
            )));
        }
        if let Some(q) = self.quantities.iter().find(|q| !(q.total.is_finite() && q.total >= 0.0)) {
            return Err(Error::arg(format!("negative total {} for good {}", q.total, q.good)));
        }
        Ok(())
    }
}

pub(crate) fn economy_keys(economy: &Economy) -> Vec<(GoodIndex, Vec<PartId>)> {
    (0..economy.good_count())
        .flat_map(|t| {
            economy
                .structure()
                .components(t)
                .into_iter()
                .map(move |c| (t, c))
        })
        .collect()
}

/// One quantity per (good, connected component of that good's flow graph),
/// totals summed over the component's agents in agent order.
pub fn conserved_quantities(economy: &Economy, state: &MicroState) -> Vec<ConservedQuantity> {
    let n = economy.agent_count();
    economy_keys(economy)
        .into_iter()
        .map(|(good, component)| {
            let total = (0..n)
                .filter(|&i| component.contains(&economy.part_of(i)))
                .map(|i| state.possessions[i][good])
                .sum();
            ConservedQuantity {
                good,
                component,
                total,
            }
        })
        .collect()
}

pub fn macro_state_of(economy: &Economy, state: &MicroState) -> Result<MacroState> {
    state.check(economy)?;
    Ok(MacroState {
        quantities: conserved_quantities(economy, state),
        agent_count: economy.agent_count(),
    })
}
