//! Economies: agents, utility families, contact structure among parts and
//! the conserved quantities that fix the macro-state space.

mod contact;
mod state;
mod utility;

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

pub use contact::{AgentId, ContactStructure, PartId};
pub(crate) use state::economy_keys;
pub use state::{conserved_quantities, macro_state_of, ConservedQuantity, MacroState, MicroState};
pub use utility::{log_utility, GoodIndex, GoodVector, UtilitySpec, MONEY};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agent {
    pub id: AgentId,
    pub utility: UtilitySpec,
}

/// Rule generating the pairwise encounter rates `k_ij`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    AllToAll { rate: f64 },
    /// Agents in index order on a cycle, each meeting its two neighbours.
    Ring { rate: f64 },
    /// Full symmetric matrix indexed by agent position.
    Explicit { matrix: Vec<Vec<f64>> },
}

impl Default for Topology {
    fn default() -> Self {
        Topology::AllToAll { rate: 1.0 }
    }
}

impl Topology {
    pub fn rate(&self, i: usize, j: usize, n: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        match self {
            Topology::AllToAll { rate } => *rate,
            Topology::Ring { rate } => {
                let d = i.abs_diff(j);
                if d == 1 || d == n - 1 {
                    *rate
                } else {
                    0.0
                }
            }
            Topology::Explicit { matrix } => matrix[i][j],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            Topology::AllToAll { rate } | Topology::Ring { rate } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(Error::arg(format!("encounter rate must be non-negative, got {rate}")));
                }
            }
            Topology::Explicit { matrix } => {
                if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::arg(format!("rate matrix must be {n}x{n}")));
                }
                for i in 0..n {
                    if matrix[i][i] != 0.0 {
                        return Err(Error::arg(format!("rate matrix diagonal entry {i} is non-zero")));
                    }
                    for j in 0..n {
                        let k = matrix[i][j];
                        if !(k.is_finite() && k >= 0.0) || k != matrix[j][i] {
                            return Err(Error::arg(format!(
                                "rate matrix must be symmetric and non-negative (entry {i},{j})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// An exchange economy: agents, their parts and contacts, and encounter rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EconomyRepr", into = "EconomyRepr")]
pub struct Economy {
    goods: Vec<String>,
    agents: Vec<Agent>,
    structure: ContactStructure,
    topology: Topology,
    trader_rates: Vec<f64>,
    distinguished_part: Option<PartId>,
    part_of: Vec<PartId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EconomyRepr {
    goods: Vec<String>,
    agents: Vec<Agent>,
    structure: ContactStructure,
    #[serde(default)]
    topology: Topology,
    #[serde(default)]
    trader_rates: Option<Vec<f64>>,
    #[serde(default)]
    distinguished_part: Option<PartId>,
}

impl TryFrom<EconomyRepr> for Economy {
    type Error = Error;

    fn try_from(r: EconomyRepr) -> Result<Self> {
        let n = r.agents.len();
        Economy::new(
            r.goods,
            r.agents,
            r.structure,
            r.topology,
            r.trader_rates.unwrap_or_else(|| vec![1.0; n]),
            r.distinguished_part,
        )
    }
}

impl From<Economy> for EconomyRepr {
    fn from(e: Economy) -> Self {
        EconomyRepr {
            goods: e.goods,
            agents: e.agents,
            structure: e.structure,
            topology: e.topology,
            trader_rates: Some(e.trader_rates),
            distinguished_part: e.distinguished_part,
        }
    }
}

impl Economy {
    pub fn new(
        goods: Vec<String>,
        agents: Vec<Agent>,
        structure: ContactStructure,
        topology: Topology,
        trader_rates: Vec<f64>,
        distinguished_part: Option<PartId>,
    ) -> Result<Self> {
        if goods.is_empty() {
            return Err(Error::arg("an economy needs at least one good (money)"));
        }
        if agents.is_empty() {
            return Err(Error::arg("an economy needs at least one agent"));
        }
        let n = agents.len();
        let index: HashMap<AgentId, usize> =
            agents.iter().enumerate().map(|(i, a)| (a.id, i)).collect();
        if index.len() != n {
            return Err(Error::arg("agent ids must be unique"));
        }
        for a in &agents {
            a.utility.validate(goods.len())?;
        }
        structure.check_goods(goods.len())?;
        let mut part_of = vec![usize::MAX; n];
        for (p, members) in structure.parts().iter().enumerate() {
            for id in members {
                let &i = index
                    .get(id)
                    .ok_or_else(|| Error::arg(format!("part {p} names unknown agent {id}")))?;
                part_of[i] = p;
            }
        }
        if let Some(i) = part_of.iter().position(|&p| p == usize::MAX) {
            return Err(Error::arg(format!("agent {} belongs to no part", agents[i].id)));
        }
        topology.validate(n)?;
        if trader_rates.len() != n || trader_rates.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::arg("trader rates must be one non-negative rate per agent"));
        }
        if let Some(d) = distinguished_part {
            if d >= structure.part_count() {
                return Err(Error::arg(format!("distinguished part {d} does not exist")));
            }
        }
        let economy = Economy {
            goods,
            agents,
            structure,
            topology,
            trader_rates,
            distinguished_part,
            part_of,
        };
        economy.check_connectivity()?;
        Ok(economy)
    }

    /// Single-part economy with all-to-all unit encounter rates, unit trader
    /// rates and the whole economy as the distinguished money component.
    pub fn single_part(goods: Vec<String>, utilities: Vec<UtilitySpec>) -> Result<Self> {
        let n = utilities.len();
        let agents: Vec<Agent> = utilities
            .into_iter()
            .enumerate()
            .map(|(id, utility)| Agent { id, utility })
            .collect();
        Economy::new(
            goods,
            agents,
            ContactStructure::single(0..n),
            Topology::default(),
            vec![1.0; n],
            Some(0),
        )
    }

    /// Parts with no contact between them; agents are numbered consecutively.
    pub fn isolated_parts(goods: Vec<String>, parts: Vec<Vec<UtilitySpec>>) -> Result<Self> {
        let mut agents = Vec::new();
        let mut members = Vec::new();
        for utilities in parts {
            let mut ids = Vec::new();
            for utility in utilities {
                let id = agents.len();
                ids.push(id);
                agents.push(Agent { id, utility });
            }
            members.push(ids);
        }
        let n = agents.len();
        Economy::new(
            goods,
            agents,
            ContactStructure::isolated(members)?,
            Topology::default(),
            vec![1.0; n],
            Some(0),
        )
    }

    pub fn with_topology(mut self, topology: Topology) -> Result<Self> {
        topology.validate(self.agents.len())?;
        self.topology = topology;
        self.check_connectivity()?;
        Ok(self)
    }

    pub fn with_trader_rates(mut self, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != self.agents.len() || rates.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::arg("trader rates must be one non-negative rate per agent"));
        }
        self.trader_rates = rates;
        Ok(self)
    }

    pub fn with_distinguished_part(mut self, part: Option<PartId>) -> Result<Self> {
        if part.is_some_and(|p| p >= self.structure.part_count()) {
            return Err(Error::arg("distinguished part does not exist"));
        }
        self.distinguished_part = part;
        Ok(self)
    }

    pub fn goods(&self) -> &[String] {
        &self.goods
    }

    pub fn good_count(&self) -> usize {
        self.goods.len()
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn structure(&self) -> &ContactStructure {
        &self.structure
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn trader_rates(&self) -> &[f64] {
        &self.trader_rates
    }

    pub fn distinguished_part(&self) -> Option<PartId> {
        self.distinguished_part
    }

    /// Part of the agent at position `i`.
    pub fn part_of(&self, i: usize) -> PartId {
        self.part_of[i]
    }

    /// Agent positions belonging to each part.
    pub fn part_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.structure.part_count()];
        for (i, &p) in self.part_of.iter().enumerate() {
            out[p].push(i);
        }
        out
    }

    pub fn encounter_rate(&self, i: usize, j: usize) -> f64 {
        self.topology.rate(i, j, self.agents.len())
    }

    /// Goods exchanged when the agents at positions `i` and `j` meet.
    pub fn exchanged_goods(&self, i: usize, j: usize) -> Vec<GoodIndex> {
        self.structure
            .tradable_goods(self.part_of[i], self.part_of[j], self.goods.len())
    }

    /// Simple economies have money and a distinguished money component.
    pub fn is_simple(&self) -> bool {
        self.distinguished_part.is_some()
    }

    /// Parts of the distinguished money-flow component.
    pub fn money_component(&self) -> Option<Vec<PartId>> {
        self.distinguished_part
            .map(|p| self.structure.component_of(MONEY, p))
    }

    /// Agent positions inside the distinguished money component.
    pub fn money_component_agents(&self) -> Option<Vec<usize>> {
        let parts: BTreeSet<PartId> = self.money_component()?.into_iter().collect();
        Some(
            (0..self.agents.len())
                .filter(|&i| parts.contains(&self.part_of[i]))
                .collect(),
        )
    }

    /// Agents of each money component must be connected by encounters that
    /// exchange at least one good.
    fn check_connectivity(&self) -> Result<()> {
        let n = self.agents.len();
        for component in self.structure.components(MONEY) {
            let parts: BTreeSet<PartId> = component.iter().copied().collect();
            let members: Vec<usize> = (0..n).filter(|&i| parts.contains(&self.part_of[i])).collect();
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([members[0]]);
            seen[members[0]] = true;
            let mut reached = 1;
            while let Some(i) = queue.pop_front() {
                for &j in &members {
                    if !seen[j]
                        && self.encounter_rate(i, j) > 0.0
                        && !self.exchanged_goods(i, j).is_empty()
                    {
                        seen[j] = true;
                        reached += 1;
                        queue.push_back(j);
                    }
                }
            }
            if reached != members.len() && self.has_positive_rates() {
                return Err(Error::arg(format!(
                    "encounter graph is not connected inside money component {component:?}"
                )));
            }
        }
        Ok(())
    }

    fn has_positive_rates(&self) -> bool {
        match &self.topology {
            Topology::AllToAll { rate } | Topology::Ring { rate } => *rate > 0.0,
            Topology::Explicit { matrix } => matrix.iter().flatten().any(|&k| k > 0.0),
        }
    }

    /// Opens or closes exchange of `goods` between two parts. Possessions are
    /// untouched; callers recompute conserved quantities afterwards.
    pub fn set_contact(
        &self,
        part_a: PartId,
        part_b: PartId,
        goods: &[GoodIndex],
        enabled: bool,
    ) -> Result<Economy> {
        let parts = self.structure.part_count();
        if part_a >= parts || part_b >= parts {
            return Err(Error::arg(format!(
                "unknown part in contact ({part_a}, {part_b}); economy has {parts} parts"
            )));
        }
        if part_a == part_b {
            return Err(Error::arg("contact needs two different parts"));
        }
        if let Some(t) = goods.iter().find(|&&t| t >= self.goods.len()) {
            return Err(Error::arg(format!("good {t} does not exist")));
        }
        let mut next = self.clone();
        next.structure.set(part_a, part_b, goods, enabled);
        next.check_connectivity()?;
        Ok(next)
    }

    /// Scaled copy with `round(lambda * n_p)` agents in each part `p`.
    ///
    /// Utilities are replicated or truncated round-robin within each part, so
    /// the result is deterministic. Rate rules carry over; explicit matrices
    /// map each new agent to the agent it copies.
    pub fn scaled(&self, lambda: f64) -> Result<Economy> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::arg(format!("scale factor must be positive, got {lambda}")));
        }
        let members = self.part_members();
        let mut origin = Vec::new();
        let mut parts = Vec::new();
        for (p, m) in members.iter().enumerate() {
            let size = (lambda * m.len() as f64).round() as usize;
            if size == 0 {
                return Err(Error::arg(format!(
                    "scaling by {lambda} leaves part {p} with no agents"
                )));
            }
            let mut ids = Vec::with_capacity(size);
            for k in 0..size {
                ids.push(origin.len());
                origin.push(m[k % m.len()]);
            }
            parts.push(ids);
        }
        let agents: Vec<Agent> = origin
            .iter()
            .enumerate()
            .map(|(id, &o)| Agent {
                id,
                utility: self.agents[o].utility.clone(),
            })
            .collect();
        let mut structure = ContactStructure::isolated(parts)?;
        for a in 0..structure.part_count() {
            for b in a + 1..structure.part_count() {
                let goods = self.structure.tradable_goods(a, b, self.goods.len());
                structure.set(a, b, &goods, true);
            }
        }
        let topology = match &self.topology {
            Topology::Explicit { matrix } => {
                let n = origin.len();
                let mut m = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let (oi, oj) = (origin[i], origin[j]);
                        m[i][j] = if oi != oj {
                            matrix[oi][oj]
                        } else {
                            // copies of one agent meet at that agent's fastest rate
                            matrix[oi].iter().copied().fold(0.0, f64::max)
                        };
                    }
                }
                Topology::Explicit { matrix: m }
            }
            other => other.clone(),
        };
        let trader_rates = origin.iter().map(|&o| self.trader_rates[o]).collect();
        Economy::new(
            self.goods.clone(),
            agents,
            structure,
            topology,
            trader_rates,
            self.distinguished_part,
        )
    }

    /// Places two economies side by side as unconnected parts. Parts of `b`
    /// are renumbered after those of `a`; the distinguished part is `a`'s.
    pub fn join(a: &Economy, b: &Economy) -> Result<Economy> {
        if a.goods != b.goods {
            return Err(Error::arg("joined economies must trade the same goods"));
        }
        let offset_agents = a.agents.len();
        let offset_parts = a.structure.part_count();
        let mut agents = a.agents.clone();
        agents.extend(b.agents.iter().enumerate().map(|(k, ag)| Agent {
            id: offset_agents + k,
            utility: ag.utility.clone(),
        }));
        let mut parts: Vec<Vec<AgentId>> = a.part_members();
        parts.extend(
            b.part_members()
                .into_iter()
                .map(|m| m.into_iter().map(|i| i + offset_agents).collect()),
        );
        let mut structure = ContactStructure::isolated(parts)?;
        for (off, src) in [(0, a), (offset_parts, b)] {
            let pc = src.structure.part_count();
            for p in 0..pc {
                for q in p + 1..pc {
                    let goods = src.structure.tradable_goods(p, q, src.goods.len());
                    structure.set(p + off, q + off, &goods, true);
                }
            }
        }
        let n = agents.len();
        let rate = |e: &Economy, i: usize, j: usize| e.encounter_rate(i, j);
        let topology = match (&a.topology, &b.topology) {
            (Topology::AllToAll { rate: ra }, Topology::AllToAll { rate: rb }) if ra == rb => {
                a.topology.clone()
            }
            _ => {
                let mut m = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        m[i][j] = match (i < offset_agents, j < offset_agents) {
                            (true, true) => rate(a, i, j),
                            (false, false) => rate(b, i - offset_agents, j - offset_agents),
                            // cross rates between the mean rates of the two sides
                            _ => 0.5 * (mean_rate(a) + mean_rate(b)),
                        };
                    }
                }
                Topology::Explicit { matrix: m }
            }
        };
        let mut trader_rates = a.trader_rates.clone();
        trader_rates.extend_from_slice(&b.trader_rates);
        Economy::new(
            a.goods.clone(),
            agents,
            structure,
            topology,
            trader_rates,
            a.distinguished_part,
        )
    }
}

fn mean_rate(e: &Economy) -> f64 {
    let n = e.agent_count();
    if n < 2 {
        return match &e.topology {
            Topology::AllToAll { rate } | Topology::Ring { rate } => *rate,
            Topology::Explicit { .. } => 1.0,
        };
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += e.encounter_rate(i, j);
        }
    }
    s / (n * (n - 1)) as f64
}
