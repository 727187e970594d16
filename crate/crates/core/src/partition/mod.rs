//! Partition functions, coolness, good values and the canonical free energy.
//!
//! Cobb-Douglas populations have a closed-form `log Z` at every size. The
//! stationary law factorizes over (good, flow component) pairs, and each
//! factor is a Dirichlet integral. Complements and substitutes have no
//! closed microcanonical form. For them `log Z` comes from the Legendre
//! transform of the canonical free energy and holds only at extensive order.

mod canonical;
mod estimate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

pub use canonical::{
    equilibrium_amounts, free_energy, legendre_entropy, CanonicalPoint, FreeEnergy, LegendreSolution,
};
pub use estimate::{estimate_coolness_from_pot, thermo_integrate_log_z, PotEstimate};

use crate::economy::{Economy, GoodIndex, MacroState, PartId, UtilitySpec, MONEY};
use crate::error::{Error, Result};

/// Whether a value is exact at finite size or valid to leading order in `N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Exact,
    Extensive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub order: Order,
}

/// Utility population of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// One exponent vector per agent.
    CobbDouglas { exponents: Vec<Vec<f64>> },
    /// Common `alpha`, utility `min(m, g)^(alpha - 1)` over two goods.
    Complements { alpha: f64 },
    /// Common `alpha`, utility `(m + g)^(alpha - 1)` over two goods.
    Substitutes { alpha: f64 },
}

/// Analytic description of an economy's entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyModel {
    family: Family,
    goods: usize,
    agent_parts: Vec<PartId>,
    keys: Vec<(GoodIndex, Vec<PartId>)>,
    distinguished_part: Option<PartId>,
}

impl EntropyModel {
    pub fn from_economy(economy: &Economy) -> Result<Self> {
        let agents = economy.agents();
        let keys = crate::economy::economy_keys(economy);
        let family = if agents.iter().all(|a| a.utility.is_cobb_douglas()) {
            Family::CobbDouglas {
                exponents: agents
                    .iter()
                    .map(|a| match &a.utility {
                        UtilitySpec::CobbDouglas { exponents } => exponents.clone(),
                        _ => unreachable!(),
                    })
                    .collect(),
            }
        } else {
            let first = &agents[0].utility;
            if agents.iter().any(|a| &a.utility != first) {
                return Err(Error::domain(
                    "analytic entropy needs a Cobb-Douglas population or one common utility",
                ));
            }
            let family = match first {
                UtilitySpec::Complements { alpha, .. } => Family::Complements { alpha: *alpha },
                UtilitySpec::PerfectSubstitutes { alpha, .. } => Family::Substitutes { alpha: *alpha },
                UtilitySpec::CobbDouglas { .. } => unreachable!(),
            };
            if economy.good_count() != 2 || keys.len() != 2 {
                return Err(Error::domain(
                    "complements and substitutes models need two goods, each freely exchanged",
                ));
            }
            family
        };
        Ok(EntropyModel {
            family,
            goods: economy.good_count(),
            agent_parts: (0..economy.agent_count()).map(|i| economy.part_of(i)).collect(),
            keys,
            distinguished_part: economy.distinguished_part(),
        })
    }

    /// One-part Cobb-Douglas model.
    pub fn cobb_douglas(exponents: Vec<Vec<f64>>) -> Result<Self> {
        let goods = exponents.first().map_or(0, Vec::len);
        if goods == 0 || exponents.iter().any(|e| e.len() != goods) {
            return Err(Error::arg("every agent needs one exponent per good"));
        }
        if exponents.iter().flatten().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::arg("Cobb-Douglas exponents must be positive"));
        }
        Ok(Self::single(Family::CobbDouglas { exponents: exponents.clone() }, goods, exponents.len()))
    }

    /// `n` agents with common exponents.
    pub fn homogeneous(exponents: Vec<f64>, n: usize) -> Result<Self> {
        Self::cobb_douglas(vec![exponents; n])
    }

    pub fn complements(alpha: f64, n: usize) -> Result<Self> {
        Self::check_alpha(alpha, n)?;
        Ok(Self::single(Family::Complements { alpha }, 2, n))
    }

    pub fn substitutes(alpha: f64, n: usize) -> Result<Self> {
        Self::check_alpha(alpha, n)?;
        Ok(Self::single(Family::Substitutes { alpha }, 2, n))
    }

    fn check_alpha(alpha: f64, n: usize) -> Result<()> {
        if !(alpha.is_finite() && alpha > 0.0) || n == 0 {
            return Err(Error::arg("need alpha > 0 and at least one agent"));
        }
        Ok(())
    }

    fn single(family: Family, goods: usize, n: usize) -> Self {
        EntropyModel {
            family,
            goods,
            agent_parts: vec![0; n],
            keys: (0..goods).map(|t| (t, vec![0])).collect(),
            distinguished_part: Some(0),
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn goods(&self) -> usize {
        self.goods
    }

    pub fn agent_count(&self) -> usize {
        self.agent_parts.len()
    }

    pub fn distinguished_part(&self) -> Option<PartId> {
        self.distinguished_part
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        let n = self.agent_count();
        match &self.family {
            Family::CobbDouglas { .. } => format!("cobb_douglas(N={n}, L={})", self.goods),
            Family::Complements { alpha } => format!("complements(N={n}, alpha={alpha})"),
            Family::Substitutes { alpha } => format!("substitutes(N={n}, alpha={alpha})"),
        }
    }

    /// Macro-state with this model's conserved quantities, totals listed in
    /// the model's key order.
    pub fn macro_state(&self, totals: &[f64]) -> Result<MacroState> {
        if totals.len() != self.keys.len() {
            return Err(Error::arg(format!(
                "model has {} conserved quantities, got {} totals",
                self.keys.len(),
                totals.len()
            )));
        }
        Ok(MacroState {
            quantities: self
                .keys
                .iter()
                .zip(totals)
                .map(|((good, component), &total)| crate::economy::ConservedQuantity {
                    good: *good,
                    component: component.clone(),
                    total,
                })
                .collect(),
            agent_count: self.agent_count(),
        })
    }

    fn check(&self, macro_state: &MacroState) -> Result<()> {
        if macro_state.agent_count != self.agent_count() {
            return Err(Error::arg(format!(
                "macro-state has {} agents, model has {}",
                macro_state.agent_count,
                self.agent_count()
            )));
        }
        let mut mine = self.keys.clone();
        let mut theirs: Vec<_> = macro_state
            .quantities
            .iter()
            .map(|q| (q.good, q.component.clone()))
            .collect();
        mine.sort();
        theirs.sort();
        if mine != theirs {
            return Err(Error::arg("macro-state quantities do not match the model"));
        }
        if let Some(q) = macro_state.quantities.iter().find(|q| !(q.total.is_finite() && q.total >= 0.0)) {
            return Err(Error::domain(format!("total {} of good {} is not admissible", q.total, q.good)));
        }
        Ok(())
    }

    /// Sum of the exponents on `good` over the agents in `component`.
    fn exponent_sum(&self, exponents: &[Vec<f64>], good: GoodIndex, component: &[PartId]) -> (f64, f64) {
        let mut a = 0.0;
        let mut log_gammas = 0.0;
        for (e, p) in exponents.iter().zip(&self.agent_parts) {
            if component.contains(p) {
                a += e[good];
                log_gammas += ln_gamma(e[good]);
            }
        }
        (a, log_gammas)
    }

    /// Position of the money quantity of the distinguished component.
    fn money_index(&self, macro_state: &MacroState) -> Result<usize> {
        let d = self
            .distinguished_part
            .ok_or_else(|| Error::domain("coolness needs a simple economy"))?;
        macro_state
            .quantities
            .iter()
            .position(|q| q.good == MONEY && q.component.contains(&d))
            .ok_or_else(|| Error::domain("no money quantity for the distinguished part"))
    }

    /// Per-good exponent sums over the whole economy, for canonical forms.
    fn canonical_exponents(&self) -> Result<(Vec<f64>, f64)> {
        if self.keys.len() != self.goods {
            return Err(Error::domain(
                "canonical forms need every good to form a single flow component",
            ));
        }
        match &self.family {
            Family::CobbDouglas { exponents } => {
                let mut a = vec![0.0; self.goods];
                let mut c = 0.0;
                for e in exponents {
                    for (acc, x) in a.iter_mut().zip(e) {
                        *acc += x;
                        c += ln_gamma(*x);
                    }
                }
                Ok((a, c))
            }
            _ => Ok((Vec::new(), 0.0)),
        }
    }
}

/// `log Z(P)`, the entropy of a macro-state up to an additive constant.
pub fn log_partition(model: &EntropyModel, macro_state: &MacroState) -> Result<Estimate> {
    model.check(macro_state)?;
    match &model.family {
        Family::CobbDouglas { exponents } => {
            // grouped by lowest part so unconnected parts add their own sums exactly
            let mut groups: BTreeMap<PartId, Vec<(GoodIndex, f64)>> = BTreeMap::new();
            for q in &macro_state.quantities {
                let (a, log_gammas) = model.exponent_sum(exponents, q.good, &q.component);
                let f = cobb_douglas_factor(a, log_gammas, q.total).map_err(|e| {
                    Error::domain(format!("good {} in parts {:?}: {e}", q.good, q.component))
                })?;
                let lead = q.component.iter().copied().min().unwrap_or(0);
                groups.entry(lead).or_default().push((q.good, f));
            }
            let mut total = 0.0;
            for mut g in groups.into_values() {
                g.sort_by_key(|x| x.0);
                total += g.iter().fold(0.0, |acc, x| acc + x.1);
            }
            Ok(Estimate {
                value: total,
                order: Order::Exact,
            })
        }
        _ => {
            let s = legendre_entropy(model, macro_state)?;
            Ok(Estimate {
                value: s.entropy,
                order: Order::Extensive,
            })
        }
    }
}

/// One Dirichlet factor `(A - 1) ln P + sum ln Gamma(alpha) - ln Gamma(A)`.
fn cobb_douglas_factor(a: f64, log_gammas: f64, p: f64) -> std::result::Result<f64, String> {
    if p == 0.0 {
        if a == 1.0 {
            return Ok(log_gammas - ln_gamma(a));
        }
        return Err(format!("zero total with exponent sum {a} has no finite entropy"));
    }
    Ok((a - 1.0) * p.ln() + log_gammas - ln_gamma(a))
}

/// `d log Z / d P_q` for every quantity, in macro-state order.
pub fn log_partition_gradient(model: &EntropyModel, macro_state: &MacroState) -> Result<Vec<f64>> {
    model.check(macro_state)?;
    match &model.family {
        Family::CobbDouglas { exponents } => macro_state
            .quantities
            .iter()
            .map(|q| {
                let (a, _) = model.exponent_sum(exponents, q.good, &q.component);
                if q.total > 0.0 {
                    Ok((a - 1.0) / q.total)
                } else {
                    Err(Error::domain(format!("zero total of good {}", q.good)))
                }
            })
            .collect(),
        _ => {
            let s = legendre_entropy(model, macro_state)?;
            Ok(macro_state
                .quantities
                .iter()
                .map(|q| if q.good == MONEY { s.point.beta } else { s.point.nu[0] })
                .collect())
        }
    }
}

/// Coolness `beta = d log Z / dM` of the distinguished money component.
pub fn coolness(model: &EntropyModel, macro_state: &MacroState) -> Result<Estimate> {
    let k = model.money_index(macro_state)?;
    let grad = log_partition_gradient(model, macro_state)?;
    let order = order_of(model);
    let beta = grad[k];
    if !(beta > 0.0) {
        return Err(Error::domain(format!("coolness {beta} is not positive")));
    }
    Ok(Estimate { value: beta, order })
}

fn order_of(model: &EntropyModel) -> Order {
    match model.family {
        Family::CobbDouglas { .. } => Order::Exact,
        _ => Order::Extensive,
    }
}

/// Coolness, good values and market prices `mu = nu / beta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodValues {
    pub beta: f64,
    /// `(good, nu)` for each non-money good, taken in the component of the
    /// distinguished part.
    pub nu: Vec<(GoodIndex, f64)>,
    pub prices: Vec<(GoodIndex, f64)>,
    pub order: Order,
}

pub fn good_values(model: &EntropyModel, macro_state: &MacroState) -> Result<GoodValues> {
    let k = model.money_index(macro_state)?;
    let d = model.distinguished_part.unwrap_or(0);
    let grad = log_partition_gradient(model, macro_state)?;
    let beta = grad[k];
    let mut nu = Vec::new();
    for (q, g) in macro_state.quantities.iter().zip(&grad) {
        if q.good != MONEY && q.component.contains(&d) {
            nu.push((q.good, *g));
        }
    }
    nu.sort_by_key(|x| x.0);
    if !(beta > 0.0) || nu.iter().any(|(_, v)| !(*v > 0.0)) {
        return Err(Error::domain(format!(
            "good values must be positive (beta {beta}, nu {nu:?})"
        )));
    }
    let prices = nu.iter().map(|&(t, v)| (t, v / beta)).collect();
    Ok(GoodValues {
        beta,
        nu,
        prices,
        order: order_of(model),
    })
}

/// One emitted result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub model: String,
    pub macro_state: MacroState,
    pub quantity: String,
    pub value: f64,
    pub order: Order,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_deviation: Option<f64>,
}
