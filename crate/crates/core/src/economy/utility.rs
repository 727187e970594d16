use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a good type. Good 0 is money.
pub type GoodIndex = usize;

pub const MONEY: GoodIndex = 0;

/// Non-negative amounts of each good held by one agent (or summed over many).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GoodVector(Vec<f64>);

impl GoodVector {
    pub fn new(amounts: Vec<f64>) -> Result<Self> {
        if let Some((t, x)) = amounts
            .iter()
            .enumerate()
            .find(|(_, x)| !(x.is_finite() && **x >= 0.0))
        {
            return Err(Error::arg(format!(
                "good {t} has amount {x}; amounts must be finite and non-negative"
            )));
        }
        Ok(GoodVector(amounts))
    }

    pub fn zeros(goods: usize) -> Self {
        GoodVector(vec![0.0; goods])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Mutable view for the dynamics, which maintain non-negativity themselves.
    pub(crate) fn amounts_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl TryFrom<Vec<f64>> for GoodVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        GoodVector::new(v)
    }
}

impl From<GoodVector> for Vec<f64> {
    fn from(v: GoodVector) -> Self {
        v.0
    }
}

impl Deref for GoodVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GoodVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// An agent's utility family.
///
/// Only ratios of utilities matter to the dynamics, so every family is
/// defined up to a positive constant factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UtilitySpec {
    /// `u(p) = prod_t p_t^(alpha_t - 1)`.
    CobbDouglas { exponents: Vec<f64> },
    /// `u(p) = (p_a + p_b)^(alpha - 1)`, flat in every other good.
    PerfectSubstitutes { alpha: f64, goods: [GoodIndex; 2] },
    /// `u(p) = min(p_a, p_b)^(alpha - 1)`, flat in every other good.
    Complements { alpha: f64, goods: [GoodIndex; 2] },
}

impl UtilitySpec {
    /// Flat utility over `goods` goods.
    pub fn flat(goods: usize) -> Self {
        UtilitySpec::CobbDouglas {
            exponents: vec![1.0; goods],
        }
    }

    pub fn validate(&self, goods: usize) -> Result<()> {
        match self {
            UtilitySpec::CobbDouglas { exponents } => {
                if exponents.len() != goods {
                    return Err(Error::arg(format!(
                        "Cobb-Douglas utility has {} exponents for {goods} goods",
                        exponents.len()
                    )));
                }
                if exponents.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(Error::arg("Cobb-Douglas exponents must be positive"));
                }
            }
            UtilitySpec::PerfectSubstitutes { alpha, goods: pair }
            | UtilitySpec::Complements { alpha, goods: pair } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::arg(format!("alpha must be positive, got {alpha}")));
                }
                if pair[0] == pair[1] {
                    return Err(Error::arg("utility good pair must name two distinct goods"));
                }
                if pair.iter().any(|&t| t >= goods) {
                    return Err(Error::arg(format!(
                        "utility good pair {pair:?} out of range for {goods} goods"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exponent on good `t` for Cobb-Douglas utilities.
    pub fn cobb_douglas_exponent(&self, t: GoodIndex) -> Option<f64> {
        match self {
            UtilitySpec::CobbDouglas { exponents } => exponents.get(t).copied(),
            _ => None,
        }
    }

    pub fn is_cobb_douglas(&self) -> bool {
        matches!(self, UtilitySpec::CobbDouglas { .. })
    }

    /// Unchecked log-utility on a raw slice; the hot path of the samplers.
    pub(crate) fn log_density(&self, p: &[f64]) -> f64 {
        match self {
            UtilitySpec::CobbDouglas { exponents } => exponents
                .iter()
                .zip(p)
                .filter(|(a, _)| **a != 1.0)
                .map(|(a, x)| (a - 1.0) * x.ln())
                .sum(),
            UtilitySpec::PerfectSubstitutes { alpha, goods } => {
                power_log(*alpha, p[goods[0]] + p[goods[1]])
            }
            UtilitySpec::Complements { alpha, goods } => {
                power_log(*alpha, p[goods[0]].min(p[goods[1]]))
            }
        }
    }
}

/// `(alpha - 1) * ln(x)` with the flat case kept finite at `x = 0`.
fn power_log(alpha: f64, x: f64) -> f64 {
    if alpha == 1.0 {
        0.0
    } else {
        (alpha - 1.0) * x.ln()
    }
}

/// `log u(p)`.
///
/// Returns `-inf` where the utility vanishes and `+inf` at boundary points
/// where an exponent below one makes it diverge.
pub fn log_utility(spec: &UtilitySpec, p: &GoodVector) -> Result<f64> {
    let goods = match spec {
        UtilitySpec::CobbDouglas { exponents } => exponents.len(),
        UtilitySpec::PerfectSubstitutes { goods, .. } | UtilitySpec::Complements { goods, .. } => {
            goods[0].max(goods[1]) + 1
        }
    };
    let len_ok = match spec {
        UtilitySpec::CobbDouglas { .. } => p.len() == goods,
        _ => p.len() >= goods,
    };
    if !len_ok {
        return Err(Error::arg(format!(
            "possession vector of length {} does not fit utility {spec:?}",
            p.len()
        )));
    }
    Ok(spec.log_density(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gv(v: &[f64]) -> GoodVector {
        GoodVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn flat_cobb_douglas_is_zero() {
        let spec = UtilitySpec::flat(2);
        assert_eq!(log_utility(&spec, &gv(&[5.0, 3.0])).unwrap(), 0.0);
    }

    #[test]
    fn complements_take_the_minimum() {
        let spec = UtilitySpec::Complements {
            alpha: 2.0,
            goods: [0, 1],
        };
        let v = log_utility(&spec, &gv(&[3.0, 7.0])).unwrap();
        assert!((v - 3.0f64.ln()).abs() < 1e-15);
        assert!((v - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn substitutes_add_the_pair() {
        let spec = UtilitySpec::PerfectSubstitutes {
            alpha: 3.0,
            goods: [0, 1],
        };
        let v = log_utility(&spec, &gv(&[1.0, 2.0])).unwrap();
        assert!((v - 2.0 * 3.0f64.ln()).abs() < 1e-15);
        assert!((v - 2.1972).abs() < 1e-4);
    }

    #[test]
    fn vanishing_and_diverging_boundaries() {
        let comp = UtilitySpec::Complements {
            alpha: 2.0,
            goods: [0, 1],
        };
        assert_eq!(
            log_utility(&comp, &gv(&[0.0, 4.0])).unwrap(),
            f64::NEG_INFINITY
        );
        let cd = UtilitySpec::CobbDouglas {
            exponents: vec![0.5, 1.0],
        };
        assert_eq!(log_utility(&cd, &gv(&[0.0, 4.0])).unwrap(), f64::INFINITY);
        // a flat good at zero contributes nothing rather than 0 * inf
        let cd = UtilitySpec::CobbDouglas {
            exponents: vec![2.0, 1.0],
        };
        assert_eq!(log_utility(&cd, &gv(&[1.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let spec = UtilitySpec::flat(2);
        assert!(matches!(
            log_utility(&spec, &gv(&[1.0])),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn negative_amounts_are_rejected() {
        assert!(GoodVector::new(vec![1.0, -0.5]).is_err());
        assert!(serde_json::from_str::<GoodVector>("[1.0, -2.0]").is_err());
    }

    #[test]
    fn validation_catches_bad_parameters() {
        assert!(UtilitySpec::CobbDouglas {
            exponents: vec![1.0, 0.0]
        }
        .validate(2)
        .is_err());
        assert!(UtilitySpec::Complements {
            alpha: 2.0,
            goods: [1, 1]
        }
        .validate(2)
        .is_err());
        assert!(UtilitySpec::PerfectSubstitutes {
            alpha: -1.0,
            goods: [0, 1]
        }
        .validate(2)
        .is_err());
        assert!(UtilitySpec::flat(3).validate(2).is_err());
    }
}
