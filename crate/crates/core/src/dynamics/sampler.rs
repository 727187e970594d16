use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::economy::{GoodIndex, GoodVector, UtilitySpec, MONEY};
use crate::error::{Error, Result};

/// Parameters of the slice samplers used for non-Cobb-Douglas utilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    pub sweeps: usize,
    /// Relative width of the excluded band at each end of a coordinate's range.
    pub margin: f64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            sweeps: 20,
            margin: 1e-12,
        }
    }
}

const MAX_SHRINK: usize = 200;
const START_TRIES: usize = 64;

/// Splits `pool` into `(a, b)` with `a ~ x` and `a + b == pool` exactly.
pub fn split_exact(pool: f64, x: f64) -> (f64, f64) {
    let x = x.clamp(0.0, pool);
    // the larger share is subtracted from the pool, which is exact (Sterbenz)
    if x <= 0.5 * pool {
        let b = pool - x;
        (pool - b, b)
    } else {
        (x, pool - x)
    }
}

/// One shrinkage slice update of `x` on the bounded interval `[lo, hi]`.
fn slice_step<R: Rng + ?Sized>(
    x: f64,
    lo: f64,
    hi: f64,
    mut log_f: impl FnMut(f64) -> f64,
    rng: &mut R,
) -> f64 {
    let level = log_f(x) - rng.sample::<f64, _>(Exp1);
    let (mut a, mut b) = (lo, hi);
    for _ in 0..MAX_SHRINK {
        let y = a + rng.random::<f64>() * (b - a);
        if log_f(y) > level {
            return y;
        }
        if y < x {
            a = y;
        } else {
            b = y;
        }
    }
    x
}

/// Coordinate-wise slice sampling of a density on a box, started at `start`
/// (falling back to the centre, then to uniform points, when the start has
/// zero or infinite density).
fn slice_box<R: Rng + ?Sized>(
    start: Vec<f64>,
    bounds: &[(f64, f64)],
    log_f: impl Fn(&[f64]) -> f64,
    sweeps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut x: Vec<f64> = start
        .iter()
        .zip(bounds)
        .map(|(v, &(lo, hi))| v.clamp(lo, hi))
        .collect();
    if !log_f(&x).is_finite() {
        x = bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    }
    let mut tries = 0;
    while !log_f(&x).is_finite() {
        if tries == START_TRIES {
            return Err(Error::Sampling(
                "target density vanishes or diverges on the whole exchange box".into(),
            ));
        }
        x = bounds
            .iter()
            .map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
            .collect();
        tries += 1;
    }
    for _ in 0..sweeps {
        for k in 0..x.len() {
            let (lo, hi) = bounds[k];
            let mut probe = x.clone();
            let xk = slice_step(
                x[k],
                lo,
                hi,
                |v| {
                    probe[k] = v;
                    log_f(&probe)
                },
                rng,
            );
            x[k] = xk;
        }
    }
    Ok(x)
}

fn check_len(spec: &UtilitySpec, p: &GoodVector) -> Result<()> {
    let need = match spec {
        UtilitySpec::CobbDouglas { exponents } => exponents.len(),
        UtilitySpec::PerfectSubstitutes { goods, .. } | UtilitySpec::Complements { goods, .. } => {
            goods[0].max(goods[1]) + 1
        }
    };
    if p.len() < need {
        return Err(Error::arg(format!(
            "holdings of length {} do not fit utility {spec:?}",
            p.len()
        )));
    }
    Ok(())
}

/// Pools the holdings of two agents in `goods` and redistributes the pool
/// with density proportional to `u_i(p_i') u_j(p_j')`.
///
/// Shares of exchanged goods sum to the pool exactly; other goods are
/// untouched. Two Cobb-Douglas agents are sampled exactly, one Beta draw per
/// good; any other pair by slice sampling warm-started at the current split.
pub fn sample_redistribution<R: Rng + ?Sized>(
    u_i: &UtilitySpec,
    u_j: &UtilitySpec,
    p_i: &GoodVector,
    p_j: &GoodVector,
    goods: &[GoodIndex],
    cfg: &SliceConfig,
    rng: &mut R,
) -> Result<(GoodVector, GoodVector)> {
    if p_i.len() != p_j.len() {
        return Err(Error::arg("the two agents hold different numbers of goods"));
    }
    check_len(u_i, p_i)?;
    check_len(u_j, p_j)?;
    if let Some(t) = goods.iter().find(|&&t| t >= p_i.len()) {
        return Err(Error::arg(format!("exchanged good {t} does not exist")));
    }
    let mut a = p_i.clone();
    let mut b = p_j.clone();
    if let (UtilitySpec::CobbDouglas { exponents: ai }, UtilitySpec::CobbDouglas { exponents: aj }) =
        (u_i, u_j)
    {
        for &t in goods {
            let pool = p_i[t] + p_j[t];
            let x = if pool > 0.0 {
                pool * beta(ai[t], aj[t], rng)?
            } else {
                0.0
            };
            (a[t], b[t]) = split_exact(pool, x);
        }
        return Ok((a, b));
    }
    let active: Vec<GoodIndex> = goods
        .iter()
        .copied()
        .filter(|&t| p_i[t] + p_j[t] > 0.0)
        .collect();
    for &t in goods {
        if p_i[t] + p_j[t] == 0.0 {
            (a[t], b[t]) = (0.0, 0.0);
        }
    }
    if active.is_empty() {
        return Ok((a, b));
    }
    let pools: Vec<f64> = active.iter().map(|&t| p_i[t] + p_j[t]).collect();
    let bounds: Vec<(f64, f64)> = pools
        .iter()
        .map(|&pool| (cfg.margin * pool, pool * (1.0 - cfg.margin)))
        .collect();
    let start: Vec<f64> = active.iter().map(|&t| p_i[t]).collect();
    let log_f = |x: &[f64]| {
        let mut qi = a.to_vec();
        let mut qj = b.to_vec();
        for ((&t, &v), &pool) in active.iter().zip(x).zip(&pools) {
            qi[t] = v;
            qj[t] = pool - v;
        }
        let v = u_i.log_density(&qi) + u_j.log_density(&qj);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let x = slice_box(start, &bounds, log_f, cfg.sweeps, rng)?;
    for ((&t, &v), &pool) in active.iter().zip(&x).zip(&pools) {
        (a[t], b[t]) = split_exact(pool, v);
    }
    Ok((a, b))
}

fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    Beta::new(a, b)
        .map(|d| d.sample(rng))
        .map_err(|e| Error::Sampling(format!("Beta({a}, {b}): {e}")))
}

fn gamma<R: Rng + ?Sized>(a: f64, rng: &mut R) -> Result<f64> {
    Gamma::new(a, 1.0)
        .map(|d| d.sample(rng))
        .map_err(|e| Error::Sampling(format!("Gamma({a}): {e}")))
}

/// Pools an agent's money with a trader's pot and returns the agent's new
/// holdings and the new pot. The trader's utility is flat, so the agent's
/// share has density proportional to its own utility.
pub fn sample_pot_exchange<R: Rng + ?Sized>(
    spec: &UtilitySpec,
    holdings: &GoodVector,
    pot: f64,
    cfg: &SliceConfig,
    rng: &mut R,
) -> Result<(GoodVector, f64)> {
    check_len(spec, holdings)?;
    if !(pot.is_finite() && pot >= 0.0) {
        return Err(Error::arg(format!("pot must be non-negative, got {pot}")));
    }
    let pool = holdings[MONEY] + pot;
    let mut next = holdings.clone();
    if pool == 0.0 {
        return Ok((next, 0.0));
    }
    let share = match spec {
        UtilitySpec::CobbDouglas { exponents } => pool * beta(exponents[MONEY], 1.0, rng)?,
        _ => {
            let base = holdings.to_vec();
            let log_f = |x: &[f64]| {
                let mut q = base.clone();
                q[MONEY] = x[0];
                let v = spec.log_density(&q);
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            };
            let bounds = [(cfg.margin * pool, pool * (1.0 - cfg.margin))];
            slice_box(vec![holdings[MONEY]], &bounds, log_f, cfg.sweeps, rng)?[0]
        }
    };
    let (m, rest) = split_exact(pool, share);
    next[MONEY] = m;
    Ok((next, rest))
}

/// Posted prices `mu_t` in money for a set of non-money goods.
pub type Prices = [(GoodIndex, f64)];

pub(crate) fn check_prices(prices: &Prices, goods: usize) -> Result<()> {
    for (k, &(t, mu)) in prices.iter().enumerate() {
        if t == MONEY || t >= goods {
            return Err(Error::arg(format!("good {t} cannot carry a price")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::arg(format!("price of good {t} must be positive, got {mu}")));
        }
        if prices[..k].iter().any(|&(s, _)| s == t) {
            return Err(Error::arg(format!("good {t} priced twice")));
        }
    }
    Ok(())
}

/// Wealth `m + sum_t mu_t g_t` of a holding at the given prices.
pub fn budget_wealth(holdings: &[f64], prices: &Prices) -> f64 {
    prices
        .iter()
        .fold(holdings[MONEY], |w, &(t, mu)| w + mu * holdings[t])
}

/// Resamples money and the priced goods on the budget set of fixed wealth
/// with density proportional to the agent's utility.
///
/// Cobb-Douglas agents are sampled exactly (a Dirichlet split of the wealth);
/// others by slice moves along each money-good edge of the budget simplex.
/// Money absorbs the rounding, so the budget identity holds to a few ulps.
pub fn sample_budget_line<R: Rng + ?Sized>(
    spec: &UtilitySpec,
    holdings: &GoodVector,
    prices: &Prices,
    cfg: &SliceConfig,
    rng: &mut R,
) -> Result<GoodVector> {
    check_len(spec, holdings)?;
    check_prices(prices, holdings.len())?;
    let wealth = budget_wealth(holdings, prices);
    let mut next = holdings.clone();
    if wealth == 0.0 || prices.is_empty() {
        return Ok(next);
    }
    match spec {
        UtilitySpec::CobbDouglas { exponents } => {
            let mut draws = vec![gamma(exponents[MONEY], rng)?];
            for &(t, _) in prices {
                draws.push(gamma(exponents[t], rng)?);
            }
            let total: f64 = draws.iter().sum();
            for (&(t, mu), d) in prices.iter().zip(&draws[1..]) {
                next[t] = wealth * (d / total) / mu;
            }
        }
        _ => {
            let log_f = |q: &[f64]| {
                let v = spec.log_density(q);
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            };
            if !log_f(&next).is_finite() {
                let share = wealth / (prices.len() + 1) as f64;
                next[MONEY] = share;
                for &(t, mu) in prices {
                    next[t] = share / mu;
                }
            }
            for _ in 0..cfg.sweeps {
                for &(t, mu) in prices {
                    // the edge keeps m + mu g fixed
                    let c = next[MONEY] + mu * next[t];
                    if c == 0.0 {
                        continue;
                    }
                    let top = c / mu;
                    let bounds = [(cfg.margin * top, top * (1.0 - cfg.margin))];
                    let base = next.to_vec();
                    let g = slice_box(
                        vec![next[t]],
                        &bounds,
                        |x| {
                            let mut q = base.clone();
                            q[t] = x[0];
                            q[MONEY] = (c - mu * x[0]).max(0.0);
                            log_f(&q)
                        },
                        1,
                        rng,
                    )?[0];
                    next[t] = g;
                    next[MONEY] = (c - mu * g).max(0.0);
                }
            }
        }
    }
    next[MONEY] = prices
        .iter()
        .fold(wealth, |w, &(t, mu)| w - mu * next[t])
        .max(0.0);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::stats::{ks_pvalue, ks_statistic, mean};

    fn gv(v: &[f64]) -> GoodVector {
        GoodVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn split_is_exact() {
        for &(pool, x) in &[(10.0, 3.3), (0.1 + 0.2, 0.1), (1e9, 1e-9), (7.0, 6.999), (5.0, 9.0)] {
            let (a, b) = split_exact(pool, x);
            assert_eq!(a + b, pool);
            assert!(a >= 0.0 && b >= 0.0);
        }
    }

    #[test]
    fn cobb_douglas_share_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ui = UtilitySpec::CobbDouglas { exponents: vec![2.0] };
        let uj = UtilitySpec::CobbDouglas { exponents: vec![3.0] };
        let xs: Vec<f64> = (0..40_000)
            .map(|_| {
                sample_redistribution(&ui, &uj, &gv(&[4.0]), &gv(&[6.0]), &[0], &SliceConfig::default(), &mut rng)
                    .unwrap()
                    .0[0]
            })
            .collect();
        // share ~ 10 Beta(2, 3): mean 4, sd 10 * sqrt(6 / 150)
        let se = 10.0 * (6.0f64 / 150.0).sqrt() / (xs.len() as f64).sqrt();
        assert!((mean(&xs) - 4.0).abs() < 4.0 * se);
    }

    #[test]
    fn unexchanged_goods_are_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = UtilitySpec::Complements { alpha: 2.0, goods: [0, 1] };
        let (a, b) = sample_redistribution(
            &u,
            &u,
            &gv(&[1.0, 2.0, 5.0]),
            &gv(&[3.0, 1.0, 7.0]),
            &[0],
            &SliceConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(&a[1..], &[2.0, 5.0]);
        assert_eq!(&b[1..], &[1.0, 7.0]);
        assert_eq!(a[0] + b[0], 4.0);
    }

    #[test]
    fn vanishing_density_is_a_sampling_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = UtilitySpec::Complements { alpha: 2.0, goods: [0, 1] };
        let r = sample_redistribution(
            &u,
            &u,
            &gv(&[1.0, 0.0]),
            &gv(&[1.0, 0.0]),
            &[0],
            &SliceConfig::default(),
            &mut rng,
        );
        assert!(matches!(r, Err(Error::Sampling(_))));
    }

    #[test]
    fn flat_budget_line_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u = UtilitySpec::flat(2);
        let gs: Vec<f64> = (0..20_000)
            .map(|_| {
                let p = sample_budget_line(&u, &gv(&[4.0, 6.0]), &[(1, 1.0)], &SliceConfig::default(), &mut rng)
                    .unwrap();
                assert!((p[0] + p[1] - 10.0).abs() < 1e-14);
                p[1]
            })
            .collect();
        let d = ks_statistic(&gs, |g| (g / 10.0).clamp(0.0, 1.0));
        assert!(ks_pvalue(d, gs.len()) > 0.01);
    }

    #[test]
    fn zero_wealth_stays_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = UtilitySpec::Complements { alpha: 2.0, goods: [0, 1] };
        let p = sample_budget_line(&u, &gv(&[0.0, 0.0]), &[(1, 2.0)], &SliceConfig::default(), &mut rng)
            .unwrap();
        assert_eq!(p.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn prices_are_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = UtilitySpec::flat(2);
        let cfg = SliceConfig::default();
        assert!(sample_budget_line(&u, &gv(&[1.0, 1.0]), &[(1, 0.0)], &cfg, &mut rng).is_err());
        assert!(sample_budget_line(&u, &gv(&[1.0, 1.0]), &[(0, 1.0)], &cfg, &mut rng).is_err());
    }

    #[test]
    fn pot_exchange_conserves_money() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = UtilitySpec::Complements { alpha: 2.0, goods: [0, 1] };
        let (p, pot) =
            sample_pot_exchange(&u, &gv(&[0.7, 3.0]), 0.2, &SliceConfig::default(), &mut rng).unwrap();
        assert_eq!(p[0] + pot, 0.7 + 0.2);
        assert_eq!(p[1], 3.0);
    }
}
