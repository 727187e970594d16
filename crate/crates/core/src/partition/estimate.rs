use serde::{Deserialize, Serialize};

use super::{coolness, EntropyModel};
use crate::economy::{MacroState, MONEY};
use crate::error::{Error, Result};
use crate::stats::{effective_sample_size, mean};

const SIMPSON_DEPTH: usize = 40;

/// `log Z` difference between two money totals of the distinguished
/// component, by adaptive Simpson quadrature of the coolness.
pub fn thermo_integrate_log_z(
    model: &EntropyModel,
    macro_state: &MacroState,
    m_from: f64,
    m_to: f64,
) -> Result<f64> {
    let part = model
        .distinguished_part()
        .ok_or_else(|| Error::domain("thermodynamic integration needs a simple economy"))?;
    if !(m_from > 0.0 && m_to > 0.0 && m_from.is_finite() && m_to.is_finite()) {
        return Err(Error::domain("money interval must lie inside (0, inf)"));
    }
    if m_from == m_to {
        return Ok(0.0);
    }
    let beta = |m: f64| -> Result<f64> {
        Ok(coolness(model, &macro_state.with_total(MONEY, part, m)?)?.value)
    };
    let (a, b) = (m_from, m_to);
    let fa = beta(a)?;
    let fb = beta(b)?;
    let c = 0.5 * (a + b);
    let fc = beta(c)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    let tol = 1e-12 * whole.abs().max(1e-300);
    simpson(&beta, a, b, fa, fc, fb, whole, tol, SIMPSON_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &impl Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fc: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let c = 0.5 * (a + b);
    let (d, e) = (0.5 * (a + c), 0.5 * (c + b));
    let (fd, fe) = (f(d)?, f(e)?);
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson(f, a, c, fa, fd, fc, left, 0.5 * tol, depth - 1)?
        + simpson(f, c, b, fc, fe, fb, right, 0.5 * tol, depth - 1)?)
}

/// Coolness fitted to the occupancy of a small pot open to the economy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotEstimate {
    pub beta: f64,
    pub stderr: f64,
    pub samples: usize,
    pub effective_samples: f64,
}

const MIN_EFFECTIVE: f64 = 1000.0;
const JACKKNIFE_BLOCKS: usize = 50;

/// Exponential-rate fit `1 / mean` with a block-jackknife standard error.
///
/// Valid while the pot is small against the economy's money, so that the
/// occupancy law is locally exponential.
pub fn estimate_coolness_from_pot(series: &[f64]) -> Result<PotEstimate> {
    if series.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::arg("pot series must be non-negative"));
    }
    let ess = effective_sample_size(series);
    if series.len() < MIN_EFFECTIVE as usize || ess < MIN_EFFECTIVE {
        return Err(Error::arg(format!(
            "need {MIN_EFFECTIVE} effectively independent pot samples, have {ess:.0} of {}",
            series.len()
        )));
    }
    let m = mean(series);
    if m == 0.0 {
        return Err(Error::arg("pot never held money; the rate fit is degenerate"));
    }
    let size = series.len() / JACKKNIFE_BLOCKS;
    let used = size * JACKKNIFE_BLOCKS;
    let total: f64 = series[..used].iter().sum();
    let leave_out: Vec<f64> = series[..used]
        .chunks_exact(size)
        .map(|b| (used - size) as f64 / (total - b.iter().sum::<f64>()))
        .collect();
    let lm = mean(&leave_out);
    let k = JACKKNIFE_BLOCKS as f64;
    let var = (k - 1.0) / k * leave_out.iter().map(|x| (x - lm) * (x - lm)).sum::<f64>();
    Ok(PotEstimate {
        beta: 1.0 / m,
        stderr: var.sqrt(),
        samples: series.len(),
        effective_samples: ess,
    })
}
