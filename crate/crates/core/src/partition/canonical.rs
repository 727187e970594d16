use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{EntropyModel, Family, Order};
use crate::economy::MacroState;
use crate::error::{Error, Result};

/// Canonical parameters: `beta` conjugate to money, `nu[t - 1]` to good `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPoint {
    pub beta: f64,
    pub nu: Vec<f64>,
}

impl CanonicalPoint {
    pub fn new(beta: f64, nu: Vec<f64>) -> Self {
        CanonicalPoint { beta, nu }
    }

    fn from_vec(v: &[f64]) -> Self {
        CanonicalPoint {
            beta: v[0],
            nu: v[1..].to_vec(),
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.beta];
        v.extend_from_slice(&self.nu);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergy {
    /// `F = -log Z_c`, including every additive constant.
    pub value: f64,
    /// The `-N ln Gamma(alpha)` part of `value` for complements, which is
    /// often left out; zero for other families.
    pub log_gamma_constant: f64,
    pub order: Order,
}

/// Window of `|nu - beta| / beta` inside which the substitutes factor is
/// evaluated by its Taylor series about the diagonal.
const DIAGONAL_WINDOW: f64 = 1e-6;

/// `(b^-a - n^-a) / (n - b)` by series about `b`; `k` runs from 1.
fn sub_series(a: f64, b: f64, r: f64, deriv: bool) -> f64 {
    let mut poch = 1.0;
    let mut fact = 1.0;
    let mut sum = 0.0;
    for k in 1..=6 {
        let kf = k as f64;
        poch *= a + kf - 1.0;
        fact *= kf;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let c = sign * poch * b.powf(-a - kf) / fact;
        if deriv {
            if k >= 2 {
                sum += c * (kf - 1.0) * r.powi(k - 2);
            }
        } else {
            sum += c * r.powi(k - 1);
        }
    }
    sum
}

/// `h(b, n) = (b^-a - n^-a) / (n - b)`; the per-agent substitutes
/// canonical integral is `Gamma(a) h`.
fn sub_h(a: f64, b: f64, n: f64) -> f64 {
    let r = n - b;
    if r.abs() <= DIAGONAL_WINDOW * b {
        sub_series(a, b, r, false)
    } else {
        -b.powf(-a) * (-a * (r / b).ln_1p()).exp_m1() / r
    }
}

/// `dh/dn`; `dh/db` follows from the symmetry `h(b, n) = h(n, b)`.
fn sub_dh_dn(a: f64, b: f64, n: f64) -> f64 {
    let r = n - b;
    if r.abs() <= DIAGONAL_WINDOW * b {
        sub_series(a, b, r, true)
    } else {
        (a * n.powf(-a - 1.0) - sub_h(a, b, n)) / r
    }
}

fn check_point(model: &EntropyModel, v: &[f64]) -> Result<()> {
    if v.len() != model.goods() {
        return Err(Error::arg(format!(
            "canonical point has {} components, model has {} goods",
            v.len(),
            model.goods()
        )));
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::arg("canonical parameters must all be positive"));
    }
    Ok(())
}

/// `F` and its gradient at a positive canonical vector.
fn free_energy_vec(model: &EntropyModel, v: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
    let n = model.agent_count() as f64;
    let (a, c) = model.canonical_exponents()?;
    Ok(match model.family() {
        Family::CobbDouglas { .. } => {
            let f = a.iter().zip(v).map(|(a, x)| a * x.ln()).sum::<f64>() - c;
            let g = a.iter().zip(v).map(|(a, x)| a / x).collect();
            (f, g, 0.0)
        }
        Family::Complements { alpha } => {
            let (b, u) = (v[0], v[1]);
            let lg = ln_gamma(*alpha);
            let f = n * ((alpha - 1.0) * (b + u).ln() + b.ln() + u.ln()) - n * lg;
            let s = (alpha - 1.0) / (b + u);
            (f, vec![n * (s + 1.0 / b), n * (s + 1.0 / u)], -n * lg)
        }
        Family::Substitutes { alpha } => {
            let (b, u) = (v[0], v[1]);
            let h = sub_h(*alpha, b, u);
            let f = -n * (ln_gamma(*alpha) + h.ln());
            let gb = -n * sub_dh_dn(*alpha, u, b) / h;
            let gu = -n * sub_dh_dn(*alpha, b, u) / h;
            (f, vec![gb, gu], 0.0)
        }
    })
}

/// Canonical free energy `F = -log Z_c`.
pub fn free_energy(model: &EntropyModel, point: &CanonicalPoint) -> Result<FreeEnergy> {
    let v = point.to_vec();
    check_point(model, &v)?;
    let (value, _, log_gamma_constant) = free_energy_vec(model, &v)?;
    Ok(FreeEnergy {
        value,
        log_gamma_constant,
        order: Order::Exact,
    })
}

/// Canonical mean totals `grad F`, money first.
pub fn equilibrium_amounts(model: &EntropyModel, point: &CanonicalPoint) -> Result<Vec<f64>> {
    let v = point.to_vec();
    check_point(model, &v)?;
    Ok(free_energy_vec(model, &v)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegendreSolution {
    /// `min_v (v . P - F(v))`.
    pub entropy: f64,
    pub point: CanonicalPoint,
    pub iterations: usize,
    /// Final `max |P - grad F|`.
    pub residual: f64,
    pub order: Order,
}

const MAX_ITER: usize = 200;
const FD_STEP: f64 = 1e-5;
/// Largest `|ln v|` before the optimum is declared to sit on the boundary.
const LOG_BOUND: f64 = 700.0;

/// Entropy as the Legendre transform of the free energy, minimised by
/// damped Newton steps in `ln v`.
pub fn legendre_entropy(model: &EntropyModel, macro_state: &MacroState) -> Result<LegendreSolution> {
    model.check(macro_state)?;
    let p = macro_state.totals_vec()?;
    if p.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::domain("Legendre entropy needs positive totals"));
    }
    let n = model.agent_count() as f64;
    let tol = 1e-10 * n;
    let residual = |x: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let v: Vec<f64> = x.iter().map(|t| t.exp()).collect();
        let (_, g, _) = free_energy_vec(model, &v)?;
        let r: Vec<f64> = p.iter().zip(&g).map(|(pk, gk)| pk - gk).collect();
        // gradient of the objective in log coordinates
        let gx = r.iter().zip(&v).map(|(rk, vk)| rk * vk).collect();
        Ok((r, gx))
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let l2 = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut x: Vec<f64> = p.iter().map(|pk| (n / pk).ln()).collect();
    let mut iterations = 0;
    loop {
        let (r, gx) = residual(&x)?;
        let res = norm(&r);
        if res < tol {
            let v: Vec<f64> = x.iter().map(|t| t.exp()).collect();
            let (f, _, _) = free_energy_vec(model, &v)?;
            let entropy = v.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() - f;
            return Ok(LegendreSolution {
                entropy,
                point: CanonicalPoint::from_vec(&v),
                iterations,
                residual: res,
                order: Order::Extensive,
            });
        }
        if iterations == MAX_ITER {
            return Err(Error::Numeric(format!(
                "Legendre solver did not converge in {MAX_ITER} iterations: ln v = {x:?}, residual {res:e}, tolerance {tol:e}"
            )));
        }
        iterations += 1;
        let d = x.len();
        let mut h = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += FD_STEP;
            xm[j] -= FD_STEP;
            let (_, gp) = residual(&xp)?;
            let (_, gm) = residual(&xm)?;
            for i in 0..d {
                h[i][j] = -(gp[i] - gm[i]) / (2.0 * FD_STEP);
            }
        }
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (h[i][j] + h[j][i]);
                h[i][j] = s;
                h[j][i] = s;
            }
        }
        // gx is the objective gradient and h minus its Jacobian
        let mut step = solve(h, gx.clone())
            .filter(|s| s.iter().zip(&gx).map(|(a, b)| a * b).sum::<f64>() < 0.0)
            .unwrap_or_else(|| gx.iter().map(|g| -g).collect());
        let big = norm(&step);
        if big > 2.0 {
            step.iter_mut().for_each(|s| *s *= 2.0 / big);
        }
        let merit = l2(&gx);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            if let Ok((_, g_trial)) = residual(&trial) {
                if g_trial.iter().all(|v| v.is_finite()) && l2(&g_trial) < merit {
                    x = trial;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Numeric(format!(
                "Legendre line search stalled at ln v = {x:?}, residual {res:e}"
            )));
        }
        if x.iter().any(|t| t.abs() > LOG_BOUND) {
            return Err(Error::Numeric(format!(
                "Legendre optimum lies on the boundary of the canonical domain (ln v = {x:?})"
            )));
        }
    }
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
