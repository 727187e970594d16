use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::script::{ScriptConfig, ScriptRunner, TraderAction};
use super::{financial_equilibrium, flanking_states, match_money, Recipient, System, LOG_Z_BAND};
use crate::dynamics::{simulate, Horizon, SimConfig};
use crate::economy::{Economy, MacroState, MicroState, Topology, UtilitySpec, MONEY};
use crate::error::{Error, Result};
use crate::partition::{log_partition, log_partition_gradient, thermo_integrate_log_z, EntropyModel};
use crate::stats::mean;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub agents: usize,
    pub seed: u64,
    /// Slip a money confiscation into the merge check; the check must fail.
    pub wrong_sign: bool,
    /// Markdown below the market price on the selling path of the flanks.
    pub flank_markdown: f64,
    /// Replicates of the opening-flow measurement.
    pub flow_replicates: usize,
    pub script: ScriptConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            agents: 50,
            seed: 1,
            wrong_sign: false,
            flank_markdown: 1e-3,
            flow_replicates: 400,
            script: ScriptConfig::default(),
        }
    }
}

impl SuiteConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config: {e}")))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomCheck {
    pub axiom: String,
    pub property: String,
    pub measured: BTreeMap<String, f64>,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub agents: usize,
    pub checks: Vec<AxiomCheck>,
    pub all_passed: bool,
}

impl SuiteReport {
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<6} {:<6} property", "axiom", "result");
        for c in &self.checks {
            let verdict = if c.passed { "pass" } else { "FAIL" };
            let _ = writeln!(s, "{:<6} {:<6} {}", c.axiom, verdict, c.property);
        }
        let _ = writeln!(
            s,
            "{} of {} checks passed",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len()
        );
        s
    }
}

fn check(axiom: &str, property: &str, measured: &[(&str, f64)], tolerance: f64, passed: bool) -> AxiomCheck {
    AxiomCheck {
        axiom: axiom.into(),
        property: property.into(),
        measured: measured.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        tolerance,
        passed,
    }
}

fn goods() -> Vec<String> {
    vec!["money".into(), "grain".into()]
}

/// Deterministic mixed population with exponents in [1.5, 3].
fn population(n: usize) -> Vec<UtilitySpec> {
    (0..n)
        .map(|i| UtilitySpec::CobbDouglas {
            exponents: vec![1.5 + 0.5 * (i % 4) as f64, 3.0 - 0.5 * (i % 3) as f64],
        })
        .collect()
}

/// Runs the scripted checks of the ordering axioms. Failed checks are
/// report entries, not errors.
pub fn run_axiom_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let n = cfg.agents.max(4);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = Economy::single_part(goods(), population(n))?;
    let per_agent = [4.0, 3.0];
    let totals = [per_agent[0] * n as f64, per_agent[1] * n as f64];
    let mut checks = vec![
        scaling_check(&base, &totals)?,
        split_merge_check(cfg, n, &mut rng)?,
        merge_check(cfg, n, &mut rng)?,
        money_check(cfg, &base, &totals, &mut rng)?,
        concavity_check(&base, &totals, &mut rng)?,
    ];
    checks.extend(equilibrium_checks(cfg, n, &mut rng)?);
    checks.push(flank_check(cfg, &base, &totals)?);
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport {
        seed: cfg.seed,
        agents: n,
        checks,
        all_passed,
    })
}

fn scaling_check(base: &Economy, totals: &[f64]) -> Result<AxiomCheck> {
    let n = base.agent_count() as f64;
    let m = EntropyModel::from_economy(base)?;
    let x = MacroState::single_part(totals, base.agent_count());
    let zeta = log_partition(&m, &x)?.value / n;
    let mut worst: f64 = 0.0;
    let mut measured = vec![("zeta", zeta)];
    for (name, lambda) in [("zeta_half", 0.5), ("zeta_double", 2.0)] {
        let e = base.scaled(lambda)?;
        let ms = EntropyModel::from_economy(&e)?;
        let xs = x.scaled(lambda);
        let z = log_partition(&ms, &xs)?.value / e.agent_count() as f64;
        worst = worst.max((z - zeta).abs());
        measured.push((name, z));
    }
    // finite-size corrections are O(log N / N) per good
    let tol = 2.0 * totals.len() as f64 * n.ln() / n;
    measured.push(("max_difference", worst));
    Ok(check(
        "A4",
        "scaled copies have the same entropy per agent up to O(log N / N)",
        &measured,
        tol,
        worst <= tol,
    ))
}

fn two_part(n: usize, rng: &mut ChaCha8Rng) -> Result<(Economy, MicroState)> {
    let half = n / 2;
    let e = Economy::isolated_parts(goods(), vec![population(half), population(n - half)])?
        .with_topology(Topology::AllToAll { rate: 2.0 / n as f64 })?;
    let m = MacroState {
        quantities: crate::economy::economy_keys(&e)
            .into_iter()
            .map(|(good, component)| crate::economy::ConservedQuantity {
                good,
                total: rng.random_range(2.0..4.0) * half as f64,
                component,
            })
            .collect(),
        agent_count: n,
    };
    let s = MicroState::stationary_draw(&e, &m, rng)?;
    Ok((e, s))
}

fn split_merge_check(cfg: &SuiteConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<AxiomCheck> {
    let (e, s) = two_part(n, rng)?;
    let e = e.set_contact(0, 1, &[MONEY], true)?;
    let mut r = ScriptRunner::new(e, s, cfg.script.clone(), rng.random())?;
    r.apply(&TraderAction::Relax)?;
    let before = r.log_z();
    let split = r.apply(&TraderAction::BreakContact { parts: [0, 1], goods: vec![MONEY] })?;
    let merge = r.apply(&TraderAction::MakeContact { parts: [0, 1], goods: vec![MONEY] })?;
    let cycle = r.log_z() - before;
    let band = LOG_Z_BAND * n as f64;
    Ok(check(
        "A5",
        "breaking then remaking contact leaves total log Z unchanged; the split loses at most 3 standard errors",
        &[
            ("split_delta", split.delta),
            ("split_stderr", split.stderr),
            ("merge_delta", merge.delta),
            ("cycle_delta", cycle),
        ],
        3.0,
        cycle.abs() <= band && !split.flagged && !merge.flagged,
    ))
}

fn merge_check(cfg: &SuiteConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<AxiomCheck> {
    // lambda X and (1 - lambda) Y from differently endowed copies
    let lambda = 0.4;
    let a = Economy::single_part(goods(), population(n))?.scaled(lambda)?;
    let b = Economy::single_part(goods(), population(n))?.scaled(1.0 - lambda)?;
    let na = a.agent_count() as f64;
    let nb = b.agent_count() as f64;
    let sa = MicroState::stationary_draw(&a, &MacroState::single_part(&[2.0 * na, 5.0 * na], a.agent_count()), rng)?;
    let sb = MicroState::stationary_draw(&b, &MacroState::single_part(&[6.0 * nb, 2.0 * nb], b.agent_count()), rng)?;
    let joined = Economy::join(&a, &b)?.with_topology(Topology::AllToAll { rate: 2.0 / n as f64 })?;
    let mut p = sa.possessions;
    p.extend(sb.possessions);
    let mut r = ScriptRunner::new(joined, MicroState::new(p), cfg.script.clone(), rng.random())?;
    let start = r.log_z();
    let mut steps = vec![r.apply(&TraderAction::MakeContact { parts: [0, 1], goods: vec![MONEY, 1] })?];
    if cfg.wrong_sign {
        steps.push(r.apply(&TraderAction::Confiscate { fraction: 0.45 })?);
    }
    let worst = steps
        .iter()
        .map(|s| if s.stderr > 0.0 { s.delta / s.stderr } else if s.delta < 0.0 { f64::NEG_INFINITY } else { 0.0 })
        .fold(f64::INFINITY, f64::min);
    Ok(check(
        "A7",
        "merging two systems never lowers total log Z by more than 3 standard errors",
        &[("delta", r.log_z() - start), ("worst_z", worst), ("steps", steps.len() as f64)],
        3.0,
        steps.iter().all(|s| !s.flagged),
    ))
}

fn money_check(cfg: &SuiteConfig, base: &Economy, totals: &[f64], rng: &mut ChaCha8Rng) -> Result<AxiomCheck> {
    let x = MacroState::single_part(totals, base.agent_count());
    let s = MicroState::stationary_draw(base, &x, rng)?;
    let mut r = ScriptRunner::new(base.clone(), s, cfg.script.clone(), rng.random())?;
    let rec = r.apply(&TraderAction::AddMoney { amount: 0.5 * totals[0], plane: None })?;
    let m_after = rec.macro_state.total(MONEY, 0).unwrap_or(f64::NAN);
    let model = EntropyModel::from_economy(base)?;
    let integral = thermo_integrate_log_z(&model, &x, totals[0], m_after)?;
    let closes = (rec.delta - integral).abs() <= 1e-8 * rec.delta.abs();
    Ok(check(
        "A8",
        "adding money strictly raises log Z by the integral of the coolness",
        &[("money_in", m_after - totals[0]), ("delta", rec.delta), ("integral", integral)],
        1e-8,
        rec.delta > 0.0 && m_after > totals[0] && closes,
    ))
}

fn concavity_check(base: &Economy, totals: &[f64], rng: &mut ChaCha8Rng) -> Result<AxiomCheck> {
    let m = EntropyModel::from_economy(base)?;
    let at = |p: &[f64]| MacroState::single_part(p, base.agent_count());
    let mut worst_gap = f64::INFINITY;
    let mut worst_grad: f64 = 0.0;
    for _ in 0..200 {
        let p0: Vec<f64> = totals.iter().map(|t| t * rng.random_range(0.2..3.0)).collect();
        let p1: Vec<f64> = totals.iter().map(|t| t * rng.random_range(0.2..3.0)).collect();
        let l: f64 = rng.random();
        let pm: Vec<f64> = p0.iter().zip(&p1).map(|(a, b)| l * a + (1.0 - l) * b).collect();
        let z = |p: &[f64]| log_partition(&m, &at(p)).map(|e| e.value);
        worst_gap = worst_gap.min(z(&pm)? - l * z(&p0)? - (1.0 - l) * z(&p1)?);
        let g = log_partition_gradient(&m, &at(&pm))?;
        for k in 0..pm.len() {
            let h = 1e-4 * pm[k];
            let mut up = pm.clone();
            let mut dn = pm.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (z(&up)? - z(&dn)?) / (2.0 * h);
            worst_grad = worst_grad.max((fd - g[k]).abs() / g[k].abs());
        }
    }
    Ok(check(
        "A9",
        "log Z is concave with a consistent gradient (support planes exist and vary smoothly)",
        &[("min_concavity_gap", worst_gap), ("max_gradient_error", worst_grad)],
        1e-6,
        worst_gap >= -1e-9 && worst_grad <= 1e-6,
    ))
}

/// Mean change of the first system's money over a short opening window,
/// across replicates started from stationary draws of each side.
fn opening_flow(
    a: &Economy,
    b: &Economy,
    ma: f64,
    mb: f64,
    window: u64,
    replicates: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let joined = Economy::join(a, b)?.set_contact(0, 1, &[MONEY], true)?;
    let cfg = SimConfig {
        burn_in: Some(window),
        thin: Some(window),
        ..SimConfig::default()
    };
    let mut flows = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let sa = MicroState::stationary_draw(a, &MacroState::single_part(&[ma], a.agent_count()), rng)?;
        let sb = MicroState::stationary_draw(b, &MacroState::single_part(&[mb], b.agent_count()), rng)?;
        let mut p = sa.possessions;
        p.extend(sb.possessions);
        let t = simulate(&joined, &MicroState::new(p), Horizon::Events(window), &cfg, rng.random())?;
        let start: f64 = t.initial_state.possessions[..a.agent_count()].iter().map(|x| x[MONEY]).sum();
        let end: f64 = t.final_state.possessions[..a.agent_count()].iter().map(|x| x[MONEY]).sum();
        flows.push(end - start);
    }
    let f = mean(&flows);
    let se = (crate::stats::variance(&flows) / flows.len() as f64).sqrt();
    Ok((f, se))
}

fn equilibrium_checks(cfg: &SuiteConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<AxiomCheck>> {
    let na = (n / 4).max(2);
    let nb = n - na;
    let flat = |k| Economy::single_part(vec!["money".into()], vec![UtilitySpec::flat(1); k]);
    let (ea, eb) = (flat(na)?, flat(nb)?);
    let sys = |k: usize, m: f64| -> Result<System> {
        let model = EntropyModel::homogeneous(vec![1.0], k)?;
        let state = model.macro_state(&[m])?;
        Ok(System::new(model, state))
    };
    let x = sys(na, 2.0 * na as f64)?;
    let y0 = sys(nb, 2.0 * nb as f64 * 0.5)?;
    let matched = match_money(&x, &y0)?;
    let (mx, my) = match matched.recipient {
        Recipient::First => (x.money()? + matched.amount, y0.money()?),
        Recipient::Second => (x.money()?, y0.money()? + matched.amount),
        Recipient::Neither => (x.money()?, y0.money()?),
    };
    let verdict = financial_equilibrium(&sys(na, mx)?, &sys(nb, my)?)?;
    let third = sys(2 * na, mx * (2 * na - 1) as f64 / (na - 1) as f64)?;
    let transitive = financial_equilibrium(&sys(na, mx)?, &third)?.equilibrium;
    let window = n as u64 / 4;
    let (flow, se) = opening_flow(&ea, &eb, mx, my, window, cfg.flow_replicates, rng)?;
    let (flow_off, se_off) = opening_flow(&ea, &eb, x.money()?, y0.money()?, window, cfg.flow_replicates, rng)?;
    let predicted = financial_equilibrium(&x, &y0)?;
    let sign_ok = match predicted.flow {
        super::Flow::TowardFirst => flow_off > 3.0 * se_off,
        super::Flow::TowardSecond => flow_off < -3.0 * se_off,
        super::Flow::None => false,
    };
    Ok(vec![
        check(
            "A13",
            "equal coolness means no net opening money flow; unequal coolness sends money to the cooler side",
            &[
                ("matched_flow", flow),
                ("matched_stderr", se),
                ("unmatched_flow", flow_off),
                ("unmatched_stderr", se_off),
                ("transitive", transitive as u8 as f64),
            ],
            3.0,
            flow.abs() < 3.0 * se && sign_ok && transitive,
        ),
        check(
            "A15",
            "a money amount brings any two simple systems to equal coolness",
            &[
                ("amount", matched.amount),
                ("beta_first", verdict.beta_first),
                ("beta_second", verdict.beta_second),
            ],
            1e-6,
            verdict.equilibrium && matched.amount > 0.0,
        ),
    ])
}

fn flank_check(cfg: &SuiteConfig, base: &Economy, totals: &[f64]) -> Result<AxiomCheck> {
    let model = EntropyModel::from_economy(base)?;
    let x = System::new(model, MacroState::single_part(totals, base.agent_count()));
    let f = flanking_states(&x, 0.1 * totals[0], cfg.flank_markdown)?;
    let equal = (f.beta[0] - f.beta[1]).abs() <= 1e-6 * f.beta[1];
    Ok(check(
        "A14",
        "every state lies between two states of equal coolness, one above and one below",
        &[
            ("beta_lower", f.beta[0]),
            ("beta_upper", f.beta[1]),
            ("log_z_lower", f.log_z[0]),
            ("log_z", f.log_z[1]),
            ("log_z_upper", f.log_z[2]),
            ("max_beta_step", f.max_beta_step),
        ],
        1e-6,
        equal && f.max_beta_step < 0.0,
    ))
}
