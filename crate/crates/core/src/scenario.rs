//! JSON-configured scenarios: an economy, its starting totals and a trader
//! script, run over seeded replicas into JSON and CSV reports.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::axioms::{ScriptConfig, ScriptRunner, StepRecord, TraderAction};
use crate::dynamics::{simulate, Horizon, Trajectory};
use crate::economy::{
    macro_state_of, Agent, ContactStructure, ConservedQuantity, Economy, MacroState, MicroState, Topology,
    UtilitySpec,
};
use crate::error::{Error, Result};
use crate::partition::{log_partition, EntropyModel, Order};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub economy: EconomySpec,
    /// Starting amount of every good in every part, `initial[part][good]`.
    pub initial: Vec<Vec<f64>>,
    #[serde(default)]
    pub start: StartRule,
    #[serde(default)]
    pub actions: Vec<TraderAction>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomySpec {
    pub goods: Vec<String>,
    pub parts: Vec<PartSpec>,
    #[serde(default)]
    pub contacts: Vec<ContactSpec>,
    #[serde(default)]
    pub topology: Topology,
    /// One trader rate shared by every agent.
    #[serde(default = "unit")]
    pub trader_rate: f64,
    /// Part whose money component the trader reaches; part 0 when unset.
    #[serde(default)]
    pub distinguished_part: Option<usize>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSpec {
    pub cohorts: Vec<Cohort>,
}

/// `count` agents sharing one utility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cohort {
    pub count: usize,
    pub utility: UtilitySpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    pub parts: [usize; 2],
    pub goods: Vec<usize>,
}

/// How the starting micro-state is drawn from the part totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    #[default]
    Stationary,
    EqualSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub replicas: usize,
    pub script: ScriptConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            replicas: 1,
            script: ScriptConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub stem: String,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            stem: "scenario".into(),
            format: OutputFormat::Both,
        }
    }
}

impl ScenarioConfig {
    /// Parses and validates; errors carry the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config: {e}")))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.estimator.replicas == 0 {
            return Err(Error::config("estimator.replicas", "at least one replica is required"));
        }
        let parts = self.economy.parts.len();
        if self.initial.len() != parts {
            return Err(Error::config(
                "initial",
                format!("{} rows for {parts} parts", self.initial.len()),
            ));
        }
        for (p, row) in self.initial.iter().enumerate() {
            if row.len() != self.economy.goods.len() {
                return Err(Error::config(
                    format!("initial[{p}]"),
                    format!("{} totals for {} goods", row.len(), self.economy.goods.len()),
                ));
            }
            if let Some(t) = row.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::config(format!("initial[{p}][{t}]"), "totals must be finite and non-negative"));
            }
        }
        for (p, part) in self.economy.parts.iter().enumerate() {
            if part.cohorts.iter().all(|c| c.count == 0) {
                return Err(Error::config(format!("economy.parts[{p}]"), "part has no agents"));
            }
        }
        for (k, c) in self.economy.contacts.iter().enumerate() {
            if c.parts.iter().any(|&p| p >= parts) || c.parts[0] == c.parts[1] {
                return Err(Error::config(format!("economy.contacts[{k}].parts"), "must name two existing parts"));
            }
        }
        self.build_economy()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, output settings excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_economy(&self) -> Result<Economy> {
        let e = &self.economy;
        let mut agents = Vec::new();
        let mut parts = Vec::new();
        for (p, part) in e.parts.iter().enumerate() {
            let mut members = Vec::new();
            for (c, cohort) in part.cohorts.iter().enumerate() {
                cohort.utility.validate(e.goods.len()).map_err(|err| {
                    Error::config(format!("economy.parts[{p}].cohorts[{c}].utility"), err.to_string())
                })?;
                for _ in 0..cohort.count {
                    members.push(agents.len());
                    agents.push(Agent {
                        id: agents.len(),
                        utility: cohort.utility.clone(),
                    });
                }
            }
            parts.push(members);
        }
        let n = agents.len();
        let isolated = ContactStructure::isolated(parts).map_err(|err| Error::config("economy.parts", err.to_string()))?;
        let mut economy = Economy::new(
            e.goods.clone(),
            agents,
            isolated,
            e.topology.clone(),
            vec![e.trader_rate; n],
            Some(e.distinguished_part.unwrap_or(0)),
        )
        .map_err(|err| Error::config("economy", err.to_string()))?;
        for (k, c) in e.contacts.iter().enumerate() {
            economy = economy
                .set_contact(c.parts[0], c.parts[1], &c.goods, true)
                .map_err(|err| Error::config(format!("economy.contacts[{k}]"), err.to_string()))?;
        }
        Ok(economy)
    }

    /// Starting micro-state with the configured amount in every part.
    pub fn initial_state(&self, economy: &Economy, seed: u64) -> Result<MicroState> {
        // drawn with every part isolated so each part keeps its own totals
        let parts = economy.structure().parts().to_vec();
        let isolated = Economy::new(
            economy.goods().to_vec(),
            economy.agents().to_vec(),
            ContactStructure::isolated(parts)?,
            economy.topology().clone(),
            economy.trader_rates().to_vec(),
            None,
        )?;
        let m = MacroState {
            quantities: crate::economy::economy_keys(&isolated)
                .into_iter()
                .map(|(good, component)| ConservedQuantity {
                    good,
                    total: self.initial[component[0]][good],
                    component,
                })
                .collect(),
            agent_count: economy.agent_count(),
        };
        match self.start {
            StartRule::EqualSplit => MicroState::equal_split(&isolated, &m),
            StartRule::Stationary => MicroState::stationary_draw(&isolated, &m, &mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

/// Seed of replica `r`; replica 0 runs on the configured seed itself.
pub fn replica_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        seed ^ (r as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaReport {
    pub replica: usize,
    pub seed: u64,
    pub initial_macro_state: MacroState,
    pub initial_log_z: f64,
    pub order: Order,
    pub steps: Vec<StepRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub goods: Vec<String>,
    pub agent_count: usize,
    pub replicas: Vec<ReplicaReport>,
}

/// Runs one replica of the script. Step failures carry the step index.
pub fn run_replica(cfg: &ScenarioConfig, economy: &Economy, replica: usize) -> Result<ReplicaReport> {
    let seed = replica_seed(cfg.seed, replica);
    let state = cfg.initial_state(economy, seed)?;
    let m = macro_state_of(economy, &state)?;
    let est = log_partition(&EntropyModel::from_economy(economy)?, &m)?;
    let mut runner = ScriptRunner::new(economy.clone(), state, cfg.estimator.script.clone(), seed)?;
    for (k, action) in cfg.actions.iter().enumerate() {
        runner.apply(action).map_err(|e| Error::Step {
            step: k,
            source: Box::new(e),
        })?;
    }
    Ok(ReplicaReport {
        replica,
        seed,
        initial_macro_state: m,
        initial_log_z: est.value,
        order: est.order,
        steps: runner.into_records(),
    })
}

/// Runs every replica (in parallel) and assembles the report in replica order.
pub fn run_scenario_report(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let economy = cfg.build_economy()?;
    let replicas = (0..cfg.estimator.replicas)
        .into_par_iter()
        .map(|r| run_replica(cfg, &economy, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        goods: cfg.economy.goods.clone(),
        agent_count: economy.agent_count(),
        replicas,
    })
}

impl ScenarioReport {
    /// One row per replica step, with the initial state as step `-1`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "config_hash",
            "seed",
            "replica",
            "step",
            "action",
            "quantity",
            "good",
            "parts",
            "total",
            "log_z",
            "delta",
            "stderr",
            "flagged",
        ])?;
        for r in &self.replicas {
            let mut rows = vec![(-1i64, "initial".to_string(), &r.initial_macro_state, r.initial_log_z, 0.0, 0.0, false)];
            for s in &r.steps {
                let name = serde_json::to_value(&s.action)?["action"].as_str().unwrap_or("").to_string();
                rows.push((s.index as i64, name, &s.macro_state, s.log_z_after, s.delta, s.stderr, s.flagged));
            }
            for (step, name, m, log_z, delta, stderr, flagged) in rows {
                for (q, c) in m.quantities.iter().enumerate() {
                    let parts: Vec<String> = c.component.iter().map(|p| p.to_string()).collect();
                    w.write_record([
                        self.config_hash.clone(),
                        r.seed.to_string(),
                        r.replica.to_string(),
                        step.to_string(),
                        name.clone(),
                        q.to_string(),
                        self.goods[c.good].clone(),
                        parts.join("+"),
                        c.total.to_string(),
                        log_z.to_string(),
                        delta.to_string(),
                        stderr.to_string(),
                        flagged.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the scenario and writes `<stem>.json` and/or `<stem>.csv` under the
/// output directory. Returns the written paths.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(ScenarioReport, Vec<PathBuf>)> {
    let report = run_scenario_report(cfg)?;
    let paths = write_report(&report, &cfg.output)?;
    Ok((report, paths))
}

pub fn write_report(report: &ScenarioReport, out: &OutputConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&out.dir)?;
    let mut paths = Vec::new();
    if matches!(out.format, OutputFormat::Json | OutputFormat::Both) {
        let p = out.dir.join(format!("{}.json", out.stem));
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        fs::write(&p, text)?;
        paths.push(p);
    }
    if matches!(out.format, OutputFormat::Csv | OutputFormat::Both) {
        let p = out.dir.join(format!("{}.csv", out.stem));
        report.write_csv(fs::File::create(&p)?)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Plain simulation of the starting state, one trajectory per replica.
pub fn simulate_scenario(cfg: &ScenarioConfig, events: Option<u64>) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let economy = cfg.build_economy()?;
    let n = economy.agent_count() as u64;
    let events = events.or(cfg.estimator.script.session_events).unwrap_or(200 * n);
    (0..cfg.estimator.replicas)
        .into_par_iter()
        .map(|r| {
            let seed = replica_seed(cfg.seed, r);
            let state = cfg.initial_state(&economy, seed)?;
            simulate(&economy, &state, Horizon::Events(events), &cfg.estimator.script.sim, seed)
        })
        .collect()
}

/// Writes `<stem>_r<k>.csv` series and a `<stem>_summary.json` of final moments.
pub fn write_trajectories(cfg: &ScenarioConfig, runs: &[Trajectory]) -> Result<Vec<PathBuf>> {
    let economy = cfg.build_economy()?;
    let out = &cfg.output;
    fs::create_dir_all(&out.dir)?;
    let mut paths = Vec::new();
    if matches!(out.format, OutputFormat::Csv | OutputFormat::Both) {
        for (r, t) in runs.iter().enumerate() {
            let p = out.dir.join(format!("{}_r{r}.csv", out.stem));
            t.write_csv(&economy, fs::File::create(&p)?)?;
            paths.push(p);
        }
    }
    if matches!(out.format, OutputFormat::Json | OutputFormat::Both) {
        let p = out.dir.join(format!("{}_summary.json", out.stem));
        let summary = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
            "replicas": runs.iter().map(|t| t.summary(&economy)).collect::<Vec<_>>(),
        });
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        fs::write(&p, text)?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "seed": 3,
        "economy": {
            "goods": ["money"],
            "parts": [{"cohorts": [{"count": 2, "utility": {"family": "cobb_douglas", "exponents": [1.0]}}]}]
        },
        "initial": [[7.0]]
    }"#;

    #[test]
    fn minimal_config_reports_log_m() {
        let cfg = ScenarioConfig::from_json(MINIMAL).unwrap();
        let r = run_scenario_report(&cfg).unwrap();
        assert!((r.replicas[0].initial_log_z - 7f64.ln()).abs() < 1e-12);
        assert!(r.replicas[0].steps.is_empty());
        assert_eq!(r.config_hash.len(), 64);
    }

    #[test]
    fn config_errors_name_the_field() {
        let bad = MINIMAL.replace("\"count\": 2", "\"count\": -2");
        match ScenarioConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "economy.parts[0].cohorts[0].count"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = MINIMAL.replace("\"seed\": 3,", "");
        assert!(matches!(ScenarioConfig::from_json(&bad), Err(Error::Config { .. })));
        let bad = MINIMAL.replace("[[7.0]]", "[[7.0, 1.0]]");
        match ScenarioConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "initial[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn step_errors_carry_the_index() {
        let text = MINIMAL.replace(
            "\"initial\": [[7.0]]",
            "\"initial\": [[7.0]], \"actions\": [{\"action\": \"relax\"}, {\"action\": \"confiscate\", \"fraction\": 2.0}],
             \"estimator\": {\"script\": {\"session_events\": 10}}",
        );
        let cfg = ScenarioConfig::from_json(&text).unwrap();
        match run_scenario_report(&cfg) {
            Err(Error::Step { step, .. }) => assert_eq!(step, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
