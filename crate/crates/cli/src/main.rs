//! `xentropy`: scenario runner and entropy calculator for exchange economies.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use exchange_entropy::axioms::{plan_transition, run_axiom_suite, SuiteConfig, System};
use exchange_entropy::partition::{
    equilibrium_amounts, free_energy, good_values, legendre_entropy, log_partition, CanonicalPoint, EntropyModel,
};
use exchange_entropy::scenario::{
    run_scenario, simulate_scenario, write_trajectories, OutputFormat, ScenarioConfig,
};
use exchange_entropy::{Error, Result};
use serde_json::json;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "xentropy", version, about = "Entropy of exchange economies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario's trader script and write JSON/CSV reports.
    Run(RunArgs),
    /// Simulate a scenario's starting state without trader actions.
    Simulate(SimulateArgs),
    /// log Z, coolness, good values and prices at a macro-state.
    Entropy(EntropyArgs),
    /// Free energy, its gradient and the recovered entropy at a canonical point.
    Legendre(LegendreArgs),
    /// Run the axiom suite; exits 3 if any check fails.
    Axioms(AxiomArgs),
    /// Plan trader actions from one macro-state to another.
    Plan(PlanArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
            Format::Both => OutputFormat::Both,
        }
    }
}

#[derive(Args)]
struct Overrides {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Overrides {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::from_file(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(r) = self.replicas {
            cfg.estimator.replicas = r;
        }
        if let Some(f) = self.format {
            cfg.output.format = f.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    io: Overrides,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    io: Overrides,
    /// Events per replica; the script session length when omitted.
    #[arg(long)]
    events: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    CobbDouglas,
    Complements,
    Substitutes,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "cobb-douglas")]
    family: FamilyArg,
    /// Common Cobb-Douglas exponents, money first.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    exponents: Vec<f64>,
    /// Exponent of the two-good complements or substitutes utility.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 2)]
    agents: usize,
}

impl ModelArgs {
    fn model(&self) -> Result<EntropyModel> {
        match self.family {
            FamilyArg::CobbDouglas => EntropyModel::homogeneous(self.exponents.clone(), self.agents),
            FamilyArg::Complements => EntropyModel::complements(self.alpha, self.agents),
            FamilyArg::Substitutes => EntropyModel::substitutes(self.alpha, self.agents),
        }
    }
}

#[derive(Args)]
struct EntropyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Per-good totals, money first.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["beta", "nu"])]
    totals: Option<Vec<f64>>,
    /// Take the state in equilibrium at this coolness (with --nu).
    #[arg(long, requires = "nu")]
    beta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    nu: Option<Vec<f64>>,
}

#[derive(Args)]
struct LegendreArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    beta: f64,
    #[arg(long, value_delimiter = ',')]
    nu: Vec<f64>,
}

#[derive(Args)]
struct AxiomArgs {
    /// Suite config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `axioms.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Inject the money-confiscation control; the merge check must fail.
    #[arg(long)]
    wrong_sign: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    from: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    to: Vec<f64>,
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn entropy(a: &EntropyArgs) -> Result<()> {
    let model = a.model.model()?;
    let totals = match (&a.totals, a.beta, &a.nu) {
        (Some(t), _, _) => t.clone(),
        (None, Some(b), Some(nu)) => equilibrium_amounts(&model, &CanonicalPoint::new(b, nu.clone()))?,
        _ => return Err(Error::config("totals", "give --totals or --beta with --nu")),
    };
    let m = model.macro_state(&totals)?;
    let s = log_partition(&model, &m)?;
    let v = good_values(&model, &m);
    let (beta, nu, prices) = match &v {
        Ok(v) => (Some(v.beta), v.nu.clone(), v.prices.clone()),
        Err(_) => (None, vec![], vec![]),
    };
    print_json(&json!({
        "model": model.label(),
        "totals": totals,
        "log_z": s.value,
        "order": s.order,
        "beta": beta,
        "nu": nu,
        "prices": prices,
    }))
}

fn legendre(a: &LegendreArgs) -> Result<()> {
    let model = a.model.model()?;
    let point = CanonicalPoint::new(a.beta, a.nu.clone());
    let f = free_energy(&model, &point)?;
    let grad = equilibrium_amounts(&model, &point)?;
    let sol = legendre_entropy(&model, &model.macro_state(&grad)?)?;
    print_json(&json!({
        "model": model.label(),
        "point": point,
        "free_energy": f,
        "gradient": grad,
        "entropy": sol.entropy,
        "recovered_point": sol.point,
        "iterations": sol.iterations,
        "residual": sol.residual,
    }))
}

fn axioms(a: &AxiomArgs) -> Result<bool> {
    let mut cfg = match &a.config {
        Some(p) => SuiteConfig::from_file(p)?,
        None => SuiteConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.wrong_sign |= a.wrong_sign;
    let report = run_axiom_suite(&cfg)?;
    print!("{}", report.summary_table());
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(dir.join("axioms.json"), text)?;
    }
    Ok(report.all_passed)
}

fn plan(a: &PlanArgs) -> Result<()> {
    let model = a.model.model()?;
    let x = System::new(model.clone(), model.macro_state(&a.from)?);
    let y = System::new(model.clone(), model.macro_state(&a.to)?);
    print_json(&serde_json::to_value(plan_transition(&x, &y)?)?)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run(a) => {
            let cfg = a.io.load()?;
            let (_, paths) = run_scenario(&cfg)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Simulate(a) => {
            let cfg = a.io.load()?;
            let runs = simulate_scenario(&cfg, a.events)?;
            for p in write_trajectories(&cfg, &runs)? {
                println!("{}", p.display());
            }
        }
        Command::Entropy(a) => entropy(a)?,
        Command::Legendre(a) => legendre(a)?,
        Command::Axioms(a) => return axioms(a),
        Command::Plan(a) => plan(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
