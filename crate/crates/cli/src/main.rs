use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use conformal_policy::conformal::{conformal_limit, CostGrid, LimitConfig, TestMass, DEFAULT_GRID_POINTS};
use conformal_policy::dataset::{load_dataset, save_dataset, CostRange, Dataset};
use conformal_policy::eval::{
    coverage_experiment, evaluate_policy, fitted_coverage, threshold_grid, ConstantPolicy, CoverageConfig, Instance,
    PastPolicy, Policy, Scenario, DEFAULT_ALPHAS,
};
use conformal_policy::policy::{fit_linear_baseline, RobustPolicy};
use conformal_policy::scenario::{
    fit_reducer, generate_ihdp_style, reduce_dataset, sample_synthetic, IhdpSetup, IhdpStyleConfig, SyntheticConfig,
    SyntheticScenario, SyntheticSetup, TruePastPolicyWeights,
};
use conformal_policy::weights::{
    fit_weight_model, FeatureModelConfig, ModelKind, PropensitySource, WeightFitConfig, WeightMode, WeightModel,
};

#[derive(Parser)]
#[command(name = "cpolicy", version, about = "Robust decision policies with conformal cost limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a training set (CSV) and write the generating parameters (JSON).
    Generate(GenerateArgs),
    /// Fit importance-weight models on a dataset and write them as JSON.
    FitWeights(FitArgs),
    /// Conformal cost limit of one or all decisions at a context.
    Limit(LimitArgs),
    /// Robust decisions for a batch of contexts, as CSV.
    Policy(PolicyArgs),
    /// Complementary CDF of a policy's cost under a simulated scenario.
    Ccdf(CcdfArgs),
    /// Monte-Carlo exceedance rate of the certificates for several alphas.
    Coverage(CoverageArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKind {
    Synthetic,
    Ihdp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Generative,
    Propensity,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    /// One Gaussian per decision.
    Gaussian,
    /// Gaussian mixture per decision (see --components).
    Mixture,
    /// Bernoulli binary coordinates times a pattern-conditional Gaussian.
    Product,
}

#[derive(Clone, Copy, ValueEnum)]
enum PropensityArg {
    Bayes,
    Logistic,
    Constant,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    scenario: ScenarioKind,
    /// Training records (synthetic scenario).
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Noise sd of treated costs (default 0.2 synthetic, 1 ihdp).
    #[arg(long)]
    sigma_treated: Option<f64>,
    /// Noise sd of untreated costs (default 20 synthetic, 5 ihdp).
    #[arg(long)]
    sigma_untreated: Option<f64>,
    /// Keep synthetic costs outside [-30, 30] instead of clipping them.
    #[arg(long)]
    no_clip: bool,
}

impl ScenarioArgs {
    fn synthetic(&self) -> SyntheticScenario {
        let d = SyntheticScenario::default();
        SyntheticScenario {
            sigma_treated: self.sigma_treated.unwrap_or(d.sigma_treated),
            sigma_untreated: self.sigma_untreated.unwrap_or(d.sigma_untreated),
            clip: !self.no_clip,
        }
    }

    fn ihdp(&self) -> IhdpSetup {
        IhdpSetup::new(self.sigma_untreated.unwrap_or(5.0), self.sigma_treated.unwrap_or(1.0))
    }
}

#[derive(Args, Clone)]
struct WeightArgs {
    #[arg(long, value_enum, default_value = "generative")]
    mode: ModeArg,
    /// Feature model family (default gaussian; mixture for ihdp).
    #[arg(long, value_enum)]
    model: Option<FeatureArg>,
    #[arg(long, default_value_t = 4)]
    components: usize,
    /// Coordinates treated as binary by the product model.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    binary: Vec<usize>,
    #[arg(long, value_enum, default_value = "bayes")]
    propensity: PropensityArg,
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
}

impl WeightArgs {
    fn config(&self, default: FeatureArg, seed: u64) -> WeightFitConfig {
        let kind = match self.model.unwrap_or(default) {
            FeatureArg::Gaussian => ModelKind::Gaussian,
            FeatureArg::Mixture => ModelKind::Mixture {
                components: self.components,
            },
            FeatureArg::Product => ModelKind::Product {
                binary_coords: self.binary.clone(),
                continuous: Box::new(ModelKind::Gaussian),
                conditional: true,
            },
        };
        let mut cfg = WeightFitConfig::generative(FeatureModelConfig::new(kind)).with_seed(seed);
        if let ModeArg::Propensity = self.mode {
            cfg.mode = WeightMode::Propensity;
            cfg.propensity = match self.propensity {
                PropensityArg::Bayes => PropensitySource::Bayes,
                PropensityArg::Logistic => PropensitySource::Logistic { ridge: self.ridge },
                PropensityArg::Constant => PropensitySource::Constant,
            };
        }
        cfg
    }
}

#[derive(Args, Clone)]
struct LimitOpts {
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
    /// Place the test point's mass at +inf instead of at its own score.
    #[arg(long)]
    conservative_test_mass: bool,
}

impl LimitOpts {
    fn config(&self, range: CostRange) -> Result<LimitConfig> {
        let grid = CostGrid::new(range, self.grid_points)?;
        Ok(LimitConfig::new(self.alpha, grid)?.with_test_mass(self.test_mass()))
    }

    fn test_mass(&self) -> TestMass {
        if self.conservative_test_mass {
            TestMass::AtInfinity
        } else {
            TestMass::AtScore
        }
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset in CSV (`x,y,z1..zd`) or JSON form.
    #[arg(long)]
    data: PathBuf,
    /// Lower end of the cost range (default: smallest observed cost).
    #[arg(long, allow_hyphen_values = true)]
    y_min: Option<f64>,
    /// Upper end of the cost range (default: largest observed cost).
    #[arg(long, allow_hyphen_values = true)]
    y_max: Option<f64>,
    /// Number of decisions (default: largest observed id + 1).
    #[arg(long)]
    decisions: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let placeholder = CostRange::new(f64::MIN, f64::MAX)?;
        let ds = load_dataset(&self.data, placeholder, self.decisions)
            .with_context(|| format!("loading {}", self.data.display()))?;
        let costs = ds.records().iter().map(|r| r.y);
        let lo = self.y_min.unwrap_or_else(|| costs.clone().fold(f64::INFINITY, f64::min));
        let hi = self.y_max.unwrap_or_else(|| costs.fold(f64::NEG_INFINITY, f64::max));
        let range = if lo < hi { CostRange::new(lo, hi)? } else { CostRange::new(lo, lo + 1.0)? };
        let ds = ds.with_cost_range(range);
        let outside = ds.records().iter().filter(|r| !range.contains(r.y)).count();
        if outside > 0 {
            eprintln!("warning: {outside} costs lie outside [{}, {}]", range.lo(), range.hi());
        }
        Ok(ds)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
    /// Output JSON with the generating parameters.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Project ihdp covariates onto this many principal components.
    #[arg(long)]
    reduce: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LimitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated feature vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    context: Vec<f64>,
    /// Decision to bound (default: every decision).
    #[arg(long)]
    decision: Option<usize>,
    #[command(flatten)]
    limit: LimitOpts,
}

#[derive(Args)]
struct PolicyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// CSV of contexts; columns `z1..zd` are used, others ignored.
    #[arg(long)]
    contexts: PathBuf,
    #[command(flatten)]
    limit: LimitOpts,
    /// Seed of the tie-breaking streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Robust,
    Past,
    Linear,
    Treat,
    Untreated,
}

#[derive(Args)]
struct CcdfArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long, value_enum, default_value = "robust")]
    policy: PolicyKind,
    #[command(flatten)]
    limit: LimitOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluation draws.
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    /// Number of thresholds spanning the cost range.
    #[arg(long, default_value_t = 121)]
    thresholds: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    weights: WeightArgs,
    /// Use the true past policy for weights (synthetic only).
    #[arg(long)]
    true_weights: bool,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALPHAS)]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
    #[arg(long)]
    conservative_test_mass: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn generate(args: GenerateArgs) -> Result<()> {
    match args.scenario.scenario {
        ScenarioKind::Synthetic => {
            let scenario = args.scenario.synthetic();
            let sample = sample_synthetic(&SyntheticConfig {
                n: args.scenario.n,
                seed: args.seed,
                scenario,
            });
            save_dataset(&sample.dataset, &args.out)?;
            if let Some(path) = &args.truth {
                let range = sample.dataset.cost_range();
                write_json(
                    path,
                    &json!({
                        "scenario": "synthetic",
                        "seed": args.seed,
                        "parameters": scenario,
                        "cost_range": [range.lo(), range.hi()],
                        "clipped": sample.clipped,
                    }),
                )?;
            }
        }
        ScenarioKind::Ihdp => {
            let cfg = IhdpStyleConfig {
                seed: args.seed,
                ..args.scenario.ihdp().config
            };
            let data = generate_ihdp_style(&cfg)?;
            let (train, reducer) = match args.reduce {
                Some(d) => {
                    let raw: Vec<Vec<f64>> = data.train.records().iter().map(|r| r.z.clone()).collect();
                    let reducer = fit_reducer(&raw, d)?;
                    (reduce_dataset(&data.train, &reducer)?, Some(reducer))
                }
                None => (data.train.clone(), None),
            };
            save_dataset(&train, &args.out)?;
            if let Some(path) = &args.truth {
                let range = train.cost_range();
                write_json(
                    path,
                    &json!({
                        "scenario": "ihdp",
                        "seed": args.seed,
                        "truth": data.truth,
                        "cost_range": [range.lo(), range.hi()],
                        "reducer": reducer,
                        "test_covariates": data.test_covariates,
                        "test_decisions": data.test_decisions,
                    }),
                )?;
            }
        }
    }
    Ok(())
}

fn fit_weights(args: FitArgs) -> Result<()> {
    let ds = args.data.load()?;
    let model = fit_weight_model(&ds, &args.weights.config(FeatureArg::Gaussian, args.seed))?;
    model.save(&args.out)?;
    Ok(())
}

fn load_model(path: &Path, ds: &Dataset) -> Result<WeightModel> {
    let model = WeightModel::load(path).with_context(|| format!("loading {}", path.display()))?;
    if model.marginal().len() != ds.decision_count() {
        bail!(
            "model covers {} decisions but the dataset has {}",
            model.marginal().len(),
            ds.decision_count()
        );
    }
    Ok(model)
}

fn limit(args: LimitArgs) -> Result<()> {
    let ds = args.data.load()?;
    let model = load_model(&args.model, &ds)?;
    let config = args.limit.config(ds.cost_range())?;
    let decisions: Vec<usize> = match args.decision {
        Some(k) => vec![k],
        None => (0..ds.decision_count()).collect(),
    };
    let mut rows = Vec::new();
    for k in decisions {
        let l = conformal_limit(&ds, &model, k, &args.context, &config)?;
        rows.push(json!({
            "decision": k,
            "value": l.value,
            "saturated": l.saturated,
            "test_mass": l.test_mass,
        }));
    }
    let value = if args.decision.is_some() { rows.remove(0) } else { serde_json::Value::Array(rows) };
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn read_contexts(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let columns = (1..=dim)
        .map(|j| {
            let name = format!("z{j}");
            headers
                .iter()
                .position(|h| h.trim() == name)
                .with_context(|| format!("{} has no column `{name}`", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let z = columns
            .iter()
            .map(|&c| {
                row.get(c)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .with_context(|| format!("context {}: bad value in column {}", i + 1, c + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(z);
    }
    Ok(out)
}

fn policy(args: PolicyArgs) -> Result<()> {
    let ds = args.data.load()?;
    let model = load_model(&args.model, &ds)?;
    let contexts = read_contexts(&args.contexts, ds.dim())?;
    let policy = RobustPolicy::new(&ds, model, args.limit.config(ds.cost_range())?, args.seed)?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "decision,certificate,tied")?;
    for (i, z) in contexts.iter().enumerate() {
        let d = policy.decide_indexed(z, i as u64)?;
        writeln!(out, "{},{},{}", d.decision, d.certificate, d.tied)?;
    }
    out.flush()?;
    Ok(())
}

fn run_ccdf<S: Scenario>(setup: &S, args: &CcdfArgs, default: FeatureArg) -> Result<()> {
    let Instance { train, env } = setup.instantiate(args.seed)?;
    let range = train.cost_range();
    let thresholds = threshold_grid(range.lo(), range.hi(), args.thresholds);
    let policy: Box<dyn Policy + '_> = match args.policy {
        PolicyKind::Robust => {
            let weights = fit_weight_model(&train, &args.weights.config(default, args.seed))?;
            Box::new(RobustPolicy::new(&train, weights, args.limit.config(range)?, args.seed)?)
        }
        PolicyKind::Linear => Box::new(fit_linear_baseline(&train)?),
        PolicyKind::Past => Box::new(PastPolicy(&env)),
        PolicyKind::Treat => Box::new(ConstantPolicy(1)),
        PolicyKind::Untreated => Box::new(ConstantPolicy(0)),
    };
    let eval = evaluate_policy(policy.as_ref(), &env, args.draws, args.seed ^ 0x5eed, args.limit.alpha, &thresholds)?;
    eprintln!("{}-quantile of cost: {}", 1.0 - args.limit.alpha, eval.quantile);
    let mut out = output(args.out.as_deref())?;
    out.write_all(eval.ccdf.to_csv().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn ccdf(args: CcdfArgs) -> Result<()> {
    match args.scenario.scenario {
        ScenarioKind::Synthetic => {
            let setup = SyntheticSetup {
                n: args.scenario.n,
                scenario: args.scenario.synthetic(),
            };
            run_ccdf(&setup, &args, FeatureArg::Gaussian)
        }
        ScenarioKind::Ihdp => {
            if let PolicyKind::Linear = args.policy {
                bail!("the linear baseline on reduced ihdp features is not supported; use a raw-covariate dataset");
            }
            run_ccdf(&args.scenario.ihdp(), &args, FeatureArg::Mixture)
        }
    }
}

fn coverage(args: CoverageArgs) -> Result<()> {
    let mut cfg = CoverageConfig::new(args.runs, args.seed);
    cfg.grid_points = args.grid_points;
    if args.conservative_test_mass {
        cfg.test_mass = TestMass::AtInfinity;
    }
    let table = match args.scenario.scenario {
        ScenarioKind::Synthetic => {
            let setup = SyntheticSetup {
                n: args.scenario.n,
                scenario: args.scenario.synthetic(),
            };
            if args.true_weights {
                coverage_experiment(&setup, &args.alpha, &cfg, |_, _| Ok(TruePastPolicyWeights))?
            } else {
                fitted_coverage(&setup, &args.alpha, &cfg, &args.weights.config(FeatureArg::Gaussian, 0))?
            }
        }
        ScenarioKind::Ihdp => {
            if args.true_weights {
                bail!("--true-weights is only available for the synthetic scenario");
            }
            fitted_coverage(&args.scenario.ihdp(), &args.alpha, &cfg, &args.weights.config(FeatureArg::Mixture, 0))?
        }
    };
    let mut out = output(args.out.as_deref())?;
    out.write_all(table.to_csv().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::FitWeights(a) => fit_weights(a),
        Command::Limit(a) => limit(a),
        Command::Policy(a) => policy(a),
        Command::Ccdf(a) => ccdf(a),
        Command::Coverage(a) => coverage(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
