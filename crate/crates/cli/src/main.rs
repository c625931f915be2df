//! Command-line front end for `decrho`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use decrho::apas::{run_apas, run_apas_no_adaptation, ApasConfig, ApasOutcome, ValueMode};
use decrho::beliefs::Belief;
use decrho::benchmarks::{build_domain, DomainSpec};
use decrho::conversion::convert_to_standard;
use decrho::io::{parse_dpomdp_file, parse_policy, serialize_policy, write_dpomdp, PolicyMeta};
use decrho::model::DecPomdpModel;
use decrho::planner::{
    audit_loss, brute_force, evaluate_exact, evaluate_monte_carlo, FinalReward, Objective, PlannerParams, Prediction,
};
use decrho::rewards::{reward_by_name, sample_simplex, AlphaSet, ConvexReward};
use decrho::verify::{run_suite, SUITES};
use decrho::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "decrho", version, about = "Dec-POMDP planning with convex final information rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run APAS and write the best policy.
    Plan(PlanArgs),
    /// Value of a stored policy.
    Evaluate(EvaluateArgs),
    /// Summary of the converted problem for a sampled hyperplane set.
    Convert(ConvertArgs),
    /// Exhaustive optima of the Dec-ρPOMDP and its conversion.
    BruteForce(BruteForceArgs),
    /// Write the built-in domains as `.dpomdp` files.
    Bench(BenchArgs),
    /// Run the property suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// `.dpomdp` file.
    #[arg(long, conflicts_with = "domain")]
    model: Option<PathBuf>,
    /// Built-in domain: decoupled-chains, coupled-tag or single-tiger.
    #[arg(long)]
    domain: Option<String>,
    /// Overrides the horizon of the model or domain.
    #[arg(long)]
    horizon: Option<usize>,
}

impl ModelArgs {
    fn load(&self) -> Result<DecPomdpModel, Failure> {
        match (&self.model, &self.domain) {
            (Some(path), _) => {
                let model = parse_dpomdp_file(path)?;
                Ok(match self.horizon {
                    Some(h) => model.with_horizon(h)?,
                    None => model,
                })
            }
            (None, Some(name)) => Ok(build_domain(&DomainSpec::by_name(name, self.horizon)?)?),
            (None, None) => Err(Failure::usage("either --model or --domain is required")),
        }
    }
}

#[derive(Args)]
struct GammaArgs {
    /// Convex final reward.
    #[arg(long, default_value = "entropy")]
    reward: String,
    /// Number of linearization points.
    #[arg(long = "K", default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GammaArgs {
    fn reward(&self) -> Result<Box<dyn ConvexReward>, Failure> {
        reward_by_name(&self.reward).ok_or_else(|| Failure::usage(format!("unknown reward '{}'", self.reward)))
    }

    fn sample(&self, num_states: usize) -> Result<AlphaSet, Failure> {
        if self.k == 0 {
            return Err(Failure::usage("--K must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(AlphaSet::from_tangents(self.reward()?.as_ref(), &sample_simplex(num_states, self.k, &mut rng))?)
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    gamma: GammaArgs,
    /// Outer APAS iterations.
    #[arg(long, default_value_t = 10)]
    outer: usize,
    #[arg(long, default_value_t = 2)]
    width: usize,
    /// Improvement passes per planner call.
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    restart: f64,
    /// Resample the hyperplanes uniformly instead of adapting them.
    #[arg(long)]
    no_adapt: bool,
    #[arg(long)]
    retain_best_gamma: bool,
    #[arg(long, value_enum, default_value_t = Mode::True)]
    mode: Mode,
    #[arg(long, default_value = "policy.json")]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    True,
    Rho,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long = "final", value_enum, default_value_t = Final::True)]
    final_reward: Final,
    #[arg(long, default_value = "entropy")]
    reward: String,
    #[arg(long, value_enum, default_value_t = EvalMode::Exact)]
    mode: EvalMode,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Final {
    Zero,
    Centralized,
    Decentralized,
    True,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Exact,
    Mc,
}

#[derive(Args)]
struct ConvertArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    gamma: GammaArgs,
}

#[derive(Args)]
struct BruteForceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    gamma: GammaArgs,
    /// Limit on the number of joint policies.
    #[arg(long, default_value_t = decrho::planner::brute_force::DEFAULT_BUDGET)]
    budget: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "benchmarks")]
    out: PathBuf,
    /// Horizon written into every file.
    #[arg(long, default_value_t = 2)]
    horizon: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite name or `all`.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_) | Error::Json(_) => 2,
            Error::BudgetExceeded { .. } => 3,
            Error::Io(_) => 4,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 4, message: format!("{}: {e}", path.display()) }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Plan(args) => cmd_plan(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Convert(args) => cmd_convert(&args),
        Command::BruteForce(args) => cmd_brute_force(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Verify(args) => cmd_verify(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_plan(args: &PlanArgs) -> Result<(), Failure> {
    let model = args.model.load()?;
    let f = args.gamma.reward()?;
    let config = ApasConfig {
        k: args.gamma.k,
        outer_iterations: args.outer,
        planner: PlannerParams {
            width: args.width,
            iterations: args.iterations,
            restart_probability: args.restart,
            ..PlannerParams::default()
        },
        value_mode: match args.mode {
            Mode::True => ValueMode::True,
            Mode::Rho => ValueMode::Rho,
        },
        seed: args.gamma.seed,
        retain_best_gamma: args.retain_best_gamma,
        ..ApasConfig::default()
    };
    let started = Instant::now();
    let ApasOutcome { policy, gamma, report } = if args.no_adapt {
        run_apas_no_adaptation(&model, f.as_ref(), &config)?
    } else {
        run_apas(&model, f.as_ref(), &config)?
    };
    let elapsed = started.elapsed().as_secs_f64();
    let meta = PolicyMeta {
        horizon: model.horizon(),
        value: Some(report.best_value),
        gamma_points: gamma.points().to_vec(),
        seed: Some(config.seed),
    };
    write_file(&args.out, &serialize_policy(&policy, &meta)?)?;
    if let Some(path) = &args.report {
        let doc = json!({
            "config": {
                "apas": config,
                "adapt": !args.no_adapt,
                "reward": args.gamma.reward,
                "width": config.planner.width,
                "iterations": config.planner.iterations,
                "restart_probability": config.planner.restart_probability,
            },
            "iterations": report.iterations,
            "converged": report.converged,
            "best": {
                "value": report.best_value,
                "iteration": report.best_iteration,
                "policy_path": args.out,
            },
            "seconds": elapsed,
        });
        write_file(path, &serde_json::to_string_pretty(&doc).expect("report is serializable"))?;
    }
    println!("best value {} at iteration {} ({:.2}s)", report.best_value, report.best_iteration, elapsed);
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    let model = args.model.load()?;
    let text = fs::read_to_string(&args.policy).map_err(|e| io_failure(&args.policy, e))?;
    let (policy, meta) = parse_policy(&text)?;
    let has_prediction_layer = policy.num_layers() == model.horizon() + 1;
    policy.check_against(&model, has_prediction_layer.then_some(meta.gamma_points.len()))?;
    let f = reward_by_name(&args.reward).ok_or_else(|| Failure::usage(format!("unknown reward '{}'", args.reward)))?;
    let gamma = match args.final_reward {
        Final::Centralized | Final::Decentralized => {
            if meta.gamma_points.is_empty() {
                return Err(Failure::usage("policy file stores no linearization points"));
            }
            let points = meta.gamma_points.iter().map(|p| Belief::new(p.clone())).collect::<Result<Vec<_>, _>>()?;
            Some(AlphaSet::from_tangents(f.as_ref(), &points)?)
        }
        _ => None,
    };
    let final_reward = match args.final_reward {
        Final::Zero => FinalReward::Zero,
        Final::Centralized => FinalReward::Centralized(gamma.as_ref().expect("built above")),
        Final::Decentralized => FinalReward::Decentralized(
            gamma.as_ref().expect("built above"),
            match policy.prediction() {
                Some(rule) => Prediction::Rule(rule),
                None if has_prediction_layer => Prediction::Controller,
                None => Prediction::Optimal,
            },
        ),
        Final::True => FinalReward::True(f.as_ref()),
    };
    match args.mode {
        EvalMode::Exact => {
            let e = evaluate_exact(&model, &policy, &final_reward)?;
            let out = json!({"mode": "exact", "value": e.value, "stage_rewards": e.stage_rewards, "final_reward": e.final_reward});
            println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
        }
        EvalMode::Mc => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let e = evaluate_monte_carlo(&model, &policy, &final_reward, args.samples, &mut rng)?;
            let out = json!({"mode": "mc", "value": e.mean, "std_error": e.std_error, "samples": e.samples});
            println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
        }
    }
    Ok(())
}

fn cmd_convert(args: &ConvertArgs) -> Result<(), Failure> {
    let model = args.model.load()?;
    let gamma = args.gamma.sample(model.num_states())?;
    let converted = convert_to_standard(&model, &gamma)?;
    let m = &converted.model;
    let last = m.stage(m.horizon() - 1);
    let out = json!({
        "agents": m.num_agents(),
        "states": m.num_states(),
        "source_horizon": converted.source_horizon,
        "horizon": m.horizon(),
        "prediction_actions_per_agent": last.actions().sizes(),
        "prediction_alpha": converted.prediction_alpha,
        "gamma": gamma.vectors(),
        "gamma_points": gamma.points(),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(())
}

fn cmd_brute_force(args: &BruteForceArgs) -> Result<(), Failure> {
    let model = args.model.load()?;
    let gamma = args.gamma.sample(model.num_states())?;
    let audit = audit_loss(&model, &gamma, args.budget)?;
    let f = args.gamma.reward()?;
    let best_true = brute_force(&model, &Objective::True(f.as_ref()), args.budget)?;
    let bound = (audit.centralized - audit.converted_policy_centralized).abs();
    let out = json!({
        "centralized_optimum": audit.centralized,
        "converted_optimum": audit.converted,
        "true_optimum": best_true.value,
        "max_gap": audit.max_gap,
        "loss": bound,
        "loss_bound": 2.0 * audit.max_gap.max(0.0),
        "lemma4_holds": audit.converted <= audit.centralized + 1e-9 && bound <= 2.0 * audit.max_gap.max(0.0) + 1e-9,
        "policies": audit.policies,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    for name in DomainSpec::NAMES {
        let model = build_domain(&DomainSpec::by_name(name, Some(args.horizon))?)?;
        let path = args.out.join(format!("{name}.dpomdp"));
        write_file(&path, &write_dpomdp(&model)?)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let names: Vec<&str> = if args.suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&args.suite.as_str()) {
        vec![args.suite.as_str()]
    } else {
        return Err(Failure::usage(format!(
            "unknown suite '{}', expected one of {} or all",
            args.suite,
            SUITES.join(", ")
        )));
    };
    let mut failed = 0;
    for name in names {
        let report = run_suite(name, args.instances, args.seed)?;
        println!("{report}");
        if !report.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure { code: 5, message: format!("{failed} suite(s) failed") });
    }
    Ok(())
}
