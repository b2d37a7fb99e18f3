//! Command-line front end: environment inspection, expert generation,
//! training runs with CSV metrics, ensemble evaluation, schedule sweeps,
//! and the exact-oracle verification suite.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ailboost::baselines::{behavior_cloning, bc_metrics, run_dac, run_gail_onpolicy};
use ailboost::boost::{AilboostConfig, BoostRun, IterationMetrics};
use ailboost::divergence::{
    empirical_objective_gradient, empirical_variational_objective, optimal_discriminator,
    reverse_kl, variational_objective, Discriminator, ExpertDataset,
};
use ailboost::ensemble::{evaluate_ensemble, init_ensemble, mix_in, PolicyEnsemble};
use ailboost::envs::{build_env, generate_expert, EnvSpec, ExpertBundle};
use ailboost::formats::{
    load_ensemble, write_ensemble, Algo, DatasetFile, ExperimentConfig, MetricsWriter,
};
use ailboost::mdp::{
    exact_occupancy, flow_residual, validate_mdp, MarkovPolicy, TabularMdp, Termination,
};
use ailboost::replay::{Transition, TransitionDataset, WeightedReplayBuffer};
use ailboost::{child_seed, rng_from_seed, Result};

#[derive(Parser)]
#[command(name = "ailboost", version, about = "Boosted adversarial imitation learning on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the environment zoo
    Env {
        #[command(subcommand)]
        action: EnvCommand,
    },
    /// Expert demonstration handling
    Expert {
        #[command(subcommand)]
        action: ExpertCommand,
    },
    /// Run a training algorithm and write metrics CSV
    Train(TrainArgs),
    /// Evaluate a serialized ensemble by sampled episodes
    Eval(EvalArgs),
    /// Parameter sweeps
    Sweep {
        #[command(subcommand)]
        action: SweepCommand,
    },
    /// Run the exact-oracle verification checks
    Verify(VerifyArgs),
}

#[derive(Subcommand)]
enum EnvCommand {
    /// List available environments
    List,
    /// Show a constructed environment
    Show {
        /// Environment name (chain, gridworld, gridworld_slip) with default
        /// parameters
        #[arg(long, conflicts_with = "config")]
        name: Option<String>,
        /// Or take the environment from a config file
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExpertCommand {
    /// Generate expert demonstrations and write a dataset file
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Override the trajectory count from the config
        #[arg(long)]
        expert_trajs: Option<usize>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the configured algorithm (ailboost, dac, bc, gail)
    #[arg(long)]
    algo: Option<String>,
    /// Run a single seed instead of the config's seed list
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV path (default: <algo>_<env>.csv)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the exact-oracle discriminator and planner
    #[arg(long)]
    oracle_mode: bool,
    /// Override the configured expert trajectory count
    #[arg(long)]
    expert_trajs: Option<usize>,
    /// Load expert demonstrations from a dataset file
    #[arg(long)]
    expert_data: Option<PathBuf>,
    /// Write the final policy (ensemble format) here; with multiple seeds,
    /// the last seed's result is kept
    #[arg(long)]
    save_ensemble: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Episode length for evaluation rollouts
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    /// Use geometric stopping instead of the fixed horizon
    #[arg(long)]
    geometric: bool,
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Run the four policy/discriminator update schedules
    Schedules {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run a single seed instead of the config's seed list
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct VerifyArgs {
    /// Shorter oracle run (60 rounds instead of 200)
    #[arg(long)]
    quick: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Env { action } => cmd_env(action),
        Command::Expert { action } => cmd_expert(action),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep { action } => cmd_sweep(action),
        Command::Verify(args) => return cmd_verify(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_env(action: EnvCommand) -> Result<()> {
    match action {
        EnvCommand::List => {
            println!("chain            two-action chain; parameters: length, gamma (default 0.95)");
            println!("gridworld        deterministic grid with absorbing goal; parameters: width, height, gamma (default 0.99), start, goal");
            println!("gridworld_slip   gridworld with lateral slip; extra parameter: slip");
            Ok(())
        }
        EnvCommand::Show { name, config } => {
            let spec = match (name, config) {
                (Some(n), None) => default_spec(&n)?,
                (None, Some(path)) => ExperimentConfig::load(&path)?.env,
                _ => {
                    return Err(ailboost::Error::InvalidArgument(
                        "pass exactly one of --name or --config".into(),
                    ))
                }
            };
            let mdp = build_env(&spec)?;
            let report = validate_mdp(&mdp);
            println!("env: {}", spec.label());
            println!("states: {}", mdp.num_states);
            println!("actions: {}", mdp.num_actions);
            println!("gamma: {}", mdp.discount);
            println!("reward table: {}", if mdp.env_reward.is_some() { "yes" } else { "no" });
            println!("valid: {}", report.ok());
            for v in report.violations {
                println!("violation: {v}");
            }
            Ok(())
        }
    }
}

fn default_spec(name: &str) -> Result<EnvSpec> {
    match name {
        "chain" => Ok(EnvSpec::chain(5)),
        "gridworld" => Ok(EnvSpec::gridworld(5, 5)),
        "gridworld_slip" => Ok(EnvSpec::gridworld_slip(5, 5, 0.2)),
        other => Err(ailboost::Error::InvalidArgument(format!(
            "unknown environment '{other}'"
        ))),
    }
}

fn expert_for_seed(cfg: &ExperimentConfig, mdp: &TabularMdp, seed: u64) -> Result<ExpertBundle> {
    let expert_seed = child_seed(seed, "expert");
    let mut rng = rng_from_seed(expert_seed);
    generate_expert(mdp, cfg.expert_trajs, cfg.expert_termination, expert_seed, &mut rng)
}

fn cmd_expert(action: ExpertCommand) -> Result<()> {
    match action {
        ExpertCommand::Gen {
            config,
            seed,
            out,
            expert_trajs,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(n) = expert_trajs {
                cfg.expert_trajs = n;
            }
            let mdp = build_env(&cfg.env)?;
            let mut rng = rng_from_seed(seed);
            let bundle =
                generate_expert(&mdp, cfg.expert_trajs, cfg.expert_termination, seed, &mut rng)?;
            let file =
                DatasetFile::from_trajectories(&cfg.env.label(), mdp.discount, &bundle.trajectories);
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            file.write(&out)?;
            println!("wrote {} records to {}", file.records.len(), out.display());
            println!("expert_return = {}", bundle.stats.expert_return);
            println!("random_return = {}", bundle.stats.random_return);
            Ok(())
        }
    }
}

/// Runs one (algo, seed) cell, streaming rows to the writer. Returns the
/// final policy wrapped as an ensemble.
fn run_cell(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    seed: u64,
    writer: &mut MetricsWriter,
) -> Result<PolicyEnsemble> {
    let env_label = cfg.env.label();
    let algo_name = cfg.algo.as_str();

    // Expert data: from file if configured, otherwise generated in-process.
    // The exact expert occupancy for KL metrics always comes from the
    // canonical value-iteration expert for this environment.
    let (expert_dataset, expert_policy) = match &cfg.expert_data {
        Some(path) => {
            let file = DatasetFile::load(path)?;
            if file.env != env_label {
                return Err(ailboost::Error::InvalidArgument(format!(
                    "dataset file is for env '{}', config builds '{env_label}'",
                    file.env
                )));
            }
            if (file.gamma - mdp.discount).abs() > 1e-12 {
                return Err(ailboost::Error::InvalidArgument(format!(
                    "dataset file has gamma {}, config uses {}",
                    file.gamma, mdp.discount
                )));
            }
            let bundle = expert_for_seed(cfg, mdp, seed)?;
            (
                file.to_expert_dataset(&format!("file:{}", path.display()), seed),
                bundle.expert_policy,
            )
        }
        None => {
            let bundle = expert_for_seed(cfg, mdp, seed)?;
            (bundle.dataset, bundle.expert_policy)
        }
    };
    let expert_occupancy = exact_occupancy(mdp, &expert_policy)?;

    let mut algo_config = cfg.algo_config.clone();
    algo_config.seed = seed;

    match cfg.algo {
        Algo::Ailboost => {
            let rounds = algo_config.rounds;
            let mut run = BoostRun::new(mdp, &expert_dataset, &expert_occupancy, algo_config)?;
            for _ in 0..rounds {
                let m = run.step()?;
                writer.write_row(algo_name, &env_label, seed, &m)?;
            }
            Ok(run.into_ensemble())
        }
        Algo::Dac => {
            let (policy, metrics) = run_dac(
                mdp,
                &expert_dataset,
                &expert_occupancy,
                algo_config,
                cfg.dac_reward,
            )?;
            for m in &metrics {
                writer.write_row(algo_name, &env_label, seed, m)?;
            }
            Ok(init_ensemble(policy))
        }
        Algo::Gail => {
            let (policy, metrics) = run_gail_onpolicy(
                mdp,
                &expert_dataset,
                &expert_occupancy,
                algo_config,
                cfg.dac_reward,
            )?;
            for m in &metrics {
                writer.write_row(algo_name, &env_label, seed, m)?;
            }
            Ok(init_ensemble(policy))
        }
        Algo::Bc => {
            let policy = behavior_cloning(
                &expert_dataset,
                mdp.num_states,
                mdp.num_actions,
                cfg.bc_smoothing,
            )?;
            let m = bc_metrics(mdp, &policy, &expert_occupancy)?;
            writer.write_row(algo_name, &env_label, seed, &m)?;
            Ok(init_ensemble(policy))
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(algo) = &args.algo {
        cfg.algo = Algo::parse(algo)?;
    }
    if args.oracle_mode {
        cfg.algo_config.oracle_mode = true;
    }
    if let Some(n) = args.expert_trajs {
        cfg.expert_trajs = n;
    }
    if let Some(path) = &args.expert_data {
        cfg.expert_data = Some(path.clone());
    }

    let mdp = build_env(&cfg.env)?;
    let seeds = match args.seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}_{}.csv", cfg.algo.as_str(), cfg.env.label())));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }

    let mut writer = MetricsWriter::create(&out)?;
    let mut last_ensemble = None;
    for &seed in &seeds {
        let ensemble = run_cell(&cfg, &mdp, seed, &mut writer)?;
        last_ensemble = Some(ensemble);
    }
    if let Some(path) = &args.save_ensemble {
        if let Some(ensemble) = &last_ensemble {
            write_ensemble(path, ensemble)?;
        }
    }
    println!("wrote metrics to {}", out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let mdp = build_env(&cfg.env)?;
    let ensemble = load_ensemble(&args.ensemble)?;
    let reward = mdp.env_reward.clone().ok_or_else(|| {
        ailboost::Error::InvalidArgument("environment has no reward to evaluate against".into())
    })?;
    let termination = if args.geometric {
        Termination::Geometric
    } else {
        if args.horizon == 0 {
            return Err(ailboost::Error::InvalidArgument(
                "horizon must be positive".into(),
            ));
        }
        Termination::Horizon(args.horizon)
    };
    let mut rng = rng_from_seed(args.seed);
    let summary =
        evaluate_ensemble(&mdp, &ensemble, &reward, args.episodes, termination, &mut rng)?;
    println!("episodes = {}", summary.episodes);
    println!(
        "return (undiscounted) = {} +/- {}",
        summary.mean_return, summary.std_error
    );
    println!(
        "return (discounted)   = {} +/- {}",
        summary.mean_discounted_return, summary.std_error_discounted
    );
    Ok(())
}

/// The four policy/discriminator update schedules.
const SCHEDULES: [(&str, usize, usize); 4] = [
    ("pu1000_du100", 1000, 100),
    ("pu1000_du10", 1000, 10),
    ("pu1000_du1", 1000, 1),
    ("pu100_du100", 100, 100),
];

fn cmd_sweep(action: SweepCommand) -> Result<()> {
    match action {
        SweepCommand::Schedules { config, out, seed } => {
            let base = ExperimentConfig::load(&config)?;
            let mdp = build_env(&base.env)?;
            let seeds = match seed {
                Some(s) => vec![s],
                None => base.seeds.clone(),
            };
            std::fs::create_dir_all(&out)?;
            for (name, policy_steps, disc_steps) in SCHEDULES {
                let mut cfg = base.clone();
                cfg.algo = Algo::Ailboost;
                cfg.algo_config.policy_steps = policy_steps;
                cfg.algo_config.disc_steps = disc_steps;
                let path = out.join(format!("{name}.csv"));
                let mut writer = MetricsWriter::create(&path)?;
                for &s in &seeds {
                    run_cell(&cfg, &mdp, s, &mut writer)?;
                }
                println!(
                    "{name}: {policy_steps} policy updates per {disc_steps} discriminator updates -> {}",
                    path.display()
                );
            }
            Ok(())
        }
    }
}

struct VerifyReport {
    failures: usize,
}

impl VerifyReport {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        if ok {
            println!("PASS {name}: {detail}");
        } else {
            self.failures += 1;
            println!("FAIL {name}: {detail}");
        }
    }
}

fn cmd_verify(args: VerifyArgs) -> ExitCode {
    match run_verification(args.quick) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("{failures} verification check(s) failed");
            ExitCode::FAILURE
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run_verification(quick: bool) -> Result<usize> {
    let mut report = VerifyReport { failures: 0 };

    // Ensemble weight algebra over 500 mixes.
    {
        let policy = MarkovPolicy::uniform(2, 2);
        let alpha = 0.05;
        let rounds = 500;
        let mut ens = init_ensemble(policy.clone());
        for _ in 0..rounds {
            ens = mix_in(&ens, policy.clone(), alpha)?;
        }
        let weights = ens.weights();
        let mut worst = (weights.iter().sum::<f64>() - 1.0).abs();
        for (i, w) in weights.iter().enumerate() {
            let closed = if i == 0 {
                (1.0 - alpha).powi(rounds as i32)
            } else {
                alpha * (1.0 - alpha).powi((rounds - i) as i32)
            };
            worst = worst.max((w - closed).abs());
        }
        report.check(
            "ensemble-weight-algebra",
            worst <= 1e-12,
            format!("max deviation from closed form over {rounds} mixes = {worst:.3e}"),
        );
    }

    // Occupancy flow residuals on random MDPs.
    {
        let mut rng = rng_from_seed(1234);
        let instances = if quick { 20 } else { 100 };
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let mdp = random_verify_mdp(&mut rng);
            let policy = random_verify_policy(&mut rng, mdp.num_states, mdp.num_actions);
            let occ = exact_occupancy(&mdp, &policy)?;
            worst = worst.max(flow_residual(&mdp, &policy, &occ));
        }
        report.check(
            "occupancy-flow-residual",
            worst <= 1e-8,
            format!("max residual over {instances} random MDPs = {worst:.3e}"),
        );
    }

    // Variational identity at the closed-form maximizer.
    {
        let mdp = build_env(&EnvSpec::gridworld(4, 4))?;
        let a = exact_occupancy(&mdp, &MarkovPolicy::uniform(16, 4))?;
        let mut soft = MarkovPolicy::uniform(16, 4).probs;
        for (i, p) in soft.iter_mut().enumerate() {
            *p = if i % 4 == 0 { 0.4 } else { 0.2 };
        }
        let b = exact_occupancy(&mdp, &MarkovPolicy::new(16, 4, soft))?;
        let g_star = optimal_discriminator(&a, &b, 50.0);
        let gap =
            (variational_objective(&g_star, &a, &b) - (reverse_kl(&a, &b, 0.0) - 1.0)).abs();
        report.check(
            "variational-identity",
            gap <= 1e-9,
            format!("|objective(g*) - (KL - 1)| = {gap:.3e}"),
        );
    }

    // Full-batch gradient vs central finite differences.
    {
        let expert = ExpertDataset::new(vec![(0, 0), (0, 1), (1, 0), (1, 1), (0, 0)], "verify", 0);
        let mut buffer = WeightedReplayBuffer::new();
        buffer.append_dataset(TransitionDataset::new(
            1,
            vec![
                Transition { state: 0, action: 0, next_state: 0, terminal: false },
                Transition { state: 1, action: 1, next_state: 0, terminal: false },
                Transition { state: 1, action: 0, next_state: 0, terminal: false },
            ],
        ))?;
        buffer.set_weights(&[1.0])?;
        let mut rng = rng_from_seed(99);
        let mut g = Discriminator::zeros(2, 2, 10.0);
        for v in &mut g.values {
            *v = rand::Rng::gen_range(&mut rng, -1.0..1.0);
        }
        let analytic = empirical_objective_gradient(&g, &expert, &buffer)?;
        let h = 1e-5;
        let mut worst = 0.0f64;
        #[allow(clippy::needless_range_loop)]
        for i in 0..g.values.len() {
            let mut up = g.clone();
            up.values[i] += h;
            let mut down = g.clone();
            down.values[i] -= h;
            let fd = (empirical_variational_objective(&up, &expert, &buffer)?
                - empirical_variational_objective(&down, &expert, &buffer)?)
                / (2.0 * h);
            worst = worst.max((analytic[i] - fd).abs() / analytic[i].abs().max(1e-8));
        }
        report.check(
            "discriminator-gradient",
            worst <= 1e-5,
            format!("max relative error vs finite differences = {worst:.3e}"),
        );
    }

    // Replay buffer weighted expectation and staleness contract.
    {
        let mut buffer = WeightedReplayBuffer::new();
        buffer.append_dataset(TransitionDataset::new(
            1,
            vec![Transition { state: 0, action: 0, next_state: 0, terminal: false }],
        ))?;
        buffer.append_dataset(TransitionDataset::new(
            2,
            vec![Transition { state: 1, action: 0, next_state: 0, terminal: false }],
        ))?;
        let stale_rejected = buffer.sample_weighted(1, &mut rng_from_seed(0)).is_err();
        buffer.set_weights(&[0.5, 0.5])?;
        let value = buffer.weighted_expectation(|s, _| if s == 0 { 1.0 } else { 3.0 })?;
        report.check(
            "replay-weighted-expectation",
            stale_rejected && (value - 2.0).abs() <= 1e-15,
            format!("stale draw rejected = {stale_rejected}, expectation = {value}"),
        );
    }

    // Exact-oracle boosting descent on the 5x5 gridworld.
    {
        let rounds = if quick { 60 } else { 200 };
        let started = Instant::now();
        let mdp = build_env(&EnvSpec::gridworld(5, 5))?;
        let expert_seed = child_seed(7, "expert");
        let mut rng = rng_from_seed(expert_seed);
        let bundle = generate_expert(&mdp, 1, Termination::Horizon(200), expert_seed, &mut rng)?;
        let expert_occ = bundle.occupancy(&mdp)?;
        let config = AilboostConfig {
            rounds,
            oracle_mode: true,
            seed: 7,
            ..AilboostConfig::default()
        };
        let mut run = BoostRun::new(&mdp, &bundle.dataset, &expert_occ, config)?;
        let mut metrics: Vec<IterationMetrics> = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            metrics.push(run.step()?);
        }
        let elapsed = started.elapsed().as_secs_f64();
        let first = metrics[0].reverse_kl;
        let last = metrics.last().unwrap().reverse_kl;
        let nonincreasing = metrics
            .windows(2)
            .filter(|w| w[1].reverse_kl <= w[0].reverse_kl + 1e-12)
            .count();
        let frac = nonincreasing as f64 / (metrics.len() - 1) as f64;
        let min_gap = metrics.iter().map(|m| m.fw_gap).fold(f64::INFINITY, f64::min);
        report.check(
            "oracle-boosting-descent",
            last <= 0.10 * first && frac >= 0.95 && min_gap >= -1e-9 && elapsed <= 60.0,
            format!(
                "KL {first:.4} -> {last:.3e} ({}x), nonincreasing {:.1}%, min gap {min_gap:.2e}, {elapsed:.1}s",
                last / first,
                100.0 * frac
            ),
        );

        // normalized score of the final oracle ensemble, for the record
        if let Some(m) = metrics.last() {
            let score = m.normalized_score;
            report.check(
                "oracle-final-score",
                score >= 0.95,
                format!("normalized score at round {rounds} = {score:.4}"),
            );
        }
    }

    Ok(report.failures)
}

fn random_verify_mdp(rng: &mut rand_chacha::ChaCha8Rng) -> TabularMdp {
    use rand::Rng;
    let s_count = rng.gen_range(2..=50);
    let a_count = rng.gen_range(2..=5);
    let mut transition = vec![0.0; s_count * a_count * s_count];
    for row in transition.chunks_mut(s_count) {
        let mut sum = 0.0;
        for p in row.iter_mut() {
            *p = rng.gen_range(0.01..1.0);
            sum += *p;
        }
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    let mut init: Vec<f64> = (0..s_count).map(|_| rng.gen_range(0.01..1.0)).collect();
    let z: f64 = init.iter().sum();
    init.iter_mut().for_each(|p| *p /= z);
    TabularMdp::new(s_count, a_count, transition, rng.gen_range(0.5..0.99), init, None)
}

fn random_verify_policy(
    rng: &mut rand_chacha::ChaCha8Rng,
    num_states: usize,
    num_actions: usize,
) -> MarkovPolicy {
    use rand::Rng;
    let mut probs = vec![0.0; num_states * num_actions];
    for row in probs.chunks_mut(num_actions) {
        let mut sum = 0.0;
        for p in row.iter_mut() {
            *p = rng.gen_range(0.01..1.0);
            sum += *p;
        }
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    MarkovPolicy::new(num_states, num_actions, probs)
}
