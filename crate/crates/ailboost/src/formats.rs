//! File formats: experiment configs, demonstration datasets, serialized
//! ensembles, and the metrics CSV.
//!
//! All formats are line-oriented UTF-8 so they stay diff-able and
//! language-neutral:
//! - configs: `key = value` pairs under `[section]` headers, `#` comments;
//! - datasets: a `version=1 env=<name> gamma=<γ> records=<n>` header, then
//!   one `episode step s a r s_next done` record per line;
//! - ensembles: a `components=<n> states=<S> actions=<A>` header, then per
//!   component an `alpha=<w>` line followed by S rows of A probabilities;
//! - metrics: a fixed CSV header, one row per round, flushed row by row so
//!   interrupted runs truncate at a complete row.
//!
//! Serialization is canonical (fixed key order, shortest round-trip float
//! formatting), so parse → serialize → parse is a fixed point and files
//! written twice from the same data are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::baselines::DacRewardForm;
use crate::boost::{AilboostConfig, IterationMetrics};
use crate::divergence::ExpertDataset;
use crate::ensemble::PolicyEnsemble;
use crate::envs::{EnvKind, EnvSpec, StartSpec};
use crate::error::{Error, Result};
use crate::mdp::{MarkovPolicy, Termination, Trajectory};

/// Which algorithm a `train` invocation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Ailboost,
    Dac,
    Bc,
    Gail,
}

impl Algo {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Ailboost => "ailboost",
            Algo::Dac => "dac",
            Algo::Bc => "bc",
            Algo::Gail => "gail",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ailboost" => Ok(Algo::Ailboost),
            "dac" => Ok(Algo::Dac),
            "bc" => Ok(Algo::Bc),
            "gail" => Ok(Algo::Gail),
            other => Err(Error::Parse(format!("unknown algo '{other}'"))),
        }
    }
}

/// One experiment: environment, algorithm, its knobs, expert data source,
/// and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub algo: Algo,
    pub algo_config: AilboostConfig,
    pub dac_reward: DacRewardForm,
    pub bc_smoothing: f64,
    pub expert_trajs: usize,
    pub expert_termination: Termination,
    /// Optional dataset file; absent means demonstrations are generated
    /// in-process from a seed-derived expert.
    pub expert_data: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::gridworld(5, 5),
            algo: Algo::Ailboost,
            algo_config: AilboostConfig::default(),
            dac_reward: DacRewardForm::LogRatio,
            bc_smoothing: 1.0,
            expert_trajs: 10,
            expert_termination: Termination::Geometric,
            expert_data: None,
            seeds: vec![1, 2, 3],
            out: None,
        }
    }
}

fn format_termination(t: Termination) -> String {
    match t {
        Termination::Geometric => "geometric".to_string(),
        Termination::Horizon(h) => format!("horizon:{h}"),
    }
}

fn parse_termination(s: &str) -> Result<Termination> {
    if s == "geometric" {
        return Ok(Termination::Geometric);
    }
    if let Some(h) = s.strip_prefix("horizon:") {
        let h: usize = h
            .parse()
            .map_err(|_| Error::Parse(format!("bad horizon '{s}'")))?;
        if h == 0 {
            return Err(Error::Parse("horizon must be positive".into()));
        }
        return Ok(Termination::Horizon(h));
    }
    Err(Error::Parse(format!("unknown termination '{s}'")))
}

impl ExperimentConfig {
    /// Canonical serialization: fixed section and key order.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "algo = {}", self.algo.as_str());
        let _ = writeln!(
            s,
            "seeds = {}",
            self.seeds
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        );
        let _ = writeln!(s, "expert_trajs = {}", self.expert_trajs);
        let _ = writeln!(
            s,
            "expert_termination = {}",
            format_termination(self.expert_termination)
        );
        if let Some(p) = &self.expert_data {
            let _ = writeln!(s, "expert_data = {}", p.display());
        }
        if let Some(p) = &self.out {
            let _ = writeln!(s, "out = {}", p.display());
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "[env]");
        let _ = writeln!(s, "name = {}", self.env.name());
        match self.env.kind {
            EnvKind::Chain { length } => {
                let _ = writeln!(s, "length = {length}");
            }
            EnvKind::Gridworld { width, height } => {
                let _ = writeln!(s, "width = {width}");
                let _ = writeln!(s, "height = {height}");
            }
            EnvKind::GridworldSlip {
                width,
                height,
                slip,
            } => {
                let _ = writeln!(s, "width = {width}");
                let _ = writeln!(s, "height = {height}");
                let _ = writeln!(s, "slip = {slip}");
            }
        }
        let _ = writeln!(s, "gamma = {}", self.env.discount);
        match self.env.start {
            StartSpec::Delta(state) => {
                let _ = writeln!(s, "start = {state}");
            }
            StartSpec::Uniform => {
                let _ = writeln!(s, "start = uniform");
            }
        }
        if let Some(goal) = self.env.goal {
            let _ = writeln!(s, "goal = {goal}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "[algo]");
        let c = &self.algo_config;
        let _ = writeln!(s, "rounds = {}", c.rounds);
        let _ = writeln!(s, "samples_per_round = {}", c.samples_per_round);
        let _ = writeln!(s, "mix_weight = {}", c.mix_weight);
        let _ = writeln!(s, "disc_steps = {}", c.disc_steps);
        let _ = writeln!(s, "policy_steps = {}", c.policy_steps);
        let _ = writeln!(s, "disc_lr = {}", c.disc_lr);
        match c.batch_size {
            Some(b) => {
                let _ = writeln!(s, "batch_size = {b}");
            }
            None => {
                let _ = writeln!(s, "batch_size = full");
            }
        }
        let _ = writeln!(s, "temperature = {}", c.temperature);
        let _ = writeln!(s, "clip = {}", c.clip);
        let _ = writeln!(s, "td_lr = {}", c.td_lr);
        let _ = writeln!(s, "termination = {}", format_termination(c.termination));
        let _ = writeln!(s, "oracle_mode = {}", c.oracle_mode);
        let _ = writeln!(s, "stale_newest_weight = {}", c.stale_newest_weight);
        let _ = writeln!(
            s,
            "dac_reward = {}",
            match self.dac_reward {
                DacRewardForm::LogRatio => "log_ratio",
                DacRewardForm::NegLogD => "neg_log_d",
            }
        );
        let _ = writeln!(s, "bc_smoothing = {}", self.bc_smoothing);
        s
    }

    /// Parses the `key = value` format. Unknown sections or keys are
    /// schema violations and fail the parse.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        // Env fields are collected first because the kind depends on which
        // size keys appear.
        let mut env_name: Option<String> = None;
        let mut length = None;
        let mut width = None;
        let mut height = None;
        let mut slip = None;
        let mut gamma = None;
        let mut start = None;
        let mut goal = None;

        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(section.as_str(), "experiment" | "env" | "algo") {
                    return Err(Error::Parse(format!(
                        "line {}: unknown section [{section}]",
                        lineno + 1
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_err =
                |what: &str| Error::Parse(format!("line {}: bad {what} '{value}'", lineno + 1));

            match (section.as_str(), key) {
                ("experiment", "algo") => cfg.algo = Algo::parse(value)?,
                ("experiment", "seeds") => {
                    cfg.seeds = value
                        .split_whitespace()
                        .map(|x| x.parse::<u64>().map_err(|_| parse_err("seed")))
                        .collect::<Result<Vec<_>>>()?;
                    if cfg.seeds.is_empty() {
                        return Err(Error::Parse("seed list is empty".into()));
                    }
                }
                ("experiment", "expert_trajs") => {
                    cfg.expert_trajs = value.parse().map_err(|_| parse_err("expert_trajs"))?
                }
                ("experiment", "expert_termination") => {
                    cfg.expert_termination = parse_termination(value)?
                }
                ("experiment", "expert_data") => cfg.expert_data = Some(PathBuf::from(value)),
                ("experiment", "out") => cfg.out = Some(PathBuf::from(value)),
                ("env", "name") => env_name = Some(value.to_string()),
                ("env", "length") => {
                    length = Some(value.parse::<usize>().map_err(|_| parse_err("length"))?)
                }
                ("env", "width") => {
                    width = Some(value.parse::<usize>().map_err(|_| parse_err("width"))?)
                }
                ("env", "height") => {
                    height = Some(value.parse::<usize>().map_err(|_| parse_err("height"))?)
                }
                ("env", "slip") => {
                    slip = Some(value.parse::<f64>().map_err(|_| parse_err("slip"))?)
                }
                ("env", "gamma") => {
                    gamma = Some(value.parse::<f64>().map_err(|_| parse_err("gamma"))?)
                }
                ("env", "start") => {
                    start = Some(if value == "uniform" {
                        StartSpec::Uniform
                    } else {
                        StartSpec::Delta(value.parse::<usize>().map_err(|_| parse_err("start"))?)
                    })
                }
                ("env", "goal") => {
                    goal = Some(value.parse::<usize>().map_err(|_| parse_err("goal"))?)
                }
                ("algo", "rounds") => {
                    cfg.algo_config.rounds = value.parse().map_err(|_| parse_err("rounds"))?
                }
                ("algo", "samples_per_round") => {
                    cfg.algo_config.samples_per_round =
                        value.parse().map_err(|_| parse_err("samples_per_round"))?
                }
                ("algo", "mix_weight") => {
                    cfg.algo_config.mix_weight =
                        value.parse().map_err(|_| parse_err("mix_weight"))?
                }
                ("algo", "disc_steps") => {
                    cfg.algo_config.disc_steps =
                        value.parse().map_err(|_| parse_err("disc_steps"))?
                }
                ("algo", "policy_steps") => {
                    cfg.algo_config.policy_steps =
                        value.parse().map_err(|_| parse_err("policy_steps"))?
                }
                ("algo", "disc_lr") => {
                    cfg.algo_config.disc_lr = value.parse().map_err(|_| parse_err("disc_lr"))?
                }
                ("algo", "batch_size") => {
                    cfg.algo_config.batch_size = if value == "full" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| parse_err("batch_size"))?)
                    }
                }
                ("algo", "temperature") => {
                    cfg.algo_config.temperature =
                        value.parse().map_err(|_| parse_err("temperature"))?
                }
                ("algo", "clip") => {
                    cfg.algo_config.clip = value.parse().map_err(|_| parse_err("clip"))?
                }
                ("algo", "td_lr") => {
                    cfg.algo_config.td_lr = value.parse().map_err(|_| parse_err("td_lr"))?
                }
                ("algo", "termination") => {
                    cfg.algo_config.termination = parse_termination(value)?
                }
                ("algo", "oracle_mode") => {
                    cfg.algo_config.oracle_mode =
                        value.parse().map_err(|_| parse_err("oracle_mode"))?
                }
                ("algo", "stale_newest_weight") => {
                    cfg.algo_config.stale_newest_weight =
                        value.parse().map_err(|_| parse_err("stale_newest_weight"))?
                }
                ("algo", "dac_reward") => {
                    cfg.dac_reward = match value {
                        "log_ratio" => DacRewardForm::LogRatio,
                        "neg_log_d" => DacRewardForm::NegLogD,
                        _ => return Err(parse_err("dac_reward")),
                    }
                }
                ("algo", "bc_smoothing") => {
                    cfg.bc_smoothing = value.parse().map_err(|_| parse_err("bc_smoothing"))?
                }
                (sec, k) => {
                    return Err(Error::Parse(format!(
                        "line {}: unknown key '{k}' in section [{sec}]",
                        lineno + 1
                    )))
                }
            }
        }

        let name = env_name.ok_or_else(|| Error::Parse("missing env name".into()))?;
        let kind = match name.as_str() {
            "chain" => EnvKind::Chain {
                length: length.ok_or_else(|| Error::Parse("chain needs length".into()))?,
            },
            "gridworld" => EnvKind::Gridworld {
                width: width.ok_or_else(|| Error::Parse("gridworld needs width".into()))?,
                height: height.ok_or_else(|| Error::Parse("gridworld needs height".into()))?,
            },
            "gridworld_slip" => EnvKind::GridworldSlip {
                width: width.ok_or_else(|| Error::Parse("gridworld_slip needs width".into()))?,
                height: height
                    .ok_or_else(|| Error::Parse("gridworld_slip needs height".into()))?,
                slip: slip.ok_or_else(|| Error::Parse("gridworld_slip needs slip".into()))?,
            },
            other => return Err(Error::Parse(format!("unknown env '{other}'"))),
        };
        let mut env = match kind {
            EnvKind::Chain { length } => EnvSpec::chain(length),
            EnvKind::Gridworld { width, height } => EnvSpec::gridworld(width, height),
            EnvKind::GridworldSlip {
                width,
                height,
                slip,
            } => EnvSpec::gridworld_slip(width, height, slip),
        };
        if let Some(g) = gamma {
            env.discount = g;
        }
        if let Some(st) = start {
            env.start = st;
        }
        env.goal = goal;
        cfg.env = env;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRecord {
    pub episode: usize,
    pub step: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
}

/// In-memory dataset file: env label, discount, flat records.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub env: String,
    pub gamma: f64,
    pub records: Vec<DatasetRecord>,
}

impl DatasetFile {
    pub fn from_trajectories(env: &str, gamma: f64, trajectories: &[Trajectory]) -> Self {
        let mut records = Vec::new();
        for (episode, traj) in trajectories.iter().enumerate() {
            for (step, st) in traj.steps.iter().enumerate() {
                records.push(DatasetRecord {
                    episode,
                    step,
                    state: st.state,
                    action: st.action,
                    reward: st.reward,
                    next_state: st.next_state,
                    done: st.terminal,
                });
            }
        }
        Self {
            env: env.to_string(),
            gamma,
            records,
        }
    }

    pub fn to_string_canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "version=1 env={} gamma={} records={}",
            self.env,
            self.gamma,
            self.records.len()
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {}",
                r.episode,
                r.step,
                r.state,
                r.action,
                r.reward,
                r.next_state,
                u8::from(r.done)
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        let mut env = None;
        let mut gamma = None;
        let mut declared = None;
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field '{field}'")))?;
            match k {
                "version" => {
                    if v != "1" {
                        return Err(Error::Parse(format!("unsupported dataset version '{v}'")));
                    }
                }
                "env" => env = Some(v.to_string()),
                "gamma" => {
                    gamma = Some(
                        v.parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad gamma '{v}'")))?,
                    )
                }
                "records" => {
                    declared = Some(
                        v.parse::<usize>()
                            .map_err(|_| Error::Parse(format!("bad record count '{v}'")))?,
                    )
                }
                other => return Err(Error::Parse(format!("unknown header field '{other}'"))),
            }
        }
        let env = env.ok_or_else(|| Error::Parse("header missing env".into()))?;
        let gamma = gamma.ok_or_else(|| Error::Parse("header missing gamma".into()))?;
        let declared = declared.ok_or_else(|| Error::Parse("header missing records".into()))?;

        let mut records = Vec::with_capacity(declared);
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 7 {
                return Err(Error::Parse(format!(
                    "record line {}: expected 7 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let bad = |what: &str| Error::Parse(format!("record line {}: bad {what}", lineno + 2));
            records.push(DatasetRecord {
                episode: fields[0].parse().map_err(|_| bad("episode"))?,
                step: fields[1].parse().map_err(|_| bad("step"))?,
                state: fields[2].parse().map_err(|_| bad("state"))?,
                action: fields[3].parse().map_err(|_| bad("action"))?,
                reward: fields[4].parse().map_err(|_| bad("reward"))?,
                next_state: fields[5].parse().map_err(|_| bad("next_state"))?,
                done: match fields[6] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("done flag")),
                },
            });
        }
        if records.len() != declared {
            return Err(Error::Parse(format!(
                "header declares {declared} records, file has {}",
                records.len()
            )));
        }
        Ok(Self {
            env,
            gamma,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string_canonical())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Projects the records down to the expert-pair view.
    pub fn to_expert_dataset(&self, policy_id: &str, seed: u64) -> ExpertDataset {
        ExpertDataset::new(
            self.records.iter().map(|r| (r.state, r.action)).collect(),
            policy_id,
            seed,
        )
    }
}

/// Canonical text form of an ensemble.
pub fn ensemble_to_string(ensemble: &PolicyEnsemble) -> String {
    let mut s = String::new();
    let (num_states, num_actions) = match ensemble.components().next() {
        Some((_, p)) => (p.num_states, p.num_actions),
        None => (0, 0),
    };
    let _ = writeln!(
        s,
        "components={} states={} actions={}",
        ensemble.len(),
        num_states,
        num_actions
    );
    for (w, policy) in ensemble.components() {
        let _ = writeln!(s, "alpha={w}");
        for state in 0..num_states {
            let row = policy
                .action_probs(state)
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(s, "{row}");
        }
    }
    s
}

pub fn parse_ensemble(text: &str) -> Result<PolicyEnsemble> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty ensemble file".into()))?;
    let mut count = None;
    let mut num_states = None;
    let mut num_actions = None;
    for field in header.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header field '{field}'")))?;
        let parsed: usize = v
            .parse()
            .map_err(|_| Error::Parse(format!("bad header value '{v}'")))?;
        match k {
            "components" => count = Some(parsed),
            "states" => num_states = Some(parsed),
            "actions" => num_actions = Some(parsed),
            other => return Err(Error::Parse(format!("unknown header field '{other}'"))),
        }
    }
    let count = count.ok_or_else(|| Error::Parse("header missing components".into()))?;
    let num_states = num_states.ok_or_else(|| Error::Parse("header missing states".into()))?;
    let num_actions = num_actions.ok_or_else(|| Error::Parse("header missing actions".into()))?;

    let mut components = Vec::with_capacity(count);
    for _ in 0..count {
        let alpha_line = lines
            .next()
            .ok_or_else(|| Error::Parse("truncated ensemble file".into()))?;
        let alpha = alpha_line
            .strip_prefix("alpha=")
            .ok_or_else(|| Error::Parse(format!("expected alpha line, got '{alpha_line}'")))?
            .parse::<f64>()
            .map_err(|_| Error::Parse("bad alpha value".into()))?;
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for _ in 0..num_states {
            let row = lines
                .next()
                .ok_or_else(|| Error::Parse("truncated ensemble file".into()))?;
            let values: Vec<f64> = row
                .split_whitespace()
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad probability '{x}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != num_actions {
                return Err(Error::Parse(format!(
                    "policy row has {} entries, expected {num_actions}",
                    values.len()
                )));
            }
            probs.extend(values);
        }
        let policy = MarkovPolicy::new(num_states, num_actions, probs);
        policy.validate()?;
        components.push((alpha, policy));
    }
    let ensemble = PolicyEnsemble::from_components(components);
    ensemble.validate()?;
    Ok(ensemble)
}

pub fn write_ensemble(path: &Path, ensemble: &PolicyEnsemble) -> Result<()> {
    fs::write(path, ensemble_to_string(ensemble))?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<PolicyEnsemble> {
    parse_ensemble(&fs::read_to_string(path)?)
}

/// Fixed metrics schema.
pub const CSV_HEADER: &str =
    "algo,env,seed,round,env_steps,reverse_kl,disc_objective,mean_return,normalized_score,fw_gap";

pub fn csv_row(algo: &str, env_label: &str, seed: u64, m: &IterationMetrics) -> String {
    format!(
        "{algo},{env_label},{seed},{},{},{},{},{},{},{}",
        m.round,
        m.env_steps,
        m.reverse_kl,
        m.disc_objective,
        m.mean_return,
        m.normalized_score,
        m.fw_gap
    )
}

/// Row-by-row CSV writer that flushes after every row, so a killed run
/// leaves a file truncated at a complete row.
pub struct MetricsWriter {
    inner: BufWriter<fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path)?;
        let mut inner = BufWriter::new(file);
        writeln!(inner, "{CSV_HEADER}")?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write_row(&mut self, algo: &str, env_label: &str, seed: u64, m: &IterationMetrics) -> Result<()> {
        writeln!(self.inner, "{}", csv_row(algo, env_label, seed, m))?;
        self.inner.flush()?;
        Ok(())
    }
}
