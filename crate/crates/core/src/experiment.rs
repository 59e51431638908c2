//! Experiment definitions and the train / eval / sweep / validate commands.
//!
//! An experiment is one TOML file. `include = ["shared.toml", ..]` pulls in
//! fragments first; keys in the including file override them, tables merge
//! key by key. Relative paths (`network.path`, `controller.checkpoint`,
//! `controller.checkpoint_dir`) resolve against the file they appear in, and
//! `out_dir` resolves against the output root (`$MIXFLOW_OUT`, default `runs`).
//!
//! ```toml
//! seed = 7
//! runs = 10
//! out_dir = "fourway-rl"
//!
//! [network]
//! builtin = "fourway"
//!
//! [demand]
//! total_inflow = 700
//! rv_rate = 0.6
//!
//! [controller]
//! kind = "rl"
//! checkpoint = "policy.json"
//!
//! [episode]
//! horizon = 1000
//! train_horizon = 300
//!
//! [train]
//! preset = "desk"
//!
//! [sweep]
//! rates = [0.1, 0.5, 0.9]
//! mode = "train"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{evaluate, load_checkpoint, save_checkpoint, train, write_curve, TrainConfig};
use crate::derive_seed;
use crate::dynamics::{
    EntryControl, SignalPhase, SignalPlan, SimConfig, SimState, DEFAULT_DT, DEFAULT_GREEN, DEFAULT_YELLOW,
};
use crate::env::{EpisodeConfig, RewardParams};
use crate::error::{AgentError, ExperimentError, MetricsError, TopologyError};
use crate::metrics::{
    aggregate_runs, read_report, write_report, MetricsReport, RunMetrics, ALL_TYPES, SCOPE_SIGNALIZED,
    SCOPE_UNSIGNALIZED,
};
use crate::parallel::{map_runs, try_map_runs};
use crate::topology::{builtin_fourway, fourway_demand, parse_config, DemandSpec, Network};

pub const OUT_ROOT_VAR: &str = "MIXFLOW_OUT";
pub const DEFAULT_OUT_ROOT: &str = "runs";
pub const SNAPSHOT_FILE: &str = "resolved_config.toml";
pub const POLICY_FILE: &str = "policy.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Stream id separating training seeds from evaluation seeds.
const TRAIN_STREAM: u64 = 0x7472_6169_6e00;

const PATH_KEYS: [(&str, &str); 3] = [
    ("network", "path"),
    ("controller", "checkpoint"),
    ("controller", "checkpoint_dir"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_true")]
    pub parallel: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub network: NetworkConfig,
    pub demand: DemandConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub episode: EpisodeSection,
    #[serde(default)]
    pub reward: RewardSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_runs() -> usize {
    10
}

fn default_true() -> bool {
    true
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("experiment")
}

/// Either `builtin = "fourway"` (with `lanes`) or `path` to a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lanes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// Uniform inflow split over approaches with a through/left/right split, or,
/// when `total_inflow` is absent, the `[demand]` section of the network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_inflow: Option<f64>,
    #[serde(default = "default_through")]
    pub through: f64,
    #[serde(default = "default_left")]
    pub left: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rv_rate: Option<f64>,
}

fn default_through() -> f64 {
    0.6
}

fn default_left() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControllerConfig {
    Rl {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint: Option<PathBuf>,
        /// Sweep checkpoints live at `<dir>/rate_<r>/policy.json`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint_dir: Option<PathBuf>,
    },
    Signalized {
        #[serde(default = "default_green")]
        green: f64,
        #[serde(default = "default_yellow")]
        yellow: f64,
        /// Explicit plan; otherwise phases are built from the conflict matrix.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phases: Option<Vec<SignalPhase>>,
    },
    Unsignalized {},
}

fn default_green() -> f64 {
    DEFAULT_GREEN
}

fn default_yellow() -> f64 {
    DEFAULT_YELLOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    /// Evaluation episode length, seconds.
    pub horizon: f64,
    /// Training episode length, seconds.
    pub train_horizon: f64,
    pub dt: f64,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        EpisodeSection {
            horizon: 1000.0,
            train_horizon: 300.0,
            dt: DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub alpha: f64,
    pub conflict_penalty: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let p = RewardParams::default();
        RewardSection {
            alpha: p.alpha,
            conflict_penalty: p.conflict_penalty,
        }
    }
}

impl RewardSection {
    pub fn params(&self) -> RewardParams {
        RewardParams {
            alpha: self.alpha,
            conflict_penalty: self.conflict_penalty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// Train one policy per rate, then evaluate it.
    Train,
    /// Evaluate existing checkpoints from `controller.checkpoint_dir`.
    Checkpoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
    #[serde(default = "default_sweep_mode")]
    pub mode: SweepMode,
    /// Also evaluate both HV-only baselines.
    #[serde(default = "default_true")]
    pub baselines: bool,
}

fn default_sweep_mode() -> SweepMode {
    SweepMode::Train
}

fn cfg_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

fn merge(dst: &mut toml::Table, src: toml::Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

fn absolutize(table: &mut toml::Table, base: &Path) {
    for (section, key) in PATH_KEYS {
        if let Some(toml::Value::Table(t)) = table.get_mut(section) {
            if let Some(toml::Value::String(s)) = t.get_mut(key) {
                let p = Path::new(s.as_str());
                if p.is_relative() {
                    *s = base.join(p).to_string_lossy().into_owned();
                }
            }
        }
    }
}

fn load_table(path: &Path, stack: &mut Vec<PathBuf>) -> Result<toml::Table, ExperimentError> {
    let canonical = fs::canonicalize(path).map_err(|e| ExperimentError::io(path, e))?;
    if stack.contains(&canonical) {
        return Err(cfg_err(format!("include cycle through {}", path.display())));
    }
    let text = fs::read_to_string(&canonical).map_err(|e| ExperimentError::io(path, e))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    let dir = canonical.parent().map(Path::to_path_buf).unwrap_or_default();
    absolutize(&mut table, &dir);
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::String(s)) => vec![s],
        Some(toml::Value::Array(xs)) => xs
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                other => Err(cfg_err(format!("include entries must be strings, found {other}"))),
            })
            .collect::<Result<_, _>>()?,
        Some(other) => return Err(cfg_err(format!("include must be a string or list, found {other}"))),
    };
    stack.push(canonical);
    let mut merged = toml::Table::new();
    for inc in includes {
        merge(&mut merged, load_table(&dir.join(inc), stack)?);
    }
    stack.pop();
    merge(&mut merged, table);
    Ok(merged)
}

fn expand_train_preset(table: &mut toml::Table) -> Result<(), ExperimentError> {
    let Some(toml::Value::Table(train)) = table.get_mut("train") else {
        return Ok(());
    };
    let Some(preset) = train.remove("preset") else {
        return Ok(());
    };
    let base = match preset.as_str() {
        Some("desk") => TrainConfig::desk(),
        Some("full") => TrainConfig::default(),
        _ => return Err(cfg_err(format!("unknown train preset {preset}"))),
    };
    let mut full = toml::Table::try_from(&base).map_err(|e| cfg_err(e.to_string()))?;
    merge(&mut full, std::mem::take(train));
    *train = full;
    Ok(())
}

impl ExperimentConfig {
    /// Reads a config file, following includes.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let mut table = load_table(path, &mut Vec::new())?;
        expand_train_preset(&mut table)?;
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(format!("{}: {}", path.display(), e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config without includes; relative paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ExperimentError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        if table.contains_key("include") {
            return Err(cfg_err("include needs a config file; use ExperimentConfig::load"));
        }
        absolutize(&mut table, base);
        expand_train_preset(&mut table)?;
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs == 0 {
            return Err(cfg_err("runs must be at least 1"));
        }
        match (&self.network.builtin, &self.network.path) {
            (Some(_), Some(_)) => return Err(cfg_err("network: give either builtin or path, not both")),
            (None, None) => return Err(cfg_err("network: builtin or path is required")),
            (None, Some(_)) if self.network.lanes.is_some() => {
                return Err(cfg_err("network: lanes applies only to builtin networks"))
            }
            (Some(name), None) if name != "fourway" => {
                return Err(cfg_err(format!("network: unknown builtin `{name}`")))
            }
            _ => {}
        }
        if self.network.lanes == Some(0) {
            return Err(cfg_err("network: lanes must be positive"));
        }
        let d = &self.demand;
        if let Some(q) = d.total_inflow {
            if !(q >= 0.0 && q.is_finite()) {
                return Err(cfg_err("demand: total_inflow must be finite and non-negative"));
            }
            let right = 1.0 - d.through - d.left;
            if !(d.through >= 0.0 && d.left >= 0.0 && right >= -1e-12) {
                return Err(cfg_err(
                    "demand: through and left must be non-negative and sum to at most 1",
                ));
            }
        }
        if let Some(r) = d.rv_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(cfg_err(format!("demand: rv_rate {r} outside [0, 1]")));
            }
        }
        let e = &self.episode;
        if !(e.horizon > 0.0 && e.train_horizon > 0.0 && e.dt > 0.0)
            || !(e.horizon.is_finite() && e.train_horizon.is_finite() && e.dt.is_finite())
        {
            return Err(cfg_err("episode: horizon, train_horizon and dt must be positive"));
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        if let Some(s) = &self.sweep {
            if s.rates.is_empty() {
                return Err(cfg_err("sweep: rate list is empty"));
            }
            if let Some(r) = s.rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(cfg_err(format!("sweep: rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn build_network(&self) -> Result<Arc<Network>, ExperimentError> {
        let net = match &self.network.path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| ExperimentError::io(p, e))?;
                parse_config(&text)?.network
            }
            None => builtin_fourway(self.network.lanes.unwrap_or(1)),
        };
        Ok(Arc::new(net))
    }

    /// Demand at the configured RV rate.
    pub fn build_demand(&self, net: &Network) -> Result<DemandSpec, ExperimentError> {
        let mut demand = match self.demand.total_inflow {
            Some(q) => fourway_demand(net, q, self.demand.through, self.demand.left, 0.0),
            None => {
                let p = self
                    .network
                    .path
                    .as_ref()
                    .ok_or_else(|| cfg_err("demand: total_inflow is required for builtin networks"))?;
                let text = fs::read_to_string(p).map_err(|e| ExperimentError::io(p, e))?;
                parse_config(&text)?
                    .demand
                    .ok_or_else(|| cfg_err("demand: no total_inflow and the network file has no [demand] section"))?
            }
        };
        if let Some(r) = self.demand.rv_rate {
            demand.rv_rate = r;
        }
        demand.validate(net)?;
        Ok(demand)
    }

    fn episode(&self, demand: DemandSpec, horizon: f64, seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            horizon,
            dt: self.episode.dt,
            demand,
            seed,
        }
    }

    fn train_config(&self) -> Result<&TrainConfig, ExperimentError> {
        self.train
            .as_ref()
            .ok_or_else(|| cfg_err("a [train] section is required for training"))
    }

    fn entry_control(&self, net: &Network) -> Option<EntryControl> {
        match &self.controller {
            ControllerConfig::Rl { .. } => None,
            ControllerConfig::Unsignalized {} => Some(EntryControl::Unsignalized),
            ControllerConfig::Signalized { green, yellow, phases } => {
                let phases = match phases {
                    Some(p) => p.clone(),
                    None => SignalPlan::default_for(net)
                        .phases
                        .into_iter()
                        .map(|p| SignalPhase {
                            green_duration: *green,
                            yellow_duration: *yellow,
                            ..p
                        })
                        .collect(),
                };
                Some(EntryControl::Signalized(SignalPlan { phases }))
            }
        }
    }

    /// Output directory: `override_dir` if given, else `out_dir` under the output root.
    pub fn output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        if let Some(d) = override_dir {
            return d.to_path_buf();
        }
        let root = std::env::var_os(OUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
        root.join(&self.out_dir)
    }
}

/// Training seed for one RV rate, independent of the evaluation seeds.
pub fn rate_seed(seed: u64, rate: f64) -> u64 {
    derive_seed(derive_seed(seed, TRAIN_STREAM), rate.to_bits())
}

pub fn rate_dir_name(rate: f64) -> String {
    format!("rate_{rate}")
}

pub fn baseline_scope(control: &EntryControl) -> &'static str {
    match control {
        EntryControl::Unsignalized => SCOPE_UNSIGNALIZED,
        EntryControl::Signalized(_) => SCOPE_SIGNALIZED,
    }
}

/// One baseline episode with every vehicle driven by IDM and the entry rule.
pub fn run_baseline(
    network: Arc<Network>,
    episode: &EpisodeConfig,
    control: &EntryControl,
    run_id: &str,
) -> Result<RunMetrics, ExperimentError> {
    episode.validate()?;
    let cfg = SimConfig {
        dt: episode.dt,
        ..SimConfig::default()
    };
    let mut sim = SimState::new(network, episode.demand.clone(), control.clone(), cfg, episode.seed)?;
    let none = BTreeMap::new();
    for _ in 0..episode.steps() {
        sim.step(&none);
    }
    Ok(RunMetrics::from_records(
        run_id,
        episode.demand.rv_rate,
        baseline_scope(control),
        &sim.records(),
        sim.headway_samples(),
    ))
}

/// Baseline evaluation over `runs` episodes seeded from `(episode.seed, run)`.
pub fn evaluate_baseline(
    network: Arc<Network>,
    episode: &EpisodeConfig,
    control: &EntryControl,
    runs: usize,
    parallel: bool,
) -> Result<Vec<RunMetrics>, ExperimentError> {
    let ids: Vec<usize> = (0..runs).collect();
    try_map_runs(parallel, &ids, |&run| {
        let ep = EpisodeConfig {
            seed: derive_seed(episode.seed, run as u64),
            ..episode.clone()
        };
        run_baseline(network.clone(), &ep, control, &run.to_string())
    })
}

/// Files a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<PathBuf, ExperimentError> {
    fs::write(path, contents).map_err(|e| ExperimentError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_snapshot(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf, ExperimentError> {
    write_file(&dir.join(SNAPSHOT_FILE), &cfg.to_toml())
}

fn agent_io(e: AgentError) -> ExperimentError {
    match e {
        AgentError::Io { path, source } => ExperimentError::Io { path, source },
        other => ExperimentError::Agent(other),
    }
}

fn metrics_io(e: MetricsError) -> ExperimentError {
    match e {
        MetricsError::Io { path, source } => ExperimentError::Io { path, source },
        other => ExperimentError::Metrics(other),
    }
}

/// Trains at one rate into `dir`; returns the files written.
fn train_into(
    cfg: &ExperimentConfig,
    network: Arc<Network>,
    demand: DemandSpec,
    dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let tc = cfg.train_config()?;
    create_dir(dir)?;
    let seed = rate_seed(cfg.seed, demand.rv_rate);
    let ep = cfg.episode(demand, cfg.episode.train_horizon, seed);
    let mut files = Vec::new();
    let outcome = train(network, &ep, cfg.reward.params(), tc, seed, |it, policy| {
        let path = dir.join(format!("policy_it{it}.json"));
        save_checkpoint(policy, &path)?;
        files.push(path);
        Ok(())
    })
    .map_err(agent_io)?;
    let policy_path = dir.join(POLICY_FILE);
    save_checkpoint(&outcome.policy, &policy_path).map_err(agent_io)?;
    files.push(policy_path);
    let mut curve = Vec::new();
    write_curve(&outcome.curve, &mut curve).expect("in-memory write");
    files.push(write_file(
        &dir.join(CURVE_FILE),
        &String::from_utf8(curve).expect("utf-8 curve"),
    )?);
    Ok(files)
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput, ExperimentError> {
    cfg.train_config()?;
    let network = cfg.build_network()?;
    let demand = cfg.build_demand(&network)?;
    create_dir(out)?;
    let mut files = vec![write_snapshot(cfg, out)?];
    files.extend(train_into(cfg, network, demand, out)?);
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        files,
    })
}

fn rl_runs(
    cfg: &ExperimentConfig,
    network: Arc<Network>,
    demand: DemandSpec,
    checkpoint: &Path,
) -> Result<Vec<RunMetrics>, ExperimentError> {
    let policy = load_checkpoint(checkpoint, Some(network.observation_dim())).map_err(agent_io)?;
    let ep = cfg.episode(demand, cfg.episode.horizon, cfg.seed);
    evaluate(&policy, network, &ep, cfg.reward.params(), cfg.runs, cfg.parallel).map_err(agent_io)
}

/// Per-run rows followed by the aggregate row for each type.
fn report_of(runs: &[RunMetrics]) -> MetricsReport {
    let mut report = MetricsReport::default();
    for r in runs {
        report.extend_run(r);
    }
    report.extend_run(&aggregate_runs(runs));
    report
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput, ExperimentError> {
    let network = cfg.build_network()?;
    let mut demand = cfg.build_demand(&network)?;
    let runs = match (&cfg.controller, cfg.entry_control(&network)) {
        (ControllerConfig::Rl { checkpoint, .. }, _) => {
            let ckpt = checkpoint
                .as_ref()
                .ok_or_else(|| cfg_err("controller: rl evaluation needs `checkpoint`"))?;
            if !ckpt.is_file() {
                return Err(ExperimentError::MissingCheckpoints(vec![demand.rv_rate]));
            }
            rl_runs(cfg, network, demand, ckpt)?
        }
        (_, Some(control)) => {
            demand.rv_rate = 0.0;
            let ep = cfg.episode(demand, cfg.episode.horizon, cfg.seed);
            evaluate_baseline(network, &ep, &control, cfg.runs, cfg.parallel)?
        }
        (_, None) => unreachable!("non-rl controllers have an entry rule"),
    };
    create_dir(out)?;
    let snapshot = write_snapshot(cfg, out)?;
    let report_path = out.join(REPORT_FILE);
    write_report(&report_of(&runs), &report_path).map_err(metrics_io)?;
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        files: vec![snapshot, report_path],
    })
}

fn rate_checkpoint(cfg: &ExperimentConfig, out: &Path, mode: SweepMode, rate: f64) -> Option<PathBuf> {
    let base = match (mode, &cfg.controller) {
        (SweepMode::Train, _) => out.to_path_buf(),
        (SweepMode::Checkpoints, ControllerConfig::Rl { checkpoint_dir, .. }) => checkpoint_dir.clone()?,
        _ => return None,
    };
    Some(base.join(rate_dir_name(rate)).join(POLICY_FILE))
}

/// Trains (or loads) one policy per rate, evaluates it, and writes one
/// aggregate row per (scope, rate, vehicle type) to `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput, ExperimentError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| cfg_err("a [sweep] section with a rate list is required"))?;
    if !matches!(cfg.controller, ControllerConfig::Rl { .. }) {
        return Err(cfg_err("sweep needs the rl controller"));
    }
    let mut rates = sweep.rates.clone();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    match sweep.mode {
        SweepMode::Train => {
            cfg.train_config()?;
        }
        SweepMode::Checkpoints => {
            let missing: Vec<f64> = rates
                .iter()
                .copied()
                .filter(|&r| !rate_checkpoint(cfg, out, sweep.mode, r).is_some_and(|p| p.is_file()))
                .collect();
            if !missing.is_empty() {
                return Err(ExperimentError::MissingCheckpoints(missing));
            }
        }
    }
    let network = cfg.build_network()?;
    let demand = cfg.build_demand(&network)?;
    create_dir(out)?;
    let mut files = vec![write_snapshot(cfg, out)?];

    let per_rate = try_map_runs(cfg.parallel, &rates, |&rate| {
        let d = DemandSpec {
            rv_rate: rate,
            ..demand.clone()
        };
        let mut written = Vec::new();
        if sweep.mode == SweepMode::Train {
            written = train_into(cfg, network.clone(), d.clone(), &out.join(rate_dir_name(rate)))?;
        }
        let ckpt = rate_checkpoint(cfg, out, sweep.mode, rate).expect("checked above");
        let runs = rl_runs(cfg, network.clone(), d, &ckpt)?;
        Ok::<_, ExperimentError>((aggregate_runs(&runs), written))
    })?;

    let mut groups: Vec<RunMetrics> = Vec::new();
    if sweep.baselines {
        let hv = DemandSpec {
            rv_rate: 0.0,
            ..demand.clone()
        };
        let ep = cfg.episode(hv, cfg.episode.horizon, cfg.seed);
        let controls = [
            EntryControl::Signalized(SignalPlan::default_for(&network)),
            EntryControl::Unsignalized,
        ];
        let baselines = map_runs(cfg.parallel, &controls, |c| {
            evaluate_baseline(network.clone(), &ep, c, cfg.runs, cfg.parallel).map(|r| aggregate_runs(&r))
        });
        for b in baselines {
            groups.push(b?);
        }
    }
    for (agg, written) in per_rate {
        groups.push(agg);
        files.extend(written);
    }
    groups.sort_by(|a, b| a.scope.cmp(&b.scope).then(a.rv_rate.total_cmp(&b.rv_rate)));
    let mut report = MetricsReport::default();
    for g in &groups {
        report.extend_run(g);
    }
    let path = out.join(SWEEP_FILE);
    write_report(&report, &path).map_err(metrics_io)?;
    files.push(path);
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        files,
    })
}

/// What `validate` found.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationSummary {
    Config {
        observation_dim: usize,
        movements: usize,
        total_inflow: f64,
    },
    Report {
        rows: usize,
        groups: usize,
    },
}

/// Checks an experiment config, or a report CSV when the path ends in `.csv`.
pub fn cmd_validate(path: &Path) -> Result<ValidationSummary, ExperimentError> {
    if path.extension().is_some_and(|e| e == "csv") {
        let report = read_report(path).map_err(metrics_io)?;
        let mut groups = std::collections::BTreeSet::new();
        for r in &report.rows {
            groups.insert((r.scope.clone(), r.rv_rate.to_bits(), r.run_id.clone()));
        }
        for (scope, rate, run) in &groups {
            let has_all = report.rows.iter().any(|r| {
                &r.scope == scope && r.rv_rate.to_bits() == *rate && &r.run_id == run && r.vehicle_type == ALL_TYPES
            });
            if !has_all {
                return Err(ExperimentError::Metrics(MetricsError::Schema(format!(
                    "group ({scope}, {}, {run}) has no `{ALL_TYPES}` row",
                    f64::from_bits(*rate)
                ))));
            }
        }
        return Ok(ValidationSummary::Report {
            rows: report.rows.len(),
            groups: groups.len(),
        });
    }
    let cfg = ExperimentConfig::load(path)?;
    let network = cfg.build_network()?;
    let demand = cfg.build_demand(&network)?;
    if let Some(EntryControl::Signalized(plan)) = cfg.entry_control(&network) {
        plan.validate(&network)
            .map_err(|m| ExperimentError::Topology(TopologyError::Invalid(m)))?;
    }
    if let ControllerConfig::Rl {
        checkpoint: Some(ckpt), ..
    } = &cfg.controller
    {
        if ckpt.is_file() {
            load_checkpoint(ckpt, Some(network.observation_dim())).map_err(agent_io)?;
        }
    }
    Ok(ValidationSummary::Config {
        observation_dim: network.observation_dim(),
        movements: network.movements.len(),
        total_inflow: demand.total_inflow(),
    })
}

/// Coarse failure classes used as process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Config,
    Io,
    Runtime,
}

impl FailureClass {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureClass::Config => 2,
            FailureClass::Io => 3,
            FailureClass::Runtime => 4,
        }
    }
}

impl ExperimentError {
    pub fn class(&self) -> FailureClass {
        match self {
            ExperimentError::Config(_) | ExperimentError::Topology(_) | ExperimentError::MissingCheckpoints(_) => {
                FailureClass::Config
            }
            ExperimentError::Io { .. } => FailureClass::Io,
            ExperimentError::Agent(e) => match e {
                AgentError::Config(_)
                | AgentError::Dimension { .. }
                | AgentError::Version { .. }
                | AgentError::Corrupt(_) => FailureClass::Config,
                AgentError::Io { .. } => FailureClass::Io,
                AgentError::Env(crate::error::EnvError::Config(_)) => FailureClass::Config,
                _ => FailureClass::Runtime,
            },
            ExperimentError::Metrics(e) => match e {
                MetricsError::Io { .. } | MetricsError::Csv(_) => FailureClass::Io,
                _ => FailureClass::Config,
            },
            ExperimentError::Env(crate::error::EnvError::Config(_)) => FailureClass::Config,
            ExperimentError::Env(_) => FailureClass::Runtime,
        }
    }
}
