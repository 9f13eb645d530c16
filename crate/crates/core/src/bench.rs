//! Experiment harness: dataset resolution, learner training, evaluation of a
//! policy roster against the DP optimum, report files, training-size curves
//! and decision latency.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    greedy_lateral, greedy_nadir, greedy_radar, greedy_window, random_policy, ThresholdRule,
};
use crate::bclone::{
    balance_dataset, bc_policy, collect_demonstrations, train_bc, BcMode, DemoSet, Loss, Mlp,
    TrainParams,
};
use crate::dporacle::{build_dp_table_capped, dp_policy, DpTable, DEFAULT_MEMORY_CAP};
use crate::error::{Error, Result};
use crate::qlearn::{q_policy, train_dp_sweep, train_epsilon_greedy, QLearnParams, QTable};
use crate::satsim::{
    observe, run_episode, step, EnergyModel, Observation, Policy, SatState, Satellite,
    SensorGeometry,
};
use crate::worldgen::{generate_synthetic, load_dataset, EnvStrip, GenParams, RewardModel, Scenario};

pub const DESK_SCALE_T: usize = 10_000;
pub const FULL_SCALE_T: usize = 86_400;

/// Seeds for generated datasets are `seed * SEED_STRIDE + offset`.
const SEED_STRIDE: u64 = 10_000;
const TEST_SEED_OFFSET: u64 = 5_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Random,
    GreedyNadir,
    GreedyLateral,
    GreedyRadar,
    GreedyWindow,
    BehavioralCloning,
    QLearning,
    Dp,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Random,
        PolicyKind::GreedyNadir,
        PolicyKind::GreedyLateral,
        PolicyKind::GreedyRadar,
        PolicyKind::GreedyWindow,
        PolicyKind::BehavioralCloning,
        PolicyKind::QLearning,
        PolicyKind::Dp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::GreedyNadir => "greedy_nadir",
            PolicyKind::GreedyLateral => "greedy_lateral",
            PolicyKind::GreedyRadar => "greedy_radar",
            PolicyKind::GreedyWindow => "greedy_window",
            PolicyKind::BehavioralCloning => "behavioral_cloning",
            PolicyKind::QLearning => "q_learning",
            PolicyKind::Dp => "dp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_learner(self) -> bool {
        matches!(self, PolicyKind::BehavioralCloning | PolicyKind::QLearning)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetSpec {
    Generated { seed: u64 },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum QTrainer {
    Sweep,
    EpsilonGreedy { episodes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcSettings {
    pub train: TrainParams,
    pub mode: BcMode,
    /// Skip demonstrations where both actions have equal oracle value.
    pub drop_ties: bool,
    pub balance: bool,
}

impl Default for BcSettings {
    fn default() -> Self {
        BcSettings {
            train: TrainParams::default(),
            mode: BcMode::Stochastic,
            drop_ties: true,
            balance: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub scenario: Scenario,
    /// Template for generated datasets; its `seed` is ignored.
    pub world: GenParams,
    pub geometry: SensorGeometry,
    pub energy: EnergyModel,
    pub rewards: RewardModel,
    pub train: Vec<DatasetSpec>,
    pub test: Vec<DatasetSpec>,
    pub roster: Vec<PolicyKind>,
    pub random_p: f64,
    pub threshold: ThresholdRule,
    pub qlearn: QLearnParams,
    pub q_trainer: QTrainer,
    pub bc: BcSettings,
    pub soc0: u8,
    pub seed: u64,
    pub out: PathBuf,
    pub dp_memory_cap: usize,
    pub dp_cache: bool,
}

fn generated(seed: u64, offset: u64, n: usize) -> Vec<DatasetSpec> {
    (0..n as u64)
        .map(|i| DatasetSpec::Generated {
            seed: seed.wrapping_mul(SEED_STRIDE).wrapping_add(offset + i),
        })
        .collect()
}

impl Default for BenchConfig {
    fn default() -> Self {
        let world = GenParams {
            length: DESK_SCALE_T,
            ..GenParams::default()
        };
        BenchConfig {
            scenario: Scenario::CloudAvoidance,
            geometry: SensorGeometry {
                pixel_size_km: world.pixel_size_km as f64,
                ..SensorGeometry::default()
            },
            world,
            energy: EnergyModel::default(),
            rewards: RewardModel::default(),
            train: generated(0, 0, 10),
            test: generated(0, TEST_SEED_OFFSET, 10),
            roster: PolicyKind::ALL.to_vec(),
            random_p: 0.2,
            threshold: ThresholdRule::default(),
            qlearn: QLearnParams::default(),
            q_trainer: QTrainer::Sweep,
            bc: BcSettings::default(),
            soc0: 100,
            seed: 0,
            out: PathBuf::from("bench_out"),
            dp_memory_cap: DEFAULT_MEMORY_CAP,
            dp_cache: true,
        }
    }
}

// On-disk layout of the TOML config. Every key is optional.

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    scenario: Option<String>,
    seed: Option<u64>,
    soc0: Option<u8>,
    out: Option<PathBuf>,
    roster: Option<Vec<String>>,
    world: WorldSection,
    data: DataSection,
    geometry: GeometrySection,
    energy: EnergySection,
    rewards: RewardSection,
    baselines: BaselineSection,
    qlearn: QSection,
    bc: BcSection,
    dp: DpSection,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct WorldSection {
    height: Option<usize>,
    length: Option<usize>,
    prevalence: Option<[f64; 3]>,
    blob_scale: Option<[f64; 3]>,
    pixel_size_km: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct DataSection {
    n_train: Option<usize>,
    n_test: Option<usize>,
    train_seeds: Option<Vec<u64>>,
    test_seeds: Option<Vec<u64>>,
    train_files: Option<Vec<PathBuf>>,
    test_files: Option<Vec<PathBuf>>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct GeometrySection {
    altitude_km: Option<f64>,
    radar_half_angle_deg: Option<f64>,
    lookahead_half_angle_deg: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EnergySection {
    sample_discharge: Option<u8>,
    recharge_per_step: Option<u8>,
    soc_max: Option<u8>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RewardSection {
    low: Option<f64>,
    mid: Option<f64>,
    high: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct BaselineSection {
    random_p: Option<f64>,
    need_high: Option<u8>,
    need_mid: Option<u8>,
    need_low: Option<u8>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct QSection {
    trainer: Option<String>,
    alpha: Option<f64>,
    gamma: Option<f64>,
    epsilon: Option<f64>,
    sweeps: Option<usize>,
    episodes: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct BcSection {
    keep_prob: Option<f64>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    validation_fraction: Option<f64>,
    loss: Option<String>,
    mode: Option<String>,
    drop_ties: Option<bool>,
    balance: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct DpSection {
    memory_cap_mb: Option<usize>,
    cache: Option<bool>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl BenchConfig {
    /// Parses a TOML config. Relative dataset paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let f: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = BenchConfig::default();

        if let Some(s) = f.scenario {
            c.scenario = Scenario::parse(&s)
                .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))?;
        }
        set(&mut c.seed, f.seed);
        set(&mut c.soc0, f.soc0);
        set(&mut c.out, f.out);
        if let Some(names) = f.roster {
            c.roster = names
                .iter()
                .map(|n| {
                    PolicyKind::parse(n).ok_or_else(|| Error::Config(format!("unknown policy {n:?}")))
                })
                .collect::<Result<_>>()?;
        }

        let w = f.world;
        set(&mut c.world.height, w.height);
        set(&mut c.world.length, w.length);
        set(&mut c.world.prevalence, w.prevalence);
        set(&mut c.world.blob_scale, w.blob_scale);
        if let Some(px) = w.pixel_size_km {
            c.world.pixel_size_km = px as f32;
            c.geometry.pixel_size_km = px;
        }

        let d = f.data;
        let (n_train, n_test) = (d.n_train.unwrap_or(10), d.n_test.unwrap_or(10));
        if n_train.max(n_test) as u64 > TEST_SEED_OFFSET {
            return Err(Error::Config("too many generated datasets".into()));
        }
        let resolve = |p: PathBuf| {
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        c.train = match (d.train_seeds, d.train_files) {
            (None, None) => generated(c.seed, 0, n_train),
            (seeds, files) => seeds
                .unwrap_or_default()
                .into_iter()
                .map(|seed| DatasetSpec::Generated { seed })
                .chain(files.unwrap_or_default().into_iter().map(|p| DatasetSpec::File(resolve(p))))
                .collect(),
        };
        c.test = match (d.test_seeds, d.test_files) {
            (None, None) => generated(c.seed, TEST_SEED_OFFSET, n_test),
            (seeds, files) => seeds
                .unwrap_or_default()
                .into_iter()
                .map(|seed| DatasetSpec::Generated { seed })
                .chain(files.unwrap_or_default().into_iter().map(|p| DatasetSpec::File(resolve(p))))
                .collect(),
        };

        let g = f.geometry;
        set(&mut c.geometry.altitude_km, g.altitude_km);
        set(&mut c.geometry.radar_half_angle_deg, g.radar_half_angle_deg);
        set(&mut c.geometry.lookahead_half_angle_deg, g.lookahead_half_angle_deg);

        let e = f.energy;
        set(&mut c.energy.sample_discharge, e.sample_discharge);
        set(&mut c.energy.recharge_per_step, e.recharge_per_step);
        set(&mut c.energy.soc_max, e.soc_max);

        let r = f.rewards;
        set(&mut c.rewards.low, r.low);
        set(&mut c.rewards.mid, r.mid);
        set(&mut c.rewards.high, r.high);
        c.rewards.scenario = c.scenario;

        let b = f.baselines;
        set(&mut c.random_p, b.random_p);
        set(&mut c.threshold.need_high, b.need_high);
        set(&mut c.threshold.need_mid, b.need_mid);
        set(&mut c.threshold.need_low, b.need_low);

        let q = f.qlearn;
        set(&mut c.qlearn.alpha, q.alpha);
        set(&mut c.qlearn.gamma, q.gamma);
        set(&mut c.qlearn.epsilon, q.epsilon);
        set(&mut c.qlearn.sweeps, q.sweeps);
        c.q_trainer = match q.trainer.as_deref() {
            None | Some("sweep") => QTrainer::Sweep,
            Some("epsilon_greedy") => QTrainer::EpsilonGreedy {
                episodes: q.episodes.unwrap_or(100),
            },
            Some(other) => return Err(Error::Config(format!("unknown Q trainer {other:?}"))),
        };

        let bc = f.bc;
        set(&mut c.bc.train.keep_prob, bc.keep_prob);
        set(&mut c.bc.train.learning_rate, bc.learning_rate);
        set(&mut c.bc.train.batch_size, bc.batch_size);
        set(&mut c.bc.train.max_epochs, bc.max_epochs);
        set(&mut c.bc.train.patience, bc.patience);
        set(&mut c.bc.train.validation_fraction, bc.validation_fraction);
        set(&mut c.bc.drop_ties, bc.drop_ties);
        set(&mut c.bc.balance, bc.balance);
        if let Some(l) = bc.loss {
            c.bc.train.loss = match l.as_str() {
                "cross_entropy" => Loss::CrossEntropy,
                "squared_error" => Loss::SquaredError,
                _ => return Err(Error::Config(format!("unknown loss {l:?}"))),
            };
        }
        if let Some(m) = bc.mode {
            c.bc.mode =
                BcMode::parse(&m).ok_or_else(|| Error::Config(format!("unknown BC mode {m:?}")))?;
        }

        if let Some(mb) = f.dp.memory_cap_mb {
            c.dp_memory_cap = mb.saturating_mul(1 << 20);
        }
        set(&mut c.dp_cache, f.dp.cache);

        c.sync_seeds();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Learner seeds follow the top-level seed.
    fn sync_seeds(&mut self) {
        self.qlearn.seed = self.seed;
        self.qlearn.soc0 = self.soc0;
        self.bc.train.seed = self.seed;
    }

    /// Replaces the top-level seed. Generated datasets that were derived from
    /// the old seed are re-derived; explicitly listed seeds stay as they are.
    pub fn with_seed(mut self, seed: u64) -> Self {
        let rederive = |specs: &mut Vec<DatasetSpec>, old: u64, offset: u64| {
            if *specs == generated(old, offset, specs.len()) {
                *specs = generated(seed, offset, specs.len());
            }
        };
        rederive(&mut self.train, self.seed, 0);
        rederive(&mut self.test, self.seed, TEST_SEED_OFFSET);
        self.seed = seed;
        self.sync_seeds();
        self
    }

    pub fn with_full_scale(mut self) -> Self {
        self.world.length = FULL_SCALE_T;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.world.validate().map_err(cfg)?;
        self.geometry.validate().map_err(cfg)?;
        self.energy.validate().map_err(cfg)?;
        self.rewards.validate().map_err(cfg)?;
        self.threshold.validate().map_err(cfg)?;
        self.qlearn.validate().map_err(cfg)?;
        self.bc.train.validate().map_err(cfg)?;
        if !(0.0..=1.0).contains(&self.random_p) {
            return Err(Error::Config("random_p must lie in [0, 1]".into()));
        }
        if self.soc0 > self.energy.soc_max {
            return Err(Error::Config(format!("soc0 {} above soc_max", self.soc0)));
        }
        if (self.geometry.pixel_size_km - self.world.pixel_size_km as f64).abs() > 1e-6 {
            return Err(Error::Config("geometry and world pixel sizes differ".into()));
        }
        if self.test.is_empty() {
            return Err(Error::Config("no test datasets".into()));
        }
        if self.train.is_empty() && self.roster.iter().any(|k| k.is_learner()) {
            return Err(Error::Config("learners in the roster need training datasets".into()));
        }
        if let Some(dup) = self.train.iter().find(|s| self.test.contains(s)) {
            return Err(Error::Config(format!(
                "dataset {dup:?} is in both the training and the test set"
            )));
        }
        Ok(())
    }

    pub fn satellite(&self) -> Result<Satellite> {
        Satellite::new(self.geometry.footprint()?, self.energy.clone(), self.rewards.clone())
    }
}

/// A resolved dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub strip: EnvStrip,
}

/// Generates or loads one dataset.
pub fn resolve_dataset(spec: &DatasetSpec, world: &GenParams) -> Result<Dataset> {
    match spec {
        DatasetSpec::Generated { seed } => Ok(Dataset {
            name: format!("gen-{seed}"),
            strip: generate_synthetic(&GenParams {
                seed: *seed,
                ..world.clone()
            })?,
        }),
        DatasetSpec::File(path) => Ok(Dataset {
            name: path.display().to_string(),
            strip: load_dataset(path)?,
        }),
    }
}

fn resolve_all(specs: &[DatasetSpec], world: &GenParams) -> Result<Vec<Dataset>> {
    specs.iter().map(|s| resolve_dataset(s, world)).collect()
}

/// Cache key covering the strip and every satellite parameter.
fn dp_cache_key(strip: &EnvStrip, sat: &Satellite) -> String {
    let mut h = Sha256::new();
    h.update(strip.digest());
    h.update(format!("{:?}|{:?}|{:?}", sat.footprint.radar_radius_px(), sat.energy, sat.rewards));
    h.update(sat.footprint.lookahead_len_px().to_le_bytes());
    h.finalize()[..12].iter().map(|b| format!("{b:02x}")).collect()
}

/// DP table for a dataset, read from or written to the on-disk cache when enabled.
pub fn dp_table_for(ds: &Dataset, sat: &Satellite, cfg: &BenchConfig) -> Result<DpTable> {
    let path = cfg
        .out
        .join("dp_cache")
        .join(format!("{}.dtd", dp_cache_key(&ds.strip, sat)));
    if cfg.dp_cache {
        if let Ok(table) = DpTable::load(&path) {
            if table.strip_digest() == ds.strip.digest() && table.n_t() == ds.strip.length() {
                return Ok(table);
            }
            log::warn!("ignoring stale DP cache entry {}", path.display());
        }
    }
    let table = build_dp_table_capped(&ds.strip, sat, cfg.dp_memory_cap).map_err(|e| match e {
        Error::Resource(m) => Error::Resource(format!("dataset {}: {m}", ds.name)),
        other => other,
    })?;
    if cfg.dp_cache {
        let dir = path.parent().unwrap();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        table.save(&path)?;
    }
    Ok(table)
}

/// Trained learner state shared across test datasets.
#[derive(Clone, Debug, Default)]
pub struct Learners {
    pub q: Option<QTable>,
    pub bc: Option<Mlp>,
    pub bc_demos: usize,
}

/// Trains the learners named in the roster on the first `fraction` of every
/// training strip's columns.
pub fn train_learners(
    cfg: &BenchConfig,
    sat: &Satellite,
    train: &[Dataset],
    fraction: f64,
) -> Result<Learners> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!("fraction {fraction} outside (0, 1]")));
    }
    let prefix = |s: &EnvStrip| ((s.length() as f64 * fraction).round() as usize).clamp(1, s.length());
    let mut out = Learners::default();

    if cfg.roster.contains(&PolicyKind::QLearning) {
        let strips: Vec<EnvStrip> = train
            .iter()
            .map(|d| d.strip.slice_columns(0, prefix(&d.strip)))
            .collect::<Result<_>>()?;
        let table = match cfg.q_trainer {
            QTrainer::Sweep => train_dp_sweep(&strips, sat, &cfg.qlearn)?,
            QTrainer::EpsilonGreedy { episodes } => {
                train_epsilon_greedy(&EnvStrip::concat(&strips)?, sat, &cfg.qlearn, episodes)?
            }
        };
        log::info!("q-learning: {} states visited", table.visited_states());
        out.q = Some(table);
    }

    if cfg.roster.contains(&PolicyKind::BehavioralCloning) {
        let mut demos = DemoSet::default();
        for (i, d) in train.iter().enumerate() {
            let table = dp_table_for(d, sat, cfg)?;
            let seed = cfg.seed.wrapping_mul(SEED_STRIDE).wrapping_add(i as u64);
            let mut set = collect_demonstrations(&table, &d.strip, sat, cfg.bc.train.keep_prob, seed)?;
            let limit = prefix(&d.strip) as u32;
            set.demos.retain(|x| x.provenance.t <= limit);
            demos.extend(set);
        }
        let raw = demos.len();
        if cfg.bc.drop_ties {
            demos = demos.without_ties();
        }
        if cfg.bc.balance {
            demos = balance_dataset(&demos, cfg.seed);
        }
        log::info!("behavioral cloning: {raw} demonstrations, {} after filtering", demos.len());
        let mut params = cfg.bc.train.clone();
        if fraction < 1.0 && demos.len() < params.batch_size {
            // Small curve points train on whatever survives as one batch.
            params.batch_size = demos.len().max(1);
        }
        let model = if demos.is_empty() {
            log::warn!("behavioral cloning: no demonstrations at fraction {fraction}; model left untrained");
            Mlp::behavioral_cloning(cfg.seed)
        } else {
            train_bc(&demos, &params)?.0
        };
        out.bc_demos = demos.len();
        out.bc = Some(model);
    }
    Ok(out)
}

/// Wraps a policy and records the wall time of each `decide` call.
struct Timed<P> {
    inner: P,
    nanos: Vec<u64>,
}

impl<P: Policy> Policy for Timed<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<crate::satsim::Action> {
        let t0 = Instant::now();
        let a = self.inner.decide(obs);
        self.nanos.push(t0.elapsed().as_nanos() as u64);
        a
    }

    fn reset(&mut self) {
        self.inner.reset();
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
}

impl LatencyStats {
    fn from_nanos(mut v: Vec<u64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_unstable();
        let pct = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize] as f64 / 1e3;
        LatencyStats {
            n: v.len(),
            mean_us: v.iter().sum::<u64>() as f64 / v.len() as f64 / 1e3,
            p50_us: pct(0.5),
            p99_us: pct(0.99),
        }
    }
}

/// Times `n_steps` decisions, following the policy's own trajectory and
/// wrapping to the start of the strip when it runs out. Stepping the
/// simulator is not timed.
pub fn measure_latency(
    policy: &mut dyn Policy,
    strip: &EnvStrip,
    sat: &Satellite,
    n_steps: usize,
) -> Result<LatencyStats> {
    if n_steps == 0 {
        return Err(Error::param("n_steps must be positive"));
    }
    policy.reset();
    let mut nanos = Vec::with_capacity(n_steps);
    let mut state = SatState {
        t: 1,
        soc: sat.energy.soc_max,
    };
    for _ in 0..n_steps {
        if state.t > strip.length() {
            state.t = 1;
        }
        let obs = observe(strip, sat, state)?;
        let t0 = Instant::now();
        let mut action = policy.decide(&obs)?;
        nanos.push(t0.elapsed().as_nanos() as u64);
        if action.is_sample() && !obs.can_sample() {
            action = crate::satsim::Action::Off;
        }
        state = step(strip, sat, state, action)?.next;
    }
    Ok(LatencyStats::from_nanos(nanos))
}

/// One policy on one test dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub policy: String,
    pub dataset: String,
    pub fingerprint: String,
    pub total_reward: f64,
    pub dp_reward: f64,
    pub pct_of_dp: f64,
    pub off: f64,
    pub low: f64,
    pub mid: f64,
    pub high: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub policy: String,
    pub dataset: String,
    pub decisions: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub scenario: Scenario,
    pub low_reward: f64,
    pub mid_reward: f64,
    pub high_reward: f64,
    pub rows: Vec<BenchRow>,
    pub latency: Vec<LatencyRow>,
}

/// Averages over datasets for one policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySummary {
    pub policy: String,
    pub mean_pct: f64,
    pub min_pct: f64,
    pub max_pct: f64,
    pub off: f64,
    pub low: f64,
    pub mid: f64,
    pub high: f64,
    pub violations: usize,
    pub mean_latency_us: f64,
}

impl BenchReport {
    fn empty(cfg: &BenchConfig) -> Self {
        BenchReport {
            scenario: cfg.scenario,
            low_reward: cfg.rewards.low,
            mid_reward: cfg.rewards.mid,
            high_reward: cfg.rewards.high,
            rows: Vec::new(),
            latency: Vec::new(),
        }
    }

    /// Per-policy averages in first-appearance order.
    pub fn summary(&self) -> Vec<PolicySummary> {
        let mut order: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.policy.as_str()) {
                order.push(&r.policy);
            }
        }
        order
            .into_iter()
            .map(|p| {
                let rows: Vec<&BenchRow> = self.rows.iter().filter(|r| r.policy == p).collect();
                let n = rows.len() as f64;
                let mean = |f: fn(&BenchRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
                let lat: Vec<f64> = self
                    .latency
                    .iter()
                    .filter(|l| l.policy == p)
                    .map(|l| l.mean_us)
                    .collect();
                PolicySummary {
                    policy: p.to_string(),
                    mean_pct: mean(|r| r.pct_of_dp),
                    min_pct: rows.iter().map(|r| r.pct_of_dp).fold(f64::INFINITY, f64::min),
                    max_pct: rows.iter().map(|r| r.pct_of_dp).fold(f64::NEG_INFINITY, f64::max),
                    off: mean(|r| r.off),
                    low: mean(|r| r.low),
                    mid: mean(|r| r.mid),
                    high: mean(|r| r.high),
                    violations: rows.iter().map(|r| r.violations).sum(),
                    mean_latency_us: if lat.is_empty() {
                        0.0
                    } else {
                        lat.iter().sum::<f64>() / lat.len() as f64
                    },
                }
            })
            .collect()
    }

    pub fn policy(&self, name: &str) -> Option<PolicySummary> {
        self.summary().into_iter().find(|s| s.policy == name)
    }
}

/// Instantiates one roster entry for a test dataset.
pub fn build_policy<'a>(
    kind: PolicyKind,
    cfg: &BenchConfig,
    learners: &Learners,
    table: &'a DpTable,
    strip: &EnvStrip,
    dataset_index: usize,
) -> Result<Box<dyn Policy + 'a>> {
    let seed = cfg.seed.wrapping_mul(SEED_STRIDE).wrapping_add(dataset_index as u64);
    let missing = |what: &str| Error::Consistency(format!("{what} was not trained"));
    Ok(match kind {
        PolicyKind::Random => Box::new(random_policy(cfg.random_p, seed)?),
        PolicyKind::GreedyNadir => Box::new(greedy_nadir(cfg.threshold.clone())?),
        PolicyKind::GreedyLateral => Box::new(greedy_lateral(cfg.threshold.clone())?),
        PolicyKind::GreedyRadar => Box::new(greedy_radar(cfg.threshold.clone())?),
        PolicyKind::GreedyWindow => Box::new(greedy_window(cfg.threshold.clone())?),
        PolicyKind::QLearning => Box::new(q_policy(
            learners.q.clone().ok_or_else(|| missing("Q-table"))?,
        )),
        PolicyKind::BehavioralCloning => Box::new(bc_policy(
            learners.bc.clone().ok_or_else(|| missing("BC model"))?,
            cfg.bc.mode,
            seed,
        )),
        PolicyKind::Dp => Box::new(dp_policy(table, strip)?),
    })
}

fn evaluate(
    cfg: &BenchConfig,
    sat: &Satellite,
    learners: &Learners,
    test: &[Dataset],
    tables: &[DpTable],
    roster: &[PolicyKind],
) -> Result<BenchReport> {
    let mut report = BenchReport::empty(cfg);
    for (i, (ds, table)) in test.iter().zip(tables).enumerate() {
        let dp_reward = table.optimal_value(cfg.soc0)? as f64;
        let fingerprint = ds.strip.fingerprint();
        for &kind in roster {
            let mut timed = Timed {
                inner: build_policy(kind, cfg, learners, table, &ds.strip, i)?,
                nanos: Vec::with_capacity(ds.strip.length()),
            };
            let log = run_episode(&ds.strip, sat, &mut timed, cfg.soc0)?;
            let [low, mid, high] = log.class_fractions();
            let pct_of_dp = if dp_reward > 0.0 {
                100.0 * log.total_reward / dp_reward
            } else {
                100.0
            };
            report.rows.push(BenchRow {
                policy: kind.as_str().to_string(),
                dataset: ds.name.clone(),
                fingerprint: fingerprint.clone(),
                total_reward: log.total_reward,
                dp_reward,
                pct_of_dp,
                off: log.off_fraction(),
                low,
                mid,
                high,
                violations: log.violations,
            });
            let lat = LatencyStats::from_nanos(timed.nanos);
            report.latency.push(LatencyRow {
                policy: kind.as_str().to_string(),
                dataset: ds.name.clone(),
                decisions: lat.n,
                mean_us: lat.mean_us,
                p50_us: lat.p50_us,
                p99_us: lat.p99_us,
            });
        }
        log::info!("evaluated {} ({}/{})", ds.name, i + 1, test.len());
    }
    Ok(report)
}

/// Datasets, satellite and DP tables shared by the benchmark and the curve.
struct Prepared {
    sat: Satellite,
    train: Vec<Dataset>,
    test: Vec<Dataset>,
    tables: Vec<DpTable>,
}

fn prepare(cfg: &BenchConfig) -> Result<Prepared> {
    cfg.validate()?;
    let sat = cfg.satellite()?;
    let train = resolve_all(&cfg.train, &cfg.world)?;
    let test = resolve_all(&cfg.test, &cfg.world)?;
    for t in &test {
        if let Some(clash) = train.iter().find(|d| d.strip.digest() == t.strip.digest()) {
            return Err(Error::Config(format!(
                "training dataset {} and test dataset {} are identical",
                clash.name, t.name
            )));
        }
    }
    let tables = test
        .iter()
        .map(|d| dp_table_for(d, &sat, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        sat,
        train,
        test,
        tables,
    })
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    let p = prepare(cfg)?;
    let learners = if cfg.roster.iter().any(|k| k.is_learner()) {
        train_learners(cfg, &p.sat, &p.train, 1.0)?
    } else {
        Learners::default()
    };
    evaluate(cfg, &p.sat, &learners, &p.test, &p.tables, &cfg.roster)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Consistency(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    // Written by hand so empty reports still get a header line.
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "policy",
    "dataset",
    "fingerprint",
    "total_reward",
    "dp_reward",
    "pct_of_dp",
    "off",
    "low",
    "mid",
    "high",
    "violations",
];

pub const LATENCY_COLUMNS: [&str; 6] = ["policy", "dataset", "decisions", "mean_us", "p50_us", "p99_us"];

/// Writes `report.csv` and `latency.csv` and/or `report.md` into `dir`.
/// Latency lives in its own file so `report.csv` is reproducible byte for byte.
pub fn emit_report(report: &BenchReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Csv => {
                let p = dir.join("report.csv");
                write_csv_rows(&p, &REPORT_COLUMNS, &report.rows)?;
                written.push(p);
                let p = dir.join("latency.csv");
                write_csv_rows(&p, &LATENCY_COLUMNS, &report.latency)?;
                written.push(p);
            }
            ReportFormat::Markdown => {
                let p = dir.join("report.md");
                fs::write(&p, render_markdown(report)).map_err(|e| Error::io(&p, e))?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

pub fn read_report_csv(path: &Path) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

/// Sampling-time table (one column per policy) followed by the reward table.
pub fn render_markdown(report: &BenchReport) -> String {
    let s = report.summary();
    let sc = report.scenario;
    let mut md = String::new();
    let _ = writeln!(md, "## Time spent per target class ({})\n", sc.as_str());
    let _ = write!(md, "| |");
    for p in &s {
        let _ = write!(md, " {} |", p.policy);
    }
    let _ = write!(md, "\n|---|");
    for _ in &s {
        let _ = write!(md, "---|");
    }
    md.push('\n');
    let rows: [(String, fn(&PolicySummary) -> f64); 4] = [
        ("Off (reward 0)".to_string(), |p| p.off),
        (
            format!("{} (reward {})", sc.class_label(crate::worldgen::RewardClass::Low), report.low_reward),
            |p| p.low,
        ),
        (
            format!("{} (reward {})", sc.class_label(crate::worldgen::RewardClass::Mid), report.mid_reward),
            |p| p.mid,
        ),
        (
            format!("{} (reward {})", sc.class_label(crate::worldgen::RewardClass::High), report.high_reward),
            |p| p.high,
        ),
    ];
    for (label, f) in rows {
        let _ = write!(md, "| {label} |");
        for p in &s {
            let _ = write!(md, " {} |", pct(f(p)));
        }
        md.push('\n');
    }
    let _ = writeln!(md, "\n## Percent of DP reward ({})\n", sc.as_str());
    let _ = writeln!(md, "| Method | mean | min | max |\n|---|---|---|---|");
    for p in &s {
        let _ = writeln!(
            md,
            "| {} | {:.2}% | {:.2}% | {:.2}% |",
            p.policy, p.mean_pct, p.min_pct, p.max_pct
        );
    }
    md
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub learner: String,
    pub fraction: f64,
    pub train_columns: usize,
    pub min_pct: f64,
    pub mean_pct: f64,
    pub max_pct: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurveReport {
    pub points: Vec<CurvePoint>,
}

impl CurveReport {
    pub fn learner(&self, name: &str) -> Vec<&CurvePoint> {
        self.points.iter().filter(|p| p.learner == name).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv_rows(
            path,
            &["learner", "fraction", "train_columns", "min_pct", "mean_pct", "max_pct"],
            &self.points,
        )
    }
}

pub const DEFAULT_FRACTIONS: [f64; 6] = [0.003, 0.01, 0.03, 0.1, 0.3, 1.0];

/// Trains the rostered learners on the first `fraction` of every training
/// strip and reports percent-of-DP over the test set at each fraction.
pub fn training_curve(cfg: &BenchConfig, fractions: &[f64]) -> Result<CurveReport> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::param(format!("fraction {f} outside (0, 1]")));
    }
    let p = prepare(cfg)?;
    let learners: Vec<PolicyKind> = cfg.roster.iter().copied().filter(|k| k.is_learner()).collect();
    let total_columns: usize = p.train.iter().map(|d| d.strip.length()).sum();
    let mut out = CurveReport::default();
    for &f in fractions {
        let trained = train_learners(cfg, &p.sat, &p.train, f)?;
        let report = evaluate(cfg, &p.sat, &trained, &p.test, &p.tables, &learners)?;
        for s in report.summary() {
            out.points.push(CurvePoint {
                learner: s.policy,
                fraction: f,
                train_columns: ((total_columns as f64) * f).round() as usize,
                min_pct: s.min_pct,
                mean_pct: s.mean_pct,
                max_pct: s.max_pct,
            });
        }
        log::info!("curve point {f} done");
    }
    Ok(out)
}
