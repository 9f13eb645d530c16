//! WebAssembly bindings for the browser demo in `www/`.
//!
//! A `World` holds one generated strip, its DP table and (once a learner is
//! requested) policies trained on a second strip from the next seed.

use wasm_bindgen::prelude::*;

use dyntarget::bench::{build_policy, train_learners, BenchConfig, Dataset, Learners, PolicyKind};
use dyntarget::dporacle::{build_dp_table, DpTable};
use dyntarget::satsim::{run_episode, SOC_LEVELS};
use dyntarget::worldgen::generate_synthetic;
use dyntarget::{EnvStrip, GenParams, RewardClass, Satellite};

fn js_err(e: dyntarget::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// RGBA per class: Low, Mid, High.
const PALETTE: [[u8; 4]; 3] = [[214, 222, 230, 255], [126, 150, 190, 255], [28, 56, 120, 255]];

#[wasm_bindgen]
pub struct World {
    cfg: BenchConfig,
    sat: Satellite,
    strip: EnvStrip,
    table: DpTable,
    learners: Option<Learners>,
}

#[wasm_bindgen]
pub struct Episode {
    policy: String,
    soc: Vec<u8>,
    samples: Vec<u8>,
    total_reward: f64,
    dp_reward: f64,
    off_fraction: f64,
}

#[wasm_bindgen]
impl Episode {
    #[wasm_bindgen(getter)]
    pub fn policy(&self) -> String {
        self.policy.clone()
    }

    /// Charge before each step.
    #[wasm_bindgen(getter)]
    pub fn soc(&self) -> Vec<u8> {
        self.soc.clone()
    }

    /// Per step: 0 off, otherwise 1 + sampled class index.
    #[wasm_bindgen(getter)]
    pub fn samples(&self) -> Vec<u8> {
        self.samples.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    #[wasm_bindgen(getter)]
    pub fn dp_reward(&self) -> f64 {
        self.dp_reward
    }

    #[wasm_bindgen(getter)]
    pub fn pct_of_dp(&self) -> f64 {
        if self.dp_reward > 0.0 {
            100.0 * self.total_reward / self.dp_reward
        } else {
            100.0
        }
    }

    #[wasm_bindgen(getter)]
    pub fn off_fraction(&self) -> f64 {
        self.off_fraction
    }
}

impl World {
    pub fn build(seed: u32, length: usize) -> dyntarget::Result<World> {
        let mut cfg = BenchConfig {
            seed: seed as u64,
            dp_cache: false,
            ..BenchConfig::default()
        };
        cfg.world.length = length;
        // One short training strip: keep more of it for demonstrations.
        cfg.bc.train.keep_prob = 0.2;
        let sat = cfg.satellite()?;
        let strip = generate_synthetic(&GenParams {
            seed: seed as u64,
            ..cfg.world.clone()
        })?;
        let table = build_dp_table(&strip, &sat)?;
        Ok(World {
            cfg,
            sat,
            strip,
            table,
            learners: None,
        })
    }

    pub fn episode(&mut self, policy: &str, soc0: u8) -> dyntarget::Result<Episode> {
        let kind = PolicyKind::parse(policy)
            .ok_or_else(|| dyntarget::Error::Config(format!("unknown policy {policy:?}")))?;
        if kind.is_learner() && self.learners.is_none() {
            let train = Dataset {
                name: "train".into(),
                strip: generate_synthetic(&GenParams {
                    seed: self.cfg.seed + 1,
                    ..self.cfg.world.clone()
                })?,
            };
            self.learners = Some(train_learners(&self.cfg, &self.sat, &[train], 1.0)?);
        }
        let empty = Learners::default();
        let learners = self.learners.as_ref().unwrap_or(&empty);
        let mut p = build_policy(kind, &self.cfg, learners, &self.table, &self.strip, 0)?;
        let log = run_episode(&self.strip, &self.sat, p.as_mut(), soc0)?;
        Ok(Episode {
            policy: kind.as_str().to_string(),
            soc: log.soc_trace().collect(),
            samples: log
                .records
                .iter()
                .map(|r| r.class.map_or(0, |c| 1 + c.index() as u8))
                .collect(),
            total_reward: log.total_reward,
            dp_reward: self.table.optimal_value(soc0)? as f64,
            off_fraction: log.off_fraction(),
        })
    }

    pub fn values(&self) -> dyntarget::Result<Vec<f32>> {
        let n = self.strip.length();
        let mut out = vec![0.0; SOC_LEVELS * n];
        for soc in 0..SOC_LEVELS {
            let row = SOC_LEVELS - 1 - soc;
            for t in 1..=n {
                out[row * n + t - 1] = self.table.best_value(t, soc as u8)?;
            }
        }
        Ok(out)
    }
}

#[wasm_bindgen]
impl World {
    /// Generates a strip of `length` columns from `seed` and solves it.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, length: usize) -> Result<World, JsError> {
        World::build(seed, length).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.strip.height()
    }

    #[wasm_bindgen(getter)]
    pub fn length(&self) -> usize {
        self.strip.length()
    }

    pub fn policies() -> Vec<String> {
        PolicyKind::ALL.iter().map(|k| k.as_str().to_string()).collect()
    }

    /// Row-major RGBA image, `height` rows by `length` columns.
    pub fn strip_rgba(&self) -> Vec<u8> {
        let (h, n) = (self.strip.height(), self.strip.length());
        let mut px = Vec::with_capacity(h * n * 4);
        for row in 0..h {
            for col in 0..n {
                px.extend_from_slice(&PALETTE[self.strip.get(row, col).index()]);
            }
        }
        px
    }

    /// Runs one policy from `soc0` and scores it against the oracle.
    pub fn run(&mut self, policy: &str, soc0: u8) -> Result<Episode, JsError> {
        self.episode(policy, soc0).map_err(js_err)
    }

    /// Optimal return-to-go, 101 rows (charge 100 at the top) by `length` columns.
    pub fn value_map(&self) -> Result<Vec<f32>, JsError> {
        self.values().map_err(js_err)
    }

    pub fn class_name(&self, class: u8) -> String {
        let c = match class {
            0 => RewardClass::Low,
            1 => RewardClass::Mid,
            _ => RewardClass::High,
        };
        self.cfg.scenario.class_label(c).to_string()
    }
}
