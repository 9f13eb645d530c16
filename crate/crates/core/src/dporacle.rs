//! Backward-induction oracle over (timestep, SOC, action) and an exhaustive
//! verifier for tiny instances.
//!
//! The oracle sees the whole strip, so its value is an upper bound on any
//! causal policy and its actions serve as expert demonstrations.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::satsim::{best_target, step, Action, Observation, Policy, SatState, Satellite, SOC_LEVELS};
use crate::worldgen::{EnvStrip, RewardModel};

const N_ACTIONS: usize = 2;

/// Default allocation ceiling for a table (1 GiB).
pub const DEFAULT_MEMORY_CAP: usize = 1 << 30;

/// Optimal reward-to-go `D[t][soc][a]` stored as `f32`.
///
/// Infeasible sample cells hold `f32::NEG_INFINITY`.
#[derive(Clone, Debug, PartialEq)]
pub struct DpTable {
    n_t: usize,
    strip_digest: [u8; 16],
    values: Vec<f32>,
}

impl DpTable {
    #[inline]
    fn idx(t: usize, soc: usize, a: usize) -> usize {
        ((t - 1) * SOC_LEVELS + soc) * N_ACTIONS + a
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn strip_digest(&self) -> [u8; 16] {
        self.strip_digest
    }

    fn check(&self, t: usize, soc: u8) -> Result<()> {
        if t == 0 || t > self.n_t || soc as usize >= SOC_LEVELS {
            return Err(Error::Bounds(format!(
                "(t={t}, soc={soc}) outside table of {} steps",
                self.n_t
            )));
        }
        Ok(())
    }

    /// `D(t, soc, a)`; `t` is 1-based.
    pub fn value(&self, t: usize, soc: u8, action: Action) -> Result<f32> {
        self.check(t, soc)?;
        Ok(self.values[Self::idx(t, soc as usize, action.index())])
    }

    /// `max_a D(t, soc, a)`.
    pub fn best_value(&self, t: usize, soc: u8) -> Result<f32> {
        self.check(t, soc)?;
        let i = Self::idx(t, soc as usize, 0);
        Ok(self.values[i].max(self.values[i + 1]))
    }

    /// Optimal episode return from `soc0`.
    pub fn optimal_value(&self, soc0: u8) -> Result<f32> {
        self.best_value(1, soc0)
    }

    pub fn memory_bytes(n_t: usize) -> Option<usize> {
        n_t.checked_mul(SOC_LEVELS * N_ACTIONS * std::mem::size_of::<f32>())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.values.len() * 4);
        out.extend_from_slice(DP_MAGIC);
        for v in [self.n_t as u32, SOC_LEVELS as u32, N_ACTIONS as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.strip_digest);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != DP_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"DTD1\""));
        }
        let u32_at = |off: usize| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::format(off as u64, "truncated header"))
        };
        let n_t = u32_at(4)? as usize;
        if u32_at(8)? as usize != SOC_LEVELS {
            return Err(Error::format(8, "unexpected SOC level count"));
        }
        if u32_at(12)? as usize != N_ACTIONS {
            return Err(Error::format(12, "unexpected action count"));
        }
        let digest: [u8; 16] = bytes
            .get(16..32)
            .ok_or_else(|| Error::format(16, "truncated header"))?
            .try_into()
            .unwrap();
        let n = n_t * SOC_LEVELS * N_ACTIONS;
        let payload = &bytes[32..];
        if payload.len() != n * 4 {
            return Err(Error::format(
                (32 + payload.len().min(n * 4)) as u64,
                format!("payload holds {} bytes, expected {}", payload.len(), n * 4),
            ));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DpTable {
            n_t,
            strip_digest: digest,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

pub const DP_MAGIC: &[u8; 4] = b"DTD1";

/// Immediate sample reward at every timestep (index `t - 1`).
pub fn sample_rewards(strip: &EnvStrip, sat: &Satellite) -> Result<Vec<f32>> {
    (1..=strip.length())
        .map(|t| {
            let tg = best_target(strip, &sat.footprint, t)?;
            Ok(tg.map_or(RewardModel::OFF, |tg| sat.rewards.reward(tg.class)) as f32)
        })
        .collect()
}

pub fn build_dp_table(strip: &EnvStrip, sat: &Satellite) -> Result<DpTable> {
    build_dp_table_capped(strip, sat, DEFAULT_MEMORY_CAP)
}

/// Fills the table from the last timestep backwards.
///
/// `D(T, soc, a) = r(T, a)` and `D(t, soc, a) = r(t, a) + max_a' D(t+1, soc', a')`.
pub fn build_dp_table_capped(strip: &EnvStrip, sat: &Satellite, max_bytes: usize) -> Result<DpTable> {
    let n_t = strip.length();
    let bytes = DpTable::memory_bytes(n_t)
        .filter(|b| *b <= max_bytes)
        .ok_or_else(|| {
            Error::Resource(format!(
                "DP table for {n_t} steps exceeds the {max_bytes}-byte cap"
            ))
        })?;
    let rewards = sample_rewards(strip, sat)?;
    let mut values = Vec::new();
    values
        .try_reserve_exact(bytes / 4)
        .map_err(|e| Error::Resource(e.to_string()))?;
    values.resize(bytes / 4, 0.0f32);

    let energy = &sat.energy;
    let next_off: Vec<usize> = (0..SOC_LEVELS)
        .map(|s| energy.transition(s as u8, false).map(usize::from))
        .collect::<Result<_>>()?;
    let next_sample: Vec<Option<usize>> = (0..SOC_LEVELS)
        .map(|s| energy.transition(s as u8, true).ok().map(usize::from))
        .collect();

    for t in (1..=n_t).rev() {
        let r = rewards[t - 1];
        for soc in 0..SOC_LEVELS {
            let future = |s2: usize| -> f32 {
                if t == n_t {
                    0.0
                } else {
                    let j = DpTable::idx(t + 1, s2, 0);
                    values[j].max(values[j + 1])
                }
            };
            let off = future(next_off[soc]);
            let sample = next_sample[soc].map_or(f32::NEG_INFINITY, |s2| r + future(s2));
            let i = DpTable::idx(t, soc, 0);
            values[i] = off;
            values[i + 1] = sample;
        }
    }
    Ok(DpTable {
        n_t,
        strip_digest: strip.digest(),
        values,
    })
}

/// Oracle action at `(t, soc)`. Equal values resolve to `Off`.
pub fn expert_action(table: &DpTable, t: usize, soc: u8) -> Result<Action> {
    let off = table.value(t, soc, Action::Off)?;
    let sample = table.value(t, soc, Action::SAMPLE)?;
    Ok(if sample > off { Action::SAMPLE } else { Action::Off })
}

/// Replays the oracle on the strip its table was built for.
pub struct ExpertPolicy<'a> {
    table: &'a DpTable,
}

pub fn dp_policy<'a>(table: &'a DpTable, strip: &EnvStrip) -> Result<ExpertPolicy<'a>> {
    if table.strip_digest != strip.digest() || table.n_t != strip.length() {
        return Err(Error::Consistency(
            "DP table was built for a different strip".into(),
        ));
    }
    Ok(ExpertPolicy { table })
}

impl Policy for ExpertPolicy<'_> {
    fn name(&self) -> &str {
        "dp"
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Action> {
        if obs.strip().length() != self.table.n_t {
            return Err(Error::Consistency("observation from a different strip".into()));
        }
        expert_action(self.table, obs.t, obs.soc)
    }
}

/// Largest strip the exhaustive search accepts.
pub const BRUTE_FORCE_MAX_T: usize = 20;

/// Enumerates every feasible action sequence. Returns the best total reward
/// and the lexicographically first optimal sequence (`Off` before `Sample`).
pub fn brute_force_optimal(strip: &EnvStrip, sat: &Satellite, soc0: u8) -> Result<(f64, Vec<Action>)> {
    let n = strip.length();
    if n > BRUTE_FORCE_MAX_T {
        return Err(Error::param(format!(
            "brute force refuses T = {n} (limit {BRUTE_FORCE_MAX_T})"
        )));
    }
    if soc0 > sat.energy.soc_max {
        return Err(Error::param(format!("initial soc {soc0} out of range")));
    }
    let mut best: Option<(f64, u32)> = None;
    'seq: for mask in 0u32..(1u32 << n) {
        let mut state = SatState { t: 1, soc: soc0 };
        let mut total = 0.0;
        for i in 0..n {
            let sample = (mask >> (n - 1 - i)) & 1 == 1;
            if sample && !sat.energy.can_sample(state.soc) {
                continue 'seq;
            }
            let action = if sample { Action::SAMPLE } else { Action::Off };
            let out = step(strip, sat, state, action)?;
            total += out.reward;
            state = out.next;
        }
        if best.is_none_or(|(v, _)| total > v) {
            best = Some((total, mask));
        }
    }
    // The all-off sequence is always feasible.
    let (value, mask) = best.expect("at least one feasible sequence");
    let actions = (0..n)
        .map(|i| {
            if (mask >> (n - 1 - i)) & 1 == 1 {
                Action::SAMPLE
            } else {
                Action::Off
            }
        })
        .collect();
    Ok((value, actions))
}
