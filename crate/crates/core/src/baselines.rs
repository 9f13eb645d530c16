//! Heuristic comparison policies: random, greedy nadir, greedy lateral,
//! greedy radar and greedy window.

use rand::Rng;

use crate::error::{Error, Result};
use crate::satsim::{Action, Aim, Observation, Policy};
use crate::worldgen::RewardClass;
use crate::{seeded_rng, SeedRng};

/// Samples at nadir with fixed probability whenever charge allows.
pub struct RandomPolicy {
    p_sample: f64,
    seed: u64,
    rng: SeedRng,
}

pub fn random_policy(p_sample: f64, seed: u64) -> Result<RandomPolicy> {
    if !(0.0..=1.0).contains(&p_sample) {
        return Err(Error::param(format!("p_sample {p_sample} outside [0, 1]")));
    }
    Ok(RandomPolicy {
        p_sample,
        seed,
        rng: seeded_rng(seed),
    })
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Action> {
        // Draw every step so the stream does not depend on the charge path.
        let coin = self.rng.random::<f64>() < self.p_sample;
        Ok(if coin && obs.can_sample() {
            Action::Sample(Aim::Nadir)
        } else {
            Action::Off
        })
    }

    fn reset(&mut self) {
        self.rng = seeded_rng(self.seed);
    }
}

/// Minimum charge that justifies sampling each class.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdRule {
    pub need_high: u8,
    pub need_mid: u8,
    pub need_low: u8,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule {
            need_high: 5,
            need_mid: 50,
            need_low: 100,
        }
    }
}

impl ThresholdRule {
    pub fn validate(&self) -> Result<()> {
        if self.need_high <= self.need_mid && self.need_mid <= self.need_low && self.need_low <= 100 {
            Ok(())
        } else {
            Err(Error::param("thresholds must satisfy need_high <= need_mid <= need_low <= 100"))
        }
    }

    #[inline]
    pub fn need(&self, class: RewardClass) -> u8 {
        let n = match class {
            RewardClass::High => self.need_high,
            RewardClass::Mid => self.need_mid,
            RewardClass::Low => self.need_low,
        };
        n
    }
}

/// Which part of the radar reach a threshold policy inspects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Reach {
    Nadir,
    Lateral,
    Radar,
}

/// Threshold policy over a fixed candidate set.
pub struct GreedyPolicy {
    rule: ThresholdRule,
    reach: Reach,
}

fn greedy(rule: ThresholdRule, reach: Reach) -> Result<GreedyPolicy> {
    rule.validate()?;
    Ok(GreedyPolicy { rule, reach })
}

/// Looks only at the pixel directly below.
pub fn greedy_nadir(rule: ThresholdRule) -> Result<GreedyPolicy> {
    greedy(rule, Reach::Nadir)
}

/// Looks along the cross-track line through nadir.
pub fn greedy_lateral(rule: ThresholdRule) -> Result<GreedyPolicy> {
    greedy(rule, Reach::Lateral)
}

/// Looks at the whole radar disc.
pub fn greedy_radar(rule: ThresholdRule) -> Result<GreedyPolicy> {
    greedy(rule, Reach::Radar)
}

fn best_class<I: Iterator<Item = RewardClass>>(cells: I) -> Option<RewardClass> {
    let mut best = None;
    for c in cells {
        if best.is_none_or(|b| c > b) {
            best = Some(c);
            if c == RewardClass::High {
                break;
            }
        }
    }
    best
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        match self.reach {
            Reach::Nadir => "greedy_nadir",
            Reach::Lateral => "greedy_lateral",
            Reach::Radar => "greedy_radar",
        }
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Action> {
        let (class, aim) = match self.reach {
            Reach::Nadir => (Some(obs.nadir_class()), Aim::Nadir),
            Reach::Lateral => (best_class(obs.lateral_cells().map(|(_, c)| c)), Aim::Lateral),
            Reach::Radar => (best_class(obs.radar_cells().map(|(_, c)| c)), Aim::Disc),
        };
        Ok(match class {
            Some(c) if obs.can_sample() && obs.soc >= self.rule.need(c) => Action::Sample(aim),
            _ => Action::Off,
        })
    }
}

/// Budget-ranked lookahead rule.
///
/// With `r_now` the best class in the radar disc and `R` the per-column best
/// classes across the lookahead plus `r_now`, the charge affords roughly
/// `B = (soc - 5) / 4 + L / 5` samples over the window. Sample now when
/// `r_now` is at least the `B`-th best entry of `R` and the threshold rule
/// also allows `r_now` at this charge.
pub struct GreedyWindow {
    rule: ThresholdRule,
}

pub fn greedy_window(rule: ThresholdRule) -> Result<GreedyWindow> {
    rule.validate()?;
    Ok(GreedyWindow { rule })
}

impl GreedyWindow {
    /// Sampling budget over a window of `lookahead_len` columns.
    pub fn budget(soc: u8, lookahead_len: usize) -> usize {
        (soc.saturating_sub(5) / 4) as usize + lookahead_len / 5
    }
}

impl Policy for GreedyWindow {
    fn name(&self) -> &str {
        "greedy_window"
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Action> {
        if !obs.can_sample() {
            return Ok(Action::Off);
        }
        let Some(now) = best_class(obs.radar_cells().map(|(_, c)| c)) else {
            return Ok(Action::Off);
        };
        let strip = obs.strip();
        let mut counts = [0usize; 3];
        counts[now.index()] += 1;
        let cols = obs.lookahead_columns();
        let len = cols.len();
        for col in cols {
            if let Some(c) = best_class(strip.column(col).iter().copied()) {
                counts[c.index()] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let budget = Self::budget(obs.soc, len).clamp(1, total);
        // B-th largest element of R.
        let kth = if budget <= counts[2] {
            RewardClass::High
        } else if budget <= counts[2] + counts[1] {
            RewardClass::Mid
        } else {
            RewardClass::Low
        };
        Ok(if now >= kth && obs.soc >= self.rule.need(now) {
            Action::SAMPLE
        } else {
            Action::Off
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::satsim::{observe, run_episode, SatState, Satellite};
    use crate::worldgen::{generate_synthetic, EnvStrip, GenParams};
    use proptest::prelude::*;

    fn low_strip(t: usize) -> EnvStrip {
        EnvStrip::filled(31, t, RewardClass::Low).unwrap()
    }

    fn decide(p: &mut dyn Policy, strip: &EnvStrip, t: usize, soc: u8) -> Action {
        let sat = Satellite::default();
        let obs = observe(strip, &sat, SatState { t, soc }).unwrap();
        p.decide(&obs).unwrap()
    }

    #[test]
    fn random_zero_is_always_off() {
        let strip = low_strip(500);
        let mut p = random_policy(0.0, 3).unwrap();
        let log = run_episode(&strip, &Satellite::default(), &mut p, 100).unwrap();
        assert_eq!(log.off_fraction(), 1.0);
        assert!(random_policy(1.5, 0).is_err());
    }

    #[test]
    fn random_one_is_energy_limited() {
        let strip = low_strip(10_000);
        let mut p = random_policy(1.0, 3).unwrap();
        let log = run_episode(&strip, &Satellite::default(), &mut p, 100).unwrap();
        // Simulated bound: (100 + T) / 5 samples at most.
        let f = log.sample_fraction();
        assert!((f - 0.2).abs() < 0.005, "{f}");
        assert_eq!(log.violations, 0);
    }

    #[test]
    fn random_is_reproducible() {
        let strip = generate_synthetic(&GenParams {
            length: 800,
            seed: 2,
            ..GenParams::default()
        })
        .unwrap();
        let sat = Satellite::default();
        let mut p = random_policy(0.2, 99).unwrap();
        let a = run_episode(&strip, &sat, &mut p, 100).unwrap();
        let b = run_episode(&strip, &sat, &mut p, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn greedy_nadir_thresholds() {
        let mut strip = low_strip(40);
        let mut p = greedy_nadir(ThresholdRule::default()).unwrap();
        strip.set(15, 9, RewardClass::High);
        assert_eq!(decide(&mut p, &strip, 10, 5), Action::Sample(Aim::Nadir));
        strip.set(15, 9, RewardClass::Mid);
        assert_eq!(decide(&mut p, &strip, 10, 49), Action::Off);
        assert_eq!(decide(&mut p, &strip, 10, 50), Action::Sample(Aim::Nadir));
        strip.set(15, 9, RewardClass::Low);
        assert_eq!(decide(&mut p, &strip, 10, 100), Action::Sample(Aim::Nadir));
        assert_eq!(decide(&mut p, &strip, 10, 99), Action::Off);
    }

    #[test]
    fn greedy_lateral_uses_current_column_only() {
        let mut strip = low_strip(40);
        let mut p = greedy_lateral(ThresholdRule::default()).unwrap();
        assert_eq!(decide(&mut p, &strip, 10, 60), Action::Off);
        strip.set(27, 9, RewardClass::High);
        assert_eq!(decide(&mut p, &strip, 10, 10), Action::Sample(Aim::Lateral));

        let mut ahead = low_strip(40);
        ahead.set(15, 12, RewardClass::High);
        assert_eq!(decide(&mut p, &ahead, 10, 10), Action::Off);
    }

    #[test]
    fn greedy_radar_sees_whole_disc() {
        let mut strip = low_strip(40);
        let mut p = greedy_radar(ThresholdRule::default()).unwrap();
        assert_eq!(decide(&mut p, &strip, 20, 99), Action::Off);
        strip.set(20, 28, RewardClass::High);
        assert_eq!(decide(&mut p, &strip, 20, 5), Action::SAMPLE);
    }

    #[test]
    fn greedy_window_cases() {
        let mut p = greedy_window(ThresholdRule::default()).unwrap();
        // High now: always sample when feasible.
        let mut strip = low_strip(200);
        strip.set(15, 49, RewardClass::High);
        for soc in 5..=100 {
            assert_eq!(decide(&mut p, &strip, 50, soc), Action::SAMPLE);
        }
        assert_eq!(decide(&mut p, &strip, 50, 4), Action::Off);

        // Low now, many better columns ahead (beyond the radar disc) -> wait.
        let mut strip = low_strip(200);
        for col in 70..90 {
            strip.set(0, col, RewardClass::Mid);
        }
        // soc 20: B = 15/4 + 57/5 = 3 + 11 = 14 <= 20 better columns.
        assert_eq!(GreedyWindow::budget(20, 57), 14);
        assert_eq!(decide(&mut p, &strip, 50, 20), Action::Off);
        // Full battery: B = 23 + 11 = 34 > 20, so Low is within budget.
        assert_eq!(decide(&mut p, &strip, 50, 100), Action::SAMPLE);
        // Within budget but below the Low threshold.
        assert_eq!(decide(&mut p, &strip, 50, 99), Action::Off);

        // End of strip: R = {r_now}, so only the threshold applies.
        let strip = EnvStrip::filled(31, 60, RewardClass::Mid).unwrap();
        assert_eq!(decide(&mut p, &strip, 60, 50), Action::SAMPLE);
        assert_eq!(decide(&mut p, &strip, 60, 49), Action::Off);

        // Mid now, 40 High columns ahead at soc 60: B = 13 + 11 = 24, so wait.
        let mut strip = EnvStrip::filled(31, 200, RewardClass::Mid).unwrap();
        for col in 66..106 {
            strip.set(0, col, RewardClass::High);
        }
        assert_eq!(decide(&mut p, &strip, 50, 60), Action::Off);
    }

    #[test]
    fn radar_beats_lateral_on_generated_strips() {
        let sat = Satellite::default();
        for seed in 0..4 {
            let strip = generate_synthetic(&GenParams {
                length: 4000,
                seed,
                ..GenParams::default()
            })
            .unwrap();
            let mut lat = greedy_lateral(ThresholdRule::default()).unwrap();
            let mut rad = greedy_radar(ThresholdRule::default()).unwrap();
            let a = run_episode(&strip, &sat, &mut lat, 100).unwrap().total_reward;
            let b = run_episode(&strip, &sat, &mut rad, 100).unwrap().total_reward;
            assert!(b >= a, "seed {seed}: radar {b} < lateral {a}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn baselines_never_sample_infeasibly(seed in 0u64..10_000, soc0 in 0u8..=100) {
            let strip = generate_synthetic(&GenParams {
                height: 31,
                length: 300,
                prevalence: [0.6, 0.3, 0.1],
                seed,
                ..GenParams::default()
            }).unwrap();
            let sat = Satellite::default();
            let mut roster: Vec<Box<dyn Policy>> = vec![
                Box::new(random_policy(0.5, seed).unwrap()),
                Box::new(greedy_nadir(ThresholdRule::default()).unwrap()),
                Box::new(greedy_lateral(ThresholdRule::default()).unwrap()),
                Box::new(greedy_radar(ThresholdRule::default()).unwrap()),
                Box::new(greedy_window(ThresholdRule::default()).unwrap()),
            ];
            for p in roster.iter_mut() {
                let log = run_episode(&strip, &sat, p.as_mut(), soc0).unwrap();
                prop_assert_eq!(log.violations, 0);
            }
        }
    }
}
