//! Episode metrics, smoothed learning curves, reward-at-step tables and
//! the speed-up ratio.
//!
//! Curves are built per (seed, agent) as trailing-window means of
//! episode rewards, placed at each episode's end step. Aggregation
//! across seeds happens on the union step grid with carry-forward
//! values, starting where every seed has at least one episode.
//!
//! The speed-up of a group agent against its single-trained twin is
//! `r = T / T_G`: `T_G` is the earliest step at which the group agent's
//! mean smoothed curve attains its maximum, `T` the earliest step the
//! single agent reaches that same value. `r` is infinite when the single
//! agent never gets there and undefined (reported as nan) when the group
//! agent never clears the satisfactory-performance threshold.

use super::config::Rule;
use crate::learner::Algorithm;
use crate::AgentId;
use std::collections::BTreeMap;
use thiserror::Error;

/// One completed episode of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub seed: u64,
    pub agent: AgentId,
    pub algorithm: Algorithm,
    /// Effective rule of the run (a group of one records `single`).
    pub rule: Rule,
    /// Episode index within (seed, agent), from 0.
    pub episode: u64,
    /// The agent's time-step count when the episode ended.
    pub end_step: u64,
    /// Accumulated reward of the episode.
    pub episode_reward: f64,
    /// Peer whose models were adopted during this episode, if any.
    pub adopted_from: Option<AgentId>,
    /// Selection attribution over the episode's steps.
    pub src_self: u64,
    pub src_joint: u64,
    pub src_peers: BTreeMap<AgentId, u64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("record sets do not match: {0}")]
    Mismatch(String),
    #[error("no records for agent {0}")]
    NoRecords(AgentId),
}

/// Trailing-window mean of episode rewards for one (seed, agent),
/// returned as (end_step, smoothed) points in episode order.
pub fn smoothed_curve(
    records: &[&MetricRecord],
    window: usize,
) -> Vec<(u64, f64)> {
    let mut rewards: Vec<f64> = Vec::with_capacity(records.len());
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        rewards.push(rec.episode_reward);
        let lo = rewards.len().saturating_sub(window);
        let tail = &rewards[lo..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        out.push((rec.end_step, mean));
    }
    out
}

fn records_for<'a>(
    records: &'a [MetricRecord],
    agent: AgentId,
    seed: u64,
) -> Vec<&'a MetricRecord> {
    let mut v: Vec<&MetricRecord> = records
        .iter()
        .filter(|r| r.agent == agent && r.seed == seed)
        .collect();
    v.sort_by_key(|r| (r.episode, r.end_step));
    v
}

pub fn seeds_of(records: &[MetricRecord]) -> Vec<u64> {
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
}

pub fn agents_of(records: &[MetricRecord]) -> Vec<(AgentId, Algorithm)> {
    let mut agents: Vec<(AgentId, Algorithm)> =
        records.iter().map(|r| (r.agent, r.algorithm)).collect();
    agents.sort_unstable();
    agents.dedup();
    agents
}

/// Mean curve over seeds on the union step grid (carry-forward), with
/// per-step population std. Points start once every seed has a value.
pub fn mean_curve(per_seed: &[Vec<(u64, f64)>]) -> Vec<(u64, f64, f64)> {
    if per_seed.is_empty() || per_seed.iter().any(|c| c.is_empty()) {
        return Vec::new();
    }
    let mut grid: Vec<u64> = per_seed.iter().flatten().map(|(s, _)| *s).collect();
    grid.sort_unstable();
    grid.dedup();
    let start = per_seed
        .iter()
        .map(|c| c[0].0)
        .max()
        .expect("nonempty curves");
    let mut out = Vec::new();
    let mut cursors = vec![0usize; per_seed.len()];
    for step in grid {
        if step < start {
            // Advance cursors so carry-forward stays correct.
            for (c, curve) in cursors.iter_mut().zip(per_seed) {
                while *c + 1 < curve.len() && curve[*c + 1].0 <= step {
                    *c += 1;
                }
            }
            continue;
        }
        let mut values = Vec::with_capacity(per_seed.len());
        for (c, curve) in cursors.iter_mut().zip(per_seed) {
            while *c + 1 < curve.len() && curve[*c + 1].0 <= step {
                *c += 1;
            }
            // The carried-forward value at `step`.
            let idx = if curve[*c].0 <= step {
                *c
            } else {
                continue;
            };
            values.push(curve[idx].1);
        }
        if values.len() != per_seed.len() {
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        out.push((step, mean, var.sqrt()));
    }
    out
}

/// Mean smoothed curve of one agent across all seeds in `records`.
pub fn agent_mean_curve(
    records: &[MetricRecord],
    agent: AgentId,
    window: usize,
) -> Vec<(u64, f64, f64)> {
    let per_seed: Vec<Vec<(u64, f64)>> = seeds_of(records)
        .into_iter()
        .map(|seed| smoothed_curve(&records_for(records, agent, seed), window))
        .filter(|c| !c.is_empty())
        .collect();
    mean_curve(&per_seed)
}

/// Per-agent smoothed reward at or before step `n`, averaged over the
/// seeds that have completed at least one episode by then. `None` means
/// no seed has.
pub fn ar_at(
    records: &[MetricRecord],
    n: u64,
    window: usize,
) -> BTreeMap<AgentId, Option<f64>> {
    let mut out = BTreeMap::new();
    for (agent, _) in agents_of(records) {
        let mut values = Vec::new();
        for seed in seeds_of(records) {
            let curve = smoothed_curve(&records_for(records, agent, seed), window);
            if let Some((_, v)) = curve.iter().rev().find(|(step, _)| *step <= n) {
                values.push(*v);
            }
        }
        let mean = if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        };
        out.insert(agent, mean);
    }
    out
}

/// Earliest step at which the curve reaches `target`.
pub fn earliest_reach(curve: &[(u64, f64, f64)], target: f64) -> Option<u64> {
    curve
        .iter()
        .find(|(_, v, _)| *v >= target)
        .map(|(s, _, _)| *s)
}

/// Peak value of a curve and the earliest step attaining it.
pub fn peak(curve: &[(u64, f64, f64)]) -> Option<(u64, f64)> {
    let best = curve
        .iter()
        .map(|(_, v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    earliest_reach(curve, best).map(|step| (step, best))
}

/// The speed-up ratio, with its two boundary cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speedup {
    Ratio(f64),
    /// The single agent never reached the group agent's performance.
    Inf,
    /// The group agent never reached a satisfactory level.
    Nan,
}

impl std::fmt::Display for Speedup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Speedup::Ratio(r) => write!(f, "{r}"),
            Speedup::Inf => f.write_str("inf"),
            Speedup::Nan => f.write_str("nan"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpeedupEntry {
    pub agent: AgentId,
    pub algorithm: Algorithm,
    /// Group agent's peak smoothed reward (the comparison target).
    pub target_value: f64,
    /// Earliest step the group curve attains the peak.
    pub t_group: u64,
    /// Earliest step the single curve reaches the same value.
    pub t_single: Option<u64>,
    pub speedup: Speedup,
}

#[derive(Debug, Clone)]
pub struct SpeedupReport {
    pub entries: Vec<SpeedupEntry>,
    /// Threshold below which a group peak counts as unsatisfactory.
    pub satisfactory_threshold: f64,
}

/// Compare group-trained agents against their single-trained twins.
/// Both record sets must cover the same agents (ids and algorithms) and
/// seed lists. `satisfactory_threshold` defaults to 20% of the best
/// single-agent smoothed peak.
pub fn compute_speedup(
    group: &[MetricRecord],
    single: &[MetricRecord],
    satisfactory_threshold: Option<f64>,
    window: usize,
) -> Result<SpeedupReport, MetricsError> {
    let agents = agents_of(group);
    if agents.is_empty() {
        return Err(MetricsError::Mismatch("group records are empty".into()));
    }
    if agents != agents_of(single) {
        return Err(MetricsError::Mismatch(format!(
            "agent rosters differ: group {:?}, single {:?}",
            agents,
            agents_of(single)
        )));
    }
    if seeds_of(group) != seeds_of(single) {
        return Err(MetricsError::Mismatch(format!(
            "seed sets differ: group {:?}, single {:?}",
            seeds_of(group),
            seeds_of(single)
        )));
    }

    let threshold = match satisfactory_threshold {
        Some(t) => t,
        None => {
            let best_single = agents
                .iter()
                .filter_map(|(agent, _)| peak(&agent_mean_curve(single, *agent, window)))
                .map(|(_, v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            0.2 * best_single
        }
    };

    let mut entries = Vec::new();
    for (agent, algorithm) in agents {
        let group_curve = agent_mean_curve(group, agent, window);
        let single_curve = agent_mean_curve(single, agent, window);
        let Some((t_group, target_value)) = peak(&group_curve) else {
            return Err(MetricsError::NoRecords(agent));
        };
        let t_single = earliest_reach(&single_curve, target_value);
        let speedup = if target_value < threshold {
            Speedup::Nan
        } else {
            match t_single {
                None => Speedup::Inf,
                Some(t) => Speedup::Ratio(t as f64 / t_group as f64),
            }
        };
        entries.push(SpeedupEntry {
            agent,
            algorithm,
            target_value,
            t_group,
            t_single,
            speedup,
        });
    }
    Ok(SpeedupReport {
        entries,
        satisfactory_threshold: threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, agent: u16, episode: u64, end_step: u64, reward: f64) -> MetricRecord {
        MetricRecord {
            seed,
            agent: AgentId(agent),
            algorithm: Algorithm::A2c,
            rule: Rule::Single,
            episode,
            end_step,
            episode_reward: reward,
            adopted_from: None,
            src_self: 0,
            src_joint: 0,
            src_peers: BTreeMap::new(),
        }
    }

    #[test]
    fn constant_series_has_constant_ar() {
        let records: Vec<MetricRecord> = (0..8)
            .map(|e| rec(1, 0, e, (e + 1) * 10, 7.5))
            .collect();
        for n in [10, 40, 80] {
            let table = ar_at(&records, n, 10);
            assert_eq!(table[&AgentId(0)], Some(7.5));
        }
    }

    #[test]
    fn ar_before_first_episode_is_unscored() {
        let records = vec![rec(1, 0, 0, 50, 3.0)];
        let table = ar_at(&records, 49, 10);
        assert_eq!(table[&AgentId(0)], None);
    }

    #[test]
    fn two_seed_hand_mean() {
        // Seed 1 last episode by step 100 smooths to (1+3)/2 = 2;
        // seed 2 smooths to (5+7)/2 = 6; mean = 4.
        let records = vec![
            rec(1, 0, 0, 40, 1.0),
            rec(1, 0, 1, 90, 3.0),
            rec(2, 0, 0, 30, 5.0),
            rec(2, 0, 1, 80, 7.0),
        ];
        let table = ar_at(&records, 100, 10);
        assert_eq!(table[&AgentId(0)], Some(4.0));
    }

    #[test]
    fn smoothing_window_trails() {
        let records: Vec<MetricRecord> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .enumerate()
            .map(|(e, r)| rec(1, 0, e as u64, (e as u64 + 1) * 10, *r))
            .collect();
        let refs: Vec<&MetricRecord> = records.iter().collect();
        let curve = smoothed_curve(&refs, 2);
        assert_eq!(curve, vec![(10, 1.0), (20, 1.5), (30, 2.5), (40, 3.5)]);
    }

    #[test]
    fn ar_monotone_when_curve_monotone() {
        let records: Vec<MetricRecord> = (0..20)
            .map(|e| rec(1, 0, e, (e + 1) * 5, e as f64))
            .collect();
        let mut last = f64::NEG_INFINITY;
        for n in (5..=100).step_by(5) {
            let v = ar_at(&records, n, 3)[&AgentId(0)].unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn self_comparison_speedup_is_one() {
        let records: Vec<MetricRecord> = (0..30)
            .flat_map(|e| {
                [1u64, 2].map(|seed| rec(seed, 0, e, (e + 1) * 10, (e as f64).min(12.0)))
            })
            .collect();
        let report = compute_speedup(&records, &records, None, 5).unwrap();
        assert_eq!(report.entries.len(), 1);
        match report.entries[0].speedup {
            Speedup::Ratio(r) => assert!((r - 1.0).abs() < 1e-12),
            other => panic!("expected ratio, got {other:?}"),
        }
    }

    #[test]
    fn single_never_reaching_is_inf() {
        let group: Vec<MetricRecord> = (0..10)
            .map(|e| rec(1, 0, e, (e + 1) * 10, 10.0 + e as f64))
            .collect();
        let single: Vec<MetricRecord> = (0..10)
            .map(|e| rec(1, 0, e, (e + 1) * 10, 1.0))
            .collect();
        let report = compute_speedup(&group, &single, Some(0.5), 3).unwrap();
        assert_eq!(report.entries[0].speedup, Speedup::Inf);
    }

    #[test]
    fn unsatisfactory_group_is_nan() {
        let group: Vec<MetricRecord> = (0..10)
            .map(|e| rec(1, 0, e, (e + 1) * 10, 0.1))
            .collect();
        let single: Vec<MetricRecord> = (0..10)
            .map(|e| rec(1, 0, e, (e + 1) * 10, 100.0))
            .collect();
        // Default threshold: 20% of single peak (20.0) >> group peak 0.1.
        let report = compute_speedup(&group, &single, None, 3).unwrap();
        assert_eq!(report.entries[0].speedup, Speedup::Nan);
    }

    #[test]
    fn faster_group_yields_ratio_above_one() {
        // Group hits 10 by step 100; single climbs to 10 only by step 1000.
        let group: Vec<MetricRecord> = (0..10)
            .map(|e| rec(1, 0, e, (e + 1) * 10, (e + 1) as f64))
            .collect();
        let single: Vec<MetricRecord> = (0..100)
            .map(|e| rec(1, 0, e, (e + 1) * 10, ((e + 1) as f64 / 10.0).min(10.0)))
            .collect();
        let report = compute_speedup(&group, &single, Some(0.5), 1).unwrap();
        match report.entries[0].speedup {
            Speedup::Ratio(r) => assert!(r > 1.0, "r = {r}"),
            other => panic!("expected ratio, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_sets_error() {
        let a = vec![rec(1, 0, 0, 10, 1.0)];
        let b = vec![rec(2, 0, 0, 10, 1.0)];
        assert!(matches!(
            compute_speedup(&a, &b, None, 3),
            Err(MetricsError::Mismatch(_))
        ));
    }

    #[test]
    fn mean_curve_carries_forward() {
        let c1 = vec![(10u64, 1.0), (30, 3.0)];
        let c2 = vec![(20u64, 2.0)];
        let mean = mean_curve(&[c1, c2]);
        // Grid starts at 20 (both defined): step 20 -> (1+2)/2; step 30 -> (3+2)/2.
        assert_eq!(mean.len(), 2);
        assert_eq!(mean[0].0, 20);
        assert!((mean[0].1 - 1.5).abs() < 1e-12);
        assert_eq!(mean[1].0, 30);
        assert!((mean[1].1 - 2.5).abs() < 1e-12);
    }
}
