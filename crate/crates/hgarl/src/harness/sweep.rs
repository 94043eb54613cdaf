//! Interval-narrowing search for the Combo confidence threshold phi.
//!
//! Starting from `[low, high]`, each round evaluates the interval's
//! endpoints and midpoint by short runs (cached across rounds), keeps
//! the half whose better endpoint scores higher, and recurses: one round
//! costs three evaluations, each further round one more. A run's score
//! is the roster mean of each agent's final smoothed reward averaged
//! over seeds (unscored agents count as zero).

use super::config::RunConfig;
use super::metrics::ar_at;
use super::{run_experiment, HarnessError};
use crate::AgentId;
use std::collections::BTreeMap;

/// One evaluated threshold.
#[derive(Debug, Clone)]
pub struct PhiEval {
    pub phi: f64,
    pub score: f64,
    pub per_agent: BTreeMap<AgentId, Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Every evaluation performed, in evaluation order.
    pub evals: Vec<PhiEval>,
    /// The best-scoring threshold seen.
    pub best: PhiEval,
    /// The final narrowed interval.
    pub interval: (f64, f64),
    /// Set when `low == high` collapsed the sweep to a single run.
    pub degenerate: bool,
}

/// Sweep phi over `[low, high]` with the given evaluator. The evaluator
/// is called once per distinct threshold.
pub fn phi_sweep_with<E>(
    mut evaluate: impl FnMut(f64) -> Result<PhiEval, E>,
    low: f64,
    high: f64,
    rounds: u32,
) -> Result<SweepOutcome, E> {
    assert!(low > 0.0 && high >= low, "need 0 < low <= high");
    assert!(rounds >= 1, "need at least one round");
    if low == high {
        let eval = evaluate(low)?;
        return Ok(SweepOutcome {
            evals: vec![eval.clone()],
            best: eval,
            interval: (low, high),
            degenerate: true,
        });
    }
    let mut evals: Vec<PhiEval> = Vec::new();
    let mut cache: BTreeMap<u64, usize> = BTreeMap::new(); // phi bits -> evals index
    let mut eval_at = |phi: f64, evals: &mut Vec<PhiEval>| -> Result<usize, E> {
        if let Some(&idx) = cache.get(&phi.to_bits()) {
            return Ok(idx);
        }
        let eval = evaluate(phi)?;
        evals.push(eval);
        cache.insert(phi.to_bits(), evals.len() - 1);
        Ok(evals.len() - 1)
    };

    let (mut lo, mut hi) = (low, high);
    for _ in 0..rounds {
        let mid = 0.5 * (lo + hi);
        let lo_idx = eval_at(lo, &mut evals)?;
        let mid_idx = eval_at(mid, &mut evals)?;
        let hi_idx = eval_at(hi, &mut evals)?;
        let lo_half = evals[lo_idx].score.max(evals[mid_idx].score);
        let hi_half = evals[mid_idx].score.max(evals[hi_idx].score);
        if lo_half >= hi_half {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let best = evals
        .iter()
        .cloned()
        .max_by(|a, b| a.score.partial_cmp(&b.score).expect("finite scores"))
        .expect("at least three evaluations");
    Ok(SweepOutcome {
        evals,
        best,
        interval: (lo, hi),
        degenerate: false,
    })
}

/// Score one run configuration at a fixed phi by running it.
pub fn evaluate_phi(cfg: &RunConfig, phi: f64) -> Result<PhiEval, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.phi_absolute = Some(phi);
    let output = run_experiment(&cfg)?;
    let per_agent = ar_at(&output.records, cfg.total_steps, cfg.smoothing_window);
    let score = if per_agent.is_empty() {
        0.0
    } else {
        per_agent
            .values()
            .map(|v| v.unwrap_or(0.0))
            .sum::<f64>()
            / per_agent.len() as f64
    };
    Ok(PhiEval {
        phi,
        score,
        per_agent,
    })
}

/// The production sweep: short runs of `cfg` at each candidate phi.
pub fn phi_sweep(
    cfg: &RunConfig,
    low: f64,
    high: f64,
    rounds: u32,
) -> Result<SweepOutcome, HarnessError> {
    phi_sweep_with(|phi| evaluate_phi(cfg, phi), low, high, rounds)
}
