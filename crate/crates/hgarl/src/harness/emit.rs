//! Run outputs: the metrics CSV, the JSON summary, plot-ready curve
//! files, and final model snapshots.
//!
//! CSV schema (UTF-8, `\n` line endings, header always present):
//!
//! ```text
//! seed,agent_id,algorithm,rule,episode,end_step,episode_reward,adopted_from,src_self,src_joint,src_<id>...
//! ```
//!
//! with one `src_<id>` column per roster slot (an agent's own column
//! stays 0; its own selections count under `src_self`). Curve files hold
//! `step mean std stderr` rows per agent, where `std` is the population
//! standard deviation across seeds and `stderr` is that divided by the
//! square root of the seed count: the two shade widths around a curve.
//! Everything written here is a pure function of the run output, so
//! deterministic runs produce byte-identical files.

use super::config::RunConfig;
use super::metrics::{agents_of, ar_at, seeds_of, MetricRecord};
use super::{AdoptionEvent, RunOutput};
use crate::harness::config::Rule;
use crate::learner::Algorithm;
use crate::AgentId;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("nothing to emit: the record set is empty")]
    NoRecords,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed metrics csv at line {line}: {message}")]
    BadCsv { line: usize, message: String },
    #[error("malformed summary json: {0}")]
    BadSummary(String),
}

/// Render records as the metrics CSV. `roster` fixes the `src_<id>`
/// column set.
pub fn csv_string(records: &[MetricRecord], roster: &[AgentId]) -> String {
    let mut out = String::new();
    out.push_str("seed,agent_id,algorithm,rule,episode,end_step,episode_reward,adopted_from,src_self,src_joint");
    for id in roster {
        let _ = write!(out, ",src_{id}");
    }
    out.push('\n');
    for r in records {
        let adopted = r
            .adopted_from
            .map(|a| a.to_string())
            .unwrap_or_default();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.agent,
            r.algorithm,
            r.rule,
            r.episode,
            r.end_step,
            r.episode_reward,
            adopted,
            r.src_self,
            r.src_joint
        );
        for id in roster {
            let count = r.src_peers.get(id).copied().unwrap_or(0);
            let _ = write!(out, ",{count}");
        }
        out.push('\n');
    }
    out
}

/// Parse a metrics CSV produced by [`csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<MetricRecord>, EmitError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(EmitError::BadCsv {
        line: 1,
        message: "missing header".into(),
    })?;
    let columns: Vec<&str> = header.split(',').collect();
    let bad = |line: usize, message: String| EmitError::BadCsv { line, message };
    let peer_ids: Vec<AgentId> = columns
        .iter()
        .skip(10)
        .map(|c| {
            c.strip_prefix("src_")
                .and_then(|s| s.parse::<u16>().ok())
                .map(AgentId)
                .ok_or_else(|| bad(1, format!("unexpected column {c:?}")))
        })
        .collect::<Result<_, _>>()?;
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 + peer_ids.len() {
            return Err(bad(i + 1, format!("expected {} fields", 10 + peer_ids.len())));
        }
        let parse_u64 = |s: &str, what: &str| {
            s.parse::<u64>()
                .map_err(|e| bad(i + 1, format!("{what}: {e}")))
        };
        let mut src_peers = BTreeMap::new();
        for (id, field) in peer_ids.iter().zip(&fields[10..]) {
            let count = parse_u64(field, "src count")?;
            if count > 0 {
                src_peers.insert(*id, count);
            }
        }
        records.push(MetricRecord {
            seed: parse_u64(fields[0], "seed")?,
            agent: AgentId(
                fields[1]
                    .parse::<u16>()
                    .map_err(|e| bad(i + 1, format!("agent_id: {e}")))?,
            ),
            algorithm: fields[2]
                .parse::<Algorithm>()
                .map_err(|e| bad(i + 1, e))?,
            rule: fields[3].parse::<Rule>().map_err(|e| bad(i + 1, e))?,
            episode: parse_u64(fields[4], "episode")?,
            end_step: parse_u64(fields[5], "end_step")?,
            episode_reward: fields[6]
                .parse::<f64>()
                .map_err(|e| bad(i + 1, format!("episode_reward: {e}")))?,
            adopted_from: if fields[7].is_empty() {
                None
            } else {
                Some(AgentId(fields[7].parse::<u16>().map_err(|e| {
                    bad(i + 1, format!("adopted_from: {e}"))
                })?))
            },
            src_self: parse_u64(fields[8], "src_self")?,
            src_joint: parse_u64(fields[9], "src_joint")?,
            src_peers,
        });
    }
    Ok(records)
}

fn adoption_json(e: &AdoptionEvent) -> Value {
    json!({
        "seed": e.seed,
        "agent": e.agent.0,
        "algorithm": e.algorithm.to_string(),
        "adopted_from": e.adopted_from.0,
        "wall_step": e.wall_step,
        "episode": e.episode,
    })
}

/// The JSON run summary: config echo, reward tables at the checkpoints,
/// adoption log, failure counts.
pub fn summary_json(cfg: &RunConfig, output: &RunOutput) -> Value {
    let mut config_map = serde_json::Map::new();
    for line in cfg.dump_lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            config_map.insert(k.to_string(), Value::String(v.to_string()));
        }
    }
    let mut ar_tables = serde_json::Map::new();
    for n in cfg.checkpoints() {
        let table = ar_at(&output.records, n, cfg.smoothing_window);
        let mut per_agent = serde_json::Map::new();
        for (agent, value) in table {
            per_agent.insert(
                format!("agent{agent}"),
                value.map_or(Value::Null, |v| json!(v)),
            );
        }
        ar_tables.insert(format!("step_{n}"), Value::Object(per_agent));
    }
    let failures: serde_json::Map<String, Value> = output
        .failures
        .iter()
        .map(|(seed, n)| (format!("seed_{seed}"), json!(n)))
        .collect();
    json!({
        "config": Value::Object(config_map),
        "env": cfg.env.name(),
        "effective_rule": cfg.effective_rule().to_string(),
        "num_seeds": cfg.seeds.len(),
        "episodes": output.records.len(),
        "accumulated_reward_at": Value::Object(ar_tables),
        "adoptions": output.adoption_events.iter().map(adoption_json).collect::<Vec<_>>(),
        "numerical_failures": Value::Object(failures),
        "protocol_errors": output.protocol_errors,
    })
}

/// Gnuplot-ready curve data for one agent: `step mean std stderr` rows.
pub fn curve_data(records: &[MetricRecord], agent: AgentId, window: usize) -> String {
    let curve = super::metrics::agent_mean_curve(records, agent, window);
    let n_seeds = seeds_of(records).len().max(1) as f64;
    let mut out = String::from("# step mean std stderr\n");
    for (step, mean, std) in curve {
        let _ = writeln!(out, "{step} {mean} {std} {}", std / n_seeds.sqrt());
    }
    out
}

/// Write everything for one run under `dir`: `metrics.csv`,
/// `summary.json`, `curves/agent<i>_<algo>.dat`, and the final model
/// snapshots under `models/`.
pub fn emit_all(dir: &Path, cfg: &RunConfig, output: &RunOutput) -> Result<(), EmitError> {
    if output.records.is_empty() {
        return Err(EmitError::NoRecords);
    }
    std::fs::create_dir_all(dir)?;
    let roster: Vec<AgentId> = (0..cfg.roster.len() as u16).map(AgentId).collect();
    std::fs::write(dir.join("metrics.csv"), csv_string(&output.records, &roster))?;
    let summary = serde_json::to_string_pretty(&summary_json(cfg, output)).expect("valid json");
    std::fs::write(dir.join("summary.json"), summary + "\n")?;

    let curves_dir = dir.join("curves");
    std::fs::create_dir_all(&curves_dir)?;
    for (agent, algorithm) in agents_of(&output.records) {
        let data = curve_data(&output.records, agent, cfg.smoothing_window);
        std::fs::write(
            curves_dir.join(format!("agent{agent}_{algorithm}.dat")),
            data,
        )?;
    }

    let models_dir = dir.join("models");
    std::fs::create_dir_all(&models_dir)?;
    for m in &output.final_models {
        let stem = format!("seed{}_agent{}_{}", m.seed, m.agent, m.algorithm);
        std::fs::write(models_dir.join(format!("{stem}.policy.bin")), &m.policy)?;
        std::fs::write(models_dir.join(format!("{stem}.value.bin")), &m.value)?;
    }
    Ok(())
}

/// Load the records and summary of a finished run directory.
pub fn read_run_dir(dir: &Path) -> Result<(Vec<MetricRecord>, Value), EmitError> {
    let csv = std::fs::read_to_string(dir.join("metrics.csv"))?;
    let records = parse_csv(&csv)?;
    let summary_text = std::fs::read_to_string(dir.join("summary.json"))?;
    let summary: Value =
        serde_json::from_str(&summary_text).map_err(|e| EmitError::BadSummary(e.to_string()))?;
    Ok((records, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, reward: f64, episode: u64) -> MetricRecord {
        MetricRecord {
            seed,
            agent: AgentId(0),
            algorithm: Algorithm::A2c,
            rule: Rule::Single,
            episode,
            end_step: (episode + 1) * 10,
            episode_reward: reward,
            adopted_from: None,
            src_self: 10,
            src_joint: 0,
            src_peers: BTreeMap::new(),
        }
    }

    #[test]
    fn one_record_one_row_plus_header() {
        let csv = csv_string(&[rec(1, 5.0, 0)], &[AgentId(0)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("seed,agent_id,algorithm,rule,"));
        assert_eq!(lines[1], "1,0,a2c,single,0,10,5,,10,0,0");
    }

    #[test]
    fn csv_round_trips() {
        let mut r = rec(3, -2.25, 7);
        r.adopted_from = Some(AgentId(2));
        r.src_peers.insert(AgentId(2), 4);
        let roster = [AgentId(0), AgentId(1), AgentId(2)];
        let records = vec![rec(1, 5.0, 0), r];
        let text = csv_string(&records, &roster);
        let back = parse_csv(&text).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn shade_widths_match_hand_arithmetic() {
        // Four seeds with constant per-seed rewards 1, 2, 3, 6 from the
        // same step: mean 3, population std sqrt(3.5), stderr std/2.
        let records: Vec<MetricRecord> = [(1u64, 1.0), (2, 2.0), (3, 3.0), (4, 6.0)]
            .iter()
            .map(|(seed, reward)| rec(*seed, *reward, 0))
            .collect();
        let data = curve_data(&records, AgentId(0), 10);
        let line = data.lines().nth(1).unwrap();
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse().unwrap())
            .collect();
        assert_eq!(fields[0], 10.0);
        assert!((fields[1] - 3.0).abs() < 1e-12);
        assert!((fields[2] - 1.8708286933869707).abs() < 1e-12);
        assert!((fields[3] - 0.9354143466934853).abs() < 1e-12);
    }

    #[test]
    fn empty_records_refuse_to_emit() {
        let cfg = RunConfig::example();
        let output = RunOutput::default();
        let dir = std::env::temp_dir().join("hgarl-emit-empty-test");
        assert!(matches!(
            emit_all(&dir, &cfg, &output),
            Err(EmitError::NoRecords)
        ));
    }

    #[test]
    fn summary_json_is_deterministic() {
        let cfg = RunConfig::example();
        let mut output = RunOutput::default();
        output.records.push(rec(1, 5.0, 0));
        output.failures.insert(1, 0);
        let a = serde_json::to_string(&summary_json(&cfg, &output)).unwrap();
        let b = serde_json::to_string(&summary_json(&cfg, &output)).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"env\":\"cartpole\""));
    }
}
