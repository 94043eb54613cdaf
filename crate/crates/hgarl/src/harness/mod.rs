//! The experiment runner: the training loop over a group of agents,
//! seed management, metric collection, and the surrounding tooling
//! (tables, speed-up reports, output files, the phi sweep).
//!
//! One run executes the same group once per seed. Within a seed each
//! agent owns its environment instance, its learner, and its view of the
//! peers; agents interact only through the knowledge bus. Two execution
//! modes share the per-step logic: a deterministic single-thread mode
//! that interleaves agents round-robin by time step (bit-reproducible
//! outputs), and a concurrent mode with one thread per agent (no
//! ordering guarantees beyond per-sender message monotonicity).
//!
//! Per time step an agent: samples its own action, evaluates every
//! peer's policy and value at the current state, selects the action to
//! apply via the configured rule, steps its environment once, records
//! the annotated transition, and trains when its own batch fills. Under
//! the Combo rule a filled batch also runs the model-adoption check
//! before training, so a dominant peer's models replace the agent's own
//! and the batch trains from that peer's annotation stream.

pub mod config;
pub mod emit;
pub mod metrics;
pub mod sweep;

pub use config::{
    AgentSpec, ConfigError, EnvChoice, ExchangeCadence, GridSpec, Rule, RunConfig,
};
pub use metrics::{MetricRecord, MetricsError, Speedup, SpeedupEntry, SpeedupReport};

use crate::env::{CartPole, Env, Environment, GridWorld};
use crate::group::adoption::adoption_candidate;
use crate::group::rules::{
    rule_combo, rule_pa, rule_pm, ComboState, SelectionDecision, SelectionSource,
};
use crate::group::{GroupBus, KnowledgeMessage, PolicySet};
use crate::learner::{
    build_learner, Algorithm, Learner, LearnerError, ModelOutputs, StepRecord, ValueEstimate,
};
use crate::nn::snapshot;
use crate::rng::{agent_seed, SplitMix64};
use crate::AgentId;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("environment: {0}")]
    Env(String),
    #[error("learner construction: {0}")]
    Learner(#[from] LearnerError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A model adoption that actually happened.
#[derive(Debug, Clone, PartialEq)]
pub struct AdoptionEvent {
    pub seed: u64,
    pub agent: AgentId,
    pub algorithm: Algorithm,
    pub adopted_from: AgentId,
    /// The adopter's time-step count at the adoption.
    pub wall_step: u64,
    /// The adopter's episode index at the adoption.
    pub episode: u64,
}

/// Final model snapshots of one agent after one seed's run.
#[derive(Debug, Clone)]
pub struct FinalModel {
    pub seed: u64,
    pub agent: AgentId,
    pub algorithm: Algorithm,
    pub policy: Vec<u8>,
    pub value: Vec<u8>,
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub records: Vec<MetricRecord>,
    pub adoption_events: Vec<AdoptionEvent>,
    pub final_models: Vec<FinalModel>,
    /// Aborted-episode counts (numerical failures) per seed.
    pub failures: BTreeMap<u64, u64>,
    /// Messages rejected at ingest (bad snapshot or architecture).
    pub protocol_errors: u64,
}

/// Everything an observer sees about one executed time step.
pub struct SelectionEvent<'a> {
    pub seed: u64,
    pub agent: AgentId,
    /// The agent's step count after this step.
    pub wall_step: u64,
    pub decision: &'a SelectionDecision,
    /// Environment transition odometer around the whole step, lookahead
    /// included.
    pub transitions_before: u64,
    pub transitions_after: u64,
    pub owner_ar: Option<f64>,
}

/// Per-step hook for tests and instrumentation. Only available in the
/// deterministic interleave.
pub trait StepObserver {
    fn on_step(&mut self, event: &SelectionEvent);
}

impl<F: FnMut(&SelectionEvent)> StepObserver for F {
    fn on_step(&mut self, event: &SelectionEvent) {
        self(event)
    }
}

fn make_env(choice: &EnvChoice) -> Result<Env, HarnessError> {
    Ok(match choice {
        EnvChoice::CartPole { max_steps } => Env::CartPole(CartPole::new(*max_steps)),
        EnvChoice::GridWorld { grid, max_steps } => {
            let world = match grid {
                GridSpec::Square(n) => GridWorld::square(*n, *max_steps),
                GridSpec::MapText(text) => GridWorld::from_map(text, *max_steps)
                    .map_err(|e| HarnessError::Env(e.to_string()))?,
                GridSpec::MapFile(path) => {
                    let text = std::fs::read_to_string(path)?;
                    GridWorld::from_map(&text, *max_steps)
                        .map_err(|e| HarnessError::Env(format!("{}: {e}", path.display())))?
                }
            };
            Env::GridWorld(world)
        }
    })
}

struct AgentRunner {
    seed: u64,
    id: AgentId,
    algorithm: Algorithm,
    learner: Box<dyn Learner>,
    env: Env,
    policy_set: PolicySet,
    combo: ComboState,
    reset_rng: SplitMix64,
    rule: Rule,
    group_mode: bool,
    exchange: ExchangeCadence,
    obs: Vec<f64>,
    needs_reset: bool,
    episode_reward: f64,
    episode_index: u64,
    wall_step: u64,
    publish_counter: u64,
    updates_done: u64,
    latest_ar: Option<f64>,
    episode_adopted_from: Option<AgentId>,
    hist_self: u64,
    hist_joint: u64,
    hist_peers: BTreeMap<AgentId, u64>,
    own_value_dims: Vec<usize>,
    records: Vec<MetricRecord>,
    adoptions: Vec<AdoptionEvent>,
    failures: u64,
    protocol_errors: u64,
}

impl AgentRunner {
    fn build(cfg: &RunConfig, seed: u64, index: usize) -> Result<Self, HarnessError> {
        let spec_agent = &cfg.roster[index];
        let id = AgentId(index as u16);
        let env = make_env(&cfg.env)?;
        let env_spec = env.spec();
        let derived = agent_seed(seed, id.0);
        let mut seeder = SplitMix64::new(derived);
        let learner_seed = seeder.next_u64();
        let reset_rng = SplitMix64::new(seeder.next_u64());
        let learner = build_learner(
            id,
            spec_agent.algorithm,
            &spec_agent.config,
            &env_spec,
            learner_seed,
        )?;
        let mut policy_dims = vec![env_spec.observation_dim];
        policy_dims.extend_from_slice(&spec_agent.config.hidden_dims);
        policy_dims.push(env_spec.action_count);
        let value_out = match spec_agent.algorithm {
            Algorithm::Acer => env_spec.action_count,
            _ => 1,
        };
        let mut own_value_dims = vec![env_spec.observation_dim];
        own_value_dims.extend_from_slice(&spec_agent.config.hidden_dims);
        own_value_dims.push(value_out);
        let rule = cfg.effective_rule();
        Ok(Self {
            seed,
            id,
            algorithm: spec_agent.algorithm,
            learner,
            env,
            policy_set: PolicySet::new(id, policy_dims),
            combo: ComboState::new(cfg.phi(env_spec.action_count)),
            reset_rng,
            rule,
            group_mode: rule != Rule::Single,
            exchange: cfg.exchange,
            obs: Vec::new(),
            needs_reset: true,
            episode_reward: 0.0,
            episode_index: 0,
            wall_step: 0,
            publish_counter: 0,
            updates_done: 0,
            latest_ar: None,
            episode_adopted_from: None,
            hist_self: 0,
            hist_joint: 0,
            hist_peers: BTreeMap::new(),
            own_value_dims,
            records: Vec::new(),
            adoptions: Vec::new(),
            failures: 0,
            protocol_errors: 0,
        })
    }

    fn exchange(&mut self, bus: &GroupBus) {
        self.publish_counter += 1;
        let models = self.learner.export_models();
        bus.publish(KnowledgeMessage {
            sender: self.id,
            update_counter: self.publish_counter,
            wall_step: self.wall_step,
            accumulated_reward: self.latest_ar,
            policy: snapshot::serialize(&models.policy),
            value: Some(snapshot::serialize(&models.value)),
        });
        for msg in bus.drain(self.id) {
            if self.policy_set.ingest(msg).is_err() {
                self.protocol_errors += 1;
            }
        }
    }

    fn step_once(&mut self, bus: &GroupBus, observer: &mut Option<&mut dyn StepObserver>) {
        if self.needs_reset {
            if self.group_mode && self.exchange == ExchangeCadence::Episode {
                self.exchange(bus);
            }
            let episode_seed = self.reset_rng.next_u64();
            self.obs = self.env.reset(episode_seed);
            self.episode_reward = 0.0;
            self.episode_adopted_from = None;
            self.hist_self = 0;
            self.hist_joint = 0;
            self.hist_peers.clear();
            self.needs_reset = false;
        }

        let act = self.learner.act(&self.obs);
        let mut annotations: BTreeMap<AgentId, ModelOutputs> = BTreeMap::new();
        annotations.insert(self.id, act.outputs.clone());
        let mut ar_table: BTreeMap<AgentId, Option<f64>> = BTreeMap::new();
        ar_table.insert(self.id, self.latest_ar);
        if self.group_mode {
            for (pid, peer) in self.policy_set.peers() {
                let dist = peer
                    .policy
                    .policy(&self.obs)
                    .expect("architecture validated at ingest");
                let value = peer.value.as_ref().map(|vm| {
                    let vals = vm.values(&self.obs).expect("architecture validated at ingest");
                    if vals.len() == 1 {
                        ValueEstimate::State(vals[0])
                    } else {
                        ValueEstimate::Action(vals)
                    }
                });
                annotations.insert(
                    *pid,
                    ModelOutputs {
                        probs: dist.probs,
                        value,
                    },
                );
                ar_table.insert(*pid, peer.accumulated_reward);
            }
        }

        let transitions_before = self.env.transitions();
        let decision = self.select(act.action, &annotations, &ar_table);

        let step_result = self
            .env
            .step(decision.action)
            .expect("selected action valid on a live episode");
        self.episode_reward += step_result.reward;
        self.wall_step += 1;
        match decision.source {
            SelectionSource::Joint => self.hist_joint += 1,
            SelectionSource::Agent(src) if src == self.id => self.hist_self += 1,
            SelectionSource::Agent(src) => *self.hist_peers.entry(src).or_insert(0) += 1,
        }

        self.learner.record_step(StepRecord {
            obs: std::mem::take(&mut self.obs),
            action: decision.action,
            reward: step_result.reward,
            next_obs: step_result.observation.clone(),
            terminal: step_result.terminal,
            annotations,
        });

        if let Some(observer) = observer.as_mut() {
            observer.on_step(&SelectionEvent {
                seed: self.seed,
                agent: self.id,
                wall_step: self.wall_step,
                decision: &decision,
                transitions_before,
                transitions_after: self.env.transitions(),
                owner_ar: self.latest_ar,
            });
        }

        if self.learner.ready_to_update() && !self.run_update(bus, &ar_table) {
            // Episode aborted; discard progress and start fresh.
            self.needs_reset = true;
            return;
        }

        if step_result.terminal {
            self.latest_ar = Some(self.episode_reward);
            self.records.push(MetricRecord {
                seed: self.seed,
                agent: self.id,
                algorithm: self.algorithm,
                rule: self.rule,
                episode: self.episode_index,
                end_step: self.wall_step,
                episode_reward: self.episode_reward,
                adopted_from: self.episode_adopted_from,
                src_self: self.hist_self,
                src_joint: self.hist_joint,
                src_peers: self.hist_peers.clone(),
            });
            self.episode_index += 1;
            self.needs_reset = true;
        } else {
            self.obs = step_result.observation;
        }
    }

    fn select(
        &mut self,
        own_action: usize,
        annotations: &BTreeMap<AgentId, ModelOutputs>,
        ar_table: &BTreeMap<AgentId, Option<f64>>,
    ) -> SelectionDecision {
        let own = SelectionDecision {
            action: own_action,
            source: SelectionSource::Agent(self.id),
            combo: None,
        };
        if !self.group_mode {
            return own;
        }
        match self.rule {
            Rule::Single => own,
            // An empty mailbox reduces the joint rules to plain
            // single-agent behavior.
            Rule::Pa | Rule::Pm if annotations.len() == 1 => own,
            Rule::Pa | Rule::Pm => {
                let probs: BTreeMap<AgentId, Vec<f64>> = annotations
                    .iter()
                    .map(|(id, o)| (*id, o.probs.clone()))
                    .collect();
                if self.rule == Rule::Pa {
                    rule_pa(&probs)
                } else {
                    rule_pm(&probs)
                }
            }
            Rule::Combo => rule_combo(
                self.id,
                own_action,
                annotations,
                ar_table,
                &self.policy_set,
                &mut self.env,
                &mut self.combo,
            )
            .expect("lookahead on a live episode"),
        }
    }

    /// Adoption check plus learner update. Returns false when the update
    /// failed and the episode must be aborted.
    fn run_update(&mut self, bus: &GroupBus, ar_table: &BTreeMap<AgentId, Option<f64>>) -> bool {
        let mut source = self.id;
        if self.group_mode && self.rule == Rule::Combo {
            let batch_size = self.learner.batch_size() as u64;
            debug_assert_eq!(self.combo.steps_in_batch(), batch_size);
            if let Some(k) = adoption_candidate(self.id, self.combo.usage(), ar_table, batch_size)
            {
                if let Some(peer) = self.policy_set.get(k) {
                    let value = peer
                        .value
                        .as_ref()
                        .filter(|vm| vm.layer_dims() == self.own_value_dims.as_slice())
                        .cloned();
                    let policy = peer.policy.clone();
                    if self.learner.import_models(&policy, value.as_ref()).is_ok() {
                        self.adoptions.push(AdoptionEvent {
                            seed: self.seed,
                            agent: self.id,
                            algorithm: self.algorithm,
                            adopted_from: k,
                            wall_step: self.wall_step,
                            episode: self.episode_index,
                        });
                        self.episode_adopted_from = Some(k);
                        source = k;
                    }
                }
            }
        }
        let ok = match self.learner.update(source) {
            Ok(_) => true,
            Err(_) => {
                self.failures += 1;
                self.learner.abort_batch();
                false
            }
        };
        if self.group_mode && self.rule == Rule::Combo {
            self.combo.reset();
        }
        if ok {
            self.updates_done += 1;
            if self.group_mode {
                if let ExchangeCadence::Updates(k) = self.exchange {
                    if self.updates_done % k as u64 == 0 {
                        self.exchange(bus);
                    }
                }
            }
        }
        ok
    }

    fn finish(self, out: &mut RunOutput) {
        let models = self.learner.export_models();
        out.records.extend(self.records);
        out.adoption_events.extend(self.adoptions);
        out.final_models.push(FinalModel {
            seed: self.seed,
            agent: self.id,
            algorithm: self.algorithm,
            policy: snapshot::serialize(&models.policy),
            value: snapshot::serialize(&models.value),
        });
        *out.failures.entry(self.seed).or_insert(0) += self.failures;
        out.protocol_errors += self.protocol_errors;
    }
}

fn run_seed(
    cfg: &RunConfig,
    seed: u64,
    out: &mut RunOutput,
    mut observer: Option<&mut dyn StepObserver>,
) -> Result<(), HarnessError> {
    let observe = observer.is_some();
    let mut runners: Vec<AgentRunner> = (0..cfg.roster.len())
        .map(|i| AgentRunner::build(cfg, seed, i))
        .collect::<Result<_, _>>()?;
    let bus = GroupBus::new(cfg.roster.len());

    if cfg.deterministic || observe {
        for _ in 0..cfg.total_steps {
            for runner in runners.iter_mut() {
                runner.step_once(&bus, &mut observer);
            }
        }
    } else {
        std::thread::scope(|scope| {
            for runner in runners.iter_mut() {
                let bus = bus.clone();
                let steps = cfg.total_steps;
                scope.spawn(move || {
                    let mut no_observer: Option<&mut dyn StepObserver> = None;
                    for _ in 0..steps {
                        runner.step_once(&bus, &mut no_observer);
                    }
                });
            }
        });
    }

    for runner in runners {
        runner.finish(out);
    }
    Ok(())
}

/// Run the configured experiment over all seeds (sequentially; each
/// seed's agents run interleaved or threaded per the config).
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let mut out = RunOutput::default();
    for &seed in &cfg.seeds {
        run_seed(cfg, seed, &mut out, None)?;
    }
    sort_output(&mut out);
    Ok(out)
}

/// As [`run_experiment`], with a per-step observer; forces the
/// deterministic interleave.
pub fn run_experiment_observed(
    cfg: &RunConfig,
    observer: &mut dyn StepObserver,
) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let mut out = RunOutput::default();
    for &seed in &cfg.seeds {
        run_seed(cfg, seed, &mut out, Some(observer))?;
    }
    sort_output(&mut out);
    Ok(out)
}

fn sort_output(out: &mut RunOutput) {
    out.records
        .sort_by_key(|r| (r.seed, r.agent, r.episode, r.end_step));
    out.adoption_events
        .sort_by_key(|e| (e.seed, e.agent, e.wall_step));
    out.final_models.sort_by_key(|m| (m.seed, m.agent));
}
