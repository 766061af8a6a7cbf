//! Synthetic evaluation harness.
//!
//! A population of good and malicious agents transacts in rounds. Good
//! agents misbehave 15% of the time and malicious ones 85%; the features
//! of a transaction depend only on its true outcome:
//! successful ~ N(μ, σ), unsuccessful ~ N(μ + θ, σ) per dimension.
//! Each round a trustor meets a provider it has not dealt with before,
//! the model under test predicts, and the outcome is then revealed and
//! logged. False positives (accepted, turned out bad) and false negatives
//! (rejected, would have been good) are both counted against all
//! evaluated rounds, so the two rates sum to the overall falseness.
//!
//! Three independent random streams are derived from each seed: one for
//! the world (population, pairing, outcomes, feedback), one for feature
//! noise and one for model-internal randomness. The world stream does not
//! depend on θ or the model, so cells that differ only in those see the
//! same transactions.

pub mod sweep;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::baselines::{self, FeedbackConfig, FeedbackRecord, FeedbackStore};
use crate::dtree::DEFAULT_MAX_BINS;
use crate::engine::{Engine, EngineConfig, EngineError, KnowledgeSource, SharedKnowledge};
use crate::lda::{self, LdaOptions};
use crate::lkson::{self, KnowledgeTuple, LksonError, OverlayGraph, ProviderList};
use crate::prediction::{Algorithm, Prediction};
use crate::transaction::{AgentId, CoreError, Outcome, Transaction, TransactionLog};

pub use sweep::{cell_seed, sweep, write_results_csv, CellResult, SweepSpec, RESULTS_HEADER};

/// All simulated transactions share one context.
pub const CONTEXT: &str = "synthetic";

/// Redraws allowed when the drawn provider is already known to the trustor.
const PROVIDER_REDRAWS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("{0}")]
    Config(String),
    #[error("unknown model `{0}` (expected lda, dt, random, feedback, stereo or combined)")]
    UnknownModel(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Overlay(#[from] LksonError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Model {
    Lda,
    Dt,
    Random,
    Feedback,
    Stereo,
    Combined,
}

impl Model {
    pub const ALL: [Model; 6] = [
        Model::Lda,
        Model::Dt,
        Model::Random,
        Model::Feedback,
        Model::Stereo,
        Model::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Model::Lda => "lda",
            Model::Dt => "dt",
            Model::Random => "random",
            Model::Feedback => "feedback",
            Model::Stereo => "stereo",
            Model::Combined => "combined",
        }
    }

    fn engine_config(self) -> Option<EngineConfig> {
        match self {
            Model::Lda => Some(EngineConfig::lda_only()),
            Model::Dt => Some(EngineConfig::tree_only()),
            Model::Combined => Some(EngineConfig::default()),
            _ => None,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Model::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or(SimError::UnknownModel(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_agents: usize,
    pub p_malicious: f64,
    pub p_misbehave_good: f64,
    pub p_misbehave_malicious: f64,
    pub theta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub d: usize,
    /// Evaluated rounds.
    pub n_transactions: usize,
    /// Unevaluated transactions each agent logs before evaluation starts.
    pub warmup: usize,
    /// Size of each trustor's knowledge-provider list.
    pub providers: usize,
    pub seed: u64,
    pub model: Model,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_agents: 1000,
            p_malicious: 0.5,
            p_misbehave_good: 0.15,
            p_misbehave_malicious: 0.85,
            theta: 0.8,
            mu: 1.0,
            sigma: 0.1,
            d: 4,
            n_transactions: 5000,
            warmup: 10,
            providers: 60,
            seed: 0,
            model: Model::Lda,
        }
    }
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: &str| Err(SimError::Config(m.to_owned()));
        if self.n_agents < 2 {
            return fail("at least 2 agents are required");
        }
        if !unit(self.p_malicious) {
            return fail("p_m out of [0,1]");
        }
        if !unit(self.p_misbehave_good) || !unit(self.p_misbehave_malicious) {
            return fail("misbehavior probability out of [0,1]");
        }
        if !unit(self.theta) {
            return fail("theta out of [0,1]");
        }
        if self.sigma <= 0.0 || !self.sigma.is_finite() || !self.mu.is_finite() {
            return fail("sigma must be positive and mu finite");
        }
        if self.d == 0 {
            return fail("feature count must be positive");
        }
        Ok(())
    }

    pub fn malicious_count(&self) -> usize {
        ((self.p_malicious * self.n_agents as f64 + 1e-9).floor() as usize).min(self.n_agents)
    }
}

/// Error rates over the evaluated rounds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub false_positives: usize,
    pub false_negatives: usize,
    pub evaluated: usize,
    pub false_positive_rate: f64,
    pub false_negative_rate: f64,
    pub overall_falseness: f64,
}

impl Metrics {
    pub fn from_counts(false_positives: usize, false_negatives: usize, evaluated: usize) -> Self {
        let rate = |c: usize| {
            if evaluated == 0 {
                0.0
            } else {
                c as f64 / evaluated as f64
            }
        };
        let false_positive_rate = rate(false_positives);
        let false_negative_rate = rate(false_negatives);
        Metrics {
            false_positives,
            false_negatives,
            evaluated,
            false_positive_rate,
            false_negative_rate,
            overall_falseness: false_positive_rate + false_negative_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub ids: Vec<AgentId>,
    pub malicious: Vec<bool>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn malicious_count(&self) -> usize {
        self.malicious.iter().filter(|m| **m).count()
    }
}

/// Tags `floor(P_m * n)` uniformly chosen agents as malicious.
pub fn generate_population<R: Rng + ?Sized>(
    config: &SimConfig,
    rng: &mut R,
) -> Result<Population, SimError> {
    config.validate()?;
    let n = config.n_agents;
    let mut malicious = vec![false; n];
    for i in index::sample(rng, n, config.malicious_count()) {
        malicious[i] = true;
    }
    Ok(Population {
        ids: (0..n).map(|i| AgentId(format!("agent-{i}"))).collect(),
        malicious,
    })
}

/// One feature vector for a transaction with the given true outcome.
pub fn sample_features<R: Rng + ?Sized>(
    outcome: Outcome,
    config: &SimConfig,
    rng: &mut R,
) -> Vec<f64> {
    let shift = match outcome {
        Outcome::Successful => 0.0,
        Outcome::Unsuccessful => config.theta,
    };
    (0..config.d)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            config.mu + shift + config.sigma * z
        })
        .collect()
}

/// One evaluated round.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub trustor: usize,
    pub provider: usize,
    pub actual: Outcome,
    pub prediction: Prediction,
    /// Where the knowledge came from, for the learning models.
    pub source: Option<KnowledgeSource>,
    /// Trustor's `(n_s, n_u)` before this round.
    pub local_counts: (usize, usize),
    /// Every confidence emitted this round, chosen or not.
    pub confidences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub metrics: Metrics,
    pub trace: Vec<Trial>,
}

/// The three random streams for one seed.
pub struct Streams {
    pub world: ChaCha8Rng,
    pub features: ChaCha8Rng,
    pub model: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |n| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n);
            rng
        };
        Streams {
            world: stream(0),
            features: stream(1),
            model: stream(2),
        }
    }
}

struct World<'a> {
    config: &'a SimConfig,
    population: Population,
    logs: Vec<TransactionLog>,
    known: Vec<HashSet<usize>>,
    feedback: FeedbackStore,
    graph: OverlayGraph,
    provider_lists: Vec<Option<ProviderList>>,
    /// Per-agent shared tuple; outer `None` means stale.
    tuples: Vec<Option<Option<KnowledgeTuple>>>,
    next_tx: usize,
    streams: Streams,
}

impl<'a> World<'a> {
    fn new(config: &'a SimConfig) -> Result<Self, SimError> {
        let mut streams = Streams::new(config.seed);
        let population = generate_population(config, &mut streams.world)?;
        let n = population.len();
        Ok(World {
            logs: population
                .ids
                .iter()
                .map(|id| TransactionLog::new(id.clone(), config.d))
                .collect(),
            known: vec![HashSet::new(); n],
            feedback: FeedbackStore::new(),
            graph: OverlayGraph::new(),
            provider_lists: vec![None; n],
            tuples: vec![None; n],
            next_tx: 0,
            population,
            config,
            streams,
        })
    }

    /// A uniformly drawn partner, preferring one the trustor has not met.
    fn pick_provider(&mut self, trustor: usize) -> usize {
        let n = self.population.len();
        let draw = |rng: &mut ChaCha8Rng| {
            let j = rng.random_range(0..n - 1);
            if j >= trustor {
                j + 1
            } else {
                j
            }
        };
        let mut provider = draw(&mut self.streams.world);
        for _ in 0..PROVIDER_REDRAWS {
            if !self.known[trustor].contains(&provider) {
                break;
            }
            provider = draw(&mut self.streams.world);
        }
        provider
    }

    fn misbehave_probability(&self, agent: usize) -> f64 {
        if self.population.malicious[agent] {
            self.config.p_misbehave_malicious
        } else {
            self.config.p_misbehave_good
        }
    }

    /// Draws the true outcome and the features of a pending transaction.
    fn draw_transaction(&mut self, provider: usize) -> (Outcome, Vec<f64>) {
        let misbehaves = self
            .streams
            .world
            .random_bool(self.misbehave_probability(provider));
        let outcome = if misbehaves {
            Outcome::Unsuccessful
        } else {
            Outcome::Successful
        };
        let features = sample_features(outcome, self.config, &mut self.streams.features);
        (outcome, features)
    }

    /// Logs the completed transaction and the trustor's (possibly false) rating.
    fn complete(
        &mut self,
        trustor: usize,
        provider: usize,
        outcome: Outcome,
        features: Vec<f64>,
    ) -> Result<(), SimError> {
        let lies = self
            .streams
            .world
            .random_bool(self.misbehave_probability(trustor));
        self.feedback.push(FeedbackRecord {
            rater: self.population.ids[trustor].clone(),
            target: self.population.ids[provider].clone(),
            rating: if lies { outcome.flipped() } else { outcome },
            genuine: !lies,
        });
        let id = format!("tx-{}", self.next_tx);
        self.next_tx += 1;
        let tx = Transaction::completed(
            id,
            self.population.ids[provider].0.clone(),
            CONTEXT,
            features,
            outcome,
        );
        self.logs[trustor].push(tx)?;
        self.known[trustor].insert(provider);
        self.tuples[trustor] = None;
        Ok(())
    }

    fn shared_tuple(&mut self, agent: usize) -> Option<KnowledgeTuple> {
        if let Some(cached) = &self.tuples[agent] {
            return cached.clone();
        }
        let tuple = lda::train(&self.logs[agent], &LdaOptions::default())
            .ok()
            .and_then(|model| {
                lkson::share_knowledge(&self.population.ids[agent], &model, CONTEXT).ok()
            });
        self.tuples[agent] = Some(tuple.clone());
        tuple
    }

    /// Tuples and trust scores from the trustor's provider list.
    fn overlay_for(&mut self, trustor: usize) -> Vec<SharedKnowledge> {
        if self.provider_lists[trustor].is_none() {
            let known = &self.known[trustor];
            let list = lkson::bootstrap_providers(
                &self.population.ids[trustor],
                &self.population.ids,
                |id| known.contains(&agent_index(id)),
                self.config.providers,
                &mut self.streams.model,
            );
            self.provider_lists[trustor] = Some(list);
        }
        let mut list = self.provider_lists[trustor]
            .take()
            .expect("provider list initialised above");
        list.refresh(&self.graph);
        let mut shared = Vec::with_capacity(list.len());
        for (id, trust) in &list.entries {
            let agent = agent_index(id);
            if let Some(tuple) = self.shared_tuple(agent) {
                shared.push(SharedKnowledge {
                    tuple,
                    trust: *trust,
                });
            }
        }
        self.provider_lists[trustor] = Some(list);
        shared
    }
}

fn agent_index(id: &AgentId) -> usize {
    id.0.strip_prefix("agent-")
        .and_then(|i| i.parse().ok())
        .expect("simulated agent ids are `agent-<index>`")
}

struct Decision {
    prediction: Prediction,
    source: Option<KnowledgeSource>,
    consulted: Vec<KnowledgeTuple>,
    confidences: Vec<f64>,
}

fn decide(
    world: &mut World,
    model: Model,
    trustor: usize,
    provider: usize,
    features: &[f64],
) -> Result<Decision, SimError> {
    let simple = |prediction: Prediction| Decision {
        confidences: vec![prediction.confidence],
        prediction,
        source: None,
        consulted: Vec::new(),
    };
    match model {
        Model::Random => Ok(simple(baselines::random_select(&mut world.streams.model))),
        Model::Feedback => Ok(simple(baselines::aggregate_feedback(
            &world.population.ids[provider],
            &world.feedback,
            &world.logs[trustor],
            &FeedbackConfig::default(),
        ))),
        Model::Stereo => {
            let p =
                baselines::stereotrust_predict(&world.logs[trustor], features, DEFAULT_MAX_BINS)
                    .unwrap_or_else(|_| Prediction::uninformative(Algorithm::StereoTrust));
            Ok(simple(p))
        }
        Model::Lda | Model::Dt | Model::Combined => {
            let engine = Engine::new(model.engine_config().expect("learning model"));
            let (s, u) = world.logs[trustor].context_counts(CONTEXT);
            let required = engine.config.min_class_count;
            let overlay = if s < required || u < required {
                world.overlay_for(trustor)
            } else {
                Vec::new()
            };
            let candidate = Transaction::pending(
                format!("tx-{}", world.next_tx),
                world.population.ids[provider].0.clone(),
                CONTEXT,
                features.to_vec(),
            );
            match engine.assess(&world.logs[trustor], &candidate, Some(&overlay)) {
                Ok(a) => Ok(Decision {
                    confidences: a.predictions.iter().map(|p| p.confidence).collect(),
                    prediction: a.chosen,
                    source: Some(a.source),
                    consulted: a.consulted,
                }),
                // Nobody could answer, or the answers cancelled out.
                Err(EngineError::Overlay(_)) => {
                    let p = Prediction::uninformative(Algorithm::Lda);
                    Ok(Decision {
                        confidences: vec![p.confidence],
                        prediction: p,
                        source: Some(KnowledgeSource::Overlay),
                        consulted: Vec::new(),
                    })
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

/// Runs warm-up followed by `n_transactions` evaluated rounds.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentReport, SimError> {
    let mut world = World::new(config)?;
    let n = config.n_agents;

    for _ in 0..config.warmup {
        for trustor in 0..n {
            let provider = world.pick_provider(trustor);
            let (outcome, features) = world.draw_transaction(provider);
            world.complete(trustor, provider, outcome, features)?;
        }
    }

    let (mut fp, mut fneg) = (0usize, 0usize);
    let mut trace = Vec::with_capacity(config.n_transactions);
    for _ in 0..config.n_transactions {
        let trustor = world.streams.world.random_range(0..n);
        let provider = world.pick_provider(trustor);
        let (actual, features) = world.draw_transaction(provider);
        let local_counts = world.logs[trustor].context_counts(CONTEXT);

        let decision = decide(&mut world, config.model, trustor, provider, &features)?;
        match (decision.prediction.label, actual) {
            (Outcome::Successful, Outcome::Unsuccessful) => fp += 1,
            (Outcome::Unsuccessful, Outcome::Successful) => fneg += 1,
            _ => {}
        }
        if !decision.consulted.is_empty() {
            lkson::post_transaction_update(
                &mut world.graph,
                &world.population.ids[trustor],
                &decision.consulted,
                actual,
                &features,
                lkson::SUCCESS_SAMPLE_FRACTION,
                &mut world.streams.model,
            )?;
        }
        world.complete(trustor, provider, actual, features)?;
        trace.push(Trial {
            trustor,
            provider,
            actual,
            prediction: decision.prediction,
            source: decision.source,
            local_counts,
            confidences: decision.confidences,
        });
    }

    Ok(ExperimentReport {
        metrics: Metrics::from_counts(fp, fneg, config.n_transactions),
        trace,
    })
}
