//! Comparison models: random acceptance, feedback aggregation with a
//! simplified false-feedback filter, and a StereoTrust-style group model
//! with equal group weights.

use std::collections::HashMap;

use rand::Rng;

use crate::dtree::{self, DtreeError, FeatureDomain};
use crate::prediction::{Algorithm, Prediction};
use crate::transaction::{AgentId, Outcome, Transaction, TransactionLog};

/// Accepts with probability one half.
pub fn random_select<R: Rng + ?Sized>(rng: &mut R) -> Prediction {
    let label = if rng.random_bool(0.5) {
        Outcome::Successful
    } else {
        Outcome::Unsuccessful
    };
    Prediction::new(label, 0.0, Algorithm::Random)
}

fn beta_mean(positive: usize, negative: usize) -> f64 {
    (positive as f64 + 1.0) / ((positive + negative) as f64 + 2.0)
}

/// Label from a trust value: successful only when strictly above one half.
fn from_trust(trust: f64, algorithm: Algorithm) -> Prediction {
    let label = if trust > 0.5 {
        Outcome::Successful
    } else {
        Outcome::Unsuccessful
    };
    Prediction::new(label, (2.0 * trust - 1.0).abs().min(1.0), algorithm)
}

/// One rating reported by `rater` about `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackRecord {
    pub rater: AgentId,
    pub target: AgentId,
    pub rating: Outcome,
    /// Whether the rating matches what the rater actually experienced
    /// (known to the simulator only).
    pub genuine: bool,
}

/// All feedback in the network, indexed by target and by rater.
#[derive(Debug, Clone, Default)]
pub struct FeedbackStore {
    records: Vec<FeedbackRecord>,
    by_target: HashMap<AgentId, Vec<usize>>,
    by_rater: HashMap<AgentId, Vec<usize>>,
}

impl FeedbackStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: FeedbackRecord) {
        let i = self.records.len();
        self.by_target
            .entry(record.target.clone())
            .or_default()
            .push(i);
        self.by_rater
            .entry(record.rater.clone())
            .or_default()
            .push(i);
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn about<'a>(&'a self, target: &AgentId) -> impl Iterator<Item = &'a FeedbackRecord> + 'a {
        self.by_target
            .get(target)
            .into_iter()
            .flatten()
            .map(move |&i| &self.records[i])
    }

    pub fn by<'a>(&'a self, rater: &AgentId) -> impl Iterator<Item = &'a FeedbackRecord> + 'a {
        self.by_rater
            .get(rater)
            .into_iter()
            .flatten()
            .map(move |&i| &self.records[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackConfig {
    /// Overlapping ratings needed before a rater can be judged.
    pub min_overlap: usize,
    /// Raters disagreeing with the requester more often than this are dropped.
    pub max_disagreement: f64,
    /// Poll at most this many raters of the target (all when `None`).
    pub max_raters: Option<usize>,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            min_overlap: 2,
            max_disagreement: 0.5,
            max_raters: None,
        }
    }
}

/// Surviving evidence about a target after filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FeedbackEvidence {
    pub positive: usize,
    pub negative: usize,
    pub raters_polled: usize,
    pub raters_filtered: usize,
    pub ratings_polled: usize,
}

/// Requester's own verdict per counterparty; ties give no verdict.
fn direct_verdicts(history: &TransactionLog) -> HashMap<&AgentId, Outcome> {
    let mut tally: HashMap<&AgentId, (usize, usize)> = HashMap::new();
    for tx in history.entries() {
        let e = tally.entry(&tx.counterparty).or_default();
        match tx.outcome {
            Some(Outcome::Successful) => e.0 += 1,
            Some(Outcome::Unsuccessful) => e.1 += 1,
            None => {}
        }
    }
    tally
        .into_iter()
        .filter_map(|(who, (s, u))| match s.cmp(&u) {
            std::cmp::Ordering::Greater => Some((who, Outcome::Successful)),
            std::cmp::Ordering::Less => Some((who, Outcome::Unsuccessful)),
            std::cmp::Ordering::Equal => None,
        })
        .collect()
}

/// Collects and filters feedback about `target`.
///
/// A rater is discarded when, over the ratings it gave to agents the
/// requester has dealt with itself, it disagrees with the requester's own
/// verdict more than `max_disagreement` of the time (judged only with at
/// least `min_overlap` such ratings).
pub fn feedback_evidence(
    target: &AgentId,
    store: &FeedbackStore,
    requester: &TransactionLog,
    config: &FeedbackConfig,
) -> FeedbackEvidence {
    let verdicts = direct_verdicts(requester);
    let mut per_rater: Vec<(&AgentId, usize, usize)> = Vec::new();
    for record in store.about(target) {
        if &record.rater == requester.owner() {
            continue;
        }
        match per_rater.iter_mut().find(|(r, _, _)| *r == &record.rater) {
            Some(entry) => {
                if record.rating.is_successful() {
                    entry.1 += 1
                } else {
                    entry.2 += 1
                }
            }
            None => {
                if config.max_raters.is_some_and(|m| per_rater.len() >= m) {
                    continue;
                }
                let (p, n) = if record.rating.is_successful() {
                    (1, 0)
                } else {
                    (0, 1)
                };
                per_rater.push((&record.rater, p, n));
            }
        }
    }

    let mut evidence = FeedbackEvidence {
        raters_polled: per_rater.len(),
        ..FeedbackEvidence::default()
    };
    for (rater, pos, neg) in per_rater {
        evidence.ratings_polled += pos + neg;
        let (mut overlap, mut disagree) = (0usize, 0usize);
        for r in store.by(rater) {
            if let Some(v) = verdicts.get(&r.target) {
                overlap += 1;
                if *v != r.rating {
                    disagree += 1;
                }
            }
        }
        let unreliable = overlap >= config.min_overlap
            && (disagree as f64) / (overlap as f64) > config.max_disagreement;
        if unreliable {
            evidence.raters_filtered += 1;
        } else {
            evidence.positive += pos;
            evidence.negative += neg;
        }
    }
    evidence
}

/// Beta-mean trust of the target from filtered feedback.
pub fn aggregate_feedback(
    target: &AgentId,
    store: &FeedbackStore,
    requester: &TransactionLog,
    config: &FeedbackConfig,
) -> Prediction {
    let e = feedback_evidence(target, store, requester, config);
    from_trust(beta_mean(e.positive, e.negative), Algorithm::Feedback)
}

/// Group-trust prediction: for every feature, the candidate falls into one
/// interval of that feature's discretization; the group trust is the beta
/// mean of the history in that interval, and the groups are averaged with
/// equal weights. Empty groups are skipped; with no populated group the
/// prior 0.5 is used.
pub fn stereotrust_predict_entries(
    entries: &[&Transaction],
    target_features: &[f64],
    max_bins: usize,
) -> Result<Prediction, DtreeError> {
    if entries.is_empty() {
        return Err(DtreeError::EmptySet);
    }
    let d = entries[0].features.len();
    if target_features.len() != d {
        return Err(DtreeError::DimensionMismatch {
            expected: d,
            actual: target_features.len(),
        });
    }
    let mut trusts = Vec::with_capacity(d);
    for (f, &x) in target_features.iter().enumerate() {
        let domain = match dtree::discretize_entries(entries, f, max_bins) {
            Ok(domain) => domain,
            Err(DtreeError::ConstantFeature(_)) => FeatureDomain::Intervals(Vec::new()),
            Err(e) => return Err(e),
        };
        let Some(group) = domain.branch_of(x) else {
            continue;
        };
        let (mut s, mut u) = (0usize, 0usize);
        for tx in entries {
            if domain.branch_of(tx.features[f]) == Some(group) {
                match tx.outcome {
                    Some(Outcome::Successful) => s += 1,
                    Some(Outcome::Unsuccessful) => u += 1,
                    None => {}
                }
            }
        }
        if s + u > 0 {
            trusts.push(beta_mean(s, u));
        }
    }
    let trust = if trusts.is_empty() {
        0.5
    } else {
        trusts.iter().sum::<f64>() / trusts.len() as f64
    };
    Ok(from_trust(trust, Algorithm::StereoTrust))
}

pub fn stereotrust_predict(
    log: &TransactionLog,
    target_features: &[f64],
    max_bins: usize,
) -> Result<Prediction, DtreeError> {
    let entries: Vec<&Transaction> = log.entries().iter().collect();
    if !entries.is_empty() && target_features.len() != log.dimensionality() {
        return Err(DtreeError::DimensionMismatch {
            expected: log.dimensionality(),
            actual: target_features.len(),
        });
    }
    stereotrust_predict_entries(&entries, target_features, max_bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_select_is_fair_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let accepted = (0..n)
            .filter(|_| random_select(&mut rng).label == Outcome::Successful)
            .count();
        assert!((accepted as f64 / n as f64 - 0.5).abs() < 0.02);

        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..32)
                .map(|_| random_select(&mut rng).label)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_eq!(random_select(&mut rng).confidence, 0.0);
    }

    fn record(rater: &str, target: &str, rating: Outcome) -> FeedbackRecord {
        FeedbackRecord {
            rater: rater.into(),
            target: target.into(),
            rating,
            genuine: true,
        }
    }

    #[test]
    fn aggregate_counts_without_filtering() {
        let mut store = FeedbackStore::new();
        for i in 0..8 {
            store.push(record(&format!("r{i}"), "t", Outcome::Successful));
        }
        for i in 8..10 {
            store.push(record(&format!("r{i}"), "t", Outcome::Unsuccessful));
        }
        let me = TransactionLog::new("me".into(), 1);
        let p = aggregate_feedback(&"t".into(), &store, &me, &FeedbackConfig::default());
        assert_eq!(p.label, Outcome::Successful);
        assert_relative_eq!(p.confidence, 0.5); // mean 0.75
    }

    #[test]
    fn no_feedback_is_uninformative() {
        let store = FeedbackStore::new();
        let me = TransactionLog::new("me".into(), 1);
        let p = aggregate_feedback(&"t".into(), &store, &me, &FeedbackConfig::default());
        assert_eq!((p.label, p.confidence), (Outcome::Unsuccessful, 0.0));
    }

    #[test]
    fn liars_are_filtered() {
        let mut me = TransactionLog::new("me".into(), 1);
        me.push(Transaction::completed(
            "a",
            "x",
            "c",
            vec![0.0],
            Outcome::Successful,
        ))
        .unwrap();
        me.push(Transaction::completed(
            "b",
            "y",
            "c",
            vec![0.0],
            Outcome::Successful,
        ))
        .unwrap();

        let mut store = FeedbackStore::new();
        // The liar contradicts my experience with x and y, then praises t.
        store.push(record("liar", "x", Outcome::Unsuccessful));
        store.push(record("liar", "y", Outcome::Unsuccessful));
        store.push(record("liar", "t", Outcome::Successful));

        let e = feedback_evidence(&"t".into(), &store, &me, &FeedbackConfig::default());
        assert_eq!((e.raters_polled, e.raters_filtered, e.positive), (1, 1, 0));
        let p = aggregate_feedback(&"t".into(), &store, &me, &FeedbackConfig::default());
        assert_eq!((p.label, p.confidence), (Outcome::Unsuccessful, 0.0));

        // One overlap is not enough to judge.
        let mut store = FeedbackStore::new();
        store.push(record("liar", "x", Outcome::Unsuccessful));
        store.push(record("liar", "t", Outcome::Successful));
        let e = feedback_evidence(&"t".into(), &store, &me, &FeedbackConfig::default());
        assert_eq!((e.raters_filtered, e.positive), (0, 1));
    }

    #[test]
    fn rater_fanout_limit() {
        let mut store = FeedbackStore::new();
        for i in 0..5 {
            store.push(record(&format!("r{i}"), "t", Outcome::Successful));
        }
        let me = TransactionLog::new("me".into(), 1);
        let config = FeedbackConfig {
            max_raters: Some(2),
            ..FeedbackConfig::default()
        };
        let e = feedback_evidence(&"t".into(), &store, &me, &config);
        assert_eq!((e.raters_polled, e.positive), (2, 2));
    }

    fn history(rows: &[(f64, Outcome)]) -> TransactionLog {
        TransactionLog::from_entries(
            "me".into(),
            1,
            rows.iter()
                .enumerate()
                .map(|(i, (x, o))| Transaction::completed(format!("t{i}"), "p", "c", vec![*x], *o)),
        )
        .unwrap()
    }

    #[test]
    fn stereotrust_single_group() {
        let log = history(&[
            (1.0, Outcome::Successful),
            (2.0, Outcome::Successful),
            (3.0, Outcome::Successful),
        ]);
        let p = stereotrust_predict(&log, &[2.5], 4).unwrap();
        assert_eq!(p.label, Outcome::Successful);
        assert_relative_eq!(p.confidence, 2.0 * 4.0 / 5.0 - 1.0);
    }

    #[test]
    fn stereotrust_balanced_groups_tie() {
        // Two features; the candidate lands in a mostly-good group on one
        // and a mostly-bad group on the other, with symmetric trusts.
        let rows = [
            (vec![0.0, 1.0], Outcome::Successful),
            (vec![0.0, 1.0], Outcome::Successful),
            (vec![0.0, 1.0], Outcome::Successful),
            (vec![1.0, 0.0], Outcome::Unsuccessful),
            (vec![1.0, 0.0], Outcome::Unsuccessful),
            (vec![1.0, 0.0], Outcome::Unsuccessful),
        ];
        let log = TransactionLog::from_entries(
            "me".into(),
            2,
            rows.iter().enumerate().map(|(i, (f, o))| {
                Transaction::completed(format!("t{i}"), "p", "c", f.clone(), *o)
            }),
        )
        .unwrap();
        // Feature 0 group {0.0}: trust 4/5; feature 1 group {0.0}: trust 1/5.
        let p = stereotrust_predict(&log, &[0.0, 0.0], 4).unwrap();
        assert_relative_eq!(p.confidence, 0.0, epsilon = 1e-15);
        assert_eq!(p.label, Outcome::Unsuccessful);
    }

    #[test]
    fn stereotrust_empty_log() {
        let log = TransactionLog::new("me".into(), 1);
        assert_eq!(
            stereotrust_predict(&log, &[0.0], 4).unwrap_err(),
            DtreeError::EmptySet
        );
    }
}
