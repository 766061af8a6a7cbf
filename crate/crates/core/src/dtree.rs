//! ID3 decision trees over the trustor's history.
//!
//! Continuous features are turned into interval domains by
//! [`discretize`]: candidate cut points are midpoints between consecutive
//! distinct values where the class label changes, and cut points are added
//! greedily while they strictly increase information gain (at most
//! `max_bins - 1` of them). The tree itself follows the classic recursion:
//! pure sets and exhausted feature sets become leaves, otherwise the set is
//! split on the highest-gain feature and that feature is removed for the
//! subtrees. There is no pruning.

use thiserror::Error;

use crate::prediction::{Algorithm, Prediction};
use crate::transaction::{class_counts, Outcome, Transaction, TransactionLog};

pub const DEFAULT_MAX_BINS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum DtreeError {
    #[error("no transactions to learn from")]
    EmptySet,
    #[error("feature {0} takes a single value; it cannot be discretized")]
    ConstantFeature(usize),
    #[error("feature index {feature} out of range for dimensionality {dimensionality}")]
    FeatureOutOfRange {
        feature: usize,
        dimensionality: usize,
    },
    #[error("expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("max_bins must be at least 2")]
    TooFewBins,
}

/// Value domain of one feature.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureDomain {
    /// One branch per listed value (sorted ascending, non-empty).
    Discrete(Vec<f64>),
    /// Ascending cut points `t_1 < ... < t_k` giving the intervals
    /// `(-inf, t_1], (t_1, t_2], ..., (t_k, +inf)`. An empty list is the
    /// single interval covering the whole line.
    Intervals(Vec<f64>),
}

impl FeatureDomain {
    pub fn branch_count(&self) -> usize {
        match self {
            FeatureDomain::Discrete(values) => values.len(),
            FeatureDomain::Intervals(cuts) => cuts.len() + 1,
        }
    }

    /// Branch holding `x`; `None` only for a discrete value never seen in training.
    pub fn branch_of(&self, x: f64) -> Option<usize> {
        match self {
            FeatureDomain::Discrete(values) => values.iter().position(|v| *v == x),
            FeatureDomain::Intervals(cuts) => Some(cuts.partition_point(|t| *t < x)),
        }
    }

    /// Discrete domain made of the distinct values observed for `feature`.
    pub fn discrete_from(entries: &[&Transaction], feature: usize) -> Self {
        let mut values: Vec<f64> = entries.iter().map(|tx| tx.features[feature]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        FeatureDomain::Discrete(values)
    }
}

/// `-p_s log2 p_s - p_u log2 p_u`, with `0 log 0 = 0`.
pub fn entropy(successful: usize, unsuccessful: usize) -> Result<f64, DtreeError> {
    let total = successful + unsuccessful;
    if total == 0 {
        return Err(DtreeError::EmptySet);
    }
    let term = |count: usize| {
        if count == 0 {
            0.0
        } else {
            let p = count as f64 / total as f64;
            -p * p.log2()
        }
    };
    Ok((term(successful) + term(unsuccessful)).clamp(0.0, 1.0))
}

fn entropy_of(counts: (usize, usize)) -> f64 {
    entropy(counts.0, counts.1).unwrap_or(0.0)
}

/// Gain of a split given per-branch class counts.
fn gain_from_branches(parent: (usize, usize), branches: &[(usize, usize)]) -> f64 {
    let total = (parent.0 + parent.1) as f64;
    let parent_entropy = entropy_of(parent);
    let remainder: f64 = branches
        .iter()
        .filter(|(s, u)| s + u > 0)
        .map(|&(s, u)| (s + u) as f64 / total * entropy_of((s, u)))
        .sum();
    (parent_entropy - remainder).clamp(0.0, parent_entropy)
}

fn branch_counts(
    entries: &[&Transaction],
    feature: usize,
    domain: &FeatureDomain,
) -> Vec<(usize, usize)> {
    let mut counts = vec![(0usize, 0usize); domain.branch_count()];
    for tx in entries {
        if let Some(b) = domain.branch_of(tx.features[feature]) {
            match tx.outcome {
                Some(Outcome::Successful) => counts[b].0 += 1,
                Some(Outcome::Unsuccessful) => counts[b].1 += 1,
                None => {}
            }
        }
    }
    counts
}

/// Information gain of `feature` over a set of completed transactions.
pub fn gain_of(
    entries: &[&Transaction],
    feature: usize,
    domain: &FeatureDomain,
) -> Result<f64, DtreeError> {
    if entries.is_empty() {
        return Err(DtreeError::EmptySet);
    }
    let parent = class_counts(entries.iter().copied());
    Ok(gain_from_branches(
        parent,
        &branch_counts(entries, feature, domain),
    ))
}

pub fn information_gain(
    log: &TransactionLog,
    feature: usize,
    domain: &FeatureDomain,
) -> Result<f64, DtreeError> {
    check_feature(feature, log.dimensionality())?;
    let entries: Vec<&Transaction> = log.entries().iter().collect();
    gain_of(&entries, feature, domain)
}

fn check_feature(feature: usize, dimensionality: usize) -> Result<(), DtreeError> {
    if feature >= dimensionality {
        Err(DtreeError::FeatureOutOfRange {
            feature,
            dimensionality,
        })
    } else {
        Ok(())
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

/// Supervised interval domain for one continuous feature.
pub fn discretize_entries(
    entries: &[&Transaction],
    feature: usize,
    max_bins: usize,
) -> Result<FeatureDomain, DtreeError> {
    if max_bins < 2 {
        return Err(DtreeError::TooFewBins);
    }
    // Distinct values with per-value class counts.
    let mut pairs: Vec<(f64, Outcome)> = entries
        .iter()
        .filter_map(|tx| tx.outcome.map(|o| (tx.features[feature], o)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut values: Vec<f64> = Vec::new();
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for (x, o) in pairs {
        if values.last() != Some(&x) {
            values.push(x);
            counts.push((0, 0));
        }
        let c = counts.last_mut().unwrap();
        if o.is_successful() {
            c.0 += 1
        } else {
            c.1 += 1
        }
    }
    if values.len() < 2 {
        return Err(DtreeError::ConstantFeature(feature));
    }

    // Cumulative counts: prefix[i] = counts of all values <= values[i].
    let mut prefix = Vec::with_capacity(values.len());
    let mut acc = (0usize, 0usize);
    for c in &counts {
        acc = (acc.0 + c.0, acc.1 + c.1);
        prefix.push(acc);
    }
    let total = acc;

    // A cut after index i separates values[i] and values[i + 1].
    let pure = |c: &(usize, usize)| {
        if c.1 == 0 {
            Some(true)
        } else if c.0 == 0 {
            Some(false)
        } else {
            None
        }
    };
    let candidates: Vec<usize> = (0..values.len() - 1)
        .filter(|&i| match (pure(&counts[i]), pure(&counts[i + 1])) {
            (Some(a), Some(b)) => a != b,
            _ => true,
        })
        .collect();

    let gain_for = |cuts: &[usize]| {
        let mut branches = Vec::with_capacity(cuts.len() + 1);
        let mut prev = (0usize, 0usize);
        for &i in cuts {
            branches.push((prefix[i].0 - prev.0, prefix[i].1 - prev.1));
            prev = prefix[i];
        }
        branches.push((total.0 - prev.0, total.1 - prev.1));
        gain_from_branches(total, &branches)
    };

    let mut selected: Vec<usize> = Vec::new();
    let mut current = 0.0;
    while selected.len() < max_bins - 1 {
        let mut best: Option<(f64, usize)> = None;
        for &c in &candidates {
            if selected.contains(&c) {
                continue;
            }
            let mut trial = selected.clone();
            trial.push(c);
            trial.sort_unstable();
            let g = gain_for(&trial);
            // Candidates are scanned in ascending order, so strict > keeps the lowest cut on ties.
            if best.is_none_or(|(bg, _)| g > bg) {
                best = Some((g, c));
            }
        }
        match best {
            Some((g, c)) if selected.is_empty() || g > current => {
                selected.push(c);
                selected.sort_unstable();
                current = g;
            }
            _ => break,
        }
    }

    Ok(FeatureDomain::Intervals(
        selected
            .iter()
            .map(|&i| midpoint(values[i], values[i + 1]))
            .collect(),
    ))
}

pub fn discretize(
    log: &TransactionLog,
    feature: usize,
    max_bins: usize,
) -> Result<FeatureDomain, DtreeError> {
    check_feature(feature, log.dimensionality())?;
    let entries: Vec<&Transaction> = log.entries().iter().collect();
    discretize_entries(&entries, feature, max_bins)
}

/// Interval domains for every feature; constant features get the single
/// whole-line interval (and therefore zero gain).
pub fn infer_domains(
    entries: &[&Transaction],
    dimensionality: usize,
    max_bins: usize,
) -> Vec<FeatureDomain> {
    (0..dimensionality)
        .map(|f| match discretize_entries(entries, f, max_bins) {
            Ok(domain) => domain,
            Err(_) => FeatureDomain::Intervals(Vec::new()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        label: Outcome,
        /// Training class counts that reached this leaf (zero for an empty branch).
        counts: (usize, usize),
    },
    Split {
        feature: usize,
        entropy: f64,
        gain: f64,
        /// `gain / entropy`
        ratio: f64,
        counts: (usize, usize),
        majority: Outcome,
        /// One child per branch of the feature's domain.
        children: Vec<NodeId>,
        /// Training entries routed to each child.
        child_sizes: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    domains: Vec<FeatureDomain>,
    dimensionality: usize,
}

/// One internal node visited while classifying.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStep {
    pub node: NodeId,
    pub feature: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeDecision {
    pub label: Outcome,
    pub path: Vec<PathStep>,
}

impl TreeDecision {
    pub fn confidence(&self) -> f64 {
        confidence_dt(&self.path)
    }

    pub fn prediction(&self) -> Prediction {
        Prediction::new(self.label, self.confidence(), Algorithm::DecisionTree)
    }
}

/// Majority label; ties go to `Unsuccessful`.
fn majority(counts: (usize, usize)) -> Outcome {
    if counts.0 > counts.1 {
        Outcome::Successful
    } else {
        Outcome::Unsuccessful
    }
}

struct Builder<'d> {
    nodes: Vec<Node>,
    domains: &'d [FeatureDomain],
}

impl Builder<'_> {
    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn grow(&mut self, entries: &[&Transaction], features: &[usize]) -> NodeId {
        let counts = class_counts(entries.iter().copied());
        if counts.1 == 0 {
            return self.push(Node::Leaf {
                label: Outcome::Successful,
                counts,
            });
        }
        if counts.0 == 0 {
            return self.push(Node::Leaf {
                label: Outcome::Unsuccessful,
                counts,
            });
        }
        if features.is_empty() {
            return self.push(Node::Leaf {
                label: majority(counts),
                counts,
            });
        }

        let mut best: Option<(usize, f64)> = None;
        for &f in features {
            let gain = gain_from_branches(counts, &branch_counts(entries, f, &self.domains[f]));
            if best.is_none_or(|(_, bg)| gain > bg) {
                best = Some((f, gain));
            }
        }
        let (feature, gain) = best.expect("feature set is non-empty");
        let entropy = entropy_of(counts);
        let ratio = if entropy == 0.0 {
            1.0
        } else {
            (gain / entropy).clamp(0.0, 1.0)
        };
        let label = majority(counts);

        let domain = &self.domains[feature];
        let mut groups: Vec<Vec<&Transaction>> = vec![Vec::new(); domain.branch_count()];
        for tx in entries {
            if let Some(b) = domain.branch_of(tx.features[feature]) {
                groups[b].push(tx);
            }
        }
        let remaining: Vec<usize> = features.iter().copied().filter(|f| *f != feature).collect();
        let mut children = Vec::with_capacity(groups.len());
        let mut child_sizes = Vec::with_capacity(groups.len());
        for group in &groups {
            child_sizes.push(group.len());
            let child = if group.is_empty() {
                self.push(Node::Leaf {
                    label,
                    counts: (0, 0),
                })
            } else {
                self.grow(group, &remaining)
            };
            children.push(child);
        }
        self.push(Node::Split {
            feature,
            entropy,
            gain,
            ratio,
            counts,
            majority: label,
            children,
            child_sizes,
        })
    }
}

/// Builds a tree over the given entries. `domains` must cover every feature
/// index in `features`; gain ties are resolved to the lowest feature index.
pub fn build_tree_entries(
    entries: &[&Transaction],
    dimensionality: usize,
    features: &[usize],
    domains: &[FeatureDomain],
) -> Result<DecisionTree, DtreeError> {
    if entries.is_empty() {
        return Err(DtreeError::EmptySet);
    }
    for &f in features {
        if f >= dimensionality || f >= domains.len() {
            return Err(DtreeError::FeatureOutOfRange {
                feature: f,
                dimensionality,
            });
        }
    }
    for tx in entries {
        if tx.features.len() != dimensionality {
            return Err(DtreeError::DimensionMismatch {
                expected: dimensionality,
                actual: tx.features.len(),
            });
        }
    }
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    let mut builder = Builder {
        nodes: Vec::new(),
        domains,
    };
    builder.grow(entries, &features);
    Ok(DecisionTree {
        nodes: builder.nodes,
        domains: domains.to_vec(),
        dimensionality,
    })
}

pub fn build_tree(
    log: &TransactionLog,
    features: &[usize],
    domains: &[FeatureDomain],
) -> Result<DecisionTree, DtreeError> {
    let entries: Vec<&Transaction> = log.entries().iter().collect();
    build_tree_entries(&entries, log.dimensionality(), features, domains)
}

/// Discretizes every feature and grows a tree over all of them.
pub fn train_entries(
    entries: &[&Transaction],
    dimensionality: usize,
    max_bins: usize,
) -> Result<DecisionTree, DtreeError> {
    let domains = infer_domains(entries, dimensionality, max_bins);
    let features: Vec<usize> = (0..dimensionality).collect();
    build_tree_entries(entries, dimensionality, &features, &domains)
}

impl DecisionTree {
    /// The root is the last node pushed during construction.
    pub fn root(&self) -> NodeId {
        NodeId(self.nodes.len() - 1)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn domains(&self) -> &[FeatureDomain] {
        &self.domains
    }

    pub fn dimensionality(&self) -> usize {
        self.dimensionality
    }

    pub fn depth(&self) -> usize {
        fn depth_of(tree: &DecisionTree, id: NodeId) -> usize {
            match tree.node(id) {
                Node::Leaf { .. } => 0,
                Node::Split { children, .. } => {
                    1 + children
                        .iter()
                        .map(|c| depth_of(tree, *c))
                        .max()
                        .unwrap_or(0)
                }
            }
        }
        depth_of(self, self.root())
    }

    /// Walks from the root to a leaf. A discrete value unseen in training
    /// follows the child that received the most training entries; if no child
    /// received any, the node's majority label is returned with its ratio
    /// forced to 0.
    pub fn classify(&self, p: &[f64]) -> Result<TreeDecision, DtreeError> {
        if p.len() != self.dimensionality {
            return Err(DtreeError::DimensionMismatch {
                expected: self.dimensionality,
                actual: p.len(),
            });
        }
        let mut path = Vec::new();
        let mut at = self.root();
        loop {
            match self.node(at) {
                Node::Leaf { label, .. } => {
                    return Ok(TreeDecision {
                        label: *label,
                        path,
                    })
                }
                Node::Split {
                    feature,
                    ratio,
                    majority,
                    children,
                    child_sizes,
                    ..
                } => {
                    let branch = self.domains[*feature].branch_of(p[*feature]).or_else(|| {
                        child_sizes
                            .iter()
                            .enumerate()
                            .filter(|(_, n)| **n > 0)
                            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(&a.0)))
                            .map(|(i, _)| i)
                    });
                    match branch {
                        Some(b) => {
                            path.push(PathStep {
                                node: at,
                                feature: *feature,
                                ratio: *ratio,
                            });
                            at = children[b];
                        }
                        None => {
                            path.push(PathStep {
                                node: at,
                                feature: *feature,
                                ratio: 0.0,
                            });
                            return Ok(TreeDecision {
                                label: *majority,
                                path,
                            });
                        }
                    }
                }
            }
        }
    }
}

/// Product of the entropy-reduction ratios along the classification path;
/// an empty path (single-leaf tree) has confidence 1.
pub fn confidence_dt(path: &[PathStep]) -> f64 {
    path.iter().map(|s| s.ratio.clamp(0.0, 1.0)).product()
}
