//! Two-class linear discriminant analysis over a trustor's history.
//!
//! The pipeline is: split the log by outcome, compute group and global
//! centroids, build the within/between/mixture scatter matrices, take the
//! Fisher direction `S_w^-1 (c_s - c_u)`, and classify a candidate by its
//! projected distance to each projected centroid.
//!
//! For two classes `S_b` has rank one, so the leading eigenvector of
//! `S_w^-1 S_b` is the closed-form direction above and no general eigensolve
//! is needed.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::prediction::{Algorithm, Prediction};
use crate::transaction::{CoreError, Outcome, Transaction, TransactionLog};

/// Condition number above which the within-class scatter is regularized.
pub const MAX_CONDITION: f64 = 1e12;
/// Relative ridge applied to an ill-conditioned `S_w`: `eps = RIDGE * trace / d`.
pub const RIDGE: f64 = 1e-6;
pub const RIDGE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LdaError {
    #[error("a transaction group is empty")]
    EmptyGroup,
    #[error("successful and unsuccessful centroids coincide; no discriminating direction exists")]
    DegenerateClasses,
    #[error("expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("insufficient knowledge: {successful} successful / {unsuccessful} unsuccessful, need {required} of each")]
    InsufficientKnowledge {
        successful: usize,
        unsuccessful: usize,
        required: usize,
    },
    #[error("within-class scatter is singular and regularization is disabled")]
    SingularScatter,
    #[error("confidence is undefined when the candidate coincides with both centroids")]
    UndefinedConfidence,
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// How the within-class scatter is conditioned before solving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// Add `eps * I` only when `S_w` is singular or its condition number
    /// exceeds [`MAX_CONDITION`].
    Auto,
    /// Always add exactly this ridge (use `0.0` to disable).
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaOptions {
    pub regularization: Regularization,
    /// Minimum number of entries required in each class by [`train`].
    pub min_class_count: usize,
}

impl Default for LdaOptions {
    fn default() -> Self {
        LdaOptions {
            regularization: Regularization::Auto,
            min_class_count: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub successful: DVector<f64>,
    pub unsuccessful: DVector<f64>,
    pub global: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSet {
    pub within_successful: DMatrix<f64>,
    pub within_unsuccessful: DMatrix<f64>,
    pub within: DMatrix<f64>,
    pub between: DMatrix<f64>,
    pub mixture: DMatrix<f64>,
    pub centroids: Centroids,
    /// `(n_s, n_u)`
    pub group_sizes: (usize, usize),
}

impl ScatterSet {
    pub fn dimensionality(&self) -> usize {
        self.within.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    /// Unit-norm projection direction with its first nonzero entry positive.
    pub direction: DVector<f64>,
    pub centroid_successful: DVector<f64>,
    pub centroid_unsuccessful: DVector<f64>,
    /// Fisher criterion `J(v)` evaluated with the regularized `S_w`.
    pub criterion_value: f64,
    /// Ridge actually added to `S_w` (0 when none was needed).
    pub regularization_used: f64,
}

/// Projected distances of a candidate to the two centroids and the decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discriminant {
    pub distance_successful: f64,
    pub distance_unsuccessful: f64,
    pub label: Outcome,
}

impl Discriminant {
    /// Recommendation confidence; 0 when the candidate sits on both centroids.
    pub fn confidence(&self) -> f64 {
        confidence_lda(self.distance_successful, self.distance_unsuccessful).unwrap_or(0.0)
    }

    pub fn prediction(&self) -> Prediction {
        Prediction::new(self.label, self.confidence(), Algorithm::Lda)
    }
}

fn lexicographic(a: &&[f64], b: &&[f64]) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Rows in a canonical order so that sums do not depend on log order.
fn canonical<'a>(rows: &[&'a [f64]]) -> Vec<&'a [f64]> {
    let mut rows = rows.to_vec();
    rows.sort_by(lexicographic);
    rows
}

fn check_groups(gs: &[&[f64]], gu: &[&[f64]]) -> Result<usize, LdaError> {
    if gs.is_empty() || gu.is_empty() {
        return Err(LdaError::EmptyGroup);
    }
    let d = gs[0].len();
    for row in gs.iter().chain(gu.iter()) {
        if row.len() != d {
            return Err(LdaError::DimensionMismatch {
                expected: d,
                actual: row.len(),
            });
        }
    }
    Ok(d)
}

fn mean(rows: &[&[f64]], d: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(d);
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row.iter()) {
            *a += v;
        }
    }
    acc / rows.len() as f64
}

/// Per-feature means of each group and of the pooled set.
pub fn centroids(gs: &[&[f64]], gu: &[&[f64]]) -> Result<Centroids, LdaError> {
    let d = check_groups(gs, gu)?;
    let gs = canonical(gs);
    let gu = canonical(gu);
    let pooled = canonical(&[gs.as_slice(), gu.as_slice()].concat());
    Ok(Centroids {
        successful: mean(&gs, d),
        unsuccessful: mean(&gu, d),
        global: mean(&pooled, d),
    })
}

fn spread(rows: &[&[f64]], center: &DVector<f64>) -> DMatrix<f64> {
    let d = center.len();
    let mut acc = DMatrix::zeros(d, d);
    for row in rows {
        let dev = DVector::from_column_slice(row) - center;
        acc += &dev * dev.transpose();
    }
    acc / rows.len() as f64
}

/// Within-class, between-class and mixture scatter of the two groups.
pub fn scatter(gs: &[&[f64]], gu: &[&[f64]]) -> Result<ScatterSet, LdaError> {
    let centroids = centroids(gs, gu)?;
    let gs = canonical(gs);
    let gu = canonical(gu);
    let (ns, nu) = (gs.len() as f64, gu.len() as f64);
    let n = ns + nu;

    let within_successful = spread(&gs, &centroids.successful);
    let within_unsuccessful = spread(&gu, &centroids.unsuccessful);
    let within = (&within_successful * ns + &within_unsuccessful * nu) / n;

    let ds = &centroids.successful - &centroids.global;
    let du = &centroids.unsuccessful - &centroids.global;
    let between = (&ds * ds.transpose() * ns + &du * du.transpose() * nu) / n;
    let pooled = canonical(&[gs.as_slice(), gu.as_slice()].concat());
    let mixture = spread(&pooled, &centroids.global);

    Ok(ScatterSet {
        within_successful,
        within_unsuccessful,
        within,
        between,
        mixture,
        centroids,
        group_sizes: (gs.len(), gu.len()),
    })
}

/// Ridge to add to `S_w`, following `options.regularization`.
fn ridge_for(within: &DMatrix<f64>, regularization: Regularization) -> f64 {
    match regularization {
        Regularization::Fixed(eps) => eps,
        Regularization::Auto => {
            let d = within.nrows();
            let eigen = SymmetricEigen::new(within.clone());
            let max = eigen
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let min = eigen
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let well_conditioned = min > 0.0 && max / min <= MAX_CONDITION;
            if well_conditioned {
                0.0
            } else {
                (RIDGE * within.trace() / d as f64).max(RIDGE_FLOOR)
            }
        }
    }
}

fn canonicalize_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| **x != 0.0) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Two-class Fisher direction `v ∝ S_w^-1 (c_s - c_u)`, normalized and
/// sign-canonicalized.
pub fn projection_direction(
    scatter: &ScatterSet,
    options: &LdaOptions,
) -> Result<LdaModel, LdaError> {
    let c = &scatter.centroids;
    let diff = &c.successful - &c.unsuccessful;
    if diff.iter().all(|x| *x == 0.0) {
        return Err(LdaError::DegenerateClasses);
    }
    let d = scatter.dimensionality();
    let eps = ridge_for(&scatter.within, options.regularization);
    let regularized = &scatter.within + DMatrix::identity(d, d) * eps;

    let raw = match regularized.clone().cholesky() {
        Some(chol) => chol.solve(&diff),
        None => regularized
            .clone()
            .lu()
            .solve(&diff)
            .ok_or(LdaError::SingularScatter)?,
    };
    let norm = raw.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(LdaError::SingularScatter);
    }
    let mut direction = raw / norm;
    canonicalize_sign(&mut direction);

    let criterion_value = fisher_criterion(&direction, &scatter.between, &regularized);
    Ok(LdaModel {
        direction,
        centroid_successful: c.successful.clone(),
        centroid_unsuccessful: c.unsuccessful.clone(),
        criterion_value,
        regularization_used: eps,
    })
}

/// `J(v) = v'S_b v / v'S_w v`.
pub fn fisher_criterion(v: &DVector<f64>, between: &DMatrix<f64>, within: &DMatrix<f64>) -> f64 {
    let num = v.dot(&(between * v));
    let den = v.dot(&(within * v));
    if den > 0.0 {
        (num / den).max(0.0)
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Nearest-projected-centroid decision shared by locally trained and
/// overlay-combined knowledge. Exact ties go to `Unsuccessful`.
pub fn discriminate(
    direction: &DVector<f64>,
    centroid_successful: &DVector<f64>,
    centroid_unsuccessful: &DVector<f64>,
    p: &[f64],
) -> Result<Discriminant, LdaError> {
    if p.len() != direction.len() {
        return Err(LdaError::DimensionMismatch {
            expected: direction.len(),
            actual: p.len(),
        });
    }
    // Same dot routine for the point and the centroids, so a point on a
    // centroid projects to exactly the same value.
    let projected = direction.dot(&DVector::from_column_slice(p));
    let distance_successful = (projected - direction.dot(centroid_successful)).abs();
    let distance_unsuccessful = (projected - direction.dot(centroid_unsuccessful)).abs();
    let label = if distance_unsuccessful > distance_successful {
        Outcome::Successful
    } else {
        Outcome::Unsuccessful
    };
    Ok(Discriminant {
        distance_successful,
        distance_unsuccessful,
        label,
    })
}

impl LdaModel {
    pub fn dimensionality(&self) -> usize {
        self.direction.len()
    }

    pub fn classify(&self, p: &[f64]) -> Result<Discriminant, LdaError> {
        discriminate(
            &self.direction,
            &self.centroid_successful,
            &self.centroid_unsuccessful,
            p,
        )
    }
}

/// `|D_s - D_u| / (D_s + D_u)`.
pub fn confidence_lda(
    distance_successful: f64,
    distance_unsuccessful: f64,
) -> Result<f64, LdaError> {
    let total = distance_successful + distance_unsuccessful;
    if total == 0.0 {
        return Err(LdaError::UndefinedConfidence);
    }
    Ok(((distance_successful - distance_unsuccessful).abs() / total).clamp(0.0, 1.0))
}

/// Trains on an arbitrary set of completed transactions (e.g. one context of a log).
pub fn train_entries<'a>(
    entries: impl IntoIterator<Item = &'a Transaction>,
    options: &LdaOptions,
) -> Result<LdaModel, LdaError> {
    let mut gs: Vec<&[f64]> = Vec::new();
    let mut gu: Vec<&[f64]> = Vec::new();
    for tx in entries {
        match tx.outcome {
            Some(Outcome::Successful) => gs.push(&tx.features),
            Some(Outcome::Unsuccessful) => gu.push(&tx.features),
            None => {}
        }
    }
    let required = options.min_class_count.max(1);
    if gs.len() < required || gu.len() < required {
        return Err(LdaError::InsufficientKnowledge {
            successful: gs.len(),
            unsuccessful: gu.len(),
            required,
        });
    }
    let scatter = scatter(&gs, &gu)?;
    projection_direction(&scatter, options)
}

/// partition → centroids → scatter → projection direction.
pub fn train(log: &TransactionLog, options: &LdaOptions) -> Result<LdaModel, LdaError> {
    let (gs, gu) = crate::transaction::partition(log)?;
    train_entries(gs.into_iter().chain(gu), options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rows(data: &[Vec<f64>]) -> Vec<&[f64]> {
        data.iter().map(|r| r.as_slice()).collect()
    }

    #[test]
    fn centroids_are_means() {
        let gs = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let gu = vec![vec![4.0, 4.0]];
        let c = centroids(&rows(&gs), &rows(&gu)).unwrap();
        assert_eq!(c.successful.as_slice(), &[1.0, 1.0]);
        assert_eq!(c.unsuccessful.as_slice(), &[4.0, 4.0]);
        assert_eq!(c.global.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn single_entry_groups() {
        let gs = vec![vec![1.5, -2.0]];
        let gu = vec![vec![0.25, 3.0]];
        let c = centroids(&rows(&gs), &rows(&gu)).unwrap();
        assert_eq!(c.successful.as_slice(), gs[0].as_slice());
        assert_eq!(c.unsuccessful.as_slice(), gu[0].as_slice());
        let s = scatter(&rows(&gs), &rows(&gu)).unwrap();
        assert!(s.within.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn empty_group_errors() {
        let gs = vec![vec![1.0]];
        assert_eq!(
            centroids(&rows(&gs), &[]).unwrap_err(),
            LdaError::EmptyGroup
        );
        assert_eq!(scatter(&[], &rows(&gs)).unwrap_err(), LdaError::EmptyGroup);
    }

    #[test]
    fn coincident_centroids_zero_between() {
        let gs = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let gu = vec![vec![1.0, 0.0], vec![1.0, 2.0]];
        let s = scatter(&rows(&gs), &rows(&gu)).unwrap();
        assert!(s.between.iter().all(|x| *x == 0.0));
        assert_eq!(
            projection_direction(&s, &LdaOptions::default()).unwrap_err(),
            LdaError::DegenerateClasses
        );
    }

    #[test]
    fn one_dimensional_direction() {
        // c_s = 2, c_u = 0, S_w = [1]
        let gs = vec![vec![1.0], vec![3.0]];
        let gu = vec![vec![-1.0], vec![1.0]];
        let s = scatter(&rows(&gs), &rows(&gu)).unwrap();
        assert_relative_eq!(s.within[(0, 0)], 1.0);
        let m = projection_direction(&s, &LdaOptions::default()).unwrap();
        assert_eq!(m.direction.as_slice(), &[1.0]);
        assert_eq!(m.regularization_used, 0.0);
    }

    #[test]
    fn identity_scatter_direction() {
        // S_w = I, c_s - c_u = [3, 4] -> v = [0.6, 0.8]
        let gs = vec![
            vec![4.0, 4.0],
            vec![2.0, 4.0],
            vec![3.0, 5.0],
            vec![3.0, 3.0],
        ];
        let gu = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        let s = scatter(&rows(&gs), &rows(&gu)).unwrap();
        assert_relative_eq!(s.within, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-15);
        let m = projection_direction(&s, &LdaOptions::default()).unwrap();
        assert_relative_eq!(m.direction[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(m.direction[1], 0.8, epsilon = 1e-12);
        assert_relative_eq!(m.direction.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_within_is_regularized() {
        // All points identical within each class.
        let gs = vec![vec![1.0, 1.0]; 3];
        let gu = vec![vec![0.0, 2.0]; 3];
        let s = scatter(&rows(&gs), &rows(&gu)).unwrap();
        let m = projection_direction(&s, &LdaOptions::default()).unwrap();
        assert_eq!(m.regularization_used, RIDGE_FLOOR);
        let expected = DVector::from_vec(vec![1.0, -1.0]).normalize();
        assert_relative_eq!(m.direction, expected, epsilon = 1e-12);

        let forced = LdaOptions {
            regularization: Regularization::Fixed(0.0),
            ..LdaOptions::default()
        };
        assert_eq!(
            projection_direction(&s, &forced).unwrap_err(),
            LdaError::SingularScatter
        );
    }

    #[test]
    fn classify_examples() {
        let model = LdaModel {
            direction: DVector::from_vec(vec![1.0]),
            centroid_successful: DVector::from_vec(vec![2.0]),
            centroid_unsuccessful: DVector::from_vec(vec![0.0]),
            criterion_value: 1.0,
            regularization_used: 0.0,
        };
        let r = model.classify(&[1.5]).unwrap();
        assert_relative_eq!(r.distance_successful, 0.5);
        assert_relative_eq!(r.distance_unsuccessful, 1.5);
        assert_eq!(r.label, Outcome::Successful);

        let on = model.classify(&[2.0]).unwrap();
        assert_eq!(on.distance_successful, 0.0);
        assert_eq!(on.label, Outcome::Successful);
        assert_eq!(on.confidence(), 1.0);

        let mid = model.classify(&[1.0]).unwrap();
        assert_eq!(mid.distance_successful, mid.distance_unsuccessful);
        assert_eq!(mid.label, Outcome::Unsuccessful);
        assert_eq!(mid.confidence(), 0.0);

        assert_eq!(
            model.classify(&[1.0, 2.0]).unwrap_err(),
            LdaError::DimensionMismatch {
                expected: 1,
                actual: 2
            }
        );
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence_lda(1.7, 1.7).unwrap(), 0.0);
        assert_eq!(confidence_lda(0.0, 2.0).unwrap(), 1.0);
        assert_eq!(confidence_lda(1.0, 3.0).unwrap(), 0.5);
        assert_eq!(
            confidence_lda(0.0, 0.0).unwrap_err(),
            LdaError::UndefinedConfidence
        );
    }

    fn log_from(points: &[(&[f64], Outcome)]) -> TransactionLog {
        let d = points[0].0.len();
        TransactionLog::from_entries(
            "me".into(),
            d,
            points.iter().enumerate().map(|(i, (f, o))| {
                Transaction::completed(format!("t{i}"), "p", "c", f.to_vec(), *o)
            }),
        )
        .unwrap()
    }

    #[test]
    fn train_fits_separable_log() {
        use Outcome::*;
        let pts: Vec<(&[f64], Outcome)> = vec![
            (&[0.02, -0.01], Successful),
            (&[-0.03, 0.01], Successful),
            (&[0.01, 0.04], Successful),
            (&[1.01, 0.98], Unsuccessful),
            (&[0.97, 1.03], Unsuccessful),
            (&[1.02, 1.01], Unsuccessful),
        ];
        let log = log_from(&pts);
        let model = train(&log, &LdaOptions::default()).unwrap();
        for (f, o) in &pts {
            assert_eq!(model.classify(f).unwrap().label, *o);
        }
        assert!(model.criterion_value >= 0.0);
    }

    #[test]
    fn train_thresholds_and_degenerate() {
        use Outcome::*;
        let a: &[f64] = &[1.0];
        let mut pts = vec![(a, Successful), (a, Successful)];
        pts.extend(std::iter::repeat_n((a, Unsuccessful), 5));
        assert!(matches!(
            train(&log_from(&pts), &LdaOptions::default()),
            Err(LdaError::InsufficientKnowledge {
                successful: 2,
                unsuccessful: 5,
                required: 3
            })
        ));
        pts.push((a, Successful));
        assert_eq!(
            train(&log_from(&pts), &LdaOptions::default()).unwrap_err(),
            LdaError::DegenerateClasses
        );
    }
}
