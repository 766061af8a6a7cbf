//! Parameter sweeps over θ, P_m and models, with repeats per cell.

use std::io;

use rayon::prelude::*;

use super::{run_experiment, Metrics, Model, SimConfig, SimError};

pub const RESULTS_HEADER: &str =
    "model,theta,p_m,seed_group,fp_rate,fp_std,fn_rate,fn_std,overall,overall_std,n_eval";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Everything except θ, P_m, model and seed is taken from here; its
    /// `seed` is the base seed.
    pub base: SimConfig,
    pub thetas: Vec<f64>,
    pub pms: Vec<f64>,
    pub models: Vec<Model>,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub model: Model,
    pub theta: f64,
    pub p_m: f64,
    pub seed_group: u64,
    pub runs: Vec<Metrics>,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl CellResult {
    pub fn false_positive(&self) -> (f64, f64) {
        mean_std(self.runs.iter().map(|m| m.false_positive_rate))
    }

    pub fn false_negative(&self) -> (f64, f64) {
        mean_std(self.runs.iter().map(|m| m.false_negative_rate))
    }

    pub fn overall(&self) -> (f64, f64) {
        mean_std(self.runs.iter().map(|m| m.overall_falseness))
    }

    pub fn evaluated(&self) -> usize {
        self.runs.iter().map(|m| m.evaluated).sum()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one repeat of one cell. θ and the model are deliberately left
/// out so that those comparisons run on identical transactions.
pub fn cell_seed(base: u64, p_m: f64, repeat: usize) -> u64 {
    splitmix(splitmix(splitmix(base) ^ p_m.to_bits()) ^ repeat as u64)
}

/// Runs every (θ, P_m, model) cell `repeats` times, in parallel. Rows come
/// back ordered by θ, then P_m, then model as listed.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<CellResult>, SimError> {
    if spec.thetas.is_empty() || spec.pms.is_empty() || spec.models.is_empty() {
        return Err(SimError::Config(
            "theta, p_m and model lists must be non-empty".into(),
        ));
    }
    if spec.repeats == 0 {
        return Err(SimError::Config("repeats must be positive".into()));
    }
    let mut cells = Vec::new();
    for &theta in &spec.thetas {
        for &p_m in &spec.pms {
            for &model in &spec.models {
                let config = SimConfig {
                    theta,
                    p_malicious: p_m,
                    model,
                    ..spec.base.clone()
                };
                config.validate()?;
                cells.push(config);
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.repeats).map(move |r| (c, r)))
        .collect();
    let runs: Vec<Metrics> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let config = SimConfig {
                seed: cell_seed(spec.base.seed, cells[c].p_malicious, r),
                ..cells[c].clone()
            };
            run_experiment(&config).map(|report| report.metrics)
        })
        .collect::<Result<_, _>>()?;

    Ok(cells
        .iter()
        .zip(runs.chunks(spec.repeats))
        .map(|(config, runs)| CellResult {
            model: config.model,
            theta: config.theta,
            p_m: config.p_malicious,
            seed_group: spec.base.seed,
            runs: runs.to_vec(),
        })
        .collect())
}

pub fn write_results_csv<W: io::Write>(cells: &[CellResult], mut out: W) -> io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for cell in cells {
        let (fp, fp_std) = cell.false_positive();
        let (fneg, fn_std) = cell.false_negative();
        let (overall, overall_std) = cell.overall();
        writeln!(
            out,
            "{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            cell.model,
            cell.theta,
            cell.p_m,
            cell.seed_group,
            fp,
            fp_std,
            fneg,
            fn_std,
            overall,
            overall_std,
            cell.evaluated()
        )?;
    }
    Ok(())
}
