use rayon::prelude::*;

use super::{ExperimentConfig, QuantileTable};
use crate::dmf::dmf_filter_with;
use crate::ekf::ekf_filter;
use crate::error::{Error, Result};
use crate::ga::{run_ga, GaConfig, GaOutcome};
use crate::loss::{FilterKind, LossConfig, LossEvaluator};
use crate::metrics::{mae, maep, rd};
use crate::model::{simulate_trajectory, PkParams, Trajectory};
use crate::rng::{derive_seed, substream, tag};

/// A replicate dropped from aggregation, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedReplicate {
    pub replicate: usize,
    pub reason: String,
}

/// The simulated data set of replicate `r`. Both filters and both
/// estimation arms see the same data for a given `(seed, r)`.
pub fn replicate_trajectory(cfg: &ExperimentConfig, r: usize) -> Result<Trajectory> {
    let mut rng = substream(cfg.seed, &[tag::SIMULATE, r as u64]);
    simulate_trajectory(&cfg.params_true, &cfg.grid, cfg.q0, cfg.c0, &mut rng)
}

fn partition<T>(results: Vec<Result<T>>) -> (Vec<(usize, T)>, Vec<ExcludedReplicate>) {
    let mut ok = Vec::new();
    let mut excluded = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => ok.push((r, v)),
            Err(e) => excluded.push(ExcludedReplicate {
                replicate: r,
                reason: e.to_string(),
            }),
        }
    }
    (ok, excluded)
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// Rows `DMF`, `EKF` and `RD`.
    pub table: QuantileTable,
    /// Per-replicate MAEs of the retained replicates, paired by index.
    pub mae_dmf: Vec<f64>,
    pub mae_ekf: Vec<f64>,
    pub excluded: Vec<ExcludedReplicate>,
}

fn compare_one(cfg: &ExperimentConfig, r: usize) -> Result<(f64, f64)> {
    let tr = replicate_trajectory(cfg, r)?;
    let obs = tr.observations();
    let p = &cfg.params_true;
    let ekf: Vec<f64> = ekf_filter(obs, &cfg.grid, p, cfg.q0, cfg.c0)
        .map_err(|e| Error::Domain(format!("EKF: {e}")))?
        .iter()
        .map(|s| s.q_filt)
        .collect();
    let mut rng = substream(cfg.seed, &[tag::DMF, r as u64]);
    let dmf = dmf_filter_with(
        obs,
        &cfg.grid,
        p,
        cfg.q0,
        cfg.c0,
        cfg.n_particles,
        &mut rng,
        |_, _| {},
    )
    .map_err(|e| Error::Domain(format!("DMF: {e}")))?;
    Ok((mae(tr.states(), &dmf)?, mae(tr.states(), &ekf)?))
}

/// Simulates `cfg.replicates` data sets under the true parameters, filters
/// each with both filters and tabulates quantiles of the per-replicate MAEs.
/// The `RD` row is computed level by level from the `DMF` and `EKF` rows.
pub fn run_filter_comparison(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let results: Vec<Result<(f64, f64)>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| compare_one(cfg, r))
        .collect();
    let (ok, excluded) = partition(results);
    if ok.is_empty() {
        return Err(Error::Domain(format!(
            "all {} replicates failed; first: {}",
            excluded.len(),
            excluded[0].reason
        )));
    }
    let mae_dmf: Vec<f64> = ok.iter().map(|(_, (d, _))| *d).collect();
    let mae_ekf: Vec<f64> = ok.iter().map(|(_, (_, e))| *e).collect();

    let mut table = QuantileTable::new(cfg.comparison_levels.clone());
    table.push_sample("DMF", &mae_dmf)?;
    table.push_sample("EKF", &mae_ekf)?;
    let rd_row = table.rows[1]
        .1
        .iter()
        .zip(&table.rows[0].1)
        .map(|(&e, &d)| rd(e, d))
        .collect::<Result<Vec<_>>>()?;
    table.push_row("RD", rd_row)?;

    Ok(ComparisonReport {
        table,
        mae_dmf,
        mae_ekf,
        excluded,
    })
}

#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub filter_kind: FilterKind,
    /// One row per parameter, named as in [`PkParams::NAMES`].
    pub table: QuantileTable,
    pub estimates: Vec<PkParams>,
    pub maep: f64,
    /// Generations run and whether the stopping rule fired, per retained replicate.
    pub generations: Vec<(usize, bool)>,
    pub excluded: Vec<ExcludedReplicate>,
}

/// GA settings and loss evaluator for replicate `r` of the estimation study.
pub(crate) fn estimation_setup(
    cfg: &ExperimentConfig,
    kind: FilterKind,
    r: usize,
) -> Result<(GaConfig, LossEvaluator)> {
    let tr = replicate_trajectory(cfg, r)?;
    let ga = GaConfig {
        seed: derive_seed(cfg.seed, &[tag::GA, r as u64]),
        ..cfg.ga.clone()
    };
    let eval = LossEvaluator {
        obs: tr.observations().to_vec(),
        grid: cfg.grid.clone(),
        cfg: LossConfig {
            m_replicates: cfg.m_replicates,
            filter_kind: kind,
            n_particles: cfg.n_particles,
        },
        q0: cfg.q0,
        c0: cfg.c0,
        seed: derive_seed(cfg.seed, &[tag::LOSS, r as u64]),
    };
    Ok((ga, eval))
}

fn estimate_one(cfg: &ExperimentConfig, kind: FilterKind, r: usize) -> Result<GaOutcome> {
    let space = cfg.param_space()?;
    let (ga, eval) = estimation_setup(cfg, kind, r)?;
    run_ga(&space, &ga, &eval)
}

/// Simulates `cfg.replicates` data sets, estimates the parameters of each
/// with the GA under the loss built on `kind`, and tabulates quantiles of
/// every coordinate together with the MAEP against the true parameters.
pub fn run_estimation_study(cfg: &ExperimentConfig, kind: FilterKind) -> Result<EstimationReport> {
    cfg.validate()?;
    cfg.param_space()?;
    let results: Vec<Result<GaOutcome>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| estimate_one(cfg, kind, r))
        .collect();
    let (ok, excluded) = partition(results);
    if ok.is_empty() {
        return Err(Error::OptimizationFailed(format!(
            "all {} replicates failed; first: {}",
            excluded.len(),
            excluded[0].reason
        )));
    }
    let estimates: Vec<PkParams> = ok.iter().map(|(_, o)| o.theta_hat).collect();
    let generations = ok
        .iter()
        .map(|(_, o)| (o.history.len(), o.converged))
        .collect();

    let mut table = QuantileTable::new(cfg.estimation_levels.clone());
    for (j, name) in PkParams::NAMES.iter().enumerate() {
        let col: Vec<f64> = estimates.iter().map(|t| t.to_array()[j]).collect();
        table.push_sample(*name, &col)?;
    }
    let maep = maep(&estimates, &cfg.params_true)?;

    Ok(EstimationReport {
        filter_kind: kind,
        table,
        estimates,
        maep,
        generations,
        excluded,
    })
}
