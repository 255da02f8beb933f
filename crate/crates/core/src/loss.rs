//! Simulation-based absolute-deviation loss.
//!
//! For a candidate `theta` the chosen filter is run over the observations.
//! At each instant `k`, `M` concentrations are simulated from the
//! observation equation with the state replaced by the previous filtered
//! estimate `Q_{k-1|k-1}(theta)`, and the loss accumulates
//! `Σ_j |c_k - c_{j,k}|`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dmf::{dmf_filter_with, DEFAULT_PARTICLES};
use crate::ekf::ekf_filter;
use crate::error::{Error, Result};
use crate::model::{ensure_positive_dt, observation_mean, PkParams, TimeGrid};
use crate::rng::{substream, tag};

pub const DEFAULT_M_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Ekf,
    Dmf,
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterKind::Ekf => "ekf",
            FilterKind::Dmf => "dmf",
        })
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ekf" => Ok(FilterKind::Ekf),
            "dmf" => Ok(FilterKind::Dmf),
            other => Err(Error::Parse(format!(
                "unknown filter kind {other:?} (expected ekf or dmf)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Simulated observations per time point (`M`).
    pub m_replicates: usize,
    pub filter_kind: FilterKind,
    /// Particle count, used by the DMF only.
    pub n_particles: usize,
}

impl LossConfig {
    pub fn new(filter_kind: FilterKind) -> Self {
        Self {
            m_replicates: DEFAULT_M_REPLICATES,
            filter_kind,
            n_particles: DEFAULT_PARTICLES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_replicates == 0 {
            return Err(Error::InvalidArgument(
                "m_replicates must be at least 1".into(),
            ));
        }
        if self.filter_kind == FilterKind::Dmf && self.n_particles == 0 {
            return Err(Error::InvalidArgument(
                "n_particles must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `m` independent draws of `C_k` from the observation equation with the
/// state taken to be `q_filt_prev`.
pub fn simulate_replicates<R: Rng + ?Sized>(
    q_filt_prev: f64,
    c_prev: f64,
    dt: f64,
    p: &PkParams,
    m: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    ensure_positive_dt(dt)?;
    if m == 0 {
        return Err(Error::InvalidArgument(
            "replicate count must be at least 1".into(),
        ));
    }
    let mean = observation_mean(c_prev, q_filt_prev, dt, p)?;
    let sd = (p.sigma_c2 * dt).sqrt();
    Ok((0..m)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            mean + sd * z
        })
        .collect())
}

/// Sum of absolute deviations of `replicates` from `c_obs`.
pub fn rho(c_obs: f64, replicates: &[f64]) -> f64 {
    replicates.iter().map(|c| (c_obs - c).abs()).sum()
}

/// Filtered states `Q_{0|0}, Q_{1|1}, ..., Q_{n|n}` under `theta`.
fn filtered_path<R: Rng + ?Sized>(
    theta: &PkParams,
    obs: &[f64],
    grid: &TimeGrid,
    cfg: &LossConfig,
    q0: f64,
    c0: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut path = Vec::with_capacity(obs.len() + 1);
    path.push(q0);
    match cfg.filter_kind {
        FilterKind::Ekf => path.extend(
            ekf_filter(obs, grid, theta, q0, c0)?
                .iter()
                .map(|s| s.q_filt),
        ),
        FilterKind::Dmf => path.extend(dmf_filter_with(
            obs,
            grid,
            theta,
            q0,
            c0,
            cfg.n_particles,
            rng,
            |_, _| {},
        )?),
    }
    Ok(path)
}

/// The loss `L(theta) = Σ_k rho(c_k, theta)`.
///
/// Failures are wrapped in [`Error::Loss`] carrying `theta`; a non-finite
/// total is reported the same way so that callers only need one rule.
pub fn loss_l<R: Rng + ?Sized>(
    theta: &PkParams,
    obs: &[f64],
    grid: &TimeGrid,
    cfg: &LossConfig,
    q0: f64,
    c0: f64,
    rng: &mut R,
) -> Result<f64> {
    let wrap = |e: Error| Error::Loss {
        theta: theta.to_array(),
        source: Box::new(e),
    };
    cfg.validate().map_err(wrap)?;
    if obs.is_empty() {
        return Err(wrap(Error::InvalidArgument("no observations".into())));
    }
    let path = filtered_path(theta, obs, grid, cfg, q0, c0, rng).map_err(wrap)?;

    let mut total = 0.0;
    let mut c_prev = c0;
    for (k, (dt, &c_k)) in grid.steps().zip(obs).enumerate() {
        let reps = simulate_replicates(path[k], c_prev, dt, theta, cfg.m_replicates, rng)
            .map_err(|e| wrap(Error::at_step(k + 1, e)))?;
        total += rho(c_k, &reps);
        c_prev = c_k;
    }
    if !total.is_finite() {
        return Err(wrap(Error::Domain(format!("loss is not finite ({total})"))));
    }
    Ok(total)
}

/// Collapses a loss result to a fitness value; failures become `+inf`.
pub fn fitness_value(result: Result<f64>) -> f64 {
    match result {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    }
}

/// Something the genetic algorithm can minimize. `eval_id` is unique per
/// evaluation within a run and selects the evaluation's random substream.
pub trait Fitness: Sync {
    fn fitness(&self, theta: &PkParams, eval_id: u64) -> f64;
}

impl<F> Fitness for F
where
    F: Fn(&PkParams, u64) -> f64 + Sync,
{
    fn fitness(&self, theta: &PkParams, eval_id: u64) -> f64 {
        self(theta, eval_id)
    }
}

/// [`loss_l`] bound to one data set. Evaluation `i` draws from substream
/// `(seed, [LOSS, i])`, so results depend only on `(theta, i)`.
#[derive(Debug, Clone)]
pub struct LossEvaluator {
    pub obs: Vec<f64>,
    pub grid: TimeGrid,
    pub cfg: LossConfig,
    pub q0: f64,
    pub c0: f64,
    pub seed: u64,
}

impl LossEvaluator {
    pub fn evaluate(&self, theta: &PkParams, eval_id: u64) -> Result<f64> {
        let mut rng = substream(self.seed, &[tag::LOSS, eval_id]);
        loss_l(
            theta, &self.obs, &self.grid, &self.cfg, self.q0, self.c0, &mut rng,
        )
    }
}

impl Fitness for LossEvaluator {
    fn fitness(&self, theta: &PkParams, eval_id: u64) -> f64 {
        fitness_value(self.evaluate(theta, eval_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rho_examples() {
        assert_eq!(rho(1.0, &[1.0, 1.0]), 0.0);
        assert_abs_diff_eq!(rho(1.0, &[0.9, 1.1, 1.2]), 0.4, epsilon = 1e-12);
        assert_eq!(rho(0.0, &[-0.3]), 0.3);
    }

    #[test]
    fn replicates_collapse_without_observation_noise() {
        let p = PkParams::reference().with_noise(0.0002, 0.0);
        let reps = simulate_replicates(5.0, 0.0, 5.0, &p, 7, &mut substream(1, &[])).unwrap();
        assert_eq!(reps.len(), 7);
        for r in reps {
            assert_abs_diff_eq!(r, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn replicate_arguments_checked() {
        let p = PkParams::reference();
        let mut rng = substream(1, &[]);
        assert!(simulate_replicates(5.0, 0.0, 5.0, &p, 0, &mut rng).is_err());
        assert!(simulate_replicates(5.0, 0.0, 0.0, &p, 3, &mut rng).is_err());
    }

    #[test]
    fn single_step_single_replicate_is_one_deviation() {
        let p = PkParams::reference().with_noise(0.0002, 0.0);
        let grid = TimeGrid::new(vec![5.0]).unwrap();
        let cfg = LossConfig {
            m_replicates: 1,
            filter_kind: FilterKind::Ekf,
            n_particles: 10,
        };
        // with one step only Q_{0|0} = q0 feeds the replicate
        let l = loss_l(&p, &[0.31], &grid, &cfg, 5.0, 0.0, &mut substream(2, &[])).unwrap();
        assert_abs_diff_eq!(l, 0.06, epsilon = 1e-12);
    }

    #[test]
    fn errors_carry_theta() {
        // zero variances make the EKF innovation singular
        let p = PkParams::reference().with_noise(0.0, 0.0);
        let grid = TimeGrid::new(vec![5.0, 10.0]).unwrap();
        let cfg = LossConfig::new(FilterKind::Ekf);
        let err = loss_l(
            &p,
            &[0.25, 0.4],
            &grid,
            &cfg,
            5.0,
            0.0,
            &mut substream(2, &[]),
        )
        .unwrap_err();
        match &err {
            Error::Loss { theta, .. } => assert_eq!(*theta, p.to_array()),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(err.root(), Error::SingularInnovation { .. }));
        assert_eq!(fitness_value(Err(err)), f64::INFINITY);
    }

    #[test]
    fn filter_kind_parsing() {
        assert_eq!("EKF".parse::<FilterKind>().unwrap(), FilterKind::Ekf);
        assert_eq!("dmf".parse::<FilterKind>().unwrap(), FilterKind::Dmf);
        assert!("ukf".parse::<FilterKind>().is_err());
        assert_eq!(FilterKind::Dmf.to_string(), "dmf");
    }

    #[test]
    fn evaluator_is_deterministic_per_eval_id() {
        let p = PkParams::reference();
        let grid = TimeGrid::reference();
        let tr =
            crate::model::simulate_trajectory(&p, &grid, 5.0, 0.0, &mut substream(3, &[])).unwrap();
        let ev = LossEvaluator {
            obs: tr.observations().to_vec(),
            grid,
            cfg: LossConfig {
                m_replicates: 10,
                filter_kind: FilterKind::Dmf,
                n_particles: 100,
            },
            q0: 5.0,
            c0: 0.0,
            seed: 11,
        };
        assert_eq!(ev.fitness(&p, 4), ev.fitness(&p, 4));
        assert_ne!(ev.fitness(&p, 4), ev.fitness(&p, 5));
    }
}
