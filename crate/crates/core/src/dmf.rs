//! Density-based Monte Carlo filter.
//!
//! `N` particle paths are simulated straight through the state equation.
//! Each path carries a weight that is updated multiplicatively by the
//! Gaussian density of the new observation given the path's *previous*
//! state, then renormalized:
//!
//! ```text
//! w_{j,k} ∝ p(c_k | c_{k-1}, Q_{j,k-1}) w_{j,k-1},    Q_{k|k} = Σ_j Q_{j,k} w_{j,k}
//! ```
//!
//! There is no resampling step. Weight degeneracy can be monitored with
//! [`ParticleEnsemble::effective_sample_size`] but is never acted upon.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{drift_q, ensure_positive_dt, observation_mean, PkParams, TimeGrid};

/// Default particle count.
pub const DEFAULT_PARTICLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    /// Current particle states `Q_{j,k}`.
    pub particles: Vec<f64>,
    /// Normalized weights `w_{j,k}`.
    pub weights: Vec<f64>,
    /// States `Q_{j,k-1}` before the most recent propagation.
    pub prev_particles: Vec<f64>,
    /// Number of propagations applied so far (`k`).
    pub step: usize,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// `1 / Σ w_j²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Weighted variance of the particles around [`filtered_estimate`].
    pub fn weighted_variance(&self) -> f64 {
        let mean = filtered_estimate(self);
        self.particles
            .iter()
            .zip(&self.weights)
            .map(|(q, w)| w * (q - mean) * (q - mean))
            .sum()
    }

    /// Appends `step,particle_index,q,weight` rows (no header).
    pub fn write_csv_rows<W: Write>(&self, mut w: W) -> Result<()> {
        for (j, (q, wt)) in self.particles.iter().zip(&self.weights).enumerate() {
            writeln!(w, "{},{j},{q},{wt}", self.step)?;
        }
        Ok(())
    }
}

pub const ENSEMBLE_CSV_HEADER: &str = "step,particle_index,q,weight";

/// `n_particles` copies of `q0` with uniform weights.
pub fn init_ensemble(n_particles: usize, q0: f64) -> Result<ParticleEnsemble> {
    if n_particles == 0 {
        return Err(Error::InvalidArgument(
            "particle count must be at least 1".into(),
        ));
    }
    Ok(ParticleEnsemble {
        particles: vec![q0; n_particles],
        weights: vec![1.0 / n_particles as f64; n_particles],
        prev_particles: vec![q0; n_particles],
        step: 0,
    })
}

/// Advances every particle by one Euler step of the state equation with its
/// own `N(0, dt)` increment; weights are carried over unchanged.
pub fn propagate<R: Rng + ?Sized>(
    e: ParticleEnsemble,
    dt: f64,
    p: &PkParams,
    rng: &mut R,
) -> Result<ParticleEnsemble> {
    ensure_positive_dt(dt)?;
    let scale = (p.sigma_q2 * dt).sqrt();
    let ParticleEnsemble {
        particles,
        weights,
        mut prev_particles,
        step,
    } = e;
    prev_particles.clear();
    prev_particles.extend_from_slice(&particles);
    let mut next = particles;
    for q in next.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *q = *q + drift_q(*q, p)? * dt + scale * z;
    }
    Ok(ParticleEnsemble {
        particles: next,
        weights,
        prev_particles,
        step: step + 1,
    })
}

/// Log of [`obs_density`].
pub fn log_obs_density(c_k: f64, c_prev: f64, q_prev: f64, dt: f64, p: &PkParams) -> Result<f64> {
    ensure_positive_dt(dt)?;
    if !(p.sigma_c2 > 0.0) {
        return Err(Error::Domain(format!(
            "observation variance must be positive, got {}",
            p.sigma_c2
        )));
    }
    let var = p.sigma_c2 * dt;
    let mean = observation_mean(c_prev, q_prev, dt, p)?;
    let r = c_k - mean;
    Ok(-0.5 * (2.0 * PI * var).ln() - r * r / (2.0 * var))
}

/// Gaussian density of `c_k` with mean `m_k` (the deterministic
/// concentration update from `(c_prev, q_prev)`) and variance `sigma_c^2 dt`.
pub fn obs_density(c_k: f64, c_prev: f64, q_prev: f64, dt: f64, p: &PkParams) -> Result<f64> {
    log_obs_density(c_k, c_prev, q_prev, dt, p).map(f64::exp)
}

/// Multiplies `weights` by `exp(log_likelihoods)` and renormalizes, working
/// in log space with max subtraction. Returns `None` when no weight survives.
pub fn reweight(weights: &[f64], log_likelihoods: &[f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(weights.len(), log_likelihoods.len());
    let log_post: Vec<f64> = weights
        .iter()
        .zip(log_likelihoods)
        .map(|(w, l)| w.ln() + l)
        .collect();
    let max = log_post
        .iter()
        .copied()
        .filter(|x| !x.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut out: Vec<f64> = log_post
        .iter()
        .map(|&x| if x.is_nan() { 0.0 } else { (x - max).exp() })
        .collect();
    let total: f64 = out.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    out.iter_mut().for_each(|w| *w /= total);
    Some(out)
}

/// Reweights the ensemble by the density of `c_k` evaluated at each
/// particle's pre-propagation state.
pub fn update_weights(
    e: ParticleEnsemble,
    c_prev: f64,
    c_k: f64,
    dt: f64,
    p: &PkParams,
) -> Result<ParticleEnsemble> {
    let loglik = e
        .prev_particles
        .iter()
        .map(|&q| log_obs_density(c_k, c_prev, q, dt, p))
        .collect::<Result<Vec<_>>>()?;
    let weights =
        reweight(&e.weights, &loglik).ok_or(Error::DegenerateLikelihood { step: e.step })?;
    Ok(ParticleEnsemble { weights, ..e })
}

/// Weighted mean `Σ_j Q_{j,k} w_{j,k}`.
pub fn filtered_estimate(e: &ParticleEnsemble) -> f64 {
    e.particles.iter().zip(&e.weights).map(|(q, w)| q * w).sum()
}

/// Runs the filter and calls `on_step(&ensemble, estimate)` after every
/// update. Returns the estimates `Q_{k|k}` for `k = 1..=n`.
#[allow(clippy::too_many_arguments)]
pub fn dmf_filter_with<R, F>(
    obs: &[f64],
    grid: &TimeGrid,
    p: &PkParams,
    q0: f64,
    c0: f64,
    n_particles: usize,
    rng: &mut R,
    mut on_step: F,
) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&ParticleEnsemble, f64),
{
    if obs.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} observations for a grid of {} points",
            obs.len(),
            grid.len()
        )));
    }
    let mut ens = init_ensemble(n_particles, q0)?;
    let mut c_prev = c0;
    let mut estimates = Vec::with_capacity(obs.len());
    for (k, (dt, &c_k)) in grid.steps().zip(obs).enumerate() {
        let step = k + 1;
        ens = propagate(ens, dt, p, rng).map_err(|e| Error::at_step(step, e))?;
        ens = update_weights(ens, c_prev, c_k, dt, p).map_err(|e| match e {
            Error::DegenerateLikelihood { .. } => e,
            other => Error::at_step(step, other),
        })?;
        let est = filtered_estimate(&ens);
        on_step(&ens, est);
        estimates.push(est);
        c_prev = c_k;
    }
    Ok(estimates)
}

/// Estimates together with a snapshot of the ensemble after every step.
pub fn dmf_filter<R: Rng + ?Sized>(
    obs: &[f64],
    grid: &TimeGrid,
    p: &PkParams,
    q0: f64,
    c0: f64,
    n_particles: usize,
    rng: &mut R,
) -> Result<Vec<(f64, ParticleEnsemble)>> {
    let mut snaps = Vec::with_capacity(obs.len());
    dmf_filter_with(obs, grid, p, q0, c0, n_particles, rng, |e, est| {
        snaps.push((est, e.clone()))
    })?;
    Ok(snaps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn init_examples() {
        let e = init_ensemble(4, 5.0).unwrap();
        assert_eq!(e.particles, vec![5.0; 4]);
        assert_eq!(e.weights, vec![0.25; 4]);
        assert_eq!(init_ensemble(1, 0.0).unwrap().weights, vec![1.0]);
        let s: f64 = init_ensemble(1000, 5.0).unwrap().weights.iter().sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        assert!(init_ensemble(0, 5.0).is_err());
    }

    #[test]
    fn propagate_noise_free() {
        let p = PkParams::reference().with_noise(0.0, 0.00003);
        let e = init_ensemble(8, 5.0).unwrap();
        let e = propagate(e, 5.0, &p, &mut substream(1, &[])).unwrap();
        for &q in &e.particles {
            assert_abs_diff_eq!(q, 3.75, epsilon = 1e-12);
        }
        assert_eq!(e.prev_particles, vec![5.0; 8]);
        assert_eq!(e.weights, vec![0.125; 8]);
        assert_eq!(e.step, 1);
    }

    #[test]
    fn propagate_rejects_zero_dt_and_is_deterministic() {
        let p = PkParams::reference();
        let e = init_ensemble(8, 5.0).unwrap();
        assert!(propagate(e.clone(), 0.0, &p, &mut substream(1, &[])).is_err());
        let a = propagate(e.clone(), 5.0, &p, &mut substream(3, &[])).unwrap();
        let b = propagate(e, 5.0, &p, &mut substream(3, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn density_examples() {
        let p = PkParams::reference();
        let peak = obs_density(0.25, 0.0, 5.0, 5.0, &p).unwrap();
        assert_abs_diff_eq!(
            peak,
            1.0 / ((2.0 * PI).sqrt() * 0.00015f64.sqrt()),
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(peak, 32.573_500_793_528, epsilon = 1e-8);

        let sd = 0.00015f64.sqrt();
        let one_sigma = obs_density(0.25 + sd, 0.0, 5.0, 5.0, &p).unwrap();
        assert_abs_diff_eq!(one_sigma, peak * (-0.5f64).exp(), epsilon = 1e-10);

        let bad = p.with_noise(0.0002, 0.0);
        assert!(matches!(
            obs_density(0.25, 0.0, 5.0, 5.0, &bad),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn reweight_hand_normalization() {
        let w = reweight(&[0.5, 0.5], &[3f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.25, epsilon = 1e-15);
        assert_eq!(reweight(&[1.0], &[-1e6]).unwrap(), vec![1.0]);
        assert!(reweight(&[0.5, 0.5], &[f64::NEG_INFINITY; 2]).is_none());
    }

    #[test]
    fn reweight_survives_extreme_log_likelihoods() {
        // raw densities would all underflow to zero
        let w = reweight(&[0.5, 0.5], &[-5000.0, -5001.0]).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(w[0], e / (e + 1.0), epsilon = 1e-12);
    }

    #[test]
    fn identical_particles_keep_uniform_weights() {
        let p = PkParams::reference();
        let e = propagate(
            init_ensemble(5, 5.0).unwrap(),
            5.0,
            &p,
            &mut substream(2, &[]),
        )
        .unwrap();
        let e = update_weights(e, 0.0, 0.27, 5.0, &p).unwrap();
        for &w in &e.weights {
            assert_abs_diff_eq!(w, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn degenerate_likelihood_names_step() {
        let p = PkParams::reference();
        let mut e = init_ensemble(3, 5.0).unwrap();
        e.weights = vec![0.0; 3];
        e.step = 4;
        assert!(matches!(
            update_weights(e, 0.0, 0.25, 5.0, &p),
            Err(Error::DegenerateLikelihood { step: 4 })
        ));
    }

    #[test]
    fn estimate_examples() {
        let mut e = init_ensemble(2, 0.0).unwrap();
        e.particles = vec![2.0, 4.0];
        assert_abs_diff_eq!(filtered_estimate(&e), 3.0, epsilon = 1e-15);
        e.weights = vec![0.75, 0.25];
        assert_abs_diff_eq!(filtered_estimate(&e), 2.5, epsilon = 1e-15);
        e.particles = vec![7.0, 7.0];
        assert_abs_diff_eq!(filtered_estimate(&e), 7.0, epsilon = 1e-15);
    }

    #[test]
    fn filter_base_case() {
        let p = PkParams::reference();
        let grid = TimeGrid::new(vec![5.0]).unwrap();
        let run = dmf_filter(&[0.26], &grid, &p, 5.0, 0.0, 50, &mut substream(7, &[])).unwrap();
        let mut rng = substream(7, &[]);
        let e = propagate(init_ensemble(50, 5.0).unwrap(), 5.0, &p, &mut rng).unwrap();
        let e = update_weights(e, 0.0, 0.26, 5.0, &p).unwrap();
        assert_eq!(run.len(), 1);
        assert_eq!(run[0].0, filtered_estimate(&e));
        assert_eq!(run[0].1, e);
    }

    #[test]
    fn ensemble_dump_rows() {
        let mut e = init_ensemble(2, 1.5).unwrap();
        e.step = 3;
        let mut buf = Vec::new();
        e.write_csv_rows(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "3,0,1.5,0.5\n3,1,1.5,0.5\n"
        );
    }
}
