//! Scalar extended Kalman filter for the discretized PK model.
//!
//! Both maps are linearized around the previous filtered mean `Q_{k-1|k-1}`.
//! The observation prediction propagates from the *observed* `c_{k-1}`.

use crate::error::{Error, Result};
use crate::model::{drift_q, ensure_positive_dt, observation_mean, PkParams, TimeGrid};

/// Innovation variances at or below this are treated as singular.
pub const SINGULAR_F: f64 = 1e-300;

/// Filtered mean `Q_{k|k}` and variance `Sigma_{k|k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub q_filt: f64,
    pub sigma_filt: f64,
}

impl EkfState {
    pub fn new(q_filt: f64, sigma_filt: f64) -> Self {
        Self { q_filt, sigma_filt }
    }
}

/// Intermediate quantities of one filter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfStepReport {
    pub q_pred: f64,
    pub sigma_pred: f64,
    pub c_pred: f64,
    /// Innovation variance `F_{k|k-1}`.
    pub f: f64,
    /// Cross covariance `M_{k|k-1}`.
    pub m: f64,
    pub gain: f64,
    /// Observation Jacobian `Z_{k|k-1}`.
    pub z: f64,
    /// State Jacobian `T_{k|k-1}`.
    pub t_lin: f64,
}

/// Linearization coefficients `(Z, T)` at `q_filt_prev`:
///
/// ```text
/// Z = V_max K_m / ((K_m + q)^2 V) dt
/// T = 1 - V_max K_m / (K_m + q)^2 dt
/// ```
pub fn jacobians(q_filt_prev: f64, dt: f64, p: &PkParams) -> Result<(f64, f64)> {
    let denom = p.k_m + q_filt_prev;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Domain(format!(
            "Jacobian undefined at K_m + q = {denom}"
        )));
    }
    let slope = p.v_max * p.k_m / (denom * denom);
    Ok((slope / p.v * dt, 1.0 - slope * dt))
}

/// One prediction/update cycle from `prev` given the previous observed
/// concentration `c_prev` and the new observation `c_obs`.
pub fn ekf_step(
    prev: EkfState,
    c_prev: f64,
    c_obs: f64,
    dt: f64,
    p: &PkParams,
) -> Result<(EkfState, EkfStepReport)> {
    ensure_positive_dt(dt)?;
    if !(prev.sigma_filt >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "filtered variance must be nonnegative, got {}",
            prev.sigma_filt
        )));
    }
    let q = prev.q_filt;
    let (z, t_lin) = jacobians(q, dt, p)?;

    let q_pred = q + drift_q(q, p)? * dt;
    let sigma_pred = t_lin * t_lin * prev.sigma_filt + p.sigma_q2 * dt;
    let c_pred = observation_mean(c_prev, q, dt, p)?;
    let f = z * z * sigma_pred + p.sigma_c2 * dt;
    if !(f > SINGULAR_F) {
        return Err(Error::SingularInnovation { f });
    }
    let m = z * sigma_pred;
    let gain = m / f;
    // Sigma_pred - K^2 F rewritten as Sigma_pred * sigma_c^2 dt / F, which
    // cannot round below zero or above the prediction
    let sigma_filt = sigma_pred * (p.sigma_c2 * dt) / f;
    let q_filt = q_pred + gain * (c_obs - c_pred);

    Ok((
        EkfState { q_filt, sigma_filt },
        EkfStepReport {
            q_pred,
            sigma_pred,
            c_pred,
            f,
            m,
            gain,
            z,
            t_lin,
        },
    ))
}

/// Runs the filter over `obs = c_1..c_n`, seeded with `Q_{0|0} = q0`,
/// `Sigma_{0|0} = 0` and `C_0 = c0`. Returns every step's state and report.
pub fn ekf_filter_with_reports(
    obs: &[f64],
    grid: &TimeGrid,
    p: &PkParams,
    q0: f64,
    c0: f64,
) -> Result<Vec<(EkfState, EkfStepReport)>> {
    if obs.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} observations for a grid of {} points",
            obs.len(),
            grid.len()
        )));
    }
    let mut out = Vec::with_capacity(obs.len());
    let mut state = EkfState::new(q0, 0.0);
    let mut c_prev = c0;
    for (k, (dt, &c_obs)) in grid.steps().zip(obs).enumerate() {
        let (next, report) =
            ekf_step(state, c_prev, c_obs, dt, p).map_err(|e| Error::at_step(k + 1, e))?;
        out.push((next, report));
        state = next;
        c_prev = c_obs;
    }
    Ok(out)
}

/// Filtered states `(Q_{k|k}, Sigma_{k|k})` for `k = 1..=n`.
pub fn ekf_filter(
    obs: &[f64],
    grid: &TimeGrid,
    p: &PkParams,
    q0: f64,
    c0: f64,
) -> Result<Vec<EkfState>> {
    Ok(ekf_filter_with_reports(obs, grid, p, q0, c0)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn jacobian_examples() {
        let p = PkParams::reference();
        let (z, t) = jacobians(5.0, 5.0, &p).unwrap();
        assert_abs_diff_eq!(z, 0.0375, epsilon = 1e-12);
        assert_abs_diff_eq!(t, 0.8125, epsilon = 1e-12);

        assert_eq!(jacobians(5.0, 0.0, &p).unwrap(), (0.0, 1.0));

        let (z, t) = jacobians(1e12, 5.0, &p).unwrap();
        assert!(z.abs() < 1e-20);
        assert_abs_diff_eq!(t, 1.0, epsilon = 1e-20);

        assert!(matches!(jacobians(-15.0, 5.0, &p), Err(Error::Domain(_))));
    }

    // Frozen from a 40-digit evaluation of the recursion, done outside
    // this crate.
    #[test]
    #[allow(clippy::excessive_precision)]
    fn two_step_chain_matches_scripted_oracle() {
        let p = PkParams::reference();
        let (s1, r1) = ekf_step(EkfState::new(5.0, 0.0), 0.0, 0.26, 5.0, &p).unwrap();
        assert_abs_diff_eq!(r1.q_pred, 3.75, epsilon = 1e-12);
        assert_abs_diff_eq!(r1.sigma_pred, 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(r1.c_pred, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(r1.f, 0.000_151_406_25, epsilon = 1e-16);
        assert_abs_diff_eq!(r1.m, 0.000_037_5, epsilon = 1e-16);
        assert_abs_diff_eq!(r1.gain, 0.247_678_018_575_851_39, epsilon = 1e-12);
        assert_abs_diff_eq!(s1.sigma_filt, 0.000_990_712_074_303_405_57, epsilon = 1e-15);
        assert_abs_diff_eq!(s1.q_filt, 3.752_476_780_185_758_5, epsilon = 1e-12);

        let (s2, r2) = ekf_step(s1, 0.26, 0.43, 5.0, &p).unwrap();
        assert_abs_diff_eq!(r2.z, 0.042_655_396_797_931_647, epsilon = 1e-12);
        assert_abs_diff_eq!(r2.t_lin, 0.786_723_016_010_341_77, epsilon = 1e-12);
        assert_abs_diff_eq!(r2.q_pred, 2.751_948_470_199_874_3, epsilon = 1e-12);
        assert_abs_diff_eq!(r2.c_pred, 0.447_105_661_997_176_84, epsilon = 1e-12);
        assert_abs_diff_eq!(r2.gain, 0.449_935_935_045_785_69, epsilon = 1e-10);
        assert_abs_diff_eq!(s2.sigma_filt, 0.001_582_223_946_399_684, epsilon = 1e-14);
        assert_abs_diff_eq!(s2.q_filt, 2.744_252_018_174_597_4, epsilon = 1e-11);
    }

    #[test]
    fn singular_innovation_when_noise_free() {
        let p = PkParams::reference().with_noise(0.0, 0.0);
        let err = ekf_step(EkfState::new(5.0, 0.0), 0.0, 0.25, 5.0, &p).unwrap_err();
        assert!(matches!(err, Error::SingularInnovation { f } if f == 0.0));
    }

    #[test]
    fn zero_innovation_keeps_prediction() {
        let p = PkParams::reference();
        let (s, r) = ekf_step(EkfState::new(5.0, 0.0), 0.0, 0.25, 5.0, &p).unwrap();
        assert_eq!(s.q_filt, r.q_pred);
    }

    #[test]
    fn rejects_negative_prior_variance() {
        let p = PkParams::reference();
        assert!(ekf_step(EkfState::new(5.0, -1.0), 0.0, 0.25, 5.0, &p).is_err());
    }

    #[test]
    fn filter_base_case_and_length_check() {
        let p = PkParams::reference();
        let grid = TimeGrid::new(vec![5.0]).unwrap();
        let states = ekf_filter(&[0.26], &grid, &p, 5.0, 0.0).unwrap();
        let (one, _) = ekf_step(EkfState::new(5.0, 0.0), 0.0, 0.26, 5.0, &p).unwrap();
        assert_eq!(states, vec![one]);
        assert!(ekf_filter(&[0.26, 0.3], &grid, &p, 5.0, 0.0).is_err());
    }

    #[test]
    fn filter_reports_failing_step() {
        let p = PkParams::reference().with_noise(0.0, 0.0);
        let grid = TimeGrid::new(vec![5.0, 10.0]).unwrap();
        match ekf_filter(&[0.25, 0.4], &grid, &p, 5.0, 0.0) {
            Err(Error::FilterStep { step: 1, source }) => {
                assert!(matches!(*source, Error::SingularInnovation { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
