//! One-compartment PK model with Michaelis–Menten absorption and its
//! Euler–Maruyama discretization.
//!
//! State `Q` is the (unobserved) amount of drug in the GI tract in mg and
//! `C` the plasma concentration in mg/l:
//!
//! ```text
//! Q_k = Q_{k-1} - V_max Q_{k-1} / (K_m + Q_{k-1}) dt + sigma_q dB_k
//! C_k = C_{k-1} + [V_max Q_{k-1} / ((K_m + Q_{k-1}) V) - C_L C_{k-1} / V] dt + sigma_c dW_k
//! ```
//!
//! with `dB_k`, `dW_k` independent `N(0, dt)` increments. Negative state
//! excursions are left alone; the drift only requires `K_m + Q > 0`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// The six model parameters `(V_max, K_m, V, C_L, sigma_q^2, sigma_c^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PkParams {
    /// Maximum reaction rate (mg/min).
    pub v_max: f64,
    /// Michaelis constant (mg).
    pub k_m: f64,
    /// Apparent volume of distribution (l).
    pub v: f64,
    /// Elimination rate (l/min).
    pub c_l: f64,
    /// State diffusion variance.
    pub sigma_q2: f64,
    /// Observation diffusion variance.
    pub sigma_c2: f64,
}

impl PkParams {
    pub const NAMES: [&'static str; 6] = ["v_max", "k_m", "v", "c_l", "sigma_q2", "sigma_c2"];

    /// Validated constructor. The structural parameters must be strictly
    /// positive; the two diffusion variances may be zero, which gives the
    /// deterministic limit of the model.
    pub fn new(
        v_max: f64,
        k_m: f64,
        v: f64,
        c_l: f64,
        sigma_q2: f64,
        sigma_c2: f64,
    ) -> Result<Self> {
        Self::from_array([v_max, k_m, v, c_l, sigma_q2, sigma_c2])
    }

    pub fn from_array(a: [f64; 6]) -> Result<Self> {
        for (i, &x) in a.iter().enumerate() {
            let ok = if i < 4 { x > 0.0 } else { x >= 0.0 };
            if !ok || !x.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {} must be {}, got {x}",
                    Self::NAMES[i],
                    if i < 4 { "positive" } else { "nonnegative" }
                )));
            }
        }
        Ok(Self::from_array_unchecked(a))
    }

    pub fn from_array_unchecked(a: [f64; 6]) -> Self {
        Self {
            v_max: a[0],
            k_m: a[1],
            v: a[2],
            c_l: a[3],
            sigma_q2: a[4],
            sigma_c2: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.v_max,
            self.k_m,
            self.v,
            self.c_l,
            self.sigma_q2,
            self.sigma_c2,
        ]
    }

    /// The reference scenario used throughout the simulation studies.
    pub fn reference() -> Self {
        Self {
            v_max: 1.0,
            k_m: 15.0,
            v: 5.0,
            c_l: 0.05,
            sigma_q2: 0.0002,
            sigma_c2: 0.00003,
        }
    }

    /// Same parameters with both diffusion variances replaced.
    pub fn with_noise(mut self, sigma_q2: f64, sigma_c2: f64) -> Self {
        self.sigma_q2 = sigma_q2;
        self.sigma_c2 = sigma_c2;
        self
    }
}

/// Observation instants `t_1 < ... < t_n` (min); the origin `t_0 = 0` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidArgument(
                "time grid needs at least one point".into(),
            ));
        }
        let mut prev = 0.0;
        for &t in &times {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "time grid must be positive and strictly increasing (got {t} after {prev})"
                )));
            }
            prev = t;
        }
        Ok(Self { times })
    }

    /// The 17 sampling instants of the reference study.
    pub fn reference() -> Self {
        Self {
            times: vec![
                5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0, 60.0, 90.0, 120.0, 150.0, 180.0,
                230.0, 290.0, 340.0, 390.0,
            ],
        }
    }

    /// Number of observation instants `n`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `[0, t_1, ..., t_n]`.
    pub fn with_origin(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.times.iter().copied())
            .collect()
    }

    /// Step widths `t_k - t_{k-1}` for `k = 1..=n`.
    pub fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        let mut prev = 0.0;
        self.times.iter().map(move |&t| {
            let dt = t - prev;
            prev = t;
            dt
        })
    }
}

/// State and observation paths aligned to `[t_0, t_1, ..., t_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub q: Vec<f64>,
    pub c: Vec<f64>,
}

impl Trajectory {
    /// Observations `c_1..c_n`, excluding the initial value.
    pub fn observations(&self) -> &[f64] {
        &self.c[1..]
    }

    /// States `Q_1..Q_n`, excluding the initial value.
    pub fn states(&self) -> &[f64] {
        &self.q[1..]
    }

    /// Writes `t,q,c` rows, one per grid point including `t = 0`.
    pub fn write_csv<W: Write>(&self, grid: &TimeGrid, mut w: W) -> Result<()> {
        writeln!(w, "t,q,c")?;
        for ((t, q), c) in grid.with_origin().iter().zip(&self.q).zip(&self.c) {
            writeln!(w, "{t},{q},{c}")?;
        }
        Ok(())
    }
}

/// Wiener increments for one step; each has mean 0 and variance `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoisePair {
    pub db: f64,
    pub dw: f64,
}

impl NoisePair {
    pub const ZERO: NoisePair = NoisePair { db: 0.0, dw: 0.0 };

    /// Draws `db` then `dw`, each `N(0, dt)`.
    pub fn draw<R: Rng + ?Sized>(dt: f64, rng: &mut R) -> Self {
        let sd = dt.sqrt();
        let db: f64 = rng.sample(StandardNormal);
        let dw: f64 = rng.sample(StandardNormal);
        Self {
            db: sd * db,
            dw: sd * dw,
        }
    }
}

/// Michaelis–Menten absorption rate `-V_max q / (K_m + q)`.
#[inline]
pub fn drift_q(q: f64, p: &PkParams) -> Result<f64> {
    let denom = p.k_m + q;
    if !(denom > 0.0) {
        return Err(Error::Domain(format!(
            "K_m + q must be positive (K_m = {}, q = {q})",
            p.k_m
        )));
    }
    Ok(-p.v_max * q / denom)
}

/// Deterministic part of the concentration update:
/// `c_prev + [V_max q_prev / ((K_m + q_prev) V) - C_L c_prev / V] dt`.
#[inline]
pub fn observation_mean(c_prev: f64, q_prev: f64, dt: f64, p: &PkParams) -> Result<f64> {
    let absorbed = -drift_q(q_prev, p)?;
    Ok(c_prev + (absorbed / p.v - p.c_l * c_prev / p.v) * dt)
}

pub(crate) fn ensure_positive_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "time step must be positive, got {dt}"
        )))
    }
}

/// One Euler–Maruyama step of the coupled system. Both components use the
/// previous state `q_prev`.
pub fn euler_step(
    q_prev: f64,
    c_prev: f64,
    dt: f64,
    p: &PkParams,
    noise: NoisePair,
) -> Result<(f64, f64)> {
    ensure_positive_dt(dt)?;
    let q_next = q_prev + drift_q(q_prev, p)? * dt + p.sigma_q2.sqrt() * noise.db;
    let c_next = observation_mean(c_prev, q_prev, dt, p)? + p.sigma_c2.sqrt() * noise.dw;
    Ok((q_next, c_next))
}

/// Simulates `(Q_k, C_k)` on the grid starting from `(q0, c0)` at `t = 0`.
/// A fresh [`NoisePair`] is drawn per step, so the draw order is
/// `db_1, dw_1, db_2, dw_2, ...`.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    p: &PkParams,
    grid: &TimeGrid,
    q0: f64,
    c0: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    if !(q0 >= 0.0) || !(c0 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "initial conditions must be nonnegative (q0 = {q0}, c0 = {c0})"
        )));
    }
    let n = grid.len();
    let mut q = Vec::with_capacity(n + 1);
    let mut c = Vec::with_capacity(n + 1);
    q.push(q0);
    c.push(c0);
    let (mut qk, mut ck) = (q0, c0);
    for (k, dt) in grid.steps().enumerate() {
        let noise = NoisePair::draw(dt, rng);
        (qk, ck) = euler_step(qk, ck, dt, p, noise).map_err(|e| Error::at_step(k + 1, e))?;
        q.push(qk);
        c.push(ck);
    }
    Ok(Trajectory { q, c })
}
