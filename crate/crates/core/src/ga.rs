//! Genetic algorithm for minimizing the simulation-based loss.
//!
//! The initial population of `S` uniform draws is evaluated and its front
//! `max(2, ⌊α S⌋)` is accepted. Each generation then:
//!
//! 1. runs `R` crossovers among the `C` accepted members, picking the first
//!    parent with probability `p_i = (L_{i+1} - L_i) / (L_C - L_1)` and a
//!    partner uniformly from the other members;
//! 2. draws fresh uniform mutants from the parameter box;
//! 3. evaluates the children and mutants and keeps the front
//!    `max(2, ⌊α (C + 2R + mutants)⌋)` of parents, children and mutants
//!    together.
//!
//! Parents keep the fitness they were accepted with, so the best fitness
//! never increases from one generation to the next. The loop stops when the
//! quantile drift `EC` drops to the threshold or the loop cap is reached, and
//! the estimate is the coordinate-wise mean of the final population.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::Fitness;
use crate::metrics::quantile_sorted;
use crate::model::PkParams;
use crate::rng::{substream, tag};

/// Box-shaped parameter space `Θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpace {
    lower: [f64; 6],
    upper: [f64; 6],
}

impl ParamSpace {
    pub fn new(lower: [f64; 6], upper: [f64; 6]) -> Result<Self> {
        for j in 0..6 {
            if !(lower[j] > 0.0 && lower[j] < upper[j] && upper[j].is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "bounds for {} must satisfy 0 < lower < upper (got [{}, {}])",
                    PkParams::NAMES[j],
                    lower[j],
                    upper[j]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[lo_factor * x_j, hi_factor * x_j]` around a reference point.
    pub fn around(center: &PkParams, lo_factor: f64, hi_factor: f64) -> Result<Self> {
        let c = center.to_array();
        Self::new(c.map(|x| x * lo_factor), c.map(|x| x * hi_factor))
    }

    pub fn lower(&self) -> &[f64; 6] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64; 6] {
        &self.upper
    }

    pub fn contains(&self, theta: &PkParams) -> bool {
        theta
            .to_array()
            .iter()
            .enumerate()
            .all(|(j, &x)| x >= self.lower[j] && x <= self.upper[j])
    }

    /// Uniform draw from the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PkParams {
        let mut a = [0.0; 6];
        for (j, x) in a.iter_mut().enumerate() {
            let u: f64 = rng.random();
            *x = (self.lower[j] + u * (self.upper[j] - self.lower[j])).min(self.upper[j]);
        }
        PkParams::from_array_unchecked(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    /// Initial population size `S`.
    pub pop_size: usize,
    /// Selection proportion `α`.
    pub alpha: f64,
    pub temperature: f64,
    /// Crossover runs per generation; `None` means the selected count `C`.
    pub crossover_runs: Option<usize>,
    /// Mutants per generation; `None` means `pop_size`.
    pub mutation_count: Option<usize>,
    /// Probability levels for the stopping metric.
    pub ec_quantiles: Vec<f64>,
    pub ec_threshold: f64,
    pub max_loops: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            pop_size: 100,
            alpha: 0.05,
            temperature: 0.75,
            crossover_runs: None,
            mutation_count: None,
            ec_quantiles: vec![0.2, 0.4, 0.5, 0.6, 0.8],
            ec_threshold: 1e-5,
            max_loops: 100,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.pop_size < 2 {
            return bad(format!(
                "pop_size must be at least 2, got {}",
                self.pop_size
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.ec_quantiles.is_empty()
            || self.ec_quantiles.iter().any(|&a| !(a > 0.0 && a < 1.0))
            || self.ec_quantiles.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!(
                "ec_quantiles must be strictly increasing in (0, 1), got {:?}",
                self.ec_quantiles
            ));
        }
        if self.max_loops == 0 {
            return bad("max_loops must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub theta: PkParams,
    pub fitness: f64,
}

/// Members sorted by ascending fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    members: Vec<Member>,
}

impl Population {
    pub fn from_unsorted(mut members: Vec<Member>) -> Self {
        members.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
        Self { members }
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn best(&self) -> Option<&Member> {
        self.members.first()
    }

    /// Coordinate-wise mean of the members.
    pub fn mean_theta(&self) -> Option<PkParams> {
        if self.members.is_empty() {
            return None;
        }
        let mut acc = [0.0; 6];
        for m in &self.members {
            for (a, x) in acc.iter_mut().zip(m.theta.to_array()) {
                *a += x;
            }
        }
        let n = self.members.len() as f64;
        Some(PkParams::from_array_unchecked(acc.map(|a| a / n)))
    }

    pub fn mean_fitness(&self) -> f64 {
        self.members.iter().map(|m| m.fitness).sum::<f64>() / self.members.len() as f64
    }

    /// Sorted values of coordinate `j` across members.
    fn coordinate_sorted(&self, j: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self.members.iter().map(|m| m.theta.to_array()[j]).collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// `max(2, ⌊alpha * n⌋)`, never more than `n`.
pub fn front_size(alpha: f64, n: usize) -> usize {
    // tolerance keeps e.g. 0.05 * 100 from flooring to 4
    let k = (alpha * n as f64 + 1e-9).floor() as usize;
    k.max(2).min(n)
}

/// `s` uniform draws from the parameter space.
pub fn init_population<R: Rng + ?Sized>(
    space: &ParamSpace,
    s: usize,
    rng: &mut R,
) -> Result<Vec<PkParams>> {
    if s < 2 {
        return Err(Error::InvalidArgument(format!(
            "population size must be at least 2, got {s}"
        )));
    }
    Ok((0..s).map(|_| space.sample(rng)).collect())
}

/// First-parent probabilities `p_i = (L_{i+1} - L_i) / (L_C - L_1)` for
/// `i = 1..C-1`. A flat fitness profile gives uniform probabilities.
pub fn crossover_probs(losses: &[f64]) -> Result<Vec<f64>> {
    let c = losses.len();
    if c < 2 {
        return Err(Error::InvalidArgument(format!(
            "crossover needs at least two members, got {c}"
        )));
    }
    if losses.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidArgument(
            "losses must be finite and ascending".into(),
        ));
    }
    let span = losses[c - 1] - losses[0];
    if !span.is_finite() {
        return Err(Error::InvalidArgument("losses must be finite".into()));
    }
    if span == 0.0 {
        return Ok(vec![1.0 / (c - 1) as f64; c - 1]);
    }
    Ok(losses.windows(2).map(|w| (w[1] - w[0]) / span).collect())
}

/// Two children `θ_i ± (θ_i - θ_j) · weight · temperature` with
/// `weight = L_i / (L_i + L_j)`. A coordinate that leaves the box is
/// replaced by `(3 θ_i + bound) / 4` using the violated bound.
pub fn crossover_pair(
    theta_i: &PkParams,
    theta_j: &PkParams,
    l_i: f64,
    l_j: f64,
    temperature: f64,
    space: &ParamSpace,
) -> (PkParams, PkParams) {
    let sum = l_i + l_j;
    let weight = if sum == 0.0 { 0.5 } else { l_i / sum };
    let a = theta_i.to_array();
    let b = theta_j.to_array();
    let mut plus = [0.0; 6];
    let mut minus = [0.0; 6];
    for k in 0..6 {
        let step = (a[k] - b[k]) * weight * temperature;
        plus[k] = clamp_coordinate(a[k] + step, a[k], space.lower[k], space.upper[k]);
        minus[k] = clamp_coordinate(a[k] - step, a[k], space.lower[k], space.upper[k]);
    }
    (
        PkParams::from_array_unchecked(plus),
        PkParams::from_array_unchecked(minus),
    )
}

fn clamp_coordinate(x: f64, parent: f64, lower: f64, upper: f64) -> f64 {
    if x > upper {
        (3.0 * parent + upper) / 4.0
    } else if x < lower {
        (3.0 * parent + lower) / 4.0
    } else {
        x
    }
}

/// `count` uniform draws from the box.
pub fn mutate<R: Rng + ?Sized>(space: &ParamSpace, count: usize, rng: &mut R) -> Vec<PkParams> {
    (0..count).map(|_| space.sample(rng)).collect()
}

/// Sorts the candidates and keeps the front `max(2, ⌊α n⌋)`. Members with
/// non-finite fitness are dropped from the kept front.
pub fn accept(candidates: Vec<Member>, alpha: f64) -> Population {
    let n = candidates.len();
    let mut pop = Population::from_unsorted(candidates);
    pop.members.truncate(front_size(alpha, n));
    pop.members.retain(|m| m.fitness.is_finite());
    pop
}

/// Quantile drift between consecutive populations:
///
/// ```text
/// EC = (1/a) Σ_{j=1..6} Σ_{k=1..a} |(θ^i_{α_k,j} - θ^{i+1}_{α_k,j}) / θ^i_{α_k,j}|
/// ```
pub fn ec_metric(prev: &Population, next: &Population, quantiles: &[f64]) -> Result<f64> {
    if prev.is_empty() || next.is_empty() {
        return Err(Error::InvalidArgument(
            "EC needs two nonempty populations".into(),
        ));
    }
    if quantiles.is_empty() {
        return Err(Error::InvalidArgument(
            "EC needs at least one quantile level".into(),
        ));
    }
    let mut total = 0.0;
    for j in 0..6 {
        let a = prev.coordinate_sorted(j);
        let b = next.coordinate_sorted(j);
        for &level in quantiles {
            let qa = quantile_sorted(&a, level);
            let qb = quantile_sorted(&b, level);
            if qa == 0.0 {
                return Err(Error::UndefinedEc { coord: j, level });
            }
            total += ((qa - qb) / qa).abs();
        }
    }
    Ok(total / quantiles.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub ec: f64,
    pub population_size: usize,
    pub best_theta: PkParams,
}

pub const HISTORY_CSV_HEADER: &str = "generation,best_fitness,mean_fitness,ec,population_size";

pub fn write_history_csv<W: Write>(history: &[GenerationRecord], mut w: W) -> Result<()> {
    writeln!(w, "{HISTORY_CSV_HEADER}")?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.generation, r.best_fitness, r.mean_fitness, r.ec, r.population_size
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    /// Coordinate-wise mean of the final population.
    pub theta_hat: PkParams,
    pub best: Member,
    pub history: Vec<GenerationRecord>,
    pub converged: bool,
    pub evaluations: u64,
    pub final_population: Population,
}

fn evaluate_all<F: Fitness + ?Sized>(
    thetas: Vec<PkParams>,
    fitness: &F,
    next_id: &mut u64,
) -> Vec<Member> {
    let first = *next_id;
    *next_id += thetas.len() as u64;
    thetas
        .into_par_iter()
        .enumerate()
        .map(|(i, theta)| Member {
            theta,
            fitness: fitness.fitness(&theta, first + i as u64),
        })
        .collect()
}

/// Index drawn from a discrete distribution.
fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum; take the last nonzero entry
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Children produced by `runs` crossovers among the selected members.
fn crossover_round<R: Rng + ?Sized>(
    selected: &[Member],
    runs: usize,
    temperature: f64,
    space: &ParamSpace,
    rng: &mut R,
) -> Result<Vec<PkParams>> {
    if selected.len() < 2 {
        return Ok(Vec::new());
    }
    let losses: Vec<f64> = selected.iter().map(|m| m.fitness).collect();
    let probs = crossover_probs(&losses)?;
    let mut children = Vec::with_capacity(2 * runs);
    for _ in 0..runs {
        let i = draw_index(&probs, rng);
        let mut j = rng.random_range(0..selected.len() - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = if selected[i].fitness <= selected[j].fitness {
            (&selected[i], &selected[j])
        } else {
            (&selected[j], &selected[i])
        };
        let (plus, minus) =
            crossover_pair(&a.theta, &b.theta, a.fitness, b.fitness, temperature, space);
        children.push(plus);
        children.push(minus);
    }
    Ok(children)
}

/// Runs the genetic algorithm to completion.
pub fn run_ga<F: Fitness + ?Sized>(
    space: &ParamSpace,
    cfg: &GaConfig,
    fitness: &F,
) -> Result<GaOutcome> {
    cfg.validate()?;
    let mut rng = substream(cfg.seed, &[tag::GA]);
    let mut next_id = 0u64;
    let mutants_per_gen = cfg.mutation_count.unwrap_or(cfg.pop_size);

    let initial = init_population(space, cfg.pop_size, &mut rng)?;
    let initial = evaluate_all(initial, fitness, &mut next_id);
    let mut pop = accept(initial, cfg.alpha);
    if pop.is_empty() {
        return Err(Error::OptimizationFailed(
            "every member of the initial population has infinite loss".into(),
        ));
    }

    let mut history = Vec::new();
    let mut converged = false;
    for generation in 1..=cfg.max_loops {
        let selected = &pop.members[..];
        let runs = cfg.crossover_runs.unwrap_or(selected.len());

        let mut fresh = crossover_round(selected, runs, cfg.temperature, space, &mut rng)?;
        fresh.extend(mutate(space, mutants_per_gen, &mut rng));

        let mut candidates = selected.to_vec();
        candidates.extend(evaluate_all(fresh, fitness, &mut next_id));
        let next = accept(candidates, cfg.alpha);
        if next.is_empty() {
            return Err(Error::OptimizationFailed(format!(
                "no candidate with finite loss in generation {generation}"
            )));
        }

        let ec = ec_metric(&pop, &next, &cfg.ec_quantiles)?;
        let best = next.members[0];
        history.push(GenerationRecord {
            generation,
            best_fitness: best.fitness,
            mean_fitness: next.mean_fitness(),
            ec,
            population_size: next.len(),
            best_theta: best.theta,
        });
        pop = next;
        if ec <= cfg.ec_threshold {
            converged = true;
            break;
        }
    }

    Ok(GaOutcome {
        theta_hat: pop.mean_theta().expect("population is nonempty"),
        best: pop.members[0],
        history,
        converged,
        evaluations: next_id,
        final_population: pop,
    })
}
