use std::fmt::Write as _;
use std::path::Path;

use crate::dmf::DEFAULT_PARTICLES;
use crate::error::{Error, Result};
use crate::ga::{GaConfig, ParamSpace};
use crate::loss::{FilterKind, DEFAULT_M_REPLICATES};
use crate::model::{PkParams, TimeGrid};

/// Quantile levels of the filter-comparison table.
pub const COMPARISON_LEVELS: [f64; 8] = [0.05, 0.3, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

/// Quantile levels of the parameter-estimation table.
pub const ESTIMATION_LEVELS: [f64; 11] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

/// Population size `S` of the estimation study. With a decade-wide search
/// box and a noisy loss, smaller populations leave the DMF-based estimator
/// dominated by uniform mutants.
pub const EXPERIMENT_POP_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params_true: PkParams,
    pub grid: TimeGrid,
    pub q0: f64,
    pub c0: f64,
    pub replicates: usize,
    pub n_particles: usize,
    pub m_replicates: usize,
    pub filter_kind: FilterKind,
    /// GA settings; the seed field is overwritten per replicate.
    pub ga: GaConfig,
    /// Search box; `None` means a decade either side of `params_true`.
    pub space: Option<ParamSpace>,
    pub seed: u64,
    pub comparison_levels: Vec<f64>,
    pub estimation_levels: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            params_true: PkParams::reference(),
            grid: TimeGrid::reference(),
            q0: 5.0,
            c0: 0.0,
            replicates: 200,
            n_particles: DEFAULT_PARTICLES,
            m_replicates: DEFAULT_M_REPLICATES,
            filter_kind: FilterKind::Dmf,
            ga: GaConfig {
                pop_size: EXPERIMENT_POP_SIZE,
                ..GaConfig::default()
            },
            space: None,
            seed: 42,
            comparison_levels: COMPARISON_LEVELS.to_vec(),
            estimation_levels: ESTIMATION_LEVELS.to_vec(),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: expected a number, got {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: expected a count, got {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

fn check_levels(key: &str, levels: &[f64]) -> Result<()> {
    let ok = !levels.is_empty()
        && levels.iter().all(|&l| l > 0.0 && l < 1.0)
        && levels.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{key}: levels must be strictly increasing in (0, 1)"
        )))
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses six comma-separated values in the order
/// `v_max,k_m,v,c_l,sigma_q2,sigma_c2`.
pub fn parse_params(s: &str) -> Result<PkParams> {
    let v = parse_list("params", s)?;
    let a: [f64; 6] = v.try_into().map_err(|v: Vec<f64>| {
        Error::Parse(format!("params: expected 6 values, got {}", v.len()))
    })?;
    PkParams::from_array(a)
}

/// Parses a bounds file: one line per parameter, `name lower upper`, with
/// fields separated by commas or whitespace. `#` starts a comment.
pub fn parse_bounds(text: &str) -> Result<ParamSpace> {
    let mut lower = [f64::NAN; 6];
    let mut upper = [f64::NAN; 6];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let [name, lo, hi] = fields[..] else {
            return Err(Error::Parse(format!(
                "bounds line {}: expected `name lower upper`",
                lineno + 1
            )));
        };
        let j = PkParams::NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                Error::Parse(format!(
                    "bounds line {}: unknown parameter {name:?}",
                    lineno + 1
                ))
            })?;
        lower[j] = parse_f64(name, lo)?;
        upper[j] = parse_f64(name, hi)?;
    }
    if let Some(j) = lower.iter().position(|x| x.is_nan()) {
        return Err(Error::Parse(format!(
            "bounds: missing {}",
            PkParams::NAMES[j]
        )));
    }
    ParamSpace::new(lower, upper)
}

impl ExperimentConfig {
    /// Sets one option by its key-value name. Keys match the long CLI flags.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let k = key.as_str();
        match k {
            "params" => self.params_true = parse_params(value)?,
            "times" => self.grid = TimeGrid::new(parse_list(k, value)?)?,
            "q0" => self.q0 = parse_f64(k, value)?,
            "c0" => self.c0 = parse_f64(k, value)?,
            "replicates" => self.replicates = parse_usize(k, value)?,
            "particles" => self.n_particles = parse_usize(k, value)?,
            "m-replicates" => self.m_replicates = parse_usize(k, value)?,
            "filter" => self.filter_kind = value.parse()?,
            "seed" => {
                self.seed = value.trim().parse().map_err(|_| {
                    Error::Parse(format!("seed: expected an integer, got {value:?}"))
                })?
            }
            "temperature" => self.ga.temperature = parse_f64(k, value)?,
            "alpha" => self.ga.alpha = parse_f64(k, value)?,
            "max-loops" => self.ga.max_loops = parse_usize(k, value)?,
            "pop-size" => self.ga.pop_size = parse_usize(k, value)?,
            "crossover-runs" => self.ga.crossover_runs = Some(parse_usize(k, value)?),
            "mutation-count" => self.ga.mutation_count = Some(parse_usize(k, value)?),
            "ec-threshold" => self.ga.ec_threshold = parse_f64(k, value)?,
            "ec-quantiles" => self.ga.ec_quantiles = parse_list(k, value)?,
            "bounds-file" => {
                let text = std::fs::read_to_string(Path::new(value.trim()))?;
                self.space = Some(parse_bounds(&text)?);
            }
            "compare-levels" => {
                let l = parse_list(k, value)?;
                check_levels(k, &l)?;
                self.comparison_levels = l;
            }
            "estimate-levels" => {
                let l = parse_list(k, value)?;
                check_levels(k, &l)?;
                self.estimation_levels = l;
            }
            _ => return Err(Error::Parse(format!("unknown option {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file. Blank lines and
    /// `#` comments are skipped; `key: value` is accepted too.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_key_values(text)? {
            self.apply(&key, &value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument(
                "replicates must be at least 1".into(),
            ));
        }
        if self.n_particles == 0 || self.m_replicates == 0 {
            return Err(Error::InvalidArgument(
                "particles and m-replicates must be at least 1".into(),
            ));
        }
        if !(self.q0 >= 0.0 && self.c0 >= 0.0) {
            return Err(Error::InvalidArgument(
                "q0 and c0 must be nonnegative".into(),
            ));
        }
        check_levels("compare-levels", &self.comparison_levels)?;
        check_levels("estimate-levels", &self.estimation_levels)?;
        self.ga.validate()
    }

    pub fn param_space(&self) -> Result<ParamSpace> {
        match self.space {
            Some(s) => Ok(s),
            None => ParamSpace::around(&self.params_true, 0.1, 10.0),
        }
    }

    /// One-line `key=value` rendering of every setting, used as the header
    /// comment of output files.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "seed={} replicates={} particles={} m-replicates={} filter={} params={} q0={} c0={} times={}",
            self.seed,
            self.replicates,
            self.n_particles,
            self.m_replicates,
            self.filter_kind,
            join(&self.params_true.to_array()),
            self.q0,
            self.c0,
            join(self.grid.times()),
        );
        let g = &self.ga;
        let _ = write!(
            s,
            " pop-size={} alpha={} temperature={} crossover-runs={} mutation-count={} ec-quantiles={} ec-threshold={} max-loops={}",
            g.pop_size,
            g.alpha,
            g.temperature,
            g.crossover_runs.map_or("auto".to_string(), |r| r.to_string()),
            g.mutation_count.map_or("auto".to_string(), |r| r.to_string()),
            join(&g.ec_quantiles),
            g.ec_threshold,
            g.max_loops,
        );
        if let Ok(space) = self.param_space() {
            let _ = write!(
                s,
                " bounds-lower={} bounds-upper={}",
                join(space.lower()),
                join(space.upper())
            );
        }
        s
    }
}

/// Splits `key = value` (or `key: value`) lines.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| {
                Error::Parse(format!("config line {}: expected key = value", lineno + 1))
            })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
