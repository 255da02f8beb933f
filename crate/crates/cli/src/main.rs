use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pkdmf_core::dmf::{dmf_filter_with, ENSEMBLE_CSV_HEADER};
use pkdmf_core::ekf::ekf_filter;
use pkdmf_core::harness::{
    replicate_trajectory, run_estimation_study, run_filter_comparison, ExperimentConfig,
};
use pkdmf_core::loss::FilterKind;
use pkdmf_core::rng::{substream, tag};
use pkdmf_core::TimeGrid;

#[derive(Parser)]
#[command(
    name = "pkdmf",
    version,
    about = "Filtering and parameter estimation for a stochastic pharmacokinetic model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write `t,q,c` rows.
    Simulate(SimulateArgs),
    /// Run one filter over observed concentrations.
    Filter(FilterArgs),
    /// Replicated DMF/EKF comparison: quantiles of the filtering MAEs.
    Compare(CompareArgs),
    /// Replicated GA estimation study: quantiles of the estimates and MAEP.
    Estimate(EstimateArgs),
}

/// Options shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Key-value config file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Model parameters `v_max,k_m,v,c_l,sigma_q2,sigma_c2`.
    #[arg(long, allow_hyphen_values = true)]
    params: Option<String>,
    /// Comma-separated sampling times.
    #[arg(long)]
    times: Option<String>,
    #[arg(long)]
    q0: Option<f64>,
    #[arg(long)]
    c0: Option<f64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with columns `t,c` and optionally `q`. A row at `t = 0` sets the
    /// initial condition.
    #[arg(long)]
    input: PathBuf,
    /// `ekf` or `dmf`.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    particles: Option<usize>,
    /// Write every DMF ensemble as `step,particle_index,q,weight` rows.
    #[arg(long)]
    dump_ensemble: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// `ekf` or `dmf`.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    m_replicates: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_loops: Option<usize>,
    #[arg(long)]
    pop_size: Option<usize>,
    /// File of `name lower upper` lines defining the search box.
    #[arg(long)]
    bounds_file: Option<PathBuf>,
    /// Also write one row per replicate estimate to this file.
    #[arg(long)]
    estimates_out: Option<PathBuf>,
}

/// Collects `(key, value)` overrides from optional flags.
#[derive(Default)]
struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn set<T: ToString>(&mut self, key: &'static str, v: &Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, v.to_string()));
        }
        self
    }
}

fn build_config(common: &Common, extra: Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))?;
    }
    let mut o = Overrides::default();
    o.set("seed", &common.seed)
        .set("params", &common.params)
        .set("times", &common.times)
        .set("q0", &common.q0)
        .set("c0", &common.c0);
    for (k, v) in o.0.into_iter().chain(extra.0) {
        cfg.apply(k, &v).with_context(|| format!("--{k} {v}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = build_config(&args.common, Overrides::default())?;
    let tr = replicate_trajectory(&cfg, 0)?;
    let mut w = output(&args.common.out)?;
    writeln!(w, "# {}", cfg.describe())?;
    tr.write_csv(&cfg.grid, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Observed data read from a CSV file.
struct Observed {
    times: Vec<f64>,
    c: Vec<f64>,
    q: Option<Vec<f64>>,
    /// `(q, c)` from a `t = 0` row, when present.
    origin: Option<(Option<f64>, f64)>,
}

fn read_observations(path: &Path) -> Result<Observed> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .context("input has no header")?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(ti), Some(ci)) = (col("t"), col("c")) else {
        bail!("input header must name columns `t` and `c`");
    };
    let qi = col("q");

    let mut obs = Observed {
        times: Vec::new(),
        c: Vec::new(),
        q: qi.map(|_| Vec::new()),
        origin: None,
    };
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            fields
                .get(i)
                .context("missing field")?
                .parse::<f64>()
                .with_context(|| format!("data row {}", n + 1))
        };
        let t = num(ti)?;
        let c = num(ci)?;
        let q = qi.map(num).transpose()?;
        if t == 0.0 && obs.times.is_empty() && obs.origin.is_none() {
            obs.origin = Some((q, c));
            continue;
        }
        obs.times.push(t);
        obs.c.push(c);
        if let (Some(col), Some(q)) = (obs.q.as_mut(), q) {
            col.push(q);
        }
    }
    if obs.times.is_empty() {
        bail!("input has no observations after t = 0");
    }
    Ok(obs)
}

fn filter(args: FilterArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("filter", &args.filter)
        .set("particles", &args.particles);
    let mut cfg = build_config(&args.common, o)?;
    let obs = read_observations(&args.input)?;
    if let Some((q, c)) = obs.origin {
        if args.common.q0.is_none() {
            if let Some(q) = q {
                cfg.q0 = q;
            }
        }
        if args.common.c0.is_none() {
            cfg.c0 = c;
        }
    }
    cfg.grid = TimeGrid::new(obs.times.clone())?;
    let p = &cfg.params_true;

    let (q_filt, sigma): (Vec<f64>, Vec<f64>) = match cfg.filter_kind {
        FilterKind::Ekf => ekf_filter(&obs.c, &cfg.grid, p, cfg.q0, cfg.c0)?
            .into_iter()
            .map(|s| (s.q_filt, s.sigma_filt))
            .unzip(),
        FilterKind::Dmf => {
            let mut dump = match &args.dump_ensemble {
                Some(path) => {
                    let mut w = BufWriter::new(
                        File::create(path)
                            .with_context(|| format!("creating {}", path.display()))?,
                    );
                    writeln!(w, "# {}", cfg.describe())?;
                    writeln!(w, "{ENSEMBLE_CSV_HEADER}")?;
                    Some(w)
                }
                None => None,
            };
            let mut variances = Vec::new();
            let mut dump_err = None;
            let mut rng = substream(cfg.seed, &[tag::DMF, 0]);
            let est = dmf_filter_with(
                &obs.c,
                &cfg.grid,
                p,
                cfg.q0,
                cfg.c0,
                cfg.n_particles,
                &mut rng,
                |ens, _| {
                    variances.push(ens.weighted_variance());
                    if let Some(w) = dump.as_mut() {
                        if let Err(e) = ens.write_csv_rows(&mut *w) {
                            dump_err.get_or_insert(e);
                        }
                    }
                },
            )?;
            if let Some(e) = dump_err {
                return Err(e.into());
            }
            if let Some(mut w) = dump {
                w.flush()?;
            }
            (est, variances)
        }
    };

    let mut w = output(&args.common.out)?;
    writeln!(w, "# {}", cfg.describe())?;
    writeln!(w, "t,q_true,q_filt,sigma_filt")?;
    for k in 0..q_filt.len() {
        let q_true = obs
            .q
            .as_ref()
            .and_then(|q| q.get(k))
            .map_or(String::new(), |q| q.to_string());
        writeln!(w, "{},{q_true},{},{}", obs.times[k], q_filt[k], sigma[k])?;
    }
    w.flush()?;
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("replicates", &args.replicates)
        .set("particles", &args.particles);
    let cfg = build_config(&args.common, o)?;
    let report = run_filter_comparison(&cfg)?;
    let comment = format!(
        "{}\nretained={} excluded={}",
        cfg.describe(),
        report.mae_dmf.len(),
        report.excluded.len()
    );
    let mut w = output(&args.common.out)?;
    report.table.write_csv(&comment, &mut w)?;
    w.flush()?;
    for ex in &report.excluded {
        eprintln!("replicate {} excluded: {}", ex.replicate, ex.reason);
    }
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("filter", &args.filter)
        .set("replicates", &args.replicates)
        .set("particles", &args.particles)
        .set("m-replicates", &args.m_replicates)
        .set("temperature", &args.temperature)
        .set("alpha", &args.alpha)
        .set("max-loops", &args.max_loops)
        .set("pop-size", &args.pop_size)
        .set(
            "bounds-file",
            &args.bounds_file.as_ref().map(|p| p.display()),
        );
    let cfg = build_config(&args.common, o)?;
    let report = run_estimation_study(&cfg, cfg.filter_kind)?;
    let converged = report.generations.iter().filter(|(_, c)| *c).count();
    let comment = format!(
        "{}\nmaep={} retained={} excluded={} converged={}",
        cfg.describe(),
        report.maep,
        report.estimates.len(),
        report.excluded.len(),
        converged
    );
    let mut w = output(&args.common.out)?;
    report.table.write_csv(&comment, &mut w)?;
    w.flush()?;

    if let Some(path) = &args.estimates_out {
        let mut w = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        writeln!(w, "# {}", cfg.describe())?;
        writeln!(w, "estimate,{}", pkdmf_core::PkParams::NAMES.join(","))?;
        for (i, est) in report.estimates.iter().enumerate() {
            let row: Vec<String> = est.to_array().iter().map(f64::to_string).collect();
            writeln!(w, "{i},{}", row.join(","))?;
        }
        w.flush()?;
    }
    for ex in &report.excluded {
        eprintln!("replicate {} excluded: {}", ex.replicate, ex.reason);
    }
    eprintln!("MAEP = {}", report.maep);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Filter(a) => filter(a),
        Command::Compare(a) => compare(a),
        Command::Estimate(a) => estimate(a),
    }
}
