//! Experiment orchestration behind the `moran-moments` binary.
//!
//! Exit status: 0 when every comparison passes, 1 when at least one fails,
//! 2 when the run could not complete (bad config, refused experiment, I/O).

use moran_core::combinatorics::enumerate_partial_partitions;
use moran_core::config::{Experiment, Inputs, RunConfig};
use moran_core::deterministic::{self, Distribution, LlnOptions};
use moran_core::hierarchy::{build_system, solve};
use moran_core::oracle::ExactOracle;
use moran_core::report;
use moran_core::sim::{replicate_rng, simulate, Observable};
use moran_core::stats::{self, ComparisonRow, ComparisonSummary, RunOptions, THREADS_ENV};
use moran_core::{Error, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Relative tolerance for deterministic engine-against-engine comparisons.
pub const EXACT_REL_TOL: f64 = 1e-6;

/// Residual bound for the deterministic product check.
pub const PRODUCT_CHECK_TOL: f64 = 1e-9;

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub out: Option<PathBuf>,
    pub strict: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(e) = self.experiment {
            cfg.experiment = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.replicates {
            cfg.replicates = r;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        cfg.strict_deterministic |= self.strict;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub seed: u64,
    pub replicates: usize,
    pub strict_deterministic: bool,
    pub z_threshold: f64,
    pub thread_cap: Option<String>,
    pub artifacts: Vec<String>,
    pub comparisons: ComparisonSummary,
    /// Experiment-specific scalars.
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl Summary {
    pub fn exit_code(&self) -> i32 {
        if self.comparisons.failed > 0 {
            1
        } else {
            0
        }
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    inputs: Inputs,
    out: PathBuf,
    artifacts: Vec<String>,
    rows: Vec<ComparisonRow>,
    details: serde_json::Map<String, serde_json::Value>,
}

impl Run<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn opts(&self) -> RunOptions {
        RunOptions {
            replicates: self.cfg.replicates,
            seed: self.cfg.seed,
            strict: self.cfg.strict_deterministic,
            z_threshold: self.cfg.z_threshold,
        }
    }

    fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.details.insert(key.to_string(), v);
    }

    fn reference_id(&self) -> String {
        self.inputs.reference.to_string()
    }
}

/// Runs the configured experiment, writing CSV artifacts and `summary.json`
/// into `cfg.output`.
pub fn run(cfg: &RunConfig) -> Result<Summary> {
    let inputs = cfg.inputs()?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::Io(format!("{}: {e}", cfg.output.display())))?;
    let mut r = Run {
        cfg,
        inputs,
        out: cfg.output.clone(),
        artifacts: Vec::new(),
        rows: Vec::new(),
        details: serde_json::Map::new(),
    };
    match cfg.experiment {
        Experiment::Simulate => run_simulate(&mut r)?,
        Experiment::Hierarchy => run_hierarchy(&mut r)?,
        Experiment::Oracle => run_oracle(&mut r)?,
        Experiment::Deterministic => run_deterministic(&mut r)?,
        Experiment::Compare => {
            let i = &r.inputs;
            let rows =
                stats::compare_with_hierarchy(&i.params, &i.initial, &i.reference, i.support, &cfg.t_grid, &r.opts())?;
            r.rows.extend(rows);
        }
        Experiment::Ld => run_ld(&mut r)?,
        Experiment::Nonclosure => run_nonclosure(&mut r)?,
    }
    if !r.rows.is_empty() {
        let p = r.path("comparisons.csv");
        report::write_comparisons(&p, &r.rows)?;
    }
    let summary = Summary {
        experiment: cfg.experiment,
        seed: cfg.seed,
        replicates: cfg.replicates,
        strict_deterministic: cfg.strict_deterministic,
        z_threshold: cfg.z_threshold,
        thread_cap: std::env::var(THREADS_ENV).ok(),
        artifacts: {
            let mut a = r.artifacts.clone();
            a.push("summary.json".into());
            a
        },
        comparisons: ComparisonSummary::of(&r.rows),
        details: r.details,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(cfg.output.join("summary.json"), text + "\n")?;
    Ok(summary)
}

/// One trajectory of every marginal on the support; each sample is checked
/// against `[A]_t = [A]_0 + ⟨A⟩_t − (A)_t`.
fn run_simulate(r: &mut Run) -> Result<()> {
    let i = &r.inputs;
    let obs: Vec<Observable> = i
        .support
        .subsets()
        .filter(|a| !a.is_empty())
        .map(|a| Observable::new(a, i.reference.clone()))
        .collect();
    let mut rng = replicate_rng(r.cfg.seed, 0);
    let traj = simulate(&i.params, &i.initial, &r.cfg.t_grid, &obs, &mut rng)?;
    let mut rows = Vec::new();
    for (t, samples) in traj.times.iter().zip(&traj.samples) {
        for ((o, s), s0) in obs.iter().zip(samples).zip(&traj.samples[0]) {
            let balance = s0.marginal as f64 + s.created as f64 - s.destroyed as f64;
            rows.push(ComparisonRow::exact(
                format!("[{}]", o.id()),
                *t,
                s.marginal as f64,
                balance,
                0.0,
            ));
        }
    }
    let p = r.path("trajectory.csv");
    let file = std::fs::File::create(&p)?;
    traj.write_csv(std::io::BufWriter::new(file))?;
    r.rows.extend(rows);
    Ok(())
}

fn run_hierarchy(r: &mut Run) -> Result<()> {
    let i = &r.inputs;
    let sys = build_system(&i.params, &i.reference, i.support)?;
    let sol = solve(&sys, &i.initial, &r.cfg.t_grid)?;
    let reference = r.reference_id();
    r.detail("moments", sys.len());
    r.detail("nonzero_coefficients", sys.entries().count());
    let p = r.path("coefficients.csv");
    report::write_coefficients(&p, &sys)?;
    let p = r.path("moments.csv");
    report::write_moments(&p, &sol, &reference)
}

/// Exact moments from the full chain; with `b = 0` also checked against the
/// hierarchy.
fn run_oracle(r: &mut Run) -> Result<()> {
    let i = &r.inputs;
    let oracle = ExactOracle::new(&i.params)?;
    let index: Vec<_> = enumerate_partial_partitions(i.support)?
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect();
    let p0 = oracle.point_mass(&i.initial)?;
    let mut values = Vec::with_capacity(r.cfg.t_grid.len());
    for &t in &r.cfg.t_grid {
        let pt = oracle.transient_distribution(&p0, t)?;
        values.push(
            index
                .iter()
                .map(|pp| oracle.moment_of(&pt, pp, &i.reference))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let exact = moran_core::hierarchy::MomentSolution {
        times: r.cfg.t_grid.clone(),
        index: index.clone(),
        values,
    };
    let states = oracle.index().len();
    let reference = r.reference_id();
    if i.params.b() == 0.0 {
        let sys = build_system(&i.params, &i.reference, i.support)?;
        let sol = solve(&sys, &i.initial, &r.cfg.t_grid)?;
        for (ti, &t) in exact.times.iter().enumerate() {
            for (k, pp) in index.iter().enumerate() {
                let pred = sol
                    .value(ti, pp)
                    .ok_or_else(|| Error::KeyMismatch(format!("{pp} not in the hierarchy")))?;
                r.rows.push(ComparisonRow::exact(
                    format!("{pp}@{reference}"),
                    t,
                    exact.values[ti][k],
                    pred,
                    EXACT_REL_TOL,
                ));
            }
        }
    }
    r.detail("oracle_states", states);
    let p = r.path("oracle_moments.csv");
    report::write_moments(&p, &exact, &reference)
}

fn run_deterministic(r: &mut Run) -> Result<()> {
    let i = &r.inputs;
    let space = i.params.space();
    let n = i.params.pop_size() as f64;
    let omega0 = Distribution::from_state(space, &i.initial, n)?;
    let path = deterministic::integrate(&i.params, &omega0, &r.cfg.t_grid)?;
    let partitions: Vec<_> = enumerate_partial_partitions(i.params.all_sites())?
        .into_iter()
        .filter(|p| p.support() == i.params.all_sites())
        .collect();
    let mut rows = Vec::new();
    let mut worst_unhalved = 0.0f64;
    for (t, omega) in r.cfg.t_grid.iter().zip(&path) {
        for pp in &partitions {
            let c = deterministic::product_derivative_check(&i.params, omega, pp)?;
            worst_unhalved = worst_unhalved.max(c.residual_unhalved);
            rows.push(ComparisonRow::exact(
                format!("product_residual:{pp}"),
                *t,
                c.residual,
                0.0,
                PRODUCT_CHECK_TOL,
            ));
        }
    }
    r.rows.extend(rows);
    r.detail("max_residual_unhalved_weights", worst_unhalved);
    let p = r.path("distribution.csv");
    report::write_distribution_path(&p, &r.cfg.t_grid, &path)?;
    if let Some(lln) = r.cfg.lln.clone() {
        let opts = LlnOptions {
            horizon: *r.cfg.t_grid.last().expect("validated grid"),
            replicates: lln.replicates,
            seed: r.cfg.seed,
            grid_steps: lln.grid_steps,
            strict: r.cfg.strict_deterministic,
        };
        let table = deterministic::lln_experiment(&r.inputs.params, &omega0, &lln.population_sizes, &opts)?;
        let monotone = table.is_decreasing();
        r.rows.push(ComparisonRow::exact(
            "lln_monotone_decrease",
            opts.horizon,
            if monotone { 1.0 } else { 0.0 },
            1.0,
            0.0,
        ));
        r.detail("lln_fitted_exponent", table.fitted_exponent);
        let p = r.path("lln.csv");
        report::write_lln(&p, &table)?;
    }
    Ok(())
}

fn run_ld(r: &mut Run) -> Result<()> {
    let i = &r.inputs;
    if i.params.n_sites() != 2 {
        return Err(Error::Precondition("the ld experiment needs exactly two sites".into()));
    }
    let closed = moran_core::hierarchy::two_site_mean_ld(&i.params, &i.initial, &i.reference)?;
    let rows = stats::ld_comparison(&i.params, &i.initial, &i.reference, &r.cfg.t_grid, &r.opts())?;
    r.detail("ld0", closed.ld0());
    r.detail("decay_rate", closed.decay_rate());
    r.rows.extend(rows);
    Ok(())
}

fn run_nonclosure(r: &mut Run) -> Result<()> {
    let i = &r.inputs;
    let t = *r.cfg.t_grid.last().expect("validated grid");
    let rep = stats::three_site_nonclosure_check(&i.params, &i.initial, &i.reference, t, r.cfg.step, &r.opts())?;
    r.detail("step", rep.step);
    r.detail("monomial_means", &rep.monomial_means);
    r.rows.push(rep.printed);
    r.rows.push(rep.generator);
    Ok(())
}

/// Loads `config`, applies the overrides and runs.
pub fn run_file(config: &Path, overrides: &Overrides) -> Result<Summary> {
    let mut cfg = moran_core::config::load_config(config)?;
    overrides.apply(&mut cfg);
    run(&cfg)
}
