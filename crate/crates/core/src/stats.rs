//! Replicated simulation, moment estimates and comparisons against
//! predictions from the other engines.

use crate::combinatorics::{enumerate_partial_partitions, PartialPartition};
use crate::error::{Error, Result};
use crate::hierarchy::{build_system, solve, two_site_mean_ld};
use crate::model::{Genotype, ModelParams, PopulationState, SiteSet, TypeSpace};
use crate::ode::validate_grid;
use crate::sim::{replicate_rng, Observable, Simulator};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};
use std::collections::HashMap;
use std::fmt;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MORAN_MOMENTS_THREADS";

/// Default z threshold for verdicts.
pub const DEFAULT_Z: f64 = 3.0;

/// Bootstrap resamples used for derived quantities.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Replication settings shared by the experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Run replicates one after another on the calling thread.
    pub strict: bool,
    pub z_threshold: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            replicates: 1000,
            seed: 0,
            strict: false,
            z_threshold: DEFAULT_Z,
        }
    }
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `f(index, rng)` for every replicate and returns the results in index
/// order. Each replicate owns the RNG stream `(seed, index)`, so results do
/// not depend on scheduling.
pub fn run_replicates<T, F>(opts: &RunOptions, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    let one = |i: usize| {
        let mut rng = replicate_rng(opts.seed, i as u64);
        f(i as u64, &mut rng)
    };
    if opts.strict {
        return (0..opts.replicates).map(one).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..opts.replicates).into_par_iter().map(one).collect())
}

/// Pairwise summation; fixed association order for a given length.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Sample mean and standard error `sd/√n`.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Bootstrap standard error of `stat(column means)` over replicate rows.
pub fn bootstrap_se<F>(rows: &[Vec<f64>], stat: F, resamples: usize, seed: u64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let r = rows.len();
    let width = rows.first().map_or(0, |v| v.len());
    let mut rng = replicate_rng(seed, u64::MAX);
    let mut stats = Vec::with_capacity(resamples);
    let mut means = vec![0.0; width];
    for _ in 0..resamples {
        means.iter_mut().for_each(|m| *m = 0.0);
        for _ in 0..r {
            let row = &rows[rng.gen_range(0..r)];
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= r as f64);
        stats.push(stat(&means));
    }
    mean_se(&stats).1 * (resamples as f64).sqrt()
}

/// `∏_{A∈𝒜}[A]` relative to a reference type.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MomentObservable {
    pub partition: PartialPartition,
    pub reference: Genotype,
}

impl MomentObservable {
    pub fn new(partition: PartialPartition, reference: Genotype) -> Self {
        MomentObservable { partition, reference }
    }

    /// E.g. `{1,2}|{3}@(0,0,0)`.
    pub fn id(&self) -> String {
        format!("{}@{}", self.partition, self.reference)
    }
}

/// Match tables for the blocks of one product observable.
struct ProductTable {
    blocks: Vec<Vec<bool>>,
}

impl ProductTable {
    fn new(space: &TypeSpace, o: &MomentObservable) -> Result<Self> {
        let r = space.encode(&o.reference)?;
        if !o.partition.support().is_subset_of(space.all_sites()) {
            return Err(Error::Precondition(format!("{} uses sites outside the model", o.id())));
        }
        Ok(ProductTable {
            blocks: o.partition.blocks().iter().map(|&a| space.match_table(r, a)).collect(),
        })
    }

    fn eval(&self, sim: &Simulator) -> f64 {
        self.blocks.iter().map(|m| sim.count_matching(m) as f64).product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub observable_id: String,
    pub time: f64,
    pub mean: f64,
    pub se: f64,
    pub replicates: usize,
}

/// Per-replicate values of every observable at every grid time, laid out
/// `[time][observable]` in one row per replicate.
pub fn sample_products(
    params: &ModelParams,
    z0: &PopulationState,
    observables: &[MomentObservable],
    grid: &[f64],
    opts: &RunOptions,
) -> Result<Vec<Vec<f64>>> {
    validate_grid(grid)?;
    params.validate_state(z0)?;
    let tables: Vec<ProductTable> = observables
        .iter()
        .map(|o| ProductTable::new(params.space(), o))
        .collect::<Result<_>>()?;
    run_replicates(opts, |_, rng| {
        let mut sim = Simulator::new(params, z0)?;
        let mut row = Vec::with_capacity(grid.len() * tables.len());
        for &t in grid {
            sim.advance_to(t, rng)?;
            row.extend(tables.iter().map(|tb| tb.eval(&sim)));
        }
        Ok(row)
    })
}

/// Monte Carlo means and standard errors of product observables.
pub fn estimate_moments(
    params: &ModelParams,
    z0: &PopulationState,
    observables: &[MomentObservable],
    grid: &[f64],
    opts: &RunOptions,
) -> Result<Vec<MomentEstimate>> {
    if opts.replicates < 2 {
        return Err(Error::Precondition(
            "at least two replicates are needed for a standard error".into(),
        ));
    }
    let rows = sample_products(params, z0, observables, grid, opts)?;
    let mut out = Vec::with_capacity(grid.len() * observables.len());
    let mut column = vec![0.0; rows.len()];
    for (ti, &t) in grid.iter().enumerate() {
        for (oi, o) in observables.iter().enumerate() {
            let k = ti * observables.len() + oi;
            for (c, r) in column.iter_mut().zip(&rows) {
                *c = r[k];
            }
            let (mean, se) = mean_se(&column);
            out.push(MomentEstimate {
                observable_id: o.id(),
                time: t,
                mean,
                se,
                replicates: rows.len(),
            });
        }
    }
    Ok(out)
}

/// A predicted value to compare an estimate against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub observable_id: String,
    pub time: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Zero standard error and the values differ.
    ExactMismatch,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::ExactMismatch => "exact_mismatch",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub observable_id: String,
    pub time: f64,
    pub estimate: f64,
    pub se: f64,
    pub prediction: f64,
    pub z: f64,
    pub verdict: Verdict,
}

/// Tolerance for "equal" when the standard error is zero.
const EXACT_TOL: f64 = 1e-9;

impl ComparisonRow {
    pub fn new(
        observable_id: impl Into<String>,
        time: f64,
        estimate: f64,
        se: f64,
        prediction: f64,
        z_threshold: f64,
    ) -> Self {
        let diff = estimate - prediction;
        let (z, verdict) = if se > 0.0 {
            let z = diff / se;
            (
                z,
                if z.abs() <= z_threshold {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                },
            )
        } else if diff.abs() <= EXACT_TOL * (1.0 + prediction.abs()) {
            (0.0, Verdict::Pass)
        } else {
            (f64::INFINITY.copysign(diff), Verdict::ExactMismatch)
        };
        ComparisonRow {
            observable_id: observable_id.into(),
            time,
            estimate,
            se,
            prediction,
            z,
            verdict,
        }
    }

    /// Deterministic comparison: passes iff the relative error is at most
    /// `rel_tol` (absolute when the prediction is zero). `z` holds the
    /// relative error.
    pub fn exact(observable_id: impl Into<String>, time: f64, estimate: f64, prediction: f64, rel_tol: f64) -> Self {
        let err = (estimate - prediction).abs() / prediction.abs().max(1.0);
        ComparisonRow {
            observable_id: observable_id.into(),
            time,
            estimate,
            se: 0.0,
            prediction,
            z: err,
            verdict: if err <= rel_tol {
                Verdict::Pass
            } else {
                Verdict::ExactMismatch
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
}

impl ComparisonSummary {
    pub fn of(rows: &[ComparisonRow]) -> Self {
        let passed = rows.iter().filter(|r| r.verdict.passed()).count();
        ComparisonSummary {
            total: rows.len(),
            passed,
            failed: rows.len() - passed,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        ComparisonSummary {
            total: self.total + other.total,
            passed: self.passed + other.passed,
            failed: self.failed + other.failed,
        }
    }
}

/// Joins estimates and predictions on `(observable_id, time)`.
pub fn compare(
    estimates: &[MomentEstimate],
    predictions: &[Prediction],
    z_threshold: f64,
) -> Result<Vec<ComparisonRow>> {
    let mut by_key: HashMap<(&str, u64), f64> = HashMap::new();
    for p in predictions {
        by_key.insert((p.observable_id.as_str(), p.time.to_bits()), p.value);
    }
    if by_key.len() != estimates.len() {
        return Err(Error::KeyMismatch(format!(
            "{} estimates but {} distinct predictions",
            estimates.len(),
            by_key.len()
        )));
    }
    estimates
        .iter()
        .map(|e| {
            let pred = by_key
                .get(&(e.observable_id.as_str(), e.time.to_bits()))
                .ok_or_else(|| Error::KeyMismatch(format!("no prediction for {} at t={}", e.observable_id, e.time)))?;
            Ok(ComparisonRow::new(
                e.observable_id.clone(),
                e.time,
                e.mean,
                e.se,
                *pred,
                z_threshold,
            ))
        })
        .collect()
}

/// Every partial partition of `support` as an observable.
pub fn all_product_observables(support: SiteSet, reference: &Genotype) -> Result<Vec<MomentObservable>> {
    Ok(enumerate_partial_partitions(support)?
        .into_iter()
        .filter(|p| !p.is_empty())
        .map(|p| MomentObservable::new(p, reference.clone()))
        .collect())
}

/// Hierarchy predictions for `observables` on `grid`.
pub fn hierarchy_predictions(
    params: &ModelParams,
    z0: &PopulationState,
    reference: &Genotype,
    observables: &[MomentObservable],
    grid: &[f64],
) -> Result<Vec<Prediction>> {
    let support = observables
        .iter()
        .fold(SiteSet::EMPTY, |acc, o| acc.union(o.partition.support()));
    let sys = build_system(params, reference, support)?;
    let sol = solve(&sys, z0, grid)?;
    let mut out = Vec::new();
    for (ti, &t) in grid.iter().enumerate() {
        for o in observables {
            if o.reference != *reference {
                return Err(Error::Precondition("observables must share the reference type".into()));
            }
            let value = sol
                .value(ti, &o.partition)
                .ok_or_else(|| Error::KeyMismatch(format!("{} not in the hierarchy", o.id())))?;
            out.push(Prediction {
                observable_id: o.id(),
                time: t,
                value,
            });
        }
    }
    Ok(out)
}

/// Monte Carlo versus hierarchy for every product observable on `support`.
pub fn compare_with_hierarchy(
    params: &ModelParams,
    z0: &PopulationState,
    reference: &Genotype,
    support: SiteSet,
    grid: &[f64],
    opts: &RunOptions,
) -> Result<Vec<ComparisonRow>> {
    let obs = all_product_observables(support, reference)?;
    let preds = hierarchy_predictions(params, z0, reference, &obs, grid)?;
    let est = estimate_moments(params, z0, &obs, grid, opts)?;
    compare(&est, &preds, opts.z_threshold)
}

/// Monte Carlo `E[N[1,2] − [1][2]]` against the closed form on `grid`.
pub fn ld_comparison(
    params: &ModelParams,
    z0: &PopulationState,
    reference: &Genotype,
    grid: &[f64],
    opts: &RunOptions,
) -> Result<Vec<ComparisonRow>> {
    let closed = two_site_mean_ld(params, z0, reference)?;
    let n = params.pop_size() as f64;
    let obs = [
        MomentObservable::new("{1,2}".parse()?, reference.clone()),
        MomentObservable::new("{1}|{2}".parse()?, reference.clone()),
    ];
    let rows = sample_products(params, z0, &obs, grid, opts)?;
    let mut out = Vec::new();
    for (ti, &t) in grid.iter().enumerate() {
        let ld: Vec<f64> = rows.iter().map(|r| n * r[2 * ti] - r[2 * ti + 1]).collect();
        let (mean, se) = mean_se(&ld);
        out.push(ComparisonRow::new(
            format!("LD@{reference}"),
            t,
            mean,
            se,
            closed.at(t).2,
            opts.z_threshold,
        ));
    }
    Ok(out)
}

/// Distribution of the creation counter `⟨g₁,g₂⟩_t` across replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterLaw {
    pub time: f64,
    /// `a·t`.
    pub expected: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// Fraction of counter increments that came in steps of two.
    pub double_step_fraction: f64,
}

impl CounterLaw {
    pub fn rows(&self, id: &str, z_threshold: f64) -> [ComparisonRow; 2] {
        [
            ComparisonRow::new(
                format!("mean<{id}>"),
                self.time,
                self.mean,
                self.mean_se,
                self.expected,
                z_threshold,
            ),
            ComparisonRow::new(
                format!("var<{id}>"),
                self.time,
                self.variance,
                self.variance_se,
                self.expected,
                z_threshold,
            ),
        ]
    }
}

/// Samples `⟨pair⟩_t` and tests it against `Poisson(a·t)`.
pub fn counter_law(
    params: &ModelParams,
    z0: &PopulationState,
    reference: &Genotype,
    pair: SiteSet,
    t: f64,
    opts: &RunOptions,
) -> Result<CounterLaw> {
    let a = crate::hierarchy::poisson_parameter(params, z0, reference, pair)?;
    let obs = [Observable::new(pair, reference.clone())];
    let draws: Vec<(u64, u64)> = run_replicates(opts, |_, rng| {
        let mut sim = Simulator::new(params, z0)?;
        sim.track(&obs)?;
        let mut doubles = 0;
        let mut last = 0;
        while sim.step_until(t, rng)?.is_some() {
            let now = sim.counters().expect("tracked").values()[0].created;
            if now - last == 2 {
                doubles += 2;
            }
            last = now;
        }
        Ok((last, doubles))
    })?;
    let counts: Vec<f64> = draws.iter().map(|d| d.0 as f64).collect();
    let (mean, mean_se) = mean_se(&counts);
    let r = counts.len() as f64;
    let centered: Vec<f64> = counts.iter().map(|c| (c - mean).powi(2)).collect();
    let variance = pairwise_sum(&centered) / (r - 1.0);
    let m4 = pairwise_sum(&centered.iter().map(|c| c * c).collect::<Vec<_>>()) / r;
    let variance_se = ((m4 - variance * variance).max(0.0) / r).sqrt();
    let expected = a * t;
    let (chi_square, degrees_of_freedom, p_value) = poisson_gof(&counts, expected)?;
    let total: u64 = draws.iter().map(|d| d.0).sum();
    let doubled: u64 = draws.iter().map(|d| d.1).sum();
    Ok(CounterLaw {
        time: t,
        expected,
        mean,
        mean_se,
        variance,
        variance_se,
        chi_square,
        degrees_of_freedom,
        p_value,
        double_step_fraction: if total == 0 { 0.0 } else { doubled as f64 / total as f64 },
    })
}

/// Pearson chi-square of integer draws against `Poisson(lambda)`, pooling
/// cells so each expected count is at least 5.
pub fn poisson_gof(draws: &[f64], lambda: f64) -> Result<(f64, usize, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::Precondition("Poisson parameter must be positive".into()));
    }
    let n = draws.len() as f64;
    let pois = Poisson::new(lambda).map_err(|e| Error::Precondition(e.to_string()))?;
    let max = draws.iter().fold(0.0f64, |m, &d| m.max(d)) as u64;
    let mut observed = vec![0.0; max as usize + 1];
    for &d in draws {
        observed[d as usize] += 1.0;
    }
    // cells [lo, hi); the last cell is open on the right
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    let mut k = 0u64;
    let mut cum = 0.0;
    loop {
        let p = pois.pmf(k);
        cum += p;
        o_acc += observed.get(k as usize).copied().unwrap_or(0.0);
        e_acc += n * p;
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
        k += 1;
        if k > max && n * (1.0 - cum) < 5.0 {
            break;
        }
    }
    let tail_o: f64 = o_acc + observed.iter().skip(k as usize).sum::<f64>();
    let tail_e = e_acc + n * (1.0 - cum).max(0.0);
    match cells.last_mut() {
        Some(last) => {
            last.0 += tail_o;
            last.1 += tail_e;
        }
        None => cells.push((tail_o, tail_e)),
    }
    let chi: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = cells.len().saturating_sub(1).max(1);
    let p = 1.0
        - ChiSquared::new(df as f64)
            .map_err(|e| Error::Precondition(e.to_string()))?
            .cdf(chi);
    Ok((chi, df, p))
}

/// Per-replicate monomials of the bracket at one time, given the state.
fn bracket_terms(c: &BracketCounts, n: f64) -> [f64; 10] {
    let BracketCounts {
        s1,
        s2,
        s3,
        s12,
        s13,
        s23,
        s123,
    } = *c;
    [
        n * s1 * s23,
        n * s2 * s13,
        n * s3 * s12,
        s1 * s12 * s13,
        s2 * s12 * s23,
        s3 * s13 * s23,
        s1 * s2 * s3,
        s1 * s1 * s123,
        s2 * s2 * s123,
        s3 * s3 * s123,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BracketCounts {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s12: f64,
    pub s13: f64,
    pub s23: f64,
    pub s123: f64,
}

impl BracketCounts {
    pub fn of(space: &TypeSpace, z: &PopulationState, reference: usize) -> Self {
        let c = |s: &[usize]| z.marginal_count(space, SiteSet::from_sites(s).expect("static"), reference) as f64;
        BracketCounts {
            s1: c(&[1]),
            s2: c(&[2]),
            s3: c(&[3]),
            s12: c(&[1, 2]),
            s13: c(&[1, 3]),
            s23: c(&[2, 3]),
            s123: c(&[1, 2, 3]),
        }
    }
}

/// Resampling bracket for `d/dt E[[1][2][3]]` as printed:
/// `b/N·(N[1][2,3] + N[2][1,3] + N[3][1,2] + [1][1,2][1,3] + [2][1,2][2,3]
/// + [3][1,3][2,3] − 3[1][2][3] − ([1]² + [2]² + [3]²)[1,2,3])`.
pub fn printed_bracket(terms: &[f64], b: f64, n: f64) -> f64 {
    b / n
        * (terms[0] + terms[1] + terms[2] + terms[3] + terms[4] + terms[5]
            - 3.0 * terms[6]
            - terms[7]
            - terms[8]
            - terms[9])
}

/// Resampling part of the generator applied to `[1][2][3]`:
/// `b/N·(N[1][2,3] + N[2][1,3] + N[3][1,2] − 3[1][2][3])`.
pub fn generator_bracket(terms: &[f64], b: f64, n: f64) -> f64 {
    b / n * (terms[0] + terms[1] + terms[2] - 3.0 * terms[6])
}

/// Finite-difference derivative of `E[[1][2][3]]` against both brackets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonclosureReport {
    /// Finite difference against the printed bracket.
    pub printed: ComparisonRow,
    /// Finite difference against the generator bracket.
    pub generator: ComparisonRow,
    /// Monte Carlo means of the ten bracket monomials at `t`.
    pub monomial_means: Vec<f64>,
    pub step: f64,
}

/// Estimates `d/dt E[[1][2][3]_t]` by a symmetric difference with step `h`
/// and compares it with the brackets evaluated from Monte Carlo moments at
/// `t`. Recombination leaves one-site counts unchanged and adds nothing.
pub fn three_site_nonclosure_check(
    params: &ModelParams,
    z0: &PopulationState,
    reference: &Genotype,
    t: f64,
    h: f64,
    opts: &RunOptions,
) -> Result<NonclosureReport> {
    if params.n_sites() != 3 {
        return Err(Error::Precondition("the non-closure check needs three sites".into()));
    }
    if params.has_mutation() {
        return Err(Error::Precondition("the non-closure check assumes μ = 0".into()));
    }
    if !(h > 0.0 && t - h >= 0.0) {
        return Err(Error::Precondition(format!("need 0 < h ≤ t, got t={t}, h={h}")));
    }
    if opts.replicates < 2 {
        return Err(Error::Precondition("at least two replicates are needed".into()));
    }
    let space = params.space();
    let r = space.encode(reference)?;
    let n = params.pop_size() as f64;
    let b = params.b();
    let grid = if t - h > 0.0 {
        vec![0.0, t - h, t, t + h]
    } else {
        vec![0.0, t, t + h]
    };
    // row: [f(t−h), f(t+h), 10 monomials at t]
    let rows: Vec<Vec<f64>> = run_replicates(opts, |_, rng| {
        let mut sim = Simulator::new(params, z0)?;
        let mut row = vec![0.0; 12];
        for &s in &grid {
            sim.advance_to(s, rng)?;
            let c = BracketCounts::of(space, &sim.state(), r);
            let f = c.s1 * c.s2 * c.s3;
            if s == t - h {
                row[0] = f;
            }
            if s == t {
                row[2..].copy_from_slice(&bracket_terms(&c, n));
            }
            if s == t + h {
                row[1] = f;
            }
        }
        Ok(row)
    })?;
    let fd = |m: &[f64]| (m[1] - m[0]) / (2.0 * h);
    let printed = |m: &[f64]| printed_bracket(&m[2..], b, n);
    let exact = |m: &[f64]| generator_bracket(&m[2..], b, n);
    let means: Vec<f64> = (0..12)
        .map(|k| pairwise_sum(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()) / rows.len() as f64)
        .collect();
    let se_p = bootstrap_se(&rows, |m| fd(m) - printed(m), BOOTSTRAP_RESAMPLES, opts.seed);
    let se_e = bootstrap_se(&rows, |m| fd(m) - exact(m), BOOTSTRAP_RESAMPLES, opts.seed ^ 1);
    let id = format!("d[1][2][3]@{reference}");
    Ok(NonclosureReport {
        printed: ComparisonRow::new(
            format!("{id}/printed"),
            t,
            fd(&means),
            se_p,
            printed(&means),
            opts.z_threshold,
        ),
        generator: ComparisonRow::new(
            format!("{id}/generator"),
            t,
            fd(&means),
            se_e,
            exact(&means),
            opts.z_threshold,
        ),
        monomial_means: means[2..].to_vec(),
        step: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ExactOracle;

    fn set(s: &[usize]) -> SiteSet {
        SiteSet::from_sites(s).unwrap()
    }

    fn g(v: &[u16]) -> Genotype {
        Genotype::new(v.to_vec())
    }

    #[test]
    fn verdicts() {
        let r = ComparisonRow::new("a", 1.0, 2.0, 0.5, 2.0, 3.0);
        assert_eq!((r.z, r.verdict), (0.0, Verdict::Pass));
        assert_eq!(ComparisonRow::new("a", 1.0, 2.0, 0.0, 2.0, 3.0).verdict, Verdict::Pass);
        assert_eq!(
            ComparisonRow::new("a", 1.0, 2.0, 0.0, 2.5, 3.0).verdict,
            Verdict::ExactMismatch
        );
        let f = ComparisonRow::new("a", 1.0, 4.0, 0.5, 2.0, 3.0);
        assert_eq!((f.z, f.verdict), (4.0, Verdict::Fail));
        let s = ComparisonSummary::of(&[r, f]);
        assert_eq!((s.total, s.passed, s.failed), (2, 1, 1));
    }

    #[test]
    fn compare_rejects_missing_keys() {
        let e = vec![MomentEstimate {
            observable_id: "x".into(),
            time: 1.0,
            mean: 1.0,
            se: 0.1,
            replicates: 10,
        }];
        let p = vec![Prediction {
            observable_id: "y".into(),
            time: 1.0,
            value: 1.0,
        }];
        assert!(matches!(compare(&e, &p, 3.0), Err(Error::KeyMismatch(_))));
    }

    #[test]
    fn frozen_chain_gives_exact_initial_products() {
        let p = ModelParams::new(vec![2, 2], 6).unwrap();
        let x = g(&[0, 0]);
        let z0 = PopulationState::from_pairs(p.space(), [(&x, 2), (&g(&[0, 1]), 4)]).unwrap();
        let obs = all_product_observables(p.all_sites(), &x).unwrap();
        let opts = RunOptions {
            replicates: 5,
            ..Default::default()
        };
        let est = estimate_moments(&p, &z0, &obs, &[0.0, 3.0], &opts).unwrap();
        for e in &est {
            assert_eq!(e.se, 0.0);
        }
        let v: HashMap<_, _> = est
            .iter()
            .filter(|e| e.time == 3.0)
            .map(|e| (e.observable_id.clone(), e.mean))
            .collect();
        assert_eq!(v["{1}|{2}@(0,0)"], 6.0 * 2.0);
        assert_eq!(v["{1,2}@(0,0)"], 2.0);
    }

    #[test]
    fn estimates_independent_of_threads_and_strict_mode() {
        let p = ModelParams::new(vec![2, 2], 8)
            .unwrap()
            .with_rho(set(&[1]), 1.0)
            .unwrap()
            .with_resampling(0.5)
            .unwrap();
        let x = g(&[0, 0]);
        let z0 = PopulationState::from_pairs(p.space(), [(&x, 4), (&g(&[1, 1]), 4)]).unwrap();
        let obs = all_product_observables(p.all_sites(), &x).unwrap();
        let mut opts = RunOptions {
            replicates: 64,
            seed: 9,
            ..Default::default()
        };
        let par = estimate_moments(&p, &z0, &obs, &[0.0, 1.0], &opts).unwrap();
        opts.strict = true;
        let seq = estimate_moments(&p, &z0, &obs, &[0.0, 1.0], &opts).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn z_calibration_across_independent_comparisons() {
        // correct predictions should pass at z = 3 about 99.7% of the time
        let p = ModelParams::new(vec![2, 2], 4)
            .unwrap()
            .with_rho(set(&[1]), 1.0)
            .unwrap();
        let x = g(&[0, 0]);
        let z0 = PopulationState::from_pairs(p.space(), [(&x, 2), (&g(&[1, 1]), 2)]).unwrap();
        let oracle = ExactOracle::new(&p).unwrap();
        let pt = oracle
            .transient_distribution(&oracle.point_mass(&z0).unwrap(), 1.0)
            .unwrap();
        let pp: PartialPartition = "{1,2}".parse().unwrap();
        let truth = oracle.moment_of(&pt, &pp, &x).unwrap();
        let obs = [MomentObservable::new(pp, x.clone())];
        let trials = 60;
        let mut passed = 0;
        for seed in 0..trials {
            let opts = RunOptions {
                replicates: 400,
                seed: 1000 + seed,
                ..Default::default()
            };
            let est = estimate_moments(&p, &z0, &obs, &[0.0, 1.0], &opts).unwrap();
            let row = ComparisonRow::new("m", 1.0, est[1].mean, est[1].se, truth, 3.0);
            passed += row.verdict.passed() as u64;
        }
        // P(more than 3 failures | p_fail = 0.0027, n = 60) < 1e-4
        assert!(passed >= trials - 3, "{passed}/{trials}");
    }

    #[test]
    fn gof_accepts_exact_poisson_and_rejects_shifted() {
        let mut rng = replicate_rng(3, 3);
        let pois = rand_distr_poisson(&mut rng, 2.0, 20_000);
        let (_, _, p) = poisson_gof(&pois, 2.0).unwrap();
        assert!(p > 1e-3, "{p}");
        let (_, _, q) = poisson_gof(&pois, 2.3).unwrap();
        assert!(q < 1e-6, "{q}");
    }

    /// Knuth's product method; adequate for small means in tests.
    fn rand_distr_poisson(rng: &mut ChaCha8Rng, lambda: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let l = (-lambda).exp();
                let mut k = 0.0;
                let mut prod: f64 = rng.gen();
                while prod > l {
                    k += 1.0;
                    prod *= rng.gen::<f64>();
                }
                k
            })
            .collect()
    }

    #[test]
    fn generator_bracket_matches_oracle_and_printed_one_does_not() {
        let p = ModelParams::new(vec![2, 2, 2], 3)
            .unwrap()
            .with_resampling(1.3)
            .unwrap();
        let space = p.space();
        let x = g(&[0, 0, 0]);
        let r = space.encode(&x).unwrap();
        let oracle = ExactOracle::new(&p).unwrap();
        let pp: PartialPartition = "{1}|{2}|{3}".parse().unwrap();
        let n = 3.0;
        let mut printed_gap = 0.0f64;
        for i in 0..oracle.index().len() {
            let z = oracle.index().state(i);
            let mut point = vec![0.0; oracle.index().len()];
            point[i] = 1.0;
            let d = oracle.exact_moment_derivative(&point, &pp, &x).unwrap();
            let terms = bracket_terms(&BracketCounts::of(space, &z, r), n);
            assert!((generator_bracket(&terms, 1.3, n) - d).abs() < 1e-9);
            printed_gap = printed_gap.max((printed_bracket(&terms, 1.3, n) - d).abs());
            // on states made of 000 and 111 only, both agree
            let only_extremes = z.support().all(|(t, _)| t == 0 || t == space.size() - 1);
            if only_extremes {
                assert!((printed_bracket(&terms, 1.3, n) - d).abs() < 1e-9);
            }
        }
        assert!(printed_gap > 0.1);
    }

    #[test]
    fn nonclosure_without_resampling_is_zero() {
        let p = ModelParams::new(vec![2, 2, 2], 6).unwrap();
        let x = g(&[0, 0, 0]);
        let z0 = PopulationState::from_pairs(p.space(), [(&x, 3), (&g(&[1, 1, 1]), 3)]).unwrap();
        let opts = RunOptions {
            replicates: 20,
            ..Default::default()
        };
        let rep = three_site_nonclosure_check(&p, &z0, &x, 1.0, 0.1, &opts).unwrap();
        assert_eq!(rep.generator.estimate, 0.0);
        assert_eq!(rep.generator.prediction, 0.0);
        assert!(rep.printed.verdict.passed());
    }

    #[test]
    fn ld_comparison_shape() {
        let p = ModelParams::new(vec![2, 2], 10)
            .unwrap()
            .with_rho(set(&[1]), 1.0)
            .unwrap()
            .with_resampling(1.0)
            .unwrap();
        let x = g(&[0, 0]);
        let z0 = PopulationState::from_pairs(p.space(), [(&x, 5), (&g(&[1, 1]), 5)]).unwrap();
        let opts = RunOptions {
            replicates: 2000,
            seed: 5,
            ..Default::default()
        };
        let rows = ld_comparison(&p, &z0, &x, &[0.0, 0.5, 1.0], &opts).unwrap();
        assert_eq!(rows[0].estimate, 25.0);
        assert_eq!(rows[0].verdict, Verdict::Pass);
        for r in &rows {
            assert!(r.z.abs() < 4.0, "{r:?}");
        }
    }
}
