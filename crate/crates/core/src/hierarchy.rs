//! Closed linear ODE system for `E[∏_{A∈𝒜} [A]_t]` over partial partitions
//! `𝒜`, and the closed-form two-site and single-crossover special cases.
//!
//! # Row construction
//!
//! For a recombination event with set `H` between individuals of types `x`
//! and `y`, block `A` of `𝒜` changes by
//!
//! ```text
//! Δ_A = X(H∩A)·Y(A∖H) + X(A∖H)·Y(H∩A) − X(A) − Y(A)
//! ```
//!
//! where `X(P)` (resp. `Y(P)`) indicates that `x` (resp. `y`) agrees with the
//! reference type on `P`. `Δ_A = 0` unless `H` splits `A`. Expanding
//! `∏(f_A + Δ_A) − ∏ f_A` over the split blocks gives monomials `X(P)·Y(Q)`
//! with `P ∩ Q = ∅`, and summing over ordered pairs with weights `z(x)z(y)`
//! turns each into `[P]·[Q]`. Every term is again a product over a partial
//! partition of the same support, so the system closes. Mutation changes a
//! single block by ±1 and shrinks supports, which is why the index runs over
//! partial partitions rather than partitions.
//!
//! The per-class constant form with coefficients `ρ^I_{K,G}/(4N)` is kept in
//! [`class_row`]; its normalization is calibrated against the exact oracle
//! by [`calibrate_class_normalization`].

use crate::combinatorics::{
    disrupts, enumerate_partial_partitions, enumerate_triples, marginal_rates, rho_ikg, PartialPartition, TripleIjk,
};
use crate::error::{Error, Result};
use crate::model::{Genotype, ModelParams, PopulationState, RateMap, SiteSet};
use crate::ode::{integrate, validate_grid, Tolerances};
use crate::oracle::ExactOracle;
use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

/// Largest support `|T|` accepted by [`build_system`].
pub const MAX_SUPPORT: usize = 8;

/// Per-class multipliers applied to the `ρ^I_{K,G}/(4N)` coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    /// Classes with `J ≠ ∅` (a block is joined).
    pub joining: f64,
    /// Classes with `J = ∅` (blocks are only broken).
    pub breaking: f64,
}

/// Calibrated values, checked against the oracle on first use.
pub const CLASS_NORMALIZATION: Normalization = Normalization {
    joining: 2.0,
    breaking: 1.0,
};

type SparseRow = Vec<(usize, f64)>;

/// Coefficient matrix of the closed moment system relative to one reference
/// type.
#[derive(Clone, Debug)]
pub struct MomentSystem {
    support: SiteSet,
    index: Vec<PartialPartition>,
    positions: HashMap<PartialPartition, usize>,
    rows: Vec<SparseRow>,
    xstar: Genotype,
    reference: usize,
    params: ModelParams,
    normalization: Normalization,
}

impl MomentSystem {
    pub fn support(&self) -> SiteSet {
        self.support
    }

    pub fn index(&self) -> &[PartialPartition] {
        &self.index
    }

    pub fn position(&self, pp: &PartialPartition) -> Option<usize> {
        self.positions.get(pp).copied()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn row_of(&self, pp: &PartialPartition) -> Option<&[(usize, f64)]> {
        self.position(pp).map(|i| self.row(i))
    }

    pub fn coefficient(&self, row: &PartialPartition, col: &PartialPartition) -> f64 {
        match (self.position(row), self.position(col)) {
            (Some(r), Some(c)) => self.rows[r]
                .iter()
                .find(|(j, _)| *j == c)
                .map(|(_, v)| *v)
                .unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn reference(&self) -> &Genotype {
        &self.xstar
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Normalization verified against the oracle for this build.
    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Nonzero entries as `(row, col, coefficient)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    /// `Q·m`.
    pub fn apply(&self, m: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(c, v)| v * m[c]).sum();
        }
    }

    /// `m_𝒜(0) = ∏_{A∈𝒜} [A](z0)`.
    pub fn initial_vector(&self, z0: &PopulationState) -> Result<Vec<f64>> {
        self.params.validate_state(z0)?;
        let space = self.params.space();
        let mut cache: HashMap<SiteSet, f64> = HashMap::new();
        Ok(self
            .index
            .iter()
            .map(|pp| {
                pp.blocks()
                    .iter()
                    .map(|&a| {
                        *cache
                            .entry(a)
                            .or_insert_with(|| z0.marginal_count(space, a, self.reference) as f64)
                    })
                    .product()
            })
            .collect())
    }
}

/// Moments on a time grid, one vector per time in system index order.
#[derive(Clone, Debug)]
pub struct MomentSolution {
    pub times: Vec<f64>,
    pub index: Vec<PartialPartition>,
    pub values: Vec<Vec<f64>>,
}

impl MomentSolution {
    pub fn value(&self, time_index: usize, pp: &PartialPartition) -> Option<f64> {
        let k = self.index.iter().position(|p| p == pp)?;
        Some(self.values[time_index][k])
    }

    pub fn series(&self, pp: &PartialPartition) -> Option<Vec<f64>> {
        let k = self.index.iter().position(|p| p == pp)?;
        Some(self.values.iter().map(|v| v[k]).collect())
    }
}

struct RowBuilder {
    n: f64,
    acc: BTreeMap<PartialPartition, f64>,
}

impl RowBuilder {
    fn new(n: f64) -> Self {
        RowBuilder {
            n,
            acc: BTreeMap::new(),
        }
    }

    /// Adds `coef · ∏ [blocks]`, folding empty blocks into factors of `N`.
    fn add(&mut self, blocks: &[SiteSet], coef: f64) {
        if coef == 0.0 {
            return;
        }
        let (pp, dropped) = PartialPartition::from_blocks_dropping_empty(blocks);
        *self.acc.entry(pp).or_insert(0.0) += coef * self.n.powi(dropped as i32);
    }

    fn finish(self) -> BTreeMap<PartialPartition, f64> {
        self.acc.into_iter().filter(|(_, v)| *v != 0.0).collect()
    }
}

/// Recombination part of the generator acting on `∏_{A∈𝒜}[A]`, using rates
/// already lumped onto the support.
pub fn recombination_row(pp: &PartialPartition, rates: &RateMap, pop_size: u64) -> BTreeMap<PartialPartition, f64> {
    let n = pop_size as f64;
    let mut out = RowBuilder::new(n);
    let blocks = pp.blocks();
    for (h, r) in rates.nonzero() {
        let split: Vec<SiteSet> = blocks
            .iter()
            .copied()
            .filter(|&a| {
                let c = h.intersection(a);
                !c.is_empty() && c != a
            })
            .collect();
        if split.is_empty() {
            continue;
        }
        let kept: Vec<SiteSet> = blocks.iter().copied().filter(|a| !split.contains(a)).collect();
        let d = split.len();
        let base = r / (4.0 * n);
        let mut terms = kept.clone();
        for code in 1..5usize.pow(d as u32) {
            terms.truncate(kept.len());
            let (mut x, mut y) = (SiteSet::EMPTY, SiteSet::EMPTY);
            let mut sign = 1.0;
            let mut c = code;
            for &a in &split {
                match c % 5 {
                    0 => terms.push(a),
                    1 => {
                        x = x.union(h.intersection(a));
                        y = y.union(a.difference(h));
                    }
                    2 => {
                        x = x.union(a.difference(h));
                        y = y.union(h.intersection(a));
                    }
                    3 => {
                        x = x.union(a);
                        sign = -sign;
                    }
                    _ => {
                        y = y.union(a);
                        sign = -sign;
                    }
                }
                c /= 5;
            }
            terms.push(x);
            terms.push(y);
            out.add(&terms, sign * base);
        }
    }
    out.finish()
}

/// Incoming mutation rate into the reference allele at `site`, which must be
/// the same from every other allele for the hierarchy to close.
fn incoming_rate(params: &ModelParams, site: usize, target: usize) -> Result<f64> {
    let matrix = params.mutation_matrix(site);
    let mut rates = matrix
        .iter()
        .enumerate()
        .filter(|(from, _)| *from != target)
        .map(|(_, row)| row[target]);
    let Some(first) = rates.next() else {
        return Ok(0.0);
    };
    if rates.any(|r| r != first) {
        return Err(Error::Precondition(format!(
            "mutation rates into allele {target} at site {} differ between source alleles; \
             the hierarchy indexed by the reference type only closes when they agree",
            site + 1
        )));
    }
    Ok(first)
}

/// Mutation part of the generator acting on `∏_{A∈𝒜}[A]`.
///
/// A mutation at site `j ∈ A_ℓ` moves `[A_ℓ]` by ±1: gains at rate
/// `ν_j([A_ℓ∖{j}] − [A_ℓ])`, losses at rate `out_j·[A_ℓ]`.
pub fn mutation_row(
    pp: &PartialPartition,
    params: &ModelParams,
    reference: &Genotype,
) -> Result<BTreeMap<PartialPartition, f64>> {
    let mut out = RowBuilder::new(params.pop_size() as f64);
    let blocks = pp.blocks();
    for (l, &a) in blocks.iter().enumerate() {
        for j in a.indices() {
            let allele = reference.alleles()[j] as usize;
            let nu = incoming_rate(params, j, allele)?;
            let leave = params.mutation_out_rate(j, allele);
            if nu != 0.0 {
                let mut shrunk = blocks.to_vec();
                shrunk[l] = a.difference(SiteSet::singleton(j));
                out.add(&shrunk, nu);
            }
            if nu + leave != 0.0 {
                out.add(blocks, -(nu + leave));
            }
        }
    }
    Ok(out.finish())
}

/// The `{T}` row of the mean dynamics,
/// `d/dt E[[T]] = Σ_H ρ^{(T)}_H/(2N)·(E[[H][T∖H]] − N·E[[T]])`.
pub fn mean_dynamics_row(rates: &RateMap, support: SiteSet, pop_size: u64) -> BTreeMap<PartialPartition, f64> {
    let n = pop_size as f64;
    let mut out = RowBuilder::new(n);
    for h in support.subsets() {
        let r = rates.get(h);
        let w = r / (2.0 * n);
        out.add(&[h, support.difference(h)], w);
        out.add(&[support], -w * n);
    }
    out.finish()
}

/// Recombination row in the per-class form: for every `(I, J, K)` with
/// `I ≠ M`, every `K̃ ⊆ K` and every `G ⊆ A_J` disrupting `{A_j}_{j∈J}`, the
/// term `σ·(−1)^{|K|}·ρ^I_{K,G}/(4N)·∏_{i∈I}[A_i]·[A_K̃ ∪ G]·[A_{K∖K̃} ∪ G^c]`.
///
/// Agrees with [`recombination_row`] whenever no two blocks can be split at
/// once; otherwise it misses the terms in which two joined blocks are
/// completed by different offspring of the same event.
pub fn class_row(
    pp: &PartialPartition,
    rates: &RateMap,
    pop_size: u64,
    norm: Normalization,
) -> Result<BTreeMap<PartialPartition, f64>> {
    let n = pop_size as f64;
    let mut out = RowBuilder::new(n);
    let blocks = pp.blocks();
    let m = blocks.len();
    if m == 0 {
        return Ok(BTreeMap::new());
    }
    // the coefficients only see sites inside the blocks
    let rates = &marginal_rates(rates, pp.support());
    let union_of = |mask: u32| TripleIjk::members(mask, m).fold(SiteSet::EMPTY, |acc, p| acc.union(blocks[p]));
    for t in enumerate_triples(m)? {
        let a_i = union_of(t.i);
        let a_j = union_of(t.j);
        let j_blocks: Vec<SiteSet> = TripleIjk::members(t.j, m).map(|p| blocks[p]).collect();
        let k_blocks: Vec<SiteSet> = TripleIjk::members(t.k, m).map(|p| blocks[p]).collect();
        let sigma = if t.j != 0 { norm.joining } else { norm.breaking };
        let sign = if k_blocks.len().is_multiple_of(2) { 1.0 } else { -1.0 };
        let i_blocks: Vec<SiteSet> = TripleIjk::members(t.i, m).map(|p| blocks[p]).collect();
        for g in a_j.subsets().filter(|&g| disrupts(g, &j_blocks)) {
            let rho = rho_ikg(rates, a_i, &k_blocks, g);
            if rho == 0.0 {
                continue;
            }
            let gc = g.complement_in(a_j);
            let coef = sigma * sign * rho / (4.0 * n);
            for k_tilde in 0..(1u32 << k_blocks.len()) {
                let (mut left, mut right) = (g, gc);
                for (p, &b) in k_blocks.iter().enumerate() {
                    if k_tilde >> p & 1 == 1 {
                        left = left.union(b);
                    } else {
                        right = right.union(b);
                    }
                }
                let mut terms = i_blocks.clone();
                terms.push(left);
                terms.push(right);
                out.add(&terms, coef);
            }
        }
    }
    Ok(out.finish())
}

/// Fits the per-class normalization of [`class_row`] to the exact oracle on
/// a fixed three-site instance (`N = 3`, generic rational rates) by least
/// squares over every row at `t ∈ {0, 0.7}`. Returns the fit and its max
/// absolute residual.
pub fn calibrate_class_normalization() -> Result<(Normalization, f64)> {
    let s = |v: &[usize]| SiteSet::from_sites(v).expect("static sites");
    let params = ModelParams::new(vec![2, 2, 2], 3)?
        .with_rho(s(&[1]), 0.75)?
        .with_rho(s(&[2]), 0.5)?
        .with_rho(s(&[3]), 0.625)?;
    let space = params.space().clone();
    let xstar = Genotype::new(vec![0, 0, 0]);
    let z0 = PopulationState::from_pairs(
        &space,
        [
            (&Genotype::new(vec![0, 0, 0]), 1),
            (&Genotype::new(vec![0, 1, 1]), 1),
            (&Genotype::new(vec![1, 0, 0]), 1),
        ],
    )?;
    let oracle = ExactOracle::new(&params)?;
    let p0 = oracle.point_mass(&z0)?;
    let support = params.all_sites();
    let rates = marginal_rates(params.rho(), support);
    let index = enumerate_partial_partitions(support)?;
    let unit_j = Normalization {
        joining: 1.0,
        breaking: 0.0,
    };
    let unit_k = Normalization {
        joining: 0.0,
        breaking: 1.0,
    };
    let moments = |p: &[f64]| -> Result<HashMap<PartialPartition, f64>> {
        index
            .iter()
            .map(|pp| Ok((pp.clone(), oracle.moment_of(p, pp, &xstar)?)))
            .collect()
    };
    let eval = |row: &BTreeMap<PartialPartition, f64>, m: &HashMap<PartialPartition, f64>| {
        row.iter().map(|(pp, c)| c * m[pp]).sum::<f64>()
    };
    // normal equations for d ≈ σ_J·u + σ_K·v
    let (mut suu, mut suv, mut svv, mut sud, mut svd) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut samples = Vec::new();
    for t in [0.0, 0.7] {
        let pt = oracle.transient_distribution(&p0, t)?;
        let m = moments(&pt)?;
        for pp in &index {
            let d = oracle.exact_moment_derivative(&pt, pp, &xstar)?;
            let u = eval(&class_row(pp, &rates, 3, unit_j)?, &m);
            let v = eval(&class_row(pp, &rates, 3, unit_k)?, &m);
            suu += u * u;
            suv += u * v;
            svv += v * v;
            sud += u * d;
            svd += v * d;
            samples.push((u, v, d));
        }
    }
    let det = suu * svv - suv * suv;
    if det.abs() < 1e-12 {
        return Err(Error::Precondition("calibration instance is degenerate".into()));
    }
    let joining = (sud * svv - svd * suv) / det;
    let breaking = (svd * suu - sud * suv) / det;
    let residual = samples
        .iter()
        .map(|(u, v, d)| (joining * u + breaking * v - d).abs())
        .fold(0.0, f64::max);
    Ok((Normalization { joining, breaking }, residual))
}

/// Runs the calibration once per process and checks it reproduces
/// [`CLASS_NORMALIZATION`].
pub fn verified_normalization() -> Result<Normalization> {
    static CHECK: OnceLock<std::result::Result<Normalization, String>> = OnceLock::new();
    CHECK
        .get_or_init(|| {
            let (fit, residual) = calibrate_class_normalization().map_err(|e| e.to_string())?;
            let ok = (fit.joining - CLASS_NORMALIZATION.joining).abs() < 1e-8
                && (fit.breaking - CLASS_NORMALIZATION.breaking).abs() < 1e-8
                && residual < 1e-8;
            if ok {
                Ok(CLASS_NORMALIZATION)
            } else {
                Err(format!(
                    "calibration gave {fit:?} (residual {residual:e}), expected {CLASS_NORMALIZATION:?}"
                ))
            }
        })
        .clone()
        .map_err(Error::Precondition)
}

/// Coefficient-for-coefficient comparison of a one-block row with the mean
/// dynamics.
fn check_mean_row(
    row: &BTreeMap<PartialPartition, f64>,
    expected: &BTreeMap<PartialPartition, f64>,
    pp: &PartialPartition,
) -> Result<()> {
    let keys: std::collections::BTreeSet<_> = row.keys().chain(expected.keys()).collect();
    for k in keys {
        let a = row.get(k).copied().unwrap_or(0.0);
        let b = expected.get(k).copied().unwrap_or(0.0);
        if (a - b).abs() > 1e-12 * (1.0 + b.abs()) {
            return Err(Error::Precondition(format!(
                "row {pp} disagrees with the mean dynamics at {k}: {a} vs {b}"
            )));
        }
    }
    Ok(())
}

/// Builds the closed system for all partial partitions of `support` relative
/// to the reference type `xstar`.
pub fn build_system(params: &ModelParams, xstar: &Genotype, support: SiteSet) -> Result<MomentSystem> {
    if params.b() != 0.0 {
        return Err(Error::ResamplingBreaksClosure(params.b()));
    }
    if support.len() > MAX_SUPPORT {
        return Err(Error::SizeCap {
            what: "hierarchy support",
            size: support.len(),
            cap: MAX_SUPPORT,
        });
    }
    if !support.is_subset_of(params.all_sites()) {
        return Err(Error::Precondition(format!(
            "support {support} is not a subset of the model's sites"
        )));
    }
    let reference = params.space().encode(xstar)?;
    let normalization = verified_normalization()?;
    let rates = marginal_rates(params.rho(), support);
    let index = enumerate_partial_partitions(support)?;
    let positions: HashMap<PartialPartition, usize> = index.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
    let mut rows = Vec::with_capacity(index.len());
    for pp in &index {
        let mut row = recombination_row(pp, &rates, params.pop_size());
        if let [a] = pp.blocks() {
            check_mean_row(
                &row,
                &mean_dynamics_row(&marginal_rates(&rates, *a), *a, params.pop_size()),
                pp,
            )?;
            let per_class = class_row(pp, &rates, params.pop_size(), normalization)?;
            check_mean_row(&row, &per_class, pp)?;
        }
        for (k, v) in mutation_row(pp, params, xstar)? {
            *row.entry(k).or_insert(0.0) += v;
        }
        let sparse: SparseRow =
            row.into_iter()
                .filter(|(_, v)| *v != 0.0)
                .map(|(k, v)| {
                    let c = positions.get(&k).copied().ok_or_else(|| {
                        Error::Precondition(format!("moment {k} escapes the index (closure violated)"))
                    })?;
                    Ok((c, v))
                })
                .collect::<Result<_>>()?;
        rows.push(sparse);
    }
    Ok(MomentSystem {
        support,
        index,
        positions,
        rows,
        xstar: xstar.clone(),
        reference,
        params: params.clone(),
        normalization,
    })
}

/// Integrates the system from the deterministic start `z0`.
pub fn solve(system: &MomentSystem, z0: &PopulationState, grid: &[f64]) -> Result<MomentSolution> {
    validate_grid(grid)?;
    let m0 = system.initial_vector(z0)?;
    let values = integrate(|_, m, dm| system.apply(m, dm), &m0, grid, Tolerances::default())?;
    Ok(MomentSolution {
        times: grid.to_vec(),
        index: system.index.clone(),
        values,
    })
}

fn two_sites_only(params: &ModelParams, what: &str) -> Result<f64> {
    if params.n_sites() != 2 {
        return Err(Error::Precondition(format!(
            "{what} needs exactly two sites, model has {}",
            params.n_sites()
        )));
    }
    let s = params.all_sites();
    // Σ over the two splits of ρ_G/(2N)·N, i.e. ρ_{{1}} = ρ_{{2}}
    Ok(s.subsets()
        .filter(|g| !g.is_empty() && *g != s)
        .map(|g| params.rho().get(g) / 2.0)
        .sum())
}

/// Closed-form two-site means with recombination and resampling.
///
/// With `u = E[[1,2]]`, `v = E[[1][2]]` and `LD = N·u − v`:
/// `u' = ρ/N·(v − N u)`, `v' = b/N·(N u − v)`, hence
/// `LD' = −(ρ + b/N)·LD`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoSiteMeanLd {
    pub rho: f64,
    pub b: f64,
    pub pop_size: f64,
    pub joint0: f64,
    pub product0: f64,
}

impl TwoSiteMeanLd {
    pub fn ld0(&self) -> f64 {
        self.pop_size * self.joint0 - self.product0
    }

    /// Decay rate of `E[LD_t]`.
    pub fn decay_rate(&self) -> f64 {
        self.rho + self.b / self.pop_size
    }

    /// `(E[[1,2]_t], E[[1]_t[2]_t], E[LD_t])`.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        let lambda = self.decay_rate();
        let ld0 = self.ld0();
        let decay = (-lambda * t).exp();
        // ∫_0^t e^{-λs} ds
        let integral = if lambda == 0.0 { t } else { (1.0 - decay) / lambda };
        let n = self.pop_size;
        let joint = self.joint0 - self.rho / n * ld0 * integral;
        let product = self.product0 + self.b / n * ld0 * integral;
        (joint, product, ld0 * decay)
    }
}

pub fn two_site_mean_ld(params: &ModelParams, z0: &PopulationState, xstar: &Genotype) -> Result<TwoSiteMeanLd> {
    let rho = two_sites_only(params, "two-site LD dynamics")?;
    if params.has_mutation() {
        return Err(Error::Precondition("two-site LD dynamics assume μ = 0".into()));
    }
    params.validate_state(z0)?;
    let space = params.space();
    let r = space.encode(xstar)?;
    let c = |v: &[usize]| z0.marginal_count(space, SiteSet::from_sites(v).expect("static"), r) as f64;
    Ok(TwoSiteMeanLd {
        rho,
        b: params.b(),
        pop_size: params.pop_size() as f64,
        joint0: c(&[1, 2]),
        product0: c(&[1]) * c(&[2]),
    })
}

/// Linear system for `E[[1,2]^k_t]`, `k = 0..=m`, in the two-site model with
/// recombination alone.
#[derive(Clone, Debug)]
pub struct TwoSiteMoments {
    pub order: usize,
    /// `matrix[k][j]`: coefficient of `E[X^j]` in `d/dt E[X^k]`.
    pub matrix: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl TwoSiteMoments {
    pub fn solve(&self, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        validate_grid(grid)?;
        integrate(
            |_, m, dm| {
                for (k, row) in self.matrix.iter().enumerate() {
                    dm[k] = row.iter().zip(m).map(|(a, b)| a * b).sum();
                }
            },
            &self.initial,
            grid,
            Tolerances::default(),
        )
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Builds the moment equations from the ±1 jumps of `X = [1,2]`:
/// up at rate `ρ/N·([1]−X)([2]−X)`, down at rate `ρ/N·X(N−[1]−[2]+X)`.
pub fn two_site_moments(
    params: &ModelParams,
    z0: &PopulationState,
    xstar: &Genotype,
    order: usize,
) -> Result<TwoSiteMoments> {
    let rho = two_sites_only(params, "two-site moments")?;
    if params.b() != 0.0 || params.has_mutation() {
        return Err(Error::Precondition("two-site moments assume b = 0 and μ = 0".into()));
    }
    params.validate_state(z0)?;
    let space = params.space();
    let r = space.encode(xstar)?;
    let c = |v: &[usize]| z0.marginal_count(space, SiteSet::from_sites(v).expect("static"), r) as f64;
    let (c1, c2, x0) = (c(&[1]), c(&[2]), c(&[1, 2]));
    let n = params.pop_size() as f64;
    let w = rho / n;
    // polynomials in X, lowest degree first
    let up = poly_mul(&[c1, -1.0], &[c2, -1.0]);
    let down = vec![0.0, n - c1 - c2, 1.0];
    let mut matrix = vec![vec![0.0; order + 1]; order + 1];
    for (k, row) in matrix.iter_mut().enumerate() {
        // (X+1)^k − X^k and (X−1)^k − X^k
        let mut plus = vec![0.0; k.max(1)];
        let mut minus = vec![0.0; k.max(1)];
        for j in 0..k {
            let bin = binomial(k, j);
            plus[j] = bin;
            minus[j] = bin * if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
        }
        let a = poly_mul(&up, &plus);
        let b = poly_mul(&down, &minus);
        for (j, (x, y)) in a.iter().zip(&b).enumerate() {
            let v = w * (x + y);
            if j <= order {
                row[j] = v;
            } else if v.abs() > 1e-9 * w.max(1.0) * n.powi(2) {
                return Err(Error::Precondition(format!(
                    "two-site moment equation of order {k} does not close"
                )));
            }
        }
    }
    let initial = (0..=order).map(|k| x0.powi(k as i32)).collect();
    Ok(TwoSiteMoments { order, matrix, initial })
}

/// Rate of the Poisson counter `⟨g₁,g₂⟩_t`:
/// `a = Σ_{H: |H∩pair|=1} ρ_H/(2N)·[g₁]₀·[g₂]₀`.
pub fn poisson_parameter(params: &ModelParams, z0: &PopulationState, xstar: &Genotype, pair: SiteSet) -> Result<f64> {
    if pair.len() != 2 || !pair.is_subset_of(params.all_sites()) {
        return Err(Error::Precondition(format!("{pair} is not a pair of model sites")));
    }
    if params.b() != 0.0 || params.has_mutation() {
        return Err(Error::Precondition("the Poisson law needs b = 0 and μ = 0".into()));
    }
    params.validate_state(z0)?;
    let space = params.space();
    let r = space.encode(xstar)?;
    let mut sites = pair.indices();
    let g1 = SiteSet::singleton(sites.next().expect("pair"));
    let g2 = SiteSet::singleton(sites.next().expect("pair"));
    let c1 = z0.marginal_count(space, g1, r) as f64;
    let c2 = z0.marginal_count(space, g2, r) as f64;
    let n = params.pop_size() as f64;
    let lumped: f64 = params
        .rho()
        .nonzero()
        .filter(|(h, _)| h.intersection(pair).len() == 1)
        .map(|(_, rate)| rate)
        .sum();
    Ok(lumped / (2.0 * n) * c1 * c2)
}

/// Whether `g` and its complement are both intervals of `1..=n`.
fn is_single_crossover(g: SiteSet, n: usize) -> bool {
    let full = SiteSet::full(n);
    if g.is_empty() || g == full {
        return false;
    }
    let prefix = |s: SiteSet| s.bits() & (s.bits() + 1) == 0;
    prefix(g) || prefix(g.complement_in(full))
}

/// Interval means `E[[i..j]_t]` under single-crossover recombination.
#[derive(Clone, Debug)]
pub struct SingleCrossoverSolution {
    pub times: Vec<f64>,
    /// Intervals as `(first, last)` 1-based site labels.
    pub intervals: Vec<(usize, usize)>,
    pub values: Vec<Vec<f64>>,
}

impl SingleCrossoverSolution {
    pub fn interval(&self, time_index: usize, first: usize, last: usize) -> Option<f64> {
        let k = self.intervals.iter().position(|&iv| iv == (first, last))?;
        Some(self.values[time_index][k])
    }

    /// `E[[1..n]_t]` on the grid.
    pub fn full(&self) -> Vec<f64> {
        let n = self.intervals.iter().map(|iv| iv.1).max().unwrap_or(0);
        let k = self
            .intervals
            .iter()
            .position(|&iv| iv == (1, n))
            .expect("full interval");
        self.values.iter().map(|v| v[k]).collect()
    }
}

/// Integrates `d/dt E[[I]] = Σ_H ρ^{(I)}_H/(2N)(E[[H]]E[[I∖H]] − N·E[[I]])` over
/// all intervals `I`.
pub fn single_crossover_system(
    params: &ModelParams,
    xstar: &Genotype,
    z0: &PopulationState,
    grid: &[f64],
) -> Result<SingleCrossoverSolution> {
    let n_sites = params.n_sites();
    if params.b() != 0.0 || params.has_mutation() {
        return Err(Error::Precondition(
            "single-crossover dynamics assume b = 0 and μ = 0".into(),
        ));
    }
    if let Some((g, _)) = params.rho().nonzero().find(|(g, _)| !is_single_crossover(*g, n_sites)) {
        return Err(Error::Precondition(format!(
            "rate for {g} is not a single-crossover rate"
        )));
    }
    validate_grid(grid)?;
    params.validate_state(z0)?;
    let space = params.space();
    let r = space.encode(xstar)?;
    let n = params.pop_size() as f64;
    let mut intervals = Vec::new();
    for i in 1..=n_sites {
        for j in i..=n_sites {
            intervals.push((i, j));
        }
    }
    let pos: HashMap<(usize, usize), usize> = intervals.iter().enumerate().map(|(k, &iv)| (iv, k)).collect();
    let as_set = |(i, j): (usize, usize)| SiteSet::from_indices(i - 1..j);
    // (target, left, right, weight) with weight ρ^{(I)}_H/(2N), H = [i..k]
    let mut terms: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); intervals.len()];
    for (idx, &(i, j)) in intervals.iter().enumerate() {
        let lumped = marginal_rates(params.rho(), as_set((i, j)));
        for k in i..j {
            let left = (i, k);
            let right = (k + 1, j);
            // H = left and H = right both split I the same way
            let w = (lumped.get(as_set(left)) + lumped.get(as_set(right))) / (2.0 * n);
            if w != 0.0 {
                terms[idx].push((pos[&left], pos[&right], w));
            }
        }
    }
    let m0: Vec<f64> = intervals
        .iter()
        .map(|&iv| z0.marginal_count(space, as_set(iv), r) as f64)
        .collect();
    let values = integrate(
        |_, m, dm| {
            for (k, ts) in terms.iter().enumerate() {
                dm[k] = ts.iter().map(|&(l, rr, w)| w * (m[l] * m[rr] - n * m[k])).sum();
            }
        },
        &m0,
        grid,
        Tolerances::default(),
    )?;
    Ok(SingleCrossoverSolution {
        times: grid.to_vec(),
        intervals,
        values,
    })
}
