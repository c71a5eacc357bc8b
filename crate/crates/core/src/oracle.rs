//! Exact finite-state oracle for tiny instances.
//!
//! Enumerates every population state, assembles the generator of the chain
//! from the base events (recombination, mutation, resampling) and computes
//! transient distributions by uniformization. Exact moments of products of
//! marginal counts and their time derivatives follow directly.

use crate::combinatorics::PartialPartition;
use crate::error::{Error, Result};
use crate::model::{Genotype, ModelParams, PopulationState, SignedUpdate, SiteSet, TypeSpace};
use crate::scalar::Scalar;
use std::collections::{BTreeMap, HashMap};

pub const MAX_ORACLE_STATES: usize = 200_000;

/// Poisson tail mass below which uniformization stops.
const TAIL: f64 = 1e-13;

/// Bijection between population states (compositions of `N` over `|X|`
/// types) and `0..len`.
#[derive(Clone, Debug)]
pub struct StateIndex {
    space: TypeSpace,
    pop_size: u64,
    states: Vec<Vec<u16>>,
    lookup: HashMap<Vec<u16>, usize>,
}

fn binomial_saturating(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u128::MAX;
        }
    }
    acc
}

impl StateIndex {
    pub fn new(space: &TypeSpace, pop_size: u64) -> Result<Self> {
        let types = space.size() as u64;
        let count = binomial_saturating(pop_size + types - 1, pop_size);
        if count > MAX_ORACLE_STATES as u128 {
            return Err(Error::SizeCap {
                what: "oracle state space",
                size: count.min(usize::MAX as u128) as usize,
                cap: MAX_ORACLE_STATES,
            });
        }
        let mut states = Vec::with_capacity(count as usize);
        let mut cur = vec![0u16; space.size()];
        fn rec(pos: usize, left: u64, cur: &mut Vec<u16>, out: &mut Vec<Vec<u16>>) {
            if pos + 1 == cur.len() {
                cur[pos] = left as u16;
                out.push(cur.clone());
                return;
            }
            for c in (0..=left).rev() {
                cur[pos] = c as u16;
                rec(pos + 1, left - c, cur, out);
            }
            cur[pos] = 0;
        }
        rec(0, pop_size, &mut cur, &mut states);
        debug_assert_eq!(states.len() as u128, count);
        let lookup = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(StateIndex {
            space: space.clone(),
            pop_size,
            states,
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> PopulationState {
        let counts = self.states[i].iter().map(|&c| c as u64).collect();
        PopulationState::from_counts(&self.space, counts).expect("indexed states match the space")
    }

    pub fn index_of(&self, z: &PopulationState) -> Option<usize> {
        let key: Vec<u16> = z.counts().iter().map(|&c| c as u16).collect();
        self.lookup.get(&key).copied()
    }

    /// `[A]` for every state.
    pub fn marginal_counts(&self, sites: SiteSet, reference: usize) -> Vec<u64> {
        let table = self.space.match_table(reference, sites);
        self.states
            .iter()
            .map(|s| s.iter().zip(&table).filter(|(_, &m)| m).map(|(&c, _)| c as u64).sum())
            .collect()
    }

    /// `∏_{A ∈ 𝒜} [A]` for every state; the empty collection gives 1.
    pub fn product_observable(&self, pp: &PartialPartition, reference: usize) -> Vec<f64> {
        let mut out = vec![1.0; self.len()];
        for &block in pp.blocks() {
            for (o, c) in out.iter_mut().zip(self.marginal_counts(block, reference)) {
                *o *= c as f64;
            }
        }
        out
    }

    pub fn pop_size(&self) -> u64 {
        self.pop_size
    }
}

/// Sparse generator: off-diagonal rates per row plus the diagonal.
#[derive(Clone, Debug)]
pub struct GeneratorMatrix<T> {
    pub off_diagonal: Vec<Vec<(usize, T)>>,
    pub diagonal: Vec<T>,
}

impl<T: Scalar> GeneratorMatrix<T> {
    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn entry(&self, from: usize, to: usize) -> T {
        if from == to {
            return self.diagonal[from].clone();
        }
        self.off_diagonal[from]
            .iter()
            .find(|(j, _)| *j == to)
            .map(|(_, r)| r.clone())
            .unwrap_or_else(T::zero)
    }

    pub fn row_sum(&self, row: usize) -> T {
        self.off_diagonal[row]
            .iter()
            .fold(self.diagonal[row].clone(), |acc, (_, r)| acc + r.clone())
    }

    pub fn is_zero(&self) -> bool {
        self.off_diagonal.iter().all(|r| r.is_empty())
    }
}

/// Aggregates all base events into net transition rates between distinct
/// states. Empty events contribute nothing.
pub fn build_generator_with<T: Scalar>(params: &ModelParams, index: &StateIndex) -> GeneratorMatrix<T> {
    let space = params.space();
    let n = params.pop_size();
    let four_n = T::from_count(4 * n);
    let two_n = T::from_count(2 * n);
    let rho: Vec<(SiteSet, T)> = params.rho().nonzero().map(|(g, r)| (g, T::from_rate(r))).collect();
    let b = T::from_rate(params.b());
    let mut off = Vec::with_capacity(index.len());
    let mut diag = Vec::with_capacity(index.len());
    let mut scratch = index.state(0);

    for s in 0..index.len() {
        let z = index.state(s);
        let support: Vec<(usize, u64)> = z.support().collect();
        let mut row: BTreeMap<usize, T> = BTreeMap::new();
        let mut push = |u: &SignedUpdate, rate: T, scratch: &mut PopulationState| {
            if u.is_zero() {
                return;
            }
            scratch.clone_from(&z);
            u.apply(scratch).expect("event sampled from the state");
            let target = index.index_of(scratch).expect("closed state space");
            let e = row.entry(target).or_insert_with(T::zero);
            *e = e.clone() + rate;
        };
        for (g, r) in &rho {
            for &(x, zx) in &support {
                for &(y, zy) in &support {
                    let u = SignedUpdate::recombination(space, *g, x, y);
                    let rate = r.clone() * T::from_count(zx) * T::from_count(zy) / four_n.clone();
                    push(&u, rate, &mut scratch);
                }
            }
        }
        for &(x, zx) in &support {
            for site in 0..space.n_sites() {
                let from = space.digit(x, site);
                for (to, &m) in params.mutation_matrix(site)[from].iter().enumerate() {
                    if m != 0.0 {
                        let u = SignedUpdate::mutation(space, x, site, to);
                        push(&u, T::from_rate(m) * T::from_count(zx), &mut scratch);
                    }
                }
            }
        }
        if params.b() != 0.0 {
            for &(x, zx) in &support {
                for &(y, zy) in &support {
                    if x != y {
                        let u = SignedUpdate::resampling(x, y);
                        let rate = b.clone() * T::from_count(zx) * T::from_count(zy) / two_n.clone();
                        push(&u, rate, &mut scratch);
                    }
                }
            }
        }
        let out_rate = row.values().fold(T::zero(), |acc, r| acc + r.clone());
        diag.push(T::zero() - out_rate);
        off.push(row.into_iter().collect());
    }
    GeneratorMatrix {
        off_diagonal: off,
        diagonal: diag,
    }
}

/// Exact oracle for one model: state index plus floating-point generator.
#[derive(Clone, Debug)]
pub struct ExactOracle {
    params: ModelParams,
    index: StateIndex,
    generator: GeneratorMatrix<f64>,
}

impl ExactOracle {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let index = StateIndex::new(params.space(), params.pop_size())?;
        let generator = build_generator_with::<f64>(params, &index);
        Ok(ExactOracle {
            params: params.clone(),
            index,
            generator,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn index(&self) -> &StateIndex {
        &self.index
    }

    pub fn generator(&self) -> &GeneratorMatrix<f64> {
        &self.generator
    }

    /// Point mass on `z0`.
    pub fn point_mass(&self, z0: &PopulationState) -> Result<Vec<f64>> {
        self.params.validate_state(z0)?;
        let i = self
            .index
            .index_of(z0)
            .ok_or_else(|| Error::InvalidState("state not in the oracle index".into()))?;
        let mut p = vec![0.0; self.index.len()];
        p[i] = 1.0;
        Ok(p)
    }

    /// `p0 · e^{Qt}` by uniformization.
    pub fn transient_distribution(&self, p0: &[f64], t: f64) -> Result<Vec<f64>> {
        transient_distribution(&self.generator, p0, t)
    }

    /// `E[∏_{A∈𝒜} [A]_t]` started from `p0`.
    pub fn exact_moment(&self, p0: &[f64], pp: &PartialPartition, xstar: &Genotype, t: f64) -> Result<f64> {
        let pt = self.transient_distribution(p0, t)?;
        self.moment_of(&pt, pp, xstar)
    }

    /// `Σ_s p(s) ∏_{A∈𝒜} [A](s)`.
    pub fn moment_of(&self, p: &[f64], pp: &PartialPartition, xstar: &Genotype) -> Result<f64> {
        let reference = self.params.space().encode(xstar)?;
        let f = self.index.product_observable(pp, reference);
        Ok(p.iter().zip(&f).map(|(a, b)| a * b).sum())
    }

    /// Time derivative of the moment at distribution `p`: `Σ_s (pQ)(s) f(s)`.
    pub fn exact_moment_derivative(&self, p: &[f64], pp: &PartialPartition, xstar: &Genotype) -> Result<f64> {
        let flow = apply_left(&self.generator, p);
        self.moment_of(&flow, pp, xstar)
    }
}

/// Row vector times generator, `pQ`.
pub fn apply_left(q: &GeneratorMatrix<f64>, p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; q.dim()];
    for (i, &pi) in p.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        out[i] += pi * q.diagonal[i];
        for &(j, r) in &q.off_diagonal[i] {
            out[j] += pi * r;
        }
    }
    out
}

/// `p0 · e^{Qt}` by uniformization, truncating each chunk once the Poisson tail
/// drops below `1e-13`.
pub fn transient_distribution(q: &GeneratorMatrix<f64>, p0: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Precondition(format!(
            "time must be finite and nonnegative, got {t}"
        )));
    }
    if p0.len() != q.dim() {
        return Err(Error::Precondition(
            "distribution length does not match the generator".into(),
        ));
    }
    let lambda = q.diagonal.iter().fold(0.0f64, |m, &d| m.max(-d));
    if t == 0.0 || lambda == 0.0 {
        return Ok(p0.to_vec());
    }
    // keep λ·dt moderate so e^{-λ dt} stays representable
    let chunks = (lambda * t / 50.0).ceil().max(1.0) as usize;
    let dt = t / chunks as f64;
    let mut p = p0.to_vec();
    for _ in 0..chunks {
        p = uniformization_step(q, &p, lambda, dt);
    }
    Ok(p)
}

fn uniformization_step(q: &GeneratorMatrix<f64>, p0: &[f64], lambda: f64, dt: f64) -> Vec<f64> {
    let lt = lambda * dt;
    let mut weight = (-lt).exp();
    let mut cumulative = weight;
    let mut v = p0.to_vec();
    let mut out: Vec<f64> = v.iter().map(|x| x * weight).collect();
    let mut k = 0usize;
    while 1.0 - cumulative > TAIL && k < 100_000 {
        k += 1;
        // v ← v (I + Q/λ)
        let mut next: Vec<f64> = v
            .iter()
            .zip(&q.diagonal)
            .map(|(&vi, &d)| vi * (1.0 + d / lambda))
            .collect();
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for &(j, r) in &q.off_diagonal[i] {
                next[j] += vi * r / lambda;
            }
        }
        v = next;
        weight *= lt / k as f64;
        cumulative += weight;
        for (o, vi) in out.iter_mut().zip(&v) {
            *o += weight * vi;
        }
    }
    out
}
