//! Type space, population states, model parameters and the elementary
//! recombination algebra.
//!
//! Sites are stored 0-based internally (site `i` of the model is bit `i-1` of
//! a [`SiteSet`]) and printed 1-based. Genotypes carry 0-based allele indices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

pub const MAX_SITES: usize = 16;

/// Largest type space the dense state representations accept.
pub const MAX_TYPES: usize = 1 << 20;

/// A subset of the sites `{1, …, n}` as a bit mask.
///
/// Ordered lexicographically by increasing site lists, so `{1,3} < {2}`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SiteSet(u32);

impl Ord for SiteSet {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.indices().cmp(other.indices())
    }
}

impl PartialOrd for SiteSet {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl SiteSet {
    pub const EMPTY: SiteSet = SiteSet(0);

    pub fn from_bits(bits: u32) -> Result<Self> {
        if bits >> MAX_SITES != 0 {
            return Err(Error::InvalidModel(format!(
                "site mask {bits:#x} uses sites beyond {MAX_SITES}"
            )));
        }
        Ok(SiteSet(bits))
    }

    /// The full site set `S = {1, …, n}`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_SITES, "at most {MAX_SITES} sites");
        SiteSet(((1u64 << n) - 1) as u32)
    }

    /// Builds a set from 1-based site labels.
    pub fn from_sites(sites: &[usize]) -> Result<Self> {
        let mut bits = 0u32;
        for &s in sites {
            if s == 0 || s > MAX_SITES {
                return Err(Error::InvalidModel(format!("site label {s} outside 1..={MAX_SITES}")));
            }
            bits |= 1 << (s - 1);
        }
        Ok(SiteSet(bits))
    }

    /// Builds a set from 0-based site indices.
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut bits = 0u32;
        for i in indices {
            assert!(i < MAX_SITES);
            bits |= 1 << i;
        }
        SiteSet(bits)
    }

    pub fn singleton(index: usize) -> Self {
        assert!(index < MAX_SITES);
        SiteSet(1 << index)
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn contains(self, index: usize) -> bool {
        self.0 >> index & 1 == 1
    }

    #[inline]
    pub fn union(self, other: SiteSet) -> SiteSet {
        SiteSet(self.0 | other.0)
    }

    #[inline]
    pub fn intersection(self, other: SiteSet) -> SiteSet {
        SiteSet(self.0 & other.0)
    }

    #[inline]
    pub fn difference(self, other: SiteSet) -> SiteSet {
        SiteSet(self.0 & !other.0)
    }

    /// Complement relative to an explicit universe.
    #[inline]
    pub fn complement_in(self, universe: SiteSet) -> SiteSet {
        SiteSet(universe.0 & !self.0)
    }

    #[inline]
    pub fn is_subset_of(self, other: SiteSet) -> bool {
        self.0 & !other.0 == 0
    }

    #[inline]
    pub fn is_disjoint(self, other: SiteSet) -> bool {
        self.0 & other.0 == 0
    }

    /// 0-based site indices in increasing order.
    pub fn indices(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..MAX_SITES).filter(move |i| bits >> i & 1 == 1)
    }

    /// 1-based site labels in increasing order.
    pub fn sites(self) -> Vec<usize> {
        self.indices().map(|i| i + 1).collect()
    }

    /// All subsets of `self`, including the empty set and `self`.
    pub fn subsets(self) -> Subsets {
        Subsets {
            mask: self.0,
            next: Some(self.0),
        }
    }
}

impl fmt::Debug for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, s) in self.sites().into_iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{s}")?;
        }
        f.write_str("}")
    }
}

/// Submask enumeration, from the full mask down to the empty set.
pub struct Subsets {
    mask: u32,
    next: Option<u32>,
}

impl Iterator for Subsets {
    type Item = SiteSet;

    fn next(&mut self) -> Option<SiteSet> {
        let cur = self.next?;
        self.next = if cur == 0 { None } else { Some((cur - 1) & self.mask) };
        Some(SiteSet(cur))
    }
}

/// A full type: one allele index per site.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Genotype(pub Vec<u16>);

impl Genotype {
    pub fn new(alleles: Vec<u16>) -> Self {
        Genotype(alleles)
    }

    pub fn alleles(&self) -> &[u16] {
        &self.0
    }

    pub fn n_sites(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (k, a) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

/// The restriction of a genotype to a site subset, in site order.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct MarginalType {
    pub sites: SiteSet,
    pub alleles: Vec<u16>,
}

/// Recombination map: alleles of `x` on `g`, alleles of `y` elsewhere.
pub fn recombine(x: &Genotype, y: &Genotype, g: SiteSet) -> Genotype {
    debug_assert_eq!(x.n_sites(), y.n_sites());
    Genotype(
        x.0.iter()
            .zip(&y.0)
            .enumerate()
            .map(|(i, (&a, &b))| if g.contains(i) { a } else { b })
            .collect(),
    )
}

/// Canonical projection onto the sites of `sites`.
pub fn project(x: &Genotype, sites: SiteSet) -> MarginalType {
    MarginalType {
        sites,
        alleles: sites.indices().map(|i| x.0[i]).collect(),
    }
}

/// The product type space `X = X_1 × … × X_n` with a mixed-radix index.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TypeSpace {
    allele_counts: Vec<u16>,
    strides: Vec<usize>,
    size: usize,
}

impl TypeSpace {
    pub fn new(allele_counts: Vec<u16>) -> Result<Self> {
        let n = allele_counts.len();
        if n == 0 || n > MAX_SITES {
            return Err(Error::InvalidModel(format!("site count {n} outside 1..={MAX_SITES}")));
        }
        if let Some(i) = allele_counts.iter().position(|&a| a == 0) {
            return Err(Error::InvalidModel(format!("site {} has no alleles", i + 1)));
        }
        let mut strides = Vec::with_capacity(n);
        let mut size = 1usize;
        for &a in &allele_counts {
            strides.push(size);
            size = size
                .checked_mul(a as usize)
                .filter(|&s| s <= MAX_TYPES)
                .ok_or(Error::SizeCap {
                    what: "type space",
                    size: usize::MAX,
                    cap: MAX_TYPES,
                })?;
        }
        Ok(TypeSpace {
            allele_counts,
            strides,
            size,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.allele_counts.len()
    }

    pub fn allele_counts(&self) -> &[u16] {
        &self.allele_counts
    }

    /// `|X|`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn all_sites(&self) -> SiteSet {
        SiteSet::full(self.n_sites())
    }

    pub fn validate(&self, x: &Genotype) -> Result<()> {
        if x.n_sites() != self.n_sites() {
            return Err(Error::InvalidGenotype(format!(
                "{x} has {} sites, model has {}",
                x.n_sites(),
                self.n_sites()
            )));
        }
        for (i, (&a, &k)) in x.0.iter().zip(&self.allele_counts).enumerate() {
            if a >= k {
                return Err(Error::InvalidGenotype(format!(
                    "{x}: allele {a} at site {} but the site has {k} alleles",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn encode(&self, x: &Genotype) -> Result<usize> {
        self.validate(x)?;
        Ok(x.0.iter().zip(&self.strides).map(|(&a, &s)| a as usize * s).sum())
    }

    pub fn decode(&self, index: usize) -> Genotype {
        debug_assert!(index < self.size);
        Genotype((0..self.n_sites()).map(|i| self.digit(index, i) as u16).collect())
    }

    #[inline]
    pub fn digit(&self, index: usize, site: usize) -> usize {
        index / self.strides[site] % self.allele_counts[site] as usize
    }

    #[inline]
    pub fn with_digit(&self, index: usize, site: usize, allele: usize) -> usize {
        index - self.digit(index, site) * self.strides[site] + allele * self.strides[site]
    }

    /// Index of `recombine(x, y, g)`.
    #[inline]
    pub fn recombine_index(&self, x: usize, y: usize, g: SiteSet) -> usize {
        let mut out = 0;
        for i in 0..self.n_sites() {
            let d = if g.contains(i) {
                self.digit(x, i)
            } else {
                self.digit(y, i)
            };
            out += d * self.strides[i];
        }
        out
    }

    /// Whether types `a` and `b` agree on every site of `sites`.
    #[inline]
    pub fn agree_on(&self, a: usize, b: usize, sites: SiteSet) -> bool {
        sites.indices().all(|i| self.digit(a, i) == self.digit(b, i))
    }

    /// `match[t]` is true iff type `t` agrees with `reference` on `sites`.
    pub fn match_table(&self, reference: usize, sites: SiteSet) -> Vec<bool> {
        (0..self.size).map(|t| self.agree_on(t, reference, sites)).collect()
    }
}

/// Counting measure on `X` with total mass `N`, stored densely by type index.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PopulationState {
    counts: Vec<u64>,
    size: u64,
}

impl PopulationState {
    pub fn from_counts(space: &TypeSpace, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != space.size() {
            return Err(Error::InvalidState(format!(
                "count vector has length {}, type space has {} types",
                counts.len(),
                space.size()
            )));
        }
        let size = counts.iter().sum();
        Ok(PopulationState { counts, size })
    }

    pub fn from_pairs<'a, I>(space: &TypeSpace, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a Genotype, u64)>,
    {
        let mut counts = vec![0; space.size()];
        for (g, c) in pairs {
            counts[space.encode(g)?] += c;
        }
        Self::from_counts(space, counts)
    }

    /// All `n` individuals of the single type `x`.
    pub fn monomorphic(space: &TypeSpace, x: &Genotype, n: u64) -> Result<Self> {
        Self::from_pairs(space, [(x, n)])
    }

    /// `N`.
    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn count_of(&self, space: &TypeSpace, x: &Genotype) -> Result<u64> {
        Ok(self.counts[space.encode(x)?])
    }

    /// Types with positive count, as `(index, count)`.
    pub fn support(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
    }

    /// `[A]`: number of individuals agreeing with `reference` on `sites`.
    pub fn marginal_count(&self, space: &TypeSpace, sites: SiteSet, reference: usize) -> u64 {
        if sites.is_empty() {
            return self.size;
        }
        self.support()
            .filter(|&(t, _)| space.agree_on(t, reference, sites))
            .map(|(_, c)| c)
            .sum()
    }

    pub fn to_pairs(&self, space: &TypeSpace) -> Vec<(Genotype, u64)> {
        self.support().map(|(i, c)| (space.decode(i), c)).collect()
    }
}

/// Marginal counting measure on `X_I`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MarginalPopulationState {
    pub sites: SiteSet,
    pub counts: BTreeMap<Vec<u16>, u64>,
}

impl MarginalPopulationState {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn count(&self, marginal: &[u16]) -> u64 {
        self.counts.get(marginal).copied().unwrap_or(0)
    }
}

/// Pushforward of `z` under the projection onto `sites`.
pub fn marginalize(space: &TypeSpace, z: &PopulationState, sites: SiteSet) -> MarginalPopulationState {
    let mut counts = BTreeMap::new();
    for (t, c) in z.support() {
        let key: Vec<u16> = sites.indices().map(|i| space.digit(t, i) as u16).collect();
        *counts.entry(key).or_insert(0) += c;
    }
    MarginalPopulationState { sites, counts }
}

/// Restriction of a marginal measure on `X_J` to `X_I` for `I ⊆ J`.
pub fn marginalize_marginal(m: &MarginalPopulationState, sites: SiteSet) -> Result<MarginalPopulationState> {
    if !sites.is_subset_of(m.sites) {
        return Err(Error::Precondition(format!("{sites} is not a subset of {}", m.sites)));
    }
    let positions: Vec<usize> = m
        .sites
        .indices()
        .enumerate()
        .filter(|(_, i)| sites.contains(*i))
        .map(|(k, _)| k)
        .collect();
    let mut counts = BTreeMap::new();
    for (key, &c) in &m.counts {
        let sub: Vec<u16> = positions.iter().map(|&k| key[k]).collect();
        *counts.entry(sub).or_insert(0) += c;
    }
    Ok(MarginalPopulationState { sites, counts })
}

/// Net change of a counting measure caused by one event, keyed by type index.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct SignedUpdate {
    deltas: BTreeMap<usize, i64>,
}

impl SignedUpdate {
    fn add(&mut self, t: usize, d: i64) {
        let e = self.deltas.entry(t).or_insert(0);
        *e += d;
        if *e == 0 {
            self.deltas.remove(&t);
        }
    }

    /// `−δ_x − δ_y + δ_{p_G(x,y)} + δ_{p_Ḡ(x,y)}`.
    pub fn recombination(space: &TypeSpace, g: SiteSet, x: usize, y: usize) -> Self {
        let mut u = SignedUpdate::default();
        u.add(x, -1);
        u.add(y, -1);
        u.add(space.recombine_index(x, y, g), 1);
        u.add(space.recombine_index(y, x, g), 1);
        u
    }

    pub fn mutation(space: &TypeSpace, x: usize, site: usize, target: usize) -> Self {
        let mut u = SignedUpdate::default();
        u.add(x, -1);
        u.add(space.with_digit(x, site, target), 1);
        u
    }

    /// Offspring of `parent` replaces an individual of type `replaced`.
    pub fn resampling(parent: usize, replaced: usize) -> Self {
        let mut u = SignedUpdate::default();
        u.add(parent, 1);
        u.add(replaced, -1);
        u
    }

    pub fn is_zero(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn total(&self) -> i64 {
        self.deltas.values().sum()
    }

    pub fn deltas(&self) -> &BTreeMap<usize, i64> {
        &self.deltas
    }

    pub fn delta(&self, t: usize) -> i64 {
        self.deltas.get(&t).copied().unwrap_or(0)
    }

    pub fn by_genotype(&self, space: &TypeSpace) -> BTreeMap<Genotype, i64> {
        self.deltas.iter().map(|(&t, &d)| (space.decode(t), d)).collect()
    }

    pub fn apply(&self, z: &mut PopulationState) -> Result<()> {
        for (&t, &d) in &self.deltas {
            let c = z.counts[t] as i64 + d;
            if c < 0 {
                return Err(Error::InvalidState(format!("update drives type {t} negative")));
            }
        }
        for (&t, &d) in &self.deltas {
            z.counts[t] = (z.counts[t] as i64 + d) as u64;
        }
        z.size = (z.size as i64 + self.total()) as u64;
        Ok(())
    }

    pub fn applied(&self, z: &PopulationState) -> Result<PopulationState> {
        let mut out = z.clone();
        self.apply(&mut out)?;
        Ok(out)
    }
}

/// Recombination update `v_{G,x,y}` for genotypes.
pub fn recombination_update(space: &TypeSpace, g: SiteSet, x: &Genotype, y: &Genotype) -> Result<SignedUpdate> {
    Ok(SignedUpdate::recombination(
        space,
        g,
        space.encode(x)?,
        space.encode(y)?,
    ))
}

/// Map from subsets of a universe to nonnegative rates, stored densely.
#[derive(Clone, PartialEq, Debug)]
pub struct RateMap {
    universe: SiteSet,
    rates: Vec<f64>,
}

impl RateMap {
    pub fn zeros(universe: SiteSet) -> Self {
        let top = universe.bits() as usize;
        RateMap {
            universe,
            rates: vec![0.0; top + 1],
        }
    }

    pub fn universe(&self) -> SiteSet {
        self.universe
    }

    #[inline]
    pub fn get(&self, g: SiteSet) -> f64 {
        if g.is_subset_of(self.universe) {
            self.rates[g.bits() as usize]
        } else {
            0.0
        }
    }

    /// Sets the rate of `g` without mirroring.
    pub fn set_raw(&mut self, g: SiteSet, rate: f64) {
        assert!(g.is_subset_of(self.universe));
        self.rates[g.bits() as usize] = rate;
    }

    pub fn iter(&self) -> impl Iterator<Item = (SiteSet, f64)> + '_ {
        self.universe.subsets().map(move |g| (g, self.get(g)))
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (SiteSet, f64)> + '_ {
        self.iter().filter(|(_, r)| *r != 0.0)
    }

    /// `Σ_G ρ_G` over all subsets.
    pub fn total(&self) -> f64 {
        self.iter().map(|(_, r)| r).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.iter().all(|(g, r)| r == self.get(g.complement_in(self.universe)))
    }
}

/// Parameters of the Moran model with recombination, mutation and resampling.
#[derive(Clone, PartialEq, Debug)]
pub struct ModelParams {
    space: TypeSpace,
    pop_size: u64,
    rho: RateMap,
    /// `mu[i][a][b]`: rate of allele `a → b` at site `i`; zero diagonal.
    mu: Vec<Vec<Vec<f64>>>,
    b: f64,
}

impl ModelParams {
    /// Model with all rates zero.
    pub fn new(allele_counts: Vec<u16>, pop_size: u64) -> Result<Self> {
        let space = TypeSpace::new(allele_counts)?;
        if pop_size == 0 {
            return Err(Error::InvalidModel("population size must be positive".into()));
        }
        let rho = RateMap::zeros(space.all_sites());
        let mu = space
            .allele_counts()
            .iter()
            .map(|&k| vec![vec![0.0; k as usize]; k as usize])
            .collect();
        Ok(ModelParams {
            space,
            pop_size,
            rho,
            mu,
            b: 0.0,
        })
    }

    /// Same rates with population size `n`.
    pub fn with_pop_size(&self, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidModel("population size must be positive".into()));
        }
        let mut out = self.clone();
        out.pop_size = n;
        Ok(out)
    }

    /// Sets `ρ_G` and its mirror `ρ_Ḡ`. Setting a pair that already carries a
    /// different nonzero rate is a conflict.
    pub fn set_rho(&mut self, g: SiteSet, rate: f64) -> Result<()> {
        let s = self.space.all_sites();
        if !g.is_subset_of(s) {
            return Err(Error::InvalidModel(format!("rho for {g}: not a subset of {s}")));
        }
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "rho for {g} must be finite and nonnegative, got {rate}"
            )));
        }
        if (g.is_empty() || g == s) && rate != 0.0 {
            let which = if g.is_empty() { "∅" } else { "the full site set" };
            return Err(Error::InvalidModel(format!("rho for {which} must be 0")));
        }
        let gc = g.complement_in(s);
        let cur = self.rho.get(g);
        if cur != 0.0 && cur != rate {
            return Err(Error::InvalidModel(format!(
                "conflicting rho for {g} / {gc}: {cur} vs {rate}"
            )));
        }
        self.rho.set_raw(g, rate);
        self.rho.set_raw(gc, rate);
        Ok(())
    }

    pub fn with_rho(mut self, g: SiteSet, rate: f64) -> Result<Self> {
        self.set_rho(g, rate)?;
        Ok(self)
    }

    /// Sets `μ^site_{from,to}` (0-based site). Diagonal entries are forced to 0.
    pub fn set_mutation(&mut self, site: usize, from: u16, to: u16, rate: f64) -> Result<()> {
        let k = *self
            .space
            .allele_counts()
            .get(site)
            .ok_or_else(|| Error::InvalidModel(format!("mutation at site {} outside the model", site + 1)))?;
        if from >= k || to >= k {
            return Err(Error::InvalidModel(format!(
                "mutation {from}->{to} at site {}: site has {k} alleles",
                site + 1
            )));
        }
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "mutation rate must be finite and nonnegative, got {rate}"
            )));
        }
        if from != to {
            self.mu[site][from as usize][to as usize] = rate;
        }
        Ok(())
    }

    pub fn with_mutation(mut self, site: usize, from: u16, to: u16, rate: f64) -> Result<Self> {
        self.set_mutation(site, from, to, rate)?;
        Ok(self)
    }

    pub fn set_resampling(&mut self, b: f64) -> Result<()> {
        if !(b.is_finite() && b >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "resampling rate must be finite and nonnegative, got {b}"
            )));
        }
        self.b = b;
        Ok(())
    }

    pub fn with_resampling(mut self, b: f64) -> Result<Self> {
        self.set_resampling(b)?;
        Ok(self)
    }

    pub fn space(&self) -> &TypeSpace {
        &self.space
    }

    pub fn n_sites(&self) -> usize {
        self.space.n_sites()
    }

    pub fn all_sites(&self) -> SiteSet {
        self.space.all_sites()
    }

    /// `N`.
    pub fn pop_size(&self) -> u64 {
        self.pop_size
    }

    pub fn rho(&self) -> &RateMap {
        &self.rho
    }

    pub fn mu(&self, site: usize, from: usize, to: usize) -> f64 {
        self.mu[site][from][to]
    }

    pub fn mutation_matrix(&self, site: usize) -> &[Vec<f64>] {
        &self.mu[site]
    }

    /// Total outflow rate `Σ_{y≠a} μ^site_{a y}`.
    pub fn mutation_out_rate(&self, site: usize, allele: usize) -> f64 {
        self.mu[site][allele].iter().sum()
    }

    pub fn has_mutation(&self) -> bool {
        self.mu.iter().flatten().flatten().any(|&r| r != 0.0)
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn validate_state(&self, z: &PopulationState) -> Result<()> {
        if z.counts().len() != self.space.size() {
            return Err(Error::InvalidState("state does not match the type space".into()));
        }
        if z.size() != self.pop_size {
            return Err(Error::InvalidState(format!(
                "state has mass {}, model has N = {}",
                z.size(),
                self.pop_size
            )));
        }
        Ok(())
    }

    /// Same model restricted to the sites of `sites`, with lumped recombination
    /// rates `ρ^{(I)}`; the marginal process is again a model of this kind.
    pub fn marginal_model(&self, sites: SiteSet) -> Result<ModelParams> {
        if sites.is_empty() || !sites.is_subset_of(self.all_sites()) {
            return Err(Error::Precondition(format!(
                "marginal model needs a nonempty subset of the sites, got {sites}"
            )));
        }
        let idx: Vec<usize> = sites.indices().collect();
        let counts = idx.iter().map(|&i| self.space.allele_counts()[i]).collect();
        let mut out = ModelParams::new(counts, self.pop_size)?;
        let lumped = crate::combinatorics::marginal_rates(&self.rho, sites);
        for (h, r) in lumped.iter() {
            let local = SiteSet::from_indices(idx.iter().enumerate().filter(|(_, &i)| h.contains(i)).map(|(k, _)| k));
            out.rho.set_raw(local, r);
        }
        // ρ^{(I)}_∅ and ρ^{(I)}_I describe events that leave the marginal untouched.
        let full = out.all_sites();
        out.rho.set_raw(SiteSet::EMPTY, 0.0);
        out.rho.set_raw(full, 0.0);
        for (k, &i) in idx.iter().enumerate() {
            out.mu[k] = self.mu[i].clone();
        }
        out.b = self.b;
        Ok(out)
    }
}

/// Base rate `ρ_G/(4N)·z(x)·z(y)` of one ordered recombination event.
pub fn base_recombination_rate<T: Scalar>(params: &ModelParams, g: SiteSet, zx: u64, zy: u64) -> T {
    T::from_rate(params.rho().get(g)) * T::from_count(zx) * T::from_count(zy)
        / (T::from_count(4) * T::from_count(params.pop_size()))
}

/// Rates of the true jumps `z(x*) → z(x*) ± 1` in the recombination-only model,
/// as `(up, down)`.
pub fn true_jump_rates<T: Scalar>(params: &ModelParams, z: &PopulationState, xstar: &Genotype) -> Result<(T, T)> {
    if params.b() != 0.0 || params.has_mutation() {
        return Err(Error::Precondition(
            "true-jump rates are defined for recombination alone (b = 0, μ = 0)".into(),
        ));
    }
    params.validate_state(z)?;
    let space = params.space();
    let xs = space.encode(xstar)?;
    let s = params.all_sites();
    let n = T::from_count(params.pop_size());
    let zx = T::from_count(z.count(xs));
    let two_n = T::from_count(2) * n.clone();
    let mut up = T::zero();
    let mut down = T::zero();
    for (g, r) in params.rho().nonzero() {
        let mg = T::from_count(z.marginal_count(space, g, xs));
        let mgc = T::from_count(z.marginal_count(space, g.complement_in(s), xs));
        let w = T::from_rate(r) / two_n.clone();
        up = up + w.clone() * (mg.clone() - zx.clone()) * (mgc.clone() - zx.clone());
        down = down + w * zx.clone() * (n.clone() - mg - mgc + zx.clone());
    }
    Ok((up, down))
}
