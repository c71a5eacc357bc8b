//! Subset and partition combinatorics behind the moment hierarchy.

use crate::error::{Error, Result};
use crate::model::{RateMap, SiteSet};
use std::fmt;
use std::str::FromStr;

/// Largest support accepted by [`enumerate_partial_partitions`].
pub const MAX_PARTITION_SUPPORT: usize = 10;

/// `G | {A_j}`: `G` splits every block nontrivially, `∅ ≠ G ∩ A_j ≠ A_j`.
///
/// An empty collection is disrupted by every `G` (vacuously).
pub fn disrupts(g: SiteSet, blocks: &[SiteSet]) -> bool {
    blocks.iter().all(|&a| {
        let c = g.intersection(a);
        !c.is_empty() && c != a
    })
}

/// Lumped rates `ρ^{(I)}_H = Σ_{G: G∩I = H} ρ_G` for all `H ⊆ I`.
pub fn marginal_rates(rho: &RateMap, sites: SiteSet) -> RateMap {
    let sites = sites.intersection(rho.universe());
    let mut out = RateMap::zeros(sites);
    for (g, r) in rho.nonzero() {
        let h = g.intersection(sites);
        out.set_raw(h, out.get(h) + r);
    }
    out
}

/// `ρ^I_{K,G} = Σ_{D ⊆ A_I} Σ_{H ⊆ A_K, H | {A_k}} ρ_{H ∪ D ∪ G}`.
pub fn rho_ikg(rho: &RateMap, a_i: SiteSet, k_blocks: &[SiteSet], g: SiteSet) -> f64 {
    let a_k = k_blocks.iter().fold(SiteSet::EMPTY, |acc, &b| acc.union(b));
    debug_assert!(a_i.is_disjoint(a_k) && a_i.is_disjoint(g) && a_k.is_disjoint(g));
    let mut total = 0.0;
    for h in a_k.subsets().filter(|&h| disrupts(h, k_blocks)) {
        for d in a_i.subsets() {
            total += rho.get(h.union(d).union(g));
        }
    }
    total
}

/// A set of pairwise disjoint nonempty site sets, kept sorted.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct PartialPartition {
    blocks: Vec<SiteSet>,
}

impl PartialPartition {
    pub fn empty() -> Self {
        PartialPartition { blocks: Vec::new() }
    }

    pub fn new(mut blocks: Vec<SiteSet>) -> Result<Self> {
        let mut seen = SiteSet::EMPTY;
        for &b in &blocks {
            if b.is_empty() {
                return Err(Error::Precondition("partial partition with an empty block".into()));
            }
            if !b.is_disjoint(seen) {
                return Err(Error::Precondition(format!("block {b} overlaps another block")));
            }
            seen = seen.union(b);
        }
        blocks.sort();
        Ok(PartialPartition { blocks })
    }

    /// Builds from blocks that may contain empty sets, dropping them. Returns
    /// the partition and the number of dropped blocks.
    pub(crate) fn from_blocks_dropping_empty(blocks: &[SiteSet]) -> (Self, u32) {
        let mut kept: Vec<SiteSet> = blocks.iter().copied().filter(|b| !b.is_empty()).collect();
        let dropped = (blocks.len() - kept.len()) as u32;
        kept.sort();
        debug_assert!(kept.windows(2).all(|w| w[0].is_disjoint(w[1])));
        (PartialPartition { blocks: kept }, dropped)
    }

    /// The partition of `sites` into singletons.
    pub fn singletons(sites: SiteSet) -> Self {
        PartialPartition {
            blocks: sites.indices().map(SiteSet::singleton).collect(),
        }
    }

    pub fn blocks(&self) -> &[SiteSet] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn support(&self) -> SiteSet {
        self.blocks.iter().fold(SiteSet::EMPTY, |acc, &b| acc.union(b))
    }
}

impl fmt::Display for PartialPartition {
    /// Blocks joined by `|`, e.g. `{1,3}|{2}`; the empty collection is `{}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.blocks.is_empty() {
            return f.write_str("{}");
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if k > 0 {
                f.write_str("|")?;
            }
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl FromStr for PartialPartition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "{}" {
            return Ok(PartialPartition::empty());
        }
        let mut blocks = Vec::new();
        for part in s.split('|') {
            let inner = part
                .trim()
                .strip_prefix('{')
                .and_then(|p| p.strip_suffix('}'))
                .ok_or_else(|| Error::Config(format!("malformed block `{part}`")))?;
            let sites = inner
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("malformed site `{t}` in `{part}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            blocks.push(SiteSet::from_sites(&sites)?);
        }
        PartialPartition::new(blocks)
    }
}

/// All partial partitions of `support`, including the empty collection,
/// sorted.
pub fn enumerate_partial_partitions(support: SiteSet) -> Result<Vec<PartialPartition>> {
    if support.len() > MAX_PARTITION_SUPPORT {
        return Err(Error::SizeCap {
            what: "partial-partition support",
            size: support.len(),
            cap: MAX_PARTITION_SUPPORT,
        });
    }
    let sites: Vec<usize> = support.indices().collect();
    let mut out = Vec::new();
    let mut blocks: Vec<SiteSet> = Vec::new();
    fn rec(sites: &[usize], blocks: &mut Vec<SiteSet>, out: &mut Vec<PartialPartition>) {
        let Some((&s, rest)) = sites.split_first() else {
            let mut b = blocks.clone();
            b.sort();
            out.push(PartialPartition { blocks: b });
            return;
        };
        // site left out
        rec(rest, blocks, out);
        // site joins an existing block
        for k in 0..blocks.len() {
            let old = blocks[k];
            blocks[k] = old.union(SiteSet::singleton(s));
            rec(rest, blocks, out);
            blocks[k] = old;
        }
        // site opens a new block
        blocks.push(SiteSet::singleton(s));
        rec(rest, blocks, out);
        blocks.pop();
    }
    rec(&sites, &mut blocks, &mut out);
    out.sort();
    Ok(out)
}

/// An ordered triple `(I, J, K)` of disjoint sets covering `{1, …, m}`, stored
/// as masks over 0-based block positions.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct TripleIjk {
    pub m: usize,
    pub i: u32,
    pub j: u32,
    pub k: u32,
}

impl TripleIjk {
    pub fn members(mask: u32, m: usize) -> impl Iterator<Item = usize> {
        (0..m).filter(move |p| mask >> p & 1 == 1)
    }
}

/// All triples with `I ≠ M`, i.e. `3^m − 1` of them.
pub fn enumerate_triples(m: usize) -> Result<Vec<TripleIjk>> {
    if m == 0 || m > 16 {
        return Err(Error::Precondition(format!("block count {m} outside 1..=16")));
    }
    let full = ((1u64 << m) - 1) as u32;
    let mut out = Vec::with_capacity(3usize.pow(m as u32) - 1);
    for code in 0..3usize.pow(m as u32) {
        let (mut i, mut j, mut k) = (0u32, 0u32, 0u32);
        let mut c = code;
        for p in 0..m {
            match c % 3 {
                0 => i |= 1 << p,
                1 => j |= 1 << p,
                _ => k |= 1 << p,
            }
            c /= 3;
        }
        if i != full {
            out.push(TripleIjk { m, i, j, k });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(s: &[usize]) -> SiteSet {
        SiteSet::from_sites(s).unwrap()
    }

    fn symmetric_rates(n: usize, seed: &[f64]) -> RateMap {
        let s = SiteSet::full(n);
        let mut r = RateMap::zeros(s);
        let mut k = 0;
        for g in s.subsets() {
            let gc = g.complement_in(s);
            if g.is_empty() || gc.is_empty() || g.bits() > gc.bits() {
                continue;
            }
            let v = seed[k % seed.len()];
            k += 1;
            r.set_raw(g, v);
            r.set_raw(gc, v);
        }
        r
    }

    #[test]
    fn disruption_examples() {
        assert!(!disrupts(SiteSet::EMPTY, &[set(&[1, 2])]));
        assert!(!disrupts(set(&[1, 2]), &[set(&[1, 2])]));
        assert!(disrupts(set(&[1]), &[set(&[1, 2])]));
        assert!(disrupts(set(&[1, 3]), &[set(&[1, 2]), set(&[3, 4])]));
        assert!(!disrupts(set(&[1, 2, 3]), &[set(&[1, 2]), set(&[3, 4])]));
    }

    #[test]
    fn disruption_single_block_exhaustive() {
        // only proper nonempty subsets of a block disrupt it
        let a = set(&[1, 2]);
        let hits: Vec<_> = a.subsets().filter(|&g| disrupts(g, &[a])).collect();
        assert_eq!(hits.len(), 2);
        let blocks = [set(&[1, 2]), set(&[3, 4])];
        let u = set(&[1, 2, 3, 4]);
        let n = u.subsets().filter(|&g| disrupts(g, &blocks)).count();
        assert_eq!(n, 4);
    }

    #[test]
    fn marginal_rates_examples() {
        let r = symmetric_rates(3, &[1.0, 2.0, 3.0]);
        assert_eq!(marginal_rates(&r, SiteSet::full(3)), r);
        // explicit sum over all 8 subsets
        let i = set(&[1, 2]);
        let lumped = marginal_rates(&r, i);
        for h in i.subsets() {
            let brute: f64 = SiteSet::full(3)
                .subsets()
                .filter(|g| g.intersection(i) == h)
                .map(|g| r.get(g))
                .sum();
            assert_eq!(lumped.get(h), brute);
        }
        assert!(lumped.is_symmetric());
    }

    #[test]
    fn rho_ikg_examples() {
        let mut r = RateMap::zeros(SiteSet::full(2));
        r.set_raw(set(&[1]), 0.25);
        r.set_raw(set(&[2]), 0.25);
        assert_eq!(rho_ikg(&r, SiteSet::EMPTY, &[], set(&[1])), 0.25);
        assert_eq!(rho_ikg(&r, SiteSet::EMPTY, &[set(&[1, 2])], SiteSet::EMPTY), 0.5);
    }

    #[test]
    fn partial_partition_counts() {
        assert_eq!(
            enumerate_partial_partitions(SiteSet::EMPTY).unwrap(),
            vec![PartialPartition::empty()]
        );
        let two = enumerate_partial_partitions(set(&[1, 2])).unwrap();
        assert_eq!(two.len(), 5);
        assert_eq!(enumerate_partial_partitions(set(&[1, 2, 3, 4])).unwrap().len(), 52);
        assert!(enumerate_partial_partitions(SiteSet::full(11)).is_err());
    }

    #[test]
    fn partial_partitions_match_bell_numbers() {
        // Bell(k) by the triangle recurrence, independent of the enumerator
        fn bell(n: usize) -> u64 {
            let mut row = vec![1u64];
            for _ in 0..n {
                let mut next = vec![*row.last().unwrap()];
                for &v in &row {
                    let last = *next.last().unwrap();
                    next.push(last + v);
                }
                row = next;
            }
            row[0]
        }
        for n in 0..=7 {
            let all = enumerate_partial_partitions(SiteSet::full(n)).unwrap();
            assert_eq!(all.len() as u64, bell(n + 1), "n = {n}");
            let mut dedup = all.clone();
            dedup.dedup();
            assert_eq!(dedup.len(), all.len());
        }
    }

    #[test]
    fn partition_display_round_trip() {
        let p = PartialPartition::new(vec![set(&[2]), set(&[1, 3])]).unwrap();
        assert_eq!(p.to_string(), "{1,3}|{2}");
        assert_eq!("{1,3}|{2}".parse::<PartialPartition>().unwrap(), p);
        assert_eq!("{}".parse::<PartialPartition>().unwrap(), PartialPartition::empty());
        assert!("{1,2}|{2}".parse::<PartialPartition>().is_err());
    }

    #[test]
    fn triples() {
        let t1 = enumerate_triples(1).unwrap();
        assert_eq!(t1.len(), 2);
        assert!(t1.iter().all(|t| t.i == 0));
        assert_eq!(enumerate_triples(2).unwrap().len(), 8);
        for m in 1..=5 {
            let full = (1u32 << m) - 1;
            let all = enumerate_triples(m).unwrap();
            assert_eq!(all.len(), 3usize.pow(m as u32) - 1);
            for t in all {
                assert_eq!(t.i | t.j | t.k, full);
                assert_eq!(t.i & t.j, 0);
                assert_eq!(t.i & t.k, 0);
                assert_eq!(t.j & t.k, 0);
                assert_ne!(t.i, full);
            }
        }
    }

    proptest! {
        #[test]
        fn disruption_closed_under_complement(g in 0u32..16, split in 0u32..16) {
            let u = SiteSet::full(4);
            let a = SiteSet::from_bits(split).unwrap();
            let blocks: Vec<SiteSet> = [a, a.complement_in(u)].into_iter().filter(|b| !b.is_empty()).collect();
            let g = SiteSet::from_bits(g).unwrap();
            if disrupts(g, &blocks) {
                prop_assert!(disrupts(g.complement_in(u), &blocks));
            }
        }

        #[test]
        fn lumping_is_consistent(seed in proptest::collection::vec(0.0f64..3.0, 7), j in 0u32..16, i in 0u32..16) {
            let r = symmetric_rates(4, &seed);
            let j = SiteSet::from_bits(j).unwrap();
            let i = SiteSet::from_bits(i & j.bits()).unwrap();
            let twice = marginal_rates(&marginal_rates(&r, j), i);
            let once = marginal_rates(&r, i);
            for h in i.subsets() {
                prop_assert!((twice.get(h) - once.get(h)).abs() < 1e-12);
            }
            prop_assert!(once.is_symmetric() || once.iter().all(|(h, v)| (v - once.get(h.complement_in(i))).abs() < 1e-12));
        }

        #[test]
        fn rho_ikg_matches_double_sum(seed in proptest::collection::vec(0.0f64..3.0, 7), code in 0u32..81) {
            // assign each of 4 sites to I (0), K-block 1 (1), K-block 2 (2) or G (3)
            let r = symmetric_rates(4, &seed);
            let mut parts = [SiteSet::EMPTY; 4];
            let mut c = code;
            for s in 0..4 {
                parts[(c % 4) as usize] = parts[(c % 4) as usize].union(SiteSet::singleton(s));
                c /= 4;
            }
            let a_i = parts[0];
            let k_blocks: Vec<SiteSet> = [parts[1], parts[2]].into_iter().filter(|b| !b.is_empty()).collect();
            let g = parts[3];
            let a_k = parts[1].union(parts[2]);
            let mut brute = 0.0;
            for d in 0..16u32 {
                for h in 0..16u32 {
                    let d = SiteSet::from_bits(d).unwrap();
                    let h = SiteSet::from_bits(h).unwrap();
                    if !d.is_subset_of(a_i) || !h.is_subset_of(a_k) {
                        continue;
                    }
                    let splits_all = k_blocks.iter().all(|&b| {
                        let x = h.intersection(b);
                        x != SiteSet::EMPTY && x != b
                    });
                    if splits_all {
                        brute += r.get(h.union(d).union(g));
                    }
                }
            }
            prop_assert!((rho_ikg(&r, a_i, &k_blocks, g) - brute).abs() < 1e-12);
        }
    }
}
