//! Infinite-population recombination flow `ω̇ = Σ_G ρ_G/2·(R_G − 1)ω` and the
//! law-of-large-numbers experiment against the finite chain.

use crate::combinatorics::PartialPartition;
use crate::error::{Error, Result};
use crate::model::{ModelParams, PopulationState, SiteSet, TypeSpace};
use crate::ode::{integrate as ode_integrate, validate_grid, Tolerances};
use crate::sim::{replicate_rng, Simulator};
use rayon::prelude::*;

/// Largest type space for dense distributions.
pub const MAX_DISTRIBUTION_TYPES: usize = 4096;

/// A finite measure on the type space, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    space: TypeSpace,
    weights: Vec<f64>,
}

impl Distribution {
    pub fn new(space: &TypeSpace, weights: Vec<f64>) -> Result<Self> {
        if space.size() > MAX_DISTRIBUTION_TYPES {
            return Err(Error::SizeCap {
                what: "distribution types",
                size: space.size(),
                cap: MAX_DISTRIBUTION_TYPES,
            });
        }
        if weights.len() != space.size() {
            return Err(Error::InvalidState(format!(
                "expected {} weights, got {}",
                space.size(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidState(format!(
                "weight {w} is not a finite nonnegative number"
            )));
        }
        Ok(Distribution {
            space: space.clone(),
            weights,
        })
    }

    /// `z / scale`.
    pub fn from_state(space: &TypeSpace, z: &PopulationState, scale: f64) -> Result<Self> {
        Self::new(space, z.counts().iter().map(|&c| c as f64 / scale).collect())
    }

    pub fn space(&self) -> &TypeSpace {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `π_A.ω`, indexed by the type that agrees with the marginal on `A` and
    /// carries allele 0 elsewhere.
    pub fn marginal(&self, sites: SiteSet) -> Vec<f64> {
        marginal_of(&self.space, &self.weights, sites)
    }

    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        self.weights.iter().zip(other).map(|(a, b)| (a - b).abs()).sum()
    }
}

fn marginal_of(space: &TypeSpace, w: &[f64], sites: SiteSet) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for (x, &v) in w.iter().enumerate() {
        out[space.recombine_index(x, 0, sites)] += v;
    }
    out
}

/// `R_G(ω) = |ω|⁻¹ (π_G.ω) ⊗ (π_Ḡ.ω)`, with `R_G(0) = 0`.
pub fn recombinator(omega: &Distribution, g: SiteSet) -> Distribution {
    let space = &omega.space;
    Distribution {
        space: space.clone(),
        weights: recombinator_raw(space, &omega.weights, g),
    }
}

fn recombinator_raw(space: &TypeSpace, w: &[f64], g: SiteSet) -> Vec<f64> {
    let mass: f64 = w.iter().sum();
    if mass == 0.0 {
        return vec![0.0; w.len()];
    }
    let gc = g.complement_in(space.all_sites());
    let mg = marginal_of(space, w, g);
    let mgc = marginal_of(space, w, gc);
    (0..w.len())
        .map(|x| mg[space.recombine_index(x, 0, g)] * mgc[space.recombine_index(x, 0, gc)] / mass)
        .collect()
}

fn rhs_raw(params: &ModelParams, w: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (g, rho) in params.rho().nonzero() {
        let r = recombinator_raw(params.space(), w, g);
        for ((o, rg), x) in out.iter_mut().zip(&r).zip(w) {
            *o += rho / 2.0 * (rg - x);
        }
    }
}

/// `Σ_G ρ_G/2·(R_G(ω) − ω)`; a signed measure of total mass zero.
pub fn deterministic_rhs(params: &ModelParams, omega: &Distribution) -> Vec<f64> {
    let mut out = vec![0.0; omega.weights.len()];
    rhs_raw(params, &omega.weights, &mut out);
    out
}

/// Solves the flow on `grid`.
pub fn integrate(params: &ModelParams, omega0: &Distribution, grid: &[f64]) -> Result<Vec<Distribution>> {
    validate_grid(grid)?;
    if omega0.space != *params.space() {
        return Err(Error::InvalidState(
            "distribution and model use different type spaces".into(),
        ));
    }
    let path = ode_integrate(
        |_, w, dw| rhs_raw(params, w, dw),
        &omega0.weights,
        grid,
        Tolerances::default(),
    )?;
    Ok(path
        .into_iter()
        .map(|w| Distribution {
            space: omega0.space.clone(),
            weights: w,
        })
        .collect())
}

/// Residuals of the block-product dynamics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProductCheck {
    /// Max-norm gap between the chain-rule derivative and
    /// `Σ_j Σ_{B⊆A_j} (ρ_B/2)·(…)`.
    pub residual: f64,
    /// Same with the weight `ρ_B` in place of `ρ_B/2`.
    pub residual_unhalved: f64,
    /// Max-norm of the chain-rule derivative, for scale.
    pub derivative_norm: f64,
}

/// Compares `d/dt ⊗_j π_{A_j}.ω` computed by the chain rule from the full flow
/// against the per-block formula with `ρ_B = Σ_{H∩A_j=B} ρ_H`.
pub fn product_derivative_check(
    params: &ModelParams,
    omega: &Distribution,
    blocks: &PartialPartition,
) -> Result<ProductCheck> {
    let space = params.space();
    if blocks.support() != params.all_sites() {
        return Err(Error::Precondition(format!(
            "blocks {blocks} do not partition the sites"
        )));
    }
    let w = omega.weights();
    let mass = omega.mass();
    let margs: Vec<Vec<f64>> = blocks.blocks().iter().map(|&a| omega.marginal(a)).collect();
    let dw = deterministic_rhs(params, omega);
    let dmargs: Vec<Vec<f64>> = blocks.blocks().iter().map(|&a| marginal_of(space, &dw, a)).collect();
    let at = |m: &Vec<f64>, x: usize, a: SiteSet| m[space.recombine_index(x, 0, a)];

    // per-block bracket Σ_B ρ_B·(|ω|⁻¹ π_B.ω ⊗ π_{A∖B}.ω − π_A.ω), on the block's coordinates
    let brackets: Vec<Vec<f64>> = blocks
        .blocks()
        .iter()
        .zip(&margs)
        .map(|(&a, ma)| {
            let mut out = vec![0.0; w.len()];
            for b in a.subsets() {
                let rho_b: f64 = params
                    .rho()
                    .nonzero()
                    .filter(|(h, _)| h.intersection(a) == b)
                    .map(|(_, r)| r)
                    .sum();
                if rho_b == 0.0 || mass == 0.0 {
                    continue;
                }
                let mb = marginal_of(space, w, b);
                let mrest = marginal_of(space, w, a.difference(b));
                for (x, o) in out.iter_mut().enumerate() {
                    let key = space.recombine_index(x, 0, a);
                    if key != x {
                        continue;
                    }
                    *o += rho_b
                        * (mb[space.recombine_index(x, 0, b)] * mrest[space.recombine_index(x, 0, a.difference(b))]
                            / mass
                            - ma[key]);
                }
            }
            out
        })
        .collect();

    let (mut residual, mut residual_unhalved, mut norm) = (0.0f64, 0.0f64, 0.0f64);
    for x in 0..w.len() {
        let mut chain = 0.0;
        let mut formula = 0.0;
        for (j, &a) in blocks.blocks().iter().enumerate() {
            let others: f64 = blocks
                .blocks()
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != j)
                .map(|(k, &ak)| at(&margs[k], x, ak))
                .product();
            chain += at(&dmargs[j], x, a) * others;
            formula += at(&brackets[j], x, a) * others;
        }
        residual = residual.max((chain - formula / 2.0).abs());
        residual_unhalved = residual_unhalved.max((chain - formula).abs());
        norm = norm.max(chain.abs());
    }
    Ok(ProductCheck {
        residual,
        residual_unhalved,
        derivative_norm: norm,
    })
}

/// Integer counts summing to `n` closest to `n·profile` (largest remainder).
pub fn scale_profile(space: &TypeSpace, profile: &Distribution, n: u64) -> Result<PopulationState> {
    let mass = profile.mass();
    if mass <= 0.0 {
        return Err(Error::Precondition("initial profile has zero mass".into()));
    }
    let exact: Vec<f64> = profile.weights().iter().map(|w| w / mass * n as f64).collect();
    let mut counts: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let mut rest = n - counts.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in &order {
        if rest == 0 {
            break;
        }
        counts[k] += 1;
        rest -= 1;
    }
    PopulationState::from_counts(space, counts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlnRow {
    pub pop_size: u64,
    pub median_sup_distance: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlnTable {
    pub rows: Vec<LlnRow>,
    /// Least-squares slope of `log median` against `log N`.
    pub fitted_exponent: f64,
}

impl LlnTable {
    pub fn is_decreasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].median_sup_distance < w[0].median_sup_distance)
    }
}

/// Options for [`lln_experiment`].
#[derive(Clone, Debug)]
pub struct LlnOptions {
    pub horizon: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Number of equal steps on `[0, horizon]` used for the supremum.
    pub grid_steps: usize,
    pub strict: bool,
}

/// For each `N`, the median over replicates of `sup_{s≤t} ‖Z_s/N − p_s‖₁`.
///
/// `params` supplies rates and type space; its population size is replaced
/// by each entry of `pop_sizes`.
pub fn lln_experiment(
    params: &ModelParams,
    profile: &Distribution,
    pop_sizes: &[u64],
    opts: &LlnOptions,
) -> Result<LlnTable> {
    if params.b() != 0.0 || params.has_mutation() {
        return Err(Error::Precondition("the LLN experiment needs b = 0 and μ = 0".into()));
    }
    if opts.replicates == 0 || opts.grid_steps == 0 || !(opts.horizon > 0.0) {
        return Err(Error::Precondition(
            "replicates, grid steps and horizon must be positive".into(),
        ));
    }
    let space = params.space();
    let grid: Vec<f64> = (0..=opts.grid_steps)
        .map(|k| opts.horizon * k as f64 / opts.grid_steps as f64)
        .collect();
    let p0 = Distribution::new(space, profile.weights().iter().map(|w| w / profile.mass()).collect())?;
    let path = integrate(params, &p0, &grid)?;
    let mut rows = Vec::new();
    for (ni, &n) in pop_sizes.iter().enumerate() {
        let scaled = params.with_pop_size(n)?;
        let z0 = scale_profile(space, profile, n)?;
        let run = |r: usize| -> Result<f64> {
            let mut rng = replicate_rng(opts.seed, ((ni as u64) << 40) | r as u64);
            let mut sim = Simulator::new(&scaled, &z0)?;
            let mut sup = 0.0f64;
            for (t, p) in grid.iter().zip(&path) {
                sim.advance_to(*t, &mut rng)?;
                let d: f64 = sim
                    .counts()
                    .iter()
                    .zip(p.weights())
                    .map(|(&c, &q)| (c as f64 / n as f64 - q).abs())
                    .sum();
                sup = sup.max(d);
            }
            Ok(sup)
        };
        let mut dists: Vec<f64> = if opts.strict {
            (0..opts.replicates).map(run).collect::<Result<_>>()?
        } else {
            (0..opts.replicates).into_par_iter().map(run).collect::<Result<_>>()?
        };
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = dists.len();
        let median = if k % 2 == 1 {
            dists[k / 2]
        } else {
            (dists[k / 2 - 1] + dists[k / 2]) / 2.0
        };
        rows.push(LlnRow {
            pop_size: n,
            median_sup_distance: median,
            replicates: k,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            (
                (r.pop_size as f64).ln(),
                r.median_sup_distance.max(f64::MIN_POSITIVE).ln(),
            )
        })
        .collect();
    let fitted_exponent = slope(&pts);
    Ok(LlnTable { rows, fitted_exponent })
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let k = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
