//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria whose literal target is unattainable are listed in
//! `EXPECTED_RED`; they print FAIL together with a corrected variant, and
//! only unexpected failures make the process exit nonzero.

use moran_core::combinatorics::{enumerate_partial_partitions, marginal_rates};
use moran_core::deterministic::{lln_experiment, product_derivative_check, Distribution, LlnOptions};
use moran_core::hierarchy::{
    build_system, calibrate_class_normalization, class_row, single_crossover_system, solve, two_site_moments,
    CLASS_NORMALIZATION,
};
use moran_core::model::true_jump_rates;
use moran_core::oracle::ExactOracle;
use moran_core::sim::Simulator;
use moran_core::stats::{counter_law, ld_comparison, mean_se, run_replicates, three_site_nonclosure_check, RunOptions};
use moran_core::{Error, Genotype, ModelParams, PartialPartition, PopulationState, SiteSet, TypeSpace};
use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

const EXPECTED_RED: [usize; 2] = [4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn set(s: &[usize]) -> SiteSet {
    SiteSet::from_sites(s).unwrap()
}

fn g(v: &[u16]) -> Genotype {
    Genotype::new(v.to_vec())
}

fn state(p: &ModelParams, pairs: &[(&[u16], u64)]) -> PopulationState {
    let gs: Vec<(Genotype, u64)> = pairs.iter().map(|(v, c)| (g(v), *c)).collect();
    PopulationState::from_pairs(p.space(), gs.iter().map(|(x, c)| (x, *c))).unwrap()
}

fn opts(replicates: usize, seed: u64) -> RunOptions {
    RunOptions {
        replicates,
        seed,
        strict: false,
        z_threshold: 3.0,
    }
}

fn rel_err(got: f64, exact: f64) -> f64 {
    if exact == 0.0 {
        got.abs()
    } else {
        (got - exact).abs() / exact.abs()
    }
}

/// All compositions of `n` into `k` parts.
fn compositions(n: u64, k: usize) -> Vec<Vec<u64>> {
    if k == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in compositions(n - first, k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

// 1: up/down rates of z(x*) from the closed formulas against the sum over
// every ordered base event (G, x, y), in exact rational arithmetic.
fn criterion_1() -> Outcome {
    let rate_sets: [&[f64]; 2] = [&[0.75, 0.5, 0.625], &[0.375, 0.0, 1.25]];
    let mut checked = 0usize;
    let mut bad = Vec::new();
    for n in 1..=3usize {
        for rates in rate_sets {
            let mut p = ModelParams::new(vec![2; n], 1).unwrap();
            // proper subsets containing site 1; complements follow
            for (k, bits) in (0..(1u32 << n) - 1).filter(|b| b & 1 == 1).enumerate() {
                p.set_rho(SiteSet::from_bits(bits).unwrap(), rates[k % rates.len()])
                    .unwrap();
            }
            for pop in 1..=4u64 {
                let p = p.with_pop_size(pop).unwrap();
                let space = p.space().clone();
                let types = space.size();
                let four_n = BigRational::from_integer((4 * pop).into());
                for counts in compositions(pop, types) {
                    let z = PopulationState::from_counts(&space, counts.clone()).unwrap();
                    for xs in 0..types {
                        let xstar = space.decode(xs);
                        let (mut up, mut down) = (BigRational::zero(), BigRational::zero());
                        for bits in 0..(1u32 << n) {
                            let gset = SiteSet::from_bits(bits).unwrap();
                            let rho = BigRational::from_float(p.rho().get(gset)).unwrap();
                            if rho.is_zero() {
                                continue;
                            }
                            for x in 0..types {
                                for y in 0..types {
                                    let w = counts[x] * counts[y];
                                    if w == 0 {
                                        continue;
                                    }
                                    let (gx, gy) = (space.decode(x), space.decode(y));
                                    let child = |a: &Genotype, b: &Genotype| -> Vec<u16> {
                                        (0..n).map(|i| if gset.contains(i) { a.0[i] } else { b.0[i] }).collect()
                                    };
                                    let hit = |v: &[u16]| (v == xstar.0.as_slice()) as i32;
                                    let delta = hit(&child(&gx, &gy)) + hit(&child(&gy, &gx)) - hit(&gx.0) - hit(&gy.0);
                                    let r = rho.clone() * BigRational::from_integer(w.into()) / four_n.clone();
                                    match delta {
                                        1 => up += r,
                                        -1 => down += r,
                                        0 => {}
                                        d => bad.push(format!("jump of size {d}")),
                                    }
                                }
                            }
                        }
                        let (fu, fd) = true_jump_rates::<BigRational>(&p, &z, &xstar).unwrap();
                        if fu != up || fd != down {
                            bad.push(format!(
                                "n={n} N={pop} z={counts:?} x*={xstar}: formula ({fu},{fd}) vs sum ({up},{down})"
                            ));
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    Outcome {
        pass: bad.is_empty() && checked > 0,
        detail: format!(
            "{checked} (state, x*) cases, {} mismatches{}",
            bad.len(),
            bad.first().map(|b| format!("; first: {b}")).unwrap_or_default()
        ),
    }
}

fn hierarchy_vs_oracle(p: &ModelParams, z0: &PopulationState, times: &[f64]) -> (f64, usize) {
    let oracle = ExactOracle::new(p).unwrap();
    let p0 = oracle.point_mass(z0).unwrap();
    let dists: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| oracle.transient_distribution(&p0, t).unwrap())
        .collect();
    let mut grid = vec![0.0];
    grid.extend_from_slice(times);
    let mut worst = 0.0f64;
    let mut count = 0;
    for xs in 0..p.space().size() {
        let x = p.space().decode(xs);
        let sys = build_system(p, &x, p.all_sites()).unwrap();
        let sol = solve(&sys, z0, &grid).unwrap();
        for (k, pt) in dists.iter().enumerate() {
            for (i, pp) in sys.index().iter().enumerate() {
                let exact = oracle.moment_of(pt, pp, &x).unwrap();
                worst = worst.max(rel_err(sol.values[k + 1][i], exact));
                count += 1;
            }
        }
    }
    (worst, count)
}

// 2: every partial-partition moment, every reference type, with and without
// mutation.
fn criterion_2() -> Outcome {
    let p = ModelParams::new(vec![2, 2, 2], 5)
        .unwrap()
        .with_rho(set(&[1]), 0.3)
        .unwrap()
        .with_rho(set(&[2]), 0.7)
        .unwrap()
        .with_rho(set(&[3]), 0.45)
        .unwrap();
    let z0 = state(
        &p,
        &[(&[0, 0, 0], 2), (&[0, 1, 1], 1), (&[1, 0, 1], 1), (&[1, 1, 0], 1)],
    );
    let times = [0.5, 1.0, 2.0];
    let (e1, c1) = hierarchy_vs_oracle(&p, &z0, &times);
    let pm = p
        .clone()
        .with_mutation(0, 0, 1, 0.2)
        .unwrap()
        .with_mutation(1, 1, 0, 0.35)
        .unwrap()
        .with_mutation(2, 0, 1, 0.15)
        .unwrap();
    let (e2, c2) = hierarchy_vs_oracle(&pm, &z0, &times);
    Outcome {
        pass: e1 <= 1e-6 && e2 <= 1e-6,
        detail: format!("max rel err {e1:.2e} over {c1} moments (μ=0), {e2:.2e} over {c2} (μ>0); tol 1e-6"),
    }
}

// 3: every one-block row equals Σ_H ρ^{(A)}_H/(2N)([H][A∖H] − N[A]).
fn criterion_3() -> Outcome {
    let (fit, residual) = calibrate_class_normalization().unwrap();
    let calibrated = fit == CLASS_NORMALIZATION || {
        (fit.joining - CLASS_NORMALIZATION.joining).abs() < 1e-8
            && (fit.breaking - CLASS_NORMALIZATION.breaking).abs() < 1e-8
    };
    let instances = vec![
        ModelParams::new(vec![2, 2, 2], 5)
            .unwrap()
            .with_rho(set(&[1]), 0.3)
            .unwrap()
            .with_rho(set(&[2]), 0.7)
            .unwrap(),
        ModelParams::new(vec![2, 3, 2, 2], 4)
            .unwrap()
            .with_rho(set(&[1, 3]), 0.8)
            .unwrap()
            .with_rho(set(&[2]), 0.4)
            .unwrap()
            .with_rho(set(&[1, 2, 4]), 0.25)
            .unwrap(),
    ];
    let mut worst = 0.0f64;
    let mut rows = 0;
    let mut built = true;
    for p in &instances {
        let n = p.pop_size() as f64;
        let x = p.space().decode(0);
        let sys = match build_system(p, &x, p.all_sites()) {
            Ok(s) => s,
            Err(_) => {
                built = false;
                continue;
            }
        };
        for pp in sys.index() {
            let [a] = pp.blocks() else { continue };
            let mut display: BTreeMap<PartialPartition, f64> = BTreeMap::new();
            for h in a.subsets() {
                let lumped: f64 = (0..(1u32 << p.n_sites()))
                    .map(|b| SiteSet::from_bits(b).unwrap())
                    .filter(|gs| gs.intersection(*a) == h)
                    .map(|gs| p.rho().get(gs))
                    .sum();
                if lumped == 0.0 {
                    continue;
                }
                let rest = a.difference(h);
                let mut blocks = Vec::new();
                let mut factor = 1.0;
                for b in [h, rest] {
                    if b.is_empty() {
                        factor *= n;
                    } else {
                        blocks.push(b);
                    }
                }
                let key = PartialPartition::new(blocks).unwrap();
                *display.entry(key).or_insert(0.0) += lumped / (2.0 * n) * factor;
                *display.entry(pp.clone()).or_insert(0.0) -= lumped / 2.0;
            }
            for col in sys.index() {
                let expected = display.get(col).copied().unwrap_or(0.0);
                worst = worst.max((sys.coefficient(pp, col) - expected).abs());
            }
            let per_class = class_row(pp, &marginal_rates(p.rho(), p.all_sites()), p.pop_size(), fit).unwrap();
            for col in sys.index() {
                let c = per_class.get(col).copied().unwrap_or(0.0);
                worst = worst.max((sys.coefficient(pp, col) - c).abs());
            }
            rows += 1;
        }
    }
    Outcome {
        pass: calibrated && residual < 1e-9 && built && worst < 1e-12,
        detail: format!(
            "calibrated normalization ({:.6}, {:.6}), residual {residual:.1e}; {rows} one-block rows, max coefficient gap {worst:.1e}",
            fit.joining, fit.breaking
        ),
    }
}

/// `∫_0^t f` by composite Simpson on an even number of intervals.
fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    assert!(n.is_multiple_of(2));
    let mut s = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * v;
    }
    s * h / 3.0
}

// 4: ⟨1,2⟩_1 against Poisson(a).
fn criterion_4() -> Outcome {
    let p = ModelParams::new(vec![2, 2], 10)
        .unwrap()
        .with_rho(set(&[1]), 1.0)
        .unwrap();
    let z0 = state(&p, &[(&[0, 1], 5), (&[1, 0], 5)]);
    let x = g(&[0, 0]);
    let pair = set(&[1, 2]);
    let t = 1.0;
    let law = counter_law(&p, &z0, &x, pair, t, &opts(100_000, 4)).unwrap();
    let z_mean = (law.mean - law.expected) / law.mean_se;
    let z_var = (law.variance - law.expected) / law.variance_se;
    let literal = z_mean.abs() <= 4.0 && z_var.abs() <= 4.0 && law.p_value > 0.001;

    // Exact variance: the compensator is a·t, so Var = a·t + 2·E[#double increments],
    // and doubles occur at rate c·[1,2]² with c = Σ_{H splits the pair} ρ_H/(4N).
    let oracle = ExactOracle::new(&p).unwrap();
    let p0 = oracle.point_mass(&z0).unwrap();
    let xs = oracle.index().marginal_counts(pair, p.space().encode(&x).unwrap());
    let steps = 200;
    let h = t / steps as f64;
    let second: Vec<f64> = (0..=steps)
        .map(|k| {
            let pt = oracle.transient_distribution(&p0, k as f64 * h).unwrap();
            pt.iter().zip(&xs).map(|(q, &c)| q * (c * c) as f64).sum()
        })
        .collect();
    let c = (p.rho().get(set(&[1])) + p.rho().get(set(&[2]))) / (4.0 * p.pop_size() as f64);
    let exact_var = law.expected + 2.0 * c * simpson(&second, h);
    let z_exact = (law.variance - exact_var) / law.variance_se;
    Outcome {
        pass: literal,
        detail: format!(
            "a·t={:.4}; mean {:.4} (z={z_mean:.2}); var {:.4} (z={z_var:.2} vs a·t); GOF χ²={:.1} df={} p={:.2e}; \
             {:.1}% of increments are double steps. Corrected: exact variance {exact_var:.4}, z={z_exact:.2} [{}]",
            law.expected,
            law.mean,
            law.variance,
            law.chi_square,
            law.degrees_of_freedom,
            law.p_value,
            100.0 * law.double_step_fraction,
            if z_mean.abs() <= 4.0 && z_exact.abs() <= 4.0 {
                "pass"
            } else {
                "fail"
            }
        ),
    }
}

// 5: E[LD_50] against LD₀·e^{−1}.
fn criterion_5() -> Outcome {
    let p = ModelParams::new(vec![2, 2], 100)
        .unwrap()
        .with_rho(set(&[1]), 1.0)
        .unwrap()
        .with_resampling(1.0)
        .unwrap();
    let z0 = state(&p, &[(&[0, 0], 50), (&[1, 1], 50)]);
    let x = g(&[0, 0]);
    let closed = moran_core::hierarchy::two_site_mean_ld(&p, &z0, &x).unwrap();
    let ld0 = closed.ld0();
    let grid = [0.0, 0.25, 1.0 / closed.decay_rate(), 2.0, 50.0];
    let rows = ld_comparison(&p, &z0, &x, &grid, &opts(10_000, 5)).unwrap();
    let last = rows.last().unwrap();
    let target = ld0 * (-1.0f64).exp();
    let z_literal = (last.estimate - target) / last.se;
    let corrected_ok = rows.iter().all(|r| r.verdict.passed());
    let zs: Vec<String> = rows[1..]
        .iter()
        .map(|r| format!("t={:.3}: z={:.2}", r.time, r.z))
        .collect();
    Outcome {
        pass: z_literal.abs() <= 3.0,
        detail: format!(
            "LD₀={ld0}; MC E[LD_50]={:.3e} ± {:.1e}, target {target:.2} (z={z_literal:.1}). \
             Corrected decay rate ρ+b/N={:.2}: {} [{}]",
            last.estimate,
            last.se,
            closed.decay_rate(),
            zs.join(", "),
            if corrected_ok { "pass" } else { "fail" }
        ),
    }
}

/// Per replicate, `[A]` and `[A][B]` for `A, B` in `sets` at time `t`.
fn marginal_moments(
    p: &ModelParams,
    z0: &PopulationState,
    x: &Genotype,
    sets: &[SiteSet],
    t: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let space = p.space();
    let r = space.encode(x).unwrap();
    let tables: Vec<Vec<bool>> = sets.iter().map(|&a| space.match_table(r, a)).collect();
    run_replicates(&opts(10_000, seed), |_, rng| {
        let mut sim = Simulator::new(p, z0)?;
        sim.advance_to(t, rng)?;
        let v: Vec<f64> = tables.iter().map(|m| sim.count_matching(m) as f64).collect();
        let mut row = v.clone();
        for i in 0..v.len() {
            for j in i..v.len() {
                row.push(v[i] * v[j]);
            }
        }
        Ok(row)
    })
    .unwrap()
}

fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

fn marginal_state(full: &TypeSpace, z: &PopulationState, sites: SiteSet, target: &ModelParams) -> PopulationState {
    let m = moran_core::model::marginalize(full, z, sites);
    let pairs: Vec<(Genotype, u64)> = m.counts.iter().map(|(k, &c)| (Genotype::new(k.clone()), c)).collect();
    PopulationState::from_pairs(target.space(), pairs.iter().map(|(x, c)| (x, *c))).unwrap()
}

// 6: [I]-observables of the full chain against the lumped two-site chain.
fn criterion_6() -> Outcome {
    let p = ModelParams::new(vec![2, 2, 2], 8)
        .unwrap()
        .with_rho(set(&[1]), 0.8)
        .unwrap()
        .with_rho(set(&[2]), 0.5)
        .unwrap()
        .with_rho(set(&[3]), 0.3)
        .unwrap()
        .with_mutation(0, 1, 0, 0.1)
        .unwrap()
        .with_resampling(0.5)
        .unwrap();
    let z0 = state(
        &p,
        &[(&[0, 0, 0], 3), (&[1, 1, 1], 3), (&[0, 1, 1], 1), (&[1, 0, 0], 1)],
    );
    let i = set(&[1, 3]);
    let lumped = p.marginal_model(i).unwrap();
    let z0_i = marginal_state(p.space(), &z0, i, &lumped);
    let t = 1.0;
    let full_sets = [set(&[1]), set(&[3]), i];
    let local_sets = [set(&[1]), set(&[2]), set(&[1, 2])];
    let a = marginal_moments(&p, &z0, &g(&[0, 0, 0]), &full_sets, t, 61);
    let b = marginal_moments(&lumped, &z0_i, &g(&[0, 0]), &local_sets, t, 62);
    let names = [
        "[1]", "[3]", "[1,3]", "[1]²", "[1][3]", "[1][1,3]", "[3]²", "[3][1,3]", "[1,3]²",
    ];
    let mut worst: f64 = 0.0;
    let mut worst_name = "";
    for (k, name) in names.iter().enumerate() {
        let (ma, sa) = mean_se(&column(&a, k));
        let (mb, sb) = mean_se(&column(&b, k));
        let z = (ma - mb) / (sa * sa + sb * sb).sqrt();
        if z.abs() > worst.abs() {
            worst = z;
            worst_name = name;
        }
    }
    let rates = lumped.rho().get(set(&[1]));
    Outcome {
        pass: worst.abs() <= 3.0,
        detail: format!(
            "I={{1,3}}, lumped ρ^(I)_{{1}}={rates}; 9 first/second moments at t={t}, 10^4 replicates each; max |z|={:.2} ({worst_name})",
            worst.abs()
        ),
    }
}

// 7: E[[1,2,3]_t] three ways under single-crossover rates.
fn criterion_7() -> Outcome {
    let p = ModelParams::new(vec![2, 2, 2], 4)
        .unwrap()
        .with_rho(set(&[1]), 0.9)
        .unwrap()
        .with_rho(set(&[3]), 0.4)
        .unwrap();
    let z0 = state(
        &p,
        &[(&[0, 0, 0], 1), (&[0, 1, 1], 1), (&[1, 0, 0], 1), (&[1, 1, 0], 1)],
    );
    let x = g(&[0, 0, 0]);
    let grid = [0.0, 0.5, 1.0, 2.0];
    let sc = single_crossover_system(&p, &x, &z0, &grid).unwrap().full();
    let sys = build_system(&p, &x, p.all_sites()).unwrap();
    let top: PartialPartition = "{1,2,3}".parse().unwrap();
    let hs = solve(&sys, &z0, &grid).unwrap().series(&top).unwrap();
    let oracle = ExactOracle::new(&p).unwrap();
    let p0 = oracle.point_mass(&z0).unwrap();
    let mut worst = 0.0f64;
    for (k, &t) in grid.iter().enumerate() {
        let exact = oracle.exact_moment(&p0, &top, &x, t).unwrap();
        worst = worst
            .max(rel_err(sc[k], exact))
            .max(rel_err(hs[k], exact))
            .max(rel_err(sc[k], hs[k]));
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("E[[1,2,3]_2]={:.6}; max pairwise rel err {worst:.2e}; tol 1e-6", hs[3]),
    }
}

// 8: E[[1,2]^m_t], m = 2, 3, against the oracle and Monte Carlo.
fn criterion_8() -> Outcome {
    let p = ModelParams::new(vec![2, 2], 6)
        .unwrap()
        .with_rho(set(&[1]), 0.7)
        .unwrap();
    let z0 = state(&p, &[(&[0, 0], 2), (&[1, 1], 2), (&[0, 1], 1), (&[1, 0], 1)]);
    let x = g(&[0, 0]);
    let grid = [0.0, 0.5, 2.0];
    let closed = two_site_moments(&p, &z0, &x, 3).unwrap().solve(&grid).unwrap();
    let oracle = ExactOracle::new(&p).unwrap();
    let p0 = oracle.point_mass(&z0).unwrap();
    let xs = oracle
        .index()
        .marginal_counts(set(&[1, 2]), p.space().encode(&x).unwrap());
    let mut worst_rel = 0.0f64;
    for (k, &t) in grid.iter().enumerate() {
        let pt = oracle.transient_distribution(&p0, t).unwrap();
        for (m, &closed_m) in closed[k].iter().enumerate().skip(2) {
            let exact: f64 = pt.iter().zip(&xs).map(|(q, &c)| q * (c as f64).powi(m as i32)).sum();
            worst_rel = worst_rel.max(rel_err(closed_m, exact));
        }
    }
    let table = p.space().match_table(p.space().encode(&x).unwrap(), set(&[1, 2]));
    let rows: Vec<Vec<f64>> = run_replicates(&opts(10_000, 8), |_, rng| {
        let mut sim = Simulator::new(&p, &z0)?;
        let mut row = Vec::new();
        for &t in &grid[1..] {
            sim.advance_to(t, rng)?;
            let v = sim.count_matching(&table) as f64;
            row.extend([v * v, v * v * v]);
        }
        Ok(row)
    })
    .unwrap();
    let mut worst_z = 0.0f64;
    for (k, _) in grid[1..].iter().enumerate() {
        for (j, m) in [2usize, 3].iter().enumerate() {
            let (mean, se) = mean_se(&column(&rows, 2 * k + j));
            worst_z = worst_z.max(((mean - closed[k + 1][*m]) / se).abs());
        }
    }
    Outcome {
        pass: worst_rel <= 1e-6 && worst_z <= 3.0,
        detail: format!("oracle max rel err {worst_rel:.2e} (tol 1e-6); MC 10^4 replicates max |z|={worst_z:.2}"),
    }
}

// 9: product-derivative residual on random instances, then the law of large
// numbers.
fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut worst_unhalved = 0.0f64;
    let mut checks = 0;
    for _ in 0..20 {
        let n = rng.gen_range(2..=4usize);
        let alleles: Vec<u16> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
        let mut p = ModelParams::new(alleles, 10).unwrap();
        for bits in 1..(1u32 << n) - 1 {
            if bits & 1 == 1 && rng.gen_bool(0.7) {
                p.set_rho(SiteSet::from_bits(bits).unwrap(), rng.gen_range(0.0..2.0))
                    .unwrap();
            }
        }
        let w: Vec<f64> = (0..p.space().size()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let omega = Distribution::new(p.space(), w).unwrap();
        for pp in enumerate_partial_partitions(p.all_sites()).unwrap() {
            if pp.support() != p.all_sites() {
                continue;
            }
            let c = product_derivative_check(&p, &omega, &pp).unwrap();
            worst = worst.max(c.residual);
            worst_unhalved = worst_unhalved.max(c.residual_unhalved / c.derivative_norm.max(1e-300));
            checks += 1;
        }
    }
    let p = ModelParams::new(vec![2, 2, 2], 50)
        .unwrap()
        .with_rho(set(&[1]), 0.6)
        .unwrap()
        .with_rho(set(&[2]), 0.4)
        .unwrap()
        .with_rho(set(&[3]), 0.8)
        .unwrap();
    let space = p.space();
    let mut w = vec![0.0; space.size()];
    for (v, share) in [(&[0u16, 0, 0][..], 0.4), (&[1, 1, 1], 0.4), (&[0, 1, 0], 0.2)] {
        w[space.encode(&g(v)).unwrap()] = share;
    }
    let profile = Distribution::new(space, w).unwrap();
    let lln = LlnOptions {
        horizon: 2.0,
        replicates: 100,
        seed: 99,
        grid_steps: 40,
        strict: false,
    };
    let table = lln_experiment(&p, &profile, &[50, 200, 800], &lln).unwrap();
    let medians: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("N={}: {:.4}", r.pop_size, r.median_sup_distance))
        .collect();
    Outcome {
        pass: worst <= 1e-9 && table.is_decreasing(),
        detail: format!(
            "{checks} product checks, max residual {worst:.1e} (with weights ρ_B unhalved the relative gap is {worst_unhalved:.2}); \
             median sup-distance {}; fitted exponent {:.2}",
            medians.join(", "),
            table.fitted_exponent
        ),
    }
}

// 10: three-site resampling derivative against the bracket, and refusal of
// b > 0 by the hierarchy builder.
fn criterion_10() -> Outcome {
    let p = ModelParams::new(vec![2, 2, 2], 30)
        .unwrap()
        .with_resampling(1.0)
        .unwrap();
    let z0 = state(&p, &[(&[0, 0, 0], 15), (&[1, 1, 1], 15)]);
    let x = g(&[0, 0, 0]);
    let rep = three_site_nonclosure_check(&p, &z0, &x, 1.0, 0.05, &opts(100_000, 10)).unwrap();
    let refused = matches!(
        build_system(&p, &x, p.all_sites()),
        Err(Error::ResamplingBreaksClosure(_))
    );

    let pr = p.clone().with_rho(set(&[1]), 1.0).unwrap();
    let general = three_site_nonclosure_check(&pr, &z0, &x, 1.0, 0.05, &opts(100_000, 11)).unwrap();
    Outcome {
        pass: rep.printed.verdict.passed() && refused,
        detail: format!(
            "ρ=0: finite difference {:.3} vs bracket {:.3} (z={:.2}), generator form z={:.2}; builder refuses b>0: {refused}. \
             With ρ_{{1}}=1 (recombinant types present): bracket z={:.2}, generator form z={:.2}",
            rep.printed.estimate, rep.printed.prediction, rep.printed.z, rep.generator.z, general.printed.z, general.generator.z
        ),
    }
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    let mut red = Vec::new();
    for (k, f) in criteria {
        if !filter.is_empty() && !filter.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {k}: {} ({secs:.1} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            red.push(k);
            if !EXPECTED_RED.contains(&k) {
                unexpected.push(k);
            }
        }
    }
    println!("acceptance: failing {red:?}, expected failing {EXPECTED_RED:?}");
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
