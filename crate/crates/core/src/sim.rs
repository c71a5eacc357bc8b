//! Exact (event-by-event) simulation of the population chain.
//!
//! The population is held as an array of type indices, one per individual,
//! alongside dense type counts. Every recombination base event `(G, x, y)` is
//! realised, including those that leave the counts unchanged, so the
//! creation/destruction counters see them.

use crate::error::{Error, Result};
use crate::model::{Genotype, ModelParams, PopulationState, SignedUpdate, SiteSet, TypeSpace};
use crate::ode::validate_grid;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::io::Write;

/// What happened, with type indices into the model's [`TypeSpace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// Parents `x`, `y` replaced by `p_G(x,y)` and `p_G(y,x)`.
    Recombination { g: SiteSet, x: usize, y: usize },
    /// One `x` individual mutates at `site` (0-based) to `target`.
    Mutation { x: usize, site: usize, target: u16 },
    /// An offspring of an `x` individual replaces a `y` individual.
    Resampling { x: usize, y: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub time: f64,
}

impl EventKind {
    pub fn update(&self, space: &TypeSpace) -> SignedUpdate {
        match *self {
            EventKind::Recombination { g, x, y } => SignedUpdate::recombination(space, g, x, y),
            EventKind::Mutation { x, site, target } => SignedUpdate::mutation(space, x, site, target as usize),
            EventKind::Resampling { x, y } => SignedUpdate::resampling(x, y),
        }
    }

    fn class(&self) -> usize {
        match self {
            EventKind::Recombination { .. } => 0,
            EventKind::Mutation { .. } => 1,
            EventKind::Resampling { .. } => 2,
        }
    }
}

/// Total event rate split by mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RateComponents {
    pub recombination: f64,
    pub mutation: f64,
    pub resampling: f64,
}

impl RateComponents {
    pub fn total(&self) -> f64 {
        self.recombination + self.mutation + self.resampling
    }

    fn as_array(&self) -> [f64; 3] {
        [self.recombination, self.mutation, self.resampling]
    }
}

/// `(N/4)Σ_G ρ_G`, `Σ_x z(x)Σ_i Σ_{y≠x_i} μ^i_{x_i y}` and `bN/2`.
pub fn total_rate(params: &ModelParams, z: &PopulationState) -> Result<RateComponents> {
    params.validate_state(z)?;
    let space = params.space();
    let n = params.pop_size() as f64;
    let mut mutation = 0.0;
    if params.has_mutation() {
        for (x, c) in z.support() {
            let out: f64 = (0..space.n_sites())
                .map(|i| params.mutation_out_rate(i, space.digit(x, i)))
                .sum();
            mutation += c as f64 * out;
        }
    }
    Ok(RateComponents {
        recombination: n / 4.0 * params.rho().total(),
        mutation,
        resampling: params.b() * n / 2.0,
    })
}

/// A marginal observable `[A]` relative to a reference type.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Observable {
    pub sites: SiteSet,
    pub reference: Genotype,
}

impl Observable {
    pub fn new(sites: SiteSet, reference: Genotype) -> Self {
        Observable { sites, reference }
    }

    /// Stable text key, e.g. `{1,2}@(0,0)`.
    pub fn id(&self) -> String {
        format!("{}@{}", self.sites, self.reference)
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Creation and destruction counts `⟨A⟩`, `(A)` for one observable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CounterPair {
    pub created: u64,
    pub destroyed: u64,
}

/// Counter bookkeeping for a set of observables.
#[derive(Clone, Debug)]
pub struct Counters {
    observables: Vec<Observable>,
    matches: Vec<Vec<bool>>,
    values: Vec<CounterPair>,
}

impl Counters {
    pub fn new(space: &TypeSpace, observables: &[Observable]) -> Result<Self> {
        let mut matches = Vec::with_capacity(observables.len());
        for o in observables {
            if !o.sites.is_subset_of(space.all_sites()) {
                return Err(Error::Precondition(format!(
                    "observable sites {} out of range",
                    o.sites
                )));
            }
            let r = space.encode(&o.reference)?;
            matches.push(space.match_table(r, o.sites));
        }
        Ok(Counters {
            observables: observables.to_vec(),
            matches,
            values: vec![CounterPair::default(); observables.len()],
        })
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn values(&self) -> &[CounterPair] {
        &self.values
    }

    /// Adds the increments of one event.
    ///
    /// A recombination counts toward `A` only when `G` splits `A`; both
    /// offspring and both parents are counted with multiplicity. A mutation
    /// counts only when its site lies in `A`. Resampling always counts.
    pub fn record(&mut self, space: &TypeSpace, kind: &EventKind) {
        for ((o, m), v) in self.observables.iter().zip(&self.matches).zip(&mut self.values) {
            let (created, destroyed) = match *kind {
                EventKind::Recombination { g, x, y } => {
                    let c = g.intersection(o.sites);
                    if c.is_empty() || c == o.sites {
                        continue;
                    }
                    let p = space.recombine_index(x, y, g);
                    let q = space.recombine_index(y, x, g);
                    (m[p] as u64 + m[q] as u64, m[x] as u64 + m[y] as u64)
                }
                EventKind::Mutation { x, site, target } => {
                    if !o.sites.contains(site) {
                        continue;
                    }
                    let x2 = space.with_digit(x, site, target as usize);
                    (m[x2] as u64, m[x] as u64)
                }
                EventKind::Resampling { x, y } => (m[x] as u64, m[y] as u64),
            };
            v.created += created;
            v.destroyed += destroyed;
        }
    }
}

/// Applies an event's update to `z` and its increments to `counters`.
pub fn apply_event(
    space: &TypeSpace,
    z: &mut PopulationState,
    counters: Option<&mut Counters>,
    event: &Event,
) -> Result<()> {
    event.kind.update(space).apply(z)?;
    if let Some(c) = counters {
        c.record(space, &event.kind);
    }
    Ok(())
}

/// Samples the next event from state `z` at time `now`.
pub fn sample_event<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    z: &PopulationState,
    now: f64,
) -> Result<Event> {
    let mut sim = Simulator::new(params, z)?;
    sim.time = now;
    sim.next_event(rng)
}

/// Per-mechanism sampling tables that do not depend on the state.
#[derive(Clone, Debug)]
struct Tables {
    rho_cum: Vec<(SiteSet, f64)>,
    rates_static: RateComponents,
    /// `out[i][a]`: total mutation rate away from allele `a` at site `i`.
    out: Vec<Vec<f64>>,
}

/// Mutable population with event sampling.
#[derive(Clone, Debug)]
pub struct Simulator {
    params: ModelParams,
    tables: Tables,
    individuals: Vec<u32>,
    counts: Vec<u64>,
    /// `allele_counts[i][a]`, maintained only when mutation is present.
    allele_counts: Vec<Vec<u64>>,
    time: f64,
    counters: Option<Counters>,
}

impl Simulator {
    pub fn new(params: &ModelParams, z0: &PopulationState) -> Result<Self> {
        params.validate_state(z0)?;
        let space = params.space();
        let mut rho_cum = Vec::new();
        let mut acc = 0.0;
        for (g, r) in params.rho().nonzero() {
            acc += r;
            rho_cum.push((g, acc));
        }
        let n = params.pop_size() as f64;
        let out: Vec<Vec<f64>> = (0..space.n_sites())
            .map(|i| {
                (0..space.allele_counts()[i] as usize)
                    .map(|a| params.mutation_out_rate(i, a))
                    .collect()
            })
            .collect();
        let tables = Tables {
            rho_cum,
            rates_static: RateComponents {
                recombination: n / 4.0 * acc,
                mutation: 0.0,
                resampling: params.b() * n / 2.0,
            },
            out,
        };
        let mut individuals = Vec::with_capacity(params.pop_size() as usize);
        for (x, c) in z0.support() {
            individuals.extend(std::iter::repeat_n(x as u32, c as usize));
        }
        let mut allele_counts = Vec::new();
        if params.has_mutation() {
            allele_counts = space.allele_counts().iter().map(|&k| vec![0u64; k as usize]).collect();
            for (x, c) in z0.support() {
                for (i, ac) in allele_counts.iter_mut().enumerate() {
                    ac[space.digit(x, i)] += c;
                }
            }
        }
        Ok(Simulator {
            params: params.clone(),
            tables,
            individuals,
            counts: z0.counts().to_vec(),
            allele_counts,
            time: 0.0,
            counters: None,
        })
    }

    /// Starts tracking `⟨A⟩`/`(A)` for the given observables.
    pub fn track(&mut self, observables: &[Observable]) -> Result<()> {
        self.counters = Some(Counters::new(self.params.space(), observables)?);
        Ok(())
    }

    pub fn counters(&self) -> Option<&Counters> {
        self.counters.as_ref()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn state(&self) -> PopulationState {
        PopulationState::from_counts(self.params.space(), self.counts.clone()).expect("simulator keeps a valid state")
    }

    /// `[A]` for a precomputed match table.
    pub fn count_matching(&self, matches: &[bool]) -> u64 {
        self.counts
            .iter()
            .zip(matches)
            .filter(|(_, &m)| m)
            .map(|(&c, _)| c)
            .sum()
    }

    pub fn rates(&self) -> RateComponents {
        let mut r = self.tables.rates_static;
        if !self.allele_counts.is_empty() {
            r.mutation = self
                .allele_counts
                .iter()
                .zip(&self.tables.out)
                .map(|(ac, out)| ac.iter().zip(out).map(|(&c, &o)| c as f64 * o).sum::<f64>())
                .sum();
        }
        r
    }

    fn set_individual(&mut self, k: usize, to: usize) {
        let from = self.individuals[k] as usize;
        if from == to {
            return;
        }
        self.individuals[k] = to as u32;
        self.counts[from] -= 1;
        self.counts[to] += 1;
        if !self.allele_counts.is_empty() {
            let space = self.params.space();
            for (i, ac) in self.allele_counts.iter_mut().enumerate() {
                ac[space.digit(from, i)] -= 1;
                ac[space.digit(to, i)] += 1;
            }
        }
    }

    /// Draws the waiting time and the event without applying it. The
    /// returned individuals (for recombination and resampling) are what
    /// [`Self::apply_sampled`] needs.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Event, usize, usize)> {
        let rates = self.rates();
        let total = rates.total();
        if total <= 0.0 {
            return Err(Error::Absorbing);
        }
        let u: f64 = rng.gen();
        let dt = -(1.0 - u).ln() / total;
        let n = self.individuals.len();
        let mut pick = rng.gen::<f64>() * total;
        let mut class = 0;
        for (c, r) in rates.as_array().iter().enumerate() {
            if *r > 0.0 {
                class = c;
                if pick < *r {
                    break;
                }
                pick -= r;
            }
        }
        let space = self.params.space();
        let (kind, i, j) = match class {
            0 => {
                let target = rng.gen::<f64>() * self.tables.rho_cum.last().expect("rate > 0").1;
                let pos = self.tables.rho_cum.partition_point(|&(_, c)| c <= target);
                let g = self.tables.rho_cum[pos.min(self.tables.rho_cum.len() - 1)].0;
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..n);
                let (x, y) = (self.individuals[i] as usize, self.individuals[j] as usize);
                (EventKind::Recombination { g, x, y }, i, j)
            }
            1 => {
                // (site, allele) ∝ count·out-rate, then target ∝ μ
                let mut pick = rng.gen::<f64>() * rates.mutation;
                let mut chosen = None;
                'outer: for (site, (ac, out)) in self.allele_counts.iter().zip(&self.tables.out).enumerate() {
                    for (a, (&c, &o)) in ac.iter().zip(out).enumerate() {
                        let w = c as f64 * o;
                        if w > 0.0 {
                            chosen = Some((site, a));
                            if pick < w {
                                break 'outer;
                            }
                            pick -= w;
                        }
                    }
                }
                let (site, a) = chosen.expect("mutation rate > 0");
                let row = &self.params.mutation_matrix(site)[a];
                let mut pick = rng.gen::<f64>() * self.tables.out[site][a];
                let mut target = a;
                for (b, &m) in row.iter().enumerate() {
                    if b != a && m > 0.0 {
                        target = b;
                        if pick < m {
                            break;
                        }
                        pick -= m;
                    }
                }
                let k = loop {
                    let k = rng.gen_range(0..n);
                    if space.digit(self.individuals[k] as usize, site) == a {
                        break k;
                    }
                };
                let x = self.individuals[k] as usize;
                (
                    EventKind::Mutation {
                        x,
                        site,
                        target: target as u16,
                    },
                    k,
                    k,
                )
            }
            _ => {
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..n);
                let (x, y) = (self.individuals[i] as usize, self.individuals[j] as usize);
                (EventKind::Resampling { x, y }, i, j)
            }
        };
        Ok((
            Event {
                kind,
                time: self.time + dt,
            },
            i,
            j,
        ))
    }

    fn apply_sampled(&mut self, event: &Event, i: usize, j: usize) {
        let space = self.params.space().clone();
        match event.kind {
            EventKind::Recombination { g, x, y } => {
                self.set_individual(i, space.recombine_index(x, y, g));
                if i != j {
                    self.set_individual(j, space.recombine_index(y, x, g));
                }
            }
            EventKind::Mutation { x, site, target } => {
                self.set_individual(i, space.with_digit(x, site, target as usize));
            }
            EventKind::Resampling { x, .. } => self.set_individual(j, x),
        }
        if let Some(c) = self.counters.as_mut() {
            c.record(&space, &event.kind);
        }
        self.time = event.time;
    }

    /// Samples the next event without applying it.
    pub fn next_event<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Event> {
        self.draw(rng).map(|(e, _, _)| e)
    }

    /// Samples and applies one event.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Event> {
        let (e, i, j) = self.draw(rng)?;
        self.apply_sampled(&e, i, j);
        Ok(e)
    }

    /// Applies the next event if it happens by time `t`; otherwise moves the
    /// clock to `t` and returns `None`. Discarding the overshooting event is
    /// exact by memorylessness.
    pub fn step_until<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> Result<Option<Event>> {
        match self.draw(rng) {
            Ok((e, i, j)) if e.time <= t => {
                self.apply_sampled(&e, i, j);
                Ok(Some(e))
            }
            Ok(_) | Err(Error::Absorbing) => {
                self.time = t;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// Runs until time `t`.
    pub fn advance_to<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> Result<()> {
        while self.step_until(t, rng)?.is_some() {}
        Ok(())
    }
}

/// Values of `[A]`, `⟨A⟩`, `(A)` at one sample time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObservableSample {
    pub marginal: u64,
    pub created: u64,
    pub destroyed: u64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub observables: Vec<Observable>,
    /// `samples[time][observable]`.
    pub samples: Vec<Vec<ObservableSample>>,
    pub final_state: PopulationState,
}

impl Trajectory {
    /// Writes `time,observable_id,value` rows for `[A]`, `<A>` and `(A)`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# moran-moments trajectory v1")?;
        writeln!(w, "time,observable_id,value")?;
        for (t, row) in self.times.iter().zip(&self.samples) {
            for (o, s) in self.observables.iter().zip(row) {
                let id = o.id();
                writeln!(w, "{t},[{id}],{}", s.marginal)?;
                writeln!(w, "{t},<{id}>,{}", s.created)?;
                writeln!(w, "{t},({id}),{}", s.destroyed)?;
            }
        }
        Ok(())
    }
}

/// Simulates one path and records the observables at the grid times.
pub fn simulate<R: Rng + ?Sized>(
    params: &ModelParams,
    z0: &PopulationState,
    grid: &[f64],
    observables: &[Observable],
    rng: &mut R,
) -> Result<Trajectory> {
    validate_grid(grid)?;
    let mut sim = Simulator::new(params, z0)?;
    sim.track(observables)?;
    let space = params.space();
    let tables: Vec<Vec<bool>> = observables
        .iter()
        .map(|o| Ok(space.match_table(space.encode(&o.reference)?, o.sites)))
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(grid.len());
    for &t in grid {
        sim.advance_to(t, rng)?;
        let counters = sim.counters().expect("tracking enabled").values();
        samples.push(
            tables
                .iter()
                .zip(counters)
                .map(|(m, c)| ObservableSample {
                    marginal: sim.count_matching(m),
                    created: c.created,
                    destroyed: c.destroyed,
                })
                .collect(),
        );
    }
    Ok(Trajectory {
        times: grid.to_vec(),
        observables: observables.to_vec(),
        samples,
        final_state: sim.state(),
    })
}

/// RNG for replicate `index` under `seed`: one ChaCha8 stream per replicate.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Event-class index used in frequency tests: 0 recombination, 1 mutation,
/// 2 resampling.
pub fn event_class(kind: &EventKind) -> usize {
    kind.class()
}
