//! Python module `moran_moments`.
//!
//! Site sets are 1-based lists, genotypes 0-based allele lists and
//! populations lists of `(genotype, count)` pairs.

use moran_core::deterministic::{self, Distribution};
use moran_core::hierarchy::{self, build_system, solve};
use moran_core::oracle::ExactOracle;
use moran_core::sim::{replicate_rng, simulate, Observable};
use moran_core::{Error, Genotype, PopulationState, SiteSet};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Absorbing | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Population = Vec<(Vec<u16>, u64)>;

fn sites(s: &[usize]) -> PyResult<SiteSet> {
    SiteSet::from_sites(s).map_err(err)
}

#[pyclass(frozen)]
#[derive(Clone)]
struct ModelParams {
    inner: moran_core::ModelParams,
}

impl ModelParams {
    fn state(&self, pop: &Population) -> PyResult<PopulationState> {
        let space = self.inner.space();
        let pairs: Vec<(Genotype, u64)> = pop.iter().map(|(g, c)| (Genotype::new(g.clone()), *c)).collect();
        let z = PopulationState::from_pairs(space, pairs.iter().map(|(g, c)| (g, *c))).map_err(err)?;
        self.inner.validate_state(&z).map_err(err)?;
        Ok(z)
    }
}

#[pymethods]
impl ModelParams {
    #[new]
    fn new(alleles: Vec<u16>, pop_size: u64) -> PyResult<Self> {
        Ok(ModelParams {
            inner: moran_core::ModelParams::new(alleles, pop_size).map_err(err)?,
        })
    }

    /// Copy with `rho_G = rate` (and its complement).
    fn with_rho(&self, sites_g: Vec<usize>, rate: f64) -> PyResult<Self> {
        let inner = self.inner.clone().with_rho(sites(&sites_g)?, rate).map_err(err)?;
        Ok(ModelParams { inner })
    }

    /// Copy with mutation rate `from -> to` at a 1-based site.
    fn with_mutation(&self, site: usize, from: u16, to: u16, rate: f64) -> PyResult<Self> {
        if site == 0 {
            return Err(PyValueError::new_err("sites are 1-based"));
        }
        let inner = self
            .inner
            .clone()
            .with_mutation(site - 1, from, to, rate)
            .map_err(err)?;
        Ok(ModelParams { inner })
    }

    fn with_resampling(&self, b: f64) -> PyResult<Self> {
        let inner = self.inner.clone().with_resampling(b).map_err(err)?;
        Ok(ModelParams { inner })
    }

    #[getter]
    fn pop_size(&self) -> u64 {
        self.inner.pop_size()
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.inner.n_sites()
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b()
    }

    fn rho(&self, sites_g: Vec<usize>) -> PyResult<f64> {
        Ok(self.inner.rho().get(sites(&sites_g)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelParams(alleles={:?}, pop_size={})",
            self.inner.space().allele_counts(),
            self.inner.pop_size()
        )
    }
}

/// Closed moment system for one reference type.
#[pyclass(frozen)]
struct MomentSystem {
    inner: hierarchy::MomentSystem,
}

#[pymethods]
impl MomentSystem {
    #[new]
    #[pyo3(signature = (params, reference, support=None))]
    fn new(params: &ModelParams, reference: Vec<u16>, support: Option<Vec<usize>>) -> PyResult<Self> {
        let support = match support {
            Some(s) => sites(&s)?,
            None => params.inner.all_sites(),
        };
        let inner = build_system(&params.inner, &Genotype::new(reference), support).map_err(err)?;
        Ok(MomentSystem { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Partial partitions in row order, e.g. `"{1,2}|{3}"`.
    fn index(&self) -> Vec<String> {
        self.inner.index().iter().map(|p| p.to_string()).collect()
    }

    fn coefficient(&self, row: &str, col: &str) -> PyResult<f64> {
        let r = row.parse().map_err(err)?;
        let c = col.parse().map_err(err)?;
        Ok(self.inner.coefficient(&r, &c))
    }

    /// Nonzero `(row, col, coefficient)` entries.
    fn entries(&self) -> Vec<(usize, usize, f64)> {
        self.inner.entries().collect()
    }

    /// Moments on `grid`, one list per time in index order.
    fn solve(&self, params: &ModelParams, initial: Population, grid: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let z0 = params.state(&initial)?;
        Ok(solve(&self.inner, &z0, &grid).map_err(err)?.values)
    }
}

/// Exact `E[prod [A]_t]` for each partition string at each grid time.
#[pyfunction]
fn oracle_moments(
    params: &ModelParams,
    initial: Population,
    reference: Vec<u16>,
    partitions: Vec<String>,
    grid: Vec<f64>,
) -> PyResult<Vec<Vec<f64>>> {
    let z0 = params.state(&initial)?;
    let oracle = ExactOracle::new(&params.inner).map_err(err)?;
    let p0 = oracle.point_mass(&z0).map_err(err)?;
    let pps = partitions
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<moran_core::PartialPartition>, _>>()
        .map_err(err)?;
    let x = Genotype::new(reference);
    grid.iter()
        .map(|&t| {
            let pt = oracle.transient_distribution(&p0, t).map_err(err)?;
            pps.iter()
                .map(|pp| oracle.moment_of(&pt, pp, &x).map_err(err))
                .collect()
        })
        .collect()
}

/// One path: `[A]_t` for each site set at each grid time.
#[pyfunction]
fn simulate_marginals(
    params: &ModelParams,
    initial: Population,
    reference: Vec<u16>,
    site_sets: Vec<Vec<usize>>,
    grid: Vec<f64>,
    seed: u64,
) -> PyResult<Vec<Vec<u64>>> {
    let z0 = params.state(&initial)?;
    let x = Genotype::new(reference);
    let obs = site_sets
        .iter()
        .map(|s| Ok(Observable::new(sites(s)?, x.clone())))
        .collect::<PyResult<Vec<_>>>()?;
    let mut rng = replicate_rng(seed, 0);
    let traj = simulate(&params.inner, &z0, &grid, &obs, &mut rng).map_err(err)?;
    Ok(traj
        .samples
        .iter()
        .map(|row| row.iter().map(|s| s.marginal).collect())
        .collect())
}

/// Closed-form two-site `(E[[1,2]], E[[1][2]], E[LD])` at `t`.
#[pyfunction]
fn two_site_ld(params: &ModelParams, initial: Population, reference: Vec<u16>, t: f64) -> PyResult<(f64, f64, f64)> {
    let z0 = params.state(&initial)?;
    let ld = hierarchy::two_site_mean_ld(&params.inner, &z0, &Genotype::new(reference)).map_err(err)?;
    Ok(ld.at(t))
}

/// Deterministic flow from `initial / N`; weights in type-index order.
#[pyfunction]
fn deterministic_path(params: &ModelParams, initial: Population, grid: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let z0 = params.state(&initial)?;
    let space = params.inner.space();
    let omega0 = Distribution::from_state(space, &z0, params.inner.pop_size() as f64).map_err(err)?;
    let path = deterministic::integrate(&params.inner, &omega0, &grid).map_err(err)?;
    Ok(path.iter().map(|d| d.weights().to_vec()).collect())
}

#[pymodule]
fn moran_moments(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ModelParams>()?;
    m.add_class::<MomentSystem>()?;
    m.add_function(wrap_pyfunction!(oracle_moments, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_marginals, m)?)?;
    m.add_function(wrap_pyfunction!(two_site_ld, m)?)?;
    m.add_function(wrap_pyfunction!(deterministic_path, m)?)?;
    Ok(())
}
