//! JSON run configuration.
//!
//! Site sets are 1-based sorted lists; genotypes are 0-based allele lists.

use crate::error::{Error, Result};
use crate::model::{Genotype, ModelParams, PopulationState, SiteSet};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Single trajectories of `[A]`, `⟨A⟩`, `(A)`.
    Simulate,
    /// Solve the closed hierarchy and export coefficients and moments.
    Hierarchy,
    /// Exact moments from the full generator.
    Oracle,
    /// Deterministic flow, product check and law of large numbers.
    Deterministic,
    /// Monte Carlo against hierarchy moments.
    Compare,
    /// Two-site linkage disequilibrium, closed form against Monte Carlo.
    Ld,
    /// Three-site resampling derivative against its bracket.
    Nonclosure,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Simulate,
        Experiment::Hierarchy,
        Experiment::Oracle,
        Experiment::Deterministic,
        Experiment::Compare,
        Experiment::Ld,
        Experiment::Nonclosure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Hierarchy => "hierarchy",
            Experiment::Oracle => "oracle",
            Experiment::Deterministic => "deterministic",
            Experiment::Compare => "compare",
            Experiment::Ld => "ld",
            Experiment::Nonclosure => "nonclosure",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoEntry {
    pub set: Vec<usize>,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationEntry {
    /// 1-based site.
    pub site: usize,
    pub from: u16,
    pub to: u16,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of alleles at each site.
    pub alleles: Vec<u16>,
    pub population_size: u64,
    #[serde(default)]
    pub rho: Vec<RhoEntry>,
    #[serde(default)]
    pub mu: Vec<MutationEntry>,
    #[serde(default)]
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeCount {
    #[serde(rename = "type")]
    pub genotype: Vec<u16>,
    pub count: u64,
}

/// Settings for the deterministic experiment's law-of-large-numbers run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlnConfig {
    pub population_sizes: Vec<u64>,
    #[serde(default = "default_lln_replicates")]
    pub replicates: usize,
    #[serde(default = "default_lln_steps")]
    pub grid_steps: usize,
}

fn default_lln_replicates() -> usize {
    100
}

fn default_lln_steps() -> usize {
    50
}

fn default_replicates() -> usize {
    1000
}

fn default_z() -> f64 {
    3.0
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_step() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub initial: Vec<TypeCount>,
    pub reference_type: Vec<u16>,
    pub experiment: Experiment,
    pub t_grid: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub strict_deterministic: bool,
    #[serde(default = "default_z")]
    pub z_threshold: f64,
    /// Sites spanned by the hierarchy or observables; all sites if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
    /// Finite-difference step of the non-closure check.
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lln: Option<LlnConfig>,
}

/// Validated objects built from a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct Inputs {
    pub params: ModelParams,
    pub initial: PopulationState,
    pub reference: Genotype,
    pub support: SiteSet,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        cfg.inputs()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds and validates the model, initial state and reference type.
    pub fn inputs(&self) -> Result<Inputs> {
        let m = &self.model;
        let mut params = ModelParams::new(m.alleles.clone(), m.population_size)?;
        for e in &self.model.rho {
            let g = SiteSet::from_sites(&e.set)?;
            params.set_rho(g, e.rate)?;
        }
        for e in &self.model.mu {
            if e.site == 0 || e.site > m.alleles.len() {
                return Err(Error::Config(format!(
                    "mutation site {} out of range 1..={}",
                    e.site,
                    m.alleles.len()
                )));
            }
            if e.from == e.to {
                return Err(Error::Config(format!(
                    "mutation entry at site {} maps allele {} to itself",
                    e.site, e.from
                )));
            }
            params.set_mutation(e.site - 1, e.from, e.to, e.rate)?;
        }
        params.set_resampling(m.b)?;
        let space = params.space();
        let mut counts = vec![0u64; space.size()];
        for tc in &self.initial {
            let g = Genotype::new(tc.genotype.clone());
            counts[space.encode(&g)?] += tc.count;
        }
        let total: u64 = counts.iter().sum();
        if total != m.population_size {
            return Err(Error::Config(format!(
                "initial counts sum to {total}, population size is {}",
                m.population_size
            )));
        }
        let initial = PopulationState::from_counts(space, counts)?;
        let reference = Genotype::new(self.reference_type.clone());
        space.encode(&reference)?;
        let support = match &self.support {
            Some(s) => SiteSet::from_sites(s)?,
            None => params.all_sites(),
        };
        if !support.is_subset_of(params.all_sites()) {
            return Err(Error::Config(format!("support {support} is not a subset of the sites")));
        }
        if self.t_grid.is_empty() || self.t_grid[0] != 0.0 || self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("t_grid must start at 0 and increase strictly".into()));
        }
        if !(self.z_threshold > 0.0) {
            return Err(Error::Config("z_threshold must be positive".into()));
        }
        Ok(Inputs {
            params,
            initial,
            reference,
            support,
        })
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    RunConfig::from_json(&text)
}
