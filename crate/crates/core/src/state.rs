use serde::{Deserialize, Serialize};

use crate::data::Mode;
use crate::distributions::StreamId;
use crate::dynamic_sampler::DynamicConfig;
use crate::error::{Error, Result};
use crate::static_sampler::StaticConfig;

/// One state of a chain.
///
/// `pi` has one row per group (static) or period (dynamic). `beta[j][k]` is
/// the response distribution of type `k` on question `j`. The dynamic
/// fields are `None` for static chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub z: Vec<usize>,
    pub pi: Vec<Vec<f64>>,
    pub beta: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_tilde: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<Vec<f64>>,
}

impl ChainState {
    pub fn n_types(&self) -> usize {
        self.pi.first().map_or(0, Vec::len)
    }

    /// Checks the simplex, range and positivity invariants.
    pub fn check(&self, tol: f64) -> Result<()> {
        let k = self.n_types();
        if let Some(i) = self.z.iter().position(|&z| z >= k) {
            return Err(Error::Numerical(format!("z[{i}] = {} out of range", self.z[i])));
        }
        let on_simplex = |row: &[f64]| {
            row.iter().all(|&p| p >= 0.0 && p.is_finite())
                && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        };
        for (g, row) in self.pi.iter().enumerate() {
            if row.len() != k || !on_simplex(row) {
                return Err(Error::Numerical(format!("pi row {g} is not on the simplex")));
            }
        }
        for (j, rows) in self.beta.iter().enumerate() {
            for (t, row) in rows.iter().enumerate() {
                if !on_simplex(row) {
                    return Err(Error::Numerical(format!(
                        "beta question {j}, type {t} is not on the simplex"
                    )));
                }
            }
        }
        if let Some(s) = &self.sigma2 {
            if s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Numerical("non-positive sigma2".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ModelConfig {
    Static(StaticConfig),
    Dynamic(DynamicConfig),
}

impl ModelConfig {
    pub fn mode(&self) -> Mode {
        match self {
            ModelConfig::Static(_) => Mode::Static,
            ModelConfig::Dynamic(_) => Mode::Dynamic,
        }
    }

    pub fn n_types(&self) -> usize {
        match self {
            ModelConfig::Static(c) => c.k,
            ModelConfig::Dynamic(c) => c.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub chain: usize,
    pub iteration: usize,
    /// Observed-data log-likelihood with `z` marginalised.
    pub loglik: f64,
    pub state: ChainState,
}

/// Thinned post-burn-in snapshots of one or more chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub config: ModelConfig,
    pub streams: Vec<StreamId>,
    pub snapshots: Vec<Snapshot>,
}

impl PosteriorDraws {
    pub fn mode(&self) -> Mode {
        self.config.mode()
    }

    pub fn n_types(&self) -> usize {
        self.config.n_types()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Concatenates chains run with the same configuration. Chain indices are
    /// renumbered in input order.
    pub fn merge(chains: Vec<PosteriorDraws>) -> Result<PosteriorDraws> {
        let mut iter = chains.into_iter();
        let mut merged = iter
            .next()
            .ok_or_else(|| Error::InvalidParameter("no chains to merge".into()))?;
        for s in &mut merged.snapshots {
            s.chain = 0;
        }
        for (c, draws) in iter.enumerate() {
            if draws.config != merged.config {
                return Err(Error::InvalidParameter(
                    "cannot merge chains with different configurations".into(),
                ));
            }
            merged.streams.extend(draws.streams);
            merged.snapshots.extend(draws.snapshots.into_iter().map(|mut s| {
                s.chain = c + 1;
                s
            }));
        }
        Ok(merged)
    }
}

/// Number of snapshots retained by a run: `floor((iterations - burn_in) / thin)`.
pub fn snapshot_count(iterations: usize, burn_in: usize, thin: usize) -> usize {
    iterations.saturating_sub(burn_in) / thin.max(1)
}

/// Whether sweep `r` (1-based) is retained.
pub(crate) fn is_snapshot(r: usize, burn_in: usize, thin: usize) -> bool {
    r > burn_in && (r - burn_in) % thin == 0
}

pub(crate) fn validate_schedule(iterations: usize, burn_in: usize, thin: usize) -> Result<()> {
    if thin == 0 {
        return Err(Error::InvalidParameter("thin must be at least 1".into()));
    }
    if burn_in >= iterations {
        return Err(Error::InvalidParameter(format!(
            "burn-in {burn_in} must be below iterations {iterations}"
        )));
    }
    Ok(())
}
