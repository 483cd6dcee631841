//! Gibbs sampler for the static hierarchical latent class model.
//!
//! Each sweep resamples type assignments `z`, then the per-question response
//! distributions `beta`, then the per-group mixture proportions `pi`. The
//! `z` and `beta` steps are shared with the dynamic sampler, which indexes
//! `pi` by period instead of group.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{SurveyDataset, MISSING};
use crate::distributions::{sample_categorical_log, sample_dirichlet_into, RngStream};
use crate::error::{Error, Result};
use crate::selection::observed_loglik;
use crate::state::{is_snapshot, validate_schedule, ChainState, ModelConfig, PosteriorDraws, Snapshot};

/// Per-question Dirichlet hyperparameters, indexed `[question][type][category]`.
pub type Eta = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticConfig {
    pub k: usize,
    /// `G × K` mixture prior.
    pub alpha: Vec<Vec<f64>>,
    pub eta: Eta,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl StaticConfig {
    pub fn validate(&self, data: &SurveyDataset) -> Result<()> {
        validate_schedule(self.iterations, self.burn_in, self.thin)?;
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if self.alpha.len() != data.n_labels() {
            return Err(Error::InvalidParameter(format!(
                "alpha has {} rows for {} groups",
                self.alpha.len(),
                data.n_labels()
            )));
        }
        for row in &self.alpha {
            check_hyper_row(row, self.k, "alpha")?;
        }
        validate_eta(&self.eta, self.k, data)
    }
}

fn check_hyper_row(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return Err(Error::InvalidParameter(format!(
            "{what} row has length {}, expected {len}",
            row.len()
        )));
    }
    if row.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidParameter(format!("{what} entries must be positive")));
    }
    Ok(())
}

pub(crate) fn validate_eta(eta: &Eta, k: usize, data: &SurveyDataset) -> Result<()> {
    if eta.len() != data.n_questions() {
        return Err(Error::InvalidParameter(format!(
            "eta covers {} questions, data has {}",
            eta.len(),
            data.n_questions()
        )));
    }
    for (rows, q) in eta.iter().zip(data.questions()) {
        if rows.len() != k {
            return Err(Error::InvalidParameter(format!(
                "eta for '{}' has {} rows, expected K = {k}",
                q.name,
                rows.len()
            )));
        }
        for row in rows {
            check_hyper_row(row, q.n_categories(), "eta")?;
        }
    }
    Ok(())
}

/// Hyperparameters with type `k` anchored to response category `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredPriors {
    pub alpha: Vec<Vec<f64>>,
    pub eta: Eta,
    pub warnings: Vec<String>,
}

/// `alpha = 1` everywhere and `eta[j][k][v] = 10` when `v == k`, else 1.
pub fn default_priors(data: &SurveyDataset, k: usize) -> AnchoredPriors {
    anchored_priors(data, k, 10.0, 1.0)
}

pub fn anchored_priors(
    data: &SurveyDataset,
    k: usize,
    eta_diag: f64,
    alpha_value: f64,
) -> AnchoredPriors {
    let (eta, warnings) = anchored_eta(data, k, eta_diag);
    AnchoredPriors {
        alpha: vec![vec![alpha_value; k]; data.n_labels()],
        eta,
        warnings,
    }
}

/// The anchored `eta` alone. When a question has fewer categories than
/// types, only the first `L_j` types are anchored on it and the remaining
/// rows are flat.
pub fn anchored_eta(data: &SurveyDataset, k: usize, eta_diag: f64) -> (Eta, Vec<String>) {
    let mut warnings = Vec::new();
    let eta = data
        .questions()
        .iter()
        .map(|q| {
            let l = q.n_categories();
            if k > l {
                let msg = format!(
                    "question '{}' has {l} categories for K = {k}; types {}..{k} are not anchored on it",
                    q.name,
                    l + 1
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            (0..k)
                .map(|t| (0..l).map(|v| if v == t { eta_diag } else { 1.0 }).collect())
                .collect()
        })
        .collect();
    (eta, warnings)
}

/// Uniform `z`, with `pi` rows drawn from `alpha` and `beta` rows from `eta`.
pub fn init_state(
    data: &SurveyDataset,
    config: &StaticConfig,
    rng: &mut RngStream,
) -> Result<ChainState> {
    config.validate(data)?;
    let k = config.k;
    let z = (0..data.n_respondents())
        .map(|_| rand::Rng::random_range(rng, 0..k))
        .collect();
    let mut pi = Vec::with_capacity(config.alpha.len());
    for a in &config.alpha {
        let mut row = vec![0.0; k];
        sample_dirichlet_into(a, rng, &mut row)?;
        pi.push(row);
    }
    let beta = draw_beta_from_prior(&config.eta, rng)?;
    Ok(ChainState {
        z,
        pi,
        beta,
        pi_tilde: None,
        sigma2: None,
    })
}

pub(crate) fn draw_beta_from_prior(eta: &Eta, rng: &mut RngStream) -> Result<Vec<Vec<Vec<f64>>>> {
    eta.iter()
        .map(|rows| {
            rows.iter()
                .map(|e| {
                    let mut row = vec![0.0; e.len()];
                    sample_dirichlet_into(e, rng, &mut row)?;
                    Ok(row)
                })
                .collect()
        })
        .collect()
}

/// Resamples every `z_i` with `P(z_i = k) ∝ pi[label_i][k] · Π_j beta[j][k][x_ij]`,
/// accumulated in log space. Missing responses contribute no factor.
pub fn step_z(state: &mut ChainState, data: &SurveyDataset, rng: &mut RngStream) -> Result<()> {
    let k = state.n_types();
    let lens = data.category_counts();
    let offsets: Vec<usize> = lens
        .iter()
        .scan(0, |acc, &l| {
            let o = *acc;
            *acc += l;
            Some(o)
        })
        .collect();
    let total = data.total_categories();
    // log_beta[t * total + offsets[j] + v]
    let mut log_beta = vec![0.0; k * total];
    for (j, rows) in state.beta.iter().enumerate() {
        for (t, row) in rows.iter().enumerate() {
            for (v, &b) in row.iter().enumerate() {
                log_beta[t * total + offsets[j] + v] = b.ln();
            }
        }
    }
    let log_pi: Vec<Vec<f64>> = state
        .pi
        .iter()
        .map(|row| row.iter().map(|p| p.ln()).collect())
        .collect();

    let mut weights = vec![0.0; k];
    let mut scratch = Vec::with_capacity(k);
    for (i, (row, &g)) in data.rows().zip(data.labels()).enumerate() {
        for (t, w) in weights.iter_mut().enumerate() {
            let base = t * total;
            let mut lw = log_pi[g][t];
            for (j, &x) in row.iter().enumerate() {
                if x != MISSING {
                    lw += log_beta[base + offsets[j] + x as usize];
                }
            }
            *w = lw;
        }
        state.z[i] = sample_categorical_log(&weights, &mut scratch, rng).ok_or_else(|| {
            Error::Numerical(format!("respondent {i}: every type has zero likelihood"))
        })?;
    }
    Ok(())
}

/// Response counts `C[j][k][v] = #{i : z_i = k, x_ij = v}`.
pub fn response_counts(z: &[usize], data: &SurveyDataset, k: usize) -> Vec<Vec<Vec<u64>>> {
    let mut counts: Vec<Vec<Vec<u64>>> = data
        .questions()
        .iter()
        .map(|q| vec![vec![0; q.n_categories()]; k])
        .collect();
    for (row, &t) in data.rows().zip(z) {
        for (j, &x) in row.iter().enumerate() {
            if x != MISSING {
                counts[j][t][x as usize] += 1;
            }
        }
    }
    counts
}

/// Group (or period) counts `C[g][k] = #{i : z_i = k, label_i = g}`.
pub fn label_counts(z: &[usize], data: &SurveyDataset, k: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0; k]; data.n_labels()];
    for (&t, &g) in z.iter().zip(data.labels()) {
        counts[g][t] += 1;
    }
    counts
}

/// `beta[j][k] ~ Dirichlet(eta[j][k] + C[j][k])`.
pub fn step_beta(
    state: &mut ChainState,
    data: &SurveyDataset,
    eta: &Eta,
    rng: &mut RngStream,
) -> Result<()> {
    let k = state.n_types();
    let counts = response_counts(&state.z, data, k);
    let mut post = Vec::new();
    for (j, rows) in state.beta.iter_mut().enumerate() {
        for (t, row) in rows.iter_mut().enumerate() {
            post.clear();
            post.extend(eta[j][t].iter().zip(&counts[j][t]).map(|(e, &c)| e + c as f64));
            sample_dirichlet_into(&post, rng, row)?;
        }
    }
    Ok(())
}

/// `pi[g] ~ Dirichlet(alpha[g] + C[g])`.
pub fn step_pi(
    state: &mut ChainState,
    data: &SurveyDataset,
    alpha: &[Vec<f64>],
    rng: &mut RngStream,
) -> Result<()> {
    let k = state.n_types();
    let counts = label_counts(&state.z, data, k);
    let mut post = Vec::with_capacity(k);
    for (g, row) in state.pi.iter_mut().enumerate() {
        post.clear();
        post.extend(alpha[g].iter().zip(&counts[g]).map(|(a, &c)| a + c as f64));
        sample_dirichlet_into(&post, rng, row)?;
    }
    Ok(())
}

/// Runs one chain of `config.iterations` sweeps in the fixed order
/// `z → beta → pi`.
pub fn run_gibbs(
    data: &SurveyDataset,
    config: &StaticConfig,
    rng: &mut RngStream,
) -> Result<PosteriorDraws> {
    let state = init_state(data, config, rng)?;
    run_gibbs_from(data, config, state, rng)
}

/// As [`run_gibbs`], starting from a given state.
pub fn run_gibbs_from(
    data: &SurveyDataset,
    config: &StaticConfig,
    mut state: ChainState,
    rng: &mut RngStream,
) -> Result<PosteriorDraws> {
    config.validate(data)?;
    let mut snapshots = Vec::with_capacity(crate::state::snapshot_count(
        config.iterations,
        config.burn_in,
        config.thin,
    ));
    for r in 1..=config.iterations {
        let sweep = |state: &mut ChainState, rng: &mut RngStream| -> Result<()> {
            step_z(state, data, rng)?;
            step_beta(state, data, &config.eta, rng)?;
            step_pi(state, data, &config.alpha, rng)
        };
        sweep(&mut state, rng).map_err(|e| Error::at_iteration(r, e))?;
        if is_snapshot(r, config.burn_in, config.thin) {
            let loglik = observed_loglik(data, &state.beta, &state.pi)
                .unwrap_or(f64::NEG_INFINITY);
            snapshots.push(Snapshot {
                chain: 0,
                iteration: r,
                loglik,
                state: state.clone(),
            });
        }
    }
    Ok(PosteriorDraws {
        config: ModelConfig::Static(config.clone()),
        streams: vec![rng.id()],
        snapshots,
    })
}
