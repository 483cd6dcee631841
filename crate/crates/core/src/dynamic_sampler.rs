//! Sampler for the dynamic model, where mixture proportions follow a
//! logit-scale Gaussian random walk over periods.
//!
//! `z` and `beta` use the static Gibbs steps with `pi` indexed by period.
//! The logits `pi_tilde` have no conjugate update and are moved by stochastic
//! gradient Langevin dynamics (full batch by default); the per-type random
//! walk variances `sigma2` get an inverse-gamma update.
//!
//! Period boundaries: the first period has no predecessor and the last has
//! no successor, so the corresponding smoothing terms are absent (a flat
//! prior on the initial logits).

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::data::{Mode, SurveyDataset};
use crate::distributions::{log_sum_exp, sample_inverse_gamma, softmax_in_place, RngStream};
use crate::error::{Error, Result};
use crate::selection::observed_loglik;
use crate::state::{is_snapshot, validate_schedule, ChainState, ModelConfig, PosteriorDraws, Snapshot};
use crate::static_sampler::{draw_beta_from_prior, step_beta, step_z, validate_eta, Eta};

/// Polynomially decaying SGLD step size `ε_r = a (b + r)^{-c}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { a: 0.01, b: 1.0, c: 0.5 }
    }
}

impl StepSchedule {
    pub fn step(&self, r: usize) -> f64 {
        self.a * (self.b + r as f64).powf(-self.c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.c > 0.0 && self.c <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step schedule needs a, b > 0 and c in (0, 1]; got ({}, {}, {})",
                self.a, self.b, self.c
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicConfig {
    pub k: usize,
    pub eta: Eta,
    /// Inverse-gamma shape prior for the random-walk variances.
    pub v0: f64,
    /// Inverse-gamma scale prior for the random-walk variances.
    pub s0: f64,
    pub schedule: StepSchedule,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Mini-batch size for the logit gradient; `None` uses every respondent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

pub const DEFAULT_V0: f64 = 1.0;
pub const DEFAULT_S0: f64 = 0.1;

impl DynamicConfig {
    pub fn validate(&self, data: &SurveyDataset) -> Result<()> {
        validate_schedule(self.iterations, self.burn_in, self.thin)?;
        self.schedule.validate()?;
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if !(self.v0 > 0.0 && self.s0 > 0.0) {
            return Err(Error::InvalidParameter("v0 and s0 must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        validate_eta(&self.eta, self.k, data)
    }
}

/// Per-iteration SGLD trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SgldDiagnostics {
    pub iteration: Vec<usize>,
    pub step_size: Vec<f64>,
    pub noise_variance: Vec<f64>,
    /// Euclidean norm of the full `T × K` gradient.
    pub gradient_norm: Vec<f64>,
    /// Mean absolute drift `|ε/2 · gradient|` over coordinates.
    pub drift: Vec<f64>,
}

impl SgldDiagnostics {
    fn push(&mut self, r: usize, stats: SgldStepStats) {
        self.iteration.push(r);
        self.step_size.push(stats.step_size);
        self.noise_variance.push(stats.step_size);
        self.gradient_norm.push(stats.gradient_norm);
        self.drift.push(stats.drift);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgldStepStats {
    pub step_size: f64,
    pub gradient_norm: f64,
    pub drift: f64,
}

/// Per-period type counts `n[t][k]` and period sizes `N_t`, as reals so that
/// mini-batch rescaling can be applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodCounts {
    pub by_type: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
}

impl PeriodCounts {
    pub fn full(state: &ChainState, data: &SurveyDataset) -> Self {
        Self::from_indices(state, data, 0..data.n_respondents(), 1.0)
    }

    fn from_indices(
        state: &ChainState,
        data: &SurveyDataset,
        indices: impl Iterator<Item = usize>,
        scale: f64,
    ) -> Self {
        let k = state.n_types();
        let mut by_type = vec![vec![0.0; k]; data.n_labels()];
        let mut totals = vec![0.0; data.n_labels()];
        let labels = data.labels();
        for i in indices {
            let t = labels[i];
            by_type[t][state.z[i]] += scale;
            totals[t] += scale;
        }
        Self { by_type, totals }
    }
}

fn logits(state: &ChainState) -> Result<&Vec<Vec<f64>>> {
    state
        .pi_tilde
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("state has no logit path".into()))
}

fn variances(state: &ChainState) -> Result<&Vec<f64>> {
    state
        .sigma2
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("state has no random-walk variances".into()))
}

fn gradient_from_counts(
    path: &[Vec<f64>],
    sigma2: &[f64],
    pi_t: &[f64],
    counts: &PeriodCounts,
    t: usize,
    k: usize,
) -> Result<f64> {
    let s2 = sigma2[k];
    if !(s2 > 0.0) {
        return Err(Error::Numerical(format!("sigma2[{k}] = {s2} is not positive")));
    }
    let x = path[t][k];
    let mut g = counts.by_type[t][k] - counts.totals[t] * pi_t[k];
    if t > 0 {
        g -= (x - path[t - 1][k]) / s2;
    }
    if t + 1 < path.len() {
        g += (path[t + 1][k] - x) / s2;
    }
    Ok(g)
}

/// Derivative of the log conditional density of `pi_tilde[t]` with respect
/// to `pi_tilde[t][k]`:
///
/// `-(x_t - x_{t-1})/σ²_k + (x_{t+1} - x_t)/σ²_k + n_tk - N_t π_tk`,
///
/// with the backward term dropped at the first period and the forward term
/// dropped at the last. `t` and `k` are 0-based.
pub fn sgld_gradient(state: &ChainState, t: usize, k: usize, data: &SurveyDataset) -> Result<f64> {
    let path = logits(state)?;
    if t >= path.len() || k >= state.n_types() {
        return Err(Error::InvalidParameter(format!("(t, k) = ({t}, {k}) out of range")));
    }
    let counts = PeriodCounts::full(state, data);
    gradient_from_counts(path, variances(state)?, &state.pi[t], &counts, t, k)
}

/// Log conditional density of `pi_tilde[t]` given its neighbours and `z`, up
/// to an additive constant.
pub fn log_conditional(state: &ChainState, t: usize, data: &SurveyDataset) -> Result<f64> {
    let path = logits(state)?;
    let sigma2 = variances(state)?;
    let counts = PeriodCounts::full(state, data);
    let row = &path[t];
    let mut lp = 0.0;
    for (k, &s2) in sigma2.iter().enumerate() {
        if t > 0 {
            lp -= (row[k] - path[t - 1][k]).powi(2) / (2.0 * s2);
        }
        if t + 1 < path.len() {
            lp -= (path[t + 1][k] - row[k]).powi(2) / (2.0 * s2);
        }
    }
    // Σ_{i in t} log softmax(row)[z_i]
    let lse = log_sum_exp(row);
    for (k, &n) in counts.by_type[t].iter().enumerate() {
        lp += n * (row[k] - lse);
    }
    Ok(lp)
}

/// Applies one Langevin update with step `eps` to every period in turn,
/// using already-updated predecessors.
pub(crate) fn sgld_update(
    state: &mut ChainState,
    counts: &PeriodCounts,
    eps: f64,
    rng: &mut RngStream,
) -> Result<SgldStepStats> {
    let k = state.n_types();
    let sigma2 = state.sigma2.clone().ok_or_else(|| {
        Error::InvalidParameter("state has no random-walk variances".into())
    })?;
    let path = state
        .pi_tilde
        .as_mut()
        .ok_or_else(|| Error::InvalidParameter("state has no logit path".into()))?;
    let noise_sd = eps.sqrt();
    let mut grad = vec![0.0; k];
    let mut norm2 = 0.0;
    let mut drift = 0.0;
    for t in 0..path.len() {
        for (kk, g) in grad.iter_mut().enumerate() {
            *g = gradient_from_counts(path, &sigma2, &state.pi[t], counts, t, kk)?;
        }
        for (kk, &g) in grad.iter().enumerate() {
            let step = 0.5 * eps * g;
            let next = path[t][kk] + step + noise_sd * rng.standard_normal();
            if !next.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite logit update at period {t}, type {kk}"
                )));
            }
            path[t][kk] = next;
            norm2 += g * g;
            drift += step.abs();
        }
        state.pi[t].copy_from_slice(&path[t]);
        softmax_in_place(&mut state.pi[t])?;
    }
    let n_coords = (path.len() * k).max(1) as f64;
    Ok(SgldStepStats {
        step_size: eps,
        gradient_norm: norm2.sqrt(),
        drift: drift / n_coords,
    })
}

/// SGLD move for the logit path at iteration `r` (1-based). With a batch
/// size below `N`, counts come from a uniform subsample scaled by `N / M`.
pub fn step_pi_tilde_sgld(
    state: &mut ChainState,
    data: &SurveyDataset,
    r: usize,
    config: &DynamicConfig,
    rng: &mut RngStream,
) -> Result<SgldStepStats> {
    let n = data.n_respondents();
    let counts = match config.batch_size {
        Some(m) if m < n => {
            let idx = sample_indices(rng, n, m);
            PeriodCounts::from_indices(state, data, idx.into_iter(), n as f64 / m as f64)
        }
        _ => PeriodCounts::full(state, data),
    };
    sgld_update(state, &counts, config.schedule.step(r), rng)
}

/// Sum of squared logit increments per type.
pub fn increment_sums(path: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k];
    for w in path.windows(2) {
        for (s, (a, b)) in sums.iter_mut().zip(w[0].iter().zip(&w[1])) {
            *s += (b - a).powi(2);
        }
    }
    sums
}

/// `sigma2[k] ~ InverseGamma(v0 + T, s0 + Σ_t (x_tk - x_{t-1,k})²)`, summing
/// over the increments that exist.
pub fn step_sigma(state: &mut ChainState, v0: f64, s0: f64, rng: &mut RngStream) -> Result<()> {
    let k = state.n_types();
    let path = logits(state)?;
    let shape = v0 + path.len() as f64;
    let sums = increment_sums(path, k);
    let sigma2 = state
        .sigma2
        .as_mut()
        .ok_or_else(|| Error::InvalidParameter("state has no random-walk variances".into()))?;
    for (s, inc) in sigma2.iter_mut().zip(sums) {
        *s = sample_inverse_gamma(shape, s0 + inc, rng)?;
    }
    Ok(())
}

/// Uniform `z`, `beta` from its prior, flat logits (uniform `pi`) and
/// variances at the prior mode `s0 / (v0 + 1)`.
pub fn init_dynamic_state(
    data: &SurveyDataset,
    config: &DynamicConfig,
    rng: &mut RngStream,
) -> Result<ChainState> {
    config.validate(data)?;
    let k = config.k;
    let t = data.n_labels();
    let z = (0..data.n_respondents())
        .map(|_| rand::Rng::random_range(rng, 0..k))
        .collect();
    let beta = draw_beta_from_prior(&config.eta, rng)?;
    Ok(ChainState {
        z,
        pi: vec![vec![1.0 / k as f64; k]; t],
        beta,
        pi_tilde: Some(vec![vec![0.0; k]; t]),
        sigma2: Some(vec![config.s0 / (config.v0 + 1.0); k]),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicRun {
    pub draws: PosteriorDraws,
    pub diagnostics: SgldDiagnostics,
}

/// Runs one chain cycling `z → beta → pi_tilde (SGLD) → sigma2`.
pub fn run_dynamic(
    data: &SurveyDataset,
    config: &DynamicConfig,
    rng: &mut RngStream,
) -> Result<DynamicRun> {
    if data.mode() != Mode::Dynamic {
        return Err(Error::InvalidParameter(
            "dynamic sampler needs a dataset labelled by period".into(),
        ));
    }
    let mut state = init_dynamic_state(data, config, rng)?;
    let mut snapshots = Vec::new();
    let mut diagnostics = SgldDiagnostics::default();
    for r in 1..=config.iterations {
        let mut sweep = || -> Result<SgldStepStats> {
            step_z(&mut state, data, rng)?;
            step_beta(&mut state, data, &config.eta, rng)?;
            let stats = step_pi_tilde_sgld(&mut state, data, r, config, rng)?;
            step_sigma(&mut state, config.v0, config.s0, rng)?;
            Ok(stats)
        };
        let stats = sweep().map_err(|e| Error::at_iteration(r, e))?;
        diagnostics.push(r, stats);
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
    Ok(DynamicRun {
        draws: PosteriorDraws {
            config: ModelConfig::Dynamic(config.clone()),
            streams: vec![rng.id()],
            snapshots,
        },
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MissingPolicy, QuestionMeta};

    fn dynamic_dataset(responses: Vec<u32>, labels: Vec<usize>, periods: usize, l: usize) -> SurveyDataset {
        let n = labels.len();
        SurveyDataset::new(
            (0..n).map(|i| i.to_string()).collect(),
            vec![QuestionMeta {
                name: "q1".into(),
                category_labels: (1..=l).map(|v| v.to_string()).collect(),
                missing_policy: MissingPolicy::DropFromLikelihood,
            }],
            responses,
            labels,
            (1..=periods).map(|t| t.to_string()).collect(),
            Mode::Dynamic,
        )
        .unwrap()
    }

    fn state_with(path: Vec<Vec<f64>>, sigma2: Vec<f64>, z: Vec<usize>, l: usize) -> ChainState {
        let k = sigma2.len();
        let pi = path
            .iter()
            .map(|row| crate::distributions::softmax(row).unwrap())
            .collect();
        ChainState {
            z,
            pi,
            beta: vec![vec![vec![1.0 / l as f64; l]; k]],
            pi_tilde: Some(path),
            sigma2: Some(sigma2),
        }
    }

    #[test]
    fn schedule_first_step() {
        let s = StepSchedule::default();
        assert_eq!(s.step(1), 0.01 * 2f64.powf(-0.5));
        assert!((s.step(1) - 0.007071).abs() < 1e-6);
        for r in 1..1000 {
            assert!(s.step(r + 1) < s.step(r));
        }
        assert!(StepSchedule { a: 0.01, b: 1.0, c: 1.5 }.validate().is_err());
    }

    #[test]
    fn gradient_zero_on_flat_path_at_balance() {
        // Two periods, two types, logits equal so pi = (0.5, 0.5); one
        // respondent of each type per period balances n_tk = N_t pi_tk.
        let data = dynamic_dataset(vec![0, 0, 0, 0], vec![0, 0, 1, 1], 2, 2);
        let s = state_with(vec![vec![0.3, 0.3]; 2], vec![0.5, 0.5], vec![0, 1, 0, 1], 2);
        for t in 0..2 {
            for k in 0..2 {
                assert_eq!(sgld_gradient(&s, t, k, &data).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn gradient_empty_period_is_smoothing_only() {
        let data = dynamic_dataset(vec![0, 1], vec![0, 2], 3, 2);
        let path = vec![vec![0.0, 0.1], vec![0.5, -0.2], vec![0.2, 0.4]];
        let s = state_with(path.clone(), vec![0.4, 0.8], vec![0, 1], 2);
        let g = sgld_gradient(&s, 1, 0, &data).unwrap();
        let expected = -(0.5 - 0.0) / 0.4 + (0.2 - 0.5) / 0.4;
        assert!((g - expected).abs() < 1e-14);
    }

    #[test]
    fn gradient_rejects_non_positive_variance() {
        let data = dynamic_dataset(vec![0], vec![0], 1, 2);
        let s = state_with(vec![vec![0.0, 0.0]], vec![0.0, 1.0], vec![0], 2);
        assert!(sgld_gradient(&s, 0, 0, &data).is_err());
    }

    #[test]
    fn zero_step_does_not_move() {
        let data = dynamic_dataset(vec![0, 1, 0], vec![0, 1, 1], 2, 2);
        let mut s = state_with(vec![vec![0.1, -0.4], vec![1.0, 0.0]], vec![0.3, 0.3], vec![0, 1, 1], 2);
        let before = s.clone();
        let counts = PeriodCounts::full(&s, &data);
        sgld_update(&mut s, &counts, 0.0, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(s.pi_tilde, before.pi_tilde);
    }

    #[test]
    fn noise_variance_matches_step() {
        let data = dynamic_dataset(vec![], vec![], 1, 2);
        let mut s = state_with(vec![vec![0.0]], vec![1.0], vec![], 2);
        let eps = 0.04;
        let counts = PeriodCounts::full(&s, &data);
        let mut rng = RngStream::new(12, 0);
        let n = 100_000;
        let mut incs = Vec::with_capacity(n);
        for _ in 0..n {
            let before = s.pi_tilde.as_ref().unwrap()[0][0];
            sgld_update(&mut s, &counts, eps, &mut rng).unwrap();
            incs.push(s.pi_tilde.as_ref().unwrap()[0][0] - before);
        }
        let mean = incs.iter().sum::<f64>() / n as f64;
        let var = incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        // SE of a normal sample variance: σ² sqrt(2 / (n - 1))
        let se = eps * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - eps).abs() <= 3.0 * se, "var {var}");
    }

    #[test]
    fn sigma_scale_from_increments() {
        let path = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
        assert_eq!(increment_sums(&path, 1), vec![1.0]);
        let constant = vec![vec![0.7]; 4];
        assert_eq!(increment_sums(&constant, 1), vec![0.0]);

        let mut s = state_with(path, vec![1.0], vec![], 2);
        let (v0, s0) = (2.0, 0.5);
        let mut rng = RngStream::new(13, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                step_sigma(&mut s, v0, s0, &mut rng).unwrap();
                s.sigma2.as_ref().unwrap()[0]
            })
            .collect();
        let target = (s0 + 1.0) / (v0 + 4.0 - 1.0);
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - target).abs() <= 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn minibatch_counts_are_rescaled() {
        let data = dynamic_dataset(vec![0; 10], vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1], 2, 2);
        let s = state_with(vec![vec![0.0, 0.0]; 2], vec![1.0, 1.0], vec![0; 10], 2);
        let c = PeriodCounts::from_indices(&s, &data, [0usize, 5].into_iter(), 5.0);
        assert_eq!(c.totals, vec![5.0, 5.0]);
        assert_eq!(c.by_type[0], vec![5.0, 0.0]);
    }

    #[test]
    fn run_rejects_static_data() {
        let data = SurveyDataset::new(
            vec!["a".into(), "b".into()],
            vec![QuestionMeta {
                name: "q1".into(),
                category_labels: vec!["1".into(), "2".into()],
                missing_policy: MissingPolicy::DropFromLikelihood,
            }],
            vec![0, 1],
            vec![0, 0],
            vec!["1".into()],
            Mode::Static,
        )
        .unwrap();
        let (eta, _) = crate::static_sampler::anchored_eta(&data, 2, 10.0);
        let cfg = DynamicConfig {
            k: 2,
            eta,
            v0: DEFAULT_V0,
            s0: DEFAULT_S0,
            schedule: StepSchedule::default(),
            iterations: 5,
            burn_in: 0,
            thin: 1,
            batch_size: None,
        };
        assert!(run_dynamic(&data, &cfg, &mut RngStream::new(0, 0)).is_err());
    }
}
