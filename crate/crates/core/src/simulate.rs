//! Synthetic data from the static and dynamic generative processes, and the
//! identification Monte Carlo built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MissingPolicy, Mode, QuestionMeta, SurveyDataset};
use crate::distributions::{sample_categorical, sample_dirichlet, softmax, RngStream};
use crate::error::{Error, Result};
use crate::posterior::posterior_means;
use crate::static_sampler::{run_gibbs, StaticConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    /// One simplex row per group (static) or period (dynamic).
    pub pi: Vec<Vec<f64>>,
    /// `[question][type][category]`
    pub beta: Vec<Vec<Vec<f64>>>,
}

impl TrueParams {
    pub fn n_types(&self) -> usize {
        self.pi.first().map_or(0, Vec::len)
    }

    pub fn category_counts(&self) -> Vec<usize> {
        self.beta.iter().map(|rows| rows[0].len()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_types();
        if k == 0 || self.beta.is_empty() {
            return Err(Error::InvalidParameter("empty true parameters".into()));
        }
        let ok = |row: &[f64]| {
            row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        if self.pi.iter().any(|r| r.len() != k || !ok(r)) {
            return Err(Error::InvalidParameter("pi rows must be simplex vectors of length K".into()));
        }
        for rows in &self.beta {
            if rows.len() != k || rows.iter().any(|r| r.len() != rows[0].len() || !ok(r)) {
                return Err(Error::InvalidParameter("beta rows must be K simplex vectors per question".into()));
            }
            if rows[0].len() < 2 {
                return Err(Error::InvalidParameter("questions need at least 2 categories".into()));
            }
        }
        Ok(())
    }
}

fn simulate(
    params: &TrueParams,
    n_per_label: &[usize],
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(SurveyDataset, Vec<usize>)> {
    params.validate()?;
    if n_per_label.len() != params.pi.len() {
        return Err(Error::InvalidParameter(format!(
            "{} sizes for {} mixture rows",
            n_per_label.len(),
            params.pi.len()
        )));
    }
    let n: usize = n_per_label.iter().sum();
    let n_questions = params.beta.len();
    let mut labels = Vec::with_capacity(n);
    let mut types = Vec::with_capacity(n);
    let mut responses = Vec::with_capacity(n * n_questions);
    for (g, &size) in n_per_label.iter().enumerate() {
        for _ in 0..size {
            let z = sample_categorical(&params.pi[g], rng)?;
            for rows in &params.beta {
                responses.push(sample_categorical(&rows[z], rng)? as u32);
            }
            labels.push(g);
            types.push(z);
        }
    }
    let questions = params
        .category_counts()
        .iter()
        .enumerate()
        .map(|(j, &l)| QuestionMeta {
            name: format!("q{}", j + 1),
            category_labels: (1..=l).map(|v| v.to_string()).collect(),
            missing_policy: MissingPolicy::DropFromLikelihood,
        })
        .collect();
    let label_column = match mode {
        Mode::Static => "group",
        Mode::Dynamic => "period",
    };
    let data = SurveyDataset::new(
        (1..=n).map(|i| i.to_string()).collect(),
        questions,
        responses,
        labels,
        (1..=n_per_label.len()).map(|g| g.to_string()).collect(),
        mode,
    )?
    .with_column_names("id", label_column);
    Ok((data, types))
}

/// Draws `z` from the respondent's group row of `pi`, then each response
/// from that type's `beta` row.
pub fn simulate_static(params: &TrueParams, n_per_group: &[usize], rng: &mut RngStream) -> Result<SurveyDataset> {
    simulate(params, n_per_group, Mode::Static, rng).map(|(d, _)| d)
}

/// As [`simulate_static`], also returning each respondent's true type.
pub fn simulate_static_with_types(
    params: &TrueParams,
    n_per_group: &[usize],
    rng: &mut RngStream,
) -> Result<(SurveyDataset, Vec<usize>)> {
    simulate(params, n_per_group, Mode::Static, rng)
}

/// As [`simulate_static`] with `params.pi` read as a fixed per-period path.
pub fn simulate_with_path(params: &TrueParams, n_per_period: &[usize], rng: &mut RngStream) -> Result<SurveyDataset> {
    simulate(params, n_per_period, Mode::Dynamic, rng).map(|(d, _)| d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicTruth {
    pub pi_tilde: Vec<Vec<f64>>,
    pub params: TrueParams,
}

/// Generates logit paths by a Gaussian random walk started at
/// `ln params.pi[0]`, with per-type increment variances `sigma2`, then
/// simulates each period from `softmax` of its logits. Only the first row
/// of `params.pi` is used.
pub fn simulate_dynamic(
    params: &TrueParams,
    n_per_period: &[usize],
    sigma2: &[f64],
    rng: &mut RngStream,
) -> Result<(SurveyDataset, DynamicTruth)> {
    params.validate()?;
    let k = params.n_types();
    if sigma2.len() != k || sigma2.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::InvalidParameter("need K non-negative random-walk variances".into()));
    }
    if n_per_period.is_empty() {
        return Err(Error::InvalidParameter("need at least one period".into()));
    }
    let mut path = Vec::with_capacity(n_per_period.len());
    path.push(params.pi[0].iter().map(|p| p.ln()).collect::<Vec<f64>>());
    for _ in 1..n_per_period.len() {
        let prev = path.last().expect("non-empty");
        let next = prev
            .iter()
            .zip(sigma2)
            .map(|(x, s)| x + s.sqrt() * rng.standard_normal())
            .collect();
        path.push(next);
    }
    let pi = path.iter().map(|r| softmax(r)).collect::<Result<Vec<_>>>()?;
    let truth = TrueParams { pi, beta: params.beta.clone() };
    let (data, _) = simulate(&truth, n_per_period, Mode::Dynamic, rng)?;
    Ok((data, DynamicTruth { pi_tilde: path, params: truth }))
}

/// Dimensions of a simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub groups: usize,
    pub questions: usize,
    pub categories: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    /// Five groups, four questions of five categories, three types.
    Identified,
    /// One group and one question of five categories with three types: the
    /// counting rule allows a single type. The data only pin down the
    /// marginal response distribution.
    UnderIdentified,
}

impl Design {
    pub fn spec(self) -> DesignSpec {
        match self {
            Design::Identified => DesignSpec { groups: 5, questions: 4, categories: 5, k: 3 },
            Design::UnderIdentified => DesignSpec { groups: 1, questions: 1, categories: 5, k: 3 },
        }
    }
}

/// True parameters with `beta[j][k]` drawn around category `k` (the same
/// anchoring as the default estimation prior) and `pi` rows from a flat
/// Dirichlet.
pub fn draw_anchored_truth(spec: DesignSpec, rng: &mut RngStream) -> Result<TrueParams> {
    draw_truth_with_anchor(spec, DEFAULT_ANCHOR, rng)
}

/// As [`draw_anchored_truth`] with mass `anchor` on the anchored category.
pub fn draw_truth_with_anchor(spec: DesignSpec, anchor: f64, rng: &mut RngStream) -> Result<TrueParams> {
    let beta = (0..spec.questions)
        .map(|_| {
            (0..spec.k)
                .map(|t| {
                    let eta: Vec<f64> = (0..spec.categories)
                        .map(|v| if v == t { anchor } else { 1.0 })
                        .collect();
                    sample_dirichlet(&eta, rng)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let pi = (0..spec.groups)
        .map(|_| sample_dirichlet(&vec![1.0; spec.k], rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrueParams { pi, beta })
}

/// Splits `n` respondents as evenly as possible over `groups`.
pub fn even_split(n: usize, groups: usize) -> Vec<usize> {
    (0..groups).map(|g| n / groups + usize::from(g < n % groups)).collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Chain length used by the Monte Carlo experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self { iterations: 1500, burn_in: 500, thin: 5 }
    }
}

/// Stream id for replication `rep`, grid point `point`, and `role`.
pub fn stream_for(rep: usize, point: usize, role: u64) -> u64 {
    ((rep as u64) << 32) | ((point as u64) << 8) | role
}

/// Anchor used for both the true `beta` and the estimation prior unless
/// overridden.
pub const DEFAULT_ANCHOR: f64 = 10.0;

pub fn static_config(data: &SurveyDataset, k: usize, chain: ChainSettings) -> StaticConfig {
    static_config_with_anchor(data, k, chain, DEFAULT_ANCHOR)
}

pub fn static_config_with_anchor(data: &SurveyDataset, k: usize, chain: ChainSettings, eta_diag: f64) -> StaticConfig {
    let priors = crate::static_sampler::anchored_priors(data, k, eta_diag, 1.0);
    StaticConfig {
        k,
        alpha: priors.alpha,
        eta: priors.eta,
        iterations: chain.iterations,
        burn_in: chain.burn_in,
        thin: chain.thin,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub chain: ChainSettings,
    /// Anchored-category mass of the Dirichlet the true `beta` rows come from.
    pub truth_anchor: f64,
    /// Anchored-category mass of the estimation prior.
    pub eta_diag: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self { chain: ChainSettings::default(), truth_anchor: DEFAULT_ANCHOR, eta_diag: DEFAULT_ANCHOR }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPoint {
    pub n: usize,
    pub mean_corr: f64,
    pub sd_corr: f64,
    pub correlations: Vec<f64>,
}

/// Correlation between the posterior mean and the truth of `beta[0][0]` for
/// one replication at sample size `n`.
pub fn recovery_replication(
    spec: DesignSpec,
    truth: &TrueParams,
    n: usize,
    options: &RecoveryOptions,
    data_rng: &mut RngStream,
    chain_rng: &mut RngStream,
) -> Result<f64> {
    let data = simulate_static(truth, &even_split(n, spec.groups), data_rng)?;
    let config = static_config_with_anchor(&data, spec.k, options.chain, options.eta_diag);
    let draws = run_gibbs(&data, &config, chain_rng)?;
    let (beta, _) = posterior_means(&draws);
    Ok(pearson(&beta[0][0], &truth.beta[0][0]))
}

/// For each sample size, the mean and spread over `reps` replications of
/// the correlation between posterior-mean and true `beta[0][0]`. A fresh
/// truth is drawn per replication and shared across sample sizes.
pub fn recovery_experiment(
    design: Design,
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    options: &RecoveryOptions,
) -> Result<Vec<RecoveryPoint>> {
    recovery_experiment_with(design.spec(), n_grid, reps, seed, options)
}

pub fn recovery_experiment_with(
    spec: DesignSpec,
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    options: &RecoveryOptions,
) -> Result<Vec<RecoveryPoint>> {
    if reps == 0 || n_grid.is_empty() {
        return Err(Error::InvalidParameter("need at least one replication and one sample size".into()));
    }
    let truths = (0..reps)
        .map(|rep| {
            draw_truth_with_anchor(spec, options.truth_anchor, &mut RngStream::new(seed, stream_for(rep, 0, 0)))
        })
        .collect::<Result<Vec<_>>>()?;
    n_grid
        .iter()
        .enumerate()
        .map(|(p, &n)| {
            let correlations = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    recovery_replication(
                        spec,
                        &truths[rep],
                        n,
                        options,
                        &mut RngStream::new(seed, stream_for(rep, p + 1, 1)),
                        &mut RngStream::new(seed, stream_for(rep, p + 1, 2)),
                    )
                })
                .collect::<Result<Vec<f64>>>()?;
            let m = correlations.len() as f64;
            let mean_corr = correlations.iter().sum::<f64>() / m;
            let sd_corr = if correlations.len() > 1 {
                (correlations.iter().map(|c| (c - mean_corr).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(RecoveryPoint { n, mean_corr, sd_corr, correlations })
        })
        .collect()
}

/// Outcome data for the second-step regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeData {
    pub outcome: Vec<f64>,
    pub treatment: Vec<f64>,
    pub control: Vec<f64>,
}

/// `y = 1 + 0.5 w + 0.2 z + slopes[z] x + noise_sd · e` with `x`, `w`, `e`
/// independent standard normals and `z` the true type index.
pub fn simulate_outcome(types: &[usize], slopes: &[f64], noise_sd: f64, rng: &mut RngStream) -> Result<OutcomeData> {
    if let Some(&z) = types.iter().find(|&&z| z >= slopes.len()) {
        return Err(Error::InvalidParameter(format!("type {z} has no slope")));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidParameter("noise sd must be non-negative".into()));
    }
    let mut out = OutcomeData {
        outcome: Vec::with_capacity(types.len()),
        treatment: Vec::with_capacity(types.len()),
        control: Vec::with_capacity(types.len()),
    };
    for &z in types {
        let x = rng.standard_normal();
        let w = rng.standard_normal();
        let e = rng.standard_normal();
        out.outcome.push(1.0 + 0.5 * w + 0.2 * z as f64 + slopes[z] * x + noise_sd * e);
        out.treatment.push(x);
        out.control.push(w);
    }
    Ok(out)
}

/// Writes `n,mean_corr,sd_corr` rows.
pub fn write_recovery_csv<W: std::io::Write>(writer: W, points: &[RecoveryPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n", "mean_corr", "sd_corr"])?;
    for p in points {
        w.write_record([p.n.to_string(), p.mean_corr.to_string(), p.sd_corr.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("recovery curve", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::frequency_matrix;

    fn params() -> TrueParams {
        TrueParams {
            pi: vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            beta: vec![
                vec![vec![0.6, 0.3, 0.1], vec![0.1, 0.2, 0.7]],
                vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            ],
        }
    }

    #[test]
    fn one_hot_beta_is_deterministic_given_type() {
        let p = TrueParams {
            pi: vec![vec![0.5, 0.5]],
            beta: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]],
        };
        let data = simulate_static(&p, &[200], &mut RngStream::new(1, 0)).unwrap();
        for row in data.rows() {
            match row[0] {
                0 => assert_eq!(row[1], 1),
                _ => assert_eq!(row[1], 2),
            }
        }
    }

    #[test]
    fn response_frequencies_match_mixture_marginal() {
        let p = params();
        let n = 100_000;
        let data = simulate_static(&p, &[n, n], &mut RngStream::new(2, 0)).unwrap();
        let fm = frequency_matrix(&data);
        for g in 0..2 {
            for (j, rows) in p.beta.iter().enumerate() {
                for v in 0..rows[0].len() {
                    let target: f64 = (0..2).map(|k| p.pi[g][k] * rows[k][v]).sum();
                    let freq = fm.get(g, j, v) as f64 / n as f64;
                    let se = (target * (1.0 - target) / n as f64).sqrt();
                    assert!((freq - target).abs() <= 3.0 * se, "g{g} j{j} v{v}: {freq} vs {target}");
                }
            }
        }
    }

    #[test]
    fn single_type_is_iid_multinomial() {
        let p = TrueParams { pi: vec![vec![1.0]], beta: vec![vec![vec![0.2, 0.5, 0.3]]] };
        let n = 50_000;
        let data = simulate_static(&p, &[n], &mut RngStream::new(3, 0)).unwrap();
        let fm = frequency_matrix(&data);
        for (v, &target) in [0.2, 0.5, 0.3].iter().enumerate() {
            let freq = fm.get(0, 0, v) as f64 / n as f64;
            assert!((freq - target).abs() <= 3.0 * (target * (1.0 - target) / n as f64).sqrt());
        }
    }

    #[test]
    fn dynamic_zero_variance_is_constant() {
        let p = params();
        let (data, truth) = simulate_dynamic(&p, &[10, 10, 10], &[0.0, 0.0], &mut RngStream::new(4, 0)).unwrap();
        assert_eq!(data.mode(), Mode::Dynamic);
        for row in &truth.params.pi {
            for (a, b) in row.iter().zip(&p.pi[0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dynamic_increment_variance() {
        let p = params();
        let t = 20_000;
        let s2 = 0.09;
        // empty periods: only the logit path matters here
        let (_, truth) = simulate_dynamic(&p, &vec![0; t], &[s2, s2], &mut RngStream::new(5, 0)).unwrap();
        let incs: Vec<f64> = truth.pi_tilde.windows(2).map(|w| w[1][0] - w[0][0]).collect();
        let n = incs.len() as f64;
        let mean = incs.iter().sum::<f64>() / n;
        let var = incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = s2 * (2.0 / (n - 1.0)).sqrt();
        assert!((var - s2).abs() <= 3.0 * se, "{var}");
    }

    #[test]
    fn dynamic_single_period_matches_static() {
        let p = TrueParams { pi: vec![vec![0.7, 0.3]], beta: params().beta };
        let (dynamic, _) = simulate_dynamic(&p, &[500], &[0.5, 0.5], &mut RngStream::new(6, 0)).unwrap();
        let stat = simulate_static(&p, &[500], &mut RngStream::new(6, 0)).unwrap();
        assert_eq!(dynamic.rows().collect::<Vec<_>>(), stat.rows().collect::<Vec<_>>());
    }

    #[test]
    fn pearson_basic() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovery_reproducible() {
        let options = RecoveryOptions {
            chain: ChainSettings { iterations: 60, burn_in: 20, thin: 2 },
            ..Default::default()
        };
        let a = recovery_experiment(Design::Identified, &[200], 1, 9, &options).unwrap();
        let b = recovery_experiment(Design::Identified, &[200], 1, 9, &options).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn designs_sit_on_either_side_of_the_counting_rule() {
        use crate::selection::max_identifiable_k;
        for (design, inside) in [(Design::Identified, true), (Design::UnderIdentified, false)] {
            let d = design.spec();
            let bound = max_identifiable_k(d.groups, d.questions, d.questions * d.categories).unwrap();
            assert_eq!(d.k <= bound, inside, "{design:?}");
        }
    }

    #[test]
    fn even_split_sums() {
        assert_eq!(even_split(11, 5), vec![3, 2, 2, 2, 2]);
        assert_eq!(even_split(10, 5).iter().sum::<usize>(), 10);
    }
}
