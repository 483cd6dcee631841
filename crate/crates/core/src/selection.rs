//! Choosing the number of types: the degrees-of-freedom counting rule, the
//! scree of the group-by-response table, and an approximate BIC evaluated
//! at the posterior mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{frequency_matrix, FrequencyMatrix, Mode, SurveyDataset, MISSING};
use crate::error::{Error, Result};
use crate::posterior::posterior_means;
use crate::state::PosteriorDraws;

/// Largest `K` with `G(L - J) ≥ K(L - J) + G(K - 1)`, i.e.
/// `floor(G - G(G - 1) / (L + G - J))`, never below 1.
pub fn max_identifiable_k(groups: usize, questions: usize, total_categories: usize) -> Result<usize> {
    if groups == 0 || questions == 0 {
        return Err(Error::InvalidParameter("need at least one group and one question".into()));
    }
    if total_categories <= questions {
        return Err(Error::InvalidParameter(format!(
            "L = {total_categories} must exceed J = {questions}"
        )));
    }
    let numerator = groups * (groups - 1);
    let denominator = total_categories + groups - questions;
    // floor(G - a/b) = G - ceil(a/b)
    let bound = groups.saturating_sub(numerator.div_ceil(denominator));
    Ok(bound.max(1))
}

/// Eigenvalues of `Y Yᵀ`, descending, with rounding noise below zero clamped.
pub fn scree(freq: &FrequencyMatrix) -> Vec<f64> {
    let rows = freq.as_f64_rows();
    let g = rows.len();
    let mut gram = vec![vec![0.0; g]; g];
    for a in 0..g {
        for b in a..g {
            let dot: f64 = rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum();
            gram[a][b] = dot;
            gram[b][a] = dot;
        }
    }
    let mut eig = jacobi_eigenvalues(gram);
    eig.sort_by(|a, b| b.total_cmp(a));
    for v in &mut eig {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    eig
}

/// Cyclic Jacobi rotations on a symmetric matrix until the off-diagonal mass
/// is negligible relative to the Frobenius norm.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let frob2: f64 = a.iter().flatten().map(|x| x * x).sum();
    if frob2 == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off <= 1e-30 * frob2 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let arp = a[r][p];
                    let arq = a[r][q];
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[p][r];
                    let aqr = a[q][r];
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Smallest `K` whose leading eigenvalues explain at least `threshold` of the total.
pub fn suggest_k_scree(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if eigenvalues.is_empty() {
        return Err(Error::InvalidParameter("no eigenvalues".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "scree threshold {threshold} outside (0, 1)"
        )));
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Ok(1);
    }
    let mut acc = 0.0;
    for (k, &l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc / total >= threshold {
            return Ok(k + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// `Σ_i log Σ_k pi[label_i][k] Π_j beta[j][k][x_ij]`, skipping missing responses.
pub fn observed_loglik(data: &SurveyDataset, beta: &[Vec<Vec<f64>>], pi: &[Vec<f64>]) -> Result<f64> {
    let k = pi.first().map_or(0, Vec::len);
    let mut total = 0.0;
    let mut terms = vec![0.0; k];
    for (i, (row, &g)) in data.rows().zip(data.labels()).enumerate() {
        for (t, term) in terms.iter_mut().enumerate() {
            let mut lp = pi[g][t].ln();
            for (j, &x) in row.iter().enumerate() {
                if x != MISSING {
                    lp += beta[j][t][x as usize].ln();
                }
            }
            *term = lp;
        }
        let li = crate::distributions::log_sum_exp(&terms);
        if li == f64::NEG_INFINITY || li.is_nan() {
            return Err(Error::Numerical(format!(
                "respondent {i} has zero likelihood"
            )));
        }
        total += li;
    }
    Ok(total)
}

/// Free parameters: `K Σ_j (L_j - 1)` for the response distributions,
/// `(K - 1)` per mixture row, plus `K` variances for the dynamic model.
pub fn parameter_count(mode: Mode, k: usize, n_labels: usize, category_counts: &[usize]) -> usize {
    let beta: usize = category_counts.iter().map(|l| l - 1).sum::<usize>() * k;
    let mix = n_labels * (k - 1);
    match mode {
        Mode::Static => beta + mix,
        Mode::Dynamic => beta + mix + k,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicValue {
    pub k: usize,
    pub loglik: f64,
    pub n_params: usize,
    pub n_respondents: usize,
    pub penalty: f64,
    pub bic: f64,
}

/// `-L(θ̃) + ½ p log N` with `θ̃` the posterior mean of `beta` and `pi`
/// and `N` the number of respondents. Lower is better.
pub fn bic(data: &SurveyDataset, draws: &PosteriorDraws) -> Result<BicValue> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("BIC needs at least one snapshot".into()));
    }
    let k = draws.n_types();
    let (beta, pi) = posterior_means(draws);
    let loglik = observed_loglik(data, &beta, &pi)?;
    let n_params = parameter_count(draws.mode(), k, data.n_labels(), &data.category_counts());
    Ok(bic_from_parts(k, loglik, n_params, data.n_respondents()))
}

pub fn bic_from_parts(k: usize, loglik: f64, n_params: usize, n_respondents: usize) -> BicValue {
    let penalty = 0.5 * n_params as f64 * (n_respondents as f64).ln();
    BicValue {
        k,
        loglik,
        n_params,
        n_respondents,
        penalty,
        bic: -loglik + penalty,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub n_groups: usize,
    pub n_questions: usize,
    pub total_categories: usize,
    pub k_max_counting: usize,
    pub eigenvalues: Vec<f64>,
    pub scree_threshold: f64,
    pub k_scree: usize,
    pub bic_by_k: BTreeMap<usize, BicValue>,
    pub recommended_k: usize,
    pub parameter_count_rule: String,
    pub likelihood: String,
}

pub const PARAMETER_COUNT_RULE: &str =
    "K*sum_j(L_j-1) + labels*(K-1) [+ K variances in dynamic mode]";
pub const LIKELIHOOD_FORM: &str = "observed-data, z marginalised, at posterior mean";

/// Runs the counting rule, scree and BIC over `ks`. `fit` produces draws for
/// a given `K`; the recommendation is the BIC argmin.
pub fn select_k<F>(data: &SurveyDataset, ks: &[usize], scree_threshold: f64, mut fit: F) -> Result<SelectionReport>
where
    F: FnMut(usize) -> Result<PosteriorDraws>,
{
    if ks.is_empty() {
        return Err(Error::InvalidParameter("empty K range".into()));
    }
    let freq = frequency_matrix(data);
    let eigenvalues = scree(&freq);
    let k_scree = suggest_k_scree(&eigenvalues, scree_threshold)?;
    let k_max_counting =
        max_identifiable_k(data.n_labels(), data.n_questions(), data.total_categories())?;
    let mut bic_by_k = BTreeMap::new();
    for &k in ks {
        let draws = fit(k)?;
        bic_by_k.insert(k, bic(data, &draws)?);
    }
    let recommended_k = bic_by_k
        .values()
        .min_by(|a, b| a.bic.total_cmp(&b.bic))
        .map(|b| b.k)
        .expect("non-empty");
    Ok(SelectionReport {
        n_groups: data.n_labels(),
        n_questions: data.n_questions(),
        total_categories: data.total_categories(),
        k_max_counting,
        eigenvalues,
        scree_threshold,
        k_scree,
        bic_by_k,
        recommended_k,
        parameter_count_rule: PARAMETER_COUNT_RULE.into(),
        likelihood: LIKELIHOOD_FORM.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MissingPolicy, QuestionMeta};
    use proptest::prelude::*;

    #[test]
    fn counting_rule_worked_values() {
        assert_eq!(max_identifiable_k(2, 2, 4).unwrap(), 1);
        assert_eq!(max_identifiable_k(5, 4, 20).unwrap(), 4);
        assert_eq!(max_identifiable_k(1, 3, 9).unwrap(), 1);
        assert!(max_identifiable_k(3, 4, 4).is_err());
    }

    proptest! {
        #[test]
        fn counting_rule_monotone(g in 1usize..12, j in 1usize..8, extra in 1usize..40) {
            let l = j + extra;
            let k = max_identifiable_k(g, j, l).unwrap();
            prop_assert!(k >= 1 && k <= g.max(1));
            prop_assert!(max_identifiable_k(g, j, l + 1).unwrap() >= k);
            if l > j + 1 {
                prop_assert!(max_identifiable_k(g, j + 1, l).unwrap() <= k);
            }
            // agrees with the real-valued inequality
            let direct = (g as f64 - (g * (g - 1)) as f64 / (l + g - j) as f64).floor().max(1.0);
            prop_assert_eq!(k as f64, direct);
        }
    }

    fn fm(rows: Vec<Vec<u64>>) -> FrequencyMatrix {
        FrequencyMatrix::from_counts(rows, vec![0])
    }

    #[test]
    fn scree_rank_one() {
        let y = fm(vec![vec![1, 2, 3], vec![2, 4, 6], vec![3, 6, 9]]);
        let eig = scree(&y);
        assert!(eig[0] > 0.0);
        assert!(eig[1] <= 1e-9 * eig[0] && eig[2] <= 1e-9 * eig[0]);
    }

    #[test]
    fn scree_diagonal() {
        let y = fm(vec![vec![3, 0, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 2, 0]]);
        let eig = scree(&y);
        for (a, b) in eig.iter().zip([9.0, 4.0, 1.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scree_trace_identity_and_permutation() {
        use rand::Rng;
        let mut rng = crate::distributions::RngStream::new(17, 0);
        let rows: Vec<Vec<u64>> = (0..5)
            .map(|_| (0..12).map(|_| rng.random_range(0..50u64)).collect())
            .collect();
        let frob2: f64 = rows.iter().flatten().map(|&c| (c * c) as f64).sum();
        let eig = scree(&fm(rows.clone()));
        let sum: f64 = eig.iter().sum();
        assert!((sum - frob2).abs() <= 1e-9 * frob2);
        assert!(eig.windows(2).all(|w| w[0] >= w[1]));

        // cross-check against nalgebra's symmetric eigensolver
        let m = nalgebra::DMatrix::from_fn(5, 12, |i, j| rows[i][j] as f64);
        let gram = &m * m.transpose();
        let mut reference: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().copied().collect();
        reference.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in eig.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-9 * frob2);
        }

        let mut permuted = rows;
        permuted.reverse();
        permuted.swap(0, 2);
        let eig2 = scree(&fm(permuted));
        for (a, b) in eig.iter().zip(&eig2) {
            assert!((a - b).abs() <= 1e-9 * frob2);
        }
    }

    #[test]
    fn scree_suggestions() {
        assert_eq!(suggest_k_scree(&[9.0, 1.0], 0.9).unwrap(), 1);
        assert_eq!(suggest_k_scree(&[5.0, 4.0, 1.0], 0.9).unwrap(), 2);
        assert_eq!(suggest_k_scree(&[5.0, 3.0, 2.0, 1.0], 0.999999).unwrap(), 4);
        assert!(suggest_k_scree(&[], 0.9).is_err());
    }

    fn dataset(responses: Vec<u32>, lens: &[usize]) -> SurveyDataset {
        let j = lens.len();
        let n = responses.len() / j;
        SurveyDataset::new(
            (0..n).map(|i| i.to_string()).collect(),
            lens.iter()
                .enumerate()
                .map(|(q, &l)| QuestionMeta {
                    name: format!("q{q}"),
                    category_labels: (0..l).map(|v| v.to_string()).collect(),
                    missing_policy: MissingPolicy::DropFromLikelihood,
                })
                .collect(),
            responses,
            vec![0; n],
            vec!["1".into()],
            Mode::Static,
        )
        .unwrap()
    }

    #[test]
    fn loglik_single_type() {
        let data = dataset(vec![0, 1, 1, 2, MISSING, 0], &[2, 3]);
        let beta = vec![vec![vec![0.3, 0.7]], vec![vec![0.2, 0.5, 0.3]]];
        let pi = vec![vec![1.0]];
        let expected = 0.3f64.ln() + 0.5f64.ln() + 0.7f64.ln() + 0.3f64.ln() + 0.2f64.ln();
        assert!((observed_loglik(&data, &beta, &pi).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn loglik_two_term_mixture() {
        let data = dataset(vec![1], &[2]);
        let beta = vec![vec![vec![0.9, 0.1], vec![0.4, 0.6]]];
        let pi = vec![vec![0.25, 0.75]];
        let expected = (0.25 * 0.1 + 0.75 * 0.6f64).ln();
        assert!((observed_loglik(&data, &beta, &pi).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn loglik_additive_under_duplication() {
        let once = dataset(vec![0, 1, 1, 0, 1, 1], &[2, 2]);
        let twice = dataset(vec![0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1], &[2, 2]);
        let beta = vec![
            vec![vec![0.9, 0.1], vec![0.4, 0.6]],
            vec![vec![0.3, 0.7], vec![0.5, 0.5]],
        ];
        let pi = vec![vec![0.6, 0.4]];
        let a = observed_loglik(&once, &beta, &pi).unwrap();
        let b = observed_loglik(&twice, &beta, &pi).unwrap();
        assert_eq!(2.0 * a, b);
    }

    #[test]
    fn loglik_reports_impossible_respondent() {
        let data = dataset(vec![0, 1], &[2]);
        let beta = vec![vec![vec![1.0, 0.0]]];
        let err = observed_loglik(&data, &beta, &[vec![1.0]]).unwrap_err();
        assert!(err.to_string().contains("respondent 1"));
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(Mode::Static, 2, 2, &[3]), 6);
        assert_eq!(parameter_count(Mode::Dynamic, 2, 4, &[3, 2]), 2 * 3 + 4 + 2);
        assert_eq!(parameter_count(Mode::Static, 1, 5, &[5; 4]), 16);
    }

    #[test]
    fn penalty_scaling() {
        let a = bic_from_parts(2, -100.0, 6, 500);
        let b = bic_from_parts(2, -100.0, 6, 1000);
        assert!((b.penalty - a.penalty - 3.0 * 2f64.ln()).abs() < 1e-12);
        let lens = [5usize; 4];
        let mut last = 0;
        for k in 1..6 {
            let p = parameter_count(Mode::Static, k, 5, &lens);
            assert!(p > last);
            last = p;
        }
    }
}
