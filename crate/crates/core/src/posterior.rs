//! Summaries of posterior draws.

use serde::{Deserialize, Serialize};

use crate::data::Mode;
use crate::error::{Error, Result};
use crate::state::PosteriorDraws;

/// Lower and upper quantiles of the equal-tailed interval.
pub const INTERVAL: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimates {
    pub mode: Mode,
    pub n_types: usize,
    pub n_snapshots: usize,
    /// `[question][type][category]`
    pub beta_mean: Vec<Vec<Vec<f64>>>,
    pub beta_interval: Vec<Vec<Vec<(f64, f64)>>>,
    /// `[group or period][type]`
    pub pi_mean: Vec<Vec<f64>>,
    pub pi_interval: Vec<Vec<(f64, f64)>>,
    /// `[respondent][type]`: share of snapshots with `z_i = k`.
    pub membership: Vec<Vec<f64>>,
}

/// Elementwise posterior means of `beta` and `pi`.
pub fn posterior_means(draws: &PosteriorDraws) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let first = &draws.snapshots[0].state;
    let mut beta: Vec<Vec<Vec<f64>>> = first
        .beta
        .iter()
        .map(|rows| rows.iter().map(|r| vec![0.0; r.len()]).collect())
        .collect();
    let mut pi: Vec<Vec<f64>> = first.pi.iter().map(|r| vec![0.0; r.len()]).collect();
    for snap in &draws.snapshots {
        for (acc, rows) in beta.iter_mut().zip(&snap.state.beta) {
            for (a, r) in acc.iter_mut().zip(rows) {
                for (x, y) in a.iter_mut().zip(r) {
                    *x += y;
                }
            }
        }
        for (a, r) in pi.iter_mut().zip(&snap.state.pi) {
            for (x, y) in a.iter_mut().zip(r) {
                *x += y;
            }
        }
    }
    let n = draws.len() as f64;
    beta.iter_mut().flatten().flatten().for_each(|x| *x /= n);
    pi.iter_mut().flatten().for_each(|x| *x /= n);
    (beta, pi)
}

/// Linear-interpolation quantile of sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn interval_of(mut values: Vec<f64>) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    (
        quantile_sorted(&values, INTERVAL.0),
        quantile_sorted(&values, INTERVAL.1),
    )
}

pub fn summarize(draws: &PosteriorDraws) -> Result<PointEstimates> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("no snapshots to summarise".into()));
    }
    let k = draws.n_types();
    let (beta_mean, pi_mean) = posterior_means(draws);
    let beta_interval = beta_mean
        .iter()
        .enumerate()
        .map(|(j, rows)| {
            rows.iter()
                .enumerate()
                .map(|(t, row)| {
                    (0..row.len())
                        .map(|v| {
                            interval_of(draws.snapshots.iter().map(|s| s.state.beta[j][t][v]).collect())
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let pi_interval = pi_mean
        .iter()
        .enumerate()
        .map(|(g, row)| {
            (0..row.len())
                .map(|t| interval_of(draws.snapshots.iter().map(|s| s.state.pi[g][t]).collect()))
                .collect()
        })
        .collect();
    let n = draws.snapshots[0].state.z.len();
    let mut membership = vec![vec![0.0; k]; n];
    for snap in &draws.snapshots {
        for (row, &z) in membership.iter_mut().zip(&snap.state.z) {
            row[z] += 1.0;
        }
    }
    let s = draws.len() as f64;
    membership.iter_mut().flatten().for_each(|x| *x /= s);
    Ok(PointEstimates {
        mode: draws.mode(),
        n_types: k,
        n_snapshots: draws.len(),
        beta_mean,
        beta_interval,
        pi_mean,
        pi_interval,
        membership,
    })
}

/// Posterior mean and equal-tailed band of `pi[t][k]`, indexed `[period][type]`.
pub fn type_proportion_series(draws: &PosteriorDraws) -> Result<Vec<Vec<Interval>>> {
    if draws.mode() != Mode::Dynamic {
        return Err(Error::InvalidParameter(
            "type-proportion series need dynamic draws".into(),
        ));
    }
    let est = summarize(draws)?;
    Ok(est
        .pi_mean
        .iter()
        .zip(&est.pi_interval)
        .map(|(means, bands)| {
            means
                .iter()
                .zip(bands)
                .map(|(&mean, &(lower, upper))| Interval { mean, lower, upper })
                .collect()
        })
        .collect())
}

/// Fisher–Rao distance between two categorical distributions,
/// `2 arccos Σ_v sqrt(p_v q_v)`.
pub fn rao_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidParameter(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    Ok(2.0 * bc.clamp(0.0, 1.0).acos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionDivergence {
    pub question: usize,
    pub distance: f64,
}

/// Questions ordered by how far apart two types' response distributions are;
/// ties keep question order.
pub fn rank_questions_by_divergence(
    estimates: &PointEstimates,
    k1: usize,
    k2: usize,
) -> Result<Vec<QuestionDivergence>> {
    if k1 == k2 {
        return Err(Error::InvalidParameter("compare two distinct types".into()));
    }
    if k1.max(k2) >= estimates.n_types {
        return Err(Error::InvalidParameter(format!(
            "type index out of range for K = {}",
            estimates.n_types
        )));
    }
    let mut out = estimates
        .beta_mean
        .iter()
        .enumerate()
        .map(|(j, rows)| {
            Ok(QuestionDivergence {
                question: j,
                distance: rao_distance(&rows[k1], &rows[k2])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.distance.total_cmp(&a.distance));
    Ok(out)
}

/// Base-period value of the sentiment index.
pub const ICS_BASE: f64 = 6.7558;
pub const ICS_CORRECTION: f64 = 2.0;

/// Index of consumer sentiment from the five relative scores
/// (favourable − unfavourable + 100), each rounded to a whole number.
pub fn compute_ics(relative_scores: &[f64]) -> Result<f64> {
    if relative_scores.len() != 5 {
        return Err(Error::InvalidParameter(format!(
            "the index takes 5 relative scores, got {}",
            relative_scores.len()
        )));
    }
    if let Some(x) = relative_scores.iter().find(|x| !(0.0..=200.0).contains(*x)) {
        return Err(Error::InvalidParameter(format!("relative score {x} outside [0, 200]")));
    }
    let total: f64 = relative_scores.iter().map(|x| x.round()).sum();
    Ok(total / ICS_BASE + ICS_CORRECTION)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchoringDiagnostic {
    /// `traces[k][s]` = `beta[0][k][k]` in snapshot `s`, for anchored types.
    pub traces: Vec<Vec<f64>>,
    pub trace_means: Vec<f64>,
    /// Mean of `beta[0][k][v]` over snapshots and `v != k`.
    pub off_diagonal_means: Vec<f64>,
    /// Snapshots in which some other type puts more mass on category `k`
    /// than type `k` does.
    pub crossings: usize,
    pub switching_suspected: bool,
}

/// Diagonal-mass traces on the first question. Types beyond the first
/// question's category count are not anchored there and have no trace.
pub fn anchoring_diagnostic(draws: &PosteriorDraws) -> Result<AnchoringDiagnostic> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("no snapshots".into()));
    }
    let k = draws.n_types();
    let l = draws.snapshots[0].state.beta[0][0].len();
    let anchored = k.min(l);
    let mut traces = vec![Vec::with_capacity(draws.len()); anchored];
    let mut off = vec![0.0; anchored];
    let mut crossings = 0;
    for snap in &draws.snapshots {
        let b = &snap.state.beta[0];
        let mut crossed = false;
        for t in 0..anchored {
            traces[t].push(b[t][t]);
            off[t] += b[t].iter().enumerate().filter(|&(v, _)| v != t).map(|(_, x)| x).sum::<f64>()
                / (l - 1) as f64;
            if (0..k).any(|o| o != t && b[o][t] > b[t][t]) {
                crossed = true;
            }
        }
        crossings += crossed as usize;
    }
    let s = draws.len() as f64;
    let trace_means = traces.iter().map(|tr| tr.iter().sum::<f64>() / s).collect();
    let off_diagonal_means = off.into_iter().map(|x| x / s).collect();
    if crossings > 0 {
        log::warn!("label switching suspected in {crossings} of {} snapshots", draws.len());
    }
    Ok(AnchoringDiagnostic {
        traces,
        trace_means,
        off_diagonal_means,
        crossings,
        switching_suspected: crossings > 0,
    })
}
