//! Second-step regression with type-specific intercepts and slopes, using
//! estimated membership probabilities as regressors.
//!
//! The last type is the baseline: its membership column is dropped because
//! memberships sum to one and would be collinear with the intercept.
//! Standard errors are the classical homoskedastic ones and are not
//! corrected for the first-step estimation of the memberships.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSpec {
    pub outcome: Vec<f64>,
    pub treatment: Vec<f64>,
    pub treatment_name: String,
    /// `N × W`, one inner vector per respondent.
    pub controls: Vec<Vec<f64>>,
    pub control_names: Vec<String>,
    /// `N × K` membership probabilities.
    pub memberships: Vec<Vec<f64>>,
}

impl RegressionSpec {
    pub fn n_types(&self) -> usize {
        self.memberships.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.outcome.len();
        if self.treatment.len() != n || self.controls.len() != n || self.memberships.len() != n {
            return Err(Error::InvalidParameter("regression blocks differ in length".into()));
        }
        let w = self.control_names.len();
        if let Some(i) = self.controls.iter().position(|r| r.len() != w) {
            return Err(Error::InvalidParameter(format!("controls row {i} has the wrong width")));
        }
        let k = self.n_types();
        if k == 0 {
            return Err(Error::InvalidParameter("memberships need at least one type".into()));
        }
        for (i, row) in self.memberships.iter().enumerate() {
            if row.len() != k || (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParameter(format!(
                    "membership row {i} does not sum to 1"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
}

pub fn membership_name(k: usize) -> String {
    format!("Z{}", k + 1)
}

pub fn interaction_name(treatment: &str, k: usize) -> String {
    format!("{treatment}:Z{}", k + 1)
}

/// Columns: intercept, controls, treatment, memberships of types
/// `1..K-1`, then treatment × those memberships.
pub fn build_design(spec: &RegressionSpec) -> Result<Design> {
    spec.validate()?;
    let n = spec.outcome.len();
    let k = spec.n_types();
    let w = spec.control_names.len();
    let n_cols = 1 + w + 1 + 2 * (k - 1);
    let mut names = Vec::with_capacity(n_cols);
    names.push(INTERCEPT.to_string());
    names.extend(spec.control_names.iter().cloned());
    names.push(spec.treatment_name.clone());
    names.extend((0..k - 1).map(membership_name));
    names.extend((0..k - 1).map(|t| interaction_name(&spec.treatment_name, t)));

    let matrix = DMatrix::from_fn(n, n_cols, |i, c| {
        if c == 0 {
            1.0
        } else if c <= w {
            spec.controls[i][c - 1]
        } else if c == w + 1 {
            spec.treatment[i]
        } else if c < w + 2 + (k - 1) {
            spec.memberships[i][c - w - 2]
        } else {
            spec.treatment[i] * spec.memberships[i][c - w - 2 - (k - 1)]
        }
    });
    let dependent = dependent_columns(&matrix);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient {
            columns: dependent.into_iter().map(|c| names[c].clone()).collect(),
        });
    }
    Ok(Design { matrix, names })
}

/// Columns that are (numerically) in the span of the preceding ones, by
/// modified Gram–Schmidt.
fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for c in 0..x.ncols() {
        let col = x.column(c).into_owned();
        let norm = col.norm();
        let mut v = col;
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let resid = v.norm();
        if norm == 0.0 || resid <= 1e-10 * norm {
            dependent.push(c);
        } else {
            basis.push(v / resid);
        }
    }
    dependent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub r_squared: f64,
    pub residual_variance: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }
}

/// Least squares through a QR factorisation, with classical standard errors.
pub fn ols(y: &[f64], design: &Design) -> Result<OlsFit> {
    let x = &design.matrix;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidParameter(format!("{} outcomes for {n} rows", y.len())));
    }
    if n < p {
        return Err(Error::InvalidParameter(format!("{n} rows for {p} columns")));
    }
    let dependent = dependent_columns(x);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient {
            columns: dependent.into_iter().map(|c| design.names[c].clone()).collect(),
        });
    }
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let resid = &yv - x * &beta;
    let ssr = resid.norm_squared();
    let mean = yv.mean();
    let sst: f64 = yv.iter().map(|v| (v - mean).powi(2)).sum();
    let dof = (n - p) as f64;
    let sigma2 = if dof > 0.0 { ssr / dof } else { f64::NAN };
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    // diag((XᵀX)⁻¹) = row sums of squares of R⁻¹
    let std_errors = (0..p)
        .map(|i| (sigma2 * r_inv.row(i).norm_squared()).sqrt())
        .collect();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    Ok(OlsFit {
        names: design.names.clone(),
        coefficients: beta.iter().copied().collect(),
        std_errors,
        r_squared,
        residual_variance: sigma2,
        n,
    })
}

/// Per-type treatment effect: the base slope plus the type's interaction,
/// with the baseline (last) type taking the base slope alone.
pub fn heterogeneous_returns(fit: &OlsFit, treatment: &str, k: usize) -> Result<Vec<f64>> {
    let base = fit
        .coefficient(treatment)
        .ok_or_else(|| Error::InvalidParameter(format!("no coefficient named '{treatment}'")))?;
    (0..k)
        .map(|t| {
            if t + 1 == k {
                return Ok(base);
            }
            let name = interaction_name(treatment, t);
            fit.coefficient(&name)
                .map(|c| base + c)
                .ok_or_else(|| Error::InvalidParameter(format!("no coefficient named '{name}'")))
        })
        .collect()
}

/// Standard error of each type's slope, from the coefficient covariance.
pub fn heterogeneous_return_std_errors(
    spec: &RegressionSpec,
    design: &Design,
    fit: &OlsFit,
) -> Result<Vec<f64>> {
    let x = &design.matrix;
    let xtx = x.transpose() * x;
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular cross-product matrix".into()))?;
    let k = spec.n_types();
    let base = design.names.iter().position(|n| n == &spec.treatment_name).expect("treatment column");
    (0..k)
        .map(|t| {
            let var = if t + 1 == k {
                inv[(base, base)]
            } else {
                let c = design
                    .names
                    .iter()
                    .position(|n| n == &interaction_name(&spec.treatment_name, t))
                    .expect("interaction column");
                inv[(base, base)] + inv[(c, c)] + 2.0 * inv[(base, c)]
            };
            Ok((fit.residual_variance * var).sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;

    fn spec(memberships: Vec<Vec<f64>>, w: usize, rng: &mut RngStream) -> RegressionSpec {
        let n = memberships.len();
        RegressionSpec {
            outcome: (0..n).map(|_| rng.standard_normal()).collect(),
            treatment: (0..n).map(|_| rng.standard_normal()).collect(),
            treatment_name: "x".into(),
            controls: (0..n).map(|_| (0..w).map(|_| rng.standard_normal()).collect()).collect(),
            control_names: (0..w).map(|c| format!("w{c}")).collect(),
            memberships,
        }
    }

    #[test]
    fn single_type_is_plain_ols() {
        let mut rng = RngStream::new(1, 0);
        let s = spec(vec![vec![1.0]; 30], 2, &mut rng);
        let d = build_design(&s).unwrap();
        assert_eq!(d.names, vec![INTERCEPT, "w0", "w1", "x"]);
    }

    #[test]
    fn column_count() {
        let mut rng = RngStream::new(2, 0);
        let m = (0..40)
            .map(|_| crate::distributions::sample_dirichlet(&[1.0; 3], &mut rng).unwrap())
            .collect();
        let s = spec(m, 5, &mut rng);
        let d = build_design(&s).unwrap();
        assert_eq!(d.matrix.ncols(), 11);
        assert_eq!(d.names[9], "x:Z1");
    }

    #[test]
    fn all_baseline_membership_is_rank_deficient() {
        let mut rng = RngStream::new(3, 0);
        let s = spec(vec![vec![0.0, 1.0]; 20], 1, &mut rng);
        match build_design(&s).unwrap_err() {
            Error::RankDeficient { columns } => assert_eq!(columns, vec!["Z1", "x:Z1"]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn exact_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let d = Design { matrix: x, names: vec!["a".into(), "b".into()] };
        let fit = ols(&[1.0, 3.0, 5.0, 7.0], &d).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    /// Gaussian elimination on the normal equations, independent of QR.
    fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = x[0].len();
        let mut a = vec![vec![0.0; p + 1]; p];
        for (row, &yi) in x.iter().zip(y) {
            for r in 0..p {
                for c in 0..p {
                    a[r][c] += row[r] * row[c];
                }
                a[r][p] += row[r] * yi;
            }
        }
        for col in 0..p {
            let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..p {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=p {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        (0..p).map(|r| a[r][p] / a[r][r]).collect()
    }

    #[test]
    fn matches_normal_equations() {
        let rows = vec![
            vec![1.0, 0.5, -1.2],
            vec![1.0, 1.5, 0.3],
            vec![1.0, -0.7, 2.2],
            vec![1.0, 2.1, 0.9],
            vec![1.0, 0.0, -0.4],
            vec![1.0, 1.1, 1.7],
        ];
        let y = [0.3, 1.9, -0.5, 2.8, 0.1, 1.2];
        let d = Design {
            matrix: DMatrix::from_fn(6, 3, |i, j| rows[i][j]),
            names: vec!["a".into(), "b".into(), "c".into()],
        };
        let fit = ols(&y, &d).unwrap();
        for (a, b) in fit.coefficients.iter().zip(normal_equations(&rows, &y)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_known_slope() {
        let mut rng = RngStream::new(4, 0);
        let n = 10_000;
        let x: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.1 * rng.standard_normal()).collect();
        let d = Design {
            matrix: DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] }),
            names: vec![INTERCEPT.into(), "x".into()],
        };
        let fit = ols(&y, &d).unwrap();
        assert!((fit.coefficients[1] - 2.0).abs() <= 3.0 * fit.std_errors[1]);
    }

    #[test]
    fn returns_from_interactions() {
        let fit = OlsFit {
            names: vec!["ED76".into(), "ED76:Z1".into(), "ED76:Z2".into()],
            coefficients: vec![0.074, 0.0, 0.0],
            std_errors: vec![0.0; 3],
            r_squared: 0.0,
            residual_variance: 0.0,
            n: 0,
        };
        assert_eq!(heterogeneous_returns(&fit, "ED76", 3).unwrap(), vec![0.074; 3]);
        assert!(heterogeneous_returns(&fit, "EDUC", 3).is_err());
    }
}
