//! Exploratory factor analysis: principal-axis extraction on the correlation
//! matrix, Kaiser-normalised varimax, salience-based item retention and
//! regression factor scores.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::IndicatorMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FactorCount {
    /// Number of correlation-matrix eigenvalues above one.
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfaOptions {
    pub n_factors: FactorCount,
    /// Convergence tolerance on communalities.
    pub tol: f64,
    pub max_iter: usize,
    pub rotate: bool,
}

impl Default for EfaOptions {
    fn default() -> Self {
        Self {
            n_factors: FactorCount::Auto,
            tol: 1e-6,
            max_iter: 100,
            rotate: true,
        }
    }
}

/// Default salience threshold for retained loadings.
pub const SALIENCE: f64 = 0.32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    None,
    NoSalientLoading,
    CrossLoading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfaResult {
    pub indicator_names: Vec<String>,
    pub factor_names: Vec<String>,
    /// Rotated loadings, `K x F`.
    pub loadings: Vec<Vec<f64>>,
    pub unrotated_loadings: Vec<Vec<f64>>,
    pub communalities: Vec<f64>,
    pub uniquenesses: Vec<f64>,
    /// Per item: exclusion reason after [`apply_retention`]; all `None` before.
    pub retained: Vec<Exclusion>,
    /// Threshold used by [`apply_retention`], if applied.
    pub salience_threshold: Option<f64>,
    /// Loadings at or above the threshold; suppressed cells are `None`.
    pub salient_loadings: Vec<Vec<Option<f64>>>,
    /// Regression score weights on standardised items, `K x F`; zero rows for excluded items.
    pub score_coefficients: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
    /// Correlation-matrix eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub n_observations: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl EfaResult {
    pub fn n_factors(&self) -> usize {
        self.factor_names.len()
    }

    pub fn retained_items(&self) -> Vec<usize> {
        (0..self.indicator_names.len())
            .filter(|&k| self.retained[k] == Exclusion::None)
            .collect()
    }

    /// Largest absolute off-diagonal entry of `R - (L L' + Psi)`.
    pub fn residual_max(&self) -> f64 {
        let k_n = self.loadings.len();
        let mut worst: f64 = 0.0;
        for i in 0..k_n {
            for j in 0..k_n {
                let fitted: f64 = if i == j {
                    1.0
                } else {
                    self.loadings[i]
                        .iter()
                        .zip(&self.loadings[j])
                        .map(|(a, b)| a * b)
                        .sum()
                };
                worst = worst.max((self.correlation[i][j] - fitted).abs());
            }
        }
        worst
    }
}

fn complete_rows(m: &IndicatorMatrix) -> Vec<Vec<f64>> {
    (0..m.n_respondents())
        .filter_map(|n| m.row(n).into_iter().collect::<Option<Vec<f64>>>())
        .collect()
}

fn mean_sd(rows: &[Vec<f64>], k_n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..k_n)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n)
        .collect();
    let sds = (0..k_n)
        .map(|k| (rows.iter().map(|r| (r[k] - means[k]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
        .collect();
    (means, sds)
}

fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (values, vectors)
}

/// Kaiser-normalised varimax; returns the rotated loadings.
fn varimax(loadings: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, f) = loadings.shape();
    if f < 2 {
        return loadings.clone();
    }
    let h: Vec<f64> = (0..p)
        .map(|i| loadings.row(i).norm_squared().sqrt().max(1e-15))
        .collect();
    let mut x = DMatrix::from_fn(p, f, |i, j| loadings[(i, j)] / h[i]);
    let n = p as f64;
    // Kaiser's planar rotations: each pair gets its optimal angle in closed form.
    // Unlike the SVD fixed-point form this does not stall near the 45-degree saddle.
    for _ in 0..1000 {
        let mut largest = 0.0f64;
        for j in 0..f {
            for k in j + 1..f {
                let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..p {
                    let (xj, xk) = (x[(i, j)], x[(i, k)]);
                    let u = xj * xj - xk * xk;
                    let v = 2.0 * xj * xk;
                    a += u;
                    b += v;
                    c += u * u - v * v;
                    d += 2.0 * u * v;
                }
                let phi = 0.25 * (d - 2.0 * a * b / n).atan2(c - (a * a - b * b) / n);
                largest = largest.max(phi.abs());
                let (s, co) = phi.sin_cos();
                for i in 0..p {
                    let (xj, xk) = (x[(i, j)], x[(i, k)]);
                    x[(i, j)] = co * xj + s * xk;
                    x[(i, k)] = -s * xj + co * xk;
                }
            }
        }
        if largest < 1e-12 {
            break;
        }
    }
    DMatrix::from_fn(p, f, |i, j| x[(i, j)] * h[i])
}

fn check_collinear(r: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let k_n = r.nrows();
    for i in 0..k_n {
        for j in i + 1..k_n {
            if r[(i, j)].abs() >= 1.0 - 1e-10 {
                return Err(Error::Collinear(names[i].clone(), names[j].clone()));
            }
        }
    }
    Ok(())
}

fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular("correlation matrix is not positive definite".into()))
}

pub fn fit_efa(indicators: &IndicatorMatrix, n_factors: FactorCount) -> Result<EfaResult> {
    fit_efa_with(
        indicators,
        &EfaOptions {
            n_factors,
            ..EfaOptions::default()
        },
    )
}

pub fn fit_efa_with(indicators: &IndicatorMatrix, options: &EfaOptions) -> Result<EfaResult> {
    let k_n = indicators.n_indicators();
    let names = &indicators.indicator_names;
    let rows = complete_rows(indicators);
    let n = rows.len();
    if n <= k_n {
        return Err(Error::Precondition(format!(
            "{n} complete cases for {k_n} indicators"
        )));
    }
    let (means, sds) = mean_sd(&rows, k_n);
    if let Some(k) = sds.iter().position(|&s| s <= 0.0) {
        return Err(Error::Precondition(format!(
            "indicator `{}` has zero variance",
            names[k]
        )));
    }
    let mut r = DMatrix::zeros(k_n, k_n);
    for row in &rows {
        let z: Vec<f64> = (0..k_n).map(|k| (row[k] - means[k]) / sds[k]).collect();
        for i in 0..k_n {
            for j in 0..k_n {
                r[(i, j)] += z[i] * z[j];
            }
        }
    }
    r /= (n - 1) as f64;
    for i in 0..k_n {
        r[(i, i)] = 1.0;
    }
    check_collinear(&r, names)?;
    let r_inv = inverse(&r)?;
    let (eigenvalues, _) = sorted_eigen(&r);
    let f_n = match options.n_factors {
        FactorCount::Auto => eigenvalues.iter().filter(|&&v| v > 1.0).count().max(1),
        FactorCount::Fixed(f) => f,
    };
    if f_n == 0 || f_n > k_n {
        return Err(Error::Precondition(format!(
            "{f_n} factors requested for {k_n} indicators"
        )));
    }

    let mut h2: Vec<f64> = (0..k_n)
        .map(|i| (1.0 - 1.0 / r_inv[(i, i)]).clamp(0.0, 1.0))
        .collect();
    let mut lambda = DMatrix::zeros(k_n, f_n);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iter {
        iterations += 1;
        let mut reduced = r.clone();
        for i in 0..k_n {
            reduced[(i, i)] = h2[i];
        }
        let (vals, vecs) = sorted_eigen(&reduced);
        lambda = DMatrix::from_fn(k_n, f_n, |i, j| vecs[(i, j)] * vals[j].max(0.0).sqrt());
        let next: Vec<f64> = (0..k_n)
            .map(|i| lambda.row(i).norm_squared().min(1.0))
            .collect();
        let change = next
            .iter()
            .zip(&h2)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        h2 = next;
        if change < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "communalities did not converge in {} iterations",
            options.max_iter
        );
    }
    if h2.iter().any(|&h| h >= 1.0) {
        log::warn!("communality reached one (Heywood case)");
    }

    let rotated = if options.rotate {
        varimax(&lambda)
    } else {
        lambda.clone()
    };
    // sign-align, then order factors by explained variance
    let mut cols: Vec<Vec<f64>> = (0..f_n)
        .map(|j| {
            let col: Vec<f64> = rotated.column(j).iter().copied().collect();
            let lead = col
                .iter()
                .copied()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            if lead < 0.0 {
                col.iter().map(|v| -v).collect()
            } else {
                col
            }
        })
        .collect();
    cols.sort_by(|a, b| {
        let sa: f64 = a.iter().map(|v| v * v).sum();
        let sb: f64 = b.iter().map(|v| v * v).sum();
        sb.total_cmp(&sa)
    });
    let loadings: Vec<Vec<f64>> = (0..k_n)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let communalities: Vec<f64> = loadings
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum())
        .collect();

    let mut result = EfaResult {
        indicator_names: names.clone(),
        factor_names: (1..=f_n).map(|j| format!("factor_{j}")).collect(),
        unrotated_loadings: (0..k_n)
            .map(|i| lambda.row(i).iter().copied().collect())
            .collect(),
        uniquenesses: communalities.iter().map(|h| 1.0 - h).collect(),
        communalities,
        retained: vec![Exclusion::None; k_n],
        salience_threshold: None,
        salient_loadings: loadings
            .iter()
            .map(|r| r.iter().map(|&v| Some(v)).collect())
            .collect(),
        score_coefficients: Vec::new(),
        loadings,
        means,
        sds,
        correlation: (0..k_n)
            .map(|i| r.row(i).iter().copied().collect())
            .collect(),
        eigenvalues,
        n_observations: n,
        iterations,
        converged,
    };
    result.score_coefficients = score_weights(&result, &(0..k_n).collect::<Vec<_>>())?;
    Ok(result)
}

/// `R_rr^{-1} L_r` over the items in `keep`, scattered back to `K x F`.
fn score_weights(result: &EfaResult, keep: &[usize]) -> Result<Vec<Vec<f64>>> {
    let f_n = result.n_factors();
    let r = DMatrix::from_fn(keep.len(), keep.len(), |i, j| {
        result.correlation[keep[i]][keep[j]]
    });
    let l = DMatrix::from_fn(keep.len(), f_n, |i, j| result.loadings[keep[i]][j]);
    let w = inverse(&r)? * l;
    let mut out = vec![vec![0.0; f_n]; result.indicator_names.len()];
    for (i, &k) in keep.iter().enumerate() {
        for j in 0..f_n {
            out[k][j] = w[(i, j)];
        }
    }
    Ok(out)
}

/// Suppresses loadings below `threshold` in magnitude and excludes items with
/// no surviving loading or with several.
pub fn apply_retention(result: &EfaResult, threshold: f64) -> Result<EfaResult> {
    let mut out = result.clone();
    out.salience_threshold = Some(threshold);
    out.salient_loadings = result
        .loadings
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| (v.abs() >= threshold).then_some(v))
                .collect()
        })
        .collect();
    out.retained = out
        .salient_loadings
        .iter()
        .map(|row| match row.iter().flatten().count() {
            0 => Exclusion::NoSalientLoading,
            1 => Exclusion::None,
            _ => Exclusion::CrossLoading,
        })
        .collect();
    let keep = out.retained_items();
    if keep.is_empty() {
        return Err(Error::AllItemsExcluded);
    }
    out.score_coefficients = score_weights(&out, &keep)?;
    Ok(out)
}

/// Regression factor scores; respondents missing a retained item get `None`.
pub fn factor_scores(
    result: &EfaResult,
    indicators: &IndicatorMatrix,
) -> Result<Vec<Option<Vec<f64>>>> {
    let cols = result
        .indicator_names
        .iter()
        .map(|name| {
            indicators
                .indicator_index(name)
                .ok_or_else(|| Error::UnknownName(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let keep = result.retained_items();
    if keep.is_empty() {
        return Err(Error::AllItemsExcluded);
    }
    let f_n = result.n_factors();
    Ok((0..indicators.n_respondents())
        .map(|n| {
            let z = keep
                .iter()
                .map(|&k| {
                    indicators
                        .get(n, cols[k])
                        .map(|v| (v - result.means[k]) / result.sds[k])
                })
                .collect::<Option<Vec<f64>>>()?;
            Some(
                (0..f_n)
                    .map(|j| {
                        keep.iter()
                            .zip(&z)
                            .map(|(&k, zk)| zk * result.score_coefficients[k][j])
                            .sum()
                    })
                    .collect(),
            )
        })
        .collect())
}

/// Scores as an indicator matrix (unbounded scale), optionally rescaled to unit sample variance.
pub fn scores_matrix(
    result: &EfaResult,
    indicators: &IndicatorMatrix,
    unit_variance: bool,
) -> Result<IndicatorMatrix> {
    let scores = factor_scores(result, indicators)?;
    let f_n = result.n_factors();
    let mut scale = vec![1.0; f_n];
    if unit_variance {
        let present: Vec<&Vec<f64>> = scores.iter().flatten().collect();
        let n = present.len() as f64;
        for (j, s) in scale.iter_mut().enumerate() {
            let mean = present.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = present.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            if var > 0.0 {
                *s = 1.0 / var.sqrt();
            }
        }
    }
    let rows = scores
        .iter()
        .map(|r| match r {
            Some(v) => v.iter().zip(&scale).map(|(x, s)| Some(x * s)).collect(),
            None => vec![None; f_n],
        })
        .collect();
    IndicatorMatrix::from_rows(
        indicators.respondent_ids.clone(),
        result.factor_names.clone(),
        rows,
        (f64::NEG_INFINITY, f64::INFINITY),
    )
}
