//! Output tables: JSON documents, CSV files readable by the dataset loaders
//! (first column is an id, remaining cells numeric or blank), and markdown
//! laid out with one column block per class.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::Serialize;

use crate::compare::Comparison;
use crate::dataset::{load_indicators, IndicatorSchema};
use crate::efa::{EfaResult, Exclusion};
use crate::error::{Error, Result};
use crate::fmnl::FmnlResult;
use crate::lccm::{Block, EntryStatus, EstimationResult};
use crate::posterior::{tests_performed, PosteriorMatrix, ProfileReport};

/// Description of the F statistic written with every profile table.
pub const ANOVA_FORM: &str =
    "F = [sum_c W_c (m_c - m)^2 / (C - 1)] / [sum_c sum_n w_nc (i_n - m_c)^2 / (N - C)], m = sample mean";

pub fn write_json<T: Serialize, W: Write>(value: &T, mut sink: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, value)?;
    sink.write_all(b"\n")?;
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        Some(x) if x.is_nan() => String::new(),
        Some(x) => {
            // infinite statistics are written as very large finite numbers so the file stays numeric
            format!("{}", if x > 0.0 { f64::MAX } else { f64::MIN })
        }
        None => String::new(),
    }
}

fn md(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_infinite() => if x > 0.0 { "inf" } else { "-inf" }.to_string(),
        Some(x) if x.is_finite() => format!("{x:.digits$}"),
        _ => "-".to_string(),
    }
}

fn block_prefix(b: Block) -> &'static str {
    match b {
        Block::Membership => "membership",
        Block::Utility => "utility",
        Block::Nesting => "nesting",
    }
}

/// One class's `(estimate, se, p, status)`.
type Cell = (f64, Option<f64>, Option<f64>, EntryStatus);

/// Rows of `(parameter label, per-class cells)`.
fn parameter_rows(result: &EstimationResult) -> Vec<(String, Vec<Cell>)> {
    let c_n = result.spec.n_classes;
    let mut rows: Vec<(String, Vec<_>)> = Vec::new();
    for e in result.estimates() {
        let label = format!("{}:{}", block_prefix(e.block), e.name);
        let idx = match rows.iter().position(|(l, _)| l == &label) {
            Some(i) => i,
            None => {
                rows.push((label, Vec::with_capacity(c_n)));
                rows.len() - 1
            }
        };
        rows[idx]
            .1
            .push((e.estimate, e.std_error, e.p_value, e.status));
    }
    rows
}

/// Parameter table: one row per parameter, `est`, `se` and `p` columns per class.
pub fn write_estimates_csv<W: Write>(result: &EstimationResult, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["parameter".to_string()];
    for c in 1..=result.spec.n_classes {
        header.extend([
            format!("class_{c}_est"),
            format!("class_{c}_se"),
            format!("class_{c}_p"),
        ]);
    }
    w.write_record(&header)?;
    for (label, cells) in parameter_rows(result) {
        let mut rec = vec![label];
        for (est, se, p, _) in cells {
            rec.extend([cell(Some(est)), cell(se), cell(p)]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Fit statistics as `statistic,value` rows.
pub fn write_fit_stats_csv<W: Write>(result: &EstimationResult, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["statistic", "value"])?;
    let rows = [
        ("loglik", result.loglik),
        ("loglik_null", result.loglik_null),
        ("n_params", result.n_params as f64),
        ("n_respondents", result.n_respondents as f64),
        ("n_observations", result.n_observations as f64),
        ("adj_rho2", result.adj_rho2),
        ("aic", result.aic),
        ("bic", result.bic),
    ];
    for (k, v) in rows {
        w.write_record([k.to_string(), cell(Some(v))])?;
    }
    w.flush()?;
    Ok(())
}

pub fn estimates_markdown(result: &EstimationResult) -> String {
    let c_n = result.spec.n_classes;
    let mut s = String::new();
    let _ = write!(s, "| Parameter |");
    for c in 1..=c_n {
        let _ = write!(s, " Class {c} est. | p-value |");
    }
    s.push('\n');
    s.push_str("|---|");
    for _ in 0..c_n {
        s.push_str("---:|---:|");
    }
    s.push('\n');
    for (label, cells) in parameter_rows(result) {
        let _ = write!(s, "| {label} |");
        for (est, _, p, status) in cells {
            match status {
                EntryStatus::BoundFixed => s.push_str(" 0 (bound) | - |"),
                EntryStatus::Reference => s.push_str(" 0 (ref.) | - |"),
                EntryStatus::Fixed => {
                    let _ = write!(s, " {} (fixed) | - |", md(Some(est), 3));
                }
                _ => {
                    let _ = write!(s, " {} | {} |", md(Some(est), 3), md(p, 3));
                }
            }
        }
        s.push('\n');
    }
    let _ = write!(
        s,
        "\nClass shares: {}\n\nLog-likelihood {:.3}; null log-likelihood {:.3} ({}); K = {}; adjusted rho-squared {:.3}; AIC {:.3}; BIC {:.3}; N = {} respondents, {} choice situations; status {:?}.\n",
        result
            .class_shares
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>()
            .join(", "),
        result.loglik,
        result.loglik_null,
        result.null_model,
        result.n_params,
        result.adj_rho2,
        result.aic,
        result.bic,
        result.n_respondents,
        result.n_observations,
        result.convergence.status,
    );
    for w in &result.warnings {
        let _ = writeln!(s, "\nWarning: {w}");
    }
    s
}

/// `resp_id, p_class_1..p_class_C`.
pub fn write_posterior_csv<W: Write>(posterior: &PosteriorMatrix, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["resp_id".to_string()];
    header.extend((1..=posterior.n_classes()).map(|c| format!("p_class_{c}")));
    w.write_record(&header)?;
    for (id, row) in posterior.respondent_ids.iter().zip(&posterior.probs) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|&p| cell(Some(p))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_posterior_csv<R: Read>(source: R) -> Result<PosteriorMatrix> {
    let m = load_indicators(source, &IndicatorSchema::default(), (0.0, 1.0))?;
    if m.n_missing() > 0 {
        return Err(Error::Precondition("posterior file has blank cells".into()));
    }
    let probs: Vec<Vec<f64>> = (0..m.n_respondents())
        .map(|n| m.row(n).into_iter().flatten().collect())
        .collect();
    for (id, row) in m.respondent_ids.iter().zip(&probs) {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "posterior row `{id}` sums to {total}"
            )));
        }
    }
    Ok(PosteriorMatrix {
        respondent_ids: m.respondent_ids,
        probs,
    })
}

fn pair_labels(c_n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for c in 0..c_n {
        for d in c + 1..c_n {
            out.push((c, d));
        }
    }
    out
}

pub fn write_profile_csv<W: Write>(
    reports: &[ProfileReport],
    n_classes: usize,
    sink: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["indicator".to_string(), "n".to_string()];
    header.extend((1..=n_classes).map(|c| format!("mean_class_{c}")));
    header.extend((1..=n_classes).map(|c| format!("var_class_{c}")));
    header.extend((1..=n_classes).map(|c| format!("neff_class_{c}")));
    header.extend(["F", "df1", "df2", "p_F"].map(String::from));
    for (c, d) in pair_labels(n_classes) {
        header.push(format!("{} vs {}", c + 1, d + 1));
        header.push(format!("df {} vs {}", c + 1, d + 1));
        header.push(format!("p {} vs {}", c + 1, d + 1));
    }
    w.write_record(&header)?;
    for r in reports {
        let mut rec = vec![r.name.clone(), r.n.to_string()];
        rec.extend(r.class_means.iter().map(|&m| cell(m)));
        rec.extend(r.class_vars.iter().map(|&v| cell(v)));
        rec.extend(r.effective_n.iter().map(|&v| cell(Some(v))));
        match &r.anova {
            Some(a) => rec.extend([
                cell(Some(a.f)),
                cell(Some(a.df1)),
                cell(Some(a.df2)),
                cell(Some(a.p)),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 4)),
        }
        for (_, _, t) in &r.pairwise {
            match t {
                Some(t) => rec.extend([cell(Some(t.t)), cell(Some(t.df)), cell(Some(t.p))]),
                None => rec.extend(std::iter::repeat_n(String::new(), 3)),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn profile_markdown(reports: &[ProfileReport], n_classes: usize) -> String {
    let pairs = pair_labels(n_classes);
    let mut s = String::from("| Indicator |");
    for c in 1..=n_classes {
        let _ = write!(s, " Class {c} |");
    }
    s.push_str(" F |");
    for (c, d) in &pairs {
        let _ = write!(s, " {} vs {} |", c + 1, d + 1);
    }
    s.push_str("\n|---|");
    for _ in 0..n_classes + 1 + pairs.len() {
        s.push_str("---:|");
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "| {} |", r.name);
        for m in &r.class_means {
            let _ = write!(s, " {} |", md(*m, 2));
        }
        let _ = write!(s, " {} |", md(r.anova.map(|a| a.f), 2));
        for (_, _, t) in &r.pairwise {
            let _ = write!(s, " {} |", md(t.map(|t| t.t), 2));
        }
        s.push('\n');
    }
    let _ = write!(
        s,
        "\nF statistic: {ANOVA_FORM}. Pairwise t: Welch-Satterthwaite df with Kish effective sizes, two-sided p. {} tests performed; no multiple-comparison correction applied.\n",
        tests_performed(reports)
    );
    s
}

/// Rows = coefficients; `est`, `se`, `p` per class (reference class all zero, blank inference).
pub fn write_fmnl_csv<W: Write>(result: &FmnlResult, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["coefficient".to_string()];
    for c in 1..=result.n_classes() {
        header.extend([
            format!("class_{c}_est"),
            format!("class_{c}_se"),
            format!("class_{c}_p"),
        ]);
    }
    w.write_record(&header)?;
    for (i, name) in result.coefficient_names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        for c in 0..result.n_classes() {
            rec.extend([
                cell(Some(result.gamma[c][i])),
                cell(result.robust_se[c][i]),
                cell(result.p_values[c][i]),
            ]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn fmnl_markdown(result: &FmnlResult) -> String {
    let c_n = result.n_classes();
    let mut s = String::from("| Coefficient |");
    for c in 1..=c_n {
        let _ = write!(s, " Class {c} est. | p-value |");
    }
    s.push_str("\n|---|");
    for _ in 0..c_n {
        s.push_str("---:|---:|");
    }
    s.push('\n');
    for (i, name) in result.coefficient_names.iter().enumerate() {
        let _ = write!(s, "| {name} |");
        for c in 0..c_n {
            if c == result.reference_class {
                s.push_str(" 0 (ref.) | - |");
            } else {
                let _ = write!(
                    s,
                    " {} | {} |",
                    md(Some(result.gamma[c][i]), 3),
                    md(result.p_values[c][i], 3)
                );
            }
        }
        s.push('\n');
    }
    let _ = write!(
        s,
        "\nQuasi-log-likelihood {:.3}; N = {}; robust (sandwich) standard errors; {} iterations, gradient norm {:.2e}.\n",
        result.quasi_loglik, result.n_respondents, result.convergence.iterations, result.convergence.gradient_norm
    );
    s
}

fn exclusion_label(e: Exclusion) -> &'static str {
    match e {
        Exclusion::None => "retained",
        Exclusion::NoSalientLoading => "excluded: no salient loading",
        Exclusion::CrossLoading => "excluded: cross-loading",
    }
}

/// Loadings with suppressed cells blank, communality, uniqueness and a 0/1 retained flag.
pub fn write_loadings_csv<W: Write>(result: &EfaResult, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["indicator".to_string()];
    header.extend(result.factor_names.iter().cloned());
    header.extend(["communality", "uniqueness", "retained"].map(String::from));
    w.write_record(&header)?;
    for (k, name) in result.indicator_names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(result.salient_loadings[k].iter().map(|&v| cell(v)));
        rec.push(cell(Some(result.communalities[k])));
        rec.push(cell(Some(result.uniquenesses[k])));
        rec.push(((result.retained[k] == Exclusion::None) as u8).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn loadings_markdown(result: &EfaResult) -> String {
    let mut s = String::from("| Indicator |");
    for f in &result.factor_names {
        let _ = write!(s, " {f} |");
    }
    s.push_str(" Status |\n|---|");
    for _ in &result.factor_names {
        s.push_str("---:|");
    }
    s.push_str("---|\n");
    for (k, name) in result.indicator_names.iter().enumerate() {
        let _ = write!(s, "| {name} |");
        for v in &result.salient_loadings[k] {
            let _ = write!(s, " {} |", md(*v, 3));
        }
        let _ = writeln!(s, " {} |", exclusion_label(result.retained[k]));
    }
    let _ = write!(
        s,
        "\nPrincipal-axis factoring, varimax rotation; N = {} complete cases; salience threshold {}.\n",
        result.n_observations,
        result.salience_threshold.map_or("none".to_string(), |t| t.to_string())
    );
    s
}

/// Side-by-side membership coefficients.
pub fn write_comparison_csv<W: Write>(cmp: &Comparison, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "coefficient",
        "fmnl",
        "fmnl_t",
        "simultaneous",
        "simultaneous_se",
        "sequential",
        "sequential_se",
    ])?;
    for r in &cmp.rows {
        w.write_record([
            format!("class_{}:{}", r.class + 1, r.coefficient),
            cell(Some(r.fmnl)),
            cell(r.fmnl_t),
            cell(Some(r.simultaneous)),
            cell(r.simultaneous_se),
            cell(Some(r.sequential)),
            cell(r.sequential_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn comparison_markdown(cmp: &Comparison) -> String {
    let mut s = String::from(
        "| Class | Coefficient | FMNL | t | Simultaneous | Sequential |\n|---|---|---:|---:|---:|---:|\n",
    );
    for r in &cmp.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            r.class + 1,
            r.coefficient,
            md(Some(r.fmnl), 3),
            md(r.fmnl_t, 2),
            md(Some(r.simultaneous), 3),
            md(Some(r.sequential), 3)
        );
    }
    let a = &cmp.agreement;
    if a.n_significant == 0 {
        let _ = write!(
            s,
            "\nNo covariate coefficients with |t| > {} in the FMNL fit.\n",
            a.t_threshold
        );
    } else {
        let _ = write!(
            s,
            "\n{} covariate coefficients with |t| > {} in the FMNL fit; sign agreement {:.1}%; max absolute difference {:.4}; max relative difference {:.1}%.\n",
            a.n_significant,
            a.t_threshold,
            100.0 * a.sign_agreement.unwrap_or(0.0),
            a.max_abs_diff.unwrap_or(0.0),
            100.0 * a.max_rel_diff.unwrap_or(0.0)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posterior_round_trip() {
        let p = PosteriorMatrix {
            respondent_ids: vec!["1".into(), "2".into()],
            probs: vec![vec![0.25, 0.75], vec![1.0, 0.0]],
        };
        let mut buf = Vec::new();
        write_posterior_csv(&p, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("resp_id,p_class_1,p_class_2\n"));
        assert_eq!(read_posterior_csv(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn blank_cells_for_absent_values() {
        assert_eq!(cell(None), "");
        assert_eq!(cell(Some(0.5)), "0.5");
        assert_eq!(md(None, 2), "-");
    }
}
