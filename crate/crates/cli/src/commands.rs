use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use lccm::compare::compare_models;
use lccm::dataset::{
    join, load_choice_data, load_indicators, write_choice_data, write_indicators, ChoiceDataset,
    IndicatorMatrix,
};
use lccm::efa::{apply_retention, fit_efa_with, scores_matrix};
use lccm::fmnl::{estimate_fmnl, FmnlOptions};
use lccm::lccm::{estimate, EstimationResult};
use lccm::posterior::{posterior_membership, profile_report, PosteriorMatrix};
use lccm::report;
use lccm::synthgen::generate;
use serde::Serialize;

use crate::config::{Format, Run};

/// What a command produced: whether every estimation converged.
pub enum Outcome {
    Done,
    NotConverged,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write `{}`", path.display()))?;
    Ok(BufWriter::new(f))
}

fn json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    report::write_json(value, create(path)?)?;
    Ok(())
}

fn text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).with_context(|| format!("cannot write `{}`", path.display()))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot read `{}`", path.display()))
}

fn load_choices(run: &Run) -> Result<ChoiceDataset> {
    let path = run
        .config
        .data
        .choices
        .as_ref()
        .ok_or_else(|| anyhow!("no choice data configured (data.choices)"))?;
    load_choice_data(open(path)?, &run.config.data.choice_schema)
        .with_context(|| format!("loading `{}`", path.display()))
}

fn load_indicator_file(run: &Run) -> Result<IndicatorMatrix> {
    let path = run
        .config
        .data
        .indicators
        .as_ref()
        .ok_or_else(|| anyhow!("no indicator data configured (data.indicators)"))?;
    load_indicators(
        open(path)?,
        &run.config.data.indicator_schema,
        run.indicator_scale(),
    )
    .with_context(|| format!("loading `{}`", path.display()))
}

/// Choice data carrying every membership covariate in `covariates`; columns absent
/// from the choice file are taken from the indicator file.
fn model_data(run: &Run, covariates: &[String]) -> Result<ChoiceDataset> {
    let choices = load_choices(run)?;
    let missing: Vec<String> = covariates
        .iter()
        .filter(|c| !choices.covariate_names.contains(c))
        .cloned()
        .collect();
    if missing.is_empty() {
        return Ok(choices);
    }
    let indicators = load_indicator_file(run)?;
    Ok(join(&choices, &indicators)?.with_covariates(&missing)?)
}

fn load_estimate(run: &Run) -> Result<EstimationResult> {
    let path = run.estimate_path();
    if !path.exists() {
        bail!(
            "no estimation result at `{}`; run `estimate` first",
            path.display()
        );
    }
    serde_json::from_reader(open(&path)?)
        .with_context(|| format!("invalid estimation result `{}`", path.display()))
}

fn load_posterior(run: &Run) -> Result<PosteriorMatrix> {
    let path = run.posterior_path();
    if !path.exists() {
        bail!(
            "no posterior file at `{}`; run `posterior` first",
            path.display()
        );
    }
    report::read_posterior_csv(open(&path)?)
        .with_context(|| format!("invalid posterior file `{}`", path.display()))
}

/// Restricts posterior and indicator rows to respondents present in both, in posterior order.
fn align(
    post: &PosteriorMatrix,
    ind: &IndicatorMatrix,
) -> Result<(PosteriorMatrix, IndicatorMatrix)> {
    let have: std::collections::HashSet<&str> =
        ind.respondent_ids.iter().map(String::as_str).collect();
    let ids: Vec<String> = post
        .respondent_ids
        .iter()
        .filter(|id| have.contains(id.as_str()))
        .cloned()
        .collect();
    if ids.is_empty() {
        bail!("no respondents in common between the posterior and indicator files");
    }
    if ids.len() < post.respondent_ids.len() {
        log::warn!(
            "{} posterior rows without indicators dropped",
            post.respondent_ids.len() - ids.len()
        );
    }
    Ok((post.reorder(&ids)?, ind.reorder(&ids)?))
}

fn write_estimation(run: &Run, stem: &str, result: &EstimationResult) -> Result<()> {
    json(&run.path(&format!("{stem}.json")), result)?;
    if run.wants(Format::Csv) {
        report::write_estimates_csv(
            result,
            create(&run.path(&format!("{stem}_parameters.csv")))?,
        )?;
        report::write_fit_stats_csv(result, create(&run.path(&format!("{stem}_fit.csv")))?)?;
    }
    if run.wants(Format::Markdown) {
        text(
            &run.path(&format!("{stem}.md")),
            &report::estimates_markdown(result),
        )?;
    }
    Ok(())
}

pub fn cmd_estimate(run: &Run) -> Result<Outcome> {
    let spec = run
        .config
        .model
        .as_ref()
        .ok_or_else(|| anyhow!("no model configured (model)"))?;
    let data = model_data(run, &spec.membership_covariates)?;
    let result = estimate(&data, spec, &run.config.options)?;
    write_estimation(run, "estimate", &result)?;
    log::info!(
        "log-likelihood {:.4}, status {:?}",
        result.loglik,
        result.convergence.status
    );
    Ok(if result.converged() {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

pub fn cmd_posterior(run: &Run) -> Result<Outcome> {
    let result = load_estimate(run)?;
    let data = model_data(run, &result.spec.membership_covariates)?;
    let post = posterior_membership(&data, &result)?;
    report::write_posterior_csv(&post, create(&run.path("posterior.csv"))?)?;
    if run.wants(Format::Json) {
        json(&run.path("posterior.json"), &post)?;
    }
    Ok(Outcome::Done)
}

pub fn cmd_profile(run: &Run) -> Result<Outcome> {
    let post = load_posterior(run)?;
    if post.n_classes() < 2 {
        bail!("profiling requires C ≥ 2");
    }
    let mut ind = load_indicator_file(run)?;
    if !run.config.profile.indicators.is_empty() {
        ind = ind.select(&run.config.profile.indicators)?;
    }
    let (post, ind) = align(&post, &ind)?;
    let reports = profile_report(&post, &ind)?;
    let c = post.n_classes();
    if run.wants(Format::Csv) {
        report::write_profile_csv(&reports, c, create(&run.path("profile.csv"))?)?;
    }
    if run.wants(Format::Markdown) {
        text(
            &run.path("profile.md"),
            &report::profile_markdown(&reports, c),
        )?;
    }
    if run.wants(Format::Json) {
        json(&run.path("profile.json"), &reports)?;
    }
    Ok(Outcome::Done)
}

pub fn cmd_fmnl(run: &Run) -> Result<Outcome> {
    let post = load_posterior(run)?;
    let names = &run.config.fmnl.covariates;
    let (post, x) = if names.is_empty() {
        let x = vec![Vec::new(); post.n_respondents()];
        (post, x)
    } else {
        let ind = load_indicator_file(run)?.select(names)?;
        let (post, ind) = align(&post, &ind)?;
        // complete cases on the covariates
        let keep: Vec<usize> = (0..ind.n_respondents())
            .filter(|&n| ind.row(n).iter().all(Option::is_some))
            .collect();
        if keep.len() < ind.n_respondents() {
            log::warn!(
                "{} respondents dropped for missing covariates",
                ind.n_respondents() - keep.len()
            );
        }
        let ids: Vec<String> = keep
            .iter()
            .map(|&n| ind.respondent_ids[n].clone())
            .collect();
        let x: Vec<Vec<f64>> = keep
            .iter()
            .map(|&n| ind.row(n).into_iter().flatten().collect())
            .collect();
        (post.reorder(&ids)?, x)
    };
    let options = FmnlOptions {
        reference_class: run.config.fmnl.reference_class,
        ..FmnlOptions::default()
    };
    let result = estimate_fmnl(&post, &x, names, &options)?;
    if run.wants(Format::Csv) {
        report::write_fmnl_csv(&result, create(&run.path("fmnl.csv"))?)?;
    }
    if run.wants(Format::Markdown) {
        text(&run.path("fmnl.md"), &report::fmnl_markdown(&result))?;
    }
    if run.wants(Format::Json) {
        json(&run.path("fmnl.json"), &result)?;
    }
    Ok(if result.convergence.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn efa_items(run: &Run) -> Result<IndicatorMatrix> {
    let ind = load_indicator_file(run)?;
    let items = &run.config.efa.indicators;
    Ok(if items.is_empty() {
        ind
    } else {
        ind.select(items)?
    })
}

pub fn cmd_efa(run: &Run) -> Result<Outcome> {
    let cfg = &run.config.efa;
    let ind = efa_items(run)?;
    let mut result = fit_efa_with(&ind, &cfg.options())?;
    if let Some(t) = cfg.retention {
        result = apply_retention(&result, t)?;
    }
    let scores = scores_matrix(&result, &ind, cfg.unit_variance)?;
    if run.wants(Format::Csv) {
        report::write_loadings_csv(&result, create(&run.path("loadings.csv"))?)?;
    }
    if run.wants(Format::Markdown) {
        text(
            &run.path("loadings.md"),
            &report::loadings_markdown(&result),
        )?;
    }
    if run.wants(Format::Json) {
        json(&run.path("efa.json"), &result)?;
    }
    write_indicators(&scores, create(&run.path("scores.csv"))?)?;
    Ok(if result.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

pub fn cmd_simulate(run: &Run) -> Result<Outcome> {
    let g = run
        .config
        .simulate
        .as_ref()
        .ok_or_else(|| anyhow!("no generator configured (simulate)"))?;
    let out = generate(g)?;
    write_choice_data(&out.choices, create(&run.path("choices.csv"))?)?;
    write_indicators(&out.indicators, create(&run.path("indicators.csv"))?)?;
    json(&run.path("truth.json"), &out.ground_truth(g))?;
    Ok(Outcome::Done)
}

pub fn cmd_compare(run: &Run) -> Result<Outcome> {
    let spec = run
        .config
        .model
        .as_ref()
        .ok_or_else(|| anyhow!("no model configured (model)"))?;
    let choices = load_choices(run)?;
    let indicators = load_indicator_file(run)?;
    let (source, default_covariates) = if run.config.compare.factor_scores {
        let cfg = &run.config.efa;
        let items = efa_items(run)?;
        let mut fit = fit_efa_with(&items, &cfg.options())?;
        if let Some(t) = cfg.retention {
            fit = apply_retention(&fit, t)?;
        }
        let names = fit.factor_names.clone();
        (scores_matrix(&fit, &items, cfg.unit_variance)?, names)
    } else {
        (indicators, Vec::new())
    };
    let covariates = if run.config.compare.covariates.is_empty() {
        default_covariates
    } else {
        run.config.compare.covariates.clone()
    };
    if covariates.is_empty() {
        bail!("comparison needs covariates (compare.covariates) or factor scores (compare.factor_scores)");
    }
    let panel = join(&choices, &source)?;

    let baseline = if run.config.data.estimate.is_some() {
        load_estimate(run)?
    } else {
        let mut base = spec.clone();
        base.membership_covariates.clear();
        estimate(&panel.choices, &base, &run.config.options)?
    };
    let cmp = compare_models(&panel, &baseline, &covariates, &run.config.options)?;
    write_estimation(run, "baseline", &baseline)?;
    if run.wants(Format::Csv) {
        report::write_comparison_csv(&cmp, create(&run.path("comparison.csv"))?)?;
    }
    if run.wants(Format::Markdown) {
        text(
            &run.path("comparison.md"),
            &report::comparison_markdown(&cmp),
        )?;
    }
    if run.wants(Format::Json) {
        json(&run.path("comparison.json"), &cmp)?;
    }
    let ok = baseline.converged()
        && cmp.simultaneous.converged()
        && cmp.sequential.converged()
        && cmp.fmnl.convergence.converged;
    Ok(if ok {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}
