use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use structfactor::inference::{run_chain, Dataset, Draw, FactorModelSpec, ModelKind};
use structfactor::model_post::{
    brier_score, cpo_pml, gaussian_loglik_matrix, kfold_split, log_score, mean_probit_probabilities,
    probit_loglik_matrix, CpoResult, ScoreReport,
};

use super::fit::FitManifest;
use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, read_table, write_json};

#[derive(Serialize, Default)]
struct Report {
    /// Scores of held-out or supplied forecasts.
    scores: Option<ScoreReport>,
    /// Cross-validated scores over the folds.
    cross_validated: Option<ScoreReport>,
    cpo: Option<CpoResult>,
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

fn scores(probs: &DMatrix<f64>, outcomes: &DMatrix<f64>, folds: Vec<usize>) -> CliResult<ScoreReport> {
    Ok(ScoreReport { brier: brier_score(&flat(probs), &flat(outcomes))?, log_score: log_score(&flat(probs), &flat(outcomes))?, folds })
}

fn subset(data: &Dataset, rows: &[usize]) -> CliResult<Dataset> {
    let y = data.y.select_rows(rows);
    let w = data.w.select_rows(rows);
    Ok(Dataset::new(y, Some(w), data.x.clone())?.with_labels(data.labels.clone())?)
}

fn cross_validate(cfg: &Loaded, spec: &FactorModelSpec, data: &Dataset, folds: &[usize], k: usize) -> CliResult<ScoreReport> {
    let mut probs = DMatrix::zeros(data.n(), data.p());
    for f in 0..k {
        let train: Vec<usize> = (0..data.n()).filter(|i| folds[*i] != f).collect();
        let test: Vec<usize> = (0..data.n()).filter(|i| folds[*i] == f).collect();
        let store = run_chain(spec, &subset(data, &train)?, &cfg.sampler(f as u64))?;
        let held_out = mean_probit_probabilities(&store.draws, &data.w.select_rows(&test))?;
        for (r, &i) in test.iter().enumerate() {
            probs.row_mut(i).copy_from(&held_out.row(r));
        }
    }
    scores(&probs, &data.y, folds.to_vec())
}

pub fn run(cfg: &Loaded, fit_dir: Option<&Path>, out: &Path) -> CliResult<()> {
    let s = &cfg.config.score;
    let mut report = Report::default();
    if let (Some(pp), Some(op)) = (&s.predictions, &s.outcomes) {
        let (pp, op) = (cfg.resolve(pp), cfg.resolve(op));
        let probs = read_table(&pp)?.values;
        let outcomes = read_table(&op)?.values;
        if probs.shape() != outcomes.shape() {
            return Err(CliError::Validation(format!(
                "{} is {}x{} but {} is {}x{}",
                pp.display(),
                probs.nrows(),
                probs.ncols(),
                op.display(),
                outcomes.nrows(),
                outcomes.ncols()
            )));
        }
        report.scores = Some(scores(&probs, &outcomes, Vec::new())?);
    } else {
        let fit_dir = fit_dir.ok_or_else(|| {
            CliError::Validation("score needs --input with a fit, or [score] predictions and outcomes".into())
        })?;
        let data = cfg.dataset()?;
        let spec = cfg.spec(data.p())?;
        let manifest = FitManifest::read(fit_dir)?;
        manifest.check(&spec, &data)?;
        let draws: Vec<Draw> = manifest.complete_stores(fit_dir)?.into_iter().flat_map(|(_, st)| st.draws).collect();
        let folds = kfold_split(data.n(), s.folds, cfg.config.sampler.seed)?;
        match spec.kind {
            ModelKind::Probit => {
                report.cpo = Some(cpo_pml(&probit_loglik_matrix(&draws, &data))?);
                if let Some(ty) = &s.test_y {
                    let ty = cfg.resolve(ty);
                    let y = read_table(&ty)?.values;
                    let w = match &s.test_w {
                        Some(p) => read_table(&cfg.resolve(p))?.values,
                        None => DMatrix::from_element(y.nrows(), 1, 1.0),
                    };
                    if y.ncols() != data.p() || w.nrows() != y.nrows() || w.ncols() != data.c() {
                        return Err(CliError::Validation(format!("{} does not match the fitted dimensions", ty.display())));
                    }
                    let probs = mean_probit_probabilities(&draws, &w)?;
                    report.scores = Some(scores(&probs, &y, folds.clone())?);
                }
                if s.cross_validate {
                    report.cross_validated = Some(cross_validate(cfg, &spec, &data, &folds, s.folds)?);
                }
            }
            ModelKind::Static => report.cpo = Some(cpo_pml(&gaussian_loglik_matrix(&draws, &data)?)?),
            ModelKind::Dynamic { .. } => {
                return Err(CliError::Validation("scores are defined for static and probit models".into()));
            }
        }
    }
    create_dir(out)?;
    write_json(&out.join("score.json"), &report)?;
    if let Some(r) = report.scores.as_ref().or(report.cross_validated.as_ref()) {
        println!("brier {}, log score {}", r.brier, r.log_score);
    }
    if let Some(c) = &report.cpo {
        println!("log pseudo marginal likelihood {}", c.log_pml);
    }
    Ok(())
}
