use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use structfactor::inference::{Dataset, Draw, MeanModel, ModelKind};
use structfactor::model_post::{forecast_h, forward_filter_substep, ForecastInput};
use structfactor::stationary_var::{pac_to_var, PacParams};

use super::fit::FitManifest;
use crate::config::{Loaded, Origin};
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, read_table, write_records};

/// Per-hour means of a draw for `days` days, from the data's covariates and
/// then `w_future`.
fn hourly_means(draw: &Draw, w: &DMatrix<f64>, days: usize) -> DMatrix<f64> {
    let rows = w.rows(0, days);
    rows * draw.beta.transpose()
}

fn input_for(
    draw: &Draw,
    data: &Dataset,
    w_all: &DMatrix<f64>,
    origin: Origin,
    horizon: usize,
) -> CliResult<ForecastInput> {
    let p = data.p();
    let a = draw.pac.as_ref().ok_or_else(|| CliError::Validation("stored draw has no VAR parameters".into()))?;
    let var = pac_to_var(&PacParams::new(a.clone())?)?;
    let days_needed = origin.day + 1 + (origin.hours + horizon - 1) / p;
    if w_all.nrows() < days_needed {
        return Err(CliError::Validation(format!(
            "forecast needs mean covariates for {days_needed} days, {} available (set [forecast] w_future)",
            w_all.nrows()
        )));
    }
    let means = hourly_means(draw, w_all, days_needed);
    let observed = data.y.rows(0, origin.day + 1).into_owned();
    let filtered = forward_filter_substep(
        &var,
        &draw.lambda,
        draw.sigma2.as_slice(),
        &means.rows(0, origin.day + 1).into_owned(),
        &observed,
        Some(origin.hours),
        None,
    )?;
    let state = filtered.last().expect("at least one hour observed").state.clone();
    Ok(ForecastInput {
        var,
        lambda: draw.lambda.clone(),
        sigma2: draw.sigma2.iter().copied().collect(),
        mean: means.rows(origin.day, days_needed - origin.day).into_owned(),
        state,
        hours_observed: origin.hours,
    })
}

pub fn run(cfg: &Loaded, fit_dir: &Path, out: &Path) -> CliResult<()> {
    let data = cfg.dataset()?;
    let spec = cfg.spec(data.p())?;
    if !matches!(spec.kind, ModelKind::Dynamic { .. }) {
        return Err(CliError::Validation("forecasting needs a dynamic model".into()));
    }
    let manifest = FitManifest::read(fit_dir)?;
    manifest.check(&spec, &data)?;
    let f = &cfg.config.forecast;
    if f.horizon == 0 {
        return Err(CliError::Validation("forecast horizon must be at least one hour".into()));
    }
    let (n, p) = data.y.shape();
    let origins = if f.origins.is_empty() { vec![Origin { day: n - 1, hours: p }] } else { f.origins.clone() };
    for o in &origins {
        if o.day >= n || o.hours == 0 || o.hours > p {
            return Err(CliError::Validation(format!(
                "origin day {} hour {} outside the data ({n} days of {p} hours)",
                o.day, o.hours
            )));
        }
    }
    let w_all = match (&f.w_future, spec.mean) {
        (Some(path), _) => {
            let extra = read_table(&cfg.resolve(path))?.values;
            if extra.ncols() != data.c() {
                return Err(CliError::Validation(format!("{} has {} columns, W has {}", path.display(), extra.ncols(), data.c())));
            }
            let mut w = DMatrix::zeros(n + extra.nrows(), data.c());
            w.rows_mut(0, n).copy_from(&data.w);
            w.rows_mut(n, extra.nrows()).copy_from(&extra);
            w
        }
        (None, MeanModel::Constant { .. }) => {
            let longest = origins.iter().map(|o| o.day + 2 + (o.hours + f.horizon) / p).max().unwrap_or(n);
            DMatrix::from_element(longest.max(n), 1, 1.0)
        }
        (None, _) => data.w.clone(),
    };
    let draws: Vec<Draw> = manifest.complete_stores(fit_dir)?.into_iter().flat_map(|(_, s)| s.draws).collect();
    create_dir(out)?;
    let mut rows = Vec::new();
    for (k, origin) in origins.iter().enumerate() {
        let inputs: Vec<ForecastInput> = draws
            .par_iter()
            .map(|d| input_for(d, &data, &w_all, *origin, f.horizon))
            .collect::<CliResult<_>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.config.sampler.seed);
        rng.set_stream(k as u64);
        let res = forecast_h(&inputs, f.horizon, &mut rng)?;
        for step in 0..f.horizon {
            let u = origin.day * p + origin.hours + step;
            let observed = if u / p < n { data.y[(u / p, u % p)].to_string() } else { String::new() };
            rows.push(vec![
                origin.day.to_string(),
                origin.hours.to_string(),
                (step + 1).to_string(),
                (u / p).to_string(),
                (u % p + 1).to_string(),
                res.mean[step].to_string(),
                res.lower[step].to_string(),
                res.upper[step].to_string(),
                observed,
            ]);
        }
    }
    write_records(
        &out.join("forecast.csv"),
        &["origin_day", "origin_hour", "hour", "day", "hour_of_day", "mean", "lower", "upper", "observed"],
        &rows,
    )?;
    println!("{} origins x {} hours from {} draws written to {}", origins.len(), f.horizon, draws.len(), out.display());
    Ok(())
}
