use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use structfactor::inference::{ChainState, Dataset, ModelKind};
use structfactor::model_post::simulate_data;

use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, read_table, write_json, write_table};

#[derive(Serialize)]
struct Truth<'a> {
    spec_digest: String,
    data_digest: String,
    seed: u64,
    n: usize,
    factors: usize,
    state: &'a ChainState,
}

pub fn run(cfg: &Loaded, out: &Path) -> CliResult<()> {
    let sim = &cfg.config.simulate;
    let w = cfg.config.data.w.as_ref().map(|p| read_table(&cfg.resolve(p))).transpose()?;
    let n = w.as_ref().map_or(sim.n, |w| w.values.nrows());
    let x = cfg.config.data.x.as_ref().map(|p| read_table(&cfg.resolve(p))).transpose()?;
    let lambda = sim.lambda.as_ref().map(|p| read_table(&cfg.resolve(p))).transpose()?;
    let p = match (cfg.config.model.p, &lambda) {
        (Some(p), Some(l)) if l.values.nrows() != p => {
            return Err(CliError::Validation(format!("[model] p = {p} but the true loadings have {} rows", l.values.nrows())));
        }
        (Some(p), _) => p,
        (None, Some(l)) => l.values.nrows(),
        (None, None) => return Err(CliError::Validation("simulation needs [model] p or [simulate] lambda".into())),
    };
    let h = lambda.as_ref().map_or(sim.factors, |l| l.values.ncols());
    if h == 0 {
        return Err(CliError::Validation("simulation needs at least one factor".into()));
    }
    let spec = cfg.spec(p)?;
    let shell = Dataset::new(DMatrix::zeros(n, p), w.as_ref().map(|t| t.values.clone()), x.as_ref().map(|t| t.values.clone()))?;
    shell.check_against(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.config.sampler.seed);
    let mut truth = ChainState::from_prior(&spec, &shell, h, &mut rng)?;
    if let Some(l) = &lambda {
        truth.lambda = l.values.clone();
    }
    if let Some(s2) = sim.sigma2 {
        if spec.kind != ModelKind::Probit {
            truth.sigma2.fill(s2);
        }
    }
    let simulated = simulate_data(&spec, n, Some(shell.w.clone()), shell.x.clone(), Some(&truth), h, &mut rng)?;
    create_dir(out)?;
    let labels: Vec<String> = (1..=p).map(|j| format!("y{j}")).collect();
    write_table(&out.join("y.csv"), &labels, &simulated.data.y)?;
    if let Some(w) = &w {
        write_table(&out.join("w.csv"), &w.header, &w.values)?;
    }
    let factor_labels: Vec<String> = (1..=h).map(|j| format!("f{j}")).collect();
    write_table(&out.join("lambda.csv"), &factor_labels, &simulated.truth.lambda)?;
    write_table(&out.join("eta.csv"), &factor_labels, &simulated.truth.eta)?;
    write_table(
        &out.join("sigma2.csv"),
        &["sigma2".to_string()],
        &DMatrix::from_column_slice(p, 1, simulated.truth.sigma2.as_slice()),
    )?;
    write_json(
        &out.join("truth.json"),
        &Truth {
            spec_digest: spec.digest(),
            data_digest: simulated.data.digest(),
            seed: cfg.config.sampler.seed,
            n,
            factors: h,
            state: &simulated.truth,
        },
    )?;
    println!("simulated {n}x{p} observations from {h} factors into {}", out.display());
    Ok(())
}
