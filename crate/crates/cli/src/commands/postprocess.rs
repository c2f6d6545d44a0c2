use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use structfactor::inference::{effective_k, Draw, DrawStore, TruncationCriterion};
use structfactor::model_post::{identify_draw, k_summary_from_values, posterior_mean_omega, KSummary};
use structfactor::stationary_var::{pac_to_var, ExpansionPieces, PacParams};

use super::fit::FitManifest;
use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, write_json, write_records, write_table};

#[derive(Serialize)]
struct ChainK {
    chain_id: u64,
    n_draws: usize,
    summary: KSummary,
}

#[derive(Serialize)]
struct KReport {
    criterion: TruncationCriterion,
    n_draws: usize,
    /// Draws whose loadings were numerically rank deficient; left out of the
    /// identified draw file.
    rank_deficient: usize,
    combined: KSummary,
    chains: Vec<ChainK>,
}

fn pieces(draw: &Draw) -> CliResult<ExpansionPieces> {
    let Some(a) = &draw.pac else {
        return Ok(ExpansionPieces::default());
    };
    let var = pac_to_var(&PacParams::new(a.clone())?)?;
    Ok(ExpansionPieces {
        lambda: None,
        eta: None,
        gamma: var.gamma,
        pi: Some(var.pi.matrix().clone()),
        a: a.clone(),
    })
}

fn push_matrix(rows: &mut Vec<Vec<String>>, chain: u64, iteration: usize, name: &str, m: &DMatrix<f64>) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            rows.push(vec![
                chain.to_string(),
                iteration.to_string(),
                name.to_string(),
                (i + 1).to_string(),
                (j + 1).to_string(),
                m[(i, j)].to_string(),
            ]);
        }
    }
}

pub fn run(cfg: &Loaded, fit_dir: &Path, out: &Path) -> CliResult<()> {
    let data = cfg.dataset()?;
    let spec = cfg.spec(data.p())?;
    let manifest = FitManifest::read(fit_dir)?;
    manifest.check(&spec, &data)?;
    let stores = manifest.complete_stores(fit_dir)?;
    let criterion = cfg.criterion();
    create_dir(out)?;

    let mut rows = Vec::new();
    let mut rank_deficient = 0;
    let mut all_k = Vec::new();
    let mut chains = Vec::new();
    for (id, store) in &stores {
        let ks = chain_k(store, &criterion);
        chains.push(ChainK { chain_id: *id, n_draws: ks.len(), summary: k_summary_from_values(&ks)? });
        all_k.extend(ks);
        for d in &store.draws {
            let id_draw = identify_draw(&d.lambda, &pieces(d)?)?;
            if id_draw.rank_deficient {
                rank_deficient += 1;
                continue;
            }
            push_matrix(&mut rows, *id, d.iteration, "lambda", &id_draw.lambda);
            for (i, g) in id_draw.gamma.iter().enumerate() {
                push_matrix(&mut rows, *id, d.iteration, &format!("gamma{}", i + 1), g);
            }
            if let Some(pi) = &id_draw.pi {
                push_matrix(&mut rows, *id, d.iteration, "pi", pi);
            }
        }
    }
    write_records(&out.join("identified.csv"), &["chain", "iteration", "parameter", "row", "col", "value"], &rows)?;
    let report = KReport {
        criterion,
        n_draws: all_k.len(),
        rank_deficient,
        combined: k_summary_from_values(&all_k)?,
        chains,
    };
    write_json(&out.join("k_summary.json"), &report)?;
    let draws: Vec<Draw> = stores.into_iter().flat_map(|(_, s)| s.draws).collect();
    let omega = posterior_mean_omega(&draws).map_err(CliError::from)?;
    write_table(&out.join("omega_mean.csv"), &data.labels, &omega)?;
    let c = &report.combined;
    println!(
        "k*: mode {}, median {}, 95% interval ({}, {}) over {} draws; {} rank-deficient",
        c.mode, c.median, c.lower, c.upper, report.n_draws, rank_deficient
    );
    Ok(())
}

fn chain_k(store: &DrawStore, criterion: &TruncationCriterion) -> Vec<usize> {
    store.draws.iter().map(|d| effective_k(&d.lambda, d.sigma2.as_slice(), criterion)).collect()
}
