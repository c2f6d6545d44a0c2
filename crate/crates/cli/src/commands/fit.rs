use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use structfactor::inference::{Chain, Checkpoint, Dataset, DrawStore, FactorModelSpec, SamplerConfig};

use crate::config::Loaded;
use crate::error::{at_path, CliError, CliResult};
use crate::io::{create_dir, read_json, write_json};

pub const FIT_MANIFEST: &str = "fit.json";
const CHECKPOINT: &str = "checkpoint.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainStatus {
    Complete,
    /// Stopped early on request; a checkpoint holds the state.
    Suspended,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain_id: u64,
    pub dir: String,
    pub status: ChainStatus,
    pub iterations_done: usize,
    pub n_draws: usize,
    pub error: Option<String>,
}

/// Combined manifest of a multi-chain fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub spec_digest: String,
    pub data_digest: String,
    pub spec: FactorModelSpec,
    /// Canonical form of the configuration the fit ran with.
    pub config: String,
    pub chains: Vec<ChainRecord>,
}

impl FitManifest {
    pub fn read(dir: &Path) -> CliResult<Self> {
        read_json(&dir.join(FIT_MANIFEST))
    }

    /// Refuse to use a fit made from a different model or data.
    pub fn check(&self, spec: &FactorModelSpec, data: &Dataset) -> CliResult<()> {
        let mut diffs = Vec::new();
        if self.spec_digest != spec.digest() {
            diffs.push(format!("spec digest: fit {} vs config {}", self.spec_digest, spec.digest()));
        }
        if self.data_digest != data.digest() {
            diffs.push(format!("data digest: fit {} vs config {}", self.data_digest, data.digest()));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(format!("fit does not match the configuration; {}", diffs.join("; "))))
        }
    }

    /// Stores of every complete chain, in chain order.
    pub fn complete_stores(&self, dir: &Path) -> CliResult<Vec<(u64, DrawStore)>> {
        let mut out = Vec::new();
        for c in self.chains.iter().filter(|c| c.status == ChainStatus::Complete) {
            out.push((c.chain_id, DrawStore::read(&dir.join(&c.dir))?));
        }
        if out.is_empty() {
            return Err(CliError::Validation(format!("{} has no complete chains", dir.display())));
        }
        Ok(out)
    }
}

pub struct FitOptions {
    pub resume: bool,
    pub stop_after: Option<usize>,
}

pub fn chain_dir(id: u64) -> String {
    format!("chain-{id}")
}

fn write_checkpoint(dir: &Path, cp: &Checkpoint) -> CliResult<()> {
    write_json(&dir.join(CHECKPOINT), cp)
}

fn run_one(
    spec: &FactorModelSpec,
    data: &Dataset,
    config: &SamplerConfig,
    dir: &Path,
    checkpoint_every: Option<usize>,
    opts: &FitOptions,
) -> CliResult<ChainRecord> {
    create_dir(dir)?;
    let cp_path = dir.join(CHECKPOINT);
    let mut chain = if opts.resume && cp_path.exists() {
        let cp: Checkpoint = read_json(&cp_path)?;
        if cp.config != *config {
            return Err(CliError::Validation(format!("{} was written with different sampler settings", cp_path.display())));
        }
        Chain::resume(spec, data, cp)?
    } else {
        Chain::new(spec, data, config)?
    };
    let total = chain.total_iterations();
    let stop = opts.stop_after.map_or(total, |s| s.min(total));
    let record = |status, iterations_done, n_draws, error| ChainRecord {
        chain_id: config.chain_id,
        dir: chain_dir(config.chain_id),
        status,
        iterations_done,
        n_draws,
        error,
    };
    while chain.iteration() < stop {
        let next = match checkpoint_every {
            Some(k) if k > 0 => ((chain.iteration() / k + 1) * k).min(stop),
            _ => stop,
        };
        if let Err(e) = chain.run_to(next) {
            let done = chain.iteration();
            let msg = e.to_string();
            let store = chain.into_store(Some(msg.clone()));
            store.write(dir)?;
            return Ok(record(ChainStatus::Failed, done, store.draws.len(), Some(msg)));
        }
        if checkpoint_every.is_some() && chain.iteration() < total {
            write_checkpoint(dir, &chain.checkpoint())?;
        }
    }
    if chain.iteration() < total {
        let cp = chain.checkpoint();
        write_checkpoint(dir, &cp)?;
        return Ok(record(ChainStatus::Suspended, cp.iteration, cp.draws.len(), None));
    }
    let done = chain.iteration();
    let store = chain.into_store(None);
    store.write(dir)?;
    if cp_path.exists() {
        fs::remove_file(&cp_path).map_err(at_path(&cp_path))?;
    }
    Ok(record(ChainStatus::Complete, done, store.draws.len(), None))
}

pub fn run(cfg: &Loaded, out: &Path, opts: &FitOptions) -> CliResult<()> {
    let data = cfg.dataset()?;
    let spec = cfg.spec(data.p())?;
    data.check_against(&spec)?;
    let s = &cfg.config.sampler;
    if s.chains == 0 {
        return Err(CliError::Validation("at least one chain is required".into()));
    }
    let configs: Vec<SamplerConfig> = (0..s.chains as u64).map(|c| cfg.sampler(c)).collect();
    configs[0].validate(&spec)?;
    create_dir(out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = s.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    let dirs: Vec<PathBuf> = configs.iter().map(|c| out.join(chain_dir(c.chain_id))).collect();
    let results: Vec<CliResult<ChainRecord>> = pool.install(|| {
        use rayon::prelude::*;
        configs
            .par_iter()
            .zip(dirs.par_iter())
            .map(|(c, d)| run_one(&spec, &data, c, d, s.checkpoint_every, opts))
            .collect()
    });
    let mut chains = Vec::new();
    let mut first_error = None;
    for (c, r) in configs.iter().zip(results) {
        match r {
            Ok(rec) => chains.push(rec),
            Err(e) => {
                chains.push(ChainRecord {
                    chain_id: c.chain_id,
                    dir: chain_dir(c.chain_id),
                    status: ChainStatus::Failed,
                    iterations_done: 0,
                    n_draws: 0,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    let manifest = FitManifest {
        spec_digest: spec.digest(),
        data_digest: data.digest(),
        spec,
        config: cfg.canonical(),
        chains,
    };
    write_json(&out.join(FIT_MANIFEST), &manifest)?;
    for c in &manifest.chains {
        println!(
            "chain {}: {:?}, {} iterations, {} draws{}",
            c.chain_id,
            c.status,
            c.iterations_done,
            c.n_draws,
            c.error.as_ref().map(|e| format!(" ({e})")).unwrap_or_default()
        );
    }
    let failed: Vec<u64> = manifest.chains.iter().filter(|c| c.status == ChainStatus::Failed).map(|c| c.chain_id).collect();
    if failed.is_empty() {
        return Ok(());
    }
    if failed.len() == manifest.chains.len() {
        if let Some(e) = first_error {
            return Err(e);
        }
    }
    Err(CliError::Partial(format!("chains {failed:?} failed; see {}", out.join(FIT_MANIFEST).display())))
}
