//! Persisted posterior draws.
//!
//! A store is a directory holding `manifest.json` and one file per parameter
//! of little-endian `f64` values, one fixed-width row per stored draw.
//! Parameters whose width follows the truncation level start with a column
//! giving the row's `H` and are zero-padded to the largest `H` in the store.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::adapt::TruncationEvent;
use super::model::{Dataset, FactorModelSpec, MeanModel, SamplerConfig};
use super::state::ChainState;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// One stored draw. `eta_tail` keeps the last `m` factor rows of a dynamic
/// model (the forecast origin); static models keep none.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub lambda: DMatrix<f64>,
    pub sigma2: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub kappa: Option<DMatrix<f64>>,
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    pub varsigma_check: Option<f64>,
    pub pac: Option<Vec<DMatrix<f64>>>,
    pub eta_tail: Option<DMatrix<f64>>,
}

impl Draw {
    pub fn from_state(state: &ChainState, spec: &FactorModelSpec, iteration: usize) -> Self {
        let m = spec.var_order();
        Draw {
            iteration,
            lambda: state.lambda.clone(),
            sigma2: state.sigma2.clone(),
            beta: state.beta.clone(),
            kappa: state.kappa.clone(),
            theta: state.theta.clone(),
            rho: state.mgp.rho.clone(),
            varsigma_check: state.varsigma_check,
            pac: state.pac.as_ref().map(|p| p.a.clone()),
            eta_tail: (m > 0).then(|| state.eta.rows(state.eta.nrows() - m, m).into_owned()),
        }
    }

    pub fn h(&self) -> usize {
        self.lambda.ncols()
    }

    /// Column precisions `1/ψ_h`.
    pub fn precisions(&self) -> Vec<f64> {
        let mut acc = 1.0;
        self.rho
            .iter()
            .map(|r| {
                acc *= r;
                acc
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub theta_proposed: u64,
    pub theta_accepted: u64,
    pub varsigma_proposed: u64,
    pub varsigma_accepted: u64,
    pub mala_proposed: u64,
    pub mala_accepted: u64,
    pub mala_nonfinite: u64,
    #[serde(default)]
    pub rotation_proposed: u64,
    #[serde(default)]
    pub rotation_accepted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnFile {
    pub name: String,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub spec_digest: String,
    pub data_digest: String,
    pub spec: FactorModelSpec,
    pub config: SamplerConfig,
    pub p: usize,
    pub n: usize,
    pub c: usize,
    pub q: usize,
    pub m: usize,
    pub max_h: usize,
    pub n_draws: usize,
    pub draw_iterations: Vec<usize>,
    pub h_trajectory: Vec<usize>,
    pub events: Vec<TruncationEvent>,
    pub acceptance: Acceptance,
    pub final_scales: Option<super::sweep::ProposalScales>,
    /// Set when the chain stopped early; the draws are those made before
    /// the failure.
    pub partial: bool,
    pub failure: Option<String>,
    pub files: Vec<ColumnFile>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrawStore {
    pub manifest: Manifest,
    pub draws: Vec<Draw>,
}

fn has_kappa(spec: &FactorModelSpec) -> bool {
    matches!(spec.mean, MeanModel::Hierarchical { .. })
}

impl DrawStore {
    /// Build a store from draws, filling in the derived manifest fields.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        spec: &FactorModelSpec,
        data: &Dataset,
        config: &SamplerConfig,
        draws: Vec<Draw>,
        events: Vec<TruncationEvent>,
        acceptance: Acceptance,
        final_scales: Option<super::sweep::ProposalScales>,
        failure: Option<String>,
    ) -> Self {
        let p = spec.p;
        let c = data.c();
        let q = data.q();
        let m = spec.var_order();
        let max_h = draws.iter().map(Draw::h).max().unwrap_or(0);
        let mut files = vec![
            ColumnFile { name: "lambda".into(), width: 1 + p * max_h },
            ColumnFile { name: "sigma2".into(), width: p },
            ColumnFile { name: "beta".into(), width: p * c },
        ];
        if has_kappa(spec) {
            files.push(ColumnFile { name: "kappa".into(), width: q * c });
        }
        files.push(ColumnFile { name: "theta".into(), width: spec.phi.n_params() });
        files.push(ColumnFile { name: "rho".into(), width: 1 + max_h });
        if spec.is_matrix_t() {
            files.push(ColumnFile { name: "varsigma_check".into(), width: 1 });
        }
        if m > 0 {
            files.push(ColumnFile { name: "pac".into(), width: 1 + m * max_h * max_h });
            files.push(ColumnFile { name: "eta_tail".into(), width: 1 + m * max_h });
        }
        let manifest = Manifest {
            format: FORMAT_VERSION,
            spec_digest: spec.digest(),
            data_digest: data.digest(),
            spec: spec.clone(),
            config: config.clone(),
            p,
            n: data.n(),
            c,
            q,
            m,
            max_h,
            n_draws: draws.len(),
            draw_iterations: draws.iter().map(|d| d.iteration).collect(),
            h_trajectory: draws.iter().map(Draw::h).collect(),
            events,
            acceptance,
            final_scales,
            partial: failure.is_some(),
            failure,
            files,
        };
        DrawStore { manifest, draws }
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    fn row(&self, name: &str, d: &Draw) -> Vec<f64> {
        let max_h = self.manifest.max_h;
        let padded = |m: &DMatrix<f64>, rows: usize, out: &mut Vec<f64>| {
            for j in 0..max_h {
                for i in 0..rows {
                    out.push(if j < m.ncols() && i < m.nrows() { m[(i, j)] } else { 0.0 });
                }
            }
        };
        let mut out = Vec::new();
        match name {
            "lambda" => {
                out.push(d.h() as f64);
                padded(&d.lambda, self.manifest.p, &mut out);
            }
            "sigma2" => out.extend(d.sigma2.iter()),
            "beta" => out.extend(d.beta.iter()),
            "kappa" => out.extend(d.kappa.as_ref().expect("hierarchical draw").iter()),
            "theta" => out.extend(&d.theta),
            "rho" => {
                out.push(d.h() as f64);
                out.extend(&d.rho);
                out.resize(1 + max_h, 0.0);
            }
            "varsigma_check" => out.push(d.varsigma_check.expect("matrix-t draw")),
            "pac" => {
                out.push(d.h() as f64);
                for a in d.pac.as_ref().expect("dynamic draw") {
                    padded(a, max_h, &mut out);
                }
            }
            "eta_tail" => {
                out.push(d.h() as f64);
                let tail = d.eta_tail.as_ref().expect("dynamic draw");
                for i in 0..self.manifest.m {
                    for j in 0..max_h {
                        out.push(if j < tail.ncols() { tail[(i, j)] } else { 0.0 });
                    }
                }
            }
            other => unreachable!("unknown column file {other}"),
        }
        out
    }

    /// Write the manifest and column files into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
        for file in &self.manifest.files {
            let mut bytes = Vec::with_capacity(8 * file.width * self.draws.len());
            for d in &self.draws {
                let row = self.row(&file.name, d);
                debug_assert_eq!(row.len(), file.width, "{}", file.name);
                for v in row {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            fs::write(dir.join(format!("{}.f64", file.name)), bytes)?;
        }
        Ok(())
    }

    pub fn read_manifest(dir: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        if manifest.format != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported store format {}", manifest.format)));
        }
        Ok(manifest)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest = Self::read_manifest(dir)?;
        let n = manifest.n_draws;
        let mut columns = std::collections::HashMap::new();
        for file in &manifest.files {
            let path = dir.join(format!("{}.f64", file.name));
            let bytes = fs::read(&path)?;
            if bytes.len() != 8 * file.width * n {
                return Err(Error::Parse(format!(
                    "{}: expected {} values, found {} bytes",
                    path.display(),
                    file.width * n,
                    bytes.len()
                )));
            }
            let values: Vec<f64> =
                bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            columns.insert(file.name.clone(), (file.width, values));
        }
        let row = |name: &str, i: usize| -> Option<&[f64]> {
            columns.get(name).map(|(w, v)| &v[i * w..(i + 1) * w])
        };
        let p = manifest.p;
        let m = manifest.m;
        let max_h = manifest.max_h;
        let bad = |what: &str| Error::Parse(format!("corrupt {what} column in {}", dir.display()));
        let mut draws = Vec::with_capacity(n);
        for i in 0..n {
            let lam = row("lambda", i).ok_or_else(|| bad("lambda"))?;
            let h = lam[0] as usize;
            if h > max_h || lam[0] != h as f64 {
                return Err(bad("lambda"));
            }
            let lambda = DMatrix::from_fn(p, h, |r, c| lam[1 + c * p + r]);
            let sigma2 = DVector::from_row_slice(row("sigma2", i).ok_or_else(|| bad("sigma2"))?);
            let beta = DMatrix::from_column_slice(p, manifest.c, row("beta", i).ok_or_else(|| bad("beta"))?);
            let kappa = row("kappa", i).map(|v| DMatrix::from_column_slice(manifest.q, manifest.c, v));
            let theta = row("theta", i).ok_or_else(|| bad("theta"))?.to_vec();
            let rho_row = row("rho", i).ok_or_else(|| bad("rho"))?;
            let rho = rho_row[1..1 + h].to_vec();
            let varsigma_check = row("varsigma_check", i).map(|v| v[0]);
            let pac = row("pac", i).map(|v| {
                (0..m)
                    .map(|l| DMatrix::from_fn(h, h, |r, c| v[1 + l * max_h * max_h + c * max_h + r]))
                    .collect()
            });
            let eta_tail = row("eta_tail", i).map(|v| DMatrix::from_fn(m, h, |r, c| v[1 + r * max_h + c]));
            draws.push(Draw {
                iteration: manifest.draw_iterations[i],
                lambda,
                sigma2,
                beta,
                kappa,
                theta,
                rho,
                varsigma_check,
                pac,
                eta_tail,
            });
        }
        Ok(DrawStore { manifest, draws })
    }
}
