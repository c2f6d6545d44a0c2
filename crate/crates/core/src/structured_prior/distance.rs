//! Generalized distances between variables: a projection-model distance on
//! per-variable covariates plus any number of precomputed metrics, each with
//! its own length-scale.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    /// p×c covariate coordinates, one row per variable.
    pub coordinates: Option<DMatrix<f64>>,
    /// Precomputed p×p metrics (e.g. phylogenetic distances).
    pub metrics: Vec<DMatrix<f64>>,
}

impl DistanceSpec {
    pub fn new(coordinates: Option<DMatrix<f64>>, metrics: Vec<DMatrix<f64>>) -> Result<Self> {
        let labels = |n: usize| (0..n).map(|i| format!("#{i}")).collect::<Vec<_>>();
        for m in &metrics {
            validate_metric(m, &labels(m.nrows()))?;
        }
        if let Some(c) = &coordinates {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("non-finite covariate coordinate".into()));
            }
        }
        if coordinates.is_none() && metrics.is_empty() {
            return Err(Error::Argument("distance spec needs covariates or a metric".into()));
        }
        Ok(DistanceSpec { coordinates, metrics })
    }

    /// A single metric scaled by one global length-scale: `φᵢⱼ = exp(−dᵢⱼ/ϑ)`.
    pub fn single_metric(metric: DMatrix<f64>) -> Result<Self> {
        Self::new(None, vec![metric])
    }

    pub(crate) fn check_dim(&self, p: usize) -> Result<()> {
        if let Some(c) = &self.coordinates {
            if c.nrows() != p {
                return Err(Error::Argument(format!("covariate rows {} != p = {p}", c.nrows())));
            }
        }
        for m in &self.metrics {
            if m.nrows() != p || m.ncols() != p {
                return Err(Error::Argument(format!("metric is {}x{}, expected {p}x{p}", m.nrows(), m.ncols())));
            }
        }
        Ok(())
    }

    pub fn n_covariates(&self) -> usize {
        self.coordinates.as_ref().map_or(0, |c| c.ncols())
    }

    /// Covariate length-scales first, then one per metric.
    pub fn n_length_scales(&self) -> usize {
        self.n_covariates() + self.metrics.len()
    }

    pub(crate) fn distance(&self, length_scales: &[f64], i: usize, j: usize) -> f64 {
        let c = self.n_covariates();
        let mut d = 0.0;
        if let Some(x) = &self.coordinates {
            let mut s = 0.0;
            for k in 0..c {
                let diff = (x[(i, k)] - x[(j, k)]) / length_scales[k];
                s += diff * diff;
            }
            d += s.sqrt();
        }
        for (m, scale) in self.metrics.iter().zip(&length_scales[c..]) {
            d += m[(i, j)] / scale;
        }
        d
    }
}

/// `√{(xᵢ − xⱼ)ᵀ Θ (xᵢ − xⱼ)}`.
pub fn projection_distance(xi: &DVector<f64>, xj: &DVector<f64>, theta: &DMatrix<f64>) -> Result<f64> {
    if xi.len() != xj.len() || theta.nrows() != xi.len() || theta.ncols() != xi.len() {
        return Err(Error::Argument(format!(
            "coordinate lengths {} and {} with Θ {}x{}",
            xi.len(),
            xj.len(),
            theta.nrows(),
            theta.ncols()
        )));
    }
    let diff = xi - xj;
    Ok(diff.dot(&(theta * &diff)).max(0.0).sqrt())
}

/// `dᵢⱼ = d_C,ij + Σ_m d_m,ij / ϑ_m` for the given length-scales.
pub fn combined_distance(spec: &DistanceSpec, length_scales: &[f64], i: usize, j: usize) -> Result<f64> {
    if length_scales.len() != spec.n_length_scales() {
        return Err(Error::Argument(format!(
            "expected {} length-scales, got {}",
            spec.n_length_scales(),
            length_scales.len()
        )));
    }
    if length_scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("length-scales must be positive".into()));
    }
    let p = spec
        .coordinates
        .as_ref()
        .map(|c| c.nrows())
        .or_else(|| spec.metrics.first().map(|m| m.nrows()))
        .unwrap_or(0);
    if i >= p || j >= p {
        return Err(Error::Argument(format!("index out of range for p = {p}")));
    }
    Ok(spec.distance(length_scales, i, j))
}

/// Check that `m` is a metric: square, finite, non-negative, symmetric, zero
/// diagonal, and satisfying the triangle inequality on all (small p) or 5000
/// seeded random (large p) index triples. Errors cite the offending labels.
pub fn validate_metric(m: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let p = m.nrows();
    if m.ncols() != p {
        return Err(Error::Data(format!("distance matrix is {}x{}", p, m.ncols())));
    }
    if labels.len() != p {
        return Err(Error::Data(format!("{} labels for a {p}x{p} distance matrix", labels.len())));
    }
    let scale = m.amax().max(1.0);
    let tol = 1e-9 * scale;
    for i in 0..p {
        if m[(i, i)] != 0.0 {
            return Err(Error::Data(format!(
                "distance ({}, {}) on the diagonal is {}, expected 0",
                labels[i], labels[i], m[(i, i)]
            )));
        }
        for j in 0..p {
            let v = m[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Data(format!(
                    "distance ({}, {}) = {v} is negative or non-finite",
                    labels[i], labels[j]
                )));
            }
            if (v - m[(j, i)]).abs() > tol {
                return Err(Error::Data(format!(
                    "distance ({}, {}) = {v} differs from ({}, {}) = {}",
                    labels[i], labels[j], labels[j], labels[i], m[(j, i)]
                )));
            }
        }
    }
    let check = |i: usize, j: usize, k: usize| -> Result<()> {
        if m[(i, k)] > m[(i, j)] + m[(j, k)] + tol {
            return Err(Error::Data(format!(
                "triangle inequality fails for ({}, {}, {})",
                labels[i], labels[j], labels[k]
            )));
        }
        Ok(())
    };
    if p <= 60 {
        for i in 0..p {
            for j in 0..p {
                for k in 0..p {
                    check(i, j, k)?;
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7e7a);
        for _ in 0..5000 {
            check(rng.random_range(0..p), rng.random_range(0..p), rng.random_range(0..p))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn projection_distance_examples() {
        let a = DVector::from_vec(vec![4.0, 6.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(projection_distance(&a, &b, &DMatrix::identity(2, 2)).unwrap(), 5.0);
        assert_eq!(projection_distance(&a, &a, &DMatrix::identity(2, 2)).unwrap(), 0.0);
        assert!(projection_distance(&a, &DVector::zeros(3), &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn diagonal_theta_matches_length_scale_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = DMatrix::from_fn(2, 4, |_, _| rng.random::<f64>() * 3.0 - 1.0);
            let scales: Vec<f64> = (0..4).map(|_| 0.2 + rng.random::<f64>()).collect();
            let theta = DMatrix::from_diagonal(&DVector::from_iterator(4, scales.iter().map(|s| 1.0 / (s * s))));
            let d1 = projection_distance(&x.row(0).transpose(), &x.row(1).transpose(), &theta).unwrap();
            let d2 = (0..4).map(|k| ((x[(0, k)] - x[(1, k)]) / scales[k]).powi(2)).sum::<f64>().sqrt();
            assert!((d1 - d2).abs() < 1e-12);
            let spec = DistanceSpec::new(Some(x.clone()), vec![]).unwrap();
            assert!((combined_distance(&spec, &scales, 0, 1).unwrap() - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn combined_distance_arithmetic_symmetry_and_triangle() {
        let metric = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let coords = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let spec = DistanceSpec::new(Some(coords), vec![metric]).unwrap();
        assert_eq!(combined_distance(&spec, &[1.0, 2.0], 0, 1).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = 12;
        let pts: Vec<(f64, f64)> = (0..p).map(|_| (rng.random(), rng.random())).collect();
        let metric = DMatrix::from_fn(p, p, |i, j| {
            ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt()
        });
        let coords = DMatrix::from_fn(p, 3, |_, _| rng.random::<f64>());
        let spec = DistanceSpec::new(Some(coords), vec![metric]).unwrap();
        let ls = [0.4, 1.3, 0.8, 0.5];
        for _ in 0..1000 {
            let (i, j, k) = (rng.random_range(0..p), rng.random_range(0..p), rng.random_range(0..p));
            let dij = combined_distance(&spec, &ls, i, j).unwrap();
            assert_eq!(dij, combined_distance(&spec, &ls, j, i).unwrap());
            let dik = combined_distance(&spec, &ls, i, k).unwrap();
            let djk = combined_distance(&spec, &ls, j, k).unwrap();
            assert!(dik <= dij + djk + 1e-12);
        }
        assert_eq!(combined_distance(&spec, &ls, 3, 3).unwrap(), 0.0);
    }

    #[test]
    fn invalid_metrics_are_rejected_with_labels() {
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        let err = validate_metric(&neg, &labels(2)).unwrap_err().to_string();
        assert!(err.contains("v0") && err.contains("v1"), "{err}");
        let tri = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0]);
        assert!(validate_metric(&tri, &labels(3)).is_err());
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        assert!(validate_metric(&diag, &labels(2)).is_err());
    }
}
