//! Forward-mode derivatives for small dense matrix expressions. A `DualMat`
//! carries a value and one tangent matrix per input direction, so a single
//! evaluation yields the full directional-derivative vector of any scalar
//! built from it.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, sym_eigen, symmetrize};

#[derive(Clone, Debug)]
pub struct DualMat {
    pub v: DMatrix<f64>,
    pub d: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualScalar {
    pub v: f64,
    pub d: Vec<f64>,
}

impl DualScalar {
    pub fn constant(v: f64, n_dir: usize) -> Self {
        DualScalar { v, d: vec![0.0; n_dir] }
    }

    pub fn scale(&self, s: f64) -> Self {
        DualScalar { v: self.v * s, d: self.d.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, o: &DualScalar) -> Self {
        DualScalar { v: self.v + o.v, d: self.d.iter().zip(&o.d).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &DualScalar) -> Self {
        self.add(&o.scale(-1.0))
    }
}

/// Scalar functions applied through the spectrum of a symmetric positive
/// definite matrix.
#[derive(Clone, Copy, Debug)]
enum SymFn {
    Sqrt,
    InvSqrt,
}

impl DualMat {
    pub fn constant(v: DMatrix<f64>, n_dir: usize) -> Self {
        let (r, c) = v.shape();
        DualMat { v, d: vec![DMatrix::zeros(r, c); n_dir] }
    }

    pub fn identity(k: usize, n_dir: usize) -> Self {
        Self::constant(DMatrix::identity(k, k), n_dir)
    }

    /// A matrix whose tangent in direction `dir` is the unit matrix at
    /// `(i, j)`, for each listed `(dir, i, j)` seed.
    pub fn seeded(v: DMatrix<f64>, n_dir: usize, seeds: &[(usize, usize, usize)]) -> Self {
        let mut out = Self::constant(v, n_dir);
        for &(dir, i, j) in seeds {
            out.d[dir][(i, j)] = 1.0;
        }
        out
    }

    pub fn n_dir(&self) -> usize {
        self.d.len()
    }

    pub fn transpose(&self) -> Self {
        DualMat { v: self.v.transpose(), d: self.d.iter().map(|m| m.transpose()).collect() }
    }

    pub fn scale(&self, s: f64) -> Self {
        DualMat { v: &self.v * s, d: self.d.iter().map(|m| m * s).collect() }
    }

    pub fn symmetrize(&mut self) {
        symmetrize(&mut self.v);
        for m in &mut self.d {
            symmetrize(m);
        }
    }

    pub fn trace(&self) -> DualScalar {
        DualScalar { v: self.v.trace(), d: self.d.iter().map(|m| m.trace()).collect() }
    }

    /// General inverse, `d(X⁻¹) = −X⁻¹ dX X⁻¹`.
    pub fn inverse(&self, block: &str) -> Result<Self> {
        let inv = self
            .v
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numerical(block, "singular matrix"))?;
        let d = self.d.iter().map(|m| -(&inv * m * &inv)).collect();
        Ok(DualMat { v: inv, d })
    }

    /// `log|X|` for symmetric positive definite `X`.
    pub fn logdet_spd(&self, block: &str) -> Result<DualScalar> {
        let ch = cholesky(&self.v, block)?;
        let v = 2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let inv = ch.inverse();
        let d = self.d.iter().map(|m| inv.component_mul(&m.transpose()).sum()).collect();
        Ok(DualScalar { v, d })
    }

    /// `xᵀX⁻¹x` for symmetric positive definite `X` and constant `x`.
    pub fn quad_inv(&self, x: &DVector<f64>, block: &str) -> Result<DualScalar> {
        let w = cholesky(&self.v, block)?.solve(x);
        let v = x.dot(&w);
        let d = self.d.iter().map(|m| -w.dot(&(m * &w))).collect();
        Ok(DualScalar { v, d })
    }

    pub fn sym_sqrt(&self, block: &str) -> Result<Self> {
        self.sym_apply(SymFn::Sqrt, block)
    }

    pub fn sym_inv_sqrt(&self, block: &str) -> Result<Self> {
        self.sym_apply(SymFn::InvSqrt, block)
    }

    /// Daleckii–Krein: `d f(X) = V (F ∘ Vᵀ dX V) Vᵀ` with the divided
    /// differences `F` written in cancellation-free closed forms.
    fn sym_apply(&self, f: SymFn, block: &str) -> Result<Self> {
        let eig = sym_eigen(&self.v);
        let lam = &eig.eigenvalues;
        if let Some(bad) = lam.iter().find(|l| !(**l > 0.0)) {
            return Err(Error::numerical(block, format!("matrix root of a non-positive-definite matrix (eigenvalue {bad:e})")));
        }
        let r: Vec<f64> = lam.iter().map(|l| l.sqrt()).collect();
        let k = r.len();
        let vals = DVector::from_iterator(
            k,
            r.iter().map(|s| match f {
                SymFn::Sqrt => *s,
                SymFn::InvSqrt => 1.0 / s,
            }),
        );
        let divided = DMatrix::from_fn(k, k, |i, j| match f {
            SymFn::Sqrt => 1.0 / (r[i] + r[j]),
            SymFn::InvSqrt => -1.0 / (r[i] * r[j] * (r[i] + r[j])),
        });
        let vm = &eig.eigenvectors;
        let vt = vm.transpose();
        let mut v = vm * DMatrix::from_diagonal(&vals) * &vt;
        symmetrize(&mut v);
        let d = self
            .d
            .iter()
            .map(|dm| {
                let inner = (&vt * dm * vm).component_mul(&divided);
                let mut out = vm * inner * &vt;
                symmetrize(&mut out);
                out
            })
            .collect();
        Ok(DualMat { v, d })
    }
}

impl<'a> Add<&'a DualMat> for &'a DualMat {
    type Output = DualMat;
    fn add(self, o: &DualMat) -> DualMat {
        DualMat { v: &self.v + &o.v, d: self.d.iter().zip(&o.d).map(|(a, b)| a + b).collect() }
    }
}

impl<'a> Sub<&'a DualMat> for &'a DualMat {
    type Output = DualMat;
    fn sub(self, o: &DualMat) -> DualMat {
        DualMat { v: &self.v - &o.v, d: self.d.iter().zip(&o.d).map(|(a, b)| a - b).collect() }
    }
}

impl<'a> Mul<&'a DualMat> for &'a DualMat {
    type Output = DualMat;
    fn mul(self, o: &DualMat) -> DualMat {
        let d = self
            .d
            .iter()
            .zip(&o.d)
            .map(|(da, db)| da * &o.v + &self.v * db)
            .collect();
        DualMat { v: &self.v * &o.v, d }
    }
}

impl<'a> Mul<&'a DMatrix<f64>> for &'a DualMat {
    type Output = DualMat;
    fn mul(self, o: &DMatrix<f64>) -> DualMat {
        DualMat { v: &self.v * o, d: self.d.iter().map(|m| m * o).collect() }
    }
}

impl<'a> Mul<&'a DualMat> for &'a DMatrix<f64> {
    type Output = DualMat;
    fn mul(self, o: &DualMat) -> DualMat {
        DualMat { v: self * &o.v, d: o.d.iter().map(|m| self * m).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_apply;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(k, k) * 0.3
    }

    /// Check the tangent of `f` in a random symmetric direction against a
    /// central difference of its value.
    fn check(f: impl Fn(&DualMat) -> DualMat, x: &DMatrix<f64>, dir: &DMatrix<f64>) {
        let dual = DualMat { v: x.clone(), d: vec![dir.clone()] };
        let got = f(&dual).d[0].clone();
        let h = 1e-6;
        let plus = f(&DualMat::constant(x + dir * h, 1)).v;
        let minus = f(&DualMat::constant(x - dir * h, 1)).v;
        let fd = (plus - minus) / (2.0 * h);
        assert!((&got - &fd).amax() < 1e-6 * (1.0 + fd.amax()), "{got} vs {fd}");
    }

    #[test]
    fn matrix_function_tangents_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [1, 2, 4] {
            let x = random_spd(k, &mut rng);
            let mut dir = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() - 0.5);
            symmetrize(&mut dir);
            check(|m| m.sym_sqrt("t").unwrap(), &x, &dir);
            check(|m| m.sym_inv_sqrt("t").unwrap(), &x, &dir);
            check(|m| m.inverse("t").unwrap(), &x, &dir);
            check(|m| &(m * m) - m, &x, &dir);
            let root = DualMat::constant(x.clone(), 0).sym_sqrt("t").unwrap().v;
            assert!((root - sym_apply(&x, f64::sqrt)).amax() < 1e-12);
        }
    }

    #[test]
    fn repeated_eigenvalues_are_handled() {
        let x = DMatrix::identity(3, 3) * 4.0;
        let mut dir = DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
        symmetrize(&mut dir);
        check(|m| m.sym_sqrt("t").unwrap(), &x, &dir);
        check(|m| m.sym_inv_sqrt("t").unwrap(), &x, &dir);
    }

    #[test]
    fn scalar_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_spd(3, &mut rng);
        let mut dir = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>());
        symmetrize(&mut dir);
        let s = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let dual = DualMat { v: x.clone(), d: vec![dir.clone()] };
        let h = 1e-6;
        let ld = |m: &DMatrix<f64>| DualMat::constant(m.clone(), 0).logdet_spd("t").unwrap().v;
        let qf = |m: &DMatrix<f64>| DualMat::constant(m.clone(), 0).quad_inv(&s, "t").unwrap().v;
        let fd_ld = (ld(&(&x + &dir * h)) - ld(&(&x - &dir * h))) / (2.0 * h);
        let fd_qf = (qf(&(&x + &dir * h)) - qf(&(&x - &dir * h))) / (2.0 * h);
        assert!((dual.logdet_spd("t").unwrap().d[0] - fd_ld).abs() < 1e-6);
        assert!((dual.quad_inv(&s, "t").unwrap().d[0] - fd_qf).abs() < 1e-6 * (1.0 + fd_qf.abs()));
    }

}
