//! Post-processing to the positive lower-trapezoidal parameterization.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::stationary_var::{rotate_expansion, ExpansionPieces};

/// A draw mapped to `Λ = Λ̃Q` with `Λ̃` lower trapezoidal and positive on
/// its diagonal. The other pieces are transformed consistently.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentifiedDraw {
    pub lambda: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub eta: Option<DMatrix<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
    pub pi: Option<DMatrix<f64>>,
    pub a: Vec<DMatrix<f64>>,
    /// A diagonal entry of `Λ̃` vanished to working precision, so its sign
    /// (and the matching row of `Q`) is arbitrary.
    pub rank_deficient: bool,
}

/// LQ factorization of `Λ` from the QR factorization of `Λᵀ`, with rows of
/// `Q` flipped so the diagonal of `Λ̃` is positive. `pieces.lambda` is
/// ignored; its other members are carried to the identified basis.
pub fn identify_draw(lambda: &DMatrix<f64>, pieces: &ExpansionPieces) -> Result<IdentifiedDraw> {
    let (p, k) = lambda.shape();
    if k == 0 {
        return Err(Error::Argument("loadings have no columns".into()));
    }
    if p < k {
        return Err(Error::Argument(format!("cannot identify {k} factors from {p} variables")));
    }
    // Λᵀ = Q₁R, so Λ = RᵀQ₁ᵀ.
    let (q1, r) = lambda.transpose().qr().unpack();
    let mut l = r.transpose();
    let mut q = q1.transpose();
    let scale = lambda.norm();
    let mut rank_deficient = false;
    for j in 0..k {
        let d = l[(j, j)];
        if d.abs() <= 1e-12 * scale || scale == 0.0 {
            rank_deficient = true;
        }
        if d < 0.0 {
            l.column_mut(j).neg_mut();
            q.row_mut(j).neg_mut();
        }
    }
    let rotated = rotate_expansion(
        &q.transpose(),
        &ExpansionPieces { lambda: None, ..pieces.clone() },
    )?;
    Ok(IdentifiedDraw {
        lambda: l,
        q,
        eta: rotated.eta,
        gamma: rotated.gamma,
        pi: rotated.pi,
        a: rotated.a,
        rank_deficient,
    })
}
