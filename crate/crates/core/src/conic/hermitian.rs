//! Hermitian matrix blocks and their real symmetric embedding.

use num_complex::Complex64;
use thiserror::Error;

use super::expr::{ComplexExpr, LinExpr};
use super::program::{psd_rows, svec_index, Cone, ConeConstraint};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HermitianError {
    #[error("entry ({0}, {1}) is outside a block of side {2}")]
    OutOfRange(usize, usize, usize),
    #[error("diagonal entry {0} must be real")]
    ComplexDiagonal(usize),
    #[error("entry ({0}, {1}) was never set")]
    MissingEntry(usize, usize),
}

/// Hermitian matrix whose entries are affine in the decision variables.
/// Only the lower triangle is stored; `(i, j)` for `i < j` is the conjugate of
/// `(j, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianBlock {
    side: usize,
    lower: Vec<Option<ComplexExpr>>,
}

impl HermitianBlock {
    pub fn new(side: usize) -> Self {
        HermitianBlock { side, lower: vec![None; side * (side + 1) / 2] }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Sets entry `(i, j)`; the mirrored entry becomes its conjugate.
    pub fn set(&mut self, i: usize, j: usize, value: ComplexExpr) -> Result<(), HermitianError> {
        if i >= self.side || j >= self.side {
            return Err(HermitianError::OutOfRange(i, j, self.side));
        }
        if i == j && !value.im.is_constant() || i == j && value.im.constant != 0.0 {
            return Err(HermitianError::ComplexDiagonal(i));
        }
        let (idx, v) = if i >= j { (svec_index(i, j), value) } else { (svec_index(j, i), value.conj()) };
        self.lower[idx] = Some(v);
        Ok(())
    }

    pub fn set_real(&mut self, i: usize, j: usize, value: LinExpr) -> Result<(), HermitianError> {
        self.set(i, j, ComplexExpr::real(value))
    }

    pub fn get(&self, i: usize, j: usize) -> Result<ComplexExpr, HermitianError> {
        if i >= self.side || j >= self.side {
            return Err(HermitianError::OutOfRange(i, j, self.side));
        }
        let (idx, flip) = if i >= j { (svec_index(i, j), false) } else { (svec_index(j, i), true) };
        let e = self.lower[idx].clone().ok_or(HermitianError::MissingEntry(i.max(j), i.min(j)))?;
        Ok(if flip { e.conj() } else { e })
    }

    pub fn is_set(&self, i: usize, j: usize) -> bool {
        let idx = if i >= j { svec_index(i, j) } else { svec_index(j, i) };
        self.lower.get(idx).is_some_and(|e| e.is_some())
    }

    /// Principal submatrix on `indices` (in the given order).
    pub fn principal(&self, indices: &[usize]) -> Result<HermitianBlock, HermitianError> {
        let mut sub = HermitianBlock::new(indices.len());
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate().take(a + 1) {
                sub.set(a, b, self.get(i, j)?)?;
            }
        }
        Ok(sub)
    }

    /// Numeric value of the block at `x`.
    pub fn value(&self, x: &[f64]) -> Result<Vec<Vec<Complex64>>, HermitianError> {
        let n = self.side;
        let mut m = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = self.get(i, j)?.eval(x);
            }
        }
        Ok(m)
    }
}

/// Real symmetric embedding `[[Re M, -Im M], [Im M, Re M]]` of a Hermitian
/// block as a PSD constraint of side `2 * side`. The embedding is PSD iff `M`
/// is, and every eigenvalue of `M` appears twice in it.
pub fn embed_hermitian_psd(block: &HermitianBlock, label: impl Into<String>) -> Result<ConeConstraint, HermitianError> {
    let n = block.side();
    let mut err = None;
    let mut entry = |p: usize, q: usize| -> LinExpr {
        // p >= q inside the 2n x 2n matrix
        let res = match (p < n, q < n) {
            (true, true) => block.get(p, q).map(|e| e.re),
            (false, false) => block.get(p - n, q - n).map(|e| e.re),
            (false, true) => {
                let (i, j) = (p - n, q);
                if i == j {
                    Ok(LinExpr::zero())
                } else {
                    block.get(i, j).map(|e| e.im)
                }
            }
            (true, false) => unreachable!("lower triangle only"),
        };
        res.unwrap_or_else(|e| {
            err.get_or_insert(e);
            LinExpr::zero()
        })
    };
    let rows = psd_rows(2 * n, &mut entry);
    if let Some(e) = err {
        return Err(e);
    }
    Ok(ConeConstraint { cone: Cone::Psd(2 * n), rows, label: label.into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn fixed(entries: &[(usize, usize, Complex64)], side: usize) -> HermitianBlock {
        let mut b = HermitianBlock::new(side);
        for &(i, j, v) in entries {
            b.set(i, j, ComplexExpr::constant(v)).unwrap();
        }
        b
    }

    fn eigenvalues(c: &ConeConstraint) -> Vec<f64> {
        let m = c.matrix_at(&[]).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    #[test]
    fn scalar_block_embeds_as_diagonal_pair() {
        let b = fixed(&[(0, 0, Complex64::new(0.7, 0.0))], 1);
        let c = embed_hermitian_psd(&b, "s").unwrap();
        assert_eq!(c.cone, Cone::Psd(2));
        let m = c.matrix_at(&[]).unwrap();
        assert_eq!(m[(0, 0)], 0.7);
        assert_eq!(m[(1, 1)], 0.7);
        assert_eq!(m[(1, 0)], 0.0);
    }

    #[test]
    fn imaginary_offdiagonal_example() {
        // M = [[1, j], [-j, 1]]
        let one = Complex64::new(1.0, 0.0);
        let b = fixed(&[(0, 0, one), (1, 1, one), (1, 0, Complex64::new(0.0, -1.0))], 2);
        let ev = eigenvalues(&embed_hermitian_psd(&b, "m").unwrap());
        for (got, want) in ev.iter().zip([0.0, 0.0, 2.0, 2.0]) {
            assert!((got - want).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn indefinite_real_block_is_rejected() {
        let one = Complex64::new(1.0, 0.0);
        let b = fixed(&[(0, 0, one), (1, 1, one), (1, 0, Complex64::new(2.0, 0.0))], 2);
        let c = embed_hermitian_psd(&b, "m").unwrap();
        assert!((c.violation(&[]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_entries_and_complex_diagonal_are_errors() {
        let mut b = HermitianBlock::new(2);
        assert_eq!(
            b.set(0, 0, ComplexExpr::constant(Complex64::new(1.0, 1.0))),
            Err(HermitianError::ComplexDiagonal(0))
        );
        b.set_real(0, 0, LinExpr::constant(1.0)).unwrap();
        b.set_real(1, 1, LinExpr::constant(1.0)).unwrap();
        assert_eq!(embed_hermitian_psd(&b, "x").unwrap_err(), HermitianError::MissingEntry(1, 0));
        assert_eq!(b.set_real(2, 0, LinExpr::zero()), Err(HermitianError::OutOfRange(2, 0, 2)));
    }

    #[test]
    fn upper_entries_are_conjugated() {
        let mut b = HermitianBlock::new(2);
        b.set(0, 1, ComplexExpr::constant(Complex64::new(0.5, 0.25))).unwrap();
        assert_eq!(b.get(1, 0).unwrap().eval(&[]), Complex64::new(0.5, -0.25));
    }
}
