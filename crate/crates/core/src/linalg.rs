//! Small dense helpers for Hermitian matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::Complex64;

/// Largest `|H - Hᴴ|` entry.
pub fn hermitian_defect(h: &DMatrix<Complex64>) -> f64 {
    let n = h.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Real symmetric embedding `[[Re H, -Im H], [Im H, Re H]]` of a Hermitian matrix.
///
/// The embedding is PSD exactly when `H` is, and its spectrum is that of `H`
/// with every eigenvalue repeated twice.
pub fn hermitian_embed(h: &DMatrix<Complex64>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Domain(format!(
            "expected a square matrix, got {}x{}",
            n,
            h.ncols()
        )));
    }
    let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if hermitian_defect(h) > 1e-12 * scale {
        return Err(Error::Domain("matrix is not Hermitian".into()));
    }
    let mut e = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            e[(i, j)] = z.re;
            e[(n + i, n + j)] = z.re;
            e[(n + i, j)] = z.im;
            e[(i, n + j)] = -z.im;
        }
    }
    Ok(e)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(h: &DMatrix<Complex64>) -> (DVector<f64>, DMatrix<Complex64>) {
    let eig = SymmetricEigen::new(h.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Top eigenpair of a Hermitian matrix together with the gap to the next eigenvalue.
#[derive(Debug, Clone)]
pub struct TopEigen {
    pub value: f64,
    pub vector: DVector<Complex64>,
    pub gap: f64,
}

pub fn top_eigen(h: &DMatrix<Complex64>) -> TopEigen {
    let (values, vectors) = hermitian_eigen(h);
    let n = values.len();
    let value = values[n - 1];
    let gap = if n > 1 { value - values[n - 2] } else { f64::INFINITY };
    let mut vector: DVector<Complex64> = vectors.column(n - 1).into_owned();
    let norm = vector.norm();
    if norm > 0.0 {
        vector /= Complex64::new(norm, 0.0);
    }
    TopEigen { value, vector, gap }
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_embeds_to_identity() {
        let e = hermitian_embed(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(e, DMatrix::identity(4, 4));
    }

    #[test]
    fn rank_one_example_spectrum() {
        let h = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)]);
        let e = hermitian_embed(&h).unwrap();
        let mut eig: Vec<f64> = SymmetricEigen::new(e).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        for (got, want) in eig.iter().zip([0.0, 0.0, 2.0, 2.0]) {
            assert!((got - want).abs() < 1e-12, "{eig:?}");
        }
    }

    #[test]
    fn non_hermitian_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        assert!(matches!(hermitian_embed(&h), Err(Error::Domain(_))));
        let rect = DMatrix::from_element(2, 3, c(0.0, 0.0));
        assert!(hermitian_embed(&rect).is_err());
    }

    fn random_hermitian(n: usize, seed: &[f64]) -> DMatrix<Complex64> {
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let k = (i * n + j) * 2;
                b[(i, j)] = c(seed[k % seed.len()], seed[(k + 1) % seed.len()]);
            }
        }
        &b * b.adjoint()
    }

    proptest! {
        #[test]
        fn embedding_doubles_the_spectrum(
            n in 1usize..6,
            seed in proptest::collection::vec(-1.0f64..1.0, 72),
        ) {
            let h = random_hermitian(n, &seed);
            let (vals, _) = hermitian_eigen(&h);
            let e = hermitian_embed(&h).unwrap();
            let mut emb: Vec<f64> = SymmetricEigen::new(e).eigenvalues.iter().copied().collect();
            emb.sort_by(f64::total_cmp);
            for i in 0..n {
                prop_assert!((emb[2 * i] - vals[i]).abs() < 1e-8);
                prop_assert!((emb[2 * i + 1] - vals[i]).abs() < 1e-8);
            }
            prop_assert!(emb[0] >= -1e-10);
        }
    }
}
