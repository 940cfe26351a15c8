//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::hilbert::{C64, ZERO};

pub(crate) type CMat = DMatrix<C64>;
pub(crate) type CVec = DVector<C64>;

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub(crate) fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// exp(−i s M) for Hermitian `m`.
pub(crate) fn unitary_exp(m: &CMat, s: f64) -> CMat {
    let eig = m.clone().symmetric_eigen();
    let q = &eig.eigenvectors;
    let phases = eig.eigenvalues.map(|l| C64::from_polar(1.0, -s * l));
    let mut scaled = q.clone();
    for (c, ph) in phases.iter().enumerate() {
        scaled.column_mut(c).apply(|z| *z *= *ph);
    }
    scaled * q.adjoint()
}

pub(crate) fn trace(m: &CMat) -> C64 {
    m.diagonal().sum()
}

/// Tr(A B) without forming the product.
pub(crate) fn trace_product(a: &CMat, b: &CMat) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub(crate) fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub(crate) fn min_eigenvalue(m: &CMat) -> f64 {
    hermitize(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ), column-stacking.
pub(crate) fn superop_sandwich(a: &CMat, b: &CMat) -> CMat {
    let k = a.nrows();
    let n = k * k;
    let mut s = CMat::zeros(n, n);
    for l in 0..k {
        for j in 0..k {
            let blr = b[(l, j)];
            if blr == ZERO {
                continue;
            }
            for kk in 0..k {
                for i in 0..k {
                    let v = a[(i, kk)];
                    if v != ZERO {
                        s[(i + k * j, kk + k * l)] += v * blr;
                    }
                }
            }
        }
    }
    s
}

pub(crate) fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub(crate) fn unvectorize(v: &CVec, k: usize) -> CMat {
    CMat::from_column_slice(k, k, v.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(k: usize, seed: f64) -> CMat {
        CMat::from_fn(k, k, |i, j| {
            C64::new(((i * 3 + j) as f64 * seed).sin(), ((i + 5 * j) as f64 * seed).cos())
        })
    }

    #[test]
    fn sandwich_matches_direct_product() {
        let (a, b, rho) = (sample(4, 0.7), sample(4, 1.3), sample(4, 2.1));
        let direct = &a * &rho * &b;
        let via = unvectorize(&(superop_sandwich(&a, &b) * vectorize(&rho)), 4);
        assert!((direct - via).camax() < 1e-12);
    }

    #[test]
    fn unitary_exp_matches_general_exp() {
        let m = hermitize(&sample(5, 0.4));
        let u = unitary_exp(&m, 0.3);
        let reference = (m * C64::new(0.0, -0.3)).exp();
        assert!((u - reference).camax() < 1e-12);
    }

    #[test]
    fn trace_product_matches() {
        let (a, b) = (sample(6, 0.2), sample(6, 0.9));
        assert!((trace_product(&a, &b) - trace(&(&a * &b))).norm() < 1e-12);
    }
}
