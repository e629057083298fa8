//! Dense reference computations shared by the integration tests.

#![allow(dead_code)]

use monofbf::autodiff::DifferentiableMap;
use monofbf::{Image, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_image(seed: u64, h: usize, w: usize, lo: f64, hi: f64) -> Image {
    let mut r = rng(seed);
    Image::from_fn(h, w, |_, _| r.random_range(lo..hi))
}

pub fn gaussian_tensor(seed: u64, shape: &[usize]) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect(),
    )
    .unwrap()
}

/// Column `j` is `J e_j`.
pub fn dense_jacobian(map: &(impl DifferentiableMap + ?Sized), x: &Tensor) -> DMatrix<f64> {
    let n = x.numel();
    let mut j = DMatrix::zeros(n, n);
    let mut e = Tensor::zeros(x.shape());
    for c in 0..n {
        e.as_mut_slice()[c] = 1.0;
        let col = map.jvp(x, &e).unwrap();
        j.column_mut(c).copy_from_slice(col.as_slice());
        e.as_mut_slice()[c] = 0.0;
    }
    j
}

/// Row `i` is `(J^T e_i)^T`, assembled from VJPs only.
pub fn dense_jacobian_from_vjp(
    map: &(impl DifferentiableMap + ?Sized),
    x: &Tensor,
) -> DMatrix<f64> {
    let n = x.numel();
    let mut j = DMatrix::zeros(n, n);
    let mut e = Tensor::zeros(x.shape());
    for r in 0..n {
        e.as_mut_slice()[r] = 1.0;
        let row = map.vjp(x, &e).unwrap();
        j.row_mut(r)
            .copy_from(&DVector::from_column_slice(row.as_slice()).transpose());
        e.as_mut_slice()[r] = 0.0;
    }
    j
}

/// Eigenvalues of `(J + J^T)/2`, ascending.
pub fn sym_eigenvalues(j: &DMatrix<f64>) -> Vec<f64> {
    let s = (j + j.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn sym_lambda_min(j: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(j)[0]
}

pub fn spectral_radius(ev: &[f64]) -> f64 {
    ev.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Matrix of `x ↦ k ⊛ x` (periodic) on an `h × w` grid, built entry by
/// entry from the convolution sum.
pub fn conv_matrix(k: &monofbf::Kernel, h: usize, w: usize) -> DMatrix<f64> {
    let d = k.size();
    let r = (d / 2) as isize;
    let mut m = DMatrix::zeros(h * w, h * w);
    for i in 0..h {
        for j in 0..w {
            for a in 0..d {
                for b in 0..d {
                    let si = (i as isize - a as isize + r).rem_euclid(h as isize) as usize;
                    let sj = (j as isize - b as isize + r).rem_euclid(w as isize) as usize;
                    m[(i * w + j, si * w + sj)] += k.as_slice()[a * d + b];
                }
            }
        }
    }
    m
}
