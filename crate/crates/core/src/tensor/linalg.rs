use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `[M, K] x [K, N] -> [M, N]`. Each output element accumulates over `k` in
/// increasing order starting from zero.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape(format!(
            "matmul expects rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); m * n];
    matmul_slices(a.data(), b.data(), m, k, n, &mut out);
    Tensor::from_vec(vec![m, n], out)
}

pub fn matmul_slices<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        row.iter_mut().for_each(|v| *v = T::zero());
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (c, &bkj) in row.iter_mut().zip(brow) {
                *c += aik * bkj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, d).unwrap()
    }

    #[test]
    fn identity_and_hand_product() {
        let i2 = t(&[2, 2], &[1., 0., 0., 1.]);
        let b = t(&[2, 2], &[5., 6., 7., 8.]);
        assert_eq!(matmul(&i2, &b).unwrap().data(), b.data());
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19., 22., 43., 50.]);
        let bad = matmul(&t(&[2, 3], &[0.; 6]), &t(&[2, 2], &[0.; 4]));
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn random_8x8_against_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = matmul(&t(&[8, 8], &a), &t(&[8, 8], &b)).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let expect: f64 = (0..8).map(|k| a[i * 8 + k] * b[k * 8 + j]).sum();
                assert!((c.data()[i * 8 + j] - expect).abs() <= 1e-12);
            }
        }
        let mut id = vec![0.0; 64];
        (0..8).for_each(|i| id[i * 9] = 1.0);
        let ai = matmul(&t(&[8, 8], &a), &t(&[8, 8], &id)).unwrap();
        assert_eq!(ai.data(), &a[..]);
    }
}
