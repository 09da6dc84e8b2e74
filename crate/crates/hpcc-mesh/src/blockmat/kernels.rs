//! Local block kernels: transpose-add, micro-tiled matrix multiplication and
//! the three triangular operations of the blocked LU factorization.
//!
//! All kernels use fixed loop orders so results are bitwise reproducible for
//! fixed inputs, independent of how blocks are distributed across ranks.

use super::{Block, Scalar};
use crate::error::{MeshError, Result};

fn check_same_size<S: Scalar>(blocks: &[&Block<S>]) -> Result<usize> {
    let size = blocks[0].size();
    if blocks.iter().any(|b| b.size() != size) {
        return Err(MeshError::Config("block shape mismatch".into()));
    }
    Ok(size)
}

/// `out[i][j] = b[i][j] + a[j][i]`, one addition per element in a fixed
/// order.
pub fn block_transpose_add<S: Scalar>(a: &Block<S>, b: &Block<S>) -> Result<Block<S>> {
    let size = check_same_size(&[a, b])?;
    let mut out = Block::zero(size);
    for i in 0..size {
        for j in 0..size {
            out[(i, j)] = b[(i, j)] + a[(j, i)];
        }
    }
    Ok(out)
}

fn matmul_tiled<S: Scalar, const SUB: bool>(
    c: &mut Block<S>,
    a: &Block<S>,
    b: &Block<S>,
    register_block: usize,
) -> Result<()> {
    let size = check_same_size(&[c, a, b])?;
    if register_block == 0 || size % register_block != 0 {
        return Err(MeshError::Config(format!(
            "register block {register_block} must divide block size {size}"
        )));
    }
    let nt = size / register_block;
    // k outermost over micro-tiles keeps the per-element accumulation order
    // ascending in k regardless of the tile walk.
    for kt in 0..nt {
        for it in 0..nt {
            for jt in 0..nt {
                for i in it * register_block..(it + 1) * register_block {
                    for k in kt * register_block..(kt + 1) * register_block {
                        let aik = a[(i, k)];
                        let brow = &b.data[k * size..k * size + size];
                        let crow = &mut c.data[i * size..i * size + size];
                        for j in jt * register_block..(jt + 1) * register_block {
                            if SUB {
                                crow[j] = crow[j] - aik * brow[j];
                            } else {
                                crow[j] = crow[j] + aik * brow[j];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// `c <- c - a * b`, micro-tiled with edge `register_block`.
pub fn block_matmul_sub<S: Scalar>(
    c: &mut Block<S>,
    a: &Block<S>,
    b: &Block<S>,
    register_block: usize,
) -> Result<()> {
    matmul_tiled::<S, true>(c, a, b, register_block)
}

/// `c <- c + a * b`, same tiling and accumulation order as
/// [`block_matmul_sub`].
pub fn block_matmul_add<S: Scalar>(
    c: &mut Block<S>,
    a: &Block<S>,
    b: &Block<S>,
    register_block: usize,
) -> Result<()> {
    matmul_tiled::<S, false>(c, a, b, register_block)
}

/// In-place Doolittle factorization without pivoting. On return the strict
/// lower triangle holds L (unit diagonal implicit) and the upper triangle
/// holds U.
pub fn block_lu_decompose<S: Scalar>(a: &mut Block<S>) -> Result<()> {
    let size = a.size();
    for k in 0..size {
        let pivot = a[(k, k)];
        if pivot == S::default() {
            return Err(MeshError::Numerical(format!(
                "zero pivot at position {k} of a diagonal block"
            )));
        }
        for i in k + 1..size {
            let lik = a[(i, k)] / pivot;
            a[(i, k)] = lik;
            for j in k + 1..size {
                a[(i, j)] = a[(i, j)] - lik * a[(k, j)];
            }
        }
    }
    Ok(())
}

/// `top <- L^-1 * top` by forward substitution with the unit-diagonal L of a
/// packed block.
pub fn block_top_update<S: Scalar>(lu: &Block<S>, top: &mut Block<S>) -> Result<()> {
    let size = check_same_size(&[lu, top])?;
    for k in 0..size {
        for i in k + 1..size {
            let lik = lu[(i, k)];
            for j in 0..size {
                top[(i, j)] = top[(i, j)] - lik * top[(k, j)];
            }
        }
    }
    Ok(())
}

/// Result of [`block_left_update`]: the updated left block stored
/// transposed, so the trailing matrix multiplication reads both operands
/// row-wise.
pub type BlockLeftUpdate<S> = Block<S>;

/// Solves `x * U = left` by back substitution on columns of the packed
/// block, returning `x` transposed.
pub fn block_left_update<S: Scalar>(lu: &Block<S>, left: &Block<S>) -> Result<BlockLeftUpdate<S>> {
    let size = check_same_size(&[lu, left])?;
    let mut x = Block::zero(size);
    for j in 0..size {
        let ujj = lu[(j, j)];
        if ujj == S::default() {
            return Err(MeshError::Numerical(format!(
                "zero diagonal of U at position {j}"
            )));
        }
        for r in 0..size {
            let mut acc = left[(r, j)];
            for m in 0..j {
                acc = acc - x[(r, m)] * lu[(m, j)];
            }
            x[(r, j)] = acc / ujj;
        }
    }
    Ok(x.transposed())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockmat::{uniform_block, SplitMix64};

    /// Naive triple-loop oracle, accumulation in f64.
    fn naive_matmul_sub(c: &Block<f32>, a: &Block<f32>, b: &Block<f32>) -> Block<f32> {
        let n = c.size();
        let mut out = c.clone();
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0f64;
                for k in 0..n {
                    acc += a[(i, k)] as f64 * b[(k, j)] as f64;
                }
                out[(i, j)] = (out[(i, j)] as f64 - acc) as f32;
            }
        }
        out
    }

    fn diag_dominant_block(size: usize, seed: u64) -> Block<f32> {
        let mut b = uniform_block::<f32>(seed, 99, 0, 0, size);
        for i in 0..size {
            let sum: f64 = (0..size)
                .filter(|&j| j != i)
                .map(|j| b[(i, j)] as f64)
                .sum();
            b[(i, i)] = (1.0 + sum) as f32;
        }
        b
    }

    #[test]
    fn transpose_add_hand_values() {
        let a = Block::<f32>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let z = Block::<f32>::zero(2);
        let t = block_transpose_add(&a, &z).unwrap();
        assert_eq!(t, Block::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]));

        let b = Block::<f32>::from_rows(&[&[10.0, 20.0], &[30.0, 40.0]]);
        assert_eq!(block_transpose_add(&z, &b).unwrap(), b);
        assert_eq!(
            block_transpose_add(&a, &b).unwrap(),
            Block::from_rows(&[&[11.0, 23.0], &[32.0, 44.0]])
        );
    }

    #[test]
    fn transpose_add_rejects_shape_mismatch() {
        let a = Block::<f32>::zero(2);
        let b = Block::<f32>::zero(4);
        assert!(block_transpose_add(&a, &b).is_err());
    }

    #[test]
    fn matmul_sub_identity_and_zero() {
        let b = uniform_block::<f32>(3, 0, 0, 0, 16);
        let i = Block::<f32>::identity(16);
        // c - I*b with c = b gives zero.
        let mut c = b.clone();
        block_matmul_sub(&mut c, &i, &b, 8).unwrap();
        assert!(c.max_abs() == 0.0);
        // Zero operands leave c unchanged.
        let mut c = b.clone();
        block_matmul_sub(&mut c, &Block::zero(16), &b, 8).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn matmul_sub_matches_naive_oracle() {
        let a = uniform_block::<f32>(11, 0, 0, 0, 16);
        let b = uniform_block::<f32>(11, 1, 0, 0, 16);
        let c0 = uniform_block::<f32>(11, 2, 0, 0, 16);
        let mut c = c0.clone();
        block_matmul_sub(&mut c, &a, &b, 8).unwrap();
        let oracle = naive_matmul_sub(&c0, &a, &b);
        for i in 0..16 {
            for j in 0..16 {
                let got = c[(i, j)];
                let want = oracle[(i, j)];
                assert!(
                    (got - want).abs() <= 1e-5 * want.abs().max(1.0),
                    "({i},{j}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn matmul_is_deterministic_across_tilings_of_same_config() {
        let a = uniform_block::<f32>(4, 0, 0, 0, 32);
        let b = uniform_block::<f32>(4, 1, 0, 0, 32);
        let mut c1 = uniform_block::<f32>(4, 2, 0, 0, 32);
        let mut c2 = c1.clone();
        block_matmul_sub(&mut c1, &a, &b, 8).unwrap();
        block_matmul_sub(&mut c2, &a, &b, 8).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn matmul_rejects_nondividing_register_block() {
        let mut c = Block::<f32>::zero(16);
        let a = Block::<f32>::zero(16);
        let b = Block::<f32>::zero(16);
        assert!(block_matmul_sub(&mut c, &a, &b, 5).is_err());
    }

    #[test]
    fn lu_hand_example() {
        let mut a = Block::<f32>::from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]);
        block_lu_decompose(&mut a).unwrap();
        assert_eq!(a[(0, 0)], 4.0);
        assert_eq!(a[(0, 1)], 1.0);
        assert_eq!(a[(1, 0)], 0.25);
        assert_eq!(a[(1, 1)], 2.75);
    }

    #[test]
    fn lu_of_identity_is_identity() {
        let mut a = Block::<f32>::identity(8);
        block_lu_decompose(&mut a).unwrap();
        assert_eq!(a, Block::identity(8));
    }

    #[test]
    fn lu_reports_zero_pivot() {
        let mut a = Block::<f32>::zero(2);
        assert!(matches!(
            block_lu_decompose(&mut a),
            Err(MeshError::Numerical(_))
        ));
    }

    #[test]
    fn lu_reconstruction_bound() {
        for seed in 0..4 {
            let a0 = diag_dominant_block(8, seed);
            let mut lu = a0.clone();
            block_lu_decompose(&mut lu).unwrap();
            // Reassemble L*U in f64 so only factorization error remains.
            let max_a = a0.max_abs();
            for i in 0..8 {
                for j in 0..8 {
                    let mut acc = 0.0f64;
                    for k in 0..=i.min(j) {
                        let l = if k == i { 1.0 } else { lu[(i, k)] as f64 };
                        acc += l * lu[(k, j)] as f64;
                    }
                    let err = (acc - a0[(i, j)] as f64).abs();
                    assert!(
                        err <= 8.0 * f32::EPSILON as f64 * max_a,
                        "seed {seed} ({i},{j}): err {err}"
                    );
                }
            }
        }
    }

    #[test]
    fn top_update_hand_example() {
        // L = [[1,0],[0.25,1]] packed together with U.
        let lu = Block::<f32>::from_rows(&[&[4.0, 1.0], &[0.25, 2.75]]);
        let mut top = Block::<f32>::from_rows(&[&[4.0, 0.0], &[1.0, 8.0]]);
        block_top_update(&lu, &mut top).unwrap();
        assert_eq!(top, Block::from_rows(&[&[4.0, 0.0], &[0.0, 8.0]]));

        let mut t2 = Block::<f32>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let id = Block::<f32>::identity(2);
        block_top_update(&id, &mut t2).unwrap();
        assert_eq!(t2, Block::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
    }

    #[test]
    fn top_update_reconstruction() {
        let lu_src = diag_dominant_block(8, 21);
        let mut lu = lu_src.clone();
        block_lu_decompose(&mut lu).unwrap();
        let top0 = uniform_block::<f32>(22, 0, 0, 0, 8);
        let mut top = top0.clone();
        block_top_update(&lu, &mut top).unwrap();
        // L * result reproduces the original block.
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = top[(i, j)] as f64;
                for k in 0..i {
                    acc += lu[(i, k)] as f64 * top[(k, j)] as f64;
                }
                let want = top0[(i, j)] as f64;
                assert!((acc - want).abs() <= 4.0 * f32::EPSILON as f64 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn left_update_hand_example() {
        let lu = Block::<f32>::from_rows(&[&[4.0, 1.0], &[0.25, 2.75]]);
        let left = Block::<f32>::from_rows(&[&[8.0, 2.0], &[4.0, 12.0]]);
        let xt = block_left_update(&lu, &left).unwrap();
        // x = [[2,0],[1,4]], returned transposed.
        assert_eq!(xt, Block::from_rows(&[&[2.0, 1.0], &[0.0, 4.0]]));
    }

    #[test]
    fn left_update_with_identity_is_pure_transpose() {
        let left = uniform_block::<f32>(5, 0, 0, 0, 8);
        let xt = block_left_update(&Block::identity(8), &left).unwrap();
        assert_eq!(xt, left.transposed());
    }

    #[test]
    fn left_update_reconstruction() {
        let lu_src = diag_dominant_block(8, 31);
        let mut lu = lu_src.clone();
        block_lu_decompose(&mut lu).unwrap();
        let left0 = uniform_block::<f32>(32, 0, 0, 0, 8);
        let xt = block_left_update(&lu, &left0).unwrap();
        // result^T * U reproduces the original block.
        for r in 0..8 {
            for j in 0..8 {
                let mut acc = 0.0f64;
                for m in 0..=j {
                    acc += xt[(m, r)] as f64 * lu[(m, j)] as f64;
                }
                let want = left0[(r, j)] as f64;
                assert!(
                    (acc - want).abs() <= 16.0 * f32::EPSILON as f64 * want.abs().max(1.0),
                    "({r},{j})"
                );
            }
        }
    }

    fn lu_reconstruction_relative_error<S: Scalar>(size: usize, seed: u64) -> f64 {
        let mut a0 = uniform_block::<S>(seed, 98, 0, 0, size);
        for i in 0..size {
            let sum: f64 = (0..size)
                .filter(|&j| j != i)
                .map(|j| a0[(i, j)].to_f64())
                .sum();
            a0[(i, i)] = S::from_f64(1.0 + sum);
        }
        let mut lu = a0.clone();
        block_lu_decompose(&mut lu).unwrap();
        let scale = a0.max_abs();
        let mut worst: f64 = 0.0;
        for i in 0..size {
            for j in 0..size {
                let mut acc = 0.0f64;
                for k in 0..=i.min(j) {
                    let l = if k == i { 1.0 } else { lu[(i, k)].to_f64() };
                    acc += l * lu[(k, j)].to_f64();
                }
                worst = worst.max((acc - a0[(i, j)].to_f64()).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn lu_reconstruction_bounds_up_to_64() {
        for size in [16usize, 32, 64] {
            for seed in [1u64, 2] {
                assert!(lu_reconstruction_relative_error::<f32>(size, seed) <= 1e-5);
                assert!(lu_reconstruction_relative_error::<f64>(size, seed) <= 1e-12);
            }
        }
    }

    #[test]
    fn kernels_are_bitwise_reproducible() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..4 {
            let seed = rng.next_u64();
            let a = diag_dominant_block(16, seed);
            let mut lu1 = a.clone();
            let mut lu2 = a.clone();
            block_lu_decompose(&mut lu1).unwrap();
            block_lu_decompose(&mut lu2).unwrap();
            assert_eq!(lu1, lu2);
        }
    }
}
