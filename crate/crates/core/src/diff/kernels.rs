//! Forward numerical kernels shared by the plain evaluator and the tape.
//!
//! Both backends call exactly these functions, so a value computed with
//! gradients is bitwise identical to the same value computed without.

use nalgebra::DMatrix;

use crate::lie::Block;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logsumexp(x: &DMatrix<f64>) -> f64 {
    logsumexp_slice(x.as_slice())
}

fn logsumexp_slice(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Column-wise softmax.
pub fn softmax(x: &DMatrix<f64>) -> DMatrix<f64> {
    log_softmax(x).map(f64::exp)
}

/// Column-wise log-softmax.
pub fn log_softmax(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = x.clone();
    for mut c in y.column_iter_mut() {
        let lse = logsumexp_slice(c.as_slice());
        c.add_scalar_mut(-lse);
    }
    y
}

/// `x + c` with the column vector `c` added to every column.
pub fn add_col(x: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!((x.nrows(), 1), c.shape(), "add_col shape mismatch");
    let mut y = x.clone();
    for mut col in y.column_iter_mut() {
        col += c;
    }
    y
}

/// Row-major reinterpretation of `a` as a `rows x cols` matrix.
pub fn reshape(a: &DMatrix<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(a.len(), rows * cols, "reshape size mismatch");
    let ac = a.ncols();
    DMatrix::from_fn(rows, cols, |i, j| {
        let k = i * cols + j;
        a[(k / ac, k % ac)]
    })
}

pub fn concat(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.first().map_or(1, |p| p.ncols());
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        assert_eq!(p.ncols(), cols, "concat column mismatch");
        out.view_mut((r, 0), (p.nrows(), cols)).copy_from(*p);
        r += p.nrows();
    }
    out
}

/// Number of invariant features produced for a block layout.
pub fn invariant_feature_count(blocks: &[Block]) -> usize {
    let scalars = blocks.iter().filter(|b| b.rank == 0).count();
    let mut pairs = 0;
    let mut i = 0;
    while i < blocks.len() {
        let rank = blocks[i].rank;
        let group = blocks[i..].iter().take_while(|b| b.rank == rank).count();
        if rank > 0 {
            pairs += group * (group + 1) / 2;
        }
        i += group;
    }
    scalars + pairs
}

/// Index pairs `(i, j)`, `i <= j`, of same-rank non-scalar blocks, in output order.
pub fn gram_pairs(blocks: &[Block]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, a) in blocks.iter().enumerate() {
        if a.rank == 0 {
            continue;
        }
        for (j, b) in blocks.iter().enumerate().skip(i) {
            if b.rank == a.rank {
                out.push((i, j));
            }
        }
    }
    out
}

/// Scalar channels followed by inner products between same-rank blocks,
/// computed for each column.
///
/// Tensor powers of an orthogonal representation are orthogonal, so each
/// inner product is invariant.
pub fn invariant_features(x: &DMatrix<f64>, blocks: &[Block]) -> DMatrix<f64> {
    let pairs = gram_pairs(blocks);
    let mut out = DMatrix::zeros(invariant_feature_count(blocks), x.ncols());
    for c in 0..x.ncols() {
        let mut k = 0;
        for b in blocks.iter().filter(|b| b.rank == 0) {
            out[(k, c)] = x[(b.offset, c)];
            k += 1;
        }
        for &(i, j) in &pairs {
            let (a, b) = (blocks[i], blocks[j]);
            out[(k, c)] = (0..a.len).map(|e| x[(a.offset + e, c)] * x[(b.offset + e, c)]).sum();
            k += 1;
        }
    }
    out
}

/// Gated nonlinearity: `tanh` on scalar channels, each non-scalar block
/// scaled by `sigmoid` of its gate.
pub fn gate(x: &DMatrix<f64>, gates: &DMatrix<f64>, blocks: &[Block]) -> DMatrix<f64> {
    let mut y = x.clone();
    for c in 0..x.ncols() {
        let mut g = 0;
        for b in blocks {
            if b.rank == 0 {
                y[(b.offset, c)] = x[(b.offset, c)].tanh();
            } else {
                let s = sigmoid(gates[(g, c)]);
                for k in 0..b.len {
                    y[(b.offset + k, c)] = s * x[(b.offset + k, c)];
                }
                g += 1;
            }
        }
    }
    y
}

pub fn gate_count(blocks: &[Block]) -> usize {
    blocks.iter().filter(|b| b.rank > 0).count()
}
