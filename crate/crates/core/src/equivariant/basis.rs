use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lie::{rep_from_signature, MatrixGroup, RepSignature, Representation};

/// Singular values below `SVD_REL_TOL * sigma_max` count as zero.
pub const SVD_REL_TOL: f64 = 1e-7;
/// Absolute floor: if `sigma_max` is below it the whole space is the nullspace.
pub const SVD_ABS_FLOOR: f64 = 1e-8;

/// Stacked Lie-algebra constraints on `vec(W)` for maps `rep_in -> rep_out`.
///
/// Row block `i` is `drho(A_i)` of `rep_out (x) rep_in*`. `vec` is row-major,
/// matching the Kronecker ordering `out (x) in`, so a nullspace vector
/// reshapes row-major into a `size_out x size_in` weight.
pub fn constraint_matrix(rep_in: &Representation, rep_out: &Representation) -> Result<DMatrix<f64>> {
    rep_in.same_group(rep_out)?;
    let hom = rep_out.tensor(&rep_in.dual())?;
    stack_algebra_constraints(&hom)
}

fn stack_algebra_constraints(rep: &Representation) -> Result<DMatrix<f64>> {
    let group = rep.group();
    let m = rep.size();
    let mut c = DMatrix::zeros(group.dim() * m, m);
    for (i, a) in group.generators().iter().enumerate() {
        c.view_mut((i * m, 0), (m, m)).copy_from(&rep.drho(a)?);
    }
    Ok(c)
}

/// Orthonormal basis (as columns) of `{v : C v = 0}` by dense SVD.
pub fn solve_basis(c: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let cols = c.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // pad wide matrices so that V^T is square
    let padded;
    let c = if c.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), c.shape()).copy_from(c);
        padded = p;
        &padded
    } else {
        c
    };
    let sigma_max = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if sigma_max < SVD_ABS_FLOOR {
        return DMatrix::identity(cols, cols);
    }
    let svd = c.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] < tol * smax)
        .collect();
    let mut q = DMatrix::zeros(cols, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        let mut col = v_t.row(i).transpose();
        // deterministic sign: first clearly non-zero entry positive
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-6) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        q.set_column(k, &col);
    }
    q
}

/// Orthonormal bases for equivariant weights and invariant biases between two
/// representations.
#[derive(Debug, Clone)]
pub struct EquivariantBasis {
    rep_in: Representation,
    rep_out: Representation,
    q: DMatrix<f64>,
    bias_q: DMatrix<f64>,
}

impl EquivariantBasis {
    pub fn solve(rep_in: &Representation, rep_out: &Representation) -> Result<Self> {
        let q = solve_basis(&constraint_matrix(rep_in, rep_out)?, SVD_REL_TOL);
        let bias_q = solve_basis(&stack_algebra_constraints(rep_out)?, SVD_REL_TOL);
        Ok(Self {
            rep_in: rep_in.clone(),
            rep_out: rep_out.clone(),
            q,
            bias_q,
        })
    }

    pub fn rep_in(&self) -> &Representation {
        &self.rep_in
    }

    pub fn rep_out(&self) -> &Representation {
        &self.rep_out
    }

    /// Weight basis, `(size_out * size_in) x r`.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Invariant bias basis, `size_out x r_b`.
    pub fn bias_q(&self) -> &DMatrix<f64> {
        &self.bias_q
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn bias_rank(&self) -> usize {
        self.bias_q.ncols()
    }

    /// `Q Q^T v0`: orthogonal projection onto the equivariant subspace.
    pub fn project(&self, v0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.rep_out.size() * self.rep_in.size();
        if v0.shape() != (n, 1) {
            return Err(Error::Shape(format!(
                "project expects a {n}-vector, got {}x{}",
                v0.nrows(),
                v0.ncols()
            )));
        }
        Ok(&self.q * (self.q.transpose() * v0))
    }

    /// The `size_out x size_in` weight with basis coefficients `coeffs`.
    pub fn weight(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        let v = &self.q * coeffs;
        crate::diff::kernels::reshape(&v, self.rep_out.size(), self.rep_in.size())
    }
}

/// Basis cache keyed by signature pair; every layer between the same
/// signatures shares one solved basis.
#[derive(Debug)]
pub struct BasisCache {
    group: Arc<MatrixGroup>,
    solved: Mutex<HashMap<(RepSignature, RepSignature), Arc<EquivariantBasis>>>,
}

impl BasisCache {
    pub fn new(group: Arc<MatrixGroup>) -> Self {
        Self {
            group,
            solved: Mutex::new(HashMap::new()),
        }
    }

    pub fn group(&self) -> &Arc<MatrixGroup> {
        &self.group
    }

    pub fn get(&self, sig_in: &RepSignature, sig_out: &RepSignature) -> Result<Arc<EquivariantBasis>> {
        let key = (sig_in.clone(), sig_out.clone());
        if let Some(b) = self.solved.lock().expect("basis cache poisoned").get(&key) {
            return Ok(b.clone());
        }
        let rep_in = rep_from_signature(self.group.clone(), sig_in);
        let rep_out = rep_from_signature(self.group.clone(), sig_out);
        let basis = Arc::new(EquivariantBasis::solve(&rep_in, &rep_out)?);
        self.solved
            .lock()
            .expect("basis cache poisoned")
            .insert(key, basis.clone());
        Ok(basis)
    }
}
