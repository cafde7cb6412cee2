//! Matrix Lie groups and their finite-dimensional representations.
//!
//! A [`MatrixGroup`] is described by its base dimension `n` and a basis of
//! its Lie algebra (the infinitesimal generators). Group elements are dense
//! `n x n` matrices obtained through the matrix exponential of algebra
//! elements.
//!
//! A [`Representation`] is a tree built from the base representation, the
//! trivial representation, duals, direct sums and tensor products. It can be
//! evaluated both on group elements (`rho`) and on algebra elements (`drho`);
//! the two are tied together by `rho(exp(A)) = exp(drho(A))`.
//!
//! Generator convention for SO(3) (frozen, nullspace bases depend on it):
//!
//! ```text
//! A1 (about x)      A2 (about y)      A3 (about z)
//! [0  0  0]         [ 0  0  1]        [0 -1  0]
//! [0  0 -1]         [ 0  0  0]        [1  0  0]
//! [0  1  0]         [-1  0  0]        [0  0  0]
//! ```
//!
//! For any other `n` the generators are `E_ji - E_ij` for `i < j` in
//! lexicographic order, so SO(2) has the single generator `[[0,-1],[1,0]]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on `||R^T R - I||_F` for accepting a group element.
pub const ELEMENT_TOL: f64 = 1e-8;

/// A matrix Lie group given by its base dimension and algebra generators.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGroup {
    name: String,
    n: usize,
    generators: Vec<DMatrix<f64>>,
}

impl MatrixGroup {
    /// The special orthogonal group SO(n).
    pub fn so(n: usize) -> Result<Self> {
        Ok(Self {
            name: format!("SO({n})"),
            n,
            generators: so_n_generators(n)?,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Base-space dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of algebra generators.
    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    /// `sum_i coeffs[i] * A_i`.
    pub fn algebra_element(&self, coeffs: &[f64]) -> Result<DMatrix<f64>> {
        if coeffs.len() != self.dim() {
            return Err(Error::Shape(format!(
                "{} expects {} algebra coefficients, got {}",
                self.name,
                self.dim(),
                coeffs.len()
            )));
        }
        let mut a = DMatrix::zeros(self.n, self.n);
        for (c, g) in coeffs.iter().zip(&self.generators) {
            a += g * *c;
        }
        Ok(a)
    }

    /// `exp(sum_i coeffs[i] * A_i)`.
    pub fn exp_map(&self, coeffs: &[f64]) -> Result<DMatrix<f64>> {
        Ok(expm(&self.algebra_element(coeffs)?))
    }

    /// Draws algebra coefficients uniformly on `[-pi, pi]^D` and exponentiates.
    pub fn sample_element<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let coeffs: Vec<f64> = (0..self.dim()).map(|_| rng.random_range(-PI..PI)).collect();
        self.exp_map(&coeffs).expect("coefficient count matches by construction")
    }

    /// Checks `g` is square of the right size and orthogonal within [`ELEMENT_TOL`].
    pub fn check_element(&self, g: &DMatrix<f64>) -> Result<()> {
        if g.nrows() != self.n || g.ncols() != self.n {
            return Err(Error::InvalidElement(format!(
                "expected {n}x{n} matrix, got {}x{}",
                g.nrows(),
                g.ncols(),
                n = self.n
            )));
        }
        let defect = (g.transpose() * g - DMatrix::<f64>::identity(self.n, self.n)).norm();
        if !defect.is_finite() || defect > ELEMENT_TOL {
            return Err(Error::InvalidElement(format!(
                "||g^T g - I||_F = {defect:e} exceeds {ELEMENT_TOL:e}"
            )));
        }
        Ok(())
    }

    /// Checks `a` is antisymmetric within [`ELEMENT_TOL`].
    pub fn check_algebra(&self, a: &DMatrix<f64>) -> Result<()> {
        if a.nrows() != self.n || a.ncols() != self.n {
            return Err(Error::InvalidElement(format!(
                "expected {n}x{n} algebra element, got {}x{}",
                a.nrows(),
                a.ncols(),
                n = self.n
            )));
        }
        let defect = (a + a.transpose()).norm();
        if !defect.is_finite() || defect > ELEMENT_TOL {
            return Err(Error::InvalidElement(format!(
                "||A + A^T||_F = {defect:e}; not in the algebra"
            )));
        }
        Ok(())
    }
}

/// Basis of antisymmetric `n x n` matrices, `n(n-1)/2` of them.
pub fn so_n_generators(n: usize) -> Result<Vec<DMatrix<f64>>> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("SO(n) requires n >= 2, got {n}")));
    }
    let elementary = |i: usize, j: usize| {
        let mut a = DMatrix::zeros(n, n);
        a[(j, i)] = 1.0;
        a[(i, j)] = -1.0;
        a
    };
    if n == 3 {
        // x, y, z ordering; the y generator has the (0,2) entry positive
        return Ok(vec![elementary(1, 2), elementary(2, 0), elementary(0, 1)]);
    }
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(elementary(i, j));
        }
    }
    Ok(out)
}

/// Matrix exponential by scaling and squaring around a Taylor core.
///
/// The input is scaled so its 1-norm is at most 1/4, where 20 Taylor terms
/// are far below double-precision roundoff, then squared back up.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm requires a square matrix");
    let n = a.nrows();
    let norm = (0..n)
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() < 1e-18 * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Structure of a representation.
#[derive(Debug, Clone, PartialEq)]
pub enum RepKind {
    /// The one-dimensional trivial representation `T0`.
    Trivial,
    /// The defining representation on `R^n`.
    Base,
    Dual(Box<RepKind>),
    DirectSum(Vec<RepKind>),
    TensorProduct(Box<RepKind>, Box<RepKind>),
}

impl RepKind {
    /// The `rank`-fold tensor power of the base representation.
    pub fn tensor_power(rank: usize) -> Self {
        match rank {
            0 => RepKind::Trivial,
            1 => RepKind::Base,
            r => RepKind::TensorProduct(Box::new(RepKind::Base), Box::new(Self::tensor_power(r - 1))),
        }
    }

    fn size(&self, n: usize) -> usize {
        match self {
            RepKind::Trivial => 1,
            RepKind::Base => n,
            RepKind::Dual(r) => r.size(n),
            RepKind::DirectSum(parts) => parts.iter().map(|p| p.size(n)).sum(),
            RepKind::TensorProduct(a, b) => a.size(n) * b.size(n),
        }
    }

    fn rho(&self, g: &DMatrix<f64>, g_inv: &DMatrix<f64>) -> DMatrix<f64> {
        let n = g.nrows();
        match self {
            RepKind::Trivial => DMatrix::identity(1, 1),
            RepKind::Base => g.clone(),
            RepKind::Dual(r) => r.rho(g_inv, g).transpose(),
            RepKind::DirectSum(parts) => {
                block_diag(parts.iter().map(|p| p.rho(g, g_inv)), self.size(n))
            }
            RepKind::TensorProduct(a, b) => a.rho(g, g_inv).kronecker(&b.rho(g, g_inv)),
        }
    }

    fn drho(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        match self {
            RepKind::Trivial => DMatrix::zeros(1, 1),
            RepKind::Base => a.clone(),
            RepKind::Dual(r) => -r.drho(a).transpose(),
            RepKind::DirectSum(parts) => block_diag(parts.iter().map(|p| p.drho(a)), self.size(n)),
            RepKind::TensorProduct(l, r) => {
                let (dl, dr) = (l.drho(a), r.drho(a));
                let il = DMatrix::<f64>::identity(dl.nrows(), dl.nrows());
                let ir = DMatrix::<f64>::identity(dr.nrows(), dr.nrows());
                dl.kronecker(&ir) + il.kronecker(&dr)
            }
        }
    }
}

fn block_diag(blocks: impl Iterator<Item = DMatrix<f64>>, size: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(size, size);
    let mut offset = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((offset, offset), (k, k)).copy_from(&b);
        offset += k;
    }
    out
}

/// A representation of a [`MatrixGroup`], evaluated eagerly to dense matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    group: Arc<MatrixGroup>,
    kind: RepKind,
    size: usize,
}

impl Representation {
    pub fn new(group: Arc<MatrixGroup>, kind: RepKind) -> Self {
        let size = kind.size(group.n());
        Self { group, kind, size }
    }

    pub fn trivial(group: Arc<MatrixGroup>) -> Self {
        Self::new(group, RepKind::Trivial)
    }

    pub fn base(group: Arc<MatrixGroup>) -> Self {
        Self::new(group, RepKind::Base)
    }

    pub fn dual(&self) -> Self {
        Self::new(self.group.clone(), RepKind::Dual(Box::new(self.kind.clone())))
    }

    /// `self (+) other`.
    pub fn direct_sum(&self, other: &Self) -> Result<Self> {
        self.same_group(other)?;
        Ok(Self::new(
            self.group.clone(),
            RepKind::DirectSum(vec![self.kind.clone(), other.kind.clone()]),
        ))
    }

    /// `self (x) other`.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        self.same_group(other)?;
        Ok(Self::new(
            self.group.clone(),
            RepKind::TensorProduct(Box::new(self.kind.clone()), Box::new(other.kind.clone())),
        ))
    }

    pub fn same_group(&self, other: &Self) -> Result<()> {
        if self.group != other.group {
            return Err(Error::InvalidArgument(format!(
                "representations over different groups: {} vs {}",
                self.group.name(),
                other.group.name()
            )));
        }
        Ok(())
    }

    pub fn group(&self) -> &Arc<MatrixGroup> {
        &self.group
    }

    pub fn kind(&self) -> &RepKind {
        &self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `rho(g)` for a group element `g`.
    pub fn rho(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.group.check_element(g)?;
        // inverse of an orthogonal matrix
        let g_inv = g.transpose();
        Ok(self.kind.rho(g, &g_inv))
    }

    /// `drho(A)` for an algebra element `A`.
    pub fn drho(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.group.check_algebra(a)?;
        Ok(self.kind.drho(a))
    }
}

/// Multiplicity/rank list `U = c0 T0 (+) c1 T1 (+) ... (+) cM TM`.
///
/// Stored in canonical order: ascending rank, one entry per rank, zero
/// multiplicities dropped. Features laid out by a signature are rank-major,
/// then copy-major: all rank-0 copies first, then each rank-1 copy as a
/// contiguous `n`-block, and so on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RepSignature {
    terms: Vec<(usize, usize)>,
}

/// One contiguous tensor block of a feature vector laid out by a [`RepSignature`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub rank: usize,
    pub offset: usize,
    pub len: usize,
}

impl RepSignature {
    /// Builds a signature from `(multiplicity, rank)` pairs in any order.
    pub fn new(pairs: &[(usize, usize)]) -> Self {
        let max_rank = pairs.iter().map(|&(_, r)| r).max().unwrap_or(0);
        let mut counts = vec![0usize; max_rank + 1];
        for &(c, r) in pairs {
            counts[r] += c;
        }
        let terms = counts
            .into_iter()
            .enumerate()
            .filter(|&(_, c)| c > 0)
            .map(|(r, c)| (c, r))
            .collect();
        Self { terms }
    }

    pub fn scalars(count: usize) -> Self {
        Self::new(&[(count, 0)])
    }

    pub fn vectors(count: usize) -> Self {
        Self::new(&[(count, 1)])
    }

    /// `(multiplicity, rank)` pairs in canonical order.
    pub fn terms(&self) -> &[(usize, usize)] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn multiplicity(&self, rank: usize) -> usize {
        self.terms.iter().find(|t| t.1 == rank).map_or(0, |t| t.0)
    }

    /// Feature dimension `sum c_a n^a`.
    pub fn size(&self, n: usize) -> usize {
        self.terms.iter().map(|&(c, r)| c * n.pow(r as u32)).sum()
    }

    /// Contiguous blocks in layout order.
    pub fn blocks(&self, n: usize) -> Vec<Block> {
        let mut out = Vec::new();
        let mut offset = 0;
        for &(c, rank) in &self.terms {
            let len = n.pow(rank as u32);
            for _ in 0..c {
                out.push(Block { rank, offset, len });
                offset += len;
            }
        }
        out
    }
}

impl fmt::Display for RepSignature {
    /// `c x rank` terms joined by commas, e.g. `2x0,1x1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(|(c, r)| format!("{c}x{r}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for RepSignature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (c, r) = part
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::Signature(format!("expected `<count>x<rank>`, got `{part}`")))?;
            let c: usize = c
                .trim()
                .parse()
                .map_err(|_| Error::Signature(format!("bad multiplicity in `{part}`")))?;
            let r: usize = r
                .trim()
                .parse()
                .map_err(|_| Error::Signature(format!("bad rank in `{part}`")))?;
            if r > 4 {
                return Err(Error::Signature(format!("rank {r} in `{part}` is above the supported maximum of 4")));
            }
            pairs.push((c, r));
        }
        if pairs.is_empty() {
            return Err(Error::Signature(format!("empty signature `{s}`")));
        }
        Ok(Self::new(&pairs))
    }
}

/// The representation `c0 T0 (+) c1 T1 (+) ...` in canonical layout order.
pub fn rep_from_signature(group: Arc<MatrixGroup>, sig: &RepSignature) -> Representation {
    let mut parts = Vec::new();
    for &(c, rank) in sig.terms() {
        for _ in 0..c {
            parts.push(RepKind::tensor_power(rank));
        }
    }
    Representation::new(group, RepKind::DirectSum(parts))
}

/// `exp` of algebra coefficients drawn uniformly on `[-pi, pi]^D`.
pub fn sample_group_element<R: Rng + ?Sized>(group: &MatrixGroup, rng: &mut R) -> DMatrix<f64> {
    group.sample_element(rng)
}
