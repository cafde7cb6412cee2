use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::basis::{BasisCache, EquivariantBasis};
use crate::diff::{kernels, Backend, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::lie::{Block, RepSignature};

/// Scale of the initial gate-map weights relative to `1/sqrt(features)`.
const GATE_INIT_SCALE: f64 = 0.1;

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> DMatrix<f64> {
    let normal = Normal::new(0.0, std).expect("finite positive std");
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Linear layer whose weight lies in the equivariant subspace.
///
/// Trainable state is the coefficient vector in the basis `Q` plus the
/// coefficients of the invariant bias basis. The effective weight is
/// `reshape(Q c)`, so `rho_out(g) W = W rho_in(g)` holds for any coefficients.
#[derive(Debug, Clone)]
pub struct EquivariantLinear {
    basis: Arc<EquivariantBasis>,
    weight: Option<ParamId>,
    bias: Option<ParamId>,
}

impl EquivariantLinear {
    /// Solves (or reuses) the basis and draws initial coefficients
    /// `c = Q^T vec(V0)` with `V0` entries `~ N(0, 1/size_in)`. Biases start at zero.
    pub fn build<R: Rng + ?Sized>(
        cache: &BasisCache,
        sig_in: &RepSignature,
        sig_out: &RepSignature,
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        let basis = cache.get(sig_in, sig_out)?;
        if basis.rank() == 0 && basis.bias_rank() == 0 {
            return Err(Error::DegenerateLayer(format!(
                "no equivariant map or invariant bias from {sig_in} to {sig_out}"
            )));
        }
        let n_out = basis.rep_out().size();
        let weight = if basis.rank() > 0 {
            // same expected Frobenius norm as a dense layer of this shape
            let std = (n_out as f64 / basis.rank() as f64).sqrt();
            Some(store.add(format!("{name}.w"), gaussian(basis.rank(), 1, std, rng))?)
        } else {
            None
        };
        let bias = if basis.bias_rank() > 0 {
            Some(store.add(format!("{name}.b"), DMatrix::zeros(basis.bias_rank(), 1))?)
        } else {
            None
        };
        Ok(Self { basis, weight, bias })
    }

    pub fn basis(&self) -> &EquivariantBasis {
        &self.basis
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.weight.into_iter().chain(self.bias).collect()
    }

    /// Number of free coefficients `r + r_b`.
    pub fn free_parameters(&self) -> usize {
        self.basis.rank() + self.basis.bias_rank()
    }

    pub fn weight_matrix(&self, store: &ParamStore) -> DMatrix<f64> {
        match self.weight {
            Some(w) => self.basis.weight(store.get(w)),
            None => DMatrix::zeros(self.basis.rep_out().size(), self.basis.rep_in().size()),
        }
    }

    pub fn bias_vector(&self, store: &ParamStore) -> DMatrix<f64> {
        match self.bias {
            Some(b) => self.basis.bias_q() * store.get(b),
            None => DMatrix::zeros(self.basis.rep_out().size(), 1),
        }
    }

    /// Sets the coefficients to the projection of the (rectangular) identity.
    pub fn init_identity(&self, store: &mut ParamStore) -> Result<()> {
        let (n_out, n_in) = (self.basis.rep_out().size(), self.basis.rep_in().size());
        let eye = DMatrix::<f64>::identity(n_out, n_in);
        let v0 = kernels::reshape(&eye, n_out * n_in, 1);
        if let Some(w) = self.weight {
            store.set(w, self.basis.q().transpose() * v0)?;
        }
        Ok(())
    }

    fn bind<B: Backend>(&self, b: &B) -> BoundLayer<B::V> {
        let (n_out, n_in) = (self.basis.rep_out().size(), self.basis.rep_in().size());
        let w = match self.weight {
            Some(id) => {
                let flat = b.matmul(&b.constant(self.basis.q().clone()), &b.param(id));
                b.reshape(&flat, n_out, n_in)
            }
            None => b.constant(DMatrix::zeros(n_out, n_in)),
        };
        let bias = self
            .bias
            .map(|id| b.matmul(&b.constant(self.basis.bias_q().clone()), &b.param(id)));
        BoundLayer::Affine { w, bias }
    }
}

/// Unconstrained affine layer used by the non-equivariant ablation.
#[derive(Debug, Clone)]
pub struct DenseLinear {
    weight: ParamId,
    bias: ParamId,
}

impl DenseLinear {
    pub fn build<R: Rng + ?Sized>(
        n_in: usize,
        n_out: usize,
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.w"), gaussian(n_out, n_in, 1.0 / (n_in as f64).sqrt(), rng))?;
        let bias = store.add(format!("{name}.b"), DMatrix::zeros(n_out, 1))?;
        Ok(Self { weight, bias })
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    fn bind<B: Backend>(&self, b: &B) -> BoundLayer<B::V> {
        BoundLayer::Affine {
            w: b.param(self.weight),
            bias: Some(b.param(self.bias)),
        }
    }
}

/// Gated nonlinearity on features laid out by `sig`.
///
/// Scalar channels go through `tanh`; every non-scalar block is multiplied
/// by `sigmoid` of its gate. `gates` holds one entry per non-scalar block,
/// in layout order.
pub fn gated_nonlinearity(
    features: &DMatrix<f64>,
    gates: &DMatrix<f64>,
    sig: &RepSignature,
    n: usize,
) -> Result<DMatrix<f64>> {
    let blocks = sig.blocks(n);
    if features.shape() != (sig.size(n), 1) {
        return Err(Error::Shape(format!(
            "features have {} entries, signature {sig} needs {}",
            features.len(),
            sig.size(n)
        )));
    }
    let expected = kernels::gate_count(&blocks);
    if gates.len() != expected {
        return Err(Error::Shape(format!("expected {expected} gate scalars, got {}", gates.len())));
    }
    Ok(kernels::gate(features, gates, &blocks))
}

/// Gated nonlinearity whose gates come from an invariant map of the input.
///
/// The gate pre-activations are an affine function of the invariant
/// features of the input: its scalar channels and the inner products
/// between its same-rank blocks.
#[derive(Debug, Clone)]
pub struct GateLayer {
    blocks: Arc<[Block]>,
    weight: Option<ParamId>,
    bias: Option<ParamId>,
}

impl GateLayer {
    pub fn build<R: Rng + ?Sized>(
        sig: &RepSignature,
        n: usize,
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks: Arc<[Block]> = sig.blocks(n).into();
        let gates = kernels::gate_count(&blocks);
        let feats = kernels::invariant_feature_count(&blocks);
        let (weight, bias) = if gates > 0 {
            let std = GATE_INIT_SCALE / (feats.max(1) as f64).sqrt();
            (
                Some(store.add(format!("{name}.gw"), gaussian(gates, feats, std, rng))?),
                Some(store.add(format!("{name}.gb"), DMatrix::zeros(gates, 1))?),
            )
        } else {
            (None, None)
        };
        Ok(Self { blocks, weight, bias })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.weight.into_iter().chain(self.bias).collect()
    }

    fn bind<B: Backend>(&self, b: &B) -> BoundLayer<B::V> {
        BoundLayer::Gate {
            blocks: self.blocks.clone(),
            w: self.weight.map(|id| b.param(id)),
            bias: self.bias.map(|id| b.param(id)),
        }
    }
}

/// Invariant linear layer: affine map of the input's invariant features.
#[derive(Debug, Clone)]
pub struct InvariantHead {
    blocks: Arc<[Block]>,
    weight: ParamId,
    bias: ParamId,
}

impl InvariantHead {
    pub fn build<R: Rng + ?Sized>(
        sig: &RepSignature,
        n: usize,
        outputs: usize,
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks: Arc<[Block]> = sig.blocks(n).into();
        let feats = kernels::invariant_feature_count(&blocks);
        if feats == 0 {
            return Err(Error::DegenerateLayer(format!("signature {sig} has no invariant features")));
        }
        let weight = store.add(format!("{name}.w"), gaussian(outputs, feats, 1.0 / (feats as f64).sqrt(), rng))?;
        let bias = store.add(format!("{name}.b"), DMatrix::zeros(outputs, 1))?;
        Ok(Self { blocks, weight, bias })
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    fn bind<B: Backend>(&self, b: &B) -> BoundLayer<B::V> {
        BoundLayer::Invariant {
            blocks: self.blocks.clone(),
            w: b.param(self.weight),
            bias: b.param(self.bias),
        }
    }
}

/// A built layer of a network.
#[derive(Debug, Clone)]
pub enum Layer {
    Equivariant(EquivariantLinear),
    Dense(DenseLinear),
    Gate(GateLayer),
    InvariantHead(InvariantHead),
    Softmax,
    Softplus,
}

impl Layer {
    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Layer::Equivariant(l) => l.params(),
            Layer::Dense(l) => l.params(),
            Layer::Gate(l) => l.params(),
            Layer::InvariantHead(l) => l.params(),
            Layer::Softmax | Layer::Softplus => Vec::new(),
        }
    }

    pub fn bind<B: Backend>(&self, b: &B) -> BoundLayer<B::V> {
        match self {
            Layer::Equivariant(l) => l.bind(b),
            Layer::Dense(l) => l.bind(b),
            Layer::Gate(l) => l.bind(b),
            Layer::InvariantHead(l) => l.bind(b),
            Layer::Softmax => BoundLayer::Softmax,
            Layer::Softplus => BoundLayer::Softplus,
        }
    }
}

/// A layer with its weights materialized on a backend, ready to be applied
/// to many inputs.
#[derive(Debug, Clone)]
pub enum BoundLayer<V> {
    Affine { w: V, bias: Option<V> },
    Gate { blocks: Arc<[Block]>, w: Option<V>, bias: Option<V> },
    Invariant { blocks: Arc<[Block]>, w: V, bias: V },
    Softmax,
    Softplus,
}

impl<V: Clone> BoundLayer<V> {
    pub fn apply<B: Backend<V = V>>(&self, b: &B, x: &V) -> V {
        match self {
            BoundLayer::Affine { w, bias } => {
                let y = b.matmul(w, x);
                match bias {
                    Some(c) => b.add_col(&y, c),
                    None => y,
                }
            }
            BoundLayer::Gate { blocks, w, bias } => {
                let gates = match (w, bias) {
                    (Some(w), Some(c)) => {
                        let f = b.invariant_features(x, blocks);
                        b.add_col(&b.matmul(w, &f), c)
                    }
                    _ => b.constant(DMatrix::zeros(0, 1)),
                };
                b.gate(x, &gates, blocks)
            }
            BoundLayer::Invariant { blocks, w, bias } => {
                let f = b.invariant_features(x, blocks);
                b.add_col(&b.matmul(w, &f), bias)
            }
            BoundLayer::Softmax => b.softmax(x),
            BoundLayer::Softplus => b.softplus(x),
        }
    }
}
