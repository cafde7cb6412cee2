use nalgebra::DMatrix;
use rand::Rng;

use super::basis::BasisCache;
use super::layers::{BoundLayer, DenseLinear, EquivariantLinear, GateLayer, InvariantHead, Layer};
use crate::diff::{Backend, Eval, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::lie::RepSignature;

/// One layer of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Equivariant linear layer (dense affine in the ablation).
    Linear { input: RepSignature, output: RepSignature },
    /// Gated nonlinearity on the current signature.
    Gate,
    /// Invariant linear layer producing `outputs` scalars.
    InvariantHead { input: RepSignature, outputs: usize },
    /// Mean over the lag branches; layers before it run once per branch with
    /// their own weights.
    AveragePool,
    Softmax,
    Softplus,
}

/// Layer list plus optional parallel heads sharing the trunk output.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub input: RepSignature,
    /// Number of parallel inputs (lags); 1 for ordinary networks.
    pub branches: usize,
    pub trunk: Vec<LayerSpec>,
    /// Each head continues from the trunk output. Empty means the trunk
    /// output is the single network output.
    pub heads: Vec<Vec<LayerSpec>>,
}

/// Which linear layers a network is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Nullspace-projected equivariant and invariant layers.
    Equivariant,
    /// Unconstrained dense layers of identical widths.
    Ablation,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Equivariant => "equivariant",
            Variant::Ablation => "ablation",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equivariant" => Ok(Variant::Equivariant),
            "ablation" => Ok(Variant::Ablation),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant `{other}` (expected equivariant|ablation)"
            ))),
        }
    }
}

/// A built network: per-branch layers before pooling, shared layers after,
/// then heads.
#[derive(Debug, Clone)]
pub struct Network {
    name: String,
    branches: Vec<Vec<Layer>>,
    trunk: Vec<Layer>,
    heads: Vec<Vec<Layer>>,
    input: RepSignature,
    outputs: Vec<RepSignature>,
}

/// A network with every weight materialized on one backend.
#[derive(Debug, Clone)]
pub struct BoundNetwork<V> {
    branches: Vec<Vec<BoundLayer<V>>>,
    trunk: Vec<BoundLayer<V>>,
    heads: Vec<Vec<BoundLayer<V>>>,
}

struct Builder<'a, R: ?Sized> {
    variant: Variant,
    cache: &'a BasisCache,
    store: &'a mut ParamStore,
    rng: &'a mut R,
    n: usize,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn layer(&mut self, spec: &LayerSpec, sig: &mut RepSignature, name: &str, pos: usize) -> Result<Layer> {
        let check = |expected: &RepSignature, sig: &RepSignature| {
            if expected != sig {
                Err(Error::Shape(format!(
                    "{name}: layer {pos} expects input {expected}, chain provides {sig}"
                )))
            } else {
                Ok(())
            }
        };
        let n = self.n;
        Ok(match spec {
            LayerSpec::Linear { input, output } => {
                check(input, sig)?;
                *sig = output.clone();
                match self.variant {
                    Variant::Equivariant => {
                        Layer::Equivariant(EquivariantLinear::build(self.cache, input, output, self.store, name, self.rng)?)
                    }
                    Variant::Ablation => {
                        Layer::Dense(DenseLinear::build(input.size(n), output.size(n), self.store, name, self.rng)?)
                    }
                }
            }
            LayerSpec::Gate => Layer::Gate(GateLayer::build(sig, n, self.store, name, self.rng)?),
            LayerSpec::InvariantHead { input, outputs } => {
                check(input, sig)?;
                *sig = RepSignature::scalars(*outputs);
                match self.variant {
                    Variant::Equivariant => {
                        Layer::InvariantHead(InvariantHead::build(input, n, *outputs, self.store, name, self.rng)?)
                    }
                    Variant::Ablation => {
                        Layer::Dense(DenseLinear::build(input.size(n), *outputs, self.store, name, self.rng)?)
                    }
                }
            }
            LayerSpec::Softmax => Layer::Softmax,
            LayerSpec::Softplus => Layer::Softplus,
            LayerSpec::AveragePool => unreachable!("pooling is handled by the caller"),
        })
    }
}

/// Builds every layer of `spec`, registering parameters in `store`.
pub fn build_network<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    variant: Variant,
    cache: &BasisCache,
    store: &mut ParamStore,
    rng: &mut R,
) -> Result<Network> {
    if spec.branches == 0 {
        return Err(Error::InvalidArgument(format!("{}: needs at least one branch", spec.name)));
    }
    let pool_at = spec.trunk.iter().position(|l| *l == LayerSpec::AveragePool);
    if spec.branches > 1 && pool_at.is_none() {
        return Err(Error::InvalidArgument(format!(
            "{}: {} branches but no AveragePool layer",
            spec.name, spec.branches
        )));
    }
    if spec.trunk.iter().filter(|l| **l == LayerSpec::AveragePool).count() > 1 {
        return Err(Error::InvalidArgument(format!("{}: more than one AveragePool", spec.name)));
    }
    let (pre, post) = match pool_at {
        Some(k) => (&spec.trunk[..k], &spec.trunk[k + 1..]),
        None => (&spec.trunk[..0], &spec.trunk[..]),
    };
    let mut b = Builder {
        variant,
        cache,
        store,
        rng,
        n: cache.group().n(),
    };

    let mut branches = Vec::with_capacity(spec.branches);
    let mut pooled_sig = spec.input.clone();
    for br in 0..spec.branches {
        let mut sig = spec.input.clone();
        let mut layers = Vec::with_capacity(pre.len());
        for (i, l) in pre.iter().enumerate() {
            layers.push(b.layer(l, &mut sig, &format!("{}.lag{br}.{i}", spec.name), i)?);
        }
        pooled_sig = sig;
        branches.push(layers);
    }
    let mut sig = pooled_sig;
    let mut trunk = Vec::with_capacity(post.len());
    for (i, l) in post.iter().enumerate() {
        trunk.push(b.layer(l, &mut sig, &format!("{}.{}", spec.name, pre.len() + 1 + i), i)?);
    }
    let mut heads = Vec::with_capacity(spec.heads.len());
    let mut outputs = Vec::new();
    for (h, head) in spec.heads.iter().enumerate() {
        let mut hsig = sig.clone();
        let mut layers = Vec::with_capacity(head.len());
        for (i, l) in head.iter().enumerate() {
            if *l == LayerSpec::AveragePool {
                return Err(Error::InvalidArgument(format!("{}: AveragePool inside a head", spec.name)));
            }
            layers.push(b.layer(l, &mut hsig, &format!("{}.head{h}.{i}", spec.name), i)?);
        }
        outputs.push(hsig);
        heads.push(layers);
    }
    if heads.is_empty() {
        outputs.push(sig);
    }
    Ok(Network {
        name: spec.name.clone(),
        branches,
        trunk,
        heads,
        input: spec.input.clone(),
        outputs,
    })
}

impl Network {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_signature(&self) -> &RepSignature {
        &self.input
    }

    /// One signature per output (per head, or the trunk output).
    pub fn output_signatures(&self) -> &[RepSignature] {
        &self.outputs
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.branches
            .iter()
            .flatten()
            .chain(&self.trunk)
            .chain(self.heads.iter().flatten())
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers().flat_map(Layer::params).collect()
    }

    /// Total trainable scalars.
    pub fn num_parameters(&self, store: &ParamStore) -> usize {
        self.params().iter().map(|p| store.get(*p).len()).sum()
    }

    /// Equivariant linear layers, in build order.
    pub fn equivariant_layers(&self) -> Vec<&EquivariantLinear> {
        self.layers()
            .filter_map(|l| match l {
                Layer::Equivariant(e) => Some(e),
                _ => None,
            })
            .collect()
    }

    pub fn bind<B: Backend>(&self, b: &B) -> BoundNetwork<B::V> {
        let bind_all = |ls: &[Layer]| ls.iter().map(|l| l.bind(b)).collect::<Vec<_>>();
        BoundNetwork {
            branches: self.branches.iter().map(|ls| bind_all(ls)).collect(),
            trunk: bind_all(&self.trunk),
            heads: self.heads.iter().map(|ls| bind_all(ls)).collect(),
        }
    }

    /// Plain forward pass.
    pub fn eval(&self, store: &ParamStore, inputs: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let b = Eval::new(store);
        self.bind(&b).forward(&b, inputs)
    }
}

impl<V: Clone> BoundNetwork<V> {
    /// Runs the network on one input per branch; returns one value per output.
    pub fn forward<B: Backend<V = V>>(&self, b: &B, inputs: &[V]) -> Result<Vec<V>> {
        if inputs.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "network has {} branches, got {} inputs",
                self.branches.len(),
                inputs.len()
            )));
        }
        let outs: Vec<V> = self
            .branches
            .iter()
            .zip(inputs)
            .map(|(layers, x)| layers.iter().fold(x.clone(), |h, l| l.apply(b, &h)))
            .collect();
        let mut h = if outs.len() == 1 {
            outs.into_iter().next().expect("one branch")
        } else {
            let k = outs.len() as f64;
            b.scale(&b.add_all(&outs), 1.0 / k)
        };
        for l in &self.trunk {
            h = l.apply(b, &h);
        }
        if self.heads.is_empty() {
            return Ok(vec![h]);
        }
        Ok(self
            .heads
            .iter()
            .map(|layers| layers.iter().fold(h.clone(), |y, l| l.apply(b, &y)))
            .collect())
    }
}
