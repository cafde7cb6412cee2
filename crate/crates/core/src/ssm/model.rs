use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::diff::checkpoint::Record;
use crate::diff::{Backend, Eval, ParamId, ParamStore};
use crate::equivariant::{build_network, BasisCache, BoundNetwork, LayerSpec, Network, NetworkSpec, Variant};
use crate::error::{Error, Result};
use crate::lie::{MatrixGroup, RepSignature};

/// Generative parameters: switch networks `pi^s`, transition networks
/// (mean and standard deviation heads) and the emission network.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    group: Arc<MatrixGroup>,
    latent: RepSignature,
    observed: RepSignature,
    store: ParamStore,
    switch: Vec<Network>,
    transition: Vec<Network>,
    emission: Network,
    sigma_x: Option<ParamId>,
    /// `K x blocks` 0/1 matrix copying one scale per latent block to its coordinates.
    expand: DMatrix<f64>,
}

/// A [`Model`] with all weights materialized on one backend.
pub struct BoundModel<V> {
    pub(crate) switch: Vec<BoundNetwork<V>>,
    pub(crate) transition: Vec<BoundNetwork<V>>,
    pub(crate) emission: BoundNetwork<V>,
    pub(crate) sigma_x: V,
    expand: V,
    sigma_floor: f64,
    states: usize,
}

fn widen(sig: &RepSignature, m: usize) -> RepSignature {
    let pairs: Vec<(usize, usize)> = sig.terms().iter().map(|&(c, r)| (c * m, r)).collect();
    RepSignature::new(&pairs)
}

fn linear(input: &RepSignature, output: &RepSignature) -> LayerSpec {
    LayerSpec::Linear {
        input: input.clone(),
        output: output.clone(),
    }
}

/// `pi^s`: ELL K->mK, gate, ELL mK->mK, gate, ILL mK->S. Produces logits;
/// callers apply (log-)softmax.
pub fn switch_spec(cfg: &ModelConfig, latent: &RepSignature, s: usize) -> NetworkSpec {
    let h = widen(latent, cfg.switch_width);
    NetworkSpec {
        name: format!("switch{s}"),
        input: latent.clone(),
        branches: 1,
        trunk: vec![
            linear(latent, &h),
            LayerSpec::Gate,
            linear(&h, &h),
            LayerSpec::Gate,
            LayerSpec::InvariantHead {
                input: h,
                outputs: cfg.states,
            },
        ],
        heads: vec![],
    }
}

/// Transition network of one state: per-lag ELL/gate pairs, average over
/// lags, a shared ELL/gate, then an equivariant mean head and an invariant
/// softplus scale head with one output per latent block.
pub fn transition_spec(cfg: &ModelConfig, latent: &RepSignature, s: usize) -> NetworkSpec {
    let h = widen(latent, cfg.transition_width);
    let blocks = latent.blocks(3).len();
    NetworkSpec {
        name: format!("transition{s}"),
        input: latent.clone(),
        branches: cfg.lags.len(),
        trunk: vec![
            linear(latent, &h),
            LayerSpec::Gate,
            linear(&h, &h),
            LayerSpec::Gate,
            LayerSpec::AveragePool,
            linear(&h, &h),
            LayerSpec::Gate,
        ],
        heads: vec![
            vec![linear(&h, latent)],
            vec![
                LayerSpec::InvariantHead {
                    input: h,
                    outputs: blocks,
                },
                LayerSpec::Softplus,
            ],
        ],
    }
}

/// Emission: three ELL/gate pairs of width `mK`, then ELL to `D` vectors.
pub fn emission_spec(cfg: &ModelConfig, latent: &RepSignature, observed: &RepSignature) -> NetworkSpec {
    let h = widen(latent, cfg.emission_width);
    NetworkSpec {
        name: "emission".into(),
        input: latent.clone(),
        branches: 1,
        trunk: vec![
            linear(latent, &h),
            LayerSpec::Gate,
            linear(&h, &h),
            LayerSpec::Gate,
            linear(&h, &h),
            LayerSpec::Gate,
            linear(&h, observed),
        ],
        heads: vec![],
    }
}

impl Model {
    /// Builds all networks; weights are drawn from a generator seeded with `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let group = Arc::new(MatrixGroup::so(3)?);
        let cache = BasisCache::new(group.clone());
        let latent = config.latent_signature()?;
        let observed = RepSignature::vectors(config.joints);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let v = config.variant;
        let switch = (0..config.states)
            .map(|s| build_network(&switch_spec(config, &latent, s), v, &cache, &mut store, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let transition = (0..config.states)
            .map(|s| build_network(&transition_spec(config, &latent, s), v, &cache, &mut store, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let emission = build_network(&emission_spec(config, &latent, &observed), v, &cache, &mut store, &mut rng)?;
        let sigma_x = if config.train_sigma_x {
            let raw = (config.sigma_x.exp() - 1.0).ln();
            Some(store.add("sigma_x", DMatrix::from_element(1, 1, raw))?)
        } else {
            None
        };
        let blocks = latent.blocks(3);
        let mut expand = DMatrix::zeros(config.latent_dim, blocks.len());
        for (j, b) in blocks.iter().enumerate() {
            for k in 0..b.len {
                expand[(b.offset + k, j)] = 1.0;
            }
        }
        Ok(Self {
            config: config.clone(),
            group,
            latent,
            observed,
            store,
            switch,
            transition,
            emission,
            sigma_x,
            expand,
        })
    }

    /// The same architecture with unconstrained dense layers.
    pub fn build_ablation(config: &ModelConfig) -> Result<Self> {
        Self::new(&ModelConfig {
            variant: Variant::Ablation,
            ..config.clone()
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn group(&self) -> &Arc<MatrixGroup> {
        &self.group
    }

    pub fn latent_signature(&self) -> &RepSignature {
        &self.latent
    }

    pub fn observed_signature(&self) -> &RepSignature {
        &self.observed
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn switch_networks(&self) -> &[Network] {
        &self.switch
    }

    pub fn transition_networks(&self) -> &[Network] {
        &self.transition
    }

    pub fn emission_network(&self) -> &Network {
        &self.emission
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn sigma_x(&self) -> f64 {
        match self.sigma_x {
            Some(id) => crate::diff::kernels::softplus(self.store.get(id)[(0, 0)]),
            None => self.config.sigma_x,
        }
    }

    pub fn bind<B: Backend>(&self, b: &B) -> BoundModel<B::V> {
        BoundModel {
            switch: self.switch.iter().map(|n| n.bind(b)).collect(),
            transition: self.transition.iter().map(|n| n.bind(b)).collect(),
            emission: self.emission.bind(b),
            sigma_x: match self.sigma_x {
                Some(id) => b.softplus(&b.param(id)),
                None => b.constant(DMatrix::from_element(1, 1, self.config.sigma_x)),
            },
            expand: b.constant(self.expand.clone()),
            sigma_floor: self.config.sigma_floor,
            states: self.config.states,
        }
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.config.states {
            return Err(Error::InvalidArgument(format!(
                "state {s} out of range for {} states",
                self.config.states
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.nrows() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent has {} rows, expected {}",
                z.nrows(),
                self.config.latent_dim
            )));
        }
        Ok(())
    }

    /// `mu_x(z)`; columns of `z` are independent inputs.
    pub fn emission_mean(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_latent(z)?;
        let b = Eval::new(&self.store);
        Ok(self.bind(&b).emission(&b, z))
    }

    /// Transition mean and standard deviation of state `s` given one latent
    /// per lag, in the order of `config.lags`.
    pub fn transition(&self, s: usize, z_hist: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_state(s)?;
        if z_hist.len() != self.config.lags.len() {
            return Err(Error::Shape(format!(
                "expected {} lagged latents, got {}",
                self.config.lags.len(),
                z_hist.len()
            )));
        }
        for z in z_hist {
            self.check_latent(z)?;
        }
        let b = Eval::new(&self.store);
        self.bind(&b).transition(&b, s, z_hist)
    }

    /// `pi^{s_prev}(z_prev)`, a point on the S-simplex per column.
    pub fn switch_probs(&self, s_prev: usize, z_prev: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_state(s_prev)?;
        self.check_latent(z_prev)?;
        let b = Eval::new(&self.store);
        let lp = self.bind(&b).switch_log_probs(&b, s_prev, z_prev)?;
        Ok(lp.map(f64::exp))
    }

    /// `q(s_t)` from the prior mixture `sum_s' q_prev[s'] pi^{s'}(z_prev)`
    /// times the transition likelihood of `z_t` under each state.
    pub fn q_state_posterior(
        &self,
        q_prev: &DMatrix<f64>,
        z_prev: &DMatrix<f64>,
        z_t: &DMatrix<f64>,
        z_hist: &[DMatrix<f64>],
    ) -> Result<DMatrix<f64>> {
        if q_prev.shape() != (self.config.states, 1) {
            return Err(Error::Shape(format!("q_prev must be {} x 1", self.config.states)));
        }
        let b = Eval::new(&self.store);
        let m = self.bind(&b);
        let log_pi = (0..self.config.states)
            .map(|s| m.switch_log_probs(&b, s, z_prev))
            .collect::<Result<Vec<_>>>()?;
        let ll = m.transition_log_likelihood(&b, z_t, z_hist)?;
        let step = super::elbo::posterior_step(&b, q_prev, &log_pi, Some(&ll))?;
        Ok(step.q)
    }

    /// Parameters as checkpoint records (`theta.` prefix).
    pub fn to_records(&self) -> Vec<Record> {
        self.store.to_records("theta.")
    }

    /// Overwrites parameters from records; shapes must match this architecture.
    pub fn load_records(&mut self, records: &[Record]) -> Result<()> {
        self.store.load_records(records, "theta.")
    }
}

impl<V: Clone> BoundModel<V> {
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn emission<B: Backend<V = V>>(&self, b: &B, z: &V) -> V {
        self.emission
            .forward(b, std::slice::from_ref(z))
            .expect("emission has one branch")
            .remove(0)
    }

    pub fn transition<B: Backend<V = V>>(&self, b: &B, s: usize, z_hist: &[V]) -> Result<(V, V)> {
        let mut out = self.transition[s].forward(b, z_hist)?;
        let scale = out.pop().expect("scale head");
        let mean = out.pop().expect("mean head");
        let sigma = b.matmul(&self.expand, &scale);
        let floor = b.constant(b.value(&sigma).map(|_| self.sigma_floor));
        Ok((mean, b.add(&sigma, &floor)))
    }

    pub fn switch_log_probs<B: Backend<V = V>>(&self, b: &B, s_prev: usize, z_prev: &V) -> Result<V> {
        let logits = self.switch[s_prev].forward(b, std::slice::from_ref(z_prev))?.remove(0);
        Ok(b.log_softmax(&logits))
    }

    /// `log N(z_t | mean_s, sigma_s)` for every state, as an `S x cols` matrix.
    pub fn transition_log_likelihood<B: Backend<V = V>>(&self, b: &B, z_t: &V, z_hist: &[V]) -> Result<V> {
        let rows = (0..self.states)
            .map(|s| {
                let (mean, sigma) = self.transition(b, s, z_hist)?;
                Ok(super::elbo::gauss_logpdf_cols(b, z_t, &mean, &sigma))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(b.concat(&rows))
    }
}
