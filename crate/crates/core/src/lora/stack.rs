use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lora::LoraConfig;
use crate::numerics::{gaussian, Matrix, SeededRng};

/// Standard deviation of the Gaussian `A` factor at adapter creation.
pub const DEFAULT_ADAPTER_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, pre: &Matrix) -> Matrix {
        match self {
            Activation::Tanh => pre.map(f64::tanh),
            Activation::Identity => pre.clone(),
        }
    }

    /// Derivative expressed through the layer output.
    fn derivative_from_output(self, out: &Matrix) -> Matrix {
        match self {
            Activation::Tanh => out.map(|y| 1.0 - y * y),
            Activation::Identity => Matrix::filled(out.rows(), out.cols(), 1.0),
        }
    }
}

/// Frozen pre-trained block: `y = act(M x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneLayer {
    weight: Matrix,
    activation: Activation,
}

impl BackboneLayer {
    pub fn new(weight: Matrix, activation: Activation) -> Self {
        BackboneLayer { weight, activation }
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Output dimension `m`.
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Input dimension `q`.
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn max_rank(&self) -> usize {
        self.out_dim().min(self.in_dim())
    }
}

/// Low-rank pair `(B: m x r, A: r x q)` attached to one block.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    layer: usize,
    b: Matrix,
    a: Matrix,
}

impl LoraAdapter {
    pub fn new(layer: usize, b: Matrix, a: Matrix) -> Result<Self> {
        if b.cols() != a.rows() || b.cols() == 0 {
            return Err(Error::shape("lora_adapter", b.shape(), a.shape()));
        }
        Ok(LoraAdapter { layer, b, a })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub(crate) fn factors_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.b, &mut self.a)
    }

    /// `B * A`, the weight delta this adapter represents.
    pub fn delta(&self) -> Matrix {
        self.b.matmul(&self.a).expect("adapter factors conform")
    }

    /// Number of scalars carried by the pair.
    pub fn param_count(&self) -> usize {
        self.b.len() + self.a.len()
    }

    pub(crate) fn with_layer(mut self, layer: usize) -> Self {
        self.layer = layer;
        self
    }
}

/// Creates an adapter with `B = 0` and `A ~ N(0, std^2)`, so `B A = 0`.
pub fn init_adapter(
    rng: &mut SeededRng,
    layer: usize,
    rank: usize,
    m: usize,
    q: usize,
    std: f64,
) -> Result<LoraAdapter> {
    let max = m.min(q);
    if rank == 0 || rank > max {
        return Err(Error::RankOutOfRange { rank, max });
    }
    let a = gaussian(rng, rank, q, std);
    LoraAdapter::new(layer, Matrix::zeros(m, rank), a)
}

/// Identifies one trainable matrix inside a stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Head,
    LoraB(usize),
    LoraA(usize),
}

/// Frozen backbone, adapters on some blocks, and a trainable classifier head.
///
/// The backbone is shared behind an `Arc` and never exposed mutably.
#[derive(Clone, Debug)]
pub struct LayerStack {
    backbone: Arc<Vec<BackboneLayer>>,
    adapters: BTreeMap<usize, LoraAdapter>,
    head: Matrix,
}

/// Activations saved by [`LayerStack::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    outputs: Vec<Matrix>,
    projected: BTreeMap<usize, Matrix>,
    layout: Vec<(usize, usize)>,
}

impl ForwardCache {
    /// Input to block `l`.
    pub fn input(&self, l: usize) -> &Matrix {
        &self.inputs[l]
    }

    /// Output of the last block, i.e. the features fed to the head.
    pub fn features(&self) -> &Matrix {
        self.outputs.last().unwrap_or(&self.inputs[0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorGrads {
    pub b: Matrix,
    pub a: Matrix,
}

/// Gradients for every trainable matrix in a stack.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterGrads {
    pub head: Matrix,
    pub layers: BTreeMap<usize, FactorGrads>,
}

impl AdapterGrads {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        match id {
            ParamId::Head => Some(&self.head),
            ParamId::LoraB(l) => self.layers.get(&l).map(|g| &g.b),
            ParamId::LoraA(l) => self.layers.get(&l).map(|g| &g.a),
        }
    }
}

impl LayerStack {
    /// Builds an adapter-free stack; consecutive blocks and the head must chain.
    pub fn new(layers: Vec<BackboneLayer>, head: Matrix) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("backbone layers"));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::StackMismatch(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    l + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let last = layers.last().expect("nonempty").out_dim();
        if head.cols() != last {
            return Err(Error::shape("head", head.shape(), (last, 1)));
        }
        Ok(LayerStack {
            backbone: Arc::new(layers),
            adapters: BTreeMap::new(),
            head,
        })
    }

    /// Random "pre-trained" backbone: `dims[l] -> dims[l+1]` blocks with
    /// weights `N(0, 1/q)`, and a head `N(0, head_std^2)`.
    pub fn random(
        rng: &mut SeededRng,
        dims: &[usize],
        classes: usize,
        activation: Activation,
        head_std: f64,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::EmptyInput("backbone dims"));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let std = 1.0 / (w[0] as f64).sqrt();
                BackboneLayer::new(gaussian(rng, w[1], w[0], std), activation)
            })
            .collect();
        let head = gaussian(rng, classes, *dims.last().expect("nonempty"), head_std);
        LayerStack::new(layers, head)
    }

    pub fn num_layers(&self) -> usize {
        self.backbone.len()
    }

    pub fn layer(&self, l: usize) -> &BackboneLayer {
        &self.backbone[l]
    }

    pub fn input_dim(&self) -> usize {
        self.backbone[0].in_dim()
    }

    pub fn head(&self) -> &Matrix {
        &self.head
    }

    pub fn num_classes(&self) -> usize {
        self.head.rows()
    }

    pub fn adapter(&self, l: usize) -> Option<&LoraAdapter> {
        self.adapters.get(&l)
    }

    pub fn adapters(&self) -> impl Iterator<Item = &LoraAdapter> {
        self.adapters.values()
    }

    /// Current adapter layout as a config, if it is a protocol-shaped suffix.
    pub fn lora_config(&self) -> Option<LoraConfig> {
        let depth = self.adapters.len();
        let first = self.num_layers().checked_sub(depth)?;
        if !self.adapters.keys().copied().eq(first..self.num_layers()) {
            return None;
        }
        LoraConfig::new(self.adapters.values().map(LoraAdapter::rank).collect()).ok()
    }

    /// SHA-256 of every backbone weight bit pattern.
    pub fn backbone_checksum(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for layer in self.backbone.iter() {
            hasher.update((layer.out_dim() as u64).to_le_bytes());
            hasher.update((layer.in_dim() as u64).to_le_bytes());
            for v in layer.weight().as_slice() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// Attaches fresh adapters on the deepest `config.depth()` blocks,
    /// replacing any existing ones.
    pub fn inject(self, config: &LoraConfig, rng: &mut SeededRng) -> Result<Self> {
        self.inject_with_std(config, rng, DEFAULT_ADAPTER_INIT_STD)
    }

    pub fn inject_with_std(self, config: &LoraConfig, rng: &mut SeededRng, std: f64) -> Result<Self> {
        if config.depth() > self.num_layers() {
            return Err(Error::StackMismatch(format!(
                "config depth {} exceeds {} layers",
                config.depth(),
                self.num_layers()
            )));
        }
        let first = config.first_layer(self.num_layers());
        self.inject_window(first, config.ranks(), rng, std)
    }

    /// Attaches fresh adapters to the contiguous window starting at
    /// `first_layer`, with arbitrary ranks. The federated protocol only uses
    /// suffix windows via [`LayerStack::inject`]; free windows exist for the
    /// placement studies.
    pub fn inject_window(mut self, first_layer: usize, ranks: &[usize], rng: &mut SeededRng, std: f64) -> Result<Self> {
        if first_layer + ranks.len() > self.num_layers() {
            return Err(Error::StackMismatch(format!(
                "window [{first_layer}, {}) exceeds {} layers",
                first_layer + ranks.len(),
                self.num_layers()
            )));
        }
        self.adapters.clear();
        for (i, &rank) in ranks.iter().enumerate() {
            let l = first_layer + i;
            let host = &self.backbone[l];
            let adapter = init_adapter(rng, l, rank, host.out_dim(), host.in_dim(), std)?;
            self.adapters.insert(l, adapter);
        }
        Ok(self)
    }

    /// Installs received adapters. They must form a suffix with
    /// nondecreasing ranks and match their host block shapes.
    pub fn install_adapters(mut self, adapters: Vec<LoraAdapter>) -> Result<Self> {
        let depth = adapters.len();
        let first = self
            .num_layers()
            .checked_sub(depth)
            .ok_or_else(|| Error::StackMismatch(format!("{depth} adapters for {} layers", self.num_layers())))?;
        let mut prev_rank = 0;
        let mut installed = BTreeMap::new();
        for (i, adapter) in adapters.into_iter().enumerate() {
            let l = first + i;
            if adapter.layer() != l {
                return Err(Error::StackMismatch(format!(
                    "adapter for layer {} arrived in suffix slot {l}",
                    adapter.layer()
                )));
            }
            self.check_host_shape(&adapter)?;
            if adapter.rank() < prev_rank {
                return Err(Error::InvalidLoraConfig(format!(
                    "rank {} at layer {l} below rank {prev_rank} of the layer beneath",
                    adapter.rank()
                )));
            }
            prev_rank = adapter.rank();
            installed.insert(l, adapter);
        }
        self.adapters = installed;
        Ok(self)
    }

    fn check_host_shape(&self, adapter: &LoraAdapter) -> Result<()> {
        let host = self
            .backbone
            .get(adapter.layer())
            .ok_or_else(|| Error::StackMismatch(format!("no layer {}", adapter.layer())))?;
        if adapter.b().rows() != host.out_dim() || adapter.a().cols() != host.in_dim() {
            return Err(Error::shape(
                "adapter host",
                host.weight().shape(),
                (adapter.b().rows(), adapter.a().cols()),
            ));
        }
        if adapter.rank() > host.max_rank() {
            return Err(Error::RankOutOfRange {
                rank: adapter.rank(),
                max: host.max_rank(),
            });
        }
        Ok(())
    }

    pub fn take_adapters(&mut self) -> Vec<LoraAdapter> {
        std::mem::take(&mut self.adapters).into_values().collect()
    }

    pub fn set_head(&mut self, head: Matrix) -> Result<()> {
        if head.shape() != self.head.shape() {
            return Err(Error::shape("set_head", self.head.shape(), head.shape()));
        }
        self.head = head;
        Ok(())
    }

    /// Every trainable matrix, head first then `(B, A)` by ascending layer.
    pub fn trainable_mut(&mut self) -> Vec<(ParamId, &mut Matrix)> {
        let mut out = vec![(ParamId::Head, &mut self.head)];
        for (&l, adapter) in self.adapters.iter_mut() {
            let (b, a) = adapter.factors_mut();
            out.push((ParamId::LoraB(l), b));
            out.push((ParamId::LoraA(l), a));
        }
        out
    }

    /// `x` is `q0 x s`, one column per sample. Returns `classes x s` logits.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if x.rows() != self.input_dim() {
            return Err(Error::shape("forward", self.layer(0).weight().shape(), x.shape()));
        }
        let n = self.num_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        let mut projected = BTreeMap::new();
        let mut h = x.clone();
        for (l, layer) in self.backbone.iter().enumerate() {
            let mut pre = layer.weight().matmul(&h)?;
            if let Some(adapter) = self.adapters.get(&l) {
                let ax = adapter.a().matmul(&h)?;
                pre = pre.add(&adapter.b().matmul(&ax)?)?;
                projected.insert(l, ax);
            }
            let out = layer.activation().apply(&pre);
            inputs.push(std::mem::replace(&mut h, out.clone()));
            outputs.push(out);
        }
        let logits = self.head.matmul(&h)?;
        let cache = ForwardCache {
            inputs,
            outputs,
            projected,
            layout: self.layout(),
        };
        Ok((logits, cache))
    }

    fn layout(&self) -> Vec<(usize, usize)> {
        self.adapters.values().map(|a| (a.layer(), a.rank())).collect()
    }

    /// Back-propagates `grad_logits` into the head and the adapted blocks.
    /// Propagation stops at the shallowest adapted block; nothing below it
    /// is read or computed.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Matrix) -> Result<AdapterGrads> {
        if cache.inputs.len() != self.num_layers() || cache.layout != self.layout() {
            return Err(Error::StackMismatch(
                "forward cache was produced by a different stack layout".into(),
            ));
        }
        let features = cache.features();
        if grad_logits.rows() != self.num_classes() || grad_logits.cols() != features.cols() {
            return Err(Error::shape("backward", self.head.shape(), grad_logits.shape()));
        }
        let head = grad_logits.matmul(&features.transpose())?;
        let mut layers = BTreeMap::new();
        let Some(&lowest) = self.adapters.keys().next() else {
            return Ok(AdapterGrads { head, layers });
        };

        let mut upstream = self.head.transpose().matmul(grad_logits)?;
        for l in (lowest..self.num_layers()).rev() {
            let layer = &self.backbone[l];
            let local = layer.activation().derivative_from_output(&cache.outputs[l]);
            let g_pre = upstream.hadamard(&local)?;
            let x = &cache.inputs[l];
            let mut bt_g = None;
            if let Some(adapter) = self.adapters.get(&l) {
                let ax = &cache.projected[&l];
                let db = g_pre.matmul(&ax.transpose())?;
                let btg = adapter.b().transpose().matmul(&g_pre)?;
                let da = btg.matmul(&x.transpose())?;
                layers.insert(l, FactorGrads { b: db, a: da });
                bt_g = Some(btg);
            }
            if l > lowest {
                let mut next = layer.weight().transpose().matmul(&g_pre)?;
                if let (Some(adapter), Some(btg)) = (self.adapters.get(&l), bt_g) {
                    next = next.add(&adapter.a().transpose().matmul(&btg)?)?;
                }
                upstream = next;
            }
        }
        Ok(AdapterGrads { head, layers })
    }

    /// Folds every adapter into its host weight: `M + B A`.
    pub fn merge(&self) -> LayerStack {
        if self.adapters.is_empty() {
            return self.clone();
        }
        let layers = self
            .backbone
            .iter()
            .enumerate()
            .map(|(l, layer)| match self.adapters.get(&l) {
                Some(adapter) => BackboneLayer::new(
                    layer.weight().add(&adapter.delta()).expect("host shape checked"),
                    layer.activation(),
                ),
                None => layer.clone(),
            })
            .collect();
        LayerStack {
            backbone: Arc::new(layers),
            adapters: BTreeMap::new(),
            head: self.head.clone(),
        }
    }

    /// Replaces the frozen backbone with the blocks `[from, L)`; used to
    /// check that adapter gradients never depend on shallower blocks.
    pub fn truncated_from(&self, from: usize) -> Result<LayerStack> {
        if from >= self.num_layers() {
            return Err(Error::StackMismatch(format!("cannot keep layers from {from}")));
        }
        let layers = self.backbone[from..].to_vec();
        let adapters = self
            .adapters
            .values()
            .filter(|a| a.layer() >= from)
            .map(|a| (a.layer() - from, a.clone().with_layer(a.layer() - from)))
            .collect();
        Ok(LayerStack {
            backbone: Arc::new(layers),
            adapters,
            head: self.head.clone(),
        })
    }
}
