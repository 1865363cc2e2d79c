//! The scorers: ItemPop, DGMF, DMLP, their fusion DNMF, and the
//! inner-product special case DNCF-MF.
//!
//! Every neural model builds user and item representations from two
//! embeddings: an ID embedding (a row of an ID table) and a history embedding
//! (the normalized sum of rows indexed by the user's items, or by the item's
//! users). The combiner merges the pair before the interaction function.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::data::InteractionStore;
use crate::error::{Error, Result};
use crate::nn::{
    combine_backward, combine_forward, history_backward, history_into, mlp_backward, mlp_forward_slices,
    sigmoid, Activation, AttentionCombiner, CombineTape, CombinerKind, DenseLayer, EmbeddingRole,
    EmbeddingTable, MlpTape, Neighbors, OutputHead, ParamMut, ParamRef,
};
use crate::tensor::{dot_slices, DenseVector, SeededRng};

/// Standard deviation of the Gaussian used for every weight at init.
pub const INIT_STDDEV: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(rename = "itempop")]
    ItemPop,
    Dgmf,
    Dmlp,
    Dnmf,
    DncfMf,
}

impl ModelKind {
    pub fn is_trainable(self) -> bool {
        self != ModelKind::ItemPop
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::ItemPop => "itempop",
            ModelKind::Dgmf => "dgmf",
            ModelKind::Dmlp => "dmlp",
            ModelKind::Dnmf => "dnmf",
            ModelKind::DncfMf => "dncf_mf",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "itempop" => Ok(ModelKind::ItemPop),
            "dgmf" => Ok(ModelKind::Dgmf),
            "dmlp" => Ok(ModelKind::Dmlp),
            "dnmf" => Ok(ModelKind::Dnmf),
            "dncf_mf" | "dncf-mf" => Ok(ModelKind::DncfMf),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Hidden widths of an `n`-layer tower ending at `factors`, halving upward
/// from the output: `tower(3, 64) == [256, 128, 64]`.
pub fn tower(n: usize, factors: usize) -> Vec<usize> {
    (0..n).rev().map(|l| factors << l).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Predictive factors; the GMF embedding width.
    pub factors: usize,
    /// Hidden widths of the MLP tower (DMLP and the DMLP part of DNMF).
    pub mlp_layers: Vec<usize>,
    /// Combiner of the GMF part; the MLP part always concatenates.
    pub combiner: CombinerKind,
    /// Embedding width of the MLP part.
    pub dmlp_embed: usize,
    /// Hidden width of the attention combiner; defaults to the embedding width.
    pub attention_hidden: Option<usize>,
    /// Exclude the target from its own history aggregation.
    pub mask_self: bool,
}

impl ModelSpec {
    /// Defaults for `factors` predictive factors: three-layer tower
    /// `4f → 2f → f`, MLP embedding width `f`, sum combiner.
    pub fn new(kind: ModelKind, factors: usize) -> Self {
        let mlp_layers = match kind {
            ModelKind::Dmlp | ModelKind::Dnmf => tower(3, factors),
            _ => Vec::new(),
        };
        Self {
            kind,
            factors,
            mlp_layers,
            combiner: CombinerKind::Sum,
            dmlp_embed: factors,
            attention_hidden: None,
            mask_self: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ModelKind::ItemPop {
            return Ok(());
        }
        if self.factors == 0 || self.dmlp_embed == 0 {
            return Err(Error::Config("embedding widths must be positive".into()));
        }
        if self.mlp_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if matches!(self.kind, ModelKind::Dgmf | ModelKind::DncfMf) && !self.mlp_layers.is_empty() {
            return Err(Error::Config(format!("{} has no hidden layers", self.kind)));
        }
        if self.kind == ModelKind::DncfMf && self.combiner != CombinerKind::Sum {
            return Err(Error::Config("dncf_mf combines embeddings by element-wise sum".into()));
        }
        if self.attention_hidden == Some(0) {
            return Err(Error::Config("attention hidden width must be positive".into()));
        }
        Ok(())
    }

    fn gmf_part(&self) -> Self {
        Self {
            kind: ModelKind::Dgmf,
            mlp_layers: Vec::new(),
            ..self.clone()
        }
    }

    fn mlp_part(&self) -> Self {
        Self {
            kind: ModelKind::Dmlp,
            ..self.clone()
        }
    }
}

/// The four embedding tables of one dual-embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEmbeddings {
    pub user_id: EmbeddingTable,
    pub item_id: EmbeddingTable,
    pub item_history: EmbeddingTable,
    pub user_history: EmbeddingTable,
}

impl DualEmbeddings {
    fn new(num_users: usize, num_items: usize, k: usize, rng: &mut SeededRng) -> Self {
        Self {
            user_id: EmbeddingTable::new(EmbeddingRole::UserId, num_users, k, INIT_STDDEV, rng),
            item_id: EmbeddingTable::new(EmbeddingRole::ItemId, num_items, k, INIT_STDDEV, rng),
            item_history: EmbeddingTable::new(EmbeddingRole::ItemHistory, num_items, k, INIT_STDDEV, rng),
            user_history: EmbeddingTable::new(EmbeddingRole::UserHistory, num_users, k, INIT_STDDEV, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            user_id: self.user_id.zeros_like(),
            item_id: self.item_id.zeros_like(),
            item_history: self.item_history.zeros_like(),
            user_history: self.user_history.zeros_like(),
        }
    }

    fn width(&self) -> usize {
        self.user_id.width()
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.user_id.params(prefix, out);
        self.item_id.params(prefix, out);
        self.item_history.params(prefix, out);
        self.user_history.params(prefix, out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.user_id.params_mut(prefix, out);
        self.item_id.params_mut(prefix, out);
        self.item_history.params_mut(prefix, out);
        self.user_history.params_mut(prefix, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    User,
    Item,
}

/// Forward record of one side's (ID, history) → combined representation.
#[derive(Debug, Clone)]
struct SideTape {
    id: usize,
    p: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    comb: CombineTape,
}

fn neighbors<'a>(store: &'a InteractionStore, side: Side, u: usize, i: usize, mask_self: bool) -> Neighbors<'a> {
    match (side, mask_self) {
        (Side::User, false) => Neighbors::all(store.user_items(u)),
        (Side::User, true) => Neighbors::without(store.user_items(u), i),
        (Side::Item, false) => Neighbors::all(store.item_users(i)),
        (Side::Item, true) => Neighbors::without(store.item_users(i), u),
    }
}

impl DualEmbeddings {
    fn tables(&self, side: Side) -> (&EmbeddingTable, &EmbeddingTable) {
        match side {
            Side::User => (&self.user_id, &self.item_history),
            Side::Item => (&self.item_id, &self.user_history),
        }
    }

    fn tables_mut(&mut self, side: Side) -> (&mut EmbeddingTable, &mut EmbeddingTable) {
        match side {
            Side::User => (&mut self.user_id, &mut self.item_history),
            Side::Item => (&mut self.item_id, &mut self.user_history),
        }
    }

    fn side_forward(
        &self,
        side: Side,
        id: usize,
        hist: Neighbors<'_>,
        combiner: CombinerKind,
        attn: Option<&AttentionCombiner>,
    ) -> SideTape {
        let (id_table, hist_table) = self.tables(side);
        let p = id_table.table.row(id).to_vec();
        let mut m = vec![0.0; p.len()];
        history_into(hist_table, hist, &mut m);
        let mut v = Vec::with_capacity(2 * p.len());
        let comb = combine_forward(combiner, &p, &m, attn, &mut v);
        SideTape { id, p, m, v, comb }
    }

    #[allow(clippy::too_many_arguments)]
    fn side_backward(
        &self,
        side: Side,
        tape: &SideTape,
        hist: Neighbors<'_>,
        combiner: CombinerKind,
        attn: Option<&AttentionCombiner>,
        dv: &[f64],
        grads: &mut DualEmbeddings,
        attn_grad: Option<&mut AttentionCombiner>,
    ) {
        let k = tape.p.len();
        let mut dp = vec![0.0; k];
        let mut dm = vec![0.0; k];
        combine_backward(combiner, &tape.p, &tape.m, attn, &tape.comb, dv, &mut dp, &mut dm, attn_grad);
        let (g_id, g_hist) = grads.tables_mut(side);
        crate::tensor::axpy(1.0, &dp, g_id.table.row_mut(tape.id));
        history_backward(g_hist, hist, &dm);
    }
}

/// DGMF interaction: `φ = g(p_u, m_u) ⊙ g(q_i, n_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmfTower {
    pub embeddings: DualEmbeddings,
    pub combiner: CombinerKind,
    pub user_attention: Option<AttentionCombiner>,
    pub item_attention: Option<AttentionCombiner>,
}

#[derive(Debug, Clone)]
struct GmfTape {
    user: SideTape,
    item: SideTape,
    phi: Vec<f64>,
}

impl GmfTower {
    fn new(spec: &ModelSpec, num_users: usize, num_items: usize, rng: &mut SeededRng) -> Self {
        let k = spec.factors;
        let embeddings = DualEmbeddings::new(num_users, num_items, k, rng);
        let (user_attention, item_attention) = if spec.combiner == CombinerKind::Attention {
            let hidden = spec.attention_hidden.unwrap_or(k);
            (
                Some(AttentionCombiner::new(k, hidden, INIT_STDDEV, rng)),
                Some(AttentionCombiner::new(k, hidden, INIT_STDDEV, rng)),
            )
        } else {
            (None, None)
        };
        Self {
            embeddings,
            combiner: spec.combiner,
            user_attention,
            item_attention,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            embeddings: self.embeddings.zeros_like(),
            combiner: self.combiner,
            user_attention: self.user_attention.as_ref().map(AttentionCombiner::zeros_like),
            item_attention: self.item_attention.as_ref().map(AttentionCombiner::zeros_like),
        }
    }

    fn output_width(&self) -> usize {
        self.combiner.output_width(self.embeddings.width())
    }

    fn forward(&self, store: &InteractionStore, u: usize, i: usize, mask: bool) -> GmfTape {
        let user = self.embeddings.side_forward(
            Side::User,
            u,
            neighbors(store, Side::User, u, i, mask),
            self.combiner,
            self.user_attention.as_ref(),
        );
        let item = self.embeddings.side_forward(
            Side::Item,
            i,
            neighbors(store, Side::Item, u, i, mask),
            self.combiner,
            self.item_attention.as_ref(),
        );
        let phi = user.v.iter().zip(&item.v).map(|(a, b)| a * b).collect();
        GmfTape { user, item, phi }
    }

    fn backward(&self, store: &InteractionStore, tape: &GmfTape, dphi: &[f64], mask: bool, grads: &mut GmfTower) {
        let (u, i) = (tape.user.id, tape.item.id);
        let dvu: Vec<f64> = dphi.iter().zip(&tape.item.v).map(|(d, b)| d * b).collect();
        let dvi: Vec<f64> = dphi.iter().zip(&tape.user.v).map(|(d, a)| d * a).collect();
        self.embeddings.side_backward(
            Side::User,
            &tape.user,
            neighbors(store, Side::User, u, i, mask),
            self.combiner,
            self.user_attention.as_ref(),
            &dvu,
            &mut grads.embeddings,
            grads.user_attention.as_mut(),
        );
        self.embeddings.side_backward(
            Side::Item,
            &tape.item,
            neighbors(store, Side::Item, u, i, mask),
            self.combiner,
            self.item_attention.as_ref(),
            &dvi,
            &mut grads.embeddings,
            grads.item_attention.as_mut(),
        );
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.embeddings.params(prefix, out);
        if let Some(a) = &self.user_attention {
            a.params(&format!("{prefix}.user_attention"), out);
        }
        if let Some(a) = &self.item_attention {
            a.params(&format!("{prefix}.item_attention"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.embeddings.params_mut(prefix, out);
        if let Some(a) = &mut self.user_attention {
            a.params_mut(&format!("{prefix}.user_attention"), out);
        }
        if let Some(a) = &mut self.item_attention {
            a.params_mut(&format!("{prefix}.item_attention"), out);
        }
    }
}

/// DMLP interaction: a ReLU tower over `(p_u ⊕ m_u) ⊕ (q_i ⊕ n_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpTower {
    pub embeddings: DualEmbeddings,
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
struct MlpTowerTape {
    user: SideTape,
    item: SideTape,
    mlp: MlpTape,
    out: Vec<f64>,
}

impl MlpTower {
    fn new(spec: &ModelSpec, num_users: usize, num_items: usize, rng: &mut SeededRng) -> Self {
        let d0 = spec.dmlp_embed;
        let embeddings = DualEmbeddings::new(num_users, num_items, d0, rng);
        let mut width = 4 * d0;
        let layers = spec
            .mlp_layers
            .iter()
            .map(|&w| {
                let layer = DenseLayer::new(width, w, Activation::Relu, INIT_STDDEV, rng);
                width = w;
                layer
            })
            .collect();
        Self { embeddings, layers }
    }

    fn zeros_like(&self) -> Self {
        Self {
            embeddings: self.embeddings.zeros_like(),
            layers: self.layers.iter().map(DenseLayer::zeros_like).collect(),
        }
    }

    fn output_width(&self) -> usize {
        self.layers
            .last()
            .map_or(4 * self.embeddings.width(), DenseLayer::output_width)
    }

    fn forward(&self, store: &InteractionStore, u: usize, i: usize, mask: bool) -> MlpTowerTape {
        let user = self.embeddings.side_forward(
            Side::User,
            u,
            neighbors(store, Side::User, u, i, mask),
            CombinerKind::Concat,
            None,
        );
        let item = self.embeddings.side_forward(
            Side::Item,
            i,
            neighbors(store, Side::Item, u, i, mask),
            CombinerKind::Concat,
            None,
        );
        let mut z0 = Vec::with_capacity(user.v.len() + item.v.len());
        z0.extend_from_slice(&user.v);
        z0.extend_from_slice(&item.v);
        let (out, mlp) = mlp_forward_slices(&self.layers, &z0);
        MlpTowerTape { user, item, mlp, out }
    }

    fn backward(&self, store: &InteractionStore, tape: &MlpTowerTape, dout: &[f64], mask: bool, grads: &mut MlpTower) {
        let (u, i) = (tape.user.id, tape.item.id);
        let dz0 = mlp_backward(&self.layers, &tape.mlp, dout, &mut grads.layers);
        let split = tape.user.v.len();
        self.embeddings.side_backward(
            Side::User,
            &tape.user,
            neighbors(store, Side::User, u, i, mask),
            CombinerKind::Concat,
            None,
            &dz0[..split],
            &mut grads.embeddings,
            None,
        );
        self.embeddings.side_backward(
            Side::Item,
            &tape.item,
            neighbors(store, Side::Item, u, i, mask),
            CombinerKind::Concat,
            None,
            &dz0[split..],
            &mut grads.embeddings,
            None,
        );
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.embeddings.params(prefix, out);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.params(&format!("{prefix}.layer{l}"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.embeddings.params_mut(prefix, out);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.params_mut(&format!("{prefix}.layer{l}"), out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
enum Net {
    ItemPop,
    Dgmf { gmf: GmfTower, head: OutputHead },
    Dmlp { mlp: MlpTower, head: OutputHead },
    Dnmf { gmf: GmfTower, mlp: MlpTower, head: OutputHead },
    DncfMf { embeddings: DualEmbeddings },
}

/// Parameters of one model instance. A second instance built with
/// [`Model::zeros_like`] serves as its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    num_users: usize,
    num_items: usize,
    net: Net,
}

/// Forward record of one (user, item) pair.
#[derive(Debug, Clone)]
pub struct Tape {
    user: usize,
    item: usize,
    logit: f64,
    gmf: Option<GmfTape>,
    mlp: Option<MlpTowerTape>,
    mf: Option<(SideTape, SideTape)>,
    repr: Vec<f64>,
}

impl Tape {
    pub fn logit(&self) -> f64 {
        self.logit
    }

    pub fn probability(&self) -> f64 {
        sigmoid(self.logit)
    }
}

pub(crate) const GMF_PREFIX: &str = "gmf";
pub(crate) const MLP_PREFIX: &str = "mlp";
const MF_PREFIX: &str = "mf";

impl Model {
    pub fn new(spec: ModelSpec, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = SeededRng::new(seed);
        let net = match spec.kind {
            ModelKind::ItemPop => Net::ItemPop,
            ModelKind::Dgmf => {
                let gmf = GmfTower::new(&spec, num_users, num_items, &mut rng);
                let head = OutputHead::new(gmf.output_width(), INIT_STDDEV, &mut rng);
                Net::Dgmf { gmf, head }
            }
            ModelKind::Dmlp => {
                let mlp = MlpTower::new(&spec, num_users, num_items, &mut rng);
                let head = OutputHead::new(mlp.output_width(), INIT_STDDEV, &mut rng);
                Net::Dmlp { mlp, head }
            }
            ModelKind::Dnmf => {
                let gmf = GmfTower::new(&spec.gmf_part(), num_users, num_items, &mut rng);
                let mlp = MlpTower::new(&spec.mlp_part(), num_users, num_items, &mut rng);
                let head = OutputHead::new(gmf.output_width() + mlp.output_width(), INIT_STDDEV, &mut rng);
                Net::Dnmf { gmf, mlp, head }
            }
            ModelKind::DncfMf => Net::DncfMf {
                embeddings: DualEmbeddings::new(num_users, num_items, spec.factors, &mut rng),
            },
        };
        Ok(Self {
            spec,
            num_users,
            num_items,
            net,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn zeros_like(&self) -> Self {
        let net = match &self.net {
            Net::ItemPop => Net::ItemPop,
            Net::Dgmf { gmf, head } => Net::Dgmf {
                gmf: gmf.zeros_like(),
                head: head.zeros_like(),
            },
            Net::Dmlp { mlp, head } => Net::Dmlp {
                mlp: mlp.zeros_like(),
                head: head.zeros_like(),
            },
            Net::Dnmf { gmf, mlp, head } => Net::Dnmf {
                gmf: gmf.zeros_like(),
                mlp: mlp.zeros_like(),
                head: head.zeros_like(),
            },
            Net::DncfMf { embeddings } => Net::DncfMf {
                embeddings: embeddings.zeros_like(),
            },
        };
        Self {
            spec: self.spec.clone(),
            num_users: self.num_users,
            num_items: self.num_items,
            net,
        }
    }

    /// Stable, complete enumeration of trainable tensors.
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        match &self.net {
            Net::ItemPop => {}
            Net::Dgmf { gmf, head } => {
                gmf.params(GMF_PREFIX, &mut out);
                head.params(&format!("{GMF_PREFIX}.head"), &mut out);
            }
            Net::Dmlp { mlp, head } => {
                mlp.params(MLP_PREFIX, &mut out);
                head.params(&format!("{MLP_PREFIX}.head"), &mut out);
            }
            Net::Dnmf { gmf, mlp, head } => {
                gmf.params(GMF_PREFIX, &mut out);
                mlp.params(MLP_PREFIX, &mut out);
                head.params("head", &mut out);
            }
            Net::DncfMf { embeddings } => embeddings.params(MF_PREFIX, &mut out),
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        match &mut self.net {
            Net::ItemPop => {}
            Net::Dgmf { gmf, head } => {
                gmf.params_mut(GMF_PREFIX, &mut out);
                head.params_mut(&format!("{GMF_PREFIX}.head"), &mut out);
            }
            Net::Dmlp { mlp, head } => {
                mlp.params_mut(MLP_PREFIX, &mut out);
                head.params_mut(&format!("{MLP_PREFIX}.head"), &mut out);
            }
            Net::Dnmf { gmf, mlp, head } => {
                gmf.params_mut(GMF_PREFIX, &mut out);
                mlp.params_mut(MLP_PREFIX, &mut out);
                head.params_mut("head", &mut out);
            }
            Net::DncfMf { embeddings } => embeddings.params_mut(MF_PREFIX, &mut out),
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    pub fn zero(&mut self) {
        for p in self.params_mut() {
            p.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn check_pair(&self, store: &InteractionStore, u: usize, i: usize) -> Result<()> {
        if store.num_users() != self.num_users || store.num_items() != self.num_items {
            return Err(Error::Shape(format!(
                "model built for {}x{} but store is {}x{}",
                self.num_users,
                self.num_items,
                store.num_users(),
                store.num_items()
            )));
        }
        if u >= self.num_users {
            return Err(Error::Index { what: "users", index: u, len: self.num_users });
        }
        if i >= self.num_items {
            return Err(Error::Index { what: "items", index: i, len: self.num_items });
        }
        Ok(())
    }

    /// Forward pass for training. DNCF-MF's raw inner product is treated as
    /// the logit.
    pub fn forward(&self, store: &InteractionStore, u: usize, i: usize) -> Result<Tape> {
        self.check_pair(store, u, i)?;
        Ok(self.forward_unchecked(store, u, i))
    }

    pub(crate) fn forward_unchecked(&self, store: &InteractionStore, u: usize, i: usize) -> Tape {
        let mask = self.spec.mask_self;
        let mut tape = Tape {
            user: u,
            item: i,
            logit: 0.0,
            gmf: None,
            mlp: None,
            mf: None,
            repr: Vec::new(),
        };
        match &self.net {
            Net::ItemPop => {
                tape.logit = store.item_popularity(i) as f64;
            }
            Net::Dgmf { gmf, head } => {
                let g = gmf.forward(store, u, i, mask);
                tape.logit = head.logit(&g.phi);
                tape.repr = g.phi.clone();
                tape.gmf = Some(g);
            }
            Net::Dmlp { mlp, head } => {
                let m = mlp.forward(store, u, i, mask);
                tape.logit = head.logit(&m.out);
                tape.repr = m.out.clone();
                tape.mlp = Some(m);
            }
            Net::Dnmf { gmf, mlp, head } => {
                let g = gmf.forward(store, u, i, mask);
                let m = mlp.forward(store, u, i, mask);
                let mut repr = Vec::with_capacity(g.phi.len() + m.out.len());
                repr.extend_from_slice(&g.phi);
                repr.extend_from_slice(&m.out);
                tape.logit = head.logit(&repr);
                tape.repr = repr;
                tape.gmf = Some(g);
                tape.mlp = Some(m);
            }
            Net::DncfMf { embeddings } => {
                let user = embeddings.side_forward(
                    Side::User,
                    u,
                    neighbors(store, Side::User, u, i, mask),
                    CombinerKind::Sum,
                    None,
                );
                let item = embeddings.side_forward(
                    Side::Item,
                    i,
                    neighbors(store, Side::Item, u, i, mask),
                    CombinerKind::Sum,
                    None,
                );
                tape.logit = dot_slices(&user.v, &item.v);
                tape.mf = Some((user, item));
            }
        }
        tape
    }

    /// Accumulates `dlogit · ∂logit/∂θ` into `grads` for every parameter on
    /// the forward path of `tape`.
    pub fn backward(&self, store: &InteractionStore, tape: &Tape, dlogit: f64, grads: &mut Model) -> Result<()> {
        let mask = self.spec.mask_self;
        let (u, i) = (tape.user, tape.item);
        match (&self.net, &mut grads.net) {
            (Net::Dgmf { gmf, head }, Net::Dgmf { gmf: gg, head: gh }) => {
                let g = tape.gmf.as_ref().ok_or_else(tape_mismatch)?;
                let mut dphi = vec![0.0; g.phi.len()];
                head.backward(&g.phi, dlogit, gh, &mut dphi);
                gmf.backward(store, g, &dphi, mask, gg);
            }
            (Net::Dmlp { mlp, head }, Net::Dmlp { mlp: gm, head: gh }) => {
                let m = tape.mlp.as_ref().ok_or_else(tape_mismatch)?;
                let mut dout = vec![0.0; m.out.len()];
                head.backward(&m.out, dlogit, gh, &mut dout);
                mlp.backward(store, m, &dout, mask, gm);
            }
            (Net::Dnmf { gmf, mlp, head }, Net::Dnmf { gmf: gg, mlp: gm, head: gh }) => {
                let g = tape.gmf.as_ref().ok_or_else(tape_mismatch)?;
                let m = tape.mlp.as_ref().ok_or_else(tape_mismatch)?;
                let mut drepr = vec![0.0; tape.repr.len()];
                head.backward(&tape.repr, dlogit, gh, &mut drepr);
                let split = g.phi.len();
                gmf.backward(store, g, &drepr[..split], mask, gg);
                mlp.backward(store, m, &drepr[split..], mask, gm);
            }
            (Net::DncfMf { embeddings }, Net::DncfMf { embeddings: ge }) => {
                let (user, item) = tape.mf.as_ref().ok_or_else(tape_mismatch)?;
                let dvu: Vec<f64> = item.v.iter().map(|x| dlogit * x).collect();
                let dvi: Vec<f64> = user.v.iter().map(|x| dlogit * x).collect();
                embeddings.side_backward(
                    Side::User,
                    user,
                    neighbors(store, Side::User, u, i, mask),
                    CombinerKind::Sum,
                    None,
                    &dvu,
                    ge,
                    None,
                );
                embeddings.side_backward(
                    Side::Item,
                    item,
                    neighbors(store, Side::Item, u, i, mask),
                    CombinerKind::Sum,
                    None,
                    &dvi,
                    ge,
                    None,
                );
            }
            (Net::ItemPop, Net::ItemPop) => {
                return Err(Error::Config("itempop has no trainable parameters".into()));
            }
            _ => return Err(tape_mismatch()),
        }
        Ok(())
    }

    /// Ranking score: a probability for dgmf/dmlp/dnmf, the raw inner
    /// product for dncf_mf, and training popularity for itempop.
    pub fn score(&self, store: &InteractionStore, u: usize, i: usize) -> Result<f64> {
        self.check_pair(store, u, i)?;
        Ok(self.score_unchecked(store, u, i))
    }

    pub(crate) fn score_unchecked(&self, store: &InteractionStore, u: usize, i: usize) -> f64 {
        let tape = self.forward_unchecked(store, u, i);
        match self.spec.kind {
            ModelKind::ItemPop | ModelKind::DncfMf => tape.logit,
            _ => tape.probability(),
        }
    }

    /// The vector fed to the prediction layer (empty for itempop/dncf_mf).
    pub fn representation(&self, store: &InteractionStore, u: usize, i: usize) -> Result<DenseVector> {
        Ok(self.forward(store, u, i)?.repr.into())
    }

    pub fn head(&self) -> Option<&OutputHead> {
        match &self.net {
            Net::Dgmf { head, .. } | Net::Dmlp { head, .. } | Net::Dnmf { head, .. } => Some(head),
            _ => None,
        }
    }

    pub fn head_mut(&mut self) -> Option<&mut OutputHead> {
        match &mut self.net {
            Net::Dgmf { head, .. } | Net::Dmlp { head, .. } | Net::Dnmf { head, .. } => Some(head),
            _ => None,
        }
    }

    /// Tables of the DNCF-MF model, for analytical tests.
    pub fn dncf_embeddings_mut(&mut self) -> Option<&mut DualEmbeddings> {
        match &mut self.net {
            Net::DncfMf { embeddings } => Some(embeddings),
            _ => None,
        }
    }

    pub fn dncf_embeddings(&self) -> Option<&DualEmbeddings> {
        match &self.net {
            Net::DncfMf { embeddings } => Some(embeddings),
            _ => None,
        }
    }

    /// DNCF-MF with the item-side history table zeroed, so that
    /// score(u,i) = (p_u + |R_u|^{-1/2} Σ_{j∈R_u} y_j)·q_i, the bias-free SVD++ form.
    pub fn recover_svdpp(&self) -> Result<Model> {
        let mut m = self.clone();
        let e = m
            .dncf_embeddings_mut()
            .ok_or_else(|| Error::Config(format!("SVD++ recovery needs dncf_mf, not {}", self.spec.kind)))?;
        e.user_history.table.fill(0.0);
        Ok(m)
    }

    /// [`Model::recover_svdpp`] with the user ID table zeroed as well, leaving
    /// the FISM form (|R_u|^{-1/2} Σ_{j∈R_u} y_j)·q_i without self-exclusion.
    pub fn recover_fism(&self) -> Result<Model> {
        let mut m = self.recover_svdpp()?;
        m.dncf_embeddings_mut().expect("dncf_mf").user_id.table.fill(0.0);
        Ok(m)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tensors: self
                .params()
                .into_iter()
                .map(|p| NamedTensor {
                    name: p.name,
                    dims: p.dims,
                    data: p.data.to_vec(),
                })
                .collect(),
        }
    }

    /// Copies every tensor from `ckpt`; names and shapes must match exactly.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let expected = self.params().len();
        if ckpt.tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} tensors for {}, found {}",
                self.spec.kind,
                ckpt.tensors.len()
            )));
        }
        for p in self.params_mut() {
            let t = ckpt
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", p.name)))?;
            if t.dims != p.dims {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}`: expected shape {:?}, found {:?}",
                    p.name, p.dims, t.dims
                )));
            }
            p.data.copy_from_slice(&t.data);
        }
        Ok(())
    }
}

fn tape_mismatch() -> Error {
    Error::Internal("tape does not match the model graph".into())
}

/// Builds DNMF from pre-trained DGMF and DMLP checkpoints: each part's
/// tensors are copied over, the fusion head is the concatenation of the two
/// pre-trained heads and its bias is their mean.
pub fn fuse(
    dgmf: &Checkpoint,
    dmlp: &Checkpoint,
    spec: &ModelSpec,
    num_users: usize,
    num_items: usize,
) -> Result<Model> {
    if spec.kind != ModelKind::Dnmf {
        return Err(Error::Fusion(format!("fusion target must be dnmf, not {}", spec.kind)));
    }
    let mut model = Model::new(spec.clone(), num_users, num_items, 0)?;
    let gmf_head = format!("{GMF_PREFIX}.head.");
    let mlp_head = format!("{MLP_PREFIX}.head.");
    let fetch = |ckpt: &Checkpoint, name: &str, dims: &[usize], source: &str| -> Result<Vec<f64>> {
        let t = ckpt
            .get(name)
            .ok_or_else(|| Error::Fusion(format!("{source} checkpoint lacks tensor `{name}`")))?;
        if t.dims != dims {
            return Err(Error::Fusion(format!(
                "tensor `{name}`: {source} checkpoint has shape {:?}, dnmf expects {:?}",
                t.dims, dims
            )));
        }
        Ok(t.data.clone())
    };

    let gh = dgmf.get(&format!("{gmf_head}h"));
    let mh = dmlp.get(&format!("{mlp_head}h"));
    let gb = dgmf.get(&format!("{gmf_head}b"));
    let mb = dmlp.get(&format!("{mlp_head}b"));
    let (Some(gh), Some(mh), Some(gb), Some(mb)) = (gh, mh, gb, mb) else {
        return Err(Error::Fusion("pre-trained checkpoints must contain output heads".into()));
    };

    for p in model.params_mut() {
        let data = if p.name.starts_with(&format!("{GMF_PREFIX}.")) {
            fetch(dgmf, &p.name, &p.dims, "dgmf")?
        } else if p.name.starts_with(&format!("{MLP_PREFIX}.")) {
            fetch(dmlp, &p.name, &p.dims, "dmlp")?
        } else if p.name == "head.h" {
            let mut h = gh.data.clone();
            h.extend_from_slice(&mh.data);
            if h.len() != p.data.len() {
                return Err(Error::Fusion(format!(
                    "fused head has width {}, dnmf expects {}",
                    h.len(),
                    p.data.len()
                )));
            }
            h
        } else if p.name == "head.b" {
            vec![0.5 * (gb.data[0] + mb.data[0])]
        } else {
            return Err(Error::Internal(format!("unexpected dnmf tensor `{}`", p.name)));
        };
        p.data.copy_from_slice(&data);
    }
    Ok(model)
}
