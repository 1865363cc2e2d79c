#![allow(dead_code)]

use std::path::PathBuf;

use dncf::models::{Model, ModelKind, ModelSpec};
use dncf::nn::{bce_loss, sigmoid, CombinerKind};
use dncf::tensor::SeededRng;
use dncf::InteractionStore;

/// 5 users x 5 items; user 4 and item 4 have no interactions.
pub fn tiny_store() -> InteractionStore {
    let pairs = [(0, 0), (0, 1), (0, 3), (1, 1), (1, 2), (2, 0), (2, 2), (2, 3), (3, 3)];
    InteractionStore::from_pairs(5, 5, pairs).unwrap().0
}

/// Random store whose last user has an empty history.
pub fn random_store(users: usize, items: usize, density: f64, seed: u64) -> InteractionStore {
    let mut rng = SeededRng::new(seed);
    let mut pairs = Vec::new();
    for u in 0..users.saturating_sub(1) {
        for i in 0..items {
            if rng.normal(0.0, 1.0).abs() < density {
                pairs.push((u, i));
            }
        }
    }
    InteractionStore::from_pairs(users, items, pairs).unwrap().0
}

/// Redraws every parameter from N(0, stddev²), biases included.
pub fn randomize(model: &mut Model, stddev: f64, seed: u64) {
    let mut rng = SeededRng::new(seed);
    for p in model.params_mut() {
        for x in p.data.iter_mut() {
            *x = rng.normal(0.0, stddev);
        }
    }
}

/// Every trainable variant the gradient check covers, with a label.
pub fn gradient_variants(k: usize) -> Vec<(String, ModelSpec)> {
    let mut out = Vec::new();
    for c in CombinerKind::ALL {
        let mut s = ModelSpec::new(ModelKind::Dgmf, k);
        s.combiner = c;
        out.push((format!("dgmf/{c}"), s));
    }
    for kind in [ModelKind::Dmlp, ModelKind::Dnmf, ModelKind::DncfMf] {
        out.push((kind.to_string(), ModelSpec::new(kind, k)));
    }
    let mut s = ModelSpec::new(ModelKind::Dnmf, k);
    s.combiner = CombinerKind::Attention;
    s.mask_self = true;
    out.push(("dnmf/attention/masked".into(), s));
    out
}

fn example_loss(model: &Model, store: &InteractionStore, u: usize, i: usize, y: f64) -> f64 {
    bce_loss(sigmoid(model.forward(store, u, i).unwrap().logit()), y)
}

/// Denominator floor of the relative error.
pub const GRAD_FLOOR: f64 = 1e-5;

pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares backprop against central differences on every scalar parameter,
/// one labelled (u,i) example at a time, over all cells of `store`.
pub fn gradient_check(spec: &ModelSpec, store: &InteractionStore, seed: u64) -> GradReport {
    const H: f64 = 1e-6;
    let mut model = Model::new(spec.clone(), store.num_users(), store.num_items(), seed).unwrap();
    // wide init keeps ReLU pre-activations away from the kink at 0
    randomize(&mut model, 0.3, seed + 1);
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for u in 0..store.num_users() {
        for i in 0..store.num_items() {
            let y = if store.contains(u, i) { 1.0 } else { 0.0 };
            let mut grads = model.zeros_like();
            let tape = model.forward(store, u, i).unwrap();
            model.backward(store, &tape, sigmoid(tape.logit()) - y, &mut grads).unwrap();
            for (t, g) in grads.params().into_iter().enumerate() {
                for (idx, &a) in g.data.iter().enumerate() {
                    let mut probe = model.clone();
                    let original = probe.params()[t].data[idx];
                    probe.params_mut()[t].data[idx] = original + H;
                    let up = example_loss(&probe, store, u, i, y);
                    probe.params_mut()[t].data[idx] = original - H;
                    let down = example_loss(&probe, store, u, i, y);
                    let numeric = (up - down) / (2.0 * H);
                    // differencing noise is about 1e-10 here, so components under
                    // the floor are in effect compared in absolute terms
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
                    if rel > report.max_rel_err {
                        report.max_rel_err = rel;
                        report.worst = format!("({u},{i}) {}[{idx}]: backprop {a:e}, numeric {numeric:e}", g.name);
                    }
                    report.checked += 1;
                }
            }
        }
    }
    report
}

/// (p_u + |R_u|^{-1/2} Σ_{j∈R_u} y_j)·q_i written out from the raw tables.
pub fn svdpp_direct(model: &Model, store: &InteractionStore, u: usize, i: usize) -> f64 {
    let e = model.dncf_embeddings().unwrap();
    let hist = store.user_items(u);
    let c = if hist.is_empty() { 0.0 } else { 1.0 / (hist.len() as f64).sqrt() };
    let q = e.item_id.table.row(i);
    let p = e.user_id.table.row(u);
    (0..q.len())
        .map(|k| {
            let y: f64 = hist.iter().map(|&j| e.item_history.table.get(j, k)).sum();
            (p[k] + c * y) * q[k]
        })
        .sum()
}

/// |R_u|^{-1/2} Σ_{j∈R_u} y_j·q_i.
pub fn fism_direct(model: &Model, store: &InteractionStore, u: usize, i: usize) -> f64 {
    let e = model.dncf_embeddings().unwrap();
    let hist = store.user_items(u);
    if hist.is_empty() {
        return 0.0;
    }
    let q = e.item_id.table.row(i);
    let agg: f64 = hist
        .iter()
        .map(|&j| e.item_history.table.row(j).iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    agg / (hist.len() as f64).sqrt()
}

/// Train/test/negative files of the processed Last.FM data, if present.
/// Looks in `$DNCF_LASTFM_DIR`, then `<workspace>/data`.
pub fn lastfm_paths() -> Option<(PathBuf, PathBuf, PathBuf)> {
    let dir = std::env::var_os("DNCF_LASTFM_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let f = |ext: &str| dir.join(format!("lastfm.{ext}"));
    let paths = (f("train.rating"), f("test.rating"), f("test.negative"));
    (paths.0.is_file() && paths.1.is_file() && paths.2.is_file()).then_some(paths)
}

pub fn lastfm_missing() -> String {
    "BLOCKED: processed Last.FM files not found (set DNCF_LASTFM_DIR to a directory with \
     lastfm.train.rating, lastfm.test.rating, lastfm.test.negative)"
        .into()
}
