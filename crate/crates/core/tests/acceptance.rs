//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the PASS/FAIL lines are always printed.
//!
//! Criteria 4-6 need the processed Last.FM files (see `common::lastfm_paths`);
//! without them they report BLOCKED and fail. They train full models, so run
//! them with `cargo test --release --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;

use common::*;
use dncf::checkpoint::Checkpoint;
use dncf::cli::{pretrain_prepared, train_prepared, Prepared, RunArgs, RunConfig};
use dncf::data::{sample_epoch, TEST_NEGATIVES};
use dncf::eval::{hr_at_k, ndcg_at_k, rank_candidates, report_from_ranks};
use dncf::synth::{generate, SynthConfig};
use dncf::tensor::SeededRng;
use dncf::{evaluate, fit, load_dataset, InteractionStore, Model, ModelKind, ModelSpec, TrainSettings};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c1_metric_formulas() -> Outcome {
    let mut checked = 0;
    for rank in 1..=100usize {
        for k in 1..=10usize {
            // brute force: place the positive at `rank` in an explicit list
            let list: Vec<bool> = (1..=100).map(|r| r == rank).collect();
            let top = &list[..k];
            let hr = if top.iter().any(|&x| x) { 1.0 } else { 0.0 };
            let ndcg: f64 = top
                .iter()
                .enumerate()
                .filter(|(_, &x)| x)
                .map(|(pos, _)| std::f64::consts::LN_2 / ((pos + 2) as f64).ln())
                .sum();
            ensure(hr_at_k(rank, k) == hr, format!("HR rank {rank} k {k}"))?;
            ensure((ndcg_at_k(rank, k) - ndcg).abs() <= 1e-12, format!("NDCG rank {rank} k {k}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (rank, k) cells exact"))
}

fn c2_gradients() -> Outcome {
    let store = tiny_store();
    let mut worst = (0.0, String::new());
    let mut variants = 0;
    for (label, spec) in gradient_variants(4) {
        let r = gradient_check(&spec, &store, 11);
        ensure(r.max_rel_err < 1e-4, format!("{label}: rel err {:e} at {}", r.max_rel_err, r.worst))?;
        if r.max_rel_err > worst.0 {
            worst = (r.max_rel_err, label);
        }
        variants += 1;
    }
    Ok(format!("{variants} variants, max rel err {:.2e} ({})", worst.0, worst.1))
}

fn c3_recovery() -> Outcome {
    let store = random_store(30, 40, 0.3, 3);
    let mut model = Model::new(ModelSpec::new(ModelKind::DncfMf, 8), 30, 40, 21).map_err(|e| e.to_string())?;
    randomize(&mut model, 0.3, 21);
    let svdpp = model.recover_svdpp().map_err(|e| e.to_string())?;
    let fism = model.recover_fism().map_err(|e| e.to_string())?;
    let mut rng = SeededRng::new(99);
    let mut max_err: f64 = 0.0;
    for _ in 0..1000 {
        let (u, i) = (rng.below(30), rng.below(40));
        let a = (svdpp.score(&store, u, i).unwrap() - svdpp_direct(&svdpp, &store, u, i)).abs();
        let b = (fism.score(&store, u, i).unwrap() - fism_direct(&fism, &store, u, i)).abs();
        max_err = max_err.max(a).max(b);
    }
    ensure(max_err <= 1e-12, format!("max deviation {max_err:e}"))?;
    Ok(format!("1000 pairs, max deviation {max_err:.1e}"))
}

fn lastfm_config(model: &str, seed: u64) -> Result<RunConfig, String> {
    let (train, test, negatives) = lastfm_paths().ok_or_else(lastfm_missing)?;
    RunArgs {
        model: Some(model.into()),
        factors: Some(64),
        seed: Some(seed),
        train: Some(train),
        test: Some(test),
        negatives: Some(negatives),
        ..RunArgs::default()
    }
    .resolve()
    .map_err(|e| e.to_string())
}

fn c4_itempop() -> Outcome {
    let cfg = lastfm_config("itempop", 0)?;
    let ds = load_dataset(&cfg.train, &cfg.test, &cfg.negatives).map_err(|e| e.to_string())?;
    ensure(ds.store.num_interactions() + ds.test.len() == 69_149, "interaction count differs from 69,149")
        .unwrap_or_else(|e| eprintln!("note: {e}"));
    let pop = Model::new(cfg.spec.clone(), ds.store.num_users(), ds.store.num_items(), 0).unwrap();
    let r = evaluate(&pop, &ds.store, &ds.test, 10).map_err(|e| e.to_string())?;
    let (hr, ndcg) = (r.hr_at(10), r.ndcg_at(10));
    let msg = format!("HR@10 {hr:.4} (target 0.6628), NDCG@10 {ndcg:.4} (target 0.3862)");
    ensure((hr - 0.6628).abs() <= 0.01 && (ndcg - 0.3862).abs() <= 0.01, msg.clone())?;
    Ok(msg)
}

fn best_of_seeds(model: &str, prepared: &mut Option<Prepared>) -> Result<f64, String> {
    let mut best: f64 = 0.0;
    for seed in 0..3 {
        let cfg = lastfm_config(model, seed)?;
        let p = Prepared::load(&cfg).map_err(|e| e.to_string())?;
        let s = train_prepared(&cfg, &p).map_err(|e| e.to_string())?;
        best = best.max(s.test.hr_at(10));
        prepared.get_or_insert(p);
    }
    Ok(best)
}

fn c5_neural() -> Outcome {
    lastfm_paths().ok_or_else(lastfm_missing)?;
    let mut p = None;
    let dgmf = best_of_seeds("dgmf", &mut p)?;
    let dmlp = best_of_seeds("dmlp", &mut p)?;
    let msg = format!("best-of-3 HR@10: DGMF {dgmf:.4} (need 0.87), DMLP {dmlp:.4} (need 0.86)");
    ensure(dgmf >= 0.87 && dmlp >= 0.86, msg.clone())?;
    Ok(msg)
}

fn c6_pretraining() -> Outcome {
    let cfg = lastfm_config("dnmf", 0)?;
    let prepared = Prepared::load(&cfg).map_err(|e| e.to_string())?;
    let scratch = train_prepared(&cfg, &prepared).map_err(|e| e.to_string())?;
    let pre = pretrain_prepared(&cfg, &prepared, 0.001, None, None, None).map_err(|e| e.to_string())?;
    let (a, b) = (pre.dnmf.test.hr_at(10), scratch.test.hr_at(10));
    let parts = [&pre.dgmf, &pre.dmlp].iter().filter_map(|p| p.as_ref()).map(|p| p.test.hr_at(10)).fold(0.0, f64::max);
    let msg = format!(
        "HR@10 with pre-training {a:.4}, without {b:.4} (fused before fine-tuning {:.4}, best part {parts:.4})",
        pre.fused_test.hr_at(10)
    );
    ensure(a + 0.005 >= b, msg.clone())?;
    Ok(msg)
}

fn synth_files(dir: &Path) -> (String, String, String) {
    let ds = generate(&SynthConfig::default()).unwrap();
    let f = |n: &str| dir.join(n).to_string_lossy().into_owned();
    ds.store.write_rating_file(Path::new(&f("s.train.rating"))).unwrap();
    dncf::data::write_test_files(&ds.test, Path::new(&f("s.test.rating")), Path::new(&f("s.test.negative"))).unwrap();
    (f("s.train.rating"), f("s.test.rating"), f("s.test.negative"))
}

fn deterministic_run(dir: &Path, files: &(String, String, String), tag: &str) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let metrics = dir.join(format!("{tag}.jsonl"));
    let ckpt = dir.join(format!("{tag}.ckpt"));
    let out = Command::new(env!("CARGO_BIN_EXE_dncf"))
        .args(["train", "--model", "dnmf", "--factors", "8", "--epochs", "2", "--combiner", "attention"])
        .args(["--seed", "5", "--deterministic", "--train", &files.0, "--test", &files.1, "--negatives", &files.2])
        .arg("--metrics")
        .arg(&metrics)
        .arg("--checkpoint")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (out.stdout, std::fs::read(metrics).unwrap(), std::fs::read(ckpt).unwrap())
}

fn c7_invariants() -> Outcome {
    let ds = generate(&SynthConfig::default()).unwrap();
    let store = &ds.store;
    // dual adjacency
    store.check_invariants().map_err(|e| e.to_string())?;
    for u in 0..store.num_users() {
        for i in 0..store.num_items() {
            ensure(
                store.user_items(u).contains(&i) == store.item_users(i).contains(&u),
                format!("adjacency ({u},{i})"),
            )?;
        }
    }
    // epoch size and negative validity
    for neg in [1, 4, 7] {
        let e = sample_epoch(store, neg, 3).map_err(|e| e.to_string())?;
        ensure(e.len() == (1 + neg) * store.num_interactions(), format!("epoch size at ratio {neg}"))?;
        for k in 0..e.len() {
            let observed = store.contains(e.users[k], e.items[k]);
            ensure(observed == (e.labels[k] == 1.0), format!("label of ({}, {})", e.users[k], e.items[k]))?;
        }
    }
    for t in &ds.test {
        ensure(t.negative_items.len() == TEST_NEGATIVES, "negative count")?;
        ensure(t.negative_items.iter().all(|&j| !store.contains(t.user, j) && j != t.positive_item), "test negative")?;
    }
    // monotone metrics, rank invariance under an increasing transform
    let mut model = Model::new(ModelSpec::new(ModelKind::Dgmf, 8), 50, 200, 1).unwrap();
    randomize(&mut model, 0.3, 2);
    let report = evaluate(&model, store, &ds.test, 10).map_err(|e| e.to_string())?;
    report.check().map_err(|e| e.to_string())?;
    let direct = |s: &InteractionStore, u: usize, i: usize| model.score(s, u, i).unwrap();
    let warped = |s: &InteractionStore, u: usize, i: usize| (3.0 * model.score(s, u, i).unwrap()).exp() - 7.0;
    for t in &ds.test {
        ensure(
            rank_candidates(&direct, store, t).unwrap() == rank_candidates(&warped, store, t).unwrap(),
            format!("ranking of user {} changed", t.user),
        )?;
    }
    let ranks: Vec<usize> = ds.test.iter().map(|t| rank_candidates(&model, store, t).unwrap().position_of_positive).collect();
    ensure(report_from_ranks(&ranks, 10).hr == report.hr, "histogram aggregation")?;
    // checkpoint round trip
    let ckpt = model.to_checkpoint();
    let back = Checkpoint::from_bytes(&ckpt.to_bytes()).map_err(|e| e.to_string())?;
    let mut loaded = Model::new(ModelSpec::new(ModelKind::Dgmf, 8), 50, 200, 77).unwrap();
    loaded.load_checkpoint(&back).map_err(|e| e.to_string())?;
    let bits = |m: &Model| m.params().iter().flat_map(|p| p.data.iter().map(|x| x.to_bits())).collect::<Vec<_>>();
    ensure(bits(&loaded) == bits(&model), "checkpoint round trip")?;
    // bitwise reproducible runs
    let dir = tempfile::tempdir().unwrap();
    let files = synth_files(dir.path());
    let a = deterministic_run(dir.path(), &files, "a");
    let b = deterministic_run(dir.path(), &files, "b");
    ensure(a == b, "deterministic reruns differ")?;
    Ok("adjacency, epoch size, negatives, monotone metrics, rank invariance, checkpoint bits, rerun bits".into())
}

fn c8_training_sanity() -> Outcome {
    let ds = generate(&SynthConfig::default()).unwrap();
    let (nu, ni) = (ds.store.num_users(), ds.store.num_items());
    let pop = Model::new(ModelSpec::new(ModelKind::ItemPop, 16), nu, ni, 0).unwrap();
    let pop_hr = evaluate(&pop, &ds.store, &ds.test, 10).unwrap().hr_at(10);
    let settings = TrainSettings {
        epochs: 5,
        lr: 0.01,
        patience: None,
        ..TrainSettings::default()
    };
    let mut model = Model::new(ModelSpec::new(ModelKind::Dgmf, 16), nu, ni, 0).unwrap();
    let out = fit(&mut model, &ds.store, None, &settings, |_| Ok(())).map_err(|e| e.to_string())?;
    let hr = evaluate(&out.best, &ds.store, &ds.test, 10).unwrap().hr_at(10);
    let losses: Vec<String> = out.losses.iter().map(|l| format!("{l:.4}")).collect();
    let msg = format!("losses [{}], HR@10 {hr:.3} vs ItemPop {pop_hr:.3}", losses.join(", "));
    ensure(out.losses.len() == 5 && out.losses.windows(2).all(|w| w[1] < w[0]), msg.clone())?;
    ensure(hr > pop_hr, msg.clone())?;
    Ok(msg)
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("metric formulas", c1_metric_formulas),
        ("gradient check", c2_gradients),
        ("SVD++/FISM recovery", c3_recovery),
        ("ItemPop on Last.FM", c4_itempop),
        ("DGMF/DMLP on Last.FM", c5_neural),
        ("pre-training utility", c6_pretraining),
        ("invariant suite", c7_invariants),
        ("training sanity", c8_training_sanity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", n + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.ends_with(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("{id} [{name}]: PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} [{name}]: FAIL - {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
