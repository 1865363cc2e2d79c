mod common;

use common::{gradient_check, gradient_variants, tiny_store};

#[test]
fn backprop_matches_central_differences() {
    let store = tiny_store();
    for (label, spec) in gradient_variants(4) {
        let r = gradient_check(&spec, &store, 11);
        assert!(r.checked > 0);
        assert!(r.max_rel_err < 1e-4, "{label}: rel err {:e} at {}", r.max_rel_err, r.worst);
    }
}

#[test]
fn custom_tower_and_attention_width() {
    let store = tiny_store();
    let mut spec = dncf::ModelSpec::new(dncf::ModelKind::Dnmf, 3);
    spec.mlp_layers = vec![5];
    spec.dmlp_embed = 2;
    spec.attention_hidden = Some(6);
    spec.combiner = dncf::CombinerKind::Attention;
    let r = gradient_check(&spec, &store, 5);
    assert!(r.max_rel_err < 1e-4, "{}", r.worst);
}
