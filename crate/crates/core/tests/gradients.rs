mod common;

use common::*;
use freespace::alignment::{deform_var, encode_var, gate_var};
use freespace::config::{AttentionOrientation, ModelConfig};
use freespace::fusion::forward_var;

fn assert_fd(name: &str, rep: FdReport) {
    assert!(rep.checked > 0, "{name}: nothing checked");
    assert!(rep.worst_rel < 1e-3, "{name}: worst {:.2e} at {}", rep.worst_rel, rep.worst_name);
}

#[test]
fn encoder_and_alignment_pieces() {
    let cfg = fd_config();
    let model = randomized_model(cfg.clone(), 4);
    let mut r = rng(40);
    let image = [random_tensor(&[3, 16, 16], 1.0, &mut r)];
    assert_fd("encoder", finite_difference_check(model.params(), &image, 4, 1, |g, s, v| encode_var(g, s, &cfg, v[0])));
    let fmap = [random_tensor(&[8, 4, 4], 1.0, &mut r)];
    assert_fd("dcn", finite_difference_check(model.params(), &fmap, 8, 2, |g, s, v| deform_var(g, s, &cfg, v[0])));
    assert_fd("gate", finite_difference_check(model.params(), &[], 8, 3, |g, s, _| gate_var(g, s, &cfg, 3)));
}

fn full_forward(cfg: ModelConfig, seed: u64) {
    let model = randomized_model(cfg.clone(), seed);
    let mut r = rng(seed);
    let images: Vec<_> = (0..3).map(|_| random_tensor(&[3, 16, 16], 1.0, &mut r)).collect();
    let rep = finite_difference_check(model.params(), &images, 3, seed, |g, s, v| {
        forward_var(g, s, &cfg, (v[0], 7), &[(v[1], 6), (v[2], 4)]).unwrap().logits
    });
    assert_fd("forward", rep);
}

#[test]
fn full_forward_default_orientation() {
    full_forward(fd_config(), 5);
}

#[test]
fn full_forward_previous_queries_current() {
    full_forward(
        ModelConfig {
            attention_orientation: AttentionOrientation::PreviousQueriesCurrent,
            attention_depth: 2,
            ..fd_config()
        },
        6,
    );
}

#[test]
fn full_forward_without_modules() {
    full_forward(
        ModelConfig {
            use_tpe: false,
            use_man: false,
            use_dcn: false,
            ..fd_config()
        },
        7,
    );
}
