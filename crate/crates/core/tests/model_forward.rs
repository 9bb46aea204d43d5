mod common;

use common::{finite_diff, max_grad_error, randomize, rng, small_model};
use srn::model::params::{ru_concat, ru_deep_gate, side_weight};
use srn::model::{
    build_backbone, forward_image, forward_srn, side_output, ModelConfig, ParamVars, RuOrder,
};
use srn::supervision::{
    beta, predict, total_loss, total_loss_value, BalanceMode, GroundTruth, LossConfig,
};
use srn::{Graph, SrnError, Tensor};

fn image(seed: u64, h: usize, w: usize) -> Tensor {
    common::random_tensor(&mut rng(seed), &[1, 1, h, w]).map(|v| (v + 1.0) / 2.0)
}

fn gt_for(h: usize, w: usize) -> GroundTruth {
    let mut mask = srn::image::BinaryMap::new(w, h);
    for x in 4..w - 4 {
        mask.set(x, h / 2, true);
    }
    GroundTruth::new(mask)
}

#[test]
fn zero_init_is_a_fixpoint() {
    for order in [
        RuOrder::DeepToShallow,
        RuOrder::ShallowToDeep,
        RuOrder::NoRuBaseline,
    ] {
        let cfg = ModelConfig {
            ru_order: order,
            ..ModelConfig::default()
        };
        let p = build_backbone(&cfg, 5).unwrap();
        let fwd = forward_srn(&image(1, 32, 32), &p, &cfg).unwrap();
        let trace = fwd.trace(&p).unwrap();
        assert!(trace
            .side_outputs
            .iter()
            .all(|s| s.data().iter().all(|&v| v == 0.0)));
        assert!(trace
            .ru_outputs
            .iter()
            .all(|s| s.data().iter().all(|&v| v == 0.0)));
        let pred = predict(&trace).unwrap();
        assert_eq!(pred.dims(), &[1, 1, 32, 32]);
        assert!(pred.data().iter().all(|&v| v == 0.5));

        let gt = gt_for(32, 32);
        let b = beta(&gt).unwrap();
        let (pos, neg) = (1.0 - b, b);
        let analytic =
            (pos * gt.positives() as f64 + neg * (gt.len() - gt.positives()) as f64) * 2f64.ln();
        let total = total_loss_value(&trace, &gt, &LossConfig::default()).unwrap();
        let outputs = trace.supervised.len() as f64;
        assert!(
            (total - outputs * analytic).abs() < 1e-9,
            "{order}: {total} vs {}",
            outputs * analytic
        );
    }
}

#[test]
fn baseline_has_no_residuals() {
    let cfg = small_model(RuOrder::NoRuBaseline);
    let p = build_backbone(&cfg, 1).unwrap();
    let fwd = forward_srn(&image(2, 16, 16), &p, &cfg).unwrap();
    let trace = fwd.trace(&p).unwrap();
    assert!(trace.residuals.is_empty());
    assert!(trace.final_logits.is_none());
    let names: Vec<&str> = fwd.supervised.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["side1", "side2", "side3"]);
}

#[test]
fn deep_to_shallow_resolutions_double() {
    let cfg = ModelConfig::default();
    let mut p = build_backbone(&cfg, 1).unwrap();
    randomize(&mut p, &mut rng(3), 0.3);
    let fwd = forward_srn(&image(4, 32, 32), &p, &cfg).unwrap();
    let trace = fwd.trace(&p).unwrap();
    assert_eq!(trace.basic_output.as_ref().unwrap().dims(), &[1, 1, 8, 8]);
    let dims: Vec<usize> = trace.ru_outputs.iter().map(|r| r.dims()[2]).collect();
    assert_eq!(dims, [16, 32]);
    let names: Vec<&str> = fwd.supervised.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["basic", "ru2", "ru1"]);
    for s in &trace.supervised {
        assert_eq!(s.dims(), &[1, 1, 32, 32]);
    }
}

#[test]
fn shallow_to_deep_runs_at_full_resolution() {
    let cfg = small_model(RuOrder::ShallowToDeep);
    let mut p = build_backbone(&cfg, 1).unwrap();
    randomize(&mut p, &mut rng(5), 0.3);
    let fwd = forward_srn(&image(6, 16, 16), &p, &cfg).unwrap();
    let trace = fwd.trace(&p).unwrap();
    assert_eq!(trace.basic_output.as_ref().unwrap().dims(), &[1, 1, 16, 16]);
    assert!(trace.ru_outputs.iter().all(|r| r.dims() == [1, 1, 16, 16]));
    let names: Vec<&str> = fwd.supervised.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["basic", "ru2", "ru3"]);
}

#[test]
fn indivisible_input_rejected_and_padded_path_crops() {
    let cfg = small_model(RuOrder::DeepToShallow);
    let p = build_backbone(&cfg, 1).unwrap();
    let img = image(7, 30, 21);
    assert!(matches!(
        forward_srn(&img, &p, &cfg),
        Err(SrnError::Input(_))
    ));
    for order in [
        RuOrder::DeepToShallow,
        RuOrder::ShallowToDeep,
        RuOrder::NoRuBaseline,
    ] {
        let cfg = small_model(order);
        let p = build_backbone(&cfg, 1).unwrap();
        let fwd = forward_image(&img, &p, &cfg).unwrap();
        let trace = fwd.trace(&p).unwrap();
        assert_eq!(predict(&trace).unwrap().dims(), &[1, 1, 30, 21]);
    }
}

#[test]
fn wrong_channel_count_rejected() {
    let cfg = small_model(RuOrder::DeepToShallow);
    let p = build_backbone(&cfg, 1).unwrap();
    let img = Tensor::zeros(&[1, 3, 16, 16]);
    assert!(matches!(
        forward_srn(&img, &p, &cfg),
        Err(SrnError::Input(_))
    ));
}

#[test]
fn side_output_zero_identity_and_unknown_stage() {
    let cfg = ModelConfig {
        stages: vec![
            srn::model::StageSpec {
                convs: 1,
                channels: 1
            };
            2
        ],
        side_output_stages: vec![1, 2],
        ..ModelConfig::default()
    };
    let mut p = build_backbone(&cfg, 1).unwrap();
    let mut g = Graph::new();
    let vars = ParamVars::register(&mut g, &p);
    let feat = g.input(image(8, 8, 8));
    let s = side_output(&mut g, &vars, feat, 1).unwrap();
    assert!(g.value(s).data().iter().all(|&v| v == 0.0));
    assert!(matches!(
        side_output(&mut g, &vars, feat, 9),
        Err(SrnError::Config(_))
    ));

    *p.get_mut(&side_weight(1)).unwrap() = Tensor::full(&[1, 1, 1, 1], 1.0);
    let mut g = Graph::new();
    let vars = ParamVars::register(&mut g, &p);
    let feat = g.input(image(8, 8, 8));
    let s = side_output(&mut g, &vars, feat, 1).unwrap();
    assert_eq!(g.value(s), g.value(feat));
}

#[test]
fn side_output_weight_gradient() {
    let cfg = ModelConfig::default();
    let mut p = build_backbone(&cfg, 1).unwrap();
    randomize(&mut p, &mut rng(9), 0.5);
    let feat = common::random_tensor(&mut rng(10), &[1, 16, 6, 6]);
    let run = |p: &srn::model::ParamStore| {
        let mut g = Graph::new();
        let vars = ParamVars::register(&mut g, p);
        let f = g.input(feat.clone());
        let s = side_output(&mut g, &vars, f, 2).unwrap();
        let l = g.sum(s).unwrap();
        (g, vars, l)
    };
    let (mut g, vars, l) = run(&p);
    g.backward(l).unwrap();
    let analytic = g
        .grad(vars.get(&side_weight(2)).unwrap())
        .unwrap()
        .data()
        .to_vec();
    let w0 = p.get(&side_weight(2)).unwrap().clone();
    let numeric = finite_diff(&w0, 1e-5, |w| {
        let mut q = p.clone();
        *q.get_mut(&side_weight(2)).unwrap() = w.clone();
        let (g, _, l) = run(&q);
        g.value(l).item()
    });
    assert!(max_grad_error(&analytic, &numeric, 1e-9) < 1e-5);
}

#[test]
fn cut_chain_degenerates_to_side_outputs() {
    let cfg = small_model(RuOrder::DeepToShallow);
    let mut p = build_backbone(&cfg, 1).unwrap();
    randomize(&mut p, &mut rng(11), 0.3);
    for s in [1, 2] {
        *p.get_mut(&ru_concat(s)).unwrap() = Tensor::full(&[1, 1, 1, 1], 1.0);
        *p.get_mut(&ru_deep_gate(s)).unwrap() = Tensor::zeros(&[1, 1, 1, 1]);
    }
    let fwd = forward_srn(&image(12, 16, 16), &p, &cfg).unwrap();
    let trace = fwd.trace(&p).unwrap();
    // stacking order is ru2 then ru1; side_outputs are shallow to deep
    assert_eq!(trace.ru_outputs[0], trace.side_outputs[1]);
    assert_eq!(trace.ru_outputs[1], trace.side_outputs[0]);
}

#[test]
fn total_loss_graph_matches_value_path() {
    for order in [
        RuOrder::DeepToShallow,
        RuOrder::ShallowToDeep,
        RuOrder::NoRuBaseline,
    ] {
        let cfg = small_model(order);
        let mut p = build_backbone(&cfg, 2).unwrap();
        randomize(&mut p, &mut rng(13), 0.4);
        let gt = gt_for(16, 16);
        let loss = LossConfig {
            alphas: vec![0.5, 1.0, 2.0],
            balance_mode: BalanceMode::Literal,
        };
        let mut fwd = forward_srn(&image(14, 16, 16), &p, &cfg).unwrap();
        let parts = total_loss(&mut fwd, &gt, &loss).unwrap();
        let trace = fwd.trace(&p).unwrap();
        let graph_total = fwd.graph.value(parts.total).item();
        let sum_parts: f64 = parts
            .parts
            .iter()
            .zip(&loss.alphas)
            .map(|((_, v), a)| a * fwd.graph.value(*v).item())
            .sum();
        assert!((graph_total - sum_parts).abs() < 1e-12 * graph_total.abs().max(1.0));
        let value = total_loss_value(&trace, &gt, &loss).unwrap();
        assert!((graph_total - value).abs() < 1e-12 * value.abs().max(1.0));
    }
}

#[test]
fn prediction_is_monotone_in_final_logits() {
    let cfg = small_model(RuOrder::DeepToShallow);
    let mut p = build_backbone(&cfg, 2).unwrap();
    randomize(&mut p, &mut rng(15), 0.4);
    let fwd = forward_srn(&image(16, 16, 16), &p, &cfg).unwrap();
    let mut trace = fwd.trace(&p).unwrap();
    let before = predict(&trace).unwrap();
    trace.final_logits = trace.final_logits.map(|t| t.map(|v| v + 0.5));
    let after = predict(&trace).unwrap();
    assert!(before.data().iter().zip(after.data()).all(|(b, a)| a > b));
    assert!(after.data().iter().all(|&v| v > 0.0 && v < 1.0));
}
