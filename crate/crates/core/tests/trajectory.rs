//! Learner steps against straight-line f64 references.

mod common;

use std::collections::BTreeMap;

use candle_core::DType;
use common::oracles::{central_difference, supbyol_oracle, buffer_ce_oracle, ccp_incoming_oracle, unit};
use common::reference_net::{self, Params};
use protoreplay::data::synthetic::SyntheticSpec;
use protoreplay::data::{AugmentationPolicy, ImageShape, LabeledBatch};
use protoreplay::learner::{network_spec, Learner, LearnerConfig, Method};
use protoreplay::model::{EncoderSpec, HeadSpec, ParamStore};

const SHAPE: ImageShape = ImageShape {
    channels: 1,
    height: 2,
    width: 3,
};
const LAYERS: usize = 1;

fn read_params(store: &ParamStore) -> Params {
    let mut values = BTreeMap::new();
    let mut shapes = BTreeMap::new();
    for (name, var) in store.iter() {
        let t = var.as_tensor();
        shapes.insert(name.to_string(), t.dims().to_vec());
        values.insert(
            name.to_string(),
            t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap(),
        );
    }
    Params { values, shapes }
}

fn rows(batch: &LabeledBatch) -> Vec<Vec<f64>> {
    (0..batch.len()).map(|i| batch.image(i).iter().map(|&v| v as f64).collect()).collect()
}

fn learner(method: Method, lr: f64) -> Learner {
    let mut cfg = LearnerConfig::new(method);
    cfg.dtype = DType::F64;
    cfg.learning_rate = lr;
    cfg.augment = AugmentationPolicy::disabled();
    cfg.buffer_capacity = 20;
    cfg.rehearsal_batch_size = 10;
    let encoder = EncoderSpec::Mlp {
        input_dim: SHAPE.numel(),
        hidden: vec![5],
        batch_norm: false,
    };
    let spec = network_spec(method, encoder, HeadSpec { hidden: 4, output: 3 }, 2);
    Learner::new(cfg, &spec, 11).unwrap()
}

fn class_batches() -> (LabeledBatch, LabeledBatch) {
    let spec = SyntheticSpec {
        num_classes: 2,
        shape: SHAPE,
        train_per_class: 10,
        test_per_class: 1,
        spread: 0.3,
        noise: 0.2,
    };
    let data = spec.generate(5).unwrap();
    (data.train.select_classes(&[0]), data.train.select_classes(&[1]))
}

fn proto(learner: &Learner, c: u32) -> Vec<f64> {
    let var = learner.prototypes().unwrap().var(c).unwrap();
    var.as_tensor().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

/// One reference CCP step; returns the momentum target used for each replayed class.
fn reference_ccp_step(
    theta: &mut Params,
    protos: &mut BTreeMap<u32, Vec<f64>>,
    incoming: &[Vec<f64>],
    label: u32,
    replay: Option<&[Vec<f64>]>,
    replay_label: u32,
    lr: f64,
    tau: f64,
    alpha: f64,
) -> Option<Vec<f64>> {
    let mut coords: Vec<(String, usize)> = theta.coordinates(|_| true);
    let plen = protos[&label].len();
    for k in 0..plen {
        coords.push(("proto".into(), k));
    }
    let unpack = |x: &[f64]| {
        let mut p = theta.clone();
        let mut c = protos.clone();
        for (v, (name, k)) in x.iter().zip(&coords) {
            if name == "proto" {
                c.get_mut(&label).unwrap()[*k] = *v;
            } else {
                p.values.get_mut(name).unwrap()[*k] = *v;
            }
        }
        (p, c)
    };
    let loss = |x: &[f64]| {
        let (p, c) = unpack(x);
        let list: Vec<(u32, Vec<f64>)> = c.into_iter().collect();
        let mut ext: Vec<Vec<f64>> = incoming.iter().map(|s| reference_net::project(&p, LAYERS, s)).collect();
        ext.extend(ext.clone());
        let labels = vec![label; incoming.len()];
        let mut l = ccp_incoming_oracle(&ext, &labels, &list, tau);
        if let Some(r) = replay {
            let z: Vec<Vec<f64>> = r.iter().map(|s| reference_net::project(&p, LAYERS, s)).collect();
            l += buffer_ce_oracle(&z, &vec![replay_label; r.len()], &list, tau, true);
        }
        l
    };
    let x0: Vec<f64> = coords
        .iter()
        .map(|(name, k)| if name == "proto" { protos[&label][*k] } else { theta.get(name)[*k] })
        .collect();
    let g = central_difference(loss, &x0, 1e-6);

    // Momentum target from projections taken before the step.
    let c_bar = replay.map(|r| {
        let mut mean = vec![0.0; plen];
        for s in r {
            for (m, v) in mean.iter_mut().zip(reference_net::project(theta, LAYERS, s)) {
                *m += v / r.len() as f64;
            }
        }
        unit(&mean)
    });

    let stepped: Vec<f64> = x0.iter().zip(&g).map(|(x, d)| x - lr * d).collect();
    let (p, mut c) = unpack(&stepped);
    *theta = p;
    let fresh = unit(&c[&label]);
    c.insert(label, fresh);
    if let Some(cb) = &c_bar {
        let old = &c[&replay_label];
        let mixed: Vec<f64> = old.iter().zip(cb).map(|(o, m)| alpha * o + (1.0 - alpha) * m).collect();
        c.insert(replay_label, unit(&mixed));
    }
    *protos = c;
    c_bar
}

fn max_param_gap(a: &Params, b: &Params) -> f64 {
    let mut gap: f64 = 0.0;
    for (name, v) in &a.values {
        for (x, y) in v.iter().zip(b.get(name)) {
            gap = gap.max((x - y).abs());
        }
    }
    gap
}

#[test]
fn two_step_ccp_trajectory_matches_reference() {
    let (b0, b1) = class_batches();
    let mut l = learner(Method::Ccp, 0.1);
    {
        let store = l.prototypes_mut().unwrap();
        store.register_class(0).unwrap();
        store.register_class(1).unwrap();
    }
    let initial = read_params(l.online().params());
    let mut theta = initial.clone();
    let mut protos: BTreeMap<u32, Vec<f64>> = [(0, proto(&l, 0)), (1, proto(&l, 1))].into_iter().collect();
    let cfg = l.config().clone();

    let log1 = l.train_step(&b0).unwrap();
    assert!(log1.momentum_targets.is_empty());
    let x0 = rows(&b0);
    reference_ccp_step(&mut theta, &mut protos, &x0, 0, None, 0, cfg.learning_rate, cfg.ccp_temperature, cfg.prototype_momentum);
    assert!(max_param_gap(&theta, &read_params(l.online().params())) < 1e-6);

    let log2 = l.train_step(&b1).unwrap();
    assert_eq!(log2.replayed, 10);
    let c_bar = reference_ccp_step(
        &mut theta,
        &mut protos,
        &rows(&b1),
        1,
        Some(&x0),
        0,
        cfg.learning_rate,
        cfg.ccp_temperature,
        cfg.prototype_momentum,
    )
    .unwrap();

    let gap = max_param_gap(&theta, &read_params(l.online().params()));
    assert!(gap < 1e-6, "parameter gap {gap}");
    assert!(max_param_gap(&theta, &initial) > 1e-3, "two steps should move the parameters");
    for c in [0, 1] {
        for (x, y) in protos[&c].iter().zip(proto(&l, c)) {
            assert!((x - y).abs() < 1e-6, "prototype {c}: {x} vs {y}");
        }
    }
    for (x, y) in c_bar.iter().zip(&log2.momentum_targets[&0]) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn first_supbyol_step_loss_is_the_oracle_composition() {
    let (b0, _) = class_batches();
    let pair = LabeledBatch {
        shape: b0.shape,
        images: b0.images[..2 * SHAPE.numel()].to_vec(),
        labels: vec![0, 0],
        indices: vec![0, 1],
    };
    let mut l = learner(Method::SupByol, 0.1);
    let theta = read_params(l.online().params());
    let tau = l.config().byol_temperature;
    let x = rows(&pair);
    let pred: Vec<Vec<f64>> = x.iter().map(|s| reference_net::predict(&theta, LAYERS, s)).collect();
    let mut targets: Vec<Vec<f64>> = x.iter().map(|s| reference_net::project(&theta, LAYERS, s)).collect();
    targets.extend(targets.clone());
    let expected = supbyol_oracle(&pred, &targets, &[0, 0], tau);

    let log = l.train_step(&pair).unwrap();
    assert!(log.replay_loss.is_none());
    assert!((log.incoming_loss - expected).abs() < 1e-9, "{} vs {expected}", log.incoming_loss);
    assert!((log.total_loss - expected).abs() < 1e-9);
}

#[test]
fn er_step_matches_reference_sgd() {
    let (b0, b1) = class_batches();
    let mut l = learner(Method::Er, 0.1);
    let mut theta = read_params(l.online().params());
    let lr = l.config().learning_rate;

    // Cross-entropy over the seen-class columns of the linear head.
    let step = |theta: &mut Params, xs: &[Vec<f64>], ys: &[u32], seen: &[u32]| {
        let coords = theta.coordinates(|_| true);
        let base = theta.clone();
        let loss = |v: &[f64]| {
            let mut p = base.clone();
            for (x, (name, k)) in v.iter().zip(&coords) {
                p.values.get_mut(name).unwrap()[*k] = *x;
            }
            let mut total = 0.0;
            for (s, y) in xs.iter().zip(ys) {
                let lg = reference_net::logits(&p, LAYERS, s);
                let picked: Vec<f64> = seen.iter().map(|&c| lg[c as usize]).collect();
                let lse = picked.iter().map(|v| v.exp()).sum::<f64>().ln();
                total += lse - lg[*y as usize];
            }
            total / xs.len() as f64
        };
        let x0: Vec<f64> = coords.iter().map(|(n, k)| base.get(n)[*k]).collect();
        let g = central_difference(loss, &x0, 1e-6);
        for ((name, k), d) in coords.iter().zip(g) {
            theta.values.get_mut(name).unwrap()[*k] -= lr * d;
        }
    };

    l.train_step(&b0).unwrap();
    let x0 = rows(&b0);
    step(&mut theta, &x0, &b0.labels, &[0]);
    assert!(max_param_gap(&theta, &read_params(l.online().params())) < 1e-6);

    l.train_step(&b1).unwrap();
    let mut xs = rows(&b1);
    xs.extend(x0);
    let mut ys = b1.labels.clone();
    ys.extend(&b0.labels);
    step(&mut theta, &xs, &ys, &[0, 1]);
    let gap = max_param_gap(&theta, &read_params(l.online().params()));
    assert!(gap < 1e-6, "parameter gap {gap}");
}
