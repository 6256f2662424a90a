use candle_core::{DType, Device, Tensor};
use rand::Rng;

use super::*;

fn cifar_spec() -> NetworkSpec {
    NetworkSpec {
        encoder: EncoderSpec::reduced_resnet18(),
        projector: Some(HeadSpec::default()),
        predictor: Some(HeadSpec::default()),
        classifier: None,
    }
}

fn mlp_spec() -> NetworkSpec {
    NetworkSpec {
        encoder: EncoderSpec::Mlp {
            input_dim: 12,
            hidden: vec![16, 8],
            batch_norm: false,
        },
        projector: Some(HeadSpec { hidden: 10, output: 6 }),
        predictor: Some(HeadSpec { hidden: 10, output: 6 }),
        classifier: None,
    }
}

fn images(n: usize, dims: &[usize], seed: u64) -> Tensor {
    let mut rng = StreamRng::seed_from_u64(seed);
    let numel = n * dims.iter().product::<usize>();
    let data: Vec<f32> = (0..numel).map(|_| rng.random::<f32>()).collect();
    let mut shape = vec![n];
    shape.extend_from_slice(dims);
    Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
}

fn twin(spec: &NetworkSpec, rate: f64) -> TwinNetwork {
    let mut rng = StreamRng::seed_from_u64(11);
    let online = Network::new(spec, &Device::Cpu, DType::F32, &mut rng).unwrap();
    TwinNetwork::new(online, rate, &mut rng).unwrap()
}

#[test]
fn reduced_resnet_shapes_and_finiteness() {
    let net = twin(&cifar_spec(), 0.99);
    let x = images(10, &[3, 32, 32], 1);
    let out = net.forward_online(&x, true).unwrap();
    assert_eq!(out.embedding.dims(), &[10, 160]);
    assert_eq!(out.projection.as_ref().unwrap().dims(), &[10, 128]);
    assert_eq!(out.prediction.as_ref().unwrap().dims(), &[10, 128]);
    assert_eq!(net.forward_target(&x).unwrap().dims(), &[10, 128]);
    let flat: Vec<f32> = out.embedding.flatten_all().unwrap().to_vec1().unwrap();
    assert!(flat.iter().all(|v| v.is_finite()));
}

#[test]
fn rejects_wrong_input_shape() {
    let net = twin(&cifar_spec(), 0.99);
    assert!(matches!(net.forward_online(&images(2, &[1, 32, 32], 0), false), Err(Error::Shape(_))));
}

#[test]
fn zeroed_final_projector_layer_outputs_bias() {
    let net = twin(&mlp_spec(), 0.9);
    let out_layer = net.online.projector().unwrap().output_layer();
    out_layer.weight().set(&out_layer.weight().zeros_like().unwrap()).unwrap();
    let z = net.forward_online(&images(5, &[12], 2), false).unwrap().projection.unwrap();
    let bias: Vec<f32> = out_layer.bias().to_vec1().unwrap();
    for row in z.to_vec2::<f32>().unwrap() {
        assert_eq!(row, bias);
    }
}

#[test]
fn eval_mode_is_deterministic_and_target_matches_copy() {
    let net = twin(&cifar_spec(), 0.99);
    let x = images(3, &[3, 32, 32], 3);
    let a = net.forward_online(&x, false).unwrap().projection.unwrap();
    let b = net.forward_online(&x, false).unwrap().projection.unwrap();
    let zt = net.forward_target(&x).unwrap();
    let a: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(a, b.flatten_all().unwrap().to_vec1::<f32>().unwrap());
    assert_eq!(a, zt.flatten_all().unwrap().to_vec1::<f32>().unwrap());
}

#[test]
fn target_receives_no_gradient() {
    let net = twin(&mlp_spec(), 0.9);
    let x = images(4, &[12], 4);
    let out = net.forward_online(&x, true).unwrap();
    let zt = net.forward_target(&x).unwrap();
    let loss = (out.prediction.unwrap() * zt).unwrap().sum_all().unwrap();
    let grads = loss.backward().unwrap();
    for (_, v) in net.target_params().iter() {
        assert!(grads.get(v.as_tensor()).is_none());
    }
    let any_online = net.online.params().trainable_vars().any(|(_, v)| grads.get(v.as_tensor()).is_some());
    assert!(any_online);
}

fn fill(store: &ParamStore, value: f32) {
    for (_, v) in store.iter() {
        v.set(&(v.ones_like().unwrap() * value as f64).unwrap()).unwrap();
    }
}

fn all_values(store: &ParamStore) -> Vec<f32> {
    store
        .iter()
        .flat_map(|(_, v)| v.flatten_all().unwrap().to_vec1::<f32>().unwrap())
        .collect()
}

#[test]
fn ema_fixed_points_and_scalar_mix() {
    let frozen = twin(&mlp_spec(), 1.0);
    let before = all_values(frozen.target_params());
    fill(frozen.online.params(), 5.0);
    frozen.ema_update().unwrap();
    assert_eq!(all_values(frozen.target_params()), before);

    let copy = twin(&mlp_spec(), 0.0);
    fill(copy.online.params(), 3.0);
    copy.ema_update().unwrap();
    assert!(all_values(copy.target_params()).iter().all(|&v| v == 3.0));

    let mix = twin(&mlp_spec(), 0.9);
    fill(mix.target_params(), 2.0);
    fill(mix.online.params(), 1.0);
    mix.ema_update().unwrap();
    assert!(all_values(mix.target_params()).iter().all(|&v| (v - 1.9).abs() < 1e-6));
}

#[test]
fn predictor_must_match_projector() {
    let mut spec = mlp_spec();
    spec.predictor = Some(HeadSpec { hidden: 4, output: 5 });
    assert!(spec.validate().is_err());
}

#[test]
fn snapshot_restore_round_trip() {
    let a = twin(&mlp_spec(), 0.5);
    let b = {
        let mut rng = StreamRng::seed_from_u64(99);
        Network::new(&mlp_spec(), &Device::Cpu, DType::F32, &mut rng).unwrap()
    };
    b.params().restore(&a.online.params().snapshot().unwrap()).unwrap();
    assert_eq!(all_values(b.params()), all_values(a.online.params()));
}
