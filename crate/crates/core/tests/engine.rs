mod support;

use dnq::net::{
    forward, make_synthetic_dataset, train_sgd, accuracy, Dataset, LayerDef, NetworkModel, SgdConfig,
    SyntheticSpec,
};

fn toy_model(seed: u64) -> NetworkModel {
    let mut m = NetworkModel::build(
        &[1, 4, 4],
        &[
            LayerDef::Conv2d { out_channels: 2, kernel: 3, stride: 1, padding: 1 },
            LayerDef::Dense { units: 5 },
            LayerDef::Dense { units: 3 },
        ],
        seed,
    )
    .unwrap();
    for (li, layer) in m.layers_mut().iter_mut().enumerate() {
        for (i, b) in layer.bias.data_mut().iter_mut().enumerate() {
            *b = 0.05 * (li + 1) as f64 * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
    }
    m
}

fn toy_batch(seed: u64, n: usize) -> Dataset {
    let spec = SyntheticSpec::new(3, n, 1, vec![1, 4, 4]);
    make_synthetic_dataset(seed, &spec).unwrap().train
}

#[test]
#[ignore]
fn dump_reference_fixture() {
    let m = toy_model(42);
    let b = toy_batch(42, 4);
    let layers: Vec<String> = m
        .layers()
        .iter()
        .map(|l| format!("{{\"w\": {:?}, \"b\": {:?}}}", l.weight.data(), l.bias.data()))
        .collect();
    println!(
        "{{\"x\": {:?}, \"y\": {:?}, \"layers\": [{}]}}",
        b.inputs.data(),
        b.labels,
        layers.join(", ")
    );
}

/// Loss computed by `fixtures/reference_forward.py` (numpy) from the weights
/// and batch dumped in `fixtures/seed42_toy.json`.
const NUMPY_SEED42_LOSS: f64 = 1.0193370868901188;

#[test]
fn seed42_loss_matches_numpy_reference() {
    let out = forward(&toy_model(42), &toy_batch(42, 4)).unwrap();
    assert!((out.loss - NUMPY_SEED42_LOSS).abs() < 1e-10, "{}", out.loss);
}

fn check_gradients(model: &NetworkModel, batch: &Dataset) -> usize {
    support::engine_gradient_check(model, batch).unwrap()
}

#[test]
fn gradients_match_finite_differences_on_three_layer_net() {
    let n = check_gradients(&toy_model(3), &toy_batch(5, 6));
    assert_eq!(n, 18 + 2 + 160 + 5 + 15 + 3);
}

#[test]
fn gradients_match_finite_differences_strided_multichannel_conv() {
    let model = NetworkModel::build(
        &[2, 5, 5],
        &[
            LayerDef::Conv2d { out_channels: 3, kernel: 3, stride: 2, padding: 1 },
            LayerDef::Conv2d { out_channels: 2, kernel: 2, stride: 1, padding: 0 },
            LayerDef::Dense { units: 4 },
        ],
        17,
    )
    .unwrap();
    let spec = SyntheticSpec::new(4, 5, 1, vec![2, 5, 5]);
    let batch = make_synthetic_dataset(23, &spec).unwrap().train;
    check_gradients(&model, &batch);
}

#[test]
fn gradients_match_finite_differences_randomized_dense() {
    for seed in 0..5 {
        let model = NetworkModel::build(
            &[6],
            &[LayerDef::Dense { units: 7 }, LayerDef::Dense { units: 5 }, LayerDef::Dense { units: 3 }],
            100 + seed,
        )
        .unwrap();
        let spec = SyntheticSpec::new(3, 8, 1, vec![6]);
        check_gradients(&model, &make_synthetic_dataset(200 + seed, &spec).unwrap().train);
    }
}

#[test]
fn separable_two_class_blobs_are_learned() {
    let mut spec = SyntheticSpec::new(2, 400, 200, vec![8]);
    spec.separation = 1.5;
    spec.noise = 0.5;
    let data = make_synthetic_dataset(7, &spec).unwrap();
    let mut model =
        NetworkModel::build(&[8], &[LayerDef::Dense { units: 16 }, LayerDef::Dense { units: 2 }], 1).unwrap();
    let cfg = SgdConfig { steps: 2000, lr: 0.05, batch_size: 32 };
    train_sgd(&mut model, &data.train, &cfg, 3, None).unwrap();
    let acc = accuracy(&model, &data.train).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn training_is_bit_deterministic() {
    let spec = SyntheticSpec::new(3, 60, 10, vec![1, 4, 4]);
    let data = make_synthetic_dataset(9, &spec).unwrap();
    let cfg = SgdConfig { steps: 50, lr: 0.05, batch_size: 16 };
    let mut a = toy_model(1);
    let mut b = toy_model(1);
    train_sgd(&mut a, &data.train, &cfg, 4, None).unwrap();
    train_sgd(&mut b, &data.train, &cfg, 4, None).unwrap();
    assert_eq!(dnq::net::encode_checkpoint(&a), dnq::net::encode_checkpoint(&b));
}

#[test]
fn engine_outputs_stay_finite() {
    let out = forward(&toy_model(8), &toy_batch(8, 10)).unwrap();
    assert!(out.logits.all_finite() && out.loss.is_finite());
}
