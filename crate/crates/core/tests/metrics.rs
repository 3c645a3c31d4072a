mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;

use steerdp::groups::{CyclicGroup, FieldType};
use steerdp::layers::{build_resnet9, ConvKind, FilterBank, GroupSpec, Layer, Linear, Model, ModelSpec};
use steerdp::metrics::{brier, evaluate, fir_probe, grad_cam, guided_backprop, l0_sparsity, Heatmap, HeatmapSource};
use steerdp::tensor::{GeometricTensor, Matrix};

#[test]
fn brier_fixtures() {
    let uniform = Matrix::new(1, 4, vec![0.25; 4]).unwrap();
    assert!((brier(&uniform, &[2]).unwrap() - 0.75).abs() < 1e-15);
    let hit = Matrix::new(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
    assert_eq!(brier(&hit, &[1]).unwrap(), 0.0);
    assert_eq!(brier(&hit, &[0]).unwrap(), 2.0);
    let bad = Matrix::new(1, 2, vec![0.7, 0.7]).unwrap();
    assert!(brier(&bad, &[0]).is_err());
}

#[test]
fn sparsity_fixtures() {
    assert!((l0_sparsity(&[1e-6f64, 0.5, -2e-5], 1e-5) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(l0_sparsity::<f32>(&[], 1e-5), 1.0);
    assert_eq!(l0_sparsity(&[0.0f32, 0.0], 1e-5), 1.0);
    assert_eq!(l0_sparsity(&[1e-5f64, -1e-5], 1e-5), 1.0);
}

proptest! {
    #[test]
    fn brier_lies_in_zero_to_two(raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 1..8), seed in any::<u64>()) {
        let mut r = rng(seed);
        let rows = raw.len();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for row in &raw {
            let s: f64 = row.iter().sum::<f64>() + 1e-9;
            data.extend(row.iter().map(|v| (v + 1e-9 / 5.0) / s));
            labels.push(r.random_range(0..5));
        }
        let b = brier(&Matrix::new(rows, 5, data).unwrap(), &labels).unwrap();
        prop_assert!((0.0..=2.0).contains(&b));
    }

    #[test]
    fn sparsity_is_monotone_in_the_threshold(g in prop::collection::vec(-1.0f64..1.0, 0..50), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(l0_sparsity(&g, lo) <= l0_sparsity(&g, hi));
    }
}

fn c4_model(seed: u64) -> Model<f32> {
    let spec = ModelSpec::new(GroupSpec::Cyclic(4), [8, 16, 32], 4).with_restriction(false);
    build_resnet9(&spec, &mut rng(seed)).unwrap()
}

fn image(model: &Model<f32>, seed: u64) -> GeometricTensor<f32> {
    uniform_tensor(&mut rng(seed), [1, 3, 28, 28], *model.input_type())
}

fn map_diff(a: &Heatmap, b: &Heatmap) -> f64 {
    max_abs_diff(&a.values, &b.values)
}

#[test]
fn saliency_rotates_with_the_input_for_an_invariant_model() {
    let model = c4_model(3);
    for seed in 0..4 {
        let x = image(&model, 10 + seed);
        for class in [0, 3] {
            for k in 1..4 {
                let xr = x.rot90(k);
                let cam = grad_cam(&model, &x, class).unwrap();
                assert!(cam.raw_max > 0.0);
                let err = map_diff(&grad_cam(&model, &xr, class).unwrap(), &cam.rot90(k));
                assert!(err <= 1e-3, "grad-cam seed {seed} class {class} rot {k}: {err}");
                let gb = guided_backprop(&model, &x, class).unwrap();
                let err = map_diff(&guided_backprop(&model, &xr, class).unwrap(), &gb.rot90(k));
                assert!(err <= 1e-3, "guided seed {seed} class {class} rot {k}: {err}");
            }
        }
    }
}

fn scale_head(model: &Model<f32>, lambda: f32) -> Model<f32> {
    let mut m = model.clone();
    for l in m.layers_mut() {
        if let Layer::Linear(head) = l {
            head.weight.iter_mut().for_each(|w| *w *= lambda);
        }
    }
    m
}

#[test]
fn grad_cam_ignores_positive_head_scaling() {
    let model = c4_model(4);
    let x = image(&model, 5);
    let base = grad_cam(&model, &x, 1).unwrap();
    for lambda in [0.1, 3.0, 250.0] {
        let scaled = grad_cam(&scale_head(&model, lambda), &x, 1).unwrap();
        assert!(map_diff(&base, &scaled) <= 1e-5, "lambda {lambda}");
    }
}

#[test]
fn zero_head_gives_an_empty_map() {
    let model = scale_head(&c4_model(4), 0.0);
    let x = image(&model, 6);
    for map in [grad_cam(&model, &x, 0).unwrap(), guided_backprop(&model, &x, 0).unwrap()] {
        assert_eq!(map.raw_max, 0.0);
        assert!(map.values.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn guided_backprop_of_a_linear_model_is_its_weight_row() {
    let mut head = Linear::<f64>::zeros(3 * 4 * 4, 2);
    head.init_uniform(&mut rng(7));
    let w = head.weight.clone();
    let model = Model::new(vec![Layer::Linear(head)], FieldType::plain(3), CyclicGroup::new(1).unwrap(), None).unwrap();
    let x = uniform_tensor::<f64>(&mut rng(8), [1, 3, 4, 4], FieldType::plain(3));
    let map = guided_backprop(&model, &x, 1).unwrap();
    let row = &w[48..96];
    let raw: Vec<f64> = (0..16).map(|p| (0..3).map(|c| row[c * 16 + p].abs()).fold(0.0, f64::max)).collect();
    let expect = Heatmap::from_raw(4, 4, raw, HeatmapSource::GuidedBackprop).unwrap();
    assert!(map_diff(&map, &expect) < 1e-12);
}

#[test]
fn dead_relus_give_empty_maps() {
    let e = CyclicGroup::new(1).unwrap();
    let mut conv = FilterBank::<f64>::zeros(ConvKind::Plain, e, 3, 2, 3).unwrap();
    conv.set_canonical(&vec![-1.0; 2 * 3 * 9]);
    let mut head = Linear::zeros(2, 2);
    head.init_uniform(&mut rng(9));
    let layers = vec![Layer::Conv(conv), Layer::Relu, Layer::GlobalAvgPool, Layer::Linear(head)];
    let model = Model::new(layers, FieldType::plain(3), e, Some(1)).unwrap();
    // positive image, negative filters: every pre-activation is <= 0
    let x = GeometricTensor::new(vec![0.5; 3 * 6 * 6], [1, 3, 6, 6], FieldType::plain(3)).unwrap();
    for map in [guided_backprop(&model, &x, 0).unwrap(), grad_cam(&model, &x, 1).unwrap()] {
        assert!(map.values.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn saliency_rejects_bad_requests() {
    let model = c4_model(1);
    let x = image(&model, 1);
    assert!(grad_cam(&model, &x, 4).is_err());
    let two = GeometricTensor::from_samples(vec![x.sample(0), x.sample(0)], *x.ftype()).unwrap();
    assert!(guided_backprop(&model, &two, 0).is_err());
}

#[test]
fn fir_of_a_zero_model_is_zero() {
    let mut model = c4_model(2);
    let n = model.param_count();
    model.set_parameters(&vec![0.0; n]).unwrap();
    let fir = fir_probe(&model, 28, 28).unwrap();
    assert_eq!(fir.len(), 8);
    assert!(fir.iter().all(|e| e.magnitude == 0.0));
    assert_eq!(fir[0].kind, "lift_conv");
}

#[test]
fn doubling_the_stem_doubles_its_impulse_response() {
    let model = c4_model(2);
    let mut doubled = model.clone();
    if let Layer::Conv(stem) = &mut doubled.layers_mut()[0] {
        let w: Vec<f32> = stem.canonical().iter().map(|v| 2.0 * v).collect();
        stem.set_canonical(&w);
    }
    let a = fir_probe(&model, 28, 28).unwrap();
    let b = fir_probe(&doubled, 28, 28).unwrap();
    assert!(a[0].magnitude > 0.0);
    assert!((b[0].magnitude / a[0].magnitude - 2.0).abs() < 1e-6);
}

#[test]
fn evaluation_scores_are_consistent() {
    let model = c4_model(5);
    let x = uniform_tensor::<f32>(&mut rng(6), [6, 3, 28, 28], *model.input_type());
    let labels = [0, 1, 2, 3, 0, 1];
    let r = evaluate(&model, &x, &labels).unwrap();
    assert_eq!(r.samples, 6);
    assert!((0.0..=1.0).contains(&r.accuracy));
    assert!((0.0..=2.0).contains(&r.brier));
    assert!((r.loss - model.loss(&x, &labels).unwrap() as f64).abs() < 1e-5);
}
