use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::ConvLayer;

fn t(c: usize, h: usize, w: usize, data: &[f64]) -> Tensor3<f64> {
    Tensor3::from_vec(Shape::new(c, h, w), data.to_vec()).unwrap()
}

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor3<f64> {
    Tensor3::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}

fn random_nbhd(shape: Shape, n: usize, include_self: bool, seed: u64) -> Neighborhood<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let current = FrameFeature::new(0, random(shape, &mut rng));
    let neighbors = (0..n)
        .map(|k| FrameFeature::new(k as i64 + 1, random(shape, &mut rng)))
        .collect();
    Neighborhood::new(current, neighbors, include_self).unwrap()
}

/// Single 1x1 layer mapping `in_c` relation channels to `c` outputs.
fn one_layer(in_c: usize, c: usize, w: &[f64], b: &[f64]) -> MiniNetParams<f64> {
    MiniNetParams::new(vec![ConvLayer::new(in_c, c, 1, w.to_vec(), b.to_vec()).unwrap()]).unwrap()
}

#[test]
fn concat4_layout() {
    let out = relation_features(&t(1, 1, 1, &[1.0]), &t(1, 1, 1, &[3.0]), RelationVariant::Concat4).unwrap();
    assert_eq!(out.data(), &[1.0, 3.0, -2.0, 2.0]);
}

#[test]
fn diff_of_equal_inputs_is_zero() {
    let a = t(2, 1, 2, &[1.0, -2.0, 3.5, 0.25]);
    let out = relation_features(&a, &a, RelationVariant::Diff).unwrap();
    assert_eq!(out, Tensor3::zeros(a.shape()));
}

#[test]
fn relation_channel_counts() {
    let a = Tensor3::<f64>::ones(Shape::new(3, 2, 2));
    for v in RelationVariant::ALL {
        let out = relation_features(&a, &a, v).unwrap();
        assert_eq!(out.channels(), 3 * v.channel_multiplier(), "{v}");
        assert_eq!((out.height(), out.width()), (2, 2));
    }
}

#[test]
fn relation_shape_mismatch() {
    let a = Tensor3::<f64>::ones(Shape::new(1, 2, 2));
    let b = Tensor3::<f64>::ones(Shape::new(1, 2, 3));
    assert!(matches!(
        relation_features(&a, &b, RelationVariant::Sum),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn mini_net_zero_params() {
    let spec = MiniNetSpec::default();
    let params = MiniNetParams::<f64>::zeros(spec, RelationVariant::Concat4, 2).unwrap();
    let g = Tensor3::full(Shape::new(8, 3, 3), 0.7);
    assert_eq!(mini_network_forward(&g, &params).unwrap(), Tensor3::zeros(Shape::new(2, 3, 3)));
}

#[test]
fn mini_net_channel_sum() {
    let params = one_layer(4, 1, &[1.0; 4], &[0.0]);
    let g = t(4, 1, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    assert_eq!(mini_network_forward(&g, &params).unwrap().data(), &[16.0, 20.0]);
}

#[test]
fn mini_net_has_no_final_activation() {
    let params = one_layer(1, 1, &[-1.0], &[0.0]);
    let out = mini_network_forward(&t(1, 1, 1, &[2.0]), &params).unwrap();
    assert_eq!(out.data(), &[-2.0]);
}

#[test]
fn mini_net_channel_incompatibility() {
    let params = one_layer(4, 1, &[1.0; 4], &[0.0]);
    assert!(mini_network_forward(&Tensor3::<f64>::ones(Shape::new(3, 1, 1)), &params).is_err());
}

#[test]
fn default_mini_net_is_three_by_three_by_three() {
    let spec = BlenderConfig::default().mini_net();
    assert_eq!((spec.layers, spec.kernel), (3, 3));
}

#[test]
fn adaptive_weights_zero_and_shapes() {
    let shape = Shape::new(3, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random(shape, &mut rng), random(shape, &mut rng));
    for v in RelationVariant::ALL {
        let zeros = MiniNetParams::zeros(MiniNetSpec::default(), v, 3).unwrap();
        assert_eq!(adaptive_weights(&a, &b, &zeros, v).unwrap(), Tensor3::zeros(shape));
        let params = MiniNetParams::init(MiniNetSpec::default(), v, 3, 9).unwrap();
        assert_eq!(adaptive_weights(&a, &b, &params, v).unwrap().shape(), shape, "{v}");
    }
}

#[test]
fn adaptive_weights_is_the_composition() {
    let shape = Shape::new(2, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, b) = (random(shape, &mut rng), random(shape, &mut rng));
    let v = RelationVariant::Concat4;
    let params = MiniNetParams::init(MiniNetSpec::default(), v, 2, 3).unwrap();

    // hand composition with tensor-core primitives
    let g = crate::tensor::concat_channels(&[&a, &b, &a.sub(&b).unwrap(), &b.sub(&a).unwrap()]).unwrap();
    let mut x = g;
    for (k, layer) in params.layers().iter().enumerate() {
        x = crate::tensor::conv2d_same(&x, layer).unwrap();
        if k + 1 < params.depth() {
            x = crate::tensor::relu(&x);
        }
    }
    let w = adaptive_weights(&a, &b, &params, v).unwrap();
    assert!(w.max_abs_diff(&x).unwrap() < 1e-14);
}

#[test]
fn adjustment_single_member_is_identity() {
    let f_j = t(1, 1, 2, &[0.3, -0.4]);
    let nbhd = Neighborhood::new(
        FrameFeature::new(0, t(1, 1, 2, &[1.0, 1.0])),
        vec![FrameFeature::new(1, f_j.clone())],
        false,
    )
    .unwrap();
    let params = MiniNetParams::init(MiniNetSpec::default(), RelationVariant::Concat4, 1, 0).unwrap();
    assert_eq!(feature_adjustment(&nbhd, 0, &params, RelationVariant::Concat4).unwrap(), f_j);
}

#[test]
fn adjustment_zero_params_is_zero() {
    let nbhd = random_nbhd(Shape::new(2, 2, 2), 3, false, 2);
    let zeros = MiniNetParams::zeros(MiniNetSpec::default(), RelationVariant::Concat4, 2).unwrap();
    for j in 0..3 {
        let out = feature_adjustment(&nbhd, j, &zeros, RelationVariant::Concat4).unwrap();
        assert_eq!(out, Tensor3::zeros(Shape::new(2, 2, 2)));
    }
}

#[test]
fn adjustment_out_of_range() {
    let nbhd = random_nbhd(Shape::new(1, 1, 1), 2, false, 0);
    let zeros = MiniNetParams::zeros(MiniNetSpec::default(), RelationVariant::Concat4, 1).unwrap();
    assert!(matches!(
        feature_adjustment(&nbhd, 2, &zeros, RelationVariant::Concat4),
        Err(Error::NeighborIndex { index: 2, len: 2 })
    ));
}

#[test]
fn adjustment_scalar_brute_force() {
    // C=H=W=1, one 1x1 layer on Concat4: W(a,b) = p·a + q·b + r·(a−b) + s·(b−a) + bias
    let (p, q, r, s, bias) = (0.5, -0.25, 1.5, 0.75, 0.1);
    let params = one_layer(4, 1, &[p, q, r, s], &[bias]);
    let w = |a: f64, b: f64| p * a + q * b + r * (a - b) + s * (b - a) + bias;
    let f = [0.8, -1.2, 2.0];
    let nbhd = Neighborhood::new(
        FrameFeature::new(0, t(1, 1, 1, &[9.0])),
        f.iter().enumerate().map(|(k, &x)| FrameFeature::new(k as i64 + 1, t(1, 1, 1, &[x]))).collect(),
        false,
    )
    .unwrap();
    for j in 0..3 {
        let expected: f64 = (0..3).filter(|&m| m != j).map(|m| w(f[j], f[m]) * f[j]).sum();
        let got = feature_adjustment(&nbhd, j, &params, RelationVariant::Concat4).unwrap();
        assert!((got.data()[0] - expected).abs() < 1e-14, "j={j}: {} vs {expected}", got.data()[0]);
    }
}

#[test]
fn all_gated_gives_zero() {
    // f_i equal to the softmax of every member: cosine is 1 for all
    let shape = Shape::new(2, 1, 1);
    let x = t(2, 1, 1, &[0.5, 0.5]);
    let nbhd = Neighborhood::new(
        FrameFeature::new(0, x.clone()),
        vec![FrameFeature::new(1, x.clone()), FrameFeature::new(2, x.clone())],
        true,
    )
    .unwrap();
    let params = MiniNetParams::init(MiniNetSpec::default(), RelationVariant::Concat4, 2, 1).unwrap();
    let out = blend_traced(&nbhd, &params, &BlenderConfig::default(), true).unwrap();
    assert_eq!(out.gated_count(), 3);
    assert_eq!(out.delta, Tensor3::zeros(shape));
    for m in &out.members {
        assert_eq!(m.weight.as_ref().unwrap(), &Tensor3::zeros(shape));
    }
}

#[test]
fn gate_is_strict() {
    let x = t(2, 1, 1, &[0.5, 0.5]);
    let nbhd = Neighborhood::new(FrameFeature::new(0, x.clone()), vec![FrameFeature::new(1, x)], false).unwrap();
    let params = one_layer(8, 2, &[0.0; 16], &[1.0, 2.0]);
    // cos is exactly 1, δ = 1 keeps it
    let config = BlenderConfig {
        delta: 1.0,
        ..Default::default()
    };
    let out = blend_traced(&nbhd, &params, &config, false).unwrap();
    assert_eq!(out.gated_count(), 0);
    assert_eq!(out.delta.data(), &[0.5, 1.0]);
}

#[test]
fn delta_one_matches_brute_force() {
    let config = BlenderConfig {
        delta: 1.0,
        ..Default::default()
    };
    let (nbhd, params) = crate::harness::oracle::tiny_case(&config, 17).unwrap();
    let out = blend(&nbhd, &params, &config).unwrap();

    // straight-line formulas with tensor primitives only
    let members = nbhd.members();
    let f_i = &nbhd.current().feature;
    let w = |a: &Tensor3<f64>, b: &Tensor3<f64>| adaptive_weights(a, b, &params, config.variant).unwrap();
    let mut expected = Tensor3::zeros(nbhd.shape());
    for (j, f_j) in members.iter().enumerate() {
        let mut adjusted = Tensor3::zeros(nbhd.shape());
        for (m, f_m) in members.iter().enumerate() {
            if m != j {
                adjusted = adjusted.add(&w(&f_j.feature, &f_m.feature).mul(&f_j.feature).unwrap()).unwrap();
            }
        }
        let f_hat = crate::tensor::channel_softmax(&adjusted);
        let w_hat = crate::tensor::relu(&w(f_i, &f_j.feature));
        expected = expected.add(&w_hat.mul(&f_hat).unwrap()).unwrap();
    }
    assert!(out.max_abs_diff(&expected).unwrap() < 1e-10);
}

#[test]
fn fb_off_is_plain_weighted_sum() {
    let config = BlenderConfig::default().with_modules(true, false, false);
    let nbhd = random_nbhd(Shape::new(2, 2, 2), 3, true, 8);
    let params = MiniNetParams::init(config.mini_net(), config.variant, 2, 4).unwrap();
    let f_i = &nbhd.current().feature;
    let mut expected = Tensor3::zeros(nbhd.shape());
    for m in nbhd.members() {
        let w = adaptive_weights(f_i, &m.feature, &params, config.variant).unwrap();
        expected = expected.add(&w.mul(&m.feature).unwrap()).unwrap();
    }
    let out = blend(&nbhd, &params, &config).unwrap();
    assert!(out.max_abs_diff(&expected).unwrap() < 1e-12);
}

#[test]
fn fa_off_uses_raw_members() {
    let config = BlenderConfig {
        delta: 1.0,
        ..Default::default()
    }
    .with_modules(true, false, true);
    let nbhd = random_nbhd(Shape::new(2, 2, 2), 2, true, 3);
    let params = MiniNetParams::init(config.mini_net(), config.variant, 2, 4).unwrap();
    let out = blend_traced(&nbhd, &params, &config, true).unwrap();
    for (m, trace) in nbhd.members().iter().zip(&out.members) {
        let f_hat = crate::tensor::channel_softmax(&m.feature);
        assert!(trace.feature.as_ref().unwrap().max_abs_diff(&f_hat).unwrap() < 1e-15);
    }
}

#[test]
fn tr_off_collapses_to_one_scalar_per_pair() {
    let config = BlenderConfig {
        delta: 1.0,
        ..Default::default()
    }
    .with_modules(false, true, true);
    let nbhd = random_nbhd(Shape::new(2, 3, 3), 3, true, 6);
    let params = MiniNetParams::init(config.mini_net(), config.variant, 2, 11).unwrap();
    let out = blend_traced(&nbhd, &params, &config, true).unwrap();
    for (m, trace) in nbhd.members().iter().zip(&out.members) {
        let w = trace.weight.as_ref().unwrap();
        let first = w.data()[0];
        assert!(w.data().iter().all(|&x| x == first));
        let full = adaptive_weights(&nbhd.current().feature, &m.feature, &params, config.variant).unwrap();
        assert!((first - full.mean().max(0.0)).abs() < 1e-15);
    }
}

#[test]
fn include_self_adds_the_current_frame() {
    let nbhd = random_nbhd(Shape::new(2, 2, 2), 2, false, 1);
    let config = BlenderConfig::default().with_modules(true, false, false);
    let params = MiniNetParams::init(config.mini_net(), config.variant, 2, 2).unwrap();
    let without = blend(&nbhd, &params, &config).unwrap();
    let with = blend(&nbhd.clone().with_include_self(true), &params, &config).unwrap();
    let f_i = &nbhd.current().feature;
    let self_term = adaptive_weights(f_i, f_i, &params, config.variant).unwrap().mul(f_i).unwrap();
    assert!(with.max_abs_diff(&without.add(&self_term).unwrap()).unwrap() < 1e-12);
}

#[test]
fn single_precision_tracks_double() {
    let config = BlenderConfig::default();
    let nbhd = random_nbhd(Shape::new(4, 5, 5), 3, true, 12);
    let params = MiniNetParams::init(config.mini_net(), config.variant, 4, 12).unwrap();
    let d = blend(&nbhd, &params, &config).unwrap();
    let s = blend(&nbhd.cast::<f32>(), &params.cast::<f32>(), &config).unwrap();
    assert!(s.cast::<f64>().max_abs_diff(&d).unwrap() < 1e-4);
}

#[test]
fn aggregate_examples() {
    let f = t(1, 1, 2, &[1.0, -2.0]);
    let zero = Tensor3::zeros(f.shape());
    assert_eq!(aggregate(&f, &zero, AggregateMode::Residual).unwrap(), f);
    let d = t(1, 1, 2, &[4.0, 5.0]);
    assert_eq!(aggregate(&f, &d, AggregateMode::Replace).unwrap(), d);
    assert_eq!(aggregate(&f, &f.scale(-1.0), AggregateMode::Residual).unwrap(), zero);
    assert!(aggregate(&f, &Tensor3::zeros(Shape::new(1, 2, 1)), AggregateMode::Replace).is_err());
}

#[test]
fn enhance_uses_configured_mode() {
    let nbhd = random_nbhd(Shape::new(2, 2, 2), 2, true, 5);
    let params = MiniNetParams::init(MiniNetSpec::default(), RelationVariant::Concat4, 2, 5).unwrap();
    let config = BlenderConfig {
        aggregate_mode: AggregateMode::Residual,
        ..Default::default()
    };
    let delta = blend(&nbhd, &params, &config).unwrap();
    let out = enhance(&nbhd, &params, &config).unwrap();
    assert_eq!(out, nbhd.current().feature.add(&delta).unwrap());
}

#[test]
fn baseline_uniform_average() {
    let a = t(1, 1, 2, &[1.0, 3.0]);
    let b = t(1, 1, 2, &[3.0, 5.0]);
    let nbhd = Neighborhood::new(
        FrameFeature::new(0, t(1, 1, 2, &[0.0, 1.0])),
        vec![FrameFeature::new(1, a), FrameFeature::new(2, b)],
        false,
    )
    .unwrap();
    let out = baseline_aggregate(&nbhd, BaselineScheme::Uniform).unwrap();
    assert_eq!(out.data(), &[2.0, 4.0]);
}

#[test]
fn baseline_cosine_identical_is_uniform() {
    let x = t(2, 1, 1, &[0.2, -0.7]);
    let nbhd = Neighborhood::new(
        FrameFeature::new(0, x.clone()),
        (1..4).map(|k| FrameFeature::new(k, x.clone())).collect(),
        true,
    )
    .unwrap();
    let cos = baseline_aggregate(&nbhd, BaselineScheme::CosineSoftmax).unwrap();
    let uni = baseline_aggregate(&nbhd, BaselineScheme::Uniform).unwrap();
    assert!(cos.max_abs_diff(&uni).unwrap() < 1e-15);
    assert!(cos.max_abs_diff(&x).unwrap() < 1e-15);
}

#[test]
fn baseline_single_neighbor() {
    let n = t(1, 2, 1, &[4.0, -1.0]);
    let nbhd = Neighborhood::new(
        FrameFeature::new(0, t(1, 2, 1, &[1.0, 1.0])),
        vec![FrameFeature::new(1, n.clone())],
        false,
    )
    .unwrap();
    for scheme in [BaselineScheme::Uniform, BaselineScheme::CosineSoftmax] {
        assert_eq!(baseline_aggregate(&nbhd, scheme).unwrap(), n);
    }
}

#[test]
fn baseline_cosine_weights_favor_similar_frames() {
    let f_i = t(2, 1, 1, &[1.0, 0.0]);
    let near = t(2, 1, 1, &[1.0, 0.0]);
    let far = t(2, 1, 1, &[0.0, 1.0]);
    let nbhd = Neighborhood::new(
        FrameFeature::new(0, f_i),
        vec![FrameFeature::new(1, near), FrameFeature::new(2, far)],
        false,
    )
    .unwrap();
    let out = baseline_aggregate(&nbhd, BaselineScheme::CosineSoftmax).unwrap();
    let e = std::f64::consts::E;
    assert!((out.data()[0] - e / (e + 1.0)).abs() < 1e-15);
    assert!((out.data()[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
}

#[test]
fn neighborhood_validation() {
    let x = Tensor3::<f64>::ones(Shape::new(1, 1, 1));
    assert!(Neighborhood::new(FrameFeature::new(0, x.clone()), vec![], true).is_err());
    assert!(Neighborhood::new(
        FrameFeature::new(0, x.clone()),
        vec![FrameFeature::new(1, x.clone()), FrameFeature::new(1, x.clone())],
        true
    )
    .is_err());
    assert!(Neighborhood::new(FrameFeature::new(0, x.clone()), vec![FrameFeature::new(0, x.clone())], true).is_err());
    assert!(Neighborhood::new(
        FrameFeature::new(0, x),
        vec![FrameFeature::new(1, Tensor3::ones(Shape::new(2, 1, 1)))],
        true
    )
    .is_err());
}

fn config_strategy() -> impl Strategy<Value = BlenderConfig> {
    (
        prop::sample::select(RelationVariant::ALL.to_vec()),
        1usize..=4,
        prop::sample::select(vec![1usize, 3]),
        -1.0f64..=1.0,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(variant, layers, kernel, delta, tr, include_self)| BlenderConfig {
            variant,
            layers,
            kernel,
            delta,
            enable_tr: tr,
            include_self,
            ..Default::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn blend_shape_and_finiteness(config in config_strategy(), seed in any::<u64>(), n in 1usize..4) {
        let shape = Shape::new(2, 3, 2);
        let nbhd = random_nbhd(shape, n, config.include_self, seed);
        let params = MiniNetParams::init(config.mini_net(), config.variant, 2, seed).unwrap();
        let out = blend(&nbhd, &params, &config).unwrap();
        prop_assert_eq!(out.shape(), shape);
        prop_assert!(out.is_finite());
    }

    #[test]
    fn rectified_and_normalized(config in config_strategy(), seed in any::<u64>()) {
        let nbhd = random_nbhd(Shape::new(3, 2, 2), 3, config.include_self, seed);
        let params = MiniNetParams::init(config.mini_net(), config.variant, 3, seed ^ 1).unwrap();
        let out = blend_traced(&nbhd, &params, &config, true).unwrap();
        for m in &out.members {
            let w = m.weight.as_ref().unwrap();
            prop_assert!(w.data().iter().all(|&x| x >= 0.0));
            let f = m.feature.as_ref().unwrap();
            for p in 0..f.shape().plane() {
                let s: f64 = (0..f.channels()).map(|c| f.channel(c)[p]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn permutation_invariance(config in config_strategy(), seed in any::<u64>(), shift in 1usize..4) {
        let nbhd = random_nbhd(Shape::new(2, 2, 2), 4, config.include_self, seed);
        let params = MiniNetParams::init(config.mini_net(), config.variant, 2, seed).unwrap();
        let order: Vec<usize> = (0..4).map(|k| (k + shift) % 4).rev().collect();
        let a = blend(&nbhd, &params, &config).unwrap();
        let b = blend(&nbhd.with_neighbors_permuted(&order).unwrap(), &params, &config).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
    }

    #[test]
    fn gated_member_contributes_nothing(config in config_strategy(), seed in any::<u64>()) {
        let nbhd = random_nbhd(Shape::new(2, 2, 2), 3, config.include_self, seed);
        let params = MiniNetParams::init(config.mini_net(), config.variant, 2, seed).unwrap();
        let out = blend_traced(&nbhd, &params, &config, false).unwrap();
        for (j, m) in out.members.iter().enumerate() {
            if m.gated {
                let mut outer = vec![true; out.members.len()];
                outer[j] = false;
                let pruned = blend_outer_subset(&nbhd, &params, &config, false, &outer).unwrap();
                prop_assert_eq!(&pruned.delta, &out.delta);
            }
        }
    }
}
