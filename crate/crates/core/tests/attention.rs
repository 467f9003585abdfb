mod common;

use common::{max_abs_diff, naive_attention, naive_parts, naive_semantic, naive_similarity, random_map, random_params};
use handctx::attention::{
    attention_forward, attention_insert, attention_on_tape, build_distance_table, distance_prior, semantic_weights,
    similarity_weights, AttentionParams, AttentionVars, ContextSwitches, DistanceTable, FeatureMap, SIGMA_MIN,
};
use handctx::tensor::{central_difference, relative_error, Tape, Tensor};
use handctx::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn distance_table_examples() {
    let d = build_distance_table::<f64>(3, 4);
    for i in 0..12 {
        assert_eq!(d.get(i, i), 0.0);
        for j in 0..12 {
            assert_eq!(d.get(i, j), d.get(j, i));
            for k in 0..12 {
                assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-12);
            }
        }
    }
    assert_eq!(build_distance_table::<f64>(1, 2).get(0, 1), 1.0);
    let d = build_distance_table::<f64>(2, 2);
    assert_eq!(d.get(0, 3), 2f64.sqrt());
    assert_eq!(d.get(1, 2), 2f64.sqrt());
}

#[test]
fn zero_query_weights_give_uniform_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_map(2, 3, 3, &mut rng);
    let mut p = random_params(3, 2, &mut rng);
    p.w_theta = Tensor::zeros(&[3, 3]);
    let s = similarity_weights(&x, &p).unwrap();
    for v in s.data() {
        assert!((v - 1.0 / 6.0).abs() < 1e-15);
    }
    let mut p = random_params(3, 2, &mut rng);
    p.w_phi = Tensor::zeros(&[3, 3]);
    let s = similarity_weights(&x, &p).unwrap();
    assert!(s.data().iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
}

#[test]
fn single_position_similarity_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_map(1, 1, 4, &mut rng);
    let p = random_params(4, 3, &mut rng);
    assert_eq!(similarity_weights(&x, &p).unwrap().data(), &[1.0]);
}

#[test]
fn similarity_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_map(2, 2, 3, &mut rng);
    let p = random_params(3, 2, &mut rng);
    let s = similarity_weights(&x, &p).unwrap();
    let oracle = naive_similarity(&x, &p);
    for i in 0..4 {
        let row_sum: f64 = (0..4).map(|j| s.get(&[i, j])).sum();
        assert!((row_sum - 1.0).abs() < 1e-12);
        for j in 0..4 {
            assert!((s.get(&[i, j]) - oracle[i][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn semantic_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_map(2, 2, 3, &mut rng);
    let d = DistanceTable::build(2, 2);

    let mut p = random_params(3, 2, &mut rng);
    p.alpha = Tensor::zeros(&[2]);
    assert!(semantic_weights(&x, &d, &p).unwrap().data().iter().all(|&v| v == 0.0));

    let mut p = random_params(3, 1, &mut rng);
    p.alpha = Tensor::full(&[1], 1.0);
    p.mu = Tensor::zeros(&[1]);
    p.sigma = Tensor::full(&[1], 1e6);
    for v in semantic_weights(&x, &d, &p).unwrap().data() {
        assert!((v - 1.0).abs() < 1e-11, "{v}");
    }

    let p = random_params(3, 2, &mut rng);
    let t = semantic_weights(&x, &d, &p).unwrap();
    let oracle = naive_semantic(&x, &p);
    for i in 0..4 {
        for j in 0..4 {
            assert!((t.get(&[i, j]) - oracle[i][j]).abs() < 1e-12);
        }
    }

    let mut bad = p.clone();
    bad.sigma.data_mut()[1] = 0.0;
    assert!(matches!(semantic_weights(&x, &d, &bad), Err(Error::Constraint(_))));
}

#[test]
fn single_position_forward_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_map(1, 1, 3, &mut rng);
    let p = random_params(3, 2, &mut rng);
    let y = attention_forward(&x, &p).unwrap();
    let probs = naive_parts(x.position(0), &p);
    let coef: f64 = 1.0
        + (0..2)
            .map(|k| p.alpha.data()[k] * probs[k] * distance_prior(0.0, p.mu.data()[k], p.sigma.data()[k]))
            .sum::<f64>();
    for c in 0..3 {
        let g: f64 = (0..3).map(|b| p.w_g.get(&[c, b]) * x.position(0)[b]).sum();
        assert!((y.position(0)[c] - coef * g).abs() < 1e-14);
    }
}

#[test]
fn zero_value_weights_annihilate_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_map(3, 2, 4, &mut rng);
    let mut p = random_params(4, 3, &mut rng);
    p.w_g = Tensor::zeros(&[4, 4]);
    assert!(attention_forward(&x, &p).unwrap().tensor().data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_matches_naive_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_map(3, 3, 4, &mut rng);
    let p = random_params(4, 3, &mut rng);
    let y = attention_forward(&x, &p).unwrap();
    assert_eq!(y.tensor().shape(), &[3, 3, 4]);
    assert!(max_abs_diff(&y, &naive_attention(&x, &p)) < 1e-10);
}

#[test]
fn channel_mismatch_is_a_dimension_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_map(2, 2, 3, &mut rng);
    let p = random_params(4, 2, &mut rng);
    assert!(matches!(attention_forward(&x, &p), Err(Error::Dimension { .. })));
    assert!(FeatureMap::new(Tensor::<f64>::zeros(&[0, 2, 3])).is_err());
    assert!(FeatureMap::new(Tensor::<f64>::zeros(&[2, 3])).is_err());
}

#[test]
fn insert_is_residual_and_identity_capable() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_map(3, 4, 3, &mut rng);
    let mut p = random_params(3, 2, &mut rng);
    let out = attention_insert(&x, &p).unwrap();
    let y = attention_forward(&x, &p).unwrap();
    let diff = out.tensor().zip_map(x.tensor(), |a, b| a - b).unwrap();
    for (a, b) in diff.data().iter().zip(y.tensor().data()) {
        assert!((a - b).abs() < 1e-14);
    }

    p.w_g = Tensor::zeros(&[3, 3]);
    p.alpha = Tensor::zeros(&[2]);
    let same = attention_insert(&x, &p).unwrap();
    assert!(same
        .tensor()
        .data()
        .iter()
        .zip(x.tensor().data())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn projection_examples() {
    let mut p = AttentionParams::<f64>::zeros(2, 4);
    p.alpha = Tensor::new(&[4], vec![0.9, -0.1, 0.1, 0.25]).unwrap();
    p.sigma = Tensor::new(&[4], vec![-1.0, 0.0, 1e-4, 2.0]).unwrap();
    p.mu = Tensor::new(&[4], vec![-3.0, 0.0, 1.0, 2.0]).unwrap();
    let q = p.project_constraints();
    assert_eq!(q.alpha.data(), &[0.25, 0.0, 0.1, 0.25]);
    assert_eq!(q.sigma.data(), &[SIGMA_MIN, SIGMA_MIN, SIGMA_MIN, 2.0]);
    assert_eq!(q.mu, p.mu);
    assert_eq!(q.w_theta, p.w_theta);
    assert_eq!(q.project_constraints(), q);
    q.validate().unwrap();
    assert!(p.validate().is_err());
}

#[test]
fn init_follows_documented_defaults() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = AttentionParams::<f64>::init(32, 6, (12, 12), &mut rng);
    p.validate().unwrap();
    let diag = (2.0f64 * 121.0).sqrt();
    assert!(p.alpha.data().iter().all(|&a| (a - 1.0 / 12.0).abs() < 1e-15));
    assert!(p.sigma.data().iter().all(|&s| (s - diag / 4.0).abs() < 1e-12));
    assert_eq!(p.mu.data()[0], 0.0);
    assert!((p.mu.data()[5] - diag / 2.0).abs() < 1e-12);
    let var: f64 = p.w_theta.data().iter().map(|v| v * v).sum::<f64>() / 1024.0;
    assert!((var - 1.0 / 32.0).abs() < 0.01, "xavier variance {var}");
}

#[test]
fn serialization_round_trip_and_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_params(3, 2, &mut rng);
    let bytes = p.to_bytes();
    assert_eq!(&bytes[..8], b"CTXATTN\0");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
    assert_eq!(bytes.len(), 20 + 8 * (3 * 9 + 2 * 3 + 3 * 2));
    let first = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    assert_eq!(first, p.w_theta.data()[0]);
    assert_eq!(AttentionParams::<f64>::read_from(&bytes[..]).unwrap(), p);
    assert!(AttentionParams::<f64>::read_from(&bytes[..30]).is_err());
    assert!(AttentionParams::<f64>::read_from(&b"NOTMAGIC0000"[..]).is_err());
    assert!(p.summary().contains("K=2 m=3"));
}

#[test]
fn similarity_path_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (h, w, m) = (2, 3, 3);
    let x = random_map(h, w, m, &mut rng);
    let n = h * w;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.rotate_left(2);
    perm.swap(0, 3);
    let permuted = FeatureMap::from_positions(
        h,
        w,
        Tensor::from_fn(&[n, m], |k| x.position(perm[k / m])[k % m]),
    )
    .unwrap();

    let mut p = random_params(m, 2, &mut rng);
    p.alpha = Tensor::zeros(&[2]);
    let y = attention_forward(&x, &p).unwrap();
    let yp = attention_forward(&permuted, &p).unwrap();
    for i in 0..n {
        for c in 0..m {
            assert!((yp.position(i)[c] - y.position(perm[i])[c]).abs() < 1e-12);
        }
    }

    let p = random_params(m, 2, &mut rng);
    let y = attention_forward(&x, &p).unwrap();
    let yp = attention_forward(&permuted, &p).unwrap();
    let worst = (0..n)
        .flat_map(|i| (0..m).map(move |c| (i, c)))
        .map(|(i, c)| (yp.position(i)[c] - y.position(perm[i])[c]).abs())
        .fold(0.0, f64::max);
    assert!(worst > 1e-6, "semantic path should break equivariance");
}

fn gradient_errors(h: usize, w: usize, m: usize, k: usize, seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_map(h, w, m, &mut rng).to_positions();
    let p = random_params(m, k, &mut rng);
    let probe = Tensor::from_fn(&[h * w, m], |_| rng.gen_range(-1.0..1.0));
    let dist = DistanceTable::build(h, w);

    let objective = |x: &Tensor<f64>, p: &AttentionParams<f64>| -> (f64, Option<(Tensor<f64>, AttentionParams<f64>)>) {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let vars = AttentionVars::register(&mut tape, p);
        let y = attention_on_tape(&mut tape, xv, &dist, &vars, ContextSwitches::FULL).unwrap();
        let out = tape.add(xv, y).unwrap();
        let r = tape.leaf(probe.clone());
        let prod = tape.mul(out, r).unwrap();
        let loss = tape.sum(prod);
        let value = tape.value(loss).item().unwrap();
        let g = tape.backward(loss).unwrap();
        (value, Some((g.get_or_zeros(&tape, xv), vars.gradients(&tape, &g))))
    };

    let (_, grads) = objective(&x, &p);
    let (gx, gp) = grads.unwrap();
    let mut errs = vec![("x".to_string(), relative_error(&gx, &central_difference(|t| objective(t, &p).0, &x, 1e-5)))];
    for (idx, (name, analytic)) in gp.fields().into_iter().enumerate() {
        let base = p.fields()[idx].1.clone();
        let numeric = central_difference(
            |t| {
                let mut q = p.clone();
                *q.fields_mut()[idx] = t.clone();
                objective(&x, &q).0
            },
            &base,
            1e-5,
        );
        errs.push((name.to_string(), relative_error(analytic, &numeric)));
    }
    errs
}

#[test]
fn attention_gradients_match_finite_differences() {
    for (h, w, m, k, seed) in [(2, 2, 3, 2, 1), (3, 2, 4, 3, 2), (1, 3, 2, 1, 3)] {
        for (name, err) in gradient_errors(h, w, m, k, seed) {
            assert!(err <= 1e-5, "{name} ({h}×{w}×{m}, K={k}): {err:e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_equivalence_and_bounds(seed in any::<u64>(), h in 1usize..=4, w in 1usize..=4, m in 1usize..=4, k in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(h, w, m, &mut rng);
        let p = random_params(m, k, &mut rng);
        let y = attention_forward(&x, &p).unwrap();
        prop_assert!(max_abs_diff(&y, &naive_attention(&x, &p)) < 1e-10);

        let s = similarity_weights(&x, &p).unwrap();
        for i in 0..h * w {
            let row: f64 = (0..h * w).map(|j| s.get(&[i, j])).sum();
            prop_assert!((row - 1.0).abs() < 1e-12);
        }
        let t = semantic_weights(&x, &DistanceTable::build(h, w), &p).unwrap();
        prop_assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
