mod common;

use std::collections::BTreeMap;

use common::*;
use mcq_fewshot::engine::{build_prototypes, classify, knn_vote, ExemplarSet, PrototypeSet};
use mcq_fewshot::representation::{
    build_representation, ImageActivations, RepresentationKind, RepresentationSpec, TapPoint,
};
use mcq_fewshot::tensor::{
    concat, euclidean_distance, mean_pool_except_last, zscore_apply, zscore_fit, DEFAULT_EPS,
};
use mcq_fewshot::{EmbeddingTensor, EmbeddingVector, NormStats};
use proptest::prelude::*;
use rand::Rng;

fn ev(v: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(v).unwrap()
}

#[test]
fn pooling_matches_column_mean_oracle_on_visual_shape() {
    let mut r = rng(11);
    let shape = vec![257, 1408];
    let data: Vec<f32> = (0..257 * 1408).map(|_| r.random_range(-3.0..3.0)).collect();
    let expect = naive_column_mean(&shape, &data);
    let t = EmbeddingTensor::new(shape, data).unwrap();
    let got = mean_pool_except_last(&t).unwrap();
    assert_eq!(got.dim(), 1408);
    for (g, e) in got.as_slice().iter().zip(&expect) {
        assert!(rel_close(*g, *e, 1e-5), "{g} vs {e}");
    }
}

#[test]
fn distance_matches_formula_on_random_pairs() {
    let mut r = rng(12);
    for _ in 0..100 {
        let dim = r.random_range(1..300);
        let a = random_vec(&mut r, dim, 5.0);
        let b = random_vec(&mut r, dim, 5.0);
        let got = euclidean_distance(&ev(a.clone()), &ev(b.clone())).unwrap();
        assert!(rel_close(got, direct_distance(&a, &b), 1e-6));
    }
}

#[test]
fn concat_index_identity() {
    let mut r = rng(13);
    for _ in 0..50 {
        let (da, db) = (r.random_range(1..40), r.random_range(1..40));
        let a = random_vec(&mut r, da, 1.0);
        let b = random_vec(&mut r, db, 1.0);
        let c = concat(&ev(a.clone()), &ev(b.clone()));
        assert_eq!(c.dim(), a.len() + b.len());
        for i in 0..c.dim() {
            let expect = if i < a.len() { a[i] } else { b[i - a.len()] };
            assert_eq!(c.as_slice()[i], expect);
        }
    }
}

#[test]
fn zscore_fit_matches_two_pass_oracle() {
    let mut r = rng(14);
    let vs: Vec<Vec<f64>> = (0..50)
        .map(|_| random_vec(&mut r, 33, 10.0).into_iter().map(|x| x + 100.0).collect())
        .collect();
    let (mean, std) = two_pass_stats(&vs);
    let stats = zscore_fit(&vs.iter().cloned().map(ev).collect::<Vec<_>>()).unwrap();
    for j in 0..33 {
        assert!(rel_close(stats.mean()[j], mean[j], 1e-6));
        assert!(rel_close(stats.std()[j], std[j], 1e-6));
    }
}

#[test]
fn refitted_population_is_standardized() {
    let mut r = rng(15);
    let mut vs: Vec<Vec<f64>> = (0..80).map(|_| random_vec(&mut r, 20, 4.0)).collect();
    for v in &mut vs {
        v[3] = 7.0; // constant dimension
    }
    let evs: Vec<EmbeddingVector> = vs.into_iter().map(ev).collect();
    let stats = zscore_fit(&evs).unwrap();
    let z: Vec<Vec<f64>> = evs
        .iter()
        .map(|v| zscore_apply(v, &stats, DEFAULT_EPS).unwrap().into_vec())
        .collect();
    let (m, s) = two_pass_stats(&z);
    for j in 0..20 {
        assert!(m[j].abs() < 1e-5, "dim {j} mean {}", m[j]);
        if stats.std()[j] > DEFAULT_EPS {
            assert!((s[j] - 1.0).abs() < 1e-4, "dim {j} std {}", s[j]);
        } else {
            assert_eq!(s[j], 0.0);
        }
    }
}

#[test]
fn prototypes_match_mean_then_normalize_oracle() {
    let mut r = rng(16);
    let dim = 24;
    let mean = random_vec(&mut r, dim, 2.0);
    let std: Vec<f64> = (0..dim).map(|_| r.random_range(0.1..3.0)).collect();
    let stats = NormStats::new(mean.clone(), std.clone()).unwrap();
    let train: BTreeMap<u32, Vec<Vec<f64>>> = (0..4)
        .map(|c| (c, (0..5).map(|_| random_vec(&mut r, dim, 6.0)).collect()))
        .collect();
    let as_vectors = train
        .iter()
        .map(|(c, vs)| (*c, vs.iter().cloned().map(ev).collect()))
        .collect();
    let protos = build_prototypes(&as_vectors, &stats, DEFAULT_EPS).unwrap();
    for (c, vs) in &train {
        let expect = prototype_oracle(vs, &mean, &std, DEFAULT_EPS);
        for (g, e) in protos.prototypes()[c].as_slice().iter().zip(&expect) {
            assert!(rel_close(*g, *e, 1e-6));
        }
    }
}

#[test]
fn decoder_representation_is_slice_then_beam_mean() {
    let mut r = rng(17);
    let (beams, tokens, hidden) = (5, 7, 2048);
    let data: Vec<f32> = (0..beams * tokens * hidden)
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    let acts = ImageActivations::new("img", 0)
        .with_tap(
            TapPoint::LlmDecoder,
            EmbeddingTensor::new(vec![beams, tokens, hidden], data.clone()).unwrap(),
        )
        .unwrap();
    let got = build_representation(&acts, &RepresentationSpec::new(RepresentationKind::LlmDecoder))
        .unwrap();
    assert_eq!(got.dim(), hidden);
    for h in 0..hidden {
        let mut s = 0.0f64;
        for b in 0..beams {
            s += data[b * tokens * hidden + hidden + h] as f64;
        }
        assert!(rel_close(got.as_slice()[h], s / beams as f64, 1e-6));
    }
}

#[test]
fn knn_matches_brute_force_on_random_instances() {
    let mut r = rng(18);
    for i in 0..60 {
        let inst = knn_instance(&mut r, i);
        let refs: Vec<(u32, EmbeddingVector)> = inst
            .points
            .iter()
            .map(|(c, p)| (*c, ev(p.clone())))
            .collect();
        for q in &inst.queries {
            let got = knn_vote(&ev(q.clone()), refs.iter().map(|(c, v)| (*c, v)), inst.k).unwrap();
            assert_eq!(got, brute_force_knn(&inst.points, q, inst.k), "instance {i}");
        }
    }
}

#[test]
fn one_shot_prototypes_equal_one_nn_over_exemplars() {
    let mut r = rng(19);
    for _ in 0..30 {
        let dim = r.random_range(2..20);
        let train: BTreeMap<u32, Vec<EmbeddingVector>> = (0..r.random_range(2..9u32))
            .map(|c| (c * 2, vec![ev(random_vec(&mut r, dim, 1.0))]))
            .collect();
        let test: Vec<EmbeddingVector> =
            (0..20).map(|_| ev(random_vec(&mut r, dim, 1.0))).collect();
        let stats = zscore_fit(&test).unwrap();
        let protos: PrototypeSet = build_prototypes(&train, &stats, DEFAULT_EPS).unwrap();
        let exemplars = ExemplarSet::build(&train, &stats, DEFAULT_EPS).unwrap();
        for t in &test {
            let z = zscore_apply(t, &stats, DEFAULT_EPS).unwrap();
            assert_eq!(
                classify(&z, &protos, 1).unwrap(),
                mcq_fewshot::engine::classify_exemplars(&z, &exemplars, 1).unwrap()
            );
        }
    }
}

proptest! {
    #[test]
    fn distance_is_a_metric(
        a in prop::collection::vec(-100.0f64..100.0, 8),
        b in prop::collection::vec(-100.0f64..100.0, 8),
        c in prop::collection::vec(-100.0f64..100.0, 8),
    ) {
        let (a, b, c) = (ev(a), ev(b), ev(c));
        let ab = euclidean_distance(&a, &b).unwrap();
        let ba = euclidean_distance(&b, &a).unwrap();
        let bc = euclidean_distance(&b, &c).unwrap();
        let ac = euclidean_distance(&a, &c).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert!(ac <= ab + bc + 1e-6);
        prop_assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn pooling_single_row_is_identity(row in prop::collection::vec(-1e3f32..1e3, 1..64)) {
        let t = EmbeddingTensor::new(vec![1, row.len()], row.clone()).unwrap();
        let pooled = mean_pool_except_last(&t).unwrap();
        let expect: Vec<f64> = row.iter().map(|&x| x as f64).collect();
        prop_assert_eq!(pooled.as_slice(), expect.as_slice());
    }

    #[test]
    fn zscore_commutes_with_concat(
        seed in any::<u64>(),
        n in 2usize..30,
        da in 1usize..10,
        db in 1usize..10,
    ) {
        let mut r = rng(seed);
        let a: Vec<EmbeddingVector> = (0..n).map(|_| ev(random_vec(&mut r, da, 3.0))).collect();
        let b: Vec<EmbeddingVector> = (0..n).map(|_| ev(random_vec(&mut r, db, 3.0))).collect();
        let joined: Vec<EmbeddingVector> = a.iter().zip(&b).map(|(x, y)| concat(x, y)).collect();
        let s_joined = zscore_fit(&joined).unwrap();
        let s_a = zscore_fit(&a).unwrap();
        let s_b = zscore_fit(&b).unwrap();
        for i in 0..n {
            let left = zscore_apply(&joined[i], &s_joined, DEFAULT_EPS).unwrap();
            let right = concat(
                &zscore_apply(&a[i], &s_a, DEFAULT_EPS).unwrap(),
                &zscore_apply(&b[i], &s_b, DEFAULT_EPS).unwrap(),
            );
            for (l, r) in left.as_slice().iter().zip(right.as_slice()) {
                prop_assert!((l - r).abs() <= 1e-6);
            }
        }
    }
}
