use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{Dataset, SplitRatios, SynthConfig, synth_generate};
use crate::diffcore::Precision;
use crate::models::{Backbone, Model, ModelSpec, SarVariant, TaskSpec};

fn brute_auc(s: &[f64], y: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1.0 && y[j] == 0.0 {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn brute_gini(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mut s = 0.0;
    for a in x {
        for b in x {
            s += (a - b).abs();
        }
    }
    s / (2.0 * n * n * mean)
}

fn two_class(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut y: Vec<f64> = (0..n).map(|_| rng.random_bool(0.4) as u8 as f64).collect();
    y[0] = 1.0;
    y[1] = 0.0;
    y
}

#[test]
fn auc_matches_pairwise_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in 0..100 {
        let n = 200;
        // every other instance uses coarse scores so ties are common
        let s: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(-3.0..3.0);
                if t % 2 == 0 { v } else { (v * 2.0).round() }
            })
            .collect();
        let y = two_class(&mut rng, n);
        let got = auc(&s, &y).unwrap();
        assert!((got - brute_auc(&s, &y)).abs() < 1e-12);
    }
}

#[test]
fn auc_edge_cases() {
    assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
    assert_eq!(auc(&[0.3; 6], &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap(), 0.5);
    assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::Metric(_))));
    assert!(matches!(auc(&[0.1], &[1.0, 0.0]), Err(Error::Metric(_))));
    assert!(matches!(auc(&[0.1, 0.2], &[1.0, 2.0]), Err(Error::Metric(_))));
}

#[test]
fn gini_matches_mean_absolute_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.random_range(1..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..50u32) as f64).collect();
        if x.iter().sum::<f64>() == 0.0 {
            continue;
        }
        assert!((gini(&x).unwrap() - brute_gini(&x)).abs() < 1e-12);
    }
}

#[test]
fn gini_hand_values() {
    assert_eq!(gini(&[0.0, 0.0, 0.0, 10.0]).unwrap(), 0.75);
    assert_eq!(gini(&[4.0; 7]).unwrap(), 0.0);
    assert!(matches!(gini(&[]), Err(Error::Metric(_))));
    assert!(matches!(gini(&[0.0, 0.0]), Err(Error::Metric(_))));
    let m: BTreeMap<&str, u64> = [("a", 0), ("b", 0), ("c", 0), ("d", 10)].into();
    assert_eq!(gini_map(&m).unwrap(), 0.75);
}

#[test]
fn mae_cases() {
    assert_eq!(mae(&[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
    assert_eq!(mae(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
    assert!(mae(&[], &[]).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
    let t: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut want = 0.0;
    for i in 0..50 {
        want += (p[i] - t[i]).abs();
    }
    assert_eq!(mae(&p, &t).unwrap(), want / 50.0);
}

#[test]
fn merge_cases() {
    let b = [TaskKind::Binary];
    assert_eq!(merge_scores(&[0.3, -1.0], &b, &[1.0]).unwrap(), vec![sigmoid(0.3), sigmoid(-1.0)]);
    let two = [TaskKind::Binary, TaskKind::Regression];
    let r = merge_scores(&[0.0, 40.0], &two, &[1.0, 0.0]).unwrap();
    assert_eq!(r, vec![0.5]);
    // 2 * sigmoid(ln 3) + 0.5 * 4 = 2 * 0.75 + 2
    let r = merge_scores(&[3f64.ln(), 4.0], &two, &[2.0, 0.5]).unwrap();
    assert!((r[0] - 3.5).abs() < 1e-15);
    assert!(matches!(merge_scores(&[0.0, 1.0], &two, &[1.0]), Err(Error::Config(_))));
}

#[test]
fn top_k_orders_and_breaks_ties_by_key() {
    let scores = [0.5, 0.9, 0.5, 0.1, 0.9];
    let keys = [40, 30, 10, 20, 5];
    assert_eq!(top_k(&scores, &keys, 3).unwrap(), vec![4, 1, 2]);
    let mut all = top_k(&scores, &keys, 5).unwrap();
    all.sort();
    assert_eq!(all, vec![0, 1, 2, 3, 4]);
    assert!(matches!(top_k(&scores, &keys, 6), Err(Error::Usage(_))));
}

proptest! {
    #[test]
    fn auc_is_invariant_under_increasing_maps(seed in 0u64..10_000, a in 0.01f64..5.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..80).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = two_class(&mut rng, 80);
        let base = auc(&s, &y).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        prop_assert!((auc(&affine, &y).unwrap() - base).abs() < 1e-12);
        prop_assert!((auc(&exp, &y).unwrap() - base).abs() < 1e-12);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auc(&neg, &y).unwrap() + base - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn gini_is_scale_invariant(counts in prop::collection::vec(0u32..100, 1..40), k in 1u32..20) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let c: Vec<f64> = counts.iter().map(|&v| v as f64).collect();
        let kc: Vec<f64> = counts.iter().map(|&v| (v * k) as f64).collect();
        let g = gini(&c).unwrap();
        prop_assert!((g - gini(&kc).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..1.0).contains(&g));
    }

    #[test]
    fn top_k_ignores_positive_rescaling(seed in 0u64..10_000, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..30).map(|_| rng.random_range(0..8u32) as f64 / 8.0).collect();
        let keys: Vec<u32> = (0..30).map(|i| (i * 7 % 30) as u32).collect();
        let scaled: Vec<f64> = s.iter().map(|v| v * scale).collect();
        prop_assert_eq!(top_k(&s, &keys, 10).unwrap(), top_k(&scaled, &keys, 10).unwrap());
    }
}

fn tiny_dataset(seed: u64) -> Dataset {
    let cfg = SynthConfig {
        n_users: 40,
        n_items: 80,
        n_categories: 6,
        latent_dim: 4,
        slate_size: 5,
        min_slates_per_user: 2,
        max_slates_per_user: 3,
        seed,
        ..SynthConfig::default()
    };
    Dataset::from_samples(synth_generate(&cfg).unwrap(), 5, SplitRatios::default(), seed, "synth").unwrap()
}

fn tiny_model(ds: &Dataset, backbone: Backbone, sar: SarVariant, seed: u64) -> Model {
    let mut spec = ModelSpec::new(backbone, sar).with_tasks(vec![TaskSpec::binary("ctr"), TaskSpec::regression("watch")]);
    spec.embed_dim = 4;
    spec.category_dim = 4;
    spec.dim = 4;
    spec.hidden = vec![8, 4];
    Model::new(spec, ds.vocab.sizes(), ds.slate_size(), seed, Precision::F32).unwrap()
}

const W: [f64; 2] = [1.0, 0.05];

#[test]
fn planted_item_ranks_first() {
    let ds = tiny_dataset(4);
    let mut m = tiny_model(&ds, Backbone::Fm, SarVariant::Attn, 1);
    let reqs = sample_requests(&ds, 5, 50, 9).unwrap();
    for r in &reqs {
        assert_eq!(r.pool.len(), 50);
        let planted = r.pool.item_ids[17];
        let row = r.pool.items[17];
        let first = m.params.by_name_mut("fm.first.item").unwrap();
        let saved = first.values().to_vec();
        // maximizes both heads
        first.values_mut()[row * 2..row * 2 + 2].copy_from_slice(&[50.0, 50.0]);
        let top = rank_topk(&m, r, 10, &W).unwrap();
        assert_eq!(top[0], planted);
        m.params.by_name_mut("fm.first.item").unwrap().values_mut().copy_from_slice(&saved);
    }
}

#[test]
fn rank_topk_full_pool_is_a_permutation() {
    let ds = tiny_dataset(5);
    let m = tiny_model(&ds, Backbone::Ncf, SarVariant::SumPool, 2);
    let r = &sample_requests(&ds, 1, 20, 1).unwrap()[0];
    let mut top = rank_topk(&m, r, 20, &W).unwrap();
    top.sort();
    assert_eq!(top, r.pool.item_ids);
    let scaled = rank_topk(&m, r, 7, &[3.0, 0.15]).unwrap();
    assert_eq!(scaled, rank_topk(&m, r, 7, &W).unwrap());
    assert!(matches!(rank_topk(&m, r, 21, &W), Err(Error::Usage(_))));
}

#[test]
fn diversity_of_identical_models_is_equal() {
    let ds = tiny_dataset(6);
    let m = tiny_model(&ds, Backbone::WideDeep, SarVariant::Attn, 3);
    let reqs = sample_requests(&ds, 10, 30, 2).unwrap();
    let rep = diversity_eval(&m, &m.clone(), &reqs, 5, &W).unwrap();
    assert_eq!(rep.a, rep.b);
    assert_eq!(rep.rel_diff_item, 0.0);
    assert_eq!(rep.rel_diff_category, 0.0);
}

#[test]
fn constant_scorer_on_identical_pools_concentrates() {
    let ds = tiny_dataset(7);
    let m = tiny_model(&ds, Backbone::Ncf, SarVariant::None, 4);
    let mut flat = m.clone();
    let ids: Vec<_> = flat.params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        flat.params.get_mut(id).values_mut().fill(0.0);
    }
    let mut reqs = sample_requests(&ds, 12, 30, 3).unwrap();
    let shared = reqs[0].pool.clone();
    for r in &mut reqs {
        r.pool = shared.clone();
    }
    let rep = diversity_eval(&m, &flat, &reqs, 6, &W).unwrap();
    // every request exposes the six smallest ids: 6 of 30 items carry all counts
    assert!((rep.b.item - (1.0 - 6.0 / 30.0)).abs() < 1e-12);
    assert!(rep.b.item > gini(&[1.0; 30]).unwrap());
}

#[test]
fn alignment_untrained_and_forced_equal() {
    let ds = tiny_dataset(8);
    let mut m = tiny_model(&ds, Backbone::Ncf, SarVariant::Attn, 5);
    let mut csv = String::new();
    let st = alignment_stats(&m, &ds.val, &ds.vocab, 16, Some(&mut csv)).unwrap();
    assert!(st.mean_distance.is_finite() && st.mean_distance > 0.0);
    assert!(st.mean_cosine.is_finite());
    assert_eq!(st.n, ds.val.len());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sample_id,source,dim_0,dim_1,dim_2,dim_3");
    assert_eq!(lines.len(), 1 + 2 * ds.val.len());
    assert!(lines[1].starts_with("0,user_enc,") && lines[2].starts_with("0,slate_enc,"));

    for p in ["enc_s.l2.w", "enc_u.l2.w"] {
        m.params.by_name_mut(p).unwrap().values_mut().fill(0.0);
    }
    let bias = vec![0.3, -0.2, 0.1, 0.5];
    for p in ["enc_s.l2.b", "enc_u.l2.b"] {
        m.params.by_name_mut(p).unwrap().values_mut().copy_from_slice(&bias);
    }
    let st = alignment_stats(&m, &ds.val, &ds.vocab, 16, None).unwrap();
    assert_eq!(st.mean_distance, 0.0);
    assert!((st.mean_cosine - 1.0).abs() < 1e-12);

    let base = tiny_model(&ds, Backbone::Ncf, SarVariant::None, 5);
    assert!(matches!(alignment_stats(&base, &ds.val, &ds.vocab, 16, None), Err(Error::Usage(_))));
}

#[test]
fn evaluation_report_is_in_range_and_repeatable() {
    let ds = tiny_dataset(9);
    let m = tiny_model(&ds, Backbone::Ple, SarVariant::Lstm, 6);
    let r1 = evaluate(&m, &ds.test, &ds.vocab, 32, EvalMode::Infer).unwrap();
    let r2 = evaluate(&m, &ds.test, &ds.vocab, 7, EvalMode::Infer).unwrap();
    assert_eq!(r1.to_csv(), r2.to_csv());
    let a = r1.primary_auc().unwrap();
    assert!((0.0..=1.0).contains(&a));
    assert!(r1.primary_mae().unwrap() >= 0.0);
    assert_eq!(r1.tasks[1].n, ds.test.iter().filter(|s| s.watch_time.is_some()).count());
    assert!(r1.to_csv().starts_with("metric,value\nn_samples,"));
    let t = evaluate(&m, &ds.test, &ds.vocab, 32, EvalMode::Teacher).unwrap();
    assert_ne!(t.primary_auc(), None);
}
