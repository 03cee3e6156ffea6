use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{Batch, VocabSizes};
use crate::diffcore::gradcheck::{check_params, DEFAULT_STEP};
use crate::diffcore::{Precision, Tape, Var};
use crate::error::Error;

const USERS: usize = 6;
const ITEMS: usize = 9;
const CATS: usize = 5;

fn sizes(ctx: usize) -> VocabSizes {
    VocabSizes {
        user: USERS,
        context: vec![4; ctx],
        item: ITEMS,
        category: CATS,
    }
}

/// Random encoded batch whose targets sit inside their slates.
fn random_batch(rng: &mut ChaCha8Rng, n: usize, k: usize, ctx: usize) -> Batch {
    let mut b = Batch {
        len: n,
        slate_size: k,
        users: vec![],
        contexts: vec![vec![]; ctx],
        items: vec![],
        item_cat_ids: vec![],
        item_cat_offsets: vec![0],
        target_slate_cat: vec![],
        slate_items: vec![],
        slate_cats: vec![],
        clicks: vec![],
        watch: vec![],
        watch_mask: vec![],
    };
    for _ in 0..n {
        b.users.push(rng.random_range(0..USERS));
        for c in &mut b.contexts {
            c.push(rng.random_range(0..4));
        }
        let slate: Vec<usize> = (0..k).map(|_| rng.random_range(0..ITEMS)).collect();
        let cats: Vec<usize> = (0..k).map(|_| rng.random_range(0..CATS)).collect();
        let pos = rng.random_range(0..k);
        b.items.push(slate[pos]);
        b.target_slate_cat.push(cats[pos]);
        for _ in 0..rng.random_range(1..3) {
            b.item_cat_ids.push(rng.random_range(0..CATS));
        }
        b.item_cat_offsets.push(b.item_cat_ids.len());
        b.slate_items.extend(slate);
        b.slate_cats.extend(cats);
        let click = rng.random_bool(0.4);
        b.clicks.push(click as u8 as f64);
        b.watch.push(if click { rng.random_range(0.0..5.0) } else { 0.0 });
        b.watch_mask.push(click as u8 as f64);
    }
    b
}

fn small_spec(backbone: Backbone, sar: SarVariant) -> ModelSpec {
    let mut s = ModelSpec::new(backbone, sar);
    s.embed_dim = 3;
    s.category_dim = if backbone == Backbone::Fm { 3 } else { 2 };
    s.dim = 3;
    s.hidden = vec![4, 3];
    if backbone == Backbone::Ple {
        s.tasks = vec![TaskSpec::binary("ctr"), TaskSpec::regression("watch")];
    }
    s
}

/// Replaces every parameter with a draw from U(-0.6, 0.6) so that gradient
/// checks see well-conditioned, non-degenerate values.
fn scramble(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for n in names {
        let t = model.params.by_name_mut(&n).unwrap();
        t.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.6..0.6));
    }
}

fn model(backbone: Backbone, sar: SarVariant, ctx: usize, k: usize) -> Model {
    let mut m = Model::new(small_spec(backbone, sar), sizes(ctx), k, 3, Precision::F64).unwrap();
    scramble(&mut m, 11);
    m
}

const ALL_BACKBONES: [Backbone; 4] = [Backbone::Fm, Backbone::WideDeep, Backbone::Ncf, Backbone::Ple];
const ALL_SAR: [SarVariant; 4] = [SarVariant::None, SarVariant::SumPool, SarVariant::Lstm, SarVariant::Attn];

// ----- embeddings ------------------------------------------------------------

#[test]
fn embed_user_rows_and_widths() {
    let m = model(Backbone::Ncf, SarVariant::None, 0, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut b = random_batch(&mut rng, 1, 2, 0);
    b.users = vec![3];
    let mut tape = Tape::new();
    let (e_u, _) = m.embed_user(&mut tape, &b.point()).unwrap();
    let table = m.params.by_name("emb.user").unwrap().values();
    assert_eq!(tape.value(e_u), &table[9..12]);

    let mut spec = small_spec(Backbone::Ncf, SarVariant::None);
    spec.embed_dim = 4;
    let m2 = Model::new(spec, sizes(1), 2, 0, Precision::F64).unwrap();
    let b2 = random_batch(&mut rng, 5, 2, 1);
    let mut tape = Tape::new();
    let (e_u, fields) = m2.embed_user(&mut tape, &b2.point()).unwrap();
    assert_eq!(tape.shape(e_u), &[5, 8]);
    assert_eq!(fields.len(), 2);

    let mut bad = b2.clone();
    bad.users[0] = USERS;
    let mut tape = Tape::new();
    let err = m2.embed_user(&mut tape, &bad.point()).unwrap_err();
    assert!(matches!(err, Error::Index { ref field, .. } if field == "user"), "{err}");
}

#[test]
fn embed_item_sums_category_bag() {
    let m = model(Backbone::Ncf, SarVariant::None, 0, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut b = random_batch(&mut rng, 1, 2, 0);
    b.items = vec![4];
    b.item_cat_ids = vec![1, 3];
    b.item_cat_offsets = vec![0, 2];
    let mut tape = Tape::new();
    let (e_i, _) = m.embed_item(&mut tape, &b.point()).unwrap();
    let items = m.params.by_name("emb.item").unwrap().values();
    let cats = m.params.by_name("emb.category").unwrap().values();
    let mut want = items[12..15].to_vec();
    want.extend((0..2).map(|j| cats[2 + j] + cats[6 + j]));
    assert_eq!(tape.value(e_i), want.as_slice());
}

#[test]
fn embed_slate_shapes_order_and_errors() {
    let mut spec = ModelSpec::new(Backbone::Ncf, SarVariant::SumPool);
    spec.embed_dim = 16;
    spec.category_dim = 8;
    let m = Model::new(spec, sizes(0), 20, 0, Precision::F64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = random_batch(&mut rng, 2, 20, 0);
    let mut tape = Tape::new();
    let e_s = m.embed_slate(&mut tape, &b).unwrap();
    assert_eq!(tape.shape(e_s), &[2, 20, 24]);

    // row j is the concatenation of the j-th item and category rows
    let items = m.params.by_name("emb.slate_item").unwrap().values();
    let cats = m.params.by_name("emb.slate_category").unwrap().values();
    let row = |j: usize| {
        let (i, c) = (b.slate_items[j], b.slate_cats[j]);
        let mut r = items[i * 16..(i + 1) * 16].to_vec();
        r.extend_from_slice(&cats[c * 8..(c + 1) * 8]);
        r
    };
    for j in 0..40 {
        assert_eq!(&tape.value(e_s)[j * 24..(j + 1) * 24], row(j).as_slice());
    }

    let mut wrong = b.clone();
    wrong.slate_items.pop();
    let mut tape = Tape::new();
    assert!(matches!(m.embed_slate(&mut tape, &wrong), Err(Error::Shape(_))));
}

#[test]
fn embed_slate_single_and_permuted() {
    let m = model(Backbone::Ncf, SarVariant::SumPool, 0, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = random_batch(&mut rng, 1, 4, 0);
    let perm = [2, 0, 3, 1];
    let mut p = b.clone();
    p.slate_items = perm.iter().map(|&j| b.slate_items[j]).collect();
    p.slate_cats = perm.iter().map(|&j| b.slate_cats[j]).collect();
    let mut tape = Tape::new();
    let a = m.embed_slate(&mut tape, &b).unwrap();
    let c = m.embed_slate(&mut tape, &p).unwrap();
    let w = m.slate_width();
    for (dst, &src) in perm.iter().enumerate() {
        assert_eq!(&tape.value(c)[dst * w..(dst + 1) * w], &tape.value(a)[src * w..(src + 1) * w]);
    }

    let m1 = model(Backbone::Ncf, SarVariant::SumPool, 0, 1);
    let b1 = random_batch(&mut rng, 1, 1, 0);
    let mut tape = Tape::new();
    let e = m1.embed_slate(&mut tape, &b1).unwrap();
    assert_eq!(tape.shape(e), &[1, 1, w]);
}

// ----- slate encoder ---------------------------------------------------------

fn slate_encoding(m: &Model, b: &Batch) -> (Vec<f64>, Option<Vec<f64>>) {
    let mut tape = Tape::new();
    let out = m.forward_train(&mut tape, b).unwrap();
    let l_s = tape.value(out.l_s.unwrap()).to_vec();
    (l_s, out.attention.map(|a| tape.value(a).to_vec()))
}

#[test]
fn attention_over_single_item_is_identity() {
    let m = model(Backbone::Ncf, SarVariant::Attn, 0, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = random_batch(&mut rng, 3, 1, 0);
    let mut tape = Tape::new();
    let e_s = m.embed_slate(&mut tape, &b).unwrap();
    let (e_u, _) = m.embed_user(&mut tape, &b.point()).unwrap();
    let q = tape.slice(e_s, 1, 0, 1).unwrap();
    let q = tape.reshape(q, &[3, m.slate_width()]).unwrap();
    let (pooled, attn) = m.pool_slate(&mut tape, e_s, Some(q)).unwrap();
    assert_eq!(tape.value(attn.unwrap()), &[1.0, 1.0, 1.0]);
    assert_eq!(tape.value(pooled), tape.value(e_s));
    let _ = e_u;
}

#[test]
fn sumpool_ignores_order_lstm_does_not() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = random_batch(&mut rng, 2, 5, 0);
    let mut p = b.clone();
    for r in 0..2 {
        p.slate_items[r * 5..(r + 1) * 5].reverse();
        p.slate_cats[r * 5..(r + 1) * 5].reverse();
    }
    let sum = model(Backbone::Ncf, SarVariant::SumPool, 0, 5);
    let (a, _) = slate_encoding(&sum, &b);
    let (c, _) = slate_encoding(&sum, &p);
    for (x, y) in a.iter().zip(&c) {
        assert!((x - y).abs() < 1e-12);
    }
    let lstm = model(Backbone::Ncf, SarVariant::Lstm, 0, 5);
    let (a, _) = slate_encoding(&lstm, &b);
    let (c, _) = slate_encoding(&lstm, &p);
    assert!(a.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) > 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn attention_weights_form_a_distribution(seed in 0u64..10_000, k in 1usize..8) {
        let m = model(Backbone::Ncf, SarVariant::Attn, 0, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_batch(&mut rng, 4, k, 0);
        let (_, attn) = slate_encoding(&m, &b);
        for row in attn.unwrap().chunks(k) {
            prop_assert!(row.iter().all(|&w| w >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

// ----- user encoder and decoder ---------------------------------------------

fn zero_prefix(m: &mut Model, prefix: &str) {
    let names: Vec<String> = m.params.names().filter(|n| n.starts_with(prefix)).map(str::to_string).collect();
    for n in names {
        m.params.by_name_mut(&n).unwrap().values_mut().fill(0.0);
    }
}

#[test]
fn encoder_widths_match_dim() {
    let spec = ModelSpec::new(Backbone::Ncf, SarVariant::Attn);
    let m = Model::new(spec, sizes(1), 4, 0, Precision::F64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = random_batch(&mut rng, 3, 4, 1);
    let mut tape = Tape::new();
    let out = m.forward_train(&mut tape, &b).unwrap();
    assert_eq!(tape.shape(out.l_u.unwrap()), &[3, 16]);
    assert_eq!(tape.shape(out.l_s.unwrap()), &[3, 16]);
    assert_eq!(tape.shape(out.d.unwrap()), &[3, 16]);
}

#[test]
fn zero_weights_give_zero_outputs() {
    let mut m = model(Backbone::Ncf, SarVariant::Attn, 1, 3);
    zero_prefix(&mut m, "enc_u.");
    zero_prefix(&mut m, "dec.");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let b = random_batch(&mut rng, 4, 3, 1);
    let mut tape = Tape::new();
    let out = m.forward_train(&mut tape, &b).unwrap();
    assert!(tape.value(out.l_u.unwrap()).iter().all(|&v| v == 0.0));
    assert!(tape.value(out.d.unwrap()).iter().all(|&v| v == 0.0));
}

#[test]
fn decoder_is_one_function_of_its_input() {
    let m = model(Backbone::Ncf, SarVariant::Attn, 0, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b = random_batch(&mut rng, 4, 3, 0);
    let mut tape = Tape::new();
    let (e_u, _) = m.embed_user(&mut tape, &b.point()).unwrap();
    let l = m.encode_user(&mut tape, e_u).unwrap();
    let copy = tape.constant(tape.shape(l).to_vec(), tape.value(l).to_vec()).unwrap();
    let d1 = m.decode(&mut tape, l, e_u).unwrap();
    let d2 = m.decode(&mut tape, copy, e_u).unwrap();
    assert_eq!(tape.value(d1), tape.value(d2));
}

fn assert_gradcheck<F>(m: &Model, f: F)
where
    F: for<'a> Fn(&mut Tape<'a>, &'a Model) -> crate::Result<Var>,
{
    let r = check_params(m, f, DEFAULT_STEP, Some(6)).unwrap();
    assert!(r.checked > 0);
    assert!(r.max_rel_err < 1e-4, "{}: rel err {} at {}", m.spec.backbone, r.max_rel_err, r.worst);
}

#[test]
fn encoder_and_decoder_gradchecks() {
    let m = model(Backbone::Ncf, SarVariant::Attn, 1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let b = random_batch(&mut rng, 2, 3, 1);
    assert_gradcheck(&m, |tape, m| {
        let (e_u, _) = m.embed_user(tape, &b.point())?;
        let l_u = m.encode_user(tape, e_u)?;
        let d = m.decode(tape, l_u, e_u)?;
        let s = tape.mul(d, d)?;
        Ok(tape.sum(s))
    });
}

// ----- backbones ---------------------------------------------------------------

#[test]
fn fm_orthogonal_fields_do_not_interact() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let b = tape.constant(vec![1, 2], vec![0.0, 3.0]).unwrap();
    let out = fm_interaction(&mut tape, &[a, b]).unwrap();
    assert_eq!(tape.value(out), &[0.0]);
}

#[test]
fn fm_identity_matches_brute_force_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (n, f, k) = (3, 5, 7);
        let fields: Vec<Vec<f64>> = (0..f)
            .map(|_| (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = fields
            .iter()
            .map(|v| tape.constant(vec![n, k], v.clone()).unwrap())
            .collect();
        let out = fm_interaction(&mut tape, &vars).unwrap();
        for r in 0..n {
            let mut brute = 0.0;
            for i in 0..f {
                for j in i + 1..f {
                    brute += (0..k).map(|c| fields[i][r * k + c] * fields[j][r * k + c]).sum::<f64>();
                }
            }
            let got = tape.value(out)[r];
            assert!((got - brute).abs() / brute.abs().max(1e-300) < 1e-10, "{got} vs {brute}");
        }
    }
}

#[test]
fn ple_pinned_gates_reduce_to_single_expert_tower() {
    let mut m = model(Backbone::Ple, SarVariant::None, 1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let b = random_batch(&mut rng, 4, 3, 1);
    for t in 0..2 {
        m.params.by_name_mut(&format!("ple.task{t}.gate.w")).unwrap().values_mut().fill(0.0);
        // own first expert is slot 2 in [shared0, shared1, own0, own1]
        let gb = m.params.by_name_mut(&format!("ple.task{t}.gate.b")).unwrap();
        gb.values_mut().copy_from_slice(&[-60.0, -60.0, 60.0, -60.0]);
    }
    let mut tape = Tape::new();
    let out = m.forward_train(&mut tape, &b).unwrap();
    let preds = tape.value(out.preds).to_vec();

    // reference: one expert feeding the tower directly
    let mut tape = Tape::new();
    let emb = m.embed(&mut tape, &b.point()).unwrap();
    let x = tape.concat(&[emb.e_u, emb.e_i], 1).unwrap();
    for t in 0..2 {
        let h = m.dense(&mut tape, x, &format!("ple.task{t}.expert0")).unwrap();
        let h = tape.relu(h);
        let h = m.dense(&mut tape, h, &format!("ple.task{t}.tower1")).unwrap();
        let h = tape.relu(h);
        let y = m.dense(&mut tape, h, &format!("ple.task{t}.tower2")).unwrap();
        for r in 0..4 {
            let want = tape.value(y)[r];
            assert!((preds[r * 2 + t] - want).abs() < 1e-12, "task {t} row {r}");
        }
    }
}

#[test]
fn backbone_errors_name_the_backbone() {
    let m = model(Backbone::WideDeep, SarVariant::Attn, 0, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let b = random_batch(&mut rng, 2, 3, 0);
    let mut tape = Tape::new();
    let emb = m.embed(&mut tape, &b.point()).unwrap();
    let err = m.backbone_forward(&mut tape, &b.point(), &emb, None).unwrap_err();
    assert!(err.to_string().contains("widedeep"), "{err}");
}

// ----- full graphs -------------------------------------------------------------

fn train_loss<'a>(tape: &mut Tape<'a>, m: &'a Model, b: &Batch) -> crate::Result<Var> {
    let out = m.forward_train(tape, b)?;
    let n = b.len as f64;
    let ctr = tape.slice(out.preds, 1, 0, 1)?;
    let mut loss = tape.bce_with_logits(ctr, &b.clicks, &vec![1.0; b.len], n)?;
    if m.spec.num_tasks() > 1 {
        let w = tape.slice(out.preds, 1, 1, 1)?;
        let h = tape.huber(w, &b.watch, &b.watch_mask, 1.0, n)?;
        loss = tape.add(loss, h)?;
    }
    if let (Some(u), Some(s)) = (out.l_u, out.l_s) {
        let sim = tape.mean_squared_diff(u, s)?;
        loss = tape.add(loss, sim)?;
    }
    Ok(loss)
}

#[test]
fn full_graph_gradchecks_for_every_backbone_and_variant() {
    for backbone in ALL_BACKBONES {
        for sar in ALL_SAR {
            let m = model(backbone, sar, 1, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(15);
            let b = random_batch(&mut rng, 2, 3, 1);
            let r = check_params(&m, |tape, m| train_loss(tape, m, &b), DEFAULT_STEP, Some(6)).unwrap();
            assert!(r.max_rel_err < 1e-4, "{backbone}/{sar}: {} at {}", r.max_rel_err, r.worst);
        }
    }
}

#[test]
fn train_output_carries_both_encodings() {
    let m = model(Backbone::WideDeep, SarVariant::Lstm, 0, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let b = random_batch(&mut rng, 3, 3, 0);
    let mut tape = Tape::new();
    let out = m.forward_train(&mut tape, &b).unwrap();
    assert_eq!(tape.shape(out.l_u.unwrap()), tape.shape(out.l_s.unwrap()));
    let out = m.forward_infer(&mut tape, &b.point()).unwrap();
    assert!(out.l_u.is_some() && out.l_s.is_none());
}

#[test]
fn baseline_is_the_plain_backbone() {
    for backbone in ALL_BACKBONES {
        let m = model(backbone, SarVariant::None, 1, 3);
        assert_eq!(m.sar_param_count(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = random_batch(&mut rng, 5, 3, 1);
        let mut tape = Tape::new();
        let out = m.forward_train(&mut tape, &b).unwrap();
        assert!(out.l_u.is_none() && out.l_s.is_none() && out.d.is_none());
        let emb = m.embed(&mut tape, &b.point()).unwrap();
        let direct = m.backbone_forward(&mut tape, &b.point(), &emb, None).unwrap();
        assert_eq!(tape.value(out.preds), tape.value(direct));
        let inf = m.forward_infer(&mut tape, &b.point()).unwrap();
        assert_eq!(tape.value(out.preds), tape.value(inf.preds));
    }
}

#[test]
fn infer_matches_train_when_encoders_agree() {
    // Zero the last layers of both encoders and give them the same bias, so
    // l_u == l_s for every input.
    let mut m = model(Backbone::Ncf, SarVariant::Attn, 1, 4);
    zero_prefix(&mut m, "enc_s.l2.w");
    zero_prefix(&mut m, "enc_u.l2.w");
    let bias = m.params.by_name("enc_s.l2.b").unwrap().values().to_vec();
    m.params.by_name_mut("enc_u.l2.b").unwrap().values_mut().copy_from_slice(&bias);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let b = random_batch(&mut rng, 6, 4, 1);
    let mut tape = Tape::new();
    let tr = m.forward_train(&mut tape, &b).unwrap();
    let inf = m.forward_infer(&mut tape, &b.point()).unwrap();
    assert_eq!(tape.value(tr.l_u.unwrap()), tape.value(tr.l_s.unwrap()));
    assert_eq!(tape.value(tr.preds), tape.value(inf.preds));
}

#[test]
fn candidate_scoring_computes_user_side_once() {
    for backbone in ALL_BACKBONES {
        let m = model(backbone, SarVariant::Attn, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut b = random_batch(&mut rng, 7, 3, 1);
        b.users = vec![2; 7];
        b.contexts = vec![vec![1; 7]];
        let mut tape = Tape::new();
        let batched = m.forward_infer(&mut tape, &b.point()).unwrap();
        let cached = m
            .forward_candidates(&mut tape, 2, &[1], &b.items, &b.item_cat_ids, &b.item_cat_offsets)
            .unwrap();
        assert_eq!(tape.value(batched.preds), tape.value(cached.preds), "{backbone}");
        let single = m
            .forward_candidates(&mut tape, 2, &[1], &b.items[..1], &b.item_cat_ids[..b.item_cat_offsets[1]], &b.item_cat_offsets[..2])
            .unwrap();
        let dim = m.spec.dim;
        for r in 0..7 {
            assert_eq!(&tape.value(cached.d.unwrap())[r * dim..(r + 1) * dim], tape.value(single.d.unwrap()));
            assert_eq!(&tape.value(cached.l_u.unwrap())[r * dim..(r + 1) * dim], tape.value(single.l_u.unwrap()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn inference_never_reads_the_slate(seed in 0u64..100_000, bi in 0usize..4, si in 1usize..4) {
        let m = model(ALL_BACKBONES[bi], ALL_SAR[si], 1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_batch(&mut rng, 5, 4, 1);
        let mut mutated = b.clone();
        mutated.slate_items.iter_mut().for_each(|v| *v = rng.random_range(0..ITEMS));
        mutated.slate_cats.iter_mut().for_each(|v| *v = rng.random_range(0..CATS));
        mutated.target_slate_cat.iter_mut().for_each(|v| *v = rng.random_range(0..CATS));
        let mut tape = Tape::new();
        let a = m.forward_infer(&mut tape, &b.point()).unwrap();
        let c = m.forward_infer(&mut tape, &mutated.point()).unwrap();
        let (av, cv) = (tape.value(a.preds), tape.value(c.preds));
        prop_assert!(av.iter().zip(cv).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

// ----- distillation ---------------------------------------------------------------

#[test]
fn teacher_skips_the_user_encoder() {
    let m = model(Backbone::Ncf, SarVariant::Attn, 0, 3);
    let mut zeroed = m.clone();
    zero_prefix(&mut zeroed, "enc_u.");
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let b = random_batch(&mut rng, 4, 3, 0);
    let mut tape = Tape::new();
    let a = m.pfd_teacher_forward(&mut tape, &b).unwrap();
    let c = zeroed.pfd_teacher_forward(&mut tape, &b).unwrap();
    assert!(a.l_u.is_none());
    assert_eq!(tape.value(a.preds), tape.value(c.preds));

    let base = model(Backbone::Ncf, SarVariant::None, 0, 3);
    let mut tape = Tape::new();
    assert!(base.pfd_teacher_forward(&mut tape, &b).is_err());
}

#[test]
fn teacher_gradcheck() {
    let m = model(Backbone::WideDeep, SarVariant::Attn, 1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let b = random_batch(&mut rng, 2, 3, 1);
    assert_gradcheck(&m, |tape, m| {
        let out = m.pfd_teacher_forward(tape, &b)?;
        tape.bce_with_logits(out.preds, &b.clicks, &[1.0, 1.0], 2.0)
    });
}

#[test]
fn distill_loss_limits() {
    let labels = [1.0, 0.0, 1.0];
    let logits = [0.3, -1.2, 2.0];
    let teacher = [1.5, 0.2, -0.7];

    let mut tape = Tape::new();
    let s = tape.constant(vec![3], logits.to_vec()).unwrap();
    let l0 = distill_loss(&mut tape, s, &teacher, &labels, 0.0, 1.0).unwrap();
    let hard = tape.bce_with_logits(s, &labels, &[1.0; 3], 3.0).unwrap();
    assert_eq!(tape.scalar(l0), tape.scalar(hard));

    let l1 = distill_loss(&mut tape, s, &[0.0; 3], &labels, 1.0, 1.0).unwrap();
    let half = tape.bce_with_logits(s, &[0.5; 3], &[1.0; 3], 3.0).unwrap();
    assert_eq!(tape.scalar(l1), tape.scalar(half));

    assert!(matches!(distill_loss(&mut tape, s, &teacher, &labels, 1.5, 1.0), Err(Error::Config(_))));
    assert!(matches!(distill_loss(&mut tape, s, &teacher, &labels, 0.5, 0.0), Err(Error::Config(_))));
}

#[test]
fn distillation_gradient_stops_at_the_teacher() {
    let teacher = model(Backbone::Ncf, SarVariant::Attn, 0, 3);
    let student = model(Backbone::Ncf, SarVariant::None, 0, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let b = random_batch(&mut rng, 4, 3, 0);
    let mut tape = Tape::new();
    let t = teacher.pfd_teacher_forward(&mut tape, &b).unwrap();
    let t_logits = tape.value(t.preds).to_vec();
    let s = student.forward_train(&mut tape, &b).unwrap();
    let loss = distill_loss(&mut tape, s.preds, &t_logits, &b.clicks, 0.5, 2.0).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut teacher_grads = teacher.params.clone();
    teacher_grads.zero_grad();
    teacher_grads.accumulate(&grads);
    let mut student_grads = student.params.clone();
    student_grads.zero_grad();
    student_grads.accumulate(&grads);
    assert!(teacher_grads.iter().all(|(_, _, t)| t.grad.is_none()));
    assert!(student_grads.iter().any(|(_, _, t)| t.grad.is_some()));
}

// ----- checkpoints --------------------------------------------------------------

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut spec = small_spec(Backbone::Ple, SarVariant::Lstm);
    spec.hidden = vec![5];
    let mut m = Model::new(spec, sizes(2), 3, 5, Precision::F32).unwrap();
    // values already f32-representable at F32 precision
    let names: Vec<String> = m.params.names().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for n in names {
        m.params
            .by_name_mut(&n)
            .unwrap()
            .values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-3.0f32..3.0) as f64);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&m, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(checkpoint_bytes(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn checkpoint_mismatch_reports_shapes() {
    let m = Model::new(small_spec(Backbone::Ncf, SarVariant::None), sizes(0), 3, 0, Precision::F32).unwrap();
    let mut other = sizes(0);
    other.item += 2;
    let err = m.check_compatible(&other, 3).unwrap_err().to_string();
    assert!(err.contains("item: model 9, data 11"), "{err}");

    let mut bytes = checkpoint_bytes(&m).unwrap();
    bytes.truncate(bytes.len() - 4);
    assert!(parse_checkpoint(&bytes).is_err());
    assert!(parse_checkpoint(b"hello\n").is_err());
}
