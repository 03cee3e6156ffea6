use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{Backbone, ModelSpec, SarVariant};
use crate::data::{Batch, PointFeatures, VocabSizes};
use crate::diffcore::nn::{linear, lstm_step, LstmWeights};
use crate::diffcore::{ParamStore, Precision, Tape, Var};
use crate::error::{Error, Result};

/// Parameters plus everything needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub sizes: VocabSizes,
    pub slate_size: usize,
    pub params: ParamStore,
}

/// Result of one forward pass over a batch.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[B, M]`: logits for binary tasks, raw values for regression tasks.
    pub preds: Var,
    pub l_u: Option<Var>,
    /// Present only in training mode.
    pub l_s: Option<Var>,
    pub d: Option<Var>,
    /// `[B, K]` attention weights of the `attn` slate encoder.
    pub attention: Option<Var>,
}

/// Per-field and concatenated embeddings of the point features.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub user_fields: Vec<Var>,
    pub item_fields: Vec<Var>,
    pub e_u: Var,
    pub e_i: Var,
}

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.store
            .insert_glorot(format!("{prefix}.w"), fan_in, fan_out, &mut self.rng)?;
        self.store.insert_zeros(format!("{prefix}.b"), &[fan_out])?;
        Ok(())
    }

    fn table(&mut self, name: &str, rows: usize, dim: usize) -> Result<()> {
        self.store.insert_embedding(name, rows, dim, &mut self.rng)?;
        Ok(())
    }
}

impl Model {
    /// Builds freshly initialized parameters for `spec`.
    pub fn new(
        spec: ModelSpec,
        sizes: VocabSizes,
        slate_size: usize,
        seed: u64,
        precision: Precision,
    ) -> Result<Model> {
        spec.validate()?;
        if slate_size == 0 {
            return Err(Error::Config("slate size must be at least 1".into()));
        }
        let mut b = Builder {
            store: ParamStore::new(precision),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (e, c, dim, m) = (spec.embed_dim, spec.category_dim, spec.dim, spec.num_tasks());
        b.table("emb.user", sizes.user, e)?;
        for (i, &v) in sizes.context.iter().enumerate() {
            b.table(&format!("emb.context{i}"), v, e)?;
        }
        b.table("emb.item", sizes.item, e)?;
        if spec.use_categories {
            b.table("emb.category", sizes.category, c)?;
        }

        let model = Model {
            spec,
            sizes,
            slate_size,
            params: ParamStore::new(precision),
        };
        let (d_u, d_s) = (model.user_width(), model.slate_width());
        if model.spec.is_sar() {
            b.table("emb.slate_item", model.sizes.item, e)?;
            if model.spec.use_categories {
                b.table("emb.slate_category", model.sizes.category, c)?;
            }
            match model.spec.sar {
                SarVariant::Attn => {
                    b.dense("enc_s.attn1", 3 * d_s, dim)?;
                    b.dense("enc_s.attn2", dim, 1)?;
                }
                SarVariant::Lstm => {
                    b.store.insert_glorot("enc_s.lstm.w_x", d_s, 4 * dim, &mut b.rng)?;
                    b.store.insert_glorot("enc_s.lstm.w_h", dim, 4 * dim, &mut b.rng)?;
                    b.store.insert_zeros("enc_s.lstm.b", &[4 * dim])?;
                }
                SarVariant::SumPool | SarVariant::None => {}
            }
            b.dense("enc_s.l1", model.pooled_width() + d_u, dim)?;
            b.dense("enc_s.l2", dim, dim)?;
            b.dense("enc_u.l1", d_u, dim)?;
            b.dense("enc_u.l2", dim, dim)?;
            b.dense("dec.l1", dim + d_u, dim)?;
            b.dense("dec.l2", dim, dim)?;
        }

        let x_w = model.backbone_input_width();
        match model.spec.backbone {
            Backbone::Fm | Backbone::WideDeep => {
                let p = if model.spec.backbone == Backbone::Fm { "fm" } else { "wide" };
                b.table(&format!("{p}.first.user"), model.sizes.user, m)?;
                for (i, &v) in model.sizes.context.iter().enumerate() {
                    b.table(&format!("{p}.first.context{i}"), v, m)?;
                }
                b.table(&format!("{p}.first.item"), model.sizes.item, m)?;
                if model.spec.use_categories {
                    b.table(&format!("{p}.first.category"), model.sizes.category, m)?;
                }
                if model.spec.backbone == Backbone::Fm {
                    if model.spec.is_sar() {
                        b.store.insert_glorot("fm.first.d", dim, m, &mut b.rng)?;
                    }
                    b.store.insert_zeros("fm.bias", &[m])?;
                } else {
                    b.store.insert_zeros("wide.bias", &[m])?;
                    let mut fan_in = x_w;
                    for (j, &h) in model.spec.hidden.iter().enumerate() {
                        b.dense(&format!("deep.l{j}"), fan_in, h)?;
                        fan_in = h;
                    }
                    b.dense("deep.out", fan_in, m)?;
                }
            }
            Backbone::Ncf => {
                b.table("ncf.gmf_user", model.sizes.user, e)?;
                b.table("ncf.gmf_item", model.sizes.item, e)?;
                let mut fan_in = x_w;
                for (j, &h) in model.spec.hidden.iter().enumerate() {
                    b.dense(&format!("ncf.mlp.l{j}"), fan_in, h)?;
                    fan_in = h;
                }
                b.dense("ncf.out", e + fan_in, m)?;
            }
            Backbone::Ple => {
                for j in 0..2 {
                    b.dense(&format!("ple.shared{j}"), x_w, dim)?;
                }
                for t in 0..m {
                    for j in 0..2 {
                        b.dense(&format!("ple.task{t}.expert{j}"), x_w, dim)?;
                    }
                    b.dense(&format!("ple.task{t}.gate"), x_w, 4)?;
                    b.dense(&format!("ple.task{t}.tower1"), dim, dim)?;
                    b.dense(&format!("ple.task{t}.tower2"), dim, 1)?;
                }
            }
        }
        Ok(Model {
            params: b.store,
            ..model
        })
    }

    pub fn user_width(&self) -> usize {
        self.spec.embed_dim * (1 + self.sizes.context.len())
    }

    pub fn item_width(&self) -> usize {
        self.spec.embed_dim + if self.spec.use_categories { self.spec.category_dim } else { 0 }
    }

    /// Width of one slate row of `e_s`.
    pub fn slate_width(&self) -> usize {
        self.item_width()
    }

    /// Width of the pooled slate vector before the encoder MLP.
    pub fn pooled_width(&self) -> usize {
        match self.spec.sar {
            SarVariant::Lstm => self.spec.dim,
            _ => self.slate_width(),
        }
    }

    pub fn backbone_input_width(&self) -> usize {
        self.user_width() + self.item_width() + if self.spec.is_sar() { self.spec.dim } else { 0 }
    }

    pub(crate) fn p<'a>(&'a self, tape: &mut Tape<'a>, name: &str) -> Result<Var> {
        tape.param_named(&self.params, name)
    }

    pub(crate) fn dense<'a>(&'a self, tape: &mut Tape<'a>, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(tape, &format!("{prefix}.w"))?;
        let b = self.p(tape, &format!("{prefix}.b"))?;
        linear(tape, x, w, b)
    }

    /// Two-layer `[dim, dim]` MLP: relu hidden layer, linear output.
    fn mlp2<'a>(&'a self, tape: &mut Tape<'a>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.dense(tape, x, &format!("{prefix}.l1"))?;
        let h = tape.relu(h);
        self.dense(tape, h, &format!("{prefix}.l2"))
    }

    fn check_point(&self, f: &PointFeatures<'_>) -> Result<()> {
        let n = f.len();
        if n == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        if f.items.len() != n || f.item_cat_offsets.len() != n + 1 {
            return Err(Error::Shape(format!(
                "batch columns disagree: {n} users, {} items, {} category offsets",
                f.items.len(),
                f.item_cat_offsets.len()
            )));
        }
        if f.contexts.len() != self.sizes.context.len() || f.contexts.iter().any(|c| c.len() != n) {
            return Err(Error::Shape(format!(
                "model expects {} context fields of length {n}",
                self.sizes.context.len()
            )));
        }
        Ok(())
    }

    /// `e_u`: user-field rows concatenated, `[B, user_width]`.
    pub fn embed_user<'a>(&'a self, tape: &mut Tape<'a>, f: &PointFeatures<'_>) -> Result<(Var, Vec<Var>)> {
        self.check_point(f)?;
        let table = self.p(tape, "emb.user")?;
        let mut fields = vec![tape.embedding_lookup(table, f.users, "user")?];
        for (i, col) in f.contexts.iter().enumerate() {
            let table = self.p(tape, &format!("emb.context{i}"))?;
            fields.push(tape.embedding_lookup(table, col, &format!("context{i}"))?);
        }
        let e_u = if fields.len() == 1 {
            fields[0]
        } else {
            tape.concat(&fields, 1)?
        };
        Ok((e_u, fields))
    }

    /// `e_i`: item id row plus the sum-pooled category bag, `[B, item_width]`.
    pub fn embed_item<'a>(&'a self, tape: &mut Tape<'a>, f: &PointFeatures<'_>) -> Result<(Var, Vec<Var>)> {
        self.check_point(f)?;
        let table = self.p(tape, "emb.item")?;
        let mut fields = vec![tape.embedding_lookup(table, f.items, "item")?];
        if self.spec.use_categories {
            let table = self.p(tape, "emb.category")?;
            fields.push(tape.embedding_bag(table, f.item_cat_ids, f.item_cat_offsets, "category")?);
        }
        let e_i = if fields.len() == 1 {
            fields[0]
        } else {
            tape.concat(&fields, 1)?
        };
        Ok((e_i, fields))
    }

    pub fn embed<'a>(&'a self, tape: &mut Tape<'a>, f: &PointFeatures<'_>) -> Result<Embedded> {
        let (e_u, user_fields) = self.embed_user(tape, f)?;
        let (e_i, item_fields) = self.embed_item(tape, f)?;
        Ok(Embedded {
            user_fields,
            item_fields,
            e_u,
            e_i,
        })
    }

    /// Rows of the slate embedding space for the given item/category ids:
    /// `[n, slate_width]`.
    fn slate_rows<'a>(&'a self, tape: &mut Tape<'a>, items: &[usize], cats: &[usize]) -> Result<Var> {
        let table = self.p(tape, "emb.slate_item")?;
        let ids = tape.embedding_lookup(table, items, "slate_item")?;
        if !self.spec.use_categories {
            return Ok(ids);
        }
        let table = self.p(tape, "emb.slate_category")?;
        let cats = tape.embedding_lookup(table, cats, "slate_category")?;
        tape.concat(&[ids, cats], 1)
    }

    /// `e_s`: `[B, K, slate_width]`, one row per slate position in order.
    pub fn embed_slate<'a>(&'a self, tape: &mut Tape<'a>, batch: &Batch) -> Result<Var> {
        if !self.spec.is_sar() {
            return Err(Error::Usage("baseline model has no slate embeddings".into()));
        }
        let k = self.slate_size;
        let n = batch.len;
        if batch.slate_size != k || batch.slate_items.len() != n * k || batch.slate_cats.len() != n * k {
            return Err(Error::Shape(format!(
                "model expects slates of {k} items, batch has {} ({} ids for {n} samples)",
                batch.slate_size,
                batch.slate_items.len()
            )));
        }
        let rows = self.slate_rows(tape, &batch.slate_items, &batch.slate_cats)?;
        tape.reshape(rows, &[n, k, self.slate_width()])
    }

    /// Attention query: the target item in the slate embedding space.
    fn slate_query<'a>(&'a self, tape: &mut Tape<'a>, batch: &Batch) -> Result<Var> {
        self.slate_rows(tape, &batch.items, &batch.target_slate_cat)
    }

    /// Target-attention weights `[B, K]` of `query [B, d_s]` over `e_s [B, K, d_s]`.
    pub fn attention_weights<'a>(&'a self, tape: &mut Tape<'a>, e_s: Var, query: Var) -> Result<Var> {
        let s = tape.shape(e_s).to_vec();
        let (n, k, d) = (s[0], s[1], s[2]);
        let q = tape.expand(query, k)?;
        let qk = tape.mul(q, e_s)?;
        let feats = tape.concat(&[q, e_s, qk], 2)?;
        let feats = tape.reshape(feats, &[n * k, 3 * d])?;
        let h = self.dense(tape, feats, "enc_s.attn1")?;
        let h = tape.relu(h);
        let scores = self.dense(tape, h, "enc_s.attn2")?;
        let scores = tape.reshape(scores, &[n, k])?;
        Ok(tape.softmax(scores))
    }

    /// Pools `e_s` according to the SAR variant; also returns attention weights.
    pub fn pool_slate<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        e_s: Var,
        query: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        match self.spec.sar {
            SarVariant::None => Err(Error::Config("slate encoder requested for sar = none".into())),
            SarVariant::SumPool => Ok((tape.sum_pool(e_s)?, None)),
            SarVariant::Lstm => {
                let s = tape.shape(e_s).to_vec();
                let (n, k, d) = (s[0], s[1], s[2]);
                let w = LstmWeights {
                    w_x: self.p(tape, "enc_s.lstm.w_x")?,
                    w_h: self.p(tape, "enc_s.lstm.w_h")?,
                    bias: self.p(tape, "enc_s.lstm.b")?,
                };
                let hidden = self.spec.dim;
                let mut h = tape.constant(vec![n, hidden], vec![0.0; n * hidden])?;
                let mut c = h;
                for t in 0..k {
                    let x = tape.slice(e_s, 1, t, 1)?;
                    let x = tape.reshape(x, &[n, d])?;
                    (h, c) = lstm_step(tape, x, h, c, &w)?;
                }
                Ok((h, None))
            }
            SarVariant::Attn => {
                let q = query.ok_or_else(|| Error::Precondition("attention needs a target query".into()))?;
                let a = self.attention_weights(tape, e_s, q)?;
                Ok((tape.weighted_pool(a, e_s)?, Some(a)))
            }
        }
    }

    /// `l_s = Enc_s(pool(e_s) ⊕ e_u)`.
    pub fn encode_slate<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        e_s: Var,
        e_u: Var,
        query: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        let (pooled, attn) = self.pool_slate(tape, e_s, query)?;
        let x = tape.concat(&[pooled, e_u], 1)?;
        Ok((self.mlp2(tape, x, "enc_s")?, attn))
    }

    /// `l_u = Enc_u(e_u)`.
    pub fn encode_user<'a>(&'a self, tape: &mut Tape<'a>, e_u: Var) -> Result<Var> {
        self.mlp2(tape, e_u, "enc_u")
    }

    /// `d = Dec(l ⊕ e_u)`.
    pub fn decode<'a>(&'a self, tape: &mut Tape<'a>, l: Var, e_u: Var) -> Result<Var> {
        if tape.shape(l).last() != Some(&self.spec.dim) {
            return Err(Error::Dimension {
                op: "decode",
                lhs: tape.shape(l).to_vec(),
                rhs: vec![self.spec.dim],
            });
        }
        let x = tape.concat(&[l, e_u], 1)?;
        self.mlp2(tape, x, "dec")
    }

    /// Training graph. With `sar = none` this is exactly the baseline.
    pub fn forward_train<'a>(&'a self, tape: &mut Tape<'a>, batch: &Batch) -> Result<ForwardOutput> {
        self.forward_slate_aware(tape, batch, true)
    }

    /// PFD teacher: the training graph without the user encoder.
    pub fn pfd_teacher_forward<'a>(&'a self, tape: &mut Tape<'a>, batch: &Batch) -> Result<ForwardOutput> {
        if !self.spec.is_sar() {
            return Err(Error::Config("PFD teacher needs a slate encoder".into()));
        }
        self.forward_slate_aware(tape, batch, false)
    }

    fn forward_slate_aware<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        batch: &Batch,
        with_user_encoder: bool,
    ) -> Result<ForwardOutput> {
        let f = batch.point();
        let emb = self.embed(tape, &f)?;
        if !self.spec.is_sar() {
            let preds = self.backbone_forward(tape, &f, &emb, None)?;
            return Ok(ForwardOutput {
                preds,
                l_u: None,
                l_s: None,
                d: None,
                attention: None,
            });
        }
        if batch.slate_items.is_empty() {
            return Err(Error::Data("slate features missing from training batch".into()));
        }
        let e_s = self.embed_slate(tape, batch)?;
        let query = match self.spec.sar {
            SarVariant::Attn => Some(self.slate_query(tape, batch)?),
            _ => None,
        };
        let (l_s, attention) = self.encode_slate(tape, e_s, emb.e_u, query)?;
        let l_u = if with_user_encoder {
            Some(self.encode_user(tape, emb.e_u)?)
        } else {
            None
        };
        let d = self.decode(tape, l_s, emb.e_u)?;
        let preds = self.backbone_forward(tape, &f, &emb, Some(d))?;
        Ok(ForwardOutput {
            preds,
            l_u,
            l_s: Some(l_s),
            d: Some(d),
            attention,
        })
    }

    /// Inference graph: reads only user and target-item features.
    pub fn forward_infer<'a>(&'a self, tape: &mut Tape<'a>, f: &PointFeatures<'_>) -> Result<ForwardOutput> {
        let emb = self.embed(tape, f)?;
        let (l_u, d) = if self.spec.is_sar() {
            let l_u = self.encode_user(tape, emb.e_u)?;
            (Some(l_u), Some(self.decode(tape, l_u, emb.e_u)?))
        } else {
            (None, None)
        };
        let preds = self.backbone_forward(tape, f, &emb, d)?;
        Ok(ForwardOutput {
            preds,
            l_u,
            l_s: None,
            d,
            attention: None,
        })
    }

    /// Scores `N` candidate items for one user. User-side tensors (`e_u`,
    /// `l_u`, `d`) are computed once from a single row and repeated.
    ///
    /// `context` holds one encoded id per context field; `cat_offsets` has
    /// `N + 1` entries delimiting each candidate's category bag.
    pub fn forward_candidates<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        user: usize,
        context: &[usize],
        items: &[usize],
        cat_ids: &[usize],
        cat_offsets: &[usize],
    ) -> Result<ForwardOutput> {
        let n = items.len();
        if n == 0 {
            return Err(Error::Precondition("no candidates to score".into()));
        }
        let ctx_cols: Vec<Vec<usize>> = context.iter().map(|&c| vec![c]).collect();
        let one = PointFeatures {
            users: &[user],
            contexts: &ctx_cols,
            items: &items[..1],
            item_cat_ids: &[],
            item_cat_offsets: &[0, 0],
        };
        let (e_u1, user_fields1) = self.embed_user(tape, &one)?;
        let user_side = if self.spec.is_sar() {
            let l_u = self.encode_user(tape, e_u1)?;
            Some((l_u, self.decode(tape, l_u, e_u1)?))
        } else {
            None
        };

        let users = vec![user; n];
        let ctx_n: Vec<Vec<usize>> = context.iter().map(|&c| vec![c; n]).collect();
        let f = PointFeatures {
            users: &users,
            contexts: &ctx_n,
            items,
            item_cat_ids: cat_ids,
            item_cat_offsets: cat_offsets,
        };
        let (e_i, item_fields) = self.embed_item(tape, &f)?;
        let mut user_fields = Vec::with_capacity(user_fields1.len());
        for v in user_fields1 {
            user_fields.push(repeat_rows(tape, v, n)?);
        }
        let e_u = repeat_rows(tape, e_u1, n)?;
        let emb = Embedded {
            user_fields,
            item_fields,
            e_u,
            e_i,
        };
        let (l_u, d) = match user_side {
            Some((l_u, d)) => (Some(repeat_rows(tape, l_u, n)?), Some(repeat_rows(tape, d, n)?)),
            None => (None, None),
        };
        let preds = self.backbone_forward(tape, &f, &emb, d)?;
        Ok(ForwardOutput {
            preds,
            l_u,
            l_s: None,
            d,
            attention: None,
        })
    }

    /// Number of parameter tensors belonging to the slate-aware components.
    pub fn sar_param_count(&self) -> usize {
        self.params
            .names()
            .filter(|n| {
                n.starts_with("enc_s.")
                    || n.starts_with("enc_u.")
                    || n.starts_with("dec.")
                    || n.starts_with("emb.slate_")
                    || *n == "fm.first.d"
            })
            .count()
    }
}

/// `[1, w] -> [n, w]`.
fn repeat_rows(tape: &mut Tape<'_>, x: Var, n: usize) -> Result<Var> {
    let w = tape.shape(x)[1];
    let e = tape.expand(x, n)?;
    tape.reshape(e, &[n, w])
}
