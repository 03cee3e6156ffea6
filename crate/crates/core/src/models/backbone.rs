use super::model::{Embedded, Model};
use super::spec::Backbone;
use crate::data::PointFeatures;
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

/// Pairwise FM interaction `sum_{i<j} <v_i, v_j>` of equal-width field
/// vectors, each `[B, k]`, via `0.5 (|sum v|^2 - sum |v|^2)`. Returns `[B, 1]`.
pub fn fm_interaction(tape: &mut Tape<'_>, fields: &[Var]) -> Result<Var> {
    let first = *fields
        .first()
        .ok_or_else(|| Error::Precondition("FM interaction over zero fields".into()))?;
    let s = tape.shape(first).to_vec();
    let (b, k) = (s[0], s[1]);
    let mut stacked = Vec::with_capacity(fields.len());
    for &v in fields {
        if tape.shape(v) != s.as_slice() {
            return Err(Error::Dimension {
                op: "fm_interaction",
                lhs: s,
                rhs: tape.shape(v).to_vec(),
            });
        }
        stacked.push(tape.reshape(v, &[b, 1, k])?);
    }
    let all = tape.concat(&stacked, 1)?;
    let total = tape.sum_axis(all, 1)?;
    let sq_of_sum = tape.mul(total, total)?;
    let sq_of_sum = tape.sum_axis(sq_of_sum, 1)?;
    let sq = tape.mul(all, all)?;
    let sq = tape.sum_axis(sq, 2)?;
    let sum_of_sq = tape.sum_axis(sq, 1)?;
    let diff = tape.sub(sq_of_sum, sum_of_sq)?;
    let half = tape.scale(diff, 0.5);
    tape.reshape(half, &[b, 1])
}

impl Model {
    /// Per-field first-order weights summed with the bias: `[B, M]`.
    fn first_order<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        f: &PointFeatures<'_>,
        prefix: &str,
        bias: &str,
    ) -> Result<Var> {
        let table = self.p(tape, &format!("{prefix}.first.user"))?;
        let mut acc = tape.embedding_lookup(table, f.users, "user")?;
        for (i, col) in f.contexts.iter().enumerate() {
            let table = self.p(tape, &format!("{prefix}.first.context{i}"))?;
            let t = tape.embedding_lookup(table, col, &format!("context{i}"))?;
            acc = tape.add(acc, t)?;
        }
        let table = self.p(tape, &format!("{prefix}.first.item"))?;
        let t = tape.embedding_lookup(table, f.items, "item")?;
        acc = tape.add(acc, t)?;
        if self.spec.use_categories {
            let table = self.p(tape, &format!("{prefix}.first.category"))?;
            let t = tape.embedding_bag(table, f.item_cat_ids, f.item_cat_offsets, "category")?;
            acc = tape.add(acc, t)?;
        }
        let b = self.p(tape, bias)?;
        tape.add_bias(acc, b)
    }

    fn relu_stack<'a>(&'a self, tape: &mut Tape<'a>, mut x: Var, prefix: &str) -> Result<Var> {
        for j in 0..self.spec.hidden.len() {
            let h = self.dense(tape, x, &format!("{prefix}{j}"))?;
            x = tape.relu(h);
        }
        Ok(x)
    }

    /// Backbone predictions `[B, M]` from `e_u ⊕ e_i (⊕ d)`.
    pub fn backbone_forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        f: &PointFeatures<'_>,
        emb: &Embedded,
        d: Option<Var>,
    ) -> Result<Var> {
        let backbone = self.spec.backbone;
        if d.is_some() != self.spec.is_sar() {
            return Err(Error::Config(format!(
                "{backbone} backbone: decoder output {} but sar = {}",
                if d.is_some() { "given" } else { "missing" },
                self.spec.sar
            )));
        }
        let mut parts = vec![emb.e_u, emb.e_i];
        parts.extend(d);
        let x = tape.concat(&parts, 1)?;
        let width = tape.shape(x)[1];
        if width != self.backbone_input_width() {
            return Err(Error::Shape(format!(
                "{backbone} backbone expects input width {}, got {width}",
                self.backbone_input_width()
            )));
        }
        let n = tape.shape(x)[0];
        let m = self.spec.num_tasks();

        match backbone {
            Backbone::Fm => {
                let mut out = self.first_order(tape, f, "fm", "fm.bias")?;
                let mut fields: Vec<Var> = emb.user_fields.clone();
                fields.extend(&emb.item_fields);
                if let Some(d) = d {
                    let w = self.p(tape, "fm.first.d")?;
                    let lin = tape.matmul(d, w)?;
                    out = tape.add(out, lin)?;
                    fields.push(d);
                }
                let inter = fm_interaction(tape, &fields)?;
                let inter = if m == 1 {
                    inter
                } else {
                    let ones = tape.constant(vec![1, m], vec![1.0; m])?;
                    tape.matmul(inter, ones)?
                };
                tape.add(out, inter)
            }
            Backbone::WideDeep => {
                let wide = self.first_order(tape, f, "wide", "wide.bias")?;
                let h = self.relu_stack(tape, x, "deep.l")?;
                let deep = self.dense(tape, h, "deep.out")?;
                tape.add(wide, deep)
            }
            Backbone::Ncf => {
                let gu = self.p(tape, "ncf.gmf_user")?;
                let gi = self.p(tape, "ncf.gmf_item")?;
                let gu = tape.embedding_lookup(gu, f.users, "user")?;
                let gi = tape.embedding_lookup(gi, f.items, "item")?;
                let gmf = tape.mul(gu, gi)?;
                let h = self.relu_stack(tape, x, "ncf.mlp.l")?;
                let merged = tape.concat(&[gmf, h], 1)?;
                self.dense(tape, merged, "ncf.out")
            }
            Backbone::Ple => {
                let dim = self.spec.dim;
                let expert = |tape: &mut Tape<'a>, prefix: String| -> Result<Var> {
                    let h = self.dense(tape, x, &prefix)?;
                    let h = tape.relu(h);
                    tape.reshape(h, &[n, 1, dim])
                };
                let shared = [expert(tape, "ple.shared0".into())?, expert(tape, "ple.shared1".into())?];
                let mut heads = Vec::with_capacity(m);
                for t in 0..m {
                    let own0 = expert(tape, format!("ple.task{t}.expert0"))?;
                    let own1 = expert(tape, format!("ple.task{t}.expert1"))?;
                    let pool = tape.concat(&[shared[0], shared[1], own0, own1], 1)?;
                    let g = self.dense(tape, x, &format!("ple.task{t}.gate"))?;
                    let g = tape.sigmoid(g);
                    let mixed = tape.weighted_pool(g, pool)?;
                    let h = self.dense(tape, mixed, &format!("ple.task{t}.tower1"))?;
                    let h = tape.relu(h);
                    heads.push(self.dense(tape, h, &format!("ple.task{t}.tower2"))?);
                }
                tape.concat(&heads, 1)
            }
        }
    }
}
