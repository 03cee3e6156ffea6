use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use super::SlateSample;
use crate::error::{Error, Result};

/// Dense index map for one categorical field. Index 0 is reserved for ids
/// never seen during fitting.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FieldVocab {
    ids: Vec<u32>,
    index: HashMap<u32, usize>,
}

impl FieldVocab {
    pub const OOV: usize = 0;

    /// Known ids are indexed 1.. in ascending id order.
    pub fn from_ids(ids: impl IntoIterator<Item = u32>) -> Self {
        let ids: Vec<u32> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i + 1)).collect();
        FieldVocab { ids, index }
    }

    pub fn encode(&self, id: u32) -> usize {
        self.index.get(&id).copied().unwrap_or(Self::OOV)
    }

    /// Number of embedding rows, including the OOV row.
    pub fn size(&self) -> usize {
        self.ids.len() + 1
    }

    /// Raw id stored at `index`, if any.
    pub fn decode(&self, index: usize) -> Option<u32> {
        index.checked_sub(1).and_then(|i| self.ids.get(i)).copied()
    }
}

/// Vocabularies for every categorical field.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureVocab {
    pub user: FieldVocab,
    pub context: Vec<FieldVocab>,
    /// Shared by target items and slate members.
    pub item: FieldVocab,
    /// Shared by target categories and slate categories.
    pub category: FieldVocab,
}

impl FeatureVocab {
    pub fn fit(train: &[SlateSample], context_fields: usize) -> Self {
        let user = FieldVocab::from_ids(train.iter().map(|s| s.user_id));
        let context = (0..context_fields)
            .map(|f| FieldVocab::from_ids(train.iter().filter_map(|s| s.user_context.get(f).copied())))
            .collect();
        let item = FieldVocab::from_ids(
            train
                .iter()
                .flat_map(|s| std::iter::once(s.item_id).chain(s.slate_items.iter().copied())),
        );
        let category = FieldVocab::from_ids(train.iter().flat_map(|s| {
            s.item_categories
                .iter()
                .copied()
                .chain(s.slate_categories.iter().copied())
        }));
        FeatureVocab {
            user,
            context,
            item,
            category,
        }
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            user: self.user.size(),
            context: self.context.iter().map(FieldVocab::size).collect(),
            item: self.item.size(),
            category: self.category.size(),
        }
    }

    /// Text form: one line per field, `name<TAB>count<TAB>comma-separated ids`
    /// with ids listed in index order.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# slate-rank vocab v1\n");
        let mut line = |name: &str, f: &FieldVocab| {
            let ids: Vec<String> = f.ids.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{name}\t{}\t{}", f.ids.len(), ids.join(","));
        };
        line("user", &self.user);
        for (i, c) in self.context.iter().enumerate() {
            line(&format!("context{i}"), c);
        }
        line("item", &self.item);
        line("category", &self.category);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut vocab = FeatureVocab::default();
        let mut seen_user = false;
        for (i, raw) in text.lines().enumerate() {
            if raw.starts_with('#') || raw.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Data(format!("vocab line {}: {msg}", i + 1));
            let parts: Vec<&str> = raw.split('\t').collect();
            if parts.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", parts.len())));
            }
            let count: usize = parts[1].parse().map_err(|_| bad(format!("bad count `{}`", parts[1])))?;
            let ids = if parts[2].is_empty() {
                Vec::new()
            } else {
                parts[2]
                    .split(',')
                    .map(|s| s.parse::<u32>().map_err(|_| bad(format!("bad id `{s}`"))))
                    .collect::<Result<Vec<_>>>()?
            };
            if ids.len() != count || ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("id list does not match count or is not strictly ascending".into()));
            }
            let field = FieldVocab::from_ids(ids);
            match parts[0] {
                "user" => {
                    vocab.user = field;
                    seen_user = true;
                }
                "item" => vocab.item = field,
                "category" => vocab.category = field,
                name if name.starts_with("context") => vocab.context.push(field),
                other => return Err(bad(format!("unknown field `{other}`"))),
            }
        }
        if !seen_user {
            return Err(Error::Data("vocab has no user field".into()));
        }
        Ok(vocab)
    }
}

/// Embedding row counts per field (OOV row included).
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct VocabSizes {
    pub user: usize,
    pub context: Vec<usize>,
    pub item: usize,
    pub category: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn oov_maps_to_zero() {
        let v = FieldVocab::from_ids([30, 10, 20, 10]);
        assert_eq!(v.size(), 4);
        assert_eq!(v.encode(10), 1);
        assert_eq!(v.encode(30), 3);
        assert_eq!(v.encode(99), FieldVocab::OOV);
        assert_eq!(v.decode(2), Some(20));
        assert_eq!(v.decode(0), None);
    }

    proptest! {
        #[test]
        fn text_round_trip_preserves_indices(
            users in prop::collection::vec(0u32..500, 1..40),
            items in prop::collection::vec(0u32..2000, 0..60),
            cats in prop::collection::vec(0u32..30, 0..10),
            ctx in prop::collection::vec(0u32..8, 0..5),
            probe in 0u32..2000,
        ) {
            let vocab = FeatureVocab {
                user: FieldVocab::from_ids(users.clone()),
                context: vec![FieldVocab::from_ids(ctx)],
                item: FieldVocab::from_ids(items.clone()),
                category: FieldVocab::from_ids(cats),
            };
            let back = FeatureVocab::from_text(&vocab.to_text()).unwrap();
            prop_assert_eq!(&back, &vocab);
            for &u in &users {
                prop_assert_eq!(back.user.encode(u), vocab.user.encode(u));
            }
            prop_assert_eq!(back.item.encode(probe), vocab.item.encode(probe));
        }
    }
}
