//! Datasets: MovieLens-1M ingestion, slate construction, the synthetic
//! slate-effect generator, vocabularies and batching.

mod batch;
mod file;
mod movielens;
mod slates;
mod synth;
mod vocab;

pub use batch::{batch_indices, batch_iter, Batch, PointFeatures};
pub use file::{
    dataset_to_text, read_dataset, write_dataset, DatasetHeader, DATASET_FILE, DATASET_SCHEMA_VERSION,
    VOCAB_FILE,
};
pub use movielens::{parse_movielens, parse_movies, parse_ratings, InteractionLog, Rating};
pub use slates::{binarize_labels, build_slates, split_dataset, SplitRatios};
pub use synth::{synth_generate, SynthConfig, SyntheticWorld};
pub use vocab::{FeatureVocab, FieldVocab, VocabSizes};

use serde::{Deserialize, Serialize};

/// One training/inference record: a target item shown inside a slate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlateSample {
    /// Grouping key shared by every sample of the same slate.
    pub slate_id: u64,
    pub user_id: u32,
    /// One raw id per user context field (e.g. bucketized activity).
    pub user_context: Vec<u32>,
    pub item_id: u32,
    /// Multi-valued category field of the target item.
    pub item_categories: Vec<u32>,
    /// Ordered slate members; always contains `item_id`.
    pub slate_items: Vec<u32>,
    /// Primary category of each slate member, parallel to `slate_items`.
    pub slate_categories: Vec<u32>,
    pub click: u8,
    /// Post-click watch time; present only for clicked synthetic samples.
    pub watch_time: Option<f64>,
}

impl SlateSample {
    /// Position of the target inside its slate.
    pub fn target_position(&self) -> Option<usize> {
        self.slate_items.iter().position(|&i| i == self.item_id)
    }
}

/// Train/validation/test partition plus the vocabulary fitted on train.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub train: Vec<SlateSample>,
    pub val: Vec<SlateSample>,
    pub test: Vec<SlateSample>,
    pub vocab: FeatureVocab,
}

impl Dataset {
    /// Splits `samples` at slate granularity and fits the vocabulary on the
    /// training part.
    pub fn from_samples(
        samples: Vec<SlateSample>,
        slate_size: usize,
        ratios: SplitRatios,
        seed: u64,
        source: &str,
    ) -> crate::Result<Self> {
        let has_watch_time = samples.iter().any(|s| s.watch_time.is_some());
        let context_fields = samples.first().map_or(0, |s| s.user_context.len());
        let (train, val, test) = split_dataset(samples, ratios, seed)?;
        let vocab = FeatureVocab::fit(&train, context_fields);
        let header = DatasetHeader {
            schema_version: DATASET_SCHEMA_VERSION,
            source: source.to_string(),
            slate_size,
            seed,
            has_watch_time,
            context_fields,
            vocab_sizes: vocab.sizes(),
        };
        Ok(Dataset {
            header,
            train,
            val,
            test,
            vocab,
        })
    }

    pub fn slate_size(&self) -> usize {
        self.header.slate_size
    }

    pub fn has_watch_time(&self) -> bool {
        self.header.has_watch_time
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
