//! Ranking networks: field embeddings, backbones, the slate-aware
//! encoder/decoder pair and the distillation baseline.
//!
//! Training (`forward_train`) reads the slate; inference (`forward_infer`,
//! `forward_candidates`) takes only [`PointFeatures`](crate::data::PointFeatures)
//! and therefore cannot.

mod backbone;
mod checkpoint;
mod model;
mod pfd;
mod spec;
#[cfg(test)]
mod tests;

pub use backbone::fm_interaction;
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, shape_diff, CHECKPOINT_VERSION,
};
pub use model::{Embedded, ForwardOutput, Model};
pub use pfd::{distill_loss, DEFAULT_ALPHA, DEFAULT_TEMPERATURE};
pub use spec::{Backbone, ModelSpec, SarVariant, TaskKind, TaskSpec};

use crate::diffcore::ParamStore;

impl AsRef<ParamStore> for Model {
    fn as_ref(&self) -> &ParamStore {
        &self.params
    }
}

impl AsMut<ParamStore> for Model {
    fn as_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}
