use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    #[serde(rename = "fm")]
    Fm,
    #[serde(rename = "widedeep")]
    WideDeep,
    #[serde(rename = "ncf")]
    Ncf,
    #[serde(rename = "ple")]
    Ple,
}

/// Slate encoder pooling variant; `None` is the slate-blind baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SarVariant {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "sumpool")]
    SumPool,
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "attn")]
    Attn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    /// Click prediction; the head emits a logit.
    #[serde(rename = "binary")]
    Binary,
    /// Watch time; the head emits a raw value.
    #[serde(rename = "regression")]
    Regression,
}

macro_rules! str_enum {
    ($ty:ident, $what:literal, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self {
                    $(v if *v == $variant => $name,)+
                    _ => unreachable!(),
                };
                f.write_str(name)
            }
        }
    };
}

str_enum!(Backbone, "backbone", "fm" => Backbone::Fm, "widedeep" => Backbone::WideDeep, "ncf" => Backbone::Ncf, "ple" => Backbone::Ple);
str_enum!(SarVariant, "sar variant", "none" => SarVariant::None, "sumpool" => SarVariant::SumPool, "lstm" => SarVariant::Lstm, "attn" => SarVariant::Attn);
str_enum!(TaskKind, "task kind", "binary" => TaskKind::Binary, "regression" => TaskKind::Regression);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
}

impl TaskSpec {
    pub fn binary(name: &str) -> Self {
        TaskSpec {
            name: name.into(),
            kind: TaskKind::Binary,
        }
    }

    pub fn regression(name: &str) -> Self {
        TaskSpec {
            name: name.into(),
            kind: TaskKind::Regression,
        }
    }
}

/// Architecture description. Vocabulary sizes and slate length come from the
/// dataset and are supplied separately when parameters are built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: Backbone,
    #[serde(default)]
    pub sar: SarVariant,
    /// Width of user, context and item id embeddings.
    #[serde(default = "default_16")]
    pub embed_dim: usize,
    /// Width of category embeddings.
    #[serde(default = "default_16")]
    pub category_dim: usize,
    /// Width of the encoder/decoder layers and of `l_u`, `l_s`, `d`.
    #[serde(default = "default_16")]
    pub dim: usize,
    /// Hidden layers of MLP-based backbones.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<TaskSpec>,
    /// Feed item and slate categories alongside ids.
    #[serde(default = "default_true")]
    pub use_categories: bool,
}

fn default_16() -> usize {
    16
}

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

fn default_tasks() -> Vec<TaskSpec> {
    vec![TaskSpec::binary("ctr")]
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn new(backbone: Backbone, sar: SarVariant) -> Self {
        ModelSpec {
            backbone,
            sar,
            embed_dim: 16,
            category_dim: 16,
            dim: 16,
            hidden: default_hidden(),
            tasks: default_tasks(),
            use_categories: true,
        }
    }

    pub fn with_tasks(mut self, tasks: Vec<TaskSpec>) -> Self {
        self.tasks = tasks;
        self
    }

    pub fn with_sar(mut self, sar: SarVariant) -> Self {
        self.sar = sar;
        self
    }

    pub fn is_sar(&self) -> bool {
        self.sar != SarVariant::None
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Index of the first task of `kind`.
    pub fn task_index(&self, kind: TaskKind) -> Option<usize> {
        self.tasks.iter().position(|t| t.kind == kind)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{} model: {msg}", self.backbone)));
        if self.embed_dim == 0 || self.category_dim == 0 || self.dim == 0 {
            return bad("embedding and encoder dims must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad(format!("hidden layer widths must be positive, got {:?}", self.hidden));
        }
        if self.tasks.is_empty() {
            return bad("task list is empty".into());
        }
        for kind in [TaskKind::Binary, TaskKind::Regression] {
            if self.tasks.iter().filter(|t| t.kind == kind).count() > 1 {
                return bad(format!("at most one {kind} task is supported"));
            }
        }
        match self.backbone {
            Backbone::Ple if self.tasks.len() < 2 => bad("PLE needs at least 2 tasks".into()),
            Backbone::Fm if self.use_categories && self.category_dim != self.embed_dim => bad(format!(
                "FM field vectors must share one width: category_dim {} != embed_dim {}",
                self.category_dim, self.embed_dim
            )),
            Backbone::Fm if self.is_sar() && self.dim != self.embed_dim => bad(format!(
                "FM treats d as a field vector, so dim {} must equal embed_dim {}",
                self.dim, self.embed_dim
            )),
            Backbone::WideDeep | Backbone::Ncf if self.hidden.is_empty() => {
                bad("needs at least one hidden layer".into())
            }
            _ => Ok(()),
        }
    }
}
