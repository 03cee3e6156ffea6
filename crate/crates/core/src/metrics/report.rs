use std::fmt::Write as _;

use super::alignment::AlignmentStats;
use super::ranking::DiversityReport;
use crate::models::TaskKind;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetric {
    pub name: String,
    pub kind: TaskKind,
    pub auc: Option<f64>,
    pub mae: Option<f64>,
    /// Samples the metric was computed over.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub tasks: Vec<TaskMetric>,
    pub diversity: Option<DiversityReport>,
    pub alignment: Option<AlignmentStats>,
}

impl MetricsReport {
    /// AUC of the first binary task.
    pub fn primary_auc(&self) -> Option<f64> {
        self.tasks.iter().find_map(|t| t.auc)
    }

    /// MAE of the first regression task.
    pub fn primary_mae(&self) -> Option<f64> {
        self.tasks.iter().find_map(|t| t.mae)
    }

    fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![("n_samples".to_string(), self.n_samples.to_string())];
        for t in &self.tasks {
            if let Some(a) = t.auc {
                rows.push((format!("{}_auc", t.name), a.to_string()));
            }
            if let Some(m) = t.mae {
                rows.push((format!("{}_mae", t.name), m.to_string()));
                rows.push((format!("{}_mae_n", t.name), t.n.to_string()));
            }
        }
        if let Some(d) = &self.diversity {
            rows.push(("gini_item_a".into(), d.a.item.to_string()));
            rows.push(("gini_category_a".into(), d.a.category.to_string()));
            rows.push(("gini_item_b".into(), d.b.item.to_string()));
            rows.push(("gini_category_b".into(), d.b.category.to_string()));
            rows.push(("gini_item_rel_diff".into(), d.rel_diff_item.to_string()));
            rows.push(("gini_category_rel_diff".into(), d.rel_diff_category.to_string()));
        }
        if let Some(a) = &self.alignment {
            rows.push(("alignment_mean_distance".into(), a.mean_distance.to_string()));
            rows.push(("alignment_mean_cosine".into(), a.mean_cosine.to_string()));
            rows.push(("alignment_n".into(), a.n.to_string()));
        }
        rows
    }

    /// `metric,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    /// `key = value` summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
