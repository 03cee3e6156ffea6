use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted means over the epoch's batches.
    pub loss_total: f64,
    pub loss_tasks: Vec<f64>,
    pub loss_sim: Option<f64>,
    pub val_auc: Option<f64>,
    pub val_mae: Option<f64>,
    /// Mean `|l_u - l_s|` on validation.
    pub val_align_dist: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub task_names: Vec<String>,
    /// Validation alignment distance of the initial parameters.
    pub init_align_dist: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; 0 for the initialization.
    pub best_epoch: usize,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_total");
        for t in &self.task_names {
            let _ = write!(out, ",loss_{t}");
        }
        out.push_str(",loss_sim,val_auc,val_mae,val_align_dist\n");
        for e in &self.epochs {
            let _ = write!(out, "{},{}", e.epoch, e.loss_total);
            for l in &e.loss_tasks {
                let _ = write!(out, ",{l}");
            }
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                cell(e.loss_sim),
                cell(e.val_auc),
                cell(e.val_mae),
                cell(e.val_align_dist)
            );
        }
        out
    }
}
