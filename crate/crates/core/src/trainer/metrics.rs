use std::fmt::Write as _;

/// One row of the per-step metrics log. Absent loss terms are `None` and
/// serialize as empty CSV fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss_total: f64,
    pub loss_intra_video: Option<f64>,
    pub loss_cycle: Option<f64>,
    pub loss_intra_image: Option<f64>,
    pub lr: f64,
    pub queue_fill: usize,
    pub wall_time: f64,
}

pub const CSV_HEADER: &str =
    "epoch,step,loss_total,loss_intra_video,loss_cycle,loss_intra_image,lr,queue_fill,wall_time";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.loss_total,
            opt(self.loss_intra_video),
            opt(self.loss_cycle),
            opt(self.loss_intra_image),
            self.lr,
            self.queue_fill,
            self.wall_time
        )
    }

    pub fn losses_finite(&self) -> bool {
        [
            Some(self.loss_total),
            self.loss_intra_video,
            self.loss_cycle,
            self.loss_intra_image,
        ]
        .iter()
        .flatten()
        .all(|v| v.is_finite())
    }
}

pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

/// Mean `loss_total` of each epoch, in epoch order.
pub fn epoch_means(records: &[MetricsRecord]) -> Vec<f64> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in records {
        if sums.len() <= r.epoch {
            sums.resize(r.epoch + 1, (0.0, 0));
        }
        sums[r.epoch].0 += r.loss_total;
        sums[r.epoch].1 += 1;
    }
    sums.into_iter()
        .filter(|&(_, n)| n > 0)
        .map(|(s, n)| s / n as f64)
        .collect()
}
