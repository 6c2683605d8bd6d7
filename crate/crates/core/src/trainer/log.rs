use std::fmt::Write;

/// Losses of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub step: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    pub g_normal: f64,
    pub g_total: f64,
    /// Seconds spent in the step.
    pub wall_time: f64,
}

/// Validation error after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ValRow {
    pub epoch: usize,
    pub rmse: f64,
}

pub const LOG_HEADER: &str = "epoch,step,d_loss,g_adv,g_l1,g_normal,g_total";

/// CSV rendering of the log. Wall times make the file differ between
/// otherwise identical runs, so they are appended only on request.
pub fn log_csv(rows: &[TrainLogRow], wall_time: bool) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push_str(if wall_time { ",wall_time\n" } else { "\n" });
    for r in rows {
        write!(
            s,
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            r.epoch, r.step, r.d_loss, r.g_adv, r.g_l1, r.g_normal, r.g_total
        )
        .expect("string write");
        if wall_time {
            write!(s, ",{:.6}", r.wall_time).expect("string write");
        }
        s.push('\n');
    }
    s
}
