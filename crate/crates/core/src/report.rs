//! CSV output with a fixed column order and fixed number formatting.

use std::fmt::Write as _;

use crate::train::CurveRow;

/// Columns of a comparison table, in output order.
pub const SUMMARY_COLUMNS: [&str; 13] = [
    "task",
    "method",
    "k",
    "sigma_n",
    "eps_omega",
    "lr",
    "mse_train",
    "mse_test",
    "gen_gap",
    "psnr_in",
    "psnr_out",
    "seconds",
    "status",
];

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.6e}")
    }
}

/// One row of a comparison table; unused numeric cells are `NaN` and are
/// written empty.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub task: String,
    pub method: String,
    pub k: usize,
    pub sigma_n: f64,
    pub eps_omega: f64,
    pub lr: f64,
    pub mse_train: f64,
    pub mse_test: f64,
    pub gen_gap: f64,
    pub psnr_in: f64,
    pub psnr_out: f64,
    /// Wall time; left empty in reproducible output.
    pub seconds: f64,
    pub status: String,
}

impl SummaryRow {
    pub fn new(task: &str, method: &str, k: usize, sigma_n: f64, eps_omega: f64) -> Self {
        SummaryRow {
            task: task.into(),
            method: method.into(),
            k,
            sigma_n,
            eps_omega,
            lr: f64::NAN,
            mse_train: f64::NAN,
            mse_test: f64::NAN,
            gen_gap: f64::NAN,
            psnr_in: f64::NAN,
            psnr_out: f64::NAN,
            seconds: f64::NAN,
            status: "ok".into(),
        }
    }

    pub fn to_csv(&self) -> String {
        let cells = [
            self.task.clone(),
            self.method.clone(),
            self.k.to_string(),
            num(self.sigma_n),
            num(self.eps_omega),
            num(self.lr),
            num(self.mse_train),
            num(self.mse_test),
            num(self.gen_gap),
            num(self.psnr_in),
            num(self.psnr_out),
            num(self.seconds),
            self.status.replace([',', '\n'], ";"),
        ];
        cells.join(",")
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = SUMMARY_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("iteration,train_mse,test_mse\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.iteration, num(r.train_mse), num(r.test_mse));
    }
    s
}
