//! Pearson correlation, RMSE, and RMSE after a least-squares cubic mapping
//! from predictions to labels. Everything here is `f64`.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::task::Task;

/// Aligned (prediction, label) pairs per task.
pub type TaskPairs = BTreeMap<Task, Vec<(f64, f64)>>;

fn check_lengths(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, &[a.len()], &[b.len()]));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation. Zero variance on either side is an error.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths("pearson", x, y)?;
    if x.len() < 2 {
        return Err(Error::Argument("pearson needs at least two pairs".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson: zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn rmse(pred: &[f64], label: &[f64]) -> Result<f64> {
    check_lengths("rmse", pred, label)?;
    if pred.is_empty() {
        return Err(Error::Argument("rmse of no pairs".into()));
    }
    let mse = pred.iter().zip(label).map(|(p, l)| (p - l) * (p - l)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Least-squares polynomial mapping `label ≈ a0 + a1·p + a2·p² + a3·p³`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicFit {
    /// Coefficients in powers of the raw prediction.
    pub coefficients: [f64; 4],
    /// Degree actually fitted; below 3 when the design was rank deficient.
    pub degree: usize,
    pub rank_deficient: bool,
    center: f64,
    scale: f64,
    /// Coefficients in powers of the standardised prediction.
    standardized: [f64; 4],
}

impl CubicFit {
    pub fn apply(&self, p: f64) -> f64 {
        let z = (p - self.center) / self.scale;
        self.standardized.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Gaussian elimination with partial pivoting. `None` if a pivot falls
/// below `tol` relative to the largest diagonal entry.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, tol: f64) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= tol * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Fits the cubic mapping through normal equations on the standardised
/// prediction (columns additionally scaled to unit RMS). Falls back to the
/// highest full-rank degree when fewer than four distinct predictions exist
/// or the system is numerically singular.
pub fn third_order_fit(pred: &[f64], label: &[f64]) -> Result<CubicFit> {
    check_lengths("third_order_fit", pred, label)?;
    if pred.len() < 2 {
        return Err(Error::Argument("cubic fit needs at least two pairs".into()));
    }
    let center = mean(pred);
    let var = pred.iter().map(|p| (p - center) * (p - center)).sum::<f64>() / pred.len() as f64;
    if var == 0.0 {
        return Err(Error::Degenerate("cubic fit: predictions are constant".into()));
    }
    let scale = var.sqrt();
    let z: Vec<f64> = pred.iter().map(|p| (p - center) / scale).collect();

    let mut distinct = pred.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut degree = 3.min(distinct.len() - 1).min(pred.len() - 1);
    let rank_deficient_by_count = degree < 3;

    loop {
        let k = degree + 1;
        let cols: Vec<Vec<f64>> = (0..k).map(|j| z.iter().map(|v| v.powi(j as i32)).collect()).collect();
        let norms: Vec<f64> = cols
            .iter()
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
            .collect();
        let ata: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>() / (norms[i] * norms[j]))
                    .collect()
            })
            .collect();
        let atb: Vec<f64> = (0..k)
            .map(|i| cols[i].iter().zip(label).map(|(a, b)| a * b).sum::<f64>() / norms[i])
            .collect();
        if let Some(sol) = solve(ata, atb, 1e-12) {
            let mut standardized = [0.0; 4];
            for j in 0..k {
                standardized[j] = sol[j] / norms[j];
            }
            // expand Σ c_j ((p - μ)/σ)^j into powers of p
            let mut coefficients = [0.0; 4];
            for (j, c) in standardized.iter().enumerate() {
                let cj = c / scale.powi(j as i32);
                for i in 0..=j {
                    coefficients[i] += cj * binomial(j, i) * (-center).powi((j - i) as i32);
                }
            }
            return Ok(CubicFit {
                coefficients,
                degree,
                rank_deficient: rank_deficient_by_count || degree < 3,
                center,
                scale,
                standardized,
            });
        }
        if degree == 0 {
            return Err(Error::Degenerate("cubic fit: singular design".into()));
        }
        degree -= 1;
    }
}

/// RMSE after mapping predictions through a cubic fitted on the same pairs.
pub fn rmse_map(pred: &[f64], label: &[f64]) -> Result<f64> {
    let fit = third_order_fit(pred, label)?;
    rmse_with_fit(&fit, pred, label)
}

fn rmse_with_fit(fit: &CubicFit, pred: &[f64], label: &[f64]) -> Result<f64> {
    let mapped: Vec<f64> = pred.iter().map(|&p| fit.apply(p)).collect();
    rmse(&mapped, label)
}

/// Minimum number of pairs for PCC and the cubic mapping to be reported.
pub const MIN_PAIRS_FOR_MAPPING: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    pub task: Task,
    pub n: usize,
    pub pcc: Option<f64>,
    pub rmse: f64,
    pub rmse_map: Option<f64>,
    pub coefficients: Option<[f64; 4]>,
    /// Why a metric is missing, or that the mapping fell back to a lower degree.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<TaskMetrics>,
}

pub const REPORT_HEADER: &str = "task,n,pcc,rmse,rmse_map,a0,a1,a2,a3";

impl MetricsReport {
    pub fn get(&self, task: Task) -> Option<&TaskMetrics> {
        self.rows.iter().find(|r| r.task == task)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{REPORT_HEADER}")?;
        for r in &self.rows {
            let coeffs = match r.coefficients {
                Some(c) => c.map(|v| v.to_string()).join(","),
                None => ",,,".to_string(),
            };
            writeln!(w, "{},{},{},{},{},{}", r.task, r.n, opt(r.pcc), r.rmse, opt(r.rmse_map), coeffs)?;
        }
        Ok(())
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        writeln!(w, "{:<5} {:>6} {:>8} {:>8} {:>9}  note", "task", "n", "PCC", "RMSE", "RMSE_MAP")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:<5} {:>6} {:>8} {:>8.4} {:>9}  {}",
                r.task.name(),
                r.n,
                opt(r.pcc),
                r.rmse,
                opt(r.rmse_map),
                r.note.as_deref().unwrap_or("")
            )?;
        }
        Ok(())
    }
}

/// Per-task metrics in canonical task order. Tasks without pairs are
/// omitted; tasks with fewer than four pairs get RMSE only.
pub fn build_report(pairs: &TaskPairs) -> MetricsReport {
    let mut rows = Vec::new();
    for (&task, list) in pairs {
        if list.is_empty() {
            continue;
        }
        let pred: Vec<f64> = list.iter().map(|p| p.0).collect();
        let label: Vec<f64> = list.iter().map(|p| p.1).collect();
        let rmse = rmse(&pred, &label).expect("aligned non-empty lists");
        let mut row = TaskMetrics {
            task,
            n: list.len(),
            pcc: None,
            rmse,
            rmse_map: None,
            coefficients: None,
            note: None,
        };
        if list.len() < MIN_PAIRS_FOR_MAPPING {
            row.note = Some(format!("fewer than {MIN_PAIRS_FOR_MAPPING} pairs"));
            rows.push(row);
            continue;
        }
        let mut notes = Vec::new();
        match pearson(&pred, &label) {
            Ok(p) => row.pcc = Some(p),
            Err(e) => notes.push(e.to_string()),
        }
        match third_order_fit(&pred, &label) {
            Ok(fit) => {
                if fit.rank_deficient {
                    notes.push(format!("mapping reduced to degree {}", fit.degree));
                }
                row.rmse_map = rmse_with_fit(&fit, &pred, &label).ok();
                row.coefficients = Some(fit.coefficients);
            }
            Err(e) => notes.push(e.to_string()),
        }
        if !notes.is_empty() {
            row.note = Some(notes.join("; "));
        }
        rows.push(row);
    }
    MetricsReport { rows }
}
