//! Report files: a key-value summary with a confusion block, and a
//! per-sample predictions CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use psme_core::eval::{AblationRow, EvalReport, Metrics, REFERENCE_COLOUR_PS, REFERENCE_NOTE};

use crate::config::{to_text, RunConfig};
use crate::IoError;

pub const REPORT_FILE: &str = "report.txt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const ABLATIONS_FILE: &str = "ablations.csv";

fn metric_lines(out: &mut String, m: &Metrics) {
    let _ = writeln!(out, "acc = {:.6}", m.acc);
    let _ = writeln!(out, "uf1 = {:.6}", m.uf1);
    let _ = writeln!(out, "uar = {:.6}", m.uar);
}

pub fn report_text(r: &EvalReport, run: &RunConfig) -> String {
    let mut out = String::new();
    let c = &r.config;
    let _ = writeln!(out, "seed = {}", r.seed);
    let _ = writeln!(out, "arm = {}", c.arm.name());
    let _ = writeln!(out, "fusion = {}", c.fusion.name());
    let _ = writeln!(out, "weighting = {}", c.weighting.name());
    let _ = writeln!(out, "classes = {}", r.confusion.classes());
    let _ = writeln!(out, "folds = {}", r.folds.len());
    let _ = writeln!(out, "samples = {}", r.confusion.total());
    metric_lines(&mut out, &r.metrics);
    let _ = writeln!(out, "\n[confusion]");
    let _ = writeln!(out, "# rows: true class, columns: predicted class");
    for i in 0..r.confusion.classes() {
        let row: Vec<String> = r.confusion.row(i).iter().map(u64::to_string).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    let _ = writeln!(out, "\n[folds]");
    for f in &r.folds {
        let last = f.loss_log.last().map_or(String::from("-"), |l| format!("{:.6}", l));
        let _ = writeln!(out, "{} test = {} final_loss = {}", f.subject, f.predictions.len(), last);
    }
    let run = RunConfig {
        model: r.config.clone(),
        ..run.clone()
    };
    let _ = writeln!(out, "\n[config]");
    out.push_str(&to_text(&run));
    out
}

pub fn predictions_csv(r: &EvalReport) -> String {
    let classes = r.confusion.classes();
    let mut out = String::from("sample_id,subject,true,pred");
    for k in 0..classes {
        let _ = write!(out, ",p_{}", k);
    }
    out.push_str(",seed\n");
    for p in r.predictions() {
        let _ = write!(out, "{},{},{},{}", p.sample_id, p.subject_id, p.truth, p.pred);
        for v in &p.probs {
            let _ = write!(out, ",{}", v);
        }
        let _ = writeln!(out, ",{}", r.seed);
    }
    out
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, IoError> {
    fs::write(&path, text).map_err(|e| IoError::io(&path, e))?;
    Ok(path)
}

/// Writes both files into `dir` and returns their paths.
pub fn write_report(dir: &Path, r: &EvalReport, run: &RunConfig) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    Ok(vec![
        write(dir.join(REPORT_FILE), &report_text(r, run))?,
        write(dir.join(PREDICTIONS_FILE), &predictions_csv(r))?,
    ])
}

/// Directory name of an ablation row, e.g. `fusion-colour+depth+ps-concat`.
pub fn row_dir(row: &AblationRow) -> String {
    format!("{}-{}", row.spec.group.name(), row.spec.label.replace('/', "-"))
}

pub fn ablations_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("group,label,arm,fusion,weighting,acc,uf1,uar,seed\n");
    for r in rows {
        let c = &r.spec.config;
        let m = &r.report.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6},{:.6},{}",
            r.spec.group.name(),
            r.spec.label,
            c.arm.name(),
            c.fusion.name(),
            c.weighting.name(),
            m.acc,
            m.uf1,
            m.uar,
            c.seed
        );
    }
    out
}

/// Writes the table, a summary and one report directory per row.
pub fn write_ablations(dir: &Path, rows: &[AblationRow], run: &RunConfig) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let mut summary = String::new();
    let seed = rows.first().map_or(run.model.seed, |r| r.report.seed);
    let _ = writeln!(summary, "seed = {}", seed);
    for r in rows {
        let m = &r.report.metrics;
        let _ = writeln!(summary, "{} {}: acc = {:.6} uf1 = {:.6} uar = {:.6}", r.spec.group.name(), r.spec.label, m.acc, m.uf1, m.uar);
    }
    let p = REFERENCE_COLOUR_PS;
    let _ = writeln!(
        summary,
        "reference colour+ps: acc = {:.3} uf1 = {:.3} uar = {:.3} ({})",
        p.acc, p.uf1, p.uar, REFERENCE_NOTE
    );
    let mut paths = vec![
        write(dir.join(REPORT_FILE), &summary)?,
        write(dir.join(ABLATIONS_FILE), &ablations_csv(rows))?,
    ];
    for r in rows {
        paths.extend(write_report(&dir.join(row_dir(r)), &r.report, run)?);
    }
    Ok(paths)
}
