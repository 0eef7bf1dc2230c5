//! Evaluation reports: assembled in memory, written as CSV tables plus SVG line plots,
//! and read back from the CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{SuccessTable, TaskSuccess};
use super::flops::{FlopsLedger, FlopsRow};
use crate::error::{Error, Result};
use crate::util::mean_std;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

/// One method (or ablation arm) evaluated across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub per_task: Vec<TaskSuccess>,
    /// Overall success, one entry per seed.
    pub per_seed: Vec<f64>,
    pub success: Stat,
    /// Mean KL to the behavior clone, per seed; empty when not measured.
    pub kl: Vec<f64>,
    /// Advantage accuracy per seed; empty when not measured.
    pub advantage_accuracy: Vec<f64>,
}

impl MethodResult {
    /// Combines single-seed success tables of independently trained policies.
    pub fn from_tables(method: &str, tables: &[SuccessTable]) -> Result<Self> {
        let first = tables
            .first()
            .ok_or_else(|| Error::Invalid(format!("no success tables for `{method}`")))?;
        let task_ids: Vec<u32> = first.per_task.iter().map(|t| t.task_id).collect();
        let mut per_task = Vec::with_capacity(task_ids.len());
        for (i, &id) in task_ids.iter().enumerate() {
            let rates = tables
                .iter()
                .map(|t| match t.per_task.get(i) {
                    Some(r) if r.task_id == id => Ok(r.mean),
                    _ => Err(Error::Shape(format!("`{method}`: task lists differ across seeds"))),
                })
                .collect::<Result<Vec<f64>>>()?;
            let s = Stat::of(&rates);
            per_task.push(TaskSuccess {
                task_id: id,
                mean: s.mean,
                std: s.std,
            });
        }
        let per_seed: Vec<f64> = tables.iter().map(|t| t.mean).collect();
        Ok(Self {
            method: method.into(),
            per_task,
            success: Stat::of(&per_seed),
            per_seed,
            kl: Vec::new(),
            advantage_accuracy: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl CurvePoint {
    pub fn new(x: f64, per_seed: Vec<f64>) -> Self {
        let s = Stat::of(&per_seed);
        Self {
            x,
            per_seed,
            mean: s.mean,
            std: s.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// Whether every mean is at least the previous one minus `slack · pooled std`.
    pub fn non_decreasing_within(&self, slack: f64) -> bool {
        let pooled = pooled_std(&self.points.iter().map(|p| p.std).collect::<Vec<_>>());
        self.points.windows(2).all(|w| w[1].mean >= w[0].mean - slack * pooled)
    }
}

/// Root-mean-square of per-point standard deviations.
pub fn pooled_std(stds: &[f64]) -> f64 {
    if stds.is_empty() {
        return 0.0;
    }
    (stds.iter().map(|s| s * s).sum::<f64>() / stds.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodResult>,
    pub curves: Vec<Curve>,
    pub flops: Option<FlopsLedger>,
}

impl EvalReport {
    pub fn new(name: &str, config_hash: &str, seeds: &[u64]) -> Self {
        Self {
            name: name.into(),
            config_hash: config_hash.into(),
            seeds: seeds.to_vec(),
            methods: Vec::new(),
            curves: Vec::new(),
            flops: None,
        }
    }

    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn curve(&self, name: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.name == name)
    }
}

const SUMMARY: &str = "summary.csv";
const PER_TASK: &str = "per_task.csv";
const FLOPS: &str = "flops.csv";
const META: &str = "meta.csv";

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split_f64(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(parse_f64).collect()
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Invalid(format!("bad number `{s}` in report")))
}

fn parse_u64(s: &str) -> Result<u64> {
    s.parse().map_err(|_| Error::Invalid(format!("bad integer `{s}` in report")))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    let csv_err = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let found = r.headers().map_err(|e| Error::Invalid(e.to_string()))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::Invalid(format!("{}: unexpected columns {:?}", path.display(), found)));
    }
    r.records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn curve_file(name: &str) -> String {
    format!("curve_{name}.csv")
}

const SUMMARY_COLS: [&str; 9] = [
    "method",
    "success_mean",
    "success_std",
    "success_per_seed",
    "kl_per_seed",
    "advantage_accuracy_per_seed",
    "config_hash",
    "seeds",
    "report",
];
const TASK_COLS: [&str; 4] = ["method", "task_id", "mean", "std"];
const CURVE_COLS: [&str; 4] = ["x", "mean", "std", "per_seed"];
const FLOPS_COLS: [&str; 5] = ["stage", "network", "forwards", "backwards", "flops"];
const META_COLS: [&str; 6] = ["report", "config_hash", "seeds", "curve", "x_label", "y_label"];

/// Writes `summary.csv`, `per_task.csv`, `meta.csv`, one `curve_<name>.csv` and one
/// `curve_<name>.svg` per curve, and `flops.csv` when a ledger is present.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let seeds = report.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";");
    let summary: Vec<Vec<String>> = report
        .methods
        .iter()
        .map(|m| {
            vec![
                m.method.clone(),
                m.success.mean.to_string(),
                m.success.std.to_string(),
                join_f64(&m.per_seed),
                join_f64(&m.kl),
                join_f64(&m.advantage_accuracy),
                report.config_hash.clone(),
                seeds.clone(),
                report.name.clone(),
            ]
        })
        .collect();
    write_rows(&dir.join(SUMMARY), &SUMMARY_COLS, &summary)?;
    let tasks: Vec<Vec<String>> = report
        .methods
        .iter()
        .flat_map(|m| {
            m.per_task
                .iter()
                .map(|t| vec![m.method.clone(), t.task_id.to_string(), t.mean.to_string(), t.std.to_string()])
        })
        .collect();
    write_rows(&dir.join(PER_TASK), &TASK_COLS, &tasks)?;
    let mut meta = vec![vec![
        report.name.clone(),
        report.config_hash.clone(),
        seeds.clone(),
        String::new(),
        String::new(),
        String::new(),
    ]];
    for c in &report.curves {
        meta.push(vec![
            report.name.clone(),
            report.config_hash.clone(),
            seeds.clone(),
            c.name.clone(),
            c.x_label.clone(),
            c.y_label.clone(),
        ]);
        let rows: Vec<Vec<String>> = c
            .points
            .iter()
            .map(|p| vec![p.x.to_string(), p.mean.to_string(), p.std.to_string(), join_f64(&p.per_seed)])
            .collect();
        write_rows(&dir.join(curve_file(&c.name)), &CURVE_COLS, &rows)?;
        let svg_path = dir.join(format!("curve_{}.svg", c.name));
        fs::write(&svg_path, render_svg(c)).map_err(|e| Error::io(&svg_path, e))?;
    }
    write_rows(&dir.join(META), &META_COLS, &meta)?;
    if let Some(ledger) = &report.flops {
        let rows: Vec<Vec<String>> = ledger
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.stage.clone(),
                    r.network.clone(),
                    r.forwards.to_string(),
                    r.backwards.to_string(),
                    r.flops.to_string(),
                ]
            })
            .collect();
        write_rows(&dir.join(FLOPS), &FLOPS_COLS, &rows)?;
    }
    Ok(())
}

/// Reads a report directory written by [`emit_report`].
pub fn parse_report(dir: &Path) -> Result<EvalReport> {
    let meta = read_rows(&dir.join(META), &META_COLS)?;
    let head = meta
        .first()
        .ok_or_else(|| Error::Invalid(format!("{}: empty meta table", dir.display())))?;
    let seeds = if head[2].is_empty() {
        Vec::new()
    } else {
        head[2].split(';').map(parse_u64).collect::<Result<Vec<_>>>()?
    };
    let mut report = EvalReport::new(&head[0], &head[1], &seeds);
    for row in read_rows(&dir.join(SUMMARY), &SUMMARY_COLS)? {
        report.methods.push(MethodResult {
            method: row[0].to_string(),
            per_task: Vec::new(),
            success: Stat {
                mean: parse_f64(&row[1])?,
                std: parse_f64(&row[2])?,
            },
            per_seed: split_f64(&row[3])?,
            kl: split_f64(&row[4])?,
            advantage_accuracy: split_f64(&row[5])?,
        });
    }
    for row in read_rows(&dir.join(PER_TASK), &TASK_COLS)? {
        let m = report
            .methods
            .iter_mut()
            .find(|m| m.method == row[0])
            .ok_or_else(|| Error::Invalid(format!("per-task row for unknown method `{}`", &row[0])))?;
        m.per_task.push(TaskSuccess {
            task_id: row[1].parse().map_err(|_| Error::Invalid(format!("bad task id `{}`", &row[1])))?,
            mean: parse_f64(&row[2])?,
            std: parse_f64(&row[3])?,
        });
    }
    for row in meta.iter().skip(1) {
        let points = read_rows(&dir.join(curve_file(&row[3])), &CURVE_COLS)?
            .iter()
            .map(|p| {
                Ok(CurvePoint {
                    x: parse_f64(&p[0])?,
                    mean: parse_f64(&p[1])?,
                    std: parse_f64(&p[2])?,
                    per_seed: split_f64(&p[3])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        report.curves.push(Curve {
            name: row[3].to_string(),
            x_label: row[4].to_string(),
            y_label: row[5].to_string(),
            points,
        });
    }
    let flops_path = dir.join(FLOPS);
    if flops_path.exists() {
        let rows = read_rows(&flops_path, &FLOPS_COLS)?
            .iter()
            .map(|r| {
                Ok(FlopsRow {
                    stage: r[0].to_string(),
                    network: r[1].to_string(),
                    forwards: parse_u64(&r[2])?,
                    backwards: parse_u64(&r[3])?,
                    flops: parse_u64(&r[4])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut per_stage: Vec<(String, u64)> = Vec::new();
        for r in &rows {
            match per_stage.iter_mut().find(|(s, _)| *s == r.stage) {
                Some((_, f)) => *f += r.flops,
                None => per_stage.push((r.stage.clone(), r.flops)),
            }
        }
        let total = rows.iter().map(|r| r.flops).sum();
        report.flops = Some(FlopsLedger { rows, per_stage, total });
    }
    Ok(report)
}

/// Mean ± std line plot.
fn render_svg(c: &Curve) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let xs: Vec<f64> = c.points.iter().map(|p| p.x).collect();
    let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (x0, x1) = if x0.is_finite() && x1 > x0 { (x0, x1) } else { (0.0, 1.0) };
    let ys = c.points.iter().flat_map(|p| [p.mean - p.std, p.mean + p.std]);
    let (y0, y1) = ys.fold((0.0f64, 1.0f64), |(a, b), y| (a.min(y), b.max(y)));
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, xml(&c.x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        xml(&c.y_label)
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, xml(&c.name));
    for p in &c.points {
        let (x, lo, hi) = (px(p.x), py(p.mean - p.std), py(p.mean + p.std));
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{lo:.1}" x2="{x:.1}" y2="{hi:.1}" stroke="steelblue"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
            H - PAD + 14.0,
            p.x
        );
    }
    let path: Vec<String> = c.points.iter().map(|p| format!("{:.1},{:.1}", px(p.x), py(p.mean))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, path.join(" "));
    for p in &c.points {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, px(p.x), py(p.mean));
    }
    s.push_str("</svg>\n");
    s
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
