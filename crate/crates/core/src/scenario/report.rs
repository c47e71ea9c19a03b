//! Report files: the nested JSON document and flat CSV tables.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{PointReport, Report, RunReport};
use crate::sim::FlowMetrics;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    #[default]
    Both,
}

/// `per_app.csv`: one row per application and point.
pub const PER_APP_COLUMNS: &[&str] = &[
    "point",
    "app_id",
    "app_type",
    "tp_kbps",
    "d_ms",
    "path",
    "delay_ms",
    "allocated",
    "managed",
    "best_effort",
    "managed_samples",
    "best_effort_samples",
    "managed_throughput_kbps",
    "managed_loss",
    "managed_delay_ms",
    "best_effort_throughput_kbps",
    "best_effort_loss",
    "best_effort_delay_ms",
];

/// `per_type.csv`: one row per application type and point.
pub const PER_TYPE_COLUMNS: &[&str] = &[
    "point",
    "total_apps",
    "app_type",
    "apps",
    "target",
    "managed",
    "best_effort",
    "deviation",
    "f_index_allocated",
    "f_index_managed",
    "f_index_best_effort",
];

/// `per_link.csv`: one row per link and point; simulation columns are
/// filled for the simulated bottleneck only.
pub const PER_LINK_COLUMNS: &[&str] = &[
    "point",
    "from",
    "to",
    "capacity_kbps",
    "allocated_kbps",
    "delay_ms",
    "managed_utilization",
    "managed_max_queue_bytes",
    "managed_queue_delay_mean_ms",
    "managed_queue_delay_p95_ms",
    "managed_drops",
    "best_effort_utilization",
    "best_effort_max_queue_bytes",
    "best_effort_queue_delay_mean_ms",
    "best_effort_queue_delay_p95_ms",
    "best_effort_drops",
];

/// `sweep.csv`: one row per point.
pub const SWEEP_COLUMNS: &[&str] = &[
    "point",
    "total_apps",
    "status",
    "reason",
    "uv_min1",
    "uv_min2",
    "utility_sum",
    "allocated_kbps",
    "nodes_explored",
    "managed_loss",
    "managed_queue_delay_mean_ms",
    "managed_queue_delay_p95_ms",
    "best_effort_loss",
    "best_effort_queue_delay_mean_ms",
    "best_effort_queue_delay_p95_ms",
    "min_f_index_managed",
    "max_deviation",
];

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn app_flows<'a>(run: Option<&'a RunReport>, id: &str) -> Vec<&'a FlowMetrics> {
    run.map(|r| r.metrics.flows.iter().filter(|f| f.app_id == id).collect())
        .unwrap_or_default()
}

/// Throughput, loss and mean delay over an application's flows.
fn flow_totals(flows: &[&FlowMetrics]) -> [Option<f64>; 3] {
    if flows.is_empty() {
        return [None; 3];
    }
    let tp = flows.iter().map(|f| f.throughput_kbps).sum();
    let sent: u64 = flows.iter().map(|f| f.sent).sum();
    let dropped: u64 = flows.iter().map(|f| f.dropped).sum();
    let delivered: u64 = flows.iter().map(|f| f.delivered).sum();
    let delay = flows.iter().map(|f| f.mean_delay_ms * f.delivered as f64).sum::<f64>();
    [
        Some(tp),
        Some(if sent > 0 { dropped as f64 / sent as f64 } else { 0.0 }),
        (delivered > 0).then(|| delay / delivered as f64),
    ]
}

fn app_value(run: Option<&RunReport>, id: &str) -> (String, String) {
    let a = run.and_then(|r| r.summary.per_app.iter().find(|a| a.app_id == id));
    (
        opt(a.map(|a| a.percentile)),
        a.map(|a| a.samples.to_string()).unwrap_or_default(),
    )
}

fn per_app_rows(p: &PointReport) -> Vec<Vec<String>> {
    let Some(alloc) = &p.allocation else { return Vec::new() };
    let mut apps: Vec<_> = alloc.apps.iter().collect();
    apps.sort_by(|a, b| a.id.cmp(&b.id));
    apps.into_iter()
        .map(|a| {
            let (mv, ms) = app_value(p.managed.as_ref(), &a.id);
            let (bv, bs) = app_value(p.best_effort.as_ref(), &a.id);
            let mut row = vec![
                p.id.clone(),
                a.id.clone(),
                a.app_type.clone(),
                num(a.tp_kbps),
                num(a.d_ms),
                a.path.join(">"),
                num(a.delay_ms),
                num(a.utility),
                mv,
                bv,
                ms,
                bs,
            ];
            row.extend(flow_totals(&app_flows(p.managed.as_ref(), &a.id)).map(opt));
            row.extend(flow_totals(&app_flows(p.best_effort.as_ref(), &a.id)).map(opt));
            row
        })
        .collect()
}

fn per_type_rows(p: &PointReport) -> Vec<Vec<String>> {
    p.per_type
        .iter()
        .map(|t| {
            vec![
                p.id.clone(),
                p.total_apps.to_string(),
                t.app_type.clone(),
                t.apps.to_string(),
                num(t.target),
                opt(t.managed),
                opt(t.best_effort),
                opt(t.deviation),
                num(t.f_index_allocated),
                opt(t.f_index_managed),
                opt(t.f_index_best_effort),
            ]
        })
        .collect()
}

fn link_stats(run: Option<&RunReport>) -> Vec<String> {
    match run {
        Some(r) => {
            let l = &r.metrics.link;
            vec![
                num(l.utilization),
                l.max_queue_bytes.to_string(),
                num(l.queue_delay_mean_ms),
                num(l.queue_delay_p95_ms),
                l.drops.to_string(),
            ]
        }
        None => vec![String::new(); 5],
    }
}

fn per_link_rows(p: &PointReport) -> Vec<Vec<String>> {
    let Some(alloc) = &p.allocation else { return Vec::new() };
    alloc
        .links
        .iter()
        .map(|l| {
            let mut row = vec![
                p.id.clone(),
                l.from.clone(),
                l.to.clone(),
                num(l.capacity_kbps),
                num(l.usage_kbps),
                num(l.delay_ms),
            ];
            let simulated = l.usage_kbps > 0.0;
            row.extend(link_stats(p.managed.as_ref().filter(|_| simulated)));
            row.extend(link_stats(p.best_effort.as_ref().filter(|_| simulated)));
            row
        })
        .collect()
}

fn sweep_row(p: &PointReport) -> Vec<String> {
    let a = p.allocation.as_ref();
    let run = |r: Option<&RunReport>| match r {
        Some(r) => vec![
            num(r.metrics.loss),
            num(r.metrics.link.queue_delay_mean_ms),
            num(r.metrics.link.queue_delay_p95_ms),
        ],
        None => vec![String::new(); 3],
    };
    let fmin = p
        .per_type
        .iter()
        .filter_map(|t| t.f_index_managed)
        .min_by(f64::total_cmp);
    let dmax = p.per_type.iter().filter_map(|t| t.deviation).max_by(f64::total_cmp);
    let mut row = vec![
        p.id.clone(),
        p.total_apps.to_string(),
        match p.status {
            super::PointStatus::Ok => "ok".into(),
            super::PointStatus::Failed => "failed".into(),
        },
        p.reason.clone().unwrap_or_default(),
        opt(a.map(|a| a.uv_min1)),
        opt(a.map(|a| a.uv_min2)),
        opt(a.map(|a| a.utility_sum)),
        opt(a.map(|a| a.apps.iter().map(|x| x.tp_kbps).sum())),
        a.map(|a| a.stats.nodes_explored.to_string()).unwrap_or_default(),
    ];
    row.extend(run(p.managed.as_ref()));
    row.extend(run(p.best_effort.as_ref()));
    row.push(opt(fmin));
    row.push(opt(dmax));
    row
}

/// File name, header and rows.
type Table = (&'static str, &'static [&'static str], Vec<Vec<String>>);

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
}

/// Writes `report.json` and/or the four CSV tables into `dir`, creating it
/// if needed. Returns the files written.
pub fn emit_report(report: &Report, format: ReportFormat, dir: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if format != ReportFormat::Csv {
        let path = dir.join("report.json");
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        written.push(path);
    }
    if format != ReportFormat::Json {
        let pts = &report.points;
        let tables: [Table; 4] = [
            (
                "per_app.csv",
                PER_APP_COLUMNS,
                pts.iter().flat_map(per_app_rows).collect(),
            ),
            (
                "per_type.csv",
                PER_TYPE_COLUMNS,
                pts.iter().flat_map(per_type_rows).collect(),
            ),
            (
                "per_link.csv",
                PER_LINK_COLUMNS,
                pts.iter().flat_map(per_link_rows).collect(),
            ),
            ("sweep.csv", SWEEP_COLUMNS, pts.iter().map(sweep_row).collect()),
        ];
        for (name, header, rows) in tables {
            let path = dir.join(name);
            write_csv(&path, header, rows)?;
            written.push(path);
        }
    }
    Ok(written)
}
