//! Report files of a grid run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{filter_and_rank, Config, Prepared, Ranking, StageSeeds, WorkflowResult, WorkflowRun, WorkflowSpec};
use crate::cohort::ExclusionReport;
use crate::embedding::{Embedding, EmbeddingParams};
use crate::error::{Error, Result};
use crate::evalstats::SurvivalCurve;
use crate::features::{MinMax, DESCRIPTIVE_NAMES, FEATURE_NAMES};
use crate::metrics::MetricAudit;
use crate::weaksup::{LabelModel, WsdWeights};

pub const RESULTS_HEADER: [&str; 7] = [
    "workflow",
    "k",
    "cluster_sizes",
    "silhouette_mean",
    "silhouette_std",
    "logrank_p_max",
    "lrs_min",
];

/// Input files recorded for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub visits: PathBuf,
    pub outcomes: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSummary {
    pub params: EmbeddingParams,
    pub kernel_a: f64,
    pub kernel_b: f64,
    pub connected_components: usize,
}

/// Everything needed to audit and replay a run (`results.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Config,
    pub seeds: StageSeeds,
    pub inputs: Option<Inputs>,
    pub exclusions: ExclusionReport,
    pub patients: usize,
    pub feature_names: Vec<String>,
    /// Min-max parameters of the pair-table columns.
    pub pair_normalization: Vec<MinMax>,
    /// Min-max parameters of the per-patient features.
    pub patient_scaling: Vec<MinMax>,
    pub retained_mask: Vec<bool>,
    pub retained_variables: Vec<String>,
    pub label_thresholds: Option<Vec<(f64, f64)>>,
    pub label_model: Option<LabelModel>,
    pub wsd_weights: Option<WsdWeights>,
    pub wsd_error: Option<String>,
    pub embeddings: BTreeMap<String, EmbeddingSummary>,
    pub metric_audits: BTreeMap<String, MetricAudit>,
    pub silhouette_std: String,
    pub workflows: usize,
    pub failed: BTreeMap<String, String>,
    pub ranking: Ranking,
}

impl Manifest {
    pub fn new(p: &Prepared, runs: &[WorkflowRun], inputs: Option<Inputs>) -> Self {
        let results: Vec<WorkflowResult> = runs.iter().map(|r| r.result.clone()).collect();
        let mut embeddings = BTreeMap::new();
        let summary = |e: &Embedding| EmbeddingSummary {
            params: e.params,
            kernel_a: e.kernel.0,
            kernel_b: e.kernel.1,
            connected_components: e.connected_components,
        };
        for (m, e) in &p.embeddings {
            if let Ok(e) = e {
                embeddings.insert(m.tag().to_string(), summary(e));
            }
        }
        if let Some(Ok(e)) = &p.dtw_embedding {
            embeddings.insert("HAL".to_string(), summary(e));
        }
        Manifest {
            config: p.config.clone(),
            seeds: p.config.seeds(),
            inputs,
            exclusions: p.exclusions.clone(),
            patients: p.cohort.len(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            pair_normalization: p.space.table.params.to_vec(),
            patient_scaling: p.space.patient_scaling.clone(),
            retained_mask: p.space.table.retained.to_vec(),
            retained_variables: p
                .space
                .table
                .retained_columns()
                .iter()
                .map(|&c| DESCRIPTIVE_NAMES[c].to_string())
                .collect(),
            label_thresholds: p.label_matrix.as_ref().map(|lm| lm.thresholds.clone()),
            label_model: p.label_model.clone(),
            wsd_weights: p.weights.clone(),
            wsd_error: p.wsd_error.clone(),
            embeddings,
            metric_audits: p.audits.iter().map(|(m, a)| (m.tag().to_string(), a.clone())).collect(),
            silhouette_std: "population".to_string(),
            workflows: runs.len(),
            failed: runs
                .iter()
                .filter_map(|r| r.result.error.clone().map(|e| (r.result.workflow.clone(), e)))
                .collect(),
            ranking: filter_and_rank(&results, p.config.sil_min, p.config.p_max),
        }
    }
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_results_csv(path: &Path, results: &[WorkflowResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(RESULTS_HEADER)?;
    for r in results {
        let sizes: Vec<String> = r.cluster_sizes.iter().map(usize::to_string).collect();
        w.write_record([
            r.workflow.clone(),
            r.k.to_string(),
            sizes.join(";"),
            opt(r.silhouette_mean),
            opt(r.silhouette_std),
            opt(r.logrank_p_max),
            opt(r.lrs_min),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_assignments(path: &Path, ids: &[String], runs: &[WorkflowRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["workflow_id", "patient_id", "cluster"])?;
    for run in runs {
        if let Some(a) = &run.assignment {
            for (id, c) in ids.iter().zip(&a.labels) {
                w.write_record([run.result.workflow.as_str(), id, &c.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_km_curves(path: &Path, runs: &[WorkflowRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["workflow_id", "cluster", "time", "survival", "at_risk"])?;
    for run in runs {
        for (c, curve) in &run.curves {
            for i in 0..curve.times.len() {
                w.write_record([
                    run.result.workflow.clone(),
                    c.to_string(),
                    curve.times[i].to_string(),
                    curve.survival[i].to_string(),
                    curve.at_risk[i].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn frame(svg: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(svg: &mut String, entries: &[(usize, String)]) {
    for (row, (c, label)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * row as f64;
        let x = W - RIGHT + 15.0;
        let color = PALETTE[c % PALETTE.len()];
        let _ = writeln!(svg, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{color}"/>"#, y - 10.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(label));
    }
}

fn ticks(svg: &mut String, x_max: f64, x_of: impl Fn(f64) -> f64, y_ticks: &[(f64, f64)]) {
    for i in 0..=4 {
        let t = x_max * i as f64 / 4.0;
        let x = x_of(t);
        let _ = writeln!(svg, r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black"/>"#, H - BOTTOM, H - BOTTOM + 4.0);
        let _ = writeln!(svg, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, format_tick(t));
    }
    for &(v, y) in y_ticks {
        let _ = writeln!(svg, r#"<line x1="{}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="black"/>"#, LEFT - 4.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, format_tick(v));
    }
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 10.0 || v == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Kaplan-Meier step curves, one color per cluster.
pub fn survival_svg(title: &str, curves: &[(usize, SurvivalCurve)], sizes: &[usize]) -> String {
    let mut svg = String::new();
    frame(&mut svg, title, "days since first visit", "survival probability");
    let t_max = curves
        .iter()
        .flat_map(|(_, c)| c.times.iter().copied())
        .fold(1.0, f64::max);
    let x_of = |t: f64| LEFT + (W - RIGHT - LEFT) * t / t_max;
    let y_of = |s: f64| H - BOTTOM - (H - BOTTOM - TOP) * s;
    let y_ticks: Vec<(f64, f64)> = (0..=4).map(|i| (i as f64 / 4.0, y_of(i as f64 / 4.0))).collect();
    ticks(&mut svg, t_max, x_of, &y_ticks);
    for (c, curve) in curves {
        let mut d = format!("M {} {}", x_of(0.0), y_of(1.0));
        let mut prev = 1.0;
        for (&t, &s) in curve.times.iter().zip(&curve.survival).skip(1) {
            let _ = write!(d, " L {} {} L {} {}", x_of(t), y_of(prev), x_of(t), y_of(s));
            prev = s;
        }
        let _ = write!(d, " L {} {}", x_of(t_max), y_of(prev));
        let color = PALETTE[c % PALETTE.len()];
        let _ = writeln!(svg, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#);
    }
    let entries: Vec<(usize, String)> = curves
        .iter()
        .map(|(c, _)| (*c, format!("cluster {c} (n={})", sizes.get(*c).copied().unwrap_or(0))))
        .collect();
    legend(&mut svg, &entries);
    svg.push_str("</svg>\n");
    svg
}

/// Embedded coordinates colored by cluster.
pub fn scatter_svg(title: &str, coords: &[[f64; 2]], labels: &[usize]) -> String {
    let mut svg = String::new();
    frame(&mut svg, title, "u1", "u2");
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in coords {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span = |d: usize| if hi[d] > lo[d] { hi[d] - lo[d] } else { 1.0 };
    let x_of = |v: f64| LEFT + 5.0 + (W - RIGHT - LEFT - 10.0) * (v - lo[0]) / span(0);
    let y_of = |v: f64| H - BOTTOM - 5.0 - (H - BOTTOM - TOP - 10.0) * (v - lo[1]) / span(1);
    for (p, &l) in coords.iter().zip(labels) {
        let color = PALETTE[l % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.8"/>"#,
            x_of(p[0]),
            y_of(p[1])
        );
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let entries: Vec<(usize, String)> = (0..k).map(|c| (c, format!("cluster {c}"))).collect();
    legend(&mut svg, &entries);
    svg.push_str("</svg>\n");
    svg
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write every report of a run into `out`:
/// `results.csv`, `ranked.csv`, `results.json`, `assignments.csv`,
/// `km_curves.csv`, `embedding.csv` (WSD, or the first embedded measure),
/// `embedding_<MEASURE>.csv` per embedded measure plus `embedding_HAL.csv`,
/// and `plots/` with one survival plot per workflow and one scatter per
/// embedded workflow.
pub fn render_reports(p: &Prepared, runs: &[WorkflowRun], out: &Path, inputs: Option<Inputs>) -> Result<Manifest> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results: Vec<WorkflowResult> = runs.iter().map(|r| r.result.clone()).collect();
    write_results_csv(&out.join("results.csv"), &results)?;
    let manifest = Manifest::new(p, runs, inputs);
    write_results_csv(&out.join("ranked.csv"), &manifest.ranking.ranked)?;
    write_text(&out.join("results.json"), &serde_json::to_string_pretty(&manifest)?)?;
    write_assignments(&out.join("assignments.csv"), &p.space.ids, runs)?;
    write_km_curves(&out.join("km_curves.csv"), runs)?;

    let mut primary = None;
    for (m, e) in &p.embeddings {
        if let Ok(e) = e {
            e.write_csv(&out.join(format!("embedding_{}.csv", m.tag())))?;
            if primary.is_none() || *m == crate::metrics::Measure::Wsd {
                primary = Some(e);
            }
        }
    }
    if let Some(e) = primary {
        e.write_csv(&out.join("embedding.csv"))?;
    }
    if let Some(Ok(e)) = &p.dtw_embedding {
        e.write_csv(&out.join("embedding_HAL.csv"))?;
    }

    let plots = out.join("plots");
    std::fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    for run in runs {
        let Some(asg) = &run.assignment else { continue };
        let name = &run.result.workflow;
        write_text(
            &plots.join(format!("{name}_survival.svg")),
            &survival_svg(name, &run.curves, &run.result.cluster_sizes),
        )?;
        let emb = match run.spec {
            WorkflowSpec::Proposed { measure, embed: true, .. } => p.embeddings.get(&measure),
            WorkflowSpec::Baseline(super::Baseline::Hal { embed: true, .. }) => p.dtw_embedding.as_ref(),
            _ => None,
        };
        if let Some(Ok(e)) = emb {
            write_text(
                &plots.join(format!("{name}_embedding.svg")),
                &scatter_svg(name, &e.coords, &asg.labels),
            )?;
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalstats::kaplan_meier;

    /// Minimal well-formedness check: balanced tags and quoted attributes.
    pub(crate) fn well_formed(xml: &str) -> bool {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = xml;
        while let Some(start) = rest.find('<') {
            let Some(end) = rest[start..].find('>') else { return false };
            let tag = &rest[start + 1..start + end];
            rest = &rest[start + end + 1..];
            if !tag.matches('"').count().is_multiple_of(2) {
                return false;
            }
            if let Some(name) = tag.strip_prefix('/') {
                if stack.pop().as_deref() != Some(name.trim()) {
                    return false;
                }
            } else if !tag.ends_with('/') {
                stack.push(tag.split_whitespace().next().unwrap_or("").to_string());
            }
        }
        stack.is_empty()
    }

    #[test]
    fn survival_plot_is_well_formed() {
        let a = kaplan_meier(&[10.0, 20.0, 30.0], &[true, false, true]).unwrap();
        let b = kaplan_meier(&[5.0, 6.0], &[true, true]).unwrap();
        let svg = survival_svg("MAN_AHC_2 <test>", &[(0, a), (1, b)], &[3, 2]);
        assert!(well_formed(&svg));
        assert!(svg.contains("survival probability"));
        assert!(svg.contains("cluster 1 (n=2)"));
        assert!(svg.contains("&lt;test&gt;"));
    }

    #[test]
    fn scatter_is_well_formed() {
        let svg = scatter_svg("x", &[[0.0, 1.0], [2.0, -1.0], [2.0, -1.0]], &[0, 1, 1]);
        assert!(well_formed(&svg));
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn checker_rejects_broken_markup() {
        assert!(!well_formed("<svg><g></svg>"));
        assert!(!well_formed("<svg a=\"1></svg>"));
    }

    #[test]
    fn results_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let r = WorkflowResult {
            workflow: "MAN_AHC_2".into(),
            k: 2,
            cluster_sizes: vec![3, 4],
            silhouette_mean: Some(0.5),
            silhouette_std: Some(0.25),
            logrank_p_max: None,
            lrs_min: None,
            error: None,
        };
        write_results_csv(&path, &[r]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "workflow,k,cluster_sizes,silhouette_mean,silhouette_std,logrank_p_max,lrs_min"
        );
        assert_eq!(lines.next().unwrap(), "MAN_AHC_2,2,3;4,0.5,0.25,,");
    }
}
