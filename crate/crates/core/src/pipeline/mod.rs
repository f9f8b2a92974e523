//! The workflow grid: shared artifacts, per-workflow clustering and
//! evaluation, filtering and ranking, and report files.

mod config;
mod report;

pub use config::{Config, SilhouetteSpace, StageSeeds};
pub use report::{
    render_reports, scatter_svg, survival_svg, write_assignments, write_km_curves, write_results_csv, EmbeddingSummary, Inputs, Manifest,
    RESULTS_HEADER,
};

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, HAL_K};
use crate::cluster::{ahc_complete, kmeans, kmedoids, Assignment, ClusterMethod};
use crate::cohort::{apply_exclusions, ExclusionReport, Sequence};
use crate::curves::{fit_sigmoid, SigmoidFit};
use crate::embedding::{embed, Embedding};
use crate::error::{Error, Result};
use crate::evalstats::{kaplan_meier, silhouette, survival_separation, SurvivalCurve};
use crate::features::{sequence_features, FeatureSpace, FeatureVector};
use crate::metrics::{audit_metric, distance_matrix, DistanceMatrix, MatrixKind, Measure, MetricAudit};
use crate::weaksup::{apply_labeling_functions, fit_label_model, infer_labels, train_wsd, LabelMatrix, LabelModel, PairLabel, WsdWeights};

/// Reference workflows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Baseline {
    Gom,
    Gro,
    Mey,
    Hal { embed: bool, k: usize },
}

/// One grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WorkflowSpec {
    Proposed {
        measure: Measure,
        embed: bool,
        method: ClusterMethod,
        k: usize,
    },
    Baseline(Baseline),
}

impl WorkflowSpec {
    pub fn k(&self) -> usize {
        match *self {
            WorkflowSpec::Proposed { k, .. } => k,
            WorkflowSpec::Baseline(Baseline::Gom) => 2,
            WorkflowSpec::Baseline(Baseline::Gro) => 4,
            WorkflowSpec::Baseline(Baseline::Mey) => 3,
            WorkflowSpec::Baseline(Baseline::Hal { k, .. }) => k,
        }
    }

    pub fn is_baseline(&self) -> bool {
        matches!(self, WorkflowSpec::Baseline(_))
    }

    pub fn uses_embedding(&self) -> bool {
        match *self {
            WorkflowSpec::Proposed { embed, .. } => embed,
            WorkflowSpec::Baseline(Baseline::Hal { embed, .. }) => embed,
            _ => false,
        }
    }

    /// `MEASURE[_UMAP]_METHOD_k`, or the baseline id.
    pub fn name(&self) -> String {
        let umap = |e: bool| if e { "_UMAP" } else { "" };
        match *self {
            WorkflowSpec::Proposed { measure, embed, method, k } => format!("{measure}{}_{method}_{k}", umap(embed)),
            WorkflowSpec::Baseline(Baseline::Hal { embed, k }) => format!("HAL{}_AHC_{k}", umap(embed)),
            WorkflowSpec::Baseline(b) => {
                let tag = match b {
                    Baseline::Gom => "GOM",
                    Baseline::Gro => "GRO",
                    _ => "MEY",
                };
                format!("{tag}_{}", self.k())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let WorkflowSpec::Proposed { embed, method, k, .. } = *self {
            if method == ClusterMethod::KMeans && !embed {
                return Err(Error::InvalidWorkflow("k-means needs embedded coordinates".into()));
            }
            if method == ClusterMethod::Threshold {
                return Err(Error::InvalidWorkflow("threshold strata are baselines only".into()));
            }
            if k < 1 {
                return Err(Error::InvalidWorkflow("k must be >= 1".into()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for WorkflowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for WorkflowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidWorkflow(format!("unrecognized workflow {s:?}"));
        let parts: Vec<&str> = s.split('_').collect();
        let k: usize = parts.last().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let spec = match parts.as_slice() {
            ["GOM", "2"] => WorkflowSpec::Baseline(Baseline::Gom),
            ["GRO", "4"] => WorkflowSpec::Baseline(Baseline::Gro),
            ["MEY", "3"] => WorkflowSpec::Baseline(Baseline::Mey),
            ["HAL", "AHC", _] => WorkflowSpec::Baseline(Baseline::Hal { embed: false, k }),
            ["HAL", "UMAP", "AHC", _] => WorkflowSpec::Baseline(Baseline::Hal { embed: true, k }),
            [m, method, _] => WorkflowSpec::Proposed {
                measure: m.parse().map_err(|_| bad())?,
                embed: false,
                method: method.parse().map_err(|_| bad())?,
                k,
            },
            [m, "UMAP", method, _] => WorkflowSpec::Proposed {
                measure: m.parse().map_err(|_| bad())?,
                embed: true,
                method: method.parse().map_err(|_| bad())?,
                k,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Proposed workflows, then baselines. HAL entries need item subscores and
/// are left out (with a warning) when the cohort has none.
pub fn enumerate_grid(config: &Config, has_subscores: bool) -> Vec<WorkflowSpec> {
    let mut grid = Vec::new();
    for &measure in &config.measures {
        let mut cells = vec![(false, ClusterMethod::KMedoids), (false, ClusterMethod::Ahc)];
        if config.embed {
            cells.extend(ClusterMethod::GRID.iter().map(|&m| (true, m)));
        }
        for (embed, method) in cells {
            for k in config.k_range() {
                grid.push(WorkflowSpec::Proposed { measure, embed, method, k });
            }
        }
    }
    if config.baselines {
        grid.extend([Baseline::Gom, Baseline::Gro, Baseline::Mey].map(WorkflowSpec::Baseline));
        if has_subscores {
            for embed in [false, true] {
                grid.extend(HAL_K.iter().map(|&k| WorkflowSpec::Baseline(Baseline::Hal { embed, k })));
            }
        } else {
            log::warn!("cohort has no item subscores; HAL workflows skipped");
        }
    }
    grid
}

/// Per-patient stages: sigmoid fits and the seven features.
pub fn fit_cohort(cohort: &[Sequence], config: &Config) -> Vec<SigmoidFit> {
    let seed = config.seeds().sigmoid;
    cohort
        .par_iter()
        .map(|s| fit_sigmoid(s, config.sigmoid_restarts, seed))
        .collect()
}

pub fn extract_features(cohort: &[Sequence], fits: &[SigmoidFit], config: &Config) -> Result<FeatureSpace> {
    let features = cohort
        .iter()
        .zip(fits)
        .map(|(s, f)| sequence_features(s, f, config.horizon_days))
        .collect::<Result<Vec<FeatureVector>>>()?;
    let ids: Vec<_> = cohort.iter().map(|s| s.patient_id.clone()).collect();
    FeatureSpace::build(&ids, &features, config.spearman_threshold)
}

/// Weak supervision: labeling functions, label model, inferred pair labels.
pub fn weak_labels(space: &FeatureSpace, config: &Config) -> Result<(LabelMatrix, LabelModel, Vec<PairLabel>)> {
    let lm = apply_labeling_functions(&space.table);
    let model = fit_label_model(&lm, config.em_options())?;
    let labels = infer_labels(&model, &lm);
    Ok((lm, model, labels))
}

/// Everything computed once and shared by all workflows.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: Config,
    pub cohort: Vec<Sequence>,
    pub exclusions: ExclusionReport,
    pub fits: Vec<SigmoidFit>,
    pub space: FeatureSpace,
    pub label_matrix: Option<LabelMatrix>,
    pub label_model: Option<LabelModel>,
    pub pair_labels: Vec<PairLabel>,
    pub weights: Option<WsdWeights>,
    /// Why WSD is unavailable, when it is.
    pub wsd_error: Option<String>,
    pub matrices: BTreeMap<Measure, DistanceMatrix>,
    pub embeddings: BTreeMap<Measure, std::result::Result<Embedding, String>>,
    pub audits: BTreeMap<Measure, MetricAudit>,
    pub dtw: Option<DistanceMatrix>,
    pub dtw_embedding: Option<std::result::Result<Embedding, String>>,
    pub outcomes: Vec<(f64, bool)>,
}

impl Prepared {
    /// Apply the exclusion rules and compute all shared artifacts.
    pub fn build(raw: Vec<Sequence>, config: &Config) -> Result<Self> {
        config.validate()?;
        let (cohort, exclusions) = apply_exclusions(raw);
        if cohort.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "{} patients left after exclusions; at least 3 are needed",
                cohort.len()
            )));
        }
        let fits = fit_cohort(&cohort, config);
        let space = extract_features(&cohort, &fits, config)?;

        let wants_wsd = config.measures.contains(&Measure::Wsd);
        let (mut label_matrix, mut label_model, mut pair_labels, mut weights, mut wsd_error) =
            (None, None, Vec::new(), None, None);
        if wants_wsd {
            match weak_labels(&space, config) {
                Ok((lm, model, labels)) => {
                    match train_wsd(&space.table, &labels, &config.svm_options()) {
                        Ok(w) => weights = Some(w),
                        Err(e) => wsd_error = Some(e.to_string()),
                    }
                    label_matrix = Some(lm);
                    label_model = Some(model);
                    pair_labels = labels;
                }
                Err(e) => wsd_error = Some(e.to_string()),
            }
            if let Some(e) = &wsd_error {
                log::warn!("WSD unavailable: {e}");
            }
        }

        let mut matrices = BTreeMap::new();
        for &m in &config.measures {
            if m == Measure::Wsd && weights.is_none() {
                continue;
            }
            matrices.insert(m, distance_matrix(&space, m, weights.as_ref())?);
        }
        let audit_seed = config.seeds().audit;
        let audits = matrices
            .iter()
            .map(|(&m, d)| (m, audit_metric(d, config.audit_triples, audit_seed)))
            .collect();

        let params = config.embedding_params();
        let embeddings = if config.embed {
            matrices
                .par_iter()
                .map(|(&m, d)| (m, embed(d, &params).map_err(|e| e.to_string())))
                .collect()
        } else {
            BTreeMap::new()
        };

        let has_items = cohort.iter().all(Sequence::has_subscores);
        let dtw = if config.baselines && has_items {
            Some(baselines::dtw_matrix(&cohort)?)
        } else {
            None
        };
        let dtw_embedding = dtw.as_ref().map(|d| embed(d, &params).map_err(|e| e.to_string()));

        let outcomes = cohort
            .iter()
            .map(|s| (s.outcome.survival_days as f64, s.outcome.event_observed))
            .collect();
        Ok(Prepared {
            config: config.clone(),
            cohort,
            exclusions,
            fits,
            space,
            label_matrix,
            label_model,
            pair_labels,
            weights,
            wsd_error,
            matrices,
            embeddings,
            audits,
            dtw,
            dtw_embedding,
            outcomes,
        })
    }

    pub fn has_subscores(&self) -> bool {
        self.dtw.is_some() || self.cohort.iter().all(Sequence::has_subscores)
    }

    pub fn grid(&self) -> Vec<WorkflowSpec> {
        enumerate_grid(&self.config, self.has_subscores())
    }

    fn matrix(&self, m: Measure) -> std::result::Result<&DistanceMatrix, String> {
        self.matrices.get(&m).ok_or_else(|| match (m, &self.wsd_error) {
            (Measure::Wsd, Some(e)) => format!("WSD unavailable: {e}"),
            _ => format!("{m} is not among the configured measures"),
        })
    }

    fn embedding(&self, m: Measure) -> std::result::Result<&Embedding, String> {
        match self.embeddings.get(&m) {
            Some(Ok(e)) => Ok(e),
            Some(Err(e)) => Err(format!("embedding of {m} failed: {e}")),
            None => Err(format!("no embedding of {m} (embedding disabled or matrix unavailable)")),
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowResult {
    pub workflow: String,
    pub k: usize,
    pub cluster_sizes: Vec<usize>,
    pub silhouette_mean: Option<f64>,
    pub silhouette_std: Option<f64>,
    pub logrank_p_max: Option<f64>,
    pub lrs_min: Option<f64>,
    /// Set when the workflow could not run.
    pub error: Option<String>,
}

/// A workflow's result together with what the reports need.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowRun {
    pub spec: WorkflowSpec,
    pub result: WorkflowResult,
    pub assignment: Option<Assignment>,
    /// Kaplan-Meier curve per non-empty cluster.
    pub curves: Vec<(usize, SurvivalCurve)>,
}

impl WorkflowRun {
    pub fn completed(&self) -> bool {
        self.result.error.is_none()
    }
}

fn feature_matrix(p: &Prepared, pick: fn(&FeatureVector) -> f64) -> DistanceMatrix {
    let v: Vec<[f64; 1]> = p.space.features.iter().map(|f| [pick(f)]).collect();
    DistanceMatrix::euclidean(p.space.ids.clone(), &v, MatrixKind::Feature)
}

/// Cluster and return the matrix the silhouette is computed on.
fn cluster_cell(p: &Prepared, spec: &WorkflowSpec) -> std::result::Result<(Assignment, DistanceMatrix), String> {
    let cfg = &p.config;
    let e = |err: Error| err.to_string();
    match *spec {
        WorkflowSpec::Proposed { measure, embed: false, method, k } => {
            let d = p.matrix(measure)?;
            let asg = match method {
                ClusterMethod::KMedoids => kmedoids(d, k, cfg.seeds().kmeans).map_err(e)?.assignment,
                ClusterMethod::Ahc => ahc_complete(d, k).map_err(e)?,
                other => return Err(format!("{other} is not defined on a distance matrix")),
            };
            Ok((asg, d.clone()))
        }
        WorkflowSpec::Proposed { measure, embed: true, method, k } => {
            let emb = p.embedding(measure)?;
            let ed = emb.distance_matrix();
            let asg = match method {
                ClusterMethod::KMeans => kmeans(&emb.coords, k, cfg.seeds().kmeans, cfg.kmeans_restarts).map_err(e)?,
                ClusterMethod::KMedoids => kmedoids(&ed, k, cfg.seeds().kmeans).map_err(e)?.assignment,
                ClusterMethod::Ahc => ahc_complete(&ed, k).map_err(e)?,
                ClusterMethod::Threshold => return Err("threshold strata are baselines only".into()),
            };
            let sil = match cfg.silhouette_space {
                SilhouetteSpace::Embedded => ed,
                SilhouetteSpace::Original => p.matrix(measure)?.clone(),
            };
            Ok((asg, sil))
        }
        WorkflowSpec::Baseline(Baseline::Gom) => Ok((
            baselines::gom_strata(&p.space.features, cfg.gom()),
            feature_matrix(p, |f| f.pc_change_m6),
        )),
        WorkflowSpec::Baseline(Baseline::Gro) => Ok((
            baselines::gro_strata(&p.space.features),
            feature_matrix(p, |f| f.score_m12),
        )),
        WorkflowSpec::Baseline(Baseline::Mey) => Ok((
            baselines::mey_strata(&p.space.features),
            feature_matrix(p, |f| f.d50),
        )),
        WorkflowSpec::Baseline(Baseline::Hal { embed, k }) => {
            let d = p.dtw.as_ref().ok_or("cohort has no item subscores")?;
            if !embed {
                return Ok((ahc_complete(d, k).map_err(e)?, d.clone()));
            }
            let emb = match &p.dtw_embedding {
                Some(Ok(emb)) => emb,
                Some(Err(err)) => return Err(format!("embedding of DTW failed: {err}")),
                None => return Err("no DTW embedding".into()),
            };
            let ed = emb.distance_matrix();
            let asg = ahc_complete(&ed, k).map_err(e)?;
            let sil = match cfg.silhouette_space {
                SilhouetteSpace::Embedded => ed,
                SilhouetteSpace::Original => d.clone(),
            };
            Ok((asg, sil))
        }
    }
}

/// Cluster and evaluate one workflow against the shared artifacts.
pub fn run_workflow(p: &Prepared, spec: &WorkflowSpec) -> WorkflowRun {
    let name = spec.name();
    let failed = |error: String| WorkflowRun {
        spec: *spec,
        result: WorkflowResult {
            workflow: name.clone(),
            k: spec.k(),
            cluster_sizes: Vec::new(),
            silhouette_mean: None,
            silhouette_std: None,
            logrank_p_max: None,
            lrs_min: None,
            error: Some(error),
        },
        assignment: None,
        curves: Vec::new(),
    };
    if let Err(e) = spec.validate() {
        return failed(e.to_string());
    }
    let (asg, sil_matrix) = match cluster_cell(p, spec) {
        Ok(x) => x,
        Err(e) => {
            log::warn!("{name}: {e}");
            return failed(e);
        }
    };
    let sil = if asg.occupied() >= 2 {
        silhouette(&sil_matrix, &asg.labels).ok()
    } else {
        None
    };
    let sep = match survival_separation(&asg, &p.outcomes) {
        Ok(s) => s,
        Err(e) => return failed(e.to_string()),
    };
    let mut curves = Vec::new();
    for c in 0..asg.k {
        let members: Vec<usize> = (0..asg.labels.len()).filter(|&i| asg.labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let times: Vec<f64> = members.iter().map(|&i| p.outcomes[i].0).collect();
        let events: Vec<bool> = members.iter().map(|&i| p.outcomes[i].1).collect();
        match kaplan_meier(&times, &events) {
            Ok(curve) => curves.push((c, curve)),
            Err(e) => return failed(e.to_string()),
        }
    }
    WorkflowRun {
        spec: *spec,
        result: WorkflowResult {
            workflow: name,
            k: asg.k,
            cluster_sizes: asg.sizes(),
            silhouette_mean: sil.as_ref().map(|s| s.mean),
            silhouette_std: sil.as_ref().map(|s| s.std),
            logrank_p_max: sep.as_ref().map(|s| s.p_max),
            lrs_min: sep.as_ref().map(|s| s.lrs_min),
            error: None,
        },
        assignment: Some(asg),
        curves,
    }
}

/// Every workflow of the grid, in grid order; cells run in parallel.
pub fn run_all(p: &Prepared, grid: &[WorkflowSpec]) -> Vec<WorkflowRun> {
    grid.par_iter().map(|s| run_workflow(p, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    Failed { error: String },
    /// Silhouette missing (fewer than two occupied clusters) or below the bar.
    Silhouette { value: Option<f64> },
    PValue { value: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub workflow: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub ranked: Vec<WorkflowResult>,
    pub dropped: Vec<Dropped>,
}

/// Keep workflows with silhouette `>= sil_min`, then those with max p-value
/// `< p_max`; sort survivors by minimum LRS, largest first, ties by name.
pub fn filter_and_rank(results: &[WorkflowResult], sil_min: f64, p_max: f64) -> Ranking {
    let mut ranked = Vec::new();
    let mut dropped = Vec::new();
    for r in results {
        let reason = if let Some(e) = &r.error {
            Some(DropReason::Failed { error: e.clone() })
        } else if !r.silhouette_mean.is_some_and(|s| s >= sil_min) {
            Some(DropReason::Silhouette {
                value: r.silhouette_mean,
            })
        } else if !r.logrank_p_max.is_some_and(|p| p < p_max) {
            Some(DropReason::PValue { value: r.logrank_p_max })
        } else {
            None
        };
        match reason {
            Some(reason) => dropped.push(Dropped {
                workflow: r.workflow.clone(),
                reason,
            }),
            None => ranked.push(r.clone()),
        }
    }
    ranked.sort_by(|a, b| {
        let la = a.lrs_min.unwrap_or(f64::NEG_INFINITY);
        let lb = b.lrs_min.unwrap_or(f64::NEG_INFINITY);
        lb.total_cmp(&la).then_with(|| a.workflow.cmp(&b.workflow))
    });
    Ranking { ranked, dropped }
}
