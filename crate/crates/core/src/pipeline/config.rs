//! Run configuration.
//!
//! The configuration file is flat `key = value` text (TOML syntax); every key
//! is optional and falls back to the default below. A `results.json`
//! manifest from an earlier run is also accepted, in which case its recorded
//! configuration is replayed.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `seed` | 42 | global seed; every stage derives its own stream |
//! | `measures` | `["MAN","EUC","COS","WSD"]` | distances in the grid |
//! | `k_min`, `k_max` | 2, 6 | cluster counts swept |
//! | `embed` | true | include the embedded (`_UMAP_`) workflows |
//! | `baselines` | true | include the reference workflows |
//! | `sigmoid_restarts` | 16 | curve-fit restarts per patient |
//! | `horizon_days` | 3650 | D50 clamp |
//! | `spearman_threshold` | 0.7 | drop a variable when `|rho|` exceeds it |
//! | `em_max_iter`, `em_tol` | 100, 1e-6 | label-model EM |
//! | `svm_c`, `svm_gap_tol`, `svm_max_passes` | 1, 1e-6, 100000 | classifier |
//! | `n_neighbors`, `min_dist`, `n_epochs`, `negative_samples` | 15, 0.1, 500, 5 | embedding |
//! | `kmeans_restarts` | 10 | k-means restarts |
//! | `gom_percentile` | false | derive the GOM cut from the 90th percentile of declines |
//! | `gom_threshold` | 0.186 | fixed GOM cut |
//! | `silhouette_space` | `"embedded"` | `"embedded"` or `"original"` for embedded workflows |
//! | `sil_min`, `p_max` | 0.5, 0.05 | ranking filters |
//! | `audit_triples` | 1000000 | triangle-inequality sample size |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{GomThreshold, GOM_THRESHOLD};
use crate::embedding::EmbeddingParams;
use crate::error::{Error, Result};
use crate::metrics::{Measure, DEFAULT_AUDIT_TRIPLES};
use crate::seed;
use crate::weaksup::{EmOptions, SvmOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SilhouetteSpace {
    /// Euclidean distances between embedded coordinates.
    Embedded,
    /// The distance matrix that was embedded.
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub measures: Vec<Measure>,
    pub k_min: usize,
    pub k_max: usize,
    pub embed: bool,
    pub baselines: bool,
    pub sigmoid_restarts: usize,
    pub horizon_days: f64,
    pub spearman_threshold: f64,
    pub em_max_iter: usize,
    pub em_tol: f64,
    pub svm_c: f64,
    pub svm_gap_tol: f64,
    pub svm_max_passes: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub n_epochs: usize,
    pub negative_samples: usize,
    pub kmeans_restarts: usize,
    pub gom_percentile: bool,
    pub gom_threshold: f64,
    pub silhouette_space: SilhouetteSpace,
    pub sil_min: f64,
    pub p_max: f64,
    pub audit_triples: u64,
}

impl Default for Config {
    fn default() -> Self {
        let emb = EmbeddingParams::default();
        Config {
            seed: 42,
            measures: Measure::ALL.to_vec(),
            k_min: 2,
            k_max: 6,
            embed: true,
            baselines: true,
            sigmoid_restarts: crate::curves::DEFAULT_RESTARTS,
            horizon_days: crate::curves::DEFAULT_HORIZON_DAYS,
            spearman_threshold: crate::features::DEFAULT_SPEARMAN_THRESHOLD,
            em_max_iter: EmOptions::default().max_iter,
            em_tol: EmOptions::default().tol,
            svm_c: SvmOptions::default().c,
            svm_gap_tol: SvmOptions::default().gap_tol,
            svm_max_passes: SvmOptions::default().max_passes,
            n_neighbors: emb.n_neighbors,
            min_dist: emb.min_dist,
            n_epochs: emb.n_epochs,
            negative_samples: emb.negative_samples,
            kmeans_restarts: 10,
            gom_percentile: false,
            gom_threshold: GOM_THRESHOLD,
            silhouette_space: SilhouetteSpace::Embedded,
            sil_min: 0.5,
            p_max: 0.05,
            audit_triples: DEFAULT_AUDIT_TRIPLES,
        }
    }
}

/// Seeds handed to each stage, recorded in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub sigmoid: u64,
    pub svm: u64,
    pub embedding: u64,
    pub kmeans: u64,
    pub audit: u64,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.measures.is_empty() {
            return bad("measures must not be empty");
        }
        if self.k_min < 2 || self.k_min > self.k_max {
            return bad("need 2 <= k_min <= k_max");
        }
        if self.sigmoid_restarts == 0 || self.kmeans_restarts == 0 {
            return bad("restart counts must be positive");
        }
        if !(self.min_dist > 0.0) || self.n_neighbors < 2 {
            return bad("embedding needs min_dist > 0 and n_neighbors >= 2");
        }
        if !(self.svm_c > 0.0) {
            return bad("svm_c must be > 0");
        }
        if !(self.horizon_days > 0.0) {
            return bad("horizon_days must be > 0");
        }
        Ok(())
    }

    /// Parse flat `key = value` text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Load a config file, or the `config` entry of a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if text.trim_start().starts_with('{') {
            #[derive(Deserialize)]
            struct ManifestConfig {
                config: Config,
            }
            let m: ManifestConfig = serde_json::from_str(&text)?;
            m.config.validate()?;
            return Ok(m.config);
        }
        Self::from_toml_str(&text)
    }

    pub fn k_range(&self) -> std::ops::RangeInclusive<usize> {
        self.k_min..=self.k_max
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds {
            sigmoid: seed::derive(self.seed, "sigmoid"),
            svm: seed::derive(self.seed, "svm"),
            embedding: seed::derive(self.seed, "embedding"),
            kmeans: seed::derive(self.seed, "kmeans"),
            audit: seed::derive(self.seed, "audit"),
        }
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            max_iter: self.em_max_iter,
            tol: self.em_tol,
            ..EmOptions::default()
        }
    }

    pub fn svm_options(&self) -> SvmOptions {
        SvmOptions {
            c: self.svm_c,
            gap_tol: self.svm_gap_tol,
            max_passes: self.svm_max_passes,
            seed: self.seeds().svm,
        }
    }

    pub fn embedding_params(&self) -> EmbeddingParams {
        EmbeddingParams {
            n_neighbors: self.n_neighbors,
            min_dist: self.min_dist,
            n_epochs: self.n_epochs,
            negative_samples: self.negative_samples,
            seed: self.seeds().embedding,
            ..EmbeddingParams::default()
        }
    }

    pub fn gom(&self) -> GomThreshold {
        if self.gom_percentile {
            GomThreshold::Percentile90
        } else {
            GomThreshold::Fixed(self.gom_threshold)
        }
    }
}
