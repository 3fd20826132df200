//! Run configuration, loadable from a TOML key-value file whose keys
//! mirror the field names.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Mode;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    /// Defaults to 20% of the epoch budget when unset.
    pub warmup_epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cluster counts per hierarchy, strictly decreasing.
    pub scales: Vec<usize>,
    /// Queue budget per cluster.
    pub budget: usize,
    /// Momentum coefficient for centroid updates.
    pub momentum: f64,
    /// Full k-means re-fit cadence, in epochs.
    pub kmeans_refit_interval: usize,
    /// Ego-subgraph radius; defaults to the encoder layer count.
    pub hops: Option<usize>,
    pub layers: usize,
    pub hidden_dim: usize,
    pub local_drop: f64,
    pub global_drop: f64,
    pub local_mask_fraction: f64,
    pub descriptor_mask_fraction: f64,
    /// Weight of the predictive loss in the combined objective.
    pub lambda: f64,
    pub seed: u64,
    /// Cap on in-batch negatives per anchor; all of them when unset.
    pub negative_count: Option<usize>,
    pub descriptors_enabled: bool,
    /// Trainable decay scalars; uniform 1/K weights when false.
    pub omni_trainable: bool,
    /// Local-global augmentation plus the predictive task; plain local
    /// contrastive dropping when false.
    pub specialized_tasks: bool,
    /// Queue-triggered centroid updates between re-fits.
    pub momentum_enabled: bool,
    /// Drop the negative term of the predictive loss (the printed form).
    pub predictive_positive_only: bool,
    /// Re-validate descriptor/queue invariants every step.
    pub debug_checks: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Node,
            epochs: 10,
            warmup_epochs: None,
            batch_size: 32,
            learning_rate: 1e-3,
            scales: vec![16, 12, 8, 4],
            budget: 4,
            momentum: 0.999,
            kmeans_refit_interval: 2,
            hops: None,
            layers: 3,
            hidden_dim: 32,
            local_drop: 0.2,
            global_drop: 0.2,
            local_mask_fraction: 0.25,
            descriptor_mask_fraction: 0.25,
            lambda: 1.0,
            seed: 0,
            negative_count: None,
            descriptors_enabled: true,
            omni_trainable: true,
            specialized_tasks: true,
            momentum_enabled: true,
            predictive_positive_only: false,
            debug_checks: false,
        }
    }
}

impl TrainConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.epochs / 5)
    }

    pub fn hop_radius(&self) -> usize {
        self.hops.unwrap_or(self.layers)
    }

    pub fn total_clusters(&self) -> usize {
        self.scales.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup() > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup(),
                self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.scales.is_empty() || self.scales.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!(
                "scales must be non-empty and strictly decreasing, got {:?}",
                self.scales
            )));
        }
        if self.budget == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1]", self.momentum)));
        }
        if self.kmeans_refit_interval == 0 {
            return Err(Error::Config("kmeans_refit_interval must be positive".into()));
        }
        if self.layers == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("layers and hidden_dim must be positive".into()));
        }
        for (name, f) in [("local_drop", self.local_drop), ("global_drop", self.global_drop)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} {f} not in [0, 1)")));
            }
        }
        for (name, f) in [
            ("local_mask_fraction", self.local_mask_fraction),
            ("descriptor_mask_fraction", self.descriptor_mask_fraction),
        ] {
            if !(0.0 < f && f < 1.0) {
                return Err(Error::Config(format!("{name} {f} not in (0, 1)")));
            }
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
