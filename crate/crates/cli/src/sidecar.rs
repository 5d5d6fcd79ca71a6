//! JSON sidecar written next to each generated table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taborder::training::DataConfig;
use taborder::Dag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagSidecar {
    pub d: usize,
    pub edges: Vec<(usize, usize)>,
    pub topo_order: Vec<usize>,
    pub seed: u64,
    pub index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_rate: Option<f64>,
    pub generator: DataConfig,
}

impl DagSidecar {
    pub fn new(dag: &Dag, seed: u64, index: u64, generator: DataConfig) -> Self {
        Self {
            d: dag.d(),
            edges: dag.edges().to_vec(),
            topo_order: dag.topo_order().to_vec(),
            seed,
            index,
            missing_rate: None,
            generator,
        }
    }

    /// Parses and validates the graph part.
    pub fn from_json(text: &str) -> taborder::Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.dag()?;
        Ok(s)
    }

    pub fn dag(&self) -> taborder::Result<Dag> {
        Dag::new(self.d, self.edges.clone(), self.topo_order.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }
}

/// `dir/name.csv` → `dir/name.dag.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv.with_file_name(format!("{stem}.dag.json"))
}
