//! Versioned JSON model persistence.
//!
//! Format (`format_version` 1):
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "schema": [{"name": "age", "kind": "numeric"},
//!               {"name": "gender", "kind": "categorical", "categories": ["F", "M"]}],
//!   "aggregation": {"type": "mean"},
//!   "trees": [{"nodes": [
//!     {"type": "split", "feature": 0, "threshold": 40.5, "left": 1, "right": 2},
//!     {"type": "leaf", "id": 0, "value": 41000.0},
//!     {"type": "leaf", "id": 1, "value": 52000.0}
//!   ]}]
//! }
//! ```
//!
//! Floats are serialized with shortest-round-trip decimal digits, so leaf
//! values and thresholds survive save/load bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeatureSpec;
use crate::error::{Error, Result};
use crate::tree::{Aggregation, DecisionTree, Ensemble, Node};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    schema: Vec<FeatureSpec>,
    aggregation: AggregationJson,
    trees: Vec<TreeJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum AggregationJson {
    Mean,
    Additive { base_score: f64, learning_rate: f64 },
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    nodes: Vec<NodeJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum NodeJson {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        id: usize,
        value: f64,
    },
}

/// Serializes an ensemble to the versioned JSON format (returned as a string
/// so callers can control where it goes).
pub fn model_to_json(ensemble: &Ensemble) -> Result<String> {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        schema: ensemble.schema().to_vec(),
        aggregation: match ensemble.aggregation() {
            Aggregation::Mean => AggregationJson::Mean,
            Aggregation::Additive {
                base_score,
                learning_rate,
            } => AggregationJson::Additive {
                base_score: *base_score,
                learning_rate: *learning_rate,
            },
        },
        trees: ensemble
            .trees()
            .iter()
            .map(|tree| TreeJson {
                nodes: tree
                    .nodes()
                    .iter()
                    .map(|node| match node {
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => NodeJson::Split {
                            feature: *feature,
                            threshold: *threshold,
                            left: *left,
                            right: *right,
                        },
                        Node::Leaf { leaf_id, value } => NodeJson::Leaf {
                            id: *leaf_id,
                            value: *value,
                        },
                    })
                    .collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(json: &str) -> Result<Ensemble> {
    let file: ModelFile = serde_json::from_str(json)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format_version {}, expected {}",
            file.format_version, FORMAT_VERSION
        )));
    }
    let trees = file
        .trees
        .into_iter()
        .map(|tree| {
            let nodes = tree
                .nodes
                .into_iter()
                .map(|node| match node {
                    NodeJson::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    },
                    NodeJson::Leaf { id, value } => Node::Leaf { leaf_id: id, value },
                })
                .collect();
            DecisionTree::from_nodes(nodes)
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregation = match file.aggregation {
        AggregationJson::Mean => Aggregation::Mean,
        AggregationJson::Additive {
            base_score,
            learning_rate,
        } => Aggregation::Additive {
            base_score,
            learning_rate,
        },
    };
    Ensemble::new(file.schema, aggregation, trees)
}

pub fn save_model(ensemble: &Ensemble, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_json(ensemble)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Ensemble> {
    let text = std::fs::read_to_string(path)?;
    model_from_json(&text)
}
