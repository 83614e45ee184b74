//! Regression trees and ensembles with addressable leaves.
//!
//! Leaves carry dense ids `0..L-1` so that a tree's prediction surface is
//! exactly a leaf-value vector; post-training perturbations are plain vector
//! updates. Routing ties break left: `value <= threshold` goes left.

mod io;
mod train;

pub use io::{load_model, model_from_json, model_to_json, save_model};
pub use train::{train_boosted, train_cart, train_forest, BoostParams, CartParams, ForestParams};

use crate::data::{FeatureFrame, FeatureSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf_id: usize,
        value: f64,
    },
}

/// A binary axis-aligned regression tree stored as a node arena rooted at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    leaf_count: usize,
    /// node index per leaf id
    leaf_nodes: Vec<usize>,
}

impl DecisionTree {
    /// Validates the arena: every node reachable exactly once from the root,
    /// child indices in range, leaf ids dense and unique, thresholds finite.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<DecisionTree> {
        if nodes.is_empty() {
            return Err(Error::ModelFormat("tree has no nodes".into()));
        }
        let mut visited = vec![false; nodes.len()];
        let mut leaf_ids: Vec<(usize, usize)> = Vec::new(); // (leaf_id, node index)
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            let node = nodes
                .get(idx)
                .ok_or_else(|| Error::ModelFormat(format!("node index {idx} out of range")))?;
            if visited[idx] {
                return Err(Error::ModelFormat(format!(
                    "node {idx} reachable more than once; tree must be acyclic"
                )));
            }
            visited[idx] = true;
            match node {
                Node::Split {
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if !threshold.is_finite() {
                        return Err(Error::ModelFormat(format!(
                            "node {idx} has non-finite threshold"
                        )));
                    }
                    stack.push(*left);
                    stack.push(*right);
                }
                Node::Leaf { leaf_id, value } => {
                    if !value.is_finite() {
                        return Err(Error::ModelFormat(format!(
                            "leaf {leaf_id} has non-finite value"
                        )));
                    }
                    leaf_ids.push((*leaf_id, idx));
                }
            }
        }
        if visited.iter().any(|v| !v) {
            return Err(Error::ModelFormat(
                "tree contains nodes unreachable from the root".into(),
            ));
        }
        leaf_ids.sort_unstable();
        for (expected, (id, _)) in leaf_ids.iter().enumerate() {
            if *id != expected {
                return Err(Error::ModelFormat(format!(
                    "leaf ids must be dense 0..L-1, found id {id} at position {expected}"
                )));
            }
        }
        let leaf_nodes = leaf_ids.iter().map(|(_, idx)| *idx).collect::<Vec<_>>();
        Ok(DecisionTree {
            leaf_count: leaf_nodes.len(),
            leaf_nodes,
            nodes,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Routes a feature row to its leaf id. A NaN at a split feature is
    /// reported as the offending feature index.
    pub fn assign_leaf(&self, row: &[f64]) -> std::result::Result<usize, usize> {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { leaf_id, .. } => return Ok(*leaf_id),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let value = row[*feature];
                    if value.is_nan() {
                        return Err(*feature);
                    }
                    idx = if value <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> std::result::Result<f64, usize> {
        let leaf = self.assign_leaf(row)?;
        Ok(self.leaf_value(leaf))
    }

    pub fn leaf_value(&self, leaf_id: usize) -> f64 {
        match &self.nodes[self.leaf_nodes[leaf_id]] {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!("leaf_nodes indexes leaves only"),
        }
    }

    /// Leaf values ordered by leaf id.
    pub fn leaf_values(&self) -> Vec<f64> {
        (0..self.leaf_count).map(|id| self.leaf_value(id)).collect()
    }

    /// Replaces all leaf values (by leaf id order).
    pub fn set_leaf_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.leaf_count {
            return Err(Error::DimensionMismatch(format!(
                "tree has {} leaves but {} values were supplied",
                self.leaf_count,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("leaf values".into()));
        }
        for (leaf_id, &value) in values.iter().enumerate() {
            let node_idx = self.leaf_nodes[leaf_id];
            if let Node::Leaf { value: slot, .. } = &mut self.nodes[node_idx] {
                *slot = value;
            }
        }
        Ok(())
    }

    /// Leaf assignment for every frame row; errors carry the row index and
    /// offending feature name.
    pub fn assign_leaves(&self, frame: &FeatureFrame) -> Result<Vec<usize>> {
        (0..frame.n_rows())
            .map(|row| {
                self.assign_leaf(frame.row(row)).map_err(|feature| {
                    Error::UnroutableRow {
                        row,
                        feature: frame.specs()[feature].name.clone(),
                    }
                })
            })
            .collect()
    }
}

/// How per-tree outputs combine into an ensemble prediction.
#[derive(Clone, Debug, PartialEq)]
pub enum Aggregation {
    /// Arithmetic mean over trees (random forest).
    Mean,
    /// `base_score + learning_rate * sum(trees)` (gradient boosting).
    Additive { base_score: f64, learning_rate: f64 },
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    schema: Vec<FeatureSpec>,
    aggregation: Aggregation,
    trees: Vec<DecisionTree>,
}

impl Ensemble {
    pub fn new(
        schema: Vec<FeatureSpec>,
        aggregation: Aggregation,
        trees: Vec<DecisionTree>,
    ) -> Result<Ensemble> {
        if trees.is_empty() {
            return Err(Error::ModelFormat("ensemble has no trees".into()));
        }
        if let Aggregation::Additive {
            base_score,
            learning_rate,
        } = aggregation
        {
            if !base_score.is_finite() || !learning_rate.is_finite() {
                return Err(Error::ModelFormat(
                    "additive aggregation parameters must be finite".into(),
                ));
            }
        }
        Ok(Ensemble {
            schema,
            aggregation,
            trees,
        })
    }

    pub fn schema(&self) -> &[FeatureSpec] {
        &self.schema
    }

    pub fn aggregation(&self) -> &Aggregation {
        &self.aggregation
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub(crate) fn trees_mut(&mut self) -> &mut [DecisionTree] {
        &mut self.trees
    }

    /// Combines per-tree leaf values into the ensemble output.
    pub fn aggregate(&self, tree_outputs: impl Iterator<Item = f64>) -> f64 {
        match self.aggregation {
            Aggregation::Mean => {
                let (sum, n) = tree_outputs.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                sum / n as f64
            }
            Aggregation::Additive {
                base_score,
                learning_rate,
            } => base_score + learning_rate * tree_outputs.sum::<f64>(),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> std::result::Result<f64, usize> {
        let mut outputs = Vec::with_capacity(self.trees.len());
        for tree in &self.trees {
            outputs.push(tree.predict_row(row)?);
        }
        Ok(self.aggregate(outputs.into_iter()))
    }

    /// Predictions for every row of a bound frame.
    pub fn predict_frame(&self, frame: &FeatureFrame) -> Result<Vec<f64>> {
        (0..frame.n_rows())
            .map(|row| {
                self.predict_row(frame.row(row))
                    .map_err(|feature| Error::UnroutableRow {
                        row,
                        feature: frame.specs()[feature].name.clone(),
                    })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_leaf_tree(left_value: f64, right_value: f64) -> DecisionTree {
        DecisionTree::from_nodes(vec![
            Node::Split {
                feature: 0,
                threshold: 0.5,
                left: 1,
                right: 2,
            },
            Node::Leaf {
                leaf_id: 0,
                value: left_value,
            },
            Node::Leaf {
                leaf_id: 1,
                value: right_value,
            },
        ])
        .unwrap()
    }

    #[test]
    fn routing_ties_go_left() {
        let tree = two_leaf_tree(1.0, 2.0);
        assert_eq!(tree.assign_leaf(&[0.5]), Ok(0));
        assert_eq!(tree.assign_leaf(&[0.500001]), Ok(1));
        assert_eq!(tree.assign_leaf(&[f64::NAN]), Err(0));
    }

    #[test]
    fn leaf_values_roundtrip() {
        let mut tree = two_leaf_tree(1.0, 2.0);
        assert_eq!(tree.leaf_values(), vec![1.0, 2.0]);
        tree.set_leaf_values(&[5.0, 6.0]).unwrap();
        assert_eq!(tree.leaf_values(), vec![5.0, 6.0]);
        assert!(tree.set_leaf_values(&[1.0]).is_err());
    }

    #[test]
    fn invalid_arenas_are_rejected() {
        // both children point at the same leaf
        let shared = DecisionTree::from_nodes(vec![
            Node::Split {
                feature: 0,
                threshold: 0.0,
                left: 1,
                right: 1,
            },
            Node::Leaf {
                leaf_id: 0,
                value: 1.0,
            },
        ]);
        assert!(shared.is_err());

        // leaf ids not dense
        let sparse = DecisionTree::from_nodes(vec![
            Node::Split {
                feature: 0,
                threshold: 0.0,
                left: 1,
                right: 2,
            },
            Node::Leaf {
                leaf_id: 0,
                value: 1.0,
            },
            Node::Leaf {
                leaf_id: 2,
                value: 2.0,
            },
        ]);
        assert!(sparse.is_err());

        // unreachable node
        let unreachable = DecisionTree::from_nodes(vec![
            Node::Leaf {
                leaf_id: 0,
                value: 1.0,
            },
            Node::Leaf {
                leaf_id: 1,
                value: 2.0,
            },
        ]);
        assert!(unreachable.is_err());
    }

    #[test]
    fn ensemble_aggregation() {
        let t1 = two_leaf_tree(0.0, 10.0);
        let t2 = two_leaf_tree(2.0, 4.0);
        let mean = Ensemble::new(Vec::new(), Aggregation::Mean, vec![t1.clone(), t2.clone()])
            .unwrap();
        assert_eq!(mean.predict_row(&[0.0]), Ok(1.0));
        assert_eq!(mean.predict_row(&[1.0]), Ok(7.0));

        let boosted = Ensemble::new(
            Vec::new(),
            Aggregation::Additive {
                base_score: 1.0,
                learning_rate: 0.5,
            },
            vec![t1, t2],
        )
        .unwrap();
        assert_eq!(boosted.predict_row(&[0.0]), Ok(2.0));
        assert_eq!(boosted.predict_row(&[1.0]), Ok(8.0));
    }
}
