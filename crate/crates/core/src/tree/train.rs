//! Baseline trainers: greedy variance-reduction CART, bootstrap forests, and
//! squared-loss gradient boosting. All randomness flows from explicit seeds
//! through ChaCha8, so training is reproducible across runs and platforms.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::FeatureFrame;
use crate::error::{Error, Result};
use crate::tree::{Aggregation, DecisionTree, Ensemble, Node};

#[derive(Clone, Debug)]
pub struct CartParams {
    pub max_depth: usize,
    /// Minimum number of training rows in each leaf.
    pub min_leaf: usize,
    /// Features considered per split; `None` means all.
    pub feature_subsample: Option<usize>,
    pub rng_seed: u64,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: 6,
            min_leaf: 1,
            feature_subsample: None,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub cart: CartParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 50,
            bootstrap: true,
            cart: CartParams::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub cart: CartParams,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_rounds: 50,
            learning_rate: 0.1,
            cart: CartParams {
                max_depth: 3,
                ..CartParams::default()
            },
        }
    }
}

fn check_training_inputs(features: &FeatureFrame, targets: &[f64]) -> Result<()> {
    if features.n_rows() == 0 {
        return Err(Error::Data("training requires at least one row".into()));
    }
    if targets.len() != features.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows vs {} targets",
            features.n_rows(),
            targets.len()
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("training targets".into()));
    }
    features.ensure_complete()
}

struct Builder<'a> {
    features: &'a FeatureFrame,
    targets: &'a [f64],
    params: &'a CartParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    next_leaf: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    /// rows going left after the node's rows are sorted by the split feature
    n_left: usize,
}

impl<'a> Builder<'a> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let sum: f64 = rows.iter().map(|&r| self.targets[r]).sum();
        let value = sum / rows.len() as f64;
        let leaf_id = self.next_leaf;
        self.next_leaf += 1;
        self.nodes.push(Node::Leaf { leaf_id, value });
        self.nodes.len() - 1
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let total = self.features.n_features();
        match self.params.feature_subsample {
            Some(k) if k < total => {
                let mut picked = rand::seq::index::sample(&mut self.rng, total, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..total).collect(),
        }
    }

    /// Exact greedy search: for each candidate feature, sort the node's rows
    /// by value and scan boundary positions between distinct values,
    /// maximizing the SSE reduction. Ties keep the first (lowest feature
    /// index, lowest threshold), which makes training deterministic.
    fn best_split(&mut self, rows: &mut Vec<usize>) -> Option<BestSplit> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let total_sum: f64 = rows.iter().map(|&r| self.targets[r]).sum();
        let parent_score = total_sum * total_sum / n as f64;

        let mut best: Option<BestSplit> = None;
        for feature in self.candidate_features() {
            rows.sort_unstable_by(|&a, &b| {
                let va = self.features.row(a)[feature];
                let vb = self.features.row(b)[feature];
                va.partial_cmp(&vb).unwrap().then(a.cmp(&b))
            });

            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += self.targets[rows[i]];
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < min_leaf {
                    continue;
                }
                if n_right < min_leaf {
                    break;
                }
                let here = self.features.row(rows[i])[feature];
                let next = self.features.row(rows[i + 1])[feature];
                if here == next {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - parent_score;
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    let mut threshold = 0.5 * (here + next);
                    // guard against midpoints that round up to `next`
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                        n_left,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: &mut Vec<usize>, depth: usize) -> usize {
        if depth >= self.params.max_depth {
            return self.leaf(rows);
        }
        let split = match self.best_split(rows) {
            Some(s) => s,
            None => return self.leaf(rows),
        };
        // re-sort by the winning feature so the prefix is exactly the left side
        rows.sort_unstable_by(|&a, &b| {
            let va = self.features.row(a)[split.feature];
            let vb = self.features.row(b)[split.feature];
            va.partial_cmp(&vb).unwrap().then(a.cmp(&b))
        });
        let mut left_rows = rows[..split.n_left].to_vec();
        let mut right_rows = rows[split.n_left..].to_vec();

        let node_idx = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let left = self.build(&mut left_rows, depth + 1);
        let right = self.build(&mut right_rows, depth + 1);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[node_idx]
        {
            *l = left;
            *r = right;
        }
        node_idx
    }
}

/// Trains a single regression tree on the given rows (all rows if `None`).
fn train_cart_on(
    features: &FeatureFrame,
    targets: &[f64],
    params: &CartParams,
    rows: Option<Vec<usize>>,
    rng: ChaCha8Rng,
) -> Result<DecisionTree> {
    let mut rows = rows.unwrap_or_else(|| (0..features.n_rows()).collect());
    if rows.is_empty() {
        return Err(Error::Data("training requires at least one row".into()));
    }
    let mut builder = Builder {
        features,
        targets,
        params,
        rng,
        nodes: Vec::new(),
        next_leaf: 0,
    };
    builder.build(&mut rows, 0);
    DecisionTree::from_nodes(builder.nodes)
}

/// Greedy variance-reduction CART. Leaf values are per-leaf target means;
/// every leaf holds at least `min_leaf` training rows.
pub fn train_cart(
    features: &FeatureFrame,
    targets: &[f64],
    params: &CartParams,
) -> Result<DecisionTree> {
    check_training_inputs(features, targets)?;
    let rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    train_cart_on(features, targets, params, None, rng)
}

/// Mean-aggregated forest over bootstrap resamples. Per-tree seeds derive from
/// the master seed, so a fixed seed reproduces the forest exactly.
pub fn train_forest(
    features: &FeatureFrame,
    targets: &[f64],
    params: &ForestParams,
) -> Result<Ensemble> {
    check_training_inputs(features, targets)?;
    if params.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(params.cart.rng_seed);
    let tree_seeds: Vec<u64> = (0..params.n_trees).map(|_| master.next_u64()).collect();

    let n = features.n_rows();
    let mut trees = Vec::with_capacity(params.n_trees);
    for seed in tree_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = if params.bootstrap {
            Some((0..n).map(|_| rng.gen_range(0..n)).collect::<Vec<_>>())
        } else {
            None
        };
        trees.push(train_cart_on(features, targets, &params.cart, rows, rng)?);
    }
    Ensemble::new(features.specs().to_vec(), Aggregation::Mean, trees)
}

/// Squared-loss gradient boosting: `base_score` is the target mean and each
/// round fits the current residuals. Training RMSE is non-increasing per
/// round for learning rates in (0, 2].
pub fn train_boosted(
    features: &FeatureFrame,
    targets: &[f64],
    params: &BoostParams,
) -> Result<Ensemble> {
    check_training_inputs(features, targets)?;
    if params.n_rounds == 0 {
        return Err(Error::InvalidArgument("n_rounds must be at least 1".into()));
    }
    if !(params.learning_rate > 0.0) || !params.learning_rate.is_finite() {
        return Err(Error::InvalidArgument(
            "learning_rate must be positive and finite".into(),
        ));
    }

    let n = features.n_rows();
    let base_score: f64 = targets.iter().sum::<f64>() / n as f64;
    let mut residuals: Vec<f64> = targets.iter().map(|t| t - base_score).collect();

    let mut master = ChaCha8Rng::seed_from_u64(params.cart.rng_seed);
    let round_seeds: Vec<u64> = (0..params.n_rounds).map(|_| master.next_u64()).collect();

    let mut trees = Vec::with_capacity(params.n_rounds);
    for seed in round_seeds {
        let rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = train_cart_on(features, &residuals, &params.cart, None, rng)?;
        for row in 0..n {
            let pred = tree
                .predict_row(features.row(row))
                .expect("training features are complete");
            residuals[row] -= params.learning_rate * pred;
        }
        trees.push(tree);
    }
    Ensemble::new(
        features.specs().to_vec(),
        Aggregation::Additive {
            base_score,
            learning_rate: params.learning_rate,
        },
        trees,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnKind, FeatureSpec};

    fn frame(rows: &[&[f64]]) -> FeatureFrame {
        let specs: Vec<FeatureSpec> = (0..rows[0].len())
            .map(|i| FeatureSpec {
                name: format!("f{i}"),
                kind: ColumnKind::Numeric,
                categories: None,
            })
            .collect();
        frame_with_specs(rows, specs)
    }

    fn frame_with_specs(rows: &[&[f64]], specs: Vec<FeatureSpec>) -> FeatureFrame {
        use crate::data::{ColumnSpec, Dataset, Role, Schema};
        let schema = Schema {
            columns: specs
                .iter()
                .map(|s| ColumnSpec {
                    name: s.name.clone(),
                    kind: s.kind,
                    role: Role::Feature,
                })
                .collect(),
        };
        let cells: Vec<Option<f64>> = rows.iter().flat_map(|r| r.iter().map(|&v| Some(v))).collect();
        let dicts = vec![Vec::new(); specs.len()];
        let ds = Dataset::from_parts(schema, cells, dicts).unwrap();
        FeatureFrame::from_dataset(&ds).unwrap()
    }

    #[test]
    fn two_point_perfect_fit() {
        let f = frame(&[&[0.0], &[1.0]]);
        let tree = train_cart(
            &f,
            &[0.0, 10.0],
            &CartParams {
                max_depth: 1,
                ..CartParams::default()
            },
        )
        .unwrap();
        assert_eq!(tree.leaf_count(), 2);
        assert_eq!(tree.predict_row(&[0.0]), Ok(0.0));
        assert_eq!(tree.predict_row(&[1.0]), Ok(10.0));
    }

    #[test]
    fn constant_targets_give_stump() {
        let f = frame(&[&[0.0], &[1.0], &[2.0]]);
        let tree = train_cart(&f, &[4.0, 4.0, 4.0], &CartParams::default()).unwrap();
        assert_eq!(tree.leaf_count(), 1);
        assert_eq!(tree.predict_row(&[7.0]), Ok(4.0));
    }

    #[test]
    fn leaf_values_are_leaf_means() {
        // 100 random-ish rows; verify per-leaf means recomputed independently.
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut state = 123456789u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for _ in 0..100 {
            rows.push([next() * 10.0, next() * 5.0]);
            targets.push(next() * 100.0);
        }
        let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let f = frame(&row_refs);
        let tree = train_cart(
            &f,
            &targets,
            &CartParams {
                max_depth: 3,
                ..CartParams::default()
            },
        )
        .unwrap();

        let mut sums = vec![0.0; tree.leaf_count()];
        let mut counts = vec![0usize; tree.leaf_count()];
        for (i, row) in rows.iter().enumerate() {
            let leaf = tree.assign_leaf(row).unwrap();
            sums[leaf] += targets[i];
            counts[leaf] += 1;
        }
        for leaf in 0..tree.leaf_count() {
            assert!(counts[leaf] > 0, "every leaf must hold training rows");
            let mean = sums[leaf] / counts[leaf] as f64;
            assert!(
                (tree.leaf_value(leaf) - mean).abs() < 1e-9,
                "leaf {leaf}: value {} vs recomputed mean {mean}",
                tree.leaf_value(leaf)
            );
        }
    }

    #[test]
    fn min_leaf_is_respected() {
        let f = frame(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let targets = [0.0, 1.0, 10.0, 11.0, 12.0];
        let tree = train_cart(
            &f,
            &targets,
            &CartParams {
                max_depth: 8,
                min_leaf: 2,
                ..CartParams::default()
            },
        )
        .unwrap();
        let mut counts = vec![0usize; tree.leaf_count()];
        for row in 0..5 {
            counts[tree.assign_leaf(f.row(row)).unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c >= 2));
    }

    #[test]
    fn forest_is_seed_reproducible() {
        let rows: Vec<[f64; 2]> = (0..40).map(|i| [i as f64, (i * 7 % 13) as f64]).collect();
        let targets: Vec<f64> = (0..40).map(|i| (i as f64).sin() * 10.0).collect();
        let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let f = frame(&row_refs);
        let params = ForestParams {
            n_trees: 5,
            bootstrap: true,
            cart: CartParams {
                max_depth: 4,
                rng_seed: 7,
                ..CartParams::default()
            },
        };
        let a = train_forest(&f, &targets, &params).unwrap();
        let b = train_forest(&f, &targets, &params).unwrap();
        for row in &rows {
            assert_eq!(a.predict_row(row), b.predict_row(row));
        }
    }

    #[test]
    fn boosting_training_rmse_non_increasing() {
        let rows: Vec<[f64; 1]> = (0..60).map(|i| [i as f64 / 10.0]).collect();
        let targets: Vec<f64> = rows.iter().map(|r| (r[0] * 1.3).cos() * 5.0 + r[0]).collect();
        let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let f = frame(&row_refs);
        let params = BoostParams {
            n_rounds: 10,
            learning_rate: 0.4,
            cart: CartParams {
                max_depth: 2,
                rng_seed: 3,
                ..CartParams::default()
            },
        };
        let model = train_boosted(&f, &targets, &params).unwrap();

        // replay the additive model round by round
        let (base, lr) = match model.aggregation() {
            Aggregation::Additive {
                base_score,
                learning_rate,
            } => (*base_score, *learning_rate),
            _ => unreachable!(),
        };
        let mut preds = vec![base; rows.len()];
        let mut last = crate::data::rmse(&preds, &targets).unwrap();
        for tree in model.trees() {
            for (i, row) in rows.iter().enumerate() {
                preds[i] += lr * tree.predict_row(row).unwrap();
            }
            let now = crate::data::rmse(&preds, &targets).unwrap();
            assert!(now <= last + 1e-9, "rmse rose from {last} to {now}");
            last = now;
        }
    }

    #[test]
    fn rejects_bad_training_inputs() {
        let f = frame(&[&[0.0], &[1.0]]);
        assert!(matches!(
            train_cart(&f, &[1.0], &CartParams::default()),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            train_cart(&f, &[1.0, f64::INFINITY], &CartParams::default()),
            Err(Error::NonFinite(_))
        ));
    }
}
