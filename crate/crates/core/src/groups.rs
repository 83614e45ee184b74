//! Subgroup predicates and constraint-matrix assembly.
//!
//! A group is a conjunction of atomic clauses over dataset columns; a
//! constraint demands equal expected model output between two groups. On a
//! tree with `L` leaves, constraint `c` becomes the column
//! `z_c[j] = p̂_A(leaf j) − p̂_B(leaf j)` of empirical leaf-occupancy
//! differences, so that `z_cᵀ v` is exactly the difference of group-mean
//! predictions for any leaf-value vector `v`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::data::{ColumnKind, Dataset, FeatureFrame};
use crate::error::{Error, Result};
use crate::tree::DecisionTree;

/// Groups smaller than this trigger a reliability warning: tiny subgroups
/// yield empirical distributions that approximate their population poorly.
pub const SMALL_GROUP_SUPPORT: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub enum CellValue {
    Text(String),
    Number(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClauseTest {
    Equals(CellValue),
    NotEquals(CellValue),
    InSet(Vec<CellValue>),
    NumericRange { min: Option<f64>, max: Option<f64> },
}

/// One atomic predicate over a single column.
#[derive(Clone, Debug, PartialEq)]
pub struct Clause {
    pub column: String,
    pub test: ClauseTest,
}

/// A named subpopulation: the conjunction of all clauses. No clauses means
/// every row (the vacuous conjunction).
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSpec {
    pub name: String,
    pub clauses: Vec<Clause>,
}

/// Mean-equality constraint between two named groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub a: String,
    pub b: String,
}

/// Groups plus the ordered list of constraints between them.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    pub groups: Vec<GroupSpec>,
    pub constraints: Vec<Constraint>,
}

// ---------------------------------------------------------------------------
// JSON specification file
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct SpecFile {
    #[serde(default)]
    groups: Vec<GroupJson>,
    #[serde(default)]
    constraints: Vec<PairJson>,
    #[serde(default)]
    equalize: Vec<Vec<String>>,
}

#[derive(Deserialize)]
struct GroupJson {
    name: String,
    #[serde(default)]
    all: Vec<ClauseJson>,
}

#[derive(Deserialize)]
struct ClauseJson {
    col: String,
    op: String,
    #[serde(default)]
    value: serde_json::Value,
}

#[derive(Deserialize)]
struct PairJson {
    a: String,
    b: String,
}

fn scalar_value(v: &serde_json::Value, context: &str) -> Result<CellValue> {
    match v {
        serde_json::Value::String(s) => Ok(CellValue::Text(s.clone())),
        serde_json::Value::Number(n) => n
            .as_f64()
            .map(CellValue::Number)
            .ok_or_else(|| Error::ConstraintSpec(format!("{context}: number out of range"))),
        other => Err(Error::ConstraintSpec(format!(
            "{context}: expected a string or number, got {other}"
        ))),
    }
}

fn convert_clause(json: &ClauseJson) -> Result<Clause> {
    let context = format!("clause on column '{}'", json.col);
    let test = match json.op.as_str() {
        "equals" => ClauseTest::Equals(scalar_value(&json.value, &context)?),
        "not-equals" => ClauseTest::NotEquals(scalar_value(&json.value, &context)?),
        "in-set" => {
            let items = json.value.as_array().ok_or_else(|| {
                Error::ConstraintSpec(format!("{context}: in-set requires an array value"))
            })?;
            if items.is_empty() {
                return Err(Error::ConstraintSpec(format!(
                    "{context}: in-set requires a nonempty array"
                )));
            }
            ClauseTest::InSet(
                items
                    .iter()
                    .map(|v| scalar_value(v, &context))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        "numeric-range" => {
            let obj = json.value.as_object().ok_or_else(|| {
                Error::ConstraintSpec(format!(
                    "{context}: numeric-range requires an object with min and/or max"
                ))
            })?;
            let bound = |key: &str| -> Result<Option<f64>> {
                match obj.get(key) {
                    None => Ok(None),
                    Some(v) => v.as_f64().map(Some).ok_or_else(|| {
                        Error::ConstraintSpec(format!("{context}: {key} must be numeric"))
                    }),
                }
            };
            let (min, max) = (bound("min")?, bound("max")?);
            if min.is_none() && max.is_none() {
                return Err(Error::ConstraintSpec(format!(
                    "{context}: numeric-range requires min and/or max"
                )));
            }
            ClauseTest::NumericRange { min, max }
        }
        other => {
            return Err(Error::ConstraintSpec(format!(
                "{context}: unknown op '{other}' (expected equals, not-equals, in-set, numeric-range)"
            )))
        }
    };
    Ok(Clause {
        column: json.col.clone(),
        test,
    })
}

impl ConstraintSet {
    /// Parses the JSON constraint-specification format:
    ///
    /// ```json
    /// {
    ///   "groups": [{"name": "female", "all": [{"col": "gender", "op": "equals", "value": "F"}]}],
    ///   "constraints": [{"a": "female", "b": "male"}],
    ///   "equalize": [["g1", "g2", "g3"]]
    /// }
    /// ```
    ///
    /// Each `equalize` list of k groups expands to k−1 constraints pairing
    /// every later group against the first, appended after the explicit
    /// constraints in listed order. Exact duplicate pairs are dropped so a
    /// constraint listed twice behaves identically to listing it once.
    pub fn from_json_str(json: &str) -> Result<ConstraintSet> {
        let file: SpecFile = serde_json::from_str(json)?;

        let mut groups = Vec::with_capacity(file.groups.len());
        for g in &file.groups {
            if groups.iter().any(|existing: &GroupSpec| existing.name == g.name) {
                return Err(Error::ConstraintSpec(format!(
                    "group '{}' declared twice",
                    g.name
                )));
            }
            groups.push(GroupSpec {
                name: g.name.clone(),
                clauses: g.all.iter().map(convert_clause).collect::<Result<_>>()?,
            });
        }

        let mut constraints: Vec<Constraint> = Vec::new();
        let mut push_pair = |a: &str, b: &str| -> Result<()> {
            if a == b {
                return Err(Error::ConstraintSpec(format!(
                    "constraint pairs group '{a}' with itself"
                )));
            }
            for name in [a, b] {
                if !groups.iter().any(|g| g.name == name) {
                    return Err(Error::ConstraintSpec(format!(
                        "constraint references undefined group '{name}'"
                    )));
                }
            }
            let pair = Constraint {
                a: a.to_string(),
                b: b.to_string(),
            };
            if !constraints.contains(&pair) {
                constraints.push(pair);
            }
            Ok(())
        };

        for pair in &file.constraints {
            push_pair(&pair.a, &pair.b)?;
        }
        for list in &file.equalize {
            if list.len() < 2 {
                return Err(Error::ConstraintSpec(
                    "equalize lists need at least two groups".into(),
                ));
            }
            for other in &list[1..] {
                push_pair(&list[0], other)?;
            }
        }

        Ok(ConstraintSet {
            groups,
            constraints,
        })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<ConstraintSet> {
        let text = std::fs::read_to_string(path)?;
        ConstraintSet::from_json_str(&text)
    }

    pub fn group(&self, name: &str) -> Option<&GroupSpec> {
        self.groups.iter().find(|g| g.name == name)
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Rows matching a group predicate, plus how many rows were excluded because
/// a referenced column was missing.
#[derive(Clone, Debug)]
pub struct GroupRows {
    pub indices: Vec<usize>,
    pub missing_excluded: usize,
}

fn check_clause_types(clause: &Clause, dataset: &Dataset) -> Result<usize> {
    let col = dataset
        .schema()
        .column_index(&clause.column)
        .ok_or_else(|| Error::UnknownColumn(clause.column.clone()))?;
    let kind = dataset.schema().columns[col].kind;
    let scalar_ok = |v: &CellValue| -> bool {
        matches!(
            (kind, v),
            (ColumnKind::Numeric, CellValue::Number(_))
                | (ColumnKind::Categorical, CellValue::Text(_))
        )
    };
    let ok = match &clause.test {
        ClauseTest::Equals(v) | ClauseTest::NotEquals(v) => scalar_ok(v),
        ClauseTest::InSet(vs) => vs.iter().all(scalar_ok),
        ClauseTest::NumericRange { .. } => kind == ColumnKind::Numeric,
    };
    if !ok {
        return Err(Error::Schema(format!(
            "clause on {kind} column '{}' has a value of the wrong type",
            clause.column
        )));
    }
    Ok(col)
}

fn cell_matches(test: &ClauseTest, cell: f64, kind: ColumnKind, dataset: &Dataset, col: usize) -> bool {
    let scalar_eq = |v: &CellValue| -> bool {
        match (kind, v) {
            (ColumnKind::Numeric, CellValue::Number(n)) => cell == *n,
            (ColumnKind::Categorical, CellValue::Text(t)) => {
                dataset.code_for(col, t) == Some(cell as usize)
            }
            _ => false,
        }
    };
    match test {
        ClauseTest::Equals(v) => scalar_eq(v),
        ClauseTest::NotEquals(v) => !scalar_eq(v),
        ClauseTest::InSet(vs) => vs.iter().any(scalar_eq),
        ClauseTest::NumericRange { min, max } => {
            min.map_or(true, |m| cell >= m) && max.map_or(true, |m| cell <= m)
        }
    }
}

/// Rows satisfying every clause of the group. Rows with a missing value in
/// any referenced column are excluded and counted.
pub fn evaluate_group(group: &GroupSpec, dataset: &Dataset) -> Result<GroupRows> {
    let cols = group
        .clauses
        .iter()
        .map(|c| check_clause_types(c, dataset))
        .collect::<Result<Vec<_>>>()?;

    let mut indices = Vec::new();
    let mut missing_excluded = 0usize;
    'rows: for row in 0..dataset.n_rows() {
        for (clause, &col) in group.clauses.iter().zip(&cols) {
            let kind = dataset.schema().columns[col].kind;
            match dataset.get(row, col) {
                None => {
                    missing_excluded += 1;
                    continue 'rows;
                }
                Some(cell) => {
                    if !cell_matches(&clause.test, cell, kind, dataset, col) {
                        continue 'rows;
                    }
                }
            }
        }
        indices.push(row);
    }
    Ok(GroupRows {
        indices,
        missing_excluded,
    })
}

/// Empirical leaf-occupancy distribution of a set of rows.
#[derive(Clone, Debug)]
pub struct LeafDistribution {
    pub tree_id: usize,
    /// Probability per leaf id; all zeros when the group is empty.
    pub probabilities: Vec<f64>,
    pub support_count: usize,
}

/// Routes `rows` through the tree and normalizes leaf counts. Empty `rows`
/// produce an all-zero vector with support 0; the caller decides severity.
pub fn leaf_distribution(
    tree: &DecisionTree,
    tree_id: usize,
    frame: &FeatureFrame,
    rows: &[usize],
) -> Result<LeafDistribution> {
    let mut counts = vec![0usize; tree.leaf_count()];
    for &row in rows {
        let leaf = tree
            .assign_leaf(frame.row(row))
            .map_err(|feature| Error::UnroutableRow {
                row,
                feature: frame.specs()[feature].name.clone(),
            })?;
        counts[leaf] += 1;
    }
    Ok(distribution_from_counts(tree_id, &counts, rows.len()))
}

/// Same as [`leaf_distribution`] but reusing precomputed leaf assignments.
pub fn leaf_distribution_from_assignments(
    tree_id: usize,
    leaf_count: usize,
    assignments: &[usize],
    rows: &[usize],
) -> LeafDistribution {
    let mut counts = vec![0usize; leaf_count];
    for &row in rows {
        counts[assignments[row]] += 1;
    }
    distribution_from_counts(tree_id, &counts, rows.len())
}

fn distribution_from_counts(tree_id: usize, counts: &[usize], support: usize) -> LeafDistribution {
    let probabilities = if support == 0 {
        vec![0.0; counts.len()]
    } else {
        counts
            .iter()
            .map(|&c| c as f64 / support as f64)
            .collect()
    };
    LeafDistribution {
        tree_id,
        probabilities,
        support_count: support,
    }
}

/// Options for constraint-matrix assembly.
#[derive(Clone, Debug, Default)]
pub struct ZBuildOptions {
    /// Downgrade empty-group errors to a warning plus a zero column.
    pub allow_empty_groups: bool,
}

/// The assembled L×C constraint matrix plus bookkeeping.
#[derive(Clone, Debug)]
pub struct ZBuild {
    pub z: DMatrix<f64>,
    /// (group name, support) in group-declaration order for groups used here.
    pub group_supports: Vec<(String, usize)>,
    pub warnings: Vec<String>,
}

/// Builds the constraint matrix for one tree: column `c` is the difference of
/// the two groups' empirical leaf distributions. Columns sum to zero whenever
/// both groups are nonempty.
pub fn build_constraint_matrix(
    tree: &DecisionTree,
    tree_id: usize,
    frame: &FeatureFrame,
    dataset: &Dataset,
    cs: &ConstraintSet,
    options: &ZBuildOptions,
) -> Result<ZBuild> {
    let assignments = tree.assign_leaves(frame)?;
    let groups = evaluate_groups(cs, dataset)?;
    let (z, warnings) = assemble_z(
        tree_id,
        tree.leaf_count(),
        &assignments,
        &groups,
        cs,
        options,
    )?;
    Ok(ZBuild {
        z,
        group_supports: cs
            .groups
            .iter()
            .map(|g| (g.name.clone(), groups[&g.name].indices.len()))
            .collect(),
        warnings,
    })
}

pub(crate) type GroupRowsByName = std::collections::BTreeMap<String, GroupRows>;

/// Evaluates every group of the set once against the dataset.
pub(crate) fn evaluate_groups(cs: &ConstraintSet, dataset: &Dataset) -> Result<GroupRowsByName> {
    let mut map = GroupRowsByName::new();
    for group in &cs.groups {
        map.insert(group.name.clone(), evaluate_group(group, dataset)?);
    }
    Ok(map)
}

/// Assembles Z from precomputed assignments and group rows; shared between
/// the public builder and the ensemble perturbation path.
pub(crate) fn assemble_z(
    tree_id: usize,
    leaf_count: usize,
    assignments: &[usize],
    groups: &GroupRowsByName,
    cs: &ConstraintSet,
    options: &ZBuildOptions,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut warnings = Vec::new();
    for group in &cs.groups {
        let rows = &groups[&group.name];
        if rows.missing_excluded > 0 {
            warnings.push(format!(
                "group '{}': {} rows excluded due to missing values in predicate columns",
                group.name, rows.missing_excluded
            ));
        }
        let support = rows.indices.len();
        if support == 0 {
            if options.allow_empty_groups {
                warnings.push(format!(
                    "group '{}' is empty on the binding dataset; its constraints are inert",
                    group.name
                ));
            } else if cs
                .constraints
                .iter()
                .any(|c| c.a == group.name || c.b == group.name)
            {
                return Err(Error::EmptyGroup(group.name.clone()));
            }
        } else if support < SMALL_GROUP_SUPPORT {
            warnings.push(format!(
                "group '{}' has support {} (< {}): its empirical distribution may be unreliable",
                group.name, support, SMALL_GROUP_SUPPORT
            ));
        }
    }

    let mut z = DMatrix::zeros(leaf_count, cs.constraints.len());
    for (c, constraint) in cs.constraints.iter().enumerate() {
        let da = leaf_distribution_from_assignments(
            tree_id,
            leaf_count,
            assignments,
            &groups[&constraint.a].indices,
        );
        let db = leaf_distribution_from_assignments(
            tree_id,
            leaf_count,
            assignments,
            &groups[&constraint.b].indices,
        );
        for j in 0..leaf_count {
            z[(j, c)] = da.probabilities[j] - db.probabilities[j];
        }
    }
    Ok((z, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnSpec, Role, Schema};
    use crate::tree::Node;

    fn dataset_gender_vet() -> Dataset {
        let schema = Schema {
            columns: vec![
                ColumnSpec {
                    name: "gender".into(),
                    kind: ColumnKind::Categorical,
                    role: Role::GroupOnly,
                },
                ColumnSpec {
                    name: "vet".into(),
                    kind: ColumnKind::Categorical,
                    role: Role::GroupOnly,
                },
                ColumnSpec {
                    name: "x".into(),
                    kind: ColumnKind::Numeric,
                    role: Role::Feature,
                },
            ],
        };
        // rows: (F,t,0.0), (F,f,1.0), (M,t,2.0), (M,f,3.0)
        let cells = vec![
            Some(0.0),
            Some(0.0),
            Some(0.0),
            Some(0.0),
            Some(1.0),
            Some(1.0),
            Some(1.0),
            Some(0.0),
            Some(2.0),
            Some(1.0),
            Some(1.0),
            Some(3.0),
        ];
        Dataset::from_parts(
            schema,
            cells,
            vec![
                vec!["F".into(), "M".into()],
                vec!["t".into(), "f".into()],
                Vec::new(),
            ],
        )
        .unwrap()
    }

    fn group(name: &str, clauses: Vec<Clause>) -> GroupSpec {
        GroupSpec {
            name: name.into(),
            clauses,
        }
    }

    fn eq_clause(column: &str, value: &str) -> Clause {
        Clause {
            column: column.into(),
            test: ClauseTest::Equals(CellValue::Text(value.into())),
        }
    }

    #[test]
    fn evaluates_simple_predicates() {
        let ds = dataset_gender_vet();
        let females = evaluate_group(&group("f", vec![eq_clause("gender", "F")]), &ds).unwrap();
        assert_eq!(females.indices, vec![0, 1]);
        assert_eq!(females.missing_excluded, 0);

        let female_vets = evaluate_group(
            &group(
                "fv",
                vec![eq_clause("gender", "F"), eq_clause("vet", "t")],
            ),
            &ds,
        )
        .unwrap();
        assert_eq!(female_vets.indices, vec![0]);

        let everyone = evaluate_group(&group("all", vec![]), &ds).unwrap();
        assert_eq!(everyone.indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn unknown_column_is_named() {
        let ds = dataset_gender_vet();
        let err = evaluate_group(&group("g", vec![eq_clause("nope", "F")]), &ds).unwrap_err();
        assert!(matches!(err, Error::UnknownColumn(c) if c == "nope"));
    }

    #[test]
    fn missing_values_exclude_rows() {
        let schema = Schema {
            columns: vec![ColumnSpec {
                name: "g".into(),
                kind: ColumnKind::Categorical,
                role: Role::GroupOnly,
            }],
        };
        let ds = Dataset::from_parts(
            schema,
            vec![Some(0.0), None, Some(0.0)],
            vec![vec!["a".into()]],
        )
        .unwrap();
        let rows = evaluate_group(&group("g", vec![eq_clause("g", "a")]), &ds).unwrap();
        assert_eq!(rows.indices, vec![0, 2]);
        assert_eq!(rows.missing_excluded, 1);

        // not-equals also excludes missing rows rather than matching them
        let rows = evaluate_group(
            &group(
                "g",
                vec![Clause {
                    column: "g".into(),
                    test: ClauseTest::NotEquals(CellValue::Text("b".into())),
                }],
            ),
            &ds,
        )
        .unwrap();
        assert_eq!(rows.indices, vec![0, 2]);
        assert_eq!(rows.missing_excluded, 1);
    }

    #[test]
    fn numeric_clauses() {
        let schema = Schema {
            columns: vec![ColumnSpec {
                name: "v".into(),
                kind: ColumnKind::Numeric,
                role: Role::Feature,
            }],
        };
        let ds = Dataset::from_parts(
            schema,
            vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)],
            vec![Vec::new()],
        )
        .unwrap();
        let rows = evaluate_group(
            &group(
                "mid",
                vec![Clause {
                    column: "v".into(),
                    test: ClauseTest::NumericRange {
                        min: Some(2.0),
                        max: Some(3.0),
                    },
                }],
            ),
            &ds,
        )
        .unwrap();
        assert_eq!(rows.indices, vec![1, 2]);

        let rows = evaluate_group(
            &group(
                "set",
                vec![Clause {
                    column: "v".into(),
                    test: ClauseTest::InSet(vec![CellValue::Number(1.0), CellValue::Number(4.0)]),
                }],
            ),
            &ds,
        )
        .unwrap();
        assert_eq!(rows.indices, vec![0, 3]);
    }

    fn three_leaf_tree() -> DecisionTree {
        // x <= 0.5 -> leaf0; 0.5 < x <= 1.5 -> leaf1; x > 1.5 -> leaf2
        DecisionTree::from_nodes(vec![
            Node::Split {
                feature: 0,
                threshold: 0.5,
                left: 1,
                right: 2,
            },
            Node::Leaf {
                leaf_id: 0,
                value: 0.0,
            },
            Node::Split {
                feature: 0,
                threshold: 1.5,
                left: 3,
                right: 4,
            },
            Node::Leaf {
                leaf_id: 1,
                value: 0.0,
            },
            Node::Leaf {
                leaf_id: 2,
                value: 0.0,
            },
        ])
        .unwrap()
    }

    fn frame_1d(xs: &[f64]) -> FeatureFrame {
        let schema = Schema {
            columns: vec![ColumnSpec {
                name: "x".into(),
                kind: ColumnKind::Numeric,
                role: Role::Feature,
            }],
        };
        let ds = Dataset::from_parts(
            schema,
            xs.iter().map(|&v| Some(v)).collect(),
            vec![Vec::new()],
        )
        .unwrap();
        FeatureFrame::from_dataset(&ds).unwrap()
    }

    #[test]
    fn leaf_distribution_counts() {
        let tree = three_leaf_tree();
        let frame = frame_1d(&[0.0, 0.3, 1.0, 2.0]);
        let dist = leaf_distribution(&tree, 0, &frame, &[0, 1, 2, 3]).unwrap();
        assert_eq!(dist.probabilities, vec![0.5, 0.25, 0.25]);
        assert_eq!(dist.support_count, 4);

        let all_leaf1 = leaf_distribution(&tree, 0, &frame, &[2]).unwrap();
        assert_eq!(all_leaf1.probabilities, vec![0.0, 1.0, 0.0]);

        let empty = leaf_distribution(&tree, 0, &frame, &[]).unwrap();
        assert_eq!(empty.probabilities, vec![0.0, 0.0, 0.0]);
        assert_eq!(empty.support_count, 0);
    }

    #[test]
    fn constraint_matrix_columns() {
        let tree = three_leaf_tree();
        // rows 0,1 in leaf0; rows 2,3 in leaf1; rows 4,5 in leaf2
        let xs = [0.0, 0.1, 1.0, 1.1, 2.0, 2.1];
        let frame = frame_1d(&xs);
        let schema = Schema {
            columns: vec![
                ColumnSpec {
                    name: "x".into(),
                    kind: ColumnKind::Numeric,
                    role: Role::Feature,
                },
                ColumnSpec {
                    name: "g".into(),
                    kind: ColumnKind::Categorical,
                    role: Role::GroupOnly,
                },
            ],
        };
        // group a: rows 0..=2 (leaf dist [2/3, 1/3, 0]); group b: rows 3..=5 ([0, 1/3, 2/3])
        let mut cells = Vec::new();
        for (i, &x) in xs.iter().enumerate() {
            cells.push(Some(x));
            cells.push(Some(if i <= 2 { 0.0 } else { 1.0 }));
        }
        let ds = Dataset::from_parts(
            schema,
            cells,
            vec![Vec::new(), vec!["a".into(), "b".into()]],
        )
        .unwrap();
        let cs = ConstraintSet {
            groups: vec![
                group("a", vec![eq_clause("g", "a")]),
                group("b", vec![eq_clause("g", "b")]),
            ],
            constraints: vec![Constraint {
                a: "a".into(),
                b: "b".into(),
            }],
        };
        let built =
            build_constraint_matrix(&tree, 0, &frame, &ds, &cs, &ZBuildOptions::default()).unwrap();
        assert_eq!(built.z.nrows(), 3);
        assert_eq!(built.z.ncols(), 1);
        assert!((built.z[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((built.z[(1, 0)] - 0.0).abs() < 1e-15);
        assert!((built.z[(2, 0)] + 2.0 / 3.0).abs() < 1e-15);
        // column sums to zero
        assert!(built.z.column(0).sum().abs() < 1e-15);
        // small-group warnings fired (supports of 3)
        assert_eq!(built.warnings.len(), 2);
    }

    #[test]
    fn identical_groups_give_zero_column() {
        let tree = three_leaf_tree();
        let frame = frame_1d(&[0.0, 1.0, 2.0]);
        let schema = Schema {
            columns: vec![ColumnSpec {
                name: "x".into(),
                kind: ColumnKind::Numeric,
                role: Role::Feature,
            }],
        };
        let ds = Dataset::from_parts(
            schema,
            vec![Some(0.0), Some(1.0), Some(2.0)],
            vec![Vec::new()],
        )
        .unwrap();
        let cs = ConstraintSet {
            groups: vec![group("everyone", vec![]), group("all", vec![])],
            constraints: vec![Constraint {
                a: "everyone".into(),
                b: "all".into(),
            }],
        };
        let built =
            build_constraint_matrix(&tree, 0, &frame, &ds, &cs, &ZBuildOptions::default()).unwrap();
        assert!(built.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_group_errors_unless_allowed() {
        let tree = three_leaf_tree();
        let frame = frame_1d(&[0.0, 1.0]);
        let schema = Schema {
            columns: vec![
                ColumnSpec {
                    name: "x".into(),
                    kind: ColumnKind::Numeric,
                    role: Role::Feature,
                },
                ColumnSpec {
                    name: "g".into(),
                    kind: ColumnKind::Categorical,
                    role: Role::GroupOnly,
                },
            ],
        };
        let ds = Dataset::from_parts(
            schema,
            vec![Some(0.0), Some(0.0), Some(1.0), Some(0.0)],
            vec![Vec::new(), vec!["a".into()]],
        )
        .unwrap();
        let cs = ConstraintSet {
            groups: vec![
                group("a", vec![eq_clause("g", "a")]),
                group("ghost", vec![eq_clause("g", "missing-category")]),
            ],
            constraints: vec![Constraint {
                a: "a".into(),
                b: "ghost".into(),
            }],
        };
        let err = build_constraint_matrix(&tree, 0, &frame, &ds, &cs, &ZBuildOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::EmptyGroup(name) if name == "ghost"));

        let built = build_constraint_matrix(
            &tree,
            0,
            &frame,
            &ds,
            &cs,
            &ZBuildOptions {
                allow_empty_groups: true,
            },
        )
        .unwrap();
        // ghost contributes a zero distribution; the column is a's distribution
        assert!((built.z[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((built.z[(1, 0)] - 0.5).abs() < 1e-15);
        assert!(built.z[(2, 0)].abs() < 1e-15);
        assert!(built.warnings.iter().any(|w| w.contains("ghost")));
    }

    #[test]
    fn spec_file_parsing_and_equalize() {
        let cs = ConstraintSet::from_json_str(
            r#"{
                "groups": [
                    {"name": "g1", "all": [{"col": "c", "op": "equals", "value": "x"}]},
                    {"name": "g2", "all": [{"col": "c", "op": "equals", "value": "y"}]},
                    {"name": "g3", "all": [{"col": "n", "op": "numeric-range", "value": {"min": 0, "max": 1}}]}
                ],
                "constraints": [{"a": "g1", "b": "g2"}, {"a": "g1", "b": "g2"}],
                "equalize": [["g1", "g2", "g3"]]
            }"#,
        )
        .unwrap();
        // duplicate explicit pair dropped; equalize adds (g1,g2) [dup] and (g1,g3)
        assert_eq!(cs.constraints.len(), 2);
        assert_eq!(cs.constraints[0].a, "g1");
        assert_eq!(cs.constraints[0].b, "g2");
        assert_eq!(cs.constraints[1].b, "g3");

        assert!(ConstraintSet::from_json_str(
            r#"{"groups":[{"name":"g","all":[]}],"constraints":[{"a":"g","b":"g"}]}"#
        )
        .is_err());
        assert!(ConstraintSet::from_json_str(
            r#"{"groups":[],"constraints":[{"a":"g","b":"h"}]}"#
        )
        .is_err());
    }
}
