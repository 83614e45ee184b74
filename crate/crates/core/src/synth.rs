//! Synthetic datasets with injected subgroup biases, used by the test suite
//! and handy for demos. Real data must be supplied as CSV; these generators
//! produce structurally analogous tables with known, controllable bias.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ColumnKind, ColumnSpec, Dataset, Role, Schema};
use crate::error::Result;

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; keeps the dependency surface small.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Salary table with gender and veteran-status biases:
/// columns gender (F/M), veteran (no/yes), age, years_service, education,
/// salary (target). The four intersection groups have true mean offsets
/// 0 / +5800 / −5100 / +3800 against the female non-veteran baseline, so all
/// pairwise gaps exceed $2,000 in expectation.
pub fn salary_dataset(n_rows: usize, seed: u64) -> Dataset {
    let schema = Schema {
        columns: vec![
            ColumnSpec {
                name: "gender".into(),
                kind: ColumnKind::Categorical,
                role: Role::Feature,
            },
            ColumnSpec {
                name: "veteran".into(),
                kind: ColumnKind::Categorical,
                role: Role::Feature,
            },
            ColumnSpec {
                name: "age".into(),
                kind: ColumnKind::Numeric,
                role: Role::Feature,
            },
            ColumnSpec {
                name: "years_service".into(),
                kind: ColumnKind::Numeric,
                role: Role::Feature,
            },
            ColumnSpec {
                name: "education".into(),
                kind: ColumnKind::Numeric,
                role: Role::Feature,
            },
            ColumnSpec {
                name: "salary".into(),
                kind: ColumnKind::Numeric,
                role: Role::Target,
            },
        ],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::with_capacity(n_rows * 6);
    for _ in 0..n_rows {
        let male = rng.gen_bool(0.5);
        let veteran = rng.gen_bool(0.25);
        let age = rng.gen_range(22.0_f64..65.0);
        let years = rng.gen_range(0.0_f64..(age - 21.0).min(30.0));
        let education = rng.gen_range(0.0_f64..5.0).round();

        let bias = match (male, veteran) {
            (false, false) => 0.0,
            (true, false) => 5800.0,
            (false, true) => -5100.0,
            (true, true) => 3800.0,
        };
        let salary = 47_000.0
            + bias
            + 250.0 * years
            + 700.0 * education
            + 60.0 * (age - 43.0)
            + 2500.0 * standard_normal(&mut rng);

        cells.push(Some(if male { 1.0 } else { 0.0 }));
        cells.push(Some(if veteran { 1.0 } else { 0.0 }));
        cells.push(Some(age));
        cells.push(Some(years));
        cells.push(Some(education));
        cells.push(Some(salary));
    }

    let dicts = vec![
        vec!["F".into(), "M".into()],
        vec!["no".into(), "yes".into()],
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
    ];
    Dataset::from_parts(schema, cells, dicts).expect("generator produces a consistent table")
}

/// Schema config JSON matching [`salary_dataset`] CSVs.
pub fn salary_schema_json() -> &'static str {
    r#"{"columns":[
  {"name":"gender","kind":"categorical","role":"feature"},
  {"name":"veteran","kind":"categorical","role":"feature"},
  {"name":"age","kind":"numeric","role":"feature"},
  {"name":"years_service","kind":"numeric","role":"feature"},
  {"name":"education","kind":"numeric","role":"feature"},
  {"name":"salary","kind":"numeric","role":"target"}
]}"#
}

/// Constraint spec for the salary table: the four gender×veteran
/// intersections plus both marginals, equalized.
pub fn salary_constraints_json() -> &'static str {
    r#"{
  "groups": [
    {"name": "female_nonvet", "all": [{"col": "gender", "op": "equals", "value": "F"},
                                       {"col": "veteran", "op": "equals", "value": "no"}]},
    {"name": "male_nonvet",   "all": [{"col": "gender", "op": "equals", "value": "M"},
                                       {"col": "veteran", "op": "equals", "value": "no"}]},
    {"name": "female_vet",    "all": [{"col": "gender", "op": "equals", "value": "F"},
                                       {"col": "veteran", "op": "equals", "value": "yes"}]},
    {"name": "male_vet",      "all": [{"col": "gender", "op": "equals", "value": "M"},
                                       {"col": "veteran", "op": "equals", "value": "yes"}]},
    {"name": "female",  "all": [{"col": "gender", "op": "equals", "value": "F"}]},
    {"name": "male",    "all": [{"col": "gender", "op": "equals", "value": "M"}]},
    {"name": "veteran", "all": [{"col": "veteran", "op": "equals", "value": "yes"}]},
    {"name": "nonvet",  "all": [{"col": "veteran", "op": "equals", "value": "no"}]}
  ],
  "equalize": [
    ["female_nonvet", "male_nonvet", "female_vet", "male_vet"],
    ["female", "male"],
    ["veteran", "nonvet"]
  ]
}"#
}

/// Recidivism-score table with three demographic groups whose true decile
/// means differ by at least 1.0: columns race (aa/hispanic/other), age,
/// priors, decile_score (target).
pub fn compas_dataset(n_rows: usize, seed: u64) -> Dataset {
    let schema = Schema {
        columns: vec![
            ColumnSpec {
                name: "race".into(),
                kind: ColumnKind::Categorical,
                role: Role::Feature,
            },
            ColumnSpec {
                name: "age".into(),
                kind: ColumnKind::Numeric,
                role: Role::Feature,
            },
            ColumnSpec {
                name: "priors".into(),
                kind: ColumnKind::Numeric,
                role: Role::Feature,
            },
            ColumnSpec {
                name: "decile_score".into(),
                kind: ColumnKind::Numeric,
                role: Role::Target,
            },
        ],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::with_capacity(n_rows * 4);
    for _ in 0..n_rows {
        let race = {
            let draw: f64 = rng.gen();
            if draw < 0.4 {
                0.0 // aa
            } else if draw < 0.6 {
                1.0 // hispanic
            } else {
                2.0 // other
            }
        };
        let age = rng.gen_range(18.0_f64..70.0);
        let priors = rng.gen_range(0.0_f64..15.0).floor();
        let bias = match race as usize {
            0 => 1.6,
            1 => 1.0,
            _ => 0.0,
        };
        let score = 4.0 + bias + 0.25 * priors - 0.03 * (age - 30.0) + standard_normal(&mut rng);

        cells.push(Some(race));
        cells.push(Some(age));
        cells.push(Some(priors));
        cells.push(Some(score));
    }

    let dicts = vec![
        vec!["aa".into(), "hispanic".into(), "other".into()],
        Vec::new(),
        Vec::new(),
        Vec::new(),
    ];
    Dataset::from_parts(schema, cells, dicts).expect("generator produces a consistent table")
}

pub fn compas_schema_json() -> &'static str {
    r#"{"columns":[
  {"name":"race","kind":"categorical","role":"feature"},
  {"name":"age","kind":"numeric","role":"feature"},
  {"name":"priors","kind":"numeric","role":"feature"},
  {"name":"decile_score","kind":"numeric","role":"target"}
]}"#
}

pub fn compas_constraints_json() -> &'static str {
    r#"{
  "groups": [
    {"name": "aa",       "all": [{"col": "race", "op": "equals", "value": "aa"}]},
    {"name": "hispanic", "all": [{"col": "race", "op": "equals", "value": "hispanic"}]},
    {"name": "other",    "all": [{"col": "race", "op": "equals", "value": "other"}]}
  ],
  "equalize": [["aa", "hispanic", "other"]]
}"#
}

/// Writes a dataset back out as CSV, decoding categorical codes.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let names: Vec<&str> = dataset
        .schema()
        .columns
        .iter()
        .map(|c| c.name.as_str())
        .collect();
    writer.write_record(&names)?;
    for row in 0..dataset.n_rows() {
        let mut record = Vec::with_capacity(names.len());
        for (col, spec) in dataset.schema().columns.iter().enumerate() {
            let text = match dataset.get(row, col) {
                None => String::new(),
                Some(value) => match spec.kind {
                    ColumnKind::Numeric => format!("{value}"),
                    ColumnKind::Categorical => dataset
                        .decode(col, value as usize)
                        .unwrap_or_default()
                        .to_string(),
                },
            };
            record.push(text);
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
