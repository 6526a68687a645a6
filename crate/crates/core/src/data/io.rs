//! Headered CSV with a JSON schema sidecar.
//!
//! The sidecar names every column's role; see `docs/data-format.md` for the
//! exact layout. Numbers are written in Rust's shortest round-trip form, so a
//! save/load cycle reproduces every value bit for bit.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, VarKind};
use crate::error::{Error, Result};

pub const SCHEMA_FORMAT: &str = "cevae-dataset";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Covariate,
    Treatment,
    Outcome,
    Counterfactual,
    Mu0,
    Mu1,
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<VarKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub format: String,
    pub version: u32,
    pub outcome_kind: VarKind,
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    /// Schema describing every populated field of `ds`.
    pub fn for_dataset(ds: &Dataset) -> Self {
        let mut columns: Vec<ColumnSpec> = ds
            .covariate_names
            .iter()
            .zip(&ds.covariate_kinds)
            .map(|(name, kind)| ColumnSpec {
                name: name.clone(),
                role: ColumnRole::Covariate,
                kind: Some(*kind),
            })
            .collect();
        let mut push = |name: &str, role| {
            columns.push(ColumnSpec {
                name: name.to_string(),
                role,
                kind: None,
            })
        };
        push("t", ColumnRole::Treatment);
        push("y", ColumnRole::Outcome);
        if ds.y_cf.is_some() {
            push("y_cf", ColumnRole::Counterfactual);
        }
        if ds.mu0.is_some() {
            push("mu0", ColumnRole::Mu0);
            push("mu1", ColumnRole::Mu1);
        }
        if ds.randomized.is_some() {
            push("randomized", ColumnRole::Randomized);
        }
        Self {
            format: SCHEMA_FORMAT.to_string(),
            version: SCHEMA_VERSION,
            outcome_kind: ds.outcome_kind,
            columns,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::DataNotFound {
                    path: path.to_path_buf(),
                    layout: "schema sidecar `<name>.schema.json` next to the CSV".into(),
                }
            } else {
                e.into()
            }
        })?;
        let schema: Schema = serde_json::from_reader(file)?;
        schema.check()?;
        Ok(schema)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if self.format != SCHEMA_FORMAT {
            return Err(Error::parse("schema", format!("unknown format `{}`", self.format)));
        }
        if self.version != SCHEMA_VERSION {
            return Err(Error::parse("schema", format!("unsupported version {}", self.version)));
        }
        let count = |role| self.columns.iter().filter(|c| c.role == role).count();
        if count(ColumnRole::Treatment) != 1 || count(ColumnRole::Outcome) != 1 {
            return Err(Error::parse(
                "schema",
                "exactly one treatment and one outcome column required",
            ));
        }
        for role in [
            ColumnRole::Counterfactual,
            ColumnRole::Mu0,
            ColumnRole::Mu1,
            ColumnRole::Randomized,
        ] {
            if count(role) > 1 {
                return Err(Error::parse("schema", format!("{role:?} column given twice")));
            }
        }
        if let Some(c) = self
            .columns
            .iter()
            .find(|c| c.role == ColumnRole::Covariate && c.kind.is_none())
        {
            return Err(Error::parse("schema", format!("covariate `{}` lacks a kind", c.name)));
        }
        Ok(())
    }
}

/// `data.csv` → `data.schema.json`.
pub fn schema_path_for(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("schema.json")
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Writes `ds` to `path` and its schema to the sidecar path.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<Schema> {
    let schema = Schema::for_dataset(ds);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|&v| fmt_num(v)).collect();
        rec.push(ds.t[i].to_string());
        rec.push(fmt_num(ds.y[i]));
        if let Some(v) = &ds.y_cf {
            rec.push(fmt_num(v[i]));
        }
        if let (Some(m0), Some(m1)) = (&ds.mu0, &ds.mu1) {
            rec.push(fmt_num(m0[i]));
            rec.push(fmt_num(m1[i]));
        }
        if let Some(r) = &ds.randomized {
            rec.push(r[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    schema.write(&schema_path_for(path))?;
    Ok(schema)
}

/// Loads `path` using its sidecar schema.
pub fn load_csv_with_sidecar(path: &Path) -> Result<Dataset> {
    let schema = Schema::read(&schema_path_for(path))?;
    load_csv(path, &schema)
}

/// Loads a headered CSV, mapping columns to roles through `schema`.
///
/// Optional roles (counterfactual, mu0/mu1, randomized) whose column is absent
/// from the header are left empty.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    schema.check()?;
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::DataNotFound {
                path: path.to_path_buf(),
                layout: "headered CSV described by a schema sidecar".into(),
            }
        } else {
            e.into()
        }
    })?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();

    let mut resolved = Vec::new();
    for col in &schema.columns {
        match index.get(col.name.as_str()) {
            Some(&i) => resolved.push((col, i)),
            None => match col.role {
                ColumnRole::Covariate | ColumnRole::Treatment | ColumnRole::Outcome => {
                    return Err(Error::parse(
                        format!("{} header", path.display()),
                        format!("missing required column `{}`", col.name),
                    ));
                }
                _ => {}
            },
        }
    }
    let present = |role| resolved.iter().any(|(c, _)| c.role == role);
    if present(ColumnRole::Mu0) != present(ColumnRole::Mu1) {
        return Err(Error::parse(
            format!("{} header", path.display()),
            "mu0 and mu1 must both be present or both absent",
        ));
    }

    let covs: Vec<(&ColumnSpec, usize)> = resolved
        .iter()
        .filter(|(c, _)| c.role == ColumnRole::Covariate)
        .copied()
        .collect();
    let mut xs: Vec<f64> = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let (mut ycf, mut mu0, mut mu1, mut rnd) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());

    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // data rows are 1-based after the header line
        let line = row_no + 2;
        if rec.len() != header.len() {
            return Err(Error::parse(
                format!("{}:{line}", path.display()),
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let cell = |spec: &ColumnSpec, i: usize| -> Result<f64> {
            let raw = rec[i].trim();
            raw.parse::<f64>().map_err(|_| {
                Error::parse(
                    format!("{}:{line} column `{}`", path.display(), spec.name),
                    format!("not a number: `{raw}`"),
                )
            })
        };
        let flag = |spec: &ColumnSpec, i: usize| -> Result<u8> {
            let v = cell(spec, i)?;
            if v == 0.0 || v == 1.0 {
                Ok(v as u8)
            } else {
                Err(Error::parse(
                    format!("{}:{line} column `{}`", path.display(), spec.name),
                    format!("expected 0 or 1, found {v}"),
                ))
            }
        };
        for &(spec, i) in &covs {
            xs.push(cell(spec, i)?);
        }
        for &(spec, i) in &resolved {
            match spec.role {
                ColumnRole::Covariate => {}
                ColumnRole::Treatment => t.push(flag(spec, i)?),
                ColumnRole::Outcome => y.push(cell(spec, i)?),
                ColumnRole::Counterfactual => ycf.push(cell(spec, i)?),
                ColumnRole::Mu0 => mu0.push(cell(spec, i)?),
                ColumnRole::Mu1 => mu1.push(cell(spec, i)?),
                ColumnRole::Randomized => rnd.push(flag(spec, i)?),
            }
        }
    }
    let n = t.len();
    let x = Array2::from_shape_vec((n, covs.len()), xs).expect("row-major covariates");
    let ds = Dataset {
        x,
        t,
        y,
        y_cf: present(ColumnRole::Counterfactual).then_some(ycf),
        mu0: present(ColumnRole::Mu0).then_some(mu0),
        mu1: present(ColumnRole::Mu1).then_some(mu1),
        covariate_kinds: covs.iter().map(|(c, _)| c.kind.unwrap()).collect(),
        covariate_names: covs.iter().map(|(c, _)| c.name.clone()).collect(),
        outcome_kind: schema.outcome_kind,
        randomized: present(ColumnRole::Randomized).then_some(rnd),
    };
    ds.validate()?;
    Ok(ds)
}
