//! Loaders for externally supplied benchmark files (IHDP, Jobs, Twins).
//!
//! Nothing here downloads or synthesises data. A missing file produces
//! [`Error::DataNotFound`] describing the layout that was expected; the
//! layouts are documented in `docs/data-format.md`.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::dataset::{Dataset, VarKind};
use super::npz::{read_npz, NpyArray};
use crate::error::{Error, Result};

/// Environment variable naming the external data root.
pub const DATA_DIR_ENV: &str = "CEVAE_DATA_DIR";

pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// A benchmark replication: training pool plus, for layouts that ship one,
/// a held-out test set.
#[derive(Debug, Clone)]
pub struct BenchmarkData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

pub const IHDP_LAYOUT: &str = "IHDP: `ihdp_npci_1-1000.train.npz` + `ihdp_npci_1-1000.test.npz` \
(or the `1-100` pair), arrays x[n,25,R], t, yf, ycf, mu0, mu1 [n,R]; \
alternatively headerless `ihdp_npci_<r>.csv` files with columns t,yf,ycf,mu0,mu1,x1..x25";

pub const JOBS_LAYOUT: &str = "Jobs: `jobs_DW_bin.new.10.train.npz` + `jobs_DW_bin.new.10.test.npz`, \
arrays x[n,17,10], t, yf, e [n,10]";

pub const TWINS_LAYOUT: &str = "Twins: `twin_pairs_X_3years_samesex.csv`, `twin_pairs_T_3years_samesex.csv` \
(dbirwt_0, dbirwt_1), `twin_pairs_Y_3years_samesex.csv` (mort_0, mort_1), rows aligned";

/// Continuous IHDP covariates are the first six; the rest are binary.
const IHDP_CONTINUOUS: usize = 6;

fn not_found(path: &Path, layout: &str) -> Error {
    Error::DataNotFound {
        path: path.to_path_buf(),
        layout: layout.to_string(),
    }
}

fn require_dir(dir: &Path, layout: &str) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(not_found(dir, layout))
    }
}

fn array<'a>(map: &'a std::collections::HashMap<String, NpyArray>, key: &str, path: &Path) -> Result<&'a NpyArray> {
    map.get(key)
        .ok_or_else(|| Error::parse(path.display().to_string(), format!("array `{key}` missing")))
}

/// Column `rep` of an `[n, R]` array.
fn column(arr: &NpyArray, rep: usize, key: &str, path: &Path) -> Result<Vec<f64>> {
    match arr.shape.as_slice() {
        [n, r] if rep < *r => Ok((0..*n).map(|i| arr.get(&[i, rep])).collect()),
        [n] if rep == 0 => Ok((0..*n).map(|i| arr.get(&[i])).collect()),
        s => Err(Error::parse(
            path.display().to_string(),
            format!("array `{key}` has shape {s:?}; replication {} unavailable", rep + 1),
        )),
    }
}

/// Slice `rep` of an `[n, d, R]` covariate tensor.
fn covariates(arr: &NpyArray, rep: usize, path: &Path) -> Result<Array2<f64>> {
    match arr.shape.as_slice() {
        [n, d, r] if rep < *r => Ok(Array2::from_shape_fn((*n, *d), |(i, j)| arr.get(&[i, j, rep]))),
        [n, d] if rep == 0 => Ok(Array2::from_shape_fn((*n, *d), |(i, j)| arr.get(&[i, j]))),
        s => Err(Error::parse(
            path.display().to_string(),
            format!("covariates have shape {s:?}; replication {} unavailable", rep + 1),
        )),
    }
}

fn replications(arr: &NpyArray) -> usize {
    arr.shape.last().copied().unwrap_or(0)
}

fn to_flags(v: Vec<f64>, what: &str, path: &Path) -> Result<Vec<u8>> {
    v.into_iter()
        .enumerate()
        .map(|(i, x)| {
            if x == 0.0 || x == 1.0 {
                Ok(x as u8)
            } else {
                Err(Error::parse(
                    format!("{} row {i}", path.display()),
                    format!("{what} must be 0/1, found {x}"),
                ))
            }
        })
        .collect()
}

/// Binary columns coded {1, 2} are shifted to {0, 1}.
fn normalise_binary(x: &mut Array2<f64>, kinds: &[VarKind]) {
    for (j, kind) in kinds.iter().enumerate() {
        if *kind != VarKind::Binary {
            continue;
        }
        let mut col = x.column_mut(j);
        if col.iter().all(|&v| v == 1.0 || v == 2.0) {
            col.mapv_inplace(|v| v - 1.0);
        }
    }
}

fn infer_kinds(x: &Array2<f64>) -> Vec<VarKind> {
    x.columns()
        .into_iter()
        .map(|c| {
            if c.iter().all(|&v| v == 0.0 || v == 1.0) {
                VarKind::Binary
            } else {
                VarKind::Continuous
            }
        })
        .collect()
}

fn ihdp_from_npz(path: &Path, rep: usize) -> Result<Dataset> {
    let map = read_npz(path)?;
    let x_arr = array(&map, "x", path)?;
    let mut x = covariates(x_arr, rep, path)?;
    let d = x.ncols();
    let kinds: Vec<VarKind> = (0..d)
        .map(|j| if j < IHDP_CONTINUOUS { VarKind::Continuous } else { VarKind::Binary })
        .collect();
    normalise_binary(&mut x, &kinds);
    let t = to_flags(column(array(&map, "t", path)?, rep, "t", path)?, "t", path)?;
    let mut ds = Dataset::new(
        x,
        t,
        column(array(&map, "yf", path)?, rep, "yf", path)?,
        kinds,
        VarKind::Continuous,
    )?;
    ds.y_cf = Some(column(array(&map, "ycf", path)?, rep, "ycf", path)?);
    ds.mu0 = Some(column(array(&map, "mu0", path)?, rep, "mu0", path)?);
    ds.mu1 = Some(column(array(&map, "mu1", path)?, rep, "mu1", path)?);
    ds.validate()?;
    Ok(ds)
}

fn ihdp_from_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.trim().parse::<f64>().map_err(|_| {
                    Error::parse(format!("{}:{} field {}", path.display(), i + 1, j + 1), "not a number")
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() < 6 {
            return Err(Error::parse(format!("{}:{}", path.display(), i + 1), "too few fields"));
        }
        rows.push(row);
    }
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len() - 5);
    let x = Array2::from_shape_fn((n, d), |(i, j)| rows[i][5 + j]);
    let kinds: Vec<VarKind> = (0..d)
        .map(|j| if j < IHDP_CONTINUOUS { VarKind::Continuous } else { VarKind::Binary })
        .collect();
    let mut x = x;
    normalise_binary(&mut x, &kinds);
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let mut ds = Dataset::new(x, to_flags(col(0), "t", path)?, col(1), kinds, VarKind::Continuous)?;
    ds.y_cf = Some(col(2));
    ds.mu0 = Some(col(3));
    ds.mu1 = Some(col(4));
    ds.validate()?;
    Ok(ds)
}

/// Number of IHDP replications available under `dir`, by layout.
pub fn ihdp_replications(dir: &Path) -> Result<usize> {
    require_dir(dir, IHDP_LAYOUT)?;
    for stem in ["ihdp_npci_1-1000", "ihdp_npci_1-100"] {
        let train = dir.join(format!("{stem}.train.npz"));
        if train.is_file() {
            let map = read_npz(&train)?;
            return Ok(replications(array(&map, "t", &train)?));
        }
    }
    let mut r = 0;
    while dir.join(format!("ihdp_npci_{}.csv", r + 1)).is_file() {
        r += 1;
    }
    if r == 0 {
        Err(not_found(dir, IHDP_LAYOUT))
    } else {
        Ok(r)
    }
}

/// Loads IHDP replication `replication` (1-based).
pub fn load_ihdp(dir: &Path, replication: usize) -> Result<BenchmarkData> {
    require_dir(dir, IHDP_LAYOUT)?;
    if !(1..=1000).contains(&replication) {
        return Err(Error::invalid(format!(
            "IHDP replication must be in 1..=1000, got {replication}"
        )));
    }
    for stem in ["ihdp_npci_1-1000", "ihdp_npci_1-100"] {
        let train = dir.join(format!("{stem}.train.npz"));
        let test = dir.join(format!("{stem}.test.npz"));
        if train.is_file() {
            if !test.is_file() {
                return Err(not_found(&test, IHDP_LAYOUT));
            }
            return Ok(BenchmarkData {
                train: ihdp_from_npz(&train, replication - 1)?,
                test: Some(ihdp_from_npz(&test, replication - 1)?),
            });
        }
    }
    let csv = dir.join(format!("ihdp_npci_{replication}.csv"));
    if csv.is_file() {
        return Ok(BenchmarkData {
            train: ihdp_from_csv(&csv)?,
            test: None,
        });
    }
    Err(not_found(dir, IHDP_LAYOUT))
}

fn jobs_from_npz(path: &Path, fold: usize) -> Result<Dataset> {
    let map = read_npz(path)?;
    let x = covariates(array(&map, "x", path)?, fold, path)?;
    let kinds = infer_kinds(&x);
    let t = to_flags(column(array(&map, "t", path)?, fold, "t", path)?, "t", path)?;
    let mut ds = Dataset::new(
        x,
        t,
        column(array(&map, "yf", path)?, fold, "yf", path)?,
        kinds,
        VarKind::Binary,
    )?;
    ds.randomized = Some(to_flags(column(array(&map, "e", path)?, fold, "e", path)?, "e", path)?);
    ds.validate()?;
    Ok(ds)
}

/// Loads Jobs fold `fold` (1-based, 1..=10).
pub fn load_jobs(dir: &Path, fold: usize) -> Result<BenchmarkData> {
    require_dir(dir, JOBS_LAYOUT)?;
    if !(1..=10).contains(&fold) {
        return Err(Error::invalid(format!("Jobs fold must be in 1..=10, got {fold}")));
    }
    let train = dir.join("jobs_DW_bin.new.10.train.npz");
    let test = dir.join("jobs_DW_bin.new.10.test.npz");
    for p in [&train, &test] {
        if !p.is_file() {
            return Err(not_found(p, JOBS_LAYOUT));
        }
    }
    let train = jobs_from_npz(&train, fold - 1)?;
    if train.randomized.as_ref().is_none_or(|r| r.iter().all(|&v| v == 0)) {
        return Err(Error::parse("jobs", "no randomized units in training fold"));
    }
    Ok(BenchmarkData {
        train,
        test: Some(jobs_from_npz(&test, fold - 1)?),
    })
}

/// Raw twin pairs: both potential outcomes, gestation category and the
/// remaining covariates.
#[derive(Debug, Clone)]
pub struct TwinRecords {
    pub covariates: Array2<f64>,
    pub covariate_names: Vec<String>,
    pub covariate_kinds: Vec<VarKind>,
    /// GESTAT10 category, 0..=9.
    pub gestation: Vec<u8>,
    /// Mortality of the lighter twin (control outcome).
    pub y_light: Vec<f64>,
    /// Mortality of the heavier twin (treated outcome).
    pub y_heavy: Vec<f64>,
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    if !path.is_file() {
        return Err(not_found(path, TWINS_LAYOUT));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|c| c.trim().parse::<f64>().ok()).collect());
    }
    Ok((header, rows))
}

fn col_index(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(path.display().to_string(), format!("missing column `{name}`")))
}

/// Loads the same-sex twin pairs and keeps pairs where both twins weigh under 2 kg.
///
/// Index and identifier columns (`""`, `Unnamed: *`, `infant_id_*`) are
/// dropped, `gestat10` becomes the hidden confounder and every other column is
/// a covariate. Missing cells are filled with the column mean.
pub fn load_twins(dir: &Path) -> Result<TwinRecords> {
    require_dir(dir, TWINS_LAYOUT)?;
    let px = dir.join("twin_pairs_X_3years_samesex.csv");
    let pt = dir.join("twin_pairs_T_3years_samesex.csv");
    let py = dir.join("twin_pairs_Y_3years_samesex.csv");
    let (hx, rx) = read_table(&px)?;
    let (ht, rt) = read_table(&pt)?;
    let (hy, ry) = read_table(&py)?;
    if rx.len() != rt.len() || rx.len() != ry.len() {
        return Err(Error::parse("twins", "X, T and Y tables have different row counts"));
    }
    let (w0, w1) = (col_index(&ht, "dbirwt_0", &pt)?, col_index(&ht, "dbirwt_1", &pt)?);
    let (m0, m1) = (col_index(&hy, "mort_0", &py)?, col_index(&hy, "mort_1", &py)?);
    let g = col_index(&hx, "gestat10", &px)?;
    let keep_cols: Vec<usize> = hx
        .iter()
        .enumerate()
        .filter(|(j, h)| {
            *j != g && !h.is_empty() && !h.starts_with("Unnamed") && !h.starts_with("infant_id")
        })
        .map(|(j, _)| j)
        .collect();

    let rows: Vec<usize> = (0..rx.len())
        .filter(|&i| {
            let ok = |v: Option<f64>| v.is_some_and(|w| w < 2000.0);
            ok(rt[i][w0]) && ok(rt[i][w1])
                && rx[i][g].is_some()
                && ry[i][m0].is_some()
                && ry[i][m1].is_some()
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::parse("twins", "no pairs with both twins under 2 kg"));
    }

    let mut gest: Vec<f64> = rows.iter().map(|&i| rx[i][g].unwrap()).collect();
    let (gmin, gmax) = gest.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    if gmin >= 1.0 && gmax <= 10.0 && gmax > 9.0 {
        gest.iter_mut().for_each(|v| *v -= 1.0);
    }
    let gestation = gest
        .iter()
        .map(|&v| {
            if (0.0..=9.0).contains(&v) && v.fract() == 0.0 {
                Ok(v as u8)
            } else {
                Err(Error::parse("twins gestat10", format!("value {v} outside 0..=9")))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let means: Vec<f64> = keep_cols
        .iter()
        .map(|&j| {
            let vals: Vec<f64> = rows.iter().filter_map(|&i| rx[i][j]).collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    let covariates = Array2::from_shape_fn((rows.len(), keep_cols.len()), |(r, k)| {
        rx[rows[r]][keep_cols[k]].unwrap_or(means[k])
    });
    let covariate_kinds = infer_kinds(&covariates);
    Ok(TwinRecords {
        covariate_names: keep_cols.iter().map(|&j| hx[j].clone()).collect(),
        covariate_kinds,
        covariates,
        gestation,
        y_light: rows.iter().map(|&i| ry[i][m0].unwrap()).collect(),
        y_heavy: rows.iter().map(|&i| ry[i][m1].unwrap()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_directory() {
        let missing = Path::new("/definitely/not/here");
        assert!(matches!(load_ihdp(missing, 1), Err(Error::DataNotFound { .. })));
        assert!(matches!(load_jobs(missing, 1), Err(Error::DataNotFound { .. })));
        assert!(matches!(load_twins(missing), Err(Error::DataNotFound { .. })));
    }

    #[test]
    fn replication_range() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_ihdp(dir.path(), 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(load_ihdp(dir.path(), 1001), Err(Error::InvalidArgument(_))));
        assert!(matches!(load_ihdp(dir.path(), 1), Err(Error::DataNotFound { .. })));
        assert!(matches!(load_jobs(dir.path(), 11), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn ihdp_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for i in 0..4 {
            let mut fields = vec![
                (i % 2).to_string(),
                format!("{}", 1.5 + i as f64),
                "0.25".into(),
                "1".into(),
                "5".into(),
            ];
            for j in 0..25 {
                fields.push(if j < 6 { format!("{}", 0.1 * j as f64) } else if j == 13 { "2".into() } else { "1".into() });
            }
            body.push_str(&fields.join(","));
            body.push('\n');
        }
        std::fs::write(dir.path().join("ihdp_npci_1.csv"), body).unwrap();
        let data = load_ihdp(dir.path(), 1).unwrap();
        assert!(data.test.is_none());
        let ds = data.train;
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.n_covariates(), 25);
        assert_eq!(ds.x[[0, 13]], 1.0);
        assert_eq!(ds.true_ite().unwrap(), vec![4.0; 4]);
        assert_eq!(ihdp_replications(dir.path()).unwrap(), 1);
    }
}
