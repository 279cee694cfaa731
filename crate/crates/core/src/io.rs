//! CSV datasets, JSON run configuration and the binary model container.
//!
//! Model file layout: the 8-byte magic `GBEXMODL`, a little-endian `u32`
//! format version, a little-endian `u32` header length, a JSON metadata
//! header of that many bytes, then the bincode-encoded model.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::boost::GbexHyperParams;
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::pipeline::ExtremeModel;

pub const MODEL_MAGIC: &[u8; 8] = b"GBEXMODL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub target: String,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.feature_names.len()
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Table { header, rows })
}

/// Reads cell `(row, col)` as a finite number; `row` is reported 1-based
/// among data rows.
fn cell(t: &Table, row: usize, col: usize) -> Result<f64> {
    let raw = t.rows[row].get(col).unwrap_or("");
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row: row + 1,
            column: t.header[col].clone(),
            value: raw.to_owned(),
        }),
    }
}

fn column_index(t: &Table, name: &str) -> Option<usize> {
    t.header.iter().position(|h| h == name)
}

/// Loads a numeric CSV; every column other than `target` becomes a feature,
/// in header order.
pub fn load_csv(path: impl AsRef<Path>, target: &str) -> Result<Dataset> {
    let t = read_table(path.as_ref())?;
    let target_col = column_index(&t, target).ok_or_else(|| Error::MissingTarget(target.to_owned()))?;
    let feature_cols: Vec<usize> = (0..t.header.len()).filter(|&c| c != target_col).collect();
    if feature_cols.is_empty() {
        return Err(Error::Format("dataset has no feature columns".into()));
    }
    let mut x = Array2::zeros((t.rows.len(), feature_cols.len()));
    let mut y = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        for (j, &c) in feature_cols.iter().enumerate() {
            x[[i, j]] = cell(&t, i, c)?;
        }
        y.push(cell(&t, i, target_col)?);
    }
    Ok(Dataset {
        x,
        y,
        feature_names: feature_cols.iter().map(|&c| t.header[c].clone()).collect(),
        target: target.to_owned(),
    })
}

/// Loads the named columns, in the given order, as a feature matrix. Other
/// columns are ignored.
pub fn load_features(path: impl AsRef<Path>, columns: &[String]) -> Result<Array2<f64>> {
    let t = read_table(path.as_ref())?;
    let idx = columns
        .iter()
        .map(|c| column_index(&t, c).ok_or_else(|| Error::Format(format!("column '{c}' not found in header"))))
        .collect::<Result<Vec<_>>>()?;
    let mut x = Array2::zeros((t.rows.len(), idx.len()));
    for i in 0..t.rows.len() {
        for (j, &c) in idx.iter().enumerate() {
            x[[i, j]] = cell(&t, i, c)?;
        }
    }
    Ok(x)
}

/// Writes a numeric table. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_csv(path: impl AsRef<Path>, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Flat run configuration; any field left out keeps its default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tau0: Option<f64>,
    pub seed: Option<u64>,
    pub n_trees: Option<usize>,
    pub depth_sigma: Option<usize>,
    pub depth_gamma: Option<usize>,
    pub lambda_scale: Option<f64>,
    pub lambda_ratio: Option<f64>,
    pub subsample: Option<f64>,
    pub min_leaf_sigma: Option<usize>,
    pub min_leaf_gamma: Option<usize>,
    pub forest_n_trees: Option<usize>,
    pub forest_subsample: Option<f64>,
    pub forest_mtry: Option<usize>,
    pub forest_min_node: Option<usize>,
    pub forest_quantile_orders: Option<Vec<f64>>,
    pub forest_honesty: Option<bool>,
    pub cv_folds: Option<usize>,
    pub cv_repeats: Option<usize>,
    pub cv_b_max: Option<usize>,
    pub depth_grid: Option<Vec<(usize, usize)>>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn gbex_hyper(&self) -> GbexHyperParams {
        let d = GbexHyperParams::default();
        GbexHyperParams {
            n_trees: self.n_trees.unwrap_or(d.n_trees),
            depth_sigma: self.depth_sigma.unwrap_or(d.depth_sigma),
            depth_gamma: self.depth_gamma.unwrap_or(d.depth_gamma),
            lambda_scale: self.lambda_scale.unwrap_or(d.lambda_scale),
            lambda_ratio: self.lambda_ratio.unwrap_or(d.lambda_ratio),
            subsample: self.subsample.unwrap_or(d.subsample),
            min_leaf_sigma: self.min_leaf_sigma.or(d.min_leaf_sigma),
            min_leaf_gamma: self.min_leaf_gamma.or(d.min_leaf_gamma),
            seed: self.seed.unwrap_or(d.seed),
        }
    }

    pub fn forest(&self) -> ForestConfig {
        let d = ForestConfig::default();
        ForestConfig {
            n_trees: self.forest_n_trees.unwrap_or(d.n_trees),
            subsample: self.forest_subsample.unwrap_or(d.subsample),
            mtry: self.forest_mtry.or(d.mtry),
            min_node: self.forest_min_node.unwrap_or(d.min_node),
            quantile_orders: self.forest_quantile_orders.clone().unwrap_or(d.quantile_orders),
            honesty: self.forest_honesty.unwrap_or(d.honesty),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

/// Self-describing part of a saved model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format_version: u32,
    pub tau0: f64,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub target: String,
    pub hyper: GbexHyperParams,
    pub forest: ForestConfig,
    /// Tree count chosen by cross-validation, if it was run.
    pub cv_selected_b: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub metadata: ModelMetadata,
    pub model: ExtremeModel,
}

pub fn save_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    let header = serde_json::to_vec(&file.metadata).map_err(|e| Error::Format(e.to_string()))?;
    let body = bincode::serialize(&file.model).map_err(|e| Error::Format(e.to_string()))?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::Format("metadata header too large".into()))?;
    let mut bytes = Vec::with_capacity(16 + header.len() + body.len());
    bytes.extend_from_slice(MODEL_MAGIC);
    bytes.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&header_len.to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&body);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("slice of length 4")))
        .ok_or_else(|| Error::Format("truncated file".into()))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.get(..8) != Some(MODEL_MAGIC.as_slice()) {
        return Err(Error::Format("not a model file".into()));
    }
    let version = read_u32(&bytes, 8)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let header_len = read_u32(&bytes, 12)? as usize;
    let header = bytes
        .get(16..16 + header_len)
        .ok_or_else(|| Error::Format("truncated metadata header".into()))?;
    let metadata: ModelMetadata = serde_json::from_slice(header).map_err(|e| Error::Format(e.to_string()))?;
    let model: ExtremeModel =
        bincode::deserialize(&bytes[16 + header_len..]).map_err(|e| Error::Format(e.to_string()))?;
    if metadata.feature_names.len() != model.n_features() {
        return Err(Error::Format("metadata and model disagree on the number of features".into()));
    }
    Ok(ModelFile { metadata, model })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn small_file() {
        let f = csv_file("x1,x2,y\n1,2,3\n4,5,6\n7,8,9.5\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!((d.n(), d.d()), (3, 2));
        assert_eq!(d.y, vec![3.0, 6.0, 9.5]);
        assert_eq!(d.x[[2, 1]], 8.0);
        assert_eq!(d.feature_names, vec!["x1", "x2"]);
    }

    #[test]
    fn target_may_sit_anywhere() {
        let f = csv_file("y,a,b\n1,2,3\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!(d.feature_names, vec!["a", "b"]);
        assert_eq!(d.x.row(0).to_vec(), vec![2.0, 3.0]);
    }

    #[test]
    fn rejects_bad_cells_and_shapes() {
        let f = csv_file("x1,y\n1,2\nNA,3\n");
        match load_csv(f.path(), "y") {
            Err(Error::Parse { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "x1", "NA"));
            }
            other => panic!("{other:?}"),
        }
        let f = csv_file("x1,y\n");
        assert!(matches!(load_csv(f.path(), "y"), Err(Error::EmptyDataset)));
        assert_eq!(load_csv(f.path(), "y").unwrap_err().to_string(), "empty dataset");
        let f = csv_file("x1,y\n1,2\n");
        assert!(matches!(load_csv(f.path(), "z"), Err(Error::MissingTarget(_))));
        let f = csv_file("x1,y\n1,inf\n");
        assert!(matches!(load_csv(f.path(), "y"), Err(Error::Parse { .. })));
    }

    #[test]
    fn written_tables_reload() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let rows = vec![vec![0.1, 1e-300], vec![-2.5, 1.0 / 3.0]];
        write_csv(f.path(), &["a".into(), "b".into()], &rows).unwrap();
        let d = load_csv(f.path(), "b").unwrap();
        assert_eq!(d.y, vec![1e-300, 1.0 / 3.0]);
        assert_eq!(d.x.column(0).to_vec(), vec![0.1, -2.5]);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let f = csv_file(r#"{"n_trees": 10, "forest_honesty": false}"#);
        let c = RunConfig::load(f.path()).unwrap();
        assert_eq!(c.gbex_hyper().n_trees, 10);
        assert!(!c.forest().honesty);
        let f = csv_file(r#"{"n_tree": 10}"#);
        assert!(matches!(RunConfig::load(f.path()), Err(Error::Config(_))));
    }
}
