//! Expression matrices with sample and feature ids, plus labels and
//! optional subject groups.
//!
//! Text matrices have a header row of feature ids and a first column of
//! sample ids; `.tsv` and `.txt` files are tab separated, anything else
//! comma separated. Files ending in `.crm` use the binary cache layout:
//!
//! ```text
//! magic     4 bytes "CRM1"
//! version   u32 (1)
//! n, p      u64 x 2
//! ids       n sample ids then p feature ids, each u32 length + UTF-8
//! values    n*p f64, row-major
//! ```
//!
//! All integers and reals are little-endian.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crc_core::gram::LabelVector;
use ndarray::Array2;

use crate::error::{CliError, Result};
use crate::output::atomic_write;

const CACHE_MAGIC: &[u8; 4] = b"CRM1";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub values: Array2<f64>,
    pub sample_ids: Vec<String>,
    pub feature_ids: Vec<String>,
}

/// Which raw label value maps to `+1`; the other maps to `-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    pub negative: String,
    pub positive: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub matrix: Array2<f64>,
    pub labels: LabelVector,
    pub sample_ids: Vec<String>,
    pub feature_ids: Vec<String>,
    pub group_ids: Option<Vec<String>>,
    pub mapping: LabelMapping,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Labels file: sample id column first, then named columns. Without it
    /// the label (and group) columns are read from the matrix file.
    pub labels_path: Option<PathBuf>,
    /// Label column name; defaults to the labels file's second column.
    pub label_column: Option<String>,
    pub group_column: Option<String>,
    /// Raw value mapped to `+1`; defaults to the larger value in byte order.
    pub positive_label: Option<String>,
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn delimiter(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("txt") => b'\t',
        _ => b',',
    }
}

fn is_cache(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("crm")
}

fn check_unique(ids: &[String], kind: &'static str, path: &Path) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(CliError::DuplicateId { path: display(path), kind, id: id.clone() });
        }
    }
    Ok(())
}

/// Header plus rows of a delimited text file, all cells as strings.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(path))
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let header: Vec<String> =
        reader.headers().map_err(|e| csv_error(path, e))?.iter().map(|s| s.trim().to_string()).collect();
    if header.len() < 2 {
        return Err(CliError::Data(format!("{}: header needs an id column and at least one more", display(path))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            let line = record.position().map_or(0, |p| p.line());
            return Err(CliError::RaggedRows {
                path: display(path),
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        rows.push(record.iter().map(|s| s.trim().to_string()).collect());
    }
    Ok(Table { header, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Data(format!("{}: {other:?}", display(path))),
    }
}

fn parse_cell(path: &Path, row: &str, column: &str, value: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::NonNumericCell {
            path: display(path),
            row: row.to_string(),
            column: column.to_string(),
            value: value.to_string(),
        }),
    }
}

/// Text matrix with the named non-numeric columns split off.
fn read_text_matrix(path: &Path, skip: &[&str]) -> Result<(Matrix, HashMap<String, Vec<String>>)> {
    let table = read_table(path)?;
    for name in skip {
        if !table.header[1..].iter().any(|h| h == name) {
            return Err(CliError::Data(format!("{}: no column named '{name}'", display(path))));
        }
    }
    let numeric: Vec<usize> = (1..table.header.len()).filter(|&c| !skip.contains(&table.header[c].as_str())).collect();
    let feature_ids: Vec<String> = numeric.iter().map(|&c| table.header[c].clone()).collect();
    let sample_ids: Vec<String> = table.rows.iter().map(|r| r[0].clone()).collect();
    check_unique(&sample_ids, "sample", path)?;
    check_unique(&feature_ids, "feature", path)?;
    if sample_ids.is_empty() || feature_ids.is_empty() {
        return Err(CliError::Data(format!("{}: matrix is empty", display(path))));
    }
    let mut values = Array2::zeros((sample_ids.len(), feature_ids.len()));
    for (i, row) in table.rows.iter().enumerate() {
        for (k, &c) in numeric.iter().enumerate() {
            values[[i, k]] = parse_cell(path, &row[0], &table.header[c], &row[c])?;
        }
    }
    let mut extra = HashMap::new();
    for name in skip {
        let c = table.header.iter().position(|h| h == name).expect("checked above");
        extra.insert(name.to_string(), table.rows.iter().map(|r| r[c].clone()).collect());
    }
    Ok((Matrix { values, sample_ids, feature_ids }, extra))
}

/// Reads a matrix without labels, from text or the binary cache.
pub fn load_matrix(path: &Path) -> Result<Matrix> {
    if is_cache(path) {
        read_cache(path)
    } else {
        Ok(read_text_matrix(path, &[])?.0)
    }
}

/// Assigns `-1`/`+1` to the two distinct raw values.
pub fn label_mapping(values: &[String], positive: Option<&str>, path: &Path) -> Result<LabelMapping> {
    let distinct: BTreeSet<&str> = values.iter().map(String::as_str).collect();
    let (known, extras): (Vec<&str>, Vec<&str>) = match positive {
        Some(pos) => {
            if !distinct.contains(pos) {
                return Err(CliError::Data(format!("{}: positive label '{pos}' does not occur", display(path))));
            }
            let others: Vec<&str> = distinct.iter().copied().filter(|&v| v != pos).collect();
            let known = others.first().map_or(vec![pos], |&neg| vec![neg, pos]);
            (known, others.iter().skip(1).copied().collect())
        }
        None => {
            let all: Vec<&str> = distinct.into_iter().collect();
            let split = all.len().min(2);
            (all[..split].to_vec(), all[split..].to_vec())
        }
    };
    if !extras.is_empty() {
        return Err(CliError::UnknownLabel {
            path: display(path),
            known: known.iter().map(|s| s.to_string()).collect(),
            extras: extras.iter().map(|s| s.to_string()).collect(),
        });
    }
    if known.len() < 2 {
        return Err(CliError::Data(format!("{}: labels take a single value {known:?}", display(path))));
    }
    Ok(LabelMapping { negative: known[0].to_string(), positive: known[1].to_string() })
}

fn encode_labels(raw: &[String], mapping: &LabelMapping) -> Result<LabelVector> {
    let signs: Vec<i8> = raw.iter().map(|v| if *v == mapping.positive { 1 } else { -1 }).collect();
    Ok(LabelVector::new(&signs)?)
}

/// Loads a labelled dataset.
pub fn load_dataset(matrix_path: &Path, options: &LoadOptions) -> Result<Dataset> {
    let (matrix, raw_labels, groups, label_source) = match &options.labels_path {
        Some(labels_path) => {
            let matrix = load_matrix(matrix_path)?;
            let (labels, groups) = read_labels_file(labels_path, &matrix.sample_ids, options)?;
            (matrix, labels, groups, labels_path.clone())
        }
        None => {
            let label_column = options.label_column.as_deref().ok_or_else(|| {
                CliError::Usage("either a labels file or a label column in the matrix is required".into())
            })?;
            if is_cache(matrix_path) {
                return Err(CliError::Usage("binary matrices need a separate labels file".into()));
            }
            let mut skip = vec![label_column];
            skip.extend(options.group_column.as_deref());
            let (matrix, mut extra) = read_text_matrix(matrix_path, &skip)?;
            let labels = extra.remove(label_column).expect("label column read");
            let groups = options.group_column.as_ref().map(|g| extra.remove(g.as_str()).expect("group column read"));
            (matrix, labels, groups, matrix_path.to_path_buf())
        }
    };
    if let Some(g) = &groups {
        if let Some(i) = g.iter().position(String::is_empty) {
            return Err(CliError::Data(format!("sample '{}' has an empty group id", matrix.sample_ids[i])));
        }
    }
    let mapping = label_mapping(&raw_labels, options.positive_label.as_deref(), &label_source)?;
    let labels = encode_labels(&raw_labels, &mapping)?;
    Ok(Dataset {
        matrix: matrix.values,
        labels,
        sample_ids: matrix.sample_ids,
        feature_ids: matrix.feature_ids,
        group_ids: groups,
        mapping,
    })
}

/// Label (and group) values aligned to `sample_ids`.
fn read_labels_file(
    path: &Path,
    sample_ids: &[String],
    options: &LoadOptions,
) -> Result<(Vec<String>, Option<Vec<String>>)> {
    let table = read_table(path)?;
    let column = |name: &str| {
        table.header[1..]
            .iter()
            .position(|h| h == name)
            .map(|c| c + 1)
            .ok_or_else(|| CliError::Data(format!("{}: no column named '{name}'", display(path))))
    };
    let label_col = match &options.label_column {
        Some(name) => column(name)?,
        None => 1,
    };
    let group_col = options.group_column.as_deref().map(column).transpose()?;
    let ids: Vec<String> = table.rows.iter().map(|r| r[0].clone()).collect();
    check_unique(&ids, "sample", path)?;
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let mut labels = Vec::with_capacity(sample_ids.len());
    let mut groups = Vec::with_capacity(sample_ids.len());
    for id in sample_ids {
        let &k = index
            .get(id.as_str())
            .ok_or_else(|| CliError::Data(format!("{}: no label for sample '{id}'", display(path))))?;
        labels.push(table.rows[k][label_col].clone());
        if let Some(c) = group_col {
            groups.push(table.rows[k][c].clone());
        }
    }
    if ids.len() > sample_ids.len() {
        log::warn!("{}: {} labelled samples are not in the matrix", display(path), ids.len() - sample_ids.len());
    }
    Ok((labels, group_col.map(|_| groups)))
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn cache_bytes(m: &Matrix) -> Vec<u8> {
    let (n, p) = m.values.dim();
    let mut buf = Vec::with_capacity(24 + 8 * n * p);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(p as u64).to_le_bytes());
    for id in m.sample_ids.iter().chain(&m.feature_ids) {
        push_str(&mut buf, id);
    }
    for v in m.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn write_cache(path: &Path, m: &Matrix) -> Result<()> {
    atomic_write(path, &cache_bytes(m))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, k: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < k {
            return Err(CliError::Data(format!("{}: truncated matrix cache", display(self.path))));
        }
        let out = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let path = self.path;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CliError::Data(format!("{}: id is not UTF-8", display(path))))
    }
}

pub fn matrix_from_cache(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(4)? != CACHE_MAGIC {
        return Err(CliError::Data(format!("{}: not a matrix cache", display(path))));
    }
    let version = c.u32()?;
    if version != CACHE_VERSION {
        return Err(CliError::Data(format!("{}: unsupported cache version {version}", display(path))));
    }
    let (n, p) = (c.u64()?, c.u64()?);
    let sample_ids = (0..n).map(|_| c.string()).collect::<Result<Vec<_>>>()?;
    let feature_ids = (0..p).map(|_| c.string()).collect::<Result<Vec<_>>>()?;
    check_unique(&sample_ids, "sample", path)?;
    check_unique(&feature_ids, "feature", path)?;
    let raw = c.take(n.checked_mul(p).and_then(|k| k.checked_mul(8)).unwrap_or(usize::MAX))?;
    let flat: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    if c.pos != bytes.len() {
        return Err(CliError::Data(format!("{}: trailing bytes after matrix", display(path))));
    }
    if let Some(k) = flat.iter().position(|v| !v.is_finite()) {
        return Err(CliError::NonNumericCell {
            path: display(path),
            row: sample_ids[k / p].clone(),
            column: feature_ids[k % p].clone(),
            value: flat[k].to_string(),
        });
    }
    let values = Array2::from_shape_vec((n, p), flat).expect("length checked");
    Ok(Matrix { values, sample_ids, feature_ids })
}

fn read_cache(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| CliError::io(path, e))?;
    matrix_from_cache(&bytes, path)
}

/// Writes a matrix as text (or as a cache for `.crm` paths).
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    if is_cache(path) {
        return write_cache(path, m);
    }
    let sep = delimiter(path) as char;
    let mut buf = BufWriter::new(Vec::new());
    let mut write = || -> std::io::Result<()> {
        write!(buf, "sample_id")?;
        for f in &m.feature_ids {
            write!(buf, "{sep}{f}")?;
        }
        writeln!(buf)?;
        for (id, row) in m.sample_ids.iter().zip(m.values.rows()) {
            write!(buf, "{id}")?;
            for v in row {
                write!(buf, "{sep}{v:?}")?;
            }
            writeln!(buf)?;
        }
        Ok(())
    };
    write().map_err(|e| CliError::io(path, e))?;
    let bytes = buf.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    atomic_write(path, &bytes)
}
