//! Dataset loaders: delimited numeric text (CSV) and the big-endian
//! image/label binary pair used by the classic digit corpora.
//!
//! Both produce a [`RawDataset`]: per-row feature vectors scaled into
//! [0, 1], integer class labels shifted to 0-based, and the class count.
//! Labels must form a contiguous integer range (any base); a hole in the
//! range is reported rather than silently renumbered, since it usually
//! means the label column was misidentified.

use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset has no data rows")]
    Empty,
    #[error("line {line}: cannot parse {cell:?} (column {col}) as a number")]
    Parse { line: usize, col: usize, cell: String },
    #[error("line {line}: expected {want} columns, found {got}")]
    RowLength { line: usize, got: usize, want: usize },
    #[error("no column named {name:?} in the header")]
    LabelColumnMissing { name: String },
    #[error("label column {index} out of range for {cols} columns")]
    LabelColumnOutOfRange { index: usize, cols: usize },
    #[error("line {line}: label {cell:?} is not an integer")]
    LabelNotInteger { line: usize, cell: String },
    #[error("label {label} never occurs; labels must form a contiguous range")]
    LabelGap { label: i64 },
    #[error("bad magic number {got:#010x}, expected {want:#010x}")]
    BadMagic { got: u32, want: u32 },
    #[error("file truncated: needed {want} bytes, found {got}")]
    Truncated { want: usize, got: usize },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

/// Loaded classification data, ready for [`super::DatasetEnv`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    /// Row-major features, each coordinate scaled into [0, 1].
    pub features: Vec<Vec<f64>>,
    /// 0-based class labels.
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

/// How to find the label inside a CSV row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// 0-based column index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
}

/// Shifts integer labels to 0-based and checks the range is gap-free.
fn compact_labels(raw: &[i64]) -> Result<(Vec<usize>, usize), DatasetError> {
    let min = *raw.iter().min().expect("non-empty");
    let max = *raw.iter().max().expect("non-empty");
    let span = (max - min + 1) as usize;
    let mut seen = vec![false; span];
    for &l in raw {
        seen[(l - min) as usize] = true;
    }
    if let Some(hole) = seen.iter().position(|s| !s) {
        return Err(DatasetError::LabelGap { label: min + hole as i64 });
    }
    Ok((raw.iter().map(|&l| (l - min) as usize).collect(), span))
}

/// Per-column min-max scaling into [0, 1]; constant columns map to 0.
fn min_max_scale(features: &mut [Vec<f64>]) {
    if features.is_empty() {
        return;
    }
    let cols = features[0].len();
    for c in 0..cols {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in features.iter() {
            lo = lo.min(row[c]);
            hi = hi.max(row[c]);
        }
        let span = hi - lo;
        for row in features.iter_mut() {
            row[c] = if span > 0.0 { (row[c] - lo) / span } else { 0.0 };
        }
    }
}

fn parse_label(cell: &str, line: usize) -> Result<i64, DatasetError> {
    if let Ok(v) = cell.parse::<i64>() {
        return Ok(v);
    }
    // Tolerate "3.0"-style labels, but nothing fractional.
    if let Ok(f) = cell.parse::<f64>() {
        if f.fract() == 0.0 && f.abs() < i64::MAX as f64 {
            return Ok(f as i64);
        }
    }
    Err(DatasetError::LabelNotInteger { line, cell: cell.to_string() })
}

/// Reads a comma-separated numeric file. The first line is treated as a
/// header when any of its cells fails to parse as a number. Every non-label
/// cell must be numeric; errors carry 1-based line numbers.
pub fn load_csv_dataset(path: &Path, label: &LabelColumn) -> Result<RawDataset, DatasetError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();

    let (_, first) = *lines.peek().ok_or(DatasetError::Empty)?;
    let first_cells: Vec<&str> = first.split(',').map(str::trim).collect();
    let has_header = first_cells.iter().any(|c| c.parse::<f64>().is_err());
    let header: Option<Vec<String>> = if has_header {
        let (_, l) = lines.next().unwrap();
        Some(l.split(',').map(|c| c.trim().to_string()).collect())
    } else {
        None
    };

    let cols = header.as_ref().map_or(first_cells.len(), |h| h.len());
    let label_idx = match label {
        LabelColumn::Index(i) => {
            if *i >= cols {
                return Err(DatasetError::LabelColumnOutOfRange { index: *i, cols });
            }
            *i
        }
        LabelColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| DatasetError::LabelColumnMissing { name: name.clone() })?,
    };

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != cols {
            return Err(DatasetError::RowLength { line: line_no, got: cells.len(), want: cols });
        }
        let mut row = Vec::with_capacity(cols - 1);
        for (c, cell) in cells.iter().enumerate() {
            if c == label_idx {
                raw_labels.push(parse_label(cell, line_no)?);
            } else {
                let v: f64 = cell.parse().map_err(|_| DatasetError::Parse {
                    line: line_no,
                    col: c,
                    cell: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DatasetError::Parse {
                        line: line_no,
                        col: c,
                        cell: cell.to_string(),
                    });
                }
                row.push(v);
            }
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(DatasetError::Empty);
    }

    min_max_scale(&mut features);
    let (labels, num_classes) = compact_labels(&raw_labels)?;
    Ok(RawDataset { features, labels, num_classes })
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32, DatasetError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DatasetError::Truncated { want: end, got: bytes.len() });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Reads the big-endian image/label binary pair: images under magic
/// 0x00000803 (count, rows, cols, then row-major bytes scaled by 1/255),
/// labels under magic 0x00000801.
pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<RawDataset, DatasetError> {
    let img_bytes = fs::read(images)?;
    let magic = read_u32_be(&img_bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(DatasetError::BadMagic { got: magic, want: IMAGE_MAGIC });
    }
    let n = read_u32_be(&img_bytes, 4)? as usize;
    let rows = read_u32_be(&img_bytes, 8)? as usize;
    let cols = read_u32_be(&img_bytes, 12)? as usize;
    let pixels = rows * cols;
    let want = 16 + n * pixels;
    if img_bytes.len() < want {
        return Err(DatasetError::Truncated { want, got: img_bytes.len() });
    }
    let mut features = Vec::with_capacity(n);
    for i in 0..n {
        let start = 16 + i * pixels;
        features.push(img_bytes[start..start + pixels].iter().map(|&b| b as f64 / 255.0).collect());
    }

    let lbl_bytes = fs::read(labels)?;
    let magic = read_u32_be(&lbl_bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(DatasetError::BadMagic { got: magic, want: LABEL_MAGIC });
    }
    let ln = read_u32_be(&lbl_bytes, 4)? as usize;
    if ln != n {
        return Err(DatasetError::CountMismatch { images: n, labels: ln });
    }
    let want = 8 + ln;
    if lbl_bytes.len() < want {
        return Err(DatasetError::Truncated { want, got: lbl_bytes.len() });
    }
    if n == 0 {
        return Err(DatasetError::Empty);
    }
    let raw: Vec<i64> = lbl_bytes[8..8 + ln].iter().map(|&b| b as i64).collect();
    let (labels, num_classes) = compact_labels(&raw)?;
    Ok(RawDataset { features, labels, num_classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_with_header_and_named_label() {
        let f = write_temp("a,b,class\n0.0,10.0,1\n5.0,20.0,2\n10.0,10.0,1\n");
        let ds =
            load_csv_dataset(f.path(), &LabelColumn::Name("class".to_string())).unwrap();
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        // Min-max scaling per column.
        assert_eq!(ds.features[0], vec![0.0, 0.0]);
        assert_eq!(ds.features[1], vec![0.5, 1.0]);
        assert_eq!(ds.features[2], vec![1.0, 0.0]);
    }

    #[test]
    fn csv_without_header_and_indexed_label() {
        let f = write_temp("1.0,2.0,0\n3.0,4.0,1\n");
        let ds = load_csv_dataset(f.path(), &LabelColumn::Index(2)).unwrap();
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.features.len(), 2);
        assert_eq!(ds.features[0].len(), 2);
    }

    #[test]
    fn csv_constant_column_scales_to_zero() {
        let f = write_temp("7.0,1.0,0\n7.0,2.0,1\n");
        let ds = load_csv_dataset(f.path(), &LabelColumn::Index(2)).unwrap();
        assert_eq!(ds.features[0][0], 0.0);
        assert_eq!(ds.features[1][0], 0.0);
    }

    #[test]
    fn csv_one_based_labels_shift_down() {
        let f = write_temp("0.5,1\n0.6,2\n0.7,3\n");
        let ds = load_csv_dataset(f.path(), &LabelColumn::Index(1)).unwrap();
        assert_eq!(ds.labels, vec![0, 1, 2]);
        assert_eq!(ds.num_classes, 3);
    }

    #[test]
    fn csv_label_gap_is_an_error() {
        let f = write_temp("0.5,0\n0.6,2\n");
        let err = load_csv_dataset(f.path(), &LabelColumn::Index(1)).unwrap_err();
        match err {
            DatasetError::LabelGap { label } => assert_eq!(label, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_bad_cell_names_the_line() {
        let f = write_temp("1.0,0\nxyz,1\n");
        let err = load_csv_dataset(f.path(), &LabelColumn::Index(1)).unwrap_err();
        match err {
            DatasetError::Parse { line, col, cell } => {
                assert_eq!(line, 2);
                assert_eq!(col, 0);
                assert_eq!(cell, "xyz");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_fractional_label_rejected() {
        let f = write_temp("1.0,0.5\n2.0,1.0\n");
        let err = load_csv_dataset(f.path(), &LabelColumn::Index(1)).unwrap_err();
        assert!(matches!(err, DatasetError::LabelNotInteger { line: 1, .. }));
    }

    #[test]
    fn csv_missing_named_column() {
        let f = write_temp("a,b\n1.0,0\n");
        let err =
            load_csv_dataset(f.path(), &LabelColumn::Name("label".to_string())).unwrap_err();
        assert!(matches!(err, DatasetError::LabelColumnMissing { .. }));
    }

    #[test]
    fn csv_ragged_row_rejected() {
        let f = write_temp("1.0,2.0,0\n1.0,1\n");
        let err = load_csv_dataset(f.path(), &LabelColumn::Index(2)).unwrap_err();
        assert!(matches!(err, DatasetError::RowLength { line: 2, got: 2, want: 3 }));
    }

    fn idx_files(
        n: usize,
        rows: usize,
        cols: usize,
        pixel: impl Fn(usize, usize) -> u8,
        label: impl Fn(usize) -> u8,
    ) -> (tempfile::NamedTempFile, tempfile::NamedTempFile) {
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        img.extend_from_slice(&(n as u32).to_be_bytes());
        img.extend_from_slice(&(rows as u32).to_be_bytes());
        img.extend_from_slice(&(cols as u32).to_be_bytes());
        for i in 0..n {
            for p in 0..rows * cols {
                img.push(pixel(i, p));
            }
        }
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&(n as u32).to_be_bytes());
        for i in 0..n {
            lbl.push(label(i));
        }
        let mut fi = tempfile::NamedTempFile::new().unwrap();
        fi.write_all(&img).unwrap();
        let mut fl = tempfile::NamedTempFile::new().unwrap();
        fl.write_all(&lbl).unwrap();
        (fi, fl)
    }

    #[test]
    fn idx_roundtrip_with_scaling() {
        let (fi, fl) = idx_files(3, 2, 2, |i, p| (i * 4 + p) as u8 * 10, |i| i as u8);
        let ds = load_idx_dataset(fi.path(), fl.path()).unwrap();
        assert_eq!(ds.features.len(), 3);
        assert_eq!(ds.features[0].len(), 4);
        assert_eq!(ds.num_classes, 3);
        assert_eq!(ds.labels, vec![0, 1, 2]);
        assert!((ds.features[1][2] - 60.0 / 255.0).abs() < 1e-15);
        assert!(ds.features.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn idx_bad_magic() {
        let (fi, fl) = idx_files(1, 1, 1, |_, _| 0, |_| 0);
        let err = load_idx_dataset(fl.path(), fi.path()).unwrap_err();
        assert!(matches!(err, DatasetError::BadMagic { got: LABEL_MAGIC, want: IMAGE_MAGIC }));
    }

    #[test]
    fn idx_count_mismatch() {
        let (fi, _) = idx_files(2, 1, 1, |_, _| 0, |_| 0);
        let (_, fl) = idx_files(3, 1, 1, |_, _| 0, |i| i as u8);
        let err = load_idx_dataset(fi.path(), fl.path()).unwrap_err();
        assert!(matches!(err, DatasetError::CountMismatch { images: 2, labels: 3 }));
    }

    #[test]
    fn idx_truncated_images() {
        let (fi, fl) = idx_files(2, 2, 2, |_, _| 1, |i| i as u8);
        let bytes = std::fs::read(fi.path()).unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&bytes[..bytes.len() - 3]).unwrap();
        let err = load_idx_dataset(f.path(), fl.path()).unwrap_err();
        assert!(matches!(err, DatasetError::Truncated { .. }));
    }
}
