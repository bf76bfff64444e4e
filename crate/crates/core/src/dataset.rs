//! Dataset ingestion, feature encoding, reproducible splits, and Tc
//! statistics.
//!
//! Records are `(composition, tc)` rows read from a two-column CSV. Each
//! composition is encoded as a sparse 120-dimensional vector: index
//! `atomic_number - 1` holds the element's fraction of the total
//! stoichiometric amount, so formula-unit multiples encode identically.
//! The same vector reshapes row-major into a 10×12 grid for the
//! convolutional model. Indices 118 and 119 are padding and always zero.

use crate::formula::{self, Composition};
use crate::tensor::NdArray;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const VECTOR_LEN: usize = 120;
pub const GRID_ROWS: usize = 10;
pub const GRID_COLS: usize = 12;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {cause}")]
    ParseRow { line: usize, cause: String },
    #[error("line {line}: negative tc")]
    NegativeTc { line: usize },
    #[error("empty dataset")]
    EmptyDataset,
}

/// One dataset row. The label is derived, never stored independently:
/// `label == 1` iff `tc > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub composition: Composition,
    pub tc: f64,
    pub label: u8,
}

impl LabeledRecord {
    pub fn new(composition: Composition, tc: f64) -> LabeledRecord {
        assert!(tc.is_finite() && tc >= 0.0, "tc must be nonnegative");
        LabeledRecord {
            composition,
            tc,
            label: u8::from(tc > 0.0),
        }
    }
}

/// Loads `formula,tc` rows (header required, LF or CRLF, blank lines
/// skipped). Line numbers in errors are 1-based and count the header.
pub fn load_csv(path: &Path) -> Result<Vec<LabeledRecord>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if !saw_header {
            if !line.trim().eq_ignore_ascii_case("formula,tc") {
                return Err(DatasetError::ParseRow {
                    line: line_no,
                    cause: format!("expected header `formula,tc`, got `{line}`"),
                });
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (formula_text, tc_text) =
            line.split_once(',').ok_or_else(|| DatasetError::ParseRow {
                line: line_no,
                cause: "missing `,` between formula and tc".into(),
            })?;
        let composition =
            formula::parse_formula(formula_text.trim()).map_err(|e| DatasetError::ParseRow {
                line: line_no,
                cause: e.to_string(),
            })?;
        let tc: f64 = tc_text
            .trim()
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| DatasetError::ParseRow {
                line: line_no,
                cause: format!("invalid tc value `{}`", tc_text.trim()),
            })?;
        if tc < 0.0 {
            return Err(DatasetError::NegativeTc { line: line_no });
        }
        records.push(LabeledRecord::new(composition, tc));
    }
    if !saw_header {
        return Err(DatasetError::ParseRow {
            line: 1,
            cause: "expected header `formula,tc`, got empty file".into(),
        });
    }
    Ok(records)
}

/// Normalized 120-dimensional composition encoding. Entries sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector([f64; VECTOR_LEN]);

impl FeatureVector {
    pub fn values(&self) -> &[f64; VECTOR_LEN] {
        &self.0
    }
}

/// Row-major 10×12 reshape of a [`FeatureVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid([[f64; GRID_COLS]; GRID_ROWS]);

impl FeatureGrid {
    pub fn rows(&self) -> &[[f64; GRID_COLS]; GRID_ROWS] {
        &self.0
    }

    /// Row-major flattening; exact inverse of [`encode_grid`].
    pub fn flatten(&self) -> FeatureVector {
        let mut values = [0.0; VECTOR_LEN];
        for (r, row) in self.0.iter().enumerate() {
            values[r * GRID_COLS..(r + 1) * GRID_COLS].copy_from_slice(row);
        }
        FeatureVector(values)
    }
}

/// Encodes a composition as fractions of the total stoichiometric amount:
/// `values[atomic_number - 1] = amount / total`, everything else zero.
pub fn encode_vector(c: &Composition) -> FeatureVector {
    let total = c.total_amount();
    let mut values = [0.0; VECTOR_LEN];
    for &(el, amount) in c.entries() {
        values[el.atomic_number() as usize - 1] = amount / total;
    }
    FeatureVector(values)
}

/// Row-major reshape: `grid[r][c] = values[12*r + c]`.
pub fn encode_grid(v: &FeatureVector) -> FeatureGrid {
    let mut grid = [[0.0; GRID_COLS]; GRID_ROWS];
    for r in 0..GRID_ROWS {
        grid[r].copy_from_slice(&v.0[r * GRID_COLS..(r + 1) * GRID_COLS]);
    }
    FeatureGrid(grid)
}

/// Packs feature vectors into an `[n, 120]` matrix for the dense model.
pub fn feature_matrix(features: &[FeatureVector]) -> NdArray {
    let mut data = Vec::with_capacity(features.len() * VECTOR_LEN);
    for f in features {
        data.extend_from_slice(f.values());
    }
    NdArray::from_vec(&[features.len(), VECTOR_LEN], data)
}

/// Packs feature vectors into an `[n, 1, 10, 12]` batch for the
/// convolutional model. The grid reshape is row-major, so the memory
/// layout is identical to [`feature_matrix`].
pub fn feature_grid_batch(features: &[FeatureVector]) -> NdArray {
    let mut data = Vec::with_capacity(features.len() * VECTOR_LEN);
    for f in features {
        data.extend_from_slice(f.values());
    }
    NdArray::from_vec(&[features.len(), 1, GRID_ROWS, GRID_COLS], data)
}

/// A reproducible train/test partition. Index lists are sorted, disjoint,
/// and together cover `0..n` exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSet {
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Seeded shuffle split. The test set takes `floor(n * test_fraction)`
/// records and the train set the remainder, so 16414 records at the
/// default fraction 0.2 split 13132/3282.
pub fn split(
    records: &[LabeledRecord],
    seed: u64,
    test_fraction: f64,
) -> Result<SplitSet, DatasetError> {
    assert!(
        test_fraction > 0.0 && test_fraction < 1.0,
        "test_fraction must be in (0, 1)"
    );
    let n = records.len();
    if n == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let test_count = (n as f64 * test_fraction).floor() as usize;
    let mut test_indices = indices.split_off(n - test_count);
    let mut train_indices = indices;
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(SplitSet {
        seed,
        train_indices,
        test_indices,
    })
}

/// Histogram of Tc values over bins `[k*w, (k+1)*w)`, empty bins omitted,
/// plus the mean Tc over all records.
pub fn tc_histogram(
    records: &[LabeledRecord],
    bin_width: f64,
) -> Result<(Vec<(f64, usize)>, f64), DatasetError> {
    assert!(
        bin_width.is_finite() && bin_width > 0.0,
        "bin_width must be positive"
    );
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut bins: BTreeMap<u64, usize> = BTreeMap::new();
    let mut sum = 0.0;
    for r in records {
        *bins.entry((r.tc / bin_width).floor() as u64).or_insert(0) += 1;
        sum += r.tc;
    }
    let mean = sum / records.len() as f64;
    let bins = bins
        .into_iter()
        .map(|(k, count)| (k as f64 * bin_width, count))
        .collect();
    Ok((bins, mean))
}

/// Writes the histogram as TSV rows `bin_lower<TAB>count` followed by a
/// trailing `# mean=<value>` comment line.
pub fn write_histogram_tsv(
    out: &mut impl Write,
    bins: &[(f64, usize)],
    mean: f64,
) -> std::io::Result<()> {
    for &(lower, count) in bins {
        writeln!(out, "{lower}\t{count}")?;
    }
    writeln!(out, "# mean={mean}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::Element;
    use crate::formula::parse_formula;
    use std::io::Write as _;

    fn write_temp_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_labeled_rows() {
        let f = write_temp_csv(
            "formula,tc\nCa0.4Ba1.25La1.25Cu3O6.98,40.1\nSm1Fe0.8Zn0.2As1F0.2O0.8,0.0\n",
        );
        let records = load_csv(f.path()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].tc, 40.1);
        assert_eq!(records[0].label, 1);
        assert_eq!(records[1].tc, 0.0);
        assert_eq!(records[1].label, 0);
    }

    #[test]
    fn negative_tc_is_rejected_with_line_number() {
        let f = write_temp_csv("formula,tc\nMo4Re2Si,-1\n");
        match load_csv(f.path()) {
            Err(DatasetError::NegativeTc { line: 2 }) => {}
            other => panic!("expected NegativeTc at line 2, got {other:?}"),
        }
    }

    #[test]
    fn bad_formula_reports_line() {
        let f = write_temp_csv("formula,tc\nH,1\nQq3,2\n");
        match load_csv(f.path()) {
            Err(DatasetError::ParseRow { line: 3, .. }) => {}
            other => panic!("expected ParseRow at line 3, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_csv(Path::new("/definitely/not/here.csv")),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn crlf_and_blank_lines_accepted() {
        let f = write_temp_csv("formula,tc\r\nNb3Sn,18.1\r\n\r\n");
        let records = load_csv(f.path()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].tc, 18.1);
    }

    #[test]
    fn encodes_single_element() {
        let v = encode_vector(&parse_formula("H").unwrap());
        assert_eq!(v.values()[0], 1.0);
        assert_eq!(v.values().iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn encodes_normalized_fractions() {
        // Hand-normalized: total amount 7, Mo(42) -> index 41, Re(75) -> 74,
        // Si(14) -> 13.
        let v = encode_vector(&parse_formula("Mo4Re2Si").unwrap());
        assert_eq!(v.values()[41], 4.0 / 7.0);
        assert_eq!(v.values()[74], 2.0 / 7.0);
        assert_eq!(v.values()[13], 1.0 / 7.0);
        let sum: f64 = v.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn formula_unit_multiples_encode_identically() {
        let a = encode_vector(&parse_formula("Mo4Re2Si").unwrap());
        let b = encode_vector(&parse_formula("Mo20Re10Si5").unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn grid_is_row_major_reshape() {
        let v = encode_vector(&parse_formula("H").unwrap());
        let g = encode_grid(&v);
        assert_eq!(g.rows()[0][0], 1.0);
        // Si has atomic number 14 -> vector index 13 = 12*1 + 1.
        let v = encode_vector(&parse_formula("Mo4Re2Si").unwrap());
        let g = encode_grid(&v);
        assert_eq!(g.rows()[1][1], 1.0 / 7.0);
        assert_eq!(g.flatten(), v);
    }

    #[test]
    fn padding_indices_stay_zero() {
        let v = encode_vector(&parse_formula("Og2H").unwrap());
        assert_eq!(v.values()[118], 0.0);
        assert_eq!(v.values()[119], 0.0);
        assert!(v.values()[117] > 0.0);
    }

    fn dummy_records(n: usize) -> Vec<LabeledRecord> {
        let h = Element::from_symbol("H").unwrap();
        (0..n)
            .map(|i| {
                LabeledRecord::new(
                    Composition::new([(h, 1.0 + i as f64)]).unwrap(),
                    (i % 3) as f64,
                )
            })
            .collect()
    }

    #[test]
    fn split_reproduces_published_sizes() {
        let records = dummy_records(16414);
        let s = split(&records, 7, 0.2).unwrap();
        assert_eq!(s.train_indices.len(), 13132);
        assert_eq!(s.test_indices.len(), 3282);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let records = dummy_records(10);
        let a = split(&records, 3, 0.2).unwrap();
        let b = split(&records, 3, 0.2).unwrap();
        assert_eq!(a, b);
        let c = split(&records, 4, 0.2).unwrap();
        assert_ne!(a.test_indices, c.test_indices);
    }

    #[test]
    fn split_rejects_empty_dataset() {
        assert!(matches!(
            split(&[], 0, 0.2),
            Err(DatasetError::EmptyDataset)
        ));
    }

    #[test]
    fn histogram_counts_and_mean() {
        let h = Element::from_symbol("H").unwrap();
        let mk = |tc| LabeledRecord::new(Composition::new([(h, 1.0)]).unwrap(), tc);
        let records = vec![mk(0.0), mk(0.0), mk(5.0)];
        let (bins, mean) = tc_histogram(&records, 2.0).unwrap();
        assert_eq!(bins, vec![(0.0, 2), (4.0, 1)]);
        assert!((mean - 5.0 / 3.0).abs() < 1e-15);
        let total: usize = bins.iter().map(|&(_, c)| c).sum();
        assert_eq!(total, records.len());
    }

    #[test]
    fn histogram_rejects_empty() {
        assert!(matches!(
            tc_histogram(&[], 1.0),
            Err(DatasetError::EmptyDataset)
        ));
    }

    #[test]
    fn histogram_tsv_format() {
        let mut buf = Vec::new();
        write_histogram_tsv(&mut buf, &[(0.0, 1), (40.0, 1)], 20.05).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "0\t1\n40\t1\n# mean=20.05\n"
        );
    }
}
