//! File formats the toolkit reads and writes: numeric CSV with a header row,
//! the big-endian IDX image/label pair, and network JSON documents.
//!
//! Loaders treat every malformed input as a configuration problem
//! ([`CliError::Validation`](crate::CliError::Validation), exit code 1);
//! only failures while *writing* results count as run errors.

use std::fs;
use std::path::Path;

use frcap_core::data::{Dataset, Labels};
use frcap_core::linalg::Matrix;
use frcap_core::network::Network;

use crate::{CliError, Result};

/// Magic number opening an IDX file of unsigned-byte images (`[n, rows, cols]`).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic number opening an IDX file of unsigned-byte labels (`[n]`).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Loads a rectangular numeric CSV with a header row.
///
/// The column named `label_column` becomes the label; every other column, in
/// file order, becomes a feature. When *all* labels are nonnegative integers
/// the dataset is classification with `max + 1` classes; otherwise labels stay
/// real-valued. Row order is preserved.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| validation(format!("{}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| validation(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let label_idx = headers.iter().position(|h| h == label_column).ok_or_else(|| {
        validation(format!(
            "{}: no column named '{label_column}' (columns are [{}])",
            path.display(),
            headers.join(", ")
        ))
    })?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut label_cells: Vec<f64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| validation(format!("{}: {e}", path.display())))?;
        let mut features = Vec::with_capacity(headers.len() - 1);
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                validation(format!(
                    "{}: row {}, column '{}': {:?} is not a number",
                    path.display(),
                    row + 1,
                    headers[col],
                    cell
                ))
            })?;
            if !value.is_finite() {
                return Err(validation(format!(
                    "{}: row {}, column '{}': non-finite value {value}",
                    path.display(),
                    row + 1,
                    headers[col]
                )));
            }
            if col == label_idx {
                label_cells.push(value);
            } else {
                features.push(value);
            }
        }
        rows.push(features);
    }
    if rows.is_empty() {
        return Err(validation(format!("{}: no data rows after the header", path.display())));
    }

    let inputs = Matrix::from_rows(&rows).map_err(|e| validation(e.to_string()))?;
    Dataset::new(inputs, infer_labels(&label_cells)).map_err(|e| validation(e.to_string()))
}

/// Classification when every label is a nonnegative integer, regression otherwise.
fn infer_labels(cells: &[f64]) -> Labels {
    let all_classes = cells.iter().all(|&v| v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64);
    if all_classes && !cells.is_empty() {
        let values: Vec<usize> = cells.iter().map(|&v| v as usize).collect();
        let num_classes = values.iter().copied().max().unwrap_or(0) + 1;
        Labels::Classes { values, num_classes }
    } else {
        Labels::Values(cells.to_vec())
    }
}

/// Writes a dataset as CSV with feature columns `x0..` and the label last.
///
/// Numbers use the shortest representation that parses back to the same `f64`,
/// so `load_csv` recovers the values exactly. The class *count* is recomputed
/// as `max + 1` on reload, which matches the original unless the top class
/// never occurs in the data.
pub fn write_csv(dataset: &Dataset, path: &Path, label_column: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Run(format!("cannot create {}: {e}", parent.display())))?;
    }
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;

    let d = dataset.input_dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push(label_column.to_owned());
    writer
        .write_record(&header)
        .and_then(|_| {
            for i in 0..dataset.len() {
                let mut record: Vec<String> =
                    dataset.input(i).iter().map(|v| v.to_string()).collect();
                record.push(match dataset.labels() {
                    Labels::Values(v) => v[i].to_string(),
                    Labels::Classes { values, .. } => values[i].to_string(),
                });
                writer.write_record(&record)?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

/// Big-endian cursor over a loaded IDX file, with truncation diagnostics.
struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> IdxReader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(validation(format!(
                "{}: truncated IDX file ({} bytes, needed {} at offset {})",
                self.path.display(),
                self.bytes.len(),
                n,
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32> {
        let bytes = self.take(4)?;
        Ok(u32::from_be_bytes(bytes.try_into().expect("take(4) returns 4 bytes")))
    }

    fn expect_magic(&mut self, wanted: u32, what: &str) -> Result<()> {
        let magic = self.read_u32()?;
        if magic != wanted {
            return Err(validation(format!(
                "{}: magic 0x{magic:08x} is not the IDX {what} magic 0x{wanted:08x}",
                self.path.display()
            )));
        }
        Ok(())
    }
}

/// Loads an IDX image/label file pair into a classification dataset.
///
/// Images (`[n, rows, cols]` of unsigned bytes) flatten row-major into
/// `rows * cols` features scaled by `1/255`, so a 255 pixel maps to exactly
/// 1.0. Labels are single bytes; the class count is their maximum plus one.
/// `limit` keeps exactly that many leading examples and must not exceed the
/// stored count.
pub fn load_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    let image_bytes =
        fs::read(images).map_err(|e| validation(format!("{}: {e}", images.display())))?;
    let mut reader = IdxReader::new(&image_bytes, images);
    reader.expect_magic(IDX_IMAGES_MAGIC, "image")?;
    let n = reader.read_u32()? as usize;
    let rows = reader.read_u32()? as usize;
    let cols = reader.read_u32()? as usize;
    let pixels = reader.take(n * rows * cols)?;

    let label_bytes =
        fs::read(labels).map_err(|e| validation(format!("{}: {e}", labels.display())))?;
    let mut reader = IdxReader::new(&label_bytes, labels);
    reader.expect_magic(IDX_LABELS_MAGIC, "label")?;
    let n_labels = reader.read_u32()? as usize;
    if n_labels != n {
        return Err(validation(format!(
            "{} holds {n} images but {} holds {n_labels} labels",
            images.display(),
            labels.display()
        )));
    }
    let label_values = reader.take(n)?;

    let keep = match limit {
        Some(k) if k > n => {
            return Err(validation(format!("limit {k} exceeds the {n} stored examples")))
        }
        Some(k) => k,
        None => n,
    };
    if keep == 0 {
        return Err(validation(format!("{}: no examples to load", images.display())));
    }

    let dim = rows * cols;
    let inputs: Vec<Vec<f64>> = (0..keep)
        .map(|i| pixels[i * dim..(i + 1) * dim].iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    let classes: Vec<usize> = label_values[..keep].iter().map(|&b| b as usize).collect();
    let num_classes = classes.iter().copied().max().unwrap_or(0) + 1;

    let inputs = Matrix::from_rows(&inputs).map_err(|e| validation(e.to_string()))?;
    Dataset::from_classes(inputs, classes, num_classes).map_err(|e| validation(e.to_string()))
}

/// Writes `contents` to `path`, creating parent directories as needed.
pub fn write_report(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Run(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))
}

/// Saves a network as a pretty-printed JSON document.
pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let doc = serde_json::to_string_pretty(&net.to_json())
        .map_err(|e| CliError::Run(e.to_string()))?;
    write_report(path, &(doc + "\n"))
}

/// Loads a network from a JSON document written by [`save_network`].
pub fn load_network(path: &Path) -> Result<Network> {
    let text =
        fs::read_to_string(path).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| validation(format!("{}: {e}", path.display())))?;
    Network::from_json(&value).map_err(|e| validation(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use frcap_core::network::ActivationKind;
    use std::io::Write as _;

    fn write_temp(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn csv_with_integer_labels_becomes_classification() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_temp(&dir, "d.csv", "a,label,b\n1.5,0,2\n-0.25,2,4\n3,1,6\n");
        let ds = load_csv(&path, "label").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.input_dim(), 2);
        assert_eq!(ds.input(0), &[1.5, 2.0]);
        assert_eq!(ds.labels().num_classes(), Some(3));
        assert_eq!(
            ds.labels(),
            &Labels::Classes { values: vec![0, 2, 1], num_classes: 3 }
        );
    }

    #[test]
    fn csv_with_fractional_or_negative_labels_stays_real_valued() {
        let dir = tempfile::tempdir().unwrap();
        let fractional = write_temp(&dir, "f.csv", "x,y\n1,0.5\n2,1\n");
        assert_eq!(load_csv(&fractional, "y").unwrap().labels(), &Labels::Values(vec![0.5, 1.0]));

        let signed = write_temp(&dir, "s.csv", "x,y\n1,-1\n2,1\n");
        assert_eq!(load_csv(&signed, "y").unwrap().labels(), &Labels::Values(vec![-1.0, 1.0]));
    }

    #[test]
    fn csv_missing_label_column_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_temp(&dir, "d.csv", "a,b\n1,2\n");
        let err = load_csv(&path, "target").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'target'"), "error should name the column: {msg}");
        assert!(msg.contains("a, b"), "error should list available columns: {msg}");
    }

    #[test]
    fn csv_bad_cell_reports_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_temp(&dir, "d.csv", "a,y\n1,2\noops,3\n");
        let msg = load_csv(&path, "y").unwrap_err().to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("'a'"), "{msg}");
        assert!(msg.contains("oops"), "{msg}");
    }

    #[test]
    fn csv_ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_temp(&dir, "d.csv", "a,y\n1,2\n3\n");
        assert!(load_csv(&path, "y").is_err());
    }

    #[test]
    fn csv_round_trip_preserves_every_bit() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = Matrix::from_rows(&[
            vec![0.1 + 0.2, 1.0 / 3.0],
            vec![-2.5e-7, std::f64::consts::PI],
        ])
        .unwrap();
        let ds = Dataset::from_values(inputs, vec![1.0 / 7.0, -0.0625]).unwrap();
        let path = dir.path().join("out/roundtrip.csv");
        write_csv(&ds, &path, "y").unwrap();
        let back = load_csv(&path, "y").unwrap();
        assert_eq!(&back, &ds);
    }

    #[test]
    fn csv_round_trip_preserves_class_labels() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let ds = Dataset::from_classes(inputs, vec![0, 2, 1], 3).unwrap();
        let path = dir.path().join("classes.csv");
        write_csv(&ds, &path, "label").unwrap();
        assert_eq!(&load_csv(&path, "label").unwrap(), &ds);
    }

    /// Builds an IDX image file: magic, counts, then raw pixel bytes.
    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        bytes.write_all(&n.to_be_bytes()).unwrap();
        bytes.write_all(&rows.to_be_bytes()).unwrap();
        bytes.write_all(&cols.to_be_bytes()).unwrap();
        bytes.extend_from_slice(pixels);
        bytes
    }

    fn idx_labels(values: &[u8]) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        bytes.write_all(&(values.len() as u32).to_be_bytes()).unwrap();
        bytes.extend_from_slice(values);
        bytes
    }

    fn write_bytes(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn idx_pair_loads_with_pixels_scaled_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_bytes(
            &dir,
            "img",
            &idx_images(2, 2, 2, &[0, 51, 102, 255, 255, 204, 153, 0]),
        );
        let labels = write_bytes(&dir, "lab", &idx_labels(&[7, 1]));
        let ds = load_idx(&images, &labels, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 4);
        assert_eq!(ds.input(0), &[0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0]);
        assert_eq!(ds.input(1)[0], 1.0);
        assert_eq!(ds.labels().num_classes(), Some(8));
        assert_eq!(
            ds.labels(),
            &Labels::Classes { values: vec![7, 1], num_classes: 8 }
        );
    }

    #[test]
    fn idx_limit_keeps_exactly_that_many_and_rejects_overreach() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_bytes(&dir, "img", &idx_images(3, 1, 1, &[10, 20, 30]));
        let labels = write_bytes(&dir, "lab", &idx_labels(&[0, 1, 2]));
        let ds = load_idx(&images, &labels, Some(2)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels().num_classes(), Some(2));

        let err = load_idx(&images, &labels, Some(4)).unwrap_err();
        assert!(err.to_string().contains("limit 4"), "{err}");
        assert!(matches!(err, CliError::Validation(_)));
    }

    #[test]
    fn idx_wrong_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = idx_images(1, 1, 1, &[5]);
        bad[3] = 0x99;
        let images = write_bytes(&dir, "img", &bad);
        let labels = write_bytes(&dir, "lab", &idx_labels(&[0]));
        let msg = load_idx(&images, &labels, None).unwrap_err().to_string();
        assert!(msg.contains("magic"), "{msg}");
        assert!(msg.contains("0x00000803"), "{msg}");
    }

    #[test]
    fn idx_truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut short = idx_images(2, 2, 2, &[0; 8]);
        short.truncate(short.len() - 3);
        let images = write_bytes(&dir, "img", &short);
        let labels = write_bytes(&dir, "lab", &idx_labels(&[0, 1]));
        let msg = load_idx(&images, &labels, None).unwrap_err().to_string();
        assert!(msg.contains("truncated"), "{msg}");
    }

    #[test]
    fn idx_count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_bytes(&dir, "img", &idx_images(2, 1, 1, &[1, 2]));
        let labels = write_bytes(&dir, "lab", &idx_labels(&[0, 1, 0]));
        let msg = load_idx(&images, &labels, None).unwrap_err().to_string();
        assert!(msg.contains("2 images"), "{msg}");
        assert!(msg.contains("3 labels"), "{msg}");
    }

    #[test]
    fn network_json_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
        let net = Network::random_uniform(
            &[3, 4, 2],
            ActivationKind::Relu,
            ActivationKind::Linear,
            1.0,
            &mut rng,
        )
        .unwrap();
        let path = dir.path().join("nets/model.json");
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back.dims(), net.dims());
        for t in 0..=net.depth() {
            assert_eq!(back.weight(t).as_slice(), net.weight(t).as_slice());
            assert_eq!(back.activation(t), net.activation(t));
        }
    }

    #[test]
    fn loading_a_missing_network_file_is_a_validation_error() {
        let err = load_network(Path::new("/nonexistent/net.json")).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
    }
}
