//! Data ingestion: IDX image/label files, delimited text, Gaussian blobs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated IDX payload ({found} bytes, expected {expected})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("row {row}: expected {expected} columns, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: {detail}")]
    Parse { row: usize, detail: String },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid blob parameters: {0}")]
    InvalidBlobs(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureScaling {
    None,
    /// Each feature mapped to `[0, 1]` by its own range.
    MinMax,
    /// Every value divided by one constant.
    Global(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × d`
    pub x: Tensor,
    pub y: Option<Vec<usize>>,
    pub name: String,
    pub scaling: FeatureScaling,
}

impl Dataset {
    pub fn new(x: Tensor, y: Option<Vec<usize>>, name: impl Into<String>) -> Result<Self, DataError> {
        if x.shape().len() != 2 {
            return Err(DataError::Empty);
        }
        if let Some(y) = &y {
            if y.len() != x.rows() {
                return Err(DataError::CountMismatch {
                    images: x.rows(),
                    labels: y.len(),
                });
            }
        }
        if !x.all_finite() {
            return Err(DataError::Parse {
                row: 0,
                detail: "non-finite feature value".into(),
            });
        }
        Ok(Self {
            x,
            y,
            name: name.into(),
            scaling: FeatureScaling::None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.y.as_ref().map(|y| y.iter().max().map_or(0, |m| m + 1))
    }

    pub fn normalize(&mut self, scaling: FeatureScaling) {
        let (n, d) = (self.len(), self.dim());
        match scaling {
            FeatureScaling::None => {}
            FeatureScaling::Global(c) => self.x.values_mut().iter_mut().for_each(|v| *v /= c),
            FeatureScaling::MinMax => {
                for j in 0..d {
                    let col = (0..n).map(|i| self.x.at(i, j));
                    let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                    let range = if hi > lo { hi - lo } else { 1.0 };
                    for i in 0..n {
                        let v = &mut self.x.values_mut()[i * d + j];
                        *v = (*v - lo) / range;
                    }
                }
            }
        }
        self.scaling = scaling;
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices).expect("indices in range"),
            y: self.y.as_ref().map(|y| indices.iter().map(|&i| y[i]).collect()),
            name: self.name.clone(),
            scaling: self.scaling,
        }
    }

    /// Seeded shuffle, then the first `train_fraction` of rows become the
    /// training part.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seed::rng(seed));
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Loads an IDX image file and its label file. Pixels are flattened row-major
/// and divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let img = read(images_path)?;
    check_magic(&img, IDX_IMAGES_MAGIC, images_path)?;
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let d = rows * cols;
    let expected = 16 + count * d;
    if img.len() < expected {
        return Err(DataError::Truncated {
            path: images_path.to_path_buf(),
            expected,
            found: img.len(),
        });
    }

    let lab = read(labels_path)?;
    check_magic(&lab, IDX_LABELS_MAGIC, labels_path)?;
    let label_count = be_u32(&lab, 4, labels_path)? as usize;
    if lab.len() < 8 + label_count {
        return Err(DataError::Truncated {
            path: labels_path.to_path_buf(),
            expected: 8 + label_count,
            found: lab.len(),
        });
    }
    if label_count != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    if count == 0 || d == 0 {
        return Err(DataError::Empty);
    }

    let values = img[16..expected].iter().map(|&p| p as f64 / 255.0).collect();
    let y = lab[8..8 + count].iter().map(|&l| l as usize).collect();
    let x = Tensor::matrix(count, d, values).expect("count × d");
    let name = images_path
        .file_name()
        .map_or_else(|| "idx".to_string(), |f| f.to_string_lossy().into_owned());
    let mut ds = Dataset::new(x, Some(y), name)?;
    ds.scaling = FeatureScaling::Global(255.0);
    Ok(ds)
}

/// Writes an IDX image file (`u8` pixels, `rows × cols` each).
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[Vec<u8>]) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for v in [pixels.len(), rows, cols] {
        f.write_all(&(v as u32).to_be_bytes())?;
    }
    for p in pixels {
        f.write_all(p)?;
    }
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)
}

/// Reads a rectangular numeric table; with `has_labels` the last column
/// becomes the (non-negative integer) label vector.
pub fn load_delimited(path: &Path, has_labels: bool, delimiter: u8) -> Result<Dataset, DataError> {
    let text = read(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_slice());
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::Parse {
            row,
            detail: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DataError::Ragged {
                row,
                expected,
                found: record.len(),
            });
        }
        let mut cells = Vec::with_capacity(record.len());
        for cell in record.iter() {
            let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                row,
                detail: format!("non-numeric cell {cell:?}"),
            })?;
            cells.push(v);
        }
        if has_labels {
            let l = cells.pop().expect("non-empty row");
            if l < 0.0 || l.fract() != 0.0 {
                return Err(DataError::Parse {
                    row,
                    detail: format!("label {l} is not a non-negative integer"),
                });
            }
            labels.push(l as usize);
        }
        values.extend(cells);
        rows += 1;
    }
    let d = width.map_or(0, |w| w - usize::from(has_labels));
    if rows == 0 || d == 0 {
        return Err(DataError::Empty);
    }
    let x = Tensor::matrix(rows, d, values).expect("rows × d");
    let name = path
        .file_stem()
        .map_or_else(|| "table".to_string(), |f| f.to_string_lossy().into_owned());
    Dataset::new(x, has_labels.then_some(labels), name)
}

/// Writes a matrix as delimited text, one row per line.
pub fn write_delimited(path: &Path, x: &Tensor, labels: Option<&[usize]>) -> std::io::Result<()> {
    let mut out = String::new();
    for (i, row) in x.iter_rows().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = labels {
            cells.push(l[i].to_string());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_clusters: usize,
    pub per_cluster: usize,
    pub dim: usize,
    /// Minimum pairwise center distance, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            num_clusters: 4,
            per_cluster: 500,
            dim: 10,
            separation: 6.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

/// Isotropic Gaussian blobs. Centers lie on a sphere of radius
/// `separation·sigma` with every pair at least that far apart; rows are
/// grouped by cluster.
pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset, DataError> {
    make_blobs_with_centers(spec).map(|(ds, _)| ds)
}

/// [`make_blobs`] that also returns the true centers.
pub fn make_blobs_with_centers(spec: &BlobSpec) -> Result<(Dataset, Vec<Vec<f64>>), DataError> {
    let BlobSpec {
        num_clusters,
        per_cluster,
        dim,
        separation,
        sigma,
        seed,
    } = *spec;
    if num_clusters == 0 || per_cluster == 0 || dim == 0 || separation <= 0.0 || sigma <= 0.0 {
        return Err(DataError::InvalidBlobs(format!("{spec:?}")));
    }
    let mut rng = seed::rng(seed);
    let min_dist = separation * sigma;
    let mut radius = min_dist;
    let mut centers: Vec<Vec<f64>>;
    let mut attempt = 0;
    loop {
        centers = (0..num_clusters)
            .map(|_| {
                let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                dir.iter().map(|v| v / norm * radius).collect()
            })
            .collect();
        let ok = (0..num_clusters).all(|a| {
            (a + 1..num_clusters).all(|b| {
                let d2: f64 = centers[a].iter().zip(&centers[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                d2.sqrt() >= min_dist
            })
        });
        if ok {
            break;
        }
        attempt += 1;
        if attempt % 100 == 0 {
            radius *= 1.05;
        }
    }
    let noise = Normal::new(0.0, sigma).expect("sigma > 0");
    let n = num_clusters * per_cluster;
    let mut values = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_cluster {
            values.extend(center.iter().map(|m| m + noise.sample(&mut rng)));
            y.push(c);
        }
    }
    let x = Tensor::matrix(n, dim, values).expect("n × dim");
    let ds = Dataset::new(x, Some(y), format!("blobs-{num_clusters}x{per_cluster}-d{dim}"))?;
    Ok((ds, centers))
}

/// Per-class sample means of a labeled dataset.
pub fn class_means(ds: &Dataset) -> Vec<Vec<f64>> {
    let y = ds.y.as_ref().expect("labels");
    let k = ds.num_classes().unwrap_or(0);
    let mut sums = vec![vec![0.0; ds.dim()]; k];
    let mut counts = vec![0usize; k];
    for (row, &l) in ds.x.iter_rows().zip(y) {
        counts[l] += 1;
        sums[l].iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|v| v / c.max(1) as f64).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;

    #[test]
    fn idx_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx_images(&ip, 2, 2, &[vec![0, 255, 51, 102], vec![255, 255, 0, 0]]).unwrap();
        write_idx_labels(&lp, &[3, 7]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.x.shape(), &[2, 4]);
        assert_eq!(ds.x.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.x.row(1), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(ds.y, Some(vec![3, 7]));
        assert_eq!(ds.scaling, FeatureScaling::Global(255.0));
    }

    #[test]
    fn idx_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx_images(&ip, 2, 2, &[vec![0; 4], vec![1; 4]]).unwrap();
        write_idx_labels(&lp, &[1, 2, 3]).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DataError::CountMismatch { images: 2, labels: 3 })
        ));
        // labels file where an images file is expected
        assert!(matches!(load_idx(&lp, &lp), Err(DataError::BadMagic { .. })));
        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(DataError::Truncated { .. })));
    }

    #[test]
    fn delimited_plain_and_labeled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "1,2\n3,4\n5,6\n").unwrap();
        let ds = load_delimited(&p, false, b',').unwrap();
        assert_eq!(ds.x.shape(), &[3, 2]);
        assert_eq!(ds.y, None);

        fs::write(&p, "1,2,0\n3,4,1\n").unwrap();
        let ds = load_delimited(&p, true, b',').unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.y, Some(vec![0, 1]));

        let t = dir.path().join("b.tsv");
        fs::write(&t, "1\t2\n3\t4\n").unwrap();
        assert_eq!(load_delimited(&t, false, b'\t').unwrap().x.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn delimited_errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "1,2\n3,4,5\n").unwrap();
        assert!(matches!(
            load_delimited(&p, false, b','),
            Err(DataError::Ragged { row: 2, expected: 2, found: 3 })
        ));
        fs::write(&p, "1,2\nx,4\n").unwrap();
        assert!(matches!(load_delimited(&p, false, b','), Err(DataError::Parse { row: 2, .. })));
    }

    #[test]
    fn single_blob_is_all_zero_labels() {
        let ds = make_blobs(&BlobSpec {
            num_clusters: 1,
            per_cluster: 20,
            ..Default::default()
        })
        .unwrap();
        assert!(ds.y.unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn far_blobs_are_kmeans_solvable() {
        let ds = make_blobs(&BlobSpec {
            num_clusters: 4,
            per_cluster: 100,
            dim: 5,
            separation: 30.0,
            sigma: 1.0,
            seed: 3,
        })
        .unwrap();
        let km = metrics::kmeans_restarts(&ds.x, 4, 20, 100, 1).unwrap();
        let acc = metrics::clustering_accuracy(&km.labels, ds.y.as_ref().unwrap()).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn blobs_are_deterministic_and_separated() {
        let spec = BlobSpec {
            seed: 17,
            ..Default::default()
        };
        let (a, centers) = make_blobs_with_centers(&spec).unwrap();
        assert_eq!(a, make_blobs(&spec).unwrap());
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                let d: f64 = centers[i].iter().zip(&centers[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(d >= 6.0, "{d}");
            }
        }
        // empirical means within 4σ/√m of the true centers, per coordinate
        let tol = 4.0 * spec.sigma / (spec.per_cluster as f64).sqrt();
        for (mean, center) in class_means(&a).iter().zip(&centers) {
            for (m, c) in mean.iter().zip(center) {
                assert!((m - c).abs() < tol, "{m} vs {c}");
            }
        }
    }

    #[test]
    fn minmax_maps_to_unit_range() {
        let x = Tensor::from_rows(&[vec![1.0, -5.0], vec![3.0, 5.0], vec![2.0, 0.0]]).unwrap();
        let mut ds = Dataset::new(x, None, "t").unwrap();
        ds.normalize(FeatureScaling::MinMax);
        assert_eq!(ds.x.values(), &[0.0, 0.0, 1.0, 1.0, 0.5, 0.5]);
    }
}
