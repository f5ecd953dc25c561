//! Dataset loading and generation.
//!
//! Three sources produce the same in-memory [`Dataset`]: IDX image/label
//! pairs (the classic handwritten-digit container), CIFAR-10 binary
//! batches, and a seeded synthetic blob generator used for fast tests and
//! fixtures. Features are always scaled to `[0, 1]`, labels are class
//! indices below `num_classes`, and sample ids are dense `0..n`, so
//! `samples[id]` is the sample with that id.
//!
//! Files whose names end in `.gz` are decompressed transparently; format
//! errors then report offsets within the decompressed stream.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bytes::ByteReader;
use crate::{Error, Result, Scalar};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD_LEN: usize = 3073;
const CIFAR_CLASSES: usize = 10;

/// One labeled example. `label` is the ground truth consulted only when the
/// experiment's simulated oracle is asked to annotate the sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub id: usize,
    pub features: Vec<T>,
    pub label: usize,
}

/// A pool of samples with a declared feature dimension and class count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset from `(features, label)` pairs, assigning dense ids
    /// in order.
    pub fn from_pairs(
        pairs: Vec<(Vec<T>, usize)>,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let samples: Vec<Sample<T>> = pairs
            .into_iter()
            .enumerate()
            .map(|(id, (features, label))| Sample {
                id,
                features,
                label,
            })
            .collect();
        for s in &samples {
            if s.features.len() != input_dim {
                return Err(Error::invalid(format!(
                    "sample {} has {} features, expected {input_dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.label >= num_classes {
                return Err(Error::invalid(format!(
                    "sample {} has label {} outside 0..{num_classes}",
                    s.id, s.label
                )));
            }
        }
        Ok(Dataset {
            samples,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps only the first `limit` samples (ids stay dense). No-op when the
    /// dataset is already shorter.
    pub fn truncate(&mut self, limit: usize) {
        self.samples.truncate(limit);
    }

    /// Splits off the tail starting at `k` into a second dataset; both
    /// halves get fresh dense ids and keep the declared class count.
    pub fn split_at(mut self, k: usize) -> (Self, Self) {
        let tail = self.samples.split_off(k.min(self.samples.len()));
        let mut right = Dataset {
            samples: tail,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        };
        for (i, s) in right.samples.iter_mut().enumerate() {
            s.id = i;
        }
        (self, right)
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path)?;
    let buf = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(flate2::read::GzDecoder::new(buf)))
    } else {
        Ok(Box::new(buf))
    }
}

fn create_maybe_gz(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path)?;
    let buf = BufWriter::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(flate2::write::GzEncoder::new(
            buf,
            flate2::Compression::default(),
        )))
    } else {
        Ok(Box::new(buf))
    }
}

/// Loads an IDX image/label file pair into a dataset.
///
/// Pixels are scaled by `1/255`. The class count is taken as
/// `max label + 1`, which recovers 10 for the usual digit sets. The two
/// files must agree on the number of items.
pub fn load_idx<T: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<T>> {
    let mut img = ByteReader::new(open_maybe_gz(images_path)?, images_path);
    let magic = img.read_u32_be("images magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: images_path.to_path_buf(),
            offset: 0,
            message: format!("bad images magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n_images = img.read_u32_be("image count")? as usize;
    let rows = img.read_u32_be("row count")? as usize;
    let cols = img.read_u32_be("column count")? as usize;
    let input_dim = rows
        .checked_mul(cols)
        .filter(|&d| d > 0 || n_images == 0)
        .ok_or_else(|| img.format_error(format!("degenerate image shape {rows}x{cols}")))?;

    let mut lab = ByteReader::new(open_maybe_gz(labels_path)?, labels_path);
    let magic = lab.read_u32_be("labels magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 0,
            message: format!("bad labels magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = lab.read_u32_be("label count")? as usize;
    if n_labels != n_images {
        return Err(lab.format_error(format!(
            "label count {n_labels} does not match image count {n_images}"
        )));
    }

    let mut pixel_buf = vec![0u8; input_dim];
    let mut pairs = Vec::with_capacity(n_images);
    let mut max_label = 0usize;
    for i in 0..n_images {
        img.read_exact(&mut pixel_buf, &format!("pixels of image {i}"))?;
        let features: Vec<T> = pixel_buf
            .iter()
            .map(|&p| T::cast(f64::from(p) / 255.0))
            .collect();
        let label = lab.read_u8(&format!("label of image {i}"))? as usize;
        max_label = max_label.max(label);
        pairs.push((features, label));
    }
    img.expect_eof("image data")?;
    lab.expect_eof("label data")?;

    let num_classes = if pairs.is_empty() { 0 } else { max_label + 1 };
    Dataset::from_pairs(pairs, input_dim, num_classes)
}

/// Writes a dataset as an IDX image/label file pair readable by
/// [`load_idx`]. Features are quantized to bytes via `round(v * 255)`, so a
/// round trip reproduces features up to that quantization (exactly, when
/// they already lie on the `k/255` grid). Square feature dimensions are
/// written as square images; anything else as a single row.
pub fn write_idx<T: Scalar>(
    ds: &Dataset<T>,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let side = (ds.input_dim as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == ds.input_dim && side > 0 {
        (side, side)
    } else {
        (1, ds.input_dim)
    };

    let mut img = create_maybe_gz(images_path)?;
    img.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    img.write_all(&(ds.len() as u32).to_be_bytes())?;
    img.write_all(&(rows as u32).to_be_bytes())?;
    img.write_all(&(cols as u32).to_be_bytes())?;
    let mut pixel_buf = Vec::with_capacity(ds.input_dim);
    for s in &ds.samples {
        pixel_buf.clear();
        for &v in &s.features {
            let q = (v.as_f64() * 255.0).round().clamp(0.0, 255.0);
            pixel_buf.push(q as u8);
        }
        img.write_all(&pixel_buf)?;
    }
    img.flush()?;

    let mut lab = create_maybe_gz(labels_path)?;
    lab.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lab.write_all(&(ds.len() as u32).to_be_bytes())?;
    for s in &ds.samples {
        if s.label > u8::MAX as usize {
            return Err(Error::invalid(format!(
                "label {} does not fit in an IDX byte",
                s.label
            )));
        }
        lab.write_all(&[s.label as u8])?;
    }
    lab.flush()?;
    Ok(())
}

/// Loads one or more CIFAR-10 binary batch files into a single dataset.
///
/// Each record is one label byte (0..=9) followed by 3072 channel-major
/// pixels, scaled by `1/255`. Sample ids run densely across all files in
/// order. An empty file contributes no samples; a file whose length is not
/// a multiple of the record size, or a label byte above 9, is a format
/// error at the offending offset.
pub fn load_cifar10<T: Scalar>(paths: &[PathBuf]) -> Result<Dataset<T>> {
    let mut pairs = Vec::new();
    for path in paths {
        let mut reader = open_maybe_gz(path)?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            let tail_start = bytes.len() - bytes.len() % CIFAR_RECORD_LEN;
            return Err(Error::Format {
                path: path.clone(),
                offset: tail_start as u64,
                message: format!(
                    "file length {} is not a multiple of the {CIFAR_RECORD_LEN}-byte record size",
                    bytes.len()
                ),
            });
        }
        for (rec_idx, record) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
            let label = record[0] as usize;
            if label >= CIFAR_CLASSES {
                return Err(Error::Format {
                    path: path.clone(),
                    offset: (rec_idx * CIFAR_RECORD_LEN) as u64,
                    message: format!("label byte {label} outside 0..{CIFAR_CLASSES}"),
                });
            }
            let features: Vec<T> = record[1..]
                .iter()
                .map(|&p| T::cast(f64::from(p) / 255.0))
                .collect();
            pairs.push((features, label));
        }
    }
    Dataset::from_pairs(pairs, CIFAR_RECORD_LEN - 1, CIFAR_CLASSES)
}

/// Seeded Gaussian blob generator.
///
/// Class centers are drawn uniformly from `[0.25, 0.75]` per coordinate;
/// sample `i` belongs to class `i % num_classes` and is its center plus
/// `N(0, spread^2)` noise, clamped to `[0, 1]`. The same seed always yields
/// the same dataset.
pub fn synthetic_blobs<T: Scalar>(
    seed: u64,
    n: usize,
    input_dim: usize,
    num_classes: usize,
    spread: f64,
) -> Result<Dataset<T>> {
    if input_dim == 0 {
        return Err(Error::invalid("synthetic_blobs: input_dim must be positive"));
    }
    if num_classes == 0 {
        return Err(Error::invalid("synthetic_blobs: need at least one class"));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(Error::invalid("synthetic_blobs: spread must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..input_dim).map(|_| rng.gen_range(0.25..0.75)).collect())
        .collect();
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        let features: Vec<T> = centers[class]
            .iter()
            .map(|&c| T::cast((c + spread * standard_normal(&mut rng)).clamp(0.0, 1.0)))
            .collect();
        pairs.push((features, class));
    }
    Dataset::from_pairs(pairs, input_dim, num_classes)
}

/// One standard-normal draw via the Box-Muller transform (two uniforms per
/// draw; no state besides the generator, so streams stay reproducible).
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]: safe to take the log
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_dataset(n: usize, dim: usize, classes: usize) -> Dataset<f64> {
        // Features on the exact k/255 grid so IDX round-trips are lossless.
        let pairs = (0..n)
            .map(|i| {
                let f = (0..dim).map(|d| ((i * 7 + d * 13) % 256) as f64 / 255.0).collect();
                (f, i % classes)
            })
            .collect();
        Dataset::from_pairs(pairs, dim, classes).unwrap()
    }

    #[test]
    fn idx_round_trip_is_lossless_on_the_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let ds = grid_dataset(10, 9, 3); // 9 = 3x3, exercises square layout
        let img = dir.path().join("images.idx");
        let lab = dir.path().join("labels.idx");
        write_idx(&ds, &img, &lab).unwrap();
        let back: Dataset<f64> = load_idx(&img, &lab).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn idx_round_trip_through_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = grid_dataset(6, 5, 2); // non-square -> single-row layout
        let img = dir.path().join("images.idx.gz");
        let lab = dir.path().join("labels.idx.gz");
        write_idx(&ds, &img, &lab).unwrap();
        let back: Dataset<f64> = load_idx(&img, &lab).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn idx_rejects_bad_magic_and_mismatched_counts() {
        let dir = tempfile::tempdir().unwrap();
        let ds = grid_dataset(4, 4, 2);
        let img = dir.path().join("images.idx");
        let lab = dir.path().join("labels.idx");
        write_idx(&ds, &img, &lab).unwrap();

        let mut bytes = std::fs::read(&img).unwrap();
        bytes[3] = 0xff;
        std::fs::write(&img, &bytes).unwrap();
        match load_idx::<f64>(&img, &lab) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }

        // Rewrite clean, then shrink the label count field.
        write_idx(&ds, &img, &lab).unwrap();
        let mut bytes = std::fs::read(&lab).unwrap();
        bytes[7] = 3;
        std::fs::write(&lab, &bytes[..8 + 3]).unwrap();
        match load_idx::<f64>(&img, &lab) {
            Err(Error::Format { offset, message, .. }) => {
                assert_eq!(offset, 8);
                assert!(message.contains("label count 3"), "message: {message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn idx_reports_truncation_offset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = grid_dataset(4, 4, 2);
        let img = dir.path().join("images.idx");
        let lab = dir.path().join("labels.idx");
        write_idx(&ds, &img, &lab).unwrap();
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&img, &bytes[..bytes.len() - 2]).unwrap();
        match load_idx::<f64>(&img, &lab) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16 + 3 * 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn cifar_parses_records_and_positions_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = Vec::new();
        bytes.push(3u8);
        bytes.extend(std::iter::repeat(255u8).take(3072));
        bytes.push(9u8);
        bytes.extend(std::iter::repeat(0u8).take(3072));
        std::fs::write(&path, &bytes).unwrap();
        let ds: Dataset<f64> = load_cifar10(&[path.clone()]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes, 10);
        assert_eq!(ds.input_dim, 3072);
        assert_eq!(ds.samples[0].label, 3);
        assert!(ds.samples[0].features.iter().all(|&v| v == 1.0));
        assert_eq!(ds.samples[1].label, 9);
        assert_eq!(ds.samples[1].id, 1);

        // Bad label in the second record.
        bytes[3073] = 10;
        std::fs::write(&path, &bytes).unwrap();
        match load_cifar10::<f64>(&[path.clone()]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3073),
            other => panic!("expected format error, got {other:?}"),
        }

        // Torn record.
        std::fs::write(&path, &bytes[..4000]).unwrap();
        match load_cifar10::<f64>(&[path.clone()]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3073),
            other => panic!("expected format error, got {other:?}"),
        }

        // Empty file is fine and empty.
        std::fs::write(&path, []).unwrap();
        let ds: Dataset<f64> = load_cifar10(&[path]).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn cifar_concatenates_files_with_dense_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |name: &str, label: u8| {
            let path = dir.path().join(name);
            let mut bytes = vec![label];
            bytes.extend(std::iter::repeat(128u8).take(3072));
            std::fs::write(&path, &bytes).unwrap();
            path
        };
        let a = mk("a.bin", 1);
        let b = mk("b.bin", 2);
        let ds: Dataset<f64> = load_cifar10(&[a, b]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[1].id, 1);
        assert_eq!(ds.samples[1].label, 2);
    }

    #[test]
    fn blobs_are_seeded_clustered_and_clamped() {
        let a: Dataset<f64> = synthetic_blobs(5, 40, 6, 4, 1e-9).unwrap();
        let b: Dataset<f64> = synthetic_blobs(5, 40, 6, 4, 1e-9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_classes, 4);
        // Round-robin labels, dense ids.
        for (i, s) in a.samples.iter().enumerate() {
            assert_eq!(s.id, i);
            assert_eq!(s.label, i % 4);
            assert!(s.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // Near-zero spread: same-class samples are nearly identical,
        // different classes are far apart.
        let d_same = crate::linalg::squared_distance(&a.samples[0].features, &a.samples[4].features);
        let d_diff = crate::linalg::squared_distance(&a.samples[0].features, &a.samples[1].features);
        assert!(d_same < 1e-12, "within-class distance {d_same}");
        assert!(d_diff > 1e-4, "between-class distance {d_diff}");

        let c: Dataset<f64> = synthetic_blobs(6, 40, 6, 4, 1e-9).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_and_truncate_keep_ids_dense() {
        let ds = grid_dataset(10, 4, 2);
        let (left, right) = ds.split_at(7);
        assert_eq!(left.len(), 7);
        assert_eq!(right.len(), 3);
        for (i, s) in right.samples.iter().enumerate() {
            assert_eq!(s.id, i);
        }
        let mut t = left;
        t.truncate(3);
        assert_eq!(t.len(), 3);
        assert_eq!(t.samples.last().unwrap().id, 2);
    }

    proptest! {
        #[test]
        fn idx_round_trip_quantizes_consistently(
            n in 1usize..12,
            dim in 1usize..20,
            classes in 1usize..5,
            seed in 0u64..1000,
        ) {
            let ds: Dataset<f64> = synthetic_blobs(seed, n, dim, classes, 0.3).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let img = dir.path().join("i.idx");
            let lab = dir.path().join("l.idx");
            write_idx(&ds, &img, &lab).unwrap();
            let back: Dataset<f64> = load_idx(&img, &lab).unwrap();
            prop_assert_eq!(back.len(), ds.len());
            prop_assert_eq!(back.input_dim, ds.input_dim);
            for (s, t) in ds.samples.iter().zip(&back.samples) {
                prop_assert_eq!(s.label, t.label);
                for (&a, &b) in s.features.iter().zip(&t.features) {
                    // One quantization step of slack.
                    prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
                }
            }
            // A second write/load is exactly stable (already on the grid).
            let img2 = dir.path().join("i2.idx");
            let lab2 = dir.path().join("l2.idx");
            write_idx(&back, &img2, &lab2).unwrap();
            let back2: Dataset<f64> = load_idx(&img2, &lab2).unwrap();
            prop_assert_eq!(back, back2);
        }
    }
}
