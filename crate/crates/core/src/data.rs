//! Dataset loading and preprocessing.
//!
//! Two on-disk formats are understood:
//!
//! * Semeion text: one sample per line, 256 whitespace-separated feature
//!   values (a 16x16 grid, row-major) followed by 10 one-hot label fields.
//! * MNIST IDX: big-endian headers, `0x00000803 count rows cols` then
//!   `count*rows*cols` unsigned bytes for images; `0x00000801 count` then
//!   `count` label bytes. Gzip-compressed files are detected by their magic
//!   bytes and inflated transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const N_CLASSES: usize = 10;
pub const SEMEION_SIDE: usize = 16;
const SEMEION_FIELDS: usize = SEMEION_SIDE * SEMEION_SIDE + N_CLASSES;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    SemeionText,
    MnistIdx,
    InMemory,
}

/// Labelled grids of identical size, stored as one row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    height: usize,
    width: usize,
    values: Vec<f64>,
    labels: Vec<u8>,
    source: DataSource,
    /// Preprocessing steps applied so far, oldest first.
    pub provenance: Vec<String>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, values: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        Self::with_source(height, width, values, labels, DataSource::InMemory)
    }

    fn with_source(
        height: usize,
        width: usize,
        values: Vec<f64>,
        labels: Vec<u8>,
        source: DataSource,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty grid {height}x{width}")));
        }
        if labels.is_empty() {
            return Err(Error::Shape("dataset has no samples".into()));
        }
        if values.len() != labels.len() * height * width {
            return Err(Error::Shape(format!(
                "{} values for {} samples of {height}x{width}",
                values.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= N_CLASSES) {
            return Err(Error::Range(format!("label {l} outside 0..{N_CLASSES}")));
        }
        Ok(Dataset {
            height,
            width,
            values,
            labels,
            source,
            provenance: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn source(&self) -> DataSource {
        self.source
    }

    pub fn sample_len(&self) -> usize {
        self.height * self.width
    }

    /// Row-major grid of sample `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn label_histogram(&self) -> [usize; N_CLASSES] {
        let mut h = [0; N_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Shape("empty subset".into()));
        }
        let n = self.sample_len();
        let mut values = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!("index {i} beyond {} samples", self.len())));
            }
            values.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let mut out = Dataset::with_source(self.height, self.width, values, labels, self.source)?;
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    /// Class-proportional subset of `n` samples (largest-remainder quotas,
    /// members drawn by a seeded shuffle), returned in ascending index order.
    pub fn stratified_subset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::Range(format!("subset size {n} outside 1..={}", self.len())));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        let total = self.len();
        let mut quotas: Vec<usize> = by_class.iter().map(|c| c.len() * n / total).collect();
        let mut rem: Vec<(usize, usize)> = by_class
            .iter()
            .enumerate()
            .map(|(k, c)| ((c.len() * n) % total, k))
            .collect();
        // largest remainder first, ties to the lower class index
        rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let short = n - quotas.iter().sum::<usize>();
        for &(_, k) in rem.iter().take(short) {
            quotas[k] += 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::with_capacity(n);
        for (members, &q) in by_class.iter_mut().zip(&quotas) {
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..q]);
        }
        chosen.sort_unstable();
        let mut out = self.subset(&chosen)?;
        out.provenance.push(format!("stratified_subset n={n} seed={seed}"));
        Ok(out)
    }

    /// Class -> sample indices.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        by_class
    }
}

// ---------------------------------------------------------------- semeion

pub fn load_semeion(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_semeion(&text, path)
}

pub fn parse_semeion(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != SEMEION_FIELDS {
            return Err(err(
                lineno,
                format!("expected {SEMEION_FIELDS} fields, found {}", fields.len()),
            ));
        }
        let mut parsed = [0.0f64; SEMEION_FIELDS];
        for (col, (tok, slot)) in fields.iter().zip(parsed.iter_mut()).enumerate() {
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(lineno, format!("field {} is not a number: '{tok}'", col + 1)))?;
        }
        let (features, onehot) = parsed.split_at(SEMEION_SIDE * SEMEION_SIDE);
        let mut label = None;
        for (k, &v) in onehot.iter().enumerate() {
            if v == 1.0 {
                if label.is_some() {
                    return Err(err(lineno, "label is not one-hot (several ones)".into()));
                }
                label = Some(k as u8);
            } else if v != 0.0 {
                return Err(err(lineno, format!("label field {} is {v}, expected 0 or 1", k + 1)));
            }
        }
        let label = label.ok_or_else(|| err(lineno, "label is not one-hot (no ones)".into()))?;
        values.extend_from_slice(features);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(err(0, "no samples".into()));
    }
    let mut ds = Dataset::with_source(SEMEION_SIDE, SEMEION_SIDE, values, labels, DataSource::SemeionText)?;
    ds.provenance.push(format!("load_semeion {}", path.display()));
    Ok(ds)
}

/// Writes a 16x16 dataset in the Semeion text layout.
pub fn write_semeion(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if dataset.height() != SEMEION_SIDE || dataset.width() != SEMEION_SIDE {
        return Err(Error::Shape(format!(
            "Semeion rows need 16x16 grids, have {}x{}",
            dataset.height(),
            dataset.width()
        )));
    }
    let mut out = String::new();
    for i in 0..dataset.len() {
        for v in dataset.sample(i) {
            out.push_str(&format!("{v} "));
        }
        for k in 0..N_CLASSES {
            out.push_str(if k == dataset.label(i) { "1" } else { "0" });
            out.push(if k + 1 == N_CLASSES { '\n' } else { ' ' });
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- idx

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: format!("gzip: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: format!("header truncated at byte {at}"),
        })
}

/// Parsed IDX image payload: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(fmt(format!(
            "bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x} (image file)"
        )));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let want = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < want {
        return Err(fmt(format!(
            "truncated payload: {} bytes for {count} images of {rows}x{cols} ({want} needed)",
            payload.len()
        )));
    }
    if payload.len() > want {
        return Err(fmt(format!("{} trailing bytes after payload", payload.len() - want)));
    }
    Ok((count, rows, cols, payload.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(fmt(format!(
            "bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x} (label file)"
        )));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(fmt(format!("truncated payload: {} of {count} labels", payload.len())));
    }
    if payload.len() > count {
        return Err(fmt(format!("{} trailing bytes after labels", payload.len() - count)));
    }
    if let Some(pos) = payload.iter().position(|&l| l as usize >= N_CLASSES) {
        return Err(fmt(format!("label {} at record {pos} outside 0..9", payload[pos])));
    }
    Ok(payload.to_vec())
}

pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (count, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(ip)?, ip)?;
    let labels = parse_idx_labels(&read_maybe_gz(lp)?, lp)?;
    if labels.len() != count {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            msg: format!("{} labels for {count} images", labels.len()),
        });
    }
    let values = pixels.into_iter().map(f64::from).collect();
    let mut ds = Dataset::with_source(rows, cols, values, labels, DataSource::MnistIdx)?;
    ds.provenance.push(format!("load_mnist_idx {}", ip.display()));
    Ok(ds)
}

/// Serialises a dataset with integral values in 0..=255 as an IDX pair.
pub fn write_mnist_idx(dataset: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let mut img = Vec::with_capacity(16 + dataset.values().len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [dataset.len(), dataset.height(), dataset.width()] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in dataset.values() {
        if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
            return Err(Error::Range(format!("value {v} is not a byte")));
        }
        img.push(v as u8);
    }
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    lab.extend_from_slice(dataset.labels());
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))
}

// ---------------------------------------------------------------- preprocessing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pool {
    #[default]
    None,
    Avg2x2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocSpec {
    /// Angle (radians) that `raw_max` maps to.
    pub max_angle: f64,
    pub pool: Pool,
    pub raw_max: f64,
}

/// Maps `[0, raw_max]` linearly onto `[0, max_angle]`.
pub fn normalize(dataset: &Dataset, spec: &PreprocSpec) -> Result<Dataset> {
    if !(spec.raw_max > 0.0 && spec.raw_max.is_finite()) {
        return Err(Error::Range(format!("raw_max must be positive, got {}", spec.raw_max)));
    }
    if !(spec.max_angle > 0.0 && spec.max_angle.is_finite()) {
        return Err(Error::Range(format!("max_angle must be positive, got {}", spec.max_angle)));
    }
    let mut values = Vec::with_capacity(dataset.values.len());
    for (i, &v) in dataset.values.iter().enumerate() {
        if !(0.0..=spec.raw_max).contains(&v) {
            return Err(Error::Range(format!(
                "sample {} holds {v}, outside [0, {}]",
                i / dataset.sample_len(),
                spec.raw_max
            )));
        }
        values.push(v / spec.raw_max * spec.max_angle);
    }
    let mut out = Dataset { values, ..dataset.clone() };
    out.provenance.push(format!(
        "normalize raw_max={} max_angle={}",
        spec.raw_max, spec.max_angle
    ));
    Ok(out)
}

/// Replaces every 2x2 block by its mean.
pub fn avg_pool_2x2(dataset: &Dataset) -> Result<Dataset> {
    let (h, w) = (dataset.height, dataset.width);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("cannot 2x2-pool a {h}x{w} grid")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut values = Vec::with_capacity(dataset.len() * oh * ow);
    for i in 0..dataset.len() {
        let g = dataset.sample(i);
        for r in 0..oh {
            for c in 0..ow {
                let top = 2 * r * w + 2 * c;
                let bot = top + w;
                values.push((g[top] + g[top + 1] + g[bot] + g[bot + 1]) * 0.25);
            }
        }
    }
    let mut out = Dataset {
        height: oh,
        width: ow,
        values,
        ..dataset.clone()
    };
    out.provenance.push("avg_pool_2x2".into());
    Ok(out)
}

/// Normalisation first, then pooling.
pub fn preprocess(dataset: &Dataset, spec: &PreprocSpec) -> Result<Dataset> {
    let normed = normalize(dataset, spec)?;
    match spec.pool {
        Pool::None => Ok(normed),
        Pool::Avg2x2 => avg_pool_2x2(&normed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid_ds(h: usize, w: usize, vals: Vec<f64>) -> Dataset {
        let n = vals.len() / (h * w);
        Dataset::new(h, w, vals, vec![0; n]).unwrap()
    }

    #[test]
    fn normalize_endpoints_and_linearity() {
        let ds = grid_ds(1, 3, vec![255.0, 0.0, 128.0]);
        let spec = PreprocSpec { max_angle: PI / 4.0, pool: Pool::None, raw_max: 255.0 };
        let n = normalize(&ds, &spec).unwrap();
        assert_eq!(n.values()[0], PI / 4.0);
        assert_eq!(n.values()[1], 0.0);
        let spec8 = PreprocSpec { max_angle: PI / 8.0, ..spec };
        let n8 = normalize(&ds, &spec8).unwrap();
        assert!((n8.values()[2] - 128.0 / 255.0 * PI / 8.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_rejects_out_of_range() {
        let ds = grid_ds(1, 2, vec![256.0, 0.0]);
        let spec = PreprocSpec { max_angle: 1.0, pool: Pool::None, raw_max: 255.0 };
        assert!(matches!(normalize(&ds, &spec), Err(Error::Range(_))));
        let ds = grid_ds(1, 2, vec![-1.0, 0.0]);
        assert!(matches!(normalize(&ds, &spec), Err(Error::Range(_))));
        let bad = PreprocSpec { raw_max: 0.0, ..spec };
        assert!(normalize(&grid_ds(1, 2, vec![0.0, 0.0]), &bad).is_err());
    }

    #[test]
    fn pool_means() {
        let p = avg_pool_2x2(&grid_ds(2, 2, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(p.values(), &[2.5]);
        let p = avg_pool_2x2(&grid_ds(4, 4, vec![0.7; 16])).unwrap();
        assert_eq!((p.height(), p.width()), (2, 2));
        assert!(p.values().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let p = avg_pool_2x2(&grid_ds(16, 16, vec![0.0; 256])).unwrap();
        assert_eq!((p.height(), p.width()), (8, 8));
        assert!(avg_pool_2x2(&grid_ds(3, 2, vec![0.0; 6])).is_err());
    }

    #[test]
    fn pool_layout_is_row_major() {
        // 2x4 -> 1x2
        let p = avg_pool_2x2(&grid_ds(2, 4, vec![1.0, 1.0, 5.0, 5.0, 1.0, 1.0, 5.0, 5.0])).unwrap();
        assert_eq!(p.values(), &[1.0, 5.0]);
    }

    #[test]
    fn semeion_rejects_wrong_field_count() {
        let mut line: Vec<String> = vec!["0".into(); 255];
        line.extend(["1", "0", "0", "0", "0", "0", "0", "0", "0", "0"].map(String::from));
        let good: Vec<String> = {
            let mut v = vec!["1".to_string(); 256];
            v.extend(["0", "1", "0", "0", "0", "0", "0", "0", "0", "0"].map(String::from));
            v
        };
        let text = format!("{}\n{}\n", good.join(" "), line.join(" "));
        match parse_semeion(&text, Path::new("fixture.data")) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("265"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn semeion_label_checks() {
        let mut v = vec!["0.0000".to_string(); 256];
        v.extend(["1.0000", "0.0000", "0", "0", "0", "0", "0", "0", "0", "1"].map(String::from));
        let err = parse_semeion(&v.join(" "), Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("several ones"), "{err}");
        let mut v = vec!["0".to_string(); 256];
        v.extend(["0"; 10].map(String::from));
        assert!(parse_semeion(&v.join(" "), Path::new("x")).is_err());
        let mut v = vec!["0".to_string(); 256];
        v.extend(["0.5", "0", "0", "0", "0", "0", "0", "0", "0", "0"].map(String::from));
        assert!(parse_semeion(&v.join(" "), Path::new("x")).is_err());
        let mut v = vec!["abc".to_string(); 256];
        v.extend(["1", "0", "0", "0", "0", "0", "0", "0", "0", "0"].map(String::from));
        let err = parse_semeion(&v.join(" "), Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("field 1"), "{err}");
    }

    #[test]
    fn idx_magic_checks() {
        let mut labels = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        labels.extend_from_slice(&1u32.to_be_bytes());
        labels.push(3);
        // a label file handed to the image parser
        let err = parse_idx_images(&labels, Path::new("swapped")).unwrap_err();
        assert!(err.to_string().contains("bad magic 0x00000801"), "{err}");
        assert_eq!(parse_idx_labels(&labels, Path::new("l")).unwrap(), vec![3]);
        let mut img = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [2u32, 2, 2] {
            img.extend_from_slice(&d.to_be_bytes());
        }
        img.extend_from_slice(&[0; 7]);
        let err = parse_idx_images(&img, Path::new("i")).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(parse_idx_images(&img[..10], Path::new("i")).is_err());
    }

    #[test]
    fn stratified_subset_keeps_proportions() {
        let labels: Vec<u8> = (0..1000).map(|i| if i < 700 { 0 } else { 1 }).collect();
        let ds = Dataset::new(1, 1, vec![0.0; 1000], labels).unwrap();
        let s = ds.stratified_subset(100, 3).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.label_histogram()[0], 70);
        assert_eq!(s.label_histogram()[1], 30);
        assert_eq!(ds.stratified_subset(100, 3).unwrap(), s);
    }
}
