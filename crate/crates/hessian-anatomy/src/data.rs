//! Dataset generation and ingestion with per-class indexing.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, DenseMatrix};

/// Labeled examples with a per-class position index.
///
/// `class_index[c]` lists the row positions of class `c` in ascending order;
/// together the lists partition `0..n`. The dataset is balanced when every
/// class has the same number of examples.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    class_index: Vec<Vec<usize>>,
    balanced: bool,
}

impl LabeledDataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Data(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if class_count == 0 {
            return Err(Error::Data("class count must be positive".into()));
        }
        if !features.is_finite() {
            return Err(Error::Data("features contain non-finite values".into()));
        }
        let mut class_index = vec![Vec::new(); class_count];
        for (pos, &label) in labels.iter().enumerate() {
            if label >= class_count {
                return Err(Error::Data(format!(
                    "label {label} at row {pos} out of range for {class_count} classes"
                )));
            }
            class_index[label].push(pos);
        }
        let first = class_index[0].len();
        let balanced = class_index.iter().all(|ix| ix.len() == first);
        Ok(Self { features, labels, class_index, balanced })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_index.len()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn example(&self, row: usize) -> &[f64] {
        self.features.row(row)
    }

    pub fn label(&self, row: usize) -> usize {
        self.labels[row]
    }

    pub fn class_index(&self) -> &[Vec<usize>] {
        &self.class_index
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.class_index.iter().map(Vec::len).collect()
    }

    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    /// Per-column standardization to zero mean and unit variance. Opt-in;
    /// constant columns are left centered but unscaled.
    pub fn standardized(&self) -> LabeledDataset {
        let n = self.len() as f64;
        let d = self.dim();
        let mut means = vec![0.0; d];
        for i in 0..self.len() {
            for (m, v) in means.iter_mut().zip(self.example(i)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut vars = vec![0.0; d];
        for i in 0..self.len() {
            for j in 0..d {
                let c = self.features.get(i, j) - means[j];
                vars[j] += c * c;
            }
        }
        let scales: Vec<f64> = vars
            .iter()
            .map(|&v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    1.0 / s
                } else {
                    1.0
                }
            })
            .collect();
        let features = DenseMatrix::from_fn(self.len(), d, |i, j| {
            (self.features.get(i, j) - means[j]) * scales[j]
        });
        LabeledDataset {
            features,
            labels: self.labels.clone(),
            class_index: self.class_index.clone(),
            balanced: self.balanced,
        }
    }
}

/// Balanced Gaussian mixture: class means at `separation` along random
/// orthonormal directions, isotropic noise of scale `noise_scale`. Rows are
/// class-major, deterministic for a given seed.
pub fn gen_gaussian_mixture(
    class_count: usize,
    d_in: usize,
    n_per_class: usize,
    separation: f64,
    noise_scale: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if class_count < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if n_per_class < 1 {
        return Err(Error::Config("need at least 1 example per class".into()));
    }
    if d_in < class_count {
        return Err(Error::Config(format!(
            "orthonormal mean placement needs d_in >= classes, got {d_in} < {class_count}"
        )));
    }
    if !separation.is_finite() || !noise_scale.is_finite() || separation < 0.0 || noise_scale < 0.0
    {
        return Err(Error::Config("separation and noise scale must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DenseMatrix::from_fn(d_in, class_count, |_, _| StandardNormal.sample(&mut rng));
    let directions = orthonormalize(&raw)?;
    let n = class_count * n_per_class;
    let mut features = DenseMatrix::zeros(n, d_in);
    let mut labels = Vec::with_capacity(n);
    for c in 0..class_count {
        for i in 0..n_per_class {
            let row = c * n_per_class + i;
            for j in 0..d_in {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.set(row, j, separation * directions.get(j, c) + noise_scale * noise);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, class_count)
}

/// Parse a CSV of `d_in` float columns followed by one integer label column.
/// Errors name the offending 1-based line.
pub fn load_csv(path: &Path, has_header: bool) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if idx == 0 && has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 2 {
            return Err(Error::Format(format!(
                "line {line_no}: expected at least one feature and a label, got {} cells",
                cells.len()
            )));
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Format(format!(
                    "line {line_no}: ragged row with {} cells, expected {w}",
                    cells.len()
                )));
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(cells.len() - 1);
        for cell in &cells[..cells.len() - 1] {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Format(format!("line {line_no}: non-numeric cell {:?}", cell.trim()))
            })?;
            row.push(v);
        }
        let label_cell = cells[cells.len() - 1].trim();
        let label: i64 = label_cell.parse().map_err(|_| {
            Error::Format(format!("line {line_no}: non-integer label {label_cell:?}"))
        })?;
        if label < 0 {
            return Err(Error::Format(format!("line {line_no}: negative label {label}")));
        }
        rows.push(row);
        labels.push(label as usize);
    }
    if rows.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }
    let d = rows[0].len();
    let n = rows.len();
    let features = DenseMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let class_count = labels.iter().copied().max().unwrap() + 1;
    LabeledDataset::new(features, labels, class_count)
}

/// Write a dataset as CSV (features then label). Floats use the shortest
/// round-trip form, so a load of the written file reproduces the values
/// exactly.
pub fn save_csv(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..dataset.len() {
        for v in dataset.example(i) {
            out.push_str(&format!("{v}"));
            out.push(',');
        }
        out.push_str(&format!("{}\n", dataset.label(i)));
    }
    fs::write(path, out)?;
    Ok(())
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> IdxReader<'a> {
    fn u32_be(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::Format(format!("{}: truncated header", self.path)));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn body(&self, expected: usize) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < expected {
            return Err(Error::Format(format!(
                "{}: truncated body, expected {expected} bytes, found {}",
                self.path,
                rest.len()
            )));
        }
        Ok(&rest[..expected])
    }
}

/// Load an IDX image/label file pair (big-endian, magics 0x00000803 and
/// 0x00000801). Pixels are scaled to `[0, 1]`. With `limit_per_class`, the
/// first `limit` occurrences of each class (in file order) are kept.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    limit_per_class: Option<usize>,
) -> Result<LabeledDataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let mut ir = IdxReader {
        bytes: &image_bytes,
        pos: 0,
        path: images_path.display().to_string(),
    };
    let magic = ir.u32_be()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}",
            ir.path
        )));
    }
    let count = ir.u32_be()? as usize;
    let rows = ir.u32_be()? as usize;
    let cols = ir.u32_be()? as usize;
    let pixels = ir.body(count * rows * cols)?;

    let mut lr = IdxReader {
        bytes: &label_bytes,
        pos: 0,
        path: labels_path.display().to_string(),
    };
    let lmagic = lr.u32_be()?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {lmagic:#010x}, expected {IDX_LABEL_MAGIC:#010x}",
            lr.path
        )));
    }
    let lcount = lr.u32_be()? as usize;
    if lcount != count {
        return Err(Error::Format(format!(
            "count mismatch: {count} images but {lcount} labels"
        )));
    }
    let raw_labels = lr.body(count)?;

    let class_count = raw_labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    if class_count == 0 {
        return Err(Error::Format("empty IDX files".into()));
    }
    let d = rows * cols;
    let mut taken = vec![0usize; class_count];
    let mut keep: Vec<usize> = Vec::new();
    for (i, &label) in raw_labels.iter().enumerate() {
        let c = label as usize;
        if limit_per_class.is_none_or(|limit| taken[c] < limit) {
            taken[c] += 1;
            keep.push(i);
        }
    }
    let features = DenseMatrix::from_fn(keep.len(), d, |i, j| {
        f64::from(pixels[keep[i] * d + j]) / 255.0
    });
    let labels: Vec<usize> = keep.iter().map(|&i| raw_labels[i] as usize).collect();
    LabeledDataset::new(features, labels, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn mixture_counts_and_balance() {
        let ds = gen_gaussian_mixture(10, 12, 13, 3.0, 1.0, 1).unwrap();
        assert_eq!(ds.len(), 130);
        assert!(ds.is_balanced());
        assert_eq!(ds.class_counts(), vec![13; 10]);
    }

    #[test]
    fn mixture_deterministic() {
        let a = gen_gaussian_mixture(3, 5, 7, 2.0, 0.5, 42).unwrap();
        let b = gen_gaussian_mixture(3, 5, 7, 2.0, 0.5, 42).unwrap();
        assert_eq!(a.features().data(), b.features().data());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn mixture_rejects_narrow_input_space() {
        assert!(matches!(
            gen_gaussian_mixture(5, 3, 4, 1.0, 1.0, 0),
            Err(Error::Config(_))
        ));
    }

    /// Two-sample Kolmogorov-Smirnov statistic on a 1-d sample pair.
    fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let mut ia = 0;
        let mut ib = 0;
        let mut d = 0.0_f64;
        while ia < a.len() && ib < b.len() {
            if a[ia] <= b[ib] {
                ia += 1;
            } else {
                ib += 1;
            }
            d = d.max((ia as f64 / na - ib as f64 / nb).abs());
        }
        d
    }

    #[test]
    fn zero_separation_classes_indistinguishable() {
        let ds = gen_gaussian_mixture(2, 5, 5000, 0.0, 1.0, 9).unwrap();
        // project onto a fixed direction and compare the class-conditional
        // samples with a KS test at alpha = 0.01
        let dir = [0.3, -0.2, 0.5, 0.1, -0.7];
        let project = |rows: &[usize]| -> Vec<f64> {
            rows.iter()
                .map(|&r| ds.example(r).iter().zip(dir).map(|(x, w)| x * w).sum())
                .collect()
        };
        let d = ks_statistic(project(&ds.class_index()[0]), project(&ds.class_index()[1]));
        let critical = 1.63 * (2.0 / 5000.0_f64).sqrt();
        assert!(d < critical, "KS statistic {d} unexpectedly large (critical {critical})");
    }

    #[test]
    fn csv_hand_written_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "1.5,-2.0,0\n0.25,3.0,1\n-1.0,0.5,1\n").unwrap();
        let ds = load_csv(&path, false).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels(), &[0, 1, 1]);
        assert_eq!(ds.example(0), &[1.5, -2.0]);
        assert_eq!(ds.example(2), &[-1.0, 0.5]);
        assert_eq!(ds.class_index()[1], vec![1, 2]);
    }

    #[test]
    fn csv_bad_cell_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1.0,2.0,0\n1.0,oops,1\n").unwrap();
        match load_csv(&path, false) {
            Err(Error::Format(msg)) => assert!(msg.contains("line 2"), "message: {msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mix.csv");
        let ds = gen_gaussian_mixture(3, 4, 5, 2.5, 1.0, 7).unwrap();
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path, false).unwrap();
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.features().data(), ds.features().data());
    }

    fn write_idx_pair(
        dir: &Path,
        images: &[[u8; 4]],
        labels: &[u8],
        image_magic: u32,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let img_path = dir.join("images.idx");
        let lbl_path = dir.join("labels.idx");
        let mut f = std::fs::File::create(&img_path).unwrap();
        f.write_all(&image_magic.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
        let mut f = std::fs::File::create(&lbl_path).unwrap();
        f.write_all(&IDX_LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (img_path, lbl_path)
    }

    #[test]
    fn idx_wrong_magic_names_expected_constant() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = write_idx_pair(dir.path(), &[[0, 0, 0, 0]], &[0], 0xdead_beef);
        match load_idx(&img, &lbl, None) {
            Err(Error::Format(msg)) => {
                assert!(msg.contains("0x00000803"), "message: {msg}")
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn idx_limit_per_class_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let images: Vec<[u8; 4]> = (0..6).map(|i| [255, 0, 128, i as u8]).collect();
        let labels = [0u8, 1, 0, 1, 0, 1];
        let (img, lbl) = write_idx_pair(dir.path(), &images, &labels, IDX_IMAGE_MAGIC);
        let ds = load_idx(&img, &lbl, Some(1)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.example(0)[0], 1.0);
        assert_eq!(ds.example(0)[1], 0.0);
        let full = load_idx(&img, &lbl, None).unwrap();
        assert_eq!(full.len(), 6);
        assert!(full.is_balanced());
        let limited = load_idx(&img, &lbl, Some(10)).unwrap();
        assert_eq!(limited.len(), 6);
    }

    #[test]
    fn idx_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = write_idx_pair(dir.path(), &[[0, 0, 0, 0]], &[0], IDX_IMAGE_MAGIC);
        let lbl2 = dir.path().join("labels2.idx");
        let mut f = std::fs::File::create(&lbl2).unwrap();
        f.write_all(&IDX_LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[0, 1]).unwrap();
        match load_idx(&img, &lbl2, None) {
            Err(Error::Format(msg)) => assert!(msg.contains("mismatch"), "message: {msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn standardize_is_opt_in_and_centers() {
        let ds = gen_gaussian_mixture(2, 3, 50, 1.0, 2.0, 3).unwrap();
        let std = ds.standardized();
        for j in 0..std.dim() {
            let mean: f64 =
                (0..std.len()).map(|i| std.features().get(i, j)).sum::<f64>() / std.len() as f64;
            assert!(mean.abs() < 1e-12);
        }
        // original untouched
        assert!(ds.features().data() != std.features().data());
    }
}
