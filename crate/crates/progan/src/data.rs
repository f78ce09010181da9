//! Dataset ingestion and batch serving.
//!
//! A directory tree of 8-bit RGB images is indexed once (deterministic
//! lexicographic order, undecodable or unsuitable files reported and
//! skipped). Each served image is center-cropped to a square, area-resampled
//! to the 64x64 master resolution, mapped to `[-1, 1]`, augmented with exact
//! pixel permutations (flips and quarter turns), and average-pooled down to
//! the requesting phase's resolution. While a level fades in, real batches
//! are blended between neighboring resolutions exactly like the generator's
//! output, so the critic sees distribution-matched inputs.
//!
//! Batches for one epoch are produced either synchronously (deterministic
//! single-producer mode) or by a pool of worker threads feeding a bounded
//! channel. Augmentation draws are keyed by `(seed, epoch, batch)`, so both
//! modes yield bit-identical batches in the same order.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;

use crate::networks::PhaseState;
use crate::rng::Rng;
use crate::tensor::{kernels, Tensor, TensorError};

/// Master resolution every image is prepared at.
pub const MASTER_RES: usize = 64;

const SHUFFLE_TAG: u64 = 0x5348_5546; // "SHUF"
const AUG_TAG: u64 = 0x4155_474d; // "AUGM"

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    /// Directory contained no usable images.
    NoImages(PathBuf),
    /// Image smaller than the master resolution.
    Undersized { width: u32, height: u32 },
    Decode(String),
    Tensor(TensorError),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io(e) => write!(f, "i/o error: {e}"),
            DataError::NoImages(p) => write!(f, "no images found under {}", p.display()),
            DataError::Undersized { width, height } => {
                write!(f, "image {width}x{height} smaller than {MASTER_RES}x{MASTER_RES}")
            }
            DataError::Decode(msg) => write!(f, "decode failed: {msg}"),
            DataError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}

impl From<TensorError> for DataError {
    fn from(e: TensorError) -> Self {
        DataError::Tensor(e)
    }
}

/// One indexed image.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

/// Immutable view of the training images.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub records: Vec<ImageRecord>,
    pub seed: u64,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Files rejected during ingest, with reasons.
#[derive(Debug, Default, Clone)]
pub struct SkipReport {
    pub entries: Vec<(PathBuf, String)>,
}

impl SkipReport {
    /// One line per rejected file: `<path>\t<reason>`.
    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        for (p, reason) in &self.entries {
            writeln!(f, "{}\t{reason}", p.display())?;
        }
        Ok(())
    }
}

fn collect_image_paths(root: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            collect_image_paths(&path, out)?;
        } else if let Some(ext) = path.extension().and_then(|e| e.to_str()) {
            if matches!(ext.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg") {
                out.push(path);
            }
        }
    }
    Ok(())
}

/// Indexes every decodable 8-bit RGB image under `root`.
///
/// Files that fail to decode, are not 8-bit RGB, or are smaller than the
/// master resolution are listed in the skip report instead.
pub fn ingest(root: &Path, seed: u64) -> Result<(DatasetIndex, SkipReport), DataError> {
    let mut paths = Vec::new();
    collect_image_paths(root, &mut paths)?;
    paths.sort_by(|a, b| a.as_os_str().cmp(b.as_os_str()));

    let mut records = Vec::new();
    let mut skipped = SkipReport::default();
    for path in paths {
        match image::open(&path) {
            Ok(image::DynamicImage::ImageRgb8(img)) => {
                let (w, h) = (img.width(), img.height());
                if (w as usize) < MASTER_RES || (h as usize) < MASTER_RES {
                    skipped.entries.push((
                        path,
                        format!("{w}x{h} smaller than {MASTER_RES}x{MASTER_RES}"),
                    ));
                } else {
                    records.push(ImageRecord {
                        path,
                        width: w,
                        height: h,
                    });
                }
            }
            Ok(other) => {
                skipped.entries.push((
                    path,
                    format!("not 8-bit RGB (decoded as {:?})", other.color()),
                ));
            }
            Err(e) => {
                skipped.entries.push((path, format!("undecodable: {e}")));
            }
        }
    }
    if records.is_empty() {
        return Err(DataError::NoImages(root.to_path_buf()));
    }
    Ok((
        DatasetIndex {
            root: root.to_path_buf(),
            records,
            seed,
        },
        skipped,
    ))
}

/// 8-bit value to `[-1, 1]`.
pub fn normalize_u8(v: f64) -> f64 {
    v / 127.5 - 1.0
}

/// Center-crops to the largest square, area-resamples to the master
/// resolution, and normalizes to `[-1, 1]`. Output shape `[64, 64, 3]`.
pub fn prepare(img: &image::RgbImage) -> Result<Tensor<f32>, DataError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let side = w.min(h);
    if side < MASTER_RES {
        return Err(DataError::Undersized {
            width: img.width(),
            height: img.height(),
        });
    }
    let x0 = (w - side) / 2;
    let y0 = (h - side) / 2;

    // box-filter area resample in f64, exact when side == MASTER_RES
    let sf = side as f64 / MASTER_RES as f64;
    let area = sf * sf;
    let mut out = Tensor::<f32>::zeros(vec![MASTER_RES, MASTER_RES, 3]);
    let od = out.data_mut();
    for oy in 0..MASTER_RES {
        let ys = oy as f64 * sf;
        let ye = (oy + 1) as f64 * sf;
        for ox in 0..MASTER_RES {
            let xs = ox as f64 * sf;
            let xe = (ox + 1) as f64 * sf;
            let mut acc = [0.0f64; 3];
            let mut sy = ys.floor() as usize;
            while (sy as f64) < ye {
                let wy = (ye.min((sy + 1) as f64) - ys.max(sy as f64)).max(0.0);
                if wy > 0.0 {
                    let mut sx = xs.floor() as usize;
                    while (sx as f64) < xe {
                        let wx = (xe.min((sx + 1) as f64) - xs.max(sx as f64)).max(0.0);
                        if wx > 0.0 {
                            let px = img.get_pixel((x0 + sx) as u32, (y0 + sy) as u32);
                            let wgt = wy * wx;
                            acc[0] += px[0] as f64 * wgt;
                            acc[1] += px[1] as f64 * wgt;
                            acc[2] += px[2] as f64 * wgt;
                        }
                        sx += 1;
                    }
                }
                sy += 1;
            }
            for c in 0..3 {
                od[(oy * MASTER_RES + ox) * 3 + c] = normalize_u8(acc[c] / area) as f32;
            }
        }
    }
    Ok(out)
}

fn flip_h(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape().to_vec();
    let (w, c) = (s[1], s[2]);
    Tensor::from_fn(s.clone(), |i| {
        let ci = i % c;
        let wi = (i / c) % w;
        let hi = i / (c * w);
        t.data()[(hi * w + (w - 1 - wi)) * c + ci]
    })
}

fn flip_v(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape().to_vec();
    let (h, w, c) = (s[0], s[1], s[2]);
    Tensor::from_fn(s.clone(), |i| {
        let ci = i % c;
        let wi = (i / c) % w;
        let hi = i / (c * w);
        t.data()[((h - 1 - hi) * w + wi) * c + ci]
    })
}

/// Quarter turn clockwise (square images only).
fn rot90(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape().to_vec();
    let (h, w, c) = (s[0], s[1], s[2]);
    debug_assert_eq!(h, w);
    Tensor::from_fn(s.clone(), |i| {
        let ci = i % c;
        let wi = (i / c) % w;
        let hi = i / (c * w);
        // out[hi][wi] = in[h - 1 - wi][hi]
        t.data()[((h - 1 - wi) * w + hi) * c + ci]
    })
}

/// Random flips plus a quarter-turn count; exact pixel permutations only.
///
/// Draw order per image: horizontal flip, vertical flip, rotation count.
pub fn augment(t: &Tensor<f32>, rng: &mut Rng) -> Tensor<f32> {
    let mut out = t.clone();
    if rng.next_f64() < 0.5 {
        out = flip_h(&out);
    }
    if rng.next_f64() < 0.5 {
        out = flip_v(&out);
    }
    let quarter_turns = rng.next_u64() % 4;
    for _ in 0..quarter_turns {
        out = rot90(&out);
    }
    out
}

/// Batch of normalized real images at one phase's resolution.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    /// `[batch, r, r, 3]`, values in `[-1, 1]`.
    pub tensor: Tensor<f32>,
}

impl ImageBatch {
    pub fn resolution(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn load_master(record: &ImageRecord) -> Result<Tensor<f32>, DataError> {
    let img = image::open(&record.path).map_err(|e| DataError::Decode(e.to_string()))?;
    let rgb = match img {
        image::DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(DataError::Decode(format!(
                "{}: not 8-bit RGB ({:?})",
                record.path.display(),
                other.color()
            )))
        }
    };
    prepare(&rgb)
}

fn halve(batch: &Tensor<f32>) -> Result<Tensor<f32>, DataError> {
    Ok(kernels::downsample_avg_2x(batch)?)
}

/// Decodes, prepares, and augments the given records, then serves them at
/// the phase resolution, fade-blending with the next-lower resolution while
/// `alpha < 1`.
pub fn load_batch(
    index: &DatasetIndex,
    ids: &[usize],
    phase: &PhaseState,
    rng: &mut Rng,
) -> Result<ImageBatch, DataError> {
    let n = ids.len();
    let mut stacked = Tensor::<f32>::zeros(vec![n, MASTER_RES, MASTER_RES, 3]);
    let stride = MASTER_RES * MASTER_RES * 3;
    for (slot, &id) in ids.iter().enumerate() {
        let master = load_master(&index.records[id])?;
        let augmented = augment(&master, rng);
        stacked.data_mut()[slot * stride..(slot + 1) * stride]
            .copy_from_slice(augmented.data());
    }

    let mut at_res = stacked;
    let halvings = (MASTER_RES / phase.resolution()).trailing_zeros();
    for _ in 0..halvings {
        at_res = halve(&at_res)?;
    }

    let tensor = if phase.fading() {
        let lower = halve(&at_res)?;
        let upsampled = kernels::upsample_nearest_2x(&lower)?;
        let a = phase.alpha as f32;
        let data = at_res
            .data()
            .iter()
            .zip(upsampled.data())
            .map(|(&hi, &lo)| a * hi + (1.0 - a) * lo)
            .collect();
        Tensor::new(at_res.shape().to_vec(), data)?
    } else {
        at_res
    };
    Ok(ImageBatch { tensor })
}

/// Draws `batch_size` distinct records (uniformly, without replacement when
/// the dataset allows) and serves them at the phase resolution.
pub fn batch_at_resolution(
    index: &DatasetIndex,
    phase: &PhaseState,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<ImageBatch, DataError> {
    let n = index.len();
    let ids: Vec<usize> = if batch_size <= n {
        let mut pool: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut pool);
        pool.truncate(batch_size);
        pool
    } else {
        (0..batch_size).map(|_| rng.next_below(n)).collect()
    };
    load_batch(index, &ids, phase, rng)
}

/// Shuffled record ids for one epoch, chunked into full batches (the final
/// partial batch is dropped).
pub fn epoch_plan(index: &DatasetIndex, epoch: u64, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..index.len()).collect();
    let mut rng = Rng::derive(index.seed, &[SHUFFLE_TAG, epoch]);
    rng.shuffle(&mut order);
    order
        .chunks_exact(batch_size)
        .map(|c| c.to_vec())
        .collect()
}

fn augment_rng(seed: u64, epoch: u64, batch_idx: u64) -> Rng {
    Rng::derive(seed, &[AUG_TAG, epoch, batch_idx])
}

/// Caps worker parallelism via the `PGAN_NUM_THREADS` environment variable.
pub fn effective_workers(requested: usize) -> usize {
    let cap = std::env::var("PGAN_NUM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(usize::MAX);
    requested.clamp(1, cap.max(1))
}

enum LoaderMode {
    /// Synchronous single producer.
    Serial {
        index: Arc<DatasetIndex>,
        plan: Vec<Vec<usize>>,
        epoch: u64,
        phase: PhaseState,
        next: usize,
    },
    /// Worker pool feeding a bounded channel; batches are reordered so the
    /// consumer sees them in plan order.
    Parallel {
        rx: mpsc::Receiver<(usize, Result<ImageBatch, DataError>)>,
        pending: std::collections::BTreeMap<usize, Result<ImageBatch, DataError>>,
        next: usize,
        total: usize,
        handles: Vec<std::thread::JoinHandle<()>>,
    },
}

/// Iterator over one epoch's batches.
pub struct Loader {
    mode: LoaderMode,
}

impl Loader {
    /// Builds the loader for `epoch`. `workers == 1` or `deterministic`
    /// selects the synchronous single-producer mode.
    pub fn epoch(
        index: &DatasetIndex,
        epoch: u64,
        phase: PhaseState,
        batch_size: usize,
        workers: usize,
        deterministic: bool,
    ) -> Loader {
        let plan = epoch_plan(index, epoch, batch_size);
        let workers = effective_workers(if deterministic { 1 } else { workers });
        let index = Arc::new(index.clone());
        if workers <= 1 || plan.len() <= 1 {
            return Loader {
                mode: LoaderMode::Serial {
                    index,
                    plan,
                    epoch,
                    phase,
                    next: 0,
                },
            };
        }

        let total = plan.len();
        let (tx, rx) = mpsc::sync_channel(2 * workers);
        let plan = Arc::new(plan);
        let mut handles = Vec::new();
        for worker in 0..workers {
            let tx = tx.clone();
            let plan = Arc::clone(&plan);
            let index = Arc::clone(&index);
            handles.push(std::thread::spawn(move || {
                let mut i = worker;
                while i < plan.len() {
                    let mut rng = augment_rng(index.seed, epoch, i as u64);
                    let batch = load_batch(&index, &plan[i], &phase, &mut rng);
                    if tx.send((i, batch)).is_err() {
                        return; // consumer dropped
                    }
                    i += workers;
                }
            }));
        }
        Loader {
            mode: LoaderMode::Parallel {
                rx,
                pending: Default::default(),
                next: 0,
                total,
                handles,
            },
        }
    }

    /// Number of batches this epoch will serve.
    pub fn batches(&self) -> usize {
        match &self.mode {
            LoaderMode::Serial { plan, .. } => plan.len(),
            LoaderMode::Parallel { total, .. } => *total,
        }
    }
}

impl Iterator for Loader {
    type Item = Result<ImageBatch, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.mode {
            LoaderMode::Serial {
                index,
                plan,
                epoch,
                phase,
                next,
            } => {
                if *next >= plan.len() {
                    return None;
                }
                let i = *next;
                *next += 1;
                let mut rng = augment_rng(index.seed, *epoch, i as u64);
                Some(load_batch(index, &plan[i], phase, &mut rng))
            }
            LoaderMode::Parallel {
                rx,
                pending,
                next,
                total,
                ..
            } => {
                if *next >= *total {
                    return None;
                }
                loop {
                    if let Some(batch) = pending.remove(next) {
                        *next += 1;
                        return Some(batch);
                    }
                    match rx.recv() {
                        Ok((i, batch)) => {
                            pending.insert(i, batch);
                        }
                        Err(_) => return None,
                    }
                }
            }
        }
    }
}

impl Drop for Loader {
    fn drop(&mut self) {
        if let LoaderMode::Parallel { rx, handles, .. } = &mut self.mode {
            // drain so blocked senders can finish, then join
            while rx.try_recv().is_ok() {}
            for h in handles.drain(..) {
                let _ = h.join();
            }
        }
    }
}
