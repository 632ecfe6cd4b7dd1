//! Deterministic procedural scenes: grayscale images with rectangles, discs
//! and rings over a noisy background, plus a crowded mode that forces
//! heavily overlapping same-class pairs.
//!
//! Datasets are stored as JSON lines holding seeds and annotations only;
//! images are re-rendered from their seed on read, so files stay small and
//! tests stay hermetic. Scene generation is pure per seed and safe to
//! parallelize across seeds.

use crate::geometry::BBox;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

/// Dataset file schema; bump on any incompatible record change.
pub const DATASET_SCHEMA: u32 = 1;

/// An annotated object: tight bounding box of the rendered support plus its
/// class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: usize,
}

#[derive(Debug, Error)]
pub enum ScenegenError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("could not satisfy crowd IoU target {target} after {attempts} attempts")]
    CrowdUnsatisfiable { target: f64, attempts: usize },
    #[error("dataset I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset parse error at line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("dataset line {line} was generated under a different config (hash {found:#x}, expected {expected:#x})")]
    ConfigHashMismatch {
        line: usize,
        found: u64,
        expected: u64,
    },
    #[error("dataset file is empty or missing its header line")]
    MissingHeader,
}

/// Knobs of the procedural generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Square image side, pixels.
    pub image_size: usize,
    /// Class count; classes are rectangle (0), disc (1), ring (2).
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object bounding-size range, pixels.
    pub min_size: f64,
    pub max_size: f64,
    pub crowd_mode: bool,
    /// Minimum same-class pair IoU forced in crowd mode.
    pub crowd_iou_target: f64,
    /// Amplitude of the additive uniform noise on [0,1] images.
    pub noise_level: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_classes: 3,
            min_objects: 1,
            max_objects: 6,
            min_size: 8.0,
            max_size: 40.0,
            crowd_mode: false,
            crowd_iou_target: 0.6,
            noise_level: 0.1,
        }
    }
}

impl SceneConfig {
    /// The crowded-benchmark variant of the defaults.
    pub fn crowded() -> Self {
        Self {
            crowd_mode: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ScenegenError> {
        if self.num_classes == 0 || self.num_classes > 3 {
            return Err(ScenegenError::InvalidConfig(format!(
                "num_classes must be 1..=3, got {}",
                self.num_classes
            )));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(ScenegenError::InvalidConfig(format!(
                "bad object count range {}..={}",
                self.min_objects, self.max_objects
            )));
        }
        if !(self.min_size >= 2.0
            && self.min_size <= self.max_size
            && self.max_size <= self.image_size as f64)
        {
            return Err(ScenegenError::InvalidConfig(format!(
                "bad size range {}..={} for image size {}",
                self.min_size, self.max_size, self.image_size
            )));
        }
        if self.noise_level < 0.0 || self.noise_level > 1.0 {
            return Err(ScenegenError::InvalidConfig(format!(
                "noise level {} outside [0,1]",
                self.noise_level
            )));
        }
        Ok(())
    }
}

/// One rendered scene: [1, size, size] image in [0,1] plus annotations.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Tensor,
    pub gts: Vec<GroundTruth>,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { x1: f64, y1: f64, x2: f64, y2: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
    Ring { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn class_id(&self) -> usize {
        match self {
            Shape::Rect { .. } => 0,
            Shape::Disc { .. } => 1,
            Shape::Ring { .. } => 2,
        }
    }

    /// Intensity at a pixel center, or None outside the support. All three
    /// classes share the same fill level, so class identity can only be read
    /// from spatial structure (corners, curvature, the ring's hole), never
    /// from a brightness statistic.
    fn intensity(&self, x: f64, y: f64) -> Option<f64> {
        const FILL: f64 = 0.85;
        match *self {
            Shape::Rect { x1, y1, x2, y2 } => {
                (x >= x1 && x <= x2 && y >= y1 && y <= y2).then_some(FILL)
            }
            Shape::Disc { cx, cy, r } => {
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                (d <= r).then_some(FILL)
            }
            Shape::Ring { cx, cy, r } => {
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                (d <= r && d >= 0.55 * r).then_some(FILL)
            }
        }
    }
}

fn sample_shape(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Shape {
    let class = rng.gen_range(0..cfg.num_classes);
    let s = cfg.image_size as f64;
    match class {
        0 => {
            let w = rng.gen_range(cfg.min_size..=cfg.max_size);
            let h = rng.gen_range(cfg.min_size..=cfg.max_size);
            let x1 = rng.gen_range(0.0..=(s - w));
            let y1 = rng.gen_range(0.0..=(s - h));
            Shape::Rect {
                x1,
                y1,
                x2: x1 + w,
                y2: y1 + h,
            }
        }
        c => {
            let d = rng.gen_range(cfg.min_size..=cfg.max_size);
            let r = d / 2.0;
            let cx = rng.gen_range(r..=(s - r));
            let cy = rng.gen_range(r..=(s - r));
            if c == 1 {
                Shape::Disc { cx, cy, r }
            } else {
                Shape::Ring { cx, cy, r }
            }
        }
    }
}

/// Renders a shape's support on its own layer and returns the tight
/// bounding box of the touched pixels. Occlusion by later shapes never
/// changes an annotation: the box is the shape's own support.
fn render_shape(shape: &Shape, size: usize, canvas: &mut [f64]) -> Option<BBox> {
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (usize::MAX, usize::MAX, 0usize, 0usize);
    let mut touched = false;
    for py in 0..size {
        for px in 0..size {
            let x = px as f64 + 0.5;
            let y = py as f64 + 0.5;
            if let Some(v) = shape.intensity(x, y) {
                canvas[py * size + px] = v;
                touched = true;
                min_x = min_x.min(px);
                min_y = min_y.min(py);
                max_x = max_x.max(px);
                max_y = max_y.max(py);
            }
        }
    }
    touched.then(|| {
        BBox::new(
            min_x as f64,
            min_y as f64,
            (max_x + 1) as f64,
            (max_y + 1) as f64,
        )
    })
}

struct SceneBuilder {
    size: usize,
    pixels: Vec<f64>,
    gts: Vec<GroundTruth>,
}

impl SceneBuilder {
    fn new(size: usize) -> Self {
        Self {
            size,
            pixels: vec![0.0; size * size],
            gts: Vec::new(),
        }
    }

    /// Bounded attempts to render a shape with non-empty support.
    fn try_add(&mut self, rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Option<BBox> {
        for _ in 0..20 {
            let shape = sample_shape(rng, cfg);
            if let Some(bbox) = render_shape(&shape, self.size, &mut self.pixels) {
                self.gts.push(GroundTruth {
                    bbox,
                    class_id: shape.class_id(),
                });
                return Some(bbox);
            }
        }
        None
    }

    fn finish(mut self, rng: &mut ChaCha8Rng, noise: f64) -> Scene {
        if noise > 0.0 {
            for p in &mut self.pixels {
                *p = (*p + rng.gen_range(0.0..noise)).min(1.0);
            }
        }
        Scene {
            image: Tensor::new(vec![1, self.size, self.size], self.pixels),
            gts: self.gts,
        }
    }
}

/// Renders a scene deterministically from its seed. Placement retries
/// internally and gives up to fewer objects after bounded attempts, so the
/// call itself cannot fail on a valid config.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut builder = SceneBuilder::new(cfg.image_size);
    for _ in 0..count {
        builder.try_add(&mut rng, cfg);
    }
    builder.finish(&mut rng, cfg.noise_level)
}

/// Like [`generate_scene`] but guarantees at least one same-class pair of
/// boxes with IoU at or above `crowd_iou_target`. A target of 0 (or below)
/// degenerates to the plain generator.
pub fn generate_crowded_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene, ScenegenError> {
    if cfg.crowd_iou_target <= 0.0 {
        return Ok(generate_scene(seed, cfg));
    }
    if cfg.crowd_iou_target > 1.0 {
        return Err(ScenegenError::CrowdUnsatisfiable {
            target: cfg.crowd_iou_target,
            attempts: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(cfg.min_objects.max(2)..=cfg.max_objects.max(2));
    let mut builder = SceneBuilder::new(cfg.image_size);

    let base_bbox = builder
        .try_add(&mut rng, cfg)
        .expect("sizes >= 2px always touch a pixel");
    let base = builder.gts[0].clone();

    // Partner: same class, jittered copy pulled toward the base until the
    // rendered boxes overlap enough. The zero-offset copy has IoU 1, so the
    // loop terminates within the attempt budget.
    const ATTEMPTS: usize = 64;
    let mut placed = false;
    for attempt in 0..ATTEMPTS {
        // Shrink the jitter as attempts run out; the last attempt is an
        // exact duplicate.
        let shrink = 1.0 - attempt as f64 / (ATTEMPTS - 1) as f64;
        let max_off = 0.35 * base_bbox.width().min(base_bbox.height()) * shrink;
        let dx = rng.gen_range(-1.0..=1.0) * max_off;
        let dy = rng.gen_range(-1.0..=1.0) * max_off;
        let scale = 1.0 + rng.gen_range(-0.15..=0.15) * shrink;
        let shape = shifted_copy(&base, base_bbox, dx, dy, scale, cfg);
        let mut layer = vec![0.0; cfg.image_size * cfg.image_size];
        if let Some(bbox) = render_shape(&shape, cfg.image_size, &mut layer) {
            if crate::geometry::iou(&bbox, &base_bbox) >= cfg.crowd_iou_target {
                for (dst, &src) in builder.pixels.iter_mut().zip(&layer) {
                    if src > 0.0 {
                        *dst = src;
                    }
                }
                builder.gts.push(GroundTruth {
                    bbox,
                    class_id: shape.class_id(),
                });
                placed = true;
                break;
            }
        }
    }
    if !placed {
        return Err(ScenegenError::CrowdUnsatisfiable {
            target: cfg.crowd_iou_target,
            attempts: ATTEMPTS,
        });
    }

    for _ in 2..count {
        builder.try_add(&mut rng, cfg);
    }
    Ok(builder.finish(&mut rng, cfg.noise_level))
}

/// A same-class copy of `base` shifted by (dx, dy) and rescaled, clamped
/// into the image.
fn shifted_copy(
    base: &GroundTruth,
    bbox: BBox,
    dx: f64,
    dy: f64,
    scale: f64,
    cfg: &SceneConfig,
) -> Shape {
    let s = cfg.image_size as f64;
    let c = bbox.center();
    match base.class_id {
        0 => {
            let w = (bbox.width() * scale).clamp(cfg.min_size, cfg.max_size);
            let h = (bbox.height() * scale).clamp(cfg.min_size, cfg.max_size);
            let cx = (c.x + dx).clamp(w / 2.0, s - w / 2.0);
            let cy = (c.y + dy).clamp(h / 2.0, s - h / 2.0);
            Shape::Rect {
                x1: cx - w / 2.0,
                y1: cy - h / 2.0,
                x2: cx + w / 2.0,
                y2: cy + h / 2.0,
            }
        }
        class => {
            let r = (bbox.width().min(bbox.height()) / 2.0 * scale)
                .clamp(cfg.min_size / 2.0, cfg.max_size / 2.0);
            let cx = (c.x + dx).clamp(r, s - r);
            let cy = (c.y + dy).clamp(r, s - r);
            if class == 1 {
                Shape::Disc { cx, cy, r }
            } else {
                Shape::Ring { cx, cy, r }
            }
        }
    }
}

/// Dispatch on `crowd_mode`; the form used by dataset writing.
pub fn generate(seed: u64, cfg: &SceneConfig) -> Result<Scene, ScenegenError> {
    if cfg.crowd_mode {
        generate_crowded_scene(seed, cfg)
    } else {
        Ok(generate_scene(seed, cfg))
    }
}

/// FNV-1a over the canonical JSON serialization of the config; stable
/// across runs and platforms.
pub fn config_hash(cfg: &SceneConfig) -> u64 {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in json.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    schema: u32,
    config: SceneConfig,
    config_hash: u64,
    scenes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneRecord {
    seed: u64,
    config_hash: u64,
    gts: Vec<GroundTruth>,
}

/// In-memory dataset handle: annotations are stored, images are re-rendered
/// from their seed on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SceneConfig,
    pub entries: Vec<DatasetEntry>,
}

#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub seed: u64,
    pub gts: Vec<GroundTruth>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Re-renders the image of scene `idx` from its seed.
    pub fn render(&self, idx: usize) -> Tensor {
        generate(self.entries[idx].seed, &self.config)
            .expect("stored seed rendered once already")
            .image
    }

    /// Regenerates `n` scenes and checks the stored annotations match;
    /// for tests and data sanity checks.
    pub fn verify(&self, n: usize) -> bool {
        self.entries.iter().take(n).all(|e| {
            generate(e.seed, &self.config)
                .map(|s| s.gts == e.gts)
                .unwrap_or(false)
        })
    }
}

/// Outcome of a dataset write: crowd-mode seeds that could not satisfy the
/// IoU target are skipped and reported, not fatal.
#[derive(Debug, Default)]
pub struct WriteReport {
    pub written: usize,
    pub skipped_seeds: Vec<u64>,
}

/// Writes one JSONL file: a header line with the config, then one record
/// per scene holding seed, config hash and annotations.
pub fn write_dataset(
    path: &Path,
    seeds: &[u64],
    cfg: &SceneConfig,
) -> Result<WriteReport, ScenegenError> {
    cfg.validate()?;
    let hash = config_hash(cfg);
    let mut report = WriteReport::default();
    let mut records = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        match generate(seed, cfg) {
            Ok(scene) => records.push(SceneRecord {
                seed,
                config_hash: hash,
                gts: scene.gts,
            }),
            Err(ScenegenError::CrowdUnsatisfiable { .. }) => report.skipped_seeds.push(seed),
            Err(e) => return Err(e),
        }
    }

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = DatasetHeader {
        schema: DATASET_SCHEMA,
        config: cfg.clone(),
        config_hash: hash,
        scenes: records.len(),
    };
    serde_json::to_writer(&mut file, &header).map_err(|e| ScenegenError::Parse {
        line: 1,
        source: e,
    })?;
    file.write_all(b"\n")?;
    for rec in &records {
        serde_json::to_writer(&mut file, rec).map_err(|e| ScenegenError::Parse {
            line: 0,
            source: e,
        })?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    report.written = records.len();
    Ok(report)
}

/// Reads a dataset written by [`write_dataset`], checking the per-record
/// config hashes against the header.
pub fn read_dataset(path: &Path) -> Result<Dataset, ScenegenError> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines.next().ok_or(ScenegenError::MissingHeader)??;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| ScenegenError::Parse {
            line: 1,
            source: e,
        })?;
    let expected = config_hash(&header.config);
    if header.config_hash != expected {
        return Err(ScenegenError::ConfigHashMismatch {
            line: 1,
            found: header.config_hash,
            expected,
        });
    }

    let mut entries = Vec::with_capacity(header.scenes);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord = serde_json::from_str(&line).map_err(|e| ScenegenError::Parse {
            line: line_no,
            source: e,
        })?;
        if rec.config_hash != expected {
            return Err(ScenegenError::ConfigHashMismatch {
                line: line_no,
                found: rec.config_hash,
                expected,
            });
        }
        entries.push(DatasetEntry {
            seed: rec.seed,
            gts: rec.gts,
        });
    }
    Ok(Dataset {
        config: header.config,
        entries,
    })
}
