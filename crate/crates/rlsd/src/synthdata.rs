//! Deterministic synthetic scenes: multi-label images of colored geometric
//! shapes with a controllable label co-occurrence matrix and per-class size
//! bands, plus on-disk serialization (PPM images, JSON annotations, a JSON
//! manifest).
//!
//! Classes are (shape, hue) pairs — three shapes crossed with however many
//! hues the class count needs — so color and outline jointly identify a
//! class. A configurable subset of classes renders strictly below 10% of
//! the image area while all other classes cover at least 15%, which keeps
//! "small" and "large" unambiguous for the recall-by-area analysis.

use crate::localizer::BBox;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_FORMAT: &str = "rlsd-ds/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    BadSpec(String),
    #[error("class {class} ({name}) cannot be placed: {detail}")]
    Unsatisfiable { class: usize, name: String, detail: String },
    #[error("{path}: parse error at byte {offset}: {message}")]
    Format { path: String, offset: usize, message: String },
    #[error(
        "{path}: truncated at byte {offset}: expected {expected} bytes of pixel data, found {found}"
    )]
    Truncated { path: String, offset: usize, expected: usize, found: usize },
    #[error("{path}: label {label} out of range for {classes} classes")]
    BadLabel { path: String, label: usize, classes: usize },
    #[error("{path}: box ({x}, {y}, {w}, {h}) exceeds image bounds {width}x{height}")]
    BoxOutOfBounds { path: String, x: f64, y: f64, w: f64, h: f64, width: usize, height: usize },
    #[error("manifest: {0}")]
    BadManifest(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io { path: path.display().to_string(), source }
}

const SHAPES: [&str; 3] = ["rect", "circle", "triangle"];

const HUES: [(&str, [f64; 3]); 8] = [
    ("red", [0.85, 0.10, 0.10]),
    ("green", [0.10, 0.80, 0.15]),
    ("blue", [0.15, 0.20, 0.85]),
    ("yellow", [0.85, 0.80, 0.10]),
    ("magenta", [0.80, 0.15, 0.80]),
    ("cyan", [0.10, 0.80, 0.80]),
    ("orange", [0.90, 0.55, 0.10]),
    ("purple", [0.50, 0.15, 0.75]),
];

/// Background is mid-gray with this much uniform noise on every channel, so
/// a constant-background shortcut never works but objects stay high-contrast.
pub const BACKGROUND_NOISE: f64 = 0.05;

/// Aspect-ratio range for rectangles and triangles (circles stay square).
const ASPECT: (f64, f64) = (0.6, 1.6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Rect,
    Circle,
    Triangle,
}

/// Hues cycle fastest: with `classes = 12` the ids are the 3 shapes crossed
/// with 4 hues, shape-major.
fn hue_count(classes: usize) -> usize {
    classes.div_ceil(SHAPES.len()).max(1)
}

pub fn class_shape(class: usize, classes: usize) -> Shape {
    match class / hue_count(classes) {
        0 => Shape::Rect,
        1 => Shape::Circle,
        _ => Shape::Triangle,
    }
}

pub fn class_color(class: usize, classes: usize) -> [f64; 3] {
    HUES[class % hue_count(classes)].1
}

pub fn class_name(class: usize, classes: usize) -> String {
    let shape = SHAPES[(class / hue_count(classes)).min(2)];
    let hue = HUES[class % hue_count(classes)].0;
    format!("{shape}-{hue}")
}

pub fn class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| class_name(c, classes)).collect()
}

/// Bounding-box area band for a class, as a fraction of image area. Small
/// classes keep even the bounding box under 10%; large bands are widened per
/// shape so the *filled* shape area (rect = box, circle = π/4 box, triangle
/// = box/2) stays at or above 15%.
fn bbox_area_band(shape: Shape, small: bool) -> (f64, f64) {
    if small {
        (0.025, 0.08)
    } else {
        match shape {
            Shape::Rect => (0.155, 0.28),
            Shape::Circle => (0.20, 0.34),
            Shape::Triangle => (0.31, 0.50),
        }
    }
}

/// Filled area of a shape inscribed in a `w`×`h` bounding box.
pub fn shape_area(shape: Shape, w: f64, h: f64) -> f64 {
    match shape {
        Shape::Rect => w * h,
        Shape::Circle => std::f64::consts::FRAC_PI_4 * w * h,
        Shape::Triangle => 0.5 * w * h,
    }
}

/// Everything that determines a dataset: geometry, class structure, label
/// co-occurrence, and the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Image (width, height) in pixels.
    pub image_size: (usize, usize),
    /// Number of real classes `L` (excludes the sequence END token).
    pub classes: usize,
    /// Symmetric co-occurrence matrix with unit diagonal: after a seed label
    /// `s` is drawn uniformly, every other label `j` joins the image with
    /// probability `q[s][j]`.
    pub q: Vec<Vec<f64>>,
    /// Classes rendered strictly below 10% of image area.
    pub small_classes: Vec<usize>,
    /// Inclusive (min, max) objects per image; the label draw is capped at
    /// `max` and duplicate instances of drawn labels pad up to `min`.
    pub objects_per_image: (usize, usize),
    pub seed: u64,
}

impl SceneSpec {
    /// The default desk-scale dataset: 64×64, 12 classes, the four small
    /// classes strongly co-occurring with a large partner class.
    pub fn desk(seed: u64) -> SceneSpec {
        let classes = 12;
        let mut q = vec![vec![0.05; classes]; classes];
        for (i, row) in q.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        // Each small class pairs with one large "context" class, mimicking
        // scene-level dependencies (a small object predictable from a big
        // co-occurring one). Two large-large pairs add more structure.
        for i in 0..4 {
            q[i][4 + i] = 0.8;
            q[4 + i][i] = 0.8;
        }
        for (a, b) in [(8usize, 9usize), (10, 11)] {
            q[a][b] = 0.6;
            q[b][a] = 0.6;
        }
        SceneSpec {
            image_size: (64, 64),
            classes,
            q,
            small_classes: vec![0, 1, 2, 3],
            objects_per_image: (1, 4),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let (w, h) = self.image_size;
        if w < 16 || h < 16 {
            return Err(SynthError::BadSpec(format!("image size {w}x{h} below 16x16 minimum")));
        }
        if self.classes == 0 || self.classes > SHAPES.len() * HUES.len() {
            return Err(SynthError::BadSpec(format!(
                "class count {} outside 1..={}",
                self.classes,
                SHAPES.len() * HUES.len()
            )));
        }
        if self.q.len() != self.classes || self.q.iter().any(|r| r.len() != self.classes) {
            return Err(SynthError::BadSpec(format!(
                "co-occurrence matrix must be {0}x{0}",
                self.classes
            )));
        }
        for i in 0..self.classes {
            if self.q[i][i] != 1.0 {
                return Err(SynthError::BadSpec(format!("q[{i}][{i}] must be 1")));
            }
            for j in 0..self.classes {
                let v = self.q[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(SynthError::BadSpec(format!("q[{i}][{j}]={v} outside [0,1]")));
                }
                if self.q[i][j] != self.q[j][i] {
                    return Err(SynthError::BadSpec(format!("q not symmetric at ({i},{j})")));
                }
            }
        }
        if self.small_classes.is_empty() {
            return Err(SynthError::BadSpec("small-object class set is empty".into()));
        }
        if let Some(&c) = self.small_classes.iter().find(|&&c| c >= self.classes) {
            return Err(SynthError::BadSpec(format!(
                "small class {c} out of range for {} classes",
                self.classes
            )));
        }
        let (min_obj, max_obj) = self.objects_per_image;
        if min_obj < 1 || min_obj > max_obj {
            return Err(SynthError::BadSpec(format!(
                "objects-per-image range ({min_obj}, {max_obj}) invalid"
            )));
        }
        // Every class must fit: at the top of its size band with the most
        // extreme aspect ratio the box must stay inside the image, and at
        // the bottom it must still cover a couple of pixels.
        let area = (w * h) as f64;
        let stretch = (ASPECT.1.sqrt()).max(1.0 / ASPECT.0.sqrt());
        for class in 0..self.classes {
            let shape = class_shape(class, self.classes);
            let small = self.small_classes.contains(&class);
            let (lo, hi) = bbox_area_band(shape, small);
            let max_dim = (hi * area).sqrt() * stretch;
            let limit = 0.98 * w.min(h) as f64;
            if max_dim > limit {
                return Err(SynthError::Unsatisfiable {
                    class,
                    name: class_name(class, self.classes),
                    detail: format!(
                        "largest extent {max_dim:.1}px exceeds the {limit:.1}px the {w}x{h} image allows"
                    ),
                });
            }
            let min_dim = (lo * area).sqrt() / stretch;
            if min_dim < 2.0 {
                return Err(SynthError::Unsatisfiable {
                    class,
                    name: class_name(class, self.classes),
                    detail: format!("smallest extent {min_dim:.2}px falls under 2px"),
                });
            }
        }
        Ok(())
    }
}

/// One placed object: its class and tight bounding box (center format, px).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub label: usize,
    pub bbox: BBox,
}

/// One generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[3, H, W]` RGB in `[0, 1]`.
    pub image: Tensor,
    /// Sorted, duplicate-free label ids.
    pub labels: Vec<usize>,
    /// Draw order (first entry is the seed label's instance); later objects
    /// paint over earlier ones.
    pub objects: Vec<Placement>,
}

/// The label set for one image: a uniformly drawn seed label plus each
/// other label `j` with probability `q[seed][j]`, capped at the max object
/// count. Returned in draw order, seed first.
pub fn draw_label_set(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let seed = rng.random_range(0..spec.classes);
    let mut labels = vec![seed];
    for j in 0..spec.classes {
        if j == seed {
            continue;
        }
        // Always consume randomness so the cap does not reshuffle the
        // stream for later draws.
        let joins = rng.random_bool(spec.q[seed][j]);
        if joins && labels.len() < spec.objects_per_image.1 {
            labels.push(j);
        }
    }
    labels
}

fn sample_placement(spec: &SceneSpec, label: usize, rng: &mut ChaCha8Rng) -> Placement {
    let (iw, ih) = spec.image_size;
    let area = (iw * ih) as f64;
    let shape = class_shape(label, spec.classes);
    let (lo, hi) = bbox_area_band(shape, spec.small_classes.contains(&label));
    let box_area = rng.random_range(lo..=hi) * area;
    let rho = match shape {
        Shape::Circle => 1.0,
        _ => rng.random_range(ASPECT.0..=ASPECT.1),
    };
    let w = (box_area * rho).sqrt();
    let h = box_area / w;
    let x = rng.random_range(w / 2.0..=iw as f64 - w / 2.0);
    let y = rng.random_range(h / 2.0..=ih as f64 - h / 2.0);
    Placement { label, bbox: BBox::new(x, y, w, h) }
}

/// Rasterize placements over a noisy mid-gray background. Pixel centers
/// inside an object's outline take the class color; later placements paint
/// over earlier ones. Deterministic in (spec, placements, noise_seed).
pub fn render_scene(spec: &SceneSpec, placements: &[Placement], noise_seed: u64) -> Tensor {
    let (w, h) = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut data = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for p in 0..h * w {
            data[c * h * w + p] =
                0.5 + rng.random_range(-BACKGROUND_NOISE..=BACKGROUND_NOISE);
        }
    }
    for placement in placements {
        let color = class_color(placement.label, spec.classes);
        let shape = class_shape(placement.label, spec.classes);
        let b = placement.bbox;
        let (x0, y0, x1, y1) = b.corners();
        let px0 = (x0.floor().max(0.0)) as usize;
        let py0 = (y0.floor().max(0.0)) as usize;
        let px1 = (x1.ceil().min(w as f64)) as usize;
        let py1 = (y1.ceil().min(h as f64)) as usize;
        for py in py0..py1 {
            let yc = py as f64 + 0.5;
            for px in px0..px1 {
                let xc = px as f64 + 0.5;
                if inside(shape, &b, xc, yc) {
                    for c in 0..3 {
                        data[c * h * w + py * w + px] = color[c];
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![3, h, w], data)
}

fn inside(shape: Shape, b: &BBox, xc: f64, yc: f64) -> bool {
    let dx = xc - b.x;
    let dy = yc - b.y;
    match shape {
        Shape::Rect => dx.abs() <= b.w / 2.0 && dy.abs() <= b.h / 2.0,
        Shape::Circle => {
            let r = b.w.min(b.h) / 2.0;
            dx * dx + dy * dy <= r * r
        }
        Shape::Triangle => {
            // Isoceles, apex up: width grows linearly from apex to base.
            let down = yc - (b.y - b.h / 2.0);
            down >= 0.0 && down <= b.h && dx.abs() <= (b.w / 2.0) * (down / b.h)
        }
    }
}

/// Deterministically generate sample `index` of a dataset: the per-sample
/// seed is `spec.seed ^ index`, so samples are independent of generation
/// order.
pub fn generate_sample(spec: &SceneSpec, index: u64) -> Sample {
    let sample_seed = spec.seed ^ index;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let drawn = draw_label_set(spec, &mut rng);
    let mut instance_labels = drawn.clone();
    while instance_labels.len() < spec.objects_per_image.0 {
        instance_labels.push(drawn[rng.random_range(0..drawn.len())]);
    }
    let objects: Vec<Placement> =
        instance_labels.iter().map(|&l| sample_placement(spec, l, &mut rng)).collect();
    let image = render_scene(spec, &objects, sample_seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    let mut labels = drawn;
    labels.sort_unstable();
    labels.dedup();
    Sample { image, labels, objects }
}

// ---------------------------------------------------------------------------
// Serialization: P6 PPM images, JSON annotations, JSON manifest.
// ---------------------------------------------------------------------------

/// Encode a `[3, H, W]` image in `[0, 1]` as binary PPM (P6, maxval 255).
pub fn encode_ppm(image: &Tensor) -> Vec<u8> {
    assert_eq!(image.shape.len(), 3, "need [3, H, W]");
    assert_eq!(image.shape[0], 3, "need 3 channels");
    let (h, w) = (image.shape[1], image.shape[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for p in 0..h * w {
        for c in 0..3 {
            let v = image.data[c * h * w + p].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

/// Decode a binary PPM back into a `[3, H, W]` tensor. Only the exact shape
/// written by [`encode_ppm`] is accepted (P6, maxval 255); `#` comments in
/// the header are fine. Errors carry the byte offset they were detected at.
pub fn decode_ppm(bytes: &[u8], path: &str) -> Result<Tensor, SynthError> {
    let fmt = |offset: usize, message: String| SynthError::Format {
        path: path.to_string(),
        offset,
        message,
    };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(fmt(0, "not a P6 PPM (bad magic)".into()));
    }
    let mut pos = 2usize;
    let next_token = |pos: &mut usize| -> Result<usize, SynthError> {
        // Skip whitespace and '#' comments.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(fmt(start, "expected an ASCII integer".into()));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .unwrap()
            .parse()
            .map_err(|e| fmt(start, format!("bad integer: {e}")))
    };
    let w = next_token(&mut pos)?;
    let h = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if maxval != 255 {
        return Err(fmt(pos, format!("unsupported maxval {maxval}, expected 255")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fmt(pos, "expected single whitespace before pixel data".into()));
    }
    pos += 1;
    let expected = 3 * w * h;
    let found = bytes.len() - pos;
    if found < expected {
        return Err(SynthError::Truncated {
            path: path.to_string(),
            offset: bytes.len(),
            expected,
            found,
        });
    }
    let mut data = vec![0.0; expected];
    for p in 0..w * h {
        for c in 0..3 {
            data[c * h * w + p] = bytes[pos + 3 * p + c] as f64 / 255.0;
        }
    }
    Ok(Tensor::from_vec(vec![3, h, w], data))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnotationBox {
    label: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Annotation {
    labels: Vec<usize>,
    boxes: Vec<AnnotationBox>,
}

/// Write `sample` as `<stem>.ppm` + `<stem>.json`.
pub fn write_sample(root: &Path, stem: &str, sample: &Sample) -> Result<(), SynthError> {
    let ppm_path = root.join(format!("{stem}.ppm"));
    fs::write(&ppm_path, encode_ppm(&sample.image)).map_err(|e| io_err(&ppm_path, e))?;
    let ann = Annotation {
        labels: sample.labels.clone(),
        boxes: sample
            .objects
            .iter()
            .map(|p| AnnotationBox {
                label: p.label,
                x: p.bbox.x,
                y: p.bbox.y,
                w: p.bbox.w,
                h: p.bbox.h,
            })
            .collect(),
    };
    let json_path = root.join(format!("{stem}.json"));
    let body = serde_json::to_vec_pretty(&ann)
        .map_err(|e| SynthError::Json { path: json_path.display().to_string(), source: e })?;
    fs::write(&json_path, body).map_err(|e| io_err(&json_path, e))
}

/// Read `<stem>.ppm` + `<stem>.json` back, validating label range and box
/// bounds against the class count and decoded image size.
pub fn read_sample(root: &Path, stem: &str, classes: usize) -> Result<Sample, SynthError> {
    let ppm_path = root.join(format!("{stem}.ppm"));
    let bytes = fs::read(&ppm_path).map_err(|e| io_err(&ppm_path, e))?;
    let image = decode_ppm(&bytes, &ppm_path.display().to_string())?;
    let (h, w) = (image.shape[1], image.shape[2]);

    let json_path = root.join(format!("{stem}.json"));
    let display = json_path.display().to_string();
    let body = fs::read(&json_path).map_err(|e| io_err(&json_path, e))?;
    let ann: Annotation = serde_json::from_slice(&body)
        .map_err(|e| SynthError::Json { path: display.clone(), source: e })?;

    for &label in ann.labels.iter().chain(ann.boxes.iter().map(|b| &b.label)) {
        if label >= classes {
            return Err(SynthError::BadLabel { path: display, label, classes });
        }
    }
    let eps = 1e-6;
    let objects: Vec<Placement> = ann
        .boxes
        .iter()
        .map(|b| Placement { label: b.label, bbox: BBox::new(b.x, b.y, b.w, b.h) })
        .collect();
    for p in &objects {
        let (x0, y0, x1, y1) = p.bbox.corners();
        if x0 < -eps || y0 < -eps || x1 > w as f64 + eps || y1 > h as f64 + eps {
            return Err(SynthError::BoxOutOfBounds {
                path: display,
                x: p.bbox.x,
                y: p.bbox.y,
                w: p.bbox.w,
                h: p.bbox.h,
                width: w,
                height: h,
            });
        }
    }
    Ok(Sample { image, labels: ann.labels, objects })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Dataset root description: class names, the generating spec, and the two
/// splits as path stems relative to the root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub class_names: Vec<String>,
    pub spec: SceneSpec,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetManifest {
    pub fn save(&self, root: &Path) -> Result<PathBuf, SynthError> {
        let path = root.join(MANIFEST_FILE);
        let body = serde_json::to_vec_pretty(self)
            .map_err(|e| SynthError::Json { path: path.display().to_string(), source: e })?;
        fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    /// Load and validate: format version, split disjointness, every
    /// referenced file present.
    pub fn load(root: &Path) -> Result<DatasetManifest, SynthError> {
        let path = root.join(MANIFEST_FILE);
        let body = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_slice(&body)
            .map_err(|e| SynthError::Json { path: path.display().to_string(), source: e })?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(SynthError::BadManifest(format!(
                "format {:?}, this build reads {:?}",
                manifest.format, MANIFEST_FORMAT
            )));
        }
        if manifest.class_names.len() != manifest.spec.classes {
            return Err(SynthError::BadManifest(format!(
                "{} class names for {} classes",
                manifest.class_names.len(),
                manifest.spec.classes
            )));
        }
        if let Some(stem) = manifest.train.iter().find(|s| manifest.test.contains(s)) {
            return Err(SynthError::BadManifest(format!("stem {stem} is in both splits")));
        }
        for stem in manifest.train.iter().chain(&manifest.test) {
            for ext in ["ppm", "json"] {
                let file = root.join(format!("{stem}.{ext}"));
                if !file.exists() {
                    return Err(SynthError::BadManifest(format!(
                        "missing file {}",
                        file.display()
                    )));
                }
            }
        }
        Ok(manifest)
    }

    pub fn split(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Resolve a class name back to its id.
    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn load_samples(&self, root: &Path, split: Split) -> Result<Vec<Sample>, SynthError> {
        self.split(split)
            .iter()
            .map(|stem| read_sample(root, stem, self.spec.classes))
            .collect()
    }
}

/// Generate the full dataset under `root`: `train/` and `test/` sample
/// files plus the manifest. Sample `i` of the test split uses global index
/// `n_train + i`, so the two splits never share a derived seed.
pub fn generate_dataset(
    spec: &SceneSpec,
    n_train: usize,
    n_test: usize,
    root: &Path,
) -> Result<DatasetManifest, SynthError> {
    spec.validate()?;
    if n_train == 0 || n_test == 0 {
        return Err(SynthError::BadSpec("need at least one sample per split".into()));
    }
    let mut stems: Vec<Vec<String>> = vec![Vec::new(), Vec::new()];
    for (which, split, count, offset) in
        [(0usize, Split::Train, n_train, 0), (1, Split::Test, n_test, n_train)]
    {
        let dir = root.join(split.dir());
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for i in 0..count {
            let sample = generate_sample(spec, (offset + i) as u64);
            let mut stem = String::new();
            write!(stem, "{}/sample_{:05}", split.dir(), i).unwrap();
            write_sample(root, &stem, &sample)?;
            stems[which].push(stem);
        }
    }
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        class_names: class_names(spec.classes),
        spec: spec.clone(),
        train: stems.remove(0),
        test: stems.remove(0),
    };
    manifest.save(root)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_q(l: usize) -> Vec<Vec<f64>> {
        let mut q = vec![vec![0.0; l]; l];
        for (i, row) in q.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        q
    }

    #[test]
    fn desk_spec_validates_and_names_are_shape_hue_pairs() {
        let spec = SceneSpec::desk(0);
        spec.validate().unwrap();
        let names = class_names(12);
        assert_eq!(names.len(), 12);
        assert_eq!(names[0], "rect-red");
        assert_eq!(names[4], "circle-red");
        assert_eq!(names[11], "triangle-yellow");
        // Every (shape, hue) pair is distinct.
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), 12);
    }

    #[test]
    fn spec_validation_rejects_bad_matrices() {
        let mut spec = SceneSpec::desk(0);
        spec.q[0][1] = 0.5; // breaks symmetry (q[1][0] stays 0.05)
        assert!(spec.validate().unwrap_err().to_string().contains("symmetric"));

        let mut spec = SceneSpec::desk(0);
        spec.q[3][3] = 0.9;
        assert!(spec.validate().is_err());

        let mut spec = SceneSpec::desk(0);
        spec.small_classes.clear();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn too_small_an_image_is_unsatisfiable_with_a_diagnostic() {
        let mut spec = SceneSpec::desk(0);
        spec.image_size = (16, 16);
        let err = spec.validate().unwrap_err();
        match err {
            SynthError::Unsatisfiable { .. } => {
                assert!(err.to_string().contains("cannot be placed"))
            }
            other => panic!("expected Unsatisfiable, got {other}"),
        }
    }

    #[test]
    fn identity_q_yields_exactly_one_label() {
        let mut spec = SceneSpec::desk(3);
        spec.q = identity_q(12);
        for i in 0..100 {
            let s = generate_sample(&spec, i);
            assert_eq!(s.labels.len(), 1, "sample {i} got {:?}", s.labels);
        }
    }

    #[test]
    fn certain_cooccurrence_always_fires() {
        let mut spec = SceneSpec::desk(4);
        spec.q = identity_q(12);
        spec.q[0][5] = 1.0;
        spec.q[5][0] = 1.0;
        let mut seen_seed_zero = 0;
        for i in 0..300 {
            let s = generate_sample(&spec, i);
            if s.objects[0].label == 0 {
                seen_seed_zero += 1;
                assert!(s.labels.contains(&5), "sample {i}: {:?}", s.labels);
            }
        }
        assert!(seen_seed_zero > 5);
    }

    #[test]
    fn cooccurrence_frequency_matches_q_monte_carlo() {
        let mut spec = SceneSpec::desk(5);
        spec.q = identity_q(12);
        spec.q[2][7] = 0.6;
        spec.q[7][2] = 0.6;
        spec.objects_per_image = (1, 12); // no cap interference
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (mut with_seed, mut joint) = (0usize, 0usize);
        for _ in 0..60_000 {
            let labels = draw_label_set(&spec, &mut rng);
            if labels[0] == 2 {
                with_seed += 1;
                if labels.contains(&7) {
                    joint += 1;
                }
            }
        }
        assert!(with_seed > 4000);
        let freq = joint as f64 / with_seed as f64;
        assert!((freq - 0.6).abs() < 0.03, "frequency {freq}");
    }

    #[test]
    fn label_sets_respect_the_object_cap() {
        let mut spec = SceneSpec::desk(6);
        for row in spec.q.iter_mut() {
            row.fill(1.0);
        }
        spec.objects_per_image = (1, 3);
        for i in 0..50 {
            let s = generate_sample(&spec, i);
            assert!(s.labels.len() <= 3);
            assert_eq!(s.objects.len(), s.labels.len());
        }
    }

    #[test]
    fn every_label_has_a_box_and_boxes_stay_inside() {
        let spec = SceneSpec::desk(7);
        for i in 0..80 {
            let s = generate_sample(&spec, i);
            let box_labels: std::collections::HashSet<usize> =
                s.objects.iter().map(|p| p.label).collect();
            for l in &s.labels {
                assert!(box_labels.contains(l));
            }
            assert!(s.objects.len() >= spec.objects_per_image.0);
            assert!(s.labels.windows(2).all(|w| w[0] < w[1]), "sorted unique");
            for p in &s.objects {
                let (x0, y0, x1, y1) = p.bbox.corners();
                assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= 64.0 && y1 <= 64.0, "{:?}", p.bbox);
            }
        }
    }

    #[test]
    fn size_bands_keep_small_under_ten_percent_and_large_over_fifteen() {
        let spec = SceneSpec::desk(8);
        let image_area = 64.0 * 64.0;
        for i in 0..120 {
            let s = generate_sample(&spec, i);
            for p in &s.objects {
                let frac = p.bbox.area() / image_area;
                let shape = class_shape(p.label, spec.classes);
                if spec.small_classes.contains(&p.label) {
                    assert!(frac < 0.10, "small class {} box at {frac}", p.label);
                } else {
                    let filled = shape_area(shape, p.bbox.w, p.bbox.h) / image_area;
                    assert!(filled >= 0.15, "large class {} fills {filled}", p.label);
                }
            }
        }
    }

    #[test]
    fn no_objects_render_as_pure_noisy_background() {
        let spec = SceneSpec::desk(0);
        let image = render_scene(&spec, &[], 99);
        assert_eq!(image.shape, vec![3, 64, 64]);
        for &v in &image.data {
            assert!((v - 0.5).abs() <= BACKGROUND_NOISE + 1e-12);
        }
    }

    #[test]
    fn full_image_rect_paints_at_least_ninety_percent_in_class_color() {
        let spec = SceneSpec::desk(0);
        // Class 1 is a rectangle (ids 0..4 are rects at 12 classes).
        let placement =
            Placement { label: 1, bbox: BBox::new(32.0, 32.0, 64.0, 64.0) };
        let image = render_scene(&spec, &[placement], 5);
        let color = class_color(1, 12);
        let hw = 64 * 64;
        let painted = (0..hw)
            .filter(|&p| (0..3).all(|c| image.data[c * hw + p] == color[c]))
            .count();
        assert!(painted as f64 >= 0.9 * hw as f64);
    }

    #[test]
    fn rendering_is_bit_identical_for_identical_inputs() {
        let spec = SceneSpec::desk(11);
        let s = generate_sample(&spec, 17);
        let again = generate_sample(&spec, 17);
        assert_eq!(s.image.data, again.image.data);
        assert_eq!(s.objects, again.objects);
        // A different sample index changes the scene.
        let other = generate_sample(&spec, 18);
        assert_ne!(s.image.data, other.image.data);
    }

    #[test]
    fn later_objects_paint_over_earlier_ones() {
        let spec = SceneSpec::desk(0);
        let under = Placement { label: 0, bbox: BBox::new(32.0, 32.0, 20.0, 20.0) };
        let over = Placement { label: 1, bbox: BBox::new(32.0, 32.0, 20.0, 20.0) };
        let image = render_scene(&spec, &[under, over], 3);
        let hw = 64 * 64;
        let center = 32 * 64 + 32;
        let got: Vec<f64> = (0..3).map(|c| image.data[c * hw + center]).collect();
        assert_eq!(got, class_color(1, 12).to_vec());
    }

    #[test]
    fn ppm_round_trip_is_byte_identical() {
        let spec = SceneSpec::desk(13);
        let s = generate_sample(&spec, 4);
        let bytes = encode_ppm(&s.image);
        let decoded = decode_ppm(&bytes, "mem").unwrap();
        assert_eq!(encode_ppm(&decoded), bytes);
        // Quantization error stays under half a level.
        for (a, b) in s.image.data.iter().zip(&decoded.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn truncated_ppm_names_the_offset() {
        let spec = SceneSpec::desk(13);
        let bytes = encode_ppm(&generate_sample(&spec, 0).image);
        let cut = &bytes[..bytes.len() - 100];
        let err = decode_ppm(cut, "cut.ppm").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated at byte"), "{msg}");
        assert!(msg.contains(&format!("{}", cut.len())), "{msg}");
    }

    #[test]
    fn bad_magic_and_bad_maxval_are_rejected() {
        assert!(decode_ppm(b"P5\n2 2\n255\nxxxx", "m").is_err());
        let err = decode_ppm(b"P6\n2 2\n65535\n", "m").unwrap_err();
        assert!(err.to_string().contains("maxval"));
    }

    #[test]
    fn sample_files_round_trip_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::desk(21);
        let sample = generate_sample(&spec, 9);
        write_sample(dir.path(), "s", &sample).unwrap();
        let ppm1 = fs::read(dir.path().join("s.ppm")).unwrap();
        let json1 = fs::read(dir.path().join("s.json")).unwrap();

        let back = read_sample(dir.path(), "s", spec.classes).unwrap();
        assert_eq!(back.labels, sample.labels);
        assert_eq!(back.objects, sample.objects);
        write_sample(dir.path(), "s2", &back).unwrap();
        assert_eq!(fs::read(dir.path().join("s2.ppm")).unwrap(), ppm1);
        assert_eq!(fs::read(dir.path().join("s2.json")).unwrap(), json1);
    }

    #[test]
    fn annotations_with_out_of_range_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::desk(2);
        let mut sample = generate_sample(&spec, 0);
        sample.labels.push(12);
        write_sample(dir.path(), "bad", &sample).unwrap();
        let err = read_sample(dir.path(), "bad", 12).unwrap_err();
        assert!(matches!(err, SynthError::BadLabel { label: 12, .. }), "{err}");
    }

    #[test]
    fn dataset_generation_is_reproducible_and_manifest_validates() {
        let spec = SceneSpec::desk(31);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(&spec, 3, 2, dir_a.path()).unwrap();
        generate_dataset(&spec, 3, 2, dir_b.path()).unwrap();

        assert_eq!(manifest.train.len(), 3);
        assert_eq!(manifest.test.len(), 2);
        assert_eq!(manifest.format, MANIFEST_FORMAT);

        // Same seed -> identical bytes everywhere (manifest included).
        for stem in manifest.train.iter().chain(&manifest.test) {
            for ext in ["ppm", "json"] {
                let a = fs::read(dir_a.path().join(format!("{stem}.{ext}"))).unwrap();
                let b = fs::read(dir_b.path().join(format!("{stem}.{ext}"))).unwrap();
                assert_eq!(a, b, "{stem}.{ext} differs");
            }
        }
        assert_eq!(
            fs::read(dir_a.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(dir_b.path().join(MANIFEST_FILE)).unwrap()
        );

        // Train and test derive from disjoint global indices.
        let t0 = fs::read(dir_a.path().join("train/sample_00000.ppm")).unwrap();
        let e0 = fs::read(dir_a.path().join("test/sample_00000.ppm")).unwrap();
        assert_ne!(t0, e0);

        let loaded = DatasetManifest::load(dir_a.path()).unwrap();
        assert_eq!(loaded.class_names, manifest.class_names);
        let samples = loaded.load_samples(dir_a.path(), Split::Test).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(loaded.class_id("rect-red"), Some(0));
        assert_eq!(loaded.class_id("nope"), None);
    }

    #[test]
    fn manifest_load_reports_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::desk(1);
        generate_dataset(&spec, 2, 1, dir.path()).unwrap();
        fs::remove_file(dir.path().join("train/sample_00001.json")).unwrap();
        let err = DatasetManifest::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing file"), "{err}");
    }
}
