//! Synthetic two-part objects with exact ground-truth boxes, plus the image
//! and annotation codecs used to put datasets on disk.
//!
//! Every object is a large ellipse "body" whose colour and texture are shared
//! by all classes, with a small square "head" attached to one side. Only the
//! head's stripe pattern depends on the class, so a classifier can succeed by
//! looking at the head alone while the box covers head and body together.

mod annotations;
mod pnm;

pub use annotations::{
    format_annotations, parse_annotations, read_annotations, write_annotations, Annotation,
    ANNOTATION_HEADER,
};
pub use pnm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm};

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_pcg::Pcg64;

use crate::error::{Error, Result};
use crate::metrics::BBox;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub gt_box: BBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Inclusive range of the head square's side length.
    pub head_size: (usize, usize),
    /// Inclusive range of each body ellipse diameter.
    pub body_size: (usize, usize),
    /// Background pixels are uniform in `[0, noise)`.
    pub noise: f32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            train_samples: 2000,
            test_samples: 500,
            height: 64,
            width: 64,
            seed: 7,
            head_size: (8, 12),
            body_size: (20, 32),
            noise: 0.1,
        }
    }
}

/// Brightest channel of any object pixel is at least this; background stays
/// below `noise`, which must be smaller.
const MIN_OBJECT_INTENSITY: f32 = 0.5;
const BODY_COLOR: [f32; 3] = [0.60, 0.48, 0.36];
const BODY_TEXTURE: f32 = 0.08;
const STRIPE_WIDTH: usize = 2;

const PALETTE: [[f32; 3]; 6] = [
    [0.95, 0.10, 0.10],
    [0.10, 0.90, 0.10],
    [0.15, 0.25, 0.95],
    [0.95, 0.90, 0.10],
    [0.10, 0.90, 0.90],
    [0.90, 0.10, 0.90],
];

/// Stripe colour shared by the first `PALETTE.len()` classes.
const WHITE: [f32; 3] = [0.95, 0.95, 0.95];

/// Maximum number of distinct head patterns the default palette provides.
pub const MAX_CLASSES: usize = 72;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadPattern {
    pub primary: [f32; 3],
    pub secondary: [f32; 3],
    pub vertical_stripes: bool,
}

impl HeadPattern {
    /// Classes below six get a unique primary colour striped with white;
    /// later classes pair two palette colours, then switch stripe direction.
    pub fn for_class(class: usize) -> Self {
        let n = PALETTE.len();
        let k = class % (n * n);
        let (primary, offset) = (k % n, k / n);
        let secondary = if offset == 0 { WHITE } else { PALETTE[(primary + offset) % n] };
        Self {
            primary: PALETTE[primary],
            secondary,
            vertical_stripes: class >= n * n,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return Err(Error::config(
                "num_classes",
                format!("must be in 2..={MAX_CLASSES}"),
            ));
        }
        for (name, (lo, hi)) in [("head_size", self.head_size), ("body_size", self.body_size)] {
            if lo == 0 || lo > hi {
                return Err(Error::config(name, format!("invalid range {lo}..={hi}")));
            }
        }
        if self.head_size.1 >= self.body_size.0 {
            return Err(Error::config("head_size", "head must be smaller than body"));
        }
        if !(self.noise >= 0.0 && self.noise < MIN_OBJECT_INTENSITY) {
            return Err(Error::config(
                "noise",
                format!("must lie in [0, {MIN_OBJECT_INTENSITY})"),
            ));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("image_size", "must be positive"));
        }
        let extent = self.body_size.1 + self.head_size.1;
        if extent > self.height || extent > self.width {
            return Err(Error::ObjectDoesNotFit(format!(
                "body {} + head {} px exceeds image {}x{}",
                self.body_size.1, self.head_size.1, self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u128 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

/// Renders samples for a [`DatasetConfig`] with a given set of head patterns.
#[derive(Clone, Debug)]
pub struct Generator {
    config: DatasetConfig,
    patterns: Vec<HeadPattern>,
}

impl Generator {
    pub fn new(config: DatasetConfig) -> Result<Self> {
        let patterns = (0..config.num_classes).map(HeadPattern::for_class).collect();
        Self::with_patterns(config, patterns)
    }

    pub fn with_patterns(config: DatasetConfig, patterns: Vec<HeadPattern>) -> Result<Self> {
        config.validate()?;
        if patterns.len() != config.num_classes {
            return Err(Error::config("num_classes", "one head pattern per class required"));
        }
        Ok(Self { config, patterns })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn patterns(&self) -> &[HeadPattern] {
        &self.patterns
    }

    /// Labels are assigned round-robin over the classes.
    pub fn split(&self, split: Split) -> Vec<Sample> {
        let n = match split {
            Split::Train => self.config.train_samples,
            Split::Test => self.config.test_samples,
        };
        (0..n)
            .map(|i| self.render(split, i, i % self.config.num_classes))
            .collect()
    }

    /// Per-sample generator: its own state within the split's stream.
    fn sample_rng(&self, split: Split, index: usize) -> Pcg64 {
        let state = ((self.config.seed as u128) << 64) | index as u128;
        Pcg64::new(state, split.stream())
    }

    /// Draws sample `index` of `split` with the given label. The random
    /// draws do not depend on `label`; only the head colours do.
    pub fn render(&self, split: Split, index: usize, label: usize) -> Sample {
        let cfg = &self.config;
        let mut rng = self.sample_rng(split, index);
        let (h, w) = (cfg.height, cfg.width);

        let body_w = rng.random_range(cfg.body_size.0..=cfg.body_size.1);
        let body_h = rng.random_range(cfg.body_size.0..=cfg.body_size.1);
        let head = rng.random_range(cfg.head_size.0..=cfg.head_size.1) as i64;
        let side = rng.random_range(0..4u8);
        let along: f64 = rng.random_range(-0.25..=0.25);

        // Local frame: body bounding box at the origin.
        let (a, b) = (body_w as f64 / 2.0, body_h as f64 / 2.0);
        let inside_body = |x: i64, y: i64| {
            let dx = (x as f64 + 0.5 - a) / a;
            let dy = (y as f64 + 0.5 - b) / b;
            dx * dx + dy * dy <= 1.0
        };
        // Head centre offset along the attached side, then pushed out to the
        // ellipse boundary with one pixel of overlap.
        let (hx, hy) = match side {
            0 | 1 => {
                let off = along * body_h as f64;
                let reach = a * (1.0 - (off / b).powi(2)).max(0.0).sqrt();
                let cy = (b + off - head as f64 / 2.0).round() as i64;
                let cx = if side == 0 {
                    (a - reach).round() as i64 + 1 - head
                } else {
                    (a + reach).round() as i64 - 1
                };
                (cx, cy)
            }
            _ => {
                let off = along * body_w as f64;
                let reach = b * (1.0 - (off / a).powi(2)).max(0.0).sqrt();
                let cx = (a + off - head as f64 / 2.0).round() as i64;
                let cy = if side == 2 {
                    (b - reach).round() as i64 + 1 - head
                } else {
                    (b + reach).round() as i64 - 1
                };
                (cx, cy)
            }
        };
        let min_x = hx.min(0);
        let min_y = hy.min(0);
        let max_x = (hx + head).max(body_w as i64);
        let max_y = (hy + head).max(body_h as i64);
        let span_x = (max_x - min_x) as usize;
        let span_y = (max_y - min_y) as usize;
        // validate() guarantees body_max + head_max fits.
        let ox = rng.random_range(0..=(w - span_x)) as i64 - min_x;
        let oy = rng.random_range(0..=(h - span_y)) as i64 - min_y;

        let plane = h * w;
        let mut data = vec![0.0f32; 3 * plane];
        for v in data.iter_mut() {
            *v = rng.random::<f32>() * cfg.noise;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        let mut mark = |x: usize, y: usize| {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        };

        for y in 0..body_h as i64 {
            for x in 0..body_w as i64 {
                if !inside_body(x, y) {
                    continue;
                }
                let (px, py) = ((x + ox) as usize, (y + oy) as usize);
                for (ch, &base) in BODY_COLOR.iter().enumerate() {
                    let jitter = rng.random_range(-BODY_TEXTURE..=BODY_TEXTURE);
                    data[ch * plane + py * w + px] = base + jitter;
                }
                mark(px, py);
            }
        }

        let pattern = self.patterns[label];
        for y in 0..head {
            for x in 0..head {
                let stripe = if pattern.vertical_stripes { x } else { y } as usize / STRIPE_WIDTH;
                let color = if stripe.is_multiple_of(2) { pattern.primary } else { pattern.secondary };
                let (px, py) = ((x + hx + ox) as usize, (y + hy + oy) as usize);
                for (ch, &c) in color.iter().enumerate() {
                    data[ch * plane + py * w + px] = c;
                }
                mark(px, py);
            }
        }

        Sample {
            id: format!("{}_{index:05}", split.name()),
            image: Tensor::from_parts(vec![3, h, w], data),
            label,
            gt_box: BBox {
                x_min: x0 as u32,
                y_min: y0 as u32,
                x_max: x1 as u32,
                y_max: y1 as u32,
            },
        }
    }
}

/// Train and test splits for `config`.
pub fn generate_dataset(config: &DatasetConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let generator = Generator::new(config.clone())?;
    Ok((generator.split(Split::Train), generator.split(Split::Test)))
}

pub const ANNOTATIONS_FILE: &str = "annotations.csv";

/// Writes `<id>.ppm` for every sample plus `annotations.csv` into `dir`.
pub fn save_split(samples: &[Sample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut annotations = Vec::with_capacity(samples.len());
    for s in samples {
        let filename = format!("{}.ppm", s.id);
        write_ppm(&s.image, &dir.join(&filename))?;
        annotations.push(Annotation {
            filename,
            class_id: s.label,
            bbox: s.gt_box,
        });
    }
    write_annotations(&annotations, &dir.join(ANNOTATIONS_FILE))
}

/// Loads every `.ppm` image in `dir` (sorted by name) with its annotation.
pub fn load_split(dir: &Path) -> Result<Vec<Sample>> {
    let annotations = read_annotations(&dir.join(ANNOTATIONS_FILE))?;
    let by_name: HashMap<&str, &Annotation> =
        annotations.iter().map(|a| (a.filename.as_str(), a)).collect();
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().into_string().ok()?;
            name.ends_with(".ppm").then_some(name)
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let ann = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::MissingAnnotation(name.clone()))?;
            let image = read_ppm(&dir.join(&name))?;
            Ok(Sample {
                id: name.trim_end_matches(".ppm").to_string(),
                image,
                label: ann.class_id,
                gt_box: ann.bbox,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DatasetConfig {
        DatasetConfig {
            train_samples: 40,
            test_samples: 12,
            ..DatasetConfig::default()
        }
    }

    /// Independent scan: the tight box of every pixel brighter than the
    /// background can ever be.
    fn scan_box(sample: &Sample, noise: f32) -> BBox {
        let (_, h, w) = sample.image.dims3("scan").unwrap();
        let plane = h * w;
        let d = sample.image.data();
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let bright = (0..3).map(|c| d[c * plane + i]).fold(0.0f32, f32::max);
                if bright > noise {
                    x0 = x0.min(x as u32);
                    y0 = y0.min(y as u32);
                    x1 = x1.max(x as u32 + 1);
                    y1 = y1.max(y as u32 + 1);
                }
            }
        }
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config();
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
    }

    #[test]
    fn gt_box_matches_pixel_scan() {
        let cfg = small_config();
        let (train, test) = generate_dataset(&cfg).unwrap();
        for s in train.iter().chain(&test) {
            assert_eq!(s.gt_box, scan_box(s, cfg.noise), "{}", s.id);
            assert!(s.gt_box.fits_within(cfg.width as u32, cfg.height as u32));
            assert!(s.label < cfg.num_classes);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn labels_are_round_robin() {
        let cfg = DatasetConfig {
            train_samples: 2000,
            test_samples: 1,
            ..DatasetConfig::default()
        };
        let train = Generator::new(cfg).unwrap().split(Split::Train);
        let mut counts = [0usize; 4];
        for s in &train {
            counts[s.label] += 1;
        }
        assert_eq!(counts, [500; 4]);
    }

    #[test]
    fn splits_use_separate_streams() {
        let (train, test) = generate_dataset(&small_config()).unwrap();
        for t in &test {
            assert!(train.iter().all(|s| s.image != t.image));
        }
    }

    #[test]
    fn permuting_head_patterns_permutes_labels() {
        let cfg = small_config();
        let base = Generator::new(cfg.clone()).unwrap();
        let perm = [2usize, 0, 3, 1];
        let permuted_patterns = perm.iter().map(|&p| base.patterns()[p]).collect();
        let permuted = Generator::with_patterns(cfg, permuted_patterns).unwrap();
        for (i, s) in permuted.split(Split::Train).iter().enumerate() {
            let reference = base.render(Split::Train, i, perm[s.label]);
            assert_eq!(s.image, reference.image);
            assert_eq!(s.gt_box, reference.gt_box);
        }
    }

    #[test]
    fn patterns_are_distinct() {
        for a in 0..MAX_CLASSES {
            for b in a + 1..MAX_CLASSES {
                assert_ne!(HeadPattern::for_class(a), HeadPattern::for_class(b), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            DatasetConfig { num_classes: 1, ..DatasetConfig::default() },
            DatasetConfig { head_size: (8, 24), ..DatasetConfig::default() },
            DatasetConfig { noise: 0.6, ..DatasetConfig::default() },
            DatasetConfig { height: 32, width: 32, ..DatasetConfig::default() },
        ];
        for cfg in bad {
            assert!(Generator::new(cfg).is_err());
        }
        let err = Generator::new(DatasetConfig { height: 32, width: 32, ..DatasetConfig::default() }).unwrap_err();
        assert!(matches!(err, Error::ObjectDoesNotFit(_)));
    }

    #[test]
    fn split_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { train_samples: 6, test_samples: 1, ..DatasetConfig::default() };
        let samples = Generator::new(cfg).unwrap().split(Split::Train);
        save_split(&samples, dir.path()).unwrap();
        let loaded = load_split(dir.path()).unwrap();
        assert_eq!(loaded.len(), samples.len());
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!((&a.id, a.label, a.gt_box), (&b.id, b.label, b.gt_box));
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert!((x - y).abs() <= 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn unannotated_image_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { train_samples: 2, test_samples: 1, ..DatasetConfig::default() };
        let samples = Generator::new(cfg).unwrap().split(Split::Train);
        save_split(&samples, dir.path()).unwrap();
        write_ppm(&samples[0].image, &dir.path().join("stray.ppm")).unwrap();
        match load_split(dir.path()) {
            Err(Error::MissingAnnotation(name)) => assert_eq!(name, "stray.ppm"),
            other => panic!("expected missing annotation, got {other:?}"),
        }
    }
}
