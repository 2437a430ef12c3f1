//! Box extraction, overlap geometry and the classification/localization
//! scores reported for a trained model.

mod bbox;

pub use bbox::{extract_bbox, iou, BBox};

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of ranked predictions kept per sample.
pub const TOP_K: usize = 5;

/// Top-1/top-5 localization counts a hit at `IoU >= 0.5`.
pub const LOC_IOU_THRESHOLD: f64 = 0.5;

/// Output of a model for one image: class probabilities plus, for every
/// class, a normalized localization map at image resolution.
#[derive(Clone, Debug)]
pub struct Localization {
    pub probabilities: Vec<f32>,
    pub class_maps: Vec<Tensor>,
}

/// Anything that can classify and localize an image.
pub trait Localizer {
    fn localize(&self, image: &Tensor) -> Result<Localization>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub true_class: usize,
    /// Ranked predictions, best first; `min(5, C)` entries.
    pub predictions: Vec<usize>,
    pub boxes: Vec<BBox>,
    pub ious: Vec<f64>,
    pub gt_box: BBox,
    /// Box extracted from the ground-truth class map.
    pub gt_class_box: BBox,
    pub gt_class_iou: f64,
}

impl EvalRecord {
    pub fn top1_cls_correct(&self) -> bool {
        self.predictions.first() == Some(&self.true_class)
    }

    pub fn top5_cls_correct(&self) -> bool {
        self.predictions.contains(&self.true_class)
    }

    pub fn top1_loc_correct(&self) -> bool {
        self.top1_cls_correct() && self.ious[0] >= LOC_IOU_THRESHOLD
    }

    pub fn top5_loc_correct(&self) -> bool {
        self.predictions
            .iter()
            .zip(&self.ious)
            .any(|(&c, &iou)| c == self.true_class && iou >= LOC_IOU_THRESHOLD)
    }

    /// Strictly greater than one half, regardless of the predicted class.
    pub fn gt_known_correct(&self) -> bool {
        self.gt_class_iou > LOC_IOU_THRESHOLD
    }

    /// `id,true_class,pred1..pred5,iou1..iou5,gt_known_flag`; slots beyond
    /// the number of classes are left empty.
    pub fn to_csv_line(&self) -> String {
        let mut fields = vec![self.id.clone(), self.true_class.to_string()];
        for k in 0..TOP_K {
            fields.push(self.predictions.get(k).map(|c| c.to_string()).unwrap_or_default());
        }
        for k in 0..TOP_K {
            fields.push(self.ious.get(k).map(|v| format!("{v:.6}")).unwrap_or_default());
        }
        fields.push(u8::from(self.gt_known_correct()).to_string());
        fields.join(",")
    }
}

pub const RECORD_CSV_HEADER: &str =
    "id,true_class,pred1,pred2,pred3,pred4,pred5,iou1,iou2,iou3,iou4,iou5,gt_known";

pub fn write_records(records: &[EvalRecord], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 64);
    out.push_str(RECORD_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Error rates and GT-known accuracy, all in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub top1_cls_err: f64,
    pub top5_cls_err: f64,
    pub top1_loc_err: f64,
    pub top5_loc_err: f64,
    pub gt_known_loc_acc: f64,
}

impl MetricsReport {
    pub fn from_records(records: &[EvalRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = records.len() as f64;
        let pct = |pred: fn(&EvalRecord) -> bool| {
            100.0 * records.iter().filter(|r| pred(r)).count() as f64 / n
        };
        Ok(Self {
            top1_cls_err: 100.0 - pct(EvalRecord::top1_cls_correct),
            top5_cls_err: 100.0 - pct(EvalRecord::top5_cls_correct),
            top1_loc_err: 100.0 - pct(EvalRecord::top1_loc_correct),
            top5_loc_err: 100.0 - pct(EvalRecord::top5_loc_correct),
            gt_known_loc_acc: pct(EvalRecord::gt_known_correct),
        })
    }

    pub fn top1_cls_acc(&self) -> f64 {
        100.0 - self.top1_cls_err
    }
}

impl fmt::Display for MetricsReport {
    /// One `name=value` line per metric.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "top1_cls_err={:.2}", self.top1_cls_err)?;
        writeln!(f, "top5_cls_err={:.2}", self.top5_cls_err)?;
        writeln!(f, "top1_loc_err={:.2}", self.top1_loc_err)?;
        writeln!(f, "top5_loc_err={:.2}", self.top5_loc_err)?;
        write!(f, "gt_known_loc_acc={:.2}", self.gt_known_loc_acc)
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<EvalRecord>,
}

/// Classes ordered by descending probability; ties keep the lower index.
pub fn rank_classes(probabilities: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]).then(a.cmp(&b)));
    order
}

pub fn evaluate_sample<L: Localizer + ?Sized>(localizer: &L, sample: &Sample, tau: f32) -> Result<EvalRecord> {
    let out = localizer.localize(&sample.image)?;
    let classes = out.probabilities.len();
    if out.class_maps.len() != classes {
        return Err(Error::InvalidArgument(format!(
            "localizer returned {} maps for {classes} classes",
            out.class_maps.len()
        )));
    }
    if sample.label >= classes {
        return Err(Error::IndexOutOfRange {
            what: "label",
            index: sample.label,
            bound: classes,
        });
    }
    let predictions: Vec<usize> = rank_classes(&out.probabilities).into_iter().take(TOP_K).collect();
    let boxes = predictions
        .iter()
        .map(|&c| extract_bbox(&out.class_maps[c], tau))
        .collect::<Result<Vec<_>>>()?;
    let ious = boxes.iter().map(|b| iou(b, &sample.gt_box)).collect();
    let gt_class_box = extract_bbox(&out.class_maps[sample.label], tau)?;
    Ok(EvalRecord {
        id: sample.id.clone(),
        true_class: sample.label,
        predictions,
        boxes,
        ious,
        gt_box: sample.gt_box,
        gt_class_iou: iou(&gt_class_box, &sample.gt_box),
        gt_class_box,
    })
}

/// Scores every sample and reduces the records into a report.
pub fn evaluate<L: Localizer + ?Sized>(localizer: &L, samples: &[Sample], tau: f32) -> Result<Evaluation> {
    let records = samples
        .iter()
        .map(|s| evaluate_sample(localizer, s, tau))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::from_records(&records)?;
    Ok(Evaluation { report, records })
}
