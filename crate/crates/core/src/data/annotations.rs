//! `filename,class_id,x_min,y_min,x_max,y_max` annotation files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::BBox;

pub const ANNOTATION_HEADER: &str = "filename,class_id,x_min,y_min,x_max,y_max";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub filename: String,
    pub class_id: usize,
    pub bbox: BBox,
}

pub fn format_annotations(annotations: &[Annotation]) -> String {
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for a in annotations {
        let b = a.bbox;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            a.filename, a.class_id, b.x_min, b.y_min, b.x_max, b.y_max
        ));
    }
    out
}

/// Parses annotation lines. A first line whose second field is not a number
/// is taken as a header.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if idx == 0 && fields.get(1).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let err = |message: String| Error::Annotation { line, message };
        let [filename, class_id, coords @ ..] = fields.as_slice() else {
            return Err(err("expected 6 fields".into()));
        };
        if coords.len() != 4 {
            return Err(err(format!("expected 6 fields, got {}", fields.len())));
        }
        if filename.is_empty() {
            return Err(err("empty filename".into()));
        }
        let class_id = class_id
            .parse()
            .map_err(|_| err(format!("invalid class id `{class_id}`")))?;
        let mut c = [0u32; 4];
        for (slot, text) in c.iter_mut().zip(coords) {
            *slot = text
                .parse()
                .map_err(|_| err(format!("invalid coordinate `{text}`")))?;
        }
        let bbox = BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| err(e.to_string()))?;
        out.push(Annotation {
            filename: filename.to_string(),
            class_id,
            bbox,
        });
    }
    Ok(out)
}

pub fn write_annotations(annotations: &[Annotation], path: &Path) -> Result<()> {
    fs::write(path, format_annotations(annotations)).map_err(|e| Error::io(path, e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    parse_annotations(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
