//! On-disk formats.
//!
//! * `*.manifest.jsonl`: one image per line,
//!   `{"image_id","true_label","image_w","image_h","annotations":[{"label","x","y","w","h"}]}`
//!   with an optional `"hard_sample_key"` on mined healthy records.
//! * `*.detections.jsonl`: one image per line,
//!   `{"image_id","detections":[{"label","confidence","x","y","w","h"}]}`.
//!   Images missing from a dump have no detections; repeated ids are an error.
//! * `hard_samples.json`: one document mapping disease class to
//!   `[{"image_id","image_w","image_h","key_confidence","boxes":[{"x","y","w","h"}]}]`.
//! * label export: `<image_id>.txt` with `<class> <cx> <cy> <w> <h>` per box,
//!   normalised to the image size, six decimals.
//!
//! Boxes are pixels, top-left origin. Non-finite numbers are schema errors.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::manifest::TrainingManifest;
use crate::mining::{HardSampleImage, HardSampleIndex};
use crate::model::{
    Annotation, BoundingBox, ClassCatalog, Dataset, Detection, DetectionSet, ImageRecord,
};
use crate::rules::{BinaryGate, GateVerdict};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatErrorKind {
    Io(String),
    Syntax(String),
    Schema { field: String, reason: String },
    UnknownLabel(String),
    UnknownImageId(String),
    DuplicateImageLine(String),
}

impl fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatErrorKind::Io(e) => write!(f, "read failed: {e}"),
            FormatErrorKind::Syntax(e) => write!(f, "invalid JSON: {e}"),
            FormatErrorKind::Schema { field, reason } => write!(f, "field `{field}`: {reason}"),
            FormatErrorKind::UnknownLabel(l) => write!(f, "unknown class label `{l}`"),
            FormatErrorKind::UnknownImageId(id) => write!(f, "image `{id}` is not in the dataset"),
            FormatErrorKind::DuplicateImageLine(id) => {
                write!(f, "image `{id}` appears on more than one line")
            }
        }
    }
}

/// A parse failure, always tied to a 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct FormatError {
    pub line: usize,
    pub kind: FormatErrorKind,
}

impl FormatError {
    fn schema(line: usize, field: impl Into<String>, reason: impl Into<String>) -> Self {
        FormatError {
            line,
            kind: FormatErrorKind::Schema {
                field: field.into(),
                reason: reason.into(),
            },
        }
    }

    /// True when the failure is a dataset/dump mismatch rather than bad syntax.
    pub fn is_coverage(&self) -> bool {
        matches!(self.kind, FormatErrorKind::UnknownImageId(_))
    }
}

static NON_FINITE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#""((?:[^"\\]|\\.)*)"\s*:\s*[-+]?(?:NaN|nan|Infinity|inf)\b"#).expect("valid regex")
});

fn parse_json_line(text: &str, line: usize) -> Result<Map<String, Value>, FormatError> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(FormatError::schema(
            line,
            "<root>",
            "expected a JSON object",
        )),
        Err(e) => {
            if let Some(c) = NON_FINITE.captures(text) {
                return Err(FormatError::schema(line, &c[1], "must be a finite number"));
            }
            if e.to_string().contains("number out of range") {
                return Err(FormatError::schema(
                    line,
                    "<number>",
                    "must be a finite number",
                ));
            }
            Err(FormatError {
                line,
                kind: FormatErrorKind::Syntax(e.to_string()),
            })
        }
    }
}

/// Typed field access with path-aware errors.
struct Fields<'a> {
    map: &'a Map<String, Value>,
    line: usize,
    prefix: String,
}

impl<'a> Fields<'a> {
    fn new(map: &'a Map<String, Value>, line: usize, prefix: impl Into<String>) -> Self {
        Fields {
            map,
            line,
            prefix: prefix.into(),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn err(&self, key: &str, reason: impl Into<String>) -> FormatError {
        FormatError::schema(self.line, self.path(key), reason)
    }

    fn only(&self, allowed: &[&str]) -> Result<(), FormatError> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(self.err(k, "unknown field")),
            None => Ok(()),
        }
    }

    fn get(&self, key: &str) -> Result<&'a Value, FormatError> {
        self.map.get(key).ok_or_else(|| self.err(key, "missing"))
    }

    fn string(&self, key: &str) -> Result<&'a str, FormatError> {
        match self.get(key)? {
            Value::String(s) if !s.is_empty() => Ok(s),
            Value::String(_) => Err(self.err(key, "must be non-empty")),
            _ => Err(self.err(key, "expected a string")),
        }
    }

    fn opt_string(&self, key: &str) -> Result<Option<&'a str>, FormatError> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(_) => self.string(key).map(Some),
        }
    }

    fn real(&self, key: &str) -> Result<f64, FormatError> {
        match self.get(key)?.as_f64() {
            Some(v) if v.is_finite() => Ok(v),
            Some(_) => Err(self.err(key, "must be a finite number")),
            None => Err(self.err(key, "expected a number")),
        }
    }

    fn dimension(&self, key: &str) -> Result<u32, FormatError> {
        let v = self.get(key)?;
        match v.as_u64() {
            Some(0) => Err(self.err(key, "must be positive")),
            Some(n) => u32::try_from(n).map_err(|_| self.err(key, "too large")),
            None => Err(self.err(key, "expected a positive integer")),
        }
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>, FormatError> {
        match self.get(key)? {
            Value::Array(a) => Ok(a),
            _ => Err(self.err(key, "expected an array")),
        }
    }

    fn nested(&self, key: &str, i: usize, v: &'a Value) -> Result<Fields<'a>, FormatError> {
        match v {
            Value::Object(m) => Ok(Fields::new(
                m,
                self.line,
                format!("{}[{i}]", self.path(key)),
            )),
            _ => Err(FormatError::schema(
                self.line,
                format!("{}[{i}]", self.path(key)),
                "expected an object",
            )),
        }
    }

    fn bbox(&self, image_w: u32, image_h: u32) -> Result<BoundingBox, FormatError> {
        let b = BoundingBox {
            x: self.real("x")?,
            y: self.real("y")?,
            w: self.real("w")?,
            h: self.real("h")?,
            image_w,
            image_h,
        };
        b.validate()
            .map_err(|e| self.err(e.field(), e.to_string()))?;
        Ok(b)
    }

    fn label(&self, key: &str, catalog: &ClassCatalog) -> Result<&'a str, FormatError> {
        let l = self.string(key)?;
        if catalog.contains(l) {
            Ok(l)
        } else {
            Err(FormatError {
                line: self.line,
                kind: FormatErrorKind::UnknownLabel(l.to_string()),
            })
        }
    }
}

/// Iterates non-blank lines with their 1-based numbers.
fn numbered_lines<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, String), FormatError>> {
    reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() => None,
        Ok(s) => Some(Ok((i + 1, s))),
        Err(e) => Some(Err(FormatError {
            line: i + 1,
            kind: FormatErrorKind::Io(e.to_string()),
        })),
    })
}

fn parse_manifest_record(
    text: &str,
    line: usize,
    catalog: &ClassCatalog,
) -> Result<ImageRecord, FormatError> {
    let map = parse_json_line(text, line)?;
    let f = Fields::new(&map, line, "");
    f.only(&[
        "image_id",
        "true_label",
        "image_w",
        "image_h",
        "annotations",
        "hard_sample_key",
    ])?;
    let image_id = f.string("image_id")?.to_string();
    let true_label = f.label("true_label", catalog)?.to_string();
    let image_w = f.dimension("image_w")?;
    let image_h = f.dimension("image_h")?;
    let hard_sample_key = f.opt_string("hard_sample_key")?.map(str::to_string);
    if let Some(k) = &hard_sample_key {
        if !catalog.is_disease(k) {
            return Err(FormatError {
                line,
                kind: FormatErrorKind::UnknownLabel(k.clone()),
            });
        }
    }
    let annotations = match map.get("annotations") {
        None => Vec::new(),
        Some(_) => f
            .array("annotations")?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let a = f.nested("annotations", i, v)?;
                a.only(&["label", "x", "y", "w", "h"])?;
                Ok(Annotation {
                    label: a.label("label", catalog)?.to_string(),
                    bbox: a.bbox(image_w, image_h)?,
                })
            })
            .collect::<Result<_, FormatError>>()?,
    };
    Ok(ImageRecord {
        image_id,
        true_label,
        image_w,
        image_h,
        annotations,
        hard_sample_key,
    })
}

/// Parses a manifest stream. Records come back in file order; dataset-level
/// invariants (unique ids and so on) are left to `validate_dataset`.
pub fn parse_manifest<R: BufRead>(
    reader: R,
    catalog: &ClassCatalog,
) -> Result<Vec<ImageRecord>, FormatError> {
    numbered_lines(reader)
        .map(|l| {
            let (line, text) = l?;
            parse_manifest_record(&text, line, catalog)
        })
        .collect()
}

#[derive(Serialize)]
struct BoxOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl<'a> BoxOut<'a> {
    fn new(label: Option<&'a str>, confidence: Option<f64>, b: &BoundingBox) -> Self {
        BoxOut {
            label,
            confidence,
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }
}

#[derive(Serialize)]
struct ManifestLineOut<'a> {
    image_id: &'a str,
    true_label: &'a str,
    image_w: u32,
    image_h: u32,
    annotations: Vec<BoxOut<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hard_sample_key: Option<&'a str>,
}

pub fn manifest_line(record: &ImageRecord) -> String {
    let out = ManifestLineOut {
        image_id: &record.image_id,
        true_label: &record.true_label,
        image_w: record.image_w,
        image_h: record.image_h,
        annotations: record
            .annotations
            .iter()
            .map(|a| BoxOut::new(Some(&a.label), None, &a.bbox))
            .collect(),
        hard_sample_key: record.hard_sample_key.as_deref(),
    };
    serde_json::to_string(&out).expect("manifest line serializes")
}

pub fn write_manifest<'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = &'a ImageRecord>,
) -> io::Result<()> {
    for r in records {
        writeln!(w, "{}", manifest_line(r))?;
    }
    w.flush()
}

/// Parses a detection dump against a validated dataset. The result covers
/// every dataset image, in dataset order.
pub fn parse_detections<R: BufRead>(
    reader: R,
    catalog: &ClassCatalog,
    dataset: &Dataset,
) -> Result<DetectionSet, FormatError> {
    let mut seen = HashSet::new();
    let mut entries: HashMap<String, Vec<Detection>> = HashMap::new();
    for l in numbered_lines(reader) {
        let (line, text) = l?;
        let map = parse_json_line(&text, line)?;
        let f = Fields::new(&map, line, "");
        f.only(&["image_id", "detections"])?;
        let image_id = f.string("image_id")?;
        let rec = dataset.get(image_id).ok_or_else(|| FormatError {
            line,
            kind: FormatErrorKind::UnknownImageId(image_id.to_string()),
        })?;
        if !seen.insert(image_id.to_string()) {
            return Err(FormatError {
                line,
                kind: FormatErrorKind::DuplicateImageLine(image_id.to_string()),
            });
        }
        let dets = f
            .array("detections")?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = f.nested("detections", i, v)?;
                d.only(&["label", "confidence", "x", "y", "w", "h"])?;
                let class_label = d.label("label", catalog)?.to_string();
                let confidence = d.real("confidence")?;
                if !(0.0..=1.0).contains(&confidence) {
                    return Err(d.err("confidence", "must be within [0, 1]"));
                }
                if confidence == 0.0 {
                    log::warn!("line {line}: image `{image_id}` has a detection with confidence 0");
                }
                Ok(Detection {
                    class_label,
                    confidence,
                    bbox: d.bbox(rec.image_w, rec.image_h)?,
                })
            })
            .collect::<Result<Vec<_>, FormatError>>()?;
        entries.insert(image_id.to_string(), dets);
    }
    Ok(DetectionSet::covering(dataset, entries)
        .expect("every entry was checked against the dataset"))
}

#[derive(Serialize)]
struct DetectionLineOut<'a> {
    image_id: &'a str,
    detections: Vec<BoxOut<'a>>,
}

pub fn detection_line(image_id: &str, detections: &[Detection]) -> String {
    let out = DetectionLineOut {
        image_id,
        detections: detections
            .iter()
            .map(|d| BoxOut::new(Some(&d.class_label), Some(d.confidence), &d.bbox))
            .collect(),
    };
    serde_json::to_string(&out).expect("detection line serializes")
}

/// Writes one line per image, including images with no detections.
pub fn write_detections<W: Write>(mut w: W, set: &DetectionSet) -> io::Result<()> {
    for (id, dets) in set.iter() {
        writeln!(w, "{}", detection_line(id, dets))?;
    }
    w.flush()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlainBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HardSampleEntry {
    image_id: String,
    image_w: u32,
    image_h: u32,
    key_confidence: f64,
    boxes: Vec<PlainBox>,
}

pub fn hard_samples_to_json(index: &HardSampleIndex) -> String {
    let doc: IndexMap<&str, Vec<HardSampleEntry>> = index
        .iter()
        .map(|(k, images)| {
            (
                k,
                images
                    .iter()
                    .map(|img| {
                        let (image_w, image_h) =
                            img.boxes.first().map_or((0, 0), |b| (b.image_w, b.image_h));
                        HardSampleEntry {
                            image_id: img.image_id.clone(),
                            image_w,
                            image_h,
                            key_confidence: img.key_confidence,
                            boxes: img
                                .boxes
                                .iter()
                                .map(|b| PlainBox {
                                    x: b.x,
                                    y: b.y,
                                    w: b.w,
                                    h: b.h,
                                })
                                .collect(),
                        }
                    })
                    .collect(),
            )
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&doc).expect("hard-sample index serializes");
    s.push('\n');
    s
}

pub fn parse_hard_samples(
    text: &str,
    catalog: &ClassCatalog,
) -> Result<HardSampleIndex, FormatError> {
    let doc: IndexMap<String, Vec<HardSampleEntry>> =
        serde_json::from_str(text).map_err(|e| FormatError {
            line: e.line(),
            kind: FormatErrorKind::Syntax(e.to_string()),
        })?;
    let mut classes = Vec::with_capacity(doc.len());
    for (key, entries) in doc {
        if !catalog.is_disease(&key) {
            return Err(FormatError {
                line: 0,
                kind: FormatErrorKind::UnknownLabel(key),
            });
        }
        let images = entries
            .into_iter()
            .map(|e| HardSampleImage {
                boxes: e
                    .boxes
                    .iter()
                    .map(|b| BoundingBox {
                        x: b.x,
                        y: b.y,
                        w: b.w,
                        h: b.h,
                        image_w: e.image_w,
                        image_h: e.image_h,
                    })
                    .collect(),
                image_id: e.image_id,
                key_confidence: e.key_confidence,
            })
            .collect();
        classes.push((key, images));
    }
    HardSampleIndex::new(catalog, classes)
        .map_err(|e| FormatError::schema(0, "<index>", e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GateLine {
    image_id: String,
    verdict: GateVerdict,
}

/// Parses first-stage verdicts: `{"image_id": ..., "verdict": "healthy"|"diseased"}` per line.
pub fn parse_gate<R: BufRead>(reader: R) -> Result<BinaryGate, FormatError> {
    let mut verdicts = Vec::new();
    let mut seen = HashSet::new();
    for l in numbered_lines(reader) {
        let (line, text) = l?;
        let g: GateLine = serde_json::from_str(&text).map_err(|e| FormatError {
            line,
            kind: FormatErrorKind::Syntax(e.to_string()),
        })?;
        if !seen.insert(g.image_id.clone()) {
            return Err(FormatError {
                line,
                kind: FormatErrorKind::DuplicateImageLine(g.image_id),
            });
        }
        verdicts.push((g.image_id, g.verdict));
    }
    Ok(BinaryGate::new(verdicts))
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("image `{0}` has a zero dimension; boxes cannot be normalised")]
    NonNormalizableBox(String),
    #[error("image `{image_id}` annotation label `{label}` is not in the catalog")]
    UnknownLabel { image_id: String, label: String },
    #[error("image id `{0}` cannot be used as a file name")]
    InvalidImageId(String),
}

/// Label file content for one record.
pub fn label_lines(record: &ImageRecord, catalog: &ClassCatalog) -> Result<String, ExportError> {
    let mut out = String::new();
    for a in &record.annotations {
        let b = &a.bbox;
        if b.image_w == 0 || b.image_h == 0 {
            return Err(ExportError::NonNormalizableBox(record.image_id.clone()));
        }
        let class = catalog
            .index_of(&a.label)
            .ok_or_else(|| ExportError::UnknownLabel {
                image_id: record.image_id.clone(),
                label: a.label.clone(),
            })?;
        let (iw, ih) = (f64::from(b.image_w), f64::from(b.image_h));
        out.push_str(&format!(
            "{class} {:.6} {:.6} {:.6} {:.6}\n",
            (b.x + b.w / 2.0) / iw,
            (b.y + b.h / 2.0) / ih,
            b.w / iw,
            b.h / ih
        ));
    }
    Ok(out)
}

fn safe_file_stem(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\', '\0'])
}

/// Writes `<image_id>.txt` for every manifest image (empty file when an
/// image has no boxes). Returns the written paths in manifest order.
pub fn export_labels(
    manifest: &TrainingManifest,
    catalog: &ClassCatalog,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExportError> {
    fs::create_dir_all(out_dir).map_err(|source| ExportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::with_capacity(manifest.total_images());
    for rec in manifest.records() {
        if !safe_file_stem(&rec.image_id) {
            return Err(ExportError::InvalidImageId(rec.image_id.clone()));
        }
        let content = label_lines(rec, catalog)?;
        let path = out_dir.join(format!("{}.txt", rec.image_id));
        fs::write(&path, content).map_err(|source| ExportError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// One parsed label line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelLine {
    pub class_index: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl LabelLine {
    pub fn parse(line: &str) -> Option<LabelLine> {
        let mut it = line.split(' ');
        let class_index = it.next()?.parse().ok()?;
        let mut vals = [0.0; 4];
        for v in &mut vals {
            *v = it.next()?.parse().ok()?;
        }
        if it.next().is_some() {
            return None;
        }
        Some(LabelLine {
            class_index,
            cx: vals[0],
            cy: vals[1],
            w: vals[2],
            h: vals[3],
        })
    }

    /// Back to pixel `(x, y, w, h)`.
    pub fn to_pixels(&self, image_w: u32, image_h: u32) -> (f64, f64, f64, f64) {
        let (iw, ih) = (f64::from(image_w), f64::from(image_h));
        let w = self.w * iw;
        let h = self.h * ih;
        (self.cx * iw - w / 2.0, self.cy * ih - h / 2.0, w, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{build_manifest, GenerationTag};
    use crate::model::validate_dataset;

    fn catalog() -> ClassCatalog {
        ClassCatalog::new(["CCYV", "CLS", "DM", "GM", "MYSV", "MD", "PM"], "HE").unwrap()
    }

    const C1: &str = r#"{"image_id":"c1","true_label":"MD","image_w":3000,"image_h":2000,"annotations":[{"label":"MD","x":10,"y":10,"w":100,"h":80}]}"#;

    #[test]
    fn parses_manifest_line() {
        let recs = parse_manifest(C1.as_bytes(), &catalog()).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!((r.image_id.as_str(), r.true_label.as_str()), ("c1", "MD"));
        assert_eq!(r.annotations.len(), 1);
        assert_eq!(
            r.annotations[0].bbox,
            BoundingBox::new(10.0, 10.0, 100.0, 80.0, 3000, 2000).unwrap()
        );
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_manifest("".as_bytes(), &catalog())
            .unwrap()
            .is_empty());
        assert!(parse_manifest("\n  \n".as_bytes(), &catalog())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn negative_width_is_schema_error_on_its_line() {
        let bad = C1.replace(r#""w":100"#, r#""w":-5"#);
        let text = format!("{C1}\n{bad}\n");
        let text = text.replacen("\"c1\"", "\"c0\"", 1);
        let err = parse_manifest(text.as_bytes(), &catalog()).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(
            matches!(&err.kind, FormatErrorKind::Schema { field, .. } if field == "annotations[0].w")
        );
    }

    #[test]
    fn error_kinds() {
        let c = catalog();
        let e = parse_manifest("{not json".as_bytes(), &c).unwrap_err();
        assert!(matches!(e.kind, FormatErrorKind::Syntax(_)));
        let e = parse_manifest(
            C1.replace("\"MD\",\"image_w\"", "\"XX\",\"image_w\"")
                .as_bytes(),
            &c,
        )
        .unwrap_err();
        assert_eq!(e.kind, FormatErrorKind::UnknownLabel("XX".into()));
        let e = parse_manifest(C1.replace(r#""x":10"#, r#""x":NaN"#).as_bytes(), &c).unwrap_err();
        assert!(
            matches!(&e.kind, FormatErrorKind::Schema { field, .. } if field == "x"),
            "{e}"
        );
        let e = parse_manifest(C1.replace(r#""y":10"#, r#""y":1e999"#).as_bytes(), &c).unwrap_err();
        assert!(matches!(e.kind, FormatErrorKind::Schema { .. }), "{e}");
        let e = parse_manifest(
            C1.replace(r#""image_w":3000"#, r#""image_w":0"#).as_bytes(),
            &c,
        )
        .unwrap_err();
        assert!(matches!(&e.kind, FormatErrorKind::Schema { field, .. } if field == "image_w"));
        let e = parse_manifest(
            C1.replace("\"annotations\"", "\"annotation\"").as_bytes(),
            &c,
        )
        .unwrap_err();
        assert!(
            matches!(&e.kind, FormatErrorKind::Schema { reason, .. } if reason == "unknown field")
        );
    }

    fn three_images() -> Dataset {
        validate_dataset(
            vec![
                ImageRecord::new("c1", "MD", 3000, 2000),
                ImageRecord::new("c2", "HE", 3000, 2000),
                ImageRecord::new("c3", "PM", 3000, 2000),
            ],
            &catalog(),
        )
        .unwrap()
    }

    #[test]
    fn detections_absent_means_empty() {
        let ds = three_images();
        let dump = r#"{"image_id":"c1","detections":[{"label":"MD","confidence":0.9,"x":1,"y":2,"w":3,"h":4}]}"#;
        let set = parse_detections(dump.as_bytes(), &catalog(), &ds).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.get("c1").unwrap().len(), 1);
        assert!(set.get("c2").unwrap().is_empty());
        assert!(set.get("c3").unwrap().is_empty());
    }

    #[test]
    fn detection_errors() {
        let ds = three_images();
        let c = catalog();
        let over = r#"{"image_id":"c1","detections":[{"label":"MD","confidence":1.5,"x":1,"y":2,"w":3,"h":4}]}"#;
        let e = parse_detections(over.as_bytes(), &c, &ds).unwrap_err();
        assert!(
            matches!(&e.kind, FormatErrorKind::Schema { field, .. } if field == "detections[0].confidence")
        );
        let dup =
            "{\"image_id\":\"c1\",\"detections\":[]}\n{\"image_id\":\"c1\",\"detections\":[]}";
        let e = parse_detections(dup.as_bytes(), &c, &ds).unwrap_err();
        assert_eq!(
            (e.line, e.kind),
            (2, FormatErrorKind::DuplicateImageLine("c1".into()))
        );
        let unknown = "{\"image_id\":\"zz\",\"detections\":[]}";
        let e = parse_detections(unknown.as_bytes(), &c, &ds).unwrap_err();
        assert!(e.is_coverage());
    }

    #[test]
    fn full_image_box_exports_as_centre() {
        let c = catalog();
        let rec = ImageRecord::new("a", "PM", 3000, 2000).with_annotation(
            "PM",
            BoundingBox::new(0.0, 0.0, 3000.0, 2000.0, 3000, 2000).unwrap(),
        );
        assert_eq!(c.index_of("PM"), Some(6));
        let rec_md = ImageRecord::new("b", "MD", 3000, 2000).with_annotation(
            "MD",
            BoundingBox::new(0.0, 0.0, 3000.0, 2000.0, 3000, 2000).unwrap(),
        );
        assert_eq!(
            label_lines(&rec_md, &c).unwrap(),
            "5 0.500000 0.500000 1.000000 1.000000\n"
        );
        assert!(label_lines(&rec, &c).unwrap().starts_with("6 "));
    }

    #[test]
    fn hard_samples_export_with_healthy_index() {
        let c = catalog();
        let idx = HardSampleIndex::new(
            &c,
            [(
                "MD".to_string(),
                vec![HardSampleImage {
                    image_id: "h1".into(),
                    boxes: vec![BoundingBox::new(10.0, 20.0, 30.0, 40.0, 3000, 2000).unwrap()],
                    key_confidence: 0.8,
                }],
            )],
        )
        .unwrap();
        let m = build_manifest(&[], Some(&idx), &c, GenerationTag::Hsm).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = export_labels(&m, &c, dir.path()).unwrap();
        let text = fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("7 "));
        assert!(text.ends_with('\n'));

        let text2 = hard_samples_to_json(&idx);
        assert_eq!(parse_hard_samples(&text2, &c).unwrap(), idx);
    }

    #[test]
    fn rejects_unsafe_file_names() {
        let c = catalog();
        let m = build_manifest(
            &[ImageRecord::new("../x", "MD", 10, 10)],
            None,
            &c,
            GenerationTag::Org,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            export_labels(&m, &c, dir.path()),
            Err(ExportError::InvalidImageId(_))
        ));
    }

    #[test]
    fn zero_dimension_is_not_normalisable() {
        let c = catalog();
        let mut rec = ImageRecord::new("a", "MD", 0, 0);
        rec.annotations.push(Annotation {
            label: "MD".into(),
            bbox: BoundingBox {
                x: 0.0,
                y: 0.0,
                w: 1.0,
                h: 1.0,
                image_w: 0,
                image_h: 10,
            },
        });
        assert!(matches!(
            label_lines(&rec, &c),
            Err(ExportError::NonNormalizableBox(_))
        ));
    }

    #[test]
    fn gate_file() {
        let g = parse_gate("{\"image_id\":\"a\",\"verdict\":\"healthy\"}\n{\"image_id\":\"b\",\"verdict\":\"diseased\"}".as_bytes())
            .unwrap();
        assert_eq!(g.verdict("a"), Some(GateVerdict::Healthy));
        assert_eq!(g.verdict("b"), Some(GateVerdict::Diseased));
        assert!(parse_gate("{\"image_id\":\"a\",\"verdict\":\"maybe\"}".as_bytes()).is_err());
    }

    #[test]
    fn label_line_parse() {
        let l = LabelLine::parse("7 0.500000 0.250000 0.100000 0.200000").unwrap();
        assert_eq!(l.class_index, 7);
        let (x, y, w, h) = l.to_pixels(1000, 1000);
        assert!((x - 450.0).abs() < 1e-9 && (y - 150.0).abs() < 1e-9);
        assert!((w - 100.0).abs() < 1e-9 && (h - 200.0).abs() < 1e-9);
        assert!(LabelLine::parse("7 0.5 0.5 0.1").is_none());
        assert!(LabelLine::parse("x 0.5 0.5 0.1 0.1").is_none());
    }
}
