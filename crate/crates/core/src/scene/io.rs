//! JSON annotation format shared by scenes and predictions.
//!
//! ```text
//! {
//!   "format": "mhparse-scene" | "mhparse-prediction",
//!   "version": 1,
//!   "height": H, "width": W,
//!   "image": [[r, g, b, r, g, b, ...], ...],      // scenes only, one row per line, 0-255
//!   "persons": [{"mask": [[[start, len], ...], ...], "confidence": c}, ...],
//!   "part_labels": [[[label, len], ...], ...]    // per row, runs cover the full width
//! }
//! ```
//! Person masks store the runs of set pixels per row; `confidence` is only
//! present in predictions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Grid, LabeledScene, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::instance::InstanceParsing;
use crate::numcore::Tensor;

const SCENE_FORMAT: &str = "mhparse-scene";
const PREDICTION_FORMAT: &str = "mhparse-prediction";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonRecord {
    mask: Vec<Vec<[u32; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    format: String,
    version: u32,
    height: usize,
    width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<Vec<Vec<u8>>>,
    persons: Vec<PersonRecord>,
    part_labels: Vec<Vec<[u32; 2]>>,
}

fn encode_mask(mask: &Grid<bool>) -> Vec<Vec<[u32; 2]>> {
    (0..mask.height())
        .map(|y| {
            let mut runs = Vec::new();
            let mut x = 0;
            while x < mask.width() {
                if mask.get(y, x) {
                    let start = x;
                    while x < mask.width() && mask.get(y, x) {
                        x += 1;
                    }
                    runs.push([start as u32, (x - start) as u32]);
                } else {
                    x += 1;
                }
            }
            runs
        })
        .collect()
}

fn decode_mask(rows: &[Vec<[u32; 2]>], h: usize, w: usize, what: &str) -> Result<Grid<bool>> {
    if rows.len() != h {
        return Err(Error::Invariant(format!("{what}: {} rows, expected {h}", rows.len())));
    }
    let mut g = Grid::filled(h, w, false);
    for (y, runs) in rows.iter().enumerate() {
        for &[start, len] in runs {
            let (start, len) = (start as usize, len as usize);
            if len == 0 || start + len > w {
                return Err(Error::Invariant(format!("{what}: run [{start}, {len}] out of bounds in row {y}")));
            }
            for x in start..start + len {
                if g.get(y, x) {
                    return Err(Error::Invariant(format!("{what}: overlapping runs in row {y}")));
                }
                g.set(y, x, true);
            }
        }
    }
    Ok(g)
}

fn encode_labels(labels: &Grid<u8>) -> Vec<Vec<[u32; 2]>> {
    (0..labels.height())
        .map(|y| {
            let mut runs: Vec<[u32; 2]> = Vec::new();
            for x in 0..labels.width() {
                let l = labels.get(y, x) as u32;
                match runs.last_mut() {
                    Some(run) if run[0] == l => run[1] += 1,
                    _ => runs.push([l, 1]),
                }
            }
            runs
        })
        .collect()
}

fn decode_labels(rows: &[Vec<[u32; 2]>], h: usize, w: usize) -> Result<Grid<u8>> {
    if rows.len() != h {
        return Err(Error::Invariant(format!("part_labels: {} rows, expected {h}", rows.len())));
    }
    let mut data = Vec::with_capacity(h * w);
    for (y, runs) in rows.iter().enumerate() {
        let row_start = data.len();
        for &[label, len] in runs {
            if label as usize >= NUM_CLASSES {
                return Err(Error::Invariant(format!("part label {label} out of range in row {y}")));
            }
            data.extend(std::iter::repeat_n(label as u8, len as usize));
        }
        if data.len() - row_start != w {
            return Err(Error::Invariant(format!(
                "part_labels row {y} covers {} pixels, expected {w}",
                data.len() - row_start
            )));
        }
    }
    Ok(Grid::from_vec(h, w, data).expect("row lengths checked"))
}

fn parse(json: &str, format: &str) -> Result<AnnotationFile> {
    let file: AnnotationFile = serde_json::from_str(json)?;
    if file.format != format {
        return Err(Error::Invariant(format!(
            "expected format {format:?}, found {:?}",
            file.format
        )));
    }
    if file.version != VERSION {
        return Err(Error::Invariant(format!("unsupported version {}", file.version)));
    }
    Ok(file)
}

pub fn scene_to_json(scene: &LabeledScene) -> String {
    let (h, w) = (scene.height(), scene.width());
    let image = (0..h)
        .map(|y| {
            scene.image.data()[y * w * 3..(y + 1) * w * 3]
                .iter()
                .map(|v| (v * 255.0).round() as u8)
                .collect()
        })
        .collect();
    let file = AnnotationFile {
        format: SCENE_FORMAT.into(),
        version: VERSION,
        height: h,
        width: w,
        image: Some(image),
        persons: scene
            .person_masks
            .iter()
            .map(|m| PersonRecord {
                mask: encode_mask(m),
                confidence: None,
            })
            .collect(),
        part_labels: encode_labels(&scene.part_labels),
    };
    to_pretty_rows(&file)
}

/// Pretty-prints the top level but keeps each row on a single line.
fn to_pretty_rows(file: &AnnotationFile) -> String {
    fn rows<T: Serialize>(rows: &[T], indent: &str) -> String {
        let lines: Vec<String> = rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable"))
            .collect();
        format!("[\n{indent}  {}\n{indent}]", lines.join(&format!(",\n{indent}  ")))
    }
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"format\": {:?},\n", file.format));
    out.push_str(&format!("  \"version\": {},\n", file.version));
    out.push_str(&format!("  \"height\": {},\n", file.height));
    out.push_str(&format!("  \"width\": {},\n", file.width));
    if let Some(image) = &file.image {
        out.push_str(&format!("  \"image\": {},\n", rows(image, "  ")));
    }
    let persons: Vec<String> = file
        .persons
        .iter()
        .map(|p| {
            let conf = p
                .confidence
                .map(|c| format!(",\n      \"confidence\": {}", serde_json::to_string(&c).expect("finite")))
                .unwrap_or_default();
            format!("\n    {{\n      \"mask\": {}{}\n    }}", rows(&p.mask, "      "), conf)
        })
        .collect();
    let persons_end = if persons.is_empty() { "" } else { "\n  " };
    out.push_str(&format!("  \"persons\": [{}{persons_end}],\n", persons.join(",")));
    out.push_str(&format!("  \"part_labels\": {}\n", rows(&file.part_labels, "  ")));
    out.push_str("}\n");
    out
}

pub fn scene_from_json(json: &str) -> Result<LabeledScene> {
    let file = parse(json, SCENE_FORMAT)?;
    let (h, w) = (file.height, file.width);
    let image_rows = file
        .image
        .ok_or_else(|| Error::Invariant("scene file has no image".into()))?;
    if image_rows.len() != h || image_rows.iter().any(|r| r.len() != w * 3) {
        return Err(Error::Invariant(format!("image must be {h} rows of {} values", w * 3)));
    }
    let image = Tensor::new(
        vec![h, w, 3],
        image_rows.concat().into_iter().map(|v| v as f64 / 255.0).collect(),
    )?;
    let masks = file
        .persons
        .iter()
        .enumerate()
        .map(|(i, p)| decode_mask(&p.mask, h, w, &format!("person {i}")))
        .collect::<Result<Vec<_>>>()?;
    let labels = decode_labels(&file.part_labels, h, w)?;
    LabeledScene::new(image, masks, labels)
}

pub fn prediction_to_json(pred: &InstanceParsing) -> String {
    let (h, w) = (pred.instance_ids.height(), pred.instance_ids.width());
    let file = AnnotationFile {
        format: PREDICTION_FORMAT.into(),
        version: VERSION,
        height: h,
        width: w,
        image: None,
        persons: (0..pred.instance_count())
            .map(|i| PersonRecord {
                mask: encode_mask(&pred.instance_ids.map(|v| v as usize == i + 1)),
                confidence: Some(pred.confidences[i]),
            })
            .collect(),
        part_labels: encode_labels(&pred.categories),
    };
    to_pretty_rows(&file)
}

pub fn prediction_from_json(json: &str) -> Result<InstanceParsing> {
    let file = parse(json, PREDICTION_FORMAT)?;
    let (h, w) = (file.height, file.width);
    let mut ids = Grid::filled(h, w, 0u16);
    let mut confidences = Vec::with_capacity(file.persons.len());
    for (i, p) in file.persons.iter().enumerate() {
        let mask = decode_mask(&p.mask, h, w, &format!("instance {i}"))?;
        for (k, &m) in mask.data().iter().enumerate() {
            if m {
                if ids.data()[k] != 0 {
                    return Err(Error::Invariant(format!("instance masks overlap at pixel {k}")));
                }
                ids.data_mut()[k] = i as u16 + 1;
            }
        }
        confidences.push(
            p.confidence
                .ok_or_else(|| Error::Invariant(format!("instance {i} has no confidence")))?,
        );
    }
    let categories = decode_labels(&file.part_labels, h, w)?;
    InstanceParsing::new(ids, categories, confidences)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn save_scene(scene: &LabeledScene, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &scene_to_json(scene))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<LabeledScene> {
    scene_from_json(&read(path.as_ref())?)
}

pub fn save_prediction(pred: &InstanceParsing, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &prediction_to_json(pred))
}

pub fn load_prediction(path: impl AsRef<Path>) -> Result<InstanceParsing> {
    prediction_from_json(&read(path.as_ref())?)
}
