//! JSON annotation and detection files.
//!
//! Annotations follow the per-item layout of DeepFashion2: a category id, a
//! box as corner coordinates and a flat list of `x, y, visibility` triples.
//! Detections use the same item layout with a score and `x, y, confidence`
//! landmark triples.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::category::CategoryTable;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, KeypointPrediction, Landmark, Visibility};
use crate::scene::{Detection, GroundTruthItem, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub images: Vec<ImageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub items: Vec<ItemRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub landmarks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFile {
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: String,
    pub category_id: u32,
    pub score: f64,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub landmarks: Vec<f64>,
}

/// Parses JSON, reporting schema violations with the path of the offending value.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn schema(path: String, message: impl Into<String>) -> Error {
    Error::Schema {
        path,
        message: message.into(),
    }
}

fn landmarks_from_triples(values: &[f64], path: String) -> Result<Vec<Landmark>> {
    if !values.len().is_multiple_of(3) {
        return Err(schema(path, format!("length {} is not a multiple of 3", values.len())));
    }
    values
        .chunks_exact(3)
        .enumerate()
        .map(|(i, t)| {
            let code = t[2];
            let vis = (code.fract() == 0.0 && (0.0..=2.0).contains(&code))
                .then(|| Visibility::from_code(code as u8))
                .flatten()
                .ok_or_else(|| schema(format!("{path}[{}]", 3 * i + 2), format!("visibility {code} not in {{0, 1, 2}}")))?;
            Ok(Landmark::new(t[0], t[1], vis))
        })
        .collect()
}

impl ImageRecord {
    pub fn from_scene(scene: &Scene) -> Self {
        ImageRecord {
            image_id: scene.image_id.clone(),
            width: scene.width,
            height: scene.height,
            items: scene
                .items
                .iter()
                .map(|it| ItemRecord {
                    category_id: it.category_id,
                    bbox: [it.bbox.x1, it.bbox.y1, it.bbox.x2, it.bbox.y2],
                    landmarks: it
                        .landmarks
                        .iter()
                        .flat_map(|l| [l.x, l.y, l.visibility.code() as f64])
                        .collect(),
                })
                .collect(),
        }
    }

    fn to_scene(&self, index: usize) -> Result<Scene> {
        let items = self
            .items
            .iter()
            .enumerate()
            .map(|(j, it)| {
                let b = it.bbox;
                Ok(GroundTruthItem {
                    category_id: it.category_id,
                    bbox: BoundingBox::new(b[0], b[1], b[2], b[3]),
                    landmarks: landmarks_from_triples(&it.landmarks, format!("images[{index}].items[{j}].landmarks"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene {
            image_id: self.image_id.clone(),
            width: self.width,
            height: self.height,
            items,
        })
    }
}

/// Scenes read from an annotation file plus the number of coordinates that
/// were clamped into the image.
#[derive(Debug, Clone)]
pub struct LoadedAnnotations {
    pub scenes: Vec<Scene>,
    pub clamped: usize,
}

pub fn read_annotations(text: &str, table: &CategoryTable) -> Result<LoadedAnnotations> {
    let file: AnnotationFile = parse_json(text)?;
    let mut clamped = 0;
    let mut scenes = Vec::with_capacity(file.images.len());
    for (i, rec) in file.images.iter().enumerate() {
        let mut scene = rec.to_scene(i)?;
        clamped += scene.clamp_to_bounds();
        scene.validate(table)?;
        scenes.push(scene);
    }
    Ok(LoadedAnnotations { scenes, clamped })
}

pub fn write_annotations(scenes: &[Scene]) -> String {
    let file = AnnotationFile {
        images: scenes.iter().map(ImageRecord::from_scene).collect(),
    };
    serde_json::to_string_pretty(&file).expect("annotations serialize") + "\n"
}

pub fn read_detections(text: &str, table: &CategoryTable) -> Result<BTreeMap<String, Vec<Detection>>> {
    let file: DetectionFile = parse_json(text)?;
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (i, rec) in file.detections.into_iter().enumerate() {
        let path = format!("detections[{i}]");
        let n = table
            .keypoint_count(rec.category_id)
            .map_err(|e| schema(format!("{path}.category_id"), e.to_string()))?;
        if !rec.landmarks.is_empty() && rec.landmarks.len() != 3 * n {
            return Err(schema(
                format!("{path}.landmarks"),
                format!("expected {} values for category {}, found {}", 3 * n, rec.category_id, rec.landmarks.len()),
            ));
        }
        if !rec.score.is_finite() {
            return Err(schema(format!("{path}.score"), "score must be finite"));
        }
        let b = rec.bbox;
        out.entry(rec.image_id).or_default().push(Detection {
            category_id: rec.category_id,
            score: rec.score,
            bbox: BoundingBox::new(b[0], b[1], b[2], b[3]),
            landmarks: rec
                .landmarks
                .chunks_exact(3)
                .map(|t| KeypointPrediction {
                    x: t[0],
                    y: t[1],
                    confidence: t[2],
                })
                .collect(),
        });
    }
    Ok(out)
}

/// Detections ordered by image id, then in their given order.
pub fn write_detections(detections: &BTreeMap<String, Vec<Detection>>) -> String {
    let records = detections
        .iter()
        .flat_map(|(id, dets)| {
            dets.iter().map(move |d| DetectionRecord {
                image_id: id.clone(),
                category_id: d.category_id,
                score: d.score,
                bbox: [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2],
                landmarks: d.landmarks.iter().flat_map(|k| [k.x, k.y, k.confidence]).collect(),
            })
        })
        .collect();
    serde_json::to_string_pretty(&DetectionFile { detections: records }).expect("detections serialize") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Scene {
        let table = CategoryTable::default();
        let n = table.keypoint_count(9).unwrap();
        Scene {
            image_id: "img_0".into(),
            width: 64,
            height: 48,
            items: vec![GroundTruthItem {
                category_id: 9,
                bbox: BoundingBox::new(4.5, 6.25, 40.0, 30.0),
                landmarks: (0..n)
                    .map(|i| Landmark::new(10.0 + i as f64, 12.1, Visibility::from_code((i % 3) as u8).unwrap()))
                    .collect(),
            }],
        }
    }

    #[test]
    fn annotations_round_trip() {
        let table = CategoryTable::default();
        let text = write_annotations(&[sample()]);
        let back = read_annotations(&text, &table).unwrap();
        assert_eq!(back.scenes, vec![sample()]);
        assert_eq!(back.clamped, 0);
        assert_eq!(write_annotations(&back.scenes), text);
    }

    #[test]
    fn detections_round_trip() {
        let table = CategoryTable::default();
        let mut m = BTreeMap::new();
        let d = Detection::from_ground_truth(&sample().items[0], 0.123456789);
        m.insert("img_0".to_string(), vec![d.clone(), d]);
        let text = write_detections(&m);
        assert_eq!(read_detections(&text, &table).unwrap(), m);
    }

    #[test]
    fn missing_score_names_path() {
        let table = CategoryTable::default();
        let text = r#"{"detections": [{"image_id": "a", "category_id": 1, "score": 0.5, "bbox": [0,0,1,1]},
                                      {"image_id": "a", "category_id": 1, "bbox": [0,0,1,1]}]}"#;
        let err = read_detections(text, &table).unwrap_err().to_string();
        assert!(err.contains("detections[1]") && err.contains("score"), "{err}");
    }

    #[test]
    fn bad_visibility_names_path() {
        let table = CategoryTable::default();
        let lms: Vec<String> = (0..8).map(|i| format!("{}, 5, {}", i + 1, if i == 2 { 7 } else { 2 })).collect();
        let text = format!(
            r#"{{"images": [{{"image_id": "a", "width": 32, "height": 32,
                "items": [{{"category_id": 9, "bbox": [0, 0, 20, 20], "landmarks": [{}]}}]}}]}}"#,
            lms.join(", ")
        );
        let err = read_annotations(&text, &table).unwrap_err().to_string();
        assert!(err.contains("images[0].items[0].landmarks[8]"), "{err}");
    }

    #[test]
    fn out_of_bounds_coordinates_clamped() {
        let table = CategoryTable::default();
        let mut s = sample();
        s.items[0].bbox.x2 = 80.0;
        let loaded = read_annotations(&write_annotations(&[s]), &table).unwrap();
        assert!(loaded.clamped > 0);
        assert_eq!(loaded.scenes[0].items[0].bbox.x2, 64.0);
    }
}
