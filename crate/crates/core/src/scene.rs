//! Image-level annotations and decoded detections.

use serde::{Deserialize, Serialize};

use crate::category::CategoryTable;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, KeypointPrediction, Landmark, Visibility};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthItem {
    pub category_id: u32,
    pub bbox: BoundingBox,
    pub landmarks: Vec<Landmark>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub items: Vec<GroundTruthItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category_id: u32,
    pub score: f64,
    pub bbox: BoundingBox,
    pub landmarks: Vec<KeypointPrediction>,
}

impl Scene {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        Scene {
            image_id: image_id.into(),
            width,
            height,
            items: Vec::new(),
        }
    }

    /// Checks categories and landmark counts against `table`.
    pub fn validate(&self, table: &CategoryTable) -> Result<()> {
        for (i, item) in self.items.iter().enumerate() {
            let count = table.keypoint_count(item.category_id).map_err(|_| Error::Scene {
                image_id: self.image_id.clone(),
                message: format!("items[{i}]: unknown category {}", item.category_id),
            })?;
            if item.landmarks.len() != count {
                return Err(Error::Scene {
                    image_id: self.image_id.clone(),
                    message: format!(
                        "items[{i}]: category {} needs {count} landmarks, found {}",
                        item.category_id,
                        item.landmarks.len()
                    ),
                });
            }
            if !item.bbox.is_finite()
                || item.landmarks.iter().any(|l| !(l.x.is_finite() && l.y.is_finite()))
            {
                return Err(Error::Scene {
                    image_id: self.image_id.clone(),
                    message: format!("items[{i}]: non-finite coordinate"),
                });
            }
        }
        Ok(())
    }

    /// Clamps boxes and labeled landmarks into the image; returns how many were moved.
    pub fn clamp_to_bounds(&mut self) -> usize {
        let (w, h) = (self.width as f64, self.height as f64);
        let mut warnings = 0;
        for item in &mut self.items {
            if item.bbox.clamp_to(w, h) {
                warnings += 1;
            }
            for lm in &mut item.landmarks {
                if !lm.visibility.is_labeled() {
                    continue;
                }
                let (x, y) = (lm.x.clamp(0.0, w), lm.y.clamp(0.0, h));
                if (x, y) != (lm.x, lm.y) {
                    lm.x = x;
                    lm.y = y;
                    warnings += 1;
                }
            }
        }
        warnings
    }

    /// Horizontal mirror; landmark slots are permuted through the table's flip pairs.
    pub fn mirrored(&self, table: &CategoryTable) -> Result<Self> {
        let w = self.width as f64;
        let items = self
            .items
            .iter()
            .map(|item| {
                let landmarks = mirror_slots(table, item.category_id, &item.landmarks, |l| {
                    Landmark::new(w - l.x, l.y, l.visibility)
                })?;
                Ok(GroundTruthItem {
                    category_id: item.category_id,
                    bbox: item.bbox.mirrored(w),
                    landmarks,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Scene {
            items,
            ..self.clone()
        })
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let items = self
            .items
            .iter()
            .map(|item| GroundTruthItem {
                category_id: item.category_id,
                bbox: item.bbox.translated(dx, dy),
                landmarks: item
                    .landmarks
                    .iter()
                    .map(|l| Landmark::new(l.x + dx, l.y + dy, l.visibility))
                    .collect(),
            })
            .collect();
        Scene {
            items,
            ..self.clone()
        }
    }

    /// Resizes the image and every coordinate by `factor`; image dims are rounded.
    pub fn scaled(&self, factor: f64) -> Self {
        let items = self
            .items
            .iter()
            .map(|item| GroundTruthItem {
                category_id: item.category_id,
                bbox: item.bbox.scaled(factor),
                landmarks: item
                    .landmarks
                    .iter()
                    .map(|l| Landmark::new(l.x * factor, l.y * factor, l.visibility))
                    .collect(),
            })
            .collect();
        Scene {
            image_id: self.image_id.clone(),
            width: ((self.width as f64 * factor).round() as u32).max(1),
            height: ((self.height as f64 * factor).round() as u32).max(1),
            items,
        }
    }

    pub fn labeled_landmark_count(&self) -> usize {
        self.items
            .iter()
            .flat_map(|i| &i.landmarks)
            .filter(|l| l.visibility != Visibility::Unlabeled)
            .count()
    }
}

impl Detection {
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Detection {
            category_id: self.category_id,
            score: self.score,
            bbox: self.bbox.translated(dx, dy),
            landmarks: self
                .landmarks
                .iter()
                .map(|k| KeypointPrediction {
                    x: k.x + dx,
                    y: k.y + dy,
                    confidence: k.confidence,
                })
                .collect(),
        }
    }

    pub fn mirrored(&self, image_width: f64, table: &CategoryTable) -> Result<Self> {
        let landmarks = mirror_slots(table, self.category_id, &self.landmarks, |k| {
            KeypointPrediction {
                x: image_width - k.x,
                ..*k
            }
        })?;
        Ok(Detection {
            category_id: self.category_id,
            score: self.score,
            bbox: self.bbox.mirrored(image_width),
            landmarks,
        })
    }

    /// The ground-truth item this detection would be if it were exact.
    pub fn from_ground_truth(item: &GroundTruthItem, score: f64) -> Self {
        Detection {
            category_id: item.category_id,
            score,
            bbox: item.bbox,
            landmarks: item
                .landmarks
                .iter()
                .map(|l| KeypointPrediction {
                    x: l.x,
                    y: l.y,
                    confidence: if l.visibility.is_labeled() { 1.0 } else { 0.0 },
                })
                .collect(),
        }
    }
}

fn mirror_slots<T: Copy>(
    table: &CategoryTable,
    category_id: u32,
    slots: &[T],
    mirror: impl Fn(&T) -> T,
) -> Result<Vec<T>> {
    let spec = table.spec(category_id)?;
    if slots.len() != spec.keypoint_count {
        return Err(Error::Shape(format!(
            "category {category_id} needs {} landmarks, found {}",
            spec.keypoint_count,
            slots.len()
        )));
    }
    let mut out = slots.to_vec();
    for (local, slot) in slots.iter().enumerate() {
        let partner = table.flip_partner(spec.global_offset + local) - spec.global_offset;
        out[partner] = mirror(slot);
    }
    Ok(out)
}
