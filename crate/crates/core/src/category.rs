//! Clothing categories and their slices of the global keypoint index space.
//!
//! Every head tensor that carries per-keypoint channels (keypoint heatmaps,
//! coarse keypoint offsets) is laid out in one global index space of
//! [`NUM_KEYPOINTS`] entries. Each category owns a contiguous slice of it,
//! in category-id order.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CATEGORIES: usize = 13;
pub const NUM_KEYPOINTS: usize = 294;
pub const DEFAULT_SIGMA: f64 = 0.05;

/// Shipped default: DeepFashion2 keypoint counts with a mirror-order flip table.
pub const DEFAULT_CONFIG: &str = include_str!("../config/deepfashion2.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub id: u32,
    pub name: String,
    pub keypoint_count: usize,
    pub global_offset: usize,
}

impl CategorySpec {
    pub fn slice(&self) -> Range<usize> {
        self.global_offset..self.global_offset + self.keypoint_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTable {
    specs: Vec<CategorySpec>,
    flip_pairs: Vec<(usize, usize)>,
    sigmas: Vec<f64>,
    flip_partner: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawConfig {
    categories: Vec<RawCategory>,
    #[serde(default)]
    flip_pairs: Vec<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigmas: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawCategory {
    id: u32,
    name: String,
    keypoints: usize,
}

/// Parses and validates a category config.
pub fn load_category_table(config_text: &str) -> Result<CategoryTable> {
    CategoryTable::from_json(config_text)
}

impl Default for CategoryTable {
    fn default() -> Self {
        CategoryTable::from_json(DEFAULT_CONFIG).expect("shipped category config is valid")
    }
}

impl CategoryTable {
    pub fn from_json(config_text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(config_text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        if raw.categories.len() != NUM_CATEGORIES {
            return Err(Error::config(
                "categories",
                format!(
                    "expected {NUM_CATEGORIES} categories, found {}",
                    raw.categories.len()
                ),
            ));
        }

        let mut seen = HashSet::new();
        for cat in &raw.categories {
            if !seen.insert(cat.id) {
                return Err(Error::config(
                    format!("categories[id={}]", cat.id),
                    "duplicate id",
                ));
            }
            if cat.id == 0 || cat.id as usize > NUM_CATEGORIES {
                return Err(Error::config(
                    format!("categories[id={}]", cat.id),
                    format!("id must be in 1..={NUM_CATEGORIES}"),
                ));
            }
            if cat.keypoints == 0 {
                return Err(Error::config(
                    format!("categories[id={}].keypoints", cat.id),
                    "keypoint count must be positive",
                ));
            }
        }

        let total: usize = raw.categories.iter().map(|c| c.keypoints).sum();
        if total != NUM_KEYPOINTS {
            return Err(Error::config(
                "categories.keypoints",
                format!("keypoint total {total} ≠ {NUM_KEYPOINTS}"),
            ));
        }

        let mut ordered: Vec<&RawCategory> = raw.categories.iter().collect();
        ordered.sort_by_key(|c| c.id);
        let mut offset = 0;
        let specs: Vec<CategorySpec> = ordered
            .into_iter()
            .map(|c| {
                let spec = CategorySpec {
                    id: c.id,
                    name: c.name.clone(),
                    keypoint_count: c.keypoints,
                    global_offset: offset,
                };
                offset += c.keypoints;
                spec
            })
            .collect();

        let owner = |g: usize| specs.iter().position(|s| s.slice().contains(&g));
        let mut flip_pairs = Vec::with_capacity(raw.flip_pairs.len());
        let mut used = HashSet::new();
        for (i, pair) in raw.flip_pairs.iter().enumerate() {
            let field = format!("flip_pairs[{i}]");
            let &[a, b] = pair.as_slice() else {
                return Err(Error::config(field, "a pair needs exactly two indices"));
            };
            for idx in [a, b] {
                if idx < 0 || idx as usize >= NUM_KEYPOINTS {
                    return Err(Error::config(
                        field,
                        format!("index {idx} outside [0, {NUM_KEYPOINTS})"),
                    ));
                }
            }
            let (a, b) = (a as usize, b as usize);
            if a == b {
                return Err(Error::config(field, format!("index {a} paired with itself")));
            }
            if owner(a) != owner(b) {
                return Err(Error::config(
                    field,
                    format!("indices {a} and {b} belong to different categories"),
                ));
            }
            for idx in [a, b] {
                if !used.insert(idx) {
                    return Err(Error::config(
                        field,
                        format!("index {idx} already appears in another pair"),
                    ));
                }
            }
            flip_pairs.push((a, b));
        }

        let sigmas = match raw.sigmas {
            None => vec![DEFAULT_SIGMA; NUM_KEYPOINTS],
            Some(s) => {
                if s.len() != NUM_KEYPOINTS {
                    return Err(Error::config(
                        "sigmas",
                        format!("expected {NUM_KEYPOINTS} values, found {}", s.len()),
                    ));
                }
                if let Some(i) = s.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::config(
                        format!("sigmas[{i}]"),
                        format!("sigma must be positive, got {}", s[i]),
                    ));
                }
                s
            }
        };

        let mut flip_partner: Vec<usize> = (0..NUM_KEYPOINTS).collect();
        for &(a, b) in &flip_pairs {
            flip_partner[a] = b;
            flip_partner[b] = a;
        }

        Ok(CategoryTable {
            specs,
            flip_pairs,
            sigmas,
            flip_partner,
        })
    }

    /// Replaces the OKS constants, validating them like the config loader does.
    pub fn with_sigmas(mut self, sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() != NUM_KEYPOINTS {
            return Err(Error::config(
                "sigmas",
                format!("expected {NUM_KEYPOINTS} values, found {}", sigmas.len()),
            ));
        }
        if let Some(i) = sigmas.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config(
                format!("sigmas[{i}]"),
                format!("sigma must be positive, got {}", sigmas[i]),
            ));
        }
        self.sigmas = sigmas;
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        let raw = RawConfig {
            categories: self
                .specs
                .iter()
                .map(|s| RawCategory {
                    id: s.id,
                    name: s.name.clone(),
                    keypoints: s.keypoint_count,
                })
                .collect(),
            flip_pairs: self
                .flip_pairs
                .iter()
                .map(|&(a, b)| vec![a as i64, b as i64])
                .collect(),
            sigmas: Some(self.sigmas.clone()),
        };
        serde_json::to_string_pretty(&raw).expect("config serializes")
    }

    pub fn specs(&self) -> &[CategorySpec] {
        &self.specs
    }

    pub fn spec(&self, category_id: u32) -> Result<&CategorySpec> {
        category_id
            .checked_sub(1)
            .and_then(|i| self.specs.get(i as usize))
            .ok_or(Error::UnknownCategory(category_id))
    }

    pub fn keypoint_count(&self, category_id: u32) -> Result<usize> {
        self.spec(category_id).map(|s| s.keypoint_count)
    }

    pub fn slice(&self, category_id: u32) -> Result<Range<usize>> {
        self.spec(category_id).map(CategorySpec::slice)
    }

    pub fn global_keypoint_index(&self, category_id: u32, local_idx: usize) -> Result<usize> {
        let spec = self.spec(category_id)?;
        if local_idx >= spec.keypoint_count {
            return Err(Error::KeypointIndex {
                category_id,
                local: local_idx,
                count: spec.keypoint_count,
            });
        }
        Ok(spec.global_offset + local_idx)
    }

    pub fn flip_pairs(&self) -> &[(usize, usize)] {
        &self.flip_pairs
    }

    /// Global index of the mirror partner of `global_idx` (itself when unpaired).
    pub fn flip_partner(&self, global_idx: usize) -> usize {
        self.flip_partner[global_idx]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn num_categories(&self) -> usize {
        self.specs.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT_COUNTS: [usize; 13] = [25, 33, 31, 39, 15, 15, 10, 14, 8, 29, 37, 19, 19];

    fn config_with(counts: &[usize], pairs: &str, sigmas: Option<String>) -> String {
        let cats: Vec<String> = counts
            .iter()
            .enumerate()
            .map(|(i, n)| format!(r#"{{"id":{},"name":"c{}","keypoints":{}}}"#, i + 1, i + 1, n))
            .collect();
        let sigmas = sigmas.map(|s| format!(r#","sigmas":{s}"#)).unwrap_or_default();
        format!(
            r#"{{"categories":[{}],"flip_pairs":{pairs}{sigmas}}}"#,
            cats.join(",")
        )
    }

    #[test]
    fn default_offsets_are_cumulative() {
        let table = CategoryTable::default();
        let mut expected = Vec::new();
        let mut acc = 0;
        for n in DEFAULT_COUNTS {
            expected.push(acc);
            acc += n;
        }
        assert_eq!(acc, 294);
        let offsets: Vec<usize> = table.specs().iter().map(|s| s.global_offset).collect();
        assert_eq!(offsets, expected);
        assert_eq!(
            offsets,
            vec![0, 25, 58, 89, 128, 143, 158, 168, 182, 190, 219, 256, 275]
        );
        let counts: Vec<usize> = table.specs().iter().map(|s| s.keypoint_count).collect();
        assert_eq!(counts, DEFAULT_COUNTS);
    }

    #[test]
    fn total_mismatch_is_reported() {
        let mut counts = DEFAULT_COUNTS;
        counts[12] -= 1;
        let err = load_category_table(&config_with(&counts, "[]", None)).unwrap_err();
        assert!(err.to_string().contains("keypoint total 293 ≠ 294"), "{err}");
    }

    #[test]
    fn single_pair_in_first_slice_accepted() {
        let table = load_category_table(&config_with(&DEFAULT_COUNTS, "[[0,5]]", None)).unwrap();
        assert_eq!(table.flip_pairs(), &[(0, 5)]);
        assert_eq!(table.flip_partner(5), 0);
        assert_eq!(table.flip_partner(1), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let dup = config_with(&DEFAULT_COUNTS, "[]", None).replace(r#""id":2,"#, r#""id":1,"#);
        assert!(load_category_table(&dup).unwrap_err().to_string().contains("duplicate id"));

        let cross = config_with(&DEFAULT_COUNTS, "[[24,25]]", None);
        let err = load_category_table(&cross).unwrap_err().to_string();
        assert!(err.contains("flip_pairs[0]"), "{err}");

        let triple = config_with(&DEFAULT_COUNTS, "[[1,2,3]]", None);
        assert!(load_category_table(&triple).unwrap_err().to_string().contains("flip_pairs[0]"));

        let reused = config_with(&DEFAULT_COUNTS, "[[1,2],[2,3]]", None);
        let err = load_category_table(&reused).unwrap_err().to_string();
        assert!(err.contains("flip_pairs[1]") && err.contains("already"), "{err}");

        let mut sig = vec!["0.05".to_string(); 294];
        sig[7] = "0".into();
        let bad_sigma = config_with(&DEFAULT_COUNTS, "[]", Some(format!("[{}]", sig.join(","))));
        let err = load_category_table(&bad_sigma).unwrap_err().to_string();
        assert!(err.contains("sigmas[7]"), "{err}");

        let twelve = config_with(&DEFAULT_COUNTS[..12], "[]", None);
        assert!(load_category_table(&twelve).is_err());
    }

    #[test]
    fn global_index_lookup() {
        let table = CategoryTable::default();
        assert_eq!(table.global_keypoint_index(1, 0).unwrap(), 0);
        assert_eq!(table.global_keypoint_index(2, 0).unwrap(), 25);
        assert!(table.global_keypoint_index(1, 25).is_err());
        assert!(table.global_keypoint_index(14, 0).is_err());
        assert!(table.global_keypoint_index(0, 0).is_err());
    }

    #[test]
    fn global_index_is_a_bijection_onto_the_keypoint_space() {
        let table = CategoryTable::default();
        let mut hit = vec![false; NUM_KEYPOINTS];
        for spec in table.specs() {
            for l in 0..spec.keypoint_count {
                let g = table.global_keypoint_index(spec.id, l).unwrap();
                assert!(!hit[g]);
                hit[g] = true;
            }
        }
        assert!(hit.iter().all(|&h| h));
    }

    #[test]
    fn serialization_round_trip() {
        let table = CategoryTable::default();
        let reloaded = load_category_table(&table.to_json()).unwrap();
        assert_eq!(table, reloaded);

        let custom = table.clone().with_sigmas((0..294).map(|i| 0.01 + i as f64 * 1e-4).collect()).unwrap();
        assert_eq!(load_category_table(&custom.to_json()).unwrap(), custom);
    }

    #[test]
    fn default_flip_pairs_stay_in_slice() {
        let table = CategoryTable::default();
        for &(a, b) in table.flip_pairs() {
            let sa = table.specs().iter().find(|s| s.slice().contains(&a)).unwrap();
            assert!(sa.slice().contains(&b));
        }
    }
}
