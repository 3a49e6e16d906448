//! Instance masks, run-length encoding and COCO detection files.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("annotation {annotation} references missing {kind} {id}")]
    DanglingReference { annotation: u64, kind: &'static str, id: u64 },
    #[error("RLE does not match a {width}x{height} mask")]
    BadRle { width: usize, height: usize },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight `(x, y, w, h)` bounds, `None` for an empty mask.
    pub fn bbox(&self) -> Option<[usize; 4]> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&b| b) else {
                continue;
            };
            let last = row.iter().rposition(|&b| b).unwrap_or(first);
            x0 = x0.min(first);
            x1 = x1.max(last);
            y0 = y0.min(y);
            y1 = y;
        }
        (x0 != usize::MAX).then(|| [x0, y0, x1 - x0 + 1, y1 - y0 + 1])
    }
}

/// Uncompressed COCO run-length encoding. Runs alternate 0/1 starting with
/// zeros, scanning columns top to bottom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub counts: Vec<u32>,
    /// `[height, width]`.
    pub size: [usize; 2],
}

pub fn encode_rle(mask: &BinaryMask) -> Rle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..mask.width {
        for y in 0..mask.height {
            let v = mask.get(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    Rle {
        counts,
        size: [mask.height, mask.width],
    }
}

pub fn decode_rle(rle: &Rle) -> Result<BinaryMask, AnnotationError> {
    let [height, width] = rle.size;
    let bad = || AnnotationError::BadRle { width, height };
    let total: u64 = rle.counts.iter().map(|&c| u64::from(c)).sum();
    if total != (width * height) as u64 {
        return Err(bad());
    }
    let mut mask = BinaryMask::new(width, height);
    let mut pos = 0usize;
    for (i, &c) in rle.counts.iter().enumerate() {
        let on = i % 2 == 1;
        for k in pos..pos + c as usize {
            if on {
                let (x, y) = (k / height, k % height);
                mask.set(x, y, true);
            }
        }
        pos += c as usize;
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

/// One instance: tight `xywh` box, RLE segmentation, pixel area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub segmentation: Rle,
    pub area: f64,
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    pub supercategory: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<AnnotationRecord>,
    pub categories: Vec<CocoCategory>,
}

/// Annotation for a non-empty mask. The id is left at 0 for the caller to assign.
pub fn mask_to_annotation(mask: &BinaryMask, category_id: u64, image_id: u64) -> Result<AnnotationRecord, AnnotationError> {
    let [x, y, w, h] = mask.bbox().ok_or(AnnotationError::EmptyMask)?;
    Ok(AnnotationRecord {
        id: 0,
        image_id,
        category_id,
        bbox: [x as f64, y as f64, w as f64, h as f64],
        segmentation: encode_rle(mask),
        area: mask.count() as f64,
        iscrowd: 0,
    })
}

fn unique_ids(kind: &'static str, ids: impl Iterator<Item = u64>) -> Result<HashSet<u64>, AnnotationError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(AnnotationError::DuplicateId { kind, id });
        }
    }
    Ok(seen)
}

/// Checks id uniqueness and references, and returns a copy sorted by id.
pub fn validate_dataset(
    images: &[CocoImage],
    annotations: &[AnnotationRecord],
    categories: &[CocoCategory],
) -> Result<CocoDataset, AnnotationError> {
    let image_ids = unique_ids("image", images.iter().map(|i| i.id))?;
    let category_ids = unique_ids("category", categories.iter().map(|c| c.id))?;
    unique_ids("annotation", annotations.iter().map(|a| a.id))?;
    for a in annotations {
        if !image_ids.contains(&a.image_id) {
            return Err(AnnotationError::DanglingReference {
                annotation: a.id,
                kind: "image",
                id: a.image_id,
            });
        }
        if !category_ids.contains(&a.category_id) {
            return Err(AnnotationError::DanglingReference {
                annotation: a.id,
                kind: "category",
                id: a.category_id,
            });
        }
    }
    let mut ds = CocoDataset {
        images: images.to_vec(),
        annotations: annotations.to_vec(),
        categories: categories.to_vec(),
    };
    ds.images.sort_by_key(|i| i.id);
    ds.annotations.sort_by_key(|a| a.id);
    ds.categories.sort_by_key(|c| c.id);
    Ok(ds)
}

pub fn write_coco(
    images: &[CocoImage],
    annotations: &[AnnotationRecord],
    categories: &[CocoCategory],
    path: impl AsRef<Path>,
) -> Result<(), AnnotationError> {
    let ds = validate_dataset(images, annotations, categories)?;
    let text = serde_json::to_string(&ds)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_coco(path: impl AsRef<Path>) -> Result<CocoDataset, AnnotationError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
