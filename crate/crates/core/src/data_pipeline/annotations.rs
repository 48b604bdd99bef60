//! In-memory annotation set and the COCO keypoint JSON subset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::skeleton::Skeleton;
use crate::error::{Error, Result};
use crate::heatmap_codec::{Frame, Joint, JointSet, Visibility};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    pub file_name: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersonInstance {
    pub id: u64,
    pub image_id: u64,
    /// `[x, y, width, height]` in original-image pixels.
    pub bbox: [f64; 4],
    pub keypoints: JointSet,
    pub area: f64,
    /// Detection confidence when the set holds detections rather than truth.
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet {
    pub images: Vec<ImageRecord>,
    pub instances: Vec<PersonInstance>,
    pub skeleton: Skeleton,
}

impl AnnotationSet {
    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.skeleton.num_joints();
        for inst in &self.instances {
            let err = |reason: String| Error::Annotation {
                id: inst.id.to_string(),
                reason,
            };
            if self.image(inst.image_id).is_none() {
                return Err(err(format!("references missing image {}", inst.image_id)));
            }
            if inst.keypoints.len() != k {
                return Err(err(format!("{} keypoints for a {k}-joint skeleton", inst.keypoints.len())));
            }
        }
        Ok(())
    }
}

// ---- COCO JSON ------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CocoDoc {
    images: Option<Vec<CocoImage>>,
    annotations: Option<Vec<CocoAnnotation>>,
    categories: Option<Vec<CocoCategory>>,
}

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: Option<u64>,
    width: Option<usize>,
    height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file_name: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    id: Option<u64>,
    image_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category_id: Option<u64>,
    bbox: Option<Vec<f64>>,
    keypoints: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_keypoints: Option<usize>,
    area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    keypoints: Option<Vec<String>>,
    #[serde(default)]
    skeleton: Vec<[usize; 2]>,
}

fn missing(kind: &str, id: Option<u64>, index: usize, field: &str) -> Error {
    Error::Annotation {
        id: id.map_or_else(|| format!("{kind}#{index}"), |i| format!("{kind} {i}")),
        reason: format!("missing required field `{field}`"),
    }
}

/// Parses a COCO keypoint document (one person category). Unknown fields are
/// ignored.
pub fn parse_annotations(text: &str) -> Result<AnnotationSet> {
    let doc: CocoDoc = serde_json::from_str(text)?;
    let cats = doc.categories.unwrap_or_default();
    let skeleton = match cats.first() {
        Some(c) => {
            let names = c.keypoints.clone().ok_or_else(|| missing("category", c.id, 0, "keypoints"))?;
            let bones = c
                .skeleton
                .iter()
                .map(|[a, b]| (a.saturating_sub(1), b.saturating_sub(1)))
                .collect();
            Skeleton::from_names(names, bones)
        }
        None => Skeleton::coco(),
    };
    let k = skeleton.num_joints();
    let mut images = Vec::new();
    for (i, im) in doc.images.ok_or_else(|| missing("document", None, 0, "images"))?.into_iter().enumerate() {
        let id = im.id.ok_or_else(|| missing("image", None, i, "id"))?;
        images.push(ImageRecord {
            id,
            width: im.width.ok_or_else(|| missing("image", Some(id), i, "width"))?,
            height: im.height.ok_or_else(|| missing("image", Some(id), i, "height"))?,
            file_name: im.file_name.unwrap_or_default(),
        });
    }
    let mut instances = Vec::new();
    for (i, a) in doc
        .annotations
        .ok_or_else(|| missing("document", None, 0, "annotations"))?
        .into_iter()
        .enumerate()
    {
        let id = a.id.ok_or_else(|| missing("annotation", None, i, "id"))?;
        let image_id = a.image_id.ok_or_else(|| missing("annotation", Some(id), i, "image_id"))?;
        let kp = a.keypoints.ok_or_else(|| missing("annotation", Some(id), i, "keypoints"))?;
        let bbox = a.bbox.ok_or_else(|| missing("annotation", Some(id), i, "bbox"))?;
        let area = a.area.ok_or_else(|| missing("annotation", Some(id), i, "area"))?;
        let bad = |reason: String| Error::Annotation {
            id: id.to_string(),
            reason,
        };
        if bbox.len() != 4 {
            return Err(bad(format!("bbox has {} values", bbox.len())));
        }
        if kp.len() != 3 * k {
            return Err(bad(format!("{} keypoint values for {k} joints", kp.len())));
        }
        let mut joints = Vec::with_capacity(k);
        for t in kp.chunks(3) {
            let flag = t[2];
            let vis = (flag.fract() == 0.0 && (0.0..=2.0).contains(&flag))
                .then(|| Visibility::from_flag(flag as u8))
                .flatten()
                .ok_or_else(|| bad(format!("visibility flag {flag} not in {{0,1,2}}")))?;
            joints.push(Joint::new(t[0], t[1], vis));
        }
        instances.push(PersonInstance {
            id,
            image_id,
            bbox: [bbox[0], bbox[1], bbox[2], bbox[3]],
            keypoints: JointSet::new(joints, Frame::Original),
            area,
            score: a.score,
        });
    }
    let set = AnnotationSet {
        images,
        instances,
        skeleton,
    };
    set.validate()?;
    Ok(set)
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    parse_annotations(&fs::read_to_string(path)?)
}

pub fn annotations_to_json(set: &AnnotationSet) -> Result<String> {
    let doc = CocoDoc {
        images: Some(
            set.images
                .iter()
                .map(|i| CocoImage {
                    id: Some(i.id),
                    width: Some(i.width),
                    height: Some(i.height),
                    file_name: Some(i.file_name.clone()),
                })
                .collect(),
        ),
        annotations: Some(
            set.instances
                .iter()
                .map(|a| CocoAnnotation {
                    id: Some(a.id),
                    image_id: Some(a.image_id),
                    category_id: Some(1),
                    bbox: Some(a.bbox.to_vec()),
                    keypoints: Some(
                        a.keypoints
                            .joints
                            .iter()
                            .flat_map(|j| [j.x, j.y, j.visibility.flag() as f64])
                            .collect(),
                    ),
                    num_keypoints: Some(a.keypoints.labeled_count()),
                    area: Some(a.area),
                    score: a.score,
                })
                .collect(),
        ),
        categories: Some(vec![CocoCategory {
            id: Some(1),
            name: Some("person".into()),
            keypoints: Some(set.skeleton.names.clone()),
            skeleton: set.skeleton.bones.iter().map(|(a, b)| [a + 1, b + 1]).collect(),
        }]),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn write_annotations(path: &Path, set: &AnnotationSet) -> Result<()> {
    fs::write(path, annotations_to_json(set)?)?;
    Ok(())
}
