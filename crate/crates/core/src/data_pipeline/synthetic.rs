//! Procedural stick-figure scenes with exact keypoint ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotations::{AnnotationSet, ImageRecord, PersonInstance};
use super::skeleton::Skeleton;
use crate::heatmap_codec::{Frame, Joint, JointSet};
use crate::tensor_core::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    pub bone_thickness: f64,
    /// Standard deviation of the joint blobs, pixels.
    pub blob_radius: f64,
    pub bone_intensity: f32,
    pub background: f32,
    /// Uniform noise amplitude added to the background.
    pub noise: f32,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            bone_thickness: 2.0,
            blob_radius: 1.5,
            bone_intensity: 0.45,
            background: 0.1,
            noise: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub width: usize,
    pub height: usize,
    pub num_images: usize,
    /// Inclusive range of persons per image.
    pub persons: (usize, usize),
    /// Inclusive range of person heights, pixels.
    pub person_height: (f64, f64),
    pub style: RenderStyle,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            width: 80,
            height: 80,
            num_images: 16,
            persons: (1, 2),
            person_height: (40.0, 56.0),
            style: RenderStyle::default(),
            seed: 0,
        }
    }
}

/// RGB colour of each toy joint; left/right partners share a colour and are
/// told apart by side (a figure's left limbs appear on the image right).
pub fn joint_colors() -> [[f32; 3]; 8] {
    [
        [1.0, 0.2, 0.2],
        [1.0, 1.0, 0.2],
        [0.2, 1.0, 0.2],
        [0.2, 1.0, 0.2],
        [0.2, 0.4, 1.0],
        [0.2, 0.4, 1.0],
        [1.0, 0.3, 1.0],
        [1.0, 0.3, 1.0],
    ]
}

/// Joint coordinates of one figure of height `h` centred at `(cx, cy)`.
fn pose<R: Rng>(rng: &mut R, cx: f64, cy: f64, h: f64) -> Vec<(f64, f64)> {
    let neck = (cx + rng.gen_range(-0.03..0.03) * h, cy - 0.22 * h);
    let head = (neck.0 + rng.gen_range(-0.05..0.05) * h, neck.1 - 0.2 * h);
    let hip = (cx + rng.gen_range(-0.03..0.03) * h, cy + 0.08 * h);
    let limb = |from: (f64, f64), len: f64, angle_deg: f64| {
        let a = angle_deg.to_radians();
        (from.0 + len * a.sin(), from.1 + len * a.cos())
    };
    // angles measured from straight down; positive swings towards image right
    let l_hand = limb(neck, 0.38 * h, rng.gen_range(35.0..150.0));
    let r_hand = limb(neck, 0.38 * h, -rng.gen_range(35.0..150.0));
    let l_knee = limb(hip, 0.2 * h, rng.gen_range(5.0..35.0));
    let r_knee = limb(hip, 0.2 * h, -rng.gen_range(5.0..35.0));
    let l_foot = limb(l_knee, 0.2 * h, rng.gen_range(-10.0..25.0));
    let r_foot = limb(r_knee, 0.2 * h, -rng.gen_range(-10.0..25.0));
    vec![head, neck, l_hand, r_hand, l_knee, r_knee, l_foot, r_foot]
}

fn draw_bone(img: &mut [f32], w: usize, h: usize, a: (f64, f64), b: (f64, f64), style: &RenderStyle) {
    let half = style.bone_thickness / 2.0;
    let x0 = (a.0.min(b.0) - half).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + half).ceil().max(0.0) as usize).min(w - 1);
    let y0 = (a.1.min(b.1) - half).floor().max(0.0) as usize;
    let y1 = ((a.1.max(b.1) + half).ceil().max(0.0) as usize).min(h - 1);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = (dx * dx + dy * dy).max(1e-12);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let t = (((x as f64 - a.0) * dx + (y as f64 - a.1) * dy) / len2).clamp(0.0, 1.0);
            let (px, py) = (a.0 + t * dx, a.1 + t * dy);
            if (x as f64 - px).hypot(y as f64 - py) <= half {
                for c in 0..3 {
                    let v = &mut img[c * w * h + y * w + x];
                    *v = v.max(style.bone_intensity);
                }
            }
        }
    }
}

fn draw_blob(img: &mut [f32], w: usize, h: usize, at: (f64, f64), color: [f32; 3], style: &RenderStyle) {
    let r = (3.0 * style.blob_radius).ceil() as i64;
    let (cx, cy) = (at.0.round() as i64, at.1.round() as i64);
    for y in (cy - r).max(0)..=(cy + r).min(h as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(w as i64 - 1) {
            let d2 = (x as f64 - at.0).powi(2) + (y as f64 - at.1).powi(2);
            let g = (-d2 / (2.0 * style.blob_radius * style.blob_radius)).exp() as f32;
            for c in 0..3 {
                let v = &mut img[c * w * h + y as usize * w + x as usize];
                *v = v.max(color[c] * g);
            }
        }
    }
}

/// Renders one image and its persons' joints (original frame).
pub fn render_scene<R: Rng>(spec: &SyntheticSceneSpec, rng: &mut R) -> (Tensor<f32>, Vec<JointSet>) {
    let (w, h) = (spec.width, spec.height);
    let style = &spec.style;
    let mut img: Vec<f32> = (0..3 * w * h)
        .map(|_| style.background + style.noise * rng.gen::<f32>())
        .collect();
    let count = rng.gen_range(spec.persons.0..=spec.persons.1.max(spec.persons.0));
    let skeleton = Skeleton::toy();
    let colors = joint_colors();
    let mut people = Vec::with_capacity(count);
    for _ in 0..count {
        let ph = rng.gen_range(spec.person_height.0..=spec.person_height.1);
        let margin_x = 0.4 * ph;
        let cx = rng.gen_range(margin_x.min(w as f64 / 2.0)..=(w as f64 - margin_x).max(w as f64 / 2.0));
        let cy = rng.gen_range((0.45 * ph).min(h as f64 / 2.0)..=(h as f64 - 0.5 * ph).max(h as f64 / 2.0));
        let pts = pose(rng, cx, cy, ph);
        let hip = ((pts[4].0 + pts[5].0) / 2.0, pts[1].1 + 0.3 * ph);
        for &(a, b) in &skeleton.bones {
            // legs hang from the hip rather than the neck
            let from = if b == 4 || b == 5 { hip } else { pts[a] };
            draw_bone(&mut img, w, h, from, pts[b], style);
        }
        draw_bone(&mut img, w, h, pts[1], hip, style);
        people.push(pts);
    }
    for pts in &people {
        for (k, p) in pts.iter().enumerate() {
            draw_blob(&mut img, w, h, *p, colors[k], style);
        }
    }
    let joints = people
        .into_iter()
        .map(|pts| {
            let joints = pts
                .into_iter()
                .map(|(x, y)| {
                    let inside = x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64;
                    if inside {
                        Joint::visible(x, y)
                    } else {
                        Joint::unlabeled()
                    }
                })
                .collect();
            JointSet::new(joints, Frame::Original)
        })
        .collect();
    (
        Tensor::from_vec(Shape::new(1, 3, h, w), img).expect("sized above"),
        joints,
    )
}

/// Deterministic scenes with exact annotations; image `i` draws from its own
/// RNG stream so images do not depend on each other.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> (Vec<Tensor<f32>>, AnnotationSet) {
    let mut images = Vec::with_capacity(spec.num_images);
    let mut records = Vec::with_capacity(spec.num_images);
    let mut instances = Vec::new();
    for i in 0..spec.num_images {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let (img, people) = render_scene(spec, &mut rng);
        let image_id = i as u64 + 1;
        records.push(ImageRecord {
            id: image_id,
            width: spec.width,
            height: spec.height,
            file_name: format!("{image_id:06}.ppm"),
        });
        for joints in people {
            let pad = spec.style.blob_radius * 2.0;
            let Some((x0, y0, x1, y1)) = joints.labeled_bounds() else {
                continue;
            };
            let (x0, y0) = ((x0 - pad).max(0.0), (y0 - pad).max(0.0));
            let (x1, y1) = ((x1 + pad).min((spec.width - 1) as f64), (y1 + pad).min((spec.height - 1) as f64));
            let bbox = [x0, y0, x1 - x0, y1 - y0];
            instances.push(PersonInstance {
                id: instances.len() as u64 + 1,
                image_id,
                bbox,
                area: bbox[2] * bbox[3],
                keypoints: joints,
                score: None,
            });
        }
        images.push(img);
    }
    (
        images,
        AnnotationSet {
            images: records,
            instances,
            skeleton: Skeleton::toy(),
        },
    )
}
