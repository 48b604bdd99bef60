use serde::{Deserialize, Serialize};

/// Annotation state of one joint (COCO flags 0, 1, 2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Visibility {
    Unlabeled,
    LabeledInvisible,
    LabeledVisible,
}

impl Visibility {
    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(Visibility::Unlabeled),
            1 => Some(Visibility::LabeledInvisible),
            2 => Some(Visibility::LabeledVisible),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            Visibility::Unlabeled => 0,
            Visibility::LabeledInvisible => 1,
            Visibility::LabeledVisible => 2,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Visibility::Unlabeled
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub visibility: Visibility,
}

impl Joint {
    pub fn new(x: f64, y: f64, visibility: Visibility) -> Self {
        Self { x, y, visibility }
    }

    pub fn visible(x: f64, y: f64) -> Self {
        Self::new(x, y, Visibility::LabeledVisible)
    }

    pub fn unlabeled() -> Self {
        Self::new(0.0, 0.0, Visibility::Unlabeled)
    }

    pub fn is_labeled(&self) -> bool {
        self.visibility.is_labeled()
    }
}

/// Coordinate frame a [`JointSet`] is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Original,
    Crop,
    Heatmap { stride: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSet {
    pub joints: Vec<Joint>,
    pub frame: Frame,
}

impl JointSet {
    pub fn new(joints: Vec<Joint>, frame: Frame) -> Self {
        Self { joints, frame }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_labeled()).count()
    }

    /// Tight box `(x0, y0, x1, y1)` around labeled joints.
    pub fn labeled_bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let mut it = self.joints.iter().filter(|j| j.is_labeled());
        let first = it.next()?;
        Some(it.fold((first.x, first.y, first.x, first.y), |(a, b, c, d), j| {
            (a.min(j.x), b.min(j.y), c.max(j.x), d.max(j.y))
        }))
    }

    /// Swaps left/right joint ids for every pair.
    pub fn swap_pairs(&mut self, pairs: &[(usize, usize)]) {
        for &(a, b) in pairs {
            self.joints.swap(a, b);
        }
    }
}
