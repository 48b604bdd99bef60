use serde::{Deserialize, Serialize};

/// Joint names, bones (for rendering) and left/right pairs (for flipping).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    pub bones: Vec<(usize, usize)>,
    pub pairs: Vec<(usize, usize)>,
}

impl Skeleton {
    pub fn num_joints(&self) -> usize {
        self.names.len()
    }

    /// Eight-joint stick figure: head, neck, hands, knees, feet.
    pub fn toy() -> Self {
        let names = ["head", "neck", "l_hand", "r_hand", "l_knee", "r_knee", "l_foot", "r_foot"];
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            bones: vec![(0, 1), (1, 2), (1, 3), (1, 4), (1, 5), (4, 6), (5, 7)],
            pairs: vec![(2, 3), (4, 5), (6, 7)],
        }
    }

    /// The 17 COCO person keypoints.
    pub fn coco() -> Self {
        let names = [
            "nose",
            "left_eye",
            "right_eye",
            "left_ear",
            "right_ear",
            "left_shoulder",
            "right_shoulder",
            "left_elbow",
            "right_elbow",
            "left_wrist",
            "right_wrist",
            "left_hip",
            "right_hip",
            "left_knee",
            "right_knee",
            "left_ankle",
            "right_ankle",
        ];
        let bones = vec![
            (15, 13),
            (13, 11),
            (16, 14),
            (14, 12),
            (11, 12),
            (5, 11),
            (6, 12),
            (5, 6),
            (5, 7),
            (6, 8),
            (7, 9),
            (8, 10),
            (1, 2),
            (0, 1),
            (0, 2),
            (1, 3),
            (2, 4),
            (3, 5),
            (4, 6),
        ];
        Self::from_names(names.iter().map(|s| s.to_string()).collect(), bones)
    }

    /// Pairs joints whose names differ only in a `left`/`right` (or `l_`/`r_`)
    /// prefix.
    pub fn from_names(names: Vec<String>, bones: Vec<(usize, usize)>) -> Self {
        let mut pairs = Vec::new();
        for (i, n) in names.iter().enumerate() {
            let partner = if let Some(rest) = n.strip_prefix("left") {
                format!("right{rest}")
            } else if let Some(rest) = n.strip_prefix("l_") {
                format!("r_{rest}")
            } else {
                continue;
            };
            if let Some(j) = names.iter().position(|m| *m == partner) {
                pairs.push((i, j));
            }
        }
        Self { names, bones, pairs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_from_names() {
        assert_eq!(Skeleton::coco().pairs.len(), 8);
        let toy = Skeleton::toy();
        assert_eq!(Skeleton::from_names(toy.names.clone(), toy.bones.clone()), toy);
    }
}
