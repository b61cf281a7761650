//! 25-joint pose annotations and the flat conditioning vector built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 25;
pub const POSE_VECTOR_LEN: usize = NUM_JOINTS * 3;

/// Joint order of the BODY-25 skeleton.
pub const BODY25_NAMES: [&str; NUM_JOINTS] = [
    "Nose",
    "Neck",
    "RShoulder",
    "RElbow",
    "RWrist",
    "LShoulder",
    "LElbow",
    "LWrist",
    "MidHip",
    "RHip",
    "RKnee",
    "RAnkle",
    "LHip",
    "LKnee",
    "LAnkle",
    "REye",
    "LEye",
    "REar",
    "LEar",
    "LBigToe",
    "LSmallToe",
    "LHeel",
    "RBigToe",
    "RSmallToe",
    "RHeel",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum Joint {
    Nose = 0,
    Neck,
    RShoulder,
    RElbow,
    RWrist,
    LShoulder,
    LElbow,
    LWrist,
    MidHip,
    RHip,
    RKnee,
    RAnkle,
    LHip,
    LKnee,
    LAnkle,
    REye,
    LEye,
    REar,
    LEar,
    LBigToe,
    LSmallToe,
    LHeel,
    RBigToe,
    RSmallToe,
    RHeel,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub confidence: f32,
}

impl Keypoint {
    pub fn new(x: f32, y: f32, confidence: f32) -> Self {
        Self { x, y, confidence }
    }

    /// A confidence of exactly zero marks an undetected joint.
    pub fn is_visible(&self) -> bool {
        self.confidence > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseKeypoints {
    joints: [Keypoint; NUM_JOINTS],
    /// `(height, width)` of the image the coordinates refer to.
    source_dims: (usize, usize),
}

#[derive(Serialize, Deserialize)]
struct KeypointDocument {
    pose_keypoints_2d: Vec<f32>,
    image_height: usize,
    image_width: usize,
}

impl PoseKeypoints {
    pub fn new(joints: [Keypoint; NUM_JOINTS], source_dims: (usize, usize)) -> Result<Self> {
        let pose = Self {
            joints,
            source_dims,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn joints(&self) -> &[Keypoint; NUM_JOINTS] {
        &self.joints
    }

    pub fn joint(&self, j: Joint) -> &Keypoint {
        &self.joints[j as usize]
    }

    pub fn source_dims(&self) -> (usize, usize) {
        self.source_dims
    }

    fn validate(&self) -> Result<()> {
        let (h, w) = self.source_dims;
        for (i, kp) in self.joints.iter().enumerate() {
            if !(kp.x.is_finite() && kp.y.is_finite() && kp.confidence.is_finite()) {
                return Err(Error::MalformedDocument(format!("joint {i} has a non-finite value")));
            }
            if kp.confidence < 0.0 {
                return Err(Error::NegativeConfidence {
                    joint: i,
                    confidence: kp.confidence,
                });
            }
            if kp.confidence > 1.0 {
                return Err(Error::MalformedDocument(format!(
                    "joint {i} confidence {} exceeds 1",
                    kp.confidence
                )));
            }
            let inside = (0.0..=w as f32).contains(&kp.x) && (0.0..=h as f32).contains(&kp.y);
            if kp.is_visible() && !inside {
                return Err(Error::MalformedDocument(format!(
                    "visible joint {i} at ({}, {}) lies outside the {h}x{w} image",
                    kp.x, kp.y
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = KeypointDocument {
            pose_keypoints_2d: self
                .joints
                .iter()
                .flat_map(|k| [k.x, k.y, k.confidence])
                .collect(),
            image_height: self.source_dims.0,
            image_width: self.source_dims.1,
        };
        serde_json::to_string(&doc).expect("keypoint document serializes")
    }
}

pub fn parse_keypoints(document: &str) -> Result<PoseKeypoints> {
    let doc: KeypointDocument =
        serde_json::from_str(document).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    let values = doc.pose_keypoints_2d;
    if values.len() != POSE_VECTOR_LEN {
        return Err(Error::WrongJointCount {
            found: values.len(),
        });
    }
    let mut joints = [Keypoint::default(); NUM_JOINTS];
    for (kp, triple) in joints.iter_mut().zip(values.chunks_exact(3)) {
        *kp = Keypoint::new(triple[0], triple[1], triple[2]);
    }
    PoseKeypoints::new(joints, (doc.image_height, doc.image_width))
}

pub fn load_keypoints(path: &std::path::Path) -> Result<PoseKeypoints> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_keypoints(&std::fs::read_to_string(path)?)
}

/// Flat `(x_norm, y_norm, confidence)` encoding of 25 joints.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseVector {
    values: Vec<f32>,
}

impl PoseVector {
    pub fn from_values(values: Vec<f32>) -> Result<Self> {
        if values.len() != POSE_VECTOR_LEN {
            return Err(Error::WrongJointCount {
                found: values.len(),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn triple(&self, joint: usize) -> [f32; 3] {
        let i = joint * 3;
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }

    /// Generator input: all 75 values, or only the 50 coordinates when
    /// confidences are excluded.
    pub fn conditioning(&self, include_confidence: bool) -> Vec<f32> {
        if include_confidence {
            self.values.clone()
        } else {
            self.values
                .chunks_exact(3)
                .flat_map(|t| [t[0], t[1]])
                .collect()
        }
    }
}

pub fn normalize_pose(kp: &PoseKeypoints) -> Result<PoseVector> {
    let (h, w) = kp.source_dims;
    if h == 0 || w == 0 {
        return Err(Error::ZeroDims {
            height: h,
            width: w,
        });
    }
    let mut values = Vec::with_capacity(POSE_VECTOR_LEN);
    for j in kp.joints.iter() {
        if j.is_visible() {
            values.push((j.x / w as f32).clamp(0.0, 1.0));
            values.push((j.y / h as f32).clamp(0.0, 1.0));
            values.push(j.confidence);
        } else {
            values.extend_from_slice(&[0.0, 0.0, 0.0]);
        }
    }
    Ok(PoseVector { values })
}

/// Mean Euclidean distance over the joints visible in both poses.
pub fn pose_distance(a: &PoseVector, b: &PoseVector) -> Result<f32> {
    let mut total = 0.0f64;
    let mut shared = 0usize;
    for j in 0..NUM_JOINTS {
        let [ax, ay, ac] = a.triple(j);
        let [bx, by, bc] = b.triple(j);
        if ac > 0.0 && bc > 0.0 {
            let dx = (ax - bx) as f64;
            let dy = (ay - by) as f64;
            total += (dx * dx + dy * dy).sqrt();
            shared += 1;
        }
    }
    if shared == 0 {
        return Err(Error::NoSharedVisibleJoints);
    }
    Ok((total / shared as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc_with(triples: &[[f32; 3]], h: usize, w: usize) -> String {
        let flat: Vec<f32> = triples.iter().flatten().copied().collect();
        serde_json::json!({
            "pose_keypoints_2d": flat,
            "image_height": h,
            "image_width": w,
        })
        .to_string()
    }

    fn uniform_pose(t: [f32; 3]) -> PoseVector {
        PoseVector::from_values(t.repeat(NUM_JOINTS)).unwrap()
    }

    #[test]
    fn parses_direct_fields() {
        let mut triples = vec![[10.0, 10.0, 0.5]; NUM_JOINTS];
        triples[0] = [64.0, 20.0, 0.95];
        let kp = parse_keypoints(&doc_with(&triples, 256, 128)).unwrap();
        assert_eq!(kp.joints()[0], Keypoint::new(64.0, 20.0, 0.95));
        assert_eq!(kp.source_dims(), (256, 128));
    }

    #[test]
    fn zero_triple_is_undetected() {
        let mut triples = vec![[10.0, 10.0, 0.5]; NUM_JOINTS];
        triples[7] = [0.0, 0.0, 0.0];
        let kp = parse_keypoints(&doc_with(&triples, 256, 128)).unwrap();
        assert_eq!(kp.joints()[7].confidence, 0.0);
        assert!(!kp.joint(Joint::LWrist).is_visible());
    }

    #[test]
    fn rejects_wrong_joint_count() {
        let triples = vec![[10.0, 10.0, 0.5]; 18];
        let err = parse_keypoints(&doc_with(&triples, 256, 128)).unwrap_err();
        assert!(matches!(err, Error::WrongJointCount { found: 54 }));
    }

    #[test]
    fn rejects_negative_confidence() {
        let mut triples = vec![[10.0, 10.0, 0.5]; NUM_JOINTS];
        triples[3][2] = -0.1;
        let err = parse_keypoints(&doc_with(&triples, 256, 128)).unwrap_err();
        assert!(matches!(err, Error::NegativeConfidence { joint: 3, .. }));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            parse_keypoints("{not json"),
            Err(Error::MalformedDocument(_))
        ));
        assert!(matches!(
            parse_keypoints(r#"{"pose_keypoints_2d": [1, 2]}"#),
            Err(Error::MalformedDocument(_))
        ));
    }

    #[test]
    fn normalizes_by_width_and_height() {
        let mut joints = [Keypoint::new(1.0, 1.0, 1.0); NUM_JOINTS];
        joints[0] = Keypoint::new(64.0, 20.0, 0.95);
        joints[1] = Keypoint::new(99.0, 7.0, 0.0);
        let kp = PoseKeypoints::new(joints, (256, 128)).unwrap();
        let v = normalize_pose(&kp).unwrap();
        assert_eq!(v.triple(0), [0.5, 0.078125, 0.95]);
        assert_eq!(v.triple(1), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn centered_joints_normalize_to_half() {
        let joints = [Keypoint::new(128.0, 128.0, 0.8); NUM_JOINTS];
        let v = normalize_pose(&PoseKeypoints::new(joints, (256, 256)).unwrap()).unwrap();
        for j in 0..NUM_JOINTS {
            assert_eq!(v.triple(j), [0.5, 0.5, 0.8]);
        }
    }

    #[test]
    fn zero_dims_rejected() {
        let joints = [Keypoint::new(0.0, 0.0, 0.0); NUM_JOINTS];
        let kp = PoseKeypoints {
            joints,
            source_dims: (0, 64),
        };
        assert!(matches!(normalize_pose(&kp), Err(Error::ZeroDims { .. })));
    }

    #[test]
    fn distance_examples() {
        let p = uniform_pose([0.2, 0.7, 1.0]);
        assert_eq!(pose_distance(&p, &p).unwrap(), 0.0);
        let a = uniform_pose([0.0, 0.0, 1.0]);
        let b = uniform_pose([0.3, 0.4, 1.0]);
        assert!((pose_distance(&a, &b).unwrap() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn disjoint_visibility_has_no_distance() {
        let mut a = vec![0.0; POSE_VECTOR_LEN];
        let mut b = vec![0.0; POSE_VECTOR_LEN];
        for j in 0..5 {
            a[j * 3..j * 3 + 3].copy_from_slice(&[0.1, 0.1, 1.0]);
        }
        for j in 20..25 {
            b[j * 3..j * 3 + 3].copy_from_slice(&[0.1, 0.1, 1.0]);
        }
        let a = PoseVector::from_values(a).unwrap();
        let b = PoseVector::from_values(b).unwrap();
        assert!(matches!(pose_distance(&a, &b), Err(Error::NoSharedVisibleJoints)));
    }

    #[test]
    fn conditioning_drops_confidence() {
        let v = uniform_pose([0.1, 0.2, 0.9]);
        assert_eq!(v.conditioning(true).len(), 75);
        let c = v.conditioning(false);
        assert_eq!(c.len(), 50);
        assert_eq!(&c[..2], &[0.1, 0.2]);
    }

    fn arb_pose() -> impl Strategy<Value = PoseKeypoints> {
        (1usize..400, 1usize..400).prop_flat_map(|(h, w)| {
            proptest::collection::vec(
                (0.0f32..=1.0, 0.0f32..=1.0, prop_oneof![Just(0.0f32), 0.0f32..=1.0]),
                NUM_JOINTS,
            )
            .prop_map(move |js| {
                let mut joints = [Keypoint::default(); NUM_JOINTS];
                for (k, (fx, fy, c)) in joints.iter_mut().zip(js) {
                    *k = Keypoint::new(fx * w as f32, fy * h as f32, c);
                }
                PoseKeypoints::new(joints, (h, w)).unwrap()
            })
        })
    }

    fn arb_visible_vector() -> impl Strategy<Value = PoseVector> {
        proptest::collection::vec((0.0f32..=1.0, 0.0f32..=1.0), NUM_JOINTS).prop_map(|js| {
            PoseVector::from_values(js.into_iter().flat_map(|(x, y)| [x, y, 1.0]).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn json_round_trip(kp in arb_pose()) {
            let again = parse_keypoints(&kp.to_json()).unwrap();
            prop_assert_eq!(again, kp);
        }

        #[test]
        fn normalized_values_in_unit_cube(kp in arb_pose()) {
            let v = normalize_pose(&kp).unwrap();
            prop_assert!(v.values().iter().all(|x| (0.0..=1.0).contains(x)));
            for (j, k) in kp.joints().iter().enumerate() {
                if !k.is_visible() {
                    prop_assert_eq!(v.triple(j), [0.0, 0.0, 0.0]);
                }
            }
        }

        #[test]
        fn distance_is_symmetric_metric(
            a in arb_visible_vector(),
            b in arb_visible_vector(),
            c in arb_visible_vector(),
        ) {
            let ab = pose_distance(&a, &b).unwrap();
            let ba = pose_distance(&b, &a).unwrap();
            let bc = pose_distance(&b, &c).unwrap();
            let ac = pose_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-5);
        }
    }
}
