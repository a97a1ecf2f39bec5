//! Skeletal motion: skeletons, quaternions, motion sequences, slerp
//! retiming and the JSON motion file format.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::condition::ConditionTrack;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Tolerance on quaternion norms for a valid sequence.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Rotation quaternion stored as (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, k: f64) -> Quat {
        Quat::new(self.w * k, self.x * k, self.y * k, self.z * k)
    }

    pub fn neg(self) -> Quat {
        self.scale(-1.0)
    }

    pub fn add(self, o: Quat) -> Quat {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }

    /// Unit quaternion in the same direction, or `None` for a zero quaternion.
    pub fn try_normalized(self) -> Option<Quat> {
        let n = self.norm();
        (n > 1e-12 && n.is_finite()).then(|| self.scale(1.0 / n))
    }

    pub fn normalized(self) -> Quat {
        self.try_normalized().unwrap_or(Quat::IDENTITY)
    }

    /// Sign chosen so that w ≥ 0.
    pub fn canonical(self) -> Quat {
        if self.w < 0.0 {
            self.neg()
        } else {
            self
        }
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * o`.
    pub fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Rotates `v` by this (unit) quaternion.
    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        let u = [self.x, self.y, self.z];
        let uv = cross(u, v);
        let uuv = cross(u, uv);
        [
            v[0] + 2.0 * (self.w * uv[0] + uuv[0]),
            v[1] + 2.0 * (self.w * uv[1] + uuv[1]),
            v[2] + 2.0 * (self.w * uv[2] + uuv[2]),
        ]
    }

    /// Rotation angle in radians between two unit quaternions, in [0, π].
    pub fn angle_to(self, o: Quat) -> f64 {
        2.0 * self.dot(o).abs().min(1.0).acos()
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Spherical linear interpolation along the shortest arc.
///
/// Opposite-hemisphere inputs (including antipodal pairs) are handled by
/// flipping `q1`; nearly identical inputs fall back to normalized lerp.
pub fn slerp(q0: Quat, q1: Quat, u: f64) -> Quat {
    let mut q1 = q1;
    let mut d = q0.dot(q1);
    if d < 0.0 {
        q1 = q1.neg();
        d = -d;
    }
    if d > 1.0 - 1e-8 {
        return q0.scale(1.0 - u).add(q1.scale(u)).normalized();
    }
    let theta = d.min(1.0).acos();
    let sin_theta = theta.sin();
    let a = ((1.0 - u) * theta).sin() / sin_theta;
    let b = (u * theta).sin() / sin_theta;
    q0.scale(a).add(q1.scale(b)).normalized()
}

/// Speaker/listener style label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RoleLabel {
    Speaker = 0,
    Listener = 1,
}

impl RoleLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> RoleLabel {
        match self {
            RoleLabel::Speaker => RoleLabel::Listener,
            RoleLabel::Listener => RoleLabel::Speaker,
        }
    }
}

impl TryFrom<u8> for RoleLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(RoleLabel::Speaker),
            1 => Ok(RoleLabel::Listener),
            other => Err(format!("role label must be 0 or 1, got {other}")),
        }
    }
}

impl From<RoleLabel> for u8 {
    fn from(r: RoleLabel) -> u8 {
        r as u8
    }
}

impl fmt::Display for RoleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoleLabel::Speaker => f.write_str("speaker"),
            RoleLabel::Listener => f.write_str("listener"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonFields")]
pub struct Skeleton {
    joint_names: Vec<String>,
    parents: Vec<i32>,
    foot_joints: Vec<usize>,
    /// Rest-pose offset of each joint from its parent, in meters.
    offsets: Vec<[f64; 3]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonFields {
    joint_names: Vec<String>,
    parents: Vec<i32>,
    foot_joints: Vec<usize>,
    offsets: Vec<[f64; 3]>,
}

impl TryFrom<SkeletonFields> for Skeleton {
    type Error = Error;

    fn try_from(f: SkeletonFields) -> Result<Self> {
        Skeleton::new(f.joint_names, f.parents, f.foot_joints, f.offsets)
    }
}

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        parents: Vec<i32>,
        foot_joints: Vec<usize>,
        offsets: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::invalid("skeleton needs at least one joint"));
        }
        if joint_names.len() != n || offsets.len() != n {
            return Err(Error::invalid(format!(
                "skeleton has {n} parents, {} names and {} offsets",
                joint_names.len(),
                offsets.len()
            )));
        }
        let roots = parents.iter().filter(|&&p| p == -1).count();
        if roots != 1 {
            return Err(Error::invalid(format!(
                "skeleton must have exactly one root, found {roots}"
            )));
        }
        for (j, &p) in parents.iter().enumerate() {
            if p < -1 || p >= n as i32 || p == j as i32 {
                return Err(Error::invalid(format!("joint {j} has invalid parent {p}")));
            }
        }
        // every joint must reach the root within n hops
        for start in 0..n {
            let mut j = start as i32;
            let mut hops = 0;
            while j != -1 {
                j = parents[j as usize];
                hops += 1;
                if hops > n {
                    return Err(Error::invalid(format!(
                        "parent chain of joint {start} contains a cycle"
                    )));
                }
            }
        }
        if let Some(&f) = foot_joints.iter().find(|&&f| f >= n) {
            return Err(Error::invalid(format!(
                "foot joint {f} out of range for {n} joints"
            )));
        }
        Ok(Self {
            joint_names,
            parents,
            foot_joints,
            offsets,
        })
    }

    /// Five-joint desk skeleton: root, head, two hands and a composite feet
    /// joint, giving a feature dimension of 23.
    pub fn desk() -> Self {
        Self::new(
            ["root", "head", "left_hand", "right_hand", "feet"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            vec![-1, 0, 0, 0, 0],
            vec![4],
            vec![
                [0.0, 0.0, 0.0],
                [0.0, 0.6, 0.0],
                [-0.5, 0.3, 0.0],
                [0.5, 0.3, 0.0],
                [0.0, -0.9, 0.0],
            ],
        )
        .expect("desk skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn feature_dim(&self) -> usize {
        3 + 4 * self.joint_count()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parents(&self) -> &[i32] {
        &self.parents
    }

    pub fn foot_joints(&self) -> &[usize] {
        &self.foot_joints
    }

    pub fn offsets(&self) -> &[[f64; 3]] {
        &self.offsets
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Joint ancestry from the root down to `joint` (inclusive).
    pub fn chain(&self, joint: usize) -> Vec<usize> {
        let mut chain = vec![joint];
        let mut j = self.parents[joint];
        while j != -1 {
            chain.push(j as usize);
            j = self.parents[j as usize];
        }
        chain.reverse();
        chain
    }
}

/// One role's motion: root trajectory plus per-joint local rotations.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    skeleton: Skeleton,
    fps: f64,
    role: RoleLabel,
    root_pos: Vec<[f64; 3]>,
    /// Frame-major, `frame_count * joint_count` entries.
    rotations: Vec<Quat>,
}

impl MotionSequence {
    pub fn new(
        skeleton: Skeleton,
        fps: f64,
        role: RoleLabel,
        root_pos: Vec<[f64; 3]>,
        rotations: Vec<Quat>,
    ) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        let frames = root_pos.len();
        if frames == 0 {
            return Err(Error::invalid("motion needs at least one frame"));
        }
        let j = skeleton.joint_count();
        if rotations.len() != frames * j {
            return Err(Error::invalid(format!(
                "{} rotations for {frames} frames of {j} joints",
                rotations.len()
            )));
        }
        for (i, q) in rotations.iter().enumerate() {
            if (q.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "non-unit quaternion at frame {}, joint {} (norm {})",
                    i / j,
                    i % j,
                    q.norm()
                )));
            }
        }
        if root_pos.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite root position"));
        }
        Ok(Self {
            skeleton,
            fps,
            role,
            root_pos,
            rotations,
        })
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn role(&self) -> RoleLabel {
        self.role
    }

    pub fn with_role(mut self, role: RoleLabel) -> Self {
        self.role = role;
        self
    }

    pub fn frame_count(&self) -> usize {
        self.root_pos.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.skeleton.feature_dim()
    }

    pub fn root_pos(&self) -> &[[f64; 3]] {
        &self.root_pos
    }

    pub fn rotations(&self) -> &[Quat] {
        &self.rotations
    }

    pub fn rotation(&self, frame: usize, joint: usize) -> Quat {
        self.rotations[frame * self.skeleton.joint_count() + joint]
    }

    pub fn frame_rotations(&self, frame: usize) -> &[Quat] {
        let j = self.skeleton.joint_count();
        &self.rotations[frame * j..(frame + 1) * j]
    }

    /// Global joint positions per frame via forward kinematics.
    pub fn joint_positions(&self) -> Vec<Vec<[f64; 3]>> {
        let j = self.skeleton.joint_count();
        let order = topological_order(self.skeleton.parents());
        (0..self.frame_count())
            .map(|f| {
                let local = self.frame_rotations(f);
                let mut global = vec![Quat::IDENTITY; j];
                let mut pos = vec![[0.0; 3]; j];
                for &joint in &order {
                    match self.skeleton.parents[joint] {
                        -1 => {
                            global[joint] = local[joint];
                            pos[joint] = self.root_pos[f];
                        }
                        p => {
                            let p = p as usize;
                            let off = global[p].rotate(self.skeleton.offsets[joint]);
                            pos[joint] = [pos[p][0] + off[0], pos[p][1] + off[1], pos[p][2] + off[2]];
                            global[joint] = global[p].mul(local[joint]);
                        }
                    }
                }
                pos
            })
            .collect()
    }

    /// Per-joint rotation speed in radians/frame using forward differences;
    /// entry `f` is the angle between frames `f` and `f + 1`.
    pub fn joint_angular_speed(&self, joint: usize) -> Vec<f64> {
        (0..self.frame_count().saturating_sub(1))
            .map(|f| self.rotation(f, joint).angle_to(self.rotation(f + 1, joint)))
            .collect()
    }
}

fn topological_order(parents: &[i32]) -> Vec<usize> {
    let n = parents.len();
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    while order.len() < n {
        for j in 0..n {
            if !placed[j] && (parents[j] == -1 || placed[parents[j] as usize]) {
                placed[j] = true;
                order.push(j);
            }
        }
    }
    order
}

/// Feature matrix with one row per frame: root xyz then every joint's
/// quaternion (w, x, y, z) in joint order. Width is `3 + 4 * joints`.
pub fn flatten(m: &MotionSequence) -> Matrix {
    let j = m.skeleton.joint_count();
    Matrix::from_fn(m.frame_count(), m.feature_dim(), |f, c| {
        if c < 3 {
            m.root_pos[f][c]
        } else {
            let k = c - 3;
            m.rotations[f * j + k / 4].to_array()[k % 4]
        }
    })
}

/// Inverse of [`flatten`]. Quaternions are renormalized; a zero quaternion
/// becomes the identity.
pub fn unflatten(
    features: &Matrix,
    skeleton: &Skeleton,
    fps: f64,
    role: RoleLabel,
) -> Result<MotionSequence> {
    if features.cols() != skeleton.feature_dim() {
        return Err(Error::shape(
            "unflatten",
            format!(
                "{} columns for feature dimension {}",
                features.cols(),
                skeleton.feature_dim()
            ),
        ));
    }
    if !features.is_finite() {
        return Err(Error::invalid("non-finite motion features"));
    }
    let j = skeleton.joint_count();
    let mut root = Vec::with_capacity(features.rows());
    let mut rots = Vec::with_capacity(features.rows() * j);
    for f in 0..features.rows() {
        let row = features.row(f);
        root.push([row[0], row[1], row[2]]);
        for k in 0..j {
            rots.push(Quat::from_slice(&row[3 + 4 * k..7 + 4 * k]).normalized());
        }
    }
    MotionSequence::new(skeleton.clone(), fps, role, root, rots)
}

fn lerp3(a: [f64; 3], b: [f64; 3], u: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * u,
        a[1] + (b[1] - a[1]) * u,
        a[2] + (b[2] - a[2]) * u,
    ]
}

/// Resamples `m` to `target_frames` frames spanning the same time range:
/// root positions are interpolated linearly and rotations by slerp.
/// Endpoints are kept exactly when `target_frames >= 2`.
pub fn retime(m: &MotionSequence, target_frames: usize) -> Result<MotionSequence> {
    if target_frames == 0 {
        return Err(Error::invalid("target frame count must be at least 1"));
    }
    let n = m.frame_count();
    if target_frames == n {
        return Ok(m.clone());
    }
    let j = m.skeleton.joint_count();
    let mut root = Vec::with_capacity(target_frames);
    let mut rots = Vec::with_capacity(target_frames * j);
    for i in 0..target_frames {
        let (lo, hi, u) = if target_frames == 1 || n == 1 {
            (0, 0, 0.0)
        } else {
            let s = i as f64 * (n - 1) as f64 / (target_frames - 1) as f64;
            let lo = (s.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, s - lo as f64)
        };
        if u == 0.0 || lo == hi {
            root.push(m.root_pos[lo]);
            rots.extend_from_slice(m.frame_rotations(lo));
        } else {
            root.push(lerp3(m.root_pos[lo], m.root_pos[hi], u));
            for k in 0..j {
                rots.push(slerp(m.rotation(lo, k), m.rotation(hi, k), u));
            }
        }
    }
    MotionSequence::new(m.skeleton.clone(), m.fps, m.role, root, rots)
}

/// Retiming that keeps the original motion speed when lengthening: the
/// sequence is played forward and backward (0,1,..,n-1,n-2,..,0,1,..) for
/// as many whole passes as needed to cover `target_frames`, and the result
/// is then resampled to exactly `target_frames`. Shortening is a plain
/// [`retime`].
pub fn retime_ping_pong(m: &MotionSequence, target_frames: usize) -> Result<MotionSequence> {
    if target_frames == 0 {
        return Err(Error::invalid("target frame count must be at least 1"));
    }
    let n = m.frame_count();
    if target_frames <= n || n == 1 {
        return retime(m, target_frames);
    }
    let passes = (target_frames - 1).div_ceil(n - 1);
    let len = 1 + passes * (n - 1);
    let period = 2 * (n - 1);
    let j = m.skeleton.joint_count();
    let mut root = Vec::with_capacity(len);
    let mut rots = Vec::with_capacity(len * j);
    for i in 0..len {
        let phase = i % period;
        let src = if phase < n { phase } else { period - phase };
        root.push(m.root_pos[src]);
        rots.extend_from_slice(m.frame_rotations(src));
    }
    let extended = MotionSequence::new(m.skeleton.clone(), m.fps, m.role, root, rots)?;
    retime(&extended, target_frames)
}

/// A length-aligned speaker/listener pair with its condition track.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedInteraction {
    speaker: MotionSequence,
    listener: MotionSequence,
    condition: ConditionTrack,
}

impl PairedInteraction {
    pub fn new(
        speaker: MotionSequence,
        listener: MotionSequence,
        condition: ConditionTrack,
    ) -> Result<Self> {
        if speaker.role() != RoleLabel::Speaker || listener.role() != RoleLabel::Listener {
            return Err(Error::invalid(
                "paired interaction needs a speaker and a listener in that order",
            ));
        }
        let frames = speaker.frame_count();
        if listener.frame_count() != frames || condition.frame_count() != frames {
            return Err(Error::invalid(format!(
                "length mismatch: speaker {frames}, listener {}, condition {}",
                listener.frame_count(),
                condition.frame_count()
            )));
        }
        if speaker.skeleton() != listener.skeleton() {
            return Err(Error::invalid("speaker and listener skeletons differ"));
        }
        Ok(Self {
            speaker,
            listener,
            condition,
        })
    }

    pub fn speaker(&self) -> &MotionSequence {
        &self.speaker
    }

    pub fn listener(&self) -> &MotionSequence {
        &self.listener
    }

    pub fn condition(&self) -> &ConditionTrack {
        &self.condition
    }

    pub fn frame_count(&self) -> usize {
        self.speaker.frame_count()
    }

    pub fn motion(&self, role: RoleLabel) -> &MotionSequence {
        match role {
            RoleLabel::Speaker => &self.speaker,
            RoleLabel::Listener => &self.listener,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MotionFile {
    fps: f64,
    role: u8,
    joint_names: Vec<String>,
    parents: Vec<i32>,
    foot_joints: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offsets: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_count: Option<usize>,
    frames: Vec<Vec<f64>>,
}

/// Parses a motion document. `source_name` is used in error messages.
pub fn parse_motion(text: &str, source_name: &str) -> Result<MotionSequence> {
    let file: MotionFile = serde_json::from_str(text).map_err(|e| {
        Error::parse(
            source_name,
            format!("line {}, column {}: {e}", e.line(), e.column()),
        )
    })?;
    let perr = |msg: String| Error::parse(source_name, msg);
    let role = RoleLabel::try_from(file.role).map_err(|e| perr(format!("field `role`: {e}")))?;
    let joints = file.parents.len();
    let offsets = file.offsets.unwrap_or_else(|| vec![[0.0; 3]; joints]);
    let skeleton = Skeleton::new(file.joint_names, file.parents, file.foot_joints, offsets)
        .map_err(|e| perr(format!("skeleton: {e}")))?;
    if let Some(declared) = file.frame_count {
        if declared != file.frames.len() {
            return Err(perr(format!(
                "field `frame_count` declares {declared} frames but `frames` has {} rows",
                file.frames.len()
            )));
        }
    }
    if file.frames.is_empty() {
        return Err(perr("field `frames` is empty".into()));
    }
    let d = skeleton.feature_dim();
    let mut root = Vec::with_capacity(file.frames.len());
    let mut rots = Vec::with_capacity(file.frames.len() * joints);
    for (f, row) in file.frames.iter().enumerate() {
        if row.len() != d {
            return Err(perr(format!(
                "frame {f}: expected {d} values, found {}",
                row.len()
            )));
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(perr(format!("frame {f}: non-finite value in column {c}")));
        }
        root.push([row[0], row[1], row[2]]);
        for j in 0..joints {
            let q = Quat::from_slice(&row[3 + 4 * j..7 + 4 * j]);
            let q = q
                .try_normalized()
                .ok_or_else(|| perr(format!("zero quaternion at frame {f}, joint {j}")))?;
            rots.push(q.canonical());
        }
    }
    MotionSequence::new(skeleton, file.fps, role, root, rots).map_err(|e| perr(e.to_string()))
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_motion(&text, &path.display().to_string())
}

/// Serializes a motion document, one frame per line.
pub fn motion_to_json(m: &MotionSequence) -> String {
    let sk = m.skeleton();
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"fps\": {},\n", to_json(&m.fps)));
    out.push_str(&format!("  \"role\": {},\n", m.role as u8));
    out.push_str(&format!("  \"joint_names\": {},\n", to_json(&sk.joint_names)));
    out.push_str(&format!("  \"parents\": {},\n", to_json(&sk.parents)));
    out.push_str(&format!("  \"foot_joints\": {},\n", to_json(&sk.foot_joints)));
    out.push_str(&format!("  \"offsets\": {},\n", to_json(&sk.offsets)));
    out.push_str(&format!("  \"frame_count\": {},\n", m.frame_count()));
    out.push_str("  \"frames\": [\n");
    let features = flatten(m);
    for f in 0..features.rows() {
        out.push_str("    ");
        out.push_str(&to_json(features.row(f)));
        out.push_str(if f + 1 < features.rows() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn save_motion(m: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, motion_to_json(m))?;
    Ok(())
}

// serde_json prints the shortest representation that round-trips exactly.
fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}
