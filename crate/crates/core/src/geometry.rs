//! Quaternion rotations, coordinate-frame conversion, and the
//! equirectangular projection.
//!
//! # Axis convention
//!
//! This is the one place the axis mapping is defined; every other module
//! inherits it:
//!
//! - `x` is the reference axis of the camera-based frame (the camera's
//!   filming direction),
//! - `z` is the vertical axis, shared by the camera-based and VR frames
//!   (rotation about it is yaw),
//! - `y` completes the right-handed system.
//!
//! The VR frame is reset at playback start so that its reference (roll) axis
//! overlaps the projection of the first head orientation onto the x-y plane.
//! [`offset_angle`] recovers the angle between the two reference axes from
//! that first orientation and [`camera_to_vr`] undoes it.
//!
//! Angles are degrees at every interface; radians appear only inside
//! function bodies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum tolerated deviation from unit norm for quaternions passed to
/// [`rotate_vector`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// The vertical (yaw) axis shared by the camera-based and VR frames.
pub const VERTICAL_AXIS: Vec3 = Vec3 {
    x: 0.0,
    y: 0.0,
    z: 1.0,
};

/// A direction or displacement in 3-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * other.z - self.z * other.y,
            y: self.z * other.x - self.x * other.z,
            z: self.x * other.y - self.y * other.x,
        }
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    /// Unit vector in the same direction; errors on zero input.
    pub fn normalized(self) -> Result<Vec3> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        Ok(self.scaled(1.0 / n))
    }

    pub fn is_unit(self, tolerance: f64) -> bool {
        (self.norm() - 1.0).abs() <= tolerance
    }

    /// Angle to `other` in degrees, in [0, 180].
    ///
    /// Computed from atan2 of the cross and dot products, which stays
    /// accurate for nearly parallel and nearly antipodal pairs.
    pub fn angle_to_deg(self, other: Vec3) -> f64 {
        self.cross(other).norm().atan2(self.dot(other)).to_degrees()
    }

    /// An arbitrary but deterministic unit vector orthogonal to `self`.
    pub fn any_orthogonal(self) -> Vec3 {
        let reference = if self.x.abs() <= self.y.abs() && self.x.abs() <= self.z.abs() {
            Vec3::new(1.0, 0.0, 0.0)
        } else if self.y.abs() <= self.z.abs() {
            Vec3::new(0.0, 1.0, 0.0)
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        };
        self.cross(reference)
            .normalized()
            .expect("reference chosen off-axis")
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;

    fn add(self, other: Vec3) -> Vec3 {
        Vec3::new(self.x + other.x, self.y + other.y, self.z + other.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;

    fn sub(self, other: Vec3) -> Vec3 {
        Vec3::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }
}

/// Coordinate frame of a head orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// Referenced to the recording camera's filming direction.
    #[serde(rename = "camera")]
    CameraBased,
    /// Referenced to the VR runtime's roll axis, set at playback start.
    Vr,
}

impl Frame {
    /// Token used in the trace CSV format.
    pub fn token(self) -> &'static str {
        match self {
            Frame::CameraBased => "camera",
            Frame::Vr => "vr",
        }
    }

    pub fn parse_token(s: &str) -> Result<Frame> {
        match s {
            "camera" => Ok(Frame::CameraBased),
            "vr" => Ok(Frame::Vr),
            other => Err(Error::invalid(format!(
                "unknown frame tag {other:?}, expected \"camera\" or \"vr\""
            ))),
        }
    }
}

impl std::fmt::Display for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Unit quaternion encoding a rotation, stored as (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(self) -> Quaternion {
        Quaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product; `self * other` applies `other` first.
    pub fn compose(self, other: Quaternion) -> Quaternion {
        Quaternion {
            w: self.w * other.w - self.x * other.x - self.y * other.y - self.z * other.z,
            x: self.w * other.x + self.x * other.w + self.y * other.z - self.z * other.y,
            y: self.w * other.y - self.x * other.z + self.y * other.w + self.z * other.x,
            z: self.w * other.z + self.x * other.y - self.y * other.x + self.z * other.w,
        }
    }

    /// Rotate `v` without checking that `self` is unit.
    ///
    /// Uses v' = v + 2w (q x v) + 2 q x (q x v) with q the vector part,
    /// which costs two cross products instead of two quaternion products.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        let q = Vec3::new(self.x, self.y, self.z);
        let t = q.cross(v).scaled(2.0);
        v + t.scaled(self.w) + q.cross(t)
    }
}

/// Build the unit quaternion rotating by `degrees` about `axis`
/// (right-hand rule). The axis does not need to be unit length.
pub fn make_quaternion(axis: Vec3, degrees: f64) -> Result<Quaternion> {
    let n = axis.norm();
    if n == 0.0 {
        return Err(Error::invalid("rotation axis has zero length"));
    }
    let half = degrees.to_radians() / 2.0;
    let (s, c) = (half.sin(), half.cos());
    let u = axis.scaled(1.0 / n);
    Ok(Quaternion {
        w: c,
        x: s * u.x,
        y: s * u.y,
        z: s * u.z,
    })
}

/// Apply the rotation `q` to `v`. Errors unless `q` is unit within
/// [`UNIT_NORM_TOLERANCE`].
pub fn rotate_vector(q: Quaternion, v: Vec3) -> Result<Vec3> {
    let n = q.norm();
    if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::invalid(format!(
            "quaternion norm {n} deviates from 1 by more than {UNIT_NORM_TOLERANCE}"
        )));
    }
    Ok(q.rotate(v))
}

/// Offset angle between the camera reference axis and the VR roll axis,
/// in degrees in (-180, 180].
///
/// `v1` is the head orientation at playback start, expressed in the
/// camera-based frame; the VR roll axis overlaps its projection onto the
/// x-y plane. The two-argument arctangent resolves the quadrant for every
/// orientation, not just the front hemisphere.
pub fn offset_angle(v1: Vec3) -> Result<f64> {
    if v1.x == 0.0 && v1.y == 0.0 {
        return Err(Error::DegenerateOrientation);
    }
    Ok(v1.y.atan2(v1.x).to_degrees())
}

/// Convert a camera-based head orientation to the VR frame by rotating
/// `-a1_deg` about the vertical axis, where `a1_deg` comes from
/// [`offset_angle`] of the session's first orientation.
pub fn camera_to_vr(v: Vec3, a1_deg: f64) -> Vec3 {
    let q = make_quaternion(VERTICAL_AXIS, -a1_deg).expect("vertical axis is nonzero");
    q.rotate(v)
}

/// Azimuth/altitude pair in degrees: azimuth in [0, 360), altitude in
/// [-90, 90].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalAngles {
    pub azimuth_deg: f64,
    pub altitude_deg: f64,
}

/// Spherical angles of a unit direction.
///
/// At the poles (altitude exactly +-90) the azimuth is canonicalized to 0.
pub fn to_spherical(v: Vec3) -> SphericalAngles {
    let altitude_deg = v.z.clamp(-1.0, 1.0).asin().to_degrees();
    let azimuth_deg = if v.x == 0.0 && v.y == 0.0 {
        0.0
    } else {
        let mut a = v.y.atan2(v.x).to_degrees();
        if a < 0.0 {
            a += 360.0;
        }
        // Negative azimuths within one ulp of zero wrap to 360.0 above.
        if a >= 360.0 {
            a = 0.0;
        }
        a
    };
    SphericalAngles {
        azimuth_deg,
        altitude_deg,
    }
}

/// Unit direction for the given spherical angles (inverse of
/// [`to_spherical`] away from the poles).
pub fn from_spherical(angles: SphericalAngles) -> Vec3 {
    let az = angles.azimuth_deg.to_radians();
    let alt = angles.altitude_deg.to_radians();
    Vec3 {
        x: alt.cos() * az.cos(),
        y: alt.cos() * az.sin(),
        z: alt.sin(),
    }
}

/// Real-valued pixel position on a W x H equirectangular grid:
/// column in [0, W), row in [0, H].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquirectPoint {
    pub w: f64,
    pub h: f64,
}

/// Project spherical angles onto a W x H equirectangular grid:
/// w = (azimuth / 360) W, h = ((1 - sin altitude) / 2) H.
pub fn equirect_project(angles: SphericalAngles, width: usize, height: usize) -> Result<EquirectPoint> {
    if width < 1 || height < 1 {
        return Err(Error::invalid(format!(
            "equirectangular grid must be at least 1x1, got {width}x{height}"
        )));
    }
    Ok(EquirectPoint {
        w: angles.azimuth_deg / 360.0 * width as f64,
        h: (1.0 - angles.altitude_deg.to_radians().sin()) / 2.0 * height as f64,
    })
}

/// Signed difference wrapped into (-180, 180] degrees.
pub fn wrap_angle_deg(delta: f64) -> f64 {
    let mut d = delta % 360.0;
    if d <= -180.0 {
        d += 360.0;
    } else if d > 180.0 {
        d -= 360.0;
    }
    d
}

/// Rotate `from` toward `to` along their great circle by `step_deg`,
/// stopping at `to` if the step overshoots.
pub fn step_toward(from: Vec3, to: Vec3, step_deg: f64) -> Vec3 {
    let separation = from.angle_to_deg(to);
    if separation <= step_deg || separation == 0.0 {
        return to;
    }
    let axis = from.cross(to);
    let axis = if axis.norm() < 1e-12 {
        // Antipodal pair: the great circle is ambiguous, pick one.
        from.any_orthogonal()
    } else {
        axis
    };
    make_quaternion(axis, step_deg)
        .expect("axis is nonzero")
        .rotate(from)
}
