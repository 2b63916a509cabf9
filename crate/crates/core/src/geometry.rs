//! Rigid-body transforms and residual error metrics.
//!
//! Transforms act on world points in millimetres as `p -> R p + t`. The
//! rotation pivots about the world origin, which is the C-arm iso-center, so
//! a pure rotation never moves the iso-center.

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CArmCamera;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformRecord", from = "TransformRecord")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// On-disk layout: rotation as 9 row-major reals.
#[derive(Serialize, Deserialize)]
struct TransformRecord {
    rotation: [f64; 9],
    translation_mm: [f64; 3],
}

impl From<RigidTransform> for TransformRecord {
    fn from(t: RigidTransform) -> Self {
        let r = &t.rotation;
        TransformRecord {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation_mm: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl From<TransformRecord> for RigidTransform {
    fn from(r: TransformRecord) -> Self {
        RigidTransform {
            rotation: Matrix3::from_row_slice(&r.rotation),
            translation: Vector3::from(r.translation_mm),
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn rot_x(deg: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), deg)
    }

    pub fn rot_y(deg: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), deg)
    }

    pub fn rot_z(deg: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), deg)
    }

    /// Rotation about `axis` (need not be unit length) through the iso-center.
    pub fn from_axis_angle(axis: &Vector3<f64>, deg: f64) -> Self {
        let axis = Unit::new_normalize(*axis);
        RigidTransform {
            rotation: *Rotation3::from_axis_angle(&axis, deg.to_radians()).matrix(),
            translation: Vector3::zeros(),
        }
    }

    /// Extrinsic x-y-z Euler angles in degrees: rotate about x, then the fixed
    /// y axis, then the fixed z axis (`R = Rz * Ry * Rx`).
    pub fn from_euler_xyz_deg(rx: f64, ry: f64, rz: f64) -> Self {
        RigidTransform {
            rotation: euler_xyz_matrix(rx, ry, rz),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation followed by translation, as used for Table-style offsets.
    pub fn from_parts_deg(t: [f64; 3], r_deg: [f64; 3]) -> Self {
        RigidTransform {
            rotation: euler_xyz_matrix(r_deg[0], r_deg[1], r_deg[2]),
            translation: Vector3::from(t),
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Geodesic rotation angle in degrees, in `[0, 180]`.
    pub fn rotation_angle_deg(&self) -> f64 {
        rotation_angle(&self.rotation).to_degrees()
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let gram = (r.transpose() * r - Matrix3::identity()).abs().max();
        gram.max((r.determinant() - 1.0).abs())
    }

    /// Extrinsic x-y-z Euler angles in degrees (inverse of `from_euler_xyz_deg`).
    pub fn euler_xyz_deg(&self) -> [f64; 3] {
        let r = &self.rotation;
        let ry = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let (rx, rz) = if r[(2, 0)].abs() < 1.0 - 1e-12 {
            (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
        } else {
            // gimbal lock: fold everything into rx
            ((-r[(1, 2)]).atan2(r[(1, 1)]), 0.0)
        };
        [rx.to_degrees(), ry.to_degrees(), rz.to_degrees()]
    }

    /// Max absolute element difference of rotation and translation.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

pub fn euler_xyz_matrix(rx: f64, ry: f64, rz: f64) -> Matrix3<f64> {
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), rz.to_radians())
        * Rotation3::from_axis_angle(&Vector3::y_axis(), ry.to_radians())
        * Rotation3::from_axis_angle(&Vector3::x_axis(), rx.to_radians());
    *r.matrix()
}

/// Angle of a rotation matrix in radians, stable near zero and near pi.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin_vec = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let cos = (r.trace() - 1.0) * 0.5;
    sin_vec.norm().atan2(cos)
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Residual registration error measured at the iso-center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub translation_mm: f64,
    pub rotation_deg: f64,
    pub in_plane_mm: f64,
    pub out_of_plane_mm: f64,
}

impl PoseError {
    pub fn zero() -> Self {
        PoseError {
            translation_mm: 0.0,
            rotation_deg: 0.0,
            in_plane_mm: 0.0,
            out_of_plane_mm: 0.0,
        }
    }
}

/// Error transform `E = estimated⁻¹ ∘ truth` evaluated at `iso_center`.
/// The in-plane split uses the world z axis as viewing direction, which is
/// the C-arm at zero rotation and angulation.
pub fn pose_error(estimated: &RigidTransform, truth: &RigidTransform, iso_center: &Point3<f64>) -> PoseError {
    pose_error_along(estimated, truth, iso_center, &Vector3::z())
}

/// As [`pose_error`], splitting the displacement against the camera's viewing axis.
pub fn pose_error_for_camera(
    estimated: &RigidTransform,
    truth: &RigidTransform,
    iso_center: &Point3<f64>,
    camera: &CArmCamera,
) -> PoseError {
    pose_error_along(estimated, truth, iso_center, &camera.frame().viewing_axis)
}

fn pose_error_along(
    estimated: &RigidTransform,
    truth: &RigidTransform,
    iso_center: &Point3<f64>,
    viewing_axis: &Vector3<f64>,
) -> PoseError {
    let e = estimated.inverse().compose(truth);
    let d = e.apply(iso_center) - iso_center;
    let (in_plane_mm, out_of_plane_mm) = split_along(&d, viewing_axis);
    PoseError {
        translation_mm: d.norm(),
        rotation_deg: e.rotation_angle_deg(),
        in_plane_mm,
        out_of_plane_mm,
    }
}

/// Splits a displacement into the component in the detector plane and the
/// component along the source→detector axis.
pub fn decompose_in_plane(error_translation: &Vector3<f64>, camera: &CArmCamera) -> (f64, f64) {
    split_along(error_translation, &camera.frame().viewing_axis)
}

fn split_along(v: &Vector3<f64>, axis: &Vector3<f64>) -> (f64, f64) {
    let n = axis.normalize();
    let along = v.dot(&n);
    let rest = v - n * along;
    (rest.norm(), along.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compose_identity_and_inverse() {
        let t = RigidTransform::from_parts_deg([1.0, -2.0, 3.5], [10.0, -20.0, 30.0]);
        assert!(compose(&RigidTransform::identity(), &t).max_abs_diff(&t) < 1e-15);
        let id = compose(&t, &invert(&t));
        assert!(id.max_abs_diff(&RigidTransform::identity()) < 1e-9);
    }

    #[test]
    fn quarter_turns_add() {
        let a = RigidTransform::rot_z(90.0);
        let half = compose(&a, &a);
        assert!(half.max_abs_diff(&RigidTransform::rot_z(180.0)) < 1e-12);
    }

    #[test]
    fn invert_translation_and_involution() {
        let t = invert(&RigidTransform::translation(1.0, 2.0, 3.0));
        assert!(t.max_abs_diff(&RigidTransform::translation(-1.0, -2.0, -3.0)) < 1e-15);
        assert!(invert(&RigidTransform::identity()).max_abs_diff(&RigidTransform::identity()) < 1e-15);
        let r = RigidTransform::from_parts_deg([4.0, 4.0, 0.0], [2.0, 3.0, 4.0]);
        assert!(invert(&invert(&r)).max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn euler_convention_is_extrinsic_xyz() {
        let e = RigidTransform::from_euler_xyz_deg(2.0, 3.0, 4.0);
        let manual = RigidTransform::rot_z(4.0)
            .compose(&RigidTransform::rot_y(3.0))
            .compose(&RigidTransform::rot_x(2.0));
        assert!(e.max_abs_diff(&manual) < 1e-14);
        let back = e.euler_xyz_deg();
        assert_relative_eq!(back[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(back[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(back[2], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_error_table_values() {
        let iso = Point3::origin();
        let same = pose_error(
            &RigidTransform::translation(1.0, 2.0, 3.0),
            &RigidTransform::translation(1.0, 2.0, 3.0),
            &iso,
        );
        assert_eq!(same.translation_mm, 0.0);
        assert_eq!(same.rotation_deg, 0.0);

        let t4 = pose_error(
            &RigidTransform::identity(),
            &RigidTransform::translation(4.0, 4.0, 0.0),
            &iso,
        );
        assert_relative_eq!(t4.translation_mm, 5.656854249, epsilon = 1e-9);

        let t1 = pose_error(
            &RigidTransform::identity(),
            &RigidTransform::translation(10.0, 0.0, 0.0),
            &iso,
        );
        assert_relative_eq!(t1.translation_mm, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_about_iso_leaves_iso_fixed() {
        let full = RigidTransform::from_parts_deg([4.0, 4.0, 0.0], [2.0, 3.0, 4.0]);
        let e = pose_error(&full, &RigidTransform::identity(), &Point3::origin());
        assert_relative_eq!(e.translation_mm, 32f64.sqrt(), epsilon = 1e-9);
        assert!(e.rotation_deg > 4.0 && e.rotation_deg < 6.0);
        let rot_only = pose_error(
            &RigidTransform::rot_x(5.0),
            &RigidTransform::identity(),
            &Point3::origin(),
        );
        assert_eq!(rot_only.translation_mm, 0.0);
        assert_relative_eq!(rot_only.rotation_deg, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn decompose_examples() {
        let cam = CArmCamera::default();
        let (i, o) = decompose_in_plane(&Vector3::new(7.0, 0.0, 0.0), &cam);
        assert_relative_eq!(i, 7.0);
        assert_eq!(o, 0.0);
        let (i, o) = decompose_in_plane(&Vector3::new(0.0, 0.0, 7.0), &cam);
        assert_eq!(i, 0.0);
        assert_relative_eq!(o, 7.0);
        let (i, o) = decompose_in_plane(&Vector3::new(3.0, 4.0, 0.0), &cam);
        assert_relative_eq!(i, 5.0);
        assert_eq!(o, 0.0);
    }

    #[test]
    fn transform_json_is_row_major() {
        let t = RigidTransform::rot_z(90.0).compose(&RigidTransform::translation(1.0, 0.0, 0.0));
        let js = serde_json::to_value(t).unwrap();
        let rot: Vec<f64> = serde_json::from_value(js["rotation"].clone()).unwrap();
        assert_eq!(rot.len(), 9);
        assert_relative_eq!(rot[1], -1.0, epsilon = 1e-15);
        let back: RigidTransform = serde_json::from_value(js).unwrap();
        assert_eq!(back, t);
    }
}
