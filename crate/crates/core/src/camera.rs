//! Cone-beam C-arm geometry.
//!
//! World frame: iso-center at the origin. At zero rotation and angulation
//! the source sits at `(0, 0, -SOD)`, the beam travels along `+z`, and the
//! detector u/v axes run along `+x`/`+y`. Propeller rotation turns the arm
//! about the world y axis; angulation is applied afterwards about the world
//! x axis. Both pivot about the iso-center.

use nalgebra::{Matrix3, Matrix3x4, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

pub const DEFAULT_SOD_MM: f64 = 810.0;
pub const DEFAULT_SID_MM: f64 = 1195.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CArmCamera {
    pub source_to_iso_mm: f64,
    pub source_to_detector_mm: f64,
    pub detector_dims: [usize; 2],
    pub pixel_pitch_mm: f64,
    pub carm_rotation_deg: f64,
    pub carm_angulation_deg: f64,
    pub fov_diameter_cm: f64,
    /// Displacement of the focal spot from its nominal position (gravity sag,
    /// calibration correction).
    #[serde(default)]
    pub source_offset_mm: [f64; 3],
    #[serde(default)]
    pub detector_offset_mm: [f64; 3],
}

impl Default for CArmCamera {
    fn default() -> Self {
        CArmCamera::with_format(27.0, [256, 256])
    }
}

/// Resolved world-space pose of source and detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFrame {
    pub source: Point3<f64>,
    pub detector_center: Point3<f64>,
    pub u_axis: Vector3<f64>,
    pub v_axis: Vector3<f64>,
    pub viewing_axis: Vector3<f64>,
}

impl CameraFrame {
    /// Columns are the detector u, v and viewing axes in world coordinates.
    pub fn basis(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.u_axis, self.v_axis, self.viewing_axis])
    }
}

impl CArmCamera {
    /// Default geometry with the pixel pitch chosen so that `fov_cm` spans the
    /// detector width.
    pub fn with_format(fov_cm: f64, detector_dims: [usize; 2]) -> Self {
        CArmCamera {
            source_to_iso_mm: DEFAULT_SOD_MM,
            source_to_detector_mm: DEFAULT_SID_MM,
            detector_dims,
            pixel_pitch_mm: fov_cm * 10.0 / detector_dims[0] as f64,
            carm_rotation_deg: 0.0,
            carm_angulation_deg: 0.0,
            fov_diameter_cm: fov_cm,
            source_offset_mm: [0.0; 3],
            detector_offset_mm: [0.0; 3],
        }
    }

    pub fn at_angles(mut self, rotation_deg: f64, angulation_deg: f64) -> Self {
        self.carm_rotation_deg = rotation_deg;
        self.carm_angulation_deg = angulation_deg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("camera: {m}")));
        if !(self.source_to_iso_mm > 0.0) {
            return bad("source_to_iso_mm must be positive");
        }
        if !(self.source_to_detector_mm > self.source_to_iso_mm) {
            return bad("source_to_detector_mm must exceed source_to_iso_mm");
        }
        if self.detector_dims[0] == 0 || self.detector_dims[1] == 0 {
            return bad("detector dims must be non-zero");
        }
        if !(self.pixel_pitch_mm > 0.0) {
            return bad("pixel pitch must be positive");
        }
        if !(self.fov_diameter_cm > 0.0) {
            return bad("fov diameter must be positive");
        }
        Ok(())
    }

    /// Orientation of the arm: angulation (about x) after rotation (about y).
    pub fn arm_rotation(&self) -> Matrix3<f64> {
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), self.carm_rotation_deg.to_radians());
        let ang = Rotation3::from_axis_angle(&Vector3::x_axis(), self.carm_angulation_deg.to_radians());
        *(ang * rot).matrix()
    }

    pub fn frame(&self) -> CameraFrame {
        let q = self.arm_rotation();
        let source =
            Point3::from(q * Vector3::new(0.0, 0.0, -self.source_to_iso_mm) + Vector3::from(self.source_offset_mm));
        let detector_center = Point3::from(
            q * Vector3::new(0.0, 0.0, self.source_to_detector_mm - self.source_to_iso_mm)
                + Vector3::from(self.detector_offset_mm),
        );
        CameraFrame {
            source,
            detector_center,
            u_axis: q.column(0).into_owned(),
            v_axis: q.column(1).into_owned(),
            viewing_axis: q.column(2).into_owned(),
        }
    }

    /// Magnification of the iso-center plane onto the detector.
    pub fn magnification(&self) -> f64 {
        self.source_to_detector_mm / self.source_to_iso_mm
    }

    /// Pixel pitch back-projected to the iso-center plane.
    pub fn iso_pitch_mm(&self) -> f64 {
        self.pixel_pitch_mm / self.magnification()
    }

    /// Detector principal point in full-resolution pixel coordinates.
    pub fn center_px(&self) -> [f64; 2] {
        [
            (self.detector_dims[0] as f64 - 1.0) * 0.5,
            (self.detector_dims[1] as f64 - 1.0) * 0.5,
        ]
    }

    /// World position of a (possibly fractional) full-resolution pixel coordinate.
    pub fn pixel_position(&self, frame: &CameraFrame, px: f64, py: f64) -> Point3<f64> {
        let c = self.center_px();
        frame.detector_center
            + frame.u_axis * ((px - c[0]) * self.pixel_pitch_mm)
            + frame.v_axis * ((py - c[1]) * self.pixel_pitch_mm)
    }

    /// Rendered grid size at a given downsampling factor.
    pub fn downsampled_dims(&self, downsample: usize) -> Result<[usize; 2]> {
        if downsample == 0 {
            return Err(Error::InvalidArgument("downsample must be >= 1".into()));
        }
        let [nu, nv] = self.detector_dims;
        if nu % downsample != 0 || nv % downsample != 0 {
            return Err(Error::InvalidArgument(format!(
                "detector {nu}x{nv} not divisible by downsample {downsample}"
            )));
        }
        Ok([nu / downsample, nv / downsample])
    }

    /// Projects a world point (already in the moved patient frame) to pixel
    /// coordinates. `None` if the point is not in front of the source.
    pub fn project(&self, p: &Point3<f64>) -> Option<[f64; 2]> {
        let m = self.projection_map(&RigidTransform::identity());
        let h = m * p.to_homogeneous();
        if h.z <= 0.0 {
            return None;
        }
        Some([h.x / h.z, h.y / h.z])
    }

    /// 3×4 map from homogeneous world points (mm) to homogeneous pixel
    /// coordinates, with the patient transform applied first. The third
    /// homogeneous coordinate is the depth along the viewing axis, positive in
    /// front of the source.
    pub fn projection_map(&self, patient: &RigidTransform) -> Matrix3x4<f64> {
        let f = self.frame();
        let s = f.source.coords;
        let d = f.detector_center.coords;
        let n = f.viewing_axis;
        let h = (d - s).dot(&n);
        let c = self.center_px();
        let pitch = self.pixel_pitch_mm;
        let ku = (s - d).dot(&f.u_axis) / pitch + c[0];
        let kv = (s - d).dot(&f.v_axis) / pitch + c[1];
        let row_u = f.u_axis * (h / pitch) + n * ku;
        let row_v = f.v_axis * (h / pitch) + n * kv;
        let m = Matrix3::from_rows(&[row_u.transpose(), row_v.transpose(), n.transpose()]);
        let mut ext = Matrix3x4::zeros();
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
        ext.set_column(3, &(-(m * s)));
        ext * patient.to_homogeneous()
    }

    /// Circular field-of-view mask on a grid rendered at `downsample`.
    pub fn fov_mask(&self, downsample: usize) -> Result<Vec<bool>> {
        self.fov_mask_scaled(downsample, 1.0)
    }

    /// As [`fov_mask`](Self::fov_mask) with the radius multiplied by `fraction`.
    pub fn fov_mask_scaled(&self, downsample: usize, fraction: f64) -> Result<Vec<bool>> {
        let [nu, nv] = self.downsampled_dims(downsample)?;
        let c = self.center_px();
        let r = fraction * self.fov_diameter_cm * 10.0 * 0.5 / self.pixel_pitch_mm;
        let r2 = r * r;
        let ds = downsample as f64;
        let mut mask = Vec::with_capacity(nu * nv);
        for j in 0..nv {
            for i in 0..nu {
                let x = i as f64 * ds + (ds - 1.0) * 0.5 - c[0];
                let y = j as f64 * ds + (ds - 1.0) * 0.5 - c[1];
                mask.push(x * x + y * y <= r2);
            }
        }
        Ok(mask)
    }
}

/// Free-function form of [`CArmCamera::projection_map`].
pub fn projection_map(camera: &CArmCamera, patient: &RigidTransform) -> Matrix3x4<f64> {
    camera.projection_map(patient)
}
