//! File formats.
//!
//! Volumes and images are a JSON header (`<name>.vol.json` / `<name>.img.json`)
//! next to a raw little-endian f32 payload (`<name>.vol.raw` / `<name>.img.raw`),
//! x-fastest. Transforms, cameras and other records are plain JSON.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::volume::Volume;

const DTYPE: &str = "f32le";

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    fov_diameter_cm: f64,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageHeader {
    dims: [usize; 2],
    pitch_mm: f64,
    fov_diameter_cm: f64,
    dtype: String,
}

/// `dir/name`, `dir/name.vol.json` and `dir/name.vol.raw` all name the same
/// volume; returns `(header, raw)` paths.
fn pair_paths(path: &Path, kind: &str) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(&format!(".{kind}.json"))
        .or_else(|| s.strip_suffix(&format!(".{kind}.raw")))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{stem}.{kind}.json")),
        PathBuf::from(format!("{stem}.{kind}.raw")),
    )
}

fn write_raw(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_raw(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("payload of {} bytes is not a whole number of f32 values", bytes.len()),
        });
    }
    let found = bytes.len() / 4;
    if found != expected {
        return Err(Error::DimsMismatch { expected, found });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

pub fn save_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn check_dtype(path: &Path, dtype: &str) -> Result<()> {
    if dtype != DTYPE {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("unsupported dtype {dtype:?}, expected {DTYPE:?}"),
        });
    }
    Ok(())
}

pub fn save_volume(volume: &Volume, path: &Path) -> Result<()> {
    let (header_path, raw_path) = pair_paths(path, "vol");
    let header = VolumeHeader {
        dims: volume.dims(),
        spacing_mm: volume.spacing_mm(),
        origin_mm: volume.origin_mm(),
        fov_diameter_cm: volume.fov_diameter_cm,
        dtype: DTYPE.into(),
    };
    save_json(&header, &header_path)?;
    write_raw(&raw_path, volume.data())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let (header_path, raw_path) = pair_paths(path, "vol");
    let h: VolumeHeader = load_json(&header_path)?;
    check_dtype(&header_path, &h.dtype)?;
    let data = read_raw(&raw_path, h.dims[0] * h.dims[1] * h.dims[2])?;
    Volume::new(h.dims, h.spacing_mm, h.origin_mm, data, h.fov_diameter_cm)
}

pub fn save_image(image: &Image2D, path: &Path) -> Result<()> {
    let (header_path, raw_path) = pair_paths(path, "img");
    let header = ImageHeader {
        dims: image.dims(),
        pitch_mm: image.pitch_mm(),
        fov_diameter_cm: image.fov_diameter_cm,
        dtype: DTYPE.into(),
    };
    save_json(&header, &header_path)?;
    write_raw(&raw_path, image.data())
}

pub fn load_image(path: &Path) -> Result<Image2D> {
    let (header_path, raw_path) = pair_paths(path, "img");
    let h: ImageHeader = load_json(&header_path)?;
    check_dtype(&header_path, &h.dtype)?;
    let data = read_raw(&raw_path, h.dims[0] * h.dims[1])?;
    Image2D::new(h.dims, h.pitch_mm, data, h.fov_diameter_cm)
}

/// 16-bit binary PGM, linearly windowed to `[lo, hi]` (the image range when `None`).
pub fn export_pgm(image: &Image2D, path: &Path, window: Option<(f32, f32)>) -> Result<()> {
    ensure_parent(path)?;
    let (lo, hi) = window.unwrap_or_else(|| image.min_max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let [nu, nv] = image.dims();
    let mut out = format!("P5\n{nu} {nv}\n65535\n").into_bytes();
    for &v in image.data() {
        let s = (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&s.to_be_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CArmCamera;
    use crate::geometry::RigidTransform;

    #[test]
    fn volume_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin().abs()).collect();
        let v = Volume::new([4, 4, 4], [0.5, 1.25, 2.0], [-1.0, 0.3, 7.0], data, 22.0).unwrap();
        let p = dir.path().join("v");
        save_volume(&v, &p).unwrap();
        let raw1 = fs::read(dir.path().join("v.vol.raw")).unwrap();
        let back = load_volume(&dir.path().join("v.vol.json")).unwrap();
        assert_eq!(back, v);
        save_volume(&back, &dir.path().join("w")).unwrap();
        assert_eq!(raw1, fs::read(dir.path().join("w.vol.raw")).unwrap());
    }

    #[test]
    fn errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        // missing
        let e = load_volume(&dir.path().join("nope")).unwrap_err();
        assert!(matches!(e, Error::Unreadable { .. }), "{e}");
        // dims mismatch: header 4x4x4, 63 values
        let p = dir.path().join("bad");
        fs::write(
            dir.path().join("bad.vol.json"),
            r#"{"dims":[4,4,4],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"fov_diameter_cm":10,"dtype":"f32le"}"#,
        )
        .unwrap();
        write_raw(&dir.path().join("bad.vol.raw"), &[0.0; 63]).unwrap();
        let e = load_volume(&p).unwrap_err();
        assert!(
            matches!(
                e,
                Error::DimsMismatch {
                    expected: 64,
                    found: 63
                }
            ),
            "{e}"
        );
        // malformed header
        fs::write(dir.path().join("bad.vol.json"), "{\"dims\": [4,4]").unwrap();
        let e = load_volume(&p).unwrap_err();
        assert!(matches!(e, Error::MalformedHeader { .. }), "{e}");
    }

    #[test]
    fn image_transform_camera_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image2D::from_fn([5, 3], 0.7, 15.0, |u, v| (u * v) as f32 - 1.5).unwrap();
        save_image(&img, &dir.path().join("i")).unwrap();
        assert_eq!(load_image(&dir.path().join("i")).unwrap(), img);

        let t = RigidTransform::from_parts_deg([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]);
        save_json(&t, &dir.path().join("t.json")).unwrap();
        let back: RigidTransform = load_json(&dir.path().join("t.json")).unwrap();
        assert_eq!(back, t);

        let mut cam = CArmCamera::default().at_angles(12.5, -3.0);
        cam.source_offset_mm = [0.1, 0.2, 0.3];
        save_json(&cam, &dir.path().join("c.json")).unwrap();
        let back: CArmCamera = load_json(&dir.path().join("c.json")).unwrap();
        assert_eq!(back, cam);

        export_pgm(&img, &dir.path().join("i.pgm"), None).unwrap();
        let pgm = fs::read(dir.path().join("i.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n5 3\n65535\n"));
        assert_eq!(pgm.len(), 13 + 2 * 15);
    }
}
