//! Procedural head phantom.
//!
//! Phantom axes: x runs posterior to anterior (the face is at +x), y runs
//! caudal to cranial and is the C-arm propeller axis, z runs left to right.
//! With the C-arm at rotation 0 the beam travels along z, a lateral view.
//!
//! Shapes are painted in a fixed order (head, soft tissue, skull, skull base, face,
//! sinuses, vessels, extra shapes); a later shape overwrites earlier ones
//! where it covers a point. Each voxel is the mean over a
//! `supersample`³ grid of sub-points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{centered_origin, Volume};

/// SID / SOD of the default C-arm: detector formats map to iso-plane
/// diameters through this factor.
pub const DEFAULT_MAGNIFICATION: f64 = 1195.0 / 810.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub label: String,
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
}

impl Ellipsoid {
    pub fn new(label: &str, center_mm: [f64; 3], semi_axes_mm: [f64; 3]) -> Self {
        Ellipsoid {
            label: label.into(),
            center_mm,
            semi_axes_mm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialEllipsoid {
    #[serde(flatten)]
    pub shape: Ellipsoid,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkullSpec {
    pub center_mm: [f64; 3],
    pub outer_semi_axes_mm: [f64; 3],
    pub inner_semi_axes_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselTreeSpec {
    pub root_mm: [f64; 3],
    pub direction: [f64; 3],
    pub root_length_mm: f64,
    /// Bifurcation levels below the root segment.
    pub generations: usize,
    pub root_radius_mm: f64,
    pub tip_radius_mm: f64,
    pub length_ratio: f64,
    pub branch_angle_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Materials {
    pub mu_bone: f64,
    pub mu_soft: f64,
    pub mu_contrast: f64,
    pub mu_air: f64,
}

impl Default for Materials {
    fn default() -> Self {
        Materials {
            mu_bone: 0.55,
            mu_soft: 0.21,
            mu_contrast: 1.2,
            mu_air: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Soft-tissue head envelope semi-axes, centered at the origin.
    pub head_semi_axes_mm: Option<[f64; 3]>,
    /// Further soft-tissue volumes (neck), painted right after the head.
    #[serde(default)]
    pub soft_tissue: Vec<Ellipsoid>,
    pub skull: Option<SkullSpec>,
    /// Dense bone inside and below the skull (skull base, calcifications,
    /// upper cervical spine), painted whenever a skull is present.
    #[serde(default)]
    pub skull_base: Vec<Ellipsoid>,
    pub sinuses: Vec<Ellipsoid>,
    pub facial_structures: bool,
    #[serde(default)]
    pub facial_bones: Vec<Ellipsoid>,
    pub vessel_tree: Option<VesselTreeSpec>,
    pub contrast: bool,
    pub materials: Materials,
    #[serde(default)]
    pub extra: Vec<MaterialEllipsoid>,
    pub supersample: usize,
    pub seed: u64,
}

impl PhantomSpec {
    /// Grid of `dims` at `spacing_mm` with no shapes.
    pub fn empty(dims: [usize; 3], spacing_mm: [f64; 3]) -> Self {
        PhantomSpec {
            dims,
            spacing_mm,
            head_semi_axes_mm: None,
            soft_tissue: Vec::new(),
            skull: None,
            skull_base: Vec::new(),
            sinuses: Vec::new(),
            facial_structures: false,
            facial_bones: Vec::new(),
            vessel_tree: None,
            contrast: false,
            materials: Materials::default(),
            extra: Vec::new(),
            supersample: 2,
            seed: 0,
        }
    }

    /// Landmark-rich head (facial structures on, contrast off) on an isotropic
    /// grid covering 336 × 256 × 336 mm.
    pub fn head(spacing_mm: f64) -> Self {
        let n = |extent: f64| ((extent / spacing_mm).ceil() as usize).max(2);
        let mut spec = PhantomSpec::empty([n(336.0), n(256.0), n(336.0)], [spacing_mm; 3]);
        spec.head_semi_axes_mm = Some([100.0, 115.0, 80.0]);
        spec.soft_tissue = vec![Ellipsoid::new("neck", [-10.0, -100.0, 0.0], [50.0, 27.0, 45.0])];
        spec.skull = Some(SkullSpec {
            center_mm: [0.0, 5.0, 0.0],
            outer_semi_axes_mm: [90.0, 100.0, 72.0],
            inner_semi_axes_mm: [84.0, 94.0, 66.0],
        });
        spec.skull_base = vec![
            Ellipsoid::new("petrous ridge left", [-12.0, -28.0, -36.0], [9.0, 7.0, 22.0]),
            Ellipsoid::new("petrous ridge right", [-12.0, -28.0, 36.0], [9.0, 7.0, 22.0]),
            Ellipsoid::new("clivus", [8.0, -40.0, 0.0], [16.0, 8.0, 9.0]),
            Ellipsoid::new("sella floor", [18.0, -6.0, 0.0], [9.0, 3.0, 8.0]),
            Ellipsoid::new("hard palate", [52.0, -54.0, 0.0], [28.0, 3.0, 20.0]),
            Ellipsoid::new("pineal calcification", [-12.0, 22.0, 0.0], [3.0, 3.0, 3.0]),
            Ellipsoid::new("choroid plexus left", [-28.0, 14.0, -22.0], [4.0, 3.0, 3.0]),
            Ellipsoid::new("choroid plexus right", [-28.0, 14.0, 22.0], [4.0, 3.0, 3.0]),
            Ellipsoid::new("atlas anterior arch", [12.0, -100.0, 0.0], [4.0, 5.0, 8.0]),
            Ellipsoid::new("atlas posterior arch", [-32.0, -100.0, 0.0], [5.0, 4.0, 14.0]),
            Ellipsoid::new("atlas lateral mass left", [-8.0, -100.0, -20.0], [8.0, 6.0, 7.0]),
            Ellipsoid::new("atlas lateral mass right", [-8.0, -100.0, 20.0], [8.0, 6.0, 7.0]),
            Ellipsoid::new("dens", [-2.0, -100.0, 0.0], [4.0, 9.0, 4.0]),
            Ellipsoid::new("axis body", [-2.0, -117.0, 0.0], [9.0, 8.0, 9.0]),
        ];
        spec.sinuses = vec![
            Ellipsoid::new("frontal sinus", [80.0, 42.0, 0.0], [8.0, 12.0, 18.0]),
            Ellipsoid::new("sphenoid sinus", [28.0, -18.0, 0.0], [11.0, 10.0, 13.0]),
            Ellipsoid::new("maxillary sinus left", [72.0, -34.0, -22.0], [13.0, 14.0, 12.0]),
            Ellipsoid::new("maxillary sinus right", [72.0, -34.0, 22.0], [13.0, 14.0, 12.0]),
            Ellipsoid::new("mastoid air cells left", [-30.0, -40.0, -58.0], [9.0, 10.0, 6.0]),
            Ellipsoid::new("mastoid air cells right", [-30.0, -40.0, 58.0], [9.0, 10.0, 6.0]),
        ];
        spec.facial_structures = true;
        spec.facial_bones = vec![
            Ellipsoid::new("nasal ridge", [94.0, -2.0, 0.0], [5.0, 22.0, 5.0]),
            Ellipsoid::new("maxilla", [86.0, -40.0, 0.0], [10.0, 14.0, 34.0]),
            Ellipsoid::new("orbital rim left", [84.0, 20.0, -32.0], [8.0, 16.0, 17.0]),
            Ellipsoid::new("orbital rim right", [84.0, 20.0, 32.0], [8.0, 16.0, 17.0]),
            Ellipsoid::new("zygomatic arch left", [56.0, -12.0, -66.0], [24.0, 5.0, 6.0]),
            Ellipsoid::new("zygomatic arch right", [56.0, -12.0, 66.0], [24.0, 5.0, 6.0]),
            Ellipsoid::new("mandible", [70.0, -88.0, 0.0], [18.0, 9.0, 48.0]),
        ];
        spec.vessel_tree = Some(VesselTreeSpec {
            root_mm: [10.0, -55.0, 6.0],
            direction: [0.15, 1.0, 0.05],
            root_length_mm: 38.0,
            generations: 3,
            root_radius_mm: 2.0,
            tip_radius_mm: 0.7,
            length_ratio: 0.75,
            branch_angle_deg: 32.0,
        });
        spec.seed = 1;
        spec
    }

    pub fn with_facial_structures(mut self, on: bool) -> Self {
        self.facial_structures = on;
        self
    }

    pub fn with_contrast(mut self, on: bool) -> Self {
        self.contrast = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("phantom: {m}")));
        if self.dims.contains(&0) || self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return bad("grid dims and spacing must be positive".into());
        }
        if self.supersample == 0 {
            return bad("supersample must be at least 1".into());
        }
        let m = &self.materials;
        if [m.mu_bone, m.mu_soft, m.mu_contrast, m.mu_air]
            .iter()
            .chain(self.extra.iter().map(|e| &e.mu))
            .any(|&mu| !(mu >= 0.0))
        {
            return bad("attenuation values must be non-negative".into());
        }
        let all_axes = self
            .head_semi_axes_mm
            .iter()
            .chain(self.soft_tissue.iter().map(|e| &e.semi_axes_mm))
            .chain(self.sinuses.iter().map(|e| &e.semi_axes_mm))
            .chain(self.skull_base.iter().map(|e| &e.semi_axes_mm))
            .chain(self.facial_bones.iter().map(|e| &e.semi_axes_mm))
            .chain(self.extra.iter().map(|e| &e.shape.semi_axes_mm));
        for a in all_axes {
            if a.iter().any(|&v| !(v > 0.0)) {
                return bad("ellipsoid semi-axes must be positive".into());
            }
        }
        if let Some(s) = &self.skull {
            if (0..3).any(|i| !(s.outer_semi_axes_mm[i] > s.inner_semi_axes_mm[i] && s.inner_semi_axes_mm[i] > 0.0)) {
                return bad("skull outer semi-axes must exceed the inner ones".into());
            }
        }
        if let Some(t) = &self.vessel_tree {
            if !(t.root_radius_mm >= t.tip_radius_mm && t.tip_radius_mm > 0.0 && t.root_length_mm > 0.0) {
                return bad("vessel radii and length must be positive, root >= tip".into());
            }
            if self.skull.is_none() {
                return bad("a vessel tree needs a skull to live in".into());
            }
        }
        Ok(())
    }

    pub fn grid_box(&self) -> ([f64; 3], [f64; 3]) {
        let o = centered_origin(self.dims, self.spacing_mm);
        let lo = [0, 1, 2].map(|i| o[i] - 0.5 * self.spacing_mm[i]);
        let hi = [0, 1, 2].map(|i| lo[i] + self.dims[i] as f64 * self.spacing_mm[i]);
        (lo, hi)
    }

    /// Vessel segments as (start, end, radius) after fitting inside the skull.
    pub fn vessel_segments(&self) -> Vec<Segment> {
        match (&self.vessel_tree, &self.skull) {
            (Some(t), Some(s)) => grow_tree(t, s, self.seed),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius_mm: f64,
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn inside_ellipsoid(p: [f64; 3], c: [f64; 3], axes: [f64; 3], margin: f64) -> bool {
    (0..3)
        .map(|i| {
            let d = (p[i] - c[i]) / (axes[i] - margin);
            d * d
        })
        .sum::<f64>()
        <= 1.0
}

fn grow_tree(t: &VesselTreeSpec, skull: &SkullSpec, seed: u64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = t.generations + 1;
    let radius_at = |g: usize| {
        if levels == 1 {
            t.root_radius_mm
        } else {
            let f = g as f64 / (levels - 1) as f64;
            t.root_radius_mm * (t.tip_radius_mm / t.root_radius_mm).powf(f)
        }
    };
    let fits = |p: [f64; 3], r: f64| inside_ellipsoid(p, skull.center_mm, skull.inner_semi_axes_mm, r + 1.0);
    let d0 = norm(t.direction);
    let mut frontier = vec![(t.root_mm, t.direction.map(|v| v / d0), t.root_length_mm)];
    let mut out = Vec::new();
    for g in 0..levels {
        let r = radius_at(g);
        let mut next = Vec::new();
        for (start, dir, length) in frontier {
            let mut len = length;
            let mut end = [0.0; 3];
            for _ in 0..12 {
                end = [0, 1, 2].map(|i| start[i] + dir[i] * len);
                if fits(end, r) {
                    break;
                }
                len *= 0.7;
            }
            if !fits(end, r) || !fits(start, r) {
                continue;
            }
            out.push(Segment {
                a: start,
                b: end,
                radius_mm: r,
            });
            if g + 1 < levels {
                // Two children, rotated by ± the branch angle about a random axis
                // perpendicular to the parent.
                let helper = if dir[0].abs() < 0.9 {
                    [1.0, 0.0, 0.0]
                } else {
                    [0.0, 1.0, 0.0]
                };
                let e1 = normalize(cross(dir, helper));
                let e2 = cross(dir, e1);
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let perp = [0, 1, 2].map(|i| e1[i] * phi.cos() + e2[i] * phi.sin());
                let jitter: f64 = rng.random_range(0.8..1.2);
                let a = (t.branch_angle_deg * jitter).to_radians();
                for sign in [1.0, -1.0] {
                    let child = normalize([0, 1, 2].map(|i| dir[i] * a.cos() + sign * perp[i] * a.sin()));
                    next.push((end, child, len * t.length_ratio));
                }
            }
        }
        frontier = next;
    }
    out
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = norm(v);
    v.map(|x| x / n)
}

#[derive(Debug, Clone)]
enum Prim {
    Ellipsoid {
        c: [f64; 3],
        inv_axes: [f64; 3],
        mu: f32,
    },
    Capsule {
        a: [f64; 3],
        ab: [f64; 3],
        ab2: f64,
        r2: f64,
        mu: f32,
    },
}

#[derive(Debug, Clone)]
struct Painted {
    label: String,
    prim: Prim,
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Painted {
    fn ellipsoid(e: &Ellipsoid, mu: f64) -> Self {
        Painted {
            label: e.label.clone(),
            prim: Prim::Ellipsoid {
                c: e.center_mm,
                inv_axes: e.semi_axes_mm.map(|a| 1.0 / a),
                mu: mu as f32,
            },
            lo: [0, 1, 2].map(|i| e.center_mm[i] - e.semi_axes_mm[i]),
            hi: [0, 1, 2].map(|i| e.center_mm[i] + e.semi_axes_mm[i]),
        }
    }

    fn capsule(label: String, s: &Segment, mu: f64) -> Self {
        let ab = [0, 1, 2].map(|i| s.b[i] - s.a[i]);
        Painted {
            label,
            prim: Prim::Capsule {
                a: s.a,
                ab,
                ab2: ab.iter().map(|v| v * v).sum::<f64>().max(1e-12),
                r2: s.radius_mm * s.radius_mm,
                mu: mu as f32,
            },
            lo: [0, 1, 2].map(|i| s.a[i].min(s.b[i]) - s.radius_mm),
            hi: [0, 1, 2].map(|i| s.a[i].max(s.b[i]) + s.radius_mm),
        }
    }

    #[inline]
    fn covers(&self, p: [f64; 3]) -> bool {
        if (0..3).any(|i| p[i] < self.lo[i] || p[i] > self.hi[i]) {
            return false;
        }
        match &self.prim {
            Prim::Ellipsoid { c, inv_axes, .. } => {
                let mut s = 0.0;
                for i in 0..3 {
                    let d = (p[i] - c[i]) * inv_axes[i];
                    s += d * d;
                }
                s <= 1.0
            }
            Prim::Capsule { a, ab, ab2, r2, .. } => {
                let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
                let t = ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / ab2).clamp(0.0, 1.0);
                let mut d2 = 0.0;
                for i in 0..3 {
                    let d = ap[i] - t * ab[i];
                    d2 += d * d;
                }
                d2 <= *r2
            }
        }
    }

    fn mu(&self) -> f32 {
        match self.prim {
            Prim::Ellipsoid { mu, .. } | Prim::Capsule { mu, .. } => mu,
        }
    }
}

fn paint_list(spec: &PhantomSpec) -> Vec<Painted> {
    let m = &spec.materials;
    let mut list = Vec::new();
    if let Some(axes) = spec.head_semi_axes_mm {
        list.push(Painted::ellipsoid(&Ellipsoid::new("head", [0.0; 3], axes), m.mu_soft));
    }
    for e in &spec.soft_tissue {
        list.push(Painted::ellipsoid(e, m.mu_soft));
    }
    if let Some(s) = &spec.skull {
        list.push(Painted::ellipsoid(
            &Ellipsoid::new("skull outer", s.center_mm, s.outer_semi_axes_mm),
            m.mu_bone,
        ));
        list.push(Painted::ellipsoid(
            &Ellipsoid::new("skull inner", s.center_mm, s.inner_semi_axes_mm),
            m.mu_soft,
        ));
        for e in &spec.skull_base {
            list.push(Painted::ellipsoid(e, m.mu_bone));
        }
    }
    if spec.facial_structures {
        for e in &spec.facial_bones {
            list.push(Painted::ellipsoid(e, m.mu_bone));
        }
    }
    for e in &spec.sinuses {
        list.push(Painted::ellipsoid(e, m.mu_air));
    }
    let vessel_mu = if spec.contrast { m.mu_contrast } else { m.mu_soft };
    for (i, s) in spec.vessel_segments().iter().enumerate() {
        list.push(Painted::capsule(format!("vessel segment {i}"), s, vessel_mu));
    }
    for e in &spec.extra {
        list.push(Painted::ellipsoid(&e.shape, e.mu));
    }
    list
}

/// Voxelizes `spec`. The volume's `fov_diameter_cm` is the largest detector
/// format whose iso-plane disc still fits in the axial (x-z) extent.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let list = paint_list(spec);
    let (glo, ghi) = spec.grid_box();
    let tol = 1e-9;
    let offenders: Vec<String> = list
        .iter()
        .filter(|p| (0..3).any(|i| p.lo[i] < glo[i] - tol || p.hi[i] > ghi[i] + tol))
        .map(|p| p.label.clone())
        .collect();
    if !offenders.is_empty() {
        return Err(Error::ShapesExceedGrid(offenders));
    }

    let [nx, ny, nz] = spec.dims;
    let sp = spec.spacing_mm;
    let origin = centered_origin(spec.dims, sp);
    let ss = spec.supersample;
    let sub: Vec<f64> = (0..ss).map(|k| (k as f64 + 0.5) / ss as f64 - 0.5).collect();
    let norm = 1.0 / (ss * ss * ss) as f64;
    let mut data = vec![0.0f32; nx * ny * nz];

    data.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        let zc = origin[2] + z as f64 * sp[2];
        let z_lo = zc - 0.5 * sp[2];
        let z_hi = zc + 0.5 * sp[2];
        let in_slab: Vec<&Painted> = list.iter().filter(|p| p.hi[2] >= z_lo && p.lo[2] <= z_hi).collect();
        if in_slab.is_empty() {
            return;
        }
        let mut row_list: Vec<&Painted> = Vec::with_capacity(in_slab.len());
        let mut active: Vec<&Painted> = Vec::with_capacity(in_slab.len());
        for y in 0..ny {
            let yc = origin[1] + y as f64 * sp[1];
            let (y_lo, y_hi) = (yc - 0.5 * sp[1], yc + 0.5 * sp[1]);
            row_list.clear();
            row_list.extend(in_slab.iter().copied().filter(|p| p.hi[1] >= y_lo && p.lo[1] <= y_hi));
            if row_list.is_empty() {
                continue;
            }
            for x in 0..nx {
                let xc = origin[0] + x as f64 * sp[0];
                let (x_lo, x_hi) = (xc - 0.5 * sp[0], xc + 0.5 * sp[0]);
                active.clear();
                active.extend(row_list.iter().copied().filter(|p| p.hi[0] >= x_lo && p.lo[0] <= x_hi));
                if active.is_empty() {
                    continue;
                }
                let mut acc = 0.0f64;
                for &dz in &sub {
                    for &dy in &sub {
                        for &dx in &sub {
                            let p = [xc + dx * sp[0], yc + dy * sp[1], zc + dz * sp[2]];
                            let mut v = 0.0f32;
                            for prim in &active {
                                if prim.covers(p) {
                                    v = prim.mu();
                                }
                            }
                            acc += v as f64;
                        }
                    }
                }
                slab[x + nx * y] = (acc * norm) as f32;
            }
        }
    });

    let axial = (ghi[0] - glo[0]).min(ghi[2] - glo[2]);
    Volume::new(spec.dims, sp, origin, data, axial * DEFAULT_MAGNIFICATION / 10.0)
}

/// Axial (x-z) diameter in mm of the cylinder kept for detector format `fov_cm`.
pub fn crop_diameter_mm(fov_cm: f64) -> f64 {
    fov_cm * 10.0 / DEFAULT_MAGNIFICATION
}

/// Zeroes voxels outside the cylinder (axis parallel to y through the volume
/// center) whose diameter is the iso-plane size of detector format `fov_cm`.
pub fn crop_to_fov(volume: &Volume, fov_cm: f64) -> Result<Volume> {
    if !(fov_cm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "field of view must be positive, got {fov_cm}"
        )));
    }
    let (lo, hi) = volume.bounding_box();
    let extent = (hi[0] - lo[0]).min(hi[2] - lo[2]);
    let diameter = crop_diameter_mm(fov_cm);
    if diameter > extent * (1.0 + 1e-9) {
        return Err(Error::FovTooLarge {
            fov_cm,
            extent_cm: extent * DEFAULT_MAGNIFICATION / 10.0,
        });
    }
    let cx = 0.5 * (lo[0] + hi[0]);
    let cz = 0.5 * (lo[2] + hi[2]);
    let r2 = 0.25 * diameter * diameter;
    let [nx, ny, _] = volume.dims();
    let o = volume.origin_mm();
    let s = volume.spacing_mm();
    let mut out = volume.clone();
    out.map_data(|i, v| {
        let x = i % nx;
        let z = i / (nx * ny);
        let dx = o[0] + x as f64 * s[0] - cx;
        let dz = o[2] + z as f64 * s[2] - cz;
        if dx * dx + dz * dz <= r2 {
            v
        } else {
            0.0
        }
    });
    out.fov_diameter_cm = fov_cm;
    Ok(out)
}
