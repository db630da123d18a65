//! Camera poses, FOV footprints, the inner/outer scene boxes and their split into
//! closely-paved region boxes.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Ray, Vec3};

/// Pinhole camera, camera-to-world. Camera axes: x right, y down, z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub image_id: u32,
    /// Row-major rotation whose columns are the camera axes in world coordinates.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraPose {
    /// Camera at `eye` looking at `target`. `up` only fixes the roll and must not be
    /// parallel to the viewing direction.
    pub fn look_at(image_id: u32, eye: Vec3, target: Vec3, up: Vec3, width: u32, height: u32, half_fov_deg: f64) -> Result<Self> {
        let f = (target - eye).normalized();
        let r = f.cross(up);
        if r.norm() < 1e-9 {
            return Err(Error::DegenerateCamera {
                image_id,
                reason: "up vector parallel to viewing direction".into(),
            });
        }
        let r = r.normalized();
        let d = f.cross(r);
        let focal = 0.5 * width as f64 / half_fov_deg.to_radians().tan();
        let pose = CameraPose {
            image_id,
            rotation: [[r[0], d[0], f[0]], [r[1], d[1], f[1]], [r[2], d[2], f[2]]],
            translation: eye,
            fx: focal,
            fy: focal,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.rotation;
        let col = |j: usize| Vec3::new(m[0][j], m[1][j], m[2][j]);
        let bad = |reason: String| Error::DegenerateCamera {
            image_id: self.image_id,
            reason,
        };
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (col(i).dot(col(j)) - want).abs() > 1e-6 {
                    return Err(bad("rotation is not orthonormal".into()));
                }
            }
        }
        let det = col(0).dot(col(1).cross(col(2)));
        if (det - 1.0).abs() > 1e-6 {
            return Err(bad(format!("rotation determinant {det}")));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(bad("intrinsics must be positive".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let m = &self.rotation;
        Vec3::new(
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        )
    }

    /// Unit world direction through image coordinates `(u, v)` (pixel corners at integers).
    pub fn direction(&self, u: f64, v: f64) -> Vec3 {
        self.rotate(Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0))
            .normalized()
    }

    /// Image coordinates of a world point in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let d = p - self.translation;
        let m = &self.rotation;
        let cam = [0, 1, 2].map(|j| m[0][j] * d[0] + m[1][j] * d[1] + m[2][j] * d[2]);
        (cam[2] > 0.0).then(|| (self.cx + self.fx * cam[0] / cam[2], self.cy + self.fy * cam[1] / cam[2]))
    }

    /// Whether a world point projects inside the image.
    pub fn sees(&self, p: Vec3) -> bool {
        self.project(p)
            .is_some_and(|(u, v)| (0.0..=self.width as f64).contains(&u) && (0.0..=self.height as f64).contains(&v))
    }

    /// Ray through the center of pixel `index` (row-major).
    pub fn pixel_ray(&self, index: u32) -> Ray {
        let x = index % self.width;
        let y = index / self.width;
        Ray {
            origin: self.translation,
            dir: self.direction(x as f64 + 0.5, y as f64 + 0.5),
            pixel: index,
            image: self.image_id,
        }
    }

    pub fn pixel_count(&self) -> u32 {
        self.width * self.height
    }
}

/// Intersection of the four image-corner rays with the plane `z = ground`, counter-clockwise
/// seen from above.
pub fn project_fov_footprint(pose: &CameraPose, ground: f64) -> Result<[Vec3; 4]> {
    let (w, h) = (pose.width as f64, pose.height as f64);
    let o = pose.center();
    let degenerate = |reason: &str| Error::DegenerateCamera {
        image_id: pose.image_id,
        reason: reason.into(),
    };
    if o[2] == ground {
        return Err(degenerate("camera lies on the ground plane"));
    }
    let mut pts = [Vec3::ZERO; 4];
    for (k, (u, v)) in [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)].into_iter().enumerate() {
        let d = pose.direction(u, v);
        if d[2] == 0.0 {
            return Err(degenerate("corner ray parallel to the ground plane"));
        }
        let t = (ground - o[2]) / d[2];
        if !(t > 0.0) {
            return Err(degenerate("corner ray points away from the ground plane"));
        }
        pts[k] = o + d * t;
        pts[k][2] = ground;
    }
    if signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    Ok(pts)
}

fn signed_area(p: &[Vec3; 4]) -> f64 {
    (0..4)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % 4]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

/// Fraction of the outer extent below which an inner-box axis is widened.
pub const MIN_INNER_FRACTION: f64 = 0.01;

/// Outer box: footprints plus camera centers, widened vertically by `altitude_margin`.
/// Inner box: camera x/y range over the same altitude range, clamped into the outer box.
pub fn compute_boxes(poses: &[CameraPose], ground: f64, altitude_margin: f64) -> Result<(Aabb, Aabb)> {
    let mut outer: Option<Aabb> = None;
    let mut cams: Option<Aabb> = None;
    for pose in poses {
        let foot = match project_fov_footprint(pose, ground) {
            Ok(f) => f,
            Err(e) => {
                warn!("skipping camera {} for box estimation: {e}", pose.image_id);
                continue;
            }
        };
        let c = pose.center();
        let mut b = Aabb::new(c, c);
        for p in foot {
            b = b.union(&Aabb::new(p, p));
        }
        outer = Some(outer.map_or(b, |o| o.union(&b)));
        cams = Some(cams.map_or(Aabb::new(c, c), |a| a.union(&Aabb::new(c, c))));
    }
    let (Some(mut outer), Some(cams)) = (outer, cams) else {
        return Err(Error::config("no camera with a usable ground footprint"));
    };
    outer.min[2] -= altitude_margin;
    outer.max[2] += altitude_margin;
    let mut inner = Aabb::new(
        Vec3::new(cams.min[0], cams.min[1], outer.min[2]),
        Vec3::new(cams.max[0], cams.max[1], outer.max[2]),
    );
    let ext = outer.extent();
    for a in 0..2 {
        let min_len = MIN_INNER_FRACTION * ext[a];
        if inner.max[a] - inner.min[a] < min_len {
            let mid = 0.5 * (inner.min[a] + inner.max[a]);
            inner.min[a] = mid - 0.5 * min_len;
            inner.max[a] = mid + 0.5 * min_len;
        }
        inner.min[a] = inner.min[a].max(outer.min[a]);
        inner.max[a] = inner.max[a].min(outer.max[a]);
    }
    Ok((inner, outer))
}

/// One region: a fine box tiling the inner box and a coarse box tiling the outer box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub id: u16,
    pub fine: Aabb,
    pub coarse: Aabb,
    pub neighbors: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub k: usize,
    pub grid: [usize; 2],
    pub ground_altitude: f64,
    pub inner: Aabb,
    pub outer: Aabb,
    pub regions: Vec<RegionBox>,
}

/// Cut points `lo = c_0 < ... < c_n = hi` at equal spacing.
fn cuts(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / n as f64
            }
        })
        .collect()
}

/// Equal-width `kx x ky` split of the inner box; the outer box is cut at the same planes,
/// and edge regions' coarse boxes reach the outer faces. Region id is `j * kx + i`.
pub fn split_regions(inner: &Aabb, outer: &Aabb, grid: (usize, usize), ground_altitude: f64) -> Result<PartitionManifest> {
    let (kx, ky) = grid;
    if kx == 0 || ky == 0 {
        return Err(Error::config("partition grid needs kx, ky >= 1"));
    }
    let xs = cuts(inner.min[0], inner.max[0], kx);
    let ys = cuts(inner.min[1], inner.max[1], ky);
    let mut regions = Vec::with_capacity(kx * ky);
    for j in 0..ky {
        for i in 0..kx {
            let fine = Aabb::new(Vec3::new(xs[i], ys[j], inner.min[2]), Vec3::new(xs[i + 1], ys[j + 1], inner.max[2]));
            let cx0 = if i == 0 { outer.min[0] } else { xs[i] };
            let cx1 = if i + 1 == kx { outer.max[0] } else { xs[i + 1] };
            let cy0 = if j == 0 { outer.min[1] } else { ys[j] };
            let cy1 = if j + 1 == ky { outer.max[1] } else { ys[j + 1] };
            let coarse = Aabb::new(Vec3::new(cx0, cy0, outer.min[2]), Vec3::new(cx1, cy1, outer.max[2]));
            let mut neighbors = Vec::new();
            if j > 0 {
                neighbors.push(((j - 1) * kx + i) as u16);
            }
            if i > 0 {
                neighbors.push((j * kx + i - 1) as u16);
            }
            if i + 1 < kx {
                neighbors.push((j * kx + i + 1) as u16);
            }
            if j + 1 < ky {
                neighbors.push(((j + 1) * kx + i) as u16);
            }
            regions.push(RegionBox {
                id: (j * kx + i) as u16,
                fine,
                coarse,
                neighbors,
            });
        }
    }
    let m = PartitionManifest {
        k: kx * ky,
        grid: [kx, ky],
        ground_altitude,
        inner: *inner,
        outer: *outer,
        regions,
    };
    m.verify()?;
    Ok(m)
}

impl PartitionManifest {
    pub fn coarse_boxes(&self) -> Vec<Aabb> {
        self.regions.iter().map(|r| r.coarse).collect()
    }

    pub fn fine_boxes(&self) -> Vec<Aabb> {
        self.regions.iter().map(|r| r.fine).collect()
    }

    /// Structural checks: ids, containment, pairwise disjoint interiors and exact tiling
    /// (volumes) of the inner and outer boxes.
    pub fn verify(&self) -> Result<()> {
        if self.regions.len() != self.k || self.k == 0 || self.grid[0] * self.grid[1] != self.k {
            return Err(Error::config("manifest region count does not match k"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if r.id as usize != i {
                return Err(Error::config(format!("region at position {i} has id {}", r.id)));
            }
            if !r.fine.has_positive_extent() || !r.coarse.contains_box(&r.fine) || !self.outer.contains_box(&r.coarse) {
                return Err(Error::config(format!("region {i} boxes are not nested")));
            }
            if r.fine.min[2] != self.inner.min[2] || r.fine.max[2] != self.inner.max[2] {
                return Err(Error::config(format!("region {i} altitude range differs")));
            }
        }
        if !self.outer.contains_box(&self.inner) {
            return Err(Error::config("inner box is not inside the outer box"));
        }
        for (boxes, total, what) in [(self.fine_boxes(), self.inner, "fine"), (self.coarse_boxes(), self.outer, "coarse")] {
            for a in 0..boxes.len() {
                for b in a + 1..boxes.len() {
                    if boxes[a].interiors_overlap(&boxes[b]) {
                        return Err(Error::config(format!("{what} boxes {a} and {b} overlap")));
                    }
                }
            }
            let vol: f64 = boxes.iter().map(|b| b.volume()).sum();
            if (vol - total.volume()).abs() > 1e-9 * total.volume() {
                return Err(Error::config(format!("{what} boxes do not tile their container")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("manifest serialization: {e}")))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let m: PartitionManifest = toml::from_str(s).map_err(|e| Error::config(format!("manifest: {e}")))?;
        m.verify()?;
        Ok(m)
    }

    /// sha256 of the canonical text form, lowercase hex.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// One pose per line: image id, the 3x4 camera-to-world matrix row-major, fx fy cx cy w h.
pub fn format_poses(poses: &[CameraPose]) -> String {
    let mut out = String::new();
    for p in poses {
        let _ = write!(out, "{}", p.image_id);
        for row in 0..3 {
            for col in 0..3 {
                let _ = write!(out, " {:.16e}", p.rotation[row][col]);
            }
            let _ = write!(out, " {:.16e}", p.translation[row]);
        }
        let _ = writeln!(out, " {:.16e} {:.16e} {:.16e} {:.16e} {} {}", p.fx, p.fy, p.cx, p.cy, p.width, p.height);
    }
    out
}

pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<CameraPose>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 19 {
            return Err(err(format!("expected 19 fields (id, 12 matrix entries, fx fy cx cy w h), found {}", tok.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("bad number {s:?}: {e}")));
        let int = |s: &str| s.parse::<u32>().map_err(|e| err(format!("bad integer {s:?}: {e}")));
        let image_id = int(tok[0])?;
        let mut rotation = [[0.0; 3]; 3];
        let mut translation = Vec3::ZERO;
        for row in 0..3 {
            for col in 0..3 {
                rotation[row][col] = num(tok[1 + row * 4 + col])?;
            }
            translation[row] = num(tok[1 + row * 4 + 3])?;
        }
        let pose = CameraPose {
            image_id,
            rotation,
            translation,
            fx: num(tok[13])?,
            fy: num(tok[14])?,
            cx: num(tok[15])?,
            cy: num(tok[16])?,
            width: int(tok[17])?,
            height: int(tok[18])?,
        };
        pose.validate().map_err(|e| err(e.to_string()))?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn write_poses(path: &Path, poses: &[CameraPose]) -> Result<()> {
    std::fs::write(path, format_poses(poses))?;
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<Vec<CameraPose>> {
    parse_poses(&std::fs::read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nadir(x: f64, y: f64, h: f64, half_fov: f64) -> CameraPose {
        CameraPose::look_at(0, Vec3::new(x, y, h), Vec3::new(x, y, 0.0), Vec3::new(0.0, 1.0, 0.0), 100, 100, half_fov).unwrap()
    }

    #[test]
    fn projection_inverts_pixel_rays() {
        let cam = CameraPose::look_at(0, Vec3::new(1.0, -2.0, 1.5), Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), 40, 30, 30.0).unwrap();
        for index in [0, 17, 611, 1199] {
            let ray = cam.pixel_ray(index);
            let (u, v) = cam.project(ray.at(2.5)).unwrap();
            assert!((u - (index % 40) as f64 - 0.5).abs() < 1e-9 && (v - (index / 40) as f64 - 0.5).abs() < 1e-9);
            assert!(cam.sees(ray.at(0.1)));
            assert!(!cam.sees(ray.origin - ray.dir));
        }
        assert!(!cam.sees(Vec3::new(1.0, -2.0, 10.0)));
    }

    #[test]
    fn nadir_footprint_is_square() {
        let foot = project_fov_footprint(&nadir(0.3, -0.2, 2.0, 45.0), 0.0).unwrap();
        let xs: Vec<f64> = foot.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = foot.iter().map(|p| p[1]).collect();
        let span = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        assert!((span(&xs) - 4.0).abs() < 1e-12);
        assert!((span(&ys) - 4.0).abs() < 1e-12);
        let cx: f64 = xs.iter().sum::<f64>() / 4.0;
        assert!((cx - 0.3).abs() < 1e-12);
        assert!(signed_area(&foot) > 0.0);
    }

    #[test]
    fn camera_on_plane_is_rejected() {
        let mut cam = nadir(0.0, 0.0, 1.0, 30.0);
        cam.translation[2] = 0.0;
        assert!(matches!(project_fov_footprint(&cam, 0.0), Err(Error::DegenerateCamera { .. })));
    }

    #[test]
    fn horizon_camera_is_rejected() {
        let cam = CameraPose::look_at(3, Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.0), 10, 10, 30.0).unwrap();
        assert!(project_fov_footprint(&cam, 0.0).is_err());
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let mut cam = nadir(0.0, 0.0, 1.0, 30.0);
        cam.rotation[0][0] = 1.1;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn single_camera_inner_box_gets_minimum_extent() {
        let (inner, outer) = compute_boxes(&[nadir(0.0, 0.0, 1.0, 45.0)], 0.0, 0.1).unwrap();
        assert!((inner.extent()[0] - 0.01 * outer.extent()[0]).abs() < 1e-12);
        assert!(outer.contains_box(&inner));
        assert_eq!(inner.min[2], -0.1);
        assert_eq!(inner.max[2], 1.1);
    }

    #[test]
    fn two_cameras_span_inner_box() {
        let (inner, _) = compute_boxes(&[nadir(-1.0, -2.0, 1.0, 30.0), nadir(1.0, 2.0, 1.0, 30.0)], 0.0, 0.0).unwrap();
        assert_eq!((inner.min[0], inner.max[0], inner.min[1], inner.max[1]), (-1.0, 1.0, -2.0, 2.0));
    }

    #[test]
    fn no_usable_camera_is_an_error() {
        let cam = CameraPose::look_at(0, Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 1.0, 0.0), 10, 10, 30.0).unwrap();
        assert!(compute_boxes(&[cam], 0.0, 0.0).is_err());
        assert!(compute_boxes(&[], 0.0, 0.0).is_err());
    }

    fn boxes() -> (Aabb, Aabb) {
        (
            Aabb::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 1.0)),
            Aabb::new(Vec3::new(-3.0, -2.0, 0.0), Vec3::new(3.0, 2.0, 1.0)),
        )
    }

    #[test]
    fn one_by_one_split() {
        let (inner, outer) = boxes();
        let m = split_regions(&inner, &outer, (1, 1), 0.0).unwrap();
        assert_eq!(m.regions[0].fine, inner);
        assert_eq!(m.regions[0].coarse, outer);
    }

    #[test]
    fn two_by_one_split_shares_plane() {
        let (inner, outer) = boxes();
        let m = split_regions(&inner, &outer, (2, 1), 0.0).unwrap();
        assert_eq!(m.regions[0].fine.max[0].to_bits(), m.regions[1].fine.min[0].to_bits());
        assert_eq!(m.regions[0].coarse.max[0].to_bits(), m.regions[1].fine.min[0].to_bits());
        assert_eq!(m.regions[0].fine.max[0], 0.0);
        assert_eq!(m.regions[0].coarse.min[0], -3.0);
    }

    #[test]
    fn two_by_two_neighbors() {
        let (inner, outer) = boxes();
        let m = split_regions(&inner, &outer, (2, 2), 0.0).unwrap();
        assert_eq!(m.k, 4);
        for r in &m.regions {
            assert_eq!(r.neighbors.len(), 2);
        }
        let back = PartitionManifest::from_toml(&m.to_toml().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash().unwrap(), m.hash().unwrap());
    }

    #[test]
    fn pose_round_trip_and_bad_line() {
        let cams = vec![nadir(0.1, 0.2, 1.3, 30.0)];
        let text = format_poses(&cams);
        let back = parse_poses(&text, Path::new("p.txt")).unwrap();
        assert_eq!(back, cams);
        let short: Vec<&str> = text.split_whitespace().take(12).collect();
        match parse_poses(&format!("\n{}\n", short.join(" ")), Path::new("p.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
