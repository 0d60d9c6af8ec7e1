//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use texforge::mesh::Mesh;
use texforge::render::Viewpoint;
use texforge::TextureAtlas;
use texforge::Vec3;

/// Dense cotangent stiffness and lumped mass built straight from the geometry.
pub fn dense_laplacian(mesh: &Mesh) -> (DMatrix<f64>, DVector<f64>) {
    let n = mesh.vertices().len();
    let mut l = DMatrix::zeros(n, n);
    let mut m = DVector::zeros(n);
    for (fi, f) in mesh.faces().iter().enumerate() {
        let p = mesh.face_positions(fi);
        for k in 0..3 {
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            let (a, b) = (p[i] - p[k], p[j] - p[k]);
            let cot = a.dot(&b) / a.cross(&b).norm();
            let (vi, vj) = (f[i] as usize, f[j] as usize);
            l[(vi, vj)] -= cot / 2.0;
            l[(vj, vi)] -= cot / 2.0;
            l[(vi, vi)] += cot / 2.0;
            l[(vj, vj)] += cot / 2.0;
        }
        let area = (p[1] - p[0]).cross(&(p[2] - p[0])).norm() / 2.0;
        for &v in f {
            m[v as usize] += area / 3.0;
        }
    }
    (l, m)
}

/// All generalized eigenpairs of `L φ = λ M φ`, ascending, via the symmetric
/// reduction `M^-1/2 L M^-1/2`.
pub fn dense_eigenpairs(l: &DMatrix<f64>, m: &DVector<f64>) -> Vec<(f64, DVector<f64>)> {
    let inv_sqrt = m.map(|x| 1.0 / x.sqrt());
    let a = DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| l[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = SymmetricEigen::new(a);
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..l.nrows())
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).component_mul(&inv_sqrt)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// The face whose UV triangle strictly contains a texel center, with the
/// surface point under it.
#[derive(Debug, Clone, Copy)]
pub struct Owner {
    pub face: usize,
    pub point: Vec3,
}

pub fn interior_owners(mesh: &Mesh, n: usize) -> Vec<Option<Owner>> {
    let uvs = mesh.uvs().expect("charted mesh");
    let mut out = vec![None; n * n];
    for (fi, tri) in uvs.iter().enumerate() {
        let t = tri.map(|uv| [uv[0] * n as f64, (1.0 - uv[1]) * n as f64]);
        let cross = |a: [f64; 2], b: [f64; 2], p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let area = cross(t[0], t[1], t[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let lo = |k: usize| t.iter().map(|v| v[k]).fold(f64::MAX, f64::min).floor().max(0.0) as usize;
        let hi = |k: usize| (t.iter().map(|v| v[k]).fold(f64::MIN, f64::max).ceil() as usize).min(n - 1);
        let pos = mesh.face_positions(fi);
        for y in lo(1)..=hi(1) {
            for x in lo(0)..=hi(0) {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let b = [
                    cross(t[1], t[2], p) / area,
                    cross(t[2], t[0], p) / area,
                    cross(t[0], t[1], p) / area,
                ];
                if b.iter().all(|&v| v > 1e-9) {
                    out[y * n + x] = Some(Owner {
                        face: fi,
                        point: pos[0] * b[0] + pos[1] * b[1] + pos[2] * b[2],
                    });
                }
            }
        }
    }
    out
}

/// Pinhole projection written out from the camera definition: eye on the
/// sphere of the given radius, +y up, y down in pixel units.
pub struct Pinhole {
    pub eye: Vec3,
    pub back: Vec3,
    right: Vec3,
    up: Vec3,
    focal: f64,
    size: f64,
}

impl Pinhole {
    pub fn new(v: &Viewpoint) -> Self {
        let (az, el) = (v.azimuth.to_radians(), v.elevation.to_radians());
        let back = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
        assert!(el.cos().abs() > 1e-6, "pole views need a different up vector");
        let right = Vec3::y().cross(&back).normalize();
        let up = back.cross(&right);
        Self {
            eye: back * v.radius,
            back,
            right,
            up,
            focal: 1.0 / (v.fov.to_radians() / 2.0).tan(),
            size: v.resolution as f64,
        }
    }

    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        let d = p - self.eye;
        let z = -d.dot(&self.back);
        let x = d.dot(&self.right) * self.focal / z;
        let y = d.dot(&self.up) * self.focal / z;
        ((x + 1.0) * self.size / 2.0, (1.0 - y) * self.size / 2.0)
    }

    /// Unit direction of the ray through a screen position.
    pub fn ray(&self, x: f64, y: f64) -> Vec3 {
        let sx = (2.0 * x / self.size - 1.0) / self.focal;
        let sy = (1.0 - 2.0 * y / self.size) / self.focal;
        (self.right * sx + self.up * sy - self.back).normalize()
    }

    /// Front-facing test of a face of a convex mesh, and its normal z.
    pub fn facing(&self, mesh: &Mesh, face: usize) -> Option<f64> {
        let p = mesh.face_positions(face);
        let nrm = (p[1] - p[0]).cross(&(p[2] - p[0])).normalize();
        let nz = nrm.dot(&self.back);
        (nz > 0.0 && (self.eye - p[0]).dot(&nrm) > 0.0).then_some(nz)
    }

    pub fn pixel(&self, p: &Vec3) -> Option<(usize, usize)> {
        let (x, y) = self.project(p);
        let n = self.size;
        (x >= 0.0 && y >= 0.0 && x < n && y < n).then(|| (x as usize, y as usize))
    }
}

/// Foreground pixels whose whole `(2r+1)²` neighborhood is foreground.
pub fn interior_pixels(fg: &[bool], n: usize, r: usize) -> Vec<bool> {
    let mut out = vec![false; n * n];
    for y in r..n.saturating_sub(r) {
        for x in r..n - r {
            out[y * n + x] = (y - r..=y + r).all(|yy| (x - r..=x + r).all(|xx| fg[yy * n + xx]));
        }
    }
    out
}

/// A bumpy, non-convex sphere.
pub fn bumpy_sphere() -> Mesh {
    let base = texforge::mesh::shapes::icosphere(3);
    let verts = base
        .vertices()
        .iter()
        .map(|v| v * (1.0 + 0.18 * (3.0 * v.x).sin() * (3.0 * v.y).sin() * (2.0 * v.z).cos()))
        .collect();
    base.with_vertices(verts).normalized()
}

/// Atlas holding `f` of the surface point under each texel, so the texture is
/// continuous across chart seams. Texels outside every triangle take the
/// extrapolated point of the nearest one.
pub fn surface_atlas(mesh: &Mesh, n: usize, f: impl Fn(&Vec3) -> [f32; 3]) -> TextureAtlas {
    let uvs = mesh.uvs().expect("charted mesh");
    let mut best = vec![(f64::MIN, Vec3::zeros()); n * n];
    for (fi, tri) in uvs.iter().enumerate() {
        let t = tri.map(|uv| [uv[0] * n as f64, (1.0 - uv[1]) * n as f64]);
        let cross = |a: [f64; 2], b: [f64; 2], p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let area = cross(t[0], t[1], t[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let lo = |k: usize| (t.iter().map(|v| v[k]).fold(f64::MAX, f64::min).floor() - 3.0).max(0.0) as usize;
        let hi = |k: usize| ((t.iter().map(|v| v[k]).fold(f64::MIN, f64::max).ceil() + 3.0) as usize).min(n - 1);
        let pos = mesh.face_positions(fi);
        for y in lo(1)..=hi(1) {
            for x in lo(0)..=hi(0) {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let b = [
                    cross(t[1], t[2], p) / area,
                    cross(t[2], t[0], p) / area,
                    cross(t[0], t[1], p) / area,
                ];
                let score = b.iter().copied().fold(f64::MAX, f64::min);
                let cell = &mut best[y * n + x];
                if score > cell.0 {
                    *cell = (score, pos[0] * b[0] + pos[1] * b[1] + pos[2] * b[2]);
                }
            }
        }
    }
    let mut atlas = TextureAtlas::new(n, [0.0; 3]);
    for (texel, (score, p)) in atlas.pixels_mut().iter_mut().zip(&best) {
        if *score > f64::MIN {
            *texel = f(p);
        }
    }
    atlas
}
