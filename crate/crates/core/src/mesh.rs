//! Indexed triangle meshes: OBJ loading, normalization, vertex normals and a
//! fallback per-triangle UV layout.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::Vec3;

/// Bounding-sphere radius every mesh is scaled to on load.
pub const NORMALIZED_RADIUS: f64 = 0.6;

/// Texels left empty around each chart cell produced by [`naive_uv_chart`].
pub const CHART_GUTTER: usize = 2;

/// Smallest usable chart interior, in texels.
pub const MIN_CHART_CELL: usize = 4;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("face on line {line} has {corners} corners and triangulation is disabled")]
    NonTriangulated { line: usize, corners: usize },
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("uv coordinate {value} outside [0, 1] on face {face}")]
    UvOutOfRange { face: usize, value: f64 },
    #[error("mesh already has uv coordinates")]
    AlreadyHasUvs,
    #[error("{faces} faces do not fit a {resolution}px atlas (cell interior {cell}px < {min}px)")]
    TooManyFaces {
        faces: usize,
        resolution: usize,
        cell: usize,
        min: usize,
    },
}

/// An indexed triangle mesh with per-vertex normals and optional per-corner UVs.
///
/// Instances are only produced through validating constructors, so the face
/// indices are always in range and normals are unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
    uvs: Option<Vec<[[f64; 2]; 3]>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Fan-triangulate quads. Polygons with more than four corners are always rejected.
    pub triangulate_quads: bool,
    /// Center and rescale to [`NORMALIZED_RADIUS`].
    pub normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            triangulate_quads: true,
            normalize: true,
        }
    }
}

/// Result of [`load_mesh`]; `missing_uv` is the warning flag raised when the
/// file carried no texture coordinates and fallback charting will be needed.
#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: Mesh,
    pub missing_uv: bool,
}

impl Mesh {
    /// Builds a mesh, computing area-weighted vertex normals.
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        uvs: Option<Vec<[[f64; 2]; 3]>>,
    ) -> Result<Self, MeshError> {
        validate_faces(&faces, vertices.len())?;
        if let Some(uvs) = &uvs {
            validate_uvs(uvs, faces.len())?;
        }
        let normals = area_weighted_normals(&vertices, &faces);
        Ok(Self {
            vertices,
            faces,
            normals,
            uvs,
        })
    }

    /// Builds a mesh with caller-provided normals; zero-length entries are
    /// replaced by the area-weighted estimate.
    pub fn with_normals(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        normals: Vec<Vec3>,
        uvs: Option<Vec<[[f64; 2]; 3]>>,
    ) -> Result<Self, MeshError> {
        let mut mesh = Self::new(vertices, faces, uvs)?;
        if normals.len() == mesh.vertices.len() {
            for (dst, n) in mesh.normals.iter_mut().zip(normals) {
                let len = n.norm();
                if len > 1e-12 {
                    *dst = n / len;
                }
            }
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn uvs(&self) -> Option<&[[[f64; 2]; 3]]> {
        self.uvs.as_deref()
    }

    pub fn has_uvs(&self) -> bool {
        self.uvs.is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_positions(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized geometric normal (cross product of the two edges).
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.face_positions(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        let n = self.face_cross(face);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Center of the axis-aligned bounding box and the largest vertex distance from it.
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        if self.vertices.is_empty() {
            return (Vec3::zeros(), 0.0);
        }
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let center = (lo + hi) * 0.5;
        let radius = self
            .vertices
            .iter()
            .map(|v| (v - center).norm())
            .fold(0.0, f64::max);
        (center, radius)
    }

    /// Centers the bounding box on the origin and scales the bounding sphere
    /// to [`NORMALIZED_RADIUS`]. Normals and UVs are unaffected.
    pub fn normalized(&self) -> Self {
        let (center, radius) = self.bounding_sphere();
        let scale = if radius > 0.0 {
            NORMALIZED_RADIUS / radius
        } else {
            1.0
        };
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = (*v - center) * scale;
        }
        out
    }

    /// Replaces vertex positions, recomputing normals. UVs and topology are kept.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        assert_eq!(vertices.len(), self.vertices.len());
        let normals = area_weighted_normals(&vertices, &self.faces);
        Self {
            vertices,
            faces: self.faces.clone(),
            normals,
            uvs: self.uvs.clone(),
        }
    }

    pub fn with_uvs(&self, uvs: Vec<[[f64; 2]; 3]>) -> Result<Self, MeshError> {
        validate_uvs(&uvs, self.faces.len())?;
        let mut out = self.clone();
        out.uvs = Some(uvs);
        Ok(out)
    }

    /// Serializes to the OBJ subset accepted by [`parse_obj`].
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for n in &self.normals {
            let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
        }
        match &self.uvs {
            Some(uvs) => {
                for corners in uvs {
                    for uv in corners {
                        let _ = writeln!(s, "vt {} {}", uv[0], uv[1]);
                    }
                }
                for (i, f) in self.faces.iter().enumerate() {
                    let t = 3 * i + 1;
                    let _ = writeln!(
                        s,
                        "f {}/{}/{} {}/{}/{} {}/{}/{}",
                        f[0] + 1,
                        t,
                        f[0] + 1,
                        f[1] + 1,
                        t + 1,
                        f[1] + 1,
                        f[2] + 1,
                        t + 2,
                        f[2] + 1
                    );
                }
            }
            None => {
                for f in &self.faces {
                    let _ = writeln!(
                        s,
                        "f {}//{} {}//{} {}//{}",
                        f[0] + 1,
                        f[0] + 1,
                        f[1] + 1,
                        f[1] + 1,
                        f[2] + 1,
                        f[2] + 1
                    );
                }
            }
        }
        s
    }
}

fn validate_faces(faces: &[[u32; 3]], count: usize) -> Result<(), MeshError> {
    for (i, f) in faces.iter().enumerate() {
        for &idx in f {
            if idx as usize >= count {
                return Err(MeshError::IndexOutOfRange {
                    face: i,
                    index: idx as usize,
                    count,
                });
            }
        }
    }
    Ok(())
}

fn validate_uvs(uvs: &[[[f64; 2]; 3]], faces: usize) -> Result<(), MeshError> {
    assert_eq!(uvs.len(), faces, "one uv triple per face");
    for (i, corners) in uvs.iter().enumerate() {
        for uv in corners {
            for &c in uv {
                if !(0.0..=1.0).contains(&c) {
                    return Err(MeshError::UvOutOfRange { face: i, value: c });
                }
            }
        }
    }
    Ok(())
}

/// Sums face cross products (whose length is twice the area) onto vertices.
pub fn area_weighted_normals(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        let n = (b - a).cross(&(c - a));
        for &i in f {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                // isolated vertex; any unit vector keeps the invariant
                Vec3::z()
            }
        })
        .collect()
}

/// Reads and parses an OBJ file.
pub fn load_mesh(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LoadedMesh, MeshError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_obj(&text, opts)
}

/// Parses the `v` / `vn` / `vt` / `f` subset of Wavefront OBJ. Other records
/// (groups, materials, smoothing) are ignored.
pub fn parse_obj(text: &str, opts: &LoadOptions) -> Result<LoadedMesh, MeshError> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut file_normals: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    // (position, texcoord, normal) per corner
    let mut tris: Vec<[(usize, Option<usize>, Option<usize>); 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        let tag = parts.next().unwrap_or("");
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => positions.push(parse_vec3(&rest, line)?),
            "vn" => file_normals.push(parse_vec3(&rest, line)?),
            "vt" => {
                if rest.is_empty() {
                    return Err(parse_err(line, "vt needs at least one coordinate"));
                }
                let u = parse_f64(rest[0], line)?;
                let v = match rest.get(1) {
                    Some(s) => parse_f64(s, line)?,
                    None => 0.0,
                };
                texcoords.push([u, v]);
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(parse_err(line, "face needs at least 3 corners"));
                }
                if rest.len() > 4 || (rest.len() == 4 && !opts.triangulate_quads) {
                    return Err(MeshError::NonTriangulated {
                        line,
                        corners: rest.len(),
                    });
                }
                let corners = rest
                    .iter()
                    .map(|c| {
                        parse_corner(
                            c,
                            line,
                            positions.len(),
                            texcoords.len(),
                            file_normals.len(),
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                for k in 1..corners.len() - 1 {
                    tris.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }

    let faces: Vec<[u32; 3]> = tris
        .iter()
        .map(|t| [t[0].0 as u32, t[1].0 as u32, t[2].0 as u32])
        .collect();

    let all_uv = !tris.is_empty() && tris.iter().all(|t| t.iter().all(|c| c.1.is_some()));
    let uvs = all_uv.then(|| {
        tris.iter()
            .map(|t| t.map(|c| texcoords[c.1.unwrap()]))
            .collect::<Vec<_>>()
    });

    let all_normals = !tris.is_empty() && tris.iter().all(|t| t.iter().all(|c| c.2.is_some()));
    let mesh = if all_normals {
        let mut acc = vec![Vec3::zeros(); positions.len()];
        for t in &tris {
            for c in t {
                acc[c.0] += file_normals[c.2.unwrap()];
            }
        }
        Mesh::with_normals(positions, faces, acc, uvs)?
    } else {
        Mesh::new(positions, faces, uvs)?
    };
    let mesh = if opts.normalize {
        mesh.normalized()
    } else {
        mesh
    };
    let missing_uv = !mesh.has_uvs();
    if missing_uv {
        log::warn!("mesh has no uv coordinates; fallback charting will be used");
    }
    Ok(LoadedMesh { mesh, missing_uv })
}

fn parse_err(line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64, MeshError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, format!("invalid number `{s}`")))
}

fn parse_vec3(rest: &[&str], line: usize) -> Result<Vec3, MeshError> {
    if rest.len() < 3 {
        return Err(parse_err(line, "expected three coordinates"));
    }
    Ok(Vec3::new(
        parse_f64(rest[0], line)?,
        parse_f64(rest[1], line)?,
        parse_f64(rest[2], line)?,
    ))
}

fn resolve_index(s: &str, len: usize, line: usize) -> Result<usize, MeshError> {
    let i: i64 = s
        .parse()
        .map_err(|_| parse_err(line, format!("invalid index `{s}`")))?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        len as i64 + i
    } else {
        return Err(parse_err(line, "index 0 is not valid in OBJ"));
    };
    if resolved < 0 || resolved as usize >= len {
        return Err(parse_err(line, format!("index {i} out of range ({len} entries)")));
    }
    Ok(resolved as usize)
}

fn parse_corner(
    s: &str,
    line: usize,
    npos: usize,
    ntex: usize,
    nnorm: usize,
) -> Result<(usize, Option<usize>, Option<usize>), MeshError> {
    let mut it = s.split('/');
    let p = resolve_index(it.next().unwrap_or(""), npos, line)?;
    let t = match it.next() {
        Some("") | None => None,
        Some(t) => Some(resolve_index(t, ntex, line)?),
    };
    let n = match it.next() {
        Some("") | None => None,
        Some(n) => Some(resolve_index(n, nnorm, line)?),
    };
    Ok((p, t, n))
}

/// Gives every triangle its own square cell in a uniform grid over an atlas of
/// `resolution` texels per side. Triangles are laid out isometrically with a
/// single global scale, so chart area is proportional to 3D area; cells are
/// separated by [`CHART_GUTTER`] texels on each side.
pub fn naive_uv_chart(mesh: &Mesh, resolution: usize) -> Result<Mesh, MeshError> {
    if mesh.has_uvs() {
        return Err(MeshError::AlreadyHasUvs);
    }
    let nfaces = mesh.faces().len();
    if nfaces == 0 {
        return mesh.with_uvs(Vec::new());
    }
    let grid = (nfaces as f64).sqrt().ceil() as usize;
    let pitch = resolution / grid;
    let cell = pitch.saturating_sub(2 * CHART_GUTTER);
    if cell < MIN_CHART_CELL {
        return Err(MeshError::TooManyFaces {
            faces: nfaces,
            resolution,
            cell,
            min: MIN_CHART_CELL,
        });
    }

    // isometric 2D layout with the longest edge on the x axis
    let layouts: Vec<([usize; 3], [[f64; 2]; 3])> = (0..nfaces)
        .map(|f| {
            let p = mesh.face_positions(f);
            let lens = [(p[1] - p[0]).norm(), (p[2] - p[1]).norm(), (p[0] - p[2]).norm()];
            let k = (0..3)
                .max_by(|&a, &b| lens[a].total_cmp(&lens[b]))
                .unwrap();
            let order = [k, (k + 1) % 3, (k + 2) % 3];
            let (a, b, c) = (p[order[0]], p[order[1]], p[order[2]]);
            let base = (b - a).norm();
            let pts = if base > 0.0 {
                let ex = (b - a) / base;
                let ac = c - a;
                let x = ac.dot(&ex);
                let y = (ac - ex * x).norm();
                [[0.0, 0.0], [base, 0.0], [x, y]]
            } else {
                [[0.0, 0.0]; 3]
            };
            (order, pts)
        })
        .collect();
    let max_base = layouts
        .iter()
        .map(|(_, pts)| pts[1][0])
        .fold(0.0, f64::max);
    let scale = if max_base > 0.0 {
        cell as f64 / max_base
    } else {
        0.0
    };

    let n = resolution as f64;
    let uvs = layouts
        .iter()
        .enumerate()
        .map(|(f, (order, pts))| {
            let col = f % grid;
            let row = f / grid;
            let x0 = (col * pitch + CHART_GUTTER) as f64;
            let y0 = (row * pitch + CHART_GUTTER) as f64;
            let mut corners = [[0.0; 2]; 3];
            for (slot, pt) in order.iter().zip(pts) {
                let tx = x0 + pt[0] * scale;
                let ty = y0 + pt[1] * scale;
                corners[*slot] = [(tx / n).clamp(0.0, 1.0), (1.0 - ty / n).clamp(0.0, 1.0)];
            }
            corners
        })
        .collect();
    mesh.with_uvs(uvs)
}

/// Builds undirected edge adjacency: each unordered vertex pair with the list of
/// faces that contain it.
pub fn edge_faces(faces: &[[u32; 3]]) -> HashMap<(u32, u32), Vec<usize>> {
    let mut map: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            map.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    map
}

/// Procedural meshes used by tests, examples and the CLI smoke paths.
pub mod shapes {
    use super::*;

    pub fn unit_triangle() -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            Some(vec![[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]]),
        )
        .expect("valid triangle")
    }

    /// Regular tetrahedron on alternating cube corners, outward winding.
    pub fn tetrahedron() -> Mesh {
        let v = vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ];
        let f = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        Mesh::new(v, f, None).expect("valid tetrahedron")
    }

    /// Axis-aligned cube with half extent `h`, two triangles per side.
    pub fn cube(h: f64) -> Mesh {
        let mut v = Vec::new();
        for i in 0..8 {
            v.push(Vec3::new(
                if i & 1 != 0 { h } else { -h },
                if i & 2 != 0 { h } else { -h },
                if i & 4 != 0 { h } else { -h },
            ));
        }
        let quads = [
            [1, 3, 7, 5], // +x
            [0, 4, 6, 2], // -x
            [2, 6, 7, 3], // +y
            [0, 1, 5, 4], // -y
            [4, 5, 7, 6], // +z
            [0, 2, 3, 1], // -z
        ];
        let mut f = Vec::new();
        for q in quads {
            f.push([q[0], q[1], q[2]]);
            f.push([q[0], q[2], q[3]]);
        }
        Mesh::new(v, f, None).expect("valid cube")
    }

    pub fn icosahedron() -> Mesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let v = vec![
            Vec3::new(-1.0, t, 0.0),
            Vec3::new(1.0, t, 0.0),
            Vec3::new(-1.0, -t, 0.0),
            Vec3::new(1.0, -t, 0.0),
            Vec3::new(0.0, -1.0, t),
            Vec3::new(0.0, 1.0, t),
            Vec3::new(0.0, -1.0, -t),
            Vec3::new(0.0, 1.0, -t),
            Vec3::new(t, 0.0, -1.0),
            Vec3::new(t, 0.0, 1.0),
            Vec3::new(-t, 0.0, -1.0),
            Vec3::new(-t, 0.0, 1.0),
        ];
        let f = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        Mesh::new(v, f, None).expect("valid icosahedron")
    }

    /// Icosahedron subdivided `levels` times with vertices pushed to the unit sphere.
    pub fn icosphere(levels: usize) -> Mesh {
        let base = icosahedron();
        let mut verts: Vec<Vec3> = base.vertices().iter().map(|v| v.normalize()).collect();
        let mut faces: Vec<[u32; 3]> = base.faces().to_vec();
        for _ in 0..levels {
            let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    let p = (verts[a as usize] + verts[b as usize]).normalize();
                    verts.push(p);
                    (verts.len() - 1) as u32
                })
            };
            for [a, b, c] in faces {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.push([a, ab, ca]);
                next.push([b, bc, ab]);
                next.push([c, ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
        }
        Mesh::new(verts, faces, None).expect("valid icosphere")
    }

    /// Flat `nx` by `ny` grid of quads in the z = 0 plane spanning `[0, w] x [0, h]`.
    pub fn grid(nx: usize, ny: usize, w: f64, h: f64) -> Mesh {
        let mut v = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                v.push(Vec3::new(
                    w * i as f64 / nx as f64,
                    h * j as f64 / ny as f64,
                    0.0,
                ));
            }
        }
        let idx = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
        let mut f = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                f.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                f.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        Mesh::new(v, f, None).expect("valid grid")
    }
}

#[cfg(test)]
mod tests {
    use super::shapes::*;
    use super::*;

    #[test]
    fn unit_triangle_normals_face_z() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n";
        let loaded = parse_obj(obj, &LoadOptions::default()).unwrap();
        assert!(!loaded.missing_uv);
        let m = loaded.mesh;
        assert_eq!(m.faces().len(), 1);
        for n in m.normals() {
            assert!((n - Vec3::z()).norm() < 1e-12);
        }
        assert_eq!(m.uvs().unwrap()[0], [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn tetrahedron_normals_match_positions() {
        // Each vertex touches three faces whose cross products all have the
        // same length; their sum is parallel to the vertex position.
        let obj = tetrahedron().to_obj();
        let stripped: String = obj
            .lines()
            .filter(|l| !l.starts_with("vn"))
            .map(|l| {
                if let Some(rest) = l.strip_prefix("f ") {
                    let c: Vec<_> = rest.split_whitespace().map(|c| c.split('/').next().unwrap()).collect();
                    format!("f {}\n", c.join(" "))
                } else {
                    format!("{l}\n")
                }
            })
            .collect();
        let m = parse_obj(&stripped, &LoadOptions::default()).unwrap().mesh;
        for (v, n) in m.vertices().iter().zip(m.normals()) {
            let expected = v.normalize();
            assert!((n - expected).norm() < 1e-12, "{n:?} vs {expected:?}");
        }
    }

    #[test]
    fn scaled_cube_normalizes_to_radius() {
        let m = cube(50.0);
        let shifted = m.with_vertices(m.vertices().iter().map(|v| v + Vec3::new(3.0, -7.0, 11.0)).collect());
        let n = shifted.normalized();
        let (c, r) = n.bounding_sphere();
        assert!(c.norm() < 1e-12);
        assert!((r - NORMALIZED_RADIUS).abs() < 1e-6);
    }

    #[test]
    fn normalization_is_idempotent() {
        let once = icosphere(2).normalized();
        let twice = once.normalized();
        for (a, b) in once.vertices().iter().zip(twice.vertices()) {
            assert!((a - b).norm() < 1e-7);
        }
    }

    #[test]
    fn quads_fan_triangulate() {
        let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let m = parse_obj(obj, &LoadOptions::default()).unwrap();
        assert!(m.missing_uv);
        assert_eq!(m.mesh.faces(), &[[0, 1, 2], [0, 2, 3]]);

        let strict = LoadOptions {
            triangulate_quads: false,
            ..Default::default()
        };
        assert!(matches!(
            parse_obj(obj, &strict),
            Err(MeshError::NonTriangulated { corners: 4, .. })
        ));
    }

    #[test]
    fn pentagons_are_rejected() {
        let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv -1 0 0\nf 1 2 3 4 5\n";
        assert!(matches!(
            parse_obj(obj, &LoadOptions::default()),
            Err(MeshError::NonTriangulated { corners: 5, .. })
        ));
    }

    #[test]
    fn malformed_records() {
        let opts = LoadOptions::default();
        assert!(matches!(parse_obj("v 0 0\n", &opts), Err(MeshError::Parse { line: 1, .. })));
        assert!(matches!(parse_obj("v 0 0 x\n", &opts), Err(MeshError::Parse { .. })));
        assert!(matches!(
            parse_obj("v 0 0 0\nv 1 0 0\nf 1 2 3\n", &opts),
            Err(MeshError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 2\nvt 0 0\nvt 0 0\nf 1/1 2/2 3/3\n", &opts),
            Err(MeshError::UvOutOfRange { .. })
        ));
    }

    #[test]
    fn negative_indices_resolve_relative() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n";
        let m = parse_obj(obj, &LoadOptions::default()).unwrap();
        assert_eq!(m.mesh.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn naive_chart_quad_is_disjoint() {
        let quad = grid(1, 1, 1.0, 1.0);
        let charted = naive_uv_chart(&quad, 1024).unwrap();
        let uvs = charted.uvs().unwrap();
        let bbox = |c: &[[f64; 2]; 3]| {
            let xs = c.map(|p| p[0]);
            let ys = c.map(|p| p[1]);
            (
                xs.iter().cloned().fold(f64::MAX, f64::min),
                xs.iter().cloned().fold(f64::MIN, f64::max),
                ys.iter().cloned().fold(f64::MAX, f64::min),
                ys.iter().cloned().fold(f64::MIN, f64::max),
            )
        };
        let (a, b) = (bbox(&uvs[0]), bbox(&uvs[1]));
        let overlap = a.0 < b.1 && b.0 < a.1 && a.2 < b.3 && b.2 < a.3;
        assert!(!overlap);
    }

    #[test]
    fn naive_chart_area_is_proportional() {
        let m = grid(2, 1, 2.0, 0.5);
        let big = m.with_vertices(
            m.vertices()
                .iter()
                .map(|v| if v.x > 1.5 { Vec3::new(v.x * 2.0, v.y, v.z) } else { *v })
                .collect(),
        );
        let charted = naive_uv_chart(&big, 1024).unwrap();
        let uvs = charted.uvs().unwrap();
        let uv_area = |c: &[[f64; 2]; 3]| {
            0.5 * ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1])).abs()
        };
        let ratios: Vec<f64> = (0..charted.faces().len())
            .map(|f| uv_area(&uvs[f]) / charted.face_area(f))
            .collect();
        for r in &ratios {
            assert!((r - ratios[0]).abs() < 1e-9 * ratios[0]);
        }
    }

    #[test]
    fn naive_chart_rejects_existing_uvs() {
        assert!(matches!(naive_uv_chart(&unit_triangle(), 1024), Err(MeshError::AlreadyHasUvs)));
    }

    #[test]
    fn naive_chart_rejects_dense_meshes() {
        let m = icosphere(3); // 1280 faces
        assert!(matches!(naive_uv_chart(&m, 128), Err(MeshError::TooManyFaces { .. })));
        assert!(naive_uv_chart(&m, 1024).is_ok());
    }

    #[test]
    fn obj_round_trip_preserves_mesh() {
        let m = naive_uv_chart(&icosahedron().normalized(), 256).unwrap();
        let back = parse_obj(
            &m.to_obj(),
            &LoadOptions {
                normalize: false,
                ..Default::default()
            },
        )
        .unwrap()
        .mesh;
        assert_eq!(back.faces(), m.faces());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in back.uvs().unwrap().iter().zip(m.uvs().unwrap()) {
            for k in 0..3 {
                assert!((a[k][0] - b[k][0]).abs() < 1e-12 && (a[k][1] - b[k][1]).abs() < 1e-12);
            }
        }
    }
}
