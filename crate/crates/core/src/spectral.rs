//! Cotangent Laplacian, its low end of the generalized spectrum `L f = λ M f`,
//! and random low-frequency inflate/deflate deformations built from it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Mesh, NORMALIZED_RADIUS};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("face {0} has zero area; cotangent weights are undefined")]
    DegenerateTriangle(usize),
    #[error("requested {k} eigenpairs from a {n}-vertex mesh")]
    TooManyEigenpairs { k: usize, n: usize },
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("spectrum has {0} eigenpairs; augmentation needs at least 2")]
    SpectrumTooSmall(usize),
    #[error("deformation flips faces even at magnitude {magnitude:.3e}")]
    FlippedFaces { magnitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    /// Number of eigenpairs.
    pub k: usize,
    /// Maximum displacement as a fraction of the bounding-sphere radius.
    pub amplitude: f64,
    pub seed: u64,
    /// Lower bound applied to every edge weight; `None` rejects degenerate faces.
    pub weight_floor: Option<f64>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            k: 16,
            amplitude: 0.05,
            seed: 0,
            weight_floor: Some(1e-6),
        }
    }
}

/// Symmetric sparse matrix stored as full compressed rows.
#[derive(Debug, Clone)]
pub struct SparseSymmetric {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymmetric {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Cotangent stiffness matrix (positive semi-definite sign convention) and the
/// barycentric lumped mass diagonal.
#[derive(Debug, Clone)]
pub struct Laplacian {
    pub stiffness: SparseSymmetric,
    pub mass: Vec<f64>,
}

fn cotangent(a: Vec3, b: Vec3) -> Option<f64> {
    let cross = a.cross(&b).norm();
    (cross > 0.0).then(|| a.dot(&b) / cross)
}

/// Builds the cotangent Laplacian. Edge weights are `(cot α + cot β) / 2`,
/// floored at `weight_floor` when given; without a floor, zero-area faces are
/// an error.
pub fn build_laplacian(mesh: &Mesh, weight_floor: Option<f64>) -> Result<Laplacian, SpectralError> {
    let n = mesh.vertices().len();
    let mut weights: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    let mut mass = vec![0.0; n];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let idx = f.map(|i| i as usize);
        let p = mesh.face_positions(fi);
        let area = mesh.face_area(fi);
        for k in 0..3 {
            // angle at corner k is opposite edge (k+1, k+2)
            let (i, j) = (idx[(k + 1) % 3], idx[(k + 2) % 3]);
            let key = (i.min(j), i.max(j));
            let cot = cotangent(p[(k + 1) % 3] - p[k], p[(k + 2) % 3] - p[k]);
            match cot {
                Some(c) => *weights.entry(key).or_insert(0.0) += 0.5 * c,
                None if weight_floor.is_some() => {
                    weights.entry(key).or_insert(0.0);
                }
                None => return Err(SpectralError::DegenerateTriangle(fi)),
            }
            mass[idx[k]] += area / 3.0;
        }
    }
    let mean_mass = mass.iter().sum::<f64>() / n.max(1) as f64;
    for m in &mut mass {
        // isolated or fully degenerate vertices still need an invertible mass
        if *m <= 0.0 {
            *m = 1e-12 * mean_mass.max(1e-12);
        }
    }

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut diag = vec![0.0; n];
    for ((i, j), mut w) in weights {
        if let Some(floor) = weight_floor {
            w = w.max(floor);
        }
        rows[i].push((j, -w));
        rows[j].push((i, -w));
        diag[i] += w;
        diag[j] += w;
    }
    for (i, row) in rows.iter_mut().enumerate() {
        row.push((i, diag[i]));
    }
    Ok(Laplacian {
        stiffness: SparseSymmetric::from_rows(rows),
        mass,
    })
}

/// Envelope (skyline) Cholesky factor of a sparse SPD matrix under a
/// reverse Cuthill-McKee ordering.
struct EnvelopeCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
}

fn reverse_cuthill_mckee(a: &SparseSymmetric) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

impl EnvelopeCholesky {
    /// Factors `stiffness + shift * diag(mass)`.
    fn factor(a: &SparseSymmetric, mass: &[f64], shift: f64) -> Option<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, &new) in inv.iter().enumerate() {
            for (j, _) in a.row(old) {
                let nj = inv[j];
                if nj < new {
                    first[new] = first[new].min(nj);
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        let mut values = vec![0.0; offset[n]];
        for (old, &new) in inv.iter().enumerate() {
            for (j, v) in a.row(old) {
                let nj = inv[j];
                if nj <= new {
                    values[offset[new] + nj - first[new]] += v;
                }
            }
            values[offset[new] + new - first[new]] += shift * mass[old];
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = values[offset[i] + j - fi];
                for k in lo..j {
                    s -= values[offset[i] + k - fi] * values[offset[j] + k - fj];
                }
                if j < i {
                    values[offset[i] + j - fi] = s / values[offset[j] + j - fj];
                } else {
                    if s <= 0.0 {
                        return None;
                    }
                    values[offset[i] + i - fi] = s.sqrt();
                }
            }
        }
        Some(Self {
            perm,
            first,
            offset,
            values,
        })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[self.offset[i] + k - fi] * y[k];
            }
            y[i] = s / self.values[self.offset[i] + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            y[i] /= self.values[self.offset[i] + i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.values[self.offset[i] + k - fi] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// The `count` smallest generalized eigenpairs, eigenvalues ascending and
/// eigenfunctions mass-orthonormal.
#[derive(Debug, Clone)]
pub struct LaplacianSpectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
}

impl LaplacianSpectrum {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }
}

const MAX_ITERATIONS: usize = 1000;
const RESIDUAL_TOLERANCE: f64 = 1e-10;

fn m_dot(a: &[f64], b: &[f64], mass: &[f64]) -> f64 {
    a.iter().zip(b).zip(mass).map(|((x, y), m)| x * y * m).sum()
}

/// Modified Gram-Schmidt in the mass inner product, run twice for stability.
/// Vectors that collapse are replaced from `rng`.
fn m_orthonormalize(basis: &mut [Vec<f64>], mass: &[f64], rng: &mut ChaCha8Rng) {
    for i in 0..basis.len() {
        for _attempt in 0..4 {
            let before = m_dot(&basis[i], &basis[i], mass).sqrt();
            for _pass in 0..2 {
                for j in 0..i {
                    let proj = m_dot(&basis[i], &basis[j], mass);
                    let (head, tail) = basis.split_at_mut(i);
                    for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = m_dot(&basis[i], &basis[i], mass).sqrt();
            if norm > 1e-10 * before.max(1e-300) {
                for x in &mut basis[i] {
                    *x /= norm;
                }
                break;
            }
            for x in &mut basis[i] {
                *x = rng.random::<f64>() - 0.5;
            }
        }
    }
}

/// Shift-invert subspace iteration with Rayleigh-Ritz projection.
pub fn compute_spectrum(laplacian: &Laplacian, k: usize) -> Result<LaplacianSpectrum, SpectralError> {
    let n = laplacian.mass.len();
    if k > n || k == 0 {
        return Err(SpectralError::TooManyEigenpairs { k, n });
    }
    let stiff = &laplacian.stiffness;
    let mass = &laplacian.mass;
    let block = n.min(2 * k + 8);

    let total_mass: f64 = mass.iter().sum();
    let trace_ratio = (0..n).map(|i| stiff.get(i, i) / mass[i]).sum::<f64>() / n as f64;
    let mut shift = 1e-4 * trace_ratio.max(1e-12);
    let factor = loop {
        match EnvelopeCholesky::factor(stiff, mass, shift) {
            Some(f) => break f,
            None if shift < 1e6 * trace_ratio.max(1.0) => shift *= 10.0,
            None => {
                return Err(SpectralError::ConvergenceFailure {
                    iterations: 0,
                    residual: f64::INFINITY,
                })
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    let mut basis: Vec<Vec<f64>> = (0..block)
        .map(|b| {
            if b == 0 {
                vec![1.0 / total_mass.sqrt(); n]
            } else {
                (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
            }
        })
        .collect();
    m_orthonormalize(&mut basis, mass, &mut rng);

    let mut worst = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        // a full basis spans the whole space; one Rayleigh-Ritz pass is exact
        if block < n {
            basis = basis
                .iter()
                .map(|x| {
                    let mx: Vec<f64> = x.iter().zip(mass).map(|(a, m)| a * m).collect();
                    factor.solve(&mx)
                })
                .collect();
            m_orthonormalize(&mut basis, mass, &mut rng);
        }
        let lx: Vec<Vec<f64>> = basis.iter().map(|x| stiff.mul_vec(x)).collect();
        let h = DMatrix::from_fn(block, block, |i, j| {
            0.5 * (basis[i].iter().zip(&lx[j]).map(|(a, b)| a * b).sum::<f64>()
                + basis[j].iter().zip(&lx[i]).map(|(a, b)| a * b).sum::<f64>())
        });
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let rotated: Vec<Vec<f64>> = order
            .iter()
            .map(|&c| {
                let col = eig.eigenvectors.column(c);
                let mut v = vec![0.0; n];
                for (b, x) in basis.iter().enumerate() {
                    let w = col[b];
                    for (o, xi) in v.iter_mut().zip(x) {
                        *o += w * xi;
                    }
                }
                v
            })
            .collect();
        let values: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect();
        basis = rotated;

        let scale = trace_ratio.max(values[k - 1]).max(1e-300);
        worst = (0..k)
            .map(|i| {
                let l = stiff.mul_vec(&basis[i]);
                let r: f64 = l
                    .iter()
                    .zip(&basis[i])
                    .zip(mass)
                    .map(|((li, xi), m)| {
                        let ri = li - values[i] * m * xi;
                        ri * ri / m
                    })
                    .sum::<f64>()
                    .sqrt();
                r / scale
            })
            .fold(0.0, f64::max);
        if worst <= RESIDUAL_TOLERANCE || block == n {
            let eigenfunctions = basis
                .into_iter()
                .take(k)
                .map(|mut f| {
                    let pivot = f
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                        .map_or(0, |(i, _)| i);
                    if f[pivot] < 0.0 {
                        f.iter_mut().for_each(|x| *x = -*x);
                    }
                    f
                })
                .collect();
            let mut eigenvalues: Vec<f64> = values.into_iter().take(k).collect();
            // the null space is exact; clean round-off on it
            for v in &mut eigenvalues {
                if *v < 1e-12 * scale {
                    *v = 0.0;
                }
            }
            return Ok(LaplacianSpectrum {
                eigenvalues,
                eigenfunctions,
            });
        }
    }
    Err(SpectralError::ConvergenceFailure {
        iterations: MAX_ITERATIONS,
        residual: worst,
    })
}

/// Normal displacement `magnitude * f_index(v) * n(v)` at every vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDeformation {
    pub eigen_index: usize,
    pub magnitude: f64,
}

/// Applies a deformation without renormalizing. Fails if any face turns over.
pub fn apply_deformation(
    mesh: &Mesh,
    spectrum: &LaplacianSpectrum,
    deformation: SpectralDeformation,
) -> Result<Mesh, SpectralError> {
    let f = &spectrum.eigenfunctions[deformation.eigen_index];
    let verts: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .zip(mesh.normals())
        .zip(f)
        .map(|((v, n), fv)| v + n * (deformation.magnitude * fv))
        .collect();
    let deformed = mesh.with_vertices(verts);
    if has_flipped_faces(mesh, &deformed) {
        return Err(SpectralError::FlippedFaces {
            magnitude: deformation.magnitude,
        });
    }
    Ok(deformed)
}

pub fn has_flipped_faces(original: &Mesh, deformed: &Mesh) -> bool {
    (0..original.faces().len()).any(|fi| {
        let a = original.face_cross(fi);
        a.norm() > 0.0 && a.dot(&deformed.face_cross(fi)) <= 0.0
    })
}

/// Picks an eigenfunction index uniformly from `[1, k)` and a magnitude
/// uniformly from `[-A, A]`, `A = amplitude * radius`, then inflates or
/// deflates along vertex normals and renormalizes. A magnitude that flips
/// faces is halved and retried up to five times.
pub fn random_spectral_augment(
    mesh: &Mesh,
    spectrum: &LaplacianSpectrum,
    amplitude: f64,
    seed: u64,
) -> Result<(Mesh, SpectralDeformation), SpectralError> {
    if spectrum.count() < 2 {
        return Err(SpectralError::SpectrumTooSmall(spectrum.count()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eigen_index = rng.random_range(1..spectrum.count());
    let (_, radius) = mesh.bounding_sphere();
    let limit = amplitude * if radius > 0.0 { radius } else { NORMALIZED_RADIUS };
    let mut magnitude = rng.random_range(-limit..=limit);
    let mut last = None;
    for _ in 0..=5 {
        let def = SpectralDeformation {
            eigen_index,
            magnitude,
        };
        match apply_deformation(mesh, spectrum, def) {
            Ok(m) => return Ok((m.normalized(), def)),
            Err(e) => last = Some(e),
        }
        magnitude *= 0.5;
    }
    Err(last.unwrap())
}

/// Dense matrix from a mass diagonal, for callers that need `M` explicitly.
pub fn mass_matrix(mass: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(mass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn equilateral_weights_are_uniform() {
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, 3f64.sqrt() / 2.0, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let l = build_laplacian(&m, None).unwrap();
        let expected = -0.5 / 60f64.to_radians().tan();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!((l.stiffness.get(i, j) - expected).abs() < 1e-12);
            assert_eq!(l.stiffness.get(i, j), l.stiffness.get(j, i));
        }
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let m = shapes::icosphere(2);
        let l = build_laplacian(&m, Some(1e-6)).unwrap();
        for i in 0..m.vertices().len() {
            let s: f64 = l.stiffness.row(i).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_face_errors_without_floor() {
        let m = Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::y()],
            vec![[0, 1, 2], [0, 1, 3]],
            None,
        )
        .unwrap();
        assert!(matches!(build_laplacian(&m, None), Err(SpectralError::DegenerateTriangle(0))));
        let l = build_laplacian(&m, Some(1e-6)).unwrap();
        assert!(l.stiffness.get(0, 2) <= -1e-6);
    }

    #[test]
    fn k_one_gives_constant_null_vector() {
        let m = shapes::icosphere(1).normalized();
        let s = compute_spectrum(&build_laplacian(&m, Some(1e-6)).unwrap(), 1).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-6);
        let f = &s.eigenfunctions[0];
        for v in f {
            assert!((v - f[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn disconnected_triangles_have_two_zero_modes() {
        let m = Mesh::new(
            vec![
                Vec3::zeros(),
                Vec3::x(),
                Vec3::y(),
                Vec3::new(5.0, 0.0, 0.0),
                Vec3::new(6.0, 0.0, 0.0),
                Vec3::new(5.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
            None,
        )
        .unwrap();
        let s = compute_spectrum(&build_laplacian(&m, None).unwrap(), 3).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-9);
        assert!(s.eigenvalues[1].abs() < 1e-9);
        assert!(s.eigenvalues[2] > 1e-3);
    }

    #[test]
    fn too_many_pairs_rejected() {
        let m = shapes::tetrahedron();
        let l = build_laplacian(&m, None).unwrap();
        assert!(matches!(compute_spectrum(&l, 5), Err(SpectralError::TooManyEigenpairs { .. })));
    }

    #[test]
    fn envelope_solver_matches_dense() {
        let m = shapes::icosphere(1);
        let l = build_laplacian(&m, None).unwrap();
        let f = EnvelopeCholesky::factor(&l.stiffness, &l.mass, 0.3).unwrap();
        let b: Vec<f64> = (0..l.mass.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = f.solve(&b);
        let a = l.stiffness.to_dense() + mass_matrix(&l.mass) * 0.3;
        let ax = &a * DVector::from_column_slice(&x);
        for (i, bi) in b.iter().enumerate() {
            assert!((ax[i] - bi).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let m = shapes::icosphere(2).normalized();
        let s = compute_spectrum(&build_laplacian(&m, Some(1e-6)).unwrap(), 4).unwrap();
        let d = apply_deformation(
            &m,
            &s,
            SpectralDeformation {
                eigen_index: 2,
                magnitude: 0.0,
            },
        )
        .unwrap();
        for (a, b) in m.vertices().iter().zip(d.vertices()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn augment_needs_two_pairs() {
        let m = shapes::icosphere(1).normalized();
        let s = compute_spectrum(&build_laplacian(&m, Some(1e-6)).unwrap(), 1).unwrap();
        assert!(matches!(
            random_spectral_augment(&m, &s, 0.05, 1),
            Err(SpectralError::SpectrumTooSmall(1))
        ));
    }

    #[test]
    fn huge_amplitude_fails_after_retries() {
        let m = shapes::icosphere(2).normalized();
        let s = compute_spectrum(&build_laplacian(&m, Some(1e-6)).unwrap(), 16).unwrap();
        // 5 halvings of 1e4 * radius still leave a displacement far beyond the mesh size
        let err = (0..8)
            .map(|seed| random_spectral_augment(&m, &s, 1e4, seed))
            .find(|r| r.is_err());
        assert!(matches!(err, Some(Err(SpectralError::FlippedFaces { .. }))));
    }
}
