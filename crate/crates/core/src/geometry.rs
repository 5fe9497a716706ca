//! Numerical substrate for the semantic-area reward: cosine distance,
//! two-component PCA, 2D convex hull and polygon area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigenproblems up to this size are solved with cyclic Jacobi rotations;
/// larger ones fall back to power iteration with deflation.
pub const JACOBI_MAX_DIM: usize = 64;
pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 1_000;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Row-major matrix of sentence embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<F> {
    rows: usize,
    dim: usize,
    data: Vec<F>,
}

impl<F: Scalar> EmbeddingMatrix<F> {
    pub fn new(rows: usize, dim: usize, data: Vec<F>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch { expected: rows * dim, got: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / dim, col: pos % dim });
        }
        Ok(Self { rows, dim, data })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(0, dim, Vec::new())
    }

    /// Builds a matrix from row vectors; all rows must share one length.
    pub fn from_rows<R: AsRef<[F]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::InvalidArgument("cannot infer dimension from zero rows".into()))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks_exact(self.dim)
    }

    /// Copies the selected rows, in the given order, into a new matrix.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), dim: self.dim, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2<F> {
    pub x: F,
    pub y: F,
}

impl<F: Scalar> Point2<F> {
    pub fn new(x: F, y: F) -> Self {
        Self { x, y }
    }
}

pub(crate) fn dot<F: Scalar>(u: &[F], v: &[F]) -> F {
    u.iter().zip(v).map(|(&a, &b)| a * b).sum()
}

pub(crate) fn norm<F: Scalar>(u: &[F]) -> F {
    dot(u, u).sqrt()
}

/// `1 - cos(u, v)`, clamped into `[0, 2]`.
pub fn cosine_distance<F: Scalar>(u: &[F], v: &[F]) -> Result<F> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let nu = norm(u);
    if nu == F::zero() {
        return Err(Error::DegenerateVector { row: 0 });
    }
    let nv = norm(v);
    if nv == F::zero() {
        return Err(Error::DegenerateVector { row: 1 });
    }
    let d = F::one() - dot(u, v) / (nu * nv);
    Ok(d.max(F::zero()).min(F::lit(2.0)))
}

/// A fitted two-component projection.
#[derive(Debug, Clone)]
pub struct Pca2<F> {
    pub mean: Vec<F>,
    /// Unit principal directions in the original space, strongest first.
    pub axes: [Vec<F>; 2],
    /// Sample variance captured along each axis.
    pub variances: [F; 2],
    /// Sum of per-dimension sample variances of the input.
    pub total_variance: F,
    pub points: Vec<Point2<F>>,
}

/// Projects the centered rows onto the top two eigenvectors of the sample
/// covariance.
pub fn pca2<F: Scalar>(m: &EmbeddingMatrix<F>) -> Result<Vec<Point2<F>>> {
    fit_pca2(m).map(|p| p.points)
}

pub fn fit_pca2<F: Scalar>(m: &EmbeddingMatrix<F>) -> Result<Pca2<F>> {
    let n = m.rows();
    let d = m.dim();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let nf = F::from_count(n);
    let denom = F::from_count(n - 1);

    let mut mean = vec![F::zero(); d];
    for row in m.iter_rows() {
        for (acc, &v) in mean.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    mean.iter_mut().for_each(|v| *v = *v / nf);

    let centered: Vec<F> = m
        .iter_rows()
        .flat_map(|row| row.iter().zip(&mean).map(|(&v, &mu)| v - mu))
        .collect();
    let crow = |i: usize| &centered[i * d..(i + 1) * d];

    let total_variance = centered.iter().map(|&v| v * v).sum::<F>() / denom;

    // With fewer rows than dimensions the n x n Gram matrix has the same
    // non-zero spectrum as the d x d covariance and is much cheaper.
    let (mut axes, variances) = if n < d {
        let mut gram = vec![F::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let g = dot(crow(i), crow(j)) / denom;
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let (vals, vecs) = top2_eigen(&gram, n);
        let mut axes: [Vec<F>; 2] = [vec![F::zero(); d], vec![F::zero(); d]];
        let scale_floor = F::epsilon() * F::lit(1e3) * total_variance.max(F::min_positive_value());
        for k in 0..2 {
            if vals[k] > scale_floor {
                // v = X^T u / ||X^T u||
                let mut v = vec![F::zero(); d];
                for i in 0..n {
                    let ui = vecs[k][i];
                    for (acc, &x) in v.iter_mut().zip(crow(i)) {
                        *acc = *acc + ui * x;
                    }
                }
                let nv = norm(&v);
                v.iter_mut().for_each(|x| *x = *x / nv);
                axes[k] = v;
            }
        }
        complete_axes(&mut axes, d);
        (axes, [vals[0].max(F::zero()), vals[1].max(F::zero())])
    } else {
        let mut cov = vec![F::zero(); d * d];
        for i in 0..n {
            let r = crow(i);
            for a in 0..d {
                if r[a] == F::zero() {
                    continue;
                }
                for b in a..d {
                    cov[a * d + b] = cov[a * d + b] + r[a] * r[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let c = cov[a * d + b] / denom;
                cov[a * d + b] = c;
                cov[b * d + a] = c;
            }
        }
        let (vals, vecs) = top2_eigen(&cov, d);
        let mut axes = vecs;
        complete_axes(&mut axes, d);
        (axes, [vals[0].max(F::zero()), vals[1].max(F::zero())])
    };

    for axis in axes.iter_mut() {
        orient(axis);
    }

    let mut points: Vec<Point2<F>> = (0..n)
        .map(|i| Point2::new(dot(crow(i), &axes[0]), dot(crow(i), &axes[1])))
        .collect();
    let mut variances = variances;
    if n == 2 {
        // Two points span a single direction.
        points.iter_mut().for_each(|p| p.y = F::zero());
        variances[1] = F::zero();
    }

    Ok(Pca2 { mean, axes, variances, total_variance, points })
}

/// Flips `v` so that its largest-magnitude coordinate is positive.
fn orient<F: Scalar>(v: &mut [F]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < F::zero()) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Replaces zero axes with unit vectors orthogonal to the others
/// (Gram-Schmidt over the standard basis).
fn complete_axes<F: Scalar>(axes: &mut [Vec<F>; 2], d: usize) {
    for k in 0..2 {
        if norm(&axes[k]) > F::zero() {
            continue;
        }
        for e in 0..d {
            let mut v = vec![F::zero(); d];
            v[e] = F::one();
            for j in 0..2 {
                if j == k || norm(&axes[j]) == F::zero() {
                    continue;
                }
                let p = dot(&v, &axes[j]);
                for (x, &a) in v.iter_mut().zip(&axes[j]) {
                    *x = *x - p * a;
                }
            }
            let nv = norm(&v);
            if nv > F::lit(0.5) {
                v.iter_mut().for_each(|x| *x = *x / nv);
                axes[k] = v;
                break;
            }
        }
    }
}

/// Two largest eigenpairs of a symmetric `n x n` matrix, strongest first.
/// When `n == 1` the second pair is zero.
fn top2_eigen<F: Scalar>(a: &[F], n: usize) -> ([F; 2], [Vec<F>; 2]) {
    if n <= JACOBI_MAX_DIM {
        let (vals, vecs) = jacobi_eigen(a, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
        let column = |c: usize| (0..n).map(|r| vecs[r * n + c]).collect::<Vec<F>>();
        let first = order[0];
        let (v1, l1) = match order.get(1) {
            Some(&c) => (column(c), vals[c]),
            None => (vec![F::zero(); n], F::zero()),
        };
        ([vals[first], l1], [column(first), v1])
    } else {
        power_top2(a, n)
    }
}

/// Cyclic Jacobi eigen-decomposition. Returns eigenvalues and the
/// row-major eigenvector matrix (eigenvectors in columns).
pub(crate) fn jacobi_eigen<F: Scalar>(a: &[F], n: usize) -> (Vec<F>, Vec<F>) {
    let mut a = a.to_vec();
    let mut v = vec![F::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = F::one();
    }
    let frob: F = a.iter().map(|&x| x * x).sum();
    let tol = F::epsilon() * F::epsilon() * frob;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = F::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + a[p * n + q] * a[p * n + q];
            }
        }
        if off <= tol || off == F::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == F::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (F::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + F::one()).sqrt());
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

fn power_top2<F: Scalar>(a: &[F], n: usize) -> ([F; 2], [Vec<F>; 2]) {
    let mut work = a.to_vec();
    let mut vals = [F::zero(); 2];
    let mut vecs: [Vec<F>; 2] = [vec![F::zero(); n], vec![F::zero(); n]];
    let tol = F::lit(POWER_TOLERANCE);
    for k in 0..2 {
        // Deterministic start with no special alignment to any axis.
        let mut v: Vec<F> = (0..n).map(|i| F::one() + F::from_count(i % 7) / F::lit(10.0)).collect();
        if k == 1 {
            let p = dot(&v, &vecs[0]);
            v.iter_mut().zip(&vecs[0]).for_each(|(x, &e)| *x = *x - p * e);
        }
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x = *x / nv);
        let mut lambda = F::zero();
        for _ in 0..POWER_MAX_ITERATIONS {
            let mut w = vec![F::zero(); n];
            for (r, wr) in w.iter_mut().enumerate() {
                *wr = dot(&work[r * n..(r + 1) * n], &v);
            }
            if k == 1 {
                let p = dot(&w, &vecs[0]);
                w.iter_mut().zip(&vecs[0]).for_each(|(x, &e)| *x = *x - p * e);
            }
            lambda = dot(&v, &w);
            let nw = norm(&w);
            if nw == F::zero() {
                break;
            }
            w.iter_mut().for_each(|x| *x = *x / nw);
            let diff = v.iter().zip(&w).map(|(&x, &y)| (x - y) * (x - y)).sum::<F>().sqrt();
            v = w;
            if diff < tol {
                break;
            }
        }
        for r in 0..n {
            for c in 0..n {
                work[r * n + c] = work[r * n + c] - lambda * v[r] * v[c];
            }
        }
        vals[k] = lambda;
        vecs[k] = v;
    }
    (vals, vecs)
}

fn cross<F: Scalar>(o: &Point2<F>, a: &Point2<F>, b: &Point2<F>) -> F {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn lexicographic<F: Scalar>(a: &Point2<F>, b: &Point2<F>) -> std::cmp::Ordering {
    a.x.partial_cmp(&b.x)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.y.partial_cmp(&b.y).unwrap_or(std::cmp::Ordering::Equal))
}

/// Monotone-chain convex hull. Vertices come back counter-clockwise,
/// starting from the lexicographically smallest point, with collinear
/// boundary points dropped. Fewer than three distinct points are
/// returned as-is (sorted, deduplicated).
pub fn convex_hull<F: Scalar>(points: &[Point2<F>]) -> Vec<Point2<F>> {
    let mut pts = points.to_vec();
    pts.sort_by(lexicographic);
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }

    let mut hull: Vec<Point2<F>> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= F::zero() {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= F::zero() {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Shoelace area of a simple polygon; zero for fewer than three vertices.
pub fn polygon_area<F: Scalar>(hull: &[Point2<F>]) -> F {
    if hull.len() < 3 {
        return F::zero();
    }
    let twice: F = hull
        .iter()
        .zip(hull.iter().cycle().skip(1))
        .map(|(a, b)| a.x * b.y - b.x * a.y)
        .sum();
    twice.abs() / F::lit(2.0)
}
