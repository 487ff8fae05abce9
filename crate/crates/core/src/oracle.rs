//! Classical sparsity oracle: an overcomplete DCT dictionary, orthogonal
//! matching pursuit, and rank agreement between oracle sparsity and learned
//! per-block measurement counts.

use crate::blocks::{split_blocks, BlockGeometry};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Unit-norm atoms of dimension `3B²`, stored atom-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    block: usize,
    dim: usize,
    atoms: Vec<f64>,
}

impl Dictionary {
    pub fn block(&self) -> usize {
        self.block
    }

    /// Signal dimension `3B²`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms `12B²`.
    pub fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.dim..(k + 1) * self.dim]
    }

    /// `A x` for a coefficient vector of length `12B²`.
    pub fn synthesize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.len() {
            return Err(Error::shape("synthesize", &[x.len()], &[self.len()]));
        }
        let mut y = vec![0.0; self.dim];
        for (k, &c) in x.iter().enumerate() {
            if c != 0.0 {
                for (yi, &a) in y.iter_mut().zip(self.atom(k)) {
                    *yi += c * a;
                }
            }
        }
        Ok(y)
    }

    /// Largest `|<a_i, a_j>|` over distinct atoms.
    pub fn mutual_coherence(&self) -> f64 {
        let n = self.len();
        let mut mu: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                mu = mu.max(dot(self.atom(i), self.atom(j)).abs());
            }
        }
        mu
    }
}

/// 1D overcomplete DCT frame: `2B` cosines `cos(π(2t+1)k / 4B)`, unit norm.
fn dct_frame(block: usize) -> Vec<Vec<f64>> {
    let n = 2 * block;
    (0..n)
        .map(|k| {
            let mut a: Vec<f64> = (0..block)
                .map(|t| {
                    (std::f64::consts::PI * (2 * t + 1) as f64 * k as f64 / (2 * n) as f64).cos()
                })
                .collect();
            let norm = dot(&a, &a).sqrt();
            a.iter_mut().for_each(|v| *v /= norm);
            a
        })
        .collect()
}

/// `3B² x 12B²` dictionary: per channel, the Kronecker product of two 1D
/// frames (`B² x 4B²`), block-diagonal over the three channels.
///
/// Atom `c·4B² + k1·2B + k2` is `d_k1(p)·d_k2(q)` on channel `c`, placed at
/// block index `(p·B + q)·3 + c`. Atom 0 is the constant atom of channel 0.
pub fn build_dct_dictionary(block: usize) -> Result<Dictionary> {
    if block == 0 {
        return Err(Error::invalid("block size must be positive"));
    }
    let frame = dct_frame(block);
    let dim = 3 * block * block;
    let per_channel = 4 * block * block;
    let mut atoms = vec![0.0; dim * 3 * per_channel];
    for c in 0..3 {
        for k1 in 0..2 * block {
            for k2 in 0..2 * block {
                let k = c * per_channel + k1 * 2 * block + k2;
                let atom = &mut atoms[k * dim..(k + 1) * dim];
                for p in 0..block {
                    for q in 0..block {
                        atom[(p * block + q) * 3 + c] = frame[k1][p] * frame[k2][q];
                    }
                }
                let norm = dot(atom, atom).sqrt();
                atom.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    Ok(Dictionary { block, dim, atoms })
}

/// Result of [`omp_solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct OmpResult {
    /// Dense coefficients, one per atom.
    pub coefficients: Vec<f64>,
    /// Selected atoms in selection order.
    pub support: Vec<usize>,
    /// Residual norm before the first iteration and after each one.
    pub residual_norms: Vec<f64>,
    /// Stopped because the next atom was linearly dependent on the support.
    pub rank_deficient: bool,
}

impl OmpResult {
    pub fn iterations(&self) -> usize {
        self.support.len()
    }

    pub fn residual_norm(&self) -> f64 {
        *self
            .residual_norms
            .last()
            .expect("initial residual recorded")
    }
}

/// Default iteration cap `3B²/2`.
pub fn default_max_iters(block: usize) -> usize {
    3 * block * block / 2
}

/// Orthogonal matching pursuit with an incremental (modified Gram-Schmidt)
/// QR of the selected atoms.
///
/// `residual_tol` defaults to `1e-6·||y||`, `max_iters` to `3B²/2`. Ties in
/// `|correlation|` go to the lowest atom index.
pub fn omp_solve(
    y: &[f64],
    dict: &Dictionary,
    max_iters: Option<usize>,
    residual_tol: Option<f64>,
) -> Result<OmpResult> {
    let dim = dict.dim();
    if y.len() != dim {
        return Err(Error::shape("omp_solve", &[y.len()], &[dim]));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite signal".into()));
    }
    let max_iters = max_iters.unwrap_or_else(|| default_max_iters(dict.block()));
    if max_iters > dim {
        return Err(Error::invalid(format!(
            "max_iters {max_iters} exceeds {dim}"
        )));
    }
    let y_norm = norm(y);
    let tol = residual_tol.unwrap_or(1e-6 * y_norm);

    let mut residual = y.to_vec();
    let mut norms = vec![y_norm];
    let mut support: Vec<usize> = Vec::new();
    let mut q: Vec<Vec<f64>> = Vec::new();
    // r[j] holds column j of the triangular factor (length j + 1).
    let mut r: Vec<Vec<f64>> = Vec::new();
    let mut qty: Vec<f64> = Vec::new();
    let mut selected = vec![false; dict.len()];
    let mut rank_deficient = false;

    while support.len() < max_iters && *norms.last().unwrap() > tol {
        let mut best = None;
        let mut best_corr = -1.0;
        for (k, &taken) in selected.iter().enumerate() {
            if taken {
                continue;
            }
            let c = dot(dict.atom(k), &residual).abs();
            if c > best_corr {
                best_corr = c;
                best = Some(k);
            }
        }
        let Some(k) = best else { break };
        let atom = dict.atom(k);
        let mut v = atom.to_vec();
        let mut col = Vec::with_capacity(q.len() + 1);
        for qi in &q {
            let proj = dot(qi, &v);
            axpy(&mut v, -proj, qi);
            col.push(proj);
        }
        // second pass keeps Q orthonormal for coherent atoms
        for (qi, c) in q.iter().zip(col.iter_mut()) {
            let proj = dot(qi, &v);
            axpy(&mut v, -proj, qi);
            *c += proj;
        }
        let vn = norm(&v);
        if vn <= 1e-10 * norm(atom) {
            rank_deficient = true;
            break;
        }
        v.iter_mut().for_each(|x| *x /= vn);
        col.push(vn);
        let coef = dot(&v, &residual);
        axpy(&mut residual, -coef, &v);
        qty.push(dot(&v, y));
        q.push(v);
        r.push(col);
        support.push(k);
        selected[k] = true;
        norms.push(norm(&residual));
    }

    // back substitution R z = Q^T y
    let s = support.len();
    let mut z = vec![0.0; s];
    for i in (0..s).rev() {
        let mut acc = qty[i];
        for j in i + 1..s {
            acc -= r[j][i] * z[j];
        }
        z[i] = acc / r[i][i];
    }
    let mut coefficients = vec![0.0; dict.len()];
    for (&k, &c) in support.iter().zip(&z) {
        coefficients[k] = c;
    }
    Ok(OmpResult {
        coefficients,
        support,
        residual_norms: norms,
        rank_deficient,
    })
}

/// Coefficient magnitude counted as significant on the `[0,255]` pixel scale.
pub const DEFAULT_THRESHOLD: f64 = 10.0;

/// Number of coefficients with `|x_i| > threshold` (strict).
pub fn sparsity_level(x: &[f64], threshold: f64) -> usize {
    x.iter().filter(|v| v.abs() > threshold).count()
}

/// Per-block oracle sparsity levels of an image in `[0,1]`, row-major over
/// the block grid. Blocks are rescaled to `[0,255]` before the solve and
/// counted against `threshold`.
pub fn block_sparsity_levels(
    image: &ImageTensor,
    geom: &BlockGeometry,
    dict: &Dictionary,
    threshold: f64,
) -> Result<Vec<usize>> {
    if dict.block() != geom.block() {
        return Err(Error::Geometry(format!(
            "dictionary block {} != geometry block {}",
            dict.block(),
            geom.block()
        )));
    }
    let grid = split_blocks(image, geom)?;
    grid.data()
        .chunks_exact(geom.block_dim())
        .map(|blk| {
            let y: Vec<f64> = blk.iter().map(|v| v * 255.0).collect();
            let res = omp_solve(&y, dict, None, None)?;
            Ok(sparsity_level(&res.coefficients, threshold))
        })
        .collect()
}

/// Oracle sparsity and learned stage-two counts for the same blocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparsityReport {
    pub levels: Vec<usize>,
    pub counts: Vec<usize>,
}

/// Spearman rank correlation between `report.levels` and `report.counts`.
pub fn allocation_correlation(report: &SparsityReport) -> Result<f64> {
    let a: Vec<f64> = report.levels.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = report.counts.iter().map(|&v| v as f64).collect();
    spearman(&a, &b)
}

/// Spearman correlation with average ranks for ties. Undefined for fewer
/// than 3 points or a constant series.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("spearman", &[a.len()], &[b.len()]));
    }
    if a.len() < 3 {
        return Err(Error::Undefined("need at least 3 blocks".into()));
    }
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb).ok_or_else(|| Error::Undefined("constant series".into()))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
