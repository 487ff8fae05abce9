//! Block geometry, block sensing and compression-ratio bookkeeping.
//!
//! A block vector is the raster scan of a `B x B x 3` block: rows, then
//! columns, with channels innermost. Measurement matrices act on that vector,
//! and a sensing convolution kernel `[B, B, 3, n]` flattened row-major is the
//! transpose of the corresponding `n x 3B²` matrix, so both routes share the
//! same summation order.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, Padding};
use crate::policy::BlockMask;
use crate::tensor::{ImageTensor, Tensor};

/// Image and block dimensions. `block` divides both `height` and `width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockGeometry {
    height: usize,
    width: usize,
    block: usize,
}

impl BlockGeometry {
    pub fn new(height: usize, width: usize, block: usize) -> Result<Self> {
        if block == 0 || height == 0 || width == 0 {
            return Err(Error::Geometry("dimensions must be positive".into()));
        }
        if !height.is_multiple_of(block) || !width.is_multiple_of(block) {
            return Err(Error::Geometry(format!(
                "block size {block} must divide image size {height}x{width}"
            )));
        }
        Ok(BlockGeometry {
            height,
            width,
            block,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn rows(&self) -> usize {
        self.height / self.block
    }

    pub fn cols(&self) -> usize {
        self.width / self.block
    }

    /// Length of a vectorized block, `3 B²`.
    pub fn block_dim(&self) -> usize {
        3 * self.block * self.block
    }

    pub fn num_blocks(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.height, self.width, 3]
    }

    pub(crate) fn check_image(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.image_shape() {
            return Err(Error::shape(
                "image vs geometry",
                image.shape(),
                &self.image_shape(),
            ));
        }
        Ok(())
    }
}

/// Dense `rows x 3B²` measurement operator.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MeasurementMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "measurement matrix",
                &[rows, cols],
                &[data.len()],
            ));
        }
        Ok(MeasurementMatrix { rows, cols, data })
    }

    /// Zero-mean Gaussian entries with variance `1 / cols`.
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let t = Tensor::randn(&[rows, cols], (1.0 / cols as f64).sqrt(), rng);
        MeasurementMatrix {
            rows,
            cols,
            data: t.into_data(),
        }
    }

    /// First `min(3, rows)` rows average one channel each; the remaining rows
    /// are Gaussian with entry standard deviation `4 / B`, made orthogonal to
    /// the channel averages. Base measurements then carry block means plus
    /// O(1) responses to texture.
    pub fn dc_aware<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let per_channel = cols / 3;
        let block = (per_channel as f64).sqrt();
        let t = Tensor::randn(&[rows, cols], 4.0 / block, rng);
        let mut m = MeasurementMatrix {
            rows,
            cols,
            data: t.into_data(),
        };
        m.remove_channel_means();
        for (r, row) in m.data.chunks_exact_mut(cols).take(3).enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = if i % 3 == r {
                    1.0 / per_channel as f64
                } else {
                    0.0
                };
            }
        }
        m
    }

    /// Makes every row orthogonal to the per-channel constant block (block
    /// vectors interleave channels, so channel `c` sits at indices `c mod 3`).
    pub fn remove_channel_means(&mut self) {
        for row in self.data.chunks_exact_mut(self.cols) {
            for c in 0..3 {
                let n = row.iter().skip(c).step_by(3).count() as f64;
                let mean = row.iter().skip(c).step_by(3).sum::<f64>() / n;
                row.iter_mut().skip(c).step_by(3).for_each(|v| *v -= mean);
            }
        }
    }

    /// The first `rows` rows of the identity.
    pub fn selector(rows: usize, cols: usize) -> Self {
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows.min(cols) {
            data[r * cols + r] = 1.0;
        }
        MeasurementMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `phi · x`, each row summed in increasing column order.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(
                "measurement apply",
                &[self.rows, self.cols],
                &[x.len()],
            ));
        }
        Ok((0..self.rows)
            .map(|r| {
                let mut acc = 0.0;
                for (a, b) in self.row(r).iter().zip(x) {
                    acc += a * b;
                }
                acc
            })
            .collect())
    }

    /// Rows where `keep` is set, in their original order.
    pub fn select_rows(&self, keep: &[bool]) -> Result<MeasurementMatrix> {
        if keep.len() != self.rows {
            return Err(Error::shape("select_rows", &[self.rows], &[keep.len()]));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for (r, &k) in keep.iter().enumerate() {
            if k {
                data.extend_from_slice(self.row(r));
                rows += 1;
            }
        }
        Ok(MeasurementMatrix {
            rows,
            cols: self.cols,
            data,
        })
    }

    /// Stride-`B` convolution kernel `[B, B, 3, rows]` equivalent to this matrix.
    pub fn to_kernel(&self, block: usize) -> Result<Tensor> {
        if 3 * block * block != self.cols {
            return Err(Error::shape(
                "to_kernel",
                &[self.rows, self.cols],
                &[block, block, 3],
            ));
        }
        let mut k = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for j in 0..self.cols {
                k[j * self.rows + r] = self.data[r * self.cols + j];
            }
        }
        Tensor::from_vec(&[block, block, 3, self.rows], k)
    }

    /// Inverse of [`to_kernel`](Self::to_kernel).
    pub fn from_kernel(kernel: &Tensor) -> Result<Self> {
        let s = kernel.shape();
        if s.len() != 4 || s[0] != s[1] || s[2] != 3 {
            return Err(Error::shape("from_kernel", s, &[0, 0, 3, 0]));
        }
        let (cols, rows) = (s[0] * s[1] * 3, s[3]);
        let k = kernel.data();
        let mut data = vec![0.0; rows * cols];
        for j in 0..cols {
            for r in 0..rows {
                data[r * cols + j] = k[j * rows + r];
            }
        }
        Ok(MeasurementMatrix { rows, cols, data })
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.rows, self.cols], self.data.clone()).expect("consistent")
    }
}

/// Base, full and (for the fixed-ratio baseline) stage-two measurement matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingBank {
    pub phi_b: MeasurementMatrix,
    pub phi_f: MeasurementMatrix,
    pub phi_bf: Option<MeasurementMatrix>,
}

impl SensingBank {
    pub fn new(
        phi_b: MeasurementMatrix,
        phi_f: MeasurementMatrix,
        phi_bf: Option<MeasurementMatrix>,
        geom: &BlockGeometry,
    ) -> Result<Self> {
        let d = geom.block_dim();
        let mats = [Some(&phi_b), Some(&phi_f), phi_bf.as_ref()];
        for m in mats.into_iter().flatten() {
            if m.cols() != d {
                return Err(Error::shape("sensing bank", &[m.rows(), m.cols()], &[d]));
            }
        }
        if phi_b.rows() == 0 || phi_f.rows() == 0 || phi_b.rows() + phi_f.rows() > d {
            return Err(Error::invalid(format!(
                "need n_b >= 1, n_max >= 1, n_b + n_max <= {d}; got {} + {}",
                phi_b.rows(),
                phi_f.rows()
            )));
        }
        Ok(SensingBank {
            phi_b,
            phi_f,
            phi_bf,
        })
    }

    /// Gaussian initialisation with variance `1 / 3B²`.
    pub fn gaussian<R: Rng + ?Sized>(
        n_b: usize,
        n_max: usize,
        geom: &BlockGeometry,
        rng: &mut R,
    ) -> Result<Self> {
        let d = geom.block_dim();
        Self::new(
            MeasurementMatrix::gaussian(n_b, d, rng),
            MeasurementMatrix::gaussian(n_max, d, rng),
            None,
            geom,
        )
    }

    pub fn n_b(&self) -> usize {
        self.phi_b.rows()
    }

    pub fn n_max(&self) -> usize {
        self.phi_f.rows()
    }
}

/// Vectorizes every block: `[H, W, 3] -> [rows, cols, 3B²]`.
pub fn split_blocks(image: &ImageTensor, geom: &BlockGeometry) -> Result<Tensor> {
    geom.check_image(image)?;
    let b = geom.block();
    let shape = [1, geom.height(), geom.width(), 3];
    let grid = kernels::space_to_depth(image.data(), &shape, b);
    Tensor::from_vec(&[geom.rows(), geom.cols(), geom.block_dim()], grid)
}

/// Inverse of [`split_blocks`].
pub fn merge_blocks(grid: &Tensor, geom: &BlockGeometry) -> Result<ImageTensor> {
    let expect = [geom.rows(), geom.cols(), geom.block_dim()];
    if grid.shape() != expect {
        return Err(Error::shape("merge_blocks", grid.shape(), &expect));
    }
    let shape = [1, geom.rows(), geom.cols(), geom.block_dim()];
    let img = kernels::depth_to_space(grid.data(), &shape, geom.block());
    Tensor::from_vec(&geom.image_shape(), img)
}

/// Stride-`B` convolution sensing: `[rows, cols, phi.rows()]`.
pub fn sense_conv(
    image: &ImageTensor,
    phi: &MeasurementMatrix,
    geom: &BlockGeometry,
) -> Result<Tensor> {
    geom.check_image(image)?;
    let kernel = phi.to_kernel(geom.block())?;
    let in_shape = [1, geom.height(), geom.width(), 3];
    let g = ConvGeom::resolve(&in_shape, kernel.shape(), geom.block(), Padding::Valid)?;
    let out = kernels::conv2d_forward(image.data(), kernel.data(), None, &g);
    Tensor::from_vec(&[geom.rows(), geom.cols(), phi.rows()], out)
}

/// Explicit per-block `phi · x_ij`: `[rows, cols, phi.rows()]`.
pub fn sense_matmul(
    image: &ImageTensor,
    phi: &MeasurementMatrix,
    geom: &BlockGeometry,
) -> Result<Tensor> {
    let grid = split_blocks(image, geom)?;
    let d = geom.block_dim();
    let mut out = Vec::with_capacity(geom.num_blocks() * phi.rows());
    for blk in grid.data().chunks_exact(d) {
        out.extend(phi.apply(blk)?);
    }
    Tensor::from_vec(&[geom.rows(), geom.cols(), phi.rows()], out)
}

/// Base measurements `C[i, j, :] = phi_b · x_ij`.
pub fn sense_base(image: &ImageTensor, bank: &SensingBank, geom: &BlockGeometry) -> Result<Tensor> {
    sense_conv(image, &bank.phi_b, geom)
}

/// Full stage-two measurements `D[i, j, :] = phi_f · x_ij`.
pub fn sense_full(image: &ImageTensor, bank: &SensingBank, geom: &BlockGeometry) -> Result<Tensor> {
    sense_conv(image, &bank.phi_f, geom)
}

/// Per-block stage-two matrix: rows of `phi_f` where the block mask is 1.
pub fn select_rows(bank: &SensingBank, mask: &[bool]) -> Result<MeasurementMatrix> {
    bank.phi_f.select_rows(mask)
}

/// Ragged stage-two measurements of one block, as produced by the test path.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMeasurements {
    pub mask: Vec<bool>,
    pub base: Vec<f64>,
    pub selected: Vec<f64>,
}

impl BlockMeasurements {
    pub fn popcount(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// All measurements of one image in compressed (test-path) form.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub geometry: BlockGeometry,
    pub n_b: usize,
    pub n_max: usize,
    /// Row-major over the block grid.
    pub blocks: Vec<BlockMeasurements>,
}

impl MeasurementSet {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != self.geometry.num_blocks() {
            return Err(Error::Geometry(format!(
                "{} blocks for a {}x{} grid",
                self.blocks.len(),
                self.geometry.rows(),
                self.geometry.cols()
            )));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.mask.len() != self.n_max
                || b.base.len() != self.n_b
                || b.selected.len() != b.popcount()
            {
                return Err(Error::Geometry(format!(
                    "block {i} has inconsistent lengths"
                )));
            }
        }
        Ok(())
    }

    /// Total measurement count `sum(n_b + n_s)` over blocks.
    pub fn total_measurements(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.base.len() + b.selected.len())
            .sum()
    }
}

/// Average measurements per block, `n_b + mean(n_s)`, from stage-two counts.
pub fn average_measurements(counts: &[usize], n_b: usize) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::invalid("average ratio of an empty dataset"));
    }
    let total: f64 = counts.iter().map(|&c| (c + n_b) as f64).sum();
    Ok(total / counts.len() as f64)
}

/// Average compression ratio `n_avg / 3B²` over every block of every mask.
pub fn average_ratio(masks: &[BlockMask], n_b: usize, geom: &BlockGeometry) -> Result<f64> {
    let mut counts = Vec::with_capacity(masks.len() * geom.num_blocks());
    for m in masks {
        if m.rows() != geom.rows() || m.cols() != geom.cols() {
            return Err(Error::shape(
                "average_ratio",
                &[m.rows(), m.cols()],
                &[geom.rows(), geom.cols()],
            ));
        }
        counts.extend(m.popcounts());
    }
    Ok(average_measurements(&counts, n_b)? / geom.block_dim() as f64)
}
