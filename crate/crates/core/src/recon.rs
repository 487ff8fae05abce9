//! Initial reconstruction with generated per-block weights, and the deep
//! reconstruction network.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::layers::ConvLayer;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `[theta_b, theta_s]` stored as the kernel `[1, 1, n_b + n_max, 3B²]` of a
/// bias-free 1x1 convolution.
#[derive(Clone, Debug)]
pub struct InitBank {
    pub kernel: ParamId,
    pub n_b: usize,
    pub n_max: usize,
    pub block_dim: usize,
}

impl InitBank {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_b: usize,
        n_max: usize,
        block_dim: usize,
        rng: &mut R,
    ) -> Self {
        let std = (1.0 / block_dim as f64).sqrt();
        let kernel = store.add(
            &format!("{name}.theta"),
            Tensor::randn(&[1, 1, n_b + n_max, block_dim], std, rng),
        );
        InitBank {
            kernel,
            n_b,
            n_max,
            block_dim,
        }
    }

    fn columns(&self, store: &ParamStore, start: usize, count: usize) -> Tensor {
        let k = store.get(self.kernel).data();
        let d = self.block_dim;
        let mut m = vec![0.0; d * count];
        for r in 0..count {
            for p in 0..d {
                m[p * count + r] = k[(start + r) * d + p];
            }
        }
        Tensor::from_vec(&[d, count], m).expect("consistent")
    }

    /// `theta_b`, `3B² x n_b`.
    pub fn theta_b(&self, store: &ParamStore) -> Tensor {
        self.columns(store, 0, self.n_b)
    }

    /// `theta_s`, `3B² x n_max`.
    pub fn theta_s(&self, store: &ParamStore) -> Tensor {
        self.columns(store, self.n_b, self.n_max)
    }

    /// Writes `theta_b` and `theta_s` back into the kernel.
    pub fn set(&self, store: &mut ParamStore, theta_b: &Tensor, theta_s: &Tensor) -> Result<()> {
        let d = self.block_dim;
        if theta_b.shape() != [d, self.n_b] || theta_s.shape() != [d, self.n_max] {
            return Err(Error::shape("init bank", theta_b.shape(), theta_s.shape()));
        }
        let k = store.get_mut(self.kernel).data_mut();
        for p in 0..d {
            for r in 0..self.n_b {
                k[r * d + p] = theta_b.data()[p * self.n_b + r];
            }
            for r in 0..self.n_max {
                k[(self.n_b + r) * d + p] = theta_s.data()[p * self.n_max + r];
            }
        }
        Ok(())
    }
}

/// A-net: maps FEN features to one `n_max x n_max` matrix per block.
#[derive(Clone, Debug)]
pub struct WeightGenNet {
    pub hidden: [ConvLayer; 2],
    pub out: ConvLayer,
    pub n_max: usize,
}

impl WeightGenNet {
    /// The output bias starts at the flattened identity so every block begins
    /// with `w_ij = I`; the output kernel starts small.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        feature_width: usize,
        hidden: usize,
        n_max: usize,
        rng: &mut R,
    ) -> Self {
        let h = [
            ConvLayer::same(store, "anet.conv0", 3, feature_width, hidden, true, rng),
            ConvLayer::same(store, "anet.conv1", 3, hidden, hidden, true, rng),
        ];
        let out = ConvLayer::same(store, "anet.out", 1, hidden, n_max * n_max, true, rng);
        for v in store.get_mut(out.kernel).data_mut() {
            *v *= 0.1;
        }
        if let Some(b) = out.bias {
            store
                .get_mut(b)
                .data_mut()
                .copy_from_slice(Tensor::eye(n_max).data());
        }
        WeightGenNet {
            hidden: h,
            out,
            n_max,
        }
    }

    /// `[1, rows, cols, fen_width] -> [1, rows, cols, n_max²]`.
    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, features: Var) -> Result<Var> {
        let s = tape.shape(features);
        if s.len() != 4 || s[3] != self.hidden[0].cin {
            return Err(Error::shape(
                "anet input",
                s,
                &[1, 0, 0, self.hidden[0].cin],
            ));
        }
        let mut h = features;
        for layer in &self.hidden {
            let z = layer.forward(tape, params, h)?;
            h = tape.relu(z);
        }
        self.out.forward(tape, params, h)
    }

    /// Untracked evaluation on `[rows, cols, fen_width]`, returning
    /// `[rows, cols, n_max, n_max]`.
    pub fn evaluate(&self, store: &ParamStore, features: &Tensor) -> Result<Tensor> {
        let s = features.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::shape("anet input", &s, &[0, 0, self.hidden[0].cin]));
        }
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let f = tape.constant(features.clone().reshape(&[1, s[0], s[1], s[2]])?);
        let w = self.forward(&mut tape, &params, f)?;
        tape.value(w)
            .clone()
            .with_requires_grad(false)
            .reshape(&[s[0], s[1], self.n_max, self.n_max])
    }
}

/// Training-path initial reconstruction on the tape.
///
/// Per block, `F = w_ij · e_ij`, then `[C, F]` goes through the 1x1 kernel
/// holding `[theta_b, theta_s]`: `x̂_ij = theta_b c_ij + theta_s F_ij`.
pub fn initial_reconstruct(
    tape: &mut Tape,
    base: Var,
    stage_two: Var,
    weights: Var,
    theta_kernel: Var,
) -> Result<Var> {
    let (sc, se, sw) = (
        tape.shape(base).to_vec(),
        tape.shape(stage_two).to_vec(),
        tape.shape(weights).to_vec(),
    );
    if sc.len() != 4 || se.len() != 4 || sc[..3] != se[..3] {
        return Err(Error::shape("initial_reconstruct (C vs E)", &sc, &se));
    }
    let n_max = se[3];
    if sw.len() != 4 || sw[..3] != se[..3] || sw[3] != n_max * n_max {
        return Err(Error::shape("initial_reconstruct (W vs E)", &sw, &se));
    }
    let blocks = se[0] * se[1] * se[2];
    let w = tape.reshape(weights, &[blocks, n_max, n_max])?;
    let e = tape.reshape(stage_two, &[blocks, n_max, 1])?;
    let f = tape.batch_matmul(w, e)?;
    let f = tape.reshape(f, &se)?;
    let cat = tape.concat(&[base, f])?;
    tape.conv2d(cat, theta_kernel, None, 1, Padding::Valid)
}

/// Test-path initial reconstruction of a single block from ragged measurements.
///
/// `weights` is the full `n_max x n_max` generated matrix; its columns are
/// selected by the mask before multiplying with the `n_s` stage-two values.
pub fn initial_reconstruct_block(
    base: &[f64],
    selected: &[f64],
    mask: &[bool],
    weights: &[f64],
    theta_b: &Tensor,
    theta_s: &Tensor,
) -> Result<Vec<f64>> {
    let n_max = mask.len();
    let n_b = base.len();
    let cols: Vec<usize> = (0..n_max).filter(|&k| mask[k]).collect();
    if cols.len() != selected.len() || weights.len() != n_max * n_max {
        return Err(Error::shape(
            "initial_reconstruct_block",
            &[selected.len(), weights.len()],
            &[cols.len(), n_max * n_max],
        ));
    }
    let d = theta_b.shape()[0];
    if theta_b.shape() != [d, n_b] || theta_s.shape() != [d, n_max] {
        return Err(Error::shape(
            "initial_reconstruct_block theta",
            theta_b.shape(),
            theta_s.shape(),
        ));
    }
    // F = theta_tilde · y_s with theta_tilde = columns of w selected by the mask
    let mut f = vec![0.0; n_max];
    for (a, fa) in f.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (&col, &y) in cols.iter().zip(selected) {
            acc += weights[a * n_max + col] * y;
        }
        *fa = acc;
    }
    let (tb, ts) = (theta_b.data(), theta_s.data());
    Ok((0..d)
        .map(|p| {
            let mut acc = 0.0;
            for r in 0..n_b {
                acc += tb[p * n_b + r] * base[r];
            }
            for r in 0..n_max {
                acc += ts[p * n_max + r] * f[r];
            }
            acc
        })
        .collect())
}

/// Conv → rectifier → conv, plus identity skip.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub first: ConvLayer,
    pub second: ConvLayer,
}

impl ResBlock {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, rng: &mut R) -> Self {
        ResBlock {
            first: ConvLayer::same(store, &format!("{name}.a"), 3, width, width, true, rng),
            second: ConvLayer::same(store, &format!("{name}.b"), 3, width, width, true, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, params: &BoundParams, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, params, x)?;
        let h = tape.relu(h);
        let h = self.second.forward(tape, params, h)?;
        tape.add(h, x)
    }
}

/// One upsampling stage: depth-to-space, conv, resblock, conv.
#[derive(Clone, Debug)]
pub struct ReconStage {
    pub factor: usize,
    pub conv_in: ConvLayer,
    pub res: ResBlock,
    pub conv_out: ConvLayer,
}

/// Stage factors and widths of the deep reconstruction network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DnetLayout {
    pub factors: Vec<usize>,
    pub widths: Vec<usize>,
}

impl DnetLayout {
    /// Full-scale layout for `B = 32`: factors `B/8, 2, 4`, widths 256, 128, 64.
    pub fn full_scale(block: usize) -> Self {
        DnetLayout {
            factors: vec![block / 8, 2, 4],
            widths: vec![256, 128, 64],
        }
    }

    /// Reduced layout for `B = 8`: two stages with factors `B/2` and 2.
    pub fn desk(block: usize, widths: [usize; 2]) -> Self {
        DnetLayout {
            factors: vec![block / 2, 2],
            widths: widths.to_vec(),
        }
    }

    /// Checks the layout and returns `(cin, cout)` channel counts per stage.
    pub fn channels(&self, block: usize) -> Result<Vec<(usize, usize)>> {
        if self.factors.is_empty() || self.factors.len() != self.widths.len() {
            return Err(Error::invalid(
                "dnet factors and widths must be non-empty and aligned",
            ));
        }
        if self.factors.contains(&0) || self.factors.iter().product::<usize>() != block {
            return Err(Error::Geometry(format!(
                "dnet factors {:?} must multiply to block size {block}",
                self.factors
            )));
        }
        let mut out = Vec::with_capacity(self.factors.len());
        let mut channels = 3 * block * block;
        for (i, &f) in self.factors.iter().enumerate() {
            let cin = channels / (f * f);
            let rest: usize = self.factors[i + 1..].iter().product();
            let cout = 3 * rest * rest;
            out.push((cin, cout));
            channels = cout;
        }
        Ok(out)
    }
}

/// D-net: maps the grid of initial block reconstructions `[1, rows, cols, 3B²]`
/// to an image `[1, H, W, 3]`.
#[derive(Clone, Debug)]
pub struct DeepReconNet {
    pub stages: Vec<ReconStage>,
    pub block: usize,
}

impl DeepReconNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        block: usize,
        layout: &DnetLayout,
        rng: &mut R,
    ) -> Result<Self> {
        let chans = layout.channels(block)?;
        let stages = chans
            .iter()
            .zip(layout.factors.iter().zip(&layout.widths))
            .enumerate()
            .map(|(i, (&(cin, cout), (&factor, &width)))| ReconStage {
                factor,
                conv_in: ConvLayer::same(
                    store,
                    &format!("{name}.s{i}.in"),
                    3,
                    cin,
                    width,
                    true,
                    rng,
                ),
                res: ResBlock::new(store, &format!("{name}.s{i}.res"), width, rng),
                conv_out: ConvLayer::same(
                    store,
                    &format!("{name}.s{i}.out"),
                    3,
                    width,
                    cout,
                    true,
                    rng,
                ),
            })
            .collect::<Vec<ReconStage>>();
        for st in &stages {
            st.conv_in.init_near_identity(store, 0.1);
            st.res.second.scale_kernel(store, 0.1);
            st.conv_out.init_near_identity(store, 0.1);
        }
        Ok(DeepReconNet { stages, block })
    }

    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, grid: Var) -> Result<Var> {
        let s = tape.shape(grid);
        let d = 3 * self.block * self.block;
        if s.len() != 4 || s[3] != d {
            return Err(Error::shape("dnet input", s, &[1, 0, 0, d]));
        }
        let mut h = grid;
        for st in &self.stages {
            h = tape.depth_to_space(h, st.factor)?;
            h = st.conv_in.forward(tape, params, h)?;
            h = st.res.forward(tape, params, h)?;
            h = st.conv_out.forward(tape, params, h)?;
        }
        Ok(h)
    }
}

/// Peak signal-to-noise ratio in decibels; `+inf` for identical inputs.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    if peak <= 0.0 || a.numel() == 0 {
        return Err(Error::invalid("psnr needs peak > 0 and non-empty images"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}
