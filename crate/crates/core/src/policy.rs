//! Policy network over base measurements, hard row-selection masks and the
//! straight-through path from masks back to scores.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::ConvLayer;
use crate::params::{BoundParams, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-block 0-1 row-selection vectors, stored as `[rows, cols, n_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMask(Tensor);

impl BlockMask {
    /// Validates that every entry is exactly 0 or 1.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.ndim() != 3 {
            return Err(Error::shape("block mask", t.shape(), &[0, 0, 0]));
        }
        if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        Ok(BlockMask(t))
    }

    pub fn zeros(rows: usize, cols: usize, n_max: usize) -> Self {
        BlockMask(Tensor::zeros(&[rows, cols, n_max]))
    }

    pub fn ones(rows: usize, cols: usize, n_max: usize) -> Self {
        BlockMask(Tensor::full(&[rows, cols, n_max], 1.0))
    }

    /// Every block selects the first `count` rows.
    pub fn leading(rows: usize, cols: usize, n_max: usize, count: usize) -> Self {
        let mut t = Tensor::zeros(&[rows, cols, n_max]);
        for blk in t.data_mut().chunks_exact_mut(n_max) {
            blk[..count.min(n_max)].fill(1.0);
        }
        BlockMask(t)
    }

    pub fn rows(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn n_max(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Mask bits of block `(i, j)`.
    pub fn bits(&self, i: usize, j: usize) -> Vec<bool> {
        let n = self.n_max();
        let off = (i * self.cols() + j) * n;
        self.0.data()[off..off + n]
            .iter()
            .map(|&v| v == 1.0)
            .collect()
    }

    /// Number of selected rows `n_s` of block `(i, j)`.
    pub fn popcount(&self, i: usize, j: usize) -> usize {
        self.bits(i, j).into_iter().filter(|&b| b).count()
    }

    /// `n_s` for every block in row-major order.
    pub fn popcounts(&self) -> Vec<usize> {
        self.0
            .data()
            .chunks_exact(self.n_max())
            .map(|b| b.iter().filter(|&&v| v == 1.0).count())
            .collect()
    }
}

/// `1` strictly above 0.5, `0` otherwise (ties map to 0).
pub fn binarize(scores: &Tensor) -> Result<BlockMask> {
    if !scores.is_finite() {
        return Err(Error::Numeric("non-finite policy scores".into()));
    }
    let data = scores
        .data()
        .iter()
        .map(|&g| if g > 0.5 { 1.0 } else { 0.0 })
        .collect();
    BlockMask::from_tensor(Tensor::from_vec(scores.shape(), data)?)
}

/// `E = D ⊙ M` on the tape; gradients reach both `D` and (straight-through) the scores.
pub fn apply_mask(tape: &mut Tape, full: Var, mask: Var) -> Result<Var> {
    tape.mul(full, mask)
}

/// P-net: three same-padded `3x3` convolutions with rectifiers (the feature
/// extractor), then a `3x3` head to `n_max` channels and a sigmoid.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub fen: [ConvLayer; 3],
    pub head: ConvLayer,
    pub n_b: usize,
    pub n_max: usize,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_b: usize,
        width: usize,
        n_max: usize,
        rng: &mut R,
    ) -> Self {
        let fen = [
            ConvLayer::same(store, "pnet.fen0", 3, n_b, width, true, rng),
            ConvLayer::same(store, "pnet.fen1", 3, width, width, true, rng),
            ConvLayer::same(store, "pnet.fen2", 3, width, width, true, rng),
        ];
        let head = ConvLayer::same(store, "pnet.head", 3, width, n_max, true, rng);
        for layer in fen.iter().chain([&head]) {
            layer.emphasize_centre(store, 3.0, 0.1);
        }
        PolicyNet {
            fen,
            head,
            n_b,
            n_max,
        }
    }

    pub fn fen_width(&self) -> usize {
        self.fen[2].cout
    }

    /// Returns `(G, features)` for base measurements `C [1, rows, cols, n_b]`.
    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, base: Var) -> Result<(Var, Var)> {
        let s = tape.shape(base);
        if s.len() != 4 || s[3] != self.n_b {
            return Err(Error::shape("pnet input", s, &[1, 0, 0, self.n_b]));
        }
        let mut h = base;
        for layer in &self.fen {
            let z = layer.forward(tape, params, h)?;
            h = tape.relu(z);
        }
        let logits = self.head.forward(tape, params, h)?;
        Ok((tape.sigmoid(logits), h))
    }

    /// Untracked evaluation on `[rows, cols, n_b]`, returning `(G, features)`
    /// without the leading batch axis.
    pub fn evaluate(&self, store: &ParamStore, base: &Tensor) -> Result<(Tensor, Tensor)> {
        let s = base.shape();
        if s.len() != 3 {
            return Err(Error::shape("pnet input", s, &[0, 0, self.n_b]));
        }
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let c = tape.constant(base.clone().reshape(&[1, s[0], s[1], s[2]])?);
        let (g, f) = self.forward(&mut tape, &params, c)?;
        let strip = |t: &Tensor| {
            let sh = t.shape();
            t.clone()
                .reshape(&sh[1..])
                .map(|t| t.with_requires_grad(false))
        };
        Ok((strip(tape.value(g))?, strip(tape.value(f))?))
    }
}
