//! End-to-end sensing/reconstruction models: the semantic-aware two-stage
//! system and the fixed-ratio baseline.

use rand::Rng;

use crate::blocks::{
    select_rows, sense_base, split_blocks, BlockGeometry, BlockMeasurements, MeasurementMatrix,
    MeasurementSet, SensingBank,
};
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::policy::{apply_mask, binarize, BlockMask, PolicyNet};
use crate::recon::{
    initial_reconstruct, initial_reconstruct_block, DeepReconNet, DnetLayout, InitBank,
    WeightGenNet,
};
use crate::tape::{Tape, Var};
use crate::tensor::{ImageTensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    SemBcs,
    FixBcs,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SemBcs => "sembcs",
            ModelKind::FixBcs => "fixbcs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sembcs" => Some(ModelKind::SemBcs),
            "fixbcs" => Some(ModelKind::FixBcs),
            _ => None,
        }
    }
}

/// Architecture hyperparameters shared by both models.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub geometry: BlockGeometry,
    pub n_b: usize,
    pub n_max: usize,
    pub fen_width: usize,
    pub anet_width: usize,
    pub dnet: DnetLayout,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.geometry.block_dim();
        if self.n_b == 0 || self.n_max == 0 || self.n_b + self.n_max > d {
            return Err(Error::invalid(format!(
                "need n_b >= 1, n_max >= 1 and n_b + n_max <= {d}"
            )));
        }
        if self.fen_width == 0 || self.anet_width == 0 {
            return Err(Error::invalid("network widths must be positive"));
        }
        self.dnet.channels(self.geometry.block())?;
        Ok(())
    }
}

/// Graph handles produced by a forward pass over one image.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Final reconstruction `[1, H, W, 3]`.
    pub recon: Var,
    /// Initial reconstruction image `[1, H, W, 3]`.
    pub initial: Var,
    /// Policy scores `G` (semantic-aware model only).
    pub scores: Option<Var>,
    /// Hard mask `M` (semantic-aware model only).
    pub mask: Option<Var>,
}

/// Common interface of trainable block-sensing models.
pub trait BcsModel {
    fn kind(&self) -> ModelKind;
    fn config(&self) -> &ModelConfig;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Measurements every block receives regardless of any mask.
    fn base_measurements(&self) -> usize;
    /// Training-path forward of one image `[1, H, W, 3]`.
    fn forward(&self, tape: &mut Tape, params: &BoundParams, image: Var) -> Result<Forward>;

    /// Untracked reconstruction of `[H, W, 3]`, with the mask when there is one.
    fn reconstruct(&self, image: &ImageTensor) -> Result<(ImageTensor, Option<BlockMask>)> {
        let g = self.config().geometry;
        g.check_image(image)?;
        let mut tape = Tape::new();
        let params = self.store().bind(&mut tape);
        let x = tape.constant(image.clone().reshape(&[1, g.height(), g.width(), 3])?);
        let out = self.forward(&mut tape, &params, x)?;
        let recon = tape
            .value(out.recon)
            .clone()
            .with_requires_grad(false)
            .reshape(&g.image_shape())?;
        let mask = match out.mask {
            Some(m) => Some(BlockMask::from_tensor(
                tape.value(m).clone().with_requires_grad(false).reshape(&[
                    g.rows(),
                    g.cols(),
                    self.config().n_max,
                ])?,
            )?),
            None => None,
        };
        Ok((recon, mask))
    }
}

/// Where the training-path mask comes from.
#[derive(Clone, Debug, Default)]
pub enum MaskSource {
    /// `M = binarize(G)`.
    #[default]
    Policy,
    /// A frozen mask `[1, rows, cols, n_max]`.
    Fixed(Tensor),
    /// `M = mask + (G - scores)` with both tensors frozen: numerically equal to
    /// `mask` at the point where `scores` were taken, with exact derivative
    /// equal to the straight-through gradient.
    Linearized { mask: Tensor, scores: Tensor },
}

/// Where the per-block reconstruction weights come from.
#[derive(Clone, Debug, Default)]
pub enum WeightSource {
    #[default]
    Generated,
    /// Frozen `[1, rows, cols, n_max²]`.
    Fixed(Tensor),
}

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    pub mask: MaskSource,
    pub weights: WeightSource,
}

/// Every intermediate of the semantic-aware training path.
#[derive(Clone, Copy, Debug)]
pub struct SemForward {
    pub base: Var,
    pub scores: Var,
    pub features: Var,
    pub mask: Var,
    pub full: Var,
    pub stage_two: Var,
    pub weights: Var,
    pub xhat_grid: Var,
    pub initial: Var,
    pub recon: Var,
}

/// The semantic-aware two-stage block sensing system.
#[derive(Clone, Debug)]
pub struct SemBcs {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub phi_b: ParamId,
    pub phi_f: ParamId,
    pub policy: PolicyNet,
    pub anet: WeightGenNet,
    pub init: InitBank,
    pub dnet: DeepReconNet,
}

fn dc_aware_kernel<R: Rng + ?Sized>(rows: usize, geom: &BlockGeometry, rng: &mut R) -> Tensor {
    MeasurementMatrix::dc_aware(rows, geom.block_dim(), rng)
        .to_kernel(geom.block())
        .expect("block_dim matches block")
}

impl SemBcs {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let g = config.geometry;
        let mut store = ParamStore::new();
        let phi_b = store.add("sense.phi_b", dc_aware_kernel(config.n_b, &g, rng));
        let mut f = MeasurementMatrix::gaussian(config.n_max, g.block_dim(), rng);
        f.remove_channel_means();
        let phi_f = store.add("sense.phi_f", f.to_kernel(g.block())?);
        let policy = PolicyNet::new(&mut store, config.n_b, config.fen_width, config.n_max, rng);
        let anet = WeightGenNet::new(
            &mut store,
            config.fen_width,
            config.anet_width,
            config.n_max,
            rng,
        );
        let init = InitBank::new(
            &mut store,
            "init",
            config.n_b,
            config.n_max,
            g.block_dim(),
            rng,
        );
        let dnet = DeepReconNet::new(&mut store, "dnet", g.block(), &config.dnet, rng)?;
        Ok(SemBcs {
            config,
            store,
            phi_b,
            phi_f,
            policy,
            anet,
            init,
            dnet,
        })
    }

    pub fn sensing_bank(&self) -> SensingBank {
        SensingBank {
            phi_b: MeasurementMatrix::from_kernel(self.store.get(self.phi_b)).expect("kernel"),
            phi_f: MeasurementMatrix::from_kernel(self.store.get(self.phi_f)).expect("kernel"),
            phi_bf: None,
        }
    }

    /// Replaces the sensing matrices.
    pub fn set_sensing(
        &mut self,
        phi_b: &MeasurementMatrix,
        phi_f: &MeasurementMatrix,
    ) -> Result<()> {
        let b = self.config.geometry.block();
        let kb = phi_b.to_kernel(b)?;
        let kf = phi_f.to_kernel(b)?;
        for (id, k) in [(self.phi_b, kb), (self.phi_f, kf)] {
            let dst = self.store.get_mut(id);
            if dst.shape() != k.shape() {
                return Err(Error::shape("set_sensing", dst.shape(), k.shape()));
            }
            dst.data_mut().copy_from_slice(k.data());
        }
        Ok(())
    }

    /// Training path with optional frozen mask or weights.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        image: Var,
        opts: &ForwardOptions,
    ) -> Result<SemForward> {
        let g = self.config.geometry;
        let b = g.block();
        let grid = [1, g.rows(), g.cols()];
        let expect = [1, g.height(), g.width(), 3];
        if tape.shape(image) != expect {
            return Err(Error::shape("sembcs input", tape.shape(image), &expect));
        }
        let base = tape.conv2d(image, params.var(self.phi_b), None, b, Padding::Valid)?;
        let (scores, features) = self.policy.forward(tape, params, base)?;
        let check = |t: &Tensor, c: usize| -> Result<()> {
            let want = [grid[0], grid[1], grid[2], c];
            if t.shape() != want {
                return Err(Error::shape("forward override", t.shape(), &want));
            }
            Ok(())
        };
        let mask = match &opts.mask {
            MaskSource::Policy => tape.binarize(scores),
            MaskSource::Fixed(m) => {
                check(m, self.config.n_max)?;
                tape.constant(m.clone())
            }
            MaskSource::Linearized { mask, scores: s0 } => {
                check(mask, self.config.n_max)?;
                check(s0, self.config.n_max)?;
                let m0 = tape.constant(mask.clone());
                let s0 = tape.constant(s0.clone());
                let delta = tape.sub(scores, s0)?;
                tape.add(m0, delta)?
            }
        };
        let full = tape.conv2d(image, params.var(self.phi_f), None, b, Padding::Valid)?;
        let stage_two = apply_mask(tape, full, mask)?;
        let weights = match &opts.weights {
            WeightSource::Generated => self.anet.forward(tape, params, features)?,
            WeightSource::Fixed(w) => {
                check(w, self.config.n_max * self.config.n_max)?;
                tape.constant(w.clone())
            }
        };
        let xhat_grid =
            initial_reconstruct(tape, base, stage_two, weights, params.var(self.init.kernel))?;
        let initial = tape.depth_to_space(xhat_grid, b)?;
        let recon = self.dnet.forward(tape, params, xhat_grid)?;
        Ok(SemForward {
            base,
            scores,
            features,
            mask,
            full,
            stage_two,
            weights,
            xhat_grid,
            initial,
            recon,
        })
    }

    /// Test-path encoder: base sensing, policy, then per-block sensing with
    /// only the selected rows of `phi_f`.
    pub fn encode(&self, image: &ImageTensor) -> Result<MeasurementSet> {
        let g = self.config.geometry;
        let bank = self.sensing_bank();
        let base = sense_base(image, &bank, &g)?;
        let (scores, _) = self.policy.evaluate(&self.store, &base)?;
        let mask = binarize(&scores)?;
        let grid = split_blocks(image, &g)?;
        let d = g.block_dim();
        let n_b = self.config.n_b;
        let mut blocks = Vec::with_capacity(g.num_blocks());
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let idx = i * g.cols() + j;
                let bits = mask.bits(i, j);
                let phi_s = select_rows(&bank, &bits)?;
                let x = &grid.data()[idx * d..(idx + 1) * d];
                blocks.push(BlockMeasurements {
                    mask: bits,
                    base: base.data()[idx * n_b..(idx + 1) * n_b].to_vec(),
                    selected: phi_s.apply(x)?,
                });
            }
        }
        Ok(MeasurementSet {
            geometry: g,
            n_b,
            n_max: self.config.n_max,
            blocks,
        })
    }

    /// Test-path decoder. Recomputes the policy from the base measurements,
    /// checks it agrees with the transmitted masks, and reconstructs with
    /// mask-selected columns of the generated weights.
    pub fn decode(&self, meas: &MeasurementSet) -> Result<Decoded> {
        meas.validate()?;
        let g = self.config.geometry;
        if meas.geometry != g || meas.n_b != self.config.n_b || meas.n_max != self.config.n_max {
            return Err(Error::Geometry(
                "measurement header does not match the model".into(),
            ));
        }
        let (n_b, n_max) = (self.config.n_b, self.config.n_max);
        let base_data: Vec<f64> = meas
            .blocks
            .iter()
            .flat_map(|b| b.base.iter().copied())
            .collect();
        let base = Tensor::from_vec(&[g.rows(), g.cols(), n_b], base_data)?;
        let (scores, features) = self.policy.evaluate(&self.store, &base)?;
        let mask = binarize(&scores)?;
        let weights = self.anet.evaluate(&self.store, &features)?;
        let theta_b = self.init.theta_b(&self.store);
        let theta_s = self.init.theta_s(&self.store);
        let d = g.block_dim();
        let mut grid = Vec::with_capacity(g.num_blocks() * d);
        for (idx, blk) in meas.blocks.iter().enumerate() {
            let (i, j) = (idx / g.cols(), idx % g.cols());
            if mask.bits(i, j) != blk.mask {
                return Err(Error::Geometry(format!(
                    "block ({i}, {j}) mask disagrees with the policy decision"
                )));
            }
            let w = &weights.data()[idx * n_max * n_max..(idx + 1) * n_max * n_max];
            grid.extend(initial_reconstruct_block(
                &blk.base,
                &blk.selected,
                &blk.mask,
                w,
                &theta_b,
                &theta_s,
            )?);
        }
        let xhat_grid = Tensor::from_vec(&[g.rows(), g.cols(), d], grid)?;
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape);
        let x = tape.constant(xhat_grid.clone().reshape(&[1, g.rows(), g.cols(), d])?);
        let y = self.dnet.forward(&mut tape, &params, x)?;
        let image = tape
            .value(y)
            .clone()
            .with_requires_grad(false)
            .reshape(&g.image_shape())?;
        Ok(Decoded {
            xhat_grid,
            image,
            mask,
        })
    }
}

/// Output of [`SemBcs::decode`].
#[derive(Clone, Debug)]
pub struct Decoded {
    pub xhat_grid: Tensor,
    pub image: ImageTensor,
    pub mask: BlockMask,
}

impl BcsModel for SemBcs {
    fn kind(&self) -> ModelKind {
        ModelKind::SemBcs
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn base_measurements(&self) -> usize {
        self.config.n_b
    }

    fn forward(&self, tape: &mut Tape, params: &BoundParams, image: Var) -> Result<Forward> {
        let f = self.forward_with(tape, params, image, &ForwardOptions::default())?;
        Ok(Forward {
            recon: f.recon,
            initial: f.initial,
            scores: Some(f.scores),
            mask: Some(f.mask),
        })
    }
}

/// Fixed-ratio baseline: a single stride-`B` sensing convolution with `n_avg`
/// channels, a bias-free 1x1 decoder to `3B²` channels, and the same D-net.
#[derive(Clone, Debug)]
pub struct FixBcs {
    pub config: ModelConfig,
    pub n_avg: usize,
    pub store: ParamStore,
    pub phi: ParamId,
    pub theta: ParamId,
    pub dnet: DeepReconNet,
}

impl FixBcs {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, n_avg: usize, rng: &mut R) -> Result<Self> {
        let g = config.geometry;
        let d = g.block_dim();
        if n_avg == 0 || n_avg > d {
            return Err(Error::invalid(format!("n_avg {n_avg} must lie in 1..={d}")));
        }
        config.dnet.channels(g.block())?;
        let mut store = ParamStore::new();
        let phi = store.add("sense.phi", dc_aware_kernel(n_avg, &g, rng));
        let theta = store.add(
            "init.theta",
            Tensor::randn(&[1, 1, n_avg, d], (1.0 / d as f64).sqrt(), rng),
        );
        let dnet = DeepReconNet::new(&mut store, "dnet", g.block(), &config.dnet, rng)?;
        Ok(FixBcs {
            config,
            n_avg,
            store,
            phi,
            theta,
            dnet,
        })
    }

    pub fn sensing_matrix(&self) -> MeasurementMatrix {
        MeasurementMatrix::from_kernel(self.store.get(self.phi)).expect("kernel")
    }
}

impl BcsModel for FixBcs {
    fn kind(&self) -> ModelKind {
        ModelKind::FixBcs
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn base_measurements(&self) -> usize {
        self.n_avg
    }

    fn forward(&self, tape: &mut Tape, params: &BoundParams, image: Var) -> Result<Forward> {
        let g = self.config.geometry;
        let expect = [1, g.height(), g.width(), 3];
        if tape.shape(image) != expect {
            return Err(Error::shape("fixbcs input", tape.shape(image), &expect));
        }
        let y = tape.conv2d(image, params.var(self.phi), None, g.block(), Padding::Valid)?;
        let xhat_grid = tape.conv2d(y, params.var(self.theta), None, 1, Padding::Valid)?;
        let initial = tape.depth_to_space(xhat_grid, g.block())?;
        let recon = self.dnet.forward(tape, params, xhat_grid)?;
        Ok(Forward {
            recon,
            initial,
            scores: None,
            mask: None,
        })
    }
}

/// Either model, as restored from a checkpoint.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum AnyModel {
    Sem(SemBcs),
    Fix(FixBcs),
}

impl BcsModel for AnyModel {
    fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Sem(m) => m.kind(),
            AnyModel::Fix(m) => m.kind(),
        }
    }

    fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::Sem(m) => m.config(),
            AnyModel::Fix(m) => m.config(),
        }
    }

    fn store(&self) -> &ParamStore {
        match self {
            AnyModel::Sem(m) => m.store(),
            AnyModel::Fix(m) => m.store(),
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            AnyModel::Sem(m) => m.store_mut(),
            AnyModel::Fix(m) => m.store_mut(),
        }
    }

    fn base_measurements(&self) -> usize {
        match self {
            AnyModel::Sem(m) => m.base_measurements(),
            AnyModel::Fix(m) => m.base_measurements(),
        }
    }

    fn forward(&self, tape: &mut Tape, params: &BoundParams, image: Var) -> Result<Forward> {
        match self {
            AnyModel::Sem(m) => m.forward(tape, params, image),
            AnyModel::Fix(m) => m.forward(tape, params, image),
        }
    }
}
