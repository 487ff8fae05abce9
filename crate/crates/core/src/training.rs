//! Rate-distortion training, gamma calibration and the fixed-ratio baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{average_measurements, BlockGeometry};
use crate::error::{Error, Result};
use crate::model::{BcsModel, FixBcs, ModelConfig, ModelKind, SemBcs};
use crate::params::Adam;
use crate::recon::{psnr, DnetLayout};
use crate::tape::{Tape, Var};
use crate::tensor::ImageTensor;

/// Which reconstruction the distortion term is measured on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistortionTarget {
    /// The refined output of the deep reconstruction network.
    Final,
    /// The initial (linear) reconstruction.
    Initial,
}

impl DistortionTarget {
    pub fn name(self) -> &'static str {
        match self {
            DistortionTarget::Final => "final",
            DistortionTarget::Initial => "initial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "final" => Some(DistortionTarget::Final),
            "initial" => Some(DistortionTarget::Initial),
            _ => None,
        }
    }
}

/// Geometry, budgets, trade-off and optimizer settings of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub height: usize,
    pub width: usize,
    pub block: usize,
    pub n_b: usize,
    pub n_max: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Learning-rate multipliers by parameter-name prefix.
    pub lr_scales: Vec<(String, f64)>,
    pub max_epochs: usize,
    /// Leading epochs trained on the distortion term alone. They are never
    /// selected as the final checkpoint.
    pub warmup_epochs: usize,
    /// Epochs without validation PSNR improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    /// Preferred validation `n_avg`; checkpoint selection favours epochs
    /// within `navg_tolerance` of it.
    pub target_n_avg: Option<f64>,
    pub fen_width: usize,
    pub anet_width: usize,
    pub dnet_factors: Vec<usize>,
    pub dnet_widths: Vec<usize>,
    pub distortion: DistortionTarget,
    pub model: ModelKind,
    /// Measurements per block of the fixed-ratio baseline.
    pub fix_n_avg: Option<usize>,
    /// Accepted `|n_avg - target|` when calibrating gamma.
    pub navg_tolerance: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Epoch budget of each calibration probe.
    pub probe_epochs: usize,
    pub max_probes: usize,
    /// Allowed increase of realized `n_avg` between probes at increasing gamma.
    pub monotone_tolerance: f64,
}

impl RunConfig {
    /// 48x48 images, `B = 8`, `n_b = 6`, `n_max = 24`, narrow networks.
    pub fn desk() -> Self {
        RunConfig {
            height: 48,
            width: 48,
            block: 8,
            n_b: 6,
            n_max: 24,
            gamma: 0.15,
            learning_rate: 3e-4,
            batch_size: 1,
            lr_scales: vec![
                ("sense.".into(), 10.0),
                ("init.".into(), 10.0),
                ("pnet.fen".into(), 2.0),
                ("pnet.head".into(), 9.0),
            ],
            max_epochs: 48,
            warmup_epochs: 12,
            patience: 0,
            seed: 0,
            target_n_avg: None,
            fen_width: 32,
            anet_width: 16,
            dnet_factors: vec![4, 2],
            dnet_widths: vec![16, 8],
            distortion: DistortionTarget::Final,
            model: ModelKind::SemBcs,
            fix_n_avg: None,
            navg_tolerance: 0.25,
            gamma_min: 0.01,
            gamma_max: 1.0,
            probe_epochs: 48,
            max_probes: 6,
            monotone_tolerance: 0.5,
        }
    }

    /// Documented full-scale defaults (224x224, `B = 32`, `n_b = 20`,
    /// `n_max = 200`, FEN width 256, table D-net). Not trained at desk scale.
    pub fn full_scale() -> Self {
        let layout = DnetLayout::full_scale(32);
        RunConfig {
            height: 224,
            width: 224,
            block: 32,
            n_b: 20,
            n_max: 200,
            fen_width: 256,
            anet_width: 256,
            dnet_factors: layout.factors,
            dnet_widths: layout.widths,
            target_n_avg: Some(120.0),
            ..Self::desk()
        }
    }

    pub fn geometry(&self) -> Result<BlockGeometry> {
        BlockGeometry::new(self.height, self.width, self.block)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            geometry: self.geometry()?,
            n_b: self.n_b,
            n_max: self.n_max,
            fen_width: self.fen_width,
            anet_width: self.anet_width,
            dnet: DnetLayout {
                factors: self.dnet_factors.clone(),
                widths: self.dnet_widths.clone(),
            },
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::invalid(
                "batch_size and learning_rate must be positive",
            ));
        }
        if self.lr_scales.iter().any(|(_, f)| !(*f > 0.0)) {
            return Err(Error::invalid("learning-rate multipliers must be positive"));
        }
        if !(self.gamma_min > 0.0 && self.gamma_max > self.gamma_min) {
            return Err(Error::invalid("need 0 < gamma_min < gamma_max"));
        }
        Ok(())
    }
}

/// Training, validation and test images.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<ImageTensor>,
    pub val: Vec<ImageTensor>,
    pub test: Vec<ImageTensor>,
}

/// Graph handles of the rate-distortion objective.
#[derive(Clone, Copy, Debug)]
pub struct RdLoss {
    pub total: Var,
    pub distortion: Var,
    pub rate: Option<Var>,
}

/// `||I - Ĩ||² + gamma * sum(G)`.
pub fn rd_loss(
    tape: &mut Tape,
    image: Var,
    recon: Var,
    scores: Option<Var>,
    gamma: f64,
) -> Result<RdLoss> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    let diff = tape.sub(image, recon)?;
    let distortion = tape.sum_squares(diff);
    let (total, rate) = match scores {
        Some(g) => {
            let rate = tape.sum(g);
            let weighted = tape.scale(rate, gamma);
            (tape.add(distortion, weighted)?, Some(rate))
        }
        None => (distortion, None),
    };
    Ok(RdLoss {
        total,
        distortion,
        rate,
    })
}

/// Per-epoch training and validation statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean squared-error sum per training image.
    pub distortion: f64,
    /// Mean `sum(G)` per training image.
    pub rate: f64,
    pub val_n_avg: f64,
    pub val_r_avg: f64,
    pub val_psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub gamma: f64,
    pub epochs: Vec<EpochStats>,
    /// Index into `epochs` of the restored checkpoint.
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best(&self) -> &EpochStats {
        &self.epochs[self.best_epoch]
    }
}

/// Reconstruction quality and measurement usage over a set of images.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    pub psnr: Vec<f64>,
    /// Stage-two counts per block, one vector per image (empty for fixed-ratio models).
    pub popcounts: Vec<Vec<usize>>,
    pub n_avg: f64,
    pub r_avg: f64,
}

impl EvalStats {
    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len() as f64
    }
}

/// Reconstructs every image and tallies PSNR (peak 1) and measurement usage.
pub fn evaluate<M: BcsModel>(model: &M, images: &[ImageTensor]) -> Result<EvalStats> {
    if images.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let geom = model.config().geometry;
    let mut psnrs = Vec::with_capacity(images.len());
    let mut popcounts = Vec::with_capacity(images.len());
    let mut counts = Vec::new();
    for img in images {
        let (rec, mask) = model.reconstruct(img)?;
        if !rec.is_finite() {
            return Err(Error::Numeric("non-finite reconstruction".into()));
        }
        psnrs.push(psnr(img, &rec, 1.0)?);
        match mask {
            Some(m) => {
                let pc = m.popcounts();
                counts.extend_from_slice(&pc);
                popcounts.push(pc);
            }
            None => {
                counts.extend(std::iter::repeat_n(0, geom.num_blocks()));
                popcounts.push(Vec::new());
            }
        }
    }
    let n_avg = average_measurements(&counts, model.base_measurements())?;
    Ok(EvalStats {
        psnr: psnrs,
        popcounts,
        n_avg,
        r_avg: n_avg / geom.block_dim() as f64,
    })
}

/// Epoch index, `(within rate band, val PSNR)` ranking key, parameters.
type Selected = (usize, (bool, f64), Vec<Vec<f64>>);

/// Joint end-to-end optimization of every parameter of `model`.
///
/// Each epoch shuffles the training set, sums the per-image losses of a batch
/// and takes one Adam step. After each epoch the model is scored on the
/// validation set; the parameters with the best validation PSNR seen after
/// the warm-up are restored at the end. With `target_n_avg` set, epochs whose
/// validation `n_avg` is within `navg_tolerance` of it take precedence.
pub fn fit<M: BcsModel>(
    model: &mut M,
    data: &Dataset,
    config: &RunConfig,
    gamma: f64,
) -> Result<TrainReport> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::invalid(
            "training and validation sets must be non-empty",
        ));
    }
    if !(gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    let geom = model.config().geometry;
    for img in data.train.iter().chain(&data.val) {
        geom.check_image(img)?;
    }
    let in_shape = [1, geom.height(), geom.width(), 3];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
    let mut opt = config
        .lr_scales
        .iter()
        .fold(Adam::new(config.learning_rate), |o, (p, f)| {
            o.with_scale(p, *f)
        });
    let warmup = config
        .warmup_epochs
        .min(config.max_epochs.saturating_sub(1));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<Selected> = None;
    let mut stale = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let weight = if epoch < warmup { 0.0 } else { gamma };
        let (mut dist_sum, mut rate_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            for &idx in batch {
                let mut tape = Tape::new();
                let params = model.store().bind(&mut tape);
                let x = tape.constant(data.train[idx].clone().reshape(&in_shape)?);
                let out = model.forward(&mut tape, &params, x)?;
                let target = match config.distortion {
                    DistortionTarget::Final => out.recon,
                    DistortionTarget::Initial => out.initial,
                };
                let loss = rd_loss(&mut tape, x, target, out.scores, weight)?;
                let total = tape.value(loss.total).data()[0];
                if !total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss diverged at epoch {epoch} (value {total})"
                    )));
                }
                dist_sum += tape.value(loss.distortion).data()[0];
                rate_sum += loss.rate.map_or(0.0, |r| tape.value(r).data()[0]);
                tape.backward(loss.total)?;
                model.store_mut().accumulate_grads(&tape, &params)?;
            }
            opt.step(model.store_mut());
        }

        let val = evaluate(model, &data.val)?;
        let n = data.train.len() as f64;
        let stats = EpochStats {
            epoch,
            distortion: dist_sum / n,
            rate: rate_sum / n,
            val_n_avg: val.n_avg,
            val_r_avg: val.r_avg,
            val_psnr: val.mean_psnr(),
        };
        if epoch < warmup {
            epochs.push(stats);
            continue;
        }
        let key = (
            config
                .target_n_avg
                .is_none_or(|t| (stats.val_n_avg - t).abs() <= config.navg_tolerance),
            stats.val_psnr,
        );
        let improved = best
            .as_ref()
            .is_none_or(|(_, k, _)| key.0 & !k.0 || (key.0 == k.0 && key.1 > k.1));
        if improved {
            best = Some((epochs.len(), key, model.store().snapshot()));
            stale = 0;
        } else {
            stale += 1;
        }
        epochs.push(stats);
        if config.patience > 0 && stale >= config.patience {
            break;
        }
    }

    let (best_epoch, _, snapshot) =
        best.ok_or_else(|| Error::invalid("max_epochs must be at least 1"))?;
    model.store_mut().restore(&snapshot);
    Ok(TrainReport {
        gamma,
        epochs,
        best_epoch,
    })
}

/// Builds a freshly initialised semantic-aware model from `config.seed` and trains it.
pub fn train(data: &Dataset, config: &RunConfig) -> Result<(SemBcs, TrainReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = SemBcs::new(config.model_config()?, &mut rng)?;
    let report = fit(&mut model, data, config, config.gamma)?;
    Ok((model, report))
}

/// Fixed-ratio baseline with `n_avg` measurements per block.
pub fn build_fixbcs(config: &RunConfig, n_avg: usize) -> Result<FixBcs> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    FixBcs::new(config.model_config()?, n_avg, &mut rng)
}

/// Builds and trains the fixed-ratio baseline with the distortion loss only.
pub fn train_fixbcs(
    data: &Dataset,
    config: &RunConfig,
    n_avg: usize,
) -> Result<(FixBcs, TrainReport)> {
    config.validate()?;
    let mut model = build_fixbcs(config, n_avg)?;
    let report = fit(&mut model, data, config, 0.0)?;
    Ok((model, report))
}

/// One training probe of the gamma search.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub gamma: f64,
    pub n_avg: f64,
    pub val_psnr: f64,
}

/// Outcome of [`calibrate_gamma`].
#[derive(Clone, Debug)]
pub struct Calibration {
    pub gamma: f64,
    /// Realized validation `n_avg` at `gamma`, when a probe was run.
    pub achieved_n_avg: Option<f64>,
    pub within_tolerance: bool,
    pub probes: Vec<Probe>,
    /// Model and report of the selected probe.
    pub model: Option<(SemBcs, TrainReport)>,
}

impl Calibration {
    /// Pairs of probes whose realized `n_avg` rises by more than `tolerance`
    /// as gamma increases.
    pub fn monotone_violations(&self, tolerance: f64) -> Vec<(Probe, Probe)> {
        let mut sorted = self.probes.clone();
        sorted.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
        let mut out = Vec::new();
        for (i, lo) in sorted.iter().enumerate() {
            for hi in &sorted[i + 1..] {
                if hi.gamma > lo.gamma && hi.n_avg > lo.n_avg + tolerance {
                    out.push((lo.clone(), hi.clone()));
                }
            }
        }
        out
    }
}

/// Bisection over `log(gamma)` on `[gamma_min, gamma_max]` with short training
/// probes until the realized validation `n_avg` is within `tolerance` of
/// `target`. Unreachable targets return the nearest probe.
pub fn calibrate_gamma(
    data: &Dataset,
    config: &RunConfig,
    target: f64,
    tolerance: f64,
) -> Result<Calibration> {
    config.validate()?;
    let (n_b, n_max) = (config.n_b as f64, config.n_max as f64);
    if !(target >= n_b && target <= n_b + n_max) {
        return Err(Error::invalid(format!(
            "target n_avg {target} outside [{n_b}, {}]",
            n_b + n_max
        )));
    }
    // Limit cases need no probe: no gamma can go below n_b or above n_b + n_max.
    if target <= n_b + tolerance {
        return Ok(Calibration {
            gamma: config.gamma_max,
            achieved_n_avg: None,
            within_tolerance: true,
            probes: Vec::new(),
            model: None,
        });
    }
    if target >= n_b + n_max - tolerance {
        return Ok(Calibration {
            gamma: 0.0,
            achieved_n_avg: None,
            within_tolerance: true,
            probes: Vec::new(),
            model: None,
        });
    }

    let probe_cfg = RunConfig {
        max_epochs: config.probe_epochs,
        target_n_avg: Some(target),
        navg_tolerance: tolerance,
        ..config.clone()
    };
    let (mut lo, mut hi) = (config.gamma_min.ln(), config.gamma_max.ln());
    let mut probes = Vec::new();
    let mut nearest: Option<(f64, SemBcs, TrainReport)> = None;
    for _ in 0..config.max_probes {
        let gamma = ((lo + hi) / 2.0).exp();
        let (model, report) = train(
            data,
            &RunConfig {
                gamma,
                ..probe_cfg.clone()
            },
        )?;
        let n_avg = report.best().val_n_avg;
        probes.push(Probe {
            gamma,
            n_avg,
            val_psnr: report.best().val_psnr,
        });
        let err = (n_avg - target).abs();
        if nearest.as_ref().is_none_or(|(e, _, _)| err < *e) {
            nearest = Some((err, model, report));
        }
        if err <= tolerance {
            break;
        }
        if n_avg > target {
            lo = gamma.ln();
        } else {
            hi = gamma.ln();
        }
    }
    let (err, model, report) = nearest.expect("max_probes >= 1");
    Ok(Calibration {
        gamma: report.gamma,
        achieved_n_avg: Some(report.best().val_n_avg),
        within_tolerance: err <= tolerance,
        probes,
        model: Some((model, report)),
    })
}

/// Calibrates gamma, then trains at the full epoch budget. When the probe
/// budget already equals the full budget the selected probe is reused, since
/// a re-run with the same seed is bit-identical.
pub fn train_calibrated(
    data: &Dataset,
    config: &RunConfig,
    target: f64,
    tolerance: f64,
) -> Result<(SemBcs, TrainReport, Calibration)> {
    let mut cal = calibrate_gamma(data, config, target, tolerance)?;
    let reuse = config.probe_epochs == config.max_epochs;
    match cal.model.take() {
        Some((model, report)) if reuse => Ok((model, report, cal)),
        _ => {
            let cfg = RunConfig {
                gamma: cal.gamma,
                target_n_avg: Some(target),
                navg_tolerance: tolerance,
                ..config.clone()
            };
            let (model, report) = train(data, &cfg)?;
            Ok((model, report, cal))
        }
    }
}
