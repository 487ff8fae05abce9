//! The fixed-ratio baseline is the semantic-aware model with a frozen leading
//! mask and identity reconstruction weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sembcs::{
    BcsModel, BlockMask, FixBcs, ForwardOptions, MaskSource, MeasurementMatrix, RunConfig, SemBcs,
    Tape, Tensor, WeightSource,
};

fn copy_into_fix(sem: &SemBcs, extra: usize) -> FixBcs {
    let cfg = sem.config().clone();
    let (n_b, d, b) = (cfg.n_b, cfg.geometry.block_dim(), cfg.geometry.block());
    let mut fix = FixBcs::new(cfg, n_b + extra, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let bank = sem.sensing_bank();
    let mut rows = bank.phi_b.data().to_vec();
    rows.extend_from_slice(&bank.phi_f.data()[..extra * d]);
    let phi = MeasurementMatrix::new(n_b + extra, d, rows).unwrap();
    *fix.store_mut().by_name_mut("sense.phi").unwrap() = phi.to_kernel(b).unwrap();
    let theta = sem.store().by_name("init.theta").unwrap().data()[..(n_b + extra) * d].to_vec();
    *fix.store_mut().by_name_mut("init.theta").unwrap() =
        Tensor::from_vec(&[1, 1, n_b + extra, d], theta).unwrap();
    let names: Vec<String> = sem
        .store()
        .names()
        .filter(|n| n.starts_with("dnet."))
        .map(String::from)
        .collect();
    for n in names {
        *fix.store_mut().by_name_mut(&n).unwrap() = sem.store().by_name(&n).unwrap().clone();
    }
    fix
}

#[test]
fn fixbcs_is_frozen_sembcs() {
    let cfg = RunConfig::desk().model_config().unwrap();
    let sem = SemBcs::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let image = Tensor::rand_uniform(&[48, 48, 3], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(6));
    let (rows, cols, n_max) = (cfg.geometry.rows(), cfg.geometry.cols(), cfg.n_max);
    for extra in [1, 4, n_max] {
        let fix = copy_into_fix(&sem, extra);
        let mask = BlockMask::leading(rows, cols, n_max, extra).into_tensor();
        let eye = Tensor::eye(n_max);
        let weights: Vec<f64> = (0..rows * cols).flat_map(|_| eye.data().to_vec()).collect();
        let opts = ForwardOptions {
            mask: MaskSource::Fixed(mask.reshape(&[1, rows, cols, n_max]).unwrap()),
            weights: WeightSource::Fixed(
                Tensor::from_vec(&[1, rows, cols, n_max * n_max], weights).unwrap(),
            ),
        };
        let mut tape = Tape::new();
        let p = sem.store().bind(&mut tape);
        let x = tape.constant(image.clone().reshape(&[1, 48, 48, 3]).unwrap());
        let f = sem.forward_with(&mut tape, &p, x, &opts).unwrap();
        let sem_out = tape.value(f.recon).data().to_vec();

        let (fix_out, mask) = fix.reconstruct(&image).unwrap();
        assert!(mask.is_none());
        let scale = fix_out.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = fix_out
            .data()
            .iter()
            .zip(&sem_out)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            err <= 1e-10 * scale,
            "extra rows {extra}: deviation {err:e}"
        );
    }
}
