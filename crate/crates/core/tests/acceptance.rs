//! End-to-end acceptance criteria. Every test writes one
//! `criterion N ...: PASS|FAIL` line to stderr (uncaptured) before asserting.

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sembcs::io::checkpoint::Checkpoint;
use sembcs::oracle::{
    block_sparsity_levels, build_dct_dictionary, omp_solve, spearman, DEFAULT_THRESHOLD,
};
use sembcs::recon::{initial_reconstruct, initial_reconstruct_block};
use sembcs::synth::{dataset, SynthConfig};
use sembcs::{
    average_ratio, evaluate, sense_conv, train, train_calibrated, train_fixbcs, BcsModel,
    BlockGeometry, BlockMask, Dataset, DnetLayout, ForwardOptions, MaskSource, MeasurementMatrix,
    ModelConfig, Padding, RunConfig, SemBcs, Tape, Tensor, TrainReport, Var,
};

fn report(id: u32, name: &str, pass: bool, detail: &str) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {id:>2} {name}: {verdict} ({detail})");
    pass
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale.max(f64::MIN_POSITIVE)
}

fn desk_model(seed: u64) -> SemBcs {
    let cfg = RunConfig::desk().model_config().unwrap();
    SemBcs::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn criterion_01_train_test_paths_agree() {
    let mut worst = 0.0f64;
    let mut mixed = 0;
    for draw in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
        let mut model = desk_model(draw);
        // Shift the head so that masks range from sparse to dense across draws.
        let shift = rng.gen_range(-0.6..0.6);
        model
            .store_mut()
            .by_name_mut("pnet.head.bias")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|b| *b += shift);
        let image = Tensor::rand_uniform(&[48, 48, 3], 0.0, 1.0, &mut rng);

        let mut tape = Tape::new();
        let p = model.store().bind(&mut tape);
        let x = tape.constant(image.clone().reshape(&[1, 48, 48, 3]).unwrap());
        let f = model
            .forward_with(&mut tape, &p, x, &ForwardOptions::default())
            .unwrap();
        let train_xhat = tape.value(f.xhat_grid).data().to_vec();

        let decoded = model.decode(&model.encode(&image).unwrap()).unwrap();
        worst = worst.max(rel_err(decoded.xhat_grid.data(), &train_xhat));
        let ones: usize = decoded.mask.popcounts().iter().sum();
        if ones > 0 && ones < 36 * 24 {
            mixed += 1;
        }
    }
    let pass = worst <= 1e-10 && mixed >= 50;
    assert!(report(
        1,
        "train/test path equivalence",
        pass,
        &format!("max relative error {worst:.2e} over 100 draws, {mixed} with mixed masks")
    ));
}

#[test]
fn criterion_02_conv_sensing_equals_matvec() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let b = [2usize, 4, 8][rng.gen_range(0..3)];
        let (rows, cols) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let d = 3 * b * b;
        let m = rng.gen_range(1..=d);
        let g = BlockGeometry::new(rows * b, cols * b, b).unwrap();
        let phi = MeasurementMatrix::gaussian(m, d, &mut rng);
        let image = Tensor::randn(&[rows * b, cols * b, 3], 1.0, &mut rng);
        let got = sense_conv(&image, &phi, &g).unwrap();
        let w = cols * b;
        let mut expect = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                for r in 0..m {
                    let mut acc = 0.0;
                    for dy in 0..b {
                        for dx in 0..b {
                            for c in 0..3 {
                                let px = image.data()[((i * b + dy) * w + j * b + dx) * 3 + c];
                                acc += phi.row(r)[(dy * b + dx) * 3 + c] * px;
                            }
                        }
                    }
                    expect.push(acc);
                }
            }
        }
        let err = got
            .data()
            .iter()
            .zip(&expect)
            .map(|(a, e)| (a - e).abs() / e.abs().max(1.0))
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }
    assert!(report(
        2,
        "conv sensing equivalence",
        worst <= 1e-12,
        &format!("max error {worst:.2e} over 50 cases")
    ));
}

const H: f64 = 1e-5;

/// Relative L2 error between analytic and central-difference gradients of
/// `sum(f(inputs) ⊙ R)` for every input.
fn op_fd_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let weights = |tape: &Tape, out: Var| {
        Tensor::randn(tape.shape(out), 1.0, &mut ChaCha8Rng::seed_from_u64(77))
    };
    let loss = |tape: &mut Tape, out: Var| {
        let r = weights(tape, out);
        let r = tape.constant(r);
        let p = tape.mul(out, r).unwrap();
        tape.sum(p)
    };
    let eval = |vals: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let l = loss(&mut tape, out);
        tape.value(l).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars);
    let l = loss(&mut tape, out);
    tape.backward(l).unwrap();
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap().to_vec();
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|k| {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[k] += H;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[k] -= H;
                (eval(&plus) - eval(&minus)) / (2.0 * H)
            })
            .collect();
        worst = worst.max(l2_rel(&analytic, &numeric));
    }
    worst
}

fn l2_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        geometry: BlockGeometry::new(8, 8, 4).unwrap(),
        n_b: 4,
        n_max: 6,
        fen_width: 4,
        anet_width: 4,
        dnet: DnetLayout {
            factors: vec![2, 2],
            widths: vec![4, 4],
        },
    }
}

/// Loss of the whole graph with a linearized mask frozen at `(mask, scores)`.
fn graph_loss(
    model: &SemBcs,
    image: &Tensor,
    opts: &ForwardOptions,
    tape: &mut Tape,
) -> (Var, sembcs::BoundParams) {
    let p = model.store().bind(tape);
    let x = tape.constant(image.clone());
    let f = model.forward_with(tape, &p, x, opts).unwrap();
    let l = sembcs::rd_loss(tape, x, f.recon, Some(f.scores), 0.3).unwrap();
    (l.total, p)
}

#[test]
fn criterion_03_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut t = |s: &[usize], std: f64| Tensor::randn(s, std, &mut r);
    let (x4, k33, b4) = (t(&[1, 5, 5, 2], 1.0), t(&[3, 3, 2, 4], 1.0), t(&[4], 1.0));
    let (xs, ks) = (t(&[1, 6, 6, 3], 1.0), t(&[3, 3, 3, 2], 1.0));
    let (ma, mb) = (t(&[4, 5], 1.0), t(&[5, 3], 1.0));
    let (ba, bb) = (t(&[3, 4, 4], 1.0), t(&[3, 4, 2], 1.0));
    let (d2s, s2d) = (t(&[1, 2, 3, 8], 1.0), t(&[1, 4, 6, 3], 1.0));
    let (ea, eb) = (t(&[2, 3], 1.0), t(&[2, 3], 1.0));
    let (ca, cb) = (t(&[1, 2, 2, 3], 1.0), t(&[1, 2, 2, 2], 1.0));
    let relu_in = Tensor::from_vec(&[2, 3], vec![0.7, -0.3, 1.2, -2.0, 0.05, -0.05]).unwrap();

    let mut ops: Vec<(&str, f64)> = vec![
        (
            "conv2d same",
            op_fd_error(&[x4.clone(), k33, b4], |t, v| {
                t.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Same).unwrap()
            }),
        ),
        (
            "conv2d strided",
            op_fd_error(&[xs, ks], |t, v| {
                t.conv2d(v[0], v[1], None, 3, Padding::Valid).unwrap()
            }),
        ),
        (
            "matmul",
            op_fd_error(&[ma, mb], |t, v| t.matmul(v[0], v[1]).unwrap()),
        ),
        (
            "batch_matmul",
            op_fd_error(&[ba, bb], |t, v| t.batch_matmul(v[0], v[1]).unwrap()),
        ),
        (
            "depth_to_space",
            op_fd_error(&[d2s], |t, v| t.depth_to_space(v[0], 2).unwrap()),
        ),
        (
            "space_to_depth",
            op_fd_error(&[s2d], |t, v| t.space_to_depth(v[0], 2).unwrap()),
        ),
        (
            "add",
            op_fd_error(&[ea.clone(), eb.clone()], |t, v| t.add(v[0], v[1]).unwrap()),
        ),
        (
            "sub",
            op_fd_error(&[ea.clone(), eb.clone()], |t, v| t.sub(v[0], v[1]).unwrap()),
        ),
        (
            "mul",
            op_fd_error(&[ea.clone(), eb], |t, v| t.mul(v[0], v[1]).unwrap()),
        ),
        (
            "scale",
            op_fd_error(std::slice::from_ref(&ea), |t, v| t.scale(v[0], -1.7)),
        ),
        (
            "sigmoid",
            op_fd_error(std::slice::from_ref(&ea), |t, v| t.sigmoid(v[0])),
        ),
        ("relu", op_fd_error(&[relu_in], |t, v| t.relu(v[0]))),
        (
            "sum",
            op_fd_error(std::slice::from_ref(&ea), |t, v| t.sum(v[0])),
        ),
        (
            "sum_squares",
            op_fd_error(&[ea], |t, v| t.sum_squares(v[0])),
        ),
        (
            "concat",
            op_fd_error(&[ca.clone(), cb], |t, v| t.concat(&[v[0], v[1]]).unwrap()),
        ),
        (
            "reshape",
            op_fd_error(&[ca], |t, v| t.reshape(v[0], &[4, 3]).unwrap()),
        ),
    ];

    // Whole semantic-aware graph, every parameter.
    let mut model = SemBcs::new(tiny_config(), &mut ChaCha8Rng::seed_from_u64(33)).unwrap();
    model
        .store_mut()
        .by_name_mut("pnet.head.bias")
        .unwrap()
        .data_mut()
        .iter_mut()
        .enumerate()
        .for_each(|(k, b)| *b += if k % 2 == 0 { 0.4 } else { -0.4 });
    let image = Tensor::rand_uniform(&[1, 8, 8, 3], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(34));
    let (mask, scores) = {
        let mut tape = Tape::new();
        let p = model.store().bind(&mut tape);
        let x = tape.constant(image.clone());
        let f = model
            .forward_with(&mut tape, &p, x, &ForwardOptions::default())
            .unwrap();
        (tape.value(f.mask).clone(), tape.value(f.scores).clone())
    };
    let on = mask.data().iter().filter(|&&m| m == 1.0).count();
    let opts = ForwardOptions {
        mask: MaskSource::Linearized {
            mask: mask.clone(),
            scores,
        },
        ..Default::default()
    };
    let mut tape = Tape::new();
    let (loss, bound) = graph_loss(&model, &image, &opts, &mut tape);
    tape.backward(loss).unwrap();
    let names: Vec<String> = model.store().names().map(str::to_string).collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for name in &names {
        let id = model.store().id(name).unwrap();
        analytic.extend_from_slice(tape.grad(bound.var(id)).unwrap());
        for k in 0..model.store().get(id).numel() {
            let mut eval = |delta: f64| {
                model.store_mut().get_mut(id).data_mut()[k] += delta;
                let mut t = Tape::new();
                let (l, _) = graph_loss(&model, &image, &opts, &mut t);
                model.store_mut().get_mut(id).data_mut()[k] -= delta;
                t.value(l).data()[0]
            };
            numeric.push((eval(H) - eval(-H)) / (2.0 * H));
        }
    }
    ops.push(("full SemBCS graph", l2_rel(&analytic, &numeric)));

    // Straight-through contract on the real binarizer.
    let mut tape = Tape::new();
    let p = model.store().bind(&mut tape);
    let x = tape.constant(image.clone());
    let f = model
        .forward_with(&mut tape, &p, x, &ForwardOptions::default())
        .unwrap();
    let l = sembcs::rd_loss(&mut tape, x, f.recon, None, 0.0).unwrap();
    tape.backward(l.total).unwrap();
    let dg = tape.grad(f.scores).unwrap();
    let dm = tape.grad(f.mask).unwrap();
    let ste_gap = dg
        .iter()
        .zip(dm)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let ste_nonzero = dm.iter().any(|&v| v != 0.0);

    let (worst_name, worst) = ops
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let pass = worst <= 1e-4 && ste_gap == 0.0 && ste_nonzero && on > 0 && on < mask.numel();
    assert!(report(
        3,
        "gradient correctness",
        pass,
        &format!(
            "{} checks, worst {worst_name} {worst:.2e}; {} graph parameters; STE max |dL/dG - dL/dM| = {ste_gap:e}",
            ops.len(),
            numeric.len()
        )
    ));
}

#[test]
fn criterion_04_materialized_theta_s() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n_b, n_max, d) = (rng.gen_range(1..7), rng.gen_range(1..25), 3 * 4 * 4);
        let (rows, cols) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let theta_b = Tensor::randn(&[d, n_b], 1.0, &mut rng);
        let theta_s = Tensor::randn(&[d, n_max], 1.0, &mut rng);
        let blocks = rows * cols;
        let base = Tensor::randn(&[1, rows, cols, n_b], 1.0, &mut rng);
        let full = Tensor::randn(&[1, rows, cols, n_max], 1.0, &mut rng);
        let weights = Tensor::randn(&[1, rows, cols, n_max * n_max], 1.0, &mut rng);
        let masks: Vec<Vec<bool>> = (0..blocks)
            .map(|_| (0..n_max).map(|_| rng.gen_bool(0.5)).collect())
            .collect();

        // Materialized: theta^s = theta_s · W[:, selected], then x = theta_b y_b + theta^s y_s.
        let mut materialized = Vec::new();
        let mut ragged = Vec::new();
        for (k, mask) in masks.iter().enumerate() {
            let sel: Vec<usize> = (0..n_max).filter(|&c| mask[c]).collect();
            let yb = &base.data()[k * n_b..(k + 1) * n_b];
            let ys: Vec<f64> = sel.iter().map(|&c| full.data()[k * n_max + c]).collect();
            let w = &weights.data()[k * n_max * n_max..(k + 1) * n_max * n_max];
            for p in 0..d {
                let mut acc: f64 = (0..n_b).map(|r| theta_b.data()[p * n_b + r] * yb[r]).sum();
                for (s, &col) in sel.iter().enumerate() {
                    let ts: f64 = (0..n_max)
                        .map(|a| theta_s.data()[p * n_max + a] * w[a * n_max + col])
                        .sum();
                    acc += ts * ys[s];
                }
                materialized.push(acc);
            }
            ragged.extend(initial_reconstruct_block(yb, &ys, mask, w, &theta_b, &theta_s).unwrap());
        }

        // Decomposed training pipeline with zero-padded stage-two measurements.
        let mut kernel = vec![0.0; (n_b + n_max) * d];
        for p in 0..d {
            for r in 0..n_b {
                kernel[r * d + p] = theta_b.data()[p * n_b + r];
            }
            for r in 0..n_max {
                kernel[(n_b + r) * d + p] = theta_s.data()[p * n_max + r];
            }
        }
        let padded: Vec<f64> = full
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if masks[i / n_max][i % n_max] { v } else { 0.0 })
            .collect();
        let mut tape = Tape::new();
        let c = tape.constant(base);
        let e = tape.constant(Tensor::from_vec(&[1, rows, cols, n_max], padded).unwrap());
        let w = tape.constant(weights);
        let k = tape.constant(Tensor::from_vec(&[1, 1, n_b + n_max, d], kernel).unwrap());
        let xhat = initial_reconstruct(&mut tape, c, e, w, k).unwrap();
        worst = worst
            .max(rel_err(tape.value(xhat).data(), &materialized))
            .max(rel_err(&ragged, &materialized));
    }
    assert!(report(
        4,
        "materialized theta^s decomposition",
        worst <= 1e-10,
        &format!("max relative error {worst:.2e} over 50 draws")
    ));
}

/// Solves the small symmetric system `g x = b` by Gaussian elimination.
fn solve(mut g: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for i in 0..n {
        let piv = (i..n)
            .max_by(|&a, &c| g[a][i].abs().total_cmp(&g[c][i].abs()))
            .unwrap();
        g.swap(i, piv);
        b.swap(i, piv);
        let (top, rest) = g.split_at_mut(i + 1);
        let pivot = &top[i];
        for (k, row) in rest.iter_mut().enumerate() {
            let f = row[i] / pivot[i];
            for (x, p) in row[i..].iter_mut().zip(&pivot[i..]) {
                *x -= f * p;
            }
            b[i + 1 + k] -= f * b[i];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (b[i] - (i + 1..n).map(|c| g[i][c] * x[c]).sum::<f64>()) / g[i][i];
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn criterion_08_omp_exact_recovery() {
    let dict = build_dct_dictionary(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut solved, mut exact, mut monotone, mut drawn) = (0, 0, 0, 0);
    while solved < 100 {
        drawn += 1;
        let mut support: Vec<usize> = sample(&mut rng, dict.len(), 3).into_vec();
        support.sort_unstable();
        let atoms: Vec<&[f64]> = support.iter().map(|&k| dict.atom(k)).collect();
        // Coherence bound within the support, then the exact recovery condition
        // max_j ||pinv(Phi_S) phi_j||_1 < 1 over atoms outside it.
        let coherent = (0..3).any(|a| (a + 1..3).any(|b| dot(atoms[a], atoms[b]).abs() > 0.3));
        if coherent {
            continue;
        }
        let gram: Vec<Vec<f64>> = atoms
            .iter()
            .map(|a| atoms.iter().map(|b| dot(a, b)).collect())
            .collect();
        let erc = (0..dict.len())
            .filter(|k| !support.contains(k))
            .map(|k| {
                let rhs: Vec<f64> = atoms.iter().map(|a| dot(a, dict.atom(k))).collect();
                solve(gram.clone(), rhs)
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        if erc >= 1.0 {
            continue;
        }
        let coefs: Vec<f64> = (0..3)
            .map(|_| rng.gen_range(1.0..10.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let mut y = vec![0.0; dict.dim()];
        for (a, c) in atoms.iter().zip(&coefs) {
            for (yi, ai) in y.iter_mut().zip(*a) {
                *yi += c * ai;
            }
        }
        let res = omp_solve(&y, &dict, None, None).unwrap();
        let mut found = res.support.clone();
        found.sort_unstable();
        let coef_ok = support
            .iter()
            .zip(&coefs)
            .all(|(&k, c)| (res.coefficients[k] - c).abs() <= 1e-8 * c.abs());
        if found == support && coef_ok {
            exact += 1;
        }
        if res
            .residual_norms
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-12))
        {
            monotone += 1;
        }
        solved += 1;
    }
    assert!(report(
        8,
        "OMP exact support recovery",
        exact == 100 && monotone == 100,
        &format!(
            "{exact}/100 exact, {monotone}/100 non-increasing residuals, {drawn} supports drawn"
        )
    ));
}

#[test]
fn criterion_09_ratio_bookkeeping() {
    let geom = BlockGeometry::new(224, 224, 32).unwrap();
    let (n_b, n_max, images) = (20, 200, 25);
    let blocks = geom.num_blocks() * images;
    // Mean stage-two count 79.84 over 1225 blocks: 97804 ones in total.
    let total = 97_804usize;
    let (each, extra) = (total / blocks, total % blocks);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut placed = 0;
    let masks: Vec<BlockMask> = (0..images)
        .map(|img| {
            let mut data = vec![0.0; geom.num_blocks() * n_max];
            for b in 0..geom.num_blocks() {
                let count = each + usize::from(img * geom.num_blocks() + b < extra);
                for k in sample(&mut rng, n_max, count) {
                    data[b * n_max + k] = 1.0;
                }
                placed += count;
            }
            BlockMask::from_tensor(Tensor::from_vec(&[7, 7, n_max], data).unwrap()).unwrap()
        })
        .collect();
    let r = average_ratio(&masks, n_b, &geom).unwrap();
    let n_avg = n_b as f64 + placed as f64 / blocks as f64;
    let pass = placed == total && (r - n_avg / 3072.0).abs() <= 1e-12 && (r - 0.0325).abs() <= 5e-4;
    assert!(report(
        9,
        "r_avg bookkeeping",
        pass,
        &format!("n_avg {n_avg:.4}, r_avg {r:.6}")
    ));
}

fn desk_data(seed: u64) -> Dataset {
    dataset(&SynthConfig::default(), 64, 8, 16, seed).unwrap()
}

fn desk_run(seed: u64, gamma: f64) -> RunConfig {
    RunConfig {
        seed,
        gamma,
        ..RunConfig::desk()
    }
}

struct SemRun {
    model: SemBcs,
    report: TrainReport,
    config: RunConfig,
}

fn train_sem(data: &Dataset, config: RunConfig) -> SemRun {
    let t = Instant::now();
    let (model, report) = train(data, &config).unwrap();
    let _ = writeln!(
        std::io::stderr(),
        "  trained seed {} gamma {} in {:.0}s: val n_avg {:.2} psnr {:.2}",
        config.seed,
        config.gamma,
        t.elapsed().as_secs_f64(),
        report.best().val_n_avg,
        report.best().val_psnr
    );
    SemRun {
        model,
        report,
        config,
    }
}

fn checkpoint_bytes(run: &SemRun) -> Vec<u8> {
    Checkpoint::from_model(&run.model, &run.config, run.report.best().epoch, Vec::new()).to_bytes()
}

/// Criteria 5, 6, 7 and 10 share their desk-scale training runs.
#[test]
fn criteria_05_06_07_10_desk_training() {
    let start = Instant::now();
    let data0 = desk_data(0);
    let gammas = [0.015, 0.15, 1.5];
    let runs: Vec<SemRun> = gammas
        .iter()
        .map(|&g| train_sem(&data0, desk_run(0, g)))
        .collect();

    // 5: rate control.
    let n: Vec<f64> = runs
        .iter()
        .map(|r| evaluate(&r.model, &data0.test).unwrap().n_avg)
        .collect();
    let pass5 = report(
        5,
        "rate control",
        n[0] > n[1] && n[1] > n[2],
        &format!(
            "test n_avg at gamma {gammas:?}: {:.3} > {:.3} > {:.3}",
            n[0], n[1], n[2]
        ),
    );

    // 7: allocation follows oracle sparsity at the mid gamma.
    let mid = &runs[1];
    let geom = mid.model.config().geometry;
    let dict = build_dct_dictionary(geom.block()).unwrap();
    let mut levels = Vec::new();
    let mut counts = Vec::new();
    for img in &data0.test {
        levels.extend(
            block_sparsity_levels(img, &geom, &dict, DEFAULT_THRESHOLD)
                .unwrap()
                .into_iter()
                .map(|v| v as f64),
        );
        let (_, mask) = mid.model.reconstruct(img).unwrap();
        counts.extend(mask.unwrap().popcounts().into_iter().map(|v| v as f64));
    }
    let rho = spearman(&levels, &counts).unwrap_or(f64::NAN);
    let pass7 = report(
        7,
        "allocation-sparsity agreement",
        rho > 0.5,
        &format!(
            "Spearman {rho:.3} over {} test blocks at gamma 0.15",
            levels.len()
        ),
    );

    // 10: determinism.
    let again = train_sem(&data0, desk_run(0, 0.15));
    let (a, b) = (checkpoint_bytes(mid), checkpoint_bytes(&again));
    let pass10 = report(
        10,
        "determinism",
        a == b,
        &format!("{} checkpoint bytes, identical: {}", a.len(), a == b),
    );

    // 6: SemBCS against FixBCS at matched r_avg over three seeds.
    let mut diffs = Vec::new();
    let mut matched = true;
    let mut notes = Vec::new();
    for seed in 0..3u64 {
        let data = if seed == 0 {
            data0.clone()
        } else {
            desk_data(seed)
        };
        let first = if seed == 0 {
            SemRun {
                model: mid.model.clone(),
                report: mid.report.clone(),
                config: mid.config.clone(),
            }
        } else {
            train_sem(&data, desk_run(seed, 0.15))
        };
        let got = first.report.best().val_n_avg;
        let n_fix = got.round().max(1.0) as usize;
        let tol = 0.02 * n_fix as f64;
        let sem = if (got - n_fix as f64).abs() <= tol {
            first
        } else {
            // Bracket centred on 0.15 in log space, so the first probe retrains
            // the same operating point with rate-constrained epoch selection.
            let cfg = RunConfig {
                gamma_min: 0.1,
                gamma_max: 0.225,
                ..desk_run(seed, 0.15)
            };
            let (model, report, cal) = train_calibrated(&data, &cfg, n_fix as f64, tol).unwrap();
            for p in &cal.probes {
                let _ = writeln!(
                    std::io::stderr(),
                    "  seed {seed} probe gamma {:.4}: val n_avg {:.3} psnr {:.3}",
                    p.gamma,
                    p.n_avg,
                    p.val_psnr
                );
            }
            if !cal.within_tolerance {
                matched = false;
            }
            SemRun {
                model,
                report,
                config: cfg,
            }
        };
        let val_n = sem.report.best().val_n_avg;
        matched &= (val_n - n_fix as f64).abs() <= tol;
        let sem_eval = evaluate(&sem.model, &data.test).unwrap();
        let (fix, _) = train_fixbcs(&data, &desk_run(seed, 0.0), n_fix).unwrap();
        let fix_eval = evaluate(&fix, &data.test).unwrap();
        let d = sem_eval.mean_psnr() - fix_eval.mean_psnr();
        let _ = writeln!(
            std::io::stderr(),
            "  seed {seed}: sembcs gamma {:.4} val n_avg {val_n:.3} test n_avg {:.3} psnr {:.3}; fixbcs n {n_fix} psnr {:.3}",
            sem.report.gamma,
            sem_eval.n_avg,
            sem_eval.mean_psnr(),
            fix_eval.mean_psnr()
        );
        notes.push(format!("{d:+.2}"));
        diffs.push(d);
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let pass6 = report(
        6,
        "SemBCS beats FixBCS at matched r_avg",
        matched && mean >= 0.3,
        &format!(
            "mean gain {mean:+.3} dB (per seed {}), ratios matched within 2%: {matched}",
            notes.join(", ")
        ),
    );
    let _ = writeln!(
        std::io::stderr(),
        "  desk training criteria took {:.0}s",
        start.elapsed().as_secs_f64()
    );
    assert!(pass5 && pass6 && pass7 && pass10);
}
