//! Central finite-difference checks of every differentiable tape operator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sembcs::{Padding, Tape, Tensor, Var};

const H: f64 = 1e-5;

/// Builds `loss = sum(op(inputs) ⊙ R)` for a fixed random `R`.
fn weighted_loss(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::randn(tape.shape(out), 1.0, &mut rng);
    let r = tape.constant(r);
    let p = tape.mul(out, r).unwrap();
    tape.sum(p)
}

/// Compares analytic gradients of every input against central differences.
fn check<F>(inputs: &[Tensor], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let loss = weighted_loss(&mut tape, out, 99);
        tape.value(loss).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars);
    let loss = weighted_loss(&mut tape, out, 99);
    tape.backward(loss).unwrap();

    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (k, n) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= H;
            *n = (eval(&plus) - eval(&minus)) / (2.0 * H);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
        assert!(
            diff / scale <= 1e-4,
            "input {i}: relative error {:.3e}",
            diff / scale
        );
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(2024)
}

#[test]
fn conv2d_same_padding() {
    let mut r = rng();
    let x = Tensor::randn(&[1, 6, 6, 2], 1.0, &mut r);
    let k = Tensor::randn(&[3, 3, 2, 4], 1.0, &mut r);
    let b = Tensor::randn(&[4], 1.0, &mut r);
    check(&[x, k, b], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Same).unwrap()
    });
}

#[test]
fn conv2d_strided_valid() {
    let mut r = rng();
    let x = Tensor::randn(&[1, 6, 6, 3], 1.0, &mut r);
    let k = Tensor::randn(&[3, 3, 3, 2], 1.0, &mut r);
    check(&[x, k], |t, v| {
        t.conv2d(v[0], v[1], None, 3, Padding::Valid).unwrap()
    });
}

#[test]
fn conv2d_batched_pointwise() {
    let mut r = rng();
    let x = Tensor::randn(&[2, 3, 4, 5], 1.0, &mut r);
    let k = Tensor::randn(&[1, 1, 5, 3], 1.0, &mut r);
    check(&[x, k], |t, v| {
        t.conv2d(v[0], v[1], None, 1, Padding::Same).unwrap()
    });
}

#[test]
fn matmul() {
    let mut r = rng();
    let a = Tensor::randn(&[4, 5], 1.0, &mut r);
    let b = Tensor::randn(&[5, 3], 1.0, &mut r);
    check(&[a, b], |t, v| t.matmul(v[0], v[1]).unwrap());
}

#[test]
fn batch_matmul() {
    let mut r = rng();
    let a = Tensor::randn(&[3, 4, 4], 1.0, &mut r);
    let b = Tensor::randn(&[3, 4, 1], 1.0, &mut r);
    check(&[a, b], |t, v| t.batch_matmul(v[0], v[1]).unwrap());
}

#[test]
fn depth_to_space_and_back() {
    let mut r = rng();
    let x = Tensor::randn(&[1, 2, 3, 8], 1.0, &mut r);
    check(std::slice::from_ref(&x), |t, v| {
        t.depth_to_space(v[0], 2).unwrap()
    });
    let y = Tensor::randn(&[1, 4, 6, 3], 1.0, &mut r);
    check(&[y], |t, v| t.space_to_depth(v[0], 2).unwrap());
}

#[test]
fn elementwise() {
    let mut r = rng();
    let a = Tensor::randn(&[2, 3], 1.0, &mut r);
    let b = Tensor::randn(&[2, 3], 1.0, &mut r);
    check(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
    check(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap());
    check(&[a.clone(), b], |t, v| t.mul(v[0], v[1]).unwrap());
    check(std::slice::from_ref(&a), |t, v| t.scale(v[0], -1.7));
    check(std::slice::from_ref(&a), |t, v| t.sigmoid(v[0]));
    check(std::slice::from_ref(&a), |t, v| t.sum_squares(v[0]));
    check(&[a], |t, v| t.sum(v[0]));
}

#[test]
fn relu_away_from_kink() {
    let x = Tensor::from_vec(&[2, 2], vec![0.7, -0.3, 1.2, -2.0]).unwrap();
    check(&[x], |t, v| t.relu(v[0]));
}

#[test]
fn reshape_and_concat() {
    let mut r = rng();
    let a = Tensor::randn(&[1, 2, 2, 3], 1.0, &mut r);
    let b = Tensor::randn(&[1, 2, 2, 2], 1.0, &mut r);
    check(&[a.clone(), b], |t, v| t.concat(&[v[0], v[1]]).unwrap());
    check(&[a], |t, v| t.reshape(v[0], &[4, 3]).unwrap());
}

#[test]
fn composite_graph() {
    let mut r = rng();
    let x = Tensor::randn(&[1, 4, 4, 2], 1.0, &mut r);
    let k1 = Tensor::randn(&[3, 3, 2, 3], 0.5, &mut r);
    let k2 = Tensor::randn(&[1, 1, 3, 4], 0.5, &mut r);
    check(&[x, k1, k2], |t, v| {
        let h = t.conv2d(v[0], v[1], None, 1, Padding::Same).unwrap();
        let h = t.sigmoid(h);
        let h = t.conv2d(h, v[2], None, 1, Padding::Same).unwrap();
        let h = t.depth_to_space(h, 2).unwrap();
        t.sum_squares(h)
    });
}
