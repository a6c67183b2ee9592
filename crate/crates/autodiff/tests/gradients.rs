use deephedge_autodiff::{
    finite_difference_check, flatten_trainable_grads, Activation, Adam, AdamConfig, Bound, DenseStack, LstmCell,
    ParamStore, Result, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL: f64 = 1e-4;
const ABS: f64 = 1e-8;
const STEP: f64 = 1e-5;

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Builds the objective on a fresh tape and returns (root value, flattened gradient).
fn value_and_grad<F>(store: &ParamStore, build: &F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let root = build(&mut tape, &bound)?;
    let value = tape.value(root).data()[0];
    let grads = tape.backward(root)?;
    let per_entry = store.grads(&bound, &grads);
    Ok((value, flatten_trainable_grads(store, &per_entry)))
}

fn check<F>(store: &mut ParamStore, seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let (_, analytic) = value_and_grad(store, &build).unwrap();
    let n = analytic.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<usize> =
        if n <= 100 { (0..n).collect() } else { (0..100).map(|_| rng.random_range(0..n)).collect() };
    let report = finite_difference_check(store, &analytic, &coords, STEP, |s| {
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape);
        let root = build(&mut tape, &bound)?;
        Ok(tape.value(root).data()[0])
    })
    .unwrap();
    report.max_error(REL, ABS)
}

fn dense_case(act: Activation, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let stack = DenseStack::new(&mut store, "net", &[3, 7, 5, 2], act, Activation::Identity, &mut rng).unwrap();
    // Nonzero biases so kinks are not hit on a symmetric grid.
    for layer in stack.layers() {
        for b in store.get_mut(layer.bias).data_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let x = random_batch(&mut rng, 9, 3);
    let target = random_batch(&mut rng, 9, 2);
    check(&mut store, seed, move |tape, bound| {
        let xv = tape.constant(x.clone());
        let t = tape.constant(target.clone());
        let y = stack.forward(tape, bound, xv)?;
        let e = tape.sub(y, t)?;
        let sq = tape.square(e)?;
        tape.mean(sq)
    })
}

#[test]
fn dense_gradients_match_finite_differences() {
    for act in [Activation::Identity, Activation::Relu, Activation::Elu, Activation::Tanh, Activation::Sigmoid] {
        let err = dense_case(act, 11);
        assert!(err < REL, "{act:?}: max relative error {err:e}");
    }
}

fn lstm_case(seed: u64, steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "cell", 2, 4, &mut rng);
    for b in store.get_mut(cell.bias).data_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    let head =
        DenseStack::new(&mut store, "head", &[4, 3, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
    let inputs: Vec<Tensor> = (0..steps).map(|_| random_batch(&mut rng, 6, 2)).collect();
    check(&mut store, seed, move |tape, bound| {
        let seq: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let outs = cell.forward(tape, bound, &seq)?;
        let mut acc: Option<Var> = None;
        for c in outs {
            let h = head.forward(tape, bound, c)?;
            let t = tape.tanh(h)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, t)?,
                None => t,
            });
        }
        let sq = tape.square(acc.unwrap())?;
        tape.mean(sq)
    })
}

#[test]
fn lstm_gradients_match_finite_differences() {
    let err = lstm_case(5, 4);
    assert!(err < REL, "max relative error {err:e}");
}

#[test]
fn composite_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let a = store.add("a", random_batch(&mut rng, 4, 3), true);
    let b = store.add("b", Tensor::vector(vec![0.4, -0.7, 1.2]), true);
    let frozen = store.add("frozen", random_batch(&mut rng, 4, 3), false);
    let err = check(&mut store, 21, move |tape, bound| {
        let (av, bv, fv) = (bound.var(a), bound.var(b), bound.var(frozen));
        let bb = tape.broadcast_rows(bv, 4)?;
        let prod = tape.mul(av, bb)?;
        let mixed = tape.sub(prod, fv)?;
        let scaled = tape.scale_cols(mixed, &[0.5, 2.0, -1.0])?;
        let absd = tape.abs(scaled)?;
        let left = tape.slice_cols(absd, 0, 2)?;
        let right = tape.slice_cols(mixed, 2, 1)?;
        let cat = tape.concat_cols(&[right, left, right])?;
        let rs = tape.sum_cols(cat)?;
        let sh = tape.add_const(rs, 3.0)?;
        let sq = tape.square(sh)?;
        let m = tape.mean(sq)?;
        let r = tape.sqrt(m)?;
        let s = tape.sum(sq)?;
        let s = tape.scale(s, 0.01)?;
        let e = tape.elu(s)?;
        let out = tape.add(r, e)?;
        tape.neg(out)
    });
    assert!(err < REL, "max relative error {err:e}");
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "cell", 3, 5, &mut rng);
        let x = random_batch(&mut rng, 8, 3);
        let build = |tape: &mut Tape, bound: &Bound| {
            let xv = tape.constant(x.clone());
            let outs = cell.forward(tape, bound, &[xv, xv, xv])?;
            let sq = tape.square(outs[2])?;
            tape.sum(sq)
        };
        value_and_grad(&store, &build).unwrap()
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1.to_bits(), v2.to_bits());
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn adam_fits_a_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let net =
        DenseStack::new(&mut store, "lin", &[2, 1], Activation::Identity, Activation::Identity, &mut rng).unwrap();
    let mut adam = Adam::new(AdamConfig::with_lr(0.05), &store);
    for _ in 0..2000 {
        let x = random_batch(&mut rng, 32, 2);
        let y: Vec<f64> = x.data().chunks(2).map(|r| 2.0 * r[0] - r[1] + 0.5).collect();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x);
        let yv = tape.constant(Tensor::matrix(32, 1, y).unwrap());
        let pred = net.forward(&mut tape, &bound, xv).unwrap();
        let e = tape.sub(pred, yv).unwrap();
        let sq = tape.square(e).unwrap();
        let loss = tape.mean(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = store.grads(&bound, &grads);
        adam.step(&mut store, &g).unwrap();
    }
    let w = store.get(net.layers()[0].weight).data();
    let b = store.get(net.layers()[0].bias).data();
    assert!((w[0] - 2.0).abs() < 1e-3 && (w[1] + 1.0).abs() < 1e-3 && (b[0] - 0.5).abs() < 1e-3);
}

#[test]
fn frozen_entries_do_not_move() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(1.0), true);
    let q = store.add("q", Tensor::scalar(2.0), false);
    let mut adam = Adam::new(AdamConfig::default(), &store);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let prod = tape.mul(bound.var(p), bound.var(q)).unwrap();
    let grads = tape.backward(prod).unwrap();
    let g = store.grads(&bound, &grads);
    assert_eq!(g[q.index()].data(), &[0.0]);
    adam.step(&mut store, &g).unwrap();
    assert_eq!(store.get(q).data(), &[2.0]);
    assert!(store.get(p).data()[0] < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_dense_graphs_match_finite_differences(seed in 0u64..10_000, act in 0usize..5) {
        let act = [Activation::Identity, Activation::Relu, Activation::Elu, Activation::Tanh, Activation::Sigmoid][act];
        let err = dense_case(act, seed);
        prop_assert!(err < REL, "{:?} seed {}: {:e}", act, seed, err);
    }

    #[test]
    fn random_lstm_graphs_match_finite_differences(seed in 0u64..10_000, steps in 1usize..4) {
        let err = lstm_case(seed, steps);
        prop_assert!(err < REL, "seed {}: {:e}", seed, err);
    }

    #[test]
    fn lstm_gates_stay_in_open_unit_interval(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "cell", 3, 4, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = random_batch(&mut rng, 5, 3).map(|v| v * scale);
        let xv = tape.constant(x);
        let first = cell.step(&mut tape, &bound, xv, None).unwrap();
        let second = cell.step(&mut tape, &bound, xv, Some(&first)).unwrap();
        for state in [first, second] {
            for gate in [state.forget, state.input, state.out_gate] {
                prop_assert!(tape.value(gate).data().iter().all(|&g| g > 0.0 && g < 1.0));
            }
        }
    }
}
