//! Property tests of the differentiation engine.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refnet::gradcheck::grad_check;
use refnet::{Init, ParamId, ParamStore, Result, Tape, Tensor, Var};

struct Fixture {
    store: ParamStore,
    a: ParamId,
    b: ParamId,
    x: ParamId,
    y: ParamId,
    pos: ParamId,
    s: ParamId,
    table: ParamId,
    weights: Vec<f64>,
}

/// Random parameters; `y` is offset from `x` by at least 0.1 so `min` and
/// `max_rows` stay away from their kinks.
fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new(seed);
    let add = |store: &mut ParamStore, name: &str, shape: &[usize], vals: Vec<f64>| {
        let id = store.add(name, shape, Init::Zeros).unwrap();
        store.set_value(id, Tensor::new(shape.to_vec(), vals).unwrap()).unwrap();
        id
    };
    let mut uni = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
    let xv = uni(4, -1.0, 1.0);
    let offsets = uni(4, 0.1, 1.0);
    let signs = uni(4, -1.0, 1.0);
    let yv: Vec<f64> = xv
        .iter()
        .zip(offsets.iter().zip(&signs))
        .map(|(x, (o, s))| x + o.copysign(*s))
        .collect();
    let av = uni(12, -1.0, 1.0);
    let bv = uni(8, -1.0, 1.0);
    let pv = uni(4, 0.5, 2.0);
    let sv = uni(1, -2.0, 2.0);
    let tv = uni(20, -1.0, 1.0);
    let weights = uni(12, -1.0, 1.0);
    let a = add(&mut store, "a", &[3, 4], av);
    let b = add(&mut store, "b", &[4, 2], bv);
    let x = add(&mut store, "x", &[4], xv);
    let y = add(&mut store, "y", &[4], yv);
    let pos = add(&mut store, "pos", &[4], pv);
    let s = add(&mut store, "s", &[1], sv);
    let table = add(&mut store, "table", &[5, 4], tv);
    Fixture {
        store,
        a,
        b,
        x,
        y,
        pos,
        s,
        table,
        weights,
    }
}

type Op = fn(&mut Tape, &Fixture) -> Result<Var>;

fn ops() -> Vec<(&'static str, Op)> {
    vec![
        ("matvec", |t, f| {
            let (a, x) = (t.param(f.a), t.param(f.x));
            t.matvec(a, x)
        }),
        ("matmul", |t, f| {
            let (a, b) = (t.param(f.a), t.param(f.b));
            t.matmul(a, b)
        }),
        ("vecmat", |t, f| {
            let (x, b) = (t.param(f.x), t.param(f.b));
            t.vecmat(x, b)
        }),
        ("add", |t, f| {
            let (x, y) = (t.param(f.x), t.param(f.y));
            t.add(x, y)
        }),
        ("add_row", |t, f| {
            let (a, x) = (t.param(f.a), t.param(f.x));
            t.add_row(a, x)
        }),
        ("hadamard", |t, f| {
            let (x, y) = (t.param(f.x), t.param(f.y));
            t.hadamard(x, y)
        }),
        ("min", |t, f| {
            let (x, y) = (t.param(f.x), t.param(f.y));
            t.min(x, y)
        }),
        ("affine", |t, f| {
            let x = t.param(f.x);
            t.affine(x, -1.5, 0.25)
        }),
        ("scale_by", |t, f| {
            let (x, s) = (t.param(f.x), t.param(f.s));
            t.scale_by(x, s)
        }),
        ("tanh", |t, f| {
            let x = t.param(f.x);
            t.tanh(x)
        }),
        ("sigmoid", |t, f| {
            let x = t.param(f.x);
            t.sigmoid(x)
        }),
        ("log", |t, f| {
            let p = t.param(f.pos);
            t.log(p)
        }),
        ("softmax", |t, f| {
            let x = t.param(f.x);
            t.softmax(x)
        }),
        ("masked_softmax", |t, f| {
            let x = t.param(f.x);
            t.masked_softmax(x, Some(&[true, false, true, true]))
        }),
        ("concat", |t, f| {
            let (x, y) = (t.param(f.x), t.param(f.y));
            t.concat(&[x, y])
        }),
        ("slice", |t, f| {
            let x = t.param(f.x);
            t.slice(x, 1, 2)
        }),
        ("stack_rows", |t, f| {
            let (x, y) = (t.param(f.x), t.param(f.y));
            t.stack_rows(&[x, y, x])
        }),
        ("row", |t, f| {
            let table = t.param(f.table);
            t.row(table, 3)
        }),
        ("max_rows", |t, f| {
            let (x, y) = (t.param(f.x), t.param(f.y));
            let m = t.stack_rows(&[x, y])?;
            t.max_rows(m)
        }),
        ("sum", |t, f| {
            let a = t.param(f.a);
            t.sum(a)
        }),
        ("sum_scalars", |t, f| {
            let (x, y) = (t.param(f.x), t.param(f.y));
            let (sx, sy) = (t.sum(x)?, t.sum(y)?);
            let p = t.hadamard(sx, sy)?;
            t.sum_scalars(&[sx, p])
        }),
        ("nll", |t, f| {
            let x = t.param(f.x);
            let p = t.softmax(x)?;
            t.nll(p, 2)
        }),
        ("pad", |t, f| {
            let x = t.param(f.x);
            t.pad(x, 3)
        }),
        ("scatter_add", |t, f| {
            let x = t.param(f.x);
            t.scatter_add(x, &[2, 0, 2, 5], 6)
        }),
    ]
}

/// `Σ w ⊙ op(...)` with fixed random weights, so every output entry matters.
fn weighted(t: &mut Tape, f: &Fixture, op: Op) -> Result<Var> {
    let out = op(t, f)?;
    let n = t.value(out).len();
    let w = t.constant(Tensor::new(t.shape(out).to_vec(), f.weights[..n].to_vec())?);
    let h = t.hadamard(out, w)?;
    t.sum(h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn primitive_gradients_match_finite_differences(seed in any::<u64>()) {
        for (name, op) in ops() {
            let mut f = fixture(seed);
            let mut store = std::mem::replace(&mut f.store, ParamStore::new(0));
            let report = grad_check(&mut store, 1e-6, |t: &mut Tape| weighted(t, &f, op)).unwrap();
            prop_assert!(report.max_rel_error < 1e-4, "{name}: {report:?}");
        }
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-1e300f64..1e300, 1..40)) {
        let store = ParamStore::new(0);
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::vector(v));
        let p = t.softmax(x).unwrap();
        let p = t.value(p);
        prop_assert!(p.iter().all(|&q| q >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn softmax_of_moderate_inputs_is_a_distribution(v in prop::collection::vec(-50f64..50.0, 1..40)) {
        let store = ParamStore::new(0);
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::vector(v));
        let p = t.softmax(x).unwrap();
        let p = t.value(p);
        prop_assert!(p.iter().all(|&q| q >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn forward_passes_are_bitwise_deterministic() {
    for seed in 0..10 {
        let f = fixture(seed);
        let run = || {
            let mut t = Tape::new(&f.store);
            ops()
                .into_iter()
                .map(|(_, op)| {
                    let v = weighted(&mut t, &f, op).unwrap();
                    t.scalar(v).to_bits()
                })
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn loss_independent_of_a_parameter_gives_it_exact_zero() {
    let f = fixture(3);
    let mut t = Tape::new(&f.store);
    let x = t.param(f.x);
    let _unused = t.param(f.table);
    let loss = t.sum(x).unwrap();
    let g = t.backward(loss).unwrap();
    assert!(g.get(f.table).is_none_or(|v| v.iter().all(|&e| e == 0.0)));
    assert!(g.get(f.x).unwrap().iter().all(|&e| e == 1.0));
}
