use captionlab::autodiff::{grad_check, Bound, ParamSet, Tape, Tensor, Var};
use captionlab::layers::{
    encode_spatial, label_smoothed_ce, AdditiveAttention, BiLstm, Dense, Embedding, LstmCell, ScoreKind,
};
use captionlab::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `x` with fixed random weights so every output entry matters.
fn readout(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let w = random(&mut ChaCha8Rng::seed_from_u64(seed), tape.shape(x));
    let w = tape.constant(w);
    let y = tape.mul(x, w)?;
    Ok(tape.sum(y))
}

fn check<F>(what: &str, params: &ParamSet, f: F)
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let report = grad_check(params, f, STEP, TOL).unwrap();
    assert!(
        report.passed(),
        "{what}: max relative error {:.3e}",
        report.max_error()
    );
}

fn dims(rng: &mut ChaCha8Rng, n: usize, hi: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(1..=hi)).collect()
}

#[test]
fn dense_and_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..5 {
        let d = dims(&mut rng, 3, 8);
        let layer = Dense::new("d", d[0], d[1]);
        let mut p = ParamSet::new();
        layer.init(&mut p, &mut rng).unwrap();
        p.insert("x", random(&mut rng, &[d[2], d[0]])).unwrap();
        check("dense", &p, |t, b| {
            let y = layer.forward(t, b, b.var("x")?)?;
            let y = t.tanh(y);
            readout(t, y, trial)
        });

        let emb = Embedding::new("e", d[0] + 3, d[1]);
        let mut p = ParamSet::new();
        emb.init(&mut p, &mut rng).unwrap();
        let ids: Vec<usize> = (0..d[2] + 1).map(|_| rng.gen_range(0..d[0] + 3)).collect();
        check("embedding", &p, |t, b| {
            let y = emb.lookup(t, b, &ids)?;
            readout(t, y, trial)
        });
    }
}

#[test]
fn lstm_cell_over_a_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..4 {
        let d = dims(&mut rng, 3, 6);
        let cell = LstmCell::new("l", d[0], d[1]);
        let mut p = ParamSet::new();
        cell.init(&mut p, &mut rng).unwrap();
        p.insert("x", random(&mut rng, &[d[2], d[0]])).unwrap();
        p.insert("h0", random(&mut rng, &[d[1]])).unwrap();
        p.insert("c0", random(&mut rng, &[d[1]])).unwrap();
        check("lstm", &p, |t, b| {
            let rows = BiLstm::rows_of(t, b.var("x")?)?;
            let (hs, (_, c)) = cell.run(t, b, &rows, (b.var("h0")?, b.var("c0")?))?;
            let h = t.stack_rows(&hs)?;
            let a = readout(t, h, trial)?;
            let z = readout(t, c, trial + 100)?;
            t.add(a, z)
        });
    }
}

#[test]
fn bilstm_and_spatial_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..3 {
        let d = dims(&mut rng, 4, 4);
        let layer = BiLstm::new("bi", d[0], d[1]);
        let mut p = ParamSet::new();
        layer.init(&mut p, &mut rng).unwrap();
        p.insert("grid", random(&mut rng, &[d[2], d[3], d[0]])).unwrap();
        check("bilstm", &p, |t, b| {
            let enc = encode_spatial(&layer, t, b, b.var("grid")?)?;
            readout(t, enc.encoded, trial)
        });
    }
}

#[test]
fn attention_both_score_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for score in [ScoreKind::Additive, ScoreKind::Multiplicative] {
        for trial in 0..4 {
            let d = dims(&mut rng, 4, 8);
            let att = AdditiveAttention::new("att", d[0], d[1], d[2], score);
            let mut p = ParamSet::new();
            att.init(&mut p, &mut rng).unwrap();
            p.insert("q", random(&mut rng, &[d[0]])).unwrap();
            p.insert("vals", random(&mut rng, &[d[3], d[1]])).unwrap();
            check("attention", &p, |t, b| {
                let a = att.attend(t, b, b.var("q")?, b.var("vals")?)?;
                let x = readout(t, a.context, trial)?;
                let y = readout(t, a.weights, trial + 7)?;
                t.add(x, y)
            });
        }
    }
}

#[test]
fn smoothed_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for eps in [0.0, 0.1, 0.5] {
        let v = rng.gen_range(2..=16);
        let mut p = ParamSet::new();
        p.insert("logits", random(&mut rng, &[v])).unwrap();
        let target = rng.gen_range(0..v);
        check("cross entropy", &p, |t, b| label_smoothed_ce(t, b.var("logits")?, target, eps));
    }
}

#[test]
fn tape_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..4 {
        let d = dims(&mut rng, 4, 6);
        let mut p = ParamSet::new();
        p.insert("a", random(&mut rng, &[d[0], d[1]])).unwrap();
        p.insert("b", random(&mut rng, &[d[1], d[2]])).unwrap();
        p.insert("v", random(&mut rng, &[d[3]])).unwrap();
        p.insert("g", random(&mut rng, &[d[0], d[3], d[2]])).unwrap();
        let ids: Vec<usize> = (0..4).map(|_| rng.gen_range(0..d[0])).collect();
        check("primitives", &p, |t, b| {
            let (a, bb, v, g) = (b.var("a")?, b.var("b")?, b.var("v")?, b.var("g")?);
            let ab = t.matmul(a, bb)?;
            let s = t.sigmoid(ab);
            let sm = t.softmax(v)?;
            let lsm = t.log_softmax(v)?;
            let both = t.concat(&[sm, lsm], 0)?;
            let sl = t.slice(both, 0, 1, d[3])?;
            let pooled = t.mean_over_spatial(g)?;
            let gathered = t.gather_rows(a, &ids)?;
            let r0 = t.row(a, 0)?;
            let stacked = t.stack_rows(&[r0, r0])?;
            let mut total = readout(t, s, trial)?;
            for (k, x) in [sl, pooled, gathered, stacked].into_iter().enumerate() {
                let y = readout(t, x, trial + 10 * (k as u64 + 1))?;
                total = t.add(total, y)?;
            }
            let scaled = t.scale(total, 0.5);
            let diff = t.sub(scaled, total)?;
            Ok(diff)
        });
    }
}

/// Attention weights, context and values for one random read.
fn read(
    score: ScoreKind,
    q: usize,
    m: usize,
    a: usize,
    rows: usize,
    seed: u64,
    perm: Option<&[usize]>,
) -> (Vec<f64>, Vec<f64>, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let att = AdditiveAttention::new("att", q, m, a, score);
    let mut p = ParamSet::new();
    att.init(&mut p, &mut rng).unwrap();
    let query = random(&mut rng, &[q]).into_data();
    let scale: f64 = rng.gen_range(0.5..4.0);
    let mut vals: Vec<f64> = random(&mut rng, &[rows, m]).into_data().iter().map(|v| v * scale).collect();
    if let Some(perm) = perm {
        let orig = vals.clone();
        for (i, &j) in perm.iter().enumerate() {
            vals[i * m..(i + 1) * m].copy_from_slice(&orig[j * m..(j + 1) * m]);
        }
    }
    let values = Tensor::new(vec![rows, m], vals).unwrap();
    let mut tape = Tape::new();
    let bound = p.bind_frozen(&mut tape);
    let qv = tape.constant(Tensor::vector(query));
    let vv = tape.constant(values.clone());
    let out = att.attend(&mut tape, &bound, qv, vv).unwrap();
    (
        tape.value(out.weights).data().to_vec(),
        tape.value(out.context).data().to_vec(),
        values,
    )
}

fn shapes() -> impl Strategy<Value = (usize, usize, usize, usize, u64, bool)> {
    (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=16, any::<u64>(), any::<bool>())
}

fn kind(additive: bool) -> ScoreKind {
    if additive {
        ScoreKind::Additive
    } else {
        ScoreKind::Multiplicative
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn attention_weights_sum_to_one((q, m, a, s, seed, add) in shapes()) {
        let (w, _, _) = read(kind(add), q, m, a, s, seed, None);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn attention_is_permutation_equivariant((q, m, a, s, seed, add) in shapes(), shift in 0usize..16) {
        let perm: Vec<usize> = (0..s).map(|i| (i * 5 + shift) % s).collect();
        let mut seen = perm.clone();
        seen.sort_unstable();
        prop_assume!(seen == (0..s).collect::<Vec<_>>());
        let (w, c, _) = read(kind(add), q, m, a, s, seed, None);
        let (wp, cp, _) = read(kind(add), q, m, a, s, seed, Some(&perm));
        for (i, &j) in perm.iter().enumerate() {
            prop_assert!((wp[i] - w[j]).abs() < 1e-12);
        }
        for (x, y) in c.iter().zip(&cp) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn context_lies_in_the_hull_of_the_values((q, m, a, s, seed, add) in shapes()) {
        let (_, c, values) = read(kind(add), q, m, a, s, seed, None);
        for (k, &ck) in c.iter().enumerate() {
            let col = (0..s).map(|i| values.row(i)[k]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(ck >= lo - 1e-12 && ck <= hi + 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-50.0f64..50.0, 1..32)) {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(xs.clone()));
        let s = tape.softmax(v).unwrap();
        let w = tape.value(s).data();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let argmax = (0..xs.len()).max_by(|&i, &j| xs[i].total_cmp(&xs[j])).unwrap();
        prop_assert!(w.iter().all(|&x| x <= w[argmax]));
    }
}
