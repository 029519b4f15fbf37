use captionlab::autodiff::{ParamSet, Tape, Tensor};
use captionlab::data::{batch, gen_dataset, CaptionedExample, SceneConfig};
use captionlab::features::{FeatureGrid, FeatureSource};
use captionlab::layers::label_smoothed_ce;
use captionlab::models::{Architecture, CaptionModel, ModelConfig};
use captionlab::training::{
    batch_gradients, clip_by_global_norm, evaluate_loss, global_norm, train, AdamState, Checkpoint,
    EarlyStopping, ReduceLrOnPlateau, TrainOutputs, TrainSession, TrainingConfig,
};
use proptest::prelude::*;

fn scenes(n: usize, references: usize, seed: u64) -> Vec<CaptionedExample> {
    let cfg = SceneConfig {
        n_scenes: n,
        grid_h: 4,
        grid_w: 4,
        references,
        seed,
        ..SceneConfig::default()
    };
    gen_dataset(&cfg, &FeatureSource::new(6, 0.05, seed)).unwrap().0
}

fn model(arch: Architecture, examples: &[CaptionedExample], units: usize, seed: u64) -> CaptionModel {
    let vocab = examples
        .iter()
        .flat_map(|e| e.references.iter().flatten())
        .max()
        .unwrap()
        + 1;
    let cfg = ModelConfig::new(arch, vocab, 6).with_grid(4, 4).with_widths(8, units, units);
    CaptionModel::build(cfg, seed).unwrap()
}

fn config(epochs: usize, lr: f64, epsilon: f64) -> TrainingConfig {
    TrainingConfig {
        learning_rate: lr,
        label_epsilon: epsilon,
        max_epochs: epochs,
        batch_size: 4,
        early_stop_patience: epochs,
        plateau_patience: epochs,
        ..TrainingConfig::default()
    }
}

#[test]
fn ten_scenes_are_memorized() {
    let data = scenes(10, 1, 3);
    for arch in [Architecture::Genesis, Architecture::Focalis] {
        let m = model(arch, &data, 24, 1);
        let initial = evaluate_loss(&m, &data, 0.0).unwrap();
        let mut s = TrainSession::new(m, config(200, 1e-2, 0.0), None).unwrap();
        let mut epochs = 0;
        while !s.is_finished() {
            s.run_epoch(&data, &data).unwrap();
            epochs += 1;
            if evaluate_loss(&s.model, &data, 0.0).unwrap() < 0.1 * initial {
                break;
            }
        }
        let last = evaluate_loss(&s.model, &data, 0.0).unwrap();
        assert!(last < 0.1 * initial, "{arch}: {initial:.3} -> {last:.3} after {epochs} epochs");
    }
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let data = scenes(12, 2, 4);
    let run = || {
        let mut s = TrainSession::new(model(Architecture::Focalis, &data, 8, 2), config(3, 3e-3, 0.1), None).unwrap();
        train(&mut s, &data[..9], &data[9..], TrainOutputs::default(), |_, _| Ok(())).unwrap();
        s
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history(), b.history());
    assert_eq!(a.model.params(), b.model.params());
    let bits = |s: &TrainSession| s.history().iter().map(|r| r.val_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn resuming_from_a_checkpoint_is_bit_exact() {
    let data = scenes(12, 2, 5);
    let (train_set, val) = data.split_at(9);
    for arch in Architecture::ALL {
        let cfg = TrainingConfig {
            plateau_patience: 1,
            ..config(4, 5e-3, 0.1)
        };
        let fresh = || TrainSession::new(model(arch, &data, 8, 6), cfg.clone(), None).unwrap();

        let mut straight = fresh();
        train(&mut straight, train_set, val, TrainOutputs::default(), |_, _| Ok(())).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut first = fresh();
        for _ in 0..2 {
            first.run_epoch(train_set, val).unwrap();
        }
        let path = dir.path().join("mid.ckpt");
        first.checkpoint().save(&path).unwrap();
        drop(first);
        let mut resumed = TrainSession::resume(Checkpoint::load(&path).unwrap());
        train(&mut resumed, train_set, val, TrainOutputs::default(), |_, _| Ok(())).unwrap();

        assert_eq!(resumed.history(), straight.history(), "{arch}");
        assert_eq!(resumed.model.params(), straight.model.params(), "{arch}");
        assert_eq!(resumed.adam, straight.adam, "{arch}");
    }
}

#[test]
fn checkpoints_and_loss_csv_are_written_per_epoch() {
    let data = scenes(8, 1, 6);
    let dir = tempfile::tempdir().unwrap();
    let ckpts = dir.path().join("checkpoints");
    let csv = dir.path().join("loss.csv");
    let mut s = TrainSession::new(model(Architecture::Clarity, &data, 6, 1), config(3, 1e-3, 0.1), None).unwrap();
    let mut seen = Vec::new();
    train(
        &mut s,
        &data[..6],
        &data[6..],
        TrainOutputs {
            checkpoint_dir: Some(&ckpts),
            loss_csv: Some(&csv),
        },
        |_, r| {
            seen.push(r.epoch);
            Ok(())
        },
    )
    .unwrap();
    assert_eq!(seen, vec![1, 2, 3]);
    for e in 1..=3 {
        let c = Checkpoint::load(ckpts.join(format!("epoch_{e:03}.ckpt"))).unwrap();
        assert_eq!(c.meta.epoch, e);
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("epoch,train_loss,val_loss,lr\n"));
}

#[test]
fn adam_drives_a_quadratic_toward_its_minimum() {
    let target = [0.5, -1.5, 2.0];
    let mut p = ParamSet::new();
    p.insert("w", Tensor::vector(vec![0.0; 3])).unwrap();
    let mut adam = AdamState::new(&p);
    let loss = |p: &ParamSet| {
        p.get("w").unwrap().data().iter().zip(target).map(|(w, t)| (w - t).powi(2)).sum::<f64>()
    };
    let start = loss(&p);
    for _ in 0..50 {
        let w = p.get("w").unwrap().data().to_vec();
        let mut g = ParamSet::new();
        g.insert("w", Tensor::vector(w.iter().zip(target).map(|(w, t)| 2.0 * (w - t)).collect()))
            .unwrap();
        adam.update(&mut p, &g, 0.1).unwrap();
    }
    assert!(loss(&p) < 0.05 * start);
    assert_eq!(adam.t, 50);
}

#[test]
fn scripted_callbacks_fire_on_the_documented_epochs() {
    let mut stop = EarlyStopping::new(3);
    let fired: Vec<bool> = [3.0, 3.1, 3.1, 3.1]
        .iter()
        .enumerate()
        .map(|(i, &v)| stop.on_epoch_end(i + 1, v))
        .collect();
    assert_eq!(fired, vec![false, false, false, true]);

    let mut plateau = ReduceLrOnPlateau::new(1, 0.5);
    let lr1 = plateau.on_epoch_end(3.0, 1e-4);
    let lr2 = plateau.on_epoch_end(3.1, lr1);
    assert_eq!((lr1, lr2), (1e-4, 5e-5));
}

#[test]
fn all_pad_rows_change_nothing() {
    let data = scenes(3, 1, 7);
    let m = model(Architecture::Contexta, &data, 6, 3);
    let seqs: Vec<Vec<usize>> = data.iter().map(|e| e.references[0].clone()).collect();
    let grids: Vec<&FeatureGrid> = data.iter().map(|e| &e.features).collect();
    let pad_to = seqs.iter().map(Vec::len).max().unwrap();
    let base = batch_gradients(&m, &grids, &batch(&seqs, pad_to).unwrap(), 0.1).unwrap();

    let mut padded = batch(&seqs, pad_to + 3).unwrap();
    padded.ids.push(vec![0; pad_to + 3]);
    padded.mask.push(vec![false; pad_to + 3]);
    let mut grids2 = grids.clone();
    grids2.push(grids[0]);
    let more = batch_gradients(&m, &grids2, &padded, 0.1).unwrap();
    assert_eq!(base.loss_sum, more.loss_sum);
    assert_eq!(base.tokens, more.tokens);
    assert_eq!(base.grads, more.grads);
}

#[test]
fn batch_gradients_are_the_sum_of_single_row_gradients() {
    let data = scenes(4, 1, 8);
    let m = model(Architecture::Focalis, &data, 5, 4);
    let seqs: Vec<Vec<usize>> = data.iter().map(|e| e.references[0].clone()).collect();
    let grids: Vec<&FeatureGrid> = data.iter().map(|e| &e.features).collect();
    let pad_to = seqs.iter().map(Vec::len).max().unwrap();
    let whole = batch_gradients(&m, &grids, &batch(&seqs, pad_to).unwrap(), 0.1).unwrap();
    let mut sum = m.params().zeros_like();
    let mut loss = 0.0;
    for (s, g) in seqs.iter().zip(&grids) {
        let one = batch_gradients(&m, &[*g], &batch(std::slice::from_ref(s), s.len()).unwrap(), 0.1).unwrap();
        loss += one.loss_sum;
        for (name, t) in sum.iter_mut() {
            for (x, y) in t.data_mut().iter_mut().zip(one.grads.get(name).unwrap().data()) {
                *x += y;
            }
        }
    }
    assert!((whole.loss_sum - loss).abs() < 1e-12);
    for (name, t) in whole.grads.iter() {
        for (x, y) in t.data().iter().zip(sum.get(name).unwrap().data()) {
            assert!((x - y).abs() < 1e-12, "{name}");
        }
    }
}

proptest! {
    #[test]
    fn clipping_bounds_the_global_norm(
        a in prop::collection::vec(-100.0f64..100.0, 1..8),
        b in prop::collection::vec(-100.0f64..100.0, 1..8),
        clip in 0.01f64..10.0,
    ) {
        let mut g = ParamSet::new();
        g.insert("a", Tensor::vector(a.clone())).unwrap();
        g.insert("b", Tensor::vector(b.clone())).unwrap();
        let before = global_norm(&g);
        let reported = clip_by_global_norm(&mut g, clip).unwrap();
        prop_assert!((reported - before).abs() < 1e-12);
        let after = global_norm(&g);
        prop_assert!(after <= clip + 1e-12);
        if before <= clip {
            prop_assert_eq!(g.get("a").unwrap().data(), &a[..]);
        }
    }

    #[test]
    fn smoothed_cross_entropy_is_at_least_the_target_entropy(
        logits in prop::collection::vec(-10.0f64..10.0, 2..12),
        pick in 0usize..100,
        eps in 0.0f64..0.9,
    ) {
        let v = logits.len();
        let target = pick % v;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(logits));
        let loss = label_smoothed_ce(&mut tape, x, target, eps).unwrap();
        let q: Vec<f64> = (0..v).map(|i| eps / v as f64 + if i == target { 1.0 - eps } else { 0.0 }).collect();
        let entropy: f64 = q.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
        prop_assert!(tape.value(loss).item() >= entropy - 1e-9);
    }
}
