use captionlab::autodiff::grad_check;
use captionlab::data::{END, START};
use captionlab::features::FeatureGrid;
use captionlab::layers::ScoreKind;
use captionlab::models::{Architecture, CaptionModel, FeatureInput, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(h: usize, w: usize, c: usize, seed: u64) -> FeatureGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w * c).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
    FeatureGrid::new(h, w, c, data).unwrap()
}

fn tiny(arch: Architecture, vocab: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(arch, vocab, 3).with_grid(2, 2).with_widths(3, 3, 3);
    cfg.encoder_units = 2;
    cfg
}

/// Every entry of every parameter perturbed, so keep widths tiny.
#[test]
fn grad_check_every_architecture() {
    let grid = random_grid(2, 2, 3, 1);
    for arch in Architecture::ALL {
        let model = CaptionModel::build(tiny(arch, 6), 9).unwrap();
        let caption = [START, 4, END];
        let report = grad_check(
            model.params(),
            |tape, bound| model.caption_loss(tape, bound, FeatureInput::Grid(&grid), &caption, 0.1),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(
            report.passed(),
            "{arch}: max error {} in {:?}",
            report.max_error(),
            report.failures().collect::<Vec<_>>()
        );
    }
}

#[test]
fn multiplicative_scoring_also_passes_grad_check() {
    let grid = random_grid(2, 2, 3, 2);
    let mut cfg = tiny(Architecture::Focalis, 5);
    cfg.score = ScoreKind::Multiplicative;
    let model = CaptionModel::build(cfg, 4).unwrap();
    let report = grad_check(
        model.params(),
        |tape, bound| model.caption_loss(tape, bound, (&grid).into(), &[START, 4, 3, END], 0.1),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "max error {}", report.max_error());
}

#[test]
fn genesis_param_count_matches_hand_formula() {
    let (v, e, u, c) = (30, 32, 256, 64);
    let mut cfg = ModelConfig::new(Architecture::Genesis, v, c);
    cfg.embed_dim = e;
    let model = CaptionModel::build(cfg.clone(), 0).unwrap();
    let embedding = v * e;
    let image = c * u + u;
    let lstm = e * 4 * u + u * 4 * u + 4 * u;
    let out = u * v + v;
    assert_eq!(model.params().count(), embedding + image + lstm + out);
    assert_eq!(CaptionModel::expected_param_count(&cfg), embedding + image + lstm + out);
}

#[test]
fn every_architecture_count_matches_formula() {
    for arch in Architecture::ALL {
        let cfg = tiny(arch, 11);
        let model = CaptionModel::build(cfg.clone(), 3).unwrap();
        let (v, e, u, c, a, ue) = (11, 3, 3, 3, 3, 2);
        let lstm = |d: usize, n: usize| 4 * n * (d + n + 1);
        let expected = match arch {
            Architecture::Genesis => v * e + c * u + u + lstm(e, u) + u * v + v,
            Architecture::Contexta | Architecture::Clarity => {
                v * e + c * u + u + 2 * lstm(e, u) + 3 * u * v + v
            }
            Architecture::Focalis => {
                v * e + 2 * lstm(c, ue) + a * (u + 2 * ue + 1) + lstm(e + 2 * ue, u) + u * v + v
            }
        };
        assert_eq!(model.params().count(), expected, "{arch}");
    }
}

#[test]
fn build_is_deterministic_per_seed() {
    for arch in Architecture::ALL {
        let a = CaptionModel::build(tiny(arch, 8), 5).unwrap();
        let b = CaptionModel::build(tiny(arch, 8), 5).unwrap();
        let c = CaptionModel::build(tiny(arch, 8), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

#[test]
fn inconsistent_configs_are_rejected() {
    let cfg = ModelConfig::new(Architecture::Focalis, 10, 4);
    assert!(CaptionModel::build(cfg, 0).is_err());
    let mut cfg = ModelConfig::new(Architecture::Genesis, 10, 4);
    cfg.fusion = captionlab::models::Fusion::Concat;
    assert!(CaptionModel::build(cfg, 0).is_err());
    let mut cfg = ModelConfig::new(Architecture::Contexta, 10, 4);
    cfg.fusion = captionlab::models::Fusion::Add;
    assert!(CaptionModel::build(cfg, 0).is_err());
    assert!("bogus".parse::<Architecture>().is_err());
    assert_eq!("clarity".parse::<Architecture>().unwrap(), Architecture::Clarity);
}

#[test]
fn untrained_loss_is_near_log_v() {
    let v = 30;
    let grid = random_grid(3, 3, 8, 4);
    for arch in Architecture::ALL {
        let cfg = ModelConfig::new(arch, v, 8).with_grid(3, 3).with_widths(16, 16, 16);
        let model = CaptionModel::build(cfg, 1).unwrap();
        let loss = model
            .forward_train((&grid).into(), &[START, 7, 9, 12, END], 0.1)
            .unwrap();
        let log_v = (v as f64).ln();
        assert!((loss - log_v).abs() < 0.15 * log_v, "{arch}: {loss} vs {log_v}");
    }
}

#[test]
fn stepwise_decoding_reproduces_teacher_forcing() {
    let grid = random_grid(3, 2, 4, 5);
    let caption = [START, 5, 6, 4, 7, END];
    for arch in Architecture::ALL {
        let cfg = ModelConfig::new(arch, 9, 4).with_grid(3, 2).with_widths(5, 6, 4);
        let model = CaptionModel::build(cfg, 2).unwrap();
        let forced = model.teacher_forced_logits((&grid).into(), &caption).unwrap();
        let mut state = model.init_state((&grid).into()).unwrap();
        for (t, want) in forced.iter().enumerate() {
            let out = model.decode_step(&state, caption[t]).unwrap();
            assert_eq!(out.logits.shape(), &[9]);
            for (a, b) in out.logits.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-9, "{arch} position {t}: {a} vs {b}");
            }
            if arch == Architecture::Focalis {
                let w = out.attention.as_ref().unwrap();
                assert_eq!(w.numel(), 6);
                assert!((w.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            } else {
                assert!(out.attention.is_none());
            }
            state = out.state;
        }
        assert_eq!(state.prefix(), &caption[..caption.len() - 1]);
    }
}

#[test]
fn pooled_models_ignore_cell_positions() {
    let grid = random_grid(4, 4, 5, 6);
    let perm: Vec<usize> = (0..16).rev().collect();
    let shuffled = grid.permute_cells(&perm).unwrap();
    let caption = [START, 4, 5, END];
    for arch in Architecture::ALL {
        let cfg = ModelConfig::new(arch, 7, 5).with_grid(4, 4).with_widths(4, 6, 4);
        let mut model = CaptionModel::build(cfg, 8).unwrap();
        // Small initial weights barely separate positions; amplify them so the
        // witness is unambiguous.
        for (_, t) in model.params_mut().iter_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= 8.0);
        }
        let a = model.teacher_forced_logits((&grid).into(), &caption).unwrap();
        let b = model.teacher_forced_logits((&shuffled).into(), &caption).unwrap();
        let diff = a
            .iter()
            .zip(&b)
            .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
        if arch.is_pooled() {
            assert!(diff <= 1e-9, "{arch} moved by {diff}");
        } else {
            assert!(diff > 1e-3, "focalis only moved by {diff}");
        }
    }
}

#[test]
fn pooled_vector_input_matches_grid_input() {
    let grid = random_grid(3, 3, 4, 7);
    let vector = grid.to_vector();
    let cfg = ModelConfig::new(Architecture::Clarity, 8, 4).with_widths(4, 4, 4);
    let model = CaptionModel::build(cfg, 1).unwrap();
    let caption = [START, 5, END];
    let a = model.forward_train((&grid).into(), &caption, 0.1).unwrap();
    let b = model.forward_train((&vector).into(), &caption, 0.1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn focalis_rejects_pooled_vectors_and_wrong_grids() {
    let grid = random_grid(3, 3, 4, 7);
    let cfg = ModelConfig::new(Architecture::Focalis, 8, 4).with_grid(3, 3).with_widths(4, 4, 4);
    let model = CaptionModel::build(cfg, 1).unwrap();
    let vector = grid.to_vector();
    assert!(model.forward_train((&vector).into(), &[START, 4, END], 0.1).is_err());
    let other = random_grid(2, 3, 4, 1);
    assert!(model.init_state((&other).into()).is_err());
    let narrow = random_grid(3, 3, 2, 1);
    assert!(model.init_state((&narrow).into()).is_err());
}

#[test]
fn focalis_attends_over_every_cell_of_a_ten_by_ten_grid() {
    let grid = random_grid(10, 10, 3, 3);
    let cfg = ModelConfig::new(Architecture::Focalis, 6, 3).with_grid(10, 10).with_widths(4, 4, 4);
    let model = CaptionModel::build(cfg, 1).unwrap();
    let state = model.init_state((&grid).into()).unwrap();
    let out = model.decode_step(&state, START).unwrap();
    assert_eq!(out.attention.unwrap().shape(), &[100]);
}

#[test]
fn malformed_captions_are_rejected() {
    let grid = random_grid(2, 2, 3, 1);
    let model = CaptionModel::build(tiny(Architecture::Genesis, 6), 0).unwrap();
    assert!(model.forward_train((&grid).into(), &[START], 0.1).is_err());
    assert!(model.forward_train((&grid).into(), &[4, 5, END], 0.1).is_err());
    assert!(model.forward_train((&grid).into(), &[START, 40, END], 0.1).is_err());
}

#[test]
fn decode_state_from_another_architecture_is_rejected() {
    let grid = random_grid(2, 2, 3, 1);
    let g = CaptionModel::build(tiny(Architecture::Genesis, 6), 0).unwrap();
    let f = CaptionModel::build(tiny(Architecture::Focalis, 6), 0).unwrap();
    let state = g.init_state((&grid).into()).unwrap();
    assert!(f.decode_step(&state, START).is_err());
}
