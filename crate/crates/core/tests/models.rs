mod common;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use loadbench::autograd::{Ctx, GemmPrecision, ParamStore, Tape};
use loadbench::data::WindowSpec;
use loadbench::models::{
    build, decompose, detect_periods, patch_count, prob_attention, Arch, AutoformerConfig, Checkpoint, LstnetConfig,
    ModelConfig, PatchTstConfig, TransformerConfig,
};
use loadbench::Error;

const F64: GemmPrecision = GemmPrecision::F64;

fn toy_window() -> WindowSpec {
    WindowSpec::new(16, 4).unwrap()
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
}

#[test]
fn toy_models_emit_batch_by_horizon() {
    let data = common::prepared(16, 4, 2, 96 * 8, 1);
    let batch = common::train_batch(&data, 2);
    for arch in Arch::ALL {
        let m = build(&ModelConfig::toy(arch), toy_window(), 0).unwrap();
        let y = m.predict(&batch, F64).unwrap();
        assert_eq!(y.dim(), (2, 4), "{arch}");
        assert!(y.iter().all(|v| v.is_finite()), "{arch}");
    }
}

#[test]
fn reference_configs_cover_long_windows() {
    for t in [4, 48, 96] {
        let data = common::prepared(512, t, 1, 96 * 40, 2);
        let batch = common::train_batch(&data, 1);
        for arch in Arch::ALL {
            let window = WindowSpec::new(512, t).unwrap();
            let m = build(&ModelConfig::default_for(arch), window, 0).unwrap();
            assert_eq!(m.predict(&batch, F64).unwrap().dim(), (1, t), "{arch} T={t}");
        }
    }
}

#[test]
fn eval_forward_is_bit_identical() {
    let data = common::prepared(16, 4, 2, 96 * 8, 3);
    let batch = common::train_batch(&data, 3);
    for arch in Arch::ALL {
        let m = build(&ModelConfig::toy(arch), toy_window(), 7).unwrap();
        assert_eq!(m.predict(&batch, F64).unwrap(), m.predict(&batch, F64).unwrap(), "{arch}");
    }
}

#[test]
fn batch_forward_matches_per_sample_forward() {
    let data = common::prepared(16, 4, 3, 96 * 8, 4);
    let batch = common::train_batch(&data, 5);
    for arch in Arch::ALL {
        let m = build(&ModelConfig::toy(arch), toy_window(), 11).unwrap();
        let joint = m.predict(&batch, F64).unwrap();
        for i in 0..batch.len() {
            let single = m.predict(&batch.select(&[i]), F64).unwrap();
            let row = joint.slice(ndarray::s![i..i + 1, ..]).to_owned();
            assert!(max_abs_diff(&row, &single) <= 1e-6, "{arch} sample {i}");
        }
    }
}

#[test]
fn same_seed_same_initialization() {
    for arch in Arch::ALL {
        let a = build(&ModelConfig::toy(arch), toy_window(), 5).unwrap();
        let b = build(&ModelConfig::toy(arch), toy_window(), 5).unwrap();
        let c = build(&ModelConfig::toy(arch), toy_window(), 6).unwrap();
        let flat = |m: &loadbench::models::ForecastModel| (0..m.num_parameters()).map(|i| m.params.get_flat(i)).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b), "{arch}");
        assert_ne!(flat(&a), flat(&c), "{arch}");
    }
}

#[test]
fn future_calendar_does_not_leak_into_earlier_steps() {
    let data = common::prepared(16, 4, 1, 96 * 8, 5);
    let batch = common::train_batch(&data, 2);
    for arch in [Arch::Transformer, Arch::Informer] {
        let m = build(&ModelConfig::toy(arch).without_dropout(), toy_window(), 3).unwrap();
        let base = m.predict(&batch, F64).unwrap();
        for j in 0..4 {
            let mut perturbed = batch.clone();
            perturbed.u_full[[0, 16 + j, 0]] = (perturbed.u_full[[0, 16 + j, 0]] + 40) % 96;
            perturbed.u_full[[0, 16 + j, 1]] = (perturbed.u_full[[0, 16 + j, 1]] + 3) % 7;
            let out = m.predict(&perturbed, F64).unwrap();
            for step in 0..j {
                assert_eq!(out[[0, step]], base[[0, step]], "{arch}: step {step} saw step {j}");
            }
            assert_ne!(out[[0, j]], base[[0, j]], "{arch}: step {j} ignores its own calendar");
            assert_eq!(out.row(1), base.row(1));
        }
    }
}

#[test]
fn prob_attention_with_full_budget_is_full_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let store = ParamStore::new();
    let tape = Tape::new(F64);
    let ctx = Ctx::new(&tape, &store, false, 0);
    let (q, k, v) = (
        ctx.constant(random(&[2, 3, 10, 4], &mut rng)),
        ctx.constant(random(&[2, 3, 10, 4], &mut rng)),
        ctx.constant(random(&[2, 3, 10, 5], &mut rng)),
    );
    let sparse = prob_attention(&ctx, q, k, v, 100).value();
    let full = q.attention(k, v, None, 0.5).value();
    let diff = sparse.iter().zip(full.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn prob_attention_lazy_queries_get_value_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let store = ParamStore::new();
    let tape = Tape::new(F64);
    let ctx = Ctx::new(&tape, &store, false, 0);
    let lq = 40;
    let (q, k, v) = (
        ctx.constant(random(&[1, 1, lq, 4], &mut rng)),
        ctx.constant(random(&[1, 1, lq, 4], &mut rng)),
        ctx.constant(random(&[1, 1, lq, 3], &mut rng)),
    );
    let out = prob_attention(&ctx, q, k, v, 1).value();
    let vv = v.value();
    let mean: Vec<f64> = (0..3).map(|c| (0..lq).map(|i| vv[[0, 0, i, c]]).sum::<f64>() / lq as f64).collect();
    let lazy_rows = (0..lq).filter(|&i| (0..3).all(|c| (out[[0, 0, i, c]] - mean[c]).abs() < 1e-12)).count();
    // budget 1·⌈ln 40⌉ = 4 active queries
    assert_eq!(lazy_rows, lq - 4);
}

#[test]
fn decomposition_reconstructs_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tape = Tape::new(F64);
    let x = tape.constant(random(&[3, 50, 4], &mut rng).mapv(|v| 1e3 * v));
    let (seasonal, trend) = decompose(x, 25);
    let rebuilt = (seasonal + trend).value();
    let err = rebuilt.iter().zip(x.value().iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-9, "{err}");
    // constant series have no seasonal part
    let c = tape.constant(ArrayD::from_elem(IxDyn(&[1, 30, 1]), 4.5));
    let (s, t) = decompose(c, 7);
    assert!(s.value().iter().all(|v| v.abs() < 1e-12));
    assert!(t.value().iter().all(|v| (v - 4.5).abs() < 1e-12));
}

#[test]
fn detects_planted_sine_period() {
    let n = 96;
    for p in [4usize, 8, 12, 24, 32, 48] {
        let series = Array2::from_shape_fn((n, 2), |(t, c)| (2.0 * std::f64::consts::PI * t as f64 / p as f64 + c as f64).sin());
        assert_eq!(detect_periods(series.view(), 5)[0], p);
    }
    let flat = Array2::<f64>::ones((10, 1));
    assert_eq!(detect_periods(flat.view(), 8).len(), 5);
}

#[test]
fn patch_count_formula() {
    assert_eq!(patch_count(512, 16, 8), 64);
    assert_eq!(patch_count(64, 16, 8), 8);
    assert_eq!(patch_count(16, 4, 2), 8);
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let w = toy_window();
    let bad = [
        ModelConfig::Transformer(TransformerConfig { d_model: 10, heads: 4, ..TransformerConfig::toy() }),
        ModelConfig::Autoformer(AutoformerConfig { moving_avg: 25, ..AutoformerConfig::toy() }),
        ModelConfig::Autoformer(AutoformerConfig { moving_avg: 4, ..AutoformerConfig::toy() }),
        ModelConfig::Patchtst(PatchTstConfig { patch_len: 17, ..PatchTstConfig::toy() }),
        ModelConfig::Lstnet(LstnetConfig { kernel: 20, ..LstnetConfig::toy() }),
        ModelConfig::Lstnet(LstnetConfig { skips: vec![40], ..LstnetConfig::toy() }),
    ];
    for cfg in bad {
        assert!(matches!(build(&cfg, w, 0), Err(Error::BadHyperparameters(_))), "{cfg:?}");
    }
    assert!(matches!("gpt".parse::<Arch>(), Err(Error::UnknownArchitecture(_))));
    let hp = serde_json::json!({"hidden": 16, "bogus": 1});
    assert!(matches!(ModelConfig::from_tag("lstm", Some(&hp)), Err(Error::BadHyperparameters(_))));
    let hp = serde_json::json!({"hidden": 16});
    let m = loadbench::models::build_tag("LSTM", Some(&hp), w, 0).unwrap();
    assert_eq!(m.num_parameters(), 4 * ((8 + 16) * 16 + 16) + 16 * 4 + 4);
}

#[test]
fn lstm_reference_count_closed_form() {
    for t in [4, 48, 96] {
        let m = build(&ModelConfig::default_for(Arch::Lstm), WindowSpec::new(512, t).unwrap(), 0).unwrap();
        assert_eq!(m.num_parameters(), 5_248 + 32 * t + t);
    }
}

#[test]
fn reference_parameter_counts_are_logged() {
    let window = WindowSpec::new(512, 48).unwrap();
    for arch in Arch::ALL {
        let m = build(&ModelConfig::default_for(arch), window, 0).unwrap();
        println!(
            "{:<12} built {:>9}  reference {:>9}",
            arch.display_name(),
            m.num_parameters(),
            arch.reference_parameter_count()
        );
        assert!(m.num_parameters() > 0);
    }
}

#[test]
fn wrong_window_is_a_shape_error() {
    let data = common::prepared(16, 4, 1, 96 * 8, 6);
    let batch = common::train_batch(&data, 2);
    let m = build(&ModelConfig::toy(Arch::Lstm), WindowSpec::new(12, 4).unwrap(), 0).unwrap();
    assert!(matches!(m.predict(&batch, F64), Err(Error::SchemaMismatch(_)) | Err(Error::ShapeError(_))));
}

#[test]
fn checkpoint_round_trip_preserves_forecasts() {
    let data = common::prepared(16, 4, 2, 96 * 8, 8);
    let batch = common::train_batch(&data, 3);
    let dir = tempfile::tempdir().unwrap();
    for arch in Arch::ALL {
        let m = build(&ModelConfig::toy(arch), toy_window(), 21).unwrap();
        let mut ck = Checkpoint::new(m.clone(), Some(data.normalizer.clone()));
        ck.meta.insert("lr".into(), serde_json::json!(1e-3));
        let path = dir.path().join(format!("{arch}.ckpt"));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model.predict(&batch, F64).unwrap(), m.predict(&batch, F64).unwrap());
        assert_eq!(back.normalizer.as_ref(), Some(&data.normalizer));
        assert_eq!(back.meta["lr"], serde_json::json!(1e-3));
    }
    let mut bytes = std::fs::read(dir.path().join("lstm.ckpt")).unwrap();
    bytes[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    let bytes = std::fs::read(dir.path().join("lstm.ckpt")).unwrap();
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]), Err(Error::Checkpoint(_))));
}

#[test]
fn f32_products_stay_close_to_f64() {
    let data = common::prepared(16, 4, 2, 96 * 8, 9);
    let batch = common::train_batch(&data, 4);
    for arch in Arch::ALL {
        let m = build(&ModelConfig::toy(arch), toy_window(), 2).unwrap();
        let a = m.predict(&batch, F64).unwrap();
        let b = m.predict(&batch, GemmPrecision::F32).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-3, "{arch}");
    }
}
