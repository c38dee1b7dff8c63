//! Detection heads: model shapes, hand-derived gradients, training loop,
//! and checkpoint serialization.

mod checkpoint;
pub mod gradcheck;
mod linalg;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CheckpointMeta};
pub use model::{bce_loss, sigmoid, GradBuffer, HeadError, HeadKind, HeadModel, PairMode, PROB_EPS};
pub use train::{
    predict_batch, scored_samples, train_on_fixed, EpochLog, PairSample, TrainConfig, TrainError,
    TrainOutcome, Trainer,
};

#[cfg(test)]
mod tests {
    use super::gradcheck::max_rel_grad_error;
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_input(tokens: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = derive_rng(seed, "test_input", &[]);
        (0..tokens * dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn bce_matches_worked_examples() {
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        // logit 2, label 1: loss = ln(1 + e^-2)
        let p = sigmoid(2.0);
        assert!((bce_loss(p, 1.0) - 0.126_928_011_042_972_6).abs() < 1e-12);
    }

    #[test]
    fn fresh_models_predict_exactly_one_half() {
        for kind in HeadKind::ALL {
            let model = HeadModel::new(kind, PairMode::OriginalDisrupted, 8, 3).unwrap();
            let x = random_input(2, 8, 11);
            assert_eq!(model.probability(&x), 0.5, "{kind:?}");
        }
    }

    #[test]
    fn linear_bias_gradient_is_probability_minus_label() {
        let mut rng = derive_rng(5, "gc", &[]);
        let mut model =
            HeadModel::new_randomized(HeadKind::FcOnly, PairMode::OriginalDisrupted, 6, &mut rng)
                .unwrap();
        let x = random_input(2, 6, 21);
        let mut grads = model.grad_buffer();
        let (_, p) = model.loss_grad(&x, 1.0, &mut grads);
        let db = grads.0.tensors()[1][0];
        assert!((db - (p - 1.0)).abs() < 1e-12);
        let _ = &mut model;
    }

    #[test]
    fn attention_logit_matches_straight_line_reimplementation() {
        let dim = 4;
        let mut rng = derive_rng(9, "gc", &[]);
        let model = HeadModel::new_randomized(
            HeadKind::SelfAttention,
            PairMode::OriginalDisrupted,
            dim,
            &mut rng,
        )
        .unwrap();
        let x = random_input(2, dim, 33);
        let t = model.token_count();
        let ts = model.tensors();
        let (wq, wk, wv, wo, w, b) = (ts[0], ts[1], ts[2], ts[3], ts[4], ts[5]);
        let proj = |m: &Vec<f64>| -> Vec<f64> {
            let mut out = vec![0.0; t * dim];
            for r in 0..t {
                for c in 0..dim {
                    for i in 0..dim {
                        out[r * dim + c] += x[r * dim + i] * m[i * dim + c];
                    }
                }
            }
            out
        };
        let (q, k, v) = (proj(wq), proj(wk), proj(wv));
        let scale = 1.0 / (dim as f64).sqrt();
        let mut o_flat = vec![0.0; t * dim];
        for r in 0..t {
            let mut scores = vec![0.0; t];
            for c in 0..t {
                for i in 0..dim {
                    scores[c] += q[r * dim + i] * k[c * dim + i];
                }
                scores[c] *= scale;
            }
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut h = vec![0.0; dim];
            for c in 0..t {
                let a = exps[c] / z;
                for i in 0..dim {
                    h[i] += a * v[c * dim + i];
                }
            }
            for cc in 0..dim {
                for i in 0..dim {
                    o_flat[r * dim + cc] += h[i] * wo[i * dim + cc];
                }
            }
        }
        let logit_ref: f64 =
            o_flat.iter().zip(w).map(|(ov, wv_)| ov * wv_).sum::<f64>() + b[0];
        assert!((model.logit(&x) - logit_ref).abs() < 1e-10);
    }

    #[test]
    fn attention_is_equivariant_under_token_swap() {
        let dim = 8;
        let mut rng = derive_rng(13, "gc", &[]);
        let model = HeadModel::new_randomized(
            HeadKind::SelfAttention,
            PairMode::OriginalDisrupted,
            dim,
            &mut rng,
        )
        .unwrap();
        // Swap the two halves of the classifier row to follow the swapped
        // token order; everything upstream is permutation-equivariant.
        let mut swapped = model.clone();
        {
            let mut ts = swapped.tensors_mut();
            let w = &mut ts[4];
            let (lo, hi) = w.split_at_mut(dim);
            lo.swap_with_slice(hi);
        }
        let x = random_input(2, dim, 44);
        let mut x_swapped = x[dim..].to_vec();
        x_swapped.extend_from_slice(&x[..dim]);
        assert!((model.logit(&x) - swapped.logit(&x_swapped)).abs() < 1e-12);
    }

    #[test]
    fn finite_differences_agree_with_analytic_gradients() {
        let dim = 8;
        let mut worst = 0.0f64;
        for (which, kind) in HeadKind::ALL.into_iter().enumerate() {
            for (mi, mode) in PairMode::ALL.into_iter().enumerate() {
                let mut rng = derive_rng(700 + which as u64, "gc", &[mi as u64]);
                let mut model = HeadModel::new_randomized(kind, mode, dim, &mut rng).unwrap();
                let x = random_input(mode.token_count(), dim, 900 + mi as u64);
                let y = f64::from(rng.gen_range(0..=1));
                let err = max_rel_grad_error(&mut model, &x, y, 1e-5);
                worst = worst.max(err);
                assert!(err < 1e-4, "{kind:?}/{mode:?}: rel err {err}");
            }
        }
        assert!(worst > 0.0);
    }

    #[test]
    fn saturated_probability_keeps_loss_and_gradients_finite() {
        let dim = 4;
        let mut model =
            HeadModel::new(HeadKind::FcOnly, PairMode::OriginalDisrupted, dim, 0).unwrap();
        // Push the logit far past the clamp on both sides.
        {
            let mut ts = model.tensors_mut();
            for v in ts[0].iter_mut() {
                *v = 50.0;
            }
        }
        let x = vec![1.0; 2 * dim];
        let mut grads = model.grad_buffer();
        for y in [0.0, 1.0] {
            grads.zero();
            let (loss, p) = model.loss_grad(&x, y, &mut grads);
            assert!(loss.is_finite(), "y={y}");
            assert!((0.0..=1.0).contains(&p));
            // On the clamp plateau the gradient is exactly zero for either label.
            assert!(grads.0.tensors().iter().all(|t| t.iter().all(|&g| g == 0.0)), "y={y}");
        }
    }

    #[test]
    fn pair_mode_assembly_and_validation() {
        let o = vec![1.0f32, 2.0];
        let s = vec![3.0f32, 4.0];
        assert_eq!(PairMode::OriginalOnly.assemble(&o, &s, 2).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            PairMode::OriginalDisrupted.assemble(&o, &s, 2).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            PairMode::OriginalOriginal.assemble(&o, &s, 2).unwrap(),
            vec![1.0, 2.0, 1.0, 2.0]
        );
        assert_eq!(
            PairMode::DisruptedDisrupted.assemble(&o, &s, 2).unwrap(),
            vec![3.0, 4.0, 3.0, 4.0]
        );
        assert!(matches!(
            PairMode::OriginalOnly.assemble(&o, &s, 3),
            Err(HeadError::DimMismatch { .. })
        ));
        assert!(matches!(
            PairMode::OriginalDisrupted.assemble(&[f32::NAN, 0.0], &s, 2),
            Err(HeadError::NonFinite)
        ));
    }

    #[test]
    fn transformer_dim_must_split_across_heads() {
        assert!(HeadModel::new(HeadKind::Transformer2, PairMode::OriginalDisrupted, 6, 0).is_err());
        assert!(HeadModel::new(HeadKind::Transformer2, PairMode::OriginalDisrupted, 8, 0).is_ok());
    }

    fn toy_pairs(n: usize, dim: usize, seed: u64) -> Vec<PairSample> {
        let mut rng = derive_rng(seed, "toy", &[]);
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let shift = if label == 1 { 2.0 } else { -2.0 };
                let noise = |rng: &mut _| -> f32 {
                    let g: f64 = StandardNormal.sample(rng);
                    (g * 0.3) as f32
                };
                let mut original = vec![0.0f32; dim];
                let mut disrupted = vec![0.0f32; dim];
                for j in 0..dim {
                    original[j] = noise(&mut rng);
                    disrupted[j] = noise(&mut rng);
                }
                original[0] += shift as f32;
                disrupted[0] -= shift as f32;
                PairSample {
                    original,
                    disrupted,
                    label,
                    generator_id: "toy".into(),
                    architecture_group: "toy".into(),
                }
            })
            .collect()
    }

    #[test]
    fn trainer_separates_a_linearly_separable_toy_set() {
        let dim = 4;
        let train = toy_pairs(200, dim, 1);
        let val = toy_pairs(60, dim, 2);
        let cfg = TrainConfig {
            learning_rate: 5e-2,
            batch_size: 32,
            epochs: 5,
            seed: 7,
            ..TrainConfig::default()
        };
        for kind in [HeadKind::FcOnly, HeadKind::Mlp, HeadKind::SelfAttention] {
            let model = HeadModel::new(kind, PairMode::OriginalDisrupted, dim, 3).unwrap();
            let out = train_on_fixed(model, cfg.clone(), &train, &val).unwrap();
            assert_eq!(out.best_val_accuracy, 1.0, "{kind:?}");
            assert_eq!(out.log.len(), 5);
            // Loss should drop early while the head is far from converged.
            assert!(out.log[1].train_loss < out.log[0].train_loss + 1e-3, "{kind:?}");
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let dim = 4;
        let train = toy_pairs(64, dim, 5);
        let val = toy_pairs(16, dim, 6);
        let cfg =
            TrainConfig { learning_rate: 1e-2, batch_size: 16, epochs: 3, ..TrainConfig::default() };
        let run = || {
            let model =
                HeadModel::new(HeadKind::SelfAttention, PairMode::OriginalDisrupted, dim, 3)
                    .unwrap();
            train_on_fixed(model, cfg.clone(), &train, &val).unwrap()
        };
        let (a, b) = (run(), run());
        let (ta, tb) = (a.model.tensors(), b.model.tensors());
        assert_eq!(ta.len(), tb.len());
        for (x, y) in ta.iter().zip(&tb) {
            assert_eq!(x, y);
        }
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn mlp_escapes_zero_output_layer_after_one_step() {
        let dim = 4;
        let train = toy_pairs(32, dim, 9);
        let val = toy_pairs(8, dim, 10);
        let cfg =
            TrainConfig { batch_size: 32, epochs: 1, ..TrainConfig::default() };
        let model = HeadModel::new(HeadKind::Mlp, PairMode::OriginalDisrupted, dim, 3).unwrap();
        let out = train_on_fixed(model, cfg, &train, &val).unwrap();
        // tensor order: w1, b1, w2, b2
        let w2 = out.model.tensors()[2];
        assert!(w2.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn train_config_serde_round_trip_and_strictness() {
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        let overridden: TrainConfig =
            serde_json::from_str(r#"{"batch_size": 64, "seed": 3}"#).unwrap();
        assert_eq!(overridden.batch_size, 64);
        assert_eq!(overridden.seed, 3);
        assert_eq!(overridden.learning_rate, 1e-4);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"batchsize": 64}"#).is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { adam_beta1: 1.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trips_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.d3ck");
        let mut rng = derive_rng(31, "gc", &[]);
        let model = HeadModel::new_randomized(
            HeadKind::Transformer2,
            PairMode::OriginalDisrupted,
            8,
            &mut rng,
        )
        .unwrap();
        let meta = CheckpointMeta {
            train: TrainConfig::default(),
            config_hash: "deadbeef".into(),
            code_version: "test".into(),
        };
        save_checkpoint(&path, &model, &meta).unwrap();
        let (loaded, got_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(got_meta.config_hash, "deadbeef");
        assert_eq!(loaded.kind(), model.kind());
        assert_eq!(loaded.pair_mode(), model.pair_mode());
        for (a, b) in loaded.tensors().iter().zip(model.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x, f64::from(*y as f32));
            }
        }
        // Same input must give the same probability up to f32 rounding.
        let x = random_input(2, 8, 77);
        assert!((loaded.probability(&x) - model.probability(&x)).abs() < 1e-4);
    }

    #[test]
    fn checkpoint_rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.d3ck");
        std::fs::write(&bad, b"NOPEnope").unwrap();
        assert!(matches!(load_checkpoint(&bad), Err(CheckpointError::BadMagic)));

        let path = dir.path().join("head.d3ck");
        let model = HeadModel::new(HeadKind::FcOnly, PairMode::OriginalOnly, 4, 0).unwrap();
        let meta = CheckpointMeta {
            train: TrainConfig::default(),
            config_hash: String::new(),
            code_version: String::new(),
        };
        save_checkpoint(&path, &model, &meta).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.d3ck");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&cut).is_err());
        let mut extended = bytes;
        extended.push(0);
        let long = dir.path().join("long.d3ck");
        std::fs::write(&long, &extended).unwrap();
        assert!(matches!(load_checkpoint(&long), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn predictions_keep_input_order() {
        let dim = 4;
        let samples = toy_pairs(10, dim, 15);
        let model = HeadModel::new(HeadKind::FcOnly, PairMode::OriginalDisrupted, dim, 3).unwrap();
        let probs = predict_batch(&model, &samples).unwrap();
        assert_eq!(probs.len(), 10);
        let scored = scored_samples(&model, &samples, crate::metrics::Domain::Id).unwrap();
        for (p, s) in probs.iter().zip(&scored) {
            assert_eq!(*p, s.probability);
        }
    }
}
