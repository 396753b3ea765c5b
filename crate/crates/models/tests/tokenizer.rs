mod common;

use std::collections::BTreeMap;

use candle_core::{Device, Tensor, Var};
use nasp_core::dataio::{Checkpoint, Sample};
use nasp_models::aqvae::losses::{commitment_loss, discriminator_loss, generator_adv_loss, perceptual_loss, ssim_loss};
use nasp_models::aqvae::network::magnitude;
use nasp_models::aqvae::{
    level_batch, target_batch, tokenizer_loss, train_tokenizer, AqVae, DiscriminatorHeads, RandomExtractor,
    TokenizerConfig, TokenizerTrainConfig,
};
use nasp_models::optim::{Decay, Schedule, Trainer};
use nasp_models::params::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn values(t: &Tensor) -> Vec<f32> {
    t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
}

fn adam(model: &AqVae, lr: f64, total: usize) -> Trainer {
    let schedule = Schedule {
        peak: lr,
        floor: lr,
        warmup: 1,
        total,
        decay: Decay::Cosine,
    };
    Trainer::new(model.params.vars(), schedule, (0.9, 0.95), 0.0, 5.0).unwrap()
}

#[test]
fn paper_profile_latent_is_16_by_16() {
    let cfg = TokenizerConfig::paper();
    cfg.validate().unwrap();
    assert_eq!(cfg.base_side(), 16);
    assert_eq!(cfg.image_side, 256);
    assert_eq!((cfg.codebook_size, cfg.latent_dim), (4096, 32));
}

#[test]
fn loss_weights_echo() {
    let samples = common::samples(2);
    let tok = common::tokenizer(32, &samples);
    let refs: Vec<&Sample> = samples.iter().collect();
    let (inputs, labels) = level_batch(&refs).unwrap();
    let target = target_batch(&refs).unwrap();
    let ex = RandomExtractor::new(&tok.cfg.extractor_widths, 1).unwrap();
    let (_, b, out) = tokenizer_loss(&tok, &ex, None, &inputs, &labels, &target, false).unwrap();
    assert_eq!(b.weights, [1.0, 0.1, 0.1, 0.25]);
    assert_eq!(b.adv, 0.0);
    let recomposed = 1.0 * b.ssim + 0.1 * b.perc + b.commit;
    assert!((recomposed - b.total).abs() < 1e-5);
    assert_eq!(out.quantized.len(), 6);
    let sides: Vec<usize> = out.quantized.iter().map(|q| q.tokens.side).collect();
    assert_eq!(sides, vec![3, 4, 5, 6, 7, 8]);
}

#[test]
fn film_is_identity_at_init_and_label_sensitive_after_training() {
    let samples = common::samples(2);
    let tok = common::tokenizer(32, &samples);
    let refs: Vec<&Sample> = samples.iter().collect();
    let x = target_batch(&refs[..1]).unwrap();
    let a = tok.encode(&x, &[0]).unwrap().latent;
    let b = tok.encode(&x, &[7]).unwrap().latent;
    assert_eq!(values(&a), values(&b));

    let ex = RandomExtractor::new(&tok.cfg.extractor_widths, 1).unwrap();
    let (inputs, labels) = level_batch(&refs).unwrap();
    let target = target_batch(&refs).unwrap();
    let mut opt = adam(&tok, 1e-2, 3);
    for _ in 0..3 {
        let (loss, _, _) = tokenizer_loss(&tok, &ex, None, &inputs, &labels, &target, true).unwrap();
        opt.backward_step(&loss).unwrap();
    }
    let la = tok.encode(&x, &[labels[0]]).unwrap().latent;
    let lb = tok.encode(&x, &[labels[6]]).unwrap().latent;
    let dist = (la - lb).unwrap().sqr().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
    assert!(dist > 0.0);
}

#[test]
fn train_and_eval_quantization_agree_in_value() {
    let samples = common::samples(2);
    let tok = common::tokenizer(32, &samples);
    let refs: Vec<&Sample> = samples.iter().collect();
    let (inputs, labels) = level_batch(&refs).unwrap();
    let a = tok.forward_levels(&inputs, &labels, true).unwrap();
    let b = tok.forward_levels(&inputs, &labels, false).unwrap();
    for (qa, qb) in a.quantized.iter().zip(&b.quantized) {
        assert_eq!(qa.tokens, qb.tokens);
        assert_eq!(values(&qa.zq), values(&qb.zq));
    }
    assert_eq!(values(&a.recon), values(&b.recon));
}

#[test]
fn refine_is_identity_at_init_and_bypassed_at_zero_strength() {
    let samples = common::samples(1);
    let tok = common::tokenizer(32, &samples);
    let plain = AqVae::new(
        &TokenizerConfig {
            rho: 0.0,
            ..common::tiny_tokenizer(32)
        },
        3,
    )
    .unwrap();
    for (k, &side) in tok.schedule().iter().enumerate() {
        let zq = randn(&[4, 2, side, side], k as u64);
        let r = tok.refine(&zq, k).unwrap();
        assert_eq!(r.dims(), &[4, 2, 8, 8]);
        assert_eq!(values(&r), values(&plain.refine(&zq, k).unwrap()));
    }
}

#[test]
fn upsampling_a_constant_grid_stays_constant() {
    let tok = AqVae::new(&common::tiny_tokenizer(32), 3).unwrap();
    let zq = Tensor::full(0.75f32, (4, 1, 3, 3), &Device::Cpu).unwrap();
    for v in values(&tok.refine(&zq, 0).unwrap()) {
        assert!((v - 0.75).abs() < 1e-6);
    }
}

#[test]
fn fuse_is_the_elementwise_mean() {
    let one = randn(&[4, 2, 8, 8], 1);
    assert_eq!(values(&AqVae::fuse(std::slice::from_ref(&one)).unwrap()), values(&one));
    let twice = AqVae::fuse(&[one.clone(), one.clone()]).unwrap();
    for (a, b) in values(&twice).iter().zip(values(&one)) {
        assert!((a - b).abs() < 1e-7);
    }
    let six: Vec<Tensor> = (0..6).map(|k| randn(&[4, 2, 8, 8], 10 + k)).collect();
    let fused = values(&AqVae::fuse(&six).unwrap());
    let all: Vec<Vec<f32>> = six.iter().map(values).collect();
    for (i, f) in fused.iter().enumerate() {
        let mean = all.iter().map(|v| v[i] as f64).sum::<f64>() / 6.0;
        assert!((*f as f64 - mean).abs() < 1e-7);
    }
    assert!(AqVae::fuse(&[]).is_err());
}

#[test]
fn decode_shape_and_determinism() {
    let tok = AqVae::new(&common::tiny_tokenizer(32), 3).unwrap();
    let z = randn(&[4, 3, 8, 8], 4);
    let a = tok.decode(&z).unwrap();
    assert_eq!(a.dims(), &[2, 3, 64, 64]);
    assert_eq!(values(&a), values(&tok.decode(&z).unwrap()));
    let peak = magnitude(&a).unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f32>().unwrap();
    assert!((peak - 1.0).abs() < 1e-5);
    assert!(tok.decode(&randn(&[4, 1, 7, 7], 1)).is_err());
}

#[test]
fn encoder_rejects_unnormalized_input() {
    let tok = AqVae::new(&common::tiny_tokenizer(32), 3).unwrap();
    let x = (randn(&[2, 1, 64, 64], 2) * 4.0).unwrap();
    assert!(tok.encode(&x, &[0]).is_err());
}

#[test]
fn commitment_closed_forms_and_stop_gradient() {
    let z = randn(&[4, 1, 3, 3], 3);
    let zero = commitment_loss(std::slice::from_ref(&z), std::slice::from_ref(&z), 0.25).unwrap();
    assert_eq!(zero.to_scalar::<f32>().unwrap(), 0.0);
    let q = (&z - 2.0).unwrap();
    let one = commitment_loss(&[z.clone()], &[q], 0.25).unwrap();
    assert!((one.to_scalar::<f32>().unwrap() - 1.0).abs() < 1e-6);

    // codes gathered from a trainable table receive no gradient through the commitment term
    let table = Var::from_tensor(&randn(&[8, 4], 5)).unwrap();
    let idx = Tensor::new(&[1u32, 3, 3, 7, 0, 2], &Device::Cpu).unwrap();
    let codes = table.as_tensor().index_select(&idx, 0).unwrap();
    let zv = Var::from_tensor(&randn(&[6, 4], 6)).unwrap();
    let loss = commitment_loss(&[zv.as_tensor().clone()], &[codes], 0.25).unwrap();
    let grads = loss.backward().unwrap();
    if let Some(g) = grads.get(table.as_tensor()) {
        assert!(values(g).iter().all(|&v| v == 0.0));
    }
    assert!(grads.get(zv.as_tensor()).is_some());
    assert!(commitment_loss(&[], &[], 0.25).is_err());
}

#[test]
fn lsgan_constant_output_closed_forms() {
    let half: Vec<Tensor> = (0..4).map(|_| Tensor::full(0.5f32, (1, 5, 5), &Device::Cpu).unwrap()).collect();
    let ld = discriminator_loss(&half, &half).unwrap().to_scalar::<f32>().unwrap();
    assert!((ld - 1.0).abs() < 1e-6);
    let la = generator_adv_loss(&half).unwrap().to_scalar::<f32>().unwrap();
    assert!((la - 4.0 * 0.25).abs() < 1e-6);

    // fake == real: the generator term is MSE(D(real), 1) summed over heads
    let scores: Vec<Tensor> = (0..4).map(|k| randn(&[1, 4, 4], 30 + k)).collect();
    let direct: f32 = scores
        .iter()
        .map(|s| values(s).iter().map(|v| (v - 1.0).powi(2)).sum::<f32>() / 16.0)
        .sum();
    let la = generator_adv_loss(&scores).unwrap().to_scalar::<f32>().unwrap();
    assert!((la - direct).abs() < 1e-5);
}

#[test]
fn discriminator_loss_does_not_reach_the_generator() {
    let samples = common::samples(1);
    let tok = common::tokenizer(32, &samples);
    let refs: Vec<&Sample> = samples.iter().collect();
    let (inputs, labels) = level_batch(&refs).unwrap();
    let target = target_batch(&refs).unwrap();
    let ex = RandomExtractor::new(&tok.cfg.extractor_widths, 1).unwrap();
    let dps = ParamStore::new(9);
    let heads = DiscriminatorHeads::new(&dps.pp("disc"), &tok.cfg.extractor_widths).unwrap();
    let out = tok.forward_levels(&inputs, &labels, true).unwrap();
    let fake = magnitude(&out.recon.detach()).unwrap().unsqueeze(0).unwrap();
    let real = magnitude(&target).unwrap().unsqueeze(0).unwrap();
    let ld = discriminator_loss(
        &heads.forward(&ex.forward(&real).unwrap()).unwrap(),
        &heads.forward(&ex.forward(&fake).unwrap()).unwrap(),
    )
    .unwrap();
    let grads = ld.backward().unwrap();
    for v in tok.params.vars() {
        assert!(grads.get(v.as_tensor()).is_none());
    }
    assert!(dps.vars().iter().any(|v| grads.get(v.as_tensor()).is_some()));
}

#[test]
fn perfect_reconstruction_terms_vanish() {
    let x = randn(&[2, 16, 16], 12).abs().unwrap();
    assert!(ssim_loss(&x, &x).unwrap().to_scalar::<f32>().unwrap().abs() < 1e-5);
    let ex = RandomExtractor::new(&[4, 4, 8, 8], 1).unwrap();
    let f = ex.forward(&x.unsqueeze(0).unwrap()).unwrap();
    assert_eq!(perceptual_loss(&f, &f).unwrap().to_scalar::<f32>().unwrap(), 0.0);
}

#[test]
fn overfitting_one_batch_halves_the_loss() {
    let samples = common::samples(2);
    let tok = common::tokenizer(32, &samples);
    let refs: Vec<&Sample> = samples.iter().collect();
    let (inputs, labels) = level_batch(&refs).unwrap();
    let target = target_batch(&refs).unwrap();
    let ex = RandomExtractor::new(&tok.cfg.extractor_widths, 1).unwrap();
    let mut opt = adam(&tok, 3e-3, 200);
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..200 {
        let (loss, b, _) = tokenizer_loss(&tok, &ex, None, &inputs, &labels, &target, true).unwrap();
        first.get_or_insert(b.total);
        last = b.total;
        opt.backward_step(&loss).unwrap();
    }
    let first = first.unwrap();
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

fn short_config() -> TokenizerTrainConfig {
    TokenizerTrainConfig {
        epochs: 2,
        batch_size: 2,
        warmup_steps: 1,
        adv_start_step: 1,
        ..Default::default()
    }
}

#[test]
fn training_is_seed_deterministic_and_keeps_the_best_epoch() {
    let train = common::samples(4);
    let val: Vec<Sample> = (10..12).map(common::sample).collect();
    let run = || {
        let mut tok = AqVae::new(&common::tiny_tokenizer(32), 3).unwrap();
        let report = train_tokenizer(&mut tok, &train, &val, &short_config(), |_| {}).unwrap();
        (report, tok)
    };
    let (a, tok) = run();
    let (b, _) = run();
    assert_eq!(a.val_ssim, b.val_ssim);
    assert_eq!(a.steps, 4);
    assert!(a.best_val_ssim >= a.last_val_ssim);
    let refs: Vec<&Sample> = val.iter().collect();
    let restored = nasp_models::aqvae::train::mean_ssim(&tok, &refs, 2).unwrap();
    assert!((restored - a.best_val_ssim).abs() < 1e-9);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let samples = common::samples(2);
    let tok = common::tokenizer(32, &samples);
    let refs: Vec<&Sample> = samples.iter().collect();
    let dir = tempfile::tempdir().unwrap();
    let mut metrics = BTreeMap::new();
    metrics.insert("val_ssim".to_string(), 0.5);
    tok.to_checkpoint("desk", 3, metrics).unwrap().save(dir.path()).unwrap();
    let back = AqVae::load(dir.path()).unwrap();
    assert_eq!(back.cfg, tok.cfg);
    assert_eq!(back.codebook.vectors(), tok.codebook.vectors());
    let a = tok.reconstruct(&refs).unwrap();
    let b = back.reconstruct(&refs).unwrap();
    assert_eq!(a, b);
    assert_eq!(tok.tokenize(&refs).unwrap(), back.tokenize(&refs).unwrap());

    let manifest = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, &text[..text.len() / 2]).unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
}
