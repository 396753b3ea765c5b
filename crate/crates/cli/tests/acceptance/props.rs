use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::{Device, Tensor, Var};
use nasp_core::dataio::{
    build_sample, gen_phantom, read_slice, slice_from_bytes, slice_to_bytes, write_slice, Contrast, PhantomSpec,
    PyramidConfig, Sample,
};
use nasp_core::fourier::{
    adjoint, adjoint_f64, forward, make_coil_maps, make_mask, make_pyramid, Acceleration, KSpaceMeasurement,
    MaskPattern, SamplingMask,
};
use nasp_core::ComplexImage;
use nasp_models::aqvae::losses::{commitment_loss, discriminator_loss, generator_adv_loss};
use nasp_models::aqvae::{
    level_batch, rotation_trick, target_batch, tokenizer_loss, AqVae, Codebook, RandomExtractor, TokenizerConfig,
};
use nasp_models::nextscale::{
    argmax, batch_logits, decode_row, filtered_distribution, make_batch, prepare_examples, reconstruct,
    ArModelConfig, DecodeStrategy, NextScaleModel, SequenceLayout, STUDENT_COMPONENT,
};
use nasp_models::opd::{fit_toy, reverse_kl_positions};
use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

fn sample(k: usize) -> Sample {
    let c = Contrast::ALL[k % 3];
    let p = MaskPattern::ALL[k % 4];
    let img = gen_phantom(&PhantomSpec::new(64, 64, c, k as u64)).unwrap();
    build_sample(&format!("s{k}"), c, p, k as u32, img, &PyramidConfig::default()).unwrap()
}

fn desk_tokenizer(samples: &[Sample]) -> AqVae {
    let mut tok = AqVae::new(&TokenizerConfig::desk(), 1).unwrap();
    tok.init_codebook(&samples.iter().collect::<Vec<_>>(), 2).unwrap();
    tok
}

fn values(t: &Tensor) -> Vec<f32> {
    t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
}

fn rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f32) -> Vec<f32> {
    (0..n * d).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn operator() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (h, w) = (32, 32);
    let mut worst = 0.0f64;
    for pattern in MaskPattern::ALL {
        for acc in [Acceleration::R2, Acceleration::R32] {
            for trial in 0..100u32 {
                let coils = 1 + trial as usize % 4;
                let sens = make_coil_maps(coils, (h, w), trial as u64)?;
                let mask = make_mask(pattern, acc, (h, w), trial)?;
                let x = ComplexImage::from_fn(h, w, |_, _| {
                    Complex32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                })?;
                let values = (0..coils)
                    .map(|_| {
                        (0..h * w)
                            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                            .collect()
                    })
                    .collect();
                let y = KSpaceMeasurement::new(mask.clone(), values)?;
                let lhs = forward(&x, &sens, &mask)?.inner(&y);
                let rhs: Complex64 = x
                    .data()
                    .iter()
                    .zip(adjoint_f64(&y, &sens)?)
                    .map(|(a, b)| Complex64::new(a.re as f64, a.im as f64) * b.conj())
                    .sum();
                let rel = (lhs - rhs).norm() / (x.norm_l2() * y.norm_sqr().sqrt());
                worst = worst.max(rel);
            }
        }
    }
    ensure!(worst <= 1e-5, "adjoint mismatch {worst:.2e} > 1e-5");
    let mut round_trip = 0.0f32;
    for pattern in MaskPattern::ALL {
        let x = gen_phantom(&PhantomSpec::new(64, 64, Contrast::T2, 3))?;
        let sens = make_coil_maps(1, (64, 64), 0)?;
        let full = SamplingMask::full(pattern, 64, 64, 0)?;
        let back = adjoint(&forward(&x, &sens, &full)?, &sens)?;
        for (a, b) in back.data().iter().zip(x.data()) {
            round_trip = round_trip.max((a - b).norm());
        }
    }
    ensure!(round_trip <= 1e-5, "FS round trip error {round_trip:.2e}");
    ensure!(t.elapsed().as_secs() < 60, "took {:?}", t.elapsed());
    Ok(format!("800 trials, worst relative gap {worst:.1e}, FS round trip {round_trip:.1e}"))
}

pub fn masks() -> Outcome {
    let t = Instant::now();
    let undersampled = &Acceleration::SCHEDULE[..5];
    for case in 0..400u32 {
        let pattern = MaskPattern::ALL[case as usize % 4];
        let acc = undersampled[(case as usize / 4) % 5];
        let shape = if case % 2 == 0 { (64, 64) } else { (96, 128) };
        let m = make_mask(pattern, acc, shape, case)?;
        let budget = ((shape.0 * shape.1) as f64 / acc.factor() as f64).round() as usize;
        ensure!(m.count() == budget, "case {case}: {} points, budget {budget}", m.count());
        let p = make_pyramid(pattern, shape, case, false)?;
        ensure!(p.is_nested(), "case {case}: pyramid not nested");
        for (level, acc) in Acceleration::SCHEDULE.iter().enumerate() {
            let budget = ((shape.0 * shape.1) as f64 / acc.factor() as f64).round() as usize;
            ensure!(p.masks[level].count() == budget, "case {case}: level {level} off budget");
        }
    }
    ensure!(t.elapsed().as_secs() < 60, "took {:?}", t.elapsed());
    Ok("400 masks and pyramids exact and nested".into())
}

/// `lambda * R` for one row as an explicit matrix in f64.
fn frozen_map(z: &[f64], q: &[f64]) -> Vec<Vec<f64>> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let zh: Vec<f64> = z.iter().map(|x| x / norm(z)).collect();
    let qh: Vec<f64> = q.iter().map(|x| x / norm(q)).collect();
    let s: Vec<f64> = zh.iter().zip(&qh).map(|(a, b)| a + b).collect();
    let r: Vec<f64> = s.iter().map(|x| x / norm(&s)).collect();
    let lambda = norm(q) / norm(z);
    (0..z.len())
        .map(|i| {
            (0..z.len())
                .map(|j| lambda * (f64::from(i == j) - 2.0 * r[i] * r[j] + 2.0 * qh[i] * zh[j]))
                .collect()
        })
        .collect()
}

pub fn quantizer() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (v, d) = (512, 16);
    let codes = rows(&mut rng, v, d, 1.0);
    let cb = Codebook::from_vectors(v, d, codes.clone(), 0.99, 1e-5)?;
    let z = rows(&mut rng, 1000, d, 1.2);
    for (k, (row, got)) in z.chunks_exact(d).zip(cb.assign(&z)).enumerate() {
        let best = codes
            .chunks_exact(d)
            .map(|c| c.iter().zip(row).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        ensure!(got as usize == best, "vector {k}: {got} vs exhaustive {best}");
    }

    let (v, d, n) = (16, 6, 5);
    let cb = Codebook::from_vectors(v, d, rows(&mut rng, v, d, 1.0), 0.99, 1e-5)?;
    let z0 = rows(&mut rng, n, d, 1.0);
    let w = rows(&mut rng, n, d, 1.0);
    let q: Vec<f32> = cb.assign(&z0).iter().flat_map(|&k| cb.vector(k as usize).to_vec()).collect();
    let zv = Var::from_slice(&z0, (n, d), &Device::Cpu)?;
    let out = rotation_trick(zv.as_tensor(), &Tensor::from_slice(&q, (n, d), &Device::Cpu)?)?;
    let loss = (out * Tensor::from_slice(&w, (n, d), &Device::Cpu)?)?.sum_all()?;
    let g = values(loss.backward()?.get(zv.as_tensor()).ok_or("no gradient")?);
    let h = 1e-3;
    let mut worst = 0.0f64;
    for row in 0..n {
        let f64s = |s: &[f32]| s[row * d..(row + 1) * d].iter().map(|&x| x as f64).collect::<Vec<_>>();
        let (zr, qr, wr) = (f64s(&z0), f64s(&q), f64s(&w));
        let m = frozen_map(&zr, &qr);
        let f = |x: &[f64]| -> f64 {
            m.iter().zip(&wr).map(|(r, wi)| wi * r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).sum()
        };
        for j in 0..d {
            let (mut plus, mut minus) = (zr.clone(), zr.clone());
            plus[j] += h;
            minus[j] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            worst = worst.max((g[row * d + j] as f64 - fd).abs() / fd.abs().max(1e-3));
        }
    }
    ensure!(worst <= 1e-3, "rotation-trick gradient off by {worst:.2e} relative");
    ensure!(t.elapsed().as_secs() < 120, "took {:?}", t.elapsed());
    Ok(format!("1000/1000 nearest codes exact; gradient relative error {worst:.1e}"))
}

pub fn ema() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 8;
    let mut cb = Codebook::from_vectors(32, d, rows(&mut rng, 32, d, 1.0), 0.0, 1e-5)?;
    let data = rows(&mut rng, 100, d, 1.0);
    cb.ema_update(&[5; 100], &data)?;
    let mut worst_mean = 0.0f64;
    for j in 0..d {
        let mean = data.chunks_exact(d).map(|r| r[j] as f64).sum::<f64>() / 100.0;
        worst_mean = worst_mean.max((cb.vector(5)[j] as f64 - mean).abs());
    }
    ensure!(worst_mean <= 1e-6, "decay 0 mean error {worst_mean:.2e}");

    let (v, d) = (24, 4);
    let mut cb = Codebook::from_vectors(v, d, rows(&mut rng, v, d, 1.0), 0.9, 1e-5)?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..40);
        let idx: Vec<u32> = (0..n).map(|_| rng.gen_range(0..v as u32)).collect();
        cb.ema_update(&idx, &rows(&mut rng, n, d, 2.0))?;
        for k in 0..v {
            let denom = cb.ema_counts()[k] + cb.eps;
            for j in 0..d {
                let rhs = cb.ema_sums()[k * d + j];
                let rel = (cb.exact_vectors()[k * d + j] * denom - rhs).abs() / rhs.abs().max(1.0);
                worst = worst.max(rel);
            }
        }
    }
    ensure!(worst <= 1e-9, "invariant violated by {worst:.2e}");
    Ok(format!("cluster mean error {worst_mean:.1e}; invariant gap {worst:.1e} over 100 updates"))
}

pub fn losses() -> Outcome {
    let samples: Vec<Sample> = (0..2).map(sample).collect();
    let tok = desk_tokenizer(&samples);
    let refs: Vec<&Sample> = samples.iter().collect();
    let (inputs, labels) = level_batch(&refs)?;
    let target = target_batch(&refs)?;
    let ex = RandomExtractor::new(&tok.cfg.extractor_widths, tok.cfg.extractor_seed)?;
    let (_, b, _) = tokenizer_loss(&tok, &ex, None, &inputs, &labels, &target, false)?;
    ensure!(b.weights == [1.0, 0.1, 0.1, 0.25], "weights {:?}", b.weights);

    let table = Var::from_tensor(&Tensor::randn(0f32, 1.0, (8, 4), &Device::Cpu)?)?;
    let codes = table.as_tensor().index_select(&Tensor::new(&[1u32, 3, 3, 7], &Device::Cpu)?, 0)?;
    let z = Var::from_tensor(&Tensor::randn(0f32, 1.0, (4, 4), &Device::Cpu)?)?;
    let grads = commitment_loss(&[z.as_tensor().clone()], &[codes], 0.25)?.backward()?;
    let leak = grads
        .get(table.as_tensor())
        .map(|g| values(g).iter().fold(0.0f32, |a, v| a.max(v.abs())))
        .unwrap_or(0.0);
    ensure!(leak == 0.0, "commitment gradient reaches the codebook ({leak})");

    let half: Vec<Tensor> = (0..4).map(|_| Tensor::full(0.5f32, (1, 5, 5), &Device::Cpu).unwrap()).collect();
    let ld = discriminator_loss(&half, &half)?.to_scalar::<f32>()?;
    let la = generator_adv_loss(&half)?.to_scalar::<f32>()?;
    ensure!((ld - 1.0).abs() < 1e-6, "L_D at D=0.5 is {ld}, expected 1.0");
    ensure!((la - 1.0).abs() < 1e-6, "L_adv at D=0.5 is {la}, expected 4 x 0.25");
    Ok(format!("weights {:?}; codebook gradient 0; L_D {ld}, L_adv {la}", b.weights))
}

pub fn transformer() -> Outcome {
    let paper = SequenceLayout::new(&[11, 12, 13, 14, 15, 16])?;
    ensure!(
        paper.context_len() == 855 && paper.total_tokens() == 1111,
        "paper-profile layout {} / {}",
        paper.context_len(),
        paper.total_tokens()
    );
    let samples: Vec<Sample> = (0..4).map(sample).collect();
    let tok = desk_tokenizer(&samples);
    let model = NextScaleModel::new(&ArModelConfig::desk(), &tok, 1)?;
    let ex = prepare_examples(&tok, &samples, 4)?;
    let batch = make_batch(&ex.iter().collect::<Vec<_>>())?;
    let ctx = model.encode_context(&batch.x32, &batch.labels32)?;
    let base = model.forward(&batch.maps, &ctx, None, 5, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f32;
    for changed in 1..6 {
        let mut maps = batch.maps.clone();
        for t in maps.iter_mut().skip(changed) {
            let (b, n) = t.dims2()?;
            let v: Vec<u32> = (0..b * n).map(|_| rng.gen_range(0..512)).collect();
            *t = Tensor::from_vec(v, (b, n), &Device::Cpu)?;
        }
        let out = model.forward(&maps, &ctx, None, 5, None)?;
        for k in 0..changed.min(5) {
            let d = values(&base[k]).iter().zip(values(&out[k])).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            worst = worst.max(d);
        }
    }
    ensure!(worst < 1e-5, "earlier-scale logits moved by {worst:.2e}");

    let targets: Vec<Tensor> = batch
        .maps
        .iter()
        .map(|t| {
            let (b, n) = t.dims2().unwrap();
            let v: Vec<u32> = (0..b * n).map(|_| rng.gen_range(0..512)).collect();
            Tensor::from_vec(v, (b, n), &Device::Cpu).unwrap()
        })
        .collect();
    let ce = model.cross_entropy(&base, &targets)?.to_scalar::<f32>()? as f64;
    let ln_v = 512f64.ln();
    ensure!((ce - ln_v).abs() <= 0.05 * ln_v, "init CE {ce:.3} vs ln V {ln_v:.3}");
    Ok(format!("855/1111 tokens; causality gap {worst:.1e}; init CE {ce:.3} (ln V {ln_v:.3})"))
}

pub fn decoding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..1000u64 {
        let row: Vec<f32> = (0..512).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut r = ChaCha8Rng::seed_from_u64(k);
        let got = decode_row(&row, &DecodeStrategy::top_k_p(1, 0.96, k), &mut r)?;
        ensure!(got == argmax(&row)?, "row {k}: top_k=1 gave {got}");
    }
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..600);
        let row: Vec<f32> = (0..n).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let s = DecodeStrategy::top_k_p(rng.gen_range(1..=n), rng.gen_range(0.05..1.0), 0);
        worst = worst.max((filtered_distribution(&row, &s)?.iter().sum::<f64>() - 1.0).abs());
    }
    ensure!(worst <= 1e-6, "filtered distribution off by {worst:.2e}");

    let samples: Vec<Sample> = (0..3).map(sample).collect();
    let tok = desk_tokenizer(&samples);
    let model = NextScaleModel::new(&ArModelConfig::desk(), &tok, 1)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let a = reconstruct(&model, &tok, &refs, &DecodeStrategy::argmax(), 2)?;
    let b = reconstruct(&model, &tok, &refs, &DecodeStrategy::argmax(), 2)?;
    for (x, y) in a.iter().zip(&b) {
        ensure!(x.image == y.image && x.tokens == y.tokens, "argmax reconstruction of {} differs", x.id);
    }
    Ok(format!("1000/1000 top_k=1 rows equal argmax; mass error {worst:.1e}; argmax reruns identical"))
}

fn kl(s: &[f32], t: &[f32]) -> f64 {
    let st = Tensor::from_slice(s, s.len(), &Device::Cpu).unwrap();
    let tt = Tensor::from_slice(t, t.len(), &Device::Cpu).unwrap();
    reverse_kl_positions(&st, &tt).unwrap().to_scalar::<f32>().unwrap() as f64
}

pub fn reverse_kl() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut lowest = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.gen_range(2..64);
        let s: Vec<f32> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let t: Vec<f32> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        lowest = lowest.min(kl(&s, &t));
    }
    ensure!(lowest >= -1e-6, "negative KL {lowest}");
    // uniform student against a teacher with 0.97 on one of four tokens
    let teacher: Vec<f32> = [0.97f64, 0.01, 0.01, 0.01].iter().map(|p| p.ln() as f32).collect();
    let closed = kl(&[0.0; 4], &teacher);
    ensure!((closed - 2.075).abs() <= 1e-3, "closed form {closed:.5}, expected 2.075");
    let toy = fit_toy(true, 2.0, 600)?;
    ensure!(toy.dominant_mass() >= 0.95, "toy dominant mass {:.3}", toy.dominant_mass());
    Ok(format!(
        "min KL {lowest:.1e} over 1000 pairs; closed form {closed:.4}; toy mode mass {:.3}",
        toy.dominant_mass()
    ))
}

pub fn formats() -> Outcome {
    let dir = tempfile::tempdir()?;
    let img = gen_phantom(&PhantomSpec::new(64, 64, Contrast::Flair, 9))?;
    let bytes = slice_to_bytes(std::slice::from_ref(&img))?;
    ensure!(bytes.len() == 32784, "64x64 single-coil slice is {} bytes", bytes.len());
    ensure!(slice_to_bytes(&slice_from_bytes(&bytes)?)? == bytes, "MRSL bytes changed on round trip");
    let path = dir.path().join("s.mrsl");
    write_slice(&path, std::slice::from_ref(&img))?;
    ensure!(read_slice(&path)? == vec![img], "MRSL file round trip changed the slice");
    for pattern in MaskPattern::ALL {
        let m = make_mask(pattern, Acceleration::R8, (64, 64), 5)?;
        ensure!(SamplingMask::from_bytes(&m.to_bytes())? == m, "MRMK round trip changed {pattern:?}");
        let p = dir.path().join(format!("{}.mrmk", pattern.name()));
        m.write(&p)?;
        ensure!(SamplingMask::read(&p)? == m, "MRMK file round trip changed {pattern:?}");
    }

    let samples: Vec<Sample> = (0..2).map(sample).collect();
    let refs: Vec<&Sample> = samples.iter().collect();
    let tok = desk_tokenizer(&samples);
    tok.to_checkpoint("desk", 1, BTreeMap::new())?.save(&dir.path().join("tok"))?;
    let tok_back = AqVae::load(&dir.path().join("tok"))?;
    ensure!(tok.reconstruct(&refs)? == tok_back.reconstruct(&refs)?, "tokenizer probe batch differs after reload");
    let model = NextScaleModel::new(&ArModelConfig::desk(), &tok, 1)?;
    model.to_checkpoint("desk", 1, BTreeMap::new())?.save(&dir.path().join("ar"))?;
    let back = NextScaleModel::load(&dir.path().join("ar"), STUDENT_COMPONENT)?;
    let ex = prepare_examples(&tok, &samples, 2)?;
    let batch = make_batch(&ex.iter().collect::<Vec<_>>())?;
    let a = batch_logits(&model, &batch, &batch.maps, None)?;
    let b = batch_logits(&back, &batch, &batch.maps, None)?;
    for (x, y) in a.iter().zip(&b) {
        ensure!(values(x) == values(y), "transformer probe logits differ after reload");
    }
    Ok("MRSL 32784 bytes; MRSL/MRMK/checkpoint round trips bitwise".into())
}
