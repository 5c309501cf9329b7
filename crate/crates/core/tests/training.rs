use segan::audio_io::chunk;
use segan::dataset::TrainingPair;
use segan::model::{Ablation, GeneratorConfig, Segan};
use segan::tensor::{Graph, ParamStore, RmsProp, Tensor};
use segan::trainer::{enhance_waveform, train, Batch, TrainConfig, Trainer, ZMode, FINAL_CHECKPOINT};
use segan::Waveform;

fn tiny() -> GeneratorConfig {
    GeneratorConfig { window: 64, filter_width: 5, stride: 2, enc_channels: vec![4, 8], z_channels: 2 }
}

fn pairs(n: usize, window: usize, seed: u64) -> Vec<TrainingPair> {
    (0..n as u64)
        .map(|i| {
            let clean = Tensor::<f32>::randn(&[window], 0.2, seed + 2 * i).into_data();
            let noise = Tensor::<f32>::randn(&[window], 0.1, seed + 2 * i + 1).into_data();
            TrainingPair { noisy: clean.iter().zip(&noise).map(|(c, e)| c + e).collect(), clean }
        })
        .collect()
}

fn batch<T: segan::tensor::Scalar>(p: &[TrainingPair]) -> Batch<T> {
    Batch::from_pairs(&p.iter().collect::<Vec<_>>()).unwrap()
}

fn zero_weights<T: segan::tensor::Scalar>(store: &mut ParamStore<T>, prefix: &str) {
    let names: Vec<String> = store.names().filter(|n| n.starts_with(prefix) && (n.ends_with(".w") || n.ends_with(".b"))).map(str::to_string).collect();
    for n in names {
        let t = store.get_mut(&n).unwrap();
        *t = Tensor::zeros(t.shape());
    }
}

#[test]
fn saturated_discriminator_gives_no_generator_gradient() {
    let mut model = Segan::<f64>::build(&tiny(), 1).unwrap();
    zero_weights(&mut model.discriminator.params, "d.");
    model.discriminator.params.get_mut("d.out.b").unwrap().data_mut()[0] = 1.0;
    let data = pairs(4, 64, 2);
    let b = batch::<f64>(&data);
    let cfg = TrainConfig { lambda_l1: 0.0, ..Default::default() };
    let mut t = Trainer::new(model, cfg).unwrap();
    t.set_reference(&b).unwrap();
    let before = t.model.generator.params.clone();
    let (adv, _) = t.g_step(&b).unwrap();
    assert_eq!(adv, 0.0);
    assert_eq!(t.model.generator.params, before);
}

#[test]
fn l1_only_step_matches_a_hand_built_update() {
    let cfg = TrainConfig { adversarial: false, lambda_l1: 100.0, seed: 3, ..Default::default() };
    let model = Segan::<f64>::build(&tiny(), 4).unwrap();
    let data = pairs(5, 64, 5);
    let b = batch::<f64>(&data);
    let mut t = Trainer::new(model.clone(), cfg.clone()).unwrap();
    let z = t.z_for(b.size(), 0);
    let report = t.train_step(&b).unwrap();

    let mut g = Graph::new();
    let (x, c, zv) = (g.constant(b.noisy.clone()), g.constant(b.clean.clone()), g.constant(z));
    let (out, bound) = model.generator.forward(&mut g, x, zv, true, Ablation::default()).unwrap();
    let l1 = g.l1_loss(out, c).unwrap();
    let loss = g.scale(l1, 100.0).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut expected = model.generator.params.clone();
    RmsProp::new(cfg.optimizer()).step(&mut expected, &bound.gradients(&g, &grads));

    assert!((report.g_l1 - g.item(l1)).abs() < 1e-12);
    assert_eq!((report.d_real, report.d_fake, report.g_adv), (0.0, 0.0, 0.0));
    for (name, want) in expected.iter() {
        let got = t.model.generator.params.get(name).unwrap();
        let err = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{name}: {err}");
    }
    assert_eq!(t.model.discriminator, model.discriminator);
}

#[test]
fn long_file_is_chunked_and_trimmed() {
    let cfg = GeneratorConfig { window: 16384, filter_width: 31, stride: 2, enc_channels: vec![4, 4], z_channels: 2 };
    let gen = segan::Generator::<f32>::build(&cfg, 6).unwrap();
    let noisy = Waveform::new(Tensor::<f64>::randn(&[40000], 0.2, 7).into_data(), 16000);
    let chunks = chunk(&noisy.samples, 16384, 16384).unwrap();
    assert_eq!((chunks.chunks.len(), chunks.pad_len), (3, 3 * 16384 - 40000));
    let out = enhance_waveform(&gen, &noisy, ZMode::Seeded(1)).unwrap();
    assert_eq!(out.len(), 40000);
    assert_eq!(out.sample_rate, 16000);
}

#[test]
fn zero_generator_outputs_silence() {
    let mut gen = segan::Generator::<f32>::build(&tiny(), 8).unwrap();
    zero_weights(&mut gen.params, "g.");
    let noisy = Waveform::new(Tensor::<f64>::randn(&[1000], 0.5, 9).into_data(), 16000);
    let out = enhance_waveform(&gen, &noisy, ZMode::Seeded(3)).unwrap();
    assert_eq!(out.len(), 1000);
    assert!(out.samples.iter().all(|v| *v == 0.0));
}

#[test]
fn seeded_enhancement_is_repeatable() {
    let gen = segan::Generator::<f32>::build(&tiny(), 10).unwrap();
    let noisy = Waveform::new(Tensor::<f64>::randn(&[500], 0.5, 11).into_data(), 16000);
    let run = |z| enhance_waveform(&gen, &noisy, z).unwrap();
    assert_eq!(run(ZMode::Seeded(7)), run(ZMode::Seeded(7)));
    assert_eq!(run(ZMode::Zero), run(ZMode::Zero));
    assert_ne!(run(ZMode::Seeded(7)), run(ZMode::Seeded(8)));
}

#[test]
fn same_seed_same_checkpoint_bytes() {
    let data = pairs(10, 64, 12);
    let cfg = TrainConfig { epochs: 3, batch_size: 4, micro_batch: 2, seed: 13, checkpoint_every: 4, ..Default::default() };
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = train(Segan::build(&tiny(), 13).unwrap(), &cfg, &data, dir.path(), |_| {}).unwrap();
        assert_eq!(out.reports.len(), 9);
        assert!(dir.path().join("ckpt_0000004.sgn").exists() && dir.path().join("ckpt_0000008.sgn").exists());
        (std::fs::read(dir.path().join(FINAL_CHECKPOINT)).unwrap(), std::fs::read(dir.path().join("loss.csv")).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn thousand_adversarial_steps_stay_finite() {
    let data = pairs(12, 64, 14);
    let cfg = TrainConfig { epochs: 1000, batch_size: 4, seed: 15, max_steps: Some(1000), checkpoint_every: 100_000, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let out = train(Segan::build(&tiny(), 15).unwrap(), &cfg, &data, dir.path(), |_| {}).unwrap();
    assert_eq!(out.reports.len(), 1000);
    assert!(out.reports.iter().all(|r| [r.d_real, r.d_fake, r.g_adv, r.g_l1].iter().all(|v| v.is_finite())));
    let model = Segan::load_checkpoint(&tiny(), &out.final_checkpoint).unwrap();
    assert!(model.tensors().iter().all(|(_, t)| t.all_finite()));
}
