use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use segan::audio_io::{read_wav_16k, write_wav, Waveform};
use segan::dataset::{build_pairs, Manifest, ManifestEntry, NoiseSource, PairSource, Split};
use segan::metrics::{aggregate_mos, llr, ssnr, MetricReport, RatingsTable};
use segan::model::{shape_ledger, Segan, Stage, PAPER_ENCODER_LEDGER};
use segan::tensor::gradcheck::op_suite;
use segan::trainer::{enhance_file, ZMode};
use segan::wiener;

use crate::config::RunConfig;
use crate::{ConfigArgs, EnhanceArgs, EvalArgs, GradcheckArgs, MetricChoice, ModelArgs, MosArgs, ShapesArgs, SynthDataArgs, TrainArgs, WienerArgs};

/// Collects `--set` entries followed by the explicit flags, so flags win.
struct Overrides(Vec<(String, String)>);

impl Overrides {
    fn new(cfg: &ConfigArgs) -> Result<Self> {
        let pairs = cfg
            .set
            .iter()
            .map(|s| {
                s.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .with_context(|| format!("--set expects key=value, got '{s}'"))
            })
            .collect::<Result<_>>()?;
        Ok(Self(pairs))
    }

    fn add(&mut self, key: &str, value: Option<impl ToString>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key.to_string(), v.to_string()));
        }
        self
    }

    fn model(&mut self, m: &ModelArgs) -> &mut Self {
        self.add("model.preset", m.preset.clone()).add("model.window", m.window)
    }
}

fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let cfg = RunConfig::resolve(file, &overrides.0)?;
    eprintln!("# resolved config");
    eprint!("{}", cfg.to_text());
    Ok(cfg)
}

pub fn synth_data(a: SynthDataArgs) -> Result<ExitCode> {
    let mut o = Overrides::new(&a.config)?;
    o.add("data.utterances", a.utterances).add("data.duration_s", a.duration).add("data.seed", a.seed);
    let cfg = resolve(a.config.config.as_deref(), &o)?;
    let spec = cfg.data.spec();
    for sub in ["clean", "noise", "noisy"] {
        fs::create_dir_all(a.out.join(sub))?;
    }
    let mut manifest = Manifest::default();
    for i in 0..spec.utterances {
        let (clean, noisy) = spec.render(i)?;
        let noise = Waveform::new(noisy.samples.iter().zip(&clean.samples).map(|(n, c)| n - c).collect(), noisy.sample_rate);
        let name = format!("utt_{i:04}.wav");
        write_wav(&clean, a.out.join("clean").join(&name))?;
        write_wav(&noise, a.out.join("noise").join(&name))?;
        write_wav(&noisy, a.out.join("noisy").join(&name))?;
        let u = spec.utterance(i);
        manifest.entries.push(ManifestEntry {
            clean_path: PathBuf::from("clean").join(&name),
            noise: NoiseSource::File(PathBuf::from("noise").join(&name)),
            snr_db: u.condition.snr_db,
            // every tenth utterance is held out
            split: if i % 10 == 9 { Split::Test } else { Split::Train },
        });
        println!("{name}\t{}\t{}\t{}", u.clean_kind.as_str(), u.condition.noise_kind, u.condition.snr_db);
    }
    fs::write(a.out.join("manifest.tsv"), manifest.to_text())?;
    Ok(ExitCode::SUCCESS)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut o = Overrides::new(&a.config)?;
    o.model(&a.model)
        .add("train.epochs", a.epochs)
        .add("train.lr", a.lr)
        .add("train.batch_size", a.batch_size)
        .add("train.micro_batch", a.micro_batch)
        .add("train.lambda_l1", a.lambda_l1)
        .add("train.seed", a.seed)
        .add("train.checkpoint_every", a.checkpoint_every)
        .add("train.adversarial", a.adversarial)
        .add("train.max_steps", a.max_steps);
    let cfg = resolve(a.config.config.as_deref(), &o)?;
    let spec = cfg.data.spec();
    let manifest = a.manifest.as_deref().map(Manifest::load).transpose()?;
    let source = match &manifest {
        Some(m) => PairSource::Manifest { manifest: m, split: Split::Train, seed: cfg.train.seed },
        None => PairSource::Synth(&spec),
    };
    let pairs = build_pairs(source, cfg.model.window)?;
    eprintln!("# {} training windows", pairs.len());
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("run.cfg"), cfg.to_text())?;
    let model = Segan::build(&cfg.model, cfg.train.seed)?;
    println!("{}", segan::trainer::LOSS_LOG_HEADER);
    let every = a.log_every.max(1);
    let outcome = segan::trainer::train(model, &cfg.train, &pairs, &a.out, |r| {
        if r.step % every == 0 || r.step == 1 {
            println!("{}", r.csv_row());
        }
    })?;
    eprintln!("# {} steps, checkpoint {}", outcome.reports.len(), outcome.final_checkpoint.display());
    Ok(ExitCode::SUCCESS)
}

pub fn enhance(a: EnhanceArgs) -> Result<ExitCode> {
    let mut o = Overrides::new(&a.config)?;
    o.model(&a.model);
    let sidecar = a.checkpoint.parent().map(|d| d.join("config.txt")).filter(|p| p.exists());
    let cfg = resolve(a.config.config.as_deref().or(sidecar.as_deref()), &o)?;
    let z = if a.z_zero { ZMode::Zero } else { ZMode::Seeded(a.z_seed) };
    enhance_file(&a.checkpoint, &cfg.model, &a.input, &a.output, z)?;
    Ok(ExitCode::SUCCESS)
}

pub fn enhance_wiener(a: WienerArgs) -> Result<ExitCode> {
    let mut o = Overrides::new(&a.config)?;
    o.add("wiener.alpha", a.alpha).add("wiener.noise_frames", a.noise_frames).add("wiener.gain_floor_db", a.gain_floor_db);
    let cfg = resolve(a.config.config.as_deref(), &o)?;
    let noisy = read_wav_16k(&a.input)?;
    write_wav(&wiener::enhance_wiener(&noisy, &cfg.wiener)?, &a.output)?;
    Ok(ExitCode::SUCCESS)
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")));
    files.sort();
    Ok(files)
}

fn measure(report: &mut MetricReport, name: &str, clean: &Waveform, test: &Waveform, metric: MetricChoice) -> Result<()> {
    if matches!(metric, MetricChoice::Ssnr | MetricChoice::All) {
        report.push(name, "ssnr", ssnr(clean, test).with_context(|| format!("ssnr of {name}"))?);
    }
    if matches!(metric, MetricChoice::Llr | MetricChoice::All) {
        report.push(name, "llr", llr(clean, test).with_context(|| format!("llr of {name}"))?);
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let mut report = MetricReport::default();
    let single = match (a.clean.is_dir(), a.test.is_dir()) {
        (false, false) => {
            let name = a.test.file_name().map_or_else(|| "test".into(), |n| n.to_string_lossy().into_owned());
            measure(&mut report, &name, &read_wav_16k(&a.clean)?, &read_wav_16k(&a.test)?, a.metric)?;
            true
        }
        (true, true) => {
            for clean_path in wav_files(&a.clean)? {
                let name = clean_path.file_name().expect("listed file").to_string_lossy().into_owned();
                let test_path = a.test.join(&name);
                if !test_path.exists() {
                    bail!("no test file {} for {}", test_path.display(), clean_path.display());
                }
                measure(&mut report, &name, &read_wav_16k(&clean_path)?, &read_wav_16k(&test_path)?, a.metric)?;
            }
            if report.rows.is_empty() {
                bail!("no WAV files in {}", a.clean.display());
            }
            false
        }
        _ => bail!("--clean and --test must both be files or both be directories"),
    };
    if let Some(path) = &a.report {
        fs::write(path, report.to_csv())?;
    }
    if single && report.rows.len() == 1 {
        println!("{:?}", report.rows[0].2);
    } else {
        print!("{}", report.to_csv());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let mut ok = true;
    for (name, r) in op_suite(a.eps)? {
        ok &= r.passed();
        println!("{name:<20} max_rel_err={:.3e} coords={} {}", r.max_rel_error, r.coords, if r.passed() { "PASS" } else { "FAIL" });
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

pub fn shapes(a: ShapesArgs) -> Result<ExitCode> {
    let mut o = Overrides::new(&a.config)?;
    o.model(&a.model);
    let cfg = RunConfig::resolve(a.config.config.as_deref(), &o.0)?;
    let ledger = shape_ledger(&cfg.model);
    let mut section = "";
    for e in &ledger {
        let here = match e.stage {
            Stage::Input | Stage::Encoder(_) => "encoder",
            Stage::Bottleneck => "bottleneck",
            Stage::Decoder(_) => "decoder",
        };
        if here != section {
            println!("{here}");
            section = here;
        }
        println!("  {:<13}{e}", e.stage.to_string());
    }
    let encoder: Vec<_> = ledger.iter().take_while(|e| !matches!(e.stage, Stage::Bottleneck)).collect();
    let mut diffs = Vec::new();
    for i in 0..encoder.len().max(PAPER_ENCODER_LEDGER.len()) {
        let got = encoder.get(i).map(|e| (e.length, e.channels));
        let want = PAPER_ENCODER_LEDGER.get(i).copied();
        if got != want {
            let show = |v: Option<(usize, usize)>| v.map_or_else(|| "-".into(), |(l, c)| format!("{l}x{c}"));
            diffs.push(format!("  stage {i}: paper {}, this model {}", show(want), show(got)));
        }
    }
    if diffs.is_empty() {
        println!("paper ledger: all {} encoder stages match", PAPER_ENCODER_LEDGER.len());
    } else {
        println!("paper ledger: {} differences", diffs.len());
        diffs.iter().for_each(|d| println!("{d}"));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn mos(a: MosArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&a.ratings).with_context(|| format!("reading {}", a.ratings.display()))?;
    let summary = aggregate_mos(&RatingsTable::parse_csv(&text)?)?;
    println!("items {}", summary.items);
    for (system, mos) in &summary.mos {
        println!("mos {system} {mos:.4}");
    }
    for c in &summary.cmos {
        println!(
            "cmos {}-{} {:.4} prefer_{} {:.4} prefer_{} {:.4} none {:.4}",
            c.a, c.b, c.mean, c.a, c.prefer_a, c.b, c.prefer_b, c.no_preference
        );
    }
    Ok(ExitCode::SUCCESS)
}
