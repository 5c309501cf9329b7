use std::path::Path;
use std::process::{Command, Output};

use segan::audio_io::{read_wav, write_wav};
use segan::dataset::{synth_clean, CleanKind};

fn segan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segan")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shapes_lists_the_paper_ledger() {
    let o = segan(&["shapes", "--window", "16384"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for expected in ["16384x1", "8192x16", "2048x32", "64x256", "16x512", "8x1024", "8x2048"] {
        assert!(text.lines().any(|l| l.trim_end().ends_with(expected)), "missing {expected} in\n{text}");
    }
    assert!(text.contains("all 12 encoder stages match"));

    let reduced = stdout(&segan(&["shapes", "--preset", "reduced"]));
    assert!(reduced.contains("differences"));
}

#[test]
fn gradcheck_passes() {
    let o = segan(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["synth-data", "train", "enhance", "enhance-wiener", "eval", "gradcheck", "shapes", "mos"] {
        let o = segan(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
    assert_eq!(segan(&["--help"]).status.code(), Some(0));
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    assert_eq!(segan(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(segan(&["eval", "--clean", "x.wav"]).status.code(), Some(1));
    let o = segan(&["eval", "--clean", "/nonexistent/a.wav", "--test", "/nonexistent/b.wav"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let o = segan(&["shapes", "--set", "model.depth=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.depth"));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "train.lr=0.001\ntrain.warmup=3\n").unwrap();
    assert_eq!(segan(&["shapes", "--config", path(&cfg)]).status.code(), Some(2));
}

#[test]
fn eval_of_identical_files_is_35_db() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    write_wav(&synth_clean(CleanKind::Vowel, 1, 0.5, 16000).unwrap(), &wav).unwrap();
    let o = segan(&["eval", "--clean", path(&wav), "--test", path(&wav), "--metric", "ssnr"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "35.0");
}

#[test]
fn synth_data_is_seeded() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, seed) in dirs.iter().zip(["4", "4", "5"]) {
        let o = segan(&["synth-data", "--out", path(d.path()), "--utterances", "3", "--duration", "0.1", "--seed", seed]);
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(stdout(&o).lines().count(), 3);
    }
    let read = |d: &Path| std::fs::read(d.join("noisy").join("utt_0001.wav")).unwrap();
    assert_eq!(read(dirs[0].path()), read(dirs[1].path()));
    assert_ne!(read(dirs[0].path()), read(dirs[2].path()));
    assert!(dirs[0].path().join("manifest.tsv").exists());
}

#[test]
fn train_then_enhance_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    assert_eq!(segan(&["synth-data", "--out", path(&data), "--utterances", "3", "--duration", "0.2", "--seed", "1"]).status.code(), Some(0));
    let manifest = data.join("manifest.tsv");
    let o = segan(&[
        "train", "--out", path(&run), "--manifest", path(&manifest), "--preset", "reduced", "--max-steps", "3", "--batch-size", "2",
        "--log-every", "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let log = stdout(&o);
    assert_eq!(log.lines().next(), Some("step,d_real,d_fake,g_adv,g_l1"));
    assert_eq!(log.lines().count(), 4);
    for f in ["loss.csv", "config.txt", "final.sgn", "run.cfg"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let noisy = data.join("noisy").join("utt_0000.wav");
    let enhanced = dir.path().join("enhanced.wav");
    let o = segan(&["enhance", "--checkpoint", path(&run.join("final.sgn")), "--input", path(&noisy), "--output", path(&enhanced)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_wav(&enhanced).unwrap().len(), read_wav(&noisy).unwrap().len());

    let wiener = dir.path().join("wiener.wav");
    let o = segan(&["enhance-wiener", "--input", path(&noisy), "--output", path(&wiener), "--gain-floor-db", "-20"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_wav(&wiener).unwrap().len(), read_wav(&noisy).unwrap().len());

    let report = dir.path().join("report.csv");
    let o = segan(&["eval", "--clean", path(&data.join("clean")), "--test", path(&data.join("noisy")), "--metric", "all", "--report", path(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("file,metric,value"));
    assert_eq!(csv.lines().filter(|l| l.contains(",ssnr,")).count(), 4);
}

#[test]
fn mos_summarizes_a_ratings_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("ratings.csv");
    std::fs::write(&file, "listener,sentence,system,score\na,1,noisy,2\na,1,wiener,3\na,1,segan,4\n").unwrap();
    let o = segan(&["mos", "--ratings", path(&file)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("mos segan 4.0000"));
    assert!(text.contains("cmos segan-wiener 1.0000 prefer_segan 1.0000"));
    std::fs::write(&file, "a,1,noisy,2\n").unwrap();
    assert_eq!(segan(&["mos", "--ratings", path(&file)]).status.code(), Some(2));
}
