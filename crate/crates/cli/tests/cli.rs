//! Runner behaviour through the binary: precedence, exit codes, schemas.

use std::path::Path;
use std::process::Command;

use ttga_cli::config::{Overrides, RunConfig, SchemeChoice};
use ttga_cli::read_csv;

const SMALL: &str = r#"
[data]
size = 16
train_count = 20
test_count = 6

[ttga]
tau = 60
n_augment = 4

[segmenter]
epochs = 40
"#;

fn ttga(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ttga"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(RunConfig::default().masks.scheme, SchemeChoice::Hybrid);

    let file = write(dir.path(), "c.toml", "[masks]\nscheme = \"bernoulli\"\n");
    let from_file = RunConfig::resolve(Some(Path::new(&file)), &Overrides::default()).unwrap();
    assert_eq!(from_file.masks.scheme, SchemeChoice::Bernoulli);

    let flag = Overrides {
        mask_scheme: Some("attention".into()),
        ..Overrides::default()
    };
    let from_flag = RunConfig::resolve(Some(Path::new(&file)), &flag).unwrap();
    assert_eq!(from_flag.masks.scheme, SchemeChoice::Attention);

    // the same three layers through the binary, read back from the resolved config
    let cfg = write(dir.path(), "small.toml", &format!("{SMALL}\n[masks]\nscheme = \"bernoulli\"\n"));
    let (code, err) = ttga(&["make-data", "--config", &cfg, "--mask-scheme", "attention", "--out", &s(&dir.path().join("d"))]);
    assert_eq!(code, 0, "{err}");
    let resolved = RunConfig::load(&dir.path().join("d/config.resolved.toml")).unwrap();
    assert_eq!(resolved.masks.scheme, SchemeChoice::Attention);
    assert_eq!(resolved.data.test_count, 6);
    assert_eq!(resolved.ttga.lambda_r_high, 1.5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("o"));
    let (code, err) = ttga(&["evaluate", "--config", "/nonexistent/run.toml"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("/nonexistent/run.toml"));

    let bad = write(dir.path(), "bad.toml", "[masks]\np_m = 1.5\n");
    let (code, err) = ttga(&["make-data", "--config", &bad, "--out", &out]);
    assert_eq!(code, 3);
    assert!(err.contains("p_m"), "{err}");

    let typo = write(dir.path(), "typo.toml", "[ttga]\nomgea = 2.0\n");
    let (code, err) = ttga(&["make-data", "--config", &typo, "--out", &out]);
    assert_eq!(code, 3);
    assert!(err.contains("omgea"), "{err}");

    let (code, err) = ttga(&["make-data", "--methods", "baseline,dropout", "--out", &out]);
    assert_eq!(code, 3);
    assert!(err.contains("methods"), "{err}");

    let missing = write(dir.path(), "m.toml", "[paths]\nsegmenter = \"/nonexistent/seg.txt\"\n");
    let (code, err) = ttga(&["evaluate", "--config", &missing, "--methods", "baseline", "--out", &out]);
    assert_eq!(code, 2);
    assert!(err.contains("/nonexistent/seg.txt"), "{err}");

    let (code, err) = ttga(&["evaluate", "--methods", "baseline", "--out", &out]);
    assert_eq!(code, 3);
    assert!(err.contains("paths.segmenter"), "{err}");

    let blowup = write(
        dir.path(),
        "nan.toml",
        &format!("{SMALL}\n[denoiser]\nsemantic_scale = 1e300\n"),
    );
    let (code, err) = ttga(&["full-pipeline", "--config", &blowup, "--methods", "ttga", "--out", &out]);
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("step"), "{err}");
}

#[test]
fn staged_commands_match_the_full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "small.toml", SMALL);
    let run = |args: &[&str]| {
        let (code, err) = ttga(args);
        assert_eq!(code, 0, "{args:?}: {err}");
    };
    run(&["full-pipeline", "--config", &cfg, "--seed", "4", "--out", &s(&d.join("full"))]);
    run(&["train-denoiser", "--config", &cfg, "--seed", "4", "--out", &s(&d.join("den"))]);
    run(&["train-segmenter", "--config", &cfg, "--seed", "4", "--out", &s(&d.join("seg"))]);
    run(&["make-data", "--config", &cfg, "--seed", "4", "--out", &s(&d.join("data"))]);
    let staged = write(
        d,
        "staged.toml",
        &format!(
            "{SMALL}\n[paths]\ndenoiser = \"{}\"\nsegmenter = \"{}\"\ndata = \"{}\"\n",
            s(&d.join("den/denoiser.ckpt")),
            s(&d.join("seg/segmenter.txt")),
            s(&d.join("data")),
        ),
    );
    run(&["evaluate", "--config", &staged, "--seed", "4", "--out", &s(&d.join("eval"))]);
    run(&["augment", "--config", &staged, "--seed", "4", "--out", &s(&d.join("aug"))]);
    for f in ["per_image.csv", "aggregate.csv", "aggregate_occluded.csv", "augment.csv"] {
        let a = std::fs::read(d.join("full").join(f)).unwrap();
        let b = std::fs::read(d.join("eval").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    assert_eq!(
        std::fs::read(d.join("full/augment.csv")).unwrap(),
        std::fs::read(d.join("aug/augment.csv")).unwrap()
    );
}

#[test]
fn aggregate_schema_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", &format!("{SMALL}\n[nulltext]\ntrace = true\n"));
    let out = dir.path().join("run");
    let (code, err) = ttga(&["full-pipeline", "--config", &cfg, "--dump-images", "--workers", "2", "--out", &s(&out)]);
    assert_eq!(code, 0, "{err}");
    let (header, rows) = read_csv(&out.join("aggregate.csv")).unwrap();
    assert_eq!(header, ttga_cli::report::AGGREGATE_HEADER);
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    let mut want = Vec::new();
    for task in ["segmentation", "error_estimation"] {
        for m in ["baseline", "tta", "ttga"] {
            want.push((task.to_string(), m.to_string()));
        }
    }
    assert_eq!(keys, want);
    for r in &rows {
        let seg = r[0] == "segmentation";
        assert_eq!(r[8] == "NA", !seg, "hd95 only for segmentation");
        assert_eq!(r[10] == "NA", seg, "nsd only for error estimation");
        for cell in &r[3..] {
            assert!(cell == "NA" || !cell.contains('.') || cell.split('.').nth(1).unwrap().len() == 6, "{cell}");
        }
    }
    let (_, per_image) = read_csv(&out.join("per_image.csv")).unwrap();
    assert_eq!(per_image.len(), 6 * 3);
    let ids: Vec<usize> = per_image.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] <= w[1]));
    let (_, trace) = read_csv(&out.join("nulltext_trace.csv")).unwrap();
    assert!(!trace.is_empty());
    assert!(out.join("images/scene_0000_ttga_error.pgm").exists());
    assert!(out.join("images/scene_0000_aug_03.pgm").exists());
    assert!(out.join("data/manifest.csv").exists());
    let log = std::fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.lines().all(|l| l.split(' ').next().unwrap().parse::<f64>().is_ok()));
}

#[test]
fn compare_reports_per_seed_columns_and_sample_std() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let mut runs = Vec::new();
    for seed in ["1", "2", "3"] {
        let out = s(&dir.path().join(format!("run{seed}")));
        let (code, err) = ttga(&["full-pipeline", "--config", &cfg, "--seed", seed, "--methods", "baseline,tta", "--out", &out]);
        assert_eq!(code, 0, "{err}");
        runs.push(out);
    }
    let cmp = s(&dir.path().join("cmp"));
    let mut args = vec!["compare", "--plot", "--out", cmp.as_str()];
    args.extend(runs.iter().map(String::as_str));
    let (code, err) = ttga(&args);
    assert_eq!(code, 0, "{err}");
    let (header, rows) = read_csv(&dir.path().join("cmp/compare.csv")).unwrap();
    assert_eq!(header, ["task", "method", "metric", "seed_1", "seed_2", "seed_3", "mean", "std"]);
    let dsc = rows
        .iter()
        .find(|r| r[0] == "segmentation" && r[1] == "tta" && r[2] == "dsc")
        .unwrap();
    let v: Vec<f64> = dsc[3..6].iter().map(|c| c.parse().unwrap()).collect();
    let mean = (v[0] + v[1] + v[2]) / 3.0;
    let var = ((v[0] - mean).powi(2) + (v[1] - mean).powi(2) + (v[2] - mean).powi(2)) / 2.0;
    assert!((dsc[6].parse::<f64>().unwrap() - mean).abs() <= 5e-7);
    assert!((dsc[7].parse::<f64>().unwrap() - var.sqrt()).abs() <= 5e-7);
    assert!(dir.path().join("cmp/plots/segmentation_dsc.svg").exists());

    // one run passes straight through with no deviation
    let one = s(&dir.path().join("cmp1"));
    let (code, _) = ttga(&["compare", "--out", &one, &runs[0]]);
    assert_eq!(code, 0);
    let (_, rows1) = read_csv(&dir.path().join("cmp1/compare.csv")).unwrap();
    let (_, agg) = read_csv(&Path::new(&runs[0]).join("aggregate.csv")).unwrap();
    assert_eq!(rows1[0][3], agg[0][3]);
    assert_eq!(rows1[0][4], agg[0][3]);
    assert_eq!(rows1[0][5], "NA");

    // a run with a different method set does not merge
    let other = s(&dir.path().join("other"));
    let (code, _) = ttga(&["full-pipeline", "--config", &cfg, "--methods", "baseline", "--out", &other]);
    assert_eq!(code, 0);
    let (code, err) = ttga(&["compare", "--out", &one, &runs[0], &other]);
    assert_eq!(code, 5, "{err}");
}
