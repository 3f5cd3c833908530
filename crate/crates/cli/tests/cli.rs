use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gjsscc::classifier::PrototypeModel;
use gjsscc::imaging::{self, Image, RegionMask};

const PROFILE: &str = "--source uncompressed --eps-c 0.2014 --eps-t 0.01";

/// Runs the binary in `dir`. `oracle`, when given, is passed as a single
/// `--oracle` argument; `args` is split on whitespace.
fn run_with(dir: &Path, oracle: Option<&str>, args: &str) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gjsscc"));
    cmd.current_dir(dir);
    if let Some(spec) = oracle {
        cmd.args(["--oracle", spec]);
    }
    cmd.args(args.split_whitespace()).output().expect("binary runs")
}

fn run(dir: &Path, args: &str) -> Output {
    run_with(dir, None, args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// 32x32 image whose top 24 rows are the object; only the top-left part
/// tells the two classes apart. Also writes `regions.json` for a 2x3 grid.
fn fixture(dir: &Path) {
    let pick = |x: usize, y: usize, a: u8, b: u8| {
        if y < 12 && x < 10 {
            a
        } else if y < 24 && x >= 20 && y >= 12 {
            b
        } else {
            ((x * 7 + y * 3) % 64 + 96) as u8
        }
    };
    let img = Image::from_fn(32, 32, 1, |x, y, _| pick(x, y, 192, 96)).unwrap();
    let t1 = Image::from_fn(32, 32, 1, |x, y, _| pick(x, y, 192, 160)).unwrap();
    let t2 = Image::from_fn(32, 32, 1, |x, y, _| pick(x, y, 64, 96)).unwrap();
    imaging::save_raster(dir.join("image.pgm"), &img).unwrap();
    let object = RegionMask::from_fn(32, 32, |_, y| y < 24);
    imaging::save_raster(dir.join("mask.pgm"), &imaging::mask_to_image(&object)).unwrap();
    PrototypeModel::new(vec![t1, t2], 0.002)
        .unwrap()
        .save(dir.join("model.json"))
        .unwrap();
    let o = run(dir, "segment --mask mask.pgm --rows 2 --cols 3");
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn na_blocklength() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "na --k 1000 --ber-channel 0.2014 --ber-target 0.01");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "2897");

    let o = run(dir.path(), "na --k 1000 --ber-channel 0.001 --ber-target 1e-4 --json");
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["codeword_bits"], 1013);

    let o = run(dir.path(), "na --k 1000 --ber-channel 0.01 --ber-target 0.1");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_mask_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let o = run(
        dir.path(),
        &format!(
            "--oracle builtin:model.json run --image image.pgm --mask nowhere.pgm --p-th 0.7 --target 1 {PROFILE}"
        ),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.pgm"), "{}", stderr(&o));
}

#[test]
fn segment_extract_run() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    assert_eq!(
        read_json(dir.path().join("regions.json"))["regions"]
            .as_array()
            .unwrap()
            .len(),
        6
    );

    let o = run(
        dir.path(),
        &format!(
            "--oracle builtin:model.json --seed 5 extract --image image.pgm --regions regions.json \
             --target 1 --p-th 0.7 {PROFILE}"
        ),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let part = read_json(dir.path().join("partition.json"));
    assert_eq!(part["partition"]["star_id"], 1);
    assert!(part["partition"]["negative_ids"]
        .as_array()
        .unwrap()
        .contains(&6.into()));

    let o = run(
        dir.path(),
        &format!(
            "--oracle builtin:model.json --trials 4 run --image image.pgm --partition partition.json \
             --target 1 --scheme star {PROFILE}"
        ),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let result = read_json(dir.path().join("run.json"));
    assert_eq!(result["k"], 8192);
    assert_eq!(result["trials"], 4);
    assert!(result["p_d"].as_f64().unwrap() > 0.7);
}

#[test]
fn unreachable_threshold_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let o = run(
        dir.path(),
        &format!(
            "--oracle builtin:model.json extract --image image.pgm --regions regions.json \
             --target 1 --p-th 0.9999 {PROFILE}"
        ),
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn sweep_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let cfg = serde_json::json!({
        "image": "image.pgm",
        "mask": "mask.pgm",
        "grid": {"rows": 2, "cols": 3},
        "extraction": {"p_th": 0.7, "trials": 4},
        "target": 1,
        "profile": {"q_b": 1, "q_t": 50, "eps_c": 0.2014, "eps_t": 0.01, "source": "uncompressed"},
        "schemes": [
            "star", "star_positive", "star_negative",
            {"name": "full", "protect": ["star", "positive", "negative", "background"], "coding": "ideal"}
        ],
        "sweep": {"variable": "eps_t", "values": [0.1, 0.01, 0.001, 0.0001]},
        "oracle": "builtin:model.json",
        "seed": 9,
        "trials": 3
    });
    fs::write(dir.path().join("sweep-config.json"), cfg.to_string()).unwrap();

    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let o = run(dir.path(), &format!("--out {name} sweep --config sweep-config.json"));
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(dir.path().join(name).join("sweep.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = String::from_utf8(outputs.remove(0)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("scheme,sweep_value,p_d,k,n,rate,efficiency,trials,seed")
    );
    assert_eq!(lines.count(), 16);

    let o = run(dir.path(), "--out c --seed 10 sweep --config sweep-config.json");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_ne!(fs::read(dir.path().join("c/sweep.csv")).unwrap(), csv.as_bytes());
}

#[test]
fn external_oracle_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let err = dir.path().join("err.sh");
    fs::write(
        &err,
        "echo 'READY 2'\nwhile read -r l; do echo 'ERR model not loaded'; done\n",
    )
    .unwrap();
    let slow = dir.path().join("slow.sh");
    fs::write(&slow, "echo 'READY 2'\nwhile read -r l; do sleep 10; done\n").unwrap();
    for (script, extra) in [(&err, ""), (&slow, "--oracle-timeout 1")] {
        let spec = format!("external:sh {}", script.display());
        let o = run_with(
            dir.path(),
            Some(&spec),
            &format!("{extra} shapley --image image.pgm --regions regions.json --target 1 {PROFILE}"),
        );
        assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    }
}

#[test]
fn constant_external_oracle_gives_zero_values() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let ok = dir.path().join("ok.sh");
    fs::write(&ok, "echo 'READY 2'\nwhile read -r v p d; do echo 'OK 0.6 0.4'; done\n").unwrap();
    let spec = format!("external:sh {}", ok.display());
    let o = run_with(
        dir.path(),
        Some(&spec),
        &format!("--trials 1 shapley --image image.pgm --regions regions.json --target 1 {PROFILE}"),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(dir.path().join("shapley.json"));
    for v in report["values"].as_object().unwrap().values() {
        assert_eq!(v.as_f64().unwrap(), 0.0);
    }
}

#[test]
fn bad_oracle_spec_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let o = run(
        dir.path(),
        &format!("--oracle model.json shapley --image image.pgm --regions regions.json --target 1 {PROFILE}"),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("builtin:"), "{}", stderr(&o));
}
