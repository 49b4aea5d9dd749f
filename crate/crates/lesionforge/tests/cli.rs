//! End-to-end checks of the `lesionforge` binary.

use std::path::Path;
use std::process::Command;

use lesionforge::io::{nifti, rawjson};
use lesionforge::rng::Stream;
use lesionforge::volume::{LabelMap3, Volume3};

const BIN: &str = env!("CARGO_BIN_EXE_lesionforge");

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &std::process::Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_brain_fixture(dir: &Path) {
    let dims = [48usize, 48, 48];
    let mut rng = Stream::new(5150);
    let host = Volume3::from_fn(dims, [1.0; 3], |x, y, z| {
        70.0 + 10.0 * ((x as f32 * 0.4).sin() + (y as f32 * 0.2).cos()) + 0.5 * z as f32
            + rng.uniform(-1.0, 1.0) as f32
    });
    let brain = LabelMap3::from_fn(dims, |x, y, z| {
        u8::from((2..46).contains(&x) && (2..46).contains(&y) && (2..46).contains(&z))
    });
    let wm = LabelMap3::from_fn(dims, |x, y, z| {
        u8::from((7..41).contains(&x) && (7..41).contains(&y) && (7..41).contains(&z))
    });
    nifti::save(&host, &dir.join("host.nii.gz")).unwrap();
    nifti::save_labels(&brain, &dir.join("brain.nii.gz")).unwrap();
    nifti::save_labels(&wm, &dir.join("wm.nii.gz")).unwrap();
}

#[test]
fn gen_mask_writes_a_loadable_mask() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mask.nii.gz");
    let res = run(&[
        "gen-mask",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
        "--grid",
        "32",
        "--ax-min",
        "3",
        "--ax-max",
        "6",
        "--alpha",
        "4",
    ]);
    assert_ok(&res);
    let m = nifti::load_labels(&out).unwrap();
    assert!(m.count_foreground() > 0);
    assert!(m.is_binary());
    assert!(!m.touches_boundary());

    // same seed, same bytes
    let out2 = dir.path().join("mask2.nii.gz");
    let res2 = run(&[
        "gen-mask",
        "--seed",
        "7",
        "--out",
        out2.to_str().unwrap(),
        "--grid",
        "32",
        "--ax-min",
        "3",
        "--ax-max",
        "6",
        "--alpha",
        "4",
    ]);
    assert_ok(&res2);
    assert_eq!(
        std::fs::read(&out).unwrap(),
        std::fs::read(&out2).unwrap()
    );
}

#[test]
fn gen_pair_place_blend_chain() {
    let dir = tempfile::tempdir().unwrap();
    write_brain_fixture(dir.path());
    let img = dir.path().join("les.nii.gz");
    let mask = dir.path().join("lesmask.nii.gz");
    let res = run(&[
        "gen-pair",
        "--host",
        dir.path().join("host.nii.gz").to_str().unwrap(),
        "--brain-mask",
        dir.path().join("brain.nii.gz").to_str().unwrap(),
        "--seed",
        "3",
        "--out-img",
        img.to_str().unwrap(),
        "--out-mask",
        mask.to_str().unwrap(),
        "--grid",
        "24",
        "--ax-min",
        "3",
        "--ax-max",
        "5",
        "--alpha",
        "3",
        "--perlin-amp",
        "1.0",
    ]);
    assert_ok(&res);
    let lesion_img = nifti::load(&img).unwrap();
    let lesion_mask = nifti::load_labels(&mask).unwrap();
    assert!(lesion_mask.count_foreground() > 0);
    for i in 0..lesion_img.len() {
        if lesion_mask.data()[i] == 0 {
            assert_eq!(lesion_img.data()[i], 0.0);
        }
    }

    let place = run(&[
        "place",
        "--wm-mask",
        dir.path().join("wm.nii.gz").to_str().unwrap(),
        "--lesion-mask",
        mask.to_str().unwrap(),
        "--seed",
        "11",
    ]);
    assert_ok(&place);
    let text = String::from_utf8(place.stdout.clone()).unwrap();
    let parts: Vec<usize> = text
        .trim()
        .split(',')
        .map(|p| p.parse().unwrap())
        .collect();
    assert_eq!(parts.len(), 3, "place output: {text}");

    // crop-free blend: place the lesion grid so it fits interior
    let blended = dir.path().join("blended.nii.gz");
    let labels = dir.path().join("labels.nii.gz");
    let res = run(&[
        "blend",
        "--host",
        dir.path().join("host.nii.gz").to_str().unwrap(),
        "--lesion",
        img.to_str().unwrap(),
        "--lesion-mask",
        mask.to_str().unwrap(),
        "--origin",
        "12,12,12",
        "--mode",
        "spb",
        "--tol",
        "1e-8",
        "--out",
        blended.to_str().unwrap(),
        "--out-labels",
        labels.to_str().unwrap(),
    ]);
    assert_ok(&res);
    let out_v = nifti::load(&blended).unwrap();
    let out_l = nifti::load_labels(&labels).unwrap();
    let host = nifti::load(&dir.path().join("host.nii.gz")).unwrap();
    assert_eq!(out_l.count(2), lesion_mask.count_foreground());
    for i in 0..out_v.len() {
        if out_l.data()[i] == 0 {
            assert_eq!(out_v.data()[i].to_bits(), host.data()[i].to_bits());
        }
    }
}

#[test]
fn latent_fit_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    // anisotropic embeddings: strong first axis
    let mut rng = Stream::new(21);
    let n = 200;
    let d = 4;
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let a = rng.normal() * 10.0;
        let b = rng.normal();
        data.extend_from_slice(&[
            a as f32,
            (0.5 * a + b) as f32,
            (b * 0.7) as f32,
            (rng.normal() * 0.01) as f32,
        ]);
    }
    let emb = rawjson::RawTensor::new(vec![n, d], data).unwrap();
    rawjson::save_tensor(
        &emb,
        &dir.path().join("emb.bin"),
        &dir.path().join("emb.json"),
    )
    .unwrap();

    let model = dir.path().join("model.json");
    let res = run(&[
        "latent",
        "fit",
        "--in",
        dir.path().join("emb.bin").to_str().unwrap(),
        "--meta",
        dir.path().join("emb.json").to_str().unwrap(),
        "--target",
        "0.90",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_ok(&res);
    let parsed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&model).unwrap()).unwrap();
    assert!(parsed["components"].as_array().unwrap().len() < d);

    let samples = dir.path().join("samples.bin");
    let res = run(&[
        "latent", "sample", "--model", model.to_str().unwrap(), "--n", "100", "--seed", "5",
        "--out", samples.to_str().unwrap(),
    ]);
    assert_ok(&res);
    let t = rawjson::load_tensor(
        &dir.path().join("samples.bin"),
        &dir.path().join("samples.json"),
    )
    .unwrap();
    assert_eq!(t.shape, vec![100, d]);
    assert!(t.data.iter().all(|v| v.is_finite()));
}

#[test]
fn proto_loss_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    // [1, 2, 2,1,1] feature tensor: real voxel (1,0), synthetic voxel (0,1)
    let feat = rawjson::RawTensor::new(vec![1, 2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    rawjson::save_tensor(
        &feat,
        &dir.path().join("feat.bin"),
        &dir.path().join("feat.json"),
    )
    .unwrap();
    let labels = LabelMap3::new([2, 1, 1], vec![1, 2]).unwrap();
    nifti::save_labels(&labels, &dir.path().join("labels.nii.gz")).unwrap();

    let res = run(&[
        "proto-loss",
        "--features",
        dir.path().join("feat.bin").to_str().unwrap(),
        "--features-meta",
        dir.path().join("feat.json").to_str().unwrap(),
        "--labels",
        dir.path().join("labels.nii.gz").to_str().unwrap(),
        "--k",
        "1",
        "--lambda1",
        "1",
        "--lambda2",
        "50",
        "--seed",
        "0",
    ]);
    assert_ok(&res);
    let v: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!((v["L_pd"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!((v["L_prd"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!((v["L_pc"].as_f64().unwrap() - 102.0).abs() < 1e-9);
}

#[test]
fn pipeline_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_brain_fixture(dir.path());
    let cfg = serde_json::json!({
        "host": dir.path().join("host.nii.gz"),
        "brain_mask": dir.path().join("brain.nii.gz"),
        "wm_mask": dir.path().join("wm.nii.gz"),
        "out_dir": dir.path().join("out"),
        "count": 2,
        "seed": 31,
        "mask_synth": {
            "grid_dims": [24, 24, 24],
            "half_axis": [3.0, 5.0],
            "elastic_alpha": 3.0,
            "perlin_amplitude": 1.0
        }
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();

    let res = run(&["pipeline", "--config", cfg_path.to_str().unwrap()]);
    assert_ok(&res);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/manifest.json")).unwrap())
            .unwrap();
    let items = manifest.as_array().unwrap();
    assert_eq!(items.len(), 2);
    for item in items {
        assert_eq!(item["status"], "ok");
        assert_eq!(item["mode"], "spb");
        assert!(item["center"].as_array().unwrap().len() == 1);
        assert!(dir.path().join("out").join(item["image"].as_str().unwrap()).exists());
    }

    // malformed config: exit code 2
    std::fs::write(&cfg_path, b"{ not json").unwrap();
    let res = run(&["pipeline", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));

    // empty wm mask: every item fails, exit code 3
    let empty = LabelMap3::zeros([48, 48, 48]);
    nifti::save_labels(&empty, &dir.path().join("wm_empty.nii.gz")).unwrap();
    let cfg = serde_json::json!({
        "host": dir.path().join("host.nii.gz"),
        "brain_mask": dir.path().join("brain.nii.gz"),
        "wm_mask": dir.path().join("wm_empty.nii.gz"),
        "out_dir": dir.path().join("out_bad"),
        "count": 2,
        "seed": 31,
        "mask_synth": {
            "grid_dims": [24, 24, 24],
            "half_axis": [3.0, 5.0],
            "elastic_alpha": 3.0
        }
    });
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let res = run(&["pipeline", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
    // failures are still recorded in the manifest
    let manifest: serde_json::Value = serde_json::from_slice(
        &std::fs::read(dir.path().join("out_bad/manifest.json")).unwrap(),
    )
    .unwrap();
    for item in manifest.as_array().unwrap() {
        assert!(item["status"].as_str().unwrap().starts_with("failed:"));
    }
}

#[test]
fn slice_export_writes_images() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume3::from_fn([10, 8, 6], [1.0; 3], |x, y, z| (x + y + z) as f32);
    let l = LabelMap3::from_fn([10, 8, 6], |x, y, _| match (x, y) {
        (2, 2) => 1,
        (5, 5) => 2,
        _ => 0,
    });
    nifti::save(&v, &dir.path().join("v.nii")).unwrap();
    nifti::save_labels(&l, &dir.path().join("l.nii")).unwrap();
    let res = run(&[
        "slice",
        "--in",
        dir.path().join("v.nii").to_str().unwrap(),
        "--labels",
        dir.path().join("l.nii").to_str().unwrap(),
        "--axis",
        "z",
        "--index",
        "3",
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert_ok(&res);
    let pgm = std::fs::read(dir.path().join("s.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n10 8\n255\n"));
    let ppm = std::fs::read(dir.path().join("s.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n10 8\n255\n"));
}
