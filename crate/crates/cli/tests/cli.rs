//! End-to-end command tests against the built binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pixssr(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pixssr"));
    cmd.current_dir(dir).args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn pixssr")
}

fn write_config(dir: &Path) {
    fs::write(
        dir.join("desk.cfg"),
        "seed = 3\nbands = 5\nb_feat = 4\ncube_size = 12\npatch_size = 8\n\
         n_train = 2\nn_val = 1\nsteps = 4\neval_interval = 4\nomega = 0.05\n\
         data_dir = data\nout_dir = out\n",
    )
    .unwrap();
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir);

    let synth = pixssr(dir, &["synth", "--config", "desk.cfg"], &[]);
    assert!(synth.status.success(), "{synth:?}");

    // a second synth without --force must fail with a one-line diagnostic
    let refuse = pixssr(dir, &["synth", "--config", "desk.cfg"], &[]);
    assert!(!refuse.status.success());
    assert_eq!(String::from_utf8_lossy(&refuse.stderr).lines().count(), 1);

    let forced = pixssr(dir, &["synth", "--config", "desk.cfg", "--force"], &[]);
    assert!(forced.status.success());

    let train = pixssr(dir, &["train", "--config", "desk.cfg"], &[]);
    assert!(train.status.success(), "{train:?}");
    let stdout = String::from_utf8_lossy(&train.stdout);
    let first = stdout.lines().next().unwrap();
    assert!(first.starts_with("step=1 lr="), "{first}");
    for field in ["total=", "phsi=", "rep=", "ssim=", "p2i="] {
        assert!(first.contains(field));
    }

    let eval = pixssr(
        dir,
        &[
            "eval",
            "--config",
            "desk.cfg",
            "--checkpoint",
            "out/model.pssr",
            "--split",
            "val",
        ],
        &[],
    );
    assert!(eval.status.success(), "{eval:?}");
    let text = String::from_utf8_lossy(&eval.stdout);
    for k in ["rmse=", "psnr_db=", "ssim=", "sam_degrees="] {
        assert!(text.contains(k), "{text}");
    }
    assert!(dir.join("out/eval_val.txt").exists());

    // infer wants a real RGB cube: project one out of the val cube first
    let gt = pixssr_core::data::read_cube(&dir.join("data/val_000.hsic")).unwrap();
    let s = pixssr_core::data::SpectralResponse::read_csv(&dir.join("data/response.csv")).unwrap();
    let rgb = pixssr_core::data::project_rgb(&gt, &s).unwrap();
    pixssr_core::data::write_cube(
        &dir.join("rgb.hsic"),
        &pixssr_core::data::HsiCube::new(rgb).unwrap(),
    )
    .unwrap();
    let infer = pixssr(
        dir,
        &[
            "infer",
            "--config",
            "desk.cfg",
            "--checkpoint",
            "out/model.pssr",
            "--input",
            "rgb.hsic",
            "--output",
            "recon.hsic",
            "--ref",
            "data/val_000.hsic",
            "--error-map",
            "err.hsic",
            "--dump-prompts",
            "prompts",
        ],
        &[],
    );
    assert!(infer.status.success(), "{infer:?}");
    assert!(dir.join("recon.hsic").exists());
    assert!(dir.join("err.hsic").exists());
    for p in ["p_spa", "p_hf", "y3", "p_spe"] {
        assert!(dir.join("prompts").join(format!("{p}.hsic")).exists());
    }
}

#[test]
fn env_seed_override_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir);
    let a = pixssr(dir, &["synth", "--config", "desk.cfg"], &[("PIXSSR_SEED", "100")]);
    assert!(a.status.success());
    let bytes_a = fs::read(dir.join("data/train_000.hsic")).unwrap();
    let b = pixssr(
        dir,
        &["synth", "--config", "desk.cfg", "--force"],
        &[("PIXSSR_SEED", "101")],
    );
    assert!(b.status.success());
    let bytes_b = fs::read(dir.join("data/train_000.hsic")).unwrap();
    assert_ne!(bytes_a, bytes_b);
    // and an invalid override is a one-line failure
    let bad = pixssr(
        dir,
        &["synth", "--config", "desk.cfg", "--force"],
        &[("PIXSSR_SEED", "not-a-number")],
    );
    assert!(!bad.status.success());
}

#[test]
fn gaussian_mode_flag_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir);
    assert!(pixssr(dir, &["synth", "--config", "desk.cfg"], &[]).status.success());
    let train = pixssr(
        dir,
        &["train", "--config", "desk.cfg", "--spectra-model", "gaussian"],
        &[],
    );
    assert!(train.status.success(), "{train:?}");
}
