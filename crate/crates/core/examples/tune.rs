//! Scratch harness for tuning the desk-scale training protocol.

use pixssr_core::config::RunConfig;
use pixssr_core::data::Split;
use pixssr_core::run::{run_eval, run_train, synth_dataset};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr0: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2e-4);
    let steps: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(200);
    let omega: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(17);
    let batch: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1);

    let root = std::env::temp_dir().join(format!("pixtune_{seed}_{lr0}_{omega}_{steps}"));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let cfg = RunConfig {
        data_dir: root.join("data").display().to_string(),
        out_dir: root.join("out").display().to_string(),
        bands: 8,
        b_feat: 8,
        cube_size: 16,
        patch_size: 16,
        n_train: 8,
        n_val: 2,
        steps,
        eval_interval: steps,
        lr0,
        omega,
        seed,
        batch_size: batch,
        ..RunConfig::default()
    };
    synth_dataset(&cfg, true).unwrap();

    // init-quality probe: PSNR of the untrained model on the first cube
    {
        use pixssr_core::data::{project_rgb, read_cube, SpectralResponse};
        use pixssr_core::network::Model;
        use pixssr_core::objectives::psnr;
        use pixssr_core::rng::Rng;
        use pixssr_core::Tensor;
        let model = Model::new(cfg.model_config()).unwrap();
        let cube = read_cube(&root.join("data/train_000.hsic")).unwrap();
        let s = SpectralResponse::read_csv(&root.join("data/response.csv")).unwrap();
        let rgb = project_rgb(&cube, &s).unwrap();
        let mut r = Rng::from_seed(1);
        let field = Tensor::from_fn(&[8, 16, 16], |_| r.uniform() * 0.5);
        let y = model.infer(&rgb, &field).unwrap();
        println!("  init train_000 psnr: {:.2}", psnr(cube.values(), &y).unwrap());
    }

    let t0 = std::time::Instant::now();
    let out = run_train(&cfg).unwrap();
    for l in out.log.iter().take(4) {
        println!("  {}", l.line());
    }
    let train_time = t0.elapsed();
    let smooth = |upto: usize| -> f64 {
        let lo = upto.saturating_sub(10);
        let w = &out.log[lo..upto];
        w.iter().map(|l| l.total).sum::<f64>() / w.len() as f64
    };
    let s10 = smooth(10.min(out.log.len()));
    let send = smooth(out.log.len());
    let t1 = std::time::Instant::now();
    let reports = run_eval(&cfg, &out.checkpoint_path, Split::Train, &[], false).unwrap();
    let val = run_eval(&cfg, &out.checkpoint_path, Split::Val, &[], false).unwrap();

    // probe: how much of the gap is input noise vs mapping quality
    {
        use pixssr_core::checkpoint::read_checkpoint;
        use pixssr_core::data::{project_rgb, read_cube, DatasetManifest, SpectralResponse};
        use pixssr_core::objectives::psnr;
        use pixssr_core::run::model_from_checkpoint;
        use pixssr_core::Tensor;
        let ck = read_checkpoint(&out.checkpoint_path).unwrap();
        let (model, ck_cfg) = model_from_checkpoint(&ck).unwrap();
        let m = DatasetManifest::read(&root.join("data/manifest.txt")).unwrap();
        let s = SpectralResponse::read_csv(&root.join("data/response.csv")).unwrap();
        let mut zero_psnr = 0.0;
        let mut n = 0.0;
        for p in m.paths(pixssr_core::data::Split::Train) {
            let cube = read_cube(p).unwrap();
            let rgb = project_rgb(&cube, &s).unwrap();
            let zeros = Tensor::zeros(&[ck_cfg.bands, cube.height(), cube.width()]);
            let y = model.infer(&rgb, &zeros).unwrap();
            zero_psnr += psnr(cube.values(), &y).unwrap();
            n += 1.0;
        }
        println!("  zero-field train psnr: {:.2}", zero_psnr / n);

        // linear oracle: least-squares [r,g,b,1] -> band over the train split
        let mut xtx = [[0.0f64; 4]; 4];
        let mut xty = vec![[0.0f64; 4]; ck_cfg.bands];
        for p in m.paths(pixssr_core::data::Split::Train) {
            let cube = read_cube(p).unwrap();
            let rgb = project_rgb(&cube, &s).unwrap();
            let hw = cube.height() * cube.width();
            for px in 0..hw {
                let f = [rgb.data()[px], rgb.data()[hw + px], rgb.data()[2 * hw + px], 1.0];
                for i in 0..4 {
                    for j in 0..4 {
                        xtx[i][j] += f[i] * f[j];
                    }
                    for (b, row) in xty.iter_mut().enumerate() {
                        row[i] += f[i] * cube.values().data()[b * hw + px];
                    }
                }
            }
        }
        // 4x4 gauss-jordan
        let mut aug = [[0.0f64; 8]; 4];
        for i in 0..4 {
            aug[i][..4].copy_from_slice(&xtx[i]);
            aug[i][4 + i] = 1.0;
        }
        for col in 0..4 {
            let piv = (col..4).max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap()).unwrap();
            aug.swap(col, piv);
            let d = aug[col][col];
            for v in aug[col].iter_mut() { *v /= d; }
            for r in 0..4 {
                if r != col {
                    let f = aug[r][col];
                    for c in 0..8 { aug[r][c] -= f * aug[col][c]; }
                }
            }
        }
        let mut lin_psnr = 0.0;
        let mut nn = 0.0;
        for p in m.paths(pixssr_core::data::Split::Train) {
            let cube = read_cube(p).unwrap();
            let rgb = project_rgb(&cube, &s).unwrap();
            let hw = cube.height() * cube.width();
            let pred = Tensor::from_fn(&[ck_cfg.bands, cube.height(), cube.width()], |i| {
                let (b, px) = (i / hw, i % hw);
                let f = [rgb.data()[px], rgb.data()[hw + px], rgb.data()[2 * hw + px], 1.0];
                let mut acc = 0.0;
                for k in 0..4 {
                    let mut w = 0.0;
                    for j in 0..4 { w += aug[k][4 + j] * xty[b][j]; }
                    acc += f[k] * w;
                }
                acc.clamp(0.0, 1.0)
            });
            lin_psnr += psnr(cube.values(), &pred).unwrap();
            nn += 1.0;
        }
        println!("  linear-oracle train psnr: {:.2}", lin_psnr / nn);
        let last = out.log.last().unwrap();
        println!(
            "  final components: phsi={:.4} rep={:.4} ssim={:.4} p2i={:.4}",
            last.phsi, last.rep, last.ssim, last.p2i
        );
    }
    println!(
        "lr0={lr0} steps={steps} omega={omega} seed={seed} batch={batch} | smoothed(10)={s10:.4} smoothed(end)={send:.4} ratio={:.3} | train psnr={:.2} base={:.2} margin={:+.2} | val psnr={:.2} base={:.2} margin={:+.2} | train {:?} eval {:?}",
        send / s10,
        reports[0].aggregate.psnr_db,
        reports[0].baseline_psnr_db,
        reports[0].aggregate.psnr_db - reports[0].baseline_psnr_db,
        val[0].aggregate.psnr_db,
        val[0].baseline_psnr_db,
        val[0].aggregate.psnr_db - val[0].baseline_psnr_db,
        train_time,
        t1.elapsed()
    );
}
