//! Throwaway timing probe.

use hylda_core::config::{Mode, TrainConfig};
use hylda_core::datasets::make_batch;
use hylda_core::domainstats::{batch_stats, precompute_stats, DomainStats};
use hylda_core::nn::ParamStore;
use hylda_core::rangeview::CH_RANGE;
use hylda_core::synthlidar::{build_domain_pair, default_source_spec, default_target_spec, GenConfig};
use hylda_core::trainer::{load_run_data, pretrain_ref_source, run, RunData};
use hylda_core::translation::{load_engine, translate_batch, Direction};

fn cfg(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        beta: 0.1,
        gamma: 1.0,
        lr_seg: 0.01,
        lr_i2i: 0.002,
        epochs: 40,
        batch_size: 2,
        seed,
        labeled_subset_size: 10,
        widths: [8, 16, 32],
        n_classes: 6,
        use_hylda_i2i: true,
        use_aux_selfsup: true,
        use_unsup_step: true,
        use_stats_loss: true,
        dual_head_disc: true,
        update_disc_in_step6: false,
        augment: true,
        check_isolation: false,
    }
}

fn mae(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
}

fn gap(a: &DomainStats<f32>, b: &DomainStats<f32>) -> (f64, f64) {
    (mae(&a.mean_image, &b.mean_image), mae(&a.cov, &b.cov))
}

#[test]
fn probe() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    build_domain_pair(
        &default_source_spec(),
        &default_target_spec(),
        &GenConfig { grid_h: 16, grid_w: 64, seed: 7, subset_sizes: vec![5, 10, 20] },
        &root,
    )
    .unwrap();
    let data: RunData<f32> = load_run_data(&root, Some(10)).unwrap();

    let refp = dir.path().join("ref.hylc");
    let mut pc = cfg(Mode::Naive, 7);
    pc.epochs = 20;
    pretrain_ref_source(&pc, &data.source_train, &data.source_val, &refp).unwrap();

    let src_real = precompute_stats(
        &data.source_train.frames.iter().map(|f| f.image.clone()).collect::<Vec<_>>(),
    )
    .unwrap();
    let trg_real = precompute_stats(
        &data.target_train.frames.iter().map(|f| f.image.clone()).collect::<Vec<_>>(),
    )
    .unwrap();
    let (m0, c0) = gap(&src_real, &trg_real);
    println!("untranslated gap: mean={m0:.4} cov={c0:.4}");

    let src_all = make_batch(&data.source_train, &(0..24).collect::<Vec<_>>()).unwrap();
    let trg_all = make_batch(&data.target_train, &(0..24).collect::<Vec<_>>()).unwrap();

    let row_str = |m: &[f32]| -> String {
        let w = trg_real.w;
        (0..trg_real.h)
            .map(|y| {
                format!(
                    "{:.2}",
                    m[y * w..(y + 1) * w].iter().map(|v| *v as f64).sum::<f64>() / w as f64
                )
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("real trg rows: {}", row_str(&trg_real.mean_image));
    println!("real src rows: {}", row_str(&src_real.mean_image));

    let mut ftc = cfg(Mode::Finetune, 1);
    ftc.epochs = 80;
    let ftr = run(&ftc, &data, Some(&refp), &dir.path().join("ft80")).unwrap();
    println!("finetune 80ep: best={:.4}", ftr.best_miou);

    for lr_i2i in [0.005f64, 0.01, 0.02] {
        for (tag, unsup) in [("full", true), ("no_unsup", false)] {
            let mut c = cfg(Mode::Hylda, 1);
            c.epochs = 80;
            c.lr_i2i = lr_i2i;
            c.use_unsup_step = unsup;
            let out = dir.path().join(format!("{tag}{lr_i2i}"));
            let r = run(&c, &data, Some(&refp), &out).unwrap();
            print!("lr={lr_i2i} {tag}: best={:.4}", r.best_miou);

            if unsup {
                let mut store = ParamStore::new();
                let engine =
                    load_engine(r.engine_checkpoint.as_ref().unwrap(), &mut store).unwrap();
                let fake_t =
                    translate_batch(&engine, &store, &src_all.images, Direction::SourceToTarget);
                let fake_s =
                    translate_batch(&engine, &store, &trg_all.images, Direction::TargetToSource);
                let ft = batch_stats(&fake_t, CH_RANGE).unwrap();
                let fs = batch_stats(&fake_s, CH_RANGE).unwrap();
                let (m_ft, c_ft) = gap(&ft, &trg_real);
                let (m_fs, c_fs) = gap(&fs, &src_real);
                print!(
                    " | ->trg mean={m_ft:.4} cov={c_ft:.4} ->src mean={m_fs:.4} cov={c_fs:.4}"
                );
            }
            println!();
        }
    }
}
