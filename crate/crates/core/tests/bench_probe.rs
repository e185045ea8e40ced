use std::time::Instant;

use sjsc::codec::CodecConfig;
use sjsc::data::{synth_dataset, Split};
use sjsc::stego::{InnConfig, LhatMode};
use sjsc::training::*;

#[test]
#[ignore]
fn timing_probe() {
    let codec_cfg = CodecConfig::from_bcr(3, 32, 32, 1, 12).unwrap();
    let ds = synth_dataset::<f32>(256, 32, 1, Split::Train).unwrap();

    let t0 = Instant::now();
    let cfg = CodecTrainConfig {
        codec: codec_cfg,
        epochs: 1,
        batch_size: 32,
        learning_rate: 3e-4,
        snr_db_range: (0.0, 20.0),
        seed: 1,
    };
    let out = train_codec(&ds, &cfg).unwrap();
    let codec_dt = t0.elapsed();
    println!(
        "codec: {} items in {:.2?} ({:.1} ms/item) loss {:.4}",
        ds.len(),
        codec_dt,
        codec_dt.as_secs_f64() * 1000.0 / ds.len() as f64,
        out.epoch_mean[0]
    );

    let t0 = Instant::now();
    let scfg = StegoTrainConfig {
        inn: InnConfig::new(codec_cfg.k, 8, 32).unwrap(),
        epochs: 1,
        batch_size: 32,
        learning_rate: 3e-4,
        snr_db_range: (0.0, 20.0),
        seed: 2,
        weights: LossWeights::default(),
        lhat_mode: LhatMode::Constant,
        capture_steps: false,
    };
    let out = train_stego(&ds, &out.params, &scfg).unwrap();
    let stego_dt = t0.elapsed();
    println!(
        "stego: {} pairs in {:.2?} ({:.1} ms/pair) total {:.4}",
        ds.len(),
        stego_dt,
        stego_dt.as_secs_f64() * 1000.0 / ds.len() as f64,
        out.epoch_mean_total[0]
    );
}
