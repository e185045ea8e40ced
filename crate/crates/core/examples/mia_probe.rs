use sjsc::adversary::{model_inversion_attack, AttackConfig, MiaInit};
use sjsc::channel::{transmit, ChannelConfig, Link};
use sjsc::codec::CodecParams;
use sjsc::data::checkpoint::load_checkpoint;
use sjsc::data::{synth_dataset, Split};
use sjsc::metrics::{ms_ssim, psnr};

fn main() {
    let set = load_checkpoint::<f32>(std::path::Path::new("/tmp/sjsc-probe1/codec.ckpt")).unwrap();
    let codec = CodecParams::from_checkpoint_set(&set).unwrap();
    let ds = synth_dataset::<f32>(2, 32, 777, Split::Test).unwrap();
    let x = &ds.items[0];
    let z = codec.encode(x).unwrap();
    for snr in [5.0, 20.0] {
        let z_hat = transmit(&z, &ChannelConfig::new(snr, 3, Link::Eavesdrop));
        for (iters, lr, init) in [
            (1000, 0.05, MiaInit::ConstantHalf),
            (1000, 0.02, MiaInit::ConstantHalf),
            (1000, 0.1, MiaInit::ConstantHalf),
            (2000, 0.05, MiaInit::ConstantHalf),
            (1000, 0.05, MiaInit::Uniform),
            (3000, 0.02, MiaInit::ConstantHalf),
        ] {
            let cfg = AttackConfig { mia_iters: iters, mia_lr: lr, mia_init: init, seed: 1 };
            let r = model_inversion_attack(&z_hat, &codec, &cfg).unwrap();
            println!(
                "snr {snr:4.0} iters {iters:5} lr {lr:.3} init {init:?}: loss {:.1} -> {:.2}, psnr {:.2}, ms_ssim {:.3}",
                r.init_loss,
                r.best_loss,
                psnr(x, &r.image).unwrap(),
                ms_ssim(x, &r.image).unwrap()
            );
        }
    }
}
