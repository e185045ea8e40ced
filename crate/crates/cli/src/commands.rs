//! Subcommand implementations.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use sjsc::adversary::AttackConfig;
use sjsc::codec::{CodecParams, Image};
use sjsc::data::{checkpoint, image_io, synth_dataset, Dataset, Split};
use sjsc::eval::{run_mia, run_plain_pipeline, run_stego_pipeline, score, EvalPoint};
use sjsc::rng::RngStream;
use sjsc::stego::InnParams;
use sjsc::training::{CodecTrainConfig, StegoTrainConfig};

use crate::config::ExperimentConfig;
use crate::CliError;

const TAG_MIA: u64 = 0xa77ac4;

// ── Shared plumbing ─────────────────────────────────────────────────────

fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.resolved_out_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    cfg.write_resolved(&dir)?;
    Ok(dir)
}

fn run_id(cmd: &str, cfg: &ExperimentConfig) -> String {
    format!("{cmd}-s{}", cfg.seed)
}

/// A plain CSV writer; all emitted fields are numeric or bare tokens.
struct Csv {
    file: fs::File,
    path: PathBuf,
}

impl Csv {
    fn create(path: PathBuf, header: &str) -> Result<Self, CliError> {
        let mut file =
            fs::File::create(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        writeln!(file, "{header}").map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Ok(Csv { file, path })
    }

    fn row(&mut self, fields: std::fmt::Arguments<'_>) -> Result<(), CliError> {
        writeln!(self.file, "{fields}")
            .map_err(|e| CliError::io(format!("{}: {e}", self.path.display())))
    }
}

fn load_dataset(cfg: &ExperimentConfig, split: Split) -> Result<Dataset<f32>, CliError> {
    if cfg.dataset == "synthetic" {
        let n = match split {
            Split::Train => cfg.train_size,
            Split::Test => cfg.test_size,
        };
        return synth_dataset(n, cfg.image_size, cfg.seed, split).map_err(CliError::from_core);
    }
    let dir = PathBuf::from(&cfg.dataset);
    if !dir.is_dir() {
        return Err(CliError::config(format!(
            "dataset: directory `{}` does not exist",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| CliError::config(format!("dataset: {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("ppm") | Some("png")
            )
        })
        .collect();
    files.sort();
    let (lo, hi) = match split {
        Split::Train => (0, cfg.train_size),
        Split::Test => (cfg.train_size, cfg.train_size + cfg.test_size),
    };
    if files.len() < hi {
        return Err(CliError::config(format!(
            "dataset: `{}` holds {} images, need {hi} for train_size + test_size",
            dir.display(),
            files.len()
        )));
    }
    let items = files[lo..hi]
        .iter()
        .map(|p| image_io::load_image_resized::<f32>(p, cfg.image_size))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::from_core)?;
    Ok(Dataset {
        items,
        split,
        source: sjsc::data::Source::Directory(dir),
    })
}

fn load_codec(path: &Path, cfg: &ExperimentConfig) -> Result<CodecParams<f32>, CliError> {
    let set = checkpoint::load_checkpoint::<f32>(path).map_err(CliError::from_core)?;
    let codec = CodecParams::from_checkpoint_set(&set).map_err(CliError::from_core)?;
    let expected = cfg.codec_config()?;
    if codec.cfg != expected {
        return Err(CliError::config(format!(
            "checkpoint {} was trained with geometry {:?}, config asks for {:?} (k differs?)",
            path.display(),
            codec.cfg,
            expected
        )));
    }
    Ok(codec)
}

fn load_inn(path: &Path, codec: &CodecParams<f32>) -> Result<InnParams<f32>, CliError> {
    let set = checkpoint::load_checkpoint::<f32>(path).map_err(CliError::from_core)?;
    let inn = InnParams::from_checkpoint_set(&set).map_err(CliError::from_core)?;
    if inn.cfg.k != codec.cfg.k {
        return Err(CliError::config(format!(
            "stego checkpoint k = {} does not match codec k = {}",
            inn.cfg.k, codec.cfg.k
        )));
    }
    Ok(inn)
}

fn mia_config(cfg: &ExperimentConfig, snr_index: u64, pair: u64) -> Result<AttackConfig, CliError> {
    Ok(AttackConfig {
        mia_iters: cfg.mia_iters,
        mia_lr: cfg.mia_lr,
        mia_init: cfg.mia_init()?,
        seed: RngStream::new(cfg.seed, &[TAG_MIA, snr_index, pair]).next_u64(),
    })
}

// ── train-codec ─────────────────────────────────────────────────────────

pub fn train_codec(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dir = prepare_out_dir(cfg)?;
    let id = run_id("train-codec", cfg);
    let dataset = load_dataset(cfg, Split::Train)?;
    let tc = CodecTrainConfig {
        codec: cfg.codec_config()?,
        epochs: cfg.codec_epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        snr_db_range: (cfg.train_snr_lo_db, cfg.train_snr_hi_db),
        seed: cfg.seed,
    };
    let started = Instant::now();
    let out = sjsc::training::train_codec(&dataset, &tc).map_err(CliError::from_core)?;

    checkpoint::save_checkpoint(&out.params.to_checkpoint_set(), &dir.join("codec.ckpt"))
        .map_err(CliError::from_core)?;
    let mut csv = Csv::create(dir.join("codec_loss.csv"), "run_id,seed,step,epoch,term,value")?;
    for s in &out.steps {
        csv.row(format_args!(
            "{id},{},{},{},mse,{}",
            cfg.seed, s.step, s.epoch, s.value
        ))?;
    }
    println!(
        "trained codec on {} images for {} epochs in {:.1?}; epoch-mean mse {:.5} -> {:.5}",
        dataset.len(),
        cfg.codec_epochs,
        started.elapsed(),
        out.epoch_mean.first().unwrap_or(&f64::NAN),
        out.epoch_mean.last().unwrap_or(&f64::NAN),
    );
    println!("wrote {}", dir.join("codec.ckpt").display());
    Ok(())
}

// ── train-stego ─────────────────────────────────────────────────────────

pub fn train_stego(cfg: &ExperimentConfig, codec_path: &Path) -> Result<(), CliError> {
    let dir = prepare_out_dir(cfg)?;
    let id = run_id("train-stego", cfg);
    let codec = load_codec(codec_path, cfg)?;
    let dataset = load_dataset(cfg, Split::Train)?;
    let sc = StegoTrainConfig {
        inn: cfg.inn_config()?,
        epochs: cfg.stego_epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        snr_db_range: (cfg.train_snr_lo_db, cfg.train_snr_hi_db),
        seed: cfg.seed,
        weights: cfg.loss_weights(),
        lhat_mode: cfg.lhat_mode()?,
        capture_steps: false,
    };
    let started = Instant::now();
    let out = sjsc::training::train_stego(&dataset, &codec, &sc).map_err(CliError::from_core)?;

    checkpoint::save_checkpoint(&out.inn.to_checkpoint_set(), &dir.join("stego.ckpt"))
        .map_err(CliError::from_core)?;
    let mut csv = Csv::create(dir.join("stego_loss.csv"), "run_id,seed,step,epoch,term,value")?;
    for s in &out.steps {
        for (term, value) in [
            ("forward", s.report.forward),
            ("backward", s.report.backward),
            ("privacy", s.report.privacy),
            ("total", s.report.total),
        ] {
            csv.row(format_args!(
                "{id},{},{},{},{term},{value}",
                cfg.seed, s.step, s.epoch
            ))?;
        }
    }
    if let Some(step) = out.aborted_at {
        return Err(CliError {
            code: 3,
            message: format!(
                "non-finite loss at step {step}; last-good checkpoint written to {}",
                dir.join("stego.ckpt").display()
            ),
        });
    }
    println!(
        "trained stego module on {} pairs for {} epochs in {:.1?}; epoch-mean total {:.3} -> {:.3}",
        dataset.len(),
        cfg.stego_epochs,
        started.elapsed(),
        out.epoch_mean_total.first().unwrap_or(&f64::NAN),
        out.epoch_mean_total.last().unwrap_or(&f64::NAN),
    );
    println!("wrote {}", dir.join("stego.ckpt").display());
    Ok(())
}

// ── evaluate ────────────────────────────────────────────────────────────

struct CellRows {
    metric_rows: Vec<String>,
    power_row: String,
}

pub fn evaluate(cfg: &ExperimentConfig, codec_path: &Path, stego_path: &Path) -> Result<(), CliError> {
    let dir = prepare_out_dir(cfg)?;
    let id = run_id("evaluate", cfg);
    let codec = load_codec(codec_path, cfg)?;
    let inn = load_inn(stego_path, &codec)?;
    let test = load_dataset(cfg, Split::Test)?;
    let lhat = cfg.lhat_mode()?;

    let cells: Vec<(usize, usize)> = (0..cfg.snr_grid_db.len())
        .flat_map(|si| (0..cfg.eval_pairs).map(move |p| (si, p)))
        .collect();

    let results: Vec<Result<CellRows, CliError>> = cells
        .par_iter()
        .map(|&(si, p)| {
            let snr = cfg.snr_grid_db[si];
            let host = &test.items[2 * p];
            let private = &test.items[2 * p + 1];
            let point = EvalPoint {
                main_snr_db: snr,
                eve_snr_db: snr,
                seed: cfg.seed,
                lhat_mode: lhat,
            };
            let run = run_stego_pipeline(&codec, &inn, host, private, &point, p as u64)
                .map_err(CliError::from_core)?;

            let seed = cfg.seed;
            let mut rows = Vec::new();
            let mut push = |role: &str, target: &str, reference: &Image<f32>, img: &Image<f32>| {
                let (psnr, msssim) = score(reference, img).expect("same shapes");
                rows.push(format!("{id},{seed},{snr},{role},{target},psnr,{psnr}"));
                rows.push(format!("{id},{seed},{snr},{role},{target},ms_ssim,{msssim}"));
            };
            push("bob", "host", host, &run.bob_host);
            push("bob", "private", private, &run.bob_private);
            push("eve_naive", "host", host, &run.eve_naive);
            push("eve_naive", "private", private, &run.eve_naive);
            if p < cfg.mia_pairs {
                let mia = run_mia(&codec, &run.eve_signal, &mia_config(cfg, si as u64, p as u64)?)
                    .map_err(CliError::from_core)?;
                push("eve_mia", "host", host, &mia.image);
                push("eve_mia", "private", private, &mia.image);
            }
            Ok(CellRows {
                metric_rows: rows,
                power_row: format!(
                    "{id},{seed},{snr},{p},{},{}",
                    run.container_power, run.power_flagged as u8
                ),
            })
        })
        .collect();

    let mut metrics = Csv::create(
        dir.join("metrics.csv"),
        "run_id,seed,snr_db,role,target,metric,value",
    )?;
    let mut power = Csv::create(
        dir.join("container_power.csv"),
        "run_id,seed,snr_db,pair,mean_symbol_power,flagged",
    )?;
    let mut flagged = 0usize;
    for r in results {
        let r = r?;
        for row in &r.metric_rows {
            metrics.row(format_args!("{row}"))?;
        }
        if r.power_row.ends_with(",1") {
            flagged += 1;
        }
        power.row(format_args!("{}", r.power_row))?;
    }
    if flagged > 0 {
        eprintln!(
            "warning: {flagged} transmissions had container power deviating more than {:.0}% from 1 (see container_power.csv)",
            sjsc::eval::CONTAINER_POWER_TOL * 100.0
        );
    }
    println!("wrote {}", dir.join("metrics.csv").display());
    Ok(())
}

// ── attack ──────────────────────────────────────────────────────────────

pub fn attack(cfg: &ExperimentConfig, codec_path: &Path, stego_path: &Path) -> Result<(), CliError> {
    let dir = prepare_out_dir(cfg)?;
    let id = run_id("attack", cfg);
    let codec = load_codec(codec_path, cfg)?;
    let inn = load_inn(stego_path, &codec)?;
    let test = load_dataset(cfg, Split::Test)?;
    let lhat = cfg.lhat_mode()?;

    let cells: Vec<(usize, usize)> = (0..cfg.snr_grid_db.len())
        .flat_map(|si| (0..cfg.mia_pairs).map(move |p| (si, p)))
        .collect();

    let results: Vec<Result<Vec<String>, CliError>> = cells
        .par_iter()
        .map(|&(si, p)| {
            let snr = cfg.snr_grid_db[si];
            let host = &test.items[2 * p];
            let private = &test.items[2 * p + 1];
            let point = EvalPoint {
                main_snr_db: snr,
                eve_snr_db: snr,
                seed: cfg.seed,
                lhat_mode: lhat,
            };
            let seed = cfg.seed;
            let mut rows = Vec::new();
            let mut push =
                |scheme: &str, kind: &str, target: &str, reference: &Image<f32>, img: &Image<f32>| {
                    let (psnr, msssim) = score(reference, img).expect("same shapes");
                    rows.push(format!(
                        "{id},{seed},{snr},{scheme},{kind},{target},psnr,{psnr}"
                    ));
                    rows.push(format!(
                        "{id},{seed},{snr},{scheme},{kind},{target},ms_ssim,{msssim}"
                    ));
                };

            let secure = run_stego_pipeline(&codec, &inn, host, private, &point, p as u64)
                .map_err(CliError::from_core)?;
            push("secure", "naive", "host", host, &secure.eve_naive);
            push("secure", "naive", "private", private, &secure.eve_naive);
            let mia = run_mia(&codec, &secure.eve_signal, &mia_config(cfg, si as u64, p as u64)?)
                .map_err(CliError::from_core)?;
            push("secure", "mia", "host", host, &mia.image);
            push("secure", "mia", "private", private, &mia.image);

            let plain = run_plain_pipeline(&codec, private, &point, p as u64)
                .map_err(CliError::from_core)?;
            push("plain", "naive", "private", private, &plain.eve_naive);
            let mia = run_mia(&codec, &plain.eve_signal, &mia_config(cfg, si as u64, p as u64)?)
                .map_err(CliError::from_core)?;
            push("plain", "mia", "private", private, &mia.image);
            Ok(rows)
        })
        .collect();

    let mut csv = Csv::create(
        dir.join("attack.csv"),
        "run_id,seed,snr_db,scheme,attack,target,metric,value",
    )?;
    for r in results {
        for row in r? {
            csv.row(format_args!("{row}"))?;
        }
    }
    println!("wrote {}", dir.join("attack.csv").display());
    Ok(())
}

// ── demo ────────────────────────────────────────────────────────────────

pub fn demo(
    cfg: &ExperimentConfig,
    codec_path: &Path,
    stego_path: &Path,
    host_path: &Path,
    private_path: &Path,
) -> Result<(), CliError> {
    let dir = prepare_out_dir(cfg)?;
    let id = run_id("demo", cfg);
    let codec = load_codec(codec_path, cfg)?;
    let inn = load_inn(stego_path, &codec)?;
    let host = image_io::load_image_resized::<f32>(host_path, cfg.image_size)
        .map_err(CliError::from_core)?;
    let private = image_io::load_image_resized::<f32>(private_path, cfg.image_size)
        .map_err(CliError::from_core)?;

    let point = EvalPoint {
        main_snr_db: cfg.demo_main_snr_db,
        eve_snr_db: cfg.demo_eve_snr_db,
        seed: cfg.seed,
        lhat_mode: cfg.lhat_mode()?,
    };
    let run = run_stego_pipeline(&codec, &inn, &host, &private, &point, 0)
        .map_err(CliError::from_core)?;
    let mia = run_mia(&codec, &run.eve_signal, &mia_config(cfg, 0, 0)?)
        .map_err(CliError::from_core)?;

    let outputs: [(&str, &Image<f32>); 6] = [
        ("host_input.png", &host),
        ("private_input.png", &private),
        ("bob_host.png", &run.bob_host),
        ("bob_private.png", &run.bob_private),
        ("eve_naive.png", &run.eve_naive),
        ("eve_mia.png", &mia.image),
    ];
    for (name, img) in outputs {
        image_io::save_image(img, &dir.join(name)).map_err(CliError::from_core)?;
    }

    let mut csv = Csv::create(
        dir.join("demo_metrics.csv"),
        "run_id,seed,snr_db,role,target,metric,value",
    )?;
    let seed = cfg.seed;
    let snr = cfg.demo_main_snr_db;
    for (role, target, reference, img) in [
        ("bob", "host", &host, &run.bob_host),
        ("bob", "private", &private, &run.bob_private),
        ("eve_naive", "host", &host, &run.eve_naive),
        ("eve_naive", "private", &private, &run.eve_naive),
        ("eve_mia", "host", &host, &mia.image),
        ("eve_mia", "private", &private, &mia.image),
    ] {
        let (psnr, msssim) = score(reference, img).map_err(CliError::from_core)?;
        csv.row(format_args!("{id},{seed},{snr},{role},{target},psnr,{psnr}"))?;
        csv.row(format_args!(
            "{id},{seed},{snr},{role},{target},ms_ssim,{msssim}"
        ))?;
    }
    if run.power_flagged {
        eprintln!(
            "warning: container power {:.4} deviates more than {:.0}% from 1",
            run.container_power,
            sjsc::eval::CONTAINER_POWER_TOL * 100.0
        );
    }
    println!("wrote reconstructions and demo_metrics.csv to {}", dir.display());
    Ok(())
}
