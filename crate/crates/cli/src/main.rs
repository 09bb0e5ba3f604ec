use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ussim_core::evaluation::{
    evaluate_model, grid_to_pgm, grid_to_text, hole_study, timing_bench, ConstantModel, Hole, QualityReport,
    TimingConfig, MAP_BIN_MM,
};
use ussim_core::models::DecoderConfig;
use ussim_core::phantom::{generate_dataset, ImagingParams, PhantomOracle, PhantomSpec, PoseSampler};
use ussim_core::training::{
    pretrain_then_finetune_with, train_autoencoder_with, train_decoder_with, Arch, EpochRecord, FrameDataset,
    ModelCheckpoint, TrainConfig,
};
use ussim_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "ussim", version, about = "Pose-to-image ultrasound simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Decoder,
    Autoencoder,
    Pretrained,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Decoder => Arch::Decoder,
            ArchArg::Autoencoder => Arch::Autoencoder,
            ArchArg::Pretrained => Arch::Pretrained,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a phantom description to TOML.
    PhantomSpec {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a tracked dataset from the phantom.
    Generate {
        #[arg(long)]
        phantom: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        img_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus a CSV loss report.
    Train {
        #[arg(long, value_enum, default_value = "decoder")]
        arch: ArchArg,
        #[arg(long)]
        data: PathBuf,
        /// Untracked frames for pretraining; defaults to `--data` with poses withheld.
        #[arg(long)]
        pretrain_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 40)]
        pretrain_epochs: usize,
        #[arg(long, default_value_t = 64)]
        img_size: usize,
        /// Tracker-loss weight of the autoencoder.
        #[arg(long, default_value_t = 1.0)]
        k: f32,
    },
    /// Image-quality report on both splits, with the mean-image baseline.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with and without a spherical hole and map the validation loss.
    Holestudy {
        #[arg(long)]
        data: PathBuf,
        /// Hole centre `x,y,z` in mm.
        #[arg(long, value_parser = parse_point)]
        center: [f64; 3],
        #[arg(long)]
        radius: f64,
        #[arg(long, value_enum, default_value = "decoder")]
        arch: ArchArg,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = MAP_BIN_MM)]
        bin: f64,
        /// Output directory for the maps.
        #[arg(long)]
        out: PathBuf,
    },
    /// Batch-1 inference timing.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 500)]
        n_infer: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve `/meta`, `/simulate` and `/stream`.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        phantom: Option<PathBuf>,
        /// Defaults to `USSIM_BIND`, then 127.0.0.1:8080.
        #[arg(long)]
        bind: Option<String>,
    },
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z but got {s:?}"));
    }
    let mut p = [0.0; 3];
    for (v, t) in p.iter_mut().zip(parts) {
        *v = t.trim().parse().map_err(|e| format!("{t:?}: {e}"))?;
    }
    Ok(p)
}

fn log_epoch(r: &EpochRecord) {
    let val = r.val_loss.map_or("-".to_string(), |v| format!("{v:.6}"));
    eprintln!(
        "epoch {:>3}  train {:.6}  val {}  steps {}  {:.1}s",
        r.epoch, r.train_loss, val, r.steps, r.seconds
    );
}

fn load_phantom(path: Option<&Path>) -> Result<PhantomSpec> {
    Ok(match path {
        Some(p) => PhantomSpec::load(p)?,
        None => PhantomSpec::default(),
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn quality_lines(label: &str, r: &QualityReport) -> String {
    format!(
        "{label}.{split}.frames: {}\n{label}.{split}.mse: {:.6e}\n{label}.{split}.ssim: {:.6}\n{label}.{split}.psnr_db: {:.4}\n",
        r.len(),
        r.mean_mse,
        r.mean_ssim,
        r.mean_psnr,
        split = r.split,
    )
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::PhantomSpec { seed, out } => {
            let spec = PhantomSpec::default_with_seed(seed);
            spec.validate()?;
            spec.save(&out)?;
            println!("{}", spec.hash());
        }
        Command::Generate {
            phantom,
            n,
            img_size,
            seed,
            out,
        } => {
            let spec = load_phantom(phantom.as_deref())?;
            let params = ImagingParams::for_size(img_size)?;
            let oracle = PhantomOracle::new(spec, params)?;
            let frames = generate_dataset(&oracle, n, &PoseSampler::default(), seed)?;
            let mut ds = FrameDataset::from_frames(frames, seed, oracle.spec_hash())?;
            ds.imaging = Some(params);
            let manifest = ds.save(&out)?;
            println!("{}", manifest.display());
        }
        Command::Train {
            arch,
            data,
            pretrain_data,
            out,
            seed,
            epochs,
            pretrain_epochs,
            img_size,
            k,
        } => {
            let ds = FrameDataset::load(&data)?;
            if ds.image_size != img_size {
                bail!("dataset images are {} px but --img-size is {img_size}", ds.image_size);
            }
            let cfg = TrainConfig {
                epochs,
                pretrain_epochs,
                k,
                shuffle_seed: seed,
                ..TrainConfig::default()
            };
            cfg.validate()?;
            let model = DecoderConfig::with_output_size(img_size);
            let (ckpt, report) = match Arch::from(arch) {
                Arch::Decoder => train_decoder_with(&ds, &cfg, &model, seed, &mut log_epoch)?,
                Arch::Autoencoder => train_autoencoder_with(&ds, &cfg, &model, true, seed, epochs, &mut log_epoch)?,
                Arch::Pretrained => {
                    let mut untracked = match &pretrain_data {
                        Some(p) => FrameDataset::load(p)?,
                        None => ds.clone(),
                    };
                    untracked.tracked = false;
                    let o = pretrain_then_finetune_with(&untracked, &ds, &cfg, &model, seed, &mut log_epoch)?;
                    (o.checkpoint, o.report)
                }
            };
            ckpt.save(&out)?;
            let csv = out.with_extension("csv");
            write(&csv, report.to_csv())?;
            println!("{} {}", out.display(), ckpt.model_id());
        }
        Command::Eval { ckpt, data, out } => {
            let ckpt = ModelCheckpoint::load(&ckpt)?;
            let ds = FrameDataset::load(&data)?;
            let train = ds.train_frames();
            let val = ds.val_frames();
            let baseline = ConstantModel::mean_of(&train)?;
            let mut text = format!("model_id: {}\n", ckpt.model_id());
            for (name, frames, split) in [("train", &train, "train"), ("validation", &val, "validation")] {
                if frames.is_empty() {
                    text.push_str(&format!("model.{name}.frames: 0\n"));
                    continue;
                }
                text.push_str(&quality_lines("model", &evaluate_model(&ckpt, frames, split)?));
                text.push_str(&quality_lines("mean_image", &evaluate_model(&baseline, frames, split)?));
            }
            write(&out, &text)?;
            print!("{text}");
        }
        Command::Holestudy {
            data,
            center,
            radius,
            arch,
            epochs,
            seed,
            bin,
            out,
        } => {
            let ds = FrameDataset::load(&data)?;
            let cfg = TrainConfig {
                epochs,
                shuffle_seed: seed,
                ..TrainConfig::default()
            };
            let model = DecoderConfig::with_output_size(ds.image_size);
            let hole = Hole {
                center_mm: center,
                radius_mm: radius,
            };
            let study = hole_study(&ds, hole, bin, arch.into(), &cfg, &model, seed)?;
            let grid = study.full.grid;
            fs::create_dir_all(&out)?;
            for (name, values) in [
                ("full", study.full.means()),
                ("holed", study.holed.means()),
                ("relative", study.relative.clone()),
            ] {
                write(&out.join(format!("{name}.txt")), grid_to_text(&grid, &values))?;
                write(&out.join(format!("{name}.pgm")), grid_to_pgm(&grid, &values, 8))?;
            }
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
            let summary = format!(
                "removed_frames: {}\ntrain_frames: {}\nremoved_fraction: {:.6}\ninside_mean_increase_pct: {}\noutside_mean_increase_pct: {}\n",
                study.removed.len(),
                study.train_frames,
                study.removed_fraction,
                fmt(study.inside_mean),
                fmt(study.outside_mean),
            );
            write(&out.join("summary.txt"), &summary)?;
            print!("{summary}");
        }
        Command::Bench {
            ckpt,
            size,
            n_infer,
            repeats,
            warmup,
            out,
        } => {
            let ckpt = ModelCheckpoint::load(&ckpt)?;
            if ckpt.output_size() != size {
                bail!("checkpoint outputs {} px, not {size}", ckpt.output_size());
            }
            let cfg = TimingConfig {
                n_infer,
                n_repeat: repeats,
                warmup,
                ..TimingConfig::default()
            };
            let report = timing_bench(ckpt.decoder(), &ckpt.model_id(), &cfg)?;
            let text = report.to_text();
            if let Some(out) = out {
                write(&out, &text)?;
            }
            print!("{text}");
        }
        Command::Serve { ckpt, phantom, bind } => {
            let cfg = ServiceConfig { ckpt, phantom, bind };
            let rt = tokio::runtime::Runtime::new()?;
            if let Err(e) = rt.block_on(ussim_service::run(cfg)) {
                bail!(e);
            }
        }
    }
    Ok(())
}
