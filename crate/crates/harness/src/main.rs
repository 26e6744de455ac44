use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};
use pcvox::experiment::{bd_table, evaluate, flops_row, write_report};
use pcvox::report::{read_rd_csv, write_bd_table, write_flops_table, write_training_log};
use pcvox::train::{datasets, load_trained, surrogate_stage, voxnet_stage};
use pcvox::ExperimentConfig;
use pcvox_core::bitcodec::{Bitstream, CodecId};
use pcvox_core::pcgeom::{quantize, read_ply, write_ply, PlyFormat};
use pcvox_core::{octcodec, PointCloud};
use pcvox_learn::{SurrogateModel, VoxNet};

#[derive(Parser)]
#[command(name = "pcvox", version, about = "Learned voxelization and octree coding of point clouds")]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    cmd: Cmd,
}

/// One optional `--<key> <value>` flag per config key.
#[derive(Default)]
struct Overrides(Vec<(String, String)>);

impl FromArgMatches for Overrides {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = Vec::new();
        for k in ExperimentConfig::KEYS {
            if let Some(v) = m.get_one::<String>(k) {
                out.push((k.to_string(), v.clone()));
            }
        }
        Ok(Overrides(out))
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for Overrides {
    fn augment_args(mut cmd: Command) -> Command {
        for k in ExperimentConfig::KEYS {
            cmd = cmd.arg(Arg::new(*k).long(*k).global(true).value_name("VALUE").help_heading("Config overrides"));
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the training and held-out datasets as PLY files.
    SynthData,
    /// Pretrain the surrogate entropy model.
    TrainSurrogate,
    /// Train one voxelization network per lambda against a saved surrogate.
    TrainVoxnet,
    /// Quantize a PLY cloud (grid depth from `--depth`) and encode it losslessly.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
        /// Surrogate checkpoint; codes with the learned model instead of the
        /// octree codec.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Decode a bitstream to an integer PLY.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Surrogate checkpoint, required for surrogate-coded streams.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Voxelize a PLY cloud with a trained network.
    Voxelize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rate-distortion sweeps on the held-out set using saved checkpoints.
    EvalRd,
    /// Recompute the BD-rate table from an RD points CSV.
    Bdrate {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FLOPs of back-loaded against mid-network upsampling on the held-out set.
    Flops,
    /// Train both stages, evaluate and write every report.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    for (k, v) in &cli.overrides.0 {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::SynthData => {
            let (train, test) = datasets(&cfg)?;
            for (dir, set) in [("train", &train), ("test", &test)] {
                let d = cfg.out_dir.join("data").join(dir);
                fs::create_dir_all(&d)?;
                for c in set.iter() {
                    write_ply(&c.points, d.join(format!("{}.ply", c.name)), PlyFormat::BinaryLittleEndian)?;
                }
            }
            println!("wrote {} training and {} held-out clouds under {}", train.len(), test.len(), cfg.out_dir.display());
        }
        Cmd::TrainSurrogate => {
            let (train, _) = datasets(&cfg)?;
            let (_, logs) = surrogate_stage(&cfg, &train)?;
            write_training_log(&logs, cfg.out_dir.join("training_log_surrogate.csv"))?;
        }
        Cmd::TrainVoxnet => {
            let (train, _) = datasets(&cfg)?;
            let surrogate = SurrogateModel::<f32>::load(pcvox::train::surrogate_path(&cfg))?;
            let (_, logs) = voxnet_stage(&cfg, &surrogate, &train)?;
            write_training_log(&logs, cfg.out_dir.join("training_log_voxnet.csv"))?;
        }
        Cmd::Encode { input, scale, out, model } => {
            let pc: PointCloud<f64> = read_ply(input)?;
            let vc = quantize(&pc, *scale, cfg.depth)?;
            let bs = match model {
                Some(m) => SurrogateModel::<f32>::load(m)?.lossless_encode(&vc, *scale as f32)?,
                None => octcodec::encode(&vc, *scale as f32),
            };
            bs.write_file(out)?;
            println!("{} points, {} payload bits, {:.4} bpp", vc.len(), bs.payload_bits(), bs.payload_bits() as f64 / pc.len() as f64);
        }
        Cmd::Decode { input, out, model } => {
            let bs = Bitstream::read_file(input)?;
            let vc = match (bs.header.codec, model) {
                (CodecId::Octree, _) => octcodec::decode(&bs)?,
                (CodecId::Surrogate, Some(m)) => SurrogateModel::<f32>::load(m)?.lossless_decode(&bs)?,
                (CodecId::Surrogate, None) => bail!("surrogate-coded stream needs --model"),
            };
            write_ply(&vc, out, PlyFormat::BinaryLittleEndian)?;
            println!("{} points", vc.len());
        }
        Cmd::Voxelize { model, input, scale, out } => {
            let pc: PointCloud<f64> = read_ply(input)?;
            let v = VoxNet::<f32>::load(model)?.voxelize(&pc, *scale, cfg.depth)?;
            write_ply(&v.cloud, out, PlyFormat::BinaryLittleEndian)?;
            println!("{} points{}", v.cloud.len(), if v.fallback { " (fallback to plain quantization)" } else { "" });
        }
        Cmd::EvalRd => {
            let trained = load_trained(&cfg)?;
            let results = evaluate(&cfg, &trained)?;
            write_report(&cfg, &results)?;
            print!("{}", results.summary(&cfg));
        }
        Cmd::Bdrate { csv, out } => {
            let rows = bd_table(&read_rd_csv(csv)?);
            let out = out.clone().unwrap_or_else(|| cfg.out_dir.join("bd_rate.csv"));
            write_bd_table(&rows, &out)?;
            for r in &rows {
                let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:+.2}%"));
                println!("{}: D1 {} D2 {}", r.cloud, f(r.d1), f(r.d2));
            }
        }
        Cmd::Flops => {
            let (_, test) = datasets(&cfg)?;
            let rows = test.iter().map(|c| flops_row(&cfg, c)).collect::<pcvox_core::Result<Vec<_>>>()?;
            fs::create_dir_all(&cfg.out_dir)?;
            write_flops_table(&rows, cfg.out_dir.join("flops.csv"))?;
            for r in &rows {
                println!("{}: {} parents, back {} mid {} ({:.2}% fewer)", r.cloud, r.parents, r.back_loaded, r.mid, r.reduction() * 100.0);
            }
        }
        Cmd::Report => {
            let trained = pcvox::train_pipeline(&cfg)?;
            let results = evaluate(&cfg, &trained)?;
            write_report(&cfg, &results)?;
            print!("{}", results.summary(&cfg));
        }
    }
    Ok(())
}
