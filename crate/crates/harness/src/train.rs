//! Two-stage training: surrogate pretraining, then the voxelization network
//! against the frozen surrogate.

use std::fs;

use pcvox_core::pcgeom::quantize;
use pcvox_core::{Result, VoxelCloud};
use pcvox_learn::{PreparedCloud, SurrogateModel, VoxInput, VoxNet};
use pcvox_nn::{Adam, StepDecay};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::synth::{synth_dataset, SynthCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub stage: String,
    pub lambda: f64,
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss per sample in nats.
    pub loss: f64,
    /// Mean distortion and rate terms per sample (voxnet only).
    pub distortion: f64,
    pub rate: f64,
}

fn schedule(cfg: &ExperimentConfig, lr: f64) -> StepDecay {
    StepDecay { every: cfg.lr_decay_every, ..StepDecay::new(lr) }
}

/// Pretrains a surrogate on `train`. Stops with an error on a non-finite
/// loss; `last_good` then holds the most recent parameters that still gave a
/// finite loss.
pub fn train_surrogate(
    cfg: &ExperimentConfig,
    train: &[VoxelCloud],
    last_good: &mut Option<SurrogateModel<f32>>,
) -> Result<(SurrogateModel<f32>, Vec<EpochLog>)> {
    let mut model = SurrogateModel::<f32>::new(cfg.surrogate())?;
    let prepared: Vec<PreparedCloud<f32>> = train.iter().map(PreparedCloud::new).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5u64);
    let sched = schedule(cfg, cfg.surrogate_lr);
    let mut adam = Adam::new(sched.initial);
    let mut logs = Vec::new();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for epoch in 0..cfg.surrogate_epochs {
        adam.lr = sched.lr(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &prepared[i]).collect();
            let before = model.clone();
            total += model.pretrain_step(&mut adam, &batch)?;
            *last_good = Some(before);
        }
        let loss = total / prepared.len().max(1) as f64;
        log::info!("surrogate epoch {epoch}: lr {:.2e}, loss {loss:.1} nats per cloud", adam.lr);
        logs.push(EpochLog { stage: "surrogate".into(), lambda: 0.0, epoch, lr: adam.lr, loss, distortion: loss, rate: 0.0 });
    }
    Ok((model, logs))
}

/// Every (cloud, scale) training input for the voxelization network.
pub fn voxnet_inputs(cfg: &ExperimentConfig, clouds: &[SynthCloud], model: &VoxNet<f32>) -> Result<Vec<VoxInput<f32>>> {
    let mut out = Vec::new();
    for c in clouds {
        for &s in &cfg.scales {
            out.push(model.prepare(quantize(&c.points, s, cfg.depth)?)?);
        }
    }
    Ok(out)
}

pub fn train_voxnet(
    cfg: &ExperimentConfig,
    surrogate: &SurrogateModel<f32>,
    inputs: &[VoxInput<f32>],
    lambda: f64,
    last_good: &mut Option<VoxNet<f32>>,
) -> Result<(VoxNet<f32>, Vec<EpochLog>)> {
    let mut model = VoxNet::<f32>::new(cfg.voxnet())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7u64 ^ lambda.to_bits());
    let sched = schedule(cfg, cfg.voxnet_lr);
    let mut adam = Adam::new(sched.initial);
    let mut logs = Vec::new();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 0..cfg.voxnet_epochs {
        adam.lr = sched.lr(epoch);
        order.shuffle(&mut rng);
        let (mut lt, mut dt, mut rt) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &inputs[i]).collect();
            let before = model.clone();
            let (l, d, r) = model.joint_train_step(&mut adam, surrogate, &batch, lambda)?;
            *last_good = Some(before);
            lt += l;
            dt += d;
            rt += r;
        }
        let n = inputs.len().max(1) as f64;
        log::info!("voxnet lambda {lambda} epoch {epoch}: loss {:.1} (D {:.1}, R {:.1})", lt / n, dt / n, rt / n);
        logs.push(EpochLog {
            stage: "voxnet".into(),
            lambda,
            epoch,
            lr: adam.lr,
            loss: lt / n,
            distortion: dt / n,
            rate: rt / n,
        });
    }
    Ok((model, logs))
}

/// Everything the pipeline produces.
#[derive(Debug, Clone)]
pub struct Trained {
    pub train: Vec<SynthCloud>,
    pub test: Vec<SynthCloud>,
    pub surrogate: SurrogateModel<f32>,
    pub voxnets: Vec<(f64, VoxNet<f32>)>,
    pub logs: Vec<EpochLog>,
}

pub fn surrogate_path(cfg: &ExperimentConfig) -> std::path::PathBuf {
    cfg.out_dir.join("surrogate.pvnn")
}

pub fn voxnet_path(cfg: &ExperimentConfig, lambda: f64) -> std::path::PathBuf {
    cfg.out_dir.join(format!("voxnet_lambda{lambda}.pvnn"))
}

/// Training and held-out datasets for `cfg`.
pub fn datasets(cfg: &ExperimentConfig) -> Result<(Vec<SynthCloud>, Vec<SynthCloud>)> {
    cfg.validate()?;
    let (train_seed, test_seed) = cfg.dataset_seeds();
    let train = synth_dataset(&cfg.synth_spec(cfg.train_clouds), train_seed)?;
    let test = synth_dataset(&cfg.synth_spec(cfg.test_clouds), test_seed)?;
    Ok((train, test))
}

/// Stage one: pretrains and saves the surrogate.
pub fn surrogate_stage(cfg: &ExperimentConfig, train: &[SynthCloud]) -> Result<(SurrogateModel<f32>, Vec<EpochLog>)> {
    fs::create_dir_all(&cfg.out_dir)?;
    let voxels: Vec<VoxelCloud> = train.iter().map(|c| c.voxels.clone()).collect();
    let mut good = None;
    match train_surrogate(cfg, &voxels, &mut good) {
        Ok((m, logs)) => {
            m.save(surrogate_path(cfg))?;
            Ok((m, logs))
        }
        Err(e) => {
            if let Some(m) = good {
                m.save(surrogate_path(cfg))?;
            }
            Err(e)
        }
    }
}

/// Stage two: one voxelization network per lambda against the frozen
/// surrogate, each saved as it finishes.
pub fn voxnet_stage(
    cfg: &ExperimentConfig,
    surrogate: &SurrogateModel<f32>,
    train: &[SynthCloud],
) -> Result<(Vec<(f64, VoxNet<f32>)>, Vec<EpochLog>)> {
    fs::create_dir_all(&cfg.out_dir)?;
    let vox_train = &train[..cfg.voxnet_train_clouds.min(train.len())];
    let proto = VoxNet::<f32>::new(cfg.voxnet())?;
    let inputs = voxnet_inputs(cfg, vox_train, &proto)?;
    let mut voxnets = Vec::new();
    let mut logs = Vec::new();
    for &lambda in &cfg.lambdas {
        let mut good = None;
        let (m, l) = match train_voxnet(cfg, surrogate, &inputs, lambda, &mut good) {
            Ok(r) => r,
            Err(e) => {
                if let Some(m) = good {
                    m.save(voxnet_path(cfg, lambda))?;
                }
                return Err(e);
            }
        };
        m.save(voxnet_path(cfg, lambda))?;
        logs.extend(l);
        voxnets.push((lambda, m));
    }
    Ok((voxnets, logs))
}

/// Generates the datasets and runs both training stages, writing
/// checkpoints and `training_log.csv` under `cfg.out_dir`. On divergence the
/// last good checkpoint of the failing stage is written before returning.
pub fn train_pipeline(cfg: &ExperimentConfig) -> Result<Trained> {
    let (train, test) = datasets(cfg)?;
    let (surrogate, mut logs) = surrogate_stage(cfg, &train)?;
    let (voxnets, l) = voxnet_stage(cfg, &surrogate, &train)?;
    logs.extend(l);
    crate::report::write_training_log(&logs, cfg.out_dir.join("training_log.csv"))?;
    Ok(Trained { train, test, surrogate, voxnets, logs })
}

/// Rebuilds the datasets and loads the checkpoints a previous run left in
/// `cfg.out_dir`.
pub fn load_trained(cfg: &ExperimentConfig) -> Result<Trained> {
    let (train, test) = datasets(cfg)?;
    let surrogate = SurrogateModel::load(surrogate_path(cfg))?;
    let voxnets = cfg
        .lambdas
        .iter()
        .map(|&l| Ok((l, VoxNet::load(voxnet_path(cfg, l))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trained { train, test, surrogate, voxnets, logs: Vec::new() })
}
