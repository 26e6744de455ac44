//! Evaluation of a trained pipeline on the held-out clouds.

use std::fmt::Write as _;
use std::fs;

use pcvox_core::{octcodec, Result};
use pcvox_learn::{Upsampling, VoxNet, VoxNetConfig};

use crate::config::ExperimentConfig;
use crate::rd::{cloud_bd_rate, plain_sweep, stream_name, voxnet_sweep, Codec, EvalCloud, RdPoint};
use crate::report::{
    write_bd_table, write_flops_table, write_lossless_table, write_rd_csv, BdRow, FlopsRow, LosslessRow,
};
use crate::synth::SynthCloud;
use crate::train::Trained;

#[derive(Debug, Clone)]
pub struct Results {
    pub rd: Vec<RdPoint>,
    /// One row per cloud, then `average`.
    pub bd: Vec<BdRow>,
    pub flops: Vec<FlopsRow>,
    pub lossless: Vec<LosslessRow>,
    /// Serialized bitstream of every RD point and of each held-out cloud
    /// under the surrogate, keyed by file name.
    pub streams: Vec<(String, Vec<u8>)>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl Results {
    pub fn average_bd(&self) -> &BdRow {
        self.bd.last().expect("average row")
    }

    /// Surrogate bits relative to another coder, over all clouds, in percent.
    pub fn surrogate_gain(&self, other: impl Fn(&LosslessRow) -> u64) -> f64 {
        let s: u64 = self.lossless.iter().map(|r| r.surrogate_bits).sum();
        let o: u64 = self.lossless.iter().map(other).sum();
        (s as f64 / o as f64 - 1.0) * 100.0
    }

    /// Mean coded point count of the voxnet chain per lambda, ascending.
    pub fn points_by_lambda(&self) -> Vec<(f64, f64)> {
        let mut lambdas: Vec<f64> = self.rd.iter().filter_map(|p| p.lambda).collect();
        lambdas.sort_by(f64::total_cmp);
        lambdas.dedup();
        lambdas
            .into_iter()
            .map(|l| {
                let m = mean(self.rd.iter().filter(|p| p.lambda == Some(l)).map(|p| p.coded_points as f64));
                (l, m.unwrap_or(0.0))
            })
            .collect()
    }

    pub fn summary(&self, cfg: &ExperimentConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# configuration");
        // Everything but the output location, so reports compare across directories.
        for line in cfg.to_text().lines().filter(|l| !l.starts_with("out_dir ")) {
            let _ = writeln!(s, "{line}");
        }
        let _ = writeln!(s, "\n# lossless coding ({} held-out clouds)", self.lossless.len());
        let _ = writeln!(s, "surrogate vs context-free: {:+.2}%", self.surrogate_gain(|r| r.context_free_bits));
        let _ = writeln!(s, "surrogate vs octree codec: {:+.2}%", self.surrogate_gain(|r| r.octree_bits));
        let avg = self.average_bd();
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:+.2}%"));
        let _ = writeln!(s, "\n# voxnet + octree vs plain quantization + octree");
        let _ = writeln!(s, "BD-rate D1: {}", fmt(avg.d1));
        let _ = writeln!(s, "BD-rate D2: {}", fmt(avg.d2));
        for (l, n) in self.points_by_lambda() {
            let _ = writeln!(s, "lambda {l}: mean coded points {n:.1}");
        }
        let red = mean(self.flops.iter().map(FlopsRow::reduction)).unwrap_or(0.0);
        let _ = writeln!(s, "\n# FLOPs\nback-loaded vs mid-network upsampling: {:.2}% fewer", red * 100.0);
        let _ = writeln!(s, "\nscale grid is a stand-in for undisclosed per-rate-point codec settings");
        s
    }
}

/// FLOPs of the back-loaded and mid-network variants on one cloud.
pub fn flops_row(cfg: &ExperimentConfig, cloud: &SynthCloud) -> Result<FlopsRow> {
    let base = VoxNetConfig { channels: cfg.voxnet_channels, blocks: cfg.voxnet_blocks, ..VoxNetConfig::default() };
    let back = VoxNet::<f32>::new(base)?;
    let mid = VoxNet::<f32>::new(VoxNetConfig { upsampling: Upsampling::Mid, ..base })?;
    let xb = back.prepare(cloud.voxels.clone())?;
    let xm = mid.prepare(cloud.voxels.clone())?;
    Ok(FlopsRow { cloud: cloud.name.clone(), parents: xb.parents.len(), back_loaded: back.flops(&xb), mid: mid.flops(&xm) })
}

/// Per-cloud BD-rates (D1, D2) of the voxnet chain against plain
/// quantization, both through the octree codec, followed by an `average`
/// row. Clouds appear in order of first occurrence.
pub fn bd_table(points: &[RdPoint]) -> Vec<BdRow> {
    let mut names: Vec<&str> = Vec::new();
    for p in points {
        if !names.contains(&p.cloud.as_str()) {
            names.push(&p.cloud);
        }
    }
    let mut rows: Vec<BdRow> = names
        .into_iter()
        .map(|name| {
            let pick = |chain: &str| -> Vec<RdPoint> {
                points.iter().filter(|p| p.cloud == name && p.chain == chain && p.codec == "octree").cloned().collect()
            };
            let (plain, vox) = (pick("plain"), pick("voxnet"));
            let bd = |d2| match cloud_bd_rate(&plain, &vox, d2) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("{name}: no BD-rate: {e}");
                    None
                }
            };
            BdRow { cloud: name.to_string(), d1: bd(false), d2: bd(true) }
        })
        .collect();
    rows.push(BdRow {
        cloud: "average".into(),
        d1: mean(rows.iter().filter_map(|r| r.d1)),
        d2: mean(rows.iter().filter_map(|r| r.d2)),
    });
    rows
}

pub fn evaluate(cfg: &ExperimentConfig, trained: &Trained) -> Result<Results> {
    let mut rd = Vec::new();
    let mut flops = Vec::new();
    let mut lossless = Vec::new();
    let mut streams = Vec::new();
    for c in &trained.test {
        let ev = EvalCloud::new(c.name.clone(), c.points.clone())?;
        let mut sweep = plain_sweep(&ev, &cfg.scales, cfg.depth, Codec::Octree)?;
        sweep.extend(voxnet_sweep(&ev, &cfg.scales, cfg.depth, &trained.voxnets, Codec::Octree)?);
        for (p, bs) in sweep {
            streams.push((stream_name(&p), bs.to_bytes()?));
            rd.push(p);
        }

        let sur = trained.surrogate.lossless_encode(&c.voxels, 1.0)?;
        if trained.surrogate.lossless_decode(&sur)? != c.voxels {
            return Err(pcvox_core::Error::integrity(format!("{}: surrogate round trip failed", c.name)));
        }
        lossless.push(LosslessRow {
            cloud: c.name.clone(),
            points: c.voxels.len(),
            context_free_bits: octcodec::context_free_encode(&c.voxels).len() as u64 * 8,
            octree_bits: octcodec::encode(&c.voxels, 1.0).payload_bits(),
            surrogate_bits: sur.payload_bits(),
        });
        streams.push((format!("{}_lossless_surrogate.pvx", c.name), sur.to_bytes()?));
        flops.push(flops_row(cfg, c)?);
    }
    let bd = bd_table(&rd);
    Ok(Results { rd, bd, flops, lossless, streams })
}

/// Writes `rd_points.csv`, `bd_rate.csv`, `flops.csv`, `lossless.csv`,
/// `summary.txt` and the bitstreams under `streams/` in `cfg.out_dir`.
pub fn write_report(cfg: &ExperimentConfig, r: &Results) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    write_rd_csv(&r.rd, cfg.out_dir.join("rd_points.csv"))?;
    write_bd_table(&r.bd, cfg.out_dir.join("bd_rate.csv"))?;
    write_flops_table(&r.flops, cfg.out_dir.join("flops.csv"))?;
    write_lossless_table(&r.lossless, cfg.out_dir.join("lossless.csv"))?;
    fs::write(cfg.out_dir.join("summary.txt"), r.summary(cfg))?;
    let dir = cfg.out_dir.join("streams");
    fs::create_dir_all(&dir)?;
    for (name, bytes) in &r.streams {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}
