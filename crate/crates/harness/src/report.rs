//! CSV and text reports. Rows are written in a fixed order so that equal
//! inputs give byte-identical files.

use std::path::Path;

use pcvox_core::{Error, Result};

use crate::rd::RdPoint;
use crate::train::EpochLog;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        k => Error::Config(format!("csv: {k:?}")),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RD_HEADER: [&str; 11] =
    ["cloud", "chain", "codec", "lambda", "scale", "coded_points", "payload_bits", "bpp", "d1_psnr", "d2_psnr", "input_points"];

/// Sorts by cloud, chain, codec, then bits per point.
pub fn sort_points(points: &mut [RdPoint]) {
    points.sort_by(|a, b| {
        (&a.cloud, &a.chain, &a.codec)
            .cmp(&(&b.cloud, &b.chain, &b.codec))
            .then(a.bpp.total_cmp(&b.bpp))
            .then(a.lambda.unwrap_or(0.0).total_cmp(&b.lambda.unwrap_or(0.0)))
    });
}

pub fn rd_csv_string(points: &[RdPoint]) -> Result<String> {
    let mut sorted = points.to_vec();
    sort_points(&mut sorted);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RD_HEADER).map_err(csv_err)?;
    for p in &sorted {
        w.write_record([
            p.cloud.clone(),
            p.chain.clone(),
            p.codec.clone(),
            opt(p.lambda),
            p.scale.to_string(),
            p.coded_points.to_string(),
            p.payload_bits.to_string(),
            p.bpp.to_string(),
            p.d1_psnr.to_string(),
            p.d2_psnr.to_string(),
            p.input_points.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_rd_csv(points: &[RdPoint], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, rd_csv_string(points)?)?;
    Ok(())
}

/// Parses a file written by [`write_rd_csv`].
pub fn read_rd_csv(path: impl AsRef<Path>) -> Result<Vec<RdPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Config(format!("bad number {:?} in RD csv", &rec[i])))
        };
        out.push(RdPoint {
            cloud: rec[0].to_string(),
            chain: rec[1].to_string(),
            codec: rec[2].to_string(),
            lambda: if rec[3].is_empty() { None } else { Some(f(3)?) },
            scale: f(4)?,
            coded_points: f(5)? as usize,
            payload_bits: f(6)? as u64,
            bpp: f(7)?,
            d1_psnr: f(8)?,
            d2_psnr: f(9)?,
            input_points: f(10)? as usize,
        });
    }
    Ok(out)
}

/// One BD-rate row: a cloud (or `average`) with D1 and D2 values.
#[derive(Debug, Clone, PartialEq)]
pub struct BdRow {
    pub cloud: String,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
}

pub fn write_bd_table(rows: &[BdRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["cloud", "bd_rate_d1_percent", "bd_rate_d2_percent"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.cloud.clone(), opt(r.d1), opt(r.d2)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsRow {
    pub cloud: String,
    pub parents: usize,
    pub back_loaded: u64,
    pub mid: u64,
}

impl FlopsRow {
    pub fn reduction(&self) -> f64 {
        (self.mid - self.back_loaded.min(self.mid)) as f64 / self.mid as f64
    }
}

pub fn write_flops_table(rows: &[FlopsRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["cloud", "parents", "flops_back_loaded", "flops_mid", "reduction"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.cloud.clone(),
            r.parents.to_string(),
            r.back_loaded.to_string(),
            r.mid.to_string(),
            r.reduction().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_training_log(logs: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["stage", "lambda", "epoch", "lr", "loss", "distortion", "rate"]).map_err(csv_err)?;
    for l in logs {
        w.write_record([
            l.stage.clone(),
            l.lambda.to_string(),
            l.epoch.to_string(),
            l.lr.to_string(),
            l.loss.to_string(),
            l.distortion.to_string(),
            l.rate.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Lossless coding cost of one cloud under the three coders.
#[derive(Debug, Clone, PartialEq)]
pub struct LosslessRow {
    pub cloud: String,
    pub points: usize,
    pub context_free_bits: u64,
    pub octree_bits: u64,
    pub surrogate_bits: u64,
}

pub fn write_lossless_table(rows: &[LosslessRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["cloud", "points", "context_free_bpp", "octree_bpp", "surrogate_bpp"]).map_err(csv_err)?;
    for r in rows {
        let bpp = |b: u64| (b as f64 / r.points as f64).to_string();
        w.write_record([
            r.cloud.clone(),
            r.points.to_string(),
            bpp(r.context_free_bits),
            bpp(r.octree_bits),
            bpp(r.surrogate_bits),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
