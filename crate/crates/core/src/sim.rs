//! Link-level simulation: block realizations, dataset generation and policy
//! evaluation.
//!
//! Every block draws its channel, bits and noise from three independent
//! streams keyed by `(seed, block)`, so two policies run with the same seed see
//! exactly the same realizations. The noise stream is drawn at unit variance
//! and scaled, which also makes different SNR points share realizations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{block_rng, complex_normal, sample_channels_with, snr_to_sigma2, ChannelModel, Stream};
use crate::codec::{self, Encoder, ParityCheckMatrix};
use crate::config::Config;
use crate::dataset::{Dataset, LabelOutcome, LabeledSample};
use crate::detectors::{
    detect, detect_all, DetectorId, LlrVector, ED_ADDITIONS, ED_MULTIPLICATIONS, NUM_DETECTORS,
};
use crate::error::{Error, Result};
use crate::features::extract_features;
use crate::model::Model;
use crate::modem::{Constellation, TransportBlock};
use crate::numerics::{ComplexMatrix2, ComplexVector2};

pub const REPORT_SCHEMA: &str = "mimo-select-report/1";

/// How each RE's detector is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Static(DetectorId),
    /// Selector network loaded from a model file.
    Dynamic(PathBuf),
    /// The offline label (DR-ML when DR-ML itself fails).
    Genie,
}

impl Policy {
    pub fn parse(spec: &str) -> Result<Self> {
        if spec == "genie" {
            return Ok(Policy::Genie);
        }
        match spec.split_once(':') {
            Some(("static", d)) => {
                let d: usize = d
                    .parse()
                    .map_err(|_| Error::Config(format!("static policy needs a detector index 1-5, got '{d}'")))?;
                Ok(Policy::Static(DetectorId::from_index(d).map_err(|e| Error::Config(e.to_string()))?))
            }
            Some(("dynamic", path)) if !path.is_empty() => Ok(Policy::Dynamic(PathBuf::from(path))),
            _ => Err(Error::Config(format!("bad policy '{spec}'"))),
        }
    }

    pub fn spec(&self) -> String {
        match self {
            Policy::Static(d) => format!("static:{}", d.index()),
            Policy::Dynamic(p) => format!("dynamic:{}", p.display()),
            Policy::Genie => "genie".into(),
        }
    }

    /// Short label used in report rows.
    pub fn label(&self) -> String {
        match self {
            Policy::Static(d) => d.name().to_string(),
            Policy::Dynamic(_) => "dynamic".into(),
            Policy::Genie => "genie".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coding {
    /// A block errs when any RE bit is wrong.
    Uncoded,
    Ldpc {
        alist: PathBuf,
        max_iter: usize,
        alpha: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub bits: usize,
    pub snr_db: Vec<f64>,
    pub channel: ChannelModel,
    pub blocks: usize,
    pub res_per_block: usize,
    pub coding: Coding,
    pub seed: u64,
    pub policy: Policy,
    /// Stop an SNR point early after more than this many block errors.
    pub max_block_errors: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            bits: 8,
            snr_db: vec![30.0],
            channel: ChannelModel::iid(),
            blocks: 2000,
            res_per_block: 1024,
            coding: Coding::Uncoded,
            seed: 1,
            policy: Policy::Static(DetectorId::DrMl),
            max_block_errors: None,
        }
    }
}

impl SimConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = SimConfig::default();
        let channel = match cfg.get_str("channel").unwrap_or("iid") {
            "iid" => ChannelModel::iid(),
            "correlated" => ChannelModel::correlated(cfg.get("correlation_length", 10.0)?)
                .map_err(|e| Error::Config(e.to_string()))?,
            other => return Err(Error::Config(format!("channel: unknown model '{other}'"))),
        };
        let coding = match cfg.get_str("coding").unwrap_or("uncoded") {
            "uncoded" => Coding::Uncoded,
            "ldpc" => Coding::Ldpc {
                alist: cfg
                    .get_str("alist")
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::Config("ldpc coding needs 'alist'".into()))?,
                max_iter: cfg.get("ldpc_max_iter", codec::DEFAULT_MAX_ITER)?,
                alpha: cfg.get("ldpc_alpha", codec::DEFAULT_ALPHA)?,
            },
            other => return Err(Error::Config(format!("coding: unknown mode '{other}'"))),
        };
        let max_block_errors = match cfg.get("max_block_errors", 0u64)? {
            0 => None,
            n => Some(n),
        };
        let out = SimConfig {
            bits: cfg.get("bits", d.bits)?,
            snr_db: cfg.get_list("snr_db", &d.snr_db)?,
            channel,
            blocks: cfg.get("blocks", d.blocks)?,
            res_per_block: cfg.get("res_per_block", d.res_per_block)?,
            coding,
            seed: cfg.get("seed", d.seed)?,
            policy: match cfg.get_str("policy") {
                Some(p) => Policy::parse(p)?,
                None => d.policy,
            },
            max_block_errors,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        Constellation::new(self.bits).map_err(|e| Error::Config(e.to_string()))?;
        if self.blocks == 0 || self.res_per_block == 0 || self.snr_db.is_empty() {
            return Err(Error::Config("blocks, res_per_block and snr_db must be non-empty".into()));
        }
        Ok(())
    }
}

/// One RE of a realized block.
#[derive(Debug, Clone, Copy)]
pub struct ReSample {
    pub h: ComplexMatrix2,
    pub y: ComplexVector2,
}

/// Channel, bits and received vectors of one block.
#[derive(Debug, Clone)]
pub struct BlockRealization {
    pub block: TransportBlock,
    pub res: Vec<ReSample>,
    /// Information bits when the block carries LDPC codewords.
    pub info: Vec<Vec<u8>>,
}

/// Codewords framed into a block: as many whole codewords as fit, then
/// random filler bits.
#[derive(Debug, Clone)]
pub struct LdpcFraming {
    pub h: ParityCheckMatrix,
    pub encoder: Encoder,
    pub max_iter: usize,
    pub alpha: f64,
}

impl LdpcFraming {
    pub fn load(alist: &Path, max_iter: usize, alpha: f64) -> Result<Self> {
        let h = ParityCheckMatrix::load_alist(alist)?;
        let encoder = Encoder::new(&h)?;
        Ok(LdpcFraming {
            h,
            encoder,
            max_iter,
            alpha,
        })
    }

    fn codewords_per_block(&self, block_bits: usize) -> usize {
        block_bits / self.encoder.n()
    }
}

/// Draws block `index` at noise variance `sigma2`.
pub fn realize_block(
    c: &Constellation,
    channel: &ChannelModel,
    res: usize,
    seed: u64,
    index: u64,
    sigma2: f64,
    framing: Option<&LdpcFraming>,
) -> Result<BlockRealization> {
    let mut bit_rng = block_rng(seed, index, Stream::Bits);
    let total = res * 2 * c.bits();
    let mut bits = Vec::with_capacity(total);
    let mut info = Vec::new();
    if let Some(f) = framing {
        for _ in 0..f.codewords_per_block(total) {
            let i: Vec<u8> = (0..f.encoder.k()).map(|_| bit_rng.gen::<bool>() as u8).collect();
            bits.extend(f.encoder.encode(&i)?);
            info.push(i);
        }
    }
    while bits.len() < total {
        bits.push(bit_rng.gen::<bool>() as u8);
    }
    let block = TransportBlock::from_bits(c, bits)?;
    let hs = sample_channels_with(channel, res, &mut block_rng(seed, index, Stream::Channel));
    let mut noise = block_rng(seed, index, Stream::Noise);
    let res = hs
        .into_iter()
        .zip(block.symbols())
        .map(|(h, x)| {
            // unit-variance draw, scaled, so every SNR sees the same noise shape
            let unit = ComplexVector2([complex_normal(&mut noise, 1.0), complex_normal(&mut noise, 1.0)]);
            let y = h.mul_vec(x).add(&unit.scale_re(sigma2.sqrt()));
            ReSample { h, y }
        })
        .collect();
    Ok(BlockRealization { block, res, info })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenerateStats {
    pub total: u64,
    pub excluded: u64,
}

/// Labeled samples from every RE of every block at every SNR. REs where
/// DR-ML itself errs are excluded and counted.
pub fn generate_dataset(cfg: &SimConfig) -> Result<(Dataset, GenerateStats)> {
    cfg.validate()?;
    let c = Constellation::new(cfg.bits)?;
    let mut samples = Vec::new();
    let mut stats = GenerateStats::default();
    for &snr in &cfg.snr_db {
        let sigma2 = snr_to_sigma2(snr);
        let per_block: Vec<Result<(Vec<LabeledSample>, u64)>> = (0..cfg.blocks as u64)
            .into_par_iter()
            .map(|b| {
                let real = realize_block(&c, &cfg.channel, cfg.res_per_block, cfg.seed, b, sigma2, None)?;
                let mut kept = Vec::new();
                let mut excluded = 0;
                for (n, re) in real.res.iter().enumerate() {
                    let truth = real.block.re_bits(n);
                    let bank = detect_all(&re.y, &re.h, sigma2, &c)?;
                    let mut correct = [false; NUM_DETECTORS];
                    for (flag, llr) in correct.iter_mut().zip(bank.iter()) {
                        *flag = llr.decisions_match(truth);
                    }
                    match LabelOutcome::from_flags(correct).label {
                        Some(z) => kept.push(LabeledSample {
                            block: b,
                            re: n as u64,
                            snr_db: snr,
                            features: extract_features(&re.y, &re.h, sigma2),
                            label: z.index() as u8,
                            correct,
                        }),
                        None => excluded += 1,
                    }
                }
                Ok((kept, excluded))
            })
            .collect();
        for r in per_block {
            let (kept, excluded) = r?;
            stats.total += kept.len() as u64 + excluded;
            stats.excluded += excluded;
            samples.extend(kept);
        }
    }
    Ok((Dataset::new(samples), stats))
}

enum Selector {
    Static(DetectorId),
    Dynamic(Box<Model>),
    Genie,
}

impl Selector {
    fn new(policy: &Policy) -> Result<Self> {
        Ok(match policy {
            Policy::Static(d) => Selector::Static(*d),
            Policy::Dynamic(path) => Selector::Dynamic(Box::new(Model::load(path)?)),
            Policy::Genie => Selector::Genie,
        })
    }
}

/// Counters of one block; summed in block order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    blocks: u64,
    block_errors: u64,
    res: u64,
    re_errors: u64,
    detector_counts: [u64; NUM_DETECTORS],
    re_errors_by_detector: [u64; NUM_DETECTORS],
    /// Sum over REs of the EDs evaluated per layer.
    ed_per_layer: u64,
    mlp_multiplications: u64,
    mlp_additions: u64,
    ldpc_iterations: u64,
    codewords: u64,
}

impl Tally {
    fn merge(&mut self, o: &Tally) {
        self.blocks += o.blocks;
        self.block_errors += o.block_errors;
        self.res += o.res;
        self.re_errors += o.re_errors;
        for (a, b) in self.detector_counts.iter_mut().zip(o.detector_counts) {
            *a += b;
        }
        for (a, b) in self.re_errors_by_detector.iter_mut().zip(o.re_errors_by_detector) {
            *a += b;
        }
        self.ed_per_layer += o.ed_per_layer;
        self.mlp_multiplications += o.mlp_multiplications;
        self.mlp_additions += o.mlp_additions;
        self.ldpc_iterations += o.ldpc_iterations;
        self.codewords += o.codewords;
    }
}

fn run_block(
    c: &Constellation,
    cfg: &SimConfig,
    sel: &Selector,
    framing: Option<&LdpcFraming>,
    index: u64,
    sigma2: f64,
) -> Result<Tally> {
    let real = realize_block(c, &cfg.channel, cfg.res_per_block, cfg.seed, index, sigma2, framing)?;
    let mut t = Tally {
        blocks: 1,
        res: real.res.len() as u64,
        ..Tally::default()
    };
    let mut ws = match sel {
        Selector::Dynamic(m) => Some(m.workspace()),
        _ => None,
    };
    let mut llrs: Vec<f64> = Vec::new();
    let mut any_re_error = false;
    for (n, re) in real.res.iter().enumerate() {
        let truth = real.block.re_bits(n);
        let (id, out): (DetectorId, LlrVector) = match sel {
            Selector::Static(d) => (*d, detect(*d, &re.y, &re.h, sigma2, c)?),
            Selector::Dynamic(model) => {
                let g = extract_features(&re.y, &re.h, sigma2);
                let ws = ws.as_mut().expect("workspace for dynamic policy");
                let (d, ops) = model.select(&g, ws);
                t.mlp_multiplications += ops.multiplications;
                t.mlp_additions += ops.additions;
                let id = DetectorId::from_index(d)?;
                (id, detect(id, &re.y, &re.h, sigma2, c)?)
            }
            Selector::Genie => {
                let bank = detect_all(&re.y, &re.h, sigma2, c)?;
                let mut correct = [false; NUM_DETECTORS];
                for (flag, llr) in correct.iter_mut().zip(bank.iter()) {
                    *flag = llr.decisions_match(truth);
                }
                let id = LabelOutcome::from_flags(correct).label.unwrap_or(DetectorId::DrMl);
                (id, bank[id.index() - 1])
            }
        };
        t.detector_counts[id.index() - 1] += 1;
        t.ed_per_layer += out.ed_count() as u64;
        if !out.decisions_match(truth) {
            t.re_errors += 1;
            t.re_errors_by_detector[id.index() - 1] += 1;
            any_re_error = true;
        }
        if framing.is_some() {
            llrs.extend(out.iter());
        }
    }
    t.block_errors = match framing {
        None => u64::from(any_re_error),
        Some(f) => {
            let n = f.encoder.n();
            let mut err = false;
            for (k, info) in real.info.iter().enumerate() {
                let d = codec::decode_min_sum(&f.h, &llrs[k * n..(k + 1) * n], f.max_iter, f.alpha)?;
                t.ldpc_iterations += d.iterations as u64;
                t.codewords += 1;
                err |= f.encoder.extract_info(&d.bits) != *info;
            }
            // filler bits beyond the last codeword are not protected and not judged
            u64::from(err)
        }
    };
    Ok(t)
}

/// Metrics of one policy at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub policy: String,
    pub snr_db: f64,
    pub blocks: u64,
    pub res: u64,
    pub block_errors: u64,
    pub bler: f64,
    pub re_errors: u64,
    pub re_error_rate: f64,
    pub detector_counts: [u64; NUM_DETECTORS],
    /// RE errors split by the detector that produced them.
    pub re_errors_by_detector: [u64; NUM_DETECTORS],
    pub utilization: [f64; NUM_DETECTORS],
    pub avg_ed_per_layer: f64,
    pub avg_multiplications_per_re: f64,
    pub avg_additions_per_re: f64,
    pub mlp_multiplications: u64,
    pub mlp_additions: u64,
    pub avg_ldpc_iterations: Option<f64>,
}

impl SnrPoint {
    fn from_tally(policy: &str, snr_db: f64, t: &Tally) -> Self {
        let res = t.res.max(1) as f64;
        let ed_mults = t.ed_per_layer * ED_MULTIPLICATIONS;
        let ed_adds = t.ed_per_layer * ED_ADDITIONS;
        let mut utilization = [0.0; NUM_DETECTORS];
        for (u, &n) in utilization.iter_mut().zip(&t.detector_counts) {
            *u = n as f64 / res;
        }
        SnrPoint {
            policy: policy.to_string(),
            snr_db,
            blocks: t.blocks,
            res: t.res,
            block_errors: t.block_errors,
            bler: t.block_errors as f64 / t.blocks.max(1) as f64,
            re_errors: t.re_errors,
            re_error_rate: t.re_errors as f64 / res,
            detector_counts: t.detector_counts,
            re_errors_by_detector: t.re_errors_by_detector,
            utilization,
            avg_ed_per_layer: t.ed_per_layer as f64 / res,
            avg_multiplications_per_re: (ed_mults + t.mlp_multiplications) as f64 / res,
            avg_additions_per_re: (ed_adds + t.mlp_additions) as f64 / res,
            mlp_multiplications: t.mlp_multiplications,
            mlp_additions: t.mlp_additions,
            avg_ldpc_iterations: (t.codewords > 0).then(|| t.ldpc_iterations as f64 / t.codewords as f64),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub entries: BTreeMap<String, String>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema: String,
    pub policy: String,
    pub config: ConfigEcho,
    pub per_snr: Vec<SnrPoint>,
    pub totals: SnrPoint,
}

const BLOCK_CHUNK: usize = 32;

/// Runs the configured policy at every SNR point.
pub fn simulate(cfg: &SimConfig, echo: ConfigEcho) -> Result<SimReport> {
    cfg.validate()?;
    let c = Constellation::new(cfg.bits)?;
    let sel = Selector::new(&cfg.policy)?;
    if let Selector::Dynamic(m) = &sel {
        if m.needs_margins() {
            eprintln!("note: first-stage model without margins; selecting by argmax");
        }
    }
    let framing = match &cfg.coding {
        Coding::Uncoded => None,
        Coding::Ldpc { alist, max_iter, alpha } => {
            let f = LdpcFraming::load(alist, *max_iter, *alpha)?;
            if f.codewords_per_block(cfg.res_per_block * 2 * cfg.bits) == 0 {
                return Err(Error::Config("a block is shorter than one codeword".into()));
            }
            Some(f)
        }
    };
    let label = cfg.policy.label();
    let mut per_snr = Vec::with_capacity(cfg.snr_db.len());
    let mut total = Tally::default();
    for &snr in &cfg.snr_db {
        let sigma2 = snr_to_sigma2(snr);
        let mut t = Tally::default();
        let mut start = 0;
        while start < cfg.blocks {
            let end = (start + BLOCK_CHUNK).min(cfg.blocks);
            let chunk: Vec<Result<Tally>> = (start as u64..end as u64)
                .into_par_iter()
                .map(|b| run_block(&c, cfg, &sel, framing.as_ref(), b, sigma2))
                .collect();
            for r in chunk {
                t.merge(&r?);
            }
            start = end;
            if cfg.max_block_errors.is_some_and(|m| t.block_errors > m) {
                break;
            }
        }
        total.merge(&t);
        per_snr.push(SnrPoint::from_tally(&label, snr, &t));
    }
    let mut totals = SnrPoint::from_tally(&label, f64::NAN, &total);
    totals.snr_db = 0.0;
    Ok(SimReport {
        schema: REPORT_SCHEMA.to_string(),
        policy: cfg.policy.spec(),
        config: echo,
        per_snr,
        totals,
    })
}

pub const CSV_HEADER: &str = "policy,snr_db,blocks,res,block_errors,bler,re_errors,re_error_rate,\
util_mmse,util_icr16,util_icr32,util_icr64,util_drml,avg_ed_per_layer,avg_mults_per_re,avg_adds_per_re";

fn csv_row(p: &SnrPoint) -> String {
    let mut s = format!(
        "{},{},{},{},{},{},{},{}",
        p.policy, p.snr_db, p.blocks, p.res, p.block_errors, p.bler, p.re_errors, p.re_error_rate
    );
    for u in p.utilization {
        let _ = write!(s, ",{u}");
    }
    let _ = write!(
        s,
        ",{},{},{}",
        p.avg_ed_per_layer, p.avg_multiplications_per_re, p.avg_additions_per_re
    );
    s
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(self.per_snr.iter())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: SimReport = serde_json::from_str(text)?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::Version {
                found: r.schema,
                expected: REPORT_SCHEMA.into(),
            });
        }
        Ok(r)
    }

    /// Writes `<out>` as JSON and the CSV mirror next to it.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        std::fs::write(out, self.to_json()?).map_err(|e| Error::io(out, e))?;
        let csv = out.with_extension("csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        Ok(csv)
    }
}

fn rows_to_csv<'a>(rows: impl Iterator<Item = &'a SnrPoint>) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for p in rows {
        s.push_str(&csv_row(p));
        s.push('\n');
    }
    s
}

/// One CSV row per (policy, SNR) across several reports, sorted by policy
/// then SNR.
pub fn merge_reports(reports: &[SimReport]) -> String {
    let mut rows: Vec<&SnrPoint> = reports.iter().flat_map(|r| r.per_snr.iter()).collect();
    rows.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.snr_db.total_cmp(&b.snr_db)));
    rows_to_csv(rows.into_iter())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(policy: Policy, bits: usize) -> SimConfig {
        SimConfig {
            bits,
            snr_db: vec![20.0],
            blocks: 6,
            res_per_block: 64,
            policy,
            ..SimConfig::default()
        }
    }

    fn echo() -> ConfigEcho {
        ConfigEcho {
            entries: BTreeMap::new(),
            source: String::new(),
        }
    }

    #[test]
    fn policy_specs() {
        assert_eq!(Policy::parse("static:5").unwrap(), Policy::Static(DetectorId::DrMl));
        assert_eq!(Policy::parse("genie").unwrap(), Policy::Genie);
        assert_eq!(Policy::parse("dynamic:m.txt").unwrap(), Policy::Dynamic("m.txt".into()));
        for bad in ["static:0", "static:6", "dynamic:", "best", "static:x"] {
            assert!(Policy::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn static_ed_and_op_accounting() {
        for (d, ed) in [(DetectorId::DrMl, 256.0), (DetectorId::Icr64, 64.0), (DetectorId::Mmse, 0.0)] {
            let r = simulate(&small(Policy::Static(d), 8), echo()).unwrap();
            let p = &r.per_snr[0];
            assert_eq!(p.avg_ed_per_layer, ed);
            assert_eq!(p.avg_multiplications_per_re, ed * 24.0);
            assert_eq!(p.avg_additions_per_re, ed * 21.0);
            assert!((p.utilization.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(p.utilization[d.index() - 1], 1.0);
        }
    }

    #[test]
    fn paired_realizations_across_policies() {
        let c = Constellation::new(4).unwrap();
        let a = realize_block(&c, &ChannelModel::iid(), 16, 9, 3, 0.1, None).unwrap();
        let b = realize_block(&c, &ChannelModel::iid(), 16, 9, 3, 0.1, None).unwrap();
        let quiet = realize_block(&c, &ChannelModel::iid(), 16, 9, 3, 0.0, None).unwrap();
        assert_eq!(a.block, b.block);
        for ((x, y), q) in a.res.iter().zip(&b.res).zip(&quiet.res) {
            assert_eq!(x.h, y.h);
            assert_eq!(x.y, y.y);
            assert_eq!(x.h, q.h);
        }
        // genie never does worse than the DR-ML baseline on the same REs
        let dr = simulate(&small(Policy::Static(DetectorId::DrMl), 4), echo()).unwrap();
        let ge = simulate(&small(Policy::Genie, 4), echo()).unwrap();
        assert_eq!(dr.per_snr[0].re_errors, ge.per_snr[0].re_errors);
        assert!(ge.per_snr[0].avg_ed_per_layer <= 16.0);
    }

    #[test]
    fn report_round_trip_and_merge() {
        let r1 = simulate(&small(Policy::Static(DetectorId::Mmse), 4), echo()).unwrap();
        let mut cfg = small(Policy::Static(DetectorId::Icr16), 4);
        cfg.snr_db = vec![25.0, 10.0, 15.0];
        let r2 = simulate(&cfg, echo()).unwrap();
        let back = SimReport::from_json(&r1.to_json().unwrap()).unwrap();
        assert_eq!(back, r1);
        assert_eq!(merge_reports(&[r1.clone()]), r1.to_csv());
        let merged = merge_reports(&[r2.clone(), r1.clone()]);
        let lines: Vec<&str> = merged.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("ICR-16,10,"));
        assert!(lines[4].starts_with("MMSE,20,"));
        assert_eq!(merged, merge_reports(&[r1, r2]));
        assert!(SimReport::from_json("{\"schema\":\"x\"}").is_err());
    }

    #[test]
    fn early_stop_on_block_errors() {
        let mut cfg = small(Policy::Static(DetectorId::Mmse), 8);
        cfg.snr_db = vec![0.0];
        cfg.blocks = 200;
        cfg.max_block_errors = Some(5);
        let r = simulate(&cfg, echo()).unwrap();
        assert_eq!(r.per_snr[0].blocks, BLOCK_CHUNK as u64);
    }
}
