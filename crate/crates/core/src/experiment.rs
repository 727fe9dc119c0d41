//! Experiment orchestration and report emission.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{converse_terms, d_star, l_star, tradeoff_points, ConvexEnvelope, TradeoffPoint};
use crate::error::{Error, Result};
use crate::exact::{decimal_string, ratio, ratio_string, Rational};
use crate::job::{assign_reducers, map_phase, place_files, reduce_phase, JobSpec};
use crate::routing::{check_link_bounds, ledger_summary, shuffle_fat_tree, shuffle_star, to_rational, BoundCheck, LoadSummary};
use crate::shuffle::{build_messages, decode};
use crate::subset::binomial_u64;
use crate::topology::{build_fat_tree, build_star, choose_arity, place_servers, Layer, Topology};

const DECIMAL_DIGITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Star,
    FatTree,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Star => "star",
            TopologyKind::FatTree => "fat-tree",
        })
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "star" => Ok(TopologyKind::Star),
            "fat-tree" | "fattree" => Ok(TopologyKind::FatTree),
            other => Err(format!("unknown topology `{other}` (expected star or fat-tree)")),
        }
    }
}

/// N or Q: a fixed count, or the smallest valid count times a multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sizing {
    Auto { multiplier: usize },
    Fixed(usize),
}

impl Default for Sizing {
    fn default() -> Self {
        Sizing::Auto { multiplier: 1 }
    }
}

impl Sizing {
    fn resolve(self, servers: usize, subset: usize) -> Result<usize> {
        match self {
            Sizing::Fixed(n) => Ok(n),
            Sizing::Auto { multiplier } => {
                let base = binomial_u64(servers as u64, subset as u64)
                    .filter(|_| subset <= servers)
                    .ok_or_else(|| Error::Range(format!("binom({servers}, {subset}) overflows")))?;
                usize::try_from(base)
                    .ok()
                    .and_then(|b| b.checked_mul(multiplier))
                    .ok_or_else(|| Error::Range(format!("auto size binom({servers}, {subset})·{multiplier} overflows")))
            }
        }
    }
}

impl FromStr for Sizing {
    type Err = String;

    /// `auto`, `auto:M` or a positive integer.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Sizing::default());
        }
        if let Some(m) = s.strip_prefix("auto:") {
            return match m.parse::<usize>() {
                Ok(multiplier) if multiplier >= 1 => Ok(Sizing::Auto { multiplier }),
                _ => Err(format!("invalid auto multiplier `{m}`")),
            };
        }
        s.parse::<usize>().map(Sizing::Fixed).map_err(|_| format!("expected a count or `auto`, got `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub servers: usize,
    /// One run per computation load, in this order.
    pub loads: Vec<usize>,
    pub reducers: usize,
    pub files: Sizing,
    pub functions: Sizing,
    pub value_bits: usize,
    pub topology: TopologyKind,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn job(&self, load: usize) -> Result<JobSpec> {
        if !(1..=self.servers).contains(&load) {
            return Err(Error::Range(format!("r = {load} must lie in [1, K = {}]", self.servers)));
        }
        let files = self.files.resolve(self.servers, load)?;
        let functions = self.functions.resolve(self.servers, self.reducers.min(self.servers))?;
        JobSpec::new(self.servers, load, self.reducers, files, functions, self.value_bits)
    }

    pub fn build_topology(&self) -> Result<Topology> {
        match self.topology {
            TopologyKind::Star => Ok(build_star(self.servers)),
            TopologyKind::FatTree => build_fat_tree(choose_arity(self.servers)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.to_string(), pass, detail: detail.into() }
    }
}

/// One run: a single computation load on a single topology.
#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub run_id: usize,
    #[serde(rename = "K")]
    pub servers: usize,
    pub r: usize,
    pub s: usize,
    #[serde(rename = "N")]
    pub files: usize,
    #[serde(rename = "Q")]
    pub functions: usize,
    #[serde(rename = "T")]
    pub value_bits: usize,
    pub seed: u64,
    pub topology: TopologyKind,
    pub t: Option<usize>,
    pub full_occupancy: bool,
    #[serde(rename = "D_measured", serialize_with = "crate::exact::serialize_ratio")]
    pub d_measured: Rational,
    #[serde(rename = "D_measured_decimal")]
    pub d_measured_decimal: String,
    #[serde(rename = "D_excluding_padding", serialize_with = "crate::exact::serialize_ratio")]
    pub d_excluding_padding: Rational,
    #[serde(rename = "D_star", serialize_with = "crate::exact::serialize_ratio")]
    pub d_star: Rational,
    #[serde(rename = "D_star_decimal")]
    pub d_star_decimal: String,
    #[serde(rename = "L_star", serialize_with = "crate::exact::serialize_ratio")]
    pub l_star: Rational,
    pub loads: LoadSummary,
    pub link_bounds: Vec<BoundCheck>,
    pub checks: Vec<Check>,
    pub decoded_servers: usize,
    pub decoded_values: usize,
    pub pass: bool,
    #[serde(skip)]
    pub wall_time: Duration,
    #[serde(skip)]
    pub ledger: Vec<LedgerRow>,
}

impl RunRow {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// One line of the per-link ledger export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerRow {
    pub link_id: usize,
    pub layer: &'static str,
    pub lower_node: String,
    pub upper_node: String,
    pub up_bits: u64,
    pub down_bits: u64,
    pub total_bits: u64,
    pub padded_bits: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeSample {
    pub r: String,
    #[serde(rename = "D", serialize_with = "crate::exact::serialize_ratio")]
    pub max_link: Rational,
    #[serde(rename = "D_decimal")]
    pub max_link_decimal: String,
}

/// D*(r) at integer r and its lower convex envelope sampled every 0.1.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryCurve {
    #[serde(rename = "K")]
    pub servers: usize,
    pub s: usize,
    pub points: Vec<TradeoffPoint>,
    pub envelope: Vec<EnvelopeSample>,
    pub envelope_tight: bool,
    pub envelope_non_increasing: bool,
}

pub fn theory_curve(servers: usize, reducers: usize) -> Result<TheoryCurve> {
    let points = tradeoff_points(servers, reducers)?;
    let env = ConvexEnvelope::from_tradeoff(&points);
    let envelope = (10..=10 * servers)
        .map(|tenths| {
            let x = ratio(tenths as i64, 10);
            let y = env.eval(&x).expect("sample inside [1, K]");
            EnvelopeSample {
                r: format!("{}.{}", tenths / 10, tenths % 10),
                max_link_decimal: decimal_string(&y, DECIMAL_DIGITS),
                max_link: y,
            }
        })
        .collect();
    Ok(TheoryCurve {
        servers,
        s: reducers,
        envelope_tight: env.is_tight(),
        envelope_non_increasing: env.is_non_increasing(),
        points,
        envelope,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub rows: Vec<RunRow>,
    pub theory: Option<TheoryCurve>,
}

impl Report {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

fn run_label(config: &ExperimentConfig, load: usize) -> String {
    format!("K={} r={} s={} topology={}", config.servers, load, config.reducers, config.topology)
}

/// Run the full pipeline for one computation load.
pub fn run_single(config: &ExperimentConfig, load: usize, run_id: usize) -> Result<RunRow> {
    run_pipeline(config, load, run_id).map_err(|e| Error::Run { run: run_label(config, load), source: Box::new(e) })
}

fn run_pipeline(config: &ExperimentConfig, load: usize, run_id: usize) -> Result<RunRow> {
    let started = Instant::now();
    let job = config.job(load)?;
    let placement = place_files(&job);
    let assignment = assign_reducers(&job);
    let store = map_phase(&job, &placement, config.seed);

    let topology = config.build_topology()?;
    let arity = topology.arity();
    let granularity = arity.map_or(1, |t| (t / 2) * (t / 2));
    let set = build_messages(&job, &placement, &assignment, &store, granularity)?;

    let (outcome, full_occupancy) = match config.topology {
        TopologyKind::Star => (shuffle_star(&set.messages, &topology)?, true),
        TopologyKind::FatTree => {
            let map = place_servers(&topology, job.servers())?;
            (shuffle_fat_tree(&set.messages, &topology, &map)?, map.is_full())
        }
    };

    let decoded: Vec<Result<usize>> = outcome
        .delivered
        .par_iter()
        .map(|useful| {
            let j = useful.server;
            let recovered = decode(&job, &placement, &assignment, &store, &set.layout, j, useful)?;
            for (q, digest) in reduce_phase(&job, &assignment, &store, j, &recovered)? {
                if digest != store.reference_output(q) {
                    return Err(Error::DecodeFailure { server: j, reason: format!("reduce output u_{q} differs") });
                }
            }
            Ok(recovered.len())
        })
        .collect();
    let decoded_servers = decoded.iter().filter(|d| d.is_ok()).count();
    let decoded_values: usize = decoded.iter().filter_map(|d| d.as_ref().ok()).sum();
    let decode_detail = match decoded.iter().find_map(|d| d.as_ref().err()) {
        Some(err) => err.to_string(),
        None => format!("{decoded_servers}/{} servers recovered {decoded_values} values", job.servers()),
    };

    let summary = ledger_summary(&outcome.ledger, &topology, &job);
    let link_bounds = check_link_bounds(&outcome.ledger, &topology, &job)?;
    let converse = converse_terms(job.servers(), job.load(), job.reducers())?;
    let optimum = d_star(job.servers(), job.load(), job.reducers())?;
    let l_opt = l_star(job.servers(), job.load(), job.reducers())?;

    let mut checks = vec![
        Check::new(
            "per-link bounds",
            link_bounds.iter().all(|b| b.pass),
            format!("{} link classes over {} links", link_bounds.len(), topology.links().len()),
        ),
        Check::new("flow conservation", true, format!("{} switch emissions audited", outcome.audited)),
        Check::new("delivery", true, "every server received exactly its useful set"),
        Check::new("decodability", decoded_servers == job.servers(), decode_detail),
        Check::new(
            "converse uplink",
            summary.server_uplink >= converse.uplink,
            format!("{} >= {}", ratio_string(&summary.server_uplink), ratio_string(&converse.uplink)),
        ),
        Check::new(
            "converse downlink",
            summary.server_downlink >= converse.downlink,
            format!("{} >= {}", ratio_string(&summary.server_downlink), ratio_string(&converse.downlink)),
        ),
        Check::new(
            "uplink total equals L*",
            summary.server_uplink == converse.uplink,
            ratio_string(&summary.server_uplink),
        ),
        Check::new(
            "downlink total equals s(1-r/K)",
            summary.server_downlink == converse.downlink,
            ratio_string(&summary.server_downlink),
        ),
        Check::new(
            "within optimum plus padding",
            summary.max_link <= &optimum + &summary.max_link_padding,
            format!("padding share {}", ratio_string(&summary.max_link_padding)),
        ),
    ];
    if full_occupancy {
        checks.push(Check::new(
            "optimality excluding padding",
            summary.max_link_info == optimum,
            format!("{} vs {}", ratio_string(&summary.max_link_info), ratio_string(&optimum)),
        ));
        if summary.padding_bits.is_zero() {
            checks.push(Check::new(
                "optimality",
                summary.max_link == optimum,
                format!("{} vs {}", ratio_string(&summary.max_link), ratio_string(&optimum)),
            ));
        }
        if config.topology == TopologyKind::FatTree {
            let max_of = |layer: Layer| {
                summary.layers.iter().find(|l| l.layer == layer).map(|l| l.max_load.clone()).unwrap_or_default()
            };
            let (bottom, middle, top) =
                (max_of(Layer::ServerEdge), max_of(Layer::EdgeAggregation), max_of(Layer::AggregationCore));
            checks.push(Check::new(
                "layer ordering",
                bottom >= middle && middle >= top,
                format!("{} >= {} >= {}", ratio_string(&bottom), ratio_string(&middle), ratio_string(&top)),
            ));
        }
    }
    let pass = checks.iter().all(|c| c.pass);

    let ledger = topology
        .links()
        .iter()
        .map(|l| {
            let pad = to_rational(outcome.ledger.padding(l.id));
            LedgerRow {
                link_id: l.id,
                layer: l.layer.name(),
                lower_node: topology.label(l.lower),
                upper_node: topology.label(l.upper),
                up_bits: outcome.ledger.up_bits(l.id),
                down_bits: outcome.ledger.down_bits(l.id),
                total_bits: outcome.ledger.total_bits(l.id),
                padded_bits: if pad.is_integer() { pad.to_integer().to_string() } else { ratio_string(&pad) },
            }
        })
        .collect();

    Ok(RunRow {
        run_id,
        servers: job.servers(),
        r: job.load(),
        s: job.reducers(),
        files: job.files(),
        functions: job.functions(),
        value_bits: job.value_bits(),
        seed: config.seed,
        topology: config.topology,
        t: arity,
        full_occupancy,
        d_measured_decimal: decimal_string(&summary.max_link, DECIMAL_DIGITS),
        d_measured: summary.max_link.clone(),
        d_excluding_padding: summary.max_link_info.clone(),
        d_star_decimal: decimal_string(&optimum, DECIMAL_DIGITS),
        d_star: optimum,
        l_star: l_opt,
        loads: summary,
        link_bounds,
        checks,
        decoded_servers,
        decoded_values,
        pass,
        wall_time: started.elapsed(),
        ledger,
    })
}

/// Run the single computation load of `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    let [load] = config.loads[..] else {
        return Err(Error::Range(format!("run_experiment takes one computation load, got {}", config.loads.len())));
    };
    Ok(Report { rows: vec![run_single(config, load, 0)?], theory: None })
}

/// One run per computation load plus the theory curve. Runs execute in
/// parallel; rows keep the configured order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Report> {
    if config.loads.is_empty() {
        return Err(Error::Range("a sweep needs at least one computation load".into()));
    }
    let rows = config
        .loads
        .par_iter()
        .enumerate()
        .map(|(run_id, &load)| run_single(config, load, run_id))
        .collect::<Result<Vec<_>>>()?;
    let theory = theory_curve(config.servers, config.reducers)?;
    Ok(Report { rows, theory: Some(theory) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    run_id: usize,
    #[serde(rename = "K")]
    servers: usize,
    r: usize,
    s: usize,
    #[serde(rename = "N")]
    files: usize,
    #[serde(rename = "Q")]
    functions: usize,
    #[serde(rename = "T")]
    value_bits: usize,
    topology: String,
    t: String,
    #[serde(rename = "D_measured")]
    d_measured: String,
    #[serde(rename = "D_star")]
    d_star: String,
    pass: &'a str,
}

pub fn report_csv(report: &Report) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &report.rows {
        writer.serialize(CsvRow {
            run_id: row.run_id,
            servers: row.servers,
            r: row.r,
            s: row.s,
            files: row.files,
            functions: row.functions,
            value_bits: row.value_bits,
            topology: row.topology.to_string(),
            t: row.t.map(|t| t.to_string()).unwrap_or_default(),
            d_measured: ratio_string(&row.d_measured),
            d_star: ratio_string(&row.d_star),
            pass: if row.pass { "PASS" } else { "FAIL" },
        })?;
    }
    if report.rows.is_empty() {
        writer.write_record(["run_id", "K", "r", "s", "N", "Q", "T", "topology", "t", "D_measured", "D_star", "pass"])?;
    }
    into_string(writer)
}

pub fn report_json(report: &Report) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

pub fn theory_csv(theory: &TheoryCurve) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["r", "D_envelope", "D_envelope_decimal", "D_star", "L_star"])?;
    for sample in &theory.envelope {
        let point = sample
            .r
            .strip_suffix(".0")
            .and_then(|whole| whole.parse::<usize>().ok())
            .and_then(|r| theory.points.iter().find(|p| p.load == r));
        let (d, l) = point.map_or((String::new(), String::new()), |p| {
            (ratio_string(&p.max_link), ratio_string(&p.communication))
        });
        writer.write_record([sample.r.clone(), ratio_string(&sample.max_link), sample.max_link_decimal.clone(), d, l])?;
    }
    into_string(writer)
}

pub fn ledger_csv(rows: &[LedgerRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    into_string(writer)
}

fn into_string(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Write the report in `format` to `path`.
pub fn emit(report: &Report, format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => report_csv(report)?,
        Format::Json => report_json(report)?,
    };
    fs::write(path, text)?;
    Ok(())
}

/// Write per-link ledgers: `path` itself for a single run, otherwise one
/// file per run named `<stem>.r<r>.<ext>`.
pub fn emit_ledgers(report: &Report, path: &Path) -> Result<()> {
    if let [row] = &report.rows[..] {
        fs::write(path, ledger_csv(&row.ledger)?)?;
        return Ok(());
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ledger");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    for row in &report.rows {
        let target = path.with_file_name(format!("{stem}.r{}.{ext}", row.r));
        fs::write(target, ledger_csv(&row.ledger)?)?;
    }
    Ok(())
}

/// Plain-text summary, one line per run.
pub fn summary_lines(report: &Report) -> Vec<String> {
    report
        .rows
        .iter()
        .map(|row| {
            let failed: Vec<&str> = row.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            format!(
                "{} K={} r={} s={} {}{} D={} ({}) D*={} {}{}",
                row.run_id,
                row.servers,
                row.r,
                row.s,
                row.topology,
                row.t.map(|t| format!(" t={t}")).unwrap_or_default(),
                ratio_string(&row.d_measured),
                row.d_measured_decimal,
                ratio_string(&row.d_star),
                if row.pass { "PASS" } else { "FAIL" },
                if failed.is_empty() { String::new() } else { format!(" [{}]", failed.join(", ")) },
            )
        })
        .collect()
}
