//! Experiment plumbing: single runs, parameter sweeps written as CSV, and
//! the per-figure tables derived from a sweep.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::metrics::{mean, sample_sd, MetricsReport};
use crate::sim::{Overrides, Protocol, SimError, Simulation};
use crate::trust::Strategy;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("the sweep grid is empty: every axis needs at least one value")]
    EmptyGrid,
}

pub const METRIC_COLUMNS: [&str; 9] = [
    "pdr",
    "overhead",
    "overhead_conv",
    "avg_delay",
    "throughput",
    "data_sent",
    "data_delivered",
    "control_transmitted",
    "control_received",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One finished run: the scenario it ran plus its metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub config: ScenarioConfig,
    pub report: MetricsReport,
}

impl ResultRow {
    pub fn header() -> Vec<&'static str> {
        let mut h: Vec<_> = ScenarioConfig::default()
            .echo()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        h.extend(METRIC_COLUMNS);
        h
    }

    pub fn metric_values(&self) -> Vec<String> {
        let r = &self.report;
        vec![
            opt(r.pdr),
            opt(r.overhead),
            opt(r.overhead_conv),
            opt(r.avg_delay),
            r.throughput.to_string(),
            r.data_sent.to_string(),
            r.data_delivered.to_string(),
            r.control_transmitted.to_string(),
            r.control_received.to_string(),
        ]
    }

    pub fn values(&self) -> Vec<String> {
        let mut v: Vec<_> = self.config.echo().into_iter().map(|(_, v)| v).collect();
        v.extend(self.metric_values());
        v
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ResultRow, HarnessError> {
    let sim = cfg.to_sim_config()?;
    let out = Simulation::new(sim, Overrides::default())?.run()?;
    Ok(ResultRow {
        config: cfg.clone(),
        report: out.report,
    })
}

/// Runs every scenario in parallel; results keep the input order.
pub fn run_all(points: &[ScenarioConfig]) -> Result<Vec<ResultRow>, HarnessError> {
    for p in points {
        p.validate()?;
    }
    points.par_iter().map(run_scenario).collect()
}

pub fn write_rows<W: Write>(w: W, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ResultRow::header())?;
    for r in rows {
        out.write_record(r.values())?;
    }
    out.flush()?;
    Ok(())
}

/// Axes of a sweep. Seeds vary fastest, then fraction, range, nodes,
/// strategy and protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub protocols: Vec<Protocol>,
    pub strategies: Vec<Strategy>,
    pub nodes: Vec<usize>,
    pub ranges: Vec<f64>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Grid {
    /// The one-point grid of `base`.
    pub fn single(base: &ScenarioConfig) -> Self {
        Grid {
            protocols: vec![base.scenario.protocol],
            strategies: vec![base.scenario.strategy],
            nodes: vec![base.scenario.nodes],
            ranges: vec![base.mobility.range],
            fractions: vec![base.adversary.fraction],
            seeds: vec![base.scenario.seed],
        }
    }

    pub fn len(&self) -> usize {
        self.protocols.len()
            * self.strategies.len()
            * self.nodes.len()
            * self.ranges.len()
            * self.fractions.len()
            * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self, base: &ScenarioConfig) -> Vec<ScenarioConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &protocol in &self.protocols {
            for &strategy in &self.strategies {
                for &nodes in &self.nodes {
                    for &range in &self.ranges {
                        for &fraction in &self.fractions {
                            for &seed in &self.seeds {
                                let mut c = base.clone();
                                c.scenario.protocol = protocol;
                                c.scenario.strategy = strategy;
                                c.scenario.nodes = nodes;
                                c.mobility.range = range;
                                c.adversary.fraction = fraction;
                                c.scenario.seed = seed;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Mean and sample standard deviation over the runs that produced a value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stat {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let xs: Vec<f64> = values.into_iter().flatten().collect();
        Stat {
            mean: mean(&xs),
            sd: sample_sd(&xs),
        }
    }
}

/// Per-grid-point aggregate over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub protocol: Protocol,
    pub strategy: Strategy,
    pub nodes: usize,
    pub range: f64,
    pub fraction: f64,
    pub runs: usize,
    pub pdr: Stat,
    pub overhead: Stat,
    pub overhead_conv: Stat,
    pub avg_delay: Stat,
    pub throughput: Stat,
}

pub const SUMMARY_COLUMNS: [&str; 16] = [
    "protocol",
    "strategy",
    "nodes",
    "range",
    "adversary_fraction",
    "runs",
    "pdr_mean",
    "pdr_sd",
    "overhead_mean",
    "overhead_sd",
    "overhead_conv_mean",
    "overhead_conv_sd",
    "avg_delay_mean",
    "avg_delay_sd",
    "throughput_mean",
    "throughput_sd",
];

impl SummaryRow {
    fn values(&self) -> Vec<String> {
        let mut v = vec![
            self.protocol.to_string(),
            self.strategy.to_string(),
            self.nodes.to_string(),
            self.range.to_string(),
            self.fraction.to_string(),
            self.runs.to_string(),
        ];
        for s in [
            self.pdr,
            self.overhead,
            self.overhead_conv,
            self.avg_delay,
            self.throughput,
        ] {
            v.push(opt(s.mean));
            v.push(opt(s.sd));
        }
        v
    }
}

/// Groups rows sharing every sweep axis except the seed, in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        let s = &r.config.scenario;
        let key = format!(
            "{}|{}|{}|{}|{}",
            s.protocol, s.strategy, s.nodes, r.config.mobility.range, r.config.adversary.fraction
        );
        match order.iter_mut().find(|(k, _)| *k == key) {
            Some((_, group)) => group.push(r),
            None => order.push((key, vec![r])),
        }
    }
    order
        .into_iter()
        .map(|(_, g)| {
            let c = &g[0].config;
            let stat =
                |f: fn(&MetricsReport) -> Option<f64>| Stat::of(g.iter().map(|r| f(&r.report)));
            SummaryRow {
                protocol: c.scenario.protocol,
                strategy: c.scenario.strategy,
                nodes: c.scenario.nodes,
                range: c.mobility.range,
                fraction: c.adversary.fraction,
                runs: g.len(),
                pdr: stat(|r| r.pdr),
                overhead: stat(|r| r.overhead),
                overhead_conv: stat(|r| r.overhead_conv),
                avg_delay: stat(|r| r.avg_delay),
                throughput: stat(|r| Some(r.throughput)),
            }
        })
        .collect()
}

/// Appends the summary as `#`-prefixed lines so CSV readers skip it.
pub fn write_summary<W: Write>(mut w: W, summary: &[SummaryRow]) -> io::Result<()> {
    writeln!(w, "# summary")?;
    writeln!(w, "# {}", SUMMARY_COLUMNS.join(","))?;
    for s in summary {
        writeln!(w, "# {}", s.values().join(","))?;
    }
    Ok(())
}

/// Runs the grid and writes one row per point followed by the summary.
/// The output file is created before any run starts.
pub fn sweep(
    base: &ScenarioConfig,
    grid: &Grid,
    out: &Path,
) -> Result<Vec<SummaryRow>, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let points = grid.points(base);
    for p in &points {
        p.validate()?;
    }
    let unwritable = |source| HarnessError::Unwritable {
        path: out.display().to_string(),
        source,
    };
    let mut file = io::BufWriter::new(File::create(out).map_err(unwritable)?);
    log::info!("sweep: {} runs -> {}", points.len(), out.display());
    let rows = run_all(&points)?;
    write_rows(&mut file, &rows)?;
    let summary = summarize(&rows);
    write_summary(&mut file, &summary).map_err(unwritable)?;
    file.flush().map_err(unwritable)?;
    Ok(summary)
}

/// Summary lines of a sweep file, parsed back.
pub fn read_summary(text: &str) -> Result<Vec<BTreeMap<String, String>>, HarnessError> {
    let mut lines = text
        .lines()
        .skip_while(|l| l.trim() != "# summary")
        .skip(1)
        .filter_map(|l| l.strip_prefix("# "));
    let header: Vec<&str> = match lines.next() {
        Some(h) => h.split(',').collect(),
        None => return Err(HarnessError::Schema("no summary block".into())),
    };
    Ok(lines
        .map(|l| {
            header
                .iter()
                .map(|h| h.to_string())
                .zip(l.split(',').map(str::to_string))
                .collect()
        })
        .collect())
}

/// One figure table: a metric against node count for one strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Figure {
    pub file: &'static str,
    pub title: &'static str,
    pub strategy: Strategy,
    pub metric: &'static str,
}

pub const FIGURES: [Figure; 4] = [
    Figure {
        file: "fig1_pdr_with_malicious.tsv",
        title: "packet delivery ratio vs nodes, misbehaving nodes present (strategy none)",
        strategy: Strategy::None,
        metric: "pdr",
    },
    Figure {
        file: "fig2_pdr_malicious_eliminated.tsv",
        title: "packet delivery ratio vs nodes, misbehaving nodes eliminated (strategy eliminate)",
        strategy: Strategy::Eliminate,
        metric: "pdr",
    },
    Figure {
        file: "fig3_overhead_with_malicious.tsv",
        title: "routing overhead vs nodes, misbehaving nodes present (strategy none)",
        strategy: Strategy::None,
        metric: "overhead",
    },
    Figure {
        file: "fig4_overhead_malicious_eliminated.tsv",
        title: "routing overhead vs nodes, misbehaving nodes eliminated (strategy eliminate)",
        strategy: Strategy::Eliminate,
        metric: "overhead",
    },
];

const REQUIRED: [&str; 7] = [
    "protocol",
    "strategy",
    "nodes",
    "range",
    "adversary_fraction",
    "pdr",
    "overhead",
];

#[derive(Clone, Debug, PartialEq)]
pub struct FiguresOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

struct SweepRecord {
    protocol: Protocol,
    strategy: Strategy,
    nodes: usize,
    range: f64,
    fraction: f64,
    pdr: Option<f64>,
    overhead: Option<f64>,
}

fn read_records(csv_path: &Path) -> Result<Vec<SweepRecord>, HarnessError> {
    let file = File::open(csv_path).map_err(|source| HarnessError::Unreadable {
        path: csv_path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing: Vec<&str> = REQUIRED
        .iter()
        .copied()
        .filter(|c| col(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::Schema(format!(
            "{} lacks required columns: {}",
            csv_path.display(),
            missing.join(", ")
        )));
    }
    let idx: Vec<usize> = REQUIRED
        .iter()
        .map(|c| col(c).unwrap_or_default())
        .collect();
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(idx[i]).unwrap_or("");
        let bad =
            |what: &str| HarnessError::Schema(format!("row {}: bad {what} `{}`", line + 1, get(0)));
        let num = |i: usize| -> Result<Option<f64>, HarnessError> {
            match get(i) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(REQUIRED[i])),
            }
        };
        out.push(SweepRecord {
            protocol: get(0).parse().map_err(|_| bad("protocol"))?,
            strategy: get(1).parse().map_err(|_| bad("strategy"))?,
            nodes: get(2).parse().map_err(|_| bad("nodes"))?,
            range: num(3)?.ok_or_else(|| bad("range"))?,
            fraction: num(4)?.ok_or_else(|| bad("adversary_fraction"))?,
            pdr: num(5)?,
            overhead: num(6)?,
        });
    }
    Ok(out)
}

/// Writes the four figure tables for a sweep CSV into `out_dir`.
///
/// Rows come from the sweep's (range, fraction) combination with misbehaving
/// nodes present, preferring the default scenario when the sweep holds
/// several.
pub fn figures(csv_path: &Path, out_dir: &Path) -> Result<FiguresOutput, HarnessError> {
    let records = read_records(csv_path)?;
    let mut warnings = Vec::new();

    let mut combos: Vec<(f64, f64)> = Vec::new();
    for r in records.iter().filter(|r| r.fraction > 0.0) {
        if !combos.contains(&(r.range, r.fraction)) {
            combos.push((r.range, r.fraction));
        }
    }
    let defaults = ScenarioConfig::default();
    let preferred = (defaults.mobility.range, defaults.adversary.fraction);
    let (range, fraction) =
        match combos.as_slice() {
            [] => return Err(HarnessError::Schema(
                "no rows with adversary_fraction > 0; figures compare runs with misbehaving nodes"
                    .into(),
            )),
            [only] => *only,
            _ => {
                let pick = if combos.contains(&preferred) {
                    preferred
                } else {
                    combos[0]
                };
                warnings.push(format!(
                    "sweep holds {} (range, fraction) combinations; using range={} fraction={}",
                    combos.len(),
                    pick.0,
                    pick.1
                ));
                pick
            }
        };
    let chosen: Vec<&SweepRecord> = records
        .iter()
        .filter(|r| r.range == range && r.fraction == fraction)
        .collect();

    for p in [Protocol::Aodv, Protocol::Dsr] {
        if !chosen.iter().any(|r| r.protocol == p) {
            warnings.push(format!("no {p} rows; {p} series omitted"));
        }
    }

    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Unwritable {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut files = Vec::new();
    for fig in FIGURES {
        let mut groups: BTreeMap<(&str, usize), Vec<Option<f64>>> = BTreeMap::new();
        for r in chosen.iter().filter(|r| r.strategy == fig.strategy) {
            let v = if fig.metric == "pdr" {
                r.pdr
            } else {
                r.overhead
            };
            groups
                .entry((r.protocol.as_str(), r.nodes))
                .or_default()
                .push(v);
        }
        if groups.is_empty() {
            warnings.push(format!(
                "no {} rows; {} has no data",
                fig.strategy, fig.file
            ));
        }
        let path = out_dir.join(fig.file);
        let unwritable = |source| HarnessError::Unwritable {
            path: path.display().to_string(),
            source,
        };
        let mut w = io::BufWriter::new(File::create(&path).map_err(unwritable)?);
        let body = (|| -> io::Result<()> {
            writeln!(w, "# {}", fig.title)?;
            writeln!(
                w,
                "# assumptions: adversary_fraction={fraction} range={range}; one series per protocol; \
                 mean and sample sd over seeds"
            )?;
            writeln!(w, "protocol\tnodes\truns\t{0}_mean\t{0}_sd", fig.metric)?;
            for ((protocol, nodes), vs) in &groups {
                let s = Stat::of(vs.iter().copied());
                writeln!(
                    w,
                    "{protocol}\t{nodes}\t{}\t{}\t{}",
                    vs.len(),
                    opt(s.mean),
                    opt(s.sd)
                )?;
            }
            w.flush()
        })();
        body.map_err(unwritable)?;
        files.push(path);
    }
    for msg in &warnings {
        log::warn!("{msg}");
    }
    Ok(FiguresOutput { files, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.scenario.nodes = 10;
        c.scenario.duration = 20.0;
        c
    }

    #[test]
    fn grid_order_has_seed_fastest() {
        let g = Grid {
            protocols: vec![Protocol::Aodv, Protocol::Dsr],
            strategies: vec![Strategy::None],
            nodes: vec![10, 20],
            ranges: vec![150.0],
            fractions: vec![0.2],
            seeds: vec![1, 2, 3],
        };
        let pts = g.points(&quick());
        assert_eq!(pts.len(), 12);
        assert_eq!(pts[0].scenario.seed, 1);
        assert_eq!(pts[1].scenario.seed, 2);
        assert_eq!(pts[3].scenario.nodes, 20);
        assert_eq!(pts[6].scenario.protocol, Protocol::Dsr);
    }

    #[test]
    fn header_and_values_line_up() {
        let row = run_scenario(&quick()).unwrap();
        assert_eq!(ResultRow::header().len(), row.values().len());
        assert_eq!(
            &ResultRow::header()[ResultRow::header().len() - 9..],
            &METRIC_COLUMNS
        );
    }

    #[test]
    fn stat_skips_missing_values() {
        let s = Stat::of([Some(1.0), None, Some(3.0)]);
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.sd, Some(2f64.sqrt()));
        assert_eq!(Stat::of([None]), Stat::default());
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut g = Grid::single(&quick());
        g.seeds.clear();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            sweep(&quick(), &g, &dir.path().join("x.csv")),
            Err(HarnessError::EmptyGrid)
        ));
    }
}
