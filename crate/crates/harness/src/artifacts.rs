//! Output directory bookkeeping and the delimited tables written into it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use netequil::combined::TripTensor;
use netequil::Network;

/// Files written under `--out`, mirrored into `manifest.txt` after every write
/// so an interrupted run still lists what it produced.
pub struct Artifacts {
    dir: PathBuf,
    command: String,
    config_hash: String,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path, command: &str, config_hash: &str) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let a = Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            config_hash: config_hash.into(),
            files: Vec::new(),
        };
        a.write_manifest()?;
        Ok(a)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write(&mut self, name: &str, content: &str) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, content)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.write_manifest()?;
        Ok(path)
    }

    /// Records a file produced by someone else (e.g. a plot backend).
    pub fn record(&mut self, name: &str) -> std::io::Result<()> {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.write_manifest()
    }

    fn write_manifest(&self) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
        for f in &self.files {
            let _ = writeln!(s, "artifact = {f}");
        }
        fs::write(self.dir.join("manifest.txt"), s)
    }
}

/// File-name-safe form of a solver label.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn total_flows(per_mode: &[Vec<f64>]) -> Vec<f64> {
    let mut total = vec![0.0; per_mode.first().map_or(0, Vec::len)];
    for f in per_mode {
        for (t, x) in total.iter_mut().zip(f) {
            *t += x;
        }
    }
    total
}

/// `Σ_e f_e t_e` in vehicle-hours.
pub fn vehicle_hours(flows: &[f64], times: &[f64]) -> f64 {
    flows.iter().zip(times).map(|(f, t)| f * t).sum()
}

/// One row per link; node numbers are 1-based. Values round-trip exactly.
pub fn flow_table(network: &Network, per_mode: &[Vec<f64>], times: &[f64]) -> String {
    let total = total_flows(per_mode);
    let mut s = String::from("link,tail,head,capacity,free_flow_time,time,flow");
    if per_mode.len() > 1 {
        for m in 0..per_mode.len() {
            let _ = write!(s, ",flow_mode{}", m + 1);
        }
    }
    s.push('\n');
    for (e, link) in network.links().iter().enumerate() {
        let _ = write!(
            s,
            "{},{},{},{:e},{:e},{:e},{:e}",
            e + 1,
            link.tail + 1,
            link.head + 1,
            link.capacity,
            link.free_flow_time,
            times[e],
            total[e]
        );
        if per_mode.len() > 1 {
            for f in per_mode {
                let _ = write!(s, ",{:e}", f[e]);
            }
        }
        s.push('\n');
    }
    s
}

/// Reads `(flow, time)` pairs back from a flow table.
pub fn read_flow_table(text: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty flow table")?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or(format!("missing column {name}"))
    };
    let (fi, ti) = (col("flow")?, col("time")?);
    lines
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            let get = |i: usize| {
                cells
                    .get(i)
                    .and_then(|c| c.parse::<f64>().ok())
                    .ok_or(format!("bad row {l:?}"))
            };
            Ok((get(fi)?, get(ti)?))
        })
        .collect()
}

/// Nonzero trips per (purpose, agent type, mode, origin, destination), 1-based.
pub fn trip_table(trips: &TripTensor) -> String {
    let mut s = String::from("purpose,agent,mode,origin,destination,trips\n");
    let z = trips.zones;
    for r in 0..trips.purposes {
        for a in 0..trips.agents {
            for m in 0..trips.modes {
                for (k, d) in trips.slice(r, a, m).iter().enumerate() {
                    if *d > 0.0 {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{:e}",
                            r + 1,
                            a + 1,
                            m + 1,
                            k / z + 1,
                            k % z + 1,
                            d
                        );
                    }
                }
            }
        }
    }
    s
}

/// Dense `rows × cols` matrix, one row per line.
pub fn matrix_table(rows: usize, cols: usize, values: &[f64]) -> String {
    let mut s = String::new();
    for i in 0..rows {
        let line: Vec<String> = values[i * cols..(i + 1) * cols]
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Default)]
pub struct SummaryRow {
    pub solver: String,
    pub status: String,
    pub iterations: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub violation: f64,
    pub vehicle_hours: f64,
    pub elapsed_s: f64,
    pub message: String,
}

impl SummaryRow {
    pub fn failed(solver: &str, message: String) -> Self {
        Self {
            solver: solver.into(),
            status: "failed".into(),
            primal: f64::NAN,
            dual: f64::NAN,
            gap: f64::NAN,
            violation: f64::NAN,
            vehicle_hours: f64::NAN,
            message,
            ..Default::default()
        }
    }
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = String::from("solver,status,iterations,primal,dual,gap,relative_gap,violation,vehicle_hours,elapsed_s,message\n");
    for r in rows {
        let rel = r.gap / r.primal.abs();
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:.6},{}",
            r.solver,
            r.status,
            r.iterations,
            r.primal,
            r.dual,
            r.gap,
            rel,
            r.violation,
            r.vehicle_hours,
            r.elapsed_s,
            r.message.replace([',', '\n'], ";")
        );
    }
    s
}

/// Histogram over fixed log-spaced bins, with an underflow bin below the
/// first edge and an overflow bin above the last.
#[derive(Debug, Clone, PartialEq)]
pub struct LogHistogram {
    pub edges: Vec<f64>,
    /// `edges.len() + 1` counts: underflow, the bins, overflow.
    pub counts: Vec<usize>,
}

impl LogHistogram {
    /// Edges `10^(lo + k/per_decade)` for `k = 0..=(hi−lo)·per_decade`.
    pub fn new(lo_exp: i32, hi_exp: i32, per_decade: usize) -> Self {
        let n = (hi_exp - lo_exp) as usize * per_decade;
        let edges = (0..=n)
            .map(|k| 10f64.powf(f64::from(lo_exp) + k as f64 / per_decade as f64))
            .collect();
        Self {
            edges,
            counts: vec![0; n + 2],
        }
    }

    pub fn add(&mut self, x: f64) {
        let bin = self.edges.partition_point(|e| *e <= x);
        self.counts[bin] += 1;
    }

    pub fn render(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {title}");
        let edges: Vec<String> = self.edges.iter().map(|e| format!("{e:e}")).collect();
        let _ = writeln!(s, "# log-spaced bin edges = {}", edges.join(" "));
        s.push_str("lower,upper,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let lo = if k == 0 { 0.0 } else { self.edges[k - 1] };
            let hi = self.edges.get(k).copied().unwrap_or(f64::INFINITY);
            let _ = writeln!(s, "{lo:e},{hi:e},{c}");
        }
        s
    }
}

/// Flow/capacity over capacitated links, 1e-3 to 10 with four bins per decade.
pub fn flow_capacity_histogram(network: &Network, flows: &[f64]) -> LogHistogram {
    let mut h = LogHistogram::new(-3, 1, 4);
    for (link, f) in network.links().iter().zip(flows) {
        if !link.is_uncapacitated() {
            h.add(f / link.capacity);
        }
    }
    h
}

/// Time/free-flow time over links with positive free-flow time, 1 to 10
/// with ten bins per decade.
pub fn time_ratio_histogram(network: &Network, times: &[f64]) -> LogHistogram {
    let mut h = LogHistogram::new(0, 1, 10);
    for (link, t) in network.links().iter().zip(times) {
        if link.free_flow_time > 0.0 {
            h.add(t / link.free_flow_time);
        }
    }
    h
}
