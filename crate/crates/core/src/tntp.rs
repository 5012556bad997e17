//! Readers and writers for the TNTP text conventions used by the public
//! transportation-networks collection, plus the delimited turn-table format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::{BprParams, Link, LinkAttrs, LinkKind, Network, Turn, TurnTable};
use crate::od::OdMatrix;

#[derive(Debug, Clone, Copy)]
pub struct TntpOptions {
    /// Keep the per-link `B` / `power` columns; otherwise model defaults apply.
    pub use_file_bpr: bool,
}

impl Default for TntpOptions {
    fn default() -> Self {
        Self { use_file_bpr: true }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Splits off the `<KEY> value` header. Returns the metadata and the
/// (1-based line number, content) pairs following `<END OF METADATA>`.
fn split_metadata(
    text: &str,
    require_end: bool,
) -> Result<(BTreeMap<String, String>, Vec<(usize, &str)>)> {
    let mut meta = BTreeMap::new();
    let mut body = Vec::new();
    let mut in_header = true;
    let mut saw_end = false;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if in_header && line.starts_with('<') {
            let close = line
                .find('>')
                .ok_or_else(|| parse_err(lineno, "unterminated metadata tag"))?;
            let key = line[1..close].trim().to_ascii_uppercase();
            if key == "END OF METADATA" {
                in_header = false;
                saw_end = true;
                continue;
            }
            meta.insert(key, line[close + 1..].trim().to_string());
            continue;
        }
        if in_header && require_end {
            return Err(parse_err(
                lineno,
                "expected metadata tag or <END OF METADATA>",
            ));
        }
        in_header = false;
        body.push((lineno, line));
    }
    if require_end && !saw_end {
        return Err(parse_err(
            text.lines().count().max(1),
            "missing <END OF METADATA>",
        ));
    }
    Ok((meta, body))
}

fn meta_usize(meta: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    let raw = meta
        .get(key)
        .ok_or_else(|| parse_err(0, format!("missing <{key}> in header")))?;
    raw.parse::<f64>()
        .ok()
        .filter(|v| *v >= 0.0 && v.fract() == 0.0)
        .map(|v| v as usize)
        .ok_or_else(|| parse_err(0, format!("<{key}> is not a nonnegative integer: {raw:?}")))
}

/// Parses a TNTP network file.
pub fn parse_network(text: &str, opts: TntpOptions) -> Result<Network> {
    let (meta, body) = split_metadata(text, true)?;
    let num_nodes = meta_usize(&meta, "NUMBER OF NODES")?;
    let num_links = meta_usize(&meta, "NUMBER OF LINKS")?;
    let num_zones = meta_usize(&meta, "NUMBER OF ZONES")?;
    let first_thru = meta_usize(&meta, "FIRST THRU NODE")?;
    if num_zones > num_nodes {
        return Err(Error::Structural(format!(
            "{num_zones} zones exceed {num_nodes} nodes"
        )));
    }

    let mut links = Vec::with_capacity(num_links);
    for &(lineno, line) in &body {
        let line = line.trim_end_matches(';').trim();
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 7 {
            return Err(parse_err(
                lineno,
                format!("link row has {} fields, expected at least 7", fields.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            match fields.get(k) {
                None => Ok(0.0),
                Some(s) => s
                    .parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("bad number {s:?}"))),
            }
        };
        let node = |k: usize| -> Result<usize> {
            let v = num(k)?;
            if v < 1.0 || v.fract() != 0.0 {
                return Err(parse_err(lineno, format!("bad node id {}", fields[k])));
            }
            let v = v as usize;
            if v > num_nodes {
                return Err(Error::Structural(format!(
                    "line {lineno}: node {v} exceeds the declared {num_nodes} nodes"
                )));
            }
            Ok(v - 1)
        };
        let (tail, head) = (node(0)?, node(1)?);
        let capacity = num(2)?;
        let bpr = if opts.use_file_bpr {
            Some(
                BprParams::from_tntp(num(5)?, num(6)?)
                    .map_err(|e| parse_err(lineno, e.to_string()))?,
            )
        } else {
            None
        };
        links.push(Link {
            tail,
            head,
            free_flow_time: num(4)?,
            capacity,
            bpr,
            mode_costs: vec![Some(0.0)],
            kind: LinkKind::Road,
            attrs: LinkAttrs {
                length: num(3)?,
                speed: num(7)?,
                toll: num(8)?,
                link_type: num(9)? as i64,
            },
        });
    }
    if links.len() != num_links {
        return Err(parse_err(
            body.last().map_or(0, |b| b.0),
            format!(
                "header declares {num_links} links but {} rows were read",
                links.len()
            ),
        ));
    }
    let through = (0..num_nodes).map(|v| v + 1 >= first_thru.max(1)).collect();
    Network::new(num_nodes, links, (0..num_zones).collect(), Some(through))
}

/// Parses a TNTP trips file into a `zones × zones` matrix. The metadata
/// header is optional; without it the matrix is sized by `zones`.
pub fn parse_trips(text: &str, zones: usize) -> Result<OdMatrix> {
    let (meta, body) = split_metadata(text, false)?;
    if let Some(z) = meta.get("NUMBER OF ZONES") {
        let declared = meta_usize(&meta, "NUMBER OF ZONES")?;
        if declared != zones {
            return Err(Error::Structural(format!(
                "trips file declares {z} zones, network has {zones}"
            )));
        }
    }
    let mut od = OdMatrix::zeros(zones);
    let mut origin: Option<usize> = None;
    for &(lineno, line) in &body {
        if let Some(rest) = line.strip_prefix("Origin") {
            let id: usize = rest
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad origin {rest:?}")))?;
            if id == 0 || id > zones {
                return Err(Error::Structural(format!(
                    "line {lineno}: origin {id} outside 1..={zones}"
                )));
            }
            origin = Some(id - 1);
            continue;
        }
        let i = origin
            .ok_or_else(|| parse_err(lineno, "destination entries before any Origin line"))?;
        for entry in line.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (dest, amount) = entry.split_once(':').ok_or_else(|| {
                parse_err(lineno, format!("expected 'dest : amount', got {entry:?}"))
            })?;
            let j: usize = dest
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad destination {dest:?}")))?;
            let v: f64 = amount
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad amount {amount:?}")))?;
            if j == 0 || j > zones {
                return Err(Error::Structural(format!(
                    "line {lineno}: destination {j} outside 1..={zones}"
                )));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!(
                    "line {lineno}: negative or non-finite demand {v}"
                )));
            }
            od.set(i, j - 1, od.get(i, j - 1) + v);
        }
    }
    Ok(od)
}

/// Parses a network file and its trips file together.
pub fn parse_tntp(
    net_text: &str,
    trips_text: &str,
    opts: TntpOptions,
) -> Result<(Network, OdMatrix)> {
    let network = parse_network(net_text, opts)?;
    let od = parse_trips(trips_text, network.num_zones())?;
    Ok((network, od))
}

/// Serializes a single-mode network whose zones are the leading nodes.
pub fn write_network(network: &Network) -> Result<String> {
    let nz = network.num_zones();
    if network.zones().iter().enumerate().any(|(z, &v)| z != v) {
        return Err(Error::Validation(
            "TNTP requires zones to be nodes 1..=zones".into(),
        ));
    }
    if network.num_modes() != 1 {
        return Err(Error::Validation(
            "TNTP networks carry a single mode".into(),
        ));
    }
    let flags = network.through_flags();
    let leading = flags.iter().take_while(|t| !**t).count();
    if flags[leading..].iter().any(|t| !*t) {
        return Err(Error::Validation(
            "non-through nodes must be the leading nodes".into(),
        ));
    }
    let mut out = String::new();
    let _ = writeln!(out, "<NUMBER OF ZONES> {nz}");
    let _ = writeln!(out, "<NUMBER OF NODES> {}", network.num_nodes());
    let _ = writeln!(out, "<FIRST THRU NODE> {}", leading + 1);
    let _ = writeln!(out, "<NUMBER OF LINKS> {}", network.num_links());
    let _ = writeln!(out, "<END OF METADATA>\n");
    let _ = writeln!(out, "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;");
    for l in network.links() {
        let (b, power) = l.bpr.map_or((0.15, 4.0), |p| (p.rho, 1.0 / p.mu));
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t;",
            l.tail + 1,
            l.head + 1,
            l.capacity,
            l.attrs.length,
            l.free_flow_time,
            b,
            power,
            l.attrs.speed,
            l.attrs.toll,
            l.attrs.link_type
        );
    }
    Ok(out)
}

pub fn write_trips(od: &OdMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<NUMBER OF ZONES> {}", od.zones());
    let _ = writeln!(out, "<TOTAL OD FLOW> {}", od.total());
    let _ = writeln!(out, "<END OF METADATA>\n");
    for i in 0..od.zones() {
        let _ = writeln!(out, "\nOrigin {}", i + 1);
        for (j, v) in od.row(i).iter().enumerate() {
            if *v != 0.0 {
                let _ = write!(out, "{:>5} : {};", j + 1, v);
            }
        }
        out.push('\n');
    }
    out
}

/// Reads `node, from_link, to_link, penalty_hours` rows (1-based ids,
/// comma/tab/space separated, `#` comments, optional header row).
pub fn parse_turn_table(text: &str) -> Result<TurnTable> {
    let mut turns = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if turns.is_empty() && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 4 {
            return Err(parse_err(
                lineno,
                format!("turn row needs 4 fields, got {}", fields.len()),
            ));
        }
        let id = |k: usize| -> Result<usize> {
            match fields[k].parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(parse_err(lineno, format!("bad id {:?}", fields[k]))),
            }
        };
        let penalty: f64 = fields[3]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad penalty {:?}", fields[3])))?;
        turns.push(Turn {
            node: id(0)?,
            from_link: id(1)?,
            to_link: id(2)?,
            penalty,
        });
    }
    Ok(TurnTable { turns })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY_NET: &str = "<NUMBER OF ZONES> 2\n<NUMBER OF NODES> 2\n<FIRST THRU NODE> 1\n<NUMBER OF LINKS> 1\n<END OF METADATA>\n\n~ init term cap len fft b power speed toll type ;\n\t1\t2\t100\t1\t1\t0.15\t4\t0\t0\t1\t;\n";

    #[test]
    fn minimal_network_reads_back() {
        let net = parse_network(TINY_NET, TntpOptions::default()).unwrap();
        assert_eq!(net.num_links(), 1);
        assert_eq!(net.num_nodes(), 2);
        assert_eq!(net.num_zones(), 2);
        assert_eq!(net.link(0).free_flow_time, 1.0);
        assert_eq!(net.link(0).capacity, 100.0);
        assert_eq!(
            net.link(0).bpr,
            Some(BprParams {
                rho: 0.15,
                mu: 0.25
            })
        );
    }

    #[test]
    fn trips_read_back() {
        let od = parse_trips("Origin 1\n 2 : 5.0;\n", 2).unwrap();
        assert_eq!(od.as_slice(), &[0.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn malformed_header_reports_line() {
        let text = "<NUMBER OF ZONES> 2\nbogus line\n";
        match parse_network(text, TntpOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text = "<NUMBER OF ZONES> x\n<NUMBER OF NODES> 2\n<FIRST THRU NODE> 1\n<NUMBER OF LINKS> 0\n<END OF METADATA>\n";
        assert!(matches!(
            parse_network(text, TntpOptions::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn node_beyond_count_is_structural() {
        let text = TINY_NET.replace("\t1\t2\t100", "\t1\t3\t100");
        assert!(matches!(
            parse_network(&text, TntpOptions::default()),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn negative_demand_is_validation_error() {
        assert!(matches!(
            parse_trips("Origin 1\n 2 : -1.0;\n", 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn link_count_mismatch_is_parse_error() {
        let text = TINY_NET.replace("<NUMBER OF LINKS> 1", "<NUMBER OF LINKS> 2");
        assert!(matches!(
            parse_network(&text, TntpOptions::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn turn_table_rows() {
        let t =
            parse_turn_table("node,from,to,penalty\n2, 1, 3, 0.01 # left\n2\t1\t4\t0\n").unwrap();
        assert_eq!(t.turns.len(), 2);
        assert_eq!(
            t.turns[0],
            Turn {
                node: 1,
                from_link: 0,
                to_link: 2,
                penalty: 0.01
            }
        );
    }

    #[test]
    fn first_thru_node_marks_zones() {
        let text = TINY_NET.replace("<FIRST THRU NODE> 1", "<FIRST THRU NODE> 2");
        let net = parse_network(&text, TntpOptions::default()).unwrap();
        assert!(!net.is_through(0));
        assert!(net.is_through(1));
    }
}
