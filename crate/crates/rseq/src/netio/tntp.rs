//! Readers and writers for the TNTP network and trip formats.
//!
//! The dialect accepted here is the common one: angle-bracket metadata tags,
//! `~` comment lines, link rows terminated by `;`, and trip files organized
//! as `Origin n` blocks with `dest : flow;` entries. Parse errors carry the
//! file path and 1-based line number.

use std::fs;
use std::path::Path;

use log::warn;

use super::{Link, NetioError, Network, NodeId, TripTable};

fn perr(path: &Path, line: usize, msg: impl Into<String>) -> NetioError {
    NetioError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

struct Metadata {
    zones: Option<u32>,
    nodes: Option<u32>,
    first_thru: Option<u32>,
    links: Option<u32>,
    total_flow: Option<f64>,
    end_line: usize,
}

fn parse_metadata(path: &Path, lines: &[&str]) -> Result<Metadata, NetioError> {
    let mut md = Metadata {
        zones: None,
        nodes: None,
        first_thru: None,
        links: None,
        total_flow: None,
        end_line: 0,
    };
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if !line.starts_with('<') {
            // Data began without an explicit end tag.
            md.end_line = i;
            return Ok(md);
        }
        let close = line
            .find('>')
            .ok_or_else(|| perr(path, i + 1, "unterminated metadata tag"))?;
        let tag = line[1..close].trim().to_ascii_uppercase();
        let value = line[close + 1..].trim();
        match tag.as_str() {
            "END OF METADATA" => {
                md.end_line = i + 1;
                return Ok(md);
            }
            "NUMBER OF ZONES" => md.zones = Some(parse_u32(path, i + 1, value)?),
            "NUMBER OF NODES" => md.nodes = Some(parse_u32(path, i + 1, value)?),
            "FIRST THRU NODE" => md.first_thru = Some(parse_u32(path, i + 1, value)?),
            "NUMBER OF LINKS" => md.links = Some(parse_u32(path, i + 1, value)?),
            "TOTAL OD FLOW" => md.total_flow = Some(parse_f64(path, i + 1, value)?),
            _ => {} // unknown tags are permitted and ignored
        }
    }
    md.end_line = lines.len();
    Ok(md)
}

fn parse_u32(path: &Path, line: usize, s: &str) -> Result<u32, NetioError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| *v >= 0.0 && v.fract() == 0.0)
        .map(|v| v as u32)
        .ok_or_else(|| perr(path, line, format!("expected non-negative integer, got {s:?}")))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64, NetioError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| perr(path, line, format!("expected number, got {s:?}")))
}

/// Reads a TNTP network file. An empty link section is accepted (the network
/// then has nodes but no links); a missing node count is an error.
pub fn parse_network(path: &Path) -> Result<Network, NetioError> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let md = parse_metadata(path, &lines)?;
    let nodes = md
        .nodes
        .ok_or_else(|| perr(path, md.end_line, "missing <NUMBER OF NODES>"))?;
    let zones = md.zones.unwrap_or(nodes);
    let first_thru = md.first_thru.unwrap_or(1);

    let mut links = Vec::new();
    for (i, raw) in lines.iter().enumerate().skip(md.end_line) {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') || line.starts_with('<') {
            continue;
        }
        let row = line.trim_end_matches(';').trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() < 10 {
            return Err(perr(
                path,
                i + 1,
                format!("link row needs 10 fields, found {}", fields.len()),
            ));
        }
        let num = |k: usize| -> Result<f64, NetioError> { parse_f64(path, i + 1, fields[k]) };
        let link = Link {
            from: NodeId(parse_u32(path, i + 1, fields[0])?),
            to: NodeId(parse_u32(path, i + 1, fields[1])?),
            capacity: num(2)?,
            length: num(3)?,
            fft: num(4)?,
            b: num(5)?,
            power: num(6)?,
            speed: num(7)?,
            toll: num(8)?,
            link_type: num(9)? as i32,
        };
        links.push(link);
    }
    if let Some(declared) = md.links {
        if declared as usize != links.len() {
            return Err(NetioError::Validation(format!(
                "{}: metadata declares {} links, file has {}",
                path.display(),
                declared,
                links.len()
            )));
        }
    }
    Network::new(zones, first_thru, nodes, links)
}

/// Reads a TNTP trip file. Intra-zonal entries are dropped with a warning;
/// negative entries are a validation error.
pub fn parse_trips(path: &Path) -> Result<TripTable, NetioError> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let md = parse_metadata(path, &lines)?;
    let zones = md.zones.unwrap_or(0);
    let mut table = TripTable::new(zones);
    let mut origin: Option<NodeId> = None;
    let mut intrazonal = 0.0;

    for (i, raw) in lines.iter().enumerate().skip(md.end_line) {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') || line.starts_with('<') {
            continue;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("origin") {
            origin = Some(NodeId(parse_u32(path, i + 1, rest.trim())?));
            continue;
        }
        let o = origin.ok_or_else(|| perr(path, i + 1, "trip entry before any Origin header"))?;
        for part in line.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (dst, val) = part
                .split_once(':')
                .ok_or_else(|| perr(path, i + 1, format!("expected 'dest : flow', got {part:?}")))?;
            let d = NodeId(parse_u32(path, i + 1, dst)?);
            let v = parse_f64(path, i + 1, val)?;
            if v < 0.0 {
                return Err(perr(path, i + 1, format!("negative demand {v} for {o} -> {d}")));
            }
            if o == d {
                intrazonal += v;
                continue;
            }
            table.insert(o, d, v)?;
        }
    }
    if intrazonal > 0.0 {
        warn!(
            "{}: dropped {:.2} intra-zonal trips (not routed)",
            path.display(),
            intrazonal
        );
    }
    if let Some(declared) = md.total_flow {
        let have = table.total() + intrazonal;
        if (have - declared).abs() > 1e-6 * declared.max(1.0) {
            warn!(
                "{}: metadata total {} differs from summed {}",
                path.display(),
                declared,
                have
            );
        }
    }
    Ok(table)
}

pub fn write_network(net: &Network, path: &Path) -> Result<(), NetioError> {
    let mut s = String::new();
    s.push_str(&format!("<NUMBER OF ZONES> {}\n", net.zones));
    s.push_str(&format!("<NUMBER OF NODES> {}\n", net.node_count()));
    s.push_str(&format!("<FIRST THRU NODE> {}\n", net.first_thru_node));
    s.push_str(&format!("<NUMBER OF LINKS> {}\n", net.links.len()));
    s.push_str("<END OF METADATA>\n\n");
    s.push_str("~ \tinit node \tterm node \tcapacity \tlength \tfree flow time \tb \tpower \tspeed limit \ttoll \tlink type\t;\n");
    for l in &net.links {
        s.push_str(&format!(
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t;\n",
            l.from, l.to, l.capacity, l.length, l.fft, l.b, l.power, l.speed, l.toll, l.link_type
        ));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Writes a trip table. Zero entries are omitted, so a parse -> write -> parse
/// round trip reproduces the table exactly.
pub fn write_trips(trips: &TripTable, path: &Path) -> Result<(), NetioError> {
    let mut s = String::new();
    s.push_str(&format!("<NUMBER OF ZONES> {}\n", trips.zones));
    s.push_str(&format!("<TOTAL OD FLOW> {}\n", trips.total()));
    s.push_str("<END OF METADATA>\n");
    let mut current: Option<NodeId> = None;
    let mut on_line = 0;
    for (o, d, v) in trips.pairs() {
        if current != Some(o) {
            s.push_str(&format!("\nOrigin {}\n", o));
            current = Some(o);
            on_line = 0;
        }
        s.push_str(&format!("    {} : {};", d, v));
        on_line += 1;
        if on_line == 5 {
            s.push('\n');
            on_line = 0;
        }
    }
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const NET: &str = "<NUMBER OF ZONES> 2\n<NUMBER OF NODES> 3\n<FIRST THRU NODE> 1\n<NUMBER OF LINKS> 2\n<END OF METADATA>\n~ header\n1 2 1000 5 5 0.15 4 0 0 1 ;\n2 3 1000 5 5 0.15 4 0 0 1 ;\n";

    #[test]
    fn parses_small_network() {
        let f = tmp(NET);
        let net = parse_network(f.path()).unwrap();
        assert_eq!(net.node_count(), 3);
        assert_eq!(net.links.len(), 2);
        assert_eq!(net.links[0].from, NodeId(1));
        assert_eq!(net.outgoing(NodeId(2)).len(), 1);
        assert_eq!(net.incoming(NodeId(3)).len(), 1);
    }

    #[test]
    fn empty_link_section_is_ok() {
        let f = tmp("<NUMBER OF NODES> 4\n<NUMBER OF LINKS> 0\n<END OF METADATA>\n");
        let net = parse_network(f.path()).unwrap();
        assert_eq!(net.node_count(), 4);
        assert!(net.links.is_empty());
    }

    #[test]
    fn short_row_reports_line_number() {
        let f = tmp("<NUMBER OF NODES> 2\n<END OF METADATA>\n1 2 1000 ;\n");
        let err = parse_network(f.path()).unwrap_err();
        match err {
            NetioError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn zero_capacity_is_validation_error() {
        let f = tmp("<NUMBER OF NODES> 2\n<END OF METADATA>\n1 2 0 5 5 0.15 4 0 0 1 ;\n");
        assert!(matches!(
            parse_network(f.path()).unwrap_err(),
            NetioError::Validation(_)
        ));
    }

    #[test]
    fn declared_link_count_checked() {
        let f = tmp("<NUMBER OF NODES> 2\n<NUMBER OF LINKS> 3\n<END OF METADATA>\n1 2 10 5 5 0.15 4 0 0 1 ;\n");
        assert!(matches!(
            parse_network(f.path()).unwrap_err(),
            NetioError::Validation(_)
        ));
    }

    const TRIPS: &str = "<NUMBER OF ZONES> 3\n<END OF METADATA>\nOrigin 1\n 1 : 100; 2 : 40.5; 3 : 0;\nOrigin 2\n 3 : 7;\n";

    #[test]
    fn parses_trips_dropping_intrazonal_and_zero() {
        let f = tmp(TRIPS);
        let t = parse_trips(f.path()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get(NodeId(1), NodeId(2)), 40.5);
        assert_eq!(t.get(NodeId(2), NodeId(3)), 7.0);
        assert_eq!(t.get(NodeId(1), NodeId(1)), 0.0);
    }

    #[test]
    fn negative_trip_is_error_with_line() {
        let f = tmp("<END OF METADATA>\nOrigin 1\n 2 : -5;\n");
        match parse_trips(f.path()).unwrap_err() {
            NetioError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn entry_before_origin_is_error() {
        let f = tmp("<END OF METADATA>\n 2 : 5;\n");
        assert!(parse_trips(f.path()).is_err());
    }

    #[test]
    fn network_roundtrip_identical() {
        let f = tmp(NET);
        let net = parse_network(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_network(&net, out.path()).unwrap();
        let net2 = parse_network(out.path()).unwrap();
        assert_eq!(net.links, net2.links);
        assert_eq!(net.zones, net2.zones);
        assert_eq!(net.node_count(), net2.node_count());
    }

    #[test]
    fn trips_roundtrip_identical() {
        let f = tmp(TRIPS);
        let t = parse_trips(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_trips(&t, out.path()).unwrap();
        let t2 = parse_trips(out.path()).unwrap();
        assert_eq!(t, t2);
    }
}
