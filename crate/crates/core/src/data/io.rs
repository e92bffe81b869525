//! CSV persistence. Columns are `s0..`, `a0..`, `sn0..`, `episode_id`,
//! `step_index`, `dstar`; floats use the shortest round-trip representation.
//! A leading `# provenance: <tag>` line is written and optional on read.
//! Paths ending in `.gz` are gzip-compressed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Provenance, Transition, TransitionSet};
use crate::error::{Error, Result};

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn header(state_dim: usize, action_dim: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..state_dim).map(|i| format!("s{i}")).collect();
    h.extend((0..action_dim).map(|i| format!("a{i}")));
    h.extend((0..state_dim).map(|i| format!("sn{i}")));
    h.extend(["episode_id", "step_index", "dstar"].map(String::from));
    h
}

pub fn write_to<W: Write>(set: &TransitionSet, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let io = |e| Error::io("<dataset>", e);
    if let Some(p) = set.provenance {
        writeln!(out, "# provenance: {p}").map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(set.state_dim, set.action_dim))?;
    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in &set.transitions {
        let mut row: Vec<String> = t.s.iter().chain(&t.a).chain(&t.s_next).map(f64::to_string).collect();
        row.push(opt(t.episode_id));
        row.push(opt(t.step_index));
        row.push(t.dstar.map(|d| d.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn save(set: &TransitionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    if is_gz(path) {
        let mut enc = GzEncoder::new(file, Compression::default());
        write_to(set, &mut enc)?;
        enc.finish().map_err(|e| Error::io(path, e))?;
        Ok(())
    } else {
        write_to(set, file)
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<TransitionSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if is_gz(path) {
        read_from(GzDecoder::new(file), path)
    } else {
        read_from(file, path)
    }
}

pub fn read_from<R: Read>(input: R, path: &Path) -> Result<TransitionSet> {
    let mut reader = BufReader::new(input);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let mut line_offset = 0;
    let mut provenance = None;
    let header_line = if let Some(tag) = first.trim_end().strip_prefix("# provenance:") {
        provenance = Some(
            tag.trim()
                .parse::<Provenance>()
                .map_err(|e| parse_err(1, e.to_string()))?,
        );
        line_offset = 1;
        let mut h = String::new();
        reader.read_line(&mut h).map_err(|e| Error::io(path, e))?;
        h
    } else {
        first
    };
    if header_line.trim().is_empty() {
        return Err(parse_err(1 + line_offset, "missing header".into()));
    }
    let columns: Vec<&str> = header_line.trim_end().split(',').collect();
    let state_dim = columns.iter().filter(|c| is_indexed(c, "s")).count();
    let action_dim = columns.iter().filter(|c| is_indexed(c, "a")).count();
    if columns != header(state_dim, action_dim) {
        return Err(parse_err(1 + line_offset, format!("unexpected header {columns:?}")));
    }
    let width = columns.len();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(reader);
    let mut transitions = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line()) + 1 + line_offset;
        if rec.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, got {}", rec.len())));
        }
        let float = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("column {}: {e}", columns[i])))
        };
        let optional_int = |i: usize| -> Result<Option<u64>> {
            if rec[i].is_empty() {
                return Ok(None);
            }
            rec[i]
                .parse::<u64>()
                .map(Some)
                .map_err(|e| parse_err(line, format!("column {}: {e}", columns[i])))
        };
        let s = (0..state_dim).map(float).collect::<Result<Vec<_>>>()?;
        let a = (state_dim..state_dim + action_dim).map(float).collect::<Result<Vec<_>>>()?;
        let sn_start = state_dim + action_dim;
        let s_next = (sn_start..sn_start + state_dim).map(float).collect::<Result<Vec<_>>>()?;
        let base = sn_start + state_dim;
        let dstar = if rec[base + 2].is_empty() {
            None
        } else {
            Some(float(base + 2)?)
        };
        transitions.push(Transition {
            s,
            a,
            s_next,
            episode_id: optional_int(base)?,
            step_index: optional_int(base + 1)?,
            dstar,
        });
    }
    TransitionSet::from_transitions(transitions, state_dim, action_dim, provenance)
}

fn is_indexed(col: &str, prefix: &str) -> bool {
    col.strip_prefix(prefix)
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}
