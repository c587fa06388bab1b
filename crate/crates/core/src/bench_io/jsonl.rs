//! JSON Lines benchmark files.
//!
//! The first line is a header record, every following line one cell:
//!
//! ```text
//! {"record_type":"header","format_version":1,"vocab":["input","output","conv3x3"],"max_nodes":7,"dataset_name":"cifar10"}
//! {"record_type":"cell","id":"c0","ops":["input","conv3x3","output"],"adjacency":[[0,1,0],[0,0,1],[0,0,0]],"flops":12.5,"accuracy":0.91}
//! ```
//!
//! Unknown fields are ignored. Files are UTF-8 with LF line endings.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell::{CellGraph, OpVocabulary};

use super::{BenchError, BenchmarkEntry, SearchSpace};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub format_version: u32,
    pub vocab: Vec<String>,
    pub max_nodes: usize,
    pub dataset_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub id: String,
    pub ops: Vec<String>,
    pub adjacency: Vec<Vec<u8>>,
    pub flops: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "lowercase")]
pub enum Record {
    Header(HeaderRecord),
    Cell(CellRecord),
}

/// Parses a whole file. Either every record loads or an error is returned.
pub fn parse_benchmark(text: &str) -> Result<SearchSpace, BenchError> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let parse = |line: usize, s: &str| -> Result<Record, BenchError> {
        serde_json::from_str(s).map_err(|e| BenchError::Parse { line, message: e.to_string() })
    };
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((line, l)) => match parse(line, l)? {
                Record::Header(h) => break h,
                Record::Cell(_) => {
                    return Err(BenchError::Parse { line, message: "expected header record first".into() })
                }
            },
            None => return Err(BenchError::Parse { line: 1, message: "missing header record".into() }),
        }
    };
    if header.format_version != FORMAT_VERSION {
        return Err(BenchError::Parse {
            line: 1,
            message: format!("unsupported format_version {}", header.format_version),
        });
    }
    let vocab = OpVocabulary::new(header.vocab.iter().cloned())
        .map_err(|e| BenchError::Parse { line: 1, message: e.to_string() })?;
    let mut entries = Vec::new();
    for (line, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let rec = match parse(line, l)? {
            Record::Cell(c) => c,
            Record::Header(_) => {
                return Err(BenchError::Parse { line, message: "second header record".into() })
            }
        };
        let cell = CellGraph::from_names(&rec.adjacency, &rec.ops, &vocab)
            .map_err(|source| BenchError::Validation { id: rec.id.clone(), source })?;
        entries.push(BenchmarkEntry { id: rec.id, cell, flops: rec.flops, accuracy: rec.accuracy });
    }
    SearchSpace::new(vocab, header.max_nodes, header.dataset_name, entries)
}

pub fn load_benchmark(path: impl AsRef<Path>) -> Result<SearchSpace, BenchError> {
    parse_benchmark(&fs::read_to_string(path)?)
}

pub fn write_benchmark<W: Write>(space: &SearchSpace, mut out: W) -> io::Result<()> {
    let header = Record::Header(HeaderRecord {
        format_version: FORMAT_VERSION,
        vocab: space.vocab().names().to_vec(),
        max_nodes: space.max_nodes(),
        dataset_name: space.dataset_name().to_string(),
    });
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for e in space.entries() {
        let rec = Record::Cell(CellRecord {
            id: e.id.clone(),
            ops: e.cell.op_names(space.vocab()).into_iter().map(String::from).collect(),
            adjacency: e.cell.adjacency_rows(),
            flops: e.flops,
            accuracy: e.accuracy,
        });
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_benchmark(space: &SearchSpace, path: impl AsRef<Path>) -> io::Result<()> {
    write_benchmark(space, BufWriter::new(fs::File::create(path)?))
}
