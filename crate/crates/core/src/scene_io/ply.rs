//! Minimal PLY support for vertex-only point clouds.
//!
//! Writes `binary_little_endian 1.0`; reads both that and `ascii 1.0`.
//! Only the `vertex` element is retained; other elements are skipped when ascii
//! and rejected when binary (their sizes cannot be skipped without parsing lists).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    F32,
    F64,
}

impl ScalarKind {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "uchar" | "uint8" => Self::U8,
            "char" | "int8" => Self::I8,
            "ushort" | "uint16" => Self::U16,
            "short" | "int16" => Self::I16,
            "uint" | "uint32" => Self::U32,
            "int" | "int32" => Self::I32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::U8 => "uchar",
            Self::I8 => "char",
            Self::U16 => "ushort",
            Self::I16 => "short",
            Self::U32 => "uint",
            Self::I32 => "int",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::U8 | Self::I8 => 1,
            Self::U16 | Self::I16 => 2,
            Self::U32 | Self::I32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn write(self, out: &mut Vec<u8>, v: f64) {
        match self {
            Self::U8 => out.push(v as u8),
            Self::I8 => out.push(v as i8 as u8),
            Self::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            Self::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Self::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            Self::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Self::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Self::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::U8 => b[0] as f64,
            Self::I8 => b[0] as i8 as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Column-oriented vertex table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VertexTable {
    pub properties: Vec<(String, ScalarKind)>,
    pub rows: Vec<Vec<f64>>,
}

impl VertexTable {
    pub fn new(properties: &[(&str, ScalarKind)]) -> Self {
        Self {
            properties: properties
                .iter()
                .map(|(n, k)| (n.to_string(), *k))
                .collect(),
            rows: Vec::new(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|(n, _)| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
        out.extend_from_slice(format!("element vertex {}\n", self.rows.len()).as_bytes());
        for (name, kind) in &self.properties {
            out.extend_from_slice(format!("property {} {}\n", kind.name(), name).as_bytes());
        }
        out.extend_from_slice(b"end_header\n");
        for row in &self.rows {
            for ((_, kind), v) in self.properties.iter().zip(row) {
                kind.write(&mut out, *v);
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(f), path)
    }

    pub fn parse<R: BufRead>(mut reader: R, path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, m.to_string());
        let mut line = String::new();
        let next_line = |reader: &mut R, line: &mut String| -> Result<()> {
            line.clear();
            let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(Error::format(path, "unexpected end of PLY header"));
            }
            Ok(())
        };

        next_line(&mut reader, &mut line)?;
        if line.trim() != "ply" {
            return Err(bad("missing 'ply' magic"));
        }
        let mut binary = false;
        let mut elements: Vec<(String, usize, Vec<(String, ScalarKind)>)> = Vec::new();
        loop {
            next_line(&mut reader, &mut line)?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["format", "ascii", _] => binary = false,
                ["format", "binary_little_endian", _] => binary = true,
                ["format", ..] => return Err(bad("unsupported PLY format")),
                ["comment", ..] | ["obj_info", ..] | [] => {}
                ["element", name, count] => {
                    let count = count.parse().map_err(|_| bad("bad element count"))?;
                    elements.push((name.to_string(), count, Vec::new()));
                }
                ["property", "list", ..] => {
                    let el = elements.last().ok_or_else(|| bad("property before element"))?;
                    if el.0 == "vertex" || binary {
                        return Err(bad("list properties are not supported"));
                    }
                }
                ["property", kind, name] => {
                    let kind = ScalarKind::parse(kind).ok_or_else(|| bad("unknown property type"))?;
                    let el = elements
                        .last_mut()
                        .ok_or_else(|| bad("property before element"))?;
                    el.2.push((name.to_string(), kind));
                }
                ["end_header"] => break,
                _ => return Err(bad(&format!("unrecognized header line '{}'", line.trim()))),
            }
        }

        let mut table = VertexTable::default();
        for (name, count, props) in elements {
            let is_vertex = name == "vertex";
            if binary {
                if !is_vertex {
                    return Err(bad("binary PLY with non-vertex elements is not supported"));
                }
                let stride: usize = props.iter().map(|(_, k)| k.size()).sum();
                let mut buf = vec![0u8; stride * count];
                reader
                    .read_exact(&mut buf)
                    .map_err(|_| bad("truncated binary body"))?;
                table.rows = buf
                    .chunks_exact(stride)
                    .map(|rec| {
                        let mut off = 0;
                        props
                            .iter()
                            .map(|(_, k)| {
                                let v = k.read(&rec[off..]);
                                off += k.size();
                                v
                            })
                            .collect()
                    })
                    .collect();
                table.properties = props;
            } else {
                let mut rows = Vec::with_capacity(if is_vertex { count } else { 0 });
                for _ in 0..count {
                    next_line(&mut reader, &mut line)?;
                    if !is_vertex {
                        continue;
                    }
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("non-numeric vertex value"))?;
                    if vals.len() != props.len() {
                        return Err(bad("vertex row width differs from header"));
                    }
                    rows.push(vals);
                }
                if is_vertex {
                    table.rows = rows;
                    table.properties = props;
                }
            }
        }
        Ok(table)
    }
}
