//! File formats: the `SYMF` binary grid-function format, CSV exports, plain
//! PGM heatmaps, and JSON with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::grid::{make_domain, GridFunction, Shape};
use crate::optimize::IterationRecord;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SYMF";
pub const VERSION: u8 = 1;
const TAG_BOX: u8 = 0;
const TAG_BALL: u8 = 1;
const HEADER_LEN: usize = 4 + 3 + 3 * 8 + 8;

/// Serializes a grid function:
///
/// ```text
/// "SYMF" | version u8 | N u8 | shape tag u8 (0 box, 1 ball)
/// h f64 | L f64 | R f64 | cell count u64 | values f64 ...
/// ```
///
/// Multi-byte fields are little-endian; values are row-major. `R` equals `L`
/// for box domains.
pub fn encode(u: &GridFunction) -> Vec<u8> {
    let d = u.domain();
    let (tag, radius) = match d.shape() {
        Shape::Box => (TAG_BOX, d.half_extent()),
        Shape::Ball { radius } => (TAG_BALL, radius),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * d.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(d.dim() as u8);
    out.push(tag);
    for v in [d.spacing(), d.half_extent(), radius] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(d.len() as u64).to_le_bytes());
    for v in u.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(format_err(self.pos, format!("truncated input while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses the `SYMF` format; errors name the byte offset of the problem.
pub fn decode(bytes: &[u8]) -> Result<GridFunction> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic bytes")?;
    if magic != MAGIC {
        let found = String::from_utf8_lossy(magic).into_owned();
        let at = magic.iter().zip(MAGIC).position(|(a, b)| a != b).unwrap_or(0);
        return Err(format_err(at, format!("bad magic bytes {found:?}, expected \"SYMF\"")));
    }
    let at = r.pos;
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(format_err(at, format!("unsupported version {version}")));
    }
    let at = r.pos;
    let dim = r.u8("dimension")?;
    if !(2..=3).contains(&dim) {
        return Err(format_err(at, format!("dimension {dim} not in {{2, 3}}")));
    }
    let tag_at = r.pos;
    let tag = r.u8("shape tag")?;
    let h_at = r.pos;
    let h = r.f64("spacing")?;
    let l = r.f64("half extent")?;
    let radius = r.f64("radius")?;
    let shape = match tag {
        TAG_BOX => Shape::Box,
        TAG_BALL => Shape::Ball { radius },
        other => return Err(format_err(tag_at, format!("unknown shape tag {other}"))),
    };
    let domain = make_domain(dim as usize, shape, l, h).map_err(|e| format_err(h_at, e.to_string()))?;
    let count_at = r.pos;
    let count = r.u64("cell count")?;
    if count != domain.len() as u64 {
        return Err(format_err(
            count_at,
            format!("cell count {count} does not match the {} cells of the header geometry", domain.len()),
        ));
    }
    let mut values = Vec::with_capacity(domain.len());
    for i in 0..domain.len() {
        let at = r.pos;
        let v = r.f64("values")?;
        if !v.is_finite() {
            return Err(format_err(at, format!("non-finite value {v} at cell {i}")));
        }
        if v != 0.0 && !domain.is_active(i) {
            return Err(format_err(at, format!("nonzero value {v} on masked cell {i}")));
        }
        values.push(v);
    }
    if r.pos != bytes.len() {
        return Err(format_err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    GridFunction::new(domain, values)
}

pub fn save(u: &GridFunction, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(u))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<GridFunction> {
    decode(&fs::read(path)?)
}

/// One line per cell: `i,j[,k],x1,x2[,x3],value`.
pub fn to_csv(u: &GridFunction) -> String {
    let d = u.domain();
    let dim = d.dim();
    let mut out = String::with_capacity(d.len() * 48);
    for i in 0..d.len() {
        let m = d.multi_index(i);
        let x = d.center(i);
        for k in &m[..dim] {
            let _ = write!(out, "{k},");
        }
        for c in &x[..dim] {
            let _ = write!(out, "{c},");
        }
        let _ = writeln!(out, "{}", u.get(i));
    }
    out
}

/// Optimizer history as CSV with header `iter,E,J,Fterm,W,proj_grad_norm,step`.
pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut out = String::from("iter,E,J,Fterm,W,proj_grad_norm,step\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.iter, r.e, r.j, r.fterm, r.w, r.proj_grad_norm, r.step);
    }
    out
}

/// CSV with a header row from a list of numeric rows.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Min/max sidecar of a PGM heatmap.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PgmInfo {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub min: f64,
    pub max: f64,
    /// Index of the middle slice along the last axis for 3D input.
    pub slice: Option<usize>,
}

/// Plain (P2) PGM heatmap with 255 gray levels; rows follow the first axis,
/// columns the second. 3D input is cut at the middle of the last axis.
pub fn to_pgm(values: &GridFunction) -> (String, PgmInfo) {
    let d = values.domain();
    let n = d.cells_per_axis();
    let slice = (d.dim() == 3).then_some(n / 2);
    let at = |i: usize, j: usize| match slice {
        Some(k) => values.get(d.linear_index(&[i, j, k])),
        None => values.get(d.linear_index(&[i, j])),
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            lo = lo.min(at(i, j));
            hi = hi.max(at(i, j));
        }
    }
    let span = hi - lo;
    let mut out = format!("P2\n{n} {n}\n255\n");
    for i in 0..n {
        let row: Vec<String> = (0..n)
            .map(|j| {
                let level = if span > 0.0 { ((at(i, j) - lo) / span * 255.0).round() } else { 0.0 };
                (level as u32).to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    (out, PgmInfo { width: n, height: n, maxval: 255, min: lo, max: hi, slice })
}

/// Writes `<stem>.pgm` and `<stem>.json` (the min/max sidecar).
pub fn write_pgm(values: &GridFunction, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let (pgm, info) = to_pgm(values);
    fs::write(dir.as_ref().join(format!("{stem}.pgm")), pgm)?;
    fs::write(dir.as_ref().join(format!("{stem}.json")), to_json(&info)?)?;
    Ok(())
}

/// Pretty JSON formatter that writes every float with 17 significant digits.
struct Precise<'a>(PrettyFormatter<'a>);

impl Formatter for Precise<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty-printed JSON with floats as `d.dddddddddddddddde±x`. Non-finite
/// floats become `null`.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Precise(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}
