//! On-disk formats: EVOL volumes, EVCK checkpoints, CSV tables and SVG
//! line plots.
//!
//! # EVOL
//!
//! All integers little-endian. The header is 28 bytes:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `EVOL`                           |
//! | 4      | 4    | version, `u32` = 1                     |
//! | 8      | 12   | dims x, y, z, `u32` each               |
//! | 20     | 4    | channels, `u32`                        |
//! | 24     | 1    | dtype: 0 = `f32`, 1 = `u8`             |
//! | 25     | 3    | reserved, zero                         |
//!
//! The payload follows, channel-major then z, y, x with x fastest.
//!
//! # EVCK
//!
//! Magic `EVCK`, `u32` version = 1, `u8` head tag (0 evidential,
//! 1 softmax), `u64` parameter count `P`, then `P` parameters, `P` Adam
//! first moments and `P` Adam second moments as `f32`, then the `u32`
//! epoch count.
//!
//! Every writer goes through a temporary file in the destination directory
//! followed by a rename, so readers never observe partial files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::backbone::{Checkpoint, Head};
use crate::error::{Error, Result};
use crate::volume::{Dims, LabelVolume, Volume};

pub const EVOL_MAGIC: &[u8; 4] = b"EVOL";
pub const EVCK_MAGIC: &[u8; 4] = b"EVCK";
pub const FORMAT_VERSION: u32 = 1;
pub const EVOL_HEADER_LEN: usize = 28;

const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(format!(
                "truncated {}: needed {} bytes at offset {}, file has {}",
                self.what,
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported {} version {v}", self.what)));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(format!(
                "{} has {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Contents of an EVOL file.
#[derive(Debug, Clone, PartialEq)]
pub enum VolumeFile {
    Real(Volume),
    Labels(LabelVolume),
}

fn evol_header(dims: Dims, channels: usize, dtype: u8) -> Result<Vec<u8>> {
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::invalid(format!("extent {v} exceeds u32")));
    let mut out = Vec::with_capacity(EVOL_HEADER_LEN);
    out.extend_from_slice(EVOL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [dims.x, dims.y, dims.z, channels] {
        out.extend_from_slice(&to_u32(v)?.to_le_bytes());
    }
    out.push(dtype);
    out.extend_from_slice(&[0; 3]);
    Ok(out)
}

pub fn encode_volume(volume: &Volume) -> Result<Vec<u8>> {
    let mut out = evol_header(volume.dims(), volume.channels(), DTYPE_F32)?;
    out.reserve(volume.as_slice().len() * 4);
    for v in volume.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_labels(labels: &LabelVolume) -> Result<Vec<u8>> {
    let mut out = evol_header(labels.dims(), 1, DTYPE_U8)?;
    out.extend_from_slice(labels.as_slice());
    Ok(out)
}

pub fn decode_volume_file(bytes: &[u8]) -> Result<VolumeFile> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "EVOL volume",
    };
    r.magic(EVOL_MAGIC)?;
    r.version()?;
    let (x, y, z, channels) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let dtype = r.u8()?;
    if r.take(3)? != [0, 0, 0] {
        return Err(Error::format("nonzero reserved bytes in EVOL header"));
    }
    if x == 0 || y == 0 || z == 0 || channels == 0 {
        return Err(Error::format("EVOL header has a zero extent"));
    }
    let dims = Dims::new(x as usize, y as usize, z as usize);
    let count = (dims.voxels() as u64)
        .checked_mul(channels as u64)
        .ok_or_else(|| Error::format("EVOL extents overflow"))?;
    let width: u64 = match dtype {
        DTYPE_F32 => 4,
        DTYPE_U8 => 1,
        other => return Err(Error::format(format!("unknown EVOL dtype {other}"))),
    };
    let expected = EVOL_HEADER_LEN as u64 + count * width;
    if bytes.len() as u64 != expected {
        return Err(Error::format(format!(
            "EVOL payload size mismatch: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    match dtype {
        DTYPE_F32 => Ok(VolumeFile::Real(Volume::from_vec(dims, channels as usize, r.f32s(count as usize)?)?)),
        _ => {
            if channels != 1 {
                return Err(Error::format("label volumes must have one channel"));
            }
            Ok(VolumeFile::Labels(LabelVolume::from_vec(dims, r.take(count as usize)?.to_vec())?))
        }
    }
}

pub fn write_volume(path: &Path, volume: &Volume) -> Result<()> {
    write_atomic(path, &encode_volume(volume)?)
}

pub fn write_labels(path: &Path, labels: &LabelVolume) -> Result<()> {
    write_atomic(path, &encode_labels(labels)?)
}

pub fn read_volume_file(path: &Path) -> Result<VolumeFile> {
    decode_volume_file(&read_file(path)?)
}

/// Reads an `f32` EVOL file.
pub fn read_volume(path: &Path) -> Result<Volume> {
    match read_volume_file(path)? {
        VolumeFile::Real(v) => Ok(v),
        VolumeFile::Labels(_) => Err(Error::format(format!("{} holds labels, not intensities", path.display()))),
    }
}

/// Reads a `u8` EVOL file.
pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    match read_volume_file(path)? {
        VolumeFile::Labels(l) => Ok(l),
        VolumeFile::Real(_) => Err(Error::format(format!("{} holds intensities, not labels", path.display()))),
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let n = ckpt.params.len();
    if ckpt.adam_m.len() != n || ckpt.adam_v.len() != n {
        return Err(Error::invalid("checkpoint moment vectors differ in length from the parameters"));
    }
    let mut out = Vec::with_capacity(21 + 12 * n);
    out.extend_from_slice(EVCK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(ckpt.head.tag());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in ckpt.params.iter().chain(&ckpt.adam_m).chain(&ckpt.adam_v) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());
    Ok(out)
}

/// Inverse of [`encode_checkpoint`]. The loss history is not stored and
/// comes back empty.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "EVCK checkpoint",
    };
    r.magic(EVCK_MAGIC)?;
    r.version()?;
    let tag = r.u8()?;
    let head = Head::from_tag(tag)?;
    let n = r.u64()?;
    let expected = 4 + 4 + 1 + 8 + 12 * n as u128 + 4;
    if bytes.len() as u128 != expected {
        return Err(Error::format(format!(
            "EVCK size mismatch: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let n = n as usize;
    let params = r.f32s(n)?;
    let adam_m = r.f32s(n)?;
    let adam_v = r.f32s(n)?;
    let epoch = r.u32()?;
    r.finish()?;
    Ok(Checkpoint {
        head,
        params,
        adam_m,
        adam_v,
        epoch,
        loss_history: Vec::new(),
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}

/// Formats `x` with `digits` significant digits in the style of C's `%g`.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format_significant(*v, 6),
            Cell::Text(s) => s.clone(),
        }
    }
}

pub type CsvRow = BTreeMap<String, Cell>;

/// Writes rows under a header of their (sorted) keys. Numbers get six
/// significant digits.
pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    write_atomic(path, &encode_csv(rows)?)
}

pub fn encode_csv(rows: &[CsvRow]) -> Result<Vec<u8>> {
    let keys: Vec<&String> = rows.first().map(|r| r.keys().collect()).unwrap_or_default();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format(format!("csv encoding: {e}"));
    if !keys.is_empty() {
        w.write_record(&keys).map_err(csv_err)?;
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != keys.len() || !row.keys().eq(keys.iter().copied()) {
            return Err(Error::invalid(format!("csv row {i} has a different key set")));
        }
        w.write_record(row.values().map(Cell::render)).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::format(format!("csv encoding: {e}")))
}

/// Reads a CSV file as rows of raw strings keyed by header.
pub fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let bytes = read_file(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let csv_err = |e: csv::Error| Error::format(format!("{}: {e}", path.display()));
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(header.iter().cloned().zip(rec.iter().map(String::from)).collect())
        })
        .collect()
}

/// One polyline of a line plot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// SVG canvas and plot-area geometry, in user units.
pub mod layout {
    pub const WIDTH: f64 = 640.0;
    pub const HEIGHT: f64 = 400.0;
    pub const PLOT_LEFT: f64 = 70.0;
    pub const PLOT_RIGHT: f64 = 480.0;
    pub const PLOT_TOP: f64 = 40.0;
    pub const PLOT_BOTTOM: f64 = 340.0;
    /// Fraction of the data's y range added above and below it.
    pub const Y_PADDING: f64 = 0.05;
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Axis ranges used for `series`: x spans the data, y spans the data
/// padded by [`layout::Y_PADDING`] of its range on both sides. Degenerate
/// ranges widen to unit width around the value.
pub fn plot_ranges(series: &[PlotSeries]) -> ((f64, f64), (f64, f64)) {
    let span = |vals: &mut dyn Iterator<Item = f64>| {
        vals.fold(None, |acc: Option<(f64, f64)>, v| {
            Some(acc.map_or((v, v), |(lo, hi)| (lo.min(v), hi.max(v))))
        })
    };
    let (x0, x1) = span(&mut series.iter().flat_map(|s| s.xs.iter().copied())).unwrap_or((0.0, 1.0));
    let (y0, y1) = span(&mut series.iter().flat_map(|s| s.ys.iter().copied())).unwrap_or((0.0, 1.0));
    let xr = if x1 > x0 { (x0, x1) } else { (x0 - 0.5, x0 + 0.5) };
    let yr = if y1 > y0 {
        let pad = layout::Y_PADDING * (y1 - y0);
        (y0 - pad, y1 + pad)
    } else {
        (y0 - 0.5, y0 + 0.5)
    };
    (xr, yr)
}

pub fn render_svg_lineplot(series: &[PlotSeries], x_label: &str, y_label: &str) -> Result<String> {
    use layout::*;
    for s in series {
        if s.xs.len() != s.ys.len() {
            return Err(Error::invalid(format!(
                "series {:?} has {} x values and {} y values",
                s.name,
                s.xs.len(),
                s.ys.len()
            )));
        }
        if s.xs.iter().chain(&s.ys).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("series {:?} contains non-finite values", s.name)));
        }
    }
    let ((x0, x1), (y0, y1)) = plot_ranges(series);
    let px = |x: f64| PLOT_LEFT + (x - x0) / (x1 - x0) * (PLOT_RIGHT - PLOT_LEFT);
    let py = |y: f64| PLOT_BOTTOM - (y - y0) / (y1 - y0) * (PLOT_BOTTOM - PLOT_TOP);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{PLOT_LEFT}" y1="{PLOT_BOTTOM}" x2="{PLOT_RIGHT}" y2="{PLOT_BOTTOM}"/><line x1="{PLOT_LEFT}" y1="{PLOT_TOP}" x2="{PLOT_LEFT}" y2="{PLOT_BOTTOM}"/></g>"#
    );
    const TICKS: usize = 5;
    for i in 0..TICKS {
        let t = i as f64 / (TICKS - 1) as f64;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (tx, ty) = (px(xv), py(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{tx:.2}" y1="{PLOT_BOTTOM}" x2="{tx:.2}" y2="{:.2}" stroke="black"/><text x="{tx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            PLOT_BOTTOM + 5.0,
            PLOT_BOTTOM + 18.0,
            format_significant(xv, 3)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ty:.2}" x2="{PLOT_LEFT}" y2="{ty:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            PLOT_LEFT - 5.0,
            PLOT_LEFT - 8.0,
            ty + 4.0,
            format_significant(yv, 3)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        xml_escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = ser
            .xs
            .iter()
            .zip(&ser.ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = PLOT_TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            PLOT_RIGHT + 15.0,
            PLOT_RIGHT + 35.0,
            PLOT_RIGHT + 40.0,
            ly + 4.0,
            xml_escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Line plot with axes, tick labels, a legend and one polyline per series.
pub fn write_svg_lineplot(path: &Path, series: &[PlotSeries], x_label: &str, y_label: &str) -> Result<()> {
    write_atomic(path, render_svg_lineplot(series, x_label, y_label)?.as_bytes())
}
