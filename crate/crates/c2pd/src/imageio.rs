//! PFM, PGM and PPM rasters, the binary parameter format, and CSV logs.
//!
//! Decoders work on byte slices and never size an allocation from a header
//! field before checking it against the bytes actually present.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use c2pd_core::guidance::RgbImage;
use c2pd_core::{CapoParams, Grid, Layer};

use crate::error::{Error, Result};

/// Unit of depth values stored in a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthUnit {
    Meters,
    #[default]
    Centimeters,
}

impl DepthUnit {
    /// Multiplier that converts file values to centimeters.
    pub fn to_cm(self) -> f64 {
        match self {
            DepthUnit::Meters => 100.0,
            DepthUnit::Centimeters => 1.0,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "m" => Some(DepthUnit::Meters),
            "cm" => Some(DepthUnit::Centimeters),
            _ => None,
        }
    }
}

/// Largest accepted raster side, in pixels.
pub const MAX_SIDE: usize = 1 << 15;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Splits whitespace-separated ASCII header tokens, skipping `#` comments,
/// and returns them with the offset just past the single whitespace byte that
/// ends the last token.
fn header_tokens(bytes: &[u8], count: usize) -> std::result::Result<(Vec<String>, usize), String> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
            if i - start > 64 {
                return Err("header token too long".into());
            }
        }
        if start == i {
            return Err("truncated header".into());
        }
        let token =
            std::str::from_utf8(&bytes[start..i]).map_err(|_| "non-ASCII header".to_string())?;
        tokens.push(token.to_string());
    }
    if i >= bytes.len() {
        return Err("truncated header".into());
    }
    Ok((tokens, i + 1))
}

fn parse_side(token: &str, what: &str) -> std::result::Result<usize, String> {
    let v: usize = token
        .parse()
        .map_err(|_| format!("invalid {what} {token:?}"))?;
    if v == 0 || v > MAX_SIDE {
        return Err(format!("{what} {v} outside 1..={MAX_SIDE}"));
    }
    Ok(v)
}

/// Decoded PFM raster.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Signed scale field; negative means little-endian samples.
    pub scale: f32,
    /// Samples top-to-bottom, interleaved channels.
    pub data: Vec<f32>,
}

pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<PfmImage, String> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format!("bad magic {other:?}")),
    };
    let width = parse_side(&tokens[1], "width")?;
    let height = parse_side(&tokens[2], "height")?;
    let scale: f32 = tokens[3]
        .parse()
        .map_err(|_| format!("invalid scale {:?}", tokens[3]))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(format!("invalid scale {scale}"));
    }
    let count = width * height * channels;
    let raster = &bytes[offset..];
    if raster.len() < count * 4 {
        return Err(format!(
            "truncated raster: {} of {} bytes",
            raster.len(),
            count * 4
        ));
    }
    let little = scale < 0.0;
    let row_len = width * channels;
    let mut data = vec![0f32; count];
    for (i, chunk) in raster[..count * 4].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        // File rows run bottom to top.
        let file_row = i / row_len;
        let dst = (height - 1 - file_row) * row_len + i % row_len;
        data[dst] = v;
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        scale,
        data,
    })
}

/// Single-channel little-endian PFM with scale `-1`.
pub fn encode_pfm(grid: &Grid) -> Vec<u8> {
    let (h, w) = grid.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for y in (0..h).rev() {
        for &v in grid.row(y) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn pfm_to_grid(img: &PfmImage, factor: f64, path: &Path) -> Result<Grid> {
    if img.channels != 1 {
        return Err(Error::format(path, "expected a single-channel (Pf) file"));
    }
    let scale = f64::from(img.scale.abs());
    let values: Vec<f64> = img
        .data
        .iter()
        .map(|&v| f64::from(v) * scale * factor)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite sample"));
    }
    Ok(Grid::from_vec(img.height, img.width, values)?)
}

pub fn read_pfm(path: &Path) -> Result<Grid> {
    read_pfm_with_unit(path, DepthUnit::Centimeters)
}

fn read_pfm_with_unit(path: &Path, unit: DepthUnit) -> Result<Grid> {
    let bytes = read_file(path)?;
    let img = decode_pfm(&bytes).map_err(|r| Error::format(path, r))?;
    pfm_to_grid(&img, unit.to_cm(), path)
}

pub fn write_pfm(grid: &Grid, path: &Path) -> Result<()> {
    write_file(path, &encode_pfm(grid))
}

/// Decoded binary PGM raster.
#[derive(Debug, Clone, PartialEq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<PgmImage, String> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    if tokens[0] != "P5" {
        return Err(format!("bad magic {:?}", tokens[0]));
    }
    let width = parse_side(&tokens[1], "width")?;
    let height = parse_side(&tokens[2], "height")?;
    let maxval: u16 = match tokens[3].as_str() {
        "255" => 255,
        "65535" => 65535,
        other => return Err(format!("unsupported maxval {other}")),
    };
    let bps = if maxval > 255 { 2 } else { 1 };
    let count = width * height;
    let raster = &bytes[offset..];
    if raster.len() < count * bps {
        return Err(format!(
            "truncated raster: {} of {} bytes",
            raster.len(),
            count * bps
        ));
    }
    let samples = if bps == 1 {
        raster[..count].iter().map(|&b| u16::from(b)).collect()
    } else {
        raster[..count * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(PgmImage {
        width,
        height,
        maxval,
        samples,
    })
}

pub fn encode_pgm(img: &PgmImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for s in &img.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(img.samples.iter().map(|&s| s as u8));
    }
    out
}

/// Path of the text file holding the `min max` range of a quantized PGM.
pub fn range_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".range");
    PathBuf::from(s)
}

/// Quantizes `grid` linearly over its `[min, max]` range.
pub fn quantize(grid: &Grid, maxval: u16) -> (PgmImage, f64, f64) {
    let (lo, hi) = grid
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let m = f64::from(maxval);
    let samples = grid
        .values()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * m).round() as u16
            } else {
                0
            }
        })
        .collect();
    let img = PgmImage {
        width: grid.width(),
        height: grid.height(),
        maxval,
        samples,
    };
    (img, lo, hi)
}

/// Writes a quantized PGM plus its `.range` sidecar.
pub fn write_pgm(grid: &Grid, path: &Path, maxval: u16) -> Result<()> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Config(format!("unsupported PGM maxval {maxval}")));
    }
    let (img, lo, hi) = quantize(grid, maxval);
    write_file(path, &encode_pgm(&img))?;
    let sidecar = range_sidecar(path);
    write_file(&sidecar, format!("{lo:?} {hi:?}\n").as_bytes())
}

/// Reads a PGM; values map back over the sidecar range when one exists and
/// are raw sample values otherwise.
pub fn read_pgm(path: &Path) -> Result<Grid> {
    let bytes = read_file(path)?;
    let img = decode_pgm(&bytes).map_err(|r| Error::format(path, r))?;
    let sidecar = range_sidecar(path);
    let range = if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let parts: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(&sidecar, "expected two numbers"))?;
        match parts.as_slice() {
            [lo, hi] if lo.is_finite() && hi.is_finite() && lo <= hi => Some((*lo, *hi)),
            _ => return Err(Error::format(&sidecar, "expected `min max`")),
        }
    } else {
        None
    };
    let m = f64::from(img.maxval);
    let values = img
        .samples
        .iter()
        .map(|&s| match range {
            Some((lo, hi)) => lo + f64::from(s) / m * (hi - lo),
            None => f64::from(s),
        })
        .collect();
    Ok(Grid::from_vec(img.height, img.width, values)?)
}

/// Reads a depth grid in centimeters from a `.pfm` or `.pgm` file.
pub fn read_depth(path: &Path, unit: DepthUnit) -> Result<Grid> {
    match extension(path).as_deref() {
        Some("pgm") => Ok(read_pgm(path)?.map(|v| v * unit.to_cm())?),
        _ => read_pfm_with_unit(path, unit),
    }
}

/// Writes a depth grid; `.pgm` paths are quantized to 16 bits, anything else
/// is written as PFM.
pub fn write_depth(grid: &Grid, path: &Path) -> Result<()> {
    match extension(path).as_deref() {
        Some("pgm") => write_pgm(grid, path, 65535),
        _ => write_pfm(grid, path),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    if tokens[0] != "P6" {
        return Err(format!("bad magic {:?}", tokens[0]));
    }
    let width = parse_side(&tokens[1], "width")?;
    let height = parse_side(&tokens[2], "height")?;
    if tokens[3] != "255" {
        return Err(format!("unsupported maxval {}", tokens[3]));
    }
    let count = width * height;
    let raster = &bytes[offset..];
    if raster.len() < count * 3 {
        return Err(format!(
            "truncated raster: {} of {} bytes",
            raster.len(),
            count * 3
        ));
    }
    let pixels = raster[..count * 3]
        .chunks_exact(3)
        .map(|c| {
            [
                f64::from(c[0]) / 255.0,
                f64::from(c[1]) / 255.0,
                f64::from(c[2]) / 255.0,
            ]
        })
        .collect();
    RgbImage::new(height, width, pixels).map_err(|e| e.to_string())
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for px in img.pixels() {
        out.extend(px.iter().map(|c| (c * 255.0).round() as u8));
    }
    out
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = read_file(path)?;
    decode_ppm(&bytes).map_err(|r| Error::format(path, r))
}

pub fn write_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    write_file(path, &encode_ppm(img))
}

pub const PARAMS_MAGIC: &[u8; 4] = b"C2PD";
pub const PARAMS_VERSION: u32 = 1;
const MAX_LAYERS: usize = 64;
const MAX_LAYER_DIM: usize = 4096;

pub fn encode_params(params: &CapoParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.param_count() * 8);
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.n() as u32).to_le_bytes());
    out.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());
    for layer in params.layers() {
        out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
        out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
        for w in &layer.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in &layer.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err("truncated parameter file".into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, count: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<CapoParams, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != PARAMS_MAGIC {
        return Err("bad magic".into());
    }
    let version = cur.u32()?;
    if version != PARAMS_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let n = cur.u32()? as usize;
    let count = cur.u32()? as usize;
    if count == 0 || count > MAX_LAYERS {
        return Err(format!("layer count {count} outside 1..={MAX_LAYERS}"));
    }
    if n == 0 || n > MAX_LAYER_DIM {
        return Err(format!("window cardinality {n} out of range"));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let out_dim = cur.u32()? as usize;
        let in_dim = cur.u32()? as usize;
        if out_dim == 0 || in_dim == 0 || out_dim > MAX_LAYER_DIM || in_dim > MAX_LAYER_DIM {
            return Err(format!("layer dimensions {out_dim}x{in_dim} out of range"));
        }
        let weights = cur.f64s(out_dim * in_dim)?;
        let bias = cur.f64s(out_dim)?;
        layers.push(Layer {
            out_dim,
            in_dim,
            weights,
            bias,
        });
    }
    if cur.pos != bytes.len() {
        return Err("trailing bytes after parameters".into());
    }
    CapoParams::new(n, layers).map_err(|e| e.to_string())
}

pub fn read_params(path: &Path) -> Result<CapoParams> {
    let bytes = read_file(path)?;
    decode_params(&bytes).map_err(|r| Error::format(path, r))
}

pub fn write_params(params: &CapoParams, path: &Path) -> Result<()> {
    write_file(path, &encode_params(params))
}

/// Writes `header` then one line per row.
pub fn write_csv<I, R>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<str>,
{
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(row.as_ref());
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

/// Appends one line, writing `header` first when the file is new or empty.
pub fn append_csv(path: &Path, header: &str, row: &str) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(header);
        text.push('\n');
    }
    text.push_str(row);
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
