//! Grid value types and their on-disk formats.
//!
//! Layout is row-major with the channel axis last: element `(i, j, c)` of an
//! `h × w × c` grid lives at `(i * w + j) * c + c`.
//!
//! The `NSGT` tensor file is
//!
//! ```text
//! "NSGT" | u32 flags_ndim | u32 h | u32 w | u32 c | payload
//! ```
//!
//! all little-endian. The low 16 bits of `flags_ndim` hold the rank (always
//! 3); bit 31 marks an integer payload (`u64` token indices) instead of the
//! default `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{domain_err, shape_err, Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"NSGT";
const INTEGER_PAYLOAD: u32 = 1 << 31;
const RANK_MASK: u32 = 0xFFFF;

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(p) => domain_err(format!("non-finite value at flat index {p}")),
        None => Ok(()),
    }
}

/// A single-channel `height × width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return shape_err(format!("grid dims must be positive, got {height}x{width}"));
        }
        if values.len() != height * width {
            return shape_err(format!(
                "expected {} values for {height}x{width}, got {}",
                height * width,
                values.len()
            ));
        }
        check_finite(&values)?;
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0);
        Self { height, width, values: vec![0.0; height * width] }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && value.is_finite());
        Self { height, width, values: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(height, width, values)
    }

    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Views this grid as an `h × w × 1` tensor.
    pub fn to_grid3(&self) -> Grid3D {
        Grid3D::from_raw(self.height, self.width, 1, self.values.clone())
    }
}

/// A real-valued `height × width × channels` grid (features or logits).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3D {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Grid3D {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return shape_err(format!(
                "grid dims must be positive, got {height}x{width}x{channels}"
            ));
        }
        let n = height * width * channels;
        if values.len() != n {
            return shape_err(format!(
                "expected {n} values for {height}x{width}x{channels}, got {}",
                values.len()
            ));
        }
        check_finite(&values)?;
        Ok(Self { height, width, channels, values })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0 && channels > 0);
        Self { height, width, channels, values: vec![0.0; height * width * channels] }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0 && value.is_finite());
        Self { height, width, channels, values: vec![value; height * width * channels] }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    values.push(f(i, j, c));
                }
            }
        }
        Self::new(height, width, channels, values)
    }

    /// Stacks equally-sized single-channel grids along the channel axis.
    pub fn from_channels(planes: &[Grid2D]) -> Result<Self> {
        let Some(first) = planes.first() else {
            return shape_err("cannot stack zero channels");
        };
        let (h, w) = first.dims();
        if planes.iter().any(|p| p.dims() != (h, w)) {
            return shape_err("channel planes differ in size");
        }
        let c = planes.len();
        let mut values = vec![0.0; h * w * c];
        for (ch, plane) in planes.iter().enumerate() {
            for (p, v) in plane.values().iter().enumerate() {
                values[p * c + ch] = *v;
            }
        }
        Ok(Self::from_raw(h, w, c, values))
    }

    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width * channels);
        Self { height, width, channels, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.values[(i * self.width + j) * self.channels + c]
    }

    /// The channel vector at location `(i, j)`.
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.width + j) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn channel(&self, c: usize) -> Grid2D {
        assert!(c < self.channels);
        let values = self.values.iter().skip(c).step_by(self.channels).copied().collect();
        Grid2D::from_raw(self.height, self.width, values)
    }

    pub fn channel_planes(&self) -> Vec<Grid2D> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    pub fn same_shape(&self, other: &Grid3D) -> bool {
        self.dims() == other.dims()
    }

    /// Elementwise `a·self + b·other`.
    pub fn affine(&self, a: f64, other: &Grid3D, b: f64) -> Result<Grid3D> {
        if !self.same_shape(other) {
            return shape_err(format!(
                "shape mismatch: {:?} vs {:?}",
                self.dims(),
                other.dims()
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self::from_raw(self.height, self.width, self.channels, values))
    }

    pub fn mse(&self, other: &Grid3D) -> Result<f64> {
        if !self.same_shape(other) {
            return shape_err(format!(
                "shape mismatch: {:?} vs {:?}",
                self.dims(),
                other.dims()
            ));
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(sum / self.values.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Grid3D) -> f64 {
        assert!(self.same_shape(other));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A grid of codebook indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMap {
    height: usize,
    width: usize,
    indices: Vec<usize>,
}

impl TokenMap {
    pub fn new(height: usize, width: usize, indices: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 {
            return shape_err(format!("token map dims must be positive, got {height}x{width}"));
        }
        if indices.len() != height * width {
            return shape_err(format!(
                "expected {} indices for {height}x{width}, got {}",
                height * width,
                indices.len()
            ));
        }
        Ok(Self { height, width, indices })
    }

    pub fn filled(height: usize, width: usize, index: usize) -> Self {
        assert!(height > 0 && width > 0);
        Self { height, width, indices: vec![index; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.indices[i * self.width + j]
    }

    /// Checks every index against a vocabulary size.
    pub fn validate(&self, vocab: usize) -> Result<()> {
        match self.indices.iter().find(|&&t| t >= vocab) {
            Some(t) => domain_err(format!("token index {t} out of range for vocabulary {vocab}")),
            None => Ok(()),
        }
    }

    /// Fraction of positions where `self` and `other` agree.
    pub fn agreement(&self, other: &TokenMap) -> Result<f64> {
        if self.dims() != other.dims() {
            return shape_err("token map shape mismatch");
        }
        let same = self.indices.iter().zip(&other.indices).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.indices.len() as f64)
    }
}

fn write_header(w: &mut impl Write, flags: u32, dims: [usize; 3]) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(flags | 3).to_le_bytes())?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

struct Header {
    integer: bool,
    dims: [usize; 3],
}

const HEADER_LEN: usize = 20;

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::Format("bad magic, expected NSGT".into()));
    }
    let word = read_u32(bytes, 4);
    let rank = word & RANK_MASK;
    if rank != 3 {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    if word & !(RANK_MASK | INTEGER_PAYLOAD) != 0 {
        return Err(Error::Format(format!("unknown header flags {word:#x}")));
    }
    let dims = [read_u32(bytes, 8), read_u32(bytes, 12), read_u32(bytes, 16)].map(|d| d as usize);
    if dims.contains(&0) {
        return Err(Error::Format(format!("zero dimension in {dims:?}")));
    }
    Ok(Header { integer: word & INTEGER_PAYLOAD != 0, dims })
}

fn payload<'a>(bytes: &'a [u8], header: &Header) -> Result<&'a [u8]> {
    let n = header
        .dims
        .iter()
        .try_fold(8usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != n {
        return Err(Error::Format(format!(
            "payload is {} bytes, dims {:?} need {n}",
            body.len(),
            header.dims
        )));
    }
    Ok(body)
}

/// Writes `grid` as an `NSGT` float tensor. Non-finite grids are rejected
/// before the file is created.
pub fn save_tensor(grid: &Grid3D, path: impl AsRef<Path>) -> Result<()> {
    check_finite(grid.values())?;
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, 0, [grid.height, grid.width, grid.channels])?;
    for v in &grid.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Grid3D> {
    let bytes = read_all(path)?;
    let header = parse_header(&bytes)?;
    if header.integer {
        return Err(Error::Format("file holds an integer payload, expected floats".into()));
    }
    let body = payload(&bytes, &header)?;
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite value in payload".into()));
    }
    let [h, w, c] = header.dims;
    Ok(Grid3D::from_raw(h, w, c, values))
}

/// Writes a token map as an `NSGT` tensor with an integer payload, shape `h × w × 1`.
pub fn save_tokens(tokens: &TokenMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, INTEGER_PAYLOAD, [tokens.height, tokens.width, 1])?;
    for &t in &tokens.indices {
        w.write_all(&(t as u64).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_tokens(path: impl AsRef<Path>) -> Result<TokenMap> {
    let bytes = read_all(path)?;
    let header = parse_header(&bytes)?;
    if !header.integer {
        return Err(Error::Format("file holds a float payload, expected token indices".into()));
    }
    let [h, w, c] = header.dims;
    if c != 1 {
        return Err(Error::Format(format!("token file must have one channel, got {c}")));
    }
    let body = payload(&bytes, &header)?;
    let indices = body
        .chunks_exact(8)
        .map(|b| {
            usize::try_from(u64::from_le_bytes(b.try_into().unwrap()))
                .map_err(|_| Error::Format("token index exceeds usize".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenMap { height: h, width: w, indices })
}

fn read_all(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1-channel grid as PGM (P5) or a 3-channel grid as PPM (P6).
/// Values are clamped to `[0, 1]` and mapped to 8 bits.
pub fn write_image(grid: &Grid3D, path: impl AsRef<Path>) -> Result<()> {
    let magic = match grid.channels {
        1 => "P5",
        3 => "P6",
        c => return shape_err(format!("images need 1 or 3 channels, got {c}")),
    };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "{magic}\n{} {}\n255\n", grid.width, grid.height)?;
    let bytes: Vec<u8> = grid.values.iter().map(|&v| to_byte(v)).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn write_pgm(grid: &Grid2D, path: impl AsRef<Path>) -> Result<()> {
    write_image(&grid.to_grid3(), path)
}

/// Reads a binary PGM/PPM with maxval 255 into `[0, 1]` values.
pub fn read_image(path: impl AsRef<Path>) -> Result<Grid3D> {
    let bytes = read_all(path)?;
    let mut pos = 0;
    let mut next_token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated image header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match next_token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Format(format!("unsupported image magic {m:?}"))),
    };
    let mut number = |what: &str| -> Result<usize> {
        next_token()?
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("malformed image {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("only maxval 255 is supported, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = width * height * channels;
    if bytes.len() < start + n {
        return Err(Error::Format("truncated image raster".into()));
    }
    let values = bytes[start..start + n].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Grid3D::from_raw(height, width, channels, values))
}
