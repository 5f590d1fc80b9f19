//! Output-resolution tensors and the PFT1 binary format.
//!
//! PFT1 layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "PFT1"
//! 4       4           ndim (u32, always 3 for field tensors)
//! 8       8 * ndim    dims (u64 each): channels, height, width
//! ..      4           downsample factor f_d (u32)
//! ..      4           input image width (u32)
//! ..      4           input image height (u32)
//! ..      4           reserved flags (u32, must be zero)
//! ..      4 * numel   f32 data, row-major (c, i, j)
//! ```
//!
//! A file is therefore exactly `24 + 8 * ndim + 4 * numel` bytes.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PFT1";

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("data length {got} does not match {channels}x{height}x{width}")]
    Length {
        got: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("field set members disagree: {0}")]
    Mismatch(String),
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

/// How an output grid relates to the input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridMeta {
    pub fd: u32,
    pub image_width: u32,
    pub image_height: u32,
}

impl GridMeta {
    pub fn new(fd: u32, image_width: u32, image_height: u32) -> Result<Self, FieldError> {
        if fd == 0 || image_width == 0 || image_height == 0 {
            return Err(FieldError::Grid(format!(
                "f_d={fd}, image {image_width}x{image_height}"
            )));
        }
        Ok(Self {
            fd,
            image_width,
            image_height,
        })
    }

    pub fn height(&self) -> usize {
        self.image_height.div_ceil(self.fd) as usize
    }

    pub fn width(&self) -> usize {
        self.image_width.div_ceil(self.fd) as usize
    }

    /// Input-space center of cell `(i, j)`: `((j + 0.5) f_d, (i + 0.5) f_d)`.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let fd = self.fd as f64;
        ((j as f64 + 0.5) * fd, (i as f64 + 0.5) * fd)
    }

    /// Cell containing the input-space point, clamped to the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let fd = self.fd as f64;
        let clamp = |v: f64, n: usize| -> usize {
            if v.is_nan() || v < 0.0 {
                0
            } else {
                (v as usize).min(n - 1)
            }
        };
        (clamp(y / fd, self.height()), clamp(x / fd, self.width()))
    }
}

/// A `(channels, height, width)` grid of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    channels: usize,
    grid: GridMeta,
    data: Vec<f32>,
}

impl FieldTensor {
    pub fn new(channels: usize, grid: GridMeta, data: Vec<f32>) -> Result<Self, FieldError> {
        let (height, width) = (grid.height(), grid.width());
        if data.len() != channels * height * width {
            return Err(FieldError::Length {
                got: data.len(),
                channels,
                height,
                width,
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite {
                index,
                value: data[index],
            });
        }
        Ok(Self {
            channels,
            grid,
            data,
        })
    }

    pub fn zeros(channels: usize, grid: GridMeta) -> Self {
        Self::filled(channels, grid, 0.0)
    }

    pub fn filled(channels: usize, grid: GridMeta, value: f32) -> Self {
        assert!(value.is_finite());
        Self {
            channels,
            grid,
            data: vec![value; channels * grid.height() * grid.width()],
        }
    }

    /// Builds a tensor by evaluating `f(c, i, j)` at every element.
    pub fn from_fn(
        channels: usize,
        grid: GridMeta,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, FieldError> {
        let (h, w) = (grid.height(), grid.width());
        let mut data = Vec::with_capacity(channels * h * w);
        for c in 0..channels {
            for i in 0..h {
                for j in 0..w {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::new(channels, grid, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height(), self.width())
    }

    pub fn grid(&self) -> GridMeta {
        self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height() + i) * self.width() + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[self.index(c, i, j)]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height() * self.width();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn same_shape(&self, other: &FieldTensor) -> bool {
        self.dims() == other.dims()
    }

    pub fn same_layout(&self, other: &FieldTensor) -> bool {
        self.channels == other.channels && self.grid == other.grid
    }

    /// Number of bytes [`write_tensor`] emits for this tensor.
    pub fn encoded_len(&self) -> u64 {
        24 + 8 * 3 + 4 * self.data.len() as u64
    }
}

/// The bundle `{F_m, F_n, F_s, F_x, F_y}` for one image.
///
/// PAF channels are interleaved `(m, n)` per limb; offset channels are
/// interleaved `(x, y)` per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub heatmaps: FieldTensor,
    pub pafs: FieldTensor,
    pub offsets: FieldTensor,
}

impl FieldSet {
    pub fn new(
        heatmaps: FieldTensor,
        pafs: FieldTensor,
        offsets: FieldTensor,
    ) -> Result<Self, FieldError> {
        if heatmaps.grid() != pafs.grid() || heatmaps.grid() != offsets.grid() {
            return Err(FieldError::Mismatch(format!(
                "grids {:?} / {:?} / {:?}",
                heatmaps.grid(),
                pafs.grid(),
                offsets.grid()
            )));
        }
        if pafs.channels() % 2 != 0 || offsets.channels() % 2 != 0 {
            return Err(FieldError::Mismatch(
                "PAF and offset channel counts must be even".into(),
            ));
        }
        Ok(Self {
            heatmaps,
            pafs,
            offsets,
        })
    }

    pub fn grid(&self) -> GridMeta {
        self.heatmaps.grid()
    }

    pub fn same_layout(&self, other: &FieldSet) -> bool {
        self.heatmaps.same_layout(&other.heatmaps)
            && self.pafs.same_layout(&other.pafs)
            && self.offsets.same_layout(&other.offsets)
    }
}

fn io_err(context: &str) -> impl FnOnce(io::Error) -> FieldError + '_ {
    move |source| FieldError::Io {
        context: context.to_string(),
        source,
    }
}

/// Writes `t` in PFT1 format and returns the number of bytes written.
pub fn write_tensor<W: Write>(t: &FieldTensor, sink: &mut W) -> Result<u64, FieldError> {
    if let Some(index) = t.data.iter().position(|v| !v.is_finite()) {
        return Err(FieldError::NonFinite {
            index,
            value: t.data[index],
        });
    }
    let (c, h, w) = t.dims();
    let mut header = Vec::with_capacity(48);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&3u32.to_le_bytes());
    for d in [c, h, w] {
        header.extend_from_slice(&(d as u64).to_le_bytes());
    }
    let g = t.grid();
    for v in [g.fd, g.image_width, g.image_height, 0u32] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&header).map_err(io_err("writing PFT1 header"))?;

    let mut body = Vec::with_capacity(4 * t.data.len());
    for v in &t.data {
        body.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&body).map_err(io_err("writing PFT1 data"))?;
    Ok((header.len() + body.len()) as u64)
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn exact<const N: usize>(&mut self, what: &str) -> Result<[u8; N], FieldError> {
        let mut buf = [0u8; N];
        let start = self.offset;
        let mut filled = 0;
        while filled < N {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(FieldError::Format {
                        offset: start + filled as u64,
                        reason: format!("truncated while reading {what}"),
                    })
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(FieldError::Io {
                        context: format!("reading {what} at byte {}", start + filled as u64),
                        source,
                    })
                }
            }
        }
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32, FieldError> {
        Ok(u32::from_le_bytes(self.exact::<4>(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FieldError> {
        Ok(u64::from_le_bytes(self.exact::<8>(what)?))
    }
}

/// Reads one PFT1 tensor from `source`.
pub fn read_tensor<R: Read>(source: &mut R) -> Result<FieldTensor, FieldError> {
    let mut r = CountingReader {
        inner: source,
        offset: 0,
    };
    let magic = r.exact::<4>("magic")?;
    if &magic != MAGIC {
        return Err(FieldError::Format {
            offset: 0,
            reason: format!("bad magic {:?}", String::from_utf8_lossy(&magic)),
        });
    }
    let ndim_at = r.offset;
    let ndim = r.u32("ndim")?;
    if ndim != 3 {
        return Err(FieldError::Format {
            offset: ndim_at,
            reason: format!("expected 3 dimensions, got {ndim}"),
        });
    }
    let mut dims = [0usize; 3];
    let mut numel: u64 = 1;
    for d in dims.iter_mut() {
        let at = r.offset;
        let v = r.u64("dimension")?;
        numel = numel
            .checked_mul(v)
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| FieldError::Format {
                offset: at,
                reason: "element count overflows".into(),
            })?;
        *d = usize::try_from(v).map_err(|_| FieldError::Format {
            offset: at,
            reason: format!("dimension {v} exceeds address space"),
        })?;
    }
    let meta_at = r.offset;
    let fd = r.u32("f_d")?;
    let image_width = r.u32("image width")?;
    let image_height = r.u32("image height")?;
    let flags_at = r.offset;
    let flags = r.u32("flags")?;
    if flags != 0 {
        return Err(FieldError::Format {
            offset: flags_at,
            reason: format!("unsupported flags {flags:#x}"),
        });
    }
    let grid = GridMeta::new(fd, image_width, image_height).map_err(|e| FieldError::Format {
        offset: meta_at,
        reason: e.to_string(),
    })?;
    if (dims[1], dims[2]) != (grid.height(), grid.width()) {
        return Err(FieldError::Format {
            offset: 16,
            reason: format!(
                "grid {}x{} inconsistent with image {image_width}x{image_height} at f_d={fd}",
                dims[1], dims[2]
            ),
        });
    }

    // Bounded by the bytes actually present, so a lying header cannot force a
    // huge allocation.
    let data_at = r.offset;
    let want = numel * 4;
    let mut bytes = Vec::new();
    r.inner
        .by_ref()
        .take(want)
        .read_to_end(&mut bytes)
        .map_err(|source| FieldError::Io {
            context: format!("reading data at byte {data_at}"),
            source,
        })?;
    if (bytes.len() as u64) < want {
        return Err(FieldError::Format {
            offset: data_at + bytes.len() as u64,
            reason: format!("truncated data: expected {want} bytes, found {}", bytes.len()),
        });
    }
    let mut data = Vec::with_capacity(numel as usize);
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(FieldError::Format {
                offset: data_at + 4 * k as u64,
                reason: format!("non-finite value {v}"),
            });
        }
        data.push(v);
    }
    FieldTensor::new(dims[0], grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> FieldTensor {
        FieldTensor::new(1, GridMeta::new(8, 8, 8).unwrap(), vec![0.0]).unwrap()
    }

    #[test]
    fn grid_uses_ceil_division() {
        let g = GridMeta::new(8, 370, 365).unwrap();
        assert_eq!((g.height(), g.width()), (46, 47));
        assert_eq!(g.cell_center(0, 2), (20.0, 4.0));
        assert_eq!(g.cell_of(20.0, 4.0), (0, 2));
        assert_eq!(g.cell_of(1e9, -3.0), (0, 46));
    }

    #[test]
    fn smallest_tensor_layout() {
        let mut buf = Vec::new();
        let n = write_tensor(&unit(), &mut buf).unwrap();
        assert_eq!(n, 52);
        assert_eq!(buf.len(), 52);
        assert_eq!(&buf[..4], b"PFT1");
        assert_eq!(&buf[4..8], &3u32.to_le_bytes());
        assert_eq!(&buf[48..], &0f32.to_le_bytes());
        assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), unit());
    }

    #[test]
    fn nan_rejected_before_writing() {
        let g = GridMeta::new(8, 8, 8).unwrap();
        assert!(matches!(
            FieldTensor::new(1, g, vec![f32::NAN]),
            Err(FieldError::NonFinite { index: 0, .. })
        ));
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut buf = Vec::new();
        write_tensor(&unit(), &mut buf).unwrap();
        buf[0] = b'X';
        match read_tensor(&mut buf.as_slice()) {
            Err(FieldError::Format { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn oversized_header_is_truncation() {
        // 2^32 elements declared (65536 x 1 x 65536 would not match the grid,
        // so declare a grid that does) with only 8 data bytes present.
        let mut buf = Vec::new();
        buf.extend_from_slice(b"PFT1");
        buf.extend_from_slice(&3u32.to_le_bytes());
        for d in [1u64, 65536, 65536] {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in [1u32, 65536, 65536, 0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&[0u8; 8]);
        match read_tensor(&mut buf.as_slice()) {
            Err(FieldError::Format { offset, reason }) => {
                assert_eq!(offset, 56);
                assert!(reason.contains("truncated"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overflowing_dims_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"PFT1");
        buf.extend_from_slice(&3u32.to_le_bytes());
        for d in [u64::MAX, 2, 2] {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        assert!(matches!(
            read_tensor(&mut buf.as_slice()),
            Err(FieldError::Format { offset: 8, .. })
        ));
    }

    #[test]
    fn nonzero_flags_rejected() {
        let mut buf = Vec::new();
        write_tensor(&unit(), &mut buf).unwrap();
        buf[44] = 1;
        assert!(matches!(
            read_tensor(&mut buf.as_slice()),
            Err(FieldError::Format { offset: 44, .. })
        ));
    }

    #[test]
    fn field_set_requires_shared_grid() {
        let a = GridMeta::new(8, 16, 16).unwrap();
        let b = GridMeta::new(8, 24, 16).unwrap();
        let err = FieldSet::new(
            FieldTensor::zeros(3, a),
            FieldTensor::zeros(2, b),
            FieldTensor::zeros(4, a),
        );
        assert!(matches!(err, Err(FieldError::Mismatch(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            fd in prop::sample::select(vec![1u32, 2, 4, 8, 16, 32]),
            w in 1u32..80,
            h in 1u32..80,
            channels in 1usize..4,
            seed in any::<u64>(),
        ) {
            let grid = GridMeta::new(fd, w, h).unwrap();
            let mut state = seed;
            let t = FieldTensor::from_fn(channels, grid, |_, _, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = f32::from_bits((state >> 32) as u32);
                if v.is_finite() { v } else { -0.0 }
            }).unwrap();
            let mut buf = Vec::new();
            let n = write_tensor(&t, &mut buf).unwrap();
            prop_assert_eq!(n as usize, buf.len());
            prop_assert_eq!(n, 24 + 8 * 3 + 4 * t.len() as u64);
            let back = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            prop_assert_eq!(back.grid(), t.grid());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
