use std::fmt;

use crate::codec::f16::{dequantize_f16, quantize_f16};
use crate::error::{Error, Result};
use crate::tensor::SparseCells;

pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 16;

/// A shared sparse feature message.
///
/// Wire layout, little-endian:
///
/// ```text
/// offset  size  field
///      0     4  agent_id            u32
///      4     2  height              u16
///      6     2  width               u16
///      8     2  channels_compressed u16
///     10     4  cell_count (k)      u32
///     14     1  version             u8 (= 1)
///     15     1  reserved            u8 (= 0)
///     16   4 k  cell indices        u32, strictly ascending
///  16+4k  2 k C payload             binary16, cell-major
/// ```
///
/// Per-cell flags are reserved but not carried in version 1; every listed
/// cell reads as flagged.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseMessage {
    pub agent_id: u32,
    pub height: u16,
    pub width: u16,
    pub channels_compressed: u16,
    indices: Vec<u32>,
    payload: Vec<u16>,
}

impl SparseMessage {
    pub fn new(
        agent_id: u32,
        height: u16,
        width: u16,
        channels_compressed: u16,
        indices: Vec<u32>,
        payload: Vec<u16>,
    ) -> Result<Self> {
        let cells = height as usize * width as usize;
        validate_indices(&indices, cells)?;
        if payload.len() != indices.len() * channels_compressed as usize {
            return Err(Error::shape(
                "SparseMessage payload",
                indices.len() * channels_compressed as usize,
                payload.len(),
            ));
        }
        Ok(Self {
            agent_id,
            height,
            width,
            channels_compressed,
            indices,
            payload,
        })
    }

    /// Quantize a compressed cell set into a message.
    pub fn from_cells(agent_id: u32, cells: &SparseCells) -> Result<Self> {
        let s = cells.shape;
        let dim = |v: usize, name: &str| {
            u16::try_from(v).map_err(|_| Error::param(format!("{name} {v} does not fit in u16")))
        };
        let height = dim(s.height, "height")?;
        let width = dim(s.width, "width")?;
        let channels = dim(s.channels, "channel count")?;
        if cells.values.len() != cells.indices.len() * s.channels {
            return Err(Error::shape(
                "SparseMessage::from_cells",
                cells.indices.len() * s.channels,
                cells.values.len(),
            ));
        }
        let payload = cells.values.iter().map(|&v| quantize_f16(v)).collect();
        Self::new(agent_id, height, width, channels, cells.indices.clone(), payload)
    }

    pub fn cell_count(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn payload(&self) -> &[u16] {
        &self.payload
    }

    pub fn cell_payload(&self, i: usize) -> &[u16] {
        let c = self.channels_compressed as usize;
        &self.payload[i * c..(i + 1) * c]
    }

    /// Reserved per-cell flags (all set in version 1).
    pub fn mask_bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.indices.iter().map(|_| true)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + 4 * self.indices.len() + 2 * self.payload.len()
    }

    pub fn size_bits(&self) -> u64 {
        8 * self.encoded_len() as u64
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.agent_id.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.channels_compressed.to_le_bytes());
        out.extend_from_slice(&(self.indices.len() as u32).to_le_bytes());
        out.push(VERSION);
        out.push(0);
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let malformed = |why: String| Error::MalformedMessage(why);
        if bytes.len() < HEADER_BYTES {
            return Err(malformed(format!(
                "{} bytes is shorter than the {HEADER_BYTES}-byte header",
                bytes.len()
            )));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let agent_id = u32_at(0);
        let height = u16_at(4);
        let width = u16_at(6);
        let channels = u16_at(8);
        let k = u32_at(10) as usize;
        if bytes[14] != VERSION {
            return Err(malformed(format!("unsupported version {}", bytes[14])));
        }
        if bytes[15] != 0 {
            return Err(malformed(format!("reserved byte is {}", bytes[15])));
        }
        let expected = k
            .checked_mul(4 + 2 * channels as usize)
            .and_then(|b| b.checked_add(HEADER_BYTES));
        if expected != Some(bytes.len()) {
            return Err(malformed(format!(
                "length {} does not match header (k = {k}, channels = {channels})",
                bytes.len()
            )));
        }
        let indices: Vec<u32> = (0..k).map(|i| u32_at(HEADER_BYTES + 4 * i)).collect();
        let base = HEADER_BYTES + 4 * k;
        let payload: Vec<u16> = (0..k * channels as usize)
            .map(|i| u16_at(base + 2 * i))
            .collect();
        Self::new(agent_id, height, width, channels, indices, payload)
    }

    /// Human-readable dump for debugging.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SparseMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "version: {VERSION}")?;
        writeln!(f, "agent_id: {}", self.agent_id)?;
        writeln!(f, "grid: {}x{}", self.height, self.width)?;
        writeln!(f, "channels_compressed: {}", self.channels_compressed)?;
        writeln!(f, "cell_count: {}", self.cell_count())?;
        writeln!(f, "bytes: {}", self.encoded_len())?;
        for (i, &cell) in self.indices.iter().enumerate() {
            let (y, x) = (cell / self.width as u32, cell % self.width as u32);
            let values: Vec<String> = self
                .cell_payload(i)
                .iter()
                .map(|&b| format!("{}", dequantize_f16(b)))
                .collect();
            writeln!(f, "cell {cell} (y={y}, x={x}): [{}]", values.join(", "))?;
        }
        Ok(())
    }
}

fn validate_indices(indices: &[u32], cells: usize) -> Result<()> {
    for (pos, &i) in indices.iter().enumerate() {
        if i as usize >= cells {
            return Err(Error::IndexOutOfRange {
                index: i as usize,
                cells,
            });
        }
        if pos > 0 && indices[pos - 1] >= i {
            return Err(Error::NonAscendingIndices(pos));
        }
    }
    Ok(())
}

/// Quantize and serialize a compressed cell set.
pub fn encode_message(agent_id: u32, cells: &SparseCells) -> Result<Vec<u8>> {
    Ok(SparseMessage::from_cells(agent_id, cells)?.encode())
}

pub fn decode_message(bytes: &[u8]) -> Result<SparseMessage> {
    SparseMessage::decode(bytes)
}
