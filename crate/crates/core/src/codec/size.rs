/// `header + k * index_bits + k * C' * value_bits`.
pub fn message_size_bits(k: u64, channels: u64, index_bits: u64, value_bits: u64, header_bits: u64) -> u64 {
    header_bits + k * index_bits + k * channels * value_bits
}

/// Bit cost model of one transmitted message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeModel {
    pub name: &'static str,
    pub channels: u64,
    pub index_bits: u64,
    pub value_bits: u64,
    pub header_bits: u64,
    /// Dense models ship every cell regardless of the selection ratio.
    pub dense: bool,
}

impl SizeModel {
    /// Full `C x H x W` float32 map, no indices, no header.
    pub fn dense_fp32(channels: u64) -> Self {
        Self {
            name: "dense_fp32",
            channels,
            index_bits: 0,
            value_bits: 32,
            header_bits: 0,
            dense: true,
        }
    }

    /// Selected cells at full width in float32, 32-bit index per cell.
    pub fn sparse_fp32(channels: u64) -> Self {
        Self {
            name: "sparse_fp32",
            channels,
            index_bits: 32,
            value_bits: 32,
            header_bits: 0,
            dense: false,
        }
    }

    /// This crate's wire format: compressed channels in binary16.
    pub fn sparse_fp16(compressed_channels: u64) -> Self {
        Self {
            name: "sparse_fp16",
            channels: compressed_channels,
            index_bits: 32,
            value_bits: 16,
            header_bits: 128,
            dense: false,
        }
    }

    /// Bits for one message selecting `k` of `cells` cells.
    pub fn bits(&self, k: u64, cells: u64) -> u64 {
        let k = if self.dense { cells } else { k };
        message_size_bits(k, self.channels, self.index_bits, self.value_bits, self.header_bits)
    }
}
