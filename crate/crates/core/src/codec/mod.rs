//! Message codec: channel compression, binary16 quantization, the
//! little-endian wire format, bit accounting and budget admission.

mod budget;
mod compress;
pub mod f16;
mod size;
mod wire;

pub use budget::{BudgetLedger, Rejection};
pub use compress::{compress_cells, decompress_scatter, CompressionPair};
pub use f16::{dequantize_f16, quantize_f16};
pub use size::{message_size_bits, SizeModel};
pub use wire::{decode_message, encode_message, SparseMessage, HEADER_BYTES, VERSION};
