//! QR Model 2 encoder, byte mode only.
//!
//! Picks the smallest version that fits, appends Reed-Solomon codewords per
//! block, interleaves, places codewords in the zigzag order and applies the
//! mask with the lowest penalty score.

mod gf256;
mod matrix;
pub mod reed_solomon;
mod render;
mod tables;

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

pub use matrix::{codeword_positions, function_modules};
pub use render::{QUIET_ZONE, RenderFormat, render_qr};

pub const MIN_VERSION: u8 = 1;
pub const MAX_VERSION: u8 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EccLevel {
    L,
    M,
    Q,
    H,
}

impl EccLevel {
    fn ordinal(self) -> usize {
        self as usize
    }

    /// Two-bit value in the format information.
    pub fn format_bits(self) -> u16 {
        match self {
            EccLevel::L => 1,
            EccLevel::M => 0,
            EccLevel::Q => 3,
            EccLevel::H => 2,
        }
    }
}

impl FromStr for EccLevel {
    type Err = QrError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L" | "l" => Ok(EccLevel::L),
            "M" | "m" => Ok(EccLevel::M),
            "Q" | "q" => Ok(EccLevel::Q),
            "H" | "h" => Ok(EccLevel::H),
            _ => Err(QrError::UnknownEccLevel),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum QrError {
    #[error("payload of {len} bytes exceeds the {max}-byte capacity at this level")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("unknown error correction level")]
    UnknownEccLevel,
    #[error("mask id must be 0-7")]
    BadMask,
}

/// Side length in modules for a version.
pub fn side_for_version(version: u8) -> usize {
    17 + 4 * version as usize
}

/// Modules available for codewords and remainder bits.
pub(crate) fn raw_data_modules(version: u8) -> usize {
    let v = version as usize;
    let mut result = (16 * v + 128) * v + 64;
    if v >= 2 {
        let num_align = v / 7 + 2;
        result -= (25 * num_align - 10) * num_align - 55;
        if v >= 7 {
            result -= 36;
        }
    }
    result
}

/// Total codewords (data plus ECC).
pub fn total_codewords(version: u8) -> usize {
    raw_data_modules(version) / 8
}

pub fn ecc_codewords_per_block(version: u8, level: EccLevel) -> usize {
    tables::ECC_CODEWORDS_PER_BLOCK[level.ordinal()][version as usize] as usize
}

pub fn num_blocks(version: u8, level: EccLevel) -> usize {
    tables::NUM_ERROR_CORRECTION_BLOCKS[level.ordinal()][version as usize] as usize
}

pub fn data_codewords(version: u8, level: EccLevel) -> usize {
    total_codewords(version) - ecc_codewords_per_block(version, level) * num_blocks(version, level)
}

fn char_count_bits(version: u8) -> usize {
    if version <= 9 { 8 } else { 16 }
}

/// Largest byte-mode payload for a version and level.
pub fn byte_capacity(version: u8, level: EccLevel) -> usize {
    let bits = data_codewords(version, level) * 8;
    let header = 4 + char_count_bits(version);
    let by_bits = (bits - header) / 8;
    by_bits.min((1 << char_count_bits(version)) - 1)
}

/// Block index of every codeword in final (interleaved) order.
pub fn interleaved_block_map(version: u8, level: EccLevel) -> Vec<usize> {
    let layout = BlockLayout::new(version, level);
    let mut map = Vec::with_capacity(layout.total);
    for i in 0..layout.long_data_len() {
        for b in 0..layout.blocks {
            if i < layout.data_len(b) {
                map.push(b);
            }
        }
    }
    for _ in 0..layout.ecc_len {
        map.extend(0..layout.blocks);
    }
    map
}

struct BlockLayout {
    blocks: usize,
    ecc_len: usize,
    short_blocks: usize,
    short_len: usize,
    total: usize,
}

impl BlockLayout {
    fn new(version: u8, level: EccLevel) -> Self {
        let blocks = num_blocks(version, level);
        let total = total_codewords(version);
        BlockLayout {
            blocks,
            ecc_len: ecc_codewords_per_block(version, level),
            short_blocks: blocks - total % blocks,
            short_len: total / blocks,
            total,
        }
    }

    fn data_len(&self, block: usize) -> usize {
        self.short_len - self.ecc_len + usize::from(block >= self.short_blocks)
    }

    fn long_data_len(&self) -> usize {
        self.short_len - self.ecc_len + usize::from(self.short_blocks < self.blocks)
    }
}

/// Encoded symbol. Modules are row-major, `true` is dark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrSymbol {
    pub version: u8,
    pub ecc_level: EccLevel,
    pub mask_id: u8,
    side: usize,
    modules: Vec<bool>,
}

impl QrSymbol {
    pub fn side(&self) -> usize {
        self.side
    }

    /// Module at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.modules[y * self.side + x]
    }

    pub fn modules(&self) -> &[bool] {
        &self.modules
    }

    /// Inverts one module; used for damage simulation.
    pub fn flip(&mut self, x: usize, y: usize) {
        let i = y * self.side + x;
        self.modules[i] = !self.modules[i];
    }

    /// The 15 format bits read back from the primary copy around the
    /// top-left finder.
    pub fn read_format_bits(&self) -> u16 {
        let mut bits = 0u16;
        let mut put = |i: usize, x: usize, y: usize| {
            if self.get(x, y) {
                bits |= 1 << i;
            }
        };
        for i in 0..6 {
            put(i, 8, i);
        }
        put(6, 8, 7);
        put(7, 8, 8);
        put(8, 7, 8);
        for i in 9..15 {
            put(i, 14 - i, 8);
        }
        bits
    }
}

impl fmt::Display for QrSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.side {
            for x in 0..self.side {
                f.write_str(if self.get(x, y) { "##" } else { "  " })?;
            }
            f.write_str("\n")?;
        }
        Ok(())
    }
}

struct BitBuffer(Vec<bool>);

impl BitBuffer {
    fn push(&mut self, value: u32, len: usize) {
        for i in (0..len).rev() {
            self.0.push(value >> i & 1 == 1);
        }
    }
}

fn data_codeword_stream(payload: &[u8], version: u8, level: EccLevel) -> Vec<u8> {
    let capacity_bits = data_codewords(version, level) * 8;
    let mut bits = BitBuffer(Vec::with_capacity(capacity_bits));
    bits.push(0b0100, 4);
    bits.push(payload.len() as u32, char_count_bits(version));
    for &b in payload {
        bits.push(u32::from(b), 8);
    }
    let terminator = (capacity_bits - bits.0.len()).min(4);
    bits.push(0, terminator);
    let pad_to_byte = (8 - bits.0.len() % 8) % 8;
    bits.push(0, pad_to_byte);
    let mut bytes: Vec<u8> = bits
        .0
        .chunks(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| acc << 1 | u8::from(b)))
        .collect();
    for pad in [0xEC, 0x11].into_iter().cycle() {
        if bytes.len() >= capacity_bits / 8 {
            break;
        }
        bytes.push(pad);
    }
    bytes
}

/// Splits data into blocks, appends ECC and interleaves.
fn add_ecc_and_interleave(data: &[u8], version: u8, level: EccLevel) -> Vec<u8> {
    let layout = BlockLayout::new(version, level);
    let generator = reed_solomon::generator(layout.ecc_len);
    let mut blocks: Vec<(Vec<u8>, Vec<u8>)> = Vec::with_capacity(layout.blocks);
    let mut offset = 0;
    for b in 0..layout.blocks {
        let len = layout.data_len(b);
        let chunk = data[offset..offset + len].to_vec();
        offset += len;
        let ecc = reed_solomon::remainder(&chunk, &generator);
        blocks.push((chunk, ecc));
    }
    debug_assert_eq!(offset, data.len());
    let mut out = Vec::with_capacity(layout.total);
    for i in 0..layout.long_data_len() {
        out.extend(blocks.iter().filter_map(|(d, _)| d.get(i)));
    }
    for i in 0..layout.ecc_len {
        out.extend(blocks.iter().map(|(_, e)| e[i]));
    }
    out
}

/// Data and ECC codewords of each block, in block order, for a payload
/// already placed at `version`.
pub fn codeword_blocks(payload: &[u8], version: u8, level: EccLevel) -> Vec<Vec<u8>> {
    let data = data_codeword_stream(payload, version, level);
    let interleaved = add_ecc_and_interleave(&data, version, level);
    let map = interleaved_block_map(version, level);
    let mut blocks = alloc::vec![Vec::new(); num_blocks(version, level)];
    for (cw, &b) in interleaved.iter().zip(&map) {
        blocks[b].push(*cw);
    }
    blocks
}

/// Smallest version whose byte-mode capacity at `level` holds `len` bytes.
pub fn smallest_version(len: usize, level: EccLevel) -> Option<u8> {
    (MIN_VERSION..=MAX_VERSION).find(|&v| byte_capacity(v, level) >= len)
}

/// Encodes `payload` in byte mode with automatic mask selection.
pub fn encode_qr(payload: &[u8], level: EccLevel) -> Result<QrSymbol, QrError> {
    encode_qr_with_mask(payload, level, None)
}

pub fn encode_qr_with_mask(payload: &[u8], level: EccLevel, mask: Option<u8>) -> Result<QrSymbol, QrError> {
    if mask.is_some_and(|m| m > 7) {
        return Err(QrError::BadMask);
    }
    let version = smallest_version(payload.len(), level).ok_or(QrError::PayloadTooLarge {
        len: payload.len(),
        max: byte_capacity(MAX_VERSION, level),
    })?;
    let data = data_codeword_stream(payload, version, level);
    let codewords = add_ecc_and_interleave(&data, version, level);
    let (mask_id, modules) = matrix::build(version, level, &codewords, mask);
    Ok(QrSymbol {
        version,
        ecc_level: level,
        mask_id,
        side: side_for_version(version),
        modules,
    })
}

/// 15-bit format word for a level and mask, BCH-protected and XOR-masked.
pub fn format_word(level: EccLevel, mask_id: u8) -> u16 {
    let data = level.format_bits() << 3 | u16::from(mask_id);
    let mut rem = data;
    for _ in 0..10 {
        rem = (rem << 1) ^ ((rem >> 9) * 0x537);
    }
    ((data << 10) | (rem & 0x3FF)) ^ 0x5412
}

/// 18-bit version word for versions 7 and up.
pub fn version_word(version: u8) -> u32 {
    let mut rem = u32::from(version);
    for _ in 0..12 {
        rem = (rem << 1) ^ ((rem >> 11) * 0x1F25);
    }
    u32::from(version) << 12 | (rem & 0xFFF)
}
