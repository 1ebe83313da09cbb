//! Labelling-platform brush dialect.
//!
//! Brush results are exported as a bit-packed run-length stream over the
//! flattened RGBA raster (4 values per pixel). The stream is MSB-first:
//!
//! ```text
//! u32  value count
//! u5   word size - 1
//! 4×u4 run-length field widths - 1   (the platform writes 3, 4, 8, 16)
//! then until `count` values are produced:
//!   u1   1 = repeat, 0 = literal chunk
//!   u2   index into the field widths
//!   uN   run length - 1
//!   repeat: one word repeated; literal: run-length words
//! ```
//!
//! The encoder reproduces the platform converter byte for byte, including its
//! habit of appending a full zero byte when the stream is already aligned.
//! Membership is read from the alpha channel.

use thiserror::Error;

use crate::mask::BinaryPlane;

const RUN_WIDTHS: [u32; 4] = [3, 4, 8, 16];
const CHANNELS: usize = 4;
/// Alpha at or above this value counts as painted.
pub const ALPHA_CUTOFF: u32 = 128;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("brush stream truncated at bit {0}")]
    Truncated(usize),
    #[error("brush stream encodes {actual} values, expected {expected} for {width}x{height} RGBA")]
    ValueCount {
        expected: u64,
        actual: u64,
        width: u32,
        height: u32,
    },
    #[error("brush byte {0} is out of range")]
    ByteRange(i64),
    #[error("run overflows the declared value count")]
    Overrun,
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn read(&mut self, width: u32) -> Result<u32, CodecError> {
        let mut out = 0u32;
        for _ in 0..width {
            let byte = *self
                .bytes
                .get(self.pos / 8)
                .ok_or(CodecError::Truncated(self.pos))?;
            let bit = (byte >> (7 - (self.pos % 8))) & 1;
            out = (out << 1) | bit as u32;
            self.pos += 1;
        }
        Ok(out)
    }
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    fn write(&mut self, value: u32, width: u32) {
        for i in (0..width).rev() {
            if self.len.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> i) & 1 == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 1 << (7 - (self.len % 8));
            }
            self.len += 1;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        // the converter pads with `8 - len % 8` zeros, so an aligned stream gains a byte
        let pad = 8 - (self.len % 8);
        self.write(0, pad as u32);
        self.bytes
    }
}

/// Decodes the raw value stream (all channels).
pub fn decode_values(bytes: &[u8]) -> Result<Vec<u32>, CodecError> {
    let mut r = BitReader { bytes, pos: 0 };
    let num = r.read(32)? as usize;
    let word = r.read(5)? + 1;
    let mut widths = [0u32; 4];
    for w in &mut widths {
        *w = r.read(4)? + 1;
    }
    let mut out = Vec::with_capacity(num);
    while out.len() < num {
        let repeat = r.read(1)? == 1;
        let width = widths[r.read(2)? as usize];
        let run = r.read(width)? as usize + 1;
        if out.len() + run > num {
            return Err(CodecError::Overrun);
        }
        if repeat {
            let v = r.read(word)?;
            out.extend(std::iter::repeat_n(v, run));
        } else {
            for _ in 0..run {
                out.push(r.read(word)?);
            }
        }
    }
    Ok(out)
}

/// Encodes a value stream with 8-bit words and repeat runs only.
pub fn encode_values(values: &[u8]) -> Vec<u8> {
    let mut w = BitWriter::default();
    w.write(values.len() as u32, 32);
    w.write(8 - 1, 5);
    for rw in RUN_WIDTHS {
        w.write(rw - 1, 4);
    }
    let mut i = 0;
    while i < values.len() {
        let v = values[i];
        let mut j = i;
        while j < values.len() && values[j] == v {
            j += 1;
        }
        let mut len = j - i;
        if len == 1 {
            w.write(0, 1);
            w.write(0, 2);
            w.write(0, 3);
        } else if len <= 8 {
            w.write(1, 1);
            w.write(0, 2);
            w.write((len - 1) as u32, 3);
        } else if len <= 16 {
            w.write(1, 1);
            w.write(1, 2);
            w.write((len - 1) as u32, 4);
        } else if len <= 256 {
            w.write(1, 1);
            w.write(2, 2);
            w.write((len - 1) as u32, 8);
        } else {
            // the converter emits 2^16 - 1 (meaning 65536) per full chunk
            while len > 1 << 16 {
                w.write(1, 1);
                w.write(3, 2);
                w.write((1 << 16) - 1, 16);
                w.write(v as u32, 8);
                len -= 1 << 16;
            }
            w.write(1, 1);
            w.write(3, 2);
            w.write((len - 1) as u32, 16);
        }
        w.write(v as u32, 8);
        i = j;
    }
    w.finish()
}

/// Encodes a plane as the platform does: every channel 255 where set.
pub fn encode_plane(plane: &BinaryPlane) -> Vec<u8> {
    let values: Vec<u8> = plane
        .bits()
        .iter()
        .flat_map(|&b| [if b { 255u8 } else { 0 }; CHANNELS])
        .collect();
    encode_values(&values)
}

pub fn decode_plane(bytes: &[u8], width: u32, height: u32) -> Result<BinaryPlane, CodecError> {
    let values = decode_values(bytes)?;
    let expected = width as u64 * height as u64 * CHANNELS as u64;
    if values.len() as u64 != expected {
        return Err(CodecError::ValueCount {
            expected,
            actual: values.len() as u64,
            width,
            height,
        });
    }
    let bits = values
        .chunks_exact(CHANNELS)
        .map(|px| px[CHANNELS - 1] >= ALPHA_CUTOFF)
        .collect();
    Ok(BinaryPlane::new(width, height, bits).expect("length checked above"))
}

/// Converts the JSON integer list the platform exports into bytes.
pub fn bytes_from_ints(ints: &[i64]) -> Result<Vec<u8>, CodecError> {
    ints.iter()
        .map(|&v| u8::try_from(v).map_err(|_| CodecError::ByteRange(v)))
        .collect()
}
