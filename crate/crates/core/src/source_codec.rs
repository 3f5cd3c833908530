//! Quality-factor image codec and the two-rectangle semantic source coder.
//!
//! Stream layout (all fields big-endian, bit-packed MSB first):
//!
//! ```text
//! "SJC1" (32) | width (16) | height (16) | channels (8) | quality (8) | rows (16)
//! rows x { 0xB7C3 (16) | payload bit length (24) | payload }
//! ```
//!
//! Each row holds one strip of 8x8 blocks, channels interleaved per block.
//! A block is coded as a signed Exp-Golomb DC delta (predictor reset at the
//! start of every row), zero or more `(ue(run + 1), se(level))` pairs over
//! the zigzag-ordered AC coefficients, and `ue(0)` as end-of-block.
//!
//! Decoding never fails once the header parses. Rows are located by
//! following the marker/length chain; a row whose framing is damaged is
//! skipped by scanning for the next position from which a complete chain
//! reaches the end of the stream. Any code violation inside a row turns the
//! rest of that row into mid-gray.

use serde::{Deserialize, Serialize};

use crate::bits::{BitBuf, BitReader};
use crate::error::{Error, Result};
use crate::imaging::{self, Image, Rect, RegionMask};

pub const MAGIC: [u8; 4] = *b"SJC1";
pub const ROW_MARKER: u16 = 0xB7C3;
pub const HEADER_BITS: usize = 96;
pub const ROW_OVERHEAD_BITS: usize = 40;
const ROW_LENGTH_BITS: u32 = 24;

/// Largest magnitude any quantized coefficient of an 8-bit block can take.
const LEVEL_LIMIT: i64 = 2048;
/// Longest admissible Exp-Golomb prefix.
const MAX_PREFIX: u32 = 20;
const MID_GRAY: u8 = 128;

const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Zigzag scan position -> natural (row-major) index.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21,
    28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54,
    47, 55, 62, 63,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableClass {
    Luma,
    Chroma,
}

/// Quantizer divisors in natural order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTable {
    entries: [u16; 64],
}

impl QuantTable {
    /// JPEG-convention scaling: `5000/q` below 50, `200 - 2q` above, entries
    /// clamped to `[1, 1024]`.
    pub fn for_quality(q: u8, class: TableClass) -> Result<Self> {
        check_quality(q)?;
        let q = q as f64;
        let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
        let base = match class {
            TableClass::Luma => &LUMA_BASE,
            TableClass::Chroma => &CHROMA_BASE,
        };
        let mut entries = [0u16; 64];
        for (e, &b) in entries.iter_mut().zip(base) {
            *e = (b as f64 * scale / 100.0).round().clamp(1.0, 1024.0) as u16;
        }
        Ok(QuantTable { entries })
    }

    pub fn entries(&self) -> &[u16; 64] {
        &self.entries
    }
}

fn check_quality(q: u8) -> Result<()> {
    if !(1..=100).contains(&q) {
        return Err(Error::domain(format!("quality factor {q} outside [1, 100]")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 8x8 orthonormal DCT-II

fn dct_basis() -> &'static [[f64; 8]; 8] {
    use std::sync::OnceLock;
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let cu = if u == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = cu * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
            }
        }
        m
    })
}

/// Forward 2-D DCT of a natural-order block.
pub fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let m = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| m[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| m[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Inverse 2-D DCT.
pub fn idct(coefs: &[f64; 64]) -> [f64; 64] {
    let m = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| m[u][x] * coefs[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| m[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// Quantizes with round-half-away-from-zero.
pub fn quantize(coefs: &[f64; 64], table: &QuantTable) -> [i32; 64] {
    let mut out = [0i32; 64];
    for k in 0..64 {
        out[k] = (coefs[k] / table.entries[k] as f64).round() as i32;
    }
    out
}

/// Dequantizes, inverse transforms and level-shifts back to 8-bit samples.
pub fn reconstruct(levels: &[i32; 64], table: &QuantTable) -> [u8; 64] {
    let mut coefs = [0.0; 64];
    for k in 0..64 {
        coefs[k] = levels[k] as f64 * table.entries[k] as f64;
    }
    let px = idct(&coefs);
    let mut out = [0u8; 64];
    for k in 0..64 {
        out[k] = (px[k] + 128.0).round().clamp(0.0, 255.0) as u8;
    }
    out
}

// ---------------------------------------------------------------------------
// Exp-Golomb

fn put_ue(out: &mut BitBuf, v: u64) {
    let x = v + 1;
    let n = 64 - x.leading_zeros();
    out.push_bits(0, n - 1);
    out.push_bits(x, n);
}

fn put_se(out: &mut BitBuf, v: i64) {
    let mapped = if v > 0 { 2 * v as u64 - 1 } else { 2 * v.unsigned_abs() };
    put_ue(out, mapped);
}

/// Bit length of `ue(v)`.
pub fn ue_len(v: u64) -> usize {
    let n = 64 - (v + 1).leading_zeros() as usize;
    2 * n - 1
}

/// Bit length of `se(v)`.
pub fn se_len(v: i64) -> usize {
    ue_len(if v > 0 { 2 * v as u64 - 1 } else { 2 * v.unsigned_abs() })
}

#[derive(Debug)]
struct Violation;

fn get_ue(r: &mut BitReader<'_>) -> std::result::Result<u64, Violation> {
    let mut zeros = 0u32;
    loop {
        match r.bit() {
            Some(true) => break,
            Some(false) => {
                zeros += 1;
                if zeros > MAX_PREFIX {
                    return Err(Violation);
                }
            }
            None => return Err(Violation),
        }
    }
    let suffix = r.bits(zeros).ok_or(Violation)?;
    Ok((1u64 << zeros) + suffix - 1)
}

fn get_se(r: &mut BitReader<'_>) -> std::result::Result<i64, Violation> {
    let k = get_ue(r)?;
    Ok(if k % 2 == 1 {
        k.div_ceil(2) as i64
    } else {
        -((k / 2) as i64)
    })
}

// ---------------------------------------------------------------------------
// Region streams

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub width: u16,
    pub height: u16,
    pub channels: u8,
    pub quality: u8,
    pub rows: u16,
}

/// One compressed rectangle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionBitstream {
    bits: BitBuf,
}

impl RegionBitstream {
    /// Wraps raw (possibly corrupted) bits; nothing is validated until
    /// decode.
    pub fn from_bits(bits: BitBuf) -> Self {
        RegionBitstream { bits }
    }

    pub fn bits(&self) -> &BitBuf {
        &self.bits
    }

    pub fn into_bits(self) -> BitBuf {
        self.bits
    }

    /// `K_r`.
    pub fn bit_len(&self) -> usize {
        self.bits.len()
    }

    pub fn header(&self) -> Result<StreamHeader> {
        parse_header(&self.bits)
    }
}

fn parse_header(bits: &BitBuf) -> Result<StreamHeader> {
    let field = |pos: usize, n: u32| {
        bits.read_bits(pos, n)
            .ok_or_else(|| Error::Header(format!("stream shorter than {HEADER_BITS} bits")))
    };
    let magic = field(0, 32)? as u32;
    if magic.to_be_bytes() != MAGIC {
        return Err(Error::Header(format!("bad magic {magic:#010x}")));
    }
    let header = StreamHeader {
        width: field(32, 16)? as u16,
        height: field(48, 16)? as u16,
        channels: field(64, 8)? as u8,
        quality: field(72, 8)? as u8,
        rows: field(80, 16)? as u16,
    };
    if header.width == 0 || header.height == 0 {
        return Err(Error::Header("zero dimension".into()));
    }
    if header.channels != 1 && header.channels != 3 {
        return Err(Error::Header(format!("unsupported channel count {}", header.channels)));
    }
    if !(1..=100).contains(&header.quality) {
        return Err(Error::Header(format!("quality {} outside [1, 100]", header.quality)));
    }
    if header.rows as usize != (header.height as usize).div_ceil(8) {
        return Err(Error::Header(format!(
            "row count {} inconsistent with height {}",
            header.rows, header.height
        )));
    }
    Ok(header)
}

fn tables_for(q: u8, channels: usize) -> Result<Vec<QuantTable>> {
    // No colour transform is applied, so every channel uses the luma table.
    (0..channels)
        .map(|_| QuantTable::for_quality(q, TableClass::Luma))
        .collect()
}

/// Level-shifted 8x8 block with edge replication past the image border.
fn extract_block(img: &Image, bx: usize, by: usize, c: usize) -> [f64; 64] {
    let mut block = [0.0; 64];
    for y in 0..8 {
        let sy = (by * 8 + y).min(img.height() - 1);
        for x in 0..8 {
            let sx = (bx * 8 + x).min(img.width() - 1);
            block[y * 8 + x] = img.get(sx, sy, c) as f64 - 128.0;
        }
    }
    block
}

fn encode_block(out: &mut BitBuf, levels: &[i32; 64], dc_pred: &mut i64) {
    let dc = levels[0] as i64;
    put_se(out, dc - *dc_pred);
    *dc_pred = dc;
    let mut run = 0u64;
    for &k in &ZIGZAG[1..] {
        let level = levels[k] as i64;
        if level == 0 {
            run += 1;
        } else {
            put_ue(out, run + 1);
            put_se(out, level);
            run = 0;
        }
    }
    put_ue(out, 0);
}

/// Compresses `crop` at quality `q`.
pub fn encode_region(crop: &Image, q: u8) -> Result<RegionBitstream> {
    check_quality(q)?;
    let (w, h, ch) = (crop.width(), crop.height(), crop.channels());
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::domain(format!("{w}x{h} exceeds the 16-bit dimension fields")));
    }
    let tables = tables_for(q, ch)?;
    let rows = h.div_ceil(8);
    let cols = w.div_ceil(8);

    let mut out = BitBuf::new();
    out.push_bits(u32::from_be_bytes(MAGIC) as u64, 32);
    out.push_bits(w as u64, 16);
    out.push_bits(h as u64, 16);
    out.push_bits(ch as u64, 8);
    out.push_bits(q as u64, 8);
    out.push_bits(rows as u64, 16);

    for by in 0..rows {
        let mut payload = BitBuf::new();
        let mut dc_pred = vec![0i64; ch];
        for bx in 0..cols {
            for c in 0..ch {
                let levels = quantize(&fdct(&extract_block(crop, bx, by, c)), &tables[c]);
                encode_block(&mut payload, &levels, &mut dc_pred[c]);
            }
        }
        if payload.len() >= 1 << ROW_LENGTH_BITS {
            return Err(Error::domain("row payload exceeds the 24-bit length field"));
        }
        out.push_bits(ROW_MARKER as u64, 16);
        out.push_bits(payload.len() as u64, ROW_LENGTH_BITS);
        out.extend(&payload);
    }
    Ok(RegionBitstream { bits: out })
}

fn decode_block(r: &mut BitReader<'_>, dc_pred: &mut i64) -> std::result::Result<[i32; 64], Violation> {
    let mut levels = [0i32; 64];
    let dc = *dc_pred + get_se(r)?;
    if dc.abs() > LEVEL_LIMIT {
        return Err(Violation);
    }
    *dc_pred = dc;
    levels[0] = dc as i32;
    let mut pos = 1usize;
    loop {
        let step = get_ue(r)?;
        if step == 0 {
            return Ok(levels);
        }
        let next = pos as u64 + step - 1;
        if next >= 64 {
            return Err(Violation);
        }
        let level = get_se(r)?;
        if level == 0 || level.abs() > LEVEL_LIMIT {
            return Err(Violation);
        }
        levels[ZIGZAG[next as usize]] = level as i32;
        pos = next as usize + 1;
    }
}

fn marker_at(bits: &BitBuf, pos: usize) -> bool {
    bits.read_bits(pos, 16) == Some(ROW_MARKER as u64)
}

/// Follows the marker/length chain from `pos`. Returns the number of rows
/// if the chain lands exactly on the end of the stream with a marker at
/// every hop.
fn chain_rows(bits: &BitBuf, mut pos: usize, max_rows: usize) -> Option<usize> {
    let total = bits.len();
    let mut hops = 0;
    while hops < max_rows {
        if !marker_at(bits, pos) {
            return None;
        }
        let len = bits.read_bits(pos + 16, ROW_LENGTH_BITS)? as usize;
        pos = pos + ROW_OVERHEAD_BITS + len;
        hops += 1;
        if pos == total {
            return Some(hops);
        }
        if pos > total {
            return None;
        }
    }
    None
}

/// Start offsets of every row, `None` for rows that cannot be located.
///
/// The tail is anchored at the earliest position from which a complete
/// marker/length chain reaches the end of the stream; the rows before it
/// are recovered by following declared lengths forward from the header.
fn locate_rows(bits: &BitBuf, rows: usize) -> Vec<Option<usize>> {
    let mut starts = vec![None; rows];
    let total = bits.len();
    let anchor = (HEADER_BITS..total.saturating_sub(ROW_OVERHEAD_BITS - 1))
        .find_map(|q| chain_rows(bits, q, rows).map(|h| (q, rows - h)));
    let (tail_pos, tail_row) = anchor.unwrap_or((total, rows));

    let mut pos = tail_pos;
    for start in starts.iter_mut().skip(tail_row) {
        *start = Some(pos);
        let len = bits.read_bits(pos + 16, ROW_LENGTH_BITS).unwrap_or(0) as usize;
        pos += ROW_OVERHEAD_BITS + len;
    }

    let mut pos = HEADER_BITS;
    for start in starts.iter_mut().take(tail_row) {
        if pos + ROW_OVERHEAD_BITS > tail_pos {
            break;
        }
        *start = Some(pos);
        match bits.read_bits(pos + 16, ROW_LENGTH_BITS) {
            Some(len) => {
                let next = pos + ROW_OVERHEAD_BITS + len as usize;
                if next >= tail_pos || !marker_at(bits, next) {
                    break;
                }
                pos = next;
            }
            None => break,
        }
    }
    starts
}

/// Decodes a (possibly corrupted) stream. Only an unparseable header is an
/// error.
pub fn decode_region(stream: &RegionBitstream) -> Result<Image> {
    let bits = &stream.bits;
    let header = parse_header(bits)?;
    let (w, h, ch) = (header.width as usize, header.height as usize, header.channels as usize);
    let tables = tables_for(header.quality, ch)?;
    let rows = header.rows as usize;
    let cols = w.div_ceil(8);
    let pw = cols * 8;
    let mut canvas = vec![MID_GRAY; pw * rows * 8 * ch];

    let starts = locate_rows(bits, rows);
    for by in 0..rows {
        let Some(start) = starts[by] else { continue };
        let end = starts[by + 1..].iter().flatten().next().copied().unwrap_or(bits.len());
        let mut reader = BitReader::new(bits, start + ROW_OVERHEAD_BITS, end);
        let mut dc_pred = vec![0i64; ch];
        'blocks: for bx in 0..cols {
            let mut decoded = Vec::with_capacity(ch);
            for c in 0..ch {
                match decode_block(&mut reader, &mut dc_pred[c]) {
                    Ok(levels) => decoded.push(reconstruct(&levels, &tables[c])),
                    Err(Violation) => break 'blocks,
                }
            }
            for (c, px) in decoded.iter().enumerate() {
                for y in 0..8 {
                    for x in 0..8 {
                        let cy = by * 8 + y;
                        let cx = bx * 8 + x;
                        canvas[(cy * pw + cx) * ch + c] = px[y * 8 + x];
                    }
                }
            }
        }
    }

    let mut samples = Vec::with_capacity(w * h * ch);
    for y in 0..h {
        let start = y * pw * ch;
        samples.extend_from_slice(&canvas[start..start + w * ch]);
    }
    Image::new(w, h, ch, samples)
}

// ---------------------------------------------------------------------------
// Area coding (codec or raw samples)

/// How an area is turned into bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    #[default]
    Codec,
    /// Raw 8-bit samples; bit errors land directly on sample bits.
    Uncompressed,
}

/// A rectangle of an image after source coding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedArea {
    pub rect: Rect,
    pub mode: SourceMode,
    pub bits: BitBuf,
    channels: usize,
}

impl EncodedArea {
    /// Number of leading bits that carry stream framing (the codec header).
    pub fn header_bits(&self) -> usize {
        match self.mode {
            SourceMode::Codec => HEADER_BITS,
            SourceMode::Uncompressed => 0,
        }
    }

    pub fn bit_len(&self) -> usize {
        self.bits.len()
    }

    pub fn with_bits(&self, bits: BitBuf) -> EncodedArea {
        assert_eq!(bits.len(), self.bits.len(), "replacement changes stream length");
        EncodedArea { bits, ..self.clone() }
    }
}

pub fn encode_area(img: &Image, rect: Rect, q: u8, mode: SourceMode) -> Result<EncodedArea> {
    let crop = img.crop(rect)?;
    let bits = match mode {
        SourceMode::Codec => encode_region(&crop, q)?.into_bits(),
        SourceMode::Uncompressed => BitBuf::from_bytes(crop.into_samples()),
    };
    Ok(EncodedArea {
        rect,
        mode,
        bits,
        channels: img.channels(),
    })
}

pub fn decode_area(area: &EncodedArea) -> Result<Image> {
    match area.mode {
        SourceMode::Codec => decode_region(&RegionBitstream::from_bits(area.bits.clone())),
        SourceMode::Uncompressed => Image::new(area.rect.w, area.rect.h, area.channels, area.bits.as_bytes().to_vec()),
    }
}

// ---------------------------------------------------------------------------
// Semantic source coding

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RectStream {
    pub rect: Rect,
    pub stream: RegionBitstream,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticStreams {
    pub star: RectStream,
    /// Absent when the remaining masks are empty.
    pub rest: Option<RectStream>,
}

impl SemanticStreams {
    /// `K_src`.
    pub fn source_bits(&self) -> usize {
        self.star.stream.bit_len() + self.rest.as_ref().map_or(0, |r| r.stream.bit_len())
    }
}

/// Compresses the minimum rectangle around `star_mask` at `q_t` and the one
/// around the union of `rest_masks` at `q_b`.
pub fn semantic_encode(
    img: &Image,
    star_mask: &RegionMask,
    rest_masks: &[&RegionMask],
    q_t: u8,
    q_b: u8,
) -> Result<SemanticStreams> {
    img.check_mask(star_mask)?;
    let mut rest_union = RegionMask::empty(img.width(), img.height());
    for m in rest_masks {
        img.check_mask(m)?;
        rest_union = rest_union.union(m)?;
    }
    if !star_mask.is_disjoint(&rest_union) {
        return Err(Error::domain("star and remaining masks overlap"));
    }
    if star_mask.is_empty() {
        return Err(Error::domain("empty most-important mask"));
    }
    let star_rect = imaging::min_bounding_rect(&[star_mask])?;
    let star = RectStream {
        rect: star_rect,
        stream: encode_region(&img.crop(star_rect)?, q_t)?,
    };
    let rest = if rest_union.is_empty() {
        None
    } else {
        let rect = imaging::min_bounding_rect(&[&rest_union])?;
        Some(RectStream {
            rect,
            stream: encode_region(&img.crop(rect)?, q_b)?,
        })
    };
    Ok(SemanticStreams { star, rest })
}

/// Decodes both rectangles and keeps only the pixels aligned with their
/// masks; everything else comes from `base`.
pub fn semantic_decode(
    base: &Image,
    star: (&RegionBitstream, Rect, &RegionMask),
    rest: Option<(&RegionBitstream, Rect, &RegionMask)>,
) -> Result<Image> {
    let star_img = decode_region(star.0)?;
    let empty = RegionMask::empty(base.width(), base.height());
    match rest {
        Some((stream, rect, mask)) => {
            let rest_img = decode_region(stream)?;
            imaging::composite(base, star.1, &star_img, star.2, rect, &rest_img, mask)
        }
        None => imaging::composite(base, star.1, &star_img, star.2, star.1, &star_img, &empty),
    }
}
