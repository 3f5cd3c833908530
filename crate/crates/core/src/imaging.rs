//! Rasters, region masks and the geometry used by semantic source coding.
//!
//! Images are 8-bit, row-major, channel-interleaved. Masks carry one flag per
//! pixel and always describe the same grid as the image they annotate.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::domain(format!("unsupported channel count {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::domain("image dimensions must be non-zero"));
        }
        if samples.len() != width * height * channels {
            return Err(Error::domain(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                samples.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image from a per-pixel, per-channel function.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    samples.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    /// Raw bit length of the uncompressed image.
    pub fn raw_bits(&self) -> u64 {
        self.samples.len() as u64 * 8
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.samples[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.samples[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.samples[i..i + self.channels]
    }

    pub fn full_rect(&self) -> Rect {
        Rect {
            x0: 0,
            y0: 0,
            w: self.width,
            h: self.height,
        }
    }

    pub fn crop(&self, rect: Rect) -> Result<Image> {
        rect.check_within(self.width, self.height)?;
        let mut samples = Vec::with_capacity(rect.w * rect.h * self.channels);
        for y in rect.y0..rect.y0 + rect.h {
            let start = (y * self.width + rect.x0) * self.channels;
            samples.extend_from_slice(&self.samples[start..start + rect.w * self.channels]);
        }
        Image::new(rect.w, rect.h, self.channels, samples)
    }

    /// Mean squared error over every sample.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        let sse: u64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&a, &b)| {
                let d = a as i64 - b as i64;
                (d * d) as u64
            })
            .sum();
        Ok(sse as f64 / self.samples.len() as f64)
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height || self.channels != other.channels {
            return Err(Error::domain(format!(
                "image shape mismatch: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }

    pub(crate) fn check_mask(&self, mask: &RegionMask) -> Result<()> {
        if mask.width != self.width || mask.height != self.height {
            return Err(Error::domain(format!(
                "mask {}x{} does not match image {}x{}",
                mask.width, mask.height, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.w && y >= self.y0 && y < self.y0 + self.h
    }

    /// Smallest rectangle containing both.
    pub fn hull(&self, other: &Rect) -> Rect {
        let x0 = self.x0.min(other.x0);
        let y0 = self.y0.min(other.y0);
        let x1 = (self.x0 + self.w).max(other.x0 + other.w);
        let y1 = (self.y0 + self.h).max(other.y0 + other.h);
        Rect {
            x0,
            y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x0 + self.w > width || self.y0 + self.h > height {
            return Err(Error::domain(format!(
                "rect {:?} does not fit in {width}x{height}",
                self
            )));
        }
        Ok(())
    }
}

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl RegionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        RegionMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        RegionMask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::domain(format!(
                "mask has {} bits, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(RegionMask { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        RegionMask { width, height, bits }
    }

    pub fn from_rect(width: usize, height: usize, rect: Rect) -> Self {
        Self::from_fn(width, height, |x, y| rect.contains(x, y))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixel coordinates in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    fn check_same(&self, other: &RegionMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::domain(format!(
                "mask shape mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn union(&self, other: &RegionMask) -> Result<RegionMask> {
        self.check_same(other)?;
        Ok(RegionMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }

    pub fn intersect(&self, other: &RegionMask) -> Result<RegionMask> {
        self.check_same(other)?;
        Ok(RegionMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }

    pub fn complement(&self) -> RegionMask {
        RegionMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_disjoint(&self, other: &RegionMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !(*a && *b))
    }

    /// Run lengths over the row-major bit sequence, starting with a run of
    /// unset pixels (possibly zero-length).
    pub fn to_rle(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_rle(width: usize, height: usize, runs: &[usize]) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        let mut value = false;
        for &run in runs {
            bits.extend(std::iter::repeat_n(value, run));
            value = !value;
        }
        Self::from_bits(width, height, bits)
    }
}

/// Tightest rectangle around the union of `masks`.
pub fn min_bounding_rect(masks: &[&RegionMask]) -> Result<Rect> {
    let first = masks.first().ok_or_else(|| Error::domain("no masks given"))?;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    let mut any = false;
    for mask in masks {
        first.check_same(mask)?;
        for (x, y) in mask.iter_set() {
            any = true;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    if !any {
        return Err(Error::domain("bounding rectangle of an empty mask"));
    }
    Ok(Rect {
        x0,
        y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    })
}

/// Object regions keyed by dense ids `1..=S`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    regions: Vec<(u32, RegionMask)>,
}

impl RegionSet {
    /// Checks that ids are unique, masks are non-empty, same-shaped and
    /// pairwise disjoint.
    pub fn new(regions: Vec<(u32, RegionMask)>) -> Result<Self> {
        if let Some((_, first)) = regions.first() {
            let mut seen = RegionMask::empty(first.width, first.height);
            let mut ids = std::collections::BTreeSet::new();
            for (id, mask) in &regions {
                if !ids.insert(*id) {
                    return Err(Error::domain(format!("duplicate region id {id}")));
                }
                first.check_same(mask)?;
                if mask.is_empty() {
                    return Err(Error::domain(format!("region {id} is empty")));
                }
                if !seen.is_disjoint(mask) {
                    return Err(Error::domain(format!("region {id} overlaps another region")));
                }
                seen = seen.union(mask)?;
            }
        }
        Ok(RegionSet { regions })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.regions.iter().map(|(id, _)| *id).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &RegionMask)> {
        self.regions.iter().map(|(id, m)| (*id, m))
    }

    pub fn mask(&self, id: u32) -> Option<&RegionMask> {
        self.regions.iter().find(|(i, _)| *i == id).map(|(_, m)| m)
    }

    /// Union of the masks of `ids`; unknown ids are an error. An empty id
    /// list yields an empty mask of the set's dimensions.
    pub fn union_of(&self, ids: &[u32]) -> Result<RegionMask> {
        let (w, h) = self.dims().unwrap_or((0, 0));
        let mut out = RegionMask::empty(w, h);
        for id in ids {
            let mask = self
                .mask(*id)
                .ok_or_else(|| Error::domain(format!("unknown region id {id}")))?;
            out = out.union(mask)?;
        }
        Ok(out)
    }

    pub fn union_all(&self) -> Result<RegionMask> {
        self.union_of(&self.ids())
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.regions.first().map(|(_, m)| (m.width, m.height))
    }
}

/// Splits the bounding box of `object_mask` into a `rows` x `cols` grid and
/// intersects each cell with the mask. Cells that end up empty are dropped
/// and the survivors are numbered `1..=S` in row-major order. The last
/// row and column absorb any remainder.
pub fn grid_presegment(object_mask: &RegionMask, rows: usize, cols: usize) -> Result<RegionSet> {
    if rows == 0 || cols == 0 {
        return Err(Error::domain("grid rows and cols must be at least 1"));
    }
    let bbox = min_bounding_rect(&[object_mask])?;
    let extents = |total: usize, parts: usize| -> Vec<(usize, usize)> {
        let base = total / parts;
        (0..parts)
            .map(|i| {
                let start = i * base;
                let len = if i + 1 == parts { total - start } else { base };
                (start, len)
            })
            .collect()
    };
    let row_ext = extents(bbox.h, rows);
    let col_ext = extents(bbox.w, cols);

    let mut regions = Vec::new();
    let mut next_id = 1u32;
    for &(ry, rh) in &row_ext {
        for &(cx, cw) in &col_ext {
            if rh == 0 || cw == 0 {
                continue;
            }
            let cell = Rect {
                x0: bbox.x0 + cx,
                y0: bbox.y0 + ry,
                w: cw,
                h: rh,
            };
            let mask = RegionMask::from_fn(object_mask.width, object_mask.height, |x, y| {
                cell.contains(x, y) && object_mask.get(x, y)
            });
            if !mask.is_empty() {
                regions.push((next_id, mask));
                next_id += 1;
            }
        }
    }
    RegionSet::new(regions)
}

/// A decoded rectangle and the mask of pixels it is authoritative for.
#[derive(Debug, Clone, Copy)]
pub struct Layer<'a> {
    pub rect: Rect,
    pub decoded: &'a Image,
    pub mask: &'a RegionMask,
}

/// Pastes every layer's masked pixels over `base`. Layers must be pairwise
/// disjoint and each mask must lie inside its rectangle.
pub fn composite_layers(base: &Image, layers: &[Layer<'_>]) -> Result<Image> {
    let mut out = base.clone();
    let mut claimed = RegionMask::empty(base.width, base.height);
    for layer in layers {
        base.check_mask(layer.mask)?;
        if layer.decoded.width != layer.rect.w
            || layer.decoded.height != layer.rect.h
            || layer.decoded.channels != base.channels
        {
            return Err(Error::domain(format!(
                "decoded area {}x{}x{} does not match rect {:?}",
                layer.decoded.width, layer.decoded.height, layer.decoded.channels, layer.rect
            )));
        }
        if !claimed.is_disjoint(layer.mask) {
            return Err(Error::domain("composite masks overlap"));
        }
        for (x, y) in layer.mask.iter_set() {
            if !layer.rect.contains(x, y) {
                return Err(Error::domain(format!(
                    "mask pixel ({x},{y}) outside rect {:?}",
                    layer.rect
                )));
            }
            let src = layer.decoded.pixel(x - layer.rect.x0, y - layer.rect.y0);
            let dst = (y * base.width + x) * base.channels;
            out.samples[dst..dst + base.channels].copy_from_slice(src);
        }
        claimed = claimed.union(layer.mask)?;
    }
    Ok(out)
}

/// Two-path recomposition: `star` pixels from the first decoded rectangle,
/// `rest` pixels from the second, everything else from `base`. An empty
/// mask makes its rect and image irrelevant.
#[allow(clippy::too_many_arguments)]
pub fn composite(
    base: &Image,
    star_rect: Rect,
    star_decoded: &Image,
    star_mask: &RegionMask,
    rest_rect: Rect,
    rest_decoded: &Image,
    rest_mask: &RegionMask,
) -> Result<Image> {
    let mut layers = Vec::with_capacity(2);
    base.check_mask(star_mask)?;
    base.check_mask(rest_mask)?;
    if !star_mask.is_disjoint(rest_mask) {
        return Err(Error::domain("composite masks overlap"));
    }
    if !star_mask.is_empty() {
        layers.push(Layer {
            rect: star_rect,
            decoded: star_decoded,
            mask: star_mask,
        });
    }
    if !rest_mask.is_empty() {
        layers.push(Layer {
            rect: rest_rect,
            decoded: rest_decoded,
            mask: rest_mask,
        });
    }
    composite_layers(base, &layers)
}

/// Replaces every background sample with a uniform draw from `0..=255`.
pub fn fill_background_uniform<R: Rng + ?Sized>(
    img: &Image,
    background_mask: &RegionMask,
    rng: &mut R,
) -> Result<Image> {
    img.check_mask(background_mask)?;
    let mut out = img.clone();
    let ch = img.channels;
    for (i, &bg) in background_mask.bits.iter().enumerate() {
        if bg {
            for s in &mut out.samples[i * ch..(i + 1) * ch] {
                *s = rng.random::<u8>();
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// PGM / PPM

struct HeaderCursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_whitespace(&mut self) -> Result<()> {
        let start = self.pos;
        loop {
            match self.data.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.data.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(self.err("unexpected end of header")),
            }
        }
        if self.pos == start {
            return Err(self.err("expected whitespace"));
        }
        Ok(())
    }

    fn number(&mut self) -> Result<usize> {
        let start = self.pos;
        while matches!(self.data.get(self.pos), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected decimal number"));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                offset: start,
                message: "number out of range".into(),
            })
    }
}

/// Parses a binary P5/P6 raster with maxval 255.
pub fn decode_raster(data: &[u8]) -> Result<Image> {
    let mut cur = HeaderCursor { data, pos: 0 };
    let channels = match data.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(cur.err("expected magic P5 or P6")),
    };
    cur.pos = 2;
    cur.skip_whitespace()?;
    let width = cur.number()?;
    cur.skip_whitespace()?;
    let height = cur.number()?;
    cur.skip_whitespace()?;
    let maxval_at = cur.pos;
    let maxval = cur.number()?;
    if maxval != 255 {
        return Err(Error::Format {
            offset: maxval_at,
            message: format!("maxval {maxval} unsupported (expected 255)"),
        });
    }
    match data.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return Err(cur.err("expected single whitespace after maxval")),
        None => return Err(cur.err("unexpected end of header")),
    }
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    let expected = width * height * channels;
    let payload = &data[cur.pos..];
    if payload.len() < expected {
        return Err(Error::Format {
            offset: data.len(),
            message: format!("truncated payload: {} of {expected} bytes present", payload.len()),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format {
            offset: cur.pos + expected,
            message: "trailing bytes after payload".into(),
        });
    }
    Image::new(width, height, channels, payload.to_vec())
}

/// Canonical P5/P6 encoding: `P5\n<w> <h>\n255\n<payload>`.
pub fn encode_raster(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.samples);
    out
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&data)
}

pub fn save_raster(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raster(img)).map_err(|e| Error::io(path, e))
}

/// Loads a P5 mask; samples greater than zero are set.
pub fn load_mask(path: impl AsRef<Path>) -> Result<RegionMask> {
    let img = load_raster(path)?;
    mask_from_image(&img)
}

pub fn mask_from_image(img: &Image) -> Result<RegionMask> {
    if img.channels != 1 {
        return Err(Error::domain("masks must be single-channel (P5)"));
    }
    RegionMask::from_bits(img.width, img.height, img.samples.iter().map(|&s| s > 0).collect())
}

pub fn mask_to_image(mask: &RegionMask) -> Image {
    Image {
        width: mask.width,
        height: mask.height,
        channels: 1,
        samples: mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
    }
}
