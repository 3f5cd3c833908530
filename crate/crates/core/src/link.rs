//! One end-to-end transmission of an image split into a protected and an
//! unprotected group.
//!
//! Each non-empty group is cropped to its minimum bounding rectangle,
//! source coded, sent through the channel (the protected group with residual
//! error rate `eps_t`, the other raw at `eps_c`), decoded, and pasted back
//! through its mask. Pixels covered by neither group come from a receiver
//! side base image whose background handling is set by [`BackgroundPolicy`].

use serde::{Deserialize, Serialize};

use crate::channel::{self, CodingMode};
use crate::error::{Error, Result};
use crate::imaging::{self, Image, Layer, Rect, RegionMask};
use crate::seed::{self, label};
use crate::source_codec::{self, SourceMode};

/// Value of pixels nobody transmitted.
pub const FILL_GRAY: u8 = 128;

/// What the receiver does with the background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundPolicy {
    /// Sent with the unprotected group (or the protected one, if a scheme
    /// asks for it).
    #[default]
    Transmit,
    /// Not sent; the receiver fills it with seeded uniform noise.
    Omit,
    /// Not sent and not degraded: the receiver already has it.
    Pristine,
}

/// Source and channel parameters shared by every transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub q_b: u8,
    pub q_t: u8,
    pub eps_c: f64,
    pub eps_t: f64,
    #[serde(default = "default_coding")]
    pub coding: CodingMode,
    #[serde(default)]
    pub source: SourceMode,
    #[serde(default)]
    pub background: BackgroundPolicy,
}

fn default_coding() -> CodingMode {
    CodingMode::Na
}

impl LinkProfile {
    pub fn new(q_b: u8, q_t: u8, eps_c: f64, eps_t: f64) -> Result<Self> {
        let p = LinkProfile {
            q_b,
            q_t,
            eps_c,
            eps_t,
            coding: CodingMode::Na,
            source: SourceMode::Codec,
            background: BackgroundPolicy::Transmit,
        };
        p.validate()?;
        Ok(p)
    }

    /// `eps_t == eps_c` is accepted and means "no protection".
    pub fn validate(&self) -> Result<()> {
        for (name, q) in [("q_b", self.q_b), ("q_t", self.q_t)] {
            if !(1..=100).contains(&q) {
                return Err(Error::Config(format!("{name} = {q} outside [1, 100]")));
            }
        }
        if self.q_t < self.q_b {
            return Err(Error::Config(format!("q_t = {} below q_b = {}", self.q_t, self.q_b)));
        }
        if !(self.eps_c > 0.0 && self.eps_c <= 0.5) {
            return Err(Error::Config(format!("eps_c = {} outside (0, 0.5]", self.eps_c)));
        }
        if !(self.eps_t >= 0.0 && self.eps_t <= self.eps_c) {
            return Err(Error::Config(format!(
                "eps_t = {} outside [0, eps_c = {}]",
                self.eps_t, self.eps_c
            )));
        }
        Ok(())
    }
}

/// Accounting for one transmitted stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub protected: bool,
    pub rect: Rect,
    pub source_bits: u64,
    pub channel_bits: u64,
    pub bit_errors: u64,
}

#[derive(Debug, Clone)]
pub struct Transmission {
    pub image: Image,
    pub streams: Vec<StreamRecord>,
}

impl Transmission {
    pub fn channel_bits(&self) -> u64 {
        self.streams.iter().map(|s| s.channel_bits).sum()
    }

    pub fn source_bits(&self) -> u64 {
        self.streams.iter().map(|s| s.source_bits).sum()
    }
}

/// The receiver's starting canvas: gray everywhere, with the background
/// replaced by noise or the original depending on `policy`.
pub fn receiver_base(img: &Image, background: &RegionMask, policy: BackgroundPolicy, seed: u64) -> Result<Image> {
    let gray = Image::filled(img.width(), img.height(), img.channels(), FILL_GRAY)?;
    match policy {
        BackgroundPolicy::Transmit => Ok(gray),
        BackgroundPolicy::Omit => {
            let mut rng = seed::rng(seed, &[label::BACKGROUND_FILL]);
            imaging::fill_background_uniform(&gray, background, &mut rng)
        }
        BackgroundPolicy::Pristine => {
            let layer = Layer {
                rect: img.full_rect(),
                decoded: img,
                mask: background,
            };
            imaging::composite_layers(&gray, &[layer])
        }
    }
}

struct Sent {
    rect: Rect,
    decoded: Image,
    record: StreamRecord,
}

fn send_group(
    img: &Image,
    mask: &RegionMask,
    protected: bool,
    profile: &LinkProfile,
    seed: u64,
) -> Result<Option<Sent>> {
    if mask.is_empty() {
        return Ok(None);
    }
    let rect = imaging::min_bounding_rect(&[mask])?;
    let (q, eps_t, stream_label) = if protected {
        (profile.q_t, profile.eps_t, label::PROTECTED_STREAM)
    } else {
        (profile.q_b, profile.eps_c, label::UNPROTECTED_STREAM)
    };
    let area = source_codec::encode_area(img, rect, q, profile.source)?;
    let delivery = channel::protect_stream_from(
        &area.bits,
        area.header_bits(),
        profile.eps_c,
        eps_t,
        profile.coding,
        seed::derive(seed, &[stream_label]),
    )?;
    let bit_errors = area.bits.hamming(&delivery.bits) as u64;
    let decoded = source_codec::decode_area(&area.with_bits(delivery.bits))?;
    Ok(Some(Sent {
        rect,
        decoded,
        record: StreamRecord {
            protected,
            rect,
            source_bits: area.bit_len() as u64,
            channel_bits: delivery.channel_bits,
            bit_errors,
        },
    }))
}

/// Transmits `protected` and `unprotected` (disjoint masks) over one channel
/// realization and recomposes them over `base`.
pub fn transmit(
    img: &Image,
    protected: &RegionMask,
    unprotected: &RegionMask,
    base: &Image,
    profile: &LinkProfile,
    seed: u64,
) -> Result<Transmission> {
    img.check_same_shape(base)?;
    img.check_mask(protected)?;
    img.check_mask(unprotected)?;
    if !protected.is_disjoint(unprotected) {
        return Err(Error::domain("protected and unprotected groups overlap"));
    }
    let groups = [
        send_group(img, protected, true, profile, seed)?,
        send_group(img, unprotected, false, profile, seed)?,
    ];
    let masks = [protected, unprotected];
    let layers: Vec<Layer<'_>> = groups
        .iter()
        .zip(masks)
        .filter_map(|(g, mask)| {
            g.as_ref().map(|g| Layer {
                rect: g.rect,
                decoded: &g.decoded,
                mask,
            })
        })
        .collect();
    let image = imaging::composite_layers(base, &layers)?;
    let streams = groups.into_iter().flatten().map(|g| g.record).collect();
    Ok(Transmission { image, streams })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> Image {
        Image::from_fn(16, 16, 1, |x, y, _| (x * 9 + y * 5) as u8).unwrap()
    }

    fn lossless(eps_c: f64, eps_t: f64) -> LinkProfile {
        LinkProfile {
            source: SourceMode::Uncompressed,
            coding: CodingMode::Ideal,
            ..LinkProfile::new(100, 100, eps_c, eps_t).unwrap()
        }
    }

    #[test]
    fn error_free_uncompressed_path_is_identity() {
        let img = img();
        let left = RegionMask::from_rect(
            16,
            16,
            Rect {
                x0: 0,
                y0: 0,
                w: 7,
                h: 16,
            },
        );
        let base = Image::filled(16, 16, 1, 0).unwrap();
        let t = transmit(&img, &left, &left.complement(), &base, &lossless(0.1, 0.0), 1).unwrap();
        assert_ne!(t.streams[1].bit_errors, 0);
        let t = transmit(
            &img,
            &RegionMask::full(16, 16),
            &RegionMask::empty(16, 16),
            &base,
            &lossless(0.1, 0.0),
            1,
        )
        .unwrap();
        assert_eq!(t.image, img);
        assert_eq!(t.streams.len(), 1);
        assert_eq!(t.source_bits(), 16 * 16 * 8);
        // ideal coding at eps_c = 0.1: ceil(2048 / I)
        assert_eq!(t.channel_bits(), channel::ideal_blocklength(2048, 0.1).unwrap());
    }

    #[test]
    fn unprotected_group_costs_its_length() {
        let img = img();
        let base = Image::filled(16, 16, 1, 0).unwrap();
        let p = LinkProfile::new(20, 80, 0.05, 0.001).unwrap();
        let t = transmit(
            &img,
            &RegionMask::empty(16, 16),
            &RegionMask::full(16, 16),
            &base,
            &p,
            4,
        )
        .unwrap();
        assert_eq!(t.channel_bits(), t.source_bits());
        assert!(!t.streams[0].protected);
    }

    #[test]
    fn uncovered_pixels_come_from_base() {
        let img = img();
        let mask = RegionMask::from_rect(
            16,
            16,
            Rect {
                x0: 4,
                y0: 4,
                w: 4,
                h: 4,
            },
        );
        let base = receiver_base(&img, &RegionMask::empty(16, 16), BackgroundPolicy::Transmit, 0).unwrap();
        let t = transmit(&img, &mask, &RegionMask::empty(16, 16), &base, &lossless(0.2, 0.0), 0).unwrap();
        assert_eq!(t.image.get(0, 0, 0), FILL_GRAY);
        assert_eq!(t.image.get(5, 5, 0), img.get(5, 5, 0));
    }

    #[test]
    fn background_policies() {
        let img = img();
        let bg = RegionMask::from_rect(
            16,
            16,
            Rect {
                x0: 0,
                y0: 0,
                w: 16,
                h: 4,
            },
        );
        let pristine = receiver_base(&img, &bg, BackgroundPolicy::Pristine, 3).unwrap();
        assert_eq!(pristine.get(3, 2, 0), img.get(3, 2, 0));
        assert_eq!(pristine.get(3, 9, 0), FILL_GRAY);
        let a = receiver_base(&img, &bg, BackgroundPolicy::Omit, 3).unwrap();
        let b = receiver_base(&img, &bg, BackgroundPolicy::Omit, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, receiver_base(&img, &bg, BackgroundPolicy::Omit, 4).unwrap());
        assert_eq!(a.get(3, 9, 0), FILL_GRAY);
    }

    #[test]
    fn profile_validation() {
        assert!(LinkProfile::new(50, 40, 0.2, 0.01).is_err());
        assert!(LinkProfile::new(40, 50, 0.2, 0.3).is_err());
        assert!(LinkProfile::new(40, 50, 0.6, 0.01).is_err());
        assert!(LinkProfile::new(40, 50, 0.2, 0.2).is_ok());
        assert!(LinkProfile::new(0, 50, 0.2, 0.01).is_err());
    }
}
