//! BPSK over quasi-static Rayleigh fading, seen through its bit error rate.
//!
//! The modulated channel is abstracted as a binary symmetric channel with
//! crossover probability `eps_c = Q(sqrt(snr_scale * |h|^2))`. Protected
//! streams are sized with the normal approximation for BPSK-AWGN at SNR
//! `rho = Q^-1(eps_c)^2` and delivered with residual errors at `eps_t`.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitBuf;
use crate::error::{Error, Result};
use crate::seed;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Gaussian tail probability `P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Rational approximation of the standard normal quantile (Acklam), used
/// as the starting point for Newton refinement. Relative error ~1e-9.
fn normal_quantile_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const LOW: f64 = 0.024_25;
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Inverse of [`q_function`] on `(0, 1)`.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("q_inverse argument {p} outside (0, 1)")));
    }
    // Q^-1(p) is the normal quantile of 1 - p.
    let mut x = -normal_quantile_guess(p);
    // Newton polish on Q(x) - p; Q'(x) = -phi(x).
    for _ in 0..4 {
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if phi == 0.0 {
            break;
        }
        let step = (q_function(x) - p) / phi;
        if !step.is_finite() {
            break;
        }
        x += step;
        if step.abs() < 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// `|h|^2`.
    pub gain: f64,
    /// `2P / sigma_z^2`.
    pub snr_scale: f64,
}

impl ChannelSpec {
    pub fn new(gain: f64) -> Result<Self> {
        Self::with_scale(gain, 1.0)
    }

    pub fn with_scale(gain: f64, snr_scale: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) || !(snr_scale > 0.0 && snr_scale.is_finite()) {
            return Err(Error::domain(format!(
                "channel gain {gain} and snr scale {snr_scale} must be positive"
            )));
        }
        Ok(ChannelSpec { gain, snr_scale })
    }

    pub fn ber(&self) -> f64 {
        bpsk_ber(self)
    }
}

/// Uncoded BPSK error probability for a fading realization.
pub fn bpsk_ber(spec: &ChannelSpec) -> f64 {
    q_function((spec.snr_scale * spec.gain).sqrt())
}

/// Draws `|h|^2` for `h ~ CN(0, sigma_h2)`, i.e. an exponential with mean
/// `sigma_h2`.
pub fn sample_channel_gain<R: Rng + ?Sized>(rng: &mut R, sigma_h2: f64) -> Result<f64> {
    if !(sigma_h2 > 0.0 && sigma_h2.is_finite()) {
        return Err(Error::domain(format!("fading variance {sigma_h2} must be positive")));
    }
    let exp = Exp::new(1.0 / sigma_h2).map_err(|e| Error::domain(e.to_string()))?;
    Ok(exp.sample(rng))
}

#[inline]
fn flip_threshold(eps: f64) -> u64 {
    // eps <= 0.5 so the product fits in u64.
    (eps * 18_446_744_073_709_551_616.0) as u64
}

#[inline]
fn flips(key: u64, index: usize, threshold: u64) -> bool {
    seed::mix64(key ^ (index as u64).wrapping_mul(0xd1b5_4a32_d192_ed03)) < threshold
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&eps) {
        return Err(Error::domain(format!("bit error probability {eps} outside [0, 0.5]")));
    }
    Ok(())
}

/// Flips every bit at index `>= from` independently with probability `eps`.
///
/// Randomness is counter-based: whether bit `i` flips is a pure function of
/// `(seed, i)`, so chunked or parallel application gives the same result.
pub fn inject_bit_errors_from(bits: &BitBuf, from: usize, eps: f64, seed: u64) -> Result<BitBuf> {
    check_eps(eps)?;
    let mut out = bits.clone();
    if eps == 0.0 {
        return Ok(out);
    }
    let key = seed::derive(seed, &[]);
    let threshold = flip_threshold(eps);
    for i in from..bits.len() {
        if flips(key, i, threshold) {
            out.flip(i);
        }
    }
    Ok(out)
}

pub fn inject_bit_errors(bits: &BitBuf, eps: f64, seed: u64) -> Result<BitBuf> {
    inject_bit_errors_from(bits, 0, eps, seed)
}

/// Parallel form of [`inject_bit_errors`]; output is bit-identical.
pub fn inject_bit_errors_par(bits: &BitBuf, eps: f64, seed: u64) -> Result<BitBuf> {
    check_eps(eps)?;
    if eps == 0.0 {
        return Ok(bits.clone());
    }
    let key = seed::derive(seed, &[]);
    let threshold = flip_threshold(eps);
    let len = bits.len();
    let mut bytes = bits.as_bytes().to_vec();
    bytes.par_chunks_mut(4096).enumerate().for_each(|(chunk, data)| {
        let base = chunk * 4096 * 8;
        for (j, byte) in data.iter_mut().enumerate() {
            for k in 0..8 {
                let i = base + j * 8 + k;
                if i < len && flips(key, i, threshold) {
                    *byte ^= 0x80 >> k;
                }
            }
        }
    });
    Ok(BitBuf::from_parts(bytes, len))
}

// ---------------------------------------------------------------------------
// BPSK-AWGN information density moments

/// `1 - log2(1 + exp(-2 rho - 2 z sqrt(rho)))`.
fn info_density(z: f64, rho: f64) -> f64 {
    let t = -2.0 * rho - 2.0 * z * rho.sqrt();
    let softplus = if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    };
    1.0 - softplus / std::f64::consts::LN_2
}

fn gauss_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[allow(clippy::excessive_precision)]
const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for the odd-indexed Kronrod nodes (7-point rule).
#[allow(clippy::excessive_precision)]
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * KRONROD_NODES[i];
        let pair = f(c - dx) + f(c + dx);
        kronrod += KRONROD_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (value, err) = gauss_kronrod(f, a, b);
    if err <= tol || depth == 0 {
        return value;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, 0.5 * tol, depth - 1) + adaptive(f, m, b, 0.5 * tol, depth - 1)
}

/// Integrates `f(z) phi(z)` over `[-10, 10]`; the truncated Gaussian mass
/// is below `1e-22`.
fn gaussian_expectation(f: impl Fn(f64) -> f64) -> f64 {
    let g = |z: f64| f(z) * gauss_pdf(z);
    // Split at the origin and +-5 so the peak and tails are handled separately.
    let knots = [-10.0, -5.0, 0.0, 5.0, 10.0];
    knots.windows(2).map(|w| adaptive(&g, w[0], w[1], 1e-13, 40)).sum()
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::domain(format!("SNR {rho} must be positive")));
    }
    Ok(())
}

/// Mutual information of BPSK over real AWGN at SNR `rho`, in bits per use.
pub fn mutual_info_bpsk(rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(gaussian_expectation(|z| info_density(z, rho)))
}

/// Variance of the information density (channel dispersion), bits^2 per use.
pub fn dispersion_bpsk(rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let mean = gaussian_expectation(|z| info_density(z, rho));
    let second = gaussian_expectation(|z| {
        let i = info_density(z, rho);
        i * i
    });
    Ok((second - mean * mean).max(0.0))
}

/// Minimum-blocklength solution of the normal approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaResult {
    pub info_bits: u64,
    pub codeword_bits: u64,
    pub rho: f64,
    pub mutual_info: f64,
    pub dispersion: f64,
    pub eps_c: f64,
    pub eps_t: f64,
}

impl NaResult {
    pub fn rate(&self) -> f64 {
        self.info_bits as f64 / self.codeword_bits as f64
    }
}

/// Right-hand side of the normal approximation,
/// `I N - sqrt(V N) Q^-1(eps) + log2(N) / 2`.
pub fn na_bound(n: u64, mutual_info: f64, dispersion: f64, q_inv_target: f64) -> f64 {
    let n = n as f64;
    mutual_info * n - (dispersion * n).sqrt() * q_inv_target + 0.5 * n.log2()
}

const NA_SEARCH_CAP: u64 = 1 << 50;

/// Smallest `N` with `K <= I N - sqrt(V N) Q^-1(eps_t) + log2(N)/2` at
/// `rho = Q^-1(eps_c)^2`.
pub fn na_min_blocklength(k: u64, eps_c: f64, eps_t: f64) -> Result<NaResult> {
    if k == 0 {
        return Err(Error::domain("information length must be at least one bit"));
    }
    if !(eps_t > 0.0 && eps_t < eps_c && eps_c < 0.5) {
        return Err(Error::domain(format!(
            "need 0 < eps_t < eps_c < 0.5, got eps_t={eps_t}, eps_c={eps_c}"
        )));
    }
    let rho = q_inverse(eps_c)?.powi(2);
    let mutual_info = mutual_info_bpsk(rho)?;
    let dispersion = dispersion_bpsk(rho)?;
    let q_t = q_inverse(eps_t)?;
    let rhs = |n: u64| na_bound(n, mutual_info, dispersion, q_t);
    let target = k as f64;

    // rhs(N) <= N + log2(N)/2, so nothing below `lower` can satisfy the bound.
    let slack = (0.5 * target.log2()).ceil() as u64 + 1;
    let lower = k.saturating_sub(slack).max(1);
    // Past `monotone_from` the derivative I - sqrt(V) q_t / (2 sqrt N) is
    // non-negative; below it the log term can make rhs dip, so scan.
    let monotone_from = {
        let a = dispersion.sqrt() * q_t;
        ((a / (2.0 * mutual_info)).powi(2).ceil() as u64).saturating_add(1)
    };
    let scan_end = monotone_from.max(64);
    if scan_end > NA_SEARCH_CAP {
        return Err(Error::Unachievable(format!(
            "non-monotone region extends past {NA_SEARCH_CAP}"
        )));
    }

    let result = |n: u64| NaResult {
        info_bits: k,
        codeword_bits: n,
        rho,
        mutual_info,
        dispersion,
        eps_c,
        eps_t,
    };

    for n in lower..scan_end {
        if rhs(n) >= target {
            return Ok(result(n));
        }
    }

    let lo = lower.max(scan_end);
    if rhs(lo) >= target {
        return Ok(result(lo));
    }
    let mut hi = ((4.0 * target / mutual_info).ceil() as u64).max(lo + 1);
    while rhs(hi) < target {
        hi = hi.saturating_mul(2);
        if hi > NA_SEARCH_CAP {
            return Err(Error::Unachievable(format!(
                "no blocklength up to {NA_SEARCH_CAP} carries {k} bits at eps_t={eps_t}"
            )));
        }
    }
    // Invariant: rhs(lo) < target <= rhs(hi).
    let mut lo = lo;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if rhs(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    debug_assert!(rhs(hi) >= target && rhs(hi - 1) < target);
    Ok(result(hi))
}

/// Blocklength of an ideal capacity-achieving code, `ceil(K / I)`.
pub fn ideal_blocklength(k: u64, eps_c: f64) -> Result<u64> {
    if k == 0 {
        return Ok(0);
    }
    let rho = q_inverse(eps_c)?.powi(2);
    let mutual_info = mutual_info_bpsk(rho)?;
    Ok((k as f64 / mutual_info).ceil() as u64)
}

/// How protected streams are sized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodingMode {
    /// Normal-approximation minimum blocklength.
    Na,
    /// Capacity-achieving i.i.d. code.
    Ideal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub bits: BitBuf,
    pub channel_bits: u64,
}

/// Sends `bits` over a channel with raw error rate `eps_c`, protected down to
/// residual rate `eps_t`. With `eps_t >= eps_c` the stream goes out uncoded.
/// Errors are only injected from bit index `from` onward.
pub fn protect_stream_from(
    bits: &BitBuf,
    from: usize,
    eps_c: f64,
    eps_t: f64,
    mode: CodingMode,
    seed: u64,
) -> Result<Delivery> {
    let k = bits.len() as u64;
    if eps_t >= eps_c {
        return Ok(Delivery {
            bits: inject_bit_errors_from(bits, from, eps_c, seed)?,
            channel_bits: k,
        });
    }
    let channel_bits = if k == 0 {
        0
    } else {
        match mode {
            CodingMode::Na => na_min_blocklength(k, eps_c, eps_t)?.codeword_bits,
            CodingMode::Ideal => ideal_blocklength(k, eps_c)?,
        }
    };
    Ok(Delivery {
        bits: inject_bit_errors_from(bits, from, eps_t, seed)?,
        channel_bits,
    })
}

pub fn protect_stream(bits: &BitBuf, eps_c: f64, eps_t: f64, mode: CodingMode, seed: u64) -> Result<Delivery> {
    protect_stream_from(bits, 0, eps_c, eps_t, mode, seed)
}
