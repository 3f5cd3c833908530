//! Transmission schemes, their metrics, and parameter sweeps.
//!
//! A scheme picks which groups of the extracted partition (the star region,
//! the positive and negative regions, the background) are sent at
//! `(q_t, eps_t)`; everything else that is transmitted goes at
//! `(q_b, eps_c)`. Metrics follow the raw-bit convention: `K` is the size
//! of the uncompressed image, `N` the channel bits actually spent, the code
//! rate is `K / N` and the coding efficiency is `p^D * K / N`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelSpec, CodingMode};
use crate::classifier::Oracle;
use crate::error::{Error, Result};
use crate::imaging::{self, Image, RegionMask, RegionSet};
use crate::link::{self, BackgroundPolicy, LinkProfile, StreamRecord};
use crate::seed::{self, label};
use crate::shapley::{EstimatorChoice, RegionPartition};

/// Parts of the partition a scheme can protect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Star,
    Positive,
    Negative,
    Background,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheme {
    pub name: String,
    pub protect: BTreeSet<Group>,
    #[serde(default)]
    pub background: BackgroundPolicy,
    /// Overrides the profile's coding mode for this scheme's protected group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coding: Option<CodingMode>,
}

impl Scheme {
    pub fn new(name: &str, protect: &[Group]) -> Self {
        Scheme {
            name: name.to_string(),
            protect: protect.iter().copied().collect(),
            background: BackgroundPolicy::Transmit,
            coding: None,
        }
    }

    pub fn star_only() -> Self {
        Self::new("star", &[Group::Star])
    }

    pub fn star_positive() -> Self {
        Self::new("star_positive", &[Group::Star, Group::Positive])
    }

    pub fn star_negative() -> Self {
        Self::new("star_negative", &[Group::Star, Group::Negative])
    }

    /// Every object region, plus the background when it is transmitted.
    pub fn full_image() -> Self {
        Self::new(
            "full",
            &[Group::Star, Group::Positive, Group::Negative, Group::Background],
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "star" => Some(Self::star_only()),
            "star_positive" => Some(Self::star_positive()),
            "star_negative" => Some(Self::star_negative()),
            "full" => Some(Self::full_image()),
            _ => None,
        }
    }

    pub fn presets() -> Vec<Self> {
        vec![
            Self::star_only(),
            Self::star_positive(),
            Self::star_negative(),
            Self::full_image(),
        ]
    }

    pub fn with_background(mut self, policy: BackgroundPolicy) -> Self {
        self.background = policy;
        self
    }

    pub fn with_coding(mut self, coding: CodingMode) -> Self {
        self.coding = Some(coding);
        self
    }
}

/// The extracted regions a scheme operates on.
#[derive(Debug, Clone)]
pub struct SchemeInputs<'a> {
    pub img: &'a Image,
    pub regions: &'a RegionSet,
    pub background: &'a RegionMask,
    pub partition: &'a RegionPartition,
}

impl SchemeInputs<'_> {
    fn validate(&self) -> Result<()> {
        let p = self.partition;
        let mut listed: Vec<u32> = p
            .positive_ids
            .iter()
            .chain(&p.negative_ids)
            .copied()
            .chain([p.star_id])
            .collect();
        listed.sort_unstable();
        let before = listed.len();
        listed.dedup();
        if listed.len() != before || listed != self.regions.ids() {
            return Err(Error::Config(
                "partition ids do not cover the region set exactly once".into(),
            ));
        }
        self.img.check_mask(self.background)?;
        if !self.regions.union_all()?.is_disjoint(self.background) {
            return Err(Error::domain("background overlaps an object region"));
        }
        Ok(())
    }

    fn group_mask(&self, group: Group) -> Result<RegionMask> {
        let p = self.partition;
        match group {
            Group::Star => self.regions.union_of(&[p.star_id]),
            Group::Positive => self.regions.union_of(&p.positive_ids),
            Group::Negative => self.regions.union_of(&p.negative_ids),
            Group::Background => Ok(self.background.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub p_d: f64,
    pub streams: Vec<StreamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: String,
    pub p_d: f64,
    pub k: u64,
    pub n: u64,
    pub rate: f64,
    pub efficiency: f64,
    pub trials: usize,
    pub seed: u64,
    pub records: Vec<TrialRecord>,
}

/// Protected and unprotected masks for a scheme.
fn scheme_masks(inputs: &SchemeInputs<'_>, profile: &LinkProfile, scheme: &Scheme) -> Result<(RegionMask, RegionMask)> {
    let (w, h) = (inputs.img.width(), inputs.img.height());
    let send_background = scheme.background == BackgroundPolicy::Transmit;
    let mut protected = RegionMask::empty(w, h);
    let mut unprotected = RegionMask::empty(w, h);
    // With identical treatment for both groups there is nothing to split.
    let degenerate = profile.q_t == profile.q_b && profile.eps_t >= profile.eps_c;
    for group in [Group::Star, Group::Positive, Group::Negative, Group::Background] {
        if group == Group::Background && !send_background {
            continue;
        }
        let mask = inputs.group_mask(group)?;
        if scheme.protect.contains(&group) && !degenerate {
            protected = protected.union(&mask)?;
        } else {
            unprotected = unprotected.union(&mask)?;
        }
    }
    Ok((protected, unprotected))
}

/// Runs `trials` channel realizations of one scheme. Trial `t` uses the
/// seed derived from `(seed, t)`, so adding trials never changes earlier
/// ones.
#[allow(clippy::too_many_arguments)]
pub fn run_scheme(
    inputs: &SchemeInputs<'_>,
    profile: &LinkProfile,
    scheme: &Scheme,
    oracle: &dyn Oracle,
    target: usize,
    trials: usize,
    seed: u64,
) -> Result<SchemeResult> {
    profile.validate()?;
    inputs.validate()?;
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if target == 0 || target > oracle.num_classes() {
        return Err(Error::Config(format!(
            "target class {target} outside 1..={}",
            oracle.num_classes()
        )));
    }
    let link = LinkProfile {
        coding: scheme.coding.unwrap_or(profile.coding),
        ..*profile
    };
    let (protected, unprotected) = scheme_masks(inputs, &link, scheme)?;
    let records: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = seed::derive(seed, &[label::TRIAL, t as u64]);
            let base = link::receiver_base(inputs.img, inputs.background, scheme.background, trial_seed)?;
            let tx = link::transmit(inputs.img, &protected, &unprotected, &base, &link, trial_seed)?;
            let p_d = oracle.classify(&tx.image, target)?.p_target();
            Ok(TrialRecord {
                trial: t,
                seed: trial_seed,
                p_d,
                streams: tx.streams,
            })
        })
        .collect::<Result<_>>()?;
    let p_d = records.iter().map(|r| r.p_d).sum::<f64>() / trials as f64;
    let n: u64 = records[0].streams.iter().map(|s| s.channel_bits).sum();
    if n == 0 {
        return Err(Error::domain(format!("scheme {:?} transmits nothing", scheme.name)));
    }
    let k = inputs.img.raw_bits();
    let rate = k as f64 / n as f64;
    Ok(SchemeResult {
        scheme: scheme.name.clone(),
        p_d,
        k,
        n,
        rate,
        efficiency: p_d * rate,
        trials,
        seed,
        records,
    })
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    EpsT,
    QT,
    /// Channel power gain; sets `eps_c` through the BPSK error rate.
    H2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    /// Used only for the channel-gain sweep.
    #[serde(default = "default_snr_scale")]
    pub snr_scale: f64,
}

fn default_snr_scale() -> f64 {
    1.0
}

impl SweepSpec {
    /// Profile at one grid point.
    pub fn apply(&self, base: &LinkProfile, value: f64) -> Result<LinkProfile> {
        let mut p = *base;
        match self.variable {
            SweepVariable::EpsT => p.eps_t = value,
            SweepVariable::QT => {
                if value.fract() != 0.0 || !(1.0..=100.0).contains(&value) {
                    return Err(Error::Config(format!(
                        "q_t grid value {value} is not an integer in [1, 100]"
                    )));
                }
                p.q_t = value as u8;
            }
            SweepVariable::H2 => {
                p.eps_c = ChannelSpec::with_scale(value, self.snr_scale)
                    .map_err(|e| Error::Config(e.to_string()))?
                    .ber();
            }
        }
        if p.eps_t >= p.eps_c {
            return Err(Error::Config(format!(
                "grid value {value}: eps_t = {} is not below eps_c = {}",
                p.eps_t, p.eps_c
            )));
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub profile: LinkProfile,
    pub result: SchemeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
}

pub const CSV_HEADER: &str = "scheme,sweep_value,p_d,k,n,rate,efficiency,trials,seed";

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let r = &row.result;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.scheme, row.value, r.p_d, r.k, r.n, r.rate, r.efficiency, r.trials, r.seed
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep table serializes")
    }
}

/// Evaluates every scheme at every grid point. The whole grid is checked
/// before anything runs.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    inputs: &SchemeInputs<'_>,
    profile: &LinkProfile,
    sweep: &SweepSpec,
    schemes: &[Scheme],
    oracle: &dyn Oracle,
    target: usize,
    trials: usize,
    seed: u64,
) -> Result<SweepTable> {
    if sweep.values.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    if schemes.is_empty() {
        return Err(Error::Config("no schemes to run".into()));
    }
    let profiles = sweep
        .values
        .iter()
        .map(|&v| sweep.apply(profile, v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, &Scheme)> = (0..profiles.len())
        .flat_map(|i| schemes.iter().map(move |s| (i, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, scheme)| {
            let result = run_scheme(inputs, &profiles[i], scheme, oracle, target, trials, seed)?;
            Ok(SweepRow {
                value: sweep.values[i],
                profile: profiles[i],
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        variable: sweep.variable,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub id: u32,
    /// Alternating run lengths in row-major order, starting with unset pixels.
    pub rle: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSetFile {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<MaskEntry>,
    /// Pixels outside the object.
    pub background: Vec<usize>,
}

impl RegionSetFile {
    pub fn new(regions: &RegionSet, background: &RegionMask) -> Self {
        RegionSetFile {
            width: background.width(),
            height: background.height(),
            regions: regions
                .iter()
                .map(|(id, m)| MaskEntry { id, rle: m.to_rle() })
                .collect(),
            background: background.to_rle(),
        }
    }

    pub fn decode(&self) -> Result<(RegionSet, RegionMask)> {
        let regions = self
            .regions
            .iter()
            .map(|e| Ok((e.id, RegionMask::from_rle(self.width, self.height, &e.rle)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            RegionSet::new(regions)?,
            RegionMask::from_rle(self.width, self.height, &self.background)?,
        ))
    }
}

/// Output of region extraction: final regions plus their partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub regions: RegionSetFile,
    pub partition: RegionPartition,
}

impl PartitionFile {
    pub fn decode(&self) -> Result<(RegionSet, RegionMask, RegionPartition)> {
        let (regions, background) = self.regions.decode()?;
        Ok((regions, background, self.partition.clone()))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Sweep configuration file

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

/// A scheme given either by preset name or in full.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemeEntry {
    Preset(String),
    Custom(Scheme),
}

impl SchemeEntry {
    pub fn resolve(&self) -> Result<Scheme> {
        match self {
            SchemeEntry::Preset(name) => {
                Scheme::preset(name).ok_or_else(|| Error::Config(format!("unknown scheme preset {name:?}")))
            }
            SchemeEntry::Custom(s) => Ok(s.clone()),
        }
    }
}

/// Settings for the region extraction performed when no partition file is
/// supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSpec {
    pub p_th: f64,
    #[serde(default = "default_extraction_trials")]
    pub trials: usize,
    #[serde(default)]
    pub estimator: EstimatorChoice,
}

fn default_extraction_trials() -> usize {
    crate::shapley::DEFAULT_TRIALS
}

/// JSON sweep configuration. Relative paths resolve against the directory
/// of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub image: PathBuf,
    /// Object mask (non-zero pixels belong to the object).
    pub mask: PathBuf,
    /// Pre-segmentation grid over the object's bounding box.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Previously extracted partition; takes precedence over `grid`.
    #[serde(default)]
    pub partition: Option<PathBuf>,
    #[serde(default)]
    pub extraction: Option<ExtractionSpec>,
    pub target: usize,
    pub profile: LinkProfile,
    pub schemes: Vec<SchemeEntry>,
    pub sweep: SweepSpec,
    #[serde(default)]
    pub oracle: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_trials() -> usize {
    1
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: SweepConfig = read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        resolve(&mut cfg.image);
        resolve(&mut cfg.mask);
        if let Some(p) = cfg.partition.as_mut() {
            resolve(p);
        }
        if cfg.partition.is_none() && (cfg.grid.is_none() || cfg.extraction.is_none()) {
            return Err(Error::Config(
                "config needs either `partition` or both `grid` and `extraction`".into(),
            ));
        }
        cfg.schemes()?;
        Ok(cfg)
    }

    pub fn schemes(&self) -> Result<Vec<Scheme>> {
        self.schemes.iter().map(SchemeEntry::resolve).collect()
    }
}

/// Object regions from a mask via the grid pre-segmentation, with the
/// background as the mask's complement.
pub fn presegment(object: &RegionMask, grid: GridSpec) -> Result<(RegionSet, RegionMask)> {
    let regions = imaging::grid_presegment(object, grid.rows, grid.cols)?;
    Ok((regions, object.complement()))
}

/// Minimum blocklength helper used by the command line.
pub fn blocklength(k: u64, eps_c: f64, eps_t: f64, mode: CodingMode) -> Result<u64> {
    match mode {
        CodingMode::Na => Ok(channel::na_min_blocklength(k, eps_c, eps_t)?.codeword_bits),
        CodingMode::Ideal => channel::ideal_blocklength(k, eps_c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::PrototypeModel;
    use crate::imaging::Rect;
    use crate::source_codec::SourceMode;
    use std::collections::BTreeMap;

    struct Fixture {
        img: Image,
        regions: RegionSet,
        background: RegionMask,
        partition: RegionPartition,
        model: PrototypeModel,
    }

    impl Fixture {
        fn new() -> Self {
            let img = Image::from_fn(16, 16, 1, |x, y, _| if x < 8 && y < 8 { 192 } else { 100 }).unwrap();
            let other = Image::from_fn(16, 16, 1, |x, y, _| if x < 8 && y < 8 { 64 } else { 100 }).unwrap();
            let model = PrototypeModel::new(vec![img.clone(), other], 0.001).unwrap();
            let quad = |x0, y0| RegionMask::from_rect(16, 16, Rect { x0, y0, w: 8, h: 8 });
            let regions = RegionSet::new(vec![(1, quad(0, 0)), (2, quad(8, 0)), (3, quad(0, 8))]).unwrap();
            let background = quad(8, 8);
            let partition = RegionPartition {
                star_id: 1,
                positive_ids: vec![2],
                negative_ids: vec![3],
                members: BTreeMap::from([(1, vec![1]), (2, vec![2]), (3, vec![3])]),
                achieved_probability: 0.9,
                values: BTreeMap::from([(2, 0.0), (3, -0.1)]),
            };
            Fixture {
                img,
                regions,
                background,
                partition,
                model,
            }
        }

        fn inputs(&self) -> SchemeInputs<'_> {
            SchemeInputs {
                img: &self.img,
                regions: &self.regions,
                background: &self.background,
                partition: &self.partition,
            }
        }
    }

    fn profile() -> LinkProfile {
        LinkProfile {
            source: SourceMode::Uncompressed,
            ..LinkProfile::new(50, 50, 0.2014, 1e-2).unwrap()
        }
    }

    #[test]
    fn metric_identities_hold() {
        let f = Fixture::new();
        for scheme in Scheme::presets() {
            let r = run_scheme(&f.inputs(), &profile(), &scheme, &f.model, 1, 3, 7).unwrap();
            assert_eq!(r.k, 16 * 16 * 8);
            assert_eq!(r.rate, r.k as f64 / r.n as f64);
            assert_eq!(r.efficiency, r.p_d * r.rate);
            assert!((0.0..=1.0).contains(&r.p_d));
            let per_trial: Vec<u64> = r
                .records
                .iter()
                .map(|t| t.streams.iter().map(|s| s.channel_bits).sum())
                .collect();
            assert!(per_trial.iter().all(|&n| n == r.n));
        }
    }

    #[test]
    fn star_only_bit_accounting() {
        let f = Fixture::new();
        let r = run_scheme(&f.inputs(), &profile(), &Scheme::star_only(), &f.model, 1, 1, 0).unwrap();
        let streams = &r.records[0].streams;
        assert_eq!(streams.len(), 2);
        // Star: 8x8 raw samples protected; rest: full 16x16 rect sent raw.
        assert_eq!(streams[0].source_bits, 512);
        assert_eq!(
            streams[0].channel_bits,
            channel::na_min_blocklength(512, 0.2014, 1e-2).unwrap().codeword_bits
        );
        assert_eq!(streams[1].source_bits, 2048);
        assert_eq!(streams[1].channel_bits, 2048);
    }

    #[test]
    fn omitted_background_costs_nothing() {
        let f = Fixture::new();
        let scheme = Scheme::full_image().with_background(BackgroundPolicy::Omit);
        let r = run_scheme(&f.inputs(), &profile(), &scheme, &f.model, 1, 1, 0).unwrap();
        let streams = &r.records[0].streams;
        assert_eq!(streams.len(), 1);
        assert!(streams[0].protected);
        // Bounding box of the three object quadrants is the whole image.
        assert_eq!(streams[0].source_bits, 2048);
    }

    #[test]
    fn degenerate_profile_makes_schemes_coincide() {
        let f = Fixture::new();
        let p = LinkProfile {
            source: SourceMode::Codec,
            ..LinkProfile::new(40, 40, 0.01, 0.01).unwrap()
        };
        let results: Vec<SchemeResult> = Scheme::presets()
            .iter()
            .map(|s| run_scheme(&f.inputs(), &p, s, &f.model, 1, 4, 3).unwrap())
            .collect();
        for r in &results[1..] {
            assert_eq!(r.p_d, results[0].p_d);
            assert_eq!(r.n, results[0].n);
        }
    }

    #[test]
    fn trials_are_prefix_stable() {
        let f = Fixture::new();
        let a = run_scheme(&f.inputs(), &profile(), &Scheme::star_positive(), &f.model, 1, 2, 11).unwrap();
        let b = run_scheme(&f.inputs(), &profile(), &Scheme::star_positive(), &f.model, 1, 5, 11).unwrap();
        assert_eq!(a.records[..], b.records[..2]);
    }

    #[test]
    fn partition_must_cover_regions() {
        let f = Fixture::new();
        let mut bad = f.partition.clone();
        bad.negative_ids.clear();
        let inputs = SchemeInputs {
            partition: &bad,
            ..f.inputs()
        };
        assert!(matches!(
            run_scheme(&inputs, &profile(), &Scheme::star_only(), &f.model, 1, 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sweep_rejects_bad_grid_and_matches_single_runs() {
        let f = Fixture::new();
        let bad = SweepSpec {
            variable: SweepVariable::EpsT,
            values: vec![1e-2, 0.3],
            snr_scale: 1.0,
        };
        assert!(matches!(
            run_sweep(&f.inputs(), &profile(), &bad, &Scheme::presets(), &f.model, 1, 1, 0),
            Err(Error::Config(_))
        ));

        let one = SweepSpec {
            variable: SweepVariable::EpsT,
            values: vec![1e-3],
            snr_scale: 1.0,
        };
        let table = run_sweep(&f.inputs(), &profile(), &one, &[Scheme::star_only()], &f.model, 1, 2, 5).unwrap();
        let direct = run_scheme(
            &f.inputs(),
            &LinkProfile {
                eps_t: 1e-3,
                ..profile()
            },
            &Scheme::star_only(),
            &f.model,
            1,
            2,
            5,
        )
        .unwrap();
        assert_eq!(table.rows[0].result, direct);
        let csv = table.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn channel_gain_sweep_sets_channel_error_rate() {
        let spec = SweepSpec {
            variable: SweepVariable::H2,
            values: vec![0.7],
            snr_scale: 1.0,
        };
        let p = spec.apply(&profile(), 0.7).unwrap();
        assert!((p.eps_c - 0.201_391_847_123_237_85).abs() < 1e-12);
        let q = SweepSpec {
            variable: SweepVariable::QT,
            values: vec![],
            snr_scale: 1.0,
        };
        assert!(q.apply(&profile(), 49.5).is_err());
        assert!(q.apply(&profile(), 20.0).is_err());
        assert_eq!(q.apply(&profile(), 80.0).unwrap().q_t, 80);
    }

    #[test]
    fn region_files_round_trip() {
        let f = Fixture::new();
        let file = PartitionFile {
            regions: RegionSetFile::new(&f.regions, &f.background),
            partition: f.partition.clone(),
        };
        let text = serde_json::to_string(&file).unwrap();
        let back: PartitionFile = serde_json::from_str(&text).unwrap();
        let (regions, background, partition) = back.decode().unwrap();
        assert_eq!(regions.ids(), f.regions.ids());
        assert_eq!(regions.mask(2), f.regions.mask(2));
        assert_eq!(background, f.background);
        assert_eq!(partition, f.partition);
    }

    #[test]
    fn scheme_entries_parse() {
        let entries: Vec<SchemeEntry> = serde_json::from_str(
            r#"["star", {"name": "mine", "protect": ["star", "background"], "background": "omit", "coding": "ideal"}]"#,
        )
        .unwrap();
        assert_eq!(entries[0].resolve().unwrap(), Scheme::star_only());
        let custom = entries[1].resolve().unwrap();
        assert_eq!(custom.background, BackgroundPolicy::Omit);
        assert_eq!(custom.coding, Some(CodingMode::Ideal));
        assert!(SchemeEntry::Preset("nope".into()).resolve().is_err());
    }
}
