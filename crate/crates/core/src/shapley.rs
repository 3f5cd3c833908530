//! Region importance via Shapley values of a coalition game.
//!
//! The value of a coalition `A` of regions is the target-class probability
//! of the image reconstructed when the regions in `A` go out at `(q_t, eps_t)`
//! and everything else at `(q_b, eps_c)`, averaged over a number of seeded
//! channel realizations. On top of the estimators sit the two extraction
//! procedures: the merge loop that grows the most important region until it
//! alone clears the probability threshold, and the conditional ranking that
//! splits the remaining regions into helpful and harmful ones.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::Oracle;
use crate::error::{Error, Result};
use crate::imaging::{Image, RegionMask, RegionSet};
use crate::link::{self, BackgroundPolicy, LinkProfile};
use crate::seed::{self, label};

/// Largest region count for exhaustive enumeration.
pub const EXHAUSTIVE_LIMIT: usize = 12;
pub const DEFAULT_TRIALS: usize = 8;
/// Permutations used when a game is too large for enumeration.
pub const DEFAULT_PERMUTATIONS: usize = 1000;
const MASK_PLAYERS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingProfile {
    #[serde(flatten)]
    pub link: LinkProfile,
    /// Channel realizations averaged per coalition value.
    pub trials: usize,
    pub master_seed: u64,
}

impl CodingProfile {
    pub fn new(link: LinkProfile, trials: usize, master_seed: u64) -> Result<Self> {
        let p = CodingProfile {
            link,
            trials,
            master_seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Both groups are coded identically, so coalitions are indistinguishable.
    pub fn is_degenerate(&self) -> bool {
        self.link.q_t == self.link.q_b && self.link.eps_t >= self.link.eps_c
    }
}

/// Anything that assigns a value to a sorted coalition of player ids.
pub trait CoalitionValue: Sync {
    fn value(&self, coalition: &[u32]) -> Result<f64>;
}

impl<F> CoalitionValue for F
where
    F: Fn(&[u32]) -> Result<f64> + Sync,
{
    fn value(&self, coalition: &[u32]) -> Result<f64> {
        self(coalition)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Estimator {
    Exact,
    Sampled { permutations: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub estimator: Estimator,
    pub values: BTreeMap<u32, f64>,
    /// Standard error of each sampled estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<BTreeMap<u32, f64>>,
    /// Marginal contributions averaged into each region's value.
    pub marginals_per_region: u64,
    /// Distinct coalitions whose value was computed.
    pub coalitions_evaluated: usize,
    pub empty_value: f64,
    pub grand_value: f64,
}

impl ShapleyReport {
    pub fn value(&self, id: u32) -> Option<f64> {
        self.values.get(&id).copied()
    }

    /// Highest-valued id; ties go to the smallest id.
    pub fn argmax(&self) -> Option<u32> {
        self.best_excluding(None)
    }

    /// Highest-valued id other than `skip`.
    pub fn runner_up(&self, skip: u32) -> Option<u32> {
        self.best_excluding(Some(skip))
    }

    fn best_excluding(&self, skip: Option<u32>) -> Option<u32> {
        let mut best: Option<(u32, f64)> = None;
        for (&id, &v) in &self.values {
            if Some(id) == skip {
                continue;
            }
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((id, v));
            }
        }
        best.map(|(id, _)| id)
    }
}

fn sorted_players(players: &[u32]) -> Result<Vec<u32>> {
    let set: BTreeSet<u32> = players.iter().copied().collect();
    if set.len() != players.len() {
        return Err(Error::domain("duplicate player id"));
    }
    Ok(set.into_iter().collect())
}

fn members(players: &[u32], mask: u64) -> Vec<u32> {
    players
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, &id)| id)
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exhaustive Shapley values: every one of the `2^n` coalitions is
/// evaluated exactly once (in parallel), then reduced in ascending
/// coalition order.
pub fn shapley_exact_with(players: &[u32], game: &impl CoalitionValue, limit: usize) -> Result<ShapleyReport> {
    let players = sorted_players(players)?;
    let n = players.len();
    if n > limit.min(MASK_PLAYERS - 1) {
        return Err(Error::TooManyRegions { count: n, limit });
    }
    let table: Vec<f64> = (0..1u64 << n)
        .into_par_iter()
        .map(|m| game.value(&members(&players, m)))
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = (0..n.max(1)).map(|k| 1.0 / (n as f64 * binomial(n - 1, k))).collect();
    let mut values = BTreeMap::new();
    for (i, &id) in players.iter().enumerate() {
        let bit = 1u64 << i;
        // Marginals are summed per coalition size and weighted once.
        let mut by_size = vec![0.0; n.max(1)];
        for m in 0..1u64 << n {
            if m & bit == 0 {
                by_size[m.count_ones() as usize] += table[(m | bit) as usize] - table[m as usize];
            }
        }
        values.insert(id, by_size.iter().zip(&weights).map(|(s, w)| s * w).sum());
    }
    Ok(ShapleyReport {
        estimator: Estimator::Exact,
        values,
        std_errors: None,
        marginals_per_region: if n == 0 { 0 } else { 1 << (n - 1) },
        coalitions_evaluated: table.len(),
        empty_value: table[0],
        grand_value: table[table.len() - 1],
    })
}

/// Permutation-sampling estimator. Permutations come from a generator
/// seeded with `seed`; the distinct coalitions they visit are evaluated in
/// parallel and the marginals are accumulated in permutation order.
pub fn shapley_sampled_with(
    players: &[u32],
    game: &impl CoalitionValue,
    permutations: usize,
    seed: u64,
) -> Result<ShapleyReport> {
    if permutations == 0 {
        return Err(Error::Config("permutation count must be at least 1".into()));
    }
    let players = sorted_players(players)?;
    let n = players.len();
    if n > MASK_PLAYERS {
        return Err(Error::TooManyRegions {
            count: n,
            limit: MASK_PLAYERS,
        });
    }
    let full = if n == MASK_PLAYERS { u64::MAX } else { (1u64 << n) - 1 };
    let mut rng = seed::rng(seed, &[label::PERMUTATION]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut perms = Vec::with_capacity(permutations);
    let mut needed = BTreeSet::from([0u64, full]);
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let mut m = 0u64;
        for &i in &order {
            m |= 1 << i;
            needed.insert(m);
        }
        perms.push(order.clone());
    }
    let needed: Vec<u64> = needed.into_iter().collect();
    let evaluated: Vec<f64> = needed
        .par_iter()
        .map(|&m| game.value(&members(&players, m)))
        .collect::<Result<_>>()?;
    let table: HashMap<u64, f64> = needed.iter().copied().zip(evaluated).collect();

    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for perm in &perms {
        let mut m = 0u64;
        for &i in perm {
            let next = m | 1 << i;
            let d = table[&next] - table[&m];
            sum[i] += d;
            sum_sq[i] += d * d;
            m = next;
        }
    }
    let count = permutations as f64;
    let mut values = BTreeMap::new();
    let mut errors = BTreeMap::new();
    for (i, &id) in players.iter().enumerate() {
        let mean = sum[i] / count;
        let var = if permutations > 1 {
            ((sum_sq[i] - count * mean * mean) / (count - 1.0)).max(0.0)
        } else {
            0.0
        };
        values.insert(id, mean);
        errors.insert(id, (var / count).sqrt());
    }
    Ok(ShapleyReport {
        estimator: Estimator::Sampled { permutations },
        values,
        std_errors: Some(errors),
        marginals_per_region: permutations as u64,
        coalitions_evaluated: table.len(),
        empty_value: table[&0],
        grand_value: table[&full],
    })
}

/// Which estimator to use for a game of a given size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorChoice {
    pub exhaustive_limit: usize,
    pub permutations: usize,
    /// Sample even when enumeration would be allowed.
    #[serde(default)]
    pub force_sampling: bool,
}

impl Default for EstimatorChoice {
    fn default() -> Self {
        EstimatorChoice {
            exhaustive_limit: EXHAUSTIVE_LIMIT,
            permutations: DEFAULT_PERMUTATIONS,
            force_sampling: false,
        }
    }
}

impl EstimatorChoice {
    pub fn run(&self, players: &[u32], game: &impl CoalitionValue, seed: u64) -> Result<ShapleyReport> {
        if !self.force_sampling && players.len() <= self.exhaustive_limit {
            shapley_exact_with(players, game, self.exhaustive_limit)
        } else {
            shapley_sampled_with(players, game, self.permutations, seed)
        }
    }
}

/// The region game over one image: value of `A` is the mean `p^D` of the
/// reconstruction with `A` (plus any forced regions) protected.
pub struct CoalitionGame<'a> {
    img: &'a Image,
    regions: &'a RegionSet,
    background: &'a RegionMask,
    profile: CodingProfile,
    oracle: &'a dyn Oracle,
    target: usize,
    forced: Vec<u32>,
    memo: Mutex<HashMap<Vec<u32>, f64>>,
}

impl<'a> CoalitionGame<'a> {
    pub fn new(
        img: &'a Image,
        regions: &'a RegionSet,
        background: &'a RegionMask,
        profile: CodingProfile,
        oracle: &'a dyn Oracle,
        target: usize,
    ) -> Result<Self> {
        profile.validate()?;
        img.check_mask(background)?;
        for (_, mask) in regions.iter() {
            img.check_mask(mask)?;
            if !mask.is_disjoint(background) {
                return Err(Error::domain("background overlaps an object region"));
            }
        }
        if target == 0 || target > oracle.num_classes() {
            return Err(Error::Config(format!(
                "target class {target} outside 1..={}",
                oracle.num_classes()
            )));
        }
        Ok(CoalitionGame {
            img,
            regions,
            background,
            profile,
            oracle,
            target,
            forced: Vec::new(),
            memo: Mutex::new(HashMap::new()),
        })
    }

    /// The same game with `ids` added to every coalition.
    pub fn conditioned_on(mut self, ids: &[u32]) -> Result<Self> {
        for id in ids {
            if self.regions.mask(*id).is_none() {
                return Err(Error::domain(format!("unknown region id {id}")));
            }
        }
        self.forced = sorted_players(ids)?;
        self.memo.get_mut().unwrap_or_else(|p| p.into_inner()).clear();
        Ok(self)
    }

    pub fn regions(&self) -> &RegionSet {
        self.regions
    }

    pub fn profile(&self) -> &CodingProfile {
        &self.profile
    }

    /// Players of this game: all region ids minus the forced ones.
    pub fn players(&self) -> Vec<u32> {
        self.regions
            .ids()
            .into_iter()
            .filter(|id| !self.forced.contains(id))
            .collect()
    }

    /// Coalition value, memoized.
    pub fn evaluate(&self, coalition: &[u32]) -> Result<f64> {
        let mut key: Vec<u32> = coalition.iter().chain(&self.forced).copied().collect();
        key.sort_unstable();
        key.dedup();
        for id in &key {
            if self.regions.mask(*id).is_none() {
                return Err(Error::domain(format!("unknown region id {id}")));
            }
        }
        if self.profile.is_degenerate() {
            key.clear();
        }
        if let Some(v) = self.memo.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(*v);
        }
        let v = self.compute(&key)?;
        self.memo.lock().unwrap_or_else(|p| p.into_inner()).insert(key, v);
        Ok(v)
    }

    /// Reconstruction of `U(A)` for one channel realization.
    pub fn render(&self, coalition: &[u32], trial: usize) -> Result<link::Transmission> {
        let mut labels = Vec::with_capacity(coalition.len() + 2);
        labels.push(label::COALITION);
        labels.extend(coalition.iter().map(|&id| id as u64));
        labels.push(trial as u64);
        let seed = seed::derive(self.profile.master_seed, &labels);

        let (w, h) = (self.img.width(), self.img.height());
        let mut protected = RegionMask::empty(w, h);
        let mut unprotected = RegionMask::empty(w, h);
        for (id, mask) in self.regions.iter() {
            if coalition.binary_search(&id).is_ok() {
                protected = protected.union(mask)?;
            } else {
                unprotected = unprotected.union(mask)?;
            }
        }
        if self.profile.link.background == BackgroundPolicy::Transmit {
            unprotected = unprotected.union(self.background)?;
        }
        let base = link::receiver_base(self.img, self.background, self.profile.link.background, seed)?;
        link::transmit(self.img, &protected, &unprotected, &base, &self.profile.link, seed)
    }

    fn compute(&self, coalition: &[u32]) -> Result<f64> {
        let mut total = 0.0;
        for trial in 0..self.profile.trials {
            let t = self.render(coalition, trial)?;
            total += self.oracle.classify(&t.image, self.target)?.p_target();
        }
        Ok(total / self.profile.trials as f64)
    }
}

impl CoalitionValue for CoalitionGame<'_> {
    fn value(&self, coalition: &[u32]) -> Result<f64> {
        self.evaluate(coalition)
    }
}

/// Mean `p^D` of `U(A)`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_coalition(
    img: &Image,
    regions: &RegionSet,
    background: &RegionMask,
    coalition: &[u32],
    profile: &CodingProfile,
    oracle: &dyn Oracle,
    target: usize,
) -> Result<f64> {
    CoalitionGame::new(img, regions, background, *profile, oracle, target)?.evaluate(coalition)
}

pub fn shapley_exact(game: &CoalitionGame<'_>) -> Result<ShapleyReport> {
    shapley_exact_with(&game.players(), game, EXHAUSTIVE_LIMIT)
}

pub fn shapley_sampled(game: &CoalitionGame<'_>, permutations: usize) -> Result<ShapleyReport> {
    shapley_sampled_with(&game.players(), game, permutations, game.profile.master_seed)
}

/// Outcome of the merge loop.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub star_id: u32,
    pub star_mask: RegionMask,
    /// Final region set, star included.
    pub regions: RegionSet,
    /// Original region ids folded into each final region.
    pub members: BTreeMap<u32, Vec<u32>>,
    /// Shapley report of every iteration.
    pub trail: Vec<ShapleyReport>,
    pub achieved_probability: f64,
}

/// Repeatedly scores the regions, and either accepts the top one (when it
/// alone lifts `p^D` above `p_th`) or merges it with the runner-up.
#[allow(clippy::too_many_arguments)]
pub fn algorithm1_segment(
    img: &Image,
    regions: &RegionSet,
    background: &RegionMask,
    profile: &CodingProfile,
    oracle: &dyn Oracle,
    target: usize,
    p_th: f64,
    choice: &EstimatorChoice,
) -> Result<Segmentation> {
    if !(p_th > 0.0 && p_th < 1.0) {
        return Err(Error::Config(format!("p_th = {p_th} outside (0, 1)")));
    }
    if regions.is_empty() {
        return Err(Error::domain("no regions to segment"));
    }
    let mut current = regions.clone();
    let mut members: BTreeMap<u32, Vec<u32>> = current.ids().into_iter().map(|id| (id, vec![id])).collect();
    let mut trail = Vec::new();
    let mut best = f64::NEG_INFINITY;
    loop {
        let game = CoalitionGame::new(img, &current, background, *profile, oracle, target)?;
        let report = choice.run(&game.players(), &game, profile.master_seed)?;
        let star = report.argmax().expect("non-empty region set");
        let p = game.evaluate(&[star])?;
        log::debug!("merge loop: {} regions, top {star} with p = {p}", current.len());
        best = best.max(p);
        let runner = report.runner_up(star);
        trail.push(report);
        if p > p_th {
            let star_mask = current.mask(star).expect("star is a member").clone();
            return Ok(Segmentation {
                star_id: star,
                star_mask,
                regions: current,
                members,
                trail,
                achieved_probability: p,
            });
        }
        let Some(runner) = runner else {
            return Err(Error::ThresholdUnachievable { best });
        };
        let merged = current
            .mask(star)
            .expect("star is a member")
            .union(current.mask(runner).expect("runner-up is a member"))?;
        let next: Vec<(u32, RegionMask)> = current
            .iter()
            .filter(|(id, _)| *id != runner)
            .map(|(id, m)| (id, if id == star { merged.clone() } else { m.clone() }))
            .collect();
        current = RegionSet::new(next)?;
        let absorbed = members.remove(&runner).expect("runner-up tracked");
        let star_members = members.get_mut(&star).expect("star tracked");
        star_members.extend(absorbed);
        star_members.sort_unstable();
    }
}

/// Split of the final regions around the most important one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub star_id: u32,
    /// Ids (in the final region set) with non-negative conditional value.
    pub positive_ids: Vec<u32>,
    pub negative_ids: Vec<u32>,
    /// Original region ids behind each final id.
    pub members: BTreeMap<u32, Vec<u32>>,
    /// `p^D` with only the star region protected.
    pub achieved_probability: f64,
    /// Conditional Shapley values of the non-star regions.
    pub values: BTreeMap<u32, f64>,
}

impl RegionPartition {
    /// Original ids merged into the star region.
    pub fn star_members(&self) -> &[u32] {
        self.members.get(&self.star_id).map_or(&[], |v| v)
    }
}

/// Ranks the non-star regions by their Shapley value in the game where the
/// star region is always protected.
#[allow(clippy::too_many_arguments)]
pub fn algorithm2_rank(
    img: &Image,
    regions: &RegionSet,
    background: &RegionMask,
    star_id: u32,
    members: &BTreeMap<u32, Vec<u32>>,
    profile: &CodingProfile,
    oracle: &dyn Oracle,
    target: usize,
    choice: &EstimatorChoice,
) -> Result<RegionPartition> {
    let game = CoalitionGame::new(img, regions, background, *profile, oracle, target)?.conditioned_on(&[star_id])?;
    let report = choice.run(&game.players(), &game, profile.master_seed)?;
    let (positive_ids, negative_ids): (Vec<u32>, Vec<u32>) =
        report.values.keys().partition(|id| report.values[id] >= 0.0);
    Ok(RegionPartition {
        star_id,
        positive_ids,
        negative_ids,
        members: members.clone(),
        achieved_probability: game.evaluate(&[])?,
        values: report.values,
    })
}

/// Both procedures back to back.
#[allow(clippy::too_many_arguments)]
pub fn extract(
    img: &Image,
    regions: &RegionSet,
    background: &RegionMask,
    profile: &CodingProfile,
    oracle: &dyn Oracle,
    target: usize,
    p_th: f64,
    choice: &EstimatorChoice,
) -> Result<(Segmentation, RegionPartition)> {
    let seg = algorithm1_segment(img, regions, background, profile, oracle, target, p_th, choice)?;
    let partition = algorithm2_rank(
        img,
        &seg.regions,
        background,
        seg.star_id,
        &seg.members,
        profile,
        oracle,
        target,
        choice,
    )?;
    Ok((seg, partition))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::CodingMode;
    use crate::classifier::PrototypeModel;
    use crate::imaging::Rect;
    use crate::source_codec::SourceMode;

    fn table_game(table: &'static [(&'static [u32], f64)]) -> impl Fn(&[u32]) -> Result<f64> + Sync {
        move |a: &[u32]| {
            Ok(table
                .iter()
                .find(|(k, _)| *k == a)
                .map(|(_, v)| *v)
                .expect("coalition in table"))
        }
    }

    const TABLE3: &[(&[u32], f64)] = &[
        (&[], 0.1),
        (&[1], 0.5),
        (&[2], 0.2),
        (&[3], 0.15),
        (&[1, 2], 0.7),
        (&[1, 3], 0.55),
        (&[2, 3], 0.3),
        (&[1, 2, 3], 0.9),
    ];

    #[test]
    fn three_player_table_matches_brute_force() {
        let r = shapley_exact_with(&[3, 1, 2], &table_game(TABLE3), EXHAUSTIVE_LIMIT).unwrap();
        // exact rationals 29/60, 5/24, 13/120
        assert!((r.values[&1] - 29.0 / 60.0).abs() < 1e-12);
        assert!((r.values[&2] - 5.0 / 24.0).abs() < 1e-12);
        assert!((r.values[&3] - 13.0 / 120.0).abs() < 1e-12);
        assert_eq!(r.coalitions_evaluated, 8);
        assert_eq!(r.marginals_per_region, 4);
        assert_eq!(r.argmax(), Some(1));
        assert_eq!(r.runner_up(1), Some(2));
    }

    #[test]
    fn single_player_is_its_marginal() {
        let g = |a: &[u32]| Ok(if a.is_empty() { 0.25 } else { 0.8 });
        let r = shapley_exact_with(&[7], &g, EXHAUSTIVE_LIMIT).unwrap();
        assert!((r.values[&7] - 0.55).abs() < 1e-15);
    }

    #[test]
    fn constant_game_gives_zero_for_both_estimators() {
        let g = |_: &[u32]| Ok(0.37);
        let exact = shapley_exact_with(&[1, 2, 3, 4], &g, EXHAUSTIVE_LIMIT).unwrap();
        let sampled = shapley_sampled_with(&[1, 2, 3, 4], &g, 17, 5).unwrap();
        for id in 1..=4 {
            assert_eq!(exact.values[&id], 0.0);
            assert_eq!(sampled.values[&id], 0.0);
            assert_eq!(sampled.std_errors.as_ref().unwrap()[&id], 0.0);
        }
    }

    #[test]
    fn ties_break_toward_smallest_id() {
        let g = |a: &[u32]| Ok(a.len() as f64);
        let r = shapley_exact_with(&[9, 4, 6], &g, EXHAUSTIVE_LIMIT).unwrap();
        assert_eq!(r.argmax(), Some(4));
        assert_eq!(r.runner_up(4), Some(6));
    }

    #[test]
    fn enumeration_limit_is_enforced() {
        let g = |_: &[u32]| Ok(0.0);
        let players: Vec<u32> = (1..=13).collect();
        assert!(matches!(
            shapley_exact_with(&players, &g, EXHAUSTIVE_LIMIT),
            Err(Error::TooManyRegions { count: 13, limit: 12 })
        ));
        assert!(shapley_sampled_with(&players, &g, 3, 0).is_ok());
        assert!(shapley_sampled_with(&players, &g, 0, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let g = table_game(TABLE3);
        let a = shapley_sampled_with(&[1, 2, 3], &g, 50, 11).unwrap();
        let b = shapley_sampled_with(&[1, 2, 3], &g, 50, 11).unwrap();
        let c = shapley_sampled_with(&[1, 2, 3], &g, 50, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        // Every permutation's marginals sum to the grand coalition gain.
        let total: f64 = a.values.values().sum();
        assert!((total - 0.8).abs() < 1e-12);
    }

    /// Two-region instance: templates (128 +/- 64) differ only inside
    /// region 1; the image equals the target template.
    fn toy() -> (Image, RegionSet, RegionMask, PrototypeModel) {
        let r1 = Rect {
            x0: 0,
            y0: 0,
            w: 8,
            h: 8,
        };
        let r2 = Rect {
            x0: 8,
            y0: 0,
            w: 8,
            h: 8,
        };
        let img = Image::from_fn(16, 8, 1, |x, _, _| if x < 8 { 192 } else { 128 }).unwrap();
        let other = Image::from_fn(16, 8, 1, |x, _, _| if x < 8 { 64 } else { 128 }).unwrap();
        let model = PrototypeModel::new(vec![img.clone(), other], 0.0004).unwrap();
        let regions = RegionSet::new(vec![
            (1, RegionMask::from_rect(16, 8, r1)),
            (2, RegionMask::from_rect(16, 8, r2)),
        ])
        .unwrap();
        (img, regions, RegionMask::empty(16, 8), model)
    }

    fn poor_profile(trials: usize) -> CodingProfile {
        let link = LinkProfile {
            source: SourceMode::Uncompressed,
            coding: CodingMode::Na,
            ..LinkProfile::new(50, 50, 0.2014, 1e-4).unwrap()
        };
        CodingProfile::new(link, trials, 42).unwrap()
    }

    #[test]
    fn discriminative_region_scores_higher() {
        let (img, regions, bg, model) = toy();
        let p = poor_profile(2);
        let p1 = evaluate_coalition(&img, &regions, &bg, &[1], &p, &model, 1).unwrap();
        let p2 = evaluate_coalition(&img, &regions, &bg, &[2], &p, &model, 1).unwrap();
        assert!(p1 > p2, "{p1} vs {p2}");
        assert!(p1 > 0.95, "{p1}");
    }

    #[test]
    fn degenerate_profile_flattens_the_game() {
        let (img, regions, bg, model) = toy();
        let link = LinkProfile::new(30, 30, 0.05, 0.05).unwrap();
        let p = CodingProfile::new(link, 2, 1).unwrap();
        let game = CoalitionGame::new(&img, &regions, &bg, p, &model, 1).unwrap();
        let v: Vec<f64> = [&[][..], &[1], &[2], &[1, 2]]
            .iter()
            .map(|a| game.evaluate(a).unwrap())
            .collect();
        assert!(v.iter().all(|x| *x == v[0]));
    }

    #[test]
    fn full_coalition_without_errors_reproduces_clean_classification() {
        let (img, regions, bg, model) = toy();
        let link = LinkProfile {
            source: SourceMode::Uncompressed,
            coding: CodingMode::Ideal,
            ..LinkProfile::new(100, 100, 0.2, 0.0).unwrap()
        };
        let p = CodingProfile::new(link, 1, 9).unwrap();
        let v = evaluate_coalition(&img, &regions, &bg, &[1, 2], &p, &model, 1).unwrap();
        assert_eq!(v, model.classify(&img, 1).unwrap().p_target());
    }

    #[test]
    fn merge_loop_stops_on_a_sufficient_region() {
        let (img, regions, bg, model) = toy();
        let p = poor_profile(2);
        let seg = algorithm1_segment(&img, &regions, &bg, &p, &model, 1, 0.9, &EstimatorChoice::default()).unwrap();
        assert_eq!(seg.star_id, 1);
        assert_eq!(seg.trail.len(), 1);
        assert_eq!(seg.regions.len(), 2);
        assert!(seg.achieved_probability > 0.9);

        let single = RegionSet::new(vec![(5, RegionMask::full(16, 8))]).unwrap();
        let seg = algorithm1_segment(&img, &single, &bg, &p, &model, 1, 0.9, &EstimatorChoice::default()).unwrap();
        assert_eq!((seg.star_id, seg.regions.len()), (5, 1));
    }

    #[test]
    fn degenerate_profile_cannot_reach_threshold() {
        let (img, regions, bg, model) = toy();
        let link = LinkProfile {
            source: SourceMode::Uncompressed,
            ..LinkProfile::new(50, 50, 0.3, 0.3).unwrap()
        };
        let p = CodingProfile::new(link, 2, 3).unwrap();
        match algorithm1_segment(&img, &regions, &bg, &p, &model, 1, 0.99, &EstimatorChoice::default()) {
            Err(Error::ThresholdUnachievable { best }) => assert!(best <= 0.99),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn merge_loop_merges_until_threshold() {
        // Two halves that each carry half the evidence.
        let img = Image::filled(16, 8, 1, 192).unwrap();
        let other = Image::filled(16, 8, 1, 64).unwrap();
        let model = PrototypeModel::new(vec![img.clone(), other], 0.0004).unwrap();
        let regions = RegionSet::new(vec![
            (
                1,
                RegionMask::from_rect(
                    16,
                    8,
                    Rect {
                        x0: 0,
                        y0: 0,
                        w: 8,
                        h: 8,
                    },
                ),
            ),
            (
                2,
                RegionMask::from_rect(
                    16,
                    8,
                    Rect {
                        x0: 8,
                        y0: 0,
                        w: 8,
                        h: 8,
                    },
                ),
            ),
        ])
        .unwrap();
        let bg = RegionMask::empty(16, 8);
        let p = poor_profile(1);
        let half = evaluate_coalition(&img, &regions, &bg, &[1], &p, &model, 1).unwrap();
        let both = evaluate_coalition(&img, &regions, &bg, &[1, 2], &p, &model, 1).unwrap();
        assert!(half < both);
        let p_th = (half.max(evaluate_coalition(&img, &regions, &bg, &[2], &p, &model, 1).unwrap()) + both) / 2.0;
        let seg = algorithm1_segment(&img, &regions, &bg, &p, &model, 1, p_th, &EstimatorChoice::default()).unwrap();
        assert_eq!(seg.regions.len(), 1);
        assert_eq!(seg.trail.len(), 2);
        assert_eq!(seg.members[&seg.star_id], vec![1, 2]);
        assert_eq!(seg.star_mask, RegionMask::full(16, 8));
    }

    #[test]
    fn conditional_ranking_equals_reduced_game() {
        let (img, regions, bg, model) = toy();
        let p = poor_profile(2);
        let members = BTreeMap::from([(1, vec![1]), (2, vec![2])]);
        let part = algorithm2_rank(
            &img,
            &regions,
            &bg,
            1,
            &members,
            &p,
            &model,
            1,
            &EstimatorChoice::default(),
        )
        .unwrap();
        let game = CoalitionGame::new(&img, &regions, &bg, p, &model, 1).unwrap();
        let reduced = |a: &[u32]| {
            let mut with_star = a.to_vec();
            with_star.push(1);
            with_star.sort_unstable();
            game.evaluate(&with_star)
        };
        let r = shapley_exact_with(&[2], &reduced, EXHAUSTIVE_LIMIT).unwrap();
        assert_eq!(part.values, r.values);
        assert_eq!(part.star_members(), &[1]);
        assert_eq!(part.positive_ids.len() + part.negative_ids.len(), 1, "{part:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Textbook definition: average marginal over all n! orders.
        fn brute_force(n: usize, table: &[f64]) -> Vec<f64> {
            fn permute(rest: &mut Vec<usize>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                if rest.is_empty() {
                    out.push(prefix.clone());
                    return;
                }
                for i in 0..rest.len() {
                    let x = rest.remove(i);
                    prefix.push(x);
                    permute(rest, prefix, out);
                    prefix.pop();
                    rest.insert(i, x);
                }
            }
            let mut orders = Vec::new();
            permute(&mut (0..n).collect(), &mut Vec::new(), &mut orders);
            let mut v = vec![0.0; n];
            for order in &orders {
                let mut m = 0usize;
                for &i in order {
                    v[i] += table[m | 1 << i] - table[m];
                    m |= 1 << i;
                }
            }
            v.iter().map(|x| x / orders.len() as f64).collect()
        }

        fn lookup(table: &[f64]) -> impl Fn(&[u32]) -> Result<f64> + Sync + '_ {
            move |a: &[u32]| Ok(table[a.iter().map(|&id| 1usize << (id - 1)).sum::<usize>()])
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn exact_matches_permutation_definition(
                n in 1usize..=6,
                raw in proptest::collection::vec(0.0f64..1.0, 64),
            ) {
                let table = &raw[..1 << n];
                let players: Vec<u32> = (1..=n as u32).collect();
                let r = shapley_exact_with(&players, &lookup(table), EXHAUSTIVE_LIMIT).unwrap();
                let bf = brute_force(n, table);
                for (i, id) in players.iter().enumerate() {
                    prop_assert!((r.values[id] - bf[i]).abs() < 1e-9);
                }
                let sum: f64 = r.values.values().sum();
                prop_assert!((sum - (table[(1 << n) - 1] - table[0])).abs() < 1e-9);
            }

            #[test]
            fn dummy_and_symmetric_players(
                n in 2usize..=6,
                raw in proptest::collection::vec(0.0f64..1.0, 64),
            ) {
                // Player 1 is a dummy: value depends only on the other bits.
                // Players 2 and 3 (when present) are interchangeable.
                let size = 1usize << n;
                let mut table = vec![0.0; size];
                for (m, slot) in table.iter_mut().enumerate() {
                    let mut key = m & !1;
                    if n >= 3 {
                        let (b2, b3) = ((m >> 1) & 1, (m >> 2) & 1);
                        key = (key & !0b110) | if b2 + b3 == 2 { 0b110 } else if b2 + b3 == 1 { 0b010 } else { 0 };
                    }
                    *slot = raw[key];
                }
                let players: Vec<u32> = (1..=n as u32).collect();
                let r = shapley_exact_with(&players, &lookup(&table), EXHAUSTIVE_LIMIT).unwrap();
                prop_assert_eq!(r.values[&1], 0.0);
                if n >= 3 {
                    prop_assert!((r.values[&2] - r.values[&3]).abs() < 1e-12);
                }
            }
        }
    }
}
