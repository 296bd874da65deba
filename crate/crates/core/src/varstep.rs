//! Partial truncated E-steps with exhaustive and estimated cluster
//! neighborhoods.
//!
//! Instead of evaluating every data-to-cluster distance, each point keeps a
//! truncation set of C' clusters and only searches the union of the
//! neighborhoods of those clusters (at most C'*G candidates, plus one
//! optional exploratory cluster). Because every cluster belongs to its own
//! neighborhood, the old truncation set is always inside the search space,
//! so re-selecting the C' nearest candidates can only bring in closer
//! clusters and the free energy never decreases.
//!
//! Neighborhoods come from one of two sources: an exhaustive pass over all
//! cluster-to-cluster distances, or an estimate built from the
//! data-to-cluster distances that the partial E-step computed anyway, at no
//! additional distance evaluations.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::count::{DistanceCounter, DistanceKind};
use crate::data::{Dataset, ModelParams};
use crate::dist::dist;
use crate::error::{Error, Result};
use crate::gmm::{normalize_softmax, Responsibilities};
use crate::rng::RngStream;
use crate::select::partition_k_smallest;

/// Per-point truncation sets and their cached distances.
///
/// Distances are refreshed by every partial E-step; right after
/// initialization (before the first E-step) they hold `+inf` placeholders.
#[derive(Debug, Clone)]
pub struct TruncationState {
    c_prime: usize,
    sets: Vec<Vec<usize>>,
    dists: Vec<Vec<f64>>,
}

impl TruncationState {
    pub fn c_prime(&self) -> usize {
        self.c_prime
    }

    pub fn n_points(&self) -> usize {
        self.sets.len()
    }

    pub fn set(&self, n: usize) -> &[usize] {
        &self.sets[n]
    }

    /// Cached distances aligned with [`set`](Self::set).
    pub fn distances(&self, n: usize) -> &[f64] {
        &self.dists[n]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }
}

/// How a neighbor index was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborSource {
    Random,
    Exhaustive,
    Estimated,
}

/// Per-cluster neighborhoods: cluster c together with G-1 neighbors.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    g: usize,
    members: Vec<Vec<usize>>,
    source: NeighborSource,
}

impl NeighborIndex {
    pub fn g(&self) -> usize {
        self.g
    }

    pub fn n_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    pub fn source(&self) -> NeighborSource {
        self.source
    }
}

/// Per-point search spaces with the distances computed for them during one
/// partial E-step. Not persisted across iterations.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    members: Vec<Vec<usize>>,
    dists: Vec<Vec<f64>>,
}

impl SearchSpace {
    pub fn n_points(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, n: usize) -> &[usize] {
        &self.members[n]
    }

    pub fn distances(&self, n: usize) -> &[f64] {
        &self.dists[n]
    }
}

/// Ownership partition and the sparse cluster-to-cluster estimates derived
/// from it.
#[derive(Debug, Clone)]
pub struct AssignmentIndex {
    owner: Vec<usize>,
    members: Vec<Vec<usize>>,
    estimates: BTreeMap<(usize, usize), PairEstimate>,
}

/// One normalized accumulator cell: the estimated distance between an
/// observed `(c, c-tilde)` pair and how many summands produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEstimate {
    pub distance: f64,
    pub observations: u64,
}

impl AssignmentIndex {
    /// Owning cluster of point `n` (argmin over its search space).
    pub fn owner(&self, n: usize) -> usize {
        self.owner[n]
    }

    /// Points owned by cluster `c`, ascending.
    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    /// Estimated distance for an observed pair; unobserved pairs are
    /// treated as infinitely far and are absent here.
    pub fn estimate(&self, c: usize, c_other: usize) -> Option<PairEstimate> {
        self.estimates.get(&(c, c_other)).copied()
    }

    pub fn estimates(&self) -> &BTreeMap<(usize, usize), PairEstimate> {
        &self.estimates
    }
}

/// Random truncation sets and neighborhoods, deterministic in the seed.
pub fn init_truncation(
    n_points: usize,
    n_clusters: usize,
    c_prime: usize,
    g: usize,
    rng_seed: u64,
) -> Result<(TruncationState, NeighborIndex)> {
    if n_points == 0 {
        return Err(Error::InvalidArgument("n_points must be >= 1".into()));
    }
    if !(1 <= c_prime && c_prime <= g && g <= n_clusters) {
        return Err(Error::InvalidArgument(format!(
            "truncation parameters must satisfy 1 <= C' <= G <= C, got C'={c_prime}, G={g}, C={n_clusters}"
        )));
    }
    let stream = RngStream::new(rng_seed);

    let mut set_rng = stream.fork(0).rng();
    let mut sets = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        sets.push(rand::seq::index::sample(&mut set_rng, n_clusters, c_prime).into_vec());
    }
    let dists = vec![vec![f64::INFINITY; c_prime]; n_points];

    let mut nbr_rng = stream.fork(1).rng();
    let mut members = Vec::with_capacity(n_clusters);
    for c in 0..n_clusters {
        let mut row = Vec::with_capacity(g);
        row.push(c);
        // Sample G-1 distinct others by drawing from 0..C-1 and skipping c.
        for idx in rand::seq::index::sample(&mut nbr_rng, n_clusters - 1, g - 1) {
            row.push(if idx >= c { idx + 1 } else { idx });
        }
        members.push(row);
    }

    Ok((
        TruncationState {
            c_prime,
            sets,
            dists,
        },
        NeighborIndex {
            g,
            members,
            source: NeighborSource::Random,
        },
    ))
}

/// Neighborhoods from exhaustive cluster-to-cluster distances.
///
/// Counts exactly `C^2` cluster-to-cluster evaluations (symmetry is not
/// exploited).
pub fn exhaustive_neighbors(
    params: &ModelParams,
    g: usize,
    counter: &DistanceCounter,
) -> NeighborIndex {
    let c = params.n_clusters();
    let g = g.min(c);
    let members: Vec<Vec<usize>> = (0..c)
        .into_par_iter()
        .map(|row| {
            let mut entries: Vec<(usize, f64)> = (0..c)
                .map(|other| (other, dist(params.mean(row), params.mean(other))))
                .collect();
            select_with_self(&mut entries, g, row)
        })
        .collect();
    counter.add(DistanceKind::ClusterCluster, (c * c) as u64);
    NeighborIndex {
        g,
        members,
        source: NeighborSource::Exhaustive,
    }
}

/// Selects the g smallest entries and guarantees `c` is among them. The
/// self-distance of zero already wins selection unless other clusters sit
/// at exactly the same mean with smaller indices; in that degenerate case
/// the farthest selected entry is replaced.
fn select_with_self(entries: &mut [(usize, f64)], g: usize, c: usize) -> Vec<usize> {
    let k = partition_k_smallest(entries, g);
    let mut selected: Vec<usize> = entries[..k].iter().map(|e| e.0).collect();
    if !selected.contains(&c) {
        let worst = entries[..k]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.1 .0.cmp(&b.1 .0)))
            .map(|(i, _)| i)
            .expect("selection is non-empty");
        selected[worst] = c;
    }
    selected
}

struct PointScratch {
    stamp: Vec<u64>,
    epoch: u64,
}

impl PointScratch {
    fn new(n_clusters: usize) -> Self {
        Self {
            stamp: vec![0; n_clusters],
            epoch: 0,
        }
    }

    fn begin(&mut self) {
        self.epoch += 1;
    }

    #[inline]
    fn insert(&mut self, c: usize) -> bool {
        if self.stamp[c] == self.epoch {
            false
        } else {
            self.stamp[c] = self.epoch;
            true
        }
    }

    #[inline]
    fn contains(&self, c: usize) -> bool {
        self.stamp[c] == self.epoch
    }
}

/// One partial E-step over the truncation sets.
///
/// For every point: build the search space (deduplicated union of the
/// neighborhoods of its truncation set, plus one uniformly drawn exploratory
/// cluster outside the union when `explore` is set), evaluate the distances
/// to every member, and keep the C' closest as the new truncation set.
/// Counts one data-to-cluster evaluation per search-space member.
pub fn update_truncation(
    data: &Dataset,
    params: &ModelParams,
    trunc: &TruncationState,
    nbrs: &NeighborIndex,
    explore: bool,
    rng: &RngStream,
    counter: &DistanceCounter,
) -> (TruncationState, SearchSpace) {
    let n_points = data.n_points();
    let n_clusters = params.n_clusters();
    debug_assert_eq!(trunc.n_points(), n_points);
    debug_assert_eq!(nbrs.n_clusters(), n_clusters);
    let c_prime = trunc.c_prime;

    struct PointOut {
        set: Vec<usize>,
        set_dists: Vec<f64>,
        space: Vec<usize>,
        space_dists: Vec<f64>,
    }

    let outputs: Vec<PointOut> = (0..n_points)
        .into_par_iter()
        .map_init(
            || PointScratch::new(n_clusters),
            |scratch, n| {
                scratch.begin();
                let mut space = Vec::with_capacity(c_prime * nbrs.g + 1);
                for &c in &trunc.sets[n] {
                    for &m in &nbrs.members[c] {
                        if scratch.insert(m) {
                            space.push(m);
                        }
                    }
                }
                debug_assert!(trunc.sets[n].iter().all(|&c| scratch.contains(c)));
                if explore && space.len() < n_clusters {
                    let mut point_rng = rng.fork(n as u64).rng();
                    loop {
                        let cand = point_rng.random_range(0..n_clusters);
                        if scratch.insert(cand) {
                            space.push(cand);
                            break;
                        }
                    }
                }

                let y = data.point(n);
                let mut entries: Vec<(usize, f64)> =
                    space.iter().map(|&c| (c, dist(y, params.mean(c)))).collect();
                let k = partition_k_smallest(&mut entries, c_prime);
                let set: Vec<usize> = entries[..k].iter().map(|e| e.0).collect();
                let set_dists: Vec<f64> = entries[..k].iter().map(|e| e.1).collect();
                let space: Vec<usize> = entries.iter().map(|e| e.0).collect();
                let space_dists: Vec<f64> = entries.iter().map(|e| e.1).collect();
                PointOut {
                    set,
                    set_dists,
                    space,
                    space_dists,
                }
            },
        )
        .collect();

    let mut sets = Vec::with_capacity(n_points);
    let mut set_dists = Vec::with_capacity(n_points);
    let mut spaces = Vec::with_capacity(n_points);
    let mut space_dists = Vec::with_capacity(n_points);
    let mut evals: u64 = 0;
    for out in outputs {
        evals += out.space.len() as u64;
        sets.push(out.set);
        set_dists.push(out.set_dists);
        spaces.push(out.space);
        space_dists.push(out.space_dists);
    }
    counter.add(DistanceKind::DataCluster, evals);

    (
        TruncationState {
            c_prime,
            sets,
            dists: set_dists,
        },
        SearchSpace {
            members: spaces,
            dists: space_dists,
        },
    )
}

/// Neighborhoods estimated from the distances of the current E-step, with
/// no new distance evaluations.
///
/// Each point is owned by the closest cluster of its search space; for
/// every owner c, the distances of its points to every cluster in their
/// search spaces are averaged into sparse `(c, c-tilde)` cells. Pairs that
/// were never co-observed stay infinitely far. Each neighborhood is the G
/// smallest estimates with c itself forced in; rows short of candidates
/// are padded first from the previous neighborhood, then with uniformly
/// drawn distinct clusters. Clusters that own no points keep their previous
/// neighborhood unchanged.
pub fn estimate_neighbors(
    search: &SearchSpace,
    prev: &NeighborIndex,
    n_clusters: usize,
    g: usize,
    rng: &RngStream,
) -> (NeighborIndex, AssignmentIndex) {
    let n_points = search.n_points();
    let g = g.min(n_clusters);

    let owner: Vec<usize> = (0..n_points)
        .into_par_iter()
        .map(|n| {
            let members = &search.members[n];
            let dists = &search.dists[n];
            debug_assert!(!members.is_empty());
            let mut best = (members[0], dists[0]);
            for i in 1..members.len() {
                if dists[i] < best.1 || (dists[i] == best.1 && members[i] < best.0) {
                    best = (members[i], dists[i]);
                }
            }
            best.0
        })
        .collect();

    let mut members = vec![Vec::new(); n_clusters];
    for (n, &c) in owner.iter().enumerate() {
        members[c].push(n);
    }

    struct Row {
        cells: Vec<(usize, PairEstimate)>,
        neighborhood: Vec<usize>,
    }

    let rows: Vec<Row> = (0..n_clusters)
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; n_clusters], vec![0u64; n_clusters]),
            |(sums, counts), c| {
                if members[c].is_empty() {
                    // No observations at all: retain the previous
                    // neighborhood wholesale.
                    return Row {
                        cells: Vec::new(),
                        neighborhood: prev.members[c].clone(),
                    };
                }
                let mut touched: Vec<usize> = Vec::new();
                for &n in &members[c] {
                    for (i, &other) in search.members[n].iter().enumerate() {
                        if counts[other] == 0 {
                            touched.push(other);
                        }
                        sums[other] += search.dists[n][i];
                        counts[other] += 1;
                    }
                }
                // Normalize each observed cell exactly once; the
                // self-distance is pinned to zero afterwards.
                let mut cells: Vec<(usize, PairEstimate)> = touched
                    .iter()
                    .map(|&other| {
                        let est = PairEstimate {
                            distance: if other == c {
                                0.0
                            } else {
                                sums[other] / counts[other] as f64
                            },
                            observations: counts[other],
                        };
                        (other, est)
                    })
                    .collect();
                cells.sort_unstable_by_key(|&(other, _)| other);
                for &other in &touched {
                    sums[other] = 0.0;
                    counts[other] = 0;
                }

                let mut entries: Vec<(usize, f64)> = cells
                    .iter()
                    .map(|&(other, est)| (other, est.distance))
                    .collect();
                let mut selected = select_with_self(&mut entries, g, c);
                pad_neighborhood(&mut selected, &prev.members[c], n_clusters, g, rng, c);
                Row {
                    cells,
                    neighborhood: selected,
                }
            },
        )
        .collect();

    let mut estimates = BTreeMap::new();
    let mut neighborhoods = Vec::with_capacity(n_clusters);
    for (c, row) in rows.into_iter().enumerate() {
        for (other, est) in row.cells {
            estimates.insert((c, other), est);
        }
        neighborhoods.push(row.neighborhood);
    }

    (
        NeighborIndex {
            g,
            members: neighborhoods,
            source: NeighborSource::Estimated,
        },
        AssignmentIndex {
            owner,
            members,
            estimates,
        },
    )
}

/// Fills a short neighborhood up to `g` members: previous members first,
/// then uniformly drawn distinct clusters.
fn pad_neighborhood(
    selected: &mut Vec<usize>,
    previous: &[usize],
    n_clusters: usize,
    g: usize,
    rng: &RngStream,
    c: usize,
) {
    if selected.len() >= g {
        return;
    }
    for &m in previous {
        if selected.len() >= g {
            return;
        }
        if !selected.contains(&m) {
            selected.push(m);
        }
    }
    let mut pad_rng = rng.fork(c as u64).rng();
    while selected.len() < g {
        let cand = pad_rng.random_range(0..n_clusters);
        if !selected.contains(&cand) {
            selected.push(cand);
        }
    }
}

/// Sparse softmax responsibilities over each point's truncation set, from
/// the distances cached by the last partial E-step.
pub fn truncated_responsibilities(trunc: &TruncationState, sigma_sq: f64) -> Responsibilities {
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma_sq);
    let weights: Vec<Vec<(usize, f64)>> = (0..trunc.n_points())
        .into_par_iter()
        .map(|n| {
            let mut entries: Vec<(usize, f64)> = trunc.sets[n]
                .iter()
                .zip(&trunc.dists[n])
                .map(|(&c, &d)| (c, -d * d * inv_two_sigma_sq))
                .collect();
            normalize_softmax(&mut entries);
            entries
        })
        .collect();
    Responsibilities::from_weights(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{full_estep, truncated_free_energy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn random_instance(seed: u64, n: usize, c: usize, d: usize) -> (Dataset, ModelParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<f64> = (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let means: Vec<f64> = (0..c * d).map(|_| rng.random_range(-5.0..5.0)).collect();
        (
            Dataset::new(points, d).unwrap(),
            ModelParams::new(means, d, 0.8).unwrap(),
        )
    }

    #[test]
    fn init_saturated_parameters_cover_everything() {
        let (trunc, nbrs) = init_truncation(10, 4, 4, 4, 1).unwrap();
        for n in 0..10 {
            let s: BTreeSet<usize> = trunc.set(n).iter().copied().collect();
            assert_eq!(s, BTreeSet::from([0, 1, 2, 3]));
        }
        for c in 0..4 {
            let s: BTreeSet<usize> = nbrs.members(c).iter().copied().collect();
            assert_eq!(s, BTreeSet::from([0, 1, 2, 3]));
        }
    }

    #[test]
    fn init_is_deterministic() {
        let (a_t, a_n) = init_truncation(50, 20, 3, 5, 99).unwrap();
        let (b_t, b_n) = init_truncation(50, 20, 3, 5, 99).unwrap();
        assert_eq!(a_t.sets, b_t.sets);
        assert_eq!(a_n.members, b_n.members);
    }

    #[test]
    fn init_structural_check_exhaustive() {
        let (trunc, nbrs) = init_truncation(200, 100, 3, 5, 7).unwrap();
        for n in 0..200 {
            let set = trunc.set(n);
            assert_eq!(set.len(), 3);
            let distinct: BTreeSet<usize> = set.iter().copied().collect();
            assert_eq!(distinct.len(), 3);
            assert!(set.iter().all(|&c| c < 100));
        }
        for c in 0..100 {
            let row = nbrs.members(c);
            assert_eq!(row.len(), 5);
            let distinct: BTreeSet<usize> = row.iter().copied().collect();
            assert_eq!(distinct.len(), 5);
            assert!(row.contains(&c));
            assert!(row.iter().all(|&m| m < 100));
        }
    }

    #[test]
    fn init_rejects_bad_parameter_order() {
        assert!(init_truncation(10, 5, 3, 2, 0).is_err()); // C' > G
        assert!(init_truncation(10, 5, 1, 6, 0).is_err()); // G > C
        assert!(init_truncation(10, 5, 0, 2, 0).is_err()); // C' < 1
    }

    #[test]
    fn exhaustive_g1_is_self_only() {
        let (_, params) = random_instance(5, 1, 8, 3);
        let counter = DistanceCounter::new();
        let nbrs = exhaustive_neighbors(&params, 1, &counter);
        for c in 0..8 {
            assert_eq!(nbrs.members(c), &[c]);
        }
        assert_eq!(counter.cluster_to_cluster(), 64);
    }

    #[test]
    fn exhaustive_on_grid_selects_axis_neighbors() {
        // 5x5 grid of unit spacing; an interior cluster's G=5 neighborhood
        // is itself plus its four axis-aligned neighbors (diagonals are
        // sqrt(2) away).
        let side = 5usize;
        let mut means = Vec::new();
        for i in 0..side {
            for j in 0..side {
                means.push(i as f64);
                means.push(j as f64);
            }
        }
        let params = ModelParams::new(means, 2, 1.0).unwrap();
        let counter = DistanceCounter::new();
        let nbrs = exhaustive_neighbors(&params, 5, &counter);
        let idx = |i: usize, j: usize| i * side + j;
        let interior = idx(2, 2);
        let got: BTreeSet<usize> = nbrs.members(interior).iter().copied().collect();
        let want = BTreeSet::from([idx(2, 2), idx(1, 2), idx(3, 2), idx(2, 1), idx(2, 3)]);
        assert_eq!(got, want);
    }

    #[test]
    fn exhaustive_matches_full_sort_oracle() {
        let (_, params) = random_instance(17, 1, 12, 4);
        let counter = DistanceCounter::new();
        for g in [1, 3, 7, 12] {
            let nbrs = exhaustive_neighbors(&params, g, &counter);
            for c in 0..12 {
                let mut all: Vec<(usize, f64)> = (0..12)
                    .map(|o| (o, dist(params.mean(c), params.mean(o))))
                    .collect();
                all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                let want: BTreeSet<usize> = all.iter().take(g).map(|e| e.0).collect();
                let got: BTreeSet<usize> = nbrs.members(c).iter().copied().collect();
                assert_eq!(got, want, "g={g}, c={c}");
            }
        }
    }

    #[test]
    fn update_with_full_coverage_finds_true_nearest() {
        let (data, params) = random_instance(21, 40, 6, 2);
        // Saturated: G = C means every search space covers all clusters.
        let (trunc, nbrs) = init_truncation(40, 6, 2, 6, 3).unwrap();
        let counter = DistanceCounter::new();
        let stream = RngStream::new(77);
        let (new_trunc, space) =
            update_truncation(&data, &params, &trunc, &nbrs, false, &stream, &counter);
        for n in 0..40 {
            assert_eq!(space.members(n).len(), 6);
            let mut all: Vec<(usize, f64)> = (0..6)
                .map(|c| (c, dist(data.point(n), params.mean(c))))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let want: BTreeSet<usize> = all.iter().take(2).map(|e| e.0).collect();
            let got: BTreeSet<usize> = new_trunc.set(n).iter().copied().collect();
            assert_eq!(got, want);
        }
        assert_eq!(counter.data_to_cluster(), 40 * 6);
    }

    #[test]
    fn update_is_a_fixed_point_once_sets_are_locally_optimal() {
        let (data, params) = random_instance(31, 25, 8, 2);
        let (mut trunc, nbrs) = init_truncation(25, 8, 2, 3, 5).unwrap();
        let counter = DistanceCounter::new();
        let stream = RngStream::new(9);
        let as_sets = |t: &TruncationState| -> Vec<BTreeSet<usize>> {
            (0..25).map(|n| t.set(n).iter().copied().collect()).collect()
        };
        // With fixed parameters and neighborhoods the sets reach a
        // stationary point after a few sweeps; one more update must then
        // leave every set unchanged.
        let mut stabilized = false;
        for _ in 0..20 {
            let before = as_sets(&trunc);
            let (next, _) =
                update_truncation(&data, &params, &trunc, &nbrs, false, &stream, &counter);
            let after = as_sets(&next);
            trunc = next;
            if before == after {
                stabilized = true;
                break;
            }
        }
        assert!(stabilized, "truncation sets never stabilized");
        let (again, _) =
            update_truncation(&data, &params, &trunc, &nbrs, false, &stream, &counter);
        assert_eq!(as_sets(&trunc), as_sets(&again));
    }

    #[test]
    fn update_never_decreases_free_energy() {
        for seed in 0..50 {
            let (data, params) = random_instance(seed, 30, 10, 2);
            let (trunc, nbrs) = init_truncation(30, 10, 3, 4, seed).unwrap();
            let counter = DistanceCounter::new();
            let stream = RngStream::new(seed ^ 0xfeed);
            let f0 = truncated_free_energy(&data, trunc.sets(), &params).unwrap();
            let (t1, _) =
                update_truncation(&data, &params, &trunc, &nbrs, true, &stream, &counter);
            let f1 = truncated_free_energy(&data, t1.sets(), &params).unwrap();
            assert!(
                f1 >= f0 - 1e-10 * f0.abs(),
                "seed {seed}: F dropped {f0} -> {f1}"
            );
        }
    }

    #[test]
    fn update_selected_distance_dominance() {
        for seed in 0..20 {
            let (data, params) = random_instance(seed | 0x40, 30, 9, 2);
            let (trunc, nbrs) = init_truncation(30, 9, 2, 3, seed).unwrap();
            let counter = DistanceCounter::new();
            let stream = RngStream::new(1);
            let (t1, _) =
                update_truncation(&data, &params, &trunc, &nbrs, true, &stream, &counter);
            for n in 0..30 {
                let old_max = trunc
                    .set(n)
                    .iter()
                    .map(|&c| dist(data.point(n), params.mean(c)))
                    .fold(f64::NEG_INFINITY, f64::max);
                let new_max = t1.distances(n).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(new_max <= old_max + 1e-12);
            }
        }
    }

    #[test]
    fn search_space_contains_old_set_and_respects_budget() {
        let (data, params) = random_instance(55, 60, 12, 2);
        let (trunc, nbrs) = init_truncation(60, 12, 2, 4, 8).unwrap();
        let counter = DistanceCounter::new();
        let stream = RngStream::new(2);
        let (_, space) =
            update_truncation(&data, &params, &trunc, &nbrs, true, &stream, &counter);
        for n in 0..60 {
            let members: BTreeSet<usize> = space.members(n).iter().copied().collect();
            assert_eq!(members.len(), space.members(n).len(), "duplicates in space");
            for &c in trunc.set(n) {
                assert!(members.contains(&c), "old set must lie inside the space");
            }
            assert!(space.members(n).len() <= 2 * 4 + 1);
        }
        assert!(counter.data_to_cluster() <= (60 * (2 * 4 + 1)) as u64);
    }

    #[test]
    fn estimate_degenerate_points_at_means_are_exact() {
        // Every point sits exactly at its cluster mean, and every search
        // space covers all clusters: the estimate equals the true distance.
        let c = 4usize;
        let means = vec![0.0, 0.0, 3.0, 0.0, 0.0, 4.0, 3.0, 4.0];
        let params = ModelParams::new(means.clone(), 2, 1.0).unwrap();
        let mut pts = Vec::new();
        for rep in 0..3 {
            let _ = rep;
            pts.extend_from_slice(&means);
        }
        let data = Dataset::new(pts, 2).unwrap();
        let (trunc, nbrs) = init_truncation(data.n_points(), c, 2, c, 0).unwrap();
        let counter = DistanceCounter::new();
        let stream = RngStream::new(0);
        let (_, space) =
            update_truncation(&data, &params, &trunc, &nbrs, false, &stream, &counter);
        let (_, assign) = estimate_neighbors(&space, &nbrs, c, 2, &stream);
        for a in 0..c {
            for b in 0..c {
                let want = dist(params.mean(a), params.mean(b));
                let got = assign.estimate(a, b).unwrap().distance;
                assert!(
                    (got - want).abs() < 1e-12,
                    "estimate {a}->{b}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn estimate_matches_three_loop_oracle() {
        let (data, params) = random_instance(123, 40, 8, 2);
        let (trunc, nbrs) = init_truncation(40, 8, 2, 3, 4).unwrap();
        let counter = DistanceCounter::new();
        let stream = RngStream::new(5);
        let (_, space) =
            update_truncation(&data, &params, &trunc, &nbrs, false, &stream, &counter);
        let (_, assign) = estimate_neighbors(&space, &nbrs, 8, 3, &stream);

        // Oracle: argmin owners, then the dense three-nested-loop
        // accumulate/normalize passes.
        let mut owners = vec![0usize; 40];
        for n in 0..40 {
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, &c) in space.members(n).iter().enumerate() {
                let d = space.distances(n)[i];
                if d < best.1 || (d == best.1 && c < best.0) {
                    best = (c, d);
                }
            }
            owners[n] = best.0;
        }
        let mut sums = vec![vec![0.0f64; 8]; 8];
        let mut counts = vec![vec![0u64; 8]; 8];
        for c in 0..8 {
            for other in 0..8 {
                for n in 0..40 {
                    if owners[n] != c {
                        continue;
                    }
                    if let Some(i) = space.members(n).iter().position(|&m| m == other) {
                        sums[c][other] += space.distances(n)[i];
                        counts[c][other] += 1;
                    }
                }
            }
        }
        for c in 0..8 {
            assert_eq!(assign.members(c).len() as u64, {
                owners.iter().filter(|&&o| o == c).count() as u64
            });
            for other in 0..8 {
                match assign.estimate(c, other) {
                    Some(est) => {
                        assert_eq!(est.observations, counts[c][other]);
                        let want = if c == other {
                            0.0
                        } else {
                            sums[c][other] / counts[c][other] as f64
                        };
                        assert!(
                            (est.distance - want).abs() <= 1e-12 * want.max(1.0),
                            "pair ({c},{other}): {} vs {want}",
                            est.distance
                        );
                    }
                    None => assert_eq!(counts[c][other], 0, "pair ({c},{other}) observed"),
                }
            }
        }
    }

    #[test]
    fn estimate_partition_and_self_membership() {
        let (data, params) = random_instance(200, 80, 10, 2);
        let (trunc, nbrs) = init_truncation(80, 10, 2, 4, 6).unwrap();
        let counter = DistanceCounter::new();
        let stream = RngStream::new(3);
        let (_, space) =
            update_truncation(&data, &params, &trunc, &nbrs, true, &stream, &counter);
        let (new_nbrs, assign) = estimate_neighbors(&space, &nbrs, 10, 4, &stream);
        // Owners partition the points.
        let mut seen = vec![false; 80];
        for c in 0..10 {
            for &n in assign.members(c) {
                assert!(!seen[n], "point {n} in two partitions");
                seen[n] = true;
                assert_eq!(assign.owner(n), c);
            }
        }
        assert!(seen.iter().all(|&s| s));
        // Every neighborhood has exactly min(G, C) distinct members and
        // contains its own cluster.
        for c in 0..10 {
            let row = new_nbrs.members(c);
            assert_eq!(row.len(), 4);
            let distinct: BTreeSet<usize> = row.iter().copied().collect();
            assert_eq!(distinct.len(), 4);
            assert!(row.contains(&c));
        }
        // Observed pairs all carry at least one observation.
        for est in assign.estimates().values() {
            assert!(est.observations >= 1);
        }
    }

    #[test]
    fn never_co_observed_pairs_are_never_selected() {
        // Two far-apart lines of clusters; points tightly around each
        // cluster, neighborhoods within each line. Pairs across lines are
        // never co-observed, so estimated neighborhoods stay within a line.
        let mut means = Vec::new();
        for i in 0..4 {
            means.push(i as f64);
            means.push(0.0);
        }
        for i in 0..4 {
            means.push(i as f64);
            means.push(1000.0);
        }
        let params = ModelParams::new(means, 2, 1.0).unwrap();
        let mut pts = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for c in 0..8 {
            for _ in 0..10 {
                pts.push(params.mean(c)[0] + rng.random_range(-0.01..0.01));
                pts.push(params.mean(c)[1] + rng.random_range(-0.01..0.01));
            }
        }
        let data = Dataset::new(pts, 2).unwrap();
        // Line-local initial neighborhoods.
        let line = |c: usize| -> Vec<usize> {
            let base = if c < 4 { 0 } else { 4 };
            (base..base + 4).collect()
        };
        let members: Vec<Vec<usize>> = (0..8)
            .map(|c| {
                let mut row = vec![c];
                row.extend(line(c).into_iter().filter(|&m| m != c).take(2));
                row
            })
            .collect();
        let nbrs = NeighborIndex {
            g: 3,
            members,
            source: NeighborSource::Random,
        };
        let (trunc, _) = init_truncation(data.n_points(), 8, 1, 3, 1).unwrap();
        // Force truncation sets into the matching line so spaces stay local.
        let mut sets = Vec::new();
        for c in 0..8 {
            for _ in 0..10 {
                sets.push(vec![c]);
            }
        }
        let trunc = TruncationState {
            c_prime: trunc.c_prime,
            sets,
            dists: vec![vec![f64::INFINITY]; data.n_points()],
        };
        let counter = DistanceCounter::new();
        let stream = RngStream::new(0);
        let (_, space) =
            update_truncation(&data, &params, &trunc, &nbrs, false, &stream, &counter);
        let (new_nbrs, assign) = estimate_neighbors(&space, &nbrs, 8, 3, &stream);
        for c in 0..8 {
            let in_line: BTreeSet<usize> = line(c).into_iter().collect();
            for other in 0..8 {
                if !in_line.contains(&other) {
                    assert!(assign.estimate(c, other).is_none());
                }
            }
            for &m in new_nbrs.members(c) {
                assert!(in_line.contains(&m), "cross-line neighbor selected");
            }
        }
    }

    #[test]
    fn empty_owner_retains_previous_neighborhood() {
        // Single point: only its own cluster gains observations; all other
        // clusters must keep their previous rows.
        let data = Dataset::new(vec![0.0, 0.0], 2).unwrap();
        let params =
            ModelParams::new(vec![0.0, 0.0, 5.0, 0.0, 0.0, 5.0, 5.0, 5.0], 2, 1.0).unwrap();
        let (_, nbrs) = init_truncation(1, 4, 1, 2, 11).unwrap();
        let trunc = TruncationState {
            c_prime: 1,
            sets: vec![vec![0]],
            dists: vec![vec![f64::INFINITY]],
        };
        let counter = DistanceCounter::new();
        let stream = RngStream::new(4);
        let (_, space) =
            update_truncation(&data, &params, &trunc, &nbrs, false, &stream, &counter);
        let (new_nbrs, assign) = estimate_neighbors(&space, &nbrs, 4, 2, &stream);
        assert_eq!(assign.owner(0), 0);
        for c in 1..4 {
            if assign.members(c).is_empty() {
                assert_eq!(new_nbrs.members(c), nbrs.members(c));
            }
        }
    }

    #[test]
    fn responsibilities_single_member_is_hard_assignment() {
        let trunc = TruncationState {
            c_prime: 1,
            sets: vec![vec![3], vec![1]],
            dists: vec![vec![2.5], vec![0.1]],
        };
        let resp = truncated_responsibilities(&trunc, 0.7);
        assert_eq!(resp.point(0), &[(3, 1.0)]);
        assert_eq!(resp.point(1), &[(1, 1.0)]);
    }

    #[test]
    fn responsibilities_equal_distances_split_evenly() {
        let trunc = TruncationState {
            c_prime: 2,
            sets: vec![vec![0, 1]],
            dists: vec![vec![1.5, 1.5]],
        };
        let resp = truncated_responsibilities(&trunc, 0.3);
        assert_eq!(resp.point(0)[0].1, 0.5);
        assert_eq!(resp.point(0)[1].1, 0.5);
    }

    #[test]
    fn saturated_responsibilities_match_full_estep() {
        let (data, params) = random_instance(300, 20, 5, 3);
        let (trunc, nbrs) = init_truncation(20, 5, 5, 5, 0).unwrap();
        let counter = DistanceCounter::new();
        let stream = RngStream::new(0);
        let (t1, _) = update_truncation(&data, &params, &trunc, &nbrs, false, &stream, &counter);
        let sparse = truncated_responsibilities(&t1, params.sigma_sq());
        let full = full_estep(&data, &params, &counter);
        for n in 0..20 {
            let mut dense = vec![0.0; 5];
            for &(c, w) in sparse.point(n) {
                dense[c] = w;
            }
            for &(c, w) in full.point(n) {
                assert!(
                    (dense[c] - w).abs() <= 1e-12,
                    "point {n} cluster {c}: {} vs {w}",
                    dense[c]
                );
            }
        }
    }
}
