//! Local-feature matching under a Hamming threshold and a nearest/second-nearest ratio test.

use std::collections::BTreeMap;

use crate::features::{hamming_distance, FrameFeatures};
use crate::vocab::{DirectIndex, Vocabulary};

/// Thresholds for accepting a nearest-neighbour match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// A match is kept only if its Hamming distance is strictly below this.
    pub max_distance: u32,
    /// A match is kept only if nearest / second-nearest is strictly below this.
    pub ratio: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            max_distance: 50,
            ratio: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MatchPair {
    pub query_index: u32,
    pub candidate_index: u32,
    pub distance: u32,
}

/// One-to-one set of accepted matches, ordered by query index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchSet {
    pub pairs: Vec<MatchPair>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MatchPair> {
        self.pairs.iter()
    }
}

/// Nearest and second-nearest candidates for one query descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct TwoNearest {
    pub best: u32,
    pub best_distance: u32,
    pub second_distance: u32,
}

impl TwoNearest {
    pub(crate) fn passes(&self, params: &MatchParams) -> bool {
        // nearest == second gives ratio 1 and is rejected for any ratio < 1
        self.best_distance < params.max_distance
            && (self.best_distance as f64) < params.ratio * self.second_distance as f64
    }
}

/// Running two-nearest search state. Ties on distance keep the lower candidate index.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TwoNearestAcc {
    best: Option<(u32, u32)>,
    second: Option<u32>,
}

impl TwoNearestAcc {
    pub(crate) fn new() -> Self {
        TwoNearestAcc {
            best: None,
            second: None,
        }
    }

    pub(crate) fn offer(&mut self, index: u32, distance: u32) {
        match self.best {
            None => self.best = Some((index, distance)),
            Some((bi, bd)) => {
                if distance < bd || (distance == bd && index < bi) {
                    self.second = Some(bd);
                    self.best = Some((index, distance));
                } else if self.second.is_none_or(|s| distance < s) {
                    self.second = Some(distance);
                }
            }
        }
    }

    /// Current second-nearest distance, or `u32::MAX` when fewer than two were offered.
    pub(crate) fn second_bound(&self) -> u32 {
        self.second.unwrap_or(u32::MAX)
    }

    pub(crate) fn finish(self) -> Option<TwoNearest> {
        match (self.best, self.second) {
            (Some((best, best_distance)), Some(second_distance)) => Some(TwoNearest {
                best,
                best_distance,
                second_distance,
            }),
            _ => None,
        }
    }
}

/// Keeps, for each candidate feature, only the lowest-distance proposal (ties: lowest query index).
pub(crate) fn resolve_collisions(proposals: impl IntoIterator<Item = MatchPair>) -> MatchSet {
    let mut by_candidate: BTreeMap<u32, MatchPair> = BTreeMap::new();
    for p in proposals {
        by_candidate
            .entry(p.candidate_index)
            .and_modify(|kept| {
                if (p.distance, p.query_index) < (kept.distance, kept.query_index) {
                    *kept = p;
                }
            })
            .or_insert(p);
    }
    let mut pairs: Vec<MatchPair> = by_candidate.into_values().collect();
    pairs.sort_by_key(|p| p.query_index);
    MatchSet { pairs }
}

/// Exhaustive nearest-neighbour matching of `query` against `candidate`.
///
/// Every query descriptor is compared with every candidate descriptor. Pairs must pass both
/// the distance threshold and the ratio test; the result is one-to-one.
pub fn match_local_features(
    query: &FrameFeatures,
    candidate: &FrameFeatures,
    params: &MatchParams,
) -> MatchSet {
    if candidate.len() < 2 {
        return MatchSet::default();
    }
    let proposals = query
        .descriptors()
        .enumerate()
        .filter_map(|(qi, qd)| {
            let mut acc = TwoNearestAcc::new();
            for (ci, cd) in candidate.descriptors().enumerate() {
                acc.offer(ci as u32, hamming_distance(qd, cd));
            }
            let nn = acc.finish()?;
            nn.passes(params).then_some(MatchPair {
                query_index: qi as u32,
                candidate_index: nn.best,
                distance: nn.best_distance,
            })
        })
        .collect::<Vec<_>>();
    resolve_collisions(proposals)
}

/// Vocabulary data a matcher may use to restrict its search.
#[derive(Clone, Copy)]
pub struct IndexContext<'a> {
    pub vocabulary: &'a Vocabulary,
    pub candidate_index: &'a DirectIndex,
}

/// A strategy for matching the local features of a query frame against a candidate frame.
pub trait LocalMatcher: Send + Sync {
    fn name(&self) -> &'static str;

    fn match_features(
        &self,
        query: &FrameFeatures,
        candidate: &FrameFeatures,
        index: Option<IndexContext<'_>>,
        params: &MatchParams,
    ) -> MatchSet;
}

/// Brute-force matcher; the reference every accelerated matcher must agree with.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExhaustiveMatcher;

impl LocalMatcher for ExhaustiveMatcher {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn match_features(
        &self,
        query: &FrameFeatures,
        candidate: &FrameFeatures,
        _index: Option<IndexContext<'_>>,
        params: &MatchParams,
    ) -> MatchSet {
        match_local_features(query, candidate, params)
    }
}

/// Matcher that walks the candidate's direct index.
///
/// Feature groups are visited in order of a triangle-inequality lower bound
/// (`H(q, center) - radius`) and skipped once the bound reaches the current
/// second-nearest distance, so the result is identical to [`ExhaustiveMatcher`].
/// Without an index it falls back to the exhaustive search.
#[derive(Debug, Default, Clone, Copy)]
pub struct DirectIndexMatcher;

impl LocalMatcher for DirectIndexMatcher {
    fn name(&self) -> &'static str {
        "direct-index"
    }

    fn match_features(
        &self,
        query: &FrameFeatures,
        candidate: &FrameFeatures,
        index: Option<IndexContext<'_>>,
        params: &MatchParams,
    ) -> MatchSet {
        let Some(ctx) = index else {
            return match_local_features(query, candidate, params);
        };
        if candidate.len() < 2 {
            return MatchSet::default();
        }
        let covered: usize = ctx.candidate_index.values().map(Vec::len).sum();
        if covered != candidate.len() {
            log::warn!("direct index does not cover the candidate frame; matching exhaustively");
            return match_local_features(query, candidate, params);
        }
        let groups: Vec<(&crate::features::Descriptor, u32, &[u32])> = ctx
            .candidate_index
            .iter()
            .map(|(&node, members)| {
                let center = &ctx.vocabulary.node(node).center;
                let radius = members
                    .iter()
                    .map(|&m| hamming_distance(center, &candidate.features[m as usize].descriptor))
                    .max()
                    .unwrap_or(0);
                (center, radius, members.as_slice())
            })
            .collect();

        let mut order: Vec<(u32, usize)> = Vec::with_capacity(groups.len());
        let proposals = query
            .descriptors()
            .enumerate()
            .filter_map(|(qi, qd)| {
                order.clear();
                order.extend(
                    groups
                        .iter()
                        .enumerate()
                        .map(|(g, (c, r, _))| (hamming_distance(qd, c).saturating_sub(*r), g)),
                );
                order.sort_unstable();
                let mut acc = TwoNearestAcc::new();
                for &(bound, g) in &order {
                    if bound >= acc.second_bound() {
                        break;
                    }
                    for &ci in groups[g].2 {
                        let cd = &candidate.features[ci as usize].descriptor;
                        acc.offer(ci, hamming_distance(qd, cd));
                    }
                }
                let nn = acc.finish()?;
                nn.passes(params).then_some(MatchPair {
                    query_index: qi as u32,
                    candidate_index: nn.best,
                    distance: nn.best_distance,
                })
            })
            .collect::<Vec<_>>();
        resolve_collisions(proposals)
    }
}
