//! Per-camera database of view features with an inverted index, and candidate-view
//! selection with temporal grouping.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::RwLock;
use thiserror::Error;

use crate::bow::{score, BowVector};
use crate::features::FrameFeatures;
use crate::vocab::DirectIndex;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DatabaseError {
    #[error("frame {frame} is not after the last stored frame {last}")]
    OutOfOrder { frame: u32, last: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredView {
    pub frame_index: u32,
    pub bow: BowVector,
    pub features: FrameFeatures,
    pub direct_index: DirectIndex,
}

/// Append-only store of the views a camera has processed.
#[derive(Debug, Clone, Default)]
pub struct ViewDatabase {
    views: Vec<StoredView>,
    inverted: BTreeMap<u32, Vec<u32>>,
}

/// Database shared between the sequence-processing writer and query-answering readers.
pub type SharedDatabase = Arc<RwLock<ViewDatabase>>;

/// Parameters of candidate-view selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryParams {
    /// Minimum view score for a stored frame to be considered.
    pub min_score: f64,
    /// Candidates kept per unit of acquisition rate (the cap is this times `rate`).
    pub candidates_per_rate: usize,
    /// Acquisition rate in frames per second.
    pub rate: u32,
    /// Temporal grouping window, in seconds (frames = this times `rate`).
    pub group_window: f64,
    /// Groups with fewer members are discarded.
    pub min_group_size: usize,
}

impl Default for QueryParams {
    fn default() -> Self {
        QueryParams {
            min_score: 0.03,
            candidates_per_rate: 50,
            rate: 30,
            group_window: 3.0,
            min_group_size: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateMatch {
    pub matched_frame: u32,
    pub score: f64,
    /// First and last frame of the winning group.
    pub group_range: (u32, u32),
    pub group_score: f64,
}

impl ViewDatabase {
    pub fn new() -> Self {
        ViewDatabase::default()
    }

    pub fn into_shared(self) -> SharedDatabase {
        Arc::new(RwLock::new(self))
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn views(&self) -> &[StoredView] {
        &self.views
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.views.last().map(|v| v.frame_index)
    }

    pub fn get(&self, frame_index: u32) -> Option<&StoredView> {
        self.views
            .binary_search_by_key(&frame_index, |v| v.frame_index)
            .ok()
            .map(|i| &self.views[i])
    }

    pub fn contains(&self, frame_index: u32) -> bool {
        self.get(frame_index).is_some()
    }

    /// Frames whose view feature contains `word`, ascending.
    pub fn frames_with_word(&self, word: u32) -> &[u32] {
        self.inverted.get(&word).map_or(&[], Vec::as_slice)
    }

    pub fn inverted_index(&self) -> &BTreeMap<u32, Vec<u32>> {
        &self.inverted
    }

    /// Recomputes the inverted index from the stored view features.
    pub fn rebuild_inverted_index(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut inverted: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for v in &self.views {
            for w in v.bow.words() {
                inverted.entry(w).or_default().push(v.frame_index);
            }
        }
        inverted
    }

    pub fn add(
        &mut self,
        frame_index: u32,
        bow: BowVector,
        features: FrameFeatures,
        direct_index: DirectIndex,
    ) -> Result<(), DatabaseError> {
        if let Some(last) = self.last_frame() {
            if frame_index <= last {
                return Err(DatabaseError::OutOfOrder {
                    frame: frame_index,
                    last,
                });
            }
        }
        for w in bow.words() {
            self.inverted.entry(w).or_default().push(frame_index);
        }
        self.views.push(StoredView {
            frame_index,
            bow,
            features,
            direct_index,
        });
        Ok(())
    }

    /// Scores of every stored frame sharing at least one word with `query`, ascending by frame.
    pub fn scored_candidates(&self, query: &BowVector) -> Vec<(u32, f64)> {
        let frames: BTreeSet<u32> = query
            .words()
            .flat_map(|w| self.frames_with_word(w).iter().copied())
            .collect();
        frames
            .into_iter()
            .map(|f| (f, score(query, &self.get(f).expect("indexed frame is stored").bow)))
            .collect()
    }

    /// Best view of the best temporal group among frames scoring at least `min_score`.
    pub fn query(&self, query: &BowVector, params: &QueryParams) -> Option<CandidateMatch> {
        select_candidate(self.scored_candidates(query), params)
    }
}

/// Caps, groups and ranks scored frames. Input order does not matter; frames scoring 0
/// share no word with the query and are never candidates, whatever `min_score` is.
pub fn select_candidate(scored: Vec<(u32, f64)>, params: &QueryParams) -> Option<CandidateMatch> {
    let mut kept: Vec<(u32, f64)> = scored
        .into_iter()
        .filter(|(_, s)| *s > 0.0 && *s >= params.min_score)
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    kept.truncate(params.candidates_per_rate.saturating_mul(params.rate as usize));
    kept.sort_by_key(|(f, _)| *f);

    let window = params.group_window * params.rate as f64;
    let mut groups: Vec<Vec<(u32, f64)>> = Vec::new();
    for entry in kept {
        match groups.last_mut() {
            Some(g) if ((entry.0 - g[0].0) as f64) <= window => g.push(entry),
            _ => groups.push(vec![entry]),
        }
    }

    let mut best: Option<(f64, &Vec<(u32, f64)>)> = None;
    for g in groups.iter().filter(|g| g.len() >= params.min_group_size.max(1)) {
        let total: f64 = g.iter().map(|(_, s)| s).sum();
        if best.is_none_or(|(b, _)| total > b) {
            best = Some((total, g));
        }
    }
    let (group_score, group) = best?;
    let (matched_frame, score) = group
        .iter()
        .copied()
        .reduce(|a, b| if b.1 > a.1 { b } else { a })
        .expect("groups are non-empty");
    Some(CandidateMatch {
        matched_frame,
        score,
        group_range: (group[0].0, group[group.len() - 1].0),
        group_score,
    })
}
