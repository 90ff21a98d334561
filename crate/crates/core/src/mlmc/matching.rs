//! Pairing coarse and fine local maximizers across levels so telescoped
//! increments track a single mode.

use nalgebra::DVector;

use super::MlmcError;

#[derive(Debug, Clone)]
pub struct Candidate {
    pub x: DVector<f64>,
    pub value: f64,
}

/// Local maximizers found by multi-start at one level.
#[derive(Debug, Clone)]
pub struct LevelCandidates {
    pub level: usize,
    pub fine: Vec<Candidate>,
    /// Empty at level 0, where the coarse estimator is the zero convention.
    pub coarse: Vec<Candidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Matching {
    /// All levels align with the best maximizer from level 0.
    PointMatchLevel0,
    /// Prune a tree of local maximizers from level L backward; one estimator
    /// per surviving branch.
    Backward,
}

#[derive(Debug, Clone)]
pub struct MatchedLevel {
    pub level: usize,
    pub fine: Candidate,
    /// `None` at level 0.
    pub coarse: Option<Candidate>,
}

#[derive(Debug, Clone)]
pub struct MatchedChain {
    pub levels: Vec<MatchedLevel>,
    /// Fine value at the finest level, used to rank branches.
    pub head_value: f64,
}

fn nearest<'c>(cands: &'c [Candidate], to: &DVector<f64>) -> &'c Candidate {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in cands.iter().enumerate() {
        let d = (&c.x - to).norm();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    &cands[best]
}

fn best_value(cands: &[Candidate]) -> &Candidate {
    let mut best = 0;
    for (i, c) in cands.iter().enumerate() {
        if c.value > cands[best].value + 1e-12 {
            best = i;
        }
    }
    &cands[best]
}

/// Matches per-level candidate sets into telescoped chains.
pub fn match_levels(
    levels: &[LevelCandidates],
    strategy: Matching,
) -> Result<Vec<MatchedChain>, MlmcError> {
    for lc in levels {
        if lc.fine.is_empty() || (lc.level > 0 && lc.coarse.is_empty()) {
            return Err(MlmcError::EmptyCandidates(lc.level));
        }
    }
    let mut sorted: Vec<&LevelCandidates> = levels.iter().collect();
    sorted.sort_by_key(|lc| lc.level);

    match strategy {
        Matching::PointMatchLevel0 => {
            let level0 = sorted
                .iter()
                .find(|lc| lc.level == 0)
                .ok_or(MlmcError::EmptyCandidates(0))?;
            let anchor = best_value(&level0.fine).x.clone();
            let matched = sorted
                .iter()
                .map(|lc| MatchedLevel {
                    level: lc.level,
                    fine: nearest(&lc.fine, &anchor).clone(),
                    coarse: (lc.level > 0).then(|| nearest(&lc.coarse, &anchor).clone()),
                })
                .collect::<Vec<_>>();
            let head_value = matched.last().map(|m| m.fine.value).unwrap_or(f64::NAN);
            Ok(vec![MatchedChain {
                levels: matched,
                head_value,
            }])
        }
        Matching::Backward => {
            let top = sorted.last().ok_or(MlmcError::EmptyCandidates(0))?;
            // Branch heads are the finest level's fine maximizers, walked
            // backward; branches that collide at any level are pruned in
            // favor of the higher head value.
            let mut heads: Vec<usize> = (0..top.fine.len()).collect();
            heads.sort_by(|&a, &b| {
                top.fine[b]
                    .value
                    .partial_cmp(&top.fine[a].value)
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut chains: Vec<MatchedChain> = Vec::new();
            let mut claimed: Vec<Vec<usize>> = vec![Vec::new(); sorted.len()];
            'head: for &h in &heads {
                let mut cursor = top.fine[h].x.clone();
                let mut chain_rev: Vec<MatchedLevel> = Vec::new();
                for (li, lc) in sorted.iter().enumerate().rev() {
                    let fine = if lc.level == top.level {
                        &top.fine[h]
                    } else {
                        nearest(&lc.fine, &cursor)
                    };
                    let fine_idx = lc
                        .fine
                        .iter()
                        .position(|c| std::ptr::eq(c, fine))
                        .unwrap_or(0);
                    if claimed[li].contains(&fine_idx) {
                        continue 'head; // pruned: merged into a better branch
                    }
                    claimed[li].push(fine_idx);
                    let coarse = (lc.level > 0).then(|| nearest(&lc.coarse, &cursor).clone());
                    cursor = fine.x.clone();
                    chain_rev.push(MatchedLevel {
                        level: lc.level,
                        fine: fine.clone(),
                        coarse,
                    });
                }
                chain_rev.reverse();
                chains.push(MatchedChain {
                    levels: chain_rev,
                    head_value: top.fine[h].value,
                });
            }
            Ok(chains)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn cand(x: f64, v: f64) -> Candidate {
        Candidate {
            x: dvector![x],
            value: v,
        }
    }

    #[test]
    fn unimodal_strategies_agree() {
        let levels = vec![
            LevelCandidates {
                level: 0,
                fine: vec![cand(1.0, 5.0)],
                coarse: vec![],
            },
            LevelCandidates {
                level: 1,
                fine: vec![cand(1.05, 5.1)],
                coarse: vec![cand(0.95, 4.9)],
            },
        ];
        let a = match_levels(&levels, Matching::PointMatchLevel0).unwrap();
        let b = match_levels(&levels, Matching::Backward).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(b.len(), 1);
        for (x, y) in a[0].levels.iter().zip(&b[0].levels) {
            assert_eq!(x.fine.x, y.fine.x);
            assert_eq!(
                x.coarse.as_ref().map(|c| c.x.clone()),
                y.coarse.as_ref().map(|c| c.x.clone())
            );
        }
    }

    #[test]
    fn two_mode_point_matching_follows_level0_best() {
        // Modes near 0 and near 3; level 0's best is the mode at 3.
        let levels = vec![
            LevelCandidates {
                level: 0,
                fine: vec![cand(0.0, 1.0), cand(3.0, 2.0)],
                coarse: vec![],
            },
            LevelCandidates {
                level: 1,
                fine: vec![cand(0.1, 2.5), cand(2.9, 1.8)],
                coarse: vec![cand(0.05, 2.4), cand(2.95, 1.7)],
            },
        ];
        let chains = match_levels(&levels, Matching::PointMatchLevel0).unwrap();
        assert_eq!(chains.len(), 1);
        // Hand enumeration: anchor 3.0; nearest fine at level 1 is 2.9,
        // nearest coarse 2.95, regardless of their values.
        assert_eq!(chains[0].levels[1].fine.x, dvector![2.9]);
        assert_eq!(
            chains[0].levels[1].coarse.as_ref().unwrap().x,
            dvector![2.95]
        );
    }

    #[test]
    fn two_mode_backward_yields_branch_per_mode() {
        let levels = vec![
            LevelCandidates {
                level: 0,
                fine: vec![cand(0.0, 1.0), cand(3.0, 2.0)],
                coarse: vec![],
            },
            LevelCandidates {
                level: 1,
                fine: vec![cand(0.1, 2.5), cand(2.9, 1.8)],
                coarse: vec![cand(0.05, 2.4), cand(2.95, 1.7)],
            },
        ];
        let chains = match_levels(&levels, Matching::Backward).unwrap();
        assert_eq!(chains.len(), 2);
        // Ranked by head value: the 0.1-mode branch (2.5) first.
        assert!(chains[0].head_value > chains[1].head_value);
        assert_eq!(chains[0].levels[1].fine.x, dvector![0.1]);
        assert_eq!(chains[0].levels[0].fine.x, dvector![0.0]);
        assert_eq!(chains[1].levels[1].fine.x, dvector![2.9]);
        assert_eq!(chains[1].levels[0].fine.x, dvector![3.0]);
    }

    #[test]
    fn single_candidate_matching_is_identity() {
        let levels = vec![
            LevelCandidates {
                level: 0,
                fine: vec![cand(0.4, 1.0)],
                coarse: vec![],
            },
            LevelCandidates {
                level: 1,
                fine: vec![cand(0.5, 1.2)],
                coarse: vec![cand(0.45, 1.1)],
            },
        ];
        let chains = match_levels(&levels, Matching::PointMatchLevel0).unwrap();
        assert_eq!(chains[0].levels[0].fine.x, dvector![0.4]);
        assert_eq!(chains[0].levels[1].fine.x, dvector![0.5]);
    }

    #[test]
    fn empty_candidates_error() {
        let levels = vec![LevelCandidates {
            level: 0,
            fine: vec![],
            coarse: vec![],
        }];
        assert!(matches!(
            match_levels(&levels, Matching::PointMatchLevel0),
            Err(MlmcError::EmptyCandidates(0))
        ));
    }

    #[test]
    fn backward_prunes_merged_branches() {
        // Both finest candidates map to the same level-0 point: the weaker
        // head is pruned.
        let levels = vec![
            LevelCandidates {
                level: 0,
                fine: vec![cand(1.0, 1.0)],
                coarse: vec![],
            },
            LevelCandidates {
                level: 1,
                fine: vec![cand(1.1, 3.0), cand(0.9, 2.0)],
                coarse: vec![cand(1.0, 2.5)],
            },
        ];
        let chains = match_levels(&levels, Matching::Backward).unwrap();
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].levels[1].fine.x, dvector![1.1]);
    }
}
