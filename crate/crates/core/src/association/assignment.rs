use crate::ingest::AssignmentStrategy;

/// One-to-one matching between detections (rows) and tracks (columns).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    /// `(detection index, track index)`, sorted by detection index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

impl Matching {
    fn from_pairs(mut pairs: Vec<(usize, usize)>, n_dets: usize, n_tracks: usize) -> Self {
        pairs.sort_unstable();
        let mut det_used = vec![false; n_dets];
        let mut track_used = vec![false; n_tracks];
        for &(d, t) in &pairs {
            det_used[d] = true;
            track_used[t] = true;
        }
        Self {
            pairs,
            unmatched_detections: (0..n_dets).filter(|&d| !det_used[d]).collect(),
            unmatched_tracks: (0..n_tracks).filter(|&t| !track_used[t]).collect(),
        }
    }

    pub fn total_score(&self, scores: &[Vec<f64>]) -> f64 {
        self.pairs.iter().map(|&(d, t)| scores[d][t]).sum()
    }
}

/// Matches detections to tracks from a score matrix `scores[det][track]`.
///
/// Only pairs with a positive score can be matched. Tracks are expected in
/// ascending id order so that column order doubles as age order for ties.
pub fn assign(scores: &[Vec<f64>], n_tracks: usize, strategy: AssignmentStrategy) -> Matching {
    let n_dets = scores.len();
    debug_assert!(scores.iter().all(|row| row.len() == n_tracks));
    if n_dets == 0 || n_tracks == 0 {
        return Matching::from_pairs(Vec::new(), n_dets, n_tracks);
    }
    let pairs = match strategy {
        AssignmentStrategy::Greedy => greedy(scores, n_tracks),
        AssignmentStrategy::Hungarian => hungarian_max(scores, n_tracks)
            .into_iter()
            .filter(|&(d, t)| scores[d][t] > 0.0)
            .collect(),
    };
    Matching::from_pairs(pairs, n_dets, n_tracks)
}

/// Repeatedly takes the largest remaining positive score. Ties go to the
/// older track (lower column), then the lower detection index.
fn greedy(scores: &[Vec<f64>], n_tracks: usize) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(usize, usize)> = (0..scores.len())
        .flat_map(|d| (0..n_tracks).map(move |t| (d, t)))
        .filter(|&(d, t)| scores[d][t] > 0.0)
        .collect();
    candidates.sort_by(|&(d1, t1), &(d2, t2)| {
        scores[d2][t2]
            .total_cmp(&scores[d1][t1])
            .then(t1.cmp(&t2))
            .then(d1.cmp(&d2))
    });
    let mut det_used = vec![false; scores.len()];
    let mut track_used = vec![false; n_tracks];
    let mut pairs = Vec::new();
    for (d, t) in candidates {
        if !det_used[d] && !track_used[t] {
            det_used[d] = true;
            track_used[t] = true;
            pairs.push((d, t));
        }
    }
    pairs
}

/// Maximum-weight assignment via the Hungarian method with potentials,
/// O(n² m) for an n×m matrix with n ≤ m (the matrix is transposed otherwise).
/// Every row of the smaller side is assigned; callers drop non-positive pairs.
pub fn hungarian_max(scores: &[Vec<f64>], n_cols: usize) -> Vec<(usize, usize)> {
    let n_rows = scores.len();
    if n_rows == 0 || n_cols == 0 {
        return Vec::new();
    }
    if n_rows > n_cols {
        let transposed: Vec<Vec<f64>> = (0..n_cols)
            .map(|c| (0..n_rows).map(|r| scores[r][c]).collect())
            .collect();
        return hungarian_max(&transposed, n_rows)
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
    }

    // minimize -score; 1-based indexing with a virtual column 0
    let (n, m) = (n_rows, n_cols);
    let cost = |i: usize, j: usize| -scores[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0, j) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m)
        .filter(|&j| row_of[j] != 0)
        .map(|j| (row_of[j] - 1, j - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use AssignmentStrategy::*;

    #[test]
    fn single_pair() {
        for s in [Greedy, Hungarian] {
            let m = assign(&[vec![0.8]], 1, s);
            assert_eq!(m.pairs, vec![(0, 0)]);
            assert!(m.unmatched_detections.is_empty() && m.unmatched_tracks.is_empty());
        }
    }

    #[test]
    fn detection_takes_better_track() {
        // two matchings exist: {(0,0)} scoring 0.8 and {(0,1)} scoring 0.2
        for s in [Greedy, Hungarian] {
            let m = assign(&[vec![0.8, 0.2]], 2, s);
            assert_eq!(m.pairs, vec![(0, 0)]);
            assert_eq!(m.unmatched_tracks, vec![1]);
        }
    }

    #[test]
    fn zero_scores_never_match() {
        for s in [Greedy, Hungarian] {
            let m = assign(&[vec![0.0, 0.0], vec![0.0, 0.0]], 2, s);
            assert!(m.pairs.is_empty());
            assert_eq!(m.unmatched_detections, vec![0, 1]);
            assert_eq!(m.unmatched_tracks, vec![0, 1]);
        }
    }

    #[test]
    fn greedy_ties_prefer_older_track_then_lower_detection() {
        let m = assign(&[vec![0.5, 0.5]], 2, Greedy);
        assert_eq!(m.pairs, vec![(0, 0)]);
        let m = assign(&[vec![0.5], vec![0.5]], 1, Greedy);
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn hungarian_beats_greedy_when_maxima_collide() {
        // every row and column has a unique strict maximum, yet greedy is suboptimal
        let scores = vec![vec![0.9, 0.8], vec![0.85, 0.1]];
        let g = assign(&scores, 2, Greedy);
        let h = assign(&scores, 2, Hungarian);
        assert!((g.total_score(&scores) - 1.0).abs() < 1e-12);
        assert!((h.total_score(&scores) - 1.65).abs() < 1e-12);
    }

    #[test]
    fn rectangular_matrices() {
        let tall = vec![vec![0.1], vec![0.7], vec![0.3]];
        assert_eq!(assign(&tall, 1, Hungarian).pairs, vec![(1, 0)]);
        let wide = vec![vec![0.1, 0.6, 0.2], vec![0.5, 0.7, 0.0]];
        let m = assign(&wide, 3, Hungarian);
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(m.unmatched_tracks, vec![2]);
    }
}
