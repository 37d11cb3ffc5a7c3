use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ScoreSet;

pub const DEFAULT_ROC_POINTS: usize = 200;
pub const DEFAULT_HISTOGRAM_BINS: usize = 100;

/// Decision threshold realizing a target false match rate.
///
/// A pair matches when its score is `>= threshold`, so ties count as
/// matches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FmrThreshold {
    pub target_fmr: f64,
    /// Smallest observed impostor score `t` with `#(impostor >= t) / N <= fmr`.
    pub threshold: f64,
    /// Midpoint between `threshold` and the next impostor score below it.
    pub reported: f64,
    /// `#(impostor >= threshold) / N`.
    pub achieved_fmr: f64,
    /// No observed score meets the target (e.g. `fmr < 1/N` or heavy ties);
    /// `threshold` is then just above the largest impostor score.
    pub unsupported: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TprAtFmr {
    pub fmr: f64,
    pub tpr: f64,
    pub threshold: f64,
    pub reported_threshold: f64,
    pub achieved_fmr: f64,
    pub unsupported: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fmr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// Operating points sorted by FMR ascending (threshold descending).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// TPR non-decreasing and threshold non-increasing along rising FMR.
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| {
            w[0].fmr <= w[1].fmr && w[0].tpr <= w[1].tpr && w[0].threshold >= w[1].threshold
        }) && self
            .points
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.fmr) && (0.0..=1.0).contains(&p.tpr))
    }
}

/// Score lists sorted descending, for repeated threshold queries.
#[derive(Clone, Debug, PartialEq)]
pub struct SortedScores {
    authentic: Vec<f32>,
    impostor: Vec<f32>,
}

fn sort_desc(v: &mut [f32]) {
    v.par_sort_unstable_by(|a, b| b.total_cmp(a));
}

impl SortedScores {
    pub fn new(mut authentic: Vec<f32>, mut impostor: Vec<f32>) -> Self {
        sort_desc(&mut authentic);
        sort_desc(&mut impostor);
        SortedScores {
            authentic,
            impostor,
        }
    }

    /// Sorts the set's own buffers in place.
    pub fn from_set(set: ScoreSet) -> Self {
        Self::new(set.authentic, set.impostor)
    }

    pub fn authentic(&self) -> &[f32] {
        &self.authentic
    }

    pub fn impostor(&self) -> &[f32] {
        &self.impostor
    }

    fn require_both(&self) -> Result<()> {
        if self.authentic.is_empty() || self.impostor.is_empty() {
            return Err(Error::EmptyScores);
        }
        Ok(())
    }

    pub fn threshold_at_fmr(&self, fmr: f64) -> Result<FmrThreshold> {
        threshold_sorted(&self.impostor, fmr)
    }

    pub fn tpr_at_fmr(&self, fmr: f64) -> Result<TprAtFmr> {
        self.require_both()?;
        let t = self.threshold_at_fmr(fmr)?;
        Ok(TprAtFmr {
            fmr,
            tpr: count_at_least(&self.authentic, t.threshold) as f64 / self.authentic.len() as f64,
            threshold: t.threshold,
            reported_threshold: t.reported,
            achieved_fmr: t.achieved_fmr,
            unsupported: t.unsupported,
        })
    }

    /// ROC sampled at `points` log-spaced FMR targets in `[1/N, 1]`, plus
    /// the zero-FMR point. Each target picks the lowest observed score whose
    /// FMR stays within the target; FMR and TPR are recounted at that score.
    pub fn roc_curve(&self, points: usize) -> Result<RocCurve> {
        self.require_both()?;
        let n = self.impostor.len() as f64;
        let points = points.max(2);
        let lo = (1.0 / n).ln();
        let mut targets = vec![0.0];
        targets.extend((0..points).map(|k| {
            if k + 1 == points {
                1.0
            } else {
                (lo + (0.0 - lo) * k as f64 / (points - 1) as f64).exp()
            }
        }));

        let mut thresholds: Vec<f32> = targets
            .into_iter()
            .map(|f| self.lowest_score_within(f))
            .collect();
        thresholds.sort_unstable_by(|a, b| b.total_cmp(a));
        thresholds.dedup();

        let na = self.authentic.len() as f64;
        let points = thresholds
            .into_iter()
            .map(|t| {
                let t = t as f64;
                RocPoint {
                    fmr: count_at_least(&self.impostor, t) as f64 / n,
                    tpr: count_at_least(&self.authentic, t) as f64 / na,
                    threshold: t,
                }
            })
            .collect();
        Ok(RocCurve { points })
    }

    /// Smallest score from either list whose impostor match rate is within
    /// `fmr`; just above `bound` when no observed score qualifies, which
    /// yields the curve's origin.
    fn lowest_score_within(&self, fmr: f64) -> f32 {
        let k = max_allowed_matches(self.impostor.len(), fmr);
        if k == self.impostor.len() {
            let a = self.authentic.last().copied();
            let b = self.impostor.last().copied();
            return a.into_iter().chain(b).min_by(|x, y| x.total_cmp(y)).unwrap();
        }
        let bound = self.impostor[k];
        let above = |v: &[f32]| {
            let q = v.partition_point(|&x| x > bound);
            (q > 0).then(|| v[q - 1])
        };
        above(&self.impostor)
            .into_iter()
            .chain(above(&self.authentic))
            .min_by(|x, y| x.total_cmp(y))
            .unwrap_or(bound.next_up())
    }
}

/// Largest match count `k` with `k / n <= fmr`.
fn max_allowed_matches(n: usize, fmr: f64) -> usize {
    let within = |k: usize| k as f64 / n as f64 <= fmr;
    let mut k = ((fmr * n as f64).floor().max(0.0) as usize).min(n);
    while k < n && within(k + 1) {
        k += 1;
    }
    while k > 0 && !within(k) {
        k -= 1;
    }
    k
}

/// Number of entries `>= t` in a descending list.
fn count_at_least(desc: &[f32], t: f64) -> usize {
    desc.partition_point(|&x| x as f64 >= t)
}

fn check_fmr(fmr: f64) -> Result<()> {
    if !(fmr > 0.0 && fmr < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fmr must be in (0, 1), got {fmr}"
        )));
    }
    Ok(())
}

fn threshold_sorted(impostor_desc: &[f32], fmr: f64) -> Result<FmrThreshold> {
    check_fmr(fmr)?;
    if impostor_desc.is_empty() {
        return Err(Error::EmptyScores);
    }
    let n = impostor_desc.len();
    let k = max_allowed_matches(n, fmr);
    // k < n because fmr < 1.
    let bound = impostor_desc[k];
    let above = impostor_desc.partition_point(|&x| x > bound);
    if above == 0 {
        let t = impostor_desc[0].next_up() as f64;
        return Ok(FmrThreshold {
            target_fmr: fmr,
            threshold: t,
            reported: t,
            achieved_fmr: 0.0,
            unsupported: true,
        });
    }
    let t = impostor_desc[above - 1] as f64;
    Ok(FmrThreshold {
        target_fmr: fmr,
        threshold: t,
        reported: (t + bound as f64) / 2.0,
        achieved_fmr: above as f64 / n as f64,
        unsupported: false,
    })
}

pub fn threshold_at_fmr(impostor: &[f32], fmr: f64) -> Result<FmrThreshold> {
    let mut sorted = impostor.to_vec();
    sort_desc(&mut sorted);
    threshold_sorted(&sorted, fmr)
}

pub fn tpr_at_fmr(scores: &ScoreSet, fmr: f64) -> Result<TprAtFmr> {
    SortedScores::new(scores.authentic.clone(), scores.impostor.clone()).tpr_at_fmr(fmr)
}

pub fn roc_curve(scores: &ScoreSet, points: usize) -> Result<RocCurve> {
    SortedScores::new(scores.authentic.clone(), scores.impostor.clone()).roc_curve(points)
}

/// Equal-width histogram over `range` as `(bin_center, density)`. Bins are
/// left-closed except the last, which also holds the upper edge; scores
/// outside the range land in the edge bins. Densities integrate to 1.
pub fn histogram(scores: &[f32], bins: usize, range: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be at least 1".into()));
    }
    if !(range.1 > range.0) {
        return Err(Error::InvalidParameter(format!(
            "empty histogram range {range:?}"
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let width = (range.1 - range.0) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &s in scores {
        let pos = ((s as f64 - range.0) / width).floor();
        let idx = if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    let norm = scores.len() as f64 * width;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (range.0 + (i as f64 + 0.5) * width, c as f64 / norm))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn set(authentic: Vec<f32>, impostor: Vec<f32>) -> ScoreSet {
        ScoreSet {
            group: "all".into(),
            authentic,
            impostor,
            subsample_fraction: 1.0,
            seed: 0,
        }
    }

    /// Exhaustive scan: every observed score is a candidate; keep the
    /// smallest one whose match rate is within the target.
    fn threshold_oracle(impostor: &[f32], fmr: f64) -> Option<f64> {
        let n = impostor.len() as f64;
        impostor
            .iter()
            .map(|&c| c as f64)
            .filter(|&c| impostor.iter().filter(|&&x| x as f64 >= c).count() as f64 / n <= fmr)
            .min_by(|a, b| a.total_cmp(b))
    }

    #[test]
    fn ten_values_at_one_tenth() {
        let imp: Vec<f32> = (1..=10).map(|i| i as f32 / 10.0).collect();
        let t = threshold_at_fmr(&imp, 0.1).unwrap();
        assert_eq!(t.threshold, 1.0);
        assert!(!t.unsupported);
        assert_eq!(t.achieved_fmr, 0.1);
        assert_eq!(t.reported, (1.0 + 0.9f32 as f64) / 2.0);
        assert_eq!(Some(t.threshold), threshold_oracle(&imp, 0.1));
    }

    #[test]
    fn all_tied_is_flagged() {
        let t = threshold_at_fmr(&[0.0; 8], 0.5).unwrap();
        assert!(t.unsupported);
        assert!(t.threshold > 0.0);
        assert_eq!(t.achieved_fmr, 0.0);
    }

    #[test]
    fn below_one_over_n_is_flagged() {
        let t = threshold_at_fmr(&[0.1, 0.2, 0.3], 0.2).unwrap();
        assert!(t.unsupported);
        assert!(t.threshold > 0.3f32 as f64);
    }

    #[test]
    fn invalid_inputs() {
        assert!(threshold_at_fmr(&[], 0.1).is_err());
        assert!(threshold_at_fmr(&[0.1], 0.0).is_err());
        assert!(threshold_at_fmr(&[0.1], 1.0).is_err());
        assert!(tpr_at_fmr(&set(vec![], vec![0.1]), 0.5).is_err());
    }

    #[test]
    fn perfect_separation() {
        let s = set(vec![1.0; 5], vec![-1.0; 7]);
        for fmr in [1e-5, 0.1, 0.9] {
            assert_eq!(tpr_at_fmr(&s, fmr).unwrap().tpr, 1.0);
        }
        let roc = roc_curve(&s, 200).unwrap();
        assert!(roc.points.iter().all(|p| p.tpr == 1.0));
        assert!(roc.is_monotone());
    }

    #[test]
    fn minimal_roc_is_two_steps() {
        let roc = roc_curve(&set(vec![0.8], vec![0.3]), 200).unwrap();
        assert_eq!(
            roc.points,
            vec![
                RocPoint {
                    fmr: 0.0,
                    tpr: 1.0,
                    threshold: 0.8f32 as f64
                },
                RocPoint {
                    fmr: 1.0,
                    tpr: 1.0,
                    threshold: 0.3f32 as f64
                },
            ]
        );
        let roc = roc_curve(&set(vec![0.3], vec![0.8]), 200).unwrap();
        let steps: Vec<(f64, f64)> = roc.points.iter().map(|p| (p.fmr, p.tpr)).collect();
        assert_eq!(steps, [(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn identical_distributions_give_tpr_near_fmr() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let scores: Vec<f32> = (0..1000).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let s = set(scores.clone(), scores);
        for fmr in [0.01, 0.05, 0.3] {
            let r = tpr_at_fmr(&s, fmr).unwrap();
            assert_eq!(r.tpr, r.achieved_fmr);
            assert!((r.tpr - fmr).abs() <= 1.0 / 1000.0 + 1e-12);
        }
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.0; 10], 2, (-1.0, 1.0)).unwrap();
        assert_eq!(h, vec![(-0.5, 0.0), (0.5, 1.0)]);
        let grid: Vec<f32> = (0..400).map(|i| -1.0 + (i as f32 + 0.5) / 200.0).collect();
        let h = histogram(&grid, 4, (-1.0, 1.0)).unwrap();
        assert!(h.iter().all(|&(_, d)| (d - 0.5).abs() < 1e-12));
        // Out-of-range values clamp to the edge bins; the top edge is closed.
        let h = histogram(&[-3.0, 1.0, 7.0], 2, (-1.0, 1.0)).unwrap();
        assert_eq!(h[0].1 * 3.0, 1.0);
        assert_eq!(h[1].1 * 3.0, 2.0);
        assert!(histogram(&[], 4, (-1.0, 1.0)).is_err());
        assert!(histogram(&[0.0], 0, (-1.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn threshold_matches_oracle(
            raw in prop::collection::vec(-100i32..100, 1..300),
            fmr in 0.0005f64..0.9995,
        ) {
            // Coarse grid values force ties.
            let imp: Vec<f32> = raw.iter().map(|&x| x as f32 / 100.0).collect();
            let t = threshold_at_fmr(&imp, fmr).unwrap();
            match threshold_oracle(&imp, fmr) {
                Some(expected) => {
                    prop_assert!(!t.unsupported);
                    prop_assert_eq!(t.threshold, expected);
                    let n = imp.len() as f64;
                    let at_reported = imp.iter().filter(|&&x| x as f64 >= t.reported).count() as f64 / n;
                    prop_assert!(at_reported <= fmr);
                }
                None => prop_assert!(t.unsupported),
            }
        }

        #[test]
        fn histogram_mass_is_one(scores in prop::collection::vec(-1.5f32..1.5, 1..500), bins in 1usize..150) {
            let h = histogram(&scores, bins, (-1.0, 1.0)).unwrap();
            let width = 2.0 / bins as f64;
            let mass: f64 = h.iter().map(|&(_, d)| d * width).sum();
            prop_assert!((mass - 1.0).abs() < 1e-9);
        }

        #[test]
        fn roc_points_recount_and_monotone(
            a in prop::collection::vec(-1.0f32..1.0, 1..250),
            b in prop::collection::vec(-1.0f32..1.0, 1..250),
            points in 2usize..60,
        ) {
            let roc = roc_curve(&set(a.clone(), b.clone()), points).unwrap();
            prop_assert!(roc.is_monotone());
            for p in &roc.points {
                let fmr = b.iter().filter(|&&x| x as f64 >= p.threshold).count() as f64 / b.len() as f64;
                let tpr = a.iter().filter(|&&x| x as f64 >= p.threshold).count() as f64 / a.len() as f64;
                prop_assert_eq!((p.fmr, p.tpr), (fmr, tpr));
            }
            let last = roc.points.last().unwrap();
            prop_assert_eq!((last.fmr, last.tpr), (1.0, 1.0));
        }
    }
}
