//! Equal error rate from two score lists.
//!
//! Sweeping a threshold over the scores yields a staircase ROC; the
//! achievable operating points also include every interpolation between
//! thresholds (decide by coin flip between two rules), which is the upper
//! convex hull of the staircase. The EER is where the hull meets the line
//! false-accept = false-reject. On continuous well-separated scores this
//! agrees with the naive staircase crossing; with few or tied scores the
//! hull is what makes the crossing well defined.

use crate::error::{Error, Result};

/// Operating points (false-positive rate, true-positive rate) for every
/// distinct threshold, plus the (0, 0) endpoint, ordered by descending
/// threshold.
fn roc_points(positive: &[f32], negative: &[f32]) -> Vec<(f64, f64)> {
    let mut pos: Vec<f32> = positive.to_vec();
    let mut neg: Vec<f32> = negative.to_vec();
    pos.sort_by(|a, b| b.total_cmp(a));
    neg.sort_by(|a, b| b.total_cmp(a));
    let mut thresholds: Vec<f32> = pos.iter().chain(neg.iter()).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut points = vec![(0.0, 0.0)];
    let (mut pi, mut ni) = (0usize, 0usize);
    for &t in &thresholds {
        while pi < pos.len() && pos[pi] >= t {
            pi += 1;
        }
        while ni < neg.len() && neg[ni] >= t {
            ni += 1;
        }
        points.push((ni as f64 / neg.len() as f64, pi as f64 / pos.len() as f64));
    }
    points
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Upper convex hull of the ROC points, left to right.
fn upper_hull(mut points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for p in points {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// Rate at which false acceptance equals false rejection, in [0, 0.5].
pub fn eer(positive: &[f32], negative: &[f32]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::contract("eer needs scores on both sides"));
    }
    if positive
        .iter()
        .chain(negative.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::contract("eer scores must be finite"));
    }
    let hull = upper_hull(roc_points(positive, negative));
    // walk to the segment where tpr + fpr - 1 changes sign
    let miss = |p: (f64, f64)| p.0 + p.1 - 1.0;
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        if miss(b) < 0.0 {
            continue;
        }
        if miss(a) >= 0.0 {
            return Ok(a.0.clamp(0.0, 0.5));
        }
        let t = -miss(a) / (miss(b) - miss(a));
        return Ok((a.0 + t * (b.0 - a.0)).clamp(0.0, 0.5));
    }
    Ok(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent reference: operating points recounted by direct scans,
    /// achievable region taken as every segment between two of them; the
    /// best equal-error point is the smallest false-positive rate at which
    /// any such segment meets fpr = 1 - tpr.
    fn eer_brute_force(positive: &[f32], negative: &[f32]) -> f64 {
        let mut points = vec![(0.0f64, 0.0f64)];
        for &t in positive.iter().chain(negative.iter()) {
            let fpr = negative.iter().filter(|&&v| v >= t).count() as f64 / negative.len() as f64;
            let tpr = positive.iter().filter(|&&v| v >= t).count() as f64 / positive.len() as f64;
            points.push((fpr, tpr));
        }
        let miss = |p: (f64, f64)| p.0 + p.1 - 1.0;
        let mut best = 0.5f64;
        for (i, &a) in points.iter().enumerate() {
            if miss(a).abs() < 1e-12 {
                best = best.min(a.0);
            }
            for &b in points.iter().skip(i + 1) {
                let (lo, hi) = if miss(a) <= miss(b) { (a, b) } else { (b, a) };
                if miss(lo) > 0.0 || miss(hi) < 0.0 || (miss(hi) - miss(lo)).abs() < 1e-15 {
                    continue;
                }
                let t = -miss(lo) / (miss(hi) - miss(lo));
                best = best.min(lo.0 + t * (hi.0 - lo.0));
            }
        }
        best.clamp(0.0, 0.5)
    }

    #[test]
    fn perfect_separation_scores_zero() {
        assert_eq!(eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn identical_distributions_score_half() {
        assert_eq!(eer(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.5);
        assert_eq!(eer(&[0.4], &[0.4]).unwrap(), 0.5);
    }

    #[test]
    fn interleaved_quartet_scores_quarter() {
        let v = eer(&[0.9, 0.4], &[0.6, 0.1]).unwrap();
        assert!((v - 0.25).abs() < 1e-12, "{v}");
    }

    #[test]
    fn rejects_empty_or_non_finite_input() {
        assert!(eer(&[], &[0.1]).is_err());
        assert!(eer(&[0.1], &[]).is_err());
        assert!(eer(&[f32::NAN], &[0.1]).is_err());
    }

    #[test]
    fn matches_brute_force_on_awkward_ties() {
        let cases: &[(&[f32], &[f32])] = &[
            (&[0.5, 0.5, 0.5], &[0.5, 0.5]),
            (&[1.0, 0.0], &[1.0, 0.0]),
            (&[0.8, 0.8, 0.2], &[0.8, 0.1]),
            (&[0.9, 0.7, 0.7, 0.3], &[0.7, 0.5, 0.2]),
        ];
        for (p, n) in cases {
            let fast = eer(p, n).unwrap();
            let slow = eer_brute_force(p, n);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    fn score_list() -> impl Strategy<Value = Vec<f32>> {
        // coarse grid forces frequent ties across and within lists
        proptest::collection::vec((-4i32..5).prop_map(|v| v as f32 / 4.0), 1..12)
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force(p in score_list(), n in score_list()) {
            let fast = eer(&p, &n).unwrap();
            let slow = eer_brute_force(&p, &n);
            prop_assert!((fast - slow).abs() < 1e-9, "{} vs {}", fast, slow);
        }

        #[test]
        fn invariant_under_monotone_transforms(p in score_list(), n in score_list(), pick in 0u8..3) {
            let f = |v: f32| -> f32 {
                match pick {
                    0 => 2.0 * v + 1.0,
                    1 => v * v * v,
                    _ => v.exp(),
                }
            };
            let base = eer(&p, &n).unwrap();
            let tp: Vec<f32> = p.iter().map(|&v| f(v)).collect();
            let tn: Vec<f32> = n.iter().map(|&v| f(v)).collect();
            prop_assert!((eer(&tp, &tn).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn invariant_under_swap_and_negate(p in score_list(), n in score_list()) {
            let base = eer(&p, &n).unwrap();
            let np: Vec<f32> = n.iter().map(|&v| -v).collect();
            let nn: Vec<f32> = p.iter().map(|&v| -v).collect();
            prop_assert!((eer(&np, &nn).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn stays_in_range(p in score_list(), n in score_list()) {
            let v = eer(&p, &n).unwrap();
            prop_assert!((0.0..=0.5).contains(&v));
        }
    }
}
