//! Brute-force oracles for the weight mask and the ranking metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segdec_core::loss::distance_weight_mask;
use segdec_core::metrics::{average_precision, roc_auc};
use segdec_core::Mask;

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    // blobs of varying density so regions of several sizes show up
    let density = rng.gen_range(0.2..0.8);
    Mask::from_fn(h, w, |_, _| rng.gen::<f64>() < density)
}

fn flood_regions(mask: &Mask) -> Vec<usize> {
    let (h, w) = (mask.height, mask.width);
    let mut label = vec![0usize; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if !mask.data[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        let mut stack = vec![start];
        label[start] = next;
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if mask.data[j] && label[j] == 0 {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    label
}

fn brute_weights(mask: &Mask, w_pos: f64, p: f64) -> Vec<f64> {
    let (h, w) = (mask.height, mask.width);
    let negatives: Vec<(f64, f64)> =
        (0..h * w).filter(|&i| !mask.data[i]).map(|i| ((i / w) as f64, (i % w) as f64)).collect();
    if negatives.is_empty() {
        return vec![w_pos; h * w];
    }
    let dist: Vec<f64> = (0..h * w)
        .map(|i| {
            if !mask.data[i] {
                return 0.0;
            }
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            negatives.iter().map(|&(nr, nc)| ((r - nr).powi(2) + (c - nc).powi(2)).sqrt()).fold(f64::INFINITY, f64::min)
        })
        .collect();
    let label = flood_regions(mask);
    let regions = label.iter().copied().max().unwrap_or(0);
    let mut dmax = vec![0.0f64; regions + 1];
    for i in 0..h * w {
        dmax[label[i]] = dmax[label[i]].max(dist[i]);
    }
    (0..h * w).map(|i| if mask.data[i] { w_pos * (dist[i] / dmax[label[i]]).powf(p) } else { 1.0 }).collect()
}

#[test]
fn weight_mask_matches_all_pairs_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let mask = random_mask(&mut rng, 16, 16);
        let w_pos = rng.gen_range(0.5..10.0);
        let p = rng.gen_range(0.5..3.0);
        let got = distance_weight_mask(&mask, w_pos, p);
        let want = brute_weights(&mask, w_pos, p);
        for (a, b) in got.data.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "max error {worst}");
}

/// Area under the step PR curve, summed over every distinct threshold.
fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut prev_recall, mut area) = (0.0, 0.0);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l).count() as f64;
        let predicted = scores.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / n_pos;
        area += (recall - prev_recall) * tp / predicted;
        prev_recall = recall;
    }
    area
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

#[test]
fn ranking_metrics_match_exhaustive_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 1000 {
        let n = rng.gen_range(2..=12);
        // coarse scores force plenty of ties
        let levels = rng.gen_range(2..8);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == n {
            continue;
        }
        let ap = average_precision(&scores, &labels).unwrap();
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!((ap - brute_ap(&scores, &labels)).abs() < 1e-12, "AP {scores:?} {labels:?}");
        assert!((auc - brute_auc(&scores, &labels)).abs() < 1e-12, "AUC {scores:?} {labels:?}");
        done += 1;
    }
}
