//! Independent oracles shared by the focused tests and the acceptance run.
#![allow(dead_code)]

use depcae::eval::agreement::cohen_kappa;
use depcae::loss::{
    depth_weighted_mse, depth_weighted_mse_backward, DepthNormalization, DepthWeights,
    ReconstructionPair,
};
use depcae::pipeline::{refine_label, Interval, WindowLabel};
use depcae::{DepCae, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_err(a: f64, n: f64) -> f64 {
    // both effectively zero (e.g. a conv bias feeding batchnorm)
    if a.abs().max(n.abs()) < 1e-9 {
        return 0.0;
    }
    (a - n).abs() / a.abs().max(n.abs())
}

/// The tiny model: 2 frames of 16×16, channels [2, 2, 2], with a depth map
/// that varies across columns.
fn tiny() -> (DepCae<f64>, Tensor<f64>, DepthWeights) {
    let model = DepCae::<f64>::new(&[2, 2, 2], 2, 16, 3).unwrap();
    let mut x = Tensor::<f64>::zeros(&[2, 1, 16, 16]);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        let (f, r, c) = (i / 256, (i / 16) % 16, i % 16);
        *v = 0.5 + 0.3 * ((r as f64 * 0.7 + c as f64 * 0.3 + f as f64).sin());
    }
    let z = Tensor::from_vec(
        &[16, 16],
        (0..256).map(|i| 2.0 + (i % 16) as f64 * 0.5).collect(),
    )
    .unwrap();
    let w = DepthWeights::new(&z, 1.0, DepthNormalization::MaxToOne).unwrap();
    (model, x, w)
}

fn tiny_loss(model: &DepCae<f64>, x: &Tensor<f64>, w: &DepthWeights) -> (f64, u64) {
    let (y, trace) = model.forward_train(x).unwrap();
    let l = depth_weighted_mse(&ReconstructionPair::new(x, &y).unwrap(), w).unwrap();
    (l, trace.activation_pattern())
}

/// Largest relative error between the analytic depth-weighted loss gradient
/// of the tiny model and central differences, over every parameter.
pub fn tiny_model_gradient_error() -> f64 {
    let (model, x, w) = tiny();
    let (y, trace) = model.forward_train(&x).unwrap();
    let base_pattern = trace.activation_pattern();
    let g = depth_weighted_mse_backward(&ReconstructionPair::new(&x, &y).unwrap(), &w).unwrap();
    let analytic = model.backward(&trace, &g).unwrap();

    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), analytic.len());
    let mut worst = 0.0f64;
    for (p, name) in names.iter().enumerate() {
        for i in 0..analytic[p].len() {
            let shifted = |delta: f64| {
                let mut m = model.clone();
                let mut t = m.params()[p].1.clone();
                t.data_mut()[i] += delta;
                m.set_tensor(name, t).unwrap();
                tiny_loss(&m, &x, &w)
            };
            // shrink the step until neither side crosses a relu or pool switch
            let mut h = 1e-5;
            let numeric = loop {
                let (lp, pp) = shifted(h);
                let (lm, pm) = shifted(-h);
                if (pp == base_pattern && pm == base_pattern) || h < 1e-9 {
                    break (lp - lm) / (2.0 * h);
                }
                h /= 2.0;
            };
            worst = worst.max(rel_err(analytic[p].data()[i], numeric));
        }
    }
    worst
}

/// Pairwise AUROC: concordant pairs plus half the ties, over all
/// positive/negative pairs.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                if scores[i] > scores[j] {
                    num += 2;
                } else if scores[i] == scores[j] {
                    num += 1;
                }
            }
        }
    }
    num as f64 / (2 * pairs) as f64
}

/// Scores drawn from a few coarse levels so ties are common, with both
/// classes present.
pub fn random_scored_set(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.gen_range(2..=max_n);
        let levels = rng.gen_range(2..=20);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

/// F1 of `score > t` against the labels.
pub fn f1_at(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > t, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Best F1 over every candidate threshold, by exhaustive search.
pub fn brute_max_f1(scores: &[f64], labels: &[bool]) -> f64 {
    scores
        .iter()
        .map(|&t| f1_at(scores, labels, t))
        .fold(0.0, f64::max)
}

/// Mean kappa between a random label vector and a shuffled copy of itself.
pub fn shuffled_kappa_mean(trials: usize, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let a: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let mut b = a.clone();
        b.shuffle(&mut rng);
        total += cohen_kappa(&a, &b).unwrap().value;
    }
    total / trials as f64
}

/// Extends one anomalous interval of a random set and checks that no window
/// that was anomalous before loses that label. Returns false on a violation.
pub fn refinement_stays_monotone(rng: &mut ChaCha8Rng) -> bool {
    let clip = "c";
    let frames = rng.gen_range(75..600);
    let kinds = [WindowLabel::ProxyOutlier, WindowLabel::Anomalous];
    let mut intervals: Vec<Interval> = (0..rng.gen_range(1..6))
        .map(|_| {
            let start = rng.gen_range(0..frames);
            Interval {
                clip: clip.into(),
                start,
                end: rng.gen_range(start + 1..=frames),
                kind: kinds[rng.gen_range(0..2)],
                group: None,
            }
        })
        .collect();
    let labels = |ivs: &[Interval]| -> Vec<WindowLabel> {
        (0..frames / 75)
            .map(|w| refine_label(clip, w * 75, 75, ivs))
            .collect()
    };
    let before = labels(&intervals);
    let k = rng.gen_range(0..intervals.len());
    intervals[k].kind = WindowLabel::Anomalous;
    let with_kind = labels(&intervals);
    intervals[k].start -= rng.gen_range(0..=intervals[k].start);
    intervals[k].end += rng.gen_range(0..=frames - intervals[k].end);
    let after = labels(&intervals);
    let kept = |a: &[WindowLabel], b: &[WindowLabel]| {
        a.iter()
            .zip(b)
            .all(|(x, y)| *x != WindowLabel::Anomalous || *y == WindowLabel::Anomalous)
    };
    kept(&before, &with_kind) && kept(&with_kind, &after)
}

/// Krippendorff's alpha from an explicitly built coincidence matrix: each
/// item contributes both ordered value pairs with weight 1/(m − 1) = 1.
pub fn alpha_oracle(a: &[bool], b: &[bool]) -> f64 {
    let mut o = [[0.0f64; 2]; 2];
    for (&x, &y) in a.iter().zip(b) {
        o[x as usize][y as usize] += 1.0;
        o[y as usize][x as usize] += 1.0;
    }
    let nc = [o[0][0] + o[0][1], o[1][0] + o[1][1]];
    let n = nc[0] + nc[1];
    let observed = (o[0][1] + o[1][0]) / n;
    let expected = (nc[0] * nc[1] + nc[1] * nc[0]) / (n * (n - 1.0));
    1.0 - observed / expected
}
