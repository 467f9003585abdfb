mod common;

use common::envelope_ap;
use handctx::evaluation::{
    average_precision, average_precision_ranked, emit_pr_curve, evaluate, match_detections, orientation_accuracy,
    read_pr_csv, render_svg, DetectionResult, EvalConfig, GroundTruthBox, Interpolation, PrCurve,
};
use handctx::geometry::{AxisBox, Point2, Quad};
use handctx::orientation::Angle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut impl Rng) -> AxisBox<f64> {
    let x = rng.gen_range(0.0..6.0);
    let y = rng.gen_range(0.0..6.0);
    AxisBox::new(x, y, x + rng.gen_range(1.0..4.0), y + rng.gen_range(1.0..4.0))
}

fn random_instance(rng: &mut impl Rng, max_dets: usize, max_gts: usize) -> (Vec<DetectionResult<f64>>, Vec<GroundTruthBox<f64>>) {
    let images = ["a", "b"];
    let n_gt = rng.gen_range(1..=max_gts);
    let gts = (0..n_gt)
        .map(|_| GroundTruthBox {
            image_id: images[rng.gen_range(0..2)].to_string(),
            bbox: random_box(rng),
            orientation: Angle::from_radians(0.0),
        })
        .collect();
    let n_det = rng.gen_range(0..=max_dets);
    let dets = (0..n_det)
        .map(|id| DetectionResult {
            id,
            image_id: images[rng.gen_range(0..2)].to_string(),
            bbox: random_box(rng),
            // coarse scores so ties occur
            score: rng.gen_range(0..5) as f64 / 4.0,
            orientation: None,
        })
        .collect();
    (dets, gts)
}

/// Greedy rule applied literally: repeatedly pick the highest-scoring
/// unprocessed detection (earliest on ties) and scan every ground truth.
fn brute_force_labels(dets: &[DetectionResult<f64>], gts: &[GroundTruthBox<f64>], thresh: f64) -> (Vec<bool>, Vec<usize>) {
    let mut done = vec![false; dets.len()];
    let mut taken = vec![false; gts.len()];
    let mut labels = vec![false; dets.len()];
    let mut order = Vec::new();
    for _ in 0..dets.len() {
        let mut pick = None;
        for d in 0..dets.len() {
            if !done[d] && pick.map_or(true, |p: usize| dets[d].score > dets[p].score) {
                pick = Some(d);
            }
        }
        let d = pick.unwrap();
        done[d] = true;
        order.push(d);
        let mut best = -1.0;
        let mut best_g = None;
        for g in 0..gts.len() {
            if taken[g] || gts[g].image_id != dets[d].image_id {
                continue;
            }
            let a = &dets[d].bbox;
            let b = &gts[g].bbox;
            let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
            let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
            let inter = iw * ih;
            let o = inter / (a.width() * a.height() + b.width() * b.height() - inter);
            if o > best {
                best = o;
                best_g = Some(g);
            }
        }
        if let Some(g) = best_g {
            if best >= thresh {
                taken[g] = true;
                labels[d] = true;
            }
        }
    }
    (labels, order)
}

#[test]
fn matching_agrees_with_brute_force_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..500 {
        let (dets, gts) = random_instance(&mut rng, 6, 4);
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        let (labels, order) = brute_force_labels(&dets, &gts, 0.5);
        assert_eq!(m.is_tp, labels);
        assert_eq!(m.order, order);
        assert_eq!(m.gt_matched.iter().filter(|&&x| x).count(), labels.iter().filter(|&&x| x).count());
    }
}

#[test]
fn ap_agrees_with_envelope_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..1000 {
        let n = rng.gen_range(0..=8);
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let tps = labels.iter().filter(|&&l| l).count();
        let total = tps.max(1) + rng.gen_range(0..3);
        let ap = average_precision_ranked::<f64>(&labels, total, Interpolation::AllPoints).unwrap().ap;
        assert!((ap - envelope_ap(&labels, total)).abs() <= 1e-12, "{labels:?} / {total}");
    }
}

#[test]
fn score_ties_follow_input_order() {
    let scored = [(0.5, false), (0.5, true)];
    let c = average_precision(&scored, 1, Interpolation::AllPoints).unwrap();
    assert_eq!(c.ap, 0.5);
    assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 0.5)]);
}

#[test]
fn curve_points_are_monotone_in_recall() {
    let c = average_precision_ranked::<f64>(&[true, false, true, false, true], 4, Interpolation::AllPoints).unwrap();
    c.validate().unwrap();
    assert_eq!(c.points.len(), 5);
}

#[test]
fn end_to_end_evaluation_with_orientation() {
    let quad = |x: f64, y: f64| {
        Quad::new([
            Point2::new(x, y),
            Point2::new(x + 10.0, y),
            Point2::new(x + 10.0, y + 10.0),
            Point2::new(x, y + 10.0),
        ])
    };
    // wrist on side 3 (left edge): hand points along +x, θ = 0
    let gts = vec![
        GroundTruthBox::from_quad("a", &quad(0.0, 0.0), 3).unwrap(),
        GroundTruthBox::from_quad("a", &quad(50.0, 0.0), 3).unwrap(),
    ];
    assert_eq!(gts[0].bbox, AxisBox::new(0.0, 0.0, 10.0, 10.0));
    let det = |id, x: f64, score, deg: f64| DetectionResult {
        id,
        image_id: "a".into(),
        bbox: AxisBox::new(x, 0.0, x + 10.0, 10.0),
        score,
        orientation: Some(Angle::from_degrees(deg)),
    };
    let dets = vec![det(0, 0.0, 0.9, 15.0), det(1, 50.0, 0.8, -5.0), det(2, 25.0, 0.95, 0.0)];
    let e = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
    assert_eq!(e.true_positives, 2);
    // FP, TP, TP over 2 GTs: the envelope lifts recall 0.5 to 2/3
    assert!((e.curve.ap - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(e.orientation.unwrap(), vec![0.5, 1.0, 1.0]);
}

#[test]
fn controlled_orientation_errors() {
    let errors_deg = [0.0, 5.0, -9.5, 9.9, 12.0, -19.0, 25.0, 29.9, -45.0, 179.0];
    let pairs: Vec<_> = errors_deg
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let gt = -170.0 + 37.0 * k as f64;
            (Angle::from_degrees(gt + e), Angle::from_degrees(gt))
        })
        .collect();
    let acc = orientation_accuracy(&pairs, &[10.0, 20.0, 30.0]).unwrap();
    assert_eq!(acc, vec![0.4, 0.6, 0.8]);
}

#[test]
fn pr_curve_files() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("pr");

    let empty = PrCurve::<f64> { points: vec![], ap: 0.0 };
    emit_pr_curve(&empty, &stem, "empty").unwrap();
    assert_eq!(std::fs::read_to_string(stem.with_extension("csv")).unwrap(), "recall,precision\n");
    assert!(!std::fs::read_to_string(stem.with_extension("svg")).unwrap().contains("<polyline"));

    let two = PrCurve { points: vec![(0.1, 1.0), (0.2, 2.0 / 3.0)], ap: 0.0 };
    emit_pr_curve(&two, &stem, "two").unwrap();
    let csv = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(read_pr_csv::<f64>(&stem.with_extension("csv")).unwrap().points, two.points);

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let labels: Vec<bool> = (0..40).map(|_| rng.gen_bool(0.6)).collect();
    let c = average_precision_ranked::<f64>(&labels, 30, Interpolation::AllPoints).unwrap();
    emit_pr_curve(&c, &stem, "random").unwrap();
    assert_eq!(read_pr_csv::<f64>(&stem.with_extension("csv")).unwrap().points, c.points);
}

#[test]
fn svg_carries_reported_point() {
    let c = PrCurve { points: vec![(0.25, 1.0), (0.75, 0.81), (0.9, 0.5)], ap: 0.7 };
    let svg = render_svg(&c, "curve");
    assert!(svg.contains(r#"data-recall="0.75" data-precision="0.81""#));
    assert!(svg.starts_with("<svg"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ap_properties(labels in prop::collection::vec(any::<bool>(), 0..12), extra in 0usize..4) {
        let tps = labels.iter().filter(|&&l| l).count();
        let total = tps + 1 + extra;
        let ap = |l: &[bool]| average_precision_ranked::<f64>(l, total, Interpolation::AllPoints).unwrap().ap;
        let base = ap(&labels);
        prop_assert!((0.0..=1.0).contains(&base));
        let mut with_tp = labels.clone();
        with_tp.push(true);
        prop_assert!(ap(&with_tp) >= base - 1e-15);
        let mut with_fp = labels.clone();
        with_fp.push(false);
        prop_assert!(ap(&with_fp) <= base + 1e-15);
        let eleven = average_precision_ranked::<f64>(&labels, total, Interpolation::ElevenPoint).unwrap().ap;
        prop_assert!((0.0..=1.0).contains(&eleven));
    }

    #[test]
    fn ap_depends_only_on_ranking(scores in prop::collection::vec(-5.0f64..5.0, 1..10), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scored: Vec<(f64, bool)> = scores.iter().map(|&s| (s, rng.gen_bool(0.5))).collect();
        let warped: Vec<(f64, bool)> = scored.iter().map(|&(s, l)| ((0.7 * s).exp() * 3.0 - 1.0, l)).collect();
        let a = average_precision(&scored, scored.len(), Interpolation::AllPoints).unwrap().ap;
        let b = average_precision(&warped, scored.len(), Interpolation::AllPoints).unwrap().ap;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn orientation_accuracy_is_monotone(errs in prop::collection::vec(-180.0f64..180.0, 1..20), mut ts in prop::collection::vec(0.0f64..180.0, 1..6)) {
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pairs: Vec<_> = errs.iter().map(|&e| (Angle::from_degrees(e), Angle::from_degrees(0.0))).collect();
        let acc = orientation_accuracy(&pairs, &ts).unwrap();
        for w in acc.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
    }
}
