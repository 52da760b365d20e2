mod common;

use chroma_core::net::{init_params, ChromaNet, ModelConfig, Variant};
use chroma_core::train::{aggregate, compare, evaluate, psnr, Predictor, PSNR_CAP};
use proptest::prelude::*;

fn net(variant: Variant, seed: u64) -> ChromaNet<f32> {
    let cfg = ModelConfig::new(variant).with_seed(seed);
    ChromaNet::new(cfg, init_params(&cfg).unwrap()).unwrap()
}

fn dataset(variant: Variant, seed: u64) -> Vec<chroma_core::BlockSample> {
    let f = common::format_for(variant);
    let mut set = common::random_samples(f, 4, 7, seed);
    set.extend(common::random_samples(f, 8, 5, seed + 1));
    set.extend(common::random_samples(f, 16, 2, seed + 2));
    set
}

#[test]
fn report_bookkeeping() {
    let v = Variant::SchemeA;
    let report = evaluate(&net(v, 1), &dataset(v, 1)).unwrap();
    assert_eq!(report.records.len(), 14);
    assert_eq!(report.histogram(), [7, 5, 2]);
    assert_eq!(report.aggregates, aggregate(&report.records));
    let overall = report.overall();
    assert_eq!(overall.mode_counts.nn + overall.mode_counts.lm, 14);
    assert_eq!(report.mode_counts, overall.mode_counts);
    for r in &report.records {
        let nn = r.nn.chroma_mse();
        let lm = r.lm.chroma_mse();
        assert_eq!(r.selected == Predictor::Nn, nn < lm);
        assert!((r.nn.psnr_cb - psnr(r.nn.mse_cb)).abs() < 1e-12);
    }
    let by_size: usize = [4, 8, 16].iter().map(|&n| report.for_size(n).unwrap().blocks).sum();
    assert_eq!(by_size, 14);
}

#[test]
fn perfect_prediction_hits_the_psnr_cap() {
    // A flat frame is predicted exactly by the linear model.
    let frame = chroma_core::Frame::new(
        chroma_core::Plane::filled(32, 32, 300),
        chroma_core::Plane::filled(16, 16, 700),
        chroma_core::Plane::filled(16, 16, 200),
        10,
        chroma_core::ChromaFormat::Yuv420,
    )
    .unwrap();
    let s = chroma_core::block::sample_at(&frame, 4, (4, 4)).unwrap();
    let report = evaluate(&net(Variant::Baseline, 0), &[s]).unwrap();
    let r = &report.records[0];
    assert_eq!(r.lm.mse_cb, 0.0);
    assert_eq!(r.lm.psnr_cb, PSNR_CAP);
    assert_eq!(r.lm.psnr_cr, PSNR_CAP);
}

#[test]
fn evaluation_is_order_independent() {
    let v = Variant::SchemeB;
    let model = net(v, 2);
    let data = dataset(v, 2);
    let a = evaluate(&model, &data).unwrap();
    let mut rev = data.clone();
    rev.reverse();
    let b = evaluate(&model, &rev).unwrap();
    let k = data.len();
    for (i, r) in a.records.iter().enumerate() {
        let other = &b.records[k - 1 - i];
        assert_eq!((r.nn, r.lm, r.selected), (other.nn, other.lm, other.selected));
    }
    for (x, y) in a.aggregates.iter().zip(&b.aggregates) {
        assert_eq!(x.blocks, y.blocks);
        assert_eq!(x.mode_counts, y.mode_counts);
        assert!((x.nn.mse - y.nn.mse).abs() <= 1e-15 * x.nn.mse.max(1e-30));
        assert!((x.lm.mse - y.lm.mse).abs() <= 1e-15 * x.lm.mse.max(1e-30));
        assert!((x.selected_mse - y.selected_mse).abs() <= 1e-15 * x.selected_mse.max(1e-30));
    }
}

#[test]
fn self_comparison_and_schema() {
    let v = Variant::Baseline;
    let report = evaluate(&net(v, 3), &dataset(v, 3)).unwrap();
    let cmp = compare(&[report.clone(), report.clone()]).unwrap();
    assert_eq!(cmp.rows.len(), 8);
    let sizes: Vec<&str> = cmp.rows[..4].iter().map(|r| r.size.as_str()).collect();
    assert_eq!(sizes, ["4", "8", "16", "overall"]);
    for row in &cmp.rows {
        assert_eq!(row.rel_vs_ref, Some(0.0));
    }
    let overall = &cmp.rows[3];
    let agg = report.overall();
    let by_hand = (agg.nn.mse - agg.lm.mse) / agg.lm.mse;
    assert!((overall.rel_vs_lm.unwrap() - by_hand).abs() <= 1e-15 * by_hand.abs().max(1.0));
    assert_eq!(overall.nn_selected + overall.lm_selected, report.records.len());

    let csv = cmp.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), chroma_core::train::COMPARISON_HEADER);
    assert_eq!(lines.count(), 8);
    assert!(cmp.to_table().contains("overall"));
}

#[test]
fn comparing_different_datasets_fails() {
    let v = Variant::Baseline;
    let a = evaluate(&net(v, 0), &dataset(v, 0)).unwrap();
    let b = evaluate(&net(v, 0), &dataset(v, 0)[..10]).unwrap();
    assert!(compare(&[a, b]).is_err());
    assert!(compare(&[]).is_err());
}

#[test]
fn report_json_round_trip() {
    let v = Variant::SchemeA;
    let report = evaluate(&net(v, 4), &dataset(v, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    report.save_json(&path).unwrap();
    let back = chroma_core::EvalReport::load_json(&path).unwrap();
    assert_eq!(back, report);
    assert_eq!(report.records_csv().lines().count(), report.records.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn selection_never_loses_to_a_single_predictor(seed in 0u64..1000) {
        let v = Variant::Baseline;
        let report = evaluate(&net(v, seed), &dataset(v, seed)).unwrap();
        for agg in &report.aggregates {
            prop_assert!(agg.selected_mse <= agg.nn.mse.min(agg.lm.mse) * (1.0 + 1e-12));
        }
    }
}
