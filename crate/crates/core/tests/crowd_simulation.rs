//! Majority voting against simulated annotators, checked against the values
//! recorded by `examples/crowd_fixture.rs`.

use crowdseg_core::demo::{generate, DemoConfig};
use crowdseg_core::fusion::{merge_labels, MergePolicy};
use crowdseg_core::metrics::score_labelmaps;
use crowdseg_core::LabelMap;
use serde::Deserialize;

#[derive(Deserialize)]
struct Row {
    image_id: String,
    merged_dsc: f64,
    mean_individual_dsc: f64,
}

#[derive(Deserialize)]
struct Recorded {
    images: Vec<Row>,
    merged_at_least_mean: usize,
    fraction: f64,
}

fn mean_dsc(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let s = score_labelmaps(pred, gt, gt.palette()).unwrap();
    s.iter().map(|p| p.dsc).sum::<f64>() / s.len() as f64
}

#[test]
fn merged_beats_average_annotator_on_recorded_fixture() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/crowd_simulation.json")).unwrap();
    let rec: Recorded = serde_json::from_str(&text).unwrap();
    let demo = generate(&DemoConfig { n_pool: 0, n_crowd: rec.images.len(), ..DemoConfig::default() }).unwrap();
    let mut wins = 0;
    for row in &rec.images {
        let maps = &demo.annotator_maps[&row.image_id];
        let gt = &demo.ground_truth[&row.image_id];
        assert_eq!(maps.len(), 5);
        let merged = merge_labels(maps, &MergePolicy::default()).unwrap().merged;
        let m = mean_dsc(&merged, gt);
        let ind = maps.iter().map(|a| mean_dsc(a, gt)).sum::<f64>() / maps.len() as f64;
        assert!((m - row.merged_dsc).abs() < 1e-12, "{}", row.image_id);
        assert!((ind - row.mean_individual_dsc).abs() < 1e-12, "{}", row.image_id);
        wins += usize::from(m >= ind);
    }
    assert_eq!(wins, rec.merged_at_least_mean);
    assert!(rec.fraction >= 0.9, "{}", rec.fraction);
}
