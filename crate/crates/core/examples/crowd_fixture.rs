//! Regenerates `tests/fixtures/crowd_simulation.json`.
//!
//!     cargo run -p crowdseg-core --example crowd_fixture

use crowdseg_core::demo::{generate, DemoConfig};
use crowdseg_core::fusion::{merge_labels, MergePolicy};
use crowdseg_core::metrics::score_labelmaps;
use crowdseg_core::LabelMap;
use serde_json::json;

fn mean_dsc(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let s = score_labelmaps(pred, gt, gt.palette()).unwrap();
    s.iter().map(|p| p.dsc).sum::<f64>() / s.len() as f64
}

fn main() {
    let config = DemoConfig {
        n_pool: 0,
        n_crowd: 40,
        ..DemoConfig::default()
    };
    let demo = generate(&config).unwrap();
    let mut images = Vec::new();
    let mut wins = 0;
    for (id, maps) in &demo.annotator_maps {
        let gt = &demo.ground_truth[id];
        let merged = merge_labels(maps, &MergePolicy::default()).unwrap().merged;
        let merged_dsc = mean_dsc(&merged, gt);
        let individual = maps.iter().map(|m| mean_dsc(m, gt)).sum::<f64>() / maps.len() as f64;
        wins += usize::from(merged_dsc >= individual);
        images.push(json!({"image_id": id, "merged_dsc": merged_dsc, "mean_individual_dsc": individual}));
    }
    let doc = json!({
        "config": {
            "n_images": config.n_crowd,
            "n_annotators": config.n_annotators,
            "size": config.size,
            "seed": config.seed,
            "threshold": 4,
        },
        "images": images,
        "merged_at_least_mean": wins,
        "fraction": wins as f64 / config.n_crowd as f64,
    });
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/crowd_simulation.json");
    std::fs::write(path, serde_json::to_string_pretty(&doc).unwrap() + "\n").unwrap();
    println!("{wins}/{} images: merged >= mean individual", config.n_crowd);
}
