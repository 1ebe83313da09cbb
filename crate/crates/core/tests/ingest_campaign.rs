use chrono::{DateTime, TimeZone, Utc};
use crowdseg_core::ingest::{
    assemble_campaign, load_campaign, AnnotationRecord, CampaignDocument, ImageEntry, IngestError, MaskSource,
    SourceDialect, TaskEntry, CAMPAIGN_SCHEMA_VERSION,
};
use crowdseg_core::mask::encode_rle;
use crowdseg_core::{BinaryPlane, ClassPalette, LabelMap, PixelRect};

fn organs() -> ClassPalette {
    ClassPalette::from_names(&["Liver", "Kidney", "Aorta"]).unwrap()
}

fn at(s: i64) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap() + chrono::Duration::seconds(s)
}

fn rect(x0: u32, y0: u32, w: u32, h: u32) -> BinaryPlane {
    BinaryPlane::from_rect(8, 8, PixelRect { x0, y0, w, h })
}

fn record(annotator: &str, class: &str, plane: &BinaryPlane, t: i64) -> AnnotationRecord {
    AnnotationRecord {
        image_id: "img_0".into(),
        annotator_id: annotator.into(),
        task_id: "task_1".into(),
        class_name: class.into(),
        mask: MaskSource::Rle(encode_rle(plane)),
        created_at: at(t),
        source_dialect: SourceDialect::Canonical,
    }
}

fn document(annotations: Vec<AnnotationRecord>) -> CampaignDocument {
    CampaignDocument {
        schema_version: CAMPAIGN_SCHEMA_VERSION,
        palette: organs(),
        images: vec![ImageEntry {
            image_id: "img_0".into(),
            path: "images/img_0.png".into(),
            width: 8,
            height: 8,
            ground_truth_path: None,
        }],
        annotations,
        tasks: vec![TaskEntry {
            task_id: "task_1".into(),
            description: "Label the specified abdominal organs without any AI assistance".into(),
            image_ids: vec!["img_0".into()],
            ai_assist: false,
            exemplars_provided: false,
        }],
    }
}

fn five_annotators() -> Vec<AnnotationRecord> {
    (0..5).map(|i| record(&format!("a{i}"), "Liver", &rect(i, 1, 4, 4), i as i64)).collect()
}

#[test]
fn five_annotators_one_set() {
    let c = assemble_campaign(document(five_annotators()), std::path::Path::new(".")).unwrap();
    assert_eq!(c.sets.len(), 1);
    let set = &c.sets[0];
    assert_eq!(set.maps.len(), 5);
    assert_eq!(set.annotators, ["a0", "a1", "a2", "a3", "a4"]);
    for (i, m) in set.maps.iter().enumerate() {
        assert_eq!(m.plane(1), rect(i as u32, 1, 4, 4));
    }
    assert!(c.superseded.is_empty());
}

#[test]
fn newer_submission_wins() {
    let mut recs = five_annotators();
    recs.push(record("a0", "Liver", &rect(0, 0, 2, 2), 100));
    let c = assemble_campaign(document(recs), std::path::Path::new(".")).unwrap();
    assert_eq!(c.sets[0].maps[0].plane(1), rect(0, 0, 2, 2));
    assert_eq!(c.superseded.len(), 1);
    assert_eq!(c.superseded[0].annotator_id, "a0");
    assert_eq!(c.superseded[0].replaced_by, at(100));
}

#[test]
fn unknown_class_names_the_record() {
    let mut recs = five_annotators();
    recs.push(record("a2", "Spleen", &rect(0, 0, 2, 2), 7));
    let err = assemble_campaign(document(recs), std::path::Path::new(".")).unwrap_err();
    match err {
        IngestError::UnknownClass { record, class } => {
            assert_eq!(class, "Spleen");
            assert!(record.contains("img_0/a2/Spleen"), "{record}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn same_timestamp_conflict_is_ambiguous() {
    let mut recs = five_annotators();
    recs.push(record("a1", "Liver", &rect(5, 5, 2, 2), 1));
    assert!(matches!(
        assemble_campaign(document(recs), std::path::Path::new(".")),
        Err(IngestError::AmbiguousDuplicate(_))
    ));
    // an exact resubmission is harmless
    let mut recs = five_annotators();
    recs.push(record("a1", "Liver", &rect(1, 1, 4, 4), 1));
    assemble_campaign(document(recs), std::path::Path::new(".")).unwrap();
}

#[test]
fn wrong_mask_size_is_rejected() {
    let mut recs = five_annotators();
    recs[3].mask = MaskSource::Rle(encode_rle(&BinaryPlane::full(4, 4)));
    assert!(matches!(
        assemble_campaign(document(recs), std::path::Path::new(".")),
        Err(IngestError::DimensionMismatch { expected: (8, 8), got: (4, 4), .. })
    ));
}

#[test]
fn multi_class_strokes_flatten_in_painter_order() {
    let recs = vec![
        record("a0", "Aorta", &rect(2, 2, 2, 2), 10),
        record("a0", "Liver", &rect(0, 0, 3, 3), 5),
    ];
    let c = assemble_campaign(document(recs), std::path::Path::new(".")).unwrap();
    let m = &c.sets[0].maps[0];
    assert_eq!(m.get(2, 2), 3, "later aorta stroke overwrites liver");
    assert_eq!(m.get(0, 0), 1);
    assert_eq!(m.plane(1).popcount(), 8);
}

#[test]
fn record_order_does_not_matter() {
    let mut recs = five_annotators();
    recs.push(record("a0", "Liver", &rect(0, 0, 2, 2), 100));
    recs.push(record("a3", "Kidney", &rect(6, 6, 2, 2), 50));
    let forward = assemble_campaign(document(recs.clone()), std::path::Path::new(".")).unwrap();
    recs.reverse();
    let backward = assemble_campaign(document(recs), std::path::Path::new(".")).unwrap();
    let maps = |c: &crowdseg_core::ingest::Campaign| c.sets.iter().map(|s| s.maps.clone()).collect::<Vec<Vec<LabelMap>>>();
    assert_eq!(maps(&forward), maps(&backward));
    assert_eq!(forward.superseded, backward.superseded);
}

#[test]
fn loads_from_disk_with_files_and_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let pal = std::sync::Arc::new(organs());
    let mut gt = vec![0u8; 64];
    gt[9] = 1;
    gt[10] = 2;
    std::fs::create_dir(dir.path().join("gt")).unwrap();
    std::fs::create_dir(dir.path().join("masks")).unwrap();
    let gt_map = LabelMap::new(8, 8, gt, pal.clone()).unwrap();
    std::fs::write(dir.path().join("gt/img_0.png"), gt_map.to_png_bytes().unwrap()).unwrap();
    let mut mask = vec![0u8; 64];
    mask[0] = 255;
    std::fs::write(
        dir.path().join("masks/a9.png"),
        crowdseg_core::raster::encode_png_luma8(8, 8, &mask).unwrap(),
    )
    .unwrap();

    let mut doc = document(five_annotators());
    doc.images[0].ground_truth_path = Some("gt/img_0.png".into());
    let mut file_rec = record("a9", "Kidney", &rect(0, 0, 1, 1), 3);
    file_rec.mask = MaskSource::File { path: "masks/a9.png".into() };
    doc.annotations.push(file_rec);
    let path = dir.path().join("campaign.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();

    let c = load_campaign(&path).unwrap();
    assert_eq!(c.ground_truth["img_0"], gt_map);
    let set = c.set("img_0").unwrap();
    assert_eq!(set.maps.len(), 6);
    assert_eq!(set.maps[5].plane(2).popcount(), 1);
}

#[test]
fn schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"palette": [], "images": "nope"}"#).unwrap();
    assert!(matches!(load_campaign(&path), Err(IngestError::Schema(_))));

    let mut doc = document(vec![]);
    doc.tasks[0].image_ids.push("ghost".into());
    assert!(matches!(doc.validate(), Err(IngestError::Schema(_))));

    let mut recs = five_annotators();
    recs[0].image_id = "ghost".into();
    assert!(matches!(document(recs).validate(), Err(IngestError::UnknownImage { .. })));
}
