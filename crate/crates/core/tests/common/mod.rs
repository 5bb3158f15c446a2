#![allow(dead_code)]

use remine_core::mining::HardSampleImage;
use remine_core::{BoundingBox, ClassCatalog, HardSampleIndex, ImageRecord, RecallTable};

pub const CUCUMBER: [&str; 7] = ["CCYV", "CLS", "DM", "GM", "MYSV", "MD", "PM"];
pub const TOMATO: [&str; 9] = ["BC", "BW", "CLM", "CTS", "GM", "LB", "LM", "PM", "YLC"];

/// Healthy hard-sample images per class after mining (cucumber).
pub const CUCUMBER_HSM: [(&str, usize); 7] = [
    ("CCYV", 1003),
    ("CLS", 194),
    ("DM", 307),
    ("GM", 24),
    ("MYSV", 438),
    ("MD", 2519),
    ("PM", 435),
];

/// Healthy hard-sample images per class after mining (tomato).
pub const TOMATO_HSM: [(&str, usize); 9] = [
    ("BC", 595),
    ("BW", 931),
    ("CLM", 64),
    ("CTS", 50),
    ("GM", 18),
    ("LB", 34),
    ("LM", 349),
    ("PM", 220),
    ("YLC", 1092),
];

/// Training images and boxes per disease class (cucumber).
pub const CUCUMBER_TRAIN: [(&str, usize, usize); 7] = [
    ("CCYV", 1970, 3950),
    ("CLS", 3231, 99698),
    ("DM", 2404, 32876),
    ("GM", 653, 2490),
    ("MYSV", 2062, 2195),
    ("MD", 3241, 5757),
    ("PM", 3144, 58312),
];

/// Training images and boxes per disease class (tomato).
pub const TOMATO_TRAIN: [(&str, usize, usize); 9] = [
    ("BC", 1205, 2418),
    ("BW", 1201, 3043),
    ("CLM", 2407, 14914),
    ("CTS", 1169, 8387),
    ("GM", 1257, 1646),
    ("LB", 1516, 2468),
    ("LM", 1916, 13957),
    ("PM", 1987, 22909),
    ("YLC", 2033, 7788),
];

pub fn cucumber() -> ClassCatalog {
    ClassCatalog::new(CUCUMBER, "HE").unwrap()
}

pub fn tomato() -> ClassCatalog {
    ClassCatalog::new(TOMATO, "HE").unwrap()
}

pub fn small_box(image_w: u32, image_h: u32) -> BoundingBox {
    BoundingBox::new(1.0, 1.0, 8.0, 8.0, image_w, image_h).unwrap()
}

/// An index with exactly `counts` images per class and synthetic ids.
pub fn index_with_counts(catalog: &ClassCatalog, counts: &[(&str, usize)]) -> HardSampleIndex {
    HardSampleIndex::new(
        catalog,
        counts.iter().map(|&(k, n)| {
            (
                k.to_string(),
                (0..n)
                    .map(|i| HardSampleImage {
                        image_id: format!("hs-{k}-{i:05}"),
                        boxes: vec![small_box(1472, 1427)],
                        key_confidence: 0.5,
                    })
                    .collect(),
            )
        }),
    )
    .unwrap()
}

/// Recall tables with `org` fixed and `hsm = org - drop` per class.
pub fn tables_with_drops(
    catalog: &ClassCatalog,
    org: f64,
    drops: &[(&str, f64)],
) -> (RecallTable, RecallTable) {
    let drop_of = |l: &str| drops.iter().find(|(k, _)| *k == l).map_or(0.0, |(_, d)| *d);
    let r_org = RecallTable::new(
        "org",
        catalog,
        catalog.disease_classes().iter().map(|l| (l.clone(), org)),
        [],
    )
    .unwrap();
    let r_hsm = RecallTable::new(
        "hsm",
        catalog,
        catalog
            .disease_classes()
            .iter()
            .map(|l| (l.clone(), org - drop_of(l))),
        [],
    )
    .unwrap();
    (r_org, r_hsm)
}

/// Disease training records with the given per-class image and box totals.
pub fn disease_records(rows: &[(&str, usize, usize)]) -> Vec<ImageRecord> {
    let mut out = Vec::new();
    for &(label, images, boxes) in rows {
        for i in 0..images {
            let n = boxes / images + usize::from(i < boxes % images);
            let mut r = ImageRecord::new(format!("{label}-{i:05}"), label, 1472, 1427);
            for _ in 0..n {
                r = r.with_annotation(label, small_box(1472, 1427));
            }
            out.push(r);
        }
    }
    out
}
