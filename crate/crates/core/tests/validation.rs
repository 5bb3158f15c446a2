mod common;

use common::*;
use proptest::prelude::*;
use remine_core::model::Violation;
use remine_core::{validate_dataset, ImageRecord};

fn valid_records() -> impl Strategy<Value = Vec<ImageRecord>> {
    prop::collection::vec((0usize..8, 1u32..2000, 1u32..2000, 0usize..4), 1..20).prop_map(|rows| {
        let c = cucumber();
        rows.into_iter()
            .enumerate()
            .map(|(i, (t, w, h, boxes))| {
                let label = c.label(t).unwrap().to_string();
                let mut r = ImageRecord::new(format!("img-{i}"), label.clone(), w, h);
                if c.is_disease(&label) {
                    for _ in 0..boxes {
                        r = r.with_annotation(label.clone(), small_box(w.max(10), h.max(10)));
                    }
                    // small_box needs room for 9 px on each axis
                    r.image_w = w.max(10);
                    r.image_h = h.max(10);
                    for a in &mut r.annotations {
                        a.bbox.image_w = r.image_w;
                        a.bbox.image_h = r.image_h;
                    }
                }
                r
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy)]
enum Breakage {
    Duplicate,
    UnknownLabel,
    OutOfBounds,
    HealthyAnnotated,
    ZeroWidth,
    EmptyId,
}

fn breakage() -> impl Strategy<Value = Breakage> {
    prop_oneof![
        Just(Breakage::Duplicate),
        Just(Breakage::UnknownLabel),
        Just(Breakage::OutOfBounds),
        Just(Breakage::HealthyAnnotated),
        Just(Breakage::ZeroWidth),
        Just(Breakage::EmptyId),
    ]
}

fn matches(b: Breakage, v: &Violation) -> bool {
    matches!(
        (b, v),
        (Breakage::Duplicate, Violation::DuplicateImageId(_))
            | (Breakage::UnknownLabel, Violation::UnknownLabel { .. })
            | (Breakage::OutOfBounds, Violation::BoxOutOfBounds { .. })
            | (
                Breakage::HealthyAnnotated,
                Violation::HealthyWithAnnotations(_)
            )
            | (Breakage::ZeroWidth, Violation::InvalidImageSize { .. })
            | (Breakage::EmptyId, Violation::EmptyImageId)
    )
}

proptest! {
    #[test]
    fn valid_sets_pass_and_revalidate_unchanged(records in valid_records()) {
        let c = cucumber();
        let ds = validate_dataset(records.clone(), &c).unwrap();
        prop_assert_eq!(ds.records(), records.as_slice());
        let again = validate_dataset(ds.into_records(), &c).unwrap();
        prop_assert_eq!(again.records(), records.as_slice());
    }

    #[test]
    fn each_broken_invariant_is_reported(records in valid_records(), b in breakage(), pick in any::<prop::sample::Index>()) {
        let c = cucumber();
        let mut records = records;
        let i = pick.index(records.len());
        match b {
            Breakage::Duplicate => {
                let dup = records[i].clone();
                records.push(dup);
            }
            Breakage::UnknownLabel => records[i].true_label = "XX".into(),
            Breakage::OutOfBounds => {
                let r = &mut records[i];
                r.true_label = "MD".into();
                r.annotations = vec![remine_core::model::Annotation { label: "MD".into(), bbox: small_box(r.image_w, r.image_h) }];
                r.annotations[0].bbox.x = f64::from(r.image_w);
            }
            Breakage::HealthyAnnotated => {
                let r = &mut records[i];
                r.true_label = "HE".into();
                r.hard_sample_key = None;
                r.annotations = vec![remine_core::model::Annotation { label: "HE".into(), bbox: small_box(r.image_w, r.image_h) }];
            }
            Breakage::ZeroWidth => records[i].image_w = 0,
            Breakage::EmptyId => records[i].image_id.clear(),
        }
        let err = validate_dataset(records, &c).unwrap_err();
        prop_assert!(err.0.iter().any(|v| matches(b, v)), "{:?} not in {:?}", b, err.0);
    }
}

#[test]
fn hard_sample_records_may_carry_boxes() {
    let c = cucumber();
    let mut r = ImageRecord::new("h1", "HE", 100, 100).with_annotation("HE", small_box(100, 100));
    assert!(validate_dataset(vec![r.clone()], &c).is_err());
    r.hard_sample_key = Some("MD".into());
    assert!(validate_dataset(vec![r.clone()], &c).is_ok());
    r.hard_sample_key = Some("HE".into());
    let err = validate_dataset(vec![r], &c).unwrap_err();
    assert!(matches!(err.0[0], Violation::InvalidHardSampleKey { .. }));
}
