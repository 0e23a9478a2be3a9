mod common;

use freespace::data::{assign_splits, load_sequence, save_sequence, DatasetIndex, Frame, FrameSequence, RgbFrame, Split};
use freespace::synthgen::{generate_sequence, SceneSpec};
use freespace::Error;
use proptest::prelude::*;

#[test]
fn sequence_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut seq = generate_sequence(&SceneSpec {
        texture_amplitude: 0.6,
        reflection_strength: 0.5,
        ..SceneSpec::still(2, 4, (40, 48), 20.0)
    })
    .unwrap();
    seq.id = "seqA".into();
    seq.split = Split::Val;
    save_sequence(&seq, dir.path()).unwrap();
    let back = load_sequence(dir.path()).unwrap();
    assert_eq!(back, seq);
}

#[test]
fn unlabeled_frames_round_trip_without_masks() {
    let dir = tempfile::tempdir().unwrap();
    let frames = (0..3)
        .map(|t| Frame::new(RgbFrame::filled(5, 6, [0.2, 0.4, 0.6]), t * 2, None).unwrap())
        .collect();
    let seq = FrameSequence::new("plain", frames, Split::Test).unwrap();
    save_sequence(&seq, dir.path()).unwrap();
    assert!(!dir.path().join("masks").exists());
    let back = load_sequence(dir.path()).unwrap();
    assert_eq!(back.frames.iter().map(|f| f.timestamp).collect::<Vec<_>>(), vec![0, 2, 4]);
    assert!(back.frames.iter().all(|f| f.mask.is_none()));
}

#[test]
fn missing_manifest_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_sequence(dir.path()), Err(Error::Format(_))));
    assert!(matches!(DatasetIndex::load(dir.path()), Err(Error::Format(_))));
}

#[test]
fn manifest_frame_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate_sequence(&SceneSpec::still(0, 3, (16, 16), 8.0)).unwrap();
    save_sequence(&seq, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("frames/000001.png")).unwrap();
    assert!(matches!(load_sequence(dir.path()), Err(Error::Format(_))));
}

#[test]
fn non_binary_mask_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate_sequence(&SceneSpec::still(0, 2, (16, 16), 8.0)).unwrap();
    save_sequence(&seq, dir.path()).unwrap();
    image::GrayImage::from_pixel(16, 16, image::Luma([128]))
        .save(dir.path().join("masks/000000.png"))
        .unwrap();
    assert!(matches!(load_sequence(dir.path()), Err(Error::Validation(_))));
}

#[test]
fn timestamps_must_increase() {
    let f = |t| Frame::new(RgbFrame::filled(2, 2, [0.0; 3]), t, None).unwrap();
    assert!(FrameSequence::new("s", vec![f(0), f(2), f(1)], Split::Train).is_err());
}

proptest! {
    #[test]
    fn split_assignment_partitions(n in 3usize..60, seed in any::<u64>()) {
        let labels = assign_splits(n, [6.0, 2.0, 2.0], seed).unwrap();
        prop_assert_eq!(labels.len(), n);
        for s in [Split::Train, Split::Val, Split::Test] {
            prop_assert!(labels.contains(&s));
        }
        prop_assert_eq!(labels, assign_splits(n, [6.0, 2.0, 2.0], seed).unwrap());
    }

    #[test]
    fn rgb8_round_trip(bytes in proptest::collection::vec(any::<u8>(), 3 * 4 * 5)) {
        let img = image::RgbImage::from_raw(5, 4, bytes.clone()).unwrap();
        let frame = RgbFrame::from_rgb8(&img);
        prop_assert_eq!(frame.to_rgb8().into_raw(), bytes);
    }
}
