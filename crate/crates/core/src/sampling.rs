//! Media-sampling planners and the constrained contrastive batch sampler.
//!
//! Planners are pure functions of their inputs and RNG state; they emit
//! instructions (windows, timestamps, crop rectangles) for an external
//! feature-extraction pipeline and never touch pixels or waveforms. Seconds
//! values serialize with six decimal places.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::dataio::{PairedDataset, Split};

pub const DEFAULT_SECTIONS: usize = 6;
pub const DEFAULT_SEGMENT_LEN_S: f64 = 5.0;
pub const DEFAULT_FRAMES_PER_SEGMENT: usize = 50;
pub const DEFAULT_FRAME_RESOLUTION: (u32, u32) = (768, 432);
pub const DEFAULT_RESIZE_SHORT_TO: u32 = 128;
pub const DEFAULT_CROP_SIZE: u32 = 112;

const BATCH_RESHUFFLE_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("track of {duration_s} s is too short: need at least {minimum_s} s for {n_sections} sections of {seg_len_s} s")]
    TrackTooShort {
        duration_s: f64,
        minimum_s: f64,
        n_sections: usize,
        seg_len_s: f64,
    },
    #[error("section count and segment length must be positive")]
    BadSectionSpec,
    #[error("frame count must be positive")]
    BadFrameCount,
    #[error("degenerate frame dimensions {w}x{h}")]
    DegenerateFrame { w: u32, h: u32 },
    #[error("resize target {target} is smaller than the crop size {crop}")]
    ResizeTooSmall { target: u32, crop: u32 },
    #[error("batch size must be at least 2, got {0}")]
    BatchSizeTooSmall(usize),
    #[error("batch size {batch_size} exceeds the {distinct_videos} distinct videos available")]
    UnsatisfiableConstraint {
        batch_size: usize,
        distinct_videos: usize,
    },
    #[error("no valid batch layout found after {attempts} reshuffles (batch size {batch_size})")]
    RetriesExhausted { attempts: usize, batch_size: usize },
}

/// One segment window inside its track section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentWindow {
    pub section_index: usize,
    #[serde(serialize_with = "round6")]
    pub start_s: f64,
    #[serde(serialize_with = "round6")]
    pub end_s: f64,
}

fn round6<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e6).round() / 1e6)
}

fn round6_vec<S: Serializer>(v: &Vec<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&((x * 1e6).round() / 1e6))?;
    }
    seq.end()
}

/// Equally spaced frame timestamps for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    #[serde(serialize_with = "round6_vec")]
    pub timestamps_s: Vec<f64>,
    /// (width, height) at which frames are saved.
    pub resolution: (u32, u32),
}

/// Resize-then-crop instruction for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropPlan {
    pub resize_to: (u32, u32),
    pub crop_origin: (u32, u32),
    pub crop_size: (u32, u32),
}

/// One epoch of batches; entries are row indices into a [`PairedDataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
}

/// Splits `[0, duration)` into `n_sections` equal sections and draws one
/// uniform segment window per section. Windows cannot overlap because each
/// lies inside its own section.
pub fn plan_segments(
    duration_s: f64,
    n_sections: usize,
    seg_len_s: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SegmentWindow>, SamplingError> {
    if n_sections == 0 || !(seg_len_s > 0.0) {
        return Err(SamplingError::BadSectionSpec);
    }
    let minimum = n_sections as f64 * seg_len_s;
    if !(duration_s >= minimum) {
        return Err(SamplingError::TrackTooShort {
            duration_s,
            minimum_s: minimum,
            n_sections,
            seg_len_s,
        });
    }
    let section_len = duration_s / n_sections as f64;
    let slack = section_len - seg_len_s;
    let mut windows = Vec::with_capacity(n_sections);
    for i in 0..n_sections {
        let section_start = i as f64 * section_len;
        let offset = if slack > 0.0 {
            rng.random_range(0.0..slack)
        } else {
            0.0
        };
        let start = section_start + offset;
        windows.push(SegmentWindow {
            section_index: i,
            start_s: start,
            end_s: start + seg_len_s,
        });
    }
    Ok(windows)
}

/// `n_frames` timestamps with constant spacing `(end - start) / n_frames` and
/// a uniform random phase in `[0, spacing)`, so every timestamp stays inside
/// the window.
pub fn plan_frames(
    window: &SegmentWindow,
    n_frames: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FramePlan, SamplingError> {
    if n_frames == 0 {
        return Err(SamplingError::BadFrameCount);
    }
    let spacing = (window.end_s - window.start_s) / n_frames as f64;
    let phase = rng.random_range(0.0..spacing);
    let timestamps_s = (0..n_frames)
        .map(|i| window.start_s + phase + i as f64 * spacing)
        .collect();
    Ok(FramePlan {
        timestamps_s,
        resolution: DEFAULT_FRAME_RESOLUTION,
    })
}

/// Resizes the shorter side to `resize_short_to` (aspect preserved, round
/// half up) and draws a uniform crop origin so the `crop x crop` rectangle
/// stays inside the resized frame.
pub fn plan_crop(
    frame_wh: (u32, u32),
    resize_short_to: u32,
    crop: u32,
    rng: &mut ChaCha8Rng,
) -> Result<CropPlan, SamplingError> {
    let (w, h) = frame_wh;
    if w == 0 || h == 0 {
        return Err(SamplingError::DegenerateFrame { w, h });
    }
    if resize_short_to < crop {
        return Err(SamplingError::ResizeTooSmall {
            target: resize_short_to,
            crop,
        });
    }
    let scale = f64::from(resize_short_to) / f64::from(w.min(h));
    let round_half_up = |v: f64| (v + 0.5).floor() as u32;
    let (new_w, new_h) = if w <= h {
        (resize_short_to, round_half_up(f64::from(h) * scale))
    } else {
        (round_half_up(f64::from(w) * scale), resize_short_to)
    };
    let max_x = new_w - crop;
    let max_y = new_h - crop;
    let x = if max_x > 0 { rng.random_range(0..=max_x) } else { 0 };
    let y = if max_y > 0 { rng.random_range(0..=max_y) } else { 0 };
    Ok(CropPlan {
        resize_to: (new_w, new_h),
        crop_origin: (x, y),
        crop_size: (crop, crop),
    })
}

/// Partitions `0..groups.len()` into batches such that no batch repeats a
/// group, every index appears exactly once, and only the final batch may be
/// short. `groups[i]` is the group (video) of row `i`.
///
/// Greedy with deferral: scan a shuffled order, postponing rows whose group
/// already sits in the current batch; on a layout where a non-final batch
/// comes up short, reshuffle and retry (up to 100 times).
pub fn plan_constrained_batches(
    groups: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>, SamplingError> {
    if batch_size < 2 {
        return Err(SamplingError::BatchSizeTooSmall(batch_size));
    }
    let distinct = {
        let mut g: Vec<usize> = groups.to_vec();
        g.sort_unstable();
        g.dedup();
        g.len()
    };
    if distinct < batch_size {
        return Err(SamplingError::UnsatisfiableConstraint {
            batch_size,
            distinct_videos: distinct,
        });
    }

    let mut order: Vec<usize> = (0..groups.len()).collect();
    for _attempt in 0..BATCH_RESHUFFLE_ATTEMPTS {
        order.shuffle(rng);
        if let Some(batches) = try_layout(groups, &order, batch_size) {
            return Ok(batches);
        }
    }
    Err(SamplingError::RetriesExhausted {
        attempts: BATCH_RESHUFFLE_ATTEMPTS,
        batch_size,
    })
}

fn try_layout(groups: &[usize], order: &[usize], batch_size: usize) -> Option<Vec<Vec<usize>>> {
    let mut remaining: Vec<usize> = order.to_vec();
    let mut batches = Vec::new();
    let mut in_batch = vec![false; groups.iter().copied().max().map_or(0, |m| m + 1)];

    while !remaining.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut deferred = Vec::new();
        for &row in remaining.iter() {
            if batch.len() == batch_size {
                deferred.push(row);
            } else if in_batch[groups[row]] {
                deferred.push(row);
            } else {
                in_batch[groups[row]] = true;
                batch.push(row);
            }
        }
        for &row in &batch {
            in_batch[groups[row]] = false;
        }
        let is_final = deferred.is_empty();
        if batch.len() < batch_size && !is_final {
            return None; // stuck mid-epoch: remaining rows all collide
        }
        batches.push(batch);
        remaining = deferred;
    }
    Some(batches)
}

/// Epoch batch plan over the train split of `dataset`, honoring the
/// distinct-video-per-batch constraint. Returned indices are dataset rows.
pub fn plan_batches(
    dataset: &PairedDataset,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BatchPlan, SamplingError> {
    let rows = dataset.rows_for_split(Split::Train);
    let groups = dataset.video_groups(&rows);
    let batches = plan_constrained_batches(&groups, batch_size, rng)?;
    Ok(BatchPlan {
        batches: batches
            .into_iter()
            .map(|b| b.into_iter().map(|i| rows[i]).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{
        assemble_from_parts, EmbeddingTable, Manifest, ManifestEntry, SegmentId,
    };
    use crate::seeding::stream_rng;
    use ndarray::Array2;
    use std::collections::HashSet;

    #[test]
    fn segments_land_inside_their_sections() {
        let mut rng = stream_rng(42, "segments");
        let windows = plan_segments(180.0, 6, 5.0, &mut rng).unwrap();
        assert_eq!(windows.len(), 6);
        for (i, w) in windows.iter().enumerate() {
            assert_eq!(w.section_index, i);
            assert!(w.start_s >= 30.0 * i as f64);
            assert!(w.start_s <= 30.0 * i as f64 + 25.0);
            assert!((w.end_s - w.start_s - 5.0).abs() < 1e-12);
            assert!(w.end_s <= 30.0 * (i + 1) as f64 + 1e-12);
        }
    }

    #[test]
    fn zero_slack_forces_window_starts() {
        let mut rng = stream_rng(7, "segments");
        let windows = plan_segments(30.0, 6, 5.0, &mut rng).unwrap();
        for (i, w) in windows.iter().enumerate() {
            assert_eq!(w.start_s, 5.0 * i as f64);
        }
    }

    #[test]
    fn short_track_is_rejected() {
        let mut rng = stream_rng(7, "segments");
        match plan_segments(29.0, 6, 5.0, &mut rng) {
            Err(SamplingError::TrackTooShort { minimum_s, .. }) => {
                assert_eq!(minimum_s, 30.0)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frames_are_equally_spaced_inside_window() {
        let mut rng = stream_rng(3, "frames");
        let window = SegmentWindow {
            section_index: 0,
            start_s: 0.0,
            end_s: 5.0,
        };
        let plan = plan_frames(&window, 50, &mut rng).unwrap();
        assert_eq!(plan.timestamps_s.len(), 50);
        assert_eq!(plan.resolution, (768, 432));
        let spacing = plan.timestamps_s[1] - plan.timestamps_s[0];
        assert!((spacing - 0.1).abs() < 1e-12);
        for pair in plan.timestamps_s.windows(2) {
            assert!((pair[1] - pair[0] - spacing).abs() < 1e-9);
        }
        assert!(*plan.timestamps_s.last().unwrap() < window.end_s);
    }

    #[test]
    fn zero_phase_frame_grid_matches_arithmetic() {
        // Phase 0 over [0,5) with 50 frames is the grid 0.0, 0.1, ..., 4.9.
        let window = SegmentWindow {
            section_index: 0,
            start_s: 0.0,
            end_s: 5.0,
        };
        // Hunting for a seed whose first draw lands at exactly zero phase is
        // fragile; verify the grid property instead: ts_i - ts_0 == i * spacing.
        let mut rng = stream_rng(11, "frames");
        let plan = plan_frames(&window, 50, &mut rng).unwrap();
        let spacing = 5.0 / 50.0;
        for (i, ts) in plan.timestamps_s.iter().enumerate() {
            let expect = plan.timestamps_s[0] + i as f64 * spacing;
            assert!((ts - expect).abs() < 1e-9);
        }
        assert!(plan.timestamps_s[0] >= 0.0 && plan.timestamps_s[0] < spacing);
    }

    #[test]
    fn single_frame_is_start_plus_phase() {
        let mut rng = stream_rng(5, "frames");
        let window = SegmentWindow {
            section_index: 2,
            start_s: 10.0,
            end_s: 15.0,
        };
        let plan = plan_frames(&window, 1, &mut rng).unwrap();
        assert_eq!(plan.timestamps_s.len(), 1);
        assert!(plan.timestamps_s[0] >= 10.0 && plan.timestamps_s[0] < 15.0);
    }

    #[test]
    fn crop_of_paper_frame_size() {
        let mut rng = stream_rng(9, "crop");
        let plan = plan_crop((768, 432), 128, 112, &mut rng).unwrap();
        // 432 -> 128, 768 * 128/432 = 227.55... -> 228 (round half up)
        assert_eq!(plan.resize_to, (228, 128));
        assert!(plan.crop_origin.0 <= 116);
        assert!(plan.crop_origin.1 <= 16);
        assert_eq!(plan.crop_size, (112, 112));
    }

    #[test]
    fn exact_fit_crop_is_forced_to_origin() {
        let mut rng = stream_rng(9, "crop");
        let plan = plan_crop((112, 112), 112, 112, &mut rng).unwrap();
        assert_eq!(plan.resize_to, (112, 112));
        assert_eq!(plan.crop_origin, (0, 0));
    }

    #[test]
    fn small_frame_is_upscaled_before_crop() {
        let mut rng = stream_rng(10, "crop");
        let plan = plan_crop((100, 100), 128, 112, &mut rng).unwrap();
        assert_eq!(plan.resize_to, (128, 128));
        assert!(plan.crop_origin.0 <= 16 && plan.crop_origin.1 <= 16);
    }

    #[test]
    fn crop_rejects_degenerate_input() {
        let mut rng = stream_rng(10, "crop");
        assert!(matches!(
            plan_crop((0, 100), 128, 112, &mut rng),
            Err(SamplingError::DegenerateFrame { .. })
        ));
        assert!(matches!(
            plan_crop((100, 100), 64, 112, &mut rng),
            Err(SamplingError::ResizeTooSmall { .. })
        ));
    }

    fn toy_dataset(n_videos: usize, segments: usize) -> crate::dataio::PairedDataset {
        let mut ids = Vec::new();
        let mut entries = Vec::new();
        for v in 0..n_videos {
            for s in 0..segments {
                let vid = format!("v{v:03}");
                ids.push(SegmentId::new(vid.clone(), s as u32));
                entries.push(ManifestEntry {
                    video_id: vid,
                    segment_index: s as u32,
                    split: Split::Train,
                    genre: None,
                    tags: vec![],
                    duration_s: None,
                });
            }
        }
        let n = ids.len();
        let audio = EmbeddingTable::new(
            ids.clone(),
            Array2::from_shape_fn((n, 3), |(i, j)| (i + j) as f32),
        )
        .unwrap();
        let video = EmbeddingTable::new(
            ids,
            Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f32),
        )
        .unwrap();
        assemble_from_parts(audio, video, Manifest { entries }).unwrap()
    }

    #[test]
    fn batches_cover_rows_without_video_repeats() {
        let ds = toy_dataset(20, 6);
        let mut rng = stream_rng(1, "batch");
        let plan = plan_batches(&ds, 8, &mut rng).unwrap();
        let mut seen = HashSet::new();
        for (i, batch) in plan.batches.iter().enumerate() {
            if i + 1 < plan.batches.len() {
                assert_eq!(batch.len(), 8);
            }
            let vids: HashSet<&str> = batch
                .iter()
                .map(|&r| ds.manifest.entries[r].video_id.as_str())
                .collect();
            assert_eq!(vids.len(), batch.len(), "duplicate video in batch {i}");
            for &r in batch {
                assert!(seen.insert(r), "row {r} appears twice");
            }
        }
        assert_eq!(seen.len(), 120);
    }

    #[test]
    fn every_batch_saturates_when_batch_equals_video_count() {
        // Each batch must then contain every video exactly once.
        let ds = toy_dataset(10, 6);
        let mut rng = stream_rng(2, "batch");
        let plan = plan_batches(&ds, 10, &mut rng).unwrap();
        assert_eq!(plan.batches.len(), 6);
        for batch in &plan.batches {
            assert_eq!(batch.len(), 10);
        }
    }

    #[test]
    fn unsatisfiable_constraint_is_reported() {
        let ds = toy_dataset(2, 3);
        let mut rng = stream_rng(3, "batch");
        match plan_batches(&ds, 3, &mut rng) {
            Err(SamplingError::UnsatisfiableConstraint {
                batch_size,
                distinct_videos,
            }) => {
                assert_eq!((batch_size, distinct_videos), (3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn plans_are_deterministic_given_seed() {
        let ds = toy_dataset(12, 4);
        let a = plan_batches(&ds, 5, &mut stream_rng(9, "batch")).unwrap();
        let b = plan_batches(&ds, 5, &mut stream_rng(9, "batch")).unwrap();
        assert_eq!(a, b);
        let w1 = plan_segments(200.0, 6, 5.0, &mut stream_rng(4, "seg")).unwrap();
        let w2 = plan_segments(200.0, 6, 5.0, &mut stream_rng(4, "seg")).unwrap();
        assert_eq!(w1, w2);
    }

    #[test]
    fn json_export_rounds_seconds_to_six_decimals() {
        let w = SegmentWindow {
            section_index: 0,
            start_s: 1.0 / 3.0,
            end_s: 5.0 + 1.0 / 3.0,
        };
        let json = serde_json::to_string(&w).unwrap();
        assert!(json.contains("0.333333"), "{json}");
        assert!(!json.contains("0.3333333"), "{json}");
    }
}
