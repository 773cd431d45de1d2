//! Dataset types, the synthetic dual-plane scene simulator, HIBER-layout
//! directory IO, and sequence windowing.

pub mod hiber;
pub mod sim;

use crate::error::{Error, Result};
use crate::num::Scalar;
use ndarray::Array2;

/// Frame count of a complete HIBER group.
pub const HIBER_GROUP_FRAMES: usize = 590;

/// One frame's horizontal (plan-view) and vertical (side-view) RF heatmaps.
#[derive(Debug, Clone)]
pub struct HeatmapPair<T> {
    pub horizontal: Array2<T>,
    pub vertical: Array2<T>,
    pub frame_index: usize,
}

impl<T: Scalar> HeatmapPair<T> {
    /// Heatmap invariant: every cell in [0, 1].
    pub fn validate_range(&self) -> Result<()> {
        for (name, grid) in [("horizontal", &self.horizontal), ("vertical", &self.vertical)] {
            for &v in grid.iter() {
                if !(v >= T::zero() && v <= T::one()) {
                    return Err(Error::Data(format!(
                        "{name} heatmap value {v} outside [0, 1] at frame {}",
                        self.frame_index
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Binary per-pixel silhouette labels on the image plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilhouetteMask {
    pub labels: Array2<u8>,
    pub frame_index: usize,
}

impl SilhouetteMask {
    pub fn validate_binary(&self) -> Result<()> {
        for &v in self.labels.iter() {
            if v > 1 {
                return Err(Error::Data(format!(
                    "mask value {v} is not binary at frame {}",
                    self.frame_index
                )));
            }
        }
        Ok(())
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }
}

/// One aligned (heatmaps, mask) observation.
#[derive(Debug, Clone)]
pub struct Frame<T> {
    pub heatmaps: HeatmapPair<T>,
    pub mask: SilhouetteMask,
}

/// An ordered run of frames from one group.
#[derive(Debug, Clone)]
pub struct SequenceSample<T> {
    pub frames: Vec<Frame<T>>,
    pub group_id: String,
    pub person_count: usize,
}

impl<T> SequenceSample<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Result of slicing a group into fixed-length windows.
#[derive(Debug)]
pub struct WindowSet<T> {
    pub windows: Vec<SequenceSample<T>>,
    pub dropped_frames: usize,
    pub dropped_tails: usize,
}

/// Sliding windows of length `n` with the given stride. Windows never span
/// group boundaries because the input is a single group's frame run; short
/// tails are dropped and counted.
pub fn make_windows<T: Scalar>(
    sample: &SequenceSample<T>,
    n: usize,
    stride: usize,
) -> Result<WindowSet<T>> {
    if n == 0 || stride == 0 {
        return Err(Error::Config("window length and stride must be positive".into()));
    }
    let total = sample.frames.len();
    let count = if total >= n { (total - n) / stride + 1 } else { 0 };
    let covered = if count > 0 { (count - 1) * stride + n } else { 0 };
    let dropped = total - covered;
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        windows.push(SequenceSample {
            frames: sample.frames[start..start + n].to_vec(),
            group_id: sample.group_id.clone(),
            person_count: sample.person_count,
        });
    }
    Ok(WindowSet {
        windows,
        dropped_frames: dropped,
        dropped_tails: usize::from(dropped > 0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn dummy_sample(len: usize) -> SequenceSample<f32> {
        let frames = (0..len)
            .map(|i| Frame {
                heatmaps: HeatmapPair {
                    horizontal: Array2::zeros((2, 2)),
                    vertical: Array2::zeros((2, 2)),
                    frame_index: i,
                },
                mask: SilhouetteMask {
                    labels: Array2::zeros((2, 2)),
                    frame_index: i,
                },
            })
            .collect();
        SequenceSample {
            frames,
            group_id: "g000".into(),
            person_count: 1,
        }
    }

    #[test]
    fn full_group_window_count() {
        let ws = make_windows(&dummy_sample(590), 12, 12).unwrap();
        assert_eq!(ws.windows.len(), 49);
        assert_eq!(ws.dropped_frames, 2);
        assert_eq!(ws.dropped_tails, 1);
        // conservation: N * windows + dropped = total
        assert_eq!(12 * ws.windows.len() + ws.dropped_frames, 590);
    }

    #[test]
    fn unit_windows_cover_every_frame() {
        let ws = make_windows(&dummy_sample(17), 1, 1).unwrap();
        assert_eq!(ws.windows.len(), 17);
        assert_eq!(ws.dropped_frames, 0);
        assert_eq!(ws.dropped_tails, 0);
        for (i, w) in ws.windows.iter().enumerate() {
            assert_eq!(w.frames[0].mask.frame_index, i);
        }
    }

    #[test]
    fn short_group_yields_no_windows() {
        let ws = make_windows(&dummy_sample(11), 12, 12).unwrap();
        assert!(ws.windows.is_empty());
        assert_eq!(ws.dropped_frames, 11);
        assert_eq!(ws.dropped_tails, 1);
    }

    #[test]
    fn windowing_conserves_frames_at_many_lengths() {
        for total in [0usize, 1, 5, 12, 13, 24, 100, 590] {
            for n in [1usize, 4, 12] {
                let ws = make_windows(&dummy_sample(total), n, n).unwrap();
                assert_eq!(
                    n * ws.windows.len() + ws.dropped_frames,
                    total,
                    "total={total} n={n}"
                );
            }
        }
    }
}
