//! Bounded FIFO of past egocentric frames and their camera poses.
//!
//! One [`PoseBuffer`] owns the write side; any number of [`BufferReader`]s
//! take point-in-time [`BufferSnapshot`]s without blocking the writer. Each
//! admission publishes a fresh snapshot (a vector of `Arc` handles, so no
//! image data is copied).

use std::collections::VecDeque;
use std::sync::Arc;

use arc_swap::ArcSwap;
use image::RgbImage;
use thiserror::Error;

use crate::geom::Pose;

/// Buffer length used throughout the system unless configured otherwise.
pub const DEFAULT_CAPACITY: usize = 100;
/// Minimum camera-center displacement (SLAM units) for a frame to be admitted.
pub const DEFAULT_POSE_THRESHOLD: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BufferError {
    #[error("buffer capacity must be at least 2, got {0}")]
    Capacity(usize),
    #[error("pose threshold must be finite and non-negative, got {0}")]
    Threshold(f64),
    #[error("image is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    ImageSize {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("no frames buffered")]
    NoData,
    #[error("EOB distance must be at least 1, got {0}")]
    InvalidDistance(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferConfig {
    pub capacity: usize,
    pub pose_threshold: f64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_CAPACITY,
            pose_threshold: DEFAULT_POSE_THRESHOLD,
        }
    }
}

impl BufferConfig {
    pub fn new(capacity: usize, pose_threshold: f64) -> Result<Self, BufferError> {
        let cfg = Self {
            capacity,
            pose_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BufferError> {
        if self.capacity < 2 {
            return Err(BufferError::Capacity(self.capacity));
        }
        if !(self.pose_threshold >= 0.0) || !self.pose_threshold.is_finite() {
            return Err(BufferError::Threshold(self.pose_threshold));
        }
        Ok(())
    }
}

/// One admitted (pose, image) pair.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub seq: u64,
    pub pose: Pose,
    pub image: Arc<RgbImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfferOutcome {
    Admitted { seq: u64, evicted: Option<u64> },
    RejectedStatic,
}

impl OfferOutcome {
    pub fn is_admitted(&self) -> bool {
        matches!(self, Self::Admitted { .. })
    }
}

/// Immutable view of the buffer, oldest record first.
#[derive(Debug, Clone, Default)]
pub struct BufferSnapshot {
    records: Vec<Arc<FrameRecord>>,
}

/// A reference frame chosen `distance` admissions before the current one.
#[derive(Debug, Clone)]
pub struct ReferenceSelection {
    pub record: Arc<FrameRecord>,
    /// Index in the snapshot, oldest first.
    pub index: usize,
    /// The requested distance reached past the oldest record.
    pub clamped: bool,
}

impl BufferSnapshot {
    pub fn from_records(records: Vec<Arc<FrameRecord>>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[Arc<FrameRecord>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Index of the newest record.
    pub fn current_index(&self) -> Option<usize> {
        self.records.len().checked_sub(1)
    }

    pub fn current(&self) -> Option<&Arc<FrameRecord>> {
        self.records.last()
    }

    pub fn oldest(&self) -> Option<&Arc<FrameRecord>> {
        self.records.first()
    }

    pub fn by_seq(&self, seq: u64) -> Option<&Arc<FrameRecord>> {
        let first = self.records.first()?.seq;
        let idx = usize::try_from(seq.checked_sub(first)?).ok()?;
        self.records.get(idx).filter(|r| r.seq == seq)
    }

    /// The record `distance` admitted frames before the current one, or the
    /// oldest record (flagged `clamped`) when the buffer is not that deep.
    pub fn select_reference(&self, distance: usize) -> Result<ReferenceSelection, BufferError> {
        if distance == 0 {
            return Err(BufferError::InvalidDistance(distance));
        }
        let current = self.current_index().ok_or(BufferError::NoData)?;
        let (index, clamped) = if distance >= self.records.len() {
            (0, true)
        } else {
            (current - distance, false)
        };
        Ok(ReferenceSelection {
            record: Arc::clone(&self.records[index]),
            index,
            clamped,
        })
    }

    /// Approximate heap footprint of the frames this snapshot references.
    pub fn memory_bytes(&self) -> usize {
        self.records
            .iter()
            .map(|r| std::mem::size_of::<FrameRecord>() + r.image.as_raw().capacity())
            .sum()
    }
}

/// Read side of a [`PoseBuffer`]; cheap to clone and send across threads.
#[derive(Debug, Clone)]
pub struct BufferReader {
    published: Arc<ArcSwap<BufferSnapshot>>,
}

impl BufferReader {
    /// Point-in-time snapshot; never blocks on the writer.
    pub fn snapshot(&self) -> Arc<BufferSnapshot> {
        self.published.load_full()
    }
}

/// Write side of the frame buffer.
#[derive(Debug)]
pub struct PoseBuffer {
    config: BufferConfig,
    width: u32,
    height: u32,
    records: VecDeque<Arc<FrameRecord>>,
    last_admitted: Option<nalgebra::Vector3<f64>>,
    next_seq: u64,
    published: Arc<ArcSwap<BufferSnapshot>>,
}

impl PoseBuffer {
    /// `width`/`height` are the frame dimensions every image must match.
    pub fn new(config: BufferConfig, width: u32, height: u32) -> Result<Self, BufferError> {
        config.validate()?;
        Ok(Self {
            config,
            width,
            height,
            records: VecDeque::with_capacity(config.capacity),
            last_admitted: None,
            next_seq: 0,
            published: Arc::new(ArcSwap::from_pointee(BufferSnapshot::default())),
        })
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn reader(&self) -> BufferReader {
        BufferReader {
            published: Arc::clone(&self.published),
        }
    }

    pub fn snapshot(&self) -> Arc<BufferSnapshot> {
        self.published.load_full()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Admits the frame when the buffer is empty or the camera moved at least
    /// `pose_threshold` since the last admitted frame. At capacity the oldest
    /// frame is evicted.
    pub fn offer(&mut self, pose: Pose, image: Arc<RgbImage>) -> Result<OfferOutcome, BufferError> {
        if image.width() != self.width || image.height() != self.height {
            return Err(BufferError::ImageSize {
                got_w: image.width(),
                got_h: image.height(),
                want_w: self.width,
                want_h: self.height,
            });
        }
        if let Some(last) = &self.last_admitted {
            if (pose.translation() - last).norm() < self.config.pose_threshold {
                return Ok(OfferOutcome::RejectedStatic);
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.last_admitted = Some(*pose.translation());
        let evicted = if self.records.len() == self.config.capacity {
            self.records.pop_front().map(|r| r.seq)
        } else {
            None
        };
        self.records.push_back(Arc::new(FrameRecord { seq, pose, image }));
        self.publish();
        Ok(OfferOutcome::Admitted { seq, evicted })
    }

    fn publish(&self) {
        let snapshot = BufferSnapshot {
            records: self.records.iter().cloned().collect(),
        };
        self.published.store(Arc::new(snapshot));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    fn pose_at(z: f64) -> Pose {
        Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, z), 0.0).unwrap()
    }

    fn image() -> Arc<RgbImage> {
        Arc::new(RgbImage::new(4, 3))
    }

    fn buffer(capacity: usize) -> PoseBuffer {
        PoseBuffer::new(BufferConfig::new(capacity, 0.001).unwrap(), 4, 3).unwrap()
    }

    #[test]
    fn first_frame_admitted() {
        let mut b = buffer(100);
        assert!(b.offer(pose_at(0.0), image()).unwrap().is_admitted());
    }

    #[test]
    fn small_motion_rejected() {
        let mut b = buffer(100);
        b.offer(pose_at(0.0), image()).unwrap();
        assert_eq!(b.offer(pose_at(0.0005), image()).unwrap(), OfferOutcome::RejectedStatic);
        assert!(b.offer(pose_at(0.001), image()).unwrap().is_admitted());
    }

    #[test]
    fn eviction_at_capacity() {
        let mut b = buffer(100);
        for i in 0..100 {
            b.offer(pose_at(i as f64 * 0.01), image()).unwrap();
        }
        let out = b.offer(pose_at(1.0), image()).unwrap();
        assert_eq!(out, OfferOutcome::Admitted { seq: 100, evicted: Some(0) });
        assert_eq!(b.len(), 100);
        assert_eq!(b.snapshot().oldest().unwrap().seq, 1);
    }

    #[test]
    fn image_size_checked() {
        let mut b = buffer(10);
        let err = b.offer(pose_at(0.0), Arc::new(RgbImage::new(5, 3))).unwrap_err();
        assert!(matches!(err, BufferError::ImageSize { .. }));
    }

    #[test]
    fn capacity_validated() {
        assert!(BufferConfig::new(1, 0.0).is_err());
        assert!(BufferConfig::new(2, -1.0).is_err());
    }

    #[test]
    fn empty_snapshot() {
        let b = buffer(10);
        let s = b.snapshot();
        assert!(s.is_empty());
        assert_eq!(s.current_index(), None);
        assert_eq!(s.select_reference(1).unwrap_err(), BufferError::NoData);
    }

    #[test]
    fn snapshot_after_three() {
        let mut b = buffer(10);
        for i in 0..3 {
            b.offer(pose_at(i as f64), image()).unwrap();
        }
        let s = b.reader().snapshot();
        assert_eq!(s.len(), 3);
        assert_eq!(s.current().unwrap().seq, 2);
    }

    #[test]
    fn snapshot_is_frozen() {
        let mut b = buffer(4);
        for i in 0..3 {
            b.offer(pose_at(i as f64), image()).unwrap();
        }
        let s = b.snapshot();
        let seqs: Vec<_> = s.records().iter().map(|r| r.seq).collect();
        for i in 3..8 {
            b.offer(pose_at(i as f64), image()).unwrap();
        }
        assert_eq!(s.records().iter().map(|r| r.seq).collect::<Vec<_>>(), seqs);
        assert_eq!(b.snapshot().current().unwrap().seq, 7);
    }

    #[test]
    fn reference_selection() {
        let mut b = buffer(100);
        for i in 0..100 {
            b.offer(pose_at(i as f64), image()).unwrap();
        }
        let s = b.snapshot();
        let r = s.select_reference(70).unwrap();
        assert_eq!((r.index, r.clamped), (29, false));
        let r = s.select_reference(1).unwrap();
        assert_eq!((r.index, r.record.seq), (98, 98));
        let r = s.select_reference(500).unwrap();
        assert_eq!((r.index, r.clamped), (0, true));
        let r = s.select_reference(99).unwrap();
        assert_eq!((r.index, r.clamped), (0, false));
        assert_eq!(s.select_reference(0).unwrap_err(), BufferError::InvalidDistance(0));
    }

    #[test]
    fn by_seq_lookup() {
        let mut b = buffer(3);
        for i in 0..5 {
            b.offer(pose_at(i as f64), image()).unwrap();
        }
        let s = b.snapshot();
        assert!(s.by_seq(1).is_none());
        assert_eq!(s.by_seq(3).unwrap().seq, 3);
    }

    proptest! {
        #[test]
        fn buffer_invariants(capacity in 2usize..20, steps in prop::collection::vec(0.0..0.003f64, 1..80)) {
            let mut b = buffer(capacity);
            let mut z = 0.0;
            for dz in steps {
                z += dz;
                b.offer(pose_at(z), image()).unwrap();
                prop_assert!(b.len() <= capacity);
            }
            let s = b.snapshot();
            for w in s.records().windows(2) {
                prop_assert_eq!(w[1].seq, w[0].seq + 1);
                let d = (w[1].pose.translation() - w[0].pose.translation()).norm();
                prop_assert!(d >= 0.001 - 1e-15);
            }
        }
    }
}
