use alloc::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// One optimizer step. Stage 1 leaves `t` and `rigidity` at zero; stage 2
/// leaves `ce` at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: u8,
    pub t: usize,
    pub step: u64,
    pub total: f64,
    pub ce: f64,
    pub l1: f64,
    pub ssim: f64,
    pub rigidity: f64,
    pub active_views: usize,
    pub skipped: bool,
}

impl LossRecord {
    pub fn photometric(&self, lambda_l1: f64, lambda_ssim: f64) -> f64 {
        lambda_l1 * self.l1 + lambda_ssim * self.ssim
    }
}

/// Bounded history; the oldest records fall off first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub capacity: usize,
    pub records: VecDeque<LossRecord>,
}

impl LossHistory {
    pub fn new(capacity: usize) -> Self {
        LossHistory {
            capacity: capacity.max(1),
            records: VecDeque::new(),
        }
    }

    pub fn push(&mut self, r: LossRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(r);
    }

    pub fn iter(&self) -> impl Iterator<Item = &LossRecord> {
        self.records.iter()
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.records.back()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: &LossHistory) {
        for r in other.iter() {
            self.push(*r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_drops_oldest() {
        let mut h = LossHistory::new(2);
        for step in 0..3 {
            h.push(LossRecord {
                stage: 1,
                t: 0,
                step,
                total: 0.0,
                ce: 0.0,
                l1: 0.0,
                ssim: 0.0,
                rigidity: 0.0,
                active_views: 1,
                skipped: false,
            });
        }
        assert_eq!(h.len(), 2);
        assert_eq!(h.records[0].step, 1);
    }
}
