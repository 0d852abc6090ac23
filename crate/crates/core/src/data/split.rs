use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Purpose of a contiguous block of timestamps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    /// Zeroed region that never produces windows.
    ZeroPad,
    Validation,
    Test,
}

/// Absolute row range `[start, end)` with a role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub role: Role,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Ordered fractional layout of a timeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitLayout {
    pub segments: Vec<(Role, f64)>,
}

impl Default for SplitLayout {
    fn default() -> Self {
        Self::chronological(0.70, 0.10, 0.20)
    }
}

impl SplitLayout {
    pub fn chronological(train: f64, validation: f64, test: f64) -> Self {
        Self {
            segments: vec![(Role::Train, train), (Role::Validation, validation), (Role::Test, test)],
        }
    }

    /// 35% train, 35% excluded padding, 10% validation, 20% test.
    pub fn pad_after_train() -> Self {
        Self {
            segments: vec![
                (Role::Train, 0.35),
                (Role::ZeroPad, 0.35),
                (Role::Validation, 0.10),
                (Role::Test, 0.20),
            ],
        }
    }

    /// 35% excluded padding, 35% train, 10% validation, 20% test.
    pub fn pad_before_train() -> Self {
        Self {
            segments: vec![
                (Role::ZeroPad, 0.35),
                (Role::Train, 0.35),
                (Role::Validation, 0.10),
                (Role::Test, 0.20),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config("split layout has no segments".into()));
        }
        for &(role, f) in &self.segments {
            if !(f.is_finite() && f >= 0.0) {
                return Err(Error::Config(format!("{role:?} fraction {f} is not a nonnegative number")));
            }
        }
        let sum: f64 = self.segments.iter().map(|s| s.1).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
        }
        for role in [Role::Train, Role::Validation, Role::Test] {
            if !self.segments.iter().any(|&(r, f)| r == role && f > 0.0) {
                return Err(Error::Config(format!("split layout has no {role:?} segment")));
            }
        }
        Ok(())
    }

    /// Row ranges for a timeline of `t` rows. Each segment holds
    /// `floor(fraction * t)` rows; the final segment takes the remainder.
    pub fn boundaries(&self, t: usize) -> Result<Vec<Segment>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.segments.len());
        let mut start = 0;
        for (i, &(role, f)) in self.segments.iter().enumerate() {
            let end = if i + 1 == self.segments.len() {
                t
            } else {
                start + (f * t as f64 + 1e-9).floor() as usize
            };
            let end = end.clamp(start, t);
            if end == start && f > 0.0 {
                return Err(Error::Config(format!("{role:?} segment is empty for {t} rows")));
            }
            if end > start {
                out.push(Segment { role, start, end });
            }
            start = end;
        }
        Ok(out)
    }

    /// Rejects layouts whose non-padding segments cannot hold one `(L, H)` window.
    pub fn validate_for_window(&self, t: usize, lookback: usize, horizon: usize) -> Result<Vec<Segment>> {
        let segs = self.boundaries(t)?;
        for s in &segs {
            if s.role != Role::ZeroPad && s.len() < lookback + horizon {
                return Err(Error::Config(format!(
                    "{:?} segment has {} rows, fewer than lookback + horizon = {}",
                    s.role,
                    s.len(),
                    lookback + horizon
                )));
            }
        }
        Ok(segs)
    }
}
