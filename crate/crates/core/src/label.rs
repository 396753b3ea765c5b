use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{Acceleration, MaskPattern};

/// Number of distinct (pattern, level) acquisition labels.
pub const N_LABELS: usize = 24;

/// Conditioning label of one encoder input: which pattern and which pyramid level produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AcquisitionLabel {
    pub pattern: MaskPattern,
    pub acceleration: Acceleration,
}

impl AcquisitionLabel {
    pub fn new(pattern: MaskPattern, acceleration: Acceleration) -> Self {
        Self {
            pattern,
            acceleration,
        }
    }

    /// `pattern * 6 + level_index`.
    pub fn id(self) -> usize {
        self.pattern.code() as usize * 6 + self.acceleration.level_index()
    }

    pub fn from_id(id: usize) -> Result<Self> {
        if id >= N_LABELS {
            return Err(Error::InvalidArgument(format!("label id {id} out of range")));
        }
        Ok(Self {
            pattern: MaskPattern::from_code((id / 6) as u32)?,
            acceleration: Acceleration::from_level_index(id % 6).unwrap(),
        })
    }
}
