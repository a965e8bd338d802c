use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// Marks a pooling window in which no input spiked.
pub const POOL_NO_SPIKE: u32 = u32::MAX;

/// 2x2, stride-2 max pooling over `[channel][y][x]` spikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoolGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl PoolGeometry {
    pub fn validate(&self) -> Result<()> {
        if !self.height.is_multiple_of(2) || !self.width.is_multiple_of(2) || self.height == 0 || self.width == 0 {
            return Err(Error::OddPoolDims { height: self.height, width: self.width });
        }
        if self.channels == 0 {
            return Err(Error::InvalidConfig("pooling needs at least one channel".into()));
        }
        Ok(())
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.channels * (self.height / 2) * (self.width / 2)
    }

    /// Input indices of the window feeding output `o`, row-major.
    #[inline]
    pub fn window(&self, o: usize) -> [usize; 4] {
        let (ph, pw) = (self.height / 2, self.width / 2);
        let c = o / (ph * pw);
        let (py, px) = ((o % (ph * pw)) / pw, o % pw);
        let base = (c * self.height + 2 * py) * self.width + 2 * px;
        [base, base + 1, base + self.width, base + self.width + 1]
    }

    /// Pools one timestep, recording the first spiking input of each window
    /// (or [`POOL_NO_SPIKE`]).
    pub(crate) fn select(&self, spikes: &[u8], out: &mut [u8], selected: &mut [u32]) {
        for o in 0..self.out_len() {
            let hit = self.window(o).into_iter().find(|&i| spikes[i] != 0);
            out[o] = hit.is_some() as u8;
            selected[o] = hit.map_or(POOL_NO_SPIKE, |i| i as u32);
        }
    }
}

/// Per-window OR of binary spikes.
pub fn maxpool_forward(spikes: &[u8], geometry: &PoolGeometry) -> Result<Vec<u8>> {
    geometry.validate()?;
    if spikes.len() != geometry.in_len() {
        return Err(shape_err(geometry.in_len(), spikes.len()));
    }
    let mut out = vec![0; geometry.out_len()];
    let mut selected = vec![0; geometry.out_len()];
    geometry.select(spikes, &mut out, &mut selected);
    Ok(out)
}
