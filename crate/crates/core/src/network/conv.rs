use alloc::vec::Vec;

use rand::Rng;

use super::{Drives, ThetaInit, WeightPlanes};
use crate::error::{shape_err, Error, Result};
use crate::neuron::QlifConfig;

/// Valid (no padding), stride-1 cross-correlation geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 1 - self.kernel
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.filters * self.out_height() * self.out_width()
    }

    /// Synapses per output neuron.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn plane_shape(&self) -> [usize; 4] {
        [self.filters, self.in_channels, self.kernel, self.kernel]
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.filters == 0 || self.kernel == 0 {
            return Err(Error::InvalidConfig("convolution sizes must be >= 1".into()));
        }
        if self.height < self.kernel || self.width < self.kernel {
            return Err(shape_err(
                alloc::format!("input at least {0}x{0}", self.kernel),
                alloc::format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn weight_index(&self, f: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((f * self.in_channels + c) * self.kernel + ky) * self.kernel + kx
    }

    /// Calls `visit(ky, kx, output_pixel)` for every output pixel whose
    /// receptive field contains input pixel `(iy, ix)`.
    #[inline]
    pub(crate) fn for_each_receptor(&self, iy: usize, ix: usize, mut visit: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        for ky in 0..self.kernel {
            let Some(oy) = iy.checked_sub(ky) else { break };
            if oy >= oh {
                continue;
            }
            for kx in 0..self.kernel {
                let Some(ox) = ix.checked_sub(kx) else { break };
                if ox >= ow {
                    continue;
                }
                visit(ky, kx, oy * ow + ox);
            }
        }
    }

    /// Splits a flat input index into `(channel, y, x)`.
    #[inline]
    pub(crate) fn input_coords(&self, idx: usize) -> (usize, usize, usize) {
        let plane = self.height * self.width;
        (idx / plane, (idx % plane) / self.width, idx % self.width)
    }
}

/// Convolutional QLIF layer; planes are `[filters, in_channels, k, k]`,
/// outputs are laid out `[filter][y][x]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvLayer {
    pub geometry: ConvGeometry,
    pub planes: WeightPlanes,
    pub neuron: QlifConfig,
}

impl ConvLayer {
    pub fn init<R: Rng + ?Sized>(geometry: ConvGeometry, neuron: QlifConfig, theta_init: ThetaInit, rng: &mut R) -> Self {
        let planes = WeightPlanes::init(&geometry.plane_shape(), geometry.fan_in(), neuron.t1, theta_init, rng);
        Self { geometry, planes, neuron }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.planes.shape != self.geometry.plane_shape() {
            return Err(shape_err(
                alloc::format!("{:?}", self.geometry.plane_shape()),
                alloc::format!("{:?}", self.planes.shape),
            ));
        }
        self.planes.validate()?;
        self.neuron.validate()
    }

    pub(crate) fn tau_kernel_sums(&self) -> Vec<f64> {
        kernel_sums(&self.planes.tau, self.geometry.filters)
    }

    pub(crate) fn drives_sparse(&self, active: &[usize], tau_ksum: &[f64], drives: &mut Drives, field: &mut Vec<u32>) {
        sparse_drives(&self.geometry, &self.planes, active, tau_ksum, drives, field);
    }
}

fn kernel_sums(plane: &[f64], filters: usize) -> Vec<f64> {
    let per = plane.len() / filters;
    plane.chunks_exact(per).map(|k| k.iter().sum()).collect()
}

fn sparse_drives(
    g: &ConvGeometry,
    planes: &WeightPlanes,
    active: &[usize],
    tau_ksum: &[f64],
    drives: &mut Drives,
    field: &mut Vec<u32>,
) {
    let pixels = g.out_height() * g.out_width();
    let n = g.filters * pixels;
    drives.theta.clear();
    drives.theta.resize(n, 0.0);
    drives.tau_raw.clear();
    for &ks in tau_ksum {
        drives.tau_raw.extend(core::iter::repeat_n(ks, pixels));
    }
    field.clear();
    field.resize(pixels, 0);
    for &idx in active {
        let (c, iy, ix) = g.input_coords(idx);
        g.for_each_receptor(iy, ix, |ky, kx, o| {
            field[o] += 1;
            for f in 0..g.filters {
                let w = g.weight_index(f, c, ky, kx);
                drives.theta[f * pixels + o] += planes.theta[w];
                drives.tau_raw[f * pixels + o] -= planes.tau[w];
            }
        });
    }
    let inv = 1.0 / g.fan_in() as f64;
    for t in drives.tau_raw.iter_mut() {
        *t *= inv;
    }
    drives.x_eff.clear();
    for _ in 0..g.filters {
        drives.x_eff.extend(field.iter().map(|&c| (c > 0) as u8));
    }
}

/// Convolutional aggregation of one timestep of `[channel][y][x]` spikes.
pub fn conv_forward(spikes_in: &[u8], geometry: &ConvGeometry, planes: &WeightPlanes) -> Result<Drives> {
    geometry.validate()?;
    if planes.shape != geometry.plane_shape() {
        return Err(shape_err(alloc::format!("{:?}", geometry.plane_shape()), alloc::format!("{:?}", planes.shape)));
    }
    if spikes_in.len() != geometry.in_len() {
        return Err(shape_err(geometry.in_len(), spikes_in.len()));
    }
    let active: Vec<usize> = spikes_in.iter().enumerate().filter(|(_, &s)| s != 0).map(|(i, _)| i).collect();
    let ksum = kernel_sums(&planes.tau, geometry.filters);
    let mut drives = Drives::default();
    let mut field = Vec::new();
    sparse_drives(geometry, planes, &active, &ksum, &mut drives, &mut field);
    Ok(drives)
}
