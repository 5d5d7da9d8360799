use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{linear, InitSpec, Linear, ParamId, ParamStore, Tape, Var};

use super::{BBox, Canvas};

/// Side length of the binary-map lattice.
pub const GRID: usize = 14;

const CONV1_CH: usize = 4;
const CONV2_CH: usize = 8;
// 14 -> 7 -> 4 with 3x3 kernels, stride 2, padding 1
const FLAT: usize = CONV2_CH * 4 * 4;

/// Two-channel occupancy grid, channel-major `[2, 14, 14]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMaps {
    pub data: Vec<f64>,
}

impl BinaryMaps {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * GRID * GRID..(c + 1) * GRID * GRID]
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * GRID + row) * GRID + col]
    }
}

/// Rasterizes two boxes onto a 14x14 lattice spanning their tight union
/// box. A cell is set when its center lies inside the box (edges inclusive).
pub fn spatial_binary_maps(a: &BBox, b: &BBox, canvas: Canvas) -> Result<BinaryMaps> {
    if !a.within(canvas) || !b.within(canvas) {
        return Err(Error::Contract("box outside canvas".into()));
    }
    let u = a.union(b);
    let cw = u.width() / GRID as f64;
    let ch = u.height() / GRID as f64;
    let mut data = vec![0.0; 2 * GRID * GRID];
    for (c, bx) in [a, b].into_iter().enumerate() {
        for row in 0..GRID {
            let y = u.y1 + (row as f64 + 0.5) * ch;
            for col in 0..GRID {
                let x = u.x1 + (col as f64 + 0.5) * cw;
                if bx.contains_point(x, y) {
                    data[(c * GRID + row) * GRID + col] = 1.0;
                }
            }
        }
    }
    Ok(BinaryMaps { data })
}

/// Two 3x3/stride-2 convolutions and two fully connected layers mapping
/// binary maps to a width-`d` relative spatial feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialEncoder {
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    fc1: Linear,
    fc2: Linear,
}

impl SpatialEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv1_w: store.register(
                format!("{name}.conv1.weight"),
                vec![CONV1_CH, 2, 3, 3],
                InitSpec::UniformFanIn,
                rng,
            )?,
            conv1_b: store.register(format!("{name}.conv1.bias"), vec![CONV1_CH], InitSpec::Zeros, rng)?,
            conv2_w: store.register(
                format!("{name}.conv2.weight"),
                vec![CONV2_CH, CONV1_CH, 3, 3],
                InitSpec::UniformFanIn,
                rng,
            )?,
            conv2_b: store.register(format!("{name}.conv2.bias"), vec![CONV2_CH], InitSpec::Zeros, rng)?,
            fc1: Linear::new(store, &format!("{name}.fc1"), FLAT, d, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), d, d, true, rng)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b, self.fc1.weight, self.fc2.weight];
        v.extend(self.fc1.bias);
        v.extend(self.fc2.bias);
        v
    }
}

/// Encodes a `[2, 14, 14]` map array already on the tape.
pub fn encode_spatial(tape: &mut Tape, store: &ParamStore, enc: &SpatialEncoder, maps: Var) -> Result<Var> {
    if tape.shape(maps) != [2, GRID, GRID] {
        return Err(Error::dim(tape.shape(maps), &[2, GRID, GRID], "encode_spatial input"));
    }
    let w1 = tape.param(store, enc.conv1_w);
    let b1 = tape.param(store, enc.conv1_b);
    let h = tape.conv2d(maps, w1, b1, 2, 1)?;
    let h = tape.relu(h);
    let w2 = tape.param(store, enc.conv2_w);
    let b2 = tape.param(store, enc.conv2_b);
    let h = tape.conv2d(h, w2, b2, 2, 1)?;
    let h = tape.relu(h);
    // conv output is already row-major; concat of one array flattens it
    let flat = tape.concat(&[h]);
    let h = linear(tape, store, &enc.fc1, flat)?;
    let h = tape.relu(h);
    linear(tape, store, &enc.fc2, h)
}

impl BinaryMaps {
    pub fn to_tape(&self, tape: &mut Tape) -> Var {
        tape.constant(vec![2, GRID, GRID], self.data.clone())
            .expect("binary maps have fixed size")
    }
}
