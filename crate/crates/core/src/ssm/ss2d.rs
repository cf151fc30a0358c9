//! Four-direction 2-D selective scan.
//!
//! An `H×W×D` map is read in four token orders (row-major forward and
//! backward, column-major forward and backward). Each order runs its own
//! selective scan; outputs are scattered back to grid positions and summed
//! in the fixed order of [`ScanDirection::ALL`].

use rayon::prelude::*;

use super::selective::{macs_per_token, selective_scan_counted, SelectiveSsmParams};
use crate::error::{shape_err, Result};
use crate::io::Bundle;
use crate::tensor::{SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDirection {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowForward,
        ScanDirection::RowBackward,
        ScanDirection::ColForward,
        ScanDirection::ColBackward,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanDirection::RowForward => "row_fwd",
            ScanDirection::RowBackward => "row_bwd",
            ScanDirection::ColForward => "col_fwd",
            ScanDirection::ColBackward => "col_bwd",
        }
    }

    /// Grid position (row-major index) of the `k`-th token in this order.
    fn position(self, k: usize, h: usize, w: usize) -> usize {
        let n = h * w;
        let col_major = |j: usize| (j % h) * w + j / h;
        match self {
            ScanDirection::RowForward => k,
            ScanDirection::RowBackward => n - 1 - k,
            ScanDirection::ColForward => col_major(k),
            ScanDirection::ColBackward => col_major(n - 1 - k),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ss2dParams {
    dirs: [SelectiveSsmParams; 4],
}

impl Ss2dParams {
    /// Parameters in the order of [`ScanDirection::ALL`].
    pub fn new(dirs: [SelectiveSsmParams; 4]) -> Result<Self> {
        let (d, n) = (dirs[0].channels(), dirs[0].state_size());
        if dirs.iter().any(|p| p.channels() != d || p.state_size() != n) {
            return shape_err("all four scan directions must share channels and state size");
        }
        Ok(Self { dirs })
    }

    pub fn random(channels: usize, state_size: usize, rng: &mut SeededRng) -> Result<Self> {
        let mut make = || SelectiveSsmParams::random(channels, state_size, rng);
        Self::new([make()?, make()?, make()?, make()?])
    }

    pub fn direction(&self, dir: ScanDirection) -> &SelectiveSsmParams {
        &self.dirs[dir as usize]
    }

    pub fn channels(&self) -> usize {
        self.dirs[0].channels()
    }

    pub fn state_size(&self) -> usize {
        self.dirs[0].state_size()
    }

    /// The same parameters with row and column directions exchanged.
    pub fn transposed(&self) -> Self {
        let [rf, rb, cf, cb] = self.dirs.clone();
        Self { dirs: [cf, cb, rf, rb] }
    }

    pub fn macs_per_token(&self) -> u64 {
        4 * macs_per_token(self.channels(), self.state_size())
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::new();
        for dir in ScanDirection::ALL {
            b.absorb(dir.name(), self.direction(dir).to_bundle());
        }
        b
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let load = |dir: ScanDirection| SelectiveSsmParams::from_bundle(&b.scoped(dir.name()));
        Self::new([
            load(ScanDirection::RowForward)?,
            load(ScanDirection::RowBackward)?,
            load(ScanDirection::ColForward)?,
            load(ScanDirection::ColBackward)?,
        ])
    }
}

pub fn ss2d(f: &Tensor, p: &Ss2dParams) -> Result<Tensor> {
    ss2d_counted(f, p).map(|(y, _)| y)
}

/// [`ss2d`] plus its multiply-accumulate count, `4·H·W·(D² + 7ND)`.
/// The merge is additions only and is not counted.
pub fn ss2d_counted(f: &Tensor, p: &Ss2dParams) -> Result<(Tensor, u64)> {
    let (h, w, d) = match f.shape() {
        &[h, w, d] if d == p.channels() => (h, w, d),
        s => return shape_err(format!("ss2d expects H×W×{} input, got {s:?}", p.channels())),
    };
    let n = h * w;
    let per_dir: Vec<(Tensor, u64)> = ScanDirection::ALL
        .par_iter()
        .map(|&dir| {
            let mut seq = Vec::with_capacity(n * d);
            for k in 0..n {
                seq.extend_from_slice(f.outer_slice_2d(dir.position(k, h, w), d));
            }
            let seq = Tensor::from_parts(vec![n, d], seq);
            selective_scan_counted(&seq, p.direction(dir))
        })
        .collect::<Result<_>>()?;

    let mut out = vec![0.0; n * d];
    let mut macs = 0;
    for (dir, (y, m)) in ScanDirection::ALL.iter().zip(&per_dir) {
        macs += m;
        for k in 0..n {
            let pos = dir.position(k, h, w);
            for (o, &v) in out[pos * d..(pos + 1) * d].iter_mut().zip(y.outer_slice(k)) {
                *o += v;
            }
        }
    }
    Ok((Tensor::from_parts(vec![h, w, d], out), macs))
}

impl Tensor {
    /// Token `pos` of an `H×W×D` map viewed as `(H·W)×D`.
    pub(crate) fn outer_slice_2d(&self, pos: usize, d: usize) -> &[f64] {
        &self.data()[pos * d..(pos + 1) * d]
    }
}
