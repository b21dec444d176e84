use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{domain, Error, Result};
use crate::mask::{BiasMode, TokenGrid};
use crate::route::SplitMix64;
use crate::scalar::Scalar;
use crate::sphere::ErpGrid;

use super::matrix::Matrix;

pub const PWXB_MAGIC: &[u8; 4] = b"PWXB";
pub const PWXB_VERSION: u16 = 1;

/// Gain applied to the orthogonal initial projections.
const INIT_GAIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub d_model: usize,
    pub heads: usize,
    pub grid: TokenGrid,
    pub tau: f64,
    #[serde(default)]
    pub bias_mode: BiasMode,
}

impl BlockConfig {
    pub fn new(d_model: usize, heads: usize, grid: TokenGrid, tau: f64) -> Result<Self> {
        let c = Self { d_model, heads, grid, tau, bias_mode: BiasMode::Hard };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(domain(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(domain(format!("tau must be finite and >= 0, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn tokens(&self) -> usize {
        self.grid.len()
    }
}

/// Parameter arrays in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    GlobalQ,
    GlobalK,
    GlobalV,
    GlobalO,
    CondProj,
    ExpQ,
    ExpK,
    ExpV,
    ExpO,
    ExpZero,
    SphereQ,
    SphereK,
    SphereV,
    SphereZero,
}

impl ParamId {
    pub const ALL: [ParamId; 14] = [
        ParamId::GlobalQ,
        ParamId::GlobalK,
        ParamId::GlobalV,
        ParamId::GlobalO,
        ParamId::CondProj,
        ParamId::ExpQ,
        ParamId::ExpK,
        ParamId::ExpV,
        ParamId::ExpO,
        ParamId::ExpZero,
        ParamId::SphereQ,
        ParamId::SphereK,
        ParamId::SphereV,
        ParamId::SphereZero,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::GlobalQ => "global.q",
            ParamId::GlobalK => "global.k",
            ParamId::GlobalV => "global.v",
            ParamId::GlobalO => "global.o",
            ParamId::CondProj => "exploration.cond",
            ParamId::ExpQ => "exploration.q",
            ParamId::ExpK => "exploration.k",
            ParamId::ExpV => "exploration.v",
            ParamId::ExpO => "exploration.o",
            ParamId::ExpZero => "exploration.zero",
            ParamId::SphereQ => "sphere.q",
            ParamId::SphereK => "sphere.k",
            ParamId::SphereV => "sphere.v",
            ParamId::SphereZero => "sphere.zero",
        }
    }

    pub fn is_global(self) -> bool {
        matches!(self, ParamId::GlobalQ | ParamId::GlobalK | ParamId::GlobalV | ParamId::GlobalO)
    }

    pub fn shape(self, d_model: usize) -> (usize, usize) {
        match self {
            ParamId::CondProj => (6, d_model),
            _ => (d_model, d_model),
        }
    }
}

/// All block parameters. Projections act on row vectors: `y = x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    params: Vec<Matrix<T>>,
    global_frozen: bool,
}

impl<T: Scalar> BlockWeights<T> {
    /// Fresh weights: orthogonal global and sphere projections, exploration
    /// projections copied from the global ones, zero-linears exactly zero.
    pub fn init(config: &BlockConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut rng = SplitMix64::new(seed);
        let mut params: Vec<Matrix<T>> = Vec::with_capacity(ParamId::ALL.len());
        for id in ParamId::ALL {
            let m = match id {
                ParamId::GlobalQ
                | ParamId::GlobalK
                | ParamId::GlobalV
                | ParamId::GlobalO
                | ParamId::SphereQ
                | ParamId::SphereK
                | ParamId::SphereV => orthogonal(d, INIT_GAIN, &mut rng),
                ParamId::CondProj => {
                    let s = 1.0 / 6f64.sqrt();
                    Matrix::from_fn(6, d, |_, _| T::lit(rng.next_gaussian() * s))
                }
                ParamId::ExpQ => params[ParamId::GlobalQ.index()].clone(),
                ParamId::ExpK => params[ParamId::GlobalK.index()].clone(),
                ParamId::ExpV => params[ParamId::GlobalV.index()].clone(),
                ParamId::ExpO => params[ParamId::GlobalO.index()].clone(),
                ParamId::ExpZero | ParamId::SphereZero => Matrix::zeros(d, d),
            };
            params.push(m);
        }
        Ok(Self { params, global_frozen: true })
    }

    pub fn from_params(d_model: usize, params: Vec<Matrix<T>>, global_frozen: bool) -> Result<Self> {
        if params.len() != ParamId::ALL.len() {
            return Err(Error::Shape {
                expected: format!("{} parameter arrays", ParamId::ALL.len()),
                actual: format!("{}", params.len()),
            });
        }
        for (id, m) in ParamId::ALL.iter().zip(&params) {
            let want = id.shape(d_model);
            if m.shape() != want {
                return Err(Error::Shape {
                    expected: format!("{} of shape {}x{}", id.name(), want.0, want.1),
                    actual: format!("{}x{}", m.rows(), m.cols()),
                });
            }
        }
        Ok(Self { params, global_frozen })
    }

    pub fn d_model(&self) -> usize {
        self.params[0].rows()
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.params[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.params[id.index()]
    }

    pub fn params(&self) -> &[Matrix<T>] {
        &self.params
    }

    pub fn global_frozen(&self) -> bool {
        self.global_frozen
    }

    pub fn set_global_frozen(&mut self, frozen: bool) {
        self.global_frozen = frozen;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        !(self.global_frozen && id.is_global())
    }

    /// Whether both zero-linear layers are exactly zero.
    pub fn zero_linears_are_zero(&self) -> bool {
        self.get(ParamId::ExpZero).is_zero() && self.get(ParamId::SphereZero).is_zero()
    }

    pub fn cast<U: Scalar>(&self) -> BlockWeights<U> {
        let params = self
            .params
            .iter()
            .map(|m| Matrix::from_fn(m.rows(), m.cols(), |i, j| U::lit(m[(i, j)].to_f64_lossy())))
            .collect();
        BlockWeights { params, global_frozen: self.global_frozen }
    }
}

/// Gram-Schmidt on Gaussian rows, scaled by `gain`.
fn orthogonal<T: Scalar>(d: usize, gain: f64, rng: &mut SplitMix64) -> Matrix<T> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
        for r in &rows {
            let p: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(r) {
                *a -= p * b;
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            rows.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    Matrix::from_fn(d, d, |i, j| T::lit(rows[i][j] * gain))
}

fn u32_field(v: usize, what: &str) -> Result<[u8; 4]> {
    Ok(binio::to_u32(v, what)?.to_le_bytes())
}

/// Writes config and weights in the `PWXB` format (values as `f64`).
pub fn write_pwxb<T: Scalar, W: Write>(config: &BlockConfig, weights: &BlockWeights<T>, w: &mut W) -> Result<()> {
    if weights.d_model() != config.d_model {
        return Err(Error::Shape {
            expected: format!("weights for d_model {}", config.d_model),
            actual: format!("d_model {}", weights.d_model()),
        });
    }
    binio::write_header(w, PWXB_MAGIC, PWXB_VERSION)?;
    let g = config.grid;
    let src = g.source();
    let mut buf = Vec::new();
    for (v, what) in [
        (config.d_model, "d_model"),
        (config.heads, "heads"),
        (g.frames(), "frames"),
        (g.rows(), "rows"),
        (g.cols(), "cols"),
        (src.width(), "source width"),
        (src.height(), "source height"),
    ] {
        buf.extend_from_slice(&u32_field(v, what)?);
    }
    buf.extend_from_slice(&config.tau.to_le_bytes());
    buf.push(match config.bias_mode {
        BiasMode::Hard => 0,
        BiasMode::Additive => 1,
    });
    buf.push(weights.global_frozen as u8);
    buf.extend_from_slice(&u32_field(weights.params.len(), "parameter count")?);
    for m in &weights.params {
        buf.extend_from_slice(&u32_field(m.rows(), "rows")?);
        buf.extend_from_slice(&u32_field(m.cols(), "cols")?);
        for v in m.data() {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_pwxb<R: Read>(r: &mut R) -> Result<(BlockConfig, BlockWeights<f64>)> {
    binio::read_header(r, PWXB_MAGIC, PWXB_VERSION)?;
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = binio::read_u32(r)? as usize;
    }
    let [d_model, heads, frames, rows, cols, sw, sh] = dims;
    let tau = binio::read_f64(r)?;
    let bias_mode = match binio::read_u8(r)? {
        0 => BiasMode::Hard,
        1 => BiasMode::Additive,
        b => return Err(Error::Format(format!("unknown bias mode {b}"))),
    };
    let global_frozen = match binio::read_u8(r)? {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("bad frozen flag {b}"))),
    };
    let grid = TokenGrid::new(frames, rows, cols, ErpGrid::new(sw, sh)?)?;
    let config = BlockConfig { d_model, heads, grid, tau, bias_mode };
    config.validate()?;
    let count = binio::read_u32(r)? as usize;
    if count != ParamId::ALL.len() {
        return Err(Error::Format(format!("expected {} parameter arrays, found {count}", ParamId::ALL.len())));
    }
    let mut params = Vec::with_capacity(count);
    for id in ParamId::ALL {
        let (pr, pc) = (binio::read_u32(r)? as usize, binio::read_u32(r)? as usize);
        if (pr, pc) != id.shape(d_model) {
            return Err(Error::Format(format!("{} has shape {pr}x{pc}", id.name())));
        }
        let mut data = Vec::with_capacity(pr * pc);
        for _ in 0..pr * pc {
            data.push(binio::read_f64(r)?);
        }
        params.push(Matrix::from_vec(pr, pc, data)?);
    }
    binio::expect_eof(r)?;
    Ok((config, BlockWeights::from_params(d_model, params, global_frozen)?))
}
