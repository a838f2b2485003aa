//! Dense per-pixel grids: features, confidences and edge maps.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use nalgebra::Vector2;
use rand::Rng;

use crate::error::{GridError, GridParseError, SampleError};

/// Row-major, channel-interleaved `f32` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl DenseGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, GridError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(GridError::Shape(format!("{height}x{width}x{channels} has a zero dimension")));
        }
        if data.len() != height * width * channels {
            return Err(GridError::Shape(format!(
                "{height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::Shape(format!("non-finite value at index {i}")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0 && channels > 0);
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    /// Build from a per-pixel function `(x, y, channel) -> value`.
    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(height, width, channels, data).expect("from_fn produced an invalid grid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    fn cell(&self, p: &Vector2<f64>) -> Option<Cell> {
        let (w, h) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= w && p.y <= h) {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (p.y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        Some(Cell { x0, y0, x1, y1, fx: p.x - x0 as f64, fy: p.y - y0 as f64 })
    }

    /// Bilinear lookup into `out` (length = channels); false out of bounds.
    pub fn sample_into(&self, p: &Vector2<f64>, out: &mut [f64]) -> bool {
        let Some(c) = self.cell(p) else { return false };
        let (a, b, cc, d) = (self.pixel(c.x0, c.y0), self.pixel(c.x1, c.y0), self.pixel(c.x0, c.y1), self.pixel(c.x1, c.y1));
        for k in 0..self.channels {
            let top = (1.0 - c.fx) * a[k] as f64 + c.fx * b[k] as f64;
            let bottom = (1.0 - c.fx) * cc[k] as f64 + c.fx * d[k] as f64;
            out[k] = (1.0 - c.fy) * top + c.fy * bottom;
        }
        true
    }

    /// Bilinear value and its spatial gradient in one lookup.
    pub fn sample_with_gradient_into(&self, p: &Vector2<f64>, value: &mut [f64], grad: &mut [[f64; 2]]) -> bool {
        let Some(c) = self.cell(p) else { return false };
        let (a, b, cc, d) = (self.pixel(c.x0, c.y0), self.pixel(c.x1, c.y0), self.pixel(c.x0, c.y1), self.pixel(c.x1, c.y1));
        for k in 0..self.channels {
            let (v00, v10, v01, v11) = (a[k] as f64, b[k] as f64, cc[k] as f64, d[k] as f64);
            let top = (1.0 - c.fx) * v00 + c.fx * v10;
            let bottom = (1.0 - c.fx) * v01 + c.fx * v11;
            value[k] = (1.0 - c.fy) * top + c.fy * bottom;
            grad[k] = [(1.0 - c.fy) * (v10 - v00) + c.fy * (v11 - v01), bottom - top];
        }
        true
    }

    /// Scalar lookup on a single-channel grid.
    pub fn sample_scalar(&self, p: &Vector2<f64>) -> Option<f64> {
        debug_assert_eq!(self.channels, 1);
        let mut v = [0.0];
        self.sample_into(p, &mut v).then_some(v[0])
    }
}

struct Cell {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

/// Bilinear interpolation at a continuous pixel; `None` outside `[0, W−1]×[0, H−1]`.
pub fn bilinear_sample(grid: &DenseGrid, p: &Vector2<f64>) -> Option<Vec<f64>> {
    let mut out = vec![0.0; grid.channels];
    grid.sample_into(p, &mut out).then_some(out)
}

/// Per-channel `(∂/∂x, ∂/∂y)` of the bilinear surface.
pub fn bilinear_gradient(grid: &DenseGrid, p: &Vector2<f64>) -> Option<Vec<[f64; 2]>> {
    let mut value = vec![0.0; grid.channels];
    let mut grad = vec![[0.0; 2]; grid.channels];
    grid.sample_with_gradient_into(p, &mut value, &mut grad).then_some(grad)
}

#[derive(Debug, PartialEq)]
struct Keyed {
    key: f64,
    index: usize,
}

impl Eq for Keyed {}

impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// reversed so the heap top is the smallest key
impl Ord for Keyed {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key).then(other.index.cmp(&self.index))
    }
}

/// Draw `k` distinct pixels without replacement with probability ∝ `conf^gamma`
/// (exponential keys `ln(u)/w`, keeping the `k` largest).
pub fn guided_sample<R: Rng + ?Sized>(
    conf: &DenseGrid,
    k: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<Vec<Vector2<f64>>, SampleError> {
    if conf.channels != 1 {
        return Err(SampleError::NotSingleChannel(conf.channels));
    }
    let available = conf.data.iter().filter(|&&c| c > 0.0).count();
    if k > available {
        return Err(SampleError::NotEnoughSupport { requested: k, available });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut heap: BinaryHeap<Keyed> = BinaryHeap::with_capacity(k + 1);
    for (index, &c) in conf.data.iter().enumerate() {
        if c <= 0.0 {
            continue;
        }
        let weight = (c as f64).powf(gamma);
        let u: f64 = rng.random::<f64>();
        // u = 0 would give -inf; treat as the weakest possible key
        let key = if u > 0.0 { u.ln() / weight } else { f64::NEG_INFINITY };
        if heap.len() < k {
            heap.push(Keyed { key, index });
        } else if heap.peek().is_some_and(|top| key > top.key) {
            heap.pop();
            heap.push(Keyed { key, index });
        }
    }
    let mut picked = heap.into_vec();
    picked.sort_by(|a, b| b.key.total_cmp(&a.key).then(a.index.cmp(&b.index)));
    Ok(picked
        .into_iter()
        .map(|p| Vector2::new((p.index % conf.width) as f64, (p.index / conf.width) as f64))
        .collect())
}

/// Box-filter resampling with exact area weights.
pub fn area_resize(grid: &DenseGrid, out_w: usize, out_h: usize) -> DenseGrid {
    let wx = area_weights(grid.width, out_w);
    let wy = area_weights(grid.height, out_h);
    let ch = grid.channels;
    let mut data = vec![0.0f32; out_w * out_h * ch];
    let mut acc = vec![0.0f64; ch];
    for (oy, ys) in wy.iter().enumerate() {
        for (ox, xs) in wx.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(iy, wyv) in ys {
                for &(ix, wxv) in xs {
                    let w = wyv * wxv;
                    for (a, &v) in acc.iter_mut().zip(grid.pixel(ix, iy)) {
                        *a += w * v as f64;
                    }
                }
            }
            let o = (oy * out_w + ox) * ch;
            for c in 0..ch {
                data[o + c] = acc[c] as f32;
            }
        }
    }
    DenseGrid { height: out_h, width: out_w, channels: ch, data }
}

fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (start, end) = (o as f64 * ratio, (o + 1) as f64 * ratio);
            let mut ws = Vec::new();
            let mut i = start.floor() as usize;
            while (i as f64) < end && i < n_in {
                let overlap = (end.min(i as f64 + 1.0) - start.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    ws.push((i, overlap / ratio));
                }
                i += 1;
            }
            ws
        })
        .collect()
}

/// Output dimension of a level at ratio `scale`.
pub fn scaled_dim(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(1)
}

/// Maps for one scale level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelMaps {
    pub features: DenseGrid,
    pub feat_conf: DenseGrid,
    pub edge: DenseGrid,
    pub edge_conf: DenseGrid,
    /// Level width over full image width.
    pub scale: f64,
}

impl LevelMaps {
    /// Validates shapes; confidences are clamped into `[0, 1]`.
    pub fn new(
        features: DenseGrid,
        feat_conf: DenseGrid,
        edge: DenseGrid,
        edge_conf: DenseGrid,
        scale: f64,
    ) -> Result<Self, GridError> {
        let (h, w) = (features.height, features.width);
        for (name, g) in [("feat_conf", &feat_conf), ("edge", &edge), ("edge_conf", &edge_conf)] {
            if g.height != h || g.width != w {
                return Err(GridError::Shape(format!("{name} is {}x{}, features are {h}x{w}", g.height, g.width)));
            }
            if g.channels != 1 {
                return Err(GridError::Shape(format!("{name} must have one channel, has {}", g.channels)));
            }
        }
        if !(scale > 0.0) {
            return Err(GridError::Shape(format!("level scale {scale} must be positive")));
        }
        Ok(Self {
            features,
            feat_conf: feat_conf.map(|v| v.clamp(0.0, 1.0)),
            edge,
            edge_conf: edge_conf.map(|v| v.clamp(0.0, 1.0)),
            scale,
        })
    }

    pub fn width(&self) -> usize {
        self.features.width
    }

    pub fn height(&self) -> usize {
        self.features.height
    }
}

/// Names of the three scale levels, coarse to fine.
pub const LEVEL_NAMES: [&str; 3] = ["coarse", "medium", "fine"];

/// Default level ratios for photometric pyramids.
pub const DEFAULT_LEVEL_SCALES: [f64; 3] = [0.125, 0.25, 0.5];

/// Exactly three levels, coarse → medium → fine.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    levels: [LevelMaps; 3],
}

impl Pyramid {
    pub fn new(levels: [LevelMaps; 3]) -> Result<Self, GridError> {
        for pair in levels.windows(2) {
            if pair[1].width() < pair[0].width() || pair[1].height() < pair[0].height() {
                return Err(GridError::Shape("pyramid levels must be ordered coarse to fine".into()));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[LevelMaps; 3] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &LevelMaps {
        &self.levels[i]
    }
}

/// Pyramid that uses area-downsampled RGB as features, with unit feature
/// confidence and no edge information.
pub fn photometric_pyramid(image: &DenseGrid, level_scales: [f64; 3]) -> Result<Pyramid, GridError> {
    if image.channels != 3 {
        return Err(GridError::Shape(format!("expected an RGB image, got {} channels", image.channels)));
    }
    let levels = level_scales.map(|s| {
        let (w, h) = (scaled_dim(image.width, s), scaled_dim(image.height, s));
        let features = if (w, h) == (image.width, image.height) { image.clone() } else { area_resize(image, w, h) };
        LevelMaps {
            features,
            feat_conf: DenseGrid::filled(h, w, 1, 1.0),
            edge: DenseGrid::filled(h, w, 1, 0.0),
            edge_conf: DenseGrid::filled(h, w, 1, 0.0),
            scale: w as f64 / image.width as f64,
        }
    });
    Pyramid::new(levels)
}

/// Decode an 8-bit image file into RGB in `[0, 1]`.
pub fn load_rgb_image(path: &Path) -> Result<DenseGrid, GridError> {
    let img = image::open(path)
        .map_err(|e| GridError::Io { path: path.into(), source: std::io::Error::other(e.to_string()) })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    DenseGrid::new(h as usize, w as usize, 3, data)
}

/// Encode an RGB grid in `[0, 1]` as an 8-bit PNG.
pub fn save_rgb_png(grid: &DenseGrid, path: &Path) -> Result<(), GridError> {
    if grid.channels != 3 {
        return Err(GridError::Shape("PNG export needs three channels".into()));
    }
    let bytes: Vec<u8> = grid.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::RgbImage::from_raw(grid.width as u32, grid.height as u32, bytes).expect("buffer size matches");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| GridError::Io { path: path.into(), source: std::io::Error::other(e.to_string()) })
}

pub const DGRD_MAGIC: &[u8; 4] = b"DGRD";
pub const DGRD_VERSION: u32 = 1;
const DGRD_HEADER: usize = 20;

/// Serialize to the DGRD byte layout.
pub fn encode_grid(grid: &DenseGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(DGRD_HEADER + 4 * grid.data.len());
    out.extend_from_slice(DGRD_MAGIC);
    for v in [DGRD_VERSION, grid.height as u32, grid.width as u32, grid.channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &grid.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse the DGRD byte layout.
pub fn decode_grid(bytes: &[u8]) -> Result<DenseGrid, GridParseError> {
    if bytes.len() < 4 {
        return Err(GridParseError::UnexpectedEnd);
    }
    if &bytes[..4] != DGRD_MAGIC {
        return Err(GridParseError::BadMagic);
    }
    let word = |i: usize| -> Result<u32, GridParseError> {
        bytes
            .get(4 + 4 * i..8 + 4 * i)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or(GridParseError::UnexpectedEnd)
    };
    let version = word(0)?;
    if version != DGRD_VERSION {
        return Err(GridParseError::UnsupportedVersion(version));
    }
    let (height, width, channels) = (word(1)? as usize, word(2)? as usize, word(3)? as usize);
    for (field, v) in [("height", height), ("width", width), ("channels", channels)] {
        if v == 0 {
            return Err(GridParseError::ZeroDimension { field });
        }
    }
    let count = height
        .checked_mul(width)
        .ok_or(GridParseError::DimensionOverflow { field: "width" })?
        .checked_mul(channels)
        .ok_or(GridParseError::DimensionOverflow { field: "channels" })?;
    let payload = count.checked_mul(4).ok_or(GridParseError::DimensionOverflow { field: "channels" })?;
    let body = &bytes[DGRD_HEADER..];
    match body.len().cmp(&payload) {
        Ordering::Less => return Err(GridParseError::UnexpectedEnd),
        Ordering::Greater => return Err(GridParseError::TrailingBytes(body.len() - payload)),
        Ordering::Equal => {}
    }
    let data: Vec<f32> = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(GridParseError::NonFinite(i));
    }
    Ok(DenseGrid { height, width, channels, data })
}

pub fn load_grid(path: &Path) -> Result<DenseGrid, GridError> {
    let bytes = std::fs::read(path).map_err(|source| GridError::Io { path: path.into(), source })?;
    decode_grid(&bytes).map_err(|source| GridError::Parse { path: path.into(), source })
}

pub fn save_grid(grid: &DenseGrid, path: &Path) -> Result<(), GridError> {
    std::fs::write(path, encode_grid(grid)).map_err(|source| GridError::Io { path: path.into(), source })
}
