//! Corpus preprocessing: decode clips, keep luminance, crop, split into
//! non-overlapping blocks, and group frames into fixed-length GOPs.

mod dataset;
mod video;

pub use dataset::{read_dataset, write_dataset, BlockDataset, DatasetManifest};
pub use video::{decode_video, RgbFrame};

use crate::error::{Error, Result};
use ndarray::{Array2, Array3, ArrayView2, s};

/// BT.601 luma weights for 8-bit RGB.
const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// A single luminance frame with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct LumaFrame {
    data: Array2<f32>,
}

impl LumaFrame {
    /// Wraps a plane, enforcing the [0,1] range invariant.
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("luma frame"));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "luma frame values must lie in [0,1]".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f32> {
        self.data
    }
}

/// One frame split into a grid of non-overlapping square blocks.
///
/// Blocks are stored row-major by grid position; each block is a flattened
/// `block_size * block_size` pixel vector (pixel-row major).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    /// Shape `(rows * cols, block_size^2)`.
    pub blocks: Array2<f32>,
}

/// A group of pictures: `t` frames of spatially aligned blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GopBlockSequence {
    t: usize,
    rows: usize,
    cols: usize,
    block_size: usize,
    /// Shape `(t, rows * cols, block_size^2)`.
    blocks: Array3<f32>,
    source_id: String,
}

impl GopBlockSequence {
    pub fn new(
        block_size: usize,
        rows: usize,
        cols: usize,
        blocks: Array3<f32>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let (t, positions, n) = blocks.dim();
        if t < 2 {
            return Err(Error::InvalidArgument(format!(
                "a GOP needs at least 2 frames, got {t}"
            )));
        }
        if positions != rows * cols || n != block_size * block_size {
            return Err(Error::shape(
                "gop blocks",
                format!("({t}, {}, {})", rows * cols, block_size * block_size),
                format!("({t}, {positions}, {n})"),
            ));
        }
        if blocks.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "gop block values must lie in [0,1]".into(),
            ));
        }
        Ok(Self {
            t,
            rows,
            cols,
            block_size,
            blocks,
            source_id: source_id.into(),
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn positions(&self) -> usize {
        self.rows * self.cols
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// `(t, positions, block_size^2)` block tensor.
    pub fn blocks(&self) -> &Array3<f32> {
        &self.blocks
    }

    /// Reassembles frame `t` from its blocks.
    pub fn frame(&self, t: usize) -> LumaFrame {
        let grid = BlockGrid {
            rows: self.rows,
            cols: self.cols,
            block_size: self.block_size,
            blocks: self.blocks.index_axis(ndarray::Axis(0), t).to_owned(),
        };
        assemble_frame(&grid).expect("gop invariants guarantee assembly")
    }
}

/// Converts an RGB frame to a luminance plane in [0,1] using BT.601 weights.
pub fn extract_luminance(frame: &RgbFrame) -> Array2<f32> {
    let (h, w) = (frame.height(), frame.width());
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (red, green, blue) = frame.pixel(r, c);
        let y = (LUMA_R * red as f64 + LUMA_G * green as f64 + LUMA_B * blue as f64) / 255.0;
        y.clamp(0.0, 1.0) as f32
    })
}

/// Extracts the centered `crop_h x crop_w` window. For odd margins the extra
/// row/column is dropped from the bottom/right.
pub fn center_crop(plane: ArrayView2<f32>, crop_h: usize, crop_w: usize) -> Result<LumaFrame> {
    let (h, w) = plane.dim();
    if crop_h == 0 || crop_w == 0 {
        return Err(Error::InvalidArgument("crop dimensions must be positive".into()));
    }
    if h < crop_h || w < crop_w {
        return Err(Error::InvalidArgument(format!(
            "plane {h}x{w} is smaller than crop {crop_h}x{crop_w}"
        )));
    }
    let top = (h - crop_h) / 2;
    let left = (w - crop_w) / 2;
    let window = plane
        .slice(s![top..top + crop_h, left..left + crop_w])
        .to_owned();
    LumaFrame::new(window)
}

/// Splits a frame into non-overlapping `block_size x block_size` blocks.
/// Block `(r, c)` covers pixel rows `[r*b, (r+1)*b)`.
pub fn blockify(frame: &LumaFrame, block_size: usize) -> Result<BlockGrid> {
    if block_size == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    let (h, w) = (frame.height(), frame.width());
    if h % block_size != 0 || w % block_size != 0 {
        return Err(Error::InvalidArgument(format!(
            "frame {h}x{w} is not divisible by block size {block_size}"
        )));
    }
    let rows = h / block_size;
    let cols = w / block_size;
    let n = block_size * block_size;
    let mut blocks = Array2::<f32>::zeros((rows * cols, n));
    let view = frame.view();
    for r in 0..rows {
        for c in 0..cols {
            let window = view.slice(s![
                r * block_size..(r + 1) * block_size,
                c * block_size..(c + 1) * block_size
            ]);
            let mut dst = blocks.row_mut(r * cols + c);
            for (i, &v) in window.iter().enumerate() {
                dst[i] = v;
            }
        }
    }
    Ok(BlockGrid {
        rows,
        cols,
        block_size,
        blocks,
    })
}

/// Inverse of [`blockify`]: reproduces the frame bit-exactly.
pub fn assemble_frame(grid: &BlockGrid) -> Result<LumaFrame> {
    let b = grid.block_size;
    let (h, w) = (grid.rows * b, grid.cols * b);
    let expected = (grid.rows * grid.cols, b * b);
    if grid.blocks.dim() != expected {
        return Err(Error::shape(
            "assemble_frame",
            format!("{expected:?}"),
            format!("{:?}", grid.blocks.dim()),
        ));
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let block = grid.blocks.row(r * grid.cols + c);
            for pr in 0..b {
                for pc in 0..b {
                    out[[r * b + pr, c * b + pc]] = block[pr * b + pc];
                }
            }
        }
    }
    LumaFrame::new(out)
}

/// Groups frames into consecutive non-overlapping GOPs of length `t`,
/// blockifying each frame. A trailing remainder shorter than `t` is dropped.
pub fn group_gops(
    frames: &[LumaFrame],
    t: usize,
    block_size: usize,
    source_id: &str,
) -> Result<Vec<GopBlockSequence>> {
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "GOP length must be at least 2, got {t}"
        )));
    }
    if frames.len() < t {
        return Err(Error::InvalidArgument(format!(
            "insufficient frames: got {}, need at least {t}",
            frames.len()
        )));
    }
    let gop_count = frames.len() / t;
    let mut gops = Vec::with_capacity(gop_count);
    for g in 0..gop_count {
        let window = &frames[g * t..(g + 1) * t];
        let first = blockify(&window[0], block_size)?;
        let (rows, cols) = (first.rows, first.cols);
        let n = block_size * block_size;
        let mut blocks = Array3::<f32>::zeros((t, rows * cols, n));
        for (ti, frame) in window.iter().enumerate() {
            let grid = blockify(frame, block_size)?;
            if (grid.rows, grid.cols) != (rows, cols) {
                return Err(Error::shape(
                    "group_gops",
                    format!("grid {rows}x{cols}"),
                    format!("grid {}x{}", grid.rows, grid.cols),
                ));
            }
            blocks
                .index_axis_mut(ndarray::Axis(0), ti)
                .assign(&grid.blocks);
        }
        gops.push(GopBlockSequence::new(
            block_size,
            rows,
            cols,
            blocks,
            format!("{source_id}#gop{g}"),
        )?);
    }
    Ok(gops)
}

/// Preprocessing parameters for a corpus.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IngestConfig {
    pub crop_height: usize,
    pub crop_width: usize,
    pub block_size: usize,
    pub t: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            crop_height: 160,
            crop_width: 160,
            block_size: 32,
            t: 10,
        }
    }
}

/// Full single-clip pipeline: decode, luminance, central crop, GOP grouping.
pub fn ingest_clip(path: &std::path::Path, cfg: &IngestConfig) -> Result<Vec<GopBlockSequence>> {
    let frames = decode_video(path, cfg.t)?;
    let lumas = frames
        .iter()
        .map(|f| center_crop(extract_luminance(f).view(), cfg.crop_height, cfg.crop_width))
        .collect::<Result<Vec<_>>>()?;
    group_gops(&lumas, cfg.t, cfg.block_size, &path.to_string_lossy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rgb_const(h: usize, w: usize, rgb: (u8, u8, u8)) -> RgbFrame {
        let mut data = Vec::with_capacity(h * w * 3);
        for _ in 0..h * w {
            data.extend_from_slice(&[rgb.0, rgb.1, rgb.2]);
        }
        RgbFrame::new(h, w, data).unwrap()
    }

    fn random_luma(rng: &mut ChaCha8Rng, h: usize, w: usize) -> LumaFrame {
        LumaFrame::new(Array2::from_shape_fn((h, w), |_| rng.random::<f32>())).unwrap()
    }

    #[test]
    fn luminance_extremes() {
        let white = extract_luminance(&rgb_const(4, 4, (255, 255, 255)));
        assert!(white.iter().all(|&v| v == 1.0));
        let black = extract_luminance(&rgb_const(4, 4, (0, 0, 0)));
        assert!(black.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn luminance_pure_red_matches_coefficient() {
        // Independent evaluation of the weight applied to a saturated red.
        let expected = (0.299f64 * 255.0 / 255.0) as f32;
        let red = extract_luminance(&rgb_const(2, 3, (255, 0, 0)));
        assert!(red.iter().all(|&v| (v - expected).abs() < 1e-7));
    }

    #[test]
    fn luminance_in_unit_range_for_cube_corners_and_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cases: Vec<(u8, u8, u8)> = Vec::new();
        for &r in &[0u8, 255] {
            for &g in &[0u8, 255] {
                for &b in &[0u8, 255] {
                    cases.push((r, g, b));
                }
            }
        }
        for _ in 0..1000 {
            cases.push((rng.random(), rng.random(), rng.random()));
        }
        for rgb in cases {
            let y = extract_luminance(&rgb_const(1, 1, rgb));
            let v = y[[0, 0]];
            assert!((0.0..=1.0).contains(&v), "rgb {rgb:?} gave {v}");
        }
    }

    #[test]
    fn center_crop_indices() {
        // 240 rows x 320 cols cropped to 160x160 keeps rows 40..199 and
        // cols 80..239; verify against an independently sliced window.
        let plane = Array2::from_shape_fn((240, 320), |(r, c)| {
            ((r * 320 + c) % 991) as f32 / 991.0
        });
        let cropped = center_crop(plane.view(), 160, 160).unwrap();
        for r in 0..160 {
            for c in 0..160 {
                assert_eq!(cropped.view()[[r, c]], plane[[40 + r, 80 + c]]);
            }
        }
    }

    #[test]
    fn center_crop_identity_and_too_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let plane = Array2::from_shape_fn((160, 160), |_| rng.random::<f32>());
        let out = center_crop(plane.view(), 160, 160).unwrap();
        assert_eq!(out.view(), plane.view());
        let small = Array2::<f32>::zeros((100, 100));
        assert!(center_crop(small.view(), 160, 160).is_err());
    }

    #[test]
    fn center_crop_odd_margin_drops_bottom_right() {
        let plane = Array2::from_shape_fn((5, 5), |(r, c)| (r * 5 + c) as f32 / 25.0);
        let out = center_crop(plane.view(), 4, 4).unwrap();
        // extra = 1: top/left margin 0, bottom/right row+col dropped.
        assert_eq!(out.view()[[0, 0]], plane[[0, 0]]);
        assert_eq!(out.view()[[3, 3]], plane[[3, 3]]);
    }

    #[test]
    fn blockify_counts_and_constant_blocks() {
        let frame = LumaFrame::new(Array2::from_elem((160, 160), 0.25f32)).unwrap();
        let grid = blockify(&frame, 32).unwrap();
        assert_eq!((grid.rows, grid.cols), (5, 5));
        assert_eq!(grid.blocks.nrows(), 25);
        assert!(grid.blocks.iter().all(|&v| v == 0.25));
        assert!(blockify(&frame, 48).is_err());
    }

    #[test]
    fn blockify_assemble_roundtrip_random_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(h, w, b) in &[(64usize, 96usize, 32usize), (160, 160, 32), (24, 40, 8)] {
            let frame = random_luma(&mut rng, h, w);
            let grid = blockify(&frame, b).unwrap();
            let back = assemble_frame(&grid).unwrap();
            assert_eq!(back.view(), frame.view(), "roundtrip must be bit-exact");
        }
    }

    #[test]
    fn group_gops_window_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let frames: Vec<LumaFrame> = (0..25).map(|_| random_luma(&mut rng, 32, 32)).collect();
        let gops = group_gops(&frames, 10, 32, "clip").unwrap();
        assert_eq!(gops.len(), 2, "floor(25/10) GOPs, remainder discarded");

        let exact: Vec<LumaFrame> = frames.iter().take(10).cloned().collect();
        assert_eq!(group_gops(&exact, 10, 32, "clip").unwrap().len(), 1);

        // Frame 0 of the first GOP equals the blockified source frame 0.
        let first = blockify(&frames[0], 32).unwrap();
        assert_eq!(
            gops[0].blocks().index_axis(ndarray::Axis(0), 0),
            first.blocks.view()
        );

        let short: Vec<LumaFrame> = frames.iter().take(7).cloned().collect();
        assert!(group_gops(&short, 10, 32, "clip").is_err());
    }

    #[test]
    fn gop_count_floor_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..8 {
            let t = rng.random_range(2..6usize);
            let extra = rng.random_range(0..13usize);
            let n = t + extra;
            let frames: Vec<LumaFrame> = (0..n).map(|_| random_luma(&mut rng, 16, 16)).collect();
            let gops = group_gops(&frames, t, 8, "p").unwrap();
            assert_eq!(gops.len(), n / t);
        }
    }
}
