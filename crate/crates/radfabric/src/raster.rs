//! Dense rasters: Grad-CAM heatmaps, feature stacks and segmentation masks.
//!
//! All grids are row-major with `(x, y)` indexing as `y * width + x`.
//! Heatmaps and masks serialize to plain-text grid files: a `W H` header line
//! followed by `H` rows of `W` space-separated values.

use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RasterError {
    #[error("invalid raster input: {0}")]
    InvalidInput(String),
    #[error("grid file parse error: {0}")]
    Parse(String),
}

impl RasterError {
    fn invalid(msg: impl Into<String>) -> Self {
        RasterError::InvalidInput(msg.into())
    }
}

/// A raw row-major grid of reals, not yet normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Grid, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::invalid("grid dims must be >= 1"));
        }
        if values.len() != width * height {
            return Err(RasterError::invalid(format!(
                "expected {} values for {width}x{height} grid, got {}",
                width * height,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(RasterError::invalid("grid contains non-finite values"));
        }
        Ok(Grid {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Grid, RasterError> {
        Grid::new(width, height, vec![value; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// A normalized activation map: finite values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    /// Wrap an already-normalized grid, checking the `[0, 1]` invariant.
    pub fn from_grid(grid: Grid) -> Result<Heatmap, RasterError> {
        if !grid.values.iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(RasterError::invalid("heatmap values must lie in [0, 1]"));
        }
        Ok(Heatmap {
            width: grid.width,
            height: grid.height,
            values: grid.values,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn read_from(path: &Path) -> Result<Heatmap, RasterError> {
        let grid = read_grid(path)?;
        Heatmap::from_grid(grid)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), RasterError> {
        write_grid(path, self.width, self.height, &self.values, |v| {
            format!("{v}")
        })
    }

    /// Render in grid-file format, for inline transport.
    pub fn to_grid_text(&self) -> String {
        let mut out = format!("{} {}\n", self.width, self.height);
        for y in 0..self.height {
            let row: Vec<String> =
                (0..self.width).map(|x| self.get(x, y).to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Per-class activations and their gradients at feature resolution.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `channels` grids of `height * width` activations, channel-major.
    pub activations: Vec<f64>,
    /// Same shape as `activations`: d(score)/d(activation).
    pub gradients: Vec<f64>,
}

impl FeatureStack {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        activations: Vec<f64>,
        gradients: Vec<f64>,
    ) -> Result<FeatureStack, RasterError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(RasterError::invalid("feature stack dims must be >= 1"));
        }
        let n = channels * height * width;
        if activations.len() != n || gradients.len() != n {
            return Err(RasterError::invalid(
                "activations and gradients must both have shape (k, h, w)",
            ));
        }
        if !activations.iter().chain(gradients.iter()).all(|v| v.is_finite()) {
            return Err(RasterError::invalid("feature stack contains non-finite values"));
        }
        Ok(FeatureStack {
            channels,
            height,
            width,
            activations,
            gradients,
        })
    }

    fn activation(&self, k: usize, y: usize, x: usize) -> f64 {
        self.activations[k * self.height * self.width + y * self.width + x]
    }

    fn gradient(&self, k: usize, y: usize, x: usize) -> f64 {
        self.gradients[k * self.height * self.width + y * self.width + x]
    }
}

/// Anatomical region codes carried by segmentation masks.
///
/// The refined upper/middle/lower codes appear only after lung-field
/// partitioning. Integer codes (for grid files) follow the declaration order
/// below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum RegionCode {
    Background,
    Esophagus,
    LeftLung,
    RightLung,
    Diaphragm,
    LeftUpper,
    LeftMiddle,
    LeftLower,
    RightUpper,
    RightMiddle,
    RightLower,
}

impl RegionCode {
    pub const ALL: [RegionCode; 11] = [
        RegionCode::Background,
        RegionCode::Esophagus,
        RegionCode::LeftLung,
        RegionCode::RightLung,
        RegionCode::Diaphragm,
        RegionCode::LeftUpper,
        RegionCode::LeftMiddle,
        RegionCode::LeftLower,
        RegionCode::RightUpper,
        RegionCode::RightMiddle,
        RegionCode::RightLower,
    ];

    /// Integer code used in mask grid files.
    pub fn code(self) -> u8 {
        RegionCode::ALL.iter().position(|&r| r == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Result<RegionCode, RasterError> {
        RegionCode::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| RasterError::Parse(format!("unknown region code {code}")))
    }

    /// True for any lung-associated code, original or refined.
    pub fn is_lung(self) -> bool {
        !matches!(
            self,
            RegionCode::Background | RegionCode::Esophagus | RegionCode::Diaphragm
        )
    }

    pub fn is_left_lung(self) -> bool {
        matches!(
            self,
            RegionCode::LeftLung
                | RegionCode::LeftUpper
                | RegionCode::LeftMiddle
                | RegionCode::LeftLower
        )
    }

    pub fn is_right_lung(self) -> bool {
        self.is_lung() && !self.is_left_lung()
    }
}

/// A labeled anatomical raster with the same geometry as its heatmaps.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<RegionCode>,
}

impl SegmentationMask {
    pub fn new(
        width: usize,
        height: usize,
        labels: Vec<RegionCode>,
    ) -> Result<SegmentationMask, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::invalid("mask dims must be >= 1"));
        }
        if labels.len() != width * height {
            return Err(RasterError::invalid("mask label count must equal width * height"));
        }
        Ok(SegmentationMask {
            width,
            height,
            labels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> RegionCode {
        self.labels[y * self.width + x]
    }

    pub fn read_from(path: &Path) -> Result<SegmentationMask, RasterError> {
        let grid = read_grid(path)?;
        let labels = grid
            .values
            .iter()
            .map(|&v| {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    Err(RasterError::Parse(format!("mask cell {v} is not a region code")))
                } else {
                    RegionCode::from_code(v as u8)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        SegmentationMask::new(grid.width, grid.height, labels)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), RasterError> {
        let codes: Vec<f64> = self.labels.iter().map(|r| r.code() as f64).collect();
        write_grid(path, self.width, self.height, &codes, |v| {
            format!("{}", *v as u8)
        })
    }
}

/// Binary activation mask produced by thresholding a heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

/// Grad-CAM: channel weights are global-average-pooled gradients; the raw map
/// is the ReLU of the weighted activation sum, bilinearly upsampled and
/// max-normalized.
pub fn gradcam(
    stack: &FeatureStack,
    out_width: usize,
    out_height: usize,
) -> Result<Heatmap, RasterError> {
    if out_width == 0 || out_height == 0 {
        return Err(RasterError::invalid("output dims must be >= 1"));
    }
    let spatial = (stack.height * stack.width) as f64;
    let mut raw = vec![0.0; stack.height * stack.width];
    for k in 0..stack.channels {
        let mut alpha = 0.0;
        for y in 0..stack.height {
            for x in 0..stack.width {
                alpha += stack.gradient(k, y, x);
            }
        }
        alpha /= spatial;
        for y in 0..stack.height {
            for x in 0..stack.width {
                raw[y * stack.width + x] += alpha * stack.activation(k, y, x);
            }
        }
    }
    for v in &mut raw {
        *v = v.max(0.0);
    }
    let raw = Grid::new(stack.width, stack.height, raw)?;
    let up = upsample_bilinear(&raw, out_width, out_height)?;
    normalize(&up)
}

/// Clamp negatives to zero, then divide by the maximum (when positive).
pub fn normalize(grid: &Grid) -> Result<Heatmap, RasterError> {
    let clamped: Vec<f64> = grid.values.iter().map(|v| v.max(0.0)).collect();
    let max = clamped.iter().cloned().fold(0.0_f64, f64::max);
    let values = if max > 0.0 {
        clamped.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; clamped.len()]
    };
    Ok(Heatmap {
        width: grid.width,
        height: grid.height,
        values,
    })
}

/// Cells with value `>= tau` are active.
pub fn threshold(h: &Heatmap, tau: f64) -> Result<BinaryMask, RasterError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(RasterError::invalid(format!("tau {tau} outside [0, 1]")));
    }
    Ok(BinaryMask {
        width: h.width,
        height: h.height,
        cells: h.values.iter().map(|&v| v >= tau).collect(),
    })
}

/// Corner-aligned bilinear interpolation; identity when dims are unchanged.
pub fn upsample_bilinear(
    grid: &Grid,
    out_width: usize,
    out_height: usize,
) -> Result<Grid, RasterError> {
    if out_width == 0 || out_height == 0 {
        return Err(RasterError::invalid("output dims must be >= 1"));
    }
    if out_width == grid.width && out_height == grid.height {
        return Ok(grid.clone());
    }
    let scale = |i: usize, out_n: usize, in_n: usize| -> f64 {
        if out_n == 1 || in_n == 1 {
            0.0
        } else {
            i as f64 * (in_n - 1) as f64 / (out_n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(out_width * out_height);
    for oy in 0..out_height {
        let sy = scale(oy, out_height, grid.height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(grid.height - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_width {
            let sx = scale(ox, out_width, grid.width);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(grid.width - 1);
            let fx = sx - x0 as f64;
            let top = grid.get(x0, y0) * (1.0 - fx) + grid.get(x1, y0) * fx;
            let bot = grid.get(x0, y1) * (1.0 - fx) + grid.get(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Grid::new(out_width, out_height, out)
}

fn read_grid(path: &Path) -> Result<Grid, RasterError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RasterError::Parse(format!("{}: {e}", path.display())))?;
    parse_grid(&text)
}

/// Parse the `W H` + rows text format.
pub fn parse_grid(text: &str) -> Result<Grid, RasterError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| RasterError::Parse("empty grid file".into()))?;
    let mut dims = header.split_whitespace();
    let width: usize = dims
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| RasterError::Parse("bad grid header".into()))?;
    let height: usize = dims
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| RasterError::Parse("bad grid header".into()))?;
    let mut values = Vec::with_capacity(width * height);
    for line in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| RasterError::Parse(format!("bad grid value {tok:?}")))?;
            values.push(v);
        }
    }
    Grid::new(width, height, values)
}

fn write_grid(
    path: &Path,
    width: usize,
    height: usize,
    values: &[f64],
    fmt: impl Fn(&f64) -> String,
) -> Result<(), RasterError> {
    let mut out = format!("{width} {height}\n");
    for y in 0..height {
        let row: Vec<String> = (0..width).map(|x| fmt(&values[y * width + x])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    std::fs::write(path, out).map_err(|e| RasterError::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(k: usize, h: usize, w: usize, act: &[f64], grad: &[f64]) -> FeatureStack {
        FeatureStack::new(k, h, w, act.to_vec(), grad.to_vec()).unwrap()
    }

    #[test]
    fn gradcam_zero_gradients_give_zero_map() {
        let s = stack(2, 2, 2, &[1.0; 8], &[0.0; 8]);
        let h = gradcam(&s, 2, 2).unwrap();
        assert!(h.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradcam_uniform_stack_gives_all_ones() {
        let s = stack(1, 3, 3, &[1.0; 9], &[1.0; 9]);
        let h = gradcam(&s, 3, 3).unwrap();
        assert!(h.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn gradcam_matches_hand_oracle_on_2x2() {
        // k=2: alpha_0 = mean([1,1,1,1]) = 1, alpha_1 = mean([-2,0,0,2]) = 0
        let act = [0.0, 1.0, 2.0, 3.0, 5.0, 5.0, 5.0, 5.0];
        let grad = [1.0, 1.0, 1.0, 1.0, -2.0, 0.0, 0.0, 2.0];
        let s = stack(2, 2, 2, &act, &grad);
        let h = gradcam(&s, 2, 2).unwrap();
        // L = relu([0,1,2,3]); normalize by 3
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in h.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradcam_rejects_shape_mismatch() {
        assert!(FeatureStack::new(1, 2, 2, vec![0.0; 4], vec![0.0; 3]).is_err());
    }

    #[test]
    fn gradcam_rejects_non_finite() {
        assert!(FeatureStack::new(1, 1, 2, vec![f64::NAN, 0.0], vec![0.0; 2]).is_err());
    }

    #[test]
    fn normalize_scales_to_unit_max() {
        let g = Grid::new(3, 1, vec![0.0, 2.0, 4.0]).unwrap();
        assert_eq!(normalize(&g).unwrap().values, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_zero_grid_stays_zero() {
        let g = Grid::new(2, 2, vec![0.0; 4]).unwrap();
        assert_eq!(normalize(&g).unwrap().values, vec![0.0; 4]);
    }

    #[test]
    fn normalize_clamps_negatives_first() {
        let g = Grid::new(2, 1, vec![-1.0, 1.0]).unwrap();
        assert_eq!(normalize(&g).unwrap().values, vec![0.0, 1.0]);
    }

    #[test]
    fn threshold_boundaries() {
        let h = Heatmap::from_grid(Grid::new(3, 1, vec![0.0, 0.5, 1.0]).unwrap()).unwrap();
        assert_eq!(threshold(&h, 0.0).unwrap().cells, vec![true, true, true]);
        assert_eq!(threshold(&h, 1.0).unwrap().cells, vec![false, false, true]);
        assert!(threshold(&h, 1.5).is_err());
    }

    #[test]
    fn upsample_identity_dims_is_bitwise_equal() {
        let g = Grid::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(upsample_bilinear(&g, 2, 2).unwrap(), g);
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let g = Grid::constant(2, 3, 0.7).unwrap();
        let up = upsample_bilinear(&g, 5, 7).unwrap();
        assert!(up.values.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn upsample_checkerboard_center_is_half() {
        let g = Grid::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let up = upsample_bilinear(&g, 3, 3).unwrap();
        assert!((up.get(1, 1) - 0.5).abs() < 1e-15);
        assert_eq!(up.get(0, 0), 0.0);
        assert_eq!(up.get(2, 0), 1.0);
    }

    #[test]
    fn grid_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.grid");
        let h = Heatmap::from_grid(Grid::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap()).unwrap();
        h.write_to(&path).unwrap();
        assert_eq!(Heatmap::read_from(&path).unwrap(), h);

        let mpath = dir.path().join("m.grid");
        let m = SegmentationMask::new(
            2,
            1,
            vec![RegionCode::LeftLung, RegionCode::Diaphragm],
        )
        .unwrap();
        m.write_to(&mpath).unwrap();
        assert_eq!(SegmentationMask::read_from(&mpath).unwrap(), m);
    }

    #[test]
    fn region_code_round_trip() {
        for r in RegionCode::ALL {
            assert_eq!(RegionCode::from_code(r.code()).unwrap(), r);
        }
        assert!(RegionCode::from_code(42).is_err());
    }
}
