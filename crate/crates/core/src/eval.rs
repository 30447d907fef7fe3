//! Classification error and the generative image grids.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::StructuredVAE;
use crate::tensor::Tensor;

pub const CELL: usize = 28;

/// Percentage of rows whose most probable label differs from the truth.
/// Ties resolve to the lowest class index.
pub fn classification_error(model: &StructuredVAE, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let pred = model.predict(&test.images)?;
    Ok(error_pct(&pred, &test.labels))
}

pub fn error_pct(predicted: &[usize], truth: &[usize]) -> f64 {
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    100.0 * wrong as f64 / truth.len() as f64
}

/// A `rows × cols` mosaic of 28×28 cells, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        ImageGrid {
            rows,
            cols,
            pixels: vec![0.0; rows * CELL * cols * CELL],
        }
    }

    pub fn height(&self) -> usize {
        self.rows * CELL
    }

    pub fn width(&self) -> usize {
        self.cols * CELL
    }

    pub fn set_cell(&mut self, r: usize, c: usize, image: &[f64]) {
        assert_eq!(image.len(), CELL * CELL);
        let w = self.width();
        for y in 0..CELL {
            let dst = (r * CELL + y) * w + c * CELL;
            self.pixels[dst..dst + CELL].copy_from_slice(&image[y * CELL..(y + 1) * CELL]);
        }
    }

    pub fn cell(&self, r: usize, c: usize) -> Vec<f64> {
        let w = self.width();
        let mut out = Vec::with_capacity(CELL * CELL);
        for y in 0..CELL {
            let src = (r * CELL + y) * w + c * CELL;
            out.extend_from_slice(&self.pixels[src..src + CELL]);
        }
        out
    }
}

fn require_image_model(model: &StructuredVAE) -> Result<()> {
    if model.spec().input_dim != CELL * CELL {
        return Err(Error::contract(alloc::format!(
            "image grids need {}-pixel inputs, model has {}",
            CELL * CELL,
            model.spec().input_dim
        )));
    }
    Ok(())
}

/// One row per seed image: the seed itself, then the decoding of its
/// inferred style (posterior mean under the predicted label) paired with
/// every label `0..K`.
pub fn analogy_grid(model: &StructuredVAE, seeds: &Tensor) -> Result<ImageGrid> {
    require_image_model(model)?;
    let k = model.spec().num_classes;
    let n = seeds.rows();
    let predicted = model.predict(seeds)?;
    let z = model.style_mean(seeds, &Tensor::one_hot(&predicted, k)?)?;

    let mut grid = ImageGrid::new(n, k + 1);
    for r in 0..n {
        grid.set_cell(r, 0, seeds.row(r));
    }
    for class in 0..k {
        let images = model.decode_means(&z, &Tensor::one_hot(&vec![class; n], k)?)?;
        for r in 0..n {
            grid.set_cell(r, class + 1, images.row(r));
        }
    }
    Ok(grid)
}

/// Coordinates of a uniform `g`-point lattice over `[-c, c]`; the middle
/// point of an odd lattice is exactly zero.
pub fn lattice(g: usize, c: f64) -> Vec<f64> {
    if g == 1 {
        return vec![0.0];
    }
    let span = (g - 1) as f64;
    (0..g).map(|i| c * (2.0 * i as f64 - span) / span).collect()
}

/// Decodings of label `label` over a `g × g` lattice of 2-D styles in
/// `[-c, c]²`; cell `(i, j)` uses `z = (lattice[j], lattice[i])`.
pub fn style_sweep_grid(model: &StructuredVAE, label: usize, g: usize, c: f64) -> Result<ImageGrid> {
    require_image_model(model)?;
    let spec = model.spec();
    if spec.style_dim != 2 {
        return Err(Error::contract(alloc::format!(
            "style sweep needs a 2-dimensional style, model has {}",
            spec.style_dim
        )));
    }
    if label >= spec.num_classes || g == 0 {
        return Err(Error::contract(alloc::format!(
            "invalid sweep: label {label}, grid {g}"
        )));
    }
    let coords = lattice(g, c);
    let mut z = Vec::with_capacity(g * g * 2);
    for &zy in &coords {
        for &zx in &coords {
            z.push(zx);
            z.push(zy);
        }
    }
    let z = Tensor::new([g * g, 2], z)?;
    let images = model.decode_means(&z, &Tensor::one_hot(&vec![label; g * g], spec.num_classes)?)?;
    let mut grid = ImageGrid::new(g, g);
    for i in 0..g {
        for j in 0..g {
            grid.set_cell(i, j, images.row(i * g + j));
        }
    }
    Ok(grid)
}

/// Fraction of generated analogy cells (columns `1..=K`) that the label head
/// assigns to the label they were generated from.
pub fn analogy_consistency(model: &StructuredVAE, grid: &ImageGrid) -> Result<f64> {
    let k = model.spec().num_classes;
    let mut cells = Vec::new();
    let mut want = Vec::new();
    for r in 0..grid.rows {
        for class in 0..k {
            cells.extend(grid.cell(r, class + 1));
            want.push(class);
        }
    }
    agreement(model, cells, &want)
}

/// Fraction of sweep cells classified as `label`.
pub fn sweep_consistency(model: &StructuredVAE, grid: &ImageGrid, label: usize) -> Result<f64> {
    let mut cells = Vec::new();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            cells.extend(grid.cell(r, c));
        }
    }
    let want = vec![label; grid.rows * grid.cols];
    agreement(model, cells, &want)
}

fn agreement(model: &StructuredVAE, pixels: Vec<f64>, want: &[usize]) -> Result<f64> {
    let x = Tensor::new([want.len(), CELL * CELL], pixels)?;
    let pred = model.predict(&x)?;
    Ok(1.0 - error_pct(&pred, want) / 100.0)
}
