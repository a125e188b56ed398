//! Painting element embeddings into their boxes on the feature-map grid.
//!
//! A grid cell belongs to a box when the cell centre lies in the half-open box
//! `[x0, x1) × [y0, y1)`. Boxes too small to contain any centre keep the one
//! cell that holds the box centre, so every element lands somewhere.

use crate::autodiff::{Graph, ParamStore, Var};
use crate::element::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary h × w grid marking the cells a box covers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlayMask {
    height: usize,
    width: usize,
    cells: Vec<u8>,
}

impl OverlayMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col] == 1
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    /// Row-major indices of covered cells.
    pub fn indices(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == 1).then_some(i))
            .collect()
    }

    /// The mask as an h × w × 1 tensor of zeros and ones.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.cells.iter().map(|&c| f32::from(c)).collect();
        Tensor::new(vec![self.height, self.width, 1], data).expect("positive extents")
    }
}

fn covered(lo: f32, hi: f32, n: usize) -> impl Iterator<Item = usize> {
    let (lo, hi) = (f64::from(lo), f64::from(hi));
    (0..n).filter(move |&i| {
        let centre = (i as f64 + 0.5) / n as f64;
        lo <= centre && centre < hi
    })
}

pub fn calc_overlay(bbox: &BBox, height: usize, width: usize) -> OverlayMask {
    assert!(height > 0 && width > 0, "grid extents must be positive");
    let mut cells = vec![0u8; height * width];
    let cols: Vec<usize> = covered(bbox.x0(), bbox.x1(), width).collect();
    let mut any = false;
    for r in covered(bbox.y0(), bbox.y1(), height) {
        for &c in &cols {
            cells[r * width + c] = 1;
            any = true;
        }
    }
    if !any {
        let cx = (f64::from(bbox.x0()) + f64::from(bbox.x1())) / 2.0;
        let cy = (f64::from(bbox.y0()) + f64::from(bbox.y1())) / 2.0;
        let c = ((cx * width as f64).floor() as usize).min(width - 1);
        let r = ((cy * height as f64).floor() as usize).min(height - 1);
        cells[r * width + c] = 1;
    }
    OverlayMask {
        height,
        width,
        cells,
    }
}

/// Sums each attended embedding (row i of `attended`) into the cells of box i.
/// `None` stands for an empty element list and yields a zero map of depth
/// `depth`.
pub fn project_elements(
    g: &mut Graph<'_>,
    attended: Option<Var>,
    bboxes: &[BBox],
    height: usize,
    width: usize,
    depth: usize,
) -> Result<Var> {
    let Some(rows) = attended else {
        if !bboxes.is_empty() {
            return Err(Error::invalid("project_elements", "boxes given without embeddings"));
        }
        return Ok(g.input(Tensor::zeros(&[height, width, depth])));
    };
    let n = g.value(rows).shape()[0];
    if n != bboxes.len() {
        return Err(Error::invalid(
            "project_elements",
            format!("{n} embeddings but {} boxes", bboxes.len()),
        ));
    }
    let cells = bboxes
        .iter()
        .map(|b| calc_overlay(b, height, width).indices())
        .collect();
    g.project_rows(rows, cells, height, width)
}

/// Tiles the mean attended embedding over the grid instead of projecting.
pub fn tile_average_baseline(
    g: &mut Graph<'_>,
    attended: Option<Var>,
    height: usize,
    width: usize,
    depth: usize,
) -> Result<Var> {
    match attended {
        None => Ok(g.input(Tensor::zeros(&[height, width, depth]))),
        Some(rows) => {
            let mean = g.mean_rows(rows)?;
            g.tile_spatial(mean, height, width)
        }
    }
}

/// Stacks per-element vectors into an `[N, d]` tensor; `None` when empty.
fn stack(embeddings: &[Vec<f32>]) -> Result<Option<Tensor>> {
    let Some(first) = embeddings.first() else {
        return Ok(None);
    };
    let d = first.len();
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::invalid("stack", "embeddings differ in length"));
    }
    Tensor::new(vec![embeddings.len(), d], embeddings.concat()).map(Some)
}

/// [`project_elements`] on plain vectors.
pub fn project_embeddings(
    embeddings: &[Vec<f32>],
    bboxes: &[BBox],
    height: usize,
    width: usize,
    depth: usize,
) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let rows = stack(embeddings)?.map(|t| g.input(t));
    let out = project_elements(&mut g, rows, bboxes, height, width, depth)?;
    Ok(g.value(out).clone())
}

/// [`tile_average_baseline`] on plain vectors.
pub fn tile_average(embeddings: &[Vec<f32>], height: usize, width: usize, depth: usize) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let rows = stack(embeddings)?.map(|t| g.input(t));
    let out = tile_average_baseline(&mut g, rows, height, width, depth)?;
    Ok(g.value(out).clone())
}
