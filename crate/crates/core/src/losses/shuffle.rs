use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

fn cell_geometry(len: usize, channels: usize, height: usize, width: usize, grid: (usize, usize)) -> Result<(usize, usize)> {
    let (rows, cols) = grid;
    if len != channels * height * width {
        return Err(Error::invalid(format!(
            "{len} values for a {channels}x{height}x{width} image"
        )));
    }
    if rows == 0 || cols == 0 || height % rows != 0 || width % cols != 0 {
        return Err(Error::invalid(format!(
            "{height}x{width} image is not divisible into a {rows}x{cols} grid"
        )));
    }
    Ok((height / rows, width / cols))
}

/// Rearranges grid cells of a planar `C × H × W` image: output cell `i` (row-major)
/// receives input cell `perm[i]`.
pub fn shuffle_cells(
    image: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    grid: (usize, usize),
    perm: &[usize],
) -> Result<Vec<f64>> {
    let (ch, cw) = cell_geometry(image.len(), channels, height, width, grid)?;
    let cells = grid.0 * grid.1;
    let mut seen = vec![false; cells];
    if perm.len() != cells || perm.iter().any(|&p| p >= cells || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::invalid(format!("not a permutation of {cells} cells")));
    }
    let mut out = vec![0.0; image.len()];
    for (dst, &src) in perm.iter().enumerate() {
        let (dr, dc) = (dst / grid.1 * ch, dst % grid.1 * cw);
        let (sr, sc) = (src / grid.1 * ch, src % grid.1 * cw);
        for c in 0..channels {
            let plane = c * height * width;
            for y in 0..ch {
                let d = plane + (dr + y) * width + dc;
                let s = plane + (sr + y) * width + sc;
                out[d..d + cw].copy_from_slice(&image[s..s + cw]);
            }
        }
    }
    Ok(out)
}

/// Permutes the cells of a `rows × cols` grid uniformly at random.
pub fn spatial_shuffle<R: Rng + ?Sized>(
    image: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    grid: (usize, usize),
    rng: &mut R,
) -> Result<Vec<f64>> {
    cell_geometry(image.len(), channels, height, width, grid)?;
    let mut perm: Vec<usize> = (0..grid.0 * grid.1).collect();
    perm.shuffle(rng);
    shuffle_cells(image, channels, height, width, grid, &perm)
}
