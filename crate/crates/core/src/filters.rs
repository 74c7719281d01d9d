//! Mask-aware smoothing and resampling used by solver initialization and
//! the evaluation baseline: a self-guided guided filter, nearest-neighbor
//! hole filling, and bicubic (Catmull-Rom) upsampling with clamped borders.

use crate::grid::{Grid, Mask};

/// Box sums over a square window, counting masked-in pixels only.
/// Returns (sums, counts); masked-out pixels get sum 0, count 0.
fn box_sums(values: &Grid<f64>, mask: &Mask, radius: usize) -> (Grid<f64>, Grid<f64>) {
    let (w, h) = (mask.width(), mask.height());
    // integral images with a zero top row / left column
    let mut int_v = vec![0.0; (w + 1) * (h + 1)];
    let mut int_c = vec![0.0; (w + 1) * (h + 1)];
    for r in 0..h {
        for c in 0..w {
            let inside = mask.is_set(r, c);
            let v = if inside { values.get(r, c) } else { 0.0 };
            let k = if inside { 1.0 } else { 0.0 };
            let at = (r + 1) * (w + 1) + (c + 1);
            int_v[at] = v + int_v[at - 1] + int_v[at - (w + 1)] - int_v[at - (w + 1) - 1];
            int_c[at] = k + int_c[at - 1] + int_c[at - (w + 1)] - int_c[at - (w + 1) - 1];
        }
    }
    let window = |int: &[f64], r0: usize, r1: usize, c0: usize, c1: usize| -> f64 {
        // inclusive pixel ranges
        int[(r1 + 1) * (w + 1) + (c1 + 1)] - int[r0 * (w + 1) + (c1 + 1)]
            - int[(r1 + 1) * (w + 1) + c0]
            + int[r0 * (w + 1) + c0]
    };
    let mut sums = Grid::filled(w, h, 0.0);
    let mut counts = Grid::filled(w, h, 0.0);
    for r in 0..h {
        for c in 0..w {
            if !mask.is_set(r, c) {
                continue;
            }
            let r0 = r.saturating_sub(radius);
            let r1 = (r + radius).min(h - 1);
            let c0 = c.saturating_sub(radius);
            let c1 = (c + radius).min(w - 1);
            sums.set(r, c, window(&int_v, r0, r1, c0, c1));
            counts.set(r, c, window(&int_c, r0, r1, c0, c1));
        }
    }
    (sums, counts)
}

fn box_mean(values: &Grid<f64>, mask: &Mask, radius: usize) -> Grid<f64> {
    let (sums, counts) = box_sums(values, mask, radius);
    let mut out = Grid::filled(mask.width(), mask.height(), f64::NAN);
    for &idx in mask.packed() {
        out.data_mut()[idx] = sums.data()[idx] / counts.data()[idx];
    }
    out
}

/// Self-guided guided filter on a masked scalar grid.
///
/// `radius = 0` is the identity. Constants are preserved exactly.
pub fn guided_filter_self(
    values: &Grid<f64>,
    mask: &Mask,
    radius: usize,
    epsilon: f64,
) -> Grid<f64> {
    if radius == 0 {
        return values.clone();
    }
    let mean = box_mean(values, mask, radius);
    let sq = Grid::from_vec(
        values.width(),
        values.height(),
        values.data().iter().map(|&v| v * v).collect(),
    )
    .expect("same size");
    let mean_sq = box_mean(&sq, mask, radius);

    let mut a = Grid::filled(mask.width(), mask.height(), f64::NAN);
    let mut b = Grid::filled(mask.width(), mask.height(), f64::NAN);
    for &idx in mask.packed() {
        let mu = mean.data()[idx];
        let var = (mean_sq.data()[idx] - mu * mu).max(0.0);
        let ai = var / (var + epsilon);
        a.data_mut()[idx] = ai;
        b.data_mut()[idx] = (1.0 - ai) * mu;
    }
    let mean_a = box_mean(&a, mask, radius);
    let mean_b = box_mean(&b, mask, radius);
    let mut out = Grid::filled(mask.width(), mask.height(), f64::NAN);
    for &idx in mask.packed() {
        out.data_mut()[idx] = mean_a.data()[idx] * values.data()[idx] + mean_b.data()[idx];
    }
    out
}

/// Fills masked-out pixels with the value of the nearest masked-in pixel
/// (multi-source BFS, 4-connectivity). Panics on an empty mask.
pub fn inpaint_nearest(values: &Grid<f64>, mask: &Mask) -> Grid<f64> {
    assert!(!mask.is_empty(), "inpainting needs at least one source pixel");
    let (w, h) = (mask.width(), mask.height());
    let mut out = values.clone();
    let mut visited = vec![false; w * h];
    let mut queue = std::collections::VecDeque::new();
    for &idx in mask.packed() {
        visited[idx] = true;
        queue.push_back(idx);
    }
    while let Some(idx) = queue.pop_front() {
        let (r, c) = (idx / w, idx % w);
        let mut push = |nr: usize, nc: usize, out: &mut Grid<f64>| {
            let nidx = nr * w + nc;
            if !visited[nidx] {
                visited[nidx] = true;
                let v = out.data()[idx];
                out.data_mut()[nidx] = v;
                queue.push_back(nidx);
            }
        };
        if r > 0 {
            push(r - 1, c, &mut out);
        }
        if r + 1 < h {
            push(r + 1, c, &mut out);
        }
        if c > 0 {
            push(r, c - 1, &mut out);
        }
        if c + 1 < w {
            push(r, c + 1, &mut out);
        }
    }
    out
}

/// Catmull-Rom kernel (cubic convolution, a = -1/2).
fn cubic_weight(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic upsampling by an integer factor with clamped borders.
///
/// HR pixel centers map to LR coordinates `(x + 0.5) / s - 0.5`, matching
/// the block-averaging downsampler alignment. `scale = 1` copies bitwise.
/// The input must be hole-free (see [`inpaint_nearest`]).
pub fn bicubic_upsample(lr: &Grid<f64>, scale: usize, hr_width: usize, hr_height: usize) -> Grid<f64> {
    if scale == 1 && lr.width() == hr_width && lr.height() == hr_height {
        return lr.clone();
    }
    let (lw, lh) = (lr.width(), lr.height());
    let clamp = |v: isize, hi: usize| -> usize { v.clamp(0, hi as isize - 1) as usize };
    Grid::from_fn(hr_width, hr_height, |r, c| {
        let sy = (r as f64 + 0.5) / scale as f64 - 0.5;
        let sx = (c as f64 + 0.5) / scale as f64 - 0.5;
        let y0 = sy.floor() as isize;
        let x0 = sx.floor() as isize;
        let mut acc = 0.0;
        for dy in -1..=2isize {
            let wy = cubic_weight(sy - (y0 + dy) as f64);
            if wy == 0.0 {
                continue;
            }
            let rr = clamp(y0 + dy, lh);
            for dx in -1..=2isize {
                let wx = cubic_weight(sx - (x0 + dx) as f64);
                if wx == 0.0 {
                    continue;
                }
                acc += wy * wx * lr.get(rr, clamp(x0 + dx, lw));
            }
        }
        acc
    })
}

/// The full LR-to-HR depth lift used by both pipelines: guided filter on
/// the masked LR grid, hole filling, bicubic upsampling, HR mask applied.
pub fn upsample_depth(
    lr: &Grid<f64>,
    lr_mask: &Mask,
    hr_mask: &Mask,
    scale: usize,
    guided_radius: usize,
    guided_epsilon: f64,
) -> Grid<f64> {
    let smoothed = guided_filter_self(lr, lr_mask, guided_radius, guided_epsilon);
    let filled = inpaint_nearest(&smoothed, lr_mask);
    let hr = bicubic_upsample(&filled, scale, hr_mask.width(), hr_mask.height());
    let mut out = Grid::filled(hr_mask.width(), hr_mask.height(), f64::NAN);
    for &idx in hr_mask.packed() {
        out.data_mut()[idx] = hr.data()[idx];
    }
    out
}
