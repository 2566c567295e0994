//! Binary morphology with disk structuring elements, and connected components.

use std::collections::VecDeque;

use crate::image::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
}

fn disk(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dx, dy));
            }
        }
    }
    offsets
}

/// Erosion or dilation by a disk of `radius` pixels. Pixels outside the
/// image count as background, so erosion shrinks masks touching the border.
pub fn morphology(mask: &Mask, op: MorphOp, radius: u32) -> Mask {
    match op {
        MorphOp::Erode => erode_with_border(mask, radius, false),
        MorphOp::Dilate => dilate(mask, radius),
    }
}

pub fn erode(mask: &Mask, radius: u32) -> Mask {
    erode_with_border(mask, radius, false)
}

pub fn dilate(mask: &Mask, radius: u32) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk(radius);
    let mut out = Mask::filled(mask.width(), mask.height(), false);
    for v in 0..mask.height() {
        for u in 0..mask.width() {
            if !*mask.get(u, v) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (x, y) = (u as i64 + dx, v as i64 + dy);
                if x >= 0 && y >= 0 && x < mask.width() as i64 && y < mask.height() as i64 {
                    out.set(x as u32, y as u32, true);
                }
            }
        }
    }
    out
}

fn erode_with_border(mask: &Mask, radius: u32, border: bool) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk(radius);
    Mask::from_fn(mask.width(), mask.height(), |u, v| {
        *mask.get(u, v)
            && offsets
                .iter()
                .all(|&(dx, dy)| mask.get_checked(u as i64 + dx, v as i64 + dy).copied().unwrap_or(border))
    })
}

/// Morphological closing (dilate, then erode). The erosion treats the
/// outside of the image as foreground so closing never removes pixels.
pub fn close(mask: &Mask, radius: u32) -> Mask {
    erode_with_border(&dilate(mask, radius), radius, true)
}

/// 8-connected component labels: `0` is background, components are numbered
/// from `1` in row-major order of their first pixel. Returns labels and sizes.
pub fn connected_components(mask: &Mask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut labels = vec![0u32; mask.pixels().len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if !mask.pixels()[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        let mut size = 0usize;
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if mask.pixels()[j] && labels[j] == 0 {
                        labels[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps only the largest 8-connected component (earliest one on ties).
pub fn largest_component(mask: &Mask) -> Mask {
    let (labels, sizes) = connected_components(mask);
    let Some(best) = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u32 + 1)
    else {
        return mask.clone();
    };
    let data = labels.iter().map(|&l| l == best).collect();
    Mask::from_vec(mask.width(), mask.height(), data).expect("same dimensions")
}

/// Number of 8-connected components.
pub fn component_count(mask: &Mask) -> usize {
    connected_components(mask).1.len()
}
