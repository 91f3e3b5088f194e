//! Binary morphology on masks: disk dilation/erosion, smoothing, and
//! connected-component labelling.

use super::BinaryMask;

/// Integer offsets of the disk of radius `r` (Euclidean, inclusive).
fn disk_offsets(r: u32) -> Vec<(i32, i32)> {
    let r = r as i32;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

fn apply_disk(mask: &BinaryMask, r: u32, dilate: bool) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height(), mask.width());
    let offsets = disk_offsets(r);
    let mut out = BinaryMask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut hit = !dilate;
            for &(dy, dx) in &offsets {
                let ny = y as i32 + dy;
                let nx = x as i32 + dx;
                let inside = ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w;
                let v = inside && mask.get(ny as usize, nx as usize);
                if dilate {
                    if v {
                        hit = true;
                        break;
                    }
                } else if !v {
                    // Out-of-frame counts as background, so erosion shrinks
                    // shapes touching the border.
                    hit = false;
                    break;
                }
            }
            if hit {
                out.set(y, x, true);
            }
        }
    }
    out
}

pub fn dilate_disk(mask: &BinaryMask, r: u32) -> BinaryMask {
    apply_disk(mask, r, true)
}

pub fn erode_disk(mask: &BinaryMask, r: u32) -> BinaryMask {
    apply_disk(mask, r, false)
}

/// Morphological closing then opening with a disk of radius `r`; removes
/// boundary detail below that scale in both directions.
pub fn smooth_disk(mask: &BinaryMask, r: u32) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let closed = erode_disk(&dilate_disk(mask, r), r);
    dilate_disk(&erode_disk(&closed, r), r)
}

/// 8-connected component labels (0 = background, components numbered from 1).
/// Returns the label grid and the component count.
pub fn connected_components(mask: &BinaryMask) -> (Vec<u32>, usize) {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask.get(y0, x0) || labels[y0 * w + x0] != 0 {
                continue;
            }
            next += 1;
            labels[y0 * w + x0] = next;
            stack.push((y0, x0));
            while let Some((y, x)) = stack.pop() {
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let ny = y as i32 + dy;
                        let nx = x as i32 + dx;
                        if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask.get(ny, nx) && labels[ny * w + nx] == 0 {
                            labels[ny * w + nx] = next;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(h: usize, w: usize, cy: f64, cx: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            dy * dy + dx * dx <= r * r
        })
    }

    #[test]
    fn dilation_grows_erosion_shrinks() {
        let m = disc(32, 32, 16.0, 16.0, 6.0);
        let grown = dilate_disk(&m, 2);
        let shrunk = erode_disk(&m, 2);
        assert!(grown.area() > m.area());
        assert!(shrunk.area() < m.area());
        assert!(!shrunk.is_empty());
    }

    #[test]
    fn radius_zero_is_identity() {
        let m = disc(16, 16, 8.0, 8.0, 4.0);
        assert!(dilate_disk(&m, 0).grid_eq(&m));
        assert!(erode_disk(&m, 0).grid_eq(&m));
        assert!(smooth_disk(&m, 0).grid_eq(&m));
    }

    #[test]
    fn erosion_then_dilation_stays_inside() {
        let m = disc(32, 32, 16.0, 16.0, 7.0);
        let opened = dilate_disk(&erode_disk(&m, 2), 2);
        for y in 0..32 {
            for x in 0..32 {
                assert!(!opened.get(y, x) || m.get(y, x));
            }
        }
    }

    #[test]
    fn component_count() {
        let mut m = BinaryMask::empty(10, 10);
        m.set(1, 1, true);
        m.set(2, 2, true); // diagonal touch: same component under 8-connectivity
        m.set(7, 7, true);
        let (_, n) = connected_components(&m);
        assert_eq!(n, 2);
    }
}
