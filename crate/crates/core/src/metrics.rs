//! Reference metrics: hard and soft Dice, pairwise agreement, Fleiss' kappa,
//! the AS² alignment measure, and contour shape features.
//!
//! Everything here is a pure function; training losses wrap [`soft_dice`],
//! evaluation wraps the rest.

use crate::data::BinaryMask;
use crate::error::{Error, Result};

/// Hard Dice overlap of two binary masks.
///
/// Two empty masks have Dice 1: both raters agree there is nothing.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimMismatch(format!(
            "dice: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let mut inter = 0u64;
    let mut total = 0u64;
    for (&va, &vb) in a.grid().iter().zip(b.grid()) {
        inter += (va & vb) as u64;
        total += (va + vb) as u64;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Differentiable Dice between a probability plane and a binary target:
/// `(2*sum(pred*target) + smooth) / (sum(pred) + sum(target) + smooth)`.
///
/// Sums accumulate in f64. A zero denominator (both empty, smooth = 0)
/// returns 1, matching the hard-Dice convention.
pub fn soft_dice(pred: &[f32], target: &BinaryMask, smooth: f64) -> Result<f64> {
    let n = target.height() * target.width();
    if pred.len() != n {
        return Err(Error::DimMismatch(format!(
            "soft_dice: pred length {} vs target {}x{}",
            pred.len(),
            target.height(),
            target.width()
        )));
    }
    let mut inter = 0.0f64;
    let mut pred_sum = 0.0f64;
    let mut target_sum = 0.0f64;
    for (&p, &t) in pred.iter().zip(target.grid()) {
        pred_sum += p as f64;
        if t != 0 {
            inter += p as f64;
            target_sum += 1.0;
        }
    }
    let denom = pred_sum + target_sum + smooth;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * inter + smooth) / denom)
}

/// Mean Dice over all unordered pairs of masks.
pub fn pairwise_dice(masks: &[BinaryMask]) -> Result<f64> {
    if masks.len() < 2 {
        return Err(Error::InvalidInput(
            "pairwise_dice requires at least 2 masks".into(),
        ));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            sum += dice(&masks[i], &masks[j])?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Fleiss' kappa over ≥2 masks of one image: each pixel is a subject, each
/// mask a rater, with two categories (foreground/background).
///
/// When chance agreement is already perfect (every rating in one category),
/// the observed agreement is perfect too and the convention returns 1.
pub fn fleiss_kappa(masks: &[BinaryMask]) -> Result<f64> {
    if masks.len() < 2 {
        return Err(Error::InvalidInput(
            "fleiss_kappa requires at least 2 masks".into(),
        ));
    }
    let first = &masks[0];
    for m in &masks[1..] {
        if !m.same_dims(first) {
            return Err(Error::DimMismatch("fleiss_kappa: mask dims differ".into()));
        }
    }
    let n_subjects = first.height() * first.width();
    let n_raters = masks.len() as f64;

    let mut p_obs_sum = 0.0f64;
    let mut fg_total = 0.0f64;
    for idx in 0..n_subjects {
        let fg = masks.iter().filter(|m| m.grid()[idx] != 0).count() as f64;
        let bg = n_raters - fg;
        p_obs_sum += (fg * (fg - 1.0) + bg * (bg - 1.0)) / (n_raters * (n_raters - 1.0));
        fg_total += fg;
    }
    let p_obs = p_obs_sum / n_subjects as f64;
    let p_fg = fg_total / (n_subjects as f64 * n_raters);
    let p_exp = p_fg * p_fg + (1.0 - p_fg) * (1.0 - p_fg);

    if (1.0 - p_exp).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((p_obs - p_exp) / (1.0 - p_exp))
}

/// Fractions of a group's masks assigned to each of M ≥ 2 styles.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleAssignmentDistribution {
    q: Vec<f64>,
}

impl StyleAssignmentDistribution {
    /// Validates: at least two styles, non-negative entries, sum 1 ± 1e-9.
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.len() < 2 {
            return Err(Error::InvalidInput(
                "AS² undefined for a single style".into(),
            ));
        }
        if q.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput(
                "assignment fractions must be non-negative".into(),
            ));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "assignment fractions sum to {total}, expected 1"
            )));
        }
        Ok(StyleAssignmentDistribution { q })
    }

    /// Builds the distribution from per-style assignment counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidInput("no assignments".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn fractions(&self) -> &[f64] {
        &self.q
    }

    pub fn style_count(&self) -> usize {
        self.q.len()
    }

    /// Index (1-based) of the most frequent style; lowest index on ties.
    pub fn modal_style(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.q.iter().enumerate() {
            if v > self.q[best] {
                best = i;
            }
        }
        best + 1
    }
}

/// Annotator-style alignment strength: one minus the normalized Shannon
/// entropy of the assignment fractions. 1 for a one-hot assignment, 0 for a
/// uniform one. `0·log2(0)` counts as 0.
pub fn as2(q: &StyleAssignmentDistribution) -> f64 {
    let m = q.style_count() as f64;
    let mut entropy = 0.0;
    for &v in q.fractions() {
        if v > 0.0 {
            entropy -= v * v.log2();
        }
    }
    1.0 - entropy / m.log2()
}

/// Convenience: validate fractions and compute AS² in one call.
pub fn as2_of_fractions(q: &[f64]) -> Result<f64> {
    Ok(as2(&StyleAssignmentDistribution::new(q.to_vec())?))
}

/// Contour-derived shape descriptors of one mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeFeatures {
    /// Foreground pixel count.
    pub area: f64,
    /// Corrected arc length of the traced outer contour(s).
    pub perimeter: f64,
    /// P² / (4πA); 1 for a perfect circle, larger for jagged boundaries.
    pub border_irregularity: f64,
    /// Convex hull area / A; ~1 for convex shapes.
    pub compactness: f64,
}

// Raw chain codes overestimate smooth boundaries by up to 8% (staircase
// effect), so the perimeter is the arc length of the traced contour after a
// 3-point circular moving average of its vertices, which straightens the
// staircase while barely rounding true corners.
const SMOOTH_WINDOW: usize = 3;

pub fn shape_features(mask: &BinaryMask) -> Result<ShapeFeatures> {
    if mask.is_empty() {
        return Err(Error::InvalidInput(
            "shape_features requires a non-empty mask".into(),
        ));
    }
    let area = mask.area() as f64;
    let perimeter = contour_perimeter(mask);
    let border_irregularity = perimeter * perimeter / (4.0 * std::f64::consts::PI * area);
    let hull_area = convex_hull_area(mask);
    let compactness = hull_area / area;
    Ok(ShapeFeatures {
        area,
        perimeter,
        border_irregularity,
        compactness,
    })
}

/// Traced outer contours (pixel centres) of every 8-connected component.
#[doc(hidden)]
pub fn outer_contours(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (labels, n) = crate::data::connected_components(mask);
    let w = mask.width();
    (1..=n as u32)
        .map(|comp| {
            let start_idx = labels.iter().position(|&l| l == comp).unwrap();
            let start = (start_idx / w, start_idx % w);
            trace_contour(mask, &labels, comp, start)
        })
        .collect()
}

/// Sum of outer-contour arc lengths over all 8-connected components.
fn contour_perimeter(mask: &BinaryMask) -> f64 {
    let (labels, n) = crate::data::connected_components(mask);
    let w = mask.width();
    let mut total = 0.0;
    for comp in 1..=n as u32 {
        // Uppermost-leftmost pixel in scan order is the trace start.
        let start_idx = labels.iter().position(|&l| l == comp).unwrap();
        let start = (start_idx / w, start_idx % w);
        let contour = trace_contour(mask, &labels, comp, start);
        let comp_area = labels.iter().filter(|&&l| l == comp).count();
        total += polygon_arc_length(&contour, comp_area);
    }
    total
}

const DIRS: [(i32, i32); 8] = [
    (0, 1),   // E
    (1, 1),   // SE
    (1, 0),   // S
    (1, -1),  // SW
    (0, -1),  // W
    (-1, -1), // NW
    (-1, 0),  // N
    (-1, 1),  // NE
];

fn component_at(
    mask: &BinaryMask,
    labels: &[u32],
    comp: u32,
    y: i32,
    x: i32,
) -> bool {
    if y < 0 || x < 0 || y as usize >= mask.height() || x as usize >= mask.width() {
        return false;
    }
    labels[y as usize * mask.width() + x as usize] == comp
}

/// Moore-neighbour tracing with Jacob's stopping criterion, clockwise,
/// starting from the west neighbour of the uppermost-leftmost pixel.
fn trace_contour(
    mask: &BinaryMask,
    labels: &[u32],
    comp: u32,
    start: (usize, usize),
) -> Vec<(usize, usize)> {
    let (sy, sx) = (start.0 as i32, start.1 as i32);

    // Scan the 8 neighbours of (sy, sx) clockwise starting west.
    let first = (0..8).map(|k| (4 + k) % 8).find(|&d| {
        let (dy, dx) = DIRS[d];
        component_at(mask, labels, comp, sy + dy, sx + dx)
    });
    let Some(first_dir) = first else {
        return vec![start]; // isolated pixel
    };

    let mut contour = vec![start];
    let mut cy = sy + DIRS[first_dir].0;
    let mut cx = sx + DIRS[first_dir].1;
    let mut arrived = first_dir;

    loop {
        let next = next_contour_dir(mask, labels, comp, cy, cx, arrived);
        if (cy, cx) == (sy, sx) {
            // Jacob's criterion: stop when re-entering the start pixel about
            // to repeat the initial move.
            match next {
                Some(d) if d == first_dir => break,
                None => break,
                _ => {}
            }
        }
        contour.push((cy as usize, cx as usize));
        match next {
            Some(d) => {
                cy += DIRS[d].0;
                cx += DIRS[d].1;
                arrived = d;
            }
            None => break,
        }
        if contour.len() > 4 * labels.len() + 8 {
            break; // guards against pathological loops; unreachable for valid traces
        }
    }
    contour
}

/// Next clockwise contour move when the last move had direction `arrived`:
/// start the scan two steps counter-clockwise from it.
fn next_contour_dir(
    mask: &BinaryMask,
    labels: &[u32],
    comp: u32,
    y: i32,
    x: i32,
    arrived: usize,
) -> Option<usize> {
    let start = (arrived + 6) % 8;
    (0..8).map(|k| (start + k) % 8).find(|&d| {
        let (dy, dx) = DIRS[d];
        component_at(mask, labels, comp, y + dy, x + dx)
    })
}

/// Closed-polygon arc length of a traced contour after the 3-point vertex
/// smoothing. Degenerate contours (fewer than 3 points) fall back to the
/// unit-square boundary of the component.
fn polygon_arc_length(contour: &[(usize, usize)], comp_area: usize) -> f64 {
    let n = contour.len();
    if n < 3 {
        return 2.0 + 2.0 * comp_area as f64;
    }
    let half = SMOOTH_WINDOW / 2;
    let smoothed: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let mut sy = 0.0;
            let mut sx = 0.0;
            for k in 0..SMOOTH_WINDOW {
                let (y, x) = contour[(i + n + k - half) % n];
                sy += y as f64;
                sx += x as f64;
            }
            (sy / SMOOTH_WINDOW as f64, sx / SMOOTH_WINDOW as f64)
        })
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        let (y0, x0) = smoothed[i];
        let (y1, x1) = smoothed[(i + 1) % n];
        total += ((y1 - y0) * (y1 - y0) + (x1 - x0) * (x1 - x0)).sqrt();
    }
    total
}

/// Convex hull area over pixel corner points (the union of unit squares),
/// via Andrew's monotone chain and the shoelace formula.
fn convex_hull_area(mask: &BinaryMask) -> f64 {
    let (h, w) = (mask.height(), mask.width());
    let mut pts: Vec<(i64, i64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                pts.push((x as i64, y as i64));
                pts.push((x as i64 + 1, y as i64));
                pts.push((x as i64, y as i64 + 1));
                pts.push((x as i64 + 1, y as i64 + 1));
            }
        }
    }
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }

    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| -> i64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };

    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    let mut twice_area = 0i64;
    for i in 0..hull.len() {
        let (x0, y0) = hull[i];
        let (x1, y1) = hull[(i + 1) % hull.len()];
        twice_area += x0 * y1 - x1 * y0;
    }
    (twice_area.abs() as f64) / 2.0
}

/// One row of the long-form normalized shape table.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleShapeRow {
    pub image_id: String,
    /// 1-based style index.
    pub style: usize,
    pub area_ratio: f64,
    pub perimeter_ratio: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StyleShapeTable {
    pub rows: Vec<StyleShapeRow>,
    /// Images whose first-style reference was missing or degenerate.
    pub skipped_images: Vec<String>,
}

/// Normalizes per-image, per-style shape features against the first style:
/// each image's style-1 row maps to (1.0, 1.0). `None` cells (styles with no
/// usable mask for that image) are skipped; images whose style-1 reference is
/// missing or has zero area/perimeter are skipped entirely.
pub fn normalized_style_shapes(
    per_image: &[(String, Vec<Option<ShapeFeatures>>)],
) -> StyleShapeTable {
    let mut table = StyleShapeTable::default();
    for (image_id, features) in per_image {
        let reference = match features.first().and_then(|f| *f) {
            Some(f) if f.area > 0.0 && f.perimeter > 0.0 => f,
            _ => {
                eprintln!("warning: {image_id}: style-1 reference unusable; rows skipped");
                table.skipped_images.push(image_id.clone());
                continue;
            }
        };
        for (j, cell) in features.iter().enumerate() {
            let Some(f) = cell else { continue };
            table.rows.push(StyleShapeRow {
                image_id: image_id.clone(),
                style: j + 1,
                area_ratio: f.area / reference.area,
                perimeter_ratio: f.perimeter / reference.perimeter,
            });
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::StyleParams;

    fn disc(size: usize, r: f64) -> BinaryMask {
        let c = size as f64 / 2.0;
        BinaryMask::from_fn(size, size, |y, x| {
            let dy = y as f64 + 0.5 - c;
            let dx = x as f64 + 0.5 - c;
            dy * dy + dx * dx <= r * r
        })
    }

    fn square(size: usize, side: usize) -> BinaryMask {
        let off = (size - side) / 2;
        BinaryMask::from_fn(size, size, |y, x| {
            (off..off + side).contains(&y) && (off..off + side).contains(&x)
        })
    }

    #[test]
    fn dice_identity_and_disjoint() {
        let a = disc(16, 5.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let left = BinaryMask::from_fn(8, 8, |_, x| x < 4);
        let right = BinaryMask::from_fn(8, 8, |_, x| x >= 4);
        assert_eq!(dice(&left, &right).unwrap(), 0.0);
    }

    #[test]
    fn dice_hand_counted_blocks() {
        // 2x2 block vs the same block shifted by one column: overlap 2 px.
        let a = BinaryMask::from_fn(4, 4, |y, x| (1..3).contains(&y) && (1..3).contains(&x));
        let b = BinaryMask::from_fn(4, 4, |y, x| (1..3).contains(&y) && (2..4).contains(&x));
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn dice_both_empty_is_one() {
        let a = BinaryMask::empty(8, 8);
        let b = BinaryMask::empty(8, 8);
        assert_eq!(dice(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn dice_dim_mismatch_errors() {
        let a = BinaryMask::empty(8, 8);
        let b = BinaryMask::empty(8, 9);
        assert!(dice(&a, &b).is_err());
    }

    #[test]
    fn soft_dice_on_binary_equals_hard() {
        let m = disc(12, 4.0);
        let plane = m.to_plane();
        assert_eq!(soft_dice(&plane, &m, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn soft_dice_half_intensity_two_thirds() {
        let m = disc(12, 4.0);
        let plane: Vec<f32> = m.to_plane().iter().map(|v| 0.5 * v).collect();
        let got = soft_dice(&plane, &m, 0.0).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn soft_dice_smoothing_convention() {
        let empty = BinaryMask::empty(6, 6);
        let zeros = vec![0.0f32; 36];
        assert_eq!(soft_dice(&zeros, &empty, 1.0).unwrap(), 1.0);
        // Zero denominator with smooth = 0 falls back to the hard convention.
        assert_eq!(soft_dice(&zeros, &empty, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn pairwise_dice_enumerates_pairs() {
        let a = BinaryMask::from_fn(4, 4, |y, _| y < 2);
        assert_eq!(pairwise_dice(&[a.clone(), a.clone(), a.clone()]).unwrap(), 1.0);

        // Pairs with Dice {1.0, 0.0, 0.0} -> mean 1/3.
        let b = BinaryMask::from_fn(4, 4, |y, _| y >= 2);
        let got = pairwise_dice(&[a.clone(), a.clone(), b]).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-12);

        assert!(pairwise_dice(&[a]).is_err());
    }

    #[test]
    fn fleiss_kappa_perfect_agreement() {
        let m = disc(10, 3.0);
        let got = fleiss_kappa(&[m.clone(), m.clone(), m]).unwrap();
        assert!((got - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fleiss_kappa_matches_hand_formula() {
        // 2 raters, 4 pixels: r1 = [1,1,0,0], r2 = [1,0,1,0].
        let r1 = BinaryMask::from_fn(1, 4, |_, x| x < 2);
        let r2 = BinaryMask::from_fn(1, 4, |_, x| x % 2 == 0);
        // Per pixel agreements: [1, 0, 0, 1] -> P_obs = 0.5.
        // p_fg = 4/8 = 0.5 -> P_exp = 0.5. kappa = 0.
        let got = fleiss_kappa(&[r1, r2]).unwrap();
        assert!(got.abs() < 1e-12, "{got}");
    }

    #[test]
    fn fleiss_kappa_negative_for_near_disjoint_raters() {
        let left = BinaryMask::from_fn(8, 8, |_, x| x < 4);
        let right = BinaryMask::from_fn(8, 8, |_, x| x >= 4);
        let got = fleiss_kappa(&[left, right]).unwrap();
        assert!(got < 0.0, "{got}");
    }

    #[test]
    fn fleiss_kappa_all_background_convention() {
        let a = BinaryMask::empty(4, 4);
        let b = BinaryMask::empty(4, 4);
        assert_eq!(fleiss_kappa(&[a, b]).unwrap(), 1.0);
    }

    #[test]
    fn as2_paper_values() {
        let q = StyleAssignmentDistribution::new(vec![0.70, 0.15, 0.15]).unwrap();
        assert!((as2(&q) - 0.255).abs() < 0.001);

        let mut v = vec![0.0; 10];
        v[0] = 0.9;
        v[1] = 0.1;
        let q = StyleAssignmentDistribution::new(v).unwrap();
        assert!((as2(&q) - 0.859).abs() < 0.005);
    }

    #[test]
    fn as2_uniform_and_one_hot() {
        for m in 2..8 {
            let q = StyleAssignmentDistribution::new(vec![1.0 / m as f64; m]).unwrap();
            assert!(as2(&q).abs() < 1e-12);

            let mut v = vec![0.0; m];
            v[m / 2] = 1.0;
            let q = StyleAssignmentDistribution::new(v).unwrap();
            assert_eq!(as2(&q), 1.0);
        }
    }

    #[test]
    fn as2_rejects_single_style_and_bad_fractions() {
        assert!(StyleAssignmentDistribution::new(vec![1.0]).is_err());
        assert!(StyleAssignmentDistribution::new(vec![0.6, 0.6]).is_err());
        assert!(StyleAssignmentDistribution::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn disc_irregularity_near_one() {
        let f = shape_features(&disc(80, 30.0)).unwrap();
        assert!(f.border_irregularity < 1.1, "{}", f.border_irregularity);
        assert!(f.border_irregularity > 0.9, "{}", f.border_irregularity);
    }

    #[test]
    fn disc_irregularity_converges_monotonically() {
        let rs = [5.0, 10.0, 20.0, 40.0];
        let vals: Vec<f64> = rs
            .iter()
            .map(|&r| {
                shape_features(&disc((2.5 * r) as usize + 8, r))
                    .unwrap()
                    .border_irregularity
            })
            .collect();
        // Doubling the radius moves the measurement toward the continuous
        // value 1 (from below, under this perimeter convention).
        for pair in vals.windows(2) {
            assert!(
                (1.0 - pair[1]).abs() < (1.0 - pair[0]).abs(),
                "irregularity not converging to 1: {vals:?}"
            );
        }
    }

    #[test]
    fn square_irregularity_near_hand_formula() {
        // Hand value: contour polygon perimeter 4(s-1), so irregularity is
        // (4(s-1))^2 / (4*pi*s^2), approaching 4/pi ~ 1.273 for large s.
        for s in [40usize, 100] {
            let f = shape_features(&square(s + 12, s)).unwrap();
            let hand_p = 4.0 * (s as f64 - 1.0);
            let hand_irr = hand_p * hand_p / (4.0 * std::f64::consts::PI * (s * s) as f64);
            assert!(
                (f.border_irregularity - hand_irr).abs() < 0.1,
                "s={s}: {} vs hand {hand_irr}",
                f.border_irregularity
            );
            // Vertex smoothing only rounds the four corners.
            assert!(
                f.perimeter <= hand_p && f.perimeter > hand_p - 4.0,
                "s={s}: perimeter {} vs 4(s-1)={hand_p}",
                f.perimeter
            );
        }
        let f = shape_features(&square(112, 100)).unwrap();
        assert!(
            (f.border_irregularity - 4.0 / std::f64::consts::PI).abs() < 0.1,
            "large-s limit: {}",
            f.border_irregularity
        );
    }

    #[test]
    fn convex_masks_have_unit_compactness() {
        let f = shape_features(&square(32, 20)).unwrap();
        assert!((f.compactness - 1.0).abs() < 1e-9, "{}", f.compactness);
        let f = shape_features(&disc(70, 25.0)).unwrap();
        assert!((f.compactness - 1.0).abs() < 0.05, "{}", f.compactness);
    }

    #[test]
    fn nonconvex_mask_compactness_above_one() {
        // A plus-sign: hull fills the corners.
        let m = BinaryMask::from_fn(32, 32, |y, x| {
            ((10..22).contains(&y) && (14..18).contains(&x))
                || ((14..18).contains(&y) && (10..22).contains(&x))
        });
        let f = shape_features(&m).unwrap();
        assert!(f.compactness > 1.1, "{}", f.compactness);
    }

    #[test]
    fn jagged_boundary_raises_irregularity() {
        let base = crate::data::generate_base_shape(17, 96);
        let jagged = crate::data::render_style(
            &base,
            &StyleParams {
                margin: 0,
                jaggedness_amplitude: 3.0,
                jaggedness_frequency: 14,
                smoothing_radius: 0,
                seed: 2,
            },
        );
        let f0 = shape_features(&base).unwrap();
        let f1 = shape_features(&jagged).unwrap();
        assert!(f1.border_irregularity > f0.border_irregularity);
    }

    #[test]
    fn single_pixel_shape_is_square_like() {
        let mut m = BinaryMask::empty(5, 5);
        m.set(2, 2, true);
        let f = shape_features(&m).unwrap();
        assert_eq!(f.perimeter, 4.0);
        assert_eq!(f.compactness, 1.0);
    }

    #[test]
    fn empty_mask_rejected() {
        assert!(shape_features(&BinaryMask::empty(4, 4)).is_err());
    }

    #[test]
    fn normalized_shapes_reference_style_is_unit() {
        let f = |a: f64, p: f64| -> Option<ShapeFeatures> {
            Some(ShapeFeatures {
                area: a,
                perimeter: p,
                border_irregularity: 1.0,
                compactness: 1.0,
            })
        };
        let per_image = vec![
            ("a".to_string(), vec![f(100.0, 40.0), f(150.0, 50.0)]),
            ("b".to_string(), vec![f(80.0, 30.0), f(40.0, 15.0)]),
        ];
        let table = normalized_style_shapes(&per_image);
        assert_eq!(table.rows.len(), 4);
        for row in table.rows.iter().filter(|r| r.style == 1) {
            assert_eq!(row.area_ratio, 1.0);
            assert_eq!(row.perimeter_ratio, 1.0);
        }
        let b2 = table
            .rows
            .iter()
            .find(|r| r.image_id == "b" && r.style == 2)
            .unwrap();
        assert_eq!(b2.area_ratio, 0.5);
        assert_eq!(b2.perimeter_ratio, 0.5);
    }

    #[test]
    fn normalized_shapes_skips_missing_reference() {
        let per_image = vec![(
            "a".to_string(),
            vec![
                None,
                Some(ShapeFeatures {
                    area: 1.0,
                    perimeter: 1.0,
                    border_irregularity: 1.0,
                    compactness: 1.0,
                }),
            ],
        )];
        let table = normalized_style_shapes(&per_image);
        assert!(table.rows.is_empty());
        assert_eq!(table.skipped_images, vec!["a".to_string()]);
    }
}
