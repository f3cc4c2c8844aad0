//! Scanline polygon fill.
//!
//! Pixel `(row i, col j)` is set iff its centre `(j + 0.5, i + 0.5)` has a
//! nonzero winding number with respect to at least one polygon. Edge crossings
//! use the half-open rule `y0 <= y < y1`, and a crossing counts only when it
//! lies strictly to the right of the centre.

use ndarray::Array2;

use super::annotation::Polygon;
use super::image::BinaryMask;

/// Union of polygon interiors on a `height × width` grid.
pub fn rasterize_polygons(polygons: &[Polygon], width: usize, height: usize) -> BinaryMask {
    assert!(width >= 1 && height >= 1, "raster must be at least 1×1");
    let mut pixels = Array2::<u8>::zeros((height, width));
    let mut crossings: Vec<(f64, i32)> = Vec::new();
    for poly in polygons {
        for i in 0..height {
            let py = i as f64 + 0.5;
            crossings.clear();
            for ((x0, y0), (x1, y1)) in poly.edges() {
                let dir = if y0 <= py && y1 > py {
                    1
                } else if y1 <= py && y0 > py {
                    -1
                } else {
                    continue;
                };
                let x = x0 + (py - y0) * (x1 - x0) / (y1 - y0);
                crossings.push((x, dir));
            }
            if crossings.is_empty() {
                continue;
            }
            crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
            // winding(px) = sum of directions of crossings with x > px
            let total: i32 = crossings.iter().map(|c| c.1).sum();
            let mut passed = 0;
            let mut k = 0;
            let mut row = pixels.row_mut(i);
            for (j, cell) in row.iter_mut().enumerate() {
                let px = j as f64 + 0.5;
                while k < crossings.len() && crossings[k].0 <= px {
                    passed += crossings[k].1;
                    k += 1;
                }
                if total - passed != 0 {
                    *cell = 1;
                }
            }
        }
    }
    BinaryMask::new(pixels).expect("raster is binary")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(v: &[(f64, f64)]) -> Polygon {
        Polygon::new(v.to_vec()).unwrap()
    }

    #[test]
    fn empty_list_gives_empty_mask() {
        assert_eq!(rasterize_polygons(&[], 8, 8).count_ones(), 0);
    }

    #[test]
    fn full_square_covers_every_centre() {
        let m = rasterize_polygons(&[poly(&[(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)])], 4, 4);
        assert_eq!(m.count_ones(), 16);
    }

    #[test]
    fn triangle_matches_strict_half_plane() {
        let m = rasterize_polygons(&[poly(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)])], 4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let inside = (j as f64 + 0.5) + (i as f64 + 0.5) < 4.0;
                assert_eq!(m.get(i, j), inside, "pixel ({i},{j})");
            }
        }
    }

    #[test]
    fn overlapping_polygons_merge() {
        let a = poly(&[(0.0, 0.0), (3.0, 0.0), (3.0, 3.0), (0.0, 3.0)]);
        let b = poly(&[(2.0, 2.0), (6.0, 2.0), (6.0, 6.0), (2.0, 6.0)]);
        let m = rasterize_polygons(&[a, b], 6, 6);
        assert_eq!(m.count_ones(), 9 + 16 - 1);
    }

    #[test]
    fn orientation_does_not_matter() {
        let cw = poly(&[(1.0, 1.0), (5.0, 1.5), (4.0, 5.0), (0.5, 4.0)]);
        let mut rev = cw.vertices().to_vec();
        rev.reverse();
        let ccw = poly(&rev);
        assert_eq!(rasterize_polygons(&[cw], 6, 6), rasterize_polygons(&[ccw], 6, 6));
    }
}
