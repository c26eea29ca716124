use ndarray::Array3;

use super::FeatureVector;
use crate::dwi::Spacing;
use crate::error::{Error, Result};

const NEIGHBOURS: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

fn inside(mask: &Array3<bool>, p: [isize; 3]) -> bool {
    let s = mask.shape();
    p.iter().zip(s).all(|(&c, &n)| c >= 0 && (c as usize) < n)
        && mask[[p[0] as usize, p[1] as usize, p[2] as usize]]
}

/// Geometry of the mask: voxel volume, exposed-face surface area, sphericity,
/// maximum centre-to-centre diameter and bounding-box elongation.
pub fn shape_features(mask: &Array3<bool>, spacing: &Spacing) -> Result<FeatureVector> {
    let [dz, dy, dx] = spacing.as_array();
    let face_area = [dy * dx, dz * dx, dz * dy];

    let mut count = 0usize;
    let mut area = 0.0;
    let mut boundary: Vec<[f64; 3]> = Vec::new();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for ((z, y, x), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        count += 1;
        let p = [z as isize, y as isize, x as isize];
        let mut exposed = false;
        for (k, off) in NEIGHBOURS.iter().enumerate() {
            let q = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
            if !inside(mask, q) {
                area += face_area[k / 2];
                exposed = true;
            }
        }
        if exposed {
            boundary.push([z as f64 * dz, y as f64 * dy, x as f64 * dx]);
        }
        for (a, c) in [z, y, x].into_iter().enumerate() {
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    if count == 0 {
        return Err(Error::EmptyRegion("shape of an empty mask".into()));
    }

    // Extreme points of the centre cloud always have an exposed face, so the
    // boundary set is enough for the farthest pair.
    let mut diameter2: f64 = 0.0;
    for (i, a) in boundary.iter().enumerate() {
        for b in &boundary[i + 1..] {
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            diameter2 = diameter2.max(d2);
        }
    }

    let volume = count as f64 * spacing.voxel_volume();
    let sphericity = std::f64::consts::PI.cbrt() * (6.0 * volume).powf(2.0 / 3.0) / area;
    let extents: Vec<f64> = (0..3)
        .map(|a| (hi[a] - lo[a] + 1) as f64 * spacing.as_array()[a])
        .collect();
    let longest = extents.iter().cloned().fold(f64::MIN, f64::max);
    let shortest = extents.iter().cloned().fold(f64::MAX, f64::min);

    let mut fv = FeatureVector::default();
    fv.push("BoundingBoxElongation", shortest / longest);
    fv.push("Maximum3DDiameter", diameter2.sqrt());
    fv.push("Sphericity", sphericity);
    fv.push("SurfaceArea", area);
    fv.push("VoxelVolume", volume);
    Ok(fv.sorted())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel() {
        let mut m = Array3::from_elem((3, 3, 3), false);
        m[[1, 1, 1]] = true;
        let fv = shape_features(&m, &Spacing::isotropic(2.0)).unwrap();
        assert_eq!(fv.get("VoxelVolume"), Some(8.0));
        assert_eq!(fv.get("Maximum3DDiameter"), Some(0.0));
        assert_eq!(fv.get("SurfaceArea"), Some(24.0));
        assert_eq!(fv.get("BoundingBoxElongation"), Some(1.0));
    }

    #[test]
    fn adjacent_pair() {
        let mut m = Array3::from_elem((1, 1, 2), true);
        let fv = shape_features(&m, &Spacing::isotropic(1.0)).unwrap();
        assert_eq!(fv.get("Maximum3DDiameter"), Some(1.0));
        assert_eq!(fv.get("SurfaceArea"), Some(10.0));
        assert_eq!(fv.get("BoundingBoxElongation"), Some(0.5));
        m.fill(false);
        assert!(shape_features(&m, &Spacing::isotropic(1.0)).is_err());
    }

    #[test]
    fn cube() {
        let m = Array3::from_elem((3, 3, 3), true);
        let fv = shape_features(&m, &Spacing::isotropic(1.0)).unwrap();
        assert_eq!(fv.get("VoxelVolume"), Some(27.0));
        assert!((fv.get("Maximum3DDiameter").unwrap() - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(fv.get("SurfaceArea"), Some(54.0));
        // (pi^(1/3) (6V)^(2/3)) / A for a cube is (pi/6)^(1/3)
        assert!((fv.get("Sphericity").unwrap() - (std::f64::consts::PI / 6.0).cbrt()).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_spacing() {
        let m = Array3::from_elem((1, 1, 2), true);
        let fv = shape_features(&m, &Spacing::new(4.0, 2.0, 1.5)).unwrap();
        assert_eq!(fv.get("VoxelVolume"), Some(24.0));
        assert_eq!(fv.get("Maximum3DDiameter"), Some(1.5));
    }
}
