use ndarray::{Array2, Array3, Zip};

use super::FeatureVector;
use crate::error::{Error, Result};

/// The 13 unique 3D neighbour directions at distance 1, `(dz, dy, dx)`.
/// Their negatives are covered by symmetrising the matrix.
pub const OFFSETS: [[isize; 3]; 13] = [
    [0, 0, 1],
    [0, 1, 0],
    [0, 1, 1],
    [0, 1, -1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 0, -1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

/// Normalised symmetric co-occurrence matrix for one offset. Entry
/// `[i - 1][j - 1]` is the joint probability of levels `i` and `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    pub offset: [isize; 3],
    pub probabilities: Array2<f64>,
    pub pair_count: usize,
}

fn max_level(levels: &Array3<u32>, region: &Array3<bool>) -> usize {
    levels
        .iter()
        .zip(region.iter())
        .filter(|(_, &r)| r)
        .map(|(&l, _)| l as usize)
        .max()
        .unwrap_or(0)
}

fn region_of(levels: &Array3<u32>, mask: &Array3<bool>) -> Result<Array3<bool>> {
    if levels.shape() != mask.shape() {
        return Err(Error::InvalidArgument(format!(
            "levels dims {:?} != mask dims {:?}",
            levels.shape(),
            mask.shape()
        )));
    }
    let mut region = mask.clone();
    Zip::from(&mut region).and(levels).for_each(|r, &l| *r &= l >= 1);
    Ok(region)
}

/// Co-occurrence matrices for every offset that has at least one voxel pair
/// inside the region.
pub fn cooccurrence_matrices(levels: &Array3<u32>, mask: &Array3<bool>) -> Result<Vec<Glcm>> {
    let region = region_of(levels, mask)?;
    let ng = max_level(levels, &region);
    let shape = levels.shape();
    let mut out = Vec::new();
    for off in OFFSETS {
        let mut counts = Array2::<f64>::zeros((ng, ng));
        let mut pairs = 0usize;
        for ((z, y, x), &r) in region.indexed_iter() {
            if !r {
                continue;
            }
            let q = [z as isize + off[0], y as isize + off[1], x as isize + off[2]];
            if q.iter().zip(shape).any(|(&c, &n)| c < 0 || c as usize >= n) {
                continue;
            }
            let q = [q[0] as usize, q[1] as usize, q[2] as usize];
            if !region[q] {
                continue;
            }
            let i = levels[[z, y, x]] as usize - 1;
            let j = levels[q] as usize - 1;
            counts[[i, j]] += 1.0;
            counts[[j, i]] += 1.0;
            pairs += 1;
        }
        if pairs == 0 {
            continue;
        }
        let total = 2.0 * pairs as f64;
        counts.mapv_inplace(|c| c / total);
        out.push(Glcm {
            offset: off,
            probabilities: counts,
            pair_count: pairs,
        });
    }
    Ok(out)
}

const NAMES: [&str; 10] = [
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "Dissimilarity",
    "Homogeneity",
    "InverseDifference",
    "InverseDifferenceMomentNormalized",
    "JointEnergy",
    "JointEntropy",
    "JointMaximum",
];

fn matrix_features(p: &Array2<f64>) -> [f64; 10] {
    let ng = p.nrows();
    let ngf = ng as f64;
    // marginals are equal for a symmetric matrix, but keep both for clarity
    let mut px = vec![0.0; ng];
    let mut py = vec![0.0; ng];
    for ((i, j), &v) in p.indexed_iter() {
        px[i] += v;
        py[j] += v;
    }
    let level = |k: usize| (k + 1) as f64;
    let mux: f64 = px.iter().enumerate().map(|(k, v)| level(k) * v).sum();
    let muy: f64 = py.iter().enumerate().map(|(k, v)| level(k) * v).sum();
    let varx: f64 = px.iter().enumerate().map(|(k, v)| (level(k) - mux).powi(2) * v).sum();
    let vary: f64 = py.iter().enumerate().map(|(k, v)| (level(k) - muy).powi(2) * v).sum();

    let mut f = [0.0; 10];
    let mut cross = 0.0;
    for ((i, j), &v) in p.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        let (a, b) = (level(i), level(j));
        let d = (a - b).abs();
        f[0] += (a + b - mux - muy).powi(2) * v;
        f[1] += d * d * v;
        cross += (a - mux) * (b - muy) * v;
        f[3] += d * v;
        f[4] += v / (1.0 + d * d);
        f[5] += v / (1.0 + d);
        f[6] += v / (1.0 + d * d / (ngf * ngf));
        f[7] += v * v;
        f[8] -= v * v.log2();
        f[9] = f64::max(f[9], v);
    }
    let sd = (varx * vary).sqrt();
    f[2] = if sd > 0.0 { cross / sd } else { 0.0 };
    f
}

/// Texture features averaged over the offsets that have voxel pairs.
/// A region without any neighbouring pair yields all zeros.
pub fn glcm_features(levels: &Array3<u32>, mask: &Array3<bool>) -> Result<FeatureVector> {
    let region = region_of(levels, mask)?;
    if !region.iter().any(|&r| r) {
        return Err(Error::EmptyRegion("GLCM of an empty region".into()));
    }
    let mats = cooccurrence_matrices(levels, &region)?;
    let mut acc = [0.0; 10];
    for m in &mats {
        for (a, v) in acc.iter_mut().zip(matrix_features(&m.probabilities)) {
            *a += v;
        }
    }
    let mut fv = FeatureVector::default();
    for (name, a) in NAMES.iter().zip(acc) {
        let v = if mats.is_empty() { 0.0 } else { a / mats.len() as f64 };
        fv.push(*name, v);
    }
    Ok(fv)
}
