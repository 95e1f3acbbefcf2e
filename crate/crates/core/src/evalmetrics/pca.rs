use nalgebra::{DMatrix, SymmetricEigen};

use super::EvalError;

/// Projects `n` row-major points of dimension `dim` onto their top two
/// principal axes. Each axis is signed so its largest-magnitude loading is
/// positive.
pub fn pca_project_2d(points: &[f64], dim: usize) -> Result<Vec<[f64; 2]>, EvalError> {
    if dim < 2 || !points.len().is_multiple_of(dim) {
        return Err(EvalError::Input(format!(
            "need row-major points of dimension >= 2, got {} values with dim {dim}",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if n < 3 {
        return Err(EvalError::Input(format!("PCA needs at least 3 points, got {n}")));
    }
    let x = DMatrix::from_row_slice(n, dim, points);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if big < 0.0 {
                v.into_iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            [0, 1].map(|a| row.iter().zip(&axes[a]).map(|(x, w)| x * w).sum())
        })
        .collect())
}
