//! PCA on anisotropic Gaussian data: explained variance and a projection.

use common_interest::linalg::Matrix;
use common_interest::reduce::fit_pca;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> common_interest::error::Result<()> {
    let scales = [4.0, 2.0, 1.0, 0.5, 0.1];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<f64> = (0..500 * scales.len())
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scales[k % scales.len()] * z
        })
        .collect();
    let x = Matrix::from_vec(500, scales.len(), data)?;

    let pca = fit_pca(&x, 2)?;
    println!("component variances: {:.3?}", pca.explained_variance);
    println!("explained ratio:     {:.3}", pca.explained_variance_ratio());
    for k in 0..2 {
        println!("component {k}: {:.3?}", pca.components.row(k));
    }
    let z = pca.transform(&x)?;
    println!("first point {:.3?} -> {:.3?}", x.row(0), z.row(0));
    Ok(())
}
