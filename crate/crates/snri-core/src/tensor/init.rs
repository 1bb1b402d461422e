use rand::Rng;

use super::Tensor;

/// Uniform Xavier/Glorot init for a (rows, cols) weight matrix.
pub fn xavier_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Tensor::matrix(rows, cols, data).expect("xavier shape")
}

/// Xavier init for a vector acting as a (len -> 1) linear map.
pub fn xavier_vector<R: Rng>(rng: &mut R, len: usize) -> Tensor {
    let limit = (6.0 / (len + 1) as f64).sqrt();
    Tensor::vector((0..len).map(|_| rng.gen_range(-limit..=limit)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_within_limit_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = xavier_matrix(&mut rng, 8, 8);
        let limit = (6.0 / 16.0_f64).sqrt();
        assert!(m.data().iter().all(|v| v.abs() <= limit));

        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let m2 = xavier_matrix(&mut rng2, 8, 8);
        assert_eq!(m, m2);
    }
}
