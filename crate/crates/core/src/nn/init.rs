use rand::Rng;
use rand_distr::StandardNormal;

/// Row-major `rows x cols` matrix with orthonormal rows (or columns, whichever
/// is shorter), scaled by `gain`.
pub(crate) fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    // n vectors of length m (n <= m), orthonormalized by modified Gram-Schmidt.
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let (head, tail) = v.split_at_mut(i);
            let dot: f64 = head[j].iter().zip(&tail[0]).map(|(a, b)| a * b).sum();
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= dot * y;
            }
        }
        let norm = v[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        v[i].iter_mut().for_each(|x| *x /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..n {
        for j in 0..m {
            let (r, c) = if transpose { (j, i) } else { (i, j) };
            out[r * cols + c] = gain * v[i][j];
        }
    }
    out
}
