//! Two-component PCA by power iteration with deflation.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

const RESIDUAL_TOL: f64 = 1e-10;
const MAX_ITERS: usize = 200_000;

/// Projections onto the top two principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    /// One `[pc1, pc2]` pair per input row.
    pub projections: Vec<[f64; 2]>,
    /// Sample variances (divisor `n - 1`) along the two directions.
    pub explained_variance: [f64; 2],
    /// Unit loading vectors, first nonzero entry positive (zero when the variance is zero).
    pub components: [Vec<f64>; 2],
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Leading eigenpair of a symmetric positive semidefinite matrix.
fn power_iteration(m: &[Vec<f64>], scale: f64) -> (f64, Vec<f64>) {
    let n = m.len();
    // fixed, generic start so results are deterministic
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 / (i as f64 + 1.0) + 0.01 * i as f64).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERS {
        let mv = matvec(m, &v);
        lambda = mv.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        let residual = norm(&mv.iter().zip(&v).map(|(a, b)| a - lambda * b).collect::<Vec<_>>());
        let len = norm(&mv);
        if len <= f64::MIN_POSITIVE || len <= 1e-14 * scale {
            return (0.0, vec![0.0; n]);
        }
        if residual <= RESIDUAL_TOL * scale.max(1.0) {
            break;
        }
        v = mv.into_iter().map(|x| x / len).collect();
    }
    (lambda.max(0.0), v)
}

fn orient(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Mean-centres `rows` and projects them on the top two principal directions.
///
/// When there are fewer rows than columns the eigenproblem is solved on the
/// `n x n` Gram matrix, which has the same nonzero spectrum.
pub fn pca2(rows: &[Vec<f64>]) -> Result<Pca2> {
    let n = rows.len();
    if n < 2 {
        return Err(input("PCA needs at least two rows"));
    }
    let d = rows[0].len();
    if d < 2 {
        return Err(input("PCA needs at least two columns"));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(input("rows differ in length"));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();
    let denom = (n - 1) as f64;
    let use_gram = n < d;
    let size = if use_gram { n } else { d };
    let mut m = vec![vec![0.0; size]; size];
    for i in 0..size {
        for j in i..size {
            let v = if use_gram {
                x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum::<f64>()
            } else {
                x.iter().map(|r| r[i] * r[j]).sum::<f64>()
            } / denom;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    let scale: f64 = (0..size).map(|i| m[i][i]).sum();

    let mut variances = [0.0; 2];
    let mut components = [vec![0.0; d], vec![0.0; d]];
    for k in 0..2 {
        if scale <= 0.0 {
            break;
        }
        let (lambda, u) = power_iteration(&m, scale);
        if lambda <= 0.0 {
            break;
        }
        for i in 0..size {
            for j in 0..size {
                m[i][j] -= lambda * u[i] * u[j];
            }
        }
        let mut loading = if use_gram {
            let mut v = vec![0.0; d];
            for (ui, r) in u.iter().zip(&x) {
                for (vj, xj) in v.iter_mut().zip(r) {
                    *vj += ui * xj;
                }
            }
            let len = norm(&v);
            if len == 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= len);
            v
        } else {
            u
        };
        orient(&mut loading);
        variances[k] = lambda;
        components[k] = loading;
    }
    let projections = x
        .iter()
        .map(|r| {
            let p = |c: &[f64]| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    Ok(Pca2 { projections, explained_variance: variances, components })
}
