//! Small dense nonlinear least-squares machinery shared by the Lorentzian
//! sideband fit and the protocol-level line/sinusoid fits.

/// Result of a damped Gauss-Newton run.
#[derive(Debug, Clone)]
pub(crate) struct FitOutcome {
    pub params: Vec<f64>,
    pub converged: bool,
    #[allow(dead_code)]
    pub iterations: usize,
    /// Residual sum of squares at the solution.
    pub rss: f64,
    /// Parameter covariance, sigma^2 (J^T J)^-1 with sigma^2 = rss / (n - m).
    pub covariance: Vec<Vec<f64>>,
}

/// Model evaluation: given params, fill residuals (y - model) and the
/// Jacobian of the *model* (n x m, row-major) at each data point.
pub(crate) trait LeastSquaresModel {
    fn dims(&self) -> (usize, usize); // (n_points, n_params)
    fn eval(&self, params: &[f64], residuals: &mut [f64], jacobian: &mut [f64]);
    /// Clamp or repair params after a step (e.g. keep a width positive).
    fn project(&self, _params: &mut [f64]) {}
}

/// Damped Gauss-Newton (Levenberg-Marquardt style) minimizer.
/// Converges when the relative step in every parameter drops below `tol`.
pub(crate) fn fit(
    model: &dyn LeastSquaresModel,
    p0: &[f64],
    tol: f64,
    max_iter: usize,
) -> FitOutcome {
    let (n, m) = model.dims();
    let mut p = p0.to_vec();
    model.project(&mut p);
    let mut r = vec![0.0; n];
    let mut jac = vec![0.0; n * m];
    model.eval(&p, &mut r, &mut jac);
    let mut rss: f64 = r.iter().map(|v| v * v).sum();

    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..max_iter {
        iterations = it + 1;
        // normal equations
        let mut jtj = vec![vec![0.0; m]; m];
        let mut jtr = vec![0.0; m];
        for i in 0..n {
            for a in 0..m {
                let ja = jac[i * m + a];
                jtr[a] += ja * r[i];
                for b in a..m {
                    jtj[a][b] += ja * jac[i * m + b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }

        let mut accepted = false;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for a in 0..m {
                damped[a][a] += lambda * jtj[a][a].max(1e-300);
            }
            let Some(step) = solve(&damped, &jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut p_new: Vec<f64> = p.iter().zip(&step).map(|(pi, si)| pi + si).collect();
            model.project(&mut p_new);
            let mut r_new = vec![0.0; n];
            let mut jac_new = vec![0.0; n * m];
            model.eval(&p_new, &mut r_new, &mut jac_new);
            let rss_new: f64 = r_new.iter().map(|v| v * v).sum();
            if rss_new.is_finite() && rss_new <= rss {
                let max_rel = p
                    .iter()
                    .zip(&p_new)
                    .map(|(a, b)| (b - a).abs() / a.abs().max(1e-300))
                    .fold(0.0f64, f64::max);
                p = p_new;
                r = r_new;
                jac = jac_new;
                rss = rss_new;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if max_rel < tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !accepted {
            break;
        }
    }

    // covariance from the undamped normal matrix
    let mut jtj = vec![vec![0.0; m]; m];
    for i in 0..n {
        for a in 0..m {
            for b in a..m {
                jtj[a][b] += jac[i * m + a] * jac[i * m + b];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            jtj[a][b] = jtj[b][a];
        }
    }
    let sigma2 = if n > m { rss / (n - m) as f64 } else { 0.0 };
    let covariance = invert(&jtj)
        .map(|inv| {
            inv.iter()
                .map(|row| row.iter().map(|v| v * sigma2).collect())
                .collect()
        })
        .unwrap_or_else(|| vec![vec![f64::NAN; m]; m]);

    FitOutcome {
        params: p,
        converged,
        iterations,
        rss,
        covariance,
    }
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
pub(crate) fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col][k] * x[k];
        }
        x[col] = s / m[col][col];
    }
    Some(x)
}

/// Invert a small symmetric matrix column by column.
pub(crate) fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve(a, &e)?);
    }
    let mut inv = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    Some(inv)
}

/// Ordinary least-squares line y = slope x + intercept with optional weights.
/// Returns (slope, intercept, slope_sigma, intercept_sigma).
pub(crate) fn linear_fit(
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
) -> (f64, f64, f64, f64) {
    let n = x.len();
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|v| 1.0 / (v * v).max(1e-300)).collect(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let sx: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
    let sy: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| a * a * b).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| a * c * b).sum();
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    // parameter variances; for unweighted input scale by residual variance
    let (var_slope, var_intercept) = if sigma.is_some() {
        (sw / det, sxx / det)
    } else {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - (slope * a + intercept);
                r * r
            })
            .sum();
        let s2 = rss / (n.saturating_sub(2)).max(1) as f64;
        (s2 * sw / det, s2 * sxx / det)
    };
    (slope, intercept, var_slope.sqrt(), var_intercept.sqrt())
}
