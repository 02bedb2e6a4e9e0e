use super::special::{f_p, t_two_sided_p};
use super::{DesignMatrix, StatsError};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// |R_jj| below this fraction of max |R_ii| marks column j as dependent.
pub const COLLINEARITY_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient<T> {
    pub name: String,
    pub b: T,
    pub se: T,
    pub t: T,
    pub p: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult<T> {
    pub coefficients: Vec<Coefficient<T>>,
    pub residuals: Vec<T>,
    pub fitted: Vec<T>,
    pub n: usize,
    pub p_params: usize,
    pub df_resid: usize,
    pub r2: T,
    pub adjusted_r2: T,
    pub f_statistic: T,
    pub f_p: T,
}

impl<T: Scalar> RegressionResult<T> {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient<T>> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

pub fn ols_fit<T: Scalar>(design: &DesignMatrix<T>, y: &[T]) -> Result<RegressionResult<T>, StatsError> {
    ols_fit_matrix(&design.data, design.rows(), &design.column_names, y)
}

/// Least squares on a row-major `n × p` matrix via Householder QR.
pub fn ols_fit_matrix<T: Scalar>(
    x: &[T],
    n: usize,
    column_names: &[String],
    y: &[T],
) -> Result<RegressionResult<T>, StatsError> {
    let p = column_names.len();
    if x.len() != n * p {
        return Err(StatsError::Contract(format!("matrix has {} entries, expected {n}×{p}", x.len())));
    }
    if y.len() != n {
        return Err(StatsError::Contract(format!("{} responses for {n} design rows", y.len())));
    }
    if p == 0 || n <= p {
        return Err(StatsError::InsufficientData { n, p });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::Contract("non-finite value in design or response".into()));
    }

    // Column-major working copy; becomes R above the diagonal and Householder vectors below.
    let mut a: Vec<Vec<T>> = (0..p).map(|j| (0..n).map(|i| x[i * p + j]).collect()).collect();
    let mut qty = y.to_vec();
    let mut diag = vec![T::zero(); p];
    for j in 0..p {
        let norm = a[j][j..].iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            diag[j] = T::zero();
            continue;
        }
        let alpha = if a[j][j] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = a[j][j..].to_vec();
        v[0] = v[0] - alpha;
        let vnorm2 = v.iter().map(|&e| e * e).sum::<T>();
        diag[j] = alpha;
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::lit(2.0);
        for col in a.iter_mut().skip(j) {
            let dot = v.iter().zip(&col[j..]).map(|(&vi, &ci)| vi * ci).sum::<T>();
            let s = two * dot / vnorm2;
            for (ci, &vi) in col[j..].iter_mut().zip(&v) {
                *ci = *ci - s * vi;
            }
        }
        let dot = v.iter().zip(&qty[j..]).map(|(&vi, &yi)| vi * yi).sum::<T>();
        let s = two * dot / vnorm2;
        for (yi, &vi) in qty[j..].iter_mut().zip(&v) {
            *yi = *yi - s * vi;
        }
    }
    let max_diag = diag.iter().map(|d| d.abs()).fold(T::zero(), T::max);
    let threshold = T::lit(COLLINEARITY_THRESHOLD) * max_diag;
    let bad: Vec<String> = (0..p).filter(|&j| diag[j].abs() <= threshold).map(|j| column_names[j].clone()).collect();
    if !bad.is_empty() {
        return Err(StatsError::Collinear(bad));
    }
    let r = |i: usize, j: usize| if i == j { diag[i] } else { a[j][i] };

    let mut beta = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = qty[i];
        for (j, &bj) in beta.iter().enumerate().skip(i + 1) {
            s = s - r(i, j) * bj;
        }
        beta[i] = s / r(i, i);
    }

    // R^{-1}, upper triangular, for (XᵀX)^{-1} = R^{-1} R^{-T}.
    let mut rinv = vec![vec![T::zero(); p]; p];
    for c in 0..p {
        rinv[c][c] = T::one() / r(c, c);
        for i in (0..c).rev() {
            let mut s = T::zero();
            for k in i + 1..=c {
                s = s + r(i, k) * rinv[k][c];
            }
            rinv[i][c] = -s / r(i, i);
        }
    }

    let fitted: Vec<T> =
        (0..n).map(|i| x[i * p..(i + 1) * p].iter().zip(&beta).map(|(&xv, &b)| xv * b).sum()).collect();
    let residuals: Vec<T> = y.iter().zip(&fitted).map(|(&yi, &fi)| yi - fi).collect();
    let rss: T = residuals.iter().map(|&e| e * e).sum();
    let df_resid = n - p;
    let sigma2 = rss / T::from_usize_lossy(df_resid);

    let has_intercept = (0..p).any(|j| (0..n).all(|i| x[i * p + j] == T::one()));
    let nf = T::from_usize_lossy(n);
    let mean = if has_intercept { y.iter().copied().sum::<T>() / nf } else { T::zero() };
    let tss: T = y.iter().map(|&v| (v - mean) * (v - mean)).sum();
    let scale: T = y.iter().map(|&v| v * v).sum();
    let tiny = T::epsilon() * T::lit(64.0);
    // A response constant to machine precision carries no slope information.
    let constant_y = tss <= tiny * tiny * scale;

    let coefficients = (0..p)
        .map(|j| {
            let var = sigma2 * (j..p).map(|k| rinv[j][k] * rinv[j][k]).sum::<T>();
            let se = var.sqrt();
            let (t, pv) = if constant_y || se == T::zero() && beta[j] == T::zero() {
                (T::zero(), T::one())
            } else {
                let t = beta[j] / se;
                (t, t_two_sided_p(t, df_resid as u64))
            };
            let b = if constant_y && column_names[j] != "intercept" && has_intercept { T::zero() } else { beta[j] };
            Coefficient { name: column_names[j].clone(), b, se, t, p: pv }
        })
        .collect();

    let (r2, f_statistic, fp) = if constant_y {
        (T::zero(), T::zero(), T::one())
    } else {
        let r2 = (T::one() - rss / tss).max(T::zero()).min(T::one());
        let d1 = if has_intercept { p - 1 } else { p };
        if d1 == 0 {
            (r2, T::zero(), T::one())
        } else {
            let ess = (tss - rss).max(T::zero());
            let f = (ess / T::from_usize_lossy(d1)) / sigma2;
            let f = if f.is_nan() { T::zero() } else { f };
            (r2, f, f_p(f, d1 as u64, df_resid as u64))
        }
    };
    let adjusted_r2 = T::one() - (T::one() - r2) * T::from_usize_lossy(n - 1) / T::from_usize_lossy(df_resid);

    Ok(RegressionResult {
        coefficients,
        residuals,
        fitted,
        n,
        p_params: p,
        df_resid,
        r2,
        adjusted_r2,
        f_statistic,
        f_p: fp,
    })
}
