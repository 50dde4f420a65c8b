use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::lda::group;
use super::linalg::{floor_eigenvalues, spd_inverse, spd_logdet, symmetrize, trace};
use crate::error::{Error, Result};

/// Eigenvalue floor applied to both covariances after every update.
pub const COV_FLOOR: f64 = 1e-6;

/// Two-covariance model: x = mu + y + e, y ~ N(0, B) per class,
/// e ~ N(0, W) per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mu: Array1<f64>,
    pub between_cov: Array2<f64>,
    pub within_cov: Array2<f64>,
}

/// Classes of equal size share one second-moment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGroup {
    pub size: usize,
    pub count: usize,
    /// Σ over classes of (x̄_c − mu)(x̄_c − mu)ᵀ.
    pub second_moment: Array2<f64>,
}

/// Sufficient statistics for EM and the marginal likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaStats {
    pub mu: Array1<f64>,
    pub n_total: usize,
    pub n_classes: usize,
    /// Σ over samples of (x − x̄_c)(x − x̄_c)ᵀ.
    pub within_scatter: Array2<f64>,
    pub groups: Vec<ClassGroup>,
}

impl PldaStats {
    pub fn from_data(x: &Array2<f64>, labels: &[usize]) -> Result<PldaStats> {
        let (n, d) = x.dim();
        if labels.len() != n {
            return Err(Error::Dimension(format!("{n} rows but {} labels", labels.len())));
        }
        let classes = group(labels);
        let multi = classes.values().filter(|r| r.len() >= 2).count();
        if classes.len() < 2 || multi == 0 {
            return Err(Error::InvalidInput(format!(
                "PLDA needs at least 2 classes and one with 2 samples; found {} classes, {multi} with 2+",
                classes.len()
            )));
        }
        let mu = x.mean_axis(Axis(0)).expect("non-empty");
        let total = (x - &mu).mapv(|v| v * v).sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("all embeddings are identical".into()));
        }
        let mut within = Array2::zeros((d, d));
        let mut by_size: BTreeMap<usize, (usize, Array2<f64>)> = BTreeMap::new();
        for rows in classes.values() {
            let sub = x.select(Axis(0), rows);
            let m = sub.mean_axis(Axis(0)).expect("non-empty");
            let c = &sub - &m;
            within = within + c.t().dot(&c);
            let dm = (&m - &mu).insert_axis(Axis(1));
            let e = by_size
                .entry(rows.len())
                .or_insert_with(|| (0, Array2::zeros((d, d))));
            e.0 += 1;
            e.1 = &e.1 + &dm.dot(&dm.t());
        }
        Ok(PldaStats {
            mu,
            n_total: n,
            n_classes: classes.len(),
            within_scatter: within,
            groups: by_size
                .into_iter()
                .map(|(size, (count, second_moment))| ClassGroup {
                    size,
                    count,
                    second_moment,
                })
                .collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Moment initialization: W from pooled within-class scatter, B from the
/// spread of class means.
pub fn init_model(stats: &PldaStats) -> Result<PldaModel> {
    let d = stats.dim();
    let dof = (stats.n_total - stats.n_classes).max(1) as f64;
    let w = &stats.within_scatter / dof;
    let mut b = Array2::zeros((d, d));
    for g in &stats.groups {
        b = b + &g.second_moment;
    }
    let b = b / stats.n_classes as f64;
    Ok(PldaModel {
        mu: stats.mu.clone(),
        between_cov: floor_eigenvalues(&b, COV_FLOOR)?,
        within_cov: floor_eigenvalues(&w, COV_FLOOR)?,
    })
}

/// One EM iteration with mu held at the data mean.
pub fn em_step(model: &PldaModel, stats: &PldaStats) -> Result<PldaModel> {
    let d = stats.dim();
    let b_inv = spd_inverse(&model.between_cov, "between-class covariance")?;
    let w_inv = spd_inverse(&model.within_cov, "within-class covariance")?;
    let eye = Array2::<f64>::eye(d);
    let mut b_acc = Array2::zeros((d, d));
    let mut w_acc = stats.within_scatter.clone();
    for g in &stats.groups {
        let n = g.size as f64;
        // posterior of y given a class mean d: N(A d, Σ_y)
        let sigma_y = spd_inverse(&(&b_inv + &(&w_inv * n)), "posterior precision")?;
        let a = sigma_y.dot(&w_inv) * n;
        let count = g.count as f64;
        b_acc = b_acc + &sigma_y * count + a.dot(&g.second_moment).dot(&a.t());
        let r = &eye - &a;
        w_acc = w_acc + (r.dot(&g.second_moment).dot(&r.t()) + &sigma_y * count) * n;
    }
    let b = symmetrize(&(b_acc / stats.n_classes as f64));
    let w = symmetrize(&(w_acc / stats.n_total as f64));
    Ok(PldaModel {
        mu: model.mu.clone(),
        between_cov: floor_eigenvalues(&b, COV_FLOOR)?,
        within_cov: floor_eigenvalues(&w, COV_FLOOR)?,
    })
}

/// Exact marginal log-likelihood of the training data under `model`.
pub fn log_likelihood(model: &PldaModel, stats: &PldaStats) -> Result<f64> {
    let d = stats.dim() as f64;
    let w = &model.within_cov;
    let w_inv = spd_inverse(w, "within-class covariance")?;
    let logdet_w = spd_logdet(w, "within-class covariance")?;
    let mut ll = -0.5 * trace(&w_inv.dot(&stats.within_scatter));
    for g in &stats.groups {
        let n = g.size as f64;
        let m = w + &(&model.between_cov * n);
        let m_inv = spd_inverse(&m, "class-mean covariance")?;
        let logdet_m = spd_logdet(&m, "class-mean covariance")?;
        ll -= 0.5 * g.count as f64 * (n * d * (2.0 * PI).ln() + (n - 1.0) * logdet_w + logdet_m);
        ll -= 0.5 * n * trace(&m_inv.dot(&g.second_moment));
    }
    Ok(ll)
}

/// Fits by EM; returns the model and the log-likelihood before the first
/// and after every iteration.
pub fn fit_plda(x: &Array2<f64>, labels: &[usize], iters: usize) -> Result<(PldaModel, Vec<f64>)> {
    let stats = PldaStats::from_data(x, labels)?;
    let mut model = init_model(&stats)?;
    let mut history = vec![log_likelihood(&model, &stats)?];
    for _ in 0..iters {
        model = em_step(&model, &stats)?;
        history.push(log_likelihood(&model, &stats)?);
    }
    Ok((model, history))
}

/// Closed-form log-likelihood ratio with T = B + W:
/// llr = ½x₁ᵀQx₁ + ½x₂ᵀQx₂ + x₁ᵀPx₂ + c, where K = T − B T⁻¹ B,
/// Q = T⁻¹ − K⁻¹, P = T⁻¹ B K⁻¹ and c = ½(log|T| − log|K|).
#[derive(Debug, Clone)]
pub struct PldaScorer {
    mu: Array1<f64>,
    q: Array2<f64>,
    p: Array2<f64>,
    constant: f64,
}

impl PldaScorer {
    pub fn new(model: &PldaModel) -> Result<PldaScorer> {
        let b = &model.between_cov;
        let t = b + &model.within_cov;
        let t_inv = spd_inverse(&t, "total covariance")?;
        let k = symmetrize(&(&t - &b.dot(&t_inv).dot(b)));
        let k_inv = spd_inverse(&k, "same-speaker conditional covariance")?;
        let q = symmetrize(&(&t_inv - &k_inv));
        let p = symmetrize(&t_inv.dot(b).dot(&k_inv));
        let constant =
            0.5 * (spd_logdet(&t, "total covariance")? - spd_logdet(&k, "same-speaker conditional covariance")?);
        Ok(PldaScorer {
            mu: model.mu.clone(),
            q,
            p,
            constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Exactly symmetric in its arguments: the cross term is evaluated as
    /// ¼[(s)ᵀPs − (r)ᵀPr] with s = x₁ + x₂ and r = x₁ − x₂.
    pub fn score(&self, e1: ArrayView1<f64>, e2: ArrayView1<f64>) -> Result<f64> {
        check_dim(self.dim(), e1.len(), e2.len())?;
        let x1 = &e1 - &self.mu;
        let x2 = &e2 - &self.mu;
        let quad = |m: &Array2<f64>, v: &Array1<f64>| v.dot(&m.dot(v));
        let s = &x1 + &x2;
        let r = &x1 - &x2;
        let cross = 0.25 * (quad(&self.p, &s) - quad(&self.p, &r));
        let own = 0.5 * (quad(&self.q, &x1) + quad(&self.q, &x2));
        Ok(own + cross + self.constant)
    }
}

pub(crate) fn check_dim(expected: usize, a: usize, b: usize) -> Result<()> {
    if a != expected || b != expected {
        return Err(Error::Dimension(format!(
            "embedding dimensions {a} and {b}, model expects {expected}"
        )));
    }
    Ok(())
}

/// Cosine similarity; zero vectors are rejected.
pub fn cosine_score(e1: ArrayView1<f64>, e2: ArrayView1<f64>) -> Result<f64> {
    check_dim(e1.len(), e1.len(), e2.len())?;
    let n1 = e1.dot(&e1).sqrt();
    let n2 = e2.dot(&e2).sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::Degenerate("cosine score of a zero embedding".into()));
    }
    Ok(e1.dot(&e2) / (n1 * n2))
}
