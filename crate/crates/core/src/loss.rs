//! Training objective: indexation-invariant reconstruction, KL divergence and
//! the three distance-matrix regularizers, with gradients.

use serde::{Deserialize, Serialize};

use crate::distmat::{DistanceMatrix, RawMatrix, Reindexing};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 1e-10,
            gamma: 1e-5,
            delta: 1e-5,
            epsilon: 1e-5,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        beta: 0.0,
        gamma: 0.0,
        delta: 0.0,
        epsilon: 0.0,
    };

    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        Ok(())
    }
}

/// How the reconstruction term compares prediction and target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecMode {
    /// Minimum MSE over all `2N` reindexings of the target.
    #[default]
    Invariant,
    /// MSE against the target as given.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub kl: f64,
    pub diag: f64,
    pub nonneg: f64,
    pub sym: f64,
    pub total: f64,
    /// Winning reindexing of a single sample; `None` for batch aggregates.
    #[serde(skip)]
    pub argmin_reindexing: Option<Reindexing>,
}

impl LossBreakdown {
    fn combine(rec: f64, kl: f64, diag: f64, nonneg: f64, sym: f64, w: &LossWeights) -> Self {
        Self {
            rec,
            kl,
            diag,
            nonneg,
            sym,
            total: rec + w.beta * kl + w.gamma * diag + w.delta * nonneg + w.epsilon * sym,
            argmin_reindexing: None,
        }
    }

    /// Term-wise batch mean, summed in slice order.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let k = items.len() as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.rec += b.rec;
            m.kl += b.kl;
            m.diag += b.diag;
            m.nonneg += b.nonneg;
            m.sym += b.sym;
            m.total += b.total;
        }
        m.rec /= k;
        m.kl /= k;
        m.diag /= k;
        m.nonneg /= k;
        m.sym /= k;
        m.total /= k;
        m
    }

    pub const CSV_HEADER: &'static str = "epoch,rec,kl,diag,nonneg,sym,total";

    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{epoch},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.rec, self.kl, self.diag, self.nonneg, self.sym, self.total
        )
    }
}

/// Precomputed index maps for all `2N` reindexings of side `n`.
#[derive(Debug, Clone)]
pub struct ReindexTable {
    n: usize,
    candidates: Vec<(Reindexing, Vec<usize>)>,
}

impl ReindexTable {
    pub fn new(n: usize) -> Self {
        let candidates = Reindexing::enumerate(n).map(|r| (r, r.index_map(n))).collect();
        Self { n, candidates }
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Mean squared error between `pred` and the target read through `map`.
/// Summation is row-major over `pred`, so equal candidate matrices give
/// bit-identical errors.
fn mse_through<T: Scalar>(pred: &[T], target: &[T], n: usize, map: &[usize]) -> T {
    let mut acc = T::zero();
    for (i, &si) in map.iter().enumerate() {
        let row = &pred[i * n..(i + 1) * n];
        let trow = &target[si * n..(si + 1) * n];
        for (&p, &sj) in row.iter().zip(map) {
            let e = p - trow[sj];
            acc += e * e;
        }
    }
    acc / T::from_usize(n * n).unwrap()
}

/// Reconstruction term and its gradient with respect to `pred`.
pub fn rec_term<T: Scalar>(
    pred: &[T],
    target: &[T],
    table: &ReindexTable,
    mode: RecMode,
) -> (T, Reindexing, Vec<T>) {
    let n = table.n;
    let (mut best, mut best_idx) = (T::infinity(), 0);
    match mode {
        RecMode::Invariant => {
            for (idx, (_, map)) in table.candidates.iter().enumerate() {
                let v = mse_through(pred, target, n, map);
                // Strict comparison keeps the earliest candidate on ties.
                if v < best {
                    best = v;
                    best_idx = idx;
                }
            }
        }
        RecMode::Plain => best = mse_through(pred, target, n, &table.candidates[0].1),
    }
    let (r, map) = &table.candidates[best_idx];
    let scale = T::from_f64_lossy(2.0) / T::from_usize(n * n).unwrap();
    let mut grad = vec![T::zero(); n * n];
    for (i, &si) in map.iter().enumerate() {
        for (j, &sj) in map.iter().enumerate() {
            grad[i * n + j] = scale * (pred[i * n + j] - target[si * n + sj]);
        }
    }
    (best, *r, grad)
}

/// KL divergence to the standard normal prior and its gradients.
pub fn kl_term<T: Scalar>(mu: &[T], logvar: &[T]) -> (T, Vec<T>, Vec<T>) {
    let half = T::from_f64_lossy(0.5);
    let mut kl = T::zero();
    let mut g_lv = Vec::with_capacity(logvar.len());
    for (&m, &lv) in mu.iter().zip(logvar) {
        let e = lv.exp();
        kl += -half * (T::one() + lv - m * m - e);
        g_lv.push(half * (e - T::one()));
    }
    (kl, mu.to_vec(), g_lv)
}

/// Diagonal, non-negativity and symmetry penalties, each with its gradient
/// accumulated into `grad` scaled by the matching weight.
fn regularizers<T: Scalar>(pred: &[T], n: usize, w: &LossWeights, grad: &mut [T]) -> (T, T, T) {
    let nf = T::from_usize(n).unwrap();
    let n2 = nf * nf;
    let (gamma, delta, epsilon) = (
        T::from_f64_lossy(w.gamma),
        T::from_f64_lossy(w.delta),
        T::from_f64_lossy(w.epsilon),
    );
    let two = T::from_f64_lossy(2.0);
    let four = T::from_f64_lossy(4.0);

    let mut diag = T::zero();
    for i in 0..n {
        let v = pred[i * n + i];
        diag += v * v;
        grad[i * n + i] += gamma * two * v / nf;
    }
    diag /= nf;

    let mut nonneg = T::zero();
    for (g, &v) in grad.iter_mut().zip(pred) {
        if v < T::zero() {
            nonneg -= v;
            *g -= delta / n2;
        }
    }
    nonneg /= n2;

    let mut sym = T::zero();
    for i in 0..n {
        for j in 0..n {
            let e = pred[i * n + j] - pred[j * n + i];
            sym += e * e;
            grad[i * n + j] += epsilon * four * e / n2;
        }
    }
    sym /= n2;
    (diag, nonneg, sym)
}

/// Per-sample gradients of the weighted objective.
#[derive(Debug, Clone)]
pub struct SampleGrad<T> {
    pub breakdown: LossBreakdown,
    pub d_pred: Vec<T>,
    pub d_mu: Vec<T>,
    pub d_logvar: Vec<T>,
}

/// Full objective for one sample with gradients with respect to the decoder
/// output, `mu` and `logvar`.
pub fn sample_loss<T: Scalar>(
    pred: &[T],
    target: &[T],
    mu: &[T],
    logvar: &[T],
    w: &LossWeights,
    table: &ReindexTable,
    mode: RecMode,
) -> SampleGrad<T> {
    let n = table.n;
    let (rec, r, mut d_pred) = rec_term(pred, target, table, mode);
    let (diag, nonneg, sym) = regularizers(pred, n, w, &mut d_pred);
    let (kl, mut d_mu, mut d_logvar) = kl_term(mu, logvar);
    let beta = T::from_f64_lossy(w.beta);
    d_mu.iter_mut().for_each(|g| *g *= beta);
    d_logvar.iter_mut().for_each(|g| *g *= beta);
    let f = |v: T| v.to_f64().unwrap();
    let mut breakdown = LossBreakdown::combine(f(rec), f(kl), f(diag), f(nonneg), f(sym), w);
    breakdown.argmin_reindexing = Some(r);
    SampleGrad {
        breakdown,
        d_pred,
        d_mu,
        d_logvar,
    }
}

fn check_sizes(d_hat: &RawMatrix, d: &DistanceMatrix) -> Result<()> {
    if d_hat.n() != d.n() {
        return Err(Error::Shape(format!(
            "prediction side {} does not match target side {}",
            d_hat.n(),
            d.n()
        )));
    }
    Ok(())
}

/// Minimum MSE over all reindexings of `d`, with the winning reindexing.
pub fn rec_loss(d_hat: &RawMatrix, d: &DistanceMatrix) -> Result<(f64, Reindexing)> {
    check_sizes(d_hat, d)?;
    let table = ReindexTable::new(d.n());
    let (v, r, _) = rec_term(d_hat.entries(), d.entries(), &table, RecMode::Invariant);
    Ok((v, r))
}

pub fn kl_loss(mu: &[f64], logvar: &[f64]) -> f64 {
    kl_term(mu, logvar).0
}

pub fn diag_loss(d_hat: &RawMatrix) -> f64 {
    let n = d_hat.n();
    (0..n).map(|i| d_hat.get(i, i).powi(2)).sum::<f64>() / n as f64
}

pub fn nonneg_loss(d_hat: &RawMatrix) -> f64 {
    let n = d_hat.n();
    -d_hat.entries().iter().map(|&v| v.min(0.0)).sum::<f64>() / (n * n) as f64
}

pub fn sym_loss(d_hat: &RawMatrix) -> f64 {
    let n = d_hat.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += (d_hat.get(i, j) - d_hat.get(j, i)).powi(2);
        }
    }
    s / (n * n) as f64
}

/// Weighted objective for a single sample.
pub fn total_loss(
    d_hat: &RawMatrix,
    d: &DistanceMatrix,
    mu: &[f64],
    logvar: &[f64],
    w: &LossWeights,
) -> Result<LossBreakdown> {
    check_sizes(d_hat, d)?;
    if mu.len() != logvar.len() {
        return Err(Error::Shape("mu and logvar lengths differ".into()));
    }
    let (rec, r) = rec_loss(d_hat, d)?;
    let mut b = LossBreakdown::combine(
        rec,
        kl_loss(mu, logvar),
        diag_loss(d_hat),
        nonneg_loss(d_hat),
        sym_loss(d_hat),
        w,
    );
    b.argmin_reindexing = Some(r);
    Ok(b)
}

/// Weighted objective averaged over a batch.
pub fn batch_total_loss(
    items: &[(&RawMatrix, &DistanceMatrix, &[f64], &[f64])],
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let parts = items
        .iter()
        .map(|(p, d, mu, lv)| total_loss(p, d, mu, lv, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distmat::{edm, normalize, reindex, Direction};

    fn raw(n: usize, v: &[f64]) -> RawMatrix {
        RawMatrix::new(n, v.to_vec()).unwrap()
    }

    fn hexagon() -> DistanceMatrix {
        let pts: Vec<[f64; 2]> = (0..8)
            .map(|i| {
                let t = i as f64 * std::f64::consts::TAU / 8.0;
                [2.0 * t.cos(), t.sin() + 0.3 * (2.0 * t).sin()]
            })
            .collect();
        normalize(&edm(pts)).unwrap()
    }

    #[test]
    fn defaults() {
        let w = LossWeights::default();
        assert_eq!(w.beta, 1e-10);
        assert_eq!((w.gamma, w.delta, w.epsilon), (1e-5, 1e-5, 1e-5));
    }

    #[test]
    fn rec_of_self_is_zero_at_identity() {
        let d = hexagon();
        let (v, r) = rec_loss(&RawMatrix::from(d.clone()), &d).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(r, Reindexing::IDENTITY);
    }

    #[test]
    fn rec_of_any_reindexing_is_zero() {
        let d = hexagon();
        for r in Reindexing::enumerate(8) {
            let p = RawMatrix::from(reindex(&d, r).unwrap());
            assert_eq!(rec_loss(&p, &d).unwrap().0, 0.0);
        }
    }

    #[test]
    fn size_mismatch() {
        let d = hexagon();
        assert!(matches!(
            rec_loss(&raw(2, &[0.0; 4]), &d),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_loss(&[0.0; 3], &[0.0; 3]), 0.0);
        assert!((kl_loss(&[1.0, 0.0], &[0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!(kl_loss(&[0.3, -2.0], &[1.5, -4.0]) > 0.0);
    }

    #[test]
    fn regularizer_examples() {
        assert_eq!(diag_loss(&raw(2, &[3.0, 0.0, 0.0, 4.0])), 12.5);
        assert_eq!(nonneg_loss(&raw(2, &[0.0, -2.0, 1.0, 0.0])), 0.5);
        assert_eq!(sym_loss(&raw(2, &[0.0, 1.0, 3.0, 0.0])), 2.0);
        assert_eq!(sym_loss(&raw(2, &[0.0, 3.0, 1.0, 0.0])), 2.0);
        let m = raw(2, &[1.0, 2.0, -3.0, 0.5]);
        let m3 = raw(2, &m.entries().iter().map(|v| 3.0 * v).collect::<Vec<_>>());
        assert!((diag_loss(&m3) - 9.0 * diag_loss(&m)).abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction_has_zero_total() {
        let d = hexagon();
        let b = total_loss(
            &RawMatrix::from(d.clone()),
            &d,
            &[0.0; 4],
            &[0.0; 4],
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn total_is_weighted_sum() {
        let d = hexagon();
        let p: Vec<f64> = d.entries().iter().enumerate().map(|(i, v)| v + 0.01 * (i % 5) as f64 - 0.02).collect();
        let p = raw(8, &p);
        let w = LossWeights {
            beta: 0.3,
            gamma: 0.7,
            delta: 1.1,
            epsilon: 2.0,
        };
        let b = total_loss(&p, &d, &[0.4, -0.2], &[0.1, -0.5], &w).unwrap();
        let re = b.rec + 0.3 * b.kl + 0.7 * b.diag + 1.1 * b.nonneg + 2.0 * b.sym;
        assert!((b.total - re).abs() <= 1e-12 * re.abs());
        let only_rec = total_loss(&p, &d, &[0.4], &[0.1], &LossWeights::ZERO).unwrap();
        assert_eq!(only_rec.total, only_rec.rec);
    }

    #[test]
    fn plain_mode_ignores_reindexing() {
        let d = hexagon();
        let table = ReindexTable::new(8);
        let shifted = reindex(&d, Reindexing::new(3, Direction::Reverse)).unwrap();
        let (v, r, _) = rec_term(shifted.entries(), d.entries(), &table, RecMode::Plain);
        assert!(v > 0.0);
        assert_eq!(r, Reindexing::IDENTITY);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = hexagon();
        let table = ReindexTable::new(8);
        let mut pred: Vec<f64> = d
            .entries()
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.05 * ((i * 7919) % 13) as f64 / 13.0 - 0.03)
            .collect();
        pred[9] = -0.02;
        let w = LossWeights {
            beta: 0.5,
            gamma: 0.3,
            delta: 0.2,
            epsilon: 0.4,
        };
        let mu = [0.3, -0.1];
        let lv = [0.2, -0.7];
        let g = sample_loss(&pred, d.entries(), &mu, &lv, &w, &table, RecMode::Invariant);
        let h = 1e-4;
        for k in 0..pred.len() {
            let mut a = pred.clone();
            let mut b = pred.clone();
            a[k] += h;
            b[k] -= h;
            let fa = sample_loss(&a, d.entries(), &mu, &lv, &w, &table, RecMode::Invariant);
            let fb = sample_loss(&b, d.entries(), &mu, &lv, &w, &table, RecMode::Invariant);
            let num = (fa.breakdown.total - fb.breakdown.total) / (2.0 * h);
            let an = g.d_pred[k];
            let rel = (an - num).abs() / an.abs().max(num.abs()).max(1e-10);
            assert!(rel < 1e-4 || (an - num).abs() < 1e-10, "k={k} {an} vs {num}");
        }
        for k in 0..2 {
            let mut a = lv;
            let mut b = lv;
            a[k] += h;
            b[k] -= h;
            let fa = sample_loss(&pred, d.entries(), &mu, &a, &w, &table, RecMode::Invariant);
            let fb = sample_loss(&pred, d.entries(), &mu, &b, &w, &table, RecMode::Invariant);
            let num = (fa.breakdown.total - fb.breakdown.total) / (2.0 * h);
            assert!((g.d_logvar[k] - num).abs() < 1e-8);
        }
    }
}
