//! Detection scoring (equal error rate) and the correlation battery
//! (Pearson, Spearman, Kendall tau-b) with significance tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Scores of both classes; higher means more bona fide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub bona_scores: Vec<f64>,
    pub spoof_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(bona_scores: Vec<f64>, spoof_scores: Vec<f64>) -> Result<Self> {
        let s = Self {
            bona_scores,
            spoof_scores,
        };
        s.validate()?;
        Ok(s)
    }

    /// Splits scores by label (0 = bona fide, 1 = spoof).
    pub fn from_labeled(scores: &[f64], labels: &[usize]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        let mut bona = Vec::new();
        let mut spoof = Vec::new();
        for (&s, &y) in scores.iter().zip(labels) {
            if y == 0 {
                bona.push(s);
            } else {
                spoof.push(s);
            }
        }
        Self::new(bona, spoof)
    }

    fn validate(&self) -> Result<()> {
        if self.bona_scores.is_empty() || self.spoof_scores.is_empty() {
            return Err(Error::Empty("both classes need at least one score".into()));
        }
        if self
            .bona_scores
            .iter()
            .chain(&self.spoof_scores)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("scores must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub n_bona: usize,
    pub n_spoof: usize,
}

/// Equal error rate. A sample is accepted as bona fide when its score is
/// `>= threshold`; FAR counts accepted spoofs and FRR rejected bona fide
/// samples. Every distinct score is tried as a threshold (plus one above
/// all scores), and the FAR/FRR crossing is linearly interpolated between
/// the two bracketing thresholds.
pub fn compute_eer(scores: &ScoreSet) -> Result<EerResult> {
    scores.validate()?;
    let nb = scores.bona_scores.len();
    let ns = scores.spoof_scores.len();
    let mut bona = scores.bona_scores.clone();
    let mut spoof = scores.spoof_scores.clone();
    bona.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = bona.iter().chain(&spoof).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    // Sweep ascending thresholds with two cursors: bona below t, spoof below t.
    let (mut ib, mut is) = (0usize, 0usize);
    let mut prev: Option<(f64, f64, f64)> = None; // (threshold, far, frr)
    let candidates = thresholds.iter().copied().map(Some).chain(std::iter::once(None));
    for t in candidates {
        let (far, frr) = match t {
            Some(t) => {
                while ib < nb && bona[ib] < t {
                    ib += 1;
                }
                while is < ns && spoof[is] < t {
                    is += 1;
                }
                ((ns - is) as f64 / ns as f64, ib as f64 / nb as f64)
            }
            None => (0.0, 1.0),
        };
        let th = t.unwrap_or(f64::INFINITY);
        if far - frr <= 0.0 {
            let (eer, threshold) = crossing(prev, (th, far, frr));
            return Ok(EerResult {
                eer,
                threshold,
                n_bona: nb,
                n_spoof: ns,
            });
        }
        prev = Some((th, far, frr));
    }
    unreachable!("the sweep ends at FAR = 0, FRR = 1")
}

/// Interpolated crossing given the last point with FAR > FRR and the first
/// point with FAR <= FRR.
pub(crate) fn crossing(prev: Option<(f64, f64, f64)>, cur: (f64, f64, f64)) -> (f64, f64) {
    let (t1, far1, frr1) = cur;
    let d1 = far1 - frr1;
    match prev {
        Some((t0, far0, frr0)) if d1 != 0.0 => {
            let d0 = far0 - frr0;
            let lambda = d0 / (d0 - d1);
            let eer = far0 + lambda * (far1 - far0);
            let threshold = if t1.is_finite() { t0 + lambda * (t1 - t0) } else { t0 };
            (eer, threshold)
        }
        _ => (far1, if t1.is_finite() { t1 } else { f64::MAX }),
    }
}

/// Coefficient and two-sided p-value of one correlation test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub coefficient: f64,
    pub p_value: f64,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} x values vs {} y values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Empty(format!("need at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation inputs must be finite".into()));
    }
    Ok(())
}

fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("an input sequence is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of a correlation `r` over `n` pairs through
/// `t = r sqrt((n - 2) / (1 - r²))` with `n - 2` degrees of freedom.
pub fn t_test_p(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<TestResult> {
    check_pair(x, y)?;
    let r = pearson_r(x, y)?;
    Ok(TestResult {
        coefficient: r,
        p_value: t_test_p(r, x.len()),
    })
}

/// 1-based ranks; ties share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// How the Spearman p-value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpearmanTest {
    #[default]
    TApprox,
    /// Exact enumeration of all permutations; only for n <= 10.
    Permutation,
}

pub const MAX_PERMUTATION_N: usize = 10;

pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult> {
    spearman_with(x, y, SpearmanTest::TApprox)
}

pub fn spearman_with(x: &[f64], y: &[f64], test: SpearmanTest) -> Result<TestResult> {
    check_pair(x, y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let r = pearson_r(&rx, &ry)?;
    let p_value = match test {
        SpearmanTest::TApprox => t_test_p(r, x.len()),
        SpearmanTest::Permutation => permutation_p(&rx, &ry, r)?,
    };
    Ok(TestResult {
        coefficient: r,
        p_value,
    })
}

/// Fraction of orderings of `ry` whose rank correlation with `rx` is at
/// least as extreme as `r`.
fn permutation_p(rx: &[f64], ry: &[f64], r: f64) -> Result<f64> {
    let n = rx.len();
    if n > MAX_PERMUTATION_N {
        return Err(Error::Config(format!(
            "exact permutation test limited to n <= {MAX_PERMUTATION_N}, got {n}"
        )));
    }
    let target = r.abs() - 1e-12;
    let mut perm = ry.to_vec();
    let mut count = 0u64;
    let mut total = 0u64;
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let mut visit = |p: &[f64]| -> Result<()> {
        total += 1;
        if pearson_r(rx, p)?.abs() >= target {
            count += 1;
        }
        Ok(())
    };
    visit(&perm)?;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm)?;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(count as f64 / total as f64)
}

/// Kendall tau-b via Knight's O(n log n) algorithm, with a normal
/// approximation p-value using the tie-corrected variance of the
/// concordant-minus-discordant count.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<TestResult> {
    check_pair(x, y)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let n0 = (n * (n - 1) / 2) as i64;
    // Pairs tied in x, and tied in both.
    let mut n1 = 0i64;
    let mut n3 = 0i64;
    let mut tie_x = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let t = (j - i + 1) as i64;
        n1 += t * (t - 1) / 2;
        tie_x.push(t);
        let mut k = i;
        while k <= j {
            let mut l = k;
            while l < j && y[idx[l + 1]] == y[idx[k]] {
                l += 1;
            }
            let u = (l - k + 1) as i64;
            n3 += u * (u - 1) / 2;
            k = l + 1;
        }
        i = j + 1;
    }

    // Count swaps while merge-sorting by y: that is the discordant count.
    let mut ys: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
    let mut buf = ys.clone();
    let swaps = merge_count(&mut ys, &mut buf);

    let mut n2 = 0i64;
    let mut tie_y = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && ys[j + 1] == ys[i] {
            j += 1;
        }
        let u = (j - i + 1) as i64;
        n2 += u * (u - 1) / 2;
        tie_y.push(u);
        i = j + 1;
    }

    let denom = (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::ZeroVariance("all values tied in x or y".into()));
    }
    let s = (n0 - n1 - n2 + n3 - 2 * swaps) as f64;
    let tau = (s / denom).clamp(-1.0, 1.0);
    Ok(TestResult {
        coefficient: tau,
        p_value: kendall_p(s, n, &tie_x, &tie_y),
    })
}

/// Normal-approximation p-value of the statistic `s = C - D`.
pub(crate) fn kendall_p(s: f64, n: usize, tie_x: &[i64], tie_y: &[i64]) -> f64 {
    let nf = n as f64;
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let f = |ts: &[i64], g: fn(f64) -> f64| ts.iter().map(|&t| g(t as f64)).sum::<f64>();
    let vt = f(tie_x, |t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = f(tie_y, |t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = f(tie_x, |t| t * (t - 1.0)) * f(tie_y, |t| t * (t - 1.0)) / (2.0 * nf * (nf - 1.0));
    let v2 = f(tie_x, |t| t * (t - 1.0) * (t - 2.0)) * f(tie_y, |t| t * (t - 1.0) * (t - 2.0))
        / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    let var = (v0 - vt - vu) / 18.0 + v1 + v2;
    if var <= 0.0 {
        return 1.0;
    }
    let z = s.abs() / var.sqrt();
    statrs::function::erf::erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Stable merge sort of `v` returning the number of inversions (strictly
/// greater elements placed before smaller ones).
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Significance thresholds used to flag correlations.
pub const ALPHA_05: f64 = 0.05;
pub const ALPHA_01: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub p05: bool,
    pub p01: bool,
}

impl Significance {
    pub fn of(p: f64) -> Self {
        Self {
            p05: p <= ALPHA_05,
            p01: p <= ALPHA_01,
        }
    }

    /// `*` at p <= 0.05, `**` at p <= 0.01.
    pub fn marker(&self) -> &'static str {
        if self.p01 {
            "**"
        } else if self.p05 {
            "*"
        } else {
            ""
        }
    }
}

/// One system's point in the sharpness/EER scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemPoint {
    pub system: String,
    pub optimizer: String,
    pub sharpness: f64,
    pub eer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub test_set: String,
    pub n: usize,
    pub pcc: f64,
    pub p_pcc: f64,
    pub srcc: f64,
    pub p_srcc: f64,
    pub ktau: f64,
    pub p_ktau: f64,
    pub sig_pcc: Significance,
    pub sig_srcc: Significance,
    pub sig_ktau: Significance,
    pub points: Vec<SystemPoint>,
}

/// Runs all three tests on (sharpness, EER) pairs across systems.
pub fn correlate_systems(test_set: &str, points: &[SystemPoint]) -> Result<CorrelationReport> {
    let x: Vec<f64> = points.iter().map(|p| p.sharpness).collect();
    let y: Vec<f64> = points.iter().map(|p| p.eer).collect();
    let pcc = pearson(&x, &y)?;
    let srcc = spearman(&x, &y)?;
    let ktau = kendall_tau(&x, &y)?;
    Ok(CorrelationReport {
        test_set: test_set.to_string(),
        n: points.len(),
        pcc: pcc.coefficient,
        p_pcc: pcc.p_value,
        srcc: srcc.coefficient,
        p_srcc: srcc.p_value,
        ktau: ktau.coefficient,
        p_ktau: ktau.p_value,
        sig_pcc: Significance::of(pcc.p_value),
        sig_srcc: Significance::of(srcc.p_value),
        sig_ktau: Significance::of(ktau.p_value),
        points: points.to_vec(),
    })
}

impl CorrelationReport {
    pub const SCATTER_HEADER: &'static str = "test_set,system,optimizer,sharpness,eer";

    pub fn scatter_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{:?},{:?}",
                    self.test_set, p.system, p.optimizer, p.sharpness, p.eer
                )
            })
            .collect()
    }
}
