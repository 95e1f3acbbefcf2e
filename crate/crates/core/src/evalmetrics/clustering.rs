use std::collections::BTreeMap;

use super::EvalError;

/// Counts `n_ij` of items with true class `i` and predicted label `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    /// Rows are the distinct true labels and columns the distinct predicted
    /// labels, each in sorted order.
    pub fn from_labels<L: Ord + Copy>(truth: &[L], pred: &[L]) -> Result<Self, EvalError> {
        if truth.len() != pred.len() {
            return Err(EvalError::Input(format!(
                "{} true labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let rows: BTreeMap<L, usize> = index_of(truth);
        let cols: BTreeMap<L, usize> = index_of(pred);
        let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
        for (t, p) in truth.iter().zip(pred) {
            counts[rows[t]][cols[p]] += 1;
        }
        Ok(Self { counts })
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let w = counts.first().map_or(0, |r| r.len());
        if counts.iter().any(|r| r.len() != w) {
            return Err(EvalError::Input("ragged contingency table".into()));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let w = self.counts.first().map_or(0, |r| r.len());
        (0..w).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// Every nonzero row and column holds exactly one nonzero cell.
    pub fn is_identity_matching(&self) -> bool {
        let nz = |it: &mut dyn Iterator<Item = u64>| it.filter(|&v| v > 0).count();
        self.counts.iter().all(|r| nz(&mut r.iter().copied()) <= 1)
            && (0..self.col_sums().len()).all(|j| nz(&mut self.counts.iter().map(|r| r[j])) <= 1)
    }
}

fn index_of<L: Ord + Copy>(labels: &[L]) -> BTreeMap<L, usize> {
    let mut m: BTreeMap<L, usize> = labels.iter().map(|&l| (l, 0)).collect();
    for (i, v) in m.values_mut().enumerate() {
        *v = i;
    }
    m
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information in nats.
pub fn mutual_info(t: &ContingencyTable) -> f64 {
    let n = t.total() as f64;
    let (a, b) = (t.row_sums(), t.col_sums());
    let mut mi = 0.0;
    for (i, row) in t.counts().iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    mi
}

/// (homogeneity, completeness, V-measure).
pub fn homogeneity_completeness_v(t: &ContingencyTable) -> (f64, f64, f64) {
    let n = t.total() as f64;
    if n == 0.0 {
        return (1.0, 1.0, 1.0);
    }
    let (a, b) = (t.row_sums(), t.col_sums());
    let (hc, hk) = (entropy(&a, n), entropy(&b, n));
    let mut h_c_given_k = 0.0;
    let mut h_k_given_c = 0.0;
    for (i, row) in t.counts().iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                h_c_given_k -= nij / n * (nij / b[j] as f64).ln();
                h_k_given_c -= nij / n * (nij / a[i] as f64).ln();
            }
        }
    }
    let h = if hc == 0.0 { 1.0 } else { 1.0 - h_c_given_k / hc };
    let c = if hk == 0.0 { 1.0 } else { 1.0 - h_k_given_c / hk };
    let v = if h + c == 0.0 { 0.0 } else { 2.0 * h * c / (h + c) };
    (h, c, v)
}

fn pairs(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Hubert-Arabie adjusted Rand index.
pub fn adjusted_rand(t: &ContingencyTable) -> Result<f64, EvalError> {
    let n = t.total();
    if n < 2 {
        return Err(EvalError::Input(format!("adjusted Rand needs at least 2 items, got {n}")));
    }
    let index: f64 = t.counts().iter().flatten().map(|&v| pairs(v)).sum();
    let a: f64 = t.row_sums().into_iter().map(pairs).sum();
    let b: f64 = t.col_sums().into_iter().map(pairs).sum();
    let expected = a * b / pairs(n);
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(if t.is_identity_matching() { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

fn log_factorials(n: usize) -> Vec<f64> {
    let mut lf = vec![0.0; n + 1];
    for i in 1..=n {
        lf[i] = lf[i - 1] + (i as f64).ln();
    }
    lf
}

/// Expected mutual information under the hypergeometric model of random
/// labelings with fixed marginals.
pub fn expected_mutual_info(t: &ContingencyTable) -> f64 {
    let n = t.total() as usize;
    if n == 0 {
        return 0.0;
    }
    let lf = log_factorials(n);
    let nf = n as f64;
    let (a, b) = (t.row_sums(), t.col_sums());
    let mut emi = 0.0;
    for &ai in a.iter().filter(|&&v| v > 0) {
        let ai = ai as usize;
        for &bj in b.iter().filter(|&&v| v > 0) {
            let bj = bj as usize;
            let lo = (ai + bj).saturating_sub(n).max(1);
            let hi = ai.min(bj);
            let fixed = lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj] - lf[n];
            for nij in lo..=hi {
                let x = nij as f64;
                let term = x / nf * (nf * x / (ai as f64 * bj as f64)).ln();
                let logp = fixed - lf[nij] - lf[ai - nij] - lf[bj - nij] - lf[n + nij - ai - bj];
                emi += term * logp.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information with arithmetic-mean normalization. Identical
/// partitions score 1; any other zero denominator scores 0.
pub fn adjusted_mutual_info(t: &ContingencyTable) -> Result<f64, EvalError> {
    let n = t.total();
    if n < 2 {
        return Err(EvalError::Input(format!("adjusted mutual information needs at least 2 items, got {n}")));
    }
    if t.is_identity_matching() {
        return Ok(1.0);
    }
    let nf = n as f64;
    let mean_h = 0.5 * (entropy(&t.row_sums(), nf) + entropy(&t.col_sums(), nf));
    let mi = mutual_info(t);
    let emi = expected_mutual_info(t);
    let denom = mean_h - emi;
    if denom.abs() < 1e-15 {
        return Ok(0.0);
    }
    Ok((mi - emi) / denom)
}
