//! Brute-force reference implementations used as test oracles.
//!
//! Each oracle works from first principles (pair enumeration, all-pairs
//! comparison, explicit finite differences) on plain values, without calling
//! the library routine it checks.
#![allow(dead_code)]

/// Cells: `None` missing, `Some(c)` a category code.
pub type Cells = Vec<Vec<Option<u8>>>;

fn item_values(row: &[Option<u8>]) -> Vec<u8> {
    row.iter().flatten().copied().collect()
}

/// Krippendorff's nominal alpha from pairable values.
///
/// Observed disagreement weights each ordered within-unit pair by
/// `1 / (m_u - 1)`; expected disagreement enumerates every ordered pair of
/// distinct pairable values across all units.
pub fn alpha(cells: &Cells) -> Option<f64> {
    let units: Vec<Vec<u8>> = cells.iter().map(|r| item_values(r)).filter(|v| v.len() >= 2).collect();
    let pooled: Vec<u8> = units.iter().flatten().copied().collect();
    let n = pooled.len();
    if n == 0 {
        return None;
    }
    let mut observed = 0.0;
    for unit in &units {
        let m = unit.len();
        let mut disagreeing = 0usize;
        for i in 0..m {
            for j in 0..m {
                if i != j && unit[i] != unit[j] {
                    disagreeing += 1;
                }
            }
        }
        observed += disagreeing as f64 / (m - 1) as f64;
    }
    let d_o = observed / n as f64;
    let mut expected_pairs = 0usize;
    for a in 0..n {
        for b in 0..n {
            if a != b && pooled[a] != pooled[b] {
                expected_pairs += 1;
            }
        }
    }
    if expected_pairs == 0 {
        return None;
    }
    let d_e = expected_pairs as f64 / (n * (n - 1)) as f64;
    Some(1.0 - d_o / d_e)
}

/// Fleiss' kappa with per-item agreement counted over ordered rater pairs.
pub fn kappa(cells: &Cells) -> Option<f64> {
    let units: Vec<Vec<u8>> = cells.iter().map(|r| item_values(r)).collect();
    let m = units.first()?.len();
    if m < 2 || units.iter().any(|u| u.len() != m) {
        return None;
    }
    let mut p_bar = 0.0;
    for unit in &units {
        let mut agreeing = 0usize;
        for i in 0..m {
            for j in 0..m {
                if i != j && unit[i] == unit[j] {
                    agreeing += 1;
                }
            }
        }
        p_bar += agreeing as f64 / (m * (m - 1)) as f64;
    }
    p_bar /= units.len() as f64;
    let total = (units.len() * m) as f64;
    let mut categories: Vec<u8> = units.iter().flatten().copied().collect();
    categories.sort_unstable();
    categories.dedup();
    if categories.len() < 2 {
        return None;
    }
    let p_e: f64 = categories
        .iter()
        .map(|c| {
            let p = units.iter().flatten().filter(|v| *v == c).count() as f64 / total;
            p * p
        })
        .sum();
    Some((p_bar - p_e) / (1.0 - p_e))
}

/// Mean over items with two or more ratings of the agreeing share of ordered rater pairs.
pub fn percent(cells: &Cells) -> Option<f64> {
    let mut sum = 0.0;
    let mut items = 0usize;
    for row in cells {
        let unit = item_values(row);
        let m = unit.len();
        if m < 2 {
            continue;
        }
        let mut agreeing = 0usize;
        for i in 0..m {
            for j in 0..m {
                if i != j && unit[i] == unit[j] {
                    agreeing += 1;
                }
            }
        }
        sum += agreeing as f64 / (m * (m - 1)) as f64;
        items += 1;
    }
    (items > 0).then(|| sum / items as f64)
}

/// All-pairs Mann–Whitney AUC: wins plus half ties over positive × negative pairs.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Mean binary cross-entropy with the score clamp.
pub fn bce(scores: &[f64], ys: &[f64]) -> f64 {
    let eps = 1e-12;
    let total: f64 = scores
        .iter()
        .zip(ys)
        .map(|(&s, &y)| {
            let s = s.clamp(eps, 1.0 - eps);
            -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
        })
        .sum();
    total / scores.len() as f64
}

/// Central finite differences of `f` at `x`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let original = probe[k];
            probe[k] = original + eps;
            let plus = f(&probe);
            probe[k] = original - eps;
            let minus = f(&probe);
            probe[k] = original;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a - n| / max(1e-8, |a| + |n|)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Precision / recall / F1 from plain confusion counts; `None` where undefined.
pub fn f1(predicted: &[bool], actual: &[bool]) -> Option<f64> {
    let tp = predicted.iter().zip(actual).filter(|(p, a)| **p && **a).count() as f64;
    let fp = predicted.iter().zip(actual).filter(|(p, a)| **p && !**a).count() as f64;
    let fn_ = predicted.iter().zip(actual).filter(|(p, a)| !**p && **a).count() as f64;
    if tp + fp == 0.0 || tp + fn_ == 0.0 {
        return None;
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    if precision + recall == 0.0 {
        return Some(0.0);
    }
    Some(2.0 * precision * recall / (precision + recall))
}
