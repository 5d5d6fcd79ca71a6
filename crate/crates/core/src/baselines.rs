//! Reference methods run against the model: order heuristics and simple
//! imputers. These are small stand-ins, not reimplementations of published
//! discovery or imputation systems.

use rand::seq::SliceRandom;

use crate::error::{invalid, Result};
use crate::rng::TabRng;
use crate::table::Table;
use crate::training::Standardization;

/// Uniform random permutation of `0..d`.
pub fn random_order(d: usize, rng: &mut TabRng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..d).collect();
    p.shuffle(rng);
    p
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Rounds to ten significant digits so that values equal up to float noise
/// compare equal.
fn sort_key(v: f64) -> f64 {
    format!("{v:.9e}").parse().unwrap_or(v)
}

/// Columns by ascending marginal variance (missing cells mean-imputed).
pub fn variance_sort_order(table: &Table) -> Result<Vec<usize>> {
    if table.d() == 0 {
        return Err(invalid("table has no columns"));
    }
    let filled = mean_impute(table)?;
    let keys: Vec<f64> = (0..table.d()).map(|c| sort_key(variance(&filled.observed_column(c)))).collect();
    let mut idx: Vec<usize> = (0..table.d()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    Ok(idx)
}

/// Solves the small symmetric positive definite system `a·x = b` in place
/// (Gaussian elimination with partial pivoting).
fn solve(a: &mut [f64], b: &mut [f64], m: usize) -> Option<()> {
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i * m + col].abs().total_cmp(&a[j * m + col].abs()))?;
        if a[piv * m + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..m {
                a.swap(col * m + j, piv * m + j);
            }
            b.swap(col, piv);
        }
        for i in col + 1..m {
            let f = a[i * m + col] / a[col * m + col];
            for j in col..m {
                a[i * m + j] -= f * a[col * m + j];
            }
            b[i] -= f * b[col];
        }
    }
    for i in (0..m).rev() {
        let mut v = b[i];
        for j in i + 1..m {
            v -= a[i * m + j] * b[j];
        }
        b[i] = v / a[i * m + i];
    }
    Some(())
}

/// Leave-one-out local-linear kNN regression of `target` on `inputs` (rows
/// of predictors, already scaled); returns the residual variance. Each
/// prediction is the intercept of a ridge-stabilized linear fit on the `k`
/// nearest rows, which removes most of the boundary bias of a plain
/// neighbor mean.
pub fn knn_residual_variance(inputs: &[Vec<f64>], target: &[f64], k: usize) -> Result<f64> {
    let n = target.len();
    if n <= k || k == 0 {
        return Err(invalid(format!("kNN regression needs 1 <= k < n (k = {k}, n = {n})")));
    }
    let p = inputs.first().map_or(0, Vec::len);
    let m = p + 1;
    let ridge = 1e-6 * k as f64;
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    let mut row = vec![0.0; m];
    let mut sse = 0.0;
    for r in 0..n {
        dist.clear();
        for s in 0..n {
            if s == r {
                continue;
            }
            let d2: f64 = inputs[r].iter().zip(&inputs[s]).map(|(a, b)| (a - b) * (a - b)).sum();
            dist.push((d2, s));
        }
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mean = dist[..k].iter().map(|&(_, s)| target[s]).sum::<f64>() / k as f64;
        gram.fill(0.0);
        rhs.fill(0.0);
        for &(_, s) in &dist[..k] {
            row[0] = 1.0;
            for j in 0..p {
                row[j + 1] = inputs[s][j] - inputs[r][j];
            }
            for a in 0..m {
                for b in 0..m {
                    gram[a * m + b] += row[a] * row[b];
                }
                rhs[a] += row[a] * target[s];
            }
        }
        for j in 1..m {
            gram[j * m + j] += ridge;
        }
        let pred = match solve(&mut gram, &mut rhs, m) {
            Some(()) if rhs[0].is_finite() => rhs[0],
            _ => mean,
        };
        let e = target[r] - pred;
        sse += e * e;
    }
    Ok(sse / n as f64)
}

fn standardized_columns(table: &Table) -> Vec<Vec<f64>> {
    let std = Standardization::fit(table);
    (0..table.d())
        .map(|c| {
            table
                .observed_column(c)
                .iter()
                .map(|&v| (v - std.mean[c]) / std.std[c])
                .collect()
        })
        .collect()
}

fn rows_of(cols: &[Vec<f64>], which: &[usize], n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|r| which.iter().map(|&c| cols[c][r]).collect()).collect()
}

/// Greedy order by kNN explainability: the first column is the one hardest
/// to explain from any single other column; each next column is the one
/// best explained by the columns already placed.
pub fn greedy_residual_order(table: &Table, k: usize) -> Result<Vec<usize>> {
    let (n, d) = (table.n(), table.d());
    if table.missing_count() > 0 {
        return Err(invalid("greedy_residual_order needs a fully observed table"));
    }
    if d == 0 {
        return Err(invalid("table has no columns"));
    }
    if n <= k {
        return Err(invalid(format!("greedy_residual_order: n = {n} must exceed k = {k}")));
    }
    let cols = standardized_columns(table);
    // standardized columns have unit variance unless constant
    let ratio = |c: usize, given: &[usize]| -> Result<f64> {
        let var = variance(&cols[c]);
        if var <= 0.0 {
            return Ok(0.0);
        }
        Ok(knn_residual_variance(&rows_of(&cols, given, n), &cols[c], k)? / var)
    };
    if d == 1 {
        return Ok(vec![0]);
    }
    let mut first = (f64::NEG_INFINITY, 0);
    for c in 0..d {
        let mut best = f64::INFINITY;
        for o in (0..d).filter(|&o| o != c) {
            best = best.min(ratio(c, &[o])?);
        }
        if best > first.0 {
            first = (best, c);
        }
    }
    let mut order = vec![first.1];
    while order.len() < d {
        let mut next = (f64::INFINITY, usize::MAX);
        for c in (0..d).filter(|c| !order.contains(c)) {
            let r = ratio(c, &order)?;
            if r < next.0 {
                next = (r, c);
            }
        }
        order.push(next.1);
    }
    Ok(order)
}

/// Replaces missing cells by their column's observed mean.
pub fn mean_impute(table: &Table) -> Result<Table> {
    let mut out = table.clone();
    for c in 0..table.d() {
        let xs = table.observed_column(c);
        if xs.is_empty() {
            return Err(invalid(format!("column {c} has no observed cells")));
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        for r in 0..table.n() {
            if table.is_missing(r, c) {
                out.set(r, c, m)?;
            }
        }
    }
    Ok(out)
}

/// Fills each missing cell with the mean of its `k` nearest donor rows.
/// Distance is the mean squared difference over columns observed in both
/// rows (standardized); donors sharing no observed column rank last.
pub fn knn_impute(table: &Table, k: usize) -> Result<Table> {
    if k == 0 {
        return Err(invalid("knn_impute needs k >= 1"));
    }
    let (n, d) = (table.n(), table.d());
    let std = Standardization::fit(table);
    for c in 0..d {
        if table.observed_column(c).is_empty() {
            return Err(invalid(format!("column {c} has no observed cells")));
        }
    }
    let z = |r: usize, c: usize| table.get(r, c).map(|v| (v - std.mean[c]) / std.std[c]);
    let mut out = table.clone();
    let mut donors: Vec<(f64, usize)> = Vec::new();
    for r in 0..n {
        let missing: Vec<usize> = (0..d).filter(|&c| table.is_missing(r, c)).collect();
        if missing.is_empty() {
            continue;
        }
        for &c in &missing {
            donors.clear();
            for s in (0..n).filter(|&s| s != r && !table.is_missing(s, c)) {
                let mut sum = 0.0;
                let mut count = 0usize;
                for j in (0..d).filter(|&j| j != c) {
                    if let (Some(a), Some(b)) = (z(r, j), z(s, j)) {
                        sum += (a - b) * (a - b);
                        count += 1;
                    }
                }
                let dist = if count == 0 { f64::INFINITY } else { sum / count as f64 };
                donors.push((dist, s));
            }
            donors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let used = &donors[..k.min(donors.len())];
            let v = used.iter().map(|&(_, s)| table.get(s, c).expect("donor observed")).sum::<f64>() / used.len() as f64;
            out.set(r, c, v)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn random_order_basics() {
        assert_eq!(random_order(1, &mut substream(0, Stream::Baseline, 0)), vec![0]);
        let a = random_order(8, &mut substream(5, Stream::Baseline, 0));
        let b = random_order(8, &mut substream(5, Stream::Baseline, 0));
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn variance_sort_recovers_linear_chain() {
        let mut rng = substream(1, Stream::Data, 0);
        let n = 2000;
        let mut vals = Vec::new();
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y = 2.0 * x + Distribution::<f64>::sample(&StandardNormal, &mut rng);
            let z = 1.5 * y + Distribution::<f64>::sample(&StandardNormal, &mut rng);
            // stored as (z, x, y)
            vals.extend([z, x, y]);
        }
        let t = Table::fully_observed(n, 3, vals).unwrap();
        assert_eq!(variance_sort_order(&t).unwrap(), vec![1, 2, 0]);
        let zt = Standardization::fit(&t).apply(&t).unwrap();
        assert_eq!(variance_sort_order(&zt).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn greedy_finds_cubic_cause() {
        let mut rng = substream(2, Stream::Data, 0);
        let n = 1000;
        let mut vals = Vec::new();
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y = x * x * x + 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            vals.extend([y, x]);
        }
        let t = Table::fully_observed(n, 2, vals).unwrap();
        assert_eq!(greedy_residual_order(&t, 20).unwrap(), vec![1, 0]);
        assert_eq!(greedy_residual_order(&t, 20).unwrap(), greedy_residual_order(&t, 20).unwrap());
        assert!(greedy_residual_order(&t.select_rows(&(0..10).collect::<Vec<_>>()).unwrap(), 20).is_err());
    }

    #[test]
    fn greedy_independent_columns_is_permutation() {
        let mut rng = substream(3, Stream::Data, 0);
        let vals: Vec<f64> = (0..300 * 4).map(|_| rng.random()).collect();
        let t = Table::fully_observed(300, 4, vals).unwrap();
        let mut o = greedy_residual_order(&t, 10).unwrap();
        o.sort();
        assert_eq!(o, vec![0, 1, 2, 3]);
    }

    #[test]
    fn imputer_examples() {
        let full = Table::fully_observed(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(mean_impute(&full).unwrap(), full);
        assert_eq!(knn_impute(&full, 1).unwrap(), full);

        let mut t = Table::fully_observed(3, 1, vec![1.0, 3.0, 0.0]).unwrap();
        t.set_missing(2, 0);
        assert_eq!(mean_impute(&t).unwrap().get(2, 0), Some(2.0));

        let mut all = t.clone();
        all.set_missing(0, 0);
        all.set_missing(1, 0);
        assert!(mean_impute(&all).is_err());
        assert!(knn_impute(&all, 1).is_err());

        // row 3 duplicates row 0 on its observed columns
        let mut d = Table::fully_observed(
            4,
            3,
            vec![0.5, -1.0, 7.0, 2.0, 3.0, 1.0, -4.0, 0.0, 2.5, 0.5, -1.0, 0.0],
        )
        .unwrap();
        d.set_missing(3, 2);
        let filled = knn_impute(&d, 1).unwrap();
        assert_eq!(filled.get(3, 2), Some(7.0));
    }
}
