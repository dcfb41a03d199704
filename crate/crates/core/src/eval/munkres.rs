/// Minimum-cost perfect assignment on a square cost matrix (rows to
/// columns) by successive shortest augmenting paths with potentials.
///
/// Returns `assignment[row] = col`.
pub fn munkres(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(cost.iter().all(|r| r.len() == n), "cost matrix must be square");
    // 1-based arrays; column 0 is a virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[r0 - 1][j - 1] - u[r0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximum-total-weight one-to-one matching on a rectangular non-negative
/// weight matrix. Returns `(row, col)` pairs with positive weight.
pub fn max_weight_matching(weights: &[Vec<f64>], cols: usize) -> Vec<(usize, usize)> {
    let rows = weights.len();
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let max = weights
        .iter()
        .flat_map(|r| r.iter().copied())
        .fold(0.0f64, f64::max);
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i < rows && j < cols { max - weights[i][j] } else { max })
                .collect()
        })
        .collect();
    munkres(&cost)
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < rows && j < cols && weights[i][j] > 0.0)
        .collect()
}
