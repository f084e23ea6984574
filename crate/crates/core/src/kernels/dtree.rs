use crate::matrix::FeatureMatrix;

/// Greedy depth-first CART-style builder (Gini impurity, single-feature
/// thresholds). Every node shallower than `max_depth` reads its samples'
/// rows through its index list, in index order, before deciding whether to
/// split; `visit` receives those row reads.
pub(crate) fn grow(
    ds: &FeatureMatrix,
    labels: &[u32],
    max_depth: usize,
    visit: &mut impl FnMut(usize),
) -> usize {
    let classes = labels.iter().copied().max().map_or(0, |c| c as usize + 1);
    let mut nodes = 0;
    let idx: Vec<usize> = (0..ds.n()).collect();
    grow_node(ds, labels, classes, idx, 0, max_depth, visit, &mut nodes);
    nodes
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    ds: &FeatureMatrix,
    labels: &[u32],
    classes: usize,
    idx: Vec<usize>,
    depth: usize,
    max_depth: usize,
    visit: &mut impl FnMut(usize),
    nodes: &mut usize,
) {
    *nodes += 1;
    if depth >= max_depth || idx.is_empty() {
        return;
    }
    for &i in &idx {
        visit(i);
    }
    let Some((feature, threshold)) = best_split(ds, labels, classes, &idx) else {
        return;
    };
    let (left, right): (Vec<usize>, Vec<usize>) =
        idx.into_iter().partition(|&i| ds.row(i)[feature] <= threshold);
    grow_node(ds, labels, classes, left, depth + 1, max_depth, visit, nodes);
    grow_node(ds, labels, classes, right, depth + 1, max_depth, visit, nodes);
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

/// Best (feature, threshold) by weighted Gini decrease; `None` when the node
/// is pure or no threshold strictly improves impurity.
fn best_split(
    ds: &FeatureMatrix,
    labels: &[u32],
    classes: usize,
    idx: &[usize],
) -> Option<(usize, f64)> {
    let n = idx.len();
    let mut total = vec![0usize; classes];
    for &i in idx {
        total[labels[i] as usize] += 1;
    }
    let parent = gini(&total, n);
    if parent == 0.0 {
        return None;
    }
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = idx.to_vec();
    let mut left = vec![0usize; classes];
    let mut right = vec![0usize; classes];
    for f in 0..ds.m() {
        sorted.sort_unstable_by(|&a, &b| ds.row(a)[f].total_cmp(&ds.row(b)[f]).then(a.cmp(&b)));
        left.iter_mut().for_each(|c| *c = 0);
        right.copy_from_slice(&total);
        for k in 0..n - 1 {
            let c = labels[sorted[k]] as usize;
            left[c] += 1;
            right[c] -= 1;
            let (a, b) = (ds.row(sorted[k])[f], ds.row(sorted[k + 1])[f]);
            if a == b {
                continue;
            }
            let nl = k + 1;
            let weighted = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl))
                / n as f64;
            if weighted < parent - 1e-12 && best.is_none_or(|(w, _, _)| weighted < w) {
                best = Some((weighted, f, a + (b - a) / 2.0));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}
