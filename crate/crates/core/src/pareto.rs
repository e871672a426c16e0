//! Non-dominated filtering and exact 2-D hypervolume, both objectives
//! maximized.

use crate::error::{Error, Result};
use crate::trial::TrialRecord;

/// `a` dominates `b` if it is at least as good in both objectives and
/// strictly better in one.
pub fn dominates(a: [f64; 2], b: [f64; 2]) -> bool {
    a[0] >= b[0] && a[1] >= b[1] && (a[0] > b[0] || a[1] > b[1])
}

/// Indices of the non-dominated points, ascending.
///
/// Sweep over the points sorted by the first objective (descending); a
/// point survives when its second objective beats every point with a
/// strictly larger first objective and is maximal within its tie group.
pub fn non_dominated_indices(points: &[[f64; 2]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[j][0]
            .total_cmp(&points[i][0])
            .then(points[j][1].total_cmp(&points[i][1]))
    });
    let mut keep = Vec::new();
    let mut best_above = f64::NEG_INFINITY;
    let mut g = 0;
    while g < order.len() {
        let f0 = points[order[g]][0];
        let mut end = g;
        while end < order.len() && points[order[end]][0] == f0 {
            end += 1;
        }
        // sorted descending on the second objective within the group
        let group_max = points[order[g]][1];
        for &i in &order[g..end] {
            if points[i][1] == group_max && points[i][1] > best_above {
                keep.push(i);
            }
        }
        best_above = best_above.max(group_max);
        g = end;
    }
    keep.sort_unstable();
    keep
}

/// Non-dominated successful trials, ordered by trial id.
pub fn pareto_front(trials: &[TrialRecord]) -> Vec<&TrialRecord> {
    let ok: Vec<&TrialRecord> = trials.iter().filter(|t| t.is_success()).collect();
    let pts: Vec<[f64; 2]> = ok.iter().map(|t| t.objectives().unwrap().as_array()).collect();
    let mut front: Vec<&TrialRecord> = non_dominated_indices(&pts).into_iter().map(|i| ok[i]).collect();
    front.sort_by_key(|t| t.trial_id);
    front
}

/// Area dominated by `front` and bounded below by `reference`.
///
/// Dominated members of `front` are allowed and contribute nothing.
pub fn hypervolume2d(front: &[[f64; 2]], reference: [f64; 2]) -> Result<f64> {
    for p in front {
        if !(p[0] >= reference[0] && p[1] >= reference[1]) {
            return Err(Error::Hypervolume(format!(
                "point ({}, {}) does not dominate reference ({}, {})",
                p[0], p[1], reference[0], reference[1]
            )));
        }
    }
    let mut pts = front.to_vec();
    pts.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
    let mut area = 0.0;
    let mut level = reference[1];
    for p in pts {
        if p[1] > level {
            area += (p[0] - reference[0]) * (p[1] - level);
            level = p[1];
        }
    }
    Ok(area)
}
