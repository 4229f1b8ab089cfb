use std::cmp::Ordering;

/// Descending by score, then ascending by index.
#[inline]
pub(crate) fn by_score_desc(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `k` largest scores ordered by score descending; ties go to the lower index.
pub(crate) fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| by_score_desc(scores, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| by_score_desc(scores, a, b));
    idx
}

/// `ceil(fraction * total)`, ignoring floating noise in the product (0.1 * 30 is 3, not 4).
pub(crate) fn ceil_fraction(fraction: f64, total: usize) -> usize {
    let x = fraction * total as f64;
    let nearest = x.round();
    let v = if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (v.max(0.0) as usize).min(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k_indices(&[3.0, 1.0, 2.0], 2), vec![0, 2]);
        assert_eq!(top_k_indices(&[1.0, 1.0, 1.0, 1.0], 2), vec![0, 1]);
        assert_eq!(top_k_indices(&[0.5, 2.0, 2.0, 0.1], 3), vec![1, 2, 0]);
        assert_eq!(top_k_indices(&[1.0, 2.0], 0), Vec::<usize>::new());
    }

    #[test]
    fn ceil_fraction_is_robust_to_float_noise() {
        assert_eq!(ceil_fraction(0.1, 30), 3);
        assert_eq!(ceil_fraction(0.15000000000000002, 20), 3);
        assert_eq!(ceil_fraction(0.25, 32), 8);
        assert_eq!(ceil_fraction(0.26, 32), 9);
        assert_eq!(ceil_fraction(0.0, 32), 0);
        assert_eq!(ceil_fraction(1.0, 32), 32);
        assert_eq!(ceil_fraction(1.0 / 32.0, 32), 1);
    }
}
