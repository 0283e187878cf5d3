//! Row and column orderings that expose band structure.

use crate::matrix::{Permutation, TripletMatrix};
use crate::scalar::Scalar;

/// Row permutation sorting rows by `(first, last)` nonzero column.
///
/// The sort is stable and all-zero rows go last, so applying it to its own
/// output gives the identity. For a row shuffle of a banded matrix the
/// original band profile is recovered.
pub fn row_banding_permutation<T: Scalar>(pattern: &TripletMatrix<T>) -> Permutation {
    let spans = pattern.row_spans();
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| match spans[i] {
        Some((f, l)) => (0, f, l),
        None => (1, 0, 0),
    });
    Permutation::from_order(&order).expect("sorted indices form a bijection")
}

/// Row permutation sorting rows by first nonzero column only (stable, zero
/// rows last). Used to interleave stacked triangular factors.
pub fn first_column_permutation<T: Scalar>(pattern: &TripletMatrix<T>) -> Permutation {
    let spans = pattern.row_spans();
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| match spans[i] {
        Some((f, _)) => (0, f),
        None => (1, 0),
    });
    Permutation::from_order(&order).expect("sorted indices form a bijection")
}

/// Column permutation sorting columns by `(first nonzero row, degree)`,
/// stable, with empty columns last. `map[j]` is the new index of column `j`.
pub fn column_fill_reducing_permutation<T: Scalar>(pattern: &TripletMatrix<T>) -> Permutation {
    let n = pattern.cols();
    let mut first = vec![usize::MAX; n];
    let mut degree = vec![0usize; n];
    for &(i, j, v) in pattern.entries() {
        if v != T::zero() {
            first[j] = first[j].min(i);
            degree[j] += 1;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| (first[j] == usize::MAX, first[j], degree[j]));
    Permutation::from_order(&order).expect("sorted indices form a bijection")
}

/// Interleaves the rows of a diagonal `D` (`m x m`) into an upper
/// triangular `R` (`m x m`) stacked as `[R; D]`.
///
/// `r_profile[i]` is the last nonzero column of row `i` of `R`. Row `j` of
/// `D` is placed right after the last row of `R` whose band `i..=r_profile[i]`
/// covers column `j`. The result acts on `2m` rows.
pub fn lm_interleave_permutation(r_profile: &[usize], m: usize) -> Permutation {
    assert_eq!(r_profile.len(), m, "profile length must equal m");
    // Sort keys: R row i -> (i, 0); D row j -> (cover(j), 1).
    let mut keys: Vec<(usize, usize, usize)> = Vec::with_capacity(2 * m);
    for i in 0..m {
        keys.push((i, 0, i));
    }
    for j in 0..m {
        let cover = (0..=j).rev().find(|&i| r_profile[i] >= j && r_profile[i] >= i);
        keys.push((cover.unwrap_or(j), 1, m + j));
    }
    keys.sort_unstable();
    let order: Vec<usize> = keys.into_iter().map(|(_, _, src)| src).collect();
    Permutation::from_order(&order).expect("interleave is a bijection")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{permute_columns, RowPermute};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn band(n: usize, m: usize, w: usize) -> TripletMatrix<f64> {
        // Row i covers columns first(i)..first(i)+w, advancing with i.
        let mut t = TripletMatrix::new(n, m);
        for i in 0..n {
            let f = (i * (m - w)) / n.max(1);
            for j in f..(f + w).min(m) {
                t.push(i, j, 1.0 + (i + j) as f64).unwrap();
            }
        }
        t
    }

    #[test]
    fn banded_input_is_left_alone() {
        let t = band(12, 6, 3);
        assert!(row_banding_permutation(&t).is_identity());
        assert!(column_fill_reducing_permutation(&t).is_identity());
    }

    #[test]
    fn shuffled_block_diagonal_is_restored() {
        let mut t = TripletMatrix::<f64>::new(12, 6);
        for b in 0..3 {
            for i in 0..4 {
                for j in 0..2 {
                    t.push(4 * b + i, 2 * b + j, 1.0).unwrap();
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut order: Vec<usize> = (0..12).collect();
        order.shuffle(&mut rng);
        order.reverse();
        let shuffled = t.permute_rows(&Permutation::from_order(&order).unwrap()).unwrap();
        assert!(shuffled.envelope_bandwidth() > 1);
        let p = row_banding_permutation(&shuffled);
        let restored = shuffled.permute_rows(&p).unwrap();
        assert_eq!(restored.envelope_bandwidth(), 1);
        assert_eq!(restored.to_dense(), t.to_dense());
    }

    #[test]
    fn dense_row_sorts_after_narrower_rows_at_zero() {
        let t = TripletMatrix::<f64>::from_entries(
            3,
            4,
            vec![(0, 0, 1.0), (0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (1, 0, 1.0), (2, 1, 1.0)],
        )
        .unwrap();
        let p = row_banding_permutation(&t);
        assert_eq!(p.map(), &[1, 0, 2]);
    }

    #[test]
    fn zero_rows_go_last() {
        let t = TripletMatrix::<f64>::from_entries(3, 2, vec![(1, 1, 1.0)]).unwrap();
        assert_eq!(row_banding_permutation(&t).order(), vec![1, 0, 2]);
    }

    #[test]
    fn arrow_column_is_ordered_last_among_row_zero_columns() {
        let mut t = TripletMatrix::<f64>::new(4, 4);
        for i in 0..4 {
            t.push(i, 3, 1.0).unwrap();
        }
        t.push(0, 0, 1.0).unwrap();
        t.push(0, 1, 1.0).unwrap();
        t.push(2, 2, 1.0).unwrap();
        let p = column_fill_reducing_permutation(&t);
        assert_eq!(p.order(), vec![0, 1, 3, 2]);
    }

    #[test]
    fn column_shuffle_is_restored() {
        let t = band(10, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut order: Vec<usize> = (0..8).collect();
        order.shuffle(&mut rng);
        let shuffled = permute_columns(&t, &Permutation::from_order(&order).unwrap()).unwrap();
        let restored = permute_columns(&shuffled, &column_fill_reducing_permutation(&shuffled)).unwrap();
        assert_eq!(restored.to_dense(), t.to_dense());
    }

    #[test]
    fn interleave_of_diagonal_and_bidiagonal() {
        let diag = lm_interleave_permutation(&[0, 1, 2], 3);
        assert_eq!(diag.order(), vec![0, 3, 1, 4, 2, 5]);
        let bidiag = lm_interleave_permutation(&[1, 2, 2], 3);
        assert_eq!(bidiag.order(), vec![0, 3, 1, 4, 2, 5]);
        let mut t = TripletMatrix::<f64>::new(6, 3);
        for i in 0..3 {
            t.push(i, i, 2.0).unwrap();
            if i + 1 < 3 {
                t.push(i, i + 1, 1.0).unwrap();
            }
            t.push(3 + i, i, 1.0).unwrap();
        }
        let pt = t.permute_rows(&bidiag).unwrap();
        // Two columns per row: last - first = 1.
        assert_eq!(pt.bandwidth(), 1);
        assert_eq!(pt.envelope_bandwidth(), 1);
    }

    proptest! {
        #[test]
        fn banding_is_idempotent_and_restores_bandwidth(
            n in 4usize..30, m in 3usize..12, w in 1usize..4, seed in 0u64..1000
        ) {
            let w = w.min(m);
            let t = band(n, m, w);
            let original = t.envelope_bandwidth();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let shuffled = t.permute_rows(&Permutation::from_order(&order).unwrap()).unwrap();
            let p = row_banding_permutation(&shuffled);
            let sorted = shuffled.permute_rows(&p).unwrap();
            prop_assert_eq!(sorted.envelope_bandwidth(), original);
            prop_assert!(sorted.envelope_bandwidth() <= shuffled.envelope_bandwidth());
            prop_assert!(row_banding_permutation(&sorted).is_identity());
        }

        #[test]
        fn interleave_widens_band_by_at_most_one(m in 1usize..40, widths in prop::collection::vec(0usize..6, 40)) {
            let profile: Vec<usize> = (0..m).map(|i| (i + widths[i]).min(m - 1)).collect();
            let mut r = TripletMatrix::<f64>::new(m, m);
            let mut t = TripletMatrix::<f64>::new(2 * m, m);
            for i in 0..m {
                for j in i..=profile[i] {
                    r.push(i, j, 1.0).unwrap();
                    t.push(i, j, 1.0).unwrap();
                }
                t.push(m + i, i, 1.0).unwrap();
            }
            let r_band = r.envelope_bandwidth();
            let p = lm_interleave_permutation(&profile, m);
            let pt = t.permute_rows(&p).unwrap();
            prop_assert!(pt.envelope_bandwidth() <= r_band + 1);
            let firsts: Vec<usize> = pt.row_spans().into_iter().map(|s| s.unwrap().0).collect();
            prop_assert!(firsts.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
