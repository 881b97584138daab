use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Binary presence matrix of pseudo examples, one row per example.
///
/// When `includes_full_mask` is set, row 0 is the original input (all
/// ones). Sampled rows may coincide with it by chance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskMatrix {
    width: usize,
    cells: Vec<bool>,
    includes_full_mask: bool,
}

impl MaskMatrix {
    pub fn from_rows(rows: Vec<Vec<bool>>, includes_full_mask: bool) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 {
            return Err(Error::invalid("mask matrix needs at least one column"));
        }
        if rows.len() < 2 {
            return Err(Error::invalid("mask matrix needs at least two rows"));
        }
        for (j, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid(format!(
                    "row {j} has width {}, want {width}",
                    row.len()
                )));
            }
            if !row.iter().any(|&b| b) {
                return Err(Error::invalid(format!("row {j} is empty")));
            }
        }
        if includes_full_mask && !rows[0].iter().all(|&b| b) {
            return Err(Error::invalid("row 0 must be the full mask"));
        }
        Ok(Self {
            width,
            cells: rows.into_iter().flatten().collect(),
            includes_full_mask,
        })
    }

    /// Every nonempty coalition of `width` players, the full one first.
    /// Rows after the first follow increasing bit pattern order.
    pub fn exhaustive(width: usize) -> Result<Self> {
        if !(1..=20).contains(&width) {
            return Err(Error::invalid(format!(
                "exhaustive masks need 1 <= width <= 20, got {width}"
            )));
        }
        let full = (1u64 << width) - 1;
        let mut rows = vec![vec![true; width]];
        for bits in 1..full {
            rows.push((0..width).map(|i| bits >> i & 1 == 1).collect());
        }
        if rows.len() == 1 {
            // a single player has only the full coalition
            rows.push(vec![true]);
        }
        Self::from_rows(rows, true)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.cells.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn includes_full_mask(&self) -> bool {
        self.includes_full_mask
    }

    pub fn row(&self, j: usize) -> &[bool] {
        &self.cells[j * self.width..(j + 1) * self.width]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[bool]> {
        self.cells.chunks(self.width)
    }

    pub fn ones(&self, j: usize) -> usize {
        self.row(j).iter().filter(|&&b| b).count()
    }
}

/// One row with a subset size uniform in `1..=max_size`, positions uniform
/// without replacement.
pub(crate) fn sample_row<R: Rng + ?Sized>(rng: &mut R, width: usize, max_size: usize) -> Vec<bool> {
    let size = rng.random_range(1..=max_size);
    let mut row = vec![false; width];
    for i in index::sample(rng, width, size) {
        row[i] = true;
    }
    row
}

/// `m` rows over `l` tokens: the full mask followed by `m - 1` sampled
/// pseudo examples.
pub fn generate_masks(l: usize, m: usize, seed: u64) -> Result<MaskMatrix> {
    if l == 0 {
        return Err(Error::invalid("need at least one token"));
    }
    if m < 2 {
        return Err(Error::invalid(format!(
            "need at least two pseudo examples, got {m}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut cells = Vec::with_capacity(l * m);
    cells.extend(std::iter::repeat_n(true, l));
    for _ in 1..m {
        cells.extend(sample_row(&mut rng, l, l));
    }
    Ok(MaskMatrix {
        width: l,
        cells,
        includes_full_mask: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_rows_are_all_ones() {
        let m = generate_masks(1, 3, 0).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.rows().all(|r| r == [true]));
    }

    #[test]
    fn shape_and_first_row() {
        let m = generate_masks(20, 200, 5).unwrap();
        assert_eq!((m.len(), m.width()), (200, 20));
        assert!(m.row(0).iter().all(|&b| b));
        assert!(m.includes_full_mask());
        assert!((0..m.len()).all(|j| m.ones(j) >= 1));
        assert_eq!(m, generate_masks(20, 200, 5).unwrap());
        assert_ne!(m, generate_masks(20, 200, 6).unwrap());
    }

    #[test]
    fn covers_all_subset_sizes() {
        let m = generate_masks(6, 2000, 1).unwrap();
        let mut seen = [0usize; 7];
        for j in 1..m.len() {
            seen[m.ones(j)] += 1;
        }
        assert_eq!(seen[0], 0);
        // uniform sizes: ~333 each
        for &c in &seen[1..] {
            assert!((250..420).contains(&c), "{seen:?}");
        }
    }

    #[test]
    fn exhaustive_enumerates_nonempty_coalitions() {
        let m = MaskMatrix::exhaustive(4).unwrap();
        assert_eq!(m.len(), 15);
        assert!(m.row(0).iter().all(|&b| b));
        assert!((1..m.len()).all(|j| m.ones(j) < 4));
    }

    #[test]
    fn rejects_invalid_rows() {
        assert!(MaskMatrix::from_rows(vec![vec![true, false], vec![false, false]], false).is_err());
        assert!(MaskMatrix::from_rows(vec![vec![true, false], vec![true, true]], true).is_err());
        assert!(generate_masks(3, 1, 0).is_err());
    }
}
