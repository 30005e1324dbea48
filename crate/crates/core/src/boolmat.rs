//! Dense binary matrices with boolean-semiring products.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BoolMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![true; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.cols + j] = v;
    }

    /// Boolean product: `(self * rhs)[i][j] = OR_k self[i][k] AND rhs[k][j]`.
    pub fn mul(&self, rhs: &BoolMatrix) -> BoolMatrix {
        assert_eq!(self.cols, rhs.rows, "boolean product dimension mismatch");
        let mut out = BoolMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                if !self.get(i, k) {
                    continue;
                }
                for j in 0..rhs.cols {
                    if rhs.get(k, j) {
                        out.set(i, j, true);
                    }
                }
            }
        }
        out
    }

    pub fn or(&self, rhs: &BoolMatrix) -> BoolMatrix {
        self.zip(rhs, |a, b| a || b)
    }

    pub fn and(&self, rhs: &BoolMatrix) -> BoolMatrix {
        self.zip(rhs, |a, b| a && b)
    }

    pub fn not(&self) -> BoolMatrix {
        BoolMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    fn zip(&self, rhs: &BoolMatrix, f: impl Fn(bool, bool) -> bool) -> BoolMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        BoolMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Entrywise `self <= rhs`.
    pub fn is_subset_of(&self, rhs: &BoolMatrix) -> bool {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.data.iter().zip(&rhs.data).all(|(&a, &b)| !a || b)
    }

    pub fn all(&self) -> bool {
        self.data.iter().all(|&v| v)
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&v| v)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Expand an `n x m` block pattern into entries, block `(i,j)` having size
    /// `row_sizes[i] x col_sizes[j]`.
    pub fn inflate(&self, row_sizes: &[usize], col_sizes: &[usize]) -> BoolMatrix {
        assert_eq!(row_sizes.len(), self.rows);
        assert_eq!(col_sizes.len(), self.cols);
        let row_owner = owners(row_sizes);
        let col_owner = owners(col_sizes);
        BoolMatrix::from_fn(row_owner.len(), col_owner.len(), |r, c| {
            self.get(row_owner[r], col_owner[c])
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Option<BoolMatrix> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c || row.iter().any(|&v| v > 1)) {
            return None;
        }
        Some(BoolMatrix::from_fn(r, c, |i, j| rows[i][j] == 1))
    }
}

/// Map each scalar index to the block that owns it.
pub fn owners(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect()
}

/// Starting offset of each block.
pub fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|&s| {
            let o = acc;
            acc += s;
            o
        })
        .collect()
}

impl Serialize for BoolMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoolMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<u8>>::deserialize(d)?;
        BoolMatrix::from_rows(&rows)
            .ok_or_else(|| serde::de::Error::custom("expected a rectangular 0/1 matrix"))
    }
}
