//! Square binary matrices packed into 64-bit words, one word run per row.

use std::fmt;

/// An `n × n` binary matrix stored row-major with each row packed into
/// `ceil(n / 64)` words. Bit `j` of a row lives in word `j / 64`, bit `j % 64`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    n: usize,
    words: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Self {
            n,
            words,
            data: vec![0; n * words],
        }
    }

    pub fn ones(n: usize) -> Self {
        Self::from_fn(n, |_, _| true)
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if f(i, j) {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    /// Builds a matrix from nested rows of 0/1 values. Panics if the rows are
    /// not square or contain anything other than 0 and 1.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            assert_eq!(row.len(), n, "row {i} has length {} in a {n}x{n} matrix", row.len());
            for (j, &b) in row.iter().enumerate() {
                assert!(b <= 1, "non-binary entry {b} at ({i},{j})");
                m.set(i, j, b == 1);
            }
        }
        m
    }

    /// Builds a matrix from `n²` bits in row-major order.
    pub fn from_row_major(n: usize, bits: &[u8]) -> Self {
        assert_eq!(bits.len(), n * n);
        Self::from_fn(n, |i, j| bits[i * n + j] != 0)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.n && j < self.n);
        (self.data[i * self.words + j / 64] >> (j % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        debug_assert!(i < self.n && j < self.n);
        let w = &mut self.data[i * self.words + j / 64];
        let mask = 1u64 << (j % 64);
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    /// Number of words backing each row.
    #[inline]
    pub fn words_per_row(&self) -> usize {
        self.words
    }

    /// Number of `1` entries.
    pub fn weight(&self) -> u64 {
        self.data.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&w| w == 0)
    }

    /// Row-major bit sequence.
    pub fn to_row_major(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(u8::from(self.get(i, j)));
            }
        }
        out
    }

    /// Elementwise `self & !other`.
    pub fn and_not(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.n, other.n);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a & !b)
            .collect();
        BitMatrix {
            n: self.n,
            words: self.words,
            data,
        }
    }

    /// Elementwise XOR.
    pub fn xor(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.n, other.n);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a ^ b)
            .collect();
        BitMatrix {
            n: self.n,
            words: self.words,
            data,
        }
    }

    pub fn xor_assign(&mut self, other: &BitMatrix) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a ^= b;
        }
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming(&self, other: &BitMatrix) -> u64 {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| u64::from((a ^ b).count_ones()))
            .sum()
    }

    /// Copies out the `m × m` tile whose top-left corner is `(row0, col0)`.
    pub fn tile(&self, row0: usize, col0: usize, m: usize) -> BitMatrix {
        BitMatrix::from_fn(m, |i, j| self.get(row0 + i, col0 + j))
    }

    /// Writes `tile` into `self` with its top-left corner at `(row0, col0)`.
    pub fn put_tile(&mut self, row0: usize, col0: usize, tile: &BitMatrix) {
        for i in 0..tile.n {
            for j in 0..tile.n {
                self.set(row0 + i, col0 + j, tile.get(i, j));
            }
        }
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix({}x{})", self.n, self.n)?;
        for i in 0..self.n {
            for j in 0..self.n {
                f.write_str(if self.get(i, j) { "1" } else { "0" })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Popcount of the elementwise AND of two packed rows.
#[inline]
pub(crate) fn and_count(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

/// Popcount of `a & !b` over two packed rows.
#[inline]
pub(crate) fn and_not_count(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & !y).count_ones()).sum()
}
