//! Sobol low-discrepancy sequence with optional linear-matrix scrambling and
//! random digital shift.
//!
//! Direction numbers are the Joe–Kuo `new-joe-kuo-6.21201` set (first 64
//! dimensions). Points are produced in Gray-code order and the all-zero
//! first point is skipped, so the first point of the unscrambled sequence is
//! `0.5` in every coordinate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const BITS: usize = 32;

/// Largest dimension supported by the embedded direction numbers.
pub const MAX_DIM: usize = DIRECTIONS.len();

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SobolError {
    #[error("dimension {0} exceeds the generator limit of {MAX_DIM}")]
    DimensionTooLarge(usize),
    #[error("index overflow: at most 2^32 - 1 points")]
    Exhausted,
}

/// A Sobol generator over `[0, 1)^dim`.
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self, SobolError> {
        if dim > MAX_DIM {
            return Err(SobolError::DimensionTooLarge(dim));
        }
        Ok(Self { directions: (0..dim).map(direction_numbers).collect(), shift: vec![0; dim], index: 0 })
    }

    /// Linear matrix scramble plus digital shift, both drawn from `seed`.
    pub fn scrambled(dim: usize, seed: u64) -> Result<Self, SobolError> {
        let mut sobol = Self::new(dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (dir, shift) in sobol.directions.iter_mut().zip(sobol.shift.iter_mut()) {
            // Row i (most significant bit first) of a random unit lower
            // triangular binary matrix: bit i set, bits above it random.
            let rows: Vec<u32> = (0..BITS)
                .map(|i| {
                    let top = if i == 0 { 0 } else { rng.random::<u32>() & !(u32::MAX >> i) };
                    top | (1u32 << (BITS - 1 - i))
                })
                .collect();
            for v in dir.iter_mut() {
                let mut out = 0u32;
                for (i, row) in rows.iter().enumerate() {
                    if (row & *v).count_ones() % 2 == 1 {
                        out |= 1 << (BITS - 1 - i);
                    }
                }
                *v = out;
            }
            *shift = rng.random();
        }
        Ok(sobol)
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Writes the next point into `out` (length `dim`).
    pub fn next_into(&mut self, out: &mut [f64]) -> Result<(), SobolError> {
        self.index += 1;
        if self.index >= 1 << BITS {
            return Err(SobolError::Exhausted);
        }
        let gray = self.index ^ (self.index >> 1);
        for ((o, dir), shift) in out.iter_mut().zip(&self.directions).zip(&self.shift) {
            let mut bits = *shift;
            let mut g = gray;
            let mut k = 0;
            while g != 0 {
                if g & 1 == 1 {
                    bits ^= dir[k];
                }
                g >>= 1;
                k += 1;
            }
            *o = f64::from(bits) / (1u64 << BITS) as f64;
        }
        Ok(())
    }

    pub fn next_point(&mut self) -> Result<Vec<f64>, SobolError> {
        let mut p = vec![0.0; self.dim()];
        self.next_into(&mut p)?;
        Ok(p)
    }

    /// The next `n` points.
    pub fn take(&mut self, n: usize) -> Result<Vec<Vec<f64>>, SobolError> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (poly, m) = DIRECTIONS[dim];
    let degree = (32 - poly.leading_zeros() - 1) as usize;
    let a = (poly >> 1) & ((1u32 << (degree - 1)) - 1);
    for k in 0..degree.min(BITS) {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in degree..BITS {
        let mut value = v[k - degree] ^ (v[k - degree] >> degree);
        for i in 1..degree {
            if (a >> (degree - 1 - i)) & 1 == 1 {
                value ^= v[k - i];
            }
        }
        v[k] = value;
    }
    v
}

/// `(primitive polynomial with leading and trailing terms, initial m_k)`.
#[rustfmt::skip]
const DIRECTIONS: [(u32, &[u32]); 64] = [
    (1, &[1]),
    (3, &[1]),
    (7, &[1, 3]),
    (11, &[1, 3, 1]),
    (13, &[1, 1, 1]),
    (19, &[1, 1, 3, 3]),
    (25, &[1, 3, 5, 13]),
    (37, &[1, 1, 5, 5, 17]),
    (41, &[1, 1, 5, 5, 5]),
    (47, &[1, 1, 7, 11, 19]),
    (55, &[1, 1, 5, 1, 1]),
    (59, &[1, 1, 1, 3, 11]),
    (61, &[1, 3, 5, 5, 31]),
    (67, &[1, 3, 3, 9, 7, 49]),
    (91, &[1, 1, 1, 15, 21, 21]),
    (97, &[1, 3, 1, 13, 27, 49]),
    (103, &[1, 1, 1, 15, 7, 5]),
    (109, &[1, 3, 1, 15, 13, 25]),
    (115, &[1, 1, 5, 5, 19, 61]),
    (131, &[1, 3, 7, 11, 23, 15, 103]),
    (137, &[1, 3, 7, 13, 13, 15, 69]),
    (143, &[1, 1, 3, 13, 7, 35, 63]),
    (145, &[1, 3, 5, 9, 1, 25, 53]),
    (157, &[1, 3, 1, 13, 9, 35, 107]),
    (167, &[1, 3, 1, 5, 27, 61, 31]),
    (171, &[1, 1, 5, 11, 19, 41, 61]),
    (185, &[1, 3, 5, 3, 3, 13, 69]),
    (191, &[1, 1, 7, 13, 1, 19, 1]),
    (193, &[1, 3, 7, 5, 13, 19, 59]),
    (203, &[1, 1, 3, 9, 25, 29, 41]),
    (211, &[1, 3, 5, 13, 23, 1, 55]),
    (213, &[1, 3, 7, 3, 13, 59, 17]),
    (229, &[1, 3, 1, 3, 5, 53, 69]),
    (239, &[1, 1, 5, 5, 23, 33, 13]),
    (241, &[1, 1, 7, 7, 1, 61, 123]),
    (247, &[1, 1, 7, 9, 13, 61, 49]),
    (253, &[1, 3, 3, 5, 3, 55, 33]),
    (285, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (299, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (301, &[1, 3, 1, 11, 11, 11, 77, 249]),
    (333, &[1, 3, 1, 11, 27, 43, 71, 9]),
    (351, &[1, 1, 7, 15, 21, 11, 81, 45]),
    (355, &[1, 3, 7, 3, 25, 31, 65, 79]),
    (357, &[1, 3, 1, 1, 19, 11, 3, 205]),
    (361, &[1, 1, 5, 9, 19, 21, 29, 157]),
    (369, &[1, 3, 7, 11, 1, 33, 89, 185]),
    (391, &[1, 3, 3, 3, 15, 9, 79, 71]),
    (397, &[1, 3, 7, 11, 15, 39, 119, 27]),
    (425, &[1, 1, 3, 1, 11, 31, 97, 225]),
    (451, &[1, 1, 1, 3, 23, 43, 57, 177]),
    (463, &[1, 3, 7, 7, 17, 17, 37, 71]),
    (487, &[1, 3, 1, 5, 27, 63, 123, 213]),
    (501, &[1, 1, 3, 5, 11, 43, 53, 133]),
    (529, &[1, 3, 5, 5, 29, 17, 47, 173, 479]),
    (539, &[1, 3, 3, 11, 3, 1, 109, 9, 69]),
    (545, &[1, 1, 1, 5, 17, 39, 23, 5, 343]),
    (557, &[1, 3, 1, 5, 25, 15, 31, 103, 499]),
    (563, &[1, 1, 1, 11, 11, 17, 63, 105, 183]),
    (601, &[1, 1, 5, 11, 9, 29, 97, 231, 363]),
    (607, &[1, 1, 5, 15, 19, 45, 41, 7, 383]),
    (617, &[1, 3, 7, 7, 31, 19, 83, 137, 221]),
    (623, &[1, 1, 1, 3, 23, 15, 111, 223, 83]),
    (631, &[1, 1, 5, 13, 31, 15, 55, 25, 161]),
    (637, &[1, 1, 3, 13, 25, 47, 39, 87, 257]),
];
