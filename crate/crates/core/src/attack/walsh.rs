//! Fast XOR-correlation over pairs of plaintext bytes.
//!
//! For a pair of subkeys the second-order hypothesis depends on
//! `(p_i ^ k_i, p_j ^ k_j)`, i.e. on a 16-bit index XORed with the 16-bit
//! candidate. Sums of the form `sum_n z_n * f(x_n ^ k)` for all 65536
//! candidates are therefore an XOR-correlation of the per-index sums with
//! `f`, which the Walsh-Hadamard transform diagonalizes.

pub const PAIR_SPACE: usize = 1 << 16;

/// In-place unnormalized Walsh-Hadamard transform. `a.len()` must be a
/// power of two. Applying it twice multiplies by `a.len()`.
pub fn fwht(a: &mut [f64]) {
    let n = a.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for chunk in a.chunks_exact_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*x, *y);
                *x = u + v;
                *y = u - v;
            }
        }
        h *= 2;
    }
}

/// Precomputed transforms of a hypothesis table `f` and of `f^2`.
pub struct XorCorrelator {
    f_hat: Vec<f64>,
    f2_hat: Vec<f64>,
}

impl XorCorrelator {
    pub fn new(table: &[f64]) -> Self {
        assert_eq!(table.len(), PAIR_SPACE);
        let mut f_hat = table.to_vec();
        let mut f2_hat: Vec<f64> = table.iter().map(|v| v * v).collect();
        fwht(&mut f_hat);
        fwht(&mut f2_hat);
        XorCorrelator { f_hat, f2_hat }
    }

    /// `out[k] = sum_x input[x] * f(x ^ k)`.
    pub fn correlate(&self, input: &[f64]) -> Vec<f64> {
        self.apply(input, &self.f_hat)
    }

    /// `out[k] = sum_x input[x] * f(x ^ k)^2`.
    pub fn correlate_squared(&self, input: &[f64]) -> Vec<f64> {
        self.apply(input, &self.f2_hat)
    }

    /// Correlations of one input against both `f` and `f^2`, sharing the
    /// forward transform.
    pub fn correlate_both(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut fwd = input.to_vec();
        fwht(&mut fwd);
        let mut a: Vec<f64> = fwd.iter().zip(&self.f_hat).map(|(x, y)| x * y).collect();
        let mut b: Vec<f64> = fwd.iter().zip(&self.f2_hat).map(|(x, y)| x * y).collect();
        fwht(&mut a);
        fwht(&mut b);
        let s = 1.0 / PAIR_SPACE as f64;
        a.iter_mut().for_each(|v| *v *= s);
        b.iter_mut().for_each(|v| *v *= s);
        (a, b)
    }

    fn apply(&self, input: &[f64], hat: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), PAIR_SPACE);
        let mut buf = input.to_vec();
        fwht(&mut buf);
        for (b, h) in buf.iter_mut().zip(hat) {
            *b *= h;
        }
        fwht(&mut buf);
        let s = 1.0 / PAIR_SPACE as f64;
        buf.iter_mut().for_each(|v| *v *= s);
        buf
    }
}
