use num_traits::Float;

/// Separable 8×8 forward DCT-II with JPEG normalization:
/// `F(u,v) = ¼ C(u) C(v) Σ_x Σ_y f(x,y) cos((2x+1)uπ/16) cos((2y+1)vπ/16)`.
#[derive(Clone, Debug)]
pub struct Dct8 {
    /// `basis[u][x] = C(u)/2 · cos((2x+1)uπ/16)`
    basis: [[f64; 8]; 8],
}

impl Default for Dct8 {
    fn default() -> Self {
        Self::new()
    }
}

impl Dct8 {
    pub fn new() -> Self {
        let mut basis = [[0.0; 8]; 8];
        for (u, row) in basis.iter_mut().enumerate() {
            let c = if u == 0 { core::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (x, b) in row.iter_mut().enumerate() {
                *b = 0.5 * c * Float::cos((2 * x + 1) as f64 * u as f64 * core::f64::consts::PI / 16.0);
            }
        }
        Dct8 { basis }
    }

    /// `block` is row-major `[y * 8 + x]`, already level-shifted. The result
    /// is row-major `[v * 8 + u]`.
    pub fn forward(&self, block: &[f64; 64]) -> [f64; 64] {
        let mut rows = [0.0; 64];
        for y in 0..8 {
            for u in 0..8 {
                let mut s = 0.0;
                for x in 0..8 {
                    s += self.basis[u][x] * block[y * 8 + x];
                }
                rows[y * 8 + u] = s;
            }
        }
        let mut out = [0.0; 64];
        for v in 0..8 {
            for u in 0..8 {
                let mut s = 0.0;
                for y in 0..8 {
                    s += self.basis[v][y] * rows[y * 8 + u];
                }
                out[v * 8 + u] = s;
            }
        }
        out
    }
}

/// Convenience wrapper around [`Dct8::forward`].
pub fn fdct_8x8(block: &[f64; 64]) -> [f64; 64] {
    Dct8::new().forward(block)
}
