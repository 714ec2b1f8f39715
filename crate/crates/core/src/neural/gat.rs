//! Single-head GATv2 layer with ReLU output.

use super::real::{affine, affine_backward, Real};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Weights of one layer: `w_l`, `w_r` are `d_out x d_in` row-major (the two
/// halves of `W` acting on `h_i` and `h_j`), `a` has length `d_out`.
#[derive(Debug, Clone, Copy)]
pub struct GatWeights<'a, T> {
    pub w_l: &'a [T],
    pub w_r: &'a [T],
    pub a: &'a [T],
    pub d_in: usize,
    pub d_out: usize,
}

/// Forward intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct GatCache<T> {
    pub input: Vec<Vec<T>>,
    pub left: Vec<Vec<T>>,
    pub right: Vec<Vec<T>>,
    /// `alpha[i][j]`, zero for non-neighbours.
    pub attention: Vec<Vec<T>>,
    /// Pre-ReLU aggregated messages.
    pub aggregated: Vec<Vec<T>>,
    pub adjacency: Option<Vec<Vec<bool>>>,
}

#[inline]
fn leaky<T: Real>(v: T, slope: T) -> T {
    if v > T::ZERO { v } else { v * slope }
}

/// `e_ij = a . LeakyReLU(W_l h_i + W_r h_j)`, softmax over neighbours `j` of `i`,
/// `h'_i = ReLU(sum_j alpha_ij W_r h_j)`. `adjacency = None` means the complete
/// graph with self-loops.
pub fn gatv2_forward<T: Real>(
    h: &[Vec<T>],
    adjacency: Option<&[Vec<bool>]>,
    w: GatWeights<'_, T>,
) -> Result<(Vec<Vec<T>>, GatCache<T>)> {
    let n = h.len();
    if n == 0 {
        return Err(Error::arg("graph has no nodes"));
    }
    if h.iter().any(|r| r.len() != w.d_in) {
        return Err(Error::arg("node feature width does not match layer input"));
    }
    if let Some(adj) = adjacency {
        if adj.len() != n || adj.iter().any(|r| r.len() != n) {
            return Err(Error::arg("adjacency shape does not match node count"));
        }
        if (0..n).any(|i| !adj[i][i]) {
            return Err(Error::arg("adjacency must include self-loops"));
        }
    }
    let slope = T::from_f64(LEAKY_SLOPE);
    let d = w.d_out;
    let mut left = vec![vec![T::ZERO; d]; n];
    let mut right = vec![vec![T::ZERO; d]; n];
    for i in 0..n {
        affine(w.w_l, None, &h[i], &mut left[i]);
        affine(w.w_r, None, &h[i], &mut right[i]);
    }
    let linked = |i: usize, j: usize| adjacency.is_none_or(|a| a[i][j]);
    let mut attention = vec![vec![T::ZERO; n]; n];
    let mut aggregated = vec![vec![T::ZERO; d]; n];
    let mut out = vec![vec![T::ZERO; d]; n];
    for i in 0..n {
        let mut e = vec![T::ZERO; n];
        let mut emax: Option<T> = None;
        for j in 0..n {
            if !linked(i, j) {
                continue;
            }
            let mut s = T::ZERO;
            for c in 0..d {
                s += w.a[c] * leaky(left[i][c] + right[j][c], slope);
            }
            e[j] = s;
            emax = Some(match emax {
                Some(m) if m >= s => m,
                _ => s,
            });
        }
        let emax = emax.expect("self-loop present");
        let mut z = T::ZERO;
        for j in 0..n {
            if linked(i, j) {
                let v = (e[j] - emax).exp();
                attention[i][j] = v;
                z += v;
            }
        }
        for j in 0..n {
            if linked(i, j) {
                attention[i][j] = attention[i][j] / z;
                let al = attention[i][j];
                for c in 0..d {
                    aggregated[i][c] += al * right[j][c];
                }
            }
        }
        for c in 0..d {
            out[i][c] = aggregated[i][c].relu();
        }
    }
    Ok((
        out,
        GatCache {
            input: h.to_vec(),
            left,
            right,
            attention,
            aggregated,
            adjacency: adjacency.map(|a| a.to_vec()),
        },
    ))
}

/// Accumulates parameter gradients and returns `d loss / d h`.
pub fn gatv2_backward<T: Real>(
    w: GatWeights<'_, T>,
    cache: &GatCache<T>,
    d_out: &[Vec<T>],
    g_wl: &mut [T],
    g_wr: &mut [T],
    g_a: &mut [T],
) -> Vec<Vec<T>> {
    let n = cache.input.len();
    let d = w.d_out;
    let slope = T::from_f64(LEAKY_SLOPE);
    let linked = |i: usize, j: usize| cache.adjacency.as_ref().is_none_or(|a| a[i][j]);
    let mut d_left = vec![vec![T::ZERO; d]; n];
    let mut d_right = vec![vec![T::ZERO; d]; n];
    for i in 0..n {
        let d_agg: Vec<T> = (0..d)
            .map(|c| if cache.aggregated[i][c] > T::ZERO { d_out[i][c] } else { T::ZERO })
            .collect();
        // through the weighted sum
        let mut d_alpha = vec![T::ZERO; n];
        for j in 0..n {
            if !linked(i, j) {
                continue;
            }
            let al = cache.attention[i][j];
            let mut s = T::ZERO;
            for c in 0..d {
                s += d_agg[c] * cache.right[j][c];
                d_right[j][c] += al * d_agg[c];
            }
            d_alpha[j] = s;
        }
        // through the softmax
        let mut mean = T::ZERO;
        for j in 0..n {
            mean += cache.attention[i][j] * d_alpha[j];
        }
        for j in 0..n {
            if !linked(i, j) {
                continue;
            }
            let de = cache.attention[i][j] * (d_alpha[j] - mean);
            if de == T::ZERO {
                continue;
            }
            for c in 0..d {
                let s = cache.left[i][c] + cache.right[j][c];
                let (u, du) = if s > T::ZERO { (s, T::ONE) } else { (s * slope, slope) };
                g_a[c] += de * u;
                let ds = de * w.a[c] * du;
                d_left[i][c] += ds;
                d_right[j][c] += ds;
            }
        }
    }
    let mut d_h = vec![vec![T::ZERO; w.d_in]; n];
    for i in 0..n {
        affine_backward(w.w_l, &cache.input[i], &d_left[i], g_wl, Some(&mut d_h[i]));
        affine_backward(w.w_r, &cache.input[i], &d_right[i], g_wr, Some(&mut d_h[i]));
    }
    d_h
}
