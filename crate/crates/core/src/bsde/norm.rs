//! The block-weighted norm used for the Picard contraction.
//!
//! `[0, T]` is split into `m̂` equal blocks `I_k` and block `k` gets weight
//! `210^k`. With `ρ(r) = C̄ r`, `m̂ = floor(T / r₀) + 1` where `r₀` is the
//! largest `r` with `42 K² max(ρ(r)², ρ(r)) <= 1/6`.
//!
//! The weights overflow `f64` once `m̂` passes about 130, so block sums are
//! kept separately and combined on demand.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::market::Grid;

use super::Triplet;

pub const P_NORM_BASE: f64 = 5.0 * 42.0;

/// `m̂` for Lipschitz constant `k` and bracket rate bound `c_bar`.
pub fn block_count(horizon: f64, k: f64, c_bar: f64) -> Result<u64> {
    if !(k.is_finite() && k >= 0.0 && c_bar.is_finite() && c_bar >= 0.0) {
        return Err(Error::InvalidDriver(format!("need finite K >= 0 and C_bar >= 0, got {k}, {c_bar}")));
    }
    if k == 0.0 || c_bar == 0.0 {
        return Ok(1);
    }
    // Solve max(x², x) <= b for x = C̄ r.
    let b = 1.0 / (252.0 * k * k);
    let x = if b >= 1.0 { b.sqrt() } else { b };
    let r0 = x / c_bar;
    let blocks = (horizon / r0).floor();
    if blocks > 1e15 {
        return Err(Error::Unsupported(format!("block count {blocks} too large for K = {k}")));
    }
    Ok(blocks as u64 + 1)
}

/// Block sums `e_k = E[sup_{I_k} |Y|² + Σ_{I_k} |Z|² Δ⟨M⟩ + Σ_{I_k} ΔO²]` and
/// the classical norm `E[sup |Y|²] + E[Σ |Z|² Δ⟨M⟩] + E[Σ ΔO²]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PNorm {
    pub m_hat: u64,
    /// Nonempty blocks as `(k, e_k)`, ascending in `k`.
    pub blocks: Vec<(u64, f64)>,
    pub classical: f64,
}

impl PNorm {
    /// `Σ_k 210^k e_k`; infinite when the weights overflow.
    pub fn value(&self) -> f64 {
        self.blocks.iter().map(|&(k, e)| P_NORM_BASE.powf(k as f64) * e).sum()
    }

    /// `Σ_k 210^(k - m̂ + 1) e_k`, i.e. `value() / 210^(m̂-1)`.
    pub fn scaled(&self) -> f64 {
        let top = (self.m_hat - 1) as f64;
        self.blocks.iter().map(|&(k, e)| P_NORM_BASE.powf(k as f64 - top) * e).sum()
    }

    /// `log10(value())`, finite whenever some block is nonzero.
    pub fn log10_value(&self) -> f64 {
        self.scaled().log10() + (self.m_hat - 1) as f64 * P_NORM_BASE.log10()
    }

    /// Upper constant of the equivalence with the classical norm, scaled like
    /// [`PNorm::scaled`]: `m̂`.
    pub fn scaled_upper_factor(&self) -> f64 {
        self.m_hat as f64
    }
}

/// Squared weighted norm of `delta` on `grid`.
pub fn p_norm(delta: &Triplet, grid: &Grid, d_bracket: &[f64], k: f64, c_bar: f64) -> Result<PNorm> {
    let n = grid.n_steps();
    if delta.y.len() != n + 1 || delta.z.len() != n || delta.d_o.len() != n || d_bracket.len() != n {
        return Err(Error::ShapeMismatch(format!("weighted norm expects {} times and {n} steps", n + 1)));
    }
    let m_hat = block_count(grid.horizon(), k, c_bar)?;
    let m = u128::from(m_hat);
    let nn = n as u128;

    // Blocks holding each grid time (closed intervals) and each step (by its
    // left endpoint).
    let point_blocks: Vec<Vec<u64>> = (0..=n as u128)
        .map(|i| {
            let q = i * m / nn;
            let exact = (i * m) % nn == 0;
            let mut v = Vec::with_capacity(2);
            if exact && q >= 1 {
                v.push((q - 1) as u64);
            }
            if q < m {
                v.push(q as u64);
            }
            v
        })
        .collect();
    let step_block: Vec<u64> = (0..n as u128).map(|i| (i * m / nn) as u64).collect();

    let mut slots: BTreeMap<u64, usize> = BTreeMap::new();
    for &b in point_blocks.iter().flatten().chain(&step_block) {
        let len = slots.len();
        slots.entry(b).or_insert(len);
    }
    let n_slots = slots.len();
    let point_slots: Vec<Vec<usize>> =
        point_blocks.iter().map(|v| v.iter().map(|b| slots[b]).collect()).collect();
    let step_slot: Vec<usize> = step_block.iter().map(|b| slots[b]).collect();

    let p_count = delta.y[0].len();
    let mut sums = vec![0.0; n_slots];
    let mut classical = 0.0;
    let mut sup = vec![0.0f64; n_slots];
    for p in 0..p_count {
        sup.iter_mut().for_each(|s| *s = 0.0);
        let mut sup_all = 0.0f64;
        for (i, row) in delta.y.iter().enumerate() {
            let v = row[p] * row[p];
            sup_all = sup_all.max(v);
            for &s in &point_slots[i] {
                sup[s] = sup[s].max(v);
            }
        }
        for (s, v) in sums.iter_mut().zip(&sup) {
            *s += v;
        }
        classical += sup_all;
        for i in 0..n {
            let z = delta.z[i][p];
            let o = delta.d_o[i][p];
            let v = z * z * d_bracket[i] + o * o;
            sums[step_slot[i]] += v;
            classical += v;
        }
    }
    let pc = p_count as f64;
    let blocks = slots.iter().map(|(&b, &s)| (b, sums[s] / pc)).collect();
    Ok(PNorm { m_hat, blocks, classical: classical / pc })
}
