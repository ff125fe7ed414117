//! Batched influence evaluation. Primitives are packed eight to a block in
//! structure-of-arrays form; an AVX2 path is chosen at runtime when the CPU
//! has it. Both paths perform the same IEEE operations in the same order
//! (no fused multiply-add), so their results are bit-identical.

use crate::geometry::{Point3, Vec3};

const LN2_HI: f64 = 0.693_147_180_369_123_8;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
const INV_LN2: f64 = std::f64::consts::LOG2_E;
// 1.5 · 2^52: adding it rounds to an integer held in the low mantissa bits.
const SHIFTER: f64 = 6_755_399_441_055_744.0;
const EXP_FLOOR: f64 = -708.0;
const M_CUTOFF: f64 = 1416.0;
/// Taylor coefficients 1/13! .. 1/2!, highest degree first.
const C: [f64; 12] = [
    1.605_904_383_682_161_3e-10,
    2.087_675_698_786_81e-9,
    2.505_210_838_544_172e-8,
    2.755_731_922_398_589e-7,
    2.755_731_922_398_589_3e-6,
    2.480_158_730_158_73e-5,
    1.984_126_984_126_984e-4,
    1.388_888_888_888_889e-3,
    8.333_333_333_333_333e-3,
    4.166_666_666_666_666_4e-2,
    1.666_666_666_666_666_6e-1,
    0.5,
];

/// `exp(−m/2)` for `m ≥ 0`, flushed to zero once the result would leave the
/// normal range (`m > 1416`). Accurate to a couple of ulp. Every influence
/// evaluation goes through this function or its vector twin.
#[inline(always)]
pub(crate) fn exp_neg_half(m: f64) -> f64 {
    let x = (-0.5 * m).max(EXP_FLOOR);
    let t = x * INV_LN2 + SHIFTER;
    let n = t - SHIFTER;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = C[0];
    for c in &C[1..] {
        p = p * r + c;
    }
    p = p * r + 1.0;
    p = p * r + 1.0;
    let k = (t.to_bits() as i64).wrapping_sub(SHIFTER.to_bits() as i64);
    let scale = f64::from_bits(((k + 1023) as u64) << 52);
    if m > M_CUTOFF {
        0.0
    } else {
        p * scale
    }
}

pub(crate) const LANES: usize = 8;

/// Eight primitives. Padding lanes carry a zero offset and so contribute
/// exactly nothing.
#[derive(Debug, Clone, Copy, Default)]
#[repr(C, align(32))]
pub(crate) struct Block {
    pub mu: [[f64; LANES]; 3],
    /// Scaled local axes `S⁻¹Rᵀ`, row-major.
    pub axes: [[f64; LANES]; 9],
    pub offset: [f64; LANES],
    /// Largest scale of each primitive, for culling.
    pub max_scale: [f64; LANES],
}

impl Block {
    /// Per-lane `oᵢαᵢ`. With `cull = Some(k)` a lane whose center lies more
    /// than `k · max scale` from the line contributes zero.
    #[inline(always)]
    fn contributions(&self, tx: Point3, u: Vec3, d: f64, cull: Option<f64>, out: &mut [f64; LANES]) {
        for i in 0..LANES {
            let wx = self.mu[0][i] - tx.x;
            let wy = self.mu[1][i] - tx.y;
            let wz = self.mu[2][i] - tx.z;
            let l = wx * u.x + wy * u.y + wz * u.z;
            let dx = u.x * l - wx;
            let dy = u.y * l - wy;
            let dz = u.z * l - wz;
            let r = &self.axes;
            let a = r[0][i] * dx + r[1][i] * dy + r[2][i] * dz;
            let b = r[3][i] * dx + r[4][i] * dy + r[5][i] * dz;
            let c = r[6][i] * dx + r[7][i] * dy + r[8][i] * dz;
            let m = a * a + b * b + c * c;
            let v = self.offset[i] * exp_neg_half(m);
            let culled = cull.is_some_and(|k| {
                let r = k * self.max_scale[i];
                dx * dx + dy * dy + dz * dz > r * r
            });
            out[i] = if 0.0 < l && l < d && !culled { v } else { 0.0 };
        }
    }
}

/// Interleaves the low 21 bits of `v` with two zero bits between each.
fn spread_bits(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | x << 32) & 0x1f_0000_0000_ffff;
    x = (x | x << 16) & 0x1f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

/// Z-order key of `p` within the box `[lo, lo + extent]`.
fn morton_key(p: Point3, lo: [f64; 3], extent: [f64; 3]) -> u64 {
    let a = p.to_array();
    let q = |k: usize| {
        let t = if extent[k] > 0.0 { (a[k] - lo[k]) / extent[k] } else { 0.0 };
        (t.clamp(0.0, 1.0) * 2_097_151.0) as u64
    };
    spread_bits(q(0)) | spread_bits(q(1)) << 1 | spread_bits(q(2)) << 2
}

/// Bounding sphere of a block's real lanes.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Bounds {
    center: Point3,
    radius: f64,
    max_scale: f64,
}

impl Bounds {
    fn of(block: &Block, lanes: usize) -> Self {
        let mu = |i: usize| Point3::new(block.mu[0][i], block.mu[1][i], block.mu[2][i]);
        let (mut lo, mut hi) = (mu(0), mu(0));
        for i in 1..lanes {
            let p = mu(i);
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let center = (lo + hi).scale(0.5);
        let radius = (0..lanes).map(|i| mu(i).distance(center)).fold(0.0, f64::max);
        let max_scale = block.max_scale[..lanes].iter().copied().fold(0.0, f64::max);
        Self {
            center,
            radius,
            max_scale,
        }
    }

    /// True when no lane can contribute: every center projects outside the
    /// open segment, or (when culling) lies beyond its cull radius. The
    /// margin keeps the test conservative under rounding.
    #[inline(always)]
    fn excludes(&self, tx: Point3, u: Vec3, d: f64, cull: Option<f64>) -> bool {
        let w = self.center - tx;
        let l = w.dot(u);
        let r = self.radius * (1.0 + 1e-9) + 1e-9 * (l.abs() + d + 1.0);
        if l + r <= 0.0 || l - r >= d {
            return true;
        }
        cull.is_some_and(|k| (u.scale(l) - w).norm() - r > k * self.max_scale * (1.0 + 1e-9))
    }
}

/// One primitive as the kernel sees it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PackItem {
    pub mu: Point3,
    pub axes: [[f64; 3]; 3],
    pub offset: f64,
    pub max_scale: f64,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Packed {
    blocks: Vec<Block>,
    bounds: Vec<Bounds>,
}

/// Packs primitives into blocks in Z-order of `μ`, so each block holds
/// spatially close primitives and whole blocks can be skipped when their
/// bounding sphere misses a link. Equal keys keep input order.
pub(crate) fn pack_blocks(items: &[PackItem]) -> Packed {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for it in items {
        for (k, v) in it.mu.to_array().into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let extent = std::array::from_fn(|k| hi[k] - lo[k]);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| morton_key(items[i].mu, lo, extent));

    let mut blocks: Vec<Block> = Vec::with_capacity(items.len().div_ceil(LANES));
    for (idx, &src) in order.iter().enumerate() {
        let it = items[src];
        let i = idx % LANES;
        if i == 0 {
            blocks.push(Block::default());
        }
        let b = blocks.last_mut().expect("block pushed above");
        let mu = it.mu.to_array();
        for (k, &m) in mu.iter().enumerate() {
            b.mu[k][i] = m;
            for j in 0..3 {
                b.axes[3 * k + j][i] = it.axes[k][j];
            }
        }
        b.offset[i] = it.offset;
        b.max_scale[i] = it.max_scale;
    }
    let bounds = blocks
        .iter()
        .enumerate()
        .map(|(bi, b)| Bounds::of(b, (items.len() - bi * LANES).min(LANES)))
        .collect();
    Packed { blocks, bounds }
}

/// `Σ oᵢαᵢ` over the blocks. Lane `i` accumulates packed slots `i`,
/// `i + 8`, ...; the lane totals are then added in lane order. Skipped
/// blocks would have added exact zeros.
fn delta_scalar(p: &Packed, tx: Point3, u: Vec3, d: f64, cull: Option<f64>) -> f64 {
    let mut acc = [0.0; LANES];
    let mut buf = [0.0; LANES];
    for (b, bounds) in p.blocks.iter().zip(&p.bounds) {
        if bounds.excludes(tx, u, d, cull) {
            continue;
        }
        b.contributions(tx, u, d, cull, &mut buf);
        for (a, v) in acc.iter_mut().zip(buf) {
            *a += v;
        }
    }
    lane_total(&acc)
}

#[inline(always)]
fn lane_total(acc: &[f64; LANES]) -> f64 {
    let mut s = 0.0;
    for v in acc {
        s += v;
    }
    s
}

impl Packed {
    /// `ΔPL` for the link `tx + t·u`, `0 < t < d`, optionally culled at
    /// `k` scales.
    pub(crate) fn delta(&self, tx: Point3, u: Vec3, d: f64, cull: Option<f64>) -> f64 {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe {
                match cull {
                    None => avx2::delta::<false>(self, tx, u, d, 0.0),
                    Some(k) => avx2::delta::<true>(self, tx, u, d, k),
                }
            };
        }
        delta_scalar(self, tx, u, d, cull)
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    use super::*;

    #[inline(always)]
    unsafe fn exp_neg_half(m: __m256d) -> __m256d {
        let x = _mm256_max_pd(_mm256_mul_pd(_mm256_set1_pd(-0.5), m), _mm256_set1_pd(EXP_FLOOR));
        let shifter = _mm256_set1_pd(SHIFTER);
        let t = _mm256_add_pd(_mm256_mul_pd(x, _mm256_set1_pd(INV_LN2)), shifter);
        let n = _mm256_sub_pd(t, shifter);
        let r = _mm256_sub_pd(
            _mm256_sub_pd(x, _mm256_mul_pd(n, _mm256_set1_pd(LN2_HI))),
            _mm256_mul_pd(n, _mm256_set1_pd(LN2_LO)),
        );
        let mut p = _mm256_set1_pd(C[0]);
        for &c in &C[1..] {
            p = _mm256_add_pd(_mm256_mul_pd(p, r), _mm256_set1_pd(c));
        }
        let one = _mm256_set1_pd(1.0);
        p = _mm256_add_pd(_mm256_mul_pd(p, r), one);
        p = _mm256_add_pd(_mm256_mul_pd(p, r), one);
        let k = _mm256_sub_epi64(_mm256_castpd_si256(t), _mm256_set1_epi64x(SHIFTER.to_bits() as i64));
        let scale = _mm256_castsi256_pd(_mm256_slli_epi64::<52>(_mm256_add_epi64(k, _mm256_set1_epi64x(1023))));
        let too_far = _mm256_cmp_pd::<_CMP_GT_OQ>(m, _mm256_set1_pd(M_CUTOFF));
        _mm256_andnot_pd(too_far, _mm256_mul_pd(p, scale))
    }

    /// Four lanes starting at `h`.
    #[inline(always)]
    unsafe fn half<const CULL: bool>(
        b: &Block,
        h: usize,
        t: [__m256d; 3],
        u: [__m256d; 3],
        d: __m256d,
        k: __m256d,
    ) -> __m256d {
        let ld = |row: &[f64; LANES]| _mm256_load_pd(row.as_ptr().add(h));
        let wx = _mm256_sub_pd(ld(&b.mu[0]), t[0]);
        let wy = _mm256_sub_pd(ld(&b.mu[1]), t[1]);
        let wz = _mm256_sub_pd(ld(&b.mu[2]), t[2]);
        let l = _mm256_add_pd(
            _mm256_add_pd(_mm256_mul_pd(wx, u[0]), _mm256_mul_pd(wy, u[1])),
            _mm256_mul_pd(wz, u[2]),
        );
        let dx = _mm256_sub_pd(_mm256_mul_pd(u[0], l), wx);
        let dy = _mm256_sub_pd(_mm256_mul_pd(u[1], l), wy);
        let dz = _mm256_sub_pd(_mm256_mul_pd(u[2], l), wz);
        let mut gate = _mm256_and_pd(
            _mm256_cmp_pd::<_CMP_LT_OQ>(_mm256_setzero_pd(), l),
            _mm256_cmp_pd::<_CMP_LT_OQ>(l, d),
        );
        if CULL {
            let r = _mm256_mul_pd(k, ld(&b.max_scale));
            let n2 = _mm256_add_pd(
                _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy)),
                _mm256_mul_pd(dz, dz),
            );
            gate = _mm256_and_pd(gate, _mm256_cmp_pd::<_CMP_NGT_UQ>(n2, _mm256_mul_pd(r, r)));
        }
        if _mm256_movemask_pd(gate) == 0 {
            return _mm256_setzero_pd();
        }
        let row = |k: usize| {
            _mm256_add_pd(
                _mm256_add_pd(_mm256_mul_pd(ld(&b.axes[3 * k]), dx), _mm256_mul_pd(ld(&b.axes[3 * k + 1]), dy)),
                _mm256_mul_pd(ld(&b.axes[3 * k + 2]), dz),
            )
        };
        let (a, bb, c) = (row(0), row(1), row(2));
        let m = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(a, a), _mm256_mul_pd(bb, bb)), _mm256_mul_pd(c, c));
        let v = _mm256_mul_pd(ld(&b.offset), exp_neg_half(m));
        _mm256_and_pd(gate, v)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn delta<const CULL: bool>(p: &Packed, tx: Point3, u: Vec3, d: f64, k: f64) -> f64 {
        let t = [_mm256_set1_pd(tx.x), _mm256_set1_pd(tx.y), _mm256_set1_pd(tx.z)];
        let uv = [_mm256_set1_pd(u.x), _mm256_set1_pd(u.y), _mm256_set1_pd(u.z)];
        let dv = _mm256_set1_pd(d);
        let kv = _mm256_set1_pd(k);
        let cull = CULL.then_some(k);
        let (mut lo, mut hi) = (_mm256_setzero_pd(), _mm256_setzero_pd());
        for (b, bounds) in p.blocks.iter().zip(&p.bounds) {
            if bounds.excludes(tx, u, d, cull) {
                continue;
            }
            lo = _mm256_add_pd(lo, half::<CULL>(b, 0, t, uv, dv, kv));
            hi = _mm256_add_pd(hi, half::<CULL>(b, 4, t, uv, dv, kv));
        }
        let mut acc = [0.0; LANES];
        _mm256_storeu_pd(acc.as_mut_ptr(), lo);
        _mm256_storeu_pd(acc.as_mut_ptr().add(4), hi);
        lane_total(&acc)
    }
}
