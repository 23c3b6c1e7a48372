//! Small numerical helpers shared across the crate.

use std::f64::consts::PI;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Natural log of the standard normal density.
pub fn normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// Inverse of the standard normal CDF (Wichura's AS 241, PPND16).
///
/// Accurate to about 1e-16 relative over the open unit interval. Returns
/// `-inf`/`+inf` at 0 and 1 and NaN outside `[0, 1]`.
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(&CENTRAL_NUM, r) / horner(&CENTRAL_DEN, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        horner(&INNER_NUM, r - 1.6) / horner(&INNER_DEN, r - 1.6)
    } else {
        horner(&OUTER_NUM, r - 5.0) / horner(&OUTER_DEN, r - 5.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Evaluates a polynomial with coefficients in ascending order.
fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_6,
    133.141_667_891_784_38,
    1971.590_950_306_551_4,
    13731.693_765_509_461,
    45921.953_931_549_87,
    67265.770_927_008_7,
    33430.575_583_588_128,
    2509.080_928_730_122_7,
];
const CENTRAL_DEN: [f64; 8] = [
    1.0,
    42.313_330_701_600_91,
    687.187_007_492_057_9,
    5394.196_021_424_751,
    21213.794_301_586_596,
    39307.895_800_092_71,
    28729.085_735_721_943,
    5226.495_278_852_546,
];
const INNER_NUM: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_545,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    0.241_780_725_177_450_6,
    0.022_723_844_989_269_184,
    7.745_450_142_783_414e-4,
];
const INNER_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    0.689_767_334_985_1,
    0.148_103_976_427_480_08,
    0.015_198_666_563_616_457,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const OUTER_NUM: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    0.296_560_571_828_504_9,
    0.026_532_189_526_576_124,
    0.001_242_660_947_388_078_4,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const OUTER_DEN: [f64; 8] = [
    1.0,
    0.599_832_206_555_887_9,
    0.136_929_880_922_735_8,
    0.014_875_361_290_850_615,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];

/// Arithmetic mean. NaN for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with divisor `len - 1`, computed with Welford's update.
///
/// Returns `None` for fewer than two values.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mut running_mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let delta = v - running_mean;
        running_mean += delta / (i + 1) as f64;
        m2 += delta * (v - running_mean);
    }
    Some((m2 / (values.len() - 1) as f64).max(0.0))
}

/// Standard error of the mean, `sd / sqrt(len)`; zero for fewer than two values.
pub fn standard_error(values: &[f64]) -> f64 {
    sample_variance(values)
        .map(|v| (v / values.len() as f64).sqrt())
        .unwrap_or(0.0)
}

/// Linearly interpolated quantile of already-sorted data (Hyndman–Fan type 7).
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Empirical inverse CDF: the `ceil(p * len)`-th order statistic (1-based),
/// with the rank clamped to `[1, len]`.
///
/// `sorted` must be ascending and non-empty.
pub fn ecdf_quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let len = sorted.len();
    // Absorb representation error so that e.g. 0.25 * 4 lands on rank 1.
    let scaled = p * len as f64;
    let rank = (scaled - 1e-9 * scaled.abs().max(1.0)).ceil();
    let rank = (rank.max(1.0) as usize).min(len);
    sorted[rank - 1]
}
