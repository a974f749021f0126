//! Float math shims and small statistical helpers.
//!
//! Under the default `std` feature these forward to the inherent `f64`
//! methods; under `libm` they route through the `libm` crate so the crate
//! builds without std.

#![allow(dead_code)]

macro_rules! shim {
    ($name:ident, $std_call:ident, $libm_call:ident, 1) => {
        #[inline(always)]
        pub(crate) fn $name(x: f64) -> f64 {
            #[cfg(feature = "std")]
            {
                x.$std_call()
            }
            #[cfg(not(feature = "std"))]
            {
                libm::$libm_call(x)
            }
        }
    };
}

shim!(exp, exp, exp, 1);
shim!(ln, ln, log, 1);
shim!(ln_1p, ln_1p, log1p, 1);
shim!(sqrt, sqrt, sqrt, 1);
shim!(abs, abs, fabs, 1);
shim!(floor, floor, floor, 1);
shim!(round, round, round, 1);

#[inline(always)]
pub(crate) fn powi(x: f64, n: i32) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powi(n)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::pow(x, n as f64)
    }
}

/// Inverse logit, `1 / (1 + exp(-x))`.
#[inline(always)]
pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline(always)]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

/// `log(expit(x))`, stable for large `|x|`.
#[inline(always)]
pub(crate) fn log_expit(x: f64) -> f64 {
    -softplus(-x)
}

pub(crate) fn logit(p: f64) -> f64 {
    ln(p / (1.0 - p))
}

/// `log(sum(exp(x)))` with max shift; returns -inf for an all-(-inf) input.
pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += exp(x - m);
    }
    m + ln(acc)
}

/// Standard Normal quantile (Wichura's algorithm AS 241, double precision).
pub(crate) fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile defined on (0,1)");
    let q = p - 0.5;
    if abs(q) <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(r, &A) / poly(r, &B);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = sqrt(-ln(r));
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(r, &C) / poly(r, &D)
    } else {
        let r = r - 5.0;
        poly(r, &E) / poly(r, &F)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn poly(x: f64, coeffs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

const A: [f64; 8] = [
    3.387_132_872_796_366_5e0,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_3e3,
    1.373_716_988_185_514_7e4,
    4.592_195_393_154_987e4,
    6.726_577_092_700_87e4,
    3.343_057_558_358_813e4,
    2.509_080_928_730_122_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e1,
    6.871_870_074_920_579e2,
    5.394_196_021_424_751e3,
    2.121_379_430_415_576e4,
    3.930_789_580_009_271e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_545_5e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_5e0,
    4.630_337_846_156_546e0,
    5.769_497_221_460_691e0,
    3.647_848_324_763_204_5e0,
    1.270_458_252_452_368_4e0,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759e0,
    1.676_384_830_183_803_8e0,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103e0,
    5.463_784_911_164_114e0,
    1.784_826_539_917_291_3e0,
    2.965_605_718_285_048_7e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_88e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_matches_closed_form() {
        assert!((expit(0.0) - 0.5).abs() < 1e-15);
        assert!((expit(1.0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((expit(-40.0)).abs() < 1e-15);
        assert!((expit(40.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_expit_stable() {
        assert!((log_expit(-745.0) - (-745.0)).abs() < 1e-9);
        assert!(log_expit(50.0).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_shifts() {
        let v = [-1000.0, -1000.0];
        assert!((logsumexp(&v) - (-1000.0 + 2.0f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn quantile_reference_values() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!(normal_quantile(0.5).abs() < 1e-15);
        assert!((normal_quantile(0.025) + 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_quantile(0.995) - 2.575_829_303_548_901).abs() < 1e-10);
        // Deep tail exercised by the r > 5 branch.
        assert!((normal_quantile(1e-9) + 5.997_807_015_008_182).abs() < 1e-8);
    }
}
