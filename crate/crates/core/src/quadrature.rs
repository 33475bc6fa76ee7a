//! Globally adaptive 10/21-point Gauss-Kronrod quadrature for complex-valued
//! integrands on finite intervals.

// tabulated nodes and weights, kept digit for digit
#![allow(clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;

use crate::error::{Error, Result};

// Kronrod abscissae; odd indices are the 10-point Gauss nodes.
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_958_109_831,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 0.0,
            rel_tol: 1e-10,
            max_intervals: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: Complex64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: Complex64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk21<F: FnMut(f64) -> Complex64>(f: &mut F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[10];
    let mut gauss = Complex64::new(0.0, 0.0);
    for i in 0..10 {
        let dx = half * XGK[i];
        let pair = f(center - dx) + f(center + dx);
        kronrod += pair * WGK[i];
        if i % 2 == 1 {
            gauss += pair * WG[i / 2];
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).norm();
    Segment { a, b, value, error }
}

/// Integrate `f` over `[a, b]`, pre-splitting at the interior `breakpoints`.
///
/// Subdivides the interval with the largest error estimate until the summed
/// estimate satisfies `max(abs_tol, rel_tol |I|)`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, breakpoints: &[f64], opts: QuadOptions) -> Result<QuadResult>
where
    F: FnMut(f64) -> Complex64,
{
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::Domain(format!(
            "integration range [{a}, {b}] is not a finite interval"
        )));
    }
    let mut edges = vec![a];
    let mut inner: Vec<f64> = breakpoints.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    edges.extend(inner);
    edges.push(b);

    let mut heap: BinaryHeap<Segment> = edges.windows(2).map(|w| gk21(&mut f, w[0], w[1])).collect();
    loop {
        let value: Complex64 = heap.iter().map(|s| s.value).sum();
        let error: f64 = heap.iter().map(|s| s.error).sum();
        let target = opts.abs_tol.max(opts.rel_tol * value.norm());
        if error <= target {
            return Ok(QuadResult {
                value,
                error,
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if heap.len() + 2 > opts.max_intervals || !(mid > worst.a && mid < worst.b) {
            heap.push(worst);
            return Err(Error::QuadratureNonConvergence {
                estimate: value.re,
                error,
                intervals: heap.len(),
            });
        }
        heap.push(gk21(&mut f, worst.a, mid));
        heap.push(gk21(&mut f, mid, worst.b));
    }
}

/// Real-valued convenience wrapper around [`integrate`].
pub fn integrate_real<F>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: QuadOptions,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let r = integrate(|x| Complex64::new(f(x), 0.0), a, b, breakpoints, opts)?;
    Ok((r.value.re, r.error))
}
