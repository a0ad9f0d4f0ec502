//! Per-path random streams and standard normal variates by inverse CDF.
//!
//! Path `i` under seed `s` always reads ChaCha8 stream `i` keyed by `s`, so a
//! path's noise does not depend on which worker simulates it or in what order.

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};

const BATCH: usize = 64;

/// Normal draws are produced in batches of 64 (better instruction-level
/// parallelism); a stream used only through [`PathRng::normal`] or only
/// through [`PathRng::uniform`] yields the same values either way.
pub struct PathRng {
    inner: ChaCha8Rng,
    normals: [f64; BATCH],
    next: usize,
}

impl PathRng {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(path);
        PathRng { inner, normals: [0.0; BATCH], next: BATCH }
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        to_open_unit(self.inner.next_u64())
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        if self.next == BATCH {
            self.refill();
        }
        let z = self.normals[self.next];
        self.next += 1;
        z
    }

    #[cold]
    fn refill(&mut self) {
        for z in self.normals.iter_mut() {
            *z = to_open_unit(self.inner.next_u64());
        }
        inverse_normal_cdf_in_place(&mut self.normals);
        self.next = 0;
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for z in out {
            *z = self.normal();
        }
    }
}

#[inline]
fn to_open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal quantile, Wichura's AS 241 (PPND16), relative accuracy about 1e-16.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        central(q)
    } else {
        tail(p, q)
    }
}

/// Batch quantiles: the branch-free central formula first, then the tails.
fn inverse_normal_cdf_in_place(ps: &mut [f64; BATCH]) {
    let mut out = [0.0; BATCH];
    for (o, p) in out.iter_mut().zip(ps.iter()) {
        *o = central(p - 0.5);
    }
    for (o, p) in out.iter_mut().zip(ps.iter()) {
        let q = p - 0.5;
        if q.abs() > 0.425 {
            *o = tail(*p, q);
        }
    }
    *ps = out;
}

#[inline(always)]
#[allow(clippy::excessive_precision)]
fn central(q: f64) -> f64 {
    let r = 0.180625 - q * q;
    q * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
        + 45921.953931549871457)
        * r
        + 13731.693765509461125)
        * r
        + 1971.5909503065514427)
        * r
        + 133.14166789178437745)
        * r
        + 3.387132872796366608)
        / (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
            + 21213.794301586595867)
            * r
            + 5394.1960214247511077)
            * r
            + 687.1870074920579083)
            * r
            + 42.313330701600911252)
            * r
            + 1.0)
}

#[allow(clippy::excessive_precision)]
fn tail(p: f64, q: f64) -> f64 {
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    if r <= 0.0 {
        return if q < 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn quantile_matches_reference_distribution() {
        let n = Normal::standard();
        // the reference cdf itself is only good to about 1e-10 relative in the tails
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let z = inverse_normal_cdf(p);
            assert!((n.cdf(z) - p).abs() <= 1e-9 * p.min(1.0 - p), "p={p} z={z}");
            assert!((z - n.inverse_cdf(p)).abs() <= 1e-8 * (1.0 + z.abs()), "p={p}");
        }
        // published quantiles
        assert!((inverse_normal_cdf(0.975) - 1.959963984540054).abs() < 1e-14);
        assert!((inverse_normal_cdf(0.0005) + 3.2905267314919255).abs() < 1e-13);
        for p in [1e-300, 1e-100, 1e-20, 1e-10, 1.0 - 1e-10, 1.0 - 1e-16] {
            let z = inverse_normal_cdf(p);
            let back = if p < 0.5 { n.cdf(z) } else { 1.0 - n.sf(z) };
            assert!(((back - p) / p.min(1.0 - p)).abs() < 1e-9 || (back - p).abs() < 1e-15, "p={p}");
        }
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
    }

    #[test]
    fn quantile_is_odd_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..10_000 {
            let p = i as f64 / 10_000.0;
            let z = inverse_normal_cdf(p);
            assert!(z > prev);
            prev = z;
            assert!((z + inverse_normal_cdf(1.0 - p)).abs() < 1e-12);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut r = PathRng::new(7, 3);
        let a: Vec<f64> = (0..8).map(|_| r.uniform()).collect();
        let mut r = PathRng::new(7, 3);
        let b: Vec<f64> = (0..8).map(|_| r.uniform()).collect();
        assert_eq!(a, b);
        let mut other = PathRng::new(7, 4);
        assert_ne!(a[0], other.uniform());
        let mut other = PathRng::new(8, 3);
        assert_ne!(a[0], other.uniform());
        assert!(a.iter().all(|u| *u > 0.0 && *u < 1.0));
    }

    #[test]
    fn normals_are_quantiles_of_the_uniform_stream() {
        let mut a = PathRng::new(5, 2);
        let mut b = PathRng::new(5, 2);
        for _ in 0..200 {
            assert_eq!(a.normal().to_bits(), inverse_normal_cdf(b.uniform()).to_bits());
        }
    }

    #[test]
    fn normal_moments() {
        let mut r = PathRng::new(1, 0);
        let n = 200_000;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = r.normal();
            s1 += z;
            s2 += z * z;
            s4 += z * z * z * z;
        }
        let n = n as f64;
        assert!((s1 / n).abs() < 0.01);
        assert!((s2 / n - 1.0).abs() < 0.015);
        assert!((s4 / n - 3.0).abs() < 0.08);
    }
}
