//! Scalar transcendental functions: the platform library with `std`, `libm` otherwise.
//! `ln_1p` is only used on non-negative arguments.

#[cfg(feature = "std")]
mod imp {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    /// `ln(1 + x)` for `x ≥ 0` through `ln`, which is much cheaper than the platform
    /// `log1p`; the ratio `x / (u - 1)` restores the bits of `x` lost in `u = 1 + x`.
    #[inline]
    pub fn ln_1p(x: f64) -> f64 {
        let u = 1.0 + x;
        if u == 1.0 {
            x
        } else {
            u.ln() * (x / (u - 1.0))
        }
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    #[inline]
    pub fn ln_1p(x: f64) -> f64 {
        libm::log1p(x)
    }
}

pub use imp::{exp, ln_1p};
