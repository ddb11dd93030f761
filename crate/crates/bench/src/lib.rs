//! Fixtures shared by the benchmarks.

use pnnid_core::network::{expand, Architecture, Params};
use pnnid_core::polyspace::PolyVec;
use pnnid_core::rng::seeded;

/// A seeded Gaussian network together with its polynomial.
pub struct Fixture {
    pub arch: Architecture,
    pub params: Params,
    pub poly: PolyVec,
}

pub fn fixture(widths: &[usize], degrees: &[u32], bias: bool, seed: u64) -> Fixture {
    let arch = Architecture::new(widths.to_vec(), degrees.to_vec(), bias).expect("valid benchmark architecture");
    let params = Params::random(&arch, &mut seeded(seed));
    let poly = expand(&arch, &params).expect("benchmark network expands");
    Fixture { arch, params, poly }
}
