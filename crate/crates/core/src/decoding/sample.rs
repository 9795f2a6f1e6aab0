use rand::Rng;

use super::{ProbDistribution, TruncatedDistribution};
use crate::vocab::TokenId;

/// A finite categorical distribution that can be walked in a fixed order.
pub trait Categorical {
    fn for_each_entry(&self, f: &mut dyn FnMut(TokenId, f64) -> bool);
}

impl Categorical for ProbDistribution {
    fn for_each_entry(&self, f: &mut dyn FnMut(TokenId, f64) -> bool) {
        for (i, &p) in self.probs().iter().enumerate() {
            if !f(i as TokenId, p) {
                break;
            }
        }
    }
}

impl Categorical for TruncatedDistribution {
    fn for_each_entry(&self, f: &mut dyn FnMut(TokenId, f64) -> bool) {
        for (&t, &p) in self.support().iter().zip(self.probs()) {
            if !f(t, p) {
                break;
            }
        }
    }
}

/// Inverse-CDF draw using exactly one uniform from `rng`. Zero-probability
/// entries are never returned.
pub fn sample<D: Categorical + ?Sized, R: Rng + ?Sized>(dist: &D, rng: &mut R) -> TokenId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = None;
    let mut last_positive = None;
    dist.for_each_entry(&mut |t, p| {
        if p > 0.0 {
            acc += p;
            last_positive = Some(t);
            if u < acc {
                chosen = Some(t);
                return false;
            }
        }
        true
    });
    // rounding can leave the total a hair below u
    chosen
        .or(last_positive)
        .expect("distribution has positive mass")
}
