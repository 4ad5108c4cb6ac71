//! Mask sampling, input corruption and re-masking of latent codes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub mask_ratio: f64,
    pub replace_rate: f64,
    pub seed: u64,
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mask_ratio", self.mask_ratio), ("replace_rate", self.replace_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("{name}={v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One draw of masked nodes.
///
/// `substituted ⊆ masked`; each substituted node takes the raw features of
/// its donor (any node, possibly itself masked) instead of the `[MASK]`
/// token. Every masked node, substituted or not, is a reconstruction target
/// and is re-masked before decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub n: usize,
    pub masked: Vec<usize>,
    pub substituted: Vec<usize>,
    pub donors: BTreeMap<usize, usize>,
}

impl MaskPlan {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            masked: Vec::new(),
            substituted: Vec::new(),
            donors: BTreeMap::new(),
        }
    }

    /// Masks exactly `masked` with no substitution.
    pub fn from_masked(n: usize, mut masked: Vec<usize>) -> Result<Self> {
        masked.sort_unstable();
        masked.dedup();
        let plan = Self {
            n,
            masked,
            ..Self::empty(n)
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    /// Masked nodes that receive the `[MASK]` token.
    pub fn token_rows(&self) -> Vec<usize> {
        self.masked
            .iter()
            .copied()
            .filter(|i| !self.donors.contains_key(i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&i) = self.masked.iter().find(|&&i| i >= self.n) {
            return Err(Error::validation(format!("masked index {i} out of range for {} nodes", self.n)));
        }
        if self.masked.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("masked indices must be sorted and distinct"));
        }
        for (&i, &d) in &self.donors {
            if self.masked.binary_search(&i).is_err() {
                return Err(Error::validation(format!("substituted node {i} is not masked")));
            }
            if d >= self.n {
                return Err(Error::validation(format!("donor {d} out of range for {} nodes", self.n)));
            }
        }
        if self.substituted.len() != self.donors.len() || self.substituted.iter().any(|i| !self.donors.contains_key(i)) {
            return Err(Error::validation("substituted set and donor map disagree"));
        }
        Ok(())
    }
}

/// SplitMix64 mixing of a base seed with a stream index.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Selects `k` distinct items of `pool` uniformly (partial Fisher–Yates).
fn choose<R: Rng>(pool: &mut [usize], k: usize, rng: &mut R) -> Vec<usize> {
    let n = pool.len();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool[..k].to_vec()
}

/// Draws `floor(mask_ratio · n)` nodes uniformly without replacement, then
/// `floor(replace_rate · |masked|)` of those for random substitution with
/// uniformly drawn donors.
pub fn sample_mask(n: usize, cfg: &MaskConfig) -> Result<MaskPlan> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::validation("cannot mask an empty graph"));
    }
    let num_mask = (cfg.mask_ratio * n as f64).floor() as usize;
    if num_mask == 0 {
        log::warn!("mask ratio {} masks no node out of {n}; nothing to reconstruct", cfg.mask_ratio);
        return Ok(MaskPlan::empty(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut masked = choose(&mut pool, num_mask, &mut rng);
    masked.sort_unstable();

    let num_sub = (cfg.replace_rate * num_mask as f64).floor() as usize;
    let mut substituted = choose(&mut masked.clone(), num_sub, &mut rng);
    substituted.sort_unstable();
    let donors = substituted.iter().map(|&i| (i, rng.random_range(0..n))).collect();
    Ok(MaskPlan {
        n,
        masked,
        substituted,
        donors,
    })
}

/// Builds the corrupted input `X̃`: token rows become `x_mask` (a `1×d`
/// tape value, so it receives gradients), substituted rows copy their
/// donor's raw features, all other rows are `x` unchanged.
pub fn apply_input_mask(tape: &mut Tape, x: &Tensor, plan: &MaskPlan, x_mask: Var) -> Result<Var> {
    plan.validate()?;
    if plan.n != x.rows() {
        return Err(Error::validation(format!("plan over {} nodes, features have {} rows", plan.n, x.rows())));
    }
    let mut base = x.clone();
    for (&i, &donor) in &plan.donors {
        base.row_mut(i).copy_from_slice(x.row(donor));
    }
    let base = tape.leaf(base)?;
    let rows = plan.token_rows();
    if rows.is_empty() {
        return Ok(base);
    }
    if tape.shape(x_mask) != (1, x.cols()) {
        return Err(Error::shape("apply_input_mask", format!("token {:?} for width {}", tape.shape(x_mask), x.cols())));
    }
    let tokens = tape.gather_rows(x_mask, &vec![0; rows.len()])?;
    tape.scatter_rows(base, &rows, tokens)
}

/// Replaces the code of every masked node (substituted ones included) with
/// the `[DMASK]` token `h_dmask` (`1×d_h`).
pub fn remask(tape: &mut Tape, h: Var, plan: &MaskPlan, h_dmask: Var) -> Result<Var> {
    plan.validate()?;
    let (n, k) = tape.shape(h);
    if plan.n != n {
        return Err(Error::validation(format!("plan over {} nodes, codes have {n} rows", plan.n)));
    }
    if plan.is_empty() {
        return Ok(h);
    }
    if tape.shape(h_dmask) != (1, k) {
        return Err(Error::shape("remask", format!("token {:?} for width {k}", tape.shape(h_dmask))));
    }
    let tokens = tape.gather_rows(h_dmask, &vec![0; plan.len()])?;
    tape.scatter_rows(h, &plan.masked, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(ratio: f64, replace: f64, seed: u64) -> MaskConfig {
        MaskConfig {
            mask_ratio: ratio,
            replace_rate: replace,
            seed,
        }
    }

    #[test]
    fn counts_follow_floor() {
        assert_eq!(sample_mask(4, &cfg(0.5, 0.0, 1)).unwrap().len(), 2);
        assert_eq!(sample_mask(10, &cfg(0.75, 0.0, 1)).unwrap().len(), 7);
        assert!(sample_mask(10, &cfg(0.0, 0.0, 1)).unwrap().is_empty());
        let p = sample_mask(40, &cfg(0.5, 0.25, 3)).unwrap();
        assert_eq!(p.substituted.len(), 5);
        p.validate().unwrap();
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(sample_mask(50, &cfg(0.3, 0.2, 9)).unwrap(), sample_mask(50, &cfg(0.3, 0.2, 9)).unwrap());
        assert_ne!(sample_mask(50, &cfg(0.3, 0.2, 9)).unwrap(), sample_mask(50, &cfg(0.3, 0.2, 10)).unwrap());
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(sample_mask(5, &cfg(1.5, 0.0, 0)).is_err());
        assert!(sample_mask(5, &cfg(0.5, -0.1, 0)).is_err());
    }

    #[test]
    fn token_rows_without_replacement() {
        let x = Tensor::from_rows(&(0..6).map(|i| vec![i as f64, 1.0]).collect::<Vec<_>>()).unwrap();
        let plan = sample_mask(6, &cfg(0.5, 0.0, 4)).unwrap();
        let mut tape = Tape::new();
        let tok = tape.leaf(Tensor::from_rows(&[vec![-7.0, 7.0]]).unwrap()).unwrap();
        let xt = apply_input_mask(&mut tape, &x, &plan, tok).unwrap();
        let v = tape.value(xt);
        for i in 0..6 {
            if plan.masked.contains(&i) {
                assert_eq!(v.row(i), &[-7.0, 7.0]);
            } else {
                assert_eq!(v.row(i), x.row(i));
            }
        }
    }

    #[test]
    fn empty_plan_is_identity() {
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let mut tape = Tape::new();
        let tok = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let xt = apply_input_mask(&mut tape, &x, &MaskPlan::empty(2), tok).unwrap();
        assert_eq!(tape.value(xt), &x);
        let h = tape.leaf(x.clone()).unwrap();
        let ht = remask(&mut tape, h, &MaskPlan::empty(2), tok).unwrap();
        assert_eq!(tape.value(ht), &x);
    }

    #[test]
    fn remask_fixed_rows() {
        let h = Tensor::from_rows(&(0..6).map(|i| vec![i as f64, -(i as f64)]).collect::<Vec<_>>()).unwrap();
        let plan = MaskPlan::from_masked(6, vec![4, 1]).unwrap();
        let mut tape = Tape::new();
        let hv = tape.leaf(h.clone()).unwrap();
        let tok = tape.leaf(Tensor::from_rows(&[vec![9.0, 9.5]]).unwrap()).unwrap();
        let out = remask(&mut tape, hv, &plan, tok).unwrap();
        let v = tape.value(out);
        for i in 0..6 {
            let expected = if i == 1 || i == 4 { vec![9.0, 9.5] } else { h.row(i).to_vec() };
            assert_eq!(v.row(i), expected.as_slice());
        }
        let all = MaskPlan::from_masked(6, (0..6).collect()).unwrap();
        let out = remask(&mut tape, hv, &all, tok).unwrap();
        assert!((0..6).all(|i| tape.value(out).row(i) == [9.0, 9.5]));
    }

    #[test]
    fn out_of_range_plan_rejected() {
        let plan = MaskPlan {
            n: 3,
            masked: vec![0, 3],
            ..MaskPlan::empty(3)
        };
        let mut tape = Tape::new();
        let tok = tape.leaf(Tensor::scalar(0.0)).unwrap();
        assert!(apply_input_mask(&mut tape, &Tensor::zeros(3, 1), &plan, tok).is_err());
    }
}
