use serde::{Deserialize, Serialize};

use super::{leaky_relu, leaky_relu_grad, Block, ConvParams, FeatureMap};
use crate::error::{Error, Result};
use crate::rng::{seeded, SeededRng};

/// One CSP deep-branch sub-path: 1x1 conv, leaky rectifier, 3x3 same-padded conv.
/// Both convolutions preserve the channel count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspStage {
    pub reduce: ConvParams,
    pub spatial: ConvParams,
}

impl CspStage {
    pub fn new(reduce: ConvParams, spatial: ConvParams) -> Result<Self> {
        let s = CspStage { reduce, spatial };
        s.validate()?;
        Ok(s)
    }

    pub fn random(channels: usize, rng: &mut SeededRng) -> Result<Self> {
        let reduce = ConvParams::random(channels, channels, 1, 1, 0, rng)?;
        let spatial = ConvParams::random(channels, channels, 3, 1, 1, rng)?;
        CspStage::new(reduce, spatial)
    }

    pub fn identity(channels: usize) -> Result<Self> {
        CspStage::new(ConvParams::identity(channels, 1)?, ConvParams::identity(channels, 3)?)
    }

    pub fn channels(&self) -> usize {
        self.reduce.c_in
    }

    pub fn validate(&self) -> Result<()> {
        self.reduce.validate()?;
        self.spatial.validate()?;
        let c = self.reduce.c_in;
        let (r, s) = (&self.reduce, &self.spatial);
        if r.c_out != c || s.c_in != c || s.c_out != c {
            return Err(Error::shape(format!(
                "CSP sub-path must preserve channels: {}->{} then {}->{}",
                r.c_in, r.c_out, s.c_in, s.c_out
            )));
        }
        if r.k != 1 || r.stride != 1 || r.padding != 0 {
            return Err(Error::param("CSP reduce conv must be 1x1, stride 1, no padding"));
        }
        if s.k != 3 || s.stride != 1 || s.dilation != 1 || s.padding != 1 {
            return Err(Error::param("CSP spatial conv must be 3x3, stride 1, same padding"));
        }
        Ok(())
    }
}

impl Block for CspStage {
    fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let a = self.reduce.forward(x)?;
        self.spatial.forward(&a.map(leaky_relu))
    }

    fn backward_input(&self, x: &FeatureMap, grad_out: &FeatureMap) -> Result<FeatureMap> {
        let a = self.reduce.forward(x)?;
        let b = a.map(leaky_relu);
        let mut g = self.spatial.backward_input(&b, grad_out)?;
        for (gv, av) in g.data.iter_mut().zip(&a.data) {
            *gv *= leaky_relu_grad(*av);
        }
        self.reduce.backward_input(x, &g)
    }
}

/// Two cascaded CSP stages on a `2k`-channel input.
///
/// Stage 1 splits the input into shallow `s` and deep `d` halves and computes
/// `d1 = stage1(d)`, giving `[s, d1]`. Stage 2 splits that again (`s`, `d1`)
/// and computes `d2 = stage2(d1)`. The stage-1 deep map `d1` is carried
/// directly into the final concatenation, so the output is `[s, d2, d1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Csp2Params {
    pub stage1: CspStage,
    pub stage2: CspStage,
}

impl Csp2Params {
    pub fn new(stage1: CspStage, stage2: CspStage) -> Result<Self> {
        let p = Csp2Params { stage1, stage2 };
        p.validate()?;
        Ok(p)
    }

    /// Random sub-paths for a `c_in`-channel input.
    pub fn random(c_in: usize, seed: u64) -> Result<Self> {
        let half = split_width(c_in)?;
        let mut rng = seeded(seed);
        let stage1 = CspStage::random(half, &mut rng)?;
        let stage2 = CspStage::random(half, &mut rng)?;
        Csp2Params::new(stage1, stage2)
    }

    pub fn identity(c_in: usize) -> Result<Self> {
        let half = split_width(c_in)?;
        Csp2Params::new(CspStage::identity(half)?, CspStage::identity(half)?)
    }

    pub fn input_channels(&self) -> usize {
        2 * self.stage1.channels()
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.stage1.channels() != self.stage2.channels() {
            return Err(Error::shape(format!(
                "CSP2 stages disagree: {} vs {} channels",
                self.stage1.channels(),
                self.stage2.channels()
            )));
        }
        Ok(())
    }
}

fn split_width(c: usize) -> Result<usize> {
    if c < 2 || !c.is_multiple_of(2) {
        return Err(Error::shape(format!("cannot split {c} channels into equal halves")));
    }
    Ok(c / 2)
}

/// Output width of [`csp2_block`]: stage-2 concat `c` plus stage-1 deep `c / 2`.
pub fn csp2_output_channels(c_in: usize) -> Result<usize> {
    Ok(c_in + split_width(c_in)?)
}

struct Csp2Trace {
    shallow: FeatureMap,
    deep: FeatureMap,
    d1: FeatureMap,
    d2: FeatureMap,
}

fn csp2_trace(x: &FeatureMap, p: &Csp2Params) -> Result<Csp2Trace> {
    p.validate()?;
    let half = split_width(x.c)?;
    if x.c != p.input_channels() {
        return Err(Error::shape(format!(
            "CSP2 expects {} channels, got {}",
            p.input_channels(),
            x.c
        )));
    }
    let shallow = x.slice_channels(0, half)?;
    let deep = x.slice_channels(half, x.c)?;
    let d1 = p.stage1.forward(&deep)?;
    let stage1_out = FeatureMap::concat_channels(&[&shallow, &d1])?;
    let deep2 = stage1_out.slice_channels(half, stage1_out.c)?;
    let d2 = p.stage2.forward(&deep2)?;
    Ok(Csp2Trace { shallow, deep, d1, d2 })
}

pub fn csp2_block(x: &FeatureMap, p: &Csp2Params) -> Result<FeatureMap> {
    let t = csp2_trace(x, p)?;
    FeatureMap::concat_channels(&[&t.shallow, &t.d2, &t.d1])
}

impl Block for Csp2Params {
    fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        csp2_block(x, self)
    }

    fn backward_input(&self, x: &FeatureMap, grad_out: &FeatureMap) -> Result<FeatureMap> {
        let t = csp2_trace(x, self)?;
        let half = t.shallow.c;
        if grad_out.shape() != [x.n, 3 * half, x.h, x.w] {
            return Err(Error::shape(format!("CSP2 gradient shape {:?}", grad_out.shape())));
        }
        let g_shallow = grad_out.slice_channels(0, half)?;
        let g_d2 = grad_out.slice_channels(half, 2 * half)?;
        let mut g_d1 = grad_out.slice_channels(2 * half, 3 * half)?;
        g_d1.add_assign(&self.stage2.backward_input(&t.d1, &g_d2)?)?;
        let g_deep = self.stage1.backward_input(&t.deep, &g_d1)?;
        FeatureMap::concat_channels(&[&g_shallow, &g_deep])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{load_json, save_json};
    use proptest::prelude::*;

    #[test]
    fn eight_channels_give_twelve() {
        assert_eq!(csp2_output_channels(8).unwrap(), 12);
        let p = Csp2Params::random(8, 1).unwrap();
        let x = FeatureMap::random(1, 8, 6, 5, &mut seeded(2));
        assert_eq!(csp2_block(&x, &p).unwrap().shape(), [1, 12, 6, 5]);
    }

    #[test]
    fn identity_subpaths_duplicate_deep_half() {
        let x = FeatureMap::random(2, 6, 4, 4, &mut seeded(3)).map(|v| v + 0.5);
        let out = csp2_block(&x, &Csp2Params::identity(6).unwrap()).unwrap();
        let s = x.slice_channels(0, 3).unwrap();
        let d = x.slice_channels(3, 6).unwrap();
        let expect = FeatureMap::concat_channels(&[&s, &d, &d]).unwrap();
        assert_eq!(out, expect);
    }

    #[test]
    fn odd_channels_error() {
        assert!(csp2_output_channels(7).is_err());
        assert!(Csp2Params::random(5, 0).is_err());
        let p = Csp2Params::random(8, 0).unwrap();
        assert!(csp2_block(&FeatureMap::zeros(1, 6, 3, 3), &p).is_err());
    }

    #[test]
    fn stage_mismatch_rejected() {
        let a = CspStage::identity(2).unwrap();
        let b = CspStage::identity(3).unwrap();
        assert!(Csp2Params::new(a, b).is_err());
        let bad = ConvParams::identity(2, 3).unwrap();
        assert!(CspStage::new(bad.clone(), bad).is_err());
    }

    #[test]
    fn json_round_trip_reproduces_output() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("csp2.json");
        let p = Csp2Params::random(4, 11).unwrap();
        save_json(&p, &path).unwrap();
        let q: Csp2Params = load_json(&path).unwrap();
        assert_eq!(p, q);
        let x = FeatureMap::random(1, 4, 5, 5, &mut seeded(12));
        assert_eq!(csp2_block(&x, &p).unwrap(), csp2_block(&x, &q).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn output_shape_matches_channel_arithmetic(
            half in 1usize..6, n in 1usize..3, h in 1usize..7, w in 1usize..7, seed in any::<u64>()
        ) {
            let c = 2 * half;
            let p = Csp2Params::random(c, seed).unwrap();
            let x = FeatureMap::random(n, c, h, w, &mut seeded(seed ^ 1));
            let out = csp2_block(&x, &p).unwrap();
            prop_assert_eq!(out.shape(), [n, half + half + half, h, w]);
            prop_assert_eq!(out.c, csp2_output_channels(c).unwrap());
            prop_assert!(out.data.iter().all(|v| v.is_finite()));
        }
    }
}
