//! Strided convolutional critic with a dense head producing one raw score.

use rand::Rng;

use super::generator::{HR_SIDE, KERNEL};
use super::graph::{Graph, Var};
use super::params::{init_params, BoundParams, ParamDecl, ParamSet};
use super::tensor::Tensor;
use super::LEAKY_SLOPE;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    pub n_down_blocks: usize,
    pub width: usize,
    pub hidden: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            n_down_blocks: 2,
            width: 8,
            hidden: 16,
        }
    }
}

/// Spatial side after a stride-2, pad-1, 3-wide convolution.
fn down(n: usize) -> usize {
    (n - 1) / 2 + 1
}

impl DiscriminatorSpec {
    pub fn final_side(&self) -> usize {
        (0..self.n_down_blocks).fold(HR_SIDE, |n, _| down(n))
    }

    pub fn flat_len(&self) -> usize {
        self.width * self.final_side().pow(3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.hidden < 1 {
            return Err(Error::InvalidArgument("discriminator width and hidden must be positive".into()));
        }
        if self.final_side() < 1 {
            return Err(Error::InvalidArgument("discriminator has no spatial extent left".into()));
        }
        Ok(())
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let k3 = KERNEL.pow(3);
        let mut d = Vec::new();
        let mut conv = |name: String, cin: usize, cout: usize| {
            d.push(ParamDecl {
                name: format!("{name}.w"),
                shape: vec![cout, cin, KERNEL, KERNEL, KERNEL],
                fan_in: cin * k3,
                is_bias: false,
            });
            d.push(ParamDecl {
                name: format!("{name}.b"),
                shape: vec![cout],
                fan_in: cin * k3,
                is_bias: true,
            });
        };
        conv("conv_in".into(), 3, self.width);
        for i in 0..self.n_down_blocks {
            conv(format!("down{i}"), self.width, self.width);
        }
        for (name, nin, nout) in [("fc0", self.flat_len(), self.hidden), ("fc1", self.hidden, 1)] {
            d.push(ParamDecl {
                name: format!("{name}.w"),
                shape: vec![nout, nin],
                fan_in: nin,
                is_bias: false,
            });
            d.push(ParamDecl {
                name: format!("{name}.b"),
                shape: vec![nout],
                fan_in: nin,
                is_bias: true,
            });
        }
        d
    }

    pub fn param_count(&self) -> usize {
        self.decls().iter().map(|d| d.shape.iter().product::<usize>()).sum()
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> Result<ParamSet> {
        self.validate()?;
        init_params(&self.decls(), rng)
    }

    pub fn infer(params: &ParamSet) -> Result<DiscriminatorSpec> {
        let get = |n: &str| {
            params
                .get(n)
                .ok_or_else(|| Error::StructureMismatch(format!("missing {n}")))
        };
        let spec = DiscriminatorSpec {
            n_down_blocks: (0..).take_while(|i| params.get(&format!("down{i}.w")).is_some()).count(),
            width: get("conv_in.w")?.shape()[0],
            hidden: get("fc0.w")?.shape()[0],
        };
        spec.validate()?;
        ParamSet::from_decls_shapes(&spec.decls()).check_same_structure(params)?;
        Ok(spec)
    }
}

/// Records a critic pass for `x` of shape `[3, 24, 24, 24]`; returns a `[1]` score.
pub fn discriminator_graph(g: &mut Graph, spec: &DiscriminatorSpec, p: &BoundParams, x: Var) -> Result<Var> {
    let s = g.value(x).shape().to_vec();
    if s != [3, HR_SIDE, HR_SIDE, HR_SIDE] {
        return Err(Error::ShapeMismatch(format!("discriminator input {:?}, expected [3, 24, 24, 24]", s)));
    }
    let h = g.conv(x, p.var("conv_in.w"), p.var("conv_in.b"), 1);
    let mut h = g.leaky(h, LEAKY_SLOPE);
    for i in 0..spec.n_down_blocks {
        let y = g.conv(h, p.var(&format!("down{i}.w")), p.var(&format!("down{i}.b")), 2);
        h = g.leaky(y, LEAKY_SLOPE);
    }
    let flat = g.reshape(h, vec![spec.flat_len()]);
    let z = g.dense(flat, p.var("fc0.w"), p.var("fc0.b"));
    let z = g.leaky(z, LEAKY_SLOPE);
    Ok(g.dense(z, p.var("fc1.w"), p.var("fc1.b")))
}

pub fn forward_discriminator(params: &ParamSet, x: &Tensor) -> Result<f64> {
    let spec = DiscriminatorSpec::infer(params)?;
    let mut g = Graph::new();
    let bp = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let s = discriminator_graph(&mut g, &spec, &bp, xv)?;
    Ok(g.value(s).data()[0])
}

/// Gradient of the critic score with respect to its input, as a fresh tensor.
pub fn input_gradient(params: &ParamSet, x: &Tensor) -> Result<Tensor> {
    let spec = DiscriminatorSpec::infer(params)?;
    let mut g = Graph::new();
    let bp = params.bind(&mut g, false);
    let xv = g.leaf(x.clone(), true);
    let s = discriminator_graph(&mut g, &spec, &bp, xv)?;
    let grads = g.backward(&[(s, Tensor::scalar(1.0))], false)?;
    let gx = grads
        .get(xv)
        .ok_or_else(|| Error::Graph("input not reached by backward pass".into()))?;
    Ok(g.value(gx).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    pub(crate) fn toy() -> DiscriminatorSpec {
        DiscriminatorSpec {
            n_down_blocks: 3,
            width: 2,
            hidden: 4,
        }
    }

    fn random_input(seed: u64, amp: f64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![3, 24, 24, 24], (0..3 * 13824).map(|_| rng.random_range(-amp..amp)).collect()).unwrap()
    }

    #[test]
    fn shapes_and_counts() {
        let d = DiscriminatorSpec::default();
        assert_eq!(d.final_side(), 6);
        let conv = |cin: usize, cout: usize| cout * cin * 27 + cout;
        let expect = conv(3, 8) + 2 * conv(8, 8) + (16 * 8 * 216 + 16) + (16 + 1);
        assert_eq!(d.param_count(), expect);
        assert_eq!(toy().final_side(), 3);
        assert!(toy().param_count() <= 5000);
    }

    #[test]
    fn scores_are_deterministic_finite_and_zero_with_zero_head() {
        let spec = toy();
        let mut p = spec.init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = random_input(1, 10.0);
        let a = forward_discriminator(&p, &x).unwrap();
        assert!(a.is_finite());
        assert_eq!(a.to_bits(), forward_discriminator(&p, &x).unwrap().to_bits());
        p.get_mut("fc1.w").unwrap().data_mut().fill(0.0);
        assert_eq!(forward_discriminator(&p, &x).unwrap(), 0.0);
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let spec = toy();
        let p = spec.init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap();
        let x = random_input(2, 1.0);
        let gx = input_gradient(&p, &x).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let h = 1e-3;
        for _ in 0..20 {
            let i = rng.random_range(0..x.len());
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (forward_discriminator(&p, &xp).unwrap() - forward_discriminator(&p, &xm).unwrap()) / (2.0 * h);
            let a = gx.data()[i];
            assert!((fd - a).abs() <= 1e-4 * a.abs().max(fd.abs()) + 1e-6, "{fd} vs {a}");
        }
    }
}
