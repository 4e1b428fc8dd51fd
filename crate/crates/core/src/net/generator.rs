//! Residual-in-residual dense generator with a trilinear ×2 upsample and one
//! output branch per velocity component.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{init_params, BoundParams, ParamDecl, ParamSet};
use super::tensor::Tensor;
use super::{LEAKY_SLOPE, RESIDUAL_SCALE};
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
pub const LR_SIDE: usize = 12;
pub const HR_SIDE: usize = 24;
const DENSE_CONVS: usize = 3;
const DENSE_BLOCKS_PER_RRDB: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub n_rrdb: usize,
    pub width: usize,
    pub n_hr_blocks: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n_rrdb: 2,
            width: 16,
            n_hr_blocks: 1,
        }
    }
}

fn conv_decls(out: &mut Vec<ParamDecl>, name: &str, cin: usize, cout: usize) {
    let fan_in = cin * KERNEL.pow(3);
    out.push(ParamDecl {
        name: format!("{name}.w"),
        shape: vec![cout, cin, KERNEL, KERNEL, KERNEL],
        fan_in,
        is_bias: false,
    });
    out.push(ParamDecl {
        name: format!("{name}.b"),
        shape: vec![cout],
        fan_in,
        is_bias: true,
    });
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_rrdb < 1 {
            return Err(Error::InvalidArgument("n_rrdb must be at least 1".into()));
        }
        if self.width < 4 {
            return Err(Error::InvalidArgument("generator width must be at least 4".into()));
        }
        Ok(())
    }

    /// Channels added by each convolution inside a dense sub-block.
    pub fn growth(&self) -> usize {
        self.width / 2
    }

    pub fn branch_width(&self) -> usize {
        self.width / 2
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let w = self.width;
        let gr = self.growth();
        let mut d = Vec::new();
        conv_decls(&mut d, "conv_in", 3, w);
        for r in 0..self.n_rrdb {
            for s in 0..DENSE_BLOCKS_PER_RRDB {
                for c in 0..DENSE_CONVS {
                    let cout = if c + 1 == DENSE_CONVS { w } else { gr };
                    conv_decls(&mut d, &format!("rrdb{r}.db{s}.conv{c}"), w + c * gr, cout);
                }
            }
        }
        conv_decls(&mut d, "trunk", w, w);
        for h in 0..self.n_hr_blocks {
            conv_decls(&mut d, &format!("hr{h}"), w, w);
        }
        for c in 0..3 {
            conv_decls(&mut d, &format!("out{c}.conv0"), w, self.branch_width());
            conv_decls(&mut d, &format!("out{c}.conv1"), self.branch_width(), 1);
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

    /// Recovers the spec from parameter names and shapes.
    pub fn infer(params: &ParamSet) -> Result<GeneratorSpec> {
        let w = params
            .get("conv_in.w")
            .ok_or_else(|| Error::StructureMismatch("missing conv_in.w".into()))?
            .shape()[0];
        let count = |f: &dyn Fn(usize) -> String| (0..).take_while(|&i| params.get(&f(i)).is_some()).count();
        let spec = GeneratorSpec {
            n_rrdb: count(&|i| format!("rrdb{i}.db0.conv0.w")),
            width: w,
            n_hr_blocks: count(&|i| format!("hr{i}.w")),
        };
        spec.validate()?;
        let expected = ParamSet::from_decls_shapes(&spec.decls());
        expected.check_same_structure(params)?;
        Ok(spec)
    }
}

impl ParamSet {
    pub(crate) fn from_decls_shapes(decls: &[ParamDecl]) -> ParamSet {
        let mut p = ParamSet::new();
        for d in decls {
            p.insert(d.name.clone(), Tensor::zeros(d.shape.clone())).expect("unique names");
        }
        p
    }
}

/// Output and intermediate taps of one generator pass.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTaps {
    pub output: Var,
    /// Activations entering the trilinear upsample.
    pub middle: Var,
    /// Activations entering the per-component branches.
    pub end: Var,
}

fn conv(g: &mut Graph, p: &BoundParams, name: &str, x: Var) -> Var {
    g.conv(x, p.var(&format!("{name}.w")), p.var(&format!("{name}.b")), 1)
}

fn conv_act(g: &mut Graph, p: &BoundParams, name: &str, x: Var) -> Var {
    let y = conv(g, p, name, x);
    g.leaky(y, LEAKY_SLOPE)
}

fn dense_block(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var) -> Var {
    let mut feats = vec![x];
    let mut last = x;
    for c in 0..DENSE_CONVS {
        let inp = if feats.len() == 1 { x } else { g.concat(&feats) };
        let name = format!("{prefix}.conv{c}");
        if c + 1 == DENSE_CONVS {
            last = conv(g, p, &name, inp);
        } else {
            let y = conv_act(g, p, &name, inp);
            feats.push(y);
        }
    }
    let scaled = g.scale(last, RESIDUAL_SCALE);
    g.add(x, scaled)
}

fn rrdb(g: &mut Graph, p: &BoundParams, r: usize, x: Var) -> Var {
    let mut y = x;
    for s in 0..DENSE_BLOCKS_PER_RRDB {
        y = dense_block(g, p, &format!("rrdb{r}.db{s}"), y);
    }
    let scaled = g.scale(y, RESIDUAL_SCALE);
    g.add(x, scaled)
}

/// Records a generator pass for `x` of shape `[3, 12, 12, 12]`.
pub fn generator_graph(g: &mut Graph, spec: &GeneratorSpec, p: &BoundParams, x: Var) -> Result<GeneratorTaps> {
    let s = g.value(x).shape().to_vec();
    if s != [3, LR_SIDE, LR_SIDE, LR_SIDE] {
        return Err(Error::ShapeMismatch(format!("generator input {:?}, expected [3, 12, 12, 12]", s)));
    }
    let f0 = conv(g, p, "conv_in", x);
    let mut h = f0;
    for r in 0..spec.n_rrdb {
        h = rrdb(g, p, r, h);
    }
    let t = conv(g, p, "trunk", h);
    let middle = g.add(f0, t);
    let mut u = g.upsample(middle);
    for i in 0..spec.n_hr_blocks {
        u = conv_act(g, p, &format!("hr{i}"), u);
    }
    let end = u;
    let mut outs = Vec::with_capacity(3);
    for c in 0..3 {
        let b = conv_act(g, p, &format!("out{c}.conv0"), end);
        outs.push(conv(g, p, &format!("out{c}.conv1"), b));
    }
    let output = g.concat(&outs);
    Ok(GeneratorTaps { output, middle, end })
}

/// Inference-only generator pass on a channel-first `[3, 12, 12, 12]` tensor.
pub fn forward_generator(params: &ParamSet, x: &Tensor) -> Result<Tensor> {
    let spec = GeneratorSpec::infer(params)?;
    let mut g = Graph::new();
    let bp = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let taps = generator_graph(&mut g, &spec, &bp, xv)?;
    Ok(g.value(taps.output).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy() -> GeneratorSpec {
        GeneratorSpec {
            n_rrdb: 1,
            width: 4,
            n_hr_blocks: 1,
        }
    }

    /// Independent count: each 3³ conv has cout·cin·27 weights and cout biases.
    fn conv_params(cin: usize, cout: usize) -> usize {
        cout * cin * 27 + cout
    }

    #[test]
    fn parameter_count_matches_shape_arithmetic() {
        // Default spec: width 16, growth 8, two RRDBs, one HR block, branch width 8.
        let dense = conv_params(16, 8) + conv_params(24, 8) + conv_params(32, 16);
        let expect = conv_params(3, 16)
            + 2 * 2 * dense
            + conv_params(16, 16)
            + conv_params(16, 16)
            + 3 * (conv_params(16, 8) + conv_params(8, 1));
        assert_eq!(expect, 116_195);
        assert_eq!(GeneratorSpec::default().param_count(), expect);

        let dense = conv_params(4, 2) + conv_params(6, 2) + conv_params(8, 4);
        let toy_expect = conv_params(3, 4) + 2 * dense + 2 * conv_params(4, 4) + 3 * (conv_params(4, 2) + conv_params(2, 1));
        assert_eq!(toy().param_count(), toy_expect);
        assert!(toy_expect <= 5000);
    }

    #[test]
    fn output_shape_and_determinism() {
        let spec = toy();
        let p = spec.init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Tensor::new(vec![3, 12, 12, 12], (0..5184).map(|i| ((i % 17) as f64 - 8.0) * 0.05).collect()).unwrap();
        let y = forward_generator(&p, &x).unwrap();
        assert_eq!(y.shape(), &[3, 24, 24, 24]);
        assert!(y.is_finite());
        assert_eq!(forward_generator(&p, &x).unwrap(), y);
        assert_eq!(GeneratorSpec::infer(&p).unwrap(), spec);
    }

    #[test]
    fn zero_input_with_zero_heads_is_zero() {
        let spec = toy();
        let mut p = spec.init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(2)).unwrap();
        for c in 0..3 {
            for t in ["w", "b"] {
                p.get_mut(&format!("out{c}.conv1.{t}")).unwrap().data_mut().fill(0.0);
            }
        }
        let x = Tensor::zeros(vec![3, 12, 12, 12]);
        assert!(forward_generator(&p, &x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let p = toy().init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = Tensor::zeros(vec![3, 10, 12, 12]);
        assert!(matches!(forward_generator(&p, &x), Err(Error::ShapeMismatch(_))));
    }
}
