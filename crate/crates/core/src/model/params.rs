use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use crate::autodiff::{BatchStats, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Momentum of the batch-norm running averages.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
/// Floor inside the per-event RMS normalization ahead of every block.
pub const NORM_EPS: f64 = 1e-5;

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    Const(f64),
    /// Row `c` of a `(channels, state)` matrix holds `ln(1..=state)`.
    ALog,
    /// Inverse softplus of a step size drawn log-uniformly in `[1e-3, 0.1]`.
    DtBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Default)]
struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, path: String, shape: &[usize], init: Init) {
        self.0.push(ParamSpec {
            path,
            shape: shape.to_vec(),
            init,
        });
    }

    fn fan_in(&mut self, path: &str, shape: &[usize], fan_in: usize, bias: bool) {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        self.push(format!("{path}.weight"), shape, Init::Uniform(bound));
        if bias {
            self.push(format!("{path}.bias"), &shape[..1], Init::Uniform(bound));
        }
    }

    fn linear(&mut self, path: &str, inp: usize, out: usize) {
        self.fan_in(path, &[out, inp], inp, true);
    }

    fn depthwise(&mut self, path: &str, c: usize, k: usize) {
        self.fan_in(path, &[c, k], k, true);
    }

    fn block(&mut self, path: &str, c: usize, cfg: &NetworkConfig) {
        let m = &cfg.ms3m;
        let n = m.state_dim;
        self.push(format!("{path}.norm.weight"), &[c], Init::Const(1.0));
        self.linear(&format!("{path}.ra"), 2 * c, c);
        self.depthwise(&format!("{path}.intra_conv"), c, m.intra_kernel);
        self.depthwise(&format!("{path}.inter_conv"), c, m.inter_kernel);
        self.linear(&format!("{path}.gate"), c, c);
        let bound = 1.0 / libm::sqrt(c as f64);
        self.push(format!("{path}.ssm.w_delta"), &[c, c], Init::Uniform(bound));
        self.push(format!("{path}.ssm.b_delta"), &[c], Init::DtBias);
        self.push(format!("{path}.ssm.w_b"), &[n, c], Init::Uniform(bound));
        self.push(format!("{path}.ssm.w_c"), &[n, c], Init::Uniform(bound));
        self.push(format!("{path}.ssm.a_log"), &[c, n], Init::ALog);
        self.push(format!("{path}.ssm.d"), &[c], Init::Const(1.0));
        if cfg.use_ms3m {
            self.linear(&format!("{path}.ms.proj"), c, c);
            self.depthwise(&format!("{path}.ms.conv0"), c, m.kernels[0]);
            for (i, &k) in m.kernels.iter().enumerate() {
                self.depthwise(&format!("{path}.ms.conv{}", i + 1), c, k);
            }
        }
        self.linear(&format!("{path}.out"), c, c);
    }
}

/// Every learnable tensor the configuration needs, in a fixed order.
pub fn param_specs(cfg: &NetworkConfig) -> Vec<ParamSpec> {
    let mut s = Specs::default();
    let st = &cfg.stdf;
    let ch = &cfg.encoder_channels;
    let c0 = ch[0];
    s.depthwise("stdf.spatial_conv", 4, st.spatial_kernel);
    s.linear("stdf.spatial_proj", 4, c0);
    s.push("stdf.time_embed.weight".into(), &[st.window_embed, c0], Init::Uniform(1.0));
    if cfg.use_stdf {
        s.fan_in("stdf.intra_conv", &[c0, 1, st.intra_kernel], st.intra_kernel, true);
        s.depthwise("stdf.inter_conv", c0, st.inter_kernel);
        s.fan_in("stdf.fuse_conv", &[c0, c0, st.fuse_kernel], c0 * st.fuse_kernel, false);
        s.push("stdf.bn.weight".into(), &[c0], Init::Const(1.0));
        s.push("stdf.bn.bias".into(), &[c0], Init::Const(0.0));
    } else {
        s.linear("stdf.naive_proj", c0, c0);
    }
    for (i, &c) in ch.iter().enumerate() {
        if i > 0 {
            s.linear(&format!("enc{i}.down"), ch[i - 1], c);
        }
        for b in 0..cfg.blocks_per_stage {
            s.block(&format!("enc{i}.block{b}"), c, cfg);
        }
    }
    for i in (0..ch.len() - 1).rev() {
        s.linear(&format!("dec{i}.up"), ch[i + 1], ch[i]);
        for b in 0..cfg.blocks_per_stage {
            s.block(&format!("dec{i}.block{b}"), ch[i], cfg);
        }
    }
    s.linear("head", c0, 2);
    s.0
}

fn buffer_specs(cfg: &NetworkConfig) -> Vec<(String, Tensor)> {
    if !cfg.use_stdf {
        return Vec::new();
    }
    let c0 = cfg.encoder_channels[0];
    vec![
        ("stdf.bn.running_mean".into(), Tensor::zeros(&[c0])),
        ("stdf.bn.running_var".into(), Tensor::full(&[c0], 1.0)),
    ]
}

/// All weights of a network, keyed by layer path, plus the batch-norm
/// running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in param_specs(cfg) {
            let len: usize = spec.shape.iter().product();
            let data: Vec<f64> = match spec.init {
                Init::Uniform(b) => (0..len).map(|_| rng.gen_range(-b..=b)).collect(),
                Init::Const(v) => vec![v; len],
                Init::ALog => {
                    let n = spec.shape[1];
                    (0..len).map(|i| libm::log((i % n + 1) as f64)).collect()
                }
                Init::DtBias => (0..len)
                    .map(|_| {
                        let u: f64 = rng.gen();
                        let dt = libm::exp(libm::log(1e-3) + u * (libm::log(0.1) - libm::log(1e-3)));
                        // softplus^-1(dt) = ln(e^dt - 1)
                        dt + libm::log(-libm::expm1(-dt))
                    })
                    .collect(),
            };
            tensors.insert(spec.path, Tensor::new(&spec.shape, data)?);
        }
        Ok(ModelParams {
            tensors,
            buffers: buffer_specs(cfg).into_iter().collect(),
        })
    }

    /// Checks that the stored tensors are exactly the ones `cfg` needs.
    pub fn check_against(&self, cfg: &NetworkConfig) -> Result<()> {
        let specs = param_specs(cfg);
        for spec in &specs {
            let t = self
                .tensors
                .get(&spec.path)
                .ok_or_else(|| Error::MissingParam(spec.path.clone()))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Shape {
                    op: "checkpoint",
                    left: spec.shape.clone(),
                    right: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !specs.iter().any(|s| &s.path == *k)) {
            return Err(Error::InvalidArgument(format!("unexpected parameter {extra}")));
        }
        for (path, t) in buffer_specs(cfg) {
            match self.buffers.get(&path) {
                Some(b) if b.shape() == t.shape() => {}
                Some(b) => {
                    return Err(Error::Shape {
                        op: "checkpoint",
                        left: t.shape().to_vec(),
                        right: b.shape().to_vec(),
                    })
                }
                None => return Err(Error::MissingParam(path)),
            }
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Folds batch statistics into the running averages of `path`.
    pub fn update_bn(&mut self, path: &str, stats: &BatchStats) -> Result<()> {
        for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let key = format!("{path}.{suffix}");
            let buf = self
                .buffers
                .get_mut(&key)
                .ok_or_else(|| Error::MissingParam(key.clone()))?;
            for (r, b) in buf.data_mut().iter_mut().zip(batch) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
        Ok(())
    }
}

/// Binds [`ModelParams`] to one tape for one forward pass.
pub struct Session<'p> {
    params: &'p ModelParams,
    vars: BTreeMap<String, Var>,
    bn_stats: Vec<(String, BatchStats)>,
    trainable: bool,
}

impl<'p> Session<'p> {
    /// With `trainable` the parameters become gradient-tracking leaves.
    pub fn new(params: &'p ModelParams, trainable: bool) -> Self {
        Session {
            params,
            vars: BTreeMap::new(),
            bn_stats: Vec::new(),
            trainable,
        }
    }

    pub fn get(&mut self, tape: &mut Tape, path: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(path) {
            return Ok(v);
        }
        let t = self
            .params
            .tensors
            .get(path)
            .ok_or_else(|| Error::MissingParam(path.into()))?;
        let v = tape.leaf(t.clone(), self.trainable);
        self.vars.insert(path.into(), v);
        Ok(v)
    }

    /// Uses `v` for `path` instead of a fresh leaf.
    pub fn bind(&mut self, path: &str, v: Var) {
        self.vars.insert(path.into(), v);
    }

    pub fn buffer(&self, path: &str) -> Result<&'p Tensor> {
        self.params
            .buffers
            .get(path)
            .ok_or_else(|| Error::MissingParam(path.into()))
    }

    pub(crate) fn record_bn(&mut self, path: &str, stats: BatchStats) {
        self.bn_stats.push((path.into(), stats));
    }

    /// Variables created so far, by path.
    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Batch statistics gathered in training mode, by batch-norm path.
    pub fn bn_stats(&self) -> &[(String, BatchStats)] {
        &self.bn_stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_complete() {
        let cfg = NetworkConfig::default();
        let a = ModelParams::init(&cfg, 3).unwrap();
        assert_eq!(a, ModelParams::init(&cfg, 3).unwrap());
        assert_ne!(a, ModelParams::init(&cfg, 4).unwrap());
        a.check_against(&cfg).unwrap();
        assert_eq!(a.tensors.len(), param_specs(&cfg).len());
    }

    #[test]
    fn ssm_init_ranges() {
        let cfg = NetworkConfig::default();
        let p = ModelParams::init(&cfg, 0).unwrap();
        let a = &p.tensors["enc0.block0.ssm.a_log"];
        assert_eq!(&a.data()[..3], &[0.0, libm::log(2.0), libm::log(3.0)]);
        for &b in p.tensors["enc0.block0.ssm.b_delta"].data() {
            let dt = libm::log1p(libm::exp(b));
            assert!((1e-3 - 1e-12..=0.1 + 1e-12).contains(&dt), "{dt}");
        }
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let p = ModelParams::init(&NetworkConfig::default(), 0).unwrap();
        let mut other = NetworkConfig::default();
        other.encoder_channels = vec![16, 32];
        assert!(matches!(p.check_against(&other), Err(Error::Shape { .. })));
        let m1 = NetworkConfig::default().ablation("m1").unwrap();
        assert!(p.check_against(&m1).is_err());
    }
}
