//! Named parameter store with deterministic per-name initialization.
//!
//! Every parameter draws from its own stream seeded by (global seed, name),
//! so adding or swapping a module never reshuffles the init of another.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, fnv1a64, Rng};
use crate::ssm::SsmVars;
use crate::tensor::{Tape, Tensor, VarId};
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub enum Init {
    Zeros,
    Const(f64),
    /// N(0, sqrt(2/fan_in)).
    He { fan_in: usize },
    /// N(0, std).
    Normal { std: f64 },
    /// He noise plus fixed center taps: (out channel, in channel, value)
    /// added at the 3x3 kernel center. Lets a conv start as a pass-through
    /// on chosen channels.
    ConvPass {
        fan_in: usize,
        taps: Vec<(usize, usize, f64)>,
    },
    /// ln(n+1) ramp over the trailing state axis.
    ALog { n_state: usize },
    /// Inverse softplus of a log-uniform step size in [1e-3, 1e-1].
    DtBias,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, init: Init) -> ParamSpec {
        ParamSpec {
            name: name.into(),
            shape,
            init,
        }
    }
}

/// Conv3x3 weight + bias pair. Gain-1 init: much of the network is a chain
/// of linear convs around identity blocks, where the usual post-ReLU gain
/// of 2 compounds into blow-up.
pub fn conv_specs(prefix: &str, cout: usize, cin: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(
            format!("{prefix}.w"),
            vec![cout, cin, 3, 3],
            Init::Normal {
                std: (1.0 / (cin * 9) as f64).sqrt(),
            },
        ),
        ParamSpec::new(format!("{prefix}.b"), vec![cout], Init::Zeros),
    ]
}

/// Conv3x3 pair initialized to zero (residual-identity branches).
pub fn conv_specs_zero(prefix: &str, cout: usize, cin: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.w"), vec![cout, cin, 3, 3], Init::Zeros),
        ParamSpec::new(format!("{prefix}.b"), vec![cout], Init::Zeros),
    ]
}

/// The six tensors of one selective scan.
pub fn ssm_specs(prefix: &str, c: usize, n: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.a_log"), vec![c, n], Init::ALog { n_state: n }),
        // small so delta starts near its bias
        ParamSpec::new(
            format!("{prefix}.delta_w"),
            vec![c, c],
            Init::Normal {
                std: 0.1 / (c as f64).sqrt(),
            },
        ),
        ParamSpec::new(format!("{prefix}.delta_b"), vec![c], Init::DtBias),
        ParamSpec::new(format!("{prefix}.b_w"), vec![c, n], Init::He { fan_in: c }),
        ParamSpec::new(format!("{prefix}.c_w"), vec![c, n], Init::He { fan_in: c }),
        ParamSpec::new(format!("{prefix}.d"), vec![c], Init::Const(1.0)),
    ]
}

pub fn init_params(specs: &[ParamSpec], seed: u64) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let mut rng = Rng::from_seed(derive_seed(seed, &[fnv1a64(spec.name.as_bytes())]));
        let t = match &spec.init {
            Init::Zeros => Tensor::zeros(&spec.shape),
            Init::Const(v) => Tensor::full(&spec.shape, *v),
            Init::He { fan_in } => {
                let std = (2.0 / *fan_in as f64).sqrt();
                Tensor::from_fn(&spec.shape, |_| rng.normal() * std)
            }
            Init::Normal { std } => Tensor::from_fn(&spec.shape, |_| rng.normal() * std),
            Init::ConvPass { fan_in, taps } => {
                // quiet noise floor so the pass-through taps set the scale
                let std = 0.3 * (1.0 / *fan_in as f64).sqrt();
                let mut t = Tensor::from_fn(&spec.shape, |_| rng.normal() * std);
                let cin = spec.shape[1];
                for &(co, ci, v) in taps {
                    t.data_mut()[((co * cin + ci) * 3 + 1) * 3 + 1] += v;
                }
                t
            }
            Init::ALog { n_state } => {
                Tensor::from_fn(&spec.shape, |i| ((i % n_state + 1) as f64).ln())
            }
            Init::DtBias => Tensor::from_fn(&spec.shape, |_| {
                let dt = 1e-3 * (100.0f64).powf(rng.uniform());
                (dt.exp() - 1.0).ln()
            }),
        };
        let prev = out.insert(spec.name.clone(), t);
        debug_assert!(prev.is_none(), "duplicate parameter {}", spec.name);
    }
    out
}

/// Tape handles for a parameter map, bound in name order.
pub struct BoundParams {
    map: BTreeMap<String, VarId>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &BTreeMap<String, Tensor>, trainable: bool) -> BoundParams {
        let map = params
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
            .collect();
        BoundParams { map }
    }

    pub fn get(&self, name: &str) -> VarId {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Result<VarId> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArg(format!("unknown parameter `{name}`")))
    }

    pub fn ssm_vars(&self, prefix: &str) -> SsmVars {
        SsmVars {
            a_log: self.get(&format!("{prefix}.a_log")),
            delta_w: self.get(&format!("{prefix}.delta_w")),
            delta_b: self.get(&format!("{prefix}.delta_b")),
            b_w: self.get(&format!("{prefix}.b_w")),
            c_w: self.get(&format!("{prefix}.c_w")),
            d: self.get(&format!("{prefix}.d")),
        }
    }

    /// Gradients collected back into a name-keyed map.
    pub fn collect_grads(&self, grads: &crate::tensor::Gradients) -> BTreeMap<String, Tensor> {
        self.map
            .iter()
            .filter_map(|(k, &v)| grads.get(v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}
