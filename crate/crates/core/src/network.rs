//! PromptSSM blocks and the DyPro-Mamba assembly, behind a swappable
//! backbone interface: the neck, losses, and training loop stay fixed while
//! the reconstruction network in the middle can be replaced.

use crate::drpn::{self, PromptVars};
use crate::error::{Error, Result};
use crate::params::{conv_specs, conv_specs_zero, init_params, ssm_specs, BoundParams, Init, ParamSpec};
use crate::ssm::multi_direction_scan_tape;
use crate::tensor::{Tape, Tensor, VarId};
use std::collections::BTreeMap;

/// Structural hyperparameters; serialized into every checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Cube band count B.
    pub bands: usize,
    /// Feature width after the first projection.
    pub b_feat: usize,
    /// PromptSSM count in the chain (>= 3; extras widen the bottleneck).
    pub n_blocks: usize,
    pub n_heads: usize,
    pub n_state: usize,
    pub frft_order: f64,
    pub seed: u64,
    pub backbone: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            bands: 8,
            b_feat: 8,
            n_blocks: 3,
            n_heads: 1,
            n_state: 8,
            frft_order: 0.5,
            seed: 0,
            backbone: "dypro".into(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.b_feat == 0 || self.n_heads == 0 || self.n_state == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.n_blocks < 3 {
            return Err(Error::Config(format!(
                "n_blocks must be >= 3 (encoder, bottleneck, decoder), got {}",
                self.n_blocks
            )));
        }
        if self.b_feat % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "b_feat {} not divisible by n_heads {}",
                self.b_feat, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Anything that can sit in the reconstruction slot: consumes the RGB map,
/// the preliminary cube, and the prompt set; produces a [B,H,W] cube.
pub trait Backbone {
    fn name(&self) -> &'static str;
    /// Parameters owned by the backbone; names must start with "backbone.".
    fn param_specs(&self, cfg: &ModelConfig) -> Vec<ParamSpec>;
    fn forward(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        x: VarId,
        prompts: &PromptVars,
        cfg: &ModelConfig,
    ) -> Result<VarId>;
}

/// Registry of known backbones.
pub fn backbone_by_name(name: &str) -> Result<Box<dyn Backbone>> {
    match name {
        "dypro" => Ok(Box::new(DyProMamba)),
        "identity" => Ok(Box::new(IdentityBackbone)),
        other => Err(Error::Config(format!("unknown backbone `{other}`"))),
    }
}

/// The default reconstruction network.
pub struct DyProMamba;

/// Passes the preliminary cube straight through; the smallest conforming
/// backbone, useful as a smoke test of the surrounding plumbing.
pub struct IdentityBackbone;

impl Backbone for IdentityBackbone {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn param_specs(&self, _cfg: &ModelConfig) -> Vec<ParamSpec> {
        Vec::new()
    }

    fn forward(
        &self,
        _tape: &mut Tape,
        _bp: &BoundParams,
        _x: VarId,
        prompts: &PromptVars,
        _cfg: &ModelConfig,
    ) -> Result<VarId> {
        Ok(prompts.y3)
    }
}

fn conv_pass_specs(
    prefix: &str,
    cout: usize,
    cin: usize,
    taps: Vec<(usize, usize, f64)>,
) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(
            format!("{prefix}.w"),
            vec![cout, cin, 3, 3],
            Init::ConvPass {
                fan_in: cin * 9,
                taps,
            },
        ),
        ParamSpec::new(format!("{prefix}.b"), vec![cout], Init::Zeros),
    ]
}

fn block_specs(prefix: &str, c: usize, n_state: usize) -> Vec<ParamSpec> {
    let mut s = Vec::new();
    s.push(ParamSpec::new(
        format!("{prefix}.tok.w"),
        vec![c, c],
        Init::He { fan_in: c },
    ));
    s.push(ParamSpec::new(format!("{prefix}.tok.b"), vec![c], Init::Zeros));
    s.extend(conv_specs(&format!("{prefix}.q"), c, c));
    s.extend(conv_specs(&format!("{prefix}.k"), c, c));
    s.extend(conv_specs(&format!("{prefix}.v"), c, c));
    s.extend(ssm_specs(&format!("{prefix}.ssm"), c, n_state));
    // zero-init output projections: each block starts as the identity
    s.extend(conv_specs_zero(&format!("{prefix}.out"), c, c));
    s.extend(conv_specs(&format!("{prefix}.ffn1"), c, c));
    s.extend(conv_specs_zero(&format!("{prefix}.ffn2"), c, c));
    s.push(ParamSpec::new(format!("{prefix}.s1"), vec![1], Init::Const(1.0)));
    s.push(ParamSpec::new(format!("{prefix}.s2"), vec![1], Init::Const(1.0)));
    s
}

impl Backbone for DyProMamba {
    fn name(&self) -> &'static str {
        "dypro"
    }

    fn param_specs(&self, cfg: &ModelConfig) -> Vec<ParamSpec> {
        let (b, c) = (cfg.bands, cfg.b_feat);
        let mut s = Vec::new();
        // channel 0 starts as a pass-through of the RGB mean, end to end:
        // the network opens at the channel-mean answer and learns from there
        s.extend(conv_pass_specs(
            "backbone.dypro.in",
            c,
            3,
            vec![(0, 0, 1.0 / 3.0), (0, 1, 1.0 / 3.0), (0, 2, 1.0 / 3.0)],
        ));
        s.extend(conv_pass_specs("backbone.dypro.y4", c, c + b, vec![(0, 0, 1.0)]));
        s.extend(block_specs("backbone.dypro.enc", c, cfg.n_state));
        s.extend(conv_pass_specs("backbone.dypro.ds", 2 * c, c, vec![(0, 0, 1.0)]));
        for i in 0..cfg.n_blocks - 2 {
            s.extend(block_specs(
                &format!("backbone.dypro.mid{i}"),
                2 * c,
                cfg.n_state,
            ));
        }
        s.extend(conv_pass_specs("backbone.dypro.us", c, 2 * c, vec![(0, 0, 1.0)]));
        s.extend(block_specs("backbone.dypro.dec", c, cfg.n_state));
        s.extend(conv_pass_specs(
            "backbone.dypro.out",
            b,
            c,
            (0..b).map(|bi| (bi, 0, 1.0)).collect(),
        ));
        s
    }

    fn forward(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        x: VarId,
        prompts: &PromptVars,
        cfg: &ModelConfig,
    ) -> Result<VarId> {
        let (h, w) = {
            let s = tape.val(x).shape();
            (s[1], s[2])
        };
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::InvalidArg(format!(
                "spatial dims must be divisible by 4, got {h}x{w}"
            )));
        }
        let xin = conv(tape, bp, "backbone.dypro.in", x, 1)?;
        let cat = tape.concat0(&[xin, prompts.y3])?;
        let y4 = conv(tape, bp, "backbone.dypro.y4", cat, 1)?;
        let enc = prompt_ssm_forward(tape, bp, "backbone.dypro.enc", y4, prompts.p_spe, cfg.n_heads)?;
        let mut mid = conv(tape, bp, "backbone.dypro.ds", enc, 2)?;
        for i in 0..cfg.n_blocks - 2 {
            mid = prompt_ssm_forward(
                tape,
                bp,
                &format!("backbone.dypro.mid{i}"),
                mid,
                prompts.p_spe,
                cfg.n_heads,
            )?;
        }
        let up = tape.upsample2(mid)?;
        let up = conv(tape, bp, "backbone.dypro.us", up, 1)?;
        let dec = prompt_ssm_forward(tape, bp, "backbone.dypro.dec", up, prompts.p_spe, cfg.n_heads)?;
        conv(tape, bp, "backbone.dypro.out", dec, 1)
    }
}

fn conv(tape: &mut Tape, bp: &BoundParams, prefix: &str, x: VarId, stride: usize) -> Result<VarId> {
    tape.conv3x3(
        x,
        bp.get(&format!("{prefix}.w")),
        bp.get(&format!("{prefix}.b")),
        stride,
    )
}

/// Resize the spectral prompt to a per-head channel count and re-normalize
/// its rows.
fn resize_prompt(tape: &mut Tape, p_spe: VarId, target: usize) -> Result<VarId> {
    let cur = tape.val(p_spe).shape()[0];
    if cur == target {
        return Ok(p_spe);
    }
    let resized = tape.bilinear_resize(p_spe, target, target)?;
    let rows = tape.sum_axis(resized, 1)?;
    let safe = tape.add_scalar(rows, 1e-12);
    tape.div(resized, safe)
}

/// One PromptSSM block: prompt-modulated channel attention, a four-direction
/// spatial scan, and a convolutional feed-forward stage, each behind a
/// scaled residual.
pub fn prompt_ssm_forward(
    tape: &mut Tape,
    bp: &BoundParams,
    prefix: &str,
    f_in: VarId,
    p_spe: VarId,
    n_heads: usize,
) -> Result<VarId> {
    let (c, h, w) = {
        let s = tape.val(f_in).shape();
        (s[0], s[1], s[2])
    };
    if c % n_heads != 0 {
        return Err(Error::Config(format!(
            "{prefix}: channels {c} not divisible by heads {n_heads}"
        )));
    }
    let ch = c / n_heads;
    let l = h * w;

    // token projection
    let flat = tape.reshape(f_in, vec![c, l])?;
    let tokens = tape.transpose2(flat)?;
    let proj = tape.matmul(tokens, bp.get(&format!("{prefix}.tok.w")))?;
    let proj = tape.add(proj, bp.get(&format!("{prefix}.tok.b")))?;
    let tback = tape.transpose2(proj)?;
    let tmap = tape.reshape(tback, vec![c, h, w])?;

    let qm = conv(tape, bp, &format!("{prefix}.q"), tmap, 1)?;
    let km = conv(tape, bp, &format!("{prefix}.k"), tmap, 1)?;
    let vm = conv(tape, bp, &format!("{prefix}.v"), tmap, 1)?;

    let prompt = resize_prompt(tape, p_spe, ch)?;
    let mut head_outs = Vec::with_capacity(n_heads);
    for hd in 0..n_heads {
        let (from, to) = (hd * ch, (hd + 1) * ch);
        let tok = |tape: &mut Tape, m: VarId| -> Result<VarId> {
            let s = tape.slice0(m, from, to)?;
            let f = tape.reshape(s, vec![ch, l])?;
            tape.transpose2(f)
        };
        let qh = tok(tape, qm)?;
        let kh = tok(tape, km)?;
        let vh = tok(tape, vm)?;
        let kt = tape.transpose2(kh)?;
        let scores = tape.matmul(kt, qh)?;
        let sm = tape.softmax_axis(scores, 1)?;
        let modulated = tape.matmul(prompt, sm)?;
        let f3 = tape.matmul(vh, modulated)?; // [L, ch]
        let back = tape.transpose2(f3)?;
        head_outs.push(back);
    }
    let attn = if head_outs.len() == 1 {
        head_outs[0]
    } else {
        tape.concat0(&head_outs)?
    };
    let attn_map = tape.reshape(attn, vec![c, h, w])?;

    let ssm_vars = bp.ssm_vars(&format!("{prefix}.ssm"));
    let scanned = multi_direction_scan_tape(tape, attn_map, &ssm_vars)?;
    let projected = conv(tape, bp, &format!("{prefix}.out"), scanned, 1)?;
    let scaled = tape.mul(projected, bp.get(&format!("{prefix}.s1")))?;
    let mid = tape.add(f_in, scaled)?;

    let ffn = conv(tape, bp, &format!("{prefix}.ffn1"), mid, 1)?;
    let ffn = tape.gelu(ffn);
    let ffn = conv(tape, bp, &format!("{prefix}.ffn2"), ffn, 1)?;
    let ffn = tape.mul(ffn, bp.get(&format!("{prefix}.s2")))?;
    tape.add(mid, ffn)
}

/// A configured model: neck plus backbone plus parameter values.
pub struct Model {
    pub cfg: ModelConfig,
    pub backbone: Box<dyn Backbone>,
    pub params: BTreeMap<String, Tensor>,
}

impl Model {
    /// Build from config, backbone taken from the registry.
    pub fn new(cfg: ModelConfig) -> Result<Model> {
        let backbone = backbone_by_name(&cfg.backbone)?;
        Model::with_backbone(cfg, backbone)
    }

    /// Attach an arbitrary conforming backbone; the neck, losses, and
    /// training loop are reused unchanged.
    pub fn with_backbone(mut cfg: ModelConfig, backbone: Box<dyn Backbone>) -> Result<Model> {
        cfg.backbone = backbone.name().to_string();
        cfg.validate()?;
        let specs = Model::param_specs_for(&cfg, backbone.as_ref());
        let params = init_params(&specs, cfg.seed);
        Ok(Model {
            cfg,
            backbone,
            params,
        })
    }

    fn param_specs_for(cfg: &ModelConfig, backbone: &dyn Backbone) -> Vec<ParamSpec> {
        let mut specs = drpn::drpn_specs(cfg.bands, cfg.b_feat, cfg.n_state);
        let bspecs = backbone.param_specs(cfg);
        debug_assert!(
            bspecs.iter().all(|s| s.name.starts_with("backbone.")),
            "backbone params must live under the backbone. prefix"
        );
        specs.extend(bspecs);
        specs
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    /// Forward pass on an existing tape; returns the reconstruction and the
    /// prompt handles. The output contract [B,H,W] is enforced here, so a
    /// misbehaving backbone fails at its first forward.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        x: VarId,
        y_gp: VarId,
    ) -> Result<(VarId, PromptVars)> {
        let (h, w) = {
            let s = tape.val(x).shape();
            (s[1], s[2])
        };
        let prompts = drpn::drpn_forward(tape, bp, x, y_gp, self.cfg.frft_order)?;
        let y_r = self.backbone.forward(tape, bp, x, &prompts, &self.cfg)?;
        let got = tape.val(y_r).shape().to_vec();
        if got != [self.cfg.bands, h, w] {
            return Err(Error::ShapeMismatch {
                op: "backbone forward",
                lhs: got,
                rhs: vec![self.cfg.bands, h, w],
            });
        }
        Ok((y_r, prompts))
    }

    /// Inference: no gradients, output clamped to [0,1].
    pub fn infer(&self, x: &Tensor, y_gp: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, &self.params, false);
        let xv = tape.constant(x.clone());
        let gv = tape.constant(y_gp.clone());
        let (y_r, _) = self.forward_on_tape(&mut tape, &bp, xv, gv)?;
        let mut out = tape.val(y_r).clone();
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(out)
    }
}
