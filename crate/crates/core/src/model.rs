//! Token-level model: embedding, a stack of pre-norm focus layers, and a
//! linear vocabulary head.
//!
//! Each layer normalizes its input before filtering and attention, while
//! the update gate's skip keeps the unnormalized stream. Filter
//! coefficients for every layer are generated from the token embeddings
//! (the layer-0 input), so the pooled summary can be computed once and
//! shared across layers. Parameters live in a `ParamStore` and are bound
//! to a fresh tape for every forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FocusError, Result};
use crate::hypernet::{causal_shift, draw_kernel, draw_mlp, xavier, GlobalConvParams, HyperMLPParams};
use crate::layer::{
    apply_focus, generated_theta, hyper_embedding, layer_norm, FocusConfig, FocusLayerParams,
};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor};

/// One layer's tape-bound view: its norm affines plus the focus params.
pub struct LayerView {
    pub norm_g: Tensor,
    pub norm_b: Tensor,
    pub focus: FocusLayerParams,
}

/// The whole model bound to one tape, plus the (name, leaf) pairs needed
/// to harvest gradients back into the store.
pub struct ModelParams {
    pub embed: Tensor,
    pub gconv: GlobalConvParams,
    pub layers: Vec<LayerView>,
    pub final_norm: Option<(Tensor, Tensor)>,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub binding: Vec<(String, Tensor)>,
}

/// Fill a store with freshly drawn parameters for `cfg`. The draw order
/// is fixed, so a seed pins every value.
pub fn init_model(cfg: &FocusConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (d, v) = (cfg.d, cfg.vocab);

    let embed_dist = Normal::new(0.0, 1.0 / (d as f64).sqrt())
        .map_err(|e| FocusError::Config(format!("embedding init: {e}")))?;
    let embed: Vec<f64> = (0..v * d).map(|_| embed_dist.sample(&mut rng)).collect();
    store.insert("embed.table", &[v, d], embed)?;
    store.insert("hyper.gconv.kernel", &[cfg.l_max, d], draw_kernel(&mut rng, cfg.l_max, d))?;

    for i in 0..cfg.n_layers {
        let lp = |field: &str| format!("layer{i}.{field}");
        store.insert(&lp("norm.g"), &[d], vec![1.0; d])?;
        store.insert(&lp("norm.b"), &[d], vec![0.0; d])?;
        for name in ["q", "k", "v"] {
            store.insert(&lp(name), &[d, cfg.d_att], xavier(&mut rng, d, cfg.d_att, 1.0))?;
        }
        for name in ["w_gamma", "w_phi", "w_h", "u_h"] {
            store.insert(&lp(name), &[d, d], xavier(&mut rng, d, d, 1.0))?;
        }
        for name in ["b_gamma", "b_phi", "b_h"] {
            store.insert(&lp(name), &[d], vec![0.0; d])?;
        }
        if cfg.ablation {
            store.insert(&lp("static_logits"), &[1, d, cfg.bank, 2], vec![0.0; d * cfg.bank * 2])?;
        } else {
            let (w1, b1, w2, b2) = draw_mlp(&mut rng, cfg.o, cfg.hidden, cfg.bank);
            store.insert(&lp("hyper.mlp.w1"), &[cfg.o, cfg.hidden], w1)?;
            store.insert(&lp("hyper.mlp.b1"), &[cfg.hidden], b1)?;
            store.insert(&lp("hyper.mlp.w2"), &[cfg.hidden, 2 * cfg.bank], w2)?;
            store.insert(&lp("hyper.mlp.b2"), &[2 * cfg.bank], b2)?;
        }
    }

    if cfg.n_layers > 0 {
        store.insert("final_norm.g", &[d], vec![1.0; d])?;
        store.insert("final_norm.b", &[d], vec![0.0; d])?;
    }
    store.insert("head.w", &[d, v], xavier(&mut rng, d, v, 0.1))?;
    store.insert("head.b", &[v], vec![0.0; v])?;
    Ok(store)
}

/// Bind every stored parameter to `tape` and assemble the model view.
pub fn bind_model(store: &ParamStore, tape: &Tape, cfg: &FocusConfig) -> Result<ModelParams> {
    let mut binding = Vec::new();
    let mut grab = |name: String| -> Result<Tensor> {
        let t = store.leaf_on(tape, &name)?;
        binding.push((name, t.clone()));
        Ok(t)
    };

    let embed = grab("embed.table".into())?;
    let gconv = GlobalConvParams {
        kernel: grab("hyper.gconv.kernel".into())?,
        squash_lambda: cfg.squash_lambda,
    };
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let lp = |field: &str| format!("layer{i}.{field}");
        let norm_g = grab(lp("norm.g"))?;
        let norm_b = grab(lp("norm.b"))?;
        let q = grab(lp("q"))?;
        let k = grab(lp("k"))?;
        let v = grab(lp("v"))?;
        let w_gamma = grab(lp("w_gamma"))?;
        let w_phi = grab(lp("w_phi"))?;
        let w_h = grab(lp("w_h"))?;
        let u_h = grab(lp("u_h"))?;
        let b_gamma = grab(lp("b_gamma"))?;
        let b_phi = grab(lp("b_phi"))?;
        let b_h = grab(lp("b_h"))?;
        let (mlp, static_logits) = if cfg.ablation {
            (None, Some(grab(lp("static_logits"))?))
        } else {
            let mlp = HyperMLPParams {
                w1: grab(lp("hyper.mlp.w1"))?,
                b1: grab(lp("hyper.mlp.b1"))?,
                w2: grab(lp("hyper.mlp.w2"))?,
                b2: grab(lp("hyper.mlp.b2"))?,
            };
            (Some(mlp), None)
        };
        layers.push(LayerView {
            norm_g,
            norm_b,
            focus: FocusLayerParams {
                q,
                k,
                v,
                w_gamma,
                w_phi,
                w_h,
                u_h,
                b_gamma,
                b_phi,
                b_h,
                mlp,
                static_logits,
            },
        });
    }
    let final_norm = if cfg.n_layers > 0 {
        Some((grab("final_norm.g".into())?, grab("final_norm.b".into())?))
    } else {
        None
    };
    let head_w = grab("head.w".into())?;
    let head_b = grab("head.b".into())?;
    Ok(ModelParams {
        embed,
        gconv,
        layers,
        final_norm,
        head_w,
        head_b,
        binding,
    })
}

/// Run tokens through the stack and return (l, vocab) logits.
pub fn model_forward(tokens: &[usize], mp: &ModelParams, cfg: &FocusConfig) -> Result<Tensor> {
    if tokens.len() != cfg.l {
        return Err(FocusError::Config(format!(
            "expected {} tokens, got {}",
            cfg.l,
            tokens.len()
        )));
    }
    let x0 = mp.embed.embedding_lookup(tokens)?;
    let shared = if cfg.ablation || !cfg.share_hyper_embedding || mp.layers.is_empty() {
        None
    } else {
        Some(hyper_embedding(&x0, &mp.gconv, cfg)?)
    };
    let mut x = x0.clone();
    for lv in &mp.layers {
        let own = if cfg.ablation || shared.is_some() {
            None
        } else {
            Some(hyper_embedding(&x0, &mp.gconv, cfg)?)
        };
        let e = shared.as_ref().or(own.as_ref());
        let theta = causal_shift(&generated_theta(e, &lv.focus, cfg)?)?;
        let xn = layer_norm(&x, &lv.norm_g, &lv.norm_b)?;
        x = apply_focus(&xn, &x, &theta, &lv.focus, cfg)?;
    }
    if let Some((g, b)) = &mp.final_norm {
        x = layer_norm(&x, g, b)?;
    }
    Ok(x.matmul(&mp.head_w)?.add(&mp.head_b)?)
}

/// The pre-shift filter coefficients `layer` generates for this input:
/// shape (nbins, d, bank, 2), every value in (0, 1).
pub fn layer_theta(
    tokens: &[usize],
    mp: &ModelParams,
    cfg: &FocusConfig,
    layer: usize,
) -> Result<Tensor> {
    if layer >= mp.layers.len() {
        return Err(FocusError::Config(format!(
            "layer {layer} out of range: model has {} layers",
            mp.layers.len()
        )));
    }
    if tokens.len() != cfg.l {
        return Err(FocusError::Config(format!(
            "expected {} tokens, got {}",
            cfg.l,
            tokens.len()
        )));
    }
    let x0 = mp.embed.embedding_lookup(tokens)?;
    let e = if cfg.ablation {
        None
    } else {
        Some(hyper_embedding(&x0, &mp.gconv, cfg)?)
    };
    generated_theta(e.as_ref(), &mp.layers[layer].focus, cfg)
}
