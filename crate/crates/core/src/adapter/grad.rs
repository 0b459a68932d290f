//! Forward pass of the adapter training objective and its exact gradient.
//!
//! Objective on a mini-batch: `L = L_ce + lambda_md * L_md` where the class
//! probabilities are `softmax(scale * x' t'^T)` for adapted image rows `x'`
//! and adapted text rows `t'`. The confidence mask is treated as a constant
//! (it is piecewise constant in the parameters). Residual ratios are fixed.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::loss::{marginal, marginal_entropy_loss};
use super::{normalize_rows, AdapterParams, Mlp};
use crate::msm::PROB_EPS;
use crate::zeroshot::softmax_rows;
use crate::config::TrainConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub ce: f64,
    pub md: f64,
    pub total: f64,
    /// Rows passing the confidence mask.
    pub masked: usize,
}

/// Gradients with the same shapes as the two adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub image: Mlp,
    pub text: Mlp,
}

impl Gradients {
    pub fn is_zero(&self) -> bool {
        self.image.slices().iter().chain(self.text.slices().iter()).all(|s| s.iter().all(|&v| v == 0.0))
    }
}

/// Activations of one adapter side kept for the backward pass.
struct SideCache {
    pre: Array2<f64>,
    act: Array2<f64>,
    norms: Array1<f64>,
    out: Array2<f64>,
}

fn side_forward(x: ArrayView2<f64>, mlp: &Mlp, ratio: f64) -> Result<SideCache> {
    if ratio == 0.0 {
        return Ok(SideCache {
            pre: Array2::zeros((0, 0)),
            act: Array2::zeros((0, 0)),
            norms: Array1::zeros(0),
            out: x.to_owned(),
        });
    }
    let pre = x.dot(&mlp.w1) + &mlp.b1;
    let act = pre.mapv(|v| v.max(0.0));
    let mut mixed = act.dot(&mlp.w2) + &mlp.b2;
    mixed.zip_mut_with(&x, |o, &xi| *o = ratio * *o + (1.0 - ratio) * xi);
    let norms = mixed.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let out = normalize_rows(mixed)?;
    Ok(SideCache { pre, act, norms, out })
}

fn side_backward(
    x: ArrayView2<f64>,
    mlp: &Mlp,
    ratio: f64,
    cache: &SideCache,
    d_out: ArrayView2<f64>,
) -> Mlp {
    let mut g = Mlp::zeros(mlp.input_dim(), mlp.hidden_dim());
    if ratio == 0.0 {
        return g;
    }
    // y = u / |u|  =>  du = (dy - y (y . dy)) / |u|
    let mut d_mixed = d_out.to_owned();
    for (i, mut row) in d_mixed.axis_iter_mut(Axis(0)).enumerate() {
        let y = cache.out.row(i);
        let proj = y.dot(&row);
        row.zip_mut_with(&y, |d, &yi| *d = (*d - yi * proj) / cache.norms[i]);
    }
    let d_mlp = d_mixed * ratio;
    g.w2 = cache.act.t().dot(&d_mlp);
    g.b2 = d_mlp.sum_axis(Axis(0));
    let mut d_pre = d_mlp.dot(&mlp.w2.t());
    d_pre.zip_mut_with(&cache.pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    g.w1 = x.t().dot(&d_pre);
    g.b1 = d_pre.sum_axis(Axis(0));
    g
}

struct Forward {
    img: SideCache,
    txt: SideCache,
    logits: Array2<f64>,
    probs: Array2<f64>,
    mask: Vec<bool>,
    parts: LossParts,
}

fn forward(
    params: &AdapterParams,
    feats: ArrayView2<f64>,
    text: ArrayView2<f64>,
    pseudo: &[usize],
    scale: f64,
    cfg: &TrainConfig,
) -> Result<Forward> {
    let img = side_forward(feats, &params.image, params.alpha)?;
    let txt = side_forward(text, &params.text, params.beta)?;
    let logits = img.out.dot(&txt.out.t()) * scale;
    let probs = softmax_rows(logits.view())?;

    let mask: Vec<bool> = probs
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max) >= cfg.theta)
        .collect();
    let masked = mask.iter().filter(|&&m| m).count();
    let mut ce = 0.0;
    if masked > 0 {
        for (i, row) in logits.rows().into_iter().enumerate().filter(|(i, _)| mask[*i]) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            ce += lse - row[pseudo[i]];
        }
        ce /= masked as f64;
    }
    let md = if cfg.lambda_md > 0.0 {
        marginal_entropy_loss(probs.view())
    } else {
        0.0
    };
    let parts = LossParts {
        ce,
        md,
        total: ce + cfg.lambda_md * md,
        masked,
    };
    Ok(Forward {
        img,
        txt,
        logits,
        probs,
        mask,
        parts,
    })
}

/// Loss of one mini-batch without gradients.
pub fn batch_loss(
    params: &AdapterParams,
    feats: ArrayView2<f64>,
    text: ArrayView2<f64>,
    pseudo: &[usize],
    scale: f64,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    forward(params, feats, text, pseudo, scale, cfg).map(|f| f.parts)
}

/// Loss of one mini-batch and its gradient with respect to every adapter
/// weight and bias.
pub fn loss_and_gradients(
    params: &AdapterParams,
    feats: ArrayView2<f64>,
    text: ArrayView2<f64>,
    pseudo: &[usize],
    scale: f64,
    cfg: &TrainConfig,
) -> Result<(LossParts, Gradients)> {
    let fwd = forward(params, feats, text, pseudo, scale, cfg)?;
    let (b, c) = fwd.probs.dim();
    let mut d_logits = Array2::<f64>::zeros((b, c));

    if fwd.parts.masked > 0 {
        let w = 1.0 / fwd.parts.masked as f64;
        for i in (0..b).filter(|&i| fwd.mask[i]) {
            for k in 0..c {
                d_logits[[i, k]] += w * fwd.probs[[i, k]];
            }
            d_logits[[i, pseudo[i]]] -= w;
        }
    }

    if cfg.lambda_md > 0.0 {
        let h = marginal(fwd.probs.view());
        // d/dh_c of h_c ln max(h_c, eps)
        let dh: Array1<f64> = h.mapv(|hc| if hc >= PROB_EPS { hc.ln() + 1.0 } else { PROB_EPS.ln() });
        let scale_md = cfg.lambda_md / b as f64;
        for i in 0..b {
            let p = fwd.probs.row(i);
            let dot: f64 = p.iter().zip(dh.iter()).map(|(pk, dk)| pk * dk).sum();
            for k in 0..c {
                d_logits[[i, k]] += scale_md * p[k] * (dh[k] - dot);
            }
        }
    }
    debug_assert_eq!(fwd.logits.dim(), d_logits.dim());

    let d_img = d_logits.dot(&fwd.txt.out) * scale;
    let d_txt = d_logits.t().dot(&fwd.img.out) * scale;
    let grads = Gradients {
        image: side_backward(feats, &params.image, params.alpha, &fwd.img, d_img.view()),
        text: side_backward(text, &params.text, params.beta, &fwd.txt, d_txt.view()),
    };
    Ok((fwd.parts, grads))
}
