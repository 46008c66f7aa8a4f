//! Sequence classifier: stacked GRU layers, optional additive attention over
//! time steps, an optional tanh dense layer, and a softmax head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::persist::{ModelBlob, PersistError};

use super::linalg::{
    add_assign, glorot_fill, matvec, matvec_add, matvec_t_add, outer_add, sigmoid, Block,
    BlockAllocator, Tensor2,
};
use super::ops::softmax_in_place;
use super::{NetError, TrainConfig};

pub const SEQUENCE_MODEL_MAGIC: [u8; 4] = *b"SQMD";

/// Static architecture of one sequence classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub recurrent_layers: usize,
    pub attention: bool,
    /// 1 = softmax head only; 2 = one tanh dense layer before the head.
    pub forward_layers: usize,
    pub n_classes: usize,
}

impl ModelShape {
    pub fn from_config(
        config: &TrainConfig,
        input_dim: usize,
        n_classes: usize,
    ) -> Result<Self, NetError> {
        config.validate()?;
        let shape = ModelShape {
            input_dim,
            hidden: config.hidden,
            recurrent_layers: config.recurrent_layers,
            attention: config.attention,
            forward_layers: config.forward_layers,
            n_classes,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.hidden == 0 || self.recurrent_layers == 0 {
            return Err(NetError::InvalidConfig("zero-sized model dimension".into()));
        }
        if self.n_classes < 2 {
            return Err(NetError::InvalidConfig("need at least 2 classes".into()));
        }
        if !(1..=2).contains(&self.forward_layers) {
            return Err(NetError::InvalidConfig("forward_layers must be 1 or 2".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count; the layout must agree exactly.
    pub fn param_count(&self) -> usize {
        let d = self.hidden;
        let mut total = 0;
        for l in 0..self.recurrent_layers {
            let k = if l == 0 { self.input_dim } else { d };
            total += 3 * (d * k + d * d + d);
        }
        if self.attention {
            total += d * d + 2 * d;
        }
        if self.forward_layers == 2 {
            total += d * d + d;
        }
        total + self.n_classes * d + self.n_classes
    }
}

#[derive(Debug, Clone, Copy)]
struct GruBlocks {
    wz: Block,
    uz: Block,
    bz: Block,
    wr: Block,
    ur: Block,
    br: Block,
    wh: Block,
    uh: Block,
    bh: Block,
}

#[derive(Debug, Clone)]
struct Layout {
    gru: Vec<GruBlocks>,
    attention: Option<(Block, Block, Block)>,
    dense: Option<(Block, Block)>,
    head: (Block, Block),
    total: usize,
}

fn build_layout(shape: &ModelShape) -> Layout {
    let d = shape.hidden;
    let mut alloc = BlockAllocator::new();
    let mut gru = Vec::with_capacity(shape.recurrent_layers);
    for l in 0..shape.recurrent_layers {
        let k = if l == 0 { shape.input_dim } else { d };
        gru.push(GruBlocks {
            wz: alloc.alloc(d, k),
            uz: alloc.alloc(d, d),
            bz: alloc.alloc(d, 1),
            wr: alloc.alloc(d, k),
            ur: alloc.alloc(d, d),
            br: alloc.alloc(d, 1),
            wh: alloc.alloc(d, k),
            uh: alloc.alloc(d, d),
            bh: alloc.alloc(d, 1),
        });
    }
    let attention = shape
        .attention
        .then(|| (alloc.alloc(d, d), alloc.alloc(d, 1), alloc.alloc(d, 1)));
    let dense = (shape.forward_layers == 2).then(|| (alloc.alloc(d, d), alloc.alloc(d, 1)));
    let head = (alloc.alloc(shape.n_classes, d), alloc.alloc(shape.n_classes, 1));
    Layout { gru, attention, dense, head, total: alloc.total() }
}

/// Per-sequence dropout masks, fixed across all time steps of one sequence.
/// Entries are inverted-dropout multipliers (0 or 1/(1-p)).
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    /// One mask per recurrent layer, applied to that layer's input vectors.
    pub input: Vec<Vec<f64>>,
    /// One mask per recurrent layer, applied to h_{t-1} inside gate inputs.
    pub recurrent: Vec<Vec<f64>>,
}

/// Attention weights over time steps and the context vector they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

/// Softmax scores plus the attention series when the model has one.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probs: Vec<f64>,
    pub attention: Option<Vec<f64>>,
}

struct LayerCache {
    /// Layer input after the input-dropout mask, one vector per time step.
    xs: Vec<Vec<f64>>,
    /// Masked previous hidden state seen by the gates.
    hhat: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    hc: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

struct AttnCache {
    u: Vec<Vec<f64>>,
    a: Vec<f64>,
}

struct Cache {
    layers: Vec<LayerCache>,
    attn: Option<AttnCache>,
    /// Input of the head: context vector, last hidden state, or dense output.
    feat: Vec<f64>,
    /// Present when a dense layer sits before the head; equals `feat`.
    dense_in: Option<Vec<f64>>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SequenceModel {
    pub shape: ModelShape,
    pub params: Vec<f64>,
    layout: Layout,
}

impl SequenceModel {
    /// Glorot-uniform weights, zero biases, sampled in layout order.
    pub fn new(shape: ModelShape, seed: u64) -> Result<Self, NetError> {
        shape.validate()?;
        let layout = build_layout(&shape);
        debug_assert_eq!(layout.total, shape.param_count());
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = shape.hidden;
        for (l, g) in layout.gru.iter().enumerate() {
            let k = if l == 0 { shape.input_dim } else { d };
            for w in [g.wz, g.wr, g.wh] {
                glorot_fill(&mut rng, w.of_mut(&mut params), k, d);
            }
            for u in [g.uz, g.ur, g.uh] {
                glorot_fill(&mut rng, u.of_mut(&mut params), d, d);
            }
        }
        if let Some((w, _, u)) = layout.attention {
            glorot_fill(&mut rng, w.of_mut(&mut params), d, d);
            glorot_fill(&mut rng, u.of_mut(&mut params), d, 1);
        }
        if let Some((w, _)) = layout.dense {
            glorot_fill(&mut rng, w.of_mut(&mut params), d, d);
        }
        glorot_fill(&mut rng, layout.head.0.of_mut(&mut params), d, shape.n_classes);
        Ok(SequenceModel { shape, params, layout })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_sequence(&self, xs: &[Vec<f64>]) -> Result<(), NetError> {
        if xs.is_empty() {
            return Err(NetError::EmptySequence);
        }
        if let Some(bad) = xs.iter().find(|x| x.len() != self.shape.input_dim) {
            return Err(NetError::ShapeMismatch(format!(
                "feature vector of {} values into a {}-input model",
                bad.len(),
                self.shape.input_dim
            )));
        }
        Ok(())
    }

    fn check_masks(&self, masks: &DropoutMasks) -> Result<(), NetError> {
        let l = self.shape.recurrent_layers;
        if masks.input.len() != l || masks.recurrent.len() != l {
            return Err(NetError::ShapeMismatch(format!(
                "masks for {} layers on a {l}-layer model",
                masks.input.len()
            )));
        }
        for (i, m) in masks.input.iter().enumerate() {
            let k = if i == 0 { self.shape.input_dim } else { self.shape.hidden };
            if m.len() != k || masks.recurrent[i].len() != self.shape.hidden {
                return Err(NetError::ShapeMismatch(format!("bad mask width at layer {i}")));
            }
        }
        Ok(())
    }

    fn forward_cache(
        &self,
        xs: &[Vec<f64>],
        masks: Option<&DropoutMasks>,
    ) -> Result<Cache, NetError> {
        self.check_sequence(xs)?;
        if let Some(m) = masks {
            self.check_masks(m)?;
        }
        let d = self.shape.hidden;
        let t_len = xs.len();
        let mut layers = Vec::with_capacity(self.shape.recurrent_layers);
        let mut current: Vec<Vec<f64>> = xs.to_vec();
        for (l, g) in self.layout.gru.iter().enumerate() {
            let k = if l == 0 { self.shape.input_dim } else { d };
            if let Some(m) = masks {
                for x in current.iter_mut() {
                    for (v, &mm) in x.iter_mut().zip(&m.input[l]) {
                        *v *= mm;
                    }
                }
            }
            let rec_mask = masks.map(|m| m.recurrent[l].as_slice());
            let cache = self.gru_layer_forward(g, k, &current, rec_mask);
            current = cache.h.clone();
            layers.push(cache);
        }

        let top = &layers[self.shape.recurrent_layers - 1].h;
        let (attn, context) = if let Some((wb, bb, ub)) = self.layout.attention {
            let (u, a, c) = attention_internals(
                wb.of(&self.params),
                bb.of(&self.params),
                ub.of(&self.params),
                d,
                top,
            );
            (Some(AttnCache { u, a }), c)
        } else {
            (None, top[t_len - 1].clone())
        };

        let (feat, dense_in) = if let Some((wd, bd)) = self.layout.dense {
            let mut f = vec![0.0; d];
            matvec(wd.of(&self.params), d, d, &context, &mut f);
            add_assign(&mut f, bd.of(&self.params));
            for v in f.iter_mut() {
                *v = v.tanh();
            }
            (f, Some(context))
        } else {
            (context, None)
        };

        let (wo, bo) = self.layout.head;
        let mut probs = vec![0.0; self.shape.n_classes];
        matvec(wo.of(&self.params), self.shape.n_classes, d, &feat, &mut probs);
        add_assign(&mut probs, bo.of(&self.params));
        softmax_in_place(&mut probs);

        Ok(Cache { layers, attn, feat, dense_in, probs })
    }

    fn gru_layer_forward(
        &self,
        g: &GruBlocks,
        k: usize,
        xs: &[Vec<f64>],
        rec_mask: Option<&[f64]>,
    ) -> LayerCache {
        let d = self.shape.hidden;
        let p = &self.params;
        let t_len = xs.len();
        let mut cache = LayerCache {
            xs: xs.to_vec(),
            hhat: Vec::with_capacity(t_len),
            z: Vec::with_capacity(t_len),
            r: Vec::with_capacity(t_len),
            hc: Vec::with_capacity(t_len),
            h: Vec::with_capacity(t_len),
        };
        for t in 0..t_len {
            let hhat: Vec<f64> = if t == 0 {
                vec![0.0; d]
            } else {
                match rec_mask {
                    None => cache.h[t - 1].clone(),
                    Some(m) => cache.h[t - 1].iter().zip(m).map(|(h, mm)| h * mm).collect(),
                }
            };
            let x = &xs[t];

            let mut z = vec![0.0; d];
            matvec(g.wz.of(p), d, k, x, &mut z);
            matvec_add(g.uz.of(p), d, d, &hhat, &mut z);
            add_assign(&mut z, g.bz.of(p));
            for v in z.iter_mut() {
                *v = sigmoid(*v);
            }

            let mut r = vec![0.0; d];
            matvec(g.wr.of(p), d, k, x, &mut r);
            matvec_add(g.ur.of(p), d, d, &hhat, &mut r);
            add_assign(&mut r, g.br.of(p));
            for v in r.iter_mut() {
                *v = sigmoid(*v);
            }

            let rh: Vec<f64> = r.iter().zip(&hhat).map(|(a, b)| a * b).collect();
            let mut hc = vec![0.0; d];
            matvec(g.wh.of(p), d, k, x, &mut hc);
            matvec_add(g.uh.of(p), d, d, &rh, &mut hc);
            add_assign(&mut hc, g.bh.of(p));
            for v in hc.iter_mut() {
                *v = v.tanh();
            }

            let mut h = vec![0.0; d];
            for i in 0..d {
                let hprev = if t == 0 { 0.0 } else { cache.h[t - 1][i] };
                h[i] = (1.0 - z[i]) * hprev + z[i] * hc[i];
            }
            cache.hhat.push(hhat);
            cache.z.push(z);
            cache.r.push(r);
            cache.hc.push(hc);
            cache.h.push(h);
        }
        cache
    }

    fn gru_layer_backward(
        &self,
        g: &GruBlocks,
        k: usize,
        cache: &LayerCache,
        d_h: &[Vec<f64>],
        rec_mask: Option<&[f64]>,
        grad: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let d = self.shape.hidden;
        let p = &self.params;
        let t_len = cache.h.len();
        let mut dxs = vec![vec![0.0; k]; t_len];
        let mut carry = vec![0.0; d];
        let zeros = vec![0.0; d];
        for t in (0..t_len).rev() {
            let z = &cache.z[t];
            let r = &cache.r[t];
            let hc = &cache.hc[t];
            let hhat = &cache.hhat[t];
            let hprev = if t == 0 { &zeros } else { &cache.h[t - 1] };
            let x = &cache.xs[t];

            let mut dh = vec![0.0; d];
            for i in 0..d {
                dh[i] = d_h[t][i] + carry[i];
            }

            let mut dz = vec![0.0; d];
            let mut dhc = vec![0.0; d];
            let mut new_carry = vec![0.0; d];
            for i in 0..d {
                dz[i] = dh[i] * (hc[i] - hprev[i]);
                dhc[i] = dh[i] * z[i];
                new_carry[i] = dh[i] * (1.0 - z[i]);
            }

            // Candidate gate: hc = tanh(Wh x + Uh (r o hhat) + bh).
            let mut dah = vec![0.0; d];
            for i in 0..d {
                dah[i] = dhc[i] * (1.0 - hc[i] * hc[i]);
            }
            outer_add(g.wh.of_mut(grad), d, k, &dah, x);
            add_assign(g.bh.of_mut(grad), &dah);
            let rh: Vec<f64> = r.iter().zip(hhat).map(|(a, b)| a * b).collect();
            outer_add(g.uh.of_mut(grad), d, d, &dah, &rh);
            let mut dg = vec![0.0; d];
            matvec_t_add(g.uh.of(p), d, d, &dah, &mut dg);
            let mut dr = vec![0.0; d];
            let mut dhhat = vec![0.0; d];
            for i in 0..d {
                dr[i] = dg[i] * hhat[i];
                dhhat[i] = dg[i] * r[i];
            }

            // Reset gate: r = sigmoid(Wr x + Ur hhat + br).
            let mut dar = vec![0.0; d];
            for i in 0..d {
                dar[i] = dr[i] * r[i] * (1.0 - r[i]);
            }
            outer_add(g.wr.of_mut(grad), d, k, &dar, x);
            add_assign(g.br.of_mut(grad), &dar);
            outer_add(g.ur.of_mut(grad), d, d, &dar, hhat);
            matvec_t_add(g.ur.of(p), d, d, &dar, &mut dhhat);

            // Update gate: z = sigmoid(Wz x + Uz hhat + bz).
            let mut daz = vec![0.0; d];
            for i in 0..d {
                daz[i] = dz[i] * z[i] * (1.0 - z[i]);
            }
            outer_add(g.wz.of_mut(grad), d, k, &daz, x);
            add_assign(g.bz.of_mut(grad), &daz);
            outer_add(g.uz.of_mut(grad), d, d, &daz, hhat);
            matvec_t_add(g.uz.of(p), d, d, &daz, &mut dhhat);

            matvec_t_add(g.wz.of(p), d, k, &daz, &mut dxs[t]);
            matvec_t_add(g.wr.of(p), d, k, &dar, &mut dxs[t]);
            matvec_t_add(g.wh.of(p), d, k, &dah, &mut dxs[t]);

            // hhat = mask o h_{t-1}; the direct state path carries unmasked.
            match rec_mask {
                None => {
                    for i in 0..d {
                        carry[i] = new_carry[i] + dhhat[i];
                    }
                }
                Some(m) => {
                    for i in 0..d {
                        carry[i] = new_carry[i] + m[i] * dhhat[i];
                    }
                }
            }
        }
        dxs
    }

    /// Inference forward pass: class scores plus the attention series.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<ForwardOutput, NetError> {
        let cache = self.forward_cache(xs, None)?;
        Ok(ForwardOutput {
            probs: cache.probs,
            attention: cache.attn.map(|a| a.a),
        })
    }

    /// Hidden-state matrix (T x d) of the top recurrent layer, inference mode.
    pub fn hidden_states(&self, xs: &[Vec<f64>]) -> Result<Tensor2, NetError> {
        let cache = self.forward_cache(xs, None)?;
        Tensor2::from_rows(&cache.layers[self.shape.recurrent_layers - 1].h)
    }

    /// Class-weighted cross-entropy of one labeled sequence.
    pub fn loss(
        &self,
        xs: &[Vec<f64>],
        label: usize,
        weights: &[f64],
    ) -> Result<f64, NetError> {
        self.check_label(label, weights)?;
        let cache = self.forward_cache(xs, None)?;
        Ok(weights[label] * -cache.probs[label].ln())
    }

    fn check_label(&self, label: usize, weights: &[f64]) -> Result<(), NetError> {
        if label >= self.shape.n_classes {
            return Err(NetError::LabelOutOfRange { label, classes: self.shape.n_classes });
        }
        if weights.len() != self.shape.n_classes {
            return Err(NetError::ShapeMismatch(format!(
                "{} class weights for {} classes",
                weights.len(),
                self.shape.n_classes
            )));
        }
        Ok(())
    }

    /// Loss of one labeled sequence; parameter gradients are accumulated into
    /// `grad` (caller zeroes it). Masks, when given, replay the exact
    /// stochastic forward pass so the gradient matches it.
    pub fn loss_grad(
        &self,
        xs: &[Vec<f64>],
        label: usize,
        weights: &[f64],
        masks: Option<&DropoutMasks>,
        grad: &mut [f64],
    ) -> Result<f64, NetError> {
        self.check_label(label, weights)?;
        if grad.len() != self.params.len() {
            return Err(NetError::ShapeMismatch(format!(
                "gradient buffer of {} for {} parameters",
                grad.len(),
                self.params.len()
            )));
        }
        let cache = self.forward_cache(xs, masks)?;
        let d = self.shape.hidden;
        let t_len = xs.len();
        let w = weights[label];
        let loss = w * -cache.probs[label].ln();

        // Head: d(loss)/d(logit) = w * (p - onehot).
        let mut dlogits = cache.probs.clone();
        for (c, v) in dlogits.iter_mut().enumerate() {
            *v = w * (*v - if c == label { 1.0 } else { 0.0 });
        }
        let (wo, bo) = self.layout.head;
        outer_add(wo.of_mut(grad), self.shape.n_classes, d, &dlogits, &cache.feat);
        add_assign(bo.of_mut(grad), &dlogits);
        let mut dfeat = vec![0.0; d];
        matvec_t_add(wo.of(&self.params), self.shape.n_classes, d, &dlogits, &mut dfeat);

        // Optional dense layer before the head.
        let dcontext = if let (Some((wd, bd)), Some(dense_in)) =
            (self.layout.dense, cache.dense_in.as_ref())
        {
            let mut dpre = vec![0.0; d];
            for i in 0..d {
                dpre[i] = dfeat[i] * (1.0 - cache.feat[i] * cache.feat[i]);
            }
            outer_add(wd.of_mut(grad), d, d, &dpre, dense_in);
            add_assign(bd.of_mut(grad), &dpre);
            let mut dc = vec![0.0; d];
            matvec_t_add(wd.of(&self.params), d, d, &dpre, &mut dc);
            dc
        } else {
            dfeat
        };

        // Context path into the recurrent stack.
        let top = &cache.layers[self.shape.recurrent_layers - 1].h;
        let mut d_h = vec![vec![0.0; d]; t_len];
        if let (Some((wb, bb, ub)), Some(attn)) = (self.layout.attention, cache.attn.as_ref()) {
            // c = sum_t a_t h_t; a = softmax(s); s_t = u_t . u_beat;
            // u_t = tanh(W h_t + b).
            let mut da = vec![0.0; t_len];
            for t in 0..t_len {
                let mut dot = 0.0;
                for i in 0..d {
                    d_h[t][i] += attn.a[t] * dcontext[i];
                    dot += dcontext[i] * top[t][i];
                }
                da[t] = dot;
            }
            let inner: f64 = (0..t_len).map(|t| attn.a[t] * da[t]).sum();
            let ds: Vec<f64> = (0..t_len).map(|t| attn.a[t] * (da[t] - inner)).collect();

            let ub_slice = ub.of(&self.params);
            for t in 0..t_len {
                let u_t = &attn.u[t];
                let mut dpre = vec![0.0; d];
                for i in 0..d {
                    // s_t = u_t . u_beat gives du_t = ds_t * u_beat.
                    let du = ds[t] * ub_slice[i];
                    dpre[i] = du * (1.0 - u_t[i] * u_t[i]);
                }
                outer_add(wb.of_mut(grad), d, d, &dpre, &top[t]);
                add_assign(bb.of_mut(grad), &dpre);
                matvec_t_add(wb.of(&self.params), d, d, &dpre, &mut d_h[t]);
                let ub_grad = ub.of_mut(grad);
                for i in 0..d {
                    ub_grad[i] += ds[t] * u_t[i];
                }
            }
        } else {
            add_assign(&mut d_h[t_len - 1], &dcontext);
        }

        // Recurrent stack, top layer first.
        for l in (0..self.shape.recurrent_layers).rev() {
            let k = if l == 0 { self.shape.input_dim } else { d };
            let rec_mask = masks.map(|m| m.recurrent[l].as_slice());
            let dxs =
                self.gru_layer_backward(&self.layout.gru[l], k, &cache.layers[l], &d_h, rec_mask, grad);
            if l > 0 {
                // Layer input was mask o h_below; chain through the mask.
                d_h = dxs;
                if let Some(m) = masks {
                    for row in d_h.iter_mut() {
                        for (v, &mm) in row.iter_mut().zip(&m.input[l]) {
                            *v *= mm;
                        }
                    }
                }
            }
        }
        Ok(loss)
    }

    pub fn to_blob(&self) -> ModelBlob {
        let s = &self.shape;
        ModelBlob::new(
            &SEQUENCE_MODEL_MAGIC,
            vec![
                s.input_dim as u32,
                s.hidden as u32,
                s.recurrent_layers as u32,
                s.attention as u32,
                s.forward_layers as u32,
                s.n_classes as u32,
            ],
            self.params.clone(),
        )
    }

    pub fn from_blob(blob: &ModelBlob) -> Result<Self, PersistError> {
        if blob.dims.len() != 6 {
            return Err(PersistError::Corrupt(format!(
                "expected 6 shape dims, found {}",
                blob.dims.len()
            )));
        }
        let shape = ModelShape {
            input_dim: blob.dims[0] as usize,
            hidden: blob.dims[1] as usize,
            recurrent_layers: blob.dims[2] as usize,
            attention: blob.dims[3] != 0,
            forward_layers: blob.dims[4] as usize,
            n_classes: blob.dims[5] as usize,
        };
        shape
            .validate()
            .map_err(|e| PersistError::Corrupt(e.to_string()))?;
        if blob.floats.len() != shape.param_count() {
            return Err(PersistError::Corrupt(format!(
                "{} floats for a {}-parameter shape",
                blob.floats.len(),
                shape.param_count()
            )));
        }
        let layout = build_layout(&shape);
        Ok(SequenceModel { shape, params: blob.floats.clone(), layout })
    }
}

// Shared by the model forward pass and the standalone entry point.
fn attention_internals(
    w: &[f64],
    b: &[f64],
    u_beat: &[f64],
    d: usize,
    h: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let t_len = h.len();
    let mut u = Vec::with_capacity(t_len);
    let mut scores = vec![0.0; t_len];
    for t in 0..t_len {
        let mut ut = vec![0.0; d];
        matvec(w, d, d, &h[t], &mut ut);
        add_assign(&mut ut, b);
        for v in ut.iter_mut() {
            *v = v.tanh();
        }
        scores[t] = ut.iter().zip(u_beat).map(|(a, b)| a * b).sum();
        u.push(ut);
    }
    softmax_in_place(&mut scores);
    let mut c = vec![0.0; d];
    for t in 0..t_len {
        for i in 0..d {
            c[i] += scores[t] * h[t][i];
        }
    }
    (u, scores, c)
}

/// Additive attention over the rows of `h`: u_t = tanh(W h_t + b), scores
/// s_t = u_t . u_beat, a = softmax(s), c = sum_t a_t h_t.
pub fn attention_forward(
    w: &[f64],
    b: &[f64],
    u_beat: &[f64],
    h: &Tensor2,
) -> Result<AttentionOutput, NetError> {
    let d = h.cols();
    if w.len() != d * d || b.len() != d || u_beat.len() != d {
        return Err(NetError::ShapeMismatch(format!(
            "attention parameters for hidden size {d}"
        )));
    }
    if h.rows() == 0 {
        return Err(NetError::EmptySequence);
    }
    let rows: Vec<Vec<f64>> = (0..h.rows()).map(|t| h.row(t).to_vec()).collect();
    let (_, a, c) = attention_internals(w, b, u_beat, d, &rows);
    Ok(AttentionOutput { a, c })
}

/// Maximum over parameters of the relative error between the analytic
/// gradient and central finite differences with epsilon = 1e-5.
pub fn grad_check(
    model: &mut SequenceModel,
    xs: &[Vec<f64>],
    label: usize,
    weights: &[f64],
) -> Result<f64, NetError> {
    let mut grad = vec![0.0; model.params.len()];
    model.loss_grad(xs, label, weights, None, &mut grad)?;
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..model.params.len() {
        let orig = model.params[i];
        model.params[i] = orig + eps;
        let lp = model.loss(xs, label, weights)?;
        model.params[i] = orig - eps;
        let lm = model.loss(xs, label, weights)?;
        model.params[i] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        let rel = (grad[i] - numeric).abs() / f64::max(1e-8, grad[i].abs() + numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn shape(
        input: usize,
        hidden: usize,
        layers: usize,
        attention: bool,
        forward: usize,
        classes: usize,
    ) -> ModelShape {
        ModelShape {
            input_dim: input,
            hidden,
            recurrent_layers: layers,
            attention,
            forward_layers: forward,
            n_classes: classes,
        }
    }

    fn random_sequence(seed: u64, t: usize, k: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn minimal_model_has_thirteen_parameters() {
        // One GRU layer (9 params at d=k=1) plus a 2-class head (4 params).
        let s = shape(1, 1, 1, false, 1, 2);
        assert_eq!(s.param_count(), 13);
        let m = SequenceModel::new(s, 0).unwrap();
        assert_eq!(m.param_count(), 13);
    }

    #[test]
    fn param_count_matches_shape_sum_for_default_architecture() {
        let config = TrainConfig::default();
        let s = ModelShape::from_config(&config, 42, 2).unwrap();
        let d = 80;
        let expected = 3 * (d * 42 + d * d + d)
            + 4 * 3 * (d * d + d * d + d)
            + (d * d + 2 * d)
            + (2 * d + 2);
        assert_eq!(s.param_count(), expected);
        assert_eq!(SequenceModel::new(s, 1).unwrap().params.len(), expected);
    }

    #[test]
    fn zero_parameters_give_zero_hidden_states() {
        let mut m = SequenceModel::new(shape(3, 4, 2, false, 1, 2), 5).unwrap();
        for p in m.params.iter_mut() {
            *p = 0.0;
        }
        let xs = random_sequence(1, 6, 3);
        let h = m.hidden_states(&xs).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        // Still a valid softmax output: uniform scores from zero logits.
        let out = m.forward(&xs).unwrap();
        assert_eq!(out.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let m = SequenceModel::new(shape(3, 4, 1, true, 1, 2), 5).unwrap();
        assert!(matches!(m.forward(&[]), Err(NetError::EmptySequence)));
    }

    #[test]
    fn wrong_feature_width_is_rejected() {
        let m = SequenceModel::new(shape(3, 4, 1, true, 1, 2), 5).unwrap();
        assert!(matches!(
            m.forward(&[vec![1.0, 2.0]]),
            Err(NetError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn same_seed_gives_identical_initial_parameters() {
        let s = shape(5, 6, 2, true, 2, 4);
        let a = SequenceModel::new(s, 99).unwrap();
        let b = SequenceModel::new(s, 99).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn attention_on_single_step_is_identity() {
        let m = SequenceModel::new(shape(3, 4, 1, true, 1, 2), 2).unwrap();
        let xs = random_sequence(3, 1, 3);
        let out = m.forward(&xs).unwrap();
        assert_eq!(out.attention.unwrap(), vec![1.0]);
    }

    #[test]
    fn attention_over_identical_states_is_uniform() {
        let d = 3;
        let w = vec![0.0; d * d];
        let b = vec![0.0; d];
        let u = vec![1.0, -0.5, 0.25];
        let h = Tensor2::from_rows(&vec![vec![0.4, -0.2, 0.9]; 5]).unwrap();
        let out = attention_forward(&w, &b, &u, &h).unwrap();
        for a in &out.a {
            assert_abs_diff_eq!(*a, 0.2, epsilon = 1e-12);
        }
        for (c, hv) in out.c.iter().zip(&[0.4, -0.2, 0.9]) {
            assert_abs_diff_eq!(*c, *hv, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_matches_direct_evaluation_of_the_equations() {
        // d=2, H = [[1,0],[0,1]], W = I, b = 0, u_beat = [1,0]:
        // u_1 = [tanh 1, 0], u_2 = [0, tanh 1], scores = [tanh 1, 0].
        let w = vec![1.0, 0.0, 0.0, 1.0];
        let b = vec![0.0, 0.0];
        let u = vec![1.0, 0.0];
        let h = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let out = attention_forward(&w, &b, &u, &h).unwrap();
        let s1 = 1.0f64.tanh();
        let a1 = s1.exp() / (s1.exp() + 1.0);
        assert_abs_diff_eq!(out.a[0], a1, epsilon = 1e-12);
        assert_abs_diff_eq!(out.a[1], 1.0 - a1, epsilon = 1e-12);
        // With this H the context equals the attention vector itself.
        assert_abs_diff_eq!(out.c[0], out.a[0], epsilon = 1e-12);
        assert_abs_diff_eq!(out.c[1], out.a[1], epsilon = 1e-12);
        // Frozen numeric pin for the derived softmax value.
        assert_abs_diff_eq!(out.a[0], 0.6816997421945262, epsilon = 1e-12);
    }

    #[test]
    fn attention_output_invariants_hold_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..25 {
            let d = rng.gen_range(2..6);
            let t = rng.gen_range(1..9);
            let w: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let rows: Vec<Vec<f64>> =
                (0..t).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let h = Tensor2::from_rows(&rows).unwrap();
            let out = attention_forward(&w, &b, &u, &h).unwrap();
            let sum: f64 = out.a.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "trial {trial}: attention sum {sum}");
            assert!(out.a.iter().all(|&a| a >= 0.0));
            // Context stays inside the componentwise convex hull of states.
            for j in 0..d {
                let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                assert!(out.c[j] >= lo - 1e-12 && out.c[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_without_attention() {
        let mut m = SequenceModel::new(shape(3, 4, 1, false, 1, 2), 7).unwrap();
        let xs = random_sequence(11, 3, 3);
        let err = grad_check(&mut m, &xs, 1, &[1.0, 1.0]).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradients_match_finite_differences_with_attention_and_stacking() {
        let mut m = SequenceModel::new(shape(3, 4, 2, true, 1, 2), 13).unwrap();
        let xs = random_sequence(12, 5, 3);
        let err = grad_check(&mut m, &xs, 0, &[1.0, 1.0]).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradients_match_finite_differences_full_model_weighted() {
        let mut m = SequenceModel::new(shape(2, 3, 2, true, 2, 4), 29).unwrap();
        let xs = random_sequence(14, 4, 2);
        let err = grad_check(&mut m, &xs, 2, &[0.5, 1.5, 2.0, 1.0]).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_class_weight_zeroes_every_gradient() {
        let mut m = SequenceModel::new(shape(2, 3, 1, true, 1, 2), 4).unwrap();
        let xs = random_sequence(15, 3, 2);
        let err = grad_check(&mut m, &xs, 0, &[0.0, 1.0]).unwrap();
        assert_eq!(err, 0.0);
        let mut grad = vec![0.0; m.params.len()];
        let loss = m.loss_grad(&xs, 0, &[0.0, 1.0], None, &mut grad).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grad_check_is_deterministic() {
        let s = shape(2, 3, 1, true, 1, 2);
        let xs = random_sequence(16, 3, 2);
        let mut a = SequenceModel::new(s, 8).unwrap();
        let mut b = SequenceModel::new(s, 8).unwrap();
        let ea = grad_check(&mut a, &xs, 1, &[1.0, 2.0]).unwrap();
        let eb = grad_check(&mut b, &xs, 1, &[1.0, 2.0]).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn dropout_masks_scale_gradients_consistently() {
        // Finite differences against the masked loss: the mask is part of the
        // computation graph, so the same check must pass with masks fixed.
        let s = shape(3, 4, 2, true, 1, 2);
        let mut m = SequenceModel::new(s, 21).unwrap();
        let xs = random_sequence(22, 4, 3);
        let masks = DropoutMasks {
            input: vec![vec![2.0, 0.0, 2.0], vec![1.0, 2.0, 0.0, 1.0]],
            recurrent: vec![vec![0.0, 2.0, 2.0, 0.0], vec![2.0, 0.0, 1.0, 2.0]],
        };
        let mut grad = vec![0.0; m.params.len()];
        m.loss_grad(&xs, 1, &[1.0, 1.0], Some(&masks), &mut grad).unwrap();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..m.params.len() {
            let orig = m.params[i];
            let mut scratch = vec![0.0; m.params.len()];
            m.params[i] = orig + eps;
            let lp = m.loss_grad(&xs, 1, &[1.0, 1.0], Some(&masks), &mut scratch).unwrap();
            scratch.iter_mut().for_each(|v| *v = 0.0);
            m.params[i] = orig - eps;
            let lm = m.loss_grad(&xs, 1, &[1.0, 1.0], Some(&masks), &mut scratch).unwrap();
            m.params[i] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let rel =
                (grad[i] - numeric).abs() / f64::max(1e-8, grad[i].abs() + numeric.abs());
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "masked gradient max relative error {worst}");
    }

    #[test]
    fn blob_round_trip_preserves_model() {
        let m = SequenceModel::new(shape(5, 6, 2, true, 2, 4), 33).unwrap();
        let blob = m.to_blob();
        let back = SequenceModel::from_blob(&blob).unwrap();
        assert_eq!(back.shape, m.shape);
        assert_eq!(back.params, m.params);
        let xs = random_sequence(17, 4, 5);
        assert_eq!(m.forward(&xs).unwrap(), back.forward(&xs).unwrap());
    }

    #[test]
    fn corrupt_blob_is_rejected() {
        let m = SequenceModel::new(shape(5, 6, 1, false, 1, 2), 3).unwrap();
        let mut blob = m.to_blob();
        blob.floats.pop();
        assert!(SequenceModel::from_blob(&blob).is_err());
    }
}
