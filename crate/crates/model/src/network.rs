//! Pre-norm transformer encoder and the directed acyclic decoder.
//!
//! The decoder input at vertex `u` is the graph positional embedding `g_u`,
//! plus the token embedding of the glancing token placed there (a masked
//! vertex adds nothing). Decoder self-attention is unmasked. From the final
//! vertex states `V`, transitions are `softmax(Q K^T / sqrt(d))` restricted
//! to later vertices and token distributions are `softmax(V W_P^T)`.

use dagnat_core::glancing::GlancingInput;
use dagnat_core::Dag;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::config::ModelConfig;
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Attention {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct FeedForward {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderLayer {
    norm_attn: Norm,
    attn: Attention,
    norm_ffn: Norm,
    ffn: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderLayer {
    norm_self: Norm,
    self_attn: Attention,
    norm_cross: Norm,
    cross_attn: Attention,
    norm_ffn: Norm,
    ffn: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    token_emb: usize,
    source_pos: usize,
    graph_pos: usize,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Norm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Norm,
    w_q: usize,
    w_k: usize,
    w_p: usize,
}

/// Parameters and their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

/// Log-probability nodes of a decoded graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphNodes {
    /// `L x V` token log-probabilities.
    pub log_p: NodeId,
    /// `L x L` transition log-probabilities.
    pub log_e: NodeId,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    /// Scaled uniform (Glorot) initialization for a `fan_in x fan_out` weight.
    fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> usize {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("valid range");
        let v = Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(self.rng));
        self.store.add(name, v)
    }

    fn embedding(&mut self, name: &str, rows: usize, dim: usize) -> usize {
        let dist = Normal::new(0.0, (dim as f64).powf(-0.5)).expect("valid std");
        let v = Array2::from_shape_simple_fn((rows, dim), || dist.sample(self.rng));
        self.store.add(name, v)
    }

    fn zeros(&mut self, name: &str, dim: usize) -> usize {
        self.store.add(name, Array2::zeros((1, dim)))
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gain: self.store.add(&format!("{name}.gain"), Array2::ones((1, dim))),
            bias: self.zeros(&format!("{name}.bias"), dim),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            wq: self.weight(&format!("{name}.wq"), d, d),
            bq: self.zeros(&format!("{name}.bq"), d),
            wk: self.weight(&format!("{name}.wk"), d, d),
            bk: self.zeros(&format!("{name}.bk"), d),
            wv: self.weight(&format!("{name}.wv"), d, d),
            bv: self.zeros(&format!("{name}.bv"), d),
            wo: self.weight(&format!("{name}.wo"), d, d),
            bo: self.zeros(&format!("{name}.bo"), d),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, hidden: usize) -> FeedForward {
        FeedForward {
            w1: self.weight(&format!("{name}.w1"), d, hidden),
            b1: self.zeros(&format!("{name}.b1"), hidden),
            w2: self.weight(&format!("{name}.w2"), hidden, d),
            b2: self.zeros(&format!("{name}.b2"), d),
        }
    }
}

/// Dropout randomness; `None` runs deterministically.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

impl Model {
    /// Deterministic initialization from `cfg.seed`.
    pub fn init(cfg: ModelConfig) -> Result<Self, ModelError> {
        use rand::SeedableRng;
        cfg.validate()?;
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.model_dim;
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let token_emb = init.embedding("token_emb", cfg.vocab_size, d);
        let source_pos = init.embedding("source_pos", cfg.max_source_len, d);
        let graph_pos = init.embedding("graph_pos", cfg.max_graph_size(), d);
        let encoder = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer {
                norm_attn: init.norm(&format!("enc{i}.norm_attn"), d),
                attn: init.attention(&format!("enc{i}.attn"), d),
                norm_ffn: init.norm(&format!("enc{i}.norm_ffn"), d),
                ffn: init.ffn(&format!("enc{i}.ffn"), d, cfg.ffn_dim),
            })
            .collect();
        let encoder_norm = init.norm("enc.norm", d);
        let decoder = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer {
                norm_self: init.norm(&format!("dec{i}.norm_self"), d),
                self_attn: init.attention(&format!("dec{i}.self_attn"), d),
                norm_cross: init.norm(&format!("dec{i}.norm_cross"), d),
                cross_attn: init.attention(&format!("dec{i}.cross_attn"), d),
                norm_ffn: init.norm(&format!("dec{i}.norm_ffn"), d),
                ffn: init.ffn(&format!("dec{i}.ffn"), d, cfg.ffn_dim),
            })
            .collect();
        let decoder_norm = init.norm("dec.norm", d);
        let w_q = init.weight("w_q", d, d);
        let w_k = init.weight("w_k", d, d);
        let w_p = init.weight("w_p", cfg.vocab_size, d);
        let layout = Layout {
            token_emb,
            source_pos,
            graph_pos,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            w_q,
            w_k,
            w_p,
        };
        Ok(Self {
            cfg,
            params: store,
            layout,
        })
    }

    /// Rebuild a model around loaded parameters, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let mut model = Self::init(cfg)?;
        if model.params.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for i in 0..params.len() {
            let (want, got) = (model.params.name(i), params.name(i));
            if want != got || model.params.value(i).dim() != params.value(i).dim() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} ({got}) does not match the configuration ({want})",
                    i + 1
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    /// `L = lambda * N`, clamped to the graph positional table.
    pub fn graph_size(&self, source_len: usize) -> usize {
        (self.cfg.lambda * source_len).min(self.cfg.max_graph_size())
    }

    /// Encoder states (`N x d`) on a tape.
    pub fn encode_on(&self, t: &mut Tape, source: &[usize], mut rng: DropoutRng) -> Result<NodeId, ModelError> {
        let n = source.len();
        if n == 0 || n > self.cfg.max_source_len {
            return Err(ModelError::Length(format!(
                "source length {n} outside 1..={}",
                self.cfg.max_source_len
            )));
        }
        if let Some(&bad) = source.iter().find(|&&w| w >= self.cfg.vocab_size) {
            return Err(ModelError::Length(format!("token {bad} outside vocabulary")));
        }
        let lay = &self.layout;
        let emb = t.param(lay.token_emb);
        let pos = t.param(lay.source_pos);
        let tok = t.gather(emb, source.iter().map(|&w| Some(w)).collect());
        let at = t.gather(pos, (0..n).map(Some).collect());
        let mut x = t.add(tok, at);
        for layer in &lay.encoder {
            let h = self.norm(t, x, &layer.norm_attn);
            let a = self.attention(t, h, h, &layer.attn);
            let a = self.dropout(t, a, rng.as_deref_mut());
            x = t.add(x, a);
            let h = self.norm(t, x, &layer.norm_ffn);
            let f = self.ffn(t, h, &layer.ffn, rng.as_deref_mut());
            x = t.add(x, f);
        }
        Ok(self.norm(t, x, &lay.encoder_norm))
    }

    /// Decoder over `graph_size` vertices attending to `enc`.
    pub fn decode_on(
        &self,
        t: &mut Tape,
        enc: NodeId,
        graph_size: usize,
        glancing: Option<&[Option<usize>]>,
        mut rng: DropoutRng,
    ) -> Result<GraphNodes, ModelError> {
        if graph_size == 0 || graph_size > self.cfg.max_graph_size() {
            return Err(ModelError::Length(format!(
                "graph size {graph_size} outside 1..={}",
                self.cfg.max_graph_size()
            )));
        }
        let lay = &self.layout;
        let pos = t.param(lay.graph_pos);
        let mut x = t.gather(pos, (0..graph_size).map(Some).collect());
        if let Some(z) = glancing {
            if z.len() != graph_size {
                return Err(ModelError::Length(format!(
                    "glancing input has {} entries for {graph_size} vertices",
                    z.len()
                )));
            }
            if z.iter().any(Option::is_some) {
                let emb = t.param(lay.token_emb);
                let g = t.gather(emb, z.to_vec());
                x = t.add(x, g);
            }
        }
        for layer in &lay.decoder {
            let h = self.norm(t, x, &layer.norm_self);
            let a = self.attention(t, h, h, &layer.self_attn);
            let a = self.dropout(t, a, rng.as_deref_mut());
            x = t.add(x, a);
            let h = self.norm(t, x, &layer.norm_cross);
            let a = self.attention(t, h, enc, &layer.cross_attn);
            let a = self.dropout(t, a, rng.as_deref_mut());
            x = t.add(x, a);
            let h = self.norm(t, x, &layer.norm_ffn);
            let f = self.ffn(t, h, &layer.ffn, rng.as_deref_mut());
            x = t.add(x, f);
        }
        let states = self.norm(t, x, &lay.decoder_norm);
        let wq = t.param(lay.w_q);
        let wk = t.param(lay.w_k);
        let q = t.matmul(states, wq);
        let k = t.matmul(states, wk);
        let scores = t.matmul_bt(q, k);
        let scores = t.scale(scores, 1.0 / (self.cfg.model_dim as f64).sqrt());
        let log_e = t.forward_log_softmax(scores);
        let wp = t.param(lay.w_p);
        let logits = t.matmul_bt(states, wp);
        let log_p = t.log_softmax(logits);
        Ok(GraphNodes { log_p, log_e })
    }

    /// Encoder states for `source` (no dropout).
    pub fn encode(&self, source: &[usize]) -> Result<Array2<f64>, ModelError> {
        let mut t = Tape::new(&self.params);
        let enc = self.encode_on(&mut t, source, None)?;
        Ok(t.value(enc).to_owned())
    }

    /// The graph for precomputed encoder states (no dropout).
    pub fn decode_dag(
        &self,
        encoder_states: &Array2<f64>,
        graph_size: usize,
        glancing: Option<&GlancingInput>,
    ) -> Result<Dag, ModelError> {
        let mut t = Tape::new(&self.params);
        let enc = t.constant(encoder_states.clone());
        let g = self.decode_on(&mut t, enc, graph_size, glancing.map(|g| g.z.as_slice()), None)?;
        t.dag_of(g.log_p, g.log_e)
    }

    /// Encode `source` and decode its graph of size `lambda * N`.
    pub fn dag_for_source(&self, source: &[usize], glancing: Option<&GlancingInput>) -> Result<Dag, ModelError> {
        let mut t = Tape::new(&self.params);
        let enc = self.encode_on(&mut t, source, None)?;
        let l = self.graph_size(source.len());
        let g = self.decode_on(&mut t, enc, l, glancing.map(|g| g.z.as_slice()), None)?;
        t.dag_of(g.log_p, g.log_e)
    }

    fn norm(&self, t: &mut Tape, x: NodeId, n: &Norm) -> NodeId {
        let gain = t.param(n.gain);
        let bias = t.param(n.bias);
        t.layer_norm(x, gain, bias)
    }

    fn linear(&self, t: &mut Tape, x: NodeId, w: usize, b: usize) -> NodeId {
        let w = t.param(w);
        let b = t.param(b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }

    fn attention(&self, t: &mut Tape, query: NodeId, memory: NodeId, a: &Attention) -> NodeId {
        let d = self.cfg.model_dim;
        let heads = self.cfg.num_heads;
        let dh = d / heads;
        let q = self.linear(t, query, a.wq, a.bq);
        let k = self.linear(t, memory, a.wk, a.bk);
        let v = self.linear(t, memory, a.wv, a.bv);
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<NodeId> = (0..heads)
            .map(|h| {
                let (qh, kh, vh) = if heads == 1 {
                    (q, k, v)
                } else {
                    (t.cols(q, h * dh, dh), t.cols(k, h * dh, dh), t.cols(v, h * dh, dh))
                };
                let s = t.matmul_bt(qh, kh);
                let s = t.scale(s, scale);
                let p = t.softmax(s);
                t.matmul(p, vh)
            })
            .collect();
        let o = if heads == 1 { outs[0] } else { t.concat_cols(&outs) };
        self.linear(t, o, a.wo, a.bo)
    }

    fn ffn(&self, t: &mut Tape, x: NodeId, f: &FeedForward, rng: DropoutRng) -> NodeId {
        let h = self.linear(t, x, f.w1, f.b1);
        let h = t.relu(h);
        let y = self.linear(t, h, f.w2, f.b2);
        self.dropout(t, y, rng)
    }

    fn dropout(&self, t: &mut Tape, x: NodeId, rng: DropoutRng) -> NodeId {
        let p = self.cfg.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask = t.value(x).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep });
                t.dropout(x, mask)
            }
            _ => x,
        }
    }
}
