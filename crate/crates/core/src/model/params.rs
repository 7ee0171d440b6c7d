//! Named parameter storage and the index layout of the encoder-decoder.

use std::collections::HashMap;

use rand::Rng;

use super::config::ModelConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Every learnable array, addressed by index or by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    inits: Vec<Init>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), inits: Vec::new(), index: HashMap::new() }
    }

    fn add<R: Rng + ?Sized>(&mut self, name: String, shape: &[usize], init: Init, rng: &mut R) -> usize {
        let t = match init {
            Init::Normal => Tensor::randn(shape, INIT_STD, rng),
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
        };
        let id = self.tensors.len();
        assert!(self.index.insert(name.clone(), id).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.inits.push(init);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Redraws every parameter whose name starts with one of `prefixes`.
    pub fn reinit<R: Rng + ?Sized>(&mut self, prefixes: &[&str], rng: &mut R) {
        for i in 0..self.tensors.len() {
            if prefixes.iter().any(|p| self.names[i].starts_with(p)) {
                let shape = self.tensors[i].shape().to_vec();
                self.tensors[i] = match self.inits[i] {
                    Init::Normal => Tensor::randn(&shape, INIT_STD, rng),
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::ones(&shape),
                };
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            inits: self.inits.clone(),
            index: self.index.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNormIds {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIds {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnIds {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayer {
    pub ln1: LayerNormIds,
    pub attn: AttnIds,
    pub ln2: LayerNormIds,
    pub ffn: FfnIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayer {
    pub ln1: LayerNormIds,
    pub self_attn: AttnIds,
    pub ln2: LayerNormIds,
    pub cross_attn: AttnIds,
    pub ln3: LayerNormIds,
    pub ffn: FfnIds,
}

/// Indices of every parameter in the [`ParamStore`].
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    /// `W^e`: token embedding, also the output projection of both heads.
    pub embed: usize,
    pub enc_pos: usize,
    pub dec_pos: usize,
    pub enc: Vec<EncLayer>,
    pub enc_ln: LayerNormIds,
    pub dec: Vec<DecLayer>,
    pub dec_ln: LayerNormIds,
    pub mlm_dense_w: usize,
    pub mlm_dense_b: usize,
    pub mlm_ln: LayerNormIds,
    pub mlm_bias: usize,
    /// `W^v`, `b^v`
    pub gen_w: usize,
    pub gen_b: usize,
    /// `W^m`, `W^s`, `b^c`, `w^c`
    pub copy_wm: usize,
    pub copy_ws: usize,
    pub copy_bc: usize,
    pub copy_wc: usize,
    /// `w^z`, `w^s`, `b^m`
    pub gate_wz: usize,
    pub gate_ws: usize,
    pub gate_bm: usize,
}

/// Parameter name prefixes of the encoder side (reinitialized by the
/// autoencoding ablation) and of the decoder side including both output heads.
pub const ENCODER_PREFIXES: &[&str] = &["enc.", "mlm."];
pub const DECODER_PREFIXES: &[&str] = &["dec.", "gen.", "copy.", "gate."];

struct Builder<'r, T, R: ?Sized> {
    store: ParamStore<T>,
    rng: &'r mut R,
    h: usize,
    f: usize,
}

impl<T: Scalar, R: Rng + ?Sized> Builder<'_, T, R> {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        self.store.add(name.into(), shape, init, self.rng)
    }

    fn ln(&mut self, p: &str) -> LayerNormIds {
        let h = self.h;
        LayerNormIds { gain: self.add(format!("{p}.g"), &[h], Init::Ones), bias: self.add(format!("{p}.b"), &[h], Init::Zeros) }
    }

    fn attn(&mut self, p: &str) -> AttnIds {
        let h = self.h;
        AttnIds {
            wq: self.add(format!("{p}.wq"), &[h, h], Init::Normal),
            bq: self.add(format!("{p}.bq"), &[h], Init::Zeros),
            wk: self.add(format!("{p}.wk"), &[h, h], Init::Normal),
            bk: self.add(format!("{p}.bk"), &[h], Init::Zeros),
            wv: self.add(format!("{p}.wv"), &[h, h], Init::Normal),
            bv: self.add(format!("{p}.bv"), &[h], Init::Zeros),
            wo: self.add(format!("{p}.wo"), &[h, h], Init::Normal),
            bo: self.add(format!("{p}.bo"), &[h], Init::Zeros),
        }
    }

    fn ffn(&mut self, p: &str) -> FfnIds {
        let (h, f) = (self.h, self.f);
        FfnIds {
            w1: self.add(format!("{p}.w1"), &[h, f], Init::Normal),
            b1: self.add(format!("{p}.b1"), &[f], Init::Zeros),
            w2: self.add(format!("{p}.w2"), &[f, h], Init::Normal),
            b2: self.add(format!("{p}.b2"), &[h], Init::Zeros),
        }
    }
}

pub(crate) fn build<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> (ParamStore<T>, Layout) {
    let h = cfg.hidden;
    let mut b = Builder { store: ParamStore::new(), rng, h, f: cfg.ffn };

    let embed = b.add("embed.token", &[cfg.vocab_size, h], Init::Normal);
    let enc_pos = b.add("enc.pos", &[cfg.max_context, h], Init::Normal);
    let dec_pos = b.add("dec.pos", &[cfg.max_target, h], Init::Normal);

    let enc = (0..cfg.enc_layers)
        .map(|i| EncLayer {
            ln1: b.ln(&format!("enc.{i}.ln1")),
            attn: b.attn(&format!("enc.{i}.attn")),
            ln2: b.ln(&format!("enc.{i}.ln2")),
            ffn: b.ffn(&format!("enc.{i}.ffn")),
        })
        .collect();
    let enc_ln = b.ln("enc.ln");

    let dec = (0..cfg.dec_layers)
        .map(|i| DecLayer {
            ln1: b.ln(&format!("dec.{i}.ln1")),
            self_attn: b.attn(&format!("dec.{i}.self")),
            ln2: b.ln(&format!("dec.{i}.ln2")),
            cross_attn: b.attn(&format!("dec.{i}.cross")),
            ln3: b.ln(&format!("dec.{i}.ln3")),
            ffn: b.ffn(&format!("dec.{i}.ffn")),
        })
        .collect();
    let dec_ln = b.ln("dec.ln");

    let layout = Layout {
        embed,
        enc_pos,
        dec_pos,
        enc,
        enc_ln,
        dec,
        dec_ln,
        mlm_dense_w: b.add("mlm.dense.w", &[h, h], Init::Normal),
        mlm_dense_b: b.add("mlm.dense.b", &[h], Init::Zeros),
        mlm_ln: b.ln("mlm.ln"),
        mlm_bias: b.add("mlm.bias", &[cfg.vocab_size], Init::Zeros),
        gen_w: b.add("gen.wv", &[h, h], Init::Normal),
        gen_b: b.add("gen.bv", &[h], Init::Zeros),
        copy_wm: b.add("copy.wm", &[h, h], Init::Normal),
        copy_ws: b.add("copy.ws", &[h, h], Init::Normal),
        copy_bc: b.add("copy.bc", &[h], Init::Zeros),
        copy_wc: b.add("copy.wc", &[h, 1], Init::Normal),
        gate_wz: b.add("gate.wz", &[h, 1], Init::Normal),
        gate_ws: b.add("gate.ws", &[h, 1], Init::Normal),
        gate_bm: b.add("gate.bm", &[1], Init::Zeros),
    };
    (b.store, layout)
}
