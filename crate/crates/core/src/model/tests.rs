use super::*;
use crate::corpus::{mask_context, MaskConfig};
use crate::tokenizer::{BOS, UNK};

fn tiny(vocab: usize, hidden: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        hidden,
        ffn: 2 * hidden,
        heads,
        dropout: 0.0,
        max_context: 16,
        max_target: 8,
        vocab_size: vocab,
    }
}

/// Redraws every parameter (biases and gains included) with a wider spread so
/// the oracle comparisons exercise all terms.
fn scramble<T: Scalar>(model: &mut Model<T>, seed: u64) {
    use rand::Rng;
    let mut rng = keyed_rng(&[seed]);
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = T::lit(rng.gen_range(-0.5..0.5));
        }
    }
}

#[test]
fn encode_base_preset_shape() {
    // the decoder is not needed for this check and would double the footprint
    let cfg = ModelConfig { dec_layers: 0, ..ModelConfig::base(40) };
    let model = Model::<f32>::new(cfg, 1).unwrap();
    let out = model.encode(&[5, 6, 7, 8, 9, 10, 11]).unwrap();
    assert_eq!(out.states.shape(), &[7, 768]);
    assert_eq!(out.mlm_logits.unwrap().shape(), &[7, 40]);
}

#[test]
fn encode_rejects_bad_lengths() {
    let model = Model::<f32>::new(tiny(20, 8, 2), 0).unwrap();
    assert!(model.encode(&[]).is_err());
    assert!(matches!(model.encode(&[5; 17]), Err(Error::TooLong { .. })));
}

#[test]
fn permutation_equivariant_without_positions() {
    let mut model = Model::<f64>::new(tiny(20, 8, 2), 3).unwrap();
    scramble(&mut model, 3);
    let a = [5u32, 9, 7, 12];
    let b = [5u32, 12, 7, 9];
    let with_pos = (model.encode(&a).unwrap().states, model.encode(&b).unwrap().states);
    assert!((0..8).any(|c| (with_pos.0.row(1)[c] - with_pos.1.row(3)[c]).abs() > 1e-6));

    let pos = model.layout.enc_pos;
    model.params_mut().get_mut(pos).data_mut().fill(0.0);
    let ha = model.encode(&a).unwrap().states;
    let hb = model.encode(&b).unwrap().states;
    for (ra, rb) in [(0, 0), (1, 3), (2, 2), (3, 1)] {
        for c in 0..8 {
            assert!((ha.row(ra)[c] - hb.row(rb)[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn eval_passes_are_bit_identical() {
    let model = Model::<f32>::new(ModelConfig::desk(64), 9).unwrap();
    let ctx = [5u32, 6, 7, 20, 33, 7];
    let a = model.encode(&ctx).unwrap();
    let b = model.encode(&ctx).unwrap();
    assert_eq!(a.states.data(), b.states.data());
    let la = model.forward_loss(&ctx, &[7, 8], true, None).unwrap();
    let lb = model.forward_loss(&ctx, &[7, 8], true, None).unwrap();
    assert_eq!(la, lb);
}

#[test]
fn decoder_is_causal() {
    let mut model = Model::<f64>::new(tiny(20, 8, 2), 4).unwrap();
    scramble(&mut model, 4);
    let enc = model.encode(&[5, 6, 7]).unwrap();
    let short = model.decode_states(&[BOS, 9, 10], &enc).unwrap();
    for next in [11u32, 12, 19] {
        let long = model.decode_states(&[BOS, 9, 10, next], &enc).unwrap();
        for r in 0..3 {
            for c in 0..8 {
                assert!((short.row(r)[c] - long.row(r)[c]).abs() < 1e-12);
            }
        }
    }
    let s1 = model.decode_step(&[BOS], &enc).unwrap();
    assert_eq!(s1.len(), 8);
    assert!(model.decode_step(&[], &enc).is_err());
}

#[test]
fn zeroed_cross_attention_ignores_context() {
    let mut model = Model::<f64>::new(tiny(20, 8, 2), 5).unwrap();
    scramble(&mut model, 5);
    let prefix = [BOS, 9, 10];
    let a = model.decode_step(&prefix, &model.encode(&[5, 6, 7]).unwrap()).unwrap();
    let b = model.decode_step(&prefix, &model.encode(&[15, 16, 17, 18]).unwrap()).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));

    for name in ["dec.0.cross.wo", "dec.0.cross.bo"] {
        model.params_mut().by_name_mut(name).unwrap().data_mut().fill(0.0);
    }
    let a = model.decode_step(&prefix, &model.encode(&[5, 6, 7]).unwrap()).unwrap();
    let b = model.decode_step(&prefix, &model.encode(&[15, 16, 17, 18]).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn vocab_distribution_is_zero_on_extra_ids() {
    let model = Model::<f64>::new(tiny(20, 8, 2), 6).unwrap();
    let enc = model.encode(&[5, 6]).unwrap();
    let s = model.decode_step(&[BOS], &enc).unwrap();
    let pv = model.vocab_distribution(&s, 23).unwrap();
    assert_eq!(pv.len(), 23);
    assert!((pv[..20].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(pv[20..].iter().all(|&p| p == 0.0));
}

#[test]
fn vocab_distribution_argmax_matches_direct_evaluation() {
    let h = 8;
    let mut model = Model::<f64>::new(tiny(30, h, 2), 7).unwrap();
    let eye: Vec<f64> = (0..h * h).map(|i| if i / h == i % h { 1.0 } else { 0.0 }).collect();
    model.params_mut().by_name_mut("gen.wv").unwrap().data_mut().copy_from_slice(&eye);
    model.params_mut().by_name_mut("gen.bv").unwrap().data_mut().fill(0.0);
    // unit-norm rows make row r the unique maximizer of <row, row r>
    let we = model.embedding_mut();
    for r in 0..30 {
        let row = we.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    let we = model.embedding().clone();
    for r in [5usize, 17, 29] {
        let s: Vec<f64> = we.row(r).iter().map(|v| v * 40.0).collect();
        let pv = model.vocab_distribution(&s, 30).unwrap();
        let oracle = (0..30)
            .map(|j| (j, we.row(j).iter().zip(&s).map(|(a, b)| a * b).sum::<f64>()))
            .fold((0, f64::NEG_INFINITY), |best, (j, v)| if v > best.1 { (j, v) } else { best })
            .0;
        let got = (0..30).fold(0, |b, j| if pv[j] > pv[b] { j } else { b });
        assert_eq!(oracle, r);
        assert_eq!(got, oracle);
    }
}

#[test]
fn copy_attention_single_and_uniform() {
    let mut model = Model::<f64>::new(tiny(20, 8, 2), 8).unwrap();
    scramble(&mut model, 8);
    let enc = model.encode(&[7]).unwrap();
    let s = model.decode_step(&[BOS], &enc).unwrap();
    let (alpha, z) = model.copy_attention(&s, &enc).unwrap();
    assert_eq!(alpha, vec![1.0]);
    for (a, b) in z.iter().zip(enc.states.row(0)) {
        assert!((a - b).abs() < 1e-12);
    }

    let row = enc.states.row(0).to_vec();
    let same = EncoderOutput { states: Tensor::new(vec![4, 8], row.repeat(4)).unwrap(), mlm_logits: None };
    let (alpha, _) = model.copy_attention(&s, &same).unwrap();
    for a in alpha {
        assert!((a - 0.25).abs() < 1e-12);
    }
}

#[test]
fn copy_attention_matches_formula() {
    let h = 8;
    let mut model = Model::<f64>::new(tiny(20, h, 2), 10).unwrap();
    scramble(&mut model, 10);
    let enc = model.encode(&[5, 9, 12]).unwrap();
    let s = model.decode_step(&[BOS, 6], &enc).unwrap();
    let (alpha, z) = model.copy_attention(&s, &enc).unwrap();

    let p = |n: &str| model.params().by_name(n).unwrap().data().to_vec();
    let (wm, ws, bc, wc) = (p("copy.wm"), p("copy.ws"), p("copy.bc"), p("copy.wc"));
    let proj = |x: &[f64], w: &[f64], j: usize| (0..h).map(|i| x[i] * w[i * h + j]).sum::<f64>();
    let e: Vec<f64> = (0..3)
        .map(|l| {
            let hl = enc.states.row(l);
            (0..h).map(|j| wc[j] * (proj(hl, &wm, j) + proj(&s, &ws, j) + bc[j]).tanh()).sum()
        })
        .collect();
    let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = e.iter().map(|v| (v - mx).exp()).collect();
    let tot: f64 = ex.iter().sum();
    for l in 0..3 {
        assert!((alpha[l] - ex[l] / tot).abs() < 1e-12);
    }
    for j in 0..h {
        let want: f64 = (0..3).map(|l| alpha[l] * enc.states.row(l)[j]).sum();
        assert!((z[j] - want).abs() < 1e-5);
    }
}

#[test]
fn saturated_gate_selects_one_distribution() {
    let mut model = Model::<f64>::new(tiny(20, 8, 2), 11).unwrap();
    let pv = vec![0.5, 0.5, 0.0];
    let pc = vec![0.0, 0.25, 0.75];
    let z = vec![0.1; 8];
    let s = vec![-0.2; 8];
    model.params_mut().by_name_mut("gate.bm").unwrap().data_mut()[0] = 1e4;
    let d = model.mixture(&pv, &pc, &z, &s).unwrap();
    assert_eq!(d.lambda, 1.0);
    assert_eq!(d.p_final, pv);
    model.params_mut().by_name_mut("gate.bm").unwrap().data_mut()[0] = -1e4;
    let d = model.mixture(&pv, &pc, &z, &s).unwrap();
    assert_eq!(d.lambda, 0.0);
    assert_eq!(d.p_final, pc);
}

#[test]
fn step_distribution_is_normalized_with_extra_ids() {
    let model = Model::<f64>::new(tiny(20, 8, 2), 12).unwrap();
    let ctx = [5u32, 20, 7, 21, 20];
    let enc = model.encode(&to_base(&ctx, 20)).unwrap();
    let d = model.step_distribution(&[BOS, 20], &enc, &ctx, 22, true).unwrap();
    assert_eq!(d.p_final.len(), 22);
    assert!((d.p_final.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(d.p_final[20] > 0.0 && d.p_final[21] > 0.0);
    assert!(d.lambda > 0.0 && d.lambda < 1.0);

    let off = model.step_distribution(&[BOS, 20], &enc, &ctx, 22, false).unwrap();
    assert_eq!(off.lambda, 1.0);
    assert_eq!(&off.p_final[20..], &[0.0, 0.0]);
}

#[test]
fn uniform_model_loss_is_log_size() {
    let v = 12;
    let mut model = Model::<f64>::new(tiny(v, 8, 2), 13).unwrap();
    model.embedding_mut().data_mut().fill(0.0);
    model.params_mut().by_name_mut("copy.wc").unwrap().data_mut().fill(0.0);
    // every id appears once, so the copy distribution is uniform too
    let ctx: Vec<u32> = (0..v as u32).collect();
    let target = [5u32, 9, 3, 5];
    for pointer in [true, false] {
        let out = model.forward_loss(&ctx, &target, pointer, None).unwrap();
        assert_eq!(out.nll_per_token.len(), 4);
        for nll in out.nll_per_token {
            assert!((nll - (v as f64).ln()).abs() < 1e-9);
        }
    }
}

#[test]
fn loss_without_pointer_scores_oov_as_unk() {
    let model = Model::<f64>::new(tiny(20, 8, 2), 14).unwrap();
    let ctx = [5u32, 20, 7];
    let a = model.forward_loss(&ctx, &[20, 6], false, None).unwrap();
    let b = model.forward_loss(&ctx, &[UNK, 6], false, None).unwrap();
    assert_eq!(a.nll_per_token[0], b.nll_per_token[0]);
}

#[test]
fn mlm_loss_reported_for_masked_input() {
    let model = Model::<f64>::new(tiny(20, 8, 2), 15).unwrap();
    let ctx = [5u32, 6, 7, 8, 9, 10, 11];
    let masked = mask_context(&ctx, 20, &MaskConfig::default(), 3);
    let out = model.forward_loss(&ctx, &[12], true, Some(&masked)).unwrap();
    let mlm = out.mlm_loss.unwrap();
    // near-uniform logits at init
    assert!((mlm - 20f64.ln()).abs() < 0.1 * 20f64.ln());
}

mod oracle {
    //! Step-by-step f64 evaluation of the generation likelihood, written
    //! against plain nested vectors and sharing no code with the graph.

    use super::*;

    type M = Vec<Vec<f64>>;

    pub struct Weights<'a>(pub &'a Model<f64>);

    impl Weights<'_> {
        fn m(&self, name: &str) -> M {
            let t = self.0.params().by_name(name).unwrap();
            (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
        }
        fn v(&self, name: &str) -> Vec<f64> {
            self.0.params().by_name(name).unwrap().data().to_vec()
        }
    }

    fn lin(x: &M, w: &M, b: Option<&[f64]>) -> M {
        x.iter()
            .map(|row| {
                (0..w[0].len())
                    .map(|j| row.iter().enumerate().map(|(i, a)| a * w[i][j]).sum::<f64>() + b.map_or(0.0, |b| b[j]))
                    .collect()
            })
            .collect()
    }

    fn add(a: &M, b: &M) -> M {
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
    }

    fn ln(x: &M, g: &[f64], b: &[f64]) -> M {
        x.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mu = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                r.iter().enumerate().map(|(i, v)| (v - mu) / (var + 1e-5).sqrt() * g[i] + b[i]).collect()
            })
            .collect()
    }

    pub fn softmax(x: &[f64]) -> Vec<f64> {
        let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
    }

    fn attn(w: &Weights, p: &str, xq: &M, xkv: &M, heads: usize, causal: bool) -> M {
        let q = lin(xq, &w.m(&format!("{p}.wq")), Some(&w.v(&format!("{p}.bq"))));
        let k = lin(xkv, &w.m(&format!("{p}.wk")), Some(&w.v(&format!("{p}.bk"))));
        let v = lin(xkv, &w.m(&format!("{p}.wv")), Some(&w.v(&format!("{p}.bv"))));
        let hsz = q[0].len();
        let d = hsz / heads;
        let mut out = vec![vec![0.0; hsz]; xq.len()];
        for h in 0..heads {
            for t in 0..xq.len() {
                let visible = if causal { t + 1 } else { xkv.len() };
                let scores: Vec<f64> = (0..visible)
                    .map(|l| (0..d).map(|c| q[t][h * d + c] * k[l][h * d + c]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let a = softmax(&scores);
                for c in 0..d {
                    out[t][h * d + c] = (0..visible).map(|l| a[l] * v[l][h * d + c]).sum();
                }
            }
        }
        lin(&out, &w.m(&format!("{p}.wo")), Some(&w.v(&format!("{p}.bo"))))
    }

    fn ffn(w: &Weights, p: &str, x: &M) -> M {
        let h = lin(x, &w.m(&format!("{p}.w1")), Some(&w.v(&format!("{p}.b1"))));
        let h: M = h.into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
        lin(&h, &w.m(&format!("{p}.w2")), Some(&w.v(&format!("{p}.b2"))))
    }

    fn norm(w: &Weights, p: &str, x: &M) -> M {
        ln(x, &w.v(&format!("{p}.g")), &w.v(&format!("{p}.b")))
    }

    fn embed(w: &Weights, ids: &[u32], pos: &str) -> M {
        let e = w.m("embed.token");
        let p = w.m(pos);
        let v = e.len();
        ids.iter()
            .enumerate()
            .map(|(t, &i)| {
                let i = if (i as usize) < v { i as usize } else { UNK as usize };
                e[i].iter().zip(&p[t]).map(|(a, b)| a + b).collect()
            })
            .collect()
    }

    /// `-log P(y_t | y_<t, x)` for each target position of a one-layer model.
    pub fn nll(model: &Model<f64>, context: &[u32], target: &[u32], use_pointer: bool) -> Vec<f64> {
        let w = Weights(model);
        let heads = model.config.heads;
        let vocab = model.config.vocab_size;

        let mut x = embed(&w, context, "enc.pos");
        let h = norm(&w, "enc.0.ln1", &x);
        x = add(&x, &attn(&w, "enc.0.attn", &h, &h, heads, false));
        let h = norm(&w, "enc.0.ln2", &x);
        x = add(&x, &ffn(&w, "enc.0.ffn", &h));
        let mem = norm(&w, "enc.ln", &x);

        let mut input = vec![BOS];
        input.extend_from_slice(&target[..target.len() - 1]);
        let mut y = embed(&w, &input, "dec.pos");
        let h = norm(&w, "dec.0.ln1", &y);
        y = add(&y, &attn(&w, "dec.0.self", &h, &h, heads, true));
        let h = norm(&w, "dec.0.ln2", &y);
        y = add(&y, &attn(&w, "dec.0.cross", &h, &mem, heads, false));
        let h = norm(&w, "dec.0.ln3", &y);
        y = add(&y, &ffn(&w, "dec.0.ffn", &h));
        let s = norm(&w, "dec.ln", &y);

        let e = w.m("embed.token");
        let u = lin(&s, &w.m("gen.wv"), Some(&w.v("gen.bv")));
        let (wm, ws, bc, wc) = (w.m("copy.wm"), w.m("copy.ws"), w.v("copy.bc"), w.v("copy.wc"));
        let (wz, wgs, bm) = (w.v("gate.wz"), w.v("gate.ws"), w.v("gate.bm")[0]);
        let hm = lin(&mem, &wm, None);
        let hs = lin(&s, &ws, Some(&bc));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();

        (0..target.len())
            .map(|t| {
                let logits: Vec<f64> = e.iter().map(|row| dot(row, &u[t])).collect();
                let pv = softmax(&logits);
                let gold = target[t] as usize;
                if !use_pointer {
                    let g = if gold < vocab { gold } else { UNK as usize };
                    return -pv[g].ln();
                }
                let scores: Vec<f64> = (0..context.len())
                    .map(|l| (0..wc.len()).map(|j| wc[j] * (hm[l][j] + hs[t][j]).tanh()).sum())
                    .collect();
                let alpha = softmax(&scores);
                let z: Vec<f64> = (0..s[t].len()).map(|j| (0..context.len()).map(|l| alpha[l] * mem[l][j]).sum()).collect();
                let lam = 1.0 / (1.0 + (-(dot(&wz, &z) + dot(&wgs, &s[t]) + bm)).exp());
                let p_gen = if gold < vocab { pv[gold] } else { 0.0 };
                let p_copy: f64 = context.iter().zip(&alpha).filter(|(&c, _)| c as usize == gold).map(|(_, a)| a).sum();
                -(lam * p_gen + (1.0 - lam) * p_copy).max(PROB_FLOOR).ln()
            })
            .collect()
    }
}

#[test]
fn tiny_model_loss_matches_oracle() {
    let mut model = Model::<f64>::new(tiny(16, 4, 2), 21).unwrap();
    scramble(&mut model, 21);
    // 16 and 17 are extra ids: one copied, one copied twice
    let ctx = [5u32, 16, 8, 17, 9, 17];
    let target = [17u32, 6, 16, 8, 11];
    for pointer in [true, false] {
        let got = model.forward_loss(&ctx, &target, pointer, None).unwrap().nll_per_token;
        let want = oracle::nll(&model, &ctx, &target, pointer);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-5, "pointer={pointer}: {g} vs {w}");
        }
    }
}

#[test]
fn copy_only_gold_is_clamped_without_pointer_mass() {
    let mut model = Model::<f64>::new(tiny(16, 4, 2), 22).unwrap();
    scramble(&mut model, 22);
    // gold 17 is neither in the base vocabulary nor in the context
    let out = model.forward_loss(&[5, 16], &[17], true, None).unwrap();
    assert_eq!(out.clamped, 1);
    assert!((out.nll_per_token[0] + PROB_FLOOR.ln()).abs() < 1e-9);
}

#[test]
fn gradients_reach_every_output_layer_parameter() {
    let mut model = Model::<f64>::new(tiny(16, 8, 2), 23).unwrap();
    scramble(&mut model, 23);
    let ctx = [5u32, 16, 8, 9];
    // 16 is only copyable, 6 is only generable
    let target = [16u32, 6];
    let mut f = Forward::new(&model, true, None);
    let memory = f.encoder(&to_base(&ctx, 16)).unwrap();
    let nll = f.generation_nll(&ctx, &target, true, memory).unwrap();
    let loss = f.graph.sum(nll);
    f.graph.backward(loss).unwrap();
    let grads = f.gradients();
    for name in
        ["embed.token", "gen.wv", "gen.bv", "copy.wc", "copy.wm", "copy.ws", "copy.bc", "gate.wz", "gate.ws", "gate.bm"]
    {
        let g = grads[model.params().id(name).unwrap()].as_ref().unwrap();
        assert!(g.sum_sq() > 0.0, "{name} has no gradient");
    }
}

#[test]
fn embedding_is_tied_to_both_heads() {
    let mut model = Model::<f64>::new(tiny(16, 8, 2), 24).unwrap();
    let enc = model.encode(&[5, 6]).unwrap();
    let s = model.decode_step(&[BOS], &enc).unwrap();
    let pv = model.vocab_distribution(&s, 16).unwrap();

    model.embedding_mut().row_mut(9).iter_mut().for_each(|v| *v += 1.0);
    let pv2 = model.vocab_distribution(&s, 16).unwrap();
    assert_ne!(pv[9], pv2[9]);
    let enc2 = model.encode(&[5, 6]).unwrap();
    assert_eq!(enc.states, enc2.states);
    let mlm = |e: &EncoderOutput<f64>| e.mlm_logits.as_ref().unwrap().row(0)[9];
    assert_ne!(mlm(&enc), mlm(&enc2));
    let enc3 = model.encode(&[9, 6]).unwrap();
    assert_ne!(enc.states.row(0), enc3.states.row(0));
}

#[test]
fn checkpoint_round_trip() {
    let model = Model::<f32>::new(tiny(16, 8, 2), 25).unwrap();
    let meta = vec![("train.step".to_string(), "12".to_string())];
    let extra = vec![("adam.m.gen.bv".to_string(), Tensor::from_f64(&[8], &[0.5; 8]).unwrap())];
    let ck = model.to_checkpoint(&meta, extra.clone());
    let mut buf = Vec::new();
    ck.write(&mut buf).unwrap();
    let back = checkpoint::Checkpoint::read(&mut buf.as_slice()).unwrap();
    assert_eq!(back, ck);
    let (loaded, m, x) = Model::<f32>::from_checkpoint(back).unwrap();
    assert_eq!(loaded.params(), model.params());
    assert_eq!(loaded.config, model.config);
    assert_eq!(m, meta);
    assert_eq!(x, extra);
}

#[test]
fn checkpoint_rejects_damage() {
    let model = Model::<f32>::new(tiny(16, 8, 2), 26).unwrap();
    let mut buf = Vec::new();
    model.to_checkpoint(&[], Vec::new()).write(&mut buf).unwrap();

    let truncated = &buf[..buf.len() - 3];
    assert!(checkpoint::Checkpoint::read(&mut &truncated[..]).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(checkpoint::Checkpoint::read(&mut bad.as_slice()).is_err());

    let mut ck = model.to_checkpoint(&[], Vec::new());
    ck.tensors.retain(|(n, _)| n != "gate.bm");
    assert!(Model::<f32>::from_checkpoint(ck).is_err());

    let mut ck = model.to_checkpoint(&[], Vec::new());
    for e in ck.entries.iter_mut().filter(|(k, _)| k == "vocab_size") {
        e.1 = "17".into();
    }
    let err = Model::<f32>::from_checkpoint(ck).unwrap_err().to_string();
    assert!(err.contains("embed.token"), "{err}");
}

#[test]
fn checkpoint_requires_embedding_tie() {
    let model = Model::<f32>::new(tiny(16, 8, 2), 27).unwrap();
    let mut ck = model.to_checkpoint(&[], Vec::new());
    ck.entries.retain(|(k, _)| k != "tied_output");
    assert!(Model::<f32>::from_checkpoint(ck).is_err());
}
