//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use palm::corpus::{mask_context, split_documents, split_sentences, Fragment, FragmentConfig, MaskConfig};
use palm::decode::{beam_search, greedy, Hypothesis, ModelScorer};
use palm::config::DecodeConfig;
use palm::model::{copy_distribution, to_base, Forward, Model, ModelConfig};
use palm::rng::keyed_rng;
use palm::scalar::Scalar;
use palm::tokenizer::{Vocab, BOS, EOS, MASK, NUM_SPECIALS};
use rand::Rng;

pub fn tiny_config(vocab: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        hidden,
        ffn: 2 * hidden,
        heads: 2,
        dropout: 0.0,
        max_context: 16,
        max_target: 8,
        vocab_size: vocab,
    }
}

/// Every parameter redrawn from U(-spread, spread).
pub fn random_model<T: Scalar>(cfg: ModelConfig, seed: u64, spread: f64) -> Model<T> {
    let mut model = Model::new(cfg, seed).unwrap();
    let mut rng = keyed_rng(&[seed, 77]);
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = T::lit(rng.gen_range(-spread..spread));
        }
    }
    model
}

/// A context over base and extra ids, with every extra id present at least once.
pub fn random_context(rng: &mut impl Rng, vocab: usize, extra: usize, len: usize) -> Vec<u32> {
    let mut ctx: Vec<u32> = (0..len).map(|_| rng.gen_range(NUM_SPECIALS..vocab + extra) as u32).collect();
    for e in 0..extra.min(len) {
        ctx[e] = (vocab + e) as u32;
    }
    ctx
}

// ---- gradients ----

fn full_loss(f: &mut Forward<'_, f64>, ctx: &[u32], target: &[u32], masked: (&[u32], &[usize], &[usize])) -> palm::autograd::Var {
    let vocab = f.model().config.vocab_size;
    let memory = f.encoder(&to_base(ctx, vocab)).unwrap();
    let gen = f.generation_nll(ctx, target, true, memory).unwrap();
    let gen = f.graph.sum(gen);
    let mlm = f.mlm_nll(masked.0, masked.1, masked.2).unwrap();
    let mlm = f.graph.mean(mlm);
    f.graph.add(gen, mlm).unwrap()
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)` over every
/// parameter value of a one-layer model, for the generation NLL with the copy
/// mechanism plus the masked reconstruction loss.
pub fn gradcheck(seed: u64, hidden: usize) -> (f64, usize) {
    let vocab = 14;
    let mut model: Model<f64> = random_model(tiny_config(vocab, hidden), seed, 0.4);
    let mut rng = keyed_rng(&[seed, 5]);
    let ctx = random_context(&mut rng, vocab, 2, 7);
    let mut target = vec![ctx[0], ctx[3], rng.gen_range(5..vocab as u32), (vocab + 1) as u32];
    target.push(EOS);
    let m = mask_context(&to_base(&ctx, vocab), vocab, &MaskConfig { rate: 0.4, ..MaskConfig::default() }, seed);
    let labels: Vec<usize> = m.mask_positions.iter().map(|&p| m.mlm_labels[p].unwrap() as usize).collect();
    let masked = (&m.input_ids[..], &m.mask_positions[..], &labels[..]);

    let analytic = {
        let mut f = Forward::new(&model, true, None);
        let loss = full_loss(&mut f, &ctx, &target, masked);
        f.graph.backward(loss).unwrap();
        f.gradients()
    };
    let eval = |model: &Model<f64>| {
        let mut f = Forward::new(model, false, None);
        let loss = full_loss(&mut f, &ctx, &target, masked);
        f.graph.value(loss).item()
    };
    // fourth-order central stencil
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..model.params().len() {
        for j in 0..model.params().get(i).len() {
            let x = model.params().get(i).data()[j];
            let mut at = |dx: f64| {
                model.params_mut().get_mut(i).data_mut()[j] = x + dx;
                eval(&model)
            };
            let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            model.params_mut().get_mut(i).data_mut()[j] = x;
            let a = analytic[i].as_ref().map_or(0.0, |g| g.data()[j]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

// ---- distribution laws ----

/// Checks one decoding step of a random model; `Err` names the broken law.
pub fn step_laws(seed: u64, vocab: usize, extra: usize, ctx_len: usize, prefix_len: usize) -> Result<(), String> {
    let model: Model<f32> = random_model(tiny_config(vocab, 8), seed, 0.5);
    let mut rng = keyed_rng(&[seed, 11]);
    let ctx = random_context(&mut rng, vocab, extra, ctx_len);
    let ext = vocab + extra;
    let mut prefix = vec![BOS];
    prefix.extend((1..prefix_len).map(|_| rng.gen_range(NUM_SPECIALS..ext) as u32));
    let enc = model.encode_states(&to_base(&ctx, vocab)).map_err(|e| e.to_string())?;
    let d = model.step_distribution(&prefix, &enc, &ctx, ext, true).map_err(|e| e.to_string())?;
    let s_t = model.decode_step(&prefix, &enc).map_err(|e| e.to_string())?;
    let pv = model.vocab_distribution(&s_t, ext).map_err(|e| e.to_string())?;
    let pc = copy_distribution(&d.alpha, &ctx, ext).map_err(|e| e.to_string())?;
    let law = |name: &str, p: &[f32]| -> Result<(), String> {
        let sum: f64 = p.iter().map(|&x| x as f64).sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(format!("{name} sums to {sum}"));
        }
        if let Some(x) = p.iter().find(|x| !(**x >= 0.0)) {
            return Err(format!("{name} has entry {x}"));
        }
        Ok(())
    };
    law("p_final", &d.p_final)?;
    law("copy distribution", &pc)?;
    law("alpha", &d.alpha)?;
    if d.p_final.len() != ext || pc.len() != ext || d.alpha.len() != ctx.len() {
        return Err("wrong lengths".into());
    }
    if !(d.lambda > 0.0 && d.lambda < 1.0) {
        return Err(format!("lambda {}", d.lambda));
    }
    if let Some(x) = pv[vocab..].iter().find(|&&x| x != 0.0) {
        return Err(format!("vocabulary distribution gives {x} to an extra id"));
    }
    Ok(())
}

// ---- fragments ----

/// Oracle for the window starting at each sentence: whole sentences up to
/// `max_len` tokens (a longer first sentence is cut), `m = min(max_context,
/// round(0.8 L))`, `n = min(L - m, max_target)`.
pub fn fragment_violations(text: &str, vocab: &Vocab, cfg: &FragmentConfig, got: &[Fragment]) -> Vec<String> {
    let mut bad = Vec::new();
    let mut expected = Vec::new();
    for (d, doc) in split_documents(text).into_iter().enumerate() {
        let sents: Vec<Vec<u32>> = split_sentences(doc).into_iter().map(|s| vocab.encode(s)).collect();
        let stream: Vec<u32> = sents.concat();
        let mut offset = 0;
        let mut count = 0;
        for s in 0..sents.len() {
            let mut l = 0;
            for x in &sents[s..] {
                if l + x.len() > cfg.max_len {
                    break;
                }
                l += x.len();
            }
            if l == 0 {
                l = sents[s].len().min(cfg.max_len);
            }
            let m = ((0.8 * l as f64).round() as usize).min(cfg.max_context);
            let n = (l - m).min(cfg.max_target);
            if m > 0 && n > 0 {
                expected.push((d, s, stream[offset..offset + m].to_vec(), stream[offset + m..offset + m + n].to_vec()));
                count += 1;
            }
            offset += sents[s].len();
        }
        if count > sents.len() {
            bad.push(format!("doc {d}: {count} fragments for {} sentences", sents.len()));
        }
    }
    if expected.len() != got.len() {
        bad.push(format!("{} fragments, oracle has {}", got.len(), expected.len()));
    }
    for (f, (d, s, c, t)) in got.iter().zip(&expected) {
        let (m, n) = (f.context_ids.len(), f.target_ids.len());
        if m > cfg.max_context || n > cfg.max_target || m + n > cfg.max_len {
            bad.push(format!("doc {d} sentence {s}: m={m} n={n}"));
        }
        if (f.doc_id, f.start_sentence) != (*d, *s) || &f.context_ids != c || &f.target_ids != t {
            bad.push(format!("doc {d} sentence {s}: split or contents differ from the token stream"));
        }
    }
    bad
}

pub fn render_fragments(frags: &[Fragment]) -> String {
    let ids = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
    frags
        .iter()
        .map(|f| format!("{}\t{}\t{}\t{}\n", f.doc_id, f.start_sentence, ids(&f.context_ids), ids(&f.target_ids)))
        .collect()
}

// ---- masking ----

pub struct MaskStats {
    pub exact_count: bool,
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

/// Pooled replacement proportions of `seeds` maskings of a length-`m` context.
pub fn mask_stats(seeds: u64, m: usize, vocab: usize) -> MaskStats {
    let ctx: Vec<u32> = (0..m).map(|i| (NUM_SPECIALS + i % (vocab - NUM_SPECIALS)) as u32).collect();
    let want = (0.15 * m as f64).ceil() as usize;
    let (mut exact, mut total, mut mask, mut random, mut keep) = (true, 0usize, 0usize, 0usize, 0usize);
    for seed in 0..seeds {
        let b = mask_context(&ctx, vocab, &MaskConfig::default(), seed);
        exact &= b.num_masked() == want;
        for &p in &b.mask_positions {
            total += 1;
            match b.input_ids[p] {
                MASK => mask += 1,
                x if x == ctx[p] => keep += 1,
                _ => random += 1,
            }
        }
    }
    let t = total as f64;
    MaskStats { exact_count: exact, mask: mask as f64 / t, random: random as f64 / t, keep: keep as f64 / t }
}

// ---- decoding ----

pub struct DecodeCase {
    pub model: Model<f64>,
    pub context: Vec<u32>,
    pub ext: usize,
}

pub fn decode_case(seed: u64, vocab: usize, extra: usize) -> DecodeCase {
    let model = random_model(tiny_config(vocab, 8), seed, 0.6);
    let mut rng = keyed_rng(&[seed, 23]);
    let len = rng.gen_range(extra.max(1)..10);
    let mut context = random_context(&mut rng, vocab, extra, len);
    if rng.gen_bool(0.5) {
        context.push(EOS);
    }
    DecodeCase { model, context, ext: vocab + extra }
}

pub fn beam_one_is_greedy(c: &DecodeCase, max_len: usize) -> Result<(), String> {
    let s = ModelScorer::new(&c.model, &c.context, c.ext, true).map_err(|e| e.to_string())?;
    let cfg = DecodeConfig { beam: 1, max_len, length_norm: true };
    let b = beam_search(&s, &cfg).map_err(|e| e.to_string())?.swap_remove(0);
    let g = greedy(&s, max_len).map_err(|e| e.to_string())?;
    if b.ids != g.ids || (b.logp - g.logp).abs() > 1e-12 {
        return Err(format!("beam {:?} greedy {:?}", b.ids, g.ids));
    }
    Ok(())
}

/// Best complete sequence by enumeration: ends in `[EOS]` or has `max_len`
/// tokens; highest mean log-probability, then smaller ids, then shorter.
pub fn exhaustive(c: &DecodeCase, max_len: usize) -> (Vec<u32>, f64) {
    let enc = c.model.encode_states(&to_base(&c.context, c.model.config.vocab_size)).unwrap();
    let mut best: Option<(f64, Vec<u32>, f64)> = None;
    let mut stack = vec![(vec![BOS], 0.0f64)];
    while let Some((ids, logp)) = stack.pop() {
        let n = ids.len() - 1;
        if n == max_len || ids.last() == Some(&EOS) {
            let score = logp / n as f64;
            let better = match &best {
                None => true,
                Some((s, b, _)) => score > *s || (score == *s && ids < *b),
            };
            if better {
                best = Some((score, ids, logp));
            }
            continue;
        }
        let d = c.model.step_distribution(&ids, &enc, &c.context, c.ext, true).unwrap();
        for (y, p) in d.p_final.iter().enumerate() {
            if *p > 0.0 {
                let mut next = ids.clone();
                next.push(y as u32);
                stack.push((next, logp + p.ln()));
            }
        }
    }
    let (_, ids, logp) = best.unwrap();
    (ids, logp)
}

pub fn beam_matches_exhaustive(c: &DecodeCase, max_len: usize) -> Result<Hypothesis, String> {
    let s = ModelScorer::new(&c.model, &c.context, c.ext, true).map_err(|e| e.to_string())?;
    let cfg = DecodeConfig { beam: c.ext.pow(max_len as u32), max_len, length_norm: true };
    let got = beam_search(&s, &cfg).map_err(|e| e.to_string())?.swap_remove(0);
    let (ids, logp) = exhaustive(c, max_len);
    if got.ids != ids || (got.logp - logp).abs() > 1e-9 {
        return Err(format!("beam {:?} ({}) exhaustive {:?} ({})", got.ids, got.logp, ids, logp));
    }
    Ok(got)
}

/// Teacher-forced log-probability of a hypothesis' tokens.
pub fn rescore(c: &DecodeCase, h: &Hypothesis) -> f64 {
    -c.model.forward_loss(&c.context, h.tokens(), true, None).unwrap().total_nll()
}
