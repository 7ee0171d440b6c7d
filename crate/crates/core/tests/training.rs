use palm::config::{Ablation, RunConfig, TrainConfig};
use palm::corpus::{corpus_fragments, mask_context, Pair};
use palm::dataset::{parse_supervised, Example};
use palm::eval::total_nll;
use palm::experiment;
use palm::model::{Model, ModelConfig};
use palm::rng::keyed_rng;
use palm::tokenizer::{Vocab, EOS, NUM_SPECIALS};
use palm::training::{StepStats, Trainer};
use palm::{toy, Model32};
use rand::seq::SliceRandom;
use rand::Rng;

fn desk_train(steps: usize, warmup: usize) -> TrainConfig {
    TrainConfig { total_steps: steps, warmup_steps: warmup, ..TrainConfig::desk() }
}

fn toy_vocab() -> (String, Vocab) {
    let text = toy::corpus(21, 200_000);
    let vocab = Vocab::build(&text, 1024).unwrap();
    (text, vocab)
}

#[test]
fn reconstruction_memorizes_repeated_fragments() {
    let (text, vocab) = toy_vocab();
    let frags = corpus_fragments(&text, &vocab, &RunConfig::desk().fragments());
    let v = vocab.len();
    let batch: Vec<_> =
        frags[..8].iter().enumerate().map(|(i, f)| mask_context(&f.context_ids, v, &Default::default(), i as u64)).collect();
    let model = Model32::new(ModelConfig::desk(v), 1).unwrap();
    let mut t = Trainer::new(model, desk_train(200, 20)).unwrap();
    let mut losses = Vec::new();
    for _ in 0..200 {
        losses.push(t.stage1_step(&batch).unwrap().unwrap().loss);
    }
    // near-uniform logits at init
    assert!((losses[0] - (v as f64).ln()).abs() < 0.1 * (v as f64).ln(), "{}", losses[0]);
    let last = *losses.last().unwrap();
    assert!(last <= 0.5 * losses[0], "{} -> {last}", losses[0]);
}

/// Targets are random subsequences of random contexts, so only copying generalizes.
fn copy_pairs(seed: u64, n: usize, vocab: usize) -> Vec<Example> {
    let mut rng = keyed_rng(&[seed, 404]);
    (0..n)
        .map(|_| {
            let context: Vec<u32> = (0..12).map(|_| rng.gen_range(NUM_SPECIALS as u32..vocab as u32)).collect();
            let mut keep: Vec<usize> = (0..12).collect();
            keep.shuffle(&mut rng);
            keep.truncate(5);
            keep.sort_unstable();
            let mut target: Vec<u32> = keep.iter().map(|&i| context[i]).collect();
            target.push(EOS);
            Example { context, target, extra: Vec::new(), reference: String::new() }
        })
        .collect()
}

fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

#[test]
fn pointer_lowers_nll_on_copy_data() {
    let vocab = 200;
    let mut wins = 0;
    for seed in 0..3 {
        let train = copy_pairs(seed, 64, vocab);
        let test = copy_pairs(seed + 100, 32, vocab);
        let mut nll = [0.0; 2];
        for (k, arm) in ["full", "no_pointer"].into_iter().enumerate() {
            let cfg = TrainConfig { seed, ablation: Ablation::arm(arm).unwrap(), ..desk_train(500, 50) };
            let mut t = Trainer::new(Model32::new(ModelConfig::desk(vocab), seed).unwrap(), cfg).unwrap();
            let mut losses = Vec::new();
            t.finetune(&train, |_, s: &StepStats| {
                losses.push(s.loss);
                Ok(())
            })
            .unwrap();
            let ma = moving_average(&losses, 50);
            assert!(ma.last() < ma.first(), "{arm} seed {seed}: loss trend {:?} -> {:?}", ma.first(), ma.last());
            let n = total_nll(&t.model, &test, arm == "full").unwrap();
            nll[k] = n.nll / n.tokens as f64;
        }
        wins += usize::from(nll[0] < nll[1]);
        eprintln!("seed {seed}: pointer {:.4} no pointer {:.4}", nll[0], nll[1]);
    }
    // one-sided sign test over 3 paired seeds: every seed must favour the pointer
    assert_eq!(wins, 3);
}

#[test]
fn finetuning_memorizes_a_small_set() {
    let (_, vocab) = toy_vocab();
    let run = RunConfig::desk();
    let mut mc = ModelConfig::desk(vocab.len());
    mc.max_context = 128;
    mc.max_target = 48;
    let pairs = parse_supervised(&toy::qa_set(5, 16), &vocab, mc.max_context, mc.max_target).unwrap();
    assert_eq!(pairs.len(), 16);
    let cfg = TrainConfig {
        lr: run.finetune.lr,
        warmup_steps: run.finetune.warmup_steps,
        total_steps: run.finetune.steps,
        batch_size: run.finetune.batch_size,
        ..TrainConfig::desk()
    };
    let mut t = Trainer::new(Model32::new(mc, 2).unwrap(), cfg).unwrap();
    t.finetune(&pairs, |_, _| Ok(())).unwrap();
    let n = total_nll(&t.model, &pairs, true).unwrap();
    let per_token = n.nll / n.tokens as f64;
    assert!(per_token < 0.5, "{per_token}");
}

fn tiny_run() -> (RunConfig, Vec<Pair>) {
    let mut cfg = RunConfig::desk();
    cfg.model.hidden = 16;
    cfg.model.ffn = 32;
    cfg.model.heads = 2;
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.train.total_steps = 8;
    cfg.train.stage1_steps = Some(3);
    cfg.train.warmup_steps = 2;
    let text = toy::corpus(8, 20_000);
    let vocab = Vocab::build(&text, 200).unwrap();
    cfg.model.vocab_size = vocab.len();
    let pairs = corpus_fragments(&text, &vocab, &cfg.fragments()).iter().map(Pair::from).collect();
    (cfg, pairs)
}

fn pretrained(cfg: &RunConfig, arm: &str, pairs: &[Pair], until: usize) -> Model32 {
    let c = experiment::arm_config(cfg, arm).unwrap();
    let mut t = Trainer::new(Model::new(c.model.clone(), c.train.seed).unwrap(), c.train.clone()).unwrap();
    t.pretrain(pairs, until, |_, _| Ok(())).unwrap();
    palm::training::finish_pretraining(&mut t.model, &c.train);
    t.model
}

fn differing(a: &Model32, b: &Model32) -> Vec<String> {
    a.params()
        .iter()
        .zip(b.params().iter())
        .filter(|((_, x), (_, y))| x != y)
        .map(|((n, _), _)| n.to_string())
        .collect()
}

#[test]
fn no_pointer_touches_only_the_copy_layer() {
    let (cfg, pairs) = tiny_run();
    // identical through the reconstruction stage
    assert!(differing(&pretrained(&cfg, "full", &pairs, 3), &pretrained(&cfg, "no_pointer", &pairs, 3)).is_empty());
    let init = Model32::new(cfg.model.clone(), cfg.train.seed).unwrap();
    let off = pretrained(&cfg, "no_pointer", &pairs, 8);
    let moved = differing(&init, &off);
    assert!(moved.iter().all(|n| !n.starts_with("copy.") && !n.starts_with("gate.")), "{moved:?}");
    assert!(moved.iter().any(|n| n.starts_with("dec.")));
}

#[test]
fn no_autoencoding_skips_reconstruction() {
    let (cfg, pairs) = tiny_run();
    let c = experiment::arm_config(&cfg, "no_autoencoding").unwrap();
    let mut t = Trainer::new(Model::new(c.model.clone(), c.train.seed).unwrap(), c.train.clone()).unwrap();
    let mut stats = Vec::new();
    t.pretrain(&pairs, 8, |_, s| {
        stats.push(s.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(stats.len(), 8);
    assert!(stats.iter().all(|s| s.gen_loss.is_some() && s.mlm_loss.is_none()));
    // the reconstruction head never receives a gradient
    let init = Model32::new(c.model.clone(), c.train.seed).unwrap();
    assert!(differing(&init, &t.model).iter().all(|n| !n.starts_with("mlm.")));
}

#[test]
fn no_autoregression_keeps_the_encoder() {
    let (cfg, pairs) = tiny_run();
    let full = pretrained(&cfg, "full", &pairs, 8);
    let off = pretrained(&cfg, "no_autoregression", &pairs, 8);
    let diff = differing(&full, &off);
    assert!(!diff.is_empty());
    assert!(diff.iter().all(|n| palm::model::DECODER_PREFIXES.iter().any(|p| n.starts_with(p))), "{diff:?}");
}
