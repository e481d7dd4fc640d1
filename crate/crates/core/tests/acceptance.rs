//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits nonzero if any asserted criterion fails. Criterion 7 is
//! a diagnostic and never fails the run.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xnlu::autodiff::ParamSet;
use xnlu::cli::commands::{ablate_on, gradcheck_tiny, DEFAULT_ABLATION_MODES};
use xnlu::cli::train::{label_strings, predict_corpus};
use xnlu::cli::{evaluate, train, Checkpoint, RunConfig, TrainOutcome};
use xnlu::data::{
    encode_batch, encode_tokens, extract_spans, generate_aux_targets, generate_synthetic_corpus, span_f1, Grammar,
    LabelMaps, Span, Utterance, Vocab,
};
use xnlu::encoder::EncoderConfig;
use xnlu::explain::{topk_entropy_analysis, EntropyReport, Explainer, Granularity};
use xnlu::model::{Ablation, JointModel, LossWeights, ModelConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- shared

const DESK_CORPUS_SEED: u64 = 7;

fn desk_split() -> (Vec<Utterance>, Vec<Utterance>) {
    let all = generate_synthetic_corpus(DESK_CORPUS_SEED, 250, &Grammar::default_grammar()).unwrap();
    let (train, test) = all.split_at(200);
    (train.to_vec(), test.to_vec())
}

/// Desk-scale recipe: default optimizer settings and widths, batch size 2,
/// 30 epochs.
fn desk_config(ablation: Ablation) -> RunConfig {
    RunConfig {
        batch_size: 2,
        epochs: 30,
        ablation,
        ..RunConfig::default()
    }
}

struct Trained {
    outcome: TrainOutcome,
    elapsed: Duration,
}

fn train_desk(ablation: Ablation, train_set: &[Utterance]) -> Trained {
    let t = Instant::now();
    let outcome = train(&desk_config(ablation), train_set, None).unwrap();
    Trained {
        outcome,
        elapsed: t.elapsed(),
    }
}

fn entropy_on(ckpt: &Checkpoint, data: &[Utterance]) -> EntropyReport {
    let model = ckpt.joint_model().unwrap();
    let ex = Explainer {
        model: &model,
        params: &ckpt.params,
        maps: &ckpt.maps,
        vocab: &ckpt.vocab,
        max_len: ckpt.run.max_len,
        include_outside: false,
    };
    let bundles = ex.extract_corpus(data).unwrap();
    topk_entropy_analysis(&bundles, &[100.0, 10.0, 5.0], Granularity::Flatten).unwrap()
}

fn diff_at(r: &EntropyReport, k: f64) -> f64 {
    r.row(k).unwrap().diff
}

// ------------------------------------------------------------ criterion 1

fn gradient_oracle() -> Check {
    let t = Instant::now();
    let report = gradcheck_tiny(0, 1e-5, 1e-4).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = report.max_rel_error();
    ensure(report.pass && worst <= 1e-4, format!("max relative error {worst:.3e}"))?;
    ensure(secs <= 60.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "max rel error {worst:.2e} over {} tensors in {secs:.2}s",
        report.params.len()
    ))
}

// ------------------------------------------------------------ criterion 2

const FUZZ_TYPES: [&str; 4] = ["city", "day", "song", "artist"];

fn random_bio(rng: &mut ChaCha8Rng) -> Vec<String> {
    let len = rng.gen_range(1..=20);
    let mut out: Vec<String> = Vec::with_capacity(len);
    let mut open: Option<&str> = None;
    for _ in 0..len {
        let roll = rng.gen_range(0..10);
        let tag = match (roll, open) {
            (0..=3, _) => None,
            (4..=6, Some(ty)) => Some(format!("I-{ty}")),
            _ => {
                let ty = FUZZ_TYPES[rng.gen_range(0..FUZZ_TYPES.len())];
                open = Some(ty);
                Some(format!("B-{ty}"))
            }
        };
        match tag {
            Some(t) => out.push(t),
            None => {
                open = None;
                out.push("O".into());
            }
        }
    }
    out
}

/// One row per position: a 1 in the column of the token's slot type, or in
/// the `O` column for non-slot tokens.
fn aux_oracle(tags: &[String], type_names: &[String]) -> Vec<Vec<u8>> {
    tags.iter()
        .map(|tag| {
            let ty = if tag == "O" { "O" } else { &tag[2..] };
            type_names.iter().map(|n| u8::from(n == ty)).collect()
        })
        .collect()
}

fn aux_target_oracle() -> Check {
    let maps = LabelMaps::from_names(["a"], FUZZ_TYPES);
    let names = maps.slot_types.items().to_vec();
    let o = names.iter().position(|n| n == "O").ok_or("no O type")?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut positions = 0;
    for n in 0..1000 {
        let tags = random_bio(&mut rng);
        xnlu::data::validate_bio(&tags).map_err(|e| format!("fuzzer produced invalid BIO: {e}"))?;
        let got = generate_aux_targets(&tags, &maps).map_err(err)?;
        ensure(got == aux_oracle(&tags, &names), format!("sequence {n} {tags:?} disagrees with oracle"))?;
        for row in &got {
            let any_slot = row.iter().enumerate().any(|(c, &v)| c != o && v == 1);
            ensure(row[o] == u8::from(!any_slot), format!("sequence {n}: O column is not the complement"))?;
        }
        positions += tags.len();
    }
    Ok(format!("1000 sequences, {positions} positions match"))
}

// ------------------------------------------------------------ criterion 3

fn tiny_model(maps: &LabelMaps, vocab: &Vocab, ablation: Ablation) -> ModelConfig {
    let enc = EncoderConfig {
        vocab_size: vocab.len(),
        d: 16,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 32,
        max_positions: 32,
        dropout_rate: 0.1,
    };
    let mut cfg = ModelConfig::new(enc, 8, maps);
    cfg.ablation = ablation;
    cfg
}

fn attention_normalization() -> Check {
    let g = Grammar::default_grammar();
    let reference = generate_synthetic_corpus(0, 200, &g).map_err(err)?;
    let maps = LabelMaps::build(&reference).map_err(err)?;
    let vocab = Vocab::build(&reference);
    let mut worst_sum = 0.0f64;
    let mut worst_uniform = 0.0f64;
    let mut rows = 0usize;
    for pass in 0..100u64 {
        let frozen = pass % 2 == 1;
        let ablation = Ablation {
            frozen_uniform: frozen,
            ..Ablation::default()
        };
        let cfg = tiny_model(&maps, &vocab, ablation);
        let params: ParamSet<f32> = cfg.init_params(pass).map_err(err)?;
        let model = JointModel::new(cfg).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + pass);
        let n = rng.gen_range(1..=4);
        let utts: Vec<Vec<String>> = generate_synthetic_corpus(pass + 1, n, &g)
            .map_err(err)?
            .into_iter()
            .map(|u| u.tokens)
            .collect();
        let batch = encode_tokens(&utts, &vocab, 50).map_err(err)?;
        let out = model.run(&params, &batch, Some(&mut rng)).map_err(err)?;
        let att = out.attention.as_ref().ok_or("no attention returned")?;
        let (nt, width) = (att.shape()[1], att.shape()[2]);
        for (b, &len) in out.lengths.iter().enumerate() {
            for t in 0..nt {
                let base = (b * nt + t) * width * width;
                for i in 0..len {
                    let row = &att.data()[base + i * width..base + (i + 1) * width];
                    let sum: f64 = row[..len].iter().map(|&v| v as f64).sum();
                    worst_sum = worst_sum.max((sum - 1.0).abs());
                    ensure(row[len..].iter().all(|&v| v == 0.0), "padding column carries weight")?;
                    if frozen {
                        for &v in &row[..len] {
                            worst_uniform = worst_uniform.max((v as f64 - 1.0 / len as f64).abs());
                        }
                    }
                    rows += 1;
                }
            }
        }
    }
    ensure(worst_sum <= 1e-6, format!("row sum off by {worst_sum:.2e}"))?;
    ensure(worst_uniform <= 1e-7, format!("frozen entry off 1/l by {worst_uniform:.2e}"))?;
    Ok(format!(
        "{rows} rows, max |sum-1| {worst_sum:.1e}, frozen max |w-1/l| {worst_uniform:.1e}"
    ))
}

// ------------------------------------------------------- criteria 4, 5, 7

const BASELINE: &str = "tests/baseline/desk_scale.tsv";
/// Largest tolerated drop below the committed baseline.
const BASELINE_SLACK: f64 = 0.02;

fn baseline_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(BASELINE)
}

fn read_baseline() -> Result<(f64, f64), String> {
    let text = std::fs::read_to_string(baseline_path()).map_err(|e| format!("{BASELINE}: {e}"))?;
    let mut acc = None;
    let mut f1 = None;
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        if let Some((k, v)) = line.split_once('\t') {
            let v: f64 = v.trim().parse().map_err(|_| format!("{BASELINE}: bad value {v:?}"))?;
            match k {
                "train_intent_acc" => acc = Some(v),
                "train_slot_f1" => f1 = Some(v),
                _ => {}
            }
        }
    }
    Ok((acc.ok_or("baseline lacks train_intent_acc")?, f1.ok_or("baseline lacks train_slot_f1")?))
}

fn desk_learning(full: &Trained, train_set: &[Utterance], test_set: &[Utterance]) -> Check {
    let m = evaluate(&full.outcome.checkpoint, train_set).map_err(err)?;
    let t = evaluate(&full.outcome.checkpoint, test_set).map_err(err)?;
    let maps = &full.outcome.checkpoint.maps;
    ensure(maps.intents.len() == 3, format!("{} intents", maps.intents.len()))?;
    ensure(maps.slot_types.len() == 5, format!("{} slot types", maps.slot_types.len()))?;
    let secs = full.elapsed.as_secs_f64();
    if std::env::var_os("XNLU_WRITE_BASELINE").is_some() {
        let text = format!(
            "# desk-scale reference run: corpus seed {DESK_CORPUS_SEED}, 200/50 split, batch 2, 30 epochs\n\
             train_intent_acc\t{:.6}\ntrain_slot_f1\t{:.6}\ntest_intent_acc\t{:.6}\ntest_slot_f1\t{:.6}\n",
            m.intent_accuracy, m.slot.f1, t.intent_accuracy, t.slot.f1
        );
        std::fs::create_dir_all(baseline_path().parent().unwrap()).map_err(err)?;
        std::fs::write(baseline_path(), text).map_err(err)?;
    }
    let (base_acc, base_f1) = read_baseline()?;
    let summary = format!(
        "train acc {:.3} F1 {:.3} (test acc {:.3} F1 {:.3}) in {secs:.1}s; baseline {base_acc:.3}/{base_f1:.3}",
        m.intent_accuracy, m.slot.f1, t.intent_accuracy, t.slot.f1
    );
    ensure(m.intent_accuracy >= 0.95, format!("intent accuracy below 0.95: {summary}"))?;
    ensure(m.slot.f1 >= 0.90, format!("slot F1 below 0.90: {summary}"))?;
    ensure(
        m.intent_accuracy >= base_acc - BASELINE_SLACK && m.slot.f1 >= base_f1 - BASELINE_SLACK,
        format!("regressed against baseline: {summary}"),
    )?;
    ensure(secs <= 600.0, format!("too slow: {summary}"))?;
    Ok(summary)
}

fn entropy_trend(full: &EntropyReport, frozen: &EntropyReport) -> Check {
    let (d5, d10) = (diff_at(full, 5.0), diff_at(full, 10.0));
    let (f5, f10, f100) = (diff_at(frozen, 5.0), diff_at(frozen, 10.0), diff_at(frozen, 100.0));
    let summary = format!(
        "neg-pos at k=5 {d5:+.4}, k=10 {d10:+.4} over {} utterances; frozen {f5:+.1e}/{f10:+.1e}/{f100:+.1e}",
        full.utterances
    );
    ensure(d5 > 0.0 && d10 > 0.0, format!("positive types not lower: {summary}"))?;
    ensure(
        f5.abs() <= 1e-6 && f10.abs() <= 1e-6 && f100.abs() <= 1e-6,
        format!("frozen null not zero: {summary}"),
    )?;
    Ok(summary)
}

fn supervision_contrast(full: &EntropyReport, no_aux: &EntropyReport) -> Check {
    let pairs: Vec<(f64, f64, f64)> = [100.0, 10.0, 5.0]
        .iter()
        .map(|&k| (k, diff_at(full, k), diff_at(no_aux, k)))
        .collect();
    let summary = pairs
        .iter()
        .map(|(k, f, n)| format!("k={k}: {f:+.4} -> {n:+.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    let shrinks = pairs.iter().filter(|(k, _, _)| *k < 100.0).all(|(_, f, n)| n < f);
    if shrinks {
        Ok(format!("gap shrinks without supervision ({summary})"))
    } else {
        Err(format!("gap did not shrink everywhere ({summary})"))
    }
}

// ------------------------------------------------------------ criterion 6

fn ablation_harness(train_set: &[Utterance], test_set: &[Utterance]) -> Check {
    let cfg = RunConfig {
        batch_size: 8,
        epochs: 2,
        ..RunConfig::default()
    };
    let table = ablate_on(&cfg, &DEFAULT_ABLATION_MODES, train_set, Some(test_set)).map_err(err)?;
    let modes: Vec<&str> = table.rows.iter().map(|r| r.mode.as_str()).collect();
    ensure(modes == DEFAULT_ABLATION_MODES, format!("rows {modes:?}"))?;
    for r in &table.rows {
        ensure(r.epochs == cfg.epochs && r.final_loss.is_finite(), format!("{} did not finish", r.mode))?;
        ensure(
            r.param_count == r.expected_param_count,
            format!("{}: {} parameters, formula says {}", r.mode, r.param_count, r.expected_param_count),
        )?;
    }
    let full = &table.rows[0];
    let no_gen = &table.rows[1];
    ensure(no_gen.param_count < full.param_count, "generator removal did not shrink the model")?;

    // Closed form, independent of the model code.
    let maps = LabelMaps::build(train_set).map_err(err)?;
    let vocab = Vocab::build(train_set);
    let (d, dh, ff, layers) = (cfg.d, cfg.d_h, cfg.ffn_dim, cfg.layers);
    let (n_i, n_t, n_s) = (maps.intents.len(), maps.slot_types.len(), maps.bio_labels.len());
    let lin = |i: usize, o: usize| i * o + o;
    let ln = 2 * d;
    let encoder = vocab.len() * d + (cfg.max_len + 1) * d + d + ln
        + layers * (4 * lin(d, d) + ln + lin(d, ff) + lin(ff, d) + ln);
    let intent = lin(d, n_i);
    let slot_base = ln + lin(d, d) + lin(d, n_s);
    let fuse_in = d + n_i;
    let generator = 2 * fuse_in + lin(fuse_in, d) + 3 * lin(d, d) + 2 * d + n_t * (3 * lin(d, dh) + dh + 1);
    let cross = lin(n_t, d) + 3 * lin(d, d);
    let want_full = encoder + intent + generator + cross + slot_base;
    let want_no_gen = encoder + intent + slot_base;
    ensure(
        full.param_count == want_full && no_gen.param_count == want_no_gen,
        format!(
            "closed form {want_full}/{want_no_gen}, model {}/{}",
            full.param_count, no_gen.param_count
        ),
    )?;
    Ok(table
        .rows
        .iter()
        .map(|r| format!("{} {}p F1 {:.2}", r.mode, r.param_count, r.metrics.slot.f1))
        .collect::<Vec<_>>()
        .join("; "))
}

// ------------------------------------------------------------ criterion 8

fn utt(tokens: &str, tags: &str, intent: &str) -> Utterance {
    Utterance::new(
        tokens.split_whitespace().map(String::from).collect(),
        intent,
        tags.split_whitespace().map(String::from).collect(),
    )
    .unwrap()
}

fn zero(ps: &mut ParamSet<f64>, name: &str) {
    ps.get_mut(name).unwrap().data_mut().fill(0.0);
}

fn loss_identities() -> Check {
    let corpus = vec![
        utt("fly to boston", "O O B-city", "book"),
        utt("weather in new york monday", "O O B-city I-city B-day", "weather"),
        utt("play hello", "O B-song", "music"),
    ];
    let maps = LabelMaps::build(&corpus).map_err(err)?;
    let vocab = Vocab::build(&corpus);
    let (n_i, n_t, n_s) = (maps.intents.len(), maps.slot_types.len(), maps.bio_labels.len());
    let mut cfg = tiny_model(&maps, &vocab, Ablation::default());
    cfg.weights = LossWeights {
        intent: 0.7,
        aux: 1.3,
        slot: 2.1,
    };
    let model = JointModel::new(cfg.clone()).map_err(err)?;
    let mut ps: ParamSet<f64> = cfg.init_params(3).map_err(err)?;

    // Weighted sum.
    let batch = encode_batch(&corpus, &maps, &vocab, 50).map_err(err)?;
    let l = model.run(&ps, &batch, None).map_err(err)?.losses.ok_or("no losses")?;
    let aux = l.aux.ok_or("no aux loss")?;
    let want = (0.7 * l.intent + 2.1 * l.slot) + 1.3 * aux;
    ensure(l.total == want, format!("total {} vs {want}", l.total))?;

    // Uniform logits.
    for name in ["intent.w", "intent.b", "slot.out.w", "slot.out.b"] {
        zero(&mut ps, name);
    }
    for t in 0..n_t {
        zero(&mut ps, &format!("gen.type{t}.head.w"));
        zero(&mut ps, &format!("gen.type{t}.head.b"));
    }
    let single = encode_batch(&corpus[1..2], &maps, &vocab, 50).map_err(err)?;
    let l = model.run(&ps, &single, None).map_err(err)?.losses.ok_or("no losses")?;
    let uniform = [
        ("intent", l.intent, (n_i as f64).ln()),
        ("slot", l.slot, (n_s as f64).ln() * 5.0),
        ("aux", l.aux.unwrap_or(f64::NAN), 2f64.ln()),
    ];
    for (what, got, want) in uniform {
        ensure((got - want).abs() <= 1e-12, format!("uniform {what} loss {got} vs {want}"))?;
    }

    // BCE divisor: one type's logit shifted by a constant.
    let shift = 1.5;
    let city = maps.slot_types.id("city").ok_or("no city type")?;
    ps.get_mut(&format!("gen.type{city}.head.b")).unwrap().data_mut()[0] = shift;
    let l = model.run(&ps, &batch, None).map_err(err)?.losses.ok_or("no losses")?;
    let softplus = |x: f64| (1.0 + x.exp()).ln();
    let lengths: Vec<usize> = corpus.iter().map(|u| u.len()).collect();
    let city_pos: usize = corpus
        .iter()
        .map(|u| u.bio_tags.iter().filter(|t| t.ends_with("-city")).count())
        .sum();
    let positions: usize = lengths.iter().sum();
    let divisor = (positions * n_t) as f64;
    let sum = city_pos as f64 * softplus(-shift)
        + (positions - city_pos) as f64 * softplus(shift)
        + (positions * (n_t - 1)) as f64 * 2f64.ln();
    let got = l.aux.ok_or("no aux loss")?;
    ensure((got - sum / divisor).abs() <= 1e-12, format!("aux {got} vs {}", sum / divisor))?;
    Ok(format!(
        "weighted total exact; uniform losses ln{n_i}, 5 ln{n_s}, ln2; BCE divisor {divisor}"
    ))
}

// ------------------------------------------------------------ criterion 9

fn determinism_and_persistence() -> Check {
    let data = generate_synthetic_corpus(11, 40, &Grammar::default_grammar()).map_err(err)?;
    let cfg = RunConfig {
        epochs: 2,
        batch_size: 4,
        d: 16,
        d_h: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 32,
        ..RunConfig::default()
    };
    let a = train(&cfg, &data, None).map_err(err)?.checkpoint;
    let b = train(&cfg, &data, None).map_err(err)?.checkpoint;
    let bytes = a.to_bytes().map_err(err)?;
    ensure(bytes == b.to_bytes().map_err(err)?, "checkpoints differ between identical runs")?;

    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("m.ckpt");
    a.save(&path).map_err(err)?;
    let loaded = Checkpoint::load(&path).map_err(err)?;
    let batch = encode_batch(&data, &a.maps, &a.vocab, a.run.max_len).map_err(err)?;
    let before = a.joint_model().map_err(err)?.run(&a.params, &batch, None).map_err(err)?;
    let after = loaded.joint_model().map_err(err)?.run(&loaded.params, &batch, None).map_err(err)?;
    let same_bits = |x: &[f32], y: &[f32]| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
    ensure(
        same_bits(before.intent_logits.data(), after.intent_logits.data())
            && same_bits(before.slot_logits.data(), after.slot_logits.data()),
        "logits changed across save/load",
    )?;
    let pa = label_strings(&a.maps, &predict_corpus(&a, &a.joint_model().map_err(err)?, &data).map_err(err)?);
    let pb = label_strings(
        &loaded.maps,
        &predict_corpus(&loaded, &loaded.joint_model().map_err(err)?, &data).map_err(err)?,
    );
    ensure(pa == pb, "predictions changed across save/load")?;
    Ok(format!("{} checkpoint bytes identical; reload bit-exact", bytes.len()))
}

// ----------------------------------------------------------- criterion 10

fn spans(tags: &str) -> BTreeSet<Span> {
    extract_spans(&tags.split_whitespace().collect::<Vec<_>>())
}

fn span_f1_oracle() -> Check {
    // Gold / predicted:
    //   1. city(0,1) day(3,3)     / same                  -> 2 TP
    //   2. song(1,2) artist(4,4)  / song(1,1) artist(4,4) -> 1 TP, 1 FP, 1 FN
    //   3. city(0,0)              / day(1,1) day(2,2)     -> 2 FP, 1 FN
    // TP 3, FP 3, FN 2: P = 3/6, R = 3/5, F1 = 2PR/(P+R) = 6/11.
    let gold = [
        spans("B-city I-city O B-day"),
        spans("O B-song I-song O B-artist"),
        spans("B-city O O"),
    ];
    let pred = [
        spans("B-city I-city O B-day"),
        spans("O B-song O O B-artist"),
        spans("O B-day B-day"),
    ];
    let s = span_f1(&gold, &pred).map_err(err)?;
    ensure(
        (s.true_pos, s.false_pos, s.false_neg) == (3, 3, 2),
        format!("counts {}/{}/{}", s.true_pos, s.false_pos, s.false_neg),
    )?;
    let (p, r) = (3.0 / 6.0, 3.0 / 5.0);
    let f1 = 2.0 * p * r / (p + r);
    ensure(
        s.precision == p && s.recall == r && s.f1 == f1,
        format!("P {} R {} F1 {}", s.precision, s.recall, s.f1),
    )?;
    ensure((f1 - 6.0 / 11.0).abs() < 1e-15, "hand value")?;
    Ok(format!("P {p} R {r} F1 {f1:.6}"))
}

// ------------------------------------------------------------------ main

fn run(id: u32, name: &str, hard: bool, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = t.elapsed().as_secs_f64();
    let tag = if hard { "" } else { " (diagnostic)" };
    match &result {
        Ok(msg) => println!("PASS criterion {id:>2} {name}{tag}: {msg} [{secs:.1}s]"),
        Err(msg) => println!("FAIL criterion {id:>2} {name}{tag}: {msg} [{secs:.1}s]"),
    }
    result.is_ok() || !hard
}

fn main() {
    // Cargo passes harness flags such as `--nocapture` or test filters; a
    // listing request gets an empty list so discovery tools do not train.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut ok = true;
    ok &= run(1, "gradient oracle", true, gradient_oracle);
    ok &= run(2, "auxiliary-target oracle", true, aux_target_oracle);
    ok &= run(3, "attention normalization", true, attention_normalization);

    let (train_set, test_set) = desk_split();
    let full = train_desk(Ablation::default(), &train_set);
    let frozen = train_desk(
        Ablation {
            frozen_uniform: true,
            ..Ablation::default()
        },
        &train_set,
    );
    let no_aux = train_desk(
        Ablation {
            no_aux_loss: true,
            ..Ablation::default()
        },
        &train_set,
    );
    let full_entropy = entropy_on(&full.outcome.checkpoint, &test_set);
    let frozen_entropy = entropy_on(&frozen.outcome.checkpoint, &test_set);
    let no_aux_entropy = entropy_on(&no_aux.outcome.checkpoint, &test_set);

    ok &= run(4, "desk-scale learning", true, || desk_learning(&full, &train_set, &test_set));
    ok &= run(5, "entropy trend", true, || entropy_trend(&full_entropy, &frozen_entropy));
    ok &= run(6, "ablation harness", true, || ablation_harness(&train_set, &test_set));
    ok &= run(7, "supervision-dependence contrast", false, || {
        supervision_contrast(&full_entropy, &no_aux_entropy)
    });
    ok &= run(8, "loss identities", true, loss_identities);
    ok &= run(9, "determinism and persistence", true, determinism_and_persistence);
    ok &= run(10, "span-F1 oracle", true, span_f1_oracle);

    if !ok {
        std::process::exit(1);
    }
}
