use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use comatch_core::data::{
    answer_letter, build_vocab, encode_example, encode_tokenized, load_embeddings, load_race_dir,
    RaceArticle, Sequence, Subset, TokenizedExample, UNK_TOKEN,
};
use comatch_core::model::{predict as choose, TinyInstance, Variant, GRADCHECK_TOLERANCE};
use comatch_core::tensor::GradientFault;
use comatch_core::train::{
    evaluate, load_checkpoint, run_forward, save_checkpoint, score_example, train as fit,
    write_metrics_line, TrainConfig,
};
use comatch_core::{Checkpoint, Error, Matrix, Result};
use serde_json::json;

use crate::report;
use crate::settings::{announce, resolve, Overrides};
use crate::{
    EvalArgs, FaultArg, GradcheckArgs, InspectArgs, PredictArgs, ShapeArgs, TrainArgs, EXIT_CHECK,
};

fn shape_overrides(config: Option<&Path>, shape: &ShapeArgs) -> Result<Overrides> {
    let mut o = Overrides::load(config)?;
    o.push("d", shape.d);
    o.push("l", shape.l);
    Ok(o)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

/// Checkpoint plus the config it runs under after applying overrides.
fn open_checkpoint(path: &Path, overrides: &Overrides) -> Result<(Checkpoint, TrainConfig)> {
    let ckpt: Checkpoint = load_checkpoint(path)?;
    let config = resolve(&ckpt.config, overrides, true)?;
    Ok((ckpt, config))
}

pub fn train(a: &TrainArgs) -> Result<u8> {
    let mut o = shape_overrides(a.config.config.as_deref(), &a.shape)?;
    o.push("lr", a.lr);
    o.push("epochs", a.epochs);
    o.push("batch", a.batch);
    o.push("seed", a.seed);
    o.push("variant", a.variant.map(|v| v.name()));
    o.push("trainable_emb", a.trainable_emb.then_some(true));
    o.push("clip", a.clip);
    o.push("dropout", a.dropout);
    let config = resolve(&TrainConfig::default(), &o, false)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".metrics.jsonl");
        PathBuf::from(p)
    });
    announce(
        &config,
        &[
            ("data", show(&a.data)),
            ("emb", show(&a.emb)),
            ("out", show(&a.out)),
            ("metrics", show(&metrics_path)),
        ],
    );

    let train_raw = load_race_dir(&a.data.join("train"))?;
    let dev_raw = load_race_dir(&a.data.join("dev"))?;
    let vocab = build_vocab(&train_raw, 1)?;
    let loaded = load_embeddings::<f64>(&a.emb, &vocab, config.embed, config.seed)?;
    eprintln!(
        "{} train / {} dev examples, vocabulary {}, pretrained coverage {:.1}%",
        train_raw.len(),
        dev_raw.len(),
        vocab.len(),
        100.0 * loaded.coverage
    );
    let encode = |raws: &[_]| -> Result<Vec<_>> {
        raws.iter()
            .map(|r| encode_example(r, &vocab, config.caps))
            .collect()
    };
    let train_set = encode(&train_raw)?;
    let dev_set = encode(&dev_raw)?;

    let mut log = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let outcome = fit(&config, &vocab, loaded.table, &train_set, &dev_set, |m| {
        eprintln!(
            "epoch {} loss {:.6} dev {} ({:.1}s)",
            m.epoch,
            m.train_loss,
            m.dev_accuracy
                .map_or_else(|| "-".to_string(), |x| format!("{x:.4}")),
            m.wall_seconds
        );
        write_metrics_line(&mut log, m)
    })?;
    save_checkpoint(&outcome.best, &a.out)?;
    let best_dev = outcome
        .metrics
        .get(outcome.best_epoch.wrapping_sub(1))
        .and_then(|m| m.dev_accuracy);
    write_stdout(&format!(
        "best epoch {} dev accuracy {}\nwrote {}\n",
        outcome.best_epoch,
        best_dev.map_or_else(|| "-".to_string(), |x| format!("{x:.4}")),
        a.out.display()
    ))?;
    Ok(0)
}

pub fn eval(a: &EvalArgs) -> Result<u8> {
    let o = shape_overrides(a.config.config.as_deref(), &a.shape)?;
    let (ckpt, config) = open_checkpoint(&a.ckpt, &o)?;
    announce(
        &config,
        &[
            ("ckpt", show(&a.ckpt)),
            ("data", show(&a.data)),
            ("split", a.split.name().to_string()),
        ],
    );
    let raw = load_race_dir(&a.data.join(a.split.name()))?;
    let examples = raw
        .iter()
        .map(|r| encode_example(r, &ckpt.vocab, config.caps))
        .collect::<Result<Vec<_>>>()?;
    let r = evaluate(&ckpt.params, &ckpt.embeddings, &examples)?;
    if a.json {
        let doc = report::json(a.split.name(), &r);
        write_stdout(&format!("{doc:#}\n"))?;
    } else {
        write_stdout(&report::table(&r))?;
    }
    Ok(0)
}

fn tokenized(article: &RaceArticle, q: usize, config: &TrainConfig) -> TokenizedExample {
    TokenizedExample::new(
        &article.article,
        &article.questions[q],
        &article.options[q],
        config.caps,
    )
}

pub fn predict(a: &PredictArgs) -> Result<u8> {
    let o = shape_overrides(a.config.config.as_deref(), &a.shape)?;
    let (ckpt, config) = open_checkpoint(&a.ckpt, &o)?;
    announce(
        &config,
        &[("ckpt", show(&a.ckpt)), ("input", show(&a.input))],
    );
    let article = RaceArticle::load(&a.input, false)?;
    let mut results = Vec::with_capacity(article.questions.len());
    for q in 0..article.questions.len() {
        let tokens = tokenized(&article, q, &config);
        let id = format!("{}#{q}", article.id);
        let ex = encode_tokenized(&id, &tokens, 0, Subset::Unknown, &ckpt.vocab)?;
        let scores = score_example(&ckpt.params, &ckpt.embeddings, &ex.input())?;
        let probs = report::softmax(&scores);
        let choice = choose(&scores);
        let gold = article.answers.as_ref().map(|g| g[q]);
        results.push((q, scores, probs, choice, gold));
    }

    let letter = |i: usize| answer_letter(i).to_ascii_lowercase().to_string();
    if a.json {
        let questions: Vec<_> = results
            .iter()
            .map(|(q, scores, probs, choice, gold)| {
                json!({
                    "index": q,
                    "question": article.questions[*q],
                    "scores": scores,
                    "probabilities": probs,
                    "answer": letter(*choice),
                    "gold": gold.map(letter),
                })
            })
            .collect();
        let doc = json!({ "id": article.id, "questions": questions });
        write_stdout(&format!("{doc:#}\n"))?;
    } else {
        let mut text = String::new();
        for (q, scores, probs, choice, gold) in &results {
            text.push_str(&format!("question {q}: {}\n", article.questions[*q]));
            for (k, (s, p)) in scores.iter().zip(probs).enumerate() {
                text.push_str(&format!("  {}  score {s:>12.6}  prob {p:.6}\n", letter(k)));
            }
            text.push_str(&format!("  answer: {}", letter(*choice)));
            if let Some(g) = gold {
                text.push_str(&format!(" (gold {})", letter(*g)));
            }
            text.push('\n');
        }
        write_stdout(&text)?;
    }
    Ok(0)
}

fn matrix_rows(m: &Matrix, cols: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|r| m.row(r)[cols.clone()].to_vec())
        .collect()
}

/// An empty sequence is scored as a lone unknown token; the dump shows it
/// the same way so rows line up with matrix rows.
fn shown_tokens(tokens: &[String]) -> Vec<String> {
    if tokens.is_empty() {
        vec![UNK_TOKEN.to_string()]
    } else {
        tokens.to_vec()
    }
}

pub fn inspect_attention(a: &InspectArgs) -> Result<u8> {
    let o = shape_overrides(a.config.config.as_deref(), &a.shape)?;
    let (ckpt, config) = open_checkpoint(&a.ckpt, &o)?;
    announce(
        &config,
        &[
            ("ckpt", show(&a.ckpt)),
            ("input", show(&a.input)),
            ("question", a.question.to_string()),
            ("option", a.option.to_string()),
            ("out", show(&a.out)),
        ],
    );
    if ckpt.params.variant == Variant::SingleMatch {
        return Err(Error::Validation(
            "the single-match variant has no separate question and option attention".into(),
        ));
    }
    let article = RaceArticle::load(&a.input, false)?;
    if a.question >= article.questions.len() {
        return Err(Error::Validation(format!(
            "question {} out of range (article has {})",
            a.question,
            article.questions.len()
        )));
    }
    let n_options = article.options[a.question].len();
    if a.option >= n_options {
        return Err(Error::Validation(format!(
            "option {} out of range (question {} has {n_options})",
            a.option, a.question
        )));
    }

    let tokens = tokenized(&article, a.question, &config);
    let id = format!("{}#{}", article.id, a.question);
    let ex = encode_tokenized(&id, &tokens, 0, Subset::Unknown, &ckpt.vocab)?;
    let mut input = ex.input();
    input.options = vec![Sequence::unpadded(ex.options[a.option].clone())];
    let (tape, out) = run_forward(&ckpt.params, &ckpt.embeddings, &input)?;
    let att = &out.attention[0];

    let lengths: Vec<usize> = tokens.sentences.iter().map(Vec::len).collect();
    let per_sentence = |maps: &[comatch_core::tensor::Var]| -> Vec<Vec<Vec<f64>>> {
        if maps.len() == lengths.len() {
            maps.iter()
                .map(|&v| {
                    let m = tape.value(v);
                    matrix_rows(m, 0..m.cols())
                })
                .collect()
        } else {
            let m = tape.value(maps[0]);
            let mut start = 0;
            lengths
                .iter()
                .map(|&n| {
                    let rows = matrix_rows(m, start..start + n);
                    start += n;
                    rows
                })
                .collect()
        }
    };
    let doc = json!({
        "sentences": tokens.sentences,
        "question": shown_tokens(&tokens.question),
        "option": shown_tokens(&tokens.options[a.option]),
        "G_q": per_sentence(&att.g_q),
        "G_a": per_sentence(&att.g_a),
    });
    let text = serde_json::to_string(&doc).map_err(|e| Error::Contract(e.to_string()))?;
    fs::write(&a.out, text + "\n").map_err(|e| Error::io(&a.out, e))?;
    write_stdout(&format!("wrote {}\n", a.out.display()))?;
    Ok(0)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<u8> {
    let mut o = Overrides::load(a.config.config.as_deref())?;
    o.push("seed", a.seed);
    o.push("variant", a.variant.map(|v| v.name()));
    let config = resolve(&TrainConfig::default(), &o, false)?;
    let variants: Vec<Variant> = if o.contains("variant") {
        vec![config.variant]
    } else {
        Variant::ALL.to_vec()
    };
    let fault = a.inject_fault.map(|f| match f {
        FaultArg::MatmulRhs => GradientFault::MatmulRhs,
        FaultArg::LstmCarry => GradientFault::LstmCellCarry,
    });
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(Error::Config(format!(
            "eps must be positive, got {}",
            a.eps
        )));
    }
    let names: Vec<&str> = variants.iter().map(|v| v.name()).collect();
    announce(
        &config,
        &[
            ("eps", a.eps.to_string()),
            ("variants", names.join(",")),
            (
                "inject_fault",
                a.inject_fault
                    .map_or_else(|| "none".to_string(), |f| format!("{f:?}")),
            ),
        ],
    );

    let mut text = format!(
        "# max relative error per parameter group, seed {}, eps {:e}, tolerance {:e}\n\
         # tolerance is fixed; larger eps trades rounding error for truncation error\n",
        config.seed, a.eps, GRADCHECK_TOLERANCE
    );
    let mut failed = Vec::new();
    for v in variants {
        let errs = TinyInstance::<f64>::new(v, config.seed)?.check(a.eps, fault)?;
        for (name, err) in errs {
            let group = format!("{}/{name}", v.name());
            let bad = err.is_nan() || err >= GRADCHECK_TOLERANCE;
            text.push_str(&format!(
                "{group:<40} {err:.3e}{}\n",
                if bad { "  FAIL" } else { "" }
            ));
            if bad {
                failed.push(group);
            }
        }
    }
    write_stdout(&text)?;
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!(
            "gradient check failed for {} group(s): {}",
            failed.len(),
            failed.join(", ")
        );
        Ok(EXIT_CHECK)
    }
}
