//! Acceptance criteria for the engine. Each criterion prints one PASS/FAIL
//! line (written straight to stdout so it shows without `--nocapture`); the
//! test fails if any criterion fails.

mod common;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use reba_core::embed::{reba_mean_fast, reba_mean_naive};
use reba_core::fusion::{fuse_heads, strategy_heads, FusedAttention};
use reba_core::vector_file::read_embedding_json;
use reba_core::{
    accuracy, classical_embedding, cosine_similarity, echo_embedding, four_choice_answer, fuse, init_model, pearson,
    reba_sentence_embedding, reba_word_embedding, recall_at_k, symmetrize, write_bundle, AttentionStack, BundleHeader,
    Distance, EchoMeanMode, EmbedRequest, FusionStrategy, HiddenStates, Method, Pool, TensorBundle, ToyModelSpec,
    Weighting,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn fusion_oracle() -> Outcome {
    let mut r = rng(1001);
    let start = Instant::now();
    for case in 0..50 {
        let (layers, heads, m) = (r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=12));
        let stack = random_stack(&mut r, layers, heads, m);
        let fused = fuse(&stack, FusionStrategy::MaxAllLayers).map_err(|e| e.to_string())?;
        let oracle = fused_oracle(&stack, 0..layers);
        ensure(bits(fused.as_slice()) == bits(&oracle), || {
            format!("case {case}: fused != oracle")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("50 stacks exact, {elapsed:?}"))
}

fn fusion_identity() -> Outcome {
    let mut r = rng(1002);
    for m in [1, 2, 5, 12] {
        let a = random_causal_matrix(&mut r, m);
        let stack = AttentionStack::new(1, 1, m, a.clone()).unwrap();
        let fused = fuse(&stack, FusionStrategy::MaxAllLayers).map_err(|e| e.to_string())?;
        let sym = symmetrize(&a, m).map_err(|e| e.to_string())?;
        ensure(bits(fused.as_slice()) == bits(&sym), || {
            format!("m={m}: fuse != symmetrize")
        })?;
    }
    Ok("I=J=1, m in {1,2,5,12}: bitwise equal".into())
}

fn fusion_order_independence() -> Outcome {
    let mut r = rng(1003);
    let stack = random_stack(&mut r, 4, 3, 10);
    let reference = fuse(&stack, FusionStrategy::MaxAllLayers).map_err(|e| e.to_string())?;
    let mut order = strategy_heads(&stack, FusionStrategy::MaxAllLayers);
    for perm in 0..5 {
        order.shuffle(&mut r);
        let fused = fuse_heads(&stack, &order, FusionStrategy::MaxAllLayers).map_err(|e| e.to_string())?;
        ensure(bits(fused.as_slice()) == bits(reference.as_slice()), || {
            format!("permutation {perm} differs")
        })?;
    }
    Ok("5 permutations bitwise identical".into())
}

fn fast_mean_path() -> Outcome {
    let mut r = rng(1004);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let (n, d) = (r.gen_range(1..=32), r.gen_range(1..=32));
        let (layers, heads) = (r.gen_range(1..=2), r.gen_range(1..=2));
        let bundle = random_bundle(&mut r, layers, heads, n, 2, d);
        let fused = fuse(&bundle.attentions, FusionStrategy::MaxAllLayers).map_err(|e| e.to_string())?;
        let (fast, _) = reba_mean_fast(&bundle, &fused, Weighting::Raw).map_err(|e| e.to_string())?;
        let naive = naive_mean_oracle(fused.as_slice(), bundle.hidden.as_slice(), 2 * n, n, d);
        let err = max_rel_err(&fast, &naive);
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("case {case}: relative error {err:e}"))?;
    }
    Ok(format!("100 bundles, worst relative error {worst:.3e}"))
}

fn reba_one_colinearity() -> Outcome {
    let mut r = rng(1005);
    let mut worst = 1.0f64;
    for seed in 0..20u64 {
        let model = init_model(ToyModelSpec {
            seed,
            ..Default::default()
        })
        .unwrap();
        let n = r.gen_range(1..=16);
        let tokens: Vec<u32> = (0..n).map(|_| r.gen_range(0..32)).collect();
        let bundle = model.generate_bundle(&tokens, 1).map_err(|e| e.to_string())?;
        let fused = fuse(&bundle.attentions, FusionStrategy::MaxAllLayers).map_err(|e| e.to_string())?;
        let reba = reba_sentence_embedding(&bundle, &fused, Pool::Last, Weighting::Raw).map_err(|e| e.to_string())?;
        let classical = classical_embedding(
            &bundle,
            &EmbedRequest::new(Method::Classical, 1, Pool::Last, None).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let cos = cosine_similarity(&reba.values, &classical.values).map_err(|e| e.to_string())?;
        worst = worst.min(cos);
        ensure(cos >= 1.0 - 1e-6, || format!("seed {seed}: cosine {cos}"))?;
    }
    Ok(format!("20 toy bundles, min cosine {worst:.12}"))
}

fn causal_prefix() -> Outcome {
    let mut r = rng(1006);
    let model = init_model(ToyModelSpec::default()).unwrap();
    let d = model.spec.dim;
    let mut worst = 0.0f64;
    for case in 0..10 {
        let m = r.gen_range(1..=24);
        let tokens: Vec<u32> = (0..m).map(|_| r.gen_range(0..32)).collect();
        let full = model.forward_trace(&tokens).map_err(|e| e.to_string())?;
        for t in 1..=m {
            let prefix = model.forward_trace(&tokens[..t]).map_err(|e| e.to_string())?;
            let diff = prefix
                .hidden
                .iter()
                .zip(&full.hidden[..t * d])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(diff);
            ensure(diff <= 1e-10, || format!("case {case} prefix {t}: diff {diff:e}"))?;
        }
    }
    Ok(format!("10 inputs, all prefixes, max diff {worst:e}"))
}

fn backward_only_support() -> Outcome {
    let mut r = rng(1007);
    for case in 0..10 {
        let n = r.gen_range(2..=10);
        let mut bundle = random_bundle(&mut r, 2, 2, n, 2, 6);
        let fused = fuse(&bundle.attentions, FusionStrategy::MaxAllLayers).map_err(|e| e.to_string())?;
        let i = r.gen_range(2..=n);
        let before = reba_word_embedding(&bundle, &fused, i, Weighting::Raw).map_err(|e| e.to_string())?;
        for j in 0..i - 1 {
            for v in bundle.hidden.row_mut(j) {
                *v = r.gen_range(-100.0..100.0);
            }
        }
        let after = reba_word_embedding(&bundle, &fused, i, Weighting::Raw).map_err(|e| e.to_string())?;
        ensure(bits(&before.values) == bits(&after.values), || {
            format!("case {case}: e_{i} changed")
        })?;
    }
    Ok("10 cases bitwise unchanged".into())
}

fn echo_slicing() -> Outcome {
    let model = init_model(ToyModelSpec::default()).unwrap();
    let tokens = [12u32, 7, 30, 1, 19];
    let n = tokens.len();
    for k in [2usize, 3] {
        let bundle = model.generate_bundle(&tokens, k).map_err(|e| e.to_string())?;
        for i in 1..=n {
            let req = EmbedRequest::new(Method::Echo, k, Pool::Word, Some(i)).unwrap();
            let e = echo_embedding(&bundle, &req, EchoMeanMode::LastOccurrence).map_err(|e| e.to_string())?;
            ensure(bits(&e.values) == bits(bundle.hidden.row((k - 1) * n + i - 1)), || {
                format!("k={k} i={i}: word != row (k-1)n+i")
            })?;
        }
        let req = EmbedRequest::new(Method::Echo, k, Pool::Last, None).unwrap();
        let e = echo_embedding(&bundle, &req, EchoMeanMode::LastOccurrence).map_err(|e| e.to_string())?;
        ensure(bits(&e.values) == bits(bundle.hidden.row(k * n - 1)), || {
            format!("k={k}: last != row kn")
        })?;
    }
    Ok("k in {2,3}: word and last are exact row slices".into())
}

fn four_choice_oracle_check() -> Outcome {
    let mut r = rng(1008);
    for case in 0..200 {
        let opts: [Vec<f32>; 4] = std::array::from_fn(|_| (0..8).map(|_| r.gen_range(-1.0..1.0f32)).collect());
        for (metric, cosine) in [(Distance::Euclidean, false), (Distance::Cosine, true)] {
            let got = four_choice_answer(&opts, metric).map_err(|e| e.to_string())?;
            let (chosen, _) = four_choice_oracle(&opts, cosine);
            ensure(got.chosen == chosen, || {
                format!("case {case} {metric}: {} vs oracle {chosen}", got.chosen)
            })?;
        }
    }
    let v: Vec<f32> = vec![0.25, -1.0, 3.0];
    let tie = [v.clone(), v.clone(), v.clone(), v];
    for metric in [Distance::Euclidean, Distance::Cosine] {
        let got = four_choice_answer(&tie, metric).map_err(|e| e.to_string())?;
        ensure(got.chosen == 1, || {
            format!("full tie under {metric} chose {}", got.chosen)
        })?;
    }
    Ok("200 quadruples x 2 metrics match; full tie -> option 1".into())
}

fn pooling_cost() -> Outcome {
    let mut r = rng(1009);
    let mut lines = Vec::new();
    for n in [64usize, 256] {
        let k = 2;
        let m = k * n;
        let mut att = AttentionStack::zeros(1, 1, m);
        att.as_mut_slice().copy_from_slice(&random_causal_matrix(&mut r, m));
        let bundle = TensorBundle {
            header: BundleHeader::new(1, 1, 4, n, k, (0..n as u32).collect::<Vec<_>>().repeat(k)),
            attentions: att,
            hidden: HiddenStates::new(m, 4, (0..m * 4).map(|_| r.gen_range(-1.0..1.0f32)).collect()).unwrap(),
        };
        let fused = fuse(&bundle.attentions, FusionStrategy::MaxAllLayers).map_err(|e| e.to_string())?;
        let (fast, fast_cost) = reba_mean_fast(&bundle, &fused, Weighting::Raw).map_err(|e| e.to_string())?;
        let (naive, naive_cost) = reba_mean_naive(&bundle, &fused, Weighting::Raw).map_err(|e| e.to_string())?;
        let expected_naive = n * m - n * (n - 1) / 2;
        ensure(fast_cost.vector_accumulations == m, || {
            format!(
                "n={n}: fast path did {} accumulations, expected {m}",
                fast_cost.vector_accumulations
            )
        })?;
        ensure(naive_cost.vector_accumulations == expected_naive, || {
            format!(
                "n={n}: naive path did {}, expected {expected_naive}",
                naive_cost.vector_accumulations
            )
        })?;
        let naive64: Vec<f64> = naive.iter().map(|&x| x as f64).collect();
        ensure(max_rel_err(&fast, &naive64) <= 1e-6, || {
            format!("n={n}: fast and naive disagree")
        })?;
        lines.push(format!("n={n}: fast {m} vs naive {expected_naive}"));
    }
    Ok(lines.join("; "))
}

fn metrics_and_golden() -> Outcome {
    let x = [1.0, 2.0, 3.0, 4.0];
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
    let r = pearson(&x, &y).map_err(|e| e.to_string())?;
    ensure((r - 1.0).abs() <= 1e-12, || format!("pearson(2x+1) = {r}"))?;

    ensure(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap() == 1.0, || {
        "accuracy all".into()
    })?;
    ensure(accuracy(&[1, 1], &[2, 2]).unwrap() == 0.0, || "accuracy none".into())?;
    ensure(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 3]).unwrap() == 0.75, || {
        "accuracy 3/4".into()
    })?;

    let relevant: HashSet<u32> = [10, 11, 12, 13].into_iter().collect();
    ensure(recall_at_k(&[13, 12, 11, 10], &relevant, 4).unwrap() == 1.0, || {
        "recall all".into()
    })?;
    ensure(recall_at_k(&[1, 2, 10], &relevant, 2).unwrap() == 0.0, || {
        "recall none".into()
    })?;
    ensure(recall_at_k(&[10, 1, 12, 2, 11], &relevant, 4).unwrap() == 0.5, || {
        "recall half".into()
    })?;

    let smallest = TensorBundle {
        header: BundleHeader::new(1, 1, 1, 1, 1, vec![0]),
        attentions: AttentionStack::new(1, 1, 1, vec![1.0]).unwrap(),
        hidden: HiddenStates::new(1, 1, vec![0.5]).unwrap(),
    };
    let mut buf = Vec::new();
    write_bundle(&smallest, &mut buf).map_err(|e| e.to_string())?;
    let golden = include_bytes!("data/smallest.reba");
    ensure(buf == golden, || "smallest bundle differs from golden bytes".into())?;
    Ok(format!(
        "pearson r-1 = {:e}; accuracy/recall exact; golden {} bytes equal",
        r - 1.0,
        golden.len()
    ))
}

fn run(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_reba"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?} exited {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        ))
    }
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = dir.path();
    let start = Instant::now();

    let sample = dir.join("sample.reba");
    run(&[
        "--quiet",
        "toygen",
        "--seed",
        "42",
        "--tokens",
        "5 17 3 28 9 11",
        "--repeat",
        "2",
        "--out",
        s(&sample),
    ])?;
    let fused_path = dir.join("sample.bin");
    run(&[
        "--quiet",
        "fuse",
        "--in",
        s(&sample),
        "--strategy",
        "max-all",
        "--out",
        s(&fused_path),
    ])?;
    let fused = FusedAttention::read_raw(
        &fs::read(&fused_path).map_err(|e| e.to_string())?,
        FusionStrategy::MaxAllLayers,
    )
    .map_err(|e| e.to_string())?;
    ensure(fused.size() == 12, || format!("fused size {}", fused.size()))?;
    for (pool, extra) in [("word", Some("3")), ("mean", None), ("last", None)] {
        let out = dir.join(format!("sample_{pool}.json"));
        let mut args = vec![
            "--quiet",
            "embed",
            "--in",
            s(&sample),
            "--method",
            "reba",
            "--pool",
            pool,
            "--out",
            s(&out),
        ];
        if let Some(i) = extra {
            args.extend(["--token-index", i]);
        }
        run(&args)?;
        let e = read_embedding_json(&out).map_err(|e| e.to_string())?;
        ensure(e.k == 2 && e.dim() == 16 && !e.degenerate, || {
            format!("{pool}: unexpected embedding {e:?}")
        })?;
    }

    // Ten questions. Same-sense options share the context up to the target
    // token and differ only after it; the planted outlier differs before it.
    let mut r = rng(1010);
    let mut manifest = Vec::new();
    for q in 0..10 {
        let prefix: Vec<u32> = (0..3).map(|_| r.gen_range(0..32)).collect();
        let mut outlier = prefix.clone();
        outlier[0] = (outlier[0] + 1 + r.gen_range(0..31)) % 32;
        let gold = q % 4 + 1;
        let mut options = Vec::new();
        for slot in 1..=4 {
            let mut tokens = if slot == gold { outlier.clone() } else { prefix.clone() };
            tokens.extend((0..3).map(|_| r.gen_range(0..32u32)));
            let text: Vec<String> = tokens.iter().map(u32::to_string).collect();
            let name = format!("q{q}_{slot}.reba");
            run(&[
                "--quiet",
                "toygen",
                "--seed",
                "42",
                "--tokens",
                &text.join(" "),
                "--repeat",
                "2",
                "--out",
                s(&dir.join(&name)),
            ])?;
            options.push(name);
        }
        manifest.push(
            serde_json::json!({
                "question_id": format!("q{q}"),
                "options": options,
                "target_token_index": [3, 3, 3, 3],
                "gold": gold,
            })
            .to_string(),
        );
    }
    let manifest_path = dir.join("questions.jsonl");
    fs::write(&manifest_path, manifest.join("\n") + "\n").map_err(|e| e.to_string())?;
    let report_path = dir.join("report.json");
    run(&[
        "--quiet",
        "eval",
        "four-choice",
        "--manifest",
        s(&manifest_path),
        "--method",
        "classical",
        "--pool",
        "word",
        "--distance",
        "euclidean",
        "--report",
        s(&report_path),
    ])?;
    let elapsed = start.elapsed();

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report_path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let acc = report["accuracy"].as_f64().ok_or("report has no accuracy")?;
    ensure(acc == 1.0, || format!("accuracy {acc}"))?;
    ensure(elapsed < Duration::from_secs(5), || {
        format!("pipeline took {elapsed:?}")
    })?;
    Ok(format!("accuracy {acc} on 10 questions, {elapsed:?}"))
}

#[test]
fn acceptance_criteria() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        ("fusion oracle", fusion_oracle),
        ("fusion identity", fusion_identity),
        ("fusion order independence", fusion_order_independence),
        ("fast mean pooling", fast_mean_path),
        ("ReBA-1 colinearity", reba_one_colinearity),
        ("causal prefix property", causal_prefix),
        ("backward-only support", backward_only_support),
        ("echo slicing", echo_slicing),
        ("four-choice oracle", four_choice_oracle_check),
        ("pooling cost", pooling_cost),
        ("metrics + golden file", metrics_and_golden),
        ("end-to-end pipeline", end_to_end),
    ];
    let mut out = std::io::stdout();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(detail) => {
                let _ = writeln!(out, "acceptance PASS  {name}: {detail}");
            }
            Err(why) => {
                let _ = writeln!(out, "acceptance FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    let _ = out.flush();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
