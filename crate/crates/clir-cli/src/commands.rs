//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::Deserialize;

use clir_core::dedup::{dedup_triples, DedupConfig};
use clir_core::domain::{parse_combo, parse_direction, LangCombo, Language};
use clir_core::error::Error;
use clir_core::evaluator::{run_task, EvalResultFile, EvalTask};
use clir_core::ingest::emb1::{normalize_rows, read_embeddings, write_embeddings, EmbeddingMatrix};
use clir_core::ingest::embed_http::{embed_vectors, EmbedClientConfig};
use clir_core::ingest::tensors::{read_tensor_archive, write_tensor_archive};
use clir_core::ingest::{read_corpus, read_qrels, read_queries, read_triples, write_triples};
use clir_core::merger::{merge_archives, run_sweep, EvalManifest, MergeSpec, ModelRef, SweepPlan};
use clir_core::miner::{assemble_negatives, mine_negatives, MiningConfig, MiningResult};
use clir_core::permute::{expand, train_file_name, PermutationPlan};
use clir_core::report::{load_score_table, parse_bins, render_table, RenderOptions, TableFormat};

use crate::{Cli, CliError, Command};

type CliResult = Result<(), CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Dedup(args) => run_dedup(cli, args),
        Command::Mine(args) => run_mine(args),
        Command::Permute(args) => run_permute(args),
        Command::Eval(args) => run_eval(args),
        Command::Merge(args) => run_merge(args),
        Command::Sweep(args) => run_sweep_cmd(args),
        Command::Report(args) => run_report(args),
        Command::Embed(args) => run_embed(args),
    }
}

fn run_dedup(cli: &Cli, args: &crate::DedupArgs) -> CliResult {
    let cfg = DedupConfig {
        num_perms: args.num_perms,
        shingle: args.shingle,
        threshold: args.threshold,
        seed: cli.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let triples = read_triples(&args.input)?;
    let total = triples.len();
    let outcome = dedup_triples(triples, &cfg)?;
    write_triples(&outcome.kept, &args.output)?;
    if let Some(report) = &args.report {
        write_jsonl(&outcome.dropped, report)?;
    }
    println!(
        "dedup: kept {} of {total} triples ({} dropped)",
        outcome.kept.len(),
        outcome.dropped.len()
    );
    Ok(())
}

fn parse_rank_window(text: &str) -> Result<(usize, usize), CliError> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| usage(format!("rank window {text:?} must look like \"50:300\"")))?;
    let parse = |part: &str| {
        part.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("bad rank bound {part:?}")))
    };
    Ok((parse(lo)?, parse(hi)?))
}

fn run_mine(args: &crate::MineArgs) -> CliResult {
    let (rank_lo, rank_hi) = parse_rank_window(&args.rank_window)?;
    let cfg = MiningConfig {
        rank_lo,
        rank_hi,
        abs_cap: args.abs_cap,
        rel_margin: args.rel_margin,
        count: args.count,
        include_own_positive: args.include_own_positive,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let triples = read_triples(&args.triples)?;
    let docs = read_embeddings(&args.doc_embeddings)?;
    let queries = read_embeddings(&args.query_embeddings)?;

    let results: Vec<MiningResult> = triples
        .par_iter()
        .map(|triple| {
            let query_vec = queries.vector_for(&triple.id).ok_or_else(|| {
                Error::Precondition(format!("missing query embedding for triple {:?}", triple.id))
            })?;
            let positive_doc_id = triple.metadata.get("positive_doc_id").ok_or_else(|| {
                Error::Precondition(format!(
                    "triple {:?} has no \"positive_doc_id\" field",
                    triple.id
                ))
            })?;
            mine_negatives(&triple.id, query_vec, positive_doc_id, &docs, &cfg)
        })
        .collect::<clir_core::Result<_>>()?;

    let mined_total: usize = results.iter().map(|r| r.mined.len()).sum();
    let shortfall_total: usize = results.iter().map(|r| r.shortfall).sum();
    write_jsonl(&results, &args.output)?;
    println!(
        "mine: {} queries, {mined_total} negatives mined, total shortfall {shortfall_total}",
        results.len()
    );
    Ok(())
}

fn parse_combo_list(text: &str) -> Result<Vec<LangCombo>, CliError> {
    if text == "all" {
        return Ok(clir_core::all_combos());
    }
    text.split(',')
        .map(|part| parse_combo(part.trim()).map_err(|e| usage(e.to_string())))
        .collect()
}

fn run_permute(args: &crate::PermuteArgs) -> CliResult {
    let combos = parse_combo_list(&args.combos)?;
    let triples = read_triples(&args.triples)?;
    let corpus = read_corpus(&args.corpus)?;
    let mined: BTreeMap<String, MiningResult> = read_jsonl::<MiningResult>(&args.negatives)?
        .into_iter()
        .map(|r| (r.query_id.clone(), r))
        .collect();

    let plan = PermutationPlan::new(combos, &clir_core::ingest::corpus_languages(&corpus))
        .map_err(|e| usage(e.to_string()))?;
    let texts_by_lang: BTreeMap<Language, BTreeMap<String, String>> = Language::ALL
        .iter()
        .map(|&lang| (lang, corpus.texts(lang)))
        .collect();

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let mut writers: BTreeMap<LangCombo, Vec<u8>> =
        plan.combos().iter().map(|&c| (c, Vec::new())).collect();

    for triple in &triples {
        let result = mined.get(&triple.id).ok_or_else(|| {
            Error::Precondition(format!("no mining result for triple {:?}", triple.id))
        })?;
        let mut negatives = BTreeMap::new();
        for &lang in &Language::ALL {
            negatives.insert(
                lang,
                assemble_negatives(triple, lang, result, &texts_by_lang[&lang])?,
            );
        }
        for example in expand(triple, &negatives, &plan)? {
            let buffer = writers.get_mut(&example.combo).expect("planned combo");
            serde_json::to_writer(&mut *buffer, &example)
                .map_err(|e| Error::Precondition(format!("unserializable example: {e}")))?;
            buffer.push(b'\n');
        }
    }
    for (combo, buffer) in &writers {
        let path = args.out_dir.join(train_file_name(*combo));
        std::fs::write(&path, buffer).map_err(|e| Error::io(&path, e))?;
    }
    println!(
        "permute: {} triples x {} combos -> {} files in {}",
        triples.len(),
        plan.combos().len(),
        plan.combos().len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_eval(args: &crate::EvalArgs) -> CliResult {
    let direction = parse_direction(&args.direction).map_err(|e| usage(e.to_string()))?;
    if args.k < 1 {
        return Err(usage("--k must be at least 1"));
    }
    let task = EvalTask::new(
        args.dataset.clone(),
        direction,
        read_queries(&args.queries)?,
        read_corpus(&args.corpus)?,
        read_qrels(&args.qrels)?,
    )?;
    let query_embs = read_embeddings(&args.query_embeddings)?;
    let doc_embs = read_embeddings(&args.doc_embeddings)?;
    let result = run_task(&task, &query_embs, &doc_embs, args.k)?;
    println!(
        "eval {} {}: mean NDCG@{} = {:.6} ({:.2})",
        result.dataset_name,
        result.direction,
        result.k,
        result.mean_ndcg,
        result.mean_percent()
    );
    let file: EvalResultFile = result.into();
    write_json_pretty(&file, &args.output)?;
    Ok(())
}

fn run_merge(args: &crate::MergeArgs) -> CliResult {
    let label = |path: &Path| -> String {
        path.file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("archive")
            .to_string()
    };
    let spec = MergeSpec::new(label(&args.anchor), label(&args.pair), args.alpha)
        .map_err(|e| usage(e.to_string()))?;
    let anchor = read_tensor_archive(&args.anchor)?;
    let pair = read_tensor_archive(&args.pair)?;
    let merged = merge_archives(&anchor, &pair, &spec)?;
    write_tensor_archive(&merged, &args.out)?;
    println!(
        "merge: {} (+{}) at alpha {} -> {} ({} tensors)",
        spec.anchor_label,
        spec.pair_label,
        spec.alpha,
        args.out.display(),
        merged.tensors.len()
    );
    Ok(())
}

/// Resolves `path` against the directory of `base_file` when relative.
fn resolve_relative(base_file: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_file.parent().unwrap_or(Path::new(".")).join(path)
    }
}

fn read_model_list(path: &Path) -> Result<Vec<ModelRef>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut models = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, model_path) = match line.split_once(char::is_whitespace) {
            Some((label, rest)) => (label.to_string(), PathBuf::from(rest.trim())),
            None => {
                let model_path = PathBuf::from(line);
                let stem = model_path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| {
                        Error::record(idx + 1, format!("cannot derive label from {line:?}"))
                    })?
                    .to_string();
                (stem, model_path)
            }
        };
        models.push(ModelRef {
            label,
            path: resolve_relative(path, &model_path),
        });
    }
    Ok(models)
}

fn run_sweep_cmd(args: &crate::SweepArgs) -> CliResult {
    let models = read_model_list(&args.models)?;
    let plan = SweepPlan::new(models, args.alpha).map_err(|e| usage(e.to_string()))?;

    let manifest = match &args.eval_manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut manifest: EvalManifest = serde_json::from_str(&text)
                .map_err(|e| Error::format(path, format!("bad manifest: {e}")))?;
            for dataset in &mut manifest.datasets {
                dataset.corpus = resolve_relative(path, &dataset.corpus);
                dataset.queries = resolve_relative(path, &dataset.queries);
                dataset.qrels = resolve_relative(path, &dataset.qrels);
            }
            for per_dataset in manifest.embeddings.values_mut() {
                for per_direction in per_dataset.values_mut() {
                    for files in per_direction.values_mut() {
                        files.queries = resolve_relative(path, &files.queries);
                        files.docs = resolve_relative(path, &files.docs);
                    }
                }
            }
            Some(manifest)
        }
        None => None,
    };

    let report = run_sweep(&plan, manifest.as_ref(), args.merge_dir.as_deref())?;
    let evaluated = report.cells.iter().filter(|c| c.scores.is_some()).count();
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    write_json_pretty(&report, &args.out)?;
    println!(
        "sweep: {} cells ({evaluated} evaluated, {failed} failed) -> {}",
        report.cells.len(),
        args.out.display()
    );
    Ok(())
}

fn run_report(args: &crate::ReportArgs) -> CliResult {
    let format: TableFormat = args.format.parse().map_err(|e: Error| usage(e.to_string()))?;
    let bins = parse_bins(&args.bins).map_err(|e| usage(e.to_string()))?;
    let table = load_score_table(&args.results, args.baseline.as_deref())?;
    let opts = RenderOptions {
        format,
        bins,
        deltas: args.baseline.is_some(),
    };
    let rendered = render_table(&table, &opts)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &rendered).map_err(|e| Error::io(path, e))?;
            println!("report: wrote {}", path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct EmbedInput {
    id: String,
    text: String,
}

fn run_embed(args: &crate::EmbedArgs) -> CliResult {
    if args.batch_size == 0 {
        return Err(usage("--batch-size must be positive"));
    }
    let path = &args.input;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbedInput = serde_json::from_str(&line)
            .map_err(|e| Error::record(idx + 1, format!("bad embed input: {e}")))?;
        ids.push(record.id);
        texts.push(record.text);
    }

    let cfg = EmbedClientConfig {
        endpoint: args.endpoint.clone(),
        batch_size: args.batch_size,
        timeout: Duration::from_secs(args.timeout_secs),
        max_attempts: 3,
        backoff: Duration::from_millis(250),
    };
    let (vectors, dim) = embed_vectors(&texts, &cfg)?;
    let mut matrix = EmbeddingMatrix::new(ids, vectors, dim, false)?;
    if args.normalize {
        matrix = normalize_rows(&matrix)?;
    }
    write_embeddings(&matrix, &args.output)?;
    println!(
        "embed: {} texts -> {} ({} dims{})",
        texts.len(),
        args.output.display(),
        dim,
        if args.normalize { ", normalized" } else { "" }
    );
    Ok(())
}

fn write_jsonl<T: serde::Serialize>(records: &[T], path: &Path) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, record)
            .map_err(|e| Error::Precondition(format!("unserializable record: {e}")))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::record(idx + 1, format!("bad record: {e}")))?,
        );
    }
    Ok(records)
}

fn write_json_pretty<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Precondition(format!("unserializable value: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}
