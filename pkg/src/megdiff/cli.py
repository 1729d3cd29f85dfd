"""``megdiff`` command line.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 LLM transport failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import shutil
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import _permute, report
from .bench import BenchCase, bench_encode, bench_permute
from .denoise import denoise_group
from .divergence import (CorpusSplit, category_improvement, extract_sets, merge_annotations,
                         sentence_scores)
from .encoding import PredictionTensor, layer_sweep
from .evaluate import (ChannelMask, correlation_map, delta_mse, significant_channels,
                       word_mse)
from .exceptions import MegdiffError, TransportError, ValidationError
from .hypothesis import HttpLlmClient, LlmEndpointConfig, MockLlm, ResponseCache
from .hypothesis.pipeline import run_hypothesis_pipeline
from .mcq import load_items, mcq_accuracy, score_table
from .runs import ConfigError, RunConfig, StageRunner, bundle_files, load_json, write_manifest
from .stats import (bh_fdr, binomial_test, chi_square_independence, krippendorff_alpha,
                    permutation_test, permutation_test_batch, t_test_two_sample)
from .tensor_io import (SynthConfig, Tensor, load_stimulus, read_embeddings, read_responses,
                        read_tensor, save_stimulus, synth_dataset, write_embeddings,
                        write_responses, write_tensor)

logger = logging.getLogger("megdiff")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2, 3

COMPARE_CELL_HEADER = ["channel", "window", "delta_r", "p_a_better", "p_b_better", "label"]
COMPARE_SUMMARY_HEADER = ["window", "pct_a_better", "pct_b_better", "pct_ns"]

DEFAULT_MOCK_RULES = {
    "contain an exclamation mark": {"contains": "!"},
    "contain a question mark": {"contains": "?"},
    "contain a comma": {"contains": ","},
}


# -- helpers ------------------------------------------------------------------

def _files(*stems) -> list[Path]:
    out = []
    for s in stems:
        out += bundle_files(s)
    return out


def _load_config(args, require_inputs=True) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = RunConfig.load(args.config, require_inputs=require_inputs)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = Path(args.out)
    if args.llm:
        if args.llm == "mock":
            cfg.llm = "mock"
        else:
            model = cfg.llm.model if isinstance(cfg.llm, LlmEndpointConfig) else "default"
            cfg.llm = LlmEndpointConfig(base_url=args.llm, model=model)
    return cfg


def _rule(spec):
    if "contains" in spec:
        needle = spec["contains"]
        return lambda s: needle in s
    if "regex" in spec:
        pattern = re.compile(spec["regex"])
        return lambda s: bool(pattern.search(s))
    if "always" in spec:
        value = bool(spec["always"])
        return lambda s: value
    raise ConfigError(f"config field 'mock_llm.rules': unsupported rule {spec}")


def build_client(cfg: RunConfig):
    if cfg.llm == "mock" or cfg.llm is None:
        spec = cfg.mock_llm or {}
        rules_spec = spec.get("rules", DEFAULT_MOCK_RULES)
        rules = {h: _rule(r) for h, r in rules_spec.items()}
        proposals = spec.get("proposals")
        if proposals is None:
            proposals = ["\n".join(f'- "{h}"' for h in rules_spec)]
        return MockLlm(proposals=proposals, rules=rules)
    if isinstance(cfg.llm, LlmEndpointConfig):
        return HttpLlmClient(cfg.llm)
    raise ConfigError(f"config field 'llm': expected 'mock' or an endpoint object, got {cfg.llm!r}")


def _pred_bundle(pred: PredictionTensor, stem: Path):
    write_tensor(Tensor(pred.data), stem, meta={"predictions": pred.manifest()})


def _read_pred(stem) -> np.ndarray:
    return read_tensor(stem).data


def _write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return report.write_text(path, buf.getvalue())


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and not np.isfinite(v)) else f"{v:.10g}"


# -- stages -------------------------------------------------------------------

def stage_denoise(runner: StageRunner, cfg: RunConfig) -> Path:
    out = cfg.output_dir / "responses_denoised"

    def fn():
        group = [read_responses(p) for p in cfg.responses]
        den = denoise_group(group, lam=cfg.denoise_lambda, grid=cfg.encode.lambda_grid)
        write_responses(den, out, meta={"denoised_from": len(group)})
        return _files(out), {"n_subjects": len(group)}

    runner.run("denoise", _files(*cfg.responses), {"lambda": cfg.denoise_lambda,
                                                   "grid": cfg.encode.lambda_grid}, fn)
    return out


def stage_encode(runner: StageRunner, cfg: RunConfig, responses: Path) -> dict:
    out_dir = cfg.output_dir

    def fn():
        layers = [read_embeddings(p) for p in cfg.embeddings]
        actual = read_responses(responses)
        sweep = layer_sweep(layers, actual, cfg.encode)
        outputs = []
        layer_ids = sorted(sweep.mean_r)
        window_r = []
        for lid in layer_ids:
            stem = out_dir / f"pred_layer{lid}"
            _pred_bundle(sweep.predictions[lid], stem)
            outputs += _files(stem)
            window_r.append(correlation_map(sweep.predictions[lid], actual).window_mean())
        write_tensor(Tensor(np.asarray(window_r), meta={"masked": True}), out_dir / "layer_corr",
                     meta={"layer_ids": layer_ids})
        outputs += _files(out_dir / "layer_corr")
        summary = {
            "mean_r": {str(k): v for k, v in sweep.mean_r.items()},
            "best_layer_id": sweep.best_layer_id,
            "folds": {str(k): p.manifest() for k, p in sweep.predictions.items()},
        }
        path = report.write_text(out_dir / "layers.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return outputs + [path], {"best_layer_id": sweep.best_layer_id,
                                  "mean_r": summary["mean_r"]}

    rec = runner.run("encode", _files(*cfg.embeddings, responses),
                     {"encode": cfg.encode.__dict__}, fn)
    summary = json.loads((out_dir / "layers.json").read_text())
    return {"best_layer_id": summary["best_layer_id"], "record": rec,
            "pred": out_dir / f"pred_layer{summary['best_layer_id']}", "summary": summary}


def evaluate_predictions(pred, actual, sig_cfg: dict, seed: int):
    cmap = correlation_map(pred, actual)
    mask = significant_channels(cmap, alpha=sig_cfg["alpha"], method=sig_cfg["method"],
                                n_perm=sig_cfg["n_perm"], seed=seed)
    if sig_cfg.get("collapse_channels"):
        mask = mask.collapse()
    if sig_cfg.get("mse_cells", "significant") == "all":
        # word errors over every cell; the stored mask stays the significance mask
        errors = word_mse(pred, actual, ChannelMask(np.ones_like(mask.significant), mask.alpha,
                                                    mask.method, mask.p_values))
    else:
        errors = word_mse(pred, actual, mask)
    return cmap, mask, errors


def stage_evaluate(runner: StageRunner, cfg: RunConfig, pred_stem: Path, responses: Path) -> dict:
    out_dir = cfg.output_dir

    def fn():
        actual = read_responses(responses)
        pred = _read_pred(pred_stem)
        cmap, mask, errors = evaluate_predictions(pred, actual, cfg.significance, cfg.seed)
        write_tensor(Tensor(cmap.r, meta={"masked": True}), out_dir / "corr",
                     meta={"n_words": cmap.n_words})
        write_tensor(Tensor(mask.significant.astype(float)), out_dir / "mask",
                     meta={"alpha": mask.alpha, "method": mask.method, "collapsed": mask.collapsed})
        write_tensor(Tensor(errors.mse, meta={"masked": True}), out_dir / "word_mse")
        csv_path = report.write_text(out_dir / "corr.csv", report.cell_table_csv(
            cmap.r, cmap.valid, mask.p_values, mask.significant))
        info = {"mean_r": cmap.mean(), "n_significant": int(mask.significant.sum()),
                "significant_per_window": mask.per_window_counts().tolist()}
        return _files(out_dir / "corr", out_dir / "mask", out_dir / "word_mse") + [csv_path], info

    runner.run("evaluate", _files(pred_stem, responses), {"significance": cfg.significance,
                                                          "seed": cfg.seed}, fn)
    return {"word_mse": out_dir / "word_mse"}


def stage_diverge(runner: StageRunner, cfg: RunConfig, mse_stem: Path) -> Path:
    out_dir = cfg.output_dir
    split_path = out_dir / "corpus_split.json"

    def fn():
        stim = load_stimulus(cfg.stimulus, cfg.categories, cfg.allow_extra_categories)
        errors = read_tensor(mse_stem).data
        scores = sentence_scores(errors, stim, cfg.window_range)
        split = extract_sets(scores, cfg.top_n, provenance={
            "source": str(mse_stem.name),
            "window_range": list(cfg.window_range) if cfg.window_range else [0, errors.shape[1]],
            "window_policy": ("mean over all cells"
                              if cfg.significance.get("mse_cells") == "all"
                              else "mean over significant cells; windows without any are skipped"),
        })
        split.save(split_path)
        rows = [[s.rank, s.sentence_id, _fmt(s.mean_mse), s.n_cells, s.text] for s in scores]
        sent = _write_csv(out_dir / "sentences.csv",
                          ["rank", "sentence_id", "mean_mse", "n_cells", "text"], rows)
        return [split_path, sent], {"n_sentences": len(scores), "top_n": split.provenance["top_n"]}

    runner.run("diverge", _files(mse_stem) + [cfg.stimulus],
               {"window_range": cfg.window_range, "top_n": cfg.top_n,
                "mse_cells": cfg.significance.get("mse_cells"),
                "categories": cfg.categories}, fn)
    return split_path


def stage_hypothesize(runner: StageRunner, cfg: RunConfig, split_path: Path) -> Path:
    out_dir = cfg.output_dir

    def fn():
        split = CorpusSplit.load(split_path)
        client = build_client(cfg)
        cache = ResponseCache(out_dir / "llm_cache")
        table = run_hypothesis_pipeline(split, cfg.hypothesis.folds, client, cfg.hypothesis, cache)
        md, csv_path = table.save(out_dir)
        return [md, csv_path], {"n_hypotheses": len(table.rows), "failures": list(table.failures)}

    llm = cfg.llm if isinstance(cfg.llm, str) else cfg.llm.__dict__
    runner.run("hypothesize", [split_path], {"hypothesis": cfg.hypothesis.__dict__, "llm": llm,
                                             "mock_llm": cfg.mock_llm}, fn)
    return out_dir / "hypotheses.md"


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _load_config(args, require_inputs=False)
    synth = dict(cfg.synth)
    synth.setdefault("seed", cfg.seed)
    try:
        sc = SynthConfig.from_dict(synth)
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"config field 'synth': {exc}") from exc
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    emb, responses, stim, truth = synth_dataset(sc)
    runner = StageRunner(out, resume=args.resume)

    def fn():
        outputs = _files(out / "embeddings_layer0", out / "ground_truth")
        write_embeddings(emb, out / "embeddings_layer0")
        write_tensor(truth, out / "ground_truth", meta={"layout": "window, [bias; weights], channel"})
        resp_stems = []
        group = responses if isinstance(responses, list) else [responses]
        for i, r in enumerate(group):
            stem = out / ("responses" if len(group) == 1 else f"responses_s{i}")
            write_responses(r, stem)
            resp_stems.append(stem)
            outputs += _files(stem)
        outputs.append(save_stimulus(stim, out / "stimulus.jsonl"))
        pipeline_cfg = {
            "seed": cfg.seed,
            "output_dir": "run",
            "paths": {"embeddings": ["embeddings_layer0"],
                      "responses": [s.name for s in resp_stems],
                      "stimulus": "stimulus.jsonl"},
        }
        outputs.append(report.write_text(out / "pipeline_config.json",
                                         json.dumps(pipeline_cfg, indent=2) + "\n"))
        return outputs, {"synth": sc.__dict__}

    runner.run("synth", [], {"synth": sc.__dict__}, fn)
    write_manifest(out, cfg.raw, runner.records)
    print(json.dumps({"output_dir": str(out), "stages": runner.executed}))
    return EXIT_OK


def cmd_denoise(args) -> int:
    cfg = _load_config(args)
    if len(cfg.responses) < 2:
        raise ConfigError("config field 'paths.responses' needs >= 2 subjects for denoising")
    runner = StageRunner(cfg.output_dir, resume=args.resume)
    stage_denoise(runner, cfg)
    write_manifest(cfg.output_dir, cfg.raw, runner.records)
    return EXIT_OK


def _responses_for(runner, cfg) -> Path:
    if not cfg.responses:
        raise ConfigError("config field 'paths.responses' is required")
    if len(cfg.responses) > 1:
        return stage_denoise(runner, cfg)
    return cfg.responses[0]


def cmd_encode(args) -> int:
    cfg = _load_config(args)
    if not cfg.embeddings:
        raise ConfigError("config field 'paths.embeddings' is required")
    runner = StageRunner(cfg.output_dir, resume=args.resume)
    enc = stage_encode(runner, cfg, _responses_for(runner, cfg))
    write_manifest(cfg.output_dir, cfg.raw, runner.records,
                   extra={"best_layer_id": enc["best_layer_id"]})
    print(json.dumps({"best_layer_id": enc["best_layer_id"], "mean_r": enc["summary"]["mean_r"]}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    if not args.pred:
        raise ConfigError("--pred is required")
    runner = StageRunner(cfg.output_dir, resume=args.resume)
    stage_evaluate(runner, cfg, Path(args.pred), _responses_for(runner, cfg))
    write_manifest(cfg.output_dir, cfg.raw, runner.records)
    return EXIT_OK


def cmd_diverge(args) -> int:
    cfg = _load_config(args)
    if cfg.stimulus is None:
        raise ConfigError("config field 'paths.stimulus' is required")
    mse = Path(args.errors) if args.errors else cfg.output_dir / "word_mse"
    runner = StageRunner(cfg.output_dir, resume=args.resume)
    stage_diverge(runner, cfg, mse)
    write_manifest(cfg.output_dir, cfg.raw, runner.records)
    return EXIT_OK


def cmd_hypothesize(args) -> int:
    cfg = _load_config(args)
    split = Path(args.split) if args.split else cfg.output_dir / "corpus_split.json"
    runner = StageRunner(cfg.output_dir, resume=args.resume)
    stage_hypothesize(runner, cfg, split)
    write_manifest(cfg.output_dir, cfg.raw, runner.records)
    print((cfg.output_dir / "hypotheses.md").read_text(), end="")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    for name, value in (("paths.embeddings", cfg.embeddings), ("paths.responses", cfg.responses),
                        ("paths.stimulus", cfg.stimulus)):
        if not value:
            raise ConfigError(f"config field '{name}' is required")
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    runner = StageRunner(out, resume=args.resume)
    stage = "denoise"
    extra = {}
    try:
        responses = _responses_for(runner, cfg)
        stage = "encode"
        enc = stage_encode(runner, cfg, responses)
        extra["best_layer_id"] = enc["best_layer_id"]
        extra["lambdas"] = enc["summary"]["folds"]
        stage = "evaluate"
        ev = stage_evaluate(runner, cfg, enc["pred"], responses)
        stage = "diverge"
        split = stage_diverge(runner, cfg, ev["word_mse"])
        if cfg.hypothesis_enabled or args.llm:
            stage = "hypothesize"
            stage_hypothesize(runner, cfg, split)
    except Exception:
        write_manifest(out, cfg.raw, runner.records, status="failed", failed_stage=stage, extra=extra)
        raise
    extra["executed"] = runner.executed
    extra["skipped"] = runner.skipped
    write_manifest(out, cfg.raw, runner.records, extra=extra)
    print(json.dumps({"output_dir": str(out), "executed": runner.executed,
                      "skipped": runner.skipped, "best_layer_id": extra["best_layer_id"]}))
    return EXIT_OK


def compare_predictions(pred_a, pred_b, actual, n_perm, seed, fdr_alpha):
    """Per-cell two-direction permutation tests with BH-FDR per direction."""
    A = np.asarray(getattr(actual, "data", actual))
    res = permutation_test_batch(A, pred_a, pred_b, n_perm=n_perm, seed=seed)
    # a direction is only claimable when the observed difference points that way;
    # with the strict counter a zero statistic would otherwise get the minimum p
    a_better = bh_fdr(res.p_greater, fdr_alpha) & (res.statistic > 0)
    b_better = bh_fdr(res.p_less, fdr_alpha) & (res.statistic < 0)
    labels = np.where(a_better, "a_better", np.where(b_better, "b_better", "ns"))
    return res, labels


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    if not (args.pred_a and args.pred_b):
        raise ConfigError("--pred-a and --pred-b are required")
    out = Path(args.out) if args.out else cfg.output_dir / "compare"
    out.mkdir(parents=True, exist_ok=True)
    runner = StageRunner(out, resume=args.resume)
    responses = _responses_for(runner, cfg)

    def fn():
        actual = read_responses(responses)
        pa, pb = _read_pred(args.pred_a), _read_pred(args.pred_b)
        if not (pa.shape == pb.shape == actual.shape):
            raise ValidationError(f"shape mismatch: pred_a {pa.shape}, pred_b {pb.shape}, "
                                  f"responses {actual.shape}")
        res, labels = compare_predictions(pa, pb, actual, cfg.n_perm, cfg.seed, cfg.fdr_alpha)
        n_ch, n_win = labels.shape
        rows = [[ch, w, _fmt(res.statistic[ch, w]), _fmt(res.p_greater[ch, w]),
                 _fmt(res.p_less[ch, w]), labels[ch, w]]
                for ch in range(n_ch) for w in range(n_win)]
        outputs = [_write_csv(out / "compare_cells.csv", COMPARE_CELL_HEADER, rows)]
        summary = []
        for w in range(n_win):
            col = labels[:, w]
            summary.append([w] + [f"{100.0 * np.mean(col == k):.4f}"
                                  for k in ("a_better", "b_better", "ns")])
        outputs.append(_write_csv(out / "compare_summary.csv", COMPARE_SUMMARY_HEADER, summary))
        categories = []
        if cfg.stimulus is not None:
            stim = load_stimulus(cfg.stimulus, cfg.categories, cfg.allow_extra_categories)
            cmap = correlation_map(pa, actual)
            mask = significant_channels(cmap, alpha=cfg.significance["alpha"],
                                        method=cfg.significance["method"],
                                        n_perm=cfg.significance["n_perm"], seed=cfg.seed)
            delta = delta_mse(pa, pb, actual, mask)
            for cat in stim.categories():
                in_cat = stim.category_mask(cat)
                if in_cat.all() or not in_cat.any():
                    logger.warning("category %s: one group empty; skipped", cat)
                    continue
                rep = category_improvement(delta, in_cat, cfg.fdr_alpha)
                outputs.append(report.write_text(out / f"category_{cat}.csv", rep.to_csv()))
                categories.append(cat)
        return outputs, {"counts": {k: int(np.sum(labels == k)) for k in ("a_better", "b_better", "ns")},
                         "categories": categories}

    runner.run("compare", _files(args.pred_a, args.pred_b, responses) +
               ([cfg.stimulus] if cfg.stimulus else []),
               {"n_perm": cfg.n_perm, "seed": cfg.seed, "fdr_alpha": cfg.fdr_alpha,
                "significance": cfg.significance}, fn)
    write_manifest(out, cfg.raw, runner.records)
    print(json.dumps(runner.records["compare"]["info"]["counts"]))
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    needed = _files(run_dir / "corr", run_dir / "mask", run_dir / "layer_corr")
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        print("missing artifacts:\n" + "\n".join(missing), file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out) if args.out else run_dir / "report"
    corr = read_tensor(run_dir / "corr")
    mask = read_tensor(run_dir / "mask").data.astype(bool)
    layer = read_tensor(run_dir / "layer_corr")
    r = corr.data
    report.write_text(out / "corr_heatmap.svg", report.heatmap_svg(
        r, title="held-out Pearson r per channel and window", vmin=-1, vmax=1))
    report.write_text(out / "mask_heatmap.svg", report.heatmap_svg(
        mask.astype(float), title="significant cells", vmin=-1, vmax=1))
    report.write_text(out / "layer_corr_heatmap.svg", report.heatmap_svg(
        layer.data, title="mean r per layer and window", row_label="layer",
        vmin=-1, vmax=1))
    report.write_text(out / "cells.csv", report.cell_table_csv(r, np.isfinite(r), None, mask))
    hyp = run_dir / "hypotheses.md"
    if hyp.exists():
        shutil.copyfile(hyp, out / "hypotheses.md")
    else:
        report.write_text(out / "hypotheses.md", "| Hypothesis | Validity | p-value |\n|---|---|---|\n")
    print(json.dumps({"report_dir": str(out)}))
    return EXIT_OK


# -- stats subcommands --------------------------------------------------------

def _read_matrix(text_or_path: str) -> list:
    p = Path(text_or_path)
    text = p.read_text() if p.exists() else text_or_path
    text = text.strip()
    if text.startswith("["):
        return json.loads(text)
    rows = []
    for line in csv.reader(io.StringIO(text)):
        if line:
            rows.append([float(c) if c.strip() not in ("", "nan", "NA") else float("nan") for c in line])
    return rows


def _read_series(text_or_path: str) -> np.ndarray:
    data = _read_matrix(text_or_path)
    return np.asarray(data, dtype=float).ravel()


def cmd_stats(args) -> int:
    t0 = time.perf_counter()
    test = args.test
    if test == "chi2":
        res = chi_square_independence(_read_matrix(args.table)).to_json()
    elif test == "binomial":
        res = binomial_test(args.k, args.n, args.p0, args.side).to_json()
    elif test == "ttest":
        res = t_test_two_sample(_read_series(args.a), _read_series(args.b),
                                pooled=not args.welch).to_json()
    elif test == "fdr":
        reject = bh_fdr(_read_series(args.input), args.alpha)
        res = {"reject": reject.tolist(), "n_rejected": int(reject.sum()), "alpha": args.alpha}
    elif test == "kalpha":
        res = {"alpha": krippendorff_alpha(np.asarray(_read_matrix(args.input), dtype=float))}
    elif test == "merge":
        res = {"in_category": merge_annotations(np.asarray(_read_matrix(args.input)),
                                                args.min_agree).tolist()}
    elif test == "permutation":
        cols = np.asarray(_read_matrix(args.input), dtype=float)
        res = permutation_test(cols[:, 0], cols[:, 1], cols[:, 2], n_perm=args.n_perm,
                               seed=args.seed or 0).to_json()
    elif test == "mcq":
        items = load_items(args.input)
        if args.out:
            report.write_text(args.out, score_table(items, args.option_only))
        res = {"accuracy": mcq_accuracy(items, args.option_only), "n_items": len(items)}
    else:  # pragma: no cover - argparse restricts choices
        raise ValidationError(f"unknown test {test}")
    res["runtime_s"] = time.perf_counter() - t0
    print(json.dumps(res, sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    case = BenchCase.from_dict(load_json(args.case)) if args.case else BenchCase()
    result = bench_encode(case) if args.kind == "encode" else bench_permute(case)
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        report.write_text(args.out, text)
    print(text, end="")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="cap on worker threads (numba and BLAS)")
    common.add_argument("--resume", action="store_true", help="skip stages whose inputs are unchanged")
    common.add_argument("--llm", help="LLM endpoint base URL, or 'mock'")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="megdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a planted synthetic dataset")
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    p = sub.add_parser("denoise", parents=[common], help="cross-subject denoising")
    p.add_argument("--out")
    p.set_defaults(func=cmd_denoise)
    p = sub.add_parser("encode", parents=[common], help="layer sweep with nested-CV ridge")
    p.add_argument("--out")
    p.set_defaults(func=cmd_encode)
    p = sub.add_parser("evaluate", parents=[common], help="correlation map, mask and word MSE")
    p.add_argument("--pred", help="prediction bundle stem")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    p = sub.add_parser("diverge", parents=[common], help="rank sentences and extract D0/D1")
    p.add_argument("--errors", help="word MSE bundle stem")
    p.add_argument("--out")
    p.set_defaults(func=cmd_diverge)
    p = sub.add_parser("hypothesize", parents=[common], help="propose and verify hypotheses")
    p.add_argument("--split", help="corpus split JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_hypothesize)
    p = sub.add_parser("pipeline", parents=[common], help="run every stage in order")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pipeline)
    p = sub.add_parser("compare", parents=[common], help="compare two prediction bundles")
    p.add_argument("--pred-a", required=False, help="reference (base) prediction bundle stem")
    p.add_argument("--pred-b", required=False, help="candidate (fine-tuned) prediction bundle stem")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("report", parents=[common], help="render heatmaps and tables for a run")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("stats", parents=[common], help="standalone statistical tests")
    tests = p.add_subparsers(dest="test", required=True)
    t = tests.add_parser("chi2", help="chi-square independence")
    t.add_argument("--table", required=True, help="JSON matrix, CSV text, or file path")
    t = tests.add_parser("binomial", help="exact binomial test")
    t.add_argument("--k", type=int, required=True)
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--p0", type=float, default=0.5)
    t.add_argument("--side", choices=("greater", "less", "two-sided"), default="greater")
    t = tests.add_parser("ttest", help="two-sample t-test")
    t.add_argument("--a", required=True)
    t.add_argument("--b", required=True)
    t.add_argument("--welch", action="store_true")
    t = tests.add_parser("fdr", help="Benjamini-Hochberg")
    t.add_argument("--input", required=True)
    t.add_argument("--alpha", type=float, default=0.05)
    t = tests.add_parser("kalpha", help="Krippendorff's alpha (raters x items)")
    t.add_argument("--input", required=True)
    t = tests.add_parser("merge", help="merge rater annotations by vote")
    t.add_argument("--input", required=True)
    t.add_argument("--min-agree", type=int, default=2)
    t = tests.add_parser("permutation", help="permutation comparison of two predictors")
    t.add_argument("--input", required=True, help="CSV with columns D,P1,P2")
    t.add_argument("--n-perm", type=int, default=10000)
    t = tests.add_parser("mcq", help="multiple-choice scoring from logits JSONL")
    t.add_argument("--input", required=True)
    t.add_argument("--option-only", action="store_true")
    t.add_argument("--out")
    for action in tests.choices.values():
        action.set_defaults(func=cmd_stats)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", parents=[common], help="performance harness")
    p.add_argument("kind", choices=("encode", "permute"))
    p.add_argument("--case", help="BenchCase JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        _permute.set_threads(args.threads)
    try:
        with threadpool_limits(args.threads):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportError as exc:
        print(f"LLM transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (ValidationError, MegdiffError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
