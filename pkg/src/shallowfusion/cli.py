"""Command-line entry point.

Every subcommand reads an optional ``--config`` JSON file; explicit flags
override config values, which override built-in defaults.  Outputs are
written to a temporary file and renamed on success, so a failed run leaves
no partial output behind.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, sub_seed
from .eval.metrics import evaluate_pairs
from .eval.sweep import sweep, write_sweep_csv
from .eval.testset import EvalSet, G2PMap, Lexicon, build_eval_set, build_lm_integration_wordlist
from .fusion import FusionConfig, decode_batch
from .models import FORMAT_VERSION, AttentionAcousticModel, CharLanguageModel, Featurizer
from .mwer import MwerConfig, mwer_finetune
from .prune import LOG_BASES, STAGES, PruneConfig, load_am_stats, load_vocabulary, prune_pipeline
from .text import CharVocab, CorpusStats, count_unigrams_file, read_corpus, synth_corpus, synth_words, write_corpus

logger = logging.getLogger("shallowfusion")


class CLIError(RuntimeError):
    pass


def pick(flag, fallback):
    """Flag value when given, otherwise the config value."""
    return fallback if flag is None else flag


def parse_delta(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


@contextlib.contextmanager
def atomic_output(path):
    """Yield a temporary path next to ``path``; move it into place only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def write_json(obj, path) -> None:
    with atomic_output(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _finite(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


def log_resolved(command: str, resolved: dict) -> None:
    logger.info("resolved config for %s: %s", command, json.dumps(resolved, sort_keys=True, default=_finite))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_corpus(args, cfg: ExperimentConfig) -> str:
    seed = pick(args.seed, cfg.seeds.seed)
    alphabet = pick(args.alphabet, cfg.vocab.alphabet)
    resolved = {"words": args.words, "zipf": args.zipf, "sentences": args.sentences, "seed": seed,
                "alphabet": alphabet, "corpus_seed": sub_seed(seed, "corpus"),
                "words_seed": sub_seed(seed, "words")}
    log_resolved("synth-corpus", resolved)
    if args.word_list:
        words = read_corpus(args.word_list)
    else:
        words = synth_words(args.words, alphabet=alphabet, seed=sub_seed(seed, "words"))
    lines = synth_corpus(words, args.zipf, args.sentences, seed=sub_seed(seed, "corpus"),
                         min_words=args.min_words, max_words=args.max_words)
    with atomic_output(args.out) as tmp:
        write_corpus(lines, tmp)
    if args.words_out:
        with atomic_output(args.words_out) as tmp:
            write_corpus(words, tmp)
    return f"wrote {len(lines)} sentences over {len(words)} word types to {args.out}"


def cmd_stats(args, cfg) -> str:
    stats = count_unigrams_file(args.corpus, workers=args.workers)
    with atomic_output(args.out) as tmp:
        stats.save(tmp)
    return f"{len(stats)} word types, {stats.n_words} tokens, {stats.n_sentences} sentences -> {args.out}"


def cmd_prune(args, cfg) -> str:
    p = cfg.prune
    pc = PruneConfig(vocab_path=args.vocab, rare_filter=args.rare_filter or p.rare_filter or args.stage == "2*",
                     rare_threshold=pick(args.rare_threshold, p.rare_threshold), am_stats_path=args.stats,
                     target=pick(args.target, p.target), seed=pick(args.seed, cfg.seed_for("sampling")),
                     log_base=pick(args.log_base, p.log_base),
                     sample_after_rare_filter=args.sample_after_rare_filter or p.sample_after_rare_filter,
                     workers=args.workers)
    log_resolved("prune", {**asdict(pc), "stage": args.stage})
    stages = pc.stages() if args.stage == "all" else [args.stage]
    lines = read_corpus(args.corpus)
    out, report = prune_pipeline(lines, pc, stages=stages)
    with atomic_output(args.out) as tmp:
        write_corpus(out, tmp)
    if args.report:
        write_json(report.to_dict(), args.report)
    counts = " -> ".join(str(c) for c in report.counts())
    return f"stages {','.join(stages)}: {counts} sentences -> {args.out}"


def _vocab_for(args, cfg, texts=None) -> CharVocab:
    if getattr(args, "vocab_file", None):
        return CharVocab.load(args.vocab_file)
    return CharVocab(pick(getattr(args, "alphabet", None), cfg.vocab.alphabet))


def cmd_train_lm(args, cfg) -> str:
    m = cfg.models
    seed = pick(args.seed, cfg.seeds.seed)
    lm = CharLanguageModel(vocab=_vocab_for(args, cfg), embed_size=m.lm_embed_size,
                           hidden_size=pick(args.hidden_size, m.lm_hidden_size),
                           proj_size=pick(args.proj_size, m.lm_proj_size),
                           learning_rate=pick(args.learning_rate, m.lm_learning_rate),
                           epochs=pick(args.epochs, m.lm_epochs), batch_size=m.lm_batch_size,
                           max_steps=args.max_steps, seed=sub_seed(seed, "init-lm"))
    log_resolved("train-lm", lm.get_params(deep=False) | {"vocab": lm.vocab.symbols, "seed": seed})
    lm.fit(read_corpus(args.corpus))
    with atomic_output(args.out) as tmp:
        lm.save(tmp)
    return (f"LM with {lm.n_parameters} parameters, final loss {lm.loss_curve_[-1]:.4f} "
            f"after {len(lm.loss_curve_)} steps -> {args.out}")


def cmd_train_am(args, cfg) -> str:
    m = cfg.models
    seed = pick(args.seed, cfg.seeds.seed)
    vocab = _vocab_for(args, cfg)
    fz = Featurizer(vocab=vocab, dim=pick(args.feature_dim, m.feature_dim), sigma=pick(args.sigma, m.sigma),
                    table_seed=sub_seed(seed, "table"), noise_seed=sub_seed(seed, "noise"))
    am = AttentionAcousticModel(vocab=vocab, enc_size=m.am_enc_size, dec_size=m.am_dec_size,
                                learning_rate=pick(args.learning_rate, m.am_learning_rate),
                                epochs=pick(args.epochs, m.am_epochs), max_steps=args.max_steps,
                                seed=sub_seed(seed, "init-am"))
    log_resolved("train-am", am.get_params(deep=False) | {"vocab": vocab.symbols, "featurizer": fz.config(),
                                                          "seed": seed})
    transcripts = read_corpus(args.transcripts)
    am.fit(fz.transform(transcripts), transcripts)
    am.featurizer_config_ = fz.config()
    with atomic_output(args.out) as tmp:
        am.save(tmp)
    return (f"AM with {am.n_parameters} parameters, final loss {am.loss_curve_[-1]:.4f} "
            f"after {len(am.loss_curve_)} steps -> {args.out}")


def _train_featurizer(am, seed_name: str, seed: int) -> Featurizer:
    fc = getattr(am, "featurizer_config_", None)
    if not fc:
        raise CLIError("AM checkpoint carries no featurizer settings; train it with `train-am`")
    return Featurizer(vocab=am.vocab_, dim=fc["dim"], sigma=fc["sigma"], table_seed=fc["table_seed"],
                      noise_seed=sub_seed(seed, seed_name) if seed_name else fc["noise_seed"])


def _fusion(args, cfg) -> FusionConfig:
    f = cfg.fusion
    return FusionConfig(alpha=pick(args.alpha, f.alpha), beta=pick(args.beta, f.beta), tau=pick(args.tau, f.tau),
                        beam_size=pick(args.beam_size, f.beam_size),
                        max_eos_logprob_delta=pick(args.delta, f.max_eos_logprob_delta),
                        max_steps=pick(args.max_steps, f.max_steps))


def cmd_mwer_finetune(args, cfg) -> str:
    mw = cfg.mwer
    seed = pick(args.seed, cfg.seeds.seed)
    fusion = FusionConfig(alpha=pick(args.alpha, mw.alpha), beta=pick(args.beta, mw.beta),
                          beam_size=pick(args.beam_size, mw.beam_size),
                          max_eos_logprob_delta=pick(args.delta, mw.max_eos_logprob_delta))
    mc = MwerConfig(mode=pick(args.mode, mw.mode), fusion=fusion, relative=not args.raw_errors and mw.relative,
                    learning_rate=pick(args.learning_rate, mw.learning_rate), steps=pick(args.steps, mw.steps),
                    seed=sub_seed(seed, "mwer"))
    am = AttentionAcousticModel.load(args.am)
    lm = CharLanguageModel.load(args.lm, vocab=am.vocab_) if args.lm else None
    log_resolved("mwer-finetune", {"mode": mc.mode, "fusion": fusion.to_dict(), "relative": mc.relative,
                                   "learning_rate": mc.learning_rate, "steps": mc.steps, "seed": seed})
    transcripts = read_corpus(args.transcripts)
    feats = _train_featurizer(am, "", seed).transform(transcripts)
    tuned, log = mwer_finetune(am, feats, transcripts, mc, lm=lm)
    with atomic_output(args.out) as tmp:
        tuned.save(tmp)
    with atomic_output(args.log) as tmp, open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["step", "loss", "beam_wer"], lineterminator="\n")
        w.writeheader()
        w.writerows(log)
    tail = log[-min(20, len(log)):] if log else []
    mean_wer = np.mean([r["beam_wer"] for r in tail]) if tail else float("nan")
    return f"{len(log)} MWER steps, recent beam WER {mean_wer:.3f} -> {args.out}"


def _load_models(args):
    am = AttentionAcousticModel.load(args.am)
    lm = CharLanguageModel.load(args.lm, vocab=am.vocab_) if args.lm else None
    return am, lm


def cmd_build_testset(args, cfg) -> str:
    e = cfg.eval
    seed = pick(args.seed, cfg.seeds.seed)
    selector = pick(args.selector, e.selector)
    am = AttentionAcousticModel.load(args.am)
    fz = _train_featurizer(am, "eval-noise", seed)
    kwargs = {}
    if selector == "lm_integration":
        if not (args.am_stats and args.lm_stats):
            raise CLIError("--am-stats and --lm-stats are required for the lm_integration selector")
        kwargs["wordlist"] = build_lm_integration_wordlist(
            load_am_stats(args.am_stats), CorpusStats.load(args.lm_stats),
            pick(args.am_max, e.am_max), pick(args.lm_min, e.lm_min))
    elif selector == "surprising_pron":
        if not (args.lexicon and args.g2p):
            raise CLIError("--lexicon and --g2p are required for the surprising_pron selector")
        kwargs["lexicon"] = Lexicon.load(args.lexicon)
        kwargs["g2p"] = G2PMap.load(args.g2p)
    n = pick(args.n, e.n)
    log_resolved("build-testset", {"selector": selector, "n": n, "seed": seed, "featurizer": fz.get_params()
                                   | {"vocab": None}})
    es = build_eval_set(read_corpus(args.corpus), selector, n, sub_seed(seed, "eval-sampling"), fz, **kwargs)
    with atomic_output(args.out) as tmp:
        es.save(tmp)
    return f"{len(es)} utterances ({selector}) -> {args.out}"


def cmd_decode(args, cfg) -> str:
    am, lm = _load_models(args)
    fusion = _fusion(args, cfg)
    n_best = pick(args.n_best, cfg.fusion.n_best)
    log_resolved("decode", fusion.to_dict() | {"n_best": n_best, "am": args.am, "lm": args.lm})
    es = EvalSet.load(args.testset)
    results = decode_batch(am, es.features, fusion, lm, n_best=n_best, workers=args.workers)
    vocab = am.vocab_
    n_trunc = 0
    with atomic_output(args.out) as tmp, open(tmp, "w", encoding="utf-8") as fh:
        for uid, ref, res in zip(es.ids, es.transcripts, results):
            best = res.best.text(vocab)
            truncated = 2 * len(best.split()) <= len(ref.split())
            n_trunc += truncated
            rec = {"utterance_id": uid, "best": best, "truncated": truncated,
                   "n_best": [{"text": h.text(vocab), "am_lp": h.am_logprob, "lm_lp": h.lm_logprob,
                               "coverage": h.coverage, "fused": h.fused} for h in res.hypotheses]}
            fh.write(json.dumps(rec) + "\n")
    return f"decoded {len(results)} utterances ({n_trunc} truncated) -> {args.out}"


def cmd_evaluate(args, cfg) -> str:
    es = EvalSet.load(args.testset)
    refs = dict(zip(es.ids, es.transcripts))
    ids, hyps = [], []
    with open(args.decoded, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                uid, best = rec["utterance_id"], rec["best"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise CLIError(f"{args.decoded}:{lineno}: bad decode record ({exc})") from None
            if uid not in refs:
                raise CLIError(f"{args.decoded}:{lineno}: unknown utterance id {uid!r}")
            ids.append(uid)
            hyps.append(best)
    rep = evaluate_pairs(hyps, [refs[i] for i in ids], ids)
    write_json(rep.to_dict(with_records=not args.no_records), args.out)
    return (f"WER {rep.wer:.4f}, truncation WER {rep.truncation_wer:.4f}, "
            f"truncated {rep.truncated_fraction:.3f} of {len(rep.records)} -> {args.out}")


def parse_grid(text: str) -> list[tuple[int, float]]:
    """``"2:0.05,4:inf"`` -> [(2, 0.05), (4, inf)]."""
    cells = []
    for item in text.split(","):
        beam, _, delta = item.strip().partition(":")
        if not delta:
            raise argparse.ArgumentTypeError(f"grid cell {item!r} must look like BEAM:DELTA")
        cells.append((int(beam), parse_delta(delta)))
    return cells


def cmd_sweep(args, cfg) -> str:
    am, lm = _load_models(args)
    grid = args.grid if args.grid is not None else [(int(b), float(d)) for b, d in cfg.eval.grid]
    base = _fusion(args, cfg)
    log_resolved("sweep", {"grid": grid, "fusion": base.to_dict()})
    es = EvalSet.load(args.testset)
    rows = sweep(am, es.features, es.transcripts, grid, lm=lm, base=base, workers=args.workers)
    with atomic_output(args.out) as tmp:
        write_sweep_csv(rows, tmp)
    return f"{len(rows)} grid cells -> {args.out}"


def cmd_experiment(args, cfg) -> str:
    from . import experiments as ex

    seeds = args.seeds if args.seeds is not None else list(cfg.experiments.seeds)
    summary: dict = {"name": args.name, "seeds": seeds}
    if args.name in ("truncation", "adaptation"):
        wcfg = ex.TruncationWorldConfig.from_dict(cfg.experiments.truncation)
        summary["config"] = asdict(wcfg)
        runs = []
        for s in seeds:
            run = ex.TruncationExperiment(s, wcfg)
            if args.name == "truncation":
                res = run.run_truncation()
                ok, msg = ex.truncation_criterion(res)
                runs.append({"seed": s, "pass": ok, "detail": msg, **res.summary()})
            else:
                res = run.run_adaptation()
                runs.append({"seed": s, "range_before": res.range_before, "range_after": res.range_after,
                             "before": [asdict(r) for r in res.before], "after": [asdict(r) for r in res.after]})
        summary["runs"] = runs
    else:
        wcfg = ex.RareWorldConfig.from_dict(cfg.experiments.rare)
        summary["config"] = asdict(wcfg)
        runs = [ex.run_rare_filter(s, wcfg).to_dict() for s in seeds]
        summary["runs"] = runs
        summary["mean_wer_random"] = ex.mean_or_nan(r["wer_random"] for r in runs)
        summary["mean_wer_filtered"] = ex.mean_or_nan(r["wer_filtered"] for r in runs)
    write_json(summary, args.out)
    return f"experiment {args.name} over seeds {seeds} -> {args.out}"


# ---------------------------------------------------------------------------
# parser


def _add_fusion_flags(p):
    p.add_argument("--alpha", type=float, help="LM weight")
    p.add_argument("--beta", type=float, help="coverage reward weight")
    p.add_argument("--tau", type=float, help="coverage attention-mass threshold")
    p.add_argument("--beam-size", type=int)
    p.add_argument("--delta", type=parse_delta, help="max EOS logprob delta ('inf' allowed)")
    p.add_argument("--max-steps", type=int)


def _add_model_paths(p, lm_required=False):
    p.add_argument("--am", required=True, help="AM checkpoint")
    p.add_argument("--lm", required=lm_required, help="LM checkpoint (omit for a pure AM decode)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shallowfusion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__} (checkpoint format {FORMAT_VERSION})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--seed", type=int, help="top-level seed (named sub-seeds derive from it)")
    common.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", parents=[common], help="write a Zipfian synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--words", type=int, default=1000, help="number of word types")
    p.add_argument("--word-list", help="use these word types (one per line) instead of random ones")
    p.add_argument("--words-out", help="also write the word types, rank order")
    p.add_argument("--zipf", type=float, default=1.0)
    p.add_argument("--sentences", type=int, default=1000)
    p.add_argument("--min-words", type=int, default=1)
    p.add_argument("--max-words", type=int, default=4)
    p.add_argument("--alphabet")
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("stats", parents=[common], help="unigram counts as TSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("prune", parents=[common], help="vocab filter, log(n) dedup, rare filter, sampling")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", help="word vocabulary, one per line")
    p.add_argument("--stats", help="AM-side unigram stats TSV")
    p.add_argument("--rare-filter", action="store_true")
    p.add_argument("--rare-threshold", type=int)
    p.add_argument("--sample-after-rare-filter", action="store_true")
    p.add_argument("--target", type=int)
    p.add_argument("--log-base", choices=sorted(LOG_BASES))
    p.add_argument("--stage", choices=("all",) + STAGES, default="all")
    p.add_argument("--report", help="write the PruneReport JSON here")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("train-lm", parents=[common], help="train the character LM")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-file")
    p.add_argument("--alphabet")
    p.add_argument("--hidden-size", type=int)
    p.add_argument("--proj-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("train-am", parents=[common], help="featurize transcripts and train the AM")
    p.add_argument("--transcripts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-file")
    p.add_argument("--alphabet")
    p.add_argument("--sigma", type=float)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_train_am)

    p = sub.add_parser("mwer-finetune", parents=[common], help="MWER fine-tuning of the AM")
    _add_model_paths(p)
    p.add_argument("--transcripts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", required=True, help="CSV log: step,loss,beam_wer")
    p.add_argument("--mode", choices=("fused", "am_only"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--beam-size", type=int)
    p.add_argument("--delta", type=parse_delta)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--raw-errors", action="store_true", help="use raw edit counts instead of relative ones")
    p.set_defaults(func=cmd_mwer_finetune)

    p = sub.add_parser("build-testset", parents=[common], help="select and featurize an eval set")
    p.add_argument("--corpus", required=True)
    p.add_argument("--am", required=True, help="AM checkpoint (supplies the featurizer)")
    p.add_argument("--out", required=True)
    p.add_argument("--selector", choices=("lm_integration", "surprising_pron", "random"))
    p.add_argument("--n", type=int)
    p.add_argument("--am-stats")
    p.add_argument("--lm-stats")
    p.add_argument("--am-max", type=int)
    p.add_argument("--lm-min", type=int)
    p.add_argument("--lexicon")
    p.add_argument("--g2p")
    p.set_defaults(func=cmd_build_testset)

    p = sub.add_parser("decode", parents=[common], help="fused beam search, JSON lines out")
    _add_model_paths(p)
    p.add_argument("--testset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-best", type=int)
    _add_fusion_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", parents=[common], help="WER and truncation WER of decode output")
    p.add_argument("--decoded", required=True)
    p.add_argument("--testset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-records", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="(beam, EOS delta) grid, CSV out")
    _add_model_paths(p)
    p.add_argument("--testset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=parse_grid, help="e.g. 2:0.05,4:0.5,8:inf")
    _add_fusion_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("experiment", parents=[common], help="run a trend experiment end to end")
    p.add_argument("name", choices=("truncation", "adaptation", "rare"))
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.config:
            log_resolved("config", cfg.to_dict())
        message = args.func(args, cfg)
    except (CLIError, ConfigError, ValueError, RuntimeError, OSError, KeyError) as exc:
        err = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
