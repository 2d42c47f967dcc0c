"""Command-line pipeline driver.

Subcommands: pretrain-epitope, pretrain-cdr3, transfer-alpha, finetune,
generate, predict-genes, train-assembler, assemble, evaluate, inspect.
Every command is a pure function of (config, input files): rerunning with
the same seed yields byte-identical checkpoints and CSVs. Exit codes:
0 success, 1 runtime/config failure, 2 missing or invalid input,
3 checkpoint/manifest mismatch, 4 corrupt checkpoint.

The environment variable LSMTCR_THREADS caps internal (BLAS) parallelism;
it must be set before the process starts.
"""

from __future__ import annotations

import os

_threads = os.environ.get("LSMTCR_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import assembler as asm  # noqa: E402
from . import cdr3_gpt as gpt  # noqa: E402
from . import epitope_bert as ebert  # noqa: E402
from . import metrics as mx  # noqa: E402
from .checkpoint import load_checkpoint, load_params, read_manifest, require_meta, save_checkpoint, vocab_hash  # noqa: E402
from .config import (  # noqa: E402
    DEFAULT_EPOCHS,
    RunConfig,
    assembler_config,
    build_run_config,
    decoder_config,
    encoder_config,
    schedule,
)
from .data import load_corpus, load_dataset  # noqa: E402
from .errors import CheckpointError, DataError, LsmtcrError, ManifestMismatch  # noqa: E402
from .optim import AdamW  # noqa: E402
from .vocab import VOCAB, GeneVocab, build_gene_vocab  # noqa: E402

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_MISSING_INPUT = 2
EXIT_MISMATCH = 3
EXIT_CORRUPT = 4

VOCAB_HASH = vocab_hash(VOCAB.symbols)

GENERATION_HEADER = ["epitope", "chain", "rank", "cdr3", "logprob", "temperature", "seed"]
ASSEMBLY_HEADER = ["chain", "cdr3", "v_gene", "j_gene", "full_sequence", "source"]
DIVERSITY_HEADER = ["condition", "jaccard2", "diversity_ratio", "novel_ratio",
                    "shannon_rel", "simpson_rel", "aa_div", "length_realism", "composite"]
GENES_HEADER = ["chain", "cdr3", "v_gene", "j_gene"]


def _fmt(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else format(x, ".10g")


def write_csv(path: Path, header: list[str], rows: list[list]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_training_log(out: Path, log: list[tuple[int, float, float]], figures: bool):
    write_csv(out / "training_log.csv",
              ["step", "loss", "lr"],
              [[step, f"{loss:.6f}", f"{lr:.8f}"] for step, loss, lr in log])
    if figures and log:
        from .figures import training_curve_figure

        training_curve_figure(log, out / "loss_curve.png")


def _epochs(cfg: RunConfig, command: str) -> int:
    return cfg.epochs if cfg.epochs != -1 else DEFAULT_EPOCHS[command]


def _opt_kwargs(cfg: RunConfig, total_steps: int) -> dict:
    return dict(lr_peak=cfg.lr_peak, weight_decay=cfg.weight_decay,
                total_steps=max(total_steps, 1), warmup_fraction=cfg.warmup_fraction)


def _steps(n_items: int, batch_size: int, epochs: int) -> int:
    return ((n_items + batch_size - 1) // batch_size) * epochs


def save_model(out: Path, param_set, meta: dict):
    arrays = {p.name: p.tensor.data for p in param_set.unique()}
    save_checkpoint(out, arrays, meta)


# -- checkpoint loaders --------------------------------------------------------


def load_encoder(path: str) -> tuple[ebert.EpitopeEncoder, dict]:
    arrays, meta = load_checkpoint(path)
    require_meta(meta, "kind", "epitope_encoder")
    require_meta(meta, "vocab_hash", VOCAB_HASH)
    cfg = ebert.EncoderConfig(
        d_model=meta["d_model"], n_heads=meta["n_heads"], d_head=meta["d_head"],
        n_layers=meta["n_layers"], d_ff=meta["d_ff"], max_len=meta["max_len"],
        time_steps=meta["time_steps"], time_kind=meta["time_kind"],
        vocab_size=meta["vocab_size"])
    model = ebert.EpitopeEncoder(cfg, seed=0)
    load_params(model.params, arrays)
    return model, meta


def load_decoder(path: str) -> tuple[gpt.Cdr3Decoder, dict]:
    arrays, meta = load_checkpoint(path)
    require_meta(meta, "kind", "cdr3_decoder")
    require_meta(meta, "vocab_hash", VOCAB_HASH)
    cfg = gpt.DecoderConfig(
        d_model=meta["d_model"], n_layers=meta["n_layers"], n_heads=meta["n_heads"],
        d_head=meta["d_head"], d_ff=meta["d_ff"], max_len=meta["max_len"],
        vocab_size=meta["vocab_size"], cross_attend=meta["cross_attend"],
        d_cond=meta["d_cond"])
    model = gpt.Cdr3Decoder(cfg, seed=0)
    load_params(model.params, arrays)
    return model, meta


def load_two_stage(path: str) -> tuple[asm.GenePredictor, asm.ChainAssembler, dict]:
    arrays, meta = load_checkpoint(path)
    require_meta(meta, "kind", "two_stage_assembler")
    require_meta(meta, "vocab_hash", VOCAB_HASH)
    genes = GeneVocab(v_labels=tuple(meta["v_labels"]), j_labels=tuple(meta["j_labels"]))
    cfg = asm.AssemblerConfig(
        d_model=meta["d_model"], n_heads=meta["n_heads"], d_head=meta["d_head"],
        n_enc_layers=meta["n_enc_layers"], n_dec_layers=meta["n_dec_layers"],
        d_ff=meta["d_ff"], max_cdr3_len=meta["max_cdr3_len"],
        max_chain_len=meta["max_chain_len"], vocab_size=meta["vocab_size"])
    predictor = asm.GenePredictor(cfg, genes, seed=0)
    chain_model = asm.ChainAssembler(cfg, genes, seed=0)
    load_params(predictor.params, {k[len("stage1."):]: v for k, v in arrays.items()
                                   if k.startswith("stage1.")})
    load_params(chain_model.params, {k[len("stage2."):]: v for k, v in arrays.items()
                                     if k.startswith("stage2.")})
    return predictor, chain_model, meta


# -- commands -------------------------------------------------------------------


def cmd_pretrain_epitope(args) -> int:
    cfg = _run_config(args)
    corpus = load_corpus(args.corpus)
    enc_cfg = encoder_config(cfg)
    sched = schedule(cfg)
    model = ebert.EpitopeEncoder(enc_cfg, seed=cfg.seed)
    epochs = _epochs(cfg, "pretrain-epitope")
    opt = AdamW(model.params, **_opt_kwargs(cfg, _steps(len(corpus), cfg.batch_size, epochs)))
    log: list = []
    ebert.train_epitope_encoder(corpus, model, opt, sched, seed=cfg.seed, epochs=epochs,
                                batch_size=cfg.batch_size, log=log)
    acc, loss = ebert.validate(corpus, model, sched, seed=cfg.seed)
    out = Path(args.out)
    meta = dict(enc_cfg.meta(), vocab_hash=VOCAB_HASH, steps=opt.step_count, seed=cfg.seed,
                p_min=cfg.p_min, p_max=cfg.p_max)
    save_model(out, model.params, meta)
    write_training_log(out, log, not args.no_figures)
    print(f"pretrain-epitope: {len(corpus)} sequences, {opt.step_count} steps, "
          f"validation accuracy {acc:.4f}, loss {loss:.4f}")
    print(f"checkpoint written to {out}")
    return EXIT_OK


def cmd_pretrain_cdr3(args) -> int:
    cfg = _run_config(args)
    corpus = load_corpus(args.corpus)
    dec_cfg = decoder_config(cfg)
    model = gpt.Cdr3Decoder(dec_cfg, seed=cfg.seed)
    epochs = _epochs(cfg, "pretrain-cdr3")
    opt = AdamW(model.params, **_opt_kwargs(cfg, _steps(len(corpus), cfg.batch_size, epochs)))
    log: list = []
    gpt.pretrain(corpus, model, opt, seed=cfg.seed, epochs=epochs,
                 batch_size=cfg.batch_size, log=log)
    per_token = gpt.corpus_loss(corpus, model)
    out = Path(args.out)
    meta = dict(dec_cfg.meta(), vocab_hash=VOCAB_HASH, steps=opt.step_count, seed=cfg.seed,
                chain=args.chain)
    save_model(out, model.params, meta)
    write_training_log(out, log, not args.no_figures)
    print(f"pretrain-cdr3 [{args.chain}]: {len(corpus)} sequences, {opt.step_count} steps, "
          f"per-token loss {per_token:.4f}")
    print(f"checkpoint written to {out}")
    return EXIT_OK


def cmd_transfer_alpha(args) -> int:
    cfg = _run_config(args)
    arrays, meta = load_checkpoint(args.init)
    require_meta(meta, "kind", "cdr3_decoder")
    require_meta(meta, "vocab_hash", VOCAB_HASH)
    corpus = load_corpus(args.corpus)
    dec_cfg = gpt.DecoderConfig(
        d_model=meta["d_model"], n_layers=meta["n_layers"], n_heads=meta["n_heads"],
        d_head=meta["d_head"], d_ff=meta["d_ff"], max_len=meta["max_len"],
        vocab_size=meta["vocab_size"], dropout=cfg.dropout)
    epochs = _epochs(cfg, "transfer-alpha")
    log: list = []
    model = gpt.transfer_to_alpha(arrays, meta, corpus, dec_cfg,
                                  _opt_kwargs(cfg, _steps(len(corpus), cfg.batch_size, epochs)),
                                  seed=cfg.seed, epochs=epochs, batch_size=cfg.batch_size, log=log)
    per_token = gpt.corpus_loss(corpus, model)
    out = Path(args.out)
    out_meta = dict(dec_cfg.meta(), vocab_hash=VOCAB_HASH, steps=len(log), seed=cfg.seed,
                    chain="alpha", transferred_from=str(args.init))
    save_model(out, model.params, out_meta)
    write_training_log(out, log, not args.no_figures)
    print(f"transfer-alpha: {len(corpus)} sequences, per-token loss {per_token:.4f}")
    print(f"checkpoint written to {out}")
    return EXIT_OK


def _chain_pairs(records, chain: str) -> list[tuple[str, str]]:
    pairs = []
    for rec in records:
        cdr3 = rec.cdr3_alpha if chain == "alpha" else rec.cdr3_beta
        if cdr3 is not None:
            pairs.append((rec.epitope, cdr3))
    return pairs


def cmd_finetune(args) -> int:
    cfg = _run_config(args)
    encoder, _ = load_encoder(args.encoder)
    arrays, meta = load_checkpoint(args.init)
    require_meta(meta, "kind", "cdr3_decoder")
    require_meta(meta, "vocab_hash", VOCAB_HASH)
    records = load_dataset(args.dataset)
    pairs = _chain_pairs(records, args.chain)
    if not pairs:
        raise DataError(f"dataset has no {args.chain}-chain pairs")
    dec_cfg = gpt.DecoderConfig(
        d_model=meta["d_model"], n_layers=meta["n_layers"], n_heads=meta["n_heads"],
        d_head=meta["d_head"], d_ff=meta["d_ff"], max_len=meta["max_len"],
        vocab_size=meta["vocab_size"], dropout=cfg.dropout,
        cross_attend=True, d_cond=encoder.cfg.d_model)
    model = gpt.Cdr3Decoder(dec_cfg, seed=cfg.seed)
    adapters = tuple(f"blocks.{i}.{part}" for i in range(dec_cfg.n_layers)
                     for part in ("cross", "lnx", "gate"))
    load_params(model.params, arrays, allow_missing=adapters)
    policy = gpt.default_freeze_policy(dec_cfg.n_layers)
    epochs = _epochs(cfg, "finetune")
    opt = AdamW(model.params, **_opt_kwargs(cfg, _steps(len(pairs), cfg.batch_size, epochs)))
    log: list = []
    losses = gpt.finetune_conditional(pairs, encoder, model, policy, opt, seed=cfg.seed,
                                      epochs=epochs, batch_size=cfg.batch_size, log=log)
    out = Path(args.out)
    out_meta = dict(dec_cfg.meta(), vocab_hash=VOCAB_HASH, steps=opt.step_count, seed=cfg.seed,
                    chain=args.chain, frozen=list(policy.patterns))
    save_model(out, model.params, out_meta)
    write_training_log(out, log, not args.no_figures)
    print(f"finetune [{args.chain}]: {len(pairs)} pairs, final loss {losses[-1]:.4f}")
    print(f"checkpoint written to {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _run_config(args)
    encoder, _ = load_encoder(args.encoder)
    model, meta = load_decoder(args.decoder)
    if not meta["cross_attend"]:
        raise ManifestMismatch("decoder checkpoint has no conditioning adapters; "
                               "run finetune before generate")
    if meta["d_cond"] != encoder.cfg.d_model:
        raise ManifestMismatch(f"checkpoint d_cond mismatch: decoder expects {meta['d_cond']}, "
                               f"encoder width is {encoder.cfg.d_model}")
    if args.epitope:
        epitopes = [args.epitope]
    elif args.epitopes:
        epitopes = load_corpus(args.epitopes)
    else:
        raise DataError("generate needs --epitope or --epitopes")
    chain = meta.get("chain", "beta")
    rows = []
    for ei, epitope in enumerate(epitopes):
        for ti, tau in enumerate(cfg.temperature):
            block_seed = int(np.random.SeedSequence([cfg.seed, ei, ti]).generate_state(1)[0])
            sampler = gpt.SamplerConfig(temperature=tau, max_len=cfg.max_cdr3_len,
                                        n_samples=cfg.samples, seed=block_seed)
            for rank, g in enumerate(gpt.generate(epitope, encoder, model, sampler)):
                rows.append([epitope, chain, rank, g.cdr3, f"{g.logprob:.6f}",
                             str(float(tau)), block_seed])
    out = Path(args.out)
    write_csv(out / "generation.csv", GENERATION_HEADER, rows)
    print(f"generate: {len(rows)} sequences "
          f"({len(epitopes)} epitopes x {len(cfg.temperature)} temperatures x {cfg.samples} samples)")
    print(f"output written to {out / 'generation.csv'}")
    return EXIT_OK


def cmd_train_assembler(args) -> int:
    cfg = _run_config(args)
    records = load_dataset(args.dataset)
    genes = build_gene_vocab(records, args.chain)
    asm_cfg = assembler_config(cfg)
    predictor = asm.GenePredictor(asm_cfg, genes, seed=cfg.seed)
    chain_model = asm.ChainAssembler(asm_cfg, genes, seed=cfg.seed + 1)
    epochs = _epochs(cfg, "train-assembler")
    total = _steps(len(records), cfg.batch_size, epochs)
    opt1 = AdamW(predictor.params, **_opt_kwargs(cfg, total))
    opt2 = AdamW(chain_model.params, **_opt_kwargs(cfg, total))
    log: list = []
    result = asm.train_two_stage(records, args.chain, predictor, chain_model, opt1, opt2,
                                 seed=cfg.seed, epochs=epochs, batch_size=cfg.batch_size, log=log)
    out = Path(args.out)
    arrays = {f"stage1.{p.name}": p.tensor.data for p in predictor.params.unique()}
    arrays.update({f"stage2.{p.name}": p.tensor.data for p in chain_model.params.unique()})
    meta = dict(asm_cfg.meta(), kind="two_stage_assembler", vocab_hash=VOCAB_HASH,
                chain=args.chain, v_labels=list(genes.v_labels), j_labels=list(genes.j_labels),
                steps=opt1.step_count, seed=cfg.seed, skipped_records=result.skipped)
    save_checkpoint(out, arrays, meta)
    write_training_log(out, log, not args.no_figures)
    print(f"train-assembler [{args.chain}]: stage1 loss {result.stage1_losses[-1]:.4f}, "
          f"stage2 loss {result.stage2_losses[-1]:.4f}, skipped {result.skipped} records")
    print(f"checkpoint written to {out}")
    return EXIT_OK


def _cdr3_inputs(args, chain: str) -> list[str]:
    if args.cdr3s:
        return load_corpus(args.cdr3s)
    if args.dataset:
        records = load_dataset(args.dataset)
        key = "cdr3_alpha" if chain == "alpha" else "cdr3_beta"
        return [getattr(r, key) for r in records if getattr(r, key) is not None]
    raise DataError("need --cdr3s or --dataset")


def cmd_predict_genes(args) -> int:
    predictor, _, meta = load_two_stage(args.ckpt)
    chain = meta["chain"]
    cdr3s = _cdr3_inputs(args, chain)
    rows = []
    for cdr3 in cdr3s:
        v, j = predictor.predict_labels(cdr3)
        rows.append([chain, cdr3, v, j])
    out = Path(args.out)
    write_csv(out / "genes.csv", GENES_HEADER, rows)
    print(f"predict-genes [{chain}]: {len(rows)} CDR3s")
    print(f"output written to {out / 'genes.csv'}")
    return EXIT_OK


def cmd_assemble(args) -> int:
    predictor, chain_model, meta = load_two_stage(args.ckpt)
    chain = meta["chain"]
    cdr3s = _cdr3_inputs(args, chain)
    rows = []
    outputs = asm.assemble_pipeline(cdr3s, predictor, chain_model)
    for cdr3, (v, j, full) in zip(cdr3s, outputs):
        rows.append([chain, cdr3, v, j, full, args.source])
    out = Path(args.out)
    write_csv(out / "assembly.csv", ASSEMBLY_HEADER, rows)
    print(f"assemble [{chain}]: {len(rows)} chains from {args.source} CDR3s")
    print(f"output written to {out / 'assembly.csv'}")
    return EXIT_OK


def _read_generation_csv(path: Path) -> dict[str, list[str]]:
    if not path.exists():
        raise DataError(f"generation file not found: {path}")
    by_temp: dict[str, list[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != GENERATION_HEADER:
            raise DataError(f"unexpected generation header in {path}")
        for row in reader:
            by_temp.setdefault(row["temperature"], []).append(row["cdr3"])
    if not by_temp:
        raise DataError(f"no rows in {path}")
    return by_temp


def _sanitize(label: str) -> str:
    return label.replace("=", "_").replace(".", "_")


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    out = Path(args.out)
    did_anything = False
    if args.generated:
        if not args.reference:
            raise DataError("diversity evaluation needs --reference")
        reference = load_corpus(args.reference)
        by_temp = _read_generation_csv(Path(args.generated))
        reports = []
        lengths = {}
        for temp in sorted(by_temp, key=float):
            rep = [s for s in by_temp[temp] if s]
            dropped = len(by_temp[temp]) - len(rep)
            if dropped:
                print(f"condition tau={temp}: dropped {dropped} empty sequences", file=sys.stderr)
            if not rep:
                raise DataError(f"condition tau={temp} has no non-empty sequences")
            reports.append(mx.diversity_report(f"tau={temp}", rep, reference, seed=cfg.seed))
            lengths[f"tau={temp}"] = [len(s) for s in rep]
        if len(reports) >= 2:
            mx.composite_score(reports)
        rows = [[r.condition] + [_fmt(v) for v in r.values()] + [_fmt(r.composite)]
                for r in reports]
        write_csv(out / "diversity_report.csv", DIVERSITY_HEADER, rows)
        for r in reports:
            write_csv(out / f"metrics_{_sanitize(r.condition)}.csv", ["metric", "value"],
                      [[name, _fmt(value)] for name, value in
                       list(zip(mx.DIVERSITY_FIELDS, r.values())) + [("composite", r.composite)]])
        if not args.no_figures:
            from .figures import diversity_figure, length_histogram_figure

            diversity_figure(reports, out / "diversity_metrics.png")
            length_histogram_figure(lengths, [len(s) for s in reference], out / "lengths.png")
        print(f"evaluate: {len(reports)} conditions -> {out / 'diversity_report.csv'}")
        did_anything = True
    if args.assembly:
        if not args.dataset:
            raise DataError("similarity evaluation needs --dataset")
        records = load_dataset(args.dataset)
        pairs, gen_full, ref_full, chain = _aligned_pairs(Path(args.assembly), records)
        report = mx.similarity_report(pairs)
        extras = {}
        for k in (2, 3):
            extras[f"jsd{k}"] = mx.js_divergence(mx.kmer_spectrum(gen_full, k),
                                                 mx.kmer_spectrum(ref_full, k))
        rows = [["exact_match_rate", _fmt(report.exact_match_rate)],
                ["mean_norm_hamming", _fmt(report.mean_norm_hamming)],
                ["mean_norm_levenshtein", _fmt(report.mean_norm_levenshtein)],
                ["jaccard3", _fmt(report.jaccard3)]]
        rows += [[k, _fmt(v)] for k, v in sorted(extras.items())]
        write_csv(out / f"similarity_{chain}.csv", ["metric", "value"], rows)
        if not args.no_figures:
            from .figures import similarity_figure

            similarity_figure(report, extras, out / f"similarity_{chain}.png")
        print(f"evaluate: {len(pairs)} aligned pairs -> {out / f'similarity_{chain}.csv'}")
        did_anything = True
    if not did_anything:
        raise DataError("evaluate needs --generated and/or --assembly")
    return EXIT_OK


def _aligned_pairs(assembly_path: Path, records):
    if not assembly_path.exists():
        raise DataError(f"assembly file not found: {assembly_path}")
    with open(assembly_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ASSEMBLY_HEADER:
            raise DataError(f"unexpected assembly header in {assembly_path}")
        rows = list(reader)
    if not rows:
        raise DataError(f"no rows in {assembly_path}")
    chain = rows[0]["chain"]
    ref_by_cdr3 = {}
    for rec in records:
        cdr3 = rec.cdr3_alpha if chain == "alpha" else rec.cdr3_beta
        full = rec.full_alpha if chain == "alpha" else rec.full_beta
        if cdr3 is not None and full is not None:
            ref_by_cdr3.setdefault(cdr3, full)
    pairs = []
    for row in rows:
        ref = ref_by_cdr3.get(row["cdr3"])
        if ref is not None:
            pairs.append((row["full_sequence"], ref))
    if not pairs:
        raise DataError("no assembly rows matched the dataset by CDR3")
    gen_full = [g for g, _ in pairs]
    ref_full = [r for _, r in pairs]
    return pairs, gen_full, ref_full, chain


def cmd_inspect(args) -> int:
    entries = read_manifest(args.ckpt)
    weights = Path(args.ckpt) / "weights.bin"
    if not weights.exists():
        raise CheckpointError(f"missing weights file: {weights}")
    expected = 0
    groups: dict[str, int] = {}
    total = 0
    for name, _, shape, offset in entries:
        n = int(np.prod(shape)) if shape else 1
        if offset != expected:
            raise CheckpointError(f"parameter {name!r}: offset {offset} != expected {expected}")
        expected += 4 * n
        group = name.split(".")[0]
        groups[group] = groups.get(group, 0) + n
        total += n
    if weights.stat().st_size != expected:
        raise CheckpointError(f"weights file size {weights.stat().st_size} != manifest total {expected}")
    for group in sorted(groups):
        print(f"{group:24s} {groups[group]:>12,d}")
    print(f"{'total':24s} {total:>12,d}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def _run_config(args) -> RunConfig:
    overrides = {}
    for key in ("seed", "preset", "epochs", "lr_peak", "batch_size", "d_model", "n_layers",
                "n_heads", "d_head", "d_ff", "schedule_steps", "p_min", "p_max", "samples",
                "dropout", "max_epitope_len", "max_cdr3_len", "max_chain_len"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    if getattr(args, "temperature", None):
        overrides["temperature"] = tuple(float(x) for x in args.temperature.split(","))
    return build_run_config(getattr(args, "config", None), **overrides)


def _add_common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--config", help="plain-text key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--preset", choices=["desk", "full"], default=None)
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr-peak", dest="lr_peak", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsmtcr",
        description="Epitope-conditioned TCR design: pretraining, transfer, fine-tuning, "
                    "generation, assembly, and repertoire evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain-epitope", help="train the masked epitope encoder")
    p.add_argument("--corpus", required=True, help="plain-text epitopes, one per line")
    _add_common(p)
    p.set_defaults(fn=cmd_pretrain_epitope)

    p = sub.add_parser("pretrain-cdr3", help="train the causal CDR3 decoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--chain", choices=["alpha", "beta"], default="beta")
    _add_common(p)
    p.set_defaults(fn=cmd_pretrain_cdr3)

    p = sub.add_parser("transfer-alpha", help="adapt a beta decoder to the alpha chain")
    p.add_argument("--init", required=True, help="beta decoder checkpoint")
    p.add_argument("--corpus", required=True, help="alpha CDR3 corpus")
    _add_common(p)
    p.set_defaults(fn=cmd_transfer_alpha)

    p = sub.add_parser("finetune", help="epitope-conditioned fine-tuning with partial freezing")
    p.add_argument("--dataset", required=True, help="paired-record CSV")
    p.add_argument("--chain", choices=["alpha", "beta"], default="beta")
    p.add_argument("--encoder", required=True, help="epitope encoder checkpoint")
    p.add_argument("--init", required=True, help="pretrained decoder checkpoint")
    _add_common(p)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("generate", help="temperature-controlled CDR3 sampling")
    p.add_argument("--encoder", required=True)
    p.add_argument("--decoder", required=True, help="conditioned decoder checkpoint")
    p.add_argument("--epitope", help="single epitope string")
    p.add_argument("--epitopes", help="file of epitopes, one per line")
    p.add_argument("--temperature", help="comma-separated list, e.g. 0.5,1.0,1.5")
    p.add_argument("--samples", type=int, default=None, help="sequences per epitope per temperature")
    _add_common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train-assembler", help="train Stage-1 gene prediction and Stage-2 assembly")
    p.add_argument("--dataset", required=True)
    p.add_argument("--chain", choices=["alpha", "beta"], default="beta")
    _add_common(p)
    p.set_defaults(fn=cmd_train_assembler)

    p = sub.add_parser("predict-genes", help="Stage-1 V/J prediction for CDR3s")
    p.add_argument("--ckpt", required=True, help="two-stage assembler checkpoint")
    p.add_argument("--cdr3s", help="plain-text CDR3s, one per line")
    p.add_argument("--dataset", help="paired-record CSV to pull CDR3s from")
    _add_common(p)
    p.set_defaults(fn=cmd_predict_genes)

    p = sub.add_parser("assemble", help="full pipeline: genes then full-length chains")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cdr3s", help="plain-text CDR3s, one per line")
    p.add_argument("--dataset", help="paired-record CSV to pull CDR3s from")
    p.add_argument("--source", choices=["known", "denovo"], default="known")
    _add_common(p)
    p.set_defaults(fn=cmd_assemble)

    p = sub.add_parser("evaluate", help="diversity and similarity reports with figures")
    p.add_argument("--generated", help="generation.csv from the generate command")
    p.add_argument("--reference", help="reference corpus for diversity metrics")
    p.add_argument("--assembly", help="assembly.csv from the assemble command")
    p.add_argument("--dataset", help="paired-record CSV with reference full-length chains")
    _add_common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("inspect", help="print parameter counts for a checkpoint")
    p.add_argument("ckpt", help="checkpoint directory")
    p.set_defaults(fn=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ManifestMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except LsmtcrError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
