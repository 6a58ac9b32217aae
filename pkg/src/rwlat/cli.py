"""Command-line surface: file-in/file-out workflows over the kernel.

Exit codes: 0 success, 1 validation failure, 2 I/O or format error.  Every
file-producing command writes a sidecar <output>.manifest.json recording the
resolved arguments; `rwlat rerun <manifest>` replays it bit-exactly.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from . import __version__
from .blockmask import BlockSpec, build_mask, mask_intervals, mask_to_bitset_rows
from .errors import FormatError, RwlatError, ValidationError
from .formats import (
    parse_delay_record,
    parse_lattice_record,
    parse_path_record,
    parse_tokens_record,
    read_jsonl,
    write_checkpoint,
    write_csv,
)
from .gradcheck import run_gradcheck
from .lattice import TargetSequence, log_marginal_nll
from .latency import (
    LatencyParams,
    average_lagging,
    differentiable_average_lagging,
    latency_expectation,
    path_delays,
)
from .toy import (
    LossConfig,
    SyntheticTaskSpec,
    ce_auxiliary_loss,
    generate_corpus,
    sentence_quality,
    tradeoff_curve,
    train,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_FORMAT = 2


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


class _Group(click.Group):
    """Group that maps package errors onto the exit-code contract, so the
    mapping holds for console use and test-runner invocation alike."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except FormatError as exc:
            _fail(EXIT_FORMAT, str(exc))
        except OSError as exc:
            _fail(EXIT_FORMAT, str(exc))
        except RwlatError as exc:
            _fail(EXIT_VALIDATION, str(exc))


def _write_manifest(out_path: str, command: str, argv: list[str], seed: int | None,
                    inputs: list[str], outputs: list[str], config: dict) -> None:
    manifest = {
        "tool": "rwlat",
        "version": __version__,
        "command": command,
        "argv": argv,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "config": config,
    }
    with open(out_path + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


@click.group(cls=_Group)
@click.version_option(version=__version__, prog_name="rwlat")
def cli() -> None:
    """Simultaneous-translation lattice kernel toolkit."""


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


@cli.command("loss")
@click.argument("lattices", type=click.Path(exists=True, dir_okay=False))
@click.argument("targets", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--lambda-latency", default=1.0, show_default=True)
@click.option("--lambda-ce", default=1.0, show_default=True)
@click.option("--d", default=1, show_default=True, help="Decision step size; src_len is taken as T*d.")
def cmd_loss(lattices: str, targets: str, out: str, lambda_latency: float,
             lambda_ce: float, d: int) -> None:
    """Per-sentence loss components for aligned lattice/target JSONL files."""
    lattice_list = [parse_lattice_record(rec, no) for no, rec in read_jsonl(lattices)]
    target_list = [parse_tokens_record(rec, no) for no, rec in read_jsonl(targets)]
    if len(lattice_list) != len(target_list):
        raise ValidationError(
            f"line counts differ: {len(lattice_list)} lattices vs {len(target_list)} targets"
        )
    rows = []
    had_errors = False
    for idx, (lattice, tokens) in enumerate(zip(lattice_list, target_list)):
        try:
            target = TargetSequence(tokens)
            nll, tables = log_marginal_nll(lattice, target)
            params = LatencyParams(
                src_len=lattice.num_decisions * d, tgt_len=max(len(tokens), 1), d=d
            )
            if lattice.target_len:
                lat = latency_expectation(lattice, target, params, tables=tables)
                ce = ce_auxiliary_loss(lattice, target)
            else:
                lat = 0.0
                ce = 0.0
            total = nll + lambda_latency * lat + lambda_ce * ce
            rows.append((idx, nll, lat, ce, total, None))
        except RwlatError as exc:
            had_errors = True
            rows.append((idx, None, None, None, None, str(exc)))
    write_csv(out, ["sentence_id", "nll", "latency", "ce", "total", "error"], rows)
    argv = ["loss", lattices, targets, "--out", out,
            "--lambda-latency", repr(float(lambda_latency)),
            "--lambda-ce", repr(float(lambda_ce)), "--d", str(d)]
    _write_manifest(out, "loss", argv, None, [lattices, targets], [out],
                    {"lambda_latency": lambda_latency, "lambda_ce": lambda_ce, "d": d})
    if had_errors:
        sys.exit(EXIT_VALIDATION)


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


@cli.command("gradcheck")
@click.option("--size", default="4x3", show_default=True, help="Lattice size TxU.")
@click.option("--trials", default=10, show_default=True)
@click.option("--coords", default=20, show_default=True)
@click.option("--vocab", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--step", default=1e-4, show_default=True)
@click.option("--tol-nll", default=1e-5, show_default=True)
@click.option("--tol-latency", default=1e-4, show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def cmd_gradcheck(size: str, trials: int, coords: int, vocab: int, seed: int,
                  step: float, tol_nll: float, tol_latency: float, out: str | None) -> None:
    """Validate analytic gradients against central finite differences."""
    try:
        t_str, u_str = size.lower().split("x")
        num_decisions, target_len = int(t_str), int(u_str)
    except ValueError:
        raise ValidationError(f"bad --size {size!r}, expected TxU like 4x3")
    report = run_gradcheck(
        num_decisions, target_len, vocab_size=vocab, trials=trials,
        coords_per_trial=coords, seed=seed, step=step,
        tol_nll=tol_nll, tol_latency=tol_latency,
    )
    text = "\n".join(report.lines()) + "\n"
    click.echo(text, nl=False)
    if out is not None:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        argv = ["gradcheck", "--size", size, "--trials", str(trials),
                "--coords", str(coords), "--vocab", str(vocab), "--seed", str(seed),
                "--step", repr(float(step)), "--tol-nll", repr(float(tol_nll)),
                "--tol-latency", repr(float(tol_latency)), "--out", out]
        _write_manifest(out, "gradcheck", argv, seed, [], [out],
                        {"size": size, "trials": trials, "coords": coords,
                         "vocab": vocab, "step": step,
                         "tol_nll": tol_nll, "tol_latency": tol_latency})
    if not report.passed:
        sys.exit(EXIT_VALIDATION)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _delays_from_record(record: dict, lineno: int, d: int):
    """Accept either a path record or a delay record; return per-sentence
    (delays, src_len, tgt_len, hyp_tokens_or_None, flag)."""
    flag = None
    if "actions" in record:
        path, src_len = parse_path_record(record, lineno)
        params = LatencyParams(src_len=src_len, tgt_len=max(path.num_writes, 1), d=d)
        delays = path_delays(path, params)
        return delays, src_len, path.num_writes, list(path.tokens), flag
    src_len, tgt_len, delays = parse_delay_record(record, lineno)
    if any(b < a for a, b in zip(delays, delays[1:])):
        flag = "nonmonotonic-delays"
    return delays, src_len, tgt_len, None, flag


@cli.command("eval")
@click.argument("paths", type=click.Path(exists=True, dir_okay=False))
@click.argument("refs", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--d", default=1, show_default=True, help="Source units per READ in the path logs.")
def cmd_eval(paths: str, refs: str, out: str, d: int) -> None:
    """Latency metrics (AL, DAL, path latency) and quality per sentence."""
    path_records = list(read_jsonl(paths))
    ref_list = [parse_tokens_record(rec, no) for no, rec in read_jsonl(refs)]
    if len(path_records) != len(ref_list):
        raise ValidationError(
            f"line counts differ: {len(path_records)} paths vs {len(ref_list)} refs"
        )
    rows = []
    flagged = False
    sums = np.zeros(4)
    have_quality = 0
    for idx, ((lineno, record), ref) in enumerate(zip(path_records, ref_list)):
        delays, src_len, tgt_len, hyp, flag = _delays_from_record(record, lineno, d)
        params = LatencyParams(src_len=src_len, tgt_len=max(tgt_len, 1), d=d)
        al = average_lagging(delays, params) if delays else 0.0
        dal = differentiable_average_lagging(delays, params) if delays else 0.0
        lat = sum(
            max(g - j * src_len / params.tgt_len, 0.0) / params.tgt_len
            for j, g in enumerate(delays)
        )
        quality = sentence_quality(hyp, ref) if hyp is not None else None
        if flag:
            flagged = True
        rows.append((idx, al, dal, lat, quality, flag))
        sums += (al, dal, lat, quality if quality is not None else 0.0)
        have_quality += quality is not None
    if rows:
        n = len(rows)
        mean_quality = sums[3] / have_quality if have_quality else None
        rows.append(("mean", sums[0] / n, sums[1] / n, sums[2] / n, mean_quality, None))
    write_csv(out, ["sentence_id", "al", "dal", "path_latency", "quality", "flag"], rows)
    argv = ["eval", paths, refs, "--out", out, "--d", str(d)]
    _write_manifest(out, "eval", argv, None, [paths, refs], [out], {"d": d})
    if flagged:
        sys.exit(EXIT_VALIDATION)


# ---------------------------------------------------------------------------
# train / curve
# ---------------------------------------------------------------------------


@cli.command("train")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Checkpoint JSON path.")
@click.option("--log", "log_path", default=None, type=click.Path(dir_okay=False))
@click.option("--steps", default=2000, show_default=True)
@click.option("--lr", default=0.05, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--lambda-latency", default=1.0, show_default=True)
@click.option("--lambda-ce", default=1.0, show_default=True)
@click.option("--d", default=1, show_default=True)
@click.option("--corpus-size", default=256, show_default=True)
@click.option("--swap-prob", default=0.3, show_default=True)
@click.option("--emb-dim", default=32, show_default=True)
@click.option("--hidden-dim", default=64, show_default=True)
def cmd_train(out: str, log_path: str | None, steps: int, lr: float, seed: int,
              lambda_latency: float, lambda_ce: float, d: int, corpus_size: int,
              swap_prob: float, emb_dim: int, hidden_dim: int) -> None:
    """Train the toy scorer on the synthetic swap task."""
    if log_path is None:
        log_path = out + ".log.csv"
    task = SyntheticTaskSpec(swap_prob=swap_prob, seed=seed)
    corpus = generate_corpus(task, corpus_size)
    cfg = LossConfig(lambda_latency=lambda_latency, lambda_ce=lambda_ce, d=d)
    result = train(corpus, cfg, steps=steps, lr=lr, seed=seed,
                   emb_dim=emb_dim, hidden_dim=hidden_dim, vocab=task.vocab)
    config = {
        "vocab_size": task.vocab.size,
        "eos_id": task.vocab.eos_id,
        "emb_dim": emb_dim,
        "hidden_dim": hidden_dim,
        "d": d,
        "lambda_latency": lambda_latency,
        "lambda_ce": lambda_ce,
        "steps": steps,
        "lr": lr,
        "seed": seed,
        "swap_prob": swap_prob,
        "corpus_size": corpus_size,
    }
    write_checkpoint(out, __version__, config, result.model.params)
    write_csv(log_path, ["step", "nll", "latency_loss", "ce_loss", "total"], result.log)
    argv = ["train", "--out", out, "--log", log_path, "--steps", str(steps),
            "--lr", repr(float(lr)), "--seed", str(seed),
            "--lambda-latency", repr(float(lambda_latency)),
            "--lambda-ce", repr(float(lambda_ce)), "--d", str(d),
            "--corpus-size", str(corpus_size), "--swap-prob", repr(float(swap_prob)),
            "--emb-dim", str(emb_dim), "--hidden-dim", str(hidden_dim)]
    _write_manifest(out, "train", argv, seed, [], [out, log_path], config)


@cli.command("curve")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--d-values", default="1,2", show_default=True)
@click.option("--lambdas", default="0,0.2,1.0", show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--steps", default=1500, show_default=True)
@click.option("--lr", default=0.05, show_default=True)
@click.option("--lambda-ce", default=1.0, show_default=True)
@click.option("--train-size", default=256, show_default=True)
@click.option("--eval-size", default=64, show_default=True)
@click.option("--swap-prob", default=0.3, show_default=True)
@click.option("--seed", default=0, show_default=True, help="Corpus seed.")
@click.option("--emb-dim", default=32, show_default=True)
@click.option("--hidden-dim", default=64, show_default=True)
def cmd_curve(out: str, d_values: str, lambdas: str, seeds: str, steps: int, lr: float,
              lambda_ce: float, train_size: int, eval_size: int, swap_prob: float,
              seed: int, emb_dim: int, hidden_dim: int) -> None:
    """Latency-quality trade-off grid over (d, lambda_latency) knobs."""
    try:
        d_list = [int(v) for v in d_values.split(",") if v]
        lam_list = [float(v) for v in lambdas.split(",") if v]
        seed_list = [int(v) for v in seeds.split(",") if v]
    except ValueError as exc:
        raise ValidationError(f"bad grid value: {exc}")
    task = SyntheticTaskSpec(swap_prob=swap_prob, seed=seed)
    train_corpus = generate_corpus(task, train_size + eval_size)
    eval_corpus = train_corpus[train_size:]
    train_corpus = train_corpus[:train_size]
    grid = [(d, lam) for d in d_list for lam in lam_list]
    rows = tradeoff_curve(
        train_corpus, eval_corpus, grid, seeds=seed_list, steps=steps, lr=lr,
        lambda_ce=lambda_ce, emb_dim=emb_dim, hidden_dim=hidden_dim, vocab=task.vocab,
    )
    write_csv(
        out,
        ["d", "lambda_latency", "mean_al", "mean_dal", "mean_quality"],
        [(r.d, r.lambda_latency, r.mean_al, r.mean_dal, r.mean_quality) for r in rows],
    )
    argv = ["curve", "--out", out, "--d-values", d_values, "--lambdas", lambdas,
            "--seeds", seeds, "--steps", str(steps), "--lr", repr(float(lr)),
            "--lambda-ce", repr(float(lambda_ce)), "--train-size", str(train_size),
            "--eval-size", str(eval_size), "--swap-prob", repr(float(swap_prob)),
            "--seed", str(seed), "--emb-dim", str(emb_dim), "--hidden-dim", str(hidden_dim)]
    _write_manifest(out, "curve", argv, seed, [], [out],
                    {"d_values": d_list, "lambdas": lam_list, "seeds": seed_list,
                     "steps": steps, "lr": lr, "lambda_ce": lambda_ce,
                     "train_size": train_size, "eval_size": eval_size,
                     "swap_prob": swap_prob})


# ---------------------------------------------------------------------------
# mask
# ---------------------------------------------------------------------------


@cli.command("mask")
@click.option("--m", "m", required=True, type=int)
@click.option("--r", "r", required=True, type=int)
@click.option("--len", "seq_len", required=True, type=int)
@click.option("--format", "fmt", default="grid",
              type=click.Choice(["grid", "intervals", "bitset"]), show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def cmd_mask(m: int, r: int, seq_len: int, fmt: str, out: str | None) -> None:
    """Block-attention mask for (m, r) over a sequence of the given length."""
    spec = BlockSpec(m=m, r=r, seq_len=seq_len)
    if fmt == "grid":
        mask = build_mask(spec)
        text = "\n".join("".join("1" if v else "0" for v in row) for row in mask) + "\n"
    elif fmt == "intervals":
        payload = {"seq_len": seq_len,
                   "intervals": [list(iv) for iv in mask_intervals(spec)]}
        text = json.dumps(payload, sort_keys=True) + "\n"
    else:
        rows = mask_to_bitset_rows(build_mask(spec))
        payload = {"seq_len": seq_len, "bit_order": "little",
                   "rows_hex": [row.hex() for row in rows]}
        text = json.dumps(payload, sort_keys=True) + "\n"
    if out is None:
        click.echo(text, nl=False)
        return
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(text)
    argv = ["mask", "--m", str(m), "--r", str(r), "--len", str(seq_len),
            "--format", fmt, "--out", out]
    _write_manifest(out, "mask", argv, None, [], [out],
                    {"m": m, "r": r, "seq_len": seq_len, "format": fmt})


# ---------------------------------------------------------------------------
# rerun
# ---------------------------------------------------------------------------


@cli.command("rerun")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
def cmd_rerun(manifest: str) -> None:
    """Replay a recorded manifest; outputs are reproduced bit-exactly."""
    try:
        with open(manifest, "r", encoding="utf-8") as fh:
            record = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid manifest JSON ({exc.msg})") from exc
    argv = record.get("argv")
    if not isinstance(argv, list) or not all(isinstance(a, str) for a in argv):
        raise FormatError("manifest has no usable argv list")
    cli.main(args=argv, standalone_mode=False)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
