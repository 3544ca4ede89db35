"""Command-line entry point.

    layoutforge <command> [--config FILE] [--out DIR] [--seed N] [--n N]
                [--task {complete,rearrange,stylize,uncond}] [--timesteps T+Tdec]
                [--input FILE]

All artifacts go under ``--out`` in fixed subdirectories (corpus/, ckpt/,
samples/, reports/, svg/). Every run writes ``reports/manifest_<command>.json``
with the resolved config, seed and outputs. Exit codes: 0 success,
1 validation / configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import __version__, checks, io, toydata
from .config import Config, load_config, parse_timesteps
from .core import Instruction, Layout
from .errors import RuntimeFailure, ValidationError
from .evaluation import report
from .model.network import GraphTransformerConfig
from .model.train import DecoderModel, PriorModel, TrainConfig, train_decoder, train_prior
from .qfeat.vq import VqConfig, VqModel, train_vq
from .render import render_svg
from .synth import Models, PartialScene, TASK_ALIASES, generate_batch, zero_shot

log = logging.getLogger("layoutforge")

SUBDIRS = ("corpus", "ckpt", "samples", "reports", "svg")
SPLITS = ("train", "val", "test")
COMMANDS = ("curate", "train-vq", "train-prior", "train-decoder", "sample", "task", "eval", "render", "schedule-check")


class Run:
    """Resolved invocation: config, seed, output tree and the manifest being built."""

    def __init__(self, args):
        self.args = args
        self.cfg: Config = load_config(args.config)
        self.seed = args.seed
        self.out = Path(args.out or self.cfg.paths.out)
        self.T, self.T_dec = (
            parse_timesteps(args.timesteps) if args.timesteps else (self.cfg.schedules.T, self.cfg.schedules.T_dec)
        )
        self.outputs: list[str] = []
        self.extra: dict = {}

    def path(self, sub: str, name: str) -> Path:
        p = self.out / sub
        p.mkdir(parents=True, exist_ok=True)
        return p / name

    def wrote(self, p) -> None:
        self.outputs.append(str(Path(p).relative_to(self.out)))

    @property
    def vocab(self):
        v = self.cfg.vocab
        return toydata.default_vocab(v.kind, v.N_max, v.n_f or None, v.K_f or None)

    def train_config(self, steps: int) -> TrainConfig:
        s, tr = self.cfg.schedules, self.cfg.training
        return TrainConfig(
            steps=steps, batch_size=tr.batch_size, lr=tr.lr, grad_clip=tr.grad_clip, cond_dropout=tr.cond_dropout,
            seed=self.seed, log_every=tr.log_every, checkpoint_every_epochs=tr.checkpoint_every_epochs,
            T=s.T, eta_c=s.eta_c, eta_f=s.eta_f, eta_e=s.eta_e, variant=s.variant,
            lambda_f=tr.lambda_f, lambda_e=tr.lambda_e, lambda_aux=tr.lambda_aux,
            T_dec=s.T_dec, dec_schedule=s.dec_schedule,
        )

    def net_config(self, variant: str) -> GraphTransformerConfig:
        m = self.cfg.model
        return GraphTransformerConfig(depth=m.depth, d=m.d, heads=m.heads, d_e=m.d_e, d_y=m.d_y, variant=variant)

    def manifest(self, command: str) -> None:
        doc = {
            "command": command,
            "seed": self.seed,
            "timesteps": f"{self.T}+{self.T_dec}",
            "config": self.cfg.to_dict(),
            "config_path": self.args.config,
            "outputs": sorted(self.outputs),
            "version": __version__,
            "torch": torch.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            **self.extra,
        }
        p = self.path("reports", f"manifest_{command}.json")
        io.atomic_write_text(p, io.dumps_json(doc) + "\n")


# --------------------------------------------------------------------------
# corpus helpers


def _corpus_path(run: Run, split: str) -> Path:
    """Prefer the VQ-requantized split when it exists."""
    q = run.out / "corpus" / f"{split}_vq.jsonl"
    return q if q.exists() else run.out / "corpus" / f"{split}.jsonl"


def _read_corpus(path: Path) -> list:
    if not path.exists():
        raise ValidationError(f"input file not found: {path}")
    return [toydata.Sample.from_record(r) for r in io.read_jsonl(path)]


def _read_layouts(path: Path):
    if not path.exists():
        raise ValidationError(f"input file not found: {path}")
    out = []
    for r in io.read_jsonl(path):
        layout, _, instr = io.parse_sample(r)
        out.append((layout, instr))
    return out


def _load_models(run: Run) -> Models:
    for name in ("prior", "decoder"):
        if not (run.out / "ckpt" / f"{name}.lfnn").exists():
            raise ValidationError(f"checkpoint not found: {run.out / 'ckpt' / f'{name}.lfnn'} (run train-{name})")
    prior = PriorModel.load(run.out / "ckpt" / "prior.lfnn")
    dec = DecoderModel.load(run.out / "ckpt" / "decoder.lfnn")
    return Models(prior, dec)


def _write_samples(run: Run, stem: str, layouts, instrs) -> Path:
    p = run.path("samples", f"{stem}.jsonl")
    io.write_jsonl(p, [io.sample_record(l, instruction=i) for l, i in zip(layouts, instrs)])
    run.wrote(p)
    rep = report(layouts, [i if i is not None and i.triplets else None for i in instrs])
    jp, cp = run.path("reports", f"{stem}.json"), run.path("reports", f"{stem}.csv")
    rep.write(jp, cp)
    run.wrote(jp)
    run.wrote(cp)
    run.extra["metrics"] = rep.summary
    for k, v in rep.summary.items():
        if v["n"]:
            print(f"{k}: mean={v['mean']:.4f} std={v['std']:.4f} n={v['n']}")
    return p


# --------------------------------------------------------------------------
# commands


def cmd_curate(run: Run) -> None:
    n = run.args.n or run.cfg.data.n_samples
    corpus = toydata.curate(run.cfg.vocab.kind, n, run.vocab, seed=run.seed)
    parts = toydata.split(corpus, run.cfg.data.ratios(), seed=run.seed)
    p = run.path("corpus", "corpus.jsonl")
    io.write_jsonl(p, [s.to_record() for s in corpus])
    run.wrote(p)
    for name, part in zip(SPLITS, parts):
        p = run.path("corpus", f"{name}.jsonl")
        io.write_jsonl(p, [s.to_record() for s in part])
        run.wrote(p)
    print(f"curated {len(corpus)} samples: " + ", ".join(f"{k}={len(v)}" for k, v in zip(SPLITS, parts)))


def cmd_train_vq(run: Run) -> None:
    vocab = run.vocab
    if vocab.layout_kind != "3D":
        raise ValidationError("train-vq applies to 3D corpora (2D features are Lab bins and fonts)")
    splits = {s: _read_corpus(run.out / "corpus" / f"{s}.jsonl") for s in SPLITS}
    cfg = VqConfig(K_f=vocab.K_f, n_f=vocab.n_f, steps=run.cfg.training.vq_steps, seed=run.seed)
    X_val = toydata.feature_matrix(splits["val"]) if splits["val"] else None
    vq = train_vq(toydata.feature_matrix(splits["train"]), cfg, X_val)
    prefix = run.path("ckpt", "vq")
    vq.save(prefix)
    run.wrote(f"{prefix}.lfnn")
    run.wrote(f"{prefix}.lfvq")
    for s, part in splits.items():
        p = run.path("corpus", f"{s}_vq.jsonl")
        io.write_jsonl(p, [x.to_record() for x in toydata.requantize(part, vq, vocab)])
        run.wrote(p)
    run.extra["vq_history"] = [list(h) for h in vq.history]
    print(f"vq trained: final {vq.history[-1] if vq.history else None}")


def _train(run: Run, kind: str) -> None:
    train = _read_corpus(_corpus_path(run, "train"))
    tr = run.cfg.training
    steps = run.args.n or (tr.prior_steps if kind == "prior" else tr.decoder_steps)
    cfg = run.train_config(steps)
    log_path = run.path("reports", f"{kind}_log.csv")
    ckpt = run.out / "ckpt"
    ckpt.mkdir(parents=True, exist_ok=True)
    fn = train_prior if kind == "prior" else train_decoder
    model = fn(train, run.vocab, cfg, run.net_config(kind if kind == "prior" else "decoder"), log_path, ckpt)
    name = "prior" if kind == "prior" else "decoder"
    run.wrote(log_path)
    run.wrote(ckpt / f"{name}.lfnn")
    for p in sorted(ckpt.glob(f"{name}_epoch*.lfnn")):
        run.wrote(p)
    last = model.log[-1] if model.log else {}
    print(f"{name} trained for {steps} steps: final loss {last.get('loss')}")


def cmd_sample(run: Run) -> None:
    models = _load_models(run)
    test = _read_corpus(_corpus_path(run, "test"))
    n = run.args.n or len(test)
    if run.args.task and TASK_ALIASES.get(run.args.task, run.args.task) == "unconditional":
        instrs = [Instruction()] * n
    else:
        if not test:
            raise ValidationError("test split is empty")
        instrs = [test[i % len(test)].instruction for i in range(n)]
    regions = [test[i % len(test)].layout.product_region for i in range(n)] if test else None
    layouts = generate_batch(instrs, models, seed=run.seed, T=run.T, T_dec=run.T_dec, product_regions=regions)
    stem = f"sample_{run.T}+{run.T_dec}"
    _write_samples(run, stem, layouts, instrs)


def cmd_task(run: Run) -> None:
    task = run.args.task
    if task is None:
        raise ValidationError("task needs --task {complete,rearrange,stylize,uncond}")
    models = _load_models(run)
    test = _read_corpus(_corpus_path(run, "test"))
    if not test:
        raise ValidationError("test split is empty")
    n = run.args.n or len(test)
    rng = np.random.default_rng(run.seed)
    full = TASK_ALIASES.get(task, task)
    layouts, instrs = [], []
    for i in range(n):
        s = test[i % len(test)]
        instr = s.instruction
        if full == "completion":
            keep = max(1, len(s.layout.objects) // 2)
            known = Layout(s.layout.kind, s.layout.bounds, s.layout.objects[:keep], s.layout.product_region)
        elif full == "stylization":
            known = s.layout
            style = int(rng.integers(toydata.N_STYLES))
            instr = Instruction((), tuple(sorted({(int(o.category), style) for o in s.layout.objects})))
        else:
            known = s.layout
        layouts.append(zero_shot(full, PartialScene(known), instr, models, rng, run.T, run.T_dec))
        instrs.append(instr)
    _write_samples(run, f"task_{full}", layouts, instrs)


def cmd_eval(run: Run) -> None:
    src = Path(run.args.input) if run.args.input else run.out / "samples" / f"sample_{run.T}+{run.T_dec}.jsonl"
    pairs = _read_layouts(src)
    rep = report([l for l, _ in pairs], [i if i is not None and i.triplets else None for _, i in pairs])
    jp, cp = run.path("reports", "eval.json"), run.path("reports", "eval.csv")
    rep.write(jp, cp)
    run.wrote(jp)
    run.wrote(cp)
    run.extra["input"] = str(src)
    run.extra["metrics"] = rep.summary
    print(rep.to_json(), end="")


def cmd_render(run: Run) -> None:
    src = Path(run.args.input) if run.args.input else run.out / "samples" / f"sample_{run.T}+{run.T_dec}.jsonl"
    pairs = _read_layouts(src)
    n = run.args.n or len(pairs)
    names = run.vocab.category_names
    for i, (layout, _) in enumerate(pairs[:n]):
        p = run.path("svg", f"{src.stem}_{i:04d}.svg")
        io.atomic_write_bytes(p, render_svg(layout, names))
        run.wrote(p)
    run.extra["input"] = str(src)
    print(f"rendered {min(n, len(pairs))} layouts")


def cmd_schedule_check(run: Run) -> None:
    results = checks.run_all()
    for r in results:
        print(r.line())
    p = run.path("reports", "schedule_check.json")
    io.atomic_write_text(p, io.dumps_json([r.to_dict() for r in results]) + "\n")
    run.wrote(p)
    run.extra["passed"] = all(r.passed for r in results)
    if not run.extra["passed"]:
        run.manifest("schedule-check")
        raise RuntimeFailure("kernel self-checks failed")


HANDLERS = {
    "curate": cmd_curate,
    "train-vq": cmd_train_vq,
    "train-prior": lambda r: _train(r, "prior"),
    "train-decoder": lambda r: _train(r, "decoder"),
    "sample": cmd_sample,
    "task": cmd_task,
    "eval": cmd_eval,
    "render": cmd_render,
    "schedule-check": cmd_schedule_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="layoutforge", description="Instruction-driven layout synthesis toolkit.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI config file (defaults are used when omitted)")
    ap.add_argument("--out", help="output root (overrides paths.out)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, help="number of samples / training steps / layouts, per command")
    ap.add_argument("--task", choices=sorted(TASK_ALIASES))
    ap.add_argument("--timesteps", help="prior and decoder steps as 'T+Tdec', e.g. 100+10")
    ap.add_argument("--input", help="samples file for eval/render")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[list] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(1)
    try:
        run = Run(args)
        HANDLERS[args.command](run)
        run.manifest(args.command)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeFailure, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
