"""End-to-end synthetic protocol driven through the CLI stages."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cli, net, tokenizer, train
from .config import PipelineConfig


@dataclass
class ProtocolResult:
    table_csv: str
    report: dict
    seconds: float
    stage_seconds: dict


def _run(stage: list[str]) -> None:
    code = cli.main(stage)
    if code != 0:
        raise RuntimeError(f"stage {stage[0]} failed with exit code {code}")


def run_protocol(cfg: PipelineConfig, workdir, patient: str = "synth") -> ProtocolResult:
    """synth -> preprocess -> tokenize -> pretrain -> finetune -> predict -> evaluate -> report."""
    work = Path(workdir)
    work.mkdir(parents=True, exist_ok=True)
    cfg_path = work / "pipeline.cfg"
    cfg_path.write_text(cfg.to_text())
    common = ["--config", str(cfg_path)]
    d = {name: work / name for name in ("synth", "pre", "tok", "pt", "ft", "pred", "eval", "report")}

    stages = [
        ("synth", ["synth", *common, "--out", str(d["synth"])]),
        ("preprocess", ["preprocess", *common, "--input", str(d["synth"] / "recording.edf"),
                        "--out", str(d["pre"])]),
        ("tokenize", ["tokenize", *common, "--input", str(d["pre"] / "clean.eegraw"), "--out", str(d["tok"])]),
        ("pretrain", ["pretrain", *common, "--tokens", str(d["tok"] / "tokens.tok"), "--out", str(d["pt"])]),
        ("finetune", ["finetune", *common, "--input", str(d["pre"] / "clean.eegraw"),
                      "--annotations", str(d["synth"] / "annotations.csv"),
                      "--checkpoint", str(d["pt"] / "pretrain.ckpt"), "--out", str(d["ft"])]),
        ("predict", ["predict", *common, "--input", str(d["pre"] / "clean.eegraw"),
                     "--checkpoint", str(d["ft"] / "finetune.ckpt"), "--out", str(d["pred"])]),
        ("evaluate", ["evaluate", *common, "--timeline", str(d["pred"] / "timeline.csv"),
                      "--annotations", str(d["synth"] / "annotations.csv"),
                      "--input", str(d["pre"] / "clean.eegraw"),
                      "--metrics", str(d["ft"] / "finetune_metrics.json"),
                      "--patient", patient, "--out", str(d["eval"])]),
        ("report", ["report", *common, "--reports", str(d["eval"] / "report.json"), "--out", str(d["report"])]),
    ]
    t0 = time.perf_counter()
    timings = {}
    for name, argv in stages:
        ts = time.perf_counter()
        _run(argv)
        timings[name] = time.perf_counter() - ts
    return ProtocolResult(
        table_csv=(d["report"] / "table.csv").read_text(),
        report=json.loads((d["eval"] / "report.json").read_text()),
        seconds=time.perf_counter() - t0,
        stage_seconds=timings,
    )


def project_training_seconds(cfg: PipelineConfig, probe_steps: int = 1) -> dict:
    """Time ``probe_steps`` real optimizer steps of each loop and extrapolate.

    Uses the configured model, batch size and accumulation on synthetic data of
    the configured shape, so the projection reflects this machine.
    """
    mcfg = cfg.model_config()
    rng = np.random.default_rng(cfg["seed"])
    C = cfg["synth.channels"]
    W = round(cfg["segment_s"] * cfg["fs"])
    state = tokenizer.TokenizerState(0.0, 20.0, cfg["tokenizer.k"], cfg["tokenizer.levels"])

    n_tok = max(10 * mcfg.block_size, 4096)
    stream = tokenizer.TokenStream(rng.integers(0, mcfg.vocab_size, n_tok).astype(np.uint16), 1, n_tok, state)
    pre = cfg.pretrain_run()
    pre.steps = probe_steps
    ts = time.perf_counter()
    result = train.pretrain(stream, mcfg, pre)
    pre_step = (time.perf_counter() - ts) / probe_steps

    params, clf = net.transfer_for_finetune(result.checkpoint, C, rng)
    ft = cfg.finetune_run()
    windows = rng.standard_normal((ft.batch_size, C, W)) * 20.0
    y = np.arange(ft.batch_size) % 2
    opt = train.OptimizerState.from_run(ft)
    trainable = {**params, **{"classifier." + k: v for k, v in clf.items()}}
    ts = time.perf_counter()
    for _ in range(probe_steps):
        grads = {}
        for _ in range(ft.grad_accum):
            _, bg, cg = net.finetune_loss_and_grads(windows, y, (1.0, 1.0), state, params, clf, mcfg,
                                                    train_mode=True, rng=rng)
            for k, g in list(bg.items()) + [("classifier." + k, g) for k, g in cg.items()]:
                grads[k] = grads.get(k, 0.0) + g / ft.grad_accum
        train.optimizer_step(trainable, grads, opt)
    ft_step = (time.perf_counter() - ts) / probe_steps
    return {
        "pretrain_step_s": pre_step,
        "finetune_step_s": ft_step,
        "pretrain_total_s": pre_step * cfg["pretrain.steps"],
        "finetune_total_s": ft_step * cfg["finetune.steps"],
        "total_s": pre_step * cfg["pretrain.steps"] + ft_step * cfg["finetune.steps"],
    }
