"""Emit the external-trainer launch command and a mirrored config file.

Training itself is delegated; this module only renders the command the
trainer is invoked with, so the exact flags stay auditable.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

log = logging.getLogger(__name__)


class TrainConfigError(Exception):
    pass


@dataclass
class TrainPlan:
    backbone_model: str = "$BACKBONE_MODEL"
    dataset_path: str = "$DATASET"
    output_dir: str = "$SAVE_PATH"
    learning_rate: float = 5e-5
    epochs: float = 3.0
    per_device_batch: int = 8
    grad_accum: int = 4
    scheduler: str = "cosine"
    template: str = "vanilla"
    finetuning_type: str = "lora"
    lora_target: str = "all"
    # Run-specific; rendered as a $SAVE_STEP placeholder until overridden.
    save_steps: int | None = None
    logging_steps: int = 10
    gpus: int = 8
    master_port: int = 9901
    precision: str = "fp16"
    deepspeed_config: str = "scripts/ds_config_min_scale.json"


def _fmt_lr(lr: float) -> str:
    s = f"{lr:g}"
    if "e" in s:
        mantissa, exp = s.split("e")
        s = f"{mantissa}e{int(exp)}"
    return s


def _validate(plan: TrainPlan) -> None:
    if plan.epochs <= 0:
        raise TrainConfigError(f"epochs must be positive, got {plan.epochs}")
    if plan.per_device_batch <= 0:
        raise TrainConfigError(f"batch size must be positive, got {plan.per_device_batch}")
    if plan.grad_accum <= 0:
        raise TrainConfigError(f"grad accumulation must be positive, got {plan.grad_accum}")
    if plan.learning_rate <= 0:
        raise TrainConfigError(f"learning rate must be positive, got {plan.learning_rate}")
    if plan.gpus <= 0:
        raise TrainConfigError(f"gpu count must be positive, got {plan.gpus}")
    if plan.precision != "fp16":
        raise TrainConfigError(f"only fp16 is supported, got {plan.precision!r}")
    # Shell-variable placeholders stand in for run-specific paths and are
    # exempt from the existence check.
    if not plan.dataset_path.startswith("$") and not Path(plan.dataset_path).exists():
        raise TrainConfigError(f"dataset does not exist: {plan.dataset_path}")


def emit_command(plan: TrainPlan) -> str:
    """Render the trainer launch command for the given plan."""
    _validate(plan)
    if plan.save_steps is None:
        save_steps = "$SAVE_STEP"
        log.warning("save_steps not set; emitting $SAVE_STEP placeholder to override at launch")
    else:
        save_steps = str(plan.save_steps)
    return (
        f"deepspeed --num_gpus {plan.gpus} --master_port {plan.master_port}"
        f"  src/train_bash.py \\\n"
        f"    --deepspeed {plan.deepspeed_config} \\\n"
        f"    --stage sft \\\n"
        f"    --model_name_or_path {plan.backbone_model} \\\n"
        f"    --do_train \\\n"
        f"    --dataset {plan.dataset_path} \\\n"
        f"    --template {plan.template} \\\n"
        f"    --finetuning_type {plan.finetuning_type} \\\n"
        f"    --lora_target {plan.lora_target} \\\n"
        f"    --output_dir {plan.output_dir} \\\n"
        f"    --per_device_train_batch_size {plan.per_device_batch} \\\n"
        f"    --gradient_accumulation_steps {plan.grad_accum} \\\n"
        f"    --lr_scheduler_type {plan.scheduler} \\\n"
        f"    --logging_steps {plan.logging_steps} \\\n"
        f"    --save_steps {save_steps} \\\n"
        f"    --learning_rate {_fmt_lr(plan.learning_rate)} \\\n"
        f"    --num_train_epochs {float(plan.epochs)!r} \\\n"
        f"    --plot_loss \\\n"
        f"    --{plan.precision} \\\n"
    )


def emit_files(plan: TrainPlan, out_dir: str | Path) -> tuple[Path, Path]:
    """Write the launch script and a mirrored structured config; never runs training."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    script = out_dir / "run_train.sh"
    script.write_text("#!/bin/sh\n" + emit_command(plan), encoding="utf-8")
    script.chmod(0o755)
    config = out_dir / "train_config.json"
    config.write_text(json.dumps(asdict(plan), indent=2) + "\n", encoding="utf-8")
    return script, config
