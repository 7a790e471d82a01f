"""Deterministic training/evaluation harness and the ablation grids.

Runs Adam on the composite loss, logs a per-step loss breakdown and
per-epoch iteration-count histograms as JSON lines, keeps the checkpoint
with the best validation estimation loss and reports per-task
MAE/RMSE/STD on the test split in physical units.  All randomness (init, data order, identity
sampling) derives from the config seed.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional

import numpy as np
import torch

from idol.data import iter_batches, load_manifest, load_split
from idol.heads import TASKS, loss_total
from idol.model import IDOLModel, ModelConfig, parse_id_ratio

ABLATION_FLAGS = (
    "no_id_sp",
    "no_id_sh",
    "linear_id_sp",
    "noisy_prior",
    "random_dk_graph",
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    steps: int = 300
    batch_size: int = 16
    lam: float = 0.1
    seed: int = 0
    n: int = 64
    k: int = 4
    max_iters: int = 8
    tol: float = 1e-3
    id_ratio: str = "1:1"
    grad_clip: float = 5.0
    eval_every: int = 50
    no_id_sp: bool = False
    no_id_sh: bool = False
    linear_id_sp: bool = False
    noisy_prior: bool = False
    random_dk_graph: bool = False

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.steps < 0 or self.batch_size <= 0:
            raise ValueError("lr and batch_size must be positive, steps >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0 (0 disables clipping)")

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return TrainConfig(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class Standardizer:
    """Per-array mean/std computed from the train split only."""

    dev_mean: np.ndarray
    dev_std: np.ndarray
    cor_mean: np.ndarray
    cor_std: np.ndarray
    label_mean: np.ndarray
    label_std: np.ndarray

    @staticmethod
    def fit(train: Dict[str, np.ndarray]) -> "Standardizer":
        def stats(a):
            return a.mean(axis=0), a.std(axis=0) + 1e-8

        dm, ds = stats(train["dev"])
        cm, cs = stats(train["cor"])
        lm, ls = stats(train["labels"])
        return Standardizer(dm, ds, cm, cs, lm, ls)

    def transform_inputs(self, batch: Dict[str, np.ndarray]):
        dev = (batch["dev"] - self.dev_mean) / self.dev_std
        cor = (batch["cor"] - self.cor_mean) / self.cor_std
        return batch["ir"], dev, cor

    def transform_labels(self, labels: np.ndarray) -> np.ndarray:
        return (labels - self.label_mean) / self.label_std

    def inverse_labels(self, labels_std: np.ndarray) -> np.ndarray:
        return labels_std * self.label_std + self.label_mean

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in dataclasses.asdict(self).items()}

    @staticmethod
    def from_dict(d: dict) -> "Standardizer":
        return Standardizer(**{k: np.asarray(v) for k, v in d.items()})


def model_config_for(config: TrainConfig, grid: int) -> ModelConfig:
    tokens_side = grid // 16
    return ModelConfig(
        n=config.n,
        n_sh=parse_id_ratio(config.id_ratio, config.n),
        k=config.k,
        max_iters=config.max_iters,
        tol=config.tol,
        head_dim=config.n,
        emb_tokens=tokens_side * tokens_side,
        no_id_sp=config.no_id_sp,
        no_id_sh=config.no_id_sh,
        linear_id_sp=config.linear_id_sp,
        noisy_prior=config.noisy_prior,
        random_dk_graph=config.random_dk_graph,
        graph_seed=config.seed,
    )


def _to_tensors(ir, dev, cor, device="cpu"):
    return (
        torch.as_tensor(ir, dtype=torch.float32, device=device),
        torch.as_tensor(dev, dtype=torch.float32, device=device),
        torch.as_tensor(cor, dtype=torch.float32, device=device),
    )


def _forward_split(
    model: IDOLModel,
    split_data: Dict[str, np.ndarray],
    std: Standardizer,
    batch_size: int = 64,
):
    """Eval-mode predictions plus identities/features over a whole split."""
    model.eval()
    preds, ids, feats = [], {key: [] for key in TASKS + ("sh",)}, []
    n = split_data["labels"].shape[0]
    with torch.no_grad():
        for start in range(0, n, batch_size):
            batch = {k: v[start : start + batch_size] for k, v in split_data.items()}
            ir, dev, cor = _to_tensors(*std.transform_inputs(batch))
            out = model(ir, dev, cor, mode="eval")
            preds.append(out["preds"].numpy())
            for key in ids:
                ids[key].append(out["identities"][key].numpy())
            feats.append(out["f_emb"].mean(dim=1).numpy())
    return (
        np.concatenate(preds),
        {k: np.concatenate(v) for k, v in ids.items()},
        np.concatenate(feats),
    )


def metrics_from_errors(preds_phys: np.ndarray, labels_phys: np.ndarray) -> dict:
    """Per-task MAE, RMSE and STD (std of per-sample absolute errors)."""
    out = {}
    for i, task in enumerate(TASKS):
        err = preds_phys[:, i] - labels_phys[:, i]
        abs_err = np.abs(err)
        out[task] = {
            "MAE": float(abs_err.mean()),
            "RMSE": float(np.sqrt((err**2).mean())),
            "STD": float(abs_err.std()),
        }
    return out


def evaluate_model(
    model: IDOLModel, split_data: Dict[str, np.ndarray], std: Standardizer
) -> dict:
    preds_std, _, _ = _forward_split(model, split_data, std)
    preds = std.inverse_labels(preds_std)
    return metrics_from_errors(preds, split_data["labels"].astype(np.float64))


def _valid_loss(
    model: IDOLModel, split_data: Dict[str, np.ndarray], std: Standardizer, config
) -> float:
    """Estimation loss on the validation split, used for checkpoint selection.

    The consistency regularizer is deliberately excluded so that model
    selection compares configurations on the task objective alone.
    """
    preds_std, ids, _ = _forward_split(model, split_data, std)
    labels_std = std.transform_labels(split_data["labels"])
    breakdown = loss_total(
        torch.as_tensor(preds_std),
        torch.as_tensor(labels_std, dtype=torch.float32),
        {k: torch.as_tensor(v) for k, v in ids.items()},
        config.lam,
        idc_keys=model.config.idc_keys(),
    )
    return float(sum(v.detach() for v in breakdown.l_e.values()))


def save_checkpoint(
    path_prefix: str,
    model: IDOLModel,
    std: Standardizer,
    config: TrainConfig,
    grid: int,
) -> str:
    """Archive of named float32 parameter arrays plus a JSON of metadata."""
    arrays = {k: v.detach().numpy() for k, v in model.state_dict().items()}
    np.savez(path_prefix + ".npz", **arrays)
    meta = {
        "model_config": model.config.to_dict(),
        "train_config": config.to_dict(),
        "standardizer": std.to_dict(),
        "grid": grid,
    }
    with open(path_prefix + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return path_prefix + ".npz"


def load_checkpoint(path_prefix: str):
    with open(path_prefix + ".json") as fh:
        meta = json.load(fh)
    model = IDOLModel(ModelConfig.from_dict(meta["model_config"]))
    arrays = np.load(path_prefix + ".npz")
    state = {k: torch.as_tensor(arrays[k]) for k in arrays.files}
    model.load_state_dict(state)
    std = Standardizer.from_dict(meta["standardizer"])
    config = TrainConfig.from_dict(meta["train_config"])
    return model, std, config, meta


class NaNLossError(RuntimeError):
    pass


def _train_batches(
    data_dir: str, config: TrainConfig, steps: int
) -> Iterator[Dict[str, np.ndarray]]:
    """Cycle over shuffled epochs of the train split until ``steps`` batches."""
    emitted = 0
    epoch = 0
    while emitted < steps:
        for batch in iter_batches(
            data_dir, "train", config.batch_size, shuffle_seed=config.seed + epoch
        ):
            yield batch
            emitted += 1
            if emitted >= steps:
                return
        epoch += 1


def train(config: TrainConfig, data_dir: str, out_dir: str) -> dict:
    """Train on a generated dataset directory; returns the run record."""
    os.makedirs(out_dir, exist_ok=True)
    t_start = time.time()
    manifest = load_manifest(data_dir)
    grid = manifest["config"]["grid"]
    train_data = load_split(data_dir, "train")
    valid_data = load_split(data_dir, "valid")
    test_data = load_split(data_dir, "test")
    std = Standardizer.fit(train_data)

    torch.manual_seed(config.seed)
    model = IDOLModel(model_config_for(config, grid))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    idc_keys = model.config.idc_keys()

    log_path = os.path.join(out_dir, "train_log.jsonl")
    log_fh = open(log_path, "w")
    iter_hist: Dict[int, int] = {}

    def log_line(obj):
        log_fh.write(json.dumps(obj) + "\n")

    step0_loss: Optional[float] = None
    last_loss = None
    best_valid = math.inf
    ckpt_prefix = os.path.join(out_dir, "checkpoint")
    epoch_losses: List[float] = []

    gen = torch.Generator()
    for step, batch in enumerate(_train_batches(data_dir, config, config.steps)):
        model.train()
        gen.manual_seed(config.seed * 100003 + step)
        ir, dev, cor = _to_tensors(*std.transform_inputs(batch))
        labels = torch.as_tensor(
            std.transform_labels(batch["labels"]), dtype=torch.float32
        )
        out = model(ir, dev, cor, mode="train", generator=gen)
        breakdown = loss_total(
            out["preds"], labels, out["identities"], config.lam, idc_keys=idc_keys
        )
        if not torch.isfinite(breakdown.total):
            np.savez(os.path.join(out_dir, "nan_batch.npz"), **batch)
            log_fh.close()
            raise NaNLossError(
                f"non-finite loss at step {step}; offending batch dumped"
            )
        optimizer.zero_grad()
        breakdown.total.backward()
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        optimizer.step()

        for count in out["iter_counts"].values():
            iter_hist[count] = iter_hist.get(count, 0) + 1
        scalars = breakdown.scalars()
        scalars["step"] = step
        log_line(scalars)
        last_loss = float(breakdown.total.detach())
        epoch_losses.append(last_loss)
        if step0_loss is None:
            step0_loss = last_loss

        if (step + 1) % config.eval_every == 0 or step + 1 == config.steps:
            vloss = _valid_loss(model, valid_data, std, config)
            log_line({"step": step, "valid_loss": vloss})
            if vloss < best_valid:
                best_valid = vloss
                save_checkpoint(ckpt_prefix, model, std, config, grid)

    if config.steps == 0 or best_valid == math.inf:
        save_checkpoint(ckpt_prefix, model, std, config, grid)
    log_line({"iteration_histogram": iter_hist})
    log_fh.close()

    best_model, _, _, _ = load_checkpoint(ckpt_prefix)
    record = {
        "config": config.to_dict(),
        "step0_loss": step0_loss,
        "final_train_loss": last_loss,
        "best_valid_loss": None if best_valid == math.inf else best_valid,
        "test_metrics": evaluate_model(best_model, test_data, std),
        "checkpoint": ckpt_prefix,
        "wall_time_s": time.time() - t_start,
    }
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    return record


GRID_PRESETS: Dict[str, List[dict]] = {
    "table2": [
        {"label": "backbone_only", "no_id_sp": True, "no_id_sh": True},
        {"label": "with_id_sp", "no_id_sh": True},
        {"label": "full"},
    ],
    "table5": [
        {"label": "holland"},
        {"label": "linear_id_sp", "linear_id_sp": True},
        {"label": "noisy_prior", "noisy_prior": True},
    ],
    "table3": [
        {"label": f"ratio_{r.replace(':', '_')}", "id_ratio": r}
        for r in ("1:1", "1:2", "1:3", "2:1", "3:1")
    ],
    "fig9": [
        {"label": "real_graph"},
        {"label": "random_graph", "random_dk_graph": True},
    ],
}


def ablate(
    grid_cells: List[dict], base_config: TrainConfig, data_dir: str, out_dir: str
) -> List[dict]:
    """Train one run per grid cell (shared data and seed), collect records and
    write a flat ``ablation.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    rows = []
    for cell in grid_cells:
        cell = dict(cell)
        label = cell.pop("label", "_".join(f"{k}={v}" for k, v in cell.items()) or "base")
        config = base_config.replace(**cell)
        record = train(config, data_dir, os.path.join(out_dir, label))
        record["label"] = label
        records.append(record)
        for task, m in record["test_metrics"].items():
            rows.append([label, task, m["MAE"], m["RMSE"], m["STD"]])
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w") as fh:
        fh.write("setting,task,MAE,RMSE,STD\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")
    return records
