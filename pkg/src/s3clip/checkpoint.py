"""Checkpoint archive: one ``.npz`` of named arrays plus a JSON header.

Model tensors live under ``<submodule>/<param path>`` (``sr/*``,
``reid/*``, ``text/*``, ``prompts/*``); optimizer moments under
``optim/<name>/<param index>/<key>``. The ``__meta__`` entry carries the
format tag, a config echo, optimizer hyperparameters and caller metadata.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from .errors import CheckpointError

FORMAT_TAG = "s3clip-ckpt/1"


def _param_key(name: str) -> str:
    head, _, tail = name.partition(".")
    return f"{head}/{tail}" if tail else head


def save_checkpoint(path, model: torch.nn.Module, optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None,
                    meta: Optional[dict] = None, config: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, t in model.state_dict().items():
        arrays[_param_key(name)] = t.detach().cpu().numpy()
    optim_meta = {}
    for oname, opt in (optimizers or {}).items():
        sd = opt.state_dict()
        scalars = {}
        for idx, st in sd["state"].items():
            for k, v in st.items():
                if torch.is_tensor(v):
                    arrays[f"optim/{oname}/{idx}/{k}"] = v.detach().cpu().numpy()
                else:
                    scalars[f"{idx}/{k}"] = v
        optim_meta[oname] = {"param_groups": sd["param_groups"], "scalars": scalars}
    header = {"format": FORMAT_TAG, "meta": meta or {}, "config": config or {}, "optim": optim_meta}
    arrays["__meta__"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)
    return path


def read_header(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z:
            raise CheckpointError(f"{path}: missing header")
        header = json.loads(z["__meta__"].tobytes().decode("utf-8"))
    if header.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: format {header.get('format')!r}, expected {FORMAT_TAG!r}")
    return header


def load_checkpoint(path, model: torch.nn.Module,
                    optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None) -> dict:
    """Restore in place and return the header's ``meta`` (plus ``config`` echo)."""
    header = read_header(path)
    with np.load(Path(path), allow_pickle=False) as z:
        state = {}
        for name, ref in model.state_dict().items():
            key = _param_key(name)
            if key not in z:
                raise CheckpointError(f"{path}: missing tensor {key}")
            arr = z[key]
            if tuple(arr.shape) != tuple(ref.shape):
                raise CheckpointError(f"{path}: {key} has shape {arr.shape}, model expects {tuple(ref.shape)}")
            state[name] = torch.from_numpy(arr.copy()).to(ref.dtype)
        model.load_state_dict(state)
        for oname, opt in (optimizers or {}).items():
            om = header["optim"].get(oname)
            if om is None:
                raise CheckpointError(f"{path}: no state for optimizer {oname!r}")
            st: dict = {}
            prefix = f"optim/{oname}/"
            for key in z.files:
                if key.startswith(prefix):
                    idx, k = key[len(prefix):].split("/", 1)
                    st.setdefault(int(idx), {})[k] = torch.from_numpy(z[key].copy())
            for key, v in om["scalars"].items():
                idx, k = key.split("/", 1)
                st.setdefault(int(idx), {})[k] = v
            opt.load_state_dict({"state": st, "param_groups": om["param_groups"]})
    return {"meta": header["meta"], "config": header["config"]}
