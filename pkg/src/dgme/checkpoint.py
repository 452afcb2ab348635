"""Self-describing JSON checkpoints for every model kind.

Arrays are stored as ``{"shape", "data"}`` with row-major data.  Python's
float repr round-trips float64 exactly, so a save/load cycle reproduces
the parameters bit for bit.
"""

import json
from pathlib import Path

import numpy as np

from .baselines import DeModel, McdModel, MdnModel, MdnParams
from .data import Scaler
from .mixture import MixtureModel
from .network import MlpParams

FORMAT_VERSION = 1
MODEL_KINDS = ("dgme", "de", "mdn", "mcd")


def model_kind(model):
    if isinstance(model, MixtureModel):
        return "dgme"
    kind = getattr(model, "kind", None)
    if kind not in MODEL_KINDS:
        raise TypeError(f"not a known model type: {type(model).__name__}")
    return kind


def model_to_dict(model):
    kind = model_kind(model)
    out = {"kind": kind, "p_d": float(model.p_d)}
    if kind == "dgme":
        out["weights"] = model.weights.tolist()
        out["members"] = [m.to_dict() for m in model.members]
        out["history"] = model.history
        out["restart"] = int(model.restart)
    elif kind == "de":
        out["members"] = [m.to_dict() for m in model.members]
    elif kind == "mdn":
        out["params"] = model.params.to_dict()
    else:
        out["params"] = model.params.to_dict()
        out["noise_variance"] = float(model.noise_variance)
        out["n_passes"] = int(model.n_passes)
        out["mc_seed"] = int(model.mc_seed)
    return out


def model_from_dict(d):
    kind = d.get("kind")
    if kind == "dgme":
        members = [MlpParams.from_dict(m) for m in d["members"]]
        return MixtureModel(np.asarray(d["weights"]), members, d["p_d"], list(d.get("history", [])), d.get("restart", 0))
    if kind == "de":
        return DeModel([MlpParams.from_dict(m) for m in d["members"]], d["p_d"])
    if kind == "mdn":
        return MdnModel(MdnParams.from_dict(d["params"]), d["p_d"])
    if kind == "mcd":
        return McdModel(MlpParams.from_dict(d["params"]), d["noise_variance"], d["p_d"], d["n_passes"], d["mc_seed"])
    raise ValueError(f"unknown model kind {kind!r} in checkpoint")


def save_checkpoint(path, model, scaler=None, config=None):
    doc = {
        "format": "dgme-checkpoint",
        "version": FORMAT_VERSION,
        "model": model_to_dict(model),
        "scaler": None if scaler is None else scaler.to_dict(),
        "config": config,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
    return path


def load_checkpoint(path):
    """Return ``(model, scaler, config)``; ``scaler`` may be ``None``."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not a JSON checkpoint ({exc})") from None
    if doc.get("format") != "dgme-checkpoint":
        raise ValueError(f"{path}: not a dgme checkpoint")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    scaler = None if doc.get("scaler") is None else Scaler.from_dict(doc["scaler"])
    return model_from_dict(doc["model"]), scaler, doc.get("config")
