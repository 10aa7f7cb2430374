"""Parameter checkpoints.

A checkpoint is a ZIP archive readable with ``numpy.load``:

* ``meta.json``   -- ``{"format": "deepssm-checkpoint", "version": 1,
  "model_config": {...}, "names": [...], "extra": {...}}``
* ``<name>.npy``  -- one little-endian float64 ``.npy`` member per parameter,
  in the order listed in ``names``.

Members are stored uncompressed with a fixed timestamp so identical
parameters give byte-identical files, and values round-trip bit-exactly.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import ContractError
from .model import ModelConfig, ModelParams

FORMAT = "deepssm-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_params(params: ModelParams, path: str | Path, extra: dict | None = None) -> None:
    names = params.names()
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "model_config": params.config.to_dict(),
        "names": names,
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _member(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name in names:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(params.arrays[name], dtype="<f8"), allow_pickle=False)
            _member(zf, f"{name}.npy", buf.getvalue())
    tmp.replace(path)


def load_params(path: str | Path) -> tuple[ModelParams, dict]:
    """Return the stored parameters and the ``extra`` metadata dict."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != FORMAT or meta.get("version") != VERSION:
            raise ContractError(f"{path}: not a {FORMAT} v{VERSION} file")
        arrays = {}
        for name in meta["names"]:
            with zf.open(f"{name}.npy") as fh:
                arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False).astype(np.float64)
    return ModelParams(ModelConfig.from_dict(meta["model_config"]), arrays), meta.get("extra", {})
