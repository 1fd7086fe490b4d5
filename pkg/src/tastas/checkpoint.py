"""Versioned checkpoint container for model components.

One bundle file (a zip) holds, per component (idnet, stage1, ...), the
parameter arrays, a freeze flag, the training step that produced it, and a
content digest; plus the model spec text, dims, and init seed. Digests are
SHA-256 over the parameter names, shapes, dtypes, and raw bytes in sorted
name order, which makes the freeze invariant machine-checkable bit-exactly.

Zip entries use a pinned timestamp so identical bundles are byte-identical.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from tastas.model import ModelDims, ModelSpec, TasTasNet, parse_model_spec

MAGIC = "tastas-ckpt"
VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class CheckpointFormatError(ValueError):
    """Bundle file is missing, malformed, or from an unknown version."""


class DigestMismatchError(RuntimeError):
    """Stored parameters do not hash to their recorded digest."""


def params_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        a = np.ascontiguousarray(params[name])
        h.update(name.encode())
        h.update(str(a.shape).encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def component_params(model: TasTasNet, name: str) -> dict[str, np.ndarray]:
    """Detached numpy copies of one component's parameters."""
    return {
        pname: p.detach().cpu().numpy().copy()
        for pname, p in model.component_parameters(name)
    }


def component_digest(model: TasTasNet, name: str) -> str:
    return params_digest(component_params(model, name))


@dataclass
class ComponentEntry:
    params: dict[str, np.ndarray]
    frozen: bool
    trained_in_step: str
    digest: str


@dataclass
class CheckpointBundle:
    model_spec_text: str
    s: int
    dims: dict
    sample_rate: int
    init_seed: int
    components: dict[str, ComponentEntry] = field(default_factory=dict)
    completed_steps: list[str] = field(default_factory=list)

    def add_component(self, name: str, params: dict[str, np.ndarray],
                      frozen: bool, trained_in_step: str) -> None:
        self.components[name] = ComponentEntry(
            params=params, frozen=frozen, trained_in_step=trained_in_step,
            digest=params_digest(params),
        )

    def spec(self) -> ModelSpec:
        return parse_model_spec(
            self.model_spec_text,
            s=self.s,
            dims=ModelDims(**self.dims),
            sample_rate=self.sample_rate,
        )

    def build_model(self) -> TasTasNet:
        """Instantiate the model and load every stored component's parameters."""
        model = TasTasNet(self.spec(), init_seed=self.init_seed)
        missing = set(model.component_names()) - set(self.components)
        if missing:
            raise CheckpointFormatError(f"bundle incomplete, missing {sorted(missing)}")
        self.load_into(model)
        return model

    def load_into(self, model: TasTasNet) -> None:
        for name, entry in self.components.items():
            stored = entry.params
            for pname, p in model.component_parameters(name):
                if pname not in stored:
                    raise CheckpointFormatError(f"{name}: missing parameter {pname}")
                with torch.no_grad():
                    p.copy_(torch.from_numpy(stored[pname]).to(p.dtype))
                if entry.frozen:
                    p.requires_grad_(False)


def save_bundle(bundle: CheckpointBundle, path) -> None:
    meta = {
        "magic": MAGIC,
        "version": VERSION,
        "model_spec": bundle.model_spec_text,
        "s": bundle.s,
        "dims": bundle.dims,
        "sample_rate": bundle.sample_rate,
        "init_seed": bundle.init_seed,
        "completed_steps": bundle.completed_steps,
        "components": {
            name: {
                "frozen": e.frozen,
                "trained_in_step": e.trained_in_step,
                "digest": e.digest,
                "params": sorted(e.params),
            }
            for name, e in bundle.components.items()
        },
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        _write(zf, "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
        for cname in sorted(bundle.components):
            for pname in sorted(bundle.components[cname].params):
                buf = io.BytesIO()
                np.save(buf, bundle.components[cname].params[pname])
                _write(zf, f"params/{cname}/{pname}.npy", buf.getvalue())


def _write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def load_bundle(path) -> CheckpointBundle:
    try:
        zf = zipfile.ZipFile(path, "r")
    except (FileNotFoundError, zipfile.BadZipFile) as err:
        raise CheckpointFormatError(f"cannot open checkpoint bundle {path}: {err}")
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise CheckpointFormatError(f"{path}: no meta.json entry")
        if meta.get("magic") != MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic {meta.get('magic')!r}")
        if meta.get("version") != VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {meta.get('version')!r}")
        bundle = CheckpointBundle(
            model_spec_text=meta["model_spec"],
            s=meta["s"],
            dims=meta["dims"],
            sample_rate=meta["sample_rate"],
            init_seed=meta["init_seed"],
            completed_steps=list(meta["completed_steps"]),
        )
        for cname, centry in meta["components"].items():
            params = {}
            for pname in centry["params"]:
                buf = io.BytesIO(zf.read(f"params/{cname}/{pname}.npy"))
                params[pname] = np.load(buf)
            recomputed = params_digest(params)
            if recomputed != centry["digest"]:
                raise DigestMismatchError(
                    f"{path}: component {cname} digest mismatch "
                    f"(stored {centry['digest'][:12]}, recomputed {recomputed[:12]})"
                )
            bundle.components[cname] = ComponentEntry(
                params=params,
                frozen=centry["frozen"],
                trained_in_step=centry["trained_in_step"],
                digest=centry["digest"],
            )
    return bundle
