"""Multi-step training orchestrator.

The staged pipeline trains one component at a time and freezes it before the
next step starts: ID-Net first (speaker classification on clean segments),
then stage 1 of the separator, then each refinement stage, each "until it
converges" (early stopping on validation loss with configurable patience and
tolerance). Frozen components are verified by content digest before and
after every later step, bit-exactly.

The separation loss is utterance-level permutation-invariant negative SI-SDR
(Hungarian assignment over the pairwise score matrix, permutation held
constant at the optimum), plus an optional speaker-identity consistency term
computed with the frozen ID-Net.

naive_joint_train is the diagnostic baseline: everything trained jointly
from scratch against the final-stage loss, for side-by-side loss traces.
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from tastas import checkpoint as ck
from tastas.audio import Waveform
from tastas.metrics import (
    METRIC_LABEL,
    SI_SDR_CAP_DB,
    oracle_irm_separate,
    pit_assign,
    sdri,
    si_sdr,
)
from tastas.mixgen import Manifest, synthesize
from tastas.model import IdNet, ModelDims, TasTasNet, parse_model_spec, separate

ENV_PREFIX = "TASTAS_"


class DependencyError(RuntimeError):
    """A required earlier-step component is missing or not frozen."""


class FrozenViolationError(RuntimeError):
    """A frozen component's parameters changed (digest mismatch)."""


@dataclass
class TrainConfig:
    """Hyperparameters for every training step; file keys mirror field names."""

    model_spec: str = "TasTas(I, 2, 2)"
    sample_rate: int = 8000
    # model dims
    n_basis: int = 64
    kernel: int = 16
    feature: int = 64
    chunk: int = 100
    hidden: int = 128
    embed_dim: int = 64
    idnet_hidden: int = 128
    # optimization
    lr: float = 1e-3
    lr_halve_patience: int = 2
    grad_clip: float = 5.0
    batch_size: int = 8
    segment_s: float = 1.0
    max_epochs: int = 20
    patience: int = 3
    tol: float = 1e-4
    lambda_id: float = 0.1
    online_remix: bool = False
    remix_regain: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")
        if self.lambda_id < 0:
            raise ValueError("lambda_id must be >= 0")

    def dims(self) -> ModelDims:
        return ModelDims(
            n_basis=self.n_basis, kernel=self.kernel, feature=self.feature,
            chunk=self.chunk, hidden=self.hidden, embed_dim=self.embed_dim,
            idnet_hidden=self.idnet_hidden,
        )


def _parse_value(text: str, typ):
    if typ is bool:
        low = text.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return typ(text.strip())


def load_config(path=None, env=None, overrides: dict | None = None) -> TrainConfig:
    """Build a TrainConfig with precedence flag > env > file > default.

    The file is flat key = value text (# comments); env keys are
    TASTAS_<FIELD> upper-cased; overrides come from CLI flags.
    """
    env = os.environ if env is None else env
    types = {f.name: f.type for f in fields(TrainConfig)}
    typemap = {"str": str, "int": int, "float": float, "bool": bool}
    values: dict = {}
    if path is not None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(val, typemap[types[key]])
    for key in types:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            values[key] = _parse_value(env[env_key], typemap[types[key]])
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return TrainConfig(**values)


# ---------------------------------------------------------------------------
# losses


def _si_sdr_tensor(est: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """SI-SDR in dB over the last axis, capped at +/-100; differentiable."""
    e = est - est.mean(dim=-1, keepdim=True)
    r = ref - ref.mean(dim=-1, keepdim=True)
    ref_pow = (r * r).sum(dim=-1, keepdim=True)
    if (ref_pow == 0).any():
        raise ValueError("zero-power reference")
    proj = ((e * r).sum(dim=-1, keepdim=True) / ref_pow) * r
    resid = e - proj
    tiny = torch.finfo(est.dtype).tiny
    val = 10.0 * (
        torch.log10((proj * proj).sum(dim=-1).clamp_min(tiny))
        - torch.log10((resid * resid).sum(dim=-1).clamp_min(tiny))
    )
    return val.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB)


def pairwise_si_sdr_tensor(est: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """(B, S, T) x (B, S, T) -> (B, S, S) with entry (i, j) = si_sdr(est_i, ref_j)."""
    return _si_sdr_tensor(est.unsqueeze(2), ref.unsqueeze(1))


def upit_sisdr_loss(
    est: torch.Tensor, ref: torch.Tensor
) -> tuple[torch.Tensor, list[tuple[int, ...]]]:
    """Negative mean SI-SDR under the PIT-optimal pairing per batch item.

    The permutation is chosen by Hungarian assignment on the detached score
    matrix and treated as constant, so gradients flow through the selected
    matrix entries only.
    """
    mat = pairwise_si_sdr_tensor(est, ref)
    perms = [
        pit_assign(mat[b].detach().cpu().numpy(), method="hungarian").perm
        for b in range(mat.shape[0])
    ]
    picked = torch.stack(
        [
            torch.stack([mat[b, i, perms[b][i]] for i in range(mat.shape[1])]).mean()
            for b in range(mat.shape[0])
        ]
    )
    return -picked.mean(), perms


def identity_consistency_loss(
    est: torch.Tensor,
    ref: torch.Tensor,
    perms: list[tuple[int, ...]],
    idnet: IdNet,
) -> torch.Tensor:
    """Mean (1 - cosine similarity) between embeddings of paired estimates and
    references; in [0, 2]. The ID-Net must be frozen: this loss shapes the
    estimates, never the embedder."""
    if any(p.requires_grad for p in idnet.parameters()):
        raise FrozenViolationError("identity consistency loss requires a frozen ID-Net")
    b, s, t = est.shape
    emb_est = idnet(est.reshape(b * s, t)).reshape(b, s, -1)
    emb_ref = idnet(ref.reshape(b * s, t)).reshape(b, s, -1)
    total = est.new_zeros(())
    for bi in range(b):
        for i in range(s):
            total = total + 1.0 - (emb_est[bi, i] * emb_ref[bi, perms[bi][i]]).sum()
    return total / (b * s)


def loss_upit_sisdr(
    estimates: list[Waveform], references: list[Waveform]
) -> tuple[float, tuple[int, ...]]:
    """Waveform-level PIT loss: (negative mean SI-SDR, est->ref permutation)."""
    est = torch.tensor(np.stack([w.samples for w in estimates])).unsqueeze(0)
    ref = torch.tensor(np.stack([w.samples for w in references])).unsqueeze(0)
    loss, perms = upit_sisdr_loss(est, ref)
    return float(loss), perms[0]


def loss_identity_consistency(
    estimates: list[Waveform],
    references: list[Waveform],
    perm: tuple[int, ...],
    idnet: IdNet,
) -> float:
    p = next(idnet.parameters())
    est = torch.tensor(np.stack([w.samples for w in estimates]), dtype=p.dtype).unsqueeze(0)
    ref = torch.tensor(np.stack([w.samples for w in references]), dtype=p.dtype).unsqueeze(0)
    return float(identity_consistency_loss(est, ref, [perm], idnet))


# ---------------------------------------------------------------------------
# data


def _crop(x: np.ndarray, seg: int, offset: int) -> np.ndarray:
    if len(x) >= seg:
        return x[offset : offset + seg]
    return np.concatenate([x, np.zeros(seg - len(x), dtype=x.dtype)])


class MixtureData:
    """All mixtures of a manifest materialized as float32 arrays."""

    def __init__(self, manifest: Manifest, corpus):
        if not manifest.records:
            raise ValueError(f"empty manifest ({manifest.split})")
        self.s = manifest.s
        self.items = []
        for rec in manifest.records:
            mix, sources = synthesize(rec, corpus)
            self.items.append(
                (
                    mix.samples.astype(np.float32),
                    np.stack([w.samples for w in sources]).astype(np.float32),
                )
            )

    def __len__(self) -> int:
        return len(self.items)

    def batch(
        self, indices, seg: int, rng: np.random.Generator | None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Stack cropped segments; random offsets under rng, else offset 0."""
        mixes, refs = [], []
        for i in indices:
            mix, src = self.items[i]
            room = max(0, len(mix) - seg)
            off = int(rng.integers(0, room + 1)) if (rng is not None and room) else 0
            mixes.append(_crop(mix, seg, off))
            refs.append(np.stack([_crop(s, seg, off) for s in src]))
        return (
            torch.from_numpy(np.stack(mixes)),
            torch.from_numpy(np.stack(refs)),
        )


def remix_batch(
    mix: torch.Tensor, ref: torch.Tensor, seed: int,
    regain_snr_range: tuple[float, float] | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Slot-wise source permutation within the batch; mixture = exact sum.

    Tensor counterpart of mixgen.online_remix with identical semantics.
    """
    b, s, t = ref.shape
    rng = np.random.default_rng(seed)
    slots = []
    for slot in range(s):
        perm = torch.from_numpy(rng.permutation(b))
        slots.append(ref[perm, slot])
    new_ref = torch.stack(slots, dim=1)
    if regain_snr_range is not None:
        low, high = regain_snr_range
        ref_pow = (new_ref[:, 0] ** 2).mean(dim=-1)
        scaled = [new_ref[:, 0]]
        for slot in range(1, s):
            target = torch.from_numpy(rng.uniform(low, high, size=b)).to(new_ref.dtype)
            pow_slot = (new_ref[:, slot] ** 2).mean(dim=-1)
            g = torch.sqrt(ref_pow / pow_slot * 10.0 ** (target / 10.0))
            scaled.append(g.unsqueeze(-1) * new_ref[:, slot])
        new_ref = torch.stack(scaled, dim=1)
    return new_ref.sum(dim=1), new_ref


# ---------------------------------------------------------------------------
# training steps


@dataclass
class StepResult:
    step: str
    epochs: int
    train_losses: list[float]
    valid_losses: list[float]
    best_valid_losses: list[float]  # running minimum, non-increasing
    best_epoch: int
    extra: dict = field(default_factory=dict)

    @property
    def best_valid_loss(self) -> float:
        return self.best_valid_losses[-1]


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


class _EarlyStop:
    def __init__(self, config: TrainConfig, optimizer):
        self.cfg = config
        self.opt = optimizer
        self.best = float("inf")
        self.best_epoch = 0
        self.since = 0
        self.history: list[float] = []

    def update(self, epoch: int, valid_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if valid_loss < self.best - self.cfg.tol:
            self.best = valid_loss
            self.best_epoch = epoch
            self.since = 0
        else:
            self.since += 1
            if self.opt is not None and self.since % self.cfg.lr_halve_patience == 0:
                for group in self.opt.param_groups:
                    group["lr"] *= 0.5
        prev = self.history[-1] if self.history else valid_loss
        self.history.append(min(prev, valid_loss))
        return self.since >= self.cfg.patience


def _snapshot(params: list[tuple[str, torch.nn.Parameter]]) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().numpy().copy() for name, p in params}


def _restore(params: list[tuple[str, torch.nn.Parameter]], snap: dict[str, np.ndarray]):
    with torch.no_grad():
        for name, p in params:
            p.copy_(torch.from_numpy(snap[name]).to(p.dtype))


def freeze_component(model: TasTasNet, name: str) -> str:
    """Disable gradients for a component; returns its digest."""
    for _, p in model.component_parameters(name):
        p.requires_grad_(False)
    return ck.component_digest(model, name)


def _require_frozen(model: TasTasNet, names: list[str], digests: dict[str, str]):
    for name in names:
        if name not in digests:
            raise DependencyError(f"component {name} has not been trained/frozen yet")
        if any(p.requires_grad for _, p in model.component_parameters(name)):
            raise DependencyError(f"component {name} is not frozen")
        now = ck.component_digest(model, name)
        if now != digests[name]:
            raise FrozenViolationError(
                f"frozen component {name} changed (digest {digests[name][:12]} -> {now[:12]})"
            )


def _idnet_utterance_split(manifest: Manifest, corpus):
    """Speakers from the train manifest; per speaker, 80/20 utterance split."""
    speakers = sorted({corpus.speaker_of(r) for rec in manifest.records for r in rec.source_refs})
    if len(speakers) < 2:
        raise ValueError(f"ID-Net training needs >= 2 speakers, got {len(speakers)}")
    train_items, valid_items = [], []
    for label, spk in enumerate(speakers):
        utts = corpus.utterances(spk)
        n_train = max(1, int(0.8 * len(utts)))
        if n_train == len(utts) and len(utts) > 1:
            n_train -= 1
        train_items += [(ref, label) for ref in utts[:n_train]]
        valid_items += [(ref, label) for ref in utts[n_train:]]
    if not valid_items:
        valid_items = train_items[:1]
    return speakers, train_items, valid_items


def train_idnet(
    model: TasTasNet,
    manifests: dict[str, Manifest],
    corpus,
    config: TrainConfig,
) -> StepResult:
    """Step 1: train the ID-Net as a speaker classifier on clean segments."""
    if model.idnet is None:
        raise ValueError("model spec is not identity-aware; no ID-Net to train")
    speakers, train_items, valid_items = _idnet_utterance_split(manifests["train"], corpus)
    waves = {ref: corpus.load(ref).samples.astype(np.float32)
             for ref, _ in train_items + valid_items}
    seg = int(config.segment_s * config.sample_rate)
    torch.manual_seed(config.seed)
    head = torch.nn.Linear(config.embed_dim, len(speakers))
    params = model.component_parameters("idnet")
    opt = torch.optim.Adam(
        [p for _, p in params] + list(head.parameters()), lr=config.lr
    )
    ce = torch.nn.CrossEntropyLoss()

    def run(items, rng, train: bool):
        total, correct, seen = 0.0, 0, 0
        order = rng.permutation(len(items)) if train else np.arange(len(items))
        for start in range(0, len(items), config.batch_size):
            idx = order[start : start + config.batch_size]
            xs, ys = [], []
            for i in idx:
                ref, label = items[i]
                w = waves[ref]
                room = max(0, len(w) - seg)
                off = int(rng.integers(0, room + 1)) if (train and room) else 0
                xs.append(_crop(w, seg, off))
                ys.append(label)
            x = torch.from_numpy(np.stack(xs))
            y = torch.tensor(ys)
            logits = head(model.idnet(x))
            loss = ce(logits, y)
            if train:
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(
                    [p for _, p in params] + list(head.parameters()), config.grad_clip
                )
                opt.step()
            total += float(loss.detach()) * len(idx)
            correct += int((logits.argmax(dim=1) == y).sum())
            seen += len(idx)
        return total / seen, correct / seen

    stopper = _EarlyStop(config, opt)
    train_losses, valid_losses = [], []
    best_snap, best_acc = _snapshot(params), 0.0
    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, 10, epoch])
        tr_loss, _ = run(train_items, rng, train=True)
        with torch.no_grad():
            va_loss, va_acc = run(valid_items, rng, train=False)
        train_losses.append(tr_loss)
        valid_losses.append(va_loss)
        if va_loss <= stopper.best:
            best_snap, best_acc = _snapshot(params), va_acc
        if stopper.update(epoch, va_loss):
            break
    _restore(params, best_snap)
    return StepResult(
        step="idnet", epochs=len(train_losses), train_losses=train_losses,
        valid_losses=valid_losses, best_valid_losses=stopper.history,
        best_epoch=stopper.best_epoch,
        extra={"valid_accuracy": best_acc, "n_classes": len(speakers)},
    )


def train_stage(
    k: int,
    model: TasTasNet,
    manifests: dict[str, Manifest],
    corpus,
    config: TrainConfig,
    frozen_digests: dict[str, str],
    data_cache: dict | None = None,
) -> StepResult:
    """Train stage k's parameters only; all earlier components stay frozen."""
    deps = (["idnet"] if model.spec.identity_aware else []) + [
        f"stage{j}" for j in range(1, k)
    ]
    _require_frozen(model, deps, frozen_digests)
    cache = data_cache if data_cache is not None else {}
    for split in ("train", "valid"):
        if split not in cache:
            cache[split] = MixtureData(manifests[split], corpus)
    train_data, valid_data = cache["train"], cache["valid"]
    seg = int(config.segment_s * config.sample_rate)
    params = model.component_parameters(f"stage{k}")
    opt = torch.optim.Adam([p for _, p in params], lr=config.lr)
    snr_range = manifests["train"].snr_range_db if config.remix_regain else None

    def stage_loss(mix, ref):
        outs = model(mix)
        est = outs[k - 1]
        loss, perms = upit_sisdr_loss(est, ref)
        if model.spec.identity_aware and config.lambda_id > 0:
            loss = loss + config.lambda_id * identity_consistency_loss(
                est, ref, perms, model.idnet
            )
        return loss

    stopper = _EarlyStop(config, opt)
    train_losses, valid_losses = [], []
    best_snap = _snapshot(params)
    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, 20 + k, epoch])
        tot, seen = 0.0, 0
        for bi, idx in enumerate(_epoch_batches(len(train_data), config.batch_size, rng)):
            mix, ref = train_data.batch(idx, seg, rng)
            if config.online_remix:
                mix, ref = remix_batch(
                    mix, ref, seed=int(rng.integers(0, 2**31)),
                    regain_snr_range=snr_range,
                )
            loss = stage_loss(mix, ref)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_([p for _, p in params], config.grad_clip)
            opt.step()
            tot += float(loss.detach()) * len(idx)
            seen += len(idx)
        train_losses.append(tot / seen)
        with torch.no_grad():
            vt, vs = 0.0, 0
            for start in range(0, len(valid_data), config.batch_size):
                idx = np.arange(start, min(start + config.batch_size, len(valid_data)))
                mix, ref = valid_data.batch(idx, seg, rng=None)
                vt += float(stage_loss(mix, ref)) * len(idx)
                vs += len(idx)
        valid_losses.append(vt / vs)
        if valid_losses[-1] <= stopper.best:
            best_snap = _snapshot(params)
        if stopper.update(epoch, valid_losses[-1]):
            break
    _restore(params, best_snap)
    _require_frozen(model, deps, frozen_digests)  # digests intact after training
    return StepResult(
        step=f"stage{k}", epochs=len(train_losses), train_losses=train_losses,
        valid_losses=valid_losses, best_valid_losses=stopper.history,
        best_epoch=stopper.best_epoch,
    )


# ---------------------------------------------------------------------------
# pipelines


def write_trace(path, results: list[StepResult]) -> None:
    """CSV loss trace: epoch, train_loss, valid_loss, step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "valid_loss", "step"])
        for res in results:
            for e, (tr, va) in enumerate(zip(res.train_losses, res.valid_losses), 1):
                writer.writerow([e, repr(tr), repr(va), res.step])


def read_trace(path) -> list[dict]:
    with open(path, newline="") as f:
        return [
            {
                "epoch": int(row["epoch"]),
                "train_loss": float(row["train_loss"]),
                "valid_loss": float(row["valid_loss"]),
                "step": row["step"],
            }
            for row in csv.DictReader(f)
        ]


def _new_bundle(config: TrainConfig, s: int) -> ck.CheckpointBundle:
    return ck.CheckpointBundle(
        model_spec_text=parse_model_spec(config.model_spec).text,
        s=s,
        dims=asdict(config.dims()),
        sample_rate=config.sample_rate,
        init_seed=config.seed,
    )


def run_multistep(
    config: TrainConfig,
    manifests: dict[str, Manifest],
    corpus,
    out_dir,
    resume: bool = False,
) -> tuple[Path, list[StepResult]]:
    """Execute the staged pipeline, persisting the bundle after every step.

    With resume=True, steps already recorded in <out>/checkpoint.ckpt are
    restored (digest-checked) and skipped; the next step restarts from
    scratch. Returns the bundle path and the per-step results of the steps
    run in this call.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.ckpt"
    spec = parse_model_spec(
        config.model_spec, s=manifests["train"].s, dims=config.dims(),
        sample_rate=config.sample_rate,
    )
    model = TasTasNet(spec, init_seed=config.seed)
    steps = (["idnet"] if spec.identity_aware else []) + [
        f"stage{k}" for k in range(1, spec.n_stages + 1)
    ]
    bundle = _new_bundle(config, spec.s)
    if resume and ckpt_path.exists():
        bundle = ck.load_bundle(ckpt_path)
        if bundle.model_spec_text != spec.text:
            raise ck.CheckpointFormatError(
                f"resume spec mismatch: {bundle.model_spec_text!r} vs {spec.text!r}"
            )
        bundle.load_into(model)
    digests = {name: entry.digest for name, entry in bundle.components.items()}
    results: list[StepResult] = []
    data_cache: dict = {}
    for step in steps:
        if step in bundle.completed_steps:
            continue
        if step == "idnet":
            res = train_idnet(model, manifests, corpus, config)
        else:
            res = train_stage(
                int(step.removeprefix("stage")), model, manifests, corpus,
                config, digests, data_cache,
            )
        digests[step] = freeze_component(model, step)
        bundle.add_component(
            step, ck.component_params(model, step), frozen=True, trained_in_step=step
        )
        bundle.completed_steps.append(step)
        ck.save_bundle(bundle, ckpt_path)
        results.append(res)
        write_trace(out_dir / f"trace_{step}.csv", [res])
    if results:
        write_trace(out_dir / "trace.csv", results)
    return ckpt_path, results


def naive_joint_train(
    config: TrainConfig,
    manifests: dict[str, Manifest],
    corpus,
    out_dir,
) -> tuple[Path, StepResult]:
    """Train every component jointly from scratch against the final-stage PIT
    loss (no pre-trained ID-Net, no freezing); the failing-baseline diagnostic."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = parse_model_spec(
        config.model_spec, s=manifests["train"].s, dims=config.dims(),
        sample_rate=config.sample_rate,
    )
    model = TasTasNet(spec, init_seed=config.seed)
    train_data = MixtureData(manifests["train"], corpus)
    valid_data = MixtureData(manifests["valid"], corpus)
    seg = int(config.segment_s * config.sample_rate)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)

    def joint_loss(mix, ref):
        loss, _ = upit_sisdr_loss(model(mix)[-1], ref)
        return loss

    stopper = _EarlyStop(config, opt)
    train_losses, valid_losses = [], []
    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, 77, epoch])
        tot, seen = 0.0, 0
        for idx in _epoch_batches(len(train_data), config.batch_size, rng):
            mix, ref = train_data.batch(idx, seg, rng)
            if config.online_remix:
                mix, ref = remix_batch(mix, ref, seed=int(rng.integers(0, 2**31)))
            loss = joint_loss(mix, ref)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            tot += float(loss.detach()) * len(idx)
            seen += len(idx)
        train_losses.append(tot / seen)
        with torch.no_grad():
            vt, vs = 0.0, 0
            for start in range(0, len(valid_data), config.batch_size):
                idx = np.arange(start, min(start + config.batch_size, len(valid_data)))
                mix, ref = valid_data.batch(idx, seg, rng=None)
                vt += float(joint_loss(mix, ref)) * len(idx)
                vs += len(idx)
        valid_losses.append(vt / vs)
        if stopper.update(epoch, valid_losses[-1]):
            break
    res = StepResult(
        step="naive", epochs=len(train_losses), train_losses=train_losses,
        valid_losses=valid_losses, best_valid_losses=stopper.history,
        best_epoch=stopper.best_epoch,
    )
    bundle = _new_bundle(config, spec.s)
    for name in model.component_names():
        bundle.add_component(
            name, ck.component_params(model, name), frozen=False, trained_in_step="naive"
        )
    bundle.completed_steps = ["naive"]
    ckpt_path = out_dir / "checkpoint_naive.ckpt"
    ck.save_bundle(bundle, ckpt_path)
    write_trace(out_dir / "trace_naive.csv", [res])
    return ckpt_path, res


# ---------------------------------------------------------------------------
# evaluation


def evaluate_checkpoint(
    bundle: ck.CheckpointBundle,
    manifest: Manifest,
    corpus,
    oracle_irm: bool = False,
    self_test: bool = False,
) -> tuple[list[dict], dict]:
    """Score every manifest mixture with SI-SDR improvement under PIT.

    Every stage's outputs are scored (final stage is the headline number);
    oracle_irm adds the ideal-ratio-mask upper-bound row; self_test scores
    the references as their own estimates (pipeline sanity value).
    """
    model = None
    if not self_test:
        model = bundle.build_model()
        model.eval()
    rows = []
    stage_sums: dict[int, float] = {}
    oracle_sum = 0.0
    self_sum = 0.0
    for rec in manifest.records:
        mixture, references = synthesize(rec, corpus)
        row = {"record_id": rec.record_id}
        if self_test:
            per_src, mean, assign = sdri(references, references, mixture)
            row.update(
                perm=list(assign.perm),
                per_source_si_sdr=[si_sdr(r, r) for r in references],
                per_source_sdri=per_src,
                mean_sdri=mean,
            )
            self_sum += mean
        else:
            stage_outs = separate(mixture, model)
            stages_field = []
            for si, ests in enumerate(stage_outs, 1):
                per_src, mean, assign = sdri(ests, references, mixture)
                stage_sums[si] = stage_sums.get(si, 0.0) + mean
                est_for_ref = {r: e for e, r in enumerate(assign.perm)}
                stages_field.append(
                    {
                        "stage": si,
                        "perm": list(assign.perm),
                        "per_source_si_sdr": [
                            si_sdr(ests[est_for_ref[j]], references[j])
                            for j in range(len(references))
                        ],
                        "per_source_sdri": per_src,
                        "mean_sdri": mean,
                    }
                )
            final = stages_field[-1]
            row.update(
                perm=final["perm"],
                per_source_si_sdr=final["per_source_si_sdr"],
                per_source_sdri=final["per_source_sdri"],
                mean_sdri=final["mean_sdri"],
                stages=stages_field,
            )
        if oracle_irm:
            oracle_est = oracle_irm_separate(mixture, references)
            per_src, mean, _ = sdri(oracle_est, references, mixture)
            row["oracle_irm_mean_sdri"] = mean
            oracle_sum += mean
        rows.append(row)
    n = len(manifest.records)
    summary = {
        "metric": METRIC_LABEL,
        "count": n,
        "split": manifest.split,
        "s": manifest.s,
    }
    if self_test:
        summary["method"] = "references-as-estimates"
        summary["mean_sdri"] = self_sum / n
    else:
        summary["method"] = bundle.model_spec_text
        summary["per_stage_mean_sdri"] = {
            str(si): stage_sums[si] / n for si in sorted(stage_sums)
        }
        summary["mean_sdri"] = summary["per_stage_mean_sdri"][
            str(max(map(int, summary["per_stage_mean_sdri"])))
        ]
    if oracle_irm:
        summary["oracle_irm_mean_sdri"] = oracle_sum / n
    return rows, summary
