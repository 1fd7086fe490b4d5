"""The TasTas(I, x1, ..., xn) separation network family.

Signal path: a learned filterbank encoder (strided conv, kernel L, stride L/2,
N filters, ReLU), per-stage mask estimation over the latent frames, and an
overlap-add transposed-conv decoder. Stage 1 is a plain dual-path separator
(TasTas(6) with six blocks is the single-stage baseline); each refinement
stage consumes [mixture latents || previous stage's masked latents || speaker
embeddings of the previous estimates (identity-aware only)] fused by a linear
projection, and emits fresh masks over the mixture latents.

Dual-path blocks alternate a bidirectional LSTM over positions within
50%-overlapped chunks and one over the chunk axis, each followed by a linear
projection, residual add, and global layer normalization (statistics over all
chunk/position/feature axes, per-feature affine).

ID-Net shares the encoder shape (independent weights), mean-pools over
frames, applies two feed-forward layers, and L2-normalizes the embedding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from tastas.audio import Waveform


class SpecParseError(ValueError):
    """Model spec text does not match TasTas(I, x1, ..., xn)."""


class NumericsError(RuntimeError):
    """A forward pass produced non-finite activations."""


@dataclass
class ModelDims:
    """Width/size knobs shared by all stages."""

    n_basis: int = 64       # encoder filters (N)
    kernel: int = 16        # encoder kernel (L); stride is L/2
    feature: int = 64       # per-stage feature width after fusion (F)
    chunk: int = 100        # dual-path chunk length (K); 50% hop
    hidden: int = 128       # BiLSTM hidden size per direction (H)
    embed_dim: int = 64     # speaker embedding size (D)
    idnet_hidden: int = 128

    def __post_init__(self):
        for name in ("n_basis", "kernel", "feature", "chunk", "hidden",
                     "embed_dim", "idnet_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.kernel < 2 or self.kernel % 2:
            raise ValueError(f"kernel must be even and >= 2, got {self.kernel}")
        if self.chunk < 2 or self.chunk % 2:
            raise ValueError(f"chunk must be even and >= 2, got {self.chunk}")


@dataclass
class ModelSpec:
    identity_aware: bool
    stage_blocks: list[int]
    s: int = 2
    dims: ModelDims = field(default_factory=ModelDims)
    sample_rate: int = 8000

    def __post_init__(self):
        if not self.stage_blocks or any(b < 1 for b in self.stage_blocks):
            raise SpecParseError(f"stage block counts must be >= 1: {self.stage_blocks}")
        if self.s < 2:
            raise ValueError(f"speaker count must be >= 2, got {self.s}")

    @property
    def n_stages(self) -> int:
        return len(self.stage_blocks)

    @property
    def text(self) -> str:
        inner = (["I"] if self.identity_aware else []) + [str(b) for b in self.stage_blocks]
        return f"TasTas({', '.join(inner)})"


_SPEC_RE = re.compile(r"^\s*TasTas\s*\(\s*(I\s*,\s*)?(\d+(?:\s*,\s*\d+)*)\s*\)\s*$")


def parse_model_spec(text: str, **overrides) -> ModelSpec:
    """Parse "TasTas(I, x1, ..., xn)" notation.

    The leading literal I marks the speaker-identity-aware variant; the
    integers are per-stage dual-path block counts. "TasTas(6)" is the
    single-stage baseline. Keyword overrides set s/dims/sample_rate.
    """
    m = _SPEC_RE.match(text)
    if not m:
        raise SpecParseError(f"malformed model spec: {text!r}")
    blocks = [int(tok) for tok in m.group(2).split(",")]
    if any(b < 1 for b in blocks):
        raise SpecParseError(f"stage block counts must be >= 1: {blocks}")
    return ModelSpec(identity_aware=m.group(1) is not None, stage_blocks=blocks, **overrides)


# ---------------------------------------------------------------------------
# chunking


@dataclass
class ChunkMeta:
    orig_len: int
    chunk: int
    hop: int
    pad_front: int
    total: int


def segment_chunks(x: torch.Tensor, k: int) -> tuple[torch.Tensor, ChunkMeta]:
    """(B, T, F) -> (B, C, K, F) chunks at hop K/2, zero-padded at both ends."""
    if k < 2 or k % 2:
        raise ValueError(f"chunk length must be even and >= 2, got {k}")
    hop = k // 2
    b, t, f = x.shape
    t1 = t + hop
    n_chunks = 1 + max(0, -(-(t1 - k) // hop))
    total = (n_chunks - 1) * hop + k
    x = F.pad(x, (0, 0, hop, total - t1))
    chunks = x.unfold(1, k, hop).permute(0, 1, 3, 2)
    return chunks, ChunkMeta(t, k, hop, hop, total)


def merge_chunks(chunks: torch.Tensor, meta: ChunkMeta) -> torch.Tensor:
    """Exact inverse of segment_chunks: overlap-add normalized by coverage."""
    b, c, k, f = chunks.shape
    if k != meta.chunk or (c - 1) * meta.hop + k != meta.total:
        raise ValueError("chunk tensor inconsistent with metadata")
    idx = (
        torch.arange(c).unsqueeze(1) * meta.hop + torch.arange(k).unsqueeze(0)
    ).reshape(-1)
    out = torch.zeros(b, meta.total, f, dtype=chunks.dtype).index_add(
        1, idx, chunks.reshape(b, c * k, f)
    )
    count = torch.zeros(meta.total, dtype=chunks.dtype).index_add(
        0, idx, torch.ones(c * k, dtype=chunks.dtype)
    )
    out = out / count.unsqueeze(0).unsqueeze(-1)
    return out[:, meta.pad_front : meta.pad_front + meta.orig_len, :]


def chunk_segment(frames: np.ndarray, k: int) -> tuple[np.ndarray, ChunkMeta]:
    """Numpy-facing chunking of a (T, F) matrix into (C, K, F)."""
    x = torch.from_numpy(np.asarray(frames, dtype=np.float64)).unsqueeze(0)
    chunks, meta = segment_chunks(x, k)
    return chunks.squeeze(0).numpy(), meta


def chunk_merge(chunks: np.ndarray, meta: ChunkMeta) -> np.ndarray:
    x = torch.from_numpy(np.asarray(chunks, dtype=np.float64)).unsqueeze(0)
    return merge_chunks(x, meta).squeeze(0).numpy()


# ---------------------------------------------------------------------------
# modules


class GlobalLayerNorm(nn.Module):
    """Normalize over every non-batch axis; per-feature gain and bias."""

    def __init__(self, feature: int, eps: float = 1e-8):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(feature))
        self.bias = nn.Parameter(torch.zeros(feature))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        dims = tuple(range(1, x.dim()))
        mean = x.mean(dim=dims, keepdim=True)
        var = ((x - mean) ** 2).mean(dim=dims, keepdim=True)
        return (x - mean) / torch.sqrt(var + self.eps) * self.gain + self.bias


class DualPathBlock(nn.Module):
    """Intra-chunk then inter-chunk BiLSTM passes with residual + global LN."""

    def __init__(self, feature: int, hidden: int):
        super().__init__()
        self.intra_rnn = nn.LSTM(feature, hidden, batch_first=True, bidirectional=True)
        self.intra_proj = nn.Linear(2 * hidden, feature)
        self.intra_norm = GlobalLayerNorm(feature)
        self.inter_rnn = nn.LSTM(feature, hidden, batch_first=True, bidirectional=True)
        self.inter_proj = nn.Linear(2 * hidden, feature)
        self.inter_norm = GlobalLayerNorm(feature)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, k, f = x.shape
        y = self.intra_proj(self.intra_rnn(x.reshape(b * c, k, f))[0]).reshape(b, c, k, f)
        x = self.intra_norm(x + y)
        z = x.permute(0, 2, 1, 3).reshape(b * k, c, f)
        z = self.inter_proj(self.inter_rnn(z)[0]).reshape(b, k, c, f).permute(0, 2, 1, 3)
        x = self.inter_norm(x + z)
        if not torch.isfinite(x).all():
            raise NumericsError("non-finite activations in dual-path block")
        return x


class Encoder(nn.Module):
    """Learned filterbank: strided conv (no bias) + ReLU; (B, T) -> (B, frames, N)."""

    def __init__(self, n_basis: int, kernel: int):
        super().__init__()
        self.kernel = kernel
        self.conv = nn.Conv1d(1, n_basis, kernel, stride=kernel // 2, bias=False)

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        if wav.shape[-1] < self.kernel:
            raise ValueError(f"input shorter than one kernel ({wav.shape[-1]} < {self.kernel})")
        return F.relu(self.conv(wav.unsqueeze(1))).transpose(1, 2)


class Decoder(nn.Module):
    """Transposed-conv overlap-add synthesis; output forced to target_len."""

    def __init__(self, n_basis: int, kernel: int):
        super().__init__()
        self.deconv = nn.ConvTranspose1d(n_basis, 1, kernel, stride=kernel // 2, bias=False)

    def forward(self, frames: torch.Tensor, target_len: int) -> torch.Tensor:
        wav = self.deconv(frames.transpose(1, 2)).squeeze(1)
        if wav.shape[-1] >= target_len:
            return wav[..., :target_len]
        return F.pad(wav, (0, target_len - wav.shape[-1]))


class IdNet(nn.Module):
    """Speaker embedder: conv front-end, mean pool, two FC layers, L2 norm."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.kernel = dims.kernel
        self.conv = nn.Conv1d(1, dims.n_basis, dims.kernel, stride=dims.kernel // 2, bias=False)
        self.fc1 = nn.Linear(dims.n_basis, dims.idnet_hidden)
        self.fc2 = nn.Linear(dims.idnet_hidden, dims.embed_dim)

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        if wav.shape[-1] < self.kernel:
            raise ValueError(f"input shorter than one analysis window ({wav.shape[-1]})")
        h = F.relu(self.conv(wav.unsqueeze(1))).mean(dim=2)
        h = self.fc2(F.relu(self.fc1(h)))
        return F.normalize(h, dim=-1)


class SeparatorStage(nn.Module):
    """Fusion projection, dual-path blocks, and a sigmoid mask head."""

    def __init__(self, spec: ModelSpec, stage_index: int):
        super().__init__()
        d = spec.dims
        in_dim = d.n_basis
        if stage_index > 0:
            in_dim += spec.s * d.n_basis
            if spec.identity_aware:
                in_dim += spec.s * d.embed_dim
        self.s = spec.s
        self.n_basis = d.n_basis
        self.chunk = d.chunk
        self.fusion = nn.Linear(in_dim, d.feature)
        self.blocks = nn.ModuleList(
            DualPathBlock(d.feature, d.hidden) for _ in range(spec.stage_blocks[stage_index])
        )
        self.mask_head = nn.Linear(d.feature, spec.s * d.n_basis)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        x = self.fusion(feats)
        chunks, meta = segment_chunks(x, self.chunk)
        for block in self.blocks:
            chunks = block(chunks)
        x = merge_chunks(chunks, meta)
        masks = torch.sigmoid(self.mask_head(x))
        b, t, _ = masks.shape
        return masks.reshape(b, t, self.s, self.n_basis).permute(0, 2, 1, 3)


class TasTasNet(nn.Module):
    """Multi-stage separator; forward returns every stage's (B, S, T) estimates.

    Construction is seeded (torch global RNG) so parameter initialization is
    reproducible from init_seed alone; the seed is recorded in checkpoints.
    """

    def __init__(self, spec: ModelSpec, init_seed: int = 0):
        super().__init__()
        torch.manual_seed(init_seed)
        self.spec = spec
        self.init_seed = init_seed
        d = spec.dims
        self.encoder = Encoder(d.n_basis, d.kernel)
        self.decoder = Decoder(d.n_basis, d.kernel)
        self.stages = nn.ModuleList(
            SeparatorStage(spec, k) for k in range(spec.n_stages)
        )
        self.idnet = IdNet(d) if spec.identity_aware else None

    def component_names(self) -> list[str]:
        names = ["idnet"] if self.spec.identity_aware else []
        return names + [f"stage{k + 1}" for k in range(self.spec.n_stages)]

    def component_modules(self, name: str) -> dict[str, nn.Module]:
        """Sub-modules owned by a trainable component.

        The encoder/decoder belong to stage1: they are trained with the first
        stage and frozen with it afterwards.
        """
        if name == "idnet":
            if self.idnet is None:
                raise KeyError("model is not identity-aware")
            return {"idnet": self.idnet}
        m = re.fullmatch(r"stage(\d+)", name)
        if not m or not 1 <= int(m.group(1)) <= self.spec.n_stages:
            raise KeyError(f"unknown component: {name!r}")
        k = int(m.group(1))
        mods = {f"separator{k}": self.stages[k - 1]}
        if k == 1:
            mods.update(encoder=self.encoder, decoder=self.decoder)
        return mods

    def component_parameters(self, name: str) -> list[tuple[str, nn.Parameter]]:
        out = []
        for sub_name, module in sorted(self.component_modules(name).items()):
            out.extend(
                (f"{sub_name}.{pname}", p) for pname, p in module.named_parameters()
            )
        return sorted(out, key=lambda kv: kv[0])

    def forward(self, mix: torch.Tensor) -> list[torch.Tensor]:
        b, t = mix.shape
        lat = self.encoder(mix)
        tf = lat.shape[1]
        outs = []
        prev_lat = prev_emb = None
        for k, stage in enumerate(self.stages):
            if k == 0:
                feats = lat
            else:
                parts = [lat, prev_lat.permute(0, 2, 1, 3).reshape(b, tf, -1)]
                if self.spec.identity_aware:
                    parts.append(
                        prev_emb.reshape(b, 1, -1).expand(b, tf, -1)
                    )
                feats = torch.cat(parts, dim=-1)
            masks = stage(feats)
            est_lat = masks * lat.unsqueeze(1)
            wavs = self.decoder(
                est_lat.reshape(b * self.spec.s, tf, -1), t
            ).reshape(b, self.spec.s, t)
            outs.append(wavs)
            if k + 1 < len(self.stages):
                prev_lat = est_lat
                if self.spec.identity_aware:
                    prev_emb = self.idnet(wavs.reshape(b * self.spec.s, t)).reshape(
                        b, self.spec.s, -1
                    )
        return outs


# ---------------------------------------------------------------------------
# waveform-level wrappers


def encode(w: Waveform, encoder: Encoder) -> np.ndarray:
    """Latent frames (frames x N) of a waveform under a (possibly trained) encoder."""
    p = next(encoder.parameters())
    with torch.no_grad():
        x = torch.as_tensor(w.samples, dtype=p.dtype).unsqueeze(0)
        return encoder(x).squeeze(0).numpy()


def decode(frames: np.ndarray, decoder: Decoder, target_len: int) -> Waveform:
    p = next(decoder.parameters())
    if not np.all(np.isfinite(frames)):
        raise NumericsError("non-finite latent frames")
    with torch.no_grad():
        x = torch.as_tensor(np.asarray(frames), dtype=p.dtype).unsqueeze(0)
        wav = decoder(x, target_len).squeeze(0).numpy()
    return Waveform(wav.astype(np.float64))


def id_embed(w: Waveform, idnet: IdNet) -> np.ndarray:
    """Unit-norm speaker embedding of a waveform."""
    p = next(idnet.parameters())
    with torch.no_grad():
        x = torch.as_tensor(w.samples, dtype=p.dtype).unsqueeze(0)
        return idnet(x).squeeze(0).numpy()


def separate(mixture: Waveform, model: TasTasNet) -> list[list[Waveform]]:
    """Run the full separator; returns n_stages lists of S waveforms, each the
    mixture's length."""
    p = next(model.parameters())
    with torch.no_grad():
        x = torch.as_tensor(mixture.samples, dtype=p.dtype).unsqueeze(0)
        stage_outs = model(x)
    return [
        [
            Waveform(out[0, i].numpy().astype(np.float64), mixture.sample_rate)
            for i in range(model.spec.s)
        ]
        for out in stage_outs
    ]
