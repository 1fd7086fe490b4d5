"""Dataset synthesis: corpora, mixture manifests, and online remixing.

Mixtures follow the relative-to-first convention: source 0 is the level
reference at 0 dB and every other source gets a gain that realizes its
requested SNR against source 0 exactly (closed form, no estimation). Sources
of unequal length are truncated to the minimum length before mixing.

The toy corpus replaces licensed speech at desk scale: each synthetic speaker
is a deterministic harmonic-tone generator with its own fundamental band,
harmonic decay, and amplitude-modulation rate, so corpora are reproducible
bit-for-bit from (params, seed).

Manifest files are line-delimited JSON: one header line (schema, split,
protocol metadata) followed by one record per line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tastas.audio import Waveform, gain_for_snr, load_wav, power, save_wav

MANIFEST_SCHEMA = "tastas-manifest/1"


class CorpusError(ValueError):
    """Corpus cannot satisfy a request (missing speakers, bad reference, ...)."""


@dataclass
class SpeakerProfile:
    """Generator parameters for one synthetic speaker."""

    f0_center: float
    harmonic_decay: float
    even_weight: float
    am_rate: float
    am_depth: float


class ToyCorpus:
    """Deterministic synthetic corpus of harmonic-tone 'speakers'.

    Utterance refs look like "spk003/utt007"; speaker labels are the part
    before the slash. Fundamentals are log-spaced across speakers so dominant
    pitches are distinct; per-utterance f0 varies within +/-1.5% of the
    speaker's center.
    """

    def __init__(
        self,
        n_speakers: int,
        utt_per_speaker: int,
        duration_s: float = 4.0,
        seed: int = 0,
        sample_rate: int = 8000,
    ):
        if n_speakers < 2:
            raise CorpusError(f"need at least 2 speakers, got {n_speakers}")
        if utt_per_speaker < 1 or duration_s <= 0:
            raise CorpusError("utt_per_speaker and duration_s must be positive")
        self.n_speakers = n_speakers
        self.utt_per_speaker = utt_per_speaker
        self.duration_s = float(duration_s)
        self.seed = seed
        self.sample_rate = sample_rate
        centers = np.geomspace(90.0, 400.0, n_speakers)
        self.profiles: list[SpeakerProfile] = []
        for i, c in enumerate(centers):
            rng = np.random.default_rng([seed, i])
            self.profiles.append(
                SpeakerProfile(
                    f0_center=float(c),
                    harmonic_decay=float(rng.uniform(0.9, 1.6)),
                    even_weight=float(rng.uniform(0.3, 0.9)),
                    am_rate=float(rng.uniform(2.0, 8.0)),
                    am_depth=float(rng.uniform(0.2, 0.5)),
                )
            )

    @property
    def corpus_id(self) -> str:
        return (
            f"toy:v1:n{self.n_speakers}:u{self.utt_per_speaker}"
            f":d{self.duration_s}:sr{self.sample_rate}:seed{self.seed}"
        )

    def speakers(self) -> list[str]:
        return [f"spk{i:03d}" for i in range(self.n_speakers)]

    def utterances(self, speaker: str) -> list[str]:
        if speaker not in self.speakers():
            raise CorpusError(f"unknown speaker: {speaker}")
        return [f"{speaker}/utt{j:03d}" for j in range(self.utt_per_speaker)]

    @staticmethod
    def speaker_of(ref: str) -> str:
        return ref.split("/")[0]

    def load(self, ref: str) -> Waveform:
        try:
            spk_s, utt_s = ref.split("/")
            spk = int(spk_s.removeprefix("spk"))
            utt = int(utt_s.removeprefix("utt"))
        except (ValueError, AttributeError):
            raise CorpusError(f"bad toy-corpus reference: {ref!r}")
        if not (0 <= spk < self.n_speakers and 0 <= utt < self.utt_per_speaker):
            raise CorpusError(f"reference out of range: {ref!r}")
        p = self.profiles[spk]
        rng = np.random.default_rng([self.seed, spk, utt])
        n = int(round(self.duration_s * self.sample_rate))
        t = np.arange(n) / self.sample_rate
        f0 = p.f0_center * (1.0 + rng.uniform(-0.015, 0.015))
        n_harm = min(10, int((0.45 * self.sample_rate) / f0))
        x = np.zeros(n)
        for h in range(1, n_harm + 1):
            amp = h ** (-p.harmonic_decay) * (p.even_weight if h % 2 == 0 else 1.0)
            x += amp * np.sin(2.0 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
        am = 1.0 + p.am_depth * np.sin(2.0 * np.pi * p.am_rate * t + rng.uniform(0, 2 * np.pi))
        x *= am
        x *= 0.9 / np.max(np.abs(x))
        return Waveform(x, self.sample_rate)


class DirCorpus:
    """Corpus backed by a directory tree <root>/<speaker>/<utterance>.wav."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise CorpusError(f"corpus directory not found: {self.root}")
        self._index: dict[str, list[str]] = {}
        for spk_dir in sorted(d for d in self.root.iterdir() if d.is_dir()):
            wavs = sorted(spk_dir.glob("*.wav"))
            if wavs:
                self._index[spk_dir.name] = [f"{spk_dir.name}/{w.stem}" for w in wavs]
        if not self._index:
            raise CorpusError(f"no <speaker>/<utt>.wav files under {self.root}")

    @property
    def corpus_id(self) -> str:
        return f"dir:{self.root.resolve()}"

    def speakers(self) -> list[str]:
        return list(self._index)

    def utterances(self, speaker: str) -> list[str]:
        if speaker not in self._index:
            raise CorpusError(f"unknown speaker: {speaker}")
        return list(self._index[speaker])

    @staticmethod
    def speaker_of(ref: str) -> str:
        return ref.split("/")[0]

    def load(self, ref: str) -> Waveform:
        path = self.root / f"{ref}.wav"
        if not path.exists():
            raise CorpusError(f"unresolvable reference: {ref!r} ({path})")
        return load_wav(path)


def corpus_from_id(corpus_id: str):
    """Rebuild the corpus a manifest was generated from."""
    if corpus_id.startswith("toy:v1:"):
        n, u, d, sr, seed = corpus_id.split(":")[2:]
        return ToyCorpus(
            n_speakers=int(n[1:]),
            utt_per_speaker=int(u[1:]),
            duration_s=float(d[1:]),
            sample_rate=int(sr[2:]),
            seed=int(seed[4:]),
        )
    if corpus_id.startswith("dir:"):
        return DirCorpus(corpus_id[4:])
    raise CorpusError(f"unknown corpus id: {corpus_id!r}")


@dataclass
class MixtureRecord:
    """Recipe for one mixture; gains are stored so synthesis is exact."""

    record_id: str
    source_refs: list[str]
    snrs_db: list[float]
    gains: list[float]
    seed: int

    def __post_init__(self):
        s = len(self.source_refs)
        if s < 2 or len(self.snrs_db) != s or len(self.gains) != s:
            raise ValueError(f"inconsistent record arity (S={s})")
        if self.snrs_db[0] != 0.0:
            raise ValueError("source 0 is the level reference; its SNR must be 0")


@dataclass
class Manifest:
    records: list[MixtureRecord]
    split: str
    s: int
    snr_range_db: tuple[float, float]
    corpus_id: str
    seed: int

    def speakers(self, speaker_of=ToyCorpus.speaker_of) -> set[str]:
        return {speaker_of(r) for rec in self.records for r in rec.source_refs}


def build_manifest(
    corpus,
    s: int,
    n_mixtures: int,
    snr_range_db: tuple[float, float] = (0.0, 5.0),
    seed: int = 0,
    split: str = "train",
    speaker_pool: list[str] | None = None,
) -> Manifest:
    """Draw n_mixtures recipes: S distinct speakers each, one utterance per
    speaker, non-reference SNRs uniform in snr_range_db, gains closed-form.

    speaker_pool restricts selection (used to keep test speakers unseen).
    """
    pool = list(speaker_pool) if speaker_pool is not None else corpus.speakers()
    low, high = snr_range_db
    if n_mixtures < 1:
        raise ValueError(f"n_mixtures must be >= 1, got {n_mixtures}")
    if low > high:
        raise ValueError(f"bad SNR range: {snr_range_db}")
    if len(pool) < s:
        raise CorpusError(f"corpus has {len(pool)} speakers, need at least {s}")
    rng = np.random.default_rng([seed, _split_tag(split)])
    records = []
    for idx in range(n_mixtures):
        spks = [pool[i] for i in rng.choice(len(pool), size=s, replace=False)]
        refs = []
        for spk in spks:
            utts = corpus.utterances(spk)
            refs.append(utts[int(rng.integers(0, len(utts)))])
        snrs = [0.0] + [float(rng.uniform(low, high)) for _ in range(s - 1)]
        raws = [corpus.load(r) for r in refs]
        n_min = min(len(w) for w in raws)
        powers = [power(Waveform(w.samples[:n_min], w.sample_rate)) for w in raws]
        if any(p == 0.0 for p in powers):
            raise CorpusError(f"zero-power source among {refs}")
        gains = [1.0] + [
            gain_for_snr(powers[i], powers[0], snrs[i]) for i in range(1, s)
        ]
        records.append(
            MixtureRecord(
                record_id=f"{split}_{idx:05d}",
                source_refs=refs,
                snrs_db=snrs,
                gains=gains,
                seed=int(rng.integers(0, 2**31)),
            )
        )
    return Manifest(records, split, s, (float(low), float(high)), corpus.corpus_id, seed)


def _split_tag(split: str) -> int:
    return {"train": 0, "valid": 1, "test": 2}.get(split, 3)


def split_speaker_pools(
    speakers: list[str], s: int, seed: int, test_fraction: float = 0.25
) -> tuple[list[str], list[str]]:
    """Partition speakers into a train/valid pool and a disjoint test pool."""
    n_test = max(s, math.ceil(test_fraction * len(speakers)))
    if len(speakers) - n_test < max(s, 2):
        raise CorpusError(
            f"{len(speakers)} speakers cannot support S={s} plus {n_test} unseen test speakers"
        )
    order = np.random.default_rng([seed, 999]).permutation(len(speakers))
    test = sorted(speakers[i] for i in order[:n_test])
    trainval = sorted(speakers[i] for i in order[n_test:])
    return trainval, test


def build_split_manifests(
    corpus,
    s: int,
    counts: dict[str, int],
    snr_range_db: tuple[float, float] = (0.0, 5.0),
    seed: int = 0,
) -> dict[str, Manifest]:
    """Manifests for train/valid/test with test speakers absent from train/valid."""
    trainval, test = split_speaker_pools(corpus.speakers(), s, seed)
    pools = {"train": trainval, "valid": trainval, "test": test}
    return {
        split: build_manifest(
            corpus, s, counts[split], snr_range_db, seed=seed, split=split,
            speaker_pool=pools[split],
        )
        for split in ("train", "valid", "test")
        if counts.get(split, 0) > 0
    }


def synthesize(record: MixtureRecord, corpus) -> tuple[Waveform, list[Waveform]]:
    """Materialize one record: scaled sources and their exact sum."""
    raws = [corpus.load(r) for r in record.source_refs]
    rates = {w.sample_rate for w in raws}
    if len(rates) != 1:
        raise CorpusError(f"mixed sample rates in record {record.record_id}: {rates}")
    n_min = min(len(w) for w in raws)
    sources = [
        Waveform(g * w.samples[:n_min], w.sample_rate)
        for g, w in zip(record.gains, raws)
    ]
    mix = np.zeros(n_min)
    for src in sources:
        mix = mix + src.samples
    return Waveform(mix, raws[0].sample_rate), sources


def online_remix(
    batch: list[tuple[Waveform, list[Waveform]]],
    seed: int,
    regain_snr_range: tuple[float, float] | None = None,
) -> list[tuple[Waveform, list[Waveform]]]:
    """Re-pair source segments across a batch into new mixtures.

    Each source slot is permuted independently (seed-deterministic), so the
    per-slot multiset of segments is preserved and every output mixture is the
    exact sum of its sources. regain_snr_range optionally re-draws gains for
    non-reference slots (off by default; it breaks multiset preservation).
    """
    if not batch:
        return []
    s = len(batch[0][1])
    n = len(batch[0][1][0])
    for _, sources in batch:
        if len(sources) != s or any(len(w) != n for w in sources):
            raise ValueError("heterogeneous batch shapes")
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(len(batch)) for _ in range(s)]
    out = []
    for b in range(len(batch)):
        chosen = [batch[perms[slot][b]][1][slot] for slot in range(s)]
        if regain_snr_range is not None:
            low, high = regain_snr_range
            ref_pow = power(chosen[0])
            rescaled = [chosen[0]]
            for slot in range(1, s):
                g = gain_for_snr(power(chosen[slot]), ref_pow, float(rng.uniform(low, high)))
                rescaled.append(Waveform(g * chosen[slot].samples, chosen[slot].sample_rate))
            chosen = rescaled
        mix = np.zeros(n)
        for src in chosen:
            mix = mix + src.samples
        out.append((Waveform(mix, batch[0][0].sample_rate), chosen))
    return out


def save_manifest(manifest: Manifest, path) -> None:
    header = {
        "schema": MANIFEST_SCHEMA,
        "split": manifest.split,
        "s": manifest.s,
        "snr_range_db": list(manifest.snr_range_db),
        "corpus": manifest.corpus_id,
        "seed": manifest.seed,
        "n_records": len(manifest.records),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for r in manifest.records:
            f.write(
                json.dumps(
                    {
                        "record_id": r.record_id,
                        "source_refs": r.source_refs,
                        "snrs_db": r.snrs_db,
                        "gains": r.gains,
                        "seed": r.seed,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_manifest(path) -> Manifest:
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"empty manifest: {path}")
    header = json.loads(lines[0])
    if header.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"unsupported manifest schema: {header.get('schema')!r}")
    records = [
        MixtureRecord(
            record_id=d["record_id"],
            source_refs=d["source_refs"],
            snrs_db=d["snrs_db"],
            gains=d["gains"],
            seed=d["seed"],
        )
        for d in map(json.loads, lines[1:])
    ]
    return Manifest(
        records,
        header["split"],
        header["s"],
        tuple(header["snr_range_db"]),
        header["corpus"],
        header["seed"],
    )


def check_speaker_disjoint(train: Manifest, test: Manifest, speaker_of=ToyCorpus.speaker_of):
    overlap = train.speakers(speaker_of) & test.speakers(speaker_of)
    if overlap:
        raise ValueError(f"test speakers leak into train split: {sorted(overlap)}")


def synthesize_manifest_tree(manifest: Manifest, corpus, out_dir) -> list[str]:
    """Write <out>/<split>/mix/<id>.wav and <out>/<split>/s<i>/<id>.wav."""
    out_dir = Path(out_dir)
    written = []
    for rec in manifest.records:
        mix, sources = synthesize(rec, corpus)
        mix_path = out_dir / manifest.split / "mix" / f"{rec.record_id}.wav"
        save_wav(mix_path, mix)
        written.append(str(mix_path))
        for i, src in enumerate(sources):
            p = out_dir / manifest.split / f"s{i + 1}" / f"{rec.record_id}.wav"
            save_wav(p, src)
            written.append(str(p))
    return written
