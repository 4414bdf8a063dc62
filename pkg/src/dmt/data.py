"""Vocabulary, synthetic parallel tasks, corpus files and token-budget batching."""
from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import torch

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
MAX_SENTENCE_LEN = 100

TASKS = ("copy", "reverse", "ambiguous-lexicon")


class DataError(ValueError):
    pass


def tokenize(line: str) -> list[str]:
    return line.lower().split()


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


class Vocab:
    """Token <-> id bijection with PAD/BOS/EOS/UNK fixed at ids 0..3."""

    def __init__(self, tokens: list[str]):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids, strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path) -> None:
        lines = ["# dmt vocab: reserved ids 0-3 are <pad> <s> </s> <unk>; "
                 "token on line n after this header has id n+3"]
        lines += self.itos[len(RESERVED):]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln and not ln.startswith("#")])


def build_vocab(sentences: list[list[str]], size: int) -> Vocab:
    """Keep the ``size - 4`` most frequent tokens; ties go to the lexicographically smaller token."""
    if size < 5:
        raise DataError(f"vocabulary size must be >= 5, got {size}")
    counts = Counter(t for sent in sentences for t in sent)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([t for t, _ in ranked[: size - len(RESERVED)]])


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[str], list[str]]]
    provenance: str = ""
    synonyms: dict[str, list[str]] | None = None

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[list[str]]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[list[str]]:
        return [t for _, t in self.pairs]

    def target_token_count(self) -> int:
        # +1 per sentence for the EOS the model is trained to emit
        return sum(len(t) + 1 for _, t in self.pairs)


def filter_length(corpus: ParallelCorpus, max_len: int = MAX_SENTENCE_LEN) -> ParallelCorpus:
    kept = [(s, t) for s, t in corpus.pairs if len(s) <= max_len and len(t) <= max_len]
    return ParallelCorpus(kept, corpus.provenance, corpus.synonyms)


def synonym_table(num_symbols: int, k: int = 3, ambiguous_fraction: float = 0.5) -> dict[str, list[str]]:
    """Source symbol ``s<i>`` -> its valid target synonyms.

    The first ``round(ambiguous_fraction * num_symbols)`` symbols get ``k``
    synonyms, the rest translate deterministically.
    """
    n_amb = round(ambiguous_fraction * num_symbols)
    table = {}
    for i in range(num_symbols):
        ki = k if i < n_amb else 1
        table[f"s{i}"] = [f"t{i}_{j}" for j in range(ki)]
    return table


def synth_task_generate(task: str, size: int, seed: int, num_symbols: int = 40,
                        min_len: int = 3, max_len: int = 10, k: int = 3,
                        ambiguous_fraction: float = 0.5) -> ParallelCorpus:
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}; expected one of {TASKS}")
    if size < 1:
        raise DataError("size must be >= 1")
    rng = random.Random(seed)
    provenance = (f"task={task} size={size} seed={seed} num_symbols={num_symbols} "
                  f"min_len={min_len} max_len={max_len}")
    synonyms = None
    if task == "ambiguous-lexicon":
        synonyms = synonym_table(num_symbols, k, ambiguous_fraction)
        provenance += f" k={k} ambiguous_fraction={ambiguous_fraction}"
        symbols = list(synonyms)
    else:
        symbols = [f"w{i}" for i in range(num_symbols)]

    pairs = []
    for _ in range(size):
        n = rng.randint(min_len, max_len)
        src = [rng.choice(symbols) for _ in range(n)]
        if task == "copy":
            tgt = list(src)
        elif task == "reverse":
            tgt = src[::-1]
        else:
            tgt = [rng.choice(synonyms[s]) for s in src]
        pairs.append((src, tgt))
    return ParallelCorpus(pairs, provenance, synonyms)


def read_corpus(src_path, tgt_path, max_len: int = MAX_SENTENCE_LEN) -> ParallelCorpus:
    src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise DataError(f"{src_path} has {len(src_lines)} lines but {tgt_path} has {len(tgt_lines)}")
    pairs = [(tokenize(s), tokenize(t)) for s, t in zip(src_lines, tgt_lines)]
    return filter_length(ParallelCorpus(pairs, f"files={src_path},{tgt_path}"), max_len)


def write_corpus(corpus: ParallelCorpus, src_path, tgt_path) -> None:
    Path(src_path).write_text("".join(detokenize(s) + "\n" for s in corpus.sources), encoding="utf-8")
    Path(tgt_path).write_text("".join(detokenize(t) + "\n" for t in corpus.targets), encoding="utf-8")


@dataclass
class Batch:
    src: torch.Tensor          # (B, S) source ids, PAD-filled
    tgt_in: torch.Tensor       # (B, T) BOS + target
    tgt_out: torch.Tensor      # (B, T) target + EOS
    indices: list[int] = field(default_factory=list)

    @property
    def src_pad(self) -> torch.Tensor:
        return self.src.eq(PAD)

    @property
    def tgt_pad(self) -> torch.Tensor:
        return self.tgt_out.eq(PAD)

    @property
    def num_tokens(self) -> int:
        """M_j: non-pad target tokens, EOS included."""
        return int(self.tgt_out.ne(PAD).sum())


def collate(pairs: list[tuple[list[int], list[int]]], indices=None) -> Batch:
    S = max(len(s) for s, _ in pairs)
    T = max(len(t) for _, t in pairs) + 1
    B = len(pairs)
    src = torch.full((B, S), PAD, dtype=torch.long)
    tgt_in = torch.full((B, T), PAD, dtype=torch.long)
    tgt_out = torch.full((B, T), PAD, dtype=torch.long)
    for b, (s, t) in enumerate(pairs):
        src[b, : len(s)] = torch.tensor(s, dtype=torch.long)
        tgt_in[b, : len(t) + 1] = torch.tensor([BOS] + t, dtype=torch.long)
        tgt_out[b, : len(t) + 1] = torch.tensor(t + [EOS], dtype=torch.long)
    return Batch(src, tgt_in, tgt_out, list(indices or range(B)))


def make_batches(corpus: ParallelCorpus, vocab: Vocab, max_tokens: int, seed: int) -> list[Batch]:
    """Shuffle by ``seed`` and greedily pack so rows * padded target length <= max_tokens."""
    encoded = [(vocab.encode(s), vocab.encode(t)) for s, t in corpus.pairs]
    order = list(range(len(encoded)))
    random.Random(seed).shuffle(order)

    batches, current, cur_max = [], [], 0
    for idx in order:
        tlen = len(encoded[idx][1]) + 1
        if tlen > max_tokens:
            raise DataError(f"sentence {idx} needs {tlen} target tokens, budget is {max_tokens}")
        new_max = max(cur_max, tlen)
        if current and new_max * (len(current) + 1) > max_tokens:
            batches.append(collate([encoded[i] for i in current], current))
            current, new_max = [], tlen
        current.append(idx)
        cur_max = new_max
    if current:
        batches.append(collate([encoded[i] for i in current], current))
    return batches
