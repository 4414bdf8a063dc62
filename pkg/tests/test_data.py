import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from dmt.data import (EOS, PAD, DataError, ParallelCorpus, Vocab, build_vocab, detokenize,
                      filter_length, make_batches, read_corpus, synth_task_generate,
                      tokenize, write_corpus)


def test_build_vocab_small():
    v = build_vocab([tokenize("a a b")], 6)
    assert len(v) == 6
    assert v.itos[:4] == ["<pad>", "<s>", "</s>", "<unk>"]
    assert set(v.itos[4:]) == {"a", "b"}


def test_build_vocab_ties_are_lexicographic():
    v = build_vocab([["z", "y", "x", "x"]], 6)
    assert v.itos[4:] == ["x", "y"]


def test_build_vocab_rejects_tiny_size():
    with pytest.raises(DataError):
        build_vocab([["a"]], 4)


def test_build_vocab_matches_brute_force_ranking():
    rng = random.Random(3)
    words = [f"w{i}" for i in range(30)]
    sents = [[rng.choice(words[: rng.randint(1, 30)]) for _ in range(rng.randint(1, 12))]
             for _ in range(100)]
    v = build_vocab(sents, 20)
    counts = {}
    for s in sents:
        for t in s:
            counts[t] = counts.get(t, 0) + 1
    expected = sorted(counts, key=lambda t: (-counts[t], t))[:16]
    assert v.itos[4:] == expected


def test_oov_maps_to_unk_and_round_trip():
    v = build_vocab([tokenize("The cat sat")], 10)
    assert v.encode(["dog"]) == [3]
    line = "The Cat sat"
    assert detokenize(v.decode(v.encode(tokenize(line)))) == line.lower()


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab([["b", "a", "a"]], 8)
    v.save(tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_text().startswith("#")
    assert Vocab.load(tmp_path / "v.txt") == v


def test_copy_and_reverse_tasks():
    c = synth_task_generate("copy", 50, 0)
    assert all(s == t for s, t in c.pairs)
    r = synth_task_generate("reverse", 50, 0)
    assert all(s[::-1] == t for s, t in r.pairs)


def test_unknown_task():
    with pytest.raises(DataError):
        synth_task_generate("translate", 3, 0)


def test_generator_is_deterministic():
    a = synth_task_generate("ambiguous-lexicon", 20, 5)
    b = synth_task_generate("ambiguous-lexicon", 20, 5)
    assert a.pairs == b.pairs and a.synonyms == b.synonyms


def test_ambiguous_lexicon_synonym_frequencies():
    n = 10_000
    corpus = synth_task_generate("ambiguous-lexicon", n, 11, num_symbols=10, ambiguous_fraction=1.0)
    counts = Counter()
    per_src = Counter()
    for s, t in corpus.pairs:
        for a, b in zip(s, t):
            assert b in corpus.synonyms[a]
            counts[b] += 1
            per_src[a] += 1
    for src, syns in corpus.synonyms.items():
        m = per_src[src]
        sigma = (m * (1 / 3) * (2 / 3)) ** 0.5
        for syn in syns:
            assert abs(counts[syn] - m / 3) <= 3 * sigma


def test_length_filter():
    c = ParallelCorpus([(["a"] * 101, ["b"]), (["a"], ["b"] * 100), (["a"], ["b"] * 101)])
    assert len(filter_length(c)) == 1


def test_corpus_files_round_trip(tmp_path):
    c = synth_task_generate("reverse", 30, 1)
    write_corpus(c, tmp_path / "s.txt", tmp_path / "t.txt")
    back = read_corpus(tmp_path / "s.txt", tmp_path / "t.txt")
    assert back.pairs == c.pairs


def test_single_sentence_single_batch():
    c = synth_task_generate("copy", 1, 0)
    v = build_vocab(c.sources, 64)
    batches = make_batches(c, v, 512, 0)
    assert len(batches) == 1
    b = batches[0]
    assert b.num_tokens == len(c.pairs[0][1]) + 1
    assert b.tgt_out[0, len(c.pairs[0][1])].item() == EOS


def test_oversized_sentence_rejected():
    c = ParallelCorpus([(["a"] * 5, ["a"] * 20)])
    v = build_vocab(c.sources, 8)
    with pytest.raises(DataError, match="sentence 0"):
        make_batches(c, v, 10, 0)


@settings(max_examples=1000, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10_000), st.integers(12, 200))
def test_batches_partition_corpus_within_budget(size, seed, budget):
    c = synth_task_generate("copy", size, seed, min_len=1, max_len=10)
    v = build_vocab(c.sources, 64)
    batches = make_batches(c, v, budget, seed)
    seen = sorted(i for b in batches for i in b.indices)
    assert seen == list(range(size))
    assert sum(b.num_tokens for b in batches) == c.target_token_count()
    for b in batches:
        assert b.tgt_out.numel() <= budget
        assert int(b.tgt_out.ne(PAD).sum()) == b.num_tokens


def test_batches_reshuffle_by_seed():
    c = synth_task_generate("copy", 200, 0)
    v = build_vocab(c.sources, 64)
    a = [b.indices for b in make_batches(c, v, 64, 1)]
    assert a == [b.indices for b in make_batches(c, v, 64, 1)]
    assert a != [b.indices for b in make_batches(c, v, 64, 2)]
