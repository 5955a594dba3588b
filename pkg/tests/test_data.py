"""Corpus parsing, vocabularies, example assembly, synthetic corpus."""

from __future__ import annotations

import json

import pytest

from dnmt import data, discourse


def worked_doc(record: dict) -> data.DocumentPair:
    return data.parse_document(record, line_no=1)


class TestVocab:
    def test_reserved_ids(self):
        vocab = data.Vocab(list(data.RESERVED_TOKENS) + ["cat", "dog"])
        assert vocab.id("<pad>") == data.PAD == 0
        assert vocab.id("<bos>") == data.BOS == 1
        assert vocab.id("<eos>") == data.EOS == 2
        assert vocab.id("<unk>") == data.UNK == 3
        assert vocab.id("cat") == 4

    def test_oov_maps_to_unk(self):
        vocab = data.Vocab(["cat"])
        assert vocab.encode(["cat", "zebra"]) == [4, data.UNK]

    def test_decode_inverts_encode(self):
        vocab = data.Vocab(["cat", "dog"])
        tokens = ["dog", "cat", "dog"]
        assert vocab.decode(vocab.encode(tokens)) == tokens

    def test_save_load(self, tmp_path):
        vocab = data.Vocab(["cat", "dog"])
        vocab.save(tmp_path / "v.txt")
        assert data.Vocab.load(tmp_path / "v.txt").tokens == vocab.tokens


class TestBuildVocab:
    def test_three_tokens_small_corpus(self, worked_doc_record):
        doc = data.DocumentPair("d", [["x", "y", "x"], ["z"]], [["a"], ["b"]],
                                discourse.parse_tree(
                                    "(CONTRAST (N (EDU 1 0 3)) (S (EDU 2 3 4)))"))
        vocab = data.build_vocab([doc], "src", max_size=30)
        assert len(vocab) == 7

    def test_frequency_then_lexicographic(self):
        doc = data.DocumentPair(
            "d", [["b", "a", "c", "b", "a", "c", "c"]], [["t"]],
            discourse.parse_tree("(EDU 1 0 7)"))
        vocab = data.build_vocab([doc], "src", max_size=30)
        # c is most frequent; a and b tie at 2 and a sorts first
        assert vocab.tokens[4:] == ["c", "a", "b"]

    def test_max_size_cap(self):
        doc = data.DocumentPair(
            "d", [["a", "b", "c", "d", "e", "a"]], [["t"]],
            discourse.parse_tree("(EDU 1 0 6)"))
        vocab = data.build_vocab([doc], "src", max_size=6)
        assert len(vocab) == 6
        assert vocab.tokens[4:] == ["a", "b"]

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            data.build_vocab([], "middle", 10)
        with pytest.raises(ValueError):
            data.build_vocab([], "src", 4)


class TestCorpusIO:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("")
        assert data.load_corpus(path) == []

    def test_round_trip_bit_identical(self, tmp_path, worked_doc_record):
        doc = worked_doc(worked_doc_record)
        path = tmp_path / "c.jsonl"
        data.save_corpus([doc], path)
        first = path.read_bytes()
        data.save_corpus(data.load_corpus(path), path)
        assert path.read_bytes() == first

    def test_alignment_error_names_doc(self, worked_doc_record):
        record = dict(worked_doc_record)
        record["src"] = [s[:] for s in record["src"]]
        record["src"][0] = record["src"][0][:-1]  # 11 tokens under a 12-token tree
        with pytest.raises(data.CorpusError, match="fig"):
            data.parse_document(record, line_no=3)
        with pytest.raises(data.CorpusError, match="11"):
            data.parse_document(record, line_no=3)

    def test_missing_field_carries_line_number(self, tmp_path, worked_doc_record):
        record = {k: v for k, v in worked_doc_record.items() if k != "rst"}
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(data.CorpusError, match="line 1"):
            data.load_corpus(path)

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"doc_id": "a"\n')
        with pytest.raises(data.CorpusError, match="line 1"):
            data.load_corpus(path)

    def test_non_object_record(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("[1, 2]\n")
        with pytest.raises(data.CorpusError, match="object"):
            data.load_corpus(path)

    def test_sentence_count_mismatch(self, worked_doc_record):
        record = dict(worked_doc_record)
        record["tgt"] = record["tgt"][:2]
        with pytest.raises(data.CorpusError, match="3 source vs 2 target"):
            data.parse_document(record, line_no=1)

    def test_bad_tree_rejected_with_doc_id(self, worked_doc_record):
        record = dict(worked_doc_record)
        record["rst"] = "(X (S (EDU 1 0 6)) (S (EDU 2 6 12)))"
        with pytest.raises(data.CorpusError, match="fig"):
            data.parse_document(record, line_no=1)

    def test_blank_lines_skipped(self, tmp_path, worked_doc_record):
        path = tmp_path / "c.jsonl"
        path.write_text("\n" + json.dumps(worked_doc_record) + "\n\n")
        assert len(data.load_corpus(path)) == 1


class TestMakeExamples:
    @pytest.fixture
    def setup(self, worked_doc_record):
        doc = worked_doc(worked_doc_record)
        src_vocab = data.build_vocab([doc], "src", 50)
        tgt_vocab = data.build_vocab([doc], "tgt", 50)
        label_vocab = discourse.LabelVocab.from_trees([doc.tree])
        return doc, src_vocab, tgt_vocab, label_vocab

    def test_window_slicing(self, setup):
        doc, sv, tv, lv = setup
        examples = data.make_examples(doc, 3, 16, sv, tv, lv)
        assert len(examples) == 3
        assert examples[0].inp.context_ids == []
        assert examples[0].inp.context_range == (0, 0)
        assert len(examples[1].inp.context_ids) == 1
        assert len(examples[2].inp.context_ids) == 2
        assert examples[2].inp.context_range == (0, 2)

    def test_window_of_one(self, setup):
        doc, sv, tv, lv = setup
        examples = data.make_examples(doc, 1, 16, sv, tv, lv)
        assert [len(e.inp.context_ids) for e in examples] == [0, 1, 1]
        assert examples[2].inp.context_range == (1, 2)

    def test_zero_window(self, setup):
        doc, sv, tv, lv = setup
        examples = data.make_examples(doc, 0, 16, sv, tv, lv)
        assert all(e.inp.context_ids == [] for e in examples)

    def test_path_slices_match_document_paths(self, setup):
        doc, sv, tv, lv = setup
        examples = data.make_examples(doc, 3, 16, sv, tv, lv)
        # recompute with independent offset arithmetic over the flat document
        flat_paths = discourse.token_paths(doc.tree, 12, 16)
        pos = 0
        for ex in examples:
            n = len(ex.inp.src_ids)
            want = [tuple(lv.id(lbl) for lbl in p) for p in flat_paths[pos:pos + n]]
            assert ex.inp.src_paths == want
            pos += n

    def test_target_delimiters(self, setup):
        doc, sv, tv, lv = setup
        ex = data.make_examples(doc, 3, 16, sv, tv, lv)[0]
        assert ex.tgt_ids[0] == data.BOS
        assert ex.tgt_ids[-1] == data.EOS
        assert ex.target_token_count() == len(doc.tgt_sentences[0]) + 1

    def test_context_never_crosses_documents(self, worked_doc_record):
        doc_a = worked_doc(worked_doc_record)
        record_b = dict(worked_doc_record, doc_id="other")
        doc_b = worked_doc(record_b)
        sv = data.build_vocab([doc_a, doc_b], "src", 50)
        tv = data.build_vocab([doc_a, doc_b], "tgt", 50)
        lv = discourse.LabelVocab.from_trees([doc_a.tree, doc_b.tree])
        examples = data.corpus_examples([doc_a, doc_b], 3, 16, sv, tv, lv)
        assert len(examples) == 6
        per_doc_first = [e for e in examples if e.sent_index == 0]
        assert all(e.inp.context_ids == [] for e in per_doc_first)
        assert {e.doc_id for e in examples} == {"fig", "other"}


class TestSyntheticCorpus:
    def test_same_seed_identical(self):
        a = data.generate_synthetic_corpus(seed=5, n_docs=3, sentences_per_doc=4,
                                           vocab_size=10)
        b = data.generate_synthetic_corpus(seed=5, n_docs=3, sentences_per_doc=4,
                                           vocab_size=10)
        assert [data.document_record(d) for d in a] == [data.document_record(d) for d in b]

    def test_different_seed_differs(self):
        a = data.generate_synthetic_corpus(seed=5, n_docs=3, sentences_per_doc=4,
                                           vocab_size=10)
        b = data.generate_synthetic_corpus(seed=6, n_docs=3, sentences_per_doc=4,
                                           vocab_size=10)
        assert [data.document_record(d) for d in a] != [data.document_record(d) for d in b]

    def test_documents_validate_and_round_trip(self, tmp_path):
        docs = data.generate_synthetic_corpus(seed=1, n_docs=4, sentences_per_doc=3,
                                              vocab_size=12)
        path = tmp_path / "synth.jsonl"
        data.save_corpus(docs, path)
        loaded = data.load_corpus(path)
        assert len(loaded) == 4
        for doc in loaded:
            assert doc.tree.token_count == doc.source_token_count()
            assert len(doc.src_sentences) == len(doc.tgt_sentences) == 3

    def test_rotation_rule(self):
        # independent re-derivation: rank labels by sorted relation then
        # importance, add 1, add previous-sentence last-token parity
        docs = data.generate_synthetic_corpus(seed=2, n_docs=3, sentences_per_doc=4,
                                              vocab_size=9)
        relations = sorted(data.DEFAULT_RELATIONS)
        ranks = {}
        for ri, rel in enumerate(relations):
            for ii, imp in enumerate(("NUCLEUS", "SATELLITE")):
                ranks[f"{imp}_{rel}"] = 2 * ri + ii
        for doc in docs:
            paths = discourse.token_paths(doc.tree, doc.source_token_count(), 16)
            pos = 0
            for j, (src, tgt) in enumerate(zip(doc.src_sentences, doc.tgt_sentences)):
                offset = ranks[paths[pos][0]] + 1
                if j > 0:
                    offset += int(doc.src_sentences[j - 1][-1][1:]) % 2
                expect = [f"w{(int(t[1:]) + offset) % 9}" for t in reversed(src)]
                assert tgt == expect
                pos += len(src)

    def test_sentence_lengths_within_bounds(self):
        docs = data.generate_synthetic_corpus(seed=3, n_docs=5, sentences_per_doc=5,
                                              vocab_size=8, min_len=2, max_len=4)
        for doc in docs:
            for s in doc.src_sentences:
                assert 2 <= len(s) <= 4

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            data.generate_synthetic_corpus(seed=0, n_docs=0, sentences_per_doc=1,
                                           vocab_size=5)
        with pytest.raises(ValueError):
            data.generate_synthetic_corpus(seed=0, n_docs=1, sentences_per_doc=1,
                                           vocab_size=5, relation_set=())
