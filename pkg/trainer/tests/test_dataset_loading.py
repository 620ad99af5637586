"""Loader validation and batch assembly against the emitted record shapes."""

import dataclasses
import json

import pytest
import torch

from dialogue_corpus import imao_file, maao_file, pref_record, sft_record, write_jsonl
from mechact_trainer import (
    BOTH_LABELS_ERROR,
    DataError,
    collate_mismatched,
    collate_pref,
    collate_sft,
    load_pref_dataset,
    load_sft_dataset,
)
from mechact_trainer.tokenizer import PAD, assistant_targets

MAX_LEN = 256


class TestSftLoading:
    def test_happy_path(self, imao_file):
        examples = load_sft_dataset(imao_file, MAX_LEN)
        assert len(examples) == 10
        assert examples[0].record == 1
        assert examples[3].task_id == "t003"
        assert all(len(ex.mask) == len(ex.messages) for ex in examples)

    def test_mask_one_exactly_on_assistant_messages(self, imao_file):
        for ex in load_sft_dataset(imao_file, MAX_LEN):
            for (role, _), bit in zip(ex.messages, ex.mask):
                assert bit == (1 if role == "assistant" else 0)

    def test_all_zero_mask_rejected_with_record_index(self, tmp_path):
        records = [sft_record(0), sft_record(1), sft_record(2)]
        records[1]["train_mask"] = [0] * len(records[1]["messages"])
        path = write_jsonl(tmp_path / "bad.jsonl", records)
        with pytest.raises(DataError, match=r"record 2: train_mask is all zero"):
            load_sft_dataset(path, MAX_LEN)

    def test_mask_length_mismatch(self, tmp_path):
        record = sft_record(0)
        record["train_mask"] = record["train_mask"][:-1]
        path = write_jsonl(tmp_path / "bad.jsonl", [record])
        with pytest.raises(DataError, match="record 1: train_mask must have one entry"):
            load_sft_dataset(path, MAX_LEN)

    def test_mask_values_must_be_binary(self, tmp_path):
        record = sft_record(0)
        record["train_mask"] = [2] + record["train_mask"][1:]
        path = write_jsonl(tmp_path / "bad.jsonl", [record])
        with pytest.raises(DataError, match="must be 0 or 1"):
            load_sft_dataset(path, MAX_LEN)

    def test_bad_json_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(sft_record(0)) + "\n{not json\n")
        with pytest.raises(DataError, match="record 2: not valid JSON"):
            load_sft_dataset(path, MAX_LEN)

    def test_wrong_schema_version(self, tmp_path):
        record = sft_record(0)
        record["schema_version"] = 2
        path = write_jsonl(tmp_path / "bad.jsonl", [record])
        with pytest.raises(DataError, match="unsupported schema_version 2"):
            load_sft_dataset(path, MAX_LEN)

    def test_unknown_role(self, tmp_path):
        record = sft_record(0)
        record["messages"][0]["role"] = "tool"
        path = write_jsonl(tmp_path / "bad.jsonl", [record])
        with pytest.raises(DataError, match="record 1: unknown role 'tool'"):
            load_sft_dataset(path, MAX_LEN)

    def test_record_longer_than_context(self, tmp_path):
        record = sft_record(0)
        record["messages"][1]["content"] = "x" * 500
        path = write_jsonl(tmp_path / "bad.jsonl", [record])
        with pytest.raises(DataError, match="exceeds model context 256"):
            load_sft_dataset(path, MAX_LEN)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(DataError, match="no records"):
            load_sft_dataset(path, MAX_LEN)

    def test_blank_lines_skipped_but_counted(self, tmp_path):
        path = tmp_path / "gaps.jsonl"
        path.write_text(
            json.dumps(sft_record(0)) + "\n\n" + json.dumps(sft_record(1)) + "\n"
        )
        examples = load_sft_dataset(path, MAX_LEN)
        assert [ex.record for ex in examples] == [1, 3]


class TestPrefLoading:
    def test_happy_path(self, maao_file):
        examples = load_pref_dataset(maao_file, MAX_LEN)
        labels = [ex.label for ex in examples]
        assert labels.count("desirable") == 6
        assert labels.count("undesirable") == 4

    def test_unknown_label(self, tmp_path):
        record = pref_record(0, "desirable")
        record["label"] = "good"
        path = write_jsonl(tmp_path / "bad.jsonl", [record])
        with pytest.raises(DataError, match="unknown label 'good'"):
            load_pref_dataset(path, MAX_LEN)

    def test_single_label_rejected(self, tmp_path):
        path = write_jsonl(
            tmp_path / "one.jsonl", [pref_record(i, "desirable") for i in range(4)]
        )
        with pytest.raises(DataError) as excinfo:
            load_pref_dataset(path, MAX_LEN)
        assert str(excinfo.value) == BOTH_LABELS_ERROR

    def test_single_label_override(self, tmp_path):
        path = write_jsonl(
            tmp_path / "one.jsonl", [pref_record(i, "undesirable") for i in range(4)]
        )
        examples = load_pref_dataset(path, MAX_LEN, require_both_labels=False)
        assert len(examples) == 4


class TestCollation:
    def test_sft_batch_shapes(self, imao_file):
        examples = load_sft_dataset(imao_file, MAX_LEN)
        batch = collate_sft(examples[:4])
        assert batch.tokens.shape[0] == 4
        assert batch.weights.shape == (4, batch.tokens.shape[1] - 1)
        longest = max(len(ex.enc) for ex in examples[:4])
        assert batch.tokens.shape[1] == longest

    def test_padding_is_weightless(self, imao_file):
        examples = load_sft_dataset(imao_file, MAX_LEN)
        batch = collate_sft(examples[:4])
        for row, ex in enumerate(batch.examples):
            n = len(ex.enc)
            assert (batch.tokens[row, n:] == PAD).all()
            assert (batch.weights[row, n - 1 :] == 0.0).all()

    def test_weights_positive_only_inside_assistant_spans(self, imao_file):
        examples = load_sft_dataset(imao_file, MAX_LEN)
        batch = collate_sft(examples[:4])
        for row, ex in enumerate(batch.examples):
            flags = assistant_targets(ex.enc)
            for pos in range(batch.weights.shape[1]):
                expected = 1.0 if pos < len(flags) and flags[pos] else 0.0
                assert batch.weights[row, pos].item() == expected

    def test_collate_tripwire_fires_on_broken_expansion(self, imao_file, monkeypatch):
        examples = load_sft_dataset(imao_file, MAX_LEN)
        import mechact_trainer.data as data_module

        real = data_module.token_weights
        monkeypatch.setattr(
            data_module, "token_weights", lambda enc, mask: [1.0] * len(real(enc, mask))
        )
        with pytest.raises(AssertionError, match="mask-0 token at position"):
            collate_sft(examples[:2])

    def test_pref_batch_scores_assistant_targets(self, maao_file):
        examples = load_pref_dataset(maao_file, MAX_LEN)
        batch = collate_pref(examples[:3])
        for row, ex in enumerate(batch.examples):
            flags = assistant_targets(ex.enc)
            got = batch.completion_weights[row, : len(flags)]
            assert got.tolist() == [1.0 if f else 0.0 for f in flags]

    def test_mismatched_splices_prompt_with_next_completion(self, maao_file):
        examples = load_pref_dataset(maao_file, MAX_LEN)[:3]
        tokens, weights = collate_mismatched(examples, MAX_LEN)
        for k, host in enumerate(examples):
            donor = examples[(k + 1) % 3]
            expected = list(host.enc.tokens[: host.enc.prompt_len]) + list(
                donor.enc.tokens[donor.enc.prompt_len :]
            )
            assert tokens[k, : len(expected)].tolist() == expected
            assert (tokens[k, len(expected) :] == PAD).all()
            # scored positions sit in the donor part only
            n_scored = int(weights[k].sum())
            donor_flags = assistant_targets(donor.enc)
            donor_scored = sum(donor_flags[donor.enc.prompt_len - 1 :])
            assert n_scored == donor_scored
            assert (weights[k, : host.enc.prompt_len - 1] == 0.0).all()

    def test_mismatched_needs_two(self, maao_file):
        examples = load_pref_dataset(maao_file, MAX_LEN)
        with pytest.raises(DataError, match="at least two"):
            collate_mismatched(examples[:1], MAX_LEN)

    def test_mismatched_respects_context_limit(self, maao_file):
        examples = load_pref_dataset(maao_file, MAX_LEN)
        with pytest.raises(DataError, match="exceeds model context"):
            collate_mismatched(examples[:2], 20)

    def test_tensors_are_long_and_float(self, imao_file):
        batch = collate_sft(load_sft_dataset(imao_file, MAX_LEN)[:2])
        assert batch.tokens.dtype == torch.long
        assert batch.weights.dtype == torch.float32
