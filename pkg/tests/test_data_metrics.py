from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgmcl.data import (
    SplitSpec,
    bundled_path,
    load_dataset,
    random_split,
    resolve_dataset_path,
    scaffold_groups,
    scaffold_split,
)
from lgmcl.errors import DataError, ShapeError
from lgmcl.metrics import MetricReport, binary_auc, rmse, roc_auc, write_reports


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


class TestLoad:
    def test_mask_drop_and_ordinal_ids(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", ["smiles", "a", "b"],
                      [["CCO", "1", ""], ["C1CC", "0", "1"], ["c1ccccc1", "0", "1"]])
        t = load_dataset(p)
        assert t.ids == ["0", "2"] and t.dropped == 1
        np.testing.assert_array_equal(t.mask, [[True, False], [True, True]])
        np.testing.assert_array_equal(t.labels, [[1.0, 0.0], [0.0, 1.0]])

    def test_text_column_and_sidecar(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", ["id", "smiles", "text", "y"], [["m1", "CCO", "ethanol", "1"], ["m2", "CC", "", "0"]])
        side = tmp_path / "t.jsonl"
        side.write_text(json.dumps({"id": "m2", "text": "ethane"}) + "\n")
        t = load_dataset(p, text_path=side)
        assert t.texts == ["ethanol", "ethane"]

    def test_errors(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "missing.csv")
        with pytest.raises(DataError):
            load_dataset(write_csv(tmp_path / "a.csv", ["mol", "y"], [["CC", "1"]]))
        with pytest.raises(DataError):
            load_dataset(write_csv(tmp_path / "b.csv", ["smiles", "y"], [["CC", "high"]]))
        with pytest.raises(DataError):
            load_dataset(write_csv(tmp_path / "c.csv", ["smiles"], [["CC"]]))
        with pytest.raises(DataError):
            load_dataset(write_csv(tmp_path / "e.csv", ["smiles", "y"], [["CC", "1"]]), tasks=["z"])
        with pytest.raises(DataError):
            load_dataset(write_csv(tmp_path / "f.csv", ["id", "smiles", "y"], [["x", "CC", "1"], ["x", "CCC", "0"]]))

    def test_unlabeled(self, tmp_path):
        t = load_dataset(write_csv(tmp_path / "u.csv", ["smiles"], [["CC"], ["CO"]]), require_labels=False)
        assert t.labels.shape == (2, 0)

    def test_bundled(self):
        bace = load_dataset(bundled_path("bace"))
        assert len(bace) == 1513 and bace.n_tasks == 1
        bace.check_binary()
        esol = load_dataset(resolve_dataset_path("bundled:esol"))
        assert esol.n_tasks == 1 and len(esol) > 1000
        with pytest.raises(DataError):
            bundled_path("tox21")


class TestRandomSplit:
    def test_sizes(self):
        s = random_split(10, SplitSpec(seed=0))
        assert (len(s.train), len(s.valid), len(s.test)) == (6, 2, 2)

    def test_seeded(self):
        a, b, c = (random_split(100, SplitSpec(seed=k)) for k in (3, 3, 4))
        np.testing.assert_array_equal(a.train, b.train)
        assert not np.array_equal(a.train, c.train)

    def test_too_small(self):
        with pytest.raises(DataError):
            random_split(4, SplitSpec())

    def test_bad_spec(self):
        with pytest.raises(DataError):
            SplitSpec(fractions=(0.5, 0.2, 0.2))
        with pytest.raises(DataError):
            SplitSpec(kind="temporal")

    @settings(max_examples=50, deadline=None)
    @given(st.integers(5, 300), st.integers(0, 2**32))
    def test_partition(self, n, seed):
        s = random_split(n, SplitSpec(seed=seed))
        np.testing.assert_array_equal(np.sort(np.concatenate([s.train, s.valid, s.test])), np.arange(n))


class TestScaffoldSplit:
    def test_groups_never_straddle(self):
        keys = ["a"] * 5 + ["b"] * 3 + ["c"] * 2 + ["d"] * 2 + ["e"] * 1
        s = scaffold_split(keys, SplitSpec(kind="scaffold"))
        for part in (s.train, s.valid, s.test):
            others = set(range(len(keys))) - set(part.tolist())
            assert not ({keys[i] for i in part} & {keys[i] for i in others})

    def test_all_acyclic(self):
        s = scaffold_split([""] * 10, SplitSpec(kind="scaffold"))
        assert len(s.train) == 10 and len(s.valid) == len(s.test) == 0

    def test_sixty_forty(self):
        s = scaffold_split(["x"] * 6 + ["y"] * 4, SplitSpec(kind="scaffold"))
        assert len(s.train) == 6 and len(s.valid) == 4 and len(s.test) == 0

    def test_group_order(self):
        assert scaffold_groups(["b", "a", "b", "c", "a"]) == [[1, 4], [0, 2], [3]]

    def test_on_molecules(self):
        t = load_dataset(bundled_path("bace")).subset(range(60))
        s = scaffold_split(t, SplitSpec(kind="scaffold"))
        assert len(s.train) + len(s.valid) + len(s.test) == 60

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from("abcdefgh"), min_size=5, max_size=80))
    def test_partition(self, keys):
        s = scaffold_split(keys, SplitSpec(kind="scaffold"))
        np.testing.assert_array_equal(np.sort(np.concatenate([s.train, s.valid, s.test])), np.arange(len(keys)))


class TestAuc:
    def test_examples(self):
        assert binary_auc([0.9, 0.1], [1, 0]) == 1.0
        assert binary_auc([0.1, 0.9], [1, 0]) == 0.0
        assert binary_auc([0.8, 0.8, 0.2], [1, 0, 0]) == 0.75
        assert binary_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
        assert binary_auc([1, 2, 3], [0, 1, 1]) == 1.0
        assert binary_auc([3, 2, 1], [0, 1, 1]) == 0.0
        assert binary_auc([0.5, 0.5], [0, 1]) == 0.5
        assert binary_auc([0.5, 0.7], [1, 1]) is None

    def test_multitask_mask(self):
        scores = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.5]])
        labels = np.array([[0, 1], [1, 0], [0, 1]])
        mask = np.array([[True, True], [True, True], [True, False]])
        res = roc_auc(scores, labels, mask)
        assert res.per_task == [1.0, 1.0] and res.macro == 1.0

    def test_skipped(self):
        res = roc_auc(np.array([[0.1, 0.2], [0.3, 0.4]]), np.array([[0, 1], [1, 1]]))
        assert res.per_task[1] is None and res.skipped == [1] and res.macro == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(-50, 50), st.integers(0, 1)), min_size=2, max_size=40),
           st.floats(0.1, 5.0), st.floats(-3.0, 3.0))
    def test_monotone_invariance(self, pairs, a, b):
        # grid-valued scores keep every transform strictly increasing in floating point
        s = np.array([p[0] for p in pairs]) / 10.0
        y = np.array([p[1] for p in pairs])
        base = binary_auc(s, y)
        assert binary_auc(np.exp(a * s + b), y) == base
        assert binary_auc(s**3 + a * s, y) == base


class TestRmse:
    def test_examples(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert rmse([0.0, 2.0], [1.0, 1.0]) == 1.0
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
        assert rmse([1.0, 9.0], [0.0, 0.0], mask=[True, False]) == 1.0
        with pytest.raises(ShapeError):
            rmse([1.0], [1.0, 2.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.floats(-10, 10))
    def test_homogeneous(self, errs, c):
        e = np.array(errs)
        assert rmse(c * e, np.zeros_like(e)) == pytest.approx(abs(c) * rmse(e, np.zeros_like(e)), rel=1e-12, abs=1e-12)


class TestReports:
    def test_write(self, tmp_path):
        reps = [MetricReport("bace", s, "h", "roc_auc", {"train": 0.9, "valid": 0.8, "test": v})
                for s, v in ((0, 0.7), (1, 0.9))]
        write_reports(tmp_path / "m.csv", reps)
        rows = list(csv.reader(open(tmp_path / "m.csv")))
        assert rows[0] == ["dataset", "split_seed", "metric", "value"]
        assert ["bace", "mean", "test_roc_auc", repr(0.8)] in rows
        assert len(rows) == 1 + 6 + 2

    def test_validation(self):
        with pytest.raises(ValueError):
            MetricReport("x", 0, "h", "roc_auc", {"test": 1.5})
        with pytest.raises(ValueError):
            MetricReport("x", 0, "h", "rmse", {"test": -0.1})
