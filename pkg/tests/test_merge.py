import random

import pytest

from cvtk.merge import LabelConflictError, complete_label_subset, merge_multitask
from cvtk.schemas import ImageRecord, LabelVector, Manifest, TASK_ORDER, TASKS


def rec(rid, **labels):
    return ImageRecord(rid, f"{rid}.png", LabelVector(labels))


def triple(train, dev, test):
    return (
        Manifest(records=train, split_tag="train"),
        Manifest(records=dev, split_tag="dev"),
        Manifest(records=test, split_tag="test"),
    )


class TestMergeMultitask:
    def test_single_task_image_stays_in_train(self):
        per_task = {
            "informativeness": triple([rec("x", informativeness=0)], [], []),
            "humanitarian": triple([], [], []),
        }
        train, dev, test = merge_multitask(per_task)
        assert [r.record_id for r in train] == ["x"]
        assert train.records[0].labels.as_list() == [-1, 0, -1, -1]
        assert len(dev) == 0 and len(test) == 0

    def test_train_test_cross_task_goes_to_test_with_both_labels(self):
        per_task = {
            "informativeness": triple([rec("x", informativeness=1)], [], []),
            "humanitarian": triple([], [], [rec("x", humanitarian=2)]),
        }
        train, dev, test = merge_multitask(per_task)
        assert len(train) == 0
        assert [r.record_id for r in test] == ["x"]
        labels = test.records[0].labels
        assert labels.get("informativeness") == 1
        assert labels.get("humanitarian") == 2
        # disjointness oracle
        assert not (set(train.record_ids) & set(test.record_ids))

    def test_dev_beats_train_but_not_test(self):
        per_task = {
            "informativeness": triple([rec("a", informativeness=0)], [rec("b", informativeness=1)], []),
            "damage_severity": triple([], [rec("a", damage_severity=1)], [rec("b", damage_severity=2)]),
        }
        train, dev, test = merge_multitask(per_task)
        assert [r.record_id for r in dev] == ["a"]
        assert [r.record_id for r in test] == ["b"]

    def test_conflicting_labels_error_lists_offenders(self):
        per_task = {
            "informativeness": triple([rec("x", informativeness=0)], [], []),
            "humanitarian": triple([rec("x", informativeness=1, humanitarian=0)], [], []),
        }
        with pytest.raises(LabelConflictError) as exc:
            merge_multitask(per_task)
        assert any(o[0] == "x" for o in exc.value.offenders)

    def test_same_label_twice_is_not_a_conflict(self):
        per_task = {
            "informativeness": triple([rec("x", informativeness=0)], [], []),
            "humanitarian": triple([rec("x", informativeness=0, humanitarian=3)], [], []),
        }
        train, _, _ = merge_multitask(per_task)
        assert train.records[0].labels.get("humanitarian") == 3


def stable_label(rid: str, task_id: str) -> int:
    # label determined by (image, task) so repeated images never conflict
    import zlib

    return zlib.crc32(f"{rid}|{task_id}".encode()) % TASKS[task_id].num_classes


def random_per_task(seed, n_images=60):
    """Random per-task splits sharing an image-id universe."""
    rng = random.Random(seed)
    universe = [f"img{i:03d}" for i in range(n_images)]
    per_task = {}
    for task_id in TASK_ORDER:
        chosen = rng.sample(universe, rng.randint(n_images // 2, n_images))
        rng.shuffle(chosen)
        k1 = int(len(chosen) * 0.7)
        k2 = int(len(chosen) * 0.8)

        def mk(ids, t=task_id):
            return [rec(r, **{t: stable_label(r, t)}) for r in ids]

        per_task[task_id] = triple(mk(chosen[:k1]), mk(chosen[k1:k2]), mk(chosen[k2:]))
    return per_task


class TestMergeProperties:
    @pytest.mark.parametrize("seed", range(8))
    def test_outputs_disjoint_and_labels_conserved(self, seed):
        per_task = random_per_task(seed)
        train, dev, test = merge_multitask(per_task)
        ids = [set(m.record_ids) for m in (train, dev, test)]
        assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])

        # conservation: every input (record, task, label) appears exactly once
        inputs = set()
        for task_id, manifests in per_task.items():
            for m in manifests:
                for r in m:
                    inputs.add((r.record_id, task_id, r.labels.get(task_id)))
        outputs = set()
        for m in (train, dev, test):
            for r in m:
                for t in r.labels.tasks:
                    outputs.add((r.record_id, t, r.labels.get(t)))
        assert inputs == outputs

    def test_merge_idempotent(self):
        per_task = random_per_task(99)
        merged = merge_multitask(per_task)
        again = merge_multitask({t: merged for t in TASK_ORDER})
        for a, b in zip(merged, again):
            assert a.records == b.records


def _distribute(ids, class_counts):
    """Slice an id list into per-class chunks matching the given counts."""
    out = {}
    start = 0
    for cls, n in enumerate(class_counts):
        out[cls] = ids[start : start + n]
        start += n
    assert start == len(ids)
    return out


def build_published_two_task_fixture():
    """Synthetic manifests matching the published two-task aligned counts.

    Info and humanitarian aligned subset: 4657/796/2507 (7960 records), with
    the per-class distributions of the published table. Extra info-only
    records are added so the subset is a strict filter.
    """
    info_counts = {"train": (2111, 2546), "dev": (399, 397), "test": (1064, 1443)}
    # per-class counts in schema order (affected, infrastructure, rescue, not humanitarian)
    hum_counts = {"train": (426, 410, 1274, 2547), "dev": (72, 81, 246, 397), "test": (166, 210, 688, 1443)}
    manifests = []
    for split in ("train", "dev", "test"):
        n = sum(info_counts[split])
        assert sum(hum_counts[split]) == n
        ids = [f"{split}{i:05d}" for i in range(n)]
        info_of, hum_of = {}, {}
        for cls, chunk in _distribute(ids, info_counts[split]).items():
            for rid in chunk:
                info_of[rid] = cls
        for cls, chunk in _distribute(ids, hum_counts[split]).items():
            for rid in chunk:
                hum_of[rid] = cls
        records = [rec(rid, informativeness=info_of[rid], humanitarian=hum_of[rid]) for rid in ids]
        # pad with records lacking humanitarian labels
        records += [rec(f"extra{split}{j}", informativeness=j % 2) for j in range(17)]
        manifests.append(Manifest(records=records, split_tag=split))
    return manifests


class TestCompleteLabelSubset:
    def test_single_task_filter(self):
        merged = (
            Manifest(records=[rec("a", informativeness=0), rec("b", humanitarian=1)], split_tag="train"),
            Manifest(records=[], split_tag="dev"),
            Manifest(records=[], split_tag="test"),
        )
        out = complete_label_subset(merged, ["informativeness"])
        assert [r.record_id for r in out[0]] == ["a"]

    def test_published_two_task_totals(self):
        manifests = build_published_two_task_fixture()
        out = complete_label_subset(manifests, ["informativeness", "humanitarian"])
        sizes = [len(m) for m in out]
        assert sizes == [4657, 796, 2507]
        assert sum(sizes) == 7960

    def test_published_four_task_totals(self):
        # published aligned-four-task split sizes: 2303 / 761 / 2494 = 5558
        split_sizes = {"train": 2303, "dev": 761, "test": 2494}
        manifests = []
        for split, n in split_sizes.items():
            records = [
                rec(
                    f"{split}{i:05d}",
                    disaster_types=i % 7,
                    informativeness=i % 2,
                    humanitarian=i % 4,
                    damage_severity=i % 3,
                )
                for i in range(n)
            ]
            records += [rec(f"partial{split}{j}", informativeness=j % 2) for j in range(23)]
            manifests.append(Manifest(records=records, split_tag=split))
        out = complete_label_subset(manifests, list(TASK_ORDER))
        assert [len(m) for m in out] == [2303, 761, 2494]
        assert sum(len(m) for m in out) == 5558

    def test_empty_result_warns_and_returns_empty(self, caplog):
        merged = (
            Manifest(records=[rec("a", informativeness=0)], split_tag="train"),
            Manifest(records=[], split_tag="dev"),
            Manifest(records=[], split_tag="test"),
        )
        import logging

        with caplog.at_level(logging.WARNING):
            out = complete_label_subset(merged, ["damage_severity"])
        assert all(len(m) == 0 for m in out)
        assert any("empty" in r.message for r in caplog.records)
